"""Planning over a learned (or oracle) latent model.

Every planner maximizes the receding-horizon objective

    J(a_1..a_T) = sum_t r_t  -  gamma * sum_t |a_t - a_{t-1}|_1

where ``a_0`` is the previously executed action. Planning models expose
``rollout`` and ``objective`` over batches of action sequences shaped
``(B, T, 3)``; :class:`LatentModel` wraps a trained :class:`WorldModel`,
:class:`OracleRewardAdapter` substitutes ground-truth rewards on true poses.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol

import numpy as np

from . import autodiff as ad
from .oracle import (
    SuccessThresholds,
    ground_truth_reward,
    is_success,
    target_params,
    target_thresholds,
    visibility,
)
from .scene import (
    CLASS_NAMES,
    ActionLimits,
    CameraModel,
    Observation,
    Pose,
    Scene,
    compose,
    free_mask,
    is_collision_free,
    render_scan,
    segment_collision_free,
)
from .world_model import Vocabulary, WorldModel, cosine_similarity, embed_language


class NoProposals(ValueError):
    pass


@dataclass(frozen=True)
class CEMConfig:
    population: int = 12
    elites: int = 3
    iterations: int = 25
    init_sigma: float = 0.5

    def __post_init__(self):
        if not self.population >= self.elites >= 1:
            raise ValueError("need population >= elites >= 1")


@dataclass(frozen=True)
class PlannerConfig:
    T: int = 4
    gamma: float = 0.05
    grad_steps: int = 25
    grad_lr: float = 0.03
    cem: CEMConfig = CEMConfig()
    K: int = 3

    @classmethod
    def from_dict(cls, d: dict) -> "PlannerConfig":
        d = dict(d)
        if "cem" in d and isinstance(d["cem"], dict):
            d["cem"] = CEMConfig(**d["cem"])
        return cls(**d)


@dataclass
class PlanResult:
    sequence: np.ndarray  # (T, 3)
    predicted_return: float
    per_step_rewards: np.ndarray
    scores: list[float] = field(default_factory=list)
    history: list[float] = field(default_factory=list)


# --------------------------------------------------------------------------
# planning models


class PlanningModel(Protocol):
    limits: ActionLimits

    def rollout(self, z0, seqs: np.ndarray, e_g) -> tuple[np.ndarray, np.ndarray]: ...

    def objective(self, z0, seqs: np.ndarray, e_g, gamma: float, a_prev, grad: bool = False): ...


def smoothness(seqs: np.ndarray, a_prev) -> np.ndarray:
    """Per-sequence sum of L1 norms of consecutive action differences."""
    a_prev = np.zeros(3) if a_prev is None else np.asarray(a_prev, dtype=float)
    prev = np.concatenate([np.broadcast_to(a_prev, (seqs.shape[0], 1, 3)), seqs[:, :-1]], axis=1)
    return np.abs(seqs - prev).sum(axis=(1, 2))


def _smoothness_grad(seqs: np.ndarray, a_prev) -> np.ndarray:
    a_prev = np.zeros(3) if a_prev is None else np.asarray(a_prev, dtype=float)
    prev = np.concatenate([np.broadcast_to(a_prev, (seqs.shape[0], 1, 3)), seqs[:, :-1]], axis=1)
    s = np.sign(seqs - prev)
    g = s.copy()
    g[:, :-1] -= s[:, 1:]
    return g


class LatentModel:
    """Planning view of a :class:`WorldModel`; rollouts propagate the mean."""

    def __init__(self, model: WorldModel, vocab: Vocabulary | None = None):
        self.model = model
        self.limits = model.limits
        self.vocab = vocab or Vocabulary.load()

    def initial_state(self, obs: Observation, pose: Pose) -> np.ndarray:
        return self.model.encode(obs)

    def embed(self, query: str) -> np.ndarray:
        return embed_language(query, self.vocab).e

    def _forward(self, g: ad.Graph, z0, u: ad.Tensor, e_g, T: int):
        m = self.model
        B = u.shape[0]
        P = m.bind(g, trainable=False)
        z = g.const(np.broadcast_to(np.asarray(z0, dtype=float), (B, m.d_z)).copy())
        e = g.const(np.broadcast_to(np.asarray(getattr(e_g, "e", e_g), dtype=float), (B, m.hyper.d_e)).copy())
        latents, rewards = [], []
        for t in range(T):
            z, _ = m.dynamics_graph(P, z, ad.columns(u, 3 * t, 3 * t + 3))
            latents.append(z)
            rewards.append(m.reward_graph(P, z, e))
        return latents, rewards

    def rollout(self, z0, seqs, e_g):
        seqs = np.asarray(seqs, dtype=float)
        B, T, _ = seqs.shape
        g = ad.Graph()
        u = g.const((seqs / self.limits.scale).reshape(B, 3 * T))
        latents, rewards = self._forward(g, z0, u, e_g, T)
        return np.stack([z.value for z in latents], axis=1), np.concatenate([r.value for r in rewards], axis=1)

    def objective(self, z0, seqs, e_g, gamma, a_prev, grad=False):
        seqs = np.asarray(seqs, dtype=float)
        B, T, _ = seqs.shape
        scale = self.limits.scale
        g = ad.Graph()
        u = g.param((seqs / scale).reshape(B, 3 * T), "u")
        _, rewards = self._forward(g, z0, u, e_g, T)
        total = ad.concat(rewards)
        J = ad.sum(total, axis=1)
        if gamma:
            prev = g.const(np.broadcast_to(np.zeros(3) if a_prev is None else np.asarray(a_prev, float), (B, 3)).copy())
            pen = None
            for t in range(T):
                a_t = ad.columns(u, 3 * t, 3 * t + 3) * g.const(scale)
                d = ad.l1_norm(a_t - prev, axis=1)
                pen = d if pen is None else pen + d
                prev = a_t
            J = J - pen * float(gamma)
        if not grad:
            return J.value.copy(), None
        grads = ad.backward(g, ad.sum(J))
        return J.value.copy(), grads["u"].reshape(B, T, 3) / scale


class OracleRewardAdapter:
    """Ground-truth rewards on exact poses; gradients by central differences.

    The latent state is the pose itself, so rollouts are exact compositions.
    Imagined poses in collision score zero reward.
    """

    def __init__(self, scene: Scene, cam: CameraModel, target_id: str, limits: ActionLimits = ActionLimits(), fd_step: float = 0.02):
        self.scene = scene
        self.cam = cam
        self.target_id = target_id
        self.limits = limits
        self.fd_step = fd_step
        self.params = target_params(scene, target_id)

    def initial_state(self, obs, pose: Pose):
        return np.array(pose, dtype=float)

    def embed(self, query: str):
        return None

    def _reward(self, p: Pose) -> float:
        if not is_collision_free(self.scene, p):
            return 0.0
        return ground_truth_reward(self.scene, p, self.cam, self.target_id, self.params)

    def rollout(self, z0, seqs, e_g=None):
        seqs = np.asarray(seqs, dtype=float)
        B, T, _ = seqs.shape
        lat = np.zeros((B, T, 3))
        rew = np.zeros((B, T))
        for b in range(B):
            p = Pose(*map(float, z0))
            for t in range(T):
                p = compose(p, seqs[b, t])
                lat[b, t] = p
                rew[b, t] = self._reward(p)
        return lat, rew

    def objective(self, z0, seqs, e_g, gamma, a_prev, grad=False):
        seqs = np.asarray(seqs, dtype=float)
        _, rew = self.rollout(z0, seqs)
        J = rew.sum(axis=1) - gamma * smoothness(seqs, a_prev)
        if not grad:
            return J, None
        B, T, _ = seqs.shape
        scale = self.limits.scale
        h = self.fd_step
        gr = np.zeros_like(seqs)
        for t in range(T):
            for k in range(3):
                plus, minus = seqs.copy(), seqs.copy()
                plus[:, t, k] += h * scale[k]
                minus[:, t, k] -= h * scale[k]
                rp = self.rollout(z0, plus)[1].sum(axis=1)
                rm = self.rollout(z0, minus)[1].sum(axis=1)
                gr[:, t, k] = (rp - rm) / (2 * h * scale[k])
        gr -= gamma * _smoothness_grad(seqs, a_prev)
        return J, gr


def as_planning_model(model, vocab: Vocabulary | None = None):
    if isinstance(model, WorldModel):
        return LatentModel(model, vocab)
    return model


# --------------------------------------------------------------------------
# objective and rollout


def rollout_latent(model, z0, seq, e_g) -> tuple[np.ndarray, np.ndarray]:
    """Latents and rewards along one action sequence ``(T, 3)``."""
    pm = as_planning_model(model)
    lat, rew = pm.rollout(z0, np.asarray(seq, dtype=float)[None], e_g)
    return lat[0], rew[0]


def mpc_objective(model, z0, seq, e_g, gamma: float, a_prev=None) -> float:
    pm = as_planning_model(model)
    J, _ = pm.objective(z0, np.asarray(seq, dtype=float)[None], e_g, gamma, a_prev)
    return float(J[0])


def _project(seqs: np.ndarray, limits: ActionLimits) -> np.ndarray:
    s = limits.scale
    return np.clip(seqs, -s, s)


def _as_batch(seqs) -> np.ndarray:
    a = np.asarray(seqs, dtype=float)
    return a[None] if a.ndim == 2 else a


def _argmax(values) -> int:
    """Index of the maximum; lowest index wins ties."""
    values = np.asarray(values)
    return int(np.flatnonzero(values == values.max())[0])


def grad_plan_batch(model, z0, e_g, init, cfg: PlannerConfig, a_prev=None) -> list[PlanResult]:
    """Projected gradient ascent on each initial sequence, keeping best iterates."""
    pm = as_planning_model(model)
    seqs = _project(_as_batch(init), pm.limits)
    B = seqs.shape[0]
    scale = pm.limits.scale
    best = seqs.copy()
    best_J = np.full(B, -np.inf)
    history = [[] for _ in range(B)]
    state = ad.OptimState(lr=cfg.grad_lr, weight_decay=0.0)
    u = {"u": seqs / scale}
    for step in range(cfg.grad_steps + 1):
        cur = u["u"] * scale
        need_grad = step < cfg.grad_steps
        J, g = pm.objective(z0, cur, e_g, cfg.gamma, a_prev, grad=need_grad)
        better = J > best_J
        best[better] = cur[better]
        best_J = np.where(better, J, best_J)
        for b in range(B):
            history[b].append(float(best_J[b]))
        if need_grad:
            # ascend: the optimizer minimizes, so feed the negated gradient
            u, state = ad.adam_step(u, {"u": -(g * scale)}, state)
            u["u"] = np.clip(u["u"], -1.0, 1.0)
    _, rew = pm.rollout(z0, best, e_g)
    return [PlanResult(best[b], float(best_J[b]), rew[b], history=history[b]) for b in range(B)]


def grad_plan(model, z0, e_g, init, cfg: PlannerConfig = PlannerConfig(), a_prev=None) -> PlanResult:
    """WM-Grad: gradient ascent from ``init`` projected onto the action limits."""
    return grad_plan_batch(model, z0, e_g, init, cfg, a_prev)[0]


def cem_plan(model, z0, e_g, cfg: PlannerConfig = PlannerConfig(), seed=0, a_prev=None, init_mean=None, trace: list | None = None) -> PlanResult:
    """WM-CEM: Gaussian sampling with elite refits; returns the best sample seen."""
    pm = as_planning_model(model)
    c = cfg.cem
    rng = np.random.default_rng(seed)
    scale = pm.limits.scale
    mean = np.zeros((cfg.T, 3)) if init_mean is None else np.asarray(init_mean, float) / scale
    std = np.full((cfg.T, 3), c.init_sigma)
    best, best_J = None, -np.inf
    for _ in range(c.iterations):
        samples = np.clip(mean + std * rng.standard_normal((c.population, cfg.T, 3)), -1.0, 1.0)
        J, _ = pm.objective(z0, samples * scale, e_g, cfg.gamma, a_prev)
        order = np.argsort(-J, kind="stable")
        if J[order[0]] > best_J:
            best_J, best = float(J[order[0]]), samples[order[0]] * scale
        elite = samples[order[: c.elites]]
        mean = elite.mean(axis=0)
        std = elite.std(axis=0)
        if trace is not None:
            trace.append(std.copy())
    _, rew = pm.rollout(z0, best[None], e_g)
    return PlanResult(best, best_J, rew[0])


# --------------------------------------------------------------------------
# action primitives and proposals

OPTION_LABELS = "ABCDEFGHI"


def primitive_set(scale: float = 0.15, turn: float = math.pi / 4) -> list[np.ndarray]:
    """The nine coarse options A-I as body-frame action sequences."""
    d = scale / math.sqrt(2.0)
    return [
        np.array([[scale, 0.0, 0.0]]),  # A forward
        np.array([[0.0, scale, 0.0]]),  # B left
        np.array([[0.0, -scale, 0.0]]),  # C right
        np.array([[0.0, 0.0, turn]]),  # D look left
        np.array([[0.0, 0.0, -turn]]),  # E look right
        np.array([[d, d, 0.0]]),  # F forward-left
        np.array([[d, -d, 0.0]]),  # G forward-right
        np.array([[d, d, 0.0], [0.0, 0.0, -turn]]),  # H forward-left, look right
        np.array([[d, -d, 0.0], [0.0, 0.0, turn]]),  # I forward-right, look left
    ]


def pad_sequence(seq: np.ndarray, T: int) -> np.ndarray:
    seq = np.asarray(seq, dtype=float)[:T]
    if len(seq) < T:
        seq = np.concatenate([seq, np.zeros((T - len(seq), 3))])
    return seq


def heuristic_plan(model, z0, e_g, cfg: PlannerConfig = PlannerConfig(), a_prev=None) -> PlanResult:
    """WM-HR: refine every primitive and keep the best (lowest option on ties)."""
    inits = np.stack([pad_sequence(p, cfg.T) for p in primitive_set()])
    results = grad_plan_batch(model, z0, e_g, inits, cfg, a_prev)
    scores = [r.predicted_return for r in results]
    best = results[_argmax(scores)]
    best.scores = scores
    return best


def womap_plan(model, z0, e_g, proposals, cfg: PlannerConfig = PlannerConfig(), a_prev=None) -> PlanResult:
    """Refine each proposal and execute the one with the highest predicted return."""
    proposals = list(proposals)
    if not proposals:
        raise NoProposals("no action proposals")
    inits = np.stack([pad_sequence(p, cfg.T) for p in proposals])
    results = grad_plan_batch(model, z0, e_g, inits, cfg, a_prev)
    scores = [r.predicted_return for r in results]
    best = results[_argmax(scores)]
    best.scores = scores
    return best


@dataclass
class ProposalContext:
    query: str
    observation: Observation
    pose: Pose | None = None
    history: list = field(default_factory=list)


class PrimitiveProposer:
    """Scripted chooser over options A-I reading the semantic scan.

    Plays the role of the multiple-choice VLM prompt: it sees only the current
    scan, the query and its own movement history.
    """

    def __init__(self, vocab: Vocabulary | None = None, cam: CameraModel = CameraModel(), k: int = 3, center_tol: float = math.radians(12)):
        self.vocab = vocab or Vocabulary.load()
        self.cam = cam
        self.k = k
        self.center_tol = center_tol
        self._class_vecs = np.stack([embed_language(c, self.vocab).e for c in CLASS_NAMES])

    def query_class(self, query: str) -> int:
        e = embed_language(query, self.vocab).e
        return int(np.argmax(self._class_vecs @ e))

    def _target_rays(self, obs: Observation, cls: int) -> np.ndarray:
        return np.flatnonzero(obs.classes == cls)

    def _blocked(self, label: str, obs: Observation, margin: float = 0.3) -> bool:
        """True when the option's first translation runs into something in view."""
        dx, dy, _ = primitive_set()[OPTION_LABELS.index(label)][0]
        dist = math.hypot(dx, dy)
        if dist == 0.0:
            return False
        n = len(obs.depths)
        i = int(round((math.atan2(dy, dx) + self.cam.fov / 2) / (self.cam.fov / (n - 1))))
        if not 0 <= i < n:
            return False  # outside the view: unknown
        return bool(obs.depths[max(0, i - 2) : i + 3].min() < dist + margin)

    def choose(self, ctx: ProposalContext) -> list[str]:
        """Ranked option letters, best first."""
        obs = ctx.observation
        n = len(obs.classes)
        step = self.cam.fov / (n - 1)
        center = (n - 1) / 2
        cls = self.query_class(ctx.query)
        rays = self._target_rays(obs, cls)
        if rays.size:
            offset = (rays.mean() - center) * step  # positive = left
            lo, hi = rays.min(), rays.max()
            d_t = obs.depths[rays].mean()
            if lo == 0 or hi == n - 1 or abs(offset) > 2 * self.center_tol:
                ranked = ["D", "F", "A"] if offset > 0 else ["E", "G", "A"]
            elif abs(offset) > self.center_tol:
                ranked = ["F", "D", "A"] if offset > 0 else ["G", "E", "A"]
            else:
                # an occluder hugging one side of the target suggests looking behind it
                occ_right = obs.classes[lo - 1] >= 0 and obs.depths[lo - 1] < d_t
                occ_left = obs.classes[hi + 1] >= 0 and obs.depths[hi + 1] < d_t
                if occ_left and not occ_right:
                    ranked = ["I", "G", "A"]
                elif occ_right and not occ_left:
                    ranked = ["H", "F", "A"]
                else:
                    ranked = ["A", "F", "G"]
        else:
            # not in view: sweep toward the more open side, move on after a full turn
            unseen = 0
            for entry in reversed(ctx.history):
                if self._target_rays(entry["observation"], cls).size:
                    break
                unseen += 1
            half = n // 2
            left_open = obs.depths[half:].mean() >= obs.depths[:half].mean()
            ranked = ["D", "E", "A"] if left_open else ["E", "D", "A"]
            if unseen >= 8 and unseen % 8 < 3:
                ranked = ["A", "F", "G"]
        ranked = [c for c in ranked if not self._blocked(c, obs)]
        for c in "AFGDEBCHI":
            if c not in ranked and not self._blocked(c, obs):
                ranked.append(c)
        return ranked or ["D"]

    def propose(self, ctx: ProposalContext) -> list[np.ndarray]:
        prims = primitive_set()
        return [prims[OPTION_LABELS.index(c)] for c in self.choose(ctx)[: self.k]]


class FileProposer:
    """Ranked proposals from a JSON file ``[{rank, actions, confidence}, ...]``."""

    def __init__(self, path: str | Path, limits: ActionLimits = ActionLimits(), k: int = 3):
        entries = json.loads(Path(path).read_text())
        entries = sorted(entries, key=lambda d: d["rank"])
        self.proposals = []
        for d in entries[:k]:
            seq = np.asarray(d["actions"], dtype=float).reshape(-1, 3)
            if not all(limits.contains(a, tol=1e-9) for a in seq):
                raise ValueError(f"proposal of rank {d['rank']} exceeds the action limits")
            self.proposals.append(seq)
        if not self.proposals:
            raise NoProposals(str(path))

    def propose(self, ctx: ProposalContext) -> list[np.ndarray]:
        return list(self.proposals)


class OracleProposer:
    """Test-only: proposals built from the true target position."""

    def __init__(self, scene: Scene, target_id: str, limits: ActionLimits = ActionLimits(), k: int = 3):
        self.scene = scene
        self.goal = scene.get(target_id).shape.centroid
        self.limits = limits
        self.k = k

    def propose(self, ctx: ProposalContext) -> list[np.ndarray]:
        p = ctx.pose
        bearing = math.atan2(self.goal[1] - p.y, self.goal[0] - p.x) - p.theta
        bearing = math.remainder(bearing, 2 * math.pi)
        turn = max(-self.limits.ang, min(self.limits.ang, bearing))
        fwd = self.limits.lin
        out = [
            np.array([[0.0, 0.0, turn], [fwd, 0.0, 0.0]]),
            np.array([[fwd * math.cos(bearing), fwd * math.sin(bearing), turn]]),
            np.array([[fwd, 0.0, 0.0]]),
        ]
        return [np.array([self.limits.clamp(a) for a in s]) for s in out[: self.k]]


# --------------------------------------------------------------------------
# planners as episode policies


class Planner:
    name = "base"

    def reset(self, seed: int) -> None:
        self.rng = np.random.default_rng(seed)

    def plan(self, model, z0, e_g, a_prev, ctx: ProposalContext) -> PlanResult:
        raise NotImplementedError


class GradPlanner(Planner):
    """WM-Grad with warm starts (previous plan shifted by one step)."""

    name = "grad"

    def __init__(self, cfg: PlannerConfig = PlannerConfig(), init_noise: float = 0.5):
        self.cfg = cfg
        self.init_noise = init_noise
        self.reset(0)

    def reset(self, seed: int) -> None:
        super().reset(seed)
        self._prev = None

    def plan(self, model, z0, e_g, a_prev, ctx):
        pm = as_planning_model(model)
        if self._prev is None:
            init = self.rng.uniform(-self.init_noise, self.init_noise, (self.cfg.T, 3)) * pm.limits.scale
        else:
            init = np.concatenate([self._prev[1:], np.zeros((1, 3))])
        res = grad_plan(pm, z0, e_g, init, self.cfg, a_prev)
        self._prev = res.sequence
        return res


class CEMPlanner(Planner):
    name = "cem"

    def __init__(self, cfg: PlannerConfig = PlannerConfig()):
        self.cfg = cfg
        self.reset(0)

    def plan(self, model, z0, e_g, a_prev, ctx):
        return cem_plan(model, z0, e_g, self.cfg, int(self.rng.integers(2**63)), a_prev)


class HeuristicPlanner(Planner):
    name = "hr"

    def __init__(self, cfg: PlannerConfig = PlannerConfig()):
        self.cfg = cfg
        self.reset(0)

    def plan(self, model, z0, e_g, a_prev, ctx):
        return heuristic_plan(model, z0, e_g, self.cfg, a_prev)


class WoMAPPlanner(Planner):
    name = "womap"

    def __init__(self, proposer, cfg: PlannerConfig = PlannerConfig()):
        self.proposer = proposer
        self.cfg = cfg
        self.reset(0)

    def plan(self, model, z0, e_g, a_prev, ctx):
        return womap_plan(model, z0, e_g, self.proposer.propose(ctx), self.cfg, a_prev)


class RandomPlanner(Planner):
    name = "random"

    def __init__(self, cfg: PlannerConfig = PlannerConfig(), limits: ActionLimits = ActionLimits()):
        self.cfg = cfg
        self.limits = limits
        self.reset(0)

    def plan(self, model, z0, e_g, a_prev, ctx):
        seq = self.rng.uniform(-1.0, 1.0, (self.cfg.T, 3)) * self.limits.scale
        return PlanResult(seq, 0.0, np.zeros(self.cfg.T))


class ZeroPlanner(Planner):
    name = "zero"

    def __init__(self, T: int = 4):
        self.T = T
        self.reset(0)

    def plan(self, model, z0, e_g, a_prev, ctx):
        return PlanResult(np.zeros((self.T, 3)), 0.0, np.zeros(self.T))


def make_planner(name: str, cfg: PlannerConfig = PlannerConfig(), vocab: Vocabulary | None = None, cam: CameraModel = CameraModel(), proposer=None) -> Planner:
    if name == "grad":
        return GradPlanner(cfg)
    if name == "cem":
        return CEMPlanner(cfg)
    if name == "hr":
        return HeuristicPlanner(cfg)
    if name == "womap":
        return WoMAPPlanner(proposer or PrimitiveProposer(vocab, cam, k=cfg.K), cfg)
    if name == "random":
        return RandomPlanner(cfg)
    raise ValueError(f"unknown planner {name!r}")


# --------------------------------------------------------------------------
# episodes


@dataclass
class EpisodeTrace:
    poses: list[Pose] = field(default_factory=list)
    actions: list[tuple] = field(default_factory=list)
    oracle_rewards: list[float] = field(default_factory=list)
    predicted_returns: list[float] = field(default_factory=list)
    distance: float = 0.0
    success: bool = False

    @property
    def steps(self) -> int:
        return len(self.actions)

    def to_json(self) -> dict:
        return {
            "poses": [list(p) for p in self.poses],
            "actions": [list(a) for a in self.actions],
            "oracle_rewards": self.oracle_rewards,
            "predicted_returns": self.predicted_returns,
            "distance": self.distance,
            "success": self.success,
            "steps": self.steps,
        }


def resolve_target(scene: Scene, query: str, vocab: Vocabulary | None = None) -> str:
    """Target id for a query: exact id or query match, then class name, then
    the target whose query embedding is most similar."""
    for t in scene.targets:
        if t.query_text == query or t.id == query:
            return t.id
    for t in scene.targets:
        if t.class_name == query:
            return t.id
    if not scene.targets:
        raise ValueError("scene has no targets")
    vocab = vocab or Vocabulary.load()
    e = embed_language(query, vocab).e
    sims = [cosine_similarity(e, embed_language(t.query_text, vocab).e) for t in scene.targets]
    return scene.targets[_argmax(sims)].id


def execute_action(scene: Scene, p: Pose, a, limits: ActionLimits) -> tuple[Pose, tuple]:
    """Apply ``a`` (clamped); a blocked translation stops at the free boundary.

    The robot is a disc, so the rotation is always executed in full.
    """
    a = np.array(limits.clamp(a))
    q = compose(p, a)
    if is_collision_free(scene, q) and segment_collision_free(scene, p, q):
        return q, tuple(a)
    lo, hi = 0.0, 1.0
    for _ in range(30):
        mid = 0.5 * (lo + hi)
        qm = compose(p, (a[0] * mid, a[1] * mid, a[2]))
        if is_collision_free(scene, qm) and segment_collision_free(scene, p, qm):
            lo = mid
        else:
            hi = mid
    done = (a[0] * lo, a[1] * lo, a[2])
    return compose(p, done), done


def execute_episode(
    scene: Scene,
    cam: CameraModel,
    model,
    planner: Planner,
    query: str,
    start: Pose,
    max_steps: int = 40,
    thresholds: SuccessThresholds = SuccessThresholds(),
    target_id: str | None = None,
    seed: int = 0,
    vocab: Vocabulary | None = None,
) -> EpisodeTrace:
    """Receding-horizon loop: observe, stop on success, plan, execute one step."""
    if not is_collision_free(scene, start):
        raise ValueError("start pose is in collision")
    pm = as_planning_model(model, vocab)
    target_id = target_id or resolve_target(scene, query, getattr(pm, "vocab", vocab))
    th = target_thresholds(scene, target_id, thresholds)
    params = target_params(scene, target_id)
    e_g = pm.embed(query)
    planner.reset(seed)
    trace = EpisodeTrace()
    p = start
    a_prev = np.zeros(3)
    history: list[dict] = []
    for step in range(max_steps + 1):
        obs = render_scan(scene, p, cam)
        rep = visibility(scene, p, cam, target_id)
        trace.poses.append(p)
        trace.oracle_rewards.append(ground_truth_reward(scene, p, cam, target_id, params))
        if is_success(rep, cam, th, params):
            trace.success = True
            break
        if step == max_steps:
            break
        ctx = ProposalContext(query, obs, p, history)
        z0 = pm.initial_state(obs, p)
        res = planner.plan(pm, z0, e_g, a_prev, ctx)
        p_next, a_exec = execute_action(scene, p, res.sequence[0], pm.limits)
        trace.actions.append(a_exec)
        trace.predicted_returns.append(float(res.predicted_return))
        trace.distance += math.hypot(p_next.x - p.x, p_next.y - p.y)
        history.append({"action": a_exec, "observation": obs})
        a_prev = np.asarray(a_exec)
        p = p_next
    return trace
