"""Latent world model: scan encoder, Gaussian dynamics, language-conditioned reward.

Parameters live in a flat ``{name: ndarray}`` dict. Every forward pass is
built on a fresh :class:`~activeloc.autodiff.Graph`, so the same code serves
training, gradient checks and planning.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import re
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import LOG_SIGMA_MAX, LOG_SIGMA_MIN, Graph, OptimState
from .datagen import Dataset, InsufficientLength, TrainingSequence
from .scene import CLASS_NAMES, ActionLimits, CameraModel, Observation, wrap_angles

log = logging.getLogger(__name__)


class DimMismatch(ValueError):
    pass


class EmptyQuery(ValueError):
    pass


class ZeroVector(ValueError):
    pass


class LabelOutOfRange(ValueError):
    pass


# --------------------------------------------------------------------------
# language


@dataclass
class Vocabulary:
    table: dict[str, np.ndarray]
    hash_seed: int = 0
    d_e: int = 32

    def __post_init__(self):
        self.table = {w: _unit(np.asarray(v, dtype=float)) for w, v in self.table.items()}
        dims = {v.shape[0] for v in self.table.values()}
        if dims and dims != {self.d_e}:
            if len(dims) == 1:
                self.d_e = dims.pop()
            else:
                raise DimMismatch(f"vocabulary vectors have mixed sizes {sorted(dims)}")

    def vector(self, word: str) -> np.ndarray:
        v = self.table.get(word)
        if v is not None:
            return v
        h = hashlib.sha256(f"{self.hash_seed}:{word}".encode()).digest()
        rng = np.random.default_rng(int.from_bytes(h[:8], "little"))
        return _unit(rng.normal(size=self.d_e))

    @property
    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_json(), sort_keys=True).encode()).hexdigest()

    def to_json(self) -> dict:
        d = {w: v.tolist() for w, v in sorted(self.table.items())}
        d["hash_seed"] = self.hash_seed
        return d

    @classmethod
    def from_json(cls, d: dict) -> "Vocabulary":
        d = dict(d)
        seed = int(d.pop("hash_seed", 0))
        return cls({w: np.asarray(v, dtype=float) for w, v in d.items()}, seed)

    @classmethod
    def load(cls, path: str | Path | None = None) -> "Vocabulary":
        if path is None:
            text = resources.files("activeloc").joinpath("data/vocab.json").read_text()
        else:
            text = Path(path).read_text()
        return cls.from_json(json.loads(text))


@dataclass(frozen=True)
class LanguageEmbedding:
    e: np.ndarray
    query_text: str


def _unit(v: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(v)
    if n == 0:
        raise ZeroVector("cannot normalize a zero vector")
    return v / n


def embed_language(query: str, v: Vocabulary) -> LanguageEmbedding:
    words = re.findall(r"[a-z0-9]+", query.lower())
    if not words:
        raise EmptyQuery(repr(query))
    return LanguageEmbedding(_unit(np.mean([v.vector(w) for w in words], axis=0)), query)


def cosine_similarity(e1, e2) -> float:
    a = np.asarray(getattr(e1, "e", e1), dtype=float)
    b = np.asarray(getattr(e2, "e", e2), dtype=float)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ZeroVector("cosine of a zero vector")
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


# --------------------------------------------------------------------------
# model


@dataclass
class HyperParams:
    lr: float = 5e-4
    start_lr: float = 1e-3
    warmup_epochs: int = 2
    weight_decay: float = 4e-2
    batch_size: int = 25
    epochs: int = 100
    H: int = 4
    d_z: int = 64
    d_e: int = 32
    hidden: int = 128
    w_dyn: float = 1.0
    w_rew: float = 1.0
    w_rew_pred: float = 1.0
    encoder_mode: str = "frozen"
    max_stride: int = 5
    steps_per_epoch: int | None = None

    def __post_init__(self):
        if self.encoder_mode not in ("frozen", "trainable"):
            raise ValueError(f"unknown encoder mode {self.encoder_mode!r}")
        for name in ("lr", "start_lr", "batch_size", "epochs", "H", "d_z", "d_e", "hidden"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    @classmethod
    def from_dict(cls, d: dict) -> "HyperParams":
        known = set(cls.__dataclass_fields__)
        return cls(**{k: v for k, v in d.items() if k in known})


def _glorot(rng, n_in, n_out, gain=1.0):
    return rng.normal(0.0, gain * math.sqrt(2.0 / (n_in + n_out)), (n_in, n_out))


class WorldModel:
    """Encoder, dynamics and reward heads sharing one parameter dict."""

    def __init__(
        self,
        hyper: HyperParams = HyperParams(),
        camera: CameraModel = CameraModel(),
        limits: ActionLimits = ActionLimits(),
        seed: int = 0,
        params: dict[str, np.ndarray] | None = None,
    ):
        self.hyper = hyper
        self.camera = camera
        self.limits = limits
        self.n_classes = len(CLASS_NAMES)
        self.in_dim = camera.n_rays * (1 + self.n_classes)
        self.params = params if params is not None else self._init_params(seed)
        self._check_shapes()

    # -- parameters

    def _init_params(self, seed: int) -> dict[str, np.ndarray]:
        rng = np.random.default_rng(seed)
        h, dz, de, hid = self.hyper, self.hyper.d_z, self.hyper.d_e, self.hyper.hidden
        p = {}
        if h.encoder_mode == "frozen":
            p["enc.W"] = rng.normal(0.0, 1.0 / math.sqrt(self.in_dim), (self.in_dim, dz))
        else:
            p["enc.W1"] = _glorot(rng, self.in_dim, hid)
            p["enc.b1"] = np.zeros(hid)
            p["enc.W2"] = _glorot(rng, hid, dz)
            p["enc.b2"] = np.zeros(dz)
        p["dyn.Wz"] = _glorot(rng, dz, dz)
        p["dyn.bz"] = np.zeros(dz)
        p["dyn.Wa"] = _glorot(rng, 3, dz)
        p["dyn.ba"] = np.zeros(dz)
        p["dyn.W1"] = _glorot(rng, 3 * dz, hid)
        p["dyn.b1"] = np.zeros(hid)
        p["dyn.W2"] = _glorot(rng, hid, hid)
        p["dyn.b2"] = np.zeros(hid)
        p["dyn.Wmu"] = _glorot(rng, hid, dz, gain=0.1)
        p["dyn.bmu"] = np.zeros(dz)
        p["dyn.Wls"] = _glorot(rng, hid, dz, gain=0.1)
        p["dyn.bls"] = np.full(dz, -2.0)
        p["rew.Wz"] = _glorot(rng, dz, hid)
        p["rew.bz"] = np.zeros(hid)
        p["rew.We"] = _glorot(rng, de, hid)
        p["rew.be"] = np.zeros(hid)
        p["rew.W1"] = _glorot(rng, 3 * hid, hid)
        p["rew.b1"] = np.zeros(hid)
        p["rew.W2"] = _glorot(rng, hid, hid)
        p["rew.b2"] = np.zeros(hid)
        p["rew.Wo"] = _glorot(rng, hid, 1)
        p["rew.bo"] = np.zeros(1)
        return p

    def _check_shapes(self):
        for k, v in self.params.items():
            if not np.isfinite(v).all():
                raise ad.NonFinite(f"parameter {k} is not finite")
        key = "enc.W" if self.frozen else "enc.W1"
        if self.params[key].shape[0] != self.in_dim:
            raise DimMismatch("encoder input size does not match the camera")

    @property
    def frozen(self) -> bool:
        return self.hyper.encoder_mode == "frozen"

    @property
    def d_z(self) -> int:
        return self.hyper.d_z

    def trainable_names(self) -> list[str]:
        return [k for k in self.params if not (self.frozen and k.startswith("enc."))]

    def bind(self, g: Graph, trainable: bool = True) -> dict[str, ad.Tensor]:
        """Place parameters on ``g``; frozen-encoder weights become constants."""
        names = set(self.trainable_names()) if trainable else set()
        return {k: (g.param(v, k) if k in names else g.const(v)) for k, v in self.params.items()}

    def encoder_checksum(self) -> str:
        h = hashlib.sha256()
        for k in sorted(self.params):
            if k.startswith("enc."):
                h.update(self.params[k].tobytes())
        return h.hexdigest()

    # -- features

    def features(self, depths: np.ndarray, classes: np.ndarray) -> np.ndarray:
        """Flatten scans to ``[depth / max_range, one-hot class per ray]`` rows."""
        depths = np.atleast_2d(depths)
        classes = np.atleast_2d(classes)
        if depths.shape[1] != self.camera.n_rays or classes.shape != depths.shape:
            raise DimMismatch(f"scan with {depths.shape[1]} rays, model expects {self.camera.n_rays}")
        n, r = depths.shape
        onehot = np.zeros((n, r, self.n_classes))
        hit = classes >= 0
        rows, cols = np.nonzero(hit)
        onehot[rows, cols, classes[hit]] = 1.0
        return np.concatenate([depths / self.camera.max_range, onehot.reshape(n, -1)], axis=1)

    def obs_features(self, obs: list[Observation] | Observation) -> np.ndarray:
        if isinstance(obs, Observation):
            obs = [obs]
        return self.features(np.stack([o.depths for o in obs]), np.stack([o.classes for o in obs]))

    # -- graph builders

    def encode_graph(self, P: dict, x: ad.Tensor) -> ad.Tensor:
        if self.frozen:
            return x @ P["enc.W"]
        return ad.affine(ad.tanh(ad.affine(x, P["enc.W1"], P["enc.b1"])), P["enc.W2"], P["enc.b2"])

    def dynamics_graph(self, P: dict, z: ad.Tensor, a: ad.Tensor) -> tuple[ad.Tensor, ad.Tensor]:
        """``a`` is in normalized units (action / limits)."""
        ze = ad.affine(z, P["dyn.Wz"], P["dyn.bz"])
        ae = ad.affine(a, P["dyn.Wa"], P["dyn.ba"])
        h = ad.tanh(ad.affine(ad.concat([ze, ae, ze * ae]), P["dyn.W1"], P["dyn.b1"]))
        h = ad.tanh(ad.affine(h, P["dyn.W2"], P["dyn.b2"]))
        mu = z + ad.affine(h, P["dyn.Wmu"], P["dyn.bmu"])
        log_sigma = ad.clip(ad.affine(h, P["dyn.Wls"], P["dyn.bls"]), LOG_SIGMA_MIN, LOG_SIGMA_MAX)
        return mu, log_sigma

    def reward_graph(self, P: dict, z: ad.Tensor, e: ad.Tensor) -> ad.Tensor:
        """Reward logits pass through a sigmoid; output shape (B, 1)."""
        rz = ad.affine(z, P["rew.Wz"], P["rew.bz"])
        re_ = ad.affine(e, P["rew.We"], P["rew.be"])
        h = ad.tanh(ad.affine(ad.concat([rz, re_, rz * re_]), P["rew.W1"], P["rew.b1"]))
        h = ad.tanh(ad.affine(h, P["rew.W2"], P["rew.b2"]))
        return ad.sigmoid(ad.affine(h, P["rew.Wo"], P["rew.bo"]))

    # -- numeric wrappers

    def normalize_action(self, a) -> np.ndarray:
        a = np.atleast_2d(np.asarray(a, dtype=float))
        if a.shape[1] != 3:
            raise DimMismatch("actions are (dx, dy, dtheta)")
        return a / self.limits.scale

    def encode_features(self, x: np.ndarray) -> np.ndarray:
        g = Graph()
        P = self.bind(g, trainable=False)
        return self.encode_graph(P, g.const(np.atleast_2d(x))).value

    def encode(self, o: Observation | list[Observation]) -> np.ndarray:
        z = self.encode_features(self.obs_features(o))
        return z[0] if isinstance(o, Observation) else z

    def predict_dynamics(self, z, a) -> tuple[np.ndarray, np.ndarray]:
        z2 = np.atleast_2d(np.asarray(z, dtype=float))
        if z2.shape[1] != self.d_z:
            raise DimMismatch(f"latent of size {z2.shape[1]}, expected {self.d_z}")
        a2 = self.normalize_action(a)
        g = Graph()
        P = self.bind(g, trainable=False)
        mu, ls = self.dynamics_graph(P, g.const(z2), g.const(np.broadcast_to(a2, (z2.shape[0], 3))))
        if np.ndim(z) == 1:
            return mu.value[0], ls.value[0]
        return mu.value, ls.value

    def predict_reward(self, z, e) -> float | np.ndarray:
        z2 = np.atleast_2d(np.asarray(z, dtype=float))
        e2 = np.atleast_2d(np.asarray(getattr(e, "e", e), dtype=float))
        if z2.shape[1] != self.d_z or e2.shape[1] != self.hyper.d_e:
            raise DimMismatch("latent or language embedding has the wrong size")
        if e2.shape[0] != z2.shape[0]:
            e2 = np.broadcast_to(e2, (z2.shape[0], e2.shape[1]))
        g = Graph()
        P = self.bind(g, trainable=False)
        r = self.reward_graph(P, g.const(z2), g.const(e2)).value[:, 0]
        return float(r[0]) if np.ndim(z) == 1 else r

    # -- persistence

    def config(self) -> dict:
        return {
            "hyper": asdict(self.hyper),
            "camera": asdict(self.camera),
            "limits": asdict(self.limits),
        }

    def save(self, path: str | Path, state: OptimState | None = None, extra: dict | None = None) -> None:
        ad.save_checkpoint(path, self.params, state, {"model": self.config(), **(extra or {})})

    @classmethod
    def load(cls, path: str | Path) -> "WorldModel":
        params, _, extra = ad.load_checkpoint(path)
        cfg = extra["model"]
        return cls(
            HyperParams.from_dict(cfg["hyper"]),
            CameraModel(**cfg["camera"]),
            ActionLimits(**cfg["limits"]),
            params=params,
        )


# --------------------------------------------------------------------------
# losses


def _dynamics_loss_graph(model: WorldModel, P: dict, zs: list, actions: list, predicted: list | None = None) -> ad.Tensor:
    """Recurrent H-step NLL; ``zs`` are H + 1 latent batches (targets are zs[1:]).

    The predicted means are appended to ``predicted`` when given.
    """
    H = len(actions)
    B = zs[0].shape[0]
    z_hat = zs[0]
    total = None
    for tau in range(H):
        mu, ls = model.dynamics_graph(P, z_hat, actions[tau])
        nll = ad.gaussian_nll(zs[tau + 1], mu, ls)
        total = nll if total is None else total + nll
        z_hat = mu
        if predicted is not None:
            predicted.append(mu)
    return total * (1.0 / (H * B))


def _reward_loss_graph(model: WorldModel, P: dict, z: ad.Tensor, e: ad.Tensor, labels: np.ndarray) -> ad.Tensor:
    r = model.reward_graph(P, z, e)
    return ad.bce(r, labels.reshape(-1, 1))


def dynamics_loss(model: WorldModel, seq: TrainingSequence | list) -> float:
    """Mean over the horizon of the NLL of encoded successors under the rollout."""
    if isinstance(seq, TrainingSequence):
        obs, actions = seq.observations, seq.actions
    else:
        obs, actions = list(seq[0]), list(seq[1])
    if len(actions) < 1 or len(obs) != len(actions) + 1:
        raise InsufficientLength("need H >= 1 actions and H + 1 observations")
    g = Graph()
    P = model.bind(g, trainable=False)
    x = model.obs_features(obs)
    z_all = model.encode_graph(P, g.const(x)).value
    zs = [g.const(z_all[k : k + 1]) for k in range(len(obs))]
    acts = [g.const(model.normalize_action(a)) for a in actions]
    return _dynamics_loss_graph(model, P, zs, acts).item()


def reward_loss(model: WorldModel, batch: list, vocab: Vocabulary) -> float:
    """Mean BCE over ``(observation, query, r_gt)`` triples."""
    obs = [b[0] for b in batch]
    labels = np.array([b[2] for b in batch], dtype=float)
    if np.any((labels < 0) | (labels > 1)):
        raise LabelOutOfRange("reward labels must lie in [0, 1]")
    e = np.stack([embed_language(b[1], vocab).e for b in batch])
    g = Graph()
    P = model.bind(g, trainable=False)
    z = model.encode_graph(P, g.const(model.obs_features(obs)))
    return _reward_loss_graph(model, P, z, g.const(e), labels).item()


# --------------------------------------------------------------------------
# training


def relative_actions(poses_a: np.ndarray, poses_b: np.ndarray) -> np.ndarray:
    """Vectorized relative action between pose rows (x, y, theta)."""
    c, s = np.cos(poses_a[:, 2]), np.sin(poses_a[:, 2])
    wx, wy = poses_b[:, 0] - poses_a[:, 0], poses_b[:, 1] - poses_a[:, 1]
    return np.stack([c * wx + s * wy, -s * wx + c * wy, wrap_angles(poses_b[:, 2] - poses_a[:, 2])], axis=1)


class _Corpus:
    """Datasets flattened into arrays for fast batch sampling."""

    def __init__(self, model: WorldModel, datasets: list[Dataset], vocab: Vocabulary):
        feats, poses, trajs = [], [], []
        rew_rows, rew_emb, rew_lab = [], [], []
        emb_index: dict[str, int] = {}
        embs = []
        offset = 0
        for ds in datasets:
            for tid, recs in ds.trajectories().items():
                idx = list(range(offset, offset + len(recs)))
                trajs.append(np.array(idx))
                for r in recs:
                    poses.append(r.pose)
                    for target_id, value in sorted(r.rewards.items()):
                        q = ds.targets.get(target_id, target_id)
                        if q not in emb_index:
                            emb_index[q] = len(embs)
                            embs.append(embed_language(q, vocab).e)
                        rew_rows.append(offset)
                        rew_emb.append(emb_index[q])
                        rew_lab.append(value)
                    offset += 1
                feats.append(model.obs_features([r.observation for r in recs]))
        if offset == 0:
            raise InsufficientLength("empty dataset")
        self.x = np.concatenate(feats)
        self.poses = np.array(poses, dtype=float)
        self.trajs = trajs
        self.embs = np.array(embs)
        self.queries = list(emb_index)
        rows = np.array(rew_rows)
        self.rew_emb = np.array(rew_emb)
        self.rew_lab = np.array(rew_lab, dtype=float)
        # reward label slots per record
        order = np.argsort(rows, kind="stable")
        self.rew_rows = rows[order]
        self.rew_emb, self.rew_lab = self.rew_emb[order], self.rew_lab[order]
        self.rew_start = np.searchsorted(self.rew_rows, np.arange(offset))
        self.rew_end = np.searchsorted(self.rew_rows, np.arange(offset), side="right")
        self.n_records = offset
        # dense (record, query) label table, NaN where the query is not in the scene
        self.labels = np.full((offset, len(embs)), np.nan)
        self.labels[self.rew_rows, self.rew_emb] = self.rew_lab

    def sample_windows(self, rng: np.random.Generator, B: int, H: int, max_stride: int) -> np.ndarray:
        out = np.empty((B, H + 1), dtype=np.int64)
        usable = [t for t in self.trajs if len(t) >= H + 1]
        if not usable:
            raise InsufficientLength(f"no trajectory has {H + 1} records")
        for b in range(B):
            t = usable[int(rng.integers(len(usable)))]
            smax = max(1, min(max_stride, (len(t) - 1) // H))
            s = int(rng.integers(1, smax + 1))
            i0 = int(rng.integers(len(t) - H * s))
            out[b] = t[i0 : i0 + H * s + 1 : s]
        return out

    def sample_queries(self, rng: np.random.Generator, records: np.ndarray) -> np.ndarray:
        """One valid query index per record."""
        out = np.empty(len(records), dtype=np.int64)
        for i, r in enumerate(records):
            valid = np.flatnonzero(~np.isnan(self.labels[r]))
            out[i] = valid[int(rng.integers(len(valid)))]
        return out

    def reward_slots(self, records: np.ndarray) -> np.ndarray:
        return np.concatenate([np.arange(self.rew_start[r], self.rew_end[r]) for r in records.reshape(-1)])


@dataclass
class TrainLog:
    epochs: list[dict] = field(default_factory=list)

    @property
    def final(self) -> dict:
        return self.epochs[-1] if self.epochs else {}


def train(
    model: WorldModel,
    datasets: Dataset | list[Dataset],
    hyper: HyperParams | None = None,
    seed: int = 0,
    vocab: Vocabulary | None = None,
    state: OptimState | None = None,
) -> tuple[WorldModel, TrainLog]:
    """Minimize the weighted dynamics and reward losses with Adam.

    Rewards are supervised on encoded observations and, with weight
    ``w_rew_pred``, on the dynamics' predicted successor latents.
    """
    hyper = hyper or model.hyper
    vocab = vocab or Vocabulary.load()
    if isinstance(datasets, Dataset):
        datasets = [datasets]
    corpus = _Corpus(model, datasets, vocab)
    rng = np.random.default_rng(seed)
    state = state or OptimState(lr=hyper.start_lr, weight_decay=hyper.weight_decay)
    H, B = hyper.H, hyper.batch_size
    steps = hyper.steps_per_epoch or max(1, math.ceil(corpus.n_records / B))
    log_ = TrainLog()
    params = dict(model.params)
    z_cache = model.encode_features(corpus.x) if model.frozen else None

    for epoch in range(hyper.epochs):
        state.lr = hyper.start_lr if epoch < hyper.warmup_epochs else hyper.lr
        sums = np.zeros(2)
        for _ in range(steps):
            win = corpus.sample_windows(rng, B, H, hyper.max_stride)
            g = Graph()
            model.params = params
            P = model.bind(g)
            if z_cache is not None:
                zs = [g.const(z_cache[win[:, k]]) for k in range(H + 1)]
            else:
                z_in = model.encode_graph(P, g.const(corpus.x[win[:, 0]]))
                # successor targets are treated as constants
                z_tg = model.encode_features(corpus.x[win[:, 1:].reshape(-1)]).reshape(B, H, -1)
                zs = [z_in] + [g.const(z_tg[:, k]) for k in range(H)]
            acts = [
                g.const(relative_actions(corpus.poses[win[:, k]], corpus.poses[win[:, k + 1]]) / model.limits.scale)
                for k in range(H)
            ]
            predicted: list = []
            l_dyn = _dynamics_loss_graph(model, P, zs, acts, predicted)

            slots = corpus.reward_slots(win[:, 1:])
            rows = corpus.rew_rows[slots]
            if z_cache is not None:
                z_r = g.const(z_cache[rows])
            else:
                z_r = model.encode_graph(P, g.const(corpus.x[rows]))
            e_r = g.const(corpus.embs[corpus.rew_emb[slots]])
            l_rew = _reward_loss_graph(model, P, z_r, e_r, corpus.rew_lab[slots])

            loss = hyper.w_dyn * l_dyn + hyper.w_rew * l_rew
            if hyper.w_rew_pred:
                q = corpus.sample_queries(rng, win[:, 0])
                e_q = g.const(corpus.embs[q])
                l_pred = None
                for k, mu in enumerate(predicted):
                    lk = _reward_loss_graph(model, P, mu, e_q, corpus.labels[win[:, k + 1], q])
                    l_pred = lk if l_pred is None else l_pred + lk
                loss = loss + l_pred * (hyper.w_rew_pred / H)
            grads = ad.backward(g, loss)
            params, state = adam_update(params, grads, state)
            sums += (l_dyn.item(), l_rew.item())
        model.params = params
        entry = {"epoch": epoch, "lr": state.lr, "dynamics_nll": sums[0] / steps, "reward_bce": sums[1] / steps}
        log_.epochs.append(entry)
        log.info("epoch %d dyn %.4f rew %.4f", epoch, entry["dynamics_nll"], entry["reward_bce"])
    model.params = params
    model._optim_state = state
    return model, log_


def adam_update(params: dict, grads: dict, state: OptimState) -> tuple[dict, OptimState]:
    return ad.adam_step(params, grads, state)


# --------------------------------------------------------------------------
# evaluation helpers


def evaluate(model: WorldModel, datasets: Dataset | list[Dataset], vocab: Vocabulary | None = None, n_windows: int = 400, seed: int = 0) -> dict:
    """Held-out metrics: H-step NLL vs identity baseline, reward BCE and MAE."""
    vocab = vocab or Vocabulary.load()
    if isinstance(datasets, Dataset):
        datasets = [datasets]
    corpus = _Corpus(model, datasets, vocab)
    H = model.hyper.H
    rng = np.random.default_rng(seed)
    win = corpus.sample_windows(rng, n_windows, H, 1)
    z_all = model.encode_features(corpus.x)
    g = Graph()
    P = model.bind(g, trainable=False)
    zs = [g.const(z_all[win[:, k]]) for k in range(H + 1)]
    acts = [g.const(relative_actions(corpus.poses[win[:, k]], corpus.poses[win[:, k + 1]]) / model.limits.scale) for k in range(H)]
    nll = _dynamics_loss_graph(model, P, zs, acts).item()
    # identity dynamics: every prediction equals the first latent, sigma at its floor
    floor = np.full_like(z_all[win[:, 0]], LOG_SIGMA_MIN)
    ident = np.mean([ad.gaussian_nll(g.const(z_all[win[:, k + 1]]), g.const(z_all[win[:, 0]]), g.const(floor)).item() for k in range(H)]) / n_windows

    # per-step rollout error
    mse = []
    z_hat = zs[0]
    for k in range(H):
        z_hat, _ = model.dynamics_graph(P, z_hat, acts[k])
        mse.append(float(np.mean((z_hat.value - z_all[win[:, k + 1]]) ** 2)))
    ident_mse = [float(np.mean((z_all[win[:, 0]] - z_all[win[:, k + 1]]) ** 2)) for k in range(H)]

    r = model.predict_reward(z_all[corpus.rew_rows], corpus.embs[corpus.rew_emb])
    lab = corpus.rew_lab
    rc = np.clip(r, ad.BCE_EPS, 1 - ad.BCE_EPS)
    bce_v = float(-(lab * np.log(rc) + (1 - lab) * np.log1p(-rc)).mean())
    return {
        "dynamics_nll": nll,
        "identity_nll": float(ident),
        "rollout_mse": mse,
        "identity_mse": ident_mse,
        "reward_bce": bce_v,
        "reward_mae": float(np.abs(r - lab).mean()),
        "label_entropy": float(-(lab * np.log(np.clip(lab, 1e-12, 1)) + (1 - lab) * np.log(np.clip(1 - lab, 1e-12, 1))).mean()),
    }
