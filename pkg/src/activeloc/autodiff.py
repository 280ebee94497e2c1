"""Define-by-run reverse-mode autodiff over dense float64 arrays.

A :class:`Graph` is an append-only tape. Every op pushes its cached output
and a closure mapping the output gradient to input gradients; ``backward``
walks the tape once in reverse. Tensors are at most 2-D. The only
broadcasting supported is adding a bias row to a batch.

    g = Graph()
    w = g.param(np.ones((3, 2)), "w")
    x = g.const(np.arange(3.0)[None])
    loss = ad.sum(ad.tanh(x @ w))
    grads = ad.backward(g, loss)      # {"w": array(...)}
"""

from __future__ import annotations

import base64
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

BCE_EPS = 1e-7
LOG_SIGMA_MIN = -5.0
LOG_SIGMA_MAX = 2.0
HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


class ShapeMismatch(ValueError):
    pass


class NonFinite(FloatingPointError):
    pass


class NotScalarLoss(ValueError):
    pass


class Graph:
    __slots__ = ("values", "ops", "inputs", "backs", "params")

    def __init__(self):
        self.values: list[np.ndarray] = []
        self.ops: list[str] = []
        self.inputs: list[tuple[int, ...]] = []
        self.backs: list[Callable | None] = []
        self.params: dict[str, int] = {}

    def __len__(self):
        return len(self.values)

    def _push(self, op: str, inputs: tuple, value: np.ndarray, back: Callable | None) -> "Tensor":
        if not np.isfinite(value).all():
            raise NonFinite(f"{op} produced a non-finite value")
        self.values.append(value)
        self.ops.append(op)
        self.inputs.append(tuple(t.id for t in inputs))
        self.backs.append(back)
        return Tensor(self, len(self.values) - 1)

    def param(self, value, name: str | None = None) -> "Tensor":
        value = np.array(value, dtype=np.float64)
        if name is None:
            name = f"param{len(self.values)}"
        if name in self.params:
            raise ValueError(f"duplicate parameter {name!r}")
        t = self._push("param", (), value, None)
        self.params[name] = t.id
        return t

    def const(self, value) -> "Tensor":
        return self._push("const", (), np.asarray(value, dtype=np.float64), None)


class Tensor:
    __slots__ = ("graph", "id")

    def __init__(self, graph: Graph, idx: int):
        self.graph = graph
        self.id = idx

    @property
    def value(self) -> np.ndarray:
        return self.graph.values[self.id]

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def item(self) -> float:
        return float(self.value.reshape(-1)[0])

    def __repr__(self):
        return f"Tensor(op={self.graph.ops[self.id]}, shape={self.shape})"

    def __add__(self, other):
        return add(self, _lift(self, other))

    def __radd__(self, other):
        return add(_lift(self, other), self)

    def __sub__(self, other):
        return sub(self, _lift(self, other))

    def __rsub__(self, other):
        return sub(_lift(self, other), self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def _lift(ref: Tensor, other) -> Tensor:
    if isinstance(other, Tensor):
        return other
    return ref.graph.const(np.broadcast_to(np.asarray(other, dtype=np.float64), ref.shape).copy())


def _same_graph(*ts: Tensor) -> Graph:
    g = ts[0].graph
    for t in ts[1:]:
        if t.graph is not g:
            raise ValueError("tensors belong to different graphs")
    return g


def _bias_like(a: np.ndarray, b: np.ndarray) -> bool:
    return a.ndim == 2 and b.ndim == 1 and b.shape[0] == a.shape[1]


def _reduce_to(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    return grad.sum(axis=0)


# --------------------------------------------------------------------------
# elementwise and linear ops


def add(a: Tensor, b: Tensor) -> Tensor:
    g = _same_graph(a, b)
    va, vb = a.value, b.value
    if va.shape != vb.shape and not _bias_like(va, vb):
        raise ShapeMismatch(f"add: {va.shape} vs {vb.shape}")
    sa, sb = va.shape, vb.shape
    return g._push("add", (a, b), va + vb, lambda go: (go, _reduce_to(go, sb)))


def sub(a: Tensor, b: Tensor) -> Tensor:
    g = _same_graph(a, b)
    va, vb = a.value, b.value
    if va.shape != vb.shape and not _bias_like(va, vb):
        raise ShapeMismatch(f"sub: {va.shape} vs {vb.shape}")
    sb = vb.shape
    return g._push("sub", (a, b), va - vb, lambda go: (go, -_reduce_to(go, sb)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    g = _same_graph(a, b)
    va, vb = a.value, b.value
    if va.shape != vb.shape and not _bias_like(va, vb):
        raise ShapeMismatch(f"mul: {va.shape} vs {vb.shape}")
    sb = vb.shape
    return g._push("mul", (a, b), va * vb, lambda go: (go * vb, _reduce_to(go * va, sb)))


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return a.graph._push("scale", (a,), a.value * c, lambda go: (go * c,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    g = _same_graph(a, b)
    va, vb = a.value, b.value
    if va.ndim != 2 or vb.ndim != 2 or va.shape[1] != vb.shape[0]:
        raise ShapeMismatch(f"matmul: {va.shape} @ {vb.shape}")
    return g._push("matmul", (a, b), va @ vb, lambda go: (go @ vb.T, va.T @ go))


def affine(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """``x @ w + b`` as one tape node."""
    g = _same_graph(x, w, b)
    vx, vw, vb = x.value, w.value, b.value
    if vx.ndim != 2 or vw.ndim != 2 or vx.shape[1] != vw.shape[0] or vb.shape != (vw.shape[1],):
        raise ShapeMismatch(f"affine: {vx.shape} @ {vw.shape} + {vb.shape}")
    return g._push("affine", (x, w, b), vx @ vw + vb, lambda go: (go @ vw.T, vx.T @ go, go.sum(axis=0)))


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.value)
    return x.graph._push("tanh", (x,), y, lambda go: (go * (1.0 - y * y),))


def relu(x: Tensor) -> Tensor:
    mask = x.value > 0
    return x.graph._push("relu", (x,), np.where(mask, x.value, 0.0), lambda go: (go * mask,))


def sigmoid(x: Tensor) -> Tensor:
    y = _sigmoid(x.value)
    return x.graph._push("sigmoid", (x,), y, lambda go: (go * y * (1.0 - y),))


def softplus(x: Tensor) -> Tensor:
    v = x.value
    y = np.logaddexp(0.0, v)
    return x.graph._push("softplus", (x,), y, lambda go: (go * _sigmoid(v),))


def exp(x: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        y = np.exp(x.value)
    return x.graph._push("exp", (x,), y, lambda go: (go * y,))


def square(x: Tensor) -> Tensor:
    v = x.value
    return x.graph._push("square", (x,), v * v, lambda go: (2.0 * go * v,))


def clip(x: Tensor, lo: float, hi: float) -> Tensor:
    """Hard clamp; the gradient is zero wherever the clamp is active."""
    v = x.value
    inside = (v >= lo) & (v <= hi)
    return x.graph._push("clip", (x,), np.clip(v, lo, hi), lambda go: (go * inside,))


def _sigmoid(v: np.ndarray) -> np.ndarray:
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    ev = np.exp(v[~pos])
    out[~pos] = ev / (1.0 + ev)
    return out


# --------------------------------------------------------------------------
# structural ops


def concat(xs: list[Tensor], axis: int = -1) -> Tensor:
    g = _same_graph(*xs)
    vals = [t.value for t in xs]
    nd = vals[0].ndim
    ax = axis % nd
    for v in vals[1:]:
        if v.ndim != nd or any(v.shape[i] != vals[0].shape[i] for i in range(nd) if i != ax):
            raise ShapeMismatch(f"concat: {[v.shape for v in vals]}")
    splits = np.cumsum([v.shape[ax] for v in vals])[:-1]
    return g._push("concat", tuple(xs), np.concatenate(vals, axis=ax), lambda go: tuple(np.split(go, splits, axis=ax)))


def columns(x: Tensor, start: int, stop: int) -> Tensor:
    """Slice ``x[:, start:stop]``."""
    v = x.value
    if v.ndim != 2 or not 0 <= start < stop <= v.shape[1]:
        raise ShapeMismatch(f"columns[{start}:{stop}] of {v.shape}")
    shape = v.shape

    def back(go):
        full = np.zeros(shape)
        full[:, start:stop] = go
        return (full,)

    return x.graph._push("columns", (x,), v[:, start:stop].copy(), back)


# --------------------------------------------------------------------------
# reductions and losses


def sum(x: Tensor, axis: int | None = None) -> Tensor:  # noqa: A001
    v = x.value
    shape = v.shape
    if axis is None:
        return x.graph._push("sum", (x,), np.asarray(v.sum()), lambda go: (np.broadcast_to(go, shape).copy(),))
    out = v.sum(axis=axis)
    return x.graph._push("sum", (x,), out, lambda go: (np.broadcast_to(np.expand_dims(go, axis), shape).copy(),))


def mean(x: Tensor) -> Tensor:
    v = x.value
    n, shape = v.size, v.shape
    return x.graph._push("mean", (x,), np.asarray(v.mean()), lambda go: (np.full(shape, float(go) / n),))


def l1_norm(x: Tensor, axis: int | None = None) -> Tensor:
    """Sum of absolute values; subgradient 0 at 0."""
    v = x.value
    sgn = np.sign(v)
    shape = v.shape
    if axis is None:
        return x.graph._push("l1_norm", (x,), np.asarray(np.abs(v).sum()), lambda go: (go * sgn,))
    out = np.abs(v).sum(axis=axis)
    return x.graph._push("l1_norm", (x,), out, lambda go: (np.expand_dims(go, axis) * sgn,))


def bce(pred: Tensor, label) -> Tensor:
    """Mean binary cross-entropy; predictions clamped to [1e-7, 1 - 1e-7]."""
    p = pred.value
    y = label.value if isinstance(label, Tensor) else np.asarray(label, dtype=np.float64)
    if y.shape != p.shape:
        raise ShapeMismatch(f"bce: {p.shape} vs {y.shape}")
    pc = np.clip(p, BCE_EPS, 1.0 - BCE_EPS)
    inside = (p >= BCE_EPS) & (p <= 1.0 - BCE_EPS)
    n = p.size
    loss = -(y * np.log(pc) + (1.0 - y) * np.log1p(-pc)).mean()

    def back(go):
        gp = float(go) * (pc - y) / (pc * (1.0 - pc)) / n * inside
        if isinstance(label, Tensor):
            return gp, float(go) * (np.log1p(-pc) - np.log(pc)) / n
        return (gp,)

    inputs = (pred, label) if isinstance(label, Tensor) else (pred,)
    return pred.graph._push("bce", inputs, np.asarray(loss), back)


def gaussian_nll(x, mu: Tensor, log_sigma: Tensor) -> Tensor:
    """Sum over all elements of ``log s + log(2 pi)/2 + (x - mu)^2 / (2 s^2)``.

    ``log_sigma`` is clamped to [-5, 2] with zero gradient outside.
    """
    g = mu.graph
    vx = x.value if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)
    vm, vl = mu.value, log_sigma.value
    if not (vx.shape == vm.shape == vl.shape):
        raise ShapeMismatch(f"gaussian_nll: {vx.shape}, {vm.shape}, {vl.shape}")
    ls = np.clip(vl, LOG_SIGMA_MIN, LOG_SIGMA_MAX)
    inside = (vl >= LOG_SIGMA_MIN) & (vl <= LOG_SIGMA_MAX)
    inv_var = np.exp(-2.0 * ls)
    diff = vx - vm
    out = (ls + HALF_LOG_2PI + 0.5 * diff * diff * inv_var).sum()

    def back(go):
        go = float(go)
        g_mu = -go * diff * inv_var
        g_ls = go * (1.0 - diff * diff * inv_var) * inside
        if isinstance(x, Tensor):
            return -g_mu, g_mu, g_ls
        return g_mu, g_ls

    inputs = (x, mu, log_sigma) if isinstance(x, Tensor) else (mu, log_sigma)
    return g._push("gaussian_nll", inputs, np.asarray(out), back)


# --------------------------------------------------------------------------
# reverse pass


def backward(g: Graph, loss: Tensor) -> dict[str, np.ndarray]:
    """Gradients of a scalar ``loss`` for every parameter of ``g``."""
    if loss.graph is not g:
        raise ValueError("loss does not belong to this graph")
    if loss.value.size != 1:
        raise NotScalarLoss(f"loss has shape {loss.value.shape}")
    grads: list[np.ndarray | None] = [None] * (loss.id + 1)
    grads[loss.id] = np.ones_like(loss.value)
    values, inputs, backs = g.values, g.inputs, g.backs
    for i in range(loss.id, -1, -1):
        go = grads[i]
        if go is None or backs[i] is None:
            continue
        for j, gi in zip(inputs[i], backs[i](go)):
            gi = np.asarray(gi, dtype=np.float64)
            if gi.shape != values[j].shape:
                gi = gi.reshape(values[j].shape)
            grads[j] = gi if grads[j] is None else grads[j] + gi
    out = {}
    for name, i in g.params.items():
        gi = grads[i] if i < len(grads) else None
        out[name] = np.zeros_like(values[i]) if gi is None else gi
        if not np.isfinite(out[name]).all():
            raise NonFinite(f"gradient of {name} is not finite")
    return out


def finite_diff_check(f: Callable, params: dict[str, np.ndarray], h: float = 1e-5, order: int = 2) -> float:
    """Max relative error between reverse-mode and central-difference gradients.

    ``f(graph, tensors)`` builds a scalar loss from ``tensors`` (a dict of
    parameter tensors keyed like ``params``). The relative error per
    coordinate uses the denominator ``max(|g_ad|, |g_fd|, 1e-8)``.
    ``order=4`` uses the five-point central stencil, whose truncation error
    is small enough to afford a larger ``h`` and so less roundoff.
    """
    if order not in (2, 4):
        raise ValueError("order must be 2 or 4")
    params = {k: np.array(v, dtype=np.float64) for k, v in params.items()}

    def evaluate(ps):
        g = Graph()
        ts = {k: g.param(v, k) for k, v in ps.items()}
        return g, f(g, ts)

    def at(flat, k, orig, delta):
        flat[k] = orig + delta
        return evaluate(params)[1].item()

    g, loss = evaluate(params)
    ad = backward(g, loss)
    worst = 0.0
    for name, value in params.items():
        flat = value.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            if order == 2:
                fd = (at(flat, k, orig, h) - at(flat, k, orig, -h)) / (2.0 * h)
            else:
                fd = (
                    8.0 * (at(flat, k, orig, h) - at(flat, k, orig, -h))
                    - (at(flat, k, orig, 2 * h) - at(flat, k, orig, -2 * h))
                ) / (12.0 * h)
            flat[k] = orig
            a = float(ad[name].reshape(-1)[k])
            err = abs(a - fd) / max(abs(a), abs(fd), 1e-8)
            worst = max(worst, err)
    return worst


# --------------------------------------------------------------------------
# optimizer


@dataclass
class OptimState:
    lr: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 4e-2
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def hyper(self) -> dict:
        return {"lr": self.lr, "beta1": self.beta1, "beta2": self.beta2, "eps": self.eps, "weight_decay": self.weight_decay}


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: OptimState) -> tuple[dict[str, np.ndarray], OptimState]:
    """Bias-corrected adaptive-moment update with decoupled weight decay.

    Parameters missing from ``grads`` are left untouched.
    """
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1, c2 = 1.0 - b1**t, 1.0 - b2**t
    out = dict(params)
    for name, gr in grads.items():
        p = params[name]
        if gr.shape != p.shape:
            raise ShapeMismatch(f"{name}: grad {gr.shape} vs param {p.shape}")
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(p)
            v = np.zeros_like(p)
        m = b1 * m + (1.0 - b1) * gr
        v = b2 * v + (1.0 - b2) * gr * gr
        state.m[name], state.v[name] = m, v
        upd = (m / c1) / (np.sqrt(v / c2) + state.eps)
        out[name] = p - state.lr * upd - state.lr * state.weight_decay * p
    return out, state


# --------------------------------------------------------------------------
# checkpoints


def _encode_array(a: np.ndarray, fmt: str) -> dict:
    a = np.ascontiguousarray(a, dtype="<f8")
    if fmt == "base64":
        return {"shape": list(a.shape), "b64": base64.b64encode(a.tobytes()).decode()}
    return {"shape": list(a.shape), "data": a.reshape(-1).tolist()}


def _decode_array(d: dict) -> np.ndarray:
    if "b64" in d:
        a = np.frombuffer(base64.b64decode(d["b64"]), dtype="<f8").copy()
    else:
        a = np.asarray(d["data"], dtype=np.float64)
    return a.reshape(d["shape"])


def save_checkpoint(
    path: str | Path,
    params: dict[str, np.ndarray],
    state: OptimState | None = None,
    extra: dict | None = None,
    fmt: str = "base64",
) -> None:
    doc = {
        "layers": {k: _encode_array(v, fmt) for k, v in sorted(params.items())},
        "step": state.step if state else 0,
        "optimizer": None,
    }
    if state is not None:
        doc["optimizer"] = {
            "hyper": state.hyper(),
            "m": {k: _encode_array(v, fmt) for k, v in sorted(state.m.items())},
            "v": {k: _encode_array(v, fmt) for k, v in sorted(state.v.items())},
        }
    if extra:
        doc["extra"] = extra
    Path(path).write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n")


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], OptimState | None, dict]:
    doc = json.loads(Path(path).read_text())
    params = {k: _decode_array(v) for k, v in doc["layers"].items()}
    state = None
    if doc.get("optimizer"):
        o = doc["optimizer"]
        state = OptimState(**o["hyper"], step=doc["step"])
        state.m = {k: _decode_array(v) for k, v in o["m"].items()}
        state.v = {k: _decode_array(v) for k, v in o["v"].items()}
    return params, state, doc.get("extra", {})
