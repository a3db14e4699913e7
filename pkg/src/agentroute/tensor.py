"""Minimal dense float64 tensor engine with reverse-mode differentiation.

Everything here is just enough for the routing policy: a Tensor that records
its parents on a tape, a dozen ops with hand-written backward rules, a global
gradient-norm clip, and a bias-corrected Adam. numpy supplies the array
arithmetic; the differentiation logic lives in this file.
"""

from __future__ import annotations

import json
import math
from typing import Callable, Iterable, Sequence

import numpy as np

Array = np.ndarray


def _as_f64(x) -> Array:
    a = np.asarray(x, dtype=np.float64)
    return a


class Tensor:
    """A dense float64 array plus an optional gradient tape entry.

    Parents are (tensor, backward_fn) pairs; backward_fn maps the output
    gradient to that parent's gradient contribution. Ops only record parents
    when some input requires grad, so inference paths build no tape.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents")

    def __init__(self, data, requires_grad: bool = False):
        self.data = _as_f64(data)
        self.grad: Array | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: list[tuple["Tensor", Callable[[Array], Array]]] = []

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # -- operator sugar ----------------------------------------------------

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return sub(self, other)

    def __mul__(self, other: "Tensor") -> "Tensor":
        return mul(self, other)

    def __neg__(self) -> "Tensor":
        return scale(self, -1.0)

    def reshape(self, shape: Sequence[int] | tuple[int, ...]) -> "Tensor":
        return reshape(self, tuple(shape))

    def sum(self) -> "Tensor":
        return total_sum(self)

    def mean(self) -> "Tensor":
        return total_mean(self)


def _make(data: Array, parents: list[tuple[Tensor, Callable[[Array], Array]]]) -> Tensor:
    req = any(p.requires_grad for p, _ in parents)
    out = Tensor(data, requires_grad=req)
    if req:
        out._parents = parents
    return out


def backward(loss: Tensor) -> None:
    """Reverse-mode accumulation from a scalar loss over the recorded tape.

    Visits each node exactly once in reverse topological order. Raises on a
    non-scalar loss because the seed gradient would be ambiguous.
    """
    if loss.data.shape != ():
        raise ValueError(f"backward expects a scalar loss, got shape {loss.data.shape}")

    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent, _ in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))

    grads: dict[int, Array] = {id(loss): np.ones((), dtype=np.float64)}
    for node in reversed(topo):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.requires_grad and not node._parents:
            node.grad = g if node.grad is None else node.grad + g
        for parent, fn in node._parents:
            contrib = fn(g)
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + contrib
            else:
                grads[key] = contrib


# -- elementwise and structural ops -----------------------------------------


def _unbroadcast(grad: Array, shape: tuple[int, ...]) -> Array:
    """Sum a broadcast gradient back down to the original operand shape."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def add(a: Tensor, b: Tensor) -> Tensor:
    out = a.data + b.data
    return _make(out, [
        (a, lambda g: _unbroadcast(g, a.data.shape)),
        (b, lambda g: _unbroadcast(g, b.data.shape)),
    ])


def sub(a: Tensor, b: Tensor) -> Tensor:
    out = a.data - b.data
    return _make(out, [
        (a, lambda g: _unbroadcast(g, a.data.shape)),
        (b, lambda g: _unbroadcast(-g, b.data.shape)),
    ])


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = a.data * b.data
    return _make(out, [
        (a, lambda g: _unbroadcast(g * b.data, a.data.shape)),
        (b, lambda g: _unbroadcast(g * a.data, b.data.shape)),
    ])


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _make(a.data * c, [(a, lambda g: g * c)])


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ValueError("matmul expects 2-d operands")
    out = a.data @ b.data
    return _make(out, [
        (a, lambda g: g @ b.data.T),
        (b, lambda g: a.data.T @ g),
    ])


def dot(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 1 or b.data.ndim != 1:
        raise ValueError("dot expects 1-d operands")
    out = np.dot(a.data, b.data)
    return _make(np.asarray(out), [
        (a, lambda g: g * b.data),
        (b, lambda g: g * a.data),
    ])


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    out = a.data.reshape(shape)
    return _make(out, [(a, lambda g: g.reshape(a.data.shape))])


def concat(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not parts:
        raise ValueError("concat of zero tensors")
    out = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.data.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)
    parents = []
    for i, p in enumerate(parts):
        lo, hi = int(offsets[i]), int(offsets[i + 1])

        def bw(g: Array, lo=lo, hi=hi) -> Array:
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            return g[tuple(sl)]

        parents.append((p, bw))
    return _make(out, parents)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0.0
    return _make(a.data * mask, [(a, lambda g: g * mask)])


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _make(out, [(a, lambda g: g * out)])


def log(a: Tensor) -> Tensor:
    return _make(np.log(a.data), [(a, lambda g: g / a.data)])


def safe_log(a: Tensor) -> Tensor:
    """log on strictly positive entries, 0 elsewhere, zero grad elsewhere."""
    pos = a.data > 0.0
    out = np.where(pos, np.log(np.where(pos, a.data, 1.0)), 0.0)
    return _make(out, [(a, lambda g: np.where(pos, g / np.where(pos, a.data, 1.0), 0.0))])


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    inside = (a.data >= lo) & (a.data <= hi)
    return _make(np.clip(a.data, lo, hi), [(a, lambda g: g * inside)])


def minimum(a: Tensor, b: Tensor) -> Tensor:
    take_a = a.data <= b.data
    out = np.where(take_a, a.data, b.data)
    return _make(out, [
        (a, lambda g: _unbroadcast(g * take_a, a.data.shape)),
        (b, lambda g: _unbroadcast(g * ~take_a, b.data.shape)),
    ])


def total_sum(a: Tensor) -> Tensor:
    return _make(np.asarray(a.data.sum()), [(a, lambda g: g * np.ones_like(a.data))])


def total_mean(a: Tensor) -> Tensor:
    n = a.data.size
    if n == 0:
        raise ValueError("mean of an empty tensor")
    return _make(np.asarray(a.data.mean()), [(a, lambda g: g * np.ones_like(a.data) / n)])


def row_mean(a: Tensor) -> Tensor:
    """Mean over rows of an (n, d) matrix; returns shape (d,)."""
    if a.data.ndim != 2:
        raise ValueError("row_mean expects a 2-d operand")
    n = a.data.shape[0]
    if n == 0:
        return _make(np.zeros(a.data.shape[1]), [(a, lambda g: np.zeros_like(a.data))])
    out = a.data.mean(axis=0)
    return _make(out, [(a, lambda g: np.broadcast_to(g / n, a.data.shape).copy())])


def pick(a: Tensor, index: int) -> Tensor:
    """Select a single entry of a 1-d tensor as a scalar."""
    if a.data.ndim != 1:
        raise ValueError("pick expects a 1-d operand")
    index = int(index)

    def bw(g: Array) -> Array:
        out = np.zeros_like(a.data)
        out[index] = g
        return out

    return _make(np.asarray(a.data[index]), [(a, bw)])


def gather_rows(a: Tensor, idx: Array) -> Tensor:
    """Row gather a[idx]; backward scatter-adds into the source rows."""
    idx = np.asarray(idx, dtype=np.int64)

    def bw(g: Array) -> Array:
        out = np.zeros_like(a.data)
        np.add.at(out, idx, g)
        return out

    return _make(a.data[idx], [(a, bw)])


def group_mean(values: Tensor, groups: Array, num_groups: int) -> Tensor:
    """Mean of rows of `values` per group id; empty groups give zero rows.

    values: (n, d) or (n,). groups: (n,) ints in [0, num_groups).
    """
    groups = np.asarray(groups, dtype=np.int64)
    if groups.ndim != 1 or groups.shape[0] != values.data.shape[0]:
        raise ValueError("groups must be 1-d and align with the value rows")
    if groups.size and (groups.min() < 0 or groups.max() >= num_groups):
        raise ValueError("group id out of range")
    counts = np.bincount(groups, minlength=num_groups).astype(np.float64)
    vec = values.data.ndim == 1
    d = 1 if vec else values.data.shape[1]
    sums = np.zeros((num_groups, d), dtype=np.float64)
    vdata = values.data.reshape(-1, d)
    np.add.at(sums, groups, vdata)
    denom = np.maximum(counts, 1.0)[:, None]
    out = sums / denom

    def bw(g: Array) -> Array:
        g2 = g.reshape(num_groups, d)
        back = g2[groups] / denom[groups]
        return back.reshape(values.data.shape)

    res = out[:, 0] if vec else out
    return _make(res, [(values, bw)])


def row_normalize(a: Tensor, eps: float = 1e-6) -> Tensor:
    """Per-row x / (||x||_2 + eps) for an (n, d) matrix."""
    if a.data.ndim != 2:
        raise ValueError("row_normalize expects a 2-d operand")
    r = np.sqrt((a.data * a.data).sum(axis=1, keepdims=True))
    denom = r + eps
    out = a.data / denom

    def bw(g: Array) -> Array:
        # y = x / (r + eps); dy/dx = I/(r+eps) - x x^T / (r (r+eps)^2)
        gx_dot = (g * a.data).sum(axis=1, keepdims=True)
        r_safe = np.maximum(r, 1e-30)
        return g / denom - a.data * gx_dot / (r_safe * denom * denom)

    return _make(out, [(a, bw)])


def masked_softmax(scores: Tensor, mask: Array) -> Tensor:
    """Softmax over entries where mask is True; masked entries get exactly 0.

    Raises if no entry is allowed. Max-subtraction is applied over the allowed
    entries only, so the value is the plain renormalized softmax.
    """
    mask = np.asarray(mask, dtype=bool)
    if scores.data.ndim != 1 or mask.shape != scores.data.shape:
        raise ValueError("scores and mask must be aligned 1-d arrays")
    if not mask.any():
        raise ValueError("masked_softmax with an empty mask")
    shifted = scores.data - scores.data[mask].max()
    e = np.where(mask, np.exp(np.where(mask, shifted, 0.0)), 0.0)
    total = e.sum()
    p = e / total

    def bw(g: Array) -> Array:
        inner = (g * p).sum()
        return p * (g - inner)

    return _make(p, [(scores, bw)])


# -- optimization ------------------------------------------------------------


def clip_global_norm(tensors: Iterable[Tensor], max_norm: float = 0.5) -> float:
    """Scale all grads jointly so the global L2 norm is at most max_norm.

    Returns the applied scale factor (1.0 when already within the bound).
    Tensors without grads contribute zero and are left untouched.
    """
    ts = [t for t in tensors if t.grad is not None]
    sq = 0.0
    for t in ts:
        sq += float((t.grad * t.grad).sum())
    norm = math.sqrt(sq)
    if norm <= max_norm or norm == 0.0:
        return 1.0
    factor = max_norm / norm
    for t in ts:
        t.grad = t.grad * factor
    return factor


class Adam:
    """Bias-corrected Adam over a name->Tensor parameter dict."""

    def __init__(self, params: dict[str, Tensor], lr: float = 3e-4,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v.data) for k, v in params.items()}
        self.v = {k: np.zeros_like(v.data) for k, v in params.items()}

    def step(self) -> None:
        self.t += 1
        b1t = 1.0 - self.beta1 ** self.t
        b2t = 1.0 - self.beta2 ** self.t
        for k, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * (g * g)
            m_hat = self.m[k] / b1t
            v_hat = self.v[k] / b2t
            p.data = p.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None


# -- parameter persistence ---------------------------------------------------

PARAMS_FORMAT_VERSION = 1


def params_to_jsonable(params: dict[str, Tensor]) -> dict:
    return {
        "format_version": PARAMS_FORMAT_VERSION,
        "tensors": {
            name: {"shape": list(t.data.shape), "data": t.data.reshape(-1).tolist()}
            for name, t in params.items()
        },
    }


def params_from_jsonable(obj: dict, requires_grad: bool = True) -> dict[str, Tensor]:
    if not isinstance(obj, dict) or "tensors" not in obj:
        raise ValueError("malformed parameter blob")
    version = obj.get("format_version")
    if version != PARAMS_FORMAT_VERSION:
        raise ValueError(f"unsupported parameter format version: {version!r}")
    out: dict[str, Tensor] = {}
    for name, rec in obj["tensors"].items():
        arr = np.asarray(rec["data"], dtype=np.float64).reshape(rec["shape"])
        out[name] = Tensor(arr, requires_grad=requires_grad)
    return out


def save_params(path: str, params: dict[str, Tensor], meta: dict | None = None) -> None:
    blob = params_to_jsonable(params)
    if meta is not None:
        blob["meta"] = meta
    with open(path, "w") as fh:
        json.dump(blob, fh, sort_keys=True)


def load_params(path: str, requires_grad: bool = True) -> tuple[dict[str, Tensor], dict]:
    with open(path) as fh:
        blob = json.load(fh)
    params = params_from_jsonable(blob, requires_grad=requires_grad)
    return params, blob.get("meta", {})
