"""Dense tensors with reverse-mode automatic differentiation.

Only the primitives needed by the forecasting models are provided. A
``GradGraph`` records primitive applications while it is active; outside a
graph, tensors are plain values and nothing is recorded (inference mode).

    >>> w = parameter(np.array([1.0, -2.0]), "w")
    >>> with GradGraph() as g:
    ...     loss = (w * w).sum()
    >>> backward(g, loss)["w"]
    array([ 2., -4.])
"""

from __future__ import annotations

import contextlib
import threading
from dataclasses import dataclass, field
from typing import Callable, Iterator, Sequence

import numpy as np


class TensorError(Exception):
    pass


class ShapeMismatch(TensorError, ValueError):
    pass


class NonFiniteResult(TensorError, FloatingPointError):
    pass


class NotScalarLoss(TensorError, ValueError):
    pass


class DetachedNode(TensorError, ValueError):
    pass


class ToleranceExceeded(TensorError, AssertionError):
    pass


_local = threading.local()


def default_dtype() -> np.dtype:
    return getattr(_local, "dtype", np.dtype(np.float32))


def set_default_dtype(dtype) -> None:
    dtype = np.dtype(dtype)
    if dtype not in (np.float32, np.float64):
        raise ValueError(f"unsupported dtype {dtype}")
    _local.dtype = dtype


@contextlib.contextmanager
def precision(dtype) -> Iterator[None]:
    """Temporarily switch the default floating dtype (e.g. to float64 for gradient checks)."""
    old = default_dtype()
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(old)


def _active_graph() -> "GradGraph | None":
    return getattr(_local, "graph", None)


class Tensor:
    """A dense array that may participate in the active gradient graph."""

    __slots__ = ("data", "parents", "vjp", "op", "name", "requires_grad", "node_id")

    def __init__(self, data, *, name: str | None = None, requires_grad: bool = False):
        arr = np.asarray(data)
        if arr.dtype.kind != "f":
            arr = arr.astype(default_dtype())
        self.data = arr
        self.parents: tuple[Tensor, ...] = ()
        self.vjp: Callable | None = None
        self.op = "leaf"
        self.name = name
        self.requires_grad = requires_grad
        self.node_id: int | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, op={self.op}{tag})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None):
        return tsum(self, axis)

    def mean(self, axis=None):
        return tmean(self, axis)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def parameter(data, name: str) -> Tensor:
    arr = np.array(data)
    if arr.dtype.kind != "f":
        arr = arr.astype(default_dtype())
    return Tensor(arr, name=name, requires_grad=True)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype or default_dtype()))


@dataclass
class GradGraph:
    """Ordered record of primitive applications for one forward/backward pass.

    Recording order is a valid topological order, so the backward sweep just
    walks the node list in reverse.
    """

    nodes: list[Tensor] = field(default_factory=list)
    leaves: dict[int, Tensor] = field(default_factory=dict)
    _previous: "GradGraph | None" = field(default=None, repr=False)

    def __enter__(self) -> "GradGraph":
        self._previous = _active_graph()
        _local.graph = self
        return self

    def __exit__(self, *exc) -> None:
        _local.graph = self._previous
        self._previous = None

    def record(self, t: Tensor) -> None:
        for p in t.parents:
            if p.requires_grad and p.vjp is None and id(p) not in self.leaves:
                self.leaves[id(p)] = p
        t.node_id = len(self.nodes)
        self.nodes.append(t)

    def dump(self) -> str:
        """Text edge list: one line per node, ``id op shape <- parent ids``."""
        leaf_ids = {id(t): f"L{i}" for i, t in enumerate(self.leaves.values())}
        lines = [f"L{i} leaf {t.name or '?'} {list(t.shape)}" for i, t in enumerate(self.leaves.values())]
        for t in self.nodes:
            srcs = []
            for p in t.parents:
                if p.node_id is not None and p.node_id < len(self.nodes) and self.nodes[p.node_id] is p:
                    srcs.append(str(p.node_id))
                else:
                    srcs.append(leaf_ids.get(id(p), "c"))
            lines.append(f"{t.node_id} {t.op} {list(t.shape)} <- {' '.join(srcs)}")
        return "\n".join(lines)


def _check_finite(arr: np.ndarray, op: str) -> None:
    if not np.isfinite(arr).all():
        raise NonFiniteResult(f"{op} produced a non-finite value")


def _make(data: np.ndarray, parents: Sequence[Tensor], vjp: Callable, op: str) -> Tensor:
    _check_finite(data, op)
    out = Tensor(data)
    out.op = op
    graph = _active_graph()
    if graph is not None and any(p.requires_grad for p in parents):
        out.parents = tuple(parents)
        out.vjp = vjp
        out.requires_grad = True
        graph.record(out)
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _pair(a, b) -> tuple[Tensor, Tensor]:
    a = a if isinstance(a, Tensor) else Tensor(np.asarray(a, dtype=b.dtype))
    b = b if isinstance(b, Tensor) else Tensor(np.asarray(b, dtype=a.dtype))
    return a, b


def _broadcast_shape(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise ShapeMismatch(f"{op}: cannot broadcast {a.shape} with {b.shape}") from exc


# ---------------------------------------------------------------------------
# elementwise arithmetic
# ---------------------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shape(a, b, "add")

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(a.data + b.data, (a, b), vjp, "add")


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shape(a, b, "sub")

    def vjp(g):
        return _unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)

    return _make(a.data - b.data, (a, b), vjp, "sub")


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shape(a, b, "mul")

    def vjp(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(a.data * b.data, (a, b), vjp, "mul")


def matmul(a, b) -> Tensor:
    """Batched matrix product over the last two axes (leading axes broadcast)."""
    a, b = _pair(a, b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeMismatch(f"matmul needs >=2-D operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeMismatch(f"matmul: {a.shape} @ {b.shape}")

    def vjp(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _make(a.data @ b.data, (a, b), vjp, "matmul")


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight + bias`` with a single 2-D weight, x of any leading shape.

    The leading axes are folded into one matrix product, which keeps the
    weight gradient a single GEMM instead of a batched one plus a reduction.
    """
    if x.shape[-1] != weight.shape[0] or weight.ndim != 2:
        raise ShapeMismatch(f"linear: {x.shape} @ {weight.shape}")
    lead = x.shape[:-1]
    x2 = x.data.reshape(-1, x.shape[-1])
    out = x2 @ weight.data
    if bias is not None:
        out = out + bias.data
    out = out.reshape(*lead, weight.shape[1])
    parents = (x, weight) if bias is None else (x, weight, bias)

    def vjp(g):
        g2 = g.reshape(-1, g.shape[-1])
        gx = (g2 @ weight.data.T).reshape(x.shape) if x.requires_grad else None
        gw = x2.T @ g2 if weight.requires_grad else None
        if bias is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    return _make(out, parents, vjp, "linear")


# ---------------------------------------------------------------------------
# shape manipulation
# ---------------------------------------------------------------------------


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise ShapeMismatch(f"concat: {[t.shape for t in tensors]}") from exc
    sizes = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def vjp(g):
        return tuple(np.split(g, sizes, axis=axis))

    return _make(data, tensors, vjp, "concat")


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        data = np.stack([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise ShapeMismatch(f"stack: {[t.shape for t in tensors]}") from exc

    def vjp(g):
        return tuple(np.moveaxis(g, axis, 0))

    return _make(data, tensors, vjp, "stack")


def getitem(x: Tensor, index) -> Tensor:
    """Basic slicing (ints, slices, Ellipsis). Fancy indexing is not supported."""
    data = x.data[index]

    def vjp(g):
        full = np.zeros_like(x.data)
        full[index] = g
        return (full,)

    return _make(np.array(data, copy=True), (x,), vjp, "slice")


def reshape(x: Tensor, shape) -> Tensor:
    try:
        data = x.data.reshape(shape)
    except ValueError as exc:
        raise ShapeMismatch(f"reshape {x.shape} -> {shape}") from exc

    def vjp(g):
        return (g.reshape(x.shape),)

    return _make(data, (x,), vjp, "reshape")


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))

    def vjp(g):
        return (np.transpose(g, inverse),)

    return _make(np.transpose(x.data, axes), (x,), vjp, "transpose")


def tsum(x: Tensor, axis=None) -> Tensor:
    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, x.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), x.shape).copy(),)

    return _make(np.asarray(x.data.sum(axis=axis)), (x,), vjp, "sum")


def tmean(x: Tensor, axis=None) -> Tensor:
    n = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g / n, x.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g / n, axis), x.shape).copy(),)

    return _make(np.asarray(x.data.mean(axis=axis)), (x,), vjp, "mean")


# ---------------------------------------------------------------------------
# nonlinearities
# ---------------------------------------------------------------------------


def sigmoid(x: Tensor) -> Tensor:
    # tanh form never overflows
    s = 0.5 * (1.0 + np.tanh(0.5 * x.data))

    def vjp(g):
        return (g * s * (1.0 - s),)

    return _make(s, (x,), vjp, "sigmoid")


def tanh(x: Tensor) -> Tensor:
    t = np.tanh(x.data)

    def vjp(g):
        return (g * (1.0 - t * t),)

    return _make(t, (x,), vjp, "tanh")


def elu(x: Tensor, alpha: float = 1.0) -> Tensor:
    z = x.data
    neg = alpha * np.expm1(np.minimum(z, 0.0))
    out = np.where(z > 0, z, neg)

    def vjp(g):
        return (g * np.where(z > 0, 1.0, neg + alpha),)

    return _make(out, (x,), vjp, "elu")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0

    def vjp(g):
        return (g * mask,)

    return _make(x.data * mask, (x,), vjp, "relu")


def softmax(x: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Softmax over the last axis; ``mask`` (True = keep) zeroes entries exactly."""
    z = x.data
    if mask is not None:
        mask = np.broadcast_to(mask, z.shape)
        if not mask.any(axis=-1).all():
            raise ShapeMismatch("softmax mask removes every entry of a row")
        z = np.where(mask, z, -np.inf)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=-1, keepdims=True)

    def vjp(g):
        return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)

    return _make(s, (x,), vjp, "softmax")


def dropout(x: Tensor, rate: float, training: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout: identity in eval mode, scaled by 1/(1-rate) in train mode."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ValueError("train-mode dropout needs an rng")
    keep = (rng.random(x.shape, dtype=np.float32) >= rate).astype(x.dtype) * (1.0 / (1.0 - rate))

    def vjp(g):
        return (g * keep,)

    return _make(x.data * keep, (x,), vjp, "dropout")


def layer_norm(x: Tensor, gamma: Tensor | None = None, beta: Tensor | None = None,
               eps: float = 1e-8) -> Tensor:
    """Normalize over the last axis, then apply the optional affine map."""
    z = x.data
    mu = z.mean(axis=-1, keepdims=True)
    xc = z - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat
    if gamma is not None:
        out = out * gamma.data
    if beta is not None:
        out = out + beta.data
    parents = [x] + [p for p in (gamma, beta) if p is not None]

    def vjp(g):
        gx_hat = g * gamma.data if gamma is not None else g
        n = z.shape[-1]
        gx = inv / n * (n * gx_hat - gx_hat.sum(axis=-1, keepdims=True)
                        - xhat * (gx_hat * xhat).sum(axis=-1, keepdims=True))
        grads = [gx]
        if gamma is not None:
            grads.append(_unbroadcast(g * xhat, gamma.shape))
        if beta is not None:
            grads.append(_unbroadcast(g, beta.shape))
        return tuple(grads)

    return _make(out, parents, vjp, "layer_norm")


def embedding(table: Tensor, index) -> Tensor:
    """Row lookup ``table[index]`` for an integer index array."""
    index = np.asarray(index)
    if index.dtype.kind not in "iu":
        raise ShapeMismatch("embedding index must be integer")
    if index.size and (index.min() < 0 or index.max() >= table.shape[0]):
        raise ShapeMismatch(f"embedding index out of range for table of {table.shape[0]} rows")

    def vjp(g):
        full = np.zeros_like(table.data)
        np.add.at(full, index, g)
        return (full,)

    return _make(table.data[index], (table,), vjp, "embedding")


# ---------------------------------------------------------------------------
# gradients
# ---------------------------------------------------------------------------


def backward(graph: GradGraph, loss: Tensor, params: dict[str, Tensor] | None = None) -> dict[str, np.ndarray]:
    """Reverse sweep from a scalar ``loss``.

    Returns a map from parameter name to gradient. Parameters listed in
    ``params`` but unreachable from the loss get zero gradients.
    """
    if loss.data.size != 1:
        raise NotScalarLoss(f"loss must be scalar, got shape {loss.shape}")
    if loss.node_id is None or loss.node_id >= len(graph.nodes) or graph.nodes[loss.node_id] is not loss:
        raise DetachedNode("loss was not recorded in this graph")

    adj: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(graph.nodes[: loss.node_id + 1]):
        g = adj.pop(id(node), None)
        if g is None:
            continue
        for parent, pg in zip(node.parents, node.vjp(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in adj:
                adj[key] = adj[key] + pg
            else:
                adj[key] = pg

    grads: dict[str, np.ndarray] = {}
    for leaf in graph.leaves.values():
        if leaf.name is None:
            continue
        g = adj.get(id(leaf))
        grads[leaf.name] = g.astype(leaf.dtype, copy=False) if g is not None else np.zeros_like(leaf.data)
    if params is not None:
        for name, p in params.items():
            grads.setdefault(name, np.zeros_like(p.data))
    return grads


@dataclass
class GradCheckEntry:
    param: str
    index: tuple[int, ...]
    analytic: float
    numeric: float

    @property
    def error(self) -> float:
        return abs(self.analytic - self.numeric) / max(1.0, abs(self.analytic))


@dataclass
class GradCheckReport:
    entries: list[GradCheckEntry]
    tol: float

    @property
    def max_error(self) -> float:
        return max((e.error for e in self.entries), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_error <= self.tol

    def worst(self, n: int = 5) -> list[GradCheckEntry]:
        return sorted(self.entries, key=lambda e: e.error, reverse=True)[:n]

    def groups(self) -> set[str]:
        return {e.param for e in self.entries}


def grad_check(f: Callable[[], Tensor], params: dict[str, Tensor], eps: float = 1e-5,
               tol: float = 1e-4, n_samples: int | None = None,
               rng: np.random.Generator | None = None, raise_on_fail: bool = True) -> GradCheckReport:
    """Compare analytic gradients with central differences.

    ``f`` must rebuild the loss from the current parameter values on every
    call and be deterministic. Coordinates are sampled round-robin across
    parameters so every parameter is visited before any is visited twice.
    """
    for name, p in params.items():
        if p.dtype != np.float64:
            raise TypeError(f"grad_check needs float64 parameters; {name} is {p.dtype}")
    with GradGraph() as g:
        loss = f()
    analytic = backward(g, loss, params)

    rng = rng or np.random.default_rng(0)
    names = list(params)
    if n_samples is None:
        coords = [(n, idx) for n in names for idx in np.ndindex(params[n].shape)]
    else:
        per_param = {n: rng.permutation(params[n].data.size) for n in names}
        coords, k = [], 0
        while len(coords) < n_samples and any(k < len(v) for v in per_param.values()):
            for n in names:
                if k < len(per_param[n]) and len(coords) < n_samples:
                    coords.append((n, np.unravel_index(per_param[n][k], params[n].shape)))
            k += 1

    entries = []
    for name, idx in coords:
        arr = params[name].data
        orig = arr[idx]
        arr[idx] = orig + eps
        fp = float(f().data)
        arr[idx] = orig - eps
        fm = float(f().data)
        arr[idx] = orig
        entries.append(GradCheckEntry(name, tuple(int(i) for i in idx),
                                      float(analytic[name][idx]), (fp - fm) / (2 * eps)))
    report = GradCheckReport(entries, tol)
    if raise_on_fail and not report.passed:
        worst = ", ".join(f"{e.param}{list(e.index)}: {e.error:.2e}" for e in report.worst())
        raise ToleranceExceeded(f"gradient check failed (tol {tol:g}); worst: {worst}")
    return report


# ---------------------------------------------------------------------------
# sequence primitives
# ---------------------------------------------------------------------------


def lstm_scan(x_proj: Tensor, h0: Tensor, c0: Tensor, w_h: Tensor) -> Tensor:
    """Run an LSTM over time given pre-projected inputs.

    ``x_proj`` is [B, T, 4H] (input projection plus bias, gate order i, f, g,
    o), ``h0``/``c0`` are [B, H] and ``w_h`` is [H, 4H]. Returns [B, T, 2H]
    holding the hidden state in the first H channels and the cell state in
    the last H, so a caller can continue the recurrence from any step.
    """
    B, T, G = x_proj.shape
    H = w_h.shape[0]
    if G != 4 * H or w_h.shape != (H, 4 * H) or h0.shape != (B, H) or c0.shape != (B, H):
        raise ShapeMismatch(f"lstm_scan: x {x_proj.shape}, h0 {h0.shape}, c0 {c0.shape}, w_h {w_h.shape}")
    xs, wh = x_proj.data, w_h.data
    dtype = np.result_type(xs, wh, h0.data, c0.data)
    gates = np.empty((T, 4, B, H), dtype=dtype)
    cells = np.empty((T + 1, B, H), dtype=dtype)
    hiddens = np.empty((T + 1, B, H), dtype=dtype)
    tanh_c = np.empty((T, B, H), dtype=dtype)
    hiddens[0], cells[0] = h0.data, c0.data
    for t in range(T):
        z = xs[:, t] + hiddens[t] @ wh
        zi, zf, zg, zo = z[:, :H], z[:, H:2 * H], z[:, 2 * H:3 * H], z[:, 3 * H:]
        i = 1.0 / (1.0 + np.exp(-zi))
        f = 1.0 / (1.0 + np.exp(-zf))
        g = np.tanh(zg)
        o = 1.0 / (1.0 + np.exp(-zo))
        cells[t + 1] = f * cells[t] + i * g
        tanh_c[t] = np.tanh(cells[t + 1])
        hiddens[t + 1] = o * tanh_c[t]
        gates[t, 0], gates[t, 1], gates[t, 2], gates[t, 3] = i, f, g, o
    out = np.concatenate([hiddens[1:], cells[1:]], axis=-1).transpose(1, 0, 2)

    def vjp(grad):
        gh_out = grad[..., :H].transpose(1, 0, 2)
        gc_out = grad[..., H:].transpose(1, 0, 2)
        dxs = np.empty((B, T, 4 * H), dtype=dtype)
        dwh = np.zeros_like(wh)
        dh = np.zeros((B, H), dtype=dtype)
        dc = np.zeros((B, H), dtype=dtype)
        for t in range(T - 1, -1, -1):
            i, f, g, o = gates[t]
            dh = dh + gh_out[t]
            dc = dc + gc_out[t] + dh * o * (1.0 - tanh_c[t] ** 2)
            dz = np.concatenate([dc * g * i * (1.0 - i),
                                 dc * cells[t] * f * (1.0 - f),
                                 dc * i * (1.0 - g * g),
                                 dh * tanh_c[t] * o * (1.0 - o)], axis=-1)
            dxs[:, t] = dz
            dwh += hiddens[t].T @ dz
            dh = dz @ wh.T
            dc = dc * f
        return dxs, dh, dc, dwh

    return _make(out, (x_proj, h0, c0, w_h), vjp, "lstm_scan")


def unfold_same(x: Tensor, kernel: int) -> Tensor:
    """Sliding windows for a 'same'-padded 1-D convolution.

    [B, T, F] -> [B, T, kernel * F]; zero padding of (kernel - 1) // 2 on the
    left and the rest on the right, so the output keeps length T.
    """
    B, T, F = x.shape
    if kernel < 1:
        raise ShapeMismatch("kernel must be >= 1")
    left = (kernel - 1) // 2
    padded = np.zeros((B, T + kernel - 1, F), dtype=x.dtype)
    padded[:, left:left + T] = x.data
    cols = np.concatenate([padded[:, j:j + T] for j in range(kernel)], axis=-1)

    def vjp(g):
        gp = np.zeros_like(padded)
        for j in range(kernel):
            gp[:, j:j + T] += g[..., j * F:(j + 1) * F]
        return (gp[:, left:left + T],)

    return _make(cols, (x,), vjp, "unfold_same")
