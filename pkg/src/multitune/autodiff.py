"""Define-by-run reverse-mode autodiff over dense numpy arrays.

Every op executed while a :class:`Graph` is active is appended to that graph's
tape, so the tape is topologically ordered by construction and ``backward``
simply walks it in reverse.  Ops executed with no active graph compute values
only (inference mode).
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "Graph",
    "ShapeError",
    "NumericError",
    "UsageError",
    "verification_mode",
    "default_dtype",
    "grad_check",
    "matmul",
    "add",
    "sub",
    "mul",
    "scale",
    "relu",
    "softmax",
    "layer_norm",
    "embedding",
    "concat_rows",
    "slice_axis",
    "reshape",
    "transpose",
    "tensor_sum",
    "cross_entropy",
    "dropout",
]


class ShapeError(ValueError):
    """Inputs to an op do not conform to its signature."""

    def __init__(self, op: str, *shapes: Sequence[int], detail: str = ""):
        self.op = op
        self.shapes = [tuple(s) for s in shapes]
        msg = f"{op}: incompatible shapes {self.shapes}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class NumericError(FloatingPointError):
    def __init__(self, op: str, op_id: int):
        self.op = op
        self.op_id = op_id
        super().__init__(f"non-finite output from op #{op_id} ({op})")


class UsageError(RuntimeError):
    pass


_DTYPE = [np.dtype(np.float32)]
_GRAPHS: list["Graph"] = []


def default_dtype() -> np.dtype:
    return _DTYPE[-1]


@contextlib.contextmanager
def verification_mode():
    """Run tensor construction in 64-bit floats (used for gradient checks)."""
    _DTYPE.append(np.dtype(np.float64))
    try:
        yield
    finally:
        _DTYPE.pop()


def in_verification_mode() -> bool:
    return default_dtype() == np.float64


class Tensor:
    """Dense array plus an optional gradient accumulator."""

    __slots__ = ("data", "grad", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        arr = np.asarray(data)
        self.data = np.ascontiguousarray(arr, dtype=dtype or default_dtype())
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}{tag}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, _lift(other, self))

    def __radd__(self, other):
        return add(_lift(other, self), self)

    def __sub__(self, other):
        return sub(self, _lift(other, self))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, _lift(other, self))

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return scale(self, -1.0)


def _lift(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.data.dtype), dtype=like.data.dtype)


@dataclass
class OpRecord:
    op_id: int
    kind: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    backward: Callable[[np.ndarray], tuple[np.ndarray | None, ...]]


@dataclass
class Graph:
    """Tape of op records; use as a context manager to record ops."""

    records: list[OpRecord] = field(default_factory=list)
    n_ops: int = 0
    _done: bool = False

    def __enter__(self) -> "Graph":
        _GRAPHS.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _GRAPHS.remove(self)

    def _record(self, kind, inputs, output, backward) -> None:
        self.records.append(OpRecord(self.n_ops, kind, tuple(inputs), output, backward))

    def backward(self, loss: Tensor) -> None:
        """Populate ``.grad`` on every leaf with ``requires_grad`` reachable from ``loss``."""
        if loss.size != 1:
            raise UsageError(f"backward needs a scalar loss, got shape {loss.shape}")
        if self._done:
            raise UsageError("graph already consumed by a backward pass")
        if not any(r.output is loss for r in reversed(self.records)):
            raise UsageError("backward called before a forward pass recorded the loss "
                             "(or nothing in the loss requires grad)")
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        produced = {id(r.output) for r in self.records}
        for rec in reversed(self.records):
            g = grads.pop(id(rec.output), None)
            if g is None:
                continue
            in_grads = rec.backward(g)
            for inp, ig in zip(rec.inputs, in_grads):
                if ig is None or not inp.requires_grad:
                    continue
                key = id(inp)
                if key in produced:
                    if key in grads:
                        grads[key] = grads[key] + ig
                    else:
                        grads[key] = ig
                else:
                    ig = ig.astype(inp.data.dtype, copy=False)
                    if inp.grad is None:
                        inp.grad = np.array(ig, copy=True)
                    else:
                        inp.grad = inp.grad + ig
        self._done = True
        self.records.clear()


def _active_graph() -> Graph | None:
    return _GRAPHS[-1] if _GRAPHS else None


def _finish(kind: str, inputs: Iterable[Tensor], out_data: np.ndarray, backward) -> Tensor:
    g = _active_graph()
    inputs = tuple(inputs)
    op_id = -1
    if g is not None:
        g.n_ops += 1
        op_id = g.n_ops
    if out_data.dtype.kind == "f" and not np.isfinite(out_data).all():
        raise NumericError(kind, op_id)
    needs = any(t.requires_grad for t in inputs)
    out = Tensor.__new__(Tensor)
    out.data = out_data
    out.grad = None
    out.requires_grad = needs and g is not None
    out.name = None
    if out.requires_grad:
        g._record(kind, inputs, out, backward)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _bshape(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(op, a.shape, b.shape) from None


# ---------------------------------------------------------------- elementwise


def add(a: Tensor, b: Tensor) -> Tensor:
    _bshape("add", a, b)
    sa, sb = a.shape, b.shape
    return _finish("add", (a, b), a.data + b.data,
                   lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _bshape("sub", a, b)
    sa, sb = a.shape, b.shape
    return _finish("sub", (a, b), a.data - b.data,
                   lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _bshape("mul", a, b)
    ad, bd = a.data, b.data
    return _finish("mul", (a, b), ad * bd,
                   lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


def scale(a: Tensor, c: float) -> Tensor:
    c = a.data.dtype.type(c)
    return _finish("scale", (a,), a.data * c, lambda g: (g * c,))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _finish("relu", (a,), np.where(mask, a.data, a.data.dtype.type(0)),
                   lambda g: (g * mask,))


def dropout(a: Tensor, rate: float, rng: np.random.Generator | None) -> Tensor:
    if rate <= 0.0 or rng is None or in_verification_mode():
        return a
    keep = (rng.random(a.shape) >= rate).astype(a.data.dtype) / a.data.dtype.type(1.0 - rate)
    return _finish("dropout", (a,), a.data * keep, lambda g: (g * keep,))


# ---------------------------------------------------------------- linear algebra


def _swap(x: np.ndarray) -> np.ndarray:
    return np.swapaxes(x, -1, -2)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError("matmul", a.shape, b.shape)
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ShapeError("matmul", a.shape, b.shape, detail="batch dims") from None
    ad, bd = a.data, b.data

    def back(g):
        ga = _unbroadcast(g @ _swap(bd), ad.shape) if a.requires_grad else None
        gb = _unbroadcast(_swap(ad) @ g, bd.shape) if b.requires_grad else None
        return ga, gb

    return _finish("matmul", (a, b), ad @ bd, back)


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    old = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError("reshape", old, tuple(shape)) from None
    return _finish("reshape", (a,), out, lambda g: (g.reshape(old),))


def transpose(a: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    if sorted(axes) != list(range(a.ndim)):
        raise ShapeError("transpose", a.shape, detail=f"axes {axes}")
    inv = tuple(np.argsort(axes))
    return _finish("transpose", (a,), np.ascontiguousarray(a.data.transpose(axes)),
                   lambda g: (g.transpose(inv),))


def tensor_sum(a: Tensor) -> Tensor:
    shape = a.shape
    return _finish("sum", (a,), np.asarray(a.data.sum(), dtype=a.data.dtype).reshape(()),
                   lambda g: (np.broadcast_to(g, shape).copy(),))


# ---------------------------------------------------------------- rows


def concat_rows(a: Tensor, b: Tensor) -> Tensor:
    """Concatenate along the row axis (-2); ``a`` may omit leading batch dims."""
    if a.shape[-1] != b.shape[-1] or a.ndim > b.ndim or a.ndim < 2:
        raise ShapeError("concat_rows", a.shape, b.shape)
    ad = a.data
    if a.ndim < b.ndim:
        if a.shape[:-2] != b.shape[b.ndim - a.ndim:-2]:
            raise ShapeError("concat_rows", a.shape, b.shape)
        ad = np.broadcast_to(ad, b.shape[:-2] + a.shape[-2:])
    elif a.shape[:-2] != b.shape[:-2]:
        raise ShapeError("concat_rows", a.shape, b.shape)
    la = a.shape[-2]
    sa = a.shape

    def back(g):
        return _unbroadcast(g[..., :la, :], sa), g[..., la:, :]

    return _finish("concat_rows", (a, b), np.concatenate([ad, b.data], axis=-2), back)


def slice_axis(a: Tensor, axis: int, start: int, stop: int) -> Tensor:
    axis = axis % a.ndim
    n = a.shape[axis]
    if not 0 <= start <= stop <= n:
        raise ShapeError("slice", a.shape, detail=f"[{start}:{stop}] on axis {axis}")
    idx = [slice(None)] * a.ndim
    idx[axis] = slice(start, stop)
    idx = tuple(idx)
    shape, dtype = a.shape, a.data.dtype

    def back(g):
        full = np.zeros(shape, dtype=dtype)
        full[idx] = g
        return (full,)

    return _finish("slice", (a,), np.ascontiguousarray(a.data[idx]), back)


def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    ids = np.asarray(ids)
    if table.ndim != 2:
        raise ShapeError("embedding", table.shape, ids.shape)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ShapeError("embedding", table.shape, ids.shape, detail="id out of range")
    shape, dtype = table.shape, table.data.dtype

    def back(g):
        full = np.zeros(shape, dtype=dtype)
        np.add.at(full, ids.reshape(-1), g.reshape(-1, shape[1]))
        return (full,)

    return _finish("embedding", (table,), table.data[ids], back)


# ---------------------------------------------------------------- normalisers


def softmax(a: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Softmax over the last axis; ``mask`` is an additive bias (0 or large negative)."""
    x = a.data if mask is None else a.data + mask
    x = x - x.max(axis=-1, keepdims=True)
    e = np.exp(x)
    y = e / e.sum(axis=-1, keepdims=True)

    def back(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _finish("softmax", (a,), y, back)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError("layer_norm", x.shape, gamma.shape, beta.shape)
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gd = gamma.data

    def back(g):
        gx = None
        if x.requires_grad:
            gh = g * gd
            gx = inv * (gh - gh.mean(axis=-1, keepdims=True)
                        - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
        gg = (g * xhat).reshape(-1, d).sum(axis=0) if gamma.requires_grad else None
        gb = g.reshape(-1, d).sum(axis=0) if beta.requires_grad else None
        return gx, gg, gb

    return _finish("layer_norm", (x, gamma, beta), xhat * gd + beta.data, back)


def cross_entropy(logits: Tensor, targets: np.ndarray, ignore_index: int | None = 0) -> Tensor:
    """Mean token negative log-likelihood over positions whose target != ``ignore_index``."""
    targets = np.asarray(targets)
    if logits.shape[:-1] != targets.shape:
        raise ShapeError("cross_entropy", logits.shape, targets.shape)
    V = logits.shape[-1]
    flat = logits.data.reshape(-1, V)
    tg = targets.reshape(-1)
    keep = np.ones_like(tg, dtype=bool) if ignore_index is None else tg != ignore_index
    n = int(keep.sum())
    if n == 0:
        raise UsageError("cross_entropy: every target position is padding")
    if tg.min() < 0 or tg.max() >= V:
        raise ShapeError("cross_entropy", logits.shape, targets.shape, detail="target id out of range")
    m = flat.max(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(flat - m).sum(axis=1))
    nll = lse - flat[np.arange(tg.size), tg]
    loss = np.asarray((nll * keep).sum() / n, dtype=flat.dtype).reshape(())
    shape = logits.shape

    def back(g):
        p = np.exp(flat - lse[:, None])
        p[np.arange(tg.size), tg] -= 1.0
        p *= (keep / n)[:, None]
        return ((p * g).reshape(shape).astype(flat.dtype, copy=False),)

    return _finish("cross_entropy", (logits,), loss, back)


# ---------------------------------------------------------------- checking


def grad_check(loss_fn: Callable[[], Tensor], leaf: Tensor, eps: float = 1e-4) -> float:
    """Max relative error between analytic and central-difference gradients of ``leaf``.

    ``loss_fn`` must rebuild the forward pass from scratch on every call.
    """
    if leaf.data.dtype != np.float64:
        raise UsageError("grad_check requires 64-bit tensors (use verification_mode)")
    if not 0.0 < eps <= 1e-2:
        raise UsageError(f"eps must lie in (0, 1e-2], got {eps}")
    prev_flag, prev_grad = leaf.requires_grad, leaf.grad
    leaf.requires_grad, leaf.grad = True, None
    try:
        with Graph() as g:
            loss = loss_fn()
            if loss.size != 1:
                raise UsageError(f"grad_check needs a scalar loss, got shape {loss.shape}")
            if loss.requires_grad:
                g.backward(loss)
        analytic = np.zeros_like(leaf.data) if leaf.grad is None else leaf.grad.copy()
        flat = leaf.data.reshape(-1)
        numeric = np.empty(flat.size)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + eps
            fp = float(loss_fn().data)
            flat[i] = old - eps
            fm = float(loss_fn().data)
            flat[i] = old
            numeric[i] = (fp - fm) / (2.0 * eps)
        a = analytic.reshape(-1)
        denom = np.maximum(np.maximum(np.abs(a), np.abs(numeric)), 1e-8)
        return float(np.max(np.abs(a - numeric) / denom)) if a.size else 0.0
    finally:
        leaf.requires_grad, leaf.grad = prev_flag, prev_grad
