"""Tape-based reverse-mode automatic differentiation over numpy arrays.

Tensors are dense row-major float arrays (float32 for training, float64 for
gradient checking). Operations executed while a :class:`Tape` is active are
recorded and can be differentiated with a single reverse sweep. Without an
active tape the same functions are plain numpy computations, which is how
inference runs.

Ops accept raw numpy arrays (or nested lists) in place of Tensors; such
inputs are treated as constants and receive no gradient.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

__all__ = [
    "DimensionError",
    "TapeError",
    "Tensor",
    "Tape",
    "backward",
    "OP_KINDS",
]


class DimensionError(ValueError):
    """An op received inputs whose shapes are invalid for it."""


class TapeError(RuntimeError):
    """Tape contract violation: non-scalar loss, repeated backward, etc."""


class Tensor:
    """Shaped numeric array participating in reverse-mode differentiation."""

    __slots__ = ("values", "grad", "tape", "node_id")

    def __init__(self, values, dtype=None):
        arr = np.asarray(values, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.values: np.ndarray = arr
        self.grad: np.ndarray | None = None
        self.tape: Tape | None = None
        self.node_id: int | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def ndim(self) -> int:
        return self.values.ndim

    @property
    def dtype(self) -> np.dtype:
        return self.values.dtype

    @property
    def size(self) -> int:
        return self.values.size

    def item(self) -> float:
        if self.values.size != 1:
            raise TapeError(f"item() on non-scalar tensor of shape {self.shape}")
        return float(self.values)

    def numpy(self) -> np.ndarray:
        """Detached copy of the values."""
        return self.values.copy()

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name})"


_TAPE_STACK: list["Tape"] = []


def _active_tape() -> "Tape | None":
    return _TAPE_STACK[-1] if _TAPE_STACK else None


class Tape:
    """Ordered operation record supporting exactly one reverse sweep.

    Use as a context manager; ops executed inside the block are recorded in
    topological order. A second ``backward`` on the same tape is an error
    (double-backward is out of scope by design).
    """

    def __init__(self):
        self._records: list[tuple[str, tuple, Tensor, Callable]] = []
        self._backward_done = False

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> bool:
        _TAPE_STACK.pop()
        return False

    def __len__(self) -> int:
        return len(self._records)

    def _append(self, name: str, inputs: tuple, output: Tensor, bwd: Callable) -> None:
        output.tape = self
        output.node_id = len(self._records)
        self._records.append((name, inputs, output, bwd))

    def backward(self, loss: Tensor) -> None:
        """Populate ``grad`` of every tensor reachable from ``loss``."""
        if self._backward_done:
            raise TapeError("backward already ran on this tape; record a new tape")
        if loss.tape is not self:
            raise TapeError("loss tensor was not produced on this tape")
        if loss.values.size != 1:
            raise TapeError(f"loss must be scalar, got shape {loss.shape}")
        self._backward_done = True
        loss.grad = np.ones_like(loss.values)
        for _name, inputs, output, bwd in reversed(self._records):
            gout = output.grad
            if gout is None:
                continue
            for tensor, gin in zip(inputs, bwd(gout)):
                if gin is None or not isinstance(tensor, Tensor):
                    continue
                if tensor.grad is None:
                    # copy: bwd may hand the same buffer to several inputs
                    tensor.grad = np.array(gin)
                else:
                    tensor.grad += gin


def backward(loss: Tensor) -> None:
    """Reverse sweep through the tape that produced ``loss``."""
    if loss.tape is None:
        raise TapeError("loss was not recorded on any tape")
    loss.tape.backward(loss)


# --------------------------------------------------------------------------
# Ops. Each registers itself in OP_KINDS so the test suite can enumerate
# every differentiable kind and finite-difference it.
# --------------------------------------------------------------------------

OP_KINDS: dict[str, Callable] = {}


def _op(fn: Callable) -> Callable:
    OP_KINDS[fn.__name__] = fn
    return fn


def _vals(x) -> np.ndarray:
    return x.values if isinstance(x, Tensor) else np.asarray(x)


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    # exp overflow for very negative x saturates to inf and yields exactly 0
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(-x))


def _row_reduce(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Undo a (1, m) -> (n, m) row broadcast when accumulating gradients."""
    if g.shape == shape:
        return g
    return g.sum(axis=0, keepdims=True)


def _check_elementwise(name: str, av: np.ndarray, bv: np.ndarray) -> None:
    if av.shape == bv.shape:
        return
    # the only broadcast we allow: a row vector against a matrix
    if av.ndim == 2 and bv.ndim == 2 and av.shape[1] == bv.shape[1] and 1 in (av.shape[0], bv.shape[0]):
        return
    raise DimensionError(f"{name}: incompatible shapes {av.shape} and {bv.shape}")


@_op
def matmul(a, b) -> Tensor:
    av, bv = _vals(a), _vals(b)
    if av.ndim != 2 or bv.ndim != 2 or av.shape[1] != bv.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {av.shape} by {bv.shape}")
    out = Tensor(av @ bv)
    tape = _active_tape()
    if tape is not None:
        def bwd(g):
            return g @ bv.T, av.T @ g
        tape._append("matmul", (a, b), out, bwd)
    return out


@_op
def transpose(a) -> Tensor:
    av = _vals(a)
    if av.ndim != 2:
        raise DimensionError(f"transpose: expected 2-d input, got {av.shape}")
    out = Tensor(av.T.copy())
    tape = _active_tape()
    if tape is not None:
        def bwd(g):
            return (g.T,)
        tape._append("transpose", (a,), out, bwd)
    return out


@_op
def add(a, b) -> Tensor:
    av, bv = _vals(a), _vals(b)
    _check_elementwise("add", av, bv)
    out = Tensor(av + bv)
    tape = _active_tape()
    if tape is not None:
        def bwd(g):
            return _row_reduce(g, av.shape), _row_reduce(g, bv.shape)
        tape._append("add", (a, b), out, bwd)
    return out


@_op
def sub(a, b) -> Tensor:
    av, bv = _vals(a), _vals(b)
    _check_elementwise("sub", av, bv)
    out = Tensor(av - bv)
    tape = _active_tape()
    if tape is not None:
        def bwd(g):
            return _row_reduce(g, av.shape), -_row_reduce(g, bv.shape)
        tape._append("sub", (a, b), out, bwd)
    return out


@_op
def mul(a, b) -> Tensor:
    av, bv = _vals(a), _vals(b)
    _check_elementwise("mul", av, bv)
    out = Tensor(av * bv)
    tape = _active_tape()
    if tape is not None:
        def bwd(g):
            return _row_reduce(g * bv, av.shape), _row_reduce(g * av, bv.shape)
        tape._append("mul", (a, b), out, bwd)
    return out


@_op
def scalar_mul(a, c: float) -> Tensor:
    av = _vals(a)
    c = float(c)
    out = Tensor(av * c)
    tape = _active_tape()
    if tape is not None:
        def bwd(g):
            return (g * c,)
        tape._append("scalar_mul", (a,), out, bwd)
    return out


@_op
def scalar_add(a, c: float) -> Tensor:
    av = _vals(a)
    out = Tensor(av + float(c))
    tape = _active_tape()
    if tape is not None:
        def bwd(g):
            return (g,)
        tape._append("scalar_add", (a,), out, bwd)
    return out


@_op
def concat_cols(parts: Sequence) -> Tensor:
    vals = [_vals(p) for p in parts]
    if not vals:
        raise DimensionError("concat_cols: empty input list")
    rows = vals[0].shape[0]
    if any(v.ndim != 2 or v.shape[0] != rows for v in vals):
        raise DimensionError(
            f"concat_cols: row counts differ: {[v.shape for v in vals]}")
    out = Tensor(np.concatenate(vals, axis=1))
    tape = _active_tape()
    if tape is not None:
        widths = [v.shape[1] for v in vals]

        def bwd(g):
            grads, off = [], 0
            for w in widths:
                grads.append(g[:, off:off + w])
                off += w
            return tuple(grads)
        tape._append("concat_cols", tuple(parts), out, bwd)
    return out


@_op
def concat_rows(parts: Sequence) -> Tensor:
    vals = [_vals(p) for p in parts]
    if not vals:
        raise DimensionError("concat_rows: empty input list")
    cols = vals[0].shape[1]
    if any(v.ndim != 2 or v.shape[1] != cols for v in vals):
        raise DimensionError(
            f"concat_rows: column counts differ: {[v.shape for v in vals]}")
    out = Tensor(np.concatenate(vals, axis=0))
    tape = _active_tape()
    if tape is not None:
        heights = [v.shape[0] for v in vals]

        def bwd(g):
            grads, off = [], 0
            for h in heights:
                grads.append(g[off:off + h])
                off += h
            return tuple(grads)
        tape._append("concat_rows", tuple(parts), out, bwd)
    return out


@_op
def slice_rows(a, start: int, stop: int) -> Tensor:
    av = _vals(a)
    if av.ndim != 2 or not (0 <= start < stop <= av.shape[0]):
        raise DimensionError(f"slice_rows: [{start}:{stop}] invalid for shape {av.shape}")
    out = Tensor(av[start:stop].copy())
    tape = _active_tape()
    if tape is not None:
        def bwd(g):
            z = np.zeros_like(av)
            z[start:stop] = g
            return (z,)
        tape._append("slice_rows", (a,), out, bwd)
    return out


@_op
def slice_cols(a, start: int, stop: int) -> Tensor:
    av = _vals(a)
    if av.ndim != 2 or not (0 <= start < stop <= av.shape[1]):
        raise DimensionError(f"slice_cols: [{start}:{stop}] invalid for shape {av.shape}")
    out = Tensor(av[:, start:stop].copy())
    tape = _active_tape()
    if tape is not None:
        def bwd(g):
            z = np.zeros_like(av)
            z[:, start:stop] = g
            return (z,)
        tape._append("slice_cols", (a,), out, bwd)
    return out


@_op
def gather_rows(a, indices) -> Tensor:
    """Row lookup, also the embedding-lookup primitive (table[i] per id)."""
    av = _vals(a)
    ids = np.asarray(indices, dtype=np.intp)
    if av.ndim != 2 or ids.ndim != 1:
        raise DimensionError(f"gather_rows: table {av.shape}, indices {ids.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= av.shape[0]):
        raise DimensionError(
            f"gather_rows: index out of range for table with {av.shape[0]} rows")
    out = Tensor(av[ids])
    tape = _active_tape()
    if tape is not None:
        def bwd(g):
            z = np.zeros_like(av)
            np.add.at(z, ids, g)
            return (z,)
        tape._append("gather_rows", (a,), out, bwd)
    return out


@_op
def sigmoid(a) -> Tensor:
    av = _vals(a)
    y = _stable_sigmoid(av)
    out = Tensor(y)
    tape = _active_tape()
    if tape is not None:
        def bwd(g):
            return (g * y * (1.0 - y),)
        tape._append("sigmoid", (a,), out, bwd)
    return out


@_op
def tanh(a) -> Tensor:
    av = _vals(a)
    y = np.tanh(av)
    out = Tensor(y)
    tape = _active_tape()
    if tape is not None:
        def bwd(g):
            return (g * (1.0 - y * y),)
        tape._append("tanh", (a,), out, bwd)
    return out


@_op
def relu(a) -> Tensor:
    """Elementwise maximum with zero."""
    av = _vals(a)
    out = Tensor(np.maximum(av, 0))
    tape = _active_tape()
    if tape is not None:
        def bwd(g):
            return (g * (av > 0),)
        tape._append("relu", (a,), out, bwd)
    return out


@_op
def leaky_relu(a, slope: float = 0.2) -> Tensor:
    av = _vals(a)
    out = Tensor(np.where(av > 0, av, av * slope))
    tape = _active_tape()
    if tape is not None:
        def bwd(g):
            return (np.where(av > 0, g, g * slope),)
        tape._append("leaky_relu", (a,), out, bwd)
    return out


@_op
def softmax_rows(a) -> Tensor:
    """Softmax along the last axis."""
    av = _vals(a)
    z = av - av.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)
    out = Tensor(y)
    tape = _active_tape()
    if tape is not None:
        def bwd(g):
            return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)
        tape._append("softmax_rows", (a,), out, bwd)
    return out


@_op
def masked_softmax_rows(a, mask) -> Tensor:
    """Row softmax restricted to entries where ``mask`` is nonzero.

    Rows whose mask is entirely zero come back as all zeros. The mask is a
    constant, not a differentiable input.
    """
    av = _vals(a)
    m = np.asarray(mask, dtype=bool)
    if m.shape != av.shape:
        raise DimensionError(f"masked_softmax_rows: mask {m.shape} vs input {av.shape}")
    z = np.where(m, av, -np.inf)
    rmax = z.max(axis=-1, keepdims=True)
    rmax[np.isneginf(rmax)] = 0.0  # rows with no masked-in entries
    e = np.exp(z - rmax)  # masked-out entries: exp(-inf) = 0 exactly
    s = e.sum(axis=-1, keepdims=True)
    y = e / np.maximum(s, np.finfo(e.dtype).tiny)  # empty rows stay all-zero
    out = Tensor(y)
    tape = _active_tape()
    if tape is not None:
        def bwd(g):
            return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)
        tape._append("masked_softmax_rows", (a,), out, bwd)
    return out


@_op
def log(a) -> Tensor:
    """Natural log; callers clamp away from zero first."""
    av = _vals(a)
    out = Tensor(np.log(av))
    tape = _active_tape()
    if tape is not None:
        def bwd(g):
            return (g / av,)
        tape._append("log", (a,), out, bwd)
    return out


@_op
def clip(a, lo: float, hi: float) -> Tensor:
    """Clamp to [lo, hi]; gradient passes through the interior only."""
    av = _vals(a)
    out = Tensor(np.clip(av, lo, hi))
    tape = _active_tape()
    if tape is not None:
        def bwd(g):
            return (g * ((av >= lo) & (av <= hi)),)
        tape._append("clip", (a,), out, bwd)
    return out


@_op
def sum_all(a) -> Tensor:
    av = _vals(a)
    out = Tensor(av.sum())
    tape = _active_tape()
    if tape is not None:
        def bwd(g):
            return (np.broadcast_to(g, av.shape),)
        tape._append("sum_all", (a,), out, bwd)
    return out


@_op
def mean_all(a) -> Tensor:
    av = _vals(a)
    out = Tensor(av.mean())
    tape = _active_tape()
    if tape is not None:
        def bwd(g):
            return (np.broadcast_to(g, av.shape) / av.size,)
        tape._append("mean_all", (a,), out, bwd)
    return out


@_op
def lstm_step(x, h, c, wx, wh, b) -> Tensor:
    """One LSTM cell step, fused for tape compactness.

    Gate order along the 4H axis is input, forget, cell, output. Returns the
    concatenation [h', c'] of shape (1, 2H); split it with slice_cols.
    """
    xv, hv, cv, wxv, whv, bv = (_vals(t) for t in (x, h, c, wx, wh, b))
    if xv.ndim != 2 or xv.shape[0] != 1:
        raise DimensionError(f"lstm_step: x must be a (1, d) row, got {xv.shape}")
    hid = hv.shape[1]
    if (hv.shape != (1, hid) or cv.shape != (1, hid)
            or wxv.shape != (xv.shape[1], 4 * hid)
            or whv.shape != (hid, 4 * hid) or bv.shape != (1, 4 * hid)):
        raise DimensionError(
            "lstm_step: inconsistent shapes "
            f"x={xv.shape} h={hv.shape} c={cv.shape} wx={wxv.shape} wh={whv.shape} b={bv.shape}")
    z = xv @ wxv + hv @ whv + bv
    gi = _stable_sigmoid(z[:, :hid])
    gf = _stable_sigmoid(z[:, hid:2 * hid])
    gc = np.tanh(z[:, 2 * hid:3 * hid])
    go = _stable_sigmoid(z[:, 3 * hid:])
    c_new = gf * cv + gi * gc
    t_new = np.tanh(c_new)
    h_new = go * t_new
    out = Tensor(np.concatenate([h_new, c_new], axis=1))
    tape = _active_tape()
    if tape is not None:
        def bwd(g):
            dh = g[:, :hid]
            dc = g[:, hid:] + dh * go * (1.0 - t_new * t_new)
            dgo = dh * t_new
            dgf = dc * cv
            dgi = dc * gc
            dgc = dc * gi
            dz = np.concatenate([
                dgi * gi * (1.0 - gi),
                dgf * gf * (1.0 - gf),
                dgc * (1.0 - gc * gc),
                dgo * go * (1.0 - go),
            ], axis=1)
            return (dz @ wxv.T, dz @ whv.T, dc * gf, xv.T @ dz, hv.T @ dz, dz)
        tape._append("lstm_step", (x, h, c, wx, wh, b), out, bwd)
    return out
