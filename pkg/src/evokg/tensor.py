"""Dense float64 tensors with tape-based reverse-mode differentiation.

Every quantity the model computes is assembled from the operations in this
module.  Each operation validates operand shapes, evaluates its forward
value with numpy, and, while a :class:`Tape` is active on the current
thread, records a pull-back closure that routes the output gradient to the
inputs.  :func:`backward` replays the tape once in reverse (the append-only
node list is already topologically ordered) and accumulates gradients into
``Tensor.grad``.

Stochastic operations (``rrelu`` in train mode, ``dropout``) draw from an
explicit ``numpy.random.Generator`` so that training runs are reproducible
and evaluation is deterministic.
"""

from __future__ import annotations

import threading

import numpy as np

# Shared postfix-slope bounds for the randomized leaky rectifier.
RRELU_LOWER = 0.125
RRELU_UPPER = 1.0 / 3.0

# Rows whose L2 norm falls below this are passed through normalize_rows
# unchanged instead of being divided by ~0.
ZERO_ROW_EPS = 1e-12

#: Counters for conditions that are tolerated but worth watching.
diagnostics = {"zero_norm_rows": 0}


class ShapeError(ValueError):
    """Operand shapes do not conform for the requested operation."""


class GradientError(RuntimeError):
    """Tape misuse: non-scalar loss, double backward, or missing gradients."""


class Tensor:
    """A dense float64 array plus an optional accumulated gradient."""

    __slots__ = ("data", "grad", "requires_grad", "is_leaf")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim > 0 and not arr.flags["C_CONTIGUOUS"]:
            arr = np.ascontiguousarray(arr)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.is_leaf = True

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

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
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(value) -> Tensor:
    """Wrap plain scalars/arrays as constant tensors; pass tensors through."""
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=np.float64))


_tls = threading.local()


def _tape_stack():
    stack = getattr(_tls, "tapes", None)
    if stack is None:
        stack = _tls.tapes = []
    return stack


def active_tape():
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tape:
    """Records one forward pass; consumed by a single backward call.

    Use as a context manager::

        with Tape() as tape:
            loss = ...
        grads = backward(loss, tape)

    Nodes are appended in execution order, so every node's inputs precede
    it; reverse iteration is a valid reverse-mode schedule.
    """

    __slots__ = ("nodes", "consumed")

    def __init__(self):
        self.nodes = []  # (output, inputs, pull) triples
        self.consumed = False

    def __enter__(self):
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        stack = _tape_stack()
        if not stack or stack[-1] is not self:
            raise GradientError("tape context exited out of order")
        stack.pop()
        return False

    def __len__(self):
        return len(self.nodes)


def _emit(out: Tensor, inputs, pull):
    out.is_leaf = False
    tape = active_tape()
    if tape is not None and not tape.consumed and out.requires_grad:
        tape.nodes.append((out, inputs, pull))


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    """Sum a broadcast gradient back down to the operand's shape."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _accum(t: Tensor, grad: np.ndarray):
    if not t.requires_grad:
        return
    grad = _unbroadcast(np.asarray(grad, dtype=np.float64), t.data.shape)
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += grad


def backward(loss: Tensor, tape: Tape) -> dict:
    """Run reverse-mode differentiation from a scalar loss over ``tape``.

    Populates ``grad`` on every requires-grad tensor reachable from the
    loss and returns a map of leaf tensors to their gradients.  The tape
    is cleared and cannot be replayed.
    """
    if loss.data.size != 1:
        raise GradientError(f"backward needs a scalar loss, got shape {loss.shape}")
    if tape.consumed:
        raise GradientError("backward already called on this tape")
    tape.consumed = True

    leaves = {}
    loss.grad = np.ones_like(loss.data)
    for out, inputs, pull in reversed(tape.nodes):
        if out.grad is None:
            continue
        pull(out.grad)
        for t in inputs:
            if t.requires_grad and t.is_leaf:
                leaves[id(t)] = t
    tape.nodes.clear()
    return {t: t.grad for t in leaves.values() if t.grad is not None}


# ---------------------------------------------------------------------------
# arithmetic


def _check_broadcast(a: Tensor, b: Tensor, opname: str):
    try:
        np.broadcast_shapes(a.data.shape, b.data.shape)
    except ValueError:
        raise ShapeError(
            f"{opname}: shapes {a.data.shape} and {b.data.shape} do not broadcast"
        ) from None


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "add")
    out = Tensor(a.data + b.data, a.requires_grad or b.requires_grad)

    def pull(g):
        _accum(a, g)
        _accum(b, g)

    _emit(out, (a, b), pull)
    return out


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "sub")
    out = Tensor(a.data - b.data, a.requires_grad or b.requires_grad)

    def pull(g):
        _accum(a, g)
        _accum(b, -g)

    _emit(out, (a, b), pull)
    return out


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "mul")
    out = Tensor(a.data * b.data, a.requires_grad or b.requires_grad)

    def pull(g):
        _accum(a, g * b.data)
        _accum(b, g * a.data)

    _emit(out, (a, b), pull)
    return out


def neg(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(-a.data, a.requires_grad)

    def pull(g):
        _accum(a, -g)

    _emit(out, (a,), pull)
    return out


def matmul(a, b) -> Tensor:
    """Matrix product for 1-D/2-D operands with numpy ``dot`` semantics."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim not in (1, 2) or b.ndim not in (1, 2):
        raise ShapeError(f"matmul: only 1-D/2-D operands, got {a.shape} and {b.shape}")
    a2 = a.data[None, :] if a.ndim == 1 else a.data
    b2 = b.data[:, None] if b.ndim == 1 else b.data
    if a2.shape[1] != b2.shape[0]:
        raise ShapeError(f"matmul: inner dimensions disagree for {a.shape} and {b.shape}")
    out2 = a2 @ b2
    if a.ndim == 1:
        out2 = out2[0]
    if b.ndim == 1:
        out2 = out2[..., 0]
    out = Tensor(out2, a.requires_grad or b.requires_grad)

    def pull(g):
        g2 = np.asarray(g, dtype=np.float64)
        if b.ndim == 1:
            g2 = g2[..., None]
        if a.ndim == 1:
            g2 = g2[None, :]
        if a.requires_grad:
            ga = g2 @ b2.T
            _accum(a, ga[0] if a.ndim == 1 else ga)
        if b.requires_grad:
            gb = a2.T @ g2
            _accum(b, gb[:, 0] if b.ndim == 1 else gb)

    _emit(out, (a, b), pull)
    return out


def matmul_rowwise(a, b) -> Tensor:
    """2-D matrix product whose output rows are bitwise independent of the
    batch size.

    BLAS gemm picks different blocking for different row counts, so row i of
    A @ B can differ in the last bit from a[i:i+1] @ B.  Scoring paths that
    must produce identical bits whether queries are batched or scored
    one-by-one use this einsum-based product instead; the backward pass uses
    regular gemm.
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim not in (1, 2) or b.ndim != 2:
        raise ShapeError(f"matmul_rowwise: need (rows, k) x (k, n), got {a.shape} and {b.shape}")
    a2 = a.data[None, :] if a.ndim == 1 else a.data
    if a2.shape[1] != b.data.shape[0]:
        raise ShapeError(
            f"matmul_rowwise: inner dimensions disagree for {a.shape} and {b.shape}"
        )
    out2 = np.einsum("ij,jk->ik", a2, b.data)
    out = Tensor(out2[0] if a.ndim == 1 else out2,
                 a.requires_grad or b.requires_grad)

    def pull(g):
        g2 = g[None, :] if a.ndim == 1 else g
        if a.requires_grad:
            ga = g2 @ b.data.T
            _accum(a, ga[0] if a.ndim == 1 else ga)
        _accum(b, a2.T @ g2)

    _emit(out, (a, b), pull)
    return out


def transpose(a) -> Tensor:
    a = as_tensor(a)
    if a.ndim != 2:
        raise ShapeError(f"transpose: need a 2-D tensor, got {a.shape}")
    out = Tensor(a.data.T, a.requires_grad)

    def pull(g):
        _accum(a, g.T)

    _emit(out, (a,), pull)
    return out


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    out_data = a.data.reshape(shape)
    out = Tensor(out_data, a.requires_grad)

    def pull(g):
        _accum(a, g.reshape(a.data.shape))

    _emit(out, (a,), pull)
    return out


# ---------------------------------------------------------------------------
# nonlinearities and regularizers


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(over="ignore"):
        s = 1.0 / (1.0 + np.exp(-a.data))
    out = Tensor(s, a.requires_grad)

    def pull(g):
        _accum(a, g * s * (1.0 - s))

    _emit(out, (a,), pull)
    return out


def tanh(a) -> Tensor:
    a = as_tensor(a)
    y = np.tanh(a.data)
    out = Tensor(y, a.requires_grad)

    def pull(g):
        _accum(a, g * (1.0 - y * y))

    _emit(out, (a,), pull)
    return out


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    out = Tensor(np.where(mask, a.data, 0.0), a.requires_grad)

    def pull(g):
        _accum(a, g * mask)

    _emit(out, (a,), pull)
    return out


def rrelu(a, lower: float = RRELU_LOWER, upper: float = RRELU_UPPER,
          mode: str = "eval", rng=None) -> Tensor:
    """Randomized leaky rectifier.

    Train mode samples one slope uniformly from [lower, upper] per negative
    element; eval mode applies the deterministic mean slope (lower+upper)/2.
    """
    a = as_tensor(a)
    if not (0.0 < lower <= upper < 1.0):
        raise ValueError(f"rrelu: invalid slope bounds [{lower}, {upper}]")
    _check_mode(mode)
    if mode == "train":
        if rng is None:
            raise ValueError("rrelu: train mode needs an rng")
        slopes = rng.uniform(lower, upper, size=a.data.shape)
    else:
        slopes = np.full(a.data.shape, (lower + upper) / 2.0)
    factor = np.where(a.data >= 0, 1.0, slopes)
    out = Tensor(a.data * factor, a.requires_grad)

    def pull(g):
        _accum(a, g * factor)

    _emit(out, (a,), pull)
    return out


def dropout(a, p: float, mode: str = "eval", rng=None) -> Tensor:
    """Inverted dropout: train mode zeroes with probability p and rescales
    survivors by 1/(1-p); eval mode is the identity."""
    a = as_tensor(a)
    if not (0.0 <= p < 1.0):
        raise ValueError(f"dropout: p must be in [0, 1), got {p}")
    _check_mode(mode)
    if mode == "eval" or p == 0.0:
        return a
    if rng is None:
        raise ValueError("dropout: train mode needs an rng")
    keep = (rng.random(a.data.shape) >= p) / (1.0 - p)
    out = Tensor(a.data * keep, a.requires_grad)

    def pull(g):
        _accum(a, g * keep)

    _emit(out, (a,), pull)
    return out


def _check_mode(mode: str):
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")


# ---------------------------------------------------------------------------
# reductions, selections, reshuffles


def sum_all(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(a.data.sum(), a.requires_grad)

    def pull(g):
        _accum(a, np.broadcast_to(g, a.data.shape))

    _emit(out, (a,), pull)
    return out


def rowsum(a, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    if a.ndim != 2:
        raise ShapeError(f"rowsum: need a 2-D tensor, got {a.shape}")
    out = Tensor(a.data.sum(axis=1, keepdims=keepdims), a.requires_grad)

    def pull(g):
        g2 = g if keepdims else g[:, None]
        _accum(a, np.broadcast_to(g2, a.data.shape))

    _emit(out, (a,), pull)
    return out


def mean_rows(a) -> Tensor:
    """Mean over rows of a 2-D tensor: (n, d) -> (d,)."""
    a = as_tensor(a)
    if a.ndim != 2:
        raise ShapeError(f"mean_rows: need a 2-D tensor, got {a.shape}")
    n = a.data.shape[0]
    out = Tensor(a.data.mean(axis=0), a.requires_grad)

    def pull(g):
        _accum(a, np.broadcast_to(g / n, a.data.shape))

    _emit(out, (a,), pull)
    return out


def log(a) -> Tensor:
    a = as_tensor(a)
    if (a.data <= 0).any():
        raise ValueError("log: non-positive input")
    out = Tensor(np.log(a.data), a.requires_grad)

    def pull(g):
        _accum(a, g / a.data)

    _emit(out, (a,), pull)
    return out


def clip(a, lo: float, hi: float) -> Tensor:
    """Clamp values to [lo, hi]; gradient passes only through unclamped
    entries."""
    a = as_tensor(a)
    mask = (a.data >= lo) & (a.data <= hi)
    out = Tensor(np.clip(a.data, lo, hi), a.requires_grad)

    def pull(g):
        _accum(a, g * mask)

    _emit(out, (a,), pull)
    return out


def concat(a, b, axis: int = 0) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"concat: need 2-D tensors, got {a.shape} and {b.shape}")
    if axis not in (0, 1):
        raise ValueError(f"concat: axis must be 0 or 1, got {axis}")
    if a.data.shape[1 - axis] != b.data.shape[1 - axis]:
        raise ShapeError(f"concat: shapes {a.shape} and {b.shape} disagree off-axis")
    out = Tensor(np.concatenate([a.data, b.data], axis=axis),
                 a.requires_grad or b.requires_grad)
    split = a.data.shape[axis]

    def pull(g):
        if axis == 0:
            _accum(a, g[:split])
            _accum(b, g[split:])
        else:
            _accum(a, g[:, :split])
            _accum(b, g[:, split:])

    _emit(out, (a, b), pull)
    return out


def stack_pair(a, b) -> Tensor:
    """Stack two equal-shape tensors along a new second-to-last axis:
    (d,)+(d,) -> (2, d) and (B, d)+(B, d) -> (B, 2, d)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.data.shape != b.data.shape:
        raise ShapeError(f"stack_pair: shapes {a.shape} and {b.shape} differ")
    out = Tensor(np.stack([a.data, b.data], axis=-2),
                 a.requires_grad or b.requires_grad)

    def pull(g):
        _accum(a, g[..., 0, :])
        _accum(b, g[..., 1, :])

    _emit(out, (a, b), pull)
    return out


def gather_rows(a, indices) -> Tensor:
    """Select rows of a 2-D tensor; backward scatter-adds into the source."""
    a = as_tensor(a)
    if a.ndim != 2:
        raise ShapeError(f"gather_rows: need a 2-D tensor, got {a.shape}")
    idx = np.asarray(indices, dtype=np.intp)
    if idx.size and (idx.min() < 0 or idx.max() >= a.data.shape[0]):
        raise IndexError(
            f"gather_rows: index out of range for {a.data.shape[0]} rows"
        )
    out = Tensor(a.data[idx], a.requires_grad)

    def pull(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            np.add.at(full, idx, g)
            _accum(a, full)

    _emit(out, (a,), pull)
    return out


def segment_sum(a, segment_ids, num_segments: int) -> Tensor:
    """Sum rows of ``a`` into ``num_segments`` buckets given per-row ids."""
    a = as_tensor(a)
    if a.ndim != 2:
        raise ShapeError(f"segment_sum: need a 2-D tensor, got {a.shape}")
    idx = np.asarray(segment_ids, dtype=np.intp)
    if idx.shape != (a.data.shape[0],):
        raise ShapeError(
            f"segment_sum: need one id per row, got {idx.shape} for {a.shape}"
        )
    if idx.size and (idx.min() < 0 or idx.max() >= num_segments):
        raise IndexError(f"segment_sum: segment id out of range [0, {num_segments})")
    out_data = np.zeros((num_segments, a.data.shape[1]))
    np.add.at(out_data, idx, a.data)
    out = Tensor(out_data, a.requires_grad)

    def pull(g):
        _accum(a, g[idx])

    _emit(out, (a,), pull)
    return out


def conv1d(a, kernels, padding: int = 0) -> Tensor:
    """Cross-correlation along the last axis, summed over channels.

    ``a`` is (C, L) or batched (B, C, L); ``kernels`` is (K, C, w).  The
    output length is L + 2*padding - w + 1, one row per kernel.
    """
    a, k = as_tensor(a), as_tensor(kernels)
    if k.ndim != 3:
        raise ShapeError(f"conv1d: kernels must be 3-D (K, C, w), got {k.shape}")
    squeeze = a.ndim == 2
    if a.ndim not in (2, 3):
        raise ShapeError(f"conv1d: input must be (C, L) or (B, C, L), got {a.shape}")
    if padding < 0:
        raise ValueError(f"conv1d: padding must be >= 0, got {padding}")
    xd = a.data[None] if squeeze else a.data
    batch, channels, length = xd.shape
    num_k, k_channels, width = k.data.shape
    if k_channels != channels:
        raise ShapeError(
            f"conv1d: channel mismatch between input {a.shape} and kernels {k.shape}"
        )
    out_len = length + 2 * padding - width + 1
    if out_len < 1:
        raise ShapeError(
            f"conv1d: kernel width {width} exceeds padded input length "
            f"{length + 2 * padding}"
        )
    xp = np.pad(xd, ((0, 0), (0, 0), (padding, padding)))
    windows = np.lib.stride_tricks.sliding_window_view(xp, width, axis=2)
    out_data = np.einsum("bclw,kcw->bkl", windows, k.data, optimize=True)
    out = Tensor(out_data[0] if squeeze else out_data,
                 a.requires_grad or k.requires_grad)

    def pull(g):
        gb = g[None] if squeeze else g
        if k.requires_grad:
            _accum(k, np.einsum("bclw,bkl->kcw", windows, gb, optimize=True))
        if a.requires_grad:
            gxp = np.zeros_like(xp)
            for j in range(width):
                gxp[:, :, j:j + out_len] += np.einsum(
                    "bkl,kc->bcl", gb, k.data[:, :, j], optimize=True
                )
            gx = gxp[:, :, padding:padding + length]
            _accum(a, gx[0] if squeeze else gx)

    _emit(out, (a, k), pull)
    return out


def normalize_rows(a, eps: float = ZERO_ROW_EPS) -> Tensor:
    """Rescale each row of a 2-D tensor to unit L2 norm.

    Rows with norm below ``eps`` are passed through unchanged and counted
    in ``diagnostics['zero_norm_rows']``.
    """
    a = as_tensor(a)
    if a.ndim != 2:
        raise ShapeError(f"normalize_rows: need a 2-D tensor, got {a.shape}")
    norms = np.linalg.norm(a.data, axis=1, keepdims=True)
    safe = norms > eps
    n_zero = int((~safe).sum())
    if n_zero:
        diagnostics["zero_norm_rows"] += n_zero
    scale = np.where(safe, 1.0 / np.where(safe, norms, 1.0), 1.0)
    out_data = a.data * scale
    out = Tensor(out_data, a.requires_grad)

    def pull(g):
        # d(x/|x|)/dx pulled back: (g - y (y.g)) / |x| on normalized rows,
        # identity on passed-through rows.
        dots = (out_data * g).sum(axis=1, keepdims=True)
        ga = np.where(safe, (g - out_data * dots) * scale, g)
        _accum(a, ga)

    _emit(out, (a,), pull)
    return out
