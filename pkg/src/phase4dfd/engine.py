"""Dense tensors with reverse-mode automatic differentiation.

The operator set is exactly what the detection pipeline needs: 2D
cross-correlation, dense layers, pooling reductions, a handful of
elementwise maps, and some shape plumbing. Everything is numpy-backed and
single-threaded; operations record onto an ambient :class:`GradTape` while
one is active, and ``tape.backward(loss)`` replays the records in reverse.

Gradients accumulate into ``Tensor.grad`` (they are not overwritten), so
per-sample backward passes can be summed for mini-batch accumulation.
"""

import numpy as np
from dataclasses import dataclass


def _as_float_array(data, dtype=None):
    arr = np.asarray(data, dtype=dtype)
    if arr.dtype not in (np.float32, np.float64):
        arr = arr.astype(np.float64)
    return arr


def _check_finite(arr, what="tensor"):
    if not np.all(np.isfinite(arr)):
        raise FloatingPointError(f"non-finite values in {what}")


class Tensor:
    """A dense n-d float array with an optional gradient slot.

    ``requires_grad=True`` marks a leaf parameter; outputs of recorded
    operations get it set automatically when any input carries gradients.
    """

    __slots__ = ("data", "requires_grad", "grad", "_tape")

    def __init__(self, data, requires_grad=False, dtype=None):
        self.data = _as_float_array(data, dtype)
        _check_finite(self.data)
        self.requires_grad = requires_grad
        self.grad = None
        self._tape = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else self._not_scalar()

    def _not_scalar(self):
        raise ValueError(f"tensor of shape {self.shape} is not a scalar")

    def zero_grad(self):
        self.grad = None

    def backward(self):
        if self._tape is None:
            raise RuntimeError("tensor was not produced under a GradTape")
        self._tape.backward(self)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def zeros(shape, dtype=np.float32, requires_grad=False):
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=requires_grad)


_TAPE_STACK = []


class GradTape:
    """Execution-ordered record of one forward pass.

    Records are appended as operations execute, so the list is already in
    topological order. A tape supports exactly one backward pass; running
    it again without a fresh forward is an error.
    """

    def __init__(self):
        self._records = []
        self._output_ids = set()
        self._consumed = False

    def __enter__(self):
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _TAPE_STACK.pop()
        assert popped is self
        return False

    def backward(self, loss):
        """Populate ``grad`` on every requires-grad tensor reachable from ``loss``."""
        if self._consumed:
            raise RuntimeError("backward already ran for this tape; record a new forward pass")
        if loss.size != 1:
            raise ValueError(f"loss must be scalar, got shape {loss.shape}")
        if id(loss) not in self._output_ids:
            raise ValueError("loss was not produced by operations recorded on this tape")
        self._consumed = True

        pending = {id(loss): (loss, np.ones_like(loss.data))}
        for rec_out, rec_inputs, rec_backward in reversed(self._records):
            entry = pending.pop(id(rec_out), None)
            if entry is None:
                continue
            g_out = entry[1]
            rec_out.grad = g_out if rec_out.grad is None else rec_out.grad + g_out
            for t, g in zip(rec_inputs, rec_backward(g_out)):
                if g is None or not t.requires_grad:
                    continue
                key = id(t)
                if key in pending:
                    pending[key] = (t, pending[key][1] + g)
                else:
                    pending[key] = (t, g)
        for t, g in pending.values():
            t.grad = g if t.grad is None else t.grad + g


def _active_tape():
    return _TAPE_STACK[-1] if _TAPE_STACK else None


def custom_op(data, inputs, backward_fn, what="op"):
    """Wrap a forward result and register ``backward_fn`` on the active tape.

    ``backward_fn(grad_out)`` must return one gradient array (or None) per
    input, aligned with ``inputs``.
    """
    arr = np.ascontiguousarray(data)
    _check_finite(arr, what)
    requires = any(t.requires_grad for t in inputs)
    tape = _active_tape()
    out = Tensor(arr, requires_grad=requires and tape is not None)
    if tape is not None and requires:
        tape._records.append((out, tuple(inputs), backward_fn))
        tape._output_ids.add(id(out))
        out._tape = tape
    return out


# ---------------------------------------------------------------------------
# convolution / dense


def conv2d(x, w, b, stride=1, padding=0):
    """Cross-correlation of a C_in x H x W input with C_out x C_in x kH x kW weights.

    No kernel flip; bias is per output channel. Output side lengths must be
    positive integers or the call errors out.
    """
    if x.data.ndim != 3 or w.data.ndim != 4 or b.data.ndim != 1:
        raise ValueError("conv2d expects input (C,H,W), weight (O,C,kH,kW), bias (O,)")
    c_out, c_in, kh, kw = w.shape
    if x.shape[0] != c_in or b.shape[0] != c_out:
        raise ValueError(
            f"conv2d shape mismatch: input {x.shape}, weight {w.shape}, bias {b.shape}")
    if kh < 1 or kw < 1 or stride < 1 or padding < 0:
        raise ValueError("conv2d requires kH,kW>=1, stride>=1, padding>=0")
    h, wd = x.shape[1], x.shape[2]
    hp, wp = h + 2 * padding, wd + 2 * padding
    if hp < kh or wp < kw or (hp - kh) % stride or (wp - kw) % stride:
        raise ValueError(
            f"non-integer output size for input {h}x{wd}, kernel {kh}x{kw}, "
            f"stride {stride}, padding {padding}")
    ho, wo = (hp - kh) // stride + 1, (wp - kw) // stride + 1

    xp = np.pad(x.data, ((0, 0), (padding, padding), (padding, padding))) if padding else x.data
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(1, 2))
    win = win[:, ::stride, ::stride]                        # (C, ho, wo, kh, kw)
    cols = np.ascontiguousarray(win.transpose(1, 2, 0, 3, 4)).reshape(ho * wo, c_in * kh * kw)
    wmat = w.data.reshape(c_out, -1)
    out = (cols @ wmat.T).T.reshape(c_out, ho, wo) + b.data[:, None, None]

    def bwd(g):
        gmat = g.reshape(c_out, -1)
        gb = gmat.sum(axis=1)
        gw = (gmat @ cols).reshape(w.shape)
        gcols = gmat.T @ wmat                               # (ho*wo, C*kh*kw)
        gc = gcols.reshape(ho, wo, c_in, kh, kw).transpose(2, 3, 4, 0, 1)
        gxp = np.zeros((c_in, hp, wp), dtype=g.dtype)
        for i in range(kh):
            for j in range(kw):
                gxp[:, i:i + stride * ho:stride, j:j + stride * wo:stride] += gc[:, i, j]
        gx = gxp[:, padding:padding + h, padding:padding + wd] if padding else gxp
        return gx, gw, gb

    return custom_op(out, (x, w, b), bwd, "conv2d")


def linear(x, w, b):
    """w @ x + b for a 1-D input."""
    if x.data.ndim != 1 or w.data.ndim != 2 or b.data.ndim != 1:
        raise ValueError("linear expects input (N,), weight (M,N), bias (M,)")
    m, n = w.shape
    if x.shape[0] != n or b.shape[0] != m:
        raise ValueError(f"linear shape mismatch: input {x.shape}, weight {w.shape}, bias {b.shape}")
    out = w.data @ x.data + b.data

    def bwd(g):
        return w.data.T @ g, np.outer(g, x.data), g

    return custom_op(out, (x, w, b), bwd, "linear")


# ---------------------------------------------------------------------------
# pooling

POOL_KINDS = ("global-avg", "channel-avg", "channel-max", "spatial-avg", "spatial-max")


def pool(x, kind):
    """Reductions over a C x H x W tensor.

    global-avg -> (C,); channel-avg/max -> (C,1,1); spatial-avg/max -> (1,H,W).
    Max pools route the gradient to the first (row-major) argmax on ties.
    """
    if x.data.ndim != 3 or x.data.size == 0:
        raise ValueError("pool expects a non-empty (C,H,W) tensor")
    d = x.data
    c, h, w = d.shape

    if kind == "global-avg":
        out = d.mean(axis=(1, 2))

        def bwd(g):
            return (np.broadcast_to(g[:, None, None] / (h * w), d.shape).copy(),)

    elif kind == "channel-avg":
        out = d.mean(axis=(1, 2), keepdims=True)

        def bwd(g):
            return (np.broadcast_to(g / (h * w), d.shape).copy(),)

    elif kind == "channel-max":
        flat = d.reshape(c, -1)
        idx = flat.argmax(axis=1)
        out = flat[np.arange(c), idx].reshape(c, 1, 1)

        def bwd(g):
            gx = np.zeros_like(flat)
            gx[np.arange(c), idx] = g.reshape(c)
            return (gx.reshape(d.shape),)

    elif kind == "spatial-avg":
        out = d.mean(axis=0, keepdims=True)

        def bwd(g):
            return (np.broadcast_to(g / c, d.shape).copy(),)

    elif kind == "spatial-max":
        idx = d.argmax(axis=0)
        out = np.take_along_axis(d, idx[None], axis=0)

        def bwd(g):
            gx = np.zeros_like(d)
            np.put_along_axis(gx, idx[None], g, axis=0)
            return (gx,)

    else:
        raise ValueError(f"unknown pool kind {kind!r}")

    return custom_op(out, (x,), bwd, f"pool[{kind}]")


def avg_pool2d(x, k):
    """Non-overlapping k x k average downsampling of a (C,H,W) tensor."""
    if x.data.ndim != 3:
        raise ValueError("avg_pool2d expects a (C,H,W) tensor")
    c, h, w = x.shape
    if k < 1 or h % k or w % k:
        raise ValueError(f"avg_pool2d: {h}x{w} not divisible by {k}")
    out = x.data.reshape(c, h // k, k, w // k, k).mean(axis=(2, 4))

    def bwd(g):
        return (np.repeat(np.repeat(g, k, axis=1), k, axis=2) / (k * k),)

    return custom_op(out, (x,), bwd, "avg_pool2d")


# ---------------------------------------------------------------------------
# elementwise

def _stable_sigmoid(z):
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def relu(x):
    out = np.maximum(x.data, 0)

    def bwd(g):
        return (g * (x.data > 0),)

    return custom_op(out, (x,), bwd, "relu")


def sigmoid(x):
    s = _stable_sigmoid(x.data)

    def bwd(g):
        return (g * s * (1.0 - s),)

    return custom_op(s, (x,), bwd, "sigmoid")


def _require_same_shape(a, b, op):
    if a.shape != b.shape:
        raise ValueError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def add(a, b):
    _require_same_shape(a, b, "add")
    return custom_op(a.data + b.data, (a, b), lambda g: (g, g), "add")


def mul(a, b):
    _require_same_shape(a, b, "mul")

    def bwd(g):
        return g * b.data, g * a.data

    return custom_op(a.data * b.data, (a, b), bwd, "mul")


def scale(x, c):
    c = float(c)
    return custom_op(x.data * c, (x,), lambda g: (g * c,), "scale")


def log1p(x):
    if np.any(x.data <= -1.0):
        raise FloatingPointError("log1p domain: values must be > -1")
    out = np.log1p(x.data)

    def bwd(g):
        return (g / (1.0 + x.data),)

    return custom_op(out, (x,), bwd, "log1p")


# ---------------------------------------------------------------------------
# shape plumbing

def concat_channels(tensors):
    """Concatenate (C_i,H,W) tensors along the channel axis."""
    if not tensors:
        raise ValueError("concat_channels: empty input")
    hw = tensors[0].shape[1:]
    for t in tensors:
        if t.data.ndim != 3 or t.shape[1:] != hw:
            raise ValueError("concat_channels: incompatible shapes")
    out = np.concatenate([t.data for t in tensors], axis=0)
    splits = np.cumsum([t.shape[0] for t in tensors])[:-1]

    def bwd(g):
        return tuple(np.split(g, splits, axis=0))

    return custom_op(out, tuple(tensors), bwd, "concat")


def slice_channels(x, start, stop):
    if x.data.ndim != 3 or not (0 <= start < stop <= x.shape[0]):
        raise ValueError(f"slice_channels: bad range [{start},{stop}) for shape {x.shape}")
    out = x.data[start:stop].copy()

    def bwd(g):
        gx = np.zeros_like(x.data)
        gx[start:stop] = g
        return (gx,)

    return custom_op(out, (x,), bwd, "slice")


def expand(x, shape):
    """Broadcast singleton axes up to ``shape``; gradient sums them back."""
    try:
        out = np.broadcast_to(x.data, shape)
    except ValueError as e:
        raise ValueError(f"expand: cannot broadcast {x.shape} to {shape}") from e
    if x.data.ndim != len(shape):
        raise ValueError("expand: rank must match target shape")
    axes = tuple(i for i in range(len(shape)) if x.shape[i] == 1 and shape[i] != 1)

    def bwd(g):
        return (g.sum(axis=axes, keepdims=True) if axes else g,)

    return custom_op(out.copy(), (x,), bwd, "expand")


def reshape(x, shape):
    out = x.data.reshape(shape)

    def bwd(g):
        return (g.reshape(x.shape),)

    return custom_op(out.copy(), (x,), bwd, "reshape")


def tsum(x):
    out = np.asarray(x.data.sum(), dtype=x.dtype)

    def bwd(g):
        return (np.full_like(x.data, g),)

    return custom_op(out, (x,), bwd, "sum")


def tmean(x):
    n = x.size
    out = np.asarray(x.data.mean(), dtype=x.dtype)

    def bwd(g):
        return (np.full_like(x.data, g / n),)

    return custom_op(out, (x,), bwd, "mean")


# ---------------------------------------------------------------------------
# gradient checking

@dataclass
class GradCheckReport:
    max_rel_err: float
    passed: bool


def grad_check(f, point, eps=1e-4, tol=1e-3, sample=None):
    """Compare the analytic gradient of scalar ``f`` at ``point`` to central differences.

    rel_err = |a - n| / max(|a|, |n|, 1e-8), pass iff max rel_err < tol.
    ``sample`` restricts the numeric differencing to the given flat indices
    (the analytic gradient is always full); None checks every element.
    All arithmetic runs in double precision.
    """
    p = Tensor(np.array(point.data, dtype=np.float64), requires_grad=True)
    with GradTape() as tape:
        out = f(p)
    if out.size != 1:
        raise ValueError("grad_check requires a scalar-valued function")
    tape.backward(out)
    analytic = np.zeros(p.size) if p.grad is None else p.grad.reshape(-1).copy()

    flat = p.data.reshape(-1)
    indices = range(flat.size) if sample is None else sample
    a_sel, n_sel = [], []
    for i in indices:
        orig = flat[i]
        flat[i] = orig + eps
        fp = float(f(p).data)
        flat[i] = orig - eps
        fm = float(f(p).data)
        flat[i] = orig
        n_sel.append((fp - fm) / (2.0 * eps))
        a_sel.append(analytic[i])
    a_sel = np.asarray(a_sel)
    n_sel = np.asarray(n_sel)
    if not (np.all(np.isfinite(a_sel)) and np.all(np.isfinite(n_sel))):
        raise FloatingPointError("non-finite values during gradient check")
    rel = np.abs(a_sel - n_sel) / np.maximum(np.maximum(np.abs(a_sel), np.abs(n_sel)), 1e-8)
    worst = float(rel.max()) if rel.size else 0.0
    return GradCheckReport(max_rel_err=worst, passed=bool(worst < tol))
