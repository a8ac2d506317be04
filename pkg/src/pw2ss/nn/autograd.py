"""Dense float64 tensors with a tape-based reverse-mode gradient.

Operations record themselves on the innermost active :class:`Tape` when any
input requires a gradient.  Outside a tape everything runs as plain numpy,
which is what inference and finite-difference checks use.
"""

from __future__ import annotations

import math
import threading

import numpy as np
from scipy.special import erf

from ..errors import NonFiniteValue, NotScalarLoss, ShapeMismatch

_local = threading.local()


def _tape_stack():
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = _local.stack = []
    return stack


def current_tape():
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(self.data) if requires_grad else None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else self.data.item()

    def numpy(self):
        return self.data

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division by a Tensor is not supported")
        return mul(self, 1.0 / other)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


class Parameter(Tensor):
    """A trainable leaf tensor; ``grad`` accumulates across backward calls."""

    __slots__ = ()

    def __init__(self, data, name=None):
        super().__init__(data, requires_grad=True, name=name)

    def zero_grad(self):
        self.grad[...] = 0.0

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.shape})"


class Tape:
    """Ordered record of executed operations.

    Use as a context manager; :meth:`backward` replays the record in reverse.
    """

    def __init__(self):
        self.records = []

    def __enter__(self):
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc):
        stack = _tape_stack()
        if stack and stack[-1] is self:
            stack.pop()
        return False

    def __len__(self):
        return len(self.records)

    def backward(self, loss):
        if not isinstance(loss, Tensor) or loss.data.size != 1:
            shape = getattr(loss, "shape", None)
            raise NotScalarLoss(f"loss must be a scalar tensor, got shape {shape}")
        if not loss.requires_grad:
            return
        if loss.grad is not None:
            # A bare leaf used as the loss.
            loss.grad += 1.0
            return
        grads = {id(loss): np.ones_like(loss.data)}
        for out, parents, fn in reversed(self.records):
            g = grads.pop(id(out), None)
            if g is None:
                continue
            for parent, pg in zip(parents, fn(g)):
                if pg is None or not isinstance(parent, Tensor) or not parent.requires_grad:
                    continue
                if parent.grad is not None:
                    parent.grad += pg
                else:
                    key = id(parent)
                    if key in grads:
                        grads[key] = grads[key] + pg
                    else:
                        grads[key] = pg


def backward(tape, loss):
    tape.backward(loss)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _data(x):
    return x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


def _needs(x):
    return isinstance(x, Tensor) and x.requires_grad


def _result(data, parents, backward_fn, what):
    data = np.asarray(data, dtype=np.float64)
    if not np.isfinite(data).all():
        raise NonFiniteValue(f"{what} produced non-finite values")
    tape = current_tape()
    out = Tensor.__new__(Tensor)
    out.data = data
    out.name = None
    out.grad = None
    out.requires_grad = tape is not None and any(_needs(p) for p in parents)
    if out.requires_grad:
        tape.records.append((out, parents, backward_fn))
    return out


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _broadcast_shape(a, b, what):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeMismatch(f"{what}: incompatible shapes {a.shape} and {b.shape}") from None


def add(a, b):
    ad, bd = _data(a), _data(b)
    _broadcast_shape(ad, bd, "add")

    def bw(g):
        return (_unbroadcast(g, ad.shape) if _needs(a) else None,
                _unbroadcast(g, bd.shape) if _needs(b) else None)

    return _result(ad + bd, (a, b), bw, "add")


def sub(a, b):
    ad, bd = _data(a), _data(b)
    _broadcast_shape(ad, bd, "sub")

    def bw(g):
        return (_unbroadcast(g, ad.shape) if _needs(a) else None,
                _unbroadcast(-g, bd.shape) if _needs(b) else None)

    return _result(ad - bd, (a, b), bw, "sub")


def mul(a, b):
    ad, bd = _data(a), _data(b)
    _broadcast_shape(ad, bd, "mul")

    def bw(g):
        return (_unbroadcast(g * bd, ad.shape) if _needs(a) else None,
                _unbroadcast(g * ad, bd.shape) if _needs(b) else None)

    return _result(ad * bd, (a, b), bw, "mul")


def matmul(a, b):
    ad, bd = _data(a), _data(b)
    if ad.ndim < 1 or bd.ndim < 2 or ad.shape[-1] != bd.shape[-2]:
        raise ShapeMismatch(f"matmul: incompatible shapes {ad.shape} and {bd.shape}")
    if ad.ndim == 1:
        raise ShapeMismatch(f"matmul: left operand must be at least 2-D, got {ad.shape}")
    try:
        out = np.matmul(ad, bd)
    except ValueError:
        raise ShapeMismatch(f"matmul: incompatible shapes {ad.shape} and {bd.shape}") from None

    def bw(g):
        ga = gb = None
        if _needs(a):
            ga = _unbroadcast(np.matmul(g, np.swapaxes(bd, -1, -2)), ad.shape)
        if _needs(b):
            if bd.ndim == 2 and ad.ndim > 2:
                gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = _unbroadcast(np.matmul(np.swapaxes(ad, -1, -2), g), bd.shape)
        return ga, gb

    return _result(out, (a, b), bw, "matmul")


def linear(x, weight, bias=None):
    """``x @ weight + bias`` over the last axis of ``x``."""
    xd, wd = _data(x), _data(weight)
    if wd.ndim != 2 or xd.shape[-1] != wd.shape[0]:
        raise ShapeMismatch(f"linear: input {xd.shape} does not fit weight {wd.shape}")
    x2 = xd.reshape(-1, xd.shape[-1])
    out = (x2 @ wd).reshape(xd.shape[:-1] + (wd.shape[1],))
    if bias is not None:
        bd = _data(bias)
        if bd.shape != (wd.shape[1],):
            raise ShapeMismatch(f"linear: bias {bd.shape} does not fit weight {wd.shape}")
        out = out + bd

    def bw(g):
        g2 = g.reshape(-1, g.shape[-1])
        gx = (g2 @ wd.T).reshape(xd.shape) if _needs(x) else None
        gw = (x2.T @ g2) if _needs(weight) else None
        gb = g2.sum(axis=0) if bias is not None and _needs(bias) else None
        return gx, gw, gb

    return _result(out, (x, weight, bias), bw, "linear")


def reshape(x, shape):
    xd = _data(x)
    try:
        out = xd.reshape(shape)
    except ValueError:
        raise ShapeMismatch(f"reshape: cannot view {xd.shape} as {tuple(shape)}") from None
    return _result(out, (x,), lambda g: (g.reshape(xd.shape),), "reshape")


def transpose(x, axes):
    xd = _data(x)
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return _result(np.transpose(xd, axes), (x,), lambda g: (np.transpose(g, inverse),), "transpose")


def take(x, indices, axis=0):
    """Gather entries of ``x`` along ``axis``; repeated indices accumulate."""
    xd = _data(x)
    idx = np.asarray(indices, dtype=np.int64)
    out = np.take(xd, idx, axis=axis)

    def bw(g):
        gx = np.zeros_like(xd)
        moved = np.moveaxis(gx, axis, 0)
        gm = np.moveaxis(g, list(range(axis, axis + idx.ndim)), list(range(idx.ndim)))
        np.add.at(moved, idx.reshape(-1), gm.reshape((-1,) + moved.shape[1:]))
        return (gx,)

    return _result(out, (x,), bw, "take")


def embedding(table, indices):
    """Row lookup: ``table[indices]`` with shape ``indices.shape + (d,)``."""
    return take(table, indices, axis=0)


def concat(tensors, axis=0):
    datas = [_data(t) for t in tensors]
    try:
        out = np.concatenate(datas, axis=axis)
    except ValueError:
        shapes = ", ".join(str(d.shape) for d in datas)
        raise ShapeMismatch(f"concat: incompatible shapes {shapes}") from None
    bounds = np.cumsum([d.shape[axis] for d in datas])[:-1]

    def bw(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _result(out, tuple(tensors), bw, "concat")


def where(cond, a, b):
    cond = np.asarray(cond, dtype=bool)
    ad, bd = _data(a), _data(b)
    try:
        out = np.where(cond, ad, bd)
    except ValueError:
        raise ShapeMismatch(f"where: incompatible shapes {cond.shape}, {ad.shape}, {bd.shape}") from None

    def bw(g):
        ga = _unbroadcast(np.where(cond, g, 0.0), ad.shape) if _needs(a) else None
        gb = _unbroadcast(np.where(cond, 0.0, g), bd.shape) if _needs(b) else None
        return ga, gb

    return _result(out, (a, b), bw, "where")


def sum(x, axis=None, keepdims=False):  # noqa: A001 - mirrors numpy naming
    xd = _data(x)
    out = xd.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, xd.shape).copy(),)

    return _result(out, (x,), bw, "sum")


def mean(x, axis=None, keepdims=False):
    xd = _data(x)
    count = xd.size if axis is None else np.prod([xd.shape[a] for a in np.atleast_1d(axis)])
    return mul(sum(x, axis=axis, keepdims=keepdims), 1.0 / count)


def masked_max(x, valid, axis=1):
    """Maximum over ``axis`` restricted to positions where ``valid`` is true.

    ``valid`` has the shape of ``x`` without its trailing feature axis.  The
    gradient flows to the first maximising position.
    """
    xd = _data(x)
    valid = np.asarray(valid, dtype=bool)
    if valid.shape != xd.shape[:-1]:
        raise ShapeMismatch(f"masked_max: mask {valid.shape} does not fit input {xd.shape}")
    if not valid.any(axis=axis).all():
        raise ValueError("masked_max: a slice has no valid positions")
    filled = np.where(valid[..., None], xd, -np.inf)
    arg = np.argmax(filled, axis=axis)
    out = np.take_along_axis(filled, np.expand_dims(arg, axis), axis=axis).squeeze(axis)

    def bw(g):
        gx = np.zeros_like(xd)
        np.put_along_axis(gx, np.expand_dims(arg, axis), np.expand_dims(g, axis), axis=axis)
        return (gx,)

    return _result(out, (x,), bw, "masked_max")


def max(x, axis=0):  # noqa: A001
    """Max over a non-feature axis of an (..., d) tensor."""
    xd = _data(x)
    return masked_max(x, np.ones(xd.shape[:-1], dtype=bool), axis=axis)


def softmax(x, axis=-1, mask=None):
    """Softmax over ``axis``; entries where ``mask`` is false get weight 0."""
    xd = _data(x)
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        z = np.where(mask, xd, -np.inf)
    else:
        z = xd
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _result(y, (x,), bw, "softmax")


def layer_norm(x, gamma, beta, eps=1e-5):
    xd, gd, bd = _data(x), _data(gamma), _data(beta)
    n = xd.shape[-1]
    if gd.shape != (n,) or bd.shape != (n,):
        raise ShapeMismatch(f"layer_norm: scale {gd.shape}/shift {bd.shape} vs input {xd.shape}")
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gd + bd

    def bw(g):
        gx = None
        if _needs(x):
            dxhat = g * gd
            gx = inv / n * (n * dxhat - dxhat.sum(axis=-1, keepdims=True)
                            - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True))
        g2 = g.reshape(-1, n)
        gg = (g2 * xhat.reshape(-1, n)).sum(axis=0) if _needs(gamma) else None
        gb = g2.sum(axis=0) if _needs(beta) else None
        return gx, gg, gb

    return _result(out, (x, gamma, beta), bw, "layer_norm")


_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


def gelu(x):
    """Exact (erf) GELU."""
    xd = _data(x)
    cdf = 0.5 * (1.0 + erf(xd * _INV_SQRT2))

    def bw(g):
        pdf = _INV_SQRT2PI * np.exp(-0.5 * xd * xd)
        return (g * (cdf + xd * pdf),)

    return _result(xd * cdf, (x,), bw, "gelu")


def sigmoid(x):
    xd = _data(x)
    y = np.where(xd >= 0, 1.0 / (1.0 + np.exp(-np.abs(xd))),
                 np.exp(-np.abs(xd)) / (1.0 + np.exp(-np.abs(xd))))
    return _result(y, (x,), lambda g: (g * y * (1.0 - y),), "sigmoid")


def mse_loss(pred, target):
    """Mean of squared differences over all elements."""
    pd, td = _data(pred), _data(target)
    if pd.shape != td.shape:
        raise ShapeMismatch(f"mse_loss: prediction {pd.shape} vs target {td.shape}")
    diff = pd - td
    scale = 2.0 / diff.size

    def bw(g):
        return (g * scale * diff if _needs(pred) else None,
                -g * scale * diff if _needs(target) else None)

    return _result(np.mean(diff * diff), (pred, target), bw, "mse_loss")


def l2_loss(pred, target):
    """Squared L2 distance per row (last axis), averaged over rows."""
    pd, td = _data(pred), _data(target)
    if pd.shape != td.shape:
        raise ShapeMismatch(f"l2_loss: prediction {pd.shape} vs target {td.shape}")
    diff = pd - td
    rows = diff.size // diff.shape[-1] if diff.ndim and diff.shape[-1] else 1
    value = (diff * diff).sum() / rows

    def bw(g):
        return (g * 2.0 / rows * diff if _needs(pred) else None,
                -g * 2.0 / rows * diff if _needs(target) else None)

    return _result(value, (pred, target), bw, "l2_loss")


def cross_entropy(logits, targets):
    """Mean negative log-likelihood of integer ``targets`` under softmax(logits)."""
    ld = _data(logits)
    t = np.asarray(targets, dtype=np.int64)
    if ld.ndim == 1:
        ld2, t2 = ld[None, :], t.reshape(1)
    else:
        ld2, t2 = ld, t
    if ld2.ndim != 2 or t2.shape != (ld2.shape[0],):
        raise ShapeMismatch(f"cross_entropy: logits {ld.shape} vs targets {t.shape}")
    if t2.size and (t2.min() < 0 or t2.max() >= ld2.shape[1]):
        raise ValueError("cross_entropy: target class out of range")
    z = ld2 - ld2.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    n = ld2.shape[0]
    value = (lse - z[np.arange(n), t2]).mean()

    def bw(g):
        p = np.exp(z - lse[:, None])
        p[np.arange(n), t2] -= 1.0
        return ((g / n * p).reshape(ld.shape),)

    return _result(value, (logits,), bw, "cross_entropy")


def bce_with_logits(logits, labels):
    """Mean binary cross-entropy of ``labels`` in {0,1} under sigmoid(logits)."""
    zd = _data(logits)
    y = np.asarray(labels, dtype=np.float64)
    if zd.shape != y.shape:
        raise ShapeMismatch(f"bce_with_logits: logits {zd.shape} vs labels {y.shape}")
    value = np.mean(np.maximum(zd, 0.0) - zd * y + np.log1p(np.exp(-np.abs(zd))))
    p = np.where(zd >= 0, 1.0 / (1.0 + np.exp(-np.abs(zd))),
                 np.exp(-np.abs(zd)) / (1.0 + np.exp(-np.abs(zd))))

    def bw(g):
        return (g * (p - y) / y.size,)

    return _result(value, (logits,), bw, "bce_with_logits")
