"""Minimal reverse-mode tape over numpy arrays.

Every operation below accepts either plain ndarrays or Tensors. With plain
arrays it is just numpy (no tape is built), so the same model code serves
the fast verification paths and the trainable paths. With at least one
Tensor argument it records a node whose vjp closure pushes the upstream
cotangent to its parents.

Complex values follow the re/im-as-independent-reals convention: for a real
loss L and a complex intermediate z = x + iy, the stored cotangent is
g_z = dL/dx + i dL/dy. Under that convention a holomorphic primitive f
propagates g_in = conj(f'(z)) * g_out, a product propagates conj(other) *
g, and crossing back to a real tensor takes the real part. Complex model
parameters are therefore plain real leaf pairs combined by `make_complex`,
and optimizers only ever see real arrays.

The sequence primitives (linear_scan, powers, causal convolutions) carry
hand-derived adjoints; the scan adjoint is itself a reversed scan, executed
by the same engine as the forward pass.
"""

from __future__ import annotations

import numpy as np

from . import discretize, engines
from .types import SsmError

__all__ = [
    "Tensor",
    "GradientError",
    "backward",
    "add", "sub", "mul", "div", "neg", "matmul",
    "exp", "log", "sqrt", "clip_min", "phi1", "sigmoid", "softplus", "silu", "softmax",
    "real", "conj", "make_complex",
    "reshape", "swapaxes", "concat", "tsum", "tmean", "broadcast_in_time",
    "linear_scan", "powers", "depthwise_causal_conv", "fir_causal_conv",
    "time_shift", "embedding", "cross_entropy_mean",
]


class GradientError(SsmError):
    """Backward pass misuse: non-scalar loss or broken graph."""


class Tensor:
    """A node in the tape: a numpy value plus how to push gradients back."""

    __slots__ = ("value", "grad", "parents", "vjp")
    __array_ufunc__ = None  # make numpy defer to our reflected operators

    def __init__(self, value, parents=(), vjp=None):
        self.value = np.asarray(value)
        self.grad = None
        self.parents = parents
        self.vjp = vjp

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def __repr__(self):
        return f"Tensor(shape={self.value.shape}, dtype={self.value.dtype}, leaf={self.vjp is None})"

    def __add__(self, o): return add(self, o)
    def __radd__(self, o): return add(o, self)
    def __sub__(self, o): return sub(self, o)
    def __rsub__(self, o): return sub(o, self)
    def __mul__(self, o): return mul(self, o)
    def __rmul__(self, o): return mul(o, self)
    def __truediv__(self, o): return div(self, o)
    def __rtruediv__(self, o): return div(o, self)
    def __matmul__(self, o): return matmul(self, o)
    def __rmatmul__(self, o): return matmul(o, self)
    def __neg__(self): return neg(self)


def val(x):
    return x.value if isinstance(x, Tensor) else x


def _node(out, *pairs):
    """Make a tape node from (arg, grad_fn) pairs; plain output if nothing is tracked."""
    parents = tuple(t for t, _ in pairs if isinstance(t, Tensor))
    if not parents:
        return out
    fns = tuple(fn for t, fn in pairs if isinstance(t, Tensor))

    def vjp(g):
        return tuple(fn(g) for fn in fns)

    return Tensor(out, parents, vjp)


def _unbroadcast(g, shape):
    """Sum g down to `shape` after numpy broadcasting."""
    g = np.asarray(g)
    if g.shape == tuple(shape):
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def backward(loss: Tensor):
    """Backpropagate from a scalar loss; leaves accumulate into .grad."""
    if not isinstance(loss, Tensor):
        raise GradientError("loss is not a Tensor (nothing was tracked)")
    if np.ndim(loss.value) != 0:
        raise GradientError(f"loss must be scalar, got shape {np.shape(loss.value)}")
    # iterative topological order (graphs can be thousands deep)
    topo, seen, stack = [], set(), [(loss, False)]
    while stack:
        node, done = stack.pop()
        if done:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))
    loss.grad = np.asarray(1.0)
    for node in reversed(topo):
        if node.vjp is None or node.grad is None:
            continue
        for parent, g in zip(node.parents, node.vjp(node.grad)):
            if g is None:
                continue
            if np.iscomplexobj(parent.value):
                g = np.asarray(g, dtype=np.complex128)
            else:
                g = np.asarray(g).real.astype(np.float64, copy=False)
            parent.grad = g if parent.grad is None else parent.grad + g
        node.grad = None  # free interior cotangents


# ------------------------------------------------------------- arithmetic

def add(a, b):
    av, bv = val(a), val(b)
    return _node(av + bv,
                 (a, lambda g: _unbroadcast(g, np.shape(av))),
                 (b, lambda g: _unbroadcast(g, np.shape(bv))))


def sub(a, b):
    av, bv = val(a), val(b)
    return _node(av - bv,
                 (a, lambda g: _unbroadcast(g, np.shape(av))),
                 (b, lambda g: _unbroadcast(-g, np.shape(bv))))


def neg(a):
    return _node(-val(a), (a, lambda g: -g))


def mul(a, b):
    av, bv = val(a), val(b)
    return _node(av * bv,
                 (a, lambda g: _unbroadcast(np.conj(bv) * g, np.shape(av))),
                 (b, lambda g: _unbroadcast(np.conj(av) * g, np.shape(bv))))


def div(a, b):
    av, bv = val(a), val(b)
    return _node(av / bv,
                 (a, lambda g: _unbroadcast(g / np.conj(bv), np.shape(av))),
                 (b, lambda g: _unbroadcast(-np.conj(av / (bv * bv)) * g, np.shape(bv))))


def matmul(a, b):
    """np.matmul with batch broadcasting; operands must be at least 2-D."""
    av, bv = val(a), val(b)
    if np.ndim(av) < 2 or np.ndim(bv) < 2:
        raise GradientError("matmul operands must be at least 2-D")
    out = av @ bv

    def ga(g):
        return _unbroadcast(g @ np.conj(np.swapaxes(bv, -1, -2)), np.shape(av))

    def gb(g):
        return _unbroadcast(np.conj(np.swapaxes(av, -1, -2)) @ g, np.shape(bv))

    return _node(out, (a, ga), (b, gb))


# ------------------------------------------------------------- elementwise

def exp(a):
    out = np.exp(val(a))
    return _node(out, (a, lambda g: np.conj(out) * g))


def log(a):
    av = val(a)
    return _node(np.log(av), (a, lambda g: g / np.conj(av)))


def sqrt(a):
    out = np.sqrt(val(a))
    return _node(out, (a, lambda g: g / np.conj(2.0 * out)))


def clip_min(a, lo):
    """Elementwise max(a, lo) for a real constant lo; gradient is zero where clamped."""
    av = val(a)
    return _node(np.maximum(av, lo), (a, lambda g: np.where(av >= lo, g, 0.0)))


def _phi1_deriv(z):
    # d/dz (e^z - 1)/z = (e^z (z - 1) + 1)/z^2, series 1/2 + z/3 + z^2/8 near 0
    z = np.asarray(z)
    small = np.abs(z) < 1e-4
    zs = np.where(small, np.ones_like(z), z)
    direct = (np.exp(zs) * (zs - 1.0) + 1.0) / (zs * zs)
    series = 0.5 + z / 3.0 + (z * z) / 8.0
    return np.where(small, series, direct)


def phi1(a):
    """(e^z - 1)/z with the analytic value 1 at z = 0 (series near zero)."""
    av = val(a)
    out = discretize.expm1_over_z(av)
    return _node(out, (a, lambda g: np.conj(_phi1_deriv(av)) * g))


def _sigmoid(x):
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a):
    out = _sigmoid(np.asarray(val(a), dtype=np.float64))
    return _node(out, (a, lambda g: out * (1.0 - out) * g))


def _softplus(x):
    # max(x,0) + log1p(e^-|x|): exact and overflow-proof; linear for x > ~30
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def softplus(a):
    av = np.asarray(val(a), dtype=np.float64)
    return _node(_softplus(av), (a, lambda g: _sigmoid(av) * g))


def silu(a):
    av = np.asarray(val(a), dtype=np.float64)
    s = _sigmoid(av)
    return _node(av * s, (a, lambda g: s * (1.0 + av * (1.0 - s)) * g))


def softmax(a, axis=-1):
    av = val(a)
    shifted = av - np.max(av, axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=axis, keepdims=True)

    def ga(g):
        return s * (g - (g * s).sum(axis=axis, keepdims=True))

    return _node(s, (a, ga))


# ------------------------------------------------------------- complex moves

def real(a):
    return _node(np.real(val(a)), (a, lambda g: g))


def conj(a):
    return _node(np.conj(val(a)), (a, lambda g: np.conj(g)))


def make_complex(re, im):
    out = np.asarray(val(re), dtype=np.float64) + 1j * np.asarray(val(im), dtype=np.float64)
    return _node(out, (re, lambda g: np.real(g)), (im, lambda g: np.imag(g)))


# ------------------------------------------------------------- shaping

def reshape(a, shape):
    av = val(a)
    old = np.shape(av)
    return _node(np.reshape(av, shape), (a, lambda g: np.reshape(g, old)))


def swapaxes(a, i, j):
    return _node(np.swapaxes(val(a), i, j), (a, lambda g: np.swapaxes(g, i, j)))


def concat(parts, axis=0):
    vals = [val(p) for p in parts]
    sizes = [v.shape[axis] for v in vals]
    splits = np.cumsum(sizes)[:-1]

    def cut(g, k):
        return np.split(g, splits, axis=axis)[k]

    out = np.concatenate(vals, axis=axis)
    return _node(out, *[(p, (lambda k: lambda g: cut(g, k))(i)) for i, p in enumerate(parts)])


def tsum(a, axis=None, keepdims=False):
    av = val(a)
    out = np.sum(av, axis=axis, keepdims=keepdims)
    shape = np.shape(av)

    def ga(g):
        if axis is None:
            return np.broadcast_to(g, shape)
        if not keepdims:
            g = np.expand_dims(g, axis)
        return np.broadcast_to(g, shape)

    return _node(out, (a, ga))


def tmean(a, axis=None, keepdims=False):
    av = val(a)
    n = av.size if axis is None else np.prod([av.shape[ax] for ax in np.atleast_1d(axis)])
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / float(n))


def broadcast_in_time(a, T):
    """Tile a (...,) array to (T, ...) by multiplying with ones; grads sum back."""
    ones = np.ones((T,) + (1,) * np.ndim(val(a)))
    return mul(a, ones)


# ------------------------------------------------------------- sequence ops

def time_shift(a, s, time_axis=-2):
    """Delay by s steps along time_axis, zero-filling the start. s >= 0."""
    av = val(a)
    s = int(s)
    if s < 0:
        raise GradientError("time_shift needs s >= 0")
    T = av.shape[time_axis]
    if s == 0:
        return _node(np.array(av, copy=True), (a, lambda g: g))
    ax = time_axis % av.ndim

    def shift_fwd(x, k):
        pad = [(0, 0)] * x.ndim
        pad[ax] = (k, 0)
        sl = [slice(None)] * x.ndim
        sl[ax] = slice(0, T)
        return np.pad(x, pad)[tuple(sl)]

    def shift_bwd(g):
        pad = [(0, 0)] * g.ndim
        pad[ax] = (0, s)
        sl = [slice(None)] * g.ndim
        sl[ax] = slice(s, s + T)
        return np.pad(g, pad)[tuple(sl)]

    return _node(shift_fwd(av, s), (a, shift_bwd))


def powers(a, T):
    """Vandermonde column stack: out[t] = a**t for t = 0..T-1, out[0] = 1."""
    av = val(a)
    V = np.ones((T,) + np.shape(av), dtype=np.result_type(av, np.float64))
    if T > 1:
        np.cumprod(np.broadcast_to(av, (T - 1,) + np.shape(av)), axis=0, out=V[1:])

    def ga(g):
        if T == 1:
            return np.zeros_like(av)
        t = np.arange(1, T).reshape((T - 1,) + (1,) * np.ndim(av))
        return (t * np.conj(V[:-1]) * np.asarray(g)[1:]).sum(axis=0)

    return _node(V, (a, ga))


def _scan_adjoint(a_v, x_v, upstream):
    """Shared adjoint of x(k) = a(k) x(k-1) + d(k) along axis 0.

    Returns (grad_a, grad_d) for a real loss, complex convention as above:
    lam(k) = upstream(k) + conj(a(k+1)) lam(k+1); grad_d = lam;
    grad_a(k) = conj(x(k-1)) lam(k). The reverse recurrence is itself a scan.
    """
    ac = np.conj(a_v)
    g = np.asarray(upstream)
    alpha = np.concatenate([np.ones_like(ac[-1:]), ac[:0:-1]], axis=0)  # conj a, reversed, shifted
    lam = engines.scan(alpha, g[::-1])[::-1]
    x_prev = np.concatenate([np.zeros_like(x_v[:1]), x_v[:-1]], axis=0)
    grad_a = np.conj(x_prev) * lam
    return grad_a, lam


def linear_scan(a, d, time_axis=-2, workers=None):
    """States of x(k) = a(k) x(k-1) + d(k) with x(-1) = 0, differentiably.

    a broadcasts against d (e.g. shared dynamics against per-channel drive).
    Time runs along `time_axis` of both arguments.
    """
    av, dv = val(a), val(d)
    ax_a = time_axis % np.ndim(av)
    ax_d = time_axis % np.ndim(dv)
    a0 = np.moveaxis(av, ax_a, 0)
    d0 = np.moveaxis(dv, ax_d, 0)
    # Align ranks time-first so batch axes of d broadcast against a shared a.
    pad = np.ndim(d0) - np.ndim(a0)
    if pad > 0:
        a0 = a0.reshape(a0.shape[:1] + (1,) * pad + a0.shape[1:])
    x0 = engines.scan(a0, d0, workers=workers)
    out = np.moveaxis(x0, 0, ax_d)
    tracked = tuple(t for t in (a, d) if isinstance(t, Tensor))
    if not tracked:
        return out

    def vjp(g):
        g0 = np.moveaxis(np.asarray(g), ax_d, 0)
        grad_a, grad_d = _scan_adjoint(a0, x0, g0)
        grads = []
        if isinstance(a, Tensor):
            ga = _unbroadcast(grad_a, a0.shape)
            if pad > 0:
                ga = ga.reshape(ga.shape[:1] + ga.shape[1 + pad:])
            grads.append(np.moveaxis(ga, 0, ax_a))
        if isinstance(d, Tensor):
            grads.append(np.moveaxis(_unbroadcast(grad_d, d0.shape), 0, ax_d))
        return tuple(grads)

    return Tensor(out, tracked, vjp)


def depthwise_causal_conv(u, K, time_axis=-2):
    """Per-channel causal convolution: y[.., t, c] = sum_j K[j, c] u[.., t-j, c].

    u is (..., T, C) real, K is (T, C) real. FFT length is the next power of
    two >= 2T, so the circular product acts as a linear convolution.
    """
    uv, Kv = val(u), val(K)
    T = uv.shape[time_axis]
    if Kv.shape[0] != T:
        raise GradientError("kernel and input must share T")
    n = engines.fft_length(T)
    ax = time_axis % uv.ndim
    Uf = np.fft.rfft(uv, n=n, axis=ax)
    Kf = np.fft.rfft(Kv, n=n, axis=0)
    sl = [slice(None)] * uv.ndim
    sl[ax] = slice(0, T)
    sl = tuple(sl)
    out = np.fft.irfft(Uf * Kf, n=n, axis=ax)[sl]
    tracked = tuple(t for t in (u, K) if isinstance(t, Tensor))
    if not tracked:
        return out

    def vjp(g):
        Gf = np.fft.rfft(np.asarray(g), n=n, axis=ax)
        grads = []
        if isinstance(u, Tensor):
            grads.append(np.fft.irfft(Gf * np.conj(Kf), n=n, axis=ax)[sl])
        if isinstance(K, Tensor):
            prod = np.conj(Uf) * Gf
            while prod.ndim > 2:  # sum batch axes, keep (freq, C)
                prod = prod.sum(axis=0)
            grads.append(np.fft.irfft(prod, n=n, axis=0)[:T])
        return tuple(grads)

    return Tensor(out, tracked, vjp)


def fir_causal_conv(u, w, time_axis=-2):
    """Short causal FIR per channel: y[.., t, c] = sum_{i<W} w[c, i] u[.., t-i, c]."""
    uv, wv = val(u), val(w)
    C, W = wv.shape
    ax = time_axis % uv.ndim
    T = uv.shape[ax]

    def delayed(x, k):
        if k == 0:
            return x
        pad = [(0, 0)] * x.ndim
        pad[ax] = (k, 0)
        sl = [slice(None)] * x.ndim
        sl[ax] = slice(0, T)
        return np.pad(x, pad)[tuple(sl)]

    def advanced(x, k):
        if k == 0:
            return x
        pad = [(0, 0)] * x.ndim
        pad[ax] = (0, k)
        sl = [slice(None)] * x.ndim
        sl[ax] = slice(k, k + T)
        return np.pad(x, pad)[tuple(sl)]

    out = np.zeros_like(uv, dtype=np.float64)
    for i in range(W):
        out += wv[:, i] * delayed(uv, i)

    def gu(g):
        g = np.asarray(g)
        acc = np.zeros_like(uv, dtype=np.float64)
        for i in range(W):
            acc += wv[:, i] * advanced(g, i)
        return acc

    def gw(g):
        g = np.asarray(g)
        cols = []
        for i in range(W):
            prod = g * delayed(uv, i)
            red = tuple(range(prod.ndim - 1))
            cols.append(prod.sum(axis=red))
        return np.stack(cols, axis=1)

    return _node(out, (u, gu), (w, gw))


def embedding(E, ids):
    """Row lookup E[ids]; the gradient scatter-adds into the table."""
    Ev = val(E)
    ids = np.asarray(ids)

    def gE(g):
        acc = np.zeros_like(Ev, dtype=np.float64)
        np.add.at(acc, ids, np.asarray(g))
        return acc

    return _node(Ev[ids], (E, gE))


def cross_entropy_mean(logits, labels):
    """Mean negative log-softmax of the true class; stable fused primitive.

    logits: (..., C); labels: integer array matching the leading shape.
    1-D logits with a scalar label give the single-sample loss.
    """
    lv = val(logits)
    labels = np.asarray(labels)
    flat = lv.reshape(-1, lv.shape[-1])
    idx = labels.reshape(-1)
    if idx.shape[0] != flat.shape[0]:
        raise GradientError("labels do not match logits batch shape")
    m = flat.max(axis=1, keepdims=True)
    z = flat - m
    lse = np.log(np.sum(np.exp(z), axis=1))
    n = flat.shape[0]
    loss = float(np.mean(lse - z[np.arange(n), idx]))

    def ga(g):
        soft = np.exp(z)
        soft /= soft.sum(axis=1, keepdims=True)
        soft[np.arange(n), idx] -= 1.0
        return (float(g) / n) * soft.reshape(lv.shape)

    return _node(np.asarray(loss), (logits, ga))
