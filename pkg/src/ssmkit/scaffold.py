"""Gated wrappers around a sequence core, layer stacking, and the task head.

A scaffold turns one sequence-to-sequence core into a trainable block:
the input is pre-processed (linear map, shift-and-sum, or causal
convolution depending on the flavor), run through the core, multiplied
by a gate computed from the raw block input, and post-processed by a
linear map. Input and output widths are both q, so blocks stack.

The three flavors differ only in the pre-map and the default gate:

    mlp    pre = W_in u                 gate sigma = sigmoid
    h3     pre = u + delay_s(u)         gate sigma = sigmoid
    mamba  pre = causal_conv(W_up u)    gate sigma = silu

`LayerStack` composes an embedding table, L scaffolded cores with a
residual add around each block (an addition of ours, kept for
trainability at depth; the in-block skip branch is the gate path, not
this), optional pre-block RMS normalization, and a mean-pool linear
classifier head. All forward code runs on the autodiff ops, so a stack
whose parameters live in a ParamStore is trainable end to end, and
plain ndarray parameters evaluate without a tape.
"""

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import val
from .types import ValidationError

SCAFFOLD_KINDS = ("mlp", "h3", "mamba")
GATE_NONLINEARITIES = ("sigmoid", "softmax", "silu")

__all__ = [
    "SCAFFOLD_KINDS", "GATE_NONLINEARITIES", "gate", "causal_conv1d",
    "rms_norm", "Scaffold", "make_scaffold", "neutral_scaffold",
    "scaffold_forward", "LayerStack", "masked_mean", "masked_last",
    "stack_forward",
]


def gate(x1, x2, W, nonlinearity="sigmoid"):
    """x1 * sigma(W x2), elementwise over the trailing width axis.

    sigma is sigmoid, softmax (over the width axis), or silu. With W = 0
    the sigmoid gate halves x1 and the softmax gate divides it by the
    width, which the tests pin as goldens.
    """
    if nonlinearity not in GATE_NONLINEARITIES:
        raise ValidationError(f"unknown gate nonlinearity {nonlinearity!r}")
    s1, s2, sw = np.shape(val(x1)), np.shape(val(x2)), np.shape(val(W))
    if s1 != s2:
        raise ValidationError(f"gate operands disagree: {s1} vs {s2}")
    if len(sw) != 2 or sw[0] != sw[1] or sw[1] != s2[-1]:
        raise ValidationError(f"gate map must be square {s2[-1]}x{s2[-1]}, got {sw}")
    z = ad.matmul(x2, ad.swapaxes(W, 0, 1))
    if nonlinearity == "sigmoid":
        w = ad.sigmoid(z)
    elif nonlinearity == "softmax":
        w = ad.softmax(z, axis=-1)
    else:
        w = ad.silu(z)
    return ad.mul(x1, w)


def causal_conv1d(u, kernels, time_axis=-2):
    """Per-channel causal FIR: y(k) depends on u(k-width+1 .. k).

    kernels has shape (q, width); kernels[:, 0] weights the current step.
    A kernel of (1, 0, ..) is the identity, (0, 1, 0, ..) a one-step delay.
    """
    ksh = np.shape(val(kernels))
    if len(ksh) != 2 or ksh[1] < 1:
        raise ValidationError(f"kernels must be (q, width), got {ksh}")
    if np.shape(val(u))[-1] != ksh[0]:
        raise ValidationError("kernel channel count does not match input width")
    return ad.fir_causal_conv(u, kernels, time_axis=time_axis)


def rms_norm(x, eps=1e-8):
    """x scaled to unit root-mean-square over the width axis; 0 maps to 0."""
    ms = ad.tmean(ad.mul(x, x), axis=-1, keepdims=True)
    return ad.div(x, ad.sqrt(ad.add(ms, eps)))


# ------------------------------------------------------------------ scaffold

_PROJ_NAMES = {
    "mlp": ("W_in", "W_gate", "W_out"),
    "h3": ("W_gate", "W_out"),
    "mamba": ("W_up", "conv", "W_gate", "W_out"),
}


@dataclass
class Scaffold:
    """One gated block configuration; `params` maps names to (q, q) arrays
    (plus a (q, conv_width) kernel for the mamba flavor).

    gate_open replaces sigma(.) with 1 for reduction and equivalence
    tests; it is not a training configuration.
    """

    kind: str
    q: int
    params: dict = field(default_factory=dict)
    gate_nonlinearity: str = "sigmoid"
    conv_width: int = 4
    shift: int = 1
    gate_open: bool = False

    def __post_init__(self):
        if self.kind not in SCAFFOLD_KINDS:
            raise ValidationError(f"unknown scaffold kind {self.kind!r}")
        if self.gate_nonlinearity not in GATE_NONLINEARITIES:
            raise ValidationError(f"unknown gate nonlinearity {self.gate_nonlinearity!r}")
        if self.q < 1 or self.conv_width < 1 or self.shift < 0:
            raise ValidationError("q and conv_width must be >= 1 and shift >= 0")
        missing = [n for n in _PROJ_NAMES[self.kind] if n not in self.params]
        if missing:
            raise ValidationError(f"{self.kind} scaffold missing params {missing}")
        for name in _PROJ_NAMES[self.kind]:
            want = (self.q, self.conv_width) if name == "conv" else (self.q, self.q)
            got = np.shape(val(self.params[name]))
            if got != want:
                raise ValidationError(f"{name}: expected shape {want}, got {got}")

    def register(self, store, prefix=""):
        """Move every projection into `store`; scaffolds carry no dynamics."""
        for name in _PROJ_NAMES[self.kind]:
            self.params[name] = store.add(prefix + name, val(self.params[name]))


def make_scaffold(kind, q, rng, gate_nonlinearity=None, conv_width=4, shift=1):
    """Random scaffold: 1/sqrt(fan-in) projections, near-identity conv.

    The gate nonlinearity defaults per flavor (silu for mamba, sigmoid
    otherwise) and can be overridden.
    """
    if gate_nonlinearity is None:
        gate_nonlinearity = "silu" if kind == "mamba" else "sigmoid"
    if kind not in SCAFFOLD_KINDS:
        raise ValidationError(f"unknown scaffold kind {kind!r}")
    scale = 1.0 / np.sqrt(q)
    params = {name: rng.normal(size=(q, q)) * scale
              for name in _PROJ_NAMES[kind] if name != "conv"}
    if kind == "mamba":
        kern = rng.normal(size=(q, conv_width)) * 0.1
        kern[:, 0] += 1.0  # start near the identity tap so early steps pass signal
        params["conv"] = kern
    return Scaffold(kind=kind, q=q, params=params,
                    gate_nonlinearity=gate_nonlinearity,
                    conv_width=conv_width, shift=shift)


def neutral_scaffold(kind, q, conv_width=4, shift=1):
    """Identity projections, open gate, delta conv tap.

    The mlp flavor then computes exactly the bare core; h3 still sums the
    shifted copy into the pre-map and mamba still convolves (with the
    identity kernel both reduce to simple known maps).
    """
    eye = np.eye(q)
    params = {name: eye.copy() for name in _PROJ_NAMES[kind] if name != "conv"}
    params["W_gate"] = np.zeros((q, q))
    if kind == "mamba":
        kern = np.zeros((q, conv_width))
        kern[:, 0] = 1.0
        params["conv"] = kern
    return Scaffold(kind=kind, q=q, params=params, conv_width=conv_width,
                    shift=shift, gate_open=True)


def _run_core(core, u, workers):
    if hasattr(core, "forward"):
        return core.forward(u, workers=workers)
    return core(u)


def scaffold_forward(scaffold, core, u, workers=None):
    """Pre-map, core, gate against the raw block input, post-map.

    `core` is a model with .forward or any sequence-to-sequence callable.
    Accepts (T, q) or batched (..., T, q) input; output shape matches.
    """
    p = scaffold.params
    if np.shape(val(u))[-1] != scaffold.q:
        raise ValidationError(f"scaffold expects width {scaffold.q}")
    if scaffold.kind == "mlp":
        pre = ad.matmul(u, ad.swapaxes(p["W_in"], 0, 1))
    elif scaffold.kind == "h3":
        pre = ad.add(u, ad.time_shift(u, scaffold.shift))
    else:
        pre = causal_conv1d(ad.matmul(u, ad.swapaxes(p["W_up"], 0, 1)), p["conv"])
    y = _run_core(core, pre, workers)
    if not scaffold.gate_open:
        y = gate(y, u, p["W_gate"], scaffold.gate_nonlinearity)
    return ad.matmul(y, ad.swapaxes(p["W_out"], 0, 1))


# --------------------------------------------------------------- layer stack

@dataclass
class LayerStack:
    """Embedding, L scaffolded cores with residual adds, pooled linear head.

    embed: (V, q) token table; head_w: (n_classes, q); head_b: (n_classes,).
    use_norm toggles pre-block RMS normalization. pooling picks the head
    input: "mean" averages features over real (unmasked) steps, "last"
    reads the final real step, which suits tasks whose answer lives at the
    end of the sequence.
    """

    embed: object
    layers: list
    head_w: object
    head_b: object
    use_norm: bool = True
    pooling: str = "mean"

    def __post_init__(self):
        if self.pooling not in ("mean", "last"):
            raise ValidationError(f"unknown pooling {self.pooling!r}")
        if not self.layers:
            raise ValidationError("a stack needs at least one layer")
        q = np.shape(val(self.embed))[1]
        nc, qh = np.shape(val(self.head_w))
        if qh != q or np.shape(val(self.head_b)) != (nc,):
            raise ValidationError("head dimensions do not match the embedding width")
        for sc, core in self.layers:
            if sc.q != q or getattr(core, "q", q) != q:
                raise ValidationError("every layer must keep width q")

    @property
    def vocab_size(self):
        return np.shape(val(self.embed))[0]

    @property
    def n_classes(self):
        return np.shape(val(self.head_w))[0]

    def register(self, store, dynamics_lr_scale=0.1):
        self.embed = store.add("embed", val(self.embed))
        self.head_w = store.add("head_w", val(self.head_w))
        self.head_b = store.add("head_b", val(self.head_b))
        for i, (sc, core) in enumerate(self.layers):
            sc.register(store, prefix=f"layers.{i}.scaffold.")
            core.register(store, prefix=f"layers.{i}.core.",
                          dynamics_lr_scale=dynamics_lr_scale)


def _check_mask(x, mask):
    mask = np.asarray(mask, dtype=np.float64)
    if mask.shape != np.shape(val(x))[:-1]:
        raise ValidationError("mask must match the input's leading shape")
    counts = mask.sum(axis=-1)
    if np.any(counts == 0):
        raise ValidationError("mask selects no steps for some sequence")
    return mask, counts


def masked_mean(x, mask):
    """Mean over the time axis; mask is (..., T) of {0, 1} weights."""
    if mask is None:
        return ad.tmean(x, axis=-2)
    mask, counts = _check_mask(x, mask)
    total = ad.tsum(ad.mul(x, mask[..., None]), axis=-2)
    return ad.div(total, counts[..., None])


def masked_last(x, mask):
    """Features at the final real step of each sequence.

    Implemented as a one-hot weighted sum over time so the same tape ops
    carry the gradient as for mean pooling.
    """
    T = np.shape(val(x))[-2]
    if mask is None:
        sel = np.zeros(T)
        sel[-1] = 1.0
    else:
        mask, _ = _check_mask(x, mask)
        last = T - 1 - np.argmax(mask[..., ::-1], axis=-1)
        sel = np.zeros(mask.shape)
        np.put_along_axis(sel, last[..., None], 1.0, axis=-1)
    return ad.tsum(ad.mul(x, sel[..., None]), axis=-2)


def stack_forward(stack, tokens, mask=None, workers=None):
    """Token ids (T,) or (B, T) to class logits (n_classes,) or (B, n_classes)."""
    ids = np.asarray(tokens)
    if ids.size == 0:
        raise ValidationError("empty token sequence")
    if not np.issubdtype(ids.dtype, np.integer):
        raise ValidationError("tokens must be integer ids")
    if ids.min() < 0 or ids.max() >= stack.vocab_size:
        raise ValidationError(
            f"token id outside vocabulary [0, {stack.vocab_size})")
    x = ad.embedding(stack.embed, ids)
    for sc, core in stack.layers:
        h = rms_norm(x) if stack.use_norm else x
        x = ad.add(x, scaffold_forward(sc, core, h, workers=workers))
    pool = masked_last if stack.pooling == "last" else masked_mean
    pooled = pool(x, mask)
    single = ids.ndim == 1
    if single:
        pooled = ad.reshape(pooled, (1, np.shape(val(pooled))[-1]))
    logits = ad.add(ad.matmul(pooled, ad.swapaxes(stack.head_w, 0, 1)), stack.head_b)
    if single:
        logits = ad.reshape(logits, (stack.n_classes,))
    return logits
