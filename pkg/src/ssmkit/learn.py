"""Training stack: parameter store, gradients, Adam, losses, gradient checks.

Parameters live in a flat named store of real float64 arrays; complex model
parameters are stored as separate re/im leaves and assembled inside the
forward pass, so the optimizer and the checkpoint format only ever deal in
real numbers. Every leaf may carry a learning-rate scale (dynamics and step
size parameters conventionally train 10x slower than projections).

`finite_diff_check` is the independent referee for the whole reverse-mode
stack: central differences on every (or a sampled subset of) coordinate(s)
against the tape's gradient.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .types import DivergenceError, SsmError, ValidationError

__all__ = [
    "ParamStore",
    "AdamState",
    "adam_step",
    "grad",
    "cross_entropy",
    "scan_backward",
    "finite_diff_check",
]


class ParamStore:
    """Named real-valued parameter leaves with gradient slots."""

    def __init__(self):
        self._leaves: dict[str, ad.Tensor] = {}
        self.lr_scale: dict[str, float] = {}
        self.step_count = 0

    def add(self, name: str, value, lr_scale: float = 1.0) -> ad.Tensor:
        if name in self._leaves:
            raise ValidationError(f"duplicate parameter name: {name}")
        if np.iscomplexobj(value):
            raise ValidationError(f"{name}: store complex parameters as separate re/im leaves")
        arr = np.asarray(value, dtype=np.float64)
        leaf = ad.Tensor(arr)
        self._leaves[name] = leaf
        self.lr_scale[name] = float(lr_scale)
        return leaf

    def __getitem__(self, name: str) -> ad.Tensor:
        return self._leaves[name]

    def __contains__(self, name) -> bool:
        return name in self._leaves

    def names(self):
        return list(self._leaves)

    def values(self) -> dict[str, np.ndarray]:
        return {k: v.value.copy() for k, v in self._leaves.items()}

    def grads(self) -> dict[str, np.ndarray | None]:
        return {k: (None if v.grad is None else v.grad.copy()) for k, v in self._leaves.items()}

    def zero_grad(self):
        for leaf in self._leaves.values():
            leaf.grad = None

    def load(self, values: dict[str, np.ndarray]):
        for name, arr in values.items():
            if name not in self._leaves:
                raise ValidationError(f"unknown parameter: {name}")
            leaf = self._leaves[name]
            arr = np.asarray(arr, dtype=np.float64)
            if arr.shape != leaf.value.shape:
                raise ValidationError(f"{name}: shape {arr.shape} != {leaf.value.shape}")
            leaf.value = arr

    @property
    def n_params(self) -> int:
        return sum(v.value.size for v in self._leaves.values())


def grad(loss_fn, store: ParamStore, *args):
    """Run loss_fn(*args), backpropagate, and return (loss_value, grads dict).

    Gradients are also left on the store's leaves for the optimizer.
    Raises GradientError for a non-scalar loss and DivergenceError if the
    loss itself is non-finite.
    """
    store.zero_grad()
    loss = loss_fn(*args)
    if not isinstance(loss, ad.Tensor):
        raise ad.GradientError("loss_fn returned a plain value; no parameters were used")
    if not np.all(np.isfinite(loss.value)):
        raise DivergenceError(f"non-finite loss: {loss.value}")
    ad.backward(loss)
    out = {}
    for name in store.names():
        g = store[name].grad
        out[name] = np.zeros_like(store[name].value) if g is None else g
    return float(loss.value), out


def cross_entropy(logits, labels):
    """Mean cross entropy; single (C,) logits with an int label also works."""
    return ad.cross_entropy_mean(logits, labels)


def scan_backward(abar_seq, x_seq, upstream):
    """Adjoint of the linear scan, as plain arrays (time axis 0).

    Given states x(k) = abar(k) x(k-1) + d(k) and the upstream cotangent
    dL/dx(k), returns (grad_abar, grad_drive). The reverse recurrence
    lam(k) = upstream(k) + conj(abar(k+1)) lam(k+1) is itself executed as a
    scan; for real inputs the conjugations are no-ops and the result is the
    textbook adjoint.
    """
    a = np.asarray(abar_seq)
    x = np.asarray(x_seq)
    g = np.asarray(upstream)
    if not (a.shape[0] == x.shape[0] == g.shape[0]):
        raise ValidationError("abar_seq, x_seq, upstream must share the time axis")
    return ad._scan_adjoint(a, x, g)


@dataclass
class AdamState:
    """Adam with bias correction, global-norm clipping, decoupled weight decay."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    clip_norm: float | None = 1.0
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(store: ParamStore, state: AdamState) -> float:
    """One optimizer step from the gradients currently on the store.

    Returns the pre-clip global gradient norm. Raises DivergenceError when a
    gradient is non-finite, naming the offending parameters.
    """
    names = store.names()
    bad = [n for n in names if store[n].grad is not None and not np.all(np.isfinite(store[n].grad))]
    if bad:
        raise DivergenceError(f"non-finite gradients for: {', '.join(bad)}")
    sq = 0.0
    for n in names:
        g = store[n].grad
        if g is not None:
            sq += float(np.sum(g * g))
    gnorm = math.sqrt(sq)
    scale = 1.0
    if state.clip_norm is not None and gnorm > state.clip_norm > 0:
        scale = state.clip_norm / gnorm
    state.t += 1
    bc1 = 1.0 - state.beta1**state.t
    bc2 = 1.0 - state.beta2**state.t
    for n in names:
        leaf = store[n]
        g = leaf.grad
        if g is None:
            g = np.zeros_like(leaf.value)
        g = g * scale
        if n not in state.m:
            state.m[n] = np.zeros_like(leaf.value)
            state.v[n] = np.zeros_like(leaf.value)
        state.m[n] = state.beta1 * state.m[n] + (1.0 - state.beta1) * g
        state.v[n] = state.beta2 * state.v[n] + (1.0 - state.beta2) * (g * g)
        mhat = state.m[n] / bc1
        vhat = state.v[n] / bc2
        lr = state.lr * store.lr_scale.get(n, 1.0)
        new = leaf.value - lr * mhat / (np.sqrt(vhat) + state.eps)
        if state.weight_decay > 0.0:
            new = new - lr * state.weight_decay * leaf.value
        leaf.value = new
    store.step_count += 1
    return gnorm


def finite_diff_check(loss_fn, store: ParamStore, eps: float = 1e-5,
                      max_coords_per_param: int | None = None, rng=None):
    """Compare tape gradients against central differences.

    Returns (max_rel_err, worst) where worst names the parameter and flat
    coordinate of the largest relative disagreement
    |g_tape - g_fd| / max(1, |g_tape|, |g_fd|).
    """
    _, analytic = grad(loss_fn, store)
    worst = (0.0, None, None)
    for name in store.names():
        leaf = store[name]
        flat = leaf.value.reshape(-1)
        n = flat.size
        if max_coords_per_param is not None and n > max_coords_per_param:
            if rng is None:
                rng = np.random.default_rng(0)
            coords = rng.choice(n, size=max_coords_per_param, replace=False)
        else:
            coords = range(n)
        ga = analytic[name].reshape(-1)
        base = leaf.value
        for i in coords:
            pert = base.copy()
            pert.reshape(-1)[i] = flat[i] + eps
            leaf.value = pert
            up = float(loss_fn().value)
            pert = base.copy()
            pert.reshape(-1)[i] = flat[i] - eps
            leaf.value = pert
            down = float(loss_fn().value)
            leaf.value = base
            fd = (up - down) / (2.0 * eps)
            err = abs(ga[i] - fd) / max(1.0, abs(ga[i]), abs(fd))
            if err > worst[0]:
                worst = (err, name, int(i))
    return worst[0], {"param": worst[1], "coord": worst[2]}
