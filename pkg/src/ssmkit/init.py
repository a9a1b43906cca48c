"""Principled initializers for the six model kinds.

Discretized eigenvalue geometry is the whole story here: a state remembers
roughly as long as |abar| stays near 1 (and |abar| < 1 keeps it stable), so
every initializer below places eigenvalues deliberately rather than randomly.

- s4 / s4d: the diagonal ladder lam_n = -1/2 + i*pi*n for n = 0..p/2-1,
  stored with conjugate mirrors; s4 adds rank-1 vectors of magnitude
  sqrt(n + 1/2), stored as (r, -r) so the correction diag(lam) + r s^H is
  subtracted and dissipative: A + A^H = -I - 2rr^T is negative definite,
  so every eigenvalue of the full matrix has real part <= -1/2. (With the
  correction added instead, the spectrum spills into the right half-plane
  from p = 4 on.) Both ladders sit in the left half-plane, so either
  discretization lands inside the unit disk, near its rim for small delta.
- s5: n_blocks copies of the smaller ladder (one multi-input block per copy).
- lru: direct disk placement, radii uniform in r^2 over [r_min, r_max] and
  phases uniform in [0, max_phase] (mirrored), stored as nu = log(-log r) so
  |abar| = exp(-exp(nu)) < 1 for every real nu; input normalization
  gamma = log sqrt(1 - r^2) per state.
- s6: lam_i = -i for i = 1..p, with the step-size projection biased so the
  at-rest delta lands at the geometric mean of delta_range.
- rglru: the at-rest recurrence gate exp(-c*softplus(w_a)*sigmoid(0)) is
  solved per channel for a target radius drawn from the lru ring law.

Step sizes are log-uniform over delta_range. All draws come from named
substreams of InitSpec.seed, so identical specs give bitwise-identical
parameters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .discretize import bilinear, zoh
from .seeding import substream
from .types import ContinuousSystem, DiscreteSystem, ValidationError

__all__ = [
    "KINDS",
    "InitSpec",
    "mirror_conjugate",
    "ladder",
    "lru_abar",
    "softplus_inv",
    "init_s4",
    "init_s4d",
    "init_s5",
    "init_lru",
    "init_s6",
    "init_rglru",
    "init_model_params",
    "eig_scatter",
]

KINDS = ("s4", "s4d", "s5", "lru", "s6", "rglru")


@dataclass(frozen=True)
class InitSpec:
    """What to initialize and how. p is the state size, q the channel count."""

    kind: str
    p: int
    q: int
    seed: int = 0
    delta_range: tuple = (1e-3, 1e-1)
    lru_ring: tuple = (0.9, 0.999, math.pi)  # (r_min, r_max, max_phase)
    n_blocks: int = 1
    radius_cap: float | None = None  # cap |abar| at init (ablation knob)
    c: float = 8.0                   # rglru decay constant

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValidationError(f"unknown kind {self.kind!r}, expected one of {KINDS}")
        if self.p < 1 or self.q < 1:
            raise ValidationError("p and q must be >= 1")
        if self.kind in ("s4", "s4d", "s5", "lru") and self.p % 2:
            raise ValidationError(f"{self.kind} stores conjugate pairs; p must be even")
        if self.kind == "s5" and (self.p % self.n_blocks or (self.p // self.n_blocks) % 2):
            raise ValidationError("s5 needs p divisible by n_blocks with even blocks")
        if self.kind == "rglru" and self.p != self.q:
            raise ValidationError("rglru state feeds back directly; p must equal q")
        lo, hi = self.delta_range
        if not (0 < lo <= hi):
            raise ValidationError("delta_range must be positive and ordered")
        if len(self.lru_ring) == 2:  # phase bound optional, defaults to pi
            object.__setattr__(self, "lru_ring", (*self.lru_ring, math.pi))
        if len(self.lru_ring) != 3:
            raise ValidationError("lru_ring is (r_min, r_max[, max_phase])")
        r_min, r_max, max_phase = self.lru_ring
        if not (0 < r_min < r_max <= 1):
            raise ValidationError("lru_ring needs 0 < r_min < r_max <= 1")
        if max_phase <= 0:
            raise ValidationError("lru_ring max_phase must be positive")


def mirror_conjugate(x: np.ndarray, axis: int = 0) -> np.ndarray:
    """Append the complex conjugate along `axis` (half-storage to full)."""
    return np.concatenate([x, np.conj(x)], axis=axis)


def ladder(half: int) -> np.ndarray:
    """Half-spectrum lam_n = -1/2 + i*pi*n, n = 0..half-1."""
    return -0.5 + 1j * math.pi * np.arange(half)


def lru_abar(nu, theta):
    """Ring parameterization abar = exp(-exp(nu) + i theta); |abar| < 1 always."""
    return np.exp(-np.exp(np.asarray(nu, dtype=np.float64)) + 1j * np.asarray(theta, dtype=np.float64))


def softplus_inv(y):
    """Inverse of log(1 + e^x) for y > 0."""
    y = np.asarray(y, dtype=np.float64)
    return np.where(y > 30.0, y, np.log(np.expm1(np.maximum(y, 1e-300))))


def _sample_delta(spec: InitSpec, rng) -> float:
    lo, hi = spec.delta_range
    return float(np.exp(rng.uniform(np.log(lo), np.log(hi))))


def _complex_normal(rng, shape, fan_in):
    scale = 1.0 / math.sqrt(2.0 * fan_in)  # complex variance 1/fan_in
    return scale * (rng.normal(size=shape) + 1j * rng.normal(size=shape))


def _ring_radii(rng, n, r_min, r_max):
    u = rng.uniform(0.0, 1.0, n)
    return np.sqrt(r_min**2 + u * (r_max**2 - r_min**2))


def _capped_ladder(spec: InitSpec, delta: float, rng) -> np.ndarray:
    """Ladder, optionally with real parts forced so |abar| <= radius_cap under zoh."""
    lam = ladder(spec.p // 2)
    if spec.radius_cap is not None:
        radii = rng.uniform(spec.radius_cap / 2.0, spec.radius_cap, spec.p // 2)
        lam = np.log(radii) / delta + 1j * lam.imag
    return lam


def init_s4(spec: InitSpec) -> ContinuousSystem:
    """Diagonal-plus-rank-1 template: ladder diagonal plus a subtracted
    rank-1 correction of magnitude sqrt(n + 1/2), stored as (r, -r)."""
    rng = substream(spec.seed, "init", spec.kind)
    half = spec.p // 2
    delta = _sample_delta(spec, rng)
    lam = mirror_conjugate(_capped_ladder(spec, delta, rng))
    rs = np.sqrt(np.arange(half) + 0.5).astype(complex)
    r = mirror_conjugate(rs)
    B = mirror_conjugate(_complex_normal(rng, (half, spec.q), spec.q))
    C = mirror_conjugate(_complex_normal(rng, (spec.q, half), spec.p), axis=1)
    return ContinuousSystem(lam=lam, B=B, C=C, D=np.ones(spec.q), delta=delta, low_rank=(r, -r))


def init_s4d(spec: InitSpec) -> ContinuousSystem:
    """Purely diagonal ladder template (the s4 spectrum without the rank-1 part)."""
    rng = substream(spec.seed, "init", spec.kind)
    half = spec.p // 2
    delta = _sample_delta(spec, rng)
    lam = mirror_conjugate(_capped_ladder(spec, delta, rng))
    B = mirror_conjugate(_complex_normal(rng, (half, spec.q), spec.q))
    C = mirror_conjugate(_complex_normal(rng, (spec.q, half), spec.p), axis=1)
    return ContinuousSystem(lam=lam, B=B, C=C, D=np.ones(spec.q), delta=delta)


def init_s5(spec: InitSpec, n_blocks: int | None = None) -> ContinuousSystem:
    """Multi-input system whose spectrum is n_blocks copies of the smaller ladder."""
    rng = substream(spec.seed, "init", spec.kind)
    nb = spec.n_blocks if n_blocks is None else n_blocks
    if spec.p % nb or (spec.p // nb) % 2:
        raise ValidationError("s5 needs p divisible by n_blocks with even blocks")
    block_half = spec.p // nb // 2
    half_lam = np.tile(ladder(block_half), nb)
    lam = mirror_conjugate(half_lam)
    half = spec.p // 2
    B = mirror_conjugate(_complex_normal(rng, (half, spec.q), spec.q))
    C = mirror_conjugate(_complex_normal(rng, (spec.q, half), spec.p), axis=1)
    return ContinuousSystem(lam=lam, B=B, C=C, D=np.ones(spec.q), delta=_sample_delta(spec, rng))


def init_lru(spec: InitSpec) -> DiscreteSystem:
    """Direct unit-disk placement: radii uniform in r^2 over the ring, phases
    uniform in [0, max_phase], mirrored; bbar = e^gamma * Gamma with
    gamma = log sqrt(1 - r^2)."""
    rng = substream(spec.seed, "init", spec.kind)
    half = spec.p // 2
    r_min, r_max, max_phase = spec.lru_ring
    r = _ring_radii(rng, half, r_min, r_max)
    theta = rng.uniform(0.0, max_phase, half)
    nu = np.log(-np.log(r))
    abar = mirror_conjugate(lru_abar(nu, theta))
    gamma = 0.5 * np.log1p(-r**2)
    Gamma = _complex_normal(rng, (half, spec.q), spec.q)
    bbar = mirror_conjugate(np.exp(gamma)[:, None] * Gamma)
    cbar = mirror_conjugate(_complex_normal(rng, (spec.q, half), spec.p), axis=1)
    return DiscreteSystem(abar=abar, bbar=bbar, cbar=cbar, dbar=np.ones(spec.q))


def init_s6(spec: InitSpec) -> dict:
    """Selective-model parameters: lam_i = -i, input-dependent projections.

    The step-size projection is a 1 x q map with a scalar bias chosen so the
    at-rest step softplus(bias) equals the geometric mean of delta_range.
    """
    rng = substream(spec.seed, "init", spec.kind)
    lo, hi = spec.delta_range
    return {
        "lam": -np.arange(1.0, spec.p + 1.0),
        "W_delta": rng.normal(size=(1, spec.q)) / math.sqrt(spec.q),
        "b_delta": np.array([float(softplus_inv(math.sqrt(lo * hi)))]),
        "W_B": rng.normal(size=(spec.p, spec.q)) / math.sqrt(spec.q),
        "W_C": rng.normal(size=(spec.p, spec.q)) / math.sqrt(spec.q),
        "D": np.ones(spec.q),
    }


def init_rglru(spec: InitSpec) -> dict:
    """Gated-ring parameters: w_a solved so the at-rest radius sits in the ring."""
    rng = substream(spec.seed, "init", spec.kind)
    radii = _ring_radii(rng, spec.p, spec.lru_ring[0], spec.lru_ring[1])
    # at rest: abar = exp(-c * softplus(w_a) * 0.5) = r  =>  softplus(w_a) = -2 ln r / c
    w_a = softplus_inv(-2.0 * np.log(radii) / spec.c)
    return {
        "w_a": w_a,
        "W_delta": rng.normal(size=(spec.p, spec.p)) / math.sqrt(spec.p),
        "W_B": rng.normal(size=(spec.p, spec.p)) / math.sqrt(spec.p),
        "c": np.array([spec.c]),
    }


_INIT_FNS = {
    "s4": init_s4,
    "s4d": init_s4d,
    "s5": init_s5,
    "lru": init_lru,
    "s6": init_s6,
    "rglru": init_rglru,
}


def init_model_params(spec: InitSpec):
    """Dispatch to the kind-specific initializer."""
    return _INIT_FNS[spec.kind](spec)


def default_discretization(kind: str):
    """The map each time-invariant kind trains with (s4 bilinear, else hold)."""
    return bilinear if kind == "s4" else zoh


def eig_scatter(model, sample_inputs=None) -> list[dict]:
    """Transition-eigenvalue records for plots: model, input_id, step, re, im.

    Time-invariant models produce one record per eigenvalue with input_id =
    step = -1. Input-gated models produce per-step records for each provided
    sample input. `model` is anything exposing eigenvalue_records().
    """
    records = []
    for input_id, step, z in model.eigenvalue_records(sample_inputs):
        records.append({
            "model": model.kind,
            "input_id": int(input_id),
            "step": int(step),
            "re": float(np.real(z)),
            "im": float(np.imag(z)),
        })
    return records
