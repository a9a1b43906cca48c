"""Continuous-to-discrete maps for diagonal and diagonal-plus-rank-1 dynamics.

Two maps are provided. The bilinear (Tustin) map

    abar = (1 + delta*lam/2) / (1 - delta*lam/2),   bbar = delta*B / (1 - delta*lam/2)

and the exact zero-order-hold map

    abar = exp(delta*lam),   bbar = lam^-1 (abar - 1) B.

The hold map is implemented in the cancelled form above: the delta*B factor
and the (delta*lam)^-1 factor cancel one delta, so delta reaches bbar only
through abar. Near lam = 0 the quotient (e^z - 1)/z is evaluated by Taylor
series (|z| < 1e-4), which also makes lam = 0 well defined as the limit
bbar = delta*B.

Both maps send the open left half-plane into the open unit disk, which is
what keeps discretized systems stable and, close to the unit circle,
long-memoried.

For dynamics A = diag(lam) + r s* the bilinear resolvent is applied through
the Sherman-Morrison identity, so only scalars and diagonals are ever
inverted. The result is an implicit operator: it can apply the transition to
a state batch and can materialize the dense transition when a test wants to
compare against plain linear algebra.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .types import ContinuousSystem, DiscreteSystem, SsmError, ValidationError, validate_system

__all__ = [
    "DiscretizationError",
    "bilinear",
    "zoh",
    "zoh_timevarying",
    "bilinear_dplr",
    "DplrDiscrete",
    "expm1_over_z",
]

_SERIES_CUTOFF = 1e-4


class DiscretizationError(SsmError, ArithmeticError):
    """Pole or degenerate denominator in a discretization map."""


def expm1_over_z(z: np.ndarray) -> np.ndarray:
    """(e^z - 1)/z, Taylor-expanded for |z| < 1e-4 (exact limit 1 at z = 0)."""
    z = np.asarray(z)
    small = np.abs(z) < _SERIES_CUTOFF
    zs = np.where(small, 0.0, z)  # keep the true branch free of 0/0
    with np.errstate(invalid="ignore", divide="ignore"):
        direct = np.expm1(zs) / np.where(small, 1.0, zs)
    series = 1.0 + z / 2.0 + z * z / 6.0 + z * z * z / 24.0
    return np.where(small, series, direct)


def bilinear(sys: ContinuousSystem) -> DiscreteSystem:
    """Bilinear map of a diagonal continuous system (the low-rank part, if any, is ignored)."""
    validate_system(sys)
    half = 0.5 * sys.delta * sys.lam
    denom = 1.0 - half
    if np.any(np.abs(denom) < 1e-12):
        raise DiscretizationError("bilinear pole: 1 - delta*lam/2 vanishes for some state")
    abar = (1.0 + half) / denom
    bbar = (sys.delta * sys.B) / denom[:, None]
    return DiscreteSystem(abar=abar, bbar=bbar, cbar=sys.C, dbar=sys.D)


def zoh(sys: ContinuousSystem) -> DiscreteSystem:
    """Zero-order-hold map of a diagonal continuous system."""
    validate_system(sys)
    z = sys.delta * sys.lam
    abar = np.exp(z)
    bbar = (sys.delta * expm1_over_z(z))[:, None] * sys.B
    return DiscreteSystem(abar=abar, bbar=bbar, cbar=sys.C, dbar=sys.D)


def zoh_timevarying(lam: np.ndarray, delta_seq: np.ndarray, b_seq: np.ndarray):
    """Per-step hold map for input-dependent models.

    lam: (n,) dynamics diagonal (real or complex); delta_seq: (T,) positive
    step sizes; b_seq: (T, n) per-step input vectors. Returns (abar_seq,
    bbar_seq), both (T, n): abar_k = exp(delta_k lam), bbar_k =
    lam^-1 (abar_k - 1) b_k with the same series treatment as `zoh`.
    """
    lam = np.asarray(lam)
    delta_seq = np.asarray(delta_seq, dtype=np.float64)
    b_seq = np.asarray(b_seq)
    if delta_seq.ndim != 1 or np.any(delta_seq <= 0) or not np.all(np.isfinite(delta_seq)):
        raise ValidationError("delta_seq must be a 1-D positive vector")
    if b_seq.shape != (delta_seq.shape[0], lam.shape[0]):
        raise ValidationError(f"b_seq shape {b_seq.shape} != (T, n) = ({delta_seq.shape[0]}, {lam.shape[0]})")
    z = delta_seq[:, None] * lam[None, :]
    abar_seq = np.exp(z)
    bbar_seq = delta_seq[:, None] * expm1_over_z(z) * b_seq
    return abar_seq, bbar_seq


@dataclass(frozen=True)
class DplrDiscrete:
    """Bilinear discretization of A = diag(lam) + r s*, held implicitly.

    The transition abar = (I - delta/2 A)^-1 (I + delta/2 A) is never formed
    unless `dense()` is called; `apply` uses the Sherman-Morrison expansion
    of the resolvent, so a matvec costs O(p).
    """

    lam: np.ndarray      # (p,)
    r: np.ndarray        # (p,)
    s: np.ndarray        # (p,)
    delta: float
    bbar: np.ndarray     # (p, q)
    cbar: np.ndarray     # (q, p)
    dbar: np.ndarray     # (q,)
    _d_minus: np.ndarray  # diag of I - delta/2 diag(lam)
    _d_plus: np.ndarray   # diag of I + delta/2 diag(lam)
    _denom: complex       # 1 - (delta/2) s^H D_minus^-1 r

    @property
    def p(self) -> int:
        return self.lam.shape[0]

    @property
    def q(self) -> int:
        return self.dbar.shape[0]

    def _solve_minus(self, w: np.ndarray) -> np.ndarray:
        """(I - delta/2 A)^-1 w along the last axis, via Sherman-Morrison."""
        half = 0.5 * self.delta
        w0 = w / self._d_minus
        coef = (w0 * np.conj(self.s)).sum(axis=-1, keepdims=True)
        return w0 + (half / self._denom) * coef * (self.r / self._d_minus)

    def apply(self, x: np.ndarray) -> np.ndarray:
        """abar @ x for x of shape (..., p)."""
        half = 0.5 * self.delta
        w = self._d_plus * x + half * (x * np.conj(self.s)).sum(axis=-1, keepdims=True) * self.r
        return self._solve_minus(w)

    def dense(self) -> np.ndarray:
        """Materialize abar as a dense (p, p) matrix (tests and small p only)."""
        return self.apply(np.eye(self.p, dtype=complex)).T


def bilinear_dplr(sys: ContinuousSystem) -> DplrDiscrete:
    """Bilinear map for diagonal-plus-rank-1 dynamics; only scalar inversions occur."""
    validate_system(sys)
    if sys.low_rank is None:
        raise ValidationError("bilinear_dplr needs low_rank = (r, s)")
    r, s = sys.low_rank
    half = 0.5 * sys.delta
    d_minus = 1.0 - half * sys.lam
    d_plus = 1.0 + half * sys.lam
    if np.any(np.abs(d_minus) < 1e-12):
        raise DiscretizationError("bilinear pole: 1 - delta*lam/2 vanishes for some state")
    denom = 1.0 - half * np.sum(np.conj(s) * r / d_minus)
    scale = max(1.0, float(np.max(np.abs(r)) * np.max(np.abs(s)) * half))
    if np.abs(denom) < 1e-12 * scale:
        raise DiscretizationError("Sherman-Morrison denominator is degenerate")
    op = DplrDiscrete(
        lam=sys.lam, r=r, s=s, delta=sys.delta,
        bbar=np.zeros((sys.p, sys.q), dtype=complex),
        cbar=sys.C, dbar=sys.D,
        _d_minus=d_minus, _d_plus=d_plus, _denom=complex(denom),
    )
    bbar = op._solve_minus((sys.delta * sys.B).T).T
    object.__setattr__(op, "bbar", bbar)
    return op
