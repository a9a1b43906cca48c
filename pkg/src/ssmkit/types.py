"""Core value types shared by every other module.

A sequence is a real float64 array of shape (T, q): T steps, q channels.
State-space systems come in two flavours. A ContinuousSystem holds the
continuous-time dynamics (diagonal by assumption, optionally corrected by a
rank-1 term) together with the step size used to discretize it. A
DiscreteSystem holds the discrete-time transition quantities directly. Both
are frozen: operations return new values instead of mutating.

Complex state is an implementation device; inputs and outputs stay real.
Readouts therefore take the real part of cbar @ x, and models that train
complex parameters store them in conjugate pairs so the real part is the
whole answer, not half of it.

All numerics are float64/complex128. Systems and sequences serialize to a
self-describing JSON schema in which a complex number is a [re, im] pair.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, fields
from typing import Optional

import numpy as np

__all__ = [
    "SsmError",
    "ValidationError",
    "DivergenceError",
    "Sequence",
    "ContinuousSystem",
    "DiscreteSystem",
    "TimeVaryingParams",
    "as_sequence",
    "validate_system",
    "spectral_radius",
    "to_json",
    "from_json",
    "to_json_str",
    "from_json_str",
]

FORMAT = "ssmkit@1"

Sequence = np.ndarray  # (T, q) float64, C-contiguous


class SsmError(Exception):
    """Base class for errors raised by this package."""


class ValidationError(SsmError, ValueError):
    """Malformed sequence, system, or configuration."""


class DivergenceError(SsmError, ArithmeticError):
    """Non-finite values appeared during execution or training."""

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message)
        self.step = step


def _frozen_array(a, dtype) -> np.ndarray:
    out = np.array(a, dtype=dtype, order="C")
    out.setflags(write=False)
    return out


def as_sequence(u, q: int | None = None) -> Sequence:
    """Validate and coerce `u` to a (T, q) float64 sequence.

    Raises ValidationError for wrong rank, empty time axis, non-finite
    entries, or (when `q` is given) a channel-count mismatch.
    """
    arr = np.asarray(u, dtype=np.float64)
    if arr.ndim != 2:
        raise ValidationError(f"sequence must be 2-D (T, q), got shape {arr.shape}")
    if arr.shape[0] == 0:
        raise ValidationError("sequence must contain at least one step")
    if q is not None and arr.shape[1] != q:
        raise ValidationError(f"sequence has {arr.shape[1]} channels, expected {q}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError("sequence contains non-finite entries")
    return np.ascontiguousarray(arr)


@dataclass(frozen=True)
class ContinuousSystem:
    """Continuous-time dynamics x' = A x + B u, y = Re(C x) + D u.

    A = diag(lam), optionally plus the rank-1 correction r s* when
    `low_rank` = (r, s) is present. `delta` is the step size handed to the
    discretization routines.
    """

    lam: np.ndarray           # (p,) complex
    B: np.ndarray             # (p, q) complex
    C: np.ndarray             # (q, p) complex
    D: np.ndarray             # (q,) real
    delta: float
    low_rank: Optional[tuple] = None  # (r, s), each (p,) complex

    def __post_init__(self):
        object.__setattr__(self, "lam", _frozen_array(self.lam, np.complex128))
        object.__setattr__(self, "B", _frozen_array(self.B, np.complex128))
        object.__setattr__(self, "C", _frozen_array(self.C, np.complex128))
        object.__setattr__(self, "D", _frozen_array(self.D, np.float64))
        object.__setattr__(self, "delta", float(self.delta))
        if self.low_rank is not None:
            r, s = self.low_rank
            object.__setattr__(
                self,
                "low_rank",
                (_frozen_array(r, np.complex128), _frozen_array(s, np.complex128)),
            )

    @property
    def p(self) -> int:
        return self.lam.shape[0]

    @property
    def q(self) -> int:
        return self.D.shape[0]


@dataclass(frozen=True)
class DiscreteSystem:
    """Discrete-time system x(k) = abar*x(k-1) + bbar u(k), y = Re(cbar x) + dbar u.

    `abar` is the diagonal of the transition matrix. The state update runs
    before the readout, so y(k) already sees u(k) through both bbar and dbar.
    """

    abar: np.ndarray  # (p,) complex
    bbar: np.ndarray  # (p, q) complex
    cbar: np.ndarray  # (q, p) complex
    dbar: np.ndarray  # (q,) real

    def __post_init__(self):
        object.__setattr__(self, "abar", _frozen_array(self.abar, np.complex128))
        object.__setattr__(self, "bbar", _frozen_array(self.bbar, np.complex128))
        object.__setattr__(self, "cbar", _frozen_array(self.cbar, np.complex128))
        object.__setattr__(self, "dbar", _frozen_array(self.dbar, np.float64))

    @property
    def p(self) -> int:
        return self.abar.shape[0]

    @property
    def q(self) -> int:
        return self.dbar.shape[0]


@dataclass(frozen=True)
class TimeVaryingParams:
    """Per-step transition quantities for input-dependent (LTV) models.

    abar_seq[k] multiplies the previous state elementwise; drive[k] is the
    already-formed input injection bbar_k * u(k). For models with per-step
    readouts, c_seq[k] holds the readout vector. Shapes beyond the leading
    time axis are model-specific: (T, p) for a width-p gated recurrence,
    (T, n, q) drive with (T, n) abar/c for a shared-state selective model.
    """

    abar_seq: np.ndarray
    drive: np.ndarray
    c_seq: Optional[np.ndarray] = None
    delta_seq: Optional[np.ndarray] = None

    def __post_init__(self):
        dt = np.complex128 if np.iscomplexobj(self.abar_seq) else np.float64
        object.__setattr__(self, "abar_seq", _frozen_array(self.abar_seq, dt))
        object.__setattr__(self, "drive", _frozen_array(self.drive, dt))
        if self.c_seq is not None:
            object.__setattr__(self, "c_seq", _frozen_array(self.c_seq, dt))
        if self.delta_seq is not None:
            object.__setattr__(self, "delta_seq", _frozen_array(self.delta_seq, np.float64))


def _check_finite(name, arr):
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} contains non-finite entries")


def validate_system(sys) -> None:
    """Check shapes, finiteness, and positivity constraints; raise ValidationError."""
    if isinstance(sys, ContinuousSystem):
        p, q = sys.p, sys.q
        if sys.lam.shape != (p,):
            raise ValidationError("lam must be a 1-D complex vector")
        if sys.B.shape != (p, q):
            raise ValidationError(f"B shape {sys.B.shape} != ({p}, {q})")
        if sys.C.shape != (q, p):
            raise ValidationError(f"C shape {sys.C.shape} != ({q}, {p})")
        for name in ("lam", "B", "C", "D"):
            _check_finite(name, getattr(sys, name))
        if not (np.isfinite(sys.delta) and sys.delta > 0):
            raise ValidationError(f"delta must be finite and > 0, got {sys.delta}")
        if sys.low_rank is not None:
            r, s = sys.low_rank
            if r.shape != (p,) or s.shape != (p,):
                raise ValidationError("low_rank vectors must both have shape (p,)")
            _check_finite("low_rank.r", r)
            _check_finite("low_rank.s", s)
    elif isinstance(sys, DiscreteSystem):
        p, q = sys.p, sys.q
        if sys.bbar.shape != (p, q):
            raise ValidationError(f"bbar shape {sys.bbar.shape} != ({p}, {q})")
        if sys.cbar.shape != (q, p):
            raise ValidationError(f"cbar shape {sys.cbar.shape} != ({q}, {p})")
        for name in ("abar", "bbar", "cbar", "dbar"):
            _check_finite(name, getattr(sys, name))
    else:
        raise ValidationError(f"not a system: {type(sys).__name__}")


def spectral_radius(sys) -> float:
    """Largest transition-eigenvalue modulus.

    Accepts a DiscreteSystem (diagonal abar), a 1-D array of eigenvalues,
    or a square transition matrix.
    """
    if isinstance(sys, DiscreteSystem):
        return float(np.max(np.abs(sys.abar)))
    arr = np.asarray(sys)
    if arr.ndim == 1:
        return float(np.max(np.abs(arr)))
    if arr.ndim == 2 and arr.shape[0] == arr.shape[1]:
        return float(np.max(np.abs(np.linalg.eigvals(arr))))
    raise ValidationError("spectral_radius expects a system, eigenvalue vector, or square matrix")


# ---------------------------------------------------------------------------
# JSON serialization: complex scalars encode as [re, im]; arrays as nested
# lists; every document carries a format marker and a kind tag.

def _encode_array(arr: np.ndarray):
    if np.iscomplexobj(arr):
        return np.stack([arr.real, arr.imag], axis=-1).tolist()
    return arr.tolist()


def _decode_array(data, complex_valued: bool) -> np.ndarray:
    arr = np.asarray(data, dtype=np.float64)
    if complex_valued:
        return (arr[..., 0] + 1j * arr[..., 1]).astype(np.complex128)
    return arr


def to_json(obj) -> dict:
    """Encode a system or sequence as a self-describing JSON document."""
    if isinstance(obj, ContinuousSystem):
        doc = {
            "format": FORMAT,
            "kind": "continuous_system",
            "lam": _encode_array(obj.lam),
            "B": _encode_array(obj.B),
            "C": _encode_array(obj.C),
            "D": _encode_array(obj.D),
            "delta": obj.delta,
            "low_rank": None,
        }
        if obj.low_rank is not None:
            r, s = obj.low_rank
            doc["low_rank"] = {"r": _encode_array(r), "s": _encode_array(s)}
        return doc
    if isinstance(obj, DiscreteSystem):
        return {
            "format": FORMAT,
            "kind": "discrete_system",
            "abar": _encode_array(obj.abar),
            "bbar": _encode_array(obj.bbar),
            "cbar": _encode_array(obj.cbar),
            "dbar": _encode_array(obj.dbar),
        }
    if isinstance(obj, np.ndarray):
        seq = as_sequence(obj)
        return {"format": FORMAT, "kind": "sequence", "data": _encode_array(seq)}
    raise ValidationError(f"cannot serialize {type(obj).__name__}")


def from_json(doc: dict):
    """Inverse of to_json."""
    if not isinstance(doc, dict) or doc.get("format") != FORMAT:
        raise ValidationError("not a recognized document (missing or wrong format marker)")
    kind = doc.get("kind")
    if kind == "continuous_system":
        low_rank = None
        if doc.get("low_rank") is not None:
            low_rank = (
                _decode_array(doc["low_rank"]["r"], True),
                _decode_array(doc["low_rank"]["s"], True),
            )
        return ContinuousSystem(
            lam=_decode_array(doc["lam"], True),
            B=_decode_array(doc["B"], True),
            C=_decode_array(doc["C"], True),
            D=_decode_array(doc["D"], False),
            delta=doc["delta"],
            low_rank=low_rank,
        )
    if kind == "discrete_system":
        return DiscreteSystem(
            abar=_decode_array(doc["abar"], True),
            bbar=_decode_array(doc["bbar"], True),
            cbar=_decode_array(doc["cbar"], True),
            dbar=_decode_array(doc["dbar"], False),
        )
    if kind == "sequence":
        return as_sequence(_decode_array(doc["data"], False))
    raise ValidationError(f"unknown document kind: {kind!r}")


def to_json_str(obj) -> str:
    return json.dumps(to_json(obj))


def from_json_str(blob: str):
    return from_json(json.loads(blob))


def _dataclass_field_names(obj):
    return [f.name for f in fields(obj)]
