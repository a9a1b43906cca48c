"""Execution engines: sequential recurrence, parallel prefix scan, FFT convolution.

All three compute the same map. With the state update running before the
readout,

    x(k) = abar * x(k-1) + bbar u(k),  x(-1) = 0
    y(k) = Re(cbar x(k)) + dbar * u(k)

unrolls to y(k) = sum_{tau<=k} Re(cbar abar^(k-tau) bbar) u(tau) + dbar u(k),
so the recurrence, an associative prefix scan over per-step affine maps, and
a causal convolution with the materialized kernel K_j = Re(cbar abar^j bbar)
must agree to floating-point reassociation error. That agreement is the
package's central invariant and is what the verification suites check.

The scan combines elements (a, b), each an affine map x -> a*x + b, with

    (a1, b1) then (a2, b2)  =  (a2*a1, a2*b1 + b2),     identity (1, 0).

The implementation is the work-efficient pairwise contraction (combine
adjacent pairs, scan the half-length sequence, expand), which costs at most
2T - 2 combines for any T; odd tails pass through a level untouched, i.e.
each level is implicitly padded with the identity element. With `workers` >
1 the time axis is chunked, chunks are scanned concurrently, and an O(W)
carry pass stitches them; results differ from the single-worker path only by
reassociation (~1e-15 relative), at the price of about one extra combine per
element.

Kernels decay like |K_j| <= ||cbar|| ||bbar|| rho^j with rho the largest
|abar_i|; near-unit rho is therefore what long memory looks like here.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .discretize import DplrDiscrete
from .types import DiscreteSystem, DivergenceError, ValidationError, as_sequence

__all__ = [
    "step",
    "run_recurrent",
    "combine",
    "identity_element",
    "scan",
    "run_scan",
    "materialize_kernel",
    "run_convolution",
    "fft_length",
    "combine_counter",
    "default_workers",
]


class CombineCounter:
    """Counts pairwise element combines, for the <= 2T work-bound check."""

    def __init__(self):
        self.count = 0

    def add(self, n: int):
        self.count += int(n)

    def reset(self):
        self.count = 0


combine_counter = CombineCounter()


def default_workers() -> int:
    """Worker count from SSMKIT_WORKERS, else 1."""
    try:
        return max(1, int(os.environ.get("SSMKIT_WORKERS", "1")))
    except ValueError:
        return 1


# ---------------------------------------------------------------- recurrence

def step(sys: DiscreteSystem, x: np.ndarray, u: np.ndarray):
    """One transition: returns (x_next, y) with the state updated first."""
    x_next = sys.abar * x + sys.bbar @ u
    y = (sys.cbar @ x_next).real + sys.dbar * u
    return x_next, y


def run_recurrent(sys, u_seq: np.ndarray, x0: np.ndarray | None = None) -> np.ndarray:
    """Sequential execution over a (T, q) sequence; O(T p) and O(p) memory.

    Accepts a DiscreteSystem or a DplrDiscrete operator. Raises
    DivergenceError naming the first step at which the state went non-finite.
    """
    u_seq = as_sequence(u_seq, q=sys.q)
    T = u_seq.shape[0]
    dplr = isinstance(sys, DplrDiscrete)
    x = np.zeros(sys.p, dtype=complex) if x0 is None else np.asarray(x0, dtype=complex)
    y = np.empty((T, sys.q))
    bbar_t = sys.bbar.T
    with np.errstate(over="ignore", invalid="ignore"):  # overflow is what we detect
        for k in range(T):
            drive = u_seq[k] @ bbar_t
            x = sys.apply(x) + drive if dplr else sys.abar * x + drive
            yk = (sys.cbar @ x).real + sys.dbar * u_seq[k]
            if not np.all(np.isfinite(yk)):
                raise DivergenceError(f"non-finite state at step {k}", step=k)
            y[k] = yk
    return y


# ---------------------------------------------------------------- scan

def combine(e1, e2):
    """Compose affine elements in time order: e1 first, then e2."""
    a1, b1 = e1
    a2, b2 = e2
    combine_counter.add(1)
    return (a2 * a1, a2 * b1 + b2)


def identity_element(shape=(), dtype=np.float64):
    """The scan identity (1, 0)."""
    return (np.ones(shape, dtype=dtype), np.zeros(shape, dtype=dtype))


def _scan_inclusive(a: np.ndarray, d: np.ndarray, counter: CombineCounter):
    """Inclusive prefix of affine elements along axis 0; returns (a_pref, d_pref)."""
    T = a.shape[0]
    if T == 1:
        return a, d
    m = T // 2
    ae, de = a[0 : 2 * m : 2], d[0 : 2 * m : 2]
    ao, do = a[1 : 2 * m : 2], d[1 : 2 * m : 2]
    counter.add(m)
    sa, sd = _scan_inclusive(ao * ae, ao * de + do, counter)
    out_a = np.empty((T,) + sa.shape[1:], dtype=sa.dtype)
    out_d = np.empty((T,) + np.broadcast_shapes(sd.shape[1:], d.shape[1:]), dtype=sd.dtype)
    out_a[1 : 2 * m : 2] = sa
    out_d[1 : 2 * m : 2] = sd
    out_a[0] = a[0]
    out_d[0] = d[0]
    if T > 2:
        tail_a, tail_d = a[2::2], d[2::2]
        L = tail_a.shape[0]
        counter.add(L)
        out_a[2::2] = tail_a * sa[:L]
        out_d[2::2] = tail_a * sd[:L] + tail_d
    return out_a, out_d


def scan(abar_seq: np.ndarray, drive_seq: np.ndarray, workers: int | None = None) -> np.ndarray:
    """States x(k) = abar(k) x(k-1) + drive(k), x(-1) = 0, via parallel prefix.

    Shapes: (T, ...) each; trailing axes broadcast against each other (e.g.
    shared dynamics (T, 1, n) against per-channel drive (T, q, n)). Returns
    the states with the broadcast trailing shape.
    """
    a = np.asarray(abar_seq)
    d = np.asarray(drive_seq)
    if a.ndim < 1 or d.ndim < 1 or a.shape[0] != d.shape[0]:
        raise ValidationError("abar_seq and drive_seq must share the leading time axis")
    np.broadcast_shapes(a.shape, d.shape)  # raises on incompatibility
    T = a.shape[0]
    if workers is None:
        workers = default_workers()
    if workers <= 1 or T < 4 * workers:
        return _scan_inclusive(a, d, combine_counter)[1]

    bounds = np.linspace(0, T, workers + 1).astype(int)
    chunks = [(a[s:e], d[s:e]) for s, e in zip(bounds[:-1], bounds[1:]) if e > s]
    counters = [CombineCounter() for _ in chunks]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        local = list(pool.map(lambda args: _scan_inclusive(*args[0], args[1]), zip(chunks, counters)))
    for c in counters:
        combine_counter.add(c.count)
    pieces = []
    carry = None  # entry state of the current chunk
    for la, ld in local:
        if carry is None:
            pieces.append(ld)
        else:
            combine_counter.add(la.shape[0])
            pieces.append(la * carry + ld)
        carry = pieces[-1][-1]
    return np.concatenate(pieces, axis=0)


def run_scan(sys: DiscreteSystem, u_seq: np.ndarray, workers: int | None = None) -> np.ndarray:
    """LTI execution through the scan engine."""
    u_seq = as_sequence(u_seq, q=sys.q)
    T = u_seq.shape[0]
    drive = u_seq @ sys.bbar.T           # (T, p)
    abar = np.broadcast_to(sys.abar, (T, sys.p))
    x = scan(abar, drive, workers=workers)
    return (x @ sys.cbar.T).real + u_seq * sys.dbar


# ---------------------------------------------------------------- convolution

def fft_length(T: int) -> int:
    """Next power of two >= 2T, so circular convolution acts linearly."""
    return 1 << (2 * T - 1).bit_length()


def materialize_kernel(sys, T: int) -> np.ndarray:
    """Impulse response K of shape (T, q, q): K[j] = Re(cbar abar^j bbar).

    Diagonal transitions use cumulative powers; a diagonal-plus-rank-1
    operator is iterated through its implicit apply (O(T p q)).
    """
    if T < 1:
        raise ValidationError("kernel length must be >= 1")
    if isinstance(sys, DplrDiscrete):
        K = np.empty((T, sys.q, sys.q))
        X = sys.bbar.T  # (q, p), rows are states driven by each input channel
        for t in range(T):
            K[t] = (sys.cbar @ X.T).real
            if t + 1 < T:
                X = sys.apply(X)
        return K
    powers = np.ones((T, sys.p), dtype=complex)
    if T > 1:
        np.cumprod(np.broadcast_to(sys.abar, (T - 1, sys.p)), axis=0, out=powers[1:])
    return np.einsum("ip,tp,pj->tij", sys.cbar, powers, sys.bbar).real


def run_convolution(sys, u_seq: np.ndarray) -> np.ndarray:
    """LTI execution as causal FFT convolution with the materialized kernel."""
    u_seq = as_sequence(u_seq, q=sys.q)
    T = u_seq.shape[0]
    K = materialize_kernel(sys, T)
    n = fft_length(T)
    Kf = np.fft.rfft(K, n=n, axis=0)
    Uf = np.fft.rfft(u_seq, n=n, axis=0)
    Yf = np.einsum("fij,fj->fi", Kf, Uf)
    y = np.fft.irfft(Yf, n=n, axis=0)[:T]
    return y + u_seq * sys.dbar
