"""Discretization maps: golden scalars, series branch, dense oracle, disk geometry.

Expected values below are frozen from closed forms evaluated independently
(exact fractions / np scalar math), not read back from the implementation.
"""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ssmkit import discretize as dz
from ssmkit.types import ContinuousSystem, ValidationError


def _scalar_sys(lam, delta, b=1.0, c=1.0, d=0.0):
    return ContinuousSystem(
        lam=np.array([lam], dtype=complex),
        B=np.array([[b]], dtype=complex),
        C=np.array([[c]], dtype=complex),
        D=np.array([d]),
        delta=delta,
    )


# Golden values, computed by hand:
#   bilinear, lam=-1, delta=0.1:  abar = (1-0.05)/(1+0.05) = 19/21
#   zoh,      lam=-1, delta=0.1:  abar = e^-0.1, bbar = 1 - e^-0.1
BILINEAR_GOLD = 19.0 / 21.0                  # 0.904761904761...
ZOH_ABAR_GOLD = float(np.exp(-0.1))          # 0.904837418035...
ZOH_BBAR_GOLD = float(1.0 - np.exp(-0.1))    # 0.095162581964...


def test_bilinear_golden_scalar():
    d = dz.bilinear(_scalar_sys(-1.0, 0.1))
    assert d.abar[0] == pytest.approx(BILINEAR_GOLD, abs=1e-12)
    assert d.bbar[0, 0] == pytest.approx(0.1 / 1.05, abs=1e-12)
    np.testing.assert_array_equal(d.cbar, [[1.0]])
    np.testing.assert_array_equal(d.dbar, [0.0])


def test_zoh_golden_scalar():
    d = dz.zoh(_scalar_sys(-1.0, 0.1))
    assert d.abar[0] == pytest.approx(ZOH_ABAR_GOLD, abs=1e-12)
    assert d.bbar[0, 0] == pytest.approx(ZOH_BBAR_GOLD, abs=1e-12)


def test_zoh_half_life_step():
    # lam = -ln2/delta makes one step halve the state exactly.
    delta = 0.05
    d = dz.zoh(_scalar_sys(-np.log(2.0) / delta, delta))
    assert d.abar[0] == pytest.approx(0.5, abs=1e-12)


def test_bilinear_pole_raises():
    # 1 - delta*lam/2 == 0 at lam = 2/delta
    with pytest.raises(dz.DiscretizationError):
        dz.bilinear(_scalar_sys(2.0 / 0.1, 0.1))


def test_zoh_series_branch_matches_cancelled_form():
    # Just above the series cutoff the two branches must agree tightly.
    for z in (1e-4 + 1e-9, 2e-4, 1e-3):
        lam = -z / 0.1
        d = dz.zoh(_scalar_sys(lam, 0.1))
        direct = (np.exp(-z) - 1.0) / lam
        assert d.bbar[0, 0] == pytest.approx(direct, rel=1e-13)
    # Below the cutoff, compare against the series evaluated independently.
    z = 1e-6
    lam = -z / 0.1
    d = dz.zoh(_scalar_sys(lam, 0.1))
    series = 0.1 * (1.0 + (-z) / 2.0 + z * z / 6.0 + (-z) ** 3 / 24.0)
    assert d.bbar[0, 0] == pytest.approx(series, rel=1e-14)


def test_zoh_zero_lambda_limit():
    # lam -> 0 limit: abar = 1, bbar = delta * B (Euler step of the integrator).
    d = dz.zoh(_scalar_sys(0.0, 0.25, b=2.0))
    assert d.abar[0] == pytest.approx(1.0, abs=1e-15)
    assert d.bbar[0, 0] == pytest.approx(0.5, abs=1e-15)


def test_small_delta_consistency():
    # Both maps agree with I + delta*lam to O(delta^2).
    rng = np.random.default_rng(0)
    lam = -rng.uniform(0.1, 1.0, 6) + 1j * rng.normal(size=6)
    sys = ContinuousSystem(
        lam=lam,
        B=np.ones((6, 1), dtype=complex),
        C=np.ones((1, 6), dtype=complex),
        D=np.zeros(1),
        delta=1e-6,
    )
    for f in (dz.bilinear, dz.zoh):
        d = f(sys)
        np.testing.assert_allclose(d.abar, 1.0 + 1e-6 * lam, atol=1e-11)


@settings(max_examples=200, deadline=None)
@given(
    st.floats(min_value=-50.0, max_value=-1e-3),
    st.floats(min_value=-50.0, max_value=50.0),
    st.floats(min_value=1e-4, max_value=1.0),
)
def test_left_halfplane_maps_into_open_unit_disk(re, im, delta):
    sys = _scalar_sys(complex(re, im), delta)
    assert abs(dz.bilinear(sys).abar[0]) < 1.0
    assert abs(dz.zoh(sys).abar[0]) < 1.0


def test_zoh_timevarying_golden():
    # lam=-1, delta_k=ln2, B_k=1: abar_k = 0.5, bbar_k = 0.5 at every step.
    T = 4
    lam = np.array([-1.0])
    abar, bbar = dz.zoh_timevarying(lam, np.full(T, np.log(2.0)), np.ones((T, 1)))
    np.testing.assert_allclose(abar, 0.5, atol=1e-12)
    np.testing.assert_allclose(bbar, 0.5, atol=1e-12)


def test_zoh_timevarying_matches_per_step_zoh():
    rng = np.random.default_rng(1)
    n, T = 5, 9
    lam = -rng.uniform(0.1, 3.0, n)
    deltas = rng.uniform(1e-3, 0.5, T)
    Bs = rng.normal(size=(T, n))
    abar, bbar = dz.zoh_timevarying(lam, deltas, Bs)
    assert abar.shape == (T, n) and bbar.shape == (T, n)
    for k in range(T):
        sys = ContinuousSystem(
            lam=lam.astype(complex),
            B=Bs[k][:, None].astype(complex),
            C=np.ones((1, n), dtype=complex),
            D=np.zeros(1),
            delta=deltas[k],
        )
        d = dz.zoh(sys)
        np.testing.assert_allclose(abar[k], d.abar.real, atol=1e-13)
        np.testing.assert_allclose(bbar[k], d.bbar[:, 0].real, atol=1e-13)


# ---------------------------------------------------------------------------
# Diagonal-plus-rank-1: implicit operator vs dense linear-algebra oracle.

def _random_dplr(rng, p, q):
    lam = -rng.uniform(0.2, 2.0, p) + 1j * rng.normal(size=p)
    r = rng.normal(size=p) + 1j * rng.normal(size=p)
    s = rng.normal(size=p) + 1j * rng.normal(size=p)
    B = rng.normal(size=(p, q)) + 1j * rng.normal(size=(p, q))
    C = rng.normal(size=(q, p)) + 1j * rng.normal(size=(q, p))
    D = rng.normal(size=q)
    return ContinuousSystem(lam=lam, B=B, C=C, D=D, delta=0.1, low_rank=(r, s))


def _dense_oracle(sys):
    p = sys.p
    r, s = sys.low_rank
    A = np.diag(sys.lam) + np.outer(r, np.conj(s))
    M = np.eye(p) - (sys.delta / 2.0) * A
    P = np.eye(p) + (sys.delta / 2.0) * A
    abar = np.linalg.solve(M, P)
    bbar = np.linalg.solve(M, sys.delta * sys.B)
    return abar, bbar


@pytest.mark.parametrize("p,q,seed", [(2, 1, 0), (4, 2, 1), (8, 3, 2), (8, 1, 3)])
def test_dplr_matches_dense_oracle(p, q, seed):
    rng = np.random.default_rng(seed)
    sys = _random_dplr(rng, p, q)
    op = dz.bilinear_dplr(sys)
    abar_o, bbar_o = _dense_oracle(sys)
    np.testing.assert_allclose(op.dense(), abar_o, atol=1e-12)
    np.testing.assert_allclose(op.bbar, bbar_o, atol=1e-12)
    # the implicit apply agrees with dense matvec, batched and single
    x = rng.normal(size=p) + 1j * rng.normal(size=p)
    np.testing.assert_allclose(op.apply(x), abar_o @ x, atol=1e-12)
    X = rng.normal(size=(3, p)) + 1j * rng.normal(size=(3, p))
    np.testing.assert_allclose(op.apply(X), X @ abar_o.T, atol=1e-12)


def test_dplr_zero_rank_reduces_to_diagonal_bilinear():
    rng = np.random.default_rng(4)
    sys = _random_dplr(rng, 6, 2)
    zeroed = ContinuousSystem(
        lam=sys.lam, B=sys.B, C=sys.C, D=sys.D, delta=sys.delta,
        low_rank=(np.zeros(6, complex), np.zeros(6, complex)),
    )
    op = dz.bilinear_dplr(zeroed)
    diag = dz.bilinear(ContinuousSystem(lam=sys.lam, B=sys.B, C=sys.C, D=sys.D, delta=sys.delta))
    np.testing.assert_allclose(np.diag(op.dense()), diag.abar, atol=1e-13)
    np.testing.assert_allclose(op.bbar, diag.bbar, atol=1e-13)


def test_dplr_degenerate_denominator_raises():
    # Choose r, s so the correction cancels the diagonal resolvent exactly:
    # with lam=0, delta=2: D_m = I, denominator = 1 - s^H r. Pick s^H r = 1.
    sys = ContinuousSystem(
        lam=np.zeros(2, complex),
        B=np.ones((2, 1), complex),
        C=np.ones((1, 2), complex),
        D=np.zeros(1),
        delta=2.0,
        low_rank=(np.array([1.0, 0.0], complex), np.array([1.0, 0.0], complex)),
    )
    with pytest.raises(dz.DiscretizationError):
        dz.bilinear_dplr(sys)


def test_dplr_requires_low_rank():
    rng = np.random.default_rng(5)
    sys = _random_dplr(rng, 3, 1)
    plain = ContinuousSystem(lam=sys.lam, B=sys.B, C=sys.C, D=sys.D, delta=sys.delta)
    with pytest.raises(ValidationError):
        dz.bilinear_dplr(plain)
