"""Execution engines: step semantics, scan vs loop oracle, kernels, FFT conv."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ssmkit import discretize as dz
from ssmkit import engines as eng
from ssmkit.types import ContinuousSystem, DiscreteSystem, DivergenceError


def _scalar_discrete(abar=0.5, bbar=1.0, cbar=1.0, dbar=0.0):
    return DiscreteSystem(
        abar=np.array([abar], complex),
        bbar=np.array([[bbar]], complex),
        cbar=np.array([[cbar]], complex),
        dbar=np.array([dbar]),
    )


def _random_discrete(rng, p, q, rho=0.999):
    mags = rng.uniform(0.05, rho, p)
    abar = mags * np.exp(1j * rng.uniform(0, 2 * np.pi, p))
    bbar = rng.normal(size=(p, q)) + 1j * rng.normal(size=(p, q))
    cbar = (rng.normal(size=(q, p)) + 1j * rng.normal(size=(q, p))) / np.sqrt(p)
    dbar = rng.normal(size=q)
    return DiscreteSystem(abar=abar, bbar=bbar, cbar=cbar, dbar=dbar)


def _loop_states(abar_seq, drive):
    """Sequential oracle for the scan: x(k) = a(k) x(k-1) + d(k), x(-1) = 0."""
    a = np.asarray(abar_seq)
    d = np.asarray(drive)
    shape = np.broadcast_shapes(a.shape, d.shape)
    x = np.zeros(shape[1:], dtype=np.result_type(a, d))
    out = np.empty(shape, dtype=x.dtype)
    for k in range(shape[0]):
        x = a[k] * x + d[k]
        out[k] = x
    return out


def _loop_outputs(sys, u_seq):
    """Sequential oracle for LTI execution, independent of engines.run_recurrent."""
    T = u_seq.shape[0]
    x = np.zeros(sys.p, dtype=complex)
    y = np.empty((T, sys.q))
    for k in range(T):
        x = sys.abar * x + sys.bbar @ u_seq[k]
        y[k] = (sys.cbar @ x).real + sys.dbar * u_seq[k]
    return y


# -------------------------------------------------- step and run_recurrent

def test_step_scalar_example():
    sys = _scalar_discrete()
    x1, y1 = eng.step(sys, np.zeros(1, complex), np.array([1.0]))
    assert x1[0] == pytest.approx(1.0)
    assert y1[0] == pytest.approx(1.0)  # state updates before readout
    x2, y2 = eng.step(sys, x1, np.array([0.0]))
    assert x2[0] == pytest.approx(0.5)
    assert y2[0] == pytest.approx(0.5)


def test_run_recurrent_passthrough_when_c_zero():
    sys = _scalar_discrete(cbar=0.0, dbar=1.0)
    u = np.linspace(-1, 1, 7)[:, None]
    y = eng.run_recurrent(sys, u)
    np.testing.assert_allclose(y, u, atol=0)


def test_run_recurrent_impulse_gives_geometric_kernel():
    sys = _scalar_discrete(abar=0.5)
    u = np.zeros((5, 1))
    u[0, 0] = 1.0
    y = eng.run_recurrent(sys, u)
    np.testing.assert_allclose(y[:, 0], [1.0, 0.5, 0.25, 0.125, 0.0625], atol=1e-15)


def test_memory_law_residual_after_1000_steps():
    # |y(1000)/y(0)| for abar = 0.999 equals 0.999^1000, checked against an
    # independent repeated-multiplication oracle and the known constant.
    sys = _scalar_discrete(abar=0.999)
    u = np.zeros((1001, 1))
    u[0, 0] = 1.0
    y = eng.run_recurrent(sys, u)
    ratio = abs(y[1000, 0] / y[0, 0])
    power = 1.0
    for _ in range(1000):
        power *= 0.999
    assert ratio == pytest.approx(power, abs=1e-12)
    assert ratio == pytest.approx(0.36770, abs=1e-5)


def test_run_recurrent_matches_loop_oracle():
    rng = np.random.default_rng(0)
    sys = _random_discrete(rng, p=6, q=3)
    u = rng.normal(size=(41, 3))
    np.testing.assert_allclose(eng.run_recurrent(sys, u), _loop_outputs(sys, u), atol=1e-12)


def test_run_recurrent_divergence_reports_step():
    sys = _scalar_discrete(abar=2.0)
    u = np.zeros((1200, 1))
    u[0, 0] = 1.0
    with pytest.raises(DivergenceError) as ei:
        eng.run_recurrent(sys, u)
    assert ei.value.step is not None and 900 < ei.value.step < 1200


# -------------------------------------------------- combine / scan

def test_combine_identity_and_golden():
    a, b = eng.combine((np.array(1.0), np.array(0.0)), (np.array(0.7), np.array(2.0)))
    assert (a, b) == (pytest.approx(0.7), pytest.approx(2.0))
    a, b = eng.combine((np.array(0.5), np.array(1.0)), (np.array(0.5), np.array(1.0)))
    assert a == pytest.approx(0.25)
    assert b == pytest.approx(1.5)  # a2*b1 + b2 = 0.5*1 + 1


@settings(max_examples=100, deadline=None)
@given(st.lists(st.complex_numbers(max_magnitude=2.0, allow_nan=False, allow_infinity=False), min_size=6, max_size=6))
def test_combine_is_associative(vals):
    e1 = (np.array(vals[0]), np.array(vals[1]))
    e2 = (np.array(vals[2]), np.array(vals[3]))
    e3 = (np.array(vals[4]), np.array(vals[5]))
    left = eng.combine(eng.combine(e1, e2), e3)
    right = eng.combine(e1, eng.combine(e2, e3))
    np.testing.assert_allclose(left[0], right[0], atol=1e-14)
    np.testing.assert_allclose(left[1], right[1], atol=1e-14)


def test_scan_single_step_returns_drive():
    a = np.array([[0.9, 0.5]])
    d = np.array([[1.0, -2.0]])
    np.testing.assert_array_equal(eng.scan(a, d), d)


@pytest.mark.parametrize("T", [1, 2, 3, 8, 17, 64, 257, 513])
def test_scan_matches_loop_oracle_time_varying(T):
    rng = np.random.default_rng(T)
    p = 5
    a = rng.uniform(0.2, 1.0, (T, p)) * np.exp(1j * rng.uniform(0, np.pi, (T, p)))
    d = rng.normal(size=(T, p)) + 1j * rng.normal(size=(T, p))
    np.testing.assert_allclose(eng.scan(a, d), _loop_states(a, d), atol=1e-10)


def test_scan_broadcasts_shared_dynamics_over_channels():
    rng = np.random.default_rng(7)
    T, n, q = 33, 4, 3
    a = rng.uniform(0.3, 0.99, (T, 1, n))
    d = rng.normal(size=(T, q, n))
    np.testing.assert_allclose(eng.scan(a, d), _loop_states(a, d), atol=1e-12)


def test_scan_worker_count_invariance():
    rng = np.random.default_rng(11)
    T, p = 1000, 8
    a = rng.uniform(0.2, 0.999, (T, p)) * np.exp(1j * rng.uniform(0, np.pi, (T, p)))
    d = rng.normal(size=(T, p)) + 1j * rng.normal(size=(T, p))
    x1 = eng.scan(a, d, workers=1)
    for w in (2, 3, 4, 8):
        xw = eng.scan(a, d, workers=w)
        assert np.max(np.abs(xw - x1)) < 1e-10


@pytest.mark.parametrize("T", [1, 2, 3, 8, 257, 1024])
def test_scan_work_bound_two_t(T):
    a = np.full((T, 2), 0.9)
    d = np.ones((T, 2))
    eng.combine_counter.reset()
    eng.scan(a, d)
    assert eng.combine_counter.count <= 2 * T


# -------------------------------------------------- kernels and convolution

def test_kernel_golden_geometric():
    sys = _scalar_discrete(abar=0.5)
    K = eng.materialize_kernel(sys, 4)
    assert K.shape == (4, 1, 1)
    np.testing.assert_allclose(K[:, 0, 0], [1.0, 0.5, 0.25, 0.125], atol=1e-15)


def test_kernel_first_tap_is_cb():
    rng = np.random.default_rng(3)
    sys = _random_discrete(rng, 5, 2)
    K = eng.materialize_kernel(sys, 3)
    np.testing.assert_allclose(K[0], (sys.cbar @ sys.bbar).real, atol=1e-14)


def test_kernel_decay_envelope():
    # |K_j| is bounded by ||cbar|| ||bbar|| rho^j for a diagonal transition.
    rng = np.random.default_rng(4)
    sys = _random_discrete(rng, 6, 2, rho=0.9)
    K = eng.materialize_kernel(sys, 200)
    rho = float(np.max(np.abs(sys.abar)))
    bound = np.linalg.norm(sys.cbar, ord=2) * np.linalg.norm(sys.bbar, ord=2)
    j = np.arange(200)
    assert np.all(np.abs(K).max(axis=(1, 2)) <= bound * rho**j + 1e-12)


def test_kernel_dplr_matches_dense_powers():
    rng = np.random.default_rng(5)
    p, q = 6, 2
    lam = -rng.uniform(0.2, 1.0, p) + 1j * rng.normal(size=p)
    sys = ContinuousSystem(
        lam=lam,
        B=rng.normal(size=(p, q)) + 1j * rng.normal(size=(p, q)),
        C=rng.normal(size=(q, p)) + 1j * rng.normal(size=(q, p)),
        D=np.zeros(q),
        delta=0.1,
        low_rank=(rng.normal(size=p) + 0j, rng.normal(size=p) + 0j),
    )
    op = dz.bilinear_dplr(sys)
    K = eng.materialize_kernel(op, 12)
    Ad = op.dense()
    X = op.bbar.copy()
    for t in range(12):
        np.testing.assert_allclose(K[t], (op.cbar @ X).real, atol=1e-12)
        X = Ad @ X
    y_rec = eng.run_recurrent(op, rng.normal(size=(20, q)))
    assert y_rec.shape == (20, q)


def test_convolution_matches_recurrence():
    rng = np.random.default_rng(6)
    for T in (8, 257, 300):
        sys = _random_discrete(rng, 8, 3)
        u = rng.normal(size=(T, 3))
        y_rec = eng.run_recurrent(sys, u)
        y_conv = eng.run_convolution(sys, u)
        assert np.max(np.abs(y_rec - y_conv)) < 1e-10


def test_fft_length_is_next_power_of_two_at_least_2t():
    assert eng.fft_length(4) == 8
    assert eng.fft_length(5) == 16
    assert eng.fft_length(256) == 512
    assert eng.fft_length(257) == 1024


def test_three_mode_smoke_equivalence():
    rng = np.random.default_rng(8)
    sys = _random_discrete(rng, 16, 4)
    u = rng.normal(size=(129, 4))
    y_rec = eng.run_recurrent(sys, u)
    y_scan = eng.run_scan(sys, u)
    y_conv = eng.run_convolution(sys, u)
    assert np.max(np.abs(y_rec - y_scan)) < 1e-10
    assert np.max(np.abs(y_rec - y_conv)) < 1e-10
