"""Tape gradients vs central differences; scan adjoint oracles; Adam goldens."""

import math

import numpy as np
import pytest

from ssmkit import autodiff as ad
from ssmkit import learn
from ssmkit.types import DivergenceError


def fd_assert(loss_fn, store, tol=1e-5):
    err, worst = learn.finite_diff_check(loss_fn, store, eps=1e-5)
    assert err < tol, f"gradient mismatch {err:.3e} at {worst}"


# ------------------------------------------------------------- scan adjoint

def _loop_adjoint(a, x, g):
    """Independent reverse-loop oracle for the scan adjoint."""
    T = x.shape[0]
    grad_a = np.zeros_like(np.broadcast_to(a, x.shape))
    grad_d = np.zeros_like(x)
    lam = np.zeros_like(x[0])
    for k in reversed(range(T)):
        lam = g[k] + (np.conj(a[k + 1]) * lam if k + 1 < T else 0.0)
        grad_d[k] = lam
        grad_a[k] = np.conj(x[k - 1]) * lam if k > 0 else 0.0
    return grad_a, grad_d


def test_scan_backward_hand_unrolled_t3():
    a = np.array([0.7, -0.4, 0.9])[:, None]
    d = np.array([1.0, 2.0, -1.0])[:, None]
    g = np.array([0.5, -1.5, 2.0])[:, None]
    x = np.empty_like(d)
    x[0] = d[0]
    x[1] = a[1] * x[0] + d[1]
    x[2] = a[2] * x[1] + d[2]
    grad_a, grad_d = learn.scan_backward(a, x, g)
    # closed forms from unrolling three steps by hand
    a0, a1, a2 = a[:, 0]
    g0, g1, g2 = g[:, 0]
    assert grad_d[0, 0] == pytest.approx(g0 + a1 * g1 + a1 * a2 * g2, abs=1e-14)
    assert grad_d[1, 0] == pytest.approx(g1 + a2 * g2, abs=1e-14)
    assert grad_d[2, 0] == pytest.approx(g2, abs=1e-14)
    assert grad_a[0, 0] == pytest.approx(0.0, abs=1e-14)
    assert grad_a[1, 0] == pytest.approx(x[0, 0] * (g1 + a2 * g2), abs=1e-14)
    assert grad_a[2, 0] == pytest.approx(x[1, 0] * g2, abs=1e-14)


@pytest.mark.parametrize("T,p", [(1, 3), (2, 1), (7, 4), (64, 2)])
def test_scan_backward_matches_loop_adjoint(T, p):
    rng = np.random.default_rng(T * 10 + p)
    a = rng.uniform(0.2, 0.99, (T, p)) * np.exp(1j * rng.uniform(0, np.pi, (T, p)))
    d = rng.normal(size=(T, p)) + 1j * rng.normal(size=(T, p))
    from ssmkit import engines
    x = engines.scan(a, d)
    g = rng.normal(size=(T, p)) + 1j * rng.normal(size=(T, p))
    ga, gd = learn.scan_backward(a, x, g)
    oa, od = _loop_adjoint(a, x, g)
    np.testing.assert_allclose(ga, oa, atol=1e-12)
    np.testing.assert_allclose(gd, od, atol=1e-12)


def test_linear_scan_gradients_real_fd():
    rng = np.random.default_rng(0)
    store = learn.ParamStore()
    T, p = 6, 3
    a = store.add("a", rng.uniform(0.1, 0.9, (T, p)))
    d = store.add("d", rng.normal(size=(T, p)))
    w = rng.normal(size=(T, p))

    def loss():
        x = ad.linear_scan(a, d, time_axis=0)
        return ad.tsum(ad.mul(x, w))

    fd_assert(loss, store)


def test_linear_scan_gradients_complex_and_broadcast_fd():
    rng = np.random.default_rng(1)
    store = learn.ParamStore()
    T, qc, n = 5, 2, 3
    are = store.add("are", rng.uniform(0.2, 0.7, (T, 1, n)))
    aim = store.add("aim", rng.normal(size=(T, 1, n)) * 0.2)
    d = store.add("d", rng.normal(size=(T, qc, n)))

    def loss():
        a = ad.make_complex(are, aim)
        x = ad.linear_scan(a, d, time_axis=0)
        mag = ad.real(ad.mul(x, ad.conj(x)))
        return ad.tsum(mag)

    fd_assert(loss, store)


def test_linear_scan_worker_count_does_not_change_gradients():
    rng = np.random.default_rng(2)
    store = learn.ParamStore()
    a = store.add("a", rng.uniform(0.2, 0.9, (40, 2)))
    d = store.add("d", rng.normal(size=(40, 2)))
    w = rng.normal(size=(40, 2))

    def loss_w(workers):
        def f():
            return ad.tsum(ad.mul(ad.linear_scan(a, d, time_axis=0, workers=workers), w))
        return f

    _, g1 = learn.grad(loss_w(1), store)
    _, g4 = learn.grad(loss_w(4), store)
    for k in g1:
        np.testing.assert_allclose(g1[k], g4[k], atol=1e-10)


# ------------------------------------------------------------- op-by-op FD

def test_elementwise_chain_fd():
    rng = np.random.default_rng(3)
    store = learn.ParamStore()
    W = store.add("W", rng.normal(size=(4, 3)))
    b = store.add("b", rng.normal(size=4))
    x = rng.normal(size=(3, 5))

    def loss():
        h = ad.matmul(W, x)
        h = ad.add(h, ad.reshape(b, (4, 1)))
        h = ad.silu(ad.add(ad.sigmoid(h), ad.softplus(h)))
        return ad.tmean(ad.mul(h, h))

    fd_assert(loss, store)


def test_clip_min_values_and_gradient_mask():
    x = ad.Tensor(np.array([-2.0, 0.5, 3.0]))
    y = ad.clip_min(x, 0.5)
    assert np.array_equal(y.value, [0.5, 0.5, 3.0])
    ad.backward(ad.tsum(ad.mul(y, 2.0)))
    # clamped coordinate gets zero; the boundary passes gradient through
    assert np.array_equal(x.grad, [0.0, 2.0, 2.0])


def test_clip_min_fd_away_from_kink():
    rng = np.random.default_rng(21)
    store = learn.ParamStore()
    x = store.add("x", rng.normal(size=8) * 3.0 + 0.1)

    def loss():
        h = ad.clip_min(x, 0.0)
        return ad.tsum(ad.mul(h, h))

    fd_assert(loss, store)


def test_complex_chain_fd():
    rng = np.random.default_rng(4)
    store = learn.ParamStore()
    re = store.add("re", rng.normal(size=5) * 0.3)
    im = store.add("im", rng.normal(size=5) * 0.3)
    c = rng.normal(size=5) + 1j * rng.normal(size=5)

    def loss():
        z = ad.make_complex(re, im)
        w = ad.exp(ad.mul(z, c))
        v = ad.div(w, ad.add(z, 2.0 + 0j))
        return ad.tsum(ad.real(ad.mul(v, ad.conj(z))))

    fd_assert(loss, store)


def test_matmul_complex_batched_fd():
    rng = np.random.default_rng(5)
    store = learn.ParamStore()
    Are = store.add("Are", rng.normal(size=(2, 3, 4)))
    Aim = store.add("Aim", rng.normal(size=(2, 3, 4)))
    Bre = store.add("Bre", rng.normal(size=(4, 2)))

    def loss():
        A = ad.make_complex(Are, Aim)
        B = ad.make_complex(Bre, np.zeros((4, 2)))
        out = ad.matmul(A, B)  # (2, 3, 2), batch dim broadcast on B
        return ad.tsum(ad.real(ad.mul(out, ad.conj(out))))

    fd_assert(loss, store)


def test_powers_fd():
    rng = np.random.default_rng(6)
    store = learn.ParamStore()
    re = store.add("re", rng.uniform(0.2, 0.6, 3))
    im = store.add("im", rng.normal(size=3) * 0.3)

    def loss():
        a = ad.make_complex(re, im)
        V = ad.powers(a, 7)
        return ad.tsum(ad.real(ad.mul(V, ad.conj(V))))

    fd_assert(loss, store)


def test_depthwise_conv_fd():
    rng = np.random.default_rng(7)
    store = learn.ParamStore()
    u = store.add("u", rng.normal(size=(2, 6, 3)))
    K = store.add("K", rng.normal(size=(6, 3)))

    def loss():
        y = ad.depthwise_causal_conv(u, K)
        return ad.tsum(ad.silu(y))

    fd_assert(loss, store)


def test_depthwise_conv_forward_matches_direct_sum():
    rng = np.random.default_rng(8)
    u = rng.normal(size=(2, 9, 2))
    K = rng.normal(size=(9, 2))
    y = ad.depthwise_causal_conv(u, K)
    direct = np.zeros_like(u)
    for t in range(9):
        for j in range(t + 1):
            direct[:, t, :] += K[j] * u[:, t - j, :]
    np.testing.assert_allclose(y, direct, atol=1e-12)


def test_fir_conv_fd_and_forward():
    rng = np.random.default_rng(9)
    store = learn.ParamStore()
    u = store.add("u", rng.normal(size=(2, 7, 3)))
    w = store.add("w", rng.normal(size=(3, 4)))

    def loss():
        return ad.tsum(ad.sigmoid(ad.fir_causal_conv(u, w)))

    fd_assert(loss, store)
    y = ad.fir_causal_conv(u.value, w.value)
    direct = np.zeros_like(u.value)
    for i in range(4):
        shifted = np.zeros_like(u.value)
        shifted[:, i:, :] = u.value[:, : 7 - i, :]
        direct += w.value[:, i] * shifted
    np.testing.assert_allclose(y, direct, atol=1e-12)


def test_time_shift_fd_and_example():
    u = np.array([[1.0], [2.0], [3.0]])
    np.testing.assert_array_equal(ad.time_shift(u, 1, time_axis=0), [[0.0], [1.0], [2.0]])
    np.testing.assert_array_equal(ad.time_shift(u, 2, time_axis=0), [[0.0], [0.0], [1.0]])
    rng = np.random.default_rng(10)
    store = learn.ParamStore()
    x = store.add("x", rng.normal(size=(2, 6, 2)))
    w = rng.normal(size=(2, 6, 2))

    def loss():
        return ad.tsum(ad.mul(ad.time_shift(x, 2), w))

    fd_assert(loss, store)


def test_embedding_softmax_concat_fd():
    rng = np.random.default_rng(11)
    store = learn.ParamStore()
    E = store.add("E", rng.normal(size=(6, 4)))
    W = store.add("W", rng.normal(size=(4, 4)))
    ids = rng.integers(0, 6, size=(3, 5))

    def loss():
        h = ad.embedding(E, ids)                # (3, 5, 4)
        h2 = ad.matmul(h, W)
        s = ad.softmax(h2, axis=-1)
        both = ad.concat([s, h], axis=-1)
        return ad.tmean(ad.mul(both, both))

    fd_assert(loss, store)


def test_cross_entropy_golden_and_fd():
    # uniform logits over 10 classes -> ln 10
    logits = np.zeros(10)
    loss = ad.cross_entropy_mean(logits, 3)
    assert float(loss) == pytest.approx(np.log(10.0), abs=1e-12)
    rng = np.random.default_rng(12)
    store = learn.ParamStore()
    z = store.add("z", rng.normal(size=(5, 7)))
    labels = rng.integers(0, 7, size=5)

    def lf():
        return learn.cross_entropy(z, labels)

    fd_assert(lf, store)


def test_leaf_reuse_accumulates():
    store = learn.ParamStore()
    x = store.add("x", np.array([1.5, -2.0]))

    def loss():
        return ad.tsum(ad.add(ad.mul(x, x), x))  # sum x^2 + x

    _, g = learn.grad(loss, store)
    np.testing.assert_allclose(g["x"], 2 * x.value + 1, atol=1e-14)


def test_grad_rejects_nonscalar_and_untracked():
    store = learn.ParamStore()
    x = store.add("x", np.ones(3))
    with pytest.raises(ad.GradientError):
        learn.grad(lambda: ad.mul(x, x), store)  # vector loss
    with pytest.raises(ad.GradientError):
        learn.grad(lambda: np.float64(1.0), store)  # nothing tracked


def test_quadratic_grad_exact():
    store = learn.ParamStore()
    theta = store.add("theta", np.array([0.3, -1.2, 2.0]))
    _, g = learn.grad(lambda: ad.tsum(ad.mul(theta, theta)), store)
    np.testing.assert_allclose(g["theta"], 2 * theta.value, atol=0)


# ------------------------------------------------------------- Adam

def test_adam_single_step_closed_form():
    store = learn.ParamStore()
    theta = store.add("theta", np.array([1.0]))
    state = learn.AdamState(lr=0.1, clip_norm=None)
    learn.grad(lambda: ad.tsum(ad.mul(theta, theta)), store)  # grad = 2
    learn.adam_step(store, state)
    # m_hat = 2, v_hat = 4 -> update ~ lr
    assert theta.value[0] == pytest.approx(0.9, abs=1e-8)


def test_adam_zero_gradient_is_a_no_op():
    store = learn.ParamStore()
    theta = store.add("theta", np.array([2.0, -3.0]))
    store.zero_grad()
    learn.adam_step(store, learn.AdamState(lr=0.5, clip_norm=None))
    np.testing.assert_array_equal(theta.value, [2.0, -3.0])


def test_adam_constant_gradient_update_magnitude_tends_to_lr():
    store = learn.ParamStore()
    theta = store.add("theta", np.array([0.0]))
    state = learn.AdamState(lr=0.01, clip_norm=None)
    for _ in range(10):
        theta.grad = np.array([3.0])
        before = theta.value.copy()
        learn.adam_step(store, state)
        assert abs(abs(theta.value[0] - before[0]) - 0.01) < 1e-6


def test_adam_lr_scale_and_clip():
    store = learn.ParamStore()
    a = store.add("a", np.array([0.0]))
    b = store.add("b", np.array([0.0]), lr_scale=0.1)
    state = learn.AdamState(lr=0.1, clip_norm=None)
    a.grad = np.array([1.0])
    b.grad = np.array([1.0])
    learn.adam_step(store, state)
    assert abs(a.value[0]) == pytest.approx(0.1, rel=1e-6)
    assert abs(b.value[0]) == pytest.approx(0.01, rel=1e-6)
    # clipping: gradient norm 10 with clip 1 scales gradients by 0.1 (first
    # step update magnitude is lr regardless; verify via reported norm)
    store2 = learn.ParamStore()
    c = store2.add("c", np.zeros(100))
    c.grad = np.ones(100)  # norm 10
    gnorm = learn.adam_step(store2, learn.AdamState(lr=0.1, clip_norm=1.0))
    assert gnorm == pytest.approx(10.0, rel=1e-12)


def test_adam_nonfinite_gradient_raises_with_name():
    store = learn.ParamStore()
    store.add("ok", np.zeros(2))
    bad = store.add("broken", np.zeros(2))
    bad.grad = np.array([np.nan, 1.0])
    with pytest.raises(DivergenceError, match="broken"):
        learn.adam_step(store, learn.AdamState())


# ------------------------------------------------------------- checker

def test_finite_diff_check_passes_smooth_loss():
    rng = np.random.default_rng(13)
    store = learn.ParamStore()
    W = store.add("W", rng.normal(size=(3, 3)))

    def loss():
        return ad.tsum(ad.silu(ad.mul(W, W)))

    err, _ = learn.finite_diff_check(loss, store)
    assert err < 1e-9


def test_finite_diff_check_flags_corrupted_backward():
    store = learn.ParamStore()
    x = store.add("x", np.array([4.0]))

    def bad_square(t):
        # deliberately wrong vjp: claims d(x^2)/dx = 1.5 x
        return ad.Tensor(np.square(t.value), (t,), lambda g: (1.5 * t.value * g,))

    def loss():
        return ad.tsum(bad_square(x))

    err, worst = learn.finite_diff_check(loss, store)
    assert err >= 1e-1
    assert worst["param"] == "x"


def test_param_store_basics():
    store = learn.ParamStore()
    store.add("w", np.ones((2, 2)))
    with pytest.raises(Exception):
        store.add("w", np.ones(2))  # duplicate
    with pytest.raises(Exception):
        store.add("z", np.ones(2) + 1j)  # complex leaves are forbidden
    assert store.n_params == 4
    store.load({"w": np.zeros((2, 2))})
    np.testing.assert_array_equal(store["w"].value, np.zeros((2, 2)))
    with pytest.raises(Exception):
        store.load({"nope": np.zeros(1)})


def test_phi1_values_and_gradient():
    # value: the analytic limit at 0 and a frozen point
    assert float(np.real(ad.phi1(np.array(0.0)))) == 1.0
    got = float(ad.phi1(np.array(-0.1)))
    assert got == pytest.approx((math.exp(-0.1) - 1.0) / (-0.1), abs=1e-15)

    # gradient through a complex argument, against central differences
    store = learn.ParamStore()
    store.add("x", np.array([-0.3, 1e-5, 0.7]))
    store.add("y", np.array([0.4, -2e-5, -1.1]))

    def loss_fn():
        z = ad.make_complex(store["x"], store["y"])
        w = ad.phi1(z)
        return ad.tsum(ad.real(ad.mul(w, ad.conj(w))))

    err, _ = learn.finite_diff_check(loss_fn, store)
    assert err < 1e-7


def test_phi1_derivative_series_matches_direct():
    # both branches of the derivative guard agree just outside the cutoff
    from ssmkit.autodiff import _phi1_deriv
    for z in (1.0001e-4, 2e-4, 1e-3, 1e-4 + 1e-4j):
        direct = (np.exp(z) * (z - 1.0) + 1.0) / (z * z)
        np.testing.assert_allclose(_phi1_deriv(z), direct, rtol=1e-10)
    # well inside: series value is finite and near 1/2
    assert abs(_phi1_deriv(1e-9) - 0.5) < 1e-8
