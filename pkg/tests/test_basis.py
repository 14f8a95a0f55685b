import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gptraj import (Horizon, LinearMap, SquaredExponential, condition_weights, draw_function_samples,
                    linear_exact_expansion, linear_times_base, nystrom_expansion, rff_expansion,
                    simulate_with_function_samples)
from gptraj.basis import (BasisExpansion, FunctionSample, LinearFeatures, block_outputs,
                          load_expansion, save_expansion)
from gptraj.errors import DegenerateSpectrumError
from gptraj.experiment import empirical_moments
from gptraj.kernels import Linear, Product, ZeroMean
from gptraj.proxy import ProxySpec, proxy_moments_closed_form
from gptraj.sampling import APPROX_FUNCTION_SAMPLE


# -- random Fourier features ------------------------------------------------

def test_rff_shapes():
    e = rff_expansion(SquaredExponential(1.0, 1.0), 10, seed=0, in_dim=2)
    assert e.m == 10 and e.out_dim == 1
    assert e.features(np.zeros((5, 2))).shape == (5, 1, 10)
    np.testing.assert_array_equal(e.weight_mean, np.zeros(10))
    np.testing.assert_array_equal(e.weight_cov, np.eye(10))


def test_rff_variance_large_m():
    e = rff_expansion(SquaredExponential(1.0, 0.7), 4096, seed=1)
    x = np.array([[0.3]])
    assert e.approx_gram(x, x)[0, 0] == pytest.approx(1.0, rel=0.05)


def test_rff_long_lengthscale_is_flat():
    e = rff_expansion(SquaredExponential(1.0, 1e9), 10, seed=2)
    np.testing.assert_allclose(e.features(np.array([[-5.0]])), e.features(np.array([[5.0]])), atol=1e-7)


def test_rff_seed_determinism():
    k = SquaredExponential(1.0, 1.0)
    a, b = rff_expansion(k, 10, seed=4), rff_expansion(k, 10, seed=4)
    np.testing.assert_array_equal(a.features.omega, b.features.omega)


def test_rff_needs_se():
    with pytest.raises(TypeError):
        rff_expansion(Linear(1.0), 10, seed=0)


def test_rff_average_reconstruction_unbiased():
    k = SquaredExponential(1.0, 2.0)
    rng = np.random.default_rng(0)
    X, Y = rng.uniform(-0.5, 0.5, (10, 1)), rng.uniform(-0.5, 0.5, (10, 1))
    est = np.zeros(10)
    for s in range(200):
        e = rff_expansion(k, 64, seed=1000 + s)
        est += (e.features(X)[:, 0] * e.features(Y)[:, 0]).sum(-1)
    est /= 200
    exact = np.array([k(X[i:i + 1], Y[i:i + 1])[0, 0] for i in range(10)])
    np.testing.assert_allclose(est, exact, rtol=0.02)


# -- Nystrom --------------------------------------------------------------

def test_nystrom_linear_is_rank_one():
    P = np.linspace(-2, 2, 9)[:, None]
    e = nystrom_expansion(Linear(1.0), P, 1)
    x = np.array([[0.5], [1.0], [-3.0]])
    phi = e.features(x)[:, 0, 0]
    np.testing.assert_allclose(phi / x[:, 0], phi[0] / x[0, 0], rtol=1e-12)
    np.testing.assert_allclose(e.approx_gram(x, x), x @ x.T, rtol=1e-10)
    with pytest.raises(DegenerateSpectrumError) as info:
        nystrom_expansion(Linear(1.0), P, 2)
    assert info.value.achievable == 1
    assert nystrom_expansion(Linear(1.0), P, 2, strict=False).m == 1


def test_nystrom_full_rank_is_exact(rng):
    k = SquaredExponential(1.0, 1.0)
    P = rng.uniform(-3, 3, (12, 1))
    e = nystrom_expansion(k, P, 12)
    np.testing.assert_allclose(e.approx_gram(P, P), k(P, P), atol=1e-8)


@pytest.mark.parametrize("m", [2, 5, 8])
def test_nystrom_truncation_bound(m, rng):
    k = SquaredExponential(1.0, 1.0)
    P = rng.uniform(-3, 3, (20, 1))
    e = nystrom_expansion(k, P, m)
    vals = np.sort(np.linalg.eigvalsh(k(P, P) / 20))[::-1]
    resid = np.abs(e.approx_gram(P, P) - k(P, P)).max()
    assert resid <= 20 * vals[m:].sum() + 1e-12


def test_nystrom_order_and_signs(rng):
    P = rng.uniform(-3, 3, (15, 1))
    e = nystrom_expansion(SquaredExponential(1.0, 1.0), P, 6)
    f = e.features
    assert np.all(np.diff(f.eigvals) <= 0)
    for i in range(6):
        v = f.eigvecs[:, i]
        assert v[np.flatnonzero(np.abs(v) > 1e-12)[0]] > 0


# -- linear constructions ------------------------------------------------

def test_linear_exact_product():
    e = linear_exact_expansion(Linear(1.0))
    assert e.m == 1
    assert (e.features(np.array([2.0]))[0, 0] * e.features(np.array([3.0]))[0, 0]) == 6.0


def test_linear_exact_gram(rng):
    X = rng.standard_normal((7, 2))
    e = linear_exact_expansion(Linear(0.3), in_dim=2)
    np.testing.assert_allclose(e.approx_gram(X, X), Linear(0.3)(X, X), rtol=1e-14, atol=1e-15)


def test_linear_sample_is_random_gain():
    e = linear_exact_expansion(Linear(0.05))
    s = draw_function_samples(e, 3, seed=0)
    for f in s:
        assert f(np.array([[2.0]]))[0, 0] == pytest.approx(2.0 * 0.05 * f.theta[0])


def test_linear_times_vanishes_at_origin():
    e = linear_times_base(rff_expansion(SquaredExponential(1.0, 0.1), 10, seed=0), scale=0.05)
    for f in draw_function_samples(e, 5, seed=1):
        assert f(np.array([[0.0]]))[0, 0] == 0.0


def test_linear_times_structure(rng):
    inner = rff_expansion(SquaredExponential(1.0, 0.5), 16, seed=3)
    e = linear_times_base(inner, scale=0.7)
    X = rng.standard_normal((5, 1))
    np.testing.assert_allclose(e.approx_gram(X, X), 0.49 * (X @ X.T) * inner.approx_gram(X, X), rtol=1e-12)


def test_linear_times_average_matches_product_gram(rng):
    k = Product(Linear(0.7), SquaredExponential(1.0, 1.0))
    X = rng.uniform(-1, 1, (6, 1))
    acc = np.zeros((6, 6))
    for s in range(400):
        inner = rff_expansion(SquaredExponential(1.0, 1.0), 64, seed=s)
        acc += linear_times_base(inner, 0.7).approx_gram(X, X)
    np.testing.assert_allclose(acc / 400, k(X, X), atol=0.02 * 0.49)


def test_linear_times_linear_is_quadratic():
    e = linear_times_base(linear_exact_expansion(Linear(1.0)))
    x, y = np.array([[1.5]]), np.array([[-2.0]])
    assert e.approx_gram(x, y)[0, 0] == pytest.approx(1.5 ** 2 * 2.0 ** 2)


def test_block_outputs_are_independent(rng):
    a = rff_expansion(SquaredExponential(1.0, 1.0), 5, seed=0, in_dim=2)
    b = linear_exact_expansion(Linear(1.0), in_dim=2)
    e = block_outputs([a, b])
    X = rng.standard_normal((3, 2))
    g = e.approx_gram(X, X)
    np.testing.assert_allclose(g[0::2, 0::2], a.approx_gram(X, X), atol=1e-14)
    np.testing.assert_allclose(g[1::2, 1::2], b.approx_gram(X, X), atol=1e-14)
    np.testing.assert_array_equal(g[0::2, 1::2], 0.0)


# -- weight conditioning -------------------------------------------------

def test_condition_without_data_is_prior():
    e = rff_expansion(SquaredExponential(), 4, seed=0)
    assert condition_weights(e, np.zeros((0, 1)), np.zeros((0, 1)), [[1.0]]) is e


def test_huge_noise_leaves_prior():
    e = BasisExpansion.prior(LinearFeatures(1.0, 2))
    post = condition_weights(e, [[1.0, 0.0], [0.0, 1.0]], [[1.0], [2.0]], [[1e6]])
    np.testing.assert_allclose(post.weight_cov, np.eye(2), rtol=0.01)
    assert np.abs(post.weight_mean).max() < 0.01


def test_condition_normal_equations(rng):
    e = BasisExpansion.prior(LinearFeatures(1.0, 2))
    X = rng.standard_normal((3, 2))
    y = rng.standard_normal((3, 1))
    q = 0.3
    post = condition_weights(e, X, y, [[q]])
    cov = np.linalg.inv(np.eye(2) + X.T @ X / q)
    mean = cov @ X.T @ y[:, 0] / q
    np.testing.assert_allclose(post.weight_cov, cov, atol=1e-12)
    np.testing.assert_allclose(post.weight_mean, mean, atol=1e-12)


def test_condition_residual_targets(rng):
    e = BasisExpansion.prior(LinearFeatures(1.0, 1))
    X = rng.standard_normal((4, 1))
    y = 0.95 * X + 0.2 * X
    direct = condition_weights(e, X, y - 0.95 * X, [[0.1]])
    resid = condition_weights(e, X, y, [[0.1]], prior_mean=LinearMap([[0.95]]))
    np.testing.assert_allclose(direct.weight_mean, resid.weight_mean, atol=1e-14)


# -- drawing samples ---------------------------------------------------------

def test_zero_weight_covariance_gives_mean_function():
    e = BasisExpansion(LinearFeatures(1.0, 1), np.array([0.4]), np.zeros((1, 1)))
    for s in draw_function_samples(e, 4, seed=0):
        assert s.theta[0] == 0.4


def test_draw_determinism():
    e = rff_expansion(SquaredExponential(), 6, seed=0)
    a = draw_function_samples(e, 5, seed=3)
    b = draw_function_samples(e, 5, seed=3)
    assert all(np.array_equal(x.theta, y.theta) for x, y in zip(a, b))


def test_sample_variance_matches_features():
    e = rff_expansion(SquaredExponential(1.0, 1.0), 10, seed=0)
    e = condition_weights(e, [[0.0], [1.0]], [[0.5], [-0.5]], [[0.2]])
    x = np.array([[0.4]])
    vals = np.array([s(x)[0, 0] for s in draw_function_samples(e, 20_000, seed=1)])
    phi = e.features(x)[0, 0]
    assert vals.var(ddof=1) == pytest.approx(phi @ e.weight_cov @ phi, rel=0.05)


def test_factory_resamples_features():
    k = SquaredExponential(1.0, 1.0)
    samples = draw_function_samples(lambda rng: rff_expansion(k, 4, rng=rng), 3, seed=0)
    assert not np.array_equal(samples[0].expansion.features.omega, samples[1].expansion.features.omega)
    again = draw_function_samples(lambda rng: rff_expansion(k, 4, rng=rng), 3, seed=0)
    assert np.array_equal(samples[2].theta, again[2].theta)


# -- rollout ----------------------------------------------------------------

def test_zero_expansion_rollout_is_mean_recursion():
    e = linear_exact_expansion(Linear(0.0))
    s = draw_function_samples(e, 3, seed=0)
    b = simulate_with_function_samples(LinearMap([[0.95]]), s, Horizon(10, [1.0]), [[0.0]], seed=0)
    np.testing.assert_allclose(b.states[:, :, 0], np.tile(0.95 ** np.arange(11), (3, 1)), rtol=1e-14)
    assert b.method_tag == APPROX_FUNCTION_SAMPLE


def test_linear_exact_rollout_closed_form():
    e = linear_exact_expansion(Linear(0.05))
    s = draw_function_samples(e, 6, seed=2)
    b = simulate_with_function_samples(LinearMap([[0.95]]), s, Horizon(20, [1.5]), [[0.0]], seed=0)
    for i, f in enumerate(s):
        expect = (0.95 + 0.05 * f.theta[0]) ** np.arange(21) * 1.5
        np.testing.assert_allclose(b.states[i, :, 0], expect, rtol=1e-12)


def test_direct_mode_ignores_mean():
    e = linear_exact_expansion(Linear(1.0))
    s = [FunctionSample(e, np.array([0.5]))]
    b = simulate_with_function_samples(LinearMap([[0.95]]), s, Horizon(3, [2.0]), [[0.0]], seed=0,
                                       mode="direct")
    np.testing.assert_allclose(b.states[0, :, 0], [2.0, 1.0, 0.5, 0.25])


def test_rollout_never_evaluates_kernel(monkeypatch):
    k = SquaredExponential(1.0, 1.0)
    samples = draw_function_samples(lambda rng: rff_expansion(k, 10, rng=rng), 20, seed=0)

    def forbidden(*args, **kwargs):
        raise AssertionError("kernel evaluated during rollout")

    monkeypatch.setattr(SquaredExponential, "__call__", forbidden)
    b = simulate_with_function_samples(LinearMap([[0.95]]), samples, Horizon(30, [1.0]), [[1.0]], seed=0)
    assert b.states.shape == (20, 31, 1)


def test_stacked_rollout_matches_per_sample_loop():
    k = SquaredExponential(1.0, 0.8)
    samples = draw_function_samples(lambda rng: linear_times_base(rff_expansion(k, 5, rng=rng), 0.3),
                                    8, seed=4)
    h = Horizon(6, [0.7])
    b = simulate_with_function_samples(LinearMap([[0.95]]), samples, h, [[0.5]], seed=9)
    for i, f in enumerate(samples):
        x = [0.7]
        for step in range(6):
            x.append(0.95 * x[-1] + f(np.array([x[-1]]))[0] + np.sqrt(0.5) * b.noise[i, step, 0])
        np.testing.assert_allclose(b.states[i, :, 0], x, rtol=1e-12, atol=1e-14)


def test_vector_state_rollout():
    e = block_outputs([linear_exact_expansion(Linear(0.1), 2), linear_exact_expansion(Linear(0.2), 2)])
    s = draw_function_samples(e, 4, seed=0)
    b = simulate_with_function_samples(ZeroMean(2), s, Horizon(5, [1.0, -1.0]), 0.1 * np.eye(2), seed=1)
    assert b.states.shape == (4, 6, 2)


def test_linear_exact_reproduces_gain_proxy_moments():
    # Small gain uncertainty keeps the variance estimator well behaved at this sample size.
    spec = ProxySpec("2a", 0.02, 1.0, 1.0, 50)
    e = linear_exact_expansion(Linear(0.02))
    s = draw_function_samples(e, 20_000, seed=0)
    b = simulate_with_function_samples(LinearMap([[0.95]]), s, Horizon(50, [1.0]), [[1.0]], seed=0)
    stats = empirical_moments(b)
    mean, var = proxy_moments_closed_form(spec)
    assert np.all(np.abs(stats.mean[:, 0] - mean) <= 3 * stats.se_mean[:, 0] + 1e-12)
    np.testing.assert_allclose(stats.var[1:, 0], var[1:], rtol=0.05)


# -- persistence -----------------------------------------------------------

@pytest.mark.parametrize("build", [
    lambda: rff_expansion(SquaredExponential(1.3, 0.4), 7, seed=0, in_dim=2),
    lambda: linear_exact_expansion(Linear(0.05), 2),
    lambda: linear_times_base(rff_expansion(SquaredExponential(1.0, 0.1), 3, seed=1, in_dim=2), 0.05),
    lambda: nystrom_expansion(SquaredExponential(1.0, 1.0), np.random.default_rng(0).uniform(-1, 1, (9, 2)), 4),
    lambda: block_outputs([linear_exact_expansion(Linear(1.0), 2),
                           rff_expansion(SquaredExponential(), 3, seed=2, in_dim=2)]),
])
def test_save_load_round_trip(build, tmp_path):
    e = build()
    e = condition_weights(e, np.ones((1, 2)), np.ones((1, e.out_dim)), 0.5 * np.eye(e.out_dim))
    theta = draw_function_samples(e, 1, seed=0)[0].theta
    save_expansion(tmp_path / "e.csv", e, theta)
    back, th = load_expansion(tmp_path / "e.csv")
    X = np.random.default_rng(1).standard_normal((4, 2))
    assert np.array_equal(back.features(X), e.features(X))
    assert np.array_equal(th, theta)
    assert np.array_equal(back.weight_cov, e.weight_cov)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1), m=st.integers(1, 30))
def test_rff_features_bounded(seed, m):
    e = rff_expansion(SquaredExponential(2.0, 0.5), m, seed=seed)
    phi = e.features(np.linspace(-3, 3, 11)[:, None])
    assert np.abs(phi).max() <= 2.0 * np.sqrt(2.0 / m) + 1e-15
