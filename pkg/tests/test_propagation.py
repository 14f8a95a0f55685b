import logging
from dataclasses import dataclass

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import scalar_model
from gptraj import (GpModel, Horizon, IndependentOutputs, LinearMap, SquaredExponential,
                    propagate_independent, propagate_linearized, propagate_linearized_controlled)
from gptraj.errors import DimensionMismatchError, NonFiniteError
from gptraj.io import read_moment_csv, write_moment_csv
from gptraj.kernels import Callback, MatrixKernel, finite_difference_jacobian
from gptraj.linalg import cholesky
from gptraj.propagation import (INDEPENDENCE_BASELINE, LINEARIZED_JOINT, _psd_repair,
                                gradient_chain, marginals)
from gptraj.proxy import ProxySpec, proxy_moments_closed_form


def test_zero_kernel(zero_model):
    for fn in (propagate_linearized, propagate_independent):
        ms = fn(zero_model, Horizon(10, [2.0]))
        np.testing.assert_array_equal(ms.blocks, 0.0)
        np.testing.assert_allclose(ms.means[:, 0], 2.0 * 0.95 ** np.arange(11), rtol=1e-15)
    assert not propagate_linearized(zero_model, Horizon(10, [2.0])).cov.any()


def test_one_step_marginal():
    m = scalar_model(SquaredExponential(1.3, 0.5), noise=0.4)
    a = propagate_linearized(m, Horizon(1, [1.0]))
    b = propagate_independent(m, Horizon(1, [1.0]))
    assert a.blocks[0, 0, 0] == pytest.approx(1.69 + 0.4, rel=1e-14)
    np.testing.assert_array_equal(a.blocks, b.blocks)
    assert a.means[1, 0] == 0.95


def test_tags(offset_model):
    h = Horizon(3, [1.0])
    assert propagate_linearized(offset_model, h).method_tag == LINEARIZED_JOINT
    assert propagate_independent(offset_model, h).method_tag == INDEPENDENCE_BASELINE


def test_linearized_exact_for_constant_offset(offset_model):
    ms = propagate_linearized(offset_model, Horizon(50, [1.0]))
    _, var = proxy_moments_closed_form(ProxySpec("1a", 1.0, 1.0, 1.0, 50))
    np.testing.assert_allclose(ms.blocks[:, 0, 0], var[1:], rtol=1e-6)
    np.testing.assert_allclose([v[0, 0] for _, v in marginals(ms)], var[1:], rtol=1e-6)


def test_independent_accumulates_like_white_noise(offset_model):
    ms = propagate_independent(offset_model, Horizon(50, [1.0]))
    _, white = proxy_moments_closed_form(ProxySpec("1b", 1.0, 1.0, 1.0, 50))
    _, offset = proxy_moments_closed_form(ProxySpec("1a", 1.0, 1.0, 1.0, 50))
    np.testing.assert_allclose(ms.blocks[:, 0, 0], white[1:], rtol=1e-10)
    assert ms.blocks[-1, 0, 0] < offset[-1]


def test_underestimation_margin(offset_model):
    h = Horizon(50, [1.0])
    ind = propagate_independent(offset_model, h).blocks[-1, 0, 0]
    lin = propagate_linearized(offset_model, h).blocks[-1, 0, 0]
    assert ind < 0.5 * lin


def test_methods_coincide_without_cross_correlation():
    m = scalar_model(SquaredExponential(1.0, 1e-3), gain=0.5)
    h = Horizon(10, [10.0])
    a = propagate_linearized(m, h)
    b = propagate_independent(m, h)
    np.testing.assert_allclose(a.blocks, b.blocks, rtol=1e-12, atol=1e-12)


def test_full_covariance_psd(offset_model):
    ms = propagate_linearized(offset_model, Horizon(20, [1.0]))
    np.testing.assert_array_equal(ms.cov, ms.cov.T)
    cholesky(ms.cov)
    for _, block in marginals(ms):
        assert np.linalg.eigvalsh(block).min() >= 0


def test_single_step_marginal_is_full_cov(offset_model):
    ms = propagate_linearized(offset_model, Horizon(1, [1.0]))
    (mean, cov), = marginals(ms)
    np.testing.assert_array_equal(cov, ms.cov)


def test_mean_chain_divergence():
    m = GpModel(Callback(lambda x: x ** 2), IndependentOutputs.shared(SquaredExponential(), 1), [[0.0]])
    with pytest.raises(NonFiniteError):
        propagate_linearized(m, Horizon(20, [10.0]))


def test_autonomous_entry_rejects_controlled_model():
    m = GpModel(LinearMap([[0.95, 1.0]]), IndependentOutputs.shared(SquaredExponential(), 1), [[1.0]],
                input_dim=2)
    with pytest.raises(DimensionMismatchError):
        propagate_linearized(m, Horizon(3, [0.0]))


# -- gradient chain ---------------------------------------------------------

@settings(max_examples=30, deadline=None)
@given(N=st.integers(1, 8), n=st.integers(1, 3), seed=st.integers(0, 2 ** 32 - 1))
def test_gradient_chain_structure(N, n, seed):
    J = np.random.default_rng(seed).standard_normal((N, n, n))
    A = gradient_chain(J).reshape(N, n, N, n).transpose(0, 2, 1, 3)
    for i in range(N):
        np.testing.assert_array_equal(A[i, i], np.eye(n))
        for j in range(i + 1, N):
            np.testing.assert_array_equal(A[i, j], 0.0)
        for j in range(i):
            np.testing.assert_array_equal(A[i, j], J[i] @ A[i - 1, j])


def test_gradient_chain_products():
    J = np.array([[[2.0]], [[3.0]], [[5.0]]])
    np.testing.assert_array_equal(gradient_chain(J), [[1, 0, 0], [3, 1, 0], [15, 5, 1]])


def test_jacobians_along_chain_match_fd():
    fn = lambda x: 0.9 * x + 0.3 * np.sin(x)  # noqa: E731
    jac = lambda x: np.array([[0.9 + 0.3 * np.cos(x[0])]])  # noqa: E731
    m = GpModel(Callback(fn, jac=jac), IndependentOutputs.shared(SquaredExponential(), 1), [[0.1]])
    ms = propagate_linearized(m, Horizon(10, [2.0]))
    for mu in ms.means[:-1]:
        fd = finite_difference_jacobian(lambda v: fn(v), mu)
        np.testing.assert_allclose(m.mean_jacobian(mu), fd, rtol=1e-5)


def test_nonlinear_mean_fd_fallback_matches_analytic():
    fn = lambda x: 0.9 * x + 0.3 * np.sin(x)  # noqa: E731
    jac = lambda x: np.array([[0.9 + 0.3 * np.cos(x[0])]])  # noqa: E731
    k = IndependentOutputs.shared(SquaredExponential(1.0, 2.0), 1)
    a = propagate_linearized(GpModel(Callback(fn, jac=jac), k, [[0.1]]), Horizon(15, [2.0]))
    b = propagate_linearized(GpModel(Callback(fn), k, [[0.1]]), Horizon(15, [2.0]))
    np.testing.assert_allclose(a.blocks, b.blocks, rtol=1e-6)


# -- controlled -----------------------------------------------------------------

def test_zero_inputs_equal_autonomous():
    k = SquaredExponential(1.0, 2.0)
    cm = GpModel(LinearMap([[0.95, 0.0]]), IndependentOutputs.shared(k, 1), [[1.0]], input_dim=2)
    am = scalar_model(k)
    h = Horizon(30, [1.0])
    a = propagate_linearized_controlled(cm, h, np.zeros((30, 1)))
    b = propagate_linearized(am, h)
    np.testing.assert_allclose(a.cov, b.cov, rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(a.means, b.means, rtol=1e-12)
    c = propagate_independent(cm, h, np.zeros((30, 1)))
    np.testing.assert_allclose(c.blocks, propagate_independent(am, h).blocks, rtol=1e-12)


def test_forced_mean_chain():
    cm = GpModel(LinearMap([[0.95, 1.0]]), IndependentOutputs.shared(SquaredExponential(1.0, 1e6), 1),
                 [[1.0]], input_dim=2)
    U = np.array([1.0, -0.5, 0.25, 2.0])[:, None]
    ms = propagate_linearized_controlled(cm, Horizon(4, [1.0]), U)
    x = [1.0]
    for u in U[:, 0]:
        x.append(0.95 * x[-1] + u)
    np.testing.assert_allclose(ms.means[:, 0], x, rtol=1e-14)


@dataclass(frozen=True)
class InputOnly(MatrixKernel):
    """SE kernel on the control coordinate only."""

    lengthscale: float = 1.0
    out_dim: int = 1

    def gram(self, X, X2):
        u, v = np.asarray(X)[..., -1:], np.asarray(X2)[..., -1:]
        return SquaredExponential(1.0, self.lengthscale)(u, v)


def test_input_only_kernel_cov_independent_of_state():
    cm = GpModel(LinearMap([[0.95, 1.0]]), InputOnly(0.7), [[0.2]], input_dim=2)
    U = np.linspace(-1, 1, 12)[:, None]
    a = propagate_linearized_controlled(cm, Horizon(12, [0.0]), U)
    b = propagate_linearized_controlled(cm, Horizon(12, [25.0]), U)
    np.testing.assert_allclose(a.cov, b.cov, atol=1e-10)


# -- repair and IO -------------------------------------------------------------

def test_psd_repair_floors_negative_eigenvalues(caplog):
    v = np.array([[1.0, 1.0], [1.0, -1.0]]) / np.sqrt(2)
    bad = v @ np.diag([1.0, -1e-3]) @ v.T
    with caplog.at_level(logging.WARNING):
        fixed = _psd_repair(bad, ladder=())
    assert np.linalg.eigvalsh(fixed).min() >= -1e-15
    assert "not PSD" in caplog.text


def test_moment_csv_round_trip(tmp_path):
    k = IndependentOutputs.shared(SquaredExponential(1.0, 3.0), 2)
    m = GpModel(LinearMap([[0.9, 0.1], [0.0, 0.8]]), k, 0.1 * np.eye(2))
    ms = propagate_linearized(m, Horizon(5, [1.0, -1.0]))
    path = tmp_path / "m.csv"
    write_moment_csv(path, ms)
    assert path.read_text().splitlines()[0] == "step,mean_1,mean_2,var_11,var_12,var_21,var_22"
    means, covs = read_moment_csv(path)
    np.testing.assert_array_equal(means, ms.means)
    np.testing.assert_array_equal(covs[1:], ms.blocks)
    np.testing.assert_array_equal(covs[0], 0.0)
