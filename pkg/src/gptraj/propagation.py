"""Direct Gaussian approximations of the trajectory distribution.

``propagate_linearized`` linearizes the mean around the mean chain
``mu_{k+1} = mu(mu_k)`` but keeps the kernel's cross-covariances between all
steps, giving

    X_{1:N} ~ N(M_{1:N}, A (k(M_{0:N-1}, M_{0:N-1}) + I (x) Q) A^T)

with ``A`` the lower block-triangular chain of mean Jacobians.
``propagate_independent`` is the usual scheme that treats each step's
function evaluation as independent of all earlier ones.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import DimensionMismatchError, NonFiniteError, NotPositiveDefiniteError
from .gp import GpModel, Horizon
from .linalg import DEFAULT_LADDER, cholesky
from .sampling import DIVERGENCE_LIMIT

log = logging.getLogger(__name__)

LINEARIZED_JOINT = "LinearizedJoint"
INDEPENDENCE_BASELINE = "IndependenceBaseline"


@dataclass(frozen=True)
class MomentSequence:
    """Means ``(N+1, n)`` (row 0 is ``x0``) and trajectory covariance.

    ``cov`` is the full ``(N n, N n)`` covariance of ``X_{1:N}`` for the
    linearized method; ``blocks`` holds the ``N`` marginal ``n x n``
    covariances and is always present.
    """

    means: np.ndarray
    blocks: np.ndarray
    method_tag: str
    cov: Optional[np.ndarray] = None

    @property
    def steps(self) -> int:
        return self.means.shape[0] - 1

    @property
    def state_dim(self) -> int:
        return self.means.shape[1]


def _mean_chain(model: GpModel, x0, inputs):
    n = model.state_dim
    N = inputs.shape[0]
    means = np.empty((N + 1, n))
    means[0] = x0
    Z = np.empty((N, model.input_dim))
    for k in range(N):
        Z[k] = np.concatenate([means[k], inputs[k]])
        nxt = model.mean_stacked(Z[k][None, :])[0]
        if not np.all(np.isfinite(nxt)) or np.abs(nxt).max(initial=0.0) > DIVERGENCE_LIMIT:
            raise NonFiniteError(f"mean chain diverged at step {k + 1}", step=k + 1)
        means[k + 1] = nxt
    return means, Z


def _state_jacobians(model: GpModel, Z):
    n = model.state_dim
    return np.stack([model.mean_jacobian(z)[:, :n] for z in Z])


def gradient_chain(jacobians) -> np.ndarray:
    """Block lower-triangular ``A`` with ``A[i, i] = I`` and ``A[i, j] = J_i A[i-1, j]``.

    ``jacobians[l]`` is the state Jacobian of the mean at ``mu_l``; block row
    ``i`` (0-based) corresponds to ``x_{i+1}``, so ``A[i, j]`` is the product
    ``J_i J_{i-1} ... J_{j+1}``. ``jacobians[0]`` is not used.
    """
    J = np.asarray(jacobians, dtype=float)
    N, n = J.shape[0], J.shape[1]
    A = np.zeros((N, N, n, n))
    eye = np.eye(n)
    for i in range(N):
        A[i, i] = eye
        for j in range(i):
            A[i, j] = J[i] @ A[i - 1, j]
    return A.transpose(0, 2, 1, 3).reshape(N * n, N * n)


def _psd_repair(cov, ladder):
    cov = 0.5 * (cov + cov.T)
    if not cov.any():
        return cov
    try:
        cholesky(cov, ladder)
        return cov
    except NotPositiveDefiniteError:
        vals, vecs = np.linalg.eigh(cov)
        log.warning("trajectory covariance not PSD (min eigenvalue %.3g); flooring at 0", vals.min())
        return (vecs * np.maximum(vals, 0.0)) @ vecs.T


def _inputs(model, inputs, steps):
    m = model.control_dim
    if inputs is None:
        if m:
            raise DimensionMismatchError(f"model expects {m} control inputs per step")
        return np.zeros((steps, 0))
    inputs = np.asarray(inputs, dtype=float).reshape(-1, m) if m else np.zeros((steps, 0))
    if inputs.shape[0] < steps:
        raise DimensionMismatchError(f"need inputs for {steps} steps")
    return inputs[:steps]


def _linearized(model, h, inputs, ladder):
    n, N = model.state_dim, h.steps
    means, Z = _mean_chain(model, h.x0, inputs)
    gram = model.gram(Z, Z) + np.kron(np.eye(N), model.noise)
    A = gradient_chain(_state_jacobians(model, Z))
    cov = _psd_repair(A @ gram @ A.T, ladder)
    blocks = np.stack([cov[i * n:(i + 1) * n, i * n:(i + 1) * n] for i in range(N)])
    return MomentSequence(means, blocks, LINEARIZED_JOINT, cov)


def propagate_linearized(model: GpModel, h: Horizon, ladder=DEFAULT_LADDER) -> MomentSequence:
    """Correlation-aware linearized propagation over ``h.steps`` steps.

    Quadratic in the horizon; no factorization is needed except for the
    final PSD check.
    """
    if model.control_dim:
        raise DimensionMismatchError("model has control inputs; use propagate_linearized_controlled")
    return _linearized(model, h, np.zeros((h.steps, 0)), ladder)


def propagate_linearized_controlled(model: GpModel, h: Horizon, inputs,
                                    ladder=DEFAULT_LADDER) -> MomentSequence:
    """As :func:`propagate_linearized` with ``mu_{k+1} = mu(mu_k, u_k)``; only state Jacobians enter ``A``."""
    return _linearized(model, h, _inputs(model, inputs, h.steps), ladder)


def propagate_independent(model: GpModel, h: Horizon, inputs=None) -> MomentSequence:
    """Baseline ``S_{k+1} = J_k S_k J_k^T + k(mu_k, mu_k) + Q`` (no cross-step correlation)."""
    n, N = model.state_dim, h.steps
    u = _inputs(model, inputs, N)
    means, Z = _mean_chain(model, h.x0, u)
    J = _state_jacobians(model, Z)
    blocks = np.empty((N, n, n))
    S = np.zeros((n, n))
    for k in range(N):
        point = Z[k][None, :]
        S = J[k] @ S @ J[k].T + model.gram(point, point) + model.noise
        S = 0.5 * (S + S.T)
        blocks[k] = S
    return MomentSequence(means, blocks, INDEPENDENCE_BASELINE)


def marginals(ms: MomentSequence):
    """Per-step ``(mean, covariance)`` for ``x_1 .. x_N``."""
    return [(ms.means[k + 1], ms.blocks[k]) for k in range(ms.steps)]
