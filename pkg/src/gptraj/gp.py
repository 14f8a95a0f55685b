"""GP dynamics model ``x_{k+1} = f(z_k) + w_k`` with ``f ~ GP(mu, k)``, ``w_k ~ N(0, Q)``.

``z`` is the state, optionally followed by a control input. A model can be
conditioned on transition data; the posterior mean and kernel then replace
the prior ones everywhere, so the simulation and propagation engines never
need to know whether data was used.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
from scipy import linalg as sla

from .errors import DimensionMismatchError
from .kernels import MatrixKernel, MeanFn, finite_difference_jacobian
from .linalg import DEFAULT_LADDER, CholFactor, GaussianDist, as_symmetric, cholesky


@dataclass(frozen=True)
class Horizon:
    steps: int
    x0: np.ndarray

    def __post_init__(self):
        if int(self.steps) < 1:
            raise ValueError("horizon must have at least one step")
        object.__setattr__(self, "steps", int(self.steps))
        object.__setattr__(self, "x0", np.atleast_1d(np.asarray(self.x0, dtype=float)))


@dataclass(frozen=True)
class TrainingData:
    X: np.ndarray
    Y: np.ndarray
    factor: CholFactor
    alpha: np.ndarray  # (k(X,X) + I (x) Q)^{-1} (Y - mu(X)), stacked


@dataclass(frozen=True)
class GpModel:
    """Mean, matrix kernel and process noise of the transition function.

    Parameters
    ----------
    mean : MeanFn
        Prior mean, mapping inputs of dimension ``input_dim`` to the state.
    kernel : MatrixKernel
        Prior kernel with ``out_dim`` equal to the state dimension.
    noise : array_like
        Process noise covariance ``Q`` (``n x n``).
    input_dim : int, optional
        Dimension of the GP input ``z``; defaults to the state dimension.
        Larger values describe controlled systems ``z = [x, u]``.
    """

    mean: MeanFn
    kernel: MatrixKernel
    noise: np.ndarray
    input_dim: Optional[int] = None
    data: Optional[TrainingData] = None

    def __post_init__(self):
        n = self.kernel.out_dim
        q = as_symmetric(np.atleast_2d(np.asarray(self.noise, dtype=float)), "noise")
        if q.shape != (n, n):
            raise DimensionMismatchError(f"noise must be {n}x{n}, got {q.shape}")
        if np.linalg.eigvalsh(q).min() < -1e-12 * max(np.trace(q), 1.0):
            raise ValueError("noise covariance must be positive semidefinite")
        if self.mean.out_dim != n:
            raise DimensionMismatchError("mean and kernel disagree on the state dimension")
        object.__setattr__(self, "noise", q)
        if self.input_dim is None:
            object.__setattr__(self, "input_dim", n)
        elif self.input_dim < n:
            raise DimensionMismatchError("input_dim cannot be smaller than the state dimension")

    @property
    def state_dim(self) -> int:
        return self.kernel.out_dim

    @property
    def control_dim(self) -> int:
        return self.input_dim - self.state_dim

    @property
    def is_conditioned(self) -> bool:
        return self.data is not None

    # -- Remark-1 style conditioning -------------------------------------

    def condition(self, X_train, Y_train, ladder=DEFAULT_LADDER) -> "GpModel":
        """Return the model conditioned on transitions ``Y_i = f(X_i) + w_i``.

        Data already held by the model is kept and the new points appended; the
        posterior is always computed from the prior mean and kernel.
        """
        X = np.asarray(X_train, dtype=float).reshape(-1, self.input_dim)
        Y = np.asarray(Y_train, dtype=float).reshape(-1, self.state_dim)
        if X.shape[0] != Y.shape[0]:
            raise DimensionMismatchError("X_train and Y_train have different point counts")
        if self.data is not None:
            X = np.concatenate([self.data.X, X])
            Y = np.concatenate([self.data.Y, Y])
        if X.shape[0] == 0:
            return replace(self, data=None)
        p = X.shape[0]
        gram = self.kernel.gram(X, X) + np.kron(np.eye(p), self.noise)
        factor = cholesky(0.5 * (gram + gram.T), ladder)
        resid = (Y - self.mean(X)).reshape(-1)
        alpha = sla.cho_solve((factor.lower, True), resid)
        return replace(self, data=TrainingData(X, Y, factor, alpha))

    def _whiten(self, X):
        """``L^{-1} k(X_train, X)`` for points ``(..., p, d)``, shape ``(..., P*n, p*n)``."""
        cross = self.kernel.gram(self.data.X, X)
        lead = cross.shape[:-2]
        rows, cols = cross.shape[-2:]
        flat = np.moveaxis(cross, -2, 0).reshape(rows, -1)
        sol = sla.solve_triangular(self.data.factor.lower, flat, lower=True)
        return np.moveaxis(sol.reshape((rows,) + lead + (cols,)), 0, -2)

    def mean_stacked(self, X) -> np.ndarray:
        """Posterior mean at points ``(..., p, d)``, returned as ``(..., p, n)``."""
        X = np.asarray(X, dtype=float)
        out = self.mean(X)
        if self.data is None:
            return out
        cross = self.kernel.gram(X, self.data.X)
        corr = cross @ self.data.alpha
        return out + corr.reshape(out.shape)

    def gram(self, X, X2) -> np.ndarray:
        """Posterior kernel gram in stacked layout (noise not included)."""
        X, X2 = np.asarray(X, dtype=float), np.asarray(X2, dtype=float)
        prior = self.kernel.gram(X, X2)
        if self.data is None:
            return prior
        v1 = self._whiten(X)
        v2 = v1 if X2 is X else self._whiten(X2)
        return prior - np.swapaxes(v1, -1, -2) @ v2

    def posterior_mean(self, x) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return self.mean_stacked(x[None, :])[0]

    def posterior_kernel(self, x, x2) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        x2 = np.atleast_1d(np.asarray(x2, dtype=float))
        return self.gram(x[None, :], x2[None, :])

    def mean_jacobian(self, z) -> np.ndarray:
        """Jacobian ``n x input_dim`` of the (posterior) mean at a single input."""
        z = np.atleast_1d(np.asarray(z, dtype=float))
        jac = self.mean.jacobian(z)
        if self.data is not None:
            def correction(v):
                cross = self.kernel.gram(v[None, :], self.data.X)
                return cross @ self.data.alpha
            jac = jac + finite_difference_jacobian(correction, z, self.state_dim)
        return jac

    # -- joint trajectory distribution -----------------------------------

    def joint_step_distribution(self, visited) -> GaussianDist:
        """Distribution of ``X_{1:k+1}`` given the inputs ``Z_{0:k}`` at which ``f`` is evaluated.

        Mean ``mu(Z_{0:k})`` stacked, covariance ``k(Z, Z) + I (x) Q``.
        """
        Z = np.asarray(visited, dtype=float).reshape(-1, self.input_dim)
        if Z.shape[0] == 0:
            raise ValueError("need at least one visited point")
        cov = self.gram(Z, Z) + np.kron(np.eye(Z.shape[0]), self.noise)
        return GaussianDist(self.mean_stacked(Z).reshape(-1), 0.5 * (cov + cov.T))


def condition(model: GpModel, X_train, Y_train) -> GpModel:
    return model.condition(X_train, Y_train)


def load_training_csv(path, input_dim: int, state_dim: int):
    """Read transitions from CSV rows ``z_1..z_d, y_1..y_n``; a header line is optional."""
    with open(path) as fh:
        first = fh.readline()
    try:
        [float(v) for v in first.split(",")]
        skip = 0
    except ValueError:
        skip = 1
    table = np.loadtxt(path, delimiter=",", skiprows=skip, ndmin=2)
    if table.shape[1] != input_dim + state_dim:
        raise DimensionMismatchError(
            f"training CSV needs {input_dim + state_dim} columns, found {table.shape[1]}")
    return table[:, :input_dim], table[:, input_dim:]
