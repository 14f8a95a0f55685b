"""Scalar and matrix-valued kernels and mean functions.

Every evaluation accepts leading batch dimensions: a point set is an array of
shape ``(..., p, d)``. Matrix-valued kernels return grams in stacked layout,
where row ``i * n + a`` is output ``a`` of point ``i``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import DimensionMismatchError


# ---------------------------------------------------------------------------
# scalar kernels

class ScalarKernel:
    """Base class: ``k(X, X2)`` maps ``(..., p, d)`` and ``(..., q, d)`` to ``(..., p, q)``."""

    def __call__(self, X, X2):
        raise NotImplementedError

    def diag(self, X):
        X = np.asarray(X, dtype=float)
        return np.diagonal(self(X, X), axis1=-2, axis2=-1)

    def __mul__(self, other):
        return Product(self, other)

    def to_spec(self) -> str:
        raise NotImplementedError


@dataclass(frozen=True)
class SquaredExponential(ScalarKernel):
    """``sigma_f**2 * exp(-|x - x'|**2 / (2 * lengthscale**2))``."""

    sigma_f: float = 1.0
    lengthscale: float = 1.0

    def __post_init__(self):
        if not self.lengthscale > 0:
            raise ValueError("lengthscale must be positive")
        if not self.sigma_f >= 0:
            raise ValueError("sigma_f must be nonnegative")

    def __call__(self, X, X2):
        X, X2 = np.asarray(X, dtype=float), np.asarray(X2, dtype=float)
        diff = X[..., :, None, :] - X2[..., None, :, :]
        sq = (diff * diff).sum(-1)
        return self.sigma_f ** 2 * np.exp(-0.5 * sq / self.lengthscale ** 2)

    def to_spec(self):
        return f"se:{self.sigma_f!r}:{self.lengthscale!r}"


@dataclass(frozen=True)
class Linear(ScalarKernel):
    """``sigma_f**2 * x . x'`` (no offset)."""

    sigma_f: float = 1.0

    def __post_init__(self):
        if not self.sigma_f >= 0:
            raise ValueError("sigma_f must be nonnegative")

    def __call__(self, X, X2):
        X, X2 = np.asarray(X, dtype=float), np.asarray(X2, dtype=float)
        prod = X[..., :, None, :] * X2[..., None, :, :]
        return self.sigma_f ** 2 * prod.sum(-1)

    def to_spec(self):
        return f"linear:{self.sigma_f!r}"


@dataclass(frozen=True)
class Product(ScalarKernel):
    left: ScalarKernel
    right: ScalarKernel

    def __call__(self, X, X2):
        return self.left(X, X2) * self.right(X, X2)

    def to_spec(self):
        return f"{self.left.to_spec()}*{self.right.to_spec()}"


@dataclass(frozen=True)
class ZeroKernel(ScalarKernel):
    def __call__(self, X, X2):
        X, X2 = np.asarray(X, dtype=float), np.asarray(X2, dtype=float)
        shape = np.broadcast_shapes(X.shape[:-2], X2.shape[:-2])
        return np.zeros(shape + (X.shape[-2], X2.shape[-2]))

    def to_spec(self):
        return "zero"


def kernel_from_spec(spec: str) -> ScalarKernel:
    """Parse the compact form produced by :meth:`ScalarKernel.to_spec`."""
    factors = []
    for term in spec.strip().split("*"):
        name, *args = term.strip().split(":")
        vals = [float(a) for a in args]
        if name == "se":
            factors.append(SquaredExponential(*vals))
        elif name == "linear":
            factors.append(Linear(*vals))
        elif name == "zero" and not vals:
            factors.append(ZeroKernel())
        else:
            raise ValueError(f"unknown kernel term {term!r}")
    out = factors[0]
    for f in factors[1:]:
        out = Product(out, f)
    return out


# ---------------------------------------------------------------------------
# matrix-valued kernels

class MatrixKernel:
    """Kernel ``k(x, x')`` with values in ``n x n`` matrices."""

    out_dim: int

    def gram(self, X, X2):
        """Stacked gram ``(..., p*n, q*n)`` for point sets ``(..., p, d)`` and ``(..., q, d)``."""
        raise NotImplementedError

    def __call__(self, x, x2):
        """Single block ``k(x, x2)`` for two points."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        x2 = np.atleast_1d(np.asarray(x2, dtype=float))
        if x.shape != x2.shape or x.ndim != 1:
            raise DimensionMismatchError("kernel_eval expects two points of equal length")
        return self.gram(x[None, :], x2[None, :])


@dataclass(frozen=True)
class IndependentOutputs(MatrixKernel):
    """Block-diagonal kernel with one scalar kernel per output dimension."""

    kernels: Sequence[ScalarKernel]

    def __post_init__(self):
        object.__setattr__(self, "kernels", tuple(self.kernels))
        if not self.kernels:
            raise ValueError("need at least one output kernel")

    @classmethod
    def shared(cls, kernel: ScalarKernel, out_dim: int) -> "IndependentOutputs":
        return cls((kernel,) * out_dim)

    @property
    def out_dim(self):
        return len(self.kernels)

    def gram(self, X, X2):
        X, X2 = np.asarray(X, dtype=float), np.asarray(X2, dtype=float)
        n = self.out_dim
        if n == 1:
            return self.kernels[0](X, X2)
        p, q = X.shape[-2], X2.shape[-2]
        if all(k is self.kernels[0] for k in self.kernels):
            blocks = [self.kernels[0](X, X2)] * n
        else:
            blocks = [k(X, X2) for k in self.kernels]
        lead = blocks[0].shape[:-2]
        out = np.zeros(lead + (p, n, q, n))
        for a, block in enumerate(blocks):
            out[..., :, a, :, a] = block
        return out.reshape(lead + (p * n, q * n))


@dataclass(frozen=True)
class DistanceCoupled(MatrixKernel):
    """Output coupling through an appended coordinate.

    ``[k(x, x')]_{ij} = base([x, d_i], [x', d_j])`` where ``d_i`` is the
    metric value assigned to output ``i`` (default ``d_i = i``). ``base``
    acts on inputs of dimension ``d + 1``.
    """

    base: ScalarKernel
    out_dim: int
    metric: Optional[Sequence[float]] = None

    def __post_init__(self):
        metric = np.arange(self.out_dim, dtype=float) if self.metric is None \
            else np.asarray(self.metric, dtype=float)
        if metric.shape != (self.out_dim,):
            raise ValueError("metric needs one value per output dimension")
        object.__setattr__(self, "metric", tuple(metric))

    def _augment(self, X):
        X = np.asarray(X, dtype=float)
        n = self.out_dim
        rep = np.repeat(X, n, axis=-2)
        tags = np.tile(np.asarray(self.metric), X.shape[-2])
        tags = np.broadcast_to(tags[:, None], rep.shape[:-1] + (1,))
        return np.concatenate([rep, tags], axis=-1)

    def gram(self, X, X2):
        return self.base(self._augment(X), self._augment(X2))


def kernel_eval(k: MatrixKernel, x, x2) -> np.ndarray:
    return k(x, x2)


def kernel_gram(k: MatrixKernel, X, X2) -> np.ndarray:
    return k.gram(X, X2)


# ---------------------------------------------------------------------------
# mean functions

def fd_step(x):
    return np.maximum(1e-6, 1e-6 * np.abs(x))


def finite_difference_jacobian(fn, x, out_dim=None) -> np.ndarray:
    """Central differences with step ``max(1e-6, 1e-6 * |x_i|)``."""
    x = np.asarray(x, dtype=float)
    h = fd_step(x)
    cols = []
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h[i]
        cols.append((np.asarray(fn(x + e)) - np.asarray(fn(x - e))) / (2 * h[i]))
    jac = np.stack(cols, axis=-1) if cols else np.zeros((out_dim or 0, 0))
    return np.atleast_2d(jac)


class MeanFn:
    """Mean function ``R^d -> R^n`` evaluated on arrays ``(..., d)``."""

    out_dim: int

    def __call__(self, X):
        raise NotImplementedError

    def jacobian(self, x) -> np.ndarray:
        raise NotImplementedError


@dataclass(frozen=True)
class ZeroMean(MeanFn):
    out_dim: int = 1
    in_dim: Optional[int] = None

    def __call__(self, X):
        X = np.asarray(X, dtype=float)
        return np.zeros(X.shape[:-1] + (self.out_dim,))

    def jacobian(self, x):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return np.zeros((self.out_dim, x.size))


@dataclass(frozen=True)
class LinearMap(MeanFn):
    """``x -> G x``; ``G`` is ``n x d`` (``d > n`` for controlled systems)."""

    gain: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "gain", np.atleast_2d(np.asarray(self.gain, dtype=float)))

    @property
    def out_dim(self):
        return self.gain.shape[0]

    def __call__(self, X):
        X = np.asarray(X, dtype=float)
        if X.shape[-1] != self.gain.shape[1]:
            raise DimensionMismatchError(
                f"mean expects inputs of dimension {self.gain.shape[1]}, got {X.shape[-1]}")
        return X @ self.gain.T

    def jacobian(self, x):
        return self.gain.copy()


@dataclass(frozen=True)
class Callback(MeanFn):
    """User-supplied mean.

    ``fn`` must be re-entrant. With ``vectorized=True`` it receives arrays of
    shape ``(..., d)``; otherwise it is called once per point with a length-d
    vector. A missing ``jac`` falls back to central finite differences.
    """

    fn: Callable
    out_dim: int = 1
    jac: Optional[Callable] = None
    vectorized: bool = True

    def __call__(self, X):
        X = np.asarray(X, dtype=float)
        if self.vectorized:
            out = np.asarray(self.fn(X), dtype=float)
            return out.reshape(X.shape[:-1] + (self.out_dim,))
        flat = X.reshape(-1, X.shape[-1])
        out = np.array([np.asarray(self.fn(x), dtype=float).reshape(self.out_dim) for x in flat])
        return out.reshape(X.shape[:-1] + (self.out_dim,))

    def jacobian(self, x):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if self.jac is not None:
            return np.atleast_2d(np.asarray(self.jac(x), dtype=float)).reshape(self.out_dim, x.size)
        return finite_difference_jacobian(lambda v: self(v), x, self.out_dim).reshape(self.out_dim, x.size)


def mean_eval(mu: MeanFn, x):
    return mu(np.asarray(x, dtype=float))


def mean_jacobian(mu: MeanFn, x):
    return mu.jacobian(x)
