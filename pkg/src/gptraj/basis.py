"""Finite basis-function approximations ``f(x) ~ Phi(x) theta`` of a GP.

Feature maps return arrays of shape ``(..., n_out, M)`` for inputs
``(..., d)``: scalar-output constructions have ``n_out == 1`` and
:class:`BlockOutputs` stacks independent outputs block-diagonally. The weight
prior is ``N(0, I)`` so the implied kernel is ``Phi(x) Phi(x')^T``.

Random Fourier features use the angular-frequency convention: for
``k(r) = s**2 exp(-r**2 / (2 l**2))`` the frequencies are ``N(0, l**-2 I)``
and ``phi_i(x) = s * sqrt(2/m) * cos(w_i . x + b_i)`` with ``b_i ~ U[0, 2 pi]``.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, replace
from typing import Callable, Optional, Sequence, Union

import numpy as np
from scipy import linalg as sla

from . import _rng
from .errors import DegenerateSpectrumError, DimensionMismatchError
from .gp import Horizon
from .kernels import Linear, MeanFn, ScalarKernel, SquaredExponential, kernel_from_spec
from .linalg import DEFAULT_LADDER, GaussianDist, cholesky
from .sampling import APPROX_FUNCTION_SAMPLE, TrajectoryBatch, check_finite

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# feature maps

class Features:
    out_dim: int = 1

    @property
    def num_features(self) -> int:
        raise NotImplementedError

    def __call__(self, X) -> np.ndarray:
        raise NotImplementedError


@dataclass(frozen=True)
class RandomFourierFeatures(Features):
    """Cosine features; ``omega`` is ``(..., m, d)`` and ``phase`` is ``(..., m)``.

    Leading axes on the parameters let one object hold a different draw per
    function sample; they broadcast against the leading axes of the input.
    """

    omega: np.ndarray
    phase: np.ndarray
    sigma_f: float = 1.0

    @property
    def num_features(self):
        return self.omega.shape[-2]

    @property
    def in_dim(self):
        return self.omega.shape[-1]

    def __call__(self, X):
        X = np.asarray(X, dtype=float)
        proj = (X[..., None, :] * self.omega).sum(-1)
        m = self.num_features
        return (self.sigma_f * np.sqrt(2.0 / m) * np.cos(proj + self.phase))[..., None, :]


@dataclass(frozen=True)
class LinearFeatures(Features):
    """``phi(x) = sigma_f * x``: exact for the linear kernel."""

    sigma_f: float
    in_dim: int = 1

    @property
    def num_features(self):
        return self.in_dim

    def __call__(self, X):
        X = np.asarray(X, dtype=float)
        return (self.sigma_f * X)[..., None, :]


@dataclass(frozen=True)
class NystromFeatures(Features):
    """``phi_i(x) = k(x, P) v_i / sqrt(p * lambda_i)`` from landmarks ``P``."""

    kernel: ScalarKernel
    landmarks: np.ndarray
    eigvals: np.ndarray
    eigvecs: np.ndarray

    @property
    def num_features(self):
        return self.eigvals.size

    def __call__(self, X):
        X = np.asarray(X, dtype=float)
        cross = self.kernel(X[..., None, :], self.landmarks)[..., 0, :]
        p = self.landmarks.shape[0]
        return (cross @ self.eigvecs / np.sqrt(p * self.eigvals))[..., None, :]


@dataclass(frozen=True)
class LinearTimes(Features):
    """Features of ``scale**2 * (x . x') * k_inner(x, x')``: ``scale * x (outer) phi_inner(x)``."""

    inner: Features
    scale: float = 1.0

    @property
    def num_features(self):
        return self.inner.num_features * self.in_dim

    @property
    def in_dim(self):
        return self.inner.in_dim

    def __call__(self, X):
        X = np.asarray(X, dtype=float)
        base = self.inner(X)
        out = self.scale * X[..., None, :, None] * base[..., :, None, :]
        return out.reshape(base.shape[:-1] + (-1,))


@dataclass(frozen=True)
class BlockOutputs(Features):
    """Independent expansions per output dimension, block-diagonal in the weights."""

    blocks: Sequence[Features]

    def __post_init__(self):
        object.__setattr__(self, "blocks", tuple(self.blocks))

    @property
    def out_dim(self):
        return len(self.blocks)

    @property
    def num_features(self):
        return sum(b.num_features for b in self.blocks)

    @property
    def in_dim(self):
        return self.blocks[0].in_dim

    def __call__(self, X):
        parts = [b(X)[..., 0, :] for b in self.blocks]
        lead = np.broadcast_shapes(*(p.shape[:-1] for p in parts))
        out = np.zeros(lead + (self.out_dim, self.num_features))
        col = 0
        for a, part in enumerate(parts):
            out[..., a, col:col + part.shape[-1]] = part
            col += part.shape[-1]
        return out


# ---------------------------------------------------------------------------
# expansions

@dataclass(frozen=True)
class BasisExpansion:
    """Feature map plus Gaussian weight distribution ``theta ~ N(mean, cov)``."""

    features: Features
    weight_mean: np.ndarray
    weight_cov: np.ndarray

    @classmethod
    def prior(cls, features: Features) -> "BasisExpansion":
        m = features.num_features
        return cls(features, np.zeros(m), np.eye(m))

    @property
    def m(self) -> int:
        return self.features.num_features

    @property
    def out_dim(self) -> int:
        return self.features.out_dim

    @property
    def weight_dist(self) -> GaussianDist:
        return GaussianDist(self.weight_mean, self.weight_cov)

    def design(self, X) -> np.ndarray:
        """Stacked design matrix ``(p * n_out, M)`` for points ``(p, d)``."""
        X = np.asarray(X, dtype=float)
        phi = self.features(X)
        return phi.reshape(-1, self.m)

    def approx_gram(self, X, X2) -> np.ndarray:
        """Kernel implied by the prior weights, ``Phi(X) Phi(X2)^T``, in stacked layout."""
        return self.design(X) @ self.design(X2).T

    def mean_function(self, X) -> np.ndarray:
        return self.features(X) @ self.weight_mean


@dataclass(frozen=True)
class FunctionSample:
    """Explicit approximate function ``x -> Phi(x) theta``."""

    expansion: BasisExpansion
    theta: np.ndarray

    def __call__(self, X):
        return self.expansion.features(np.asarray(X, dtype=float)) @ self.theta


def _as_points(X, in_dim):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(-1, in_dim)
    return X


def rff_expansion(kernel: SquaredExponential, m: int, seed=None, in_dim: int = 1,
                  rng: Optional[np.random.Generator] = None) -> BasisExpansion:
    """Random Fourier feature expansion of an SE kernel with ``m`` features."""
    if not isinstance(kernel, SquaredExponential):
        raise TypeError("random Fourier features need a squared exponential kernel")
    if m < 1:
        raise ValueError("m must be positive")
    rng = rng if rng is not None else np.random.default_rng(seed)
    omega = rng.standard_normal((m, in_dim)) / kernel.lengthscale
    phase = rng.uniform(0.0, 2.0 * np.pi, m)
    return BasisExpansion.prior(RandomFourierFeatures(omega, phase, kernel.sigma_f))


def _sign_fix(vecs):
    for i in range(vecs.shape[1]):
        nz = np.flatnonzero(np.abs(vecs[:, i]) > 1e-12)
        if nz.size and vecs[nz[0], i] < 0:
            vecs[:, i] = -vecs[:, i]
    return vecs


def nystrom_expansion(kernel: ScalarKernel, sample_points, m: int, strict: bool = True) -> BasisExpansion:
    """Nyström eigenfunction expansion from ``p`` sample points.

    The top ``m`` eigenpairs of ``K / p`` give eigenfunctions normalised
    against the empirical density; at the sample points the reconstruction
    equals ``K`` up to the truncated part of the spectrum.

    Raises
    ------
    DegenerateSpectrumError
        If fewer than ``m`` eigenvalues exceed ``1e-12 * lambda_max`` and
        ``strict`` is set; otherwise the expansion is truncated to that count.
    """
    P = np.asarray(sample_points, dtype=float)
    if P.ndim == 1:
        P = P[:, None]
    p = P.shape[0]
    if not 1 <= m <= p:
        raise ValueError(f"need 1 <= m <= {p}")
    K = kernel(P, P)
    vals, vecs = np.linalg.eigh(0.5 * (K + K.T) / p)
    order = np.argsort(vals, kind="stable")[::-1]
    vals, vecs = vals[order], vecs[:, order]
    usable = int((vals > 1e-12 * max(vals[0], 0.0)).sum()) if vals[0] > 0 else 0
    if usable < m:
        if strict or usable == 0:
            raise DegenerateSpectrumError(f"only {usable} usable eigenvalues, {m} requested", usable)
        log.warning("Nystrom spectrum degenerate: using %d of %d requested features", usable, m)
        m = usable
    vecs = _sign_fix(vecs[:, :m].copy())
    return BasisExpansion.prior(NystromFeatures(kernel, P, vals[:m].copy(), vecs))


def linear_exact_expansion(kernel: Linear, in_dim: int = 1) -> BasisExpansion:
    if not isinstance(kernel, Linear):
        raise TypeError("linear_exact_expansion needs a linear kernel")
    return BasisExpansion.prior(LinearFeatures(kernel.sigma_f, in_dim))


def linear_times_base(inner: BasisExpansion, scale: float = 1.0) -> BasisExpansion:
    """Expansion of ``scale**2 * x x' * k_inner``; ``phi(0) = 0`` for every feature."""
    return BasisExpansion.prior(LinearTimes(inner.features, scale))


def block_outputs(expansions: Sequence[BasisExpansion]) -> BasisExpansion:
    return BasisExpansion.prior(BlockOutputs([e.features for e in expansions]))


def condition_weights(e: BasisExpansion, X_train, Y_train, Q, prior_mean: Optional[MeanFn] = None,
                      ladder=DEFAULT_LADDER) -> BasisExpansion:
    """Bayesian linear regression posterior of the weights.

    Computed in function space, ``Sigma = S - S Phi^T (Phi S Phi^T + R)^{-1} Phi S``
    with ``R = I (x) Q``, which stays valid for ``Q = 0``. With ``prior_mean``
    the regression targets are the residuals ``Y - mu(X)``.
    """
    X = np.asarray(X_train, dtype=float)
    Y = np.asarray(Y_train, dtype=float)
    if X.size == 0:
        return e
    X = X.reshape(Y.shape[0], -1)
    Y = Y.reshape(X.shape[0], e.out_dim)
    if prior_mean is not None:
        Y = Y - prior_mean(X)
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    if Q.shape != (e.out_dim, e.out_dim):
        raise DimensionMismatchError("noise covariance does not match output dimension")
    Phi = e.design(X)
    S = e.weight_cov
    SPt = S @ Phi.T
    G = Phi @ SPt + np.kron(np.eye(X.shape[0]), Q)
    factor = cholesky(0.5 * (G + G.T), ladder)
    resid = Y.reshape(-1) - Phi @ e.weight_mean
    gain = sla.cho_solve((factor.lower, True), SPt.T).T
    mean = e.weight_mean + gain @ resid
    cov = S - gain @ SPt.T
    return replace(e, weight_mean=mean, weight_cov=0.5 * (cov + cov.T))


def _weight_root(cov):
    # a zero weight covariance (e.g. noise-free exact fit) means every draw is the mean
    return np.zeros_like(cov) if not cov.any() else cholesky(cov).lower


ExpansionFactory = Callable[[np.random.Generator], BasisExpansion]


def draw_function_samples(e: Union[BasisExpansion, ExpansionFactory], count: int, seed) -> list:
    """Draw ``count`` approximate function samples.

    ``e`` is either a fixed expansion, in which case only the weights are
    drawn, or a factory called with a per-sample generator that builds a
    fresh expansion (new random features) for every sample before drawing
    its weights.
    """
    samples = []
    if isinstance(e, BasisExpansion):
        rng = _rng.substream(seed, _rng.FUNCTION)
        z = rng.standard_normal((count, e.m))
        lower = _weight_root(e.weight_cov)
        thetas = e.weight_mean + z @ lower.T
        return [FunctionSample(e, th) for th in thetas]
    for i in range(count):
        rng = _rng.substream(seed, _rng.FUNCTION, i)
        exp_i = e(rng)
        z = rng.standard_normal(exp_i.m)
        lower = _weight_root(exp_i.weight_cov)
        samples.append(FunctionSample(exp_i, exp_i.weight_mean + lower @ z))
    return samples


# ---------------------------------------------------------------------------
# vectorised rollout

def _stack_features(feats: Sequence[Features]) -> Optional[Features]:
    first = feats[0]
    if all(f is first for f in feats):
        return first
    kind = type(first)
    if any(type(f) is not kind for f in feats):
        return None
    if kind is RandomFourierFeatures:
        if len({f.omega.shape for f in feats}) != 1 or len({f.sigma_f for f in feats}) != 1:
            return None
        return RandomFourierFeatures(np.stack([f.omega for f in feats]),
                                     np.stack([f.phase for f in feats]), first.sigma_f)
    if kind is LinearFeatures:
        return first if all(f == first for f in feats) else None
    if kind is LinearTimes:
        if len({f.scale for f in feats}) != 1:
            return None
        inner = _stack_features([f.inner for f in feats])
        return None if inner is None else LinearTimes(inner, first.scale)
    if kind is BlockOutputs:
        if len({len(f.blocks) for f in feats}) != 1:
            return None
        blocks = [_stack_features([f.blocks[a] for f in feats]) for a in range(len(first.blocks))]
        return None if any(b is None for b in blocks) else BlockOutputs(blocks)
    return None


def simulate_with_function_samples(mean: MeanFn, samples: Sequence[FunctionSample], h: Horizon, Q,
                                   seed, mode: str = "residual", inputs=None) -> TrajectoryBatch:
    """Roll out one trajectory per function sample, each sample frozen over the horizon.

    ``mode="residual"`` gives ``x_{k+1} = mu(z_k) + f_i(z_k) + w_k``;
    ``mode="direct"`` gives ``x_{k+1} = f_i(z_k) + w_k``. Noise uses the same
    per-trajectory substreams as the exact sampler. No kernel is evaluated,
    so the cost per step does not grow with the trajectory length.
    """
    if not samples:
        raise ValueError("need at least one function sample")
    if mode not in ("residual", "direct"):
        raise ValueError("mode must be 'residual' or 'direct'")
    n = samples[0].expansion.out_dim
    x0 = np.atleast_1d(np.asarray(h.x0, dtype=float))
    if x0.shape != (n,):
        raise DimensionMismatchError(f"x0 must have length {n}")
    count, N = len(samples), h.steps
    u = np.zeros((N, 0)) if inputs is None else np.asarray(inputs, dtype=float).reshape(N, -1)
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    noise = _rng.standard_normals(seed, _rng.NOISE, count, N, n)
    noise_lower = np.zeros((n, n)) if not Q.any() else cholesky(Q).lower

    stacked = _stack_features([s.expansion.features for s in samples])
    thetas = np.stack([s.theta for s in samples]) if stacked is not None else None

    states = np.empty((count, N + 1, n))
    states[:, 0] = x0
    for k in range(N):
        z = np.concatenate([states[:, k], np.broadcast_to(u[k], (count, u.shape[1]))], axis=-1)
        if stacked is not None:
            f = (stacked(z) @ thetas[..., None])[..., 0]
        else:
            f = np.stack([s(z[i]) for i, s in enumerate(samples)])
        x = f + noise[:, k] @ noise_lower.T
        if mode == "residual":
            x = x + mean(z)
        check_finite(x, k + 1)
        states[:, k + 1] = x
    return TrajectoryBatch(states, int(seed), APPROX_FUNCTION_SAMPLE, noise=noise,
                           inputs=None if inputs is None else u)


# ---------------------------------------------------------------------------
# persistence
#
# One CSV row per field: ``path,field,shape,values...``. ``path`` locates the
# feature node ("f", "f.inner", "f.block0", ...); shape is "x"-joined; floats
# use repr so a saved sample replays exactly.

def _rows(feat: Features, path: str):
    def arr(name, a):
        a = np.asarray(a, dtype=float)
        return [path, name, "x".join(map(str, a.shape))] + [repr(float(v)) for v in a.ravel()]

    if isinstance(feat, RandomFourierFeatures):
        yield [path, "kind", "", "rff"]
        yield arr("omega", feat.omega)
        yield arr("phase", feat.phase)
        yield arr("sigma_f", feat.sigma_f)
    elif isinstance(feat, LinearFeatures):
        yield [path, "kind", "", "linear"]
        yield arr("sigma_f", feat.sigma_f)
        yield arr("in_dim", feat.in_dim)
    elif isinstance(feat, NystromFeatures):
        yield [path, "kind", "", "nystrom"]
        yield [path, "kernel", "", feat.kernel.to_spec()]
        yield arr("landmarks", feat.landmarks)
        yield arr("eigvals", feat.eigvals)
        yield arr("eigvecs", feat.eigvecs)
    elif isinstance(feat, LinearTimes):
        yield [path, "kind", "", "linear_times"]
        yield arr("scale", feat.scale)
        yield from _rows(feat.inner, path + ".inner")
    elif isinstance(feat, BlockOutputs):
        yield [path, "kind", "", "blocks"]
        yield arr("count", len(feat.blocks))
        for a, b in enumerate(feat.blocks):
            yield from _rows(b, f"{path}.block{a}")
    else:
        raise TypeError(f"cannot serialise {type(feat).__name__}")


def save_expansion(path, e: BasisExpansion, theta=None):
    """Write an expansion (and optionally a drawn weight vector) to CSV."""
    rows = list(_rows(e.features, "f"))

    def arr(name, a):
        a = np.asarray(a, dtype=float)
        return ["w", name, "x".join(map(str, a.shape))] + [repr(float(v)) for v in a.ravel()]

    rows += [arr("mean", e.weight_mean), arr("cov", e.weight_cov)]
    if theta is not None:
        rows.append(arr("theta", theta))
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["path", "field", "shape", "values"])
        writer.writerows(rows)


def load_expansion(path):
    """Inverse of :func:`save_expansion`; returns ``(expansion, theta or None)``."""
    table = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        for row in reader:
            node, name, shape, *vals = row
            if name in ("kind", "kernel"):
                table[(node, name)] = vals[0]
            else:
                dims = tuple(int(s) for s in shape.split("x")) if shape else ()
                table[(node, name)] = np.array([float(v) for v in vals]).reshape(dims)

    def build(node):
        kind = table[(node, "kind")]
        if kind == "rff":
            return RandomFourierFeatures(table[(node, "omega")], table[(node, "phase")],
                                         float(table[(node, "sigma_f")]))
        if kind == "linear":
            return LinearFeatures(float(table[(node, "sigma_f")]), int(table[(node, "in_dim")]))
        if kind == "nystrom":
            return NystromFeatures(kernel_from_spec(table[(node, "kernel")]), table[(node, "landmarks")],
                                   table[(node, "eigvals")], table[(node, "eigvecs")])
        if kind == "linear_times":
            return LinearTimes(build(node + ".inner"), float(table[(node, "scale")]))
        if kind == "blocks":
            return BlockOutputs([build(f"{node}.block{a}") for a in range(int(table[(node, "count")]))])
        raise ValueError(f"unknown feature kind {kind!r}")

    e = BasisExpansion(build("f"), table[("w", "mean")], table[("w", "cov")])
    return e, table.get(("w", "theta"))
