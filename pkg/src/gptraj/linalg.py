"""Dense Gaussian linear algebra.

Cholesky factorization with a diagonal jitter ladder and incremental block
extension, multivariate normal sampling and Gaussian conditioning. All
factors are lower triangular.

Jitter is relative: rung ``r`` adds ``r * trace(m) / dim`` to the diagonal
(or ``r`` itself for a matrix with zero trace), so behaviour does not depend
on the overall scale of the covariance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg as sla

from .errors import DimensionMismatchError, NotPositiveDefiniteError

#: Relative jitter rungs tried in order after a plain factorization fails.
DEFAULT_LADDER = tuple(10.0 ** -e for e in range(12, 5, -1))

SYMMETRY_RTOL = 1e-12


@dataclass(frozen=True)
class CholFactor:
    """Lower Cholesky factor and the absolute diagonal jitter it needed."""

    lower: np.ndarray
    jitter_used: float = 0.0

    @property
    def dim(self) -> int:
        return self.lower.shape[0]

    def reconstruct(self) -> np.ndarray:
        return self.lower @ self.lower.T


@dataclass(frozen=True)
class GaussianDist:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        if cov.shape != (mean.size, mean.size):
            raise DimensionMismatchError(
                f"mean has length {mean.size} but cov has shape {cov.shape}")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def dim(self) -> int:
        return self.mean.size


def as_symmetric(m, name="matrix") -> np.ndarray:
    """Validate a square, symmetric matrix and return it as a float array."""
    m = np.atleast_2d(np.asarray(m, dtype=float))
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DimensionMismatchError(f"{name} must be square, got shape {m.shape}")
    scale = max(np.abs(m).max(initial=0.0), 1.0)
    if not np.allclose(m, m.T, rtol=0.0, atol=SYMMETRY_RTOL * scale):
        raise DimensionMismatchError(f"{name} is not symmetric")
    return m


def jitter_scale(m: np.ndarray) -> float:
    scale = float(np.trace(m)) / m.shape[0]
    return scale if scale > 0.0 else 1.0


def _factor(m, ladder, scale):
    try:
        return np.linalg.cholesky(m), 0.0
    except np.linalg.LinAlgError:
        pass
    eye = np.eye(m.shape[0])
    for rung in ladder:
        jitter = rung * scale
        try:
            return np.linalg.cholesky(m + jitter * eye), jitter
        except np.linalg.LinAlgError:
            continue
    raise NotPositiveDefiniteError(
        f"matrix of dim {m.shape[0]} not positive definite after jitter "
        f"up to {ladder[-1] * scale if ladder else 0.0:.3g}")


def cholesky(m, ladder=DEFAULT_LADDER) -> CholFactor:
    """Lower Cholesky factor of a symmetric matrix.

    If the plain factorization fails, diagonal jitter is added following
    ``ladder`` (relative to ``trace(m) / dim``). Pass ``ladder=()`` to
    demand strict positive definiteness.

    Raises
    ------
    NotPositiveDefiniteError
        When every rung of the ladder fails.
    DimensionMismatchError
        For non-square or asymmetric input.
    """
    m = as_symmetric(m)
    lower, jitter = _factor(m, tuple(ladder), jitter_scale(m))
    return CholFactor(lower, jitter)


def cholesky_extend(f: CholFactor, cross, corner, ladder=DEFAULT_LADDER) -> CholFactor:
    """Factor of ``[[old, cross], [cross.T, corner]]`` given the factor of ``old``.

    The rows of ``f.lower`` are copied unchanged; only the new block row is
    computed, at ``O(old_dim**2 * new_block)`` cost. Jitter for the Schur
    complement is scaled by the trace of ``corner``.
    """
    corner = as_symmetric(corner, "corner")
    nb = corner.shape[0]
    cross = np.asarray(cross, dtype=float).reshape(f.dim, nb)
    tail = sla.solve_triangular(f.lower, cross, lower=True)
    schur = corner - tail.T @ tail
    schur = 0.5 * (schur + schur.T)
    l22, jitter = _factor(schur, tuple(ladder), jitter_scale(corner))
    dim = f.dim + nb
    lower = np.zeros((dim, dim))
    lower[:f.dim, :f.dim] = f.lower
    lower[f.dim:, :f.dim] = tail.T
    lower[f.dim:, f.dim:] = l22
    return CholFactor(lower, max(f.jitter_used, jitter))


def mvn_sample(d: GaussianDist, std_normals, ladder=DEFAULT_LADDER) -> np.ndarray:
    """Deterministic transform ``mean + L z`` of standard normal draws.

    ``std_normals`` may be a vector of length ``d.dim`` or an array whose last
    axis has that length (one sample per leading index).
    """
    z = np.asarray(std_normals, dtype=float)
    if z.shape[-1] != d.dim:
        raise DimensionMismatchError(
            f"expected {d.dim} standard normals, got trailing size {z.shape[-1]}")
    lower = cholesky(d.cov, ladder).lower
    return d.mean + z @ lower.T


def gaussian_condition(joint: GaussianDist, observed_idx, observed_val, obs_noise=None,
                       ladder=()) -> GaussianDist:
    """Posterior over the unobserved coordinates of a joint Gaussian.

    ``obs_noise`` is added to the observed block before inversion; the
    returned distribution lists the unobserved coordinates in ascending
    order.
    """
    idx = np.asarray(observed_idx, dtype=int).reshape(-1)
    if idx.size == 0:
        return joint
    if idx.min() < 0 or idx.max() >= joint.dim or np.unique(idx).size != idx.size:
        raise DimensionMismatchError("observed indices out of range or repeated")
    val = np.asarray(observed_val, dtype=float).reshape(-1)
    if val.size != idx.size:
        raise DimensionMismatchError("observed values do not match observed indices")
    if obs_noise is None:
        obs_noise = np.zeros((idx.size, idx.size))
    noise = as_symmetric(obs_noise, "obs_noise")
    if noise.shape[0] != idx.size:
        raise DimensionMismatchError("obs_noise dimension does not match observed indices")

    rest = np.setdiff1d(np.arange(joint.dim), idx)
    s_oo = joint.cov[np.ix_(idx, idx)] + noise
    s_ro = joint.cov[np.ix_(rest, idx)]
    factor = cholesky(s_oo, ladder)
    gain = sla.cho_solve((factor.lower, True), s_ro.T).T
    mean = joint.mean[rest] + gain @ (val - joint.mean[idx])
    cov = joint.cov[np.ix_(rest, rest)] - gain @ s_ro.T
    return GaussianDist(mean, 0.5 * (cov + cov.T))


# Batched helpers used by the trajectory sampler. Every operation acts on each
# leading index independently, so results do not depend on batch composition.

def _batch_cholesky_once(s):
    n = s.shape[-1]
    lower = np.zeros_like(s)
    ok = np.ones(s.shape[0], dtype=bool)
    for j in range(n):
        row = lower[:, j, :j]
        d = s[:, j, j] - (row * row).sum(-1)
        ok &= d > 0.0
        ljj = np.sqrt(np.where(d > 0.0, d, 1.0))
        lower[:, j, j] = ljj
        if j + 1 < n:
            below = (lower[:, j + 1:, :j] * row[:, None, :]).sum(-1)
            lower[:, j + 1:, j] = (s[:, j + 1:, j] - below) / ljj[:, None]
    return lower, ok


def batch_cholesky(s, scale, ladder=DEFAULT_LADDER):
    """Cholesky of a stack ``(B, n, n)`` with a per-item jitter ladder.

    ``scale`` holds the per-item reference magnitude for the relative jitter.
    Items that are exactly zero get a zero factor. Returns ``(lower, jitter)``;
    raises with the first failing item index.
    """
    lower, ok = _batch_cholesky_once(s)
    # An exactly zero block carries no uncertainty: keep the zero factor instead of jittering it.
    zero = ~s.reshape(s.shape[0], -1).any(axis=1)
    lower[zero] = 0.0
    ok |= zero
    jitter = np.zeros(s.shape[0])
    eye = np.eye(s.shape[-1])
    for rung in ladder:
        if ok.all():
            break
        todo = np.flatnonzero(~ok)
        amount = rung * scale[todo]
        retry, good = _batch_cholesky_once(s[todo] + amount[:, None, None] * eye)
        lower[todo[good]] = retry[good]
        jitter[todo[good]] = amount[good]
        ok[todo[good]] = True
    if not ok.all():
        bad = int(np.flatnonzero(~ok)[0])
        raise NotPositiveDefiniteError(f"batch item {bad} not positive definite after jitter ladder")
    return lower, jitter


def batch_extend(lower, size, cross, corner, ladder=DEFAULT_LADDER):
    """Grow stacked factors in place by one block row.

    ``lower`` is a preallocated ``(B, D, D)`` array whose leading
    ``size x size`` blocks hold valid factors; ``cross`` is ``(B, size, nb)``
    and ``corner`` is ``(B, nb, nb)``. Rows ``size:size+nb`` are written.
    Returns ``(tail, l22, jitter)`` where ``tail`` is ``L11^{-1} cross``.
    """
    nb = corner.shape[-1]
    cross = np.ascontiguousarray(cross)
    tail = np.empty_like(cross)
    for start in range(0, size, nb):
        stop = start + nb
        rhs = cross[:, start:stop, :]
        if start:
            # contiguous copy: the matmul path must not depend on the storage size of `lower`
            rows = np.ascontiguousarray(lower[:, start:stop, :start])
            rhs = rhs - rows @ np.ascontiguousarray(tail[:, :start, :])
        # small lower-triangular solve on the diagonal block
        for r in range(nb):
            acc = rhs[:, r, :]
            if r:
                acc = acc - (lower[:, start + r, start:start + r, None] * tail[:, start:start + r, :]).sum(1)
            # zero pivots come from zero blocks, whose cross terms are zero as well
            pivot = lower[:, start + r, start + r, None]
            tail[:, start + r, :] = np.divide(acc, pivot, out=np.zeros_like(acc), where=pivot != 0.0)
    schur = corner - np.swapaxes(tail, 1, 2) @ tail
    schur = 0.5 * (schur + np.swapaxes(schur, 1, 2))
    scale = np.trace(corner, axis1=1, axis2=2) / nb
    scale = np.where(scale > 0.0, scale, 1.0)
    l22, jitter = batch_cholesky(schur, scale, ladder)
    lower[:, size:size + nb, :size] = np.swapaxes(tail, 1, 2)
    lower[:, size:size + nb, size:size + nb] = l22
    return tail, l22, jitter
