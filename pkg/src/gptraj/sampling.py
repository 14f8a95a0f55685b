"""Exact trajectory sampling from GP dynamics.

A trajectory is grown one step at a time. At step ``k`` the Cholesky factor of
``k(Z_{0:k}, Z_{0:k}) + I (x) Q`` is extended by one block row and

    x_{k+1} = mu(z_k) + L[k, :k] W_{0:k} + L[k, k] w_k,

so each trajectory is a draw from the joint GP trajectory law with all
correlations between successive function evaluations kept. Trajectories are
processed in fixed-size chunks with vectorised block forward substitution.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from . import _rng
from .errors import DimensionMismatchError, NonFiniteError, UnsupportedMethodError
from .gp import GpModel, Horizon
from .linalg import DEFAULT_LADDER, batch_extend

log = logging.getLogger(__name__)

GROUND_TRUTH = "GroundTruth"
APPROX_FUNCTION_SAMPLE = "ApproxFunctionSample"
PROXY_REFERENCE = "ProxyReference"

DIVERGENCE_LIMIT = 1e100
CHUNK = 1024


@dataclass(frozen=True)
class TrajectoryBatch:
    """Sampled trajectories ``states[i, k]`` for ``k = 0..N`` (``states[:, 0] == x0``).

    ``noise`` holds the standard normal draws ``W[i, k]`` used at step ``k``;
    ``factors`` is only populated when a sampler was asked to keep its
    Cholesky factors for :func:`resume_extend`.
    """

    states: np.ndarray
    seed: int
    method_tag: str
    noise: Optional[np.ndarray] = None
    inputs: Optional[np.ndarray] = None
    jitter: Optional[np.ndarray] = None
    factors: Optional[tuple] = None

    @property
    def count(self) -> int:
        return self.states.shape[0]

    @property
    def steps(self) -> int:
        return self.states.shape[1] - 1

    @property
    def state_dim(self) -> int:
        return self.states.shape[2]


def check_finite(x, step):
    bad = ~np.isfinite(x) | (np.abs(x) > DIVERGENCE_LIMIT)
    if bad.any():
        traj = int(np.flatnonzero(bad.reshape(x.shape[0], -1).any(axis=1))[0])
        raise NonFiniteError(f"trajectory {traj} diverged at step {step}", step=step)


def _inputs_array(model: GpModel, inputs, steps):
    m = model.control_dim
    if inputs is None:
        if m:
            raise DimensionMismatchError(f"model expects {m} control inputs per step")
        return np.zeros((steps, 0))
    inputs = np.asarray(inputs, dtype=float).reshape(-1, m) if m else np.zeros((steps, 0))
    if inputs.shape[0] < steps:
        raise DimensionMismatchError(f"need inputs for {steps} steps, got {inputs.shape[0]}")
    return inputs[:steps]


def _advance(model, states, inputs, noise, lower, k_start, k_end, ladder):
    """Run steps ``k_start..k_end-1`` for one chunk, filling ``states`` and ``lower`` in place."""
    n = model.state_dim
    count = states.shape[0]
    jitter = np.zeros(count)
    for k in range(k_start, k_end):
        u = np.broadcast_to(inputs[:k + 1], (count, k + 1, inputs.shape[1]))
        Z = np.concatenate([states[:, :k + 1], u], axis=-1)
        z_k = Z[:, k:k + 1]
        corner = model.gram(z_k, z_k) + model.noise
        cross = model.gram(Z[:, :k], z_k)
        tail, l22, jit = batch_extend(lower, k * n, cross, corner, ladder)
        jitter = np.maximum(jitter, jit)
        w = noise[:, k, :, None]
        x = model.mean_stacked(z_k)[:, 0] + (l22 @ w)[..., 0]
        if k:
            past = noise[:, :k].reshape(count, k * n, 1)
            x = x + (np.swapaxes(tail, 1, 2) @ past)[..., 0]
        check_finite(x, k + 1)
        states[:, k + 1] = x
    return jitter


def _sample(model, x0, steps, inputs, count, seed, keep_factors, ladder, method_tag=GROUND_TRUTH):
    n = model.state_dim
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    if x0.shape != (n,):
        raise DimensionMismatchError(f"x0 must have length {n}")
    if count < 1:
        raise ValueError("need at least one trajectory")
    noise = _rng.standard_normals(seed, _rng.NOISE, count, steps, n)
    states = np.empty((count, steps + 1, n))
    states[:, 0] = x0
    jitter = np.zeros(count)
    factors = []
    for start in range(0, count, CHUNK):
        sl = slice(start, min(start + CHUNK, count))
        lower = np.zeros((sl.stop - sl.start, steps * n, steps * n))
        jitter[sl] = _advance(model, states[sl], inputs, noise[sl], lower, 0, steps, ladder)
        if keep_factors:
            factors.append(lower)
    if jitter.any():
        log.info("jitter needed for %d of %d trajectories (max %.3g)",
                 int((jitter > 0).sum()), count, jitter.max())
    return TrajectoryBatch(states, int(seed), method_tag, noise=noise,
                           inputs=inputs if inputs.shape[1] else None, jitter=jitter,
                           factors=tuple(factors) if keep_factors else None)


def sample_trajectories(model: GpModel, h: Horizon, count: int, seed: int,
                        keep_factors: bool = False, ladder=DEFAULT_LADDER) -> TrajectoryBatch:
    """Draw ``count`` exact trajectory samples of an autonomous GP system.

    Parameters
    ----------
    model : GpModel
        Prior or conditioned model with no control inputs.
    h : Horizon
        Number of steps and initial state.
    count : int
        Number of trajectories.
    seed : int
        Root seed; trajectory ``i`` uses its own noise substream.
    keep_factors : bool
        Retain the per-trajectory Cholesky factors so the batch can be
        lengthened cheaply with :func:`resume_extend`.

    Raises
    ------
    NotPositiveDefiniteError
        If a Schur complement stays indefinite through the jitter ladder.
    NonFiniteError
        If a state exceeds ``1e100`` in magnitude.
    """
    if model.control_dim:
        raise DimensionMismatchError("model has control inputs; use sample_trajectories_controlled")
    inputs = np.zeros((h.steps, 0))
    return _sample(model, h.x0, h.steps, inputs, count, seed, keep_factors, ladder)


def sample_trajectories_controlled(model: GpModel, h: Horizon, inputs, count: int, seed: int,
                                   keep_factors: bool = False, ladder=DEFAULT_LADDER) -> TrajectoryBatch:
    """Exact trajectory samples of ``x_{k+1} = f(x_k, u_k) + w_k`` for a fixed input sequence.

    The standard normal draws depend only on ``seed``, not on ``inputs``, so
    rollouts for different input sequences share their randomness.
    """
    inputs = _inputs_array(model, inputs, h.steps)
    return _sample(model, h.x0, h.steps, inputs, count, seed, keep_factors, ladder)


def resume_extend(batch: TrajectoryBatch, model: GpModel, extra_steps: int, inputs=None,
                  ladder=DEFAULT_LADDER) -> TrajectoryBatch:
    """Lengthen a ground-truth batch by ``extra_steps``.

    Uses the retained factors when present and replays from the seed
    otherwise; in both cases the result equals a single run with the longer
    horizon, bit for bit. ``inputs`` supplies the additional control inputs.
    """
    if batch.method_tag != GROUND_TRUTH:
        raise UnsupportedMethodError(f"cannot resume a {batch.method_tag} batch")
    if extra_steps < 0:
        raise ValueError("extra_steps must be nonnegative")
    if extra_steps == 0:
        return batch
    n = model.state_dim
    N = batch.steps
    total = N + extra_steps
    old_inputs = batch.inputs if batch.inputs is not None else np.zeros((N, model.control_dim))
    if model.control_dim:
        more = _inputs_array(model, inputs, extra_steps)
        all_inputs = np.concatenate([old_inputs[:N], more])
    else:
        all_inputs = np.zeros((total, 0))

    if batch.factors is None:
        log.info("no retained factors; replaying %d trajectories from seed %d", batch.count, batch.seed)
        out = _sample(model, batch.states[0, 0], total, all_inputs, batch.count, batch.seed,
                      False, ladder)
        return out

    extra = _rng.standard_normals(batch.seed, _rng.NOISE, batch.count, extra_steps, n, start=N)
    noise = np.concatenate([batch.noise, extra], axis=1)
    states = np.empty((batch.count, total + 1, n))
    states[:, :N + 1] = batch.states
    jitter = batch.jitter.copy()
    factors = []
    for c, old in enumerate(batch.factors):
        start = c * CHUNK
        sl = slice(start, start + old.shape[0])
        lower = np.zeros((old.shape[0], total * n, total * n))
        lower[:, :N * n, :N * n] = old
        jit = _advance(model, states[sl], all_inputs, noise[sl], lower, N, total, ladder)
        jitter[sl] = np.maximum(jitter[sl], jit)
        factors.append(lower)
    return replace(batch, states=states, noise=noise, jitter=jitter, factors=tuple(factors),
                   inputs=all_inputs if all_inputs.shape[1] else None)
