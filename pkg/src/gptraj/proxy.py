"""Scalar parametric proxy systems with known trajectory moments.

    1a  constant offset       x' = a x + theta   + w
    1b  additive noise        x' = a x + theta_k + w
    2a  uncertain gain        x' = (a + theta)   x + w
    2b  multiplicative noise  x' = (a + theta_k) x + w

with ``theta ~ N(0, sigma_f**2)`` and ``w ~ N(0, sigma_w**2)``. The usual 2b
setup is noise free, so ``sigma_w`` defaults to 0 there and to 1 otherwise.
Each is a limit case of a GP model with mean ``a x``, which makes them
validation oracles for the GP engines.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import _rng
from .sampling import PROXY_REFERENCE, TrajectoryBatch, check_finite

VARIANTS = ("1a", "1b", "2a", "2b")


@dataclass(frozen=True)
class ProxySpec:
    variant: str
    sigma_f: float
    sigma_w: Optional[float] = None
    x0: float = 1.0
    steps: int = 50
    gain: float = 0.95

    def __post_init__(self):
        if self.sigma_w is None:
            object.__setattr__(self, "sigma_w", 0.0 if self.variant == "2b" else 1.0)
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown proxy variant {self.variant!r}")
        if not (np.isfinite(self.sigma_f) and self.sigma_f >= 0):
            raise ValueError("sigma_f must be finite and nonnegative")
        if not (np.isfinite(self.sigma_w) and self.sigma_w >= 0):
            raise ValueError("sigma_w must be finite and nonnegative")
        if self.steps < 0:
            raise ValueError("steps must be nonnegative")


def gain_raw_moments(gain, sigma_f, order):
    """``E[(gain + theta)**p]`` for ``p = 0..order`` via ``m_p = a m_{p-1} + (p-1) s^2 m_{p-2}``."""
    m = np.empty(order + 1)
    m[0] = 1.0
    if order >= 1:
        m[1] = gain
    for p in range(2, order + 1):
        m[p] = gain * m[p - 1] + (p - 1) * sigma_f ** 2 * m[p - 2]
    return m


def proxy_moments_closed_form(spec: ProxySpec):
    """Exact mean and variance of ``x_k`` for ``k = 0..steps``; returns two arrays."""
    a, sf2, sw2, x0, N = spec.gain, spec.sigma_f ** 2, spec.sigma_w ** 2, spec.x0, spec.steps
    k = np.arange(N + 1)
    if spec.variant in ("1a", "1b"):
        mean = a ** k * x0
        geo = np.array([np.sum(a ** np.arange(j)) for j in k])
        geo2 = np.array([np.sum(a ** (2 * np.arange(j))) for j in k])
        var = sf2 * geo ** 2 + sw2 * geo2 if spec.variant == "1a" else (sf2 + sw2) * geo2
        return mean, var
    if spec.variant == "2a":
        m = gain_raw_moments(a, spec.sigma_f, 2 * N)
        mean = m[k] * x0
        second = m[2 * k] * x0 ** 2 + sw2 * np.array([m[2 * np.arange(j)].sum() for j in k])
        return mean, second - mean ** 2
    # 2b: E[x_{k+1}^2] = (a^2 + s^2) E[x_k^2] + sigma_w^2
    mean = a ** k * x0
    second = np.empty(N + 1)
    second[0] = x0 ** 2
    for j in range(N):
        second[j + 1] = (a ** 2 + sf2) * second[j] + sw2
    return mean, second - mean ** 2


def proxy_simulate(spec: ProxySpec, count: int, seed: int) -> TrajectoryBatch:
    """Monte Carlo of the proxy recursion; trajectory ``i`` uses its own substream."""
    N = spec.steps
    draws = np.empty((count, N, 2))
    for i in range(count):
        draws[i] = _rng.substream(seed, _rng.PROXY, i).standard_normal((N, 2))
    theta = spec.sigma_f * draws[:, :, 0]
    if spec.variant in ("1a", "2a"):
        theta = np.broadcast_to(theta[:, :1], theta.shape)
    w = spec.sigma_w * draws[:, :, 1]
    x = np.empty((count, N + 1))
    x[:, 0] = spec.x0
    for k in range(N):
        if spec.variant in ("1a", "1b"):
            nxt = spec.gain * x[:, k] + theta[:, k] + w[:, k]
        else:
            nxt = (spec.gain + theta[:, k]) * x[:, k] + w[:, k]
        check_finite(nxt[:, None], k + 1)
        x[:, k + 1] = nxt
    return TrajectoryBatch(x[:, :, None], int(seed), PROXY_REFERENCE)
