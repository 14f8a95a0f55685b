"""CSV formats and atomic file output.

Trajectories: ``traj,step,x1..xn``, one row per (trajectory, step).
Moments: ``step,mean_1..mean_n,var_11,var_12,..,var_nn`` with the marginal
covariance block flattened row-major; step 0 carries ``x0`` and zero
variance. Floats are written with 17 significant digits so files round-trip
exactly and are byte-stable across runs.
"""

from __future__ import annotations

import io
import os
import tempfile
from pathlib import Path

import numpy as np

from .propagation import MomentSequence
from .sampling import TrajectoryBatch

FLOAT_FMT = "%.17g"


def atomic_write_text(path, text: str):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _table_text(header, table, int_cols=0):
    buf = io.StringIO()
    fmt = ["%d"] * int_cols + [FLOAT_FMT] * (table.shape[1] - int_cols)
    np.savetxt(buf, table, fmt=fmt, delimiter=",", header=",".join(header), comments="")
    return buf.getvalue()


def trajectory_csv(batch: TrajectoryBatch) -> str:
    S, T, n = batch.states.shape
    traj = np.repeat(np.arange(S), T)
    step = np.tile(np.arange(T), S)
    table = np.column_stack([traj, step, batch.states.reshape(S * T, n)])
    header = ["traj", "step"] + [f"x{i + 1}" for i in range(n)]
    return _table_text(header, table, int_cols=2)


def write_trajectory_csv(path, batch: TrajectoryBatch):
    atomic_write_text(path, trajectory_csv(batch))


def read_trajectory_csv(path) -> np.ndarray:
    """Load trajectory states as ``(count, steps + 1, n)``."""
    table = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    count = int(table[:, 0].max()) + 1
    steps = int(table[:, 1].max()) + 1
    return table[:, 2:].reshape(count, steps, -1)


def moment_header(n):
    return (["step"] + [f"mean_{i + 1}" for i in range(n)]
            + [f"var_{i + 1}{j + 1}" for i in range(n) for j in range(n)])


def moment_table(means, covs) -> np.ndarray:
    """Rows ``step, mean..., var...`` from ``(T, n)`` means and ``(T, n, n)`` covariances."""
    T, n = means.shape
    return np.column_stack([np.arange(T), means, covs.reshape(T, n * n)])


def moment_csv(ms: MomentSequence) -> str:
    n = ms.state_dim
    covs = np.concatenate([np.zeros((1, n, n)), ms.blocks])
    return _table_text(moment_header(n), moment_table(ms.means, covs), int_cols=1)


def write_moment_csv(path, ms: MomentSequence):
    atomic_write_text(path, moment_csv(ms))


def write_matrix_csv(path, matrix):
    buf = io.StringIO()
    np.savetxt(buf, np.atleast_2d(matrix), fmt=FLOAT_FMT, delimiter=",")
    atomic_write_text(path, buf.getvalue())


def read_moment_csv(path):
    """Return ``(means, covs)`` with shapes ``(T, n)`` and ``(T, n, n)``."""
    table = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    width = table.shape[1] - 1
    n = int((-1 + np.sqrt(1 + 4 * width)) / 2)
    return table[:, 1:1 + n], table[:, 1 + n:].reshape(-1, n, n)
