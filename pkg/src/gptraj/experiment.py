"""Experiment orchestration: build models from a config, run methods, compare moments."""

from __future__ import annotations

import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import _rng, basis, io
from .config import ExperimentConfig
from .errors import InsufficientSamplesError, UnsupportedMethodError
from .gp import GpModel, Horizon, load_training_csv
from .kernels import (DistanceCoupled, IndependentOutputs, Linear, LinearMap, Product,
                      SquaredExponential, ZeroKernel, ZeroMean)
from .linalg import cholesky
from .propagation import (MomentSequence, propagate_independent, propagate_linearized,
                          propagate_linearized_controlled)
from .proxy import ProxySpec, proxy_moments_closed_form, proxy_simulate
from .sampling import TrajectoryBatch, sample_trajectories, sample_trajectories_controlled

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# model construction

def scalar_kernel(cfg: ExperimentConfig):
    se = SquaredExponential(1.0, cfg.lengthscale)
    if cfg.kernel_type == "se":
        return SquaredExponential(cfg.sigma_f, cfg.lengthscale)
    if cfg.kernel_type == "linear":
        return Linear(cfg.sigma_f)
    if cfg.kernel_type == "linear*se":
        return Product(Linear(cfg.sigma_f), se)
    if cfg.kernel_type == "se*linear":
        return Product(SquaredExponential(cfg.sigma_f, cfg.lengthscale), Linear(1.0))
    return ZeroKernel()


def build_model(cfg: ExperimentConfig) -> GpModel:
    n, d = cfg.state_dim, cfg.state_dim + cfg.control_dim
    k = scalar_kernel(cfg)
    if cfg.coupling == "distance":
        kernel = DistanceCoupled(k, n, cfg.metric)
    else:
        kernel = IndependentOutputs.shared(k, n)
    if cfg.mean == "zero":
        mean = ZeroMean(n, d)
    else:
        G = cfg.gain if not cfg.control_dim else np.hstack([cfg.gain, cfg.input_gain])
        mean = LinearMap(G)
    model = GpModel(mean, kernel, cfg.noise, input_dim=d)
    if cfg.data_path is not None:
        X, Y = load_training_csv(cfg.data_path, d, n)
        model = model.condition(X, Y)
    return model


def load_inputs(cfg: ExperimentConfig):
    if not cfg.control_dim:
        return None
    U = np.loadtxt(cfg.inputs_path, delimiter=",", ndmin=2)
    if U.shape[1] != cfg.control_dim or U.shape[0] < cfg.steps:
        raise UnsupportedMethodError(
            f"inputs file needs {cfg.steps} rows of {cfg.control_dim} values, got {U.shape}")
    return U[:cfg.steps]


def expansion_factory(cfg: ExperimentConfig, model: GpModel):
    """Build the basis expansion (or per-sample factory) used for function samples."""
    construction = cfg.basis_construction
    if construction == "auto":
        construction = {"se": "rff", "linear": "linear", "linear*se": "linear_rff",
                        "se*linear": "linear_rff"}.get(cfg.kernel_type)
        if construction is None:
            raise UnsupportedMethodError(f"no basis construction for kernel {cfg.kernel_type!r}")
    d, n = model.input_dim, model.state_dim
    se = SquaredExponential(1.0 if "linear" in cfg.kernel_type else cfg.sigma_f, cfg.lengthscale)

    def scalar(rng):
        if construction == "rff":
            if cfg.kernel_type != "se":
                raise UnsupportedMethodError("rff needs an se kernel")
            return basis.rff_expansion(se, cfg.basis_m, in_dim=d, rng=rng)
        if construction == "linear":
            if cfg.kernel_type != "linear":
                raise UnsupportedMethodError("linear construction needs a linear kernel")
            return basis.linear_exact_expansion(Linear(cfg.sigma_f), d)
        if construction == "linear_rff":
            if cfg.kernel_type not in ("linear*se", "se*linear"):
                raise UnsupportedMethodError("linear_rff needs a product linear/se kernel")
            return basis.linear_times_base(basis.rff_expansion(se, cfg.basis_m, in_dim=d, rng=rng),
                                           scale=cfg.sigma_f)
        pts = _rng.substream(cfg.seed, _rng.POINTS).uniform(
            cfg.nystrom_low, cfg.nystrom_high, (cfg.nystrom_points, d))
        return basis.nystrom_expansion(scalar_kernel(cfg), pts, cfg.basis_m)

    def full(rng):
        e = scalar(rng)
        if n > 1:
            e = basis.block_outputs([e] + [scalar(rng) for _ in range(n - 1)])
        if model.data is not None:
            prior = model.mean if cfg.basis_mode == "residual" else None
            e = basis.condition_weights(e, model.data.X, model.data.Y, model.noise, prior_mean=prior)
        return e

    randomized = construction in ("rff", "linear_rff")
    if randomized and cfg.basis_resample:
        return full
    return full(_rng.substream(cfg.seed, _rng.FUNCTION, 2 ** 32))


def proxy_spec(cfg: ExperimentConfig, variant: str) -> ProxySpec:
    sigma_w = cfg.proxy_sigma_w
    if sigma_w is None:
        sigma_w = float(np.sqrt(cfg.noise[0, 0]))
    return ProxySpec(variant, cfg.proxy_sigma_f, sigma_w, float(cfg.x0[0]), cfg.steps,
                     float(cfg.gain[0, 0]))


# ---------------------------------------------------------------------------
# statistics

@dataclass(frozen=True)
class EmpiricalMoments:
    """Per-step sample statistics of a trajectory batch, steps ``0..N``."""

    mean: np.ndarray       # (T, n)
    cov: np.ndarray        # (T, n, n), unbiased
    se_mean: np.ndarray    # (T, n)
    se_var: np.ndarray     # (T, n)
    count: int

    @property
    def var(self):
        return np.diagonal(self.cov, axis1=1, axis2=2)


def empirical_moments(batch) -> EmpiricalMoments:
    """Sample mean, unbiased covariance and standard errors per step.

    The variance standard error uses the fourth central moment,
    ``Var(s^2) ~ (m4 - (S-3)/(S-1) s^4) / S``.
    """
    X = batch.states if isinstance(batch, TrajectoryBatch) else np.asarray(batch, dtype=float)
    if X.ndim == 2:
        X = X[:, :, None]
    S = X.shape[0]
    if S < 2:
        raise InsufficientSamplesError("need at least two trajectories")
    mean = X.mean(axis=0)
    centred = X - mean
    cov = np.einsum("stn,stm->tnm", centred, centred) / (S - 1)
    var = np.diagonal(cov, axis1=1, axis2=2)
    m4 = (centred ** 4).mean(axis=0)
    var_of_var = np.maximum(m4 - (S - 3) / (S - 1) * var ** 2, 0.0) / S
    return EmpiricalMoments(mean, cov, np.sqrt(var / S), np.sqrt(var_of_var), S)


# ---------------------------------------------------------------------------
# methods

@dataclass
class MethodResult:
    name: str
    means: np.ndarray          # (T, n)
    covs: np.ndarray           # (T, n, n)
    runtime: float
    batch: Optional[TrajectoryBatch] = None
    moments: Optional[MomentSequence] = None
    stats: Optional[EmpiricalMoments] = None

    @property
    def variances(self):
        return np.diagonal(self.covs, axis1=1, axis2=2)


def _sampling_result(name, batch, runtime):
    stats = empirical_moments(batch)
    return MethodResult(name, stats.mean, stats.cov, runtime, batch=batch, stats=stats)


def run_method(cfg: ExperimentConfig, model: GpModel, method: str, inputs=None) -> MethodResult:
    """Run one named method; sampling methods are summarised by their empirical moments."""
    h = Horizon(cfg.steps, cfg.x0)
    start = time.perf_counter()
    if method == "ground_truth":
        if model.control_dim:
            batch = sample_trajectories_controlled(model, h, inputs, cfg.samples, cfg.seed)
        else:
            batch = sample_trajectories(model, h, cfg.samples, cfg.seed)
        return _sampling_result(method, batch, time.perf_counter() - start)
    if method == "afs":
        samples = basis.draw_function_samples(expansion_factory(cfg, model), cfg.samples, cfg.seed)
        batch = basis.simulate_with_function_samples(model.mean, samples, h, model.noise, cfg.seed,
                                                     mode=cfg.basis_mode, inputs=inputs)
        return _sampling_result(method, batch, time.perf_counter() - start)
    if method.startswith("proxy:"):
        batch = proxy_simulate(proxy_spec(cfg, method.split(":", 1)[1]), cfg.samples, cfg.seed)
        return _sampling_result(method, batch, time.perf_counter() - start)
    if method == "linearized":
        if model.control_dim:
            ms = propagate_linearized_controlled(model, h, inputs)
        else:
            ms = propagate_linearized(model, h)
    elif method == "independent":
        ms = propagate_independent(model, h, inputs)
    else:
        raise UnsupportedMethodError(f"unknown method {method!r}")
    n = ms.state_dim
    covs = np.concatenate([np.zeros((1, n, n)), ms.blocks])
    return MethodResult(method, ms.means, covs, time.perf_counter() - start, moments=ms)


# ---------------------------------------------------------------------------
# comparison

@dataclass
class ComparisonReport:
    """Per-method moments plus deviations from the reference method."""

    reference: str
    results: dict
    max_rel_var_deviation: dict
    terminal_var_ratio: dict
    seed: int
    config_echo: str
    runtimes: dict = field(default_factory=dict)

    def underestimates(self, method, threshold=0.5) -> bool:
        return bool(np.any(self.terminal_var_ratio[method] < threshold))


def relative_deviation(var, ref):
    """``|var - ref| / ref`` elementwise, absolute difference where ``ref == 0``."""
    diff = np.abs(var - ref)
    safe = np.where(ref > 0, ref, 1.0)
    return np.where(ref > 0, diff / safe, diff)


def compare(results: dict, reference: str, seed: int, echo: str) -> ComparisonReport:
    ref = results[reference].variances
    dev, ratio = {}, {}
    for name, res in results.items():
        dev[name] = float(relative_deviation(res.variances[1:], ref[1:]).max())
        terminal_ref = np.where(ref[-1] > 0, ref[-1], np.nan)
        ratio[name] = res.variances[-1] / terminal_ref
    return ComparisonReport(reference, results, dev, ratio, seed, echo,
                            {k: r.runtime for k, r in results.items()})


def file_stem(method):
    return method.replace(":", "-")


def report_csv(report: ComparisonReport) -> str:
    lines = ["method,step,dim,mean,var,lower,upper"]
    fmt = io.FLOAT_FMT
    for name, res in report.results.items():
        var = res.variances
        for t in range(res.means.shape[0]):
            for a in range(res.means.shape[1]):
                mu, v = res.means[t, a], var[t, a]
                sd = np.sqrt(max(v, 0.0))
                vals = ",".join(fmt % x for x in (mu, v, mu - 2 * sd, mu + 2 * sd))
                lines.append(f"{name},{t},{a + 1},{vals}")
    return "\n".join(lines) + "\n"


def summary_csv(report: ComparisonReport) -> str:
    lines = ["method,reference,max_rel_var_deviation,terminal_var_ratio,underestimates"]
    for name in report.results:
        ratio = report.terminal_var_ratio[name]
        ratio_text = ";".join(io.FLOAT_FMT % r for r in np.atleast_1d(ratio))
        flag = "yes" if report.underestimates(name) else "no"
        lines.append(f"{name},{report.reference},{io.FLOAT_FMT % report.max_rel_var_deviation[name]},"
                     f"{ratio_text},{flag}")
    return "\n".join(lines) + "\n"


def stderr_csv(stats: EmpiricalMoments) -> str:
    n = stats.mean.shape[1]
    header = ["step"] + [f"se_mean_{i + 1}" for i in range(n)] + [f"se_var_{i + 1}" for i in range(n)]
    table = np.column_stack([np.arange(stats.mean.shape[0]), stats.se_mean, stats.se_var])
    return io._table_text(header, table, int_cols=1)


def run_experiment(cfg: ExperimentConfig, write: bool = True, parallel: bool = True) -> ComparisonReport:
    """Run every configured method and assemble the comparison report.

    Writes ``<method>_moments.csv`` (and ``<method>_stderr.csv`` for sampling
    methods), ``report.csv``, ``summary.csv`` and ``config_echo.ini`` to the
    output directory. Runtimes go to ``timing.csv`` only when requested,
    since they are the one output that is not reproducible.
    """
    model = build_model(cfg)
    inputs = load_inputs(cfg)
    def run(method):
        log.info("running %s", method)
        try:
            res = run_method(cfg, model, method, inputs)
        except Exception as exc:
            exc.args = (f"[{method}] {exc.args[0] if exc.args else exc}",) + exc.args[1:]
            raise
        log.info("%s finished in %.2fs", method, res.runtime)
        return res

    # Methods are independent and seeded separately, so running them
    # concurrently does not change any output.
    workers = max(1, min(len(cfg.methods), os.cpu_count() or 1)) if parallel else 1
    with ThreadPoolExecutor(max_workers=workers) as pool:
        results = dict(zip(cfg.methods, pool.map(run, cfg.methods)))
    report = compare(results, cfg.reference, cfg.seed, cfg.echo())
    if write:
        out = cfg.out_dir
        for name, res in results.items():
            stem = file_stem(name)
            io.atomic_write_text(out / f"{stem}_moments.csv",
                                 io._table_text(io.moment_header(res.means.shape[1]),
                                                io.moment_table(res.means, res.covs), int_cols=1))
            if res.stats is not None:
                io.atomic_write_text(out / f"{stem}_stderr.csv", stderr_csv(res.stats))
        io.atomic_write_text(out / "report.csv", report_csv(report))
        io.atomic_write_text(out / "summary.csv", summary_csv(report))
        io.atomic_write_text(out / "config_echo.ini", report.config_echo)
        if cfg.timing:
            io.atomic_write_text(out / "timing.csv", "method,seconds\n" + "".join(
                f"{k},{v:.6f}\n" for k, v in report.runtimes.items()))
    return report


def closed_form_moments(cfg: ExperimentConfig, variant: str):
    return proxy_moments_closed_form(proxy_spec(cfg, variant))


# ---------------------------------------------------------------------------
# kernel diagnostics

def kernel_check(cfg: ExperimentConfig) -> list:
    """PSD and basis-reconstruction diagnostics as ``(quantity, value)`` rows."""
    model = build_model(cfg)
    d = model.input_dim
    pts = _rng.substream(cfg.seed, _rng.POINTS, 1).uniform(cfg.check_low, cfg.check_high,
                                                           (cfg.check_points, d))
    K = model.gram(pts, pts)
    rows = [("points", cfg.check_points),
            ("symmetry_error", float(np.abs(K - K.T).max())),
            ("min_eigenvalue", float(np.linalg.eigvalsh(0.5 * (K + K.T)).min()))]
    try:
        factor = cholesky(0.5 * (K + K.T))
        rows += [("cholesky_ok", 1), ("jitter_used", factor.jitter_used)]
    except np.linalg.LinAlgError:
        rows += [("cholesky_ok", 0), ("jitter_used", float("nan"))]
    if cfg.coupling == "independent" and cfg.kernel_type != "zero" and model.data is None:
        factory = expansion_factory(cfg, model)
        if callable(factory):
            approx = np.mean([factory(_rng.substream(cfg.seed, _rng.FUNCTION, i)).approx_gram(pts, pts)
                              for i in range(cfg.check_draws)], axis=0)
            rows.append(("basis_draws", cfg.check_draws))
        else:
            approx = factory.approx_gram(pts, pts)
            rows.append(("basis_draws", 1))
        err = np.abs(approx - K)
        rows += [("basis_max_abs_error", float(err.max())),
                 ("basis_max_rel_error_diag", float((np.diag(err) / np.maximum(np.diag(K), 1e-300)).max()))]
    return rows
