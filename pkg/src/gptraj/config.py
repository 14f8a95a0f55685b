"""Experiment configuration: INI-style key/value text with dotted section names.

Schema (defaults in brackets; "np" marks values not taken from the source
experiments and logged as such when used)::

    [horizon]
    steps = 50                  [50, np]
    x0 = 1.0                    comma separated for vector states [1.0, np]

    [model]
    mean = linear               linear | zero
    gain = 0.95                 scalar (times identity) or rows "a,b;c,d"
    input_gain = 1.0            controlled systems only: n x m matrix or scalar
    control_dim = 0
    noise = 1.0                 scalar (times identity) or rows
    data = train.csv            optional transitions: z columns then y columns

    [model.kernel]
    type = se                   se | linear | linear*se | se*linear | zero
    sigma_f = 1.0               output scale of the whole kernel [1.0, np]
    lengthscale = 10.0          SE factor only
    coupling = independent      independent | distance
    metric = 0,1                per-output values for distance coupling

    [run]
    methods = ground_truth, linearized
                                ground_truth | afs | linearized | independent | proxy:<1a|1b|2a|2b>
    samples = 20000
    seed = 0
    reference = ground_truth    defaults to ground_truth, else the first method
    inputs = u.csv              control sequence, one row per step

    [basis]
    m = 10
    construction = auto         auto | rff | nystrom | linear | linear_rff
    mode = residual             residual | direct
    resample = true             fresh random features per function sample
    nystrom_points = 200        [np]
    low = -5.0                  Nystrom sampling box [np]
    high = 5.0                  [np]

    [proxy]
    sigma_f =                   defaults to model.kernel.sigma_f
    sigma_w =                   defaults to sqrt(model.noise)

    [check]
    points = 20                 [np]
    low = -5.0                  [np]
    high = 5.0                  [np]
    draws = 200                 RFF expansions averaged for reconstruction [np]

    [output]
    dir = out
    timing = false              also write timing.csv (not byte-stable)
"""

from __future__ import annotations

import configparser
import logging
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import ConfigInvalid
from .proxy import VARIANTS

log = logging.getLogger(__name__)

SAMPLING_METHODS = ("ground_truth", "afs")
MOMENT_METHODS = ("linearized", "independent")

# section -> key -> (default, from_paper)
SCHEMA = {
    "horizon": {"steps": ("50", False), "x0": ("1.0", False)},
    "model": {"mean": ("linear", True), "gain": ("0.95", True), "input_gain": ("1.0", False),
              "control_dim": ("0", False), "noise": ("1.0", True), "data": ("", False)},
    "model.kernel": {"type": ("se", True), "sigma_f": ("1.0", False), "lengthscale": ("10.0", True),
                     "coupling": ("independent", False), "metric": ("", False)},
    "run": {"methods": ("ground_truth, linearized", False), "samples": ("20000", True),
            "seed": ("0", False), "reference": ("", False), "inputs": ("", False)},
    "basis": {"m": ("10", True), "construction": ("auto", False), "mode": ("residual", False),
              "resample": ("true", False), "nystrom_points": ("200", False),
              "low": ("-5.0", False), "high": ("5.0", False)},
    "proxy": {"sigma_f": ("", False), "sigma_w": ("", False)},
    "check": {"points": ("20", False), "low": ("-5.0", False), "high": ("5.0", False),
              "draws": ("200", False)},
    "output": {"dir": ("out", False), "timing": ("false", False)},
}

KERNEL_TYPES = ("se", "linear", "linear*se", "se*linear", "zero")
CONSTRUCTIONS = ("auto", "rff", "nystrom", "linear", "linear_rff")


@dataclass
class ExperimentConfig:
    steps: int
    x0: np.ndarray
    mean: str
    gain: np.ndarray
    input_gain: Optional[np.ndarray]
    control_dim: int
    noise: np.ndarray
    data_path: Optional[Path]
    kernel_type: str
    sigma_f: float
    lengthscale: float
    coupling: str
    metric: Optional[np.ndarray]
    methods: list
    samples: int
    seed: int
    reference: str
    inputs_path: Optional[Path]
    basis_m: int
    basis_construction: str
    basis_mode: str
    basis_resample: bool
    nystrom_points: int
    nystrom_low: float
    nystrom_high: float
    proxy_sigma_f: float
    proxy_sigma_w: Optional[float]
    check_points: int
    check_low: float
    check_high: float
    check_draws: int
    out_dir: Path
    timing: bool
    raw: dict = field(default_factory=dict)

    @property
    def state_dim(self) -> int:
        return self.x0.size

    def echo(self) -> str:
        """Resolved configuration as INI text (sections and keys in schema order)."""
        lines = []
        for section, keys in SCHEMA.items():
            lines.append(f"[{section}]")
            for key in keys:
                lines.append(f"{key} = {self.raw[section][key]}")
            lines.append("")
        return "\n".join(lines)


def preset_names():
    return sorted(p.name[:-4] for p in resources.files("gptraj.presets").iterdir()
                  if p.name.endswith(".ini"))


def preset_text(name: str) -> str:
    res = resources.files("gptraj.presets") / f"{name}.ini"
    if not res.is_file():
        raise ConfigInvalid(f"unknown preset {name!r}; available: {', '.join(preset_names())}",
                            field="--preset")
    return res.read_text()


def _line_of(text, section, key):
    current = None
    for no, line in enumerate(text.splitlines(), 1):
        stripped = line.strip()
        m = re.match(r"\[(.+)\]$", stripped)
        if m:
            current = m.group(1).strip()
        elif current == section and re.match(rf"{re.escape(key)}\s*[=:]", stripped):
            return no
    return None


def _read(text, source, merged, origin):
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        line = getattr(exc, "lineno", None)
        raise ConfigInvalid(str(exc).splitlines()[0], field=source, line=line) from None
    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigInvalid("unknown section", field=section, line=_line_of(text, section, ""))
        for key, value in parser.items(section):
            if key not in SCHEMA[section]:
                raise ConfigInvalid("unknown key", field=f"{section}.{key}",
                                    line=_line_of(text, section, key))
            merged[section][key] = value.strip()
            origin[(section, key)] = (source, _line_of(text, section, key))


def _matrix(text, rows, cols, name):
    text = text.strip()
    try:
        if ";" not in text and "," not in text:
            val = float(text)
            if rows == cols:
                return val * np.eye(rows)
            return np.full((rows, cols), val)
        mat = np.array([[float(v) for v in r.split(",")] for r in text.split(";")])
    except ValueError:
        raise ConfigInvalid(f"not a number or matrix: {text!r}", field=name) from None
    if mat.shape != (rows, cols):
        raise ConfigInvalid(f"expected a {rows}x{cols} matrix, got {mat.shape[0]}x{mat.shape[1]}", field=name)
    return mat


def parse_config_text(text: Optional[str] = None, source="<config>", preset: Optional[str] = None,
                      seed: Optional[int] = None, out: Optional[str] = None,
                      base_dir: Optional[Path] = None) -> ExperimentConfig:
    """Parse and validate configuration text layered over an optional preset."""
    merged = {s: {} for s in SCHEMA}
    origin = {}
    if preset:
        _read(preset_text(preset), f"preset:{preset}", merged, origin)
    if text:
        _read(text, source, merged, origin)
    for section, keys in SCHEMA.items():
        for key, (default, from_paper) in keys.items():
            if key not in merged[section]:
                merged[section][key] = default
                if default and not from_paper:
                    log.info("default %s.%s = %s (not-from-paper)", section, key, default)
    if seed is not None:
        merged["run"]["seed"] = str(int(seed))
    if out is not None:
        merged["output"]["dir"] = str(out)

    def line(section, key):
        return origin.get((section, key), (None, None))[1]

    def num(section, key, kind=float, minimum=None, positive=False, optional=False):
        raw = merged[section][key]
        if optional and raw == "":
            return None
        try:
            val = kind(raw)
        except ValueError:
            raise ConfigInvalid(f"expected {kind.__name__}, got {raw!r}", f"{section}.{key}",
                                line(section, key)) from None
        if positive and not val > 0:
            raise ConfigInvalid("must be positive", f"{section}.{key}", line(section, key))
        if minimum is not None and val < minimum:
            raise ConfigInvalid(f"must be >= {minimum}", f"{section}.{key}", line(section, key))
        return val

    def choice(section, key, options):
        val = merged[section][key].strip().lower()
        if val not in options:
            raise ConfigInvalid(f"must be one of {', '.join(options)}; got {val!r}",
                                f"{section}.{key}", line(section, key))
        return val

    def flag(section, key):
        return choice(section, key, ("true", "false", "yes", "no", "1", "0")) in ("true", "yes", "1")

    def path(section, key):
        raw = merged[section][key]
        if not raw:
            return None
        p = Path(raw)
        if not p.is_absolute() and base_dir is not None:
            p = base_dir / p
        if not p.exists():
            raise ConfigInvalid(f"file not found: {p}", f"{section}.{key}", line(section, key))
        return p

    try:
        x0 = np.array([float(v) for v in merged["horizon"]["x0"].split(",")])
    except ValueError:
        raise ConfigInvalid("x0 must be comma separated numbers", "horizon.x0",
                            line("horizon", "x0")) from None
    n = x0.size
    control_dim = num("model", "control_dim", int, minimum=0)
    steps = num("horizon", "steps", int, minimum=1)

    mean = choice("model", "mean", ("linear", "zero"))
    gain = _matrix(merged["model"]["gain"], n, n, "model.gain")
    input_gain = _matrix(merged["model"]["input_gain"], n, control_dim, "model.input_gain") \
        if control_dim else None
    noise = _matrix(merged["model"]["noise"], n, n, "model.noise")
    if not np.allclose(noise, noise.T) or np.linalg.eigvalsh(noise).min() < -1e-12:
        raise ConfigInvalid("noise must be symmetric positive semidefinite", "model.noise",
                            line("model", "noise"))

    kernel_type = choice("model.kernel", "type", KERNEL_TYPES)
    sigma_f = num("model.kernel", "sigma_f", minimum=0.0)
    lengthscale = num("model.kernel", "lengthscale", positive=True)
    coupling = choice("model.kernel", "coupling", ("independent", "distance"))
    metric = None
    if merged["model.kernel"]["metric"]:
        try:
            metric = np.array([float(v) for v in merged["model.kernel"]["metric"].split(",")])
        except ValueError:
            raise ConfigInvalid("metric must be comma separated numbers", "model.kernel.metric",
                                line("model.kernel", "metric")) from None
        if metric.size != n:
            raise ConfigInvalid(f"need {n} metric values", "model.kernel.metric",
                                line("model.kernel", "metric"))

    methods = [m.strip().lower() for m in merged["run"]["methods"].split(",") if m.strip()]
    if not methods:
        raise ConfigInvalid("at least one method is required", "run.methods", line("run", "methods"))
    for m in methods:
        ok = m in SAMPLING_METHODS + MOMENT_METHODS or (
            m.startswith("proxy:") and m.split(":", 1)[1] in VARIANTS)
        if not ok:
            raise ConfigInvalid(f"unknown method {m!r}", "run.methods", line("run", "methods"))
        if m.startswith("proxy:") and (n != 1 or control_dim):
            raise ConfigInvalid("proxy systems are scalar and autonomous", "run.methods",
                                line("run", "methods"))
    if len(set(methods)) != len(methods):
        raise ConfigInvalid("methods listed twice", "run.methods", line("run", "methods"))
    samples = num("run", "samples", int, minimum=1)
    needs_var = any(m in SAMPLING_METHODS or m.startswith("proxy:") for m in methods)
    if needs_var and samples < 2:
        raise ConfigInvalid("need at least 2 samples for empirical variances", "run.samples",
                            line("run", "samples"))
    run_seed = num("run", "seed", int, minimum=0)
    if run_seed >= 2 ** 64:
        raise ConfigInvalid("seed must fit in 64 bits", "run.seed", line("run", "seed"))
    reference = merged["run"]["reference"].strip().lower()
    if not reference:
        reference = "ground_truth" if "ground_truth" in methods else methods[0]
    if reference not in methods:
        raise ConfigInvalid(f"reference {reference!r} is not among the methods", "run.reference",
                            line("run", "reference"))
    inputs_path = path("run", "inputs")
    if control_dim and inputs_path is None:
        raise ConfigInvalid("controlled model needs an inputs file", "run.inputs", line("run", "inputs"))

    construction = choice("basis", "construction", CONSTRUCTIONS)
    basis_m = num("basis", "m", int, minimum=1)
    nystrom_points = num("basis", "nystrom_points", int, minimum=1)
    if "afs" in methods:
        if coupling == "distance":
            raise ConfigInvalid("function samples need independent output coupling",
                                "basis.construction", line("basis", "construction"))
        if construction == "nystrom" and basis_m > nystrom_points:
            raise ConfigInvalid("m cannot exceed nystrom_points", "basis.m", line("basis", "m"))
    low, high = num("basis", "low"), num("basis", "high")
    if not high > low:
        raise ConfigInvalid("high must exceed low", "basis.high", line("basis", "high"))
    c_low, c_high = num("check", "low"), num("check", "high")
    if not c_high > c_low:
        raise ConfigInvalid("high must exceed low", "check.high", line("check", "high"))

    proxy_sigma_f = num("proxy", "sigma_f", minimum=0.0, optional=True)
    proxy_sigma_w = num("proxy", "sigma_w", minimum=0.0, optional=True)
    merged["run"]["reference"] = reference

    return ExperimentConfig(
        steps=steps, x0=x0, mean=mean, gain=gain, input_gain=input_gain, control_dim=control_dim,
        noise=noise, data_path=path("model", "data"), kernel_type=kernel_type, sigma_f=sigma_f,
        lengthscale=lengthscale, coupling=coupling, metric=metric, methods=methods,
        samples=samples, seed=run_seed, reference=reference, inputs_path=inputs_path,
        basis_m=basis_m, basis_construction=construction,
        basis_mode=choice("basis", "mode", ("residual", "direct")),
        basis_resample=flag("basis", "resample"), nystrom_points=nystrom_points,
        nystrom_low=low, nystrom_high=high,
        proxy_sigma_f=sigma_f if proxy_sigma_f is None else proxy_sigma_f,
        proxy_sigma_w=proxy_sigma_w,
        check_points=num("check", "points", int, minimum=2), check_low=c_low, check_high=c_high,
        check_draws=num("check", "draws", int, minimum=1),
        out_dir=Path(merged["output"]["dir"]), timing=flag("output", "timing"), raw=merged,
    )


def parse_config(path=None, preset=None, seed=None, out=None) -> ExperimentConfig:
    """Read a config file (optionally layered over a named preset)."""
    text, source, base = None, "<none>", None
    if path is not None:
        p = Path(path)
        try:
            text = p.read_text()
        except OSError as exc:
            raise ConfigInvalid(f"cannot read config: {exc.strerror}", field=str(p)) from None
        source, base = str(p), p.parent
    if path is None and preset is None:
        raise ConfigInvalid("need --config or --preset")
    return parse_config_text(text, source, preset=preset, seed=seed, out=out, base_dir=base)
