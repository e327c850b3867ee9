"""Experiment configuration: TOML parsing, canonical emission, hashing and seeds."""
from __future__ import annotations

import hashlib
import math
import sys
from dataclasses import asdict, dataclass, field, replace

import numpy as np
import tomli_w

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from .params import ExponentSet, RegularizationParams, validate_exponents


class ConfigError(ValueError):
    pass


DEFAULTS = {
    "regularization": {"n_ladder": None, "theta": 0.005},
    "exponents": {"alpha": 0.1, "beta": 0.2, "gamma": None, "eta": None, "strict": True},
    "c_ladder": None,
    "initial_data": {"R": 1.0, "V": 1.0},
    "time": {"horizon": None, "dt": "auto"},
    "run": {
        "trials": 30,
        "cloud_size": 10000,
        "field_mode": "radial-shell",
        "maxwell_meanfield": False,
        "meanfield_cloud_size": 48,
        "output_dir": "runs",
        "seed": 0,
    },
    "dynamics": {"interactions": True, "self_force": True, "meanfield_interaction": True},
    "output": {"trajectory_stride": 10},
}
DEFAULT_ETA = 0.004
_REQUIRED = (("regularization", "n_ladder"), ("time", "horizon"))


@dataclass(frozen=True)
class ExperimentConfig:
    n_ladder: tuple
    horizon: float
    theta: float = 0.005
    alpha: float = 0.1
    beta: float = 0.2
    gamma: float | None = None
    eta: float | None = None
    strict: bool = True
    c_ladder: tuple | None = None
    spatial_radius: float = 1.0
    velocity_radius: float = 1.0
    dt: float | str = "auto"
    trials: int = 30
    cloud_size: int = 10000
    field_mode: str = "radial-shell"
    maxwell_meanfield: bool = False
    meanfield_cloud_size: int = 48
    output_dir: str = "runs"
    seed: int = 0
    interactions: bool = True
    self_force: bool = True
    meanfield_interaction: bool = True
    trajectory_stride: int = 10
    warnings: tuple = field(default=(), compare=False)

    @property
    def exponents(self) -> ExponentSet:
        return ExponentSet(self.alpha, self.beta, self.theta, self.eta if self.eta is not None else DEFAULT_ETA,
                           self.gamma)

    def light_speed(self, rung: int) -> float:
        if self.c_ladder is not None:
            return float(self.c_ladder[rung])
        eta = self.eta if self.eta is not None else DEFAULT_ETA
        return max(1.0, float(self.n_ladder[rung]) ** eta)

    def params(self, rung: int) -> RegularizationParams:
        return RegularizationParams(int(self.n_ladder[rung]), self.theta, self.light_speed(rung))

    def resolved_dt(self, rung: int) -> float:
        """Step for a rung: explicit, or the largest CFL step dividing the horizon."""
        p = self.params(rung)
        limit = 0.25 * p.mollifier_width / p.light_speed
        if self.dt == "auto":
            return self.horizon / max(1, math.ceil(self.horizon / limit - 1e-12))
        return float(self.dt)

    def n_steps(self, rung: int) -> int:
        return int(round(self.horizon / self.resolved_dt(rung)))

    def with_(self, **kw) -> "ExperimentConfig":
        return replace(self, **kw)


def _section(doc, name, errors):
    sec = doc.get(name, {})
    if not isinstance(sec, dict):
        errors.append(f"[{name}] must be a table")
        return {}
    allowed = DEFAULTS[name]
    for key in sec:
        if key not in allowed:
            errors.append(f"unknown key '{name}.{key}'")
    return sec


def _typed(value, kind, where):
    if kind is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected a boolean, got {value!r}")
        return value
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
        return value
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number, got {value!r}")
        return float(value)
    if kind is str:
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string, got {value!r}")
        return value
    raise AssertionError(kind)


def parse_config(text: str) -> ExperimentConfig:
    """Parse a TOML document into a fully resolved config.

    Unknown keys, missing required keys and type mismatches raise
    :class:`ConfigError`; exponent violations raise
    :class:`~vmlimit.params.ConstraintViolation` in strict mode.
    """
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    errors = [f"unknown section '{k}'" for k in doc if k not in DEFAULTS]
    reg = _section(doc, "regularization", errors)
    exp = _section(doc, "exponents", errors)
    ini = _section(doc, "initial_data", errors)
    tim = _section(doc, "time", errors)
    run = _section(doc, "run", errors)
    dyn = _section(doc, "dynamics", errors)
    out = _section(doc, "output", errors)
    if errors:
        raise ConfigError("; ".join(errors))
    secs = {"regularization": reg, "time": tim}
    for sec, key in _REQUIRED:
        if key not in secs[sec]:
            raise ConfigError(f"missing required key '{sec}.{key}'")

    ladder = reg["n_ladder"]
    if not isinstance(ladder, list) or not ladder:
        raise ConfigError("regularization.n_ladder: expected a nonempty list of integers")
    ladder = tuple(_typed(n, int, "regularization.n_ladder") for n in ladder)
    if any(n < 1 for n in ladder):
        raise ConfigError("regularization.n_ladder: particle counts must be >= 1")

    c_ladder = doc.get("c_ladder")
    if c_ladder is not None:
        if not isinstance(c_ladder, list) or len(c_ladder) != len(ladder):
            raise ConfigError("c_ladder: expected a list with one light speed per rung")
        c_ladder = tuple(_typed(c, float, "c_ladder") for c in c_ladder)
        if any(not (c >= 1.0 and math.isfinite(c)) for c in c_ladder):
            raise ConfigError("c_ladder: light speeds must be finite and >= 1")
    if c_ladder is not None and "eta" in exp:
        raise ConfigError("exponents.eta and c_ladder are mutually exclusive")

    def get(sec, name, key, kind):
        val = sec.get(key, DEFAULTS[name][key])
        return None if val is None else _typed(val, kind, f"{name}.{key}")

    dt = tim.get("dt", "auto")
    if dt != "auto":
        dt = _typed(dt, float, "time.dt")
        if not dt > 0:
            raise ConfigError("time.dt must be positive or 'auto'")
    horizon = _typed(tim["horizon"], float, "time.horizon")
    if not horizon > 0:
        raise ConfigError("time.horizon must be positive")

    cfg = ExperimentConfig(
        n_ladder=ladder,
        horizon=horizon,
        theta=get(reg, "regularization", "theta", float),
        alpha=get(exp, "exponents", "alpha", float),
        beta=get(exp, "exponents", "beta", float),
        gamma=get(exp, "exponents", "gamma", float),
        eta=get(exp, "exponents", "eta", float),
        strict=get(exp, "exponents", "strict", bool),
        c_ladder=c_ladder,
        spatial_radius=get(ini, "initial_data", "R", float),
        velocity_radius=get(ini, "initial_data", "V", float),
        dt=dt,
        trials=get(run, "run", "trials", int),
        cloud_size=get(run, "run", "cloud_size", int),
        field_mode=get(run, "run", "field_mode", str),
        maxwell_meanfield=get(run, "run", "maxwell_meanfield", bool),
        meanfield_cloud_size=get(run, "run", "meanfield_cloud_size", int),
        output_dir=get(run, "run", "output_dir", str),
        seed=get(run, "run", "seed", int),
        interactions=get(dyn, "dynamics", "interactions", bool),
        self_force=get(dyn, "dynamics", "self_force", bool),
        meanfield_interaction=get(dyn, "dynamics", "meanfield_interaction", bool),
        trajectory_stride=get(out, "output", "trajectory_stride", int),
    )
    return validate_config(cfg)


def validate_config(cfg: ExperimentConfig) -> ExperimentConfig:
    if cfg.field_mode not in ("radial-shell", "direct-sum"):
        raise ConfigError(f"run.field_mode: unknown mode {cfg.field_mode!r}")
    if cfg.trials < 1 or cfg.cloud_size < 1 or cfg.meanfield_cloud_size < 1:
        raise ConfigError("run.trials, run.cloud_size and run.meanfield_cloud_size must be >= 1")
    if cfg.cloud_size < max(cfg.n_ladder):
        raise ConfigError("run.cloud_size must be at least the largest particle count")
    if cfg.trajectory_stride < 1:
        raise ConfigError("output.trajectory_stride must be >= 1")
    if not (cfg.spatial_radius > 0 and cfg.velocity_radius > 0):
        raise ConfigError("initial_data.R and initial_data.V must be positive")
    if not 0 <= cfg.seed < 2**64:
        raise ConfigError("run.seed must be a 64-bit unsigned integer")
    warnings = tuple(validate_exponents(cfg.exponents, strict=cfg.strict))
    for rung in range(len(cfg.n_ladder)):
        p = cfg.params(rung)
        limit = 0.25 * p.mollifier_width / p.light_speed
        if cfg.dt != "auto" and cfg.dt > limit * (1 + 1e-12):
            raise ConfigError(f"time.dt={cfg.dt:g} violates the CFL bound {limit:g} at N={p.n_particles}")
    return replace(cfg, warnings=warnings)


def config_to_dict(cfg: ExperimentConfig) -> dict:
    """Canonical nested form; None-valued optional keys are omitted."""
    doc = {
        "regularization": {"n_ladder": list(cfg.n_ladder), "theta": cfg.theta},
        "exponents": {"alpha": cfg.alpha, "beta": cfg.beta, "strict": cfg.strict},
        "initial_data": {"R": cfg.spatial_radius, "V": cfg.velocity_radius},
        "time": {"horizon": cfg.horizon, "dt": cfg.dt},
        "run": {
            "trials": cfg.trials,
            "cloud_size": cfg.cloud_size,
            "field_mode": cfg.field_mode,
            "maxwell_meanfield": cfg.maxwell_meanfield,
            "meanfield_cloud_size": cfg.meanfield_cloud_size,
            "output_dir": cfg.output_dir,
            "seed": cfg.seed,
        },
        "dynamics": {
            "interactions": cfg.interactions,
            "self_force": cfg.self_force,
            "meanfield_interaction": cfg.meanfield_interaction,
        },
        "output": {"trajectory_stride": cfg.trajectory_stride},
    }
    if cfg.gamma is not None:
        doc["exponents"]["gamma"] = cfg.gamma
    if cfg.eta is not None:
        doc["exponents"]["eta"] = cfg.eta
    if cfg.c_ladder is not None:
        doc = {"c_ladder": list(cfg.c_ladder), **doc}
    return doc


def emit_config(cfg: ExperimentConfig) -> str:
    return tomli_w.dumps(config_to_dict(cfg))


def config_hash(cfg: ExperimentConfig) -> str:
    return hashlib.sha256(emit_config(cfg).encode()).hexdigest()


def resolved_summary(cfg: ExperimentConfig) -> list[dict]:
    """Per-rung derived quantities echoed into every report."""
    rows = []
    for k, n in enumerate(cfg.n_ladder):
        p = cfg.params(k)
        rows.append({"rung": k, "N": n, "c": p.light_speed, "width": p.mollifier_width,
                     "dt": cfg.resolved_dt(k), "steps": cfg.n_steps(k), "threshold": n ** (-cfg.alpha)})
    return rows


# --------------------------------------------------------------------------
# seeds

_TRIAL_STREAM = 0
_CLOUD_STREAM = 1
_FLUCT_STREAM = 2


def derive_seed(master: int, *path: int) -> int:
    """64-bit seed of the stream addressed by ``path`` under the master seed."""
    ss = np.random.SeedSequence(int(master), spawn_key=tuple(int(p) for p in path))
    return int(ss.generate_state(1, np.uint64)[0])


def trial_seed(master: int, rung: int, trial: int) -> int:
    return derive_seed(master, _TRIAL_STREAM, rung, trial)


def cloud_seed(master: int, rung: int) -> int:
    return derive_seed(master, _CLOUD_STREAM, rung)


def fluctuation_seed(master: int, rung: int, sample: int) -> int:
    return derive_seed(master, _FLUCT_STREAM, rung, sample)


def as_dict(cfg: ExperimentConfig) -> dict:
    d = asdict(cfg)
    d.pop("warnings")
    return d
