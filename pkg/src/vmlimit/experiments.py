"""Coupled Maxwell/Poisson trials, exceedance estimates and scaling diagnostics."""
from __future__ import annotations

import functools
import json
import logging
import math
import os
import platform
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import _backend
from .config import (ExperimentConfig, as_dict, cloud_seed, config_hash, derive_seed, fluctuation_seed, resolved_summary,
                     trial_seed)
from .initial_data import InitialDensity, InitialFields, build_initial_fields, sample_ensemble
from .kernels import DoubleMollifierTable, SmoothedWaveKernel, build_double_mollifier, build_mollifier
from .maxwell import (MaxwellSystem, ParticleEnsemble, TrajectoryHistory, run_maxwell, start_history,
                      step_maxwell, static_history)
from .params import RegularizationParams, hat_velocity
from .poisson import (MeanFieldCloud, PoissonFieldHistory, evolve_cloud, maxwell_meanfield_force, poisson_field,
                      step_poisson)

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
MIN_TRIALS = 30


class NotEnabledError(RuntimeError):
    """An optional tier was requested but is switched off in the config."""


# --------------------------------------------------------------------------
# statistics


def wilson_interval(k: int, n: int, z: float = 1.96):
    """Wilson score interval for a binomial proportion."""
    if n <= 0:
        raise ValueError("n must be positive")
    p = k / n
    den = 1.0 + z * z / n
    centre = (p + z * z / (2 * n)) / den
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / den
    lo = 0.0 if k == 0 else max(0.0, centre - half)
    hi = 1.0 if k == n else min(1.0, centre + half)
    return lo, hi


def loglog_slope(x, y):
    """Least-squares slope of log y against log x with residuals and standard error."""
    lx, ly = np.log(np.asarray(x, dtype=float)), np.log(np.asarray(y, dtype=float))
    coef, cov = np.polyfit(lx, ly, 1, cov=True) if lx.size > 2 else (np.polyfit(lx, ly, 1), None)
    resid = ly - np.polyval(coef, lx)
    se = float(math.sqrt(cov[0, 0])) if cov is not None else float("nan")
    return {"slope": float(coef[0]), "intercept": float(coef[1]), "residuals": resid.tolist(), "slope_se": se}


def kendall_tau(x, y) -> float:
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    s, n = 0.0, 0
    for i in range(len(x)):
        for j in range(i + 1, len(x)):
            s += np.sign(x[j] - x[i]) * np.sign(y[j] - y[i])
            n += 1
    return float(s / n) if n else float("nan")


def trend_statistic(p_hats, intervals):
    """Adjacent-pair classification of an estimate ladder that should not increase.

    An increase whose confidence intervals overlap is a tolerated violation;
    one with disjoint intervals is significant. The trend passes with no
    significant increase and at most one tolerated violation.
    """
    pairs = []
    for k in range(len(p_hats) - 1):
        a, b = p_hats[k], p_hats[k + 1]
        if b < a:
            kind = "decrease"
        elif b == a:
            kind = "tie"
        else:
            overlap = intervals[k + 1][0] <= intervals[k][1]
            kind = "increase-overlapping" if overlap else "increase-significant"
        pairs.append(kind)
    violations = sum(kind.startswith("increase") for kind in pairs)
    significant = sum(kind == "increase-significant" for kind in pairs)
    return {
        "pairs": pairs,
        "violations": violations,
        "significant_increases": significant,
        "kendall_tau": kendall_tau(range(len(p_hats)), p_hats),
        "passes": significant == 0 and violations <= 1,
    }


# --------------------------------------------------------------------------
# per-rung shared objects


@dataclass
class RungContext:
    rung: int
    params: RegularizationParams
    kernel: SmoothedWaveKernel
    eta: DoubleMollifierTable
    density: InitialDensity
    fields: InitialFields
    dt: float
    n_steps: int
    poisson: PoissonFieldHistory
    cloud_bias: dict
    meanfield_history: TrajectoryHistory | None = None


def _cloud_bias(cloud: MeanFieldCloud, fields: InitialFields, eta: DoubleMollifierTable, poisson):
    """Sup distance between the cloud's t = 0 field and the exact mollified field."""
    a = np.linspace(0.0, fields.density.spatial_radius + eta.support, 129)[1:]
    pts = np.stack([a, np.zeros_like(a), np.zeros_like(a)], axis=1)
    cloud_field = poisson.field_at_step(0, pts)[:, 0]
    exact = fields.e0(a)
    err = np.abs(cloud_field - exact)
    return {"cloud_size": cloud.size, "sup_abs": float(err.max()), "sup_rel": float(err.max() / exact.max()),
            "mc_scale": float(exact.max() / math.sqrt(cloud.size))}


@functools.lru_cache(maxsize=8)
def rung_context(cfg: ExperimentConfig, rung: int) -> RungContext:
    p = cfg.params(rung)
    kernel = SmoothedWaveKernel.from_params(p)
    eta = build_double_mollifier(build_mollifier(p))
    density = InitialDensity(cfg.spatial_radius, cfg.velocity_radius)
    fields = build_initial_fields(density, eta)
    dt, n_steps = cfg.resolved_dt(rung), cfg.n_steps(rung)
    x, v = sample_ensemble(density, cfg.cloud_size, cloud_seed(cfg.seed, rung))
    cloud = MeanFieldCloud(x, v, mode=cfg.field_mode)
    poisson, _ = evolve_cloud(cloud, eta, dt, n_steps, interact=cfg.interactions and cfg.meanfield_interaction)
    bias = _cloud_bias(cloud, fields, eta, poisson)
    mf_hist = None
    if cfg.maxwell_meanfield:
        m = cfg.meanfield_cloud_size
        xm, vm = sample_ensemble(density, m, derive_seed(cfg.seed, 1, rung, 1))
        system = MaxwellSystem(kernel, fields if cfg.self_force else None, interactions=cfg.interactions,
                               position_bound=cfg.spatial_radius)
        _, mf_hist = run_maxwell(ParticleEnsemble(xm, vm), cfg.horizon, dt, system)
    return RungContext(rung, p, kernel, eta, density, fields, dt, n_steps, poisson, bias, mf_hist)


# --------------------------------------------------------------------------
# coupled trials


@dataclass
class CoupledTrial:
    """One Monte Carlo realization: shared initial data and both flows in lock step."""

    seed: int
    rung: int
    n_particles: int
    light_speed: float
    alpha: float
    initial_positions: np.ndarray = field(repr=False)
    initial_velocities: np.ndarray = field(repr=False)
    times: np.ndarray = field(repr=False, default=None)
    deviation: np.ndarray = field(repr=False, default=None)
    meanfield_deviation: np.ndarray | None = field(repr=False, default=None)
    snapshots: list = field(repr=False, default_factory=list)
    maxwell_final: ParticleEnsemble | None = field(repr=False, default=None)
    poisson_final: ParticleEnsemble | None = field(repr=False, default=None)
    maxwell_history: TrajectoryHistory | None = field(repr=False, default=None)
    error: str | None = None
    trial: int | None = None

    @property
    def threshold(self) -> float:
        return self.n_particles ** (-self.alpha)

    @property
    def S(self) -> np.ndarray:
        return np.minimum(1.0, self.n_particles**self.alpha * self.deviation)

    @property
    def d_final(self) -> float:
        return float(self.deviation[-1])

    @property
    def S_final(self) -> float:
        return float(self.S[-1])

    @property
    def exceeded(self) -> bool:
        return self.d_final > self.threshold

    @property
    def aborted(self) -> bool:
        return self.error is not None


def _meanfield_acc(ctx: RungContext, cfg, x, v, t, threads):
    acc = np.zeros_like(x)
    if cfg.self_force:
        from .initial_data import self_force_gamma

        acc += self_force_gamma(x, v, t, ctx.fields, ctx.kernel.light_speed)
    if cfg.interactions and t > 0:
        f1, f2 = maxwell_meanfield_force(ctx.meanfield_history, x, v, t, ctx.kernel, threads=threads)
        acc += f1 + f2
    return acc


def _step_meanfield(ctx, cfg, ens, a0, threads):
    c, dt = ctx.kernel.light_speed, ctx.dt
    x0, v0, t1 = ens.positions, ens.velocities, ens.time + dt
    u0 = hat_velocity(v0, c)
    xp, vp = x0 + dt * u0, v0 + dt * a0
    ap = _meanfield_acc(ctx, cfg, xp, vp, t1, threads)
    x1 = x0 + 0.5 * dt * (u0 + hat_velocity(vp, c))
    v1 = v0 + 0.5 * dt * (a0 + ap)
    nxt = ParticleEnsemble(x1, v1, t1)
    return nxt, _meanfield_acc(ctx, cfg, x1, v1, t1, threads)


def run_coupled_trial(cfg: ExperimentConfig, seed: int, rung: int = 0, *, context: RungContext | None = None,
                      threads: int = 1, record_stride: int | None = None, keep_history: bool = False,
                      trial: int | None = None) -> CoupledTrial:
    """Sample one ensemble and evolve both flows on the shared grid to the horizon.

    Dynamics errors abort the trial; the returned object then carries the
    error message and the deviation series up to the failure.
    """
    ctx = context or rung_context(cfg, rung)
    n = int(cfg.n_ladder[rung])
    x0, v0 = sample_ensemble(ctx.density, n, seed)
    out = CoupledTrial(seed, rung, n, ctx.kernel.light_speed, cfg.alpha, x0.copy(), v0.copy(), trial=trial)
    system = MaxwellSystem(ctx.kernel, ctx.fields if cfg.self_force else None, threads=threads,
                           interactions=cfg.interactions, position_bound=cfg.spatial_radius)
    times = [0.0]
    dev = [0.0]
    mf_dev = [0.0] if ctx.meanfield_history is not None else None
    snaps = out.snapshots

    def snap(flow, ens, k):
        if record_stride and k % record_stride == 0:
            snaps.append((flow, ens.time, ens.positions.copy(), ens.velocities.copy()))

    maxwell = ParticleEnsemble(x0, v0)
    pois = ParticleEnsemble(x0, v0)
    mf = ParticleEnsemble(x0, v0) if mf_dev is not None else None
    snap("maxwell", maxwell, 0)
    snap("poisson", pois, 0)
    history = None
    try:
        history = start_history(maxwell, ctx.dt, system, capacity=ctx.n_steps + 2)
        coupled = cfg.interactions

        def field_at(t, x):
            if not coupled:
                return np.zeros_like(x)
            return ctx.poisson.field_at_step(int(round(t / ctx.dt)), x)

        a_p = field_at(0.0, pois.positions)
        a_mf = _meanfield_acc(ctx, cfg, mf.positions, mf.velocities, 0.0, threads) if mf is not None else None
        d = 0.0
        dm = 0.0
        for k in range(1, ctx.n_steps + 1):
            maxwell = step_maxwell(maxwell, history, ctx.dt, ctx.kernel, system.fields, system=system)
            pois = step_poisson(pois, ctx.dt, field_at, a_p)
            a_p = field_at(pois.time, pois.positions)
            d = max(d, float(np.max(np.abs(maxwell.phase() - pois.phase()))))
            times.append(k * ctx.dt)
            dev.append(d)
            snap("maxwell", maxwell, k)
            snap("poisson", pois, k)
            if mf is not None:
                mf, a_mf = _step_meanfield(ctx, cfg, mf, a_mf, threads)
                dm = max(dm, float(np.max(np.abs(maxwell.phase() - mf.phase()))))
                mf_dev.append(dm)
                snap("maxwell-meanfield", mf, k)
    except (ArithmeticError, ValueError, AssertionError) as exc:
        out.error = f"{type(exc).__name__}: {exc}"
        logger.warning("trial seed=%d rung=%d aborted: %s", seed, rung, out.error)
    out.times = np.asarray(times)
    out.deviation = np.asarray(dev)
    out.meanfield_deviation = None if mf_dev is None else np.asarray(mf_dev)
    out.maxwell_final, out.poisson_final = maxwell, pois
    if keep_history:
        out.maxwell_history = history
    return out


def _trial_summary(cfg: ExperimentConfig, rung: int, trial: int, threads: int = 1):
    tr = run_coupled_trial(cfg, trial_seed(cfg.seed, rung, trial), rung, threads=threads, trial=trial)
    return {
        "rung": rung,
        "trial": trial,
        "seed": tr.seed,
        "error": tr.error,
        "times": tr.times,
        "deviation": tr.deviation,
        "S": tr.S,
        "d_final": tr.d_final,
        "S_final": tr.S_final,
        "exceeded": bool(tr.exceeded) if tr.error is None else None,
    }


def _trial_job(args):
    cfg, rung, trial, threads = args
    return _trial_summary(cfg, rung, trial, threads)


# --------------------------------------------------------------------------
# report


@dataclass
class ExperimentReport:
    config: dict
    config_hash: str
    strict_admissible: bool
    warnings: list
    rungs: list
    trend: dict | None
    slope: dict | None
    runtime: dict
    tiers: dict
    fluctuation: dict | None = None
    field_comparison: dict | None = None
    trials: list = field(default_factory=list, repr=False)
    schema_version: int = SCHEMA_VERSION

    def to_dict(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "config_hash": self.config_hash,
            "config": self.config,
            "strict_admissible": self.strict_admissible,
            "warnings": self.warnings,
            "rungs": self.rungs,
            "trend": self.trend,
            "slope": self.slope,
            "tiers": self.tiers,
            "fluctuation": self.fluctuation,
            "field_comparison": self.field_comparison,
            "runtime": self.runtime,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=False, default=_json_default)

    def to_text(self) -> str:
        lines = [f"config_hash   {self.config_hash}",
                 f"exponents     {'strict-admissible' if self.strict_admissible else 'NON-STRICT'}"]
        lines += [f"  warning: {w}" for w in self.warnings]
        head = f"{'N':>6} {'c':>8} {'dt':>10} {'trials':>6} {'abort':>5} {'P_hat':>7} {'wilson95':>17} " \
               f"{'mean S_T':>9} {'markov':>6}"
        lines += ["", head, "-" * len(head)]
        for r in self.rungs:
            lo, hi = r["wilson"]
            lines.append(f"{r['N']:>6d} {r['c']:>8.3f} {r['dt']:>10.3e} {r['completed']:>6d} {r['aborted']:>5d} "
                         f"{r['p_hat']:>7.3f} [{lo:>6.3f}, {hi:>6.3f}] {r['mean_S']:>9.4f} "
                         f"{'ok' if r['markov_ok'] else 'FAIL':>6}")
        lines.append("")
        for r in self.rungs:
            b = r["cloud_bias"]
            lines.append(f"cloud bias N={r['N']}: sup|E_cloud - E_exact| = {b['sup_abs']:.3e} "
                         f"(M={b['cloud_size']}, MC scale {b['mc_scale']:.1e}); early-time window t < "
                         f"{r['switch_on_time']:.3f}")
        if self.trend:
            lines.append(f"trend: {', '.join(self.trend['pairs'])}; kendall tau {self.trend['kendall_tau']:.2f}; "
                         f"{'pass' if self.trend['passes'] else 'fail'}")
        if self.slope:
            lines.append(f"log P_hat vs log N slope {self.slope['slope']:.3f} "
                         f"(residuals {', '.join(f'{x:+.3f}' for x in self.slope['residuals'])})")
        for name, on in self.tiers.items():
            lines.append(f"tier {name}: {'enabled' if on else 'disabled'}")
        rt = self.runtime
        secs = "n/a" if rt["seconds"] is None else f"{rt['seconds']:.1f} s"
        lines.append(f"runtime {secs}, backend {rt['backend']}, workers {rt['workers']}, "
                     f"threads {rt['threads']}")
        return "\n".join(lines) + "\n"

    def write(self, directory, deviations_csv: bool = True):
        os.makedirs(directory, exist_ok=True)
        with open(os.path.join(directory, "report.json"), "w") as fh:
            fh.write(self.to_json())
        with open(os.path.join(directory, "report.txt"), "w") as fh:
            fh.write(f"# config_hash={self.config_hash}\n")
            fh.write(self.to_text())
        if deviations_csv:
            write_deviations_csv(os.path.join(directory, "deviations.csv"), self.trials, self.config_hash,
                                 self.config["n_ladder"])


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.bool_):
        return bool(obj)
    raise TypeError(type(obj))


def write_deviations_csv(path, trials, cfg_hash, ladder):
    import csv

    with open(path, "w", newline="") as fh:
        fh.write(f"# config_hash={cfg_hash}\n")
        w = csv.writer(fh)
        w.writerow(["rung", "N", "trial", "t", "d", "S"])
        for tr in trials:
            for t, d, s in zip(tr["times"], tr["deviation"], tr["S"]):
                w.writerow([tr["rung"], ladder[tr["rung"]], tr["trial"], repr(float(t)), repr(float(d)),
                            repr(float(s))])


def summarize_rung(cfg: ExperimentConfig, rung: int, results: list, ctx_info: dict | None = None) -> dict:
    done = [r for r in results if r["error"] is None]
    aborted = [{"trial": r["trial"], "seed": r["seed"], "error": r["error"]} for r in results if r["error"]]
    n = len(done)
    k = sum(r["exceeded"] for r in done)
    s_final = np.array([r["S_final"] for r in done])
    p_hat = k / n if n else float("nan")
    wil = wilson_interval(k, n) if n else (float("nan"), float("nan"))
    mean_s = float(s_final.mean()) if n else float("nan")
    se_s = float(s_final.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    p = cfg.params(rung)
    row = {
        "rung": rung,
        "N": int(cfg.n_ladder[rung]),
        "c": p.light_speed,
        "width": p.mollifier_width,
        "dt": cfg.resolved_dt(rung),
        "steps": cfg.n_steps(rung),
        "threshold": cfg.n_ladder[rung] ** (-cfg.alpha),
        "trials": len(results),
        "completed": n,
        "aborted": len(aborted),
        "aborted_trials": aborted,
        "exceed_count": int(k),
        "p_hat": p_hat,
        "wilson": list(wil),
        "mean_S": mean_s,
        "se_S": se_s,
        "markov_ok": bool(n and p_hat <= mean_s + 3 * se_s + 1e-12),
        "switch_on_time": (2 * cfg.spatial_radius + 4 * p.mollifier_width) / p.light_speed,
    }
    row.update(ctx_info or {})
    return row


def estimate_exceedance(cfg: ExperimentConfig, trials: int | None = None, ladder=None, *, workers: int = 1,
                        threads: int = 1, allow_few_trials: bool = False, progress=None) -> ExperimentReport:
    """Estimate ``P(d(T) > N^-alpha)`` on every rung with independent seeds per trial."""
    trials = cfg.trials if trials is None else int(trials)
    if trials < MIN_TRIALS and not allow_few_trials:
        raise ValueError(f"at least {MIN_TRIALS} trials per rung are required, got {trials}")
    rungs = list(range(len(cfg.n_ladder))) if ladder is None else list(ladder)
    t0 = time.perf_counter()
    jobs = [(cfg, r, k, threads) for r in rungs for k in range(trials)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_trial_job, jobs, chunksize=1))
    else:
        results = []
        for job in jobs:
            results.append(_trial_job(job))
            if progress:
                progress(job[1], job[2])
    results.sort(key=lambda r: (r["rung"], r["trial"]))
    rows = []
    for r in rungs:
        ctx = rung_context(cfg, r)
        rows.append(summarize_rung(cfg, r, [x for x in results if x["rung"] == r],
                                   {"cloud_bias": ctx.cloud_bias}))
    return _assemble_report(cfg, rows, results, time.perf_counter() - t0, workers, threads)


def _assemble_report(cfg, rows, results, seconds, workers, threads):
    p_hats = [r["p_hat"] for r in rows]
    trend = trend_statistic(p_hats, [r["wilson"] for r in rows]) if len(rows) > 1 else None
    pos = [(r["N"], r["p_hat"]) for r in rows if r["p_hat"] > 0]
    slope = loglog_slope(*zip(*pos)) if len(pos) >= 2 else None
    return ExperimentReport(
        config=as_dict(cfg) | {"resolved": resolved_summary(cfg)},
        config_hash=config_hash(cfg),
        strict_admissible=not cfg.warnings,
        warnings=list(cfg.warnings),
        rungs=rows,
        trend=trend,
        slope=slope,
        runtime={"seconds": seconds, "backend": _backend.NAME, "workers": workers, "threads": threads,
                 "python": platform.python_version(), "numpy": np.__version__},
        tiers={"maxwell_meanfield": cfg.maxwell_meanfield},
        trials=results,
    )


# --------------------------------------------------------------------------
# fluctuation scaling


def _fourth_moment_stats(values):
    values = np.asarray(values, dtype=float)
    return float(values.mean()), float(values.std(ddof=1) / math.sqrt(values.size))


def fluctuation_scaling_experiment(n_ladder=(64, 128, 256, 512), resamples: int = 1000, *, seed: int = 0,
                                   theta: float = 0.3, kernel_n: int | None = None, light_speed: float = 4.0,
                                   test_point=(0.5, 0.0, 0.0), density: InitialDensity | None = None,
                                   stub=None, threads: int = 1) -> dict:
    """Fourth moment of the normalized force fluctuation at a fixed point versus N.

    For each N the sources are N - 1 i.i.d. positions at rest; ``h_j`` is the
    retarded single-pair force at ``test_point`` (evaluated after the light
    shell has fully passed) minus the mean-field force there. The kernel width
    is frozen at ``kernel_n ** -theta`` across the ladder.

    ``stub`` replaces the physics: ``"gaussian"`` uses i.i.d. standard normal
    scalars, a callable ``stub(rng, n)`` returns the ``n`` values of h.
    """
    density = density or InitialDensity()
    ladder = [int(n) for n in n_ladder]
    xstar = np.asarray(test_point, dtype=float)
    rows = []
    if stub is None:
        p = RegularizationParams(kernel_n or ladder[0], theta, light_speed)
        kernel = SmoothedWaveKernel.from_params(p)
        fields = build_initial_fields(density, kernel.eta)
        a = float(np.linalg.norm(xstar))
        mean_force = xstar / a * float(fields.e0(a)) if a > 0 else np.zeros(3)
        t_end = (a + density.spatial_radius + 2.0 * kernel.shell_half_width) / light_speed * 1.05
        hist_dt = t_end / 8.0
    for rung, n in enumerate(ladder):
        if n < 2:
            raise ValueError("need at least two particles")
        vals = np.empty(resamples)
        for r in range(resamples):
            s = fluctuation_seed(seed, rung, r)
            if stub is not None:
                rng = np.random.Generator(np.random.Philox(s))
                h = rng.standard_normal(n - 1) if stub == "gaussian" else np.asarray(stub(rng, n - 1), dtype=float)
                m = h.mean(axis=0)
            else:
                xs, _ = sample_ensemble(density, n - 1, s)
                hist = static_history(xs, hist_dt, 9)
                f1, _, st = _backend.pair_force_sums(xstar[None, :], np.zeros((1, 3)), hist.view(), t_end, kernel,
                                                     skip_self=False, threads=threads)
                if st[0]:
                    raise ArithmeticError(f"force evaluation failed with status {st[0]}")
                m = f1[0] / (n - 1) - mean_force
            vals[r] = float(np.sum(np.atleast_1d(m) ** 2) ** 2)
        mom, se = _fourth_moment_stats(vals)
        rows.append({"N": n, "fourth_moment": mom, "se": se, "resamples": resamples})
    pos = [(r["N"], r["fourth_moment"]) for r in rows if r["fourth_moment"] > 0]
    fit = loglog_slope(*zip(*pos)) if len(pos) >= 2 else None
    return {"stub": stub if isinstance(stub, str) or stub is None else "custom", "rungs": rows, "fit": fit,
            "test_point": xstar.tolist(), "theta": theta, "kernel_n": kernel_n or ladder[0]}


# --------------------------------------------------------------------------
# field comparison (optional tier)


def default_probes(radii=(0.5, 1.0, 1.5), speed: float = 0.5):
    dirs = np.array([[1, 0, 0], [0, 1, 0], [0, 0, 1], [1, 1, 1]], dtype=float)
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    tang = np.cross(dirs, np.array([0.3, -0.5, 0.8]))
    tang /= np.linalg.norm(tang, axis=1, keepdims=True)
    x = np.concatenate([r * dirs for r in radii])
    v = np.concatenate([speed * tang for _ in radii])
    return x, v


def field_comparison_diagnostic(cfg: ExperimentConfig, c_ladder=(4.0, 8.0, 16.0, 32.0), *, t_probe: float = 1.0,
                                n_ref: int | None = None, probes=None, threads: int = 1) -> dict:
    """Compare Maxwell mean-field forces with the Poisson field as c grows.

    A cloud of ``meanfield_cloud_size`` samples (the same samples for every
    c) is evolved under the Maxwell dynamics and, separately, under the
    Poisson dynamics with direct summation. At ``t_probe`` the electric-type
    channel ``F1bar + Gamma`` is compared with the Poisson field at fixed
    probe points, and the magnetic channel ``F2bar`` is measured on its own.
    """
    if not cfg.maxwell_meanfield:
        raise NotEnabledError("field comparison needs run.maxwell_meanfield = true")
    n_ref = int(n_ref or cfg.n_ladder[0])
    density = InitialDensity(cfg.spatial_radius, cfg.velocity_radius)
    x0, v0 = sample_ensemble(density, cfg.meanfield_cloud_size, cloud_seed(cfg.seed, 0))
    px, pv = probes if probes is not None else default_probes(speed=0.5 * cfg.velocity_radius)
    rows = []
    for c in c_ladder:
        p = RegularizationParams(n_ref, cfg.theta, float(c))
        kernel = SmoothedWaveKernel.from_params(p)
        fields = build_initial_fields(density, kernel.eta)
        limit = 0.25 * p.mollifier_width / p.light_speed
        dt = t_probe / max(1, math.ceil(t_probe / limit - 1e-12))
        n_steps = int(round(t_probe / dt))
        system = MaxwellSystem(kernel, fields if cfg.self_force else None, threads=threads,
                               interactions=cfg.interactions, position_bound=cfg.spatial_radius)
        _, hist = run_maxwell(ParticleEnsemble(x0, v0), t_probe, dt, system)
        f1, f2 = maxwell_meanfield_force(hist, px, pv, t_probe, kernel, threads=threads)
        from .initial_data import self_force_gamma

        e_max = f1 + (self_force_gamma(px, pv, t_probe, fields, c) if cfg.self_force else 0.0)
        cloud = MeanFieldCloud(x0, v0, mode="direct-sum")
        _, final = evolve_cloud(cloud, kernel.eta, dt, n_steps, interact=cfg.interactions)
        e_poi = poisson_field(final, px, kernel.eta, mode="direct-sum")
        rows.append({
            "c": float(c),
            "dt": dt,
            "sup_E_difference": float(np.max(np.linalg.norm(e_max - e_poi, axis=1))),
            "sup_magnetic": float(np.max(np.linalg.norm(f2, axis=1))),
            "sup_F1bar": float(np.max(np.linalg.norm(f1, axis=1))),
        })
    cs = [r["c"] for r in rows]
    return {
        "t_probe": t_probe,
        "n_ref": n_ref,
        "cloud_size": cfg.meanfield_cloud_size,
        "n_probes": int(px.shape[0]),
        "rungs": rows,
        "magnetic_fit": loglog_slope(cs, [r["sup_magnetic"] for r in rows]),
        "E_difference_fit": loglog_slope(cs, [r["sup_E_difference"] for r in rows]),
    }
