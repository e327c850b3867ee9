"""Acceptance criteria 1-9. Each test logs one PASS/FAIL line (see the terminal summary)."""
import math

import numpy as np
import pytest

from conftest import radial_quad
from test_kernels import dalembert_residual
from vmlimit.config import parse_config
from vmlimit.experiments import (estimate_exceedance, field_comparison_diagnostic, fluctuation_scaling_experiment,
                                 loglog_slope, run_coupled_trial)
from vmlimit.config import trial_seed
from vmlimit.kernels import SmoothedWaveKernel, build_double_mollifier, build_mollifier, mollified_coulomb_field
from vmlimit.maxwell import find_retarded_window, pair_force_F1, static_history, uniform_motion_history
from vmlimit.params import RegularizationParams

# non-strict configuration for the combined-limit trend (criteria 6-8)
TREND_CONFIG = """
[regularization]
n_ladder = [16, 32, 64]
theta = 0.15
[exponents]
alpha = 0.3
eta = 0.5
strict = false
[initial_data]
R = 1.0
V = 2.0
[time]
horizon = 4.0
[run]
trials = 50
cloud_size = 10000
seed = 0
"""

FIELD_CONFIG = """
c_ladder = [4.0]
[regularization]
n_ladder = [64]
theta = 0.3
[exponents]
strict = false
[time]
horizon = 1.0
[run]
maxwell_meanfield = true
cloud_size = 100
"""


@pytest.fixture(scope="module")
def trend_cfg():
    return parse_config(TREND_CONFIG)


@pytest.fixture(scope="module")
def trend_report(trend_cfg):
    return estimate_exceedance(trend_cfg, workers=1)


def test_criterion_1_kernel_suite(acceptance_log):
    worst_mass, worst_y, supports_ok, n_points = 0.0, 0.0, True, 0
    waves = []
    for n in (16, 64, 256):
        for theta in (0.1, 0.3):
            p0 = RegularizationParams(n, theta, 1.0)
            m = build_mollifier(p0)
            eta = build_double_mollifier(m)
            w = m.width
            chi_mass = radial_quad(lambda r: 4 * math.pi * r * r * m.radial_value(r), w)
            eta_mass = radial_quad(lambda r: 4 * math.pi * r * r * eta(r), 2 * w)
            worst_mass = max(worst_mass, abs(chi_mass - 1), abs(eta_mass - 1))
            supports_ok &= bool(m.radial_value(w) == 0 and m.radial_value(w * (1 - 1e-9)) > 0)
            supports_ok &= bool(eta(2 * w) == 0 and eta(2 * w * (1 - 1e-2)) > 0 and eta.support == 2 * w)
            for c in (2.0, 8.0):
                k = SmoothedWaveKernel.from_params(RegularizationParams(n, theta, c))
                for tau in (0.2, 0.5, 1.0):
                    R, w2 = c * tau, k.shell_half_width
                    lo = max(0.0, R - w2)
                    mass = 0.0
                    edges = np.linspace(lo, R + w2, 65)
                    x, wt = np.polynomial.legendre.leggauss(48)
                    for a, b in zip(edges[:-1], edges[1:]):
                        r = 0.5 * (b - a) * x + 0.5 * (a + b)
                        mass += 0.5 * (b - a) * np.sum(wt * 4 * math.pi * r * r * k(tau, r))
                    worst_y = max(worst_y, abs(mass - tau))
                    n_points += 1
                if theta == 0.3 and n == 64:
                    waves.append(dalembert_residual(k))
    wave_ok = all(res <= bound for res, bound in waves)
    ok = worst_mass <= 1e-8 and worst_y <= 1e-6 and supports_ok and n_points >= 27 and wave_ok
    acceptance_log(1, ok, f"max|mass-1|={worst_mass:.1e}, max|int Y - tau|={worst_y:.1e} over {n_points} "
                          f"(tau,N,theta,c) points, supports exact={supports_ok}, wave residual "
                          f"{max(r / b for r, b in waves):.1e} of bound")
    assert ok


def test_criterion_2_static_coulomb(acceptance_log):
    errs = []
    for n, theta, c in ((64, 0.3, 4.0), (256, 0.2, 8.0), (4096, 0.1, 16.0)):
        k = SmoothedWaveKernel.from_params(RegularizationParams(n, theta, c))
        assert 2 * k.width <= 1.0
        t = (1.0 + k.shell_half_width) / c + 0.1
        h = static_history([[0.0, 0, 0], [1.0, 0, 0]], t / 16, 17)
        f = pair_force_F1(1, 0, t, h, k)
        errs.append(abs(f[0] * 4 * math.pi - 1.0))
    ok = max(errs) <= 1e-3
    acceptance_log(2, ok, "relative errors " + ", ".join(f"{e:.1e}" for e in errs) + " (tol 1e-3)")
    assert ok


def test_criterion_3_lienard_wiechert(acceptance_log):
    c = 8.0
    k = SmoothedWaveKernel.from_params(RegularizationParams(64, 0.3, c))
    errs = []
    for direction in ([1.0, 0, 0], [0.6, 0.8, 0], [0, 0, -1.0]):
        u = 0.5 * c * np.array(direction)
        h = uniform_motion_history([[0.0, 0, 0]], u, c, 0.01, 301)
        xi, t = np.array([1.0, 1.0, 0.0]), 3.0
        win = find_retarded_window(h, 0, xi, t, k)
        a, b, cc = u @ u - c * c, -2 * xi @ u + 2 * c * c * t, xi @ xi - c * c * t * t
        roots = np.roots([a, b, cc]).real
        errs.append(abs(win.s_star - roots[(roots >= 0) & (roots <= t)].min()))
    ok = max(errs) <= 1e-9
    acceptance_log(3, ok, f"max|s* - s_LW| = {max(errs):.1e} at |hat v| = 0.5c (tol 1e-9)")
    assert ok


def test_criterion_4_nonrelativistic_limit(acceptance_log):
    cs = (4.0, 8.0, 16.0, 32.0)
    moving, frozen = [], []
    offsets = [np.array([1.0, 0, 0]), np.array([0, 1.0, 0]), np.array([0.3, -0.5, 0.4])]
    for c in cs:
        k = SmoothedWaveKernel.from_params(RegularizationParams(64, 0.3, c))
        t = 2.0
        u = np.array([0.5, 0.0, 0.0])
        h = uniform_motion_history([[0.0, 0, 0]], u, c, 0.02, 101)
        hs = static_history([[0.0, 0, 0]], 0.02, 101)
        em, ef = [], []
        for d in offsets:
            r = np.linalg.norm(d)
            ref = float(mollified_coulomb_field(r, k.eta)) * d / r
            em.append(np.linalg.norm(pair_force_F1(None, 0, t, h, k, x_i=u * t + d) - ref))
            ef.append(np.linalg.norm(pair_force_F1(None, 0, t, hs, k, x_i=d) - ref))
        moving.append(max(em))
        frozen.append(max(ef))
    fit = loglog_slope(cs, moving)
    ok = fit["slope"] <= -1 + 0.3 and max(frozen) < 1e-8
    acceptance_log(4, ok, f"slope {fit['slope']:.3f} (need <= -0.7) for a source moving at |hat v| = 0.5; "
                          f"frozen sources match mollified Coulomb to {max(frozen):.1e}")
    assert ok


@pytest.mark.slow
def test_criterion_5_fluctuation_scaling(acceptance_log):
    stub = fluctuation_scaling_experiment((64, 128, 256, 512), 1000, stub="gaussian", seed=1)
    real = fluctuation_scaling_experiment((64, 128, 256, 512), 1000, seed=0)
    s_stub, s_real = stub["fit"]["slope"], real["fit"]["slope"]
    ok = abs(s_stub + 2) <= 0.1 and abs(s_real + 2) <= 0.3
    acceptance_log(5, ok, f"Gaussian stub slope {s_stub:.3f} (-2 +/- 0.1), static-force slope {s_real:.3f} "
                          f"+/- {real['fit']['slope_se']:.3f} (-2 +/- 0.3), 1000 resamples per rung")
    assert ok


@pytest.mark.slow
def test_criterion_6_combined_limit_trend(acceptance_log, trend_cfg, trend_report):
    rows = trend_report.rungs
    trend = trend_report.trend
    first = rows[0]["p_hat"]
    enough = all(r["completed"] >= 50 for r in rows)
    ok = trend["passes"] and first >= 0.5 and enough and not trend_report.strict_admissible
    desc = ", ".join(f"N={r['N']}: {r['p_hat']:.2f} [{r['wilson'][0]:.2f},{r['wilson'][1]:.2f}]" for r in rows)
    acceptance_log(6, ok, f"non-strict config (alpha=0.3, theta=0.15, c=N^0.5, V=2, T=4), 50 trials/rung: "
                          f"{desc}; pairs {trend['pairs']}")
    assert ok


@pytest.mark.parametrize("threads", [(1, 4, 8)])
def test_criterion_7_thread_determinism(acceptance_log, trend_cfg, threads):
    runs = [run_coupled_trial(trend_cfg, trial_seed(trend_cfg.seed, 1, 3), 1, threads=t, record_stride=5)
            for t in threads]
    ref = runs[0]

    def same(a, b):
        if not (np.array_equal(a.deviation, b.deviation) and np.array_equal(a.times, b.times)):
            return False
        if not np.array_equal(a.maxwell_final.phase(), b.maxwell_final.phase()):
            return False
        return all(sa[0] == sb[0] and sa[1] == sb[1] and np.array_equal(sa[2], sb[2]) and np.array_equal(sa[3], sb[3])
                   for sa, sb in zip(a.snapshots, b.snapshots)) and len(a.snapshots) == len(b.snapshots)

    ok = ref.error is None and all(same(ref, r) for r in runs[1:])
    acceptance_log(7, ok, f"N={ref.n_particles} coupled trial bit-identical at threads {threads}")
    assert ok


@pytest.mark.slow
def test_criterion_8_markov_consistency(acceptance_log, trend_report):
    rows = [r for r in trend_report.rungs if r["completed"] > 0]
    ok = bool(rows) and all(r["p_hat"] <= r["mean_S"] + 3 * r["se_S"] for r in rows)
    desc = ", ".join(f"N={r['N']}: P={r['p_hat']:.2f} <= {r['mean_S']:.2f}+3*{r['se_S']:.3f}" for r in rows)
    acceptance_log(8, ok, desc)
    assert ok


@pytest.mark.slow
def test_criterion_9_magnetic_smallness(acceptance_log):
    cfg = parse_config(FIELD_CONFIG)
    if not cfg.maxwell_meanfield:  # pragma: no cover - the tier is enabled above
        acceptance_log(9, True, "maxwell-meanfield tier disabled; criterion not applicable")
        return
    rep = field_comparison_diagnostic(cfg, c_ladder=(4.0, 8.0, 16.0, 32.0))
    fit = rep["magnetic_fit"]
    ok = fit["slope"] <= -1 + 0.3
    sups = ", ".join(f"c={r['c']:g}: {r['sup_magnetic']:.2e}" for r in rep["rungs"])
    acceptance_log(9, ok, f"[optional tier enabled] magnetic slope {fit['slope']:.3f} (need <= -0.7); {sups}")
    assert ok
