import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from vmlimit.config import parse_config
from vmlimit.experiments import (CoupledTrial, NotEnabledError, estimate_exceedance, field_comparison_diagnostic,
                                 fluctuation_scaling_experiment, kendall_tau, loglog_slope, run_coupled_trial,
                                 summarize_rung, trend_statistic, wilson_interval)

SMALL = """
c_ladder = [4.0, 4.0]
[regularization]
n_ladder = [8, 16]
theta = 0.3
[exponents]
strict = false
[time]
horizon = 0.2
[run]
cloud_size = 500
trials = 30
"""


@pytest.fixture(scope="module")
def cfg():
    return parse_config(SMALL)


def test_wilson_reference_values():
    lo, hi = wilson_interval(0, 100)
    assert lo == 0.0 and hi == pytest.approx(0.0370, abs=5e-4)
    lo, hi = wilson_interval(100, 100)
    assert 0.9 < lo < 1.0 and hi == 1.0
    lo, hi = wilson_interval(50, 100)
    assert lo == pytest.approx(0.4038, abs=5e-4) and hi == pytest.approx(0.5962, abs=5e-4)
    with pytest.raises(ValueError):
        wilson_interval(0, 0)


@given(st.integers(1, 500), st.data())
def test_wilson_contains_estimate(n, data):
    k = data.draw(st.integers(0, n))
    lo, hi = wilson_interval(k, n)
    assert 0 <= lo <= k / n <= hi <= 1


def test_loglog_slope_exact():
    x = np.array([16, 32, 64, 128.0])
    fit = loglog_slope(x, 3 * x**-1.5)
    assert fit["slope"] == pytest.approx(-1.5, abs=1e-12)
    assert np.allclose(fit["residuals"], 0, atol=1e-12)


def test_kendall_tau():
    assert kendall_tau([1, 2, 3], [3, 2, 1]) == -1.0
    assert kendall_tau([1, 2, 3], [1, 2, 3]) == 1.0


def test_trend_statistic():
    ok = trend_statistic([0.7, 0.3, 0.0], [(0.55, 0.8), (0.18, 0.44), (0, 0.07)])
    assert ok["passes"] and ok["pairs"] == ["decrease", "decrease"]
    tol = trend_statistic([0.5, 0.55, 0.2], [(0.36, 0.64), (0.41, 0.68), (0.1, 0.33)])
    assert tol["passes"] and tol["pairs"][0] == "increase-overlapping"
    bad = trend_statistic([0.1, 0.6], [(0.04, 0.2), (0.46, 0.72)])
    assert not bad["passes"] and bad["significant_increases"] == 1
    two = trend_statistic([0.5, 0.55, 0.6], [(0.36, 0.64), (0.41, 0.68), (0.46, 0.72)])
    assert not two["passes"]


def test_uniform_stub_exceedance(cfg):
    rng = np.random.default_rng(42)
    n, thr = 400, 8 ** -cfg.alpha
    d = rng.uniform(0, 2 * thr, n)
    fake = [{"rung": 0, "trial": k, "seed": k, "error": None, "d_final": x, "S_final": min(1.0, x / thr),
             "exceeded": bool(x > thr)} for k, x in enumerate(d)]
    row = summarize_rung(cfg, 0, fake)
    assert abs(row["p_hat"] - 0.5) < 3 * math.sqrt(0.25 / n)
    assert row["wilson"][0] < 0.5 < row["wilson"][1]
    allx = summarize_rung(cfg, 0, [dict(f, exceeded=True) for f in fake[:50]])
    assert allx["p_hat"] == 1.0 and 0.9 < allx["wilson"][0] and allx["wilson"][1] == 1.0


def test_S_trivial_values():
    tr = CoupledTrial(1, 0, 64, 4.0, 0.25, np.zeros((1, 3)), np.zeros((1, 3)))
    tr.deviation = np.array([0.0, 0.0])
    assert tr.S_final == 0 and not tr.exceeded
    tr.deviation = np.array([0.0, 0.5 * 64 ** -0.25])
    assert tr.S_final == pytest.approx(0.5, abs=1e-15)
    tr.deviation = np.array([0.0, 3.0])
    assert tr.S_final == 1.0 and tr.exceeded


def test_fluctuation_stubs():
    g = fluctuation_scaling_experiment((64, 128, 256, 512), 1000, stub="gaussian")
    assert g["fit"]["slope"] == pytest.approx(-2.0, abs=0.1)
    for row in g["rungs"]:
        assert row["fourth_moment"] == pytest.approx(3 / (row["N"] - 1) ** 2, rel=0.25)
    # symmetric two-point law with h deterministic: every h_j is zero
    zero = fluctuation_scaling_experiment((2, 16), 20, stub=lambda rng, n: np.where(rng.random(n) < 0.5, 0.0, -0.0))
    assert all(r["fourth_moment"] == 0 for r in zero["rungs"]) and zero["fit"] is None


def test_fluctuation_subtrahend_matches_cloud(small_kernel, density, small_fields):
    from vmlimit.initial_data import sample_ensemble
    from vmlimit.poisson import direct_sum_field

    M = 20000
    x, _ = sample_ensemble(density, M, 8)
    e = direct_sum_field(x, np.array([[0.5, 0, 0]]), small_kernel.eta)[0]
    se = float(small_fields.e0(np.linspace(0, 2, 200)).max()) / math.sqrt(M)
    assert abs(e[0] - float(small_fields.e0(0.5))) < 4 * se
    assert np.abs(e[1:]).max() < 4 * se


def test_free_flows_deviation_bound(cfg):
    free = cfg.with_(interactions=False, self_force=False)
    for trial in range(3):
        tr = run_coupled_trial(free, 100 + trial, 0, context=None)
        assert tr.error is None
        v = tr.initial_velocities
        c = tr.light_speed
        bound = free.horizon * np.max(np.linalg.norm(v, axis=1)) ** 3 / (2 * c * c)
        assert 0 < tr.d_final <= bound
        assert np.all(np.diff(tr.deviation) >= 0)


def test_S_definition(cfg):
    tr = run_coupled_trial(cfg, 11, 1)
    assert tr.error is None
    assert np.allclose(tr.S, np.minimum(1, 16**cfg.alpha * tr.deviation))
    assert tr.threshold == 16 ** -cfg.alpha
    assert tr.exceeded == (tr.d_final > tr.threshold)
    assert len(tr.times) == cfg.n_steps(1) + 1


def test_trial_determinism(cfg):
    a = run_coupled_trial(cfg, 5, 0)
    b = run_coupled_trial(cfg, 5, 0, threads=3)
    assert np.array_equal(a.deviation, b.deviation)
    assert np.array_equal(a.maxwell_final.positions, b.maxwell_final.positions)


def test_min_trials_enforced(cfg):
    with pytest.raises(ValueError):
        estimate_exceedance(cfg, trials=5)


def test_field_comparison_requires_tier(cfg):
    with pytest.raises(NotEnabledError):
        field_comparison_diagnostic(cfg)


def test_report_schema(cfg, tmp_path):
    rep = estimate_exceedance(cfg, trials=3, allow_few_trials=True)
    d = json.loads(rep.to_json())
    for key in ("schema_version", "config_hash", "config", "strict_admissible", "warnings", "rungs", "trend",
                "tiers", "runtime"):
        assert key in d
    assert d["strict_admissible"] is False and d["warnings"]
    assert len(d["rungs"]) == 2
    row = d["rungs"][0]
    for key in ("N", "c", "dt", "completed", "aborted", "p_hat", "wilson", "mean_S", "markov_ok", "cloud_bias",
                "switch_on_time"):
        assert key in row
    assert row["completed"] + row["aborted"] == 3
    rep.write(tmp_path)
    lines = (tmp_path / "deviations.csv").read_text().splitlines()
    assert lines[0] == f"# config_hash={rep.config_hash}" and lines[1] == "rung,N,trial,t,d,S"
    assert len(lines) == 2 + 3 * (cfg.n_steps(0) + 1) + 3 * (cfg.n_steps(1) + 1)
    assert (tmp_path / "report.txt").read_text().startswith(f"# config_hash={rep.config_hash}")
