"""Fast self-test suite behind ``vmlimit check``.

Each check returns ``(passed, detail)``; none takes more than a few seconds.
"""
from __future__ import annotations

import math

import numpy as np

from . import _backend
from .config import emit_config, parse_config
from .experiments import wilson_interval
from .initial_data import InitialDensity, build_initial_fields, initial_electric_field, sample_ensemble
from .kernels import SmoothedWaveKernel, build_double_mollifier, build_mollifier, mollified_coulomb_field
from .maxwell import find_retarded_window, pair_force_F1, static_history, uniform_motion_history
from .params import ConstraintViolation, ExponentSet, RegularizationParams, hat_velocity, validate_exponents
from .poisson import MeanFieldCloud, poisson_field


def _radial_integral(f, upper, n=4000):
    x, w = np.polynomial.legendre.leggauss(64)
    edges = np.linspace(0.0, upper, n // 64 + 1)
    total = 0.0
    for a, b in zip(edges[:-1], edges[1:]):
        r = 0.5 * (b - a) * x + 0.5 * (a + b)
        total += 0.5 * (b - a) * np.sum(w * f(r))
    return total


def check_exponents():
    ok = not validate_exponents(ExponentSet(0.1, 0.2, 0.005, 0.004))
    try:
        validate_exponents(ExponentSet(0.1, 0.2, 0.01, 0.004))
        ok = False
    except ConstraintViolation:
        pass
    return ok, "admissible default accepted, theta=0.01 rejected"


def check_hat_velocity():
    v = hat_velocity([3.0, 0.0, 0.0], 4.0)
    return bool(np.allclose(v, [2.4, 0, 0], rtol=0, atol=1e-15)), f"hat(3,c=4) = {v[0]:.15g}"


def check_kernel_mass():
    p = RegularizationParams(64, 0.3, 4.0)
    m = build_mollifier(p)
    eta = build_double_mollifier(m)
    w = m.width
    chi_mass = _radial_integral(lambda r: 4 * math.pi * r * r * m.radial_value(r), w)
    eta_mass = _radial_integral(lambda r: 4 * math.pi * r * r * eta(r), 2 * w)
    ok = abs(chi_mass - 1) < 1e-8 and abs(eta_mass - 1) < 1e-8 and eta(2.01 * w) == 0
    return ok, f"|chi mass - 1| = {abs(chi_mass - 1):.1e}, |eta mass - 1| = {abs(eta_mass - 1):.1e}"


def check_wave_mass():
    p = RegularizationParams(64, 0.3, 4.0)
    k = SmoothedWaveKernel.from_params(p)
    tau = 0.5
    R, w2 = p.light_speed * tau, p.shell_half_width
    mass = _radial_integral(lambda r: 4 * math.pi * r * r * k(tau, r), R + w2)
    return abs(mass - tau) < 1e-6, f"int Y(0.5, .) dy = {mass:.10f}"


def check_static_coulomb():
    p = RegularizationParams(64, 0.3, 4.0)
    k = SmoothedWaveKernel.from_params(p)
    t = 1.0 / p.light_speed + 2 * p.shell_half_width / p.light_speed + 0.1
    h = static_history([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]], t / 16, 17)
    f = pair_force_F1(1, 0, t, h, k)
    err = abs(f[0] * 4 * math.pi - 1.0)
    return err < 1e-3, f"relative error {err:.1e}"


def check_retarded_time():
    c = 8.0
    k = SmoothedWaveKernel.from_params(RegularizationParams(64, 0.3, c))
    u = np.array([0.5 * c, 0.0, 0.0])
    h = uniform_motion_history([[0.0, 0.0, 0.0]], u, c, 0.01, 301)
    xi, t = np.array([1.0, 1.0, 0.0]), 3.0
    win = find_retarded_window(h, 0, xi, t, k)
    a, b, cc = u @ u - c * c, -2 * xi @ u + 2 * c * c * t, xi @ xi - c * c * t * t
    roots = np.roots([a, b, cc])
    s_exact = roots[(roots >= 0) & (roots <= t)].real.min()
    err = abs(win.s_star - s_exact)
    return err < 1e-9, f"|s* - s_LW| = {err:.1e}"


def check_sampler():
    f0 = InitialDensity()
    a = sample_ensemble(f0, 64, 11)
    b = sample_ensemble(f0, 32, 11, start=32)
    ok = np.array_equal(a[0][32:], b[0]) and np.all(np.linalg.norm(a[0], axis=1) < 1)
    return bool(ok), "chunked sampling reproduces serial output"


def check_initial_field():
    f0 = InitialDensity()
    p = RegularizationParams(64, 0.3, 4.0)
    fields = build_initial_fields(f0, build_double_mollifier(build_mollifier(p)))
    target = 1 / (16 * math.pi)
    ok = abs(initial_electric_field(f0, 2.0) - target) < 1e-14 and abs(fields.gamma_radial(2.0, 0.0) - target) < 1e-9
    return bool(ok), f"E0(2R) = 1/(16 pi), Gamma(t=0) = {float(fields.gamma_radial(2.0, 0.0)):.12f}"


def check_poisson_point():
    p = RegularizationParams(64, 0.3, 4.0)
    eta = build_double_mollifier(build_mollifier(p))
    x = np.array([[3 * p.mollifier_width, 0.0, 0.0]])
    cl = MeanFieldCloud(np.zeros((1, 3)), np.zeros((1, 3)))
    e = poisson_field(cl, x, eta)[0, 0]
    ref = float(mollified_coulomb_field(x[0, 0], eta))
    return abs(e - ref) < 1e-12 * ref, f"single-atom field {e:.12g} vs {ref:.12g}"


def check_config_roundtrip():
    cfg = parse_config("[regularization]\nn_ladder = [16, 32]\n[time]\nhorizon = 1.0\n")
    return parse_config(emit_config(cfg)) == cfg, "parse(emit(cfg)) == cfg"


def check_wilson():
    lo, hi = wilson_interval(0, 100)
    return abs(hi - 0.0370) < 1e-3 and lo == 0.0, f"Wilson upper(0/100) = {hi:.4f}"


CHECKS = [
    ("exponent intervals", check_exponents),
    ("relativistic velocity", check_hat_velocity),
    ("mollifier masses", check_kernel_mass),
    ("wave kernel mass", check_wave_mass),
    ("static Coulomb oracle", check_static_coulomb),
    ("retarded time oracle", check_retarded_time),
    ("sampler determinism", check_sampler),
    ("initial field", check_initial_field),
    ("Poisson point field", check_poisson_point),
    ("config round trip", check_config_roundtrip),
    ("Wilson interval", check_wilson),
]


def run_checks():
    rows = []
    for name, fn in CHECKS:
        try:
            ok, detail = fn()
        except Exception as exc:  # a crashing check is a failing check
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        rows.append((name, bool(ok), detail))
    return rows


def format_table(rows) -> str:
    width = max(len(r[0]) for r in rows)
    lines = [f"backend: {_backend.NAME}"]
    lines += [f"{name:<{width}}  {'PASS' if ok else 'FAIL'}  {detail}" for name, ok, detail in rows]
    return "\n".join(lines)
