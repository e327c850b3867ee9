import math

import numpy as np
import pytest
from scipy import integrate

from conftest import radial_quad
from vmlimit.kernels import (CHI_NORMALIZATION, GridResolutionError, GridSpec, SmoothedWaveKernel,
                             build_double_mollifier, build_mollifier, build_wave_kernel, cached_wave_kernel, chi_base,
                             load_kernel_table, mollified_coulomb_field, save_kernel_table)
from vmlimit.params import RegularizationParams


def test_chi_normalization_from_quadrature():
    raw = radial_quad(lambda r: 4 * math.pi * r * r * (1 - r * r) ** 4, 1.0)
    assert raw == pytest.approx(4 * math.pi * 128 / 3465, rel=1e-13)
    assert CHI_NORMALIZATION == pytest.approx(1 / raw, rel=1e-13)
    # 3465 / (512 pi) = 2.15419 (a rounded 2.1534 would be off in the fourth digit)
    assert chi_base(0.0) == pytest.approx(2.15419, abs=1e-5)


def test_scaled_mollifier_mass_and_support():
    m = build_mollifier(RegularizationParams(64, 0.05, 1.0))
    w = m.width
    mass = radial_quad(lambda r: 4 * math.pi * r * r * m.radial_value(r), w)
    assert abs(mass - 1) < 1e-10
    assert m.radial_value(1.01 * w) == 0
    assert np.all(m.radial_value(np.linspace(0, 2 * w, 101)) >= 0)


def _eta_3d(r, w=1.0):
    """eta(r) = int chi(|z|) chi(|x - z|) dz for |x| = r, in spherical coordinates about x."""
    chi = lambda s: chi_base(s / w) / w**3

    def inner(rho):
        f = lambda mu: chi(np.sqrt(max(r * r + rho * rho - 2 * r * rho * mu, 0.0)))
        # the inner chi has a kink where |x - z| = w
        pts = []
        if r > 0 and rho > 0:
            mu_k = (r * r + rho * rho - w * w) / (2 * r * rho)
            if -1 < mu_k < 1:
                pts = [mu_k]
        val, _ = integrate.quad(f, -1, 1, points=pts or None, epsabs=1e-13, epsrel=1e-12, limit=200)
        return 2 * math.pi * rho * rho * chi(rho) * val

    val, _ = integrate.quad(inner, 0, w, epsabs=1e-12, epsrel=1e-11, limit=200)
    return val


@pytest.mark.parametrize("r", [0.0, 0.3, 0.9, 1.6])
def test_double_mollifier_against_3d_quadrature(r):
    eta = build_double_mollifier(build_mollifier(RegularizationParams(1, 0.1, 1.0)))
    assert eta(r) == pytest.approx(_eta_3d(r), rel=1e-6, abs=1e-9)


def test_double_mollifier_mass_support_monotone():
    eta = build_double_mollifier(build_mollifier(RegularizationParams(64, 0.05, 1.0)))
    w = eta.width
    assert abs(radial_quad(lambda r: 4 * math.pi * r * r * eta(r), 2 * w) - 1) < 1e-8
    assert eta(2.01 * w) == 0 and eta(2 * w) == pytest.approx(0, abs=1e-12)
    assert eta(0.0) > 0
    near = eta(np.linspace(0, 0.3 * w, 30))
    assert np.all(np.diff(near) <= 1e-12)
    assert np.all(eta.values[eta.grid >= 2 * w] == 0)


def test_double_mollifier_mass_monte_carlo():
    # sum of two independent chi-distributed vectors has density eta
    rng = np.random.default_rng(5)

    def draw(n):
        out = []
        while sum(len(o) for o in out) < n:
            x = rng.uniform(-1, 1, (4 * n, 3))
            r = np.linalg.norm(x, axis=1)
            keep = rng.uniform(0, 1, 4 * n) < np.clip(1 - r * r, 0, None) ** 4
            out.append(x[keep & (r < 1)])
        return np.concatenate(out)[:n]

    z = np.linalg.norm(draw(200000) + draw(200000), axis=1)
    eta = build_double_mollifier(build_mollifier(RegularizationParams(1, 0.1, 1.0)))
    edges = np.array([0.0, 0.4, 0.8, 1.2, 2.0])
    for a, b in zip(edges[:-1], edges[1:]):
        expected = radial_quad(lambda r: 4 * math.pi * r * r * eta(r), b) - radial_quad(
            lambda r: 4 * math.pi * r * r * eta(r), a) if a > 0 else radial_quad(lambda r: 4 * math.pi * r * r * eta(r), b)
        frac = np.mean((z >= a) & (z < b))
        se = math.sqrt(expected * (1 - expected) / z.size)
        assert abs(frac - expected) < 4 * se


def test_scaling_consistency():
    e1 = build_double_mollifier(build_mollifier(RegularizationParams(64, 0.2, 1.0)))
    e2 = build_double_mollifier(build_mollifier(RegularizationParams(128, 0.2, 1.0)))
    assert e2.support == pytest.approx(e1.support * 2 ** -0.2, rel=1e-14)
    assert e2(0.0) == pytest.approx(e1(0.0) * 2 ** 0.6, rel=1e-13)


def _sphere_mean_Y(kernel, tau, r):
    """(tau / 4 pi) int_{S^2} eta^N(x - c tau omega) d omega by direct quadrature."""
    R = kernel.light_speed * tau
    eta = kernel.eta
    f = lambda mu: eta(np.sqrt(max(r * r + R * R - 2 * r * R * mu, 0.0)))
    val, _ = integrate.quad(f, -1, 1, epsabs=1e-13, epsrel=1e-11, limit=400)
    return tau / (4 * math.pi) * 2 * math.pi * val


@pytest.mark.parametrize("tau, r", [(0.5, 2.0), (0.5, 2.3), (0.05, 0.1)])
def test_wave_kernel_reduction_vs_sphere_quadrature(small_kernel, tau, r):
    assert small_kernel(tau, r) == pytest.approx(_sphere_mean_Y(small_kernel, tau, r), rel=1e-7, abs=1e-12)


def test_wave_kernel_small_r_branch_continuous(small_kernel):
    w = small_kernel.width
    tau = 0.1
    r = np.array([0.999e-3, 1.001e-3]) * w
    Y, dt, dr = small_kernel.evaluate(tau, r)
    assert Y[0] == pytest.approx(Y[1], rel=1e-6)
    assert dt[0] == pytest.approx(dt[1], rel=1e-5)
    _, _, dr_shell = small_kernel.evaluate(tau, small_kernel.light_speed * tau + np.linspace(-2, 2, 41) * w)
    assert abs(dr[0] - dr[1]) <= 1e-5 * np.max(np.abs(dr_shell))


@pytest.mark.parametrize("n, theta, c", [(64, 0.3, 4.0), (16, 0.15, 8.0), (1000, 0.2, 2.0)])
def test_wave_kernel_mass_and_support(n, theta, c):
    k = SmoothedWaveKernel.from_params(RegularizationParams(n, theta, c))
    tau = 0.5
    R, w2 = c * tau, k.shell_half_width
    mass = radial_quad(lambda r: 4 * math.pi * r * r * k(tau, r), R + w2, pieces=128)
    assert abs(mass - tau) < 1e-6
    assert k(tau, R + 1.5 * w2) == 0
    assert k(-0.1, 0.2) == 0


def test_derivatives_match_finite_differences(small_kernel):
    k = small_kernel
    c, w = k.light_speed, k.width
    tau = np.linspace(4 * w / c + 0.01, 0.6, 9)
    taus, rs = [], []
    for t in tau:
        for x in np.linspace(-1.8, 1.8, 13):
            taus.append(t)
            rs.append(c * t + x * w)
    taus, rs = np.array(taus), np.array(rs)
    Y, dY_t, dY_r = k.evaluate(taus, rs)
    ymax = np.max(np.abs(Y))
    h_t, h_r = 1e-6 / c, 1e-6
    fd_t = (k(taus + h_t, rs) - k(taus - h_t, rs)) / (2 * h_t)
    fd_r = (k(taus, rs + h_r) - k(taus, rs - h_r)) / (2 * h_r)
    big = np.abs(Y) > 1e-3 * ymax
    scale_t = np.max(np.abs(dY_t[big]))
    scale_r = np.max(np.abs(dY_r[big]))
    assert np.all(np.abs(fd_t[big] - dY_t[big]) <= 0.01 * np.maximum(np.abs(dY_t[big]), 1e-3 * scale_t))
    assert np.all(np.abs(fd_r[big] - dY_r[big]) <= 0.01 * np.maximum(np.abs(dY_r[big]), 1e-3 * scale_r))


def dalembert_residual(kernel, n_points=40, seed=0):
    """Max |Y_tt - c^2 (Y_rr + 2 Y_r / r)| on interior shell points, and the allowed bound."""
    c, w = kernel.light_speed, kernel.width
    rng = np.random.default_rng(seed)
    tau = rng.uniform(4 * w / c * 1.1, 4 * w / c + 1.0, n_points)
    r = c * tau + rng.uniform(-1.9, 1.9, n_points) * w
    ht, hr = 1e-4 * w / c, 1e-4 * w
    Y = kernel(tau, r)
    ytt = (kernel(tau + ht, r) - 2 * Y + kernel(tau - ht, r)) / ht**2
    yrr = (kernel(tau, r + hr) - 2 * Y + kernel(tau, r - hr)) / hr**2
    yr = (kernel(tau, r + hr) - kernel(tau, r - hr)) / (2 * hr)
    resid = np.abs(ytt - c * c * (yrr + 2 * yr / r))
    tt = np.linspace(4 * w / c * 1.1, 4 * w / c + 1.0, 60)
    rr = c * tt[:, None] + np.linspace(-2, 2, 81)[None, :] * w
    ymax = np.max(np.abs(kernel(tt[:, None], rr)))
    return float(resid.max()), 1e-3 * ymax / (2 * w) ** 2


def test_dalembert_residual(small_kernel):
    resid, bound = dalembert_residual(small_kernel)
    assert resid <= bound


def test_grid_check_and_table():
    p = RegularizationParams(64, 0.3, 4.0)
    with pytest.raises(GridResolutionError):
        build_wave_kernel(p, 0.5, GridSpec(d_tau=1e-3, d_r=p.shell_half_width / 4))
    with pytest.raises(GridResolutionError):
        build_wave_kernel(p, 0.5, GridSpec(d_tau=1.0, d_r=1e-3))
    k = build_wave_kernel(p, 0.5)
    assert k.table.shape[0] == 3
    assert k.table.shape[1:] == (k.tau_grid.size, k.r_grid.size)
    y, dt, dr = k.evaluate(k.tau_grid[:, None], k.r_grid[None, :])
    assert np.array_equal(k.table[0], y)


def test_cache_roundtrip_bit_identical(tmp_path):
    p = RegularizationParams(64, 0.3, 4.0)
    fresh = build_wave_kernel(p, 0.3)
    first = cached_wave_kernel(p, 0.3, cache_dir=tmp_path)
    hit = cached_wave_kernel(p, 0.3, cache_dir=tmp_path)
    assert np.array_equal(fresh.table, first.table) and np.array_equal(fresh.table, hit.table)
    assert np.array_equal(fresh.r_grid, hit.r_grid)
    path = tmp_path / "k.npz"
    save_kernel_table(fresh, path)
    data = dict(np.load(path))
    data["version"] = np.array("old")
    np.savez(tmp_path / "bad.npz", **data)
    with pytest.raises(ValueError, match="version"):
        load_kernel_table(tmp_path / "bad.npz")


def _coulomb_3d(eta, r):
    """x-component of (x/(4 pi |x|^3)) * eta at x = (r, 0, 0), by direct quadrature."""

    def inner(rho):
        def f(mu):
            d2 = r * r + rho * rho - 2 * r * rho * mu
            return (r - rho * mu) / (4 * math.pi * d2**1.5)

        val, _ = integrate.quad(f, -1, 1, epsabs=1e-14, epsrel=1e-12)
        return 2 * math.pi * rho * rho * eta(rho) * val

    val, _ = integrate.quad(inner, 0, eta.support, epsabs=1e-14, epsrel=1e-11, limit=200)
    return val


def test_mollified_coulomb_field():
    eta = build_double_mollifier(build_mollifier(RegularizationParams(64, 0.3, 1.0)))
    w = eta.width
    assert mollified_coulomb_field(0.0, eta) == 0
    r = 3 * w
    assert mollified_coulomb_field(r, eta) == pytest.approx(1 / (4 * math.pi * r * r), rel=1e-14)
    assert mollified_coulomb_field(r, eta) == pytest.approx(_coulomb_3d(eta, r), rel=1e-8)
    rs = np.linspace(2 * w, 10 * w, 50)
    assert np.allclose(mollified_coulomb_field(rs, eta), 1 / (4 * math.pi * rs**2), rtol=1e-10, atol=0)
    small = 1e-3 * w
    assert mollified_coulomb_field(small, eta) == pytest.approx(eta(0.0) * small / 3, rel=1e-4)
