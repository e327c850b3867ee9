"""Radial mollifier, its self-convolution and the smoothed retarded wave kernel.

All kernels are radial, so everything reduces to 1-D functions of the radius.
The base profiles are built once at unit width; a width ``w = N**-theta``
enters only through the scalings

    chi^N(r)  = w**-3 chi(r / w)
    eta^N(r)  = w**-3 eta(r / w)          (eta = chi * chi, support [0, 2])

and the smoothed wave kernel is the spherical mean of ``eta^N`` over the
light sphere of radius ``R = c * tau``::

    Y^N(tau, r) = [Phi(R + r) - Phi(R - r)] / (2 c r)

with ``Phi(u) = int_0^|u| s eta^N(s) ds`` (even) and ``q(u) = u eta^N(u)`` (odd).
"""
from __future__ import annotations

import functools
import hashlib
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.interpolate import CubicSpline

from .params import RegularizationParams

CHI_NORMALIZATION = 3465.0 / (512.0 * math.pi)
BASE_INTERVALS = 2048
CACHE_VERSION = "vmlimit-kernel-1"
_TAYLOR_R = 1e-3  # below r = _TAYLOR_R * w the wave kernel switches to its Taylor form
_TAYLOR_P = 1e-5


class QuadratureError(RuntimeError):
    def __init__(self, message, residual):
        super().__init__(f"{message} (achieved residual {residual:.3e})")
        self.residual = residual


class GridResolutionError(ValueError):
    pass


def chi_base(r):
    """Unit-width base mollifier ``C (1 - r^2)^4`` on ``r <= 1``."""
    r = np.asarray(r, dtype=float)
    inside = np.clip(1.0 - r * r, 0.0, None)
    return CHI_NORMALIZATION * inside**4


# --------------------------------------------------------------------------
# piecewise polynomials on a uniform radial grid


class _RadialPoly:
    """Piecewise polynomial on ``[0, L]`` with a uniform grid, a polynomial tail
    beyond ``L`` and an even/odd extension to negative arguments."""

    def __init__(self, coef, h, tail, parity):
        self.coef = np.ascontiguousarray(coef, dtype=float)  # (K, deg+1), ascending, local x
        self.h = float(h)
        self.length = self.coef.shape[0] * self.h
        self.tail = np.asarray(tail, dtype=float)  # ascending in (u - L)
        self.parity = parity

    def __call__(self, u):
        u = np.asarray(u, dtype=float)
        a = np.abs(u)
        k = np.minimum((a / self.h).astype(np.intp), self.coef.shape[0] - 1)
        x = a - k * self.h
        c = self.coef[k]
        out = c[..., -1]
        for j in range(self.coef.shape[1] - 2, -1, -1):
            out = out * x + c[..., j]
        beyond = a >= self.length
        if np.any(beyond):
            xt = a - self.length
            tail = np.zeros_like(a)
            for cj in self.tail[::-1]:
                tail = tail * xt + cj
            out = np.where(beyond, tail, out)
        if self.parity == "odd":
            out = np.where(u < 0, -out, out)
        return out

    def derivative(self):
        deg = self.coef.shape[1] - 1
        coef = self.coef[:, 1:] * np.arange(1, deg + 1)
        tail = self.tail[1:] * np.arange(1, len(self.tail)) if len(self.tail) > 1 else [0.0]
        parity = "odd" if self.parity == "even" else "even"
        return _RadialPoly(coef, self.h, tail, parity)

    def antiderivative(self):
        """Antiderivative vanishing at 0; parity flips."""
        K, ncoef = self.coef.shape
        new = np.zeros((K, ncoef + 1))
        new[:, 1:] = self.coef / np.arange(1, ncoef + 1)
        pieces = new[:, 1:] @ (self.h ** np.arange(1, ncoef + 1))
        new[:, 0] = np.concatenate(([0.0], np.cumsum(pieces)[:-1]))
        end = new[-1, 0] + pieces[-1]
        tail = np.zeros(len(self.tail) + 1)
        tail[0] = end
        tail[1:] = self.tail / np.arange(1, len(self.tail) + 1)
        parity = "odd" if self.parity == "even" else "even"
        return _RadialPoly(new, self.h, tail, parity)


@dataclass(frozen=True)
class _BaseKernel:
    """Unit-width eta = chi * chi and the antiderivative family built from it."""

    sigma: np.ndarray
    values: np.ndarray
    eta: _RadialPoly
    q: _RadialPoly
    phi: _RadialPoly
    phi1: _RadialPoly
    phi2: _RadialPoly
    dq: _RadialPoly
    d2q: _RadialPoly
    d3q: _RadialPoly

    @property
    def phi_inf(self):
        return float(self.phi.tail[0])


def _gauss_legendre(n):
    return np.polynomial.legendre.leggauss(n)


def _eta_base_value(r, nodes, weights):
    """eta(r) for the unit-width base mollifier by the radial convolution formula.

    Breaking the s-range at the kinks leaves polynomial pieces of degree 19,
    integrated exactly by Gauss-Legendre with >= 10 nodes.
    """
    C = CHI_NORMALIZATION

    def G(u):
        u = np.minimum(u, 1.0)
        return C * (1.0 - (1.0 - u * u) ** 5) / 10.0

    if r == 0.0:
        breaks = np.array([0.0, 1.0])
        f = lambda s: s * s * chi_base(s) ** 2
        scale = 4.0 * math.pi
    else:
        pts = [0.0, 1.0, r, 1.0 - r, r - 1.0]
        breaks = np.unique(np.clip(pts, 0.0, 1.0))
        f = lambda s: s * chi_base(s) * (G(r + s) - G(np.abs(r - s)))
        scale = 2.0 * math.pi / r
    lo, hi = breaks[:-1], breaks[1:]
    mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
    s = mid[:, None] + half[:, None] * nodes[None, :]
    return scale * float(np.sum(half[:, None] * weights[None, :] * f(s)))


@functools.lru_cache(maxsize=None)
def base_kernel(n_intervals: int = BASE_INTERVALS) -> _BaseKernel:
    sigma = np.linspace(0.0, 2.0, n_intervals + 1)
    n16, w16 = _gauss_legendre(16)
    n12, w12 = _gauss_legendre(12)
    values = np.array([_eta_base_value(r, n16, w16) for r in sigma])
    check = np.array([_eta_base_value(r, n12, w12) for r in sigma[:: max(1, n_intervals // 64)]])
    residual = float(np.max(np.abs(check - values[:: max(1, n_intervals // 64)])))
    if residual > 1e-12:
        raise QuadratureError("double-mollifier quadrature did not converge", residual)
    values[-1] = 0.0

    spline = CubicSpline(sigma, values, bc_type=((1, 0.0), (1, 0.0)))
    h = sigma[1] - sigma[0]
    a = spline.c[::-1].T.copy()  # (K, 4) ascending in local x
    sk = sigma[:-1, None]
    qcoef = np.zeros((a.shape[0], 5))
    qcoef[:, 0] = sk[:, 0] * a[:, 0]
    for j in range(1, 4):
        qcoef[:, j] = sk[:, 0] * a[:, j] + a[:, j - 1]
    qcoef[:, 4] = a[:, 3]

    q = _RadialPoly(qcoef, h, [0.0], "odd")
    phi = q.antiderivative()
    phi1 = phi.antiderivative()
    # normalize to unit mass: 4 pi int s^2 eta = 4 pi (L Phi(L) - Phi1(L))
    L = 2.0
    mass = 4.0 * math.pi * (L * float(phi(L)) - float(phi1(L)))
    a /= mass
    qcoef /= mass
    eta = _RadialPoly(a, h, [0.0], "even")
    q = _RadialPoly(qcoef, h, [0.0], "odd")
    phi = q.antiderivative()
    phi1 = phi.antiderivative()
    phi2 = phi1.antiderivative()
    dq = q.derivative()
    d2q = dq.derivative()
    d3q = d2q.derivative()
    return _BaseKernel(sigma, values / mass, eta, q, phi, phi1, phi2, dq, d2q, d3q)


# --------------------------------------------------------------------------
# mollifier


@dataclass(frozen=True)
class MollifierProfile:
    theta: float
    n: int
    normalization: float = CHI_NORMALIZATION

    @property
    def width(self) -> float:
        return float(self.n) ** (-self.theta)

    def radial_value(self, r):
        w = self.width
        return chi_base(np.asarray(r, dtype=float) / w) / w**3


def build_mollifier(p: RegularizationParams) -> MollifierProfile:
    return MollifierProfile(theta=p.theta, n=p.n_particles)


# --------------------------------------------------------------------------
# double mollifier


@dataclass(frozen=True)
class DoubleMollifierTable:
    """Radial table of eta^N = chi^N * chi^N with cubic interpolation."""

    width: float
    base: _BaseKernel = field(repr=False)

    @property
    def support(self) -> float:
        return 2.0 * self.width

    @property
    def grid(self) -> np.ndarray:
        return self.base.sigma * self.width

    @property
    def values(self) -> np.ndarray:
        return self.base.values / self.width**3

    interpolation_order = 3

    def __call__(self, r):
        w = self.width
        # the spline can dip below zero by roundoff in the flat tail
        return np.maximum(self.base.eta(np.asarray(r, dtype=float) / w), 0.0) / w**3

    # scaled antiderivative family, see module docstring
    def q(self, u):
        return self.base.q(np.asarray(u, dtype=float) / self.width) / self.width**2

    def phi(self, u):
        return self.base.phi(np.asarray(u, dtype=float) / self.width) / self.width

    def phi1(self, u):
        return self.base.phi1(np.asarray(u, dtype=float) / self.width)

    def phi2(self, u):
        return self.base.phi2(np.asarray(u, dtype=float) / self.width) * self.width

    def enclosed_mass(self, r):
        """Mass of eta^N inside the ball of radius r."""
        r = np.asarray(r, dtype=float)
        m = 4.0 * math.pi * (r * self.phi(r) - self.phi1(r))
        return np.where(r >= self.support, 1.0, m)

    def ball_overlap(self, r, a):
        """Mass of eta^N(. - y) inside the ball B_a, for |y| = r.

        Equivalently the enclosed mass of the mollified uniform shell of
        radius r inside radius a.
        """
        r, a = np.broadcast_arrays(np.asarray(r, dtype=float), np.asarray(a, dtype=float))
        w = self.width
        small = r < _TAYLOR_P * w
        rs = np.where(small, 1.0, r)
        full = (2.0 * math.pi / rs) * (
            a * (self.phi1(a + rs) - self.phi1(a - rs)) - self.phi2(a + rs) + self.phi2(a - rs)
        )
        out = np.where(small, self.enclosed_mass(a), full)
        out = np.where(a >= r + self.support, 1.0, out)
        out = np.where(a <= r - self.support, 0.0, out)
        return np.clip(out, 0.0, 1.0)


def build_double_mollifier(m: MollifierProfile) -> DoubleMollifierTable:
    return DoubleMollifierTable(width=m.width, base=base_kernel())


def mollified_coulomb_field(r, table: DoubleMollifierTable):
    """Radial magnitude of ``x / (4 pi |x|^3)`` convolved with eta^N.

    Shell theorem: enclosed mass over ``4 pi r^2``; exactly Coulomb outside
    the support, 0 at the origin.
    """
    r = np.asarray(r, dtype=float)
    rs = np.where(r > 0, r, 1.0)
    inner = table.enclosed_mass(rs) / (4.0 * math.pi * rs * rs)
    out = np.where(r >= table.support, 1.0 / (4.0 * math.pi * rs * rs), inner)
    return np.where(r > 0, out, 0.0)


# --------------------------------------------------------------------------
# smoothed wave kernel


@dataclass(frozen=True)
class GridSpec:
    d_tau: float
    d_r: float
    r_max: float | None = None


@dataclass(frozen=True)
class SmoothedWaveKernel:
    params: RegularizationParams
    eta: DoubleMollifierTable = field(repr=False)
    tau_grid: np.ndarray | None = field(default=None, repr=False)
    r_grid: np.ndarray | None = field(default=None, repr=False)
    table: np.ndarray | None = field(default=None, repr=False)  # (3, n_tau, n_r): Y, dY/dtau, dY/dr

    @classmethod
    def from_params(cls, p: RegularizationParams) -> "SmoothedWaveKernel":
        return cls(p, build_double_mollifier(build_mollifier(p)))

    @property
    def width(self) -> float:
        return self.params.mollifier_width

    @property
    def light_speed(self) -> float:
        return self.params.light_speed

    @property
    def shell_half_width(self) -> float:
        return 2.0 * self.width

    def evaluate(self, tau, r):
        """Return ``(Y, dY/dtau, dY/dr)`` at retarded lag tau and radius r."""
        tau, r = np.broadcast_arrays(np.asarray(tau, dtype=float), np.asarray(r, dtype=float))
        c, w = self.light_speed, self.width
        e = self.eta
        R = c * tau
        small = r < _TAYLOR_R * w
        rs = np.where(small, 1.0, r)
        qp, qm = e.q(R + rs), e.q(R - rs)
        Y = (e.phi(R + rs) - e.phi(R - rs)) / (2.0 * c * rs)
        dtau = (qp - qm) / (2.0 * rs)
        dr = -Y / rs + (qp + qm) / (2.0 * c * rs)
        if np.any(small):
            b = e.base
            s = R / w
            q0 = b.q(s) / w**2
            q1 = b.dq(s) / w**3
            q2 = b.d2q(s) / w**4
            q3 = b.d3q(s) / w**5
            r2 = r * r
            Y = np.where(small, (q0 + r2 * q2 / 6.0) / c, Y)
            dtau = np.where(small, q1 + r2 * q3 / 6.0, dtau)
            dr = np.where(small, r * q2 / (3.0 * c), dr)
        support = np.abs(R - r) < self.shell_half_width
        zero = np.zeros_like(Y)
        mask = support & (tau >= 0)
        return np.where(mask, Y, zero), np.where(mask, dtau, zero), np.where(mask, dr, zero)

    def __call__(self, tau, r):
        return self.evaluate(tau, r)[0]

    def core_arrays(self):
        """Unit-width coefficient arrays consumed by the compiled force core."""
        b = self.eta.base
        return b.q.coef, b.phi.coef, b.q.h, b.phi_inf


def _check_grid(p: RegularizationParams, grid: GridSpec):
    w2 = p.shell_half_width
    if grid.d_r <= 0 or grid.d_tau <= 0:
        raise GridResolutionError("grid spacings must be positive")
    if grid.d_r > w2 / 8.0:
        raise GridResolutionError(f"r-spacing {grid.d_r:g} exceeds shell_half_width/8 = {w2 / 8:g}")
    if grid.d_tau > w2 / (8.0 * p.light_speed):
        raise GridResolutionError(
            f"tau-spacing {grid.d_tau:g} exceeds shell_half_width/(8c) = {w2 / (8 * p.light_speed):g}"
        )


def default_grid(p: RegularizationParams) -> GridSpec:
    w2 = p.shell_half_width
    return GridSpec(d_tau=w2 / (8.0 * p.light_speed), d_r=w2 / 8.0)


def build_wave_kernel(p: RegularizationParams, tau_max: float, grid_spec: GridSpec | None = None) -> SmoothedWaveKernel:
    """Tabulate Y^N and its derivatives on a (tau, r) grid resolving the shell."""
    if not tau_max > 0:
        raise ValueError("tau_max must be positive")
    grid = grid_spec or default_grid(p)
    _check_grid(p, grid)
    kernel = SmoothedWaveKernel.from_params(p)
    r_max = grid.r_max if grid.r_max is not None else p.light_speed * tau_max + 2.0 * p.shell_half_width
    n_tau = int(math.ceil(tau_max / grid.d_tau)) + 1
    n_r = int(math.ceil(r_max / grid.d_r)) + 1
    tau_grid = np.arange(n_tau) * grid.d_tau
    r_grid = np.arange(n_r) * grid.d_r
    table = np.stack(kernel.evaluate(tau_grid[:, None], r_grid[None, :]))
    return SmoothedWaveKernel(p, kernel.eta, tau_grid, r_grid, table)


# --------------------------------------------------------------------------
# on-disk cache


def _cache_key(p: RegularizationParams, tau_max: float, grid: GridSpec) -> str:
    blob = json.dumps(
        {
            "version": CACHE_VERSION,
            "n": p.n_particles,
            "theta": repr(float(p.theta)),
            "c": repr(float(p.light_speed)),
            "tau_max": repr(float(tau_max)),
            "grid": [repr(float(grid.d_tau)), repr(float(grid.d_r)), repr(grid.r_max)],
            "base_intervals": BASE_INTERVALS,
        },
        sort_keys=True,
    )
    return hashlib.sha256(blob.encode()).hexdigest()[:20]


def save_kernel_table(kernel: SmoothedWaveKernel, path: os.PathLike) -> None:
    if kernel.table is None:
        raise ValueError("kernel has no tabulation to save")
    p = kernel.params
    np.savez(
        path,
        version=np.array(CACHE_VERSION),
        n_particles=np.array(p.n_particles),
        theta=np.array(p.theta),
        light_speed=np.array(p.light_speed),
        tau_grid=kernel.tau_grid,
        r_grid=kernel.r_grid,
        table=kernel.table,
    )


def load_kernel_table(path: os.PathLike) -> SmoothedWaveKernel:
    with np.load(path) as data:
        version = str(data["version"])
        if version != CACHE_VERSION:
            raise ValueError(f"kernel cache version {version!r} does not match {CACHE_VERSION!r}")
        p = RegularizationParams(int(data["n_particles"]), float(data["theta"]), float(data["light_speed"]))
        return SmoothedWaveKernel(
            p,
            build_double_mollifier(build_mollifier(p)),
            data["tau_grid"].copy(),
            data["r_grid"].copy(),
            data["table"].copy(),
        )


def cached_wave_kernel(p: RegularizationParams, tau_max: float, grid_spec: GridSpec | None = None,
                       cache_dir: os.PathLike | None = None) -> SmoothedWaveKernel:
    grid = grid_spec or default_grid(p)
    if cache_dir is None:
        return build_wave_kernel(p, tau_max, grid)
    cache_dir = Path(cache_dir)
    cache_dir.mkdir(parents=True, exist_ok=True)
    path = cache_dir / f"wave_kernel_{_cache_key(p, tau_max, grid)}.npz"
    if path.exists():
        return load_kernel_table(path)
    kernel = build_wave_kernel(p, tau_max, grid)
    save_kernel_table(kernel, path)
    return kernel
