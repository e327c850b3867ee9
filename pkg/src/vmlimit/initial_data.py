"""Initial density, counter-based samplers and the induced initial fields."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline

from .kernels import DoubleMollifierTable

MAX_REJECTIONS = 1_000_000
_BATCH = 32


class UnsupportedConfiguration(ValueError):
    pass


@dataclass(frozen=True)
class InitialDensity:
    """``f0(x, v) = A (1 - |x|^2/R^2)_+^2 (1 - |v|^2/V^2)_+^2``, a probability density.

    The profile factorizes, so the spatial and velocity marginals are both of
    the form ``105 / (32 pi R^3) (1 - r^2/R^2)^2``.
    """

    spatial_radius: float = 1.0
    velocity_radius: float = 1.0

    def __post_init__(self):
        if not (self.spatial_radius > 0 and self.velocity_radius > 0):
            raise ValueError("support radii must be positive")

    @property
    def amplitude(self) -> float:
        return _marginal_norm(self.spatial_radius) * _marginal_norm(self.velocity_radius)

    def __call__(self, x, v):
        x, v = np.asarray(x, dtype=float), np.asarray(v, dtype=float)
        R, V = self.spatial_radius, self.velocity_radius
        fx = np.clip(1.0 - np.sum(x * x, axis=-1) / R**2, 0.0, None) ** 2
        fv = np.clip(1.0 - np.sum(v * v, axis=-1) / V**2, 0.0, None) ** 2
        return self.amplitude * fx * fv

    def spatial_density(self, r):
        """Charge density rho0 at radius r."""
        r = np.asarray(r, dtype=float)
        R = self.spatial_radius
        return _marginal_norm(R) * np.clip(1.0 - r * r / R**2, 0.0, None) ** 2

    def enclosed_charge(self, r):
        r = np.minimum(np.asarray(r, dtype=float), self.spatial_radius)
        R = self.spatial_radius
        m = 4.0 * math.pi * _marginal_norm(R) * (r**3 / 3.0 - 2.0 * r**5 / (5.0 * R**2) + r**7 / (7.0 * R**4))
        return m

    def second_moment_x(self) -> float:
        """E|x|^2 under the spatial marginal (closed form 1/3 R^2)."""
        R = self.spatial_radius
        # 4 pi C int_0^R (1 - r^2/R^2)^2 r^4 dr = 4 pi C R^5 (1/5 - 2/7 + 1/9)
        return 4.0 * math.pi * _marginal_norm(R) * R**5 * (1 / 5 - 2 / 7 + 1 / 9)


def _marginal_norm(R):
    return 105.0 / (32.0 * math.pi * R**3)


def _sample_key(seed: int) -> np.ndarray:
    return np.random.SeedSequence(int(seed) & (2**64 - 1)).generate_state(2, np.uint64)


def _uniform_ball(rng, n, radius):
    d = rng.standard_normal((n, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    return d * (radius * rng.random(n) ** (1.0 / 3.0))[:, None]


def _draw_one(f0: InitialDensity, key, index: int):
    # sample i lives on its own Philox sub-stream, so it is a pure function of (seed, i)
    rng = np.random.Generator(np.random.Philox(key=key, counter=[0, 0, 0, index]))
    R, V = f0.spatial_radius, f0.velocity_radius
    tried = 0
    while tried < MAX_REJECTIONS:
        x = _uniform_ball(rng, _BATCH, R)
        v = _uniform_ball(rng, _BATCH, V)
        u = rng.random(_BATCH)
        accept = (1.0 - np.sum(x * x, 1) / R**2) ** 2 * (1.0 - np.sum(v * v, 1) / V**2) ** 2
        hit = np.flatnonzero(u < accept)
        if hit.size:
            k = hit[0]
            return x[k], v[k]
        tried += _BATCH
    raise RuntimeError(f"rejection sampler exceeded {MAX_REJECTIONS} rejections for sample {index}")


def sample_ensemble(f0: InitialDensity, count: int, seed: int, start: int = 0):
    """Draw ``count`` i.i.d. phase-space points from f0.

    Sample ``i`` depends only on ``(seed, i)``; ``start`` selects a slice of the
    global index range so that chunks generated in parallel concatenate to the
    serial result. Returns ``(x, v)`` arrays of shape ``(count, 3)``.
    """
    if count < 0:
        raise ValueError("count must be non-negative")
    key = _sample_key(seed)
    x = np.empty((count, 3))
    v = np.empty((count, 3))
    for n in range(count):
        x[n], v[n] = _draw_one(f0, key, start + n)
    return x, v


def initial_electric_field(f0: InitialDensity, r):
    """Unmollified Coulomb field magnitude of rho0 at radius r (shell theorem)."""
    r = np.asarray(r, dtype=float)
    rs = np.where(r > 0, r, 1.0)
    return np.where(r > 0, f0.enclosed_charge(rs) / (4.0 * math.pi * rs * rs), 0.0)


@dataclass(frozen=True)
class InitialFields:
    """Mollified initial fields for the default radial data.

    ``e0`` is the radial magnitude of the doubly mollified Coulomb field of rho0;
    ``B0`` and ``j0`` vanish identically.
    """

    density: InitialDensity
    eta: DoubleMollifierTable = field(repr=False)
    grid: np.ndarray = field(repr=False)
    e0_values: np.ndarray = field(repr=False)
    radial: bool = True
    _spline: CubicSpline = field(repr=False, default=None)
    _integral: object = field(repr=False, default=None)

    @property
    def outer_radius(self) -> float:
        return float(self.grid[-1])

    def b0(self, x):
        return np.zeros_like(np.asarray(x, dtype=float))

    def j0(self, x):
        return np.zeros_like(np.asarray(x, dtype=float))

    def e0(self, r):
        """Radial magnitude of the mollified initial field E0^N."""
        r = np.asarray(r, dtype=float)
        rs = np.where(r > 0, r, 1.0)
        out = np.where(r >= self.outer_radius, 1.0 / (4.0 * math.pi * rs * rs), self._spline(np.minimum(r, self.outer_radius)))
        return np.where(r > 0, out, 0.0)

    def e0_integral(self, u):
        """``int_0^u e0(s) ds``."""
        u = np.asarray(u, dtype=float)
        a = self.outer_radius
        inner = self._integral(np.minimum(u, a))
        tail = float(self._integral(a)) + (1.0 / a - 1.0 / np.maximum(u, a)) / (4.0 * math.pi)
        return np.where(u > a, tail, inner)

    def gamma_radial(self, a, rho):
        """Radial magnitude of ``d/dt [t * spherical mean of E0^N over radius rho = c t]``."""
        a, rho = np.broadcast_arrays(np.asarray(a, dtype=float), np.asarray(rho, dtype=float))
        ok = a > 1e-12
        aa = np.where(ok, a, 1.0)
        up, lo = aa + rho, np.abs(aa - rho)
        first = (up * self.e0(up) + lo * self.e0(lo)) / (2.0 * aa)
        second = rho * (self.e0_integral(up) - self.e0_integral(lo)) / (2.0 * aa * aa)
        return np.where(ok, first - second, 0.0)


def build_initial_fields(f0: InitialDensity, eta: DoubleMollifierTable, n_grid: int = 2049) -> InitialFields:
    """Tabulate E0^N = eta^N * E0 through the enclosed mass of eta^N * rho0."""
    R, w2 = f0.spatial_radius, eta.support
    outer = R + w2
    grid = np.linspace(0.0, outer, n_grid)
    nodes, weights = np.polynomial.legendre.leggauss(48)
    mass = np.empty(n_grid)
    for k, a in enumerate(grid):
        breaks = np.unique(np.clip([0.0, R, a - w2, a + w2], 0.0, R))
        lo, hi = breaks[:-1], breaks[1:]
        mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
        r = (mid[:, None] + half[:, None] * nodes[None, :]).ravel()
        wts = (half[:, None] * weights[None, :]).ravel()
        mass[k] = np.sum(wts * 4.0 * math.pi * r * r * f0.spatial_density(r) * eta.ball_overlap(r, a))
    e = np.zeros(n_grid)
    e[1:] = mass[1:] / (4.0 * math.pi * grid[1:] ** 2)
    spline = CubicSpline(grid, e)
    return InitialFields(f0, eta, grid, e, True, spline, spline.antiderivative())


def self_force_gamma(x, v, t: float, fields: InitialFields, light_speed: float):
    """Self-driven force from the propagated initial fields at positions x.

    With B0 = 0, j0 = 0 and curl E0 = 0 only the ``E0^N * dY/dt`` term survives,
    so the result does not depend on v.
    """
    if not fields.radial:
        raise UnsupportedConfiguration("self-driven force is only implemented for radial initial data")
    x = np.asarray(x, dtype=float)
    a = np.linalg.norm(x, axis=-1)
    mag = fields.gamma_radial(a, light_speed * t)
    safe = np.where(a > 0, a, 1.0)
    return x * (mag / safe)[..., None]


# --------------------------------------------------------------------------
# ensemble CSV


ENSEMBLE_HEADER = ["trial", "particle", "x1", "x2", "x3", "v1", "v2", "v3"]


def dump_ensembles_csv(path, ensembles, header_comment: str | None = None) -> None:
    """Write ``{trial: (x, v)}`` as rows (trial, particle, x1..x3, v1..v3)."""
    with open(path, "w", newline="") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        writer = csv.writer(fh)
        writer.writerow(ENSEMBLE_HEADER)
        for trial in sorted(ensembles):
            x, v = ensembles[trial]
            for i in range(len(x)):
                writer.writerow([trial, i, *map(repr, map(float, x[i])), *map(repr, map(float, v[i]))])


def load_ensembles_csv(path):
    rows: dict[int, list] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(line for line in fh if not line.startswith("#"))
        header = next(reader)
        if header != ENSEMBLE_HEADER:
            raise ValueError(f"unexpected ensemble header {header}")
        for rec in reader:
            rows.setdefault(int(rec[0]), []).append((int(rec[1]), [float(s) for s in rec[2:]]))
    out = {}
    for trial, recs in rows.items():
        recs.sort()
        arr = np.array([r[1] for r in recs]).reshape(-1, 6)
        out[trial] = (arr[:, :3].copy(), arr[:, 3:].copy())
    return out
