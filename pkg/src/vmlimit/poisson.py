"""Mollified Vlasov-Poisson mean field represented by a particle cloud.

The limit density is approximated by a self-consistently evolving cloud of
``M`` samples. For radially symmetric data the field of the cloud is computed
from its radially symmetrized empirical measure, which is exact for the
symmetric limit and avoids an ``O(M^2)`` sum.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _backend
from .initial_data import UnsupportedConfiguration
from .kernels import DoubleMollifierTable, SmoothedWaveKernel, mollified_coulomb_field
from .maxwell import ParticleEnsemble, TrajectoryHistory

MODES = ("radial-shell", "direct-sum")
RADIAL_NODES = 513


@dataclass
class MeanFieldCloud:
    positions: np.ndarray
    velocities: np.ndarray
    time: float = 0.0
    mode: str = "radial-shell"
    radial: bool = True

    def __post_init__(self):
        self.positions = np.array(self.positions, dtype=float).reshape(-1, 3)
        self.velocities = np.array(self.velocities, dtype=float).reshape(-1, 3)
        if self.mode not in MODES:
            raise ValueError(f"unknown field mode {self.mode!r}; expected one of {MODES}")
        if self.positions.shape[0] == 0:
            raise ValueError("cloud must be nonempty")

    @property
    def size(self) -> int:
        return self.positions.shape[0]


# --------------------------------------------------------------------------
# field evaluation


def _radial_of(x):
    x = np.asarray(x, dtype=float)
    a = np.linalg.norm(x, axis=-1)
    unit = x / np.where(a > 0, a, 1.0)[..., None]
    return a, unit


def shell_field_magnitude(radii, a, eta: DoubleMollifierTable, chunk: int = 2048):
    """Exact radial field at radii ``a`` of the mollified, radially symmetrized
    empirical measure with atoms at ``radii`` (weight ``1/len(radii)`` each).

    Atoms deeper than ``2w`` inside radius a count fully, atoms farther than
    ``2w`` outside not at all; only the band in between needs the overlap
    function.
    """
    r = np.sort(np.asarray(radii, dtype=float))
    a = np.atleast_1d(np.asarray(a, dtype=float))
    w2 = eta.support
    M = r.size
    lo = np.searchsorted(r, a - w2, side="right")
    hi = np.searchsorted(r, a + w2, side="left")
    mass = lo.astype(float)
    for q in range(a.size):
        if hi[q] > lo[q]:
            band = r[lo[q]:hi[q]]
            for start in range(0, band.size, chunk):
                mass[q] += float(np.sum(eta.ball_overlap(band[start:start + chunk], a[q])))
    as_ = np.where(a > 0, a, 1.0)
    return np.where(a > 0, mass / (M * 4.0 * math.pi * as_ * as_), 0.0)


def direct_sum_field(sources, x, eta: DoubleMollifierTable, chunk: int = 1 << 20):
    """``(1/M) sum_k K^N(x - x_k)`` with the doubly mollified Coulomb kernel."""
    sources = np.asarray(sources, dtype=float).reshape(-1, 3)
    x = np.asarray(x, dtype=float)
    flat = x.reshape(-1, 3)
    out = np.zeros_like(flat)
    M = sources.shape[0]
    step = max(1, chunk // max(M, 1))
    for s in range(0, flat.shape[0], step):
        y = flat[s:s + step, None, :] - sources[None, :, :]
        r = np.linalg.norm(y, axis=-1)
        mag = mollified_coulomb_field(r, eta) / np.where(r > 0, r, 1.0)
        out[s:s + step] = np.einsum("qk,qkm->qm", mag, y) / M
    return out.reshape(x.shape)


def poisson_field(cloud: MeanFieldCloud, x, eta: DoubleMollifierTable, mode: str | None = None):
    """Mean-field electric force at query points ``x`` (shape ``(..., 3)``)."""
    mode = mode or cloud.mode
    if mode not in MODES:
        raise ValueError(f"unknown field mode {mode!r}")
    if mode == "direct-sum":
        return direct_sum_field(cloud.positions, x, eta)
    if not cloud.radial:
        raise UnsupportedConfiguration("radial-shell field mode requires radially symmetric data")
    a, unit = _radial_of(x)
    mag = shell_field_magnitude(np.linalg.norm(cloud.positions, axis=1), a.ravel(), eta).reshape(a.shape)
    return unit * mag[..., None]


# --------------------------------------------------------------------------
# gridded radial profiles for time stepping


class RadialProfileSolver:
    """Radial field profiles on a uniform grid via cloud-in-cell binning of radii.

    The overlap matrix ``P[g, b]`` (mass of a mollified unit shell of radius
    ``r_b`` inside radius ``a_g``) is cached and rebuilt only when the cloud
    outgrows the grid.
    """

    def __init__(self, eta: DoubleMollifierTable, n_nodes: int = RADIAL_NODES):
        self.eta = eta
        self.n_nodes = int(n_nodes)
        self.extent = 0.0
        self.grid = None
        self._P = None

    def _ensure(self, rmax):
        need = rmax + self.eta.support
        if self.grid is not None and need <= self.extent:
            return
        extent = max(need, 1e-6)
        extent = 1.25 ** math.ceil(math.log(extent, 1.25))
        self.extent = extent
        self.grid = np.linspace(0.0, extent, self.n_nodes)
        g = self.grid
        self._P = self.eta.ball_overlap(g[None, :], g[:, None])
        inv = np.zeros_like(g)
        inv[1:] = 1.0 / (4.0 * math.pi * g[1:] ** 2)
        self._inv_area = inv

    def profile(self, radii):
        """Field magnitude at the grid nodes and the grid extent."""
        radii = np.asarray(radii, dtype=float)
        self._ensure(float(radii.max()))
        h = self.grid[1]
        pos = radii / h
        k = np.minimum(pos.astype(np.intp), self.n_nodes - 2)
        frac = pos - k
        counts = np.bincount(k, weights=1.0 - frac, minlength=self.n_nodes)
        counts += np.bincount(k + 1, weights=frac, minlength=self.n_nodes)
        counts /= radii.size
        return (self._P @ counts) * self._inv_area, self.extent


def evaluate_profile(values, extent, x):
    """Vector field of a radial profile at points x; exact Coulomb beyond the grid."""
    a, unit = _radial_of(x)
    grid = np.linspace(0.0, extent, values.size)
    inside = np.interp(np.minimum(a, extent), grid, values)
    outside = 1.0 / (4.0 * math.pi * np.where(a > 0, a, 1.0) ** 2)
    mag = np.where(a >= extent, outside, inside)
    return unit * mag[..., None]


@dataclass
class PoissonFieldHistory:
    """Radial field profile of the evolving cloud at every step ``t = k dt``."""

    dt: float
    extents: list = field(default_factory=list)
    profiles: list = field(default_factory=list)

    def append(self, values, extent):
        self.profiles.append(np.asarray(values, dtype=float).copy())
        self.extents.append(float(extent))

    @property
    def n_steps(self) -> int:
        return len(self.profiles) - 1

    def field_at_step(self, k: int, x):
        return evaluate_profile(self.profiles[k], self.extents[k], x)


def step_poisson(state: ParticleEnsemble, dt: float, field_at, a0=None):
    """One Heun step of ``dx/dt = v``, ``dv/dt = E(t, x)``.

    ``field_at(t, x)`` returns the force at time t. The transport velocity is
    the plain v (non-relativistic flow).
    """
    x0, v0, t0 = state.positions, state.velocities, state.time
    t1 = t0 + dt
    if a0 is None:
        a0 = field_at(t0, x0)
    xp = x0 + dt * v0
    vp = v0 + dt * a0
    ap = field_at(t1, xp)
    x1 = x0 + 0.5 * dt * (v0 + vp)
    v1 = v0 + 0.5 * dt * (a0 + ap)
    return ParticleEnsemble(x1, v1, t1)


def evolve_cloud(cloud: MeanFieldCloud, eta: DoubleMollifierTable, dt: float, n_steps: int,
                 interact: bool = True, n_nodes: int = RADIAL_NODES):
    """Self-consistent Heun evolution of the cloud; returns its field history and final state."""
    if cloud.mode == "radial-shell" and not cloud.radial:
        raise UnsupportedConfiguration("radial-shell field mode requires radially symmetric data")
    hist = PoissonFieldHistory(dt)
    x, v = cloud.positions.copy(), cloud.velocities.copy()
    if cloud.mode == "radial-shell":
        solver = RadialProfileSolver(eta, n_nodes)

        def self_field(pos):
            vals, ext = solver.profile(np.linalg.norm(pos, axis=1))
            return vals, ext, evaluate_profile(vals, ext, pos)
    else:
        def self_field(pos):
            # direct mode stores a shell profile for the test particles as well
            solver_grid = np.linspace(0.0, np.linalg.norm(pos, axis=1).max() + eta.support, RADIAL_NODES)
            vals = shell_field_magnitude(np.linalg.norm(pos, axis=1), solver_grid, eta)
            return vals, solver_grid[-1], direct_sum_field(pos, pos, eta)

    if not interact:
        def self_field(pos, _inner=self_field):  # noqa: F811
            vals, ext, _ = _inner(pos)
            return np.zeros_like(vals), ext, np.zeros_like(pos)

    vals, ext, a0 = self_field(x)
    hist.append(vals, ext)
    for _ in range(n_steps):
        xp = x + dt * v
        vp = v + dt * a0
        _, _, ap = self_field(xp)
        x = x + 0.5 * dt * (v + vp)
        v = v + 0.5 * dt * (a0 + ap)
        vals, ext, a0 = self_field(x)
        hist.append(vals, ext)
    final = MeanFieldCloud(x, v, cloud.time + n_steps * dt, cloud.mode, cloud.radial)
    return hist, final


def run_poisson(state: ParticleEnsemble, field_history: PoissonFieldHistory, n_steps: int | None = None,
                callback=None):
    """Drive test particles through a precomputed cloud field history."""
    dt = field_history.dt
    n_steps = field_history.n_steps if n_steps is None else n_steps
    if n_steps > field_history.n_steps:
        raise ValueError("field history is shorter than the requested run")
    k0 = int(round(state.time / dt))

    def field_at(t, x):
        return field_history.field_at_step(int(round(t / dt)), x)

    ens = state
    a0 = field_history.field_at_step(k0, ens.positions)
    for _ in range(n_steps):
        ens = step_poisson(ens, dt, field_at, a0)
        a0 = field_history.field_at_step(int(round(ens.time / dt)), ens.positions)
        if callback is not None:
            callback(ens)
    return ens


# --------------------------------------------------------------------------
# optional tier: mean-field Maxwell force of a Maxwell-evolved cloud


def maxwell_meanfield_force(cloud_history: TrajectoryHistory, x, v, t: float, kernel: SmoothedWaveKernel,
                            threads: int = 1):
    """Retarded mean-field forces of a cloud at external query points.

    Returns ``(F1bar, F2bar)``: the electric-type and magnetic-type channels,
    each normalized by the cloud size.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    v = np.atleast_2d(np.asarray(v, dtype=float))
    M = cloud_history.n_particles
    if t <= 0:
        return np.zeros_like(x), np.zeros_like(x)
    from .params import hat_velocity

    u = hat_velocity(v, kernel.light_speed)
    f1, f2, st = _backend.pair_force_sums(x, u, cloud_history.view(), t, kernel, skip_self=False, threads=threads)
    if np.any(st):
        from .maxwell import ForceEvaluationError

        bad = int(np.flatnonzero(st)[0])
        raise ForceEvaluationError(bad, t, st[bad])
    return f1 / M, f2 / M
