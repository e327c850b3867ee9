"""N-particle regularized Vlasov-Maxwell dynamics with retarded pair forces."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from . import _backend
from ._backend import HistoryView
from .initial_data import InitialFields
from .initial_data import self_force_gamma as _gamma_radial
from .kernels import SmoothedWaveKernel
from .params import hat_velocity

CHECKPOINT_VERSION = "vmlimit-checkpoint-1"
CFL_KAPPA = 0.25
TRAJECTORY_HEADER = ["flow", "t", "particle", "x1", "x2", "x3", "v1", "v2", "v3"]


class ConfigurationError(ValueError):
    pass


class RetardedTimeError(ArithmeticError):
    """Root finder did not converge; carries the bracketing gap values."""

    def __init__(self, message, g_values=()):
        self.g_values = tuple(g_values)
        super().__init__(message)


class ForceEvaluationError(ArithmeticError):
    def __init__(self, particle, t, status):
        self.particle, self.t, self.status = int(particle), float(t), int(status)
        kind = []
        if status & 1:
            kind.append("retarded root failed")
        if status & 2:
            kind.append("quadrature did not converge")
        super().__init__(f"force on particle {particle} at t={t:g}: {', '.join(kind)}")


@dataclass
class ParticleEnsemble:
    positions: np.ndarray
    velocities: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        self.positions = np.array(self.positions, dtype=float).reshape(-1, 3)
        self.velocities = np.array(self.velocities, dtype=float).reshape(-1, 3)
        if self.positions.shape != self.velocities.shape:
            raise ValueError("positions and velocities must have the same shape")

    @property
    def size(self) -> int:
        return self.positions.shape[0]

    def copy(self) -> "ParticleEnsemble":
        return ParticleEnsemble(self.positions.copy(), self.velocities.copy(), self.time)

    def phase(self) -> np.ndarray:
        return np.hstack([self.positions, self.velocities])


class TrajectoryHistory:
    """Per-particle records ``(x, hat v, v, a)`` on the uniform grid ``s = k dt``.

    Storage is one preallocated array per quantity, shape ``(capacity, N, 3)``;
    the live prefix is handed to the force core without copying. Records are
    kept from ``s = 0`` on, which covers every retarded window.
    """

    def __init__(self, n_particles: int, dt: float, capacity: int = 64):
        if not dt > 0:
            raise ValueError("dt must be positive")
        self.n_particles = int(n_particles)
        self.dt = float(dt)
        self._cap = max(2, int(capacity))
        shape = (self._cap, self.n_particles, 3)
        self._x = np.zeros(shape)
        self._u = np.zeros(shape)
        self._v = np.zeros(shape)
        self._a = np.zeros(shape)
        self.n_records = 0

    def _grow(self):
        self._cap *= 2
        for name in ("_x", "_u", "_v", "_a"):
            old = getattr(self, name)
            new = np.zeros((self._cap,) + old.shape[1:])
            new[: self.n_records] = old[: self.n_records]
            setattr(self, name, new)

    def append(self, x, u, v, a):
        if self.n_records == self._cap:
            self._grow()
        k = self.n_records
        self._x[k], self._u[k], self._v[k], self._a[k] = x, u, v, a
        self.n_records += 1

    def replace_last(self, x=None, u=None, v=None, a=None):
        k = self.n_records - 1
        if k < 0:
            raise IndexError("history is empty")
        for arr, val in ((self._x, x), (self._u, u), (self._v, v), (self._a, a)):
            if val is not None:
                arr[k] = val

    def pop(self):
        if self.n_records == 0:
            raise IndexError("history is empty")
        self.n_records -= 1

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_records) * self.dt

    @property
    def last_time(self) -> float:
        return (self.n_records - 1) * self.dt

    def record(self, k: int):
        return self._x[k].copy(), self._u[k].copy(), self._v[k].copy(), self._a[k].copy()

    def view(self) -> HistoryView:
        n = self.n_records
        return HistoryView(self._x[:n], self._u[:n], self._v[:n], self._a[:n], self.dt)

    def window_start(self, t: float, max_distance: float, light_speed: float, width: float) -> float:
        """Earliest retarded time any pair can reach at time t."""
        return max(0.0, t - max_distance / light_speed - 4.0 * width / light_speed)

    def interpolate(self, j: int, s: float):
        """Hermite ``(x, v)`` of particle j at time s (frozen at rest for s <= 0)."""
        x, _, v = _backend._pyforces._state(self.view().as_tuple(), np.array([j]), np.array([float(s)]))
        return x[0], v[0]

    def arrays(self):
        n = self.n_records
        return self._x[:n].copy(), self._u[:n].copy(), self._v[:n].copy(), self._a[:n].copy()

    @classmethod
    def from_arrays(cls, dt, x, u, v, a) -> "TrajectoryHistory":
        h = cls(x.shape[1], dt, capacity=max(2, x.shape[0]))
        n = x.shape[0]
        h._x[:n], h._u[:n], h._v[:n], h._a[:n] = x, u, v, a
        h.n_records = n
        return h


def static_history(positions, dt: float, n_records: int, velocities=None) -> TrajectoryHistory:
    """History of particles moving uniformly (or resting) from ``s = 0``."""
    x0 = np.asarray(positions, dtype=float).reshape(-1, 3)
    vel = np.zeros_like(x0) if velocities is None else np.asarray(velocities, dtype=float).reshape(-1, 3)
    h = TrajectoryHistory(x0.shape[0], dt, capacity=n_records)
    for k in range(n_records):
        h.append(x0 + k * dt * vel, vel, vel, np.zeros_like(x0))
    return h


def uniform_motion_history(positions, transport_velocity, light_speed: float, dt: float, n_records: int):
    """History of sources moving with constant transport velocity ``hat v``."""
    u = np.asarray(transport_velocity, dtype=float).reshape(-1, 3)
    speed2 = np.sum(u * u, axis=1, keepdims=True)
    if np.any(speed2 >= light_speed**2):
        raise ValueError("transport speed must be below c")
    v = u / np.sqrt(1.0 - speed2 / light_speed**2)
    x0 = np.asarray(positions, dtype=float).reshape(-1, 3)
    h = TrajectoryHistory(x0.shape[0], dt, capacity=n_records)
    for k in range(n_records):
        h.append(x0 + k * dt * u, u, v, np.zeros_like(x0))
    return h


# --------------------------------------------------------------------------
# retarded windows and single-pair forces


@dataclass(frozen=True)
class RetardedWindow:
    """Support of the smeared light shell along source j's past, seen from i at t.

    ``s_star`` is None when the sharp light cone meets j's history before
    ``s = 0`` (the window is then clipped at 0).
    """

    i: int | None
    j: int
    s_star: float | None
    s_lo: float
    s_hi: float


def find_retarded_window(history: TrajectoryHistory, j: int, x_i_now, t: float, kernel: SmoothedWaveKernel,
                         i: int | None = None) -> RetardedWindow | None:
    """Bracket ``{s in [0, t] : |c (t - s) - |x_i - x_j(s)|| <= 2 w}``.

    Returns None when the backward cone has not reached j's history yet.
    """
    c, w2 = kernel.light_speed, kernel.shell_half_width
    hv = history.view()
    xi = np.asarray(x_i_now, dtype=float)
    g0 = _gap_value(hv, j, xi, t, c, 0.0)
    if t <= 0 or g0 < -w2:
        return None
    roots = {}
    for name, target in (("lo", w2), ("star", 0.0), ("hi", -w2)):
        s, failed = _backend.retarded_root(xi, hv, t, j, c, target)
        if failed:
            raise RetardedTimeError(
                f"retarded root for pair ({i}, {j}) at t={t:g} did not converge",
                (_gap_value(hv, j, xi, t, c, 0.0), _gap_value(hv, j, xi, t, c, t)),
            )
        roots[name] = s
    s_star = roots["star"] if g0 > 0.0 else None
    return RetardedWindow(i, j, s_star, roots["lo"], roots["hi"])


def _gap_value(hv: HistoryView, j, xi, t, c, s):
    g, _ = _backend._pyforces._gap(hv.as_tuple(), np.array([j]), xi, t, c, np.array([float(s)]))
    return float(g[0])


def _pair(i, j, t, history, kernel, x_i=None):
    if x_i is None:
        k = int(round(t / history.dt))
        if abs(k * history.dt - t) > 1e-9 * max(1.0, t) or k >= history.n_records:
            raise ValueError("x_i must be supplied when t is not a recorded time")
        x_i = history._x[k, i]
    F1, G, st = _backend.single_pair(x_i, history.view(), t, j, kernel)
    if st:
        raise ForceEvaluationError(i, t, st)
    return np.asarray(F1), np.asarray(G)


def pair_force_F1(i: int, j: int, t: float, history: TrajectoryHistory, kernel: SmoothedWaveKernel, x_i=None):
    """One (i, j) summand of the retarded electric-type force, without 1/(N-1)."""
    return _pair(i, j, t, history, kernel, x_i)[0]


def pair_force_F2(i: int, j: int, t: float, history: TrajectoryHistory, kernel: SmoothedWaveKernel,
                  x_i=None, u_i=None):
    """One (i, j) summand of the magnetic-type force ``-hat v_i x int hat v_j x grad Y ds``."""
    if u_i is None:
        k = int(round(t / history.dt))
        u_i = history._u[min(k, history.n_records - 1), i]
    G = _pair(i, j, t, history, kernel, x_i)[1]
    return -np.cross(np.asarray(u_i, dtype=float), G)


def self_force_gamma(x, v, t: float, fields: InitialFields | None, kernel: SmoothedWaveKernel):
    """Self-driven force of the propagated initial fields (zero when fields is None)."""
    x = np.asarray(x, dtype=float)
    if fields is None:
        return np.zeros_like(x)
    return _gamma_radial(x, v, t, fields, kernel.light_speed)


# --------------------------------------------------------------------------
# time stepping


def check_cfl(dt: float, kernel: SmoothedWaveKernel, kappa: float = CFL_KAPPA):
    limit = kappa * kernel.width / kernel.light_speed
    if dt > limit * (1.0 + 1e-12):
        raise ConfigurationError(f"dt={dt:g} violates the shell CFL bound {limit:g} = w/(4c)")


def cfl_dt(kernel: SmoothedWaveKernel, horizon: float | None = None, kappa: float = CFL_KAPPA) -> float:
    """Largest admissible step, shrunk so that ``horizon`` is a whole number of steps."""
    limit = kappa * kernel.width / kernel.light_speed
    if horizon is None:
        return limit
    n = max(1, math.ceil(horizon / limit - 1e-12))
    return horizon / n


@dataclass
class MaxwellSystem:
    """Bundles what one force evaluation needs."""

    kernel: SmoothedWaveKernel
    fields: InitialFields | None = None
    threads: int = 1
    interactions: bool = True
    position_bound: float | None = None
    last_status: np.ndarray | None = field(default=None, repr=False)

    def acceleration(self, x, u, v, t: float, history: TrajectoryHistory):
        n = x.shape[0]
        acc = self_force_gamma(x, v, t, self.fields, self.kernel)
        if self.interactions and n > 1 and t > 0:
            f1, f2, st = _backend.pair_force_sums(x, u, history.view(), t, self.kernel,
                                                  skip_self=True, threads=self.threads)
            bad = np.flatnonzero(st)
            if bad.size:
                raise ForceEvaluationError(bad[0], t, st[bad[0]])
            acc = acc + (f1 + f2) / (n - 1)
        return acc


def start_history(ensemble: ParticleEnsemble, dt: float, system: MaxwellSystem, capacity: int = 64):
    """History with the t = 0 record; a(0) has only the Gamma contribution."""
    c = system.kernel.light_speed
    h = TrajectoryHistory(ensemble.size, dt, capacity)
    x, v = ensemble.positions, ensemble.velocities
    u = hat_velocity(v, c)
    h.append(x, u, v, np.zeros_like(x))
    h.replace_last(a=system.acceleration(x, u, v, 0.0, h))
    return h


def step_maxwell(ensemble: ParticleEnsemble, history: TrajectoryHistory, dt: float,
                 kernel: SmoothedWaveKernel, fields: InitialFields | None = None, *,
                 system: MaxwellSystem | None = None) -> ParticleEnsemble:
    """Advance by one Heun step; the history gains the record at ``t + dt``.

    The last history record must describe ``ensemble`` (including its
    acceleration). Two force evaluations are spent per step: one at the
    predicted state and one at the corrected state, whose value becomes the
    stored acceleration.
    """
    system = system or MaxwellSystem(kernel, fields)
    check_cfl(dt, kernel)
    if abs(dt - history.dt) > 1e-12 * dt:
        raise ConfigurationError("dt differs from the history spacing")
    if abs(history.last_time - ensemble.time) > 1e-9 * max(1.0, ensemble.time):
        raise ConfigurationError("history does not end at the ensemble time")
    c = kernel.light_speed
    x0, u0, v0, a0 = history.record(history.n_records - 1)
    t1 = ensemble.time + dt

    xp = x0 + dt * u0
    vp = v0 + dt * a0
    up = hat_velocity(vp, c)
    history.append(xp, up, vp, a0)
    ap = system.acceleration(xp, up, vp, t1, history)
    history.replace_last(a=ap)

    x1 = x0 + 0.5 * dt * (u0 + up)
    v1 = v0 + 0.5 * dt * (a0 + ap)
    u1 = hat_velocity(v1, c)
    history.replace_last(x=x1, u=u1, v=v1)
    a1 = system.acceleration(x1, u1, v1, t1, history)
    history.replace_last(a=a1)

    assert np.all(np.linalg.norm(u1, axis=1) < c), "transport speed reached c"
    if system.position_bound is not None:
        lim = system.position_bound + t1 * c
        assert np.all(np.linalg.norm(x1, axis=1) <= lim), "particle left the causal ball"
    return ParticleEnsemble(x1, v1, t1)


def run_maxwell(ensemble: ParticleEnsemble, horizon: float, dt: float, system: MaxwellSystem,
                callback=None):
    """Evolve to ``horizon``; ``callback(ensemble)`` is called after every step."""
    n_steps = int(round(horizon / dt))
    check_cfl(dt, system.kernel)
    history = start_history(ensemble, dt, system, capacity=n_steps + 2)
    ens = ensemble.copy()
    for _ in range(n_steps):
        ens = step_maxwell(ens, history, dt, system.kernel, system.fields, system=system)
        if callback is not None:
            callback(ens)
    return ens, history


# --------------------------------------------------------------------------
# serialization


def write_trajectory_csv(path, rows, header_comment: str | None = None):
    """rows: iterable of ``(flow, t, positions, velocities)`` snapshots."""
    with open(path, "w", newline="") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        writer = csv.writer(fh)
        writer.writerow(TRAJECTORY_HEADER)
        for flow, t, x, v in rows:
            for i in range(len(x)):
                writer.writerow([flow, repr(float(t)), i, *(repr(float(a)) for a in x[i]),
                                 *(repr(float(a)) for a in v[i])])


def read_trajectory_csv(path):
    out = []
    with open(path, newline="") as fh:
        reader = csv.reader(line for line in fh if not line.startswith("#"))
        header = next(reader)
        if header != TRAJECTORY_HEADER:
            raise ValueError(f"unexpected trajectory header {header}")
        for rec in reader:
            out.append((rec[0], float(rec[1]), int(rec[2]), np.array([float(s) for s in rec[3:]])))
    return out


def save_checkpoint(path, ensemble: ParticleEnsemble, history: TrajectoryHistory, **meta):
    x, u, v, a = history.arrays()
    extra = {f"meta_{k}": np.asarray(val) for k, val in meta.items()}
    np.savez(path, version=np.array(CHECKPOINT_VERSION), time=np.array(ensemble.time),
             positions=ensemble.positions, velocities=ensemble.velocities,
             dt=np.array(history.dt), hx=x, hu=u, hv=v, ha=a, **extra)


def load_checkpoint(path):
    """Returns ``(ensemble, history, meta)``."""
    with np.load(path) as d:
        version = str(d["version"])
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"checkpoint version {version!r} does not match {CHECKPOINT_VERSION!r}")
        ens = ParticleEnsemble(d["positions"], d["velocities"], float(d["time"]))
        hist = TrajectoryHistory.from_arrays(float(d["dt"]), d["hx"], d["hu"], d["hv"], d["ha"])
        meta = {k[5:]: d[k][()] for k in d.files if k.startswith("meta_")}
    return ens, hist, meta
