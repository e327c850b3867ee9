"""Selects the compiled force core or the NumPy fallback at import time.

Set ``VMLIMIT_BACKEND=python`` to force the fallback.
"""
from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import _pyforces

logger = logging.getLogger(__name__)

try:
    if os.environ.get("VMLIMIT_BACKEND", "").lower() == "python":
        raise ImportError("fallback requested")
    from . import _core
except ImportError:  # pragma: no cover - depends on the build
    _core = None

COMPILED = _core is not None
NAME = "cython" if COMPILED else "python"

# Gauss-Legendre ladder: 16, 32, ..., 512 nodes
_LEVELS = (16, 32, 64, 128, 256, 512)
QUAD_RTOL = 1e-6
QUAD_FLOOR = 1e-12


def _gl_ladder():
    nodes, weights, offsets = [], [], [0]
    for n in _LEVELS:
        x, w = np.polynomial.legendre.leggauss(n)
        nodes.append(x)
        weights.append(w)
        offsets.append(offsets[-1] + n)
    return (np.concatenate(nodes), np.concatenate(weights), np.asarray(offsets, dtype=np.int64))


NODES, WEIGHTS, OFFSETS = _gl_ladder()


@dataclass(frozen=True)
class HistoryView:
    """Read-only arrays of past records, shape ``(n_rec, n_src, 3)`` each."""

    hx: np.ndarray
    hu: np.ndarray
    hv: np.ndarray
    ha: np.ndarray
    dt: float

    @property
    def n_rec(self) -> int:
        return self.hx.shape[0]

    def as_tuple(self):
        return (self.hx, self.hu, self.hv, self.ha, self.n_rec, self.dt)


def _kern_args(kernel):
    qc, pc, h, phi_inf = kernel.core_arrays()
    return qc, pc, h, phi_inf, kernel.width, kernel.light_speed


def _py_kern(kernel):
    return {"base": kernel.eta.base, "w": kernel.width, "c": kernel.light_speed}


def _resolve(backend):
    use = backend or NAME
    if use not in ("cython", "python"):
        raise ValueError(f"unknown backend {use!r}")
    if use == "cython" and not COMPILED:
        raise RuntimeError("compiled backend requested but vmlimit._core is not built")
    return use


def pair_force_sums(obs_x, obs_u, hist: HistoryView, t: float, kernel, skip_self: bool = True,
                    threads: int = 1, backend: str | None = None):
    """Sum over sources of the signed F1 and F2 pair integrals for every observer.

    Parameters
    ----------
    obs_x, obs_u : (n_obs, 3) arrays
        Observer positions and transport velocities at time ``t``.
    hist : HistoryView
        Source trajectories.
    skip_self : bool
        Drop the ``j == i`` term (observers are the sources themselves).
    threads : int
        Row chunks evaluated concurrently; the result does not depend on it.

    Returns
    -------
    f1, f2 : (n_obs, 3) arrays
        Unnormalized sums (the caller applies ``1/(N-1)``).
    status : (n_obs,) int array
        Bit 1: retarded-root failure, bit 2: quadrature did not converge.
    """
    obs_x = np.ascontiguousarray(obs_x, dtype=float)
    obs_u = np.ascontiguousarray(obs_u, dtype=float)
    n_obs = obs_x.shape[0]
    f1 = np.zeros((n_obs, 3))
    f2 = np.zeros((n_obs, 3))
    status = np.zeros(n_obs, dtype=np.int32)
    if n_obs == 0 or hist.hx.shape[1] == 0:
        return f1, f2, status
    use = _resolve(backend)
    bounds = np.linspace(0, n_obs, max(1, min(int(threads), n_obs)) + 1).astype(int)
    chunks = [(int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]

    if use == "cython":
        qc, pc, h, phi_inf, w, c = _kern_args(kernel)

        def run(chunk):
            _core.pair_forces_rows(obs_x, obs_u, hist.hx, hist.hu, hist.hv, hist.ha, hist.n_rec, hist.dt,
                                   float(t), qc, pc, h, phi_inf, w, c, NODES, WEIGHTS, OFFSETS,
                                   QUAD_RTOL, QUAD_FLOOR, bool(skip_self), chunk[0], chunk[1], f1, f2, status)
    else:
        kern = _py_kern(kernel)
        quad = (NODES, WEIGHTS, OFFSETS, QUAD_RTOL, QUAD_FLOOR)
        H = hist.as_tuple()

        def run(chunk):
            _pyforces.pair_forces_rows(obs_x, obs_u, H, float(t), kern, quad, bool(skip_self),
                                       chunk[0], chunk[1], f1, f2, status)

    if len(chunks) == 1:
        run(chunks[0])
    else:
        # disjoint output rows: no reduction across threads
        with ThreadPoolExecutor(max_workers=len(chunks)) as pool:
            list(pool.map(run, chunks))
    return f1, f2, status


def single_pair(xi, hist: HistoryView, t: float, j: int, kernel, backend: str | None = None):
    """``(F1, G, status)`` for one observer point against source ``j``."""
    xi = np.ascontiguousarray(xi, dtype=float)
    if _resolve(backend) == "cython":
        qc, pc, h, phi_inf, w, c = _kern_args(kernel)
        return _core.single_pair(xi, hist.hx, hist.hu, hist.hv, hist.ha, hist.n_rec, hist.dt, float(t), int(j),
                                 qc, pc, h, phi_inf, w, c, NODES, WEIGHTS, OFFSETS, QUAD_RTOL, QUAD_FLOOR)
    F1, G, st = _pyforces.pair_integrals(_py_kern(kernel), hist.as_tuple(), [int(j)], xi, float(t),
                                         NODES, WEIGHTS, OFFSETS, QUAD_RTOL, QUAD_FLOOR)
    return F1[0], G[0], int(st[0])


def retarded_root(xi, hist: HistoryView, t: float, j: int, c: float, target: float = 0.0,
                  backend: str | None = None):
    """Solve ``c (t - s) - |xi - x_j(s)| = target`` on ``[0, t]``; returns ``(s, failed)``."""
    xi = np.ascontiguousarray(xi, dtype=float)
    if _resolve(backend) == "cython":
        s, st = _core.retarded_root(xi, hist.hx, hist.hu, hist.hv, hist.ha, hist.n_rec, hist.dt,
                                    float(t), int(j), float(c), float(target))
        return float(s), bool(st)
    s, failed = _pyforces.solve_window_edge(hist.as_tuple(), [int(j)], xi, float(t), float(c), float(target))
    return float(s[0]), bool(failed[0])
