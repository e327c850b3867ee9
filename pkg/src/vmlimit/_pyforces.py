"""Reference (pure NumPy) implementation of the retarded pair-force kernel.

This is the fallback used when the compiled ``_core`` extension is missing and
the reference the compiled code mirrors. For a fixed observer all sources
are processed together as arrays; every pair keeps its own iteration state
and stops independently, so a pair's result never depends on its neighbours.

History layout: ``hx, hu, hv, ha`` have shape ``(n_rec, n_src, 3)`` holding
position, transport velocity (hat v), momentum-velocity v and its time
derivative at ``s = k * dt``.
"""
from __future__ import annotations

import numpy as np

MAX_ITER = 200
TAYLOR_R = 1e-3


def _wave(kern, tau, r):
    """``(dY/dtau, dY/dr)``, zero off the smeared light shell."""
    base, w, c = kern["base"], kern["w"], kern["c"]
    R = c * tau
    small = r < TAYLOR_R * w
    rs = np.where(small, 1.0, r)

    def q(u):
        return base.q(u / w) / (w * w)

    def phi(u):
        return base.phi(u / w) / w

    qp, qm = q(R + rs), q(R - rs)
    Y = (phi(R + rs) - phi(R - rs)) / (2.0 * c * rs)
    dtau = (qp - qm) / (2.0 * rs)
    dr = -Y / rs + (qp + qm) / (2.0 * c * rs)
    if np.any(small):
        s = R / w
        d1 = base.dq(s) / w**3
        d2 = base.d2q(s) / w**4
        d3 = base.d3q(s) / w**5
        dtau = np.where(small, d1 + r * r * d3 / 6.0, dtau)
        dr = np.where(small, r * d2 / (3.0 * c), dr)
    on = (np.abs(R - r) < 2.0 * w) & (tau >= 0.0)
    return np.where(on, dtau, 0.0), np.where(on, dr, 0.0)


def _state(H, j, s):
    """Hermite position, its derivative and velocity of sources ``j`` at times ``s``."""
    hx, hu, hv, ha, n_rec, dt = H
    j = np.asarray(j)
    s = np.asarray(s, dtype=float)
    x0 = hx[0, j]
    if n_rec < 2:
        v = np.where((s > 0.0)[..., None], hv[0, j], 0.0)
        return x0.copy(), np.zeros_like(x0), v
    tlast = (n_rec - 1) * dt
    sc = np.minimum(s, tlast)
    k = np.minimum(np.floor(np.maximum(sc, 0.0) / dt).astype(np.intp), n_rec - 2)
    th = ((sc - k * dt) / dt)[..., None]
    th2, th3 = th * th, th * th * th
    h00 = 2.0 * th3 - 3.0 * th2 + 1.0
    h10 = th3 - 2.0 * th2 + th
    h01 = -2.0 * th3 + 3.0 * th2
    h11 = th3 - th2
    g00 = (6.0 * th2 - 6.0 * th) / dt
    g10 = 3.0 * th2 - 4.0 * th + 1.0
    g01 = (-6.0 * th2 + 6.0 * th) / dt
    g11 = 3.0 * th2 - 2.0 * th
    X0, X1, U0, U1 = hx[k, j], hx[k + 1, j], hu[k, j], hu[k + 1, j]
    x = h00 * X0 + h10 * dt * U0 + h01 * X1 + h11 * dt * U1
    dx = g00 * X0 + g10 * U0 + g01 * X1 + g11 * U1
    v = h00 * hv[k, j] + h10 * dt * ha[k, j] + h01 * hv[k + 1, j] + h11 * dt * ha[k + 1, j]
    pre = (s <= 0.0)[..., None]
    return np.where(pre, x0, x), np.where(pre, 0.0, dx), np.where(pre, 0.0, v)


def _gap(H, j, xi, t, c, s):
    x, dx, _ = _state(H, j, s)
    y = xi - x
    r = np.sqrt(np.sum(y * y, axis=-1))
    rs = np.where(r > 0.0, r, 1.0)
    dg = np.where(r > 0.0, -c + np.sum(y * dx, axis=-1) / rs, -c)
    return c * (t - s) - r, dg


def solve_window_edge(H, j, xi, t, c, target):
    """Vectorized root of ``g(s) = target`` on ``[0, t]`` for sources ``j``.

    Returns ``(s, failed)``; roots outside the interval are clipped to its ends.
    """
    j = np.atleast_1d(np.asarray(j))
    n = j.size
    g0, _ = _gap(H, j, xi, t, c, np.zeros(n))
    gt, _ = _gap(H, j, xi, t, c, np.full(n, float(t)))
    out = np.where(g0 <= target, 0.0, float(t))
    failed = np.zeros(n, dtype=bool)
    live = (g0 > target) & (gt < target)
    if not live.any():
        return out, failed
    idx = np.flatnonzero(live)
    jj = j[idx]
    a = np.zeros(idx.size)
    b = np.full(idx.size, float(t))
    g0l, gtl = g0[idx], gt[idx]
    s = a + (b - a) * (g0l - target) / (g0l - gtl)
    tol_g = 1e-13 * (1.0 + c * t)
    tol_s = 1e-15 * (1.0 + t)
    active = np.ones(idx.size, dtype=bool)
    for _ in range(MAX_ITER):
        k = np.flatnonzero(active)
        if k.size == 0:
            break
        gs, dg = _gap(H, jj[k], xi, t, c, s[k])
        above = gs > target
        a[k] = np.where(above, s[k], a[k])
        b[k] = np.where(above, b[k], s[k])
        done = (np.abs(gs - target) <= tol_g) | (b[k] - a[k] <= tol_s)
        active[k[done]] = False
        step = np.where(dg != 0.0, s[k] - (gs - target) / np.where(dg != 0.0, dg, 1.0), 0.5 * (a[k] + b[k]))
        inside = (step > a[k]) & (step < b[k])
        step = np.where(inside, step, 0.5 * (a[k] + b[k]))
        keep = k[~done]
        s[keep] = step[~done]
    failed[idx] = active
    out[idx] = s
    return out, failed


def pair_integrals(kern, H, j, xi, t, nodes, weights, offsets, rtol, floor_f):
    """Signed F1 and G integrals of observer ``xi`` against sources ``j``.

    Returns ``(F1, G, status)`` with shapes ``(n, 3), (n, 3), (n,)``.
    """
    j = np.atleast_1d(np.asarray(j))
    n = j.size
    c, w2 = kern["c"], 2.0 * kern["w"]
    F1 = np.zeros((n, 3))
    G = np.zeros((n, 3))
    status = np.zeros(n, dtype=np.int32)
    if t <= 0.0 or n == 0:
        return F1, G, status
    g0, _ = _gap(H, j, xi, t, c, np.zeros(n))
    reach = np.flatnonzero(g0 >= -w2)
    if reach.size == 0:
        return F1, G, status
    jr = j[reach]
    s_lo, f_lo = solve_window_edge(H, jr, xi, t, c, w2)
    s_hi, f_hi = solve_window_edge(H, jr, xi, t, c, -w2)
    status[reach] |= (f_lo | f_hi).astype(np.int32)
    ok = s_hi > s_lo
    pos = reach[ok]
    jr, s_lo, s_hi = jr[ok], s_lo[ok], s_hi[ok]
    mid, half = 0.5 * (s_hi + s_lo), 0.5 * (s_hi - s_lo)
    m = pos.size
    pf = np.zeros((m, 3))
    pg = np.zeros((m, 3))
    f = np.zeros((m, 3))
    g = np.zeros((m, 3))
    active = np.ones(m, dtype=bool)
    n_levels = len(offsets) - 1
    for lev in range(n_levels):
        k = np.flatnonzero(active)
        if k.size == 0:
            break
        nd = nodes[offsets[lev]:offsets[lev + 1]]
        wt = weights[offsets[lev]:offsets[lev + 1]]
        s = mid[k, None] + half[k, None] * nd[None, :]
        jk = np.broadcast_to(jr[k, None], s.shape)
        x, _, v = _state(H, jk, s)
        y = xi - x
        r = np.sqrt(np.sum(y * y, axis=-1))
        dtau, dr = _wave(kern, t - s, r)
        gam = 1.0 / np.sqrt(1.0 + np.sum(v * v, axis=-1) / (c * c))
        vh = v * gam[..., None]
        inv_r = np.where(r > 0.0, 1.0 / np.where(r > 0.0, r, 1.0), 0.0)
        grad = (dr * inv_r)[..., None] * y
        integrand_f = -(vh * dtau[..., None] + c * c * grad)
        integrand_g = np.cross(vh, grad)
        fk = half[k, None] * np.einsum("n,knm->km", wt, integrand_f)
        gk = half[k, None] * np.einsum("n,knm->km", wt, integrand_g)
        f[k], g[k] = fk, gk
        if lev > 0:
            err = np.maximum(np.abs(fk - pf[k]).max(axis=1), c * np.abs(gk - pg[k]).max(axis=1))
            mag = np.maximum(np.abs(fk).max(axis=1), c * np.abs(gk).max(axis=1))
            conv = err <= rtol * mag + floor_f
            active[k[conv]] = False
        pf[k], pg[k] = fk, gk
    status[pos[active]] |= 2
    F1[pos], G[pos] = f, g
    return F1, G, status


def pair_forces_rows(obs_x, obs_u, H, t, kern, quad, skip_self, row_start, row_end, out_f1, out_f2, out_status):
    """Python twin of ``_core.pair_forces_rows``; sums over sources in index order."""
    nodes, weights, offsets, rtol, floor_f = quad
    n_src = H[0].shape[1]
    for i in range(row_start, row_end):
        js = np.arange(n_src)
        if skip_self:
            js = js[js != i]
        F1, G, st = pair_integrals(kern, H, js, obs_x[i], t, nodes, weights, offsets, rtol, floor_f)
        sf = np.zeros(3)
        sg = np.zeros(3)
        for m in range(js.size):
            sf += F1[m]
            sg += G[m]
        out_f1[i] = sf
        out_f2[i] = -np.cross(obs_u[i], sg)
        out_status[i] = int(np.bitwise_or.reduce(st)) if st.size else 0
