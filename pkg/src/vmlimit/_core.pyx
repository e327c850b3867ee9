# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False, language_level=3
"""Compiled retarded pair-force kernel.

Mirrors ``vmlimit._pyforces`` exactly in algorithm; see that module for the
reference formulation.
"""
from libc.math cimport sqrt, fabs, floor

import numpy as np

DEF MAX_ITER = 200
DEF TAYLOR_R = 1e-3

cdef struct Kern:
    const double* qc      # (K, 5) unit-width q coefficients
    const double* pc      # (K, 6) unit-width Phi coefficients
    int K
    double h
    double phi_inf
    double w
    double c


cdef inline int _cell(const Kern* k, double a, double* x) noexcept nogil:
    cdef int i = <int>(a / k.h)
    if i > k.K - 1:
        i = k.K - 1
    x[0] = a - i * k.h
    return i


cdef inline double _q(const Kern* k, double u) noexcept nogil:
    # scaled q^N(u) = sign(u) q(|u|/w) / w^2
    cdef double a = fabs(u) / k.w, x, val
    cdef int i
    cdef const double* cf
    if a >= 2.0:
        return 0.0
    i = _cell(k, a, &x)
    cf = k.qc + 5 * i
    val = (((cf[4] * x + cf[3]) * x + cf[2]) * x + cf[1]) * x + cf[0]
    val = val / (k.w * k.w)
    return -val if u < 0 else val


cdef inline double _phi(const Kern* k, double u) noexcept nogil:
    cdef double a = fabs(u) / k.w, x, val
    cdef int i
    cdef const double* cf
    if a >= 2.0:
        return k.phi_inf / k.w
    i = _cell(k, a, &x)
    cf = k.pc + 6 * i
    val = ((((cf[5] * x + cf[4]) * x + cf[3]) * x + cf[2]) * x + cf[1]) * x + cf[0]
    return val / k.w


cdef inline void _q_derivs(const Kern* k, double u, double* d1, double* d2, double* d3) noexcept nogil:
    # derivatives of q^N at u >= 0
    cdef double a = fabs(u) / k.w, x, w = k.w
    cdef int i
    cdef const double* cf
    if a >= 2.0:
        d1[0] = 0.0; d2[0] = 0.0; d3[0] = 0.0
        return
    i = _cell(k, a, &x)
    cf = k.qc + 5 * i
    d1[0] = (((4.0 * cf[4] * x + 3.0 * cf[3]) * x + 2.0 * cf[2]) * x + cf[1]) / (w * w * w)
    d2[0] = ((12.0 * cf[4] * x + 6.0 * cf[3]) * x + 2.0 * cf[2]) / (w * w * w * w)
    d3[0] = (24.0 * cf[4] * x + 6.0 * cf[3]) / (w * w * w * w * w)


cdef inline void _wave(const Kern* k, double tau, double r, double* dtau, double* dr) noexcept nogil:
    """dY/dtau and dY/dr of the smoothed wave kernel."""
    cdef double c = k.c, R = c * tau, Y, qp, qm, d1, d2, d3
    if fabs(R - r) >= 2.0 * k.w or tau < 0.0:
        dtau[0] = 0.0
        dr[0] = 0.0
        return
    if r < TAYLOR_R * k.w:
        _q_derivs(k, R, &d1, &d2, &d3)
        dtau[0] = d1 + r * r * d3 / 6.0
        dr[0] = r * d2 / (3.0 * c)
        return
    qp = _q(k, R + r)
    qm = _q(k, R - r)
    Y = (_phi(k, R + r) - _phi(k, R - r)) / (2.0 * c * r)
    dtau[0] = (qp - qm) / (2.0 * r)
    dr[0] = -Y / r + (qp + qm) / (2.0 * c * r)


cdef struct Hist:
    const double* hx
    const double* hu
    const double* hv
    const double* ha
    int n_rec
    int n_src
    double dt


cdef inline void _state(const Hist* H, int j, double s, double* x, double* dx, double* v) noexcept nogil:
    """Cubic Hermite position (from x, hat v) and velocity (from v, a) of source j at s."""
    cdef int k, m, o0, o1
    cdef double th, th2, th3, h00, h10, h01, h11, g00, g10, g01, g11, dt = H.dt
    cdef double tlast = (H.n_rec - 1) * dt
    if s <= 0.0 or H.n_rec < 2:
        o0 = 3 * j
        for m in range(3):
            x[m] = H.hx[o0 + m]
            dx[m] = 0.0
            v[m] = 0.0 if s <= 0.0 else H.hv[o0 + m]
        return
    if s > tlast:
        s = tlast
    k = <int>floor(s / dt)
    if k > H.n_rec - 2:
        k = H.n_rec - 2
    th = (s - k * dt) / dt
    th2 = th * th
    th3 = th2 * th
    h00 = 2.0 * th3 - 3.0 * th2 + 1.0
    h10 = th3 - 2.0 * th2 + th
    h01 = -2.0 * th3 + 3.0 * th2
    h11 = th3 - th2
    g00 = (6.0 * th2 - 6.0 * th) / dt
    g10 = 3.0 * th2 - 4.0 * th + 1.0
    g01 = (-6.0 * th2 + 6.0 * th) / dt
    g11 = 3.0 * th2 - 2.0 * th
    o0 = 3 * (k * H.n_src + j)
    o1 = 3 * ((k + 1) * H.n_src + j)
    for m in range(3):
        x[m] = h00 * H.hx[o0 + m] + h10 * dt * H.hu[o0 + m] + h01 * H.hx[o1 + m] + h11 * dt * H.hu[o1 + m]
        dx[m] = g00 * H.hx[o0 + m] + g10 * H.hu[o0 + m] + g01 * H.hx[o1 + m] + g11 * H.hu[o1 + m]
        v[m] = h00 * H.hv[o0 + m] + h10 * dt * H.ha[o0 + m] + h01 * H.hv[o1 + m] + h11 * dt * H.ha[o1 + m]


cdef inline double _gap(const Hist* H, int j, const double* xi, double t, double c, double s, double* dg) noexcept nogil:
    """g(s) = c (t - s) - |x_i - x_j(s)| and its derivative."""
    cdef double x[3]
    cdef double dx[3]
    cdef double v[3]
    cdef double y0, y1, y2, r
    _state(H, j, s, x, dx, v)
    y0 = xi[0] - x[0]; y1 = xi[1] - x[1]; y2 = xi[2] - x[2]
    r = sqrt(y0 * y0 + y1 * y1 + y2 * y2)
    if r > 0.0:
        dg[0] = -c + (y0 * dx[0] + y1 * dx[1] + y2 * dx[2]) / r
    else:
        dg[0] = -c
    return c * (t - s) - r


cdef int _solve(const Hist* H, int j, const double* xi, double t, double c, double target, double* out) noexcept nogil:
    """Root of g(s) = target on [0, t], clipped to the ends; g is decreasing."""
    cdef double a = 0.0, b = t, s, gs, dg, sn, tol_g, tol_s
    cdef double g0 = _gap(H, j, xi, t, c, 0.0, &dg)
    cdef double gt = _gap(H, j, xi, t, c, t, &dg)
    cdef int it
    if g0 <= target:
        out[0] = 0.0
        return 0
    if gt >= target:
        out[0] = t
        return 0
    tol_g = 1e-13 * (1.0 + c * t)
    tol_s = 1e-15 * (1.0 + t)
    s = a + (b - a) * (g0 - target) / (g0 - gt)
    for it in range(MAX_ITER):
        gs = _gap(H, j, xi, t, c, s, &dg)
        if gs > target:
            a = s
        else:
            b = s
        if fabs(gs - target) <= tol_g or b - a <= tol_s:
            out[0] = s
            return 0
        sn = s - (gs - target) / dg if dg != 0.0 else 0.5 * (a + b)
        if not (sn > a and sn < b):
            sn = 0.5 * (a + b)
        s = sn
    out[0] = s
    return 1


cdef inline double _fmax3(double a, double b, double d) noexcept nogil:
    if b > a:
        a = b
    if d > a:
        a = d
    return a


cdef inline void _cross(const double* a, const double* b, double* out) noexcept nogil:
    out[0] = a[1] * b[2] - a[2] * b[1]
    out[1] = a[2] * b[0] - a[0] * b[2]
    out[2] = a[0] * b[1] - a[1] * b[0]


cdef int _pair(const Kern* K, const Hist* H, int j, const double* xi, double t,
               const double* nodes, const double* weights, const long* offsets, int n_levels,
               double rtol, double floor_f, double* F1, double* G) noexcept nogil:
    """Single (i, j) retarded integrals: F1 (signed) and G = int vhat_j x grad Y ds."""
    cdef double c = K.c, w2 = 2.0 * K.w, s_lo, s_hi, mid, half, s, tau, r, inv_r, dtau, dr, gam
    cdef double x[3]
    cdef double dx[3]
    cdef double v[3]
    cdef double y[3]
    cdef double vh[3]
    cdef double grad[3]
    cdef double cr[3]
    cdef double f[3]
    cdef double g[3]
    cdef double pf[3]
    cdef double pg[3]
    cdef double dg, g0, err, mag
    cdef int lev, n, m, status = 0
    cdef long o
    F1[0] = 0.0; F1[1] = 0.0; F1[2] = 0.0
    G[0] = 0.0; G[1] = 0.0; G[2] = 0.0
    if t <= 0.0:
        return 0
    g0 = _gap(H, j, xi, t, c, 0.0, &dg)
    if g0 < -w2:
        return 0
    status |= _solve(H, j, xi, t, c, w2, &s_lo)
    status |= _solve(H, j, xi, t, c, -w2, &s_hi)
    if s_hi <= s_lo:
        return status
    mid = 0.5 * (s_hi + s_lo)
    half = 0.5 * (s_hi - s_lo)
    for lev in range(n_levels):
        f[0] = 0.0; f[1] = 0.0; f[2] = 0.0
        g[0] = 0.0; g[1] = 0.0; g[2] = 0.0
        for n in range(offsets[lev], offsets[lev + 1]):
            s = mid + half * nodes[n]
            tau = t - s
            _state(H, j, s, x, dx, v)
            y[0] = xi[0] - x[0]; y[1] = xi[1] - x[1]; y[2] = xi[2] - x[2]
            r = sqrt(y[0] * y[0] + y[1] * y[1] + y[2] * y[2])
            _wave(K, tau, r, &dtau, &dr)
            if dtau == 0.0 and dr == 0.0:
                continue
            gam = 1.0 / sqrt(1.0 + (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]) / (c * c))
            inv_r = 1.0 / r if r > 0.0 else 0.0
            for m in range(3):
                vh[m] = v[m] * gam
                grad[m] = dr * y[m] * inv_r
            _cross(vh, grad, cr)
            for m in range(3):
                f[m] -= weights[n] * (vh[m] * dtau + c * c * grad[m])
                g[m] += weights[n] * cr[m]
        for m in range(3):
            f[m] *= half
            g[m] *= half
        if lev > 0:
            err = 0.0
            mag = 0.0
            for m in range(3):
                err = _fmax3(err, fabs(f[m] - pf[m]), c * fabs(g[m] - pg[m]))
                mag = _fmax3(mag, fabs(f[m]), c * fabs(g[m]))
            if err <= rtol * mag + floor_f:
                break
        for m in range(3):
            pf[m] = f[m]
            pg[m] = g[m]
    else:
        status |= 2
    for m in range(3):
        F1[m] = f[m]
        G[m] = g[m]
    return status


def pair_forces_rows(double[:, ::1] obs_x, double[:, ::1] obs_u,
                     double[:, :, ::1] hx, double[:, :, ::1] hu, double[:, :, ::1] hv, double[:, :, ::1] ha,
                     int n_rec, double dt, double t,
                     double[:, ::1] qcoef, double[:, ::1] pcoef, double h, double phi_inf,
                     double width, double light_speed,
                     double[::1] nodes, double[::1] weights, long[::1] offsets,
                     double rtol, double floor_f, bint skip_self,
                     int row_start, int row_end,
                     double[:, ::1] out_f1, double[:, ::1] out_f2, int[::1] out_status):
    """Summed retarded forces on observers ``row_start:row_end``.

    ``out_f1[i]`` and ``out_f2[i]`` receive the sums over sources j of the
    signed single-pair integrals (no 1/(N-1) factor); sources are summed in
    increasing j so the result is independent of how rows are split.
    """
    cdef Kern K
    cdef Hist H
    cdef int i, j, m, st
    cdef double F1[3]
    cdef double G[3]
    cdef double sf[3]
    cdef double sg[3]
    cdef double ui[3]
    cdef double cr[3]
    cdef double xi[3]
    cdef int n_levels = offsets.shape[0] - 1
    K.qc = &qcoef[0, 0]
    K.pc = &pcoef[0, 0]
    K.K = qcoef.shape[0]
    K.h = h
    K.phi_inf = phi_inf
    K.w = width
    K.c = light_speed
    H.hx = &hx[0, 0, 0]
    H.hu = &hu[0, 0, 0]
    H.hv = &hv[0, 0, 0]
    H.ha = &ha[0, 0, 0]
    H.n_rec = n_rec
    H.n_src = hx.shape[1]
    H.dt = dt
    with nogil:
        for i in range(row_start, row_end):
            for m in range(3):
                xi[m] = obs_x[i, m]
                ui[m] = obs_u[i, m]
                sf[m] = 0.0
                sg[m] = 0.0
            st = 0
            for j in range(H.n_src):
                if skip_self and j == i:
                    continue
                st |= _pair(&K, &H, j, xi, t, &nodes[0], &weights[0], &offsets[0], n_levels,
                            rtol, floor_f, F1, G)
                for m in range(3):
                    sf[m] += F1[m]
                    sg[m] += G[m]
            _cross(ui, sg, cr)
            for m in range(3):
                out_f1[i, m] = sf[m]
                out_f2[i, m] = -cr[m]
            out_status[i] = st


def single_pair(double[::1] xi_in, double[:, :, ::1] hx, double[:, :, ::1] hu, double[:, :, ::1] hv,
                double[:, :, ::1] ha, int n_rec, double dt, double t, int j,
                double[:, ::1] qcoef, double[:, ::1] pcoef, double h, double phi_inf,
                double width, double light_speed,
                double[::1] nodes, double[::1] weights, long[::1] offsets, double rtol, double floor_f):
    """F1 and G integrals for one pair; returns (F1, G, status)."""
    cdef Kern K
    cdef Hist H
    cdef double F1[3]
    cdef double G[3]
    cdef int st
    K.qc = &qcoef[0, 0]
    K.pc = &pcoef[0, 0]
    K.K = qcoef.shape[0]
    K.h = h
    K.phi_inf = phi_inf
    K.w = width
    K.c = light_speed
    H.hx = &hx[0, 0, 0]
    H.hu = &hu[0, 0, 0]
    H.hv = &hv[0, 0, 0]
    H.ha = &ha[0, 0, 0]
    H.n_rec = n_rec
    H.n_src = hx.shape[1]
    H.dt = dt
    st = _pair(&K, &H, j, &xi_in[0], t, &nodes[0], &weights[0], &offsets[0], offsets.shape[0] - 1,
               rtol, floor_f, F1, G)
    return np.array([F1[0], F1[1], F1[2]]), np.array([G[0], G[1], G[2]]), st


def retarded_root(double[::1] xi_in, double[:, :, ::1] hx, double[:, :, ::1] hu, double[:, :, ::1] hv,
                  double[:, :, ::1] ha, int n_rec, double dt, double t, int j, double c, double target):
    """Solve c (t - s) - |x_i - x_j(s)| = target on [0, t]; returns (s, status)."""
    cdef Hist H
    cdef double s
    cdef int st
    H.hx = &hx[0, 0, 0]
    H.hu = &hu[0, 0, 0]
    H.hv = &hv[0, 0, 0]
    H.ha = &ha[0, 0, 0]
    H.n_rec = n_rec
    H.n_src = hx.shape[1]
    H.dt = dt
    st = _solve(&H, j, &xi_in[0], t, c, target, &s)
    return s, st
