# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled batch integrator for the built-in field kinds.

Same Dormand-Prince 5(4) scheme and step control as ``_batch_py``; each
sample is integrated independently with the GIL released.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport cos, sin, sqrt, fabs, pow, atan2, INFINITY

cnp.import_array()

cdef enum:
    MAXD = 3
    KIND_POLY_COS = 1
    KIND_POLAR = 2

cdef double SAFETY = 0.9
cdef double MIN_FACTOR = 0.2
cdef double MAX_FACTOR = 10.0
cdef double ERR_EXP = -0.2
cdef double EPS = 2.220446049250313e-16

cdef double A21 = 1.0 / 5
cdef double A31 = 3.0 / 40, A32 = 9.0 / 40
cdef double A41 = 44.0 / 45, A42 = -56.0 / 15, A43 = 32.0 / 9
cdef double A51 = 19372.0 / 6561, A52 = -25360.0 / 2187, A53 = 64448.0 / 6561, A54 = -212.0 / 729
cdef double A61 = 9017.0 / 3168, A62 = -355.0 / 33, A63 = 46732.0 / 5247, A64 = 49.0 / 176, A65 = -5103.0 / 18656
cdef double B1 = 35.0 / 384, B3 = 500.0 / 1113, B4 = 125.0 / 192, B5 = -2187.0 / 6784, B6 = 11.0 / 84
cdef double E1 = -71.0 / 57600, E3 = 71.0 / 16695, E4 = -71.0 / 1920, E5 = 17253.0 / 339200, E6 = -22.0 / 525, E7 = 1.0 / 40

cdef double P[7][4]
P[0][:] = [1.0, -8048581381.0 / 2820520608, 8663915743.0 / 2820520608, -12715105075.0 / 11282082432]
P[1][:] = [0.0, 0.0, 0.0, 0.0]
P[2][:] = [0.0, 131558114200.0 / 32700410799, -68118460800.0 / 10900136933, 87487479700.0 / 32700410799]
P[3][:] = [0.0, -1754552775.0 / 470086768, 14199869525.0 / 1410260304, -10690763975.0 / 1880347072]
P[4][:] = [0.0, 127303824393.0 / 49829197408, -318862633887.0 / 49829197408, 701980252875.0 / 199316789632]
P[5][:] = [0.0, -282668133.0 / 205662961, 2019193451.0 / 616988883, -1453857185.0 / 822651844]
P[6][:] = [0.0, 40617522.0 / 29380423, -110615467.0 / 29380423, 69997945.0 / 29380423]


cdef inline void rhs(int kind, const double* p, const double* y, double* out) noexcept nogil:
    cdef double x, X, Y, r2, r, th, thdot, rad
    if kind == KIND_POLY_COS:
        # p = scale, c0, c1, c2, c3, a, b
        x = y[0]
        out[0] = p[0] * (p[1] + x * (p[2] + x * (p[3] + x * p[4])) + p[5] * cos(p[6] * x))
    else:
        # p = scale, kappa, omega, beta, eps_t, k, cx, cy
        X = y[0] - p[6]
        Y = y[1] - p[7]
        r2 = X * X + Y * Y
        r = sqrt(r2)
        thdot = p[2] * (1.0 + p[3] * (r - 1.0))
        if p[4] != 0.0:
            th = atan2(Y, X)
            thdot = thdot - p[4] * sin(p[5] * th)
        rad = p[1] * (1.0 - r2)
        out[0] = p[0] * (rad * X - thdot * Y)
        out[1] = p[0] * (rad * Y + thdot * X)


cdef inline double rms_norm(int d, const double* v, const double* y0, const double* y1,
                            double rtol, double atol) noexcept nogil:
    cdef double s = 0.0, sc, a, b
    cdef int j
    for j in range(d):
        a = fabs(y0[j])
        b = fabs(y1[j])
        sc = atol + rtol * (a if a > b else b)
        s += (v[j] / sc) * (v[j] / sc)
    return sqrt(s / d)


cdef double initial_step(int kind, const double* p, int d, const double* y0, const double* f0,
                         double rtol, double atol, double hmax) noexcept nogil:
    cdef double d0 = 0.0, d1 = 0.0, d2 = 0.0, sc, h0, h1, dm
    cdef double y1[MAXD]
    cdef double f1[MAXD]
    cdef int j
    for j in range(d):
        sc = atol + fabs(y0[j]) * rtol
        d0 += (y0[j] / sc) ** 2
        d1 += (f0[j] / sc) ** 2
    d0 = sqrt(d0 / d)
    d1 = sqrt(d1 / d)
    if d0 < 1e-5 or d1 < 1e-5:
        h0 = 1e-6
    else:
        h0 = 0.01 * d0 / d1
    if h0 > hmax:
        h0 = hmax
    for j in range(d):
        y1[j] = y0[j] + h0 * f0[j]
    rhs(kind, p, y1, f1)
    for j in range(d):
        sc = atol + fabs(y0[j]) * rtol
        d2 += ((f1[j] - f0[j]) / sc) ** 2
    d2 = sqrt(d2 / d) / h0
    if d1 <= 1e-15 and d2 <= 1e-15:
        h1 = h0 * 1e-3
        if h1 < 1e-6:
            h1 = 1e-6
    else:
        dm = d1 if d1 > d2 else d2
        h1 = pow(0.01 / dm, 0.2)
    if 100 * h0 < h1:
        h1 = 100 * h0
    return h1 if h1 < hmax else hmax


cdef int integrate_one(int kind, const double* p, int d, double* y, double* h_io,
                       const double* grid, int m, double* out,
                       double rtol, double atol, double hmax,
                       const double* lo, const double* hi, long* nfev) noexcept nogil:
    """Integrate one sample; ``out`` is its (m, d) row-major block."""
    cdef double K[7][MAXD]
    cdef double ytmp[MAXD]
    cdef double ynew[MAXD]
    cdef double err[MAXD]
    cdef double Q[MAXD][4]
    cdef double t = grid[0], t_end = grid[m - 1], t_new
    cdef double h = h_io[0], h_use, ha, en, fac, min_step, theta, th2, hn
    cdef int j, s, slot = 1, status = 0, last, clean = 1, outside
    for j in range(d):
        out[j] = y[j]
    if m <= 1:
        return 0
    rhs(kind, p, y, K[0])
    nfev[0] += 1
    if not (h > 0):
        h = initial_step(kind, p, d, y, K[0], rtol, atol, hmax)
        nfev[0] += 1
    while True:
        ha = h if h < hmax else hmax
        min_step = 10 * EPS * (fabs(t) if fabs(t) > 1.0 else 1.0)
        if ha < min_step:
            status = 2
            break
        last = ha >= t_end - t
        h_use = t_end - t if last else ha
        for j in range(d):
            ytmp[j] = y[j] + h_use * A21 * K[0][j]
        rhs(kind, p, ytmp, K[1])
        for j in range(d):
            ytmp[j] = y[j] + h_use * (A31 * K[0][j] + A32 * K[1][j])
        rhs(kind, p, ytmp, K[2])
        for j in range(d):
            ytmp[j] = y[j] + h_use * (A41 * K[0][j] + A42 * K[1][j] + A43 * K[2][j])
        rhs(kind, p, ytmp, K[3])
        for j in range(d):
            ytmp[j] = y[j] + h_use * (A51 * K[0][j] + A52 * K[1][j] + A53 * K[2][j] + A54 * K[3][j])
        rhs(kind, p, ytmp, K[4])
        for j in range(d):
            ytmp[j] = y[j] + h_use * (A61 * K[0][j] + A62 * K[1][j] + A63 * K[2][j]
                                      + A64 * K[3][j] + A65 * K[4][j])
        rhs(kind, p, ytmp, K[5])
        for j in range(d):
            ynew[j] = y[j] + h_use * (B1 * K[0][j] + B3 * K[2][j] + B4 * K[3][j]
                                      + B5 * K[4][j] + B6 * K[5][j])
        rhs(kind, p, ynew, K[6])
        nfev[0] += 6
        for j in range(d):
            err[j] = h_use * (E1 * K[0][j] + E3 * K[2][j] + E4 * K[3][j] + E5 * K[4][j]
                              + E6 * K[5][j] + E7 * K[6][j])
        en = rms_norm(d, err, y, ynew, rtol, atol)
        if en > 1.0:
            fac = SAFETY * pow(en, ERR_EXP)
            if fac < MIN_FACTOR:
                fac = MIN_FACTOR
            h = h_use * fac
            clean = 0
            continue
        if en == 0.0:
            fac = MAX_FACTOR
        else:
            fac = SAFETY * pow(en, ERR_EXP)
            if fac > MAX_FACTOR:
                fac = MAX_FACTOR
        hn = h_use * fac
        if last and clean and ha > hn:
            hn = ha
        t_new = t_end if last else t + h_use
        # dense output on grid points in (t, t_new]
        if last or (slot < m and grid[slot] <= t_new):
            for j in range(d):
                for s in range(4):
                    Q[j][s] = (K[0][j] * P[0][s] + K[2][j] * P[2][s] + K[3][j] * P[3][s]
                               + K[4][j] * P[4][s] + K[5][j] * P[5][s] + K[6][j] * P[6][s])
            while slot < m and (grid[slot] <= t_new or last):
                if last and slot == m - 1:
                    for j in range(d):
                        out[slot * d + j] = ynew[j]
                else:
                    theta = (grid[slot] - t) / h_use
                    th2 = theta * theta
                    for j in range(d):
                        out[slot * d + j] = y[j] + h_use * (
                            theta * Q[j][0] + th2 * Q[j][1] + th2 * theta * Q[j][2]
                            + th2 * th2 * Q[j][3])
                slot += 1
        t = t_new
        for j in range(d):
            y[j] = ynew[j]
            K[0][j] = K[6][j]
        h = hn
        clean = 1
        outside = 0
        for j in range(d):
            if ynew[j] < lo[j] or ynew[j] > hi[j]:
                outside = 1
        if outside:
            status = 1
            break
        if last:
            break
    while slot < m:
        for j in range(d):
            out[slot * d + j] = y[j]
        slot += 1
    h_io[0] = h
    return status


def integrate_grid(int kind, params, x0s, t_grid, double rtol, double atol, double hmax,
                   lo=None, hi=None, h0=None):
    """Compiled counterpart of ``_batch_py.integrate_grid`` for native kinds."""
    cdef cnp.ndarray[cnp.float64_t, ndim=2] y = np.array(x0s, dtype=np.float64, order="C", copy=True)
    cdef Py_ssize_t n = y.shape[0]
    cdef int d = y.shape[1]
    if d > MAXD:
        raise ValueError("dimension too large for the compiled kernel")
    if kind == KIND_POLY_COS and d != 1 or kind == KIND_POLAR and d != 2:
        raise ValueError("field kind does not match the state dimension")
    if kind != KIND_POLY_COS and kind != KIND_POLAR:
        raise ValueError(f"unknown native kind {kind}")
    cdef cnp.ndarray[cnp.float64_t, ndim=1] p = np.ascontiguousarray(params, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] grid = np.ascontiguousarray(t_grid, dtype=np.float64)
    cdef int m = grid.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] lo_a = (np.full(d, -np.inf) if lo is None
                                                     else np.ascontiguousarray(lo, dtype=np.float64))
    cdef cnp.ndarray[cnp.float64_t, ndim=1] hi_a = (np.full(d, np.inf) if hi is None
                                                     else np.ascontiguousarray(hi, dtype=np.float64))
    cdef cnp.ndarray[cnp.float64_t, ndim=1] h = (np.zeros(n) if h0 is None
                                                  else np.array(h0, dtype=np.float64, copy=True))
    cdef cnp.ndarray[cnp.float64_t, ndim=3] out = np.empty((n, m, d))
    cdef cnp.ndarray[cnp.int8_t, ndim=1] status = np.zeros(n, dtype=np.int8)
    cdef long nfev = 0
    cdef Py_ssize_t i
    with nogil:
        for i in range(n):
            status[i] = integrate_one(kind, &p[0], d, &y[i, 0], &h[i], &grid[0], m,
                                      &out[i, 0, 0], rtol, atol, hmax, &lo_a[0], &hi_a[0], &nfev)
    return out, h, status, nfev
