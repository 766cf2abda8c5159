"""Pure-numpy batch integrator: many independent trajectories in lockstep.

Each sample keeps its own time, step size and status, so results for one
sample never depend on which other samples share the batch.  The compiled
kernel in ``_batch_c.pyx`` implements the same algorithm one sample at a
time.
"""

from __future__ import annotations

import numpy as np

from ._dp45 import A, E, EPS, ERR_EXP, MAX_FACTOR, MIN_FACTOR, P, SAFETY

OK, ESCAPED, UNDERFLOW = 0, 1, 2


def _initial_steps(f_eval, y0, f0, rtol, atol, hmax):
    scale = atol + np.abs(y0) * rtol
    d0 = np.sqrt(np.mean((y0 / scale) ** 2, axis=1))
    d1 = np.sqrt(np.mean((f0 / scale) ** 2, axis=1))
    small = (d0 < 1e-5) | (d1 < 1e-5)
    h0 = np.where(small, 1e-6, 0.01 * d0 / np.where(small, 1.0, d1))
    h0 = np.minimum(h0, hmax)
    f1 = f_eval(y0 + h0[:, None] * f0)
    d2 = np.sqrt(np.mean(((f1 - f0) / scale) ** 2, axis=1)) / h0
    dm = np.maximum(d1, d2)
    flat = (d1 <= 1e-15) & (d2 <= 1e-15)
    h1 = np.where(flat, np.maximum(1e-6, h0 * 1e-3), (0.01 / np.where(flat, 1.0, dm)) ** 0.2)
    return np.minimum(np.minimum(100 * h0, h1), hmax)


def integrate_grid(f_eval, x0s, t_grid, rtol, atol, hmax, lo, hi, h0=None):
    """Integrate ``x' = f_eval(x)`` for every row of ``x0s`` and sample the
    dense output on ``t_grid`` (``t_grid[0]`` is the start time).

    Returns ``(out, h_last, status, nfev)`` with ``out`` of shape
    ``(n, len(t_grid), d)``; status is 0 (ok), 1 (left the box) or
    2 (step-size underflow).  After an early stop the remaining grid slots
    hold the last accepted state.
    """
    y = np.array(x0s, dtype=float, copy=True)
    n, d = y.shape
    lo = np.full(d, -np.inf) if lo is None else np.asarray(lo, dtype=float)
    hi = np.full(d, np.inf) if hi is None else np.asarray(hi, dtype=float)
    grid = np.asarray(t_grid, dtype=float)
    m = grid.size
    t_end = grid[-1]
    out = np.empty((n, m, d))
    out[:, 0] = y
    status = np.zeros(n, dtype=np.int8)
    nfev = 0
    f = f_eval(y)
    nfev += n
    if h0 is None:
        h = _initial_steps(f_eval, y, f, rtol, atol, hmax)
        nfev += n
    else:
        h = np.minimum(np.abs(np.asarray(h0, dtype=float)), hmax).copy()
        bad = ~(h > 0)
        if np.any(bad):
            h[bad] = _initial_steps(f_eval, y[bad], f[bad], rtol, atol, hmax)
    t = np.full(n, grid[0])
    filled = np.ones(n, dtype=np.int64)  # next grid slot to fill
    clean = np.ones(n, dtype=bool)  # no rejection in the current step attempt
    active = np.ones(n, dtype=bool) if m > 1 else np.zeros(n, dtype=bool)

    while np.any(active):
        idx = np.nonzero(active)[0]
        ta, ya, fa = t[idx], y[idx], f[idx]
        min_step = 10 * EPS * np.maximum(np.abs(ta), 1.0)
        ha = np.minimum(h[idx], hmax)
        under = ha < min_step
        if np.any(under):
            status[idx[under]] = UNDERFLOW
            active[idx[under]] = False
            keep = ~under
            idx, ta, ya, fa, ha, min_step = idx[keep], ta[keep], ya[keep], fa[keep], ha[keep], min_step[keep]
            if idx.size == 0:
                continue
        remaining = t_end - ta
        last = ha >= remaining
        h_use = np.where(last, remaining, ha)

        K = np.empty((7, idx.size, d))
        K[0] = fa
        for s in range(1, 6):
            K[s] = f_eval(ya + h_use[:, None] * np.tensordot(A[s], K[:s], axes=(0, 0)))
        y_new = ya + h_use[:, None] * np.tensordot(A[6], K[:6], axes=(0, 0))
        f_new = f_eval(y_new)
        K[6] = f_new
        nfev += 6 * idx.size
        err = h_use[:, None] * np.tensordot(E, K, axes=(0, 0))
        scale = atol + rtol * np.maximum(np.abs(ya), np.abs(y_new))
        en = np.sqrt(np.mean((err / scale) ** 2, axis=1))
        acc = en <= 1.0

        # rejected samples: shrink and retry next sweep
        rej = ~acc
        if np.any(rej):
            ri = idx[rej]
            with np.errstate(divide="ignore"):
                fac = np.maximum(MIN_FACTOR, SAFETY * en[rej] ** ERR_EXP)
            h[ri] = h_use[rej] * fac
            clean[ri] = False
        if not np.any(acc):
            continue

        ai = idx[acc]
        hu = h_use[acc]
        t_old = ta[acc]
        y_old = ya[acc]
        y_acc = y_new[acc]
        lst = last[acc]
        t_new = np.where(lst, t_end, t_old + hu)
        with np.errstate(divide="ignore"):
            fac = np.where(en[acc] == 0.0, MAX_FACTOR,
                           np.minimum(MAX_FACTOR, SAFETY * en[acc] ** ERR_EXP))
        h_next = hu * fac
        # a step truncated to hit the chunk end should not shrink the next one
        keep_req = lst & clean[ai]
        h_next = np.where(keep_req, np.maximum(h_next, ha[acc]), h_next)

        # sample dense output at grid points in (t_old, t_new]
        hi_slot = np.where(lst, m, np.searchsorted(grid, t_new, side="right"))
        lo_slot = filled[ai]
        cnt = np.maximum(hi_slot - lo_slot, 0)
        if np.any(cnt):
            Q = np.einsum("snd,sk->ndk", K[:, acc], P)
            rows = np.repeat(np.arange(ai.size), cnt)
            offs = np.arange(cnt.sum()) - np.repeat(np.cumsum(cnt) - cnt, cnt)
            slots = np.repeat(lo_slot, cnt) + offs
            theta = (grid[slots] - t_old[rows]) / hu[rows]
            pw = np.stack([theta, theta**2, theta**3, theta**4], axis=-1)
            vals = y_old[rows] + hu[rows, None] * np.einsum("rk,rdk->rd", pw, Q[rows])
            out[ai[rows], slots] = vals
        # the final slot of a finished sample is the accepted state itself
        fin = ai[lst]
        if fin.size:
            out[fin, m - 1] = y_acc[lst]
        filled[ai] = np.maximum(lo_slot, hi_slot)

        t[ai] = t_new
        y[ai] = y_acc
        f[ai] = f_new[acc]
        h[ai] = h_next
        clean[ai] = True
        active[fin] = False

        outside = np.any((y_acc < lo) | (y_acc > hi), axis=1)
        status[ai[outside]] = ESCAPED
        active[ai[outside]] = False
    # samples stopped early keep their last state in the unfilled slots
    for j in np.nonzero(filled < m)[0]:
        out[j, filled[j]:] = y[j]
    return out, h, status, nfev
