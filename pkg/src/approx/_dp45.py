"""Dormand-Prince 5(4) tableau, single-trajectory stepping and dense output.

The compiled batch kernel (``_batch_c.pyx``) uses the same coefficients; keep
them in sync.
"""

from __future__ import annotations

import numpy as np

C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
A = [
    np.array([]),
    np.array([1 / 5]),
    np.array([3 / 40, 9 / 40]),
    np.array([44 / 45, -56 / 15, 32 / 9]),
    np.array([19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729]),
    np.array([9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656]),
    np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84]),
]
B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
E = np.array([-71 / 57600, 0.0, 71 / 16695, -71 / 1920, 17253 / 339200, -22 / 525, 1 / 40])

# Continuous extension of order 4 (Shampine / Hairer): y(t + th*h) =
# y + h * K^T @ P @ [th, th^2, th^3, th^4].
P = np.array([
    [1.0, -8048581381 / 2820520608, 8663915743 / 2820520608, -12715105075 / 11282082432],
    [0.0, 0.0, 0.0, 0.0],
    [0.0, 131558114200 / 32700410799, -68118460800 / 10900136933, 87487479700 / 32700410799],
    [0.0, -1754552775 / 470086768, 14199869525 / 1410260304, -10690763975 / 1880347072],
    [0.0, 127303824393 / 49829197408, -318862633887 / 49829197408, 701980252875 / 199316789632],
    [0.0, -282668133 / 205662961, 2019193451 / 616988883, -1453857185 / 822651844],
    [0.0, 40617522 / 29380423, -110615467 / 29380423, 69997945 / 29380423],
])

SAFETY = 0.9
MIN_FACTOR = 0.2
MAX_FACTOR = 10.0
ERR_EXP = -1.0 / 5.0
EPS = np.finfo(float).eps


class StiffOrSingularError(RuntimeError):
    """Step size fell below the resolvable limit.

    ``t_last`` is the last time at which a valid state was accepted.
    """

    def __init__(self, t_last: float, message: str | None = None):
        self.t_last = float(t_last)
        super().__init__(message or f"step size underflow (stiff or singular) at t={t_last:.6g}")


def rk_step(rhs, t, y, f0, h):
    """One Dormand-Prince step. Returns (y_new, f_new, K, err_vec)."""
    K = np.empty((7, y.size))
    K[0] = f0
    for s in range(1, 6):
        dy = h * (A[s] @ K[:s])
        K[s] = rhs(t + C[s] * h, y + dy)
    y_new = y + h * (A[6] @ K[:6])
    f_new = rhs(t + h, y_new)
    K[6] = f_new
    err = h * (E @ K)
    return y_new, f_new, K, err


def error_norm(err, y, y_new, rtol, atol):
    scale = atol + rtol * np.maximum(np.abs(y), np.abs(y_new))
    return float(np.sqrt(np.mean((err / scale) ** 2)))


def initial_step(rhs, t0, y0, f0, direction, rtol, atol, max_step):
    """Hairer-Norsett-Wanner starting step heuristic (order 5)."""
    scale = atol + np.abs(y0) * rtol
    d0 = np.sqrt(np.mean((y0 / scale) ** 2))
    d1 = np.sqrt(np.mean((f0 / scale) ** 2))
    h0 = 1e-6 if (d0 < 1e-5 or d1 < 1e-5) else 0.01 * d0 / d1
    h0 = min(h0, max_step)
    y1 = y0 + direction * h0 * f0
    f1 = rhs(t0 + direction * h0, y1)
    d2 = np.sqrt(np.mean(((f1 - f0) / scale) ** 2)) / h0
    if d1 <= 1e-15 and d2 <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** (1 / 5)
    return min(100 * h0, h1, max_step)


def dense_coeffs(K):
    """Per-step interpolation matrix Q with y(th) = y + h * Q @ [th..th^4]."""
    return K.T @ P


def dense_eval(y, h, Q, theta):
    theta = np.asarray(theta, dtype=float)
    pw = np.stack([theta, theta**2, theta**3, theta**4], axis=-1)
    return y + h * (pw @ Q.T)


DEFECT_WEIGHTS = np.array([1.0, 1.0, 0.75, 0.5])  # d/dth [th..th^4] at th = 1/2


def midpoint_defect(rhs, t, y, h, K):
    """Residual ``u'(t + h/2) - f(u(t + h/2))`` of the dense interpolant ``u``."""
    Q = dense_coeffs(K)
    y_mid = y + h * (Q @ np.array([0.5, 0.25, 0.125, 0.0625]))
    return Q @ DEFECT_WEIGHTS - rhs(t + 0.5 * h, y_mid)


def iter_steps(rhs, t0, y0, t1, rtol, atol, max_step=np.inf, first_step=None,
               max_steps=1_000_000, stats=None, defect=False):
    """Yield accepted steps ``(t, y, f, h, t_new, y_new, f_new, K)`` from ``t0`` towards ``t1``.

    ``h`` is signed.  The last step lands exactly on ``t1``.  ``stats`` (a
    dict) receives the running function-evaluation count and next step size.
    With ``defect=True`` a step is accepted only if, in addition, the dense
    interpolant's ODE residual at the step midpoint is within tolerance
    (one extra evaluation per step; the residual scales like h^4).
    """
    y = np.array(y0, dtype=float).ravel()
    direction = 1.0 if t1 >= t0 else -1.0
    t = float(t0)
    f = np.asarray(rhs(t, y), dtype=float)
    nfev = 1
    if stats is None:
        stats = {}
    stats["nfev"] = nfev
    if t1 == t0:
        return
    if first_step is None:
        h = initial_step(rhs, t, y, f, direction, rtol, atol, max_step)
        nfev += 1
    else:
        h = min(abs(first_step), max_step)
    for _ in range(max_steps):
        remaining = abs(t1 - t)
        if remaining <= 0.0:
            return
        min_step = 10 * EPS * max(abs(t), 1.0)
        h = min(h, max_step)
        if h < min_step:
            raise StiffOrSingularError(t)
        last = h >= remaining
        if last:
            h = remaining
        while True:
            y_new, f_new, K, err = rk_step(rhs, t, y, f, direction * h)
            nfev += 6
            en = error_norm(err, y, y_new, rtol, atol)
            fac_d = MAX_FACTOR
            if en <= 1.0 and defect:
                dn = error_norm(midpoint_defect(rhs, t, y, direction * h, K), y, y_new, rtol, atol)
                nfev += 1
                if dn > 0.0:
                    fac_d = SAFETY * dn**-0.25
                if dn > 1.0:
                    en = 2.0  # reject; shrink by the defect-based factor below
            if en <= 1.0:
                fac = MAX_FACTOR if en == 0.0 else min(MAX_FACTOR, SAFETY * en**ERR_EXP)
                fac = min(fac, fac_d)
                break
            fac = max(MIN_FACTOR, min(SAFETY * en**ERR_EXP, fac_d))
            h *= fac
            last = False
            if h < min_step:
                raise StiffOrSingularError(t)
        stats["nfev"] = nfev
        stats["last_step"] = h * fac
        t_new = t1 if last else t + direction * h
        yield t, y, f, direction * h, t_new, y_new, f_new, K
        t, y, f = t_new, y_new, f_new
        h *= fac
    raise StiffOrSingularError(t, f"exceeded {max_steps} steps at t={t:.6g}")


def solve(rhs, t0, y0, t1, rtol, atol, max_step=np.inf, first_step=None,
          lower=None, upper=None, max_steps=1_000_000, defect=False):
    """Integrate ``y' = rhs(t, y)`` from ``t0`` to ``t1`` (either direction).

    Returns a dict with the accepted step times, states, dense coefficients,
    a status string ("ok" or "escaped") and the function-evaluation count.
    Integration stops after the first accepted step whose end state leaves
    the box ``[lower, upper]``.
    """
    y0 = np.array(y0, dtype=float).ravel()
    ts, ys, qs = [float(t0)], [y0.copy()], []
    status = "ok"
    stats = {}
    for _, _, _, _, t_new, y_new, _, K in iter_steps(rhs, t0, y0, t1, rtol, atol, max_step,
                                                     first_step, max_steps, stats, defect):
        qs.append(dense_coeffs(K))
        ts.append(t_new)
        ys.append(y_new.copy())
        if lower is not None and (np.any(y_new < lower) or np.any(y_new > upper)):
            status = "escaped"
            break
    q = np.array(qs) if qs else np.empty((0, y0.size, 4))
    return dict(t=np.array(ts), y=np.array(ys), q=q, status=status,
                nfev=stats.get("nfev", 1), last_step=stats.get("last_step"))
