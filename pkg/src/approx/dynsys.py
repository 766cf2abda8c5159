"""Vector fields, ODE integration with dense output, and flow comparisons."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import _dp45
from ._dp45 import StiffOrSingularError
from .sampling import low_discrepancy

__all__ = [
    "VectorField", "FunctionField", "ScaledField", "SumField", "Domain",
    "IntegratorConfig", "ORACLE", "SWEEP", "Trajectory", "StiffOrSingularError",
    "integrate", "flow_at", "sup_trajectory_distance", "c1_distance_estimate",
    "check_inward_pointing", "fd_jacobian",
]


def fd_jacobian(func, x, dim):
    """Central-difference Jacobian of ``func`` at points ``x`` (shape (..., dim))."""
    x = np.asarray(x, dtype=float)
    h = np.sqrt(_dp45.EPS) * (1.0 + np.abs(x))
    cols = []
    for i in range(dim):
        e = np.zeros(dim)
        e[i] = 1.0
        hi = h[..., i:i + 1]
        cols.append((func(x + hi * e) - func(x - hi * e)) / (2.0 * hi))
    return np.stack(cols, axis=-1)


class VectorField:
    """Autonomous C^1 vector field on R^dim.

    Subclasses implement :meth:`eval` for arrays of shape ``(..., dim)``.
    :meth:`jacobian` falls back to central finite differences; override it
    when an analytic form is available.  ``native`` optionally describes the
    field in a form the compiled batch kernel understands (see
    :mod:`approx.kernels`).
    """

    dim: int = 1
    native = None

    def eval(self, x):
        raise NotImplementedError

    def __call__(self, x):
        return self.eval(np.asarray(x, dtype=float))

    def jacobian(self, x):
        return fd_jacobian(self.eval, x, self.dim)

    def rhs(self, t, y):
        return self.eval(y)


class FunctionField(VectorField):
    """Field defined by plain callables (vectorized over leading axes)."""

    def __init__(self, dim, func, jac=None, name="function"):
        self.dim = int(dim)
        self._func = func
        self._jac = jac
        self.name = name

    def eval(self, x):
        return np.asarray(self._func(x), dtype=float)

    def jacobian(self, x):
        if self._jac is None:
            return super().jacobian(x)
        return np.asarray(self._jac(np.asarray(x, dtype=float)), dtype=float)


class ScaledField(VectorField):
    """``c * base``."""

    def __init__(self, base: VectorField, c: float):
        self.base = base
        self.c = float(c)
        self.dim = base.dim
        if base.native is not None:
            kind, params = base.native
            from .kernels import scale_native
            self.native = scale_native(kind, params, self.c)

    def eval(self, x):
        return self.c * self.base.eval(x)

    def jacobian(self, x):
        return self.c * self.base.jacobian(x)


class SumField(VectorField):
    """``sum_i w_i * f_i`` for a list of fields of equal dimension."""

    def __init__(self, fields, weights):
        self.fields = list(fields)
        self.weights = [float(w) for w in weights]
        if len(self.fields) != len(self.weights):
            raise ValueError("fields and weights must have equal length")
        dims = {f.dim for f in self.fields}
        if len(dims) != 1:
            raise ValueError(f"dimension mismatch: {sorted(dims)}")
        self.dim = dims.pop()
        from .kernels import sum_native
        self.native = sum_native([f.native for f in self.fields], self.weights)

    def eval(self, x):
        out = self.weights[0] * self.fields[0].eval(x)
        for w, f in zip(self.weights[1:], self.fields[1:]):
            if w != 0.0:
                out = out + w * f.eval(x)
        return out

    def jacobian(self, x):
        out = self.weights[0] * self.fields[0].jacobian(x)
        for w, f in zip(self.weights[1:], self.fields[1:]):
            if w != 0.0:
                out = out + w * f.jacobian(x)
        return out


@dataclass(frozen=True)
class Domain:
    """Axis-aligned box; ``margin`` is the inward-pointing constant (velocity units)."""

    lower: tuple
    upper: tuple
    margin: float = 0.0

    def __post_init__(self):
        lo = tuple(float(v) for v in np.atleast_1d(self.lower))
        hi = tuple(float(v) for v in np.atleast_1d(self.upper))
        if len(lo) != len(hi):
            raise ValueError("corner dimension mismatch")
        if any(b <= a for a, b in zip(lo, hi)):
            raise ValueError("upper corner must exceed lower corner componentwise")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self):
        return len(self.lower)

    @property
    def lo(self):
        return np.array(self.lower)

    @property
    def hi(self):
        return np.array(self.upper)

    @property
    def diameter(self):
        return float(np.linalg.norm(self.hi - self.lo))

    @property
    def volume(self):
        return float(np.prod(self.hi - self.lo))

    def contains(self, x):
        x = np.asarray(x, dtype=float)
        return np.all((x >= self.lo) & (x <= self.hi), axis=-1)

    def scale_unit(self, u):
        """Map points of the unit cube onto the box."""
        return self.lo + np.asarray(u) * (self.hi - self.lo)

    def corners(self):
        return np.array(list(itertools.product(*zip(self.lower, self.upper))), dtype=float)


@dataclass(frozen=True)
class IntegratorConfig:
    rtol: float = 1e-6
    atol: float = 1e-9
    max_step: float = math.inf
    max_time: float = 1e4
    method: str = "dopri5"
    defect_control: bool = True

    def __post_init__(self):
        if not (self.rtol > 0 and self.atol > 0):
            raise ValueError("tolerances must be positive")
        if not self.max_time > 0:
            raise ValueError("max_time must be positive")
        if self.method != "dopri5":
            raise ValueError(f"unsupported method {self.method!r}")

    def tightened(self, factor):
        return replace(self, rtol=self.rtol / factor, atol=self.atol / factor)


ORACLE = IntegratorConfig(rtol=1e-9, atol=1e-12)
SWEEP = IntegratorConfig(rtol=1e-6, atol=1e-9)


@dataclass(frozen=True)
class Trajectory:
    """Accepted states of one integration plus the per-step dense output."""

    times: np.ndarray
    states: np.ndarray
    coeffs: np.ndarray = field(repr=False)
    escaped: bool = False
    nfev: int = 0

    @property
    def t0(self):
        return float(self.times[0])

    @property
    def t_end(self):
        return float(self.times[-1])

    @property
    def final(self):
        return self.states[-1]

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        scalar = t.ndim == 0
        t = np.atleast_1d(t)
        sgn = 1.0 if self.t_end >= self.t0 else -1.0
        s_nodes = sgn * (self.times - self.t0)
        s = sgn * (t - self.t0)
        tol = 1e-12 * max(1.0, s_nodes[-1])
        if np.any(s < -tol) or np.any(s > s_nodes[-1] + tol):
            raise ValueError("time outside the integrated interval")
        n = len(self.times) - 1
        idx = np.clip(np.searchsorted(s_nodes, s, side="right") - 1, 0, n)
        out = np.empty((t.size, self.states.shape[1]))
        at_end = idx == n
        out[at_end] = self.states[n]
        m = ~at_end
        if np.any(m):
            i = idx[m]
            h = self.times[i + 1] - self.times[i]
            theta = (t[m] - self.times[i]) / h
            pw = np.stack([theta, theta**2, theta**3, theta**4], axis=-1)
            out[m] = self.states[i] + h[:, None] * np.einsum("nk,ndk->nd", pw, self.coeffs[i])
        return out[0] if scalar else out

    def derivative(self, t):
        """Time derivative of the dense interpolant."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        n = len(self.times) - 1
        sgn = 1.0 if self.t_end >= self.t0 else -1.0
        s_nodes = sgn * (self.times - self.t0)
        idx = np.clip(np.searchsorted(s_nodes, sgn * (t - self.t0), side="right") - 1, 0, n - 1)
        h = self.times[idx + 1] - self.times[idx]
        theta = (t - self.times[idx]) / h
        dpw = np.stack([np.ones_like(theta), 2 * theta, 3 * theta**2, 4 * theta**3], axis=-1)
        return np.einsum("nk,ndk->nd", dpw, self.coeffs[idx])


def _box(domain):
    if domain is None:
        return None, None
    return domain.lo, domain.hi


def integrate_rhs(rhs, x0, t_span, cfg: IntegratorConfig, domain=None, first_step=None):
    """Integrate a possibly time-dependent ``rhs(t, y)``; see :func:`integrate`."""
    t0, t1 = (float(v) for v in t_span)
    if abs(t1 - t0) > cfg.max_time:
        raise ValueError(f"time span {abs(t1 - t0)} exceeds max_time {cfg.max_time}")
    lo, hi = _box(domain)
    sol = _dp45.solve(rhs, t0, x0, t1, cfg.rtol, cfg.atol, cfg.max_step,
                      first_step=first_step, lower=lo, upper=hi, defect=cfg.defect_control)
    return Trajectory(sol["t"], sol["y"], sol["q"], sol["status"] == "escaped", sol["nfev"])


def integrate(field: VectorField, x0, t_span, cfg: IntegratorConfig = SWEEP, domain=None):
    """Integrate ``x' = field(x)`` over ``t_span`` with adaptive Dormand-Prince 5(4).

    When ``domain`` is given the initial state must lie in it and the
    integration halts after the first step that leaves it; the returned
    trajectory then has ``escaped=True`` and ends at the exit step.

    Raises
    ------
    StiffOrSingularError
        If the step size underflows; carries the last valid time.
    """
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    if x0.shape != (field.dim,):
        raise ValueError(f"x0 has shape {x0.shape}, expected ({field.dim},)")
    if t_span[1] == t_span[0]:
        raise ValueError("degenerate time span")
    if domain is not None and not domain.contains(x0):
        raise ValueError("initial condition outside the domain")
    return integrate_rhs(field.rhs, x0, t_span, cfg, domain)


def flow_at(field: VectorField, x0, t, cfg: IntegratorConfig = SWEEP, domain=None):
    """State ``phi(t, x0)``; ``t = 0`` returns ``x0`` unchanged."""
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    if t == 0:
        return x0.copy()
    return integrate(field, x0, (0.0, t), cfg, domain).final.copy()


def sup_trajectory_distance(field_a, field_b, x0, t_max, cfg: IntegratorConfig = SWEEP,
                            domain=None, n_grid=256, rel_change=0.01, max_grid=2**16):
    """Finite-horizon surrogate for ``sup_t |phi_a(t, x0) - phi_b(t, x0)|``.

    The maximum is taken over a shared uniform grid on ``[0, t_max]`` that is
    doubled until the maximum changes by less than ``rel_change``.  If either
    trajectory leaves ``domain`` the domain diameter is returned.
    """
    tra = integrate(field_a, x0, (0.0, t_max), cfg, domain)
    trb = tra if field_b is field_a else integrate(field_b, x0, (0.0, t_max), cfg, domain)
    if tra.escaped or trb.escaped:
        return domain.diameter
    n = n_grid
    prev = None
    while True:
        ts = np.linspace(0.0, t_max, n + 1)
        d = float(np.max(np.linalg.norm(tra(ts) - trb(ts), axis=-1)))
        if prev is not None and abs(d - prev) <= rel_change * max(d, 1e-300):
            return d
        if d == 0.0 or n >= max_grid:
            return d
        prev = d
        n *= 2


def c1_distance_estimate(field_a, field_b, domain: Domain, n_samples=1024, seed=0):
    """Sampled ``(sup |a - b|, sup |Da - Db|_op)`` over the box.

    Points are a scrambled Sobol set plus the box corners; the values are
    lower bounds on the true suprema.
    """
    if n_samples < 100:
        raise ValueError("n_samples must be at least 100")
    pts = np.vstack([domain.scale_unit(low_discrepancy(n_samples, domain.dim, seed)),
                     domain.corners()])
    c0 = np.max(np.linalg.norm(field_a(pts) - field_b(pts), axis=-1))
    dj = field_a.jacobian(pts) - field_b.jacobian(pts)
    c1 = np.max(np.linalg.norm(dj, ord=2, axis=(-2, -1)))
    return float(c0), float(c1)


def boundary_samples(domain: Domain, n_per_face=64, seed=0):
    """Points on each face of the box with their outward unit normals."""
    pts, normals = [], []
    d = domain.dim
    for axis in range(d):
        for side, value in ((-1.0, domain.lower[axis]), (1.0, domain.upper[axis])):
            if d == 1:
                p = np.array([[value]])
            else:
                u = low_discrepancy(n_per_face, d - 1, seed)
                # include face corners so the extremes are always probed
                u = np.vstack([u, np.array(list(itertools.product([0.0, 1.0], repeat=d - 1)))])
                p = np.empty((len(u), d))
                others = [i for i in range(d) if i != axis]
                p[:, others] = domain.lo[others] + u * (domain.hi[others] - domain.lo[others])
                p[:, axis] = value
            nrm = np.zeros((len(p), d))
            nrm[:, axis] = side
            pts.append(p)
            normals.append(nrm)
    return np.vstack(pts), np.vstack(normals)


def check_inward_pointing(field: VectorField, domain: Domain, margin: float, n_per_face=256):
    """Return ``(ok, worst)`` where ``ok`` iff ``f(x) . n(x) < -margin`` on all
    boundary samples and ``worst`` is the largest observed dot product."""
    if not margin > 0:
        raise ValueError("margin must be positive")
    pts, nrm = boundary_samples(domain, n_per_face)
    dots = np.sum(field(pts) * nrm, axis=-1)
    worst = float(np.max(dots))
    return bool(worst < -margin), worst
