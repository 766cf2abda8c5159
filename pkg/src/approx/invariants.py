"""Fixed points, Poincare return maps, limit cycles, Floquet and adjoint analysis."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from . import _dp45
from .dynsys import Domain, IntegratorConfig, Trajectory, VectorField, integrate_rhs

__all__ = [
    "FixedPoint", "find_fixed_points", "spectral_gap", "classify_eigenvalues",
    "PoincareSection", "NonReturningError", "poincare_return", "LimitCycle",
    "CycleNotFoundError", "find_limit_cycle", "monodromy", "AdjointSolution",
    "DegenerateAdjointError", "adjoint_solution", "period_sensitivity", "malkin_integral",
    "CYCLE_CFG", "hausdorff_distance",
]

NEWTON_TOL = 1e-10
HYPERBOLIC_TOL = 1e-6
CYCLE_CFG = IntegratorConfig(rtol=1e-11, atol=1e-13, defect_control=False)


# ------------------------------------------------------------ fixed points

def classify_eigenvalues(eigs, tol=HYPERBOLIC_TOL):
    re = np.real(eigs)
    if np.any(np.abs(re) < tol):
        return "non-hyperbolic"
    if np.all(re < 0):
        return "stable"
    if np.all(re > 0):
        return "unstable"
    return "saddle"


@dataclass(frozen=True)
class FixedPoint:
    location: np.ndarray
    eigenvalues: np.ndarray
    classification: str
    jacobian: np.ndarray = field(repr=False)
    residual: float = 0.0

    @property
    def stable(self):
        return self.classification == "stable"

    @property
    def hyperbolic(self):
        return self.classification != "non-hyperbolic"

    def to_dict(self):
        return dict(location=self.location.tolist(), classification=self.classification,
                    eigenvalues_re=np.real(self.eigenvalues).tolist(),
                    eigenvalues_im=np.imag(self.eigenvalues).tolist(), residual=self.residual)


def _newton_root(field, x, tol, max_iter, step_cap):
    for _ in range(max_iter):
        fx = field(x)
        if np.linalg.norm(fx) < tol:
            return x
        J = field.jacobian(x)
        dx = np.linalg.lstsq(J, -fx, rcond=None)[0]
        n = np.linalg.norm(dx)
        if not np.isfinite(n) or n == 0.0:
            return None
        if n > step_cap:
            dx *= step_cap / n
        x = x + dx
    return x if np.linalg.norm(field(x)) < tol else None


def find_fixed_points(field: VectorField, domain: Domain, seeds=None, per_axis=9,
                      tol=NEWTON_TOL, max_iter=50, hyperbolic_tol=HYPERBOLIC_TOL):
    """Newton from each seed, deduplicate roots, classify by Jacobian spectrum.

    Seeds default to a regular grid of ``per_axis`` points per coordinate.
    Seeds whose Newton iteration fails or leaves the domain are skipped.
    Roots closer than ``10 * tol`` are merged.
    """
    if seeds is None:
        axes = [np.linspace(a, b, per_axis) for a, b in zip(domain.lower, domain.upper)]
        seeds = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, domain.dim)
    seeds = np.atleast_2d(np.asarray(seeds, dtype=float))
    if seeds.size == 0:
        raise ValueError("seed grid is empty")
    step_cap = 0.5 * float(np.max(domain.hi - domain.lo))
    roots = []
    for s in seeds:
        x = _newton_root(field, s.copy(), tol, max_iter, step_cap)
        if x is None or not domain.contains(x):
            continue
        if any(np.linalg.norm(x - r) < 10 * tol for r in roots):
            continue
        roots.append(x)
    roots.sort(key=lambda r: tuple(r))
    out = []
    for r in roots:
        J = np.atleast_2d(field.jacobian(r))
        eig = np.linalg.eigvals(J)
        eig = eig[np.lexsort((np.imag(eig), np.real(eig)))]
        out.append(FixedPoint(r, eig, classify_eigenvalues(eig, hyperbolic_tol), J,
                              float(np.linalg.norm(field(r)))))
    return out


def spectral_gap(fp: FixedPoint):
    """Slowest decay rate ``min |Re(eig)|`` of a stable fixed point."""
    if not fp.stable:
        raise ValueError(f"spectral gap needs a stable fixed point, got {fp.classification}")
    return float(np.min(np.abs(np.real(fp.eigenvalues))))


# ---------------------------------------------------------------- sections

class NonReturningError(RuntimeError):
    pass


@dataclass(frozen=True)
class PoincareSection:
    """Hyperplane through ``anchor`` with unit ``normal``; crossings count when
    the signed distance goes from negative to positive (``orientation=+1``)
    or the reverse, and lie within ``radius`` of the anchor."""

    anchor: np.ndarray
    normal: np.ndarray
    orientation: int = 1
    radius: float = math.inf

    def __post_init__(self):
        a = np.asarray(self.anchor, dtype=float).ravel()
        n = np.asarray(self.normal, dtype=float).ravel()
        nn = np.linalg.norm(n)
        if nn == 0 or a.shape != n.shape:
            raise ValueError("need a nonzero normal of the anchor's dimension")
        object.__setattr__(self, "anchor", a)
        object.__setattr__(self, "normal", n / nn)
        object.__setattr__(self, "orientation", 1 if self.orientation >= 0 else -1)

    @classmethod
    def through(cls, field, point, radius=math.inf):
        """Section through ``point`` normal to the flow there."""
        p = np.asarray(point, dtype=float)
        return cls(p, field(p), 1, radius)

    def signed(self, x):
        return self.orientation * float(np.dot(np.asarray(x) - self.anchor, self.normal))

    def project(self, x):
        x = np.asarray(x, dtype=float)
        return x - np.dot(x - self.anchor, self.normal) * self.normal

    def basis(self):
        """Orthonormal basis (d-1, d) of the hyperplane."""
        d = self.normal.size
        q, _ = np.linalg.qr(np.column_stack([self.normal, np.eye(d)]))
        return q[:, 1:d].T

    def transversality(self, field):
        return float(np.dot(field(self.anchor), self.normal))


def _refine_crossing(rhs, section, t, y, f, h, K, tol=1e-12):
    """Crossing time inside an accepted step: root of the dense output
    followed by Newton re-stepping from the step start."""
    Q = _dp45.dense_coeffs(K)

    def s_dense(theta):
        return section.signed(_dp45.dense_eval(y, h, Q, theta))

    theta = brentq(s_dense, 0.0, 1.0, xtol=1e-15, rtol=4 * _dp45.EPS)
    tau = theta * h
    x = _dp45.dense_eval(y, h, Q, theta)
    for _ in range(8):
        x, fx, _, _ = _dp45.rk_step(rhs, t, y, f, tau)
        s = section.signed(x)
        if abs(s) < tol:
            break
        ds = section.orientation * float(np.dot(fx, section.normal))
        if ds == 0.0:
            break
        tau -= s / ds
    return t + tau, x


def poincare_return(field, section: PoincareSection, x, cfg: IntegratorConfig = CYCLE_CFG,
                    max_time=None, domain=None):
    """First oriented return of the trajectory from ``x`` to ``section``.

    Returns ``(point, tau)``.  The crossing is located on the dense output
    and polished by re-stepping from the start of the crossing step, so the
    returned point is within ~1e-12 of the section.
    """
    x = np.asarray(x, dtype=float).ravel()
    max_time = cfg.max_time if max_time is None else max_time
    rhs = field.rhs
    armed = section.signed(x) < -1e-9
    lo, hi = (None, None) if domain is None else (domain.lo, domain.hi)
    for t, y, f, h, t_new, y_new, f_new, K in _dp45.iter_steps(
            rhs, 0.0, x, max_time, cfg.rtol, cfg.atol, cfg.max_step):
        s_new = section.signed(y_new)
        if armed and s_new >= 0.0 and section.signed(y) < 0.0:
            tc, xc = _refine_crossing(rhs, section, t, y, f, h, K)
            if np.linalg.norm(xc - section.anchor) <= section.radius:
                return xc, tc
        if s_new < -1e-9:
            armed = True
        if lo is not None and (np.any(y_new < lo) or np.any(y_new > hi)):
            raise NonReturningError(f"trajectory left the domain at t={t_new:.6g}")
    raise NonReturningError(f"no return to the section within t={max_time:g}")


# ------------------------------------------------------------ limit cycles

class CycleNotFoundError(RuntimeError):
    def __init__(self, message, residual=float("nan")):
        self.residual = float(residual)
        super().__init__(message)


@dataclass(frozen=True)
class LimitCycle:
    point: np.ndarray
    period: float
    times: np.ndarray = field(repr=False)  # uniform, endpoint excluded
    orbit: np.ndarray = field(repr=False)
    multipliers: np.ndarray
    monodromy: np.ndarray = field(repr=False)
    section: PoincareSection = field(repr=False)
    closure: float = 0.0
    trajectory: Trajectory = field(default=None, repr=False, compare=False)

    @property
    def trivial_multiplier(self):
        return self.multipliers[np.argmin(np.abs(self.multipliers - 1.0))]

    @property
    def nontrivial_multipliers(self):
        i = int(np.argmin(np.abs(self.multipliers - 1.0)))
        return np.delete(self.multipliers, i)

    @property
    def hyperbolic(self):
        return bool(np.all(np.abs(np.abs(self.nontrivial_multipliers) - 1.0) > HYPERBOLIC_TOL))

    @property
    def stable(self):
        return self.hyperbolic and bool(np.all(np.abs(self.nontrivial_multipliers) < 1.0))

    def to_dict(self):
        mu = self.multipliers
        return dict(point=self.point.tolist(), period=self.period, closure=self.closure,
                    multipliers_re=np.real(mu).tolist(), multipliers_im=np.imag(mu).tolist(),
                    hyperbolic=self.hyperbolic, stable=self.stable)


def _return_map(field, section, cfg, max_time):
    B = section.basis()

    def P(u):
        x = section.anchor + B.T @ u
        xr, tau = poincare_return(field, section, x, cfg, max_time)
        return B @ (xr - section.anchor), tau

    return B, P


def find_limit_cycle(field, section: PoincareSection, seed, cfg: IntegratorConfig = CYCLE_CFG,
                     tol=NEWTON_TOL, max_iter=50, n_samples=512, max_time=None, fd_step=1e-6):
    """Newton on the section-restricted return map ``P(u) - u = 0``.

    The seed is projected onto the section first.  On convergence the orbit
    is sampled at ``n_samples`` uniform times and the monodromy is computed.
    """
    if abs(section.transversality(field)) == 0.0:
        raise ValueError("flow is tangent to the section at its anchor")
    B, P = _return_map(field, section, cfg, max_time)
    u = B @ (section.project(seed) - section.anchor)
    k = u.size
    res = float("inf")
    tau = None
    for _ in range(max_iter):
        pu, tau = P(u)
        G = pu - u
        res = float(np.linalg.norm(G))
        if res < tol:
            break
        J = np.empty((k, k))
        for j in range(k):
            e = np.zeros(k)
            e[j] = fd_step * max(1.0, abs(u[j]))
            J[:, j] = ((P(u + e)[0] - (u + e)) - (P(u - e)[0] - (u - e))) / (2 * e[j])
        du = np.linalg.lstsq(J, -G, rcond=None)[0]
        u = u + du
    else:
        raise CycleNotFoundError(f"return-map Newton stagnated after {max_iter} iterations "
                                 f"(residual {res:.3e})", res)
    p = section.anchor + B.T @ u
    return _build_cycle(field, section, p, tau, cfg, n_samples)


def _build_cycle(field, section, p, period, cfg, n_samples):
    tr = integrate_rhs(field.rhs, p, (0.0, period), cfg)
    closure = float(np.linalg.norm(tr.final - p))
    times = np.linspace(0.0, period, n_samples, endpoint=False)
    orbit = tr(times)
    M = _monodromy_matrix(field, p, period, cfg)
    mu = np.linalg.eigvals(M)
    mu = mu[np.argsort(-np.abs(mu))]
    return LimitCycle(p, float(period), times, orbit, mu, M, section, closure, tr)


def _monodromy_matrix(field, p, period, cfg):
    d = p.size

    def rhs(t, z):
        x = z[:d]
        U = z[d:].reshape(d, d)
        return np.concatenate([field.eval(x), (field.jacobian(x) @ U).ravel()])

    z0 = np.concatenate([p, np.eye(d).ravel()])
    sol = _dp45.solve(rhs, 0.0, z0, period, cfg.rtol, cfg.atol, cfg.max_step)
    return sol["y"][-1, d:].reshape(d, d)


def monodromy(field, cycle: LimitCycle, cfg: IntegratorConfig = CYCLE_CFG):
    """Monodromy matrix over one period and its eigenvalues (Floquet multipliers)."""
    M = _monodromy_matrix(field, cycle.point, cycle.period, cfg)
    mu = np.linalg.eigvals(M)
    return M, mu[np.argsort(-np.abs(mu))]


def hausdorff_distance(a, b):
    """Symmetric Hausdorff distance between two point samples."""
    from scipy.spatial.distance import directed_hausdorff
    return max(directed_hausdorff(a, b)[0], directed_hausdorff(b, a)[0])


# ----------------------------------------------------------------- adjoint

class DegenerateAdjointError(RuntimeError):
    pass


@dataclass(frozen=True)
class AdjointSolution:
    cycle: LimitCycle = field(repr=False)
    times: np.ndarray = field(repr=False)
    Z: np.ndarray = field(repr=False)
    normalization_residual: float
    periodicity_residual: float
    trajectory: Trajectory = field(default=None, repr=False, compare=False)

    @property
    def max_norm(self):
        """``C_Z``: the largest sampled ``|Z(t)|``."""
        return float(np.max(np.linalg.norm(self.Z, axis=1)))

    def __call__(self, t):
        return self.trajectory(np.mod(t, self.cycle.period))


def adjoint_solution(field, cycle: LimitCycle, cfg: IntegratorConfig = CYCLE_CFG, unit_tol=1e-6):
    """Periodic solution of ``z' = -Df(gamma(t))^T z`` with ``<z, f(gamma)> = 1``.

    The initial condition is the eigenvector of the transposed monodromy for
    eigenvalue 1; the solution is then integrated backwards over one period,
    where the adjoint dynamics of a stable cycle are contracting.
    """
    M = cycle.monodromy
    w, V = np.linalg.eig(M.T)
    dist = np.abs(w - 1.0)
    order = np.argsort(dist)
    if dist[order[0]] > unit_tol:
        raise DegenerateAdjointError(f"no unit multiplier (closest {w[order[0]]:.6g})")
    if len(w) > 1 and dist[order[1]] <= unit_tol:
        raise DegenerateAdjointError("unit-multiplier eigenspace is not one-dimensional")
    z0 = np.real(V[:, order[0]])
    f0 = field(cycle.point)
    z0 = z0 / float(np.dot(z0, f0))
    gamma = cycle.trajectory
    T = cycle.period

    def rhs(t, z):
        x = gamma(min(max(t, 0.0), T))
        return -field.jacobian(x).T @ z

    tr = integrate_rhs(rhs, z0, (T, 0.0), cfg)
    Z = tr(cycle.times)
    norm_res = float(np.max(np.abs(np.sum(Z * field(cycle.orbit), axis=1) - 1.0)))
    per_res = float(np.linalg.norm(tr.final - z0) / np.linalg.norm(z0))
    return AdjointSolution(cycle, cycle.times, Z, norm_res, per_res, tr)


def malkin_integral(field_g, cycle: LimitCycle, adjoint: AdjointSolution):
    """``(-int_0^T <Z, g(gamma)> dt, Richardson error estimate)`` by the
    periodic trapezoid rule on the cycle's uniform samples."""
    vals = np.sum(adjoint.Z * field_g(cycle.orbit), axis=1)
    T = cycle.period
    full = -T * float(np.mean(vals))
    half = -T * float(np.mean(vals[::2]))
    return full, abs(full - half)


def period_sensitivity(field, cycle: LimitCycle, adjoint: AdjointSolution, g):
    """First-order period change ``dT/dalpha`` for the family ``f + alpha g``."""
    return malkin_integral(g, cycle, adjoint)[0]
