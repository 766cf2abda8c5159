"""Exact period matching for hyperbolic limit cycles.

Global rescaling for one cycle, per-tube multiplicative factors for several,
and an additive bump correction solved by Newton with a period Jacobian from
adjoint (Malkin) integrals.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .dynsys import IntegratorConfig
from .invariants import (CYCLE_CFG, CycleNotFoundError, LimitCycle, NonReturningError,
                         PoincareSection, adjoint_solution, find_limit_cycle, hausdorff_distance,
                         malkin_integral)
from .zoo import (BumpFunction, corrected_field_additive, corrected_field_multiplicative,
                  make_vector_bump, scale_field)

__all__ = [
    "CORRECTION_TOL", "CorrectionError", "DominanceViolated", "CycleLost", "CorrectionProblem",
    "PeriodJacobian", "CorrectionResult", "locate_cycle", "measure_periods",
    "single_cycle_scaling", "multiplicative_correction", "period_jacobian", "fd_period_jacobian",
    "dominance_certificate", "additive_correction", "verify_correction", "build_problem",
]

CORRECTION_TOL = 1e-6  # relative period residual accepted as success


class CorrectionError(RuntimeError):
    def __init__(self, message, history=()):
        super().__init__(message)
        self.history = list(history)


class DominanceViolated(CorrectionError):
    def __init__(self, message, xi=math.nan, n=0):
        super().__init__(message)
        self.xi, self.n = xi, n


class CycleLost(CorrectionError):
    pass


def locate_cycle(field, seed, cfg: IntegratorConfig = CYCLE_CFG, section=None, **kw):
    """Limit cycle through (or near) ``seed``; the section defaults to the
    hyperplane through ``seed`` normal to the flow."""
    seed = np.asarray(seed, dtype=float)
    section = section or PoincareSection.through(field, seed)
    return find_limit_cycle(field, section, seed, cfg, **kw)


def measure_periods(field, cycles, cfg=CYCLE_CFG, n_samples=512):
    """Re-locate each cycle on ``field`` from its previous anchor and section."""
    out = []
    for c in cycles:
        try:
            out.append(find_limit_cycle(field, c.section, c.point, cfg, n_samples=n_samples))
        except (CycleNotFoundError, NonReturningError) as exc:
            raise CycleLost(f"correction exceeded persistence radius: {exc}") from exc
    return out


@dataclass
class CorrectionProblem:
    base: object
    cycles: list
    targets: np.ndarray
    bumps: list = field(default_factory=list)  # scalar tube bumps psi_i
    bump_fields: list = field(default_factory=list)  # vector bumps Phi_i

    def __post_init__(self):
        self.targets = np.asarray(self.targets, dtype=float).ravel()
        if len(self.targets) != len(self.cycles):
            raise ValueError("one target period per cycle required")
        if np.any(self.targets <= 0):
            raise ValueError("target periods must be positive")
        for name in ("bumps", "bump_fields"):
            seq = getattr(self, name)
            if seq and len(seq) != len(self.cycles):
                raise ValueError(f"{name}: one entry per cycle required")

    @property
    def n(self):
        return len(self.cycles)

    @property
    def measured(self):
        return np.array([c.period for c in self.cycles])

    def leakage(self):
        """``xi``: largest value of any scalar bump on another cycle."""
        xi = 0.0
        for j, b in enumerate(self.bumps):
            for i, c in enumerate(self.cycles):
                if i != j:
                    xi = max(xi, b.leakage(c.orbit))
        return xi


def build_problem(base, cycles, targets, r_in=None, r_out=None, normalized=False, domain=None):
    """Tube bumps of radii ``(r_in, r_out)`` around each cycle.

    Defaults are 0.2 and 0.4 of the smallest gap between sampled cycles
    (0.2 and 0.4 for a single cycle).
    """
    cycles = list(cycles)
    gap = math.inf
    for i in range(len(cycles)):
        for j in range(i + 1, len(cycles)):
            d = np.linalg.norm(cycles[i].orbit[:, None] - cycles[j].orbit[None], axis=-1).min()
            gap = min(gap, float(d))
    if not math.isfinite(gap):
        gap = 1.0
    r_in = 0.2 * gap if r_in is None else r_in
    r_out = 0.4 * gap if r_out is None else r_out
    bumps = [BumpFunction(c.orbit, r_in, r_out) for c in cycles]
    phis = []
    for i, c in enumerate(cycles):
        others = [o for k, o in enumerate(cycles) if k != i]
        phis.append(make_vector_bump(base, c, r_in, r_out, normalized, others, domain))
    return CorrectionProblem(base, cycles, targets, bumps, phis)


@dataclass
class PeriodJacobian:
    J: np.ndarray
    margins: np.ndarray  # |J_ii| - sum_{j != i} |J_ij|
    zeta: float = 0.0  # max bump-field norm on foreign cycles
    C_Z: float = math.nan  # max adjoint norm over all cycles
    nu: float = 0.0  # max alignment error on own cycle
    quad_error: float = 0.0  # largest Richardson estimate among entries

    @classmethod
    def from_matrix(cls, J, **kw):
        J = np.atleast_2d(np.asarray(J, dtype=float))
        off = np.sum(np.abs(J), axis=1) - np.abs(np.diag(J))
        return cls(J, np.abs(np.diag(J)) - off, **kw)

    @property
    def dominant(self):
        return bool(np.all(self.margins > 0))

    def to_dict(self):
        return dict(J=self.J.tolist(), margins=self.margins.tolist(), zeta=self.zeta,
                    C_Z=self.C_Z, nu=self.nu, dominant=self.dominant)


@dataclass
class CorrectionResult:
    alpha: np.ndarray
    corrected: object = field(repr=False)
    periods: np.ndarray
    targets: np.ndarray
    iterations: int
    margins: np.ndarray = None
    cycles: list = field(default=None, repr=False)
    history: list = field(default_factory=list)
    method: str = ""

    @property
    def residuals(self):
        return np.abs(self.periods - self.targets)

    @property
    def relative_residuals(self):
        return self.residuals / self.targets

    @property
    def success(self):
        return bool(np.all(self.relative_residuals < CORRECTION_TOL))

    def to_dict(self):
        m = None if self.margins is None else np.asarray(self.margins).tolist()
        return dict(method=self.method, alpha=np.asarray(self.alpha).tolist(),
                    periods=self.periods.tolist(), targets=self.targets.tolist(),
                    residuals=self.residuals.tolist(), iterations=self.iterations, margins=m,
                    history=self.history)

    def to_json(self):
        return json.dumps(self.to_dict())


def single_cycle_scaling(field, cycle: LimitCycle, T_target, cfg=CYCLE_CFG):
    """Rescale the whole field by ``c = T_measured / T_target``."""
    if not T_target > 0:
        raise ValueError("target period must be positive")
    c = cycle.period / T_target
    new = field if c == 1.0 else scale_field(field, c)
    (cyc,) = measure_periods(new, [cycle], cfg)
    res = CorrectionResult(np.array([c - 1.0]), new, np.array([cyc.period]),
                           np.array([float(T_target)]), 0, None, [cyc], method="scaling")
    res.scale = c
    if not res.relative_residuals[0] < CORRECTION_TOL:
        raise CorrectionError(f"rescaled period {cyc.period!r} misses target {T_target!r}")
    return res


def _retimed_periods(problem, alpha):
    """Periods of ``(1 + sum a_j psi_j) f`` on the unchanged orbits.

    Multiplying a field by a positive scalar only reparametrizes its orbits,
    so ``T_i = int_0^{T_i} dt / factor(gamma_i(t))`` on the stored samples
    (periodic trapezoid rule, spectrally accurate).
    """
    out = np.empty(problem.n)
    for i, c in enumerate(problem.cycles):
        fac = np.ones(len(c.orbit))
        for a, b in zip(alpha, problem.bumps):
            fac = fac + a * b(c.orbit)
        out[i] = c.period * float(np.mean(1.0 / fac))
    return out


def _bump_means(problem):
    """``M_ij = mean over cycle i of psi_j`` (so ``J_ij = -T_i M_ij`` at 0)."""
    M = np.empty((problem.n, problem.n))
    for i, c in enumerate(problem.cycles):
        for j, b in enumerate(problem.bumps):
            M[i, j] = float(np.mean(b(c.orbit)))
    return M


def multiplicative_correction(problem: CorrectionProblem, cfg=CYCLE_CFG, tol=1e-13, max_iter=20):
    """Tube-local factors ``1 + alpha_i psi_i`` that move every period onto its target.

    With zero leakage ``alpha_i = (T_i - target_i)/target_i`` exactly.  With
    leakage ``xi`` the condition ``(N - 1) xi < 1`` is required; the
    linearized system is solved and then polished by Newton on the exact
    retimed periods.  Periods are finally re-measured by integration.
    """
    if not problem.bumps:
        raise ValueError("multiplicative correction needs scalar bumps")
    T_hat = problem.measured
    T = problem.targets
    n = problem.n
    xi = problem.leakage()
    history = []
    iters = 0
    if xi == 0.0:
        alpha = (T_hat - T) / T
        margins = np.ones(n)
    else:
        if not (n - 1) * xi < 1.0:
            raise DominanceViolated(f"leakage {xi:.3g} with {n} cycles violates (N-1) xi < 1", xi, n)
        M = _bump_means(problem)
        J0 = -T_hat[:, None] * M
        margins = PeriodJacobian.from_matrix(J0).margins
        alpha = np.linalg.solve(J0, T - T_hat)
        for iters in range(1, max_iter + 1):
            Tr = _retimed_periods(problem, alpha)
            r = Tr - T
            history.append(float(np.max(np.abs(r) / T)))
            if history[-1] < tol:
                break
            # dT_i/da_j = -T_i mean(psi_j / fac^2)
            Jk = np.empty((n, n))
            for i, c in enumerate(problem.cycles):
                fac = np.ones(len(c.orbit))
                vals = [b(c.orbit) for b in problem.bumps]
                for a, v in zip(alpha, vals):
                    fac = fac + a * v
                for j, v in enumerate(vals):
                    Jk[i, j] = -c.period * float(np.mean(v / fac**2))
            alpha = alpha - np.linalg.solve(Jk, r)
    check = np.vstack([c.orbit for c in problem.cycles])
    new = corrected_field_multiplicative(problem.base, problem.bumps, alpha, check)
    cyc = measure_periods(new, problem.cycles, cfg)
    periods = np.array([c.period for c in cyc])
    return CorrectionResult(alpha, new, periods, T, iters, margins, cyc, history,
                            "multiplicative")


def period_jacobian(field, cycles, bump_fields, cfg=CYCLE_CFG, adjoints=None):
    """``J_ij = -int_0^{T_i} <Z_i, Phi_j(gamma_i)> dt`` for every cycle/bump pair."""
    n = len(cycles)
    if len(bump_fields) != n:
        raise ValueError("one bump field per cycle required")
    adjoints = adjoints or [adjoint_solution(field, c, cfg) for c in cycles]
    J = np.empty((n, n))
    qerr = 0.0
    for i, (c, adj) in enumerate(zip(cycles, adjoints)):
        for j, phi in enumerate(bump_fields):
            J[i, j], e = malkin_integral(phi, c, adj)
            qerr = max(qerr, e)
    zeta = 0.0
    nu = 0.0
    for j, phi in enumerate(bump_fields):
        for i, c in enumerate(cycles):
            if i == j:
                nu = max(nu, float(np.max(np.linalg.norm(phi(c.orbit) - field(c.orbit), axis=-1)))
                         if not getattr(phi, "normalized", False) else getattr(phi, "alignment_error", 0.0))
            else:
                zeta = max(zeta, float(np.max(np.linalg.norm(phi(c.orbit), axis=-1))))
    C_Z = max(a.max_norm for a in adjoints)
    return PeriodJacobian.from_matrix(J, zeta=zeta, C_Z=C_Z, nu=nu, quad_error=qerr)


def fd_period_jacobian(field, cycles, bump_fields, step=1e-4, cfg=CYCLE_CFG):
    """Centered finite differences of re-measured periods of ``f + a Phi_j``."""
    n = len(cycles)
    J = np.empty((n, n))
    for j in range(n):
        cols = []
        for s in (step, -step):
            a = np.zeros(n)
            a[j] = s
            g = corrected_field_additive(field, bump_fields, a)
            cols.append(np.array([c.period for c in measure_periods(g, cycles, cfg)]))
        J[:, j] = (cols[0] - cols[1]) / (2 * step)
    return PeriodJacobian.from_matrix(J)


def dominance_certificate(J, nu=None, zeta=None, n=None):
    """``(certified, min_margin, analytic_condition)``.

    Certified iff ``J`` is strictly row diagonally dominant.  The sufficient
    condition ``nu + (n-1) zeta < 1/C_Z`` is evaluated when the inputs are
    known (``None`` otherwise); it does not affect the certificate.
    """
    pj = J if isinstance(J, PeriodJacobian) else PeriodJacobian.from_matrix(J)
    nu = pj.nu if nu is None else nu
    zeta = pj.zeta if zeta is None else zeta
    n = pj.J.shape[0] if n is None else n
    analytic = None
    if math.isfinite(pj.C_Z) and pj.C_Z > 0:
        analytic = bool(nu + (n - 1) * zeta < 1.0 / pj.C_Z)
    return pj.dominant, float(np.min(pj.margins)), analytic


def additive_correction(problem: CorrectionProblem, cfg=CYCLE_CFG, jacobian="malkin",
                        frozen=False, max_iter=10, tol=1e-10, max_halvings=5):
    """Newton on the measured period map of ``f + sum a_j Phi_j``.

    Each iteration re-locates the cycles (exact period evaluations) and, unless
    ``frozen``, recomputes the Jacobian at the current coefficients
    (``jacobian`` is ``"malkin"`` or ``"fd"``).  A step that increases the
    residual norm is halved up to ``max_halvings`` times.  Iteration stops once
    every relative residual is below ``tol``; success requires
    :data:`CORRECTION_TOL`.
    """
    if not problem.bump_fields:
        raise ValueError("additive correction needs vector bump fields")
    n = problem.n
    T = problem.targets
    phis = problem.bump_fields

    def jac(fld, cyc):
        if jacobian == "fd":
            return fd_period_jacobian(fld, cyc, phis, cfg=cfg)
        return period_jacobian(fld, cyc, phis, cfg)

    alpha = np.zeros(n)
    cycles = list(problem.cycles)
    fld = problem.base
    r = problem.measured - T
    history = [float(np.max(np.abs(r) / T))]
    pj = jac(fld, cycles)
    if not pj.dominant:
        raise DominanceViolated(f"period Jacobian not diagonally dominant "
                                f"(margins {pj.margins.tolist()})", pj.zeta, n)
    margins0 = pj.margins
    it = 0
    while history[-1] >= tol:
        if it == max_iter:
            break
        it += 1
        step = np.linalg.solve(pj.J, r)
        lam = 1.0
        for _ in range(max_halvings + 1):
            trial = alpha - lam * step
            fld_t = corrected_field_additive(problem.base, phis, trial)
            cyc_t = measure_periods(fld_t, cycles, cfg)
            r_t = np.array([c.period for c in cyc_t]) - T
            if np.linalg.norm(r_t) <= np.linalg.norm(r):
                break
            lam *= 0.5
        else:
            raise CorrectionError("damped Newton failed to reduce the period residual", history)
        alpha, fld, cycles, r = trial, fld_t, cyc_t, r_t
        history.append(float(np.max(np.abs(r) / T)))
        if history[-1] < tol:
            break
        if not frozen:
            pj = jac(fld, cycles)
            if not pj.dominant:
                raise DominanceViolated("diagonal dominance lost during Newton", pj.zeta, n)
    res = CorrectionResult(alpha, fld, r + T, T, it, margins0, cycles, history, "additive")
    if not res.success:
        raise CorrectionError(f"Newton stagnated, residual history {history}", history)
    res.jacobian = pj
    return res


@dataclass
class CorrectionVerification:
    shifts: np.ndarray
    residuals: np.ndarray
    multipliers: list
    hyperbolic: bool

    def to_dict(self):
        return dict(shifts=self.shifts.tolist(), residuals=self.residuals.tolist(),
                    multiplier_moduli=[np.abs(m).tolist() for m in self.multipliers],
                    hyperbolic=self.hyperbolic)


def verify_correction(result: CorrectionResult, reference_cycles, cfg=CYCLE_CFG):
    """Re-locate the cycles on the corrected field and compare with the originals:
    sampled Hausdorff shift, period residuals, Floquet multipliers."""
    cyc = measure_periods(result.corrected, reference_cycles, cfg)
    shifts = np.array([hausdorff_distance(a.orbit, b.orbit) for a, b in zip(reference_cycles, cyc)])
    res = np.array([abs(c.period - t) for c, t in zip(cyc, result.targets)])
    return CorrectionVerification(shifts, res, [c.multipliers for c in cyc],
                                  all(c.hyperbolic for c in cyc))
