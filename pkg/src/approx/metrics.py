"""Flow-closeness estimators: exceedance volume, Ky Fan distance, time-averaged
L^p error with its bound, error taxonomy and phase drift."""

from __future__ import annotations

import csv
import enum
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import _dp45
from .basins import fixed_point_registry, mismatch_mask
from .dynsys import SWEEP, Domain, IntegratorConfig
from .horizon import UNRESOLVED, HorizonPolicy, PairRun, run_pair
from .invariants import CYCLE_CFG, NonReturningError, PoincareSection, _refine_crossing
from .sampling import sample_unit, wilson_interval

__all__ = [
    "ClosenessReport", "sample_pair_run", "eps_volume_error", "is_eps_delta_close",
    "ky_fan_distance", "LpReport", "lp_error", "lp_bound", "check_lp_bound", "BoundNotCertified",
    "partition_check", "TaxonomyLabel", "classify_errors", "crossing_times", "DriftResult",
    "phase_drift", "drift_from_times", "good_set_summary", "per_sample_csv",
]


def sample_pair_run(field_a, field_b, domain: Domain, n=1000, seed=0, policy=HorizonPolicy(),
                    cfg: IntegratorConfig = SWEEP, registries=None, sampler="sobol", ps=(1, 2),
                    jobs=1):
    """Draw ``n`` initial conditions and run both flows under ``policy``.

    ``registries`` defaults to the stable fixed points of each field.
    """
    if registries is None:
        ra = fixed_point_registry(field_a, domain)
        rb = ra if field_b is field_a else fixed_point_registry(field_b, domain)
    else:
        ra, rb = registries
    pts = domain.scale_unit(sample_unit(n, domain.dim, seed, sampler))
    run = run_pair(field_a, field_b, pts, ra, rb, domain, policy, cfg, ps, jobs)
    run.seed = seed
    run.registries = (ra, rb)
    return run


@dataclass
class ClosenessReport:
    eps: float
    value: float
    ci_low: float
    ci_high: float
    n: int
    seed: int
    policy: dict
    sup: np.ndarray = field(repr=False)
    x0: np.ndarray = field(repr=False)

    @property
    def count(self):
        return int(np.sum(self.sup > self.eps))

    def to_dict(self):
        return dict(eps=self.eps, value=self.value, ci_low=self.ci_low, ci_high=self.ci_high,
                    n=self.n, seed=self.seed, policy=self.policy)

    def to_json(self):
        return json.dumps(self.to_dict())


def eps_volume_error(field_a, field_b, eps, domain: Domain, n=1000, seed=0,
                     policy=HorizonPolicy(), cfg=SWEEP, registries=None, run: PairRun = None,
                     jobs=1):
    """Fraction of initial conditions whose trajectory error ever exceeds ``eps``.

    Pass ``run`` to evaluate several ``eps`` on the same sample set.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    if run is None:
        if n < 100:
            raise ValueError("need at least 100 samples")
        run = sample_pair_run(field_a, field_b, domain, n, seed, policy, cfg, registries, jobs=jobs)
    k = int(np.sum(run.sup > eps))
    lo, hi = wilson_interval(k, run.n)
    return ClosenessReport(float(eps), k / run.n, lo, hi, run.n, getattr(run, "seed", seed),
                           run.policy.to_dict(), run.sup, run.x0)


def is_eps_delta_close(report: ClosenessReport, delta):
    """Conservative test: the upper confidence bound lies below ``delta``."""
    return bool(report.ci_high < delta)


def ky_fan_distance(field_a=None, field_b=None, domain=None, n=1000, seed=0, eps_grid=None,
                    policy=HorizonPolicy(), cfg=SWEEP, registries=None, run: PairRun = None,
                    jobs=1):
    """Smallest grid value ``e`` with exceedance fraction ``< e``.

    The predicate is monotone along the sorted grid, so it is located by
    bisection.  Returns the domain diameter if no grid value qualifies.
    """
    if run is None:
        run = sample_pair_run(field_a, field_b, domain, n, seed, policy, cfg, registries, jobs=jobs)
    D = domain.diameter
    grid = np.sort(np.asarray(eps_grid if eps_grid is not None else np.geomspace(1e-4, D, 64)))
    if grid[0] <= 0 or grid[-1] > D * (1 + 1e-12):
        raise ValueError("eps grid must lie in (0, D]")
    sup = np.sort(run.sup)

    def ok(i):
        frac = (run.n - np.searchsorted(sup, grid[i], side="right")) / run.n
        return frac < grid[i]

    lo, hi = 0, len(grid) - 1
    if not ok(hi):
        return D
    while lo < hi:
        mid = (lo + hi) // 2
        if ok(mid):
            hi = mid
        else:
            lo = mid + 1
    return float(grid[lo])


@dataclass
class LpReport:
    p: float
    per_sample: np.ndarray = field(repr=False)
    value: float = 0.0
    horizon: np.ndarray = field(default=None, repr=False)
    value_long: float = 0.0
    limsup_flagged: float = 0.0  # fraction of samples whose two averages differ by > tol

    def to_dict(self):
        return dict(p=self.p, value=self.value, value_long=self.value_long,
                    limsup_flagged=self.limsup_flagged,
                    horizon_min=float(np.min(self.horizon)), horizon_max=float(np.max(self.horizon)))


def lp_error(field_a, field_b, p, domain, n=1000, seed=0, policy=HorizonPolicy(), cfg=SWEEP,
             registries=None, run: PairRun = None, jobs=1):
    """Domain average of the per-sample time-averaged ``|phi_a - phi_b|^p``."""
    if p < 1:
        raise ValueError("p must be >= 1")
    if run is None or p not in run.lp:
        run = sample_pair_run(field_a, field_b, domain, n, seed, policy, cfg, registries,
                              ps=(p,), jobs=jobs)
    v = run.lp[p]
    vl = run.lp_long[p]
    rel = np.abs(vl - v) > run.policy.limsup_tol * np.maximum(np.abs(v), 1e-300)
    rel &= np.maximum(v, vl) > 0
    return LpReport(p, v, math.fsum(v) / len(v), run.horizon, math.fsum(vl) / len(vl),
                    float(np.mean(rel)))


def lp_bound(eps, delta, D, p):
    return eps**p + delta * D**p


class BoundNotCertified(ValueError):
    pass


def check_lp_bound(lp: LpReport, closeness: ClosenessReport, delta, D):
    """``(holds, margin)`` for ``E_p <= eps^p + delta D^p``.

    The pair ``(closeness.eps, delta)`` must be certified by
    :func:`is_eps_delta_close`; otherwise :class:`BoundNotCertified` is raised.
    """
    if not is_eps_delta_close(closeness, delta):
        raise BoundNotCertified(f"(eps={closeness.eps}, delta={delta}) not certified "
                                f"(upper bound {closeness.ci_high:.4g})")
    bound = lp_bound(closeness.eps, delta, D, lp.p)
    return bool(lp.value <= bound), float(bound - lp.value)


def good_set_summary(run: PairRun, matching):
    """``(good_mask, eps_hat, delta_hat)``: basin-matched samples, their max
    trajectory error and the mismatch fraction (unresolved counted as mismatch)."""
    bad = mismatch_mask(run.label_a, run.label_b, matching) | run.escaped
    good = ~bad
    eps_hat = float(np.max(run.sup[good])) if np.any(good) else 0.0
    return good, eps_hat, float(np.mean(bad))


def partition_check(run: PairRun, good, eps_hat, D, p, long=False):
    """Exact sample identity ``mean(lp) <= (1-d) eps^p + d D^p <= eps^p + d D^p``.

    Returns ``(mean_lp, partition_bound, full_bound, holds)`` with ``d`` the
    bad fraction of ``good``.  ``long`` selects the averages over the
    extended window; the sup covers that window too, so both must hold.
    """
    v = run.lp_long[p] if long else run.lp[p]
    n = len(v)
    d = 1.0 - np.count_nonzero(good) / n
    mean = math.fsum(v) / n
    mid = (1.0 - d) * eps_hat**p + d * D**p
    full = eps_hat**p + d * D**p
    return mean, mid, full, bool(mean <= mid <= full)


class TaxonomyLabel(str, enum.Enum):
    WITHIN_EPS = "WithinEps"
    B_TYPE = "BType"
    P_TYPE = "PType"
    OTHER = "Other"


def crossing_times(field, section: PoincareSection, x0, n_crossings, cfg=CYCLE_CFG,
                   max_time=None):
    """Times of the first ``n_crossings`` oriented section crossings from ``x0``."""
    x0 = np.asarray(x0, dtype=float).ravel()
    max_time = cfg.max_time if max_time is None else max_time
    out = []
    armed = section.signed(x0) < -1e-9
    for t, y, f, h, t_new, y_new, _, K in _dp45.iter_steps(field.rhs, 0.0, x0, max_time,
                                                           cfg.rtol, cfg.atol, cfg.max_step):
        s_new = section.signed(y_new)
        if armed and s_new >= 0.0 and section.signed(y) < 0.0:
            tc, xc = _refine_crossing(field.rhs, section, t, y, f, h, K)
            if np.linalg.norm(xc - section.anchor) <= section.radius:
                out.append(tc)
                if len(out) == n_crossings:
                    return np.array(out)
        if s_new < -1e-9:
            armed = True
    raise NonReturningError(f"only {len(out)} of {n_crossings} returns within t={max_time:g}")


@dataclass
class DriftResult:
    slope: float  # radians per revolution
    intercept: float
    r2: float
    phases: np.ndarray = field(repr=False)

    def to_dict(self):
        return dict(slope=self.slope, intercept=self.intercept, r2=self.r2,
                    revolutions=len(self.phases))


def phase_drift(field_a, field_b, cycle_a, cycle_b=None, x0=None, n_periods=100, cfg=CYCLE_CFG,
                section=None, x0_b=None):
    """Least-squares slope of the per-revolution phase difference.

    The phase of ``field_b`` relative to ``field_a`` at revolution k is
    ``2 pi (t_a[k] - t_b[k]) / T_a`` where ``t[k]`` are the k-th oriented
    crossings of a section.  Both runs start from ``x0`` on ``cycle_a``'s
    section unless ``x0_b`` is given, in which case the second run starts
    there and uses ``cycle_b``'s section (e.g. two tiles of one field).
    """
    section = section or cycle_a.section
    x0 = cycle_a.point if x0 is None else np.asarray(x0, dtype=float)
    T = cycle_a.period
    max_time = (n_periods + 5) * T * 1.5
    ta = crossing_times(field_a, section, x0, n_periods, cfg, max_time)
    if x0_b is not None:
        sec_b = cycle_b.section if cycle_b is not None else section
        tb = crossing_times(field_b, sec_b, np.asarray(x0_b, dtype=float), n_periods, cfg, max_time)
    elif field_b is field_a:
        tb = ta
    else:
        tb = crossing_times(field_b, section, x0, n_periods, cfg, max_time)
    return drift_from_times(ta, tb, T)


def drift_from_times(ta, tb, T):
    """Phase-difference fit from two sequences of crossing times."""
    n = min(len(ta), len(tb))
    ph = 2 * math.pi * (np.asarray(ta[:n]) - np.asarray(tb[:n])) / T
    k = np.arange(1, n + 1, dtype=float)
    A = np.column_stack([k, np.ones_like(k)])
    (slope, icpt), *_ = np.linalg.lstsq(A, ph, rcond=None)
    ss_res = float(np.sum((ph - A @ [slope, icpt]) ** 2))
    ss_tot = float(np.sum((ph - ph.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 0.0
    return DriftResult(float(slope), float(icpt), r2, ph)


def classify_errors(run: PairRun, eps, matching, cycle_pairs=None, n_periods=10,
                    field_a=None, field_b=None, drift_min=0.0):
    """One taxonomy label per sample of ``run``.

    ``cycle_pairs`` maps attractor ids of the first registry that are limit
    cycles to ``(cycle_a, cycle_b)``; phase drift is checked only for those.
    A sample is PType when the phase difference of the two flows started at
    the sample grows affinely over ``n_periods`` revolutions (fit R^2 > 0.9)
    and the accumulated drift exceeds ``drift_min`` radians.
    """
    labels = []
    mism = mismatch_mask(run.label_a, run.label_b, matching)
    both_resolved = (run.label_a != UNRESOLVED) & (run.label_b != UNRESOLVED) & ~run.escaped
    diag = []
    for i in range(run.n):
        if run.sup[i] <= eps:
            labels.append(TaxonomyLabel.WITHIN_EPS)
            diag.append({})
        elif both_resolved[i] and mism[i]:
            labels.append(TaxonomyLabel.B_TYPE)
            diag.append(dict(id_a=int(run.label_a[i]), id_b=int(run.label_b[i])))
        elif both_resolved[i] and cycle_pairs and int(run.label_a[i]) in cycle_pairs:
            ca, cb = cycle_pairs[int(run.label_a[i])]
            try:
                dr = phase_drift(field_a, field_b, ca, cb, run.x0[i], n_periods)
            except NonReturningError:
                labels.append(TaxonomyLabel.OTHER)
                diag.append({})
                continue
            if dr.r2 > 0.9 and abs(dr.slope) * n_periods > drift_min:
                labels.append(TaxonomyLabel.P_TYPE)
            else:
                labels.append(TaxonomyLabel.OTHER)
            diag.append(dict(id_a=int(run.label_a[i]), drift_slope=dr.slope, r2=dr.r2))
        else:
            labels.append(TaxonomyLabel.OTHER)
            diag.append({})
    return labels, diag


def per_sample_csv(run: PairRun, labels=None, p=2):
    """CSV rows ``ic..., sup_dist, label, lp_avg``."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    d = run.x0.shape[1]
    w.writerow([f"ic{j}" for j in range(d)] + ["sup_dist", "label", "lp_avg"])
    for i in range(run.n):
        lab = labels[i].value if labels is not None else ""
        w.writerow([repr(float(v)) for v in run.x0[i]] + [repr(float(run.sup[i])), lab,
                                                         repr(float(run.lp[p][i]))])
    return buf.getvalue()
