"""Basin labeling, separatrix bisection and basin-mismatch volume estimates."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import brentq

from .dynsys import SWEEP, Domain, IntegratorConfig
from .horizon import (UNRESOLVED, AttractorRegistry, HorizonPolicy, TopologyChanged,
                      run_single)
from .invariants import find_fixed_points
from .sampling import sample_unit, wilson_interval

__all__ = [
    "UNRESOLVED", "AttractorRegistry", "TopologyChanged", "BasinLabeling", "label_basin",
    "label_samples", "MismatchReport", "basin_mismatch_volume", "locate_separatrix_1d",
    "ScalingFit", "basin_scaling_experiment", "fixed_point_registry", "perturbed_root",
]

LABEL_POLICY = HorizonPolicy(max_time=400.0)


def fixed_point_registry(field, domain, radius=None, **kw):
    """Registry of the stable fixed points found on a seed grid."""
    return AttractorRegistry.from_fixed_points(find_fixed_points(field, domain, **kw), radius)


@dataclass
class BasinLabeling:
    sampler: dict
    points: np.ndarray = field(repr=False)
    labels: np.ndarray = field(repr=False)
    escaped: np.ndarray = field(repr=False)

    @property
    def unresolved_fraction(self):
        return float(np.mean(self.labels == UNRESOLVED))

    def counts(self):
        ids, cnt = np.unique(self.labels, return_counts=True)
        return {int(i): int(c) for i, c in zip(ids, cnt)}


def label_samples(field, registry, points, domain, cfg=SWEEP, policy=LABEL_POLICY, jobs=1):
    labels, escaped, _ = run_single(field, points, registry, domain, policy, cfg, jobs)
    return labels, escaped


def label_basin(field, registry: AttractorRegistry, x0, cfg: IntegratorConfig = SWEEP,
                domain: Domain | None = None, policy=LABEL_POLICY):
    """Attractor id reached from ``x0`` or ``UNRESOLVED``.

    A label is assigned once the trajectory stays inside one capture set for a
    relaxation time.  Trajectories that leave ``domain`` or never settle
    before ``policy.max_time`` are unresolved.
    """
    labels, _ = label_samples(field, registry, np.atleast_2d(x0), domain, cfg, policy)
    return int(labels[0])


@dataclass
class MismatchReport:
    delta_hat: float
    ci_low: float
    ci_high: float
    n: int
    seed: int
    n_mismatch: int
    n_unresolved: int
    nu: float | None = None
    mismatched: np.ndarray = field(default=None, repr=False)

    def to_json(self):
        return json.dumps(dict(nu=self.nu, delta_hat=self.delta_hat, ci_low=self.ci_low,
                               ci_high=self.ci_high, n=self.n, seed=self.seed))


def mismatch_mask(labels_a, labels_b, matching):
    """True where labels disagree under ``matching``; unresolved counts as a mismatch."""
    mapped = np.array([matching.get(int(i), -2) for i in labels_a]) if len(labels_a) else labels_a
    return (labels_a == UNRESOLVED) | (labels_b == UNRESOLVED) | (mapped != labels_b)


def basin_mismatch_volume(field_a, field_b, registry_a, registry_b, domain: Domain, n=10_000,
                          seed=0, matching=None, cfg=SWEEP, policy=LABEL_POLICY, sampler="sobol",
                          jobs=1, nu=None):
    """Monte Carlo fraction of the domain whose basin labels disagree.

    ``matching`` defaults to nearest-neighbour pairing of the registries,
    which raises :class:`TopologyChanged` when no one-to-one pairing exists.
    """
    if matching is None:
        matching = registry_a.match(registry_b)
    if set(matching) != set(registry_a.ids):
        raise TopologyChanged("matching does not cover every attractor")
    pts = domain.scale_unit(sample_unit(n, domain.dim, seed, sampler))
    la, _ = label_samples(field_a, registry_a, pts, domain, cfg, policy, jobs)
    lb = la if field_b is field_a else label_samples(field_b, registry_b, pts, domain, cfg, policy,
                                                     jobs)[0]
    bad = mismatch_mask(la, lb, matching)
    k = int(bad.sum())
    lo, hi = wilson_interval(k, n)
    unres = int(np.sum((la == UNRESOLVED) | (lb == UNRESOLVED)))
    order = np.lexsort(pts[bad].T[::-1]) if k else np.array([], dtype=int)
    return MismatchReport(k / n, lo, hi, n, seed, k, unres, nu, pts[bad][order])


def locate_separatrix_1d(field, bracket, tol=1e-8, registry=None, domain=None, cfg=None,
                         policy=LABEL_POLICY):
    """Bisection on basin labels between two differently-labeled points.

    Returns the midpoint once the bracket is narrower than ``tol``, or
    earlier if a midpoint is itself unresolved (it sits on the separatrix).
    """
    a, b = (float(v) for v in bracket)
    if domain is None:
        domain = Domain((min(a, b) - 10.0,), (max(a, b) + 10.0,))
    if registry is None:
        registry = fixed_point_registry(field, domain)
    cfg = cfg or IntegratorConfig(rtol=1e-10, atol=1e-12)

    def lab(x):
        return label_basin(field, registry, [x], cfg, domain, policy)

    la, lb = lab(a), lab(b)
    if la == lb:
        raise ValueError(f"bracket endpoints share the label {la}")
    while abs(b - a) > tol:
        m = 0.5 * (a + b)
        lm = lab(m)
        if lm == UNRESOLVED:
            return m
        if lm == la:
            a = m
        else:
            b = m
    return 0.5 * (a + b)


def perturbed_root(field, bracket=(-0.5, 0.5)):
    """Root of a scalar field in ``bracket`` (used as the separatrix oracle)."""
    return brentq(lambda x: float(field(np.array([x]))[0]), *bracket, xtol=1e-15)


@dataclass
class ScalingFit:
    nus: list
    deltas: list
    ci_low: list
    ci_high: list
    excluded: list
    slope: float
    r2: float
    r2_uncentered: float

    def to_dict(self):
        return asdict(self)


def basin_scaling_experiment(base, family, nus, domain, n=10_000, seed=0, cfg=SWEEP,
                             policy=LABEL_POLICY, jobs=1):
    """Mismatch fraction versus perturbation size with a least-squares line
    through the origin.  Values whose attractor structure changed are excluded
    and listed in ``excluded``."""
    reg_a = fixed_point_registry(base, domain)
    used, deltas, lo, hi, excluded = [], [], [], [], []
    for nu in nus:
        fb = family.at(nu)
        try:
            reg_b = reg_a if nu == 0 else fixed_point_registry(fb, domain)
            rep = basin_mismatch_volume(base, fb, reg_a, reg_b, domain, n, seed, cfg=cfg,
                                        policy=policy, jobs=jobs, nu=nu)
        except TopologyChanged:
            excluded.append(nu)
            continue
        used.append(nu)
        deltas.append(rep.delta_hat)
        lo.append(rep.ci_low)
        hi.append(rep.ci_high)
    x = np.array(used)
    y = np.array(deltas)
    if len(x) == 0 or not np.any(x):
        return ScalingFit(used, deltas, lo, hi, excluded, math.nan, math.nan, math.nan)
    slope = float(x @ y / (x @ x))
    ss_res = float(np.sum((y - slope * x) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else math.nan
    r2u = 1.0 - ss_res / float(y @ y) if np.any(y) else math.nan
    return ScalingFit(used, deltas, lo, hi, excluded, slope, r2, r2u)
