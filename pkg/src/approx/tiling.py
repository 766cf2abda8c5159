"""Replace continuous attractors by finite skeletons of hyperbolic ones and
measure the resulting discretization error."""

from __future__ import annotations

import csv
import io
import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .correction import build_problem, locate_cycle, multiplicative_correction
from .dynsys import SWEEP, Domain
from .horizon import UNRESOLVED, Attractor, AttractorRegistry, HorizonPolicy, run_single
from .invariants import CYCLE_CFG, poincare_return, PoincareSection
from .kernels import batch_grid
from .sampling import sample_unit
from .zoo import IsochronousCylinderField, LineAttractorField, RadialCycleField, RingAttractorField

__all__ = [
    "TilingSpec", "TiledRingField", "NormalHyperbolicityWarning", "NotIsochronous", "tile_ring",
    "tile_line", "check_isochrony", "CylinderTiling", "tile_iso_cylinder", "TilingReport",
    "sink_registry", "measure_dtype_error", "ring_samples",
]


class NormalHyperbolicityWarning(UserWarning):
    pass


class NotIsochronous(ValueError):
    pass


@dataclass(frozen=True)
class TilingSpec:
    kind: str  # "ring", "line" or "iso-cylinder"
    k: int
    eps_t: float | None = None  # tangential (ring/line) or axial (cylinder) strength
    axial_strength: float | None = None

    def __post_init__(self):
        if self.kind not in ("ring", "line", "iso-cylinder"):
            raise ValueError(f"unknown manifold kind {self.kind!r}")
        if self.k < 2:
            raise ValueError("need at least two tiles")
        if self.eps_t is not None and not self.eps_t > 0:
            raise ValueError("tile strength must be positive")


class TiledRingField(RadialCycleField):
    """Ring with ``theta' = -eps_t sin(k theta)``: k sinks and k saddles on the circle."""

    def __init__(self, kappa, k, eps_t, center=(0.0, 0.0)):
        super().__init__(kappa, 0.0, 0.0, center, eps_t, k)

    @property
    def sinks(self):
        th = 2 * math.pi * np.arange(self.k) / self.k
        return np.column_stack([np.cos(th), np.sin(th)]) + np.array(self.center)

    @property
    def saddles(self):
        th = 2 * math.pi * (np.arange(self.k) + 0.5) / self.k
        return np.column_stack([np.cos(th), np.sin(th)]) + np.array(self.center)

    @property
    def spacing(self):
        return 2 * math.pi / self.k


def _strength(spec, kappa):
    # default keeps the tangential rate eps_t * k at half the radial rate 2 kappa
    return spec.eps_t if spec.eps_t is not None else kappa / spec.k


def tile_ring(ring: RingAttractorField, spec: TilingSpec):
    """k sinks at angles ``2 pi j / k`` separated by saddles.

    Warns when ``eps_t k >= 2 kappa`` (the tangential rate would dominate the
    radial contraction).
    """
    eps = _strength(spec, ring.kappa)
    f = TiledRingField(ring.kappa, spec.k, eps, ring.center)
    f.normally_hyperbolic = eps * spec.k < 2 * ring.kappa
    if not f.normally_hyperbolic:
        warnings.warn(f"tangential rate {eps * spec.k:.3g} >= radial rate {2 * ring.kappa:.3g}",
                      NormalHyperbolicityWarning, stacklevel=2)
    return f


def tile_line(line: LineAttractorField, spec: TilingSpec):
    """k sinks equally spaced on the segment, end tiles included."""
    sp = (line.b - line.a) / (spec.k - 1)
    # default tangential rate 2 pi eps / spacing is half the normal rate
    eps = spec.eps_t if spec.eps_t is not None else line.kappa * sp / (4 * math.pi)
    f = LineAttractorField(line.a, line.b, line.kappa, spec.k, eps)
    # the tangential rate at a sink is 2 pi eps / spacing
    f.normally_hyperbolic = 2 * math.pi * eps / sp < line.kappa
    if not f.normally_hyperbolic:
        warnings.warn("tangential rate exceeds normal contraction", NormalHyperbolicityWarning,
                      stacklevel=2)
    return f


def check_isochrony(cyl, zs=None, rtol=1e-8, cfg=CYCLE_CFG):
    """Return times of the circles at heights ``zs``; raise :class:`NotIsochronous`
    if they differ by more than ``rtol`` relative."""
    zs = np.linspace(cyl.z_lo, cyl.z_hi, 3) if zs is None else np.asarray(zs, dtype=float)
    periods = []
    for z in zs:
        p = np.array([1.0, 0.0, z])
        sec = PoincareSection(p, [0.0, 1.0, 0.0], radius=0.5)
        _, tau = poincare_return(cyl, sec, p, cfg)
        periods.append(tau)
    periods = np.array(periods)
    spread = float(np.ptp(periods) / np.mean(periods))
    if spread > rtol:
        raise NotIsochronous(f"periods vary by {spread:.3g} (relative) across heights; tiling "
                             "would leave inter-tile phase drift")
    return periods


@dataclass
class CylinderTiling:
    corrected: object = field(repr=False)  # tiled field after period correction
    tiled: object = field(repr=False)  # tiled field before correction
    cycles: list = field(repr=False)
    correction: object
    target: float
    uncorrected_periods: list = field(default_factory=list)

    @property
    def periods(self):
        return self.correction.periods


def tile_iso_cylinder(cyl: IsochronousCylinderField, spec: TilingSpec, freq_gradient=0.01,
                      cfg=CYCLE_CFG):
    """Tile an isochronous cylinder into k circular cycles and match their periods.

    The cylinder must be isochronous.  The tiled proxy carries a small
    frequency gradient ``freq_gradient`` (a model error that makes the tile
    periods differ); tube-local multiplicative factors then restore the
    common period.
    """
    periods = check_isochrony(cyl, cfg=cfg)
    target = float(np.mean(periods))
    axial = spec.axial_strength or spec.eps_t or 0.1
    tiled = IsochronousCylinderField(cyl.kappa, cyl.omega, cyl.z_lo, cyl.z_hi, spec.k, axial,
                                     freq_gradient, cyl.mu)
    cycles = [locate_cycle(tiled, [1.0, 0.0, z], cfg) for z in tiled.levels]
    prob = build_problem(tiled, cycles, [target] * spec.k)
    res = multiplicative_correction(prob, cfg)
    return CylinderTiling(res.corrected, tiled, res.cycles, res, target, prob.measured.tolist())


@dataclass
class TilingReport:
    k: int
    spacing: float
    displacements: np.ndarray = field(repr=False)
    unresolved: np.ndarray = field(repr=False)

    @property
    def resolved(self):
        return self.displacements[~self.unresolved]

    @property
    def max(self):
        return float(np.max(self.resolved)) if self.resolved.size else math.nan

    @property
    def p99(self):
        return float(np.percentile(self.resolved, 99)) if self.resolved.size else math.nan

    @property
    def frac_exceeding(self):
        r = self.resolved
        return float(np.mean(r > self.spacing)) if r.size else math.nan

    @property
    def frac_within(self):
        r = self.resolved
        return float(np.mean(r <= self.spacing)) if r.size else math.nan

    def to_dict(self):
        return dict(k=self.k, spacing=self.spacing, max=self.max, p99=self.p99,
                    frac_exceeding=self.frac_exceeding, n=int(len(self.displacements)),
                    n_unresolved=int(np.sum(self.unresolved)))

    def to_json(self):
        return json.dumps(self.to_dict())

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["displacement", "unresolved"])
        for d, u in zip(self.displacements, self.unresolved):
            w.writerow([repr(float(d)), int(u)])
        return buf.getvalue()


def sink_registry(points, relaxation_time, radius=None):
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    atts = [Attractor(i, "point", p[None, :], relaxation_time) for i, p in enumerate(pts)]
    return AttractorRegistry.build(atts, radius)


def ring_samples(n, seed=0, r_lo=0.5, r_hi=1.5, center=(0.0, 0.0)):
    """Low-discrepancy points in an annulus, uniform in angle and radius."""
    u = sample_unit(n, 2, seed)
    r = r_lo + (r_hi - r_lo) * u[:, 0]
    th = 2 * math.pi * u[:, 1]
    return np.column_stack([r * np.cos(th), r * np.sin(th)]) + np.asarray(center)


def measure_dtype_error(original, tiled, samples, horizon=40.0, registry=None, domain=None,
                        policy=None, spacing=None, cfg=SWEEP, jobs=1):
    """Distance between each sample's limit under ``original`` (a point of the
    continuum, taken as the state at ``horizon``) and the sink that captures
    it under ``tiled``.  Samples the tiled flow does not settle are flagged."""
    X = np.atleast_2d(np.asarray(samples, dtype=float))
    if registry is None:
        sinks = tiled.sinks
        if sinks.ndim == 1:  # sink abscissae on a segment of the x-axis
            sinks = np.column_stack([sinks, np.zeros_like(sinks)])
        rate = min(2 * getattr(tiled, "kappa", 1.0), _tile_rate(tiled))
        registry = sink_registry(sinks, 3.0 / rate)
    if domain is None:
        lo = X.min(axis=0) - 10.0
        hi = X.max(axis=0) + 10.0
        domain = Domain(tuple(lo), tuple(hi))
    policy = policy or HorizonPolicy(max_time=400.0)
    labels, escaped, _ = run_single(tiled, X, registry, domain, policy, cfg, jobs)
    res = batch_grid(original, X, np.array([0.0, horizon]), cfg, domain)
    lim = res.states[:, -1]
    unresolved = (labels == UNRESOLVED) | escaped | (res.status != 0)
    disp = np.full(len(X), np.nan)
    ok = ~unresolved
    sinks = np.vstack([a.points[0] for a in registry.attractors])
    disp[ok] = np.linalg.norm(sinks[labels[ok]] - lim[ok], axis=1)
    if spacing is None:
        spacing = getattr(tiled, "spacing", None)
        if spacing is None and getattr(tiled, "sinks", None) is not None:
            spacing = float(np.min(np.diff(np.sort(np.asarray(tiled.sinks).ravel()))))
    k = len(registry.attractors)
    return TilingReport(k, float(spacing), disp, unresolved)


def _tile_rate(tiled):
    if isinstance(tiled, TiledRingField):
        return tiled.eps_t * tiled.k
    if isinstance(tiled, LineAttractorField) and tiled.tiles >= 2:
        sp = (tiled.b - tiled.a) / (tiled.tiles - 1)
        return 2 * math.pi * tiled.eps_t / sp
    return 1.0
