"""Desk-scale experiment runners with config files, manifests and CSV/JSON/SVG outputs."""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import itertools
import json
import math
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .basins import fixed_point_registry
from .correction import (build_problem, additive_correction, dominance_certificate, locate_cycle,
                         multiplicative_correction, period_jacobian, single_cycle_scaling,
                         verify_correction, CorrectionError)
from .horizon import TopologyChanged
from .invariants import find_fixed_points, spectral_gap
from .metrics import (BoundNotCertified, check_lp_bound, crossing_times, drift_from_times,
                      eps_volume_error, good_set_summary, is_eps_delta_close, lp_error,
                      partition_check, sample_pair_run)
from .svg import line_chart
from .tiling import (TilingSpec, measure_dtype_error, ring_samples, tile_iso_cylinder, tile_ring)
from .zoo import (FIELD_IDS, IsochronousCylinderField, RadialCycleField, RingAttractorField,
                  fit_rbf, make_field)

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib
import tomli_w

__all__ = [
    "EXPERIMENTS", "ConfigError", "ExperimentConfig", "RunManifest", "RunOutcome",
    "run_experiment", "verify_manifest", "RUNNERS",
]

EXPERIMENTS = ("bistable-sweep", "drift-demo", "correction-demo", "tiling-study", "lp-bound",
               "fit-and-verify")


class ConfigError(ValueError):
    pass


def _default_nus():
    return [round(0.01 * i, 2) for i in range(1, 21)]


@dataclass
class ExperimentConfig:
    experiment: str
    seed: int = 0
    n: int = 10_000
    out: str = "out"
    field: str = "double-well"
    field_params: dict = dataclasses.field(default_factory=dict)
    nu: float = 0.1
    nus: list = dataclasses.field(default_factory=_default_nus)
    eps: float = 0.05
    delta: float = 0.01
    p: float = 2.0
    mismatch: float = 0.01
    n_periods: int = 100
    shifts: list = dataclasses.field(default_factory=lambda: [0.03, -0.03])
    ks: list = dataclasses.field(default_factory=lambda: [64, 128])
    tiles: int = 3
    tile_periods: int = 20
    centers: list = dataclasses.field(default_factory=lambda: [6, 8, 12, 25])
    widths: list = dataclasses.field(default_factory=lambda: [0.8, 0.6, 0.5, 0.4])

    # per-experiment overrides of the dataclass defaults
    _PRESETS = {
        "bistable-sweep": {},
        "drift-demo": dict(field="radial-cycle", eps=0.05),
        "correction-demo": dict(field="multi-cycle-2"),
        "tiling-study": dict(field="ring", n=4000),
        "lp-bound": dict(nu=0.05, eps=1.0, delta=0.05),
        "fit-and-verify": dict(nu=0.1, eps=0.05, delta=0.01),
    }

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.experiment!r}; known: {', '.join(EXPERIMENTS)}")
        if self.field not in FIELD_IDS:
            raise ConfigError(f"unknown field id {self.field!r}")
        if self.n < 100:
            raise ConfigError("n must be at least 100")
        if not (self.eps > 0 and 0 < self.delta < 1 and self.p >= 1):
            raise ConfigError("need eps > 0, 0 < delta < 1, p >= 1")
        if len(self.centers) != len(self.widths):
            raise ConfigError("centers and widths must have equal length")
        if any(k < 2 for k in self.ks) or self.tiles < 2:
            raise ConfigError("tile counts must be at least 2")

    @classmethod
    def defaults(cls, experiment):
        if experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {experiment!r}")
        return cls(experiment=experiment, **cls._PRESETS[experiment])

    @classmethod
    def from_dict(cls, data, experiment=None):
        data = dict(data)
        exp = data.get("experiment", experiment)
        if exp is None:
            raise ConfigError("config names no experiment")
        if experiment is not None and exp != experiment:
            raise ConfigError(f"config is for {exp!r}, not {experiment!r}")
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        base = dataclasses.asdict(cls.defaults(exp))
        base.update(data)
        try:
            return cls(**base)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path, experiment=None):
        path = Path(path)
        try:
            raw = path.read_bytes()
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from exc
        try:
            if path.suffix.lower() == ".json":
                data = json.loads(raw)
            else:
                data = tomllib.loads(raw.decode())
        except (ValueError, tomllib.TOMLDecodeError) as exc:
            raise ConfigError(f"cannot parse {path.name}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config must be a table")
        return cls.from_dict(data, experiment)

    def to_dict(self):
        return dataclasses.asdict(self)

    def dumps(self, fmt="toml"):
        d = self.to_dict()
        return json.dumps(d, indent=2, sort_keys=True) + "\n" if fmt == "json" else tomli_w.dumps(d)

    def save(self, path):
        path = Path(path)
        path.write_text(self.dumps("json" if path.suffix.lower() == ".json" else "toml"))


def _sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


@dataclass
class RunManifest:
    experiment: str
    config: dict
    version: str
    timings: dict
    outputs: list  # [{"path", "sha256", "schema"}]
    checks: dict

    def to_dict(self):
        return dataclasses.asdict(self)

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path):
        d = json.loads(Path(path).read_text())
        return cls(**d)


@dataclass
class RunOutcome:
    checks: dict = dataclasses.field(default_factory=dict)  # criterion name -> bool
    files: dict = dataclasses.field(default_factory=dict)  # file name -> (text, schema)
    report: dict = dataclasses.field(default_factory=dict)

    def add(self, name, text, schema=""):
        self.files[name] = (text, schema)

    @property
    def passed(self):
        return all(self.checks.values())


def _csv(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])
    return buf.getvalue()


def _json(obj):
    return json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n"


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    raise TypeError(type(o).__name__)


def _double_well_family(cfg):
    if cfg.field != "double-well":
        raise ConfigError(f"{cfg.experiment} needs the double-well field family")
    base, dom = make_field("double-well", **cfg.field_params)
    return base, dom, (lambda nu: make_field("double-well", **{**cfg.field_params, "nu": nu})[0])


def _partition(run, good, eps_hat, D):
    out = {}
    for p in (1, 2):
        for long in (False, True):
            m, mid, full, ok = partition_check(run, good, eps_hat, D, p, long)
            out[f"p{p}{'_long' if long else ''}"] = dict(mean=m, partition=mid, full=full, holds=ok)
    return out


# ------------------------------------------------------------------ runners

def run_bistable_sweep(cfg: ExperimentConfig, jobs=1):
    base, dom, family = _double_well_family(cfg)
    D = dom.diameter
    reg_a = fixed_point_registry(base, dom)
    rows, parts, flags = [], {}, []
    for nu in cfg.nus:
        fb = base if nu == 0 else family(nu)
        try:
            reg_b = reg_a if nu == 0 else fixed_point_registry(fb, dom)
            matching = reg_a.match(reg_b)
        except TopologyChanged as exc:
            rows.append([float(nu)] + [math.nan] * 5 + ["topology-changed"])
            flags.append(dict(nu=nu, reason=str(exc)))
            continue
        run = sample_pair_run(base, fb, dom, cfg.n, cfg.seed, registries=(reg_a, reg_b), jobs=jobs)
        good, eps_hat, delta_hat = good_set_summary(run, matching)
        l2 = math.fsum(run.lp[2]) / run.n
        bound = eps_hat**2 + delta_hat * D**2
        rows.append([float(nu), eps_hat, delta_hat, l2, bound, bound - l2, ""])
        parts[repr(float(nu))] = _partition(run, good, eps_hat, D)
    out = RunOutcome()
    out.add("sweep.csv", _csv(["nu", "eps_hat", "delta_hat", "l2_avg", "bound", "margin", "flag"],
                              rows),
            "nu: perturbation size; eps_hat: max sup error over basin-matched samples; "
            "delta_hat: basin-mismatch fraction; l2_avg: mean time-averaged squared error; "
            "bound: eps_hat^2 + delta_hat*D^2; margin: bound - l2_avg; flag: row status")
    ok_rows = [r for r in rows if not r[6]]
    nus = [r[0] for r in ok_rows]
    out.add("sweep.svg", line_chart([("mean time-averaged squared error", nus, [r[3] for r in ok_rows]),
                                     ("bound", nus, [r[4] for r in ok_rows])],
                                    "Bistable sweep", "nu", "squared error"))
    out.checks["AC-4 margin >= 0 at every nu"] = bool(ok_rows) and all(r[5] >= 0 for r in ok_rows)
    out.checks["AC-12 partition identity"] = all(v["holds"] for d in parts.values() for v in d.values())
    out.report = dict(D=D, partition=parts, flagged=flags)
    out.add("report.json", _json(out.report))
    return out


def run_drift_demo(cfg: ExperimentConfig, jobs=1):
    h = cfg.mismatch
    A = RadialCycleField(omega=1.0)
    B = RadialCycleField(omega=1.0 + h)
    ca = locate_cycle(A, [1.0, 0.0])
    cb = locate_cycle(B, [1.0, 0.0])
    fixed = single_cycle_scaling(B, cb, ca.period)
    n = cfg.n_periods
    T = ca.period
    ta = crossing_times(A, ca.section, ca.point, n)
    tb = crossing_times(B, ca.section, ca.point, n)
    tc = crossing_times(fixed.corrected, ca.section, ca.point, n)
    unc = drift_from_times(ta, tb, T)
    cor = drift_from_times(ta, tc, T)
    analytic = 2 * math.pi * h / (1 + h)
    k = np.arange(0, n + 1)
    rows = [[int(i), float(i * T), float(a), float(b)] for i, a, b in
            zip(k, np.r_[0.0, unc.phases], np.r_[0.0, cor.phases])]
    out = RunOutcome()
    out.add("drift.csv", _csv(["revolution", "time", "phase_uncorrected", "phase_corrected"], rows),
            "phase of the approximant relative to the reference at each section crossing (radians)")
    out.add("drift.svg", line_chart([("uncorrected", k * T, np.r_[0.0, unc.phases]),
                                     ("corrected", k * T, np.r_[0.0, cor.phases])],
                                    "Phase drift", "time", "phase error (rad)"))
    rel = abs(unc.slope - analytic) / analytic
    out.checks["AC-10 uncorrected slope within 5%"] = rel < 0.05
    out.checks["AC-10 corrected slope < 1e-6"] = abs(cor.slope) < 1e-6
    out.checks["corrected phase error < eps"] = float(np.max(np.abs(cor.phases))) < cfg.eps
    out.report = dict(analytic_slope=analytic, uncorrected=unc.to_dict(), corrected=cor.to_dict(),
                      scale=fixed.scale, relative_slope_error=rel)
    out.add("report.json", _json(out.report))
    return out


def run_correction_demo(cfg: ExperimentConfig, jobs=1):
    base, dom = make_field("multi-cycle-2",
                           **(cfg.field_params if cfg.field == "multi-cycle-2" else {}))
    seeds = [[c[0] + 1.0, c[1]] for c in base.centers]
    cycles = [locate_cycle(base, s) for s in seeds]
    if len(cfg.shifts) != len(cycles):
        raise ConfigError(f"need {len(cycles)} period shifts")
    targets = [c.period * (1 + s) for c, s in zip(cycles, cfg.shifts)]
    prob = build_problem(base, cycles, targets, domain=dom)
    pj = period_jacobian(base, cycles, prob.bump_fields)
    cert, margin, analytic = dominance_certificate(pj)
    out = RunOutcome()
    try:
        res = additive_correction(prob)
        ver = verify_correction(res, cycles)
        ok = True
    except CorrectionError as exc:
        res, ver, ok = None, None, False
        out.report["error"] = str(exc)
    mult = multiplicative_correction(prob)
    out.checks["AC-9 diagonal dominance"] = cert
    out.checks["AC-9 converged in <= 5 iterations"] = ok and res.iterations <= 5
    out.checks["AC-9 residuals < 1e-6 T"] = ok and bool(np.all(res.relative_residuals < 1e-6))
    out.checks["AC-9 hyperbolicity preserved"] = ok and ver.hyperbolic
    out.checks["multiplicative residuals < 1e-6 T"] = mult.success
    out.report.update(jacobian=pj.to_dict(), certificate=dict(certified=cert, margin=margin,
                                                              analytic=analytic),
                      additive=res.to_dict() if ok else None,
                      verification=ver.to_dict() if ok else None,
                      multiplicative=mult.to_dict())
    if ok:
        out.add("newton.csv", _csv(["iteration", "max_relative_residual"],
                                   [[i, r] for i, r in enumerate(res.history)]),
                "max relative period residual after each Newton iteration")
    out.add("report.json", _json(out.report))
    return out


def run_tiling_study(cfg: ExperimentConfig, jobs=1):
    ring = RingAttractorField(**(cfg.field_params if cfg.field == "ring" else {}))
    X = ring_samples(cfg.n, cfg.seed, center=ring.center)
    reps = []
    for k in cfg.ks:
        tiled = tile_ring(ring, TilingSpec("ring", int(k)))
        reps.append(measure_dtype_error(ring, tiled, X, jobs=jobs))
    rows = [[r.k, r.spacing, r.max, r.p99, r.frac_within, int(np.sum(r.unresolved))] for r in reps]
    out = RunOutcome()
    out.add("tiling.csv", _csv(["k", "spacing", "max_displacement", "p99_displacement",
                                "frac_within_spacing", "n_unresolved"], rows),
            "per tile count: asymptotic displacement between continuum and tiled limits")
    out.add("tiling.svg", line_chart([("max displacement", [r.k for r in reps], [r.max for r in reps]),
                                      ("spacing", [r.k for r in reps], [r.spacing for r in reps])],
                                     "Ring tiling", "tiles k", "displacement"))
    by_k = {r.k: r for r in reps}
    for k in cfg.ks:
        if k in by_k:
            out.checks[f"AC-11 >= 99% within spacing (k={k})"] = by_k[k].frac_within >= 0.99
        if 2 * k in by_k:
            ratio = by_k[2 * k].max / by_k[k].max
            out.checks[f"AC-11 max halves k={k}->{2 * k}"] = abs(ratio - 0.5) <= 0.1
    # isochronous cylinder
    cyl = IsochronousCylinderField()
    ct = tile_iso_cylinder(cyl, TilingSpec("iso-cylinder", cfg.tiles))
    P = np.asarray(ct.periods)
    pair_diff = {f"{i}-{j}": abs(P[i] - P[j]) / ct.target
                 for i, j in itertools.combinations(range(len(P)), 2)}
    times = [crossing_times(ct.corrected, c.section, c.point, cfg.tile_periods) for c in ct.cycles]
    drifts = {f"{i}-{j}": drift_from_times(times[i], times[j], ct.target).slope
              for i, j in itertools.combinations(range(len(P)), 2)}
    out.checks["AC-13 pairwise period differences < 2e-6"] = all(v < 2e-6 for v in pair_diff.values())
    out.checks["AC-13 inter-tile drift < 1e-6 per revolution"] = all(abs(v) < 1e-6 for v in drifts.values())
    out.report = dict(ring=[r.to_dict() for r in reps],
                      cylinder=dict(target=ct.target, periods=P.tolist(), levels=ct.tiled.levels,
                                    uncorrected=ct.uncorrected_periods,
                                    alpha=ct.correction.alpha, pairwise_relative=pair_diff,
                                    pairwise_drift=drifts))
    out.add("report.json", _json(out.report))
    return out


def run_lp_bound(cfg: ExperimentConfig, jobs=1):
    base, dom, family = _double_well_family(cfg)
    D = dom.diameter
    fb = family(cfg.nu)
    reg_a = fixed_point_registry(base, dom)
    reg_b = fixed_point_registry(fb, dom)
    matching = reg_a.match(reg_b)
    ps = tuple(sorted({1.0, 2.0, float(cfg.p)}))
    run = sample_pair_run(base, fb, dom, cfg.n, cfg.seed, registries=(reg_a, reg_b), ps=ps,
                          jobs=jobs)
    clos = eps_volume_error(base, fb, cfg.eps, dom, run=run)
    lp = lp_error(base, fb, cfg.p, dom, run=run)
    out = RunOutcome()
    try:
        holds, margin = check_lp_bound(lp, clos, cfg.delta, D)
        certified = True
    except BoundNotCertified as exc:
        holds, margin, certified = False, math.nan, False
        out.report["error"] = str(exc)
    good, eps_hat, delta_hat = good_set_summary(run, matching)
    ident = sample_pair_run(base, base, dom, cfg.n, cfg.seed, registries=(reg_a, reg_a), ps=ps,
                            jobs=jobs)
    ident_lp = lp_error(base, base, cfg.p, dom, run=ident).value
    out.checks["(eps, delta) certified"] = certified
    out.checks["L^p bound holds"] = holds
    out.checks["AC-12 partition identity"] = all(v["holds"] for v in
                                                 _partition(run, good, eps_hat, D).values())
    out.checks["identity flow L^p = 0"] = ident_lp == 0.0
    out.report.update(closeness=clos.to_dict(), lp=lp.to_dict(), bound_margin=margin,
                      bound=cfg.eps**cfg.p + cfg.delta * D**cfg.p, eps_hat=eps_hat,
                      delta_hat=delta_hat, partition=_partition(run, good, eps_hat, D),
                      identity_lp=ident_lp)
    rows = [[float(x), float(s), float(v)] for x, s, v in zip(run.x0[:, 0], run.sup, lp.per_sample)]
    out.add("samples.csv", _csv(["ic0", "sup_dist", "lp_avg"], rows),
            "per-sample initial condition, sup trajectory error and time-averaged p-th power error")
    out.add("report.json", _json(out.report))
    return out


def run_fit_and_verify(cfg: ExperimentConfig, jobs=1):
    _, dom, family = _double_well_family(cfg)
    target = family(cfg.nu) if cfg.nu else make_field("double-well", **cfg.field_params)[0]
    D = dom.diameter
    fps = find_fixed_points(target, dom)
    lam = min(spectral_gap(fp) for fp in fps if fp.classification == "stable")
    reg_t = fixed_point_registry(target, dom)
    rows, parts, ks = [], {}, []
    for nc, w in zip(cfg.centers, cfg.widths):
        approx = fit_rbf(target, dom, n_centers=int(nc), width=float(w), seed=cfg.seed)
        rep = approx.fit_report
        try:
            reg_f = fixed_point_registry(approx, dom)
            matching = reg_t.match(reg_f)
        except TopologyChanged:
            rows.append([int(nc), float(w), rep["c0"], rep["c1"], math.nan, math.nan, math.nan,
                         False, "topology-changed"])
            continue
        run = sample_pair_run(target, approx, dom, cfg.n, cfg.seed, registries=(reg_t, reg_f),
                              jobs=jobs)
        good, eps_hat, delta_hat = good_set_summary(run, matching)
        clos = eps_volume_error(target, approx, cfg.eps, dom, run=run)
        cert = is_eps_delta_close(clos, cfg.delta)
        rows.append([int(nc), float(w), rep["c0"], rep["c1"], eps_hat, delta_hat, clos.ci_high,
                     cert, ""])
        parts[f"{nc}"] = _partition(run, good, eps_hat, D)
        if delta_hat == 0 and rep["c1"] > 0:
            ks.append(eps_hat * lam / rep["c1"])
    out = RunOutcome()
    out.add("fits.csv", _csv(["n_centers", "width", "c0", "c1", "eps_hat", "delta_hat",
                              "exceed_ci_high", "certified", "flag"], rows),
            "per fit: C0/C1 distance to target, achieved (eps_hat, delta_hat), and whether the "
            "configured (eps, delta) is certified")
    good_rows = [r for r in rows if not r[8]]
    tight = min(good_rows, key=lambda r: r[3]) if good_rows else None
    out.checks["tightest fit certified"] = bool(tight and tight[7])
    out.checks["AC-12 partition identity"] = all(v["holds"] for d in parts.values() for v in d.values())
    out.report = dict(spectral_gap=lam, K_hat=max(ks) if ks else None, partition=parts, nu=cfg.nu)
    out.add("report.json", _json(out.report))
    return out


RUNNERS = {
    "bistable-sweep": run_bistable_sweep,
    "drift-demo": run_drift_demo,
    "correction-demo": run_correction_demo,
    "tiling-study": run_tiling_study,
    "lp-bound": run_lp_bound,
    "fit-and-verify": run_fit_and_verify,
}


def run_experiment(cfg: ExperimentConfig, out_dir=None, jobs=1):
    """Run ``cfg``, write its outputs, manifest and (on failure) a failure record.

    Returns ``(manifest, outcome)``.
    """
    out_dir = Path(out_dir or cfg.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    outcome = RUNNERS[cfg.experiment](cfg, jobs=jobs)
    t1 = time.perf_counter()
    (out_dir / "config.toml").write_text(cfg.dumps("toml"))
    outputs = []
    for name, (text, schema) in sorted(outcome.files.items()):
        p = out_dir / name
        p.write_text(text)
        outputs.append(dict(path=name, sha256=_sha256(p), schema=schema))
    failures = [k for k, v in outcome.checks.items() if not v]
    fail_path = out_dir / "failures.json"
    if failures:
        fail_path.write_text(_json(dict(experiment=cfg.experiment, failed=failures)))
    elif fail_path.exists():
        fail_path.unlink()
    man = RunManifest(cfg.experiment, cfg.to_dict(), __version__,
                      dict(run_seconds=t1 - t0, write_seconds=time.perf_counter() - t1),
                      outputs, {k: bool(v) for k, v in outcome.checks.items()})
    man.save(out_dir / "manifest.json")
    return man, outcome


def verify_manifest(path):
    """Recompute output hashes; returns the list of mismatching or missing files."""
    path = Path(path)
    man = RunManifest.load(path)
    bad = []
    for o in man.outputs:
        p = path.parent / o["path"]
        if not p.exists() or _sha256(p) != o["sha256"]:
            bad.append(o["path"])
    return bad
