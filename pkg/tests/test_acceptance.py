"""Acceptance criteria AC-1 .. AC-14, one PASS/FAIL line each.

Run under pytest (lines appear in the terminal summary) or directly with
``python3 tests/test_acceptance.py``.
"""

import filecmp
import functools
import math
import sys
import tempfile
import time
from pathlib import Path

import numpy as np
import pytest

from approx.basins import basin_scaling_experiment
from approx.correction import locate_cycle, single_cycle_scaling
from approx.dynsys import Domain, FunctionField, SumField, c1_distance_estimate
from approx.experiments import ExperimentConfig, run_experiment
from approx.invariants import adjoint_solution, find_fixed_points, period_sensitivity
from approx.metrics import eps_volume_error
from approx.zoo import (IsochronousCylinderField, MultiCycleField, PerturbationFamily,
                        RadialCycleField, cos_perturbation, double_well)

try:
    from conftest import ACCEPTANCE_LINES
except ImportError:  # run as a script from elsewhere
    ACCEPTANCE_LINES = {}

DW_DOMAIN = Domain((-2.0,), (2.0,))


def _report(ac, ok, detail):
    line = f"{ac:<6} {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES[ac] = line
    print(line)
    return ok


@functools.lru_cache(maxsize=None)
def _experiment(name, jobs=1):
    out = Path(tempfile.mkdtemp(prefix=f"acc-{name}-j{jobs}-"))
    cfg = ExperimentConfig.from_dict(dict(experiment=name, out=str(out)))
    t0 = time.perf_counter()
    _, outcome = run_experiment(cfg, out, jobs=jobs)
    return outcome, out, time.perf_counter() - t0


def _checks(outcome, prefix):
    return {k: v for k, v in outcome.checks.items() if k.startswith(prefix)}


# ---------------------------------------------------------------- criteria

def ac1():
    f = double_well()
    t0 = time.perf_counter()
    vals = [eps_volume_error(f, f, e, DW_DOMAIN, n=1000, seed=0).value for e in (1e-3, 0.1, 1.0)]
    dt = time.perf_counter() - t0
    ok = all(v == 0.0 for v in vals) and dt < 5.0
    return _report("AC-1", ok, f"identity errors {vals}, {dt:.2f} s")


def ac2():
    fps = find_fixed_points(double_well(), DW_DOMAIN)
    locs = [float(fp.location[0]) for fp in fps]
    eigs = [float(np.real(fp.eigenvalues[0])) for fp in fps]
    gap = min(abs(e) for e, fp in zip(eigs, fps) if fp.stable)
    ok = (len(fps) == 3 and np.allclose(locs, [-1, 0, 1], atol=1e-8, rtol=0)
          and np.allclose(eigs, [-2, 1, -2], atol=1e-8, rtol=0) and abs(gap - 2) < 1e-8)
    return _report("AC-2", ok, f"roots {np.round(locs, 12).tolist()}, eigenvalues "
                               f"{np.round(eigs, 12).tolist()}, gap {gap:.12g}")


def ac3():
    f = double_well()
    zero = FunctionField(1, lambda x: np.zeros_like(x), lambda x: np.zeros(x.shape + (1,)))
    _, lip = c1_distance_estimate(f, zero, DW_DOMAIN, n_samples=4096)
    return _report("AC-3", 10.9 <= lip <= 11.0, f"sampled sup |f'| = {lip:.6f}")


def ac4():
    outcome, out, dt = _experiment("bistable-sweep")
    ok = outcome.checks["AC-4 margin >= 0 at every nu"] and dt < 600
    rows = (out / "sweep.csv").read_text().splitlines()[1:]
    margins = [float(r.split(",")[5]) for r in rows]
    return _report("AC-4", ok, f"{len(rows)} nu values, min margin {min(margins):.4g}, {dt:.1f} s")


def ac5():
    base, g = double_well(), cos_perturbation()
    nus = [round(0.01 * i, 2) for i in range(1, 11)]
    fit = basin_scaling_experiment(base, PerturbationFamily(base, g), nus, DW_DOMAIN, n=10_000)
    # implicit function theorem at the source x=0: the separatrix moves by
    # -nu g(0) / f'(0), which is the mismatched length; divide by |X|
    x0 = np.zeros(1)
    oracle = abs(float(g(x0)[0]) / float(base.jacobian(x0)[0, 0])) / DW_DOMAIN.volume
    rel = abs(fit.slope - oracle) / oracle
    ok = fit.r2 >= 0.99 and rel <= 0.25 and not fit.excluded
    return _report("AC-5", ok, f"slope {fit.slope:.4f} vs oracle {oracle:.4f} ({rel:.1%}), "
                               f"R^2 {fit.r2:.4f}")


def ac6():
    f = RadialCycleField(kappa=1.0, omega=1.0, beta=0.5)
    cyc = locate_cycle(f, [1.0, 0.0])
    errs = []
    for s in (-0.05, 0.05):
        T = cyc.period * (1 + s)
        res = single_cycle_scaling(f, cyc, T)
        errs.append(float(res.relative_residuals[0]))
    return _report("AC-6", max(errs) < 1e-6, f"relative period errors {errs}")


def _rot(x):
    return np.stack([-x[..., 1], x[..., 0]], -1)


AC7_DIRECTIONS = {
    "rotation": _rot,
    "shear": lambda x: _rot(x) * (1 + 0.3 * x[..., 0])[..., None],
    "rotation-y2": lambda x: _rot(x) * (x[..., 1] ** 2)[..., None],
    "radial": lambda x: x.copy(),
    "radial-skew": lambda x: x * (1 + 0.5 * x[..., 0] + 0.2 * x[..., 1] ** 2)[..., None],
    "mixed": lambda x: np.stack([x[..., 0] - 0.4 * x[..., 1], 0.7 * x[..., 0] + x[..., 1]], -1),
}


def ac7(step=1e-4):
    f = RadialCycleField(kappa=1.0, omega=1.0, beta=0.5)
    cyc = locate_cycle(f, [1.0, 0.0])
    adj = adjoint_solution(f, cyc)
    errs = {}
    for name, g in AC7_DIRECTIONS.items():
        G = FunctionField(2, g)
        s = period_sensitivity(f, cyc, adj, G)
        tp = locate_cycle(SumField([f, G], [1.0, step]), cyc.point).period
        tm = locate_cycle(SumField([f, G], [1.0, -step]), cyc.point).period
        fd = (tp - tm) / (2 * step)
        errs[name] = abs(s - fd) / abs(fd)
    ok = sum(e < 1e-4 for e in errs.values()) >= 5
    worst = max(errs, key=errs.get)
    return _report("AC-7", ok, f"{len(errs)} directions, worst relative error "
                               f"{errs[worst]:.2e} ({worst})")


def ac8():
    cases = [("radial", RadialCycleField(beta=0.5), [[1.0, 0.0]])]
    mc = MultiCycleField()
    cases.append(("multi-cycle", mc, [[c[0] + 1.0, c[1]] for c in mc.centers]))
    cyl = IsochronousCylinderField(tiles=3, eps_t=0.1)
    cases.append(("cylinder tiles", cyl, [[1.0, 0.0, z] for z in cyl.levels]))
    worst = dict(norm=0.0, per=0.0, mu=0.0)
    count = 0
    for _, f, seeds in cases:
        for s in seeds:
            c = locate_cycle(f, s)
            a = adjoint_solution(f, c)
            worst["norm"] = max(worst["norm"], a.normalization_residual)
            worst["per"] = max(worst["per"], a.periodicity_residual)
            worst["mu"] = max(worst["mu"], float(abs(c.trivial_multiplier - 1)))
            count += 1
    ok = all(v < 1e-6 for v in worst.values())
    return _report("AC-8", ok, f"{count} cycles; max |<Z,f>-1| {worst['norm']:.1e}, periodicity "
                               f"{worst['per']:.1e}, |mu-1| {worst['mu']:.1e}")


def ac9():
    outcome, _, _ = _experiment("correction-demo")
    checks = _checks(outcome, "AC-9")
    add = outcome.report.get("additive") or {}
    margins = outcome.report["jacobian"]["margins"]
    return _report("AC-9", len(checks) == 4 and all(checks.values()),
                   f"row margins {np.round(margins, 4).tolist()}, iterations "
                   f"{add.get('iterations')}, residuals {add.get('residuals')}")


def ac10():
    outcome, _, _ = _experiment("drift-demo")
    checks = _checks(outcome, "AC-10")
    r = outcome.report
    return _report("AC-10", len(checks) == 2 and all(checks.values()),
                   f"uncorrected slope {r['uncorrected']['slope']:.6g} vs "
                   f"{r['analytic_slope']:.6g}, corrected {r['corrected']['slope']:.2e}")


def ac11():
    outcome, _, _ = _experiment("tiling-study")
    checks = _checks(outcome, "AC-11")
    ring = {d["k"]: d for d in outcome.report["ring"]}
    return _report("AC-11", len(checks) == 3 and all(checks.values()),
                   f"{1 - ring[64]['frac_exceeding']:.4f} within spacing (k=64); max "
                   f"{ring[64]['max']:.4f} -> {ring[128]['max']:.4f}")


def ac12():
    names = ("bistable-sweep", "lp-bound", "fit-and-verify")
    got = {n: _experiment(n)[0].checks["AC-12 partition identity"] for n in names}
    return _report("AC-12", all(got.values()), ", ".join(f"{k}: {v}" for k, v in got.items()))


def ac13():
    outcome, _, _ = _experiment("tiling-study")
    checks = _checks(outcome, "AC-13")
    cyl = outcome.report["cylinder"]
    pd = max(cyl["pairwise_relative"].values())
    dr = max(abs(v) for v in cyl["pairwise_drift"].values())
    return _report("AC-13", len(checks) == 2 and all(checks.values()),
                   f"max period difference {pd:.1e}, max drift {dr:.1e} per revolution")


def ac14():
    _, out1, _ = _experiment("bistable-sweep", 1)
    _, out3, _ = _experiment("bistable-sweep", 3)
    same = filecmp.cmp(out1 / "sweep.csv", out3 / "sweep.csv", shallow=False)
    return _report("AC-14", same, "sweep.csv identical for 1 and 3 workers" if same
                   else "sweep.csv differs between worker counts")


CRITERIA = [ac1, ac2, ac3, ac4, ac5, ac6, ac7, ac8, ac9, ac10, ac11, ac12, ac13, ac14]
SLOW = {ac4, ac5, ac9, ac10, ac11, ac12, ac13, ac14}


@pytest.mark.parametrize(
    "criterion",
    [pytest.param(c, marks=pytest.mark.slow) if c in SLOW else c for c in CRITERIA],
    ids=[f"AC-{i}" for i in range(1, len(CRITERIA) + 1)],
)
def test_acceptance(criterion):
    assert criterion()


if __name__ == "__main__":
    results = [c() for c in CRITERIA]
    sys.exit(0 if all(results) else 1)
