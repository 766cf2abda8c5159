import math

import numpy as np
import pytest

from approx.basins import fixed_point_registry
from approx.correction import locate_cycle, single_cycle_scaling
from approx.dynsys import Domain
from approx.horizon import AttractorRegistry, run_pair
from approx.invariants import PoincareSection
from approx.metrics import (BoundNotCertified, TaxonomyLabel, check_lp_bound, classify_errors,
                            crossing_times, drift_from_times, eps_volume_error, good_set_summary,
                            is_eps_delta_close, ky_fan_distance, lp_bound, lp_error,
                            partition_check, per_sample_csv, phase_drift, sample_pair_run)
from approx.zoo import (MultiCycleField, RadialCycleField, cos_perturbation, double_well,
                        make_perturbed)

DOM = Domain((-2.0,), (2.0,))


@pytest.fixture(scope="module")
def dw_run():
    f = double_well()
    g = make_perturbed(f, cos_perturbation(), 0.1)
    run = sample_pair_run(f, g, DOM, n=2000, seed=3)
    return f, g, run


def test_exceedance_volume_monotone(dw_run):
    f, g, run = dw_run
    vals = [eps_volume_error(f, g, e, DOM, run=run).value for e in (0.01, 0.05, 0.2, 1.0, 4.0)]
    assert vals == sorted(vals, reverse=True)
    assert vals[-1] == 0.0
    rep = eps_volume_error(f, g, 0.05, DOM, run=run)
    assert rep.count == int(round(rep.value * rep.n))
    assert rep.ci_low <= rep.value <= rep.ci_high
    assert is_eps_delta_close(rep, rep.ci_high + 1e-9)
    assert not is_eps_delta_close(rep, rep.ci_high)


def test_ky_fan_distance(dw_run):
    f, g, run = dw_run
    assert ky_fan_distance(f, f, DOM, n=500) == pytest.approx(1e-4)
    grid = np.linspace(0.01, 4.0, 400)
    d = ky_fan_distance(domain=DOM, run=run, eps_grid=grid)
    # brute force over the same grid
    frac = np.array([np.mean(run.sup > e) for e in grid])
    assert d == grid[np.argmax(frac < grid)]
    with pytest.raises(ValueError):
        ky_fan_distance(domain=DOM, run=run, eps_grid=[0.0, 1.0])


def test_lp_bound_and_certificate(dw_run):
    f, g, run = dw_run
    D = DOM.diameter
    assert lp_bound(0.1, 0.02, D, 2) == pytest.approx(0.01 + 0.02 * 16)
    lp = lp_error(f, g, 2, DOM, run=run)
    clos = eps_volume_error(f, g, 1.0, DOM, run=run)
    holds, margin = check_lp_bound(lp, clos, 0.05, D)
    assert holds and margin == pytest.approx(lp_bound(1.0, 0.05, D, 2) - lp.value)
    with pytest.raises(BoundNotCertified):
        check_lp_bound(lp, eps_volume_error(f, g, 1e-4, DOM, run=run), 0.01, D)
    with pytest.raises(ValueError):
        lp_error(f, g, 0.5, DOM, run=run)


def test_identity_lp_is_zero():
    f = double_well()
    rep = lp_error(f, f, 2, DOM, n=300)
    assert rep.value == 0.0 and rep.value_long == 0.0


@pytest.mark.parametrize("p", [1, 2])
def test_partition_identity(dw_run, p):
    f, g, run = dw_run
    matching = run.registries[0].match(run.registries[1])
    good, eps_hat, delta_hat = good_set_summary(run, matching)
    assert 0 < delta_hat < 0.1
    for long in (False, True):
        mean, mid, full, ok = partition_check(run, good, eps_hat, DOM.diameter, p, long)
        assert ok and mean <= mid <= full


def test_drift_from_synthetic_times():
    T = 2.0
    k = np.arange(1, 51)
    ta = k * T
    tb = k * T * (1 - 0.001) + 0.01
    dr = drift_from_times(ta, tb, T)
    assert dr.slope == pytest.approx(2 * math.pi * 0.001, rel=1e-9)
    assert dr.r2 == pytest.approx(1.0)
    flat = drift_from_times(ta, ta, T)
    assert flat.slope == 0.0 and flat.r2 == 0.0


def test_phase_drift_closed_form():
    h = 0.02
    A, B = RadialCycleField(omega=1.0), RadialCycleField(omega=1.0 + h)
    ca = locate_cycle(A, [1.0, 0.0])
    dr = phase_drift(A, B, ca, n_periods=30)
    assert dr.slope == pytest.approx(2 * math.pi * h / (1 + h), rel=1e-8)
    assert phase_drift(A, A, ca, n_periods=10).slope == pytest.approx(0.0, abs=1e-8)
    fixed = single_cycle_scaling(B, locate_cycle(B, [1.0, 0.0]), ca.period).corrected
    assert abs(phase_drift(A, fixed, ca, n_periods=30).slope) < 1e-9


def test_crossing_times_are_periodic():
    f = RadialCycleField(omega=2.0)
    sec = PoincareSection([1.0, 0.0], [0.0, 1.0], radius=0.5)
    t = crossing_times(f, sec, [1.0, -0.1], 5)
    assert np.allclose(np.diff(t), math.pi, rtol=1e-9)


def test_taxonomy_labels():
    # basin mismatch -> BType, phase slip on a matched cycle -> PType
    fa = MultiCycleField(omegas=[1.0, 1.0])
    fb = MultiCycleField(omegas=[1.0, 1.05])
    ca = [locate_cycle(fa, [c[0] + 1.0, 0.0]) for c in fa.centers]
    cb = [locate_cycle(fb, [c[0] + 1.0, 0.0]) for c in fb.centers]
    ra, rb = AttractorRegistry.from_cycles(ca), AttractorRegistry.from_cycles(cb)
    X = np.array([[-0.75, 0.0], [2.75, 0.0], [-2.75, 0.3]])
    dom = Domain((-4.0, -2.5), (4.0, 2.5))
    run = run_pair(fa, fb, X, ra, rb, dom)
    labels, diag = classify_errors(run, 0.05, {0: 0, 1: 1}, {1: (ca[1], cb[1])}, 10, fa, fb)
    assert labels[0] == TaxonomyLabel.WITHIN_EPS
    assert labels[1] == TaxonomyLabel.P_TYPE
    assert diag[1]["drift_slope"] != 0
    # swap the matching so cycle 0 is mismatched
    labels, _ = classify_errors(run, 0.05, {0: 1, 1: 0}, None, 10, fa, fb)
    assert TaxonomyLabel.B_TYPE in labels


def test_per_sample_csv(dw_run):
    _, _, run = dw_run
    text = per_sample_csv(run)
    lines = text.splitlines()
    assert lines[0] == "ic0,sup_dist,label,lp_avg"
    assert len(lines) == run.n + 1
