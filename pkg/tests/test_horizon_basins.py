import math

import numpy as np
import pytest
from scipy.integrate import quad

from approx.basins import (basin_mismatch_volume, basin_scaling_experiment, fixed_point_registry,
                           label_basin, locate_separatrix_1d, mismatch_mask, perturbed_root)
from approx.dynsys import Domain
from approx.horizon import (UNRESOLVED, Attractor, AttractorRegistry, HorizonPolicy,
                            TopologyChanged, run_pair)
from approx.zoo import (PerturbationFamily, PolyCosField, cos_perturbation, double_well,
                        make_perturbed, scale_field)

DOM = Domain((-2.0,), (2.0,))


def dw_exact(x0, t):
    return x0 * math.exp(t) / math.sqrt(1 + x0 * x0 * (math.exp(2 * t) - 1))


def test_registry_validation_and_capture():
    a = Attractor(0, "point", np.array([[-1.0]]), 1.5)
    b = Attractor(1, "point", np.array([[1.0]]), 1.5)
    reg = AttractorRegistry.build([a, b])
    assert reg.capture_radius == pytest.approx(0.2)
    assert reg.capture(np.array([[-0.9], [0.0], [1.15]])).tolist() == [0, UNRESOLVED, 1]
    with pytest.raises(ValueError):
        AttractorRegistry([a, b], 1.5)
    with pytest.raises(ValueError):
        AttractorRegistry([], 0.1)


def test_registry_from_fixed_points():
    reg = fixed_point_registry(double_well(), DOM)
    assert len(reg.attractors) == 2
    assert reg.relaxation_time == pytest.approx(1.5)  # 3 / spectral gap 2


def test_matching_and_topology_change():
    ra = fixed_point_registry(double_well(), DOM)
    rb = fixed_point_registry(make_perturbed(double_well(), cos_perturbation(), 0.1), DOM)
    assert ra.match(rb) == {0: 0, 1: 1}
    one = AttractorRegistry.build([Attractor(0, "point", np.array([[1.0]]))])
    with pytest.raises(TopologyChanged):
        ra.match(one)
    far = AttractorRegistry.build([Attractor(0, "point", np.array([[-1.0]])),
                                   Attractor(1, "point", np.array([[3.0]]))])
    with pytest.raises(TopologyChanged):
        ra.match(far)


def test_identical_fields_give_zero_error():
    f = double_well()
    reg = fixed_point_registry(f, DOM)
    X = np.linspace(-1.9, 1.9, 40)[:, None]
    run = run_pair(f, f, X, reg, reg, DOM)
    assert np.all(run.sup == 0.0)
    assert all(np.all(v == 0.0) for v in run.lp.values())
    assert np.array_equal(run.label_a, run.label_b)


def test_time_reparametrized_pair_against_closed_form():
    # doubling the speed keeps every orbit; the error comes only from timing
    f = double_well()
    g = scale_field(f, 2.0)
    reg = fixed_point_registry(f, DOM)
    X = np.array([[0.05], [0.3], [-1.6]])
    run = run_pair(f, g, X, reg, reg, DOM, ps=(2,))
    for i, x0 in enumerate(X[:, 0]):
        T = run.horizon[i]
        ts = np.linspace(0, T, 200001)
        sup = max(abs(dw_exact(x0, t) - dw_exact(x0, 2 * t)) for t in ts[::10])
        assert run.sup[i] == pytest.approx(sup, rel=2e-3)
        avg = quad(lambda t: (dw_exact(x0, t) - dw_exact(x0, 2 * t)) ** 2, 0, T, limit=200)[0] / T
        assert run.lp[2][i] == pytest.approx(avg, rel=1e-3, abs=1e-9)
    assert run.label_a.tolist() == [1, 1, 0]


def test_run_pair_independent_of_jobs():
    f = double_well()
    g = make_perturbed(f, cos_perturbation(), 0.1)
    ra, rb = fixed_point_registry(f, DOM), fixed_point_registry(g, DOM)
    X = np.linspace(-2, 2, 1100)[:, None]
    pol = HorizonPolicy(batch=128)
    a = run_pair(f, g, X, ra, rb, DOM, pol, jobs=1)
    b = run_pair(f, g, X, ra, rb, DOM, pol, jobs=4)
    assert np.array_equal(a.sup, b.sup)
    assert np.array_equal(a.lp[2], b.lp[2])


def test_label_basin_and_unresolved():
    f = double_well()
    reg = fixed_point_registry(f, DOM)
    assert label_basin(f, reg, [0.3], domain=DOM) == 1
    assert label_basin(f, reg, [-0.3], domain=DOM) == 0
    # the source itself never settles
    assert label_basin(f, reg, [0.0], domain=DOM, policy=HorizonPolicy(max_time=20.0)) == UNRESOLVED


def test_mismatch_mask_counts_unresolved():
    la = np.array([0, 1, UNRESOLVED, 1])
    lb = np.array([0, 0, 0, 1])
    assert mismatch_mask(la, lb, {0: 0, 1: 1}).tolist() == [False, True, True, False]


@pytest.mark.parametrize("nu", [0.02, 0.1, 0.3])
def test_separatrix_bisection_matches_root(nu):
    f = make_perturbed(double_well(), cos_perturbation(), nu)
    x = locate_separatrix_1d(f, (-0.9, 0.9), tol=1e-8)
    assert x == pytest.approx(perturbed_root(f), abs=2e-8)


def test_separatrix_bad_bracket():
    with pytest.raises(ValueError):
        locate_separatrix_1d(double_well(), (0.2, 0.9))


def test_mismatch_volume_matches_separatrix_shift():
    f = double_well()
    g = make_perturbed(f, cos_perturbation(), 0.1)
    ra, rb = fixed_point_registry(f, DOM), fixed_point_registry(g, DOM)
    rep = basin_mismatch_volume(f, g, ra, rb, DOM, n=4000)
    exact = abs(perturbed_root(g)) / 4.0
    assert rep.ci_low <= exact <= rep.ci_high
    assert abs(rep.delta_hat - exact) < 2e-3
    assert np.all((rep.mismatched >= 0) & (rep.mismatched <= perturbed_root(g) + 1e-6))
    same = basin_mismatch_volume(f, f, ra, ra, DOM, n=1000)
    assert same.delta_hat == 0.0


def test_scaling_excludes_topology_change():
    # a constant push of size > 2/(3 sqrt 3) destroys one sink
    f = double_well()
    push = PolyCosField(c0=1.0)
    fit = basin_scaling_experiment(f, PerturbationFamily(f, push), [0.05, 0.1, 0.5], DOM, n=500)
    assert fit.excluded == [0.5]
    assert fit.nus == [0.05, 0.1]
    assert fit.slope > 0
