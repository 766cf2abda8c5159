import math

import numpy as np
import pytest

from approx.correction import locate_cycle
from approx.dynsys import Domain, FunctionField
from approx.invariants import (CycleNotFoundError, DegenerateAdjointError, NonReturningError,
                               PoincareSection, adjoint_solution, classify_eigenvalues,
                               find_fixed_points, find_limit_cycle, hausdorff_distance,
                               malkin_integral, monodromy, poincare_return, spectral_gap)
from approx.zoo import RadialCycleField, cos_perturbation, double_well, make_perturbed


def test_classification():
    assert classify_eigenvalues(np.array([-1.0, -2.0])) == "stable"
    assert classify_eigenvalues(np.array([1.0, 2.0])) == "unstable"
    assert classify_eigenvalues(np.array([-1.0, 2.0])) == "saddle"
    assert classify_eigenvalues(np.array([-1.0, 1e-9])) == "non-hyperbolic"
    assert classify_eigenvalues(np.array([-0.5 + 2j, -0.5 - 2j])) == "stable"


def test_perturbed_double_well_roots():
    f = make_perturbed(double_well(), cos_perturbation(), 0.1)
    fps = find_fixed_points(f, Domain((-2.0,), (2.0,)))
    assert [fp.classification for fp in fps] == ["stable", "unstable", "stable"]
    for fp in fps:
        assert fp.residual < 1e-10
    # oracle: scipy root bracketing on the scalar field
    from scipy.optimize import brentq
    r0 = brentq(lambda x: f(np.array([x]))[0], -0.5, 0.5, xtol=1e-15)
    assert fps[1].location[0] == pytest.approx(r0, abs=1e-12)
    with pytest.raises(ValueError):
        spectral_gap(fps[1])


def test_planar_fixed_points():
    # saddle at the origin of x' = x, y' = -y; spiral sink of a damped rotation
    saddle = FunctionField(2, lambda x: np.stack([x[..., 0], -x[..., 1]], -1))
    fps = find_fixed_points(saddle, Domain((-1.0, -1.0), (1.0, 1.0)), per_axis=3)
    assert len(fps) == 1 and fps[0].classification == "saddle"
    spiral = FunctionField(2, lambda x: np.stack([-0.1 * x[..., 0] - x[..., 1],
                                                  x[..., 0] - 0.1 * x[..., 1]], -1))
    (fp,) = find_fixed_points(spiral, Domain((-1.0, -1.0), (1.0, 1.0)), per_axis=3)
    assert fp.stable and spectral_gap(fp) == pytest.approx(0.1)


def test_poincare_return_time_of_circle():
    f = RadialCycleField(omega=2.0)
    sec = PoincareSection([1.0, 0.0], [0.0, 1.0], radius=0.5)
    x, tau = poincare_return(f, sec, [1.0, 0.0])
    assert tau == pytest.approx(math.pi, rel=1e-10)
    assert abs(sec.signed(x)) < 1e-11


def test_poincare_non_return():
    f = FunctionField(2, lambda x: np.stack([np.ones_like(x[..., 0]), np.zeros_like(x[..., 0])], -1))
    sec = PoincareSection([0.0, 0.0], [0.0, 1.0])
    with pytest.raises(NonReturningError):
        poincare_return(f, sec, [0.0, -1.0], max_time=5.0)


@pytest.mark.parametrize("kappa,omega,beta", [(1.0, 1.0, 0.0), (0.5, 2.0, 0.3), (2.0, 0.7, -0.4)])
def test_cycle_period_and_multipliers(kappa, omega, beta):
    f = RadialCycleField(kappa, omega, beta)
    c = locate_cycle(f, [1.05, 0.02])
    assert c.period == pytest.approx(2 * math.pi / omega, rel=1e-9)
    assert np.allclose(np.linalg.norm(c.orbit, axis=1), 1.0, atol=1e-8)
    assert abs(c.trivial_multiplier - 1) < 1e-6
    (mu,) = c.nontrivial_multipliers
    assert abs(mu) == pytest.approx(math.exp(-2 * kappa * c.period), rel=1e-4, abs=1e-9)
    assert c.stable and c.hyperbolic
    M, mus = monodromy(f, c)
    assert np.allclose(M, c.monodromy, atol=1e-8)
    assert abs(mus[0]) == pytest.approx(1.0, abs=1e-6)


def test_unstable_cycle_detected_as_unstable():
    f = RadialCycleField(kappa=-0.5, omega=1.0)
    c = locate_cycle(f, [1.0, 0.0])
    assert c.hyperbolic and not c.stable


def test_cycle_not_found():
    f = FunctionField(2, lambda x: np.stack([-x[..., 1], x[..., 0]], -1) - 0.2 * x)
    sec = PoincareSection([1.0, 0.0], [0.0, 1.0])
    with pytest.raises((CycleNotFoundError, NonReturningError)):
        find_limit_cycle(f, sec, [1.0, 0.0], max_iter=5, max_time=100.0)


def test_adjoint_matches_closed_form():
    # on the unit circle of an isochronous rotation Z = (-y, x) / omega
    f = RadialCycleField(kappa=1.0, omega=2.0)
    c = locate_cycle(f, [1.0, 0.0])
    a = adjoint_solution(f, c)
    ref = np.column_stack([-c.orbit[:, 1], c.orbit[:, 0]]) / 2.0
    assert np.allclose(a.Z, ref, atol=1e-8)
    assert a.max_norm == pytest.approx(0.5, rel=1e-8)
    assert a.normalization_residual < 1e-8 and a.periodicity_residual < 1e-8


def test_degenerate_adjoint():
    # a neutral rotation has a double unit multiplier
    f = FunctionField(2, lambda x: np.stack([-x[..., 1], x[..., 0]], -1))
    c = find_limit_cycle(f, PoincareSection([1.0, 0.0], [0.0, 1.0]), [1.0, 0.0])
    with pytest.raises(DegenerateAdjointError):
        adjoint_solution(f, c)


def test_malkin_integral_of_the_field_itself():
    # g = f speeds the flow up uniformly, so dT/dalpha = -T
    f = RadialCycleField(beta=0.6)
    c = locate_cycle(f, [1.0, 0.0])
    val, err = malkin_integral(f, c, adjoint_solution(f, c))
    assert val == pytest.approx(-c.period, rel=1e-9)
    assert err < 1e-9


def test_hausdorff():
    a = np.array([[0.0, 0.0], [1.0, 0.0]])
    b = np.array([[0.0, 0.5], [1.0, 0.0], [3.0, 0.0]])
    assert hausdorff_distance(a, b) == pytest.approx(2.0)
    assert hausdorff_distance(a, a) == 0.0


def test_section_validation():
    with pytest.raises(ValueError):
        PoincareSection([0.0, 0.0], [0.0, 0.0])
    s = PoincareSection([0.0, 0.0, 0.0], [0.0, 0.0, 2.0])
    B = s.basis()
    assert np.allclose(B @ B.T, np.eye(2))
    assert np.allclose(B @ s.normal, 0.0)
