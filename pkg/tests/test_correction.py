import math

import numpy as np
import pytest

from approx.correction import (CORRECTION_TOL, CorrectionError, CorrectionProblem,
                               DominanceViolated, additive_correction, build_problem,
                               dominance_certificate, fd_period_jacobian, locate_cycle,
                               measure_periods, multiplicative_correction, period_jacobian,
                               single_cycle_scaling, verify_correction)
from approx.zoo import MultiCycleField, RadialCycleField


@pytest.fixture(scope="module")
def two_cycles():
    f = MultiCycleField(omegas=[1.0, 1.2], beta=0.3)
    cycles = [locate_cycle(f, [c[0] + 1.0, c[1]]) for c in f.centers]
    return f, cycles


def test_located_periods(two_cycles):
    f, cycles = two_cycles
    assert [c.period for c in cycles] == pytest.approx(f.periods, rel=1e-10)


def test_single_cycle_scaling_closed_form():
    f = RadialCycleField(omega=1.0)
    c = locate_cycle(f, [1.0, 0.0])
    res = single_cycle_scaling(f, c, 2 * math.pi * 1.05)
    assert res.scale == pytest.approx(1 / 1.05, rel=1e-10)
    assert res.success
    with pytest.raises(ValueError):
        single_cycle_scaling(f, c, -1.0)


def test_problem_validation(two_cycles):
    f, cycles = two_cycles
    with pytest.raises(ValueError):
        CorrectionProblem(f, cycles, [1.0])
    with pytest.raises(ValueError):
        CorrectionProblem(f, cycles, [1.0, -1.0])
    prob = build_problem(f, cycles, [6.0, 5.0])
    assert prob.n == 2
    assert prob.leakage() == 0.0
    assert prob.bumps[0].r_in == pytest.approx(0.3, rel=1e-3)  # 0.2 of the 1.5 gap


def test_multiplicative_without_leakage_is_closed_form(two_cycles):
    f, cycles = two_cycles
    T_hat = np.array([c.period for c in cycles])
    targets = T_hat * np.array([1.02, 0.97])
    res = multiplicative_correction(build_problem(f, cycles, targets))
    assert np.allclose(res.alpha, (T_hat - targets) / targets, rtol=0, atol=1e-15)
    assert res.success
    assert np.all(res.relative_residuals < 1e-9)


def test_multiplicative_with_leakage(two_cycles):
    f, cycles = two_cycles
    prob = build_problem(f, cycles, [c.period * s for c, s in zip(cycles, (1.03, 0.98))],
                         r_in=0.2, r_out=1.7)
    xi = prob.leakage()
    assert 0 < xi < 1
    res = multiplicative_correction(prob)
    assert res.iterations >= 1 and res.history[-1] < 1e-13
    assert np.all(res.relative_residuals < 1e-9)


def test_multiplicative_dominance_violated(two_cycles):
    f, cycles = two_cycles
    prob = build_problem(f, cycles, [6.0, 5.0], r_in=1.6, r_out=1.8)
    with pytest.raises(DominanceViolated) as info:
        multiplicative_correction(prob)
    assert info.value.xi == 1.0


def test_period_jacobian_matches_finite_differences(two_cycles):
    f, cycles = two_cycles
    prob = build_problem(f, cycles, [6.0, 5.0])
    pj = period_jacobian(f, cycles, prob.bump_fields)
    fd = fd_period_jacobian(f, cycles, prob.bump_fields)
    # aligned bumps: J_ii = -T_i, no cross terms without leakage
    assert np.allclose(np.diag(pj.J), [-c.period for c in cycles], rtol=1e-8)
    assert np.allclose(pj.J, fd.J, rtol=1e-6, atol=1e-6)
    assert pj.zeta == 0.0 and pj.nu == 0.0
    ok, margin, analytic = dominance_certificate(pj)
    assert ok and margin > 0 and analytic is True


def test_dominance_certificate_on_matrices():
    assert dominance_certificate(np.array([[-3.0, 1.0], [0.5, -2.0]]))[0]
    ok, margin, analytic = dominance_certificate(np.array([[-1.0, 1.5], [0.5, -2.0]]))
    assert not ok and margin == pytest.approx(-0.5) and analytic is None


@pytest.mark.parametrize("jac", ["malkin", "fd"])
def test_additive_single_cycle(jac):
    f = RadialCycleField(beta=0.4)
    c = locate_cycle(f, [1.0, 0.0])
    prob = build_problem(f, [c], [c.period * 0.96])
    res = additive_correction(prob, jacobian=jac)
    assert res.success and res.iterations <= 5
    assert res.relative_residuals[0] < 1e-9
    ver = verify_correction(res, [c])
    assert ver.hyperbolic
    assert ver.shifts[0] < 1e-6  # aligned bump keeps the orbit


def test_additive_frozen_jacobian_still_converges():
    f = RadialCycleField(beta=0.4)
    c = locate_cycle(f, [1.0, 0.0])
    res = additive_correction(build_problem(f, [c], [c.period * 1.03]), frozen=True, max_iter=20)
    assert res.success


def test_additive_failure_reports_history():
    f = RadialCycleField()
    c = locate_cycle(f, [1.0, 0.0])
    with pytest.raises(CorrectionError) as info:
        additive_correction(build_problem(f, [c], [c.period * 1.3]), max_iter=1)
    assert len(info.value.history) == 2


def test_measure_periods_roundtrip(two_cycles):
    f, cycles = two_cycles
    again = measure_periods(f, cycles)
    assert [c.period for c in again] == pytest.approx([c.period for c in cycles], rel=1e-12)
    assert CORRECTION_TOL == 1e-6
