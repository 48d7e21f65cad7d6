import math

import numpy as np
import pytest

import oracles
from gwpcn.model import Allocation, HeteroInstance, NetworkInstance, report_from_allocation, validate
from gwpcn.oracle import Certificate, GridSpec, certify, grid_best


def coeffs(alpha, harvest, budget=None, e_max=None):
    return NetworkInstance.from_coefficients(alpha, harvest, budget, e_max)


def test_p3_single_user_converges_to_closed_form():
    rep = grid_best("p3", coeffs([1.0], [1.0]))
    # Near the peak the error is quadratic in the final spacing (~2.6e-4).
    assert rep.objective == pytest.approx(math.log2(math.e) / math.e, abs=1e-6)
    assert rep.allocation.tau0 == pytest.approx((math.e - 1) / math.e, abs=1e-3)


@pytest.mark.parametrize("gamma", [0.05, 3.0, 250.0])
def test_p3_single_user_any_gain(gamma):
    rep = grid_best("p3", coeffs([1.0], [gamma]))
    tau0, _, best = oracles.p3_closed_form([gamma])
    assert rep.objective == pytest.approx(best, rel=1e-6)
    assert abs(rep.allocation.tau0 - tau0) <= 10 * rep.residual


def test_p1_single_user_rich_budget_skips_harvesting():
    inst = coeffs([1.0], [0.01], [5.0], e_max=3.0)
    rep = grid_best("p1", inst)
    assert rep.allocation.tau0 == pytest.approx(0.0, abs=1e-6)
    assert rep.objective == pytest.approx(math.log2(4.0), rel=1e-6)


def test_trace_is_non_decreasing_and_feasible(pairs100):
    for problem in ("p1", "p2", "p1_maxmin"):
        rep = grid_best(problem, pairs100[0])
        assert np.all(np.diff(rep.objective_trace) >= 0)
        assert validate(pairs100[0], rep.allocation) == []
        assert rep.iterations == GridSpec().refine_rounds


def test_final_spacing_reported():
    spec = GridSpec(points_per_dim=11, refine_rounds=3, shrink_factor=0.5)
    rep = grid_best("p2", coeffs([1.0, 2.0], [0.0, 0.0], [1.0, 1.0], e_max=1.5), spec)
    assert rep.residual == pytest.approx(0.5**2 / 10)


def test_tight_emax_still_feasible():
    inst = coeffs([1.0, 2.0], [1.0, 1.0], [0.0, 0.0], e_max=1e-9)
    rep = grid_best("p1", inst)
    assert validate(inst, rep.allocation) == []
    assert rep.allocation.energy.sum() <= 1e-9 * (1 + 1e-12)


def test_p4_grid_structure():
    inst = HeteroInstance(harvest=[5.0], gamma=[200.0], theta=[20.0], e_max=1.2)
    rep = grid_best("p4", inst)
    a = rep.allocation
    assert 5.0 * a.tau0 + a.e_bar == pytest.approx(1.2)
    assert validate(inst, a) == []


def test_dimension_and_type_guards():
    with pytest.raises(ValueError):
        grid_best("p1", coeffs([1.0] * 4, [1.0] * 4))
    with pytest.raises(TypeError):
        grid_best("p4", coeffs([1.0], [1.0]))
    with pytest.raises(ValueError):
        grid_best("p3", coeffs([1.0], [1.0], [0.5]))
    with pytest.raises(ValueError):
        grid_best("p9", coeffs([1.0], [1.0]))


@pytest.mark.parametrize("kw", [{"points_per_dim": 2}, {"refine_rounds": 0}, {"shrink_factor": 1.0}])
def test_grid_spec_ranges(kw):
    with pytest.raises(ValueError):
        GridSpec(**kw)


def _report(inst, energy, problem="p2"):
    return report_from_allocation(inst, Allocation(0.0, [1.0], [energy]), problem)


def test_certify_identical_passes_with_zero_margin():
    inst = coeffs([1.0], [0.0], [1.0])
    rep = _report(inst, 1.0)
    assert certify(rep, rep, 1e-3, inst) == Certificate(True, 0.0, ())


def test_certify_solver_beating_oracle_passes():
    inst = coeffs([1.0], [0.0], [1.0])
    cert = certify(_report(inst, 1.0), _report(inst, 0.9), 1e-3, inst)
    assert cert.passed and cert.margin > 0


def test_certify_one_percent_short_fails():
    inst = coeffs([1.0], [0.0], [10.0])
    ref = _report(inst, 3.0)  # rate 2
    short = _report(inst, 2.0**1.98 - 1.0)  # rate 1.98
    cert = certify(short, ref, 1e-3, inst)
    assert not cert.passed
    assert cert.margin == pytest.approx(-0.02)


def test_certify_mismatch_errors():
    inst = coeffs([1.0], [0.0], [1.0])
    with pytest.raises(ValueError):
        certify(_report(inst, 1.0, "p2"), _report(inst, 1.0, "p1"), 1e-3, inst)
    other = coeffs([1.0, 1.0], [0.0, 0.0], [1.0, 1.0])
    two = report_from_allocation(other, Allocation(0.0, [0.5, 0.5], [1.0, 1.0]), "p2")
    with pytest.raises(ValueError):
        certify(_report(inst, 1.0), two, 1e-3, inst)


def test_two_user_maxmin_follows_cap_curve(pairs50):
    # Here the optimum keeps user 2 at its cap while tau0 moves; an allocation
    # with equal rates of 3.99252 is known to be feasible.
    inst = pairs50[40]
    rep = grid_best("p1_maxmin", inst)
    assert rep.objective >= 3.99252 * (1 - 1e-4)
    assert np.ptp(rep.per_user_rate) <= 1e-9 * rep.objective
    assert validate(inst, rep.allocation) == []
