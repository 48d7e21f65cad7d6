import math

import numpy as np
import pytest

from gwpcn.maxmin_solvers import (
    MaxminConfig,
    min_energy_for_rate,
    solve_p1_maxmin,
    solve_p1_maxmin_batch,
    solve_special_maxmin,
)
from gwpcn.model import HeteroInstance, NetworkInstance, validate
from gwpcn.oracle import grid_best
from gwpcn.sum_solvers import solve_p1, solve_p3, solve_p4


def coeffs(alpha, harvest, budget=None, e_max=None):
    return NetworkInstance.from_coefficients(alpha, harvest, budget, e_max)


def test_min_energy_zero_rate():
    total, tau, energy = min_energy_for_rate(coeffs([1.0, 1.0], [1.0, 1.0], [1, 1]), 0.0, 0.2)
    assert total == 0.0 and np.all(energy == 0.0)
    assert tau.sum() == pytest.approx(0.8)


def test_min_energy_single_user():
    total, tau, energy = min_energy_for_rate(coeffs([1.0], [0.0], [5.0]), 1.0, 0.0)
    assert tau[0] == pytest.approx(1.0, abs=1e-9)
    assert total == pytest.approx(1.0, rel=1e-9)


def test_min_energy_symmetric_pair():
    _, tau, energy = min_energy_for_rate(coeffs([1.0, 1.0], [0.0, 0.0], [5.0, 5.0]), 0.5, 0.0)
    assert np.allclose(tau, [0.5, 0.5], atol=1e-9)
    assert np.allclose(energy, [0.5, 0.5], rtol=1e-9)


def test_min_energy_infeasible_cases():
    # A 0.1 J cap cannot deliver rate 1 in one slot (needs 1 J).
    assert min_energy_for_rate(coeffs([1.0], [0.0], [0.1]), 1.0, 0.0) is None
    assert min_energy_for_rate(coeffs([1.0], [0.0], [5.0], e_max=0.5), 1.0, 0.0) is None
    with pytest.raises(ValueError):
        min_energy_for_rate(coeffs([1.0], [0.0], [1.0]), -1.0, 0.0)
    with pytest.raises(ValueError):
        min_energy_for_rate(coeffs([1.0], [0.0], [1.0]), 1.0, 1.0)


def test_min_energy_monotone_in_time_and_caps():
    inst = coeffs([1.0, 3.0], [0.5, 0.5], [2.0, 2.0])
    totals = [min_energy_for_rate(inst, 0.6, t0)[0] for t0 in (0.0, 0.1, 0.2, 0.3)]
    assert all(b >= a - 1e-15 for a, b in zip(totals, totals[1:]))
    tight = coeffs([1.0, 3.0], [0.5, 0.5], [0.55, 2.0])
    assert min_energy_for_rate(tight, 0.6, 0.0)[0] >= totals[0] - 1e-15


def test_p1_maxmin_single_user_equals_sum():
    inst = coeffs([1.0], [1.0], [0.2], e_max=0.7)
    assert solve_p1_maxmin(inst).objective == pytest.approx(solve_p1(inst).objective, rel=1e-8)


def test_p1_maxmin_symmetric_pair_is_half_sum():
    inst = coeffs([2.0, 2.0], [0.3, 0.3], [0.1, 0.1], e_max=0.5)
    t = solve_p1_maxmin(inst).objective
    assert t == pytest.approx(solve_p1(inst).objective / 2, rel=1e-8)


def test_p1_maxmin_fig4_constants_against_grid(fig4_pinned):
    rep = solve_p1_maxmin(fig4_pinned)
    ref = grid_best("p1_maxmin", fig4_pinned)
    assert rep.objective == pytest.approx(ref.objective, rel=1e-3)
    assert rep.objective >= ref.objective * (1 - 1e-3)


def test_p1_maxmin_equal_rates_and_sandwich(pairs50):
    cfg = MaxminConfig()
    reps = solve_p1_maxmin_batch(pairs50, cfg)
    for inst, rep in zip(pairs50, reps):
        t = rep.objective
        assert validate(inst, rep.allocation) == []
        assert np.ptp(rep.per_user_rate) <= 2 * cfg.t_tol * max(1.0, t)
        s = solve_p1(inst).objective
        assert 2 * t <= s + 2 * cfg.t_tol


def test_batch_matches_single_solves(pairs50):
    batch = solve_p1_maxmin_batch(pairs50[:5])
    for inst, rep in zip(pairs50[:5], batch):
        assert rep.objective == pytest.approx(solve_p1_maxmin(inst).objective, rel=1e-12)


def test_p2_maxmin_symmetric_known_value():
    inst = coeffs([1.0, 1.0], [1.0, 1.0], [1.0, 1.0], e_max=3.0)
    rep = solve_special_maxmin("P2", inst)
    assert rep.allocation.tau0 == 0.0
    assert np.allclose(rep.allocation.tau, [0.5, 0.5], atol=1e-8)
    assert rep.objective == pytest.approx(0.5 * math.log2(3.0), rel=1e-9)


def test_p3_maxmin_symmetric_and_structure():
    inst = coeffs([1.0, 1.0], [0.7, 0.7])
    rep = solve_special_maxmin("p3", inst)
    assert rep.allocation.tau[0] == pytest.approx(rep.allocation.tau[1], abs=1e-9)
    assert np.ptp(rep.per_user_rate) <= 1e-8
    assert np.allclose(rep.allocation.energy, inst.harvest * rep.allocation.tau0, rtol=1e-9)
    assert rep.objective == pytest.approx(solve_p3(inst).objective / 2, rel=1e-8)


def test_p3_maxmin_asymmetric_against_grid():
    inst = coeffs([1.0, 1.0], [3.0, 0.4])
    rep = solve_special_maxmin("p3", inst)
    assert rep.objective >= grid_best("p3_maxmin", inst).objective * (1 - 1e-3)
    with pytest.raises(ValueError):
        solve_special_maxmin("p3", coeffs([1.0], [1.0], [0.1]))


@pytest.mark.parametrize("e_max", [0.3, 1.2, 3.0])
def test_p4_maxmin_against_grid(e_max):
    inst = HeteroInstance(harvest=[5.0], gamma=[200.0], theta=[20.0], e_max=e_max)
    rep = solve_special_maxmin("p4", inst)
    ref = grid_best("p4_maxmin", inst)
    assert rep.allocation.tau0 > 0 and rep.per_user_rate[0] > 0
    assert rep.objective >= ref.objective * (1 - 1e-3)
    assert rep.objective <= solve_p4(inst).objective / 2 + 1e-9


def test_p4_maxmin_legacy_only():
    inst = HeteroInstance(harvest=[], gamma=[], theta=[2.0, 2.0], e_max=1.0)
    rep = solve_special_maxmin("p4", inst)
    assert np.allclose(rep.allocation.tau2, [0.5, 0.5], atol=1e-8)
    assert rep.objective == pytest.approx(0.5 * math.log2(1 + 2.0 * 0.5 / 0.5), rel=1e-8)


def test_zero_gain_user_forces_zero():
    rep = solve_p1_maxmin(coeffs([0.0, 1.0], [1.0, 1.0], [1.0, 1.0]))
    assert rep.objective == 0.0


def test_unknown_variant_and_config_ranges():
    with pytest.raises(ValueError):
        solve_special_maxmin("p5", coeffs([1.0], [1.0]))
    with pytest.raises(ValueError):
        MaxminConfig(t_tol=0.0)
    with pytest.raises(ValueError):
        MaxminConfig(tau0_grid=0)
