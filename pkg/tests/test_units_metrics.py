import math

import numpy as np
import pytest

from gwpcn.units_metrics import (
    RateValue,
    db_to_linear,
    dbm_to_watts,
    is_degenerate,
    jain_index,
    noise_power,
    rate,
    to_bits_per_second,
    watts_to_dbm,
)


@pytest.mark.parametrize("dbm, watts", [(30, 1.0), (0, 1e-3), (20, 0.1)])
def test_dbm_to_watts(dbm, watts):
    assert dbm_to_watts(dbm) == pytest.approx(watts, rel=1e-15)


@pytest.mark.parametrize(
    "psd, bw, watts", [(-160, 1e6, 1e-13), (-160, 1, 1e-19), (-100, 1e3, 1e-10)]
)
def test_noise_power(psd, bw, watts):
    assert noise_power(psd, bw) == pytest.approx(watts, rel=1e-12)


def test_noise_power_rejects_bad_bandwidth():
    with pytest.raises(ValueError):
        noise_power(-160, 0)


def test_db_to_linear_gap():
    assert db_to_linear(9.8) == pytest.approx(9.549925860214358)


@pytest.mark.parametrize(
    "e, t, a, expected", [(0, 0.5, 7, 0.0), (1, 0, 7, 0.0), (1, 1, 1, 1.0)]
)
def test_rate_examples(e, t, a, expected):
    assert rate(e, t, a) == expected


def test_rate_rejects_negative_inputs():
    with pytest.raises(ValueError):
        rate(-1.0, 0.5, 1.0)
    with pytest.raises(ValueError):
        rate(np.array([1.0]), np.array([-0.5]), 1.0)


def test_rate_tiny_time_uses_limit():
    # tau log2(1 + c/tau) -> 0 as tau -> 0, and stays smooth on the way.
    vals = [rate(1.0, t, 1.0) for t in (1e-13, 1e-14, 1e-16)]
    assert all(0 < v < 1e-11 for v in vals)
    assert vals == sorted(vals, reverse=True)
    assert rate(1.0, 1e-13, 1.0) == pytest.approx(1e-13 * math.log2(1 + 1e13), rel=1e-12)


def test_rate_array_matches_scalar():
    e = np.array([0.0, 1.0, 2.0, 3.0])
    t = np.array([0.5, 0.0, 0.25, 1.0])
    a = np.array([1.0, 2.0, 3.0, 0.5])
    arr = rate(e, t, a)
    assert list(arr) == [rate(*x) for x in zip(e, t, a)]


@pytest.mark.parametrize("rates, expected", [([1, 1], 1.0), ([1, 0], 0.5), ([3, 1], 0.8)])
def test_jain_index(rates, expected):
    assert jain_index(rates) == pytest.approx(expected, rel=1e-15)


def test_jain_index_all_zero_is_fair_and_degenerate():
    assert jain_index([0.0, 0.0]) == 1.0
    assert is_degenerate([0.0, 0.0])
    assert not is_degenerate([0.0, 1e-30])


def test_jain_index_errors():
    with pytest.raises(ValueError):
        jain_index([])
    with pytest.raises(ValueError):
        jain_index([1.0, -1.0])


def test_rate_value_and_bandwidth_scaling():
    r = RateValue(2.5)
    assert r.bits_per_second == 2.5e6
    assert r.mbits_per_second == 2.5
    assert to_bits_per_second(2.5, 2e6) == 5e6
    with pytest.raises(ValueError):
        RateValue(-1.0)


def test_watts_round_trip_array():
    x = np.array([1e-13, 1e-3, 1.0, 40.0])
    assert np.allclose(dbm_to_watts(watts_to_dbm(x)), x, rtol=1e-12, atol=0)
