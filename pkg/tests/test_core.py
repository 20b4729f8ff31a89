import math

import numpy as np
import pytest

from gridweave.core import (Band, Profile, TariffSchedule, TimeGrid,
                            aggregate, band_violation, tariff_price)


def test_time_grid_hour_wraps_past_midnight():
    g = TimeGrid(start_hour=22, step_hours=1.0, n_steps=6)
    assert [g.hour_of_day(k) for k in range(6)] == [22, 23, 0, 1, 2, 3]


def test_time_grid_rejects_bad_args():
    with pytest.raises(ValueError):
        TimeGrid(n_steps=0)
    with pytest.raises(ValueError):
        TimeGrid(step_hours=0.0)


def test_profile_length_checked():
    g = TimeGrid(0, 1.0, 4)
    with pytest.raises(ValueError):
        Profile(g, (1.0, 2.0))
    with pytest.raises(ValueError):
        Profile(g, (1.0, float("nan"), 0.0, 0.0))


def test_profile_arithmetic_and_shift():
    g = TimeGrid(0, 1.0, 4)
    a = Profile(g, (1.0, 2.0, 3.0, 4.0))
    b = Profile(g, (0.5, 0.5, 0.5, 0.5))
    assert (a + b).values == (1.5, 2.5, 3.5, 4.5)
    assert (a - b).values == (0.5, 1.5, 2.5, 3.5)
    assert a.shift(1).values == (2.0, 3.0, 4.0, 4.0)
    assert a.shift(2).values == (3.0, 4.0, 4.0, 4.0)
    np.testing.assert_array_equal(a.as_array(), [1.0, 2.0, 3.0, 4.0])


def test_profiles_on_different_grids_do_not_mix():
    a = Profile(TimeGrid(0, 1.0, 4), (1.0,) * 4)
    b = Profile(TimeGrid(1, 1.0, 4), (1.0,) * 4)
    with pytest.raises(ValueError):
        a + b


def test_day_night_tariff_table():
    t = TariffSchedule.day_night()
    # 0.24 CHF/kWh during day hours (7:00-21:59), 0.13 at night
    for h in range(24):
        expected = 0.24 if 7 <= h <= 21 else 0.13
        assert tariff_price(t, h) == expected


def test_ahead24_tariff_table():
    t = TariffSchedule.ahead24()
    for h in range(24):
        expected = 0.16 if 11 <= h <= 16 else 0.21
        assert tariff_price(t, h) == expected
    assert t.export_price == 0.1
    assert t.c_p_grid == 0.5
    assert t.c_global == 0.25


def test_tariff_invariants():
    with pytest.raises(ValueError):
        TariffSchedule(import_price=(0.05,) * 24, export_price=0.1)
    with pytest.raises(ValueError):
        tariff_price(TariffSchedule.day_night(), 24)


def test_aggregate_fixed_order_and_empty():
    g = TimeGrid(0, 1.0, 3)
    ps = [Profile(g, (1.0, 0.0, 2.0)), Profile(g, (0.5, 0.5, 0.5))]
    assert aggregate(ps).values == (1.5, 0.5, 2.5)
    assert aggregate([], g).values == (0.0, 0.0, 0.0)
    with pytest.raises(ValueError):
        aggregate([])


def test_band_violation_deadband():
    g = TimeGrid(0, 1.0, 4)
    band = Band(Profile(g, (10.0,) * 4), half_width=2.0)
    actual = Profile(g, (10.0, 12.0, 13.5, 7.0))
    v = band_violation(actual, band)
    assert v.values == (0.0, 0.0, 1.5, 1.0)
    # half_width 0 degenerates to |actual - committed|
    tight = Band(Profile(g, (10.0,) * 4), half_width=0.0)
    assert band_violation(actual, tight).values == (0.0, 2.0, 3.5, 3.0)


def test_band_rejects_negative_width():
    g = TimeGrid(0, 1.0, 2)
    with pytest.raises(ValueError):
        Band(Profile.zeros(g), half_width=-1.0)
