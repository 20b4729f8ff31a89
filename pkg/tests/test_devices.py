import math

import pytest

from gridweave.core import TimeGrid
from gridweave.devices import (Battery, Chp, DeviceFragment, ExogenousSeries,
                               GasBoiler, HeatPump, HotWaterTank, PvArray,
                               RcBuilding, SocOutOfRange, emit_constraints,
                               pv_output, step_battery, step_building,
                               step_tank)
from gridweave.lp import LpBuilder, LpStatus, solve_lp


def test_parameter_validation():
    with pytest.raises(ValueError):
        HeatPump(cop=0.8)
    with pytest.raises(ValueError):
        GasBoiler(efficiency=1.2)
    with pytest.raises(ValueError):
        Chp(eta_e=0.6, eta_th=0.5)  # sum > 1
    with pytest.raises(ValueError):
        Battery(3.0, 1.5, 1.5, soc_init=4.0)
    with pytest.raises(ValueError):
        HotWaterTank(30.0, 8.0, standing_loss=1.0)
    with pytest.raises(ValueError):
        PvArray(area=-1.0)
    with pytest.raises(ValueError):
        RcBuilding(0.0, 0.2, (17.0,) * 24, (24.0,) * 24)


def test_default_comfort_schedule():
    lo, hi = RcBuilding.default_comfort(night=17.0, day=20.0, day_start=7)
    assert lo[:7] == (17.0,) * 7
    assert lo[7:] == (20.0,) * 17
    assert hi == (24.0,) * 24


def test_rc_step_relaxes_to_outdoor_temperature():
    b = RcBuilding(10.0, 0.25, (0.0,) * 24, (40.0,) * 24)
    T = 20.0
    for _ in range(1000):
        T = step_building(T, 0.0, 5.0, 1.0, b)
    assert T == pytest.approx(5.0, abs=1e-6)
    # heat balance: q = U * dT holds temperature steady
    assert step_building(20.0, 0.25 * 15.0, 5.0, 1.0, b) == pytest.approx(20.0)


def test_battery_round_trip_loss():
    bat = Battery(capacity=10.0, p_charge_max=5.0, p_discharge_max=5.0,
                  eta_c=0.95, eta_d=0.95, soc_init=0.0)
    soc = step_battery(0.0, 2.0, 0.0, 1.0, bat)   # stored 2 * 0.95
    assert soc == pytest.approx(1.9)
    # discharging the stored energy returns eta_c*eta_d of what went in
    deliverable = soc * bat.eta_d
    assert deliverable == pytest.approx(2.0 * 0.95 * 0.95)
    soc2 = step_battery(soc, 0.0, deliverable, 1.0, bat)
    assert soc2 == pytest.approx(0.0, abs=1e-12)


def test_battery_rejects_out_of_range():
    bat = Battery(2.0, 1.0, 1.0, soc_init=0.0)
    with pytest.raises(ValueError):
        step_battery(0.0, 2.0, 0.0, 1.0, bat)
    with pytest.raises(SocOutOfRange):
        step_battery(0.0, 0.0, 1.0, 1.0, bat)  # discharging empty


def test_tank_standing_loss():
    tank = HotWaterTank(capacity=30.0, q_charge_max=8.0, standing_loss=0.01)
    soc = step_tank(20.0, 0.0, 0.0, 1.0, tank)
    assert soc == pytest.approx(19.8)
    with pytest.raises(SocOutOfRange):
        step_tank(0.5, 0.0, 2.0, 1.0, tank)


def test_pv_output():
    pv = PvArray(area=50.0, efficiency=0.15)
    assert pv_output(0.4, pv) == pytest.approx(3.0)
    assert pv_output(0.0, pv) == 0.0


def test_series_window_wraps():
    s = ExogenousSeries((1.0, 2.0, 3.0), (0.0,) * 3, (0.0,) * 3, (0.0,) * 3)
    assert s.window(2, 3).t_out == (3.0, 1.0, 2.0)
    with pytest.raises(ValueError):
        ExogenousSeries((1.0,), (-0.1,), (0.0,), (0.0,))


def test_battery_fragment_variable_census():
    # 2-step horizon: charge, discharge, soc per step = 6 vars, 2 dynamics rows
    g = TimeGrid(0, 1.0, 2)
    b = LpBuilder()
    frag = emit_constraints(Battery(3.0, 1.5, 1.5, soc_init=1.0), g, b)
    assert b.n_vars == 6
    assert b.n_rows == 2
    assert set(frag.schedule) == {"bat_charge", "bat_discharge"}
    assert set(frag.soc) == {"battery"}


def test_battery_fragment_dynamics_match_step_function():
    g = TimeGrid(0, 1.0, 3)
    bat = Battery(5.0, 2.0, 2.0, eta_c=0.9, eta_d=0.9, soc_init=2.0)
    b = LpBuilder()
    frag = emit_constraints(bat, g, b)
    # pin a charge/discharge schedule and ask the LP for the soc trajectory
    schedule = [(1.5, 0.0), (0.0, 1.0), (0.5, 0.0)]
    for k, (pc, pd) in enumerate(schedule):
        b.add_row([(frag.schedule["bat_charge"][k], 1.0)], "=", pc)
        b.add_row([(frag.schedule["bat_discharge"][k], 1.0)], "=", pd)
    sol = solve_lp(b.problem())
    assert sol.status is LpStatus.OPTIMAL
    soc = 2.0
    for k, (pc, pd) in enumerate(schedule):
        soc = step_battery(soc, pc, pd, 1.0, bat)
        assert sol.x[frag.soc["battery"][k]] == pytest.approx(soc, abs=1e-9)


def test_tank_fragment_dynamics_match_step_function():
    g = TimeGrid(0, 1.0, 3)
    tank = HotWaterTank(20.0, 6.0, standing_loss=0.02, soc_init=10.0)
    b = LpBuilder()
    frag = emit_constraints(tank, g, b)
    schedule = [(4.0, 0.0), (0.0, 3.0), (2.0, 1.0)]
    for k, (qi, qo) in enumerate(schedule):
        b.add_row([(frag.schedule["tank_charge"][k], 1.0)], "=", qi)
        b.add_row([(frag.schedule["tank_discharge"][k], 1.0)], "=", qo)
    sol = solve_lp(b.problem())
    assert sol.status is LpStatus.OPTIMAL
    soc = 10.0
    for k, (qi, qo) in enumerate(schedule):
        soc = step_tank(soc, qi, qo, 1.0, tank)
        assert sol.x[frag.soc["tank"][k]] == pytest.approx(soc, abs=1e-9)


def test_boiler_fragment_prices_fuel_at_efficiency():
    g = TimeGrid(0, 1.0, 1)
    b = LpBuilder()
    frag = emit_constraints(GasBoiler(efficiency=0.9, q_max=10.0), g, b,
                            fuel_price=0.10)
    q = frag.schedule["boiler_q"][0]
    b.add_row([(q, 1.0)], "=", 9.0)  # 9 kWh heat -> 10 kWh fuel -> 1 CHF
    sol = solve_lp(b.problem())
    assert sol.objective_value == pytest.approx(1.0)


def test_chp_fragment_generates_electricity():
    g = TimeGrid(0, 1.0, 1)
    b = LpBuilder()
    frag = emit_constraints(Chp(0.30, 0.60, 20.0), g, b, fuel_price=0.10)
    (var, coeff), = frag.elec[0]
    assert coeff == -0.30  # generation enters the bus balance negatively
    (hvar, hcoeff), = frag.heat[0]
    assert hcoeff == 0.60


def test_pv_fragment_is_a_constant():
    g = TimeGrid(0, 1.0, 2)
    b = LpBuilder()
    frag = emit_constraints(PvArray(50.0, 0.15), g, b,
                            irradiance=(0.4, 0.0))
    assert b.n_vars == 0
    assert frag.elec_const == [-3.0, 0.0]
    with pytest.raises(ValueError):
        emit_constraints(PvArray(50.0, 0.15), g, LpBuilder())
