import itertools

import pytest

from gridweave.core import (Band, Profile, TariffSchedule, TimeGrid,
                            band_violation)
from gridweave.devices import (Battery, ExogenousSeries, HeatPump, RcBuilding)
from gridweave.mpc import (BuildingState, ControllerModel, MpcInfeasible,
                           MpcInput, initial_state, solve_mpc)


def flat_series(n, t_out=5.0, base=0.0, dhw=0.0, irr=0.0):
    return ExogenousSeries((t_out,) * n, (irr,) * n, (base,) * n, (dhw,) * n)


def make_tariff(prices, **kw):
    return TariffSchedule(import_price=tuple(prices), **kw)


def test_empty_problem_zero_cost():
    g = TimeGrid(0, 1.0, 6)
    model = ControllerModel("idle", None, (), flat_series(6),
                            TariffSchedule.day_night())
    plan = solve_mpc(model, MpcInput(0, BuildingState(20.0), Profile.zeros(g)))
    assert plan.net_load.values == (0.0,) * 6
    assert plan.objective == pytest.approx(0.0, abs=1e-12)
    assert plan.cost_breakdown.total == pytest.approx(0.0, abs=1e-12)


def test_battery_schedule_matches_discrete_oracle():
    """6-step horizon, cheap hours 0-2 and dear hours 3-5: the LP must do at
    least as well as the best schedule from a 3-level discretization, and all
    charging must land in the cheap hours."""
    g = TimeGrid(0, 1.0, 6)
    prices = [0.13] * 3 + [0.24] * 3 + [0.13] * 18
    tariff = make_tariff(prices)
    bat = Battery(capacity=3.0, p_charge_max=1.5, p_discharge_max=1.5,
                  eta_c=0.95, eta_d=0.95, soc_init=0.0)
    base = 2.0
    model = ControllerModel("bat", None, (bat,), flat_series(6, base=base),
                            tariff)
    plan = solve_mpc(model, MpcInput(0, BuildingState(20.0, (0.0,)),
                                     Profile.zeros(g)))

    # brute-force oracle over {charge max, idle, discharge max}^6
    best = float("inf")
    for combo in itertools.product((-1, 0, 1), repeat=6):
        soc, cost, ok = 0.0, 0.0, True
        for k, a in enumerate(combo):
            pc = bat.p_charge_max if a == 1 else 0.0
            pd = bat.p_discharge_max if a == -1 else 0.0
            soc_next = soc + bat.eta_c * pc - pd / bat.eta_d
            if not 0.0 <= soc_next <= bat.capacity:
                ok = False
                break
            soc = soc_next
            net = base + pc - pd
            cost += prices[k] * max(net, 0.0) - 0.1 * max(-net, 0.0)
        # mimic the terminal floor: final SoC below 0.5*initial is penalized,
        # initial is 0 here so it never binds
        if ok:
            best = min(best, cost)
    assert plan.objective <= best + 1e-9

    charge = plan.schedules["0:bat_charge"]
    assert all(c < 1e-9 for c in charge[3:])  # no charging at 0.24
    assert sum(charge[:3]) > 0.5              # charges in the cheap window


def test_deadband_arithmetic():
    # sigma 5, own net load pinned at 4 by an inflexible base load,
    # committed 10, zero width -> violation 1 kW -> 0.5 CHF per step
    n = 4
    g = TimeGrid(0, 1.0, n)
    tariff = make_tariff([0.2] * 24)
    model = ControllerModel("rigid", None, (), flat_series(n, base=4.0),
                            tariff)
    inp = MpcInput(0, BuildingState(20.0), Profile(g, (5.0,) * n),
                   band=Band(Profile(g, (10.0,) * n), half_width=0.0))
    plan = solve_mpc(model, inp)
    assert plan.cost_breakdown.grid == pytest.approx(0.5 * 1.0 * n)


def test_inside_band_grid_cost_exactly_zero():
    n = 4
    g = TimeGrid(0, 1.0, n)
    model = ControllerModel("ok", None, (), flat_series(n, base=4.0),
                            make_tariff([0.2] * 24))
    inp = MpcInput(0, BuildingState(20.0), Profile.zeros(g),
                   band=Band(Profile(g, (4.5,) * n), half_width=2.0))
    plan = solve_mpc(model, inp)
    assert plan.cost_breakdown.grid == 0.0


def winter_house(p_max=4.0):
    lo, hi = RcBuilding.default_comfort(night=17.0, day=20.0)
    return RcBuilding(heat_capacity=10.0, loss_coefficient=0.25,
                      comfort_min=lo, comfort_max=hi, t_init=20.0)


def test_comfort_held_when_capacity_suffices():
    g = TimeGrid(8, 1.0, 24)
    bld = winter_house()
    hp = HeatPump(cop=3.0, p_max=4.0)  # 12 kW_th >> 0.25 * 25 K steady loss
    model = ControllerModel("house", bld, (hp,), flat_series(24, t_out=-5.0),
                            TariffSchedule.day_night())
    plan = solve_mpc(model, MpcInput(0, initial_state(model),
                                     Profile.zeros(g)))
    assert plan.cost_breakdown.comfort == pytest.approx(0.0, abs=1e-6)
    for k, T in enumerate(plan.predicted["temperature"]):
        assert T >= bld.comfort_min[g.hour_of_day(k + 1)] - 1e-6


def test_comfort_priority_versus_free_comfort():
    g = TimeGrid(8, 1.0, 24)
    bld = winter_house()
    hp = HeatPump(cop=3.0, p_max=4.0)
    series = flat_series(24, t_out=-5.0)
    strict = ControllerModel("a", bld, (hp,), series,
                             make_tariff([0.24] * 24, c_p_conf=10.0))
    loose = ControllerModel("b", bld, (hp,), series,
                            make_tariff([0.24] * 24, c_p_conf=0.0))
    x0 = BuildingState(20.0)
    plan_strict = solve_mpc(strict, MpcInput(0, x0, Profile.zeros(g)))
    plan_loose = solve_mpc(loose, MpcInput(0, x0, Profile.zeros(g)))
    # with free comfort and dear electricity the heating shuts down
    assert sum(plan_loose.imports.values) < sum(plan_strict.imports.values)
    assert min(plan_loose.predicted["temperature"]) < 17.0  # below any bound
    assert plan_strict.cost_breakdown.comfort == pytest.approx(0.0, abs=1e-6)


def test_no_simultaneous_import_export():
    g = TimeGrid(0, 1.0, 24)
    bat = Battery(3.0, 1.5, 1.5, soc_init=1.5)
    model = ControllerModel("c", winter_house(), (HeatPump(), bat),
                            flat_series(24, t_out=0.0, base=0.5),
                            TariffSchedule.day_night())
    plan = solve_mpc(model, MpcInput(0, BuildingState(20.0, (1.5,)),
                                     Profile.zeros(g)))
    for imp, exp in zip(plan.imports.values, plan.exports.values):
        assert min(imp, exp) == pytest.approx(0.0, abs=1e-9)


def test_band_violation_monotone_in_penalty():
    """Raising c_p_grid never increases the optimal plan's violation energy."""
    n = 6
    g = TimeGrid(0, 1.0, n)
    bat = Battery(4.0, 2.0, 2.0, soc_init=2.0)
    committed = Band(Profile(g, (0.5,) * n), half_width=0.25)
    prev = None
    for c_grid in (0.01, 0.1, 0.5, 5.0):
        tariff = make_tariff([0.13, 0.13, 0.13, 0.24, 0.24, 0.24] + [0.2] * 18,
                             c_p_grid=c_grid)
        model = ControllerModel("m", None, (bat,),
                                flat_series(n, base=1.0), tariff)
        plan = solve_mpc(model, MpcInput(0, BuildingState(20.0, (2.0,)),
                                         Profile.zeros(g), band=committed))
        viol = sum(band_violation(plan.net_load, committed).values)
        if prev is not None:
            assert viol <= prev + 1e-9
        prev = viol
    assert prev == pytest.approx(0.0, abs=1e-6)  # at 5 CHF/kW it complies


def test_cost_decomposition_sums_to_objective():
    g = TimeGrid(0, 1.0, 24)
    bat = Battery(3.0, 1.5, 1.5, soc_init=1.5)
    model = ControllerModel("d", winter_house(), (HeatPump(), bat),
                            flat_series(24, t_out=-2.0, base=0.6, dhw=0.3),
                            TariffSchedule.day_night())
    inp = MpcInput(0, BuildingState(19.0, (1.5,)), Profile.zeros(g),
                   band=Band(Profile(g, (3.0,) * 24), half_width=1.0),
                   anchor=Profile(g, (2.0,) * 24))
    plan = solve_mpc(model, inp)
    assert plan.cost_breakdown.total == pytest.approx(plan.objective,
                                                      abs=1e-6)


def test_global_limit_is_hard():
    g = TimeGrid(0, 1.0, 6)
    model = ControllerModel("cap", None, (), flat_series(6, base=4.0),
                            make_tariff([0.2] * 24))
    plan = solve_mpc(model, MpcInput(0, BuildingState(20.0),
                                     Profile(g, (2.0,) * 6),
                                     global_limit=15.0))
    assert all(u + 2.0 <= 15.0 + 1e-9 for u in plan.net_load.values)
    # base load 4 + sigma 14 cannot fit under a 15 kW cap -> infeasible
    with pytest.raises(MpcInfeasible):
        solve_mpc(model, MpcInput(0, BuildingState(20.0),
                                  Profile(g, (14.0,) * 6), global_limit=15.0))


def test_unheatable_comfort_is_soft_not_infeasible():
    # no heat source at all: comfort is violated but priced, not infeasible
    g = TimeGrid(8, 1.0, 24)
    model = ControllerModel("cold", winter_house(), (),
                            flat_series(24, t_out=-5.0),
                            TariffSchedule.day_night())
    plan = solve_mpc(model, MpcInput(0, BuildingState(20.0), Profile.zeros(g)))
    assert plan.cost_breakdown.comfort > 0.0
