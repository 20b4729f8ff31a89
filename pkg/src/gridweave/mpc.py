"""Per-controller MPC problem: operating cost + comfort + grid-compliance terms.

The controller LP minimizes, over its 24-step horizon,

    sum_k dt * [ c_el(k) P_imp(k) - c_exp P_exp(k) + c_fuel fuel(k)
                 + c_conf s(k) + c_grid (e+(k) + e-(k)) ]

where s is the comfort slack on the thermal box and e+/e- measure how far the
aggregate (own net load + sigma from the ISO) leaves the committed band.  A
hard +/- global_limit on the aggregate is added when configured.  All device
dynamics come from `devices.emit_constraints`, so predictions and the plant
step functions share one set of update laws.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

from .core import Band, Profile, TariffSchedule, TimeGrid
from .devices import (Battery, DeviceFragment, ExogenousSeries, HotWaterTank,
                      RcBuilding, emit_constraints)
from .lp import INF, LpBuilder, LpProblem, LpSolution, LpStatus, solve_lp

__all__ = [
    "ControllerModel",
    "BuildingState",
    "MpcInput",
    "MpcPlan",
    "CostBreakdown",
    "MpcInfeasible",
    "build_problem",
    "solve_mpc",
    "initial_state",
]

# soft terminal floor on storage: final SoC >= TERMINAL_FRAC * initial
TERMINAL_FRAC = 0.5
TERMINAL_PENALTY = 0.01  # CHF/kWh
# tiny proximal term keeping a controller on its previous plan when costs tie;
# stabilizes the sequential coordination fixed point without moving economics
ANCHOR_WEIGHT = 1e-6  # CHF/kW


class MpcInfeasible(RuntimeError):
    def __init__(self, controller_id: str, detail: str = ""):
        super().__init__(f"controller {controller_id}: MPC infeasible {detail}")
        self.controller_id = controller_id


@dataclass(frozen=True)
class ControllerModel:
    """One building: thermal envelope, DER fleet, forecasts and tariff."""

    id: str
    building: RcBuilding | None
    devices: tuple
    forecasts: ExogenousSeries
    tariff: TariffSchedule

    def storage_devices(self) -> list:
        return [d for d in self.devices if isinstance(d, (Battery, HotWaterTank))]


@dataclass(frozen=True)
class BuildingState:
    """Measured state: indoor temperature plus SoC per storage device (fleet order)."""

    temperature: float
    socs: tuple[float, ...] = ()


def initial_state(model: ControllerModel) -> BuildingState:
    t0 = model.building.t_init if model.building else 20.0
    socs = tuple(d.soc_init for d in model.storage_devices())
    return BuildingState(t0, socs)


@dataclass(frozen=True)
class MpcInput:
    """Everything beyond the model a single solve needs."""

    k0: int
    x0: BuildingState
    sigma: Profile
    band: Band | None = None
    band_active: tuple[bool, ...] | None = None
    global_limit: float | None = None
    anchor: Profile | None = None  # previous own plan, for tie-stability

    def __post_init__(self) -> None:
        if self.band is not None and self.band.committed.grid != self.sigma.grid:
            raise ValueError("band and sigma must share one grid")
        if self.band_active is not None and len(self.band_active) != len(self.sigma):
            raise ValueError("band_active length must match the horizon")


@dataclass(frozen=True)
class CostBreakdown:
    opex: float
    comfort: float
    grid: float

    @property
    def total(self) -> float:
        return self.opex + self.comfort + self.grid


@dataclass(frozen=True)
class MpcPlan:
    net_load: Profile
    imports: Profile
    exports: Profile
    schedules: dict[str, tuple[float, ...]]
    predicted: dict[str, tuple[float, ...]]
    cost_breakdown: CostBreakdown
    objective: float


@dataclass
class _Layout:
    builder: LpBuilder
    grid: TimeGrid
    pimp: list[int]
    pexp: list[int]
    q_space: list[int]
    t_var: list[int]
    s_var: list[int]
    e_plus: dict[int, int]
    e_minus: dict[int, int]
    anchor_vars: list[tuple[int, int]]
    frags: list[tuple[object, DeviceFragment]]
    fuel_costs: list[tuple[int, float]]  # (var, CHF per unit) for breakdown
    terminal_vars: list[int]


def _build(model: ControllerModel, inp: MpcInput) -> tuple[LpProblem, _Layout]:
    n = len(inp.sigma)
    grid = inp.sigma.grid
    dt = grid.step_hours
    tariff = model.tariff
    fc = model.forecasts.window(inp.k0, n)
    b = LpBuilder()

    # device fragments (rows for dynamics are emitted here, first, which keeps
    # the LP's equality structure triangular for the solver's crash basis)
    frags: list[tuple[object, DeviceFragment]] = []
    fuel_costs: list[tuple[int, float]] = []
    terminal_vars: list[int] = []
    storage_iter = iter(inp.x0.socs)
    for di, dev in enumerate(model.devices):
        is_storage = isinstance(dev, (Battery, HotWaterTank))
        soc0 = next(storage_iter, None) if is_storage else None
        before = b.n_vars
        frag = emit_constraints(
            dev, grid, b,
            fuel_price=tariff.fuel_price,
            irradiance=fc.irradiance,
            soc_init=soc0,
            terminal_frac=TERMINAL_FRAC if is_storage else 0.0,
            terminal_penalty=TERMINAL_PENALTY * dt,
            tag=f"d{di}_")
        if is_storage and b.n_vars > before:
            terminal_vars.append(b.n_vars - 1)
        for var, per_unit in frag.fuel:
            fuel_costs.append((var, per_unit * tariff.fuel_price * dt))
        frags.append((dev, frag))

    # thermal envelope
    t_var: list[int] = []
    q_space: list[int] = []
    s_var: list[int] = []
    has_thermal = model.building is not None
    if has_thermal:
        bld = model.building
        a = 1.0 - bld.loss_coefficient * dt / bld.heat_capacity
        g = dt / bld.heat_capacity
        t_var = [b.add_var(-INF, INF, name=f"T{k}") for k in range(n)]
        q_space = [b.add_var(0.0, INF, name=f"qs{k}") for k in range(n)]
        s_var = [b.add_var(0.0, INF, cost=tariff.c_p_conf * dt, name=f"s{k}")
                 for k in range(n)]
        for k in range(n):
            prev = ([(t_var[k - 1], -a)] if k else [])
            rhs = g * bld.loss_coefficient * fc.t_out[k] + (a * inp.x0.temperature if k == 0 else 0.0)
            b.add_row([(t_var[k], 1.0), (q_space[k], -g)] + prev, "=", rhs)
            # thermal node: device heat supply covers space heating + DHW draw
            heat_terms = [(q_space[k], -1.0)]
            rhs_heat = fc.dhw_draw[k]
            for _, frag in frags:
                heat_terms.extend(frag.heat[k])
                rhs_heat -= frag.heat_const[k]
            b.add_row(heat_terms, "=", rhs_heat)

    # grid exchange split and bus electrical balance
    pimp = [b.add_var(0.0, INF, cost=tariff.import_price[grid.hour_of_day(k)] * dt,
                      name=f"Pimp{k}") for k in range(n)]
    pexp = [b.add_var(0.0, INF, cost=-tariff.export_price * dt,
                      name=f"Pexp{k}") for k in range(n)]
    for k in range(n):
        terms = [(pimp[k], 1.0), (pexp[k], -1.0)]
        rhs = fc.base_electric_load[k]
        for _, frag in frags:
            terms.extend((v, -c) for v, c in frag.elec[k])
            rhs += frag.elec_const[k]
        b.add_row(terms, "=", rhs)

    # comfort box as a soft constraint
    if has_thermal:
        for k in range(n):
            hour = grid.hour_of_day(k + 1)
            b.add_row([(t_var[k], 1.0), (s_var[k], 1.0)], ">=",
                      model.building.comfort_min[hour])
            b.add_row([(t_var[k], 1.0), (s_var[k], -1.0)], "<=",
                      model.building.comfort_max[hour])

    # committed-band deadband penalty on own net load + sigma
    e_plus: dict[int, int] = {}
    e_minus: dict[int, int] = {}
    if inp.band is not None:
        w = inp.band.half_width
        active = inp.band_active or (True,) * n
        for k in range(n):
            if not active[k]:
                continue
            target = inp.band.committed[k] - inp.sigma[k]
            ep = b.add_var(0.0, INF, cost=tariff.c_p_grid * dt, name=f"e+{k}")
            em = b.add_var(0.0, INF, cost=tariff.c_p_grid * dt, name=f"e-{k}")
            b.add_row([(pimp[k], 1.0), (pexp[k], -1.0), (ep, -1.0)], "<=",
                      target + w)
            b.add_row([(pimp[k], 1.0), (pexp[k], -1.0), (em, 1.0)], ">=",
                      target - w)
            e_plus[k] = ep
            e_minus[k] = em

    # hard global power-flow cap on the aggregate
    if inp.global_limit is not None:
        L = inp.global_limit
        for k in range(n):
            b.add_row([(pimp[k], 1.0), (pexp[k], -1.0)], "<=", L - inp.sigma[k])
            b.add_row([(pimp[k], 1.0), (pexp[k], -1.0)], ">=", -L - inp.sigma[k])

    # proximal anchoring to the previous own plan (tie-breaking only)
    anchor_vars: list[tuple[int, int]] = []
    if inp.anchor is not None:
        for k in range(n):
            ap = b.add_var(0.0, INF, cost=ANCHOR_WEIGHT * dt, name=f"a+{k}")
            am = b.add_var(0.0, INF, cost=ANCHOR_WEIGHT * dt, name=f"a-{k}")
            b.add_row([(pimp[k], 1.0), (pexp[k], -1.0), (ap, -1.0)], "<=",
                      inp.anchor[k])
            b.add_row([(pimp[k], 1.0), (pexp[k], -1.0), (am, 1.0)], ">=",
                      inp.anchor[k])
            anchor_vars.append((ap, am))

    layout = _Layout(b, grid, pimp, pexp, q_space, t_var, s_var,
                     e_plus, e_minus, anchor_vars, frags, fuel_costs,
                     terminal_vars)
    return b.problem(), layout


def build_problem(model: ControllerModel, inp: MpcInput) -> LpProblem:
    problem, _ = _build(model, inp)
    return problem


def solve_mpc(model: ControllerModel, inp: MpcInput) -> MpcPlan:
    problem, lay = _build(model, inp)
    sol = solve_lp(problem)
    if sol.status is LpStatus.INFEASIBLE:
        raise MpcInfeasible(model.id, f"at step k0={inp.k0}")
    if sol.status is LpStatus.UNBOUNDED:
        raise MpcInfeasible(model.id, "unbounded problem (model error)")
    return _extract(model, inp, lay, sol)


def _extract(model: ControllerModel, inp: MpcInput, lay: _Layout,
             sol: LpSolution) -> MpcPlan:
    x = sol.x
    n = len(inp.sigma)
    grid = lay.grid
    dt = grid.step_hours
    tariff = model.tariff

    imports = tuple(x[j] for j in lay.pimp)
    exports = tuple(x[j] for j in lay.pexp)
    net = tuple(i - e for i, e in zip(imports, exports))

    schedules: dict[str, tuple[float, ...]] = {}
    predicted: dict[str, tuple[float, ...]] = {}
    for di, (dev, frag) in enumerate(lay.frags):
        for name, idxs in frag.schedule.items():
            schedules[f"{di}:{name}"] = tuple(x[j] for j in idxs)
        for name, idxs in frag.soc.items():
            predicted[f"{di}:{name}_soc"] = tuple(x[j] for j in idxs)
    if lay.t_var:
        predicted["temperature"] = tuple(x[j] for j in lay.t_var)
        schedules["q_space"] = tuple(x[j] for j in lay.q_space)

    opex = sum(dt * (tariff.import_price[grid.hour_of_day(k)] * imports[k]
                     - tariff.export_price * exports[k])
               for k in range(n))
    opex += sum(x[v] * c for v, c in lay.fuel_costs)
    opex += sum(x[v] * TERMINAL_PENALTY * dt for v in lay.terminal_vars)
    opex += sum((x[ap] + x[am]) * ANCHOR_WEIGHT * dt
                for ap, am in lay.anchor_vars)
    comfort = sum(x[j] * tariff.c_p_conf * dt for j in lay.s_var)
    gridcost = sum((x[lay.e_plus[k]] + x[lay.e_minus[k]]) * tariff.c_p_grid * dt
                   for k in lay.e_plus)

    return MpcPlan(
        net_load=Profile(grid, net),
        imports=Profile(grid, imports),
        exports=Profile(grid, exports),
        schedules=schedules,
        predicted=predicted,
        cost_breakdown=CostBreakdown(opex, comfort, gridcost),
        objective=sol.objective_value,
    )
