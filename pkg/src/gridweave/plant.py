"""Closed-loop receding-horizon simulation of the microgrid fleet.

Each simulated hour: run one coordination round on forecasts (a day-ahead
round at midnight, which also commits the band for the day), apply the first
control move of every building to the true plant with realized disturbances,
log everything.  Forecast error enters as seeded AR(1) noise on base electric
load and irradiance; outdoor temperature and DHW draw are taken as perfectly
forecast, so any band violation in a perfect-noise-free run would indicate a
model/plant mismatch.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .core import (Band, Profile, TariffSchedule, TimeGrid, aggregate,
                   band_violation)
from .coordinator import (ConvergenceConfig, CoordinationError, IsoState,
                          commit_day_ahead, run_round)
from .devices import (Battery, Chp, ExogenousSeries, GasBoiler, HeatPump,
                      HotWaterTank, PvArray, RcBuilding, pv_output,
                      step_battery, step_building, step_tank)
from .mpc import (BuildingState, ControllerModel, MpcInput, MpcPlan,
                  initial_state, solve_mpc)
from .powerflow import (BusInjection, Network, PowerFlowSolution,
                        deviation_report, reactive_from_active,
                        solve_power_flow)
from .transport import ControllerClient, IsoServer

__all__ = [
    "BuildingSpec",
    "Scenario",
    "SimConfig",
    "WorldState",
    "SimResult",
    "MetricsTable",
    "LocalController",
    "run_closed_loop",
    "compute_metrics",
    "run_power_flows",
    "write_outputs",
]

AR1_PHI = 0.8


@dataclass(frozen=True)
class BuildingSpec:
    """One building of the fleet; `id` doubles as its network bus name."""

    id: str
    building: RcBuilding | None
    devices: tuple
    series: ExogenousSeries  # forecast series; noise is added on top


@dataclass(frozen=True)
class Scenario:
    name: str
    buildings: tuple[BuildingSpec, ...]
    network: Network | None = None
    half_width: float = 2.0
    global_limit: float | None = None
    epsilon: float = 0.1
    max_iterations: int = 50
    noise_std_base: float = 0.15   # kW, stationary AR(1) std per building
    noise_std_irr: float = 0.02    # kW/m2

    def __post_init__(self) -> None:
        ids = [b.id for b in self.buildings]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate building ids")


@dataclass(frozen=True)
class SimConfig:
    """Run-level knobs; None means inherit the scenario's value."""

    tariff: TariffSchedule
    days: int = 3
    coordination: bool = True
    seed: int = 0
    noise_scale: float = 1.0
    half_width: float | None = None
    global_limit: float | None = None
    epsilon: float | None = None
    max_iterations: int | None = None
    transport: str = "local"  # "local" or "tcp"

    def __post_init__(self) -> None:
        if self.days < 1:
            raise ValueError("days must be >= 1")
        if self.transport not in ("local", "tcp"):
            raise ValueError("transport must be 'local' or 'tcp'")
        if self.noise_scale < 0:
            raise ValueError("noise_scale must be >= 0")


@dataclass
class WorldState:
    """True plant state: per-building temperature and storage SoCs."""

    step: int
    states: dict[str, BuildingState]


@dataclass
class SimResult:
    """Everything one run produced, step-indexed on the absolute grid."""

    scenario_name: str
    days: int
    coordination: bool
    half_width: float
    global_limit: float | None
    scheduled_slack: tuple[float, ...]
    realized_slack: tuple[float, ...]
    noise: tuple[float, ...]              # realized - scheduled, per step
    committed: tuple[float, ...] | None   # None for uncoordinated runs
    violations: tuple[float, ...]         # vs committed band; zeros if no band
    injections: dict[str, tuple[float, ...]]   # building -> realized net kW
    soc: dict[str, tuple[float, ...]]          # "bid:di:device" -> kWh
    temperature: dict[str, tuple[float, ...]]  # building -> degC
    iterations: tuple[tuple[int, str, int, bool], ...]  # (step, kind, iters, ok)
    building_cost: dict[str, float]            # realized CHF over the run

    @property
    def n_steps(self) -> int:
        return len(self.realized_slack)


class LocalController:
    """Holds one building's model, measured state, and last computed plan.

    The coordinator only sees `compute_plan(sigma)`; everything else about a
    round (k0, band, cap, anchor) is staged through `set_round` beforehand so
    the same object backs both the in-process and the TCP transport.
    """

    def __init__(self, model: ControllerModel):
        self.model = model
        self.state = initial_state(model)
        self.current_plan: MpcPlan | None = None
        self._k0 = 0
        self._band: Band | None = None
        self._band_active: tuple[bool, ...] | None = None
        self._global_limit: float | None = None
        self._anchor: Profile | None = None
        self._grid: TimeGrid | None = None

    @property
    def controller_id(self) -> str:
        return self.model.id

    def set_round(self, k0: int, band: Band | None,
                  band_active: tuple[bool, ...] | None,
                  global_limit: float | None,
                  anchor: Profile | None,
                  grid: TimeGrid | None = None) -> None:
        self._k0 = k0
        self._band = band
        self._band_active = band_active
        self._global_limit = global_limit
        self._anchor = anchor
        self._grid = grid

    def compute_plan(self, sigma: Profile) -> Profile:
        if self._grid is not None and sigma.grid != self._grid:
            # sigma arriving over a transport carries values only; rebase it
            # onto the round's horizon grid
            sigma = Profile(self._grid, sigma.values)
        inp = MpcInput(k0=self._k0, x0=self.state, sigma=sigma,
                       band=self._band, band_active=self._band_active,
                       global_limit=self._global_limit, anchor=self._anchor)
        plan = solve_mpc(self.model, inp)
        self.current_plan = plan
        # proximal update: anchor the next solve of this round to the plan
        # just submitted, damping best-response limit cycles between
        # equal-cost alternatives
        self._anchor = plan.net_load
        return plan.net_load


def _ar1(rng: np.random.Generator, n: int, std: float,
         phi: float = AR1_PHI) -> np.ndarray:
    """Stationary AR(1) path with the given marginal standard deviation."""
    if std <= 0:
        return np.zeros(n)
    w = rng.normal(0.0, std * math.sqrt(1.0 - phi * phi), n)
    e = np.empty(n)
    prev = 0.0
    for t in range(n):
        prev = phi * prev + w[t]
        e[t] = prev
    return e


def _clamp(v: float, lo: float, hi: float) -> float:
    return min(max(v, lo), hi)


def _apply_first_step(ctrl: LocalController, k: int, dt: float,
                      base_noise: float, irr_noise: float,
                      tariff: TariffSchedule):
    """Apply the plan's first move to the true plant; returns
    (realized_net_kw, new_state, soc_records, fuel_kwh)."""
    model = ctrl.model
    plan = ctrl.current_plan
    fc = model.forecasts
    n_series = len(fc)
    base = max(0.0, fc.base_electric_load[k % n_series] + base_noise)
    irr = max(0.0, fc.irradiance[k % n_series] + irr_noise)
    t_out = fc.t_out[k % n_series]
    dhw = fc.dhw_draw[k % n_series]

    elec = base
    fuel = 0.0
    soc_records: dict[str, float] = {}
    socs = list(ctrl.state.socs)
    storage_i = 0
    for di, dev in enumerate(model.devices):
        if isinstance(dev, HeatPump):
            p = _clamp(plan.schedules[f"{di}:hp_p_el"][0], 0.0, dev.p_max)
            elec += p
        elif isinstance(dev, GasBoiler):
            q = _clamp(plan.schedules[f"{di}:boiler_q"][0], 0.0, dev.q_max)
            fuel += q / dev.efficiency * dt
        elif isinstance(dev, Chp):
            f = _clamp(plan.schedules[f"{di}:chp_fuel"][0], 0.0, dev.fuel_max)
            elec -= dev.eta_e * f
            fuel += f * dt
        elif isinstance(dev, Battery):
            pc = _clamp(plan.schedules[f"{di}:bat_charge"][0], 0.0,
                        dev.p_charge_max)
            pd = _clamp(plan.schedules[f"{di}:bat_discharge"][0], 0.0,
                        dev.p_discharge_max)
            elec += pc - pd
            socs[storage_i] = step_battery(socs[storage_i], pc, pd, dt, dev)
            soc_records[f"{di}:battery"] = socs[storage_i]
            storage_i += 1
        elif isinstance(dev, HotWaterTank):
            qi = _clamp(plan.schedules[f"{di}:tank_charge"][0], 0.0,
                        dev.q_charge_max)
            qo = _clamp(plan.schedules[f"{di}:tank_discharge"][0], 0.0,
                        dev.q_charge_max)
            socs[storage_i] = step_tank(socs[storage_i], qi, qo, dt, dev)
            soc_records[f"{di}:tank"] = socs[storage_i]
            storage_i += 1
        elif isinstance(dev, PvArray):
            elec -= pv_output(irr, dev)

    temp = ctrl.state.temperature
    if model.building is not None:
        q_space = max(0.0, plan.schedules["q_space"][0])
        temp = step_building(temp, q_space, t_out, dt, model.building)
    # dhw is drawn from the tank/heat node; it has no electrical face here
    del dhw

    new_state = BuildingState(temperature=temp, socs=tuple(socs))
    return elec, new_state, soc_records, fuel


def run_closed_loop(scenario: Scenario, cfg: SimConfig) -> SimResult:
    """Simulate `cfg.days` days of hourly receding-horizon operation."""
    dt = 1.0
    horizon = 24
    n_total = cfg.days * 24
    half_width = (scenario.half_width if cfg.half_width is None
                  else cfg.half_width)
    global_limit = (scenario.global_limit if cfg.global_limit is None
                    else cfg.global_limit)
    conv = ConvergenceConfig(
        epsilon=scenario.epsilon if cfg.epsilon is None else cfg.epsilon,
        max_iterations=(scenario.max_iterations if cfg.max_iterations is None
                        else cfg.max_iterations))
    if not cfg.coordination:
        global_limit = None  # pure local optimization, no shared constraint

    specs = sorted(scenario.buildings, key=lambda s: s.id)
    order = tuple(s.id for s in specs)
    controllers = [
        LocalController(ControllerModel(
            id=s.id, building=s.building, devices=tuple(s.devices),
            forecasts=s.series, tariff=cfg.tariff))
        for s in specs
    ]
    by_id = {c.controller_id: c for c in controllers}

    # pre-drawn disturbance paths keep runs deterministic per seed and
    # independent of the transport in use
    rng = np.random.default_rng(cfg.seed)
    base_noise: dict[str, np.ndarray] = {}
    irr_noise: dict[str, np.ndarray] = {}
    for s in specs:
        base_noise[s.id] = _ar1(rng, n_total,
                                scenario.noise_std_base * cfg.noise_scale)
        irr_noise[s.id] = _ar1(rng, n_total,
                               scenario.noise_std_irr * cfg.noise_scale)

    server = None
    client_threads: list[threading.Thread] = []
    handles = list(controllers)
    if cfg.transport == "tcp" and cfg.coordination:
        server = IsoServer("127.0.0.1", 0, order, TimeGrid(0, dt, horizon))
        handles = server.proxies()

        def client_main(cid: str) -> None:
            ctrl = by_id[cid]
            ControllerClient(
                server.address, cid, TimeGrid(0, dt, horizon),
                lambda sigma, band, lim, c=ctrl: c.compute_plan(sigma)).run()

        for cid in order:
            t = threading.Thread(target=client_main, args=(cid,), daemon=True)
            t.start()
            client_threads.append(t)

    committed_abs = np.zeros(n_total) if cfg.coordination else None
    scheduled = np.zeros(n_total)
    realized = np.zeros(n_total)
    injections = {cid: np.zeros(n_total) for cid in order}
    soc_log: dict[str, list[float]] = {}
    temp_log: dict[str, list[float]] = {cid: [] for cid in order
                                        if by_id[cid].model.building}
    iter_log: list[tuple[int, str, int, bool]] = []
    cost = {cid: 0.0 for cid in order}
    prev_plans: dict[str, Profile] | None = None

    try:
        for k in range(n_total):
            hour = k % 24
            grid_k = TimeGrid(start_hour=hour, step_hours=dt, n_steps=horizon)

            # stage round context on every controller
            if cfg.coordination and hour == 0:
                band, active, kind = None, None, "day_ahead"
            elif cfg.coordination:
                # committed values cover the rest of the current day; the
                # tail beyond midnight is not committed yet -> unconstrained
                remaining = 24 - hour
                vals = [0.0] * horizon
                vals[:remaining] = committed_abs[k:k + remaining]
                band = Band(Profile(grid_k, tuple(vals)), half_width)
                active = tuple(i < remaining for i in range(horizon))
                kind = "hourly"
            else:
                band, active, kind = None, None, "local"

            for ctrl in controllers:
                anchor = None
                if prev_plans is not None:
                    rolled = prev_plans[ctrl.controller_id].shift(1)
                    anchor = Profile(grid_k, rolled.values)
                ctrl.set_round(k, band, active,
                               global_limit if cfg.coordination else None,
                               anchor, grid_k)

            if cfg.coordination:
                seeds = None
                if prev_plans is not None:
                    seeds = {cid: Profile(grid_k, p.shift(1).values)
                             for cid, p in prev_plans.items()}
                state = IsoState.fresh(order, grid_k, seeds)
                if server is not None:
                    server.set_context(band, global_limit, grid_k)
                try:
                    rnd = run_round(handles, state, conv)
                except CoordinationError as exc:
                    raise CoordinationError(
                        exc.controller_id, exc.iteration,
                        RuntimeError(f"day {k // 24} hour {hour}: "
                                     f"{exc.args[0]}")) from exc
                if server is not None:
                    server.broadcast_status(rnd.converged, rnd.iterations_used)
                plans = rnd.plans
                iter_log.append((k, kind, rnd.iterations_used, rnd.converged))
                if hour == 0:
                    day_band = commit_day_ahead(rnd, half_width, force=True)
                    committed_abs[k:k + 24] = day_band.committed.values
            else:
                plans = {}
                for ctrl in controllers:
                    plans[ctrl.controller_id] = ctrl.compute_plan(
                        Profile.zeros(grid_k))
                iter_log.append((k, kind, 1, True))

            # apply the first move of every plan to the true plant
            sched_k = 0.0
            real_k = 0.0
            for ctrl in controllers:
                cid = ctrl.controller_id
                sched_k += plans[cid][0]
                net, new_state, socs, fuel = _apply_first_step(
                    ctrl, k, dt, base_noise[cid][k], irr_noise[cid][k],
                    cfg.tariff)
                ctrl.state = new_state
                real_k += net
                injections[cid][k] = net
                for name, v in socs.items():
                    soc_log.setdefault(f"{cid}:{name}", []).append(v)
                if ctrl.model.building is not None:
                    temp_log[cid].append(new_state.temperature)
                imp, exp = max(net, 0.0), max(-net, 0.0)
                cost[cid] += dt * (cfg.tariff.import_price[hour] * imp
                                   - cfg.tariff.export_price * exp)
                cost[cid] += cfg.tariff.fuel_price * fuel
            scheduled[k] = sched_k
            realized[k] = real_k
            prev_plans = plans
    finally:
        if server is not None:
            server.close()
            for t in client_threads:
                t.join(timeout=5.0)

    if committed_abs is not None:
        abs_grid = TimeGrid(0, dt, n_total)
        viol = band_violation(
            Profile(abs_grid, tuple(realized)),
            Band(Profile(abs_grid, tuple(committed_abs)), half_width)).values
    else:
        viol = (0.0,) * n_total

    return SimResult(
        scenario_name=scenario.name,
        days=cfg.days,
        coordination=cfg.coordination,
        half_width=half_width,
        global_limit=global_limit,
        scheduled_slack=tuple(map(float, scheduled)),
        realized_slack=tuple(map(float, realized)),
        noise=tuple(float(r - s) for r, s in zip(realized, scheduled)),
        committed=(tuple(map(float, committed_abs))
                   if committed_abs is not None else None),
        violations=tuple(map(float, viol)),
        injections={cid: tuple(map(float, v))
                    for cid, v in injections.items()},
        soc={name: tuple(v) for name, v in sorted(soc_log.items())},
        temperature={cid: tuple(v) for cid, v in temp_log.items()},
        iterations=tuple(iter_log),
        building_cost=cost,
    )


@dataclass(frozen=True)
class MetricsTable:
    """Aggregate run statistics in the shape of a tariff-comparison table."""

    mean_low_tariff_kw: float
    mean_high_tariff_kw: float
    total_kwh: float
    total_violation_kwh: float
    mean_violation_kw: float
    relative_violation: float
    max_abs_slack_kw: float
    iso_fee_chf: float

    def rows(self) -> list[tuple[str, float]]:
        return [
            ("mean_low_tariff_kw", self.mean_low_tariff_kw),
            ("mean_high_tariff_kw", self.mean_high_tariff_kw),
            ("total_kwh", self.total_kwh),
            ("total_violation_kwh", self.total_violation_kwh),
            ("mean_violation_kw", self.mean_violation_kw),
            ("relative_violation", self.relative_violation),
            ("max_abs_slack_kw", self.max_abs_slack_kw),
            ("iso_fee_chf", self.iso_fee_chf),
        ]


def compute_metrics(result: SimResult, tariff: TariffSchedule) -> MetricsTable:
    """Low/high-tariff-window means, energy totals and violation statistics.

    Low-tariff hours are those priced at the schedule's minimum; everything
    else counts as high tariff.  Relative violation is violation energy over
    total energy.
    """
    lo_price = min(tariff.import_price)
    low_hours = {h for h, p in enumerate(tariff.import_price) if p == lo_price}
    low_vals = [v for k, v in enumerate(result.realized_slack)
                if k % 24 in low_hours]
    high_vals = [v for k, v in enumerate(result.realized_slack)
                 if k % 24 not in low_hours]

    total_kwh = float(sum(result.realized_slack))  # dt = 1 h
    total_viol = float(sum(result.violations))
    excess = 0.0
    if result.global_limit is not None:
        excess = sum(max(0.0, abs(v) - result.global_limit)
                     for v in result.realized_slack)
    fee = tariff.c_p_grid * total_viol + tariff.c_global * excess
    return MetricsTable(
        mean_low_tariff_kw=float(np.mean(low_vals)) if low_vals else 0.0,
        mean_high_tariff_kw=float(np.mean(high_vals)) if high_vals else 0.0,
        total_kwh=total_kwh,
        total_violation_kwh=total_viol,
        mean_violation_kw=total_viol / result.n_steps,
        relative_violation=(total_viol / abs(total_kwh) if total_kwh else 0.0),
        max_abs_slack_kw=float(max(abs(v) for v in result.realized_slack)),
        iso_fee_chf=fee,
    )


def run_power_flows(network: Network, result: SimResult,
                    power_factor: float = 0.95) -> list[PowerFlowSolution]:
    """A-posteriori power flow on every step's realized bus injections."""
    solutions = []
    for k in range(result.n_steps):
        p = {bus: vals[k] for bus, vals in result.injections.items()}
        q = {bus: reactive_from_active(v, power_factor) for bus, v in p.items()}
        solutions.append(solve_power_flow(network, BusInjection(p, q)))
    return solutions


# -- output files ---------------------------------------------------------


def _write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as f:
        f.write(",".join(header) + "\n")
        for row in rows:
            f.write(",".join(repr(float(v)) if isinstance(v, float) else str(v)
                             for v in row) + "\n")


def write_outputs(result: SimResult, metrics: MetricsTable,
                  out_dir: str | Path) -> None:
    """Emit the run's CSV set (see docs/formats.md) into `out_dir`."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    _write_csv(out / "slack_profile.csv",
               ["step", "hour", "scheduled_kw", "realized_kw", "noise_kw"],
               ((k, k % 24, result.scheduled_slack[k],
                 result.realized_slack[k], result.noise[k])
                for k in range(result.n_steps)))

    if result.committed is not None:
        _write_csv(out / "band.csv",
                   ["step", "committed_kw", "lower_kw", "upper_kw",
                    "violation_kw"],
                   ((k, c, c - result.half_width, c + result.half_width,
                     result.violations[k])
                    for k, c in enumerate(result.committed)))

    soc_names = list(result.soc)
    _write_csv(out / "soc.csv", ["step"] + soc_names,
               ((k, *(result.soc[name][k] for name in soc_names))
                for k in range(result.n_steps)))

    _write_csv(out / "metrics.csv", ["name", "value"], metrics.rows())

    _write_csv(out / "iterations.csv",
               ["step", "kind", "iterations", "converged"],
               ((k, kind, it, int(ok))
                for k, kind, it, ok in result.iterations))

    buses = list(result.injections)
    _write_csv(out / "injections.csv", ["step"] + buses,
               ((k, *(result.injections[b][k] for b in buses))
                for k in range(result.n_steps)))
