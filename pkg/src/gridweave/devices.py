"""Device and building models.

Each model provides two faces of the same update law: a discrete-time step
function used by the closed-loop plant, and `emit_constraints`, which
contributes the identical dynamics as equality rows to the controller LP.
Keeping both on one formula is what makes prediction match simulation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import TimeGrid
from .lp import INF, LpBuilder

__all__ = [
    "RcBuilding",
    "HeatPump",
    "GasBoiler",
    "Chp",
    "Battery",
    "HotWaterTank",
    "PvArray",
    "ExogenousSeries",
    "SocOutOfRange",
    "DeviceFragment",
    "step_building",
    "step_battery",
    "step_tank",
    "pv_output",
    "emit_constraints",
]

_SOC_TOL = 1e-9


class SocOutOfRange(RuntimeError):
    """An applied storage schedule drove the state of charge out of bounds."""


@dataclass(frozen=True)
class RcBuilding:
    """First-order RC thermal envelope.

    `heat_capacity` in kWh/K, `loss_coefficient` in kW/K; comfort bounds are
    hour-of-day schedules in degC.
    """

    heat_capacity: float
    loss_coefficient: float
    comfort_min: tuple[float, ...]
    comfort_max: tuple[float, ...]
    t_init: float = 20.0

    def __post_init__(self) -> None:
        if self.heat_capacity <= 0:
            raise ValueError("heat_capacity must be > 0")
        if self.loss_coefficient < 0:
            raise ValueError("loss_coefficient must be >= 0")
        if len(self.comfort_min) != 24 or len(self.comfort_max) != 24:
            raise ValueError("comfort schedules must cover 24 hours")
        if any(lo > hi for lo, hi in zip(self.comfort_min, self.comfort_max)):
            raise ValueError("comfort_min must be <= comfort_max at every hour")

    @staticmethod
    def default_comfort(night: float = 17.0, day: float = 20.0,
                        day_start: int = 7, upper: float = 24.0
                        ) -> tuple[tuple[float, ...], tuple[float, ...]]:
        """Night setback schedule: comfort_min steps up at `day_start`."""
        lo = tuple(day if h >= day_start else night for h in range(24))
        return lo, (upper,) * 24


@dataclass(frozen=True)
class HeatPump:
    cop: float = 3.0
    p_max: float = 4.0

    def __post_init__(self) -> None:
        if self.cop <= 1:
            raise ValueError("heat pump COP must be > 1")
        if self.p_max <= 0:
            raise ValueError("p_max must be > 0")


@dataclass(frozen=True)
class GasBoiler:
    efficiency: float = 0.9
    q_max: float = 10.0

    def __post_init__(self) -> None:
        if not 0 < self.efficiency <= 1:
            raise ValueError("boiler efficiency must be in (0, 1]")


@dataclass(frozen=True)
class Chp:
    """Cogeneration unit with a fixed electrical/thermal efficiency split."""

    eta_e: float = 0.30
    eta_th: float = 0.60
    fuel_max: float = 20.0

    def __post_init__(self) -> None:
        if not (0 < self.eta_e < 1 and 0 < self.eta_th < 1):
            raise ValueError("efficiencies must be in (0, 1)")
        if self.eta_e + self.eta_th > 1:
            raise ValueError("eta_e + eta_th must be <= 1")


@dataclass(frozen=True)
class Battery:
    capacity: float
    p_charge_max: float
    p_discharge_max: float
    eta_c: float = 0.95
    eta_d: float = 0.95
    soc_init: float = 0.0

    def __post_init__(self) -> None:
        if not 0 < self.eta_c <= 1 or not 0 < self.eta_d <= 1:
            raise ValueError("battery efficiencies must be in (0, 1]")
        if not 0 <= self.soc_init <= self.capacity:
            raise ValueError("soc_init outside [0, capacity]")


@dataclass(frozen=True)
class HotWaterTank:
    capacity: float
    q_charge_max: float
    standing_loss: float = 0.01  # fraction of content per hour
    soc_init: float = 0.0

    def __post_init__(self) -> None:
        if not 0 <= self.standing_loss < 1:
            raise ValueError("standing_loss must be in [0, 1)")
        if not 0 <= self.soc_init <= self.capacity:
            raise ValueError("soc_init outside [0, capacity]")


@dataclass(frozen=True)
class PvArray:
    area: float
    efficiency: float = 0.15

    def __post_init__(self) -> None:
        if self.area < 0 or not 0 < self.efficiency <= 1:
            raise ValueError("bad PV parameters")


@dataclass(frozen=True)
class ExogenousSeries:
    """Hourly driving series: outdoor temperature, irradiance, loads, DHW draw."""

    t_out: tuple[float, ...]
    irradiance: tuple[float, ...]
    base_electric_load: tuple[float, ...]
    dhw_draw: tuple[float, ...]

    def __post_init__(self) -> None:
        n = len(self.t_out)
        if not (len(self.irradiance) == len(self.base_electric_load)
                == len(self.dhw_draw) == n):
            raise ValueError("series lengths differ")
        if any(v < 0 for v in self.irradiance):
            raise ValueError("irradiance must be >= 0")

    def __len__(self) -> int:
        return len(self.t_out)

    def window(self, k0: int, n: int) -> "ExogenousSeries":
        """Steps k0..k0+n-1, wrapping cyclically past the end of the series."""
        idx = [(k0 + k) % len(self.t_out) for k in range(n)]
        pick = lambda s: tuple(s[i] for i in idx)
        return ExogenousSeries(pick(self.t_out), pick(self.irradiance),
                               pick(self.base_electric_load), pick(self.dhw_draw))


# -- simulation step functions -------------------------------------------


def step_building(T: float, q_heat: float, t_out: float, dt: float,
                  b: RcBuilding) -> float:
    """One RC step: T' = T + (dt/C) * (q_heat - U_loss * (T - t_out))."""
    if dt <= 0:
        raise ValueError("dt must be > 0")
    return T + (dt / b.heat_capacity) * (
        q_heat - b.loss_coefficient * (T - t_out))


def step_battery(soc: float, p_c: float, p_d: float, dt: float,
                 b: Battery) -> float:
    if not 0 <= p_c <= b.p_charge_max + _SOC_TOL:
        raise ValueError(f"charge power {p_c} outside [0, {b.p_charge_max}]")
    if not 0 <= p_d <= b.p_discharge_max + _SOC_TOL:
        raise ValueError(f"discharge power {p_d} outside [0, {b.p_discharge_max}]")
    soc_next = soc + b.eta_c * p_c * dt - (p_d / b.eta_d) * dt
    if soc_next < -_SOC_TOL or soc_next > b.capacity + _SOC_TOL:
        raise SocOutOfRange(
            f"battery soc {soc_next:.6f} outside [0, {b.capacity}]")
    return min(max(soc_next, 0.0), b.capacity)


def step_tank(soc: float, q_in: float, q_draw: float, dt: float,
              t: HotWaterTank) -> float:
    if not 0 <= q_in <= t.q_charge_max + _SOC_TOL:
        raise ValueError(f"tank charge {q_in} outside [0, {t.q_charge_max}]")
    soc_next = soc * (1.0 - t.standing_loss * dt) + (q_in - q_draw) * dt
    if soc_next < -_SOC_TOL or soc_next > t.capacity + _SOC_TOL:
        raise SocOutOfRange(
            f"tank soc {soc_next:.6f} outside [0, {t.capacity}]")
    return min(max(soc_next, 0.0), t.capacity)


def pv_output(irradiance: float, pv: PvArray) -> float:
    return irradiance * pv.area * pv.efficiency


# -- LP fragments ---------------------------------------------------------


@dataclass
class DeviceFragment:
    """A device's contribution to the controller LP.

    `elec` / `heat` list, per step, (variable, coefficient) terms entering the
    bus electrical balance (positive = consumption) and the thermal node
    (positive = heat supplied).  Constant terms go to `elec_const` /
    `heat_const` (e.g. PV generation).  `schedule` maps quantity names to the
    variable index per step, for plan extraction.
    """

    elec: list[list[tuple[int, float]]]
    heat: list[list[tuple[int, float]]]
    elec_const: list[float]
    heat_const: list[float]
    schedule: dict[str, list[int]] = field(default_factory=dict)
    soc: dict[str, list[int]] = field(default_factory=dict)
    fuel: list[tuple[int, float]] = field(default_factory=list)  # fuel kW per var unit

    @classmethod
    def empty(cls, n: int) -> "DeviceFragment":
        return cls([[] for _ in range(n)], [[] for _ in range(n)],
                   [0.0] * n, [0.0] * n)


def emit_constraints(device, grid: TimeGrid, builder: LpBuilder, *,
                     fuel_price: float = 0.0,
                     irradiance: Sequence[float] | None = None,
                     soc_init: float | None = None,
                     terminal_frac: float = 0.0,
                     terminal_penalty: float = 0.0,
                     tag: str = "") -> DeviceFragment:
    """Emit one device's variables, dynamics rows and cost terms.

    Fragments compose additively: `mpc` collects the electrical and thermal
    terms into per-step balance equalities.  `soc_init` overrides the device's
    own initial state (the receding-horizon loop passes the measured value).
    With `terminal_frac` > 0 a soft floor of `terminal_frac * soc_init` on the
    final SoC is added, priced at `terminal_penalty` CHF/kWh.
    """
    n = grid.n_steps
    dt = grid.step_hours
    frag = DeviceFragment.empty(n)

    if isinstance(device, HeatPump):
        p = [builder.add_var(0.0, device.p_max, name=f"{tag}hp_p{k}")
             for k in range(n)]
        for k in range(n):
            frag.elec[k].append((p[k], 1.0))
            frag.heat[k].append((p[k], device.cop))
        frag.schedule["hp_p_el"] = p

    elif isinstance(device, GasBoiler):
        # fuel draw = heat / efficiency, priced per kWh of fuel
        q = [builder.add_var(0.0, device.q_max,
                             cost=fuel_price * dt / device.efficiency,
                             name=f"{tag}boiler_q{k}")
             for k in range(n)]
        for k in range(n):
            frag.heat[k].append((q[k], 1.0))
            frag.fuel.append((q[k], 1.0 / device.efficiency))
        frag.schedule["boiler_q"] = q

    elif isinstance(device, Chp):
        f = [builder.add_var(0.0, device.fuel_max, cost=fuel_price * dt,
                             name=f"{tag}chp_f{k}")
             for k in range(n)]
        for k in range(n):
            frag.elec[k].append((f[k], -device.eta_e))  # generation
            frag.heat[k].append((f[k], device.eta_th))
            frag.fuel.append((f[k], 1.0))
        frag.schedule["chp_fuel"] = f

    elif isinstance(device, Battery):
        s0 = device.soc_init if soc_init is None else soc_init
        pc = [builder.add_var(0.0, device.p_charge_max, name=f"{tag}bat_pc{k}")
              for k in range(n)]
        pd = [builder.add_var(0.0, device.p_discharge_max, name=f"{tag}bat_pd{k}")
              for k in range(n)]
        soc = [builder.add_var(0.0, device.capacity, name=f"{tag}bat_soc{k}")
               for k in range(n)]
        for k in range(n):
            prev = [(soc[k - 1], -1.0)] if k else []
            builder.add_row(
                [(soc[k], 1.0), (pc[k], -device.eta_c * dt),
                 (pd[k], dt / device.eta_d)] + prev,
                "=", s0 if k == 0 else 0.0)
            frag.elec[k].append((pc[k], 1.0))
            frag.elec[k].append((pd[k], -1.0))
        frag.schedule["bat_charge"] = pc
        frag.schedule["bat_discharge"] = pd
        frag.soc["battery"] = soc
        if terminal_frac > 0.0:
            slack = builder.add_var(0.0, INF, cost=terminal_penalty,
                                    name=f"{tag}bat_term")
            builder.add_row([(soc[n - 1], 1.0), (slack, 1.0)], ">=",
                            terminal_frac * s0)

    elif isinstance(device, HotWaterTank):
        s0 = device.soc_init if soc_init is None else soc_init
        keep = 1.0 - device.standing_loss * dt
        qi = [builder.add_var(0.0, device.q_charge_max, name=f"{tag}tank_qi{k}")
              for k in range(n)]
        qo = [builder.add_var(0.0, device.q_charge_max, name=f"{tag}tank_qo{k}")
              for k in range(n)]
        soc = [builder.add_var(0.0, device.capacity, name=f"{tag}tank_soc{k}")
               for k in range(n)]
        for k in range(n):
            prev = [(soc[k - 1], -keep)] if k else []
            builder.add_row(
                [(soc[k], 1.0), (qi[k], -dt), (qo[k], dt)] + prev,
                "=", keep * s0 if k == 0 else 0.0)
            # tank charge is drawn from the thermal node, discharge feeds it
            frag.heat[k].append((qi[k], -1.0))
            frag.heat[k].append((qo[k], 1.0))
        frag.schedule["tank_charge"] = qi
        frag.schedule["tank_discharge"] = qo
        frag.soc["tank"] = soc
        if terminal_frac > 0.0:
            slack = builder.add_var(0.0, INF, cost=terminal_penalty,
                                    name=f"{tag}tank_term")
            builder.add_row([(soc[n - 1], 1.0), (slack, 1.0)], ">=",
                            terminal_frac * s0)

    elif isinstance(device, PvArray):
        if irradiance is None:
            raise ValueError("PV emission needs an irradiance forecast")
        for k in range(n):
            frag.elec_const[k] -= pv_output(irradiance[k], device)

    else:
        raise TypeError(f"unknown device type {type(device).__name__}")

    return frag
