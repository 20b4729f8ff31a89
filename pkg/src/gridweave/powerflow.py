"""A-posteriori AC power flow on the low-voltage feeder.

Newton-Raphson in polar form on the power-mismatch equations.  Every bus
except the slack is treated as PQ; the slack is pinned at 1.0 p.u. / 0 deg and
absorbs the network imbalance.  Loads enter in kW / kvar with consumption
positive, so a net-exporting PV bus simply carries a negative value.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

__all__ = [
    "Line",
    "Network",
    "BusInjection",
    "PowerFlowSolution",
    "DeviationReport",
    "NonConvergence",
    "solve_power_flow",
    "deviation_report",
    "reactive_from_active",
]

MAX_ITERATIONS = 50
MISMATCH_TOL = 1e-6  # p.u.


class NonConvergence(RuntimeError):
    def __init__(self, iterations: int, mismatch: float):
        super().__init__(
            f"power flow did not converge in {iterations} iterations "
            f"(max mismatch {mismatch:.3e} p.u.)")
        self.iterations = iterations
        self.mismatch = mismatch


@dataclass(frozen=True)
class Line:
    """One feeder segment; resistance/reactance are totals in ohms."""

    from_bus: str
    to_bus: str
    r_ohm: float
    x_ohm: float
    length_m: float = 0.0

    def __post_init__(self) -> None:
        if self.r_ohm < 0 or self.x_ohm < 0:
            raise ValueError("line impedance must be non-negative")
        if self.r_ohm == 0 and self.x_ohm == 0:
            raise ValueError("line must have nonzero impedance")


@dataclass(frozen=True)
class Network:
    """Buses, lines and per-unit bases; exactly one slack bus."""

    buses: tuple[str, ...]
    slack: str
    lines: tuple[Line, ...]
    base_voltage_kv: float = 0.4
    base_power_kva: float = 100.0

    def __post_init__(self) -> None:
        if len(set(self.buses)) != len(self.buses):
            raise ValueError("duplicate bus names")
        if self.slack not in self.buses:
            raise ValueError(f"slack bus {self.slack!r} is not in the bus list")
        known = set(self.buses)
        for ln in self.lines:
            if ln.from_bus not in known or ln.to_bus not in known:
                raise ValueError(f"line references unknown bus: {ln}")
        # connectivity check by union of line endpoints
        reach = {self.slack}
        frontier = True
        while frontier:
            frontier = False
            for ln in self.lines:
                if ln.from_bus in reach and ln.to_bus not in reach:
                    reach.add(ln.to_bus)
                    frontier = True
                elif ln.to_bus in reach and ln.from_bus not in reach:
                    reach.add(ln.from_bus)
                    frontier = True
        if reach != known:
            raise ValueError(f"network is not connected: {known - reach} unreachable")

    @property
    def z_base_ohm(self) -> float:
        return (self.base_voltage_kv * 1e3) ** 2 / (self.base_power_kva * 1e3)

    def admittance_matrix(self) -> np.ndarray:
        """Complex bus admittance matrix in per unit, bus order as in `buses`."""
        idx = {b: i for i, b in enumerate(self.buses)}
        n = len(self.buses)
        Y = np.zeros((n, n), dtype=complex)
        for ln in self.lines:
            y = 1.0 / complex(ln.r_ohm / self.z_base_ohm,
                              ln.x_ohm / self.z_base_ohm)
            i, j = idx[ln.from_bus], idx[ln.to_bus]
            Y[i, i] += y
            Y[j, j] += y
            Y[i, j] -= y
            Y[j, i] -= y
        return Y


@dataclass(frozen=True)
class BusInjection:
    """Per-bus load in kW / kvar, consumption positive (export negative)."""

    p_kw: Mapping[str, float]
    q_kvar: Mapping[str, float]


def reactive_from_active(p_kw: float, power_factor: float = 0.95) -> float:
    """Reactive power for a load at the given lagging power factor."""
    if not 0 < power_factor <= 1:
        raise ValueError("power factor must be in (0, 1]")
    return p_kw * math.tan(math.acos(power_factor))


@dataclass(frozen=True)
class PowerFlowSolution:
    v_mag: dict[str, float]        # p.u.
    angle_deg: dict[str, float]
    iterations: int
    max_mismatch: float            # p.u.
    slack_power_kw: float          # positive = import from upstream
    slack_reactive_kvar: float
    losses_kw: float


def solve_power_flow(net: Network, inj: BusInjection) -> PowerFlowSolution:
    """Newton-Raphson power flow; converged when max mismatch < 1e-6 p.u."""
    order = [net.slack] + [b for b in net.buses if b != net.slack]
    idx = {b: i for i, b in enumerate(order)}
    n = len(order)
    reordered = Network(tuple(order), net.slack, net.lines,
                        net.base_voltage_kv, net.base_power_kva)
    Y = reordered.admittance_matrix()

    for b in inj.p_kw:
        if b not in idx:
            raise ValueError(f"injection for unknown bus {b!r}")
        if b == net.slack:
            raise ValueError("slack bus cannot carry a specified injection")

    # scheduled complex injection into each bus, per unit (loads are negative)
    s_sched = np.zeros(n, dtype=complex)
    for b, i in idx.items():
        if b == net.slack:
            continue
        p = inj.p_kw.get(b, 0.0)
        q = inj.q_kvar.get(b, 0.0)
        s_sched[i] = complex(-p, -q) / net.base_power_kva

    V = np.ones(n)
    theta = np.zeros(n)
    pq = np.arange(1, n)  # everything but the slack
    mismatch = 0.0

    for iteration in range(1, MAX_ITERATIONS + 1):
        Vc = V * np.exp(1j * theta)
        s_calc = Vc * np.conj(Y @ Vc)
        dp = s_sched[pq].real - s_calc[pq].real
        dq = s_sched[pq].imag - s_calc[pq].imag
        mismatch = max(np.max(np.abs(dp)), np.max(np.abs(dq))) if n > 1 else 0.0
        if mismatch < MISMATCH_TOL:
            v_mag = {b: float(V[idx[b]]) for b in net.buses}
            ang = {b: math.degrees(theta[idx[b]]) for b in net.buses}
            slack_s = s_calc[0] * net.base_power_kva
            losses = float(np.sum(s_calc).real) * net.base_power_kva
            return PowerFlowSolution(
                v_mag=v_mag, angle_deg=ang, iterations=iteration - 1,
                max_mismatch=float(mismatch),
                slack_power_kw=float(slack_s.real),
                slack_reactive_kvar=float(slack_s.imag),
                losses_kw=losses)

        J = _jacobian(Y, V, theta, s_calc, pq)
        try:
            step = np.linalg.solve(J, np.concatenate([dp, dq]))
        except np.linalg.LinAlgError as exc:
            raise NonConvergence(iteration, float(mismatch)) from exc
        m = len(pq)
        theta[pq] += step[:m]
        V[pq] += step[m:]
        if np.any(V[pq] <= 0):
            raise NonConvergence(iteration, float(mismatch))

    raise NonConvergence(MAX_ITERATIONS, float(mismatch))


def _jacobian(Y: np.ndarray, V: np.ndarray, theta: np.ndarray,
              s_calc: np.ndarray, pq: np.ndarray) -> np.ndarray:
    """Standard polar-form Jacobian [[dP/dth, dP/dV], [dQ/dth, dQ/dV]]."""
    G, B = Y.real, Y.imag
    m = len(pq)
    J = np.zeros((2 * m, 2 * m))
    P, Q = s_calc.real, s_calc.imag
    for a, i in enumerate(pq):
        for b, j in enumerate(pq):
            if i == j:
                J[a, b] = -Q[i] - B[i, i] * V[i] ** 2
                J[a, m + b] = P[i] / V[i] + G[i, i] * V[i]
                J[m + a, b] = P[i] - G[i, i] * V[i] ** 2
                J[m + a, m + b] = Q[i] / V[i] - B[i, i] * V[i]
            else:
                dth = theta[i] - theta[j]
                c, s = math.cos(dth), math.sin(dth)
                gij, bij = G[i, j], B[i, j]
                J[a, b] = V[i] * V[j] * (gij * s - bij * c)
                J[a, m + b] = V[i] * (gij * c + bij * s)
                J[m + a, b] = -V[i] * V[j] * (gij * c + bij * s)
                J[m + a, m + b] = V[i] * (gij * s - bij * c)
    return J


@dataclass(frozen=True)
class DeviationReport:
    max_voltage_dev_pu: float
    max_angle_deg: float

    def within(self, v_limit: float, angle_limit: float) -> bool:
        return (self.max_voltage_dev_pu <= v_limit
                and self.max_angle_deg <= angle_limit)


def deviation_report(solutions: Iterable[PowerFlowSolution]) -> DeviationReport:
    """Worst |V - 1| and |angle| over all buses and all supplied solutions."""
    v_dev = 0.0
    ang = 0.0
    for sol in solutions:
        v_dev = max(v_dev, max(abs(v - 1.0) for v in sol.v_mag.values()))
        ang = max(ang, max(abs(a) for a in sol.angle_deg.values()))
    return DeviationReport(v_dev, ang)
