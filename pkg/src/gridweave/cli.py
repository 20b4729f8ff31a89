"""Command-line entry point: scenario ingestion, runs, and report emission.

Scenario files are TOML with a strict schema — unknown keys are rejected so a
typo cannot silently fall back to a default.  Time series live in sibling
CSVs referenced by relative path.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .coordinator import (ConvergenceConfig, CoordinationError, IsoState,
                          commit_day_ahead, run_round)
from .core import Band, Profile, TariffSchedule, TimeGrid
from .devices import (Battery, Chp, ExogenousSeries, GasBoiler, HeatPump,
                      HotWaterTank, PvArray, RcBuilding)
from .lp import MaxIterationsExceeded
from .mpc import ControllerModel, MpcInfeasible
from .plant import (BuildingSpec, LocalController, MetricsTable, Scenario,
                    SimConfig, SimResult, compute_metrics, run_closed_loop,
                    run_power_flows, write_outputs)
from .powerflow import (BusInjection, Line, Network, NonConvergence,
                        deviation_report, reactive_from_active,
                        solve_power_flow)
from .transport import (ADDR_ENV_VAR, ControllerClient, IsoServer,
                        default_address)

__all__ = ["ScenarioError", "load_scenario", "main"]

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_VALIDATION = 2
EXIT_RUNTIME = 3


class ScenarioError(ValueError):
    """Scenario file failed schema validation; message names the field."""


def _require_keys(table: dict, allowed: set[str], required: set[str],
                  where: str) -> None:
    unknown = set(table) - allowed
    if unknown:
        raise ScenarioError(f"{where}: unknown key(s) {sorted(unknown)}")
    missing = required - set(table)
    if missing:
        raise ScenarioError(f"{where}: missing key(s) {sorted(missing)}")


def _load_series(path: Path) -> ExogenousSeries:
    if not path.exists():
        raise ScenarioError(f"series file not found: {path}")
    cols = {"t_out_c": [], "irradiance_kw_m2": [], "base_load_kw": [],
            "dhw_kw": []}
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames is None or not set(cols) <= set(reader.fieldnames):
            raise ScenarioError(
                f"{path}: expected columns hour,{','.join(cols)}")
        for i, row in enumerate(reader):
            try:
                for c in cols:
                    cols[c].append(float(row[c]))
            except (TypeError, ValueError) as exc:
                raise ScenarioError(f"{path} row {i + 2}: {exc}") from exc
    if not cols["t_out_c"]:
        raise ScenarioError(f"{path}: no data rows")
    try:
        return ExogenousSeries(tuple(cols["t_out_c"]),
                               tuple(cols["irradiance_kw_m2"]),
                               tuple(cols["base_load_kw"]),
                               tuple(cols["dhw_kw"]))
    except ValueError as exc:
        raise ScenarioError(f"{path}: {exc}") from exc


_BUILDING_KEYS = {"id", "heat_capacity", "loss_coefficient", "t_init",
                  "comfort_night", "comfort_day", "comfort_max",
                  "load_scale", "dhw_scale",
                  "heat_pump", "boiler", "chp", "tank", "battery", "pv"}

_DEVICE_SCHEMAS = {
    # table name -> (constructor, allowed keys)
    "heat_pump": (HeatPump, {"cop", "p_max"}),
    "boiler": (GasBoiler, {"efficiency", "q_max"}),
    "chp": (Chp, {"eta_e", "eta_th", "fuel_max"}),
    "tank": (HotWaterTank, {"capacity", "q_charge_max", "standing_loss",
                            "soc_init"}),
    "battery": (Battery, {"capacity", "p_charge_max", "p_discharge_max",
                          "eta_c", "eta_d", "soc_init"}),
    "pv": (PvArray, {"area", "efficiency"}),
}
# fixed emission order keeps LP variable layout deterministic per scenario
_DEVICE_ORDER = ("heat_pump", "boiler", "chp", "tank", "battery", "pv")


def _parse_building(table: dict, series: ExogenousSeries,
                    index: int) -> BuildingSpec:
    where = f"building[{index}]"
    _require_keys(table, _BUILDING_KEYS, {"id"}, where)
    bid = table["id"]
    if not isinstance(bid, str) or not bid:
        raise ScenarioError(f"{where}: id must be a non-empty string")

    building = None
    if "heat_capacity" in table or "loss_coefficient" in table:
        lo, hi = RcBuilding.default_comfort(
            night=float(table.get("comfort_night", 17.0)),
            day=float(table.get("comfort_day", 20.0)),
            upper=float(table.get("comfort_max", 24.0)))
        try:
            building = RcBuilding(
                heat_capacity=float(table["heat_capacity"]),
                loss_coefficient=float(table["loss_coefficient"]),
                comfort_min=lo, comfort_max=hi,
                t_init=float(table.get("t_init", 20.0)))
        except (KeyError, ValueError) as exc:
            raise ScenarioError(f"{where} ({bid}): {exc}") from exc

    devices = []
    for name in _DEVICE_ORDER:
        if name not in table:
            continue
        ctor, allowed = _DEVICE_SCHEMAS[name]
        sub = table[name]
        if not isinstance(sub, dict):
            raise ScenarioError(f"{where}.{name}: must be a table")
        _require_keys(sub, allowed, set(), f"{where}.{name}")
        try:
            devices.append(ctor(**{k: float(v) for k, v in sub.items()}))
        except (TypeError, ValueError) as exc:
            raise ScenarioError(f"{where}.{name} ({bid}): {exc}") from exc

    load_scale = float(table.get("load_scale", 1.0))
    dhw_scale = float(table.get("dhw_scale", 1.0))
    if load_scale < 0 or dhw_scale < 0:
        raise ScenarioError(f"{where} ({bid}): scales must be >= 0")
    scaled = ExogenousSeries(
        series.t_out, series.irradiance,
        tuple(v * load_scale for v in series.base_electric_load),
        tuple(v * dhw_scale for v in series.dhw_draw))
    return BuildingSpec(id=bid, building=building, devices=tuple(devices),
                        series=scaled)


def _parse_network(table: dict, building_ids: list[str]) -> Network:
    _require_keys(table, {"base_voltage_kv", "base_power_kva", "slack",
                          "line"}, {"slack", "line"}, "network")
    lines = []
    buses = {table["slack"]}
    for i, ln in enumerate(table["line"]):
        _require_keys(ln, {"from", "to", "r_ohm", "x_ohm", "length_m"},
                      {"from", "to", "r_ohm", "x_ohm"}, f"network.line[{i}]")
        try:
            lines.append(Line(ln["from"], ln["to"], float(ln["r_ohm"]),
                              float(ln["x_ohm"]),
                              float(ln.get("length_m", 0.0))))
        except ValueError as exc:
            raise ScenarioError(f"network.line[{i}]: {exc}") from exc
        buses.update((ln["from"], ln["to"]))
    missing = set(building_ids) - buses
    if missing:
        raise ScenarioError(f"network: no bus for building(s) {sorted(missing)}")
    try:
        return Network(buses=tuple(sorted(buses)), slack=table["slack"],
                       lines=tuple(lines),
                       base_voltage_kv=float(table.get("base_voltage_kv", 0.4)),
                       base_power_kva=float(table.get("base_power_kva", 100.0)))
    except ValueError as exc:
        raise ScenarioError(f"network: {exc}") from exc


_TOP_KEYS = {"name", "series_file", "half_width", "global_limit", "epsilon",
             "max_iterations", "noise_std_base", "noise_std_irr",
             "building", "network"}


def load_scenario(path: str | Path,
                  series_override: str | Path | None = None) -> Scenario:
    """Parse and validate a scenario file; unknown keys are rejected."""
    path = Path(path)
    if not path.exists():
        raise ScenarioError(f"scenario file not found: {path}")
    try:
        with open(path, "rb") as f:
            raw = tomllib.load(f)
    except tomllib.TOMLDecodeError as exc:
        raise ScenarioError(f"{path}: {exc}") from exc
    _require_keys(raw, _TOP_KEYS, {"name", "series_file", "building"},
                  str(path))

    series_path = Path(series_override) if series_override else (
        path.parent / raw["series_file"])
    series = _load_series(series_path)

    buildings = tuple(_parse_building(t, series, i)
                      for i, t in enumerate(raw["building"]))
    if not buildings:
        raise ScenarioError(f"{path}: at least one building required")
    ids = [b.id for b in buildings]
    if len(set(ids)) != len(ids):
        raise ScenarioError(f"{path}: duplicate building ids")

    network = _parse_network(raw["network"], ids) if "network" in raw else None

    try:
        return Scenario(
            name=str(raw["name"]),
            buildings=buildings,
            network=network,
            half_width=float(raw.get("half_width", 2.0)),
            global_limit=(float(raw["global_limit"])
                          if "global_limit" in raw else None),
            epsilon=float(raw.get("epsilon", 0.1)),
            max_iterations=int(raw.get("max_iterations", 50)),
            noise_std_base=float(raw.get("noise_std_base", 0.15)),
            noise_std_irr=float(raw.get("noise_std_irr", 0.02)))
    except ValueError as exc:
        raise ScenarioError(f"{path}: {exc}") from exc


def _make_tariff(name: str) -> TariffSchedule:
    if name == "day-night":
        return TariffSchedule.day_night()
    if name == "ahead24":
        return TariffSchedule.ahead24()
    raise ScenarioError(f"unknown tariff {name!r}")


# -- subcommands ----------------------------------------------------------


def _cmd_simulate(args) -> int:
    scenario = load_scenario(args.scenario, args.series)
    tariff = _make_tariff(args.tariff)
    cfg = SimConfig(
        tariff=tariff,
        days=args.days,
        coordination=(args.coordination == "on"),
        seed=args.seed,
        noise_scale=args.noise_scale,
        global_limit=args.global_limit,
        epsilon=args.epsilon,
        max_iterations=args.max_iters,
        transport=args.transport)
    result = run_closed_loop(scenario, cfg)
    metrics = compute_metrics(result, tariff)

    out = Path(args.out)
    write_outputs(result, metrics, out)
    meta = [("tariff", args.tariff), ("days", str(args.days)),
            ("coordination", args.coordination), ("seed", str(args.seed)),
            ("scenario", scenario.name)]
    with open(out / "metrics.csv", "a", newline="") as f:
        for k, v in meta:
            f.write(f"{k},{v}\n")

    if scenario.network is not None:
        solutions = run_power_flows(scenario.network, result)
        report = deviation_report(solutions)
        with open(out / "metrics.csv", "a", newline="") as f:
            f.write(f"max_voltage_dev_pu,{report.max_voltage_dev_pu!r}\n")
            f.write(f"max_angle_deg,{report.max_angle_deg!r}\n")

    n_rounds = len(result.iterations)
    n_conv = sum(1 for _, _, _, ok in result.iterations if ok)
    print(f"{scenario.name}: {args.days} day(s), {n_rounds} rounds "
          f"({n_conv} converged), outputs in {out}")
    for name, value in metrics.rows():
        print(f"  {name} = {value:.4f}")
    return EXIT_OK


def _cmd_powerflow(args) -> int:
    scenario = load_scenario(args.scenario, args.series)
    if scenario.network is None:
        raise ScenarioError("scenario has no [network] section")
    inj_path = Path(args.injections)
    if not inj_path.exists():
        raise ScenarioError(f"injections log not found: {inj_path}")
    with open(inj_path, newline="") as f:
        reader = csv.DictReader(f)
        buses = [c for c in (reader.fieldnames or []) if c != "step"]
        rows = list(reader)
    if not buses:
        raise ScenarioError(f"{inj_path}: no bus columns")

    solutions = []
    for row in rows:
        p = {b: float(row[b]) for b in buses}
        q = {b: reactive_from_active(v) for b, v in p.items()}
        solutions.append(solve_power_flow(scenario.network, BusInjection(p, q)))
    report = deviation_report(solutions)
    print(f"{len(solutions)} steps solved")
    print(f"max |V - 1| = {report.max_voltage_dev_pu:.5f} p.u.")
    print(f"max |angle| = {report.max_angle_deg:.4f} deg")
    if args.out:
        bus_names = list(solutions[0].v_mag)
        with open(args.out, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["step"] + [f"v_{b}" for b in bus_names]
                       + [f"ang_{b}" for b in bus_names])
            for k, sol in enumerate(solutions):
                w.writerow([k] + [repr(sol.v_mag[b]) for b in bus_names]
                           + [repr(sol.angle_deg[b]) for b in bus_names])
    return EXIT_OK


def _parse_addr(text: str) -> tuple[str, int]:
    host, _, port = text.rpartition(":")
    return host or "127.0.0.1", int(port)


def _cmd_serve_iso(args) -> int:
    """Run one day-ahead coordination round against remote controllers."""
    scenario = load_scenario(args.scenario, args.series)
    addr = _parse_addr(args.addr) if args.addr else default_address()
    order = tuple(sorted(b.id for b in scenario.buildings))
    grid = TimeGrid(0, 1.0, 24)
    server = IsoServer(addr[0], addr[1], order, grid, timeout=args.timeout)
    print(f"ISO listening on {server.address[0]}:{server.address[1]}, "
          f"waiting for {len(order)} controller(s): {', '.join(order)}")
    try:
        server.set_context(None, scenario.global_limit, grid)
        state = IsoState.fresh(order, grid)
        cfg = ConvergenceConfig(scenario.epsilon, scenario.max_iterations)
        rnd = run_round(server.proxies(), state, cfg)
        server.broadcast_status(rnd.converged, rnd.iterations_used)
        band = commit_day_ahead(rnd, scenario.half_width, force=True)
    finally:
        server.close()
    print(f"round {'converged' if rnd.converged else 'DID NOT converge'} "
          f"after {rnd.iterations_used} iteration(s)")
    with open(args.out, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["step", "committed_kw", "lower_kw", "upper_kw"])
        for k, c in enumerate(band.committed.values):
            w.writerow([k, repr(c), repr(c - band.half_width),
                        repr(c + band.half_width)])
    print(f"committed day-ahead profile written to {args.out}")
    return EXIT_OK if rnd.converged else EXIT_RUNTIME


def _cmd_controller(args) -> int:
    """Join a day-ahead round as a single remote building controller."""
    scenario = load_scenario(args.scenario, args.series)
    by_id = {b.id: b for b in scenario.buildings}
    if args.id not in by_id:
        raise ScenarioError(f"no building {args.id!r} in scenario "
                            f"(have {sorted(by_id)})")
    spec = by_id[args.id]
    tariff = _make_tariff(args.tariff)
    model = ControllerModel(id=spec.id, building=spec.building,
                            devices=tuple(spec.devices),
                            forecasts=spec.series, tariff=tariff)
    ctrl = LocalController(model)
    grid = TimeGrid(0, 1.0, 24)
    addr = _parse_addr(args.addr) if args.addr else default_address()

    def solve(sigma: Profile, band: Band | None,
              limit: float | None) -> Profile:
        ctrl.set_round(0, band, None, limit, None, grid)
        return ctrl.compute_plan(sigma)

    def on_round(status) -> None:
        print(f"round finished: converged={status.converged} "
              f"after {status.iteration} iteration(s)")

    print(f"controller {args.id} connecting to {addr[0]}:{addr[1]}")
    ControllerClient(addr, args.id, grid, solve, on_round=on_round).run()
    return EXIT_OK


def _read_metrics_csv(path: Path) -> tuple[dict[str, float], dict[str, str]]:
    numeric: dict[str, float] = {}
    meta: dict[str, str] = {}
    with open(path, newline="") as f:
        for row in csv.reader(f):
            if not row or row[0] == "name":
                continue
            try:
                numeric[row[0]] = float(row[1])
            except ValueError:
                meta[row[0]] = row[1]
    return numeric, meta


def _cmd_report(args) -> int:
    """Recompute metrics from the persisted CSVs and check them against the
    metrics stored at run time."""
    out = Path(args.out)
    stored, meta = _read_metrics_csv(out / "metrics.csv")
    tariff = _make_tariff(meta.get("tariff", "day-night"))

    realized, scheduled = [], []
    with open(out / "slack_profile.csv", newline="") as f:
        for row in csv.DictReader(f):
            realized.append(float(row["realized_kw"]))
            scheduled.append(float(row["scheduled_kw"]))
    violations = [0.0] * len(realized)
    band_path = out / "band.csv"
    if band_path.exists():
        with open(band_path, newline="") as f:
            for k, row in enumerate(csv.DictReader(f)):
                violations[k] = float(row["violation_kw"])

    total_kwh = sum(realized)
    total_viol = sum(violations)
    lo_price = min(tariff.import_price)
    low = [v for k, v in enumerate(realized)
           if tariff.import_price[k % 24] == lo_price]
    high = [v for k, v in enumerate(realized)
            if tariff.import_price[k % 24] != lo_price]
    recomputed = {
        "mean_low_tariff_kw": sum(low) / len(low) if low else 0.0,
        "mean_high_tariff_kw": sum(high) / len(high) if high else 0.0,
        "total_kwh": total_kwh,
        "total_violation_kwh": total_viol,
        "mean_violation_kw": total_viol / len(realized),
        "relative_violation": (total_viol / abs(total_kwh)
                               if total_kwh else 0.0),
        "max_abs_slack_kw": max(abs(v) for v in realized),
    }

    width = max(len(k) for k in stored)
    ok = True
    for name, value in stored.items():
        if name in recomputed:
            match = abs(recomputed[name] - value) <= 1e-9 * max(
                1.0, abs(value))
            ok = ok and match
            flag = "" if match else "  MISMATCH"
            print(f"{name:<{width}}  {value:.6f}{flag}")
        else:
            print(f"{name:<{width}}  {value:.6f}")
    for k, v in meta.items():
        print(f"{k:<{width}}  {v}")
    if not ok:
        print("stored metrics do not match the persisted time series",
              file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


# -- argument parsing ------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # exit 1 on usage errors, not argparse's 2
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _build_parser() -> _Parser:
    p = _Parser(prog="gridweave",
                description="Distributed-MPC microgrid simulator")
    sub = p.add_subparsers(dest="command", required=True)

    def add_scenario_args(sp):
        sp.add_argument("--scenario", required=True, help="scenario file")
        sp.add_argument("--series", default=None,
                        help="override the scenario's series CSV")

    sim = sub.add_parser("simulate", help="closed-loop receding-horizon run")
    add_scenario_args(sim)
    sim.add_argument("--tariff", choices=["day-night", "ahead24"],
                     default="day-night")
    sim.add_argument("--coordination", choices=["on", "off"], default="on")
    sim.add_argument("--days", type=int, default=3)
    sim.add_argument("--epsilon", type=float, default=None, metavar="KW")
    sim.add_argument("--max-iters", type=int, default=None)
    sim.add_argument("--global-limit", type=float, default=None, metavar="KW")
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--noise-scale", type=float, default=1.0)
    sim.add_argument("--transport", choices=["local", "tcp"], default="local")
    sim.add_argument("--out", required=True, help="output directory")
    sim.set_defaults(func=_cmd_simulate)

    pf = sub.add_parser("powerflow", help="replay an injections log")
    add_scenario_args(pf)
    pf.add_argument("--injections", required=True,
                    help="injections.csv from a simulate run")
    pf.add_argument("--out", default=None, help="per-step voltages CSV")
    pf.set_defaults(func=_cmd_powerflow)

    iso = sub.add_parser("serve-iso",
                         help="coordinate a day-ahead round over TCP")
    add_scenario_args(iso)
    iso.add_argument("--addr", default=None,
                     help=f"host:port (default ${ADDR_ENV_VAR} or loopback)")
    iso.add_argument("--timeout", type=float, default=30.0)
    iso.add_argument("--out", default="committed.csv")
    iso.set_defaults(func=_cmd_serve_iso)

    ctl = sub.add_parser("controller",
                         help="join a day-ahead round as one building")
    add_scenario_args(ctl)
    ctl.add_argument("--id", required=True, help="building id")
    ctl.add_argument("--tariff", choices=["day-night", "ahead24"],
                     default="day-night")
    ctl.add_argument("--addr", default=None)
    ctl.set_defaults(func=_cmd_controller)

    rep = sub.add_parser("report", help="metrics from an output directory")
    rep.add_argument("--out", required=True, help="output directory to read")
    rep.set_defaults(func=_cmd_report)
    return p


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if exc.code is not None else EXIT_USAGE
    try:
        return args.func(args)
    except ScenarioError as exc:
        print(f"scenario error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (CoordinationError, MpcInfeasible, NonConvergence,
            MaxIterationsExceeded) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    raise SystemExit(main())
