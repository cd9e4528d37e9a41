"""Command-line entry point.

Every subcommand reads one JSON configuration (``--config``), applies
``--set key=value`` overrides and writes its outputs under ``--out``.
Outputs are a pure function of the configuration, the input files and the
seed.

Exit codes: 0 success, 2 malformed input, 3 infeasible problem or too many
degenerate scenarios, 4 internal invariant violated.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import discrete_sim as ds
from .arrivals import (
    BaselineParams,
    EnergyDistribution,
    InvalidParameterError,
    RateGrid,
    ScenarioParams,
    ScheduledVehicle,
    SigmaModel,
    TimeGrid,
    aggregate_rates,
    baseline_rate,
    sample_nhpp,
    scheduled_rates,
    split_and_sample,
)
from .evsp import (
    ConfigurationError,
    Corridor,
    InfeasibleError,
    Station,
    VehicleSpec,
    build_problem,
    dump_json,
    export_lp,
    naive_station,
    solve,
    validate_plan,
)
from .fluid_queue import AvailabilityForecast, IntegrationError, StationConfig, forecast
from .harness import DegenerateCapExceeded, HarnessConfig, sweep

EXIT_OK = 0
EXIT_PARSE = 2
EXIT_INFEASIBLE = 3
EXIT_INTERNAL = 4

log = logging.getLogger("fluidcharge")


class InputError(ValueError):
    """Malformed configuration or input file."""


@dataclass
class RunConfig:
    # scenario
    alpha: float = 0.7
    beta: float = 0.5
    capacity_c: int = 5
    gamma: float = 1.0
    horizon_h: float = 10.0
    seed: int = 0
    # grids
    dt_h: float = 0.1
    fluid_dt_h: float = 0.005
    tail_h: float = 2.0
    # traffic
    energy_min_kwh: float = 15.0
    energy_max_kwh: float = 60.0
    sigma_eps_h: float = 0.02
    sigma_slope: float = 0.05
    period_h: float = 24.0
    amplitude: float = 1.0
    phase_h: list = field(default_factory=lambda: [0.0, 24.0])
    phase_jitter_h: float = 1.0
    # station
    charger_power_kw: float = 150.0
    e_floor_kwh: float = 1.0
    # corridor and vehicle
    n_stations: int = 5
    segment_km: list = field(default_factory=lambda: [40.0, 120.0])
    speed_kmh: float = 100.0
    rho_h: list = field(default_factory=lambda: [0.05, 0.15])
    soc0: list = field(default_factory=lambda: [0.3, 0.9])
    battery_kwh: float = 75.0
    consumption_kwh_per_km: float = 0.2
    soc_floor: float = 0.1
    t_start_h: float = 1.0
    # Monte Carlo
    sim_runs: int = 30
    eval_runs: int = 50
    scenarios: int = 200
    degenerate_cap: float = 0.05
    # sweep
    sweep_axis: str = "alpha"
    sweep_values: list = field(default_factory=lambda: [0.1, 0.5, 0.9])
    sweep_grid: dict | None = None

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        known = {f.name: f for f in fields(cls)}
        unknown = sorted(set(doc) - set(known))
        if unknown:
            raise InputError(f"unknown configuration key(s): {', '.join(unknown)}")
        cfg = cls(**doc)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        for name in ("alpha", "beta", "gamma", "horizon_h", "dt_h", "fluid_dt_h", "charger_power_kw"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                raise InputError(f"{name} must be a number, got {v!r}")
        for name in ("capacity_c", "seed", "n_stations", "sim_runs", "eval_runs", "scenarios"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, int):
                raise InputError(f"{name} must be an integer, got {v!r}")
        for name in ("phase_h", "segment_km", "rho_h", "soc0"):
            v = getattr(self, name)
            if not (isinstance(v, (list, tuple)) and len(v) == 2):
                raise InputError(f"{name} must be a [low, high] pair, got {v!r}")
        try:
            self.scenario()
            self.harness()
            self.station()
        except (InvalidParameterError, ConfigurationError, TypeError) as exc:
            raise InputError(str(exc)) from exc

    def scenario(self) -> ScenarioParams:
        return ScenarioParams(self.alpha, self.beta, self.capacity_c, self.gamma, self.horizon_h, self.seed)

    def station(self) -> StationConfig:
        return StationConfig(self.capacity_c, self.charger_power_kw, self.gamma, self.e_floor_kwh)

    def energy_dist(self) -> EnergyDistribution:
        return EnergyDistribution(self.energy_min_kwh, self.energy_max_kwh)

    def sigma_model(self) -> SigmaModel:
        return SigmaModel(self.sigma_eps_h, self.sigma_slope)

    def harness(self) -> HarnessConfig:
        return HarnessConfig(
            n_stations=self.n_stations, segment_km=tuple(self.segment_km), speed_kmh=self.speed_kmh,
            rho_h=tuple(self.rho_h), soc0=tuple(self.soc0), capacity_kwh=self.battery_kwh,
            consumption=self.consumption_kwh_per_km, soc_floor=self.soc_floor, t_start=self.t_start_h,
            horizon=self.horizon_h, tail=self.tail_h, plan_dt=self.dt_h, fluid_dt=self.fluid_dt_h,
            charger_power=self.charger_power_kw, energy_kwh=(self.energy_min_kwh, self.energy_max_kwh),
            sigma_eps=self.sigma_eps_h, sigma_k=self.sigma_slope, period=self.period_h,
            amplitude=self.amplitude, phase_h=tuple(self.phase_h), phase_jitter_h=self.phase_jitter_h,
            sim_runs=self.sim_runs, eval_runs=self.eval_runs, scenarios=self.scenarios,
            degenerate_cap=self.degenerate_cap,
        )

    def span(self) -> float:
        return self.horizon_h + self.tail_h

    def time_grid(self) -> TimeGrid:
        return TimeGrid(0.0, self.fluid_dt_h, int(round(self.span() / self.fluid_dt_h)) + 1)


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def load_config(path: str | None, overrides: list[str], seed: int | None) -> RunConfig:
    doc: dict = {}
    if path:
        try:
            with open(path) as fh:
                doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise InputError(f"{path}:{exc.lineno}: invalid JSON ({exc.msg})") from exc
        except OSError as exc:
            raise InputError(f"cannot read config: {exc}") from exc
        if not isinstance(doc, dict):
            raise InputError(f"{path}: configuration must be a JSON object")
    for item in overrides:
        key, sep, val = item.partition("=")
        if not sep or not key:
            raise InputError(f"--set expects key=value, got {item!r}")
        doc[key.strip()] = _parse_value(val)
    if seed is not None:
        doc["seed"] = seed
    return RunConfig.from_dict(doc)


# -- input files ---------------------------------------------------------------


def read_scheduled(path: str, sigma_model: SigmaModel) -> list[ScheduledVehicle]:
    """Scheduled arrivals CSV: ``t_h, energy_kwh`` and optionally ``sigma_h``."""
    out = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return out
        header = [h.strip() for h in header]
        try:
            it, ie = header.index("t_h"), header.index("energy_kwh")
        except ValueError as exc:
            raise InputError(f"{path}:1: header needs t_h and energy_kwh") from exc
        isg = header.index("sigma_h") if "sigma_h" in header else None
        for lineno, row in enumerate(reader, start=2):
            if not row or not "".join(row).strip():
                continue
            try:
                t = float(row[it])
                e = float(row[ie])
                s = float(row[isg]) if isg is not None and row[isg].strip() else float(sigma_model(t))
                out.append(ScheduledVehicle(t, e, s))
            except (ValueError, IndexError) as exc:
                raise InputError(f"{path}:{lineno}: malformed arrival row {row!r} ({exc})") from exc
    return out


def read_rate(path: str, grid: TimeGrid) -> RateGrid:
    """Rate CSV ``t_h, value`` resampled onto ``grid`` (zero outside its span)."""
    try:
        rg = RateGrid.from_csv(path)
    except (ValueError, InvalidParameterError) as exc:
        raise InputError(str(exc)) from exc
    return RateGrid.on(grid, np.maximum(rg(grid.times), 0.0))


def read_json(path: str) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}:{exc.lineno}: invalid JSON ({exc.msg})") from exc
    except OSError as exc:
        raise InputError(str(exc)) from exc


def read_corridor(path: str, forecasts: list[str], cfg: RunConfig) -> tuple[Corridor, VehicleSpec]:
    """Corridor JSON with ``lengths_km``, ``rho_h`` and optional speeds, start and vehicle."""
    doc = read_json(path)
    try:
        rho = [float(x) for x in doc["rho_h"]]
        lengths = [float(x) for x in doc["lengths_km"]]
        speeds = [float(x) for x in doc.get("speeds_kmh", [cfg.speed_kmh] * len(lengths))]
        veh = doc.get("vehicle", {})
        vehicle = VehicleSpec(
            float(veh.get("capacity_kwh", cfg.battery_kwh)),
            float(veh.get("consumption_kwh_per_km", cfg.consumption_kwh_per_km)),
            float(veh.get("soc_floor", cfg.soc_floor)),
            float(veh.get("initial_energy_kwh", 0.6 * cfg.battery_kwh)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"{path}: malformed corridor ({exc!r})") from exc
    if forecasts and len(forecasts) != len(rho):
        raise InputError(f"{len(rho)} stations but {len(forecasts)} forecast files")
    stations = []
    for i, r in enumerate(rho):
        if forecasts:
            try:
                fc = AvailabilityForecast.from_csv(forecasts[i])
            except (ValueError, OSError) as exc:
                raise InputError(str(exc)) from exc
            stations.append(Station(r, fc, f"s{i}"))
        else:
            stations.append(naive_station(r, cfg.charger_power_kw, max(cfg.horizon_h, 1.0), f"s{i}"))
    return Corridor(stations, lengths, speeds, float(doc.get("t_start_h", 0.0))), vehicle


# -- subcommands ----------------------------------------------------------------


def _station_rates(cfg: RunConfig, args):
    grid = cfg.time_grid()
    sched = read_scheduled(args.arrivals, cfg.sigma_model()) if args.arrivals else []
    lu, du = scheduled_rates(sched, grid)
    if args.unscheduled:
        lt = read_rate(args.unscheduled, grid)
        dtld = lt.scaled(cfg.energy_dist().mean)
    else:
        lt = dtld = RateGrid.zeros(grid)
    return sched, lu, du, lt, dtld


def cmd_forecast(cfg: RunConfig, args) -> int:
    _, lu, du, lt, dtld = _station_rates(cfg, args)
    lam, dlt = aggregate_rates(lu, du, lt, dtld)
    traj, fc = forecast(lam, dlt, cfg.station())
    os.makedirs(args.out, exist_ok=True)
    # report on the planning grid
    k = dt_grid(cfg)
    wait, power = fc.sample(k)
    AvailabilityForecast(k, wait, power).to_csv(os.path.join(args.out, "forecast.csv"))
    traj.to_csv(os.path.join(args.out, "trajectory.csv"), fc)
    return EXIT_OK


def dt_grid(cfg: RunConfig) -> np.ndarray:
    return cfg.dt_h * np.arange(int(round(cfg.span() / cfg.dt_h)) + 1)


def cmd_simulate(cfg: RunConfig, args) -> int:
    sched, _, _, lt, _ = _station_rates(cfg, args)
    st = cfg.station()
    rng = np.random.default_rng(cfg.seed)
    fc = ds.forecast_deterministic(sched, lt, st, cfg.span(), cfg.dt_h, rng, cfg.sim_runs, cfg.energy_dist())
    os.makedirs(args.out, exist_ok=True)
    fc.to_csv(os.path.join(args.out, "forecast.csv"))
    # event log of one run: scheduled exact plus one unscheduled draw
    arr = [ds.DiscreteArrival(v.expected_arrival, v.energy_demand, "scheduled") for v in sched]
    ut = sample_nhpp(lt, np.random.default_rng(cfg.seed)) if lt.values.max() > 0 else np.empty(0)
    ue = cfg.energy_dist().sample(np.random.default_rng([cfg.seed, 1]), ut.size)
    arr += ds.arrivals_from(ut, ue, "unscheduled")
    out = ds.simulate(arr, st, probes=False)
    out.check(st)
    out.write_event_log(os.path.join(args.out, "events.csv"))
    return EXIT_OK


def cmd_plan(cfg: RunConfig, args) -> int:
    corridor, vehicle = read_corridor(args.corridor, args.forecasts or [], cfg)
    prob = build_problem(corridor, vehicle, cfg.dt_h, cfg.horizon_h)
    os.makedirs(args.out, exist_ok=True)
    if args.lp:
        with open(os.path.join(args.out, "problem.lp"), "w") as fh:
            fh.write(export_lp(prob))
    plan = solve(prob)
    report = validate_plan(plan, prob)
    if not report.ok:
        print(str(report), file=sys.stderr)
        return EXIT_INTERNAL
    dump_json(plan.to_json(), os.path.join(args.out, "plan.json"))
    plan.write_summary_csv(os.path.join(args.out, "plan_summary.csv"))
    print(f"tau = {plan.tau!r} h, stops = {plan.stops}")
    return EXIT_OK


def cmd_evaluate(cfg: RunConfig, args) -> int:
    corridor, vehicle = read_corridor(args.corridor, [], cfg)
    doc = read_json(args.plan)
    try:
        x = [int(v) for v in doc["x"]]
        E = [float(v) for v in doc["E_kwh"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"{args.plan}: malformed plan ({exc!r})") from exc
    if len(x) != len(corridor.stations) or len(E) != len(x):
        raise InputError(f"{args.plan}: plan has {len(x)} stations, corridor {len(corridor.stations)}")
    grid = cfg.time_grid()
    dist = cfg.energy_dist()
    rng = np.random.default_rng(cfg.seed)
    traffic = []
    for i in range(len(x)):
        bp = BaselineParams(cfg.capacity_c, cfg.charger_power_kw, dist.mean, cfg.period_h,
                            float(cfg.phase_h[0]), cfg.amplitude)
        f = baseline_rate(grid, cfg.alpha, bp)
        sched, lt, _ = split_and_sample(f, cfg.beta, dist, cfg.sigma_model(), rng)
        traffic.append(ds.StationTraffic(sched, lt, dist))
    real = ds.draw_realizations(traffic, rng, cfg.eval_runs)
    res = ds.evaluate_plan(x, E, corridor, vehicle, [cfg.station()] * len(x), real)
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "evaluation.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["run", "tau_h", "stranded"])
        for r, (t, s) in enumerate(zip(res.tau, res.stranded)):
            w.writerow([r, repr(float(t)), int(s)])
    print(f"mean realized tau = {res.mean!r} h over {res.tau.size} runs")
    return EXIT_OK


def cmd_sweep(cfg: RunConfig, args) -> int:
    rep = sweep(cfg.sweep_axis, cfg.sweep_values, cfg.scenario(), cfg.harness(),
                threads=args.threads, grid=cfg.sweep_grid)
    rep.write(args.out)
    with open(os.path.join(args.out, "config.json"), "w") as fh:
        json.dump(asdict(cfg), fh, indent=2, sort_keys=True)
        fh.write("\n")
    _print_cells(os.path.join(args.out, "cells.csv"))
    return EXIT_OK


def _print_cells(path: str) -> None:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    print(f"{'alpha':>6} {'beta':>5} {'c':>3} {'fluid%':>8} {'sim%':>8} {'naive%':>8} {'vsN%':>7} {'vsS%':>7}")
    for r in rows:
        print(f"{float(r['alpha']):6.2f} {float(r['beta']):5.2f} {int(r['c']):3d} "
              f"{float(r['fluid_mean_pct']):8.2f} {float(r['simulation_mean_pct']):8.2f} "
              f"{float(r['naive_mean_pct']):8.2f} {float(r['improvement_vs_naive_pct']):7.2f} "
              f"{float(r['improvement_vs_simulation_pct']):7.2f}")


def cmd_report(cfg: RunConfig, args) -> int:
    path = os.path.join(args.out, "cells.csv")
    if not os.path.exists(path):
        raise InputError(f"no sweep results in {args.out}")
    _print_cells(path)
    return EXIT_OK


COMMANDS = {
    "forecast": cmd_forecast,
    "simulate": cmd_simulate,
    "plan": cmd_plan,
    "evaluate": cmd_evaluate,
    "sweep": cmd_sweep,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON configuration file")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a configuration key (value parsed as JSON)")
    common.add_argument("--seed", type=int, help="master seed (overrides the config)")
    common.add_argument("--out", default="results", help="output directory")
    common.add_argument("--threads", type=int, default=1, help="worker processes for sweeps")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="fluidcharge", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("forecast", "simulate"):
        s = sub.add_parser(name, parents=[common], help=f"{name} station availability")
        s.add_argument("--arrivals", help="scheduled arrivals CSV (t_h, energy_kwh[, sigma_h])")
        s.add_argument("--unscheduled", help="unscheduled arrival rate CSV (t_h, value)")
    s = sub.add_parser("plan", parents=[common], help="solve the corridor charging problem")
    s.add_argument("--corridor", required=True, help="corridor JSON")
    s.add_argument("--forecasts", nargs="*", help="one availability CSV per station (naive if omitted)")
    s.add_argument("--lp", action="store_true", help="also export the MIP in LP format")
    s = sub.add_parser("evaluate", parents=[common], help="realized downtime of a plan")
    s.add_argument("--corridor", required=True)
    s.add_argument("--plan", required=True, help="plan JSON from the plan command")
    sub.add_parser("sweep", parents=[common], help="run a parameter sweep")
    sub.add_parser("report", parents=[common], help="print a finished sweep")
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads < 1:
        print("error: --threads must be at least 1", file=sys.stderr)
        return EXIT_PARSE
    try:
        cfg = load_config(args.config, args.set, args.seed)
        return COMMANDS[args.command](cfg, args)
    except (InputError, ConfigurationError, InvalidParameterError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except InfeasibleError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except DegenerateCapExceeded as exc:
        print(f"sweep failed: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (IntegrationError, AssertionError) as exc:
        print(f"internal invariant violated: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
