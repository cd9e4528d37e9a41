"""Scenario generation, strategy comparison and parameter sweeps.

For every scenario each station receives a randomised baseline profile
which is split into announced (scheduled) vehicles and an unscheduled
rate.  Three availability forecasts are built per station:

* ``fluid``: the fluid queue driven by the aggregate expected rates;
* ``simulation``: discrete runs with scheduled vehicles at their announced
  times and sampled unscheduled traffic;
* ``naive``: no wait and full charger power.

Each forecast yields a charging plan.  The plans are then driven through
the same set of stochastic arrival realizations (common random numbers)
and the realized downtime is recorded.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from enum import Enum
from typing import Sequence

import numpy as np

from . import discrete_sim as ds
from .arrivals import (
    BaselineParams,
    EnergyDistribution,
    InvalidParameterError,
    RateGrid,
    ScenarioParams,
    SigmaModel,
    TimeGrid,
    aggregate_rates,
    baseline_rate,
    scheduled_rates,
    split_and_sample,
)
from .evsp import (
    Corridor,
    InfeasibleError,
    Station,
    VehicleSpec,
    build_problem,
    naive_station,
    solve,
)
from .fluid_queue import StationConfig, forecast as fluid_forecast

__all__ = [
    "StrategyKind",
    "HarnessConfig",
    "Scenario",
    "ScenarioResult",
    "CellSummary",
    "SweepReport",
    "DegenerateCapExceeded",
    "gen_input",
    "run_scenario",
    "run_cell",
    "sweep",
    "scenario_seed",
    "summarize",
    "improvement",
]

log = logging.getLogger(__name__)


class StrategyKind(str, Enum):
    FLUID = "fluid"
    SIMULATION = "simulation"
    NAIVE = "naive"


STRATEGIES = (StrategyKind.FLUID, StrategyKind.SIMULATION, StrategyKind.NAIVE)


class DegenerateCapExceeded(RuntimeError):
    """Too many scenarios of a cell had to be discarded."""


@dataclass(frozen=True)
class HarnessConfig:
    n_stations: int = 5  # the last one is the destination
    segment_km: tuple[float, float] = (40.0, 120.0)
    speed_kmh: float = 100.0
    rho_h: tuple[float, float] = (0.05, 0.15)
    soc0: tuple[float, float] = (0.3, 0.9)  # fraction of capacity
    capacity_kwh: float = 75.0
    consumption: float = 0.2  # kWh/km
    soc_floor: float = 0.1
    t_start: float = 1.0  # h, arrival of the planned vehicle at station 0
    horizon: float = 10.0  # h, planning horizon
    tail: float = 2.0  # h of extra traffic simulated beyond the horizon
    plan_dt: float = 0.1
    fluid_dt: float = 0.005
    charger_power: float = 150.0
    energy_kwh: tuple[float, float] = (15.0, 60.0)
    sigma_eps: float = 0.02
    sigma_k: float = 0.05
    period: float = 24.0
    amplitude: float = 1.0
    phase_h: tuple[float, float] = (0.0, 24.0)  # common baseline phase (time of day), per scenario
    phase_jitter_h: float = 1.0  # per-station offset from the common phase
    sim_runs: int = 30
    eval_runs: int = 50
    scenarios: int = 200
    degenerate_cap: float = 0.05

    def __post_init__(self):
        if self.n_stations < 2:
            raise InvalidParameterError("a corridor needs at least two stations")
        for name in ("segment_km", "rho_h", "soc0", "energy_kwh", "phase_h"):
            lo, hi = getattr(self, name)
            if not 0 <= lo <= hi:
                raise InvalidParameterError(f"{name} must be an ordered nonnegative pair")
            object.__setattr__(self, name, (float(lo), float(hi)))
        if self.soc0[1] > 1 or self.soc0[0] < self.soc_floor:
            raise InvalidParameterError("initial state of charge must lie between the floor and 1")
        for name in ("sim_runs", "eval_runs", "scenarios"):
            if getattr(self, name) < 1:
                raise InvalidParameterError(f"{name} must be at least 1")
        if not 0 <= self.degenerate_cap < 1:
            raise InvalidParameterError("degenerate_cap must lie in [0, 1)")

    @property
    def energy_dist(self) -> EnergyDistribution:
        return EnergyDistribution(*self.energy_kwh)


def scenario_seed(master: int, index: int, *stream: int) -> np.random.SeedSequence:
    """Seed of scenario ``index``; identical across cells for common random numbers."""
    return np.random.SeedSequence([int(master), int(index), *stream])


@dataclass
class Scenario:
    index: int
    params: ScenarioParams
    corridor_lengths: list[float]
    rho: list[float]
    phases: list[float]
    initial_energy: float
    traffic: list[ds.StationTraffic] = field(repr=False)
    lam: list[RateGrid] = field(repr=False)  # aggregate expected rates per station
    delta: list[RateGrid] = field(repr=False)


def gen_input(params: ScenarioParams, index: int, hc: HarnessConfig) -> Scenario:
    """Randomised corridor and per-station traffic for one scenario."""
    rng = np.random.default_rng(scenario_seed(params.seed, index, 0))
    n = hc.n_stations
    lengths = rng.uniform(*hc.segment_km, size=n - 1).tolist()
    rho = rng.uniform(*hc.rho_h, size=n).tolist()
    phase0 = rng.uniform(*hc.phase_h)
    phases = (phase0 + rng.uniform(-hc.phase_jitter_h, hc.phase_jitter_h, size=n)).tolist()
    e0 = float(rng.uniform(*hc.soc0) * hc.capacity_kwh)

    span = hc.horizon + hc.tail
    grid = TimeGrid(0.0, hc.fluid_dt, int(round(span / hc.fluid_dt)) + 1)
    dist = hc.energy_dist
    sigma = SigmaModel(hc.sigma_eps, hc.sigma_k)
    traffic, lams, deltas = [], [], []
    for i in range(n):
        if i == n - 1:  # destination: no charging decision, no traffic needed
            zero = RateGrid.zeros(grid)
            traffic.append(ds.StationTraffic([], zero, dist))
            lams.append(zero)
            deltas.append(zero)
            continue
        bp = BaselineParams(params.capacity_c, hc.charger_power, dist.mean, hc.period, phases[i],
                            hc.amplitude)
        f = baseline_rate(grid, params.alpha, bp)
        sched, lam_t, dlt_t = split_and_sample(f, params.beta, dist, sigma, rng)
        lu, du = scheduled_rates(sched, grid)
        lam, dlt = aggregate_rates(lu, du, lam_t, dlt_t)
        traffic.append(ds.StationTraffic(sched, lam_t, dist))
        lams.append(lam)
        deltas.append(dlt)
    return Scenario(index, params, lengths, rho, phases, e0, traffic, lams, deltas)


@dataclass
class ScenarioResult:
    index: int
    alpha: float
    beta: float
    capacity_c: int
    free_flow_h: float
    initial_energy: float
    planned: dict  # strategy -> planned tau (h)
    realized: dict  # strategy -> realized tau samples (h)
    stops: dict  # strategy -> visited stations
    degenerate: str = ""

    def realized_mean(self, s: StrategyKind) -> float:
        return float(np.mean(self.realized[s.value]))

    def downtime_pct(self, s: StrategyKind) -> float:
        return 100.0 * self.realized_mean(s) / self.free_flow_h


def _station_forecasts(sc: Scenario, hc: HarnessConfig, cfg: StationConfig, kind: StrategyKind):
    n = hc.n_stations
    span = hc.horizon + hc.tail
    out = []
    for i in range(n):
        if i == n - 1 or kind is StrategyKind.NAIVE:
            out.append(naive_station(sc.rho[i], hc.charger_power, span))
            continue
        if kind is StrategyKind.FLUID:
            _, fc = fluid_forecast(sc.lam[i], sc.delta[i], cfg)
        else:
            rng = np.random.default_rng(scenario_seed(sc.params.seed, sc.index, 1, i))
            tr = sc.traffic[i]
            fc = ds.forecast_deterministic(tr.scheduled, tr.lam_unscheduled, cfg, span, hc.plan_dt, rng,
                                           hc.sim_runs, tr.energy_dist)
        out.append(Station(sc.rho[i], fc, f"s{i}"))
    return out


def run_scenario(sc: Scenario, hc: HarnessConfig,
                 strategies: Sequence[StrategyKind] = STRATEGIES) -> ScenarioResult:
    """Plan with every strategy and evaluate the plans on shared realizations."""
    p = sc.params
    cfg = StationConfig(p.capacity_c, hc.charger_power, p.gamma)
    vehicle = VehicleSpec(hc.capacity_kwh, hc.consumption, hc.soc_floor, sc.initial_energy)
    speeds = [hc.speed_kmh] * (hc.n_stations - 1)
    res = ScenarioResult(sc.index, p.alpha, p.beta, p.capacity_c, 0.0, sc.initial_energy, {}, {}, {})
    plans = {}
    corridor = None
    for kind in strategies:
        corridor = Corridor(_station_forecasts(sc, hc, cfg, kind), sc.corridor_lengths, speeds, hc.t_start)
        try:
            prob = build_problem(corridor, vehicle, hc.plan_dt, hc.horizon)
            plans[kind] = solve(prob)
        except InfeasibleError as exc:
            res.degenerate = f"{kind.value}: {exc}"
            log.warning("scenario %d degenerate (%s)", sc.index, res.degenerate)
            return res
    res.free_flow_h = corridor.free_flow_time

    rng = np.random.default_rng(scenario_seed(p.seed, sc.index, 2))
    real = ds.draw_realizations(sc.traffic, rng, hc.eval_runs)
    cfgs = [cfg] * hc.n_stations
    for kind, plan in plans.items():
        ev = ds.evaluate_plan(plan.x, plan.E, corridor, vehicle, cfgs, real)
        res.planned[kind.value] = plan.tau
        res.realized[kind.value] = ev.tau.tolist()
        res.stops[kind.value] = plan.stops
        if ev.stranded.any():
            log.warning("scenario %d: %s plan needed emergency top-ups", sc.index, kind.value)
    return res


def _task(args):
    params, index, hc = args
    return run_scenario(gen_input(params, index, hc), hc)


@dataclass
class CellSummary:
    alpha: float
    beta: float
    capacity_c: int
    n_ok: int
    n_degenerate: int
    mean_pct: dict  # strategy -> mean realized downtime (% of free-flow time)
    std_pct: dict
    worst_pct: dict
    planned_pct: dict
    improvement_vs_naive: float
    improvement_vs_sim: float


def improvement(base: float, fluid: float) -> float:
    return 100.0 * (base - fluid) / base if base > 0 else 0.0


def summarize(results: Sequence[ScenarioResult], hc: HarnessConfig) -> CellSummary:
    ok = [r for r in results if not r.degenerate]
    bad = len(results) - len(ok)
    first = results[0]
    if bad > hc.degenerate_cap * len(results):
        reasons = "; ".join(f"#{r.index} {r.degenerate}" for r in results if r.degenerate)
        raise DegenerateCapExceeded(
            f"cell alpha={first.alpha} beta={first.beta} c={first.capacity_c}: "
            f"{bad}/{len(results)} degenerate scenarios ({reasons})"
        )
    mean, std, worst, planned, tau = {}, {}, {}, {}, {}
    for s in STRATEGIES:
        pct = np.array([r.downtime_pct(s) for r in ok])
        mean[s.value] = float(pct.mean())
        std[s.value] = float(pct.std(ddof=1)) if pct.size > 1 else 0.0
        worst[s.value] = float(pct.max())
        planned[s.value] = float(np.mean([100.0 * r.planned[s.value] / r.free_flow_h for r in ok]))
        tau[s.value] = float(np.mean([r.realized_mean(s) for r in ok]))
    return CellSummary(
        first.alpha, first.beta, first.capacity_c, len(ok), bad, mean, std, worst, planned,
        improvement(tau["naive"], tau["fluid"]), improvement(tau["simulation"], tau["fluid"]),
    )


def run_cell(params: ScenarioParams, hc: HarnessConfig, threads: int = 1,
             pool: ProcessPoolExecutor | None = None) -> list[ScenarioResult]:
    tasks = [(params, i, hc) for i in range(hc.scenarios)]
    if pool is not None:
        return list(pool.map(_task, tasks, chunksize=max(1, len(tasks) // (4 * threads))))
    return [_task(t) for t in tasks]


@dataclass
class SweepReport:
    axis: str
    values: list
    fixed: dict
    cells: list[CellSummary]
    scenarios: list[ScenarioResult] = field(repr=False)
    config: HarnessConfig = field(repr=False, default_factory=HarnessConfig)

    def column(self, key: str, strategy: str = "fluid") -> np.ndarray:
        out = []
        for c in self.cells:
            v = getattr(c, key)
            out.append(v[strategy] if isinstance(v, dict) else v)
        return np.array(out)

    def write(self, out_dir) -> list[str]:
        os.makedirs(out_dir, exist_ok=True)
        paths = []
        fmt = lambda x: repr(float(x))

        p = os.path.join(out_dir, "scenarios.csv")
        with open(p, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["alpha", "beta", "c", "scenario", "free_flow_h", "initial_energy_kwh", "degenerate"]
                       + [f"{s.value}_{k}" for s in STRATEGIES
                          for k in ("planned_tau_h", "realized_tau_mean_h", "realized_tau_std_h", "stops")])
            for r in self.scenarios:
                row = [fmt(r.alpha), fmt(r.beta), r.capacity_c, r.index, fmt(r.free_flow_h),
                       fmt(r.initial_energy), r.degenerate]
                for s in STRATEGIES:
                    if r.degenerate:
                        row += ["", "", "", ""]
                        continue
                    x = np.array(r.realized[s.value])
                    row += [fmt(r.planned[s.value]), fmt(x.mean()), fmt(x.std()),
                            " ".join(map(str, r.stops[s.value]))]
                w.writerow(row)
        paths.append(p)

        p = os.path.join(out_dir, "cells.csv")
        with open(p, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["alpha", "beta", "c", "n_ok", "n_degenerate"]
                       + [f"{s.value}_{k}" for s in STRATEGIES
                          for k in ("mean_pct", "std_pct", "worst_pct", "planned_pct")]
                       + ["improvement_vs_naive_pct", "improvement_vs_simulation_pct"])
            for c in self.cells:
                row = [fmt(c.alpha), fmt(c.beta), c.capacity_c, c.n_ok, c.n_degenerate]
                for s in STRATEGIES:
                    row += [fmt(c.mean_pct[s.value]), fmt(c.std_pct[s.value]), fmt(c.worst_pct[s.value]),
                            fmt(c.planned_pct[s.value])]
                row += [fmt(c.improvement_vs_naive), fmt(c.improvement_vs_sim)]
                w.writerow(row)
        paths.append(p)

        # improvement matrix: one row per (c, beta), one column per alpha
        alphas = sorted({c.alpha for c in self.cells})
        rows = sorted({(c.capacity_c, c.beta) for c in self.cells})
        lookup = {(c.capacity_c, c.beta, c.alpha): c for c in self.cells}
        p = os.path.join(out_dir, "improvement_matrix.csv")
        with open(p, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["c", "beta", "baseline"] + [f"alpha={a!r}" for a in alphas])
            for cc, b in rows:
                for base, key in (("naive", "improvement_vs_naive"), ("simulation", "improvement_vs_sim")):
                    cells = [lookup.get((cc, b, a)) for a in alphas]
                    w.writerow([cc, fmt(b), base] + ["" if x is None else fmt(getattr(x, key)) for x in cells])
        paths.append(p)

        p = os.path.join(out_dir, "manifest.json")
        manifest = {
            "axis": self.axis,
            "values": list(self.values),
            "fixed": self.fixed,
            "harness": asdict(self.config),
            "cells": [asdict(c) for c in self.cells],
        }
        with open(p, "w") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")
        paths.append(p)
        return paths


AXES = ("alpha", "beta", "capacity_c")


def sweep(axis: str, values: Sequence, fixed: ScenarioParams, hc: HarnessConfig,
          threads: int = 1, grid: dict | None = None) -> SweepReport:
    """Run every cell of a sweep.

    ``axis`` varies over ``values`` with the remaining parameters taken from
    ``fixed``.  ``grid`` may instead give a full cartesian product, e.g.
    ``{"alpha": [...], "capacity_c": [...]}``, which is how the improvement
    matrix is produced.
    """
    if grid is None:
        if axis not in AXES:
            raise InvalidParameterError(f"unknown sweep axis {axis!r}; choose from {AXES}")
        if list(values) != sorted(values):
            raise InvalidParameterError("sweep values must be sorted")
        grid = {axis: list(values)}
    for k in grid:
        if k not in AXES:
            raise InvalidParameterError(f"unknown sweep axis {k!r}; choose from {AXES}")
    keys = sorted(grid)
    combos = [{}]
    for k in keys:
        combos = [dict(c, **{k: v}) for c in combos for v in grid[k]]
    cells_params = [replace(fixed, **c) for c in combos]

    results: list[ScenarioResult] = []
    summaries: list[CellSummary] = []
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            for cp in cells_params:
                rs = run_cell(cp, hc, threads, pool)
                results += rs
                summaries.append(summarize(rs, hc))
    else:
        for cp in cells_params:
            rs = run_cell(cp, hc)
            results += rs
            summaries.append(summarize(rs, hc))
    fixed_doc = {k: v for k, v in asdict(fixed).items() if k not in grid}
    return SweepReport(axis, list(values) if values is not None else [], fixed_doc, summaries, results, hc)
