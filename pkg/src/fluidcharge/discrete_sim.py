"""Discrete-event simulation of a multi-charger FCFS station.

Two engines are provided.  When the grid connection can feed every charger
at full power, sessions never interact and the classic earliest-free-server
recursion is exact; it is used whenever possible.  Otherwise an event-driven
engine splits the grid power equally over the sessions that are drawing
power and advances the remaining energies piecewise linearly between
events.

Availability tables are measured with virtual customers ("probes") placed
at the grid times; a probe is simulated on a copy of the system and never
perturbs the real run.
"""

from __future__ import annotations

import copy
import csv
import heapq
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .arrivals import (
    EnergyDistribution,
    InvalidParameterError,
    RateGrid,
    ScheduledVehicle,
    realize_scheduled,
    sample_nhpp,
)
from .fluid_queue import AvailabilityForecast, StationConfig

__all__ = [
    "DiscreteArrival",
    "SimOutcome",
    "StationTraffic",
    "StationRealization",
    "EvalResult",
    "simulate",
    "occupancy",
    "probe_grid",
    "forecast_deterministic",
    "draw_realizations",
    "evaluate_plan",
    "arrivals_from",
]

KINDS = ("scheduled", "unscheduled", "planned")
E_TOL = 1e-9  # kWh
T_TOL = 1e-12  # h


@dataclass(frozen=True)
class DiscreteArrival:
    time: float  # h
    energy: float  # kWh
    kind: str = "unscheduled"
    setup: float = 0.0  # h on the charger before power flows

    def __post_init__(self):
        if self.energy <= 0:
            raise InvalidParameterError(f"energy must be positive, got {self.energy}")
        if self.setup < 0:
            raise InvalidParameterError(f"setup time must be nonnegative, got {self.setup}")
        if self.kind not in KINDS:
            raise InvalidParameterError(f"unknown arrival kind {self.kind!r}")


@dataclass
class SimOutcome:
    """Per-vehicle records in arrival order plus an optional probe table.

    ``order[j]`` is the index of record ``j`` in the caller's input list.
    ``start`` is the time the vehicle takes a charger (setup included in
    service); ``finish`` is the time it leaves.
    """

    arrival: np.ndarray
    energy: np.ndarray
    start: np.ndarray
    finish: np.ndarray
    order: np.ndarray
    capacity_c: int
    forecast: AvailabilityForecast | None = None
    delivered_kwh: float = 0.0
    peak_power_kw: float = 0.0

    @property
    def wait(self) -> np.ndarray:
        return self.start - self.arrival

    @property
    def n(self) -> int:
        return self.arrival.size

    def check(self, cfg: StationConfig, tol: float = 1e-9) -> None:
        """Raise AssertionError if any queueing invariant is broken."""
        assert np.all(self.wait >= -tol), "negative wait"
        assert np.all(self.finish >= self.start - tol), "finish before start"
        assert np.all(np.diff(self.start) >= -tol), "service order differs from arrival order"
        if self.n:
            assert occupancy(self, np.unique(self.start)).max() <= cfg.capacity_c, "too many in service"
        assert self.peak_power_kw <= cfg.grid_power * (1 + 1e-9) + tol, "grid cap exceeded"

    def write_event_log(self, path, kinds: Sequence[str] | None = None) -> None:
        """CSV of arrivals, service starts and departures with the state after each."""
        ev = []
        for j in range(self.n):
            vid = int(self.order[j])
            ev.append((self.arrival[j], 1, "arrival", vid))
            ev.append((self.start[j], 2, "start", vid))
            ev.append((self.finish[j], 0, "finish", vid))
        ev.sort(key=lambda e: (e[0], e[1], e[3]))
        b = q = 0
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["event_time", "event_kind", "vehicle_id", "b", "q"])
            for t, _, kind, vid in ev:
                if kind == "arrival":
                    q += 1
                elif kind == "start":
                    q -= 1
                    b += 1
                else:
                    b -= 1
                w.writerow([repr(float(t)), kind, vid, b, q])


def occupancy(outcome: SimOutcome, times) -> np.ndarray:
    """Number of vehicles holding a charger at each time (right-continuous)."""
    times = np.asarray(times, dtype=float)
    s = np.sort(outcome.start)
    f = np.sort(outcome.finish)
    return np.searchsorted(s, times, side="right") - np.searchsorted(f, times, side="right")


def _prepare(arrivals: Sequence[DiscreteArrival]):
    n = len(arrivals)
    t = np.fromiter((a.time for a in arrivals), float, n)
    e = np.fromiter((a.energy for a in arrivals), float, n)
    s = np.fromiter((a.setup for a in arrivals), float, n)
    order = np.argsort(t, kind="stable")
    return t[order], e[order], s[order], order


def _uncapped(cfg: StationConfig) -> bool:
    return cfg.grid_power >= cfg.charger_power * cfg.capacity_c * (1 - 1e-12)


# -- independent-session engine --------------------------------------------


def _fifo_free(times, durations, c: int):
    """Start times and the earliest-free-charger time after each assignment."""
    n = times.size
    start = np.empty(n)
    free_min = np.empty(n)
    heap = [-np.inf] * c
    t_l, d_l = times.tolist(), durations.tolist()
    for j in range(n):
        s = t_l[j] if t_l[j] >= heap[0] else heap[0]
        heapq.heapreplace(heap, s + d_l[j])
        start[j] = s
        free_min[j] = heap[0]
    return start, free_min


def _probe_waits(times, free_min, probe_t):
    """Wait of a virtual arrival at each probe time (after same-time arrivals)."""
    probe_t = np.asarray(probe_t, dtype=float)
    if times.size == 0:
        return np.zeros(probe_t.shape)
    j = np.searchsorted(times, probe_t, side="right") - 1
    fm = np.where(j >= 0, free_min[np.maximum(j, 0)], -np.inf)
    return np.maximum(fm - probe_t, 0.0)


# -- shared-power engine ----------------------------------------------------


@dataclass
class _Session:
    idx: int
    setup_left: float
    energy_left: float


@dataclass
class _Engine:
    cfg: StationConfig
    t: float = 0.0
    queue: deque = field(default_factory=deque)
    serving: list = field(default_factory=list)
    delivered: float = 0.0
    peak: float = 0.0

    def power_each(self) -> float:
        n = sum(1 for s in self.serving if s.setup_left <= 0.0)
        if n == 0:
            return 0.0
        return min(self.cfg.charger_power, self.cfg.grid_power / n)

    def fill(self, start: dict, watch: int | None = None) -> bool:
        """Move queued vehicles onto free chargers; True if ``watch`` started."""
        hit = False
        while self.queue and len(self.serving) < self.cfg.capacity_c:
            idx, energy, setup = self.queue.popleft()
            self.serving.append(_Session(idx, setup, energy))
            start[idx] = self.t
            hit = hit or idx == watch
        return hit

    def next_internal(self) -> float:
        p = self.power_each()
        nxt = np.inf
        for s in self.serving:
            if s.setup_left > 0.0:
                nxt = min(nxt, self.t + s.setup_left)
            elif p > 0.0:
                nxt = min(nxt, self.t + s.energy_left / p)
        return nxt

    def advance(self, t_new: float, finish: dict) -> None:
        dt = t_new - self.t
        p = self.power_each()
        n_ch = 0
        for s in self.serving:
            if s.setup_left > 0.0:
                s.setup_left -= dt
                if s.setup_left <= T_TOL:
                    s.setup_left = 0.0
            else:
                n_ch += 1
                s.energy_left -= p * dt
        self.delivered += p * n_ch * dt
        self.peak = max(self.peak, p * n_ch)
        self.t = t_new
        keep = []
        for s in self.serving:
            if s.setup_left <= 0.0 and s.energy_left <= E_TOL * max(1.0, p):
                self.delivered += s.energy_left  # settle round-off
                finish[s.idx] = t_new
            else:
                keep.append(s)
        self.serving = keep


def _run_shared(times, energies, setups, cfg: StationConfig, probe_t=None,
                stop_after: int | None = None):
    """Event loop; returns start/finish dicts, engine, and probe results."""
    eng = _Engine(cfg)
    start: dict = {}
    finish: dict = {}
    n = times.size
    probes = [] if probe_t is None else list(probe_t)
    probe_out = []
    i = 0
    pi = 0
    while True:
        t_arr = times[i] if i < n else np.inf
        t_probe = probes[pi] if pi < len(probes) else np.inf
        t_int = eng.next_internal()
        t_next = min(t_arr, t_int, t_probe)
        if not np.isfinite(t_next):
            break
        eng.advance(max(t_next, eng.t), finish)
        if stop_after is not None and stop_after in finish:
            break
        while i < n and times[i] <= eng.t:
            eng.queue.append((i, energies[i], setups[i]))
            i += 1
        eng.fill(start)
        while pi < len(probes) and probes[pi] <= eng.t:
            probe_out.append(_probe_shared(eng, times, energies, setups, i, probes[pi]))
            pi += 1
    return start, finish, eng, probe_out


def _probe_shared(eng: _Engine, times, energies, setups, i_next: int, t_probe: float):
    """Wait and start-of-session power of a virtual arrival, on a copy."""
    sim = copy.deepcopy(eng)
    pid = -1
    start: dict = {}
    finish: dict = {}
    sim.queue.append((pid, np.inf, 0.0))
    i = i_next
    n = times.size
    while not sim.fill(start, watch=pid):
        t_arr = times[i] if i < n else np.inf
        t_next = min(t_arr, sim.next_internal())
        if not np.isfinite(t_next):  # pragma: no cover - queue ahead must drain
            raise RuntimeError("probe can never start")
        sim.advance(t_next, finish)
        while i < n and times[i] <= sim.t:
            sim.queue.append((i, energies[i], setups[i]))
            i += 1
    return start[pid] - t_probe, sim.power_each()


# -- public API -------------------------------------------------------------


def simulate(arrivals: Sequence[DiscreteArrival], cfg: StationConfig, horizon: float | None = None,
             dt: float = 0.1, probes: bool = True) -> SimOutcome:
    """Simulate the station; optionally measure (wait, power) probes on ``k * dt``."""
    t, e, s, order = _prepare(arrivals)
    probe_t = None
    if probes:
        if horizon is None:
            raise InvalidParameterError("probes need a horizon")
        probe_t = dt * np.arange(int(round(horizon / dt)) + 1)
    c = cfg.capacity_c
    if _uncapped(cfg):
        start, free_min = _fifo_free(t, s + e / cfg.charger_power, c)
        finish = start + s + e / cfg.charger_power
        fc = None
        if probes:
            fc = AvailabilityForecast(probe_t, _probe_waits(t, free_min, probe_t),
                                      np.full(probe_t.size, cfg.charger_power))
        peak = cfg.charger_power * min(c, t.size)
        return SimOutcome(t, e, start, finish, order, c, fc, float(e.sum()), peak)

    st, fi, eng, pr = _run_shared(t, e, s, cfg, probe_t)
    start = np.array([st[j] for j in range(t.size)])
    finish = np.array([fi[j] for j in range(t.size)])
    fc = None
    if probes:
        fc = AvailabilityForecast(probe_t, np.array([w for w, _ in pr]), np.array([p for _, p in pr]))
    return SimOutcome(t, e, start, finish, order, c, fc, eng.delivered, eng.peak)


def probe_grid(arrivals: Sequence[DiscreteArrival], cfg: StationConfig, horizon: float,
               dt: float) -> AvailabilityForecast:
    return simulate(arrivals, cfg, horizon, dt, probes=True).forecast


@dataclass
class StationTraffic:
    """Everything needed to draw realized arrivals at one station."""

    scheduled: list[ScheduledVehicle]
    lam_unscheduled: RateGrid
    energy_dist: EnergyDistribution = field(default_factory=EnergyDistribution)


def _unscheduled(traffic: StationTraffic, rng: np.random.Generator):
    times = sample_nhpp(traffic.lam_unscheduled, rng)
    return times, traffic.energy_dist.sample(rng, times.size)


def forecast_deterministic(scheduled: Sequence[ScheduledVehicle], lam_unscheduled: RateGrid,
                           cfg: StationConfig, horizon: float, dt: float = 0.1,
                           rng: np.random.Generator | None = None, runs: int = 30,
                           energy_dist: EnergyDistribution | None = None) -> AvailabilityForecast:
    """Simulation-based availability table.

    Scheduled vehicles arrive exactly when announced.  The unscheduled
    stream is drawn ``runs`` times and the probe tables are averaged.
    """
    energy_dist = energy_dist or EnergyDistribution()
    base_t = np.array([v.expected_arrival for v in scheduled])
    base_e = np.array([v.energy_demand for v in scheduled])
    has_rate = lam_unscheduled.values.max(initial=0.0) > 0
    if not has_rate or runs < 1:
        runs = 1
    if has_rate and rng is None:
        raise InvalidParameterError("an rng is required when unscheduled traffic is present")
    traffic = StationTraffic(list(scheduled), lam_unscheduled, energy_dist)
    wait = None
    power = None
    for _ in range(runs):
        ut, ue = _unscheduled(traffic, rng) if has_rate else (np.empty(0), np.empty(0))
        fc = _table(np.concatenate([base_t, ut]), np.concatenate([base_e, ue]), cfg, horizon, dt)
        wait = fc.wait if wait is None else wait + fc.wait
        power = fc.power if power is None else power + fc.power
    return AvailabilityForecast(fc.times, wait / runs, power / runs)


def _table(times, energies, cfg, horizon, dt) -> AvailabilityForecast:
    order = np.argsort(times, kind="stable")
    t, e = times[order], energies[order]
    if _uncapped(cfg):
        probe_t = dt * np.arange(int(round(horizon / dt)) + 1)
        _, free_min = _fifo_free(t, e / cfg.charger_power, cfg.capacity_c)
        return AvailabilityForecast(probe_t, _probe_waits(t, free_min, probe_t),
                                    np.full(probe_t.size, cfg.charger_power))
    arr = [DiscreteArrival(float(a), float(b)) for a, b in zip(t, e)]
    return probe_grid(arr, cfg, horizon, dt)


@dataclass
class StationRealization:
    """One draw of the actual arrivals at a station (sorted by time)."""

    times: np.ndarray
    energies: np.ndarray
    _free_min: np.ndarray | None = field(default=None, repr=False)

    def free_min(self, cfg: StationConfig) -> np.ndarray:
        if self._free_min is None:
            _, self._free_min = _fifo_free(self.times, self.energies / cfg.charger_power, cfg.capacity_c)
        return self._free_min

    def charge(self, t: float, energy: float, setup: float, cfg: StationConfig) -> tuple[float, float]:
        """Insert a vehicle arriving at ``t``; returns (wait, departure time)."""
        if _uncapped(cfg):
            w = float(_probe_waits(self.times, self.free_min(cfg), np.array([t]))[0])
            return w, t + w + setup + energy / cfg.charger_power
        k = int(np.searchsorted(self.times, t, side="right"))
        times = np.insert(self.times, k, t)
        energies = np.insert(self.energies, k, energy)
        setups = np.zeros(times.size)
        setups[k] = setup
        start, finish, _, _ = _run_shared(times, energies, setups, cfg, stop_after=k)
        return start[k] - t, finish[k]


def draw_realizations(traffic: Sequence[StationTraffic], rng: np.random.Generator,
                      runs: int) -> list[list[StationRealization]]:
    """``runs`` independent draws of every station's arrivals, indexed [run][station]."""
    out = []
    for _ in range(runs):
        row = []
        for tr in traffic:
            st = realize_scheduled(tr.scheduled, rng)
            se = np.array([v.energy_demand for v in tr.scheduled])
            ut, ue = _unscheduled(tr, rng)
            t = np.concatenate([st, ut])
            e = np.concatenate([se, ue])
            order = np.argsort(t, kind="stable")
            row.append(StationRealization(t[order], e[order]))
        out.append(row)
    return out


@dataclass
class EvalResult:
    tau: np.ndarray  # realized downtime per run, h
    stranded: np.ndarray  # runs that needed an emergency top-up

    @property
    def mean(self) -> float:
        return float(self.tau.mean())


def evaluate_plan(x: Sequence[int], E: Sequence[float], corridor, vehicle, cfgs: Sequence[StationConfig],
                  realizations: list[list[StationRealization]]) -> EvalResult:
    """Drive the corridor with fixed stops and energies in each realization.

    The vehicle leaves as soon as it is done at a station.  If a battery
    level ever falls below the floor (only possible with an inconsistent
    plan) the deficit is topped up at full power where it is detected and
    the run is flagged.
    """
    x = np.asarray(x, dtype=int)
    E = np.asarray(E, dtype=float)
    n_st = len(corridor.stations)
    drive = corridor.drive_times
    rho = [st.rho for st in corridor.stations]
    taus = np.empty(len(realizations))
    stranded = np.zeros(len(realizations), dtype=bool)
    for r, row in enumerate(realizations):
        t = corridor.t_start
        e = vehicle.initial_energy
        for i in range(n_st):
            if e < vehicle.floor - 1e-9:
                t += (vehicle.floor - e) / cfgs[i].charger_power
                e = vehicle.floor
                stranded[r] = True
            if x[i]:
                _, t = row[i].charge(t, float(E[i]), rho[i], cfgs[i])
                e += E[i]
            if i < n_st - 1:
                t += drive[i]
                e -= corridor.lengths[i] * vehicle.consumption_p
        taus[r] = t - corridor.t_start - corridor.free_flow_time
    return EvalResult(taus, stranded)


def arrivals_from(times: Iterable[float], energies: Iterable[float], kind: str = "scheduled"):
    return [DiscreteArrival(float(t), float(e), kind) for t, e in zip(times, energies)]
