"""Corridor, vehicle and plan data for the single-vehicle charging problem."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..fluid_queue import AvailabilityForecast

__all__ = [
    "ConfigurationError",
    "InfeasibleError",
    "Station",
    "Corridor",
    "VehicleSpec",
    "EvspProblem",
    "ChargingPlan",
    "build_problem",
    "slot_index",
    "naive_station",
]

SLOT_TOL = 1e-9


class ConfigurationError(ValueError):
    """The problem cannot be built from the given data."""


class InfeasibleError(RuntimeError):
    """No plan traverses the corridor within the state-of-charge limits."""

    def __init__(self, message: str, segment: tuple[int, int] | None = None):
        super().__init__(message)
        self.segment = segment


def slot_index(t: float, dt: float) -> int:
    """Index ``k`` with ``t`` in ``[t_k, t_k+1)``, robust to round-off."""
    return int(math.floor(t / dt + SLOT_TOL))


@dataclass(frozen=True)
class Station:
    """A charging opportunity with its overhead and availability forecast."""

    rho: float
    forecast: AvailabilityForecast = field(repr=False)
    name: str = ""

    @classmethod
    def from_tables(cls, rho: float, dt: float, wait, power, name: str = "") -> "Station":
        wait = np.asarray(wait, dtype=float)
        power = np.asarray(power, dtype=float)
        times = dt * np.arange(wait.size)
        return cls(rho, AvailabilityForecast(times, wait, power), name)


def naive_station(rho: float, charger_power: float, horizon: float, name: str = "") -> Station:
    """Station assumed never congested: no wait, full charger power."""
    times = np.array([0.0, horizon])
    return Station(rho, AvailabilityForecast(times, np.zeros(2), np.full(2, charger_power)), name)


@dataclass(frozen=True)
class Corridor:
    stations: tuple[Station, ...]
    lengths: tuple[float, ...]  # km, between consecutive stations
    speeds: tuple[float, ...]  # km/h
    t_start: float = 0.0  # h, arrival at the first station

    def __post_init__(self):
        object.__setattr__(self, "stations", tuple(self.stations))
        object.__setattr__(self, "lengths", tuple(float(x) for x in self.lengths))
        object.__setattr__(self, "speeds", tuple(float(x) for x in self.speeds))
        n_seg = max(len(self.stations) - 1, 0)
        if len(self.lengths) != n_seg or len(self.speeds) != n_seg:
            raise ConfigurationError(
                f"{len(self.stations)} stations need {n_seg} segments, got "
                f"{len(self.lengths)} lengths and {len(self.speeds)} speeds"
            )
        if any(d <= 0 for d in self.lengths) or any(s <= 0 for s in self.speeds):
            raise ConfigurationError("segment lengths and speeds must be positive")

    @property
    def drive_times(self) -> tuple[float, ...]:
        return tuple(d / s for d, s in zip(self.lengths, self.speeds))

    @property
    def free_flow_time(self) -> float:
        return float(sum(self.drive_times))


@dataclass(frozen=True)
class VehicleSpec:
    capacity_C: float = 75.0  # kWh
    consumption_p: float = 0.2  # kWh/km
    soc_floor_eta: float = 0.1
    initial_energy: float = 45.0  # kWh

    def __post_init__(self):
        if self.capacity_C <= 0 or self.consumption_p < 0:
            raise ConfigurationError("capacity must be positive and consumption nonnegative")
        if not 0 <= self.soc_floor_eta < 1:
            raise ConfigurationError(f"soc floor must lie in [0, 1), got {self.soc_floor_eta}")
        if not 0 < self.initial_energy <= self.capacity_C + 1e-9:
            raise ConfigurationError(
                f"initial energy {self.initial_energy} outside (0, {self.capacity_C}]"
            )
        if self.initial_energy < self.soc_floor_eta * self.capacity_C - 1e-9:
            raise ConfigurationError("initial energy below the state-of-charge floor")

    @property
    def floor(self) -> float:
        return self.soc_floor_eta * self.capacity_C


@dataclass
class EvspProblem:
    """Discretised problem: forecast tables sampled at ``t_k = k * dt``."""

    corridor: Corridor
    vehicle: VehicleSpec
    dt: float
    horizon: float
    times: np.ndarray  # t_0 .. t_N
    wait: np.ndarray  # (I, N + 1)
    power: np.ndarray  # (I, N + 1)
    rho: np.ndarray
    big_m: float

    @property
    def n_stations(self) -> int:
        return len(self.corridor.stations)

    @property
    def n_points(self) -> int:
        return self.times.size

    @property
    def tau_offset(self) -> float:
        return self.corridor.t_start + self.corridor.free_flow_time

    def to_json(self) -> dict:
        c = self.corridor
        return {
            "dt_h": self.dt,
            "horizon_h": self.horizon,
            "t_start_h": c.t_start,
            "lengths_km": list(c.lengths),
            "speeds_kmh": list(c.speeds),
            "rho_h": self.rho.tolist(),
            "wait_h": self.wait.tolist(),
            "power_kw": self.power.tolist(),
            "vehicle": {
                "capacity_kwh": self.vehicle.capacity_C,
                "consumption_kwh_per_km": self.vehicle.consumption_p,
                "soc_floor": self.vehicle.soc_floor_eta,
                "initial_energy_kwh": self.vehicle.initial_energy,
            },
        }

    @classmethod
    def from_json(cls, doc: dict) -> "EvspProblem":
        dt = float(doc["dt_h"])
        stations = [
            Station.from_tables(r, dt, w, p)
            for r, w, p in zip(doc["rho_h"], doc["wait_h"], doc["power_kw"])
        ]
        corridor = Corridor(stations, doc["lengths_km"], doc["speeds_kmh"], doc.get("t_start_h", 0.0))
        veh = doc["vehicle"]
        vehicle = VehicleSpec(
            veh["capacity_kwh"], veh["consumption_kwh_per_km"], veh["soc_floor"], veh["initial_energy_kwh"]
        )
        return build_problem(corridor, vehicle, dt, float(doc["horizon_h"]))


def build_problem(corridor: Corridor, vehicle: VehicleSpec, dt: float = 0.1,
                  horizon: float = 24.0) -> EvspProblem:
    """Sample every station forecast on the planning grid."""
    if dt <= 0 or horizon <= 0:
        raise ConfigurationError("dt and horizon must be positive")
    n_steps = int(round(horizon / dt))
    if not math.isclose(n_steps * dt, horizon, rel_tol=1e-9, abs_tol=1e-9):
        raise ConfigurationError(f"horizon {horizon} is not a multiple of dt {dt}")
    if corridor.t_start + corridor.free_flow_time > horizon:
        raise ConfigurationError(
            f"horizon {horizon} h shorter than the free-flow traversal "
            f"({corridor.t_start + corridor.free_flow_time:.3f} h)"
        )
    times = dt * np.arange(n_steps + 1)
    I = len(corridor.stations)
    wait = np.zeros((I, n_steps + 1))
    power = np.zeros((I, n_steps + 1))
    for i, st in enumerate(corridor.stations):
        fc = st.forecast
        if fc.times[0] > 1e-9 or fc.times[-1] < horizon - 1e-9:
            raise ConfigurationError(
                f"forecast of station {i} covers [{fc.times[0]}, {fc.times[-1]}], "
                f"horizon needs [0, {horizon}]"
            )
        wait[i], power[i] = fc.sample(times)
    if np.any(wait < 0) or np.any(power < 0):
        raise ConfigurationError("forecast tables must be nonnegative")
    rho = np.array([st.rho for st in corridor.stations], dtype=float)
    if np.any(rho < 0):
        raise ConfigurationError("station overheads must be nonnegative")
    big_m = horizon + corridor.free_flow_time + float(wait.max(initial=0.0)) + float(rho.sum()) + 1.0
    return EvspProblem(corridor, vehicle, float(dt), float(horizon), times, wait, power, rho, big_m)


@dataclass
class ChargingPlan:
    """Full variable assignment of a solved instance."""

    x: np.ndarray  # visit flags
    E: np.ndarray  # kWh charged
    e: np.ndarray  # kWh on arrival
    t_arrive: np.ndarray
    t_charge: np.ndarray
    t_depart: np.ndarray
    omega: np.ndarray
    phi: np.ndarray  # (I, N + 1), last column always 0
    theta: np.ndarray  # (I, N + 1)
    tau: float

    @property
    def stops(self) -> list[int]:
        return [int(i) for i in np.flatnonzero(self.x)]

    def to_json(self) -> dict:
        return {
            "tau_h": self.tau,
            "x": self.x.astype(int).tolist(),
            "E_kwh": self.E.tolist(),
            "e_kwh": self.e.tolist(),
            "t_arrive_h": self.t_arrive.tolist(),
            "t_charge_h": self.t_charge.tolist(),
            "t_depart_h": self.t_depart.tolist(),
            "omega_h": self.omega.tolist(),
            "phi_slots": [np.flatnonzero(r).tolist() for r in self.phi],
            "theta_slots": [np.flatnonzero(r).tolist() for r in self.theta],
        }

    @classmethod
    def from_json(cls, doc: dict, n_points: int) -> "ChargingPlan":
        I = len(doc["x"])
        phi = np.zeros((I, n_points), dtype=int)
        theta = np.zeros((I, n_points), dtype=int)
        for i in range(I):
            phi[i, doc["phi_slots"][i]] = 1
            theta[i, doc["theta_slots"][i]] = 1
        arr = lambda key: np.asarray(doc[key], dtype=float)
        return cls(
            np.asarray(doc["x"], dtype=int), arr("E_kwh"), arr("e_kwh"), arr("t_arrive_h"),
            arr("t_charge_h"), arr("t_depart_h"), arr("omega_h"), phi, theta, float(doc["tau_h"]),
        )

    def write_summary_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["station", "x", "E_kwh", "arrive_h", "wait_h", "start_h", "depart_h"])
            for i in range(self.x.size):
                w.writerow([
                    i, int(self.x[i]), repr(float(self.E[i])), repr(float(self.t_arrive[i])),
                    repr(float(self.omega[i])), repr(float(self.t_charge[i])),
                    repr(float(self.t_depart[i])),
                ])


def dump_json(obj, path) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")
