"""Arrival-rate construction for scheduled and unscheduled EV traffic.

Scheduled vehicles announce an expected arrival time and an energy demand;
their arrival time is modelled as a Gaussian whose spread grows with the
announcement lead time.  Unscheduled vehicles are represented by a
historical rate function.  Everything is sampled on a uniform time grid
(:class:`RateGrid`) which is the common currency of the fluid model and the
discrete simulator.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "AlignmentError",
    "InvalidParameterError",
    "TimeGrid",
    "RateGrid",
    "ScheduledVehicle",
    "SigmaModel",
    "EnergyDistribution",
    "ScenarioParams",
    "BaselineParams",
    "arrival_pdf",
    "scheduled_rates",
    "aggregate_rates",
    "baseline_rate",
    "unit_sinusoid",
    "saturation_throughput",
    "sample_nhpp",
    "split_and_sample",
    "realize_scheduled",
]

SQRT_2PI = math.sqrt(2.0 * math.pi)


class InvalidParameterError(ValueError):
    """A model parameter violates its domain."""


class AlignmentError(ValueError):
    """Two rate grids do not share the same time axis."""


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid ``t0, t0 + dt, ..., t0 + (n - 1) dt``."""

    t0: float
    dt: float
    n: int

    def __post_init__(self):
        if self.dt <= 0:
            raise InvalidParameterError(f"dt must be positive, got {self.dt}")
        if self.n < 1:
            raise InvalidParameterError(f"grid needs at least one point, got {self.n}")

    @classmethod
    def span(cls, t0: float, t1: float, dt: float) -> "TimeGrid":
        """Grid from ``t0`` to (at least) ``t1`` inclusive."""
        n = int(math.ceil((t1 - t0) / dt - 1e-9)) + 1
        return cls(float(t0), float(dt), max(n, 1))

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.n)

    @property
    def t_end(self) -> float:
        return self.t0 + self.dt * (self.n - 1)


@dataclass(frozen=True)
class RateGrid:
    """Nonnegative rate sampled on a uniform grid, linear in between."""

    t0: float
    dt: float
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim != 1 or vals.size == 0:
            raise InvalidParameterError("rate grid needs a nonempty 1-D value array")
        if self.dt <= 0:
            raise InvalidParameterError(f"dt must be positive, got {self.dt}")
        if np.any(vals < 0) or not np.all(np.isfinite(vals)):
            raise InvalidParameterError("rate values must be finite and nonnegative")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @classmethod
    def zeros(cls, grid: TimeGrid) -> "RateGrid":
        return cls(grid.t0, grid.dt, np.zeros(grid.n))

    @classmethod
    def on(cls, grid: TimeGrid, values) -> "RateGrid":
        return cls(grid.t0, grid.dt, np.asarray(values, dtype=float))

    @property
    def grid(self) -> TimeGrid:
        return TimeGrid(self.t0, self.dt, self.values.size)

    @property
    def times(self) -> np.ndarray:
        return self.grid.times

    def __len__(self) -> int:
        return self.values.size

    def __call__(self, t):
        """Linear interpolation; zero outside the grid."""
        return np.interp(t, self.times, self.values, left=0.0, right=0.0)

    def aligned_with(self, other: "RateGrid") -> bool:
        return (
            len(self) == len(other)
            and math.isclose(self.t0, other.t0, abs_tol=1e-12)
            and math.isclose(self.dt, other.dt, rel_tol=1e-12)
        )

    def integral(self) -> float:
        """Trapezoid integral over the whole grid."""
        v = self.values
        if v.size < 2:
            return 0.0
        return float(self.dt * (v.sum() - 0.5 * (v[0] + v[-1])))

    def cumulative(self) -> np.ndarray:
        """Running trapezoid integral, zero at ``t0``."""
        v = self.values
        out = np.zeros_like(v)
        out[1:] = np.cumsum(0.5 * self.dt * (v[1:] + v[:-1]))
        return out

    def time_average(self) -> float:
        span = self.dt * (len(self) - 1)
        return self.integral() / span if span > 0 else float(self.values[0])

    def scaled(self, factor: float) -> "RateGrid":
        return RateGrid(self.t0, self.dt, self.values * factor)

    def __add__(self, other: "RateGrid") -> "RateGrid":
        if not self.aligned_with(other):
            raise AlignmentError("cannot add rate grids on different time axes")
        return RateGrid(self.t0, self.dt, self.values + other.values)

    def to_csv(self, path, header: str = "value") -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t_h", header])
            for t, v in zip(self.times, self.values):
                w.writerow([repr(float(t)), repr(float(v))])

    @classmethod
    def from_csv(cls, path) -> "RateGrid":
        times, vals = [], []
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            next(reader, None)
            for lineno, row in enumerate(reader, start=2):
                if not row:
                    continue
                try:
                    times.append(float(row[0]))
                    vals.append(float(row[1]))
                except (ValueError, IndexError) as exc:
                    raise ValueError(f"{path}:{lineno}: malformed rate row {row!r}") from exc
        if len(times) < 2:
            raise ValueError(f"{path}: rate file needs at least two rows")
        dt = times[1] - times[0]
        if not np.allclose(np.diff(times), dt, rtol=1e-6, atol=1e-9):
            raise ValueError(f"{path}: rate grid is not uniform")
        return cls(times[0], dt, np.array(vals))


@dataclass(frozen=True)
class ScheduledVehicle:
    expected_arrival: float  # h
    energy_demand: float  # kWh
    sigma: float  # h

    def __post_init__(self):
        if self.energy_demand <= 0:
            raise InvalidParameterError(f"energy demand must be positive, got {self.energy_demand}")
        if self.sigma <= 0:
            raise InvalidParameterError(f"sigma must be positive, got {self.sigma}")
        if self.expected_arrival < 0:
            raise InvalidParameterError(
                f"expected arrival must be nonnegative, got {self.expected_arrival}"
            )


@dataclass(frozen=True)
class SigmaModel:
    """Arrival-time spread growing linearly with lead time."""

    epsilon: float = 0.02
    slope_k: float = 0.05

    def __post_init__(self):
        if self.epsilon <= 0:
            raise InvalidParameterError(f"epsilon must be positive, got {self.epsilon}")
        if self.slope_k < 0:
            raise InvalidParameterError(f"slope must be nonnegative, got {self.slope_k}")

    def __call__(self, expected_arrival, t_ref: float = 0.0):
        lead = np.maximum(np.asarray(expected_arrival, dtype=float) - t_ref, 0.0)
        return self.epsilon + self.slope_k * lead


@dataclass(frozen=True)
class EnergyDistribution:
    """Uniform energy demand in ``[e_min, e_max]`` kWh."""

    e_min: float = 15.0
    e_max: float = 60.0

    def __post_init__(self):
        if not 0 < self.e_min <= self.e_max:
            raise InvalidParameterError(
                f"need 0 < e_min <= e_max, got ({self.e_min}, {self.e_max})"
            )

    @property
    def mean(self) -> float:
        return 0.5 * (self.e_min + self.e_max)

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return rng.uniform(self.e_min, self.e_max, size=size)


@dataclass(frozen=True)
class ScenarioParams:
    alpha: float = 0.7
    beta: float = 0.5
    capacity_c: int = 5
    gamma: float = 1.0
    horizon: float = 10.0
    seed: int = 0

    def __post_init__(self):
        if self.alpha < 0:
            raise InvalidParameterError(f"alpha must be nonnegative, got {self.alpha}")
        if not 0 <= self.beta <= 1:
            raise InvalidParameterError(f"beta must lie in [0, 1], got {self.beta}")
        if self.capacity_c < 1:
            raise InvalidParameterError(f"need at least one charger, got {self.capacity_c}")
        if not 0 < self.gamma <= 1:
            raise InvalidParameterError(f"gamma must lie in (0, 1], got {self.gamma}")
        if self.horizon <= 0:
            raise InvalidParameterError(f"horizon must be positive, got {self.horizon}")


@dataclass(frozen=True)
class BaselineParams:
    """Station data needed to scale the unit baseline rate."""

    capacity_c: int = 5
    charger_power: float = 150.0  # kW
    mean_energy: float = 37.5  # kWh
    period: float = 24.0  # h
    phase: float = 0.0  # h
    amplitude: float = 1.0


def arrival_pdf(t, vehicle: ScheduledVehicle):
    """Gaussian arrival density of one scheduled vehicle, in vehicles per hour."""
    sigma = vehicle.sigma
    if sigma <= 0:
        raise InvalidParameterError(f"sigma must be positive, got {sigma}")
    z = (np.asarray(t, dtype=float) - vehicle.expected_arrival) / sigma
    return np.exp(-0.5 * z * z) / (sigma * SQRT_2PI)


def scheduled_rates(
    vehicles: Sequence[ScheduledVehicle], grid: TimeGrid
) -> tuple[RateGrid, RateGrid]:
    """Expected arrival rate and arriving load of the scheduled set.

    Returns ``(lambda_u, delta_u)`` where ``lambda_u`` is the sum of the
    vehicles' arrival densities and ``delta_u`` weights each density by the
    vehicle's energy demand (kW).
    """
    t = grid.times
    lam = np.zeros(grid.n)
    load = np.zeros(grid.n)
    for veh in vehicles:
        k = arrival_pdf(t, veh)
        lam += k
        load += veh.energy_demand * k
    return RateGrid.on(grid, lam), RateGrid.on(grid, load)


def aggregate_rates(
    lu: RateGrid, du: RateGrid, lt: RateGrid, dtld: RateGrid
) -> tuple[RateGrid, RateGrid]:
    """Pointwise sums of scheduled and unscheduled rates."""
    for other in (du, lt, dtld):
        if not lu.aligned_with(other):
            raise AlignmentError("scheduled and unscheduled rates are not aligned")
    return lt + lu, dtld + du


def unit_sinusoid(t, period: float = 24.0, phase: float = 0.0, amplitude: float = 1.0):
    """Nonnegative periodic profile with unit time-average."""
    raw = lambda s: np.maximum(0.0, 1.0 + amplitude * np.sin(2.0 * np.pi * (s + phase) / period))
    # normaliser over one period; exactly 1 when amplitude <= 1
    s = np.linspace(0.0, period, 4097)[:-1]
    norm = float(np.mean(raw(s)))
    return raw(np.asarray(t, dtype=float)) / norm


def saturation_throughput(capacity_c: int, charger_power: float, mean_energy: float) -> float:
    """Vehicles per hour a fully busy station can serve."""
    return capacity_c * charger_power / mean_energy


def baseline_rate(grid: TimeGrid, alpha: float, params: BaselineParams) -> RateGrid:
    """Unscheduled-plus-scheduled baseline rate scaled to congestion ``alpha``."""
    if alpha < 0:
        raise InvalidParameterError(f"alpha must be nonnegative, got {alpha}")
    R = saturation_throughput(params.capacity_c, params.charger_power, params.mean_energy)
    shape = unit_sinusoid(grid.times, params.period, params.phase, params.amplitude)
    return RateGrid.on(grid, R * alpha * shape)


def sample_nhpp(rate: RateGrid, rng: np.random.Generator) -> np.ndarray:
    """Event times of a Poisson process with the given intensity, by thinning."""
    lam_max = float(rate.values.max())
    t0, t1 = rate.t0, rate.grid.t_end
    if lam_max <= 0 or t1 <= t0:
        return np.empty(0)
    n = rng.poisson(lam_max * (t1 - t0))
    cand = np.sort(rng.uniform(t0, t1, size=n))
    keep = rng.uniform(0.0, lam_max, size=n) < rate(cand)
    return cand[keep]


def split_and_sample(
    f: RateGrid,
    beta: float,
    energy_dist: EnergyDistribution,
    sigma_model: SigmaModel,
    rng: np.random.Generator,
) -> tuple[list[ScheduledVehicle], RateGrid, RateGrid]:
    """Split a baseline rate into sampled scheduled vehicles and an unscheduled rate.

    Scheduled arrival times are drawn from a Poisson process with intensity
    ``beta * f``; the rest of the traffic stays as the rate
    ``(1 - beta) * f`` whose load uses the mean energy of ``energy_dist``.
    """
    if not 0 <= beta <= 1:
        raise InvalidParameterError(f"beta must lie in [0, 1], got {beta}")
    vehicles: list[ScheduledVehicle] = []
    if beta > 0:
        times = sample_nhpp(f.scaled(beta), rng)
        energies = energy_dist.sample(rng, times.size)
        sigmas = sigma_model(times, t_ref=f.t0)
        vehicles = [
            ScheduledVehicle(float(t), float(e), float(s))
            for t, e, s in zip(times, energies, sigmas)
        ]
    lam_t = f.scaled(1.0 - beta)
    return vehicles, lam_t, lam_t.scaled(energy_dist.mean)


def realize_scheduled(
    vehicles: Iterable[ScheduledVehicle], rng: np.random.Generator
) -> np.ndarray:
    """Draw actual arrival times around the announced ones (clipped at zero)."""
    vehicles = list(vehicles)
    if not vehicles:
        return np.empty(0)
    mean = np.array([v.expected_arrival for v in vehicles])
    sd = np.array([v.sigma for v in vehicles])
    return np.maximum(rng.normal(mean, sd), 0.0)
