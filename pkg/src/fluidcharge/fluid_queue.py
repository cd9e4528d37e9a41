"""Coupled vehicle/energy fluid model of a multi-charger FCFS station.

The station is described by four stocks: fluid vehicles waiting (``q``) and
their energy demand (``E``), fluid vehicles in service (``b``) and their
remaining energy (``W``).  Service is limited by the number of chargers and
by the grid connection.  The model switches between an *underloaded* regime
(empty queue, ``b < c``) and an *overloaded* regime (``b = c``, queue
builds or drains) and is advanced with a fixed-step explicit Euler scheme.

Post-processing turns a trajectory into the availability forecast served to
vehicles: the wait ``v(t)`` a unit arriving at ``t`` would see, and the
per-vehicle charging power ``P(t)``.
"""

from __future__ import annotations

import bisect
import csv
import math
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from .arrivals import AlignmentError, InvalidParameterError, RateGrid, TimeGrid

__all__ = [
    "Regime",
    "StationConfig",
    "FluidState",
    "FluidTrajectory",
    "AvailabilityForecast",
    "IntegrationError",
    "supplied_power",
    "service_and_departure",
    "step",
    "waited_time",
    "integrate",
    "postprocess",
    "forecast",
]

EPS_W = 1e-6  # kWh; below this the in-service workload is treated as empty
EPS_B = 1e-9  # vehicles
EPS_LAMBDA = 1e-12


class IntegrationError(RuntimeError):
    """Raised when the fluid state becomes inconsistent."""


class Regime(str, Enum):
    UNDERLOADED = "underloaded"
    OVERLOADED = "overloaded"


@dataclass(frozen=True)
class StationConfig:
    capacity_c: int = 1
    charger_power: float = 150.0  # kW
    gamma: float = 1.0
    e_floor: float = 1.0  # kWh, bounds the per-charger service rate

    def __post_init__(self):
        if self.capacity_c < 1:
            raise InvalidParameterError(f"need at least one charger, got {self.capacity_c}")
        if self.charger_power <= 0:
            raise InvalidParameterError(f"charger power must be positive, got {self.charger_power}")
        if not 0 < self.gamma <= 1:
            raise InvalidParameterError(f"gamma must lie in (0, 1], got {self.gamma}")
        if self.e_floor <= 0:
            raise InvalidParameterError(f"e_floor must be positive, got {self.e_floor}")

    @property
    def grid_power(self) -> float:
        return self.gamma * self.charger_power * self.capacity_c

    @property
    def mu_cap(self) -> float:
        return self.charger_power / self.e_floor


@dataclass(frozen=True)
class FluidState:
    q: float = 0.0
    b: float = 0.0
    E: float = 0.0
    W: float = 0.0
    w: float = 0.0
    regime: Regime = Regime.UNDERLOADED

    def check(self, cfg: StationConfig, tol: float = 1e-9) -> None:
        if min(self.q, self.b, self.E, self.W, self.w) < -tol:
            raise IntegrationError(f"negative stock in {self}")
        if self.b > cfg.capacity_c + tol:
            raise IntegrationError(f"b={self.b} exceeds capacity {cfg.capacity_c}")
        if self.regime is Regime.UNDERLOADED and max(self.q, self.E, self.w) > tol:
            raise IntegrationError(f"underloaded state with nonempty queue: {self}")


@dataclass
class FluidTrajectory:
    """States at grid times plus the rates applied over each step."""

    grid: TimeGrid
    q: np.ndarray
    b: np.ndarray
    E: np.ndarray
    W: np.ndarray
    w: np.ndarray
    overloaded: np.ndarray
    lam_star: np.ndarray
    delta_star: np.ndarray
    supplied_power: np.ndarray
    departure_rate: np.ndarray
    service_rate: np.ndarray
    lam: np.ndarray = field(repr=False)
    delta: np.ndarray = field(repr=False)

    @property
    def times(self) -> np.ndarray:
        return self.grid.times

    def state(self, k: int) -> FluidState:
        return FluidState(
            float(self.q[k]),
            float(self.b[k]),
            float(self.E[k]),
            float(self.W[k]),
            float(self.w[k]),
            Regime.OVERLOADED if self.overloaded[k] else Regime.UNDERLOADED,
        )

    def conservation_residuals(self) -> tuple[np.ndarray, np.ndarray]:
        """Vehicle and energy balance residuals at every grid time.

        Inflows are integrated with the trapezoid rule (exact for the
        piecewise-linear input grids); the model's outflows are integrated
        with the same rule, so the residual measures the time-discretisation
        error of the scheme.
        """
        dt = self.grid.dt

        def cum(x):
            out = np.zeros_like(x)
            out[1:] = np.cumsum(0.5 * dt * (x[1:] + x[:-1]))
            return out

        veh = cum(self.lam) - cum(self.departure_rate) - (self.q + self.b - self.q[0] - self.b[0])
        energy = cum(self.delta) - cum(self.supplied_power) - (
            self.E + self.W - self.E[0] - self.W[0]
        )
        return veh, energy

    def to_csv(self, path, forecast: "AvailabilityForecast | None" = None) -> None:
        cols = ["t_h", "q", "b", "E_kwh", "W_kwh", "w_h", "v_h", "P_kw", "PS_kw"]
        v = forecast.wait if forecast is not None else np.full(self.grid.n, np.nan)
        p = forecast.power if forecast is not None else np.full(self.grid.n, np.nan)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(cols)
            for row in zip(self.times, self.q, self.b, self.E, self.W, self.w, v, p, self.supplied_power):
                writer.writerow([repr(float(x)) for x in row])


@dataclass
class AvailabilityForecast:
    """Expected wait (h) and per-vehicle power (kW) on a time grid."""

    times: np.ndarray
    wait: np.ndarray
    power: np.ndarray

    def sample(self, t) -> tuple[np.ndarray, np.ndarray]:
        """Forecast values at arbitrary times (linear interpolation, held at the ends)."""
        t = np.asarray(t, dtype=float)
        return np.interp(t, self.times, self.wait), np.interp(t, self.times, self.power)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t_h", "v_h", "P_kw"])
            for row in zip(self.times, self.wait, self.power):
                writer.writerow([repr(float(x)) for x in row])

    @classmethod
    def from_csv(cls, path) -> "AvailabilityForecast":
        t, v, p = [], [], []
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None:
                raise ValueError(f"{path}: empty forecast file")
            try:
                it, iv, ip = header.index("t_h"), header.index("v_h"), header.index("P_kw")
            except ValueError as exc:
                raise ValueError(f"{path}:1: forecast header needs t_h, v_h, P_kw") from exc
            for lineno, row in enumerate(reader, start=2):
                if not row:
                    continue
                try:
                    t.append(float(row[it]))
                    v.append(float(row[iv]))
                    p.append(float(row[ip]))
                except (ValueError, IndexError) as exc:
                    raise ValueError(f"{path}:{lineno}: malformed forecast row {row!r}") from exc
        return cls(np.array(t), np.array(v), np.array(p))


def supplied_power(b: float, cfg: StationConfig) -> float:
    """Aggregate power drawn by ``b`` busy chargers under the grid cap."""
    return min(cfg.grid_power, cfg.charger_power * b)


def service_and_departure(PS: float, W: float, b: float, cfg: StationConfig) -> tuple[float, float]:
    """Per-charger service rate ``mu`` and aggregate departure rate ``r``.

    ``mu = PS / W`` is capped at ``P_hat / e_floor``; when the in-service
    workload is (numerically) empty the cap itself is used, so occupancy
    relaxes towards ``admitted * e_floor / P_hat``.
    """
    if b <= EPS_B:
        return 0.0, 0.0
    if W <= EPS_W:
        mu = cfg.mu_cap
    else:
        mu = min(PS / W, cfg.mu_cap)
    return mu, mu * b


def _advance(q, b, E, W, over, lam, dlt, ratio, cfg: StationConfig, dt: float):
    """One Euler step on plain floats.

    ``ratio`` is the energy per vehicle of the fluid at the head of the
    queue (used when the queue feeds service).  Returns the new stocks plus
    the effective rates ``(lam_star, delta_star, PS, r, mu)`` applied over
    the step.
    """
    c = cfg.capacity_c
    PS = min(cfg.grid_power, cfg.charger_power * b)
    mu, r = service_and_departure(PS, W, b, cfg)
    r = min(r, b / dt)

    if not over:
        room = c - b + r * dt
        inflow = lam * dt
        if inflow > room + 1e-15:
            frac = room / inflow if inflow > 0 else 0.0
            adm = room
            adm_e = frac * dlt * dt
            q = q + inflow - adm
            E = E + (1.0 - frac) * dlt * dt
            b = float(c)
            over = True
        else:
            adm = inflow
            adm_e = dlt * dt
            b = b + adm - r * dt
    else:
        avail = q + lam * dt
        avail_e = E + dlt * dt
        if avail <= r * dt:
            adm = avail
            adm_e = avail_e
            q = 0.0
            E = 0.0
            b = b + adm - r * dt
            if b < c - 1e-12:
                over = False
            else:
                b = float(c)
        else:
            adm = r * dt
            adm_e = min(adm * ratio, avail_e) if ratio is not None else adm * (avail_e / avail)
            q = avail - adm
            E = avail_e - adm_e
            b = float(c)

    PS_eff = min(PS, (W + adm_e) / dt)
    W = W + adm_e - PS_eff * dt
    # clamp round-off only
    q = max(q, 0.0)
    E = max(E, 0.0)
    W = max(W, 0.0)
    b = min(max(b, 0.0), float(c))
    if not over:
        q = 0.0
        E = 0.0
    return q, b, E, W, over, adm / dt, adm_e / dt, PS_eff, r, mu


def step(
    state: FluidState,
    lam: float,
    delta: float,
    cfg: StationConfig,
    dt: float,
    head_ratio: float | None = None,
) -> FluidState:
    """Advance a single state by one Euler step.

    ``head_ratio`` is the energy per vehicle of the fluid at the head of the
    queue; without it the queue average ``E / q`` is used.  The waited time
    of the returned state is carried over and must be refreshed by the
    caller (see :func:`waited_time`), since it depends on arrival history.
    """
    if dt <= 0:
        raise InvalidParameterError(f"dt must be positive, got {dt}")
    q, b, E, W, over, *_ = _advance(
        state.q, state.b, state.E, state.W,
        state.regime is Regime.OVERLOADED,
        float(lam), float(delta), head_ratio, cfg, dt,
    )
    regime = Regime.OVERLOADED if over else Regime.UNDERLOADED
    w = state.w if over and q > 0 else 0.0
    return FluidState(q, b, E, W, w, regime)


def waited_time(cum_times, cum_arrivals, q: float, t: float, initial_queue: float = 0.0) -> float:
    """Time the fluid now entering service has spent in the queue.

    Finds the smallest ``w >= 0`` with ``A(t) - A(t - w) = q`` where ``A`` is
    the cumulative arrival function given by ``(cum_times, cum_arrivals)``
    (piecewise linear, nondecreasing).  A queue present at the first grid
    time is treated as having arrived at that instant.
    """
    if q <= 0:
        return 0.0
    cum_times = np.asarray(cum_times, dtype=float)
    cum_arrivals = np.asarray(cum_arrivals, dtype=float)
    t0 = float(cum_times[0])
    A_t = float(np.interp(t, cum_times, cum_arrivals))
    target = A_t - q
    if target < cum_arrivals[0]:
        if q > A_t - cum_arrivals[0] + initial_queue + 1e-9 * max(1.0, q):
            raise IntegrationError(
                f"queue {q:.6g} exceeds all arrivals up to t={t:.6g} "
                f"({A_t - cum_arrivals[0] + initial_queue:.6g})"
            )
        return t - t0
    hi = int(np.searchsorted(cum_times, t, side="right"))
    return t - _invert_cumulative(cum_times, cum_arrivals, target, hi)


def _invert_cumulative(times, cum, target: float, hi: int) -> float:
    """Largest ``s <= times[hi-1]`` where the interpolated ``cum(s) == target``."""
    j = bisect.bisect_right(cum, target, 0, hi) - 1
    if j < 0:
        return float(times[0])
    if j >= hi - 1:
        return float(times[hi - 1])
    c0, c1 = cum[j], cum[j + 1]
    if c1 <= c0:
        return float(times[j])
    return float(times[j] + (target - c0) / (c1 - c0) * (times[j + 1] - times[j]))


def integrate(
    lam: RateGrid,
    delta: RateGrid,
    cfg: StationConfig,
    initial: FluidState | None = None,
) -> FluidTrajectory:
    """Explicit Euler integration over the arrival grid."""
    if not lam.aligned_with(delta):
        raise AlignmentError("vehicle and load rates are not aligned")
    initial = initial or FluidState()
    initial.check(cfg)

    grid = lam.grid
    n, dt = grid.n, grid.dt
    times = grid.times.tolist()
    lam_v = lam.values.tolist()
    dlt_v = delta.values.tolist()
    cumA = lam.cumulative().tolist()

    q_a = np.zeros(n); b_a = np.zeros(n); E_a = np.zeros(n); W_a = np.zeros(n)
    w_a = np.zeros(n); ov_a = np.zeros(n, dtype=bool)
    ls_a = np.zeros(n); ds_a = np.zeros(n); ps_a = np.zeros(n); r_a = np.zeros(n); mu_a = np.zeros(n)

    q, b, E, W = initial.q, initial.b, initial.E, initial.W
    over = initial.regime is Regime.OVERLOADED or (q > 0)
    w = initial.w
    q0 = initial.q
    c = cfg.capacity_c

    for k in range(n):
        q_a[k] = q; b_a[k] = b; E_a[k] = E; W_a[k] = W; w_a[k] = w; ov_a[k] = over
        ratio = None
        if over and q > 0:
            s = times[k] - w
            ls = _interp_uniform(lam_v, times[0], dt, s)
            if ls > EPS_LAMBDA:
                ratio = _interp_uniform(dlt_v, times[0], dt, s) / ls
        q, b, E, W, over, ls_, ds_, ps_, r_, mu_ = _advance(
            q, b, E, W, over, lam_v[k], dlt_v[k], ratio, cfg, dt
        )
        ls_a[k] = ls_; ds_a[k] = ds_; ps_a[k] = ps_; r_a[k] = r_; mu_a[k] = mu_
        if k + 1 < n:
            if over and q > 0:
                w = _waited_on_grid(times, cumA, k + 1, q, q0, dt)
            else:
                w = 0.0
        if b > c + 1e-9:
            raise IntegrationError(f"occupancy {b} exceeds capacity at t={times[k]}")

    return FluidTrajectory(
        grid=grid, q=q_a, b=b_a, E=E_a, W=W_a, w=w_a, overloaded=ov_a,
        lam_star=ls_a, delta_star=ds_a, supplied_power=ps_a,
        departure_rate=r_a, service_rate=mu_a,
        lam=lam.values.copy(), delta=delta.values.copy(),
    )


def _interp_uniform(vals, t0: float, dt: float, s: float) -> float:
    x = (s - t0) / dt
    if x <= 0:
        return vals[0]
    i = int(x)
    if i >= len(vals) - 1:
        return vals[-1]
    f = x - i
    return vals[i] * (1.0 - f) + vals[i + 1] * f


def _waited_on_grid(times, cumA, k: int, q: float, q0: float, dt: float) -> float:
    target = cumA[k] - q
    if target < 0.0:
        if q > cumA[k] + q0 + 1e-9 * max(1.0, q):
            raise IntegrationError(
                f"queue {q:.6g} exceeds all arrivals up to t={times[k]:.6g}"
            )
        return times[k] - times[0]
    return times[k] - _invert_cumulative(times, cumA, target, k + 1)


def postprocess(traj: FluidTrajectory, cfg: StationConfig) -> AvailabilityForecast:
    """Availability forecast from a trajectory.

    Fluid entering service at ``t`` after waiting ``w(t)`` arrived at
    ``t - w(t)``, so the wait seen by an arrival at that epoch is ``w(t)``.
    The pairs are interpolated back onto the grid.  Per-vehicle power is the
    supplied power shared over the occupied chargers.
    """
    t = traj.times
    s = t - traj.w
    # FCFS keeps arrival epochs ordered; drop round-off reversals
    s_run = np.maximum.accumulate(s)
    keep = np.ones_like(s, dtype=bool)
    keep[1:] = s_run[1:] > s_run[:-1]
    xs, ws = s_run[keep], traj.w[keep]
    wait = np.interp(t, xs, ws, left=ws[0], right=ws[-1])
    wait = np.maximum(wait, 0.0)

    b = traj.b
    # min(P_hat * b, P_grid) / b written so the uncapped case is exactly P_hat
    with np.errstate(divide="ignore", invalid="ignore"):
        shared = cfg.grid_power / np.where(b > EPS_B, b, 1.0)
    per_ev = np.where(b > EPS_B, np.minimum(cfg.charger_power, shared), cfg.charger_power)
    power = np.clip(per_ev, 0.0, cfg.charger_power)
    return AvailabilityForecast(t.copy(), wait, power)


def forecast(lam: RateGrid, delta: RateGrid, cfg: StationConfig,
             initial: FluidState | None = None) -> tuple[FluidTrajectory, AvailabilityForecast]:
    """Integrate and post-process in one call."""
    traj = integrate(lam, delta, cfg, initial)
    return traj, postprocess(traj, cfg)
