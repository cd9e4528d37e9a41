"""Independent constraint check of a charging plan.

Nothing here touches the solver: every row of the formulation is evaluated
directly on the plan's variable values and the downtime is recomputed from
the arrival time at the last station.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .problem import ChargingPlan, EvspProblem

__all__ = ["Violation", "ValidationReport", "validate_plan"]


@dataclass(frozen=True)
class Violation:
    constraint: str  # e.g. "11e"
    station: int
    detail: str


@dataclass
class ValidationReport:
    violations: list[Violation] = field(default_factory=list)
    tau: float = float("nan")

    @property
    def ok(self) -> bool:
        return not self.violations

    def constraints(self) -> set[str]:
        return {v.constraint for v in self.violations}

    def __str__(self) -> str:
        if self.ok:
            return f"plan valid, tau = {self.tau:.6f} h"
        lines = [f"{len(self.violations)} violation(s):"]
        lines += [f"  [{v.constraint}] station {v.station}: {v.detail}" for v in self.violations]
        return "\n".join(lines)


def validate_plan(plan: ChargingPlan, problem: EvspProblem, tol: float = 1e-6) -> ValidationReport:
    rep = ValidationReport()
    bad = lambda cid, i, msg: rep.violations.append(Violation(cid, i, msg))

    cor, veh = problem.corridor, problem.vehicle
    I, K = problem.n_stations, problem.n_points
    dt, tk = problem.dt, problem.times
    C, eta = veh.capacity_C, veh.soc_floor_eta
    if I == 0:
        rep.tau = 0.0
        if abs(plan.tau) > tol:
            bad("15", -1, f"empty corridor must have tau 0, plan says {plan.tau}")
        return rep

    shapes = {"phi": plan.phi.shape, "theta": plan.theta.shape}
    for name, shp in shapes.items():
        if shp != (I, K):
            bad("14", -1, f"{name} has shape {shp}, expected {(I, K)}")
            return rep

    x, E, e = plan.x, plan.E, plan.e
    ta, ts, td, om = plan.t_arrive, plan.t_charge, plan.t_depart, plan.omega
    phi, theta = plan.phi, plan.theta

    # domains
    for name, arr in (("x", x), ("phi", phi), ("theta", theta)):
        if not np.all((arr == 0) | (arr == 1)):
            bad("14", -1, f"{name} is not binary")
    for name, arr in (("e", e), ("E", E), ("t_arrive", ta), ("t_charge", ts),
                      ("t_depart", td), ("omega", om)):
        for i in np.flatnonzero(arr < -tol):
            bad("14", int(i), f"{name} = {arr[i]:.6g} is negative")

    if abs(e[0] - veh.initial_energy) > tol:
        bad("init", 0, f"arrival energy {e[0]:.6g} != initial energy {veh.initial_energy:.6g}")
    if ta[0] < cor.t_start - tol:
        bad("init", 0, f"arrives at {ta[0]:.6g} before the trip starts ({cor.t_start:.6g})")

    for i in range(I):
        if i < I - 1:
            expect = e[i] - cor.lengths[i] * veh.consumption_p + E[i]
            if abs(e[i + 1] - expect) > tol:
                bad("11a", i, f"e[{i + 1}] = {e[i + 1]:.6g}, recursion gives {expect:.6g}")
            lag = td[i] + cor.lengths[i] / cor.speeds[i]
            if ta[i + 1] < lag - tol:
                bad("12c", i, f"arrives at next station {ta[i + 1]:.6g} before {lag:.6g}")
        if E[i] > x[i] * C + tol:
            bad("11b", i, f"charges {E[i]:.6g} kWh without visiting")
        if e[i] < eta * C - tol or e[i] > C + tol:
            bad("11c", i, f"arrival energy {e[i]:.6g} outside [{eta * C:.6g}, {C:.6g}]")
        slot_energy = dt * float(theta[i] @ problem.power[i])
        if E[i] > slot_energy + tol:
            bad("11d", i, f"charges {E[i]:.6g} kWh but slots deliver {slot_energy:.6g}")
        if E[i] < -tol or E[i] > C - e[i] + tol:
            bad("11e", i, f"charges {E[i]:.6g} kWh with headroom {C - e[i]:.6g}")
        need = ta[i] + om[i] + problem.rho[i] * x[i]
        if ts[i] < need - tol:
            bad("12a", i, f"charging starts {ts[i]:.6g} before {need:.6g}")
        need = ts[i] + dt * theta[i].sum()
        if td[i] < need - tol:
            bad("12b", i, f"departs {td[i]:.6g} before {need:.6g}")

        # theta marks exactly the grid points in (t_charge, t_depart]
        inside = (tk > ts[i] + 1e-9) & (tk <= td[i] + 1e-9)
        if np.any(theta[i].astype(bool) != inside):
            bad("13a", i, "charging indicators do not match the charging interval")
        # phi marks the slot [t_k, t_k+1) containing the arrival
        want_phi = np.zeros(K, dtype=int)
        if x[i]:
            k = int(np.floor(ta[i] / dt + 1e-9))
            if k <= K - 2:
                want_phi[k] = 1
        if np.any(phi[i] != want_phi):
            bad("13b", i, "arrival slot selector does not match the arrival time")
        if phi[i, K - 1] != 0:
            bad("13b", i, "arrival slot selector set on the last grid point")
        wsel = float(phi[i] @ problem.wait[i])
        if abs(om[i] - wsel) > tol:
            bad("13c", i, f"wait {om[i]:.6g} != forecast wait of the arrival slot {wsel:.6g}")
        if phi[i].sum() != x[i]:
            bad("13d", i, f"{phi[i].sum()} arrival slots selected with x = {x[i]}")
        if np.any(phi[i] > x[i]) or np.any(theta[i] > x[i]):
            bad("13e", i, "slot selectors active at an unvisited station")

    rep.tau = float(ta[-1] - problem.tau_offset)
    if abs(plan.tau - rep.tau) > tol:
        bad("15", I - 1, f"reported tau {plan.tau:.6g} != recomputed {rep.tau:.6g}")
    return rep
