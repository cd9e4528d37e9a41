"""Exact depth-first branch-and-bound for the corridor charging problem.

A node is the vehicle arriving at station ``i`` at time ``t`` with energy
``e``.  Branching chooses, per station, to pass or to stop; a stop fixes
the arrival slot (possibly waiting for a later slot with a shorter queue),
the first charging point and the number of charging slots.  For a fixed
slot choice the largest admissible energy is charged, which is never worse
than charging less.

Pruning uses

* a lower bound: remaining free-flow driving plus, when the remaining
  consumption exceeds the usable energy, one overhead and the fewest
  charging slots at the best remaining power;
* state-of-charge propagation: branches that reach a station below the
  floor are cut immediately;
* dominance: a node arriving no earlier with no more energy than an
  already expanded node (with a lexicographically smaller visit prefix)
  cannot lead to a better plan.

Ties in the downtime are broken towards the lexicographically smallest
visit vector, which depth-first search with the "pass" branch first finds
first.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .problem import ChargingPlan, EvspProblem, InfeasibleError, slot_index

__all__ = ["SolveOptions", "SolveStats", "solve"]

TIME_TOL = 1e-9
ENERGY_TOL = 1e-9


@dataclass(frozen=True)
class SolveOptions:
    gap: float = 0.0  # absolute optimality gap in hours
    node_limit: int = 5_000_000
    trim_energy: bool = True


@dataclass
class SolveStats:
    nodes: int = 0
    pruned_bound: int = 0
    pruned_dominance: int = 0


@dataclass(frozen=True)
class _Stop:
    t_arrive: float
    slot: int
    omega: float
    ready: float
    t_charge: float
    first_point: int
    n_slots: int
    energy: float


class _Search:
    def __init__(self, prob: EvspProblem, options: SolveOptions):
        self.p = prob
        self.opt = options
        self.stats = SolveStats()
        cor, veh = prob.corridor, prob.vehicle
        self.I = prob.n_stations
        self.N = prob.n_points - 1
        self.dt = prob.dt
        self.C = veh.capacity_C
        self.floor = veh.floor
        self.drive = list(cor.drive_times)
        self.use = [d * veh.consumption_p for d in cor.lengths]
        self.rho = prob.rho.tolist()
        self.wait = prob.wait.tolist()
        self.times = prob.times.tolist()
        # prefix sums of slot power for O(1) slot energy
        self.psum = [np.concatenate([[0.0], np.cumsum(row)]).tolist() for row in prob.power]
        # best (arrival + wait) when entering at grid slot m or later
        self.best_from = []
        for i in range(self.I):
            vals = [self.times[m] + self.wait[i][m] for m in range(self.N)] + [math.inf]
            suffix = [math.inf] * (self.N + 1)
            arg = [-1] * (self.N + 1)
            for m in range(self.N - 1, -1, -1):
                if vals[m] <= suffix[m + 1]:
                    suffix[m], arg[m] = vals[m], m
                else:
                    suffix[m], arg[m] = suffix[m + 1], arg[m + 1]
            self.best_from.append((suffix, arg))
        # tails for bounds
        I = self.I
        self.drive_rem = [0.0] * I
        self.use_rem = [0.0] * I
        for i in range(I - 2, -1, -1):
            self.drive_rem[i] = self.drive_rem[i + 1] + self.drive[i]
            self.use_rem[i] = self.use_rem[i + 1] + self.use[i]
        self.pmax_rem = [0.0] * I
        self.rho_min_rem = [math.inf] * I
        for i in range(I - 2, -1, -1):
            self.pmax_rem[i] = max(self.pmax_rem[i + 1], max(prob.power[i]))
            self.rho_min_rem[i] = min(self.rho_min_rem[i + 1], self.rho[i])
        self.best_tau = math.inf
        self.best_key: tuple = (2,)
        self.best_path: list | None = None
        self.memo: list[list[tuple[float, float, tuple]]] = [[] for _ in range(I)]

    # -- bounds -----------------------------------------------------------
    def lower_bound(self, i: int, t: float, e: float) -> float:
        lb = t + self.drive_rem[i]
        deficit = self.use_rem[i] + self.floor - e
        if deficit > ENERGY_TOL:
            pmax = self.pmax_rem[i]
            if pmax <= 0:
                return math.inf
            slots = math.ceil(deficit / (self.dt * pmax) - 1e-9)
            lb += self.rho_min_rem[i] + slots * self.dt
        return lb

    def dominated(self, i: int, t: float, e: float, prefix: tuple) -> bool:
        for (t2, e2, p2) in self.memo[i]:
            if t2 <= t + TIME_TOL and e2 >= e - ENERGY_TOL and p2 <= prefix:
                return True
        return False

    # -- stop enumeration -------------------------------------------------
    def stops(self, i: int, t: float, e: float):
        """All non-dominated ways of charging at station ``i``."""
        N, dt = self.N, self.dt
        k = slot_index(t, dt)
        if k >= N:
            return
        suffix, arg = self.best_from[i]
        own = t + self.wait[i][k]
        if own <= suffix[k + 1]:
            t_arr, slot, base = t, k, own
        else:
            slot = arg[k + 1]
            t_arr, base = self.times[slot], suffix[k + 1]
        omega = self.wait[i][slot]
        ready = base + self.rho[i]
        j0 = slot_index(ready, dt) + 1
        head = self.C - e
        if head <= ENERGY_TOL:
            return
        ps = self.psum[i]
        offset = self.p.tau_offset
        for j in range(j0, N + 1):
            t_star = ready if j == j0 else self.times[j - 1]
            if t_star + dt + self.drive_rem[i] - offset > self.best_tau + self.opt.gap + TIME_TOL:
                break
            for n in range(1, N - j + 2):
                cap = dt * (ps[j + n] - ps[j])
                energy = min(head, cap)
                if energy > ENERGY_TOL:
                    yield _Stop(t_arr, slot, omega, ready, t_star, j, n, energy)
                if cap >= head - ENERGY_TOL:
                    break

    # -- search -----------------------------------------------------------
    def run(self):
        veh = self.p.vehicle
        self.visit(0, self.p.corridor.t_start, veh.initial_energy, (), [])

    def visit(self, i: int, t: float, e: float, prefix: tuple, path: list):
        st = self.stats
        st.nodes += 1
        if st.nodes > self.opt.node_limit:
            raise RuntimeError("branch-and-bound node limit exceeded")
        if i == self.I - 1:
            tau = t - self.p.tau_offset
            better = tau < self.best_tau - TIME_TOL
            tie = not better and tau <= self.best_tau + TIME_TOL and prefix < self.best_key
            if better or tie:
                self.best_tau = min(tau, self.best_tau)
                self.best_key = prefix
                self.best_path = list(path)
            return
        if self.lower_bound(i, t, e) - self.p.tau_offset > self.best_tau + self.opt.gap + TIME_TOL:
            st.pruned_bound += 1
            return
        if self.dominated(i, t, e, prefix):
            st.pruned_dominance += 1
            return
        self.memo[i].append((t, e, prefix))

        # pass
        e_next = e - self.use[i]
        if e_next >= self.floor - ENERGY_TOL:
            path.append(None)
            self.visit(i + 1, t + self.drive[i], e_next, prefix + (0,), path)
            path.pop()
        # stop
        children = []
        for s in self.stops(i, t, e):
            e_next = e + s.energy - self.use[i]
            if e_next < self.floor - ENERGY_TOL:
                continue
            t_next = s.t_charge + s.n_slots * self.dt + self.drive[i]
            children.append((t_next, -e_next, s))
        children.sort(key=lambda c: (c[0], c[1]))
        kept: list[tuple[float, float]] = []
        for t_next, neg_e, s in children:
            # drop children dominated by an earlier sibling
            if any(tk <= t_next + TIME_TOL and ek >= -neg_e - ENERGY_TOL for tk, ek in kept):
                continue
            kept.append((t_next, -neg_e))
            path.append(s)
            self.visit(i + 1, t_next, -neg_e, prefix + (1,), path)
            path.pop()


def solve(problem: EvspProblem, options: SolveOptions | None = None,
          stats: SolveStats | None = None) -> ChargingPlan:
    """Provably optimal plan (within ``options.gap``)."""
    options = options or SolveOptions()
    _check_static_feasibility(problem)
    search = _Search(problem, options)
    search.run()
    if stats is not None:
        stats.nodes = search.stats.nodes
        stats.pruned_bound = search.stats.pruned_bound
        stats.pruned_dominance = search.stats.pruned_dominance
    if search.best_path is None:
        raise _diagnose(problem)
    return _assemble(problem, search.best_path, search.best_tau, options.trim_energy)


def _check_static_feasibility(problem: EvspProblem) -> None:
    cor, veh = problem.corridor, problem.vehicle
    usable = veh.capacity_C - veh.floor
    for i, d in enumerate(cor.lengths):
        if d * veh.consumption_p > usable + ENERGY_TOL:
            raise InfeasibleError(
                f"segment {i}->{i + 1} needs {d * veh.consumption_p:.3f} kWh but only "
                f"{usable:.3f} kWh are usable above the floor",
                segment=(i, i + 1),
            )


def _diagnose(problem: EvspProblem) -> InfeasibleError:
    """Explain a failed search: first segment not coverable even with full charges."""
    cor, veh = problem.corridor, problem.vehicle
    en = veh.initial_energy
    for i, d in enumerate(cor.lengths):
        if problem.power[i].max(initial=0.0) > 0:
            en = veh.capacity_C
        en -= d * veh.consumption_p
        if en < veh.floor - ENERGY_TOL:
            return InfeasibleError(
                f"segment {i}->{i + 1} cannot be reached above the floor even when "
                "charging fully at every earlier station",
                segment=(i, i + 1),
            )
    return InfeasibleError(
        "no plan reaches the end of the corridor within the forecast horizon "
        f"({problem.horizon} h); waits and charging slots run past the last slot"
    )


def _assemble(problem: EvspProblem, path: list, tau: float, trim: bool) -> ChargingPlan:
    cor, veh = problem.corridor, problem.vehicle
    I, P = problem.n_stations, problem.n_points
    dt = problem.dt
    x = np.zeros(I, dtype=int)
    E = np.zeros(I)
    e = np.zeros(I)
    ta = np.zeros(I)
    ts = np.zeros(I)
    td = np.zeros(I)
    om = np.zeros(I)
    phi = np.zeros((I, P), dtype=int)
    theta = np.zeros((I, P), dtype=int)

    for i, s in enumerate(path):
        if s is not None:
            x[i] = 1
            E[i] = s.energy
    if trim:
        E = _minimal_energies(problem, x, E)

    t, en = cor.t_start, veh.initial_energy
    for i in range(I):
        e[i] = en
        s = path[i] if i < len(path) else None
        if s is None:
            ta[i] = ts[i] = td[i] = t
        else:
            # any idling before the chosen slot happens on arrival
            ta[i] = s.t_arrive if s.t_arrive > t else t
            om[i] = s.omega
            phi[i, s.slot] = 1
            ts[i] = s.t_charge
            td[i] = s.t_charge + s.n_slots * dt
            theta[i, s.first_point:s.first_point + s.n_slots] = 1
        if i < I - 1:
            en = en + E[i] - cor.lengths[i] * veh.consumption_p
            t = td[i] + cor.drive_times[i]
    tau_real = ta[-1] - problem.tau_offset if I else 0.0
    return ChargingPlan(x, E, e, ta, ts, td, om, phi, theta, float(tau_real))


def _minimal_energies(problem: EvspProblem, x: np.ndarray, caps: np.ndarray) -> np.ndarray:
    """Smallest charged energies that keep the given stops feasible."""
    cor, veh = problem.corridor, problem.vehicle
    stops = [int(i) for i in np.flatnonzero(x)]
    if not stops:
        return caps.copy()
    pos = np.concatenate([[0.0], np.cumsum(cor.lengths)])
    last = len(cor.stations) - 1
    req_dep = {}
    req_arr_next = veh.floor
    nxt = last
    for s in reversed(stops):
        req_dep[s] = req_arr_next + veh.consumption_p * (pos[nxt] - pos[s])
        req_arr_next = max(veh.floor, req_dep[s] - caps[s])
        nxt = s
    out = np.zeros_like(caps)
    en = veh.initial_energy
    prev = 0
    for s in stops:
        en -= veh.consumption_p * (pos[s] - pos[prev])
        out[s] = min(caps[s], max(0.0, req_dep[s] - en))
        en += out[s]
        prev = s
    return out
