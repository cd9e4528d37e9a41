"""Export the charging problem as a linear MIP in CPLEX LP text format.

The indicator rows are linearised with big-M bounds.  Membership of a grid
point in the charging interval ``(t_charge, t_depart]`` is expressed with
two auxiliary binaries per point::

    a[i,k] = 1  <=>  t_k > t_charge[i]
    c[i,k] = 1  <=>  t_k <= t_depart[i]
    theta[i,k] = a[i,k] + c[i,k] - 1

Strict inequalities use a small margin ``eps``.  The objective is the
arrival time at the last station; subtract the constant in the header
comment to obtain the downtime.
"""

from __future__ import annotations

import io

from .problem import EvspProblem

__all__ = ["export_lp", "LP_EPS"]

LP_EPS = 1e-6


def _num(x: float) -> str:
    return repr(float(x))


def _terms(pairs) -> str:
    out = []
    for coef, var in pairs:
        coef = float(coef)
        if coef == 0:
            continue
        sign = "-" if coef < 0 else "+"
        out.append(f"{sign} {_num(abs(coef))} {var}")
    if not out:
        return "0 x_dummy"
    s = " ".join(out)
    return s[2:] if s.startswith("+ ") else s


def export_lp(problem: EvspProblem, eps: float = LP_EPS) -> str:
    cor, veh = problem.corridor, problem.vehicle
    I, K = problem.n_stations, problem.n_points
    t, dt, M = problem.times, problem.dt, problem.big_m
    C, p = veh.capacity_C, veh.consumption_p
    buf = io.StringIO()
    w = buf.write
    w("\\ corridor charging problem\n")
    w(f"\\ stations={I} grid_points={K} dt={_num(dt)} horizon={_num(problem.horizon)}\n")
    w(f"\\ tau = objective - {_num(problem.tau_offset)}\n")
    w("Minimize\n")
    if I == 0:
        w(" obj: 0 x_dummy\n")
        w("Subject To\n")
        w(" dummy: x_dummy >= 0\n")
        w("Bounds\n x_dummy = 0\nEnd\n")
        return buf.getvalue()
    w(f" obj: ta_{I - 1}\n")
    w("Subject To\n")
    row = 0

    def con(name, lhs, sense, rhs):
        nonlocal row
        row += 1
        w(f" {name}: {_terms(lhs)} {sense} {_num(rhs)}\n")

    for i in range(I):
        if i < I - 1:
            con(f"c11a_{i}", [(1, f"e_{i + 1}"), (-1, f"e_{i}"), (-1, f"E_{i}")], "=",
                -cor.lengths[i] * p)
            con(f"c12c_{i}", [(1, f"ta_{i + 1}"), (-1, f"td_{i}")], ">=",
                cor.lengths[i] / cor.speeds[i])
        con(f"c11b_{i}", [(1, f"E_{i}"), (-C, f"x_{i}")], "<=", 0)
        con(f"c11d_{i}", [(1, f"E_{i}")] + [(-dt * problem.power[i, k], f"th_{i}_{k}") for k in range(K)],
            "<=", 0)
        con(f"c11e_{i}", [(1, f"E_{i}"), (1, f"e_{i}")], "<=", C)
        con(f"c12a_{i}", [(1, f"ts_{i}"), (-1, f"ta_{i}"), (-1, f"om_{i}"), (-problem.rho[i], f"x_{i}")],
            ">=", 0)
        con(f"c12b_{i}", [(1, f"td_{i}"), (-1, f"ts_{i}")] + [(-dt, f"th_{i}_{k}") for k in range(K)],
            ">=", 0)
        for k in range(K):
            # a = [t_k > ts]
            con(f"c13a_lo_{i}_{k}", [(1, f"ts_{i}"), (M, f"a_{i}_{k}")], ">=", t[k])
            con(f"c13a_hi_{i}_{k}", [(1, f"ts_{i}"), (M, f"a_{i}_{k}")], "<=", t[k] - eps + M)
            # c = [t_k <= td]
            con(f"c13a_in_{i}_{k}", [(1, f"td_{i}"), (-M, f"cc_{i}_{k}")], ">=", t[k] - M)
            con(f"c13a_out_{i}_{k}", [(1, f"td_{i}"), (-M, f"cc_{i}_{k}")], "<=", t[k] - eps)
            con(f"c13a_{i}_{k}", [(1, f"th_{i}_{k}"), (-1, f"a_{i}_{k}"), (-1, f"cc_{i}_{k}")], "=", -1)
        for k in range(K - 1):
            con(f"c13b_lo_{i}_{k}", [(1, f"ta_{i}"), (-M, f"ph_{i}_{k}")], ">=", t[k] - M)
            con(f"c13b_hi_{i}_{k}", [(1, f"ta_{i}"), (M, f"ph_{i}_{k}")], "<=", t[k + 1] - eps + M)
        con(f"c13c_{i}", [(1, f"om_{i}")] + [(-problem.wait[i, k], f"ph_{i}_{k}") for k in range(K - 1)],
            "=", 0)
        con(f"c13d_{i}", [(1, f"ph_{i}_{k}") for k in range(K - 1)] + [(-1, f"x_{i}")], "=", 0)
        for k in range(K):
            if k < K - 1:
                con(f"c13e_phi_{i}_{k}", [(1, f"ph_{i}_{k}"), (-1, f"x_{i}")], "<=", 0)
            con(f"c13e_th_{i}_{k}", [(1, f"th_{i}_{k}"), (-1, f"x_{i}")], "<=", 0)

    w("Bounds\n")
    t_max = M
    w(f" e_0 = {_num(veh.initial_energy)}\n")
    for i in range(I):
        if i > 0:
            w(f" {_num(veh.floor)} <= e_{i} <= {_num(C)}\n")
        w(f" 0 <= E_{i} <= {_num(C)}\n")
        lo = cor.t_start if i == 0 else 0.0
        w(f" {_num(lo)} <= ta_{i} <= {_num(t_max)}\n")
        w(f" 0 <= ts_{i} <= {_num(t_max)}\n")
        w(f" 0 <= td_{i} <= {_num(t_max)}\n")
        w(f" 0 <= om_{i} <= {_num(max(problem.wait.max(), 0.0))}\n")
    w("Binaries\n")
    names = []
    for i in range(I):
        names.append(f"x_{i}")
        for k in range(K):
            names += [f"th_{i}_{k}", f"a_{i}_{k}", f"cc_{i}_{k}"]
            if k < K - 1:
                names.append(f"ph_{i}_{k}")
    for j in range(0, len(names), 8):
        w(" " + " ".join(names[j:j + 8]) + "\n")
    w("End\n")
    return buf.getvalue()
