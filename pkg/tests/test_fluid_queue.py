import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fluidcharge.arrivals import AlignmentError, InvalidParameterError, RateGrid, TimeGrid
from fluidcharge.fluid_queue import (
    AvailabilityForecast,
    FluidState,
    IntegrationError,
    Regime,
    StationConfig,
    forecast,
    integrate,
    postprocess,
    service_and_departure,
    step,
    supplied_power,
    waited_time,
)

import toy


def const(grid, lam, energy=30.0):
    lam_g = RateGrid.on(grid, np.full(grid.n, float(lam)))
    return lam_g, lam_g.scaled(energy)


def test_station_config():
    cfg = StationConfig(10, 150.0, 0.5)
    assert cfg.grid_power == 750.0
    for kw in (dict(capacity_c=0), dict(charger_power=0.0), dict(gamma=0.0), dict(gamma=1.5)):
        with pytest.raises(InvalidParameterError):
            StationConfig(**kw)


def test_supplied_power():
    assert supplied_power(0, StationConfig(3)) == 0
    assert supplied_power(3, StationConfig(3)) == 450.0
    assert supplied_power(8, StationConfig(10, 150.0, 0.5)) == 750.0


def test_service_and_departure():
    mu, r = service_and_departure(150.0, 30.0, 1.0, StationConfig(1))
    assert (mu, r) == (5.0, 5.0)
    assert service_and_departure(0.0, 0.0, 0.0, StationConfig(1)) == (0.0, 0.0)
    cfg = StationConfig(1)
    mu, r = service_and_departure(150.0, 0.0, 0.5, cfg)
    assert mu == cfg.mu_cap and r == pytest.approx(0.5 * cfg.mu_cap)


def test_zero_arrivals_fixed_point():
    s = step(FluidState(), 0.0, 0.0, StationConfig(2), 0.01)
    assert s == FluidState()
    g = TimeGrid.span(0, 2, 0.01)
    traj = integrate(RateGrid.zeros(g), RateGrid.zeros(g), StationConfig(2))
    for arr in (traj.q, traj.b, traj.E, traj.W, traj.w):
        assert not arr.any()


def test_step_matches_integrate():
    g = TimeGrid.span(0, 1, 0.01)
    lam, dlt = const(g, 50.0)
    cfg = StationConfig(1)
    traj = integrate(lam, dlt, cfg)
    s = FluidState()
    for k in range(20):
        s = step(s, lam.values[k], dlt.values[k], cfg, g.dt,
                 head_ratio=30.0 if s.regime is Regime.OVERLOADED and s.q > 0 else None)
        assert s.b == pytest.approx(traj.b[k + 1], abs=1e-12)
        assert s.q == pytest.approx(traj.q[k + 1], abs=1e-12)
        assert s.W == pytest.approx(traj.W[k + 1], abs=1e-9)


def test_step_rejects_bad_dt():
    with pytest.raises(InvalidParameterError):
        step(FluidState(), 1.0, 1.0, StationConfig(1), 0.0)


def test_waited_time_closed_form():
    t = np.linspace(0, 2, 201)
    cum = 10.0 * t
    assert waited_time(t, cum, 0.0, 1.5) == 0.0
    assert waited_time(t, cum, 5.0, 1.5) == pytest.approx(0.5, abs=1e-12)
    with pytest.raises(IntegrationError):
        waited_time(t, cum, 50.0, 1.5)


def test_waited_time_residual():
    rng = np.random.default_rng(0)
    t = np.linspace(0, 3, 301)
    lam = rng.uniform(0, 20, t.size)
    cum = np.concatenate([[0], np.cumsum(0.5 * 0.01 * (lam[1:] + lam[:-1]))])
    for q in (0.3, 2.0, 7.5):
        w = waited_time(t, cum, q, 2.5)
        got = np.interp(2.5, t, cum) - np.interp(2.5 - w, t, cum)
        assert abs(got - q) <= 1e-8 * max(1.0, q)


def test_invalid_initial_state():
    g = TimeGrid.span(0, 1, 0.01)
    lam, dlt = const(g, 1.0)
    with pytest.raises(IntegrationError):
        integrate(lam, dlt, StationConfig(1), FluidState(b=2.0))
    with pytest.raises(IntegrationError):
        integrate(lam, dlt, StationConfig(1), FluidState(q=1.0, regime=Regime.UNDERLOADED))


def test_misaligned_rates():
    lam, _ = const(TimeGrid.span(0, 1, 0.01), 1.0)
    _, dlt = const(TimeGrid.span(0, 1, 0.02), 1.0)
    with pytest.raises(AlignmentError):
        integrate(lam, dlt, StationConfig(1))


def test_underloaded_steady_state():
    g = TimeGrid.span(0, 10, 0.005)
    lam, dlt = const(g, 2.0)
    traj, fc = forecast(lam, dlt, StationConfig(10))
    # Little: occupancy = arrival rate * energy / power
    assert traj.b[-1] == pytest.approx(2.0 * 30.0 / 150.0, rel=1e-3)
    assert not traj.q.any() and not traj.overloaded.any()
    assert not fc.wait.any() and np.all(fc.power == 150.0)


def test_constant_overload():
    g = TimeGrid.span(0, 2, 0.001)
    lam, dlt = const(g, 10.0)
    traj, fc = forecast(lam, dlt, StationConfig(1))
    over = traj.overloaded
    assert over[-1] and np.all(traj.b[over] == 1.0)
    # service rate 5/h, so the queue grows at about 5/h once saturated
    k = np.searchsorted(g.times, [1.0, 2.0])
    assert (traj.q[k[1]] - traj.q[k[0]]) == pytest.approx(5.0, rel=0.02)
    # the waited time of a constant-rate FCFS queue is q / lambda
    late = g.times > 0.5
    assert np.allclose(traj.w[late], traj.q[late] / 10.0, atol=1e-6)
    # an arrival at s waits w(t) where t - w(t) = s
    j = k[1]
    s = g.times[j] - traj.w[j]
    assert np.interp(s, fc.times, fc.wait) == pytest.approx(traj.w[j], abs=2e-3)


def test_overload_recovers():
    g = TimeGrid.span(0, 6, 0.005)
    vals = np.where(g.times < 1.0, 10.0, 0.5)
    lam = RateGrid.on(g, vals)
    traj = integrate(lam, lam.scaled(30.0), StationConfig(1))
    assert traj.overloaded.any() and not traj.overloaded[-1]
    assert traj.q[-1] == 0.0 and traj.w[-1] == 0.0


def test_toy_occupancy():
    traj, _ = toy.fluid()
    t = traj.times
    assert traj.b[np.searchsorted(t, 0.09)] < 1.0
    k_full = np.flatnonzero(traj.b >= 1.0 - 1e-12)
    assert t[k_full[0]] == pytest.approx(0.1, abs=0.03)
    assert traj.q[np.searchsorted(t, 0.15)] > 0


def test_power_dip_under_grid_cap():
    traj, fc = toy.fluid(gamma=0.8)
    busy = traj.b > 0.8
    assert np.allclose(fc.power[busy], 120.0 / traj.b[busy])
    assert np.all(fc.power <= 150.0) and np.all(fc.power >= 0)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 6), st.floats(0.5, 1.0),
       st.lists(st.floats(0.0, 60.0), min_size=3, max_size=12), st.floats(10.0, 60.0))
def test_state_invariants(c, gamma, knots, energy):
    g = TimeGrid.span(0, 4, 0.01)
    xs = np.linspace(0, 4, len(knots))
    lam = RateGrid.on(g, np.interp(g.times, xs, knots))
    cfg = StationConfig(c, 150.0, gamma)
    traj, fc = forecast(lam, lam.scaled(energy), cfg)
    assert np.all(traj.b <= c + 1e-12)
    assert min(traj.q.min(), traj.b.min(), traj.E.min(), traj.W.min(), traj.w.min()) >= 0
    under = ~traj.overloaded
    assert not traj.q[under].any() and not traj.E[under].any() and not traj.w[under].any()
    assert np.all(traj.b[traj.overloaded] == c)
    for k in range(g.n):
        traj.state(k).check(cfg)
    rv, re = traj.conservation_residuals()
    assert np.abs(rv).max() <= 5 * g.dt * max(lam.values.max(), 1.0)
    assert fc.wait.min() >= 0 and fc.power.max() <= 150.0


def test_first_order_convergence():
    def b_at(dt):
        g = TimeGrid.span(0, 1.5, dt)
        from fluidcharge.arrivals import scheduled_rates
        lu, du = scheduled_rates(toy.vehicles(), g)
        traj = integrate(lu, du, StationConfig(1))
        return np.interp(np.linspace(0, 1.5, 31), traj.times, traj.b)

    ref = b_at(0.005 / 8)
    e1 = np.abs(b_at(0.005) - ref).max()
    e2 = np.abs(b_at(0.0025) - ref).max()
    assert e2 < e1 and e1 / e2 >= 1.5


def test_forecast_csv_roundtrip(tmp_path):
    traj, fc = toy.fluid()
    p = tmp_path / "f.csv"
    fc.to_csv(p)
    back = AvailabilityForecast.from_csv(p)
    assert np.array_equal(back.wait, fc.wait) and np.array_equal(back.power, fc.power)
    traj.to_csv(tmp_path / "traj.csv", fc)
    header = (tmp_path / "traj.csv").read_text().splitlines()[0]
    assert header == "t_h,q,b,E_kwh,W_kwh,w_h,v_h,P_kw,PS_kw"


def test_forecast_csv_errors(tmp_path):
    p = tmp_path / "f.csv"
    p.write_text("t_h,v_h\n0,0\n")
    with pytest.raises(ValueError, match=":1:"):
        AvailabilityForecast.from_csv(p)
    p.write_text("t_h,v_h,P_kw\n0,0,150\n0.1,x,150\n")
    with pytest.raises(ValueError, match=":3:"):
        AvailabilityForecast.from_csv(p)


def test_postprocess_idle():
    g = TimeGrid.span(0, 1, 0.01)
    traj = integrate(RateGrid.zeros(g), RateGrid.zeros(g), StationConfig(3))
    fc = postprocess(traj, StationConfig(3))
    assert not fc.wait.any() and np.all(fc.power == 150.0)
