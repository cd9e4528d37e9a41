import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate as spi
from scipy.stats import chisquare

from fluidcharge.arrivals import (
    AlignmentError,
    BaselineParams,
    EnergyDistribution,
    InvalidParameterError,
    RateGrid,
    ScenarioParams,
    ScheduledVehicle,
    SigmaModel,
    TimeGrid,
    aggregate_rates,
    arrival_pdf,
    baseline_rate,
    sample_nhpp,
    saturation_throughput,
    scheduled_rates,
    split_and_sample,
)

GRID = TimeGrid.span(-1.0, 3.0, 0.001)


def test_pdf_at_mean():
    v = ScheduledVehicle(0.4, 20.0, 0.05)
    assert arrival_pdf(0.4, v) == pytest.approx(1.0 / (0.05 * math.sqrt(2 * math.pi)), rel=1e-14)


def test_pdf_normalised():
    v = ScheduledVehicle(0.1, 30.0, 0.05)
    total, _ = spi.quad(lambda t: float(arrival_pdf(t, v)), -np.inf, np.inf, points=None)
    assert total == pytest.approx(1.0, abs=1e-9)


@pytest.mark.parametrize("sigma", [0.0, -0.1])
def test_nonpositive_sigma_rejected(sigma):
    with pytest.raises(InvalidParameterError):
        ScheduledVehicle(0.1, 30.0, sigma)


def test_invalid_vehicle_fields():
    with pytest.raises(InvalidParameterError):
        ScheduledVehicle(0.1, 0.0, 0.1)
    with pytest.raises(InvalidParameterError):
        ScheduledVehicle(-0.1, 10.0, 0.1)


def test_later_announcement_is_wider():
    sm = SigmaModel(0.02, 0.05)
    early = ScheduledVehicle(0.1, 30.0, float(sm(0.1)))
    late = ScheduledVehicle(0.7, 15.0, float(sm(0.7)))
    assert late.sigma > early.sigma
    assert arrival_pdf(0.7, late) < arrival_pdf(0.1, early)


def test_sigma_model_validation():
    with pytest.raises(InvalidParameterError):
        SigmaModel(0.0, 0.1)
    with pytest.raises(InvalidParameterError):
        SigmaModel(0.1, -0.1)
    assert SigmaModel(0.02, 0.05)(0.7) == pytest.approx(0.055)


def test_single_vehicle_rates():
    lu, du = scheduled_rates([ScheduledVehicle(0.1, 30.0, 0.025)], GRID)
    assert GRID.times[np.argmax(lu.values)] == pytest.approx(0.1, abs=GRID.dt)
    assert du.integral() == pytest.approx(30.0, rel=1e-6)


def test_three_vehicle_rates():
    sm = SigmaModel()
    vs = [ScheduledVehicle(t, e, float(sm(t))) for t, e in ((0.1, 30), (0.12, 20), (0.7, 15))]
    lu, du = scheduled_rates(vs, GRID)
    assert lu.integral() == pytest.approx(3.0, rel=1e-6)
    assert du.integral() == pytest.approx(65.0, rel=1e-6)


def test_empty_schedule_gives_zero():
    lu, du = scheduled_rates([], GRID)
    assert not lu.values.any() and not du.values.any()


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.floats(0.3, 1.7), st.floats(1.0, 80.0), st.floats(0.02, 0.2)),
                min_size=0, max_size=8))
def test_integrals_match_counts(spec):
    vs = [ScheduledVehicle(t, e, s) for t, e, s in spec]
    lu, du = scheduled_rates(vs, GRID)
    assert np.all(lu.values >= 0) and np.all(du.values >= 0)
    assert lu.integral() == pytest.approx(len(vs), rel=1e-6, abs=1e-12)
    assert du.integral() == pytest.approx(sum(e for _, e, _ in spec), rel=1e-6, abs=1e-12)


def test_aggregate_identity_and_alignment():
    g = TimeGrid(0.0, 0.1, 11)
    lt = RateGrid.on(g, np.linspace(0, 5, 11))
    dt_ = lt.scaled(40.0)
    zero = RateGrid.zeros(g)
    lam, dlt = aggregate_rates(zero, zero, lt, dt_)
    assert np.array_equal(lam.values, lt.values) and np.array_equal(dlt.values, dt_.values)
    lam2, dlt2 = aggregate_rates(zero, zero, lam, dlt)
    assert np.array_equal(lam2.values, lam.values) and np.array_equal(dlt2.values, dlt.values)
    other = RateGrid.zeros(TimeGrid(0.0, 0.05, 21))
    with pytest.raises(AlignmentError):
        aggregate_rates(other, other, lt, dt_)


def test_saturation_throughput():
    assert saturation_throughput(5, 150.0, 40.0) == pytest.approx(18.75)


def test_baseline_zero_alpha():
    f = baseline_rate(TimeGrid.span(0, 24, 0.01), 0.0, BaselineParams())
    assert not f.values.any()


@pytest.mark.parametrize("phase", [0.0, 5.0, 17.3])
def test_baseline_unit_mean(phase):
    bp = BaselineParams(5, 150.0, 40.0, 24.0, phase, 1.0)
    f = baseline_rate(TimeGrid.span(0, 24, 0.001), 0.7, bp)
    assert f.time_average() == pytest.approx(0.7 * 18.75, rel=1e-6)
    assert np.all(f.values >= 0)


def test_split_extremes():
    rng = np.random.default_rng(0)
    f = baseline_rate(TimeGrid.span(0, 10, 0.01), 0.8, BaselineParams())
    vs, lt, dt_ = split_and_sample(f, 0.0, EnergyDistribution(), SigmaModel(), rng)
    assert vs == [] and np.array_equal(lt.values, f.values)
    assert np.allclose(dt_.values, lt.values * 37.5)
    vs, lt, _ = split_and_sample(f, 1.0, EnergyDistribution(), SigmaModel(), rng)
    assert len(vs) > 0 and not lt.values.any()
    with pytest.raises(InvalidParameterError):
        split_and_sample(f, 1.5, EnergyDistribution(), SigmaModel(), rng)


def test_sampled_count_matches_poisson_mean():
    f = baseline_rate(TimeGrid.span(0, 10, 0.01), 0.5, BaselineParams(phase=3.0))
    beta = 0.4
    rng = np.random.default_rng(1)
    counts = np.array([len(split_and_sample(f, beta, EnergyDistribution(), SigmaModel(), rng)[0])
                       for _ in range(1000)])
    mean = beta * f.integral()
    se = math.sqrt(mean / 1000)
    assert abs(counts.mean() - mean) < 3 * se


def test_sampled_vehicle_fields():
    f = baseline_rate(TimeGrid.span(0, 10, 0.01), 1.0, BaselineParams())
    vs, _, _ = split_and_sample(f, 0.5, EnergyDistribution(15, 60), SigmaModel(0.02, 0.05),
                                np.random.default_rng(2))
    for v in vs:
        assert 15 <= v.energy_demand <= 60
        assert v.sigma == pytest.approx(0.02 + 0.05 * v.expected_arrival)


def test_thinning_histogram():
    g = TimeGrid.span(0, 10, 0.01)
    f = baseline_rate(g, 1.0, BaselineParams(phase=2.0))
    rng = np.random.default_rng(3)
    times = np.concatenate([sample_nhpp(f, rng) for _ in range(400)])
    edges = np.linspace(0, 10, 21)
    obs, _ = np.histogram(times, edges)
    cum = np.interp(edges, g.times, f.cumulative())
    exp = np.diff(cum) * 400
    exp *= obs.sum() / exp.sum()
    assert chisquare(obs, exp).pvalue > 0.001


def test_nhpp_zero_rate():
    g = TimeGrid.span(0, 5, 0.1)
    assert sample_nhpp(RateGrid.zeros(g), np.random.default_rng(0)).size == 0


def test_rate_grid_validation():
    with pytest.raises(InvalidParameterError):
        RateGrid(0.0, 0.1, np.array([1.0, -1.0]))
    with pytest.raises(InvalidParameterError):
        RateGrid(0.0, 0.0, np.array([1.0]))
    with pytest.raises(InvalidParameterError):
        RateGrid(0.0, 0.1, np.array([]))
    with pytest.raises(InvalidParameterError):
        TimeGrid(0.0, 0.1, 0)


def test_rate_grid_interp_and_cumulative():
    r = RateGrid(0.0, 1.0, np.array([0.0, 2.0, 2.0]))
    assert r(0.5) == pytest.approx(1.0)
    assert r(5.0) == 0.0
    assert np.allclose(r.cumulative(), [0.0, 1.0, 3.0])
    assert r.integral() == pytest.approx(3.0)


def test_rate_grid_csv_roundtrip(tmp_path):
    r = RateGrid(0.5, 0.25, np.array([0.0, 1.5, 3.25, 0.125]))
    p = tmp_path / "r.csv"
    r.to_csv(p)
    back = RateGrid.from_csv(p)
    assert back.t0 == r.t0 and back.dt == r.dt and np.array_equal(back.values, r.values)


def test_rate_grid_csv_errors(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("t_h,value\n0,1\n0.1,oops\n")
    with pytest.raises(ValueError, match=":3:"):
        RateGrid.from_csv(p)
    p.write_text("t_h,value\n0,1\n0.1,1\n0.3,1\n")
    with pytest.raises(ValueError, match="uniform"):
        RateGrid.from_csv(p)


@pytest.mark.parametrize("kw", [dict(beta=-0.1), dict(beta=1.1), dict(capacity_c=0),
                                dict(gamma=0.0), dict(gamma=1.2), dict(alpha=-1.0), dict(horizon=0.0)])
def test_scenario_params_validation(kw):
    with pytest.raises(InvalidParameterError):
        ScenarioParams(**kw)


def test_energy_distribution():
    d = EnergyDistribution(15, 60)
    assert d.mean == 37.5
    x = d.sample(np.random.default_rng(0), 1000)
    assert x.min() >= 15 and x.max() <= 60
    with pytest.raises(InvalidParameterError):
        EnergyDistribution(30, 20)
