from datetime import datetime, timedelta

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gnetrack.errors import ConfigError, InfeasibleSetError
from gnetrack.game import check_symmetry, potential_gap, sample_feasible
from gnetrack.ridehailing import (A_RANGE, B_RANGE, COMPETITORS, D_RANGE, MARKET_SHARES, R_RANGE, STEPS_PER_DAY,
                                  STEPS_PER_WEEK, FirmParams, MarketScenario, PiecewiseAffine, RidehailingCostModel,
                                  build_game, congestion_speed, constraint_rows,
                                  interpolate_demand, read_demand_csv, round_strategies, synthetic_week,
                                  write_demand_csv)
from gnetrack.solver import Polyhedron


def const(v):
    return lambda t: v


def flat_market(N=3, w=0.0, b=0.0, lower=0.0, ordering=(), upper=250.0):
    firms = [FirmParams(f"f{i}", 0.0, 100.0, const(0.93), const(b), const(20.0), const(5.0)) for i in range(N)]
    W = np.full((N, N), w) - np.diag(np.full(N, w))
    return MarketScenario(firms, W, lower, upper, ordering)


class TestScenario:
    def test_caps_follow_market_shares(self, market):
        caps = {f.name: f.upper for f in market.firms}
        for a in caps:
            for b in caps:
                assert caps[a] / caps[b] == pytest.approx(MARKET_SHARES[a] / MARKET_SHARES[b])
        assert MARKET_SHARES["Uber"] == pytest.approx(0.73 * 0.72)

    def test_weights_only_on_competitor_pairs(self, market):
        names = market.names
        expected = np.zeros((5, 5), bool)
        for u, v in COMPETITORS:
            expected[names.index(u), names.index(v)] = expected[names.index(v), names.index(u)] = True
        np.testing.assert_array_equal(market.W > 0, expected)
        np.testing.assert_array_equal(market.W, market.W.T)

    def test_asymmetric_weights_rejected(self):
        W = np.zeros((3, 3))
        W[0, 1] = 0.1
        with pytest.raises(ConfigError):
            MarketScenario(flat_market().firms, W, 0.0, 250.0)

    def test_parameter_ranges(self, market):
        for t in range(0, STEPS_PER_WEEK + 1, 3):
            a, b, r, d = market.params(t)
            assert np.all((A_RANGE[0] <= a) & (a <= A_RANGE[1]))
            assert np.all((B_RANGE[0] <= b) & (b <= B_RANGE[1]))
            assert np.all((R_RANGE[0] <= r) & (r <= R_RANGE[1]))
            assert np.all((D_RANGE[0] <= d) & (d <= D_RANGE[1]))

    def test_ell_range(self, ridehailing):
        ells = [ridehailing.declared_ell(t) for t in range(0, STEPS_PER_WEEK + 1, 4)]
        assert 0.38 <= min(ells) and max(ells) <= 5.2


class TestBuildGame:
    def test_constraint_rows(self):
        sc = flat_market(lower=10.0, ordering=[("f0", "f2")])
        A, q = constraint_rows(sc)
        np.testing.assert_array_equal(A, [[1, 1, 1], [-1, -1, -1], [-1, 0, 1]])
        np.testing.assert_array_equal(q, [250.0, -10.0, 0.0])

    def test_infeasible_floor(self):
        with pytest.raises(InfeasibleSetError):
            # the floor exceeds the summed firm caps of 300 cars
            build_game(flat_market(lower=350.0, upper=400.0))

    def test_separable_linear_case(self, rng):
        g = build_game(flat_market())
        X = sample_feasible(g, rng, 10)
        G0 = g.pseudo_gradient(X[0], 0)
        np.testing.assert_allclose(G0, 5.0 - 20.0 * 0.93)
        for x in X:
            np.testing.assert_allclose(g.pseudo_gradient(x, 0), G0)
            assert g.theta(x, 0) == pytest.approx(float(np.sum((5.0 - 20.0 * 0.93) * x)))

    def test_costs_profit_split(self, ridehailing, market, rng):
        x = sample_feasible(ridehailing, rng, 1)[0]
        a, b, r, d = market.params(7)
        lap = np.diag(market.W.sum(1)) - market.W
        coupling = np.array([market.W[i] @ (x[i] - x) ** 2 for i in range(5)])
        np.testing.assert_allclose(ridehailing.costs(x, 7), d * x + coupling - r * (a * x - b * x * x))
        assert ridehailing.theta(x, 7) == pytest.approx(d @ x - r @ (a * x - b * x * x) + x @ lap @ x)

    def test_symmetry_and_potential(self, ridehailing):
        rng = np.random.default_rng(3)
        for t in np.linspace(1, STEPS_PER_WEEK, 5).astype(int):
            for x in sample_feasible(ridehailing, rng, 20):
                G = ridehailing.pseudo_gradient(x, t)
                assert check_symmetry(ridehailing, x, t) <= 1e-6
                assert potential_gap(ridehailing, x, t) <= 1e-5 * (1 + np.abs(G).max())

    def test_cost_model_matches_game(self, ridehailing, market, rng):
        model = RidehailingCostModel(market)
        x = sample_feasible(ridehailing, rng, 1)[0]
        for i in range(5):
            eta = model.true_parameters(i, 50)
            cost = model.offset(i, x, 50) + model.features(i, x, 50) @ eta
            assert cost == pytest.approx(ridehailing.costs(x, 50)[i], rel=1e-12)
            assert model.gradient(i, x, 50, eta)[0] == pytest.approx(ridehailing.pseudo_gradient(x, 50)[i], rel=1e-10)


class TestDemand:
    def test_constant(self):
        s = interpolate_demand([(0, 100), (96, 100)])
        np.testing.assert_allclose(s.values(97), 100.0)

    def test_hump(self):
        s = interpolate_demand([(0, 0), (48, 200), (96, 0)])
        assert s(48) == 200.0
        v = s.values(97)
        assert v.min() >= 0.0
        assert 0 < s(24) < 200 and 0 < s(72) < 200

    @settings(max_examples=40, deadline=None)
    @given(vals=st.lists(st.floats(0, 1e4), min_size=3, max_size=12), method=st.sampled_from(["cubic", "pchip"]))
    def test_passes_through_knots_and_nonnegative(self, vals, method):
        knots = [(8 * k, v) for k, v in enumerate(vals)]
        s = interpolate_demand(knots, method)
        for t, v in knots:
            assert s(t) == v
        assert s.values(8 * len(vals)).min() >= 0.0

    def test_duplicate_and_unordered(self):
        with pytest.raises(ConfigError):
            interpolate_demand([(0, 1), (0, 2)])
        with pytest.raises(ConfigError):
            interpolate_demand([(5, 1), (0, 2)])
        with pytest.raises(ConfigError):
            interpolate_demand([(0, 1)])

    def test_holds_end_values(self):
        s = interpolate_demand([(0, 10), (4, 20), (8, 15)])
        assert s(-3) == 10.0 and s(12) == 15.0

    def test_daily_autocorrelation_peak(self):
        v = synthetic_week().values(STEPS_PER_WEEK)
        v = v - v.mean()
        lags = np.arange(48, 145)
        ac = [np.dot(v[:-k], v[k:]) / (len(v) - k) for k in lags]
        assert abs(int(lags[int(np.argmax(ac))]) - STEPS_PER_DAY) <= 2

    def test_weekday_weekend_shape(self):
        v = synthetic_week(peak=20000.0).values(STEPS_PER_WEEK)
        days = v.reshape(7, STEPS_PER_DAY)
        assert days[:5].max() == pytest.approx(20000.0, rel=0.05)
        assert days[5:].max() < days[:5].max()

    def test_csv_round_trip(self, tmp_path):
        s = synthetic_week(seed=4)
        path = tmp_path / "d.csv"
        write_demand_csv(path, s, 200)
        r = read_demand_csv(path)
        np.testing.assert_array_equal(r.values(200), s.values(200))
        assert r.start == datetime(2019, 4, 1)

    def test_csv_duplicates(self, tmp_path):
        path = tmp_path / "d.csv"
        t0 = datetime(2019, 4, 1)
        path.write_text("interval_start,requests\n" + f"{t0.isoformat()},5\n{t0.isoformat()},6\n"
                        + f"{(t0 + timedelta(minutes=15)).isoformat()},7\n")
        with pytest.raises(ConfigError):
            read_demand_csv(path)

    def test_csv_bad_header(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("when,count\n2019-04-01T00:00:00,5\n")
        with pytest.raises(ConfigError):
            read_demand_csv(path)


class TestRounding:
    def test_large_fleet(self):
        rep = round_strategies([10000.4])
        assert rep.values[0] == 10000
        assert rep.relative_error[0] == pytest.approx(4e-5, rel=1e-4)

    def test_ties_to_even(self):
        assert round_strategies([2.5, 3.5]).values.tolist() == [2, 4]

    def test_breaking_coupling_is_flagged(self):
        P = Polyhedron([0.0, 0.0], [10.0, 10.0], [[1.0, 1.0]], [5.9])
        assert not round_strategies([2.6, 2.2], P).flagged
        rep = round_strategies([2.6, 3.3], P)
        assert rep.values.tolist() == [3, 3]
        assert rep.flagged and rep.violations[0] == pytest.approx(0.1)
        # breaks smaller than the tolerance are accepted, nothing is repaired
        rep = round_strategies([2.6, 3.3], P, tolerance=0.5)
        assert not rep.flagged and rep.values.tolist() == [3, 3]

    @settings(max_examples=50, deadline=None)
    @given(x=st.lists(st.floats(500, 1e5), min_size=1, max_size=5))
    def test_relative_roundoff_large_fleets(self, x):
        assert round_strategies(x).max_relative_error <= 1e-3


class TestCongestion:
    def test_midpoint(self):
        m = PiecewiseAffine([0.0, 1000.0], [30.0, 10.0], nonincreasing=True)
        assert congestion_speed(500.0, m) == 20.0

    def test_breakpoints_exact_and_clamped(self):
        m = PiecewiseAffine([0.0, 10.0, 30.0], [25.0, 18.0, 7.0], nonincreasing=True)
        assert [congestion_speed(b, m) for b in (0.0, 10.0, 30.0)] == [25.0, 18.0, 7.0]
        assert congestion_speed(-5.0, m) == 25.0 and congestion_speed(99.0, m) == 7.0

    def test_validation(self):
        with pytest.raises(ConfigError):
            PiecewiseAffine([0.0, 0.0], [1.0, 2.0])
        with pytest.raises(ConfigError):
            PiecewiseAffine([0.0, 1.0], [1.0, 2.0], nonincreasing=True)

    def test_default_map_monotone(self, market):
        z = np.linspace(0, 40000, 500)
        assert np.all(np.diff(congestion_speed(z, market.speed_map)) <= 0)
        assert congestion_speed(1.1 * 20000, market.speed_map) > 10.0
        assert congestion_speed(1.25 * 20000, market.speed_map) < 10.0


@pytest.mark.slow
def test_week_running_mean_below_time_varying_bound():
    from gnetrack.cli import bound_constants
    from gnetrack.orchestrator import bound_report, run
    from gnetrack.scenarios import load_scenario

    sc = load_scenario("ridehailing_week.json")
    tr = run(sc.game, sc.config)
    rep = bound_report(tr, bound_constants(sc.game, tr), ("T2",))
    tail = rep["avg_residual"][len(tr.residual) // 2:]
    assert np.all(np.isfinite(tail))
    assert tail.max() <= rep["rhs_T2"][-1]
