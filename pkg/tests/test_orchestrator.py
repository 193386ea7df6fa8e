import csv
import io

import numpy as np
import pytest

from gnetrack.errors import ConfigError, InadmissibleScheduleError, MissingConstantsError
from gnetrack.bruteforce import global_quadratic_min
from gnetrack.game import quadratic_game
from gnetrack.learning import NoiseModel
from gnetrack.orchestrator import (BoundConstants, RunConfig, average_residual, bound_report, bound_rhs,
                                   bounds_csv, descent_direction_margins, descent_margins, feasibility_violations,
                                   inexact_bound_margins, run, running_average, trace_csv)
from gnetrack.constants import stationary_constants
from gnetrack.solver import natural_residual


def cfg(**kw):
    base = dict(horizon=300, c_policy="constant:6", xi_policy="constant:0.05", x0=np.array([0.5, 0.3]))
    base.update(kw)
    return RunConfig(**base)


@pytest.fixture(scope="module")
def oracle_trace(quad2):
    return run(quad2, cfg(certificate_samples=300))


class TestStationaryRun:
    def test_converges_to_certified_minimizer(self, quad2, oracle_trace):
        mins = global_quadratic_min(np.array([[1.0, 2.0], [2.0, 1.0]]), np.zeros(2), quad2.polyhedron).minimizers
        final = oracle_trace.x[-1]
        assert min(np.linalg.norm(final - m) for m in mins) <= 1e-5
        assert oracle_trace.residual[-1] <= 1e-6

    def test_descent_inequality(self, quad2, oracle_trace):
        assert descent_margins(quad2, oracle_trace).min() >= -1e-8

    def test_descent_direction(self, quad2, oracle_trace):
        assert descent_direction_margins(quad2, oracle_trace).min() >= -1e-10

    def test_feasible_and_certified(self, quad2, oracle_trace):
        assert feasibility_violations(quad2, oracle_trace).max() <= 1e-9
        assert np.nanmin(oracle_trace.certificate_margin) >= 0.0
        assert not oracle_trace.degraded.any()

    def test_zero_residual_means_stationary(self, quad2, oracle_trace):
        k = int(np.flatnonzero(oracle_trace.residual == 0)[0])
        x = oracle_trace.x[k + 1]
        alpha = oracle_trace.alpha[k]
        assert natural_residual(quad2.polyhedron, lambda y: alpha * quad2.pseudo_gradient(y), x, 1.0) <= 1e-6

    def test_running_mean_decreases(self, oracle_trace):
        ra = running_average(oracle_trace)
        assert ra[299] < ra[49] < ra[9]

    def test_symmetric_start_stays_on_diagonal(self, quad2):
        # the game is invariant under swapping the agents, so a symmetric start can only reach
        # the stationary point of theta on the diagonal, the saddle at the origin
        tr = run(quad2, cfg(x0=np.array([0.5, 0.5]), xi_policy="constant:0.1"))
        np.testing.assert_allclose(tr.x[-1], [0.0, 0.0], atol=1e-6)
        assert np.allclose(tr.x[:, 0], tr.x[:, 1])


def test_interior_step_scales_with_alpha():
    # on a large box the incentivized equilibrium solves (Q + cI) Delta = -(1 - c xi) G(x_prev)
    Q = np.array([[1.0, 2.0], [2.0, 1.0]])
    g = quadratic_game(Q, [-50.0, -50.0], [50.0, 50.0])
    x0 = np.array([0.5, 0.3])
    for xi in (0.0, 0.05, 0.1):
        tr = run(g, RunConfig(horizon=1, c_policy="constant:6", xi_policy=f"constant:{xi}", x0=x0))
        expected = -np.linalg.solve(Q + 6 * np.eye(2), (1 - 6 * xi) * Q @ x0)
        np.testing.assert_allclose(tr.x[1] - x0, expected, atol=1e-10)


def test_empty_estimator_uses_prior(quad2):
    tr = run(quad2, cfg(horizon=1, estimator={"kind": "rls", "min_samples": 5}))
    assert tr.q_used[0] == 0
    # zero prior: the first step solves the proximal problem anchored at x0
    Q = np.array([[1.0, 2.0], [2.0, 1.0]])
    x0 = np.array([0.5, 0.3])
    ref = global_quadratic_min(Q + 6 * np.eye(2), -6 * x0, quad2.polyhedron).minimizers[0]
    np.testing.assert_allclose(tr.x[1], ref, atol=1e-9)


def test_noisy_oracle_inexact_inequality(quad2):
    tr = run(quad2, cfg(horizon=100, estimator={"kind": "noisy_oracle", "bound": 0.05}))
    assert inexact_bound_margins(quad2, tr).min() >= -1e-10


def test_degraded_steps_are_flagged(drifting):
    tr = run(drifting, RunConfig(horizon=3, inner_tol=1e-15, inner_max_iter=1, polish=False,
                                 x0=np.array([0.3, 0.2, -0.1])))
    assert tr.degraded.all()
    assert tr.T == 3


def test_missing_arrivals_keep_count(quad2):
    tr = run(quad2, cfg(horizon=20, arrival_prob=0.0))
    assert tr.q.max() == 0 and not tr.arrived.any()


def test_inadmissible_config_raises(quad2):
    with pytest.raises(InadmissibleScheduleError):
        run(quad2, cfg(horizon=2, c_policy="constant:5"))


@pytest.mark.parametrize("kw", [dict(horizon=0), dict(arrival_prob=1.5), dict(mode="weird"), dict(inner_tol=0.0)])
def test_config_validation(kw):
    with pytest.raises(ConfigError):
        cfg(**kw)


class TestAverageResidual:
    def test_zeros(self):
        assert average_residual(np.zeros(5)) == 0.0

    def test_window(self):
        assert average_residual([1.0, 3.0], 2) == 2.0

    def test_empty_window(self):
        with pytest.raises(ValueError):
            average_residual([1.0, 3.0], 0)

    def test_window_too_long(self):
        with pytest.raises(ValueError):
            average_residual([1.0, 3.0], 3)


class TestBoundRhs:
    def test_oracle_specialization(self, quad2, oracle_trace):
        const = stationary_constants(quad2, oracle_trace)
        rhs = bound_rhs(oracle_trace, const, "T1")
        beta = oracle_trace.beta[0]
        T = np.arange(1, oracle_trace.T + 1)
        np.testing.assert_allclose(rhs, np.sqrt(const.delta_bar / (beta * T)), rtol=1e-12)
        assert oracle_trace.residual.mean() <= rhs[-1]

    def test_constant_error_shape(self, quad2):
        tr = run(quad2, cfg(horizon=400, estimator={"kind": "noisy_oracle", "bound": 0.02}))
        const = stationary_constants(quad2, tr)
        rhs = bound_rhs(tr, const, "T1")
        beta, kappa, e = tr.beta[0], tr.kappa[0], 0.02
        T = np.arange(1, len(rhs) + 1)
        floor = 2 * kappa * e / beta
        assert np.all(rhs >= floor - 1e-15)
        assert np.all(rhs <= floor + np.sqrt(const.delta_bar / (beta * T)) + 1e-12)

    def test_missing_constants_listed(self, oracle_trace):
        with pytest.raises(MissingConstantsError) as exc:
            bound_rhs(oracle_trace, BoundConstants(delta_bar=1.0), "T2")
        assert set(exc.value.missing) == {"e_theta", "e_nabla", "e_delta"}

    def test_unknown_kind(self, oracle_trace):
        with pytest.raises(ValueError):
            bound_rhs(oracle_trace, BoundConstants(delta_bar=1.0), "T9")

    def test_report_skips_missing(self, quad2, oracle_trace):
        rep = bound_report(oracle_trace, stationary_constants(quad2, oracle_trace))
        assert "rhs_T1" in rep and "rhs_T2" not in rep
        text = bounds_csv(rep)
        rows = list(csv.reader(io.StringIO(text)))
        assert rows[0] == ["T", "avg_residual", "rhs_T1", "rhs_T2", "rhs_T3"]
        assert rows[1][3] == "" and len(rows) == oracle_trace.T + 1


class TestExport:
    def test_trace_schema(self, oracle_trace):
        rows = list(csv.reader(io.StringIO(trace_csv(oracle_trace))))
        assert rows[0] == ["t", "x_1", "x_2", "theta", "res_norm", "alpha", "beta", "kappa", "q", "e_q",
                           "inner_iters", "arrived", "degraded"]
        assert len(rows) == oracle_trace.T + 2
        assert rows[1][0] == "0" and rows[1][1] == "0.5"

    def test_deterministic(self, quad2):
        a = trace_csv(run(quad2, cfg(horizon=50, seed=7, estimator={"kind": "noisy_oracle", "bound": 0.05})))
        b = trace_csv(run(quad2, cfg(horizon=50, seed=7, estimator={"kind": "noisy_oracle", "bound": 0.05})))
        c = trace_csv(run(quad2, cfg(horizon=50, seed=8, estimator={"kind": "noisy_oracle", "bound": 0.05})))
        assert a == b and a != c


def test_rls_closed_loop_with_noise(quad2):
    tr = run(quad2, cfg(horizon=100, estimator={"kind": "rls", "error_constant": 0.5, "min_samples": 20},
                        noise=NoiseModel(0.01 / 3, 3.0), warmup_samples=20))
    assert tr.q0 == 20 and tr.tbar == 0
    assert inexact_bound_margins(quad2, tr).min() >= -1e-10
    assert np.all(tr.estimate_error <= tr.e_used)
