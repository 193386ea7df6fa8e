"""The outer coordination loop, its trace, and the averaged-residual bounds.

One outer step ``t``:

1. estimate the pseudo-gradient at the previous equilibrium,
2. build incentive centres ``x+ = x_{t-1} + xi(t) Ghat``,
3. solve the incentivized game ``F(x) = G(x; t) + c(t)(x - x+)`` for its
   variational equilibrium,
4. collect (possibly missing) noisy cost feedback at the new equilibrium.

Agents always respond with their true costs; the estimate only enters
through the incentive centres.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ConfigError, MissingConstantsError
from .game import Game, estimate_ell
from .incentives import (CPolicy, ExtendedOperator, IncentiveState, XiPolicy, derived_from,
                         check_admissible, parse_c_policy, parse_xi_policy)
from .learning import (Estimator, FeedbackSample, GPEstimator, NoiseModel, NoisyOracleEstimator,
                       OracleEstimator, RLSEstimator)
from .solver import project, sample_polyhedron, solve_vgne

logger = logging.getLogger(__name__)


@dataclass
class BoundConstants:
    """Constants entering the averaged-residual bounds.

    delta_bar : initial suboptimality (``theta(x_tbar) - min theta`` when
        stationary, ``|theta(x_0; 0) - min theta(.; 0)|`` when time-varying).
    e_theta, e_nabla, e_delta : per-step drift of the potential, of the
        pseudo-gradient (summed over agents) and of the minimizer.
    """

    delta_bar: Optional[float] = None
    e_theta: Optional[float] = None
    e_nabla: Optional[float] = None
    e_delta: Optional[float] = None

    def require(self, names):
        missing = [k for k in names if getattr(self, k) is None]
        if missing:
            raise MissingConstantsError(missing)


@dataclass
class RunConfig:
    """Settings of one run.

    ``estimator`` is a mapping with a ``kind`` key (``oracle``, ``noisy_oracle``,
    ``rls`` or ``gp``) plus keyword parameters of the estimator class.
    ``warmup_samples`` feedback samples are collected at random feasible
    points at ``t = 0`` before the first step. ``certificate_samples > 0``
    checks every inner solution against that many random feasible points.
    """

    horizon: int
    c_policy: CPolicy = field(default_factory=lambda: CPolicy("proportional", 2.0))
    xi_policy: XiPolicy = field(default_factory=lambda: XiPolicy("constant", 0.0))
    estimator: dict = field(default_factory=lambda: {"kind": "oracle"})
    noise: NoiseModel = field(default_factory=NoiseModel)
    arrival_prob: float = 1.0
    warmup_samples: int = 0
    inner_tol: float = 1e-8
    inner_max_iter: int = 100_000
    polish: bool = True
    seed: int = 0
    mode: Optional[str] = None
    x0: Optional[np.ndarray] = None
    ell_samples: int = 0
    constants: BoundConstants = field(default_factory=BoundConstants)
    certificate_samples: int = 0

    def __post_init__(self):
        if int(self.horizon) < 1:
            raise ConfigError("horizon must be at least 1")
        self.horizon = int(self.horizon)
        self.c_policy = parse_c_policy(self.c_policy)
        self.xi_policy = parse_xi_policy(self.xi_policy)
        if not 0.0 <= self.arrival_prob <= 1.0:
            raise ConfigError("arrival probability must lie in [0, 1]")
        if self.mode not in (None, "stationary", "time_varying"):
            raise ConfigError(f"unknown mode {self.mode!r}")
        if self.inner_tol <= 0:
            raise ConfigError("inner tolerance must be positive")


@dataclass
class RunTrace:
    """Per-step record. Index 0 of ``x`` and ``theta`` is the initial point; step arrays start at t = 1."""

    x: np.ndarray
    theta: np.ndarray
    residual: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    kappa: np.ndarray
    c: np.ndarray
    xi: np.ndarray
    ell: np.ndarray
    q: np.ndarray
    q_used: np.ndarray
    e_q: np.ndarray
    e_qm1: np.ndarray
    e_used: np.ndarray
    estimate_error: np.ndarray
    inner_iters: np.ndarray
    inner_residual: np.ndarray
    arrived: np.ndarray
    degraded: np.ndarray
    certificate_margin: np.ndarray
    mode: str
    min_samples: int
    q0: int
    feedback: list = field(default_factory=list, repr=False)

    @property
    def T(self) -> int:
        return len(self.residual)

    @property
    def steps(self) -> np.ndarray:
        return np.arange(1, self.T + 1)

    def delta(self) -> np.ndarray:
        return np.diff(self.x, axis=0)

    @property
    def tbar(self) -> int:
        """First step index (0 = before the first step) with at least ``min_samples`` samples."""
        if self.q0 >= self.min_samples:
            return 0
        hit = np.flatnonzero(self.q >= self.min_samples)
        return int(hit[0]) + 1 if hit.size else self.T


class Coordinator:
    """State machine for the outer loop (one instance per run)."""

    def __init__(self, game: Game, config: RunConfig, estimator: Optional[Estimator] = None):
        self.game = game
        self.config = config
        ss = np.random.SeedSequence(config.seed)
        streams = ss.spawn(5)
        self.rng_arrival = np.random.default_rng(streams[0])
        self.rng_noise = np.random.default_rng(streams[1])
        self.rng_warmup = np.random.default_rng(streams[2])
        self.rng_cert = np.random.default_rng(streams[3])
        est_seed = int(streams[4].generate_state(1)[0])
        self.estimator = estimator if estimator is not None else build_estimator(game, config.estimator, est_seed)
        self.mode = config.mode or ("stationary" if game.stationary else "time_varying")
        x0 = game.polyhedron.feasible_point if config.x0 is None else np.asarray(config.x0, dtype=float)
        self.x = project(game.polyhedron, x0)
        self.t = 0
        self.ell_running = 0.0
        self.cert_points = (sample_polyhedron(game.polyhedron, self.rng_cert, config.certificate_samples)
                            if config.certificate_samples > 0 else None)
        self.feedback: list = []
        for _ in range(config.warmup_samples):
            xw = sample_polyhedron(game.polyhedron, self.rng_warmup, 1)[0]
            self._feedback(xw, 0, arrived=True)

    def _feedback(self, x, t, arrived):
        if arrived:
            p = self.game.costs(x, t) + self.config.noise.sample(self.rng_noise, self.game.N)
            sample = FeedbackSample(t, np.array(x), p, True)
        else:
            sample = FeedbackSample(t, np.array(x), None, False)
        self.feedback.append(sample)
        self.estimator.ingest(sample)
        return sample

    def ell(self, t: int) -> float:
        declared = self.game.declared_ell(t)
        samples = self.config.ell_samples if declared is not None else max(self.config.ell_samples, 200)
        if samples > 0:
            self.ell_running = max(self.ell_running, estimate_ell(self.game, t, samples, seed=self.config.seed + t))
        return max(declared or 0.0, self.ell_running)

    def step(self) -> dict:
        game, cfg = self.game, self.config
        t = self.t + 1
        x_prev = self.x
        # S0: learn the pseudo-gradient at the previous equilibrium
        q_used = self.estimator.sample_count
        g_hat = self.estimator.estimate_gradient(x_prev, t - 1)
        est_err = float(np.linalg.norm(g_hat - game.pseudo_gradient(x_prev, t - 1)))
        # S1: incentives
        ell = self.ell(t)
        c = cfg.c_policy(t, ell)
        xi = cfg.xi_policy(t, c)
        check_admissible(c, xi, ell)
        alpha, beta, kappa = derived_from(c, xi, ell)
        state = IncentiveState.prepare(x_prev, g_hat, c, xi)
        jac = None if game.jacobian_fn is None else (lambda x: game.jacobian(x, t))
        F = ExtendedOperator(lambda x: game.pseudo_gradient(x, t), state, ell, jac)
        # S2: equilibrium of the incentivized game, warm-started
        sol = solve_vgne(game.polyhedron, F, F.lipschitz, F.mu, x_prev, tol=cfg.inner_tol,
                         max_iter=cfg.inner_max_iter, jacobian=F.jacobian if jac else None, polish=cfg.polish)
        if not sol.converged:
            logger.warning("step %d: inner solver stopped at residual %.3e after %d iterations",
                           t, sol.natural_residual, sol.iterations)
        x_new = sol.x_star
        margin = math.nan
        if self.cert_points is not None:
            Fx = F(x_new)
            margin = float(np.min((self.cert_points - x_new) @ Fx)) + 1e-6 * (1.0 + float(np.linalg.norm(Fx)))
        # S3: sporadic noisy feedback
        arrived = bool(self.rng_arrival.random() < cfg.arrival_prob)
        self._feedback(x_new, t, arrived)
        q = self.estimator.sample_count
        theta = game.theta(x_new, t) if game.potential is not None else math.nan
        self.x = x_new
        self.t = t
        return dict(x=x_new, theta=theta, residual=float(np.linalg.norm(x_new - x_prev)), alpha=alpha,
                    beta=beta, kappa=kappa, c=c, xi=xi, ell=ell, q=q, q_used=q_used,
                    e_q=self.estimator.error_bound(q), e_qm1=self.estimator.error_bound(max(q - 1, 0)),
                    e_used=self.estimator.error_bound(q_used), estimate_error=est_err,
                    inner_iters=sol.iterations, inner_residual=sol.natural_residual, arrived=arrived,
                    degraded=not sol.converged, certificate_margin=margin)


def build_estimator(game: Game, options: dict, seed: int = 0) -> Estimator:
    """Instantiate an estimator from a ``{"kind": ..., **params}`` mapping."""
    options = dict(options or {"kind": "oracle"})
    kind = options.pop("kind", "oracle")
    model = game.metadata.get("cost_model")
    if kind == "oracle":
        return OracleEstimator(game, **options)
    if kind == "noisy_oracle":
        return NoisyOracleEstimator(game, seed=seed, **options)
    if kind == "rls":
        if model is None:
            raise ConfigError(f"game {game.name!r} has no parametric cost model for RLS")
        return RLSEstimator(model, **options)
    if kind == "gp":
        blocks = [a.block for a in game.agents]
        use_model = options.pop("use_model", model is not None)
        return GPEstimator(game.n, blocks, model=model if use_model else None, **options)
    raise ConfigError(f"unknown estimator kind {kind!r}")


def run(game: Game, config: RunConfig, estimator: Optional[Estimator] = None) -> RunTrace:
    """Run the outer loop for ``config.horizon`` steps."""
    coord = Coordinator(game, config, estimator)
    x0 = coord.x.copy()
    theta0 = game.theta(x0, 0) if game.potential is not None else math.nan
    q0 = coord.estimator.sample_count
    rows = [coord.step() for _ in range(config.horizon)]
    col = {k: np.array([r[k] for r in rows]) for k in rows[0]}
    return RunTrace(
        x=np.vstack([x0, col["x"]]), theta=np.concatenate([[theta0], col["theta"]]),
        residual=col["residual"], alpha=col["alpha"], beta=col["beta"], kappa=col["kappa"], c=col["c"],
        xi=col["xi"], ell=col["ell"], q=col["q"].astype(int), q_used=col["q_used"].astype(int),
        e_q=col["e_q"], e_qm1=col["e_qm1"], e_used=col["e_used"], estimate_error=col["estimate_error"],
        inner_iters=col["inner_iters"].astype(int), inner_residual=col["inner_residual"],
        arrived=col["arrived"].astype(bool), degraded=col["degraded"].astype(bool),
        certificate_margin=col["certificate_margin"], mode=coord.mode,
        min_samples=coord.estimator.min_samples, q0=q0, feedback=coord.feedback)


def average_residual(trace_or_values, window=None, start: int = 0) -> float:
    """Mean of ``||Delta_t||`` over ``window`` steps beginning at step index ``start``."""
    r = trace_or_values.residual if isinstance(trace_or_values, RunTrace) else np.asarray(trace_or_values, float)
    stop = len(r) if window is None else start + int(window)
    if stop > len(r):
        raise ValueError(f"window of {window} steps exceeds the {len(r)} available")
    seg = r[start:stop]
    if seg.size == 0:
        raise ValueError("empty window")
    return float(seg.mean())


def running_average(trace: RunTrace, start: int = 0) -> np.ndarray:
    r = trace.residual[start:]
    return np.cumsum(r) / np.arange(1, len(r) + 1)


def bound_rhs(trace: RunTrace, constants: BoundConstants, kind: str) -> np.ndarray:
    """Right-hand side of the averaged-residual bound for every horizon.

    Entry ``T - 1`` is the bound for the window of ``T`` steps after the burn-in
    ``tbar`` (``tbar = 0`` for ``"T2"``).

    kind : ``"T1"`` stationary with estimation error, ``"T2"`` time-varying
        with exact gradients, ``"T3"`` time-varying with estimation error.
    """
    if kind == "T1":
        constants.require(["delta_bar"])
    elif kind in ("T2", "T3"):
        constants.require(["delta_bar", "e_theta", "e_nabla", "e_delta"])
    else:
        raise ValueError(f"unknown bound {kind!r}")
    tb = 0 if kind == "T2" else trace.tbar
    sl = slice(tb, trace.T)
    beta, alpha, kappa = trace.beta[sl], trace.alpha[sl], trace.kappa[sl]
    T = np.arange(1, len(beta) + 1, dtype=float)
    beta_sum = np.cumsum(beta)
    beta_min = np.minimum.accumulate(beta)
    if kind == "T1":
        e = trace.e_q[sl]
        inner = np.cumsum(beta * constants.delta_bar) + beta_sum * np.cumsum(kappa ** 2 * e ** 2 / beta)
        return (np.sqrt(inner) + np.cumsum(kappa * e)) / (T * beta_min)
    ell = float(np.max(trace.ell))
    phi = 2.0 * constants.e_theta + 0.5 * ell * constants.e_delta ** 2
    if kind == "T2":
        sigma = np.full(len(beta), float(constants.e_nabla))
    else:
        sigma = constants.e_nabla + (1.0 - alpha) * trace.e_qm1[sl]
    first = np.cumsum(sigma / (2.0 * alpha)) / (T * beta_min)
    inner = beta_sum * (constants.delta_bar + T * phi) + beta_sum * np.cumsum(sigma ** 2 / (4.0 * alpha ** 2 * beta))
    return first + np.sqrt(inner) / (T * beta_min)


def bound_report(trace: RunTrace, constants: BoundConstants, kinds=("T1", "T2", "T3")) -> dict:
    """Columns of the bound report; bounds whose constants are missing are left out."""
    out = {}
    tb = trace.tbar
    out["T"] = np.arange(1, trace.T - tb + 1)
    out["avg_residual"] = running_average(trace, tb)
    for th in kinds:
        try:
            vals = bound_rhs(trace, constants, th)
        except MissingConstantsError:
            continue
        if th == "T2" and tb:
            vals = vals[tb:]
        out["rhs_" + th] = vals
    return out


# ---------------------------------------------------------------- property checks

def descent_margins(game: Game, trace: RunTrace) -> np.ndarray:
    """``theta(x_{t-1}) - beta ||Delta||^2 - theta(x_t)`` per step (nonnegative when the descent holds)."""
    return trace.theta[:-1] - trace.beta * trace.residual ** 2 - trace.theta[1:]


def descent_direction_margins(game: Game, trace: RunTrace) -> np.ndarray:
    """``-(ell/alpha)||Delta||^2 - Delta' grad theta(x_{t-1})`` per step."""
    D = trace.delta()
    g = np.array([game.pseudo_gradient(trace.x[k], k) for k in range(trace.T)])
    return -(trace.ell / trace.alpha) * trace.residual ** 2 - np.einsum("ij,ij->i", D, g)


def inexact_bound_margins(game: Game, trace: RunTrace, e_nabla: float = 0.0) -> np.ndarray:
    """Slack of the perturbed descent inequality at every step.

    Stationary form (``e_nabla = 0``) and time-varying form share
    ``Delta' grad theta(x_{t-1}) <= s^2/(4 alpha ell) - (sqrt(ell/alpha)||Delta|| - s/(2 sqrt(alpha ell)))^2``
    with ``s = e_nabla + (1 - alpha) e`` and ``e`` the error bound of the estimate used.
    """
    D = trace.delta()
    g = np.array([game.pseudo_gradient(trace.x[k], k) for k in range(trace.T)])
    a, ell, nr = trace.alpha, trace.ell, trace.residual
    s = e_nabla + (1.0 - a) * trace.e_used
    rhs = s ** 2 / (4 * a * ell) - (np.sqrt(ell / a) * nr - s / (2.0 * np.sqrt(a * ell))) ** 2
    return rhs - np.einsum("ij,ij->i", D, g)


def feasibility_violations(game: Game, trace: RunTrace) -> np.ndarray:
    return np.array([game.polyhedron.violation(x) for x in trace.x])


# ---------------------------------------------------------------- export

def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    return "" if math.isnan(v) else repr(v)


def trace_csv(trace: RunTrace) -> str:
    """Trace as CSV text with the columns ``t,x_1..x_n,theta,res_norm,alpha,beta,kappa,q,e_q,inner_iters,arrived,degraded``."""
    n = trace.x.shape[1]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t", *[f"x_{i + 1}" for i in range(n)], "theta", "res_norm", "alpha", "beta", "kappa",
                "q", "e_q", "inner_iters", "arrived", "degraded"])
    w.writerow([0, *[_fmt(v) for v in trace.x[0]], _fmt(trace.theta[0]), "", "", "", "", trace.q0, "", "", "", ""])
    for k in range(trace.T):
        w.writerow([k + 1, *[_fmt(v) for v in trace.x[k + 1]], _fmt(trace.theta[k + 1]), _fmt(trace.residual[k]),
                    _fmt(trace.alpha[k]), _fmt(trace.beta[k]), _fmt(trace.kappa[k]), _fmt(trace.q[k]),
                    _fmt(trace.e_q[k]), _fmt(trace.inner_iters[k]), _fmt(trace.arrived[k]),
                    _fmt(trace.degraded[k])])
    return buf.getvalue()


def write_trace(path, trace: RunTrace) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(trace_csv(trace))


def bounds_csv(report: dict) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    cols = ["T", "avg_residual", "rhs_T1", "rhs_T2", "rhs_T3"]
    w.writerow(cols)
    for k in range(len(report["T"])):
        w.writerow([_fmt(report[c][k]) if c in report else "" for c in cols])
    return buf.getvalue()


def write_bounds(path, report: dict) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(bounds_csv(report))
