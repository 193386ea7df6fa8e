"""Ridehailing fleet-deployment game coordinated by a mobility platform.

Firm ``i`` deploys ``x_i`` cars in a 15-minute interval ``t`` and pays

    g_i(x; t) = d_i(t) x_i + sum_j w_ij (x_i - x_j)^2 - r_i(t) (a_i(t) x_i - b_i(t) x_i^2).

Big firms have ``b_i >= 0`` (their profit saturates with congestion); small
firms may have ``b_i < 0``. The shared constraints cap the total fleet on the
road between a service floor and a congestion ceiling, and may impose
orderings ``x_i >= x_j``. Parameters follow a weekly demand profile.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.interpolate import CubicSpline, PchipInterpolator

from .errors import ConfigError, InfeasibleSetError
from .game import AgentCost, Game, PotentialOracle, QuadraticData
from .learning import ParametricModel
from .solver import Polyhedron, project

STEPS_PER_DAY = 96
STEPS_PER_WEEK = 7 * STEPS_PER_DAY

# Market shares: taxis hold 27% of the car-based market and the
# ridehailing remainder splits 72 / 19.7 / 4.8 / 3.4 between Uber, Lyft, Via, Juno
MARKET_SHARES = {
    "Yellow": 0.27,
    "Uber": 0.73 * 0.72,
    "Lyft": 0.73 * 0.197,
    "Via": 0.73 * 0.048,
    "Juno": 0.73 * 0.034,
}
FIRM_SIZES = {"Yellow": "big", "Uber": "big", "Lyft": "big", "Via": "small", "Juno": "small"}
COMPETITORS = (("Yellow", "Lyft"), ("Via", "Juno"))

A_RANGE = (0.92, 0.94)
B_RANGE = (-0.41e-4, 6.6e-4)
R_RANGE = (14.0, 30.0)
D_RANGE = (4.0, 10.0)


# ---------------------------------------------------------------- demand

@dataclass(frozen=True)
class DemandSeries:
    """Requests per interval, interpolated through knots and clamped at zero.

    ``knot_steps`` are step indices (fractional allowed). Outside the knot
    range the end values are held. ``start`` optionally anchors step 0 to a
    wall-clock time.
    """

    knot_steps: np.ndarray
    knot_values: np.ndarray
    method: str = "cubic"
    start: Optional[datetime] = None
    step_minutes: int = 15
    _interp: Callable = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        ts = np.asarray(self.knot_steps, dtype=float)
        vs = np.asarray(self.knot_values, dtype=float)
        if ts.ndim != 1 or ts.size != vs.size:
            raise ConfigError("knot times and values must be 1-D of equal length")
        if ts.size < 2:
            raise ConfigError("at least two knots are needed")
        if np.any(np.diff(ts) == 0):
            raise ConfigError("duplicate knot times")
        if np.any(np.diff(ts) < 0):
            raise ConfigError("knot times must be strictly increasing")
        if self.method == "cubic":
            f = CubicSpline(ts, vs) if ts.size > 2 else CubicSpline(ts, vs, bc_type="natural")
        elif self.method == "pchip":
            f = PchipInterpolator(ts, vs)
        else:
            raise ConfigError(f"unknown interpolation method {self.method!r}")
        object.__setattr__(self, "knot_steps", ts)
        object.__setattr__(self, "knot_values", vs)
        object.__setattr__(self, "_interp", f)

    def __call__(self, t) -> np.ndarray | float:
        tt = np.clip(np.asarray(t, dtype=float), self.knot_steps[0], self.knot_steps[-1])
        v = np.maximum(self._interp(tt), 0.0)
        # exact knot values at the knots
        idx = np.searchsorted(self.knot_steps, tt)
        idx = np.clip(idx, 0, self.knot_steps.size - 1)
        at_knot = self.knot_steps[idx] == tt
        v = np.where(at_knot, np.maximum(self.knot_values[idx], 0.0), v)
        return float(v) if np.ndim(v) == 0 else v

    def values(self, steps: int) -> np.ndarray:
        return np.asarray(self(np.arange(steps)), dtype=float)

    def timestamps(self, steps: int) -> list:
        base = self.start or datetime(2019, 4, 1)
        return [base + timedelta(minutes=self.step_minutes * k) for k in range(steps)]


def interpolate_demand(knots: Sequence, method: str = "cubic") -> DemandSeries:
    """Demand series through ``(step, requests)`` knots."""
    knots = list(knots)
    if len(knots) < 2:
        raise ConfigError("at least two knots are needed")
    ts = [float(k[0]) for k in knots]
    if len(set(ts)) != len(ts):
        raise ConfigError("duplicate knot times")
    return DemandSeries(np.array(ts), np.array([float(k[1]) for k in knots]), method)


def read_demand_csv(path, method: str = "cubic") -> DemandSeries:
    """Load ``interval_start,requests`` rows with ISO-8601 timestamps."""
    stamps, values = [], []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"interval_start", "requests"} <= set(reader.fieldnames):
            raise ConfigError(f"{path}: expected header interval_start,requests")
        for row in reader:
            try:
                stamps.append(datetime.fromisoformat(row["interval_start"].strip()))
                values.append(float(row["requests"]))
            except ValueError as exc:
                raise ConfigError(f"{path}: bad row {row}") from exc
    if len(set(stamps)) != len(stamps):
        raise ConfigError(f"{path}: duplicate timestamps")
    order = np.argsort(stamps)
    stamps = [stamps[k] for k in order]
    values = [values[k] for k in order]
    t0 = stamps[0]
    steps = np.array([(s - t0).total_seconds() / 900.0 for s in stamps])
    return DemandSeries(steps, np.array(values), method, start=t0)


def write_demand_csv(path, series: DemandSeries, steps: int) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["interval_start", "requests"])
        for ts, v in zip(series.timestamps(steps), series.values(steps)):
            w.writerow([ts.isoformat(), repr(float(v))])


def _weekday_profile(h: float) -> float:
    # night trough around 4am, morning and evening rush humps
    return (0.25 + 0.55 * math.exp(-0.5 * ((h - 8.5) / 1.4) ** 2)
            + 0.75 * math.exp(-0.5 * ((h - 18.5) / 2.2) ** 2)
            + 0.30 * math.exp(-0.5 * ((h - 13.0) / 3.0) ** 2)
            + 0.12 * math.exp(-0.5 * ((h - 24.0) / 1.5) ** 2)
            - 0.08 * math.exp(-0.5 * ((h - 4.0) / 1.5) ** 2))


def _weekend_profile(h: float) -> float:
    # later, broader afternoon peak and a busy late night
    return (0.30 + 0.45 * math.exp(-0.5 * ((h - 16.0) / 4.0) ** 2)
            + 0.25 * math.exp(-0.5 * ((h - 23.0) / 2.0) ** 2)
            + 0.20 * math.exp(-0.5 * ((h - 1.0) / 1.5) ** 2))


def synthetic_week(peak: float = 20000.0, seed: int = 0, jitter: float = 0.02,
                   method: str = "cubic") -> DemandSeries:
    """Hourly knots over Monday to Sunday (plus the closing midnight).

    Weekdays carry a double rush-hour hump, weekends a flatter profile. A
    small multiplicative jitter is drawn from ``seed``; the knots are scaled
    so the largest weekday knot equals ``peak``.
    """
    rng = np.random.default_rng(seed)
    hours = np.arange(7 * 24 + 1)
    vals = np.empty(hours.size)
    for k, hh in enumerate(hours):
        day, h = divmod(int(hh), 24)
        day = day % 7
        vals[k] = _weekday_profile(h) if day < 5 else _weekend_profile(h)
    vals *= np.exp(jitter * rng.standard_normal(vals.size))
    vals[-1] = vals[0]
    weekday = hours < 5 * 24
    vals *= peak / vals[weekday].max()
    return DemandSeries(hours * 4.0, vals, method, start=datetime(2019, 4, 1))


# ---------------------------------------------------------------- scenario

@dataclass(frozen=True)
class FirmParams:
    """One firm: car bounds and its time-varying profit and cost parameters."""

    name: str
    lower: float
    upper: float
    a: Callable[[int], float]
    b: Callable[[int], float]
    r: Callable[[int], float]
    d: Callable[[int], float]
    size: str = "big"
    share: float = 0.0

    def __post_init__(self):
        if self.size not in ("big", "small"):
            raise ConfigError(f"firm {self.name}: size must be 'big' or 'small'")
        if not 0 <= self.lower <= self.upper:
            raise ConfigError(f"firm {self.name}: need 0 <= lower <= upper")


@dataclass(frozen=True)
class MarketScenario:
    firms: tuple
    W: np.ndarray
    total_lower: float
    total_upper: float
    ordering: tuple = ()
    horizon: int = STEPS_PER_WEEK
    interval_minutes: int = 15
    demand: Optional[DemandSeries] = None
    speed_map: Optional["PiecewiseAffine"] = None
    x0: Optional[np.ndarray] = None
    allow_asymmetric: bool = False

    def __post_init__(self):
        W = np.array(self.W, dtype=float)
        N = len(self.firms)
        if W.shape != (N, N):
            raise ConfigError(f"W must be {N}x{N}")
        if np.any(np.diag(W) != 0) or np.any(W < 0):
            raise ConfigError("W must be nonnegative with zero diagonal")
        # asymmetric weights are only let through so that validation can report them
        if not self.allow_asymmetric and not np.array_equal(W, W.T):
            raise ConfigError("W must be symmetric")
        if not 0 <= self.total_lower <= self.total_upper:
            raise ConfigError("need 0 <= total_lower <= total_upper")
        W.setflags(write=False)
        object.__setattr__(self, "firms", tuple(self.firms))
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "ordering", tuple(tuple(p) for p in self.ordering))

    @property
    def names(self) -> list:
        return [f.name for f in self.firms]

    def params(self, t: int):
        """``(a, b, r, d)`` arrays at step ``t``."""
        a = np.array([f.a(t) for f in self.firms])
        b = np.array([f.b(t) for f in self.firms])
        r = np.array([f.r(t) for f in self.firms])
        d = np.array([f.d(t) for f in self.firms])
        return a, b, r, d


def default_speed_map(peak: float = 20000.0) -> "PiecewiseAffine":
    """Speed (mph) against vehicles on the road.

    The 10 mph critical speed sits at 90% of a capacity of ``1.15 peak / 0.9``
    vehicles, i.e. at ``1.15 peak``: above the fleet cap ``1.1 peak`` of the
    default scenario and below a 25% overdispatch at peak demand.
    """
    crit = 1.15 * peak
    return PiecewiseAffine([0.0, 0.5 * peak, 0.8 * peak, crit, 1.5 * peak],
                           [25.0, 18.0, 14.0, 10.0, 6.0], nonincreasing=True)


def default_week_scenario(peak: float = 20000.0, seed: int = 0, w: float = 0.1,
                          ordering: Sequence = (), demand: Optional[DemandSeries] = None,
                          horizon: int = STEPS_PER_WEEK) -> MarketScenario:
    """Five-firm weekly scenario calibrated to the market shares.

    Fares, per-car costs and ``a_i`` are affine in the normalized demand
    ``s(t) in [0, 1]``. For big firms ``b_i(t)`` places the firm's stand-alone
    optimum ``(r a - d) / (2 r b)`` at its share of the current demand, clipped
    to the admissible range; small firms get ``b_i = -0.41e-4 (1 - s)``.
    Per-firm caps are 1.3 times the share of the fleet ceiling ``1.1 peak``;
    the service floor is 80% of the lowest demand.
    """
    demand = demand or synthetic_week(peak, seed)
    vals = demand.values(horizon + 1)
    lo, hi = float(vals.min()), float(vals.max())
    span = max(hi - lo, 1e-12)

    def s(t):
        return min(max((demand(t) - lo) / span, 0.0), 1.0)

    def r(t):
        return R_RANGE[0] + (R_RANGE[1] - R_RANGE[0]) * s(t)

    def d(t):
        return D_RANGE[0] + (D_RANGE[1] - D_RANGE[0]) * s(t)

    def a(t):
        return A_RANGE[0] + (A_RANGE[1] - A_RANGE[0]) * s(t)

    total_upper = 1.1 * peak
    firms = []
    for name in ("Yellow", "Uber", "Lyft", "Via", "Juno"):
        share = MARKET_SHARES[name]
        size = FIRM_SIZES[name]
        if size == "big":
            def b(t, share=share):
                target = max(share * demand(t), 1.0)
                return float(np.clip((r(t) * a(t) - d(t)) / (2.0 * r(t) * target), 0.0, B_RANGE[1]))
        else:
            def b(t):
                return B_RANGE[0] * (1.0 - s(t))
        firms.append(FirmParams(name, 0.0, 1.3 * share * total_upper, a, b, r, d, size, share))
    names = [f.name for f in firms]
    W = np.zeros((5, 5))
    for u, v in COMPETITORS:
        i, j = names.index(u), names.index(v)
        W[i, j] = W[j, i] = w
    shares = np.array([f.share for f in firms])
    return MarketScenario(tuple(firms), W, 0.8 * lo, total_upper, tuple(ordering), horizon, 15, demand,
                          default_speed_map(peak), x0=shares * demand(0))


class RidehailingCostModel(ParametricModel):
    """Known part ``d_i x_i + sum_j w_ij (x_i - x_j)^2``; unknown ``(a_i, b_i)`` on features ``(-r x_i, r x_i^2)``."""

    def __init__(self, scenario: MarketScenario):
        self.scenario = scenario
        self.blocks = [slice(i, i + 1) for i in range(len(scenario.firms))]

    def dim(self, i):
        return 2

    def features(self, i, x, t):
        r = self.scenario.firms[i].r(t)
        return np.array([-r * x[i], r * x[i] ** 2])

    def feature_jacobian(self, i, x, t):
        r = self.scenario.firms[i].r(t)
        return np.array([[-r], [2.0 * r * x[i]]])

    def offset(self, i, x, t):
        w = self.scenario.W[i]
        return self.scenario.firms[i].d(t) * x[i] + float(w @ (x[i] - x) ** 2)

    def offset_gradient(self, i, x, t):
        w = self.scenario.W[i]
        return np.array([self.scenario.firms[i].d(t) + 2.0 * float(w @ (x[i] - x))])

    def true_parameters(self, i, t):
        f = self.scenario.firms[i]
        return np.array([f.a(t), f.b(t)])


def constraint_rows(scenario: MarketScenario):
    """``(A, q)`` for the total-fleet band and the ordering pairs."""
    N = len(scenario.firms)
    names = scenario.names
    rows = [np.ones(N), -np.ones(N)]
    q = [scenario.total_upper, -scenario.total_lower]
    for hi, lo in scenario.ordering:
        i = names.index(hi) if isinstance(hi, str) else int(hi)
        j = names.index(lo) if isinstance(lo, str) else int(lo)
        row = np.zeros(N)
        row[j], row[i] = 1.0, -1.0
        rows.append(row)
        q.append(0.0)
    return np.array(rows), np.array(q)


def build_game(scenario: MarketScenario) -> Game:
    """Game, potential and quadratic structure for a market scenario."""
    firms = scenario.firms
    N = len(firms)
    lb = np.array([f.lower for f in firms])
    ub = np.array([f.upper for f in firms])
    if scenario.total_lower > ub.sum():
        raise InfeasibleSetError(f"service floor {scenario.total_lower:g} exceeds total capacity {ub.sum():g}")
    A, q = constraint_rows(scenario)
    P = Polyhedron(lb, ub, A, q)
    W = scenario.W
    lap = np.diag(W.sum(axis=1)) - W

    def quad(t) -> QuadraticData:
        a, b, r, d = scenario.params(t)
        return QuadraticData(np.diag(2.0 * r * b) + 2.0 * lap, d - r * a)

    def gradient(x, t):
        a, b, r, d = scenario.params(t)
        return d + 2.0 * (lap @ x) - r * (a - 2.0 * b * x)

    def jacobian(x, t):
        return quad(t).H

    def theta(x, t):
        a, b, r, d = scenario.params(t)
        return float(d @ x - r @ (a * x - b * x * x) + x @ lap @ x)

    def agent(i):
        def cost(x, t):
            f = firms[i]
            return (f.d(t) * x[i] + float(W[i] @ (x[i] - x) ** 2)
                    - f.r(t) * (f.a(t) * x[i] - f.b(t) * x[i] ** 2))

        def grad(x, t):
            f = firms[i]
            return np.array([f.d(t) + 2.0 * float(W[i] @ (x[i] - x)) - f.r(t) * (f.a(t) - 2.0 * f.b(t) * x[i])])

        def lip(t):
            f = firms[i]
            return float(np.abs(2.0 * f.r(t) * f.b(t) + 2.0 * W[i].sum()) + 2.0 * W[i].sum())

        return AgentCost(i, slice(i, i + 1), cost, grad, lip)

    return Game(
        agents=tuple(agent(i) for i in range(N)),
        polyhedron=P,
        potential=PotentialOracle(theta),
        gradient_fn=gradient,
        jacobian_fn=jacobian,
        ell_fn=lambda t: float(np.linalg.norm(quad(t).H, 2)),
        quadratic=quad,
        stationary=False,
        name="ridehailing",
        metadata={"cost_model": RidehailingCostModel(scenario), "scenario": scenario},
    )


def initial_point(game: Game) -> np.ndarray:
    sc = game.metadata["scenario"]
    x0 = sc.x0 if sc.x0 is not None else game.polyhedron.feasible_point
    return project(game.polyhedron, np.asarray(x0, dtype=float))


# ---------------------------------------------------------------- post-processing

@dataclass
class RoundingReport:
    values: np.ndarray
    relative_error: np.ndarray
    violations: np.ndarray
    flagged: bool

    @property
    def max_relative_error(self) -> float:
        return float(self.relative_error.max()) if self.relative_error.size else 0.0


def round_strategies(x, polyhedron: Optional[Polyhedron] = None, tolerance: float = 0.0) -> RoundingReport:
    """Round fleet sizes to integers, halves to even.

    The rounded point is not repaired: coupling rows it breaks by more than
    ``tolerance`` cars are reported and ``flagged`` is set.
    """
    x = np.asarray(x, dtype=float)
    xr = np.rint(x)
    rel = np.abs(x - xr) / np.maximum(1.0, np.abs(x))
    if polyhedron is not None and polyhedron.m:
        viol = np.maximum(polyhedron.A @ xr - polyhedron.q, 0.0)
    else:
        viol = np.zeros(0)
    return RoundingReport(xr.astype(np.int64), rel, viol, bool(np.any(viol > tolerance)))


@dataclass(frozen=True)
class PiecewiseAffine:
    """Continuous piecewise-affine map; constant beyond the end breakpoints."""

    breakpoints: np.ndarray
    values: np.ndarray
    nonincreasing: bool = False

    def __post_init__(self):
        bp = np.asarray(self.breakpoints, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if bp.ndim != 1 or bp.size != v.size or bp.size < 2:
            raise ConfigError("need at least two breakpoints with matching values")
        if np.any(np.diff(bp) <= 0):
            raise ConfigError("breakpoints must be strictly increasing")
        if self.nonincreasing and np.any(np.diff(v) > 0):
            raise ConfigError("values increase although the map is declared nonincreasing")
        object.__setattr__(self, "breakpoints", bp)
        object.__setattr__(self, "values", v)

    def __call__(self, z):
        out = np.interp(np.asarray(z, dtype=float), self.breakpoints, self.values)
        return float(out) if np.ndim(out) == 0 else out


def congestion_speed(vehicles, speed_map: PiecewiseAffine):
    """Average speed (mph) for a number of vehicles on the road (clamped at the ends)."""
    return speed_map(vehicles)


def congestion_comparison(trace_x: np.ndarray, scenario: MarketScenario, overdispatch: float = 0.25,
                          critical_speed: float = 10.0, steps: Optional[int] = None) -> dict:
    """Speeds under the coordinated fleets and under naive dispatch of ``(1 + overdispatch) * requests``.

    Only weekday intervals (the first five days) enter the weekday summaries.
    """
    steps = steps or len(trace_x)
    fleet = np.asarray(trace_x, dtype=float)[:steps].sum(axis=1)
    demand = scenario.demand.values(steps)
    v_coord = congestion_speed(fleet, scenario.speed_map)
    v_naive = congestion_speed((1.0 + overdispatch) * demand, scenario.speed_map)
    weekday = (np.arange(steps) % STEPS_PER_WEEK) < 5 * STEPS_PER_DAY
    return {
        "fleet": fleet,
        "demand": demand,
        "speed_coordinated": v_coord,
        "speed_naive": v_naive,
        "weekday": weekday,
        "min_weekday_coordinated": float(v_coord[weekday].min()),
        "min_weekday_naive": float(v_naive[weekday].min()),
        "naive_intervals_below": int(np.sum(v_naive[weekday] < critical_speed)),
    }
