"""Exhaustive evaluation of the constants used by the averaged-residual bounds.

These need the true potential, so they are harness tools: the coordinator in
a run never sees them. All routines assume quadratic structure
(``game.quadratic``) and enumerate faces or vertices of the feasible set.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bruteforce import global_quadratic_min, vertices
from .game import Game
from .orchestrator import BoundConstants, RunTrace


@dataclass
class DriftConstants:
    e_theta: float
    e_nabla: float
    e_nabla_agents: np.ndarray
    e_delta: float
    minimizers: np.ndarray
    theta_min: np.ndarray
    e_theta_exact: bool


def minimum_value(game: Game, t: int = 0):
    data = game.quadratic(t)
    res = global_quadratic_min(data.H, data.f, game.polyhedron)
    return res.value + data.const, res.minimizers


def stationary_constants(game: Game, trace: RunTrace) -> BoundConstants:
    """``delta_bar = theta(x_tbar) - min theta`` from a certified global minimum."""
    value, _ = minimum_value(game, 0)
    return BoundConstants(delta_bar=float(game.theta(trace.x[trace.tbar], 0) - value))


def _box_range(dH: np.ndarray, df: np.ndarray, lb: np.ndarray, ub: np.ndarray):
    # extremes of a separable quadratic sum_j (h_j/2 x_j^2 + f_j x_j) over a box
    lo = hi = 0.0
    for h, f, a, b in zip(np.diag(dH), df, lb, ub):
        pts = [a, b]
        if h != 0 and a < -f / h < b:
            pts.append(-f / h)
        vals = [0.5 * h * p * p + f * p for p in pts]
        lo += min(vals)
        hi += max(vals)
    return lo, hi


def drift_constants(game: Game, horizon: int, method: str = "auto") -> DriftConstants:
    """Per-step drift bounds over steps ``1..horizon``.

    ``e_nabla`` is exact (the gradient drift is affine, so its norm peaks at a
    vertex). ``e_delta`` follows the certified minimizer closest to the previous
    one. ``e_theta`` is exact by face enumeration, or, with ``method="box"``
    (chosen by ``"auto"`` when the Hessian drift is diagonal), the exact range
    over the bounding box, which is a valid upper bound. The box form needs a
    diagonal Hessian drift and raises ``ValueError`` otherwise.
    """
    P = game.polyhedron
    V = vertices(P)
    blocks = [a.block for a in game.agents]
    prev = game.quadratic(0)
    _, mins = minimum_value(game, 0)
    xs = [mins[0]]
    vals = [game.theta(mins[0], 0)]
    e_theta = 0.0
    e_grad = np.zeros(len(blocks))
    e_delta = 0.0
    exact = True
    for t in range(1, horizon + 1):
        cur = game.quadratic(t)
        dH, df = cur.H - prev.H, cur.f - prev.f
        dc = cur.const - prev.const
        diagonal = np.array_equal(dH, np.diag(np.diag(dH)))
        if method == "box" and not diagonal:
            raise ValueError(f"box bound needs a diagonal Hessian drift (step {t})")
        use_box = method == "box" or (method == "auto" and diagonal)
        if use_box:
            lo, hi = _box_range(dH, df, P.lb, P.ub)
            exact = False
        else:
            lo = global_quadratic_min(dH, df, P).value
            hi = -global_quadratic_min(-dH, -df, P).value
        e_theta = max(e_theta, abs(lo + dc), abs(hi + dc))
        D = V @ dH.T + df
        for i, blk in enumerate(blocks):
            e_grad[i] = max(e_grad[i], float(np.max(np.linalg.norm(D[:, blk], axis=1))))
        res = global_quadratic_min(cur.H, cur.f, P)
        x = min(res.minimizers, key=lambda m: np.linalg.norm(m - xs[-1]))
        e_delta = max(e_delta, float(np.linalg.norm(x - xs[-1])))
        xs.append(x)
        vals.append(res.value + cur.const)
        prev = cur
    return DriftConstants(e_theta, float(e_grad.sum()), e_grad, e_delta, np.array(xs), np.array(vals), exact)


def time_varying_constants(game: Game, trace: RunTrace, drift: DriftConstants) -> BoundConstants:
    """``delta_bar = |theta(x_tbar; tbar) - min theta(.; tbar)|`` plus the drift constants."""
    tb = trace.tbar
    delta = abs(game.theta(trace.x[tb], tb) - drift.theta_min[tb])
    return BoundConstants(delta_bar=float(delta), e_theta=drift.e_theta, e_nabla=drift.e_nabla,
                          e_delta=drift.e_delta)
