"""Euclidean projection onto polyhedra and an extragradient VI solver.

The feasible set is always of the form ``{x : lb <= x <= ub, A x <= q}``.
Projection is computed exactly by a dense primal active-set method, which is
fast enough at the sizes this package targets (a handful of agents).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.optimize import linprog

from .errors import InfeasibleSetError, SolverError

logger = logging.getLogger(__name__)

Operator = Callable[[np.ndarray], np.ndarray]


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Polyhedron:
    """Box plus affine inequalities, checked nonempty at construction."""

    lb: np.ndarray
    ub: np.ndarray
    A: np.ndarray = None
    q: np.ndarray = None
    feasible_point: np.ndarray = field(init=False, repr=False)
    C: np.ndarray = field(init=False, repr=False)
    d: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        lb = _frozen(self.lb).ravel()
        ub = _frozen(self.ub).ravel()
        n = lb.size
        if ub.size != n:
            raise ValueError("lb and ub must have the same length")
        if np.any(lb > ub):
            raise InfeasibleSetError("lower bound exceeds upper bound in at least one coordinate")
        if not (np.all(np.isfinite(lb)) and np.all(np.isfinite(ub))):
            raise ValueError("box bounds must be finite")
        A = np.zeros((0, n)) if self.A is None else np.atleast_2d(np.array(self.A, dtype=float))
        if A.size == 0:
            A = np.zeros((0, n))
        q = np.zeros(0) if self.q is None else np.array(self.q, dtype=float).ravel()
        if A.shape[1] != n or A.shape[0] != q.size:
            raise ValueError(f"coupling shapes inconsistent: A {A.shape}, q {q.shape}, n={n}")
        object.__setattr__(self, "lb", lb)
        object.__setattr__(self, "ub", ub)
        object.__setattr__(self, "A", _frozen(A))
        object.__setattr__(self, "q", _frozen(q))
        object.__setattr__(self, "C", _frozen(np.vstack([A, np.eye(n), -np.eye(n)])))
        object.__setattr__(self, "d", _frozen(np.concatenate([q, ub, -lb])))
        object.__setattr__(self, "feasible_point", _frozen(self._find_feasible_point()))

    @property
    def n(self) -> int:
        return self.lb.size

    @property
    def m(self) -> int:
        return self.q.size

    def _find_feasible_point(self) -> np.ndarray:
        centre = 0.5 * (self.lb + self.ub)
        if self.m == 0 or np.all(self.A @ centre <= self.q):
            return centre
        # maximise the smallest slack so the certificate sits inside when possible
        n = self.n
        c = np.zeros(n + 1)
        c[-1] = -1.0
        A_ub = np.hstack([self.A, np.linalg.norm(self.A, axis=1, keepdims=True)])
        bounds = [(lo, hi) for lo, hi in zip(self.lb, self.ub)] + [(0.0, 1.0 + float(np.max(self.ub - self.lb)))]
        res = linprog(c, A_ub=A_ub, b_ub=self.q, bounds=bounds, method="highs")
        if res.status != 0:
            raise InfeasibleSetError(f"feasible set is empty ({res.message})")
        return np.clip(res.x[:n], self.lb, self.ub)

    def contains(self, x, tol: float = 1e-9) -> bool:
        x = np.asarray(x, dtype=float)
        scale = 1.0 + np.abs(self.d)
        return bool(np.all(self.C @ x - self.d <= tol * scale))

    def violation(self, x) -> float:
        """Largest constraint violation (zero when feasible)."""
        return float(max(0.0, np.max(self.C @ np.asarray(x, dtype=float) - self.d)))

    def project(self, z) -> np.ndarray:
        return project(self, z)


@dataclass
class VISolution:
    x_star: np.ndarray
    natural_residual: float
    iterations: int
    converged: bool
    polished: bool = False


def _initial_working_set(C: np.ndarray, active: np.ndarray) -> list[int]:
    working: list[int] = []
    rows = np.zeros((0, C.shape[1]))
    for i in np.flatnonzero(active):
        cand = np.vstack([rows, C[i]])
        if np.linalg.matrix_rank(cand, tol=1e-10) > rows.shape[0]:
            working.append(int(i))
            rows = cand
    return working


def _active_set_projection(P: Polyhedron, z: np.ndarray, x: np.ndarray, max_iter: int) -> np.ndarray:
    C, d = P.C, P.d
    scale = 1.0 + np.abs(d)
    slack_tol = 1e-12 * scale
    working = _initial_working_set(C, C @ x - d >= -slack_tol)
    for _ in range(max_iter):
        g = x - z
        if working:
            M = C[working]
            y, *_ = np.linalg.lstsq(M @ M.T, M @ g, rcond=None)
            p = -(g - M.T @ y)
        else:
            y = np.zeros(0)
            p = -g
        if np.linalg.norm(p) <= 1e-13 * (1.0 + np.linalg.norm(x)):
            if not working:
                return x
            # KKT: g + M^T lam = 0 with lam = -y
            lam = -y
            j = int(np.argmin(lam))
            if lam[j] >= -1e-12 * (1.0 + np.abs(lam).max()):
                return x
            working.pop(j)
            continue
        Cp = C @ p
        step = 1.0
        blocking = -1
        for i in np.flatnonzero(Cp > 1e-14 * (1.0 + np.abs(Cp).max())):
            if i in working:
                continue
            s = (d[i] - C[i] @ x) / Cp[i]
            if s < step:
                step = max(s, 0.0)
                blocking = int(i)
        x = x + step * p
        if blocking >= 0:
            working.append(blocking)
    raise SolverError("active-set projection did not terminate")


def project(P: Polyhedron, z, max_iter: int = 500) -> np.ndarray:
    """Euclidean projection of ``z`` onto ``P``."""
    z = np.asarray(z, dtype=float)
    if z.shape != (P.n,):
        raise ValueError(f"expected a vector of length {P.n}, got shape {z.shape}")
    y = np.clip(z, P.lb, P.ub)
    if P.m == 0:
        return y
    Ay = P.A @ y
    if np.all(Ay <= P.q):
        return y
    # feasible start on the segment from the certificate towards the clipped point
    x0 = P.feasible_point
    Ax0 = P.A @ x0
    step = 1.0
    grow = Ay - Ax0
    for i in np.flatnonzero(grow > 0):
        step = min(step, max(0.0, (P.q[i] - Ax0[i]) / grow[i]))
    start = x0 + step * (y - x0)
    return _active_set_projection(P, z, start, max_iter)


def natural_residual(P: Polyhedron, F: Operator, x, tau: float) -> float:
    """``||x - proj(x - tau F(x))||``; zero exactly at solutions of VI(P, F)."""
    if tau <= 0:
        raise ValueError("tau must be positive")
    x = np.asarray(x, dtype=float)
    return float(np.linalg.norm(x - project(P, x - tau * F(x))))


def _polish(P: Polyhedron, F: Operator, jacobian: Callable[[np.ndarray], np.ndarray], x: np.ndarray,
            slack: float) -> Optional[np.ndarray]:
    """One Newton step on the KKT system of the constraints active near ``x``."""
    C, d = P.C, P.d
    act = np.flatnonzero(C @ x - d >= -slack * (1.0 + np.abs(d)))
    working = _initial_working_set(C, np.isin(np.arange(C.shape[0]), act))
    J = jacobian(x)
    n, k = x.size, len(working)
    K = np.zeros((n + k, n + k))
    K[:n, :n] = J
    rhs = np.zeros(n + k)
    rhs[:n] = J @ x - F(x)
    if k:
        Cw = C[working]
        K[:n, n:] = Cw.T
        K[n:, :n] = Cw
        rhs[n:] = d[working]
    try:
        sol = np.linalg.solve(K, rhs)
    except np.linalg.LinAlgError:
        return None
    x_new, lam = sol[:n], sol[n:]
    if not np.all(np.isfinite(x_new)):
        return None
    if k and lam.min() < -1e-9 * (1.0 + np.abs(lam).max()):
        return None
    if P.violation(x_new) > 1e-12 * (1.0 + np.abs(d).max()):
        x_new = project(P, x_new)
    return x_new


def solve_vgne(P: Polyhedron, F: Operator, L_F: float, mu: float, x0, tol: float = 1e-8,
               max_iter: int = 100_000, jacobian: Optional[Callable] = None,
               polish: bool = True) -> VISolution:
    """Extragradient method for a strongly monotone VI on ``P``.

    Parameters
    ----------
    P : Polyhedron
        Feasible set.
    F : callable
        Operator, assumed ``mu``-strongly monotone and ``L_F``-Lipschitz on ``P``.
    L_F, mu : float
        Lipschitz and strong-monotonicity moduli. The step is ``0.9 / L_F``.
    x0 : array_like
        Starting point (projected onto ``P`` first).
    tol : float
        Stopping tolerance on the natural residual with ``tau = 1 / L_F``.
    jacobian : callable, optional
        Jacobian of ``F``. When given and ``polish`` is set, the solver attempts
        a Newton step on the active KKT system once the iterate is close, which
        is exact for affine operators.

    Returns
    -------
    VISolution
    """
    if L_F <= 0 or mu <= 0:
        raise ValueError("L_F and mu must be positive")
    if tol <= 0:
        raise ValueError("tol must be positive")
    tau = 0.9 / L_F
    tau_res = 1.0 / L_F
    x = project(P, np.asarray(x0, dtype=float))
    next_polish = 1e-3
    r = np.inf
    for k in range(max_iter + 1):
        Fx = F(x)
        if not np.all(np.isfinite(Fx)):
            raise SolverError(f"operator returned non-finite values at iteration {k}: x={x}")
        r = float(np.linalg.norm(x - project(P, x - tau_res * Fx)))
        if r <= tol:
            return VISolution(x, r, k, True)
        if k == max_iter:
            break
        scale = 1.0 + float(np.abs(x).max())
        if polish and jacobian is not None and r <= next_polish * scale:
            next_polish = r / scale * 1e-2
            cand = _polish(P, F, jacobian, x, slack=max(10.0 * r / scale, 1e-12))
            if cand is not None:
                rc = natural_residual(P, F, cand, tau_res)
                if rc <= tol:
                    return VISolution(cand, rc, k, True, polished=True)
                if rc < r:
                    x = cand
                    continue
        y = project(P, x - tau * Fx)
        Fy = F(y)
        if not np.all(np.isfinite(Fy)):
            raise SolverError(f"operator returned non-finite values at iteration {k}: y={y}")
        x = project(P, x - tau * Fy)
    logger.debug("extragradient hit max_iter=%d with residual %.3e", max_iter, r)
    return VISolution(x, r, max_iter, False)


def sample_polyhedron(P: Polyhedron, rng: np.random.Generator, count: int, tries: int = 50) -> np.ndarray:
    """Random points of ``P``: box-uniform with rejection, projection as fallback."""
    out = np.empty((count, P.n))
    filled = 0
    for _ in range(tries):
        if filled == count:
            break
        Z = rng.uniform(P.lb, P.ub, size=(count - filled, P.n))
        ok = np.all(Z @ P.A.T <= P.q, axis=1) if P.m else np.ones(len(Z), bool)
        good = Z[ok]
        out[filled:filled + len(good)] = good
        filled += len(good)
    if filled < count:
        Z = rng.uniform(P.lb, P.ub, size=(count - filled, P.n))
        out[filled:] = [project(P, z) for z in Z]
    return out


def vi_certificate(P: Polyhedron, F_x: np.ndarray, x: np.ndarray, samples: np.ndarray) -> float:
    """Smallest ``(y - x)^T F(x)`` over sampled feasible ``y`` (nonnegative at a solution)."""
    return float(np.min((samples - x) @ F_x))
