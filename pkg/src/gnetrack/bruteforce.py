"""Exhaustive active-set enumeration for small polyhedra.

Every local (and hence global) minimizer of a quadratic over a polyhedron lies
in the relative interior of some face and is stationary on that face's affine
hull. Enumerating the faces and solving the equality-constrained stationarity
system on each one therefore yields a finite candidate set that contains all
global minimizers. The cost is exponential in the number of constraints, so
this is a reference implementation for tests and small scenarios only.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .solver import Polyhedron


@dataclass
class QuadraticMinimum:
    value: float
    minimizers: list
    candidates: int


def _face_subsets(P: Polyhedron, k: int):
    m, n = P.m, P.n
    for S in combinations(range(m + 2 * n), k):
        seen = set()
        ok = True
        for i in S:
            if i >= m:
                j = (i - m) % n
                if j in seen:
                    ok = False
                    break
                seen.add(j)
        if ok:
            yield S


def face_stationary_points(H, f, P: Polyhedron, max_face_size: int | None = None):
    """Feasible stationary points of ``1/2 x'Hx + f'x`` on every face of ``P``.

    Returns an array of shape (count, n). Faces of dimension zero are vertices.
    """
    H = np.asarray(H, dtype=float)
    f = np.asarray(f, dtype=float)
    n = P.n
    C, d = np.asarray(P.C), np.asarray(P.d)
    tol = 1e-9 * (1.0 + np.abs(d))
    kmax = n if max_face_size is None else min(n, max_face_size)
    points = []
    for k in range(kmax + 1):
        subsets = list(_face_subsets(P, k))
        if not subsets:
            continue
        idx = np.array(subsets, dtype=int).reshape(len(subsets), k)
        K = np.zeros((len(subsets), n + k, n + k))
        K[:, :n, :n] = H
        rhs = np.zeros((len(subsets), n + k))
        rhs[:, :n] = -f
        if k:
            Cs = C[idx]                      # (S, k, n)
            K[:, :n, n:] = np.transpose(Cs, (0, 2, 1))
            K[:, n:, :n] = Cs
            rhs[:, n:] = d[idx]
        sol = np.einsum("sij,sj->si", np.linalg.pinv(K, rcond=1e-12), rhs)
        resid = np.linalg.norm(np.einsum("sij,sj->si", K, sol) - rhs, axis=1)
        consistent = resid <= 1e-8 * (1.0 + np.linalg.norm(rhs, axis=1))
        X = sol[:, :n]
        feasible = np.all(X @ C.T - d <= tol, axis=1)
        points.append(X[consistent & feasible])
    return np.vstack(points) if points else np.zeros((0, n))


def global_quadratic_min(H, f, P: Polyhedron, rel_tol: float = 1e-9) -> QuadraticMinimum:
    """Global minimum of a (possibly indefinite) quadratic over ``P``.

    All candidates whose value is within ``rel_tol`` of the best are returned
    as minimizers, deduplicated.
    """
    H = np.asarray(H, dtype=float)
    f = np.asarray(f, dtype=float)
    X = face_stationary_points(H, f, P)
    vals = 0.5 * np.einsum("si,ij,sj->s", X, H, X) + X @ f
    best = float(vals.min())
    close = X[vals <= best + rel_tol * (1.0 + abs(best))]
    uniq: list = []
    for x in close:
        if not any(np.linalg.norm(x - u) <= 1e-7 * (1.0 + np.linalg.norm(u)) for u in uniq):
            uniq.append(x)
    return QuadraticMinimum(best, uniq, len(X))


def kkt_projection(P: Polyhedron, z) -> np.ndarray:
    """Projection of ``z`` onto ``P`` by enumeration (independent of the active-set solver)."""
    z = np.asarray(z, dtype=float)
    res = global_quadratic_min(np.eye(P.n), -z, P)
    return res.minimizers[0]


def vertices(P: Polyhedron) -> np.ndarray:
    """All vertices of a bounded polyhedron, deduplicated."""
    n = P.n
    X = face_stationary_points(np.zeros((n, n)), np.zeros(n), P)
    C, d = np.asarray(P.C), np.asarray(P.d)
    keep = []
    # on a face the zero quadratic is stationary everywhere and pinv returns the
    # min-norm point, so keep only points with n independent active rows
    for x in X:
        act = np.abs(C @ x - d) <= 1e-9 * (1.0 + np.abs(d))
        if act.any() and np.linalg.matrix_rank(C[act], tol=1e-10) == n:
            keep.append(x)
    return unique_rows(np.array(keep).reshape(-1, n))


def unique_rows(X: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    out: list = []
    for x in X:
        if not any(np.linalg.norm(x - u) <= tol * (1.0 + np.linalg.norm(u)) for u in out):
            out.append(x)
    return np.array(out)
