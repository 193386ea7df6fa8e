import itertools

import numpy as np
import pytest

from gnetrack.bruteforce import global_quadratic_min, kkt_projection, unique_rows, vertices
from gnetrack.solver import Polyhedron

BOX = Polyhedron([-1.0, -1.0], [1.0, 1.0])


def grid_min(H, f, P, k=401):
    g = np.linspace(-1, 1, k)
    X = np.array(list(itertools.product(g, repeat=P.n)))
    X = X[[P.contains(x) for x in X]]
    vals = 0.5 * np.einsum("ij,jk,ik->i", X, H, X) + X @ f
    return vals.min()


def test_indefinite_game_minimizers():
    Q = np.array([[1.0, 2.0], [2.0, 1.0]])
    res = global_quadratic_min(Q, np.zeros(2), BOX)
    got = sorted(map(tuple, np.round(res.minimizers, 12)))
    assert got == [(-1.0, 1.0), (1.0, -1.0)]
    assert res.value == pytest.approx(-1.0)


@pytest.mark.parametrize("seed", range(8))
def test_matches_dense_grid(seed):
    rng = np.random.default_rng(seed)
    M = rng.normal(size=(2, 2))
    H = M + M.T
    f = rng.normal(size=2)
    P = Polyhedron([-1.0, -1.0], [1.0, 1.0], [rng.normal(size=2)], [0.3])
    res = global_quadratic_min(H, f, P)
    assert P.violation(res.minimizers[0]) <= 1e-9
    # the grid can only find values at or above the true minimum (up to grid spacing effects)
    assert res.value <= grid_min(H, f, P) + 1e-12
    assert res.value >= grid_min(H, f, P) - 5e-2


def test_vertices_of_cut_square():
    P = Polyhedron([-1.0, -1.0], [1.0, 1.0], [[1.0, 1.0]], [1.0])
    V = sorted(map(tuple, np.round(vertices(P), 12)))
    assert V == [(-1.0, -1.0), (-1.0, 1.0), (0.0, 1.0), (1.0, -1.0), (1.0, 0.0)]


def test_kkt_projection():
    P = Polyhedron([-1.0, -1.0], [1.0, 1.0], [[1.0, 1.0]], [1.0])
    np.testing.assert_allclose(kkt_projection(P, [2.0, 0.0]), [1.0, 0.0], atol=1e-12)


def test_unique_rows():
    X = np.array([[0.0, 1.0], [0.0, 1.0 + 1e-12], [1.0, 0.0]])
    assert len(unique_rows(X)) == 2
