"""Multi-agent games with shared affine constraints and a potential.

A game stacks the agents' decision blocks into one vector ``x`` of length
``n``. The pseudo-gradient ``G(x; t)`` collects each agent's gradient of its
own cost with respect to its own block. All games handled here have a
symmetric pseudo-gradient Jacobian, so ``G`` is the gradient of a potential.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .errors import DimensionError
from .learning import QuadraticCostModel
from .solver import Polyhedron, sample_polyhedron

Scalar = Union[float, Callable[[int], float]]


def _at(value: Scalar, t: int) -> float:
    return float(value(t)) if callable(value) else float(value)


def fd_step(x: np.ndarray) -> float:
    """Default central-difference step ``1e-6 (1 + ||x||_inf)``."""
    return 1e-6 * (1.0 + float(np.max(np.abs(x)))) if x.size else 1e-6


@dataclass(frozen=True)
class AgentCost:
    """Private cost of one agent.

    Parameters
    ----------
    index : int
        Position of the agent (0-based).
    block : slice
        Coordinates of ``x`` owned by the agent.
    cost : callable
        ``cost(x, t) -> float`` on the full stacked vector.
    gradient : callable
        ``gradient(x, t) -> array`` of length ``block`` size.
    lipschitz : float or callable, optional
        Lipschitz constant of ``gradient`` in ``x``, constant or per step.
    """

    index: int
    block: slice
    cost: Callable[[np.ndarray, int], float]
    gradient: Callable[[np.ndarray, int], np.ndarray]
    lipschitz: Optional[Scalar] = None

    @property
    def size(self) -> int:
        return self.block.stop - self.block.start

    def evaluate(self, x, t: int = 0) -> float:
        return float(self.cost(np.asarray(x, dtype=float), t))

    def gradient_i(self, x, t: int = 0) -> np.ndarray:
        return np.asarray(self.gradient(np.asarray(x, dtype=float), t), dtype=float)

    def lipschitz_at(self, t: int) -> Optional[float]:
        return None if self.lipschitz is None else _at(self.lipschitz, t)


@dataclass(frozen=True)
class PotentialOracle:
    """Potential ``theta(x, t)``; known to tests, never to the coordinator.

    ``minimizers`` optionally returns the certified global minimizers at ``t``.
    """

    theta: Callable[[np.ndarray, int], float]
    minimizers: Optional[Callable[[int], list]] = None

    def __call__(self, x, t: int = 0) -> float:
        return float(self.theta(np.asarray(x, dtype=float), t))


@dataclass(frozen=True)
class QuadraticData:
    """``theta(x; t) = 1/2 x'Hx + f'x + const`` when the game is quadratic."""

    H: np.ndarray
    f: np.ndarray
    const: float = 0.0


@dataclass(frozen=True)
class Game:
    """A GNEP with box sets and affine coupling ``A x <= q``.

    ``gradient_fn``/``jacobian_fn`` are optional vectorized shortcuts; when
    absent the pseudo-gradient is assembled from the agents.
    ``ell_fn`` is the declared Lipschitz constant of ``G`` at ``t``; without it
    the sum of the per-agent constants is used.
    """

    agents: tuple
    polyhedron: Polyhedron
    potential: Optional[PotentialOracle] = None
    gradient_fn: Optional[Callable[[np.ndarray, int], np.ndarray]] = None
    jacobian_fn: Optional[Callable[[np.ndarray, int], np.ndarray]] = None
    ell_fn: Optional[Callable[[int], float]] = None
    quadratic: Optional[Callable[[int], QuadraticData]] = None
    stationary: bool = True
    name: str = "game"
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "agents", tuple(self.agents))
        n = sum(a.size for a in self.agents)
        if n != self.polyhedron.n:
            raise DimensionError(f"agent blocks cover {n} coordinates, feasible set has {self.polyhedron.n}")

    @property
    def n(self) -> int:
        return self.polyhedron.n

    @property
    def N(self) -> int:
        return len(self.agents)

    @property
    def lb(self) -> np.ndarray:
        return self.polyhedron.lb

    @property
    def ub(self) -> np.ndarray:
        return self.polyhedron.ub

    @property
    def A(self) -> np.ndarray:
        return self.polyhedron.A

    @property
    def q(self) -> np.ndarray:
        return self.polyhedron.q

    def _check(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.n,):
            raise DimensionError(f"expected a vector of length {self.n}, got shape {x.shape}")
        return x

    def pseudo_gradient(self, x, t: int = 0) -> np.ndarray:
        x = self._check(x)
        if self.gradient_fn is not None:
            return np.asarray(self.gradient_fn(x, t), dtype=float)
        return np.concatenate([a.gradient_i(x, t) for a in self.agents])

    def costs(self, x, t: int = 0) -> np.ndarray:
        x = self._check(x)
        return np.array([a.evaluate(x, t) for a in self.agents])

    def jacobian(self, x, t: int = 0) -> np.ndarray:
        x = self._check(x)
        if self.jacobian_fn is not None:
            return np.asarray(self.jacobian_fn(x, t), dtype=float)
        return fd_jacobian(lambda y: self.pseudo_gradient(y, t), x, fd_step(x))

    def declared_ell(self, t: int = 0) -> Optional[float]:
        if self.ell_fn is not None:
            return float(self.ell_fn(t))
        per_agent = [a.lipschitz_at(t) for a in self.agents]
        if any(v is None for v in per_agent):
            return None
        return float(sum(per_agent))

    def sum_agent_ell(self, t: int = 0) -> Optional[float]:
        per_agent = [a.lipschitz_at(t) for a in self.agents]
        if any(v is None for v in per_agent):
            return None
        return float(sum(per_agent))

    def theta(self, x, t: int = 0) -> float:
        if self.potential is None:
            raise ValueError(f"game {self.name!r} has no potential oracle")
        return self.potential(self._check(x), t)


def pseudo_gradient(game: Game, x, t: int = 0) -> np.ndarray:
    """Stacked per-agent gradients ``G(x; t)``."""
    return game.pseudo_gradient(x, t)


def fd_jacobian(fun: Callable[[np.ndarray], np.ndarray], x: np.ndarray, h: float) -> np.ndarray:
    """Central-difference Jacobian, ``J[j, k] = d fun_j / d x_k``."""
    n = x.size
    cols = []
    for k in range(n):
        e = np.zeros(n)
        e[k] = h
        cols.append((fun(x + e) - fun(x - e)) / (2.0 * h))
    return np.column_stack(cols) if cols else np.zeros((0, 0))


def fd_gradient(fun: Callable[[np.ndarray], float], x: np.ndarray, h: float) -> np.ndarray:
    g = np.empty(x.size)
    for k in range(x.size):
        e = np.zeros(x.size)
        e[k] = h
        g[k] = (fun(x + e) - fun(x - e)) / (2.0 * h)
    return g


def check_symmetry(game: Game, x, t: int = 0, h: Optional[float] = None) -> float:
    """Largest ``|J_jk - J_kj|`` of the finite-difference pseudo-gradient Jacobian."""
    x = game._check(x)
    if h is None:
        h = fd_step(x)
    if h <= 0:
        raise ValueError("h must be positive")
    J = fd_jacobian(lambda y: game.pseudo_gradient(y, t), x, h)
    return float(np.max(np.abs(J - J.T))) if J.size else 0.0


def potential_gap(game: Game, x, t: int = 0, h: Optional[float] = None) -> float:
    """``||FD grad theta - G||_inf`` at ``x``."""
    x = game._check(x)
    if h is None:
        h = fd_step(x)
    g_fd = fd_gradient(lambda y: game.theta(y, t), x, h)
    return float(np.max(np.abs(g_fd - game.pseudo_gradient(x, t))))


def sample_feasible(game: Game, rng: np.random.Generator, count: int) -> np.ndarray:
    return sample_polyhedron(game.polyhedron, rng, count)


def estimate_ell(game: Game, t: int = 0, samples: int = 1000, seed: int = 0) -> float:
    """Largest observed ``||G(x) - G(y)|| / ||x - y||`` over random feasible pairs.

    Pairs are drawn sequentially from one stream, so for a fixed seed the
    estimate is nondecreasing in ``samples``.
    """
    if samples < 1:
        raise ValueError("samples must be at least 1")
    rng = np.random.default_rng(seed)
    ell = 0.0
    for _ in range(samples):
        x, y = sample_feasible(game, rng, 2)
        dist = np.linalg.norm(x - y)
        if dist <= 1e-12 * (1.0 + np.linalg.norm(x)):
            continue
        diff = np.linalg.norm(game.pseudo_gradient(x, t) - game.pseudo_gradient(y, t))
        ell = max(ell, diff / dist)
    cap = game.sum_agent_ell(t)
    if cap is not None:
        ell = min(ell, cap)
    return float(ell)


def quadratic_game(Q, lb, ub, A=None, q=None, b=None, blocks: Optional[Sequence[int]] = None,
                   name: str = "quadratic", minimizers: Optional[Callable[[int], list]] = None) -> Game:
    """Game with ``G(x; t) = Q(t) x + b(t)``.

    Agent ``i`` owning block ``I`` has cost ``1/2 x_I' Q_II x_I + x_I' (Q_I,-I x_-I + b_I)``.
    When ``Q`` is symmetric the potential ``1/2 x'Qx + b'x`` is attached.
    ``Q`` and ``b`` may be arrays or callables of the step ``t``.
    """
    Qf = Q if callable(Q) else (lambda t, _Q=np.array(Q, dtype=float): _Q)
    n = np.asarray(Qf(0)).shape[0]
    if b is None:
        bf = lambda t: np.zeros(n)  # noqa: E731
    else:
        bf = b if callable(b) else (lambda t, _b=np.array(b, dtype=float): _b)
    sizes = [1] * n if blocks is None else list(blocks)
    if sum(sizes) != n:
        raise DimensionError(f"blocks {sizes} do not sum to {n}")
    cuts = np.cumsum([0] + sizes)
    slices = [slice(int(cuts[i]), int(cuts[i + 1])) for i in range(len(sizes))]

    def agent(i: int, s: slice) -> AgentCost:
        def cost(x, t):
            Qt, bt = np.asarray(Qf(t)), np.asarray(bf(t))
            xi = x[s]
            other = x.copy()
            other[s] = 0.0
            return 0.5 * xi @ Qt[s, s] @ xi + xi @ (Qt[s] @ other + bt[s])

        def grad(x, t):
            return np.asarray(Qf(t))[s] @ x + np.asarray(bf(t))[s]

        def lip(t):
            return float(np.linalg.norm(np.asarray(Qf(t))[s], 2))

        return AgentCost(i, s, cost, grad, lip)

    agents = [agent(i, s) for i, s in enumerate(slices)]
    P = Polyhedron(lb, ub, A, q)
    symmetric = all(np.allclose(np.asarray(Qf(t)), np.asarray(Qf(t)).T) for t in (0, 1, 7))
    potential = None
    quad = None
    if symmetric:
        potential = PotentialOracle(lambda x, t: 0.5 * x @ np.asarray(Qf(t)) @ x + np.asarray(bf(t)) @ x,
                                    minimizers)
        quad = lambda t: QuadraticData(np.asarray(Qf(t), dtype=float), np.asarray(bf(t), dtype=float))  # noqa: E731
    stationary = not (callable(Q) or callable(b))
    return Game(
        agents=tuple(agents),
        polyhedron=P,
        potential=potential,
        gradient_fn=lambda x, t: np.asarray(Qf(t)) @ x + np.asarray(bf(t)),
        jacobian_fn=lambda x, t: np.asarray(Qf(t), dtype=float),
        ell_fn=lambda t: float(np.linalg.norm(np.asarray(Qf(t)), 2)),
        quadratic=quad,
        stationary=stationary,
        name=name,
        metadata={"cost_model": QuadraticCostModel(n)} if blocks is None else {},
    )


def default_quadratic_game() -> Game:
    """Two scalar agents with ``Q = [[1, 2], [2, 1]]`` on ``[-1, 1]^2``.

    ``Q`` has eigenvalues 3 and -1, so the game is not monotone and the
    potential has two box-constrained minimizers, (1, -1) and (-1, 1).
    """
    return quadratic_game([[1.0, 2.0], [2.0, 1.0]], [-1.0, -1.0], [1.0, 1.0], name="quad2",
                          minimizers=lambda t: [np.array([1.0, -1.0]), np.array([-1.0, 1.0])])


def drifting_quadratic_game(period: float = 400.0, amplitude: float = 0.2, shift: float = 0.3,
                            name: str = "quad_tv") -> Game:
    """Three-agent indefinite quadratic game whose matrix and linear term drift slowly.

    ``Q(t) = Q0 + amplitude * sin(w t) E`` and ``b(t) = (shift cos w t, -0.2 + 0.1 sin w t, 0.2)``
    with ``w = 2 pi / period``, on the box ``[-1, 1]^3`` with ``x1 + x2 + x3 <= 1.5``.
    """
    Q0 = np.array([[2.0, 0.5, 0.0], [0.5, 1.0, 1.5], [0.0, 1.5, 0.5]])
    E = np.array([[0.0, 0.0, 1.0], [0.0, 1.0, 0.0], [1.0, 0.0, 0.0]])
    w = 2.0 * np.pi / period

    def Q(t):
        return Q0 + amplitude * np.sin(w * t) * E

    def b(t):
        return np.array([shift * np.cos(w * t), -0.2 + 0.1 * np.sin(w * t), 0.2])

    return quadratic_game(Q, -np.ones(3), np.ones(3), A=[[1.0, 1.0, 1.0]], q=[1.5], b=b, name=name)
