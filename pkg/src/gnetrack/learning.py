"""Pseudo-gradient estimators fed by scalar cost feedback.

Agents report noisy costs ``p_i = g_i(x; t) + eps_i`` at the equilibria they
play. Estimators turn these into gradient estimates ``Ghat(x; t)``, either by
identifying a cost model that is linear in unknown parameters (recursive
least squares with forgetting) or by differentiating a Gaussian-process
posterior mean. Each estimator exposes a nonincreasing error bound ``e(K)``
in the number ``K`` of samples received.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class FeedbackSample:
    """Costs reported at step ``t`` for joint strategy ``x``; ``p`` is None if nothing arrived."""

    t: int
    x: np.ndarray
    p: Optional[np.ndarray]
    arrived: bool

    def __post_init__(self):
        if self.arrived and self.p is None:
            raise ValueError("an arrived sample must carry costs")
        if not self.arrived and self.p is not None:
            object.__setattr__(self, "p", None)


@dataclass(frozen=True)
class NoiseModel:
    """Zero-mean Gaussian noise, optionally truncated at ``truncate * sigma``."""

    sigma: float = 0.0
    truncate: Optional[float] = None

    def __post_init__(self):
        if self.sigma < 0:
            raise ConfigError("noise sigma must be nonnegative")
        if self.truncate is not None and self.truncate <= 0:
            raise ConfigError("truncation multiple must be positive")

    @property
    def bound(self) -> float:
        """Sure bound on ``|eps|`` (infinite for untruncated Gaussian noise)."""
        if self.sigma == 0:
            return 0.0
        return math.inf if self.truncate is None else self.truncate * self.sigma

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        if self.sigma == 0:
            return np.zeros(size)
        z = rng.standard_normal(size)
        if self.truncate is not None:
            bad = np.abs(z) > self.truncate
            while bad.any():
                z[bad] = rng.standard_normal(int(bad.sum()))
                bad = np.abs(z) > self.truncate
        return self.sigma * z


def error_bound_form(K: int, constant: float, discount: float = 1.0) -> float:
    """``constant / sqrt(min(max(K, 1), K_eff))`` with ``K_eff = ceil(1 / (1 - discount))``."""
    k = max(int(K), 1)
    if discount < 1.0:
        k = min(k, effective_sample_size(discount))
    return constant / math.sqrt(k)


def effective_sample_size(discount: float) -> int:
    """``ceil(1 / (1 - discount))``; guarded against float error so 0.8 gives 5."""
    if not 0.0 < discount < 1.0:
        raise ValueError("discount must lie in (0, 1)")
    return int(math.ceil(1.0 / (1.0 - discount) - 1e-9))


class Estimator:
    """Common bookkeeping: sample count and activation threshold ``min_samples``.

    While fewer than ``min_samples`` samples have arrived the estimator
    returns the zero prior gradient.
    """

    def __init__(self, n: int, min_samples: int = 0):
        self.n = int(n)
        self.min_samples = int(min_samples)
        self._count = 0

    @property
    def sample_count(self) -> int:
        return self._count

    @property
    def active(self) -> bool:
        return self._count >= self.min_samples

    def ingest(self, sample: FeedbackSample) -> None:
        if not sample.arrived:
            return
        self._count += 1
        self._ingest(sample)

    def estimate_gradient(self, x, t: int) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if not self.active:
            return np.zeros(self.n)
        return self._estimate(x, t)

    def error_bound(self, K: int) -> float:
        raise NotImplementedError

    def _ingest(self, sample: FeedbackSample) -> None:
        pass

    def _estimate(self, x: np.ndarray, t: int) -> np.ndarray:
        raise NotImplementedError


class OracleEstimator(Estimator):
    """Returns the true pseudo-gradient; for benchmarks only."""

    def __init__(self, game, min_samples: int = 0):
        super().__init__(game.n, min_samples)
        self.game = game

    def _estimate(self, x, t):
        return self.game.pseudo_gradient(x, t)

    def error_bound(self, K: int) -> float:
        return 0.0


class NoisyOracleEstimator(Estimator):
    """True pseudo-gradient plus a perturbation drawn uniformly from the ball of radius ``bound``."""

    def __init__(self, game, bound: float, seed: int = 0, min_samples: int = 0):
        super().__init__(game.n, min_samples)
        if bound < 0:
            raise ConfigError("noise bound must be nonnegative")
        self.game = game
        self.bound = float(bound)
        self.rng = np.random.default_rng(seed)

    def _estimate(self, x, t):
        g = self.game.pseudo_gradient(x, t)
        v = self.rng.standard_normal(self.n)
        v /= max(np.linalg.norm(v), 1e-300)
        radius = self.bound * self.rng.random() ** (1.0 / self.n)
        return g + radius * v

    def error_bound(self, K: int) -> float:
        return self.bound


class ParametricModel:
    """Per-agent cost model ``g_i(x; t) = offset_i(x, t) + phi_i(x, t)' eta_i``.

    Subclasses define the features, their derivative with respect to the
    agent's own block, and the known offset.
    """

    blocks: Sequence[slice] = ()

    @property
    def N(self) -> int:
        return len(self.blocks)

    @property
    def n(self) -> int:
        return self.blocks[-1].stop if self.blocks else 0

    def dim(self, i: int) -> int:
        raise NotImplementedError

    def features(self, i: int, x: np.ndarray, t: int) -> np.ndarray:
        raise NotImplementedError

    def feature_jacobian(self, i: int, x: np.ndarray, t: int) -> np.ndarray:
        """``d phi_i / d x_i``, shape ``(dim(i), block size)``."""
        raise NotImplementedError

    def offset(self, i: int, x: np.ndarray, t: int) -> float:
        return 0.0

    def offset_gradient(self, i: int, x: np.ndarray, t: int) -> np.ndarray:
        s = self.blocks[i]
        return np.zeros(s.stop - s.start)

    def gradient(self, i: int, x: np.ndarray, t: int, eta: np.ndarray) -> np.ndarray:
        return self.offset_gradient(i, x, t) + self.feature_jacobian(i, x, t).T @ eta


class QuadraticCostModel(ParametricModel):
    """Scalar agents with ``g_i = 1/2 Q_ii x_i^2 + sum_{j != i} Q_ij x_i x_j + b_i x_i``.

    Parameters are ``(Q_ii, Q_ij for j != i, b_i)``; there is no offset.
    """

    def __init__(self, n: int):
        self.blocks = [slice(i, i + 1) for i in range(n)]
        self._n = n

    def dim(self, i):
        return self._n + 1

    def features(self, i, x, t):
        xi = x[i]
        others = [xi * x[j] for j in range(self._n) if j != i]
        return np.array([0.5 * xi * xi, *others, xi])

    def feature_jacobian(self, i, x, t):
        col = [x[i]] + [x[j] for j in range(self._n) if j != i] + [1.0]
        return np.array(col).reshape(-1, 1)


class RLSEstimator(Estimator):
    """Recursive least squares with exponential forgetting, one regression per agent.

    Minimizes ``sum_k lam^(age_k) (p_i(k) - offset - phi' eta)^2 + rho ||eta||^2``
    in information form. The normal matrix is Jacobi-scaled before solving;
    if its condition number still exceeds ``max_condition`` the ridge is
    increased for that solve and a warning is logged. With fewer samples than
    parameters the minimum-norm solution is returned.

    Parameters
    ----------
    model : ParametricModel
    forgetting : float
        ``lam`` in (0, 1].
    ridge : float
        Regularization ``rho`` in the scaled coordinates.
    error_constant : float
        ``C`` in the reported bound ``e(K) = C / sqrt(min(K, K_eff))``.
    """

    def __init__(self, model: ParametricModel, forgetting: float = 1.0, ridge: float = 0.0,
                 error_constant: float = 1.0, min_samples: int = 0, max_condition: float = 1e12):
        super().__init__(model.n, min_samples)
        if not 0.0 < forgetting <= 1.0:
            raise ConfigError("forgetting factor must lie in (0, 1]")
        if ridge < 0 or error_constant < 0:
            raise ConfigError("ridge and error constant must be nonnegative")
        self.model = model
        self.forgetting = float(forgetting)
        self.ridge = float(ridge)
        self.error_constant = float(error_constant)
        self.max_condition = float(max_condition)
        self.R = [np.zeros((model.dim(i), model.dim(i))) for i in range(model.N)]
        self.s = [np.zeros(model.dim(i)) for i in range(model.N)]
        self._eta = [np.zeros(model.dim(i)) for i in range(model.N)]
        self._warned = [False] * model.N

    def _ingest(self, sample: FeedbackSample) -> None:
        lam = self.forgetting
        x = np.asarray(sample.x, dtype=float)
        for i in range(self.model.N):
            phi = self.model.features(i, x, sample.t)
            y = sample.p[i] - self.model.offset(i, x, sample.t)
            self.R[i] = lam * self.R[i] + np.outer(phi, phi)
            self.s[i] = lam * self.s[i] + phi * y
            self._eta[i] = self._solve(i)

    def _solve(self, i: int) -> np.ndarray:
        R, s = self.R[i], self.s[i]
        scale = np.sqrt(np.diag(R))
        scale[scale == 0] = 1.0
        Rs = R / np.outer(scale, scale)
        if self._count < len(s):
            # fewer samples than parameters: minimum-norm solution, rank deficiency is expected
            return np.linalg.lstsq(Rs + self.ridge * np.eye(len(s)), s / scale, rcond=None)[0] / scale
        rho = self.ridge
        M = Rs + rho * np.eye(len(s))
        cond = np.linalg.cond(M)
        while not np.isfinite(cond) or cond > self.max_condition:
            rho = max(10.0 * rho, 1e-12)
            M = Rs + rho * np.eye(len(s))
            cond = np.linalg.cond(M)
        if rho != self.ridge:
            log = logger.debug if self._warned[i] else logger.warning
            log("RLS agent %d: normal matrix ill-conditioned, ridge raised to %.3g", i, rho)
            self._warned[i] = True
        return np.linalg.solve(M, s / scale) / scale

    def parameters(self, i: int) -> np.ndarray:
        return self._eta[i].copy()

    def _estimate(self, x, t):
        return np.concatenate([self.model.gradient(i, x, t, self._eta[i]) for i in range(self.model.N)])

    def error_bound(self, K: int) -> float:
        return error_bound_form(K, self.error_constant, self.forgetting)


class GPEstimator(Estimator):
    """Discounted Gaussian-process regression of each agent's cost.

    Each agent's cost (minus an optional known model offset) is regressed on
    its inputs with a squared-exponential kernel
    ``k(u, v) = sigma_f^2 exp(-||u - v||^2 / (2 l^2))``. A sample of age ``a``
    gets observation variance ``noise^2 / gamma^a``, so old samples fade.
    The gradient is the analytic derivative of the posterior mean with respect
    to the agent's own block.

    Parameters
    ----------
    n, blocks :
        Dimension and agent blocks.
    length_scale, signal_std : float
        Kernel ``l`` and ``sigma_f``.
    discount : float
        ``gamma`` in (0, 1].
    noise_std : float
        Observation noise ``sigma_n``; floored at ``1e-6 sigma_f``.
    inputs : {"full", "own"}
        Regress on the whole joint strategy or on the agent's block only.
    model : ParametricModel, optional
        Known offset used as prior mean (only the offset is used).
    """

    def __init__(self, n: int, blocks: Sequence[slice], length_scale: float = 2e3, signal_std: float = 1e4,
                 discount: float = 0.8, noise_std: float = 1.0, inputs: str = "full",
                 model: Optional[ParametricModel] = None, error_constant: float = 1.0,
                 min_samples: int = 0, max_age: Optional[int] = None):
        super().__init__(n, min_samples)
        if length_scale <= 0 or signal_std <= 0:
            raise ConfigError("kernel hyperparameters must be positive")
        if not 0.0 < discount <= 1.0:
            raise ConfigError("discount must lie in (0, 1]")
        if inputs not in ("full", "own"):
            raise ConfigError("inputs must be 'full' or 'own'")
        self.blocks = list(blocks)
        self.length_scale = float(length_scale)
        self.signal_std = float(signal_std)
        self.discount = float(discount)
        self.noise_std = max(float(noise_std), 1e-6 * self.signal_std)
        self.inputs = inputs
        self.model = model
        self.error_constant = float(error_constant)
        if max_age is None:
            max_age = 10_000 if discount == 1.0 else int(math.ceil(math.log(1e-12) / math.log(discount)))
        self.max_age = max_age
        self._t: list[int] = []
        self._x: list[np.ndarray] = []
        self._y: list[np.ndarray] = []
        self._cache_key = None
        self._cache = None

    def _ingest(self, sample):
        x = np.asarray(sample.x, dtype=float)
        y = np.array(sample.p, dtype=float)
        if self.model is not None:
            y = y - np.array([self.model.offset(i, x, sample.t) for i in range(len(self.blocks))])
        self._t.append(int(sample.t))
        self._x.append(x)
        self._y.append(y)
        self._cache_key = None

    def _inputs(self, X: np.ndarray, i: int) -> np.ndarray:
        return X if self.inputs == "full" else X[..., self.blocks[i]]

    def kernel(self, U: np.ndarray, V: np.ndarray) -> np.ndarray:
        d2 = np.sum((U[:, None, :] - V[None, :, :]) ** 2, axis=-1)
        return self.signal_std ** 2 * np.exp(-0.5 * d2 / self.length_scale ** 2)

    def _fit(self, t: int):
        key = (t, len(self._t))
        if self._cache_key == key:
            return self._cache
        ts = np.array(self._t)
        age = np.maximum(t - ts, 0)
        keep = age <= self.max_age
        X = np.array(self._x)[keep]
        Y = np.array(self._y)[keep]
        age = age[keep]
        var = self.noise_std ** 2 / self.discount ** age
        fits = []
        for i in range(len(self.blocks)):
            U = self._inputs(X, i)
            K = self.kernel(U, U) + np.diag(var)
            try:
                L = np.linalg.cholesky(K)
            except np.linalg.LinAlgError:
                logger.warning("GP agent %d: Gram matrix near singular, adding jitter", i)
                L = np.linalg.cholesky(K + 1e-8 * self.signal_std ** 2 * np.eye(len(K)))
            w = np.linalg.solve(L.T, np.linalg.solve(L, Y[:, i]))
            fits.append((U, w))
        self._cache_key, self._cache = key, fits
        return fits

    def posterior_mean(self, i: int, x, t: int) -> float:
        """Posterior mean of agent ``i``'s cost at ``x`` (offset included)."""
        x = np.asarray(x, dtype=float)
        base = 0.0 if self.model is None else self.model.offset(i, x, t)
        if not self._t:
            return base
        U, w = self._fit(t)[i]
        k = self.kernel(self._inputs(x[None, :], i), U)[0]
        return base + float(k @ w)

    def _estimate(self, x, t):
        out = []
        fits = self._fit(t) if self._t else None
        for i, blk in enumerate(self.blocks):
            g = np.zeros(blk.stop - blk.start)
            if self.model is not None:
                g = g + self.model.offset_gradient(i, x, t)
            if fits is not None:
                U, w = fits[i]
                u = self._inputs(x[None, :], i)
                k = self.kernel(u, U)[0]
                diff = U - u                      # (K, d)
                dmean = (k * w) @ diff / self.length_scale ** 2
                g = g + (dmean if self.inputs == "own" else dmean[blk])
            out.append(g)
        return np.concatenate(out)

    def error_bound(self, K: int) -> float:
        return error_bound_form(K, self.error_constant, self.discount)


def feedback_rows(samples: Sequence[FeedbackSample], N: int):
    """Rows of the feedback log ``t,agent,x...,p,arrived`` (one per agent per step)."""
    for s in samples:
        for i in range(N):
            p = "" if not s.arrived else repr(float(s.p[i]))
            yield [s.t, i + 1, *[repr(float(v)) for v in s.x], p, int(s.arrived)]


def write_feedback_log(path, samples: Sequence[FeedbackSample], N: int) -> None:
    samples = list(samples)
    n = len(samples[0].x) if samples else 0
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "agent", *[f"x_{k + 1}" for k in range(n)], "p", "arrived"])
        w.writerows(feedback_rows(samples, N))
