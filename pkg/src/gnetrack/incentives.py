"""Personalized quadratic incentives and their parameter schedules.

At step ``t`` the coordinator pulls agent ``i`` towards a centre
``x+_i = x_{i,t-1} + xi(t) * Ghat_i`` with the penalty
``1/2 c(t) ||x_i - x+_i||^2``. Adding the penalty gradients to the
pseudo-gradient gives the extended operator ``F = G + c (x - x+)``, which is
``(c - ell)``-strongly monotone whenever ``G`` is ``ell``-Lipschitz.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import ConfigError, InadmissibleScheduleError

# relative slack for c >= 2 ell so that c = 2 ell computed in floating point is accepted
_ADMISSIBILITY_RTOL = 1e-12


@dataclass(frozen=True)
class CPolicy:
    """Penalty weight policy.

    kind : ``"constant"`` (``c = value``), ``"proportional"`` (``c = value * ell(t)``)
    or ``"piecewise"`` (``segments`` of ``(start_step, CPolicy)``, the last
    segment with ``start <= t`` applies).
    """

    kind: str
    value: float = 0.0
    segments: tuple = ()

    def __post_init__(self):
        if self.kind not in ("constant", "proportional", "piecewise"):
            raise ConfigError(f"unknown c policy {self.kind!r}")
        if self.kind == "piecewise":
            if not self.segments:
                raise ConfigError("piecewise c policy needs at least one segment")
            starts = [s for s, _ in self.segments]
            if starts != sorted(starts) or starts[0] > 1:
                raise ConfigError("piecewise segments must start at step <= 1 and be sorted")
        elif self.value < 0:
            raise ConfigError("c policy value must be nonnegative")

    def __call__(self, t: int, ell: float) -> float:
        if self.kind == "constant":
            return float(self.value)
        if self.kind == "proportional":
            return float(self.value) * ell
        active = self.segments[0][1]
        for start, pol in self.segments:
            if start <= t:
                active = pol
        return active(t, ell)

    def describe(self) -> str:
        if self.kind == "constant":
            return f"constant:{self.value:g}"
        if self.kind == "proportional":
            return f"proportional:{self.value:g}"
        return "piecewise:" + ";".join(f"{s}={p.describe()}" for s, p in self.segments)


@dataclass(frozen=True)
class XiPolicy:
    """Gradient-step policy for the incentive centre.

    kind : ``"constant"`` (``xi = value``), ``"fraction"`` (``xi = value / c(t)``,
    so ``c xi = value``) or ``"piecewise"``.
    """

    kind: str
    value: float = 0.0
    segments: tuple = ()

    def __post_init__(self):
        if self.kind not in ("constant", "fraction", "piecewise"):
            raise ConfigError(f"unknown xi policy {self.kind!r}")
        if self.kind == "piecewise" and not self.segments:
            raise ConfigError("piecewise xi policy needs at least one segment")

    def __call__(self, t: int, c: float) -> float:
        if self.kind == "constant":
            return float(self.value)
        if self.kind == "fraction":
            return float(self.value) / c if c > 0 else 0.0
        active = self.segments[0][1]
        for start, pol in self.segments:
            if start <= t:
                active = pol
        return active(t, c)

    def describe(self) -> str:
        if self.kind in ("constant", "fraction"):
            return f"{self.kind}:{self.value:g}"
        return "piecewise:" + ";".join(f"{s}={p.describe()}" for s, p in self.segments)


def _parse_simple(text: str, cls):
    kind, _, val = text.partition(":")
    kind = kind.strip()
    if kind == "piecewise":
        segs = []
        for part in val.split(";"):
            start, _, sub = part.partition("=")
            try:
                segs.append((int(start), _parse_simple(sub, cls)))
            except ValueError as exc:
                raise ConfigError(f"bad piecewise segment {part!r}") from exc
        return cls("piecewise", segments=tuple(segs))
    try:
        return cls(kind, float(val))
    except ValueError as exc:
        raise ConfigError(f"bad policy value in {text!r}") from exc


def parse_c_policy(policy) -> CPolicy:
    """Build a c policy from ``"kind:value"`` text or a mapping."""
    if isinstance(policy, CPolicy):
        return policy
    if isinstance(policy, (int, float)):
        return CPolicy("constant", float(policy))
    if isinstance(policy, str):
        return _parse_simple(policy, CPolicy)
    if isinstance(policy, dict):
        kind = policy.get("kind")
        if kind == "piecewise":
            return CPolicy("piecewise", segments=tuple((int(s["start"]), parse_c_policy(s["policy"]))
                                                      for s in policy["segments"]))
        return CPolicy(kind, float(policy.get("value", policy.get("factor", 0.0))))
    raise ConfigError(f"cannot interpret c policy {policy!r}")


def parse_xi_policy(policy) -> XiPolicy:
    """Build a xi policy from ``"kind:value"`` text or a mapping."""
    if isinstance(policy, XiPolicy):
        return policy
    if isinstance(policy, (int, float)):
        return XiPolicy("constant", float(policy))
    if isinstance(policy, str):
        return _parse_simple(policy, XiPolicy)
    if isinstance(policy, dict):
        kind = policy.get("kind")
        if kind == "piecewise":
            return XiPolicy("piecewise", segments=tuple((int(s["start"]), parse_xi_policy(s["policy"]))
                                                       for s in policy["segments"]))
        return XiPolicy(kind, float(policy.get("value", policy.get("fraction", 0.0))))
    raise ConfigError(f"cannot interpret xi policy {policy!r}")


@dataclass(frozen=True)
class IncentiveSchedule:
    """Penalty weight ``c(t)``, centre step ``xi(t)`` and the reference ``ell(t)``."""

    c_policy: CPolicy
    xi_policy: XiPolicy
    ell_ref: Callable[[int], float]

    def ell(self, t: int) -> float:
        return float(self.ell_ref(t))

    def c(self, t: int) -> float:
        return self.c_policy(t, self.ell(t))

    def xi(self, t: int) -> float:
        return self.xi_policy(t, self.c(t))

    def check(self, t: int) -> None:
        check_admissible(self.c(t), self.xi(t), self.ell(t))

    def derived(self, t: int):
        return derived_from(self.c(t), self.xi(t), self.ell(t))


def check_admissible(c: float, xi: float, ell: float) -> None:
    """Raise ``InadmissibleScheduleError`` unless ``c >= 2 ell`` and ``0 <= xi < 1/c``."""
    if not (np.isfinite(c) and np.isfinite(xi)):
        raise InadmissibleScheduleError(f"non-finite parameters c={c}, xi={xi}", "finite")
    if c < 2.0 * ell * (1.0 - _ADMISSIBILITY_RTOL) or c <= 0:
        raise InadmissibleScheduleError(
            f"c={c:.6g} violates c >= 2*ell = {2 * ell:.6g} (needed for strong monotonicity)",
            "c >= 2*ell")
    if xi < 0:
        raise InadmissibleScheduleError(f"xi={xi:.6g} is negative", "xi >= 0")
    if c * xi >= 1.0:
        raise InadmissibleScheduleError(
            f"c*xi = {c * xi:.6g} >= 1 so alpha = 1 - c*xi is not positive", "alpha > 0")


def derived_from(c: float, xi: float, ell: float):
    """``(alpha, beta, kappa)`` for given ``c``, ``xi`` and ``ell``."""
    check_admissible(c, xi, ell)
    alpha = 1.0 - c * xi
    beta = ell * (2.0 - alpha) / (2.0 * alpha)
    kappa = (1.0 - alpha) / (2.0 * alpha)
    return alpha, beta, kappa


def derived_params(schedule: IncentiveSchedule, t: int):
    """``(alpha, beta, kappa)`` of ``schedule`` at step ``t``."""
    return schedule.derived(t)


@dataclass(frozen=True)
class IncentiveState:
    """Incentive centres for one step, built from the previous equilibrium."""

    centers: np.ndarray
    grad_estimate: np.ndarray
    prev_eq: np.ndarray
    c: float
    xi: float

    @classmethod
    def prepare(cls, prev_eq, grad_estimate, c: float, xi: float) -> "IncentiveState":
        prev_eq = np.array(prev_eq, dtype=float)
        grad_estimate = np.array(grad_estimate, dtype=float)
        if prev_eq.shape != grad_estimate.shape:
            raise ValueError("gradient estimate and previous equilibrium differ in shape")
        centers = prev_eq + xi * grad_estimate
        for a in (prev_eq, grad_estimate, centers):
            a.setflags(write=False)
        return cls(centers, grad_estimate, prev_eq, float(c), float(xi))

    @classmethod
    def from_schedule(cls, schedule: IncentiveSchedule, t: int, prev_eq, grad_estimate) -> "IncentiveState":
        schedule.check(t)
        return cls.prepare(prev_eq, grad_estimate, schedule.c(t), schedule.xi(t))


def incentive_value(state: IncentiveState, block: slice, x_i) -> float:
    """``1/2 c ||x_i - x+_i||^2`` for the agent owning ``block``."""
    diff = np.asarray(x_i, dtype=float) - state.centers[block]
    return 0.5 * state.c * float(diff @ diff)


def incentive_gradient(state: IncentiveState, x) -> np.ndarray:
    """Stacked incentive gradients ``U(x) = c (x - x+)``."""
    return state.c * (np.asarray(x, dtype=float) - state.centers)


@dataclass(frozen=True)
class ExtendedOperator:
    """``F(x) = G(x; t) + c (x - x+)`` with its moduli.

    ``mu = c - ell`` is the strong-monotonicity modulus and ``lipschitz = ell + c``.
    """

    G: Callable[[np.ndarray], np.ndarray]
    state: IncentiveState
    ell: float
    jacobian_G: Optional[Callable[[np.ndarray], np.ndarray]] = None

    @property
    def c(self) -> float:
        return self.state.c

    @property
    def mu(self) -> float:
        return self.c - self.ell

    @property
    def lipschitz(self) -> float:
        return self.ell + self.c

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return self.G(x) + self.c * (x - self.state.centers)

    def jacobian(self, x) -> np.ndarray:
        if self.jacobian_G is None:
            raise ValueError("no Jacobian available for the pseudo-gradient")
        return self.jacobian_G(x) + self.c * np.eye(np.asarray(x).size)


def extended_operator(game, schedule: IncentiveSchedule, state: IncentiveState, t: int) -> ExtendedOperator:
    """Extended operator of the incentivized game at step ``t``."""
    schedule.check(t)
    jac = None if game.jacobian_fn is None else (lambda x: game.jacobian(x, t))
    return ExtendedOperator(lambda x: game.pseudo_gradient(x, t), state, schedule.ell(t), jac)
