"""Scenario files: JSON documents describing a game and a run configuration.

Layout::

    {
      "name": "quad2",
      "game": {"type": "quadratic", "Q": [[1, 2], [2, 1]], "lb": [-1, -1], "ub": [1, 1]},
      "run": {"horizon": 300, "c_policy": "constant:6", "xi_policy": "constant:0.05",
              "estimator": {"kind": "oracle"}, "estimator_options": {"rls": {...}},
              "noise": {"sigma": 0.0, "truncate": null}, "seed": 0},
      "bounds": ["T1"]
    }

Game types: ``quadratic``, ``drifting_quadratic`` and ``ridehailing``.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import ConfigError
from .game import Game, drifting_quadratic_game, quadratic_game
from .learning import NoiseModel
from .orchestrator import RunConfig
from .ridehailing import (MarketScenario, PiecewiseAffine, build_game, default_week_scenario, initial_point,
                          read_demand_csv)


@dataclass
class Scenario:
    name: str
    game: Game
    config: RunConfig
    bound_names: tuple = ()
    estimator_options: dict = field(default_factory=dict)
    source: Optional[str] = None
    raw: dict = field(default_factory=dict)

    @property
    def market(self) -> Optional[MarketScenario]:
        return self.game.metadata.get("scenario")


def bundled_names() -> list:
    return sorted(p.name for p in resources.files("gnetrack").joinpath("data").iterdir()
                  if p.name.endswith(".json"))


def resolve_path(path) -> Path:
    """``path`` if it exists, else a bundled data file of that name."""
    p = Path(path)
    if p.exists():
        return p
    bundled = resources.files("gnetrack").joinpath("data").joinpath(p.name)
    if bundled.is_file():
        return Path(str(bundled))
    raise FileNotFoundError(f"scenario file not found: {path}")


def _build_game(entry: dict, base: Path) -> Game:
    kind = entry.get("type")
    if kind == "quadratic":
        try:
            return quadratic_game(entry["Q"], entry["lb"], entry["ub"], entry.get("A"), entry.get("q"),
                                  entry.get("b"), name=entry.get("name", "quadratic"))
        except KeyError as exc:
            raise ConfigError(f"quadratic game needs key {exc}") from exc
    if kind == "drifting_quadratic":
        kw = {k: entry[k] for k in ("period", "amplitude", "shift") if k in entry}
        return drifting_quadratic_game(**kw)
    if kind == "ridehailing":
        demand = None
        if entry.get("demand_csv"):
            csv_path = Path(entry["demand_csv"])
            if not csv_path.is_absolute():
                csv_path = base / csv_path
            if not csv_path.exists():
                raise FileNotFoundError(f"demand file not found: {csv_path}")
            demand = read_demand_csv(csv_path, entry.get("interpolation", "cubic"))
        market = default_week_scenario(peak=float(entry.get("peak", 20000.0)), seed=int(entry.get("demand_seed", 0)),
                                       w=float(entry.get("w", 0.1)), ordering=entry.get("ordering", ()),
                                       demand=demand, horizon=int(entry.get("horizon", 672)))
        overrides = {}
        if "W" in entry:
            overrides["W"] = np.array(entry["W"], dtype=float)
        if "total_lower" in entry:
            overrides["total_lower"] = float(entry["total_lower"])
        if "total_upper" in entry:
            overrides["total_upper"] = float(entry["total_upper"])
        if "speed_map" in entry:
            sm = entry["speed_map"]
            overrides["speed_map"] = PiecewiseAffine(sm["breakpoints"], sm["values"], sm.get("nonincreasing", True))
        if overrides:
            fields = dict(market.__dict__)
            fields.update(overrides)
            fields["allow_asymmetric"] = True
            market = MarketScenario(**fields)
        return build_game(market)
    raise ConfigError(f"unknown game type {kind!r}")


def build_config(run: dict, game: Game, estimator_override: Optional[str] = None,
                 estimator_options: Optional[dict] = None) -> RunConfig:
    run = copy.deepcopy(run)
    options = estimator_options or {}
    est = run.pop("estimator", {"kind": "oracle"})
    if isinstance(est, str):
        est = {"kind": est}
    if estimator_override:
        est = dict(options.get(estimator_override, {}), kind=estimator_override)
    noise = run.pop("noise", None) or {}
    x0 = run.pop("x0", None)
    if x0 is None and "scenario" in game.metadata:
        x0 = initial_point(game)
    allowed = {"horizon", "c_policy", "xi_policy", "arrival_prob", "warmup_samples", "inner_tol",
               "inner_max_iter", "polish", "seed", "mode", "ell_samples", "certificate_samples"}
    unknown = set(run) - allowed
    if unknown:
        raise ConfigError(f"unknown run keys: {sorted(unknown)}")
    if "horizon" not in run:
        raise ConfigError("run section needs a horizon")
    return RunConfig(estimator=est, noise=NoiseModel(float(noise.get("sigma", 0.0)), noise.get("truncate")),
                     x0=None if x0 is None else np.asarray(x0, dtype=float), **run)


def load_scenario(path, estimator: Optional[str] = None, c_policy=None, xi_policy=None,
                  seed: Optional[int] = None, horizon: Optional[int] = None) -> Scenario:
    """Read a scenario file, applying optional command-line overrides."""
    p = resolve_path(path)
    try:
        raw = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{p}: invalid JSON ({exc})") from exc
    if "game" not in raw or "run" not in raw:
        raise ConfigError(f"{p}: scenario needs 'game' and 'run' sections")
    game = _build_game(raw["game"], p.parent)
    run = dict(raw["run"])
    options = run.pop("estimator_options", {})
    if c_policy is not None:
        run["c_policy"] = c_policy
    if xi_policy is not None:
        run["xi_policy"] = xi_policy
    if seed is not None:
        run["seed"] = int(seed)
    if horizon is not None:
        run["horizon"] = int(horizon)
    config = build_config(run, game, estimator, options)
    return Scenario(raw.get("name", p.stem), game, config, tuple(raw.get("bounds", ())), options, str(p), raw)
