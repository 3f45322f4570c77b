"""JSON experiment configuration.

Precedence is command-line overrides, then file values, then the built-in
defaults below. Field names carry their units. A complete file::

    {
      "n_agents": 4,
      "region_m": [-20, 20, -20, 20],
      "initial_agents": null,
      "true_target_m": null,
      "sensor": {"alpha": 1000, "beta_m2": 100, "gamma": 3.375, "noise_var": 2},
      "motion": {"speed_mps": 1, "dt_s": 1, "g_mps2": 9.81, "r_min_m": 3},
      "noise": {"sigma_x_m": 0.05, "sigma_y_m": 0.05, "sigma_psi_rad": 0.0436, "mult": 0},
      "n_particles": 500,
      "planner": {"levels": 5, "search_mode": "auto"},
      "horizon_steps": 100,
      "seed": 0,
      "trial": 0,
      "algorithm": "proposed",
      "on_collapse": "halt",
      "sweep": {"levels": [0, 0.5, 1, 2, 4, 6], "trials": 30,
                "algorithms": ["pf-only", "proposed"]}
    }

``noise.true_cov`` / ``noise.assumed_cov`` (3x3) replace the
``mult * diag(sigma**2)`` construction when given. ``initial_agents`` is a
list of ``[x_m, y_m, psi_rad]``.
"""

from __future__ import annotations

import copy
import json
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .models import SensorParams
from .montecarlo import DEFAULT_LEVELS, SweepConfig
from .world import PF_ONLY, PROPOSED, SIGMA_PSI, SIGMA_X, SIGMA_Y, EpisodeConfig

DEFAULTS = {
    "n_agents": 4,
    "region_m": [-20.0, 20.0, -20.0, 20.0],
    "initial_agents": None,
    "true_target_m": None,
    "sensor": {"alpha": 1000.0, "beta_m2": 100.0, "gamma": 3.375, "noise_var": 2.0},
    "motion": {"speed_mps": 1.0, "dt_s": 1.0, "g_mps2": 9.81, "r_min_m": 3.0},
    "noise": {
        "sigma_x_m": SIGMA_X,
        "sigma_y_m": SIGMA_Y,
        "sigma_psi_rad": SIGMA_PSI,
        "mult": 0.0,
        "true_cov": None,
        "assumed_cov": None,
    },
    "n_particles": 500,
    "planner": {"levels": 5, "search_mode": "auto"},
    "horizon_steps": 100,
    "seed": 0,
    "trial": 0,
    "algorithm": PROPOSED,
    "on_collapse": "halt",
    "sweep": {"levels": list(DEFAULT_LEVELS), "trials": 30, "algorithms": [PF_ONLY, PROPOSED]},
}


def _line_of(text: str, key: str) -> int | None:
    needle = f'"{key}"'
    for lineno, line in enumerate(text.splitlines(), 1):
        if needle in line:
            return lineno
    return None


def _merge(base: dict, update: dict, text: str, path: str, prefix=""):
    for key, value in update.items():
        if key not in base:
            raise ConfigError(_anchor(path, text, key, f"unknown key {prefix}{key!r}"))
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(_anchor(path, text, key, f"{prefix}{key} must be an object"))
            _merge(base[key], value, text, path, prefix=f"{prefix}{key}.")
        else:
            base[key] = value


def _anchor(path, text, key, message):
    line = _line_of(text, key) if text else None
    return f"{path}:{line}: {message}" if line else f"{path}: {message}"


def load(path=None, overrides: dict | None = None) -> dict:
    """Resolve a configuration dict from defaults, a JSON file and overrides."""
    resolved = copy.deepcopy(DEFAULTS)
    text = ""
    where = str(path) if path else "<defaults>"
    if path is not None:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"{path}: cannot read config: {exc.strerror}") from exc
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: invalid JSON: {exc.msg}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"{path}:1: top level must be a JSON object")
        _merge(resolved, data, text, where)
    for dotted, value in (overrides or {}).items():
        if value is None:
            continue
        node = resolved
        *parents, leaf = dotted.split(".")
        for p in parents:
            node = node[p]
        node[leaf] = value
    try:
        episode_config(resolved)
    except ConfigError as exc:
        raise ConfigError(f"{where}: {exc}") from exc
    return resolved


def _base_cov(noise) -> np.ndarray:
    return np.diag([noise["sigma_x_m"] ** 2, noise["sigma_y_m"] ** 2, noise["sigma_psi_rad"] ** 2])


def episode_config(cfg: dict) -> EpisodeConfig:
    try:
        noise = cfg["noise"]
        true_cov = noise["true_cov"] if noise["true_cov"] is not None else noise["mult"] * _base_cov(noise)
        assumed = noise["assumed_cov"] if noise["assumed_cov"] is not None else true_cov
        s, m, p = cfg["sensor"], cfg["motion"], cfg["planner"]
        return EpisodeConfig(
            n_agents=int(cfg["n_agents"]),
            region=tuple(cfg["region_m"]),
            initial_agents=cfg["initial_agents"],
            true_target=cfg["true_target_m"],
            true_noise_cov=np.asarray(true_cov, dtype=float),
            assumed_noise_cov=np.asarray(assumed, dtype=float),
            sensor=SensorParams(float(s["alpha"]), float(s["beta_m2"]), float(s["gamma"]), float(s["noise_var"])),
            speed=float(m["speed_mps"]),
            dt=float(m["dt_s"]),
            g=float(m["g_mps2"]),
            r_min=float(m["r_min_m"]),
            n_particles=int(cfg["n_particles"]),
            levels=int(p["levels"]),
            search_mode=p["search_mode"],
            horizon=int(cfg["horizon_steps"]),
            seed=int(cfg["seed"]),
            trial=int(cfg["trial"]),
            algorithm=cfg["algorithm"],
            on_collapse=cfg["on_collapse"],
        )
    except ConfigError:
        raise
    except (TypeError, ValueError, KeyError) as exc:
        raise ConfigError(str(exc)) from exc


def sweep_config(cfg: dict) -> SweepConfig:
    episode = episode_config(cfg)
    sw = cfg["sweep"]
    try:
        return SweepConfig(
            episode=episode,
            base_cov=_base_cov(cfg["noise"]),
            levels=tuple(sw["levels"]),
            trials=int(sw["trials"]),
            algorithms=tuple(sw["algorithms"]),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"sweep: {exc}") from exc
