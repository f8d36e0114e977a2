"""Study configuration: JSON schema, defaults and validation."""
from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .geometry import ProfileSpec, profile_from_config
from .limit1d import Nonlinearity, nonlinearity_from_config
from .mesh import ResolutionPolicy

DEFAULTS = {
    "profile": {"preset": "default", "alpha": 1.5},
    "eps": [0.2, 0.1, 0.05],
    "resolution": {
        "n_per": 64,
        "ny": 64,
        "h_max": 1 / 128,
        "cell_columns": 64,
        "cell_cap": 512,
        "cell_rtol": 5e-3,
        "samples_per_piece": 8,
        "node_budget": 2_000_000,
    },
    "nonlinearity": {"preset": "logistic-cubic", "lam": 10.0, "clip": 3.0},
    "source": {"preset": "cos-plus-linear"},
    "tolerances": {"solver": 1e-10, "newton": 1e-10, "newton_eps": 1e-9},
    "time": {"T": 50.0, "dt": 1e-3},
    "spectrum_k": 4,
    "deltas": [0.1, 0.05, 0.025],
    "region": "OMEGA_EPS",
    "seed": 0,
    "workers": 1,
}

SOURCES = ("constant", "cosine", "cos-plus-linear", "polynomial")


def _merge(base, over, path=""):
    out = copy.deepcopy(base)
    for k, v in over.items():
        if k not in base:
            raise ConfigError(f"unknown config key {path + k!r}")
        if isinstance(base[k], dict) and k not in ("profile", "nonlinearity", "source"):
            if not isinstance(v, dict):
                raise ConfigError(f"config key {path + k!r} must be an object")
            out[k] = _merge(base[k], v, path + k + ".")
        else:
            out[k] = copy.deepcopy(v)
    return out


def source_from_config(cfg):
    """Slow-variable source ``f0(x)`` from ``{"preset": ..., params}``."""
    cfg = dict(cfg)
    kind = cfg.pop("preset", "cos-plus-linear")
    if kind == "constant":
        c = float(cfg.pop("value", 1.0))
        fn = lambda x: c + 0.0 * np.asarray(x, dtype=float)
    elif kind == "cosine":
        a, k = float(cfg.pop("amp", 1.0)), int(cfg.pop("mode", 1))
        fn = lambda x: a * np.cos(k * np.pi * np.asarray(x, dtype=float))
    elif kind == "cos-plus-linear":
        fn = lambda x: np.cos(np.pi * np.asarray(x, dtype=float)) + np.asarray(x, dtype=float)
    elif kind == "polynomial":
        coef = [float(v) for v in cfg.pop("coefficients", [1.0])]
        fn = lambda x: np.polynomial.polynomial.polyval(np.asarray(x, dtype=float), coef)
    else:
        raise ConfigError(f"unknown source preset {kind!r}; choose from {SOURCES}")
    if cfg:
        raise ConfigError(f"unknown source keys {sorted(cfg)}")
    return fn


@dataclass(eq=False)
class StudyConfig:
    """Validated study configuration; ``raw`` is the merged JSON document."""

    raw: dict
    profile: ProfileSpec = field(init=False)
    nonlinearity: Nonlinearity = field(init=False)

    def __post_init__(self):
        r = self.raw
        eps = [float(e) for e in r["eps"]]
        if not eps or any(not 0 < e < 1 for e in eps):
            raise ConfigError(f"eps values must lie in (0, 1), got {eps}")
        if any(b >= a for a, b in zip(eps, eps[1:])):
            raise ConfigError(f"eps list must be strictly descending, got {eps}")
        r["eps"] = eps
        prof = dict(r["profile"])
        self.profile = profile_from_config(prof)
        self.nonlinearity = nonlinearity_from_config(r["nonlinearity"])
        source_from_config(r["source"])  # validate early
        res = r["resolution"]
        try:
            self.resolution = ResolutionPolicy(
                n_per=int(res["n_per"]), ny=int(res["ny"]), h_max=float(res["h_max"]),
                cell_columns=int(res["cell_columns"]), node_budget=int(res["node_budget"]),
            )
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad resolution: {exc}") from None
        if int(res["samples_per_piece"]) < 2:
            raise ConfigError("samples_per_piece must be at least 2")
        if not 1 <= int(r["spectrum_k"]) <= 6:
            raise ConfigError("spectrum_k must lie in 1..6")
        if r["region"] not in ("OMEGA_EPS", "OMEGA_TILDE"):
            raise ConfigError("region must be OMEGA_EPS or OMEGA_TILDE")
        if any(not d >= 0 for d in r["deltas"]):
            raise ConfigError("deltas must be nonnegative")
        if not (r["time"]["dt"] > 0 and r["time"]["T"] >= 0):
            raise ConfigError("time.dt must be positive and time.T nonnegative")

    @property
    def f0(self):
        return source_from_config(self.raw["source"])

    @property
    def eps(self):
        return list(self.raw["eps"])

    @property
    def tol(self):
        return self.raw["tolerances"]

    @property
    def cell_kwargs(self):
        res = self.raw["resolution"]
        return {"n": int(res["samples_per_piece"]), "start": int(res["cell_columns"]),
                "cap": int(res["cell_cap"]), "rtol": float(res["cell_rtol"])}


def load_config(source=None, overrides=None) -> StudyConfig:
    """Build a config from a JSON file path, a dict, or the defaults."""
    data = {}
    if isinstance(source, (str, Path)):
        path = Path(source)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            data = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON in {path}: {exc}") from None
    elif isinstance(source, dict):
        data = source
    elif source is not None:
        raise ConfigError("config must be a path or a mapping")
    if not isinstance(data, dict):
        raise ConfigError("config root must be a JSON object")
    merged = _merge(DEFAULTS, data)
    if overrides:
        merged = _merge(merged, overrides)
    return StudyConfig(merged)
