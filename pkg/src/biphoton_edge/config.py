"""Run configuration: a YAML file validated against a fixed schema.

Errors name the offending field and, where known, its line in the file.
A run manifest (JSON) is also accepted; its ``config`` entry is used.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from .biphoton import RECIPES, StateError, StateRecipe
from .lattice import DisorderSpec, HaldaneSpec, LatticeError, QheSpec


class ConfigError(ValueError):
    """Invalid configuration; the message names the field."""


SCHEMA: dict[str, dict[str, type | tuple]] = {
    "model": {
        "kind": str, "nx": int, "ny": int, "kappa": float, "t2": float, "phi": float,
        "beta": float, "disorder_length": int, "disorder_start": (int, type(None)),
    },
    "disorder": {"sigma": float, "seed": int, "region": str},
    "state": {
        "recipe": (str, type(None)), "sigma_c": (float, type(None)), "sigma_a": (float, type(None)),
        "m_e": int, "x0": (float, type(None)), "project": bool,
    },
    "propagation": {"z": (float, type(None)), "reference_range": list, "reference_step": float},
    "ensemble": {"instances": int},
    "scan": {"sigma_min": float, "sigma_max": float, "points": int, "seed_policy": str, "instances": int},
    "window": {"threshold": float, "sigma_c": float, "sigma_a": float},
    "size_study": {"sizes": list, "disorder_start": (int, type(None)), "instances": int,
                   "sigma_c": float, "sigma_a": float},
    "verify": {"degenerate_cases": int, "generic_cases": int, "evolution_states": int},
}

DEFAULTS: dict[str, dict[str, Any]] = {
    "model": {"kind": "haldane", "nx": None, "ny": None, "kappa": 1.0, "t2": 0.2, "phi": float(np.pi / 2),
              "beta": 0.0, "disorder_length": 20, "disorder_start": None},
    "disorder": {"sigma": 0.0, "seed": 0, "region": "middle"},
    "state": {"recipe": "product", "sigma_c": None, "sigma_a": None, "m_e": 20, "x0": None, "project": True},
    "propagation": {"z": None, "reference_range": [70.0, 80.0], "reference_step": 0.1},
    "ensemble": {"instances": 20},
    "scan": {"sigma_min": 0.01, "sigma_max": 10.0, "points": 25, "seed_policy": "shared", "instances": 1},
    "window": {"threshold": 0.01, "sigma_c": 0.01, "sigma_a": 0.01},
    "size_study": {"sizes": [[10, 90], [20, 90], [10, 180]], "disorder_start": 35, "instances": 1,
                   "sigma_c": 5.0, "sigma_a": 0.01},
    "verify": {"degenerate_cases": 1000, "generic_cases": 200, "evolution_states": 20},
}


def _line_index(text: str) -> dict[tuple, int]:
    """Map ``(section,)`` and ``(section, key)`` to 1-based line numbers."""
    out: dict[tuple, int] = {}
    try:
        root = yaml.compose(text)
    except yaml.YAMLError:
        return out
    if not isinstance(root, yaml.MappingNode):
        return out
    for knode, vnode in root.value:
        out[(knode.value,)] = knode.start_mark.line + 1
        if isinstance(vnode, yaml.MappingNode):
            for k2, _ in vnode.value:
                out[(knode.value, k2.value)] = k2.start_mark.line + 1
    return out


@dataclass
class RunConfig:
    data: dict
    source: str = "<defaults>"
    lines: dict = field(default_factory=dict)

    def where(self, *path) -> str:
        line = self.lines.get(tuple(path))
        name = ".".join(path)
        return f"{self.source}:{line}: {name}" if line else f"{self.source}: {name}"

    def fail(self, msg: str, *path):
        raise ConfigError(f"{self.where(*path)}: {msg}")

    def __getitem__(self, section):
        return self.data[section]

    # --- typed views -------------------------------------------------------

    @property
    def kind(self) -> str:
        return self.data["model"]["kind"]

    def model_spec(self) -> HaldaneSpec | QheSpec:
        m = self.data["model"]
        try:
            if m["kind"] == "haldane":
                return HaldaneSpec(
                    nx=10 if m["nx"] is None else m["nx"], ny=90 if m["ny"] is None else m["ny"],
                    kappa1=m["kappa"], t2=m["t2"], phi=m["phi"], beta=m["beta"],
                    disorder_length=m["disorder_length"], disorder_start=m["disorder_start"],
                )
            return QheSpec(
                nx=20 if m["nx"] is None else m["nx"], ny=180 if m["ny"] is None else m["ny"],
                kappa=m["kappa"], phi=m["phi"],
                disorder_length=m["disorder_length"], disorder_start=m["disorder_start"],
            )
        except LatticeError as exc:
            self.fail(str(exc), "model", _field_in(str(exc), m) or "kind")

    def disorder_spec(self, seed: int | None = None) -> DisorderSpec:
        d = self.data["disorder"]
        try:
            return DisorderSpec(sigma=d["sigma"], region=d["region"], seed=d["seed"] if seed is None else seed)
        except LatticeError as exc:
            self.fail(str(exc), "disorder", _field_in(str(exc), d) or "sigma")

    def recipe(self) -> StateRecipe:
        s = self.data["state"]
        if s["sigma_c"] is not None or s["sigma_a"] is not None:
            if s["sigma_c"] is None or s["sigma_a"] is None:
                self.fail("sigma_c and sigma_a must be given together", "state", "sigma_c")
            sc, sa = s["sigma_c"], s["sigma_a"]
        else:
            if s["recipe"] not in RECIPES:
                self.fail(f"unknown recipe {s['recipe']!r}; choose from {sorted(RECIPES)}", "state", "recipe")
            sc, sa = RECIPES[s["recipe"]]
        try:
            return StateRecipe.for_model(self.kind, sc, sa, m_e=s["m_e"], x0=s["x0"])
        except StateError as exc:
            self.fail(str(exc), "state", _field_in(str(exc), s) or "sigma_c")


def _field_in(msg: str, section: dict) -> str | None:
    for key in section:
        if key in msg:
            return key
    return None


def _coerce(cfg: RunConfig, section: str, key: str, value, expected):
    types = expected if isinstance(expected, tuple) else (expected,)
    if float in types and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    if isinstance(value, bool) and bool not in types:
        cfg.fail(f"expected {'/'.join(t.__name__ for t in types)}, got bool", section, key)
    if not isinstance(value, types):
        names = "/".join("null" if t is type(None) else t.__name__ for t in types)
        cfg.fail(f"expected {names}, got {type(value).__name__}", section, key)
    return value


def load_config(path: str | Path | None = None, text: str | None = None) -> RunConfig:
    """Parse and validate a config; missing sections and keys take defaults."""
    source = "<string>"
    if path is not None:
        path = Path(path)
        source = str(path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError(f"{source}: cannot read config: {exc}") from exc
    raw: Any = {}
    if text:
        try:
            raw = yaml.safe_load(text) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"{source}: malformed YAML: {exc}") from exc
    if isinstance(raw, dict) and "config" in raw and "outputs" in raw:
        raw = raw["config"]  # a run manifest
    cfg = RunConfig({s: dict(v) for s, v in DEFAULTS.items()}, source, _line_index(text or ""))
    if not isinstance(raw, dict):
        raise ConfigError(f"{source}: top level must be a mapping of sections")
    for section, body in raw.items():
        if section not in SCHEMA:
            cfg.fail(f"unknown section; expected one of {sorted(SCHEMA)}", str(section))
        if body is None:
            continue
        if not isinstance(body, dict):
            cfg.fail("section must be a mapping", section)
        for key, value in body.items():
            if key not in SCHEMA[section]:
                cfg.fail(f"unknown field; expected one of {sorted(SCHEMA[section])}", section, str(key))
            cfg.data[section][key] = _coerce(cfg, section, key, value, SCHEMA[section][key])
    _validate(cfg)
    return cfg


def _validate(cfg: RunConfig):
    m = cfg["model"]
    if m["kind"] not in ("haldane", "qhe"):
        cfg.fail("must be 'haldane' or 'qhe'", "model", "kind")
    for key in ("nx", "ny"):
        if m[key] is not None and m[key] < 1:
            cfg.fail(f"must be >= 1, got {m[key]}", "model", key)
    cfg.model_spec()
    cfg.disorder_spec()
    cfg.recipe()
    p = cfg["propagation"]
    if p["z"] is not None and p["z"] < 0:
        cfg.fail("must be >= 0", "propagation", "z")
    rr = p["reference_range"]
    if len(rr) != 2 or not all(isinstance(v, (int, float)) for v in rr) or rr[0] > rr[1]:
        cfg.fail("must be [lo, hi] with lo <= hi", "propagation", "reference_range")
    if p["reference_step"] <= 0:
        cfg.fail("must be positive", "propagation", "reference_step")
    if cfg["ensemble"]["instances"] < 1:
        cfg.fail("must be >= 1", "ensemble", "instances")
    s = cfg["scan"]
    if not 0 < s["sigma_min"] <= s["sigma_max"]:
        cfg.fail("need 0 < sigma_min <= sigma_max", "scan", "sigma_min")
    if s["points"] < 1:
        cfg.fail("must be >= 1", "scan", "points")
    if s["seed_policy"] not in ("shared", "ensemble"):
        cfg.fail("must be 'shared' or 'ensemble'", "scan", "seed_policy")
    w = cfg["window"]
    if not 0 < w["threshold"] <= 1:
        cfg.fail("must lie in (0, 1]", "window", "threshold")
    for size in cfg["size_study"]["sizes"]:
        if not (isinstance(size, list) and len(size) == 2 and all(isinstance(v, int) and v >= 1 for v in size)):
            cfg.fail(f"each size must be [nx, ny] with positive integers, got {size!r}", "size_study", "sizes")


def config_echo(cfg: RunConfig) -> dict:
    return {s: dict(v) for s, v in cfg.data.items()}
