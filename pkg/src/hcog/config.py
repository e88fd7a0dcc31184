"""Run configuration: layered sources, strict schema, stable hashing.

Precedence (lowest to highest): built-in defaults, JSON config file,
command-line flags, then ``HCOG_``-prefixed environment variables. Unknown
keys are rejected with their dotted path. The resolved configuration
serializes canonically, and its hash gates checkpoint resumption.
"""

from __future__ import annotations

import copy
import hashlib
import json
import os
from dataclasses import dataclass

from .wire import canonical_json

__all__ = ["ConfigError", "RunConfig", "DEFAULTS", "load_run_config", "resolve_config", "config_hash"]


class ConfigError(ValueError):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


DEFAULTS: dict = {
    "seed": 0,
    "plan": {"file": None, "inline": None},
    "init": {
        "source": "random_ball",  # or "ply"
        "count": 4096,
        "radius": 1.0,
        "color": [0.5, 0.5, 0.5],
        "opacity": 0.1,
        "scale": None,  # None: spacing-derived
        "ply": None,
    },
    "image": {"width": 64, "height": 64, "fov_y": 49.1},
    "camera": {"radius": None, "radius_scale": 1.8, "elevation_range": [-45.0, 45.0]},
    "steps": {"coarse": 1200, "fine": 600},
    "segmentation": {"iterations": 200, "learning_rate": 0.05, "threshold": 0.9, "views_per_iteration": 1},
    "extension": {"count": None, "perturb_sigma": 0.01},
    "optimizer": {
        "position": 1.6e-4,  # scaled by scene_radius
        "color": 2.5e-3,
        "opacity": 5e-2,
        "scale": 5e-3,
        "rotation": 1e-3,
        "seg": 0.05,
        "momentum": 0.9,
        "scene_radius": 1.0,
    },
    "guidance": {
        "mode": "oracle",  # or "wire"
        "endpoint": None,
        "multiview_endpoint": None,
        "shape_conditioned_endpoint": None,
        "oracle_target": None,  # PLY path rendered per view
        "oracle_gain": 1.0,
        "weights": {"multiview": 1.0, "shape_conditioned": 1.0},
        "cfg_scale": 7.5,
        "w_t": "constant",
        "schedule": {"steps": 1000, "beta_start": 1e-4, "beta_end": 2e-2},
        "coarse_shape_conditioning": False,
    },
    "mask": {
        "mode": "synthetic",  # or "wire"
        "endpoint": None,
        "dilate": 1.5,
        "parts": {},  # name -> {"center": [x,y,z], "radius": r} or {"block": b}
    },
    "render": {"tile_size": 16, "workers": 1},
}

# subtrees whose keys are user-chosen names rather than schema fields
_OPEN_SUBTREES = {"mask.parts", "plan.inline"}


def _merge(base: dict, override: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        here = f"{path}.{key}" if path else key
        if path in _OPEN_SUBTREES or here in _OPEN_SUBTREES:
            out[key] = copy.deepcopy(value)
            continue
        if key not in base:
            raise ConfigError(here, "unknown configuration key")
        if isinstance(base[key], dict) and base[key] and isinstance(value, dict):
            out[key] = _merge(base[key], value, here)
        else:
            out[key] = copy.deepcopy(value)
    return out


def _parse_env_value(raw: str):
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def env_overrides(environ=None) -> dict:
    """HCOG_SECTION__KEY=value becomes {"section": {"key": value}}."""
    environ = os.environ if environ is None else environ
    tree: dict = {}
    for name, raw in environ.items():
        if not name.startswith("HCOG_"):
            continue
        parts = [p.lower() for p in name[len("HCOG_") :].split("__")]
        node = tree
        for part in parts[:-1]:
            node = node.setdefault(part, {})
        node[parts[-1]] = _parse_env_value(raw)
    return tree


def resolve_config(file_config: dict | None = None, flags: dict | None = None, environ=None) -> dict:
    resolved = DEFAULTS
    for layer in (file_config or {}, flags or {}, env_overrides(environ)):
        resolved = _merge(resolved, layer)
    _validate(resolved)
    return resolved


def load_run_config(path, flags: dict | None = None, environ=None) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            file_config = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError("", f"config file is not valid JSON: {exc}") from exc
    if not isinstance(file_config, dict):
        raise ConfigError("", "config file must hold a JSON object")
    return resolve_config(file_config, flags, environ)


def _require(condition: bool, path: str, message: str) -> None:
    if not condition:
        raise ConfigError(path, message)


def _validate(cfg: dict) -> None:
    _require(isinstance(cfg["seed"], int), "seed", "must be an integer")
    plan = cfg["plan"]
    _require(
        (plan["file"] is None) != (plan["inline"] is None),
        "plan",
        "exactly one of plan.file or plan.inline must be set",
    )
    init = cfg["init"]
    _require(init["source"] in ("random_ball", "ply"), "init.source", "must be 'random_ball' or 'ply'")
    if init["source"] == "ply":
        _require(init["ply"] is not None, "init.ply", "required when init.source is 'ply'")
    else:
        _require(int(init["count"]) >= 1, "init.count", "must be >= 1")
    _require(cfg["steps"]["coarse"] >= 0, "steps.coarse", "must be >= 0")
    _require(cfg["steps"]["fine"] >= 0, "steps.fine", "must be >= 0")
    seg = cfg["segmentation"]
    _require(0.0 < seg["threshold"] < 1.0, "segmentation.threshold", "must lie in (0, 1)")
    _require(seg["iterations"] >= 1, "segmentation.iterations", "must be >= 1")
    guidance = cfg["guidance"]
    _require(guidance["mode"] in ("oracle", "wire"), "guidance.mode", "must be 'oracle' or 'wire'")
    if guidance["mode"] == "wire":
        for tag in ("multiview", "shape_conditioned"):
            endpoint = guidance[f"{tag}_endpoint"] or guidance["endpoint"]
            _require(endpoint is not None, f"guidance.{tag}_endpoint", "no endpoint configured for wire mode")
    else:
        _require(guidance["oracle_target"] is not None, "guidance.oracle_target", "required in oracle mode")
    mask = cfg["mask"]
    _require(mask["mode"] in ("synthetic", "wire"), "mask.mode", "must be 'synthetic' or 'wire'")
    if mask["mode"] == "wire":
        _require(mask["endpoint"] is not None, "mask.endpoint", "required in wire mode")
    ext = cfg["extension"]
    _require(ext["count"] is None or int(ext["count"]) >= 1, "extension.count", "must be >= 1 or null")
    _require(float(ext["perturb_sigma"]) >= 0, "extension.perturb_sigma", "must be >= 0")


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(canonical_json(cfg)).hexdigest()


@dataclass
class RunConfig:
    """Typed view over the resolved configuration dict."""

    data: dict

    def __getitem__(self, key: str):
        return self.data[key]

    @property
    def seed(self) -> int:
        return int(self.data["seed"])

    def hash(self) -> str:
        return config_hash(self.data)
