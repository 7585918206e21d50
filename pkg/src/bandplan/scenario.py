"""Scenario files: schema validation and construction of runnable objects.

A scenario JSON fully describes one experiment: the scene geometry, the
deformable object and its grasp, the task targets and thresholds, parameter
blocks for the controller / deadlock predictor / planner, and the default
trial count and seed.  Validation is strict: unknown keys are rejected and
errors name the offending field path.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .controller import ControllerParams
from .deadlock import DeadlockParams
from .framework import TaskSpec
from .planner import PlannerParams
from .simulator import DeformConfig, make_cloth, make_rope, make_state
from .worldgrid import Scene, obstacle_from_json


class ScenarioError(ValueError):
    """Schema violation; the message names the field path."""


def _err(path, msg):
    raise ScenarioError(f"{path}: {msg}")


def _expect_keys(obj, path, required, optional=()):
    if not isinstance(obj, dict):
        _err(path, "expected an object")
    for k in obj:
        if k not in required and k not in optional:
            _err(f"{path}.{k}", "unknown key")
    for k in required:
        if k not in obj:
            _err(f"{path}.{k}", "missing required key")


def _number(obj, path, positive=False, nonneg=False):
    if not isinstance(obj, (int, float)) or isinstance(obj, bool):
        _err(path, "expected a number")
    if positive and obj <= 0:
        _err(path, "must be positive")
    if nonneg and obj < 0:
        _err(path, "must be non-negative")
    return float(obj)


def _integer(obj, path, minimum=None):
    if not isinstance(obj, int) or isinstance(obj, bool):
        _err(path, "expected an integer")
    if minimum is not None and obj < minimum:
        _err(path, f"must be >= {minimum}")
    return obj


def _vec3(obj, path):
    if not isinstance(obj, list) or len(obj) != 3:
        _err(path, "expected a list of 3 numbers")
    return [_number(v, f"{path}[{i}]") for i, v in enumerate(obj)]


@dataclass
class ScenarioFile:
    """Validated scenario: raw dict plus typed accessors."""

    raw: dict

    @property
    def name(self):
        return self.raw["name"]

    def scene(self) -> Scene:
        s = self.raw["scene"]
        return Scene(
            lower=tuple(s["workspace"]["lower"]),
            upper=tuple(s["workspace"]["upper"]),
            resolution=s["resolution"],
            obstacles=tuple(obstacle_from_json(o) for o in s.get("obstacles", [])),
        )

    def deform(self) -> DeformConfig:
        o = self.raw["object"]
        grasped = tuple(tuple(g) for g in o["grasped"])
        if o["kind"] == "rope":
            return make_rope(o["nodes"], o["length"], o["start"], o["direction"], grasped)
        return make_cloth(
            o["grid"][0], o["grid"][1], tuple(o["size"]), o["origin"],
            o["axis_u"], o["axis_v"], grasped,
        )

    def task(self) -> TaskSpec:
        t = self.raw["task"]
        return TaskSpec(
            targets=np.asarray(t["targets"], dtype=float),
            lambda_s=t["lambda_s"],
            cover_threshold=t["cover_threshold"],
            coverage_fraction=t.get("coverage_fraction", 1.0),
            rho_threshold=t.get("rho_threshold"),
            fixed_map=tuple(t["fixed_map"]) if t.get("fixed_map") is not None else None,
            max_steps=t.get("max_steps", 20000),
        )

    def controller_params(self) -> ControllerParams:
        c = dict(self.raw.get("controller", {}))
        c.setdefault("cover_threshold", self.raw["task"]["cover_threshold"])
        return ControllerParams(
            lambda_s=self.raw["task"]["lambda_s"],
            gripper_radius=self.raw["object"]["gripper_radius"],
            **c,
        )

    def deadlock_params(self) -> DeadlockParams:
        d = dict(self.raw.get("deadlock", {}))
        d.setdefault("contact_eps", self.raw["scene"]["resolution"])
        return DeadlockParams(**d)

    def planner_params(self) -> PlannerParams:
        p = dict(self.raw.get("planner", {}))
        p.setdefault("step", 2.0 * self.raw["scene"]["resolution"])
        p.setdefault("gripper_radius", self.raw["object"]["gripper_radius"])
        return PlannerParams(**p)

    def sim_state(self, grid_resolution=None):
        res = grid_resolution if grid_resolution is not None else self.raw["scene"]["resolution"]
        return make_state(self.deform(), res, self.raw["task"]["lambda_s"])

    @property
    def trials(self):
        t = self.raw.get("trials", {})
        return t.get("count", 1), t.get("base_seed", 0)

    def write(self, path):
        Path(path).write_text(json.dumps(self.raw, indent=2, sort_keys=False) + "\n")


_CONTROLLER_KEYS = ("v_max_ee", "v_max_obs", "beta", "lambda_w", "jacobian_decay", "cover_threshold")
_DEADLOCK_KEYS = ("horizon", "alpha", "history_window", "error_improvement", "motion_threshold", "contact_eps")
_PLANNER_KEYS = (
    "goal_bias", "goal_radius", "best_nearest_radius", "band_weight", "step",
    "time_budget", "restart_timeout", "smoothing_iters", "max_band_points", "goal_jitter",
)


def validate_scenario(raw: dict) -> dict:
    """Validate a scenario dict in place; raises ScenarioError on problems."""
    _expect_keys(
        raw, "scenario",
        required=("name", "scene", "object", "task"),
        optional=("controller", "deadlock", "planner", "trials"),
    )
    if not isinstance(raw["name"], str):
        _err("name", "expected a string")

    s = raw["scene"]
    _expect_keys(s, "scene", required=("resolution", "workspace"), optional=("obstacles",))
    _number(s["resolution"], "scene.resolution", positive=True)
    _expect_keys(s["workspace"], "scene.workspace", required=("lower", "upper"))
    lo = _vec3(s["workspace"]["lower"], "scene.workspace.lower")
    hi = _vec3(s["workspace"]["upper"], "scene.workspace.upper")
    if not all(h > l for l, h in zip(lo, hi)):
        _err("scene.workspace", "upper must exceed lower on every axis")
    for i, o in enumerate(s.get("obstacles", [])):
        path = f"scene.obstacles[{i}]"
        if not isinstance(o, dict) or "type" not in o:
            _err(path, "expected an object with a 'type' key")
        if o["type"] == "box":
            _expect_keys(o, path, required=("type", "center", "extents"))
            _vec3(o["center"], f"{path}.center")
            ext = _vec3(o["extents"], f"{path}.extents")
            if not all(e > 0 for e in ext):
                _err(f"{path}.extents", "must be positive")
        elif o["type"] == "cylinder":
            _expect_keys(o, path, required=("type", "center", "radius", "height"))
            _vec3(o["center"], f"{path}.center")
            _number(o["radius"], f"{path}.radius", positive=True)
            _number(o["height"], f"{path}.height", positive=True)
        else:
            _err(f"{path}.type", f"unknown obstacle type {o['type']!r}")

    o = raw["object"]
    if not isinstance(o, dict) or o.get("kind") not in ("rope", "cloth"):
        _err("object.kind", "expected 'rope' or 'cloth'")
    if o["kind"] == "rope":
        _expect_keys(o, "object", required=("kind", "gripper_radius", "nodes", "length", "start", "direction", "grasped"))
        n_nodes = _integer(o["nodes"], "object.nodes", minimum=2)
        _number(o["length"], "object.length", positive=True)
        _vec3(o["start"], "object.start")
        _vec3(o["direction"], "object.direction")
        n_points = n_nodes
    else:
        _expect_keys(o, "object", required=("kind", "gripper_radius", "grid", "size", "origin", "axis_u", "axis_v", "grasped"))
        g = o["grid"]
        if not isinstance(g, list) or len(g) != 2:
            _err("object.grid", "expected [nx, ny]")
        nx = _integer(g[0], "object.grid[0]", minimum=2)
        ny = _integer(g[1], "object.grid[1]", minimum=2)
        if not isinstance(o["size"], list) or len(o["size"]) != 2:
            _err("object.size", "expected [su, sv]")
        _number(o["size"][0], "object.size[0]", positive=True)
        _number(o["size"][1], "object.size[1]", positive=True)
        _vec3(o["origin"], "object.origin")
        _vec3(o["axis_u"], "object.axis_u")
        _vec3(o["axis_v"], "object.axis_v")
        n_points = nx * ny
    _number(o["gripper_radius"], "object.gripper_radius", positive=True)
    gr = o["grasped"]
    if not isinstance(gr, list) or len(gr) != 2:
        _err("object.grasped", "expected two index lists")
    seen = set()
    for gi, lst in enumerate(gr):
        if not isinstance(lst, list) or not lst:
            _err(f"object.grasped[{gi}]", "expected a non-empty index list")
        for ii, v in enumerate(lst):
            idx = _integer(v, f"object.grasped[{gi}][{ii}]", minimum=0)
            if idx >= n_points:
                _err(f"object.grasped[{gi}][{ii}]", f"index {idx} out of range (P={n_points})")
            if idx in seen:
                _err(f"object.grasped[{gi}][{ii}]", "grasped sets must be disjoint")
            seen.add(idx)

    t = raw["task"]
    _expect_keys(
        t, "task",
        required=("targets", "lambda_s", "cover_threshold", "correspondence"),
        optional=("fixed_map", "coverage_fraction", "rho_threshold", "max_steps"),
    )
    if not isinstance(t["targets"], list) or not t["targets"]:
        _err("task.targets", "expected a non-empty list of points")
    for i, p in enumerate(t["targets"]):
        _vec3(p, f"task.targets[{i}]")
    _number(t["lambda_s"], "task.lambda_s", positive=True)
    _number(t["cover_threshold"], "task.cover_threshold", positive=True)
    if t["correspondence"] not in ("dynamic", "fixed"):
        _err("task.correspondence", "expected 'dynamic' or 'fixed'")
    if t["correspondence"] == "fixed":
        fm = t.get("fixed_map")
        if not isinstance(fm, list) or len(fm) != len(t["targets"]):
            _err("task.fixed_map", "fixed correspondence needs one point index per target")
        for i, v in enumerate(fm):
            idx = _integer(v, f"task.fixed_map[{i}]", minimum=0)
            if idx >= n_points:
                _err(f"task.fixed_map[{i}]", f"index {idx} out of range (P={n_points})")
    if "coverage_fraction" in t:
        v = _number(t["coverage_fraction"], "task.coverage_fraction", positive=True)
        if v > 1.0:
            _err("task.coverage_fraction", "must be <= 1")
    if "rho_threshold" in t and t["rho_threshold"] is not None:
        _number(t["rho_threshold"], "task.rho_threshold", positive=True)
    if "max_steps" in t:
        _integer(t["max_steps"], "task.max_steps", minimum=1)

    for block, keys in (("controller", _CONTROLLER_KEYS), ("deadlock", _DEADLOCK_KEYS), ("planner", _PLANNER_KEYS)):
        if block in raw:
            _expect_keys(raw[block], block, required=(), optional=keys)
            for k, v in raw[block].items():
                if k in ("history_window", "horizon", "smoothing_iters", "max_band_points", "goal_jitter"):
                    _integer(v, f"{block}.{k}", minimum=1)
                elif k == "alpha":
                    a = _number(v, f"{block}.{k}", nonneg=True)
                    if a >= 1.0:
                        _err(f"{block}.{k}", "must be < 1")
                elif k == "goal_bias":
                    b = _number(v, f"{block}.{k}", nonneg=True)
                    if b > 1.0:
                        _err(f"{block}.{k}", "must be <= 1")
                else:
                    _number(v, f"{block}.{k}", positive=True)

    if "trials" in raw:
        _expect_keys(raw["trials"], "trials", required=(), optional=("count", "base_seed"))
        if "count" in raw["trials"]:
            _integer(raw["trials"]["count"], "trials.count", minimum=1)
        if "base_seed" in raw["trials"]:
            _integer(raw["trials"]["base_seed"], "trials.base_seed", minimum=0)

    return raw


def load_scenario(path) -> ScenarioFile:
    """Parse and validate a scenario JSON file."""
    path = Path(path)
    if not path.exists():
        raise ScenarioError(f"scenario file not found: {path}")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"invalid JSON in {path}: {exc}") from exc
    validate_scenario(raw)
    return ScenarioFile(raw=raw)


def bundled_scenario_path(name: str) -> Path:
    """Path of a scenario shipped with the package (single_pillar, ...)."""
    ref = resources.files("bandplan") / "scenarios" / f"{name}.json"
    with resources.as_file(ref) as p:
        return Path(p)


def list_bundled():
    folder = resources.files("bandplan") / "scenarios"
    return sorted(p.name[:-5] for p in folder.iterdir() if p.name.endswith(".json"))
