#!/usr/bin/env python3
"""Regenerate the bundled scenario JSON files.

Geometry is desk scale: a ~1 m workspace, 0.02 m voxels for cloth scenes and
0.05 m for rope scenes.  Velocity caps are one voxel per step so the
quasi-static stepping stays well resolved at this scale.
"""

import json
from pathlib import Path

import numpy as np

OUT = Path(__file__).resolve().parents[1] / "src" / "bandplan" / "scenarios"


def grid_targets(x_range, y_range, z, nx, ny):
    xs = np.linspace(*x_range, nx)
    ys = np.linspace(*y_range, ny)
    return [[round(float(x), 4), round(float(y), 4), round(float(z), 4)] for x in xs for y in ys]


def line_targets(x, y_range, z, n):
    ys = np.linspace(*y_range, n)
    return [[round(float(x), 4), round(float(y), 4), round(float(z), 4)] for y in ys]


def single_pillar():
    # Cloth slid across a coverage patch on the far side of a pillar (the
    # quasi-static world has no gravity, so the "table" is the patch plane
    # itself).  Navigation pulls the cloth corners to opposite sides of the
    # pillar, which the rollout predicts as overstretch; one plan around the
    # pillar suffices.
    res = 0.02
    plane = 0.22
    return {
        "name": "single_pillar",
        "scene": {
            "resolution": res,
            "workspace": {"lower": [-0.25, 0.0, 0.0], "upper": [1.1, 0.8, 0.5]},
            "obstacles": [
                {"type": "box", "center": [0.45, 0.4, 0.25], "extents": [0.1, 0.14, 0.5]},
            ],
        },
        "object": {
            "kind": "cloth",
            "gripper_radius": 0.02,
            "grid": [5, 9],
            "size": [0.3, 0.5],
            "origin": [0.32, 0.25, plane],
            "axis_u": [0.0, 1.0, 0.0],
            "axis_v": [-1.0, 0.0, 0.0],
            "grasped": [[0], [36]],
        },
        "task": {
            "targets": grid_targets((0.72, 0.98), (0.28, 0.52), plane, 6, 5),
            "lambda_s": 1.17,
            "cover_threshold": 0.08,
            "correspondence": "dynamic",
            "max_steps": 800,
        },
        "controller": {"v_max_ee": 0.02, "v_max_obs": 0.02, "beta": 200.0},
        "deadlock": {"error_improvement": 0.05, "motion_threshold": 0.01},
        "planner": {"time_budget": 60.0, "smoothing_iters": 500},
        "trials": {"count": 100, "base_seed": 0},
    }


def double_slit():
    # Same task as single_pillar but behind a full-height wall with two
    # slits.  The near slit is centered on the cloth, so both grasped
    # corners press wall segments while the cloth wedges in the slit; the
    # band between the pressed grippers stays well under the stretch budget,
    # and the stall is caught by progress detection rather than overstretch.
    res = 0.02
    plane = 0.22
    wall_x = 0.46
    return {
        "name": "double_slit",
        "scene": {
            "resolution": res,
            "workspace": {"lower": [-0.25, 0.0, 0.0], "upper": [1.1, 0.8, 0.5]},
            "obstacles": [
                # wall segments: slits at y [0.34, 0.46] and [0.64, 0.76]
                {"type": "box", "center": [wall_x, 0.17, 0.25], "extents": [0.06, 0.34, 0.5]},
                {"type": "box", "center": [wall_x, 0.55, 0.25], "extents": [0.06, 0.18, 0.5]},
                {"type": "box", "center": [wall_x, 0.78, 0.25], "extents": [0.06, 0.04, 0.5]},
            ],
        },
        "object": {
            "kind": "cloth",
            "gripper_radius": 0.02,
            "grid": [5, 9],
            "size": [0.3, 0.5],
            "origin": [0.32, 0.25, plane],
            "axis_u": [0.0, 1.0, 0.0],
            "axis_v": [-1.0, 0.0, 0.0],
            "grasped": [[0], [36]],
        },
        "task": {
            "targets": grid_targets((0.72, 0.98), (0.32, 0.48), plane, 6, 5),
            "lambda_s": 1.17,
            "cover_threshold": 0.08,
            "correspondence": "dynamic",
            "max_steps": 150,
        },
        "controller": {"v_max_ee": 0.02, "v_max_obs": 0.02, "beta": 200.0},
        "deadlock": {"error_improvement": 0.05, "motion_threshold": 0.03},
        "planner": {"time_budget": 60.0, "smoothing_iters": 500},
        "trials": {"count": 100, "base_seed": 0},
    }


def rope_maze():
    # Two-layer maze analog: the rope starts in the bottom layer and must
    # reach a line of fixed-correspondence targets on the top layer, passing
    # through the opening in the dividing floor.
    res = 0.05
    n_nodes = 39
    n_targets = 13
    fixed = [int(i) for i in np.round(np.linspace(0, n_nodes - 1, n_targets))]
    return {
        "name": "rope_maze",
        "scene": {
            "resolution": res,
            "workspace": {"lower": [0.0, 0.0, 0.0], "upper": [1.2, 1.0, 0.7]},
            "obstacles": [
                # dividing floor between layers, opening at x in [0.85, 1.15]
                {"type": "box", "center": [0.425, 0.5, 0.325], "extents": [0.85, 1.0, 0.1]},
                # bottom-layer baffle forcing a detour
                {"type": "box", "center": [0.6, 0.3, 0.15], "extents": [0.1, 0.6, 0.3]},
                # top-layer baffle between the opening and the target line
                {"type": "box", "center": [0.6, 0.7, 0.55], "extents": [0.1, 0.6, 0.3]},
            ],
        },
        "object": {
            "kind": "rope",
            "gripper_radius": 0.03,
            "nodes": n_nodes,
            "length": 0.78,
            "start": [0.15, 0.11, 0.15],
            "direction": [0.0, 1.0, 0.0],
            "grasped": [[0], [n_nodes - 1]],
        },
        "task": {
            "targets": line_targets(0.15, (0.11, 0.89), 0.62, n_targets),
            "lambda_s": 1.15,
            "cover_threshold": 0.1,
            "correspondence": "fixed",
            "fixed_map": fixed,
            "max_steps": 2500,
        },
        "controller": {"v_max_ee": 0.03, "v_max_obs": 0.03, "beta": 1000.0},
        "deadlock": {},
        "planner": {"time_budget": 90.0, "smoothing_iters": 500},
        "trials": {"count": 100, "base_seed": 0},
    }


def repeated_planning():
    # Adversarial variant: the rope starts near the goal line, but a short
    # wall forces one plan and a free post next to the line splits the goal
    # approach into two homotopy classes.  Plans through the wrong side leave
    # the rope wrapped on the post, deadlocking the controller again.
    res = 0.05
    n_nodes = 39
    n_targets = 13
    fixed = [int(i) for i in np.round(np.linspace(0, n_nodes - 1, n_targets))]
    return {
        "name": "repeated_planning",
        "scene": {
            "resolution": res,
            "workspace": {"lower": [0.0, 0.0, 0.0], "upper": [1.2, 0.9, 0.5]},
            "obstacles": [
                # short wall between the rope and the line, gap at y [0.6, 0.9]
                {"type": "box", "center": [0.45, 0.3, 0.25], "extents": [0.1, 0.6, 0.5]},
                # full-height post beside the target line
                {"type": "box", "center": [0.75, 0.45, 0.25], "extents": [0.1, 0.1, 0.5]},
            ],
        },
        "object": {
            "kind": "rope",
            "gripper_radius": 0.03,
            "nodes": n_nodes,
            "length": 0.78,
            "start": [0.2, 0.06, 0.25],
            "direction": [0.0, 1.0, 0.0],
            "grasped": [[0], [n_nodes - 1]],
        },
        "task": {
            "targets": line_targets(1.0, (0.06, 0.84), 0.25, n_targets),
            "lambda_s": 1.15,
            "cover_threshold": 0.1,
            "correspondence": "fixed",
            "fixed_map": fixed,
            "max_steps": 2500,
        },
        "controller": {"v_max_ee": 0.03, "v_max_obs": 0.03, "beta": 1000.0},
        "deadlock": {},
        "planner": {"time_budget": 90.0, "smoothing_iters": 500},
        "trials": {"count": 100, "base_seed": 0},
    }


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    for fn in (single_pillar, double_slit, rope_maze, repeated_planning):
        spec = fn()
        path = OUT / f"{spec['name']}.json"
        path.write_text(json.dumps(spec, indent=2) + "\n")
        print("wrote", path)


if __name__ == "__main__":
    main()
