"""Deadlock prediction: will the local controller get stuck within a horizon?

Two detectors run on every check.  Overstretch prediction rolls the system
forward under a simplified controller (no stretching terms), dragging the
virtual elastic band along and low-pass filtering its length; bands resting
in free space are ignored because the controller's own stretch correction
handles those.  Progress detection watches a window of robot configurations
and task error for a stall.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from . import controller as ctrl
from .band import Band, BandError, BandParams, band_distance, band_length, forward_propagate
from .simulator import DeformConfig
from .worldgrid import WorldGrid


@dataclass(frozen=True)
class DeadlockParams:
    horizon: int = 10              # N_p rollout steps
    alpha: float = 0.3             # annealing constant of the length filter
    history_window: int = 100      # N_h samples for progress detection
    error_improvement: float = 1.0     # beta_e
    motion_threshold: float = 0.03     # beta_m, summed step norms (m)
    contact_eps: float = 0.02      # band counts as touching below this sdf

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if not (0.0 <= self.alpha < 1.0):
            raise ValueError("alpha must be in [0, 1)")


@dataclass
class History:
    """Time-aligned ring buffers of robot configuration and task error."""

    window: int
    configs: deque = None
    errors: deque = None

    def __post_init__(self):
        self.configs = deque(maxlen=self.window)
        self.errors = deque(maxlen=self.window)

    def append(self, q_r, rho: float):
        self.configs.append(np.asarray(q_r, dtype=float).copy())
        self.errors.append(float(rho))

    def __len__(self):
        return len(self.configs)


@dataclass
class DeadlockResult:
    """Truthy iff deadlock is predicted; keeps the per-detector diagnostics."""

    overstretch: bool
    no_progress: bool
    filtered_lengths: np.ndarray
    truncated: bool = False

    def __bool__(self):
        return self.overstretch or self.no_progress


def anneal_lengths(lengths, alpha: float) -> np.ndarray:
    """Low-pass annealing filter: Ltilde_1 = L_1, then a convex combination."""
    lengths = np.asarray(lengths, dtype=float)
    out = np.empty_like(lengths)
    if len(lengths) == 0:
        return out
    out[0] = lengths[0]
    for n in range(1, len(lengths)):
        out[n] = alpha * out[n - 1] + (1.0 - alpha) * lengths[n]
    return out


def predict_overstretch(bands, l_max: float, alpha: float, grid: WorldGrid, contact_eps: float) -> bool:
    """True iff a filtered, obstacle-contacting band length exceeds l_max."""
    if not bands:
        return False
    lengths = np.array([band_length(b) for b in bands])
    filtered = anneal_lengths(lengths, alpha)
    for b, lf in zip(bands, filtered):
        if lf <= l_max:
            continue
        if float(np.min(grid.sdf_at(b.points))) <= contact_eps:
            return True
    return False


def no_progress(history: History, params: DeadlockParams) -> bool:
    """Stalled: window full, error barely improved, robot barely moved.

    Movement is the net configuration displacement across the window; an
    oscillating press against an obstacle racks up step norms while going
    nowhere, and it is exactly the case this detector must catch.
    """
    if len(history) < params.history_window:
        return False
    errors = list(history.errors)
    improvement = errors[0] - errors[-1]
    if improvement >= params.error_improvement:
        return False
    configs = history.configs
    moved = float(np.linalg.norm(configs[-1] - configs[0]))
    return moved < params.motion_threshold


def rollout(
    deform: DeformConfig,
    band: Band,
    grid: WorldGrid,
    cparams: ctrl.ControllerParams,
    dparams: DeadlockParams,
    path=None,
    path_cursor: int = 0,
    fixed_map=None,
    band_params: BandParams = None,
    path_bands=None,
):
    """Roll the system forward ``horizon`` steps; returns (bands, truncated).

    With no active path the gross motion follows the navigation functions
    under a simplified controller that omits stretching terms; with a path,
    the gripper targets advance one waypoint per step.  ``path_bands`` may
    carry the plan's own validated bands: propagation is contractive, so once
    the rolled band reconverges to the plan band the rest of the horizon is
    reused from the plan.
    """
    if band_params is None:
        band_params = BandParams.from_grid(grid)
    bands = []
    truncated = False
    if path is not None:
        waypoints = path[path_cursor:]
        b = band
        for n in range(dparams.horizon):
            wp = waypoints[n] if n < len(waypoints) else (waypoints[-1] if len(waypoints) else None)
            if wp is None:
                bands.append(b)
                continue
            try:
                b = forward_propagate(b, (wp[:3], wp[3:]), grid, band_params)
            except BandError:
                truncated = True
                break
            bands.append(b)
            k = path_cursor + n
            if path_bands is not None and k < len(path_bands) and band_distance(b, path_bands[k]) < 2e-2:
                take = min(len(path_bands), path_cursor + dparams.horizon)
                bands.extend(path_bands[k + 1: take])
                break
        return bands, truncated

    corr = ctrl.calculate_correspondences(deform, grid, cparams.cover_threshold, fixed_map)
    pts = deform.points.copy()
    est = deform.with_points(pts)
    g0, g1 = est.gripper_positions()
    q = np.concatenate([g0, g1])
    b = band
    for _ in range(dparams.horizon):
        e = ctrl.follow_navigation_function(est, corr, grid)
        q_dot = ctrl.find_best_robot_motion(est, e, cparams)
        if q_dot.any():
            q_dot = ctrl.obstacle_repulsion(q_dot, (q[:3], q[3:]), grid, cparams)
        pts = pts + e.velocities
        est = est.with_points(pts)
        q_new = q + q_dot
        if np.linalg.norm(q_new - q) < 1e-6:
            # Grippers hold still; the band is already settled.
            q = q_new
            bands.append(b)
            continue
        q = q_new
        try:
            b = forward_propagate(b, (q[:3], q[3:]), grid, band_params)
        except BandError:
            truncated = True
            break
        bands.append(b)
    return bands, truncated


def predict_deadlock(
    deform: DeformConfig,
    band: Band,
    grid: WorldGrid,
    cparams: ctrl.ControllerParams,
    dparams: DeadlockParams,
    history: History,
    l_max: float,
    q_r,
    rho: float,
    path=None,
    path_cursor: int = 0,
    fixed_map=None,
    band_params: BandParams = None,
    path_bands=None,
) -> DeadlockResult:
    """Append the current sample to the history and run both detectors."""
    history.append(q_r, rho)
    bands, truncated = rollout(
        deform, band, grid, cparams, dparams,
        path=path, path_cursor=path_cursor, fixed_map=fixed_map, band_params=band_params,
        path_bands=path_bands,
    )
    lengths = np.array([band_length(b) for b in bands]) if bands else np.array([])
    over = predict_overstretch(bands, l_max, dparams.alpha, grid, dparams.contact_eps)
    stall = no_progress(history, dparams)
    return DeadlockResult(
        overstretch=over,
        no_progress=stall,
        filtered_lengths=anneal_lengths(lengths, dparams.alpha),
        truncated=truncated,
    )
