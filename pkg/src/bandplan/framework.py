"""Top-level loop: interleave the local controller with planned-path execution.

Every iteration senses the object, rebuilds the virtual elastic band, and
asks the deadlock predictor whether continuing would get stuck.  A predicted
deadlock blacklists the current band and invokes the global planner; the
resulting path is then servoed waypoint by waypoint, after which control
returns to the local controller until the task terminates.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import controller as ctrl
from .band import Band, BandParams, Blacklist, band_length, initialize_band, vis_check
from .deadlock import DeadlockParams, History, predict_deadlock
from .planner import PlannerParams, PlanningFailure, PlanStats, plan_path
from .simulator import SimState, geodesic_between_grippers, sense_points, step
from .worldgrid import WorldGrid


@dataclass(frozen=True)
class TaskSpec:
    """Targets, error definition, and termination rule."""

    targets: np.ndarray                 # (T, 3)
    lambda_s: float
    cover_threshold: float
    coverage_fraction: float = 1.0      # Omega: fraction of targets covered
    rho_threshold: float = None         # alternative Omega for fixed tasks
    fixed_map: tuple = None             # target index -> point index, or None
    max_steps: int = 20000

    def __post_init__(self):
        object.__setattr__(self, "targets", np.atleast_2d(np.asarray(self.targets, dtype=float)))
        if len(self.targets) == 0:
            raise ValueError("targets must be nonempty")
        if not (0.0 < self.coverage_fraction <= 1.0):
            raise ValueError("coverage_fraction must be in (0, 1]")


@dataclass
class PlanRecord:
    """One planner invocation: stats plus the executed plan summary."""

    step: int
    stats: PlanStats
    waypoints: list
    final_band_points: np.ndarray
    blacklist_size: int
    vis_check_ok: bool
    trigger_overstretch: bool
    trigger_no_progress: bool


@dataclass
class StepLog:
    step: int
    mode: str                            # "local" | "path"
    rho: float
    band_len: float
    q_r: np.ndarray
    points: np.ndarray
    band_points: np.ndarray


@dataclass
class RunResult:
    outcome: str                         # "success" | "failure"
    steps: int
    final_rho: float
    planner_invocations: int
    plans: list
    wall_time: float
    validity_violations: int
    logs: list = field(default_factory=list)
    failure_reason: str = ""


def compute_l_max(deform_flat, lambda_s: float) -> float:
    """Longest allowed band: relaxed gripper-to-gripper geodesic, scaled."""
    return geodesic_between_grippers(deform_flat) * lambda_s


def _rho(corr) -> float:
    return corr.total_error()


def _follow_path_command(q_r, path, cursor, v_max, advance_radius):
    """Straight-line step toward the cursor waypoint, capped per gripper.

    Returns (command, new_cursor); cursor moves forward once within
    advance_radius of its waypoint.
    """
    n = len(path)
    while cursor < n and np.linalg.norm(path[cursor] - q_r) <= advance_radius:
        cursor += 1
    if cursor >= n:
        return np.zeros(6), cursor
    delta = (path[cursor] - q_r).reshape(2, 3)
    norms = np.linalg.norm(delta, axis=1)
    scale = np.minimum(1.0, v_max / np.maximum(norms, 1e-12))
    return (delta * scale[:, None]).reshape(6), cursor


def main_loop(
    task: TaskSpec,
    sim: SimState,
    grid: WorldGrid,
    cparams: ctrl.ControllerParams,
    dparams: DeadlockParams,
    pparams: PlannerParams,
    rng,
    log_every: int = 1,
) -> RunResult:
    """Run one trial to task termination, planner failure, or the step cap."""
    t_start = time.perf_counter()
    band_params = BandParams.from_grid(grid, max_points=pparams.max_band_points)
    l_max = compute_l_max(sim.deform, task.lambda_s)
    blacklist = Blacklist()
    history = History(window=dparams.history_window)
    plans: list[PlanRecord] = []
    logs: list[StepLog] = []
    violations = 0

    path = None
    path_bands = None
    cursor = 0
    outcome = "failure"
    reason = "max_steps"
    rho = np.inf
    t = 0

    for t in range(task.max_steps):
        deform = sense_points(sim)
        corr = ctrl.calculate_correspondences(deform, grid, task.cover_threshold, task.fixed_map)
        rho = _rho(corr)

        done = (
            rho < task.rho_threshold
            if task.rho_threshold is not None
            else float(np.mean(corr.covered)) >= task.coverage_fraction
        )
        if done:
            outcome = "success"
            reason = ""
            break

        band = initialize_band(deform, grid, band_params)
        g0, g1 = deform.gripper_positions()
        q_r = np.concatenate([g0, g1])

        verdict = predict_deadlock(
            deform, band, grid, cparams, dparams, history, l_max, q_r, rho,
            path=path, path_cursor=cursor, fixed_map=task.fixed_map, band_params=band_params,
            path_bands=path_bands,
        )
        if verdict:
            blacklist.add(band)
            try:
                waypoints, stats = plan_path(
                    (g0, g1), band, task.targets, corr.covered, blacklist,
                    pparams, grid, rng, l_max,
                )
            except PlanningFailure as exc:
                outcome = "failure"
                reason = f"planner: {exc}"
                break
            plan_band_seq, plan_valid = _validate_plan(
                band, waypoints, grid, band_params, l_max, pparams.gripper_radius
            )
            if not plan_valid:
                violations += 1
            final_band = plan_band_seq[-1] if plan_band_seq else band
            plans.append(
                PlanRecord(
                    step=t,
                    stats=stats,
                    waypoints=waypoints,
                    final_band_points=final_band.points.copy(),
                    blacklist_size=len(blacklist),
                    vis_check_ok=vis_check(final_band, blacklist, grid) == 0,
                    trigger_overstretch=verdict.overstretch,
                    trigger_no_progress=verdict.no_progress,
                )
            )
            path = [np.asarray(w) for w in waypoints]
            path_bands = plan_band_seq
            cursor = 0
            history = History(window=dparams.history_window)

        if path is not None:
            cmd, cursor = _follow_path_command(q_r, path, cursor, cparams.v_max_ee, pparams.step / 2.0)
            mode = "path"
            # Executing a plan: the object must never penetrate an obstacle
            # interior (the plan's own band budget is asserted at plan time).
            if np.any(grid.sdf_at(deform.points) < -1e-9):
                violations += 1
            if cursor >= len(path):
                path = None
                path_bands = None
                cursor = 0
        else:
            cmd = ctrl.local_controller(deform, grid, cparams, fixed_map=task.fixed_map, corr=corr)
            mode = "local"

        # Per-gripper velocity cap is a loop invariant regardless of source.
        cmd2 = cmd.reshape(2, 3)
        speeds = np.linalg.norm(cmd2, axis=1)
        cap = cparams.v_max_ee + cparams.v_max_obs
        over = speeds > cap
        if over.any():
            cmd2[over] *= (cap / speeds[over])[:, None]
            cmd = cmd2.reshape(6)

        if t % log_every == 0:
            logs.append(
                StepLog(
                    step=t, mode=mode, rho=rho, band_len=band_length(band),
                    q_r=q_r.copy(), points=deform.points.copy(), band_points=band.points.copy(),
                )
            )
        sim = step(sim, cmd, grid)

    return RunResult(
        outcome=outcome,
        steps=t,
        final_rho=float(rho),
        planner_invocations=len(plans),
        plans=plans,
        wall_time=time.perf_counter() - t_start,
        validity_violations=violations,
        logs=logs,
        failure_reason=reason,
    )


def _validate_plan(band: Band, waypoints, grid: WorldGrid, band_params: BandParams, l_max: float, gripper_radius: float):
    """Propagate the band along the plan; every waypoint must keep the band
    within the length budget, free of obstacle interiors, and both gripper
    spheres clear.  Returns (band sequence aligned with waypoints, all_valid)."""
    from .band import forward_propagate

    bands = [band]
    b = band
    ok = True
    for q in waypoints[1:]:
        q = np.asarray(q)
        b = forward_propagate(b, (q[:3], q[3:]), grid, band_params)
        bands.append(b)
        if band_length(b) > l_max + 1e-9:
            ok = False
        if float(np.min(grid.sdf_at(b.points))) < -1e-9:
            ok = False
        if grid.sdf_at(q[:3]) < gripper_radius - 1e-9 or grid.sdf_at(q[3:]) < gripper_radius - 1e-9:
            ok = False
    return bands, ok
