"""Seeded batch execution: one trial per seed, stats.csv plus trajectory logs.

Trials are independent and run on a process pool.  The stats table mirrors
the planning-statistics layout used throughout: per-trial planner work
(samples, vertices, timing split) plus controller steps and the outcome,
with mean/stddev footer rows.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass
from multiprocessing import get_context
from pathlib import Path

import numpy as np

from .framework import RunResult, main_loop
from .scenario import ScenarioFile
from .worldgrid import build_grid_cached

STATS_COLUMNS = (
    "seed",
    "planner_invocations",
    "samples",
    "vertices",
    "nn_time",
    "validity_time",
    "plan_total_time",
    "smoothing_time",
    "controller_steps",
    "outcome",
)


@dataclass
class StatsRow:
    seed: int
    planner_invocations: int
    samples: int
    vertices: int
    nn_time: float
    validity_time: float
    plan_total_time: float
    smoothing_time: float
    controller_steps: int
    outcome: str

    @classmethod
    def from_result(cls, seed: int, result: RunResult) -> "StatsRow":
        return cls(
            seed=seed,
            planner_invocations=result.planner_invocations,
            samples=sum(p.stats.samples for p in result.plans),
            vertices=sum(p.stats.vertices for p in result.plans),
            nn_time=sum(p.stats.nn_time for p in result.plans),
            validity_time=sum(p.stats.validity_time for p in result.plans),
            plan_total_time=sum(p.stats.total_time for p in result.plans),
            smoothing_time=sum(p.stats.smoothing_time for p in result.plans),
            controller_steps=result.steps,
            outcome=result.outcome,
        )

    def values(self):
        return [getattr(self, c) for c in STATS_COLUMNS]


@dataclass
class TrialOutcome:
    """Everything the caller may want to aggregate about one trial."""

    seed: int
    row: StatsRow
    result: RunResult


_WORKER_STATE = {}


def _init_worker(scenario_raw, cache_dir):
    # Rebuilt once per worker; the grid load is cached on disk.
    os.environ.setdefault("OMP_NUM_THREADS", "1")
    scn = ScenarioFile(raw=scenario_raw)
    task = scn.task()
    grid = build_grid_cached(scn.scene(), task.targets, cache_dir)
    _WORKER_STATE["scn"] = scn
    _WORKER_STATE["grid"] = grid
    _WORKER_STATE["task"] = task


def _run_trial_worker(args):
    seed, log_path = args
    scn = _WORKER_STATE["scn"]
    result = run_trial(scn, seed, grid=_WORKER_STATE["grid"], task=_WORKER_STATE["task"])
    if log_path is not None:
        write_trajectory_log(log_path, scn, seed, result.result)
    return result


def run_trial(scn: ScenarioFile, seed: int, grid=None, task=None) -> TrialOutcome:
    """Run one seeded trial of a scenario."""
    task = task if task is not None else scn.task()
    if grid is None:
        grid = build_grid_cached(scn.scene(), task.targets, None)
    sim = scn.sim_state(grid.resolution)
    rng = np.random.default_rng(seed)
    result = main_loop(
        task, sim, grid,
        scn.controller_params(), scn.deadlock_params(), scn.planner_params(),
        rng,
    )
    return TrialOutcome(seed=seed, row=StatsRow.from_result(seed, result), result=result)


def write_trajectory_log(path, scn: ScenarioFile, seed: int, result: RunResult):
    """JSON-lines trajectory: meta record, plan events, then per-step states."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w") as fh:
        from .framework import compute_l_max

        l_max = compute_l_max(scn.deform(), scn.raw["task"]["lambda_s"])
        fh.write(json.dumps({
            "event": "meta", "scenario": scn.name, "seed": seed,
            "l_max": l_max, "outcome": result.outcome,
        }) + "\n")
        for p in result.plans:
            fh.write(json.dumps({
                "event": "plan", "step": p.step,
                "duration": p.stats.total_time + p.stats.smoothing_time,
                "plan_time": p.stats.total_time,
                "smoothing_time": p.stats.smoothing_time,
                "samples": p.stats.samples,
                "vertices": p.stats.vertices,
                "trigger_overstretch": p.trigger_overstretch,
                "trigger_no_progress": p.trigger_no_progress,
            }) + "\n")
        for log in result.logs:
            fh.write(json.dumps({
                "step": log.step, "mode": log.mode, "rho": log.rho,
                "band_len": log.band_len,
                "grippers": [round(float(v), 6) for v in log.q_r],
                "points": np.round(log.points, 6).tolist(),
                "band": np.round(log.band_points, 6).tolist(),
            }) + "\n")


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_stats_csv(path, rows: list):
    """stats.csv with per-trial rows plus mean/stddev footer rows."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    numeric = [c for c in STATS_COLUMNS if c not in ("seed", "outcome")]
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(STATS_COLUMNS)
        for r in rows:
            w.writerow([_fmt(v) for v in r.values()])
        data = {c: np.array([float(getattr(r, c)) for r in rows]) for c in numeric}
        mean_row = ["mean"] + [_fmt(float(np.mean(data[c]))) for c in numeric] + [""]
        std_row = ["stddev"] + [_fmt(float(np.std(data[c]))) for c in numeric] + [""]
        w.writerow(mean_row)
        w.writerow(std_row)


def run_batch(scn: ScenarioFile, trials: int, base_seed: int, out_dir, workers: int = None,
              write_logs: bool = True):
    """Run `trials` seeded trials and write stats.csv plus per-trial logs.

    Returns the list of TrialOutcome, ordered by seed.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    traj_dir = out_dir / "trajectories"
    cache_dir = out_dir / ".grid_cache"
    seeds = [base_seed + i for i in range(trials)]
    jobs = [
        (s, str(traj_dir / f"trial_{s}.jsonl") if write_logs else None)
        for s in seeds
    ]

    if workers is None:
        workers = min(os.cpu_count() or 1, trials)
    # Warm the grid cache once so workers just load it.
    task = scn.task()
    grid = build_grid_cached(scn.scene(), task.targets, cache_dir)

    if workers <= 1 or trials == 1:
        _WORKER_STATE["scn"] = scn
        _WORKER_STATE["grid"] = grid
        _WORKER_STATE["task"] = task
        outcomes = [_run_trial_worker(j) for j in jobs]
    else:
        ctx = get_context("fork")
        with ctx.Pool(workers, initializer=_init_worker, initargs=(scn.raw, cache_dir)) as pool:
            outcomes = pool.map(_run_trial_worker, jobs)

    outcomes.sort(key=lambda o: o.seed)
    write_stats_csv(out_dir / "stats.csv", [o.row for o in outcomes])
    return outcomes
