"""Plot-data extraction from trajectory logs: CSV series plus rendered figures.

Reads a JSON-lines trajectory log and emits
  - planning_times.csv   histogram bins of per-plan durations
  - rho_vs_step.csv      task error by step
  - band_length.csv      band length by step with the L_max reference column
and matching PNG figures next to them.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np


class LogFormatError(ValueError):
    """Malformed trajectory log line; message carries the line number."""


def read_log(path):
    """Parse a trajectory log into (meta, plan events, step records)."""
    meta = None
    plans = []
    steps = []
    with Path(path).open() as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise LogFormatError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from exc
            if not isinstance(rec, dict):
                raise LogFormatError(f"{path}:{lineno}: expected an object")
            if rec.get("event") == "meta":
                meta = rec
            elif rec.get("event") == "plan":
                plans.append(rec)
            else:
                if "step" not in rec or "rho" not in rec:
                    raise LogFormatError(f"{path}:{lineno}: step record missing 'step'/'rho'")
                steps.append(rec)
    if meta is None:
        raise LogFormatError(f"{path}:1: missing meta record")
    return meta, plans, steps


def emit_plot_data(log_path, out_dir, bins: int = 10):
    """Write the three plot CSVs and PNG figures; returns the file paths."""
    meta, plans, steps = read_log(log_path)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []

    durations = np.array([p["duration"] for p in plans], dtype=float)
    hist_csv = out_dir / "planning_times.csv"
    with hist_csv.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["bin_lo", "bin_hi", "count"])
        if len(durations):
            counts, edges = np.histogram(durations, bins=bins)
            for c, lo, hi in zip(counts, edges[:-1], edges[1:]):
                w.writerow([repr(float(lo)), repr(float(hi)), int(c)])
    written.append(hist_csv)

    rho_csv = out_dir / "rho_vs_step.csv"
    with rho_csv.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "rho"])
        for rec in steps:
            w.writerow([rec["step"], repr(float(rec["rho"]))])
    written.append(rho_csv)

    band_csv = out_dir / "band_length.csv"
    l_max = float(meta["l_max"])
    with band_csv.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "band_length", "l_max"])
        for rec in steps:
            w.writerow([rec["step"], repr(float(rec["band_len"])), repr(l_max)])
    written.append(band_csv)

    written.extend(_render_figures(out_dir, durations, steps, l_max))
    return written


def _render_figures(out_dir, durations, steps, l_max):
    out = []
    step_idx = [rec["step"] for rec in steps]
    rho = [rec["rho"] for rec in steps]
    blen = [rec["band_len"] for rec in steps]
    modes = [rec.get("mode", "local") for rec in steps]

    fig, ax = plt.subplots(figsize=(5, 3.2))
    if len(durations):
        ax.hist(durations, bins=min(10, max(len(durations), 1)), color="#4878d0", edgecolor="black")
    ax.set_xlabel("plan + smooth time (s)")
    ax.set_ylabel("count")
    ax.set_title("Planning time histogram")
    fig.tight_layout()
    p = out_dir / "planning_times.png"
    fig.savefig(p, dpi=130)
    plt.close(fig)
    out.append(p)

    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.plot(step_idx, rho, color="#d65f5f", lw=1.2)
    in_path = [s for s, m in zip(step_idx, modes) if m == "path"]
    if in_path:
        ax.scatter(in_path, [r for r, m in zip(rho, modes) if m == "path"], s=4, color="#4878d0",
                   label="path execution", zorder=3)
        ax.legend(loc="upper right", fontsize=8)
    ax.set_xlabel("step")
    ax.set_ylabel(r"task error $\rho$")
    ax.set_title("Task error vs step")
    fig.tight_layout()
    p = out_dir / "rho_vs_step.png"
    fig.savefig(p, dpi=130)
    plt.close(fig)
    out.append(p)

    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.plot(step_idx, blen, color="#6acc64", lw=1.2, label="band length")
    ax.axhline(l_max, color="black", ls="--", lw=1.0, label=r"$L_{max}$")
    ax.set_xlabel("step")
    ax.set_ylabel("length (m)")
    ax.set_title("Band length vs step")
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    p = out_dir / "band_length.png"
    fig.savefig(p, dpi=130)
    plt.close(fig)
    out.append(p)
    return out
