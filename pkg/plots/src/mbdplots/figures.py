"""Figure rendering for mbdopt experiment artifacts.

Read-only consumer of the primary package's CSV/JSON schemas:

* trace.csv      -- step, sched_value, proposal_std, ess, best_cost, y_mean,
                    y_std, y0, y1 (one row per diffusion state)
* episode.csv    -- step, x, y, theta, v, a, w, reward, d_lat, T_chosen,
                    sigma_chosen, plan_time_ms
* objective_grid.csv -- x, cost (1D) or x0, x1, cost, feasible (2D)
* course.json    -- reference, obstacle {cx, cy, hx, hy}, start, goal, v_ref
* *_curve.csv    -- iteration, mean_reward, mean_T, mean_sigma, ...

No statistics are computed beyond rendering and axis scaling. Each plot
function returns a metadata dict describing what was drawn.
"""

from __future__ import annotations

import csv
import glob as globlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np


class PlotDataError(RuntimeError):
    """Missing or ill-formed input; the message names the file (and row)."""


FIGURE_KINDS = ("density_1d", "density_2d", "trajectory_map", "learning_curve")


@dataclass
class FigureSpec:
    kind: str
    input_glob: str
    output_path: str
    grid_path: str | None = None     # objective grid / course override
    dpi: int = 150
    max_panels: int = 6
    cmap: str = "viridis"

    def __post_init__(self):
        if self.kind not in FIGURE_KINDS:
            raise ValueError(f"unknown figure kind {self.kind!r}; choose from {FIGURE_KINDS}")


def render(spec: FigureSpec) -> dict:
    if spec.kind == "density_1d":
        return plot_density_evolution(spec, dims=1)
    if spec.kind == "density_2d":
        return plot_density_evolution(spec, dims=2)
    if spec.kind == "trajectory_map":
        return plot_trajectory_map(spec)
    return plot_learning_curve(spec)


def read_rows(path, required: tuple[str, ...]) -> list[dict]:
    """CSV rows as float dicts; diagnostics name the file and row."""
    path = Path(path)
    if not path.exists():
        raise PlotDataError(f"{path}: file does not exist")
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        header = reader.fieldnames or []
        missing = [c for c in required if c not in header]
        if missing:
            raise PlotDataError(f"{path}: missing columns {missing}")
        rows = []
        for i, raw in enumerate(reader, start=2):
            parsed = {}
            for key, val in raw.items():
                if key is None:
                    raise PlotDataError(f"{path}: row {i}: too many fields")
                try:
                    parsed[key] = float(val) if val not in ("", None) else math.nan
                except ValueError as e:
                    raise PlotDataError(f"{path}: row {i}: column {key}: {e}") from None
            rows.append(parsed)
    if not rows:
        raise PlotDataError(f"{path}: no data rows")
    return rows


def _expand(pattern: str) -> list[str]:
    files = sorted(globlib.glob(pattern))
    if not files:
        raise PlotDataError(f"{pattern}: no files match")
    return files


def _find_sibling(first_input: str, name: str, override: str | None):
    if override:
        return Path(override)
    for parent in Path(first_input).resolve().parents:
        candidate = parent / name
        if candidate.exists():
            return candidate
    return None


def plot_density_evolution(spec: FigureSpec, dims: int | None = None) -> dict:
    """One panel per diffusion step: candidate/output distribution across
    seeds, with the objective (and constraint boundary, when present)
    overlaid from objective_grid.csv."""
    files = _expand(spec.input_glob)
    traces = [read_rows(f, ("step", "y0", "y1")) for f in files]
    if dims is None:
        dims = 1 if math.isnan(traces[0][0]["y1"]) else 2
    steps = sorted({int(r["step"]) for r in traces[0]}, reverse=True)
    if len(steps) > spec.max_panels:
        keep = np.unique(np.linspace(0, len(steps) - 1, spec.max_panels).astype(int))
        steps = [steps[i] for i in keep]

    grid_file = _find_sibling(files[0], "objective_grid.csv", spec.grid_path)
    grid = None
    if grid_file is not None:
        cols = ("x", "cost") if dims == 1 else ("x0", "x1", "cost", "feasible")
        grid = read_rows(grid_file, cols)

    fig, axes = plt.subplots(1, len(steps), figsize=(3.2 * len(steps), 3.2),
                             squeeze=False, sharey=True)
    constraint_drawn = False
    for ax, step in zip(axes[0], steps):
        pts = np.array([[r["y0"], r["y1"]] for tr in traces for r in tr
                        if int(r["step"]) == step])
        if pts.size == 0:
            raise PlotDataError(f"{files[0]}: no rows for step {step}")
        if dims == 1:
            ax.hist(pts[:, 0], bins=30, color="tab:blue", alpha=0.75, density=True)
            if grid is not None:
                gx = np.array([r["x"] for r in grid])
                gc = np.array([r["cost"] for r in grid])
                twin = ax.twinx()
                twin.plot(gx, gc, color="black", lw=1.0)
                twin.set_yticks([])
            ax.set_xlim(-5, 5)
        else:
            if grid is not None:
                constraint_drawn = _draw_grid_2d(ax, grid, spec.cmap)
            ax.scatter(pts[:, 0], pts[:, 1], s=8, color="tab:blue", alpha=0.8)
            ax.set_xlim(-4, 4)
            ax.set_ylim(-4, 4)
        ax.set_title(f"step {step}")
    fig.tight_layout()
    fig.savefig(spec.output_path, dpi=spec.dpi)
    plt.close(fig)
    return {"output": spec.output_path, "panels": len(steps), "dims": dims,
            "files": len(files), "constraint_drawn": constraint_drawn}


def _draw_grid_2d(ax, grid, cmap) -> bool:
    x0 = np.array([r["x0"] for r in grid])
    x1 = np.array([r["x1"] for r in grid])
    cost = np.array([r["cost"] for r in grid])
    xs = np.unique(x0)
    ys = np.unique(x1)
    shape = (xs.size, ys.size)
    if x0.size != shape[0] * shape[1]:
        raise PlotDataError("objective_grid.csv: grid is not rectangular")
    ax.contourf(xs, ys, cost.reshape(shape).T, levels=20, cmap=cmap, alpha=0.55)
    feas = np.array([r["feasible"] for r in grid])
    if np.ptp(feas) > 0:
        ax.contour(xs, ys, feas.reshape(shape).T, levels=[0.5], colors="white",
                   linewidths=1.6)
        return True
    return False


def plot_trajectory_map(spec: FigureSpec) -> dict:
    """Driven trajectory over the course: reference path (black), obstacle
    rectangle (gray), start (red) and goal (green) markers. Left panel colored
    by chosen step count, right panel by chosen noise cap; color ranges equal
    the CSV min/max."""
    files = _expand(spec.input_glob)
    rows = read_rows(files[0], ("step", "x", "y", "T_chosen", "sigma_chosen"))
    course_file = _find_sibling(files[0], "course.json", spec.grid_path)
    if course_file is None:
        raise PlotDataError(f"{files[0]}: no course.json found beside the episode log")
    course = json.loads(Path(course_file).read_text())
    waypoints = None
    wp_file = course_file.parent / "waypoints.txt"
    if wp_file.exists():
        waypoints = np.loadtxt(wp_file)

    xs = np.array([r["x"] for r in rows])
    ys = np.array([r["y"] for r in rows])
    ranges = {}
    fig, axes = plt.subplots(1, 2, figsize=(13, 5.5), sharey=True)
    for ax, column, label in ((axes[0], "T_chosen", "diffusion steps T"),
                              (axes[1], "sigma_chosen", "noise cap sigma_max")):
        vals = np.array([r[column] for r in rows])
        lo, hi = float(np.nanmin(vals)), float(np.nanmax(vals))
        ranges[column] = (lo, hi)
        if waypoints is not None:
            ax.plot(waypoints[:, 0], waypoints[:, 1], color="black", lw=1.2, zorder=1)
        ob = course["obstacle"]
        ax.add_patch(plt.Rectangle((ob["cx"] - ob["hx"], ob["cy"] - ob["hy"]),
                                   2 * ob["hx"], 2 * ob["hy"], color="gray", zorder=2))
        sc = ax.scatter(xs, ys, c=vals, cmap=spec.cmap, s=12, zorder=3,
                        vmin=lo, vmax=hi if hi > lo else lo + 1e-9)
        ax.plot(*course["start"], marker="o", color="red", ms=9, zorder=4)
        ax.plot(*course["goal"], marker="o", color="green", ms=9, zorder=4)
        fig.colorbar(sc, ax=ax, label=label)
        ax.set_aspect("equal")
        ax.set_title(label)
    fig.tight_layout()
    fig.savefig(spec.output_path, dpi=spec.dpi)
    plt.close(fig)
    return {"output": spec.output_path, "steps": len(rows),
            "t_range": ranges["T_chosen"], "sigma_range": ranges["sigma_chosen"],
            "obstacle_drawn": True}


def plot_learning_curve(spec: FigureSpec) -> dict:
    files = _expand(spec.input_glob)
    rows = read_rows(files[0], ("iteration", "mean_reward", "mean_T", "mean_sigma"))
    it = [r["iteration"] for r in rows]
    fig, axes = plt.subplots(1, 3, figsize=(12, 3.4))
    for ax, column in zip(axes, ("mean_reward", "mean_T", "mean_sigma")):
        ax.plot(it, [r[column] for r in rows], marker="o", ms=3)
        ax.set_xlabel("iteration")
        ax.set_ylabel(column)
    fig.tight_layout()
    fig.savefig(spec.output_path, dpi=spec.dpi)
    plt.close(fig)
    return {"output": spec.output_path, "iterations": len(rows)}
