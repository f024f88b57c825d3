"""Model-based diffusion core.

Backward denoising with a Monte-Carlo score estimate: at step i, draw clean
candidates from the Gaussian proposal implied by the forward kernel, weight
them by the target density, and move to step i-1 with

    VP:  Y_{i-1} = sqrt(ab_{i-1}) * Ybar
    LP:  Y_{i-1} = (1 - t_{i-1}) * Ybar

where Ybar is the importance-weighted average of the candidates. A schedule
with `steps` grid points has states at indices steps-1 .. 0 and performs
steps-1 denoising transitions; index 0 is the clean endpoint.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateBatchError
from .schedules import LpSchedule, Schedule, VpSchedule, proposal_std, schedule_value
from .target import (
    BASE_PENALTY,
    TargetDensity,
    evaluate_batch,
    log_weights_from_eval,
    normalize_weights,
)


@dataclass
class SamplerConfig:
    n_samples: int = 100
    rng_seed: int = 0
    record_trace: bool = False

    def __post_init__(self):
        if self.n_samples < 2:
            raise ValueError(f"n_samples must be >= 2, got {self.n_samples}")


@dataclass
class DiffusionState:
    y: np.ndarray
    step: int
    schedule_kind: str


@dataclass
class TraceRow:
    """One row per diffusion state; batch stats refer to the transition that
    produced the state (nan on the initial noise row)."""

    step: int
    sched_value: float
    proposal_std: float
    ess: float = math.nan
    best_cost: float = math.nan
    y_mean: float = math.nan
    y_std: float = math.nan
    y0: float = math.nan
    y1: float = math.nan


TRACE_FIELDS = ["step", "sched_value", "proposal_std", "ess", "best_cost", "y_mean", "y_std", "y0", "y1"]


def sample_proposals(
    state: DiffusionState, sched: Schedule, cfg: SamplerConfig, rng: np.random.Generator
) -> np.ndarray:
    """Draw n_samples clean candidates from the step-i Gaussian proposal.

    VP: N(y / sqrt(ab_i), (1-ab_i)/ab_i * I); LP: N(y / (1-t_i), (t_i/(1-t_i))^2 * I).
    Undefined at the clean endpoint (step 0).
    """
    if state.step <= 0:
        raise ValueError("proposals are undefined at step 0 (clean endpoint)")
    mean, std = _proposal_params(state, sched)
    eps = rng.standard_normal((cfg.n_samples, state.y.size))
    return mean + std * eps


def mc_score(
    state: DiffusionState, sched: Schedule, target: TargetDensity, proposals: np.ndarray
) -> np.ndarray:
    """Monte-Carlo estimate of the score of the noised marginal at Y_i.

    VP: -Y/(1-ab) + sqrt(ab)/(1-ab) * Ybar; LP: -Y/t^2 + (1-t)/t^2 * Ybar.
    """
    ybar, _, _ = weighted_average(target, proposals)
    i = state.step
    if isinstance(sched, VpSchedule):
        ab = sched.alpha_bars[i]
        return -state.y / (1.0 - ab) + np.sqrt(ab) / (1.0 - ab) * ybar
    t = sched.t_grid[i]
    return -state.y / t**2 + (1.0 - t) / t**2 * ybar


def weighted_average(target: TargetDensity, proposals: np.ndarray):
    """Importance-weighted average of clean candidates.

    Returns (ybar, weights, logw). Falls back to uniform weights on a fully
    degenerate batch. The reduction runs in candidate index order.
    """
    logw = log_weights_from_eval(target, *evaluate_batch(target, proposals))
    try:
        w = normalize_weights(logw)
    except DegenerateBatchError:
        w = np.full(proposals.shape[0], 1.0 / proposals.shape[0])
    return w @ proposals, w, logw


def denoise_step(
    state: DiffusionState, sched: Schedule, target: TargetDensity,
    cfg: SamplerConfig, rng: np.random.Generator,
) -> DiffusionState:
    """One backward transition i -> i-1."""
    new_state, _ = _denoise(state, sched, target, cfg, rng)
    return new_state


def run_mbd(
    target: TargetDensity,
    sched: Schedule,
    cfg: SamplerConfig,
    rng: np.random.Generator | None = None,
    y_init: np.ndarray | None = None,
):
    """Full reverse pass from the top of the schedule down to Y_0.

    The start matches each schedule's own prior: the standard-normal diffusion
    prior for VP, and the truncated-path prior mean (zero) for LP so the first
    candidate sweep is exactly N(0, sigma_max^2 I) -- the bounded exploration
    range the noise cap is chosen for. Returns (y0, trace) with trace=None
    unless cfg.record_trace. One child RNG stream per transition, so
    candidate-level parallelism cannot change the sampled values. y_init
    overrides the start (used for warm starting).
    """
    if rng is None:
        rng = np.random.default_rng(cfg.rng_seed)
    if y_init is not None:
        y = np.asarray(y_init, float).copy()
    elif isinstance(sched, LpSchedule):
        y = np.zeros(target.dim)
    else:
        y = rng.standard_normal(target.dim)
    state = DiffusionState(y=y, step=sched.steps - 1, schedule_kind=sched.kind)
    step_rngs = rng.spawn(sched.steps - 1)

    trace: list[TraceRow] | None = None
    if cfg.record_trace:
        trace = [_trace_row(state, sched)]
    while state.step > 0:
        step_rng = step_rngs[sched.steps - 1 - state.step]
        state, info = _denoise(state, sched, target, cfg, step_rng)
        if trace is not None:
            trace.append(_trace_row(state, sched, info))
    return state.y, trace


@dataclass
class PlannerConfig:
    schedule: Schedule
    n_samples: int = 100
    n_controls: int = 2
    warm_start: bool = False


def plan_receding_horizon(
    env_state, target_builder, planner_cfg: PlannerConfig, rng: np.random.Generator | None = None
) -> np.ndarray:
    """Optimize an H-step control sequence for the current state and return
    the first control (fresh diffusion, no warm start)."""
    target = target_builder(env_state)
    cfg = SamplerConfig(n_samples=planner_cfg.n_samples)
    y0, _ = run_mbd(target, planner_cfg.schedule, cfg, rng=rng)
    return y0[: planner_cfg.n_controls]


class MbdPlanner:
    """Receding-horizon wrapper around run_mbd for closed-loop episodes.

    With warm_start, the previous solution is shifted one step, held at the
    end, and forward-noised to the top of the schedule instead of starting
    from pure N(0, I).
    """

    def __init__(self, target_builder, schedule: Schedule, n_samples: int = 100,
                 n_controls: int = 2, warm_start: bool = False):
        self.target_builder = target_builder
        self.schedule = schedule
        self.n_samples = n_samples
        self.n_controls = n_controls
        self.warm_start = warm_start
        self.name = schedule.kind
        self._prev: np.ndarray | None = None

    def plan(self, env_state, rng: np.random.Generator):
        target = self.target_builder(env_state)
        cfg = SamplerConfig(n_samples=self.n_samples)
        y_init = None
        if self.warm_start and self._prev is not None:
            shifted = np.roll(self._prev, -self.n_controls)
            shifted[-self.n_controls:] = self._prev[-self.n_controls:]
            y_init = _forward_noise(shifted, self.schedule, rng)
        t0 = time.perf_counter()
        y0, _ = run_mbd(target, self.schedule, cfg, rng=rng, y_init=y_init)
        plan_ms = (time.perf_counter() - t0) * 1e3
        self._prev = y0
        info = {
            "T": self.schedule.steps,
            "sigma": proposal_std(self.schedule, self.schedule.steps - 1),
            "plan_time_ms": plan_ms,
        }
        return y0[: self.n_controls], info

    def reset(self):
        self._prev = None


def write_trace_csv(rows: list[TraceRow], path) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(TRACE_FIELDS)
        for r in rows:
            writer.writerow([getattr(r, k) for k in TRACE_FIELDS])


def read_trace_csv(path) -> list[TraceRow]:
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        return [TraceRow(step=int(d["step"]),
                         **{k: float(d[k]) for k in TRACE_FIELDS[1:]}) for d in reader]


def _proposal_params(state: DiffusionState, sched: Schedule):
    i = state.step
    if isinstance(sched, VpSchedule):
        ab = sched.alpha_bars[i]
        return state.y / np.sqrt(ab), np.sqrt((1.0 - ab) / ab)
    t = sched.t_grid[i]
    return state.y / (1.0 - t), proposal_std(sched, i)


def _denoise(state, sched, target, cfg, rng):
    proposals = sample_proposals(state, sched, cfg, rng)
    costs, violations, feasible = evaluate_batch(target, proposals)
    logw = log_weights_from_eval(target, costs, violations, feasible)
    try:
        w = normalize_weights(logw)
    except DegenerateBatchError:
        w = np.full(proposals.shape[0], 1.0 / proposals.shape[0])
    if isinstance(sched, VpSchedule):
        scale = np.sqrt(sched.alpha_bars[state.step - 1])
    else:
        scale = 1.0 - sched.t_grid[state.step - 1]
    new_state = DiffusionState(y=scale * (w @ proposals), step=state.step - 1,
                               schedule_kind=state.schedule_kind)
    info = {
        "ess": float(1.0 / np.sum(w**2)),
        "best_cost": float(np.min(costs + BASE_PENALTY * target.penalty_scale * violations)),
    }
    return new_state, info


def _trace_row(state: DiffusionState, sched: Schedule, info: dict | None = None) -> TraceRow:
    y = state.y
    return TraceRow(
        step=state.step,
        sched_value=schedule_value(sched, state.step),
        proposal_std=proposal_std(sched, state.step),
        ess=info["ess"] if info else math.nan,
        best_cost=info["best_cost"] if info else math.nan,
        y_mean=float(y.mean()),
        y_std=float(y.std()),
        y0=float(y[0]),
        y1=float(y[1]) if y.size > 1 else math.nan,
    )


def _forward_noise(y0: np.ndarray, sched: Schedule, rng: np.random.Generator) -> np.ndarray:
    i = sched.steps - 1
    if isinstance(sched, VpSchedule):
        ab = sched.alpha_bars[i]
        c0, c1 = np.sqrt(ab), np.sqrt(1.0 - ab)
    else:
        t = sched.t_grid[i]
        c0, c1 = 1.0 - t, t
    return c0 * y0 + c1 * rng.standard_normal(y0.size)
