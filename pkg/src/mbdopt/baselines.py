"""CEM and MPPI baselines.

Parity protocol: baseline iterations = diffusion step count, with the same
horizon and per-iteration sample budget as the diffusion planners. Both rank
candidates by the target module's penalized cost, so constraint handling is
identical across methods.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from .sampler import TraceRow
from .target import TargetDensity, normalize_weights, penalized_costs


@dataclass
class CemConfig:
    iterations: int = 10
    n_samples: int = 100
    elite_frac: float = 0.1
    init_std: float = 1.0
    min_std: float = 0.01

    def __post_init__(self):
        if not 0.0 < self.elite_frac <= 1.0:
            raise ValueError(f"elite_frac must be in (0, 1], got {self.elite_frac}")
        if self.init_std <= 0.0 or self.min_std <= 0.0:
            raise ValueError("stds must be > 0")


@dataclass
class MppiConfig:
    iterations: int = 10
    n_samples: int = 100
    temperature: float = 0.1
    noise_std: float = 0.5

    def __post_init__(self):
        if self.temperature <= 0.0:
            raise ValueError(f"temperature must be > 0, got {self.temperature}")


def run_cem(target: TargetDensity, cfg: CemConfig, rng: np.random.Generator,
            record_trace: bool = False):
    """Cross-entropy method with elite carry-over.

    The previous elite set joins the selection pool, so the elite mean cost
    is non-increasing across iterations on deterministic objectives. Returns
    (mean, trace).
    """
    mean = np.zeros(target.dim)
    std = np.full(target.dim, cfg.init_std)
    n_elite = max(1, round(cfg.elite_frac * cfg.n_samples))
    elites = np.empty((0, target.dim))
    elite_costs = np.empty(0)
    trace: list[TraceRow] | None = [] if record_trace else None

    for it in range(cfg.iterations):
        samples = mean + std * rng.standard_normal((cfg.n_samples, target.dim))
        pool = np.vstack([samples, elites])
        costs = np.concatenate([penalized_costs(target, samples), elite_costs])
        order = np.argsort(costs, kind="stable")[:n_elite]
        elites, elite_costs = pool[order], costs[order]
        mean = elites.mean(axis=0)
        std = np.maximum(elites.std(axis=0), cfg.min_std)
        if trace is not None:
            trace.append(_baseline_row(it, float(std.mean()), n_elite, elite_costs[0], mean))
    return mean, trace


def run_mppi(target: TargetDensity, cfg: MppiConfig, rng: np.random.Generator,
             record_trace: bool = False):
    """Path-integral style soft-weighted update of the proposal mean."""
    mean = np.zeros(target.dim)
    trace: list[TraceRow] | None = [] if record_trace else None
    for it in range(cfg.iterations):
        candidates = mean + cfg.noise_std * rng.standard_normal((cfg.n_samples, target.dim))
        costs = penalized_costs(target, candidates)
        w = mppi_weights(costs, cfg.temperature)
        mean = w @ candidates
        if trace is not None:
            trace.append(_baseline_row(it, cfg.noise_std, 1.0 / np.sum(w**2),
                                       float(costs.min()), mean))
    return mean, trace


def mppi_weights(costs: np.ndarray, temperature: float) -> np.ndarray:
    """Softmax weights over -cost/temperature (shared normalization code)."""
    return normalize_weights(-np.asarray(costs) / temperature)


class CemPlanner:
    """Receding-horizon CEM at parity budgets."""

    name = "cem"

    def __init__(self, target_builder, cfg: CemConfig, n_controls: int = 2):
        self.target_builder = target_builder
        self.cfg = cfg
        self.n_controls = n_controls

    def plan(self, env_state, rng: np.random.Generator):
        t0 = time.perf_counter()
        y, _ = run_cem(self.target_builder(env_state), self.cfg, rng)
        info = {"T": self.cfg.iterations, "sigma": self.cfg.init_std,
                "plan_time_ms": (time.perf_counter() - t0) * 1e3}
        return y[: self.n_controls], info

    def reset(self):
        pass


class MppiPlanner:
    """Receding-horizon MPPI at parity budgets."""

    name = "mppi"

    def __init__(self, target_builder, cfg: MppiConfig, n_controls: int = 2):
        self.target_builder = target_builder
        self.cfg = cfg
        self.n_controls = n_controls

    def plan(self, env_state, rng: np.random.Generator):
        t0 = time.perf_counter()
        y, _ = run_mppi(self.target_builder(env_state), self.cfg, rng)
        info = {"T": self.cfg.iterations, "sigma": self.cfg.noise_std,
                "plan_time_ms": (time.perf_counter() - t0) * 1e3}
        return y[: self.n_controls], info

    def reset(self):
        pass


def _baseline_row(it, std, ess, best_cost, mean) -> TraceRow:
    return TraceRow(
        step=it, sched_value=math.nan, proposal_std=float(std), ess=float(ess),
        best_cost=float(best_cost), y_mean=float(mean.mean()), y_std=float(mean.std()),
        y0=float(mean[0]), y1=float(mean[1]) if mean.size > 1 else math.nan,
    )
