"""Noise schedules for model-based diffusion.

Two kinds are supported:

* VP (variance preserving): beta_i interpolated linearly between beta0 and
  beta1, alpha_i = 1 - beta_i, alpha_bar_i = prod_k<=i alpha_k. The forward
  coefficients (sqrt(ab), sqrt(1-ab)) satisfy c0^2 + c1^2 = 1 at every step.
* LP (linear probability path): x_t = (1-t) x0 + t eps on a uniform t-grid,
  truncated at t_max = sigma_max / (1 + sigma_max) so the Gaussian proposal
  std t/(1-t) never exceeds sigma_max.

Schedules are immutable after construction and cheap enough to precompute.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ParameterError


@dataclass(frozen=True)
class VpSchedule:
    beta0: float
    beta1: float
    steps: int
    betas: np.ndarray
    alphas: np.ndarray
    alpha_bars: np.ndarray

    kind: str = "vp"


@dataclass(frozen=True)
class LpSchedule:
    sigma_max: float
    steps: int
    t_max: float
    t_grid: np.ndarray

    kind: str = "lp"


Schedule = VpSchedule | LpSchedule


def build_vp_schedule(beta0: float, beta1: float, steps: int) -> VpSchedule:
    """Linear-beta VP schedule with `steps` grid points."""
    if not (0.0 < beta0 <= beta1 < 1.0):
        raise ParameterError(f"need 0 < beta0 <= beta1 < 1, got ({beta0}, {beta1})")
    if steps < 1:
        raise ParameterError(f"steps must be >= 1, got {steps}")
    betas = np.linspace(beta0, beta1, steps)
    alphas = 1.0 - betas
    alpha_bars = np.cumprod(alphas)
    for a in (betas, alphas, alpha_bars):
        a.setflags(write=False)
    return VpSchedule(beta0, beta1, steps, betas, alphas, alpha_bars)


def build_lp_schedule(sigma_max: float, steps: int) -> LpSchedule:
    """Uniform t-grid on [0, t_max] with t_max = sigma_max / (1 + sigma_max)."""
    if sigma_max <= 0.0:
        raise ParameterError(f"sigma_max must be > 0, got {sigma_max}")
    if steps < 2:
        raise ParameterError(f"steps must be >= 2, got {steps}")
    t_max = sigma_max / (1.0 + sigma_max)
    t_grid = np.linspace(0.0, 1.0, steps) * t_max
    t_grid.setflags(write=False)
    return LpSchedule(float(sigma_max), steps, t_max, t_grid)


def vp_coefficients(sched: VpSchedule, i: int) -> tuple[float, float]:
    """Forward-process coefficients (sqrt(ab_i), sqrt(1 - ab_i))."""
    ab = sched.alpha_bars[_check_index(sched, i)]
    return float(np.sqrt(ab)), float(np.sqrt(1.0 - ab))


def proposal_std(sched: Schedule, i: int) -> float:
    """Std of the Gaussian proposal at step i.

    VP: sqrt((1-ab_i)/ab_i). LP: t_i/(1-t_i), evaluated as
    r*sigma_max / (1 + (1-r)*sigma_max) with r = i/(steps-1) so the endpoints
    are exactly 0 and sigma_max in floating point.
    """
    i = _check_index(sched, i)
    if isinstance(sched, VpSchedule):
        ab = sched.alpha_bars[i]
        return float(np.sqrt((1.0 - ab) / ab))
    r = i / (sched.steps - 1)
    return r * sched.sigma_max / (1.0 + (1.0 - r) * sched.sigma_max)


def proposal_stds(sched: Schedule) -> np.ndarray:
    """Proposal std at every step, in step order."""
    return np.array([proposal_std(sched, i) for i in range(sched.steps)])


def schedule_value(sched: Schedule, i: int) -> float:
    """The scalar that parameterizes step i: alpha_bar_i (VP) or t_i (LP)."""
    i = _check_index(sched, i)
    if isinstance(sched, VpSchedule):
        return float(sched.alpha_bars[i])
    return float(sched.t_grid[i])


def serialize_schedule(sched: Schedule) -> str:
    """Flat key-value text block for experiment logs."""
    lines = [f"kind={sched.kind}", f"steps={sched.steps}"]
    if isinstance(sched, VpSchedule):
        lines += [
            f"beta0={sched.beta0!r}",
            f"beta1={sched.beta1!r}",
            "betas=" + ",".join(repr(float(b)) for b in sched.betas),
            "alpha_bars=" + ",".join(repr(float(a)) for a in sched.alpha_bars),
        ]
    else:
        lines += [
            f"sigma_max={sched.sigma_max!r}",
            f"t_max={sched.t_max!r}",
            "t_grid=" + ",".join(repr(float(t)) for t in sched.t_grid),
        ]
    lines.append("proposal_stds=" + ",".join(repr(float(s)) for s in proposal_stds(sched)))
    return "\n".join(lines)


def _check_index(sched: Schedule, i: int) -> int:
    if not 0 <= i < sched.steps:
        raise IndexError(f"step index {i} out of range for {sched.steps}-step schedule")
    return i
