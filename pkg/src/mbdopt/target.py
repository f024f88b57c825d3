"""Unnormalized target density over decision vectors.

The sampler draws clean candidates Y and reweights them by
w(Y) = exp(-J(Y)/lambda) * [g(Y) <= 0]. Dynamics enter through an optional
rollout callback (shooting): candidates are control sequences, rolled out to
state trajectories before cost/constraint evaluation, so dynamical
feasibility holds by construction.

A decision vector is a plain 1-D float array. Batches are stacked into
(n, dim) arrays, one candidate per row.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import DegenerateBatchError, EvaluationError

DecisionVector = np.ndarray

# Soft-penalty weight for violated constraints is BASE_PENALTY * penalty_scale
# in cost units (so the log-weight penalty is BASE_PENALTY * scale / lambda).
BASE_PENALTY = 10.0


@dataclass
class TargetDensity:
    """Cost/constraint/rollout callbacks plus the weighting temperature.

    Callback signatures:
      * rollout is None:  cost(y) -> float, constraints(y) -> (m,) array
      * rollout set:      states = rollout(y); cost(y, states), constraints(y, states)

    With vectorized=True the callbacks must also accept a stacked (n, dim)
    batch and return per-candidate results; otherwise candidates are
    evaluated one by one. Feasible means every constraint entry <= 0.
    """

    dim: int
    cost: Callable
    constraints: Callable | None = None
    temperature: float = 0.1
    rollout: Callable | None = None
    penalty_scale: float = 1.0
    vectorized: bool = False

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError(f"dim must be >= 1, got {self.dim}")
        if self.temperature <= 0.0:
            raise ValueError(f"temperature must be > 0, got {self.temperature}")


def log_weight(target: TargetDensity, y: DecisionVector) -> float:
    """log w(y): -J/lambda if feasible, else -J/lambda - rho * sum(max(0, g)).

    The soft-penalty slope is rho = BASE_PENALTY * penalty_scale / lambda, so
    an infeasible candidate never outranks a feasible one of equal cost.
    """
    y = np.asarray(y, dtype=float)
    cost, violation = _evaluate_one(target, y)
    lw = -cost / target.temperature
    if violation > 0.0:
        lw -= BASE_PENALTY * target.penalty_scale / target.temperature * violation
    return float(lw)


def penalized_costs(target: TargetDensity, candidates: np.ndarray) -> np.ndarray:
    """J + BASE_PENALTY * penalty_scale * sum(max(0, g)) per candidate.

    Shared by CEM/MPPI so all methods rank infeasible candidates identically.
    """
    costs, violations, _ = evaluate_batch(target, np.asarray(candidates, dtype=float))
    return costs + BASE_PENALTY * target.penalty_scale * violations


def batch_log_weights(target: TargetDensity, candidates: np.ndarray) -> np.ndarray:
    """Log-weights for a stacked (n, dim) candidate batch.

    Constraint handling: hard indicator (-inf) for infeasible candidates when
    the batch contains at least one feasible candidate; soft penalty for the
    whole batch otherwise, so an all-infeasible batch still yields a descent
    direction toward feasibility.
    """
    candidates = np.asarray(candidates, dtype=float)
    return log_weights_from_eval(target, *evaluate_batch(target, candidates))


def log_weights_from_eval(target, costs, violations, feasible) -> np.ndarray:
    """Log-weights from a precomputed evaluate_batch result."""
    logw = -costs / target.temperature
    if feasible.all():
        return logw
    if feasible.any():
        return np.where(feasible, logw, -np.inf)
    return logw - BASE_PENALTY * target.penalty_scale / target.temperature * violations


def normalize_weights(logw: np.ndarray) -> np.ndarray:
    """Softmax with max-subtraction; requires at least one finite entry."""
    logw = np.asarray(logw, dtype=float)
    if logw.size == 0 or not np.any(np.isfinite(logw)):
        raise DegenerateBatchError("no finite log-weights in batch")
    shifted = logw - np.max(logw[np.isfinite(logw)])
    w = np.exp(shifted)
    return w / w.sum()


def make_gaussian_1d(mean: float, std: float, temperature: float = 0.1) -> TargetDensity:
    """Quadratic objective J(y) = (y - mean)^2 / (2 std^2)."""
    if std <= 0.0:
        raise ValueError(f"std must be > 0, got {std}")

    def cost(y):
        return np.sum((np.asarray(y) - mean) ** 2, axis=-1) / (2.0 * std**2)

    return TargetDensity(dim=1, cost=cost, temperature=temperature, vectorized=True)


def make_mixture_1d(means, stds, weights, temperature: float = 0.1) -> TargetDensity:
    """Objective J(y) = -log sum_k w_k N(y; mu_k, sigma_k^2)."""
    means = np.asarray(means, dtype=float)
    stds = np.asarray(stds, dtype=float)
    weights = np.asarray(weights, dtype=float)
    if not (means.shape == stds.shape == weights.shape):
        raise ValueError("means, stds, weights must have matching lengths")
    if np.any(stds <= 0.0) or np.any(weights <= 0.0):
        raise ValueError("stds and weights must be positive")
    log_norm = np.log(weights) - np.log(stds * np.sqrt(2.0 * np.pi))

    def cost(y):
        y = np.asarray(y, dtype=float)[..., 0]
        z = log_norm - 0.5 * ((y[..., None] - means) / stds) ** 2
        zmax = z.max(axis=-1, keepdims=True)
        return -(zmax[..., 0] + np.log(np.exp(z - zmax).sum(axis=-1)))

    return TargetDensity(dim=1, cost=cost, temperature=temperature, vectorized=True)


# 2D study: two unit-covariance modes, equal weights, with exactly one mode
# inside the feasible half-plane 3*y0 - y1 >= 2. Mode placement is a repo
# default, not a published value.
MIXTURE_2D_MODES = np.array([[1.5, 1.0], [-1.5, -1.0]])
CONSTRAINT_2D = (3.0, -1.0, 2.0)  # a*y0 + b*y1 >= c


def make_constrained_mixture_2d(temperature: float = 0.1) -> TargetDensity:
    """Two-mode 2D Gaussian mixture with the linear constraint 3*y0 - y1 >= 2."""
    a, b, c = CONSTRAINT_2D

    def cost(y):
        y = np.asarray(y, dtype=float)
        d2 = np.sum((y[..., None, :] - MIXTURE_2D_MODES) ** 2, axis=-1)
        z = -0.5 * d2 + np.log(0.5 / (2.0 * np.pi))
        zmax = z.max(axis=-1, keepdims=True)
        return -(zmax[..., 0] + np.log(np.exp(z - zmax).sum(axis=-1)))

    def constraints(y):
        y = np.asarray(y, dtype=float)
        g = c - (a * y[..., 0] + b * y[..., 1])
        return g[..., None]

    return TargetDensity(
        dim=2, cost=cost, constraints=constraints, temperature=temperature, vectorized=True
    )


def _evaluate_one(target: TargetDensity, y: np.ndarray) -> tuple[float, float]:
    states = target.rollout(y) if target.rollout is not None else None
    args = (y,) if states is None else (y, states)
    cost = float(target.cost(*args))
    if not np.isfinite(cost):
        raise EvaluationError(f"non-finite cost {cost} for candidate {y!r}")
    violation = 0.0
    if target.constraints is not None:
        g = np.asarray(target.constraints(*args), dtype=float)
        violation = float(np.maximum(g, 0.0).sum())
    return cost, violation


def evaluate_batch(target, candidates) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-candidate (costs, total violations, feasible mask) for an (n, dim) batch."""
    n = candidates.shape[0]
    if target.vectorized:
        states = target.rollout(candidates) if target.rollout is not None else None
        args = (candidates,) if states is None else (candidates, states)
        costs = np.asarray(target.cost(*args), dtype=float).reshape(n)
        if target.constraints is not None:
            g = np.asarray(target.constraints(*args), dtype=float).reshape(n, -1)
            violations = np.maximum(g, 0.0).sum(axis=1)
        else:
            violations = np.zeros(n)
        bad = np.flatnonzero(~np.isfinite(costs))
        if bad.size:
            raise EvaluationError(f"non-finite cost for candidate index {bad[0]}")
    else:
        costs = np.empty(n)
        violations = np.empty(n)
        for k in range(n):
            try:
                costs[k], violations[k] = _evaluate_one(target, candidates[k])
            except EvaluationError as e:
                raise EvaluationError(f"candidate index {k}: {e}") from None
    return costs, violations, violations == 0.0
