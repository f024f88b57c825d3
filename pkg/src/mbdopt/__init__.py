"""Trajectory optimization by model-based diffusion with VP and LP schedules,
CEM/MPPI baselines, and an RL-adaptive scheduler."""

from .errors import DegenerateBatchError, EvaluationError, ParameterError
from .schedules import (
    LpSchedule,
    VpSchedule,
    build_lp_schedule,
    build_vp_schedule,
    proposal_std,
    proposal_stds,
    vp_coefficients,
)
from .target import (
    TargetDensity,
    log_weight,
    make_constrained_mixture_2d,
    make_gaussian_1d,
    make_mixture_1d,
    normalize_weights,
)
from .sampler import (
    DiffusionState,
    MbdPlanner,
    PlannerConfig,
    SamplerConfig,
    denoise_step,
    mc_score,
    plan_receding_horizon,
    run_mbd,
    sample_proposals,
)
from .baselines import CemConfig, MppiConfig, run_cem, run_mppi

__version__ = "0.1.0"
