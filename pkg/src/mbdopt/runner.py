"""Experiment runner: reproduces the numeric and vehicle studies and writes
all CSV/JSON artifacts under out/<experiment>/<method>/<seed>/.

Numeric experiments emit per-seed diffusion traces plus an objective grid for
plotting; vehicle experiments emit per-seed episode logs plus the course
geometry. summary.json aggregates per-method statistics over seeds.
"""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .adaptive import (
    AdaptiveMbdPlanner,
    AvpPolicy,
    FeedforwardNet,
    PpoConfig,
    ReinforceConfig,
    SchedulerPolicy,
    VEHICLE_OBS_SCALE,
    avp_train,
    load_policy,
    ppo_train,
    reinforce_train,
    save_policy,
)
from .baselines import CemConfig, CemPlanner, MppiConfig, MppiPlanner, run_cem, run_mppi
from .sampler import MbdPlanner, SamplerConfig, run_mbd, write_trace_csv
from .schedules import build_lp_schedule, build_vp_schedule, proposal_stds
from .target import log_weight, make_constrained_mixture_2d, make_gaussian_1d, make_mixture_1d
from .vehicle_env import (
    EnvConfig,
    TrackingEnv,
    make_tracking_target_builder,
    run_episode,
    write_episode_csv,
    write_waypoints,
)

METHODS = ("vp", "lp", "alp", "avp", "cem", "mppi")
EXPERIMENTS = ("numeric1d", "numeric2d", "vehicle", "train-alp", "train-avp")
OBJECTIVES_1D = ("gauss", "mixture", "multimodal")

SUMMARY_KEYS = ["method", "seeds", "reward_mean", "reward_std", "mean_T",
                "mean_sigma", "plan_time_ms_mean"]


@dataclass
class ExperimentConfig:
    experiment: str = "numeric1d"
    method: str = "lp"
    objective: str = "gauss"
    # schedule
    sigma_max: float = 1.8
    steps: int = 5
    beta0: float = 1e-4
    beta1: float = 1e-2
    # sampler
    n_samples: int = 100
    temperature: float = 0.1
    # baselines
    elite_frac: float = 0.1
    init_std: float = 1.0
    min_std: float = 0.01
    mppi_temperature: float = 0.1
    noise_std: float = 0.5
    # vehicle
    reference: str = "s_curve"
    horizon: int = 50
    episode_len: int = 400
    plan_temperature: float = 1.0
    # rl
    policy_path: str = ""
    train_task: str = "numeric2d"
    updates: int = 30
    step_penalty: float = 1.0
    t_min: int = 2
    t_max: int = 10
    ppo_lr: float = 1e-3
    ppo_gamma: float = 0.95
    episodes_per_iter: int = 2
    init_sigma: float = 1.8
    # run control
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    outdir: str = "out"


def validate_config(cfg: ExperimentConfig) -> list[str]:
    """Diagnostics for every invalid key (empty list = ok)."""
    diags = []
    if cfg.experiment not in EXPERIMENTS:
        diags.append(f"experiment: {cfg.experiment!r} not in {EXPERIMENTS}")
    if cfg.method not in METHODS:
        diags.append(f"method: {cfg.method!r} not in {METHODS}")
    if cfg.experiment == "numeric1d" and cfg.objective not in _OBJECTIVES_1D:
        diags.append(f"objective: {cfg.objective!r} not in {sorted(_OBJECTIVES_1D)}")
    if cfg.sigma_max <= 0.0:
        diags.append(f"sigma_max: {cfg.sigma_max} outside (0, inf)")
    if not (0.0 < cfg.beta0 <= cfg.beta1 < 1.0):
        diags.append(f"beta0/beta1: ({cfg.beta0}, {cfg.beta1}) need 0 < beta0 <= beta1 < 1")
    min_steps = 2 if cfg.method in ("lp", "alp") else 1
    if cfg.steps < min_steps:
        diags.append(f"steps: {cfg.steps} outside [{min_steps}, inf)")
    if cfg.n_samples < 2:
        diags.append(f"n_samples: {cfg.n_samples} outside [2, inf)")
    if cfg.temperature <= 0.0:
        diags.append(f"temperature: {cfg.temperature} outside (0, inf)")
    if cfg.plan_temperature <= 0.0:
        diags.append(f"plan_temperature: {cfg.plan_temperature} outside (0, inf)")
    if not 0.0 < cfg.elite_frac <= 1.0:
        diags.append(f"elite_frac: {cfg.elite_frac} outside (0, 1]")
    if cfg.horizon < 1:
        diags.append(f"horizon: {cfg.horizon} outside [1, inf)")
    if cfg.episode_len < 0:
        diags.append(f"episode_len: {cfg.episode_len} outside [0, inf)")
    if len(cfg.seeds) == 0:
        diags.append("seeds: need at least one seed")
    if not 2 <= cfg.t_min <= cfg.t_max:
        diags.append(f"t_min/t_max: ({cfg.t_min}, {cfg.t_max}) need 2 <= t_min <= t_max")
    if cfg.method in ("alp", "avp") and cfg.experiment in ("numeric2d", "vehicle") \
            and not cfg.policy_path:
        diags.append("policy_path: required to evaluate a trained alp/avp policy")
    return diags


# Built-in 1D objectives are documented repo choices; more can be registered
# programmatically via register_objective and then selected by name.
_OBJECTIVES_1D = {
    "gauss": lambda temperature: make_gaussian_1d(1.0, 0.5, temperature=temperature),
    "mixture": lambda temperature: make_mixture_1d(
        [-1.2, 1.0], [0.6, 0.3], [0.35, 0.65], temperature=temperature),
    "multimodal": lambda temperature: make_mixture_1d(
        [-2.2, -1.0, 0.2, 1.1, 2.0], [0.5, 0.25, 0.4, 0.18, 0.3],
        [0.15, 0.2, 0.15, 0.3, 0.2], temperature=temperature),
}


def register_objective(name: str, factory) -> None:
    """Register a custom named objective: factory(temperature) -> TargetDensity."""
    _OBJECTIVES_1D[name] = factory


def make_objective_1d(name: str, temperature: float = 0.1):
    if name not in _OBJECTIVES_1D:
        raise ValueError(f"unknown 1d objective {name!r}; known: {sorted(_OBJECTIVES_1D)}")
    return _OBJECTIVES_1D[name](temperature)


def run_experiment(cfg: ExperimentConfig) -> int:
    """Run one experiment; returns a process exit status."""
    diags = validate_config(cfg)
    if diags:
        for d in diags:
            print(f"config error: {d}")
        return 2
    try:
        if cfg.experiment == "numeric1d":
            _run_numeric(cfg, make_objective_1d(cfg.objective, cfg.temperature))
        elif cfg.experiment == "numeric2d":
            _run_numeric(cfg, make_constrained_mixture_2d(cfg.temperature))
        elif cfg.experiment == "vehicle":
            _run_vehicle(cfg)
        elif cfg.experiment == "train-alp":
            _run_training(cfg, kind="alp")
        elif cfg.experiment == "train-avp":
            _run_training(cfg, kind="avp")
    except Exception as e:  # surface the failure to the caller
        print(f"run failed: {e}")
        return 1
    return 0


def compare_methods(cfg_list: list[ExperimentConfig]):
    """Run several method configs on a shared experiment/seed list and build
    an aligned comparison table. Returns the table rows."""
    if not cfg_list:
        raise ValueError("no configs to compare")
    base = cfg_list[0]
    for c in cfg_list[1:]:
        if c.seeds != base.seeds:
            raise ValueError("all compared configs must share the seed list")
        if c.experiment != base.experiment or c.reference != base.reference:
            raise ValueError("all compared configs must share the experiment")
    rows = []
    for c in cfg_list:
        status = run_experiment(c)
        if status != 0:
            raise RuntimeError(f"comparison run for method {c.method} failed")
        summary = json.loads((_exp_dir(c) / c.method / "summary.json").read_text())
        rows.append(summary)
    out = _exp_dir(base)
    with open(out / "comparison.csv", "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=SUMMARY_KEYS)
        writer.writeheader()
        for r in rows:
            writer.writerow({k: r[k] for k in SUMMARY_KEYS})
    text = format_comparison(rows)
    (out / "comparison.txt").write_text(text)
    print(text)
    return rows


def format_comparison(rows: list[dict]) -> str:
    header = f"{'method':<8} {'reward':>18} {'mean_T':>8} {'mean_sigma':>11} {'plan_ms':>9}"
    lines = [header, "-" * len(header)]
    for r in rows:
        lines.append(
            f"{r['method']:<8} {r['reward_mean']:>10.2f} ± {r['reward_std']:<6.2f}"
            f"{r['mean_T']:>8.1f} {r['mean_sigma']:>11.2f} {r['plan_time_ms_mean']:>9.1f}")
    return "\n".join(lines)


def _exp_dir(cfg: ExperimentConfig) -> Path:
    name = cfg.experiment
    if cfg.experiment == "vehicle" and cfg.reference != "s_curve":
        name = f"{cfg.experiment}_{cfg.reference}"
    if cfg.experiment == "numeric1d":
        name = f"{cfg.experiment}_{cfg.objective}"
    return Path(cfg.outdir) / name


def _build_schedule(cfg: ExperimentConfig):
    if cfg.method == "vp":
        return build_vp_schedule(cfg.beta0, cfg.beta1, cfg.steps)
    return build_lp_schedule(cfg.sigma_max, cfg.steps)


def _summarize(method, seeds, rewards, ts, sigmas, times, out_dir: Path):
    summary = {
        "method": method,
        "seeds": list(seeds),
        "reward_mean": float(np.mean(rewards)),
        "reward_std": float(np.std(rewards)),
        "mean_T": float(np.mean(ts)),
        "mean_sigma": float(np.mean(sigmas)),
        "plan_time_ms_mean": float(np.mean(times)),
    }
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "summary.json", "w") as f:
        json.dump(summary, f, indent=2)
    return summary


def _write_objective_grid(target, out_dir: Path):
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "objective_grid.csv"
    if path.exists():
        return
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        if target.dim == 1:
            writer.writerow(["x", "cost"])
            xs = np.linspace(-5.0, 5.0, 1001)
            costs = target.cost(xs[:, None])
            for x, c in zip(xs, costs):
                writer.writerow([repr(float(x)), repr(float(c))])
        else:
            writer.writerow(["x0", "x1", "cost", "feasible"])
            xs = np.linspace(-4.0, 4.0, 161)
            x0, x1 = np.meshgrid(xs, xs, indexing="ij")
            pts = np.column_stack([x0.ravel(), x1.ravel()])
            costs = target.cost(pts)
            feas = np.ones(len(pts), dtype=int)
            if target.constraints is not None:
                feas = np.all(target.constraints(pts) <= 0.0, axis=-1).astype(int)
            for p, c, fz in zip(pts, costs, feas):
                writer.writerow([repr(float(p[0])), repr(float(p[1])),
                                 repr(float(c)), int(fz)])


def _run_numeric(cfg: ExperimentConfig, target) -> None:
    exp_dir = _exp_dir(cfg)
    _write_objective_grid(target, exp_dir)
    method_dir = exp_dir / cfg.method
    policy = None
    if cfg.method in ("alp", "avp"):
        policy, _ = load_policy(cfg.policy_path)
    rewards, ts, sigmas, times = [], [], [], []
    for seed in cfg.seeds:
        rng = np.random.default_rng(seed)
        t0 = time.perf_counter()
        if cfg.method in ("vp", "lp"):
            sched = _build_schedule(cfg)
            y0, trace = run_mbd(target, sched,
                                SamplerConfig(cfg.n_samples, seed, record_trace=True))
            t_used, sigma_used = sched.steps, float(proposal_stds(sched).max())
        elif cfg.method in ("alp", "avp"):
            action, _ = policy.sample(np.zeros(policy.obs_dim), rng)
            sched = policy.build_schedule(action)
            y0, trace = run_mbd(target, sched,
                                SamplerConfig(cfg.n_samples, seed, record_trace=True),
                                rng=rng)
            t_used, sigma_used = policy.action_T(action), policy.summary_value(action)
        elif cfg.method == "cem":
            c = CemConfig(cfg.steps, cfg.n_samples, cfg.elite_frac, cfg.init_std, cfg.min_std)
            y0, trace = run_cem(target, c, rng, record_trace=True)
            t_used, sigma_used = cfg.steps, cfg.init_std
        else:
            mcfg = MppiConfig(cfg.steps, cfg.n_samples, cfg.mppi_temperature, cfg.noise_std)
            y0, trace = run_mppi(target, mcfg, rng, record_trace=True)
            t_used, sigma_used = cfg.steps, cfg.noise_std
        times.append((time.perf_counter() - t0) * 1e3)
        rewards.append(log_weight(target, y0))
        ts.append(t_used)
        sigmas.append(sigma_used)
        seed_dir = method_dir / str(seed)
        seed_dir.mkdir(parents=True, exist_ok=True)
        write_trace_csv(trace, seed_dir / "trace.csv")
    _summarize(cfg.method, cfg.seeds, rewards, ts, sigmas, times, method_dir)


def _make_planner(cfg: ExperimentConfig, env: TrackingEnv):
    builder = make_tracking_target_builder(env, cfg.horizon, cfg.plan_temperature)
    if cfg.method in ("vp", "lp"):
        return MbdPlanner(builder, _build_schedule(cfg), cfg.n_samples, n_controls=2)
    if cfg.method == "alp":
        policy, _ = load_policy(cfg.policy_path)
        return AdaptiveMbdPlanner(policy, env, cfg.horizon, cfg.n_samples,
                                  cfg.plan_temperature)
    if cfg.method == "cem":
        c = CemConfig(cfg.steps, cfg.n_samples, cfg.elite_frac, cfg.init_std, cfg.min_std)
        return CemPlanner(builder, c, n_controls=2)
    if cfg.method == "mppi":
        mcfg = MppiConfig(cfg.steps, cfg.n_samples, cfg.mppi_temperature, cfg.noise_std)
        return MppiPlanner(builder, mcfg, n_controls=2)
    raise ValueError(f"method {cfg.method!r} cannot drive the vehicle task")


def _write_course(env: TrackingEnv, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    write_waypoints(env.path, out_dir / "waypoints.txt")
    course = {
        "reference": env.course.kind,
        "obstacle": {"cx": env.obstacle.cx, "cy": env.obstacle.cy,
                     "hx": env.obstacle.hx, "hy": env.obstacle.hy},
        "safety_radius": env.cfg.safety_radius,
        "start": [float(v) for v in env.path.start],
        "goal": [float(v) for v in env.path.goal],
        "v_ref": env.cfg.v_ref,
    }
    with open(out_dir / "course.json", "w") as f:
        json.dump(course, f, indent=2)


def _run_vehicle(cfg: ExperimentConfig) -> None:
    exp_dir = _exp_dir(cfg)
    rewards, ts, sigmas, times = [], [], [], []
    for seed in cfg.seeds:
        env = TrackingEnv(EnvConfig(reference=cfg.reference, episode_len=cfg.episode_len))
        if seed == cfg.seeds[0]:
            _write_course(env, exp_dir)
        planner = _make_planner(cfg, env)
        total, rows = run_episode(planner, env, seed)
        rewards.append(total)
        ts.append(float(np.mean([r["T_chosen"] for r in rows])) if rows else math.nan)
        sigmas.append(float(np.mean([r["sigma_chosen"] for r in rows])) if rows else math.nan)
        times.append(float(np.mean([r["plan_time_ms"] for r in rows])) if rows else math.nan)
        seed_dir = exp_dir / cfg.method / str(seed)
        seed_dir.mkdir(parents=True, exist_ok=True)
        write_episode_csv(rows, seed_dir / "episode.csv")
    _summarize(cfg.method, cfg.seeds, rewards, ts, sigmas, times, exp_dir / cfg.method)


def _write_curve(curve: list[dict], path: Path) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=["iteration", "mean_reward", "mean_T",
                                               "mean_sigma", "policy_loss", "value_loss"])
        writer.writeheader()
        writer.writerows(curve)


def _run_training(cfg: ExperimentConfig, kind: str) -> None:
    exp_dir = _exp_dir(cfg)
    exp_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(cfg.seeds[0])
    out_policy = Path(cfg.policy_path) if cfg.policy_path else exp_dir / f"{kind}_policy.json"
    t_choices = range(cfg.t_min, cfg.t_max + 1)
    if cfg.train_task == "numeric2d":
        objective = make_constrained_mixture_2d(cfg.temperature)
        rcfg = ReinforceConfig(step_penalty=cfg.step_penalty, T_min=cfg.t_min,
                               T_max=cfg.t_max, n_samples=cfg.n_samples)
        if kind == "alp":
            pol = SchedulerPolicy(obs_dim=1, t_choices=t_choices, rng=rng)
            pol, curve = reinforce_train(pol, objective, cfg.updates, rng, rcfg)
        else:
            pol = AvpPolicy(obs_dim=1, t_choices=t_choices, rng=rng)
            pol, curve = avp_train(pol, objective, cfg.updates, rng, rcfg)
        save_policy(pol, out_policy)
    elif cfg.train_task == "vehicle":
        if kind != "alp":
            raise ValueError("the vehicle task trains the alp policy only")
        env = TrackingEnv(EnvConfig(reference=cfg.reference, episode_len=cfg.episode_len))
        pol = SchedulerPolicy(obs_dim=5, t_choices=t_choices,
                              obs_scale=VEHICLE_OBS_SCALE, rng=rng,
                              init_sigma_mean=cfg.init_sigma)
        value = FeedforwardNet([5, 64, 64, 1], rng)
        pcfg = PpoConfig(step_penalty=cfg.step_penalty, T_min=cfg.t_min, T_max=cfg.t_max,
                         learning_rate=cfg.ppo_lr, discount=cfg.ppo_gamma,
                         episodes_per_iter=cfg.episodes_per_iter)
        pol, curve = ppo_train(pol, value, env, pcfg, cfg.updates, rng,
                               horizon=cfg.horizon, n_samples=cfg.n_samples,
                               plan_temperature=cfg.plan_temperature, verbose=True)
        save_policy(pol, out_policy, value_net=value)
    else:
        raise ValueError(f"unknown train_task {cfg.train_task!r}")
    _write_curve(curve, exp_dir / f"{kind}_curve.csv")
    print(f"saved policy checkpoint to {out_policy}")


def episode_reward_from_csv(path: Path) -> float:
    """Recompute an episode's total reward from its CSV (self-consistency)."""
    with open(path, newline="") as f:
        return sum(float(r["reward"]) for r in csv.DictReader(f))
