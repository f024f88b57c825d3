"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with `pytest tests/test_acceptance.py -v -s`. The vehicle criterion trains
the adaptive scheduler from scratch and is the long pole (budgeted under 30
minutes at desk scale); everything else finishes in seconds to minutes.
"""

import time

import numpy as np
import pytest

from mbdopt.adaptive import (
    AdaptiveMbdPlanner,
    AvpPolicy,
    FeedforwardNet,
    PpoConfig,
    ReinforceConfig,
    SchedulerPolicy,
    VEHICLE_OBS_SCALE,
    avp_train,
    evaluate_policy_2d,
    net_backward,
    ppo_train,
    reinforce_train,
)
from mbdopt.baselines import CemConfig, MppiConfig, run_cem, run_mppi
from mbdopt.sampler import (
    DiffusionState,
    MbdPlanner,
    SamplerConfig,
    mc_score,
    run_mbd,
    sample_proposals,
)
from mbdopt.schedules import (
    build_lp_schedule,
    build_vp_schedule,
    proposal_stds,
    vp_coefficients,
)
from mbdopt.runner import make_objective_1d
from mbdopt.target import make_constrained_mixture_2d, make_gaussian_1d
from mbdopt.vehicle_env import (
    EnvConfig,
    TrackingEnv,
    in_collision,
    make_tracking_target_builder,
    obstacle_distance,
    run_episode,
)

VEHICLE_BUDGET_S = 30 * 60
VEHICLE_TRAIN = dict(iterations=60, step_penalty=1.5, t_max=30, lr=1e-3,
                     gamma=0.95, init_sigma=1.8, episodes_per_iter=2)


def check(name: str, ok: bool, detail: str = ""):
    print(f"[acceptance] {name}: {'PASS' if ok else 'FAIL'} {detail}")
    assert ok, f"{name} {detail}"


def grid_argmin_1d(target):
    grid = np.linspace(-5.0, 5.0, 100001)[:, None]
    return float(grid[np.argmin(target.cost(grid)), 0])


def test_vp_lp_std_parity():
    t0 = time.perf_counter()
    vp = proposal_stds(build_vp_schedule(1e-4, 1e-2, 2))
    lp = proposal_stds(build_lp_schedule(1.8, 2))
    ok = (abs(vp[1] - 0.1) / 0.1 < 0.02 and abs(vp[0] - 0.01) / 0.01 < 0.02
          and lp[0] == 0.0 and lp[1] == 1.8)
    elapsed = time.perf_counter() - t0
    check("vp-lp-std-parity", ok and elapsed < 1.0,
          f"(vp {np.round(vp, 5)}, lp {lp}, {elapsed:.3f}s)")


def test_vp_five_step_cap():
    cap = proposal_stds(build_vp_schedule(1e-4, 1e-2, 5)).max()
    check("vp-five-step-cap", abs(cap - 0.16) / 0.16 < 0.02, f"(max std {cap:.4f})")


def test_decoupling_property():
    lp_ok = all(proposal_stds(build_lp_schedule(1.8, steps)).max() == 1.8
                for steps in range(2, 51))
    vp2 = proposal_stds(build_vp_schedule(1e-4, 1e-2, 2)).max()
    vp5 = proposal_stds(build_vp_schedule(1e-4, 1e-2, 5)).max()
    vp_moves = abs(vp2 - 0.101) < 1e-3 and abs(vp5 - 0.16) / 0.16 < 0.02 and vp2 != vp5
    check("schedule-decoupling", lp_ok and vp_moves, f"(vp max {vp2:.4f} -> {vp5:.4f})")


def test_score_oracle():
    t0 = time.perf_counter()
    mu, s_obj, lam = 1.0, 1.0, 0.1
    var = s_obj**2 * lam
    target = make_gaussian_1d(mu, s_obj, temperature=lam)
    worst = 0.0
    for kind in ("vp", "lp"):
        if kind == "vp":
            sched = build_vp_schedule(1e-4, 1e-2, 5)
            i = 4
            ab = sched.alpha_bars[i]
            c0, c1 = np.sqrt(ab), np.sqrt(1 - ab)
        else:
            sched = build_lp_schedule(1.8, 5)
            i = 3
            t = sched.t_grid[i]
            c0, c1 = 1 - t, t
        rng = np.random.default_rng(123)
        for y_val in (-1.0, 0.5, 2.0):
            state = DiffusionState(y=np.array([y_val]), step=i, schedule_kind=kind)
            props = sample_proposals(state, sched, SamplerConfig(n_samples=100_000), rng)
            est = mc_score(state, sched, target, props)[0]
            exact = -(y_val - c0 * mu) / (c0**2 * var + c1**2)
            worst = max(worst, abs(est - exact) / abs(exact))
    elapsed = time.perf_counter() - t0
    check("score-oracle", worst < 0.05 and elapsed < 10.0,
          f"(worst rel err {worst:.4f}, {elapsed:.1f}s)")


def test_fig3_behavior():
    t0 = time.perf_counter()
    all_ok = True
    detail = []
    for obj_name in ("gauss", "mixture"):
        target = make_objective_1d(obj_name)
        opt = grid_argmin_1d(target)
        for steps in (2, 5):
            lp_err = np.array([
                abs(run_mbd(target, build_lp_schedule(1.8, steps),
                            SamplerConfig(100, seed))[0][0] - opt)
                for seed in range(50)])
            vp_err = np.array([
                abs(run_mbd(target, build_vp_schedule(1e-4, 1e-2, steps),
                            SamplerConfig(100, seed))[0][0] - opt)
                for seed in range(50)])
            frac = float((lp_err < 0.1).mean())
            all_ok &= frac >= 0.9 and np.median(vp_err) > np.median(lp_err)
            detail.append(f"{obj_name}/T{steps}: lp {frac:.2f}, "
                          f"median {np.median(lp_err):.3f} vs vp {np.median(vp_err):.3f}")
    elapsed = time.perf_counter() - t0
    check("fig3-behavior", all_ok and elapsed < 60.0,
          f"({'; '.join(detail)}, {elapsed:.1f}s)")


def test_fig4_behavior():
    t0 = time.perf_counter()
    objective = make_constrained_mixture_2d()
    cfg = ReinforceConfig(batch_size=16, learning_rate=0.05, step_penalty=1.0,
                          T_min=2, T_max=10, n_samples=100)
    alp = SchedulerPolicy(obs_dim=1, t_choices=range(2, 11),
                          rng=np.random.default_rng(0))
    alp, _ = reinforce_train(alp, objective, 30, np.random.default_rng(42), cfg)
    avp = AvpPolicy(obs_dim=1, t_choices=range(2, 11), rng=np.random.default_rng(0))
    avp, _ = avp_train(avp, objective, 30, np.random.default_rng(42), cfg)
    res_alp = evaluate_policy_2d(alp, objective, 100, np.random.default_rng(7))
    res_avp = evaluate_policy_2d(avp, objective, 100, np.random.default_rng(7))
    learned_t = alp.expected_T(np.zeros(1))
    elapsed = time.perf_counter() - t0
    ok = (res_alp["feasible_frac"] >= 0.95
          and res_alp["spread"] <= res_avp["spread"]
          and learned_t <= 5.0
          and elapsed < 300.0)
    check("fig4-behavior", ok,
          f"(alp feas {res_alp['feasible_frac']:.2f}, spread {res_alp['spread']:.3f} "
          f"vs avp {res_avp['spread']:.3f}, E[T] {learned_t:.2f}, {elapsed:.0f}s)")


def test_variance_preservation():
    sched = build_vp_schedule(1e-4, 1e-2, 5)
    rng = np.random.default_rng(0)
    n = 10_000
    y0 = rng.standard_normal(n)
    sampling_sigma = np.sqrt(2.0 / (n - 1))
    worst = 0.0
    for i in range(sched.steps):
        c0, c1 = vp_coefficients(sched, i)
        yi = c0 * y0 + c1 * rng.standard_normal(n)
        worst = max(worst, abs(yi.var(ddof=1) - 1.0))
    check("variance-preservation", worst < 3.0 * sampling_sigma,
          f"(worst |var-1| {worst:.4f} vs 3-sigma {3*sampling_sigma:.4f})")


def test_baseline_parity_and_determinism():
    target = make_gaussian_1d(0.7, 0.5)
    cem_err = abs(run_cem(target, CemConfig(iterations=10, n_samples=100),
                          np.random.default_rng(0))[0][0] - 0.7)
    mppi_err = abs(run_mppi(target, MppiConfig(iterations=10, n_samples=100),
                            np.random.default_rng(0))[0][0] - 0.7)
    target2 = make_constrained_mixture_2d()
    det = True
    for method in ("vp", "lp", "cem", "mppi", "alp"):
        outs = []
        for _ in range(2):
            if method == "vp":
                y, _ = run_mbd(target2, build_vp_schedule(1e-4, 1e-2, 5),
                               SamplerConfig(50, rng_seed=9))
            elif method == "lp":
                y, _ = run_mbd(target2, build_lp_schedule(1.8, 5),
                               SamplerConfig(50, rng_seed=9))
            elif method == "cem":
                y, _ = run_cem(target2, CemConfig(5, 50), np.random.default_rng(9))
            elif method == "mppi":
                y, _ = run_mppi(target2, MppiConfig(5, 50), np.random.default_rng(9))
            else:
                pol = SchedulerPolicy(obs_dim=1, t_choices=range(2, 11),
                                      rng=np.random.default_rng(0))
                rng = np.random.default_rng(9)
                action, _ = pol.sample(np.zeros(1), rng)
                y, _ = run_mbd(target2, pol.build_schedule(action),
                               SamplerConfig(50), rng=rng)
            outs.append(y)
        det &= bool(np.array_equal(outs[0], outs[1]))
    ok = cem_err < 0.05 and mppi_err < 0.05 and det
    check("baseline-parity", ok,
          f"(cem err {cem_err:.4f}, mppi err {mppi_err:.4f}, deterministic {det})")


def test_gradient_checks():
    worst = 0.0
    for seed in range(10):
        rng = np.random.default_rng(seed)
        hidden = [int(rng.integers(2, 6)) for _ in range(int(rng.integers(1, 3)))]
        net = FeedforwardNet([4, *hidden, 3], rng)
        x = rng.normal(size=4)
        gout = rng.normal(size=3)
        grads, _ = net_backward(net, x, gout)
        h = 1e-6
        for p, g in zip(net.params(), grads):
            flat = p.reshape(-1)
            gflat = g.reshape(-1)
            for j in range(flat.size):
                old = flat[j]
                flat[j] = old + h
                up = float(np.sum(net.forward(x) * gout))
                flat[j] = old - h
                dn = float(np.sum(net.forward(x) * gout))
                flat[j] = old
                fd = (up - dn) / (2 * h)
                denom = max(abs(fd), 1e-4)
                worst = max(worst, abs(gflat[j] - fd) / denom)
    check("gradient-checks", worst < 1e-4, f"(worst rel err {worst:.2e})")


@pytest.fixture(scope="module")
def vehicle_training(tmp_path_factory):
    """Train the adaptive scheduler once, through the same runner path the CLI
    uses, so the checkpoint is reproducible from the command line."""
    from mbdopt.adaptive import load_policy
    from mbdopt.runner import ExperimentConfig, run_experiment

    t0 = time.perf_counter()
    out = tmp_path_factory.mktemp("alp_training")
    cfg = ExperimentConfig(
        experiment="train-alp", train_task="vehicle",
        updates=VEHICLE_TRAIN["iterations"],
        step_penalty=VEHICLE_TRAIN["step_penalty"],
        t_min=2, t_max=VEHICLE_TRAIN["t_max"],
        ppo_lr=VEHICLE_TRAIN["lr"], ppo_gamma=VEHICLE_TRAIN["gamma"],
        init_sigma=VEHICLE_TRAIN["init_sigma"],
        episodes_per_iter=VEHICLE_TRAIN["episodes_per_iter"],
        outdir=str(out), policy_path=str(out / "alp_vehicle.json"))
    assert run_experiment(cfg) == 0
    pol, _ = load_policy(cfg.policy_path)
    return pol, time.perf_counter() - t0


def _episode_stats(planner, env, seed):
    total, rows = run_episode(planner, env, seed)
    pos = np.array([[r["x"], r["y"]] for r in rows])
    collisions = int(in_collision(pos, env.obstacle, env.cfg.safety_radius).sum())
    near = obstacle_distance(pos, env.obstacle) <= 2.0
    ts = np.array([r["T_chosen"] for r in rows], dtype=float)
    return total, collisions, ts[near], ts[~near]


def test_vehicle_closed_loop(vehicle_training):
    pol, train_s = vehicle_training
    t0 = time.perf_counter()
    seeds = range(5)

    lp_rewards, lp_colls = [], 0
    for seed in seeds:
        env = TrackingEnv(EnvConfig())
        planner = MbdPlanner(make_tracking_target_builder(env, 50, 1.0),
                             build_lp_schedule(1.8, 17), n_samples=100, n_controls=2)
        total, colls, _, _ = _episode_stats(planner, env, seed)
        lp_rewards.append(total)
        lp_colls += colls

    alp_rewards, near_t, far_t = [], [], []
    for seed in seeds:
        env = TrackingEnv(EnvConfig())
        planner = AdaptiveMbdPlanner(pol, env, horizon=50, n_samples=100,
                                     plan_temperature=1.0)
        total, _, near, far = _episode_stats(planner, env, seed)
        alp_rewards.append(total)
        near_t += near.tolist()
        far_t += far.tolist()

    oval_near, oval_far = [], []
    for seed in seeds:
        env = TrackingEnv(EnvConfig(reference="oval"))
        planner = AdaptiveMbdPlanner(pol, env, horizon=50, n_samples=100,
                                     plan_temperature=1.0)
        _, _, near, far = _episode_stats(planner, env, seed)
        oval_near += near.tolist()
        oval_far += far.tolist()

    elapsed = time.perf_counter() - t0 + train_s
    lp_mean, alp_mean = float(np.mean(lp_rewards)), float(np.mean(alp_rewards))
    near_mean, far_mean = float(np.mean(near_t)), float(np.mean(far_t))
    oval_near_mean, oval_far_mean = float(np.mean(oval_near)), float(np.mean(oval_far))
    ok = (lp_colls == 0
          and alp_mean >= lp_mean
          and near_mean > far_mean
          and oval_near_mean > oval_far_mean
          and elapsed < VEHICLE_BUDGET_S)
    check("vehicle-closed-loop", ok,
          f"(lp colls {lp_colls}, reward alp {alp_mean:.0f} vs lp {lp_mean:.0f}, "
          f"T near {near_mean:.1f} vs far {far_mean:.1f}, "
          f"oval T near {oval_near_mean:.1f} vs far {oval_far_mean:.1f}, "
          f"{elapsed/60:.1f} min)")
