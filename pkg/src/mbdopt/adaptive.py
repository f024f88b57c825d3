"""Learned scheduler: pick (diffusion steps, noise cap) from the environment state.

The policy factorizes as pi = pi_T * pi_sigma with a categorical head over a
step-count set and a squashed-Gaussian head for the continuous parameter(s).
Everything runs on a small from-scratch MLP (tanh hidden layers, identity
output) with manual reverse-mode gradients, trained either by REINFORCE with
a mean baseline (static 2D study) or PPO with GAE (vehicle task).
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass

import numpy as np

from .schedules import build_lp_schedule, build_vp_schedule
from .sampler import SamplerConfig, run_mbd
from .target import TargetDensity
from .vehicle_env import TrackingEnv, make_tracking_target_builder, observe, physical_control

CHECKPOINT_VERSION = 1

# Fixed observation scales for the vehicle task (d_lat, d_theta, d_vel,
# dx_obs, dy_obs); raw observations are divided by these before the net.
VEHICLE_OBS_SCALE = np.array([2.0, 1.0, 2.0, 10.0, 10.0])


class FeedforwardNet:
    """Fully-connected net: tanh on hidden layers, identity on the output."""

    def __init__(self, sizes, rng: np.random.Generator | None = None):
        if len(sizes) < 2:
            raise ValueError("need at least input and output sizes")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.sizes = list(sizes)
        self.weights = [rng.standard_normal((m, n)) / np.sqrt(m)
                        for m, n in zip(sizes[:-1], sizes[1:])]
        self.biases = [np.zeros(n) for n in sizes[1:]]

    def params(self) -> list[np.ndarray]:
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out

    def forward(self, x: np.ndarray) -> np.ndarray:
        return self.forward_cached(x)[0]

    def forward_cached(self, x: np.ndarray):
        """Returns (output, activations); activations feed backward()."""
        x = np.asarray(x, dtype=float)
        squeeze = x.ndim == 1
        h = x[None] if squeeze else x
        if h.shape[1] != self.sizes[0]:
            raise ValueError(f"input dim {h.shape[1]} != {self.sizes[0]}")
        acts = [h]
        last = len(self.weights) - 1
        for k, (W, b) in enumerate(zip(self.weights, self.biases)):
            z = acts[-1] @ W + b
            acts.append(np.tanh(z) if k < last else z)
        out = acts[-1][0] if squeeze else acts[-1]
        return out, acts

    def backward(self, acts, output_grad):
        """Exact reverse-mode gradients.

        output_grad has the trailing shape of the output (batched or not);
        returns (param_grads aligned with params(), input_grad).
        """
        g = np.asarray(output_grad, dtype=float)
        if g.ndim == 1:
            g = g[None]
        grads: list[np.ndarray] = []
        for k in range(len(self.weights) - 1, -1, -1):
            if k < len(self.weights) - 1:
                g = g * (1.0 - acts[k + 1] ** 2)
            grads.append(g.sum(axis=0))          # db
            grads.append(acts[k].T @ g)          # dW
            g = g @ self.weights[k].T
        grads.reverse()
        return grads, g


def net_forward(net: FeedforwardNet, x: np.ndarray) -> np.ndarray:
    return net.forward(x)


def net_backward(net: FeedforwardNet, x: np.ndarray, output_grad: np.ndarray):
    """(param_grads, input_grad) of the forward map at x."""
    _, acts = net.forward_cached(x)
    return net.backward(acts, output_grad)


class Adam:
    """Standard Adam on a list of parameter arrays, updated in place."""

    def __init__(self, params: list[np.ndarray], lr: float = 3e-4,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads: list[np.ndarray]) -> None:
        self.t += 1
        b1t = 1.0 - self.beta1**self.t
        b2t = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m += (1.0 - self.beta1) * (g - m)
            v += (1.0 - self.beta2) * (g**2 - v)
            p -= self.lr * (m / b1t) / (np.sqrt(v / b2t) + self.eps)


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _logit(p):
    return np.log(p) - np.log1p(-p)


def _gauss_logpdf(z, mean, std):
    return -0.5 * ((z - mean) / std) ** 2 - np.log(std) - 0.5 * np.log(2.0 * np.pi)


def _log_softmax(logits):
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


class SchedulerPolicy:
    """pi_T (categorical over t_choices) x pi_sigma (Gaussian squashed into
    sigma_bounds by a scaled sigmoid). Actions are (T, sigma_max)."""

    kind = "alp"

    def __init__(self, obs_dim: int, t_choices, sigma_bounds=(0.2, 4.0),
                 hidden=(64, 64), obs_scale=None, rng=None, init_logstd=-0.7,
                 init_sigma_mean: float | None = None):
        self.obs_dim = obs_dim
        self.t_choices = np.asarray(list(t_choices), dtype=int)
        if self.t_choices.size < 1:
            raise ValueError("t_choices must be non-empty")
        self.sigma_bounds = (float(sigma_bounds[0]), float(sigma_bounds[1]))
        self.obs_scale = np.ones(obs_dim) if obs_scale is None else np.asarray(obs_scale, float)
        k = self.t_choices.size
        self.net = FeedforwardNet([obs_dim, *hidden, k + 2], rng)
        # Zero output layer: uniform pi_T; sigma mean at mid-range unless an
        # explicit starting noise cap is given.
        self.net.weights[-1][:] = 0.0
        self.net.biases[-1][:] = 0.0
        if init_sigma_mean is not None:
            self.net.biases[-1][k] = self._unsquash(init_sigma_mean)
        self.net.biases[-1][k + 1] = init_logstd
        self.version = 0

    # --- head math -------------------------------------------------------
    def _split(self, out):
        k = self.t_choices.size
        return out[..., :k], out[..., k], out[..., k + 1]

    def forward(self, obs):
        return self.net.forward(np.asarray(obs, float) / self.obs_scale)

    def forward_cached(self, obs):
        return self.net.forward_cached(np.asarray(obs, float) / self.obs_scale)

    def sample(self, obs, rng: np.random.Generator):
        """(action, logprob) with action = (T, sigma_max)."""
        out = self.forward(obs)
        logits, m, logstd = self._split(out)
        probs = np.exp(_log_softmax(logits))
        idx = int(rng.choice(probs.size, p=probs))
        z = m + np.exp(logstd) * rng.standard_normal()
        action = (int(self.t_choices[idx]), float(self._squash(z)))
        return action, float(self._action_logprob(out, action))

    def mode(self, obs):
        """Deterministic action: argmax T, sigma at the squashed mean."""
        out = self.forward(obs)
        logits, m, _ = self._split(out)
        return (int(self.t_choices[int(np.argmax(logits))]), float(self._squash(m)))

    def logprob(self, obs_batch, actions):
        out = self.net.forward(np.asarray(obs_batch, float) / self.obs_scale)
        logp = np.array([self._action_logprob(out[i], actions[i]) for i in range(len(actions))])
        return logp, out

    def _squash(self, z):
        lo, hi = self.sigma_bounds
        return lo + (hi - lo) * _sigmoid(z)

    def _unsquash(self, sigma):
        lo, hi = self.sigma_bounds
        return _logit((sigma - lo) / (hi - lo))

    def _action_logprob(self, out, action):
        logits, m, logstd = self._split(out)
        t_val, sigma = action
        idx = int(np.flatnonzero(self.t_choices == t_val)[0])
        z = self._unsquash(sigma)
        lo, hi = self.sigma_bounds
        jac = (hi - lo) * _sigmoid(z) * (1.0 - _sigmoid(z))
        return _log_softmax(logits)[idx] + _gauss_logpdf(z, m, np.exp(logstd)) - np.log(jac)

    def logprob_grad_out(self, out, actions):
        """d logprob / d net-output, per row. Squash corrections are constant
        in the parameters at a fixed action, so they contribute nothing."""
        out = np.atleast_2d(out)
        k = self.t_choices.size
        g = np.zeros_like(out)
        for i, (t_val, sigma) in enumerate(actions):
            logits, m, logstd = self._split(out[i])
            probs = np.exp(_log_softmax(logits))
            idx = int(np.flatnonzero(self.t_choices == t_val)[0])
            g[i, :k] = -probs
            g[i, idx] += 1.0
            z = self._unsquash(sigma)
            s = np.exp(logstd)
            g[i, k] = (z - m) / s**2
            g[i, k + 1] = ((z - m) / s) ** 2 - 1.0
        return g

    def action_T(self, action) -> int:
        return action[0]

    def build_schedule(self, action):
        t_val, sigma = action
        return build_lp_schedule(sigma, t_val)

    def expected_T(self, obs) -> float:
        logits, _, _ = self._split(self.forward(obs))
        return float(np.exp(_log_softmax(logits)) @ self.t_choices)

    def summary_value(self, action) -> float:
        """The continuous head value reported in logs (sigma_max)."""
        return action[1]


class AvpPolicy:
    """Same protocol, but the continuous heads produce (beta0, beta1) for a VP
    schedule with 0 < beta0 <= beta1 < beta1_max enforced by nested squashing.

    Head means initialize at the conventional VP defaults (1e-4, 1e-2)."""

    kind = "avp"
    BETA0_MIN = 1e-6
    BETA1_RANGE = (1e-5, 0.5)

    def __init__(self, obs_dim: int, t_choices, hidden=(64, 64), obs_scale=None,
                 rng=None, init_betas=(1e-4, 1e-2), init_logstd=-1.0):
        self.obs_dim = obs_dim
        self.t_choices = np.asarray(list(t_choices), dtype=int)
        self.obs_scale = np.ones(obs_dim) if obs_scale is None else np.asarray(obs_scale, float)
        k = self.t_choices.size
        self.net = FeedforwardNet([obs_dim, *hidden, k + 4], rng)
        self.net.weights[-1][:] = 0.0
        self.net.biases[-1][:] = 0.0
        b0, b1 = init_betas
        lo1, hi1 = self.BETA1_RANGE
        self.net.biases[-1][k] = _logit((b0 - self.BETA0_MIN) / (b1 - self.BETA0_MIN))
        self.net.biases[-1][k + 1] = init_logstd
        self.net.biases[-1][k + 2] = _logit((b1 - lo1) / (hi1 - lo1))
        self.net.biases[-1][k + 3] = init_logstd
        self.version = 0

    def _split(self, out):
        k = self.t_choices.size
        return out[..., :k], out[..., k], out[..., k + 1], out[..., k + 2], out[..., k + 3]

    def forward(self, obs):
        return self.net.forward(np.asarray(obs, float) / self.obs_scale)

    def forward_cached(self, obs):
        return self.net.forward_cached(np.asarray(obs, float) / self.obs_scale)

    def sample(self, obs, rng: np.random.Generator):
        """(action, logprob) with action = (T, beta0, beta1)."""
        out = self.forward(obs)
        logits, m0, ls0, m1, ls1 = self._split(out)
        probs = np.exp(_log_softmax(logits))
        idx = int(rng.choice(probs.size, p=probs))
        z1 = m1 + np.exp(ls1) * rng.standard_normal()
        z0 = m0 + np.exp(ls0) * rng.standard_normal()
        b1 = self._squash_b1(z1)
        b0 = self.BETA0_MIN + (b1 - self.BETA0_MIN) * _sigmoid(z0)
        action = (int(self.t_choices[idx]), float(b0), float(b1))
        return action, float(self._action_logprob(out, action))

    def mode(self, obs):
        out = self.forward(obs)
        logits, m0, _, m1, _ = self._split(out)
        b1 = self._squash_b1(m1)
        b0 = self.BETA0_MIN + (b1 - self.BETA0_MIN) * _sigmoid(m0)
        return (int(self.t_choices[int(np.argmax(logits))]), float(b0), float(b1))

    def logprob(self, obs_batch, actions):
        out = self.net.forward(np.asarray(obs_batch, float) / self.obs_scale)
        logp = np.array([self._action_logprob(out[i], actions[i]) for i in range(len(actions))])
        return logp, out

    def _squash_b1(self, z):
        lo, hi = self.BETA1_RANGE
        return lo + (hi - lo) * _sigmoid(z)

    def _invert(self, action):
        _, b0, b1 = action
        lo1, hi1 = self.BETA1_RANGE
        z1 = _logit((b1 - lo1) / (hi1 - lo1))
        z0 = _logit((b0 - self.BETA0_MIN) / (b1 - self.BETA0_MIN))
        return z0, z1

    def _action_logprob(self, out, action):
        logits, m0, ls0, m1, ls1 = self._split(out)
        t_val = action[0]
        idx = int(np.flatnonzero(self.t_choices == t_val)[0])
        z0, z1 = self._invert(action)
        lo1, hi1 = self.BETA1_RANGE
        b1 = action[2]
        jac1 = (hi1 - lo1) * _sigmoid(z1) * (1.0 - _sigmoid(z1))
        jac0 = (b1 - self.BETA0_MIN) * _sigmoid(z0) * (1.0 - _sigmoid(z0))
        return (_log_softmax(logits)[idx]
                + _gauss_logpdf(z0, m0, np.exp(ls0)) - np.log(jac0)
                + _gauss_logpdf(z1, m1, np.exp(ls1)) - np.log(jac1))

    def logprob_grad_out(self, out, actions):
        out = np.atleast_2d(out)
        k = self.t_choices.size
        g = np.zeros_like(out)
        for i, action in enumerate(actions):
            logits, m0, ls0, m1, ls1 = self._split(out[i])
            probs = np.exp(_log_softmax(logits))
            idx = int(np.flatnonzero(self.t_choices == action[0])[0])
            g[i, :k] = -probs
            g[i, idx] += 1.0
            z0, z1 = self._invert(action)
            s0, s1 = np.exp(ls0), np.exp(ls1)
            g[i, k] = (z0 - m0) / s0**2
            g[i, k + 1] = ((z0 - m0) / s0) ** 2 - 1.0
            g[i, k + 2] = (z1 - m1) / s1**2
            g[i, k + 3] = ((z1 - m1) / s1) ** 2 - 1.0
        return g

    def action_T(self, action) -> int:
        return action[0]

    def build_schedule(self, action):
        t_val, b0, b1 = action
        return build_vp_schedule(b0, b1, t_val)

    def expected_T(self, obs) -> float:
        logits = self._split(self.forward(obs))[0]
        return float(np.exp(_log_softmax(logits)) @ self.t_choices)

    def summary_value(self, action) -> float:
        return action[2]


def policy_sample(pol, obs, rng: np.random.Generator):
    """(T, continuous params..., logprob) — thin wrapper over pol.sample."""
    action, logp = pol.sample(obs, rng)
    return (*action, logp)


@dataclass
class Transition:
    s: np.ndarray
    a: tuple
    logprob: float
    u: np.ndarray
    reward_aug: float
    s_next: np.ndarray
    done: bool
    value_est: float
    version: int = 0


@dataclass
class PpoConfig:
    clip_ratio: float = 0.2
    gae_lambda: float = 0.95
    discount: float = 0.99
    epochs: int = 10
    minibatch_size: int = 64
    learning_rate: float = 3e-4
    value_lr: float = 3e-3
    step_penalty: float = 1.0
    T_min: int = 2
    T_max: int = 30
    episodes_per_iter: int = 2
    entropy_coef: float = 0.0
    random_starts: bool = True     # training episodes may start anywhere on the path
    random_obstacle: bool = True   # ... and see the obstacle anywhere on the path

    def __post_init__(self):
        if not 0.0 < self.discount < 1.0:
            raise ValueError("discount must be in (0, 1)")
        if self.clip_ratio <= 0.0:
            raise ValueError("clip_ratio must be > 0")


@dataclass
class ReinforceConfig:
    updates: int = 30
    batch_size: int = 16
    learning_rate: float = 5e-2
    step_penalty: float = 1.0
    T_min: int = 2
    T_max: int = 10
    n_samples: int = 100


def augmented_reward(r: float, T: int, cfg) -> float:
    """r - w_T * T / T_max (cfg provides step_penalty and T_max)."""
    return r - cfg.step_penalty * T / cfg.T_max


def gae_advantages(rewards, values, dones, gamma, lam, last_value=0.0):
    """Generalized advantage estimates plus value targets.

    With lam=1 this telescopes to (discounted return - value)."""
    rewards = np.asarray(rewards, float)
    values = np.asarray(values, float)
    dones = np.asarray(dones, bool)
    n = rewards.size
    adv = np.zeros(n)
    gae = 0.0
    for t in range(n - 1, -1, -1):
        next_v = last_value if t == n - 1 else values[t + 1]
        nonterminal = 0.0 if dones[t] else 1.0
        delta = rewards[t] + gamma * next_v * nonterminal - values[t]
        gae = delta + gamma * lam * nonterminal * gae
        adv[t] = gae
    return adv, adv + values


def clipped_surrogate(logp_new, logp_old, advantages, clip_ratio):
    """PPO clipped objective (as a loss) and its gradient wrt logp_new."""
    logp_new = np.asarray(logp_new, float)
    ratio = np.exp(logp_new - np.asarray(logp_old, float))
    adv = np.asarray(advantages, float)
    surr1 = ratio * adv
    surr2 = np.clip(ratio, 1.0 - clip_ratio, 1.0 + clip_ratio) * adv
    loss = -np.minimum(surr1, surr2).mean()
    in_band = (ratio >= 1.0 - clip_ratio) & (ratio <= 1.0 + clip_ratio)
    active = (surr1 <= surr2) | in_band
    grad = np.where(active, -adv * ratio, 0.0) / logp_new.size
    return float(loss), grad


def reinforce_train(pol, objective: TargetDensity, updates: int,
                    rng: np.random.Generator, cfg: ReinforceConfig | None = None):
    """REINFORCE with a batch-mean baseline on a static objective.

    Each episode is one full diffusion run with policy-sampled scheduling
    parameters; its return is the best terminal log-density in the final
    candidate batch minus the step-count penalty.
    """
    cfg = cfg or ReinforceConfig()
    obs = np.zeros(pol.obs_dim)
    opt = Adam(pol.net.params(), lr=cfg.learning_rate)
    curve = []
    for update in range(updates):
        actions, rewards, logps = [], [], []
        for _ in range(cfg.batch_size):
            action, logp = pol.sample(obs, rng)
            r = _diffusion_episode_reward(objective, pol.build_schedule(action),
                                          cfg.n_samples, rng)
            actions.append(action)
            rewards.append(augmented_reward(r, pol.action_T(action), cfg))
            logps.append(logp)
        rewards = np.asarray(rewards)
        coeff = -(rewards - rewards.mean()) / cfg.batch_size
        out, acts = pol.forward_cached(np.tile(obs, (cfg.batch_size, 1)))
        gout = pol.logprob_grad_out(out, actions) * coeff[:, None]
        grads, _ = pol.net.backward(acts, gout)
        opt.step(grads)
        pol.version += 1
        curve.append({
            "iteration": update,
            "mean_reward": float(rewards.mean()),
            "mean_T": float(np.mean([pol.action_T(a) for a in actions])),
            "mean_sigma": float(np.mean([pol.summary_value(a) for a in actions])),
            "policy_loss": float((coeff * np.asarray(logps)).sum()),
            "value_loss": np.nan,
        })
    return pol, curve


def avp_train(avp_pol: AvpPolicy, objective: TargetDensity, updates: int,
              rng: np.random.Generator, cfg: ReinforceConfig | None = None):
    """Identical protocol to reinforce_train with (beta0, beta1, T) heads."""
    return reinforce_train(avp_pol, objective, updates, rng, cfg)


def _diffusion_episode_reward(objective, sched, n_samples, rng):
    _, trace = run_mbd(objective, sched,
                       SamplerConfig(n_samples=n_samples, record_trace=True), rng=rng)
    return -trace[-1].best_cost / objective.temperature


def evaluate_policy_2d(pol, objective: TargetDensity, n_runs: int,
                       rng: np.random.Generator, n_samples: int = 100):
    """Run the policy's schedules on a static objective; returns final samples
    and summary stats (feasibility fraction, spatial std, mean T)."""
    obs = np.zeros(pol.obs_dim)
    finals = np.empty((n_runs, objective.dim))
    ts = np.empty(n_runs)
    sigmas = np.empty(n_runs)
    for k in range(n_runs):
        action, _ = pol.sample(obs, rng)
        y0, _ = run_mbd(objective, pol.build_schedule(action),
                        SamplerConfig(n_samples=n_samples), rng=rng)
        finals[k] = y0
        ts[k] = pol.action_T(action)
        sigmas[k] = pol.summary_value(action)
    if objective.constraints is not None:
        g = np.asarray(objective.constraints(finals))
        feasible_frac = float(np.mean(np.all(g <= 0.0, axis=-1)))
    else:
        feasible_frac = 1.0
    spread = float(np.sqrt(finals.var(axis=0).mean()))
    return {"finals": finals, "feasible_frac": feasible_frac, "spread": spread,
            "mean_T": float(ts.mean()), "mean_sigma": float(sigmas.mean())}


class AdaptiveMbdPlanner:
    """Receding-horizon planner that asks the policy for (T, sigma_max) at
    every step and runs LP-MBD with the resulting schedule."""

    name = "alp"

    def __init__(self, policy, env: TrackingEnv, horizon: int = 50,
                 n_samples: int = 100, plan_temperature: float = 1.0,
                 deterministic: bool = False):
        self.policy = policy
        self.env = env
        self.horizon = horizon
        self.n_samples = n_samples
        self.deterministic = deterministic
        self.target_builder = make_tracking_target_builder(env, horizon, plan_temperature)
        self.n_controls = 2
        self.last_logprob = 0.0

    def plan(self, state, rng: np.random.Generator):
        t0 = time.perf_counter()
        obs = observe(state, self.env.path, self.env.obstacle, self.env.cfg).as_array()
        if self.deterministic:
            action = self.policy.mode(obs)
            self.last_logprob = np.nan
        else:
            action, self.last_logprob = self.policy.sample(obs, rng)
        sched = self.policy.build_schedule(action)
        target = self.target_builder(state)
        y0, _ = run_mbd(target, sched, SamplerConfig(n_samples=self.n_samples), rng=rng)
        info = {"T": self.policy.action_T(action),
                "sigma": self.policy.summary_value(action),
                "action": action, "obs": obs,
                "plan_time_ms": (time.perf_counter() - t0) * 1e3}
        return y0[: self.n_controls], info

    def reset(self):
        pass


def ppo_train(pol, value_net: FeedforwardNet, env: TrackingEnv, ppo_cfg: PpoConfig,
              iterations: int, rng: np.random.Generator, horizon: int = 50,
              n_samples: int = 100, plan_temperature: float = 1.0, verbose: bool = False):
    """On-policy PPO over the scheduler policy with LP-MBD in the control loop.

    Per iteration: collect whole episodes into the rollout buffer with
    (T, sigma) sampled per step and the reward reshaped by the step-count
    penalty, then run clipped-surrogate epochs over minibatches and clear the
    buffer. Returns (pol, curve)."""
    planner = AdaptiveMbdPlanner(pol, env, horizon, n_samples, plan_temperature)
    pol_opt = Adam(pol.net.params(), lr=ppo_cfg.learning_rate)
    val_opt = Adam(value_net.params(), lr=ppo_cfg.value_lr)
    curve = []
    for it in range(iterations):
        buffer: list[Transition] = []
        episode_slices = []
        episode_rewards = []
        last_values = []
        for _ in range(ppo_cfg.episodes_per_iter):
            start = len(buffer)
            ep_reward = _collect_episode(pol, value_net, planner, env, ppo_cfg, rng, buffer)
            episode_slices.append((start, len(buffer)))
            episode_rewards.append(ep_reward)
            tail = buffer[-1]
            last_values.append(0.0 if tail.done else float(value_net.forward(tail.s_next)[0]))

        assert all(tr.version == pol.version for tr in buffer), "off-policy data in buffer"
        obs = np.array([tr.s for tr in buffer])
        actions = [tr.a for tr in buffer]
        logp_old = np.array([tr.logprob for tr in buffer])
        values = np.array([tr.value_est for tr in buffer])
        adv = np.empty(len(buffer))
        rets = np.empty(len(buffer))
        for (a, b), lv in zip(episode_slices, last_values):
            adv[a:b], rets[a:b] = gae_advantages(
                [tr.reward_aug for tr in buffer[a:b]], values[a:b],
                [tr.done for tr in buffer[a:b]],
                ppo_cfg.discount, ppo_cfg.gae_lambda, last_value=lv)
        adv = (adv - adv.mean()) / (adv.std() + 1e-8)

        p_loss = v_loss = 0.0
        idx_all = np.arange(len(buffer))
        for _ in range(ppo_cfg.epochs):
            rng.shuffle(idx_all)
            for lo in range(0, len(idx_all), ppo_cfg.minibatch_size):
                mb = idx_all[lo: lo + ppo_cfg.minibatch_size]
                mb_actions = [actions[i] for i in mb]
                out, acts = pol.forward_cached(obs[mb])
                logp_new = np.array(
                    [pol._action_logprob(out[i], mb_actions[i]) for i in range(len(mb))])
                p_loss, dlogp = clipped_surrogate(logp_new, logp_old[mb], adv[mb],
                                                  ppo_cfg.clip_ratio)
                gout = pol.logprob_grad_out(out, mb_actions) * dlogp[:, None]
                if ppo_cfg.entropy_coef > 0.0:
                    # loss includes -coef * H; _entropy_grad returns d(-H)/d out
                    gout += ppo_cfg.entropy_coef * _entropy_grad(pol, out) / len(mb)
                grads, _ = pol.net.backward(acts, gout)
                pol_opt.step(grads)

                v_out, v_acts = value_net.forward_cached(obs[mb])
                v_err = v_out[:, 0] - rets[mb]
                v_loss = float(np.mean(v_err**2))
                v_grads, _ = value_net.backward(v_acts, (2.0 * v_err / len(mb))[:, None])
                val_opt.step(v_grads)
        pol.version += 1
        curve.append({
            "iteration": it,
            "mean_reward": float(np.mean(episode_rewards)),
            "mean_T": float(np.mean([tr.a[0] for tr in buffer])),
            "mean_sigma": float(np.mean([pol.summary_value(tr.a) for tr in buffer])),
            "policy_loss": float(p_loss),
            "value_loss": float(v_loss),
        })
        if verbose:
            c = curve[-1]
            print(f"[ppo] iter {it}: reward {c['mean_reward']:.1f} "
                  f"T {c['mean_T']:.1f} sigma {c['mean_sigma']:.2f}")
    return pol, curve


def _collect_episode(pol, value_net, planner: AdaptiveMbdPlanner, env: TrackingEnv,
                     cfg: PpoConfig, rng: np.random.Generator, buffer: list[Transition]):
    """Appends one episode of transitions; returns the raw episode reward.

    Training episodes can start anywhere along the path and see the obstacle
    anywhere on it, so the policy keys on obstacle proximity rather than on
    course position and the sparse near-obstacle region gets enough coverage.
    Evaluation episodes use the course as configured."""
    from .vehicle_env import Rect

    start = int(rng.integers(len(env.path.points))) if cfg.random_starts else 0
    if cfg.random_obstacle:
        p = env.path.points[int(rng.integers(len(env.path.points)))]
        base = env.course.obstacle
        env.obstacle = Rect(float(p[0]), float(p[1]), base.hx, base.hy)
    state = env.reset(start_index=start)
    total = 0.0
    for _ in range(env.cfg.episode_len):
        y_first, pinfo = planner.plan(state, rng)
        u = physical_control(y_first, env.cfg)
        state, r, info = env.step(u)
        total += r
        obs_next = observe(state, env.path, env.obstacle, env.cfg).as_array()
        buffer.append(Transition(
            s=pinfo["obs"], a=pinfo["action"], logprob=planner.last_logprob, u=u,
            reward_aug=augmented_reward(r, pinfo["T"], cfg), s_next=obs_next,
            done=info["done"], value_est=float(value_net.forward(pinfo["obs"])[0]),
            version=pol.version))
        if info["done"]:
            break
    return total


def _entropy_grad(pol, out):
    """d(-entropy)/d out for the categorical head (continuous head omitted)."""
    k = pol.t_choices.size
    logp = _log_softmax(out[..., :k])
    p = np.exp(logp)
    g = np.zeros_like(out)
    g[..., :k] = p * (logp + 1.0) - p * np.sum(p * (logp + 1.0), axis=-1, keepdims=True)
    return g


def save_policy(pol, path, value_net: FeedforwardNet | None = None) -> None:
    """Versioned JSON checkpoint with a layer-size header."""
    blob = {
        "format_version": CHECKPOINT_VERSION,
        "kind": pol.kind,
        "obs_dim": pol.obs_dim,
        "t_choices": pol.t_choices.tolist(),
        "obs_scale": pol.obs_scale.tolist(),
        "layer_sizes": pol.net.sizes,
        "weights": [w.tolist() for w in pol.net.weights],
        "biases": [b.tolist() for b in pol.net.biases],
    }
    if isinstance(pol, SchedulerPolicy):
        blob["sigma_bounds"] = list(pol.sigma_bounds)
    if value_net is not None:
        blob["value_layer_sizes"] = value_net.sizes
        blob["value_weights"] = [w.tolist() for w in value_net.weights]
        blob["value_biases"] = [b.tolist() for b in value_net.biases]
    with open(path, "w") as f:
        json.dump(blob, f)


def load_policy(path):
    """Inverse of save_policy; returns (policy, value_net | None)."""
    with open(path) as f:
        blob = json.load(f)
    if blob["format_version"] != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {blob['format_version']}")
    hidden = tuple(blob["layer_sizes"][1:-1])
    if blob["kind"] == "alp":
        pol = SchedulerPolicy(blob["obs_dim"], blob["t_choices"],
                              sigma_bounds=tuple(blob["sigma_bounds"]), hidden=hidden,
                              obs_scale=np.array(blob["obs_scale"]))
    elif blob["kind"] == "avp":
        pol = AvpPolicy(blob["obs_dim"], blob["t_choices"], hidden=hidden,
                        obs_scale=np.array(blob["obs_scale"]))
    else:
        raise ValueError(f"unknown policy kind {blob['kind']!r}")
    pol.net.weights = [np.array(w) for w in blob["weights"]]
    pol.net.biases = [np.array(b) for b in blob["biases"]]
    value_net = None
    if "value_weights" in blob:
        value_net = FeedforwardNet(blob["value_layer_sizes"])
        value_net.weights = [np.array(w) for w in blob["value_weights"]]
        value_net.biases = [np.array(b) for b in blob["value_biases"]]
    return pol, value_net
