"""Adaptation layer: simulated control environment, clipped-surrogate policy
optimization with GAE, the multi-objective reward, and context-aware
exploration switching."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import nn
from .datagen import SystemState

ACTION_BOUND = 5.0
LOG_STD_MIN, LOG_STD_MAX = -5.0, 2.0
POLICY_MAGIC = b"TWLPOL01"

STATE_ORDER = tuple(s.value for s in SystemState)


@dataclass
class PlantDynamics:
    """First-order sensor dynamics in z-score space.

    z' = rho * z + action_gain * adjustment + noise.  Episodes end after
    episode_len steps or when any |z| exceeds the safety limit.  Exogenous
    disturbance episodes push one sensor for several consecutive steps, so
    their onset and depth are visible in the state.
    """

    rho: float = 0.9
    action_gain: float = 0.5
    noise_std: float = 0.1
    safety_limit: float = 6.0
    episode_len: int = 200
    disturbance_prob: float = 0.05
    disturbance_push: float = 2.5
    disturbance_len: tuple[int, int] = (5, 15)
    # Wear coupling: disturbances arrive (1 + wear_factor * hours) times more
    # often and push (0.7 + 0.6 * hours) times harder on aged equipment, an
    # uncontrollable but state-visible effect the value function can learn.
    wear_factor: float = 4.0
    deviation_z: float = 2.0


@dataclass
class RewardWeights:
    efficiency: float = 0.5
    satisfaction: float = 0.3
    safety: float = 0.2

    def validate(self) -> None:
        total = self.efficiency + self.satisfaction + self.safety
        if abs(total - 1.0) > 1e-9:
            raise ValueError("reward weights must sum to 1")

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.efficiency, self.satisfaction, self.safety)


@dataclass
class RewardComponents:
    efficiency: float
    satisfaction: float
    safety: float
    total: float
    weights: tuple[float, float, float]

    def to_dict(self) -> dict:
        return {
            "efficiency": self.efficiency,
            "satisfaction": self.satisfaction,
            "safety": self.safety,
            "total": self.total,
            "weights": list(self.weights),
        }


@dataclass
class EnvState:
    z: np.ndarray  # (3,) sensor z-scores: temperature, vibration, pressure
    operational_hours: float
    efficiency_index: float
    state_onehot: np.ndarray  # (4,) over STATE_ORDER
    rule_bits: np.ndarray  # fixed width = knowledge-base capacity
    deviation: bool

    def vector(self) -> np.ndarray:
        return np.concatenate(
            [
                self.z,
                [self.operational_hours, self.efficiency_index],
                self.state_onehot,
                self.rule_bits,
                [1.0 if self.deviation else 0.0],
            ]
        )

    @staticmethod
    def dim(kb_capacity: int) -> int:
        return 3 + 2 + 4 + kb_capacity + 1


@dataclass
class Action:
    adjustments: np.ndarray  # (3,) clamped to [-ACTION_BOUND, ACTION_BOUND]
    maintenance: int  # 0 none, 1 schedule
    mode: int  # 0 stay, 1 switch_to_maintenance
    raw: np.ndarray | None = None  # pre-clamp continuous sample (log-prob basis)

    def magnitude(self) -> float:
        return float(np.abs(self.adjustments).sum())

    def to_dict(self) -> dict:
        return {
            "temperature_adjustment": float(self.adjustments[0]),
            "vibration_adjustment": float(self.adjustments[1]),
            "pressure_adjustment": float(self.adjustments[2]),
            "maintenance": "schedule" if self.maintenance else "none",
            "mode": "switch_to_maintenance" if self.mode else "stay",
        }


def efficiency_from_z(z: np.ndarray) -> float:
    """1 at the operating point, falling to 0 at a mean |z| of 3."""
    return float(np.clip(1.0 - np.mean(np.abs(z)) / 3.0, 0.0, 1.0))


def compute_reward(
    state: EnvState,
    action: Action,
    next_state: EnvState,
    operator_pref: float = 1.0,
    weights: RewardWeights | None = None,
) -> RewardComponents:
    """Weighted blend of efficiency, operator satisfaction, and safety."""
    if not 0.0 <= operator_pref <= 1.0:
        raise ValueError("operator preference must lie in [0, 1]")
    weights = weights or RewardWeights()
    weights.validate()
    efficiency = next_state.efficiency_index
    satisfaction = operator_pref
    worst = float(np.max(np.abs(next_state.z)))
    safety = float(np.clip(1.0 - max(0.0, (worst - 3.0) / 3.0), 0.0, 1.0))
    total = (
        weights.efficiency * efficiency
        + weights.satisfaction * satisfaction
        + weights.safety * safety
    )
    return RewardComponents(efficiency, satisfaction, safety, total, weights.as_tuple())


def env_step(
    state: EnvState,
    action: Action,
    plant: PlantDynamics,
    rng: np.random.Generator | None,
    operator_pref: float = 1.0,
    weights: RewardWeights | None = None,
    disturbance: np.ndarray | None = None,
) -> tuple[EnvState, RewardComponents, bool]:
    """Advance the plant one step under the given corrective action.

    Passing rng=None runs the noise-free dynamics.  `disturbance` adds an
    exogenous z-shift (injected events).
    """
    if not np.all(np.isfinite(action.adjustments)):
        raise ValueError("action contains non-finite adjustments")
    adj = np.clip(action.adjustments, -ACTION_BOUND, ACTION_BOUND)
    noise = rng.normal(0.0, plant.noise_std, size=3) if rng is not None else np.zeros(3)
    z = plant.rho * state.z + plant.action_gain * adj + noise
    if disturbance is not None:
        z = z + disturbance

    onehot = state.state_onehot.copy()
    if action.maintenance == 1 or action.mode == 1:
        # Scheduled maintenance: vibration recovers and the mode switches.
        z[1] *= 0.5
        onehot = np.zeros(4)
        onehot[STATE_ORDER.index(SystemState.MAINTENANCE.value)] = 1.0
    elif onehot[STATE_ORDER.index(SystemState.MAINTENANCE.value)] == 1.0:
        onehot = np.zeros(4)
        onehot[STATE_ORDER.index(SystemState.NORMAL.value)] = 1.0

    next_state = EnvState(
        z=z,
        operational_hours=state.operational_hours,
        efficiency_index=efficiency_from_z(z),
        state_onehot=onehot,
        rule_bits=state.rule_bits.copy(),
        deviation=bool(np.any(np.abs(z) >= plant.deviation_z)),
    )
    done = bool(np.any(np.abs(z) > plant.safety_limit))
    reward = compute_reward(state, action, next_state, operator_pref, weights)
    return next_state, reward, done


class ControlEnv:
    """Self-contained training environment with seeded exogenous disturbances."""

    def __init__(
        self,
        plant: PlantDynamics | None = None,
        kb_capacity: int = 32,
        seed: int = 0,
        weights: RewardWeights | None = None,
    ) -> None:
        self.plant = plant or PlantDynamics()
        self.kb_capacity = kb_capacity
        self.weights = weights or RewardWeights()
        self.rng = np.random.default_rng(seed)
        self.operator_pref = 1.0
        self.state: EnvState | None = None
        self.last_truncated = False  # episode ended by time limit, not safety
        self._steps = 0
        self._event_push: np.ndarray | None = None
        self._event_steps_left = 0

    def reset(self) -> EnvState:
        onehot = np.zeros(4)
        onehot[STATE_ORDER.index(SystemState.NORMAL.value)] = 1.0
        z = self.rng.normal(0.0, 0.5, size=3)
        self.state = EnvState(
            z=z,
            operational_hours=float(self.rng.uniform(0.0, 1.0)),
            efficiency_index=efficiency_from_z(z),
            state_onehot=onehot,
            rule_bits=np.zeros(self.kb_capacity),
            deviation=bool(np.any(np.abs(z) >= self.plant.deviation_z)),
        )
        self._steps = 0
        self._event_push = None
        self._event_steps_left = 0
        return self.state

    def inject_disturbance(self, push: np.ndarray, steps: int) -> None:
        """Start an exogenous disturbance episode (scenario injection)."""
        self._event_push = np.asarray(push, dtype=float)
        self._event_steps_left = int(steps)

    def step(self, action: Action) -> tuple[EnvState, RewardComponents, bool]:
        if self.state is None:
            raise RuntimeError("environment must be reset before stepping")
        onset_prob = self.plant.disturbance_prob * (
            1.0 + self.plant.wear_factor * self.state.operational_hours
        )
        if self._event_steps_left <= 0 and self.rng.random() < onset_prob:
            lo, hi = self.plant.disturbance_len
            push = np.zeros(3)
            sensor = int(self.rng.integers(0, 3))
            sign = 1.0 if self.rng.random() < 0.5 else -1.0
            wear_push = 0.7 + 0.6 * self.state.operational_hours
            push[sensor] = (
                sign * self.rng.uniform(0.5, 1.2) * self.plant.disturbance_push * wear_push
            )
            self.inject_disturbance(push, int(self.rng.integers(lo, hi + 1)))
        disturbance = None
        if self._event_steps_left > 0:
            disturbance = self._event_push
            self._event_steps_left -= 1
        next_state, reward, done = env_step(
            self.state,
            action,
            self.plant,
            self.rng,
            operator_pref=self.operator_pref,
            weights=self.weights,
            disturbance=disturbance,
        )
        self._steps += 1
        self.last_truncated = False
        if self._steps >= self.plant.episode_len and not done:
            done = True
            self.last_truncated = True
        self.state = next_state
        return next_state, reward, done


LOG_2PI = math.log(2.0 * math.pi)


class PolicyNetwork:
    """Shared trunk with continuous means, learned log-std, discrete logits,
    and a scalar value head."""

    def __init__(
        self,
        state_dim: int,
        hidden: tuple[int, int, int] = (256, 128, 64),
        seed: int = 0,
    ) -> None:
        self.state_dim = state_dim
        self.hidden = tuple(hidden)
        self.seed = seed
        rng = np.random.default_rng(seed)
        store = nn.ParamStore()
        dims = [state_dim, *hidden]
        self.trunk: list = []
        for i in range(len(hidden)):
            self.trunk.append(nn.Dense(store, f"trunk{i}", dims[i], dims[i + 1], rng))
            self.trunk.append(nn.ReLU())
        top = hidden[-1]
        self.mu_head = nn.Dense(store, "mu", top, 3, rng)
        self.log_std_name = store.register("log_std", np.full(3, -0.5))
        self.maint_head = nn.Dense(store, "maint", top, 2, rng)
        self.mode_head = nn.Dense(store, "mode", top, 2, rng)
        self.value_head = nn.Dense(store, "value", top, 1, rng)
        store.finalize()
        self.store = store

    @property
    def param_count(self) -> int:
        return self.store.size

    def log_std(self) -> np.ndarray:
        return np.clip(self.store.view("log_std"), LOG_STD_MIN, LOG_STD_MAX)

    def clamp_log_std(self) -> None:
        view = self.store.view("log_std")
        view[...] = np.clip(view, LOG_STD_MIN, LOG_STD_MAX)

    def forward(self, states: np.ndarray) -> dict[str, np.ndarray]:
        out = states
        for layer in self.trunk:
            out = layer.forward(out)
        return {
            "trunk": out,
            "mu": self.mu_head.forward(out),
            "log_std": self.log_std(),
            "maint_logits": self.maint_head.forward(out),
            "mode_logits": self.mode_head.forward(out),
            "value": self.value_head.forward(out)[:, 0],
        }

    def value(self, state_vec: np.ndarray) -> float:
        return float(self.forward(state_vec[None, :])["value"][0])

    def log_prob(
        self,
        out: dict[str, np.ndarray],
        raw_actions: np.ndarray,
        maint: np.ndarray,
        mode: np.ndarray,
    ) -> np.ndarray:
        mu, log_std = out["mu"], out["log_std"]
        sigma = np.exp(log_std)
        gauss = -0.5 * (((raw_actions - mu) / sigma) ** 2) - log_std - 0.5 * LOG_2PI
        lp = gauss.sum(axis=1)
        lp += log_softmax(out["maint_logits"])[np.arange(len(maint)), maint]
        lp += log_softmax(out["mode_logits"])[np.arange(len(mode)), mode]
        return lp

    def entropy(self, out: dict[str, np.ndarray]) -> np.ndarray:
        gauss = (out["log_std"] + 0.5 * (LOG_2PI + 1.0)).sum()
        ent = np.full(out["mu"].shape[0], gauss)
        for key in ("maint_logits", "mode_logits"):
            logp = log_softmax(out[key])
            p = np.exp(logp)
            ent += -(p * logp).sum(axis=1)
        return ent

    def save(self, path: str | Path) -> None:
        meta = {
            "state_dim": self.state_dim,
            "hidden": list(self.hidden),
            "seed": self.seed,
            "param_count": self.param_count,
            "layout": {
                name: [start, stop, list(shape)]
                for name, (start, stop, shape) in self.store.layout().items()
            },
        }
        nn.write_checkpoint(path, POLICY_MAGIC, meta, {"params": self.store.vector})

    @classmethod
    def load(cls, path: str | Path) -> "PolicyNetwork":
        meta, arrays = nn.read_checkpoint(path, POLICY_MAGIC)
        policy = cls(meta["state_dim"], tuple(meta["hidden"]), seed=meta["seed"])
        policy.store.set_vector(arrays["params"])
        return policy


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def select_action(
    policy: PolicyNetwork,
    state_vec: np.ndarray,
    deviation: bool,
    rng: np.random.Generator,
) -> tuple[Action, float]:
    """Context-aware exploration: stochastic while a deviation is active,
    deterministic (mean / argmax) otherwise.  The log-probability of the
    realized action under the stochastic distribution is reported in both
    modes."""
    out = policy.forward(state_vec[None, :])
    mu = out["mu"][0]
    sigma = np.exp(out["log_std"])
    if deviation:
        raw = mu + sigma * rng.standard_normal(3)
        maint = _sample_categorical(out["maint_logits"][0], rng)
        mode = _sample_categorical(out["mode_logits"][0], rng)
    else:
        raw = mu.copy()
        maint = int(np.argmax(out["maint_logits"][0]))
        mode = int(np.argmax(out["mode_logits"][0]))
    lp = policy.log_prob(out, raw[None, :], np.array([maint]), np.array([mode]))[0]
    action = Action(
        adjustments=np.clip(raw, -ACTION_BOUND, ACTION_BOUND),
        maintenance=maint,
        mode=mode,
        raw=raw,
    )
    return action, float(lp)


def _sample_categorical(logits: np.ndarray, rng: np.random.Generator) -> int:
    p = np.exp(logits - logits.max())
    p /= p.sum()
    return int(rng.choice(len(p), p=p))


@dataclass
class Trajectory:
    """Rollout storage plus GAE outputs."""

    states: list = field(default_factory=list)
    raw_actions: list = field(default_factory=list)
    maint: list = field(default_factory=list)
    mode: list = field(default_factory=list)
    log_probs: list = field(default_factory=list)
    values: list = field(default_factory=list)
    rewards: list = field(default_factory=list)
    raw_rewards: list = field(default_factory=list)
    dones: list = field(default_factory=list)
    deviations: list = field(default_factory=list)
    advantages: np.ndarray | None = None
    returns: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.rewards)

    def arrays(self) -> dict[str, np.ndarray]:
        return {
            "states": np.asarray(self.states),
            "raw_actions": np.asarray(self.raw_actions),
            "maint": np.asarray(self.maint, dtype=np.int64),
            "mode": np.asarray(self.mode, dtype=np.int64),
            "log_probs": np.asarray(self.log_probs),
            "values": np.asarray(self.values),
            "rewards": np.asarray(self.rewards),
            "dones": np.asarray(self.dones, dtype=bool),
        }


def gae(
    rewards: Sequence[float],
    values: Sequence[float],
    dones: Sequence[bool],
    last_value: float = 0.0,
    gamma: float = 0.99,
    lam: float = 0.95,
) -> tuple[np.ndarray, np.ndarray]:
    """Recursive generalized advantage estimation.

    The bootstrap value applies past the final step; terminal steps use a
    bootstrap of 0 by construction of the (1 - done) masks.
    """
    rewards = np.asarray(rewards, dtype=float)
    values = np.asarray(values, dtype=float)
    dones = np.asarray(dones, dtype=bool)
    t = rewards.shape[0]
    if t == 0:
        raise ValueError("cannot run GAE on an empty trajectory")
    if not (values.shape[0] == t and dones.shape[0] == t):
        raise ValueError("trajectory arrays must share one length")
    next_values = np.append(values[1:], last_value)
    not_done = 1.0 - dones.astype(float)
    advantages = np.empty(t)
    acc = 0.0
    for i in reversed(range(t)):
        delta = rewards[i] + gamma * next_values[i] * not_done[i] - values[i]
        acc = delta + gamma * lam * not_done[i] * acc
        advantages[i] = acc
    returns = advantages + values
    return advantages, returns


def clipped_surrogate(
    ratio: np.ndarray | float, advantage: np.ndarray | float, clip: float
) -> np.ndarray | float:
    """Per-sample clipped objective term: min(r*A, clip(r, 1-eps, 1+eps)*A)."""
    ratio = np.asarray(ratio, dtype=float)
    advantage = np.asarray(advantage, dtype=float)
    clipped = np.clip(ratio, 1.0 - clip, 1.0 + clip)
    out = np.minimum(ratio * advantage, clipped * advantage)
    return float(out) if out.ndim == 0 else out


@dataclass
class PPOConfig:
    clip: float = 0.2
    entropy_beta: float = 0.01
    learning_rate: float = 1e-3
    epochs: int = 10
    minibatch: int = 64
    gamma: float = 0.99
    lam: float = 0.95
    value_coef: float = 0.5
    grad_clip: float = 0.5
    # Rewards are scaled by ~(1 - gamma) before GAE so discounted returns sit
    # near unit range and the value head can reach them; advantages are
    # normalized afterwards, and explained variance is scale-invariant, so
    # the policy objective is unaffected.  Learning curves report raw rewards.
    reward_scale: float = 0.01


def explained_variance(returns: np.ndarray, values: np.ndarray) -> float:
    var = float(np.var(returns))
    if var == 0.0:
        return 0.0
    return 1.0 - float(np.var(returns - values)) / var


def _ppo_loss_and_grads(
    policy: PolicyNetwork,
    batch: dict[str, np.ndarray],
    cfg: PPOConfig,
) -> float:
    """One minibatch: analytic gradient of the full PPO objective
    (negated clipped surrogate, entropy bonus, value regression)."""
    policy.store.zero_grads()
    out = policy.forward(batch["states"])
    m = batch["states"].shape[0]
    mu, log_std = out["mu"], out["log_std"]
    sigma = np.exp(log_std)
    a = batch["raw_actions"]
    adv = batch["advantages"]

    logp = policy.log_prob(out, a, batch["maint"], batch["mode"])
    ratio = np.exp(logp - batch["log_probs"])
    surr = clipped_surrogate(ratio, adv, cfg.clip)
    entropy = policy.entropy(out)
    v = out["value"]
    value_err = v - batch["returns"]
    loss = (
        -float(np.mean(surr))
        - cfg.entropy_beta * float(np.mean(entropy))
        + cfg.value_coef * float(np.mean(value_err**2))
    )
    if not np.isfinite(loss):
        return loss

    # d loss / d logp: the min() picks the unclipped branch (gradient A*r) or
    # the clipped branch (gradient A*r inside the clip window, 0 outside).
    unclipped = ratio * adv
    clipped = np.clip(ratio, 1.0 - cfg.clip, 1.0 + cfg.clip) * adv
    use_unclipped = unclipped <= clipped
    inside = (ratio > 1.0 - cfg.clip) & (ratio < 1.0 + cfg.clip)
    dsurr_dratio = np.where(use_unclipped, adv, adv * inside)
    dlogp = -(dsurr_dratio * ratio) / m

    # Continuous head.
    inv_var = 1.0 / (sigma**2)
    dmu = dlogp[:, None] * (a - mu) * inv_var
    dlogstd = (dlogp[:, None] * (((a - mu) ** 2) * inv_var - 1.0)).sum(axis=0)
    dlogstd += -cfg.entropy_beta  # mean entropy contributes 1 per coordinate

    # Discrete heads: log-prob of the taken class plus entropy bonus.
    dmaint = _categorical_grad(out["maint_logits"], batch["maint"], dlogp, cfg.entropy_beta, m)
    dmode = _categorical_grad(out["mode_logits"], batch["mode"], dlogp, cfg.entropy_beta, m)

    dvalue = (cfg.value_coef * 2.0 * value_err / m)[:, None]

    dtrunk = policy.mu_head.backward(dmu)
    dtrunk += policy.maint_head.backward(dmaint)
    dtrunk += policy.mode_head.backward(dmode)
    dtrunk += policy.value_head.backward(dvalue)
    policy.store.grad("log_std")[...] += dlogstd
    for layer in reversed(policy.trunk):
        dtrunk = layer.backward(dtrunk)
    return loss


def _categorical_grad(
    logits: np.ndarray,
    taken: np.ndarray,
    dlogp: np.ndarray,
    beta: float,
    m: int,
) -> np.ndarray:
    logp = log_softmax(logits)
    p = np.exp(logp)
    onehot = np.zeros_like(p)
    onehot[np.arange(len(taken)), taken] = 1.0
    grad = dlogp[:, None] * (onehot - p)
    ent = -(p * logp).sum(axis=1, keepdims=True)
    dent_dlogits = -p * (logp + ent)
    grad += -(beta / m) * dent_dlogits
    return grad


def ppo_update(
    policy: PolicyNetwork,
    trajectory: Trajectory,
    cfg: PPOConfig,
    rng: np.random.Generator | None = None,
    optimizer: nn.Adam | None = None,
) -> dict[str, float]:
    """Several epochs of minibatch ascent on the clipped objective.

    Advantages are normalized per batch; a non-finite loss aborts the update
    and restores the previous parameters.
    """
    if len(trajectory) == 0:
        raise ValueError("cannot update from an empty trajectory")
    if trajectory.advantages is None or trajectory.returns is None:
        raise ValueError("run GAE before the policy update")
    rng = rng or np.random.default_rng(0)
    data = trajectory.arrays()
    adv = trajectory.advantages
    adv = (adv - adv.mean()) / (adv.std() + 1e-8)
    returns = trajectory.returns

    ev = explained_variance(returns, data["values"])
    before = policy.store.get_vector()
    optimizer = optimizer or nn.Adam(policy.store, lr=cfg.learning_rate)
    n = len(trajectory)
    last_loss = 0.0
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.minibatch):
            idx = order[start : start + cfg.minibatch]
            batch = {
                "states": data["states"][idx],
                "raw_actions": data["raw_actions"][idx],
                "maint": data["maint"][idx],
                "mode": data["mode"][idx],
                "log_probs": data["log_probs"][idx],
                "advantages": adv[idx],
                "returns": returns[idx],
            }
            loss = _ppo_loss_and_grads(policy, batch, cfg)
            if not np.isfinite(loss):
                policy.store.set_vector(before)
                return {
                    "aborted": 1.0,
                    "explained_variance": ev,
                    "entropy": float("nan"),
                    "loss": float(loss),
                }
            nn.clip_grad_norm(policy.store, cfg.grad_clip)
            optimizer.step()
            policy.clamp_log_std()
            last_loss = loss
    out = policy.forward(data["states"])
    return {
        "aborted": 0.0,
        "explained_variance": ev,
        "entropy": float(np.mean(policy.entropy(out))),
        "loss": last_loss,
    }


@dataclass
class LearningCurvePoint:
    iteration: int
    timesteps: int
    mean_reward: float
    explained_variance: float
    entropy: float


def export_learning_curve(curve: Sequence[LearningCurvePoint], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "timesteps", "mean_reward", "explained_variance", "entropy"])
        for p in curve:
            writer.writerow([p.iteration, p.timesteps, p.mean_reward, p.explained_variance, p.entropy])


def iteration_count(total_timesteps: int, rollout_len: int) -> int:
    return math.ceil(total_timesteps / rollout_len)


def collect_rollout(
    env: ControlEnv,
    policy: PolicyNetwork,
    rollout_len: int,
    rng: np.random.Generator,
    gamma: float = 0.99,
    reward_scale: float = 1.0,
) -> tuple[Trajectory, float]:
    """Gather one on-policy rollout; returns the bootstrap value for the
    final state (0 when the episode just terminated).

    Training rollouts always sample from the policy distribution; the
    deterministic exploit mode is an inference-time behavior of the control
    loop.  Time-limit episode ends are bootstrapped so value targets stay
    time-homogeneous."""
    traj = Trajectory()
    state = env.state if env.state is not None else env.reset()
    done_last = False
    for _ in range(rollout_len):
        vec = state.vector()
        action, logp = select_action(policy, vec, deviation=True, rng=rng)
        value = policy.value(vec)
        try:
            next_state, reward, done = env.step(action)
        except Exception:
            # Environment failure: truncate with a bootstrap from the last
            # intact state.
            break
        reward_total = reward.total * reward_scale
        if done and env.last_truncated:
            reward_total += gamma * policy.value(next_state.vector())
        traj.states.append(vec)
        traj.raw_actions.append(action.raw)
        traj.maint.append(action.maintenance)
        traj.mode.append(action.mode)
        traj.log_probs.append(logp)
        traj.values.append(value)
        traj.rewards.append(reward_total)
        traj.raw_rewards.append(reward.total)
        traj.dones.append(done)
        traj.deviations.append(state.deviation)
        done_last = done
        state = env.reset() if done else next_state
    bootstrap = 0.0 if done_last else policy.value(state.vector())
    return traj, bootstrap


def train_agent(
    env: ControlEnv,
    policy: PolicyNetwork,
    total_timesteps: int,
    rollout_len: int = 2048,
    seed: int = 0,
    cfg: PPOConfig | None = None,
) -> tuple[PolicyNetwork, list[LearningCurvePoint]]:
    """Alternate rollout collection and clipped-objective updates."""
    if total_timesteps < rollout_len:
        raise ValueError("total_timesteps must be at least one rollout")
    cfg = cfg or PPOConfig()
    rng = np.random.default_rng(seed)
    iterations = iteration_count(total_timesteps, rollout_len)
    curve: list[LearningCurvePoint] = []
    optimizer = nn.Adam(policy.store, lr=cfg.learning_rate)
    env.reset()
    for it in range(1, iterations + 1):
        traj, bootstrap = collect_rollout(
            env, policy, rollout_len, rng, gamma=cfg.gamma, reward_scale=cfg.reward_scale
        )
        if len(traj) == 0:
            break
        traj.advantages, traj.returns = gae(
            traj.rewards, traj.values, traj.dones, bootstrap, cfg.gamma, cfg.lam
        )
        stats = ppo_update(policy, traj, cfg, rng, optimizer=optimizer)
        curve.append(
            LearningCurvePoint(
                iteration=it,
                timesteps=it * rollout_len,
                mean_reward=float(np.mean(traj.raw_rewards)),
                explained_variance=stats["explained_variance"],
                entropy=stats["entropy"],
            )
        )
    return policy, curve


def deviation_action_magnitude(
    policy: PolicyNetwork,
    env: ControlEnv,
    n_states: int = 200,
    seed: int = 123,
) -> float:
    """Mean deterministic action magnitude over sampled deviation states."""
    rng = np.random.default_rng(seed)
    magnitudes = []
    state = env.reset()
    while len(magnitudes) < n_states:
        kick = np.zeros(3)
        kick[int(rng.integers(0, 3))] = rng.uniform(2.0, 4.0) * (
            1.0 if rng.random() < 0.5 else -1.0
        )
        state = EnvState(
            z=kick,
            operational_hours=state.operational_hours,
            efficiency_index=efficiency_from_z(kick),
            state_onehot=state.state_onehot,
            rule_bits=state.rule_bits,
            deviation=True,
        )
        action, _ = select_action(policy, state.vector(), deviation=False, rng=rng)
        magnitudes.append(action.magnitude())
    return float(np.mean(magnitudes))
