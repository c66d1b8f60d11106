# ppo.py
"""
Multi-objective PPO.

Rollouts keep the task and energy rewards apart and get one GAE estimate per channel, each
against its own value network. Two policy-update modes:

* scalarized: one clipped surrogate on A_task - lambda * A_energy;
* gradient-combining (pegrad, pcgrad_plus): L_R is the clipped surrogate on A_task minus the
  entropy bonus, L_E the clipped surrogate on -A_energy; both share the probability ratios
  and their gradients are merged by the combiner.
"""

from dataclasses import dataclass, field
from typing import List, Tuple

import numpy as np
from tqdm import tqdm

import autodiff as ad
from autodiff import Adam, Graph, NonFiniteError, no_grad
from benchmarking import Benchmarking
from combine import GradPair, make_combiner
from nets import SquashedGaussianPolicy, ValueNetwork, state_value
from utils.logger import setup_logger
from utils.metrics import MetricsLog

logger = setup_logger('ppo')

ADV_EPS = 1e-8


@dataclass(frozen=True)
class RolloutStep:
    state: np.ndarray
    action: np.ndarray
    pre_tanh: np.ndarray
    log_prob_old: float
    reward_task: float
    reward_energy: float
    value_task: float
    value_energy: float
    terminated: bool
    truncated: bool
    # value of the final observation of a truncated episode, per channel
    truncation_value_task: float = 0.0
    truncation_value_energy: float = 0.0

    def __post_init__(self):
        if not np.isfinite(self.log_prob_old):
            raise NonFiniteError("rollout step has a non-finite log-probability")
        if self.reward_energy < 0:
            raise ValueError(f"energy reward must be non-negative, got {self.reward_energy}")


@dataclass
class RolloutBuffer:
    capacity: int
    steps: List[RolloutStep] = field(default_factory=list)
    adv_task: np.ndarray = None
    adv_energy: np.ndarray = None
    returns_task: np.ndarray = None
    returns_energy: np.ndarray = None

    def __len__(self):
        return len(self.steps)

    @property
    def full(self):
        return len(self.steps) >= self.capacity

    def add(self, step):
        if self.full:
            raise ValueError(f"rollout buffer already holds {self.capacity} steps")
        self.steps.append(step)

    def column(self, name):
        return np.array([getattr(s, name) for s in self.steps], dtype=np.float64)

    def states(self):
        return np.stack([s.state for s in self.steps])

    def pre_tanh(self):
        return np.stack([np.asarray(s.pre_tanh).reshape(-1) for s in self.steps])

    def compute_advantages(self, last_value_task, last_value_energy, gamma, gae_lambda):
        terminated = self.column('terminated').astype(bool)
        truncated = self.column('truncated').astype(bool)
        values_task = self.column('value_task')
        values_energy = self.column('value_energy')
        self.adv_task = gae(self.column('reward_task'), values_task, last_value_task, terminated,
                            truncated, self.column('truncation_value_task'), gamma, gae_lambda)
        self.adv_energy = gae(self.column('reward_energy'), values_energy, last_value_energy,
                              terminated, truncated, self.column('truncation_value_energy'), gamma,
                              gae_lambda)
        self.returns_task = self.adv_task + values_task
        self.returns_energy = self.adv_energy + values_energy
        return self.adv_task, self.adv_energy

    def clear(self):
        self.steps = []
        self.adv_task = self.adv_energy = self.returns_task = self.returns_energy = None


@dataclass(frozen=True)
class PpoConfig:
    gamma: float = 0.99
    clip_eps: float = 0.2
    gae_lambda: float = 0.95
    rollout_length: int = 2048
    epochs: int = 10
    minibatch_size: int = 64
    entropy_coef: float = 0.0
    lr: float = 3e-4
    value_lr: float = 1e-3
    normalize_advantages: bool = True
    total_steps: int = 100000
    combiner: str = 'pegrad'
    lam: float = 0.0
    hidden_sizes: Tuple[int, ...] = (256, 256)
    activation: str = 'relu'
    eval_every: int = 5000
    eval_episodes: int = 50
    progress: bool = False

    def __post_init__(self):
        if not 0 < self.clip_eps < 1:
            raise ValueError(f"clip range must lie in (0, 1), got {self.clip_eps}")
        if not 0 <= self.gae_lambda <= 1:
            raise ValueError(f"gae_lambda must lie in [0, 1], got {self.gae_lambda}")
        if self.minibatch_size > self.rollout_length:
            raise ValueError("minibatch size exceeds the rollout length")


def gae(rewards, values, last_value, terminated, truncated=None, truncation_values=None,
        gamma=0.99, gae_lambda=0.95):
    """Generalised advantage estimates for one reward channel.

    A terminated step has no successor value; a truncated step bootstraps from the stored
    value of its final observation. Neither propagates advantages across the boundary.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    n = rewards.size
    terminated = np.asarray(terminated, dtype=bool)
    truncated = np.zeros(n, dtype=bool) if truncated is None else np.asarray(truncated, dtype=bool)
    truncation_values = np.zeros(n) if truncation_values is None else np.asarray(truncation_values, dtype=np.float64)
    if not (values.size == terminated.size == truncated.size == truncation_values.size == n):
        raise ValueError("gae inputs must all have the same length")

    advantages = np.zeros(n)
    running = 0.0
    for t in reversed(range(n)):
        if terminated[t]:
            next_value, carry = 0.0, 0.0
        elif truncated[t]:
            next_value, carry = truncation_values[t], 0.0
        else:
            next_value = values[t + 1] if t + 1 < n else float(last_value)
            carry = 1.0
        delta = rewards[t] + gamma * next_value - values[t]
        running = delta + gamma * gae_lambda * carry * running
        advantages[t] = running
    return advantages


def scalarized_advantage(adv_task, adv_energy, lam):
    adv_task = np.asarray(adv_task, dtype=np.float64)
    adv_energy = np.asarray(adv_energy, dtype=np.float64)
    if adv_task.shape != adv_energy.shape:
        raise ValueError(f"advantage shapes differ: {adv_task.shape} vs {adv_energy.shape}")
    return adv_task - lam * adv_energy


def normalize_advantages(adv):
    adv = np.asarray(adv, dtype=np.float64)
    return (adv - adv.mean()) / (adv.std() + ADV_EPS)


def clipped_surrogate(ratios, advantages, eps):
    """-E[min(r * A, clip(r, 1 - eps, 1 + eps) * A)]; gradient flows through ``ratios`` only."""
    ratios = ad.as_tensor(ratios)
    advantages = np.asarray(advantages, dtype=np.float64).reshape(ratios.shape)
    if not np.all(np.isfinite(ratios.data)):
        raise NonFiniteError("probability ratios are not finite")
    if np.any(ratios.data <= 0):
        raise ValueError("probability ratios must be positive")
    unclipped = ad.mul(ratios, advantages)
    clipped = ad.mul(ad.clamp(ratios, 1.0 - eps, 1.0 + eps), advantages)
    return ad.scale(ad.mean(ad.minimum(unclipped, clipped)), -1.0)


def probability_ratios(policy, states, pre_tanh, old_log_probs):
    new_log_probs = policy.log_prob(states, pre_tanh)
    return ad.exp(ad.sub(new_log_probs, np.asarray(old_log_probs).reshape(-1, 1)))


def _policy_loss(policy, states, pre_tanh, old_log_probs, advantages, eps, entropy_coef=0.0):
    loss = clipped_surrogate(probability_ratios(policy, states, pre_tanh, old_log_probs), advantages, eps)
    if entropy_coef:
        loss = ad.sub(loss, ad.scale(ad.mean(policy.entropy(states)), entropy_coef))
    return loss


def _value_step(network, optimizer, states, targets):
    with Graph():
        loss = ad.mean(ad.square(ad.sub(network.forward(states), targets.reshape(-1, 1))))
        grad = ad.backward(loss, network)
    optimizer.step(grad)
    return loss.item()


def ppo_update(policy, values, buffer, config, combiner, policy_optimizer, value_optimizers, rng):
    """Epochs x minibatches of clipped-surrogate policy steps plus per-channel value regression.

    ``values`` and ``value_optimizers`` map 'task'/'energy' to the value network and its Adam.
    Returns the mean losses and the last combiner diagnostics.
    """
    if buffer.adv_task is None:
        raise ValueError("advantages must be computed before the update")
    adv_task, adv_energy = buffer.adv_task, buffer.adv_energy
    if config.normalize_advantages:
        adv_task = normalize_advantages(adv_task)
        adv_energy = normalize_advantages(adv_energy)

    states = buffer.states()
    pre_tanh = buffer.pre_tanh()
    old_log_probs = buffer.column('log_prob_old')
    returns = {'task': buffer.returns_task, 'energy': buffer.returns_energy}
    scalarized = config.combiner == 'scalarized'
    total = scalarized_advantage(adv_task, adv_energy, config.lam) if scalarized else None

    history = {'actor_loss_task': [], 'actor_loss_energy': [], 'critic_loss_task': [], 'critic_loss_energy': []}
    diagnostics = {}
    n = len(buffer)
    for _ in range(config.epochs):
        order = rng.permutation(n)
        for start in range(0, n, config.minibatch_size):
            idx = order[start:start + config.minibatch_size]
            s, z, old = states[idx], pre_tanh[idx], old_log_probs[idx]
            if scalarized:
                with Graph():
                    loss = _policy_loss(policy, s, z, old, total[idx], config.clip_eps, config.entropy_coef)
                    grad = ad.backward(loss, policy)
                policy_optimizer.step(grad)
                history['actor_loss_task'].append(loss.item())
            else:
                with Graph():
                    loss_task = _policy_loss(policy, s, z, old, adv_task[idx], config.clip_eps,
                                             config.entropy_coef)
                with Graph():
                    loss_energy = _policy_loss(policy, s, z, old, -adv_energy[idx], config.clip_eps)
                output = combiner(GradPair(ad.backward(loss_task, policy), ad.backward(loss_energy, policy)))
                policy_optimizer.step(output.direction)
                history['actor_loss_task'].append(loss_task.item())
                history['actor_loss_energy'].append(loss_energy.item())
                diagnostics = output.diagnostics.as_row()
            for channel in ('task', 'energy'):
                history[f'critic_loss_{channel}'].append(
                    _value_step(values[channel], value_optimizers[channel], s, returns[channel][idx]))

    summary = {key: float(np.mean(vals)) for key, vals in history.items() if vals}
    summary.update(diagnostics)
    return summary


class PpoAgent:
    """Policy, value networks, optimizers and rollout storage of one training run."""

    def __init__(self, env_spec, config, seed=0):
        self.config = config
        self.env_spec = env_spec
        init_seq, act_seq, update_seq = np.random.SeedSequence(seed).spawn(3)
        init_rng = np.random.default_rng(init_seq)
        self.act_rng = np.random.default_rng(act_seq)
        self.update_rng = np.random.default_rng(update_seq)
        self.policy = SquashedGaussianPolicy(env_spec.obs_dim, env_spec.act_dim, env_spec.action_low,
                                             env_spec.action_high, config.hidden_sizes,
                                             config.activation, init_rng)
        self.values = {channel: ValueNetwork(env_spec.obs_dim, config.hidden_sizes, config.activation, init_rng)
                       for channel in ('task', 'energy')}
        self.policy_optimizer = Adam(self.policy, config.lr)
        self.value_optimizers = {channel: Adam(net, config.value_lr) for channel, net in self.values.items()}
        self.combiner = make_combiner(config.combiner, config.lam)
        self.buffer = RolloutBuffer(config.rollout_length)

    def value_estimates(self, obs):
        return (float(state_value(self.values['task'], obs)[0, 0]),
                float(state_value(self.values['energy'], obs)[0, 0]))

    def act(self, obs):
        """Stochastic action plus the pre-squash sample and its log-probability."""
        action, _, pre_tanh = self.policy.sample(obs, self.act_rng)
        with no_grad():
            log_prob = self.policy.log_prob(obs, pre_tanh).item()
        return action[0], pre_tanh[0], log_prob

    def update(self, last_obs, last_done):
        cfg = self.config
        last_task, last_energy = (0.0, 0.0) if last_done else self.value_estimates(last_obs)
        self.buffer.compute_advantages(last_task, last_energy, cfg.gamma, cfg.gae_lambda)
        summary = ppo_update(self.policy, self.values, self.buffer, cfg, self.combiner,
                             self.policy_optimizer, self.value_optimizers, self.update_rng)
        self.buffer.clear()
        return summary


def train(env, config, seed=0, metrics=None, agent=None):
    """Run multi-objective PPO on ``env`` for ``config.total_steps`` steps."""
    metrics = metrics if metrics is not None else MetricsLog()
    agent = agent if agent is not None else PpoAgent(env.spec, config, seed)
    evaluator = Benchmarking(env.spec.env_id, env.spec.energy_mode, config.eval_episodes)
    logger.info(f"PPO run on {env.spec.env_id}: seed={seed} combiner={config.combiner} "
                f"lambda={config.lam} steps={config.total_steps}")

    obs = env.reset(seed=seed)
    episode_task = 0.0
    episode_energy = 0.0
    latest = {}
    for step in tqdm(range(1, config.total_steps + 1), desc=f'ppo seed {seed}', disable=not config.progress):
        value_task, value_energy = agent.value_estimates(obs)
        action, pre_tanh, log_prob = agent.act(obs)
        result = env.step(action)
        trunc_task, trunc_energy = (agent.value_estimates(result.next_obs)
                                    if result.truncated and not result.terminated else (0.0, 0.0))
        agent.buffer.add(RolloutStep(obs, action, pre_tanh, log_prob, result.reward.task,
                                     result.reward.energy, value_task, value_energy,
                                     result.terminated, result.truncated, trunc_task, trunc_energy))
        episode_task += result.reward.task
        episode_energy += result.reward.energy
        obs = result.next_obs
        done = result.terminated or result.truncated

        if agent.buffer.full:
            latest.update(agent.update(obs, done))

        if done:
            metrics.log(step, episode_return_task=episode_task, episode_energy_sum=episode_energy, **latest)
            obs = env.reset()
            episode_task = 0.0
            episode_energy = 0.0

        if step % config.eval_every == 0:
            summary = evaluator.evaluate(agent.policy, seed)
            metrics.log(step, eval_return_mean=summary.mean_return, eval_energy_mean=summary.mean_energy,
                        **latest)
            logger.info(f"seed {seed} step {step}: eval return {summary.mean_return:.3f}, "
                        f"energy {summary.mean_energy:.3f}")

    if env.clamped_actions:
        logger.info(f"{env.spec.env_id}: {env.clamped_actions} actions clamped to bounds")
    return metrics
