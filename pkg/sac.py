# sac.py
"""
Multi-objective Soft Actor-Critic.

One critic per reward channel (task, energy), each trained on its own soft Bellman target.
The actor objective is split in two losses evaluated on the same minibatch and the same
reparameterisation noise:

    L_R = E[alpha * log pi(a|s) - Q_task(s, a)]
    L_E = E[alpha * log pi(a|s) + Q_energy(s, a)]

Their gradients are merged by a combiner into the single direction given to Adam.
"""

from dataclasses import dataclass
from typing import Tuple

import numpy as np
from tqdm import tqdm

import autodiff as ad
from autodiff import Adam, Graph, no_grad
from benchmarking import Benchmarking
from combine import GradPair, make_combiner
from nets import QNetwork, SquashedGaussianPolicy, TargetNetwork, polyak_update, sample_action
from utils.logger import setup_logger
from utils.metrics import MetricsLog

logger = setup_logger('sac')

CHANNELS = ('task', 'energy')


@dataclass(frozen=True)
class Transition:
    state: np.ndarray
    action: np.ndarray
    reward_task: float
    reward_energy: float
    next_state: np.ndarray
    terminated: bool


@dataclass
class Batch:
    states: np.ndarray
    actions: np.ndarray
    rewards_task: np.ndarray
    rewards_energy: np.ndarray
    next_states: np.ndarray
    terminated: np.ndarray

    def rewards(self, channel):
        return self.rewards_task if channel == 'task' else self.rewards_energy


class ReplayBuffer:
    """Fixed-capacity ring buffer; minibatches are drawn uniformly with replacement."""

    def __init__(self, capacity, obs_dim, act_dim, rng=None):
        if capacity < 1:
            raise ValueError(f"replay capacity must be >= 1, got {capacity}")
        self.capacity = capacity
        self.obs_dim = obs_dim
        self.act_dim = act_dim
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self.states = np.zeros((capacity, obs_dim))
        self.actions = np.zeros((capacity, act_dim))
        self.rewards_task = np.zeros((capacity, 1))
        self.rewards_energy = np.zeros((capacity, 1))
        self.next_states = np.zeros((capacity, obs_dim))
        self.terminated = np.zeros((capacity, 1))
        self.size = 0
        self._next = 0

    def __len__(self):
        return self.size

    def add(self, transition):
        if transition.reward_energy < 0:
            raise ValueError(f"energy reward must be non-negative, got {transition.reward_energy}")
        i = self._next
        self.states[i] = np.asarray(transition.state).reshape(self.obs_dim)
        self.actions[i] = np.asarray(transition.action).reshape(self.act_dim)
        self.rewards_task[i, 0] = transition.reward_task
        self.rewards_energy[i, 0] = transition.reward_energy
        self.next_states[i] = np.asarray(transition.next_state).reshape(self.obs_dim)
        self.terminated[i, 0] = float(transition.terminated)
        self._next = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample_indices(self, batch_size):
        if self.size == 0:
            raise ValueError("cannot sample from an empty replay buffer")
        return self.rng.integers(0, self.size, size=batch_size)

    def sample(self, batch_size):
        idx = self.sample_indices(batch_size)
        return Batch(self.states[idx], self.actions[idx], self.rewards_task[idx],
                     self.rewards_energy[idx], self.next_states[idx], self.terminated[idx])


@dataclass(frozen=True)
class SacConfig:
    gamma: float = 0.99
    entropy_alpha: float = 0.2
    batch_size: int = 256
    actor_lr: float = 3e-4
    critic_lr: float = 1e-3
    actor_update_every: int = 2
    critic_update_every: int = 1
    polyak: float = 0.005
    warmup_steps: int = 5000
    total_steps: int = 100000
    replay_capacity: int = 1000000
    combiner: str = 'pegrad'
    lam: float = 0.0
    hidden_sizes: Tuple[int, ...] = (256, 256)
    activation: str = 'relu'
    twin_q: bool = False
    eval_every: int = 5000
    eval_episodes: int = 50
    progress: bool = False

    def __post_init__(self):
        if not 0 < self.gamma < 1:
            raise ValueError(f"gamma must lie in (0, 1), got {self.gamma}")
        if min(self.actor_lr, self.critic_lr, self.polyak, self.batch_size) <= 0 or self.entropy_alpha < 0:
            raise ValueError("learning rates, polyak and batch size must be positive")


class ChannelCritic:
    """Q-network(s) of one reward channel with their targets and optimizers."""

    def __init__(self, obs_dim, act_dim, config, rng):
        count = 2 if config.twin_q else 1
        self.networks = [QNetwork(obs_dim, act_dim, config.hidden_sizes, config.activation, rng)
                         for _ in range(count)]
        self.targets = [TargetNetwork(q, config.polyak) for q in self.networks]
        self.optimizers = [Adam(q, config.critic_lr) for q in self.networks]

    def value(self, state, action, pessimistic_max=False):
        """Q(s, a) as a tensor; with twin critics the pessimistic member is returned.

        The task channel is a reward, so pessimism takes the minimum; the energy channel is a
        cost, where the pessimistic estimate is the maximum.
        """
        values = [q.forward(state, action) for q in self.networks]
        return _pessimistic(values, pessimistic_max)

    def target_value(self, state, action, pessimistic_max=False):
        with no_grad():
            values = [t.forward(state, action) for t in self.targets]
            return _pessimistic(values, pessimistic_max).numpy()

    def polyak(self):
        for target, online in zip(self.targets, self.networks):
            polyak_update(target, online)


def _pessimistic(values, take_max):
    result = values[0]
    for v in values[1:]:
        result = ad.scale(ad.minimum(ad.scale(result, -1.0), ad.scale(v, -1.0)), -1.0) if take_max \
            else ad.minimum(result, v)
    return result


def soft_target(rewards, terminated, next_q, next_log_probs, gamma, alpha):
    """r + gamma * (1 - terminated) * (Q'(s', a') - alpha * log pi(a'|s'))."""
    return rewards + gamma * (1.0 - terminated) * (next_q - alpha * next_log_probs)


def critic_update(critic, batch, channel, next_actions, next_log_probs, gamma, alpha):
    """One Adam step per Q-network of ``critic`` on the mean squared soft TD error.

    Returns the mean loss across the channel's networks.
    """
    if channel not in CHANNELS:
        raise ValueError(f"unknown reward channel {channel!r}")
    next_q = critic.target_value(batch.next_states, next_actions, pessimistic_max=channel == 'energy')
    target = soft_target(batch.rewards(channel), batch.terminated, next_q,
                         np.asarray(next_log_probs).reshape(-1, 1), gamma, alpha)
    losses = []
    for q, adam in zip(critic.networks, critic.optimizers):
        with Graph():
            loss = ad.mean(ad.square(ad.sub(q.forward(batch.states, batch.actions), target)))
            grad = ad.backward(loss, q)
        adam.step(grad)
        losses.append(loss.item())
    return float(np.mean(losses))


@dataclass
class ActorLosses:
    task: ad.Tensor
    energy: ad.Tensor


def actor_losses(policy, critic_task, critic_energy, states, noise, alpha):
    """L_R and L_E on two independent graphs sharing the minibatch and the noise."""
    with Graph():
        action, log_prob, _ = policy.rsample(states, noise)
        q_task = critic_task.value(states, action)
        loss_task = ad.mean(ad.sub(ad.scale(log_prob, alpha), q_task))
    with Graph():
        action, log_prob, _ = policy.rsample(states, noise)
        q_energy = critic_energy.value(states, action, pessimistic_max=True)
        loss_energy = ad.mean(ad.add(ad.scale(log_prob, alpha), q_energy))
    return ActorLosses(loss_task, loss_energy)


def policy_gradients(policy, losses):
    return GradPair(ad.backward(losses.task, policy), ad.backward(losses.energy, policy))


def actor_update(policy, losses, combiner, adam):
    """Two backward passes, one combined direction, one optimizer step."""
    output = combiner(policy_gradients(policy, losses))
    adam.step(output.direction)
    return output


class SacAgent:
    """Policy, critics and optimizers of one training run."""

    def __init__(self, env_spec, config, seed=0):
        self.config = config
        self.env_spec = env_spec
        init_seq, act_seq, buffer_seq, update_seq = np.random.SeedSequence(seed).spawn(4)
        init_rng = np.random.default_rng(init_seq)
        self.act_rng = np.random.default_rng(act_seq)
        self.update_rng = np.random.default_rng(update_seq)
        self.policy = SquashedGaussianPolicy(env_spec.obs_dim, env_spec.act_dim, env_spec.action_low,
                                             env_spec.action_high, config.hidden_sizes,
                                             config.activation, init_rng)
        self.critics = {channel: ChannelCritic(env_spec.obs_dim, env_spec.act_dim, config, init_rng)
                        for channel in CHANNELS}
        self.actor_optimizer = Adam(self.policy, config.actor_lr)
        self.combiner = make_combiner(config.combiner, config.lam)
        self.buffer = ReplayBuffer(config.replay_capacity, env_spec.obs_dim, env_spec.act_dim,
                                   np.random.default_rng(buffer_seq))

    def act(self, obs, step):
        if step <= self.config.warmup_steps:
            return self.act_rng.uniform(self.env_spec.action_low, self.env_spec.action_high)
        action, _ = sample_action(self.policy, obs, self.act_rng)
        return action

    def update_critics(self):
        cfg = self.config
        batch = self.buffer.sample(cfg.batch_size)
        next_actions, next_log_probs, _ = self.policy.sample(batch.next_states, self.update_rng)
        losses = {}
        for channel, critic in self.critics.items():
            losses[channel] = critic_update(critic, batch, channel, next_actions, next_log_probs,
                                            cfg.gamma, cfg.entropy_alpha)
            critic.polyak()
        return losses

    def update_actor(self):
        cfg = self.config
        states = self.buffer.sample(cfg.batch_size).states
        noise = self.update_rng.standard_normal((states.shape[0], self.env_spec.act_dim))
        losses = actor_losses(self.policy, self.critics['task'], self.critics['energy'], states,
                              noise, cfg.entropy_alpha)
        values = (losses.task.item(), losses.energy.item())
        return values, actor_update(self.policy, losses, self.combiner, self.actor_optimizer)


def train(env, config, seed=0, metrics=None, agent=None):
    """Run SAC on ``env`` for ``config.total_steps`` steps and return the metrics log."""
    metrics = metrics if metrics is not None else MetricsLog()
    agent = agent if agent is not None else SacAgent(env.spec, config, seed)
    evaluator = Benchmarking(env.spec.env_id, env.spec.energy_mode, config.eval_episodes)
    logger.info(f"SAC run on {env.spec.env_id}: seed={seed} combiner={config.combiner} "
                f"lambda={config.lam} steps={config.total_steps}")

    obs = env.reset(seed=seed)
    episode_task = 0.0
    episode_energy = 0.0
    latest = {}
    for step in tqdm(range(1, config.total_steps + 1), desc=f'sac seed {seed}', disable=not config.progress):
        action = agent.act(obs, step)
        result = env.step(action)
        agent.buffer.add(Transition(obs, action, result.reward.task, result.reward.energy,
                                    result.next_obs, result.terminated))
        episode_task += result.reward.task
        episode_energy += result.reward.energy
        obs = result.next_obs

        if step > config.warmup_steps and len(agent.buffer) >= config.batch_size:
            if step % config.critic_update_every == 0:
                critic_losses = agent.update_critics()
                latest['critic_loss_task'] = critic_losses['task']
                latest['critic_loss_energy'] = critic_losses['energy']
            if step % config.actor_update_every == 0:
                (loss_task, loss_energy), output = agent.update_actor()
                latest['actor_loss_task'] = loss_task
                latest['actor_loss_energy'] = loss_energy
                latest.update(output.diagnostics.as_row())

        if result.terminated or result.truncated:
            metrics.log(step, episode_return_task=episode_task, episode_energy_sum=episode_energy, **latest)
            obs = env.reset()
            episode_task = 0.0
            episode_energy = 0.0

        if step % config.eval_every == 0:
            summary = evaluator.evaluate(agent.policy, seed)
            metrics.log(step, eval_return_mean=summary.mean_return, eval_energy_mean=summary.mean_energy,
                        **latest)
            logger.info(f"seed {seed} step {step}: eval return {summary.mean_return:.3f}, "
                        f"energy {summary.mean_energy:.3f}, cos_g {latest.get('cos_g', float('nan')):.3f}")

    if env.clamped_actions:
        logger.info(f"{env.spec.env_id}: {env.clamped_actions} actions clamped to bounds")
    return metrics
