# envs.py
"""
Desk-scale control environments with a two-channel reward (task, energy) and a tabular MDP
with exact dynamic-programming oracles.

Dynamics (semi-implicit Euler, actions are torques/forces):

PendulumSwingup  theta measured from upright, state (cos th, sin th, th_dot)
    th_dot' = clip(th_dot + dt * ((g / l) * sin th + tau / (m * l^2)), -8, 8)
    th'     = th + dt * th_dot'
    task    = -(wrap(th')^2 + 0.1 * th_dot'^2)
    reset   th ~ U[-pi, pi], th_dot ~ U[-1, 1]

PointMassReach   state (pos, vel, goal - pos) in R^6, unit mass
    vel' = 0.95 * vel + dt * force
    pos' = pos + dt * vel'
    task = -|pos' - goal| + 1.0 if |pos' - goal| < 0.05
    reset pos, goal ~ U[-1, 1]^2, vel = 0

Energy channel: sum |tau_m| (abs_torque) or sum |tau_m * omega_m| (mech_power) with omega the
post-integration velocity of the actuated coordinate.
"""

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from utils.constants import ENERGY_MODES
from utils.logger import setup_logger

logger = setup_logger('envs')


class EnvDivergenceError(ValueError):
    """The simulated state became non-finite; the episode cannot continue."""


@dataclass(frozen=True)
class VectorReward:
    task: float
    energy: float

    def __post_init__(self):
        if not (math.isfinite(self.task) and math.isfinite(self.energy)):
            raise EnvDivergenceError(f"non-finite reward {self.task}, {self.energy}")
        if self.energy < 0:
            raise ValueError(f"energy must be non-negative, got {self.energy}")


@dataclass(frozen=True)
class EnvSpec:
    env_id: str
    obs_dim: int
    act_dim: int
    action_low: tuple
    action_high: tuple
    dt: float
    horizon: int
    energy_mode: str = 'abs_torque'

    def __post_init__(self):
        if any(lo >= hi for lo, hi in zip(self.action_low, self.action_high)):
            raise ValueError("action bounds need low < high in every dimension")
        if self.horizon < 1 or self.dt <= 0:
            raise ValueError("horizon must be >= 1 and dt > 0")
        if self.energy_mode not in ENERGY_MODES:
            raise ValueError(f"unknown energy mode {self.energy_mode!r}")


@dataclass
class StepResult:
    next_obs: np.ndarray
    reward: VectorReward
    terminated: bool
    truncated: bool


def wrap_angle(theta):
    return (theta + math.pi) % (2.0 * math.pi) - math.pi


def energy_of(torques, velocities, energy_mode):
    torques = np.asarray(torques, dtype=np.float64)
    if energy_mode == 'mech_power':
        return float(np.sum(np.abs(torques * np.asarray(velocities, dtype=np.float64))))
    return float(np.sum(np.abs(torques)))


class ControlEnv:
    """Base class: bounds clamping, horizon bookkeeping and divergence checks."""

    spec: EnvSpec

    def __init__(self):
        self.rng = np.random.default_rng(0)
        self.t = 0
        self.clamped_actions = 0

    def reset(self, seed=None):
        if seed is not None:
            self.rng = np.random.default_rng(seed)
        self.t = 0
        self._reset_state()
        return self._obs()

    def step(self, action):
        action = np.asarray(action, dtype=np.float64).reshape(self.spec.act_dim)
        low = np.asarray(self.spec.action_low)
        high = np.asarray(self.spec.action_high)
        if np.any(action < low) or np.any(action > high):
            self.clamped_actions += 1
            logger.debug(f"{self.spec.env_id}: action {action} clamped to bounds")
            action = np.clip(action, low, high)

        task, energy = self._advance(action)
        obs = self._obs()
        if not np.all(np.isfinite(obs)):
            logger.error(f"{self.spec.env_id}: non-finite state at step {self.t}")
            raise EnvDivergenceError(f"{self.spec.env_id} diverged at step {self.t}")

        truncated = self.t == self.spec.horizon - 1
        self.t += 1
        return StepResult(obs, VectorReward(task, energy), terminated=False, truncated=truncated)

    def _reset_state(self):
        raise NotImplementedError

    def _advance(self, action):
        raise NotImplementedError

    def _obs(self):
        raise NotImplementedError


class PendulumSwingup(ControlEnv):
    max_speed = 8.0

    def __init__(self, energy_mode='abs_torque', mass=1.0, length=1.0, gravity=9.81):
        super().__init__()
        self.spec = EnvSpec('pendulum', obs_dim=3, act_dim=1, action_low=(-2.0,), action_high=(2.0,),
                            dt=0.05, horizon=200, energy_mode=energy_mode)
        self.mass = mass
        self.length = length
        self.gravity = gravity
        self.theta = 0.0
        self.theta_dot = 0.0

    def set_state(self, theta, theta_dot):
        self.theta = float(theta)
        self.theta_dot = float(theta_dot)
        return self._obs()

    def _reset_state(self):
        self.theta = float(self.rng.uniform(-math.pi, math.pi))
        self.theta_dot = float(self.rng.uniform(-1.0, 1.0))

    def _advance(self, action):
        tau = float(action[0])
        dt = self.spec.dt
        accel = (self.gravity / self.length) * math.sin(self.theta) + tau / (self.mass * self.length ** 2)
        self.theta_dot = float(np.clip(self.theta_dot + dt * accel, -self.max_speed, self.max_speed))
        self.theta = self.theta + dt * self.theta_dot
        task = -(wrap_angle(self.theta) ** 2 + 0.1 * self.theta_dot ** 2)
        return task, energy_of([tau], [self.theta_dot], self.spec.energy_mode)

    def _obs(self):
        return np.array([math.cos(self.theta), math.sin(self.theta), self.theta_dot])


class PointMassReach(ControlEnv):
    damping = 0.95
    goal_radius = 0.05
    goal_bonus = 1.0

    def __init__(self, energy_mode='abs_torque'):
        super().__init__()
        self.spec = EnvSpec('pointmass', obs_dim=6, act_dim=2, action_low=(-1.0, -1.0),
                            action_high=(1.0, 1.0), dt=0.05, horizon=200, energy_mode=energy_mode)
        self.pos = np.zeros(2)
        self.vel = np.zeros(2)
        self.goal = np.zeros(2)

    def set_state(self, pos, vel, goal):
        self.pos = np.array(pos, dtype=np.float64)
        self.vel = np.array(vel, dtype=np.float64)
        self.goal = np.array(goal, dtype=np.float64)
        return self._obs()

    def _reset_state(self):
        self.pos = self.rng.uniform(-1.0, 1.0, size=2)
        self.goal = self.rng.uniform(-1.0, 1.0, size=2)
        self.vel = np.zeros(2)

    def _advance(self, action):
        self.vel = self.damping * self.vel + self.spec.dt * action
        self.pos = self.pos + self.spec.dt * self.vel
        distance = float(np.linalg.norm(self.pos - self.goal))
        task = -distance + (self.goal_bonus if distance < self.goal_radius else 0.0)
        return task, energy_of(action, self.vel, self.spec.energy_mode)

    def _obs(self):
        return np.concatenate([self.pos, self.vel, self.goal - self.pos])


@dataclass
class TabularMdp:
    transitions: np.ndarray          # T[s, a] -> s'
    rewards: np.ndarray              # r[s, a]
    energies: np.ndarray             # e[s, a]
    gamma: float
    start_state: int = 0

    def __post_init__(self):
        self.transitions = np.asarray(self.transitions, dtype=np.int64)
        self.rewards = np.asarray(self.rewards, dtype=np.float64)
        self.energies = np.asarray(self.energies, dtype=np.float64)
        n_states = self.transitions.shape[0]
        if np.any(self.transitions < 0) or np.any(self.transitions >= n_states):
            raise ValueError("transition table holds invalid state indices")
        if self.rewards.shape != self.transitions.shape or self.energies.shape != self.transitions.shape:
            raise ValueError("reward and energy tables must match the transition table shape")
        if np.any(self.energies < 0):
            raise ValueError("energy table must be non-negative")

    @property
    def n_states(self):
        return self.transitions.shape[0]

    @property
    def n_actions(self):
        return self.transitions.shape[1]


def chain_mdp3(gamma=0.9):
    """Three states, low-effort action 0 (stay) and high-effort action 1 (advance).

    High effort earns more task reward and costs more energy, so the task-optimal and
    energy-optimal policies differ.
    """
    return TabularMdp(
        transitions=[[0, 1], [1, 2], [2, 2]],
        rewards=[[0.0, 0.5], [0.2, 0.8], [1.0, 1.2]],
        energies=[[0.1, 1.0], [0.1, 1.0], [0.1, 1.0]],
        gamma=gamma,
    )


def _bellman_iterate(table, transitions, gamma, backup, tol, max_iterations):
    q = np.zeros_like(table)
    for _ in range(max_iterations):
        q_next = table + gamma * backup(q)[transitions]
        delta = float(np.max(np.abs(q_next - q)))
        q = q_next
        # sup-norm distance to the fixed point is at most delta * gamma / (1 - gamma)
        if delta * gamma / (1.0 - gamma) <= tol:
            break
    return q


def value_iteration(mdp, tol=1e-10, max_iterations=100000):
    """Optimal Q tables per channel: task reward maximised, energy cost minimised."""
    if not 0.0 <= mdp.gamma < 1.0:
        raise ValueError("value iteration needs gamma < 1")
    q_task = _bellman_iterate(mdp.rewards, mdp.transitions, mdp.gamma,
                              lambda q: q.max(axis=1), tol, max_iterations)
    q_energy = _bellman_iterate(mdp.energies, mdp.transitions, mdp.gamma,
                                lambda q: q.min(axis=1), tol, max_iterations)
    return q_task, q_energy


def policy_evaluation(mdp, policy_actions, log_probs=None, entropy_alpha=0.0, tol=1e-10,
                      max_iterations=100000):
    """Q tables of a fixed deterministic-action policy with the soft-target adjustment.

    Q(s, a) = c(s, a) + gamma * (Q(s', pi(s')) - alpha * log pi(pi(s') | s')) for both
    channels, which is the fixed point a critic trained against that frozen policy reaches.
    """
    if not 0.0 <= mdp.gamma < 1.0:
        raise ValueError("policy evaluation needs gamma < 1")
    actions = np.asarray(policy_actions, dtype=np.int64)
    log_probs = np.zeros(mdp.n_states) if log_probs is None else np.asarray(log_probs, dtype=np.float64)
    states = np.arange(mdp.n_states)

    def backup(q):
        return q[states, actions] - entropy_alpha * log_probs

    q_task = _bellman_iterate(mdp.rewards, mdp.transitions, mdp.gamma, backup, tol, max_iterations)
    q_energy = _bellman_iterate(mdp.energies, mdp.transitions, mdp.gamma, backup, tol, max_iterations)
    return q_task, q_energy


class ChainEnv(ControlEnv):
    """Continuous-action view of a TabularMdp: one-hot observation, sign of a picks the action."""

    def __init__(self, mdp=None, horizon=50, energy_mode='abs_torque'):
        super().__init__()
        self.mdp = mdp if mdp is not None else chain_mdp3()
        self.spec = EnvSpec('chain3', obs_dim=self.mdp.n_states, act_dim=1, action_low=(-1.0,),
                            action_high=(1.0,), dt=1.0, horizon=horizon, energy_mode=energy_mode)
        self.state = self.mdp.start_state

    @staticmethod
    def discrete_action(action):
        return 1 if float(np.asarray(action).reshape(-1)[0]) >= 0.0 else 0

    def one_hot(self, state):
        obs = np.zeros(self.mdp.n_states)
        obs[state] = 1.0
        return obs

    def _reset_state(self):
        self.state = self.mdp.start_state

    def _advance(self, action):
        a = self.discrete_action(action)
        s = self.state
        self.state = int(self.mdp.transitions[s, a])
        # the tabular energy table already defines the effort cost of each action
        return float(self.mdp.rewards[s, a]), float(self.mdp.energies[s, a])

    def _obs(self):
        return self.one_hot(self.state)


ENV_FACTORIES = {
    'pendulum': PendulumSwingup,
    'pointmass': PointMassReach,
    'chain3': lambda energy_mode='abs_torque': ChainEnv(energy_mode=energy_mode),
}


def make_env(env_id, energy_mode='abs_torque'):
    try:
        factory = ENV_FACTORIES[env_id]
    except KeyError:
        raise ValueError(f"unknown environment id {env_id!r}") from None
    return factory(energy_mode=energy_mode)
