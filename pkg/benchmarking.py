# benchmarking.py

from dataclasses import asdict, dataclass

import numpy as np
from tqdm import tqdm

from envs import make_env
from nets import sample_action
from utils.constants import DEFAULT_EVAL_EPISODES
from utils.logger import setup_logger

# offset that keeps evaluation episode seeds apart from training seeds
EVAL_SEED_STREAM = 7919


@dataclass(frozen=True)
class EvalSummary:
    mean_return: float
    std_return: float
    mean_energy: float
    std_energy: float
    episodes: int

    def as_dict(self):
        return asdict(self)


def episode_seed(seed, episode):
    return int(np.random.SeedSequence([EVAL_SEED_STREAM, seed, episode]).generate_state(1)[0])


def run_episode(policy, env, seed):
    """One deterministic (mean-action) episode; returns (task return, summed energy)."""
    obs = env.reset(seed=seed)
    total_task = 0.0
    total_energy = 0.0
    while True:
        action, _ = sample_action(policy, obs, None, deterministic=True)
        result = env.step(action)
        total_task += result.reward.task
        total_energy += result.reward.energy
        obs = result.next_obs
        if result.terminated or result.truncated:
            return total_task, total_energy


class Benchmarking:
    """Evaluation protocol: N deterministic episodes on a private copy of the environment."""

    def __init__(self, env_id, energy_mode='abs_torque', episodes=DEFAULT_EVAL_EPISODES, progress=False):
        if episodes < 1:
            raise ValueError(f"evaluation needs at least one episode, got {episodes}")
        self.logger = setup_logger('benchmarking')
        self.env = make_env(env_id, energy_mode)
        self.episodes = episodes
        self.progress = progress

    def evaluate(self, policy, seed=0):
        returns = np.zeros(self.episodes)
        energies = np.zeros(self.episodes)
        for i in tqdm(range(self.episodes), desc='eval', disable=not self.progress, leave=False):
            returns[i], energies[i] = run_episode(policy, self.env, episode_seed(seed, i))
        summary = EvalSummary(
            mean_return=float(returns.mean()),
            std_return=float(returns.std()),
            mean_energy=float(energies.mean()),
            std_energy=float(energies.std()),
            episodes=self.episodes,
        )
        self.logger.debug(f"Evaluated {self.episodes} episodes on {self.env.spec.env_id}: {summary}")
        return summary

