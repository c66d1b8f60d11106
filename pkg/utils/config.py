# utils/config.py

import io
import math
import os
from dataclasses import dataclass, fields, replace
from typing import Tuple

from dotenv import dotenv_values, load_dotenv

from .constants import ACTIVATIONS, ALGORITHMS, COMBINERS, DEFAULT_EVAL_EPISODES, ENERGY_MODES, ENV_IDS
from .logger import setup_logger

logger = setup_logger('config')

# process-level settings (log directory, log level, worker count) may come from a .env file
load_dotenv()


class ConfigError(ValueError):
    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field


@dataclass(frozen=True)
class RunConfig:
    env: str
    algorithm: str = 'sac'
    combiner: str = 'pegrad'
    lam: float = 0.0
    energy_mode: str = 'abs_torque'
    seeds: Tuple[int, ...] = (0,)
    total_steps: int = 100000
    eval_every: int = 5000
    eval_episodes: int = DEFAULT_EVAL_EPISODES
    output_dir: str = 'runs'
    hidden_sizes: Tuple[int, ...] = (256, 256)
    activation: str = 'relu'
    gamma: float = 0.99
    # SAC
    entropy_alpha: float = 0.2
    batch_size: int = 256
    actor_lr: float = 3e-4
    critic_lr: float = 1e-3
    actor_update_every: int = 2
    critic_update_every: int = 1
    polyak: float = 0.005
    warmup_steps: int = 5000
    replay_capacity: int = 1000000
    twin_q: bool = False
    # PPO
    ppo_clip: float = 0.2
    ppo_gae_lambda: float = 0.95
    ppo_rollout_length: int = 2048
    ppo_epochs: int = 10
    ppo_minibatch_size: int = 64
    ppo_entropy_coef: float = 0.0
    ppo_lr: float = 3e-4
    ppo_value_lr: float = 1e-3
    ppo_normalize_advantages: bool = True
    # harness
    bootstrap_seed: int = 0
    bootstrap_resamples: int = 1000
    max_workers: int = 0
    progress: bool = True

    @property
    def label(self):
        """Short run label: the combiner name, or 'base' / 'lambda=<x>' for scalarization."""
        if self.combiner != 'scalarized':
            return self.combiner
        return 'base' if self.lam == 0 else f'lambda={self.lam!r}'

    def sac_config(self):
        from sac import SacConfig
        return SacConfig(
            gamma=self.gamma, entropy_alpha=self.entropy_alpha, batch_size=self.batch_size,
            actor_lr=self.actor_lr, critic_lr=self.critic_lr,
            actor_update_every=self.actor_update_every, critic_update_every=self.critic_update_every,
            polyak=self.polyak, warmup_steps=self.warmup_steps, total_steps=self.total_steps,
            replay_capacity=self.replay_capacity, combiner=self.combiner, lam=self.lam,
            hidden_sizes=self.hidden_sizes, activation=self.activation, twin_q=self.twin_q,
            eval_every=self.eval_every, eval_episodes=self.eval_episodes, progress=self.progress,
        )

    def ppo_config(self):
        from ppo import PpoConfig
        return PpoConfig(
            gamma=self.gamma, clip_eps=self.ppo_clip, gae_lambda=self.ppo_gae_lambda,
            rollout_length=self.ppo_rollout_length, epochs=self.ppo_epochs,
            minibatch_size=self.ppo_minibatch_size, entropy_coef=self.ppo_entropy_coef,
            lr=self.ppo_lr, value_lr=self.ppo_value_lr,
            normalize_advantages=self.ppo_normalize_advantages, total_steps=self.total_steps,
            combiner=self.combiner, lam=self.lam, hidden_sizes=self.hidden_sizes,
            activation=self.activation, eval_every=self.eval_every,
            eval_episodes=self.eval_episodes, progress=self.progress,
        )

    def trainer_config(self):
        return self.sac_config() if self.algorithm == 'sac' else self.ppo_config()

    def with_overrides(self, **changes):
        config = replace(self, **changes)
        validate_config(config)
        return config


# key in the file -> dataclass attribute
KEY_ALIASES = {'lambda': 'lam'}
ATTRIBUTE_KEYS = {attr: key for key, attr in KEY_ALIASES.items()}

_TRUE = ('true', '1', 'yes', 'on')
_FALSE = ('false', '0', 'no', 'off')


def _parse_bool(key, text):
    lowered = text.strip().lower()
    if lowered in _TRUE:
        return True
    if lowered in _FALSE:
        return False
    raise ConfigError(key, f"expected true/false, got {text!r}")


def _parse_int_list(key, text):
    items = [item.strip() for item in text.split(',') if item.strip()]
    try:
        return tuple(int(item) for item in items)
    except ValueError:
        raise ConfigError(key, f"expected a comma-separated list of integers, got {text!r}") from None


def _parse_scalar(key, text, kind):
    try:
        value = kind(text.strip())
    except ValueError:
        raise ConfigError(key, f"expected {kind.__name__}, got {text!r}") from None
    if kind is float and not math.isfinite(value):
        raise ConfigError(key, f"must be finite, got {text!r}")
    return value


def _field_kinds():
    kinds = {}
    for f in fields(RunConfig):
        kinds[f.name] = f.type
    return kinds


FIELD_KINDS = _field_kinds()


def _convert(key, attr, text):
    if text is None:
        raise ConfigError(key, "has no value")
    kind = FIELD_KINDS[attr]
    if kind is bool:
        return _parse_bool(key, text)
    if kind in (int, float):
        return _parse_scalar(key, text, kind)
    if kind == Tuple[int, ...]:
        return _parse_int_list(key, text)
    return text.strip()


def _require(condition, key, message):
    if not condition:
        raise ConfigError(key, message)


def validate_config(config):
    key = lambda attr: ATTRIBUTE_KEYS.get(attr, attr)
    _require(config.env in ENV_IDS, 'env', f"unknown environment {config.env!r}, expected one of {ENV_IDS}")
    _require(config.algorithm in ALGORITHMS, 'algorithm', f"expected one of {ALGORITHMS}")
    _require(config.combiner in COMBINERS, 'combiner', f"expected one of {COMBINERS}")
    _require(config.energy_mode in ENERGY_MODES, 'energy_mode', f"expected one of {ENERGY_MODES}")
    _require(config.activation in ACTIVATIONS, 'activation', f"expected one of {ACTIVATIONS}")
    _require(len(config.seeds) > 0, 'seeds', "at least one seed is required")
    _require(len(set(config.seeds)) == len(config.seeds), 'seeds', "seeds must be distinct")
    _require(config.hidden_sizes and min(config.hidden_sizes) >= 1, 'hidden_sizes',
             "needs at least one hidden layer of width >= 1")
    _require(config.lam >= 0, key('lam'), "trade-off lambda must be >= 0")
    _require(0 < config.gamma < 1, 'gamma', "must lie in (0, 1)")
    _require(config.entropy_alpha >= 0, 'entropy_alpha', "must be >= 0")
    _require(0 < config.polyak <= 1, 'polyak', "must lie in (0, 1]")
    _require(0 < config.ppo_clip < 1, 'ppo_clip', "must lie in (0, 1)")
    _require(0 <= config.ppo_gae_lambda <= 1, 'ppo_gae_lambda', "must lie in [0, 1]")
    _require(config.ppo_entropy_coef >= 0, 'ppo_entropy_coef', "must be >= 0")
    _require(config.warmup_steps >= 0, 'warmup_steps', "must be >= 0")
    _require(config.max_workers >= 0, 'max_workers', "must be >= 0 (0 uses the physical core count)")
    _require(config.bootstrap_resamples >= 1, 'bootstrap_resamples', "must be >= 1")
    for attr in ('actor_lr', 'critic_lr', 'ppo_lr', 'ppo_value_lr'):
        _require(getattr(config, attr) > 0, attr, "learning rates must be positive")
    for attr in ('total_steps', 'eval_every', 'eval_episodes', 'batch_size', 'actor_update_every',
                 'critic_update_every', 'replay_capacity', 'ppo_rollout_length', 'ppo_epochs',
                 'ppo_minibatch_size'):
        _require(getattr(config, attr) >= 1, attr, "must be >= 1")
    _require(config.replay_capacity >= config.batch_size, 'replay_capacity', "must hold at least one batch")
    _require(config.ppo_minibatch_size <= config.ppo_rollout_length, 'ppo_minibatch_size',
             "must not exceed ppo_rollout_length")
    return config


def parse_config(values):
    """Build a validated RunConfig from a ``key -> text`` mapping."""
    known = {ATTRIBUTE_KEYS.get(f.name, f.name): f.name for f in fields(RunConfig)}
    kwargs = {}
    for key, text in values.items():
        attr = known.get(key)
        if attr is None:
            raise ConfigError(key, "unknown configuration key")
        kwargs[attr] = _convert(key, attr, text)
    if 'env' not in kwargs or not kwargs['env']:
        raise ConfigError('env', "an environment id is required")
    return validate_config(RunConfig(**kwargs))


def load_config(path, overrides=None):
    if not os.path.exists(path):
        raise ConfigError('config', f"file {path} does not exist")
    values = dict(dotenv_values(path))
    values.update(overrides or {})
    config = parse_config(values)
    logger.info(f"Loaded configuration from {path}: {config.algorithm}/{config.env}/{config.label}")
    return config


def loads_config(text):
    return parse_config(dict(dotenv_values(stream=io.StringIO(text))))


def _format(value):
    if isinstance(value, bool):
        return 'true' if value else 'false'
    if isinstance(value, tuple):
        return ','.join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def serialize_config(config):
    """Every key in declaration order, one ``key=value`` line each."""
    lines = [f"{ATTRIBUTE_KEYS.get(f.name, f.name)}={_format(getattr(config, f.name))}" for f in fields(RunConfig)]
    return '\n'.join(lines) + '\n'
