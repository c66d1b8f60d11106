# nets.py
"""
Policy and critic networks: squashed-Gaussian actor, Q critics, state-value critics and
polyak-averaged target networks. All parameters live in ``autodiff.Module`` containers so
their flat ``ParamVector`` layout is fixed by the order of construction.
"""

import copy
import math
from dataclasses import dataclass
from typing import Tuple

import numpy as np

import autodiff as ad
from autodiff import LOG_SQRT_2PI, Module, Tensor, no_grad
from utils.constants import ACTIVATIONS
from utils.json_utils import CheckpointError, load_checkpoint, save_checkpoint

LOG_STD_MIN = -5.0
LOG_STD_MAX = 2.0
# tanh output is kept this far inside (-1, 1) so actions stay strictly within bounds
SQUASH_LIMIT = 1.0 - 1e-9
LOG2 = math.log(2.0)


class LayoutMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class MlpSpec:
    input_dim: int
    hidden_sizes: Tuple[int, ...]
    output_dim: int
    activation: str = 'relu'

    def __post_init__(self):
        object.__setattr__(self, 'hidden_sizes', tuple(int(h) for h in self.hidden_sizes))
        if self.input_dim < 1 or self.output_dim < 1:
            raise ValueError(f"MlpSpec dims must be >= 1, got {self.input_dim} -> {self.output_dim}")
        if not self.hidden_sizes or min(self.hidden_sizes) < 1:
            raise ValueError(f"MlpSpec needs at least one hidden layer of width >= 1, got {self.hidden_sizes}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def sizes(self):
        return (self.input_dim, *self.hidden_sizes, self.output_dim)


def _activation(name):
    return ad.relu if name == 'relu' else ad.tanh


def _linear(module, prefix, fan_in, fan_out, rng):
    # uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)), the usual default for dense layers
    bound = 1.0 / math.sqrt(fan_in)
    weight = module.register(f'{prefix}.weight', rng.uniform(-bound, bound, size=(fan_in, fan_out)))
    bias = module.register(f'{prefix}.bias', rng.uniform(-bound, bound, size=(fan_out,)))
    return weight, bias


def _apply(layer, x):
    weight, bias = layer
    return ad.add(ad.matmul(x, weight), bias)


def _as_batch(x):
    x = np.asarray(x, dtype=np.float64)
    return x[None, :] if x.ndim == 1 else x


class MlpNetwork(Module):
    """Dense network with an activation after every hidden layer and a linear output."""

    def __init__(self, spec, rng, prefix='net'):
        super().__init__()
        self.spec = spec
        self._act = _activation(spec.activation)
        sizes = spec.sizes
        self.layers = [
            _linear(self, f'{prefix}.{i}', n_in, n_out, rng)
            for i, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:]))
        ]

    def forward(self, x):
        h = ad.as_tensor(x)
        for i, layer in enumerate(self.layers):
            h = _apply(layer, h)
            if i < len(self.layers) - 1:
                h = self._act(h)
        return h


class QNetwork(MlpNetwork):
    """Q(s, a) over the concatenated state and action; output shape (batch, 1)."""

    def __init__(self, obs_dim, act_dim, hidden_sizes=(256, 256), activation='relu', rng=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        super().__init__(MlpSpec(obs_dim + act_dim, hidden_sizes, 1, activation), rng, prefix='q')
        self.obs_dim = obs_dim
        self.act_dim = act_dim

    def forward(self, state, action):
        state = state if isinstance(state, Tensor) else Tensor(_as_batch(state))
        action = action if isinstance(action, Tensor) else Tensor(_as_batch(action))
        if state.shape[1] != self.obs_dim or action.shape[1] != self.act_dim:
            raise ad.ShapeError(f"Q-network expects ({self.obs_dim}, {self.act_dim}) inputs, "
                                f"got {state.shape} and {action.shape}")
        return super().forward(ad.concat([state, action], axis=1))


class ValueNetwork(MlpNetwork):
    """V(s); one instance per reward channel."""

    def __init__(self, obs_dim, hidden_sizes=(256, 256), activation='tanh', rng=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        super().__init__(MlpSpec(obs_dim, hidden_sizes, 1, activation), rng, prefix='v')
        self.obs_dim = obs_dim

    def forward(self, state):
        state = state if isinstance(state, Tensor) else Tensor(_as_batch(state))
        if state.shape[1] != self.obs_dim:
            raise ad.ShapeError(f"value network expects {self.obs_dim} inputs, got {state.shape}")
        return super().forward(state)


def q_value(critic, state, action):
    """Q-values as a (batch, 1) array, without recording a graph."""
    with no_grad():
        return critic.forward(state, action).numpy()


def state_value(critic, state):
    with no_grad():
        return critic.forward(state).numpy()


class SquashedGaussianPolicy(Module):
    """Gaussian policy squashed by tanh and rescaled to the action bounds.

    a = bias + scale * tanh(mu + sigma * xi), xi ~ N(0, I), log sigma clamped to [-5, 2].
    """

    def __init__(self, obs_dim, act_dim, action_low, action_high, hidden_sizes=(256, 256),
                 activation='relu', rng=None):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        low = np.asarray(action_low, dtype=np.float64).reshape(act_dim)
        high = np.asarray(action_high, dtype=np.float64).reshape(act_dim)
        if np.any(low >= high):
            raise ValueError("action bounds need low < high in every dimension")
        self.spec = MlpSpec(obs_dim, hidden_sizes, act_dim, activation)
        self.obs_dim = obs_dim
        self.act_dim = act_dim
        self.action_scale = (high - low) / 2.0
        self.action_bias = (high + low) / 2.0
        self._log_norm_const = -LOG_SQRT_2PI - np.log(self.action_scale)
        self._act = _activation(activation)

        sizes = (obs_dim, *self.spec.hidden_sizes)
        self.trunk = [
            _linear(self, f'trunk.{i}', n_in, n_out, rng)
            for i, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:]))
        ]
        self.mean_head = _linear(self, 'mean', sizes[-1], act_dim, rng)
        self.log_std_head = _linear(self, 'log_std', sizes[-1], act_dim, rng)

    def distribution(self, state):
        """Mean and clamped log-std of the pre-squash Gaussian, as tensors."""
        h = state if isinstance(state, Tensor) else Tensor(_as_batch(state))
        if h.shape[1] != self.obs_dim:
            raise ad.ShapeError(f"policy expects {self.obs_dim} inputs, got {h.shape}")
        for layer in self.trunk:
            h = self._act(_apply(layer, h))
        mu = _apply(self.mean_head, h)
        log_std = ad.clamp(_apply(self.log_std_head, h), LOG_STD_MIN, LOG_STD_MAX)
        return mu, log_std

    def _squash(self, z):
        squashed = ad.clamp(ad.tanh(z), -SQUASH_LIMIT, SQUASH_LIMIT)
        scale = np.broadcast_to(self.action_scale, squashed.shape)
        return ad.add(ad.mul(squashed, scale), self.action_bias)

    def _log_prob(self, log_std, z, xi):
        gauss = ad.add(ad.sub(ad.scale(ad.square(xi), -0.5), log_std), self._log_norm_const)
        # log(1 - tanh(z)^2) in the overflow-free form 2 * (log 2 - z - softplus(-2z))
        log_det = ad.scale(ad.sub(ad.add(ad.scale(z, -1.0), LOG2), ad.softplus(ad.scale(z, -2.0))), 2.0)
        return ad.sum(ad.sub(gauss, log_det), axis=1, keepdims=True)

    def rsample(self, state, noise):
        """Reparameterised sample for fixed noise; returns (action, log_prob, pre_tanh) tensors."""
        mu, log_std = self.distribution(state)
        noise = np.asarray(noise, dtype=np.float64).reshape(mu.shape)
        z = ad.add(mu, ad.mul(ad.exp(log_std), noise))
        return self._squash(z), self._log_prob(log_std, z, Tensor(noise)), z

    def log_prob(self, state, pre_tanh):
        """log pi(a|s) of the action produced by the pre-squash sample ``pre_tanh``."""
        mu, log_std = self.distribution(state)
        z = Tensor(_as_batch(pre_tanh))
        xi = ad.mul(ad.sub(z, mu), ad.exp(ad.scale(log_std, -1.0)))
        return self._log_prob(log_std, z, xi)

    def entropy(self, state):
        """Entropy of the pre-squash Gaussian, sum(log sigma + 0.5 log(2 pi e)), shape (batch, 1)."""
        _, log_std = self.distribution(state)
        return ad.sum(ad.add(log_std, LOG_SQRT_2PI + 0.5), axis=1, keepdims=True)

    def sample(self, state, rng, deterministic=False):
        """Sample without recording a graph; returns (action, log_prob, pre_tanh) arrays."""
        state = _as_batch(state)
        noise_shape = (state.shape[0], self.act_dim)
        noise = np.zeros(noise_shape) if deterministic else rng.standard_normal(noise_shape)
        with no_grad():
            action, log_prob, z = self.rsample(state, noise)
        return action.numpy(), log_prob.numpy(), z.numpy()


def sample_action(policy, state, rng, deterministic=False):
    """Draw one action per state; a 1-D state gives a 1-D action and a float log-prob."""
    single = np.ndim(state) == 1
    action, log_prob, _ = policy.sample(state, rng, deterministic)
    if single:
        return action[0], float(log_prob[0, 0])
    return action, log_prob[:, 0]


class TargetNetwork:
    """Frozen copy of an online network, moved towards it by polyak averaging."""

    def __init__(self, online, tau=0.005):
        self.network = copy.deepcopy(online)
        self.tau = tau

    def forward(self, *inputs):
        return self.network.forward(*inputs)

    def param_vector(self):
        return self.network.param_vector()


def polyak_update(target, online, tau=None):
    """target <- (1 - tau) * target + tau * online, elementwise."""
    tau = target.tau if tau is None else tau
    target_params = target.network.param_vector()
    online_params = online.param_vector()
    if not target_params.same_layout(online_params):
        raise LayoutMismatchError("target and online networks have different parameter layouts")
    target.network.load_param_vector(
        target_params.with_values((1.0 - tau) * target_params.values + tau * online_params.values))
    return target


def save_policy(path, policy, metadata):
    metadata = dict(metadata)
    metadata.setdefault('hidden_sizes', list(policy.spec.hidden_sizes))
    metadata.setdefault('activation', policy.spec.activation)
    save_checkpoint(path, policy.param_vector().named_arrays(), metadata)


def load_policy(path, env_spec):
    """Rebuild a policy for ``env_spec`` from a checkpoint; returns (policy, metadata)."""
    metadata, named_arrays = load_checkpoint(path)
    policy = SquashedGaussianPolicy(env_spec.obs_dim, env_spec.act_dim, env_spec.action_low,
                                    env_spec.action_high,
                                    hidden_sizes=tuple(metadata.get('hidden_sizes', (256, 256))),
                                    activation=metadata.get('activation', 'relu'))
    expected = policy.param_vector()
    stored = ad.ParamVector.from_arrays(named_arrays)
    if not expected.same_layout(stored):
        raise CheckpointError(f"checkpoint {path} does not match the {metadata.get('env')} policy layout")
    policy.load_param_vector(stored)
    return policy, metadata
