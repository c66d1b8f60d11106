# tests/test_sac.py
import unittest

import numpy as np
from numpy.testing import assert_allclose, assert_array_equal
from scipy.stats import chisquare

import autodiff as ad
from envs import ChainEnv, PendulumSwingup
from oracle import compare_gradients, finite_diff, module_loss_fn
from sac import (ChannelCritic, ReplayBuffer, SacAgent, SacConfig, Transition, actor_losses, actor_update,
                 critic_update, policy_gradients, soft_target, train)

SMALL = dict(hidden_sizes=(8,), batch_size=8, warmup_steps=16, replay_capacity=200, eval_episodes=1)


def _zero(module):
    module.load_param_vector(module.param_vector().with_values(np.zeros(len(module.param_vector()))))


def _zero_critic(critic):
    for network, target in zip(critic.networks, critic.targets):
        _zero(network)
        _zero(target.network)


def _fill(buffer, count, rng, obs_dim=3, act_dim=1):
    for _ in range(count):
        buffer.add(Transition(rng.normal(size=obs_dim), rng.uniform(-1, 1, size=act_dim), float(rng.normal()),
                              float(rng.uniform(0, 1)), rng.normal(size=obs_dim), False))


class TestReplayBuffer(unittest.TestCase):
    def test_ring_overwrites_oldest(self):
        buffer = ReplayBuffer(3, 1, 1)
        for i in range(5):
            buffer.add(Transition(np.array([i]), np.array([0.0]), float(i), 0.0, np.array([i + 1]), False))
        self.assertEqual(len(buffer), 3)
        self.assertEqual(sorted(buffer.rewards_task[:, 0].tolist()), [2.0, 3.0, 4.0])

    def test_rejects_negative_energy(self):
        buffer = ReplayBuffer(3, 1, 1)
        with self.assertRaises(ValueError):
            buffer.add(Transition(np.zeros(1), np.zeros(1), 0.0, -1.0, np.zeros(1), False))

    def test_empty_buffer_cannot_be_sampled(self):
        with self.assertRaises(ValueError):
            ReplayBuffer(10, 3, 1).sample(1)

    def test_batch_larger_than_contents_draws_with_replacement(self):
        buffer = ReplayBuffer(10, 3, 1, np.random.default_rng(3))
        _fill(buffer, 4, np.random.default_rng(0))
        batch = buffer.sample(32)
        self.assertEqual(batch.states.shape, (32, 3))
        idx = buffer.sample_indices(1000)
        self.assertTrue(np.all((idx >= 0) & (idx < 4)))
        self.assertEqual(len(np.unique(idx)), 4)

    def test_sampling_is_uniform(self):
        buffer = ReplayBuffer(10, 3, 1, np.random.default_rng(42))
        _fill(buffer, 10, np.random.default_rng(0))
        counts = np.bincount(buffer.sample_indices(10 ** 6), minlength=10)
        self.assertEqual(counts.sum(), 10 ** 6)
        self.assertGreater(chisquare(counts).pvalue, 1e-4)

    def test_partially_filled_ring_samples_only_written_slots(self):
        buffer = ReplayBuffer(100, 3, 1, np.random.default_rng(8))
        _fill(buffer, 7, np.random.default_rng(2))
        counts = np.bincount(buffer.sample_indices(70000), minlength=100)
        self.assertEqual(counts[7:].sum(), 0)
        self.assertGreater(chisquare(counts[:7]).pvalue, 1e-4)

    def test_batch_shapes(self):
        buffer = ReplayBuffer(10, 3, 1)
        _fill(buffer, 10, np.random.default_rng(1))
        batch = buffer.sample(4)
        self.assertEqual(batch.states.shape, (4, 3))
        self.assertEqual(batch.rewards('energy').shape, (4, 1))
        self.assertTrue(np.all(batch.rewards('energy') >= 0))


class TestSoftTarget(unittest.TestCase):
    def test_terminated_target_is_reward(self):
        r = np.array([[1.5], [-0.25]])
        target = soft_target(r, np.ones((2, 1)), np.array([[7.0], [3.0]]), np.array([[0.4], [-2.0]]), 0.99, 0.2)
        assert_array_equal(target, r)

    def test_bootstrapped_target(self):
        target = soft_target(np.array([[1.0]]), np.zeros((1, 1)), np.array([[2.0]]), np.array([[-0.5]]), 0.9, 0.2)
        assert_allclose(target, [[1.0 + 0.9 * (2.0 + 0.1)]])


class TestCritics(unittest.TestCase):
    def setUp(self):
        self.config = SacConfig(**SMALL)
        self.rng = np.random.default_rng(0)

    def test_exact_critic_has_zero_loss_and_stays_put(self):
        critic = ChannelCritic(3, 1, self.config, self.rng)
        _zero_critic(critic)
        buffer = ReplayBuffer(8, 3, 1)
        for _ in range(8):
            buffer.add(Transition(self.rng.normal(size=3), self.rng.normal(size=1), 0.0, 0.0,
                                  self.rng.normal(size=3), False))
        batch = buffer.sample(8)
        loss = critic_update(critic, batch, 'task', batch.actions, np.zeros(8), 0.99, 0.2)
        self.assertEqual(loss, 0.0)
        assert_array_equal(critic.networks[0].param_vector().values, np.zeros(len(critic.networks[0].param_vector())))

    def test_twin_pessimism_per_channel(self):
        critic = ChannelCritic(3, 1, SacConfig(twin_q=True, **SMALL), self.rng)
        states, actions = self.rng.normal(size=(5, 3)), self.rng.uniform(-1, 1, size=(5, 1))
        first, second = (q.forward(states, actions).numpy() for q in critic.networks)
        assert_allclose(critic.value(states, actions).numpy(), np.minimum(first, second))
        assert_allclose(critic.value(states, actions, pessimistic_max=True).numpy(), np.maximum(first, second))

    def test_twin_targets_use_the_channel_pessimism(self):
        config = SacConfig(twin_q=True, **SMALL)
        buffer = ReplayBuffer(8, 3, 1)
        _fill(buffer, 8, self.rng)
        batch = buffer.sample(8)
        next_actions = self.rng.uniform(-1, 1, size=(8, 1))
        for channel, pick in (('task', np.minimum), ('energy', np.maximum)):
            critic = ChannelCritic(3, 1, config, np.random.default_rng(6))
            first, second = (t.network.forward(batch.next_states, next_actions).numpy() for t in critic.targets)
            self.assertFalse(np.allclose(first, second))
            expected = soft_target(batch.rewards(channel), batch.terminated, pick(first, second),
                                   np.zeros((8, 1)), 0.9, 0.2)
            sq_errors = [np.mean((q.forward(batch.states, batch.actions).numpy() - expected) ** 2)
                         for q in critic.networks]
            loss = critic_update(critic, batch, channel, next_actions, np.zeros(8), 0.9, 0.2)
            self.assertAlmostEqual(loss, float(np.mean(sq_errors)), places=12, msg=channel)

    def test_unknown_channel(self):
        critic = ChannelCritic(3, 1, self.config, self.rng)
        buffer = ReplayBuffer(8, 3, 1)
        _fill(buffer, 8, self.rng)
        with self.assertRaises(ValueError):
            critic_update(critic, buffer.sample(8), 'comfort', np.zeros((8, 1)), np.zeros(8), 0.99, 0.2)


class TestActor(unittest.TestCase):
    def setUp(self):
        self.spec = PendulumSwingup().spec
        self.states = np.random.default_rng(1).normal(size=(8, 3))
        self.noise = np.random.default_rng(2).normal(size=(8, 1))

    def test_entropy_term_is_shared_between_losses(self):
        agent = SacAgent(self.spec, SacConfig(**SMALL), seed=0)
        for critic in agent.critics.values():
            _zero_critic(critic)
        losses = actor_losses(agent.policy, agent.critics['task'], agent.critics['energy'], self.states,
                              self.noise, 0.2)
        self.assertEqual(losses.task.item(), losses.energy.item())
        pair = policy_gradients(agent.policy, losses)
        assert_allclose(pair.g_R.values, pair.g_E.values, rtol=0, atol=1e-14)

    def test_zero_lambda_scalarization_is_the_task_step(self):
        config = SacConfig(combiner='scalarized', lam=0.0, **SMALL)
        combined, plain = SacAgent(self.spec, config, seed=5), SacAgent(self.spec, config, seed=5)

        losses = actor_losses(combined.policy, combined.critics['task'], combined.critics['energy'],
                              self.states, self.noise, 0.2)
        actor_update(combined.policy, losses, combined.combiner, combined.actor_optimizer)

        losses = actor_losses(plain.policy, plain.critics['task'], plain.critics['energy'], self.states,
                              self.noise, 0.2)
        plain.actor_optimizer.step(ad.backward(losses.task, plain.policy))
        assert_array_equal(combined.policy.param_vector().values, plain.policy.param_vector().values)

    def test_updates_only_touch_their_own_networks(self):
        agent = SacAgent(self.spec, SacConfig(**SMALL), seed=0)
        _fill(agent.buffer, 20, np.random.default_rng(3))
        energy_before = agent.critics['energy'].networks[0].param_vector().values.copy()
        task_before = agent.critics['task'].networks[0].param_vector().values.copy()
        policy_before = agent.policy.param_vector().values.copy()

        batch = agent.buffer.sample(8)
        next_actions, next_log_probs, _ = agent.policy.sample(batch.next_states, np.random.default_rng(4))
        critic_update(agent.critics['task'], batch, 'task', next_actions, next_log_probs, 0.99, 0.2)
        assert_array_equal(agent.critics['energy'].networks[0].param_vector().values, energy_before)
        assert_array_equal(agent.policy.param_vector().values, policy_before)
        self.assertFalse(np.array_equal(agent.critics['task'].networks[0].param_vector().values, task_before))

        task_after = agent.critics['task'].networks[0].param_vector().values.copy()
        agent.update_actor()
        assert_array_equal(agent.critics['task'].networks[0].param_vector().values, task_after)
        assert_array_equal(agent.critics['energy'].networks[0].param_vector().values, energy_before)
        self.assertFalse(np.array_equal(agent.policy.param_vector().values, policy_before))

    def _smooth_agent(self, **overrides):
        # tanh trunks keep the losses differentiable for central differences
        return SacAgent(self.spec, SacConfig(**{**SMALL, 'activation': 'tanh', **overrides}), seed=2)

    def _channel_loss(self, agent, channel, alpha):
        def build(policy):
            losses = actor_losses(policy, agent.critics['task'], agent.critics['energy'], self.states,
                                  self.noise, alpha)
            return getattr(losses, channel)
        return build

    def test_channel_gradients_match_finite_differences(self):
        agent = self._smooth_agent()
        pair = policy_gradients(agent.policy, actor_losses(agent.policy, agent.critics['task'],
                                                           agent.critics['energy'], self.states, self.noise, 0.2))
        for channel, analytic in (('task', pair.g_R), ('energy', pair.g_E)):
            numeric = finite_diff(module_loss_fn(agent.policy, self._channel_loss(agent, channel, 0.2)),
                                  agent.policy.param_vector(), eps=1e-5)
            report = compare_gradients(analytic, numeric, floor=1e-4)
            self.assertLessEqual(report.max_relative_error, 1e-5, msg=channel)

    def test_logged_cosine_matches_finite_difference_gradients(self):
        agent = self._smooth_agent(twin_q=True)
        numeric = [finite_diff(module_loss_fn(agent.policy, self._channel_loss(agent, channel, 0.2)),
                               agent.policy.param_vector(), eps=1e-5).values
                   for channel in ('task', 'energy')]
        expected = float(numeric[0] @ numeric[1]) / (np.linalg.norm(numeric[0]) * np.linalg.norm(numeric[1]))

        losses = actor_losses(agent.policy, agent.critics['task'], agent.critics['energy'], self.states,
                              self.noise, 0.2)
        output = actor_update(agent.policy, losses, agent.combiner, agent.actor_optimizer)
        self.assertAlmostEqual(output.diagnostics.cos_g, expected, delta=1e-6)
        self.assertLessEqual(output.diagnostics.beta_scale, 1.0)

    def test_energy_free_pegrad_step_equals_the_task_step(self):
        # a zero energy critic only removes g_E when the entropy term is off too
        with_entropy = self._smooth_agent()
        _zero_critic(with_entropy.critics['energy'])
        pair = policy_gradients(with_entropy.policy, actor_losses(
            with_entropy.policy, with_entropy.critics['task'], with_entropy.critics['energy'], self.states,
            self.noise, 0.2))
        self.assertGreater(np.linalg.norm(pair.g_E.values), 0.0)

        stepped = {}
        for name in ('pegrad', 'scalarized'):
            agent = self._smooth_agent(combiner=name, lam=0.0)
            _zero_critic(agent.critics['energy'])
            losses = actor_losses(agent.policy, agent.critics['task'], agent.critics['energy'], self.states,
                                  self.noise, 0.0)
            pair = policy_gradients(agent.policy, losses)
            assert_array_equal(pair.g_E.values, np.zeros(len(pair.g_E)))
            output = agent.combiner(pair)
            agent.actor_optimizer.step(output.direction)
            stepped[name] = agent.policy.param_vector().values
        assert_array_equal(stepped['pegrad'], stepped['scalarized'])

    def test_energy_loss_adds_the_energy_cost(self):
        agent = self._smooth_agent()
        for critic in agent.critics.values():
            _zero_critic(critic)
        base = actor_losses(agent.policy, agent.critics['task'], agent.critics['energy'], self.states,
                            self.noise, 0.2)
        # constant critic outputs: +1.5 energy cost, +1.5 task value
        agent.critics['energy'].networks[0].layers[-1][1].data = np.array([1.5])
        agent.critics['task'].networks[0].layers[-1][1].data = np.array([1.5])
        shifted = actor_losses(agent.policy, agent.critics['task'], agent.critics['energy'], self.states,
                               self.noise, 0.2)
        self.assertAlmostEqual(shifted.energy.item() - base.energy.item(), 1.5, places=12)
        self.assertAlmostEqual(shifted.task.item() - base.task.item(), -1.5, places=12)

    def test_larger_torque_costs_more_energy(self):
        for mode in ('abs_torque', 'mech_power'):
            energies = []
            for torque in (0.0, 0.5, 1.0, 2.0):
                env = PendulumSwingup(energy_mode=mode)
                env.reset(seed=0)
                env.set_state(0.0, 0.0)
                energies.append(env.step(np.array([torque])).reward.energy)
            self.assertEqual(energies[0], 0.0, msg=mode)
            self.assertTrue(np.all(np.diff(energies) > 0), msg=f'{mode}: {energies}')

    def test_warmup_actions_are_uniform_within_bounds(self):
        agent = SacAgent(self.spec, SacConfig(**SMALL), seed=0)
        actions = np.array([agent.act(np.zeros(3), step) for step in range(1, 17)])
        self.assertTrue(np.all(np.abs(actions) <= 2.0))


class TestTraining(unittest.TestCase):
    def test_short_run_is_deterministic(self):
        config = SacConfig(total_steps=48, eval_every=24, **SMALL)
        first = train(PendulumSwingup(), config, seed=3)
        second = train(PendulumSwingup(), config, seed=3)
        self.assertEqual(first.rows, second.rows)
        evals = first.eval_rows()
        self.assertEqual([row['global_step'] for row in evals], [24, 48])
        self.assertIn('cos_g', evals[-1])
        self.assertTrue(all(np.isfinite(v) for v in evals[-1].values()))

    def test_twin_critics_with_pcgrad_on_the_chain(self):
        config = SacConfig(total_steps=60, eval_every=60, twin_q=True, combiner='pcgrad_plus', **SMALL)
        env = ChainEnv(horizon=50)
        metrics = train(env, config, seed=0)
        episodes = metrics.episode_rows()
        self.assertEqual([row['global_step'] for row in episodes], [50])
        self.assertGreater(episodes[0]['episode_energy_sum'], 0.0)
        self.assertEqual(len(metrics.eval_rows()), 1)


if __name__ == '__main__':
    unittest.main()
