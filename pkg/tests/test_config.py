# tests/test_config.py
import os
import tempfile
import unittest

from sac import SacConfig
from ppo import PpoConfig
from utils.config import ConfigError, RunConfig, load_config, loads_config, parse_config, serialize_config

EXAMPLE = """
# pendulum sweep base
env=pendulum
algorithm=ppo
combiner=scalarized
lambda=0.1
seeds=0,1,2
hidden_sizes=64,64
ppo_normalize_advantages=false
progress=false
"""


class TestParse(unittest.TestCase):
    def test_example_document(self):
        config = loads_config(EXAMPLE)
        self.assertEqual(config.env, 'pendulum')
        self.assertEqual(config.lam, 0.1)
        self.assertEqual(config.seeds, (0, 1, 2))
        self.assertEqual(config.hidden_sizes, (64, 64))
        self.assertFalse(config.ppo_normalize_advantages)
        self.assertEqual(config.label, 'lambda=0.1')
        # untouched keys keep their defaults
        self.assertEqual(config.eval_episodes, 50)
        self.assertEqual(config.batch_size, 256)

    def test_round_trip(self):
        config = loads_config(EXAMPLE)
        text = serialize_config(config)
        self.assertEqual(loads_config(text), config)
        self.assertEqual(serialize_config(loads_config(text)), text)

    def test_serialized_keys_follow_declaration_order(self):
        lines = serialize_config(RunConfig(env='chain3')).splitlines()
        self.assertEqual(lines[0], 'env=chain3')
        self.assertIn('lambda=0.0', lines)
        self.assertIn('twin_q=false', lines)

    def test_labels(self):
        self.assertEqual(RunConfig(env='chain3').label, 'pegrad')
        self.assertEqual(RunConfig(env='chain3', combiner='scalarized').label, 'base')


class TestErrors(unittest.TestCase):
    def _field(self, mapping):
        with self.assertRaises(ConfigError) as ctx:
            parse_config(mapping)
        return ctx.exception.field

    def test_missing_env(self):
        self.assertEqual(self._field({'algorithm': 'sac'}), 'env')

    def test_unknown_env(self):
        self.assertEqual(self._field({'env': 'cartpole'}), 'env')

    def test_unknown_key(self):
        self.assertEqual(self._field({'env': 'pendulum', 'learning_rate': '0.1'}), 'learning_rate')

    def test_negative_lambda_names_the_file_key(self):
        self.assertEqual(self._field({'env': 'pendulum', 'lambda': '-0.5'}), 'lambda')

    def test_type_errors(self):
        self.assertEqual(self._field({'env': 'pendulum', 'total_steps': 'many'}), 'total_steps')
        self.assertEqual(self._field({'env': 'pendulum', 'twin_q': 'maybe'}), 'twin_q')
        self.assertEqual(self._field({'env': 'pendulum', 'seeds': '0,x'}), 'seeds')
        self.assertEqual(self._field({'env': 'pendulum', 'gamma': 'nan'}), 'gamma')

    def test_range_errors(self):
        self.assertEqual(self._field({'env': 'pendulum', 'seeds': '1,1'}), 'seeds')
        self.assertEqual(self._field({'env': 'pendulum', 'eval_episodes': '0'}), 'eval_episodes')
        self.assertEqual(self._field({'env': 'pendulum', 'gamma': '1.0'}), 'gamma')
        self.assertEqual(self._field({'env': 'pendulum', 'batch_size': '64', 'replay_capacity': '10'}),
                         'replay_capacity')
        self.assertEqual(self._field({'env': 'pendulum', 'ppo_minibatch_size': '4096'}), 'ppo_minibatch_size')

    def test_message_names_the_field(self):
        with self.assertRaises(ConfigError) as ctx:
            parse_config({'algorithm': 'sac'})
        self.assertTrue(str(ctx.exception).startswith('env:'))

    def test_overrides_are_validated(self):
        with self.assertRaises(ConfigError):
            RunConfig(env='pendulum').with_overrides(eval_every=0)


class TestFiles(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()

    def tearDown(self):
        self.tmp.cleanup()

    def test_load_with_overrides(self):
        path = os.path.join(self.tmp.name, 'run.cfg')
        with open(path, 'w') as handle:
            handle.write(EXAMPLE)
        config = load_config(path, overrides={'seeds': '7'})
        self.assertEqual(config.seeds, (7,))

    def test_missing_file(self):
        with self.assertRaises(ConfigError) as ctx:
            load_config(os.path.join(self.tmp.name, 'absent.cfg'))
        self.assertEqual(ctx.exception.field, 'config')


class TestTrainerConfigs(unittest.TestCase):
    def test_sac_fields_are_forwarded(self):
        config = RunConfig(env='pendulum', batch_size=32, replay_capacity=64, twin_q=True, lam=0.5,
                           combiner='scalarized')
        sac_config = config.trainer_config()
        self.assertIsInstance(sac_config, SacConfig)
        self.assertEqual((sac_config.batch_size, sac_config.twin_q, sac_config.lam), (32, True, 0.5))

    def test_ppo_fields_are_forwarded(self):
        config = RunConfig(env='pendulum', algorithm='ppo', ppo_clip=0.1, ppo_rollout_length=128,
                           ppo_minibatch_size=32)
        ppo_config = config.trainer_config()
        self.assertIsInstance(ppo_config, PpoConfig)
        self.assertEqual((ppo_config.clip_eps, ppo_config.rollout_length), (0.1, 128))


if __name__ == '__main__':
    unittest.main()
