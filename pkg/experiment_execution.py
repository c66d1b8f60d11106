# experiment_execution.py

import logging
import os
import traceback
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import replace

import psutil

import ppo
import sac
from autodiff import NonFiniteError
from envs import EnvDivergenceError, make_env
from nets import save_policy
from utils.config import serialize_config, validate_config
from utils.constants import FAILURE_MARKER, INDEX_FILE
from utils.json_utils import load_document, save_document, write_text_atomic
from utils.logger import setup_logger
from utils.metrics import MetricsLog

logger = setup_logger('experiment_execution', console_level=logging.INFO)

TRAINERS = {
    'sac': (sac.SacAgent, sac.train),
    'ppo': (ppo.PpoAgent, ppo.train),
}


def run_id(config):
    return f"{config.algorithm}_{config.env}_{config.label.replace('=', '_')}"


def run_paths(config, seed):
    run_dir = os.path.join(config.output_dir, run_id(config), f'seed_{seed}')
    return {
        'run_dir': run_dir,
        'config': os.path.join(run_dir, 'run.cfg'),
        'metrics': os.path.join(run_dir, 'metrics.csv'),
        'checkpoint': os.path.join(run_dir, 'checkpoint.json'),
        'summary': os.path.join(run_dir, 'summary.json'),
        'failure': os.path.join(run_dir, FAILURE_MARKER),
    }


def checkpoint_metadata(config, seed, step):
    return {
        'algorithm': config.algorithm,
        'env': config.env,
        'step': step,
        'seed': seed,
        'combiner': config.combiner,
        'lambda': config.lam,
        'energy_mode': config.energy_mode,
        'hidden_sizes': list(config.hidden_sizes),
        'activation': config.activation,
    }


def _relative_artifacts(config, paths):
    return {key: os.path.relpath(paths[key], config.output_dir) for key in ('metrics', 'checkpoint', 'summary')}


def run_seed(config, seed):
    """Train one seed and write its artifacts; returns the run's index record.

    Divergence and non-finite values end the run with a FAILED marker next to the partial
    metrics instead of raising.
    """
    paths = run_paths(config, seed)
    os.makedirs(paths['run_dir'], exist_ok=True)
    if os.path.exists(paths['failure']):
        os.remove(paths['failure'])
    write_text_atomic(paths['config'], serialize_config(replace(config, seeds=(seed,))))

    env = make_env(config.env, config.energy_mode)
    agent_cls, train = TRAINERS[config.algorithm]
    trainer_config = config.trainer_config()
    agent = agent_cls(env.spec, trainer_config, seed)

    record = {
        'run_id': run_id(config),
        'label': config.label,
        'algorithm': config.algorithm,
        'env': config.env,
        'combiner': config.combiner,
        'lambda': config.lam,
        'seed': seed,
        'status': 'completed',
        **_relative_artifacts(config, paths),
    }
    with MetricsLog(paths['metrics']) as metrics:
        try:
            train(env, trainer_config, seed, metrics, agent)
        except (EnvDivergenceError, NonFiniteError) as e:
            logger.error(f"Run {record['run_id']} seed {seed} aborted: {e}")
            write_text_atomic(paths['failure'], f"{type(e).__name__}: {e}\n")
            record.update(status='failed', error=str(e))
            return record

    save_policy(paths['checkpoint'], agent.policy, checkpoint_metadata(config, seed, config.total_steps))
    last = metrics.last_eval()
    summary = dict(record)
    summary['final_eval'] = None if last is None else {
        'global_step': last['global_step'],
        'return_mean': last['eval_return_mean'],
        'energy_mean': last['eval_energy_mean'],
    }
    save_document(paths['summary'], summary)
    logger.info(f"Run {record['run_id']} seed {seed} completed")
    return record


def _run_seed_safely(config, seed):
    try:
        return run_seed(config, seed)
    except Exception as e:
        logger.error(f"Unexpected error in run {run_id(config)} seed {seed}: {e}")
        logger.error(traceback.format_exc())
        paths = run_paths(config, seed)
        os.makedirs(paths['run_dir'], exist_ok=True)
        write_text_atomic(paths['failure'], f"{type(e).__name__}: {e}\n")
        return {'run_id': run_id(config), 'label': config.label, 'algorithm': config.algorithm,
                'env': config.env, 'combiner': config.combiner, 'lambda': config.lam, 'seed': seed,
                'status': 'failed', 'error': str(e), **_relative_artifacts(config, paths)}


def worker_count(config, jobs):
    workers = config.max_workers or psutil.cpu_count(logical=False) or 1
    return max(1, min(workers, jobs))


def sweep_configs(config, lambdas, combiners=('pegrad', 'pcgrad_plus')):
    """Scalarized runs for every lambda (lambda=0 is the unconstrained base) plus the other combiners."""
    configs = [validate_config(replace(config, combiner='scalarized', lam=float(lam))) for lam in lambdas]
    configs += [validate_config(replace(config, combiner=name, lam=0.0)) for name in combiners
                if name != 'scalarized']
    return configs


class ExperimentExecutor:
    def __init__(self, output_dir):
        self.output_dir = output_dir
        self.logger = logger

    def execute(self, configs):
        """Run every (config, seed) pair, concurrently when more than one worker is available."""
        jobs = [(config, seed) for config in configs for seed in config.seeds]
        workers = worker_count(configs[0], len(jobs)) if jobs else 1
        self.logger.info(f"Executing {len(jobs)} runs with {workers} worker(s)")
        if workers == 1:
            records = [_run_seed_safely(config, seed) for config, seed in jobs]
        else:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                futures = {pool.submit(_run_seed_safely, config, seed): i for i, (config, seed) in enumerate(jobs)}
                records = [None] * len(jobs)
                for future in as_completed(futures):
                    records[futures[future]] = future.result()
        self.write_index(records)
        return records

    def index_path(self):
        return os.path.join(self.output_dir, INDEX_FILE)

    def write_index(self, records):
        """Merge ``records`` into the output directory's index, keyed by run id and seed."""
        path = self.index_path()
        existing = load_document(path).get('runs', []) if os.path.exists(path) else []
        keys = {(r['run_id'], r['seed']) for r in records}
        merged = [r for r in existing if (r['run_id'], r['seed']) not in keys] + list(records)
        merged.sort(key=lambda r: (r['run_id'], r['seed']))
        save_document(path, {'runs': merged})
        self.logger.info(f"Index with {len(merged)} runs written to {path}")
        return path


def load_index(path):
    """Index records with artifact paths resolved against the index location."""
    document = load_document(path)
    runs = document.get('runs')
    if not isinstance(runs, list):
        raise ValueError(f"{path} is not a run index")
    base = os.path.dirname(os.path.abspath(path))
    for record in runs:
        for key in ('metrics', 'checkpoint', 'summary'):
            record[key] = os.path.join(base, record[key])
    return runs
