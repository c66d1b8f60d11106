# orchestrator.py

import argparse
import os
import sys
import traceback

from benchmarking import Benchmarking
from envs import make_env
from experiment_execution import ExperimentExecutor, sweep_configs
from nets import load_policy
from report_writer import PLOT_KINDS, MissingRunsError, ReportWriter
from utils.config import ConfigError, load_config
from utils.constants import DEFAULT_EVAL_EPISODES, DEFAULT_LAMBDAS, EXIT_CONFIG_ERROR, EXIT_OK, EXIT_RUN_FAILURE
from utils.json_utils import CheckpointError, load_checkpoint, save_document
from utils.logger import setup_logger

main_logger = setup_logger('main')


def _float_list(text):
    try:
        return [float(item) for item in text.split(',') if item.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a comma-separated list of numbers, got {text!r}") from None


def _name_list(text):
    if text.strip().lower() in ('', 'none'):
        return []
    return [item.strip() for item in text.split(',') if item.strip()]


def build_parser():
    parser = argparse.ArgumentParser(description='Multi-objective policy gradient experiments')
    commands = parser.add_subparsers(dest='command', required=True)

    train = commands.add_parser('train', help='train one run per configured seed')
    train.add_argument('--config', required=True, help='key=value run configuration file')
    train.add_argument('--seed-override', type=int, default=None, help='run this single seed instead')
    train.add_argument('--output-dir', default=None, help='overrides output_dir from the config')

    evaluate = commands.add_parser('eval', help='evaluate a checkpoint with deterministic actions')
    evaluate.add_argument('--checkpoint', required=True)
    evaluate.add_argument('--episodes', type=int, default=DEFAULT_EVAL_EPISODES)
    evaluate.add_argument('--seed', type=int, default=0)
    evaluate.add_argument('--output', default=None, help='summary file (default: next to the checkpoint)')

    sweep = commands.add_parser('sweep', help='scalarized lambda grid plus gradient-combining runs')
    sweep.add_argument('--config', required=True)
    sweep.add_argument('--lambdas', type=_float_list, default=list(DEFAULT_LAMBDAS))
    sweep.add_argument('--combiners', type=_name_list, default=['pegrad', 'pcgrad_plus'],
                       help="extra combiners to run next to the grid, or 'none'")
    sweep.add_argument('--output-dir', default=None)

    plot = commands.add_parser('plot', help='render a figure from a run index')
    plot.add_argument('--runs', required=True, help='index.json written by train or sweep')
    plot.add_argument('--kind', choices=PLOT_KINDS, required=True)
    plot.add_argument('--output', default=None, help='SVG path (default: <kind>.svg next to the index)')
    plot.add_argument('--bootstrap-seed', type=int, default=0)
    plot.add_argument('--bootstrap-resamples', type=int, default=1000)
    return parser


def _load(args):
    config = load_config(args.config)
    changes = {}
    if getattr(args, 'output_dir', None):
        changes['output_dir'] = args.output_dir
    if getattr(args, 'seed_override', None) is not None:
        changes['seeds'] = (args.seed_override,)
    return config.with_overrides(**changes) if changes else config


def _report(records):
    failed = [r for r in records if r['status'] != 'completed']
    for record in failed:
        print(f"run {record['run_id']} seed {record['seed']} failed: {record.get('error', 'unknown error')}",
              file=sys.stderr)
    return EXIT_RUN_FAILURE if failed else EXIT_OK


def command_train(args):
    config = _load(args)
    main_logger.info(f"train: {config.algorithm} on {config.env}, seeds {list(config.seeds)}")
    return _report(ExperimentExecutor(config.output_dir).execute([config]))


def command_sweep(args):
    config = _load(args)
    configs = sweep_configs(config, args.lambdas, args.combiners)
    main_logger.info(f"sweep: {len(configs)} configurations x {len(config.seeds)} seeds")
    return _report(ExperimentExecutor(config.output_dir).execute(configs))


def command_eval(args):
    if args.episodes < 1:
        raise ConfigError('episodes', "must be >= 1")
    metadata, _ = load_checkpoint(args.checkpoint)
    env_id = metadata.get('env')
    try:
        env = make_env(env_id, metadata.get('energy_mode', 'abs_torque'))
    except ValueError as e:
        raise CheckpointError(f"checkpoint {args.checkpoint} names an unusable environment: {e}") from e
    policy, metadata = load_policy(args.checkpoint, env.spec)
    summary = Benchmarking(env_id, env.spec.energy_mode, args.episodes).evaluate(policy, args.seed)
    document = {'checkpoint': args.checkpoint, 'env': env_id, 'seed': args.seed, **summary.as_dict()}
    output = args.output or os.path.join(os.path.dirname(os.path.abspath(args.checkpoint)), 'eval_summary.json')
    save_document(output, document)
    print(f"return {summary.mean_return:.6g} +/- {summary.std_return:.6g}, "
          f"energy {summary.mean_energy:.6g} +/- {summary.std_energy:.6g} over {summary.episodes} episodes")
    return EXIT_OK


def command_plot(args):
    writer = ReportWriter(args.runs, args.bootstrap_seed, args.bootstrap_resamples)
    output = args.output or os.path.join(os.path.dirname(os.path.abspath(args.runs)), f'{args.kind}.svg')
    writer.plot(args.kind, output)
    print(output)
    return EXIT_OK


COMMANDS = {
    'train': command_train,
    'eval': command_eval,
    'sweep': command_sweep,
    'plot': command_plot,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as e:
        main_logger.error(f"Configuration error: {e}")
        print(f"configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG_ERROR
    except (CheckpointError, MissingRunsError, OSError) as e:
        main_logger.error(f"{args.command} failed: {e}")
        print(f"{args.command} failed: {e}", file=sys.stderr)
        return EXIT_RUN_FAILURE
    except Exception as e:
        main_logger.error(f"An unexpected error occurred: {e}")
        main_logger.error(traceback.format_exc())
        print(f"unexpected error: {e}", file=sys.stderr)
        return EXIT_RUN_FAILURE


if __name__ == "__main__":
    sys.exit(main())
