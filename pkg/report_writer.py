# report_writer.py

import io
import os
from collections import OrderedDict

import matplotlib

matplotlib.use('Agg')
import matplotlib.pyplot as plt  # noqa: E402

from experiment_execution import load_index  # noqa: E402
from utils.json_utils import write_text_atomic  # noqa: E402
from utils.logger import setup_logger  # noqa: E402
from utils.metrics import aggregate_pareto, bootstrap_ci, eval_curves, load_metrics, pareto_frame  # noqa: E402

PLOT_KINDS = ('pareto', 'sample', 'energy')
CURVE_COLUMNS = {'sample': 'eval_return_mean', 'energy': 'eval_energy_mean'}
CURVE_LABELS = {'sample': 'mean evaluation return', 'energy': 'mean episode energy'}

# fixed SVG element ids and no timestamp, so identical inputs give identical files
SVG_HASHSALT = 'mopg-report'


class MissingRunsError(ValueError):
    pass


class ReportWriter:
    """Pareto table and static SVG figures built from a run index."""

    def __init__(self, index_path, bootstrap_seed=0, bootstrap_resamples=1000):
        self.logger = setup_logger('report_writer')
        self.index_path = index_path
        self.bootstrap_seed = bootstrap_seed
        self.bootstrap_resamples = bootstrap_resamples
        self.records = load_index(index_path)

    def completed_runs(self):
        """Completed runs grouped by run id, as ``run_id -> (label, [metrics frames])``."""
        groups = OrderedDict()
        for record in self.records:
            if record.get('status') != 'completed':
                continue
            if not os.path.exists(record['metrics']):
                raise MissingRunsError(f"metrics file {record['metrics']} of {record['run_id']} is missing")
            label, frames = groups.setdefault(record['run_id'], (record['label'], []))
            frames.append(load_metrics(record['metrics']))
        if not groups:
            raise MissingRunsError(f"{self.index_path} references no completed runs")
        return groups

    def pareto_points(self):
        points = []
        for run_id, (label, frames) in self.completed_runs().items():
            point = aggregate_pareto(run_id, label, frames)
            if point is not None:
                points.append(point)
        return points

    def write_pareto_table(self, path):
        frame = pareto_frame(self.pareto_points())
        write_text_atomic(path, frame.to_csv(index=False, lineterminator='\n'))
        self.logger.info(f"Pareto table written to {path}")
        return path

    def plot(self, kind, output_path):
        if kind not in PLOT_KINDS:
            raise ValueError(f"unknown plot kind {kind!r}, expected one of {PLOT_KINDS}")
        plt.rcParams['svg.hashsalt'] = SVG_HASHSALT
        fig, ax = plt.subplots(figsize=(6.4, 4.8))
        try:
            if kind == 'pareto':
                self._plot_pareto(ax)
                self.write_pareto_table(os.path.splitext(output_path)[0] + '.csv')
            else:
                self._plot_curves(ax, kind)
            fig.tight_layout()
            buffer = io.StringIO()
            fig.savefig(buffer, format='svg', metadata={'Date': None})
        finally:
            plt.close(fig)
        write_text_atomic(output_path, buffer.getvalue())
        self.logger.info(f"{kind} plot written to {output_path}")
        return output_path

    def _plot_pareto(self, ax):
        for i, point in enumerate(self.pareto_points()):
            color = f'C{i % 10}'
            # light markers: per-seed final values; hollow: per-seed best checkpoints
            ax.scatter(point.seed_energies, point.seed_returns, color=color, alpha=0.3, s=20)
            ax.scatter(point.best_energies, point.best_returns, facecolors='none', edgecolors=color,
                       alpha=0.3, s=20)
            ax.scatter([point.mean_energy], [point.mean_return], color=color, s=60, label=point.label)
        ax.set_xlabel('mean episode energy')
        ax.set_ylabel('mean evaluation return')
        ax.legend(loc='best', fontsize='small')

    def _plot_curves(self, ax, kind):
        column = CURVE_COLUMNS[kind]
        for i, (run_id, (label, frames)) in enumerate(self.completed_runs().items()):
            color = f'C{i % 10}'
            steps, values = eval_curves(frames, column)
            if steps.size == 0:
                self.logger.warning(f"{run_id} has no common evaluation steps; skipped")
                continue
            if values.shape[0] < 2:
                self.logger.warning(f"{run_id} has {values.shape[0]} seed(s); plotting raw curves without a band")
                for row in values:
                    ax.plot(steps, row, color=color, label=label)
                continue
            mean, low, high = bootstrap_ci(values, self.bootstrap_resamples, self.bootstrap_seed)
            ax.plot(steps, mean, color=color, label=label)
            ax.fill_between(steps, low, high, color=color, alpha=0.2, linewidth=0)
        ax.set_xlabel('environment steps')
        ax.set_ylabel(CURVE_LABELS[kind])
        ax.legend(loc='best', fontsize='small')
