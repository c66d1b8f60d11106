# utils/metrics.py

import csv
import os
from dataclasses import dataclass, field
from typing import Dict, List, Tuple

import numpy as np
import pandas as pd

from .constants import EVAL_COLUMNS, METRICS_COLUMNS
from .logger import setup_logger

logger = setup_logger('metrics')


def _cell(value):
    if value is None:
        return ''
    if isinstance(value, (bool, np.bool_)):
        return int(value)
    if isinstance(value, (np.floating, float)):
        return repr(float(value))
    return value


class MetricsLog:
    """Training metrics, one row per logged global step, optionally streamed to CSV.

    Values logged for the same step are merged into one row; steps must increase. A row is
    written to disk once a later step is logged or the log is closed.
    """

    def __init__(self, path=None):
        self.path = path
        self.rows: List[Dict[str, object]] = []
        self._handle = None
        self._writer = None
        self._pending = False
        if path is not None:
            directory = os.path.dirname(os.path.abspath(path))
            os.makedirs(directory, exist_ok=True)
            self._handle = open(path, 'w', newline='')
            self._writer = csv.DictWriter(self._handle, fieldnames=METRICS_COLUMNS, lineterminator='\n')
            self._writer.writeheader()

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        self.close()
        return False

    def log(self, global_step, **values):
        unknown = set(values) - set(METRICS_COLUMNS)
        if unknown:
            raise KeyError(f"unknown metrics columns: {sorted(unknown)}")
        global_step = int(global_step)
        if self.rows and self.rows[-1]['global_step'] == global_step:
            self.rows[-1].update({k: v for k, v in values.items() if v is not None})
            return self.rows[-1]
        if self.rows and global_step < self.rows[-1]['global_step']:
            raise ValueError(f"global_step must increase, got {global_step} after {self.rows[-1]['global_step']}")
        self._flush_pending()
        row = {'global_step': global_step}
        row.update({k: v for k, v in values.items() if v is not None})
        self.rows.append(row)
        self._pending = True
        return row

    def _flush_pending(self):
        if self._writer is not None and self._pending:
            row = self.rows[-1]
            self._writer.writerow({column: _cell(row.get(column)) for column in METRICS_COLUMNS})
            self._handle.flush()
        self._pending = False

    def close(self):
        self._flush_pending()
        if self._handle is not None:
            self._handle.close()
            self._handle = None
            self._writer = None

    def eval_rows(self):
        return [row for row in self.rows if 'eval_return_mean' in row]

    def episode_rows(self):
        return [row for row in self.rows if 'episode_return_task' in row]

    def last_eval(self):
        rows = self.eval_rows()
        return rows[-1] if rows else None

    def to_frame(self):
        return pd.DataFrame(self.rows, columns=list(METRICS_COLUMNS))


def load_metrics(path):
    """Read a metrics CSV into a DataFrame with the fixed column order."""
    frame = pd.read_csv(path)
    missing = [column for column in METRICS_COLUMNS if column not in frame.columns]
    if missing:
        raise ValueError(f"{path} lacks metrics columns {missing}")
    return frame[list(METRICS_COLUMNS)]


def final_evaluation(frame):
    """(return, energy) of the last evaluation row of a run, or None if it never evaluated."""
    evals = frame.dropna(subset=list(EVAL_COLUMNS))
    if evals.empty:
        return None
    last = evals.iloc[-1]
    return float(last['eval_return_mean']), float(last['eval_energy_mean'])


def best_evaluation(frame):
    """(return, energy) of the evaluation with the highest mean return."""
    evals = frame.dropna(subset=list(EVAL_COLUMNS))
    if evals.empty:
        return None
    best = evals.loc[evals['eval_return_mean'].idxmax()]
    return float(best['eval_return_mean']), float(best['eval_energy_mean'])


def eval_curves(frames, column):
    """Align the evaluation series of several runs on their common steps.

    Returns ``(steps, values)`` with values shaped (runs, steps).
    """
    series = [f.dropna(subset=[column]).set_index('global_step')[column] for f in frames]
    common = sorted(set.intersection(*(set(s.index) for s in series))) if series else []
    values = np.array([[float(s.loc[step]) for step in common] for s in series])
    return np.asarray(common, dtype=np.int64), values.reshape(len(series), len(common))


def bootstrap_ci(samples, resamples=1000, seed=0, confidence=0.95):
    """Mean and percentile bootstrap interval over the first axis (the seeds).

    ``samples`` has shape (seeds, points); returns (mean, low, high), each of shape (points,).
    """
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim == 1:
        samples = samples[:, None]
    n = samples.shape[0]
    if n == 0:
        raise ValueError("bootstrap needs at least one sample")
    rng = np.random.default_rng(seed)
    indices = rng.integers(0, n, size=(resamples, n))
    means = samples[indices].mean(axis=1)
    tail = (1.0 - confidence) / 2.0 * 100.0
    low, high = np.percentile(means, [tail, 100.0 - tail], axis=0)
    mean = samples.mean(axis=0)
    # percentiles of identical values can drift by an ulp
    return mean, np.minimum(low, mean), np.maximum(high, mean)


@dataclass
class ParetoPoint:
    run_id: str
    label: str
    mean_return: float
    mean_energy: float
    seed_returns: Tuple[float, ...] = field(default_factory=tuple)
    seed_energies: Tuple[float, ...] = field(default_factory=tuple)
    best_returns: Tuple[float, ...] = field(default_factory=tuple)
    best_energies: Tuple[float, ...] = field(default_factory=tuple)

    def as_row(self):
        return {
            'run_id': self.run_id,
            'label': self.label,
            'mean_return': self.mean_return,
            'mean_energy': self.mean_energy,
            'seed_returns': ';'.join(repr(v) for v in self.seed_returns),
            'seed_energies': ';'.join(repr(v) for v in self.seed_energies),
            'best_returns': ';'.join(repr(v) for v in self.best_returns),
            'best_energies': ';'.join(repr(v) for v in self.best_energies),
        }


def aggregate_pareto(run_id, label, frames):
    """ParetoPoint over the runs in ``frames`` that reached an evaluation."""
    finals = [final_evaluation(f) for f in frames]
    bests = [best_evaluation(f) for f in frames]
    completed = [(fin, best) for fin, best in zip(finals, bests) if fin is not None]
    if not completed:
        logger.warning(f"No completed evaluations for {label}")
        return None
    returns = tuple(fin[0] for fin, _ in completed)
    energies = tuple(fin[1] for fin, _ in completed)
    return ParetoPoint(
        run_id=run_id,
        label=label,
        mean_return=float(np.mean(returns)),
        mean_energy=float(np.mean(energies)),
        seed_returns=returns,
        seed_energies=energies,
        best_returns=tuple(best[0] for _, best in completed),
        best_energies=tuple(best[1] for _, best in completed),
    )


def pareto_frame(points: List[ParetoPoint]):
    return pd.DataFrame([p.as_row() for p in points])
