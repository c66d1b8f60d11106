# combine.py
"""
Gradient combination for two-objective policy updates.

Each combiner takes the task-loss gradient g_R and the energy-loss gradient g_E over the
flattened policy parameters and returns the direction handed to the optimizer together with
geometry diagnostics. Combiners are pure functions.
"""

import math
from dataclasses import dataclass
from functools import partial

import numpy as np

from autodiff import ParamVector
from utils.constants import COMBINERS

# below this task-gradient norm the projection is skipped
NORM_EPS = 1e-12


class CombinerError(ValueError):
    pass


@dataclass(frozen=True)
class GradPair:
    g_R: ParamVector
    g_E: ParamVector

    def __post_init__(self):
        if len(self.g_R) != len(self.g_E):
            raise CombinerError(f"gradient lengths differ: {len(self.g_R)} vs {len(self.g_E)}")
        if not (np.all(np.isfinite(self.g_R.values)) and np.all(np.isfinite(self.g_E.values))):
            raise CombinerError("gradient pair holds non-finite entries")


@dataclass(frozen=True)
class CombinerDiagnostics:
    beta_scale: float
    cos_g: float
    norm_gR: float
    norm_gE: float
    norm_gE_perp: float
    projected: bool

    def as_row(self):
        return {
            'beta_scale': self.beta_scale,
            'cos_g': self.cos_g,
            'norm_gR': self.norm_gR,
            'norm_gE': self.norm_gE,
            'norm_gE_perp': self.norm_gE_perp,
            'projected': int(self.projected),
        }


@dataclass(frozen=True)
class CombinerOutput:
    direction: ParamVector
    diagnostics: CombinerDiagnostics


def _values(vector):
    return vector.values if isinstance(vector, ParamVector) else np.asarray(vector, dtype=np.float64)


def _check(g_E, g_R):
    if g_E.shape != g_R.shape:
        raise CombinerError(f"gradient lengths differ: {g_E.size} vs {g_R.size}")
    if not (np.all(np.isfinite(g_E)) and np.all(np.isfinite(g_R))):
        raise CombinerError("gradient holds non-finite entries")


def _project(g_E, g_R):
    norm_sq = float(g_R @ g_R)
    if math.sqrt(norm_sq) < NORM_EPS:
        return g_E.copy()
    return g_E - (float(g_R @ g_E) / norm_sq) * g_R


def project_orthogonal(g_E, g_R):
    """Component of ``g_E`` orthogonal to ``g_R``; ``g_E`` itself when ``g_R`` is ~0.

    Accepts ParamVectors (the result keeps the layout of ``g_E``) or plain arrays.
    """
    e, r = _values(g_E), _values(g_R)
    _check(e, r)
    v = _project(e, r)
    return g_E.with_values(v) if isinstance(g_E, ParamVector) else v


def _diagnostics(g_R, g_E, g_E_perp, beta_scale, projected):
    norm_r = float(np.linalg.norm(g_R))
    norm_e = float(np.linalg.norm(g_E))
    cos_g = float(g_R @ g_E) / (norm_r * norm_e) if norm_r > 0 and norm_e > 0 else 0.0
    return CombinerDiagnostics(beta_scale=float(beta_scale), cos_g=cos_g, norm_gR=norm_r,
                               norm_gE=norm_e, norm_gE_perp=float(np.linalg.norm(g_E_perp)),
                               projected=bool(projected))


def pegrad_combine(pair):
    """g_R plus the projected energy gradient, clamped to the norm of g_R."""
    g_R, g_E = pair.g_R.values, pair.g_E.values
    v = _project(g_E, g_R)
    norm_r = float(np.linalg.norm(g_R))
    norm_v = float(np.linalg.norm(v))
    beta_scale = 1.0 if norm_v == 0.0 else min(1.0, norm_r / norm_v)
    clamped = v * beta_scale if norm_v > norm_r else v
    diagnostics = _diagnostics(g_R, g_E, v, beta_scale, projected=norm_r >= NORM_EPS)
    return CombinerOutput(pair.g_R.with_values(g_R + clamped), diagnostics)


def pcgrad_plus_combine(pair):
    """Remove the conflicting component of g_E only when g_R . g_E < 0; no norm clamp."""
    g_R, g_E = pair.g_R.values, pair.g_E.values
    conflict = float(g_R @ g_E) < 0.0
    v = _project(g_E, g_R) if conflict else g_E
    diagnostics = _diagnostics(g_R, g_E, _project(g_E, g_R), 1.0, projected=conflict)
    return CombinerOutput(pair.g_R.with_values(g_R + v), diagnostics)


def scalarized_combine(pair, lam):
    if lam < 0 or not math.isfinite(lam):
        raise CombinerError(f"trade-off lambda must be a finite value >= 0, got {lam}")
    g_R, g_E = pair.g_R.values, pair.g_E.values
    direction = g_R + lam * g_E if lam != 0 else g_R.copy()
    diagnostics = _diagnostics(g_R, g_E, _project(g_E, g_R), 1.0, projected=False)
    return CombinerOutput(pair.g_R.with_values(direction), diagnostics)


def make_combiner(name, lam=0.0):
    """Combiner callable ``pair -> CombinerOutput`` for a config name."""
    if name == 'pegrad':
        return pegrad_combine
    if name == 'pcgrad_plus':
        return pcgrad_plus_combine
    if name == 'scalarized':
        if lam < 0:
            raise CombinerError(f"trade-off lambda must be >= 0, got {lam}")
        return partial(scalarized_combine, lam=lam)
    raise CombinerError(f"unknown combiner {name!r}, expected one of {COMBINERS}")
