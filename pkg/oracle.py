# oracle.py
"""
Verification helpers used by the test suites: central finite differences, a dense-search
projection, the first-order invariance probe and the tabular dynamic-programming oracles.
Nothing here runs on the training path.
"""

import math
from dataclasses import dataclass
from typing import Tuple

import numpy as np

import autodiff as ad
from autodiff import NonFiniteError, ParamVector, no_grad
from envs import policy_evaluation, value_iteration

__all__ = [
    'FiniteDiffReport', 'InvarianceProbe', 'compare_gradients', 'finite_diff',
    'first_order_invariance_probe', 'module_loss_fn', 'policy_evaluation',
    'projection_bruteforce', 'bruteforce_pitch', 'relative_error', 'value_iteration',
]

DEFAULT_EPS = 1e-5


@dataclass(frozen=True)
class FiniteDiffReport:
    max_relative_error: float
    argmax: int
    eps: float

    def passes(self, tolerance):
        return self.max_relative_error <= tolerance


def relative_error(a, b, floor=1e-12):
    """|a - b| / max(|a|, |b|, floor), elementwise."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def _evaluate(loss_fn, theta):
    value = float(loss_fn(theta))
    if not math.isfinite(value):
        raise NonFiniteError(f"loss is not finite at probe point ({value})")
    return value


def finite_diff(loss_fn, theta, eps=DEFAULT_EPS):
    """Central-difference gradient of ``loss_fn`` at ``theta``.

    ``theta`` is a ParamVector or a 1-D array; ``loss_fn`` receives the same kind of object
    and must be deterministic (fixed noise).
    """
    is_vector = isinstance(theta, ParamVector)
    base = theta.values if is_vector else np.asarray(theta, dtype=np.float64)
    wrap = theta.with_values if is_vector else (lambda values: values)

    grad = np.zeros_like(base)
    for i in range(base.size):
        step = np.zeros_like(base)
        step[i] = eps
        upper = _evaluate(loss_fn, wrap(base + step))
        lower = _evaluate(loss_fn, wrap(base - step))
        grad[i] = (upper - lower) / (2.0 * eps)
    return wrap(grad)


def compare_gradients(analytic, numeric, eps=DEFAULT_EPS, floor=1e-12):
    """Worst elementwise relative error; entries smaller than ``floor`` are compared absolutely."""
    a = analytic.values if isinstance(analytic, ParamVector) else np.asarray(analytic, dtype=np.float64)
    b = numeric.values if isinstance(numeric, ParamVector) else np.asarray(numeric, dtype=np.float64)
    if a.shape != b.shape:
        raise ad.ShapeError(f"gradient shapes differ: {a.shape} vs {b.shape}")
    errors = relative_error(a, b, floor)
    index = int(np.argmax(errors)) if errors.size else 0
    return FiniteDiffReport(float(errors[index]) if errors.size else 0.0, index, eps)


def module_loss_fn(module, build_loss):
    """Turn ``build_loss(module) -> scalar Tensor`` into a function of the flat parameters.

    The module's parameters are restored after every evaluation.
    """
    def loss_fn(theta):
        saved = module.param_vector()
        module.load_param_vector(theta)
        try:
            with no_grad():
                return build_loss(module).item()
        finally:
            module.load_param_vector(saved)
    return loss_fn


@dataclass(frozen=True)
class InvarianceProbe:
    etas: Tuple[float, ...]
    deltas: Tuple[float, ...]

    def order(self):
        """Fitted exponent p in |dL| ~ C * eta^p (2 for motion that preserves L to first order)."""
        return float(np.polyfit(np.log(self.etas), np.log(np.maximum(self.deltas, 1e-300)), 1)[0])

    def ratios(self):
        """|dL(eta_k)| / |dL(eta_k+1)| for consecutive probe sizes."""
        d = np.asarray(self.deltas)
        return tuple(float(r) for r in d[:-1] / np.maximum(d[1:], 1e-300))


def first_order_invariance_probe(loss_fn, theta, direction, etas=(1e-2, 5e-3, 2.5e-3)):
    """|L(theta - eta * u) - L(theta)| for each step size eta along the unit vector u."""
    u = direction.values if isinstance(direction, ParamVector) else np.asarray(direction, dtype=np.float64)
    norm = float(np.linalg.norm(u))
    if not math.isclose(norm, 1.0, rel_tol=1e-9):
        raise ValueError(f"probe direction must have unit norm, got {norm}")
    is_vector = isinstance(theta, ParamVector)
    base = theta.values if is_vector else np.asarray(theta, dtype=np.float64)
    wrap = theta.with_values if is_vector else (lambda values: values)

    l0 = _evaluate(loss_fn, wrap(base))
    deltas = tuple(abs(_evaluate(loss_fn, wrap(base - eta * u)) - l0) for eta in etas)
    return InvarianceProbe(tuple(float(e) for e in etas), deltas)


def bruteforce_pitch(g_E, resolution=401):
    """Spacing of the search grid used by ``projection_bruteforce`` for this input."""
    radius = max(float(np.linalg.norm(g_E)), 1e-12)
    return 2.0 * radius / (resolution - 1)


def projection_bruteforce(g_E, g_R, resolution=401):
    """Closest point to ``g_E`` on the hyperplane g_R . v = 0, by dense grid search.

    Only 2-D and 3-D inputs are supported. The plane is parameterised by an orthonormal
    basis of the null space of g_R and searched over a box of half-width |g_E|.
    """
    g_E = np.asarray(g_E, dtype=np.float64)
    g_R = np.asarray(g_R, dtype=np.float64)
    if g_E.shape != g_R.shape or g_E.ndim != 1 or g_E.size not in (2, 3):
        raise ValueError(f"projection_bruteforce supports 2-D and 3-D vectors only, got {g_E.shape}")

    dim = g_E.size
    if float(np.linalg.norm(g_R)) < 1e-12:
        basis = np.eye(dim)
    else:
        _, _, vt = np.linalg.svd(g_R[None, :])
        basis = vt[1:].T
    k = basis.shape[1]
    if k == 3:
        resolution = min(resolution, 101)

    radius = max(float(np.linalg.norm(g_E)), 1e-12)
    axis = np.linspace(-radius, radius, resolution)
    coords = np.stack(np.meshgrid(*([axis] * k), indexing='ij'), axis=-1).reshape(-1, k)
    candidates = coords @ basis.T
    distances = np.linalg.norm(candidates - g_E, axis=1)
    return candidates[int(np.argmin(distances))]
