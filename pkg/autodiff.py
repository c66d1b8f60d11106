# autodiff.py
"""
Minimal reverse-mode automatic differentiation over dense float64 arrays.

The graph is define-by-run: every forward op on a tensor that requires a gradient appends
a node to the active ``Graph``. ``backward`` walks that graph once in reverse insertion
order and then resets it, so each loss needs a fresh forward pass. Two losses that must be
differentiated separately (the task and energy actor losses) are built inside two
``Graph`` contexts.

Only the op surface needed for MLP policies and critics is provided. Broadcasting is
limited to adding a bias vector to every row of a batch, plus python-scalar shifts.
"""

import math
import threading
from collections import namedtuple
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

DTYPE = np.float64
LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


class ShapeError(ValueError):
    pass


class NonFiniteError(ValueError):
    pass


class DomainError(ValueError):
    pass


class GraphError(ValueError):
    pass


NodeRef = namedtuple('NodeRef', ['graph', 'generation', 'index'])


class Tensor:
    __slots__ = ('data', 'requires_grad', 'node', 'name')
    # ndarray <op> Tensor dispatches to the Tensor's reflected operator
    __array_ufunc__ = None

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data, dtype=DTYPE)
        self.requires_grad = requires_grad
        self.node = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data.copy()

    def item(self):
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self):
        return Tensor(self.data.copy())

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(scale(self, -1.0), other)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(value):
    return value if isinstance(value, Tensor) else Tensor(value)


@dataclass
class _Node:
    op: str
    parents: Tuple[Optional[int], ...]
    vjp: Optional[Callable]
    value: np.ndarray
    leaf: Optional[Tensor] = None


class Graph:
    """Ordered record of the ops of one forward pass.

    Usable as a context manager: ops executed inside ``with Graph():`` are recorded on
    that graph instead of the thread's default graph.
    """

    def __init__(self):
        self.nodes: List[_Node] = []
        self.generation = 0
        self._leaf_index = {}

    def __len__(self):
        return len(self.nodes)

    def __enter__(self):
        _graph_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        _graph_stack().pop()
        return False

    def reset(self):
        self.nodes = []
        self._leaf_index = {}
        self.generation += 1

    def index_of(self, tensor):
        """Node index of ``tensor`` in this graph, registering parameters as leaves."""
        if not tensor.requires_grad:
            return None
        ref = tensor.node
        if ref is not None:
            if ref.graph is not self or ref.generation != self.generation:
                raise GraphError("tensor was produced on another graph or before a reset")
            return ref.index
        key = id(tensor)
        index = self._leaf_index.get(key)
        if index is None:
            index = len(self.nodes)
            self.nodes.append(_Node('leaf', (), None, tensor.data, leaf=tensor))
            self._leaf_index[key] = index
        return index

    def record(self, op, inputs, value, vjp):
        parents = tuple(self.index_of(t) for t in inputs)
        out = Tensor(value, requires_grad=True)
        out.node = NodeRef(self, self.generation, len(self.nodes))
        self.nodes.append(_Node(op, parents, vjp, value))
        return out

    def backward(self, loss, wrt):
        """Gradients of the scalar ``loss`` with respect to each tensor in ``wrt``.

        Tensors that did not take part in the forward pass get zero gradients. The graph
        is reset afterwards.
        """
        if loss.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        if not self.nodes or loss.node is None:
            raise GraphError("backward called without a recorded forward pass")
        root = self.index_of(loss)

        grads = [None] * len(self.nodes)
        grads[root] = np.ones_like(self.nodes[root].value)
        for i in range(root, -1, -1):
            node = self.nodes[i]
            g = grads[i]
            if g is None or node.vjp is None:
                continue
            for parent, pg in zip(node.parents, node.vjp(g)):
                if parent is None or pg is None:
                    continue
                grads[parent] = pg if grads[parent] is None else grads[parent] + pg

        result = []
        for tensor in wrt:
            index = self._leaf_index.get(id(tensor))
            if index is None or grads[index] is None:
                result.append(np.zeros_like(tensor.data))
            else:
                result.append(np.array(grads[index], dtype=DTYPE).reshape(tensor.shape))
        self.reset()
        return result


_state = threading.local()


def _graph_stack():
    stack = getattr(_state, 'stack', None)
    if stack is None:
        stack = [Graph()]
        _state.stack = stack
        _state.grad_enabled = True
    return stack


def default_graph():
    return _graph_stack()[-1]


def grad_enabled():
    _graph_stack()
    return _state.grad_enabled


@contextmanager
def no_grad():
    """Run forward ops without recording them (target values, rollouts, evaluation)."""
    _graph_stack()
    previous = _state.grad_enabled
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = previous


def _check_finite(op, value):
    if not np.all(np.isfinite(value)):
        raise NonFiniteError(f"{op} produced a non-finite value")


def _graph_for(inputs):
    if not grad_enabled():
        return None
    graph = None
    for t in inputs:
        if t.requires_grad and t.node is not None:
            if graph is None:
                graph = t.node.graph
            elif t.node.graph is not graph:
                raise GraphError("inputs belong to different graphs")
    if graph is None and any(t.requires_grad for t in inputs):
        graph = default_graph()
    return graph


def _result(op, inputs, value, vjp):
    _check_finite(op, value)
    graph = _graph_for(inputs)
    if graph is None:
        return Tensor(value)
    return graph.record(op, inputs, value, vjp)


def _unbroadcast_bias(grad, shape):
    if grad.shape == shape:
        return grad
    return grad.sum(axis=0)


def _check_add_shapes(op, a, b):
    if a.shape == b.shape:
        return
    if a.ndim == 2 and b.ndim == 1 and a.shape[1] == b.shape[0]:
        return
    raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


# ---------------------------------------------------------------------------
# forward ops
# ---------------------------------------------------------------------------

def add(a, b):
    """Elementwise sum; ``b`` may be a bias vector added to every row, or a python scalar."""
    a = as_tensor(a)
    if isinstance(b, (int, float)):
        c = float(b)
        return _result('shift', (a,), a.data + c, lambda g: (g,))
    b = as_tensor(b)
    _check_add_shapes('add', a, b)
    return _result('add', (a, b), a.data + b.data,
                   lambda g: (g, _unbroadcast_bias(g, b.shape)))


def sub(a, b):
    a = as_tensor(a)
    if isinstance(b, (int, float)):
        return add(a, -float(b))
    b = as_tensor(b)
    _check_add_shapes('sub', a, b)
    return _result('sub', (a, b), a.data - b.data,
                   lambda g: (g, -_unbroadcast_bias(g, b.shape)))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"mul: shapes {a.shape} and {b.shape} differ")
    x, y = a.data, b.data
    return _result('mul', (a, b), x * y, lambda g: (g * y, g * x))


def scale(a, c):
    a = as_tensor(a)
    c = float(c)
    return _result('scale', (a,), a.data * c, lambda g: (g * c,))


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    x, y = a.data, b.data
    return _result('matmul', (a, b), x @ y, lambda g: (g @ y.T, x.T @ g))


def tanh(a):
    a = as_tensor(a)
    t = np.tanh(a.data)
    return _result('tanh', (a,), t, lambda g: (g * (1.0 - t * t),))


def relu(a):
    a = as_tensor(a)
    mask = a.data > 0
    return _result('relu', (a,), np.where(mask, a.data, 0.0), lambda g: (g * mask,))


def softplus(a):
    a = as_tensor(a)
    x = a.data
    sig = np.exp(-np.logaddexp(0.0, -x))
    return _result('softplus', (a,), np.logaddexp(0.0, x), lambda g: (g * sig,))


def exp(a):
    a = as_tensor(a)
    e = np.exp(a.data)
    return _result('exp', (a,), e, lambda g: (g * e,))


def log(a):
    a = as_tensor(a)
    x = a.data
    if np.any(x <= 0):
        raise DomainError("log of a non-positive value")
    return _result('log', (a,), np.log(x), lambda g: (g / x,))


def square(a):
    a = as_tensor(a)
    x = a.data
    return _result('square', (a,), x * x, lambda g: (2.0 * x * g,))


def sum(a, axis=None, keepdims=False):
    a = as_tensor(a)
    shape = a.shape
    value = np.sum(a.data, axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _result('sum', (a,), value, vjp)


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    count = a.size if axis is None else a.shape[axis]
    return scale(sum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def clamp(a, lo, hi):
    """Clip into [lo, hi]; the gradient passes only where the input lies inside."""
    a = as_tensor(a)
    x = a.data
    inside = (x >= lo) & (x <= hi)
    return _result('clamp', (a,), np.clip(x, lo, hi), lambda g: (g * inside,))


def minimum(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"minimum: shapes {a.shape} and {b.shape} differ")
    pick_a = a.data <= b.data
    return _result('minimum', (a, b), np.where(pick_a, a.data, b.data),
                   lambda g: (g * pick_a, g * ~pick_a))


def concat(tensors, axis=1):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    try:
        value = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as e:
        raise ShapeError(f"concat: {e}") from e
    splits = np.cumsum(sizes)[:-1]
    return _result('concat', tuple(tensors), value,
                   lambda g: tuple(np.split(g, splits, axis=axis)))


# ---------------------------------------------------------------------------
# gradients
# ---------------------------------------------------------------------------

def grad(loss, wrt: Sequence[Tensor]):
    """Gradients of ``loss`` with respect to arbitrary leaf tensors."""
    if loss.node is None:
        raise GraphError("backward called without a recorded forward pass")
    return loss.node.graph.backward(loss, list(wrt))


def backward(loss, module):
    """Gradient of ``loss`` with respect to every parameter of ``module``, as a ParamVector."""
    grads = grad(loss, module.parameters())
    return ParamVector.from_arrays(zip(module.parameter_names(), grads))


# ---------------------------------------------------------------------------
# flat parameter space
# ---------------------------------------------------------------------------

LayoutEntry = namedtuple('LayoutEntry', ['name', 'shape', 'offset'])


@dataclass
class ParamVector:
    values: np.ndarray
    layout: Tuple[LayoutEntry, ...]

    @classmethod
    def from_arrays(cls, named_arrays):
        layout = []
        chunks = []
        offset = 0
        for name, array in named_arrays:
            array = np.asarray(array, dtype=DTYPE)
            layout.append(LayoutEntry(name, tuple(array.shape), offset))
            chunks.append(array.ravel())
            offset += array.size
        values = np.concatenate(chunks) if chunks else np.zeros(0, dtype=DTYPE)
        return cls(values, tuple(layout))

    def __len__(self):
        return self.values.size

    def with_values(self, values):
        values = np.asarray(values, dtype=DTYPE)
        if values.shape != self.values.shape:
            raise ShapeError(f"expected {self.values.size} values, got {values.size}")
        return ParamVector(values, self.layout)

    def same_layout(self, other):
        return self.layout == other.layout

    def unflatten(self):
        arrays = {}
        for entry in self.layout:
            count = int(np.prod(entry.shape))
            arrays[entry.name] = self.values[entry.offset:entry.offset + count].reshape(entry.shape).copy()
        return arrays

    def named_arrays(self):
        arrays = self.unflatten()
        return [(entry.name, arrays[entry.name]) for entry in self.layout]


class Module:
    """Container of named parameter tensors with a fixed registration order."""

    def __init__(self):
        self._params = {}

    def register(self, name, array):
        tensor = Tensor(array, requires_grad=True, name=name)
        self._params[name] = tensor
        return tensor

    def parameters(self):
        return list(self._params.values())

    def parameter_names(self):
        return list(self._params.keys())

    def param_vector(self):
        return ParamVector.from_arrays((name, t.data) for name, t in self._params.items())

    def load_param_vector(self, vector):
        if vector.layout != self.param_vector().layout:
            raise ShapeError("parameter layout does not match this module")
        for name, array in vector.unflatten().items():
            self._params[name].data = array

    def num_parameters(self):
        return int(np.sum([t.size for t in self._params.values()]))


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    size: int
    lr: float = 3e-4
    betas: Tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.0
    step: int = 0
    m: np.ndarray = field(default=None)
    v: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.m is None:
            self.m = np.zeros(self.size, dtype=DTYPE)
        if self.v is None:
            self.v = np.zeros(self.size, dtype=DTYPE)


def adam_step(state, params, grad):
    """One bias-corrected Adam update; mutates ``state`` and returns the new parameters."""
    if len(grad) != len(params) or state.m.size != len(params):
        raise ShapeError(f"adam_step: grad has {len(grad)} entries, params {len(params)}, state {state.m.size}")
    g = grad.values
    if state.weight_decay:
        g = g + state.weight_decay * params.values
    b1, b2 = state.betas
    state.step += 1
    state.m = b1 * state.m + (1.0 - b1) * g
    state.v = b2 * state.v + (1.0 - b2) * g * g
    m_hat = state.m / (1.0 - b1 ** state.step)
    v_hat = state.v / (1.0 - b2 ** state.step)
    return params.with_values(params.values - state.lr * m_hat / (np.sqrt(v_hat) + state.eps))


class Adam:
    """Adam bound to a module; ``step`` consumes an externally supplied gradient vector."""

    def __init__(self, module, lr, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0):
        self.module = module
        self.state = AdamState(module.num_parameters(), lr=lr, betas=betas, eps=eps,
                               weight_decay=weight_decay)

    def step(self, grad):
        params = self.module.param_vector()
        if not params.same_layout(grad):
            raise ShapeError("gradient layout does not match the optimised module")
        self.module.load_param_vector(adam_step(self.state, params, grad))
