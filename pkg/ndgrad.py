# ndgrad.py
"""
Minimal dense-array engine with reverse-mode differentiation and Adam.

Every Tensor is a 2-D float64 matrix. Trainable tensors (parameters) and every
tensor computed from one carry a node id and a closure mapping the gradient of
their output to gradients of their inputs. The graph is rebuilt on every forward
pass (tape style) and walked once by `backward`.
"""

import itertools
import threading
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import expit, logsumexp

from config import ADAM_BETA1, ADAM_BETA2, ADAM_EPS, NORM_EPS
from errors import ContractError, DataValidationError, DegenerateRowError, ShapeError

# Gradient of the loss w.r.t. each tracked node, keyed by node id.
GradMap = Dict[int, np.ndarray]

_node_ids = itertools.count()
_state = threading.local()


def _grad_enabled() -> bool:
    return getattr(_state, 'grad_enabled', True)


@contextmanager
def no_grad():
    """Within this block every op returns an untracked constant."""
    previous = _grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = previous


class Tensor:
    """A 2-D float64 matrix, optionally part of the active computation graph."""

    __slots__ = ('values', 'trainable', 'node_id', 'op', '_parents', '_backward')

    def __init__(self, values: np.ndarray, trainable: bool = False,
                 parents: Tuple['Tensor', ...] = (), backward_fn: Callable = None, op: str = ''):
        self.values = values
        self.trainable = trainable
        self.node_id = next(_node_ids) if (trainable or parents) else None
        self.op = op
        self._parents = parents
        self._backward = backward_fn

    @property
    def shape(self) -> Tuple[int, int]:
        return self.values.shape

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @property
    def cols(self) -> int:
        return self.values.shape[1]

    @property
    def tracked(self) -> bool:
        return self.node_id is not None

    def item(self) -> float:
        if self.values.size != 1:
            raise ContractError(f"item() needs a 1x1 tensor, got {self.shape}")
        return float(self.values[0, 0])

    def numpy(self) -> np.ndarray:
        return self.values.copy()

    def __matmul__(self, other):
        return matmul(self, other)

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __repr__(self):
        kind = 'param' if self.trainable else (self.op or 'const')
        return f"Tensor(shape={self.shape}, {kind}, node={self.node_id})"


# --- Construction ---

def _check_finite(values: np.ndarray):
    if not np.all(np.isfinite(values)):
        raise DataValidationError("Tensor values must be finite (no NaN/Inf)")


def tensor_from(values, shape: Tuple[int, int]) -> Tensor:
    """Builds a constant tensor from a flat list of values and a (rows, cols) shape."""
    arr = np.asarray(values, dtype=np.float64).ravel()
    rows, cols = shape
    if rows < 0 or cols < 0 or arr.size != rows * cols:
        raise ShapeError(f"{arr.size} values cannot fill shape {shape}")
    _check_finite(arr)
    return Tensor(arr.reshape(rows, cols).copy())


def constant(values) -> Tensor:
    """Wraps a 2-D array (or 1-D, as one row per element) as an untracked tensor."""
    if isinstance(values, Tensor):
        return values
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    if arr.ndim != 2:
        raise ShapeError(f"Tensors are rank 2, got an array of rank {arr.ndim}")
    _check_finite(arr)
    return Tensor(arr)


def parameter(values) -> Tensor:
    """A trainable tensor; it gets a gradient entry on every backward pass."""
    arr = np.array(values, dtype=np.float64, copy=True)
    if arr.ndim != 2:
        raise ShapeError(f"Parameters are rank 2, got an array of rank {arr.ndim}")
    _check_finite(arr)
    return Tensor(arr, trainable=True)


def glorot_uniform(fan_in: int, fan_out: int, rng: np.random.Generator) -> Tensor:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return parameter(rng.uniform(-limit, limit, size=(fan_in, fan_out)))


def _result(values: np.ndarray, parents: Tuple[Tensor, ...], backward_fn: Callable, op: str) -> Tensor:
    if _grad_enabled() and any(p.tracked for p in parents):
        return Tensor(values, parents=parents, backward_fn=backward_fn, op=op)
    return Tensor(values)


# --- Operations ---

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.cols != b.rows:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} x {b.shape}")
    av, bv = a.values, b.values

    def backward_fn(g):
        return g @ bv.T, av.T @ g

    return _result(av @ bv, (a, b), backward_fn, 'matmul')


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; `b` may also be a 1 x cols row broadcast over the rows of `a`."""
    if a.shape == b.shape:
        def backward_fn(g):
            return g, g
    elif b.rows == 1 and b.cols == a.cols:
        def backward_fn(g):
            return g, g.sum(axis=0, keepdims=True)
    else:
        raise ShapeError(f"add cannot combine {a.shape} and {b.shape}")
    return _result(a.values + b.values, (a, b), backward_fn, 'add')


def sub(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"sub needs equal shapes, got {a.shape} and {b.shape}")

    def backward_fn(g):
        return g, -g

    return _result(a.values - b.values, (a, b), backward_fn, 'sub')


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"mul needs equal shapes, got {a.shape} and {b.shape}")
    av, bv = a.values, b.values

    def backward_fn(g):
        return g * bv, g * av

    return _result(av * bv, (a, b), backward_fn, 'mul')


def scale(a: Tensor, factor: float) -> Tensor:
    def backward_fn(g):
        return (g * factor,)

    return _result(a.values * factor, (a,), backward_fn, 'scale')


def transpose(a: Tensor) -> Tensor:
    def backward_fn(g):
        return (g.T,)

    return _result(a.values.T.copy(), (a,), backward_fn, 'transpose')


def activation(a: Tensor, kind: str) -> Tensor:
    """Elementwise `relu` or `sigmoid`."""
    if kind == 'relu':
        mask = a.values > 0

        def backward_fn(g):
            return (g * mask,)

        return _result(np.where(mask, a.values, 0.0), (a,), backward_fn, 'relu')
    if kind == 'sigmoid':
        s = expit(a.values)

        def backward_fn(g):
            return (g * s * (1.0 - s),)

        return _result(s, (a,), backward_fn, 'sigmoid')
    raise ContractError(f"Unknown activation '{kind}' (expected relu or sigmoid)")


def l2_normalize_rows(a: Tensor) -> Tensor:
    """Scales every row to unit Euclidean norm."""
    norms = np.sqrt(np.sum(a.values * a.values, axis=1, keepdims=True))
    if np.any(norms <= NORM_EPS):
        bad = int(np.argmax(norms[:, 0] <= NORM_EPS))
        raise DegenerateRowError(f"Row {bad} has norm {norms[bad, 0]:.3e} <= {NORM_EPS}")
    y = a.values / norms

    def backward_fn(g):
        # Jacobian of x/|x| is (I - y y^T)/|x|
        return ((g - y * np.sum(g * y, axis=1, keepdims=True)) / norms,)

    return _result(y, (a,), backward_fn, 'l2_normalize_rows')


def sum_all(a: Tensor) -> Tensor:
    shape = a.shape

    def backward_fn(g):
        return (np.full(shape, g[0, 0]),)

    return _result(np.array([[a.values.sum()]]), (a,), backward_fn, 'sum')


def mean_all(a: Tensor) -> Tensor:
    shape, size = a.shape, a.values.size

    def backward_fn(g):
        return (np.full(shape, g[0, 0] / size),)

    return _result(np.array([[a.values.mean()]]), (a,), backward_fn, 'mean')


def masked_logsumexp_rows(a: Tensor, mask: np.ndarray) -> Tensor:
    """Per-row log-sum-exp over the entries where `mask` is True; returns rows x 1."""
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != a.shape:
        raise ShapeError(f"mask shape {mask.shape} differs from tensor shape {a.shape}")
    if not np.all(mask.any(axis=1)):
        raise ContractError("Every row needs at least one unmasked entry")
    masked = np.where(mask, a.values, -np.inf)
    out = logsumexp(masked, axis=1, keepdims=True)

    def backward_fn(g):
        weights = np.where(mask, np.exp(masked - out), 0.0)
        return (g * weights,)

    return _result(out, (a,), backward_fn, 'masked_logsumexp')


def gather(a: Tensor, rows: np.ndarray, cols: np.ndarray) -> Tensor:
    """Picks a[rows[k], cols[k]] for every k into a column vector."""
    rows = np.asarray(rows, dtype=np.intp)
    cols = np.asarray(cols, dtype=np.intp)
    if rows.shape != cols.shape or rows.ndim != 1:
        raise ShapeError("gather needs two 1-D index arrays of equal length")
    shape = a.shape

    def backward_fn(g):
        grad = np.zeros(shape)
        np.add.at(grad, (rows, cols), g[:, 0])
        return (grad,)

    return _result(a.values[rows, cols].reshape(-1, 1), (a,), backward_fn, 'gather')


def bce_with_logits(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Mean binary cross-entropy of sigmoid(logits) against 0/1 targets, computed stably."""
    y = np.asarray(targets, dtype=np.float64).reshape(logits.shape)
    x = logits.values
    n = x.size
    loss = np.mean(np.logaddexp(0.0, x) - y * x)

    def backward_fn(g):
        return (g[0, 0] * (expit(x) - y) / n,)

    return _result(np.array([[loss]]), (logits,), backward_fn, 'bce_with_logits')


# --- Layers ---

@dataclass
class Dense:
    """A fully connected layer x @ W + b."""
    weight: Tensor
    bias: Tensor

    @classmethod
    def init(cls, fan_in: int, fan_out: int, rng: np.random.Generator, bias: float = 0.0) -> 'Dense':
        return cls(glorot_uniform(fan_in, fan_out, rng), parameter(np.full((1, fan_out), bias)))

    def __call__(self, x: Tensor) -> Tensor:
        return add(matmul(x, self.weight), self.bias)

    def parameters(self) -> List[Tensor]:
        return [self.weight, self.bias]


# --- Reverse pass ---

def _topological_order(root: Tensor) -> List[Tensor]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if node.node_id in seen:
            continue
        seen.add(node.node_id)
        stack.append((node, True))
        for parent in node._parents:
            if parent.tracked and parent.node_id not in seen:
                stack.append((parent, False))
    return order


def backward(loss: Tensor, params: Optional[Sequence[Tensor]] = None) -> GradMap:
    """
    Gradients of a 1x1 loss w.r.t. every trainable tensor in its graph.

    When `params` is given, each of them gets an entry (zeros if the loss does
    not depend on it).
    """
    if loss.shape != (1, 1):
        raise ContractError(f"backward needs a 1x1 loss, got {loss.shape}")

    result: GradMap = {}
    if loss.tracked:
        order = _topological_order(loss)
        grads = {loss.node_id: np.ones((1, 1))}
        for node in reversed(order):
            g = grads.get(node.node_id)
            if g is None or node._backward is None:
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if not parent.tracked or pg is None:
                    continue
                prev = grads.get(parent.node_id)
                grads[parent.node_id] = pg if prev is None else prev + pg
        for node in order:
            if node.trainable:
                result[node.node_id] = grads.get(node.node_id, np.zeros(node.shape))

    for p in params or ():
        if p.node_id not in result:
            result[p.node_id] = np.zeros(p.shape)
    return result


# --- Optimizer ---

@dataclass
class AdamState:
    lr: float
    beta1: float = ADAM_BETA1
    beta2: float = ADAM_BETA2
    eps: float = ADAM_EPS
    step: int = 0
    m: Dict[int, np.ndarray] = field(default_factory=dict)
    v: Dict[int, np.ndarray] = field(default_factory=dict)


def adam_step(params: Sequence[Tensor], grads: GradMap, state: AdamState):
    """One bias-corrected Adam update; parameter values are replaced in place."""
    missing = [p for p in params if p.node_id not in grads]
    if missing:
        raise ContractError(f"No gradient for {len(missing)} parameter(s), e.g. {missing[0]!r}")
    for p in params:
        if grads[p.node_id].shape != p.shape:
            raise ShapeError(f"Gradient shape {grads[p.node_id].shape} != parameter shape {p.shape}")

    state.step += 1
    t = state.step
    for p in params:
        g = grads[p.node_id]
        m = state.beta1 * state.m.get(p.node_id, np.zeros(p.shape)) + (1.0 - state.beta1) * g
        v = state.beta2 * state.v.get(p.node_id, np.zeros(p.shape)) + (1.0 - state.beta2) * g * g
        state.m[p.node_id], state.v[p.node_id] = m, v
        m_hat = m / (1.0 - state.beta1 ** t)
        v_hat = v / (1.0 - state.beta2 ** t)
        p.values = p.values - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return params, state


# --- Gradient checking ---

def numeric_gradient(fn: Callable[[], Tensor], tensor: Tensor, step: float = 1e-4) -> np.ndarray:
    """Central finite differences of a scalar function w.r.t. every entry of `tensor`."""
    grad = np.zeros(tensor.shape)
    original = tensor.values
    try:
        for idx in np.ndindex(*tensor.shape):
            plus = original.copy()
            plus[idx] += step
            tensor.values = plus
            f_plus = fn().item()
            minus = original.copy()
            minus[idx] -= step
            tensor.values = minus
            f_minus = fn().item()
            grad[idx] = (f_plus - f_minus) / (2.0 * step)
    finally:
        tensor.values = original
    return grad
