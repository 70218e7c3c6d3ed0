"""Dense float64 matrices with a reverse-mode gradient tape.

Every network in the toolkit is built from the primitives in this module. A forward
pass runs inside ``with Tape() as tape:``; operations whose inputs depend on a
``Parameter`` are recorded in order, and ``tape.backward(loss)`` replays them in
reverse to produce one gradient buffer per reachable parameter. Outside a tape the
same functions simply compute values.
"""

import logging
import math
import threading
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import ContractError, DomainError, NonFiniteError, ShapeError

logger = logging.getLogger(__name__)

_local = threading.local()


def _tape_stack() -> List["Tape"]:
    if not hasattr(_local, "stack"):
        _local.stack = []
    return _local.stack


def active_tape() -> Optional["Tape"]:
    """Return the innermost tape of the current thread, if any."""
    stack = _tape_stack()
    return stack[-1] if stack else None


def _as_2d(data) -> np.ndarray:
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim == 0:
        return arr.reshape(1, 1)
    if arr.ndim == 1:
        return arr.reshape(1, -1)
    if arr.ndim != 2:
        raise ShapeError(f"Matrix data must be at most 2-D, got shape {arr.shape}")
    return arr


class Matrix:
    """A 2-D array of float64 values; immutable once produced."""

    __slots__ = ("data", "requires_grad", "tape", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, tape: Optional["Tape"] = None):
        arr = np.array(_as_2d(data), dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise NonFiniteError(f"Non-finite entries in matrix of shape {arr.shape}")
        arr.setflags(write=False)
        self.data = arr
        self.requires_grad = requires_grad
        self.tape = tape

    @property
    def shape(self) -> Tuple[int, int]:
        return self.data.shape

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    @property
    def T(self) -> "Matrix":
        return transpose(self)

    def item(self) -> float:
        if self.shape != (1, 1):
            raise ContractError(f"item() needs a 1x1 matrix, got {self.shape}")
        return float(self.data[0, 0])

    def numpy(self) -> np.ndarray:
        """Return a writable copy of the values."""
        return np.array(self.data)

    def __matmul__(self, other) -> "Matrix":
        return matmul(self, other)

    def __add__(self, other) -> "Matrix":
        return add(self, other)

    def __sub__(self, other) -> "Matrix":
        return sub(self, other)

    def __mul__(self, other) -> "Matrix":
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self) -> "Matrix":
        return scale(self, -1.0)

    def __repr__(self) -> str:
        return f"{type(self).__name__}(shape={self.shape})"


class Parameter(Matrix):
    """A trainable matrix. Its values are updated in place by the optimizers."""

    __slots__ = ("name",)

    def __init__(self, name: str, data):
        super().__init__(data, requires_grad=True)
        self.data = np.array(self.data)  # writable
        self.name = name

    @classmethod
    def uniform(cls, name: str, rows: int, cols: int, rng: np.random.Generator,
                fan_in: Optional[int] = None) -> "Parameter":
        """Initialize uniformly in [-1/sqrt(fan_in), +1/sqrt(fan_in)]."""
        bound = 1.0 / math.sqrt(fan_in or rows)
        return cls(name, rng.uniform(-bound, bound, size=(rows, cols)))

    @classmethod
    def zeros(cls, name: str, rows: int, cols: int) -> "Parameter":
        return cls(name, np.zeros((rows, cols)))

    def assign(self, values: np.ndarray) -> None:
        values = _as_2d(values)
        if values.shape != self.shape:
            raise ShapeError(f"Cannot assign shape {values.shape} to parameter {self.name} {self.shape}")
        self.data[...] = values

    def __hash__(self) -> int:
        return id(self)

    def __eq__(self, other) -> bool:
        return self is other

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape})"


@dataclass
class _Record:
    output: Matrix
    inputs: Tuple[Matrix, ...]
    vjp: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class Gradients:
    """Gradient buffers keyed by parameter identity; unused parameters read as zero."""

    def __init__(self, buffers: Optional[Dict[Parameter, np.ndarray]] = None):
        self._buffers: Dict[Parameter, np.ndarray] = dict(buffers or {})

    def __getitem__(self, param: Parameter) -> np.ndarray:
        grad = self._buffers.get(param)
        return np.zeros(param.shape) if grad is None else grad

    def __contains__(self, param: Parameter) -> bool:
        return param in self._buffers

    def __iter__(self) -> Iterator[Parameter]:
        return iter(self._buffers)

    def __len__(self) -> int:
        return len(self._buffers)

    def items(self):
        return self._buffers.items()


class Tape:
    """Ordered record of primitive operations for reverse-mode differentiation."""

    def __init__(self):
        self._records: List[_Record] = []

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        stack = _tape_stack()
        if stack and stack[-1] is self:
            stack.pop()

    def __len__(self) -> int:
        return len(self._records)

    def record(self, output: Matrix, inputs: Tuple[Matrix, ...], vjp) -> Matrix:
        output.requires_grad = True
        output.tape = self
        self._records.append(_Record(output, inputs, vjp))
        return output

    def backward(self, loss: Matrix) -> Gradients:
        """Propagate d(loss)/d(parameter) through the recorded operations."""
        if loss.shape != (1, 1):
            raise ContractError(f"backward() needs a scalar (1x1) loss, got shape {loss.shape}")
        if isinstance(loss, Parameter):
            return Gradients({loss: np.ones((1, 1))})
        if loss.tape is None:
            raise ContractError("loss was not recorded on any tape; build it inside a Tape context")
        if loss.tape is not self:
            raise ContractError("loss was not produced on this tape")

        pending: Dict[int, np.ndarray] = {id(loss): np.ones((1, 1))}
        param_grads: Dict[Parameter, np.ndarray] = {}
        for rec in reversed(self._records):
            grad = pending.pop(id(rec.output), None)
            if grad is None:
                continue
            for inp, inp_grad in zip(rec.inputs, rec.vjp(grad)):
                if inp_grad is None or not inp.requires_grad:
                    continue
                if isinstance(inp, Parameter):
                    if inp in param_grads:
                        param_grads[inp] = param_grads[inp] + inp_grad
                    else:
                        param_grads[inp] = np.array(inp_grad, dtype=np.float64)
                else:
                    key = id(inp)
                    pending[key] = pending[key] + inp_grad if key in pending else inp_grad
        return Gradients(param_grads)


def backward(loss: Matrix, tape: Tape) -> Gradients:
    """Module-level alias for ``tape.backward(loss)``."""
    return tape.backward(loss)


# ---------------------------------------------------------------------------
# Primitive construction helpers
# ---------------------------------------------------------------------------

def constant(data) -> Matrix:
    """Wrap values as a matrix that carries no gradient."""
    if isinstance(data, Matrix):
        return data
    return Matrix(data)


def detach(m: Matrix) -> Matrix:
    """Same values, cut from the tape."""
    return Matrix(m.data)


def _wrap(value) -> Matrix:
    return value if isinstance(value, Matrix) else Matrix(value)


def _emit(data: np.ndarray, inputs: Tuple[Matrix, ...], vjp) -> Matrix:
    out = Matrix(data)
    tape = active_tape()
    if tape is not None and any(inp.requires_grad for inp in inputs):
        tape.record(out, inputs, vjp)
    return out


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, int]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    if shape[0] == 1 and grad.shape[0] != 1:
        grad = grad.sum(axis=0, keepdims=True)
    if shape[1] == 1 and grad.shape[1] != 1:
        grad = grad.sum(axis=1, keepdims=True)
    return grad


def _check_broadcast(a: Matrix, b: Matrix, op: str) -> None:
    for da, db in zip(a.shape, b.shape):
        if da != db and da != 1 and db != 1:
            raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


# ---------------------------------------------------------------------------
# Arithmetic
# ---------------------------------------------------------------------------

def matmul(a, b) -> Matrix:
    """Standard matrix product."""
    a, b = _wrap(a), _wrap(b)
    if a.cols != b.rows:
        raise ShapeError(f"matmul: shape mismatch {a.shape} x {b.shape}")
    a_data, b_data = a.data, b.data

    def vjp(g):
        return g @ b_data.T, a_data.T @ g

    return _emit(a_data @ b_data, (a, b), vjp)


def add(a, b) -> Matrix:
    """Elementwise sum; a 1xk row or 1x1 scalar operand is broadcast."""
    a, b = _wrap(a), _wrap(b)
    _check_broadcast(a, b, "add")
    sa, sb = a.shape, b.shape

    def vjp(g):
        return _unbroadcast(g, sa), _unbroadcast(g, sb)

    return _emit(a.data + b.data, (a, b), vjp)


def sub(a, b) -> Matrix:
    a, b = _wrap(a), _wrap(b)
    _check_broadcast(a, b, "sub")
    sa, sb = a.shape, b.shape

    def vjp(g):
        return _unbroadcast(g, sa), -_unbroadcast(g, sb)

    return _emit(a.data - b.data, (a, b), vjp)


def mul(a, b) -> Matrix:
    """Elementwise product with the same broadcasting as add()."""
    a, b = _wrap(a), _wrap(b)
    _check_broadcast(a, b, "mul")
    a_data, b_data = a.data, b.data

    def vjp(g):
        return _unbroadcast(g * b_data, a.shape), _unbroadcast(g * a_data, b.shape)

    return _emit(a_data * b_data, (a, b), vjp)


def scale(m, factor: float) -> Matrix:
    m = _wrap(m)
    factor = float(factor)
    return _emit(m.data * factor, (m,), lambda g: (g * factor,))


def transpose(m) -> Matrix:
    m = _wrap(m)
    return _emit(m.data.T, (m,), lambda g: (g.T,))


def take_rows(m, indices: Sequence[int]) -> Matrix:
    """Select rows by index (repeats allowed)."""
    m = _wrap(m)
    idx = np.asarray(list(indices), dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= m.rows):
        raise ShapeError(f"take_rows: index out of range for {m.rows} rows")
    shape = m.shape

    def vjp(g):
        out = np.zeros(shape)
        np.add.at(out, idx, g)
        return (out,)

    return _emit(m.data[idx], (m,), vjp)


def take_row(m, index: int) -> Matrix:
    return take_rows(m, [index])


def vstack(blocks: Sequence) -> Matrix:
    """Stack matrices with equal column counts on top of each other."""
    blocks = [_wrap(b) for b in blocks]
    if not blocks:
        raise ShapeError("vstack: nothing to stack")
    cols = {b.cols for b in blocks}
    if len(cols) != 1:
        raise ShapeError(f"vstack: column counts differ {sorted(cols)}")
    bounds = np.cumsum([0] + [b.rows for b in blocks])

    def vjp(g):
        return tuple(g[bounds[i]:bounds[i + 1]] for i in range(len(blocks)))

    return _emit(np.vstack([b.data for b in blocks]), tuple(blocks), vjp)


def hstack(blocks: Sequence) -> Matrix:
    """Concatenate matrices with equal row counts side by side."""
    blocks = [_wrap(b) for b in blocks]
    if not blocks:
        raise ShapeError("hstack: nothing to concatenate")
    rows = {b.rows for b in blocks}
    if len(rows) != 1:
        raise ShapeError(f"hstack: row counts differ {sorted(rows)}")
    bounds = np.cumsum([0] + [b.cols for b in blocks])

    def vjp(g):
        return tuple(g[:, bounds[i]:bounds[i + 1]] for i in range(len(blocks)))

    return _emit(np.hstack([b.data for b in blocks]), tuple(blocks), vjp)


def sum_all(m) -> Matrix:
    m = _wrap(m)
    shape = m.shape
    return _emit(np.array([[m.data.sum()]]), (m,), lambda g: (np.full(shape, g[0, 0]),))


def mean_all(m) -> Matrix:
    m = _wrap(m)
    shape, size = m.shape, m.data.size
    return _emit(np.array([[m.data.mean()]]), (m,), lambda g: (np.full(shape, g[0, 0] / size),))


def sum_rows(m) -> Matrix:
    """Column sums as a 1xk row (sum over nodes)."""
    m = _wrap(m)
    rows = m.rows
    return _emit(m.data.sum(axis=0, keepdims=True), (m,), lambda g: (np.repeat(g, rows, axis=0),))


# ---------------------------------------------------------------------------
# Activations and normalizations
# ---------------------------------------------------------------------------

def relu(m) -> Matrix:
    m = _wrap(m)
    mask = m.data > 0
    return _emit(np.where(mask, m.data, 0.0), (m,), lambda g: (g * mask,))


def tanh_act(m) -> Matrix:
    m = _wrap(m)
    y = np.tanh(m.data)
    return _emit(y, (m,), lambda g: (g * (1.0 - y * y),))


def rowwise_softmax(m) -> Matrix:
    """Softmax of each row, computed after subtracting the row maximum."""
    m = _wrap(m)
    if m.data.size == 0:
        raise ShapeError("rowwise_softmax: empty matrix")
    shifted = m.data - m.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=1, keepdims=True)

    def vjp(g):
        return (y * (g - (g * y).sum(axis=1, keepdims=True)),)

    return _emit(y, (m,), vjp)


def row_normalize(m, eps: float = 1e-12) -> Matrix:
    """Divide each row by its sum; rows summing below eps become uniform."""
    m = _wrap(m)
    sums = m.data.sum(axis=1, keepdims=True)
    degenerate = (sums < eps).ravel()
    safe = np.where(sums < eps, 1.0, sums)
    y = m.data / safe
    y[degenerate] = 1.0 / m.cols

    def vjp(g):
        grad = (g - (g * y).sum(axis=1, keepdims=True)) / safe
        grad[degenerate] = 0.0
        return (grad,)

    return _emit(y, (m,), vjp)


def frobenius_norm(m) -> Matrix:
    m = _wrap(m)
    norm = float(np.sqrt((m.data * m.data).sum()))
    data = m.data

    def vjp(g):
        if norm == 0.0:
            return (np.zeros_like(data),)
        return (g[0, 0] * data / norm,)

    return _emit(np.array([[norm]]), (m,), vjp)


def log_sum_exp(m) -> Matrix:
    """log(sum(exp(x))) over every entry, stabilized by the maximum."""
    m = _wrap(m)
    top = m.data.max()
    e = np.exp(m.data - top)
    total = e.sum()
    out = top + math.log(total)
    weights = e / total
    return _emit(np.array([[out]]), (m,), lambda g: (g[0, 0] * weights,))


def log_mean_exp(m) -> Matrix:
    """log(mean(exp(x))) over every entry; exact for constant inputs."""
    m = _wrap(m)
    top = m.data.max()
    e = np.exp(m.data - top)
    out = top + math.log(e.mean())
    weights = e / e.sum()
    return _emit(np.array([[out]]), (m,), lambda g: (g[0, 0] * weights,))


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------

def cross_entropy(logits, label: int) -> Matrix:
    """Negative log-likelihood of ``label`` under softmax(logits) for one 1xC row."""
    logits = _wrap(logits)
    if logits.rows != 1:
        raise ShapeError(f"cross_entropy expects one row of logits, got shape {logits.shape}")
    label = int(label)
    if not 0 <= label < logits.cols:
        raise DomainError(f"label {label} out of range for {logits.cols} classes")
    row = logits.data[0]
    top = row.max()
    e = np.exp(row - top)
    lse = top + math.log(e.sum())
    loss = max(lse - row[label], 0.0)
    probs = e / e.sum()

    def vjp(g):
        grad = probs.copy()
        grad[label] -= 1.0
        return (g[0, 0] * grad.reshape(1, -1),)

    return _emit(np.array([[loss]]), (logits,), vjp)


def mean_squared_error(pred, target) -> Matrix:
    pred = _wrap(pred)
    target_data = _as_2d(target.data if isinstance(target, Matrix) else target)
    if target_data.shape != pred.shape:
        target_data = np.broadcast_to(target_data, pred.shape)
    diff = pred.data - target_data
    size = diff.size
    return _emit(np.array([[float((diff * diff).mean())]]), (pred,),
                 lambda g: (g[0, 0] * 2.0 * diff / size,))


# ---------------------------------------------------------------------------
# Gradient checking
# ---------------------------------------------------------------------------

@dataclass
class GradCheckReport:
    """Outcome of comparing backward() against central differences."""
    max_rel_error: float
    tolerance: float
    max_abs_error: float = 0.0
    worst_parameter: Optional[str] = None
    worst_index: Optional[Tuple[int, int]] = None
    per_parameter: Dict[str, float] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tolerance


def grad_check(
    f: Callable[[], Matrix],
    params: Iterable[Parameter],
    h: float = 1e-5,
    tol: float = 1e-4,
    floor: float = 1e-6,
    gradient_fn: Optional[Callable[[], Gradients]] = None,
) -> GradCheckReport:
    """Compare analytic gradients of the scalar f() to central differences.

    Args:
        f: Zero-argument function building the scalar loss from ``params``
        params: Parameters to perturb
        h: Finite-difference step
        tol: Maximum accepted relative error
        floor: Lower bound on the relative-error denominator
        gradient_fn: Optional override producing the analytic gradients

    Returns:
        GradCheckReport with the worst relative error over all coordinates
    """
    if h <= 0:
        raise ContractError(f"finite-difference step must be positive, got {h}")
    params = list(params)

    if gradient_fn is None:
        with Tape() as tape:
            loss = f()
        analytic = tape.backward(loss)
    else:
        analytic = gradient_fn()

    report = GradCheckReport(max_rel_error=0.0, tolerance=tol)
    for param in params:
        grad = analytic[param]
        worst = 0.0
        for index in np.ndindex(param.shape):
            original = param.data[index]
            param.data[index] = original + h
            f_plus = f().item()
            param.data[index] = original - h
            f_minus = f().item()
            param.data[index] = original
            numeric = (f_plus - f_minus) / (2.0 * h)
            denom = max(abs(grad[index]), abs(numeric), floor)
            error = abs(grad[index] - numeric)
            report.max_abs_error = max(report.max_abs_error, float(error))
            rel = error / denom
            worst = max(worst, rel)
            if rel > report.max_rel_error:
                report.max_rel_error = rel
                report.worst_parameter = param.name
                report.worst_index = tuple(int(i) for i in index)
        report.per_parameter[param.name] = worst
    logger.debug(f"Gradient check: max relative error {report.max_rel_error:.3e}")
    return report


# ---------------------------------------------------------------------------
# Optimizers
# ---------------------------------------------------------------------------

def sgd_update(params: Iterable[Parameter], grads: Gradients, lr: float, ascent: bool = False) -> None:
    """In-place gradient step: descent by default, ascent when ``ascent`` is set."""
    sign = 1.0 if ascent else -1.0
    for param in params:
        grad = grads[param]
        if grad.shape != param.shape:
            raise ShapeError(f"Gradient shape {grad.shape} does not match {param.name} {param.shape}")
        param.data += sign * lr * grad


@dataclass
class AdamState:
    """First and second moment estimates per parameter."""
    m: Dict[Parameter, np.ndarray] = field(default_factory=dict)
    v: Dict[Parameter, np.ndarray] = field(default_factory=dict)


def adam_update(
    params: Iterable[Parameter],
    grads: Gradients,
    lr: float,
    beta1: float,
    beta2: float,
    eps: float,
    step: int,
    state: AdamState,
    ascent: bool = False,
) -> None:
    """In-place bias-corrected Adam step number ``step`` (1-based)."""
    sign = 1.0 if ascent else -1.0
    for param in params:
        grad = grads[param]
        if grad.shape != param.shape:
            raise ShapeError(f"Gradient shape {grad.shape} does not match {param.name} {param.shape}")
        m = state.m.get(param, np.zeros(param.shape))
        v = state.v.get(param, np.zeros(param.shape))
        m = beta1 * m + (1.0 - beta1) * grad
        v = beta2 * v + (1.0 - beta2) * grad * grad
        state.m[param], state.v[param] = m, v
        m_hat = m / (1.0 - beta1 ** step)
        v_hat = v / (1.0 - beta2 ** step)
        param.data += sign * lr * m_hat / (np.sqrt(v_hat) + eps)


class Adam:
    """Adam optimizer over a fixed, ordered parameter list."""

    def __init__(self, params: Iterable[Parameter], lr: float = 0.01,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.state = AdamState()

    def step(self, grads: Gradients) -> None:
        self.step_count += 1
        adam_update(self.params, grads, self.lr, self.beta1, self.beta2, self.eps,
                    self.step_count, self.state)


class SGD:
    """Plain gradient descent with the same interface as Adam."""

    def __init__(self, params: Iterable[Parameter], lr: float = 0.01):
        self.params = list(params)
        self.lr = lr

    def step(self, grads: Gradients) -> None:
        sgd_update(self.params, grads, self.lr)
