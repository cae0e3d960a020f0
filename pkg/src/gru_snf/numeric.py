"""Dense float64 matrix arithmetic with a reverse-mode gradient tape.

Every operation accepts plain numpy arrays or tape `Variable`s. With arrays only it
computes eagerly and records nothing, so the same model code serves inference
(arrays) and training (variables watched by a `GradTape`).

Matrices are 2-D, row-major float64. Batches are stacked as rows: a batch of B
vectors of width d is a (B, d) matrix.
"""
import logging
from dataclasses import dataclass
from typing import (
    Callable,
    Dict,
    List,
    Mapping,
    Optional,
    Sequence,
    Tuple,
    Union,
)

import numpy as np
import numpy.typing as npt
from scipy.special import expit

from .errors import ContractError, NumericError, ShapeError

DenseMatrix = npt.NDArray[np.float64]
Scalar = Union[float, int]

logger = logging.getLogger(__name__)


def as_dense(values, rows: Optional[int] = None, cols: Optional[int] = None):
    """Validated, read-only float64 matrix; vectors become single rows."""
    matrix = np.array(values, dtype=np.float64)
    if matrix.ndim == 0:
        matrix = matrix.reshape(1, 1)
    elif matrix.ndim == 1:
        matrix = matrix.reshape(1, -1)
    elif matrix.ndim != 2:
        raise ShapeError(f"Expected at most 2 dimensions, got shape {matrix.shape}")
    if rows is not None and matrix.shape[0] != rows:
        raise ShapeError(f"Expected {rows} rows, got {matrix.shape[0]}")
    if cols is not None and matrix.shape[1] != cols:
        raise ShapeError(f"Expected {cols} columns, got {matrix.shape[1]}")
    if not np.all(np.isfinite(matrix)):
        raise NumericError("Matrix has non-finite entries")
    matrix.setflags(write=False)
    return matrix


class Variable:
    """A matrix value recorded on a `GradTape`."""

    __slots__ = ("value", "tape", "index", "name")
    # make numpy defer to the reflected operators below
    __array_ufunc__ = None

    def __init__(
        self, value: DenseMatrix, tape: "GradTape", index: int, name: Optional[str]
    ) -> None:
        self.value = value
        self.tape = tape
        self.index = index
        self.name = name

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.value.shape

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __neg__(self):
        return neg(self)

    def __repr__(self) -> str:
        label = self.name or f"#{self.index}"
        return f"Variable({label}, shape={self.shape})"


Tensor = Union[DenseMatrix, Variable]
VJP = Callable[[DenseMatrix], Sequence[Optional[DenseMatrix]]]


@dataclass(frozen=True)
class _Record:
    output: int
    inputs: Tuple[Optional[int], ...]
    vjp: VJP


class GradTape:
    """Ordered record of primitive operations for one forward/backward pass.

    A tape is single-writer: build it, call `backward` once or more, then discard it.
    """

    def __init__(self) -> None:
        self._records: List[_Record] = []
        self._shapes: List[Tuple[int, ...]] = []
        self._parameters: Dict[str, Variable] = {}

    def __len__(self) -> int:
        return len(self._records)

    def watch(self, name: str, value) -> Variable:
        if name in self._parameters:
            raise ContractError(f"Parameter already watched: {name}")
        variable = self._new_variable(np.asarray(value, dtype=np.float64), name)
        self._parameters[name] = variable
        return variable

    def watch_all(self, parameters: Mapping[str, DenseMatrix]) -> Dict[str, Variable]:
        return {name: self.watch(name, value) for name, value in parameters.items()}

    def record(
        self, value: DenseMatrix, inputs: Sequence[object], vjp: VJP
    ) -> Variable:
        output = self._new_variable(value, None)
        input_indices = tuple(
            item.index if isinstance(item, Variable) else None for item in inputs
        )
        self._records.append(_Record(output.index, input_indices, vjp))
        return output

    def backward(self, output: Variable, seed: Scalar = 1.0) -> Dict[str, DenseMatrix]:
        """Gradients of a scalar output w.r.t. every watched parameter."""
        if not isinstance(output, Variable) or output.tape is not self:
            raise ContractError("Output was not recorded on this tape")
        if output.value.size != 1:
            raise ContractError(
                f"Backward needs a scalar output, got shape {output.value.shape}"
            )
        grads: List[Optional[DenseMatrix]] = [None] * len(self._shapes)
        grads[output.index] = np.full(output.value.shape, float(seed))
        for record in reversed(self._records):
            grad = grads[record.output]
            if grad is None:
                continue
            input_grads = record.vjp(grad)
            for index, input_grad in zip(record.inputs, input_grads):
                if index is None or input_grad is None:
                    continue
                input_grad = _unbroadcast(input_grad, self._shapes[index])
                if grads[index] is None:
                    grads[index] = np.array(input_grad, dtype=np.float64)
                else:
                    grads[index] = grads[index] + input_grad
        return {
            name: (
                grads[variable.index]
                if grads[variable.index] is not None
                else np.zeros(variable.shape)
            )
            for name, variable in self._parameters.items()
        }

    @property
    def parameters(self) -> Dict[str, Variable]:
        return dict(self._parameters)

    def _new_variable(self, value: DenseMatrix, name: Optional[str]) -> Variable:
        self._shapes.append(value.shape)
        return Variable(value, self, len(self._shapes) - 1, name)


def backward(tape: GradTape, output: Variable, seed: Scalar = 1.0):
    return tape.backward(output, seed=seed)


def value_of(x) -> np.ndarray:
    return x.value if isinstance(x, Variable) else np.asarray(x, dtype=np.float64)


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


def _apply(
    forward: Callable[..., np.ndarray],
    make_vjp: Callable[..., VJP],
    *args,
) -> Tensor:
    values = [value_of(arg) for arg in args]
    result = forward(*values)
    tape = next((arg.tape for arg in args if isinstance(arg, Variable)), None)
    if tape is None:
        return result
    if any(isinstance(arg, Variable) and arg.tape is not tape for arg in args):
        raise ContractError("Cannot combine variables from different tapes")
    return tape.record(result, args, make_vjp(result, *values))


def _broadcast_check(a: np.ndarray, b: np.ndarray) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError as e:
        raise ShapeError(f"Incompatible shapes {a.shape} and {b.shape}") from e


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a_value, b_value = value_of(a), value_of(b)
    if a_value.ndim != 2 or b_value.ndim != 2:
        raise ShapeError(
            f"matmul needs matrices, got shapes {a_value.shape} and {b_value.shape}"
        )
    if a_value.shape[1] != b_value.shape[0]:
        raise ShapeError(
            f"matmul dimension mismatch: {a_value.shape} x {b_value.shape}"
        )
    return _apply(
        np.matmul, lambda out, x, y: lambda g: (g @ y.T, x.T @ g), a, b
    )


def add(a, b) -> Tensor:
    _broadcast_check(value_of(a), value_of(b))
    return _apply(np.add, lambda out, x, y: lambda g: (g, g), a, b)


def sub(a, b) -> Tensor:
    _broadcast_check(value_of(a), value_of(b))
    return _apply(np.subtract, lambda out, x, y: lambda g: (g, -g), a, b)


def mul(a, b) -> Tensor:
    _broadcast_check(value_of(a), value_of(b))
    return _apply(np.multiply, lambda out, x, y: lambda g: (g * y, g * x), a, b)


def neg(a: Tensor) -> Tensor:
    return _apply(np.negative, lambda out, x: lambda g: (-g,), a)


def tanh(a: Tensor) -> Tensor:
    return _apply(np.tanh, lambda out, x: lambda g: (g * (1.0 - out * out),), a)


def sigmoid(a: Tensor) -> Tensor:
    return _apply(expit, lambda out, x: lambda g: (g * out * (1.0 - out),), a)


def exp(a: Tensor) -> Tensor:
    return _apply(np.exp, lambda out, x: lambda g: (g * out,), a)


def square(a: Tensor) -> Tensor:
    return _apply(np.square, lambda out, x: lambda g: (2.0 * x * g,), a)


def absolute(a: Tensor) -> Tensor:
    return _apply(np.abs, lambda out, x: lambda g: (g * np.sign(x),), a)


def sum(a: Tensor, axis: Optional[int] = None) -> Tensor:  # noqa: A001
    """Sum keeping two dimensions: all entries (1, 1), rows (B, 1), columns (1, k)."""

    def forward(x: np.ndarray) -> np.ndarray:
        if axis is None:
            return np.sum(x).reshape(1, 1)
        return np.sum(x, axis=axis, keepdims=True)

    return _apply(
        forward, lambda out, x: lambda g: (np.broadcast_to(g, x.shape).copy(),), a
    )


def mean(a: Tensor) -> Tensor:
    return mul(sum(a), 1.0 / value_of(a).size)


def concat(parts: Sequence[Tensor]) -> Tensor:
    """Concatenate matrices with equal row counts along columns."""
    values = [value_of(part) for part in parts]
    rows = {value.shape[0] for value in values}
    if len(rows) != 1:
        raise ShapeError(f"concat needs equal row counts, got {sorted(rows)}")
    offsets = np.cumsum([0] + [value.shape[1] for value in values])

    def make_vjp(out, *xs):
        return lambda g: tuple(
            g[:, offsets[i] : offsets[i + 1]] for i in range(len(xs))
        )

    return _apply(lambda *xs: np.concatenate(xs, axis=1), make_vjp, *parts)


def take_cols(a: Tensor, columns: Sequence[int]) -> Tensor:
    index = np.asarray(columns, dtype=np.intp)

    def make_vjp(out, x):
        def vjp(g):
            grad = np.zeros_like(x)
            grad[:, index] = g
            return (grad,)

        return vjp

    return _apply(lambda x: x[:, index], make_vjp, a)


def embed_cols(a: Tensor, columns: Sequence[int], width: int) -> Tensor:
    """Place the columns of `a` at `columns` of a zero matrix `width` wide."""
    index = np.asarray(columns, dtype=np.intp)
    if value_of(a).shape[1] != len(index):
        raise ShapeError(
            f"embed_cols got {value_of(a).shape[1]} columns for {len(index)} slots"
        )

    def forward(x):
        out = np.zeros((x.shape[0], width))
        out[:, index] = x
        return out

    return _apply(forward, lambda out, x: lambda g: (g[:, index],), a)


def check_finite(x: Tensor, what: str) -> Tensor:
    value = value_of(x)
    if not np.all(np.isfinite(value)):
        bad = tuple(int(i) for i in np.argwhere(~np.isfinite(value))[0])
        raise NumericError(f"Non-finite {what}", index=bad)
    return x


@dataclass(frozen=True)
class ParameterCheck:
    name: str
    index: Tuple[int, ...]
    analytic: float
    numeric: float
    relative_error: float
    absolute_error: float
    non_smooth: bool


@dataclass(frozen=True)
class GradCheckReport:
    checks: Tuple[ParameterCheck, ...]
    tol: float
    atol: float

    def _passes(self, check: ParameterCheck) -> bool:
        if check.non_smooth:
            return False
        return check.relative_error < self.tol or check.absolute_error < self.atol

    @property
    def passed(self) -> bool:
        return all(self._passes(check) for check in self.checks)

    @property
    def failures(self) -> List[ParameterCheck]:
        return [check for check in self.checks if not self._passes(check)]

    @property
    def max_relative_error(self) -> float:
        return max((check.relative_error for check in self.checks), default=0.0)


_KINK_THRESHOLD = 1e-2


def grad_check(
    fn: Callable[[Mapping[str, Tensor]], Tensor],
    parameters: Mapping[str, np.ndarray],
    tol: float = 1e-4,
    step: float = 1e-5,
    atol: float = 0.0,
) -> GradCheckReport:
    """Compare reverse-mode gradients of a scalar `fn` with central differences.

    Relative error uses the denominator max(|analytic|, |numeric|, 1e-8). An entry
    whose one-sided differences disagree by more than 1e-2 relative is flagged as a
    non-smooth point and fails regardless of the central-difference agreement.
    """
    base = {
        name: np.array(value, dtype=np.float64) for name, value in parameters.items()
    }
    tape = GradTape()
    output = fn(tape.watch_all(base))
    if not isinstance(output, Variable):
        analytic_grads = {name: np.zeros_like(value) for name, value in base.items()}
    else:
        analytic_grads = tape.backward(output)
    f0 = _evaluate(fn, base, None)
    checks = []
    for name, value in base.items():
        for index in np.ndindex(value.shape):
            original = value[index]
            value[index] = original + step
            f_plus = _evaluate(fn, base, (name, index))
            value[index] = original - step
            f_minus = _evaluate(fn, base, (name, index))
            value[index] = original
            numeric = (f_plus - f_minus) / (2.0 * step)
            analytic = float(analytic_grads[name][index])
            forward_slope = (f_plus - f0) / step
            backward_slope = (f0 - f_minus) / step
            kink_scale = max(abs(forward_slope), abs(backward_slope), 1.0)
            absolute_error = abs(analytic - numeric)
            checks.append(
                ParameterCheck(
                    name=name,
                    index=tuple(int(i) for i in index),
                    analytic=analytic,
                    numeric=numeric,
                    relative_error=absolute_error
                    / max(abs(analytic), abs(numeric), 1e-8),
                    absolute_error=absolute_error,
                    non_smooth=abs(forward_slope - backward_slope)
                    > _KINK_THRESHOLD * kink_scale,
                )
            )
    report = GradCheckReport(checks=tuple(checks), tol=tol, atol=atol)
    logger.debug(
        f"checked={len(checks)}, max_relative_error={report.max_relative_error:.3e}, "
        f"passed={report.passed}"
    )
    return report


def _evaluate(fn, parameters: Mapping[str, np.ndarray], index) -> float:
    result = np.asarray(value_of(fn(parameters)), dtype=np.float64)
    if result.size != 1:
        raise ContractError(f"Function must be scalar-valued, got shape {result.shape}")
    scalar = float(result.reshape(()))
    if not np.isfinite(scalar):
        raise NumericError("Non-finite function value", index=index)
    return scalar
