"""One-hidden-layer tanh MLP regression: parameter layout, evaluation, MSE and gradient.

The parameter vector is flat, laid out as::

    [beta, a_1..a_k, b_1..b_k, w_11..w_1d, ..., w_k1..w_kd]

and the regression function is ``beta + sum_i a_i * tanh(w_i . x + b_i)``.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

DEFAULT_BOX_BOUND = 100.0


class DimensionError(ValueError):
    """Raised when a parameter vector, input row or dataset disagree in shape."""


@dataclass(frozen=True)
class Architecture:
    d: int
    k: int

    def __post_init__(self):
        if int(self.d) != self.d or self.d < 1:
            raise ValueError(f"input dimension d must be a positive integer, got {self.d!r}")
        if int(self.k) != self.k or self.k < 1:
            raise ValueError(f"hidden unit count k must be a positive integer, got {self.k!r}")

    @property
    def dim(self) -> int:
        return param_dim(self)


def param_dim(arch: Architecture) -> int:
    """Number of free parameters, ``k * (d + 2) + 1``."""
    return arch.k * (arch.d + 2) + 1


@dataclass(frozen=True)
class ParamVector:
    """Flat parameter array bound to the architecture that gives it meaning."""

    arch: Architecture
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        values = np.array(self.values, dtype=float).reshape(-1)
        if values.shape[0] != param_dim(self.arch):
            raise DimensionError(
                f"expected {param_dim(self.arch)} parameters for {self.arch}, got {values.shape[0]}"
            )
        if not np.all(np.isfinite(values)):
            raise ValueError("parameter vector has non-finite entries")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @classmethod
    def from_parts(cls, beta, a, b, w) -> "ParamVector":
        a = np.atleast_1d(np.asarray(a, dtype=float))
        w = np.atleast_2d(np.asarray(w, dtype=float))
        arch = Architecture(d=w.shape[1], k=a.shape[0])
        values = np.concatenate([[float(beta)], a, np.asarray(b, dtype=float).reshape(-1), w.reshape(-1)])
        return cls(arch, values)

    @property
    def beta(self) -> float:
        return float(self.values[0])

    @property
    def a(self) -> np.ndarray:
        k = self.arch.k
        return self.values[1 : 1 + k]

    @property
    def b(self) -> np.ndarray:
        k = self.arch.k
        return self.values[1 + k : 1 + 2 * k]

    @property
    def w(self) -> np.ndarray:
        """Input weights as a ``(k, d)`` matrix, one row per hidden unit."""
        k, d = self.arch.k, self.arch.d
        return self.values[1 + 2 * k :].reshape(k, d)

    def in_box(self, bound: float = DEFAULT_BOX_BOUND) -> bool:
        return bool(np.all(np.abs(self.values) <= bound))

    def permuted(self, order) -> "ParamVector":
        """Same function with the hidden units reordered."""
        order = np.asarray(order)
        return ParamVector.from_parts(self.beta, self.a[order], self.b[order], self.w[order])

    def to_csv_row(self) -> str:
        return ",".join(format(v, ".17g") for v in self.values)

    @classmethod
    def from_csv_row(cls, arch: Architecture, row: str) -> "ParamVector":
        return cls(arch, [float(tok) for tok in row.strip().split(",")])


@dataclass(frozen=True)
class Dataset:
    inputs: np.ndarray = field(repr=False)
    targets: np.ndarray = field(repr=False)

    def __post_init__(self):
        inputs = np.array(self.inputs, dtype=float)
        if inputs.ndim == 1:
            inputs = inputs.reshape(-1, 1)
        targets = np.array(self.targets, dtype=float).reshape(-1)
        if inputs.ndim != 2:
            raise DimensionError("inputs must be an n x d matrix")
        if inputs.shape[0] != targets.shape[0]:
            raise DimensionError(
                f"{inputs.shape[0]} input rows but {targets.shape[0]} targets"
            )
        if targets.shape[0] < 1:
            raise ValueError("dataset must contain at least one observation")
        if not (np.all(np.isfinite(inputs)) and np.all(np.isfinite(targets))):
            raise ValueError("dataset has non-finite entries")
        inputs.setflags(write=False)
        targets.setflags(write=False)
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "targets", targets)

    @property
    def n(self) -> int:
        return self.targets.shape[0]

    @property
    def d(self) -> int:
        return self.inputs.shape[1]

    def to_csv(self) -> str:
        buf = io.StringIO()
        header = [f"x{j + 1}" for j in range(self.d)] + ["y"]
        buf.write(",".join(header) + "\n")
        for row, y in zip(self.inputs, self.targets):
            buf.write(",".join(format(v, ".17g") for v in (*row, y)) + "\n")
        return buf.getvalue()


def _check_inputs(theta: ParamVector, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x.reshape(1, -1)
    if x.ndim != 2 or x.shape[1] != theta.arch.d:
        raise DimensionError(
            f"inputs of width {x.shape[-1] if x.ndim else 0} do not match d={theta.arch.d}"
        )
    return x


def predict(theta: ParamVector, inputs: np.ndarray) -> np.ndarray:
    """Vectorized regression function over the rows of an ``(n, d)`` matrix."""
    x = _check_inputs(theta, inputs)
    hidden = np.tanh(x @ theta.w.T + theta.b)
    return theta.beta + hidden @ theta.a


def eval(theta: ParamVector, x) -> float:  # noqa: A001 - mirrors the math name
    """Regression function at a single input row of length d."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.shape[0] != theta.arch.d:
        raise DimensionError(f"expected an input of length {theta.arch.d}, got shape {x.shape}")
    return float(predict(theta, x)[0])


def _check_data(theta: ParamVector, data: Dataset):
    if data.d != theta.arch.d:
        raise DimensionError(f"dataset has d={data.d}, parameters expect d={theta.arch.d}")


def mse(theta: ParamVector, data: Dataset) -> float:
    _check_data(theta, data)
    resid = data.targets - predict(theta, data.inputs)
    return float(np.mean(resid**2))


def mse_and_gradient(arch: Architecture, values: np.ndarray, inputs: np.ndarray, targets: np.ndarray):
    """MSE and its gradient for a raw parameter array.

    Optimizer hot path: skips the validation done by :class:`ParamVector`.
    """
    k, d = arch.k, arch.d
    beta = values[0]
    a = values[1 : 1 + k]
    b = values[1 + k : 1 + 2 * k]
    w = values[1 + 2 * k :].reshape(k, d)
    n = targets.shape[0]

    hidden = np.tanh(inputs @ w.T + b)
    err = beta + hidden @ a - targets  # f - y
    value = float(err @ err) / n

    scale = 2.0 / n
    dz = (scale * err)[:, None] * (a * (1.0 - hidden**2))
    grad = np.empty_like(values)
    grad[0] = scale * err.sum()
    grad[1 : 1 + k] = scale * (hidden.T @ err)
    grad[1 + k : 1 + 2 * k] = dz.sum(axis=0)
    grad[1 + 2 * k :] = (dz.T @ inputs).reshape(-1)
    return value, grad


def mse_gradient(theta: ParamVector, data: Dataset) -> np.ndarray:
    _check_data(theta, data)
    _, grad = mse_and_gradient(theta.arch, theta.values, data.inputs, data.targets)
    return grad
