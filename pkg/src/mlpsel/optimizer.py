"""Box-projected BFGS with Armijo backtracking and seeded multi-restart least squares."""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np

from .mlp_core import Architecture, Dataset, ParamVector, mse_and_gradient, param_dim

logger = logging.getLogger(__name__)

ARMIJO_C1 = 1e-4
CURVATURE_EPS = 1e-10
MAX_BACKTRACKS = 60


class NonFiniteError(ArithmeticError):
    """Objective or gradient evaluated to inf/nan."""


class FitError(RuntimeError):
    pass


@dataclass(frozen=True)
class FitConfig:
    restarts: int = 10
    max_iterations: int = 500
    gradient_tolerance: float = 1e-6
    init_half_width: float = 1.0
    box_bound: float = 100.0
    rng_seed: int = 0

    def __post_init__(self):
        if self.restarts < 1:
            raise ValueError("restarts must be >= 1")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not self.gradient_tolerance > 0:
            raise ValueError("gradient_tolerance must be positive")
        if not 0 < self.init_half_width <= self.box_bound:
            raise ValueError("need 0 < init_half_width <= box_bound")
        if not 0 <= self.rng_seed < 2**64:
            raise ValueError("rng_seed must be a 64-bit unsigned integer")


class Minimum(NamedTuple):
    x: np.ndarray
    value: float
    iterations: int
    converged: bool
    trace: list  # (iteration, objective, gradient sup-norm)


@dataclass(frozen=True)
class FitResult:
    theta_hat: ParamVector
    mse_hat: float
    restart_index: int
    iterations_used: int
    converged: bool
    traces: dict = field(default_factory=dict, repr=False, compare=False)


def _evaluate(objective, x):
    value, grad = objective(x)
    if not np.isfinite(value) or not np.all(np.isfinite(grad)):
        raise NonFiniteError(f"non-finite objective or gradient (value={value})")
    return float(value), np.asarray(grad, dtype=float)


def _pinned(x, g, bound):
    """Coordinates on the box face whose descent direction points outward."""
    return ((x >= bound) & (g < 0)) | ((x <= -bound) & (g > 0))


def _outward(x, direction, bound):
    return ((x >= bound) & (direction > 0)) | ((x <= -bound) & (direction < 0))


def _projected_norm(x, g, bound) -> float:
    return float(np.max(np.abs(np.where(_pinned(x, g, bound), 0.0, g))))


def _backtrack(objective, x, f, g, direction, bound):
    """Armijo backtracking from step 1, halving; None if no feasible move decreases f."""
    step = 1.0
    for _ in range(MAX_BACKTRACKS):
        x_new = np.clip(x + step * direction, -bound, bound)
        if np.array_equal(x_new, x):
            return None
        f_new, g_new = _evaluate(objective, x_new)
        # projected form of the sufficient-decrease test
        if f_new <= f + ARMIJO_C1 * (g @ (x_new - x)) and f_new < f:
            return x_new, f_new, g_new
        step *= 0.5
    return None


def bfgs_minimize(
    objective: Callable[[np.ndarray], tuple],
    theta_init,
    config: FitConfig = FitConfig(),
) -> Minimum:
    """Minimize ``objective`` (returning ``(value, gradient)``) inside ``[-B, B]^D``.

    Steps are projected onto the box before the Armijo test, so every accepted
    iterate is feasible and the objective sequence is nonincreasing. Coordinates
    pinned at a face are frozen for the step, and convergence is judged on the
    sup-norm of the gradient with those coordinates removed (equal to the plain
    gradient sup-norm at interior points). The inverse Hessian update is skipped
    whenever ``y.s <= 1e-10``.
    """
    bound = config.box_bound
    x = np.clip(np.array(theta_init, dtype=float), -bound, bound)
    f, g = _evaluate(objective, x)
    dim = x.shape[0]
    inv_hess = np.eye(dim)
    fresh = True
    trace = [(0, f, _projected_norm(x, g, bound))]

    for it in range(1, config.max_iterations + 1):
        pinned = _pinned(x, g, bound)
        pg = np.where(pinned, 0.0, g)
        if np.max(np.abs(pg)) < config.gradient_tolerance:
            return Minimum(x, f, it - 1, True, trace)

        direction = -inv_hess @ pg
        direction[pinned | _outward(x, direction, bound)] = 0.0
        if not g @ direction < 0:
            inv_hess = np.eye(dim)
            fresh = True
            direction = -pg

        accepted = _backtrack(objective, x, f, g, direction, bound)
        if accepted is None and not fresh:
            # stale curvature model; retry once along projected steepest descent
            inv_hess = np.eye(dim)
            fresh = True
            accepted = _backtrack(objective, x, f, g, -pg, bound)
        if accepted is None:
            logger.debug("line search stalled at iteration %d", it)
            return Minimum(x, f, it - 1, False, trace)
        x_new, f_new, g_new = accepted

        s = x_new - x
        y = g_new - g
        sy = s @ y
        if sy > CURVATURE_EPS:
            if fresh:
                inv_hess = np.eye(dim) * (sy / (y @ y))
                fresh = False
            rho = 1.0 / sy
            hy = inv_hess @ y
            inv_hess = (
                inv_hess
                - rho * (np.outer(s, hy) + np.outer(hy, s))
                + (rho * rho * (y @ hy) + rho) * np.outer(s, s)
            )
        x, f, g = x_new, f_new, g_new
        trace.append((it, f, _projected_norm(x, g, bound)))

    converged = _projected_norm(x, g, bound) < config.gradient_tolerance
    return Minimum(x, f, config.max_iterations, converged, trace)


def restart_rng(seed: int, restart_index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(restart_index,)))


def derive_seed(seed: int, *key: int) -> int:
    """Child 64-bit seed for a named substream ``key`` of ``seed``."""
    state = np.random.SeedSequence(seed, spawn_key=tuple(key)).generate_state(1, np.uint64)
    return int(state[0])


def fit(arch: Architecture, data: Dataset, config: FitConfig = FitConfig(), keep_traces=False) -> FitResult:
    """Least squares estimate for ``arch`` by ``config.restarts`` BFGS runs.

    Restart ``r`` draws its start uniformly on ``[-h, h]^D`` from the stream
    ``(rng_seed, r)``; the lowest final MSE wins, earliest restart on ties.
    """
    if data.d != arch.d:
        raise ValueError(f"dataset has d={data.d} but architecture has d={arch.d}")
    dim = param_dim(arch)
    inputs, targets = data.inputs, data.targets

    def objective(values):
        return mse_and_gradient(arch, values, inputs, targets)

    best = None
    traces = {}
    for r in range(config.restarts):
        rng = restart_rng(config.rng_seed, r)
        start = rng.uniform(-config.init_half_width, config.init_half_width, size=dim)
        try:
            res = bfgs_minimize(objective, start, config)
        except NonFiniteError as exc:
            logger.warning("restart %d discarded: %s", r, exc)
            continue
        if keep_traces:
            traces[r] = res.trace
        if best is None or res.value < best[1].value:
            best = (r, res)

    if best is None:
        raise FitError(f"no successful restart for {arch}")
    r, res = best
    theta = ParamVector(arch, res.x)
    # recompute so mse_hat is exactly the MSE of theta_hat
    mse_hat, _ = mse_and_gradient(arch, theta.values, inputs, targets)
    return FitResult(theta, mse_hat, r, res.iterations, res.converged, traces)


def traces_to_csv(traces: dict) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["restart_index", "iteration", "objective", "gradient_norm"])
    for r in sorted(traces):
        for it, obj, gnorm in traces[r]:
            writer.writerow([r, it, format(obj, ".17g"), format(gnorm, ".17g")])
    return buf.getvalue()
