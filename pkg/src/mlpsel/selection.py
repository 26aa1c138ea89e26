"""Penalized-MSE criteria for choosing the number of hidden units.

Each criterion is ``E_n + a_n(k)`` (or ``log E_n + a_n(k)``) with a penalty
proportional to the parameter count ``D = k(d+2)+1``:

==========  ==================
family      penalty / v
==========  ==================
AIC_LIKE    2 D / n
BIC_LIKE    D log(n) / n
SP          D sqrt(n) / n
VSP         D n^(3/4) / n
==========  ==================

where ``v`` is the known noise variance, the fitted MSE of the candidate
(plug-in), or 1 when the log-MSE is penalized.
"""

from __future__ import annotations

import csv
import enum
import io
import logging
import math
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .mlp_core import Architecture, Dataset
from .optimizer import FitConfig, FitError, FitResult, derive_seed, fit
from .parallel import parallel_map

logger = logging.getLogger(__name__)


class Family(enum.Enum):
    AIC_LIKE = "AIC"
    BIC_LIKE = "BIC"
    SP = "SP"
    VSP = "VSP"


class Regime(enum.Enum):
    KNOWN_VARIANCE = "known"
    PLUGIN_VARIANCE = "plugin"
    LOG_MSE = "log"


class DegenerateError(ValueError):
    """Zero fitted MSE where the criterion needs a positive one."""


@dataclass(frozen=True)
class PenaltySpec:
    family: Family
    regime: Regime
    sigma2: Optional[float] = None

    def __post_init__(self):
        if self.regime is Regime.KNOWN_VARIANCE:
            if self.sigma2 is None or not self.sigma2 > 0:
                raise ValueError("known-variance regime needs sigma2 > 0")
        elif self.sigma2 is not None:
            raise ValueError(f"sigma2 is only meaningful in the known-variance regime, not {self.regime.value}")

    @classmethod
    def parse(cls, text: str, sigma2: Optional[float] = None) -> "PenaltySpec":
        """Parse ``FAMILY:regime`` such as ``BIC:known`` or ``SP:log``."""
        try:
            fam, reg = text.split(":")
            family = Family[fam.upper()] if fam.upper() in Family.__members__ else Family(fam.upper())
            regime = Regime(reg.lower())
        except (ValueError, KeyError):
            raise ValueError(f"bad criterion {text!r}; expected FAMILY:regime, e.g. BIC:known") from None
        return cls(family, regime, sigma2 if regime is Regime.KNOWN_VARIANCE else None)

    @property
    def label(self) -> str:
        return f"{self.family.value}:{self.regime.value}"


def _rate(family: Family, n: int) -> float:
    if family is Family.AIC_LIKE:
        return 2.0
    if family is Family.BIC_LIKE:
        return math.log(n)
    if family is Family.SP:
        return math.sqrt(n)
    return n**0.75


def penalty(spec: PenaltySpec, n: int, D: int, sigma2_hat: Optional[float] = None) -> float:
    if n < 2 or D < 1:
        raise ValueError(f"need n >= 2 and D >= 1, got n={n}, D={D}")
    if spec.regime is Regime.PLUGIN_VARIANCE:
        if sigma2_hat is None:
            raise ValueError("plug-in regime needs sigma2_hat")
        if not sigma2_hat > 0:
            raise DegenerateError(f"plug-in variance {sigma2_hat} <= 0; use another regime")
        v = sigma2_hat
    elif sigma2_hat is not None:
        raise ValueError("sigma2_hat is only accepted in the plug-in regime")
    elif spec.regime is Regime.KNOWN_VARIANCE:
        v = spec.sigma2
    else:
        v = 1.0
    return v * D * _rate(spec.family, n) / n


def criterion_value(spec: PenaltySpec, mse_hat: float, n: int, D: int, sigma2_hat: Optional[float] = None) -> float:
    if mse_hat < 0:
        raise ValueError("mse_hat must be nonnegative")
    pen = penalty(spec, n, D, sigma2_hat)
    if spec.regime is Regime.LOG_MSE:
        if mse_hat == 0:
            raise DegenerateError("degenerate zero MSE")
        return math.log(mse_hat) + pen
    return mse_hat + pen


@dataclass(frozen=True)
class KRow:
    k: int
    D: int
    mse_hat: float
    penalty: float
    criterion: float


@dataclass(frozen=True)
class SelectionResult:
    k_hat: int
    per_k: tuple
    spec: PenaltySpec

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["k", "D", "mse_hat", "penalty", "criterion", "chosen"])
        for row in self.per_k:
            writer.writerow([
                row.k,
                row.D,
                format(row.mse_hat, ".17g"),
                format(row.penalty, ".17g"),
                format(row.criterion, ".17g"),
                int(row.k == self.k_hat),
            ])
        return buf.getvalue()


def select_from_fits(fits: Sequence[Optional[FitResult]], spec: PenaltySpec, n: int) -> SelectionResult:
    """Choose ``k`` given the fitted MSE for each ``k = 1..K``.

    ``fits[k-1]`` may be None for a failed fit; that ``k`` is skipped.
    Ties go to the smaller ``k``.
    """
    rows = []
    for k, res in enumerate(fits, start=1):
        if res is None:
            continue
        D = res.theta_hat.arch.dim
        sigma2_hat = res.mse_hat if spec.regime is Regime.PLUGIN_VARIANCE else None
        pen = penalty(spec, n, D, sigma2_hat)
        crit = criterion_value(spec, res.mse_hat, n, D, sigma2_hat)
        rows.append(KRow(k, D, res.mse_hat, pen, crit))
    if not rows:
        raise FitError("every candidate architecture failed to fit")
    best = min(rows, key=lambda r: (r.criterion, r.k))
    return SelectionResult(best.k, tuple(rows), spec)


def _fit_one(args):
    arch, data, config = args
    try:
        return fit(arch, data, config)
    except FitError as exc:
        logger.warning("k=%d failed: %s", arch.k, exc)
        return None


def fit_path(data: Dataset, k_max: int, fit_config: FitConfig = FitConfig(), jobs: int = 1) -> list:
    """Least squares fits for ``k = 1..k_max``; entry is None where every restart failed.

    The fit for ``k`` uses the seed substream ``(rng_seed, k)``.
    """
    if k_max < 1:
        raise ValueError("k_max must be >= 1")
    tasks = [
        (Architecture(data.d, k), data, replace(fit_config, rng_seed=derive_seed(fit_config.rng_seed, k)))
        for k in range(1, k_max + 1)
    ]
    return parallel_map(_fit_one, tasks, jobs)


def select(data: Dataset, k_max: int, spec: PenaltySpec, fit_config: FitConfig = FitConfig(), jobs: int = 1) -> SelectionResult:
    return select_from_fits(fit_path(data, k_max, fit_config, jobs), spec, data.n)


def mse_nesting_gaps(result: SelectionResult) -> np.ndarray:
    """``mse(k+1) - mse(k)`` over consecutive fitted ``k``; positive values break nesting."""
    mses = np.array([row.mse_hat for row in result.per_k])
    return np.diff(mses)

