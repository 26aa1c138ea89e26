"""Generalized derivative statistic and a Monte-Carlo check of the overfitting bound.

For a candidate ``theta`` and the true ``theta0`` the pointwise excess loss is
``delta = (y - f_theta(x))^2 - (y - f_theta0(x))^2`` and the generalized
derivative is ``d = (exp(-lam * delta) - 1) / ||exp(-lam * delta) - 1||_2``,
the norm taken under the data-generating law. Since ``log(1 + norm * d) =
-lam * delta``, the in-sample improvement ``n (E_n(theta0) - E_n(theta))``
equals ``(1/lam) sum log(1 + norm * d_i)``, and the elementary inequality
``log(1 + u) <= u - u_-^2 / 2`` bounds it by
``(sum d_i)^2 / (2 lam sum (d_i)_-^2)`` whenever ``sum d_i > 0`` (0 otherwise).

The population norm is only available when the data law is known, so the
checker runs on the simulated model.
"""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .mlp_core import Architecture, Dataset, ParamVector, mse, predict
from .optimizer import FitConfig, FitError, derive_seed, fit
from .simulation import gen_true_data

logger = logging.getLogger(__name__)

DEGENERATE_NORM = 1e-12
# draws are theta0 plus Gaussian noise with scale log-uniform on this range
PERTURB_LOG10_RANGE = (-3.0, 0.0)


class DegenerateNormError(ValueError):
    """theta is indistinguishable from theta0 under the sampling law."""


class NoNegativePartError(ValueError):
    """Every sample d value is nonnegative, so the bound's denominator vanishes."""


@dataclass(frozen=True)
class BoundConfig:
    lam: float = 0.5
    norm_mc_samples: int = 100_000
    theta_draws: int = 200
    rng_seed: int = 0
    fit_config: FitConfig = field(default_factory=FitConfig)

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError("lambda must be > 0")
        if self.norm_mc_samples < 1000:
            raise ValueError("norm_mc_samples must be >= 1000")
        if self.theta_draws < 0:
            raise ValueError("theta_draws must be >= 0")


def delta_sq(theta: ParamVector, theta0: ParamVector, x, y):
    """``(y - f_theta(x))^2 - (y - f_theta0(x))^2`` for one row or many."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    f = predict(theta, x)
    f0 = predict(theta0, x)
    y = np.asarray(y, dtype=float)
    out = (y - f) ** 2 - (y - f0) ** 2
    return float(out[0]) if single else out


def _numerator(theta, theta0, lam, x, y):
    return np.expm1(-lam * delta_sq(theta, theta0, x, y))


def norm_estimate_with_error(theta, theta0, lam, sampler, M, rng):
    """Monte-Carlo L2 norm of ``exp(-lam * delta) - 1`` and its delta-method standard error."""
    sample = sampler(M, rng)
    sq = _numerator(theta, theta0, lam, sample.inputs, sample.targets) ** 2
    norm = float(np.sqrt(np.mean(sq)))
    if not norm >= DEGENERATE_NORM:
        raise DegenerateNormError("theta indistinguishable from theta0")
    stderr = float(np.std(sq) / np.sqrt(M) / (2 * norm))
    return norm, stderr


def norm_estimate(
    theta: ParamVector,
    theta0: ParamVector,
    lam: float,
    sampler: Callable[[int, np.random.Generator], Dataset] = gen_true_data,
    M: int = 100_000,
    rng: Optional[np.random.Generator] = None,
) -> float:
    if rng is None:
        rng = np.random.default_rng(0)
    return norm_estimate_with_error(theta, theta0, lam, sampler, M, rng)[0]


def gen_derivative(theta, theta0, lam, x, y, norm):
    """Normalized exponential contrast; at least ``-1 / norm`` everywhere."""
    return _numerator(theta, theta0, lam, x, y) / norm


def overfit_statistic(data: Dataset, theta0: ParamVector, theta: ParamVector) -> float:
    """``n * (E_n(theta0) - E_n(theta))``, positive when theta fits better in sample."""
    return data.n * (mse(theta0, data) - mse(theta, data))


def bound_from_d(d_values, lam) -> float:
    d_values = np.asarray(d_values, dtype=float)
    neg = np.minimum(d_values, 0.0)
    denom = float(neg @ neg)
    if denom == 0:
        raise NoNegativePartError("no negative part in sample")
    total = float(d_values.sum())
    if total <= 0:
        return 0.0
    return total * total / (2.0 * lam * denom)


def bound_statistic(data: Dataset, theta, theta0, lam, norm) -> float:
    d_values = gen_derivative(theta, theta0, lam, data.inputs, data.targets, norm)
    return bound_from_d(d_values, lam)


def elementary_inequality_violations(u) -> int:
    """Count ``u`` where ``log(1+u) > u - min(u,0)^2 / 2`` beyond a few ulps."""
    u = np.asarray(u, dtype=float)
    lhs = np.log1p(u)
    rhs = u - 0.5 * np.minimum(u, 0.0) ** 2
    tol = 4 * np.finfo(float).eps * np.maximum(np.abs(rhs), np.abs(lhs))
    return int(np.count_nonzero(lhs > rhs + tol))


@dataclass(frozen=True)
class BoundRecord:
    theta_index: int
    source: str  # "draw" or "fit"
    overfit_stat: float
    bound_stat: float
    norm_estimate: float
    norm_stderr: float
    violated: bool


@dataclass
class BoundReport:
    records: list
    skipped: list  # (theta_index, reason)
    elementary_samples: int
    elementary_violations: int
    lam: float
    n: int

    @property
    def violation_count(self) -> int:
        return sum(r.violated for r in self.records)

    @property
    def max_ratio(self) -> float:
        """Largest overfit/bound over records with a positive bound (nan if none)."""
        ratios = [r.overfit_stat / r.bound_stat for r in self.records if r.bound_stat > 0]
        return max(ratios) if ratios else float("nan")

    @property
    def sup_overfit(self) -> float:
        return max((r.overfit_stat for r in self.records), default=float("nan"))

    @property
    def sup_bound(self) -> float:
        return max((r.bound_stat for r in self.records), default=float("nan"))

    def summary(self) -> str:
        return f"violations: {self.violation_count} / {len(self.records)}"

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["theta_index", "overfit_stat", "bound_stat", "norm_estimate", "violated"])
        for r in self.records:
            writer.writerow([
                r.theta_index,
                format(r.overfit_stat, ".17g"),
                format(r.bound_stat, ".17g"),
                format(r.norm_estimate, ".17g"),
                int(r.violated),
            ])
        return buf.getvalue()


def embed(theta0: ParamVector, arch: Architecture) -> ParamVector:
    """``theta0`` written in a wider architecture, surplus units switched off."""
    if arch.d != theta0.arch.d or arch.k < theta0.arch.k:
        raise ValueError(f"{arch} cannot realize {theta0.arch}")
    pad = arch.k - theta0.arch.k
    return ParamVector.from_parts(
        theta0.beta,
        np.concatenate([theta0.a, np.zeros(pad)]),
        np.concatenate([theta0.b, np.zeros(pad)]),
        np.vstack([theta0.w, np.zeros((pad, arch.d))]),
    )


def draw_thetas(theta0: ParamVector, arch: Architecture, count: int, rng, box_bound: float = 100.0):
    """Random candidates around ``theta0``: Gaussian perturbations at log-uniform scales."""
    base = embed(theta0, arch).values
    lo, hi = PERTURB_LOG10_RANGE
    out = []
    for _ in range(count):
        scale = 10.0 ** rng.uniform(lo, hi)
        values = np.clip(base + scale * rng.standard_normal(base.shape[0]), -box_bound, box_bound)
        out.append(ParamVector(arch, values))
    return out


def _evaluate_candidate(index, source, theta, theta0, data, config, sampler):
    rng = np.random.default_rng(np.random.SeedSequence(config.rng_seed, spawn_key=(2, index)))
    norm, se = norm_estimate_with_error(theta, theta0, config.lam, sampler, config.norm_mc_samples, rng)
    d_values = gen_derivative(theta, theta0, config.lam, data.inputs, data.targets, norm)
    bound = bound_from_d(d_values, config.lam)
    overfit = overfit_statistic(data, theta0, theta)
    # propagate a 3-standard-error change of the norm through the bound
    shifted = []
    for alt in (norm - 3 * se, norm + 3 * se):
        if alt > 0:
            shifted.append(bound_from_d(d_values * norm / alt, config.lam))
    slack = max((abs(b - bound) for b in shifted), default=0.0)
    slack += 1e-9 * max(1.0, abs(bound), abs(overfit))
    return BoundRecord(index, source, overfit, bound, norm, se, overfit > bound + slack)


def verify_inequality(
    config: BoundConfig,
    arch: Architecture,
    theta0: ParamVector,
    n: int,
    sampler: Callable[[int, np.random.Generator], Dataset] = gen_true_data,
    include_fit: bool = True,
    force_theta0: bool = False,
    elementary_samples: int = 1_000_000,
) -> BoundReport:
    """Check ``overfit <= bound`` for random candidates and the fitted estimator.

    Candidate ``i`` uses its own norm substream; degenerate candidates (norm
    below 1e-12, or no negative d value in the sample) are skipped and listed.
    With ``force_theta0`` every draw equals ``theta0`` and no fit is made.
    """
    seq = np.random.SeedSequence(config.rng_seed)
    data_seq, draw_seq, elem_seq = seq.spawn(3)
    data = sampler(n, np.random.default_rng(data_seq))
    draw_rng = np.random.default_rng(draw_seq)

    if force_theta0:
        candidates = [("draw", embed(theta0, arch)) for _ in range(config.theta_draws)]
        include_fit = False
    else:
        box = config.fit_config.box_bound
        candidates = [("draw", t) for t in draw_thetas(theta0, arch, config.theta_draws, draw_rng, box)]
    if include_fit:
        fit_config = replace(config.fit_config, rng_seed=derive_seed(config.rng_seed, 3))
        try:
            candidates.append(("fit", fit(arch, data, fit_config).theta_hat))
        except FitError as exc:
            logger.warning("fitted candidate unavailable: %s", exc)

    records, skipped = [], []
    for index, (source, theta) in enumerate(candidates):
        try:
            records.append(_evaluate_candidate(index, source, theta, theta0, data, config, sampler))
        except (DegenerateNormError, NoNegativePartError) as exc:
            skipped.append((index, str(exc)))

    u = np.random.default_rng(elem_seq).uniform(0.0, 11.0, size=elementary_samples)
    u = 10.0 - u  # (-1, 10]
    return BoundReport(
        records=records,
        skipped=skipped,
        elementary_samples=elementary_samples,
        elementary_violations=elementary_inequality_violations(u),
        lam=config.lam,
        n=n,
    )
