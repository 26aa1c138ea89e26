"""Simulated two-input, three-unit tanh model and the replication study over criteria."""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .mlp_core import Dataset, ParamVector
from .optimizer import FitConfig, FitError, derive_seed
from .parallel import parallel_map
from .selection import PenaltySpec, fit_path, select_from_fits

logger = logging.getLogger(__name__)

TRUE_K = 3
INPUT_VARIANCE = 3.0

# tanh(6x - 2y) + 2 tanh(8 - x + 3y) - 3 tanh(2 - 6x - 2y) + 1.5
THETA0 = ParamVector.from_parts(
    beta=1.5,
    a=[1.0, 2.0, -3.0],
    b=[0.0, 8.0, 2.0],
    w=[[6.0, -2.0], [-1.0, 3.0], [-6.0, -2.0]],
)


def true_regression(x, y):
    """Noise-free target; broadcasts over arrays."""
    return (
        np.tanh(6 * x - 2 * y)
        + 2 * np.tanh(8 - x + 3 * y)
        - 3 * np.tanh(2 - 6 * x - 2 * y)
        + 1.5
    )


def noise_variance() -> float:
    """Variance of the U[-1, 1] noise."""
    return 1.0 / 3.0


def gen_true_data(n: int, rng: np.random.Generator) -> Dataset:
    """``n`` draws of inputs ~ N(0, 3 I_2) and targets = true_regression + U[-1, 1]."""
    if n < 1:
        raise ValueError("n must be >= 1")
    inputs = rng.normal(0.0, np.sqrt(INPUT_VARIANCE), size=(n, 2))
    noise = rng.uniform(-1.0, 1.0, size=n)
    return Dataset(inputs, true_regression(inputs[:, 0], inputs[:, 1]) + noise)


def data_rng(seed: int, rep: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0, rep)))


@dataclass(frozen=True)
class SimConfig:
    n: int
    reps: int = 20
    k_max: int = 6
    criteria: tuple = ()
    fit_config: FitConfig = field(default_factory=FitConfig)
    rng_seed: int = 0

    def __post_init__(self):
        if self.n < 10:
            raise ValueError("n must be >= 10")
        if self.reps < 1:
            raise ValueError("reps must be >= 1")
        if self.k_max < 1:
            raise ValueError("k_max must be >= 1")
        if not self.criteria:
            raise ValueError("at least one criterion is required")
        object.__setattr__(self, "criteria", tuple(self.criteria))


@dataclass
class SelectionTable:
    criteria: tuple
    k_max: int
    counts: np.ndarray  # (len(criteria), k_max)
    n: int
    reps: int
    seed: int

    def row(self, spec_or_label) -> np.ndarray:
        label = spec_or_label if isinstance(spec_or_label, str) else spec_or_label.label
        for i, spec in enumerate(self.criteria):
            if spec.label == label:
                return self.counts[i]
        raise KeyError(label)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["criterion", "regime", "k", "count"])
        for spec, counts in zip(self.criteria, self.counts):
            for k, c in enumerate(counts, start=1):
                writer.writerow([spec.family.value, spec.regime.value, k, int(c)])
        return buf.getvalue()

    def to_markdown(self) -> str:
        ks = range(1, self.k_max + 1)
        lines = [
            f"Selected hidden units, n={self.n}, {self.reps} replications, seed {self.seed}",
            "",
            "| criterion | " + " | ".join(str(k) for k in ks) + " |",
            "|---|" + "---|" * self.k_max,
        ]
        for spec, counts in zip(self.criteria, self.counts):
            lines.append(f"| {spec.label} | " + " | ".join(str(int(c)) for c in counts) + " |")
        return "\n".join(lines) + "\n"


def _replicate(args):
    config, rep = args
    data = gen_true_data(config.n, data_rng(config.rng_seed, rep))
    fit_config = replace(config.fit_config, rng_seed=derive_seed(config.rng_seed, 1, rep))
    fits = fit_path(data, config.k_max, fit_config)
    if all(f is None for f in fits):
        raise FitError(f"replication {rep}: every architecture failed to fit")
    return [select_from_fits(fits, spec, data.n).k_hat for spec in config.criteria]


def replication_data(config: SimConfig, rep: int) -> Dataset:
    """The dataset used by replication ``rep`` of ``run_study(config)``."""
    return gen_true_data(config.n, data_rng(config.rng_seed, rep))


def run_study(config: SimConfig, jobs: int = 1) -> SelectionTable:
    """Replicate data generation and selection; count chosen ``k`` per criterion.

    All criteria in a replication share one set of fits. Replication ``r``
    draws its data from substream ``(seed, 0, r)`` and its restarts from
    ``(seed, 1, r)``, so the table does not depend on ``jobs``.
    """
    picks = parallel_map(_replicate, [(config, rep) for rep in range(config.reps)], jobs)
    counts = np.zeros((len(config.criteria), config.k_max), dtype=int)
    for rep_picks in picks:
        for i, k_hat in enumerate(rep_picks):
            counts[i, k_hat - 1] += 1
    return SelectionTable(config.criteria, config.k_max, counts, config.n, config.reps, config.rng_seed)
