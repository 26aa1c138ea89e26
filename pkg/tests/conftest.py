import numpy as np
import pytest

from mlpsel.mlp_core import Architecture, Dataset, ParamVector, mse


def central_difference_gradient(theta: ParamVector, data: Dataset, step: float = 1e-5) -> np.ndarray:
    """Independent oracle: central differences of the MSE, one coordinate at a time."""
    base = theta.values
    out = np.empty_like(base)
    for j in range(base.shape[0]):
        e = np.zeros_like(base)
        e[j] = step
        up = mse(ParamVector(theta.arch, base + e), data)
        down = mse(ParamVector(theta.arch, base - e), data)
        out[j] = (up - down) / (2 * step)
    return out


def relative_error(a, b) -> np.ndarray:
    a, b = np.asarray(a), np.asarray(b)
    scale = np.maximum(np.abs(a), np.abs(b))
    return np.where(scale > 0, np.abs(a - b) / np.where(scale > 0, scale, 1.0), 0.0)


def random_instance(rng, d=2, k=3, n=20, width=2.0):
    arch = Architecture(d, k)
    theta = ParamVector(arch, rng.uniform(-width, width, arch.dim))
    data = Dataset(rng.normal(size=(n, d)), rng.normal(size=n))
    return theta, data


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


ACCEPTANCE_LINES: list = []


def report_criterion(number: int, passed: bool, detail: str) -> None:
    line = f"{'PASS' if passed else 'FAIL'} criterion {number}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
