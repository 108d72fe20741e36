import numpy as np
import pytest

import sepunmix as su

ACCEPTANCE_RESULTS: dict[str, bool] = {}


@pytest.fixture(scope="session")
def acceptance_recorder():
    def record(name: str, passed: bool, detail: str = ""):
        ACCEPTANCE_RESULTS[name] = bool(passed)
        suffix = f"  ({detail})" if detail else ""
        print(f"[ACCEPTANCE] {name}: {'PASS' if passed else 'FAIL'}{suffix}")

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.write_sep("-", "acceptance criteria")
    for name, passed in ACCEPTANCE_RESULTS.items():
        terminalreporter.write_line(f"{name}: {'PASS' if passed else 'FAIL'}")


@pytest.fixture(scope="session")
def gaussian_kernel():
    return su.GaussianKernel((0.05, 0.1))


@pytest.fixture(scope="session")
def small_grid():
    return su.SamplingGrid.uniform(512, 1.0)


@pytest.fixture(scope="session")
def small_psf_model(gaussian_kernel, small_grid):
    rng = np.random.default_rng(42)
    support = su.sample_support(2, 2, 0.01, 1.0, rng)
    return su.build_psf_model(gaussian_kernel, support, small_grid)


@pytest.fixture(scope="session")
def small_problem(small_psf_model):
    """(model, theta_star, signal) on the small Gaussian PSF instance."""
    model = small_psf_model
    x_star = np.array([0.07, 0.09])
    theta_star = su.Theta(x_star, np.array([1.0, 0.8, 1.2, 0.9]))
    signal = model.evaluate(x_star) @ theta_star.y
    return model, theta_star, signal
