"""
Shared test fixtures for the GDA kernel toolkit.
"""

from pathlib import Path

import numpy as np
import pytest

from core.kernel import KernelSpec
from core.scenario import Scenario, build_scenario, load_scenario

SCENARIO_DIR = Path(__file__).parent.parent / "scenarios"


@pytest.fixture
def scenario_dir() -> Path:
    """Directory holding the bundled scenario documents."""
    return SCENARIO_DIR


@pytest.fixture
def rbf_1d() -> KernelSpec:
    return KernelSpec(width=1.0, dimension=1)


@pytest.fixture
def rbf_2d() -> KernelSpec:
    return KernelSpec(width=1.0, dimension=2)


@pytest.fixture
def single_pair() -> Scenario:
    """p = 1 at 0, pt = 0.8 at 0.3; eta_d = eta_g = 0.01, lambda = sigma = 1."""
    return load_scenario(SCENARIO_DIR / "single_pair.yaml")


@pytest.fixture
def a_dominant() -> Scenario:
    """single_pair masses with sigma = 0.05: real branch, rho_a dominates."""
    return load_scenario(SCENARIO_DIR / "a_dominant_narrow.yaml")


@pytest.fixture
def two_point_region() -> Scenario:
    """Two equal-weight generated points around one true point in 2-D."""
    return load_scenario(SCENARIO_DIR / "two_point_region.yaml")


@pytest.fixture
def two_region_far() -> Scenario:
    return load_scenario(SCENARIO_DIR / "two_region_far.yaml")


@pytest.fixture
def two_region_near() -> Scenario:
    return load_scenario(SCENARIO_DIR / "two_region_near.yaml")


@pytest.fixture
def random_scenarios():
    """Factory for small randomized scenarios (1-2 true points, 1-3 generated points, d in {1, 2})."""
    def make(count: int, seed: int = 0):
        rng = np.random.default_rng(seed)
        out = []
        for _ in range(count):
            d = int(rng.integers(1, 3))
            n_real, n_gen = int(rng.integers(1, 3)), int(rng.integers(1, 4))
            out.append(build_scenario(
                rng.normal(size=(n_real, d)), rng.uniform(0.5, 1.5, n_real),
                rng.normal(size=(n_gen, d)), rng.uniform(0.2, 1.0, n_gen),
                width=float(rng.uniform(0.5, 2.0)), eta_d=0.01,
                eta_g=float(rng.uniform(0.005, 0.02)), lam=float(rng.uniform(0.5, 2.0)),
            ))
        return out
    return make


@pytest.fixture
def tmp_output(tmp_path) -> Path:
    """Per-test output directory."""
    out = tmp_path / "outputs"
    out.mkdir()
    return out
