import os

import numpy as np
import pytest

from ramol.stream import GaussianComponent, MixtureGenerator, RegimeSpec

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
ELEC_PATH = os.environ.get("RAMOL_ELEC", os.path.join(ROOT, "data", "elec.csv"))


def two_gaussians(mu0, mu1, var=1.0, priors=(0.5, 0.5)):
    mu0 = np.atleast_1d(np.asarray(mu0, dtype=float))
    mu1 = np.atleast_1d(np.asarray(mu1, dtype=float))
    v = np.full(mu0.shape, var)
    return MixtureGenerator(
        np.asarray(priors),
        ((GaussianComponent(1.0, mu0, v),), (GaussianComponent(1.0, mu1, v),)),
    )


@pytest.fixture
def regime_a():
    return RegimeSpec(500, two_gaussians([-2.0, 0.0], [2.0, 0.0]), "A")


@pytest.fixture
def regime_b():
    return RegimeSpec(500, two_gaussians([0.0, -2.0], [0.0, 2.0]), "B")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def elec_path():
    if not os.path.isfile(ELEC_PATH):
        pytest.skip(f"ElecNormNew CSV not found at {ELEC_PATH}; run `python -m ramol.datasets`")
    return ELEC_PATH


# ---- acceptance reporting -------------------------------------------------

ACCEPTANCE_RESULTS: list[tuple[str, bool, str]] = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in ACCEPTANCE_RESULTS:
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
