import numpy as np
import pytest

from qndspin.atomic import cesium
from qndspin.config import validate_config
from qndspin.pipelines import build_model, resolve_probe
from qndspin.probe import D1, D2, ProbeColor

# Filled by tests/test_acceptance.py; reported once at the end of the session.
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"criterion {key}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture(scope="session")
def cs():
    return cesium()


@pytest.fixture(scope="session")
def gamma2(cs):
    return cs.manifold(D2).gamma


@pytest.fixture(scope="session")
def nominal_cfg():
    return validate_config({})


@pytest.fixture(scope="session")
def nominal_probe(nominal_cfg, cs):
    probe, _ = resolve_probe(nominal_cfg, cs)
    return probe


@pytest.fixture(scope="session")
def nominal_model(nominal_cfg):
    return build_model(nominal_cfg)


@pytest.fixture(scope="session")
def nominal_path(nominal_model):
    return nominal_model.evolve(300e-6)


@pytest.fixture(scope="session")
def d2_color(gamma2):
    return ProbeColor(D2, -580 * gamma2, 1e-3, 17e-6)


@pytest.fixture(scope="session")
def d1_color(cs, gamma2):
    return ProbeColor(D1, 580 * gamma2, 2e-4, 17e-6)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
