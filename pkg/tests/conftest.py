import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from lpsplines.hyper import select_lambda  # noqa: E402
from lpsplines.negbin import NegativeBinomialModel, simulate_fixture  # noqa: E402
from lpsplines.propodds import ProportionalOddsModel, simulate_survey  # noqa: E402
from lpsplines.testing import gaussian_fixture  # noqa: E402


@pytest.fixture(scope="session")
def gauss_model():
    return gaussian_fixture(n=150, k1=2, L=8, seed=3)


@pytest.fixture(scope="session")
def po_model():
    ds, _ = simulate_survey(n=552, seed=11)
    return ProportionalOddsModel.from_data(ds.y, ds.X, ds.R)


@pytest.fixture(scope="session")
def po_hyper(po_model):
    return select_lambda(po_model)


@pytest.fixture(scope="session")
def small_po_model():
    """Ordinal toy with one smooth covariate and few coefficients."""
    rng = np.random.default_rng(5)
    n = 200
    x = rng.uniform(0, 1, n)
    eta = np.sin(2 * np.pi * x)
    cuts = np.array([-1.0, 0.5, 2.0])
    u = rng.logistic(size=n)
    y = 1 + np.sum(u[:, None] > cuts[None, :] + eta[:, None], axis=1)
    return ProportionalOddsModel.from_data(y, x, 4, L=6)


@pytest.fixture(scope="session")
def nb_model():
    return NegativeBinomialModel(simulate_fixture(120, 6.0, seed=0))


@pytest.fixture(scope="session")
def nb_hyper(nb_model):
    return select_lambda(nb_model)


# ---- acceptance summary ------------------------------------------------------------

_ACCEPTANCE = []


def pytest_runtest_logreport(report):
    if "test_acceptance.py" not in report.nodeid:
        return
    if report.when == "call" or (report.when == "setup" and not report.passed):
        _ACCEPTANCE.append(report)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for rep in _ACCEPTANCE:
        props = dict(rep.user_properties)
        name = props.get("criterion", rep.nodeid.rsplit("::", 1)[-1])
        status = "PASS" if rep.passed else "FAIL"
        terminalreporter.write_line(f"criterion {name}: {status}  {props.get('detail', '')}")
