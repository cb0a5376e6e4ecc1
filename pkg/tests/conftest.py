import numpy as np
import pytest

from qpcpanel import DgpConfig, PanelData, generate


def random_panel(rng, n=40, T=5, K=2, y0=True):
    Y = rng.standard_normal((n, T))
    X = tuple(rng.standard_normal((n, T)) for _ in range(K))
    return PanelData(Y, X, rng.standard_normal(n) if y0 else None)


def noiseless(n=60, T=6, seed=0, rep=0, **kw):
    cfg = DgpConfig(n=n, T=T, seed=seed, error_mode="iid", sigma2=0.0, **kw)
    return generate(cfg, rep)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def sim_panel():
    return generate(DgpConfig(n=150, T=6, seed=7), 0)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
