import numpy as np
import pytest

from ness_lattice import PolynomialPotential, build_chain

HARMONIC = PolynomialPotential.harmonic(1.0)
QUARTIC = PolynomialPotential((0.0, 0.0, 0.5, 0.0, 0.25))


def harmonic_chain(n=3, T=(1.0, 1.0), lam=1.0, gamma=1.0, kind="markovian_aux"):
    return build_chain(n, HARMONIC, HARMONIC, T[0], T[1], lam, gamma, kind)


def quartic_chain(n=3, T=(2.0, 1.0), lam=1.0, gamma=1.0):
    return build_chain(n, QUARTIC, QUARTIC, T[0], T[1], lam, gamma)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import VERDICTS
    except ImportError:
        return
    if not VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(VERDICTS):
        ok, detail = VERDICTS[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'} - {detail}")
