import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from rotorbits.hamiltonian import RawHamiltonian

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

ACCEPTANCE_LINES = []


def anharmonic(a=1.0, b=1.1, eps=0.05, beta=0.5):
    """H = ½(q²/a² + p²/b²) + ε(q⁴ + p⁴) in one degree of freedom.

    Not a function of the plane radius, so no plane rotation other than ±I
    preserves it and its gauge is not a multiple of H.
    """

    def value(z):
        q, p = z[..., 0], z[..., 1]
        return 0.5 * (q * q / a ** 2 + p * p / b ** 2) + eps * (q ** 4 + p ** 4)

    def grad(z):
        q, p = z[..., 0], z[..., 1]
        return np.stack([q / a ** 2 + 4 * eps * q ** 3, p / b ** 2 + 4 * eps * p ** 3], axis=-1)

    def hess(z):
        z = np.asarray(z, dtype=float)
        out = np.zeros(z.shape[:-1] + (2, 2))
        out[..., 0, 0] = 1 / a ** 2 + 12 * eps * z[..., 0] ** 2
        out[..., 1, 1] = 1 / b ** 2 + 12 * eps * z[..., 1] ** 2
        return out

    return RawHamiltonian(value, grad, beta, 2, hess=hess, name="anharmonic")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
