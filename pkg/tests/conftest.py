import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


def random_corr(rng, p, df=None):
    """Correlation matrix of a Wishart draw with ``df`` degrees of freedom."""
    df = df or 3 * p
    x = rng.standard_normal((df, p))
    s = x.T @ x
    h = 1.0 / np.sqrt(np.diag(s))
    c = s * h[:, None] * h[None, :]
    c = (c + c.T) / 2
    np.fill_diagonal(c, 1.0)
    return c


def random_pd(rng, p, df=None):
    x = rng.standard_normal((df or 3 * p, p))
    return x.T @ x / x.shape[0] + 0.1 * np.eye(p)


def random_unit_diag_pd(rng, p):
    return random_corr(rng, p, df=2 * p + 2)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def example_two_minima():
    """The 2x2 instance with two global minima at lam = 1, alpha = 0.

    Returns (r0, rho, d) where r0 solves sqrt(1 - r^2) = e^r (1 - r + r^3).
    """
    import math
    from scipy.optimize import brentq

    r0 = brentq(lambda r: math.sqrt(1 - r * r) - math.exp(r) * (1 - r + r ** 3), -0.95, -0.7, xtol=1e-15)
    rho = (math.exp(r0) * math.sqrt(1 - r0 * r0) - 1) / r0
    return r0, rho, (1 + r0 * rho) ** -0.5


def shrink_to_identity(c, bound):
    """Shrink the off-diagonal of a correlation matrix so that max |C_ij| <= bound."""
    off = np.max(np.abs(c - np.eye(c.shape[0])))
    out = np.eye(c.shape[0]) + (c - np.eye(c.shape[0])) * min(1.0, bound / off)
    np.fill_diagonal(out, 1.0)
    return out


# one line per acceptance criterion, printed at the end of the run
ACCEPTANCE_LINES: dict[int, str] = {}


def record_criterion(number: int, ok: bool, detail: str) -> None:
    ACCEPTANCE_LINES[number] = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
