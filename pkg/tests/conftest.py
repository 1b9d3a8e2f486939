import numpy as np
import pytest

from superlyap.lyapunov import GlobalLyapunov, LyapunovSpec, bvp_for, choose_constants


@pytest.fixture(scope="session")
def tuned():
    """Auto-tuned and certified default constants (delta = 0.2, unit noise)."""
    spec, g, report, log = choose_constants()
    return {"spec": spec, "g": g, "report": report, "log": log, "V": GlobalLyapunov(spec, g)}


@pytest.fixture(scope="session")
def spec():
    """Uncertified default spec with alpha from the sign checks (cheap)."""
    s, g, _, _ = choose_constants(certify_fn=False)
    return s


@pytest.fixture(scope="session")
def g(spec):
    return bvp_for(spec)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def small_spec(alpha=2.0, delta=0.2, rho=20.0):
    return LyapunovSpec(delta=delta, alpha=alpha, rho=rho)
