import numpy as np
import pytest

from chargelab.circuits import make_rng


@pytest.fixture
def rng() -> np.random.Generator:
    return make_rng(20260810)


def random_pure_state(L: int, rng: np.random.Generator):
    """Normalized Haar-ish dense state used by norm/completeness checks."""
    from chargelab.statevector import PureState

    amps = rng.normal(size=2**L) + 1j * rng.normal(size=2**L)
    amps /= np.linalg.norm(amps)
    return PureState(amps.astype(complex), L)
