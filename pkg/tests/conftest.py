import numpy as np
import pytest

from stochbl.physics import FluidParams


def brute_force_tangent(p, n=1_000_001):
    """Tangent point by maximizing the chord slope from the initial state on a fine grid."""
    from stochbl.physics import fractional_flow

    S = np.linspace(p.S_init, p.S_inj, n)[1:]
    slope = (fractional_flow(S, p) - fractional_flow(p.S_init, p)) / (S - p.S_init)
    k = int(np.argmax(slope))
    return float(S[k]), float(slope[k])


@pytest.fixture
def trivial():
    return FluidParams()


@pytest.fixture
def residual():
    return FluidParams(S_wc=0.1, S_nr=0.05, M=2.0, S_inj=1.0, S_init=0.15)
