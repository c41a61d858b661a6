import numpy as np
import pytest

from nullctl.dynamics import CouplingCoefficients, CoupledSystem, SwitchMode, SwitchingSetup
from nullctl.intervals import IntervalSet


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture
def make_system():
    """Factory for small coupled systems (alternating E=(0, T/2), F=(T/2, T) by default)"""

    def factory(n=24, alpha=0.5, T=1.0, coefficients=(0.0, 0.0, 0.5, 0.0), dt=None,
                mode=SwitchMode.ALTERNATING, G1=((0.1, 0.4),), G2=((0.6, 0.9),),
                E=None, F=None, time_multiple=1, grading=1.0, check=True):
        if E is None:
            E = ((0.0, 0.5 * T),) if mode is SwitchMode.ALTERNATING else ((0.0, T),)
        if F is None:
            F = ((0.5 * T, T),) if mode is SwitchMode.ALTERNATING else ()
        setup = SwitchingSetup(T=T, G1=IntervalSet(G1), G2=IntervalSet(G2), E=IntervalSet(E),
                               F=IntervalSet(F), mode=mode, check=check)
        coeffs = CouplingCoefficients.constant(*coefficients, T)
        return CoupledSystem.build(n, alpha, setup, coeffs, grading=grading, dt=dt,
                                   time_multiple=time_multiple)

    return factory


@pytest.fixture
def coupled_system(make_system):
    return make_system(n=24, coefficients=(0.1, 0.2, 0.5, -0.1), dt=1.0 / 200)


@pytest.fixture
def output_dir(tmp_path):
    return str(tmp_path / 'results')
