import math

import numpy as np
import pytest
from scipy.integrate import quad
from scipy.special import jv

from qplab.arithmetic import golden_expansion
from qplab.dynamics import (BOUNDARY_TOL, MomentSeries, boundary_certificate, box_half_width, evolution_setup,
                            evolve_moments, transport_exponents)
from qplab.errors import DomainError, InsufficientDataError, PreconditionError
from qplab.potential import almost_mathieu, free


def abel_bessel_moment(p, T, n_max=200):
    """Abel average of sum |n|^p J_n(2t)^2 for the free walk, by quadrature."""
    tot = 0.0
    for n in range(1, n_max + 1):
        f = lambda t: (2 / T) * math.exp(-2 * t / T) * jv(n, 2 * t) ** 2
        val, _ = quad(f, 0, 40 * T, limit=4000, epsabs=1e-15, epsrel=1e-13)
        tot += 2 * n ** p * val
    return tot


def test_small_time_limit():
    st = evolution_setup(free(), 1.0)
    m = evolve_moments(st, 2.0, [1e-6, 1e-4])
    assert m.values[0] < 1e-10 and m.values[1] < 1e-6


def test_free_second_moment_is_T_squared():
    T = [1.0, 3.0, 10.0, 30.0]
    # at T = T_max the Abel weight beyond the box is ~e^{-16}; give it room
    st = evolution_setup(free(), 60.0)
    m = evolve_moments(st, 2.0, T)
    assert np.allclose(np.array(m.values) / np.square(T), 1.0, rtol=1e-9)


@pytest.mark.parametrize("T", [0.5, 2.0, 5.0])
def test_free_first_moment_bessel_oracle(T):
    st = evolution_setup(free(), 10.0)
    got = evolve_moments(st, 1.0, [T]).values[0]
    assert got == pytest.approx(abel_bessel_moment(1.0, T), rel=1e-10)


def test_unitarity_and_orthonormality():
    st = evolution_setup(almost_mathieu(1.0, golden_expansion(), 0.2), 10.0)
    assert st.orthonormality_defect() < 1e-10
    assert st.normalization_defect([0.0, 1.3, 7.7]) < 1e-10
    assert abs(st.amplitudes(0.0)[st.L]) == pytest.approx(1.0, abs=1e-12)


def test_jensen_ordering_of_moments():
    st = evolution_setup(almost_mathieu(1.0, golden_expansion(), 0.2), 20.0)
    T = [2.0, 5.0, 20.0]
    m1 = np.array(evolve_moments(st, 1.0, T).values)
    m2 = np.array(evolve_moments(st, 2.0, T).values)
    assert np.all(m1 ** 2 <= m2 * (1 + 1e-12))


def test_exponents_free_ballistic():
    T = np.geomspace(0.5, 50, 12)
    ms = evolve_moments(evolution_setup(free(), 50.0), 2.0, T)
    assert ms.values[-1] == pytest.approx(2500.0, rel=1e-6)
    te = transport_exponents(ms)
    bp, bm = te
    assert bm <= bp
    assert bp == pytest.approx(1.0, abs=0.02) and bm == pytest.approx(1.0, abs=0.05)


def test_exponents_of_constant_series():
    T = np.geomspace(1, 1000, 10)
    te = transport_exponents(MomentSeries(2.0, tuple(T), tuple(np.full(10, 3.0)), 0))
    assert te.beta_plus == pytest.approx(0.0, abs=1e-12)
    assert te.beta_minus == pytest.approx(0.0, abs=1e-12)


def test_exponents_need_data():
    with pytest.raises(InsufficientDataError):
        transport_exponents(MomentSeries(2.0, (1.0, 2.0, 3.0), (1.0, 1.0, 1.0), 0))


def test_strongly_localized_is_slow():
    src = almost_mathieu(8.0, golden_expansion(), 0.1)
    T = np.geomspace(1, 200, 10)
    ms = evolve_moments(evolution_setup(src, 200.0, L=300), 2.0, T)
    assert transport_exponents(ms).beta_plus <= 0.2
    assert max(ms.boundary_weight) < BOUNDARY_TOL


def test_supercritical_moment_stays_bounded():
    src = almost_mathieu(4.0, golden_expansion(), 0.0)
    T = [10.0, 100.0, 1000.0]
    v = evolve_moments(evolution_setup(src, 1000.0, L=400), 2.0, T).values
    assert max(v) < 10.0


def test_box_doubling_certificate():
    src = almost_mathieu(2.5, golden_expansion(), 0.3)
    assert boundary_certificate(src, 2.0, [5.0, 20.0, 50.0], L=250) < 1e-4


def test_enlarge_box_errors():
    src = free()
    st = evolution_setup(src, 20.0, L=40)
    with pytest.raises(PreconditionError, match="enlarge"):
        evolve_moments(st, 2.0, [20.0])
    with pytest.raises(PreconditionError):
        evolve_moments(st, 2.0, [21.0])
    with pytest.raises(PreconditionError):
        evolution_setup(src, 1000.0)
    with pytest.raises(DomainError):
        evolve_moments(st, 0.0, [1.0])
    assert box_half_width(src, 10.0) == 2 * 8 * 10 + 64
