import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st

from qplab.arithmetic import cf_expand, construct_liouville_alpha, golden_expansion
from qplab.cocycle import (Mat2, TransferChain, conjugation_suite, hs_norm, hyperbolic_conjugator,
                           iterated_power, log_norms, lyapunov_exponent, norm_bound_Lambda, one_step, op_norm,
                           perturbation_suite, power_branch_gap, power_suite, product_perturbation_gap,
                           random_sl2, random_traces, sl2_power, sl2_power_coefficients, telescoping_defect,
                           traces, transfer_matrices, transfer_product)
from qplab.errors import DomainError, NumericError, PreconditionError
from qplab.potential import almost_mathieu, free, periodic
from qplab.spectrum import auto_energies

GOLD = (math.sqrt(5) - 1) / 2


def naive_product(v, E):
    A = np.eye(2)
    for x in v:
        A = np.array([[E - x, -1.0], [1.0, 0.0]]) @ A
    return A


# Mat2 ----------------------------------------------------------------------------------

def test_mat2_algebra():
    A = Mat2(2.0, 1.0, 1.0, 1.0)
    assert A.det == 1.0 and A.trace == 3.0
    assert np.allclose((A @ A.inv()).array, np.eye(2))
    assert A.hs_norm() == pytest.approx(math.sqrt(7))
    assert A.op_norm() == pytest.approx(float(op_norm(A)))
    assert Mat2.unimodular(2.0, 1.0, 1.0, 1.0 + 1e-13).det == pytest.approx(1.0, abs=1e-15)
    with pytest.raises(DomainError):
        Mat2.unimodular(2.0, 1.0, 1.0, 1.1)


@given(st.lists(st.floats(-5, 5), min_size=4, max_size=4))
def test_op_norm_closed_form(x):
    a = np.array(x).reshape(2, 2)
    assert float(op_norm(a)) == pytest.approx(np.linalg.norm(a, 2), rel=1e-9, abs=1e-12)


# transfer products --------------------------------------------------------------------------

def test_identity_at_zero():
    ch = TransferChain(free(), 0.3)
    assert transfer_product(ch, 0).array.tolist() == np.eye(2).tolist()


@pytest.mark.parametrize("t", [0.3, 1.1, 2.5])
def test_free_trace_is_chebyshev(t):
    E = 2 * math.cos(t)
    for n in (1, 5, 8, 33):
        assert traces(free(), [E], n)[0] == pytest.approx(2 * math.cos(n * t), abs=1e-10)


def test_matches_naive_product_and_det():
    s = almost_mathieu(1.5, golden_expansion(), 0.2)
    E = 0.7
    for n in (1, 7, 40, 100):
        M, ls = transfer_matrices(s, [E], n, 3)
        A = M[0] * math.exp(ls[0])
        ref = naive_product(s.segment(4, n), E)
        assert np.allclose(A, ref, rtol=1e-10, atol=1e-10 * np.abs(ref).max())
    # determinant check where the product is representable (subcritical, in band)
    ch = TransferChain(almost_mathieu(0.4, golden_expansion(), 0.2), 0.1)
    for n in (10, 1000, 5000):
        M, ls = ch.log_product(n)
        det = M[0, 0] * M[1, 1] - M[0, 1] * M[1, 0]
        assert abs(math.expm1(math.log(det) + 2 * ls)) <= 1e-8 * max(1, n / 1000)


@given(st.integers(0, 300), st.integers(0, 300))
def test_cocycle_identity(m, n):
    s = almost_mathieu(1.2, golden_expansion(), 0.1)
    ch = TransferChain(s, -0.4)
    lhs = ch.product(m + n)
    rhs = ch.product(n, shift=m) @ ch.product(m)
    scale = max(1.0, lhs.hs_norm())
    assert (lhs - rhs).hs_norm() <= 1e-9 * scale


def test_negative_n_is_inverse():
    s = almost_mathieu(1.0, golden_expansion(), 0.3)
    ch = TransferChain(s, 0.2)
    for m in (1, 5, 60):
        P = ch.product(-m) @ ch.product(m, shift=-m)
        assert np.allclose(P.array, np.eye(2), atol=1e-9)


def test_reversed_chain_uses_reflected_potential():
    s = almost_mathieu(1.0, golden_expansion(), 0.3)
    ch = TransferChain(s, 0.5, direction="reversed")
    A = ch.product(6).array
    ref = naive_product([s(-j - 1) for j in range(1, 7)], 0.5)
    assert np.allclose(A, ref, atol=1e-12)


def test_huge_products_stay_in_log_form():
    s = almost_mathieu(3.0, golden_expansion(), 0.0)
    ch = TransferChain(s, 0.1)
    assert ch.norm(5000) > 709
    with pytest.raises(NumericError):
        ch.product(5000)
    assert np.isinf(traces(s, [0.1], 5000)[0])


# Lyapunov --------------------------------------------------------------------------------------

def test_free_lyapunov_outside_band():
    L = lyapunov_exponent(free(), 10.0, 2000, 4)
    assert L.value == pytest.approx(math.log((10 + math.sqrt(96)) / 2), abs=2 / 2000)


def test_free_lyapunov_in_band_vanishes():
    n = 4000
    for E in (0.0, 1.3, -1.9):
        L = lyapunov_exponent(free(), E, n, 4)
        assert abs(L.value) <= 2 / n + 3 * L.stderr + math.log(n) / n


@pytest.mark.parametrize("lam", [2.0, 3.0])
def test_amo_lyapunov_is_log_lambda(lam):
    s = almost_mathieu(lam, golden_expansion(), 0.0)
    L = lyapunov_exponent(s, 0.3, 4000, 16)
    assert L.value == pytest.approx(math.log(lam), rel=0.05)


def test_lambda_bound():
    f = free()
    E = np.linspace(-1.8, 1.8, 9)
    l1 = norm_bound_Lambda(f, E, 200, 50).Lambda
    l2 = norm_bound_Lambda(f, E, 1600, 400).Lambda
    assert 0 <= l2 < l1 < 0.1
    s = almost_mathieu(2.0, golden_expansion(), 0.0)
    r = norm_bound_Lambda(s, auto_energies(s, 6), 800, 200)
    assert math.log(2) - 0.02 <= r.Lambda <= math.log(2) + 0.1
    with pytest.raises(PreconditionError):
        norm_bound_Lambda(f, E, 10, 10)


# powers ----------------------------------------------------------------------------------------

def test_power_trivial_cases():
    assert sl2_power(Mat2.identity(), 13).array.tolist() == np.eye(2).tolist()
    P = sl2_power(Mat2(1.0, 1.0, 0.0, 1.0), 7)
    assert P.array.tolist() == [[1.0, 7.0], [0.0, 1.0]]
    P = sl2_power(Mat2(-1.0, 1.0, 0.0, -1.0), 3)
    assert np.allclose(P.array, iterated_power(np.array([[-1.0, 1.0], [0.0, -1.0]]), 3))


def test_power_coefficients_small_k():
    A = Mat2(2.0, 1.0, 1.0, 1.0)
    assert sl2_power_coefficients(A, 0) == (0.0, 1.0)
    assert sl2_power_coefficients(A, 1) == (1.0, 1.5)


@given(st.floats(0.05, 3.0), st.integers(1, 12))
def test_elliptic_coefficients(psi, k):
    if abs(k * psi) > math.pi / 2:
        return
    c, s = math.cos(psi), math.sin(psi)
    R = Mat2(c, -s, s, c)
    sk, ck = sl2_power_coefficients(R, k)
    assert sk == pytest.approx(math.sin(k * psi) / math.sin(psi), rel=1e-10, abs=1e-12)
    assert ck == pytest.approx(math.cos(k * psi), rel=1e-10, abs=1e-12)


def test_random_hyperbolic_power():
    rng = np.random.default_rng(3)
    A = random_sl2(rng, random_traces(rng, 50, "hyperbolic"))
    P = sl2_power(A, 20)
    ref = iterated_power(A, 20)
    assert np.max(hs_norm(P - ref) / hs_norm(ref)) <= 1e-9


def test_large_and_negative_powers():
    rng = np.random.default_rng(4)
    A = random_sl2(rng, random_traces(rng, 20, "elliptic"))
    P = sl2_power(A, 300)
    ref = iterated_power(A, 300)
    assert np.max(hs_norm(P - ref) / hs_norm(ref)) <= 1e-8
    inv = sl2_power(A, -5)
    assert np.allclose(inv @ sl2_power(A, 5), np.eye(2), atol=1e-9)
    with pytest.raises(DomainError):
        sl2_power(np.array([[2.0, 0.0], [0.0, 2.0]]), 3)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_power_overflow():
    with pytest.raises(NumericError):
        sl2_power(Mat2(1e3, 0.0, 0.0, 1e-3), 200)


def test_parabolic_branch_gap_scales():
    for d in (1e-11, 1e-9):
        A = Mat2(1.0 + d, 1.0, d, 1.0)  # det 1, trace 2 + d
        k = 40
        gap = power_branch_gap(A, k)
        assert gap <= (k * k - 1) * d / 6 * 2 + 1e-12


# conjugation ---------------------------------------------------------------------------------------

def test_diagonal_conjugator():
    c = hyperbolic_conjugator(Mat2(3.0, 0.0, 0.0, 1 / 3))
    assert np.allclose(np.abs(c.B.array), np.eye(2))
    assert c.bound == pytest.approx(math.sqrt(3) / math.sqrt(4 / 3))
    assert c.holds and c.residual < 1e-15


def test_rotation_rejected():
    c, s = math.cos(math.pi / 3), math.sin(math.pi / 3)
    with pytest.raises(DomainError):
        hyperbolic_conjugator(Mat2(c, -s, s, c))


def test_conjugator_reconstruction():
    rng = np.random.default_rng(0)
    G = random_sl2(rng, random_traces(rng, 200, "hyperbolic"))
    for g in G:
        c = hyperbolic_conjugator(g)
        assert c.residual <= 1e-9
        assert abs(abs(c.B.det) - 1) < 1e-12


def _counterexample(t=5.0, th=0.2):
    rho = (t + math.sqrt(t * t - 4)) / 2
    B = np.column_stack([[1.0, 0.0], [math.cos(th), math.sin(th)]]) / math.sqrt(math.sin(th))
    return B @ np.diag([rho, 1 / rho]) @ np.linalg.inv(B)


def test_conjugator_bound_fails_for_nearly_parallel_eigenvectors():
    # for trace 5 and nearly parallel eigenvectors ||B|| / bound tends to
    # sqrt(2) ((t-2)/(t+2))^(1/4) > 1
    c = hyperbolic_conjugator(_counterexample(5.0, 1e-3))
    limit = math.sqrt(2) * ((5 - 2) / (5 + 2)) ** 0.25
    assert c.norm_B / c.bound == pytest.approx(limit, rel=1e-3)
    assert not c.holds


def test_conjugator_bound_with_sqrt2_constant():
    r = conjugation_suite(2000, seed=11, constant=math.sqrt(2))
    assert r.passed and r.extra["residual_violations"] == 0


def test_conjugator_bound_holds_below_ten_thirds():
    for t in np.linspace(2.05, 10 / 3, 12):
        for th in (1e-3, 0.1, 0.7, 1.5):
            assert hyperbolic_conjugator(_counterexample(t, th)).holds


# perturbation -------------------------------------------------------------------------------------

def test_zero_perturbation():
    g = np.array([[0.5, -1.0], [1.0, 0.0]])
    r = product_perturbation_gap(g, np.zeros((10, 2, 2)))
    assert r.actual == 0.0 and r.holds


def test_elliptic_perturbation():
    rng = np.random.default_rng(1)
    c, s = math.cos(0.4), math.sin(0.4)
    g = np.array([[c, -s], [s, c]])
    D = rng.uniform(-1, 1, (100, 2, 2))
    D *= 1e-6 / hs_norm(D).max()
    r = product_perturbation_gap(g, D, 100)
    assert r.holds and r.actual > 0


def test_perturbation_precondition():
    g = np.eye(2)
    D = np.zeros((10, 2, 2))
    D[0, 0, 0] = 0.6 / (10 * math.sqrt(2))  # N M delta = 0.6 with M = ||I||_HS
    with pytest.raises(PreconditionError):
        product_perturbation_gap(g, D, 10)


def test_suites_small():
    assert power_suite(600, seed=2).passed
    assert perturbation_suite(60, seed=2).passed


# telescoping ---------------------------------------------------------------------------------------

def test_periodic_source_has_no_telescoping_defect():
    s = almost_mathieu(1.0, cf_expand(Fraction(3, 8), 5), 0.1)
    rep = telescoping_defect(s, 0.4, 8, 5)
    assert all(r.norm_delta == 0.0 for r in rep.rows)
    assert rep.rows[0].i == 1


def test_liouville_telescoping_bound():
    a = construct_liouville_alpha(1.0, 5, bursts=1)
    s = almost_mathieu(1.0, a, 0.2)
    rep = telescoping_defect(s, 0.3, 8, 6)
    assert rep.rows[0].norm_delta == 0.0
    assert rep.holds
    assert any(r.norm_delta > 0 for r in rep.rows[1:])
