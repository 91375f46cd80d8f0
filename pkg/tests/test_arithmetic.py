import math
from fractions import Fraction

import mpmath
import numpy as np
import pytest
from hypothesis import given, strategies as st

from qplab.arithmetic import (FrequencyExpansion, beta_exponent, cf_expand, construct_liouville_alpha,
                              expansion_from_float_sequence, golden_expansion, is_alpha_diophantine_phase,
                              k_exponents, parse_frequency, silver_expansion)
from qplab.errors import ConstructionError, DomainError, InsufficientDataError, PreconditionError

GOLD = (math.sqrt(5) - 1) / 2


def fibonacci(n):
    a, b = 0, 1
    for _ in range(n):
        a, b = b, a + b
    return a


# cf_expand -----------------------------------------------------------------------

def test_golden_float_gives_all_ones():
    e = cf_expand(GOLD, 10)
    assert e.partial_quotients == (1,) * 10
    assert not e.rational and not e.truncated


def test_sqrt2_minus_one_gives_all_twos():
    e = cf_expand(math.sqrt(2) - 1, 10)
    assert e.partial_quotients == (2,) * 10


def test_two_sevenths_is_rational():
    e = cf_expand(Fraction(2, 7), 20)
    assert e.partial_quotients == (3, 2)
    assert e.rational
    assert e.value() == Fraction(2, 7)


@pytest.mark.parametrize("inp", ["2/7", (2, 7), "0.2857142857142857142857142857142857"])
def test_input_forms(inp):
    e = cf_expand(inp, 8)
    assert e.partial_quotients[:2] == (3, 2)


def test_float_input_runs_out_of_precision():
    e = cf_expand(GOLD, 200)
    assert e.truncated
    # every reported quotient must be genuine
    assert e.partial_quotients == (1,) * e.depth
    assert 20 < e.depth < 45


def test_mpf_input_gives_more_quotients():
    with mpmath.workdps(60):
        x = (mpmath.sqrt(5) - 1) / 2
        e = cf_expand(x, 200)
    assert e.depth > 100 and set(e.partial_quotients) == {1}


@pytest.mark.parametrize("bad", [0.0, 1.0, -0.2, 1.5])
def test_domain(bad):
    with pytest.raises(DomainError):
        cf_expand(bad, 5)


@given(st.fractions(min_value=Fraction(1, 10 ** 6), max_value=Fraction(10 ** 6 - 1, 10 ** 6)).filter(
    lambda x: 0 < x < 1))
def test_rational_roundtrip(x):
    e = cf_expand(x, 100)
    assert e.rational
    assert e.value() == x


@given(st.lists(st.integers(1, 50), min_size=2, max_size=25))
def test_convergent_invariants(quotients):
    e = FrequencyExpansion(tuple(quotients))
    conv = e.convergents
    x = e.value(0.0)  # exact value of the finite expansion, no early stop
    assert conv[0] == (0, 1)
    for n in range(1, len(conv)):
        p, q = conv[n]
        assert math.gcd(p, q) == 1
        if n >= 2:
            a = quotients[n - 1]
            assert p == a * conv[n - 1][0] + conv[n - 2][0]
            assert q == a * conv[n - 1][1] + conv[n - 2][1]
    for n in range(len(conv) - 1):
        p, q = conv[n]
        q1 = conv[n + 1][1]
        if n + 1 < len(conv) - 1:
            assert abs(x - Fraction(p, q)) < Fraction(1, q * q1)
    assert list(e.denominators()) == [q for _, q in conv]
    assert e.convergent(len(conv) - 1) == conv[-1]


def test_golden_convergents_are_fibonacci():
    e = golden_expansion(20)
    assert [q for _, q in e.convergents] == [fibonacci(n + 1) for n in range(21)]


def test_json_roundtrip():
    e = cf_expand("0.123456789", 12, label="x")
    back = FrequencyExpansion.from_json(e.to_json())
    assert back == e


def test_json_with_huge_quotients():
    e = construct_liouville_alpha(1.0, 5, bursts=2)
    d = e.to_dict()
    assert not d["convergents_complete"]
    back = FrequencyExpansion.from_dict(d)
    assert back.partial_quotients == e.partial_quotients
    assert "~2^" in repr(e)


def test_truncate_and_errors():
    e = golden_expansion(10)
    assert e.truncate(4).partial_quotients == (1, 1, 1, 1)
    with pytest.raises(DomainError):
        e.truncate(11)
    with pytest.raises(DomainError):
        e.convergent(11)
    with pytest.raises(DomainError):
        FrequencyExpansion((1, 0))


def test_precision_views():
    e = golden_expansion(60)
    assert abs(float(e.to_longdouble()) - GOLD) < 1e-16
    with mpmath.workdps(40):
        assert abs(e.to_mpf(30) - (mpmath.sqrt(5) - 1) / 2) < mpmath.mpf(10) ** -24


# exponents -----------------------------------------------------------------------

def test_golden_beta_tends_to_zero():
    b20 = beta_exponent(golden_expansion(20))
    b60 = beta_exponent(golden_expansion(60))
    assert b60.limsup_estimate < b20.limsup_estimate < 0.1
    assert b60.liminf_estimate <= b60.limsup_estimate


def test_linear_quotients_beta_zero_and_K_diverges():
    small = expansion_from_float_sequence(range(1, 21))
    big = expansion_from_float_sequence(range(1, 81))
    assert beta_exponent(big).limsup_estimate < beta_exponent(small).limsup_estimate
    assert beta_exponent(big).limsup_estimate < 0.05
    k20 = k_exponents(small)[0].liminf_estimate
    k80 = k_exponents(big)[0].liminf_estimate
    assert k80 > k20 > 3
    # geometric mean of 1..n is (n!)^(1/n)
    assert k_exponents(big)[0].values[-1] == pytest.approx(math.lgamma(81) / 80)


def test_all_ones_K_is_one():
    lo, hi = k_exponents(golden_expansion(30))
    assert lo.liminf_estimate == 1.0 and hi.limsup_estimate == 1.0


def test_short_expansions_rejected():
    with pytest.raises(InsufficientDataError):
        beta_exponent(golden_expansion(2))
    with pytest.raises(InsufficientDataError):
        k_exponents(golden_expansion(2))


# Liouville construction ------------------------------------------------------------

def test_first_burst_value():
    e = construct_liouville_alpha(1.0, 5, bursts=1)
    # q_5 = 8 for all-ones quotients
    assert e.convergent(5)[1] == 8
    assert e.partial_quotients[5] == round(math.exp(8)) == 2981
    assert e.partial_quotients[:5] == (1,) * 5


def test_bursts_zero_rejected():
    with pytest.raises(PreconditionError):
        construct_liouville_alpha(1.0, 5, bursts=0)


def test_infeasible_third_burst():
    with pytest.raises(ConstructionError):
        construct_liouville_alpha(1.0, 5, bursts=3)


def test_burst_positions_follow_denominators():
    e = construct_liouville_alpha(1.0, 5, bursts=2)
    big = [i + 1 for i, a in enumerate(e.partial_quotients) if a > 1]
    q5 = e.convergent(5)[1]
    n1 = q5
    q_n1 = e.convergent(n1)[1]
    assert big == [6, n1 + 1]
    assert e.depth == n1 + q_n1
    # burst quotient is round(e^{beta q_{n_1}})
    a = e.partial_quotients[n1]
    assert abs(math.log(a) - float(q_n1)) < 1e-9


def test_liouville_beta_consistency():
    e = construct_liouville_alpha(1.0, 5, bursts=2)
    # samples log q_{n+1}/q_n at the burst index reproduce beta0
    q = [x for _, x in zip(range(10), e.denominators())]
    assert math.log(q[9]) / q[8] == pytest.approx(1.0, rel=0.01)
    # a window that covers the bursts
    assert beta_exponent(e.truncate(16)).limsup_estimate == pytest.approx(1.0, rel=0.1)


def test_liouville_K_lower_is_e_beta():
    e = construct_liouville_alpha(1.0, 5, bursts=2)
    k = k_exponents(e)[0].liminf_estimate
    assert k == pytest.approx(math.e, rel=0.01)


# Diophantine phases ---------------------------------------------------------------------

def test_zero_phase_fails_at_m0():
    r = is_alpha_diophantine_phase(0.0, golden_expansion(), 0.1, 1.5, 1000)
    assert not r.ok and r.worst_m == 0


def _scan_fraction(theta, alpha, gamma, tau, m_max):
    best = None
    for m in range(-m_max, m_max + 1):
        x = (theta + m * alpha) % 1
        d = min(x, 1 - x)
        marg = float(d) - gamma / (abs(m) + 1) ** tau
        if best is None or marg < best[1]:
            best = (m, marg)
    return best


def test_half_phase_matches_exact_scan():
    e = golden_expansion(60)
    r = is_alpha_diophantine_phase(0.5, e, 0.1, 1.5, 2000)
    m, marg = _scan_fraction(Fraction(1, 2), e.value(), 0.1, 1.5, 2000)
    assert r.worst_m == m
    assert r.margin == pytest.approx(marg, abs=1e-12)
    assert r.ok == (marg >= 0)


def test_near_resonant_phase_is_rejected():
    e = golden_expansion(60)
    theta = (-7 * GOLD) % 1 + 1e-6
    r = is_alpha_diophantine_phase(theta, e, 0.1, 1.5, 100)
    assert not r.ok and r.worst_m == 7


def test_sturmian_phase_is_diophantine():
    e = golden_expansion(60)
    r = is_alpha_diophantine_phase(0.5 + GOLD / 2, e, 0.1, 1.5, 10_000)
    assert r.ok


# parsing --------------------------------------------------------------------------------

def test_parse_presets():
    assert parse_frequency("golden", 5).partial_quotients == (1,) * 5
    assert parse_frequency("silver", 5) == silver_expansion(5)
    assert parse_frequency("cf:[3,2]").partial_quotients == (3, 2)
    assert parse_frequency("2/7").rational
    assert parse_frequency("liouville:beta=1").partial_quotients[5] == 2981
    with pytest.raises(PreconditionError):
        parse_frequency("liouville:gamma=2")
    with pytest.raises(PreconditionError):
        parse_frequency("nonsense")
