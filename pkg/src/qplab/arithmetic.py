"""Continued fractions, frequency exponents and Liouville-type frequencies.

Frequencies are carried around as sequences of partial quotients
``alpha = [0; a_1, a_2, ...]``; floats only appear when a potential has to be
evaluated.  Convergents use the usual normalisation ``p_0/q_0 = 0/1`` so that
for the golden mean ``q_n`` are the Fibonacci numbers 1, 1, 2, 3, 5, 8, ...
"""
from __future__ import annotations

import json
import math
import sys
from dataclasses import dataclass, field
from decimal import Decimal
from fractions import Fraction
from functools import cached_property
from typing import Iterator, Sequence

import mpmath
import numpy as np

from .errors import ConstructionError, DomainError, InsufficientDataError, PreconditionError

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0

# stop the Gauss map once the remainder is known to worse than this relative accuracy
_REMAINDER_REL_TOL = 1e-3


def _int_to_str(x: int) -> str:
    # huge burst quotients exceed the default int->str digit limit
    if x.bit_length() < 10000 or not hasattr(sys, "set_int_max_str_digits"):
        return str(x)
    old = sys.get_int_max_str_digits()
    sys.set_int_max_str_digits(0)
    try:
        return str(x)
    finally:
        sys.set_int_max_str_digits(old)


def _str_to_int(s: str) -> int:
    if len(s) < 4000 or not hasattr(sys, "set_int_max_str_digits"):
        return int(s)
    old = sys.get_int_max_str_digits()
    sys.set_int_max_str_digits(0)
    try:
        return int(s)
    finally:
        sys.set_int_max_str_digits(old)


def _short(x: int) -> str:
    if x.bit_length() < 64:
        return str(x)
    return f"~2^{x.bit_length() - 1}"


@dataclass(frozen=True, repr=False)
class FrequencyExpansion:
    """Partial quotients of ``alpha`` with lazily computed convergents.

    ``rational`` is set when the expansion terminated because the remainder
    vanished; ``truncated`` when the input precision ran out before the
    requested depth.
    """

    partial_quotients: tuple[int, ...]
    rational: bool = False
    truncated: bool = False
    requested_depth: int | None = None
    label: str = ""

    def __post_init__(self):
        if len(self.partial_quotients) == 0:
            raise DomainError("an expansion needs at least one partial quotient")
        for a in self.partial_quotients:
            if int(a) != a or a < 1:
                raise DomainError(f"partial quotients must be positive integers, got {a!r}")

    def __repr__(self):
        head = ", ".join(_short(a) for a in self.partial_quotients[:12])
        more = ", ..." if self.depth > 12 else ""
        flags = "".join([" rational" if self.rational else "", " truncated" if self.truncated else ""])
        return f"FrequencyExpansion([0; {head}{more}] depth={self.depth}{flags})"

    @property
    def depth(self) -> int:
        return len(self.partial_quotients)

    def denominators(self) -> Iterator[int]:
        """Stream q_0, q_1, ..., q_N without storing them."""
        q_prev, q = 0, 1
        yield q
        for a in self.partial_quotients:
            q_prev, q = q, a * q + q_prev
            yield q

    @cached_property
    def convergents(self) -> tuple[tuple[int, int], ...]:
        """Pairs (p_n, q_n) for n = 0..depth."""
        p_prev, p = 1, 0
        q_prev, q = 0, 1
        out = [(p, q)]
        for a in self.partial_quotients:
            p_prev, p = p, a * p + p_prev
            q_prev, q = q, a * q + q_prev
            out.append((p, q))
        return tuple(out)

    def convergent(self, n: int) -> tuple[int, int]:
        if not 0 <= n <= self.depth:
            raise DomainError(f"convergent index {n} outside 0..{self.depth}")
        p_prev, p = 1, 0
        q_prev, q = 0, 1
        for a in self.partial_quotients[:n]:
            p_prev, p = p, a * p + p_prev
            q_prev, q = q, a * q + q_prev
        return p, q

    def truncate(self, depth: int) -> "FrequencyExpansion":
        if not 1 <= depth <= self.depth:
            raise DomainError(f"cannot truncate depth {self.depth} expansion to {depth}")
        return FrequencyExpansion(tuple(self.partial_quotients[:depth]), rational=False,
                                  truncated=self.truncated, requested_depth=depth,
                                  label=self.label)

    def value(self, tol: float = 1e-40) -> Fraction:
        """Exact rational value of the shortest convergent with error below ``tol``.

        For a rational expansion the full value is returned.
        """
        p_prev, p = 1, 0
        q_prev, q = 0, 1
        for i, a in enumerate(self.partial_quotients):
            p_prev, p = p, a * p + p_prev
            q_prev, q = q, a * q + q_prev
            if not self.rational and i + 1 < self.depth:
                # next denominator is at least q + q_prev
                if 1.0 / (float(q) * float(q + q_prev) if q < 10**150 else math.inf) < tol:
                    return Fraction(p, q)
        return Fraction(p, q)

    @property
    def alpha(self) -> float:
        return float(self.value(1e-40))

    def to_longdouble(self) -> np.longdouble:
        v = self.value(1e-40)
        with mpmath.workdps(40):
            s = mpmath.nstr(mpmath.mpf(v.numerator) / v.denominator, 36)
        return np.longdouble(s)

    def to_mpf(self, dps: int):
        v = self.value(10.0 ** (-2 * dps - 10) if dps < 150 else 0.0)
        with mpmath.workdps(dps):
            return mpmath.mpf(v.numerator) / v.denominator

    # serialisation -------------------------------------------------------
    def to_dict(self, max_digits: int = 2000) -> dict:
        """JSON-ready dict.  Convergents are listed while q_n has at most
        ``max_digits`` decimal digits; the quotients always determine the rest."""
        conv = []
        p_prev, p, q_prev, q = 1, 0, 0, 1
        conv.append((p, q))
        limit_bits = int(max_digits * 3.3219)
        for a in self.partial_quotients:
            p_prev, p = p, a * p + p_prev
            q_prev, q = q, a * q + q_prev
            if q.bit_length() > limit_bits:
                break
            conv.append((p, q))
        return {
            "partial_quotients": [_int_to_str(a) for a in self.partial_quotients],
            "convergents": [[_int_to_str(p), _int_to_str(q)] for p, q in conv],
            "convergents_complete": len(conv) == self.depth + 1,
            "depth": self.depth,
            "rational": self.rational,
            "truncated": self.truncated,
            "requested_depth": self.requested_depth,
            "label": self.label,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FrequencyExpansion":
        return cls(tuple(_str_to_int(str(a)) for a in d["partial_quotients"]),
                   rational=bool(d.get("rational", False)),
                   truncated=bool(d.get("truncated", False)),
                   requested_depth=d.get("requested_depth"),
                   label=d.get("label", ""))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, s: str) -> "FrequencyExpansion":
        return cls.from_dict(json.loads(s))


@dataclass(frozen=True)
class ExponentEstimate:
    values: tuple[float, ...]
    limsup_estimate: float
    liminf_estimate: float
    depth_used: int
    tail: int = 0
    log_domain: bool = False


def _exact_input(alpha) -> tuple[Fraction, Fraction]:
    """Exact value of the input together with an absolute error bound."""
    if isinstance(alpha, Fraction):
        return alpha, Fraction(0)
    if isinstance(alpha, int):
        return Fraction(alpha), Fraction(0)
    if isinstance(alpha, tuple) and len(alpha) == 2:
        return Fraction(int(alpha[0]), int(alpha[1])), Fraction(0)
    if isinstance(alpha, str):
        s = alpha.strip()
        if "/" in s:
            return Fraction(s), Fraction(0)
        d = Decimal(s)
        exp = d.as_tuple().exponent
        return Fraction(d), Fraction(1, 2) * Fraction(10) ** exp
    if isinstance(alpha, mpmath.mpf):
        man, exp = alpha.man_exp if hasattr(alpha, "man_exp") else (alpha._mpf_[1], alpha._mpf_[2])
        sign = -1 if alpha < 0 else 1
        val = Fraction(sign * int(man)) * (Fraction(2) ** int(exp))
        prec = mpmath.mp.prec
        return val, abs(val) * Fraction(1, 2 ** prec)
    x = float(alpha)
    val = Fraction(x)
    return val, abs(val) * Fraction(1, 2 ** 53)


def cf_expand(alpha, depth: int, label: str = "") -> FrequencyExpansion:
    """Gauss-map expansion of ``alpha`` in (0,1).

    Accepts floats, ``Fraction``, decimal strings and ``mpmath.mpf`` values.
    The remainder is propagated exactly together with a rigorous bound on its
    uncertainty (inherited from the input precision).  The expansion stops
    early and is flagged ``truncated`` when the bound exceeds 1e-3 of the
    remainder, and is flagged ``rational`` when the remainder cannot be
    distinguished from zero.
    """
    if depth < 1:
        raise DomainError("depth must be >= 1")
    x, err = _exact_input(alpha)
    if not 0 < x < 1:
        raise DomainError(f"alpha must lie in (0,1), got {float(x)!r}")
    quotients: list[int] = []
    rational = truncated = False
    while len(quotients) < depth:
        if err > 0 and err >= x:
            truncated = True
            break
        y = 1 / x
        err_y = err / (x * (x - err)) if err > 0 else Fraction(0)
        k = round(y)
        if abs(y - k) <= err_y:
            quotients.append(int(k))
            rational = True
            break
        a = math.floor(y)
        x = y - a
        err = err_y
        if err > _REMAINDER_REL_TOL * x:
            # the current quotient is still certain; the next one is not
            quotients.append(int(a))
            truncated = len(quotients) < depth
            break
        quotients.append(int(a))
    if not quotients:
        raise PreconditionError("input precision too low to determine a single quotient")
    return FrequencyExpansion(tuple(quotients), rational=rational,
                              truncated=truncated and not rational,
                              requested_depth=depth, label=label)


def golden_expansion(depth: int = 40) -> FrequencyExpansion:
    return FrequencyExpansion((1,) * depth, requested_depth=depth, label="golden")


def silver_expansion(depth: int = 40) -> FrequencyExpansion:
    return FrequencyExpansion((2,) * depth, requested_depth=depth, label="silver")


def _tail_size(n_values: int, tail: int | None) -> int:
    if tail is None:
        tail = math.ceil(n_values / 2)
    return max(1, min(int(tail), n_values))


def _log_ratio(num: int, den: int) -> float:
    """log(num)/den for possibly huge integers."""
    ln = math.log(num)
    if den.bit_length() < 1000:
        return ln / den
    if ln <= 0:
        return 0.0
    return math.exp(math.log(ln) - math.log(den))


def beta_exponent(exp: FrequencyExpansion, tail: int | None = None) -> ExponentEstimate:
    """Samples log(q_{n+1})/q_n and tail-window extrema.

    Uses n = 1..depth-1.  By default the window is the last ceil(depth/2)
    samples.
    """
    if exp.depth < 3:
        raise InsufficientDataError("beta_exponent needs depth >= 3")
    qs = exp.denominators()
    next(qs)  # q_0
    q_prev = next(qs)
    values = []
    for q in qs:
        values.append(_log_ratio(q, q_prev))
        q_prev = q
    values = values[: exp.depth - 1]
    w = _tail_size(len(values), tail if tail is not None else math.ceil(exp.depth / 2))
    window = values[-w:]
    return ExponentEstimate(tuple(values), max(window), min(window), exp.depth, w)


def k_exponents(exp: FrequencyExpansion, tail: int | None = None) -> tuple[ExponentEstimate, ExponentEstimate]:
    """Estimates of (K_*, K^*) from running geometric means of the quotients.

    ``values`` are the running means of log a_i (log domain); both returned
    records carry the exponentiated window extrema.  Read K_* off the first
    record's ``liminf_estimate`` and K^* off the second's ``limsup_estimate``
    (``inf`` on overflow).
    """
    if exp.depth < 3:
        raise InsufficientDataError("k_exponents needs depth >= 3")
    logs = np.array([math.log(a) for a in exp.partial_quotients], dtype=float)
    running = np.cumsum(logs) / np.arange(1, len(logs) + 1)
    w = _tail_size(len(running), tail if tail is not None else math.ceil(exp.depth / 2))
    window = running[-w:]

    def _exp(x):
        return math.exp(x) if x < 709 else math.inf

    vals = tuple(float(v) for v in running)
    lo, hi = _exp(float(window.min())), _exp(float(window.max()))
    k_low = ExponentEstimate(vals, hi, lo, exp.depth, w, log_domain=True)
    k_high = ExponentEstimate(vals, hi, lo, exp.depth, w, log_domain=True)
    return k_low, k_high


def _round_exp(x: float, max_exponent: float) -> int:
    if x > max_exponent:
        raise ConstructionError(f"burst exponent {x:.4g} exceeds the feasible limit {max_exponent:.4g}")
    if x < 700:
        return max(1, int(round(math.exp(x))))
    dps = int(x / math.log(10)) + 30
    with mpmath.workdps(dps):
        return int(mpmath.nint(mpmath.exp(mpmath.mpf(x))))


def construct_liouville_alpha(beta0: float, n0: int = 5, bursts: int = 1,
                              depth: int | None = None,
                              max_exponent: float = 2.0e5) -> FrequencyExpansion:
    """Frequency with prescribed Liouville exponent ``beta0`` and K_* = e^beta0.

    ``a_i = 1`` for i <= n0.  With n_0 = n0 and
    ``n_k = q_{n_0} + ... + q_{n_{k-1}}`` (k >= 1) the quotient at index
    ``n_k + 1`` is ``round(e^{beta0 q_{n_k}})`` and all others are 1.  Every
    q_{n_j} is the true denominator of the constructed number (it includes
    the earlier bursts), so that the product of the first n_k quotients is
    e^{beta0 n_k}.

    The expansion runs through index n_{bursts}, the last index before the
    next burst would be placed, unless ``depth`` asks for fewer.
    """
    if not beta0 > 0:
        raise PreconditionError("beta0 must be positive")
    if n0 < 5:
        raise PreconditionError("n0 must be >= 5")
    if bursts < 1:
        raise PreconditionError("at least one burst is required")
    quotients = [1] * n0
    q_prev, q = 0, 1
    for a in quotients:
        q_prev, q = q, a * q + q_prev
    # q == q_{n0}
    n_k = n0
    n_next = 0
    for k in range(bursts):
        try:
            a = _round_exp(beta0 * float(q) if q.bit_length() < 1000 else math.inf, max_exponent)
        except ConstructionError as exc:
            raise ConstructionError(
                f"burst {k + 1} at index {n_k + 1} needs exponent beta0*q = {beta0:g}*{_short(q)}; "
                f"only {k} burst(s) are feasible (max feasible depth {len(quotients)})") from exc
        n_next += q  # n_{k+1} = n_k-sum plus q_{n_k}
        quotients.append(a)
        q_prev, q = q, a * q + q_prev
        while len(quotients) < n_next:
            quotients.append(1)
            q_prev, q = q, q + q_prev
        n_k = n_next
    if depth is not None:
        if depth < 1:
            raise PreconditionError("depth must be >= 1")
        quotients = quotients[:depth]
    return FrequencyExpansion(tuple(quotients), requested_depth=depth or len(quotients),
                              label=f"liouville:beta={beta0:g},n0={n0},bursts={bursts}")


@dataclass(frozen=True)
class DiophantineReport:
    ok: bool
    worst_m: int
    margin: float
    m_max: int


def _frac_positions(theta, alpha_ld, m):
    x = np.mod(np.longdouble(theta) + m.astype(np.longdouble) * alpha_ld, np.longdouble(1))
    return np.minimum(x, 1 - x)


def is_alpha_diophantine_phase(theta: float, exp: FrequencyExpansion, gamma: float,
                               tau: float, m_max: int) -> DiophantineReport:
    """Scan ||theta + m alpha|| >= gamma/(|m|+1)^tau over |m| <= m_max.

    Returns the minimising m (smallest margin) and that margin.
    """
    if m_max < 1:
        raise PreconditionError("m_max must be >= 1")
    if not gamma > 0 or not tau > 1:
        raise DomainError("need gamma > 0 and tau > 1")
    alpha_ld = exp.to_longdouble()
    m = np.arange(-m_max, m_max + 1, dtype=np.int64)
    dist = _frac_positions(theta, alpha_ld, m).astype(float)
    margin = dist - gamma / (np.abs(m) + 1.0) ** tau
    i = int(np.argmin(margin))
    return DiophantineReport(bool(margin[i] >= 0), int(m[i]), float(margin[i]), int(m_max))


def parse_frequency(spec: str, depth: int = 40) -> FrequencyExpansion:
    """Named presets: golden, silver, liouville:beta=x[,n0=..,bursts=..], cf:[a1,...],
    a rational ``p/q`` or a decimal literal."""
    s = spec.strip()
    low = s.lower()
    if low == "golden":
        return golden_expansion(depth)
    if low == "silver":
        return silver_expansion(depth)
    if low.startswith("liouville"):
        params = {"beta": 1.0, "n0": 5, "bursts": 1}
        if ":" in s:
            for item in s.split(":", 1)[1].split(","):
                if not item.strip():
                    continue
                if "=" not in item:
                    raise PreconditionError(f"bad liouville parameter {item!r}")
                key, val = (t.strip() for t in item.split("=", 1))
                if key not in params:
                    raise PreconditionError(f"unknown liouville parameter {key!r}")
                params[key] = float(val) if key == "beta" else int(val)
        return construct_liouville_alpha(params["beta"], params["n0"], params["bursts"])
    if low.startswith("cf:"):
        body = s[3:].strip().strip("[]")
        qs = tuple(int(t) for t in body.split(",") if t.strip())
        return FrequencyExpansion(qs, requested_depth=len(qs), label=s)
    if "/" in s:
        return cf_expand(Fraction(s), depth, label=s)
    try:
        return cf_expand(s, depth, label=s)
    except (ArithmeticError, ValueError) as exc:
        raise PreconditionError(f"cannot parse frequency {spec!r}") from exc


def expansion_from_float_sequence(quotients: Sequence[int]) -> FrequencyExpansion:
    return FrequencyExpansion(tuple(int(a) for a in quotients), requested_depth=len(quotients))
