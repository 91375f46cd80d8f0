"""Potential sequences V(n) and their repetition profiles.

A :class:`PotentialSource` evaluates V on integer arrays.  Analytic families
are defined on all of Z; file-backed sources carry an explicit window.
Phases ``theta + n*alpha mod 1`` are formed in extended precision, and
exactly (integer residues) when alpha is a rational ``Fraction``, so
rational frequencies give bit-exact periodic sequences.
"""
from __future__ import annotations

import math
import os
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Iterable, Sequence

import numpy as np

from .arithmetic import FrequencyExpansion
from .errors import DomainError, PreconditionError, RangeError

FAMILIES = ("almost_mathieu", "sturmian", "file", "custom_analytic", "skew_shift", "periodic")

# sturmian samples closer than this to a jump of the indicator are flagged
ENDPOINT_TOL = 1e-14

_HEADER_RE = re.compile(r"#\s*qp-potential\s+v1\s+origin=(-?\d+)\s+length=(\d+)")


def _as_frequency(alpha):
    """Exact Fraction for rationals, longdouble otherwise."""
    if isinstance(alpha, FrequencyExpansion):
        if alpha.rational:
            return alpha.value()
        return alpha.to_longdouble()
    if isinstance(alpha, Fraction):
        return alpha
    if isinstance(alpha, int):
        return Fraction(alpha)
    return np.longdouble(alpha)


def _freq_label(alpha) -> str:
    if isinstance(alpha, FrequencyExpansion):
        return alpha.label or repr(alpha)
    return str(alpha)


def orbit_phases(theta, alpha, n) -> np.ndarray:
    """frac(theta + n*alpha) as longdouble for an integer array ``n``."""
    n = np.asarray(n, dtype=np.int64)
    th = np.longdouble(theta)
    if isinstance(alpha, Fraction):
        p, q = alpha.numerator, alpha.denominator
        if q == 1:
            r = np.zeros(n.shape, dtype=np.int64)
        elif abs(p) * (int(np.abs(n).max(initial=0)) + 1) < 2 ** 62:
            r = np.mod(n * p, q)
        else:
            r = np.array([(int(k) * p) % q for k in n.ravel()], dtype=np.int64).reshape(n.shape)
        x = th + r.astype(np.longdouble) / np.longdouble(q)
    else:
        x = th + n.astype(np.longdouble) * np.longdouble(alpha)
    return np.mod(x, np.longdouble(1))


def _alpha_ld(a) -> np.longdouble:
    if isinstance(a, Fraction):
        return np.longdouble(a.numerator) / np.longdouble(a.denominator)
    return np.longdouble(a)


def _cos2pi(x: np.ndarray) -> np.ndarray:
    # reduce in extended precision, then evaluate in double
    return np.cos(2.0 * np.pi * x.astype(float))


def _eval_almost_mathieu(p, m, data):
    return 2.0 * p["lambda"] * _cos2pi(orbit_phases(p["theta"], p["_alpha"], m))


def _eval_sturmian(p, m, data):
    x = orbit_phases(p["theta"], p["_alpha"], m)
    lo = np.longdouble(1) - _alpha_ld(p["_alpha"])
    return np.where(x >= lo, float(p["lambda"]), 0.0)


def _eval_custom(p, m, data):
    x = orbit_phases(p["theta"], p["_alpha"], m).astype(float)
    out = np.full(x.shape, float(p.get("c0", 0.0)))
    for k, (a, b) in enumerate(zip(p["cos"], p["sin"]), start=1):
        out += a * np.cos(2 * np.pi * k * x) + b * np.sin(2 * np.pi * k * x)
    return out


def _eval_skew(p, m, data):
    # orbit of (x, y) -> (x + alpha, y + x) started at (theta, theta2)
    m = np.asarray(m, dtype=np.int64)
    x0 = np.longdouble(p["theta"])
    y0 = np.longdouble(p["theta2"])
    a = _alpha_ld(p["_alpha"])
    ml = m.astype(np.longdouble)
    y = y0 + ml * x0 + (ml * (ml - 1) / 2) * a
    return 2.0 * p["lambda"] * _cos2pi(np.mod(y, np.longdouble(1)))


def _eval_table(p, m, data):
    return data[np.asarray(m, dtype=np.int64) - p["origin"]]


def _eval_periodic(p, m, data):
    q = len(data)
    return data[np.mod(np.asarray(m, dtype=np.int64) - 1, q)]


_EVALUATORS: dict[str, Callable] = {
    "almost_mathieu": _eval_almost_mathieu,
    "sturmian": _eval_sturmian,
    "custom_analytic": _eval_custom,
    "skew_shift": _eval_skew,
    "file": _eval_table,
    "periodic": _eval_periodic,
}


@dataclass(frozen=True, eq=False)
class PotentialSource:
    """Deterministic generator of V(n).

    The stored index map is ``n -> sign*n + offset``; reflections such as
    V(1-n) are expressed through it without copying data.
    """

    family: str
    params: dict
    window: tuple[int | None, int | None] = (None, None)
    index_sign: int = 1
    index_offset: int = 0
    data: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise DomainError(f"unknown family {self.family!r}")
        if self.index_sign not in (1, -1):
            raise DomainError("index_sign must be +1 or -1")

    # evaluation ---------------------------------------------------------
    def _base_index(self, n) -> np.ndarray:
        n = np.asarray(n, dtype=np.int64)
        return self.index_sign * n + self.index_offset

    def covers(self, lo: int, hi: int) -> bool:
        """Whether every n in [lo, hi] can be evaluated."""
        wlo, whi = self.window
        if wlo is None and whi is None:
            return True
        a, b = sorted((self.index_sign * lo + self.index_offset, self.index_sign * hi + self.index_offset))
        return (wlo is None or a >= wlo) and (whi is None or b <= whi)

    def require(self, lo: int, hi: int) -> None:
        if not self.covers(lo, hi):
            raise RangeError(f"source window {self.window} (index map {self.index_sign:+d}n{self.index_offset:+d}) "
                             f"does not cover the required range [{lo}, {hi}]")

    def values(self, n) -> np.ndarray:
        n = np.asarray(n, dtype=np.int64)
        m = self._base_index(n)
        wlo, whi = self.window
        if m.size and ((wlo is not None and m.min() < wlo) or (whi is not None and m.max() > whi)):
            raise RangeError(f"indices outside window {self.window}")
        return np.asarray(_EVALUATORS[self.family](self.params, m, self.data), dtype=float)

    def segment(self, start: int, length: int) -> np.ndarray:
        """V(start), ..., V(start+length-1)."""
        return self.values(np.arange(start, start + length, dtype=np.int64))

    def __call__(self, n):
        if np.ndim(n) == 0:
            return float(self.values(np.array([n]))[0])
        return self.values(n)

    def boundary_flags(self, n) -> np.ndarray:
        """True where a sturmian sample lies within ENDPOINT_TOL of a jump."""
        n = np.asarray(n, dtype=np.int64)
        if self.family != "sturmian":
            return np.zeros(n.shape, dtype=bool)
        x = orbit_phases(self.params["theta"], self.params["_alpha"], self._base_index(n))
        a = _alpha_ld(self.params["_alpha"])
        d1 = np.abs(x - (1 - a))
        d0 = np.minimum(x, 1 - x)
        return (d1 < ENDPOINT_TOL) | (d0 < ENDPOINT_TOL)

    # derived sources ----------------------------------------------------
    def reindexed(self, sign: int, offset: int) -> "PotentialSource":
        """Source W(n) = V(sign*n + offset)."""
        return PotentialSource(self.family, self.params, self.window,
                               index_sign=self.index_sign * sign,
                               index_offset=self.index_sign * offset + self.index_offset,
                               data=self.data)

    def reflected(self, offset: int = 1) -> "PotentialSource":
        """W(n) = V(offset - n); the default gives the V(1-n) reflection."""
        return self.reindexed(-1, offset)

    def shifted(self, k: int) -> "PotentialSource":
        return self.reindexed(1, k)

    def sup_norm(self) -> float:
        p = self.params
        if self.family in ("almost_mathieu", "skew_shift"):
            return 2.0 * abs(p["lambda"])
        if self.family == "sturmian":
            return abs(p["lambda"])
        if self.family == "custom_analytic":
            return abs(p.get("c0", 0.0)) + sum(math.hypot(a, b) for a, b in zip(p["cos"], p["sin"]))
        return float(np.max(np.abs(self.data))) if self.data is not None and len(self.data) else 0.0

    def describe(self) -> dict:
        """Provenance record (JSON-ready)."""
        out = {"family": self.family, "index_map": [self.index_sign, self.index_offset],
               "window": list(self.window)}
        par = {}
        for k, v in self.params.items():
            if k.startswith("_"):
                continue
            if isinstance(v, (list, tuple)):
                par[k] = [float(x) for x in v]
            elif isinstance(v, (int, float)) and not isinstance(v, bool):
                par[k] = v
            else:
                par[k] = str(v)
        out["params"] = par
        return out


def eval_potential(src: PotentialSource, n: int) -> float:
    return src(int(n))


# constructors ---------------------------------------------------------------

def almost_mathieu(lam: float, alpha, theta: float = 0.0) -> PotentialSource:
    """V(n) = 2 lam cos 2pi(theta + n alpha)."""
    return PotentialSource("almost_mathieu", {"lambda": float(lam), "alpha": _freq_label(alpha),
                                              "theta": float(theta), "_alpha": _as_frequency(alpha)})


def sturmian(lam: float, alpha, theta: float = 0.0) -> PotentialSource:
    """V(n) = lam * 1[1-alpha <= frac(theta + n alpha) < 1]."""
    a = _as_frequency(alpha)
    if not 0 < float(a) < 1:
        raise DomainError("sturmian frequency must lie in (0,1)")
    return PotentialSource("sturmian", {"lambda": float(lam), "alpha": _freq_label(alpha),
                                        "theta": float(theta), "_alpha": a})


def custom_analytic(alpha, theta: float = 0.0, c0: float = 0.0,
                    cos_coeffs: Sequence[float] = (), sin_coeffs: Sequence[float] = ()) -> PotentialSource:
    """Trigonometric polynomial sampled along the rotation orbit."""
    k = max(len(cos_coeffs), len(sin_coeffs))
    cc = tuple(float(x) for x in cos_coeffs) + (0.0,) * (k - len(cos_coeffs))
    ss = tuple(float(x) for x in sin_coeffs) + (0.0,) * (k - len(sin_coeffs))
    return PotentialSource("custom_analytic", {"alpha": _freq_label(alpha), "theta": float(theta),
                                               "c0": float(c0), "cos": cc, "sin": ss,
                                               "_alpha": _as_frequency(alpha)})


def skew_shift(lam: float, alpha, theta: float = 0.0, theta2: float = 0.0) -> PotentialSource:
    return PotentialSource("skew_shift", {"lambda": float(lam), "alpha": _freq_label(alpha),
                                          "theta": float(theta), "theta2": float(theta2),
                                          "_alpha": _as_frequency(alpha)})


def periodic(values: Sequence[float]) -> PotentialSource:
    """V(n) = values[(n-1) mod q]; so V(1..q) is the given tuple."""
    data = np.asarray(values, dtype=float)
    if data.ndim != 1 or len(data) == 0:
        raise DomainError("periodic potential needs a nonempty 1-d sequence")
    if not np.all(np.isfinite(data)):
        raise DomainError("potential values must be finite")
    data.setflags(write=False)
    return PotentialSource("periodic", {"period": len(data)}, data=data)


def constant(c: float) -> PotentialSource:
    return periodic([c])


def free() -> PotentialSource:
    return periodic([0.0])


def from_array(values: Sequence[float], origin: int = 0, label: str = "") -> PotentialSource:
    data = np.asarray(values, dtype=float)
    if data.ndim != 1:
        raise DomainError("potential array must be 1-d")
    if np.isnan(data).any():
        raise DomainError("NaN entries are not allowed in a potential")
    data.setflags(write=False)
    return PotentialSource("file", {"origin": int(origin), "length": len(data), "path": label},
                           window=(int(origin), int(origin) + len(data) - 1), data=data)


def load_potential(path: str | os.PathLike, origin: int | None = None) -> PotentialSource:
    """Read a text file (``# qp-potential v1 origin=<n0> length=<L>`` header,
    one value per line) or a ``.npy`` array (origin passed explicitly)."""
    path = os.fspath(path)
    if path.endswith(".npy"):
        data = np.load(path, allow_pickle=False).astype(float)
        return from_array(data, origin or 0, label=path)
    with open(path) as fh:
        header = fh.readline()
        m = _HEADER_RE.match(header.strip())
        if not m:
            raise PreconditionError(f"{path}: missing '# qp-potential v1 origin=.. length=..' header")
        org, length = int(m.group(1)), int(m.group(2))
        data = np.loadtxt(fh, dtype=float, ndmin=1, comments="#")
    if len(data) != length:
        raise PreconditionError(f"{path}: header says length={length} but found {len(data)} values")
    return from_array(data, org if origin is None else origin, label=path)


def save_potential(path: str | os.PathLike, values: Sequence[float], origin: int = 0) -> None:
    data = np.asarray(values, dtype=float)
    with open(path, "w") as fh:
        fh.write(f"# qp-potential v1 origin={int(origin)} length={len(data)}\n")
        for v in data:
            fh.write(f"{float(v)!r}\n")


# repetition profiles --------------------------------------------------------

@dataclass(frozen=True)
class RepetitionProfile:
    """Repetition data of V at block length q.

    ``defect`` is max_{1<=j<=q} |V(j) - V(j +- q)|; ``block_defects[K-1]``
    is the defect over the block range |k| <= K (adjacent pairs
    (k, k+1) with -K <= k <= K-1), so ``block_defects[0] == defect``.
    """

    q: int
    defect: float
    beta_of_q: float
    k_range_checked: int
    epsilon_witness: float
    block_defects: tuple[float, ...] = ()
    k_certified: int = 0
    boundary_flags: int = 0

    @property
    def max_block_defect(self) -> float:
        return self.block_defects[-1] if self.block_defects else self.defect

    def to_dict(self) -> dict:
        return {"q": self.q, "defect": self.defect, "beta_of_q": _num(self.beta_of_q),
                "k_range_checked": self.k_range_checked, "epsilon_witness": _num(self.epsilon_witness),
                "k_certified": self.k_certified, "max_block_defect": self.max_block_defect,
                "boundary_flags": self.boundary_flags}


def _num(x: float):
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return x


def required_window(q: int, k_max: int) -> tuple[int, int]:
    return 1 - k_max * q, (k_max + 1) * q


def repetition_defect(src: PotentialSource, q: int, k_max: int = 1) -> RepetitionProfile:
    """Defect of V under shifts by q over the blocks |k| <= k_max.

    Pairs of adjacent blocks (k, k+1) are compared for -k_max <= k <= k_max-1,
    i.e. both neighbours for interior blocks and one neighbour at the two
    ends.  ``k_max = 1`` reduces to max_j |V(j) - V(j +- q)|.

    ``epsilon_witness`` solves e^{eps*beta*q}/q = K for the largest K whose
    block defect does not exceed d(q) = e^{-beta q}; it is ``inf`` when every
    checked block agrees exactly.
    """
    if q < 1:
        raise DomainError("q must be >= 1")
    if k_max < 1:
        raise DomainError("k_max must be >= 1")
    lo, hi = required_window(q, k_max)
    src.require(lo, hi)
    v = src.values(np.arange(lo, hi + 1, dtype=np.int64)).reshape(2 * k_max + 1, q)
    # row r holds block k = r - k_max; pair row r compares blocks k and k+1
    pair_max = np.abs(np.diff(v, axis=0)).max(axis=1)
    blocks = np.empty(k_max)
    cur = 0.0
    for K in range(1, k_max + 1):
        cur = max(cur, pair_max[k_max - K], pair_max[k_max + K - 1])
        blocks[K - 1] = cur
    d = float(blocks[0])
    beta_q = math.inf if d == 0.0 else -math.log(d) / q
    k_cert = int(np.searchsorted(blocks, d, side="right"))
    if d == 0.0 and blocks[-1] == 0.0:
        eps = math.inf
    elif beta_q <= 0 or math.isinf(beta_q):
        eps = 0.0
    else:
        eps = max(0.0, math.log(k_cert * q) / (beta_q * q))
    flags = int(src.boundary_flags(np.arange(lo, hi + 1, dtype=np.int64)).sum())
    return RepetitionProfile(q, d, beta_q, k_max, eps, tuple(float(b) for b in blocks), k_cert, flags)


@dataclass(frozen=True)
class ScanResult:
    profiles: tuple[RepetitionProfile, ...]
    beta_hat: float | None
    tail: int = 0

    def to_dict(self) -> dict:
        return {"profiles": [p.to_dict() for p in self.profiles],
                "beta_hat": None if self.beta_hat is None else _num(self.beta_hat), "tail": self.tail}


def almost_periodicity_scan(src: PotentialSource, q_list: Iterable[int], k_max: int = 1,
                            workers: int = 1) -> ScanResult:
    """Profiles for each q and beta_hat = min beta_of_q over the last half of q_list."""
    q_list = [int(q) for q in q_list]
    if not q_list:
        return ScanResult((), None, 0)
    kms = [k_max(q) if callable(k_max) else int(k_max) for q in q_list]
    if workers > 1 and len(q_list) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            profiles = tuple(pool.map(lambda args: repetition_defect(src, *args), zip(q_list, kms)))
    else:
        profiles = tuple(repetition_defect(src, q, k) for q, k in zip(q_list, kms))
    tail = math.ceil(len(profiles) / 2)
    beta_hat = min(p.beta_of_q for p in profiles[-tail:])
    return ScanResult(profiles, beta_hat, tail)
