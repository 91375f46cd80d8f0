"""Half-line solutions, the length scale l(eps) and m-functions.

Conventions.  The right half-line problem lives on n >= 1 with boundary
phase phi: (u(0), u(1)) = (-sin phi, cos phi).  The left problem is handled
through the reflection W(n) = V(1-n): a left solution u on n <= 1 is stored
as w(m) = u(1-m), which solves the right problem for W.  With that
identification the left solution at phase phi is (up to sign) the reflected
solution at phase pi/2 - phi, and

    m_phi        right m-function  (Dirichlet m rotated by phi)
    m^-_phi      reflected m-function rotated by pi/2 - phi
    M(z)         (m_phi m^-_phi - 1) / (m_phi + m^-_phi)

M does not depend on phi; at phi = 0 it is G(0,0) + G(1,1), the Borel
transform of the spectral measure of the pair {delta_0, delta_1}.
"""
from __future__ import annotations

import math
import weakref
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import _kernels
from .errors import DomainError, InsufficientDataError, NumericError, PreconditionError, RangeError, TruncationError
from .potential import PotentialSource
from .scaling import ScalingFit, window_slopes

SIDES = ("right", "left")
NORM_CONVENTIONS = ("printed", "reflected")
M_REL_TOL = 1e-8
M_MAX_LENGTH = 2 ** 24
JL_REL_TOL = 1e-8
HERGLOTZ_TOL = 1e-13

_SEGMENTS: "weakref.WeakKeyDictionary[PotentialSource, dict]" = weakref.WeakKeyDictionary()


def _check_side(side: str) -> None:
    if side not in SIDES:
        raise DomainError(f"side must be one of {SIDES}, got {side!r}")


def half_line_potential(src: PotentialSource, side: str, length: int) -> np.ndarray:
    """V(1..length) for the right side, V(0), V(-1), ..., V(1-length) for the left.

    Values are cached per source and grown on demand, since m-function and
    length-scale sweeps reuse the same stretch many times.
    """
    _check_side(side)
    cache = _SEGMENTS.setdefault(src, {})
    have = cache.get(side)
    if have is None or len(have) < length:
        start = 0 if have is None else len(have)
        n = np.arange(start + 1, length + 1, dtype=np.int64)
        new = src.values(n if side == "right" else 1 - n)
        have = new if have is None else np.concatenate([have, new])
        cache[side] = have
    return have[:length]


# solutions ----------------------------------------------------------------------

@dataclass(frozen=True)
class HalfLineSolution:
    """Solution of Hu = Eu with boundary phase ``phi`` on one half-line.

    ``scaled[m] * exp(log_offsets[m])`` is w(m) for m = 0..n_max+1, where
    w(m) = u(m) on the right and w(m) = u(1-m) on the left.
    ``log_prefix[k]`` is log(sum_{m=1}^k w(m)^2) (``-inf`` for k = 0).
    """

    E: float
    phi: float
    side: str
    n_max: int
    scaled: np.ndarray
    log_offsets: np.ndarray
    log_prefix: np.ndarray

    def log_abs(self, m) -> np.ndarray:
        m = np.asarray(m)
        with np.errstate(divide="ignore"):
            return np.log(np.abs(self.scaled[m])) + self.log_offsets[m]

    def value(self, n: int) -> float:
        """u(n) in the original indexing (n >= 0 right, n <= 1 left)."""
        m = n if self.side == "right" else 1 - n
        if not 0 <= m <= self.n_max + 1:
            raise RangeError(f"site {n} outside the computed range")
        return float(self.scaled[m] * math.exp(self.log_offsets[m]))

    def values(self) -> np.ndarray:
        """w(0..n_max+1) unscaled (may overflow to inf)."""
        with np.errstate(over="ignore"):
            return self.scaled * np.exp(self.log_offsets)


def boundary_values(phi: float) -> tuple[float, float]:
    """(u(0), u(1)) for the boundary phase phi."""
    return -math.sin(phi), math.cos(phi)


def solve_half_line(src: PotentialSource, E: float, phi: float, side: str = "right",
                    n_max: int = 1000) -> HalfLineSolution:
    """Iterate the recurrence out to n_max sites with overflow-safe rescaling."""
    _check_side(side)
    if n_max < 1:
        raise PreconditionError("n_max must be positive")
    if not math.isfinite(E):
        raise DomainError("energy must be finite")
    u0, u1 = boundary_values(phi)
    # the left solution shares (u(0), u(1)); in reflected indexing w(0) = u(1), w(1) = u(0)
    w0, w1 = (u0, u1) if side == "right" else (u1, u0)
    v = half_line_potential(src, side, n_max)
    w, off = _kernels.recurrence(np.ascontiguousarray(v), float(E), w0, w1)
    with np.errstate(divide="ignore"):
        lw2 = 2.0 * (np.log(np.abs(w[1:])) + off[1:])
    prefix = np.concatenate([[-np.inf], np.logaddexp.accumulate(lw2)])
    return HalfLineSolution(float(E), float(phi), side, int(n_max), w, off, prefix[:n_max + 2])


def _log_norm_sq(sol: HalfLineSolution, l, convention: str):
    """log ||u||_l^2 (vectorised over l)."""
    l = np.asarray(l, dtype=float)
    if np.any(l < 1) or np.any(l > sol.n_max):
        raise RangeError(f"length {l} outside [1, {sol.n_max}]")
    k = np.floor(l).astype(np.int64)
    frac = l - k
    with np.errstate(divide="ignore"):
        head = sol.log_prefix[k]
        tail = np.log(frac) + 2.0 * sol.log_abs(k + 1)
        if sol.side == "left" and convention == "printed":
            # sum over u(-1), ..., u(1-[l]) plus the fractional u(-[l]) term:
            # the reflected norm without the w(1) = u(0) contribution
            w1 = 2.0 * sol.log_abs(1)
            head = np.where(k >= 2, _logsubexp(head, w1), -np.inf)
    return np.logaddexp(head, tail)


def _logsubexp(a, b):
    with np.errstate(divide="ignore", invalid="ignore"):
        d = np.where(np.isfinite(b), b - a, -np.inf)
        return a + np.log1p(-np.exp(np.minimum(d, 0.0)))


def truncated_norm(sol: HalfLineSolution, l, convention: str = "printed"):
    """||u||_l with linear interpolation of the last site.

    Right side: sum_{n=1}^{[l]} |u(n)|^2 + (l-[l]) |u([l]+1)|^2.  Left side
    with ``convention="printed"``: sum_{n=1}^{[l]-1} |u(-n)|^2 +
    (l-[l]) |u(-[l])|^2; with ``"reflected"`` the norm of u(1-n), which adds
    |u(0)|^2.  Returns inf when the value overflows a double.
    """
    if convention not in NORM_CONVENTIONS:
        raise DomainError(f"convention must be one of {NORM_CONVENTIONS}")
    with np.errstate(over="ignore"):
        out = np.exp(0.5 * _log_norm_sq(sol, l, convention))
    return float(out) if np.ndim(out) == 0 else out


def log_truncated_norm(sol: HalfLineSolution, l, convention: str = "printed"):
    out = 0.5 * _log_norm_sq(sol, l, convention)
    return float(out) if np.ndim(out) == 0 else out


# length scale ---------------------------------------------------------------------

@dataclass(frozen=True)
class LengthScale:
    """l(eps) with ||u||_l ||v||_l = 1/(2 eps); u at phi, v at phi + pi/2."""

    E: float
    phi: float
    epsilon: float
    side: str
    l: float
    u_norm: float
    v_norm: float
    residual: float
    n_max: int

    @property
    def ratio(self) -> float:
        return self.u_norm / self.v_norm

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in ("E", "phi", "epsilon", "side", "l", "u_norm", "v_norm",
                                               "residual", "n_max")}


def jl_length(src: PotentialSource, E: float, phi: float, epsilon: float, side: str = "right",
              convention: str = "printed", n_start: int = 64,
              n_limit: int = M_MAX_LENGTH) -> LengthScale:
    """Solve for the length scale by bisection on the continuous, increasing
    map l -> ||u||_l ||v||_l.

    The solution range doubles from ``n_start`` until the product reaches
    1/(2 eps); past ``n_limit`` a TruncationError asks for a longer range.
    The returned residual |product - 1/(2 eps)| is at most 1e-8/eps.
    """
    if not epsilon > 0:
        raise DomainError("epsilon must be positive")
    target = -math.log(2.0 * epsilon)
    n = max(4, int(n_start))
    while True:
        u = solve_half_line(src, E, phi, side, n)
        v = solve_half_line(src, E, phi + math.pi / 2, side, n)

        def f(l):
            return log_truncated_norm(u, l, convention) + log_truncated_norm(v, l, convention) - target

        if f(float(n)) >= 0:
            break
        if n >= n_limit:
            raise TruncationError(f"length scale exceeds {n_limit} sites; extend the range")
        n *= 2
    lo, hi = 1.0, float(n)
    if f(lo) >= 0:
        hi = lo
    tol = JL_REL_TOL / 4
    for _ in range(200):
        if hi - lo <= 1e-13 * hi:
            break
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        if abs(fm) < tol:
            lo = hi = mid
            break
        if fm < 0:
            lo = mid
        else:
            hi = mid
    l = hi
    lu, lv = log_truncated_norm(u, l, convention), log_truncated_norm(v, l, convention)
    prod = math.exp(lu + lv)
    res = abs(prod - 0.5 / epsilon)
    if res > JL_REL_TOL / epsilon:
        raise NumericError(f"length-scale residual {res:.3g} above {JL_REL_TOL / epsilon:.3g}")
    return LengthScale(float(E), float(phi), float(epsilon), side, float(l), math.exp(lu), math.exp(lv),
                       res, n)


# m-functions ------------------------------------------------------------------------

def rotate_m(m: complex, phi: float) -> complex:
    """m_phi from the Dirichlet m-function."""
    c, s = math.cos(phi), math.sin(phi)
    return (s + m * c) / (c - m * s)


def dirichlet_m(src: PotentialSource, z: complex, side: str = "right", rel_tol: float = M_REL_TOL,
                max_length: int = M_MAX_LENGTH) -> complex:
    """Dirichlet m-function of the right half-line (``side="right"``) or of
    the reflected potential V(1-n) (``side="left"``).

    Truncated at length L with m_{L+1} = 0; L starts at max(16, 8/Im z) and
    doubles until consecutive values agree to ``rel_tol``.
    """
    z = complex(z)
    if not z.imag > 0:
        raise DomainError("m-functions need Im z > 0")
    L = max(16, int(math.ceil(8.0 / z.imag)))
    prev = None
    while True:
        if L > max_length:
            raise TruncationError(f"m-function not converged at length {max_length} (Im z = {z.imag:g})")
        m = _kernels.backward_m(np.ascontiguousarray(half_line_potential(src, side, L)), z)
        if prev is not None and abs(m - prev) <= rel_tol * abs(m):
            break
        prev = m
        L *= 2
    if not m.imag > -HERGLOTZ_TOL * max(1.0, abs(m)):
        raise NumericError(f"m-function lost the Herglotz property: m = {m}")
    return complex(m)


def m_function_half_line(src: PotentialSource, z: complex, phi: float = 0.0, side: str = "right",
                         rel_tol: float = M_REL_TOL) -> complex:
    """m_phi on the right; on the left the reflected m-function at pi/2 - phi,
    which is the one paired with the left solutions at phase phi."""
    _check_side(side)
    m = dirichlet_m(src, z, side, rel_tol)
    return rotate_m(m, phi if side == "right" else math.pi / 2 - phi)


def whole_line_M(src: PotentialSource, z: complex, phi: float = 0.0, check: bool = False,
                 rel_tol: float = M_REL_TOL) -> complex:
    """Whole-line M(z).  With ``check`` the phi = 0 and phi = pi/4 formulas are
    compared and a NumericError is raised if they disagree beyond 1e-6."""
    mr = dirichlet_m(src, z, "right", rel_tol)
    ml = dirichlet_m(src, z, "left", rel_tol)
    M = _pair(mr, ml, phi)
    if check:
        M2 = _pair(mr, ml, math.pi / 4 if phi == 0.0 else 0.0)
        if abs(M - M2) > 1e-6 * max(1.0, abs(M)):
            raise NumericError(f"M depends on phi: {M} vs {M2}")
    if not M.imag > -HERGLOTZ_TOL * max(1.0, abs(M)):
        raise NumericError(f"M lost the Herglotz property: {M}")
    return M


def _pair(mr: complex, ml: complex, phi: float) -> complex:
    a = rotate_m(mr, phi)
    b = rotate_m(ml, math.pi / 2 - phi)
    return (a * b - 1) / (a + b)


# spectral dimension -------------------------------------------------------------------

def spectral_dimension_estimate(src: PotentialSource, E: float, eps_grid: Sequence[float],
                                gamma_grid: Sequence[float] | None = None, window: int = 4,
                                tail_fraction: float = 0.6, workers: int = 1) -> ScalingFit:
    """Local exponent of the spectral measure at E from |M(E + i eps)|.

    For each gamma the quantity eps^(1-gamma) |M(E + i eps)| stays bounded
    along a sequence eps -> 0 exactly when some stretch of the curve has
    log-log slope >= gamma - 1.  The estimate is the largest grid gamma with
    gamma - 1 <= the steepest window slope over the finest ``tail_fraction``
    of the eps grid (so it measures a liminf-type exponent).

    ``fitted`` is the plain least-squares slope over that tail and
    ``extra["s_hat"]`` the estimate.
    """
    eps = np.sort(np.asarray(eps_grid, dtype=float))[::-1]
    if len(eps) < 12 or eps[-1] <= 0 or math.log10(eps[0] / eps[-1]) < 3 - 1e-9:
        raise InsufficientDataError("epsilon grid needs >= 12 points spanning >= 3 decades")
    gam = np.linspace(0.0, 1.0, 101) if gamma_grid is None else np.sort(np.asarray(gamma_grid, dtype=float))

    def one(e):
        return abs(whole_line_M(src, complex(E, e)))

    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            Ms = np.array(list(ex.map(one, eps)))
    else:
        Ms = np.array([one(e) for e in eps])
    x, y = np.log(eps), np.log(Ms)
    k0 = int(len(eps) * (1 - tail_fraction))
    xt, yt = x[k0:], y[k0:]
    ws = window_slopes(xt, yt, window)
    if len(ws) == 0:
        raise InsufficientDataError("tail shorter than one window")
    slope, icpt = np.polyfit(xt, yt, 1)
    sigma = float(ws.max())
    ok = gam[gam - 1 <= sigma + 1e-12]
    s_hat = float(ok.max()) if len(ok) else 0.0
    # running minima of eps^(1-gamma)|M| over the tail, one column per gamma
    prof = np.exp((1 - gam)[None, :] * xt[:, None] + yt[:, None])
    run_min = np.minimum.accumulate(prof, axis=0)[-1]
    res = yt - (slope * xt + icpt)
    return ScalingFit(tuple(float(a) for a in eps), tuple(float(b) for b in Ms), float(slope), float(icpt),
                      int(window), tuple(float(w) for w in ws), float(np.sqrt((res ** 2).mean())),
                      gamma_grid=tuple(float(g) for g in gam),
                      extra={"E": float(E), "s_hat": s_hat, "sigma_max": sigma, "tail_start": int(k0),
                             "running_min": [float(r) for r in run_min]})


# sublinear growth -----------------------------------------------------------------------

@dataclass(frozen=True)
class GrowthCheck:
    """sup over the l-grid of ||u||_l / (l^(1/2) log l) on both half-lines."""

    phi: float
    right: float
    left: float
    l_grid: tuple[float, ...]

    @property
    def value(self) -> float:
        return max(self.right, self.left)

    def to_dict(self) -> dict:
        return {"phi": self.phi, "right": self.right, "left": self.left, "value": self.value,
                "l_grid": list(self.l_grid)}


def sublinear_growth_check(u_right: HalfLineSolution, u_left: HalfLineSolution,
                           l_grid: Sequence[float], convention: str = "printed") -> GrowthCheck:
    l = np.asarray(l_grid, dtype=float)
    if len(l) == 0 or np.any(l <= 1):
        raise PreconditionError("l-grid must be non-empty with l > 1")
    scale = 0.5 * np.log(l) + np.log(np.log(l))
    with np.errstate(over="ignore"):
        r = float(np.exp(np.max(log_truncated_norm(u_right, l) - scale)))
        lf = float(np.exp(np.max(log_truncated_norm(u_left, l, convention) - scale)))
    return GrowthCheck(u_right.phi, r, lf, tuple(float(x) for x in l))


def best_boundary_phase(src: PotentialSource, E: float, l_grid: Sequence[float], n_phi: int = 32,
                        convention: str = "printed") -> tuple[GrowthCheck, list[GrowthCheck]]:
    """Scan phi over [0, pi) and return the phase with the smallest growth
    functional together with the full scan."""
    n = int(math.ceil(max(l_grid))) + 1
    rows = []
    for phi in np.arange(n_phi) * math.pi / n_phi:
        ur = solve_half_line(src, E, phi, "right", n)
        ul = solve_half_line(src, E, phi, "left", n)
        rows.append(sublinear_growth_check(ur, ul, l_grid, convention))
    return min(rows, key=lambda g: g.value), rows


# randomized suites -------------------------------------------------------------------

JL_LOWER = 5.0 - math.sqrt(24.0)
JL_UPPER = 5.0 + math.sqrt(24.0)


def suite_families(seed_alpha=None) -> list[tuple[str, PotentialSource]]:
    """Free, almost Mathieu at three couplings and a golden Sturmian."""
    from .arithmetic import golden_expansion
    from .potential import almost_mathieu, free, sturmian

    g = golden_expansion() if seed_alpha is None else seed_alpha
    return [("free", free()), ("amo_0.5", almost_mathieu(0.5, g, 0.3)), ("amo_1", almost_mathieu(1.0, g, 0.3)),
            ("amo_2", almost_mathieu(2.0, g, 0.3)), ("sturmian_1.5", sturmian(1.5, g, 0.3))]


def jl_suite(samples: int = 500, seed: int = 0, eps_range=(1e-3, 1e-1), E_range=(-3.5, 3.5),
             sides: Sequence[str] = ("right",), slack: float = 1e-6):
    """Check (5 - sqrt 24) <= |m_phi| ||u||_l / ||v||_l <= 5 + sqrt 24 at l(eps).

    Left-side samples use the reflected norm, the one the inequality is
    stated for after reflection.
    """
    from .cocycle import SuiteResult

    rng = np.random.default_rng(seed)
    fams = suite_families()
    bad, lo, hi = 0, math.inf, 0.0
    for s in range(samples):
        name, src = fams[s % len(fams)]
        E = rng.uniform(*E_range)
        eps = 10 ** rng.uniform(math.log10(eps_range[0]), math.log10(eps_range[1]))
        phi = rng.uniform(-math.pi / 2, math.pi / 2)
        for side in sides:
            ls = jl_length(src, E, phi, eps, side, convention="reflected")
            m = m_function_half_line(src, complex(E, eps), phi, side)
            r = ls.ratio * abs(m)
            lo, hi = min(lo, r), max(hi, r)
            bad += not (JL_LOWER * (1 - slack) <= r <= JL_UPPER * (1 + slack))
    return SuiteResult("length_scale_inequality", samples * len(sides), bad, hi, JL_UPPER,
                       {"min_ratio": lo, "max_ratio": hi, "lower": JL_LOWER, "upper": JL_UPPER})


def phi_independence_suite(samples: int = 100, seed: int = 0, eps_range=(1e-3, 1e-1),
                           E_range=(-3.5, 3.5), tol: float = 1e-6):
    """Spread of M over phi in {0, pi/8, pi/4, 3pi/8}, relative to |M|."""
    from .cocycle import SuiteResult

    rng = np.random.default_rng(seed)
    fams = suite_families()
    phis = np.arange(4) * math.pi / 8
    bad, worst = 0, 0.0
    for s in range(samples):
        _, src = fams[s % len(fams)]
        z = complex(rng.uniform(*E_range), 10 ** rng.uniform(math.log10(eps_range[0]), math.log10(eps_range[1])))
        mr = dirichlet_m(src, z, "right")
        ml = dirichlet_m(src, z, "left")
        Ms = np.array([_pair(mr, ml, p) for p in phis])
        d = float(np.max(np.abs(Ms - Ms[0])) / abs(Ms[0]))
        worst = max(worst, d)
        bad += not d <= tol
    return SuiteResult("m_phi_independence", samples, bad, worst, tol)
