"""Periodic-approximant spectra: discriminants, bands, level sets and S_q.

Band edges come from Bloch eigenvalues: E is a root of Tr A_q(E) = 2 cos k
exactly when it is an eigenvalue of the q x q matrix H(k) (potential on the
diagonal, hopping 1, corner terms e^{-+ik}).  k = 0 gives the edges with
Tr = 2, k = pi those with Tr = -2.  Edges are then polished by bisection on
the discriminant itself.
"""
from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from typing import Sequence

import numpy as np
from scipy.linalg import eigh_tridiagonal, eigvalsh

from . import _kernels
from .arithmetic import FrequencyExpansion
from .cocycle import lyapunov_exponent, norm_bound_Lambda, traces, transfer_matrices
from .errors import DomainError, InsufficientDataError, NumericError, PreconditionError
from .potential import PotentialSource, repetition_defect
from .scaling import ScalingFit, fit_loglog

MIN_GRID_PER_PERIOD = 4


def bloch_matrix(v: np.ndarray, k: complex) -> np.ndarray:
    q = len(v)
    H = np.diag(v.astype(complex))
    if q > 1:
        idx = np.arange(q - 1)
        H[idx, idx + 1] = 1.0
        H[idx + 1, idx] = 1.0
    H[0, q - 1] += np.exp(-1j * k)
    H[q - 1, 0] += np.exp(1j * k)
    return H


def bloch_roots(v: np.ndarray, c: float) -> np.ndarray:
    """All q real roots of Tr A_q(E) = c for |c| <= 2."""
    if abs(c) > 2:
        raise DomainError("bloch_roots needs |c| <= 2")
    k = math.acos(max(-1.0, min(1.0, c / 2)))
    H = bloch_matrix(v, k)
    if k == 0.0 or k == math.pi:
        return np.sort(eigvalsh(H.real))
    return np.sort(eigvalsh(H))


def _bisect(src, q, shift, lo, hi, c, tol, max_iter=200):
    """Vectorised bisection for Tr A_q = c on brackets with a sign change."""
    lo = np.array(lo, dtype=float)
    hi = np.array(hi, dtype=float)
    if lo.size == 0:
        return lo, lo.copy()
    glo = traces(src, lo, q, shift) - c
    for _ in range(max_iter):
        width = hi - lo
        if np.all(width <= tol):
            break
        mid = 0.5 * (lo + hi)
        if np.all((mid == lo) | (mid == hi)):
            break
        gm = traces(src, mid, q, shift) - c
        left = np.sign(gm) == np.sign(glo)
        lo = np.where(left, mid, lo)
        glo = np.where(left, gm, glo)
        hi = np.where(left, hi, mid)
    return 0.5 * (lo + hi), hi - lo


@dataclass(frozen=True)
class Discriminant:
    """Tr A_q on a grid plus the 2q refined edges (Tr = +-2)."""

    q: int
    shift: int
    energies: np.ndarray
    values: np.ndarray
    edges: np.ndarray
    edge_targets: np.ndarray
    residuals: np.ndarray
    E_range: tuple[float, float]
    src: PotentialSource = field(repr=False)

    @property
    def potential_values(self) -> np.ndarray:
        return self.src.segment(self.shift + 1, self.q)

    def evaluate(self, E) -> np.ndarray:
        return traces(self.src, np.atleast_1d(np.asarray(E, dtype=float)), self.q, self.shift)

    @cached_property
    def gap_extrema(self) -> tuple[np.ndarray, np.ndarray]:
        """Position and value of the q-1 local extrema of Tr (one per gap)."""
        e = self.edges
        lo = e[1:-1:2].copy()
        hi = e[2::2].copy()
        if len(lo) == 0:
            return np.array([]), np.array([])
        invphi = (math.sqrt(5) - 1) / 2
        a, b = lo.copy(), hi.copy()
        c = b - invphi * (b - a)
        d = a + invphi * (b - a)
        fc = np.abs(self.evaluate(c))
        fd = np.abs(self.evaluate(d))
        for _ in range(120):
            if np.all(b - a <= 1e-15 * (1 + np.abs(a))):
                break
            take_left = fc > fd
            b = np.where(take_left, d, b)
            a = np.where(take_left, a, c)
            nc = np.where(take_left, b - invphi * (b - a), d)
            nd = np.where(take_left, c, a + invphi * (b - a))
            fnew = np.abs(self.evaluate(np.where(take_left, nc, nd)))
            fc, fd = np.where(take_left, fnew, fd), np.where(take_left, fc, fnew)
            c, d = nc, nd
        y = 0.5 * (a + b)
        cand = np.stack([y, lo, hi])
        vals = np.stack([self.evaluate(x) for x in cand])
        best = np.argmax(np.abs(vals), axis=0)
        cols = np.arange(len(y))
        return cand[best, cols], vals[best, cols]

    @property
    def zeta(self) -> float | None:
        """min |Tr| over the local extrema; None for q = 1."""
        if self.q < 2:
            return None
        return float(np.min(np.abs(self.gap_extrema[1])))

    def level_roots(self, c: float) -> np.ndarray:
        """Sorted real roots of Tr A_q(E) = c."""
        if abs(c) <= 2:
            r = bloch_roots(self.potential_values, c)
            return self._polish(r, c)
        roots = []
        ys, vals = self.gap_extrema
        e = self.edges
        lo_b, hi_b = [], []
        for j, (y, val) in enumerate(zip(ys, vals)):
            if np.sign(val) == np.sign(c) and abs(val) > abs(c):
                lo_b += [e[2 * j + 1], y]
                hi_b += [y, e[2 * j + 2]]
            elif abs(val) == abs(c) and np.sign(val) == np.sign(c):
                roots.append(y)
        # outside the outermost edges |Tr| grows monotonically
        R = 1.0 + abs(c)
        left_sign = (-1) ** self.q
        if np.sign(c) == left_sign:
            a = e[0] - R
            while abs(self.evaluate(a)[0]) < abs(c):
                a -= R
                R *= 2
            lo_b.append(a)
            hi_b.append(e[0])
        if c > 0:
            R = 1.0 + abs(c)
            b = e[-1] + R
            while abs(self.evaluate(b)[0]) < abs(c):
                b += R
                R *= 2
            lo_b.append(e[-1])
            hi_b.append(b)
        if lo_b:
            r, _ = _bisect(self.src, self.q, self.shift, lo_b, hi_b, c, 1e-15)
            roots.extend(r.tolist())
        return np.sort(np.array(roots, dtype=float))

    def _polish(self, r: np.ndarray, c: float) -> np.ndarray:
        h = 1e-9 * (1 + np.abs(r))
        g_lo = self.evaluate(r - h) - c
        g_hi = self.evaluate(r + h) - c
        noise = 1e-12 * self.q
        ok = (np.sign(g_lo) * np.sign(g_hi) < 0) & (np.minimum(np.abs(g_lo), np.abs(g_hi)) > noise)
        if ok.any():
            p, _ = _bisect(self.src, self.q, self.shift, (r - h)[ok], (r + h)[ok], c, 1e-15)
            better = np.abs(self.evaluate(p) - c) <= np.abs(self.evaluate(r[ok]) - c)
            r = r.copy()
            r[np.flatnonzero(ok)[better]] = p[better]
        return np.sort(r)

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("E,trace\n")
        for E, t in zip(self.energies, self.values):
            buf.write(f"{E!r},{t!r}\n")
        return buf.getvalue()


def discriminant(src: PotentialSource, q: int, E_range: tuple[float, float] | None = None,
                 grid: int | None = None, shift: int = 0, polish: bool = True) -> Discriminant:
    """Tr A_q sampled on ``grid`` nodes of E_range plus the refined band edges.

    E_range must contain [-2 - ||V||, 2 + ||V||] (the default) and grid must
    be at least 4q.
    """
    if q < 1:
        raise DomainError("q must be >= 1")
    src.require(shift + 1, shift + q)
    v = src.segment(shift + 1, q)
    vmax = float(np.max(np.abs(v)))
    need = (-2.0 - vmax, 2.0 + vmax)
    if E_range is None:
        E_range = need
    if E_range[0] > need[0] + 1e-12 or E_range[1] < need[1] - 1e-12:
        raise PreconditionError(f"E_range {E_range} must contain {need}")
    if grid is None:
        grid = max(MIN_GRID_PER_PERIOD * q, 256)
    if grid < MIN_GRID_PER_PERIOD * q:
        raise PreconditionError(f"grid = {grid} is below the minimum {MIN_GRID_PER_PERIOD * q} (4q)")
    Egrid = np.linspace(E_range[0], E_range[1], grid)
    tr = traces(src, Egrid, q, shift)

    per = np.sort(eigvalsh(bloch_matrix(v, 0.0).real))
    anti = np.sort(eigvalsh(bloch_matrix(v, math.pi).real))
    edges = np.concatenate([per, anti])
    targets = np.concatenate([np.full(q, 2.0), np.full(q, -2.0)])
    order = np.argsort(edges, kind="stable")
    edges, targets = edges[order], targets[order]
    residuals = np.full(2 * q, np.nan)
    if polish:
        tol = 1e-12 * q
        h = np.maximum(1e-9, 4 * tol) * (1 + np.abs(edges))
        g_lo = traces(src, edges - h, q, shift) - targets
        g_hi = traces(src, edges + h, q, shift) - targets
        # a double root (closed gap) shows no sign change above rounding noise
        noise = 1e-12 * q
        ok = (np.sign(g_lo) * np.sign(g_hi) < 0) & (np.minimum(np.abs(g_lo), np.abs(g_hi)) > noise)
        for c in (2.0, -2.0):
            sel = ok & (targets == c)
            if sel.any():
                p, w = _bisect(src, q, shift, (edges - h)[sel], (edges + h)[sel], c, tol)
                old = np.abs(traces(src, edges[sel], q, shift) - c)
                new = np.abs(traces(src, p, q, shift) - c)
                better = new <= old
                idx = np.flatnonzero(sel)
                edges[idx[better]] = p[better]
                residuals[idx] = w
        order = np.argsort(edges, kind="stable")
        edges, targets, residuals = edges[order], targets[order], residuals[order]
    return Discriminant(q, shift, Egrid, tr, edges, targets, residuals, tuple(E_range), src)


@dataclass(frozen=True)
class BandSet:
    intervals: np.ndarray  # (n, 2), sorted, disjoint
    q: int
    edge_residuals: np.ndarray = field(default_factory=lambda: np.array([]))

    @property
    def total_measure(self) -> float:
        return float(np.sum(self.intervals[:, 1] - self.intervals[:, 0]))

    @property
    def count(self) -> int:
        return len(self.intervals)

    def contains(self, E) -> np.ndarray:
        E = np.atleast_1d(np.asarray(E, dtype=float))
        i = np.searchsorted(self.intervals[:, 0], E, side="right") - 1
        ok = i >= 0
        ic = np.clip(i, 0, len(self.intervals) - 1)
        return ok & (E <= self.intervals[ic, 1])

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """Uniform samples from the union of intervals."""
        w = self.intervals[:, 1] - self.intervals[:, 0]
        cum = np.concatenate([[0.0], np.cumsum(w)])
        u = rng.uniform(0, cum[-1], n)
        i = np.clip(np.searchsorted(cum, u, side="right") - 1, 0, len(w) - 1)
        return self.intervals[i, 0] + (u - cum[i])

    def midpoints(self) -> np.ndarray:
        return self.intervals.mean(axis=1)

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("band,E_left,E_right,width\n")
        for j, (l, r) in enumerate(self.intervals):
            buf.write(f"{j},{l!r},{r!r},{r - l!r}\n")
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {"q": self.q, "count": self.count, "total_measure": self.total_measure,
                "intervals": self.intervals.tolist()}


def band_set(d: Discriminant, merge_tol: float | None = None) -> BandSet:
    """Closed intervals where |Tr A_q| <= 2; touching bands are merged."""
    e = d.edges.reshape(-1, 2)
    if merge_tol is None:
        merge_tol = 1e-12 * d.q * (1 + float(np.max(np.abs(e))))
    out = [list(e[0])]
    for l, r in e[1:]:
        if l - out[-1][1] <= merge_tol:
            out[-1][1] = max(out[-1][1], r)
        else:
            out.append([l, r])
    res = d.residuals
    return BandSet(np.array(out, dtype=float), d.q, res)


def periodic_band_set(src: PotentialSource, q: int, shift: int = 0) -> BandSet:
    """Bands of the q-periodic extension of V(shift+1..shift+q) from Bloch
    eigenvalues alone (no polishing); used for large reference periods."""
    v = src.segment(shift + 1, q)
    per = eigvalsh(bloch_matrix(v, 0.0).real)
    anti = eigvalsh(bloch_matrix(v, math.pi).real)
    e = np.sort(np.concatenate([per, anti])).reshape(-1, 2)
    tol = 1e-12 * q * (1 + float(np.max(np.abs(e))))
    out = [list(e[0])]
    for l, r in e[1:]:
        if l - out[-1][1] <= tol:
            out[-1][1] = max(out[-1][1], r)
        else:
            out.append([l, r])
    return BandSet(np.array(out), q)


# level sets -------------------------------------------------------------------

@dataclass(frozen=True)
class LevelSet:
    a: float
    b: float
    sign: int
    measure: float
    bound: float | None
    zeta: float | None
    diam: float | None
    intervals: np.ndarray
    notice: str = ""

    @property
    def holds(self) -> bool | None:
        if self.bound is None:
            return None
        return self.measure <= self.bound * (1 + 1e-9) + 1e-15

    def to_dict(self) -> dict:
        return {"a": self.a, "b": self.b, "sign": self.sign, "measure": self.measure,
                "bound": self.bound, "zeta": self.zeta, "diam": self.diam, "holds": self.holds,
                "notice": self.notice}


def jm_bound(diam: float, zeta: float, a: float, b: float) -> float:
    r = (b - a) / (zeta + a)
    return 2 * diam * max(r, math.sqrt(r))


def trace_level_set(d: Discriminant, a: float, b: float, sign: int = 1) -> LevelSet:
    """Measure of {E : a < sign * Tr A_q(E) < b} and the extremal-value bound
    2 diam(z(p - a)) max{r, sqrt r}, r = (b-a)/(zeta + a), p = sign * Tr.

    The bound is only evaluated for q >= 2 (zeta needs interior extrema).
    """
    if not 0 <= a < b:
        raise DomainError("need 0 <= a < b")
    if sign not in (1, -1):
        raise DomainError("sign must be +1 or -1")
    lo, hi = (a, b) if sign > 0 else (-b, -a)
    r_lo = d.level_roots(lo)
    r_hi = d.level_roots(hi)
    pts = np.unique(np.concatenate([r_lo, r_hi]))
    pieces = []
    if len(pts) >= 2:
        mids = 0.5 * (pts[:-1] + pts[1:])
        tm = d.evaluate(mids)
        inside = (tm > lo) & (tm < hi)
        pieces = [(pts[i], pts[i + 1]) for i in np.flatnonzero(inside)]
    intervals = np.array(pieces, dtype=float).reshape(-1, 2)
    measure = float(np.sum(intervals[:, 1] - intervals[:, 0])) if len(intervals) else 0.0
    zeros = d.level_roots(sign * a)
    diam = float(zeros[-1] - zeros[0]) if len(zeros) >= 2 else 0.0
    if d.q < 2:
        return LevelSet(a, b, sign, measure, None, None, diam, intervals,
                        notice="degree 1: no interior extrema, bound skipped")
    zeta = d.zeta
    bound = jm_bound(diam, zeta, a, b)
    note = "" if zeta >= 2 - 1e-9 else f"zeta = {zeta:.6g} < 2"
    return LevelSet(a, b, sign, measure, bound, zeta, diam, intervals, notice=note)


@dataclass(frozen=True)
class SqSet:
    q: int
    eta: float
    pieces: tuple[LevelSet, ...]

    @property
    def measure(self) -> float:
        return sum(p.measure for p in self.pieces)

    @property
    def bound(self) -> float | None:
        if any(p.bound is None for p in self.pieces):
            return None
        return sum(p.bound for p in self.pieces)

    def to_dict(self) -> dict:
        return {"q": self.q, "eta": self.eta, "measure": self.measure, "bound": self.bound,
                "pieces": [p.to_dict() for p in self.pieces]}


def sq_set(d: Discriminant, Lambda: float, tau_factor: float = 10.0) -> SqSet:
    """S_q = {0 < |Tr -+ 2| < eta}, eta = e^{-tau_factor Lambda q}, as four level sets."""
    eta = math.exp(-tau_factor * Lambda * d.q)
    pieces = (trace_level_set(d, 2.0, 2.0 + eta, 1), trace_level_set(d, 2.0 - eta, 2.0, 1),
              trace_level_set(d, 2.0, 2.0 + eta, -1), trace_level_set(d, 2.0 - eta, 2.0, -1))
    return SqSet(d.q, eta, pieces)


def sq_scaling(src: PotentialSource, q_list: Sequence[int], Lambda: float,
               tau_factor: float = 10.0) -> ScalingFit:
    """Fit log|S_q| = -kappa q + c; ``fitted`` holds kappa (expected tau/2)."""
    q_list = [int(q) for q in q_list]
    meas = [sq_set(discriminant(src, q), Lambda, tau_factor).measure for q in q_list]
    x = np.array(q_list, float)
    y = np.log(np.array(meas))
    slope, icpt = np.polyfit(x, y, 1)
    return ScalingFit(tuple(x), tuple(meas), float(-slope), float(icpt), 2,
                      tuple(float(-(y[i + 1] - y[i]) / (x[i + 1] - x[i])) for i in range(len(x) - 1)),
                      float(np.sqrt(np.mean((y - slope * x - icpt) ** 2))),
                      extra={"tau": tau_factor * Lambda, "Lambda": Lambda, "expected": tau_factor * Lambda / 2})


# box counting ---------------------------------------------------------------

_SNAP = 1e-9


def box_count(intervals: np.ndarray, delta: float) -> int:
    """Number of boxes [i delta, (i+1) delta) meeting the union of closed intervals."""
    # endpoints within rounding of a box boundary are snapped onto it
    lo = np.floor(intervals[:, 0] / delta + _SNAP).astype(np.int64)
    hi = np.maximum(np.ceil(intervals[:, 1] / delta - _SNAP).astype(np.int64) - 1, lo)
    order = np.argsort(lo)
    lo, hi = lo[order], hi[order]
    total = 0
    cur_lo, cur_hi = lo[0], hi[0]
    for a, b in zip(lo[1:], hi[1:]):
        if a <= cur_hi + 1:
            cur_hi = max(cur_hi, b)
        else:
            total += cur_hi - cur_lo + 1
            cur_lo, cur_hi = a, b
    total += cur_hi - cur_lo + 1
    return int(total)


def box_dimension(bs: BandSet | np.ndarray, scales: Sequence[float]) -> ScalingFit:
    """Box-counting slope of log N(delta) against log(1/delta)."""
    iv = bs.intervals if isinstance(bs, BandSet) else np.asarray(bs, dtype=float).reshape(-1, 2)
    scales = np.sort(np.asarray(scales, dtype=float))[::-1]
    if len(scales) < 4 or scales[0] / scales[-1] < 100 * (1 - 1e-9):
        raise InsufficientDataError("need >= 4 scales spanning >= 2 decades")
    if len(iv) == 1 and iv[0, 1] <= iv[0, 0]:
        raise DomainError("degenerate set (a single point)")
    counts = np.array([box_count(iv, s) for s in scales], dtype=float)
    fit = fit_loglog(1.0 / scales, counts, window=2)
    return ScalingFit(fit.scales, fit.values, fit.fitted, fit.intercept, fit.window, fit.window_slopes,
                      fit.residual_rms, extra={"deltas": scales.tolist()})


def cantor_intervals(level: int, lo: float = 0.0, hi: float = 1.0) -> np.ndarray:
    """Intervals of the middle-thirds construction after ``level`` steps."""
    iv = np.array([[lo, hi]])
    for _ in range(level):
        w = (iv[:, 1] - iv[:, 0]) / 3
        iv = np.concatenate([np.stack([iv[:, 0], iv[:, 0] + w], 1),
                             np.stack([iv[:, 1] - w, iv[:, 1]], 1)])
        iv = iv[np.argsort(iv[:, 0])]
    return iv


# trace theorem proxy ----------------------------------------------------------

@dataclass(frozen=True)
class TraceRow:
    k: int
    q: int
    fraction: float
    threshold: float
    samples: int
    beta_of_q: float

    def to_dict(self) -> dict:
        return {"k": self.k, "q": self.q, "fraction": self.fraction, "threshold": self.threshold,
                "samples": self.samples, "beta_of_q": self.beta_of_q if math.isfinite(self.beta_of_q) else "inf"}


@dataclass(frozen=True)
class TraceReport:
    rows: tuple[TraceRow, ...]
    Lambda: float
    sampler: str
    notice: str = ("fraction of sampled energies with |Tr A_q| < 2 - exp(-10 Lambda q); "
                   "energies are uniform on the bands of a long periodic extension, a proxy for spectral weight")

    def to_dict(self) -> dict:
        return {"rows": [r.to_dict() for r in self.rows], "Lambda": self.Lambda,
                "sampler": self.sampler, "notice": self.notice}


def sample_energies(src: PotentialSource, spec: str | Sequence[float], n: int, seed: int = 0) -> np.ndarray:
    """``bands:Q`` draws uniformly from the Q-periodic extension's bands;
    ``uniform:a:b`` uniformly from [a, b]; a sequence is used as given."""
    if not isinstance(spec, str):
        return np.asarray(spec, dtype=float)
    rng = np.random.default_rng(seed)
    kind, _, arg = spec.partition(":")
    if kind == "bands":
        Q = int(arg) if arg else 1024
        return periodic_band_set(src, Q).sample(n, rng)
    if kind == "uniform":
        a, b = (float(x) for x in arg.split(":"))
        return rng.uniform(a, b, n)
    if kind == "spectral":
        return spectral_quantile_energies(src, int(arg) if arg else n)
    if kind == "auto":
        return auto_energies(src, int(arg) if arg else n)
    raise PreconditionError(f"unknown energy sampler {spec!r}")


def spectral_quantile_energies(src: PotentialSource, N: int, half_width: int = 1500) -> np.ndarray:
    """Weighted quantiles (k + 1/2)/N, k < N, of the eigenvalues of the box
    [-half_width, half_width], weighted by |psi(0)|^2 + |psi(1)|^2.

    This approximates quantiles of the two-site spectral measure, so the
    picks land where that measure actually lives.  Repeated picks (a
    measure dominated by a few eigenvalues) are returned once.
    """
    if N < 1:
        raise PreconditionError("need at least one energy")
    L = int(half_width)
    d = src.segment(-L, 2 * L + 1)
    w, vec = eigh_tridiagonal(d, np.ones(2 * L))
    wt = vec[L] ** 2 + vec[L + 1] ** 2
    c = np.cumsum(wt / wt.sum())
    idx = np.minimum(np.searchsorted(c, (np.arange(N) + 0.5) / N), len(w) - 1)
    return np.unique(w[idx])


def reference_period(src: PotentialSource, q_max: int = 200) -> int:
    """Largest convergent denominator <= q_max of the source frequency, or
    the period itself for periodic data (144 when neither applies)."""
    if src.family == "periodic":
        return len(src.data)
    a = src.params.get("_alpha")
    if a is None:
        return 144
    x = a if isinstance(a, Fraction) else Fraction(float(a))
    best = 1
    for q in (c.denominator for c in _convergents(x)):
        if q > q_max:
            break
        best = q
    return best


def _convergents(x: Fraction, depth: int = 64):
    p0, q0, p1, q1 = 1, 0, int(x), 1
    yield Fraction(p1, q1)
    r = x - int(x)
    for _ in range(depth):
        if r == 0:
            return
        x = 1 / r
        a = int(x)
        r = x - a
        p0, q0, p1, q1 = p1, q1, a * p1 + p0, a * q1 + q0
        yield Fraction(p1, q1)


def auto_energies(src: PotentialSource, N: int, q_max: int = 200) -> np.ndarray:
    """N band midpoints of the reference-period extension, spread evenly
    over the bands."""
    bs = periodic_band_set(src, reference_period(src, q_max))
    mids = bs.midpoints()
    idx = np.unique(np.linspace(0, len(mids) - 1, min(N, len(mids))).round().astype(int))
    return mids[idx]


def verify_trace_theorem(src: PotentialSource, alpha: FrequencyExpansion, k_range: Sequence[int],
                         E_sampler: str | Sequence[float] = "bands:1024", samples: int = 2000,
                         seed: int = 0, Lambda: float | None = None, lambda_n0: int = 32,
                         lambda_nmax: int = 256, lambda_shifts: Sequence[int] = tuple(range(0, 64, 8)),
                         tau_factor: float = 10.0) -> TraceReport:
    """Fraction of sampled energies with |Tr A_{q_k}(E)| < 2 - e^{-10 Lambda q_k}.

    Lambda is measured on (a subsample of) the sampled energies unless given.
    """
    k_range = list(k_range)
    if not k_range:
        return TraceReport((), float("nan") if Lambda is None else Lambda, str(E_sampler))
    E = sample_energies(src, E_sampler, samples, seed)
    if Lambda is None:
        sub = np.quantile(E, np.linspace(0, 1, 41))
        Lambda = norm_bound_Lambda(src, sub, lambda_nmax, lambda_n0, lambda_shifts).Lambda
    rows = []
    for k in k_range:
        if not 1 <= k <= alpha.depth:
            raise PreconditionError(f"convergent index {k} outside 1..{alpha.depth}")
        q = alpha.convergent(k)[1]
        if q > 10 ** 7:
            raise PreconditionError(f"q_{k} = {q} is beyond the feasible window")
        thr = 2 - math.exp(-tau_factor * Lambda * q)
        T = traces(src, E, int(q))
        frac = float(np.mean(np.abs(T) < thr))
        beta_q = repetition_defect(src, int(q), 1).beta_of_q
        rows.append(TraceRow(k, int(q), frac, thr, len(E), beta_q))
    return TraceReport(tuple(rows), float(Lambda), str(E_sampler))


# localized blocks -------------------------------------------------------------

@dataclass(frozen=True)
class BlockRow:
    N: int
    start: int
    stop: int
    j_max: int
    log_norm_max: float
    log_threshold: float

    @property
    def witness(self) -> bool:
        return self.log_norm_max > self.log_threshold


@dataclass(frozen=True)
class BlockReport:
    rows: tuple[BlockRow, ...]
    L: float
    L_stderr: float
    c2: float
    d: int
    k_n: int
    q: int

    @property
    def all_witnessed(self) -> bool:
        return all(r.witness for r in self.rows)

    def to_dict(self) -> dict:
        return {"L": self.L, "L_stderr": self.L_stderr, "c2": self.c2, "d": self.d, "k_n": self.k_n,
                "q": self.q, "rows": [{"N": r.N, "start": r.start, "stop": r.stop, "j_max": r.j_max,
                                        "log_norm_max": r.log_norm_max, "log_threshold": r.log_threshold,
                                        "witness": r.witness} for r in self.rows]}


def verify_localized_blocks(src: PotentialSource, E: float, q: int, window: int, d: int = 2,
                            c2: float | None = None, lyap_n: int = 4000, lyap_samples: int = 16,
                            phase_samples: int = 64) -> BlockReport:
    """For each block [2Nq, 2(N+1)q) inside [0, window) report max ||A_j||_HS
    against e^{k_n L/16}, k_n = floor(c2 q/(4d)) - 1.

    c2 defaults to the measured fraction of phases with ||A_q||_HS^2 > e^{qL/8}.
    """
    est = lyapunov_exponent(src, E, lyap_n, lyap_samples)
    if not est.value - 3 * est.stderr > 0:
        raise PreconditionError(f"Lyapunov estimate {est.value:.4g} +- {est.stderr:.2g} has no positive margin")
    L = est.value
    if c2 is None:
        from .cocycle import _phase_sources

        rows_v = []
        for s, k in _phase_sources(src, phase_samples):
            rows_v.append(s.segment(k + 1, q))
        M, ls = _kernels.transfer_batch(np.array(rows_v), np.full(len(rows_v), float(E)))
        log_hs2 = 2 * (ls + np.log(np.sqrt((M ** 2).sum(axis=(1, 2)))))
        c2 = float(np.mean(log_hs2 > q * L / 8))
    k_n = int(math.floor(c2 * q / (4 * d))) - 1
    log_thr = k_n * L / 16
    rows = []
    n_blocks = window // (2 * q)
    if n_blocks:
        path = _kernels.norm_path(src.segment(1, n_blocks * 2 * q)[None, :], np.array([float(E)]))[0]
        # path[j-1] = log||A_j||; A_0 = I has log||I||_HS = log sqrt 2
        full = np.concatenate([[0.5 * math.log(2)], path])
        for N in range(n_blocks):
            a, b = 2 * N * q, 2 * (N + 1) * q
            seg = full[a:b]
            j = int(np.argmax(seg))
            rows.append(BlockRow(N, a, b, a + j, float(seg[j]), float(log_thr)))
    return BlockReport(tuple(rows), L, est.stderr, c2, d, k_n, q)
