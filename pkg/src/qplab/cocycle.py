"""Schrodinger cocycles and exact SL(2,R) algebra.

One step is A(V, E) = [[E - V, -1], [1, 0]] acting on (u_{n+1}, u_n), and
A_n(T^k theta) = A(V(k+n)) ... A(V(k+1)).  Long products are carried as a
normalised matrix plus a log scale so they never overflow.
"""
from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import _kernels
from .errors import DomainError, NumericError, PreconditionError
from .potential import PotentialSource

UNIMODULAR_TOL = 1e-12
POWER_DET_TOL = 1e-8
PARABOLIC_SWITCH = 1e-10
CROSSCHECK_BAND = (1e-12, 1e-8)
# Chebyshev recurrence below this power, closed forms above
RECURRENCE_MAX_K = 256


@dataclass(frozen=True)
class Mat2:
    a: float
    b: float
    c: float
    d: float

    @classmethod
    def from_array(cls, m) -> "Mat2":
        m = np.asarray(m, dtype=float)
        return cls(float(m[0, 0]), float(m[0, 1]), float(m[1, 0]), float(m[1, 1]))

    @classmethod
    def unimodular(cls, a, b, c, d, tol: float = UNIMODULAR_TOL) -> "Mat2":
        """Checked SL(2,R) constructor; rescales by sqrt(det) within tolerance."""
        det = a * d - b * c
        if not abs(det - 1.0) <= tol:
            raise DomainError(f"|det - 1| = {abs(det - 1.0):.3g} exceeds {tol:g}")
        s = math.sqrt(det)
        return cls(a / s, b / s, c / s, d / s)

    @classmethod
    def identity(cls) -> "Mat2":
        return cls(1.0, 0.0, 0.0, 1.0)

    @property
    def array(self) -> np.ndarray:
        return np.array([[self.a, self.b], [self.c, self.d]])

    @property
    def trace(self) -> float:
        return self.a + self.d

    @property
    def det(self) -> float:
        return self.a * self.d - self.b * self.c

    def hs_norm(self) -> float:
        return math.sqrt(self.a ** 2 + self.b ** 2 + self.c ** 2 + self.d ** 2)

    def op_norm(self) -> float:
        return float(np.linalg.norm(self.array, 2))

    def inv(self) -> "Mat2":
        det = self.det
        return Mat2(self.d / det, -self.b / det, -self.c / det, self.a / det)

    def __matmul__(self, other: "Mat2") -> "Mat2":
        return Mat2(self.a * other.a + self.b * other.c, self.a * other.b + self.b * other.d,
                    self.c * other.a + self.d * other.c, self.c * other.b + self.d * other.d)

    def __sub__(self, other: "Mat2") -> "Mat2":
        return Mat2(self.a - other.a, self.b - other.b, self.c - other.c, self.d - other.d)

    def __add__(self, other: "Mat2") -> "Mat2":
        return Mat2(self.a + other.a, self.b + other.b, self.c + other.c, self.d + other.d)

    def scale(self, s: float) -> "Mat2":
        return Mat2(self.a * s, self.b * s, self.c * s, self.d * s)

    def to_list(self) -> list:
        return [[self.a, self.b], [self.c, self.d]]


def _arr(A) -> np.ndarray:
    if isinstance(A, Mat2):
        return A.array
    return np.asarray(A, dtype=float)


def hs_norm(A) -> np.ndarray | float:
    a = _arr(A)
    return np.sqrt((a ** 2).sum(axis=(-2, -1)))


def op_norm(A) -> np.ndarray | float:
    """Largest singular value of (..., 2, 2) arrays, closed form."""
    a = _arr(A)
    p, q, r, s = a[..., 0, 0], a[..., 0, 1], a[..., 1, 0], a[..., 1, 1]
    # sigma_max = (|rotation part| + |reflection part|) / 2, free of cancellation
    return 0.5 * (np.hypot(p + s, q - r) + np.hypot(p - s, q + r))


def one_step(v: float, E: float) -> Mat2:
    return Mat2(E - v, -1.0, 1.0, 0.0)


# transfer products ----------------------------------------------------------

def transfer_matrices(src: PotentialSource, E, n: int, shift: int = 0):
    """Normalised A_n(T^shift theta, E) for an array of energies plus log scales.

    Returns (M, logscale) with A_n = M * exp(logscale), ||M||_HS = 1.
    Only n >= 0 here.
    """
    E = np.atleast_1d(np.asarray(E, dtype=float))
    if n < 0:
        raise DomainError("use transfer_product for negative n")
    src.require(shift + 1, shift + max(n, 1))
    v = src.segment(shift + 1, n)
    vb = np.broadcast_to(v, (len(E), n))
    return _kernels.transfer_batch(vb, E)


def traces(src: PotentialSource, E, q: int, shift: int = 0) -> np.ndarray:
    """Tr A_q(T^shift theta, E); values beyond double range become +-inf."""
    M, ls = transfer_matrices(src, E, q, shift)
    t = M[:, 0, 0] + M[:, 1, 1]
    with np.errstate(over="ignore", invalid="ignore"):
        out = t * np.exp(ls)
    return np.where(t == 0.0, 0.0, out)


def log_norms(src: PotentialSource, E, n: int, shift: int = 0, norm: str = "hs") -> np.ndarray:
    M, ls = transfer_matrices(src, E, n, shift)
    nm = hs_norm(M) if norm == "hs" else op_norm(M)
    return ls + np.log(nm)


class TransferChain:
    """Lazily evaluated A_n(theta, E) with sqrt(n)-spaced checkpoints.

    ``direction='reversed'`` gives the cocycle over the inverse rotation,
    which for V(n) = f(theta + n alpha) is the chain of W(j) = V(-j-1).
    Checkpoint writes are guarded by a lock; reads are lock-free.
    """

    def __init__(self, src: PotentialSource, E: float, direction: str = "forward", shift: int = 0):
        if direction not in ("forward", "reversed"):
            raise DomainError("direction must be 'forward' or 'reversed'")
        self.src = src
        self.E = float(E)
        self.direction = direction
        self.shift = int(shift)
        self._chain_src = src if direction == "forward" else src.reindexed(-1, -1)
        self._checkpoints: dict[int, tuple[np.ndarray, float]] = {0: (np.eye(2) / math.sqrt(2), 0.5 * math.log(2))}
        self._stride = None
        self._lock = threading.Lock()

    @property
    def potential(self) -> PotentialSource:
        return self._chain_src

    def _segment_product(self, start: int, length: int):
        """Normalised product of steps start+1 .. start+length."""
        if length == 0:
            return np.eye(2) / math.sqrt(2), 0.5 * math.log(2)
        M, ls = transfer_matrices(self._chain_src, [self.E], length, start)
        return M[0], float(ls[0])

    def log_product(self, n: int, shift: int = 0) -> tuple[np.ndarray, float]:
        """A_n(T^shift theta) as (normalised matrix, log scale); n may be negative."""
        k0 = self.shift + shift
        if n < 0:
            M, ls = self.log_product(-n, shift + n)
            # det A = 1, so A^{-1} = adj(A) = adj(M) e^{ls} and ||adj M|| = ||M||
            return np.array([[M[1, 1], -M[0, 1]], [-M[1, 0], M[0, 0]]]), ls
        if shift != 0:
            return self._segment_product(k0, n)
        if self._stride is None:
            self._stride = max(32, math.isqrt(max(n, 1)))
        s = self._stride
        base = (n // s) * s
        start = max(k for k in self._checkpoints if k <= base) if base else 0
        M, ls = self._checkpoints[start]
        cur = start
        while cur < base:
            P, lp = self._segment_product(k0 + cur, s)
            M = P @ M
            nm = math.sqrt((M ** 2).sum())
            M = M / nm
            ls = ls + lp + math.log(nm)
            cur += s
            with self._lock:
                self._checkpoints.setdefault(cur, (M, ls))
        if n > base:
            P, lp = self._segment_product(k0 + base, n - base)
            M = P @ M
            nm = math.sqrt((M ** 2).sum())
            M = M / nm
            ls = ls + lp + math.log(nm)
        return M, ls

    def product(self, n: int, shift: int = 0) -> Mat2:
        if n == 0:
            return Mat2.identity()
        M, ls = self.log_product(n, shift)
        with np.errstate(over="ignore"):
            s = math.exp(ls) if ls < 709 else math.inf
        if not math.isfinite(s):
            raise NumericError(f"|A_{n}| ~ e^{ls:.1f} is not representable; use log_product")
        return Mat2.from_array(M * s)

    def norm(self, n: int, shift: int = 0, kind: str = "hs") -> float:
        """log ||A_n||."""
        M, ls = self.log_product(n, shift)
        return ls + math.log(float(hs_norm(M) if kind == "hs" else op_norm(M)))

    def trace(self, n: int, shift: int = 0) -> float:
        M, ls = self.log_product(n, shift)
        t = M[0, 0] + M[1, 1]
        return t * math.exp(ls) if ls < 709 else math.copysign(math.inf, t)


def transfer_product(chain: TransferChain, n: int, shift: int = 0) -> Mat2:
    return chain.product(n, shift)


# Lyapunov exponent and the uniform bound ------------------------------------

@dataclass(frozen=True)
class LyapunovEstimate:
    value: float
    stderr: float
    n: int
    samples: int


def _phase_sources(src: PotentialSource, samples: int) -> list[tuple[PotentialSource, int]]:
    """(source, shift) pairs sampling the hull: equidistributed phases for
    rotation families, consecutive shifts otherwise."""
    if "theta" in src.params and src.family != "skew_shift" and samples > 1:
        out = []
        for s in range(samples):
            p = dict(src.params)
            p["theta"] = (s + 0.5) / samples
            out.append((PotentialSource(src.family, p, src.window, src.index_sign, src.index_offset, src.data), 0))
        return out
    if samples == 1:
        return [(src, 0)]
    return [(src, s) for s in range(samples)]


def lyapunov_exponent(src: PotentialSource, E: float, n: int, theta_samples: int = 16) -> LyapunovEstimate:
    """Phase average of (1/n) log ||A_n(theta, E)|| (operator norm)."""
    if n < 1 or theta_samples < 1:
        raise PreconditionError("need n >= 1 and theta_samples >= 1")
    rows = []
    Es = []
    for s, k in _phase_sources(src, theta_samples):
        s.require(k + 1, k + n)
        rows.append(s.segment(k + 1, n))
        Es.append(float(E))
    M, ls = _kernels.transfer_batch(np.array(rows), np.array(Es))
    vals = (ls + np.log(op_norm(M))) / n
    if not np.all(np.isfinite(vals)):
        raise NumericError("non-finite Lyapunov sample despite renormalisation")
    se = float(vals.std(ddof=1) / math.sqrt(len(vals))) if len(vals) > 1 else 0.0
    return LyapunovEstimate(float(vals.mean()), se, n, len(vals))


@dataclass(frozen=True)
class LambdaResult:
    Lambda: float
    E: float
    shift: int
    n: int
    table: tuple[tuple[float, float, int, int], ...]  # (E, rate, shift, n) per energy
    shifts: tuple[int, ...]

    def to_dict(self) -> dict:
        return {"Lambda": self.Lambda, "E": self.E, "shift": self.shift, "n": self.n,
                "table": [list(r) for r in self.table], "shifts": list(self.shifts),
                "caveat": "sup over a finite shift sample; the true bound may be larger"}


def default_shifts(n_max: int, count: int = 8) -> tuple[int, ...]:
    return tuple(int(x) for x in np.unique(np.linspace(0, 4 * n_max, count).astype(int)))


def norm_bound_Lambda(src: PotentialSource, E_set: Sequence[float], n_max: int, n0: int,
                      shifts: Sequence[int] | None = None) -> LambdaResult:
    """max over E, sampled shifts k and n0 <= n <= n_max of (1/n) log||A_n(T^k theta, E)||_HS."""
    E_set = [float(e) for e in E_set]
    if not E_set:
        raise PreconditionError("E_set is empty")
    if not n_max > n0 >= 1:
        raise PreconditionError("need n_max > n0 >= 1")
    shifts = tuple(default_shifts(n_max) if shifts is None else (int(k) for k in shifts))
    E_arr = np.array(E_set)
    best = np.full(len(E_arr), -np.inf)
    best_k = np.zeros(len(E_arr), dtype=int)
    best_n = np.zeros(len(E_arr), dtype=int)
    for k in shifts:
        src.require(k + 1, k + n_max)
        v = np.broadcast_to(src.segment(k + 1, n_max), (len(E_arr), n_max))
        r, arg = _kernels.max_rate_batch(v, E_arr, n0)
        upd = r > best
        best[upd] = r[upd]
        best_k[upd] = k
        best_n[upd] = arg[upd]
    i = int(np.argmax(best))
    table = tuple((float(E_arr[j]), float(best[j]), int(best_k[j]), int(best_n[j])) for j in range(len(E_arr)))
    return LambdaResult(float(best[i]), float(E_arr[i]), int(best_k[i]), int(best_n[i]), table, shifts)


# powers of SL(2,R) matrices -------------------------------------------------

def _check_unimodular(a: np.ndarray, tol: float = POWER_DET_TOL):
    det = a[..., 0, 0] * a[..., 1, 1] - a[..., 0, 1] * a[..., 1, 0]
    if np.any(~(np.abs(det - 1.0) <= tol)):
        raise DomainError(f"matrix is not unimodular within {tol:g}")


def _coeffs_recurrence(t: np.ndarray, k: np.ndarray):
    # s_{j+1} = t s_j - s_{j-1} from (s_{-1}, s_0) = (-1, 0); record (s_{k-1}, s_k)
    s_prev = -np.ones_like(t)
    s_cur = np.zeros_like(t)
    out_prev = np.empty_like(t)
    out_cur = np.empty_like(t)
    for j in range(int(k.max(initial=0)) + 1):
        hit = k == j
        out_prev[hit] = s_prev[hit]
        out_cur[hit] = s_cur[hit]
        s_prev, s_cur = s_cur, t * s_cur - s_prev
    return out_cur, 0.5 * t * out_cur - out_prev


def _coeffs_closed(t: np.ndarray, k: np.ndarray):
    """s_k = sinh(k psi)/sinh(psi), c_k = cosh(k psi) and their elliptic analogues."""
    at = np.abs(t)
    sign = np.where(t < 0, -1.0, 1.0)
    kf = k.astype(float)
    s = np.empty_like(t)
    c = np.empty_like(t)
    hyp = at > 2
    if hyp.any():
        x = (at[hyp] - 2) / 2
        psi = np.log1p(x + np.sqrt(x * (2 + x)))
        with np.errstate(over="ignore"):
            s[hyp] = np.sinh(kf[hyp] * psi) / np.sinh(psi)
            c[hyp] = np.cosh(kf[hyp] * psi)
    ell = ~hyp
    if ell.any():
        psi = 2 * np.arcsin(np.sqrt((2 - at[ell]) / 4))
        sp = np.sin(psi)
        s[ell] = np.where(sp > 0, np.sin(kf[ell] * psi) / np.where(sp > 0, sp, 1.0), kf[ell])
        c[ell] = np.cos(kf[ell] * psi)
    # trace -t: rho -> -rho flips s_k by (-1)^{k+1} and c_k by (-1)^k
    odd = (k % 2) == 1
    s = np.where((sign < 0) & ~odd, -s, s)
    c = np.where((sign < 0) & odd, -c, c)
    return s, c


def _power_coefficients(t: np.ndarray, k: np.ndarray):
    t = np.asarray(t, dtype=float)
    k = np.broadcast_to(np.asarray(k, dtype=np.int64), t.shape) if np.ndim(k) < t.ndim else np.asarray(k, dtype=np.int64)
    t, k = np.broadcast_arrays(t, k)
    t = np.array(t, dtype=float)
    k = np.array(k, dtype=np.int64)
    if np.any(k < 0):
        raise DomainError("coefficients are defined for k >= 0")
    small = k <= RECURRENCE_MAX_K
    s = np.empty(t.shape)
    c = np.empty(t.shape)
    if small.any():
        s[small], c[small] = _coeffs_recurrence(t[small], k[small])
    if (~small).any():
        s[~small], c[~small] = _coeffs_closed(t[~small], k[~small])
    return s, c


def sl2_power_coefficients(A, k):
    """(s_k, c_k) with A^k = s_k (A - Tr(A)/2 I) + c_k I.

    s_k = (rho^k - rho^-k)/(rho - rho^-1), c_k = (rho^k + rho^-k)/2, both
    real for hyperbolic and elliptic A.  Works on Mat2 or (..., 2, 2)
    arrays with broadcastable k.
    """
    a = _arr(A)
    _check_unimodular(a)
    t = a[..., 0, 0] + a[..., 1, 1]
    s, c = _power_coefficients(t, k)
    if isinstance(A, Mat2) and np.ndim(k) == 0:
        return float(s), float(c)
    return s, c


def _parabolic_power(a: np.ndarray, t: np.ndarray, k: np.ndarray) -> np.ndarray:
    # A^k = k(A - I) + I at trace 2, and (-1)^k (k(-A - I) + I) at trace -2
    sgn = np.where(t < 0, -1.0, 1.0)
    eye = np.eye(2)
    kk = k[..., None, None].astype(float)
    base = sgn[..., None, None] * a
    p = kk * (base - eye) + eye
    flip = np.where((sgn < 0) & (k % 2 == 1), -1.0, 1.0)
    return p * flip[..., None, None]


def _formula_power(a: np.ndarray, t: np.ndarray, k: np.ndarray) -> np.ndarray:
    s, c = _power_coefficients(t, k)
    eye = np.eye(2)
    return s[..., None, None] * (a - 0.5 * t[..., None, None] * eye) + c[..., None, None] * eye


def sl2_power(A, k):
    """A^k from the closed formula (parabolic branch when |Tr -+ 2| <= 1e-10).

    Negative k use the inverse.  Accepts Mat2 or (..., 2, 2) arrays.
    """
    a = _arr(A)
    _check_unimodular(a)
    k_arr = np.asarray(k, dtype=np.int64)
    t_full = a[..., 0, 0] + a[..., 1, 1]
    k_arr = np.broadcast_to(k_arr, np.broadcast_shapes(k_arr.shape, t_full.shape))
    a_b = np.broadcast_to(a, k_arr.shape + (2, 2))
    neg = k_arr < 0
    if neg.any():
        inv = np.stack([np.stack([a_b[..., 1, 1], -a_b[..., 0, 1]], -1),
                        np.stack([-a_b[..., 1, 0], a_b[..., 0, 0]], -1)], -2)
        a_b = np.where(neg[..., None, None], inv, a_b)
        k_arr = np.abs(k_arr)
    t = a_b[..., 0, 0] + a_b[..., 1, 1]
    parab = np.abs(np.abs(t) - 2) <= PARABOLIC_SWITCH
    out = np.empty(k_arr.shape + (2, 2))
    if parab.any():
        out[parab] = _parabolic_power(a_b[parab], t[parab], k_arr[parab])
    if (~parab).any():
        out[~parab] = _formula_power(a_b[~parab], t[~parab], k_arr[~parab])
    if not np.all(np.isfinite(out)):
        raise NumericError("power overflowed double range")
    if isinstance(A, Mat2) and np.ndim(k) == 0:
        return Mat2.from_array(out)
    return out


def power_branch_gap(A, k) -> float:
    """Relative HS gap between the parabolic branch and the rho-formula.

    Meaningful in the cross-check band |Tr -+ 2| in [1e-12, 1e-8]; the gap
    is of order (k^2 - 1)|Tr -+ 2|/6 there.
    """
    a = _arr(A)
    _check_unimodular(a)
    t = np.asarray(a[..., 0, 0] + a[..., 1, 1])
    kk = np.broadcast_to(np.asarray(k, dtype=np.int64), t.shape)
    p = _parabolic_power(a, t, kk)
    f = _formula_power(a, t, kk)
    return float(np.max(hs_norm(p - f) / hs_norm(f)))


def iterated_power(A, k: int) -> np.ndarray:
    """Reference A^k by repeated multiplication."""
    a = _arr(A)
    out = np.broadcast_to(np.eye(2), a.shape).copy()
    for _ in range(k):
        out = a @ out
    return out


# conjugation to diagonal form -----------------------------------------------

@dataclass(frozen=True)
class Conjugation:
    B: Mat2
    rho: float
    norm_B: float
    bound: float
    residual: float
    holds: bool
    trace: float

    @property
    def ratio(self) -> float:
        """||B|| relative to the stated bound (undoubled)."""
        base = self.bound / (2.0 if abs(self.trace) > 6 else 1.0)
        return self.norm_B / base


def _eigvec(G: np.ndarray, lam: float) -> np.ndarray:
    a, b, c, d = G[0, 0], G[0, 1], G[1, 0], G[1, 1]
    v1 = np.array([b, lam - a])
    v2 = np.array([lam - d, c])
    v = v1 if np.hypot(*v1) >= np.hypot(*v2) else v2
    return v / np.hypot(*v)


def hyperbolic_conjugator(G) -> Conjugation:
    """B with |det B| = 1 and G = B diag(rho, 1/rho) B^{-1}.

    Columns are unit eigenvectors (second flipped so their inner product is
    nonnegative), then divided by sqrt|det|.  ``holds`` reports whether
    ||B|| <= sqrt||G|| / sqrt(|Tr G| - 2) (twice that when |Tr G| > 6),
    all norms operator norms.
    """
    g = _arr(G)
    _check_unimodular(g)
    t = float(g[0, 0] + g[1, 1])
    if abs(t) <= 2:
        raise DomainError(f"|Tr G| = {abs(t):.6g} <= 2: G is not hyperbolic")
    x = (abs(t) - 2) / 2
    r = 1 + x + math.sqrt(x * (2 + x))  # |rho| > 1, stable for traces near 2
    rho = math.copysign(r, t)
    u = _eigvec(g, rho)
    v = _eigvec(g, 1 / rho)
    if u @ v < 0:
        v = -v
    Bt = np.column_stack([u, v])
    det = Bt[0, 0] * Bt[1, 1] - Bt[0, 1] * Bt[1, 0]
    B = Bt / math.sqrt(abs(det))
    D = np.diag([rho, 1 / rho])
    Binv = np.linalg.inv(B)
    residual = float(np.linalg.norm(B @ D @ Binv - g, 2) / max(1.0, np.linalg.norm(g, 2)))
    nB = float(op_norm(B))
    bound = math.sqrt(float(op_norm(g))) / math.sqrt(abs(t) - 2)
    if abs(t) > 6:
        bound *= 2
    return Conjugation(Mat2.from_array(B), rho, nB, bound, residual, bool(nB <= bound * (1 + 1e-12)), t)


# perturbed products ----------------------------------------------------------

@dataclass(frozen=True)
class GapResult:
    actual: float
    bound: float
    M: float
    delta: float
    N: int

    @property
    def holds(self) -> bool:
        return self.actual <= self.bound


def product_perturbation_gap(G, deltas: Sequence, N: int | None = None) -> GapResult:
    """max_{n<=N} ||(G+D_n)...(G+D_1) - G^n||_HS against 2 N M^2 delta.

    M = max(1, max_{1<=j<=N} ||G^j||_HS), delta = max ||D_j||_HS.  Raises
    when N M delta >= 1/2, where the estimate says nothing.
    """
    g = _arr(G)
    D = np.asarray([_arr(x) for x in deltas], dtype=float).reshape(-1, 2, 2)
    if N is None:
        N = len(D)
    if N < 1 or len(D) < N:
        raise PreconditionError(f"need N >= 1 perturbations, have {len(D)} for N = {N}")
    D = D[:N]
    powers = np.empty((N + 1, 2, 2))
    powers[0] = np.eye(2)
    for j in range(1, N + 1):
        powers[j] = g @ powers[j - 1]
    M = max(1.0, float(hs_norm(powers[1:]).max()))
    delta = float(hs_norm(D).max()) if N else 0.0
    if N * M * delta >= 0.5:
        raise PreconditionError(f"N*M*delta = {N * M * delta:.4g} >= 1/2")
    P = np.eye(2)
    actual = 0.0
    for j in range(N):
        P = (g + D[j]) @ P
        actual = max(actual, float(hs_norm(P - powers[j + 1])))
    return GapResult(actual, 2 * N * M * M * delta, M, delta, N)


# telescoping across repeated blocks -------------------------------------------

@dataclass(frozen=True)
class TelescopeRow:
    i: int
    norm_delta: float
    bound: float

    @property
    def holds(self) -> bool:
        return self.norm_delta <= self.bound


@dataclass(frozen=True)
class TelescopeReport:
    rows: tuple[TelescopeRow, ...]
    Lambda: float
    C: float
    defect: float
    beta_of_q: float
    q: int
    E: float

    @property
    def holds(self) -> bool:
        return all(r.holds for r in self.rows)


def telescoping_defect(src: PotentialSource, E: float, q: int, i_max: int, n0: int = 1) -> TelescopeReport:
    """||A_q(T^{(i-1)q} theta) - A_q(theta)||_HS for i = 1..i_max with the bound
    |i-1| q C e^{Lambda q} d, where d is the block defect over |k| <= i_max,
    Lambda = max of (1/m) log||A_m(T^s theta)|| over all shifts s used and
    1 <= m <= q, and C = max(1, max ||A(V(n), E)||)^n0 over the scanned window."""
    from .potential import repetition_defect

    if q < 1 or i_max < 1:
        raise PreconditionError("need q >= 1 and i_max >= 1")
    prof = repetition_defect(src, q, i_max)
    d = prof.max_block_defect
    lo, hi = 1, i_max * q
    v = src.segment(lo, hi)
    step_norms = np.sqrt((E - v) ** 2 + 2.0)
    C = max(1.0, float(step_norms.max())) ** n0
    # exhaustive rate over the shifts that enter the telescoping sum
    n_shift = i_max * q
    rows_v = np.stack([src.segment(s + 1, q) for s in range(n_shift)])
    rates, _ = _kernels.max_rate_batch(rows_v, np.full(n_shift, float(E)), 1)
    Lam = max(0.0, float(rates.max()))
    M0, l0 = transfer_matrices(src, [E], q, 0)
    A0 = M0[0] * math.exp(l0[0])
    rows = []
    for i in range(1, i_max + 1):
        Mi, li = transfer_matrices(src, [E], q, (i - 1) * q)
        Ai = Mi[0] * math.exp(li[0])
        nd = float(hs_norm(Ai - A0))
        bound = abs(i - 1) * q * C * math.exp(Lam * q) * d
        rows.append(TelescopeRow(i, nd, bound))
    return TelescopeReport(tuple(rows), Lam, C, d, prof.beta_of_q, q, float(E))


# randomized lemma suites -------------------------------------------------------

@dataclass(frozen=True)
class SuiteResult:
    """Outcome of a randomized check: ``worst`` is the largest observed
    error (or ratio) and ``violations`` counts samples past ``tolerance``."""

    name: str
    samples: int
    violations: int
    worst: float
    tolerance: float
    extra: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.violations == 0

    def to_dict(self) -> dict:
        return {"name": self.name, "samples": self.samples, "violations": self.violations,
                "worst": self.worst, "tolerance": self.tolerance, "passed": self.passed, "extra": self.extra}


def _random_sl2_frame(rng: np.random.Generator, n: int, max_stretch: float) -> np.ndarray:
    """Random unimodular S = R(a) diag(s, 1/s) R(b) with 1 <= s <= max_stretch."""
    a, b = rng.uniform(0, 2 * np.pi, (2, n))
    s = np.exp(rng.uniform(0, math.log(max_stretch), n))

    def rot(x):
        c, si = np.cos(x), np.sin(x)
        return np.stack([np.stack([c, -si], -1), np.stack([si, c], -1)], -2)

    D = np.zeros((n, 2, 2))
    D[:, 0, 0], D[:, 1, 1] = s, 1 / s
    return rot(a) @ D @ rot(b)


def random_traces(rng: np.random.Generator, n: int, kind: str) -> np.ndarray:
    sign = rng.choice([-1.0, 1.0], n)
    if kind == "hyperbolic":
        return sign * rng.uniform(2.01, 6.0, n)
    if kind == "elliptic":
        return sign * rng.uniform(0.0, 1.99, n)
    if kind == "near_parabolic":
        d = 10 ** rng.uniform(-6, -2, n)
        return sign * (2 + rng.choice([-1.0, 1.0], n) * d)
    raise DomainError(f"unknown kind {kind!r}")


def random_sl2(rng: np.random.Generator, traces: np.ndarray, max_stretch: float = 3.0) -> np.ndarray:
    """Unimodular matrices S C S^{-1} with companion C = [[t, -1], [1, 0]]."""
    t = np.asarray(traces, dtype=float)
    C = np.zeros((len(t), 2, 2))
    C[:, 0, 0], C[:, 0, 1], C[:, 1, 0] = t, -1.0, 1.0
    S = _random_sl2_frame(rng, len(t), max_stretch)
    Sinv = np.stack([np.stack([S[:, 1, 1], -S[:, 0, 1]], -1), np.stack([-S[:, 1, 0], S[:, 0, 0]], -1)], -2)
    return S @ C @ Sinv


def power_suite(samples: int = 10_000, k_max: int = 64, seed: int = 0, tol: float = 1e-9) -> SuiteResult:
    """Closed-form powers against repeated multiplication, split evenly over
    hyperbolic, elliptic and near-parabolic traces."""
    rng = np.random.default_rng(seed)
    kinds = ("hyperbolic", "elliptic", "near_parabolic")
    t = np.concatenate([random_traces(rng, n, kd) for kd, n in
                        zip(kinds, np.diff(np.linspace(0, samples, 4).astype(int)))])
    A = random_sl2(rng, t)
    k = rng.integers(0, k_max + 1, samples)
    P = sl2_power(A, k)
    ref = np.broadcast_to(np.eye(2), A.shape).copy()
    for j in range(1, k_max + 1):
        ref = np.where((k >= j)[:, None, None], A @ ref, ref)
    err = hs_norm(P - ref) / hs_norm(ref)
    return SuiteResult("power_formula", samples, int(np.sum(~(err <= tol))), float(err.max()), tol,
                       {"k_max": k_max})


def conjugation_suite(samples: int = 10_000, seed: int = 0, tol: float = 1e-9,
                      constant: float = 1.0) -> SuiteResult:
    """Diagonalizing conjugators of hyperbolic G: reconstruction residual and
    ||B|| <= constant * sqrt||G|| / sqrt(|Tr G| - 2) (doubled for |Tr| > 6).

    Three quarters of the samples have 2 < |Tr| <= 6, the rest 6 < |Tr| <= 20.
    """
    rng = np.random.default_rng(seed)
    n_low = (3 * samples) // 4
    sign = rng.choice([-1.0, 1.0], samples)
    t = sign * np.concatenate([rng.uniform(2.0, 6.0, n_low), rng.uniform(6.0, 20.0, samples - n_low)])
    t = np.where(np.abs(t) <= 2.0 + 1e-9, sign * (2.0 + 1e-9), t)
    G = random_sl2(rng, t, max_stretch=4.0)
    bad_res = bad_bound = 0
    worst_res = worst_ratio = 0.0
    for g in G:
        c = hyperbolic_conjugator(g)
        worst_res = max(worst_res, c.residual)
        worst_ratio = max(worst_ratio, c.norm_B / c.bound)
        bad_res += not c.residual <= tol
        bad_bound += not c.norm_B <= constant * c.bound * (1 + 1e-12)
    return SuiteResult("conjugation_bound", samples, bad_res + bad_bound, worst_ratio, tol,
                       {"residual_violations": bad_res, "bound_violations": bad_bound,
                        "worst_residual": worst_res, "constant": constant})


def perturbation_suite(samples: int = 1000, N_max: int = 200, seed: int = 0) -> SuiteResult:
    """Perturbed products against 2 N M^2 delta with N M delta < 1/2."""
    rng = np.random.default_rng(seed)
    kinds = rng.choice(["hyperbolic", "elliptic", "near_parabolic"], samples)
    bad = 0
    worst = 0.0
    for kd in kinds:
        t = random_traces(rng, 1, str(kd))
        g = random_sl2(rng, t, max_stretch=2.0)[0]
        N = int(rng.integers(1, N_max + 1))
        powers = [g]
        for _ in range(N - 1):
            powers.append(g @ powers[-1])
        M = max(1.0, float(hs_norm(np.array(powers)).max()))
        delta = rng.uniform(0.01, 0.99) * 0.5 / (N * M)
        D = rng.normal(size=(N, 2, 2))
        D *= (delta * rng.uniform(0, 1, N) / hs_norm(D))[:, None, None]
        D[int(rng.integers(N))] *= 1.0 / max(float(hs_norm(D).max()) / delta, 1e-300)
        r = product_perturbation_gap(g, D, N)
        worst = max(worst, r.actual / r.bound if r.bound > 0 else 0.0)
        bad += not r.holds
    return SuiteResult("product_perturbation", samples, bad, worst, 1.0, {"N_max": N_max})
