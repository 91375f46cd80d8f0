"""Wavepacket spreading on a finite box and transport exponents.

The Abel-averaged moment

    <|X|^p>(T) = sum_n |n|^p (2/T) int_0^inf e^{-2t/T} |<e^{-itH} delta_0, delta_n>|^2 dt

is evaluated exactly from the eigendecomposition H = Psi diag(lam) Psi^T of
the box Hamiltonian: with w_a = Psi[0, a] (the component on the initial
site) the time integral of e^{-it(lam_a - lam_b)} against the exponential
weight is the Lorentzian 1 / (1 + ((lam_a - lam_b) T / 2)^2), so

    <|X|^p>(T) = sum_{a,b} K_ab(T) Y_ab,   Y = (Psi^T |n|^p Psi) o (w w^T).
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np
from scipy.linalg import eigh_tridiagonal

from .errors import DomainError, InsufficientDataError, PreconditionError
from .potential import PotentialSource
from .scaling import ScalingFit, window_slopes

BOUNDARY_TOL = 1e-6
EDGE_SITES = 32
# The exponential weight still has mass e^{-2k} beyond t = kT, so the box
# has to contain the ballistic front up to several T_max.
SIZING_FACTOR = 8
MAX_SITES = 8001
_BLOCK = 512


@dataclass(frozen=True, eq=False)
class EvolutionSetup:
    """Box [-L, L] with its eigendecomposition; the walker starts at site 0."""

    src: PotentialSource
    L: int
    eigenvalues: np.ndarray = field(repr=False)
    eigenvectors: np.ndarray = field(repr=False)
    T_max: float

    @property
    def sites(self) -> np.ndarray:
        return np.arange(-self.L, self.L + 1)

    @property
    def initial_weights(self) -> np.ndarray:
        return self.eigenvectors[self.L, :]

    def orthonormality_defect(self) -> float:
        P = self.eigenvectors
        return float(np.max(np.abs(P.T @ P - np.eye(P.shape[1]))))

    def amplitudes(self, t: float) -> np.ndarray:
        """<e^{-itH} delta_0, delta_n> for n = -L..L."""
        w = self.initial_weights
        return self.eigenvectors @ (w * np.exp(-1j * self.eigenvalues * t))

    def normalization_defect(self, times: Sequence[float]) -> float:
        return float(max(abs(np.sum(np.abs(self.amplitudes(t)) ** 2) - 1.0) for t in times))


def box_half_width(src: PotentialSource, T_max: float, factor: float = SIZING_FACTOR) -> int:
    """Ballistic sizing: speed at most 2 + ||V||, times the Abel tail factor."""
    return int(math.ceil((2.0 + src.sup_norm()) * factor * T_max)) + 64


def evolution_setup(src: PotentialSource, T_max: float, L: int | None = None,
                    max_sites: int = MAX_SITES) -> EvolutionSetup:
    if not T_max > 0:
        raise DomainError("T_max must be positive")
    L = box_half_width(src, T_max) if L is None else int(L)
    if 2 * L + 1 > max_sites:
        raise PreconditionError(f"box of {2 * L + 1} sites exceeds the dense-eigensolver limit {max_sites}; "
                                f"lower T_max (now {T_max:g})")
    src.require(-L, L)
    lam, psi = eigh_tridiagonal(src.segment(-L, 2 * L + 1), np.ones(2 * L))
    return EvolutionSetup(src, L, lam, psi, float(T_max))


@dataclass(frozen=True)
class MomentSeries:
    p: float
    times: tuple[float, ...]
    values: tuple[float, ...]
    L: int
    boundary_weight: tuple[float, ...] = ()

    def to_csv(self) -> str:
        rows = ["T,moment"] + [f"{t!r},{v!r}" for t, v in zip(self.times, self.values)]
        return "\n".join(rows) + "\n"

    def to_dict(self) -> dict:
        return {"p": self.p, "times": list(self.times), "values": list(self.values), "L": self.L,
                "boundary_weight": list(self.boundary_weight)}


def _lorentz_sum(lam: np.ndarray, Y: np.ndarray, T: float) -> float:
    tot = 0.0
    h = 0.5 * T
    for i in range(0, len(lam), _BLOCK):
        d = (lam[i:i + _BLOCK, None] - lam[None, :]) * h
        tot += float(np.sum(Y[i:i + _BLOCK] / (1.0 + d * d)))
    return tot


def _weighted_gram(setup: EvolutionSetup, site_weight: np.ndarray) -> np.ndarray:
    P = setup.eigenvectors
    w = setup.initial_weights
    return (P.T @ (site_weight[:, None] * P)) * np.outer(w, w)


def evolve_moments(setup: EvolutionSetup, p: float, T_grid: Sequence[float], workers: int = 1,
                   check_boundary: bool = True) -> MomentSeries:
    """Abel-averaged p-th moments at the times in ``T_grid``.

    Raises PreconditionError when a time exceeds the setup's T_max or when
    the averaged weight on the outer EDGE_SITES sites reaches BOUNDARY_TOL
    (the box must then be enlarged).
    """
    if not p > 0:
        raise DomainError("p must be positive")
    T = np.asarray(T_grid, dtype=float)
    if len(T) == 0 or np.any(T <= 0):
        raise DomainError("times must be positive")
    if T.max() > setup.T_max * (1 + 1e-12):
        raise PreconditionError(f"T = {T.max():g} beyond the box's safe horizon {setup.T_max:g}")
    n = np.abs(setup.sites).astype(float)
    Y = _weighted_gram(setup, n ** p)
    lam = setup.eigenvalues

    def run(Ymat):
        if workers > 1:
            with ThreadPoolExecutor(workers) as ex:
                return list(ex.map(lambda t: _lorentz_sum(lam, Ymat, t), T))
        return [_lorentz_sum(lam, Ymat, t) for t in T]

    vals = [max(v, 0.0) for v in run(Y)]
    bw = ()
    if check_boundary:
        edge = (n > setup.L - EDGE_SITES).astype(float)
        bw = tuple(float(b) for b in run(_weighted_gram(setup, edge)))
        worst = max(bw)
        if worst >= BOUNDARY_TOL:
            raise PreconditionError(f"boundary weight {worst:.3g} >= {BOUNDARY_TOL:g}; enlarge the box")
    return MomentSeries(float(p), tuple(float(t) for t in T), tuple(float(v) for v in vals), setup.L, bw)


@dataclass(frozen=True)
class TransportExponents:
    beta_plus: float
    beta_minus: float
    fit: ScalingFit
    horizon: float

    def __iter__(self) -> Iterator[float]:
        return iter((self.beta_plus, self.beta_minus))

    def to_dict(self) -> dict:
        return {"beta_plus": self.beta_plus, "beta_minus": self.beta_minus, "horizon": self.horizon,
                "fit": self.fit.to_dict()}


def transport_exponents(ms: MomentSeries, window: int = 4) -> TransportExponents:
    """Max and min of the windowed slopes of log<|X|^p> / (p log T) over the
    later half of the time grid (a finite-horizon proxy for limsup/liminf)."""
    T = np.asarray(ms.times, dtype=float)
    v = np.asarray(ms.values, dtype=float)
    if len(T) < 8 or T.min() <= 0 or math.log10(T.max() / T.min()) < 2 - 1e-9:
        raise InsufficientDataError("need >= 8 times spanning >= 2 decades")
    if np.any(v <= 0):
        raise InsufficientDataError("moments must be positive for a log-log fit")
    order = np.argsort(T)
    x, y = np.log(T[order]), np.log(v[order]) / ms.p
    k0 = len(x) // 2
    xt, yt = x[k0:], y[k0:]
    ws = window_slopes(xt, yt, window)
    slope, icpt = np.polyfit(xt, yt, 1)
    res = yt - (slope * xt + icpt)
    fit = ScalingFit(tuple(float(a) for a in np.exp(xt)), tuple(float(b) for b in np.exp(yt * ms.p)),
                     float(slope), float(icpt), int(window), tuple(float(s) for s in ws),
                     float(np.sqrt((res ** 2).mean())), extra={"p": ms.p, "tail_start": int(k0)})
    return TransportExponents(float(ws.max()), float(ws.min()), fit, float(T.max()))


def boundary_certificate(src: PotentialSource, p: float, T_grid: Sequence[float],
                         L: int | None = None) -> float:
    """Largest relative change of the moments when the box is doubled."""
    T_max = float(max(T_grid))
    a = evolution_setup(src, T_max, L)
    b = evolution_setup(src, T_max, 2 * a.L)
    ma = np.array(evolve_moments(a, p, T_grid).values)
    mb = np.array(evolve_moments(b, p, T_grid).values)
    return float(np.max(np.abs(ma - mb) / np.maximum(np.abs(mb), 1e-300)))
