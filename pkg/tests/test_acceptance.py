"""End-to-end acceptance checks, one test per criterion.

Each test records a PASS/FAIL line (collected in the terminal summary) and
then asserts the criterion at its stated tolerance.
"""
import math
import time

import numpy as np
import pytest

from qplab.arithmetic import construct_liouville_alpha, golden_expansion, is_alpha_diophantine_phase
from qplab.cli import run
from qplab.cocycle import (conjugation_suite, lyapunov_exponent, norm_bound_Lambda, perturbation_suite,
                           power_suite)
from qplab.dynamics import evolution_setup, evolve_moments, transport_exponents
from qplab.potential import almost_mathieu, free, repetition_defect, sturmian
from qplab.spectrum import (auto_energies, band_set, discriminant, sample_energies, sq_scaling,
                            trace_level_set, verify_trace_theorem)
from qplab.subordinacy import phi_independence_suite, jl_suite, spectral_dimension_estimate

GOLDEN = golden_expansion()


def test_c01_power_formula(criterion):
    t0 = time.perf_counter()
    r = power_suite(samples=10_000, k_max=64, seed=0, tol=1e-9)
    dt = time.perf_counter() - t0
    ok = r.violations == 0 and r.worst <= 1e-9 and dt < 5.0
    criterion(1, ok, f"violations={r.violations}/{r.samples} worst_rel={r.worst:.2e} time={dt:.2f}s")
    assert ok


def test_c02_conjugation_bound(criterion):
    r = conjugation_suite(samples=10_000, seed=0, tol=1e-9)
    ok = r.violations == 0
    criterion(2, ok, f"violations={r.violations}/{r.samples} (bound {r.extra['bound_violations']}, "
                     f"residual {r.extra['residual_violations']}) worst_ratio={r.worst:.4f} "
                     f"worst_residual={r.extra['worst_residual']:.1e}")
    assert ok


def test_c03_product_perturbation(criterion):
    r = perturbation_suite(samples=1000, N_max=200, seed=0)
    ok = r.violations == 0
    criterion(3, ok, f"violations={r.violations}/{r.samples} worst_ratio={r.worst:.3f}")
    assert ok


def test_c04_length_scale_inequality(criterion):
    r = jl_suite(samples=500, seed=0)
    ok = r.violations == 0
    criterion(4, ok, f"violations={r.violations}/{r.samples} ratio range "
                     f"[{r.extra['min_ratio']:.3f}, {r.extra['max_ratio']:.3f}] within "
                     f"[{r.extra['lower']:.4f}, {r.extra['upper']:.4f}]")
    assert ok


def test_c05_phi_independence(criterion):
    r = phi_independence_suite(samples=100, seed=0, tol=1e-6)
    ok = r.violations == 0
    criterion(5, ok, f"violations={r.violations}/{r.samples} worst_rel_spread={r.worst:.1e}")
    assert ok


def test_c06_free_laplacian(criterion):
    t0 = time.perf_counter()
    src = free()
    bs = band_set(discriminant(src, 1))
    band_ok = bs.count == 1 and np.allclose(bs.intervals[0], [-2.0, 2.0], atol=1e-9)
    n = 4096
    lyap = [lyapunov_exponent(src, E, n, 16) for E in np.linspace(-1.9, 1.9, 9)]
    lyap_ok = all(abs(L.value) <= 2.0 / n + 3 * L.stderr for L in lyap)
    sd = spectral_dimension_estimate(src, 0.0, np.logspace(-1, -4, 13)).extra["s_hat"]
    T = np.geomspace(0.5, 50.0, 12)
    te = transport_exponents(evolve_moments(evolution_setup(src, 50.0), 2.0, T))
    dt = time.perf_counter() - t0
    ok = band_ok and lyap_ok and abs(sd - 1) <= 0.05 and abs(te.beta_plus - 1) <= 0.05 and dt < 120
    criterion(6, ok, f"band={bs.intervals[0].tolist()} max|L|={max(abs(L.value) for L in lyap):.1e} "
                     f"s_hat(0)={sd:.3f} beta+={te.beta_plus:.4f} time={dt:.1f}s")
    assert ok


def test_c07_amo_lyapunov(criterion):
    worst = 0.0
    for lam in (2.0, 3.0):
        src = almost_mathieu(lam, GOLDEN, 0.0)
        for E in auto_energies(src, 8):
            L = lyapunov_exponent(src, float(E), 8192, 16).value
            worst = max(worst, abs(L - math.log(lam)) / math.log(lam))
    ok = worst <= 0.05
    criterion(7, ok, f"max relative deviation from log(lambda) = {worst:.4f} over 16 energies")
    assert ok


def test_c08_critical_band_measure(criterion):
    src = almost_mathieu(1.0, GOLDEN, 0.0)
    qs = (13, 21, 34, 55, 89)
    meas = [band_set(discriminant(src, q)).total_measure for q in qs]
    ok = all(b < a for a, b in zip(meas, meas[1:]))
    criterion(8, ok, "measures " + ", ".join(f"q={q}:{m:.4f}" for q, m in zip(qs, meas)))
    assert ok


def test_c09_trace_theorem_proxy(criterion):
    alpha = construct_liouville_alpha(2.0)
    src = almost_mathieu(1.0, alpha, 0.2)
    r = verify_trace_theorem(src, alpha, [3, 4, 5], E_sampler="bands:1024", samples=2000, seed=0)
    fr = [row.fraction for row in r.rows]
    ok = all(b >= a for a, b in zip(fr, fr[1:])) and fr[-1] >= 0.95
    criterion(9, ok, f"Lambda={r.Lambda:.4f} " + ", ".join(f"q={row.q}:{row.fraction:.3f}" for row in r.rows))
    assert ok


def test_c10_spectral_dimension_contrast(criterion):
    eps = np.logspace(-2, -5, 13)
    means = {}
    for name, alpha in (("golden", GOLDEN), ("liouville", construct_liouville_alpha(1.5))):
        src = almost_mathieu(2.0, alpha, 0.0)
        Es = sample_energies(src, "spectral:8", 8)
        vals = [spectral_dimension_estimate(src, float(E), eps, workers=4).extra["s_hat"] for E in Es]
        means[name] = float(np.mean(vals))
    gap = means["liouville"] - means["golden"]
    ok = gap > 0.3
    criterion(10, ok, f"mean s_hat liouville={means['liouville']:.3f} golden={means['golden']:.3f} gap={gap:.3f}")
    assert ok


def _sturmian_blocks(alpha, beta, qs):
    a = float(alpha.to_longdouble())
    theta = 0.5 + a / 2
    dio = is_alpha_diophantine_phase(theta, alpha, 0.05, 2.0, 10_000)
    src = sturmian(1.0, alpha, theta)
    rows = []
    for q in qs:
        K = max(1, math.floor(math.exp(beta * q / 4)) // q)
        p = repetition_defect(src, q, K)
        rows.append((q, K, p.max_block_defect))
    return dio, rows


def test_c11_sturmian_golden(criterion):
    qs = [GOLDEN.convergent(k)[1] for k in (8, 10, 12)]
    dio, rows = _sturmian_blocks(GOLDEN, 0.0, qs)
    ok = dio.ok and all(d == 0.0 for _, _, d in rows)
    criterion(11, ok, f"theta alpha-Diophantine={dio.ok}; " +
              ", ".join(f"q={q}:K={K}:defect={d:g}" for q, K, d in rows))
    assert ok


def test_c11_sturmian_liouville_positive_case():
    alpha = construct_liouville_alpha(2.0)
    dio, rows = _sturmian_blocks(alpha, 2.0, [8])
    assert dio.ok
    q, K, d = rows[0]
    assert K == 6 and d == 0.0


def test_c12_level_sets_and_sq(criterion):
    src = free()
    d = discriminant(src, 8)
    rng = np.random.default_rng(12)
    worst = 0.0
    holds = True
    for _ in range(20):
        a, b = np.sort(rng.uniform(0.0, 2.5, 2))
        L = trace_level_set(d, float(a), float(b), int(rng.choice([-1, 1])))
        holds &= bool(L.measure <= L.bound)
        worst = max(worst, L.measure / L.bound if L.bound > 0 else 0.0)
    E = sample_energies(src, "bands:1024", 41, 0)
    Lam = norm_bound_Lambda(src, E, 256, 32).Lambda
    fit = sq_scaling(src, [4, 6, 8, 10, 12, 14, 16], Lam)
    need = 0.9 * fit.extra["expected"]
    ok = holds and fit.fitted >= need
    criterion(12, ok, f"level sets 20/20 within bound={holds} (max ratio {worst:.3f}); "
                      f"S_q exponent {fit.fitted:.4f} >= {need:.4f} (tau={fit.extra['tau']:.4f})")
    assert ok


def test_c13_cli_determinism(criterion, tmp_path):
    cases = [
        ["level-set", "--q", "13", "--pairs", "8", "--seed", "3"],
        ["lyapunov", "--lambda", "2", "--energies", "auto:3", "--n", "512", "--theta-samples", "4"],
        ["verify-lemmas", "--suite", "power", "--samples", "200", "--seed", "5"],
        ["dynamics", "--lambda", "2", "--t-min", "0.2", "--t-max", "20", "--t-num", "9", "--format", "csv"],
    ]
    same = True
    for i, argv in enumerate(cases):
        out = tmp_path / f"run{i}"
        blobs = []
        for workers in ("1", "3"):
            assert run(argv + ["--out", str(out), "--workers", workers]) == 0
            blobs.append(out.read_bytes())
        same &= blobs[0] == blobs[1]
    criterion(13, same, f"{len(cases)} commands rerun with different worker counts, byte-identical={same}")
    assert same
