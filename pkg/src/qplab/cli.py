"""Command-line driver: ``qplab <subcommand> [options]``.

Every artifact embeds the configuration that produced it.  JSON output is
written with sorted keys and ``repr`` floats, so a repeated run with the same
configuration and seed is byte-identical.

Exit codes: 0 success, 1 usage error, 2 failed precondition, 3 numerical
failure.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import __version__
from .arithmetic import beta_exponent, k_exponents, parse_frequency
from .errors import NumericError, PreconditionError
from .potential import (almost_mathieu, custom_analytic, free, load_potential, periodic, skew_shift,
                        sturmian, almost_periodicity_scan)

SCHEMA = "qp-lab/v1"
WORKERS_ENV = "QPLAB_WORKERS"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


# configuration ---------------------------------------------------------------------

@dataclass
class RunConfig:
    command: str
    params: dict = field(default_factory=dict)
    seed: int = 0
    out: str | None = None
    format: str = "json"

    def to_dict(self) -> dict:
        return {"command": self.command, "params": self.params, "seed": self.seed, "out": self.out,
                "format": self.format}

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        return cls(d["command"], dict(d.get("params", {})), int(d.get("seed", 0)), d.get("out"),
                   d.get("format", "json"))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, s: str) -> "RunConfig":
        return cls.from_dict(json.loads(s))


_NON_CONFIG = {"command", "seed", "out", "format", "workers", "func"}


def _config(ns: argparse.Namespace) -> RunConfig:
    params = {k: v for k, v in sorted(vars(ns).items()) if k not in _NON_CONFIG}
    return RunConfig(ns.command, params, ns.seed, ns.out, ns.format)


def _workers(ns) -> int:
    if ns.workers is not None:
        return max(1, ns.workers)
    env = os.environ.get(WORKERS_ENV)
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise PreconditionError(f"{WORKERS_ENV}={env!r} is not an integer")
    return 1


# serialization -------------------------------------------------------------------------

def _clean(x):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to strings."""
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, np.ndarray):
        return [_clean(v) for v in x.tolist()]
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        f = float(x)
        if math.isfinite(f):
            return f
        return "nan" if math.isnan(f) else ("inf" if f > 0 else "-inf")
    if x is None or isinstance(x, str):
        return x
    return str(x)


def render_json(cfg: RunConfig, result) -> str:
    doc = {"schema": SCHEMA, "version": __version__, "command": cfg.command, "config": cfg.to_dict(),
           "result": result}
    return json.dumps(_clean(doc), sort_keys=True, indent=1) + "\n"


def render_csv(cfg: RunConfig, header: Sequence[str], rows: Sequence[Sequence]) -> str:
    buf = io.StringIO()
    buf.write(f"# config: {json.dumps(_clean(cfg.to_dict()), sort_keys=True)}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_clean(v) if not isinstance(v, float) else repr(v) for v in r])
    return buf.getvalue()


@dataclass
class Output:
    """A result document plus an optional flat table for CSV."""

    result: dict
    header: Sequence[str] = ()
    rows: Sequence[Sequence] = ()


# argument helpers ---------------------------------------------------------------------------

def _floats(s: str) -> list[float]:
    return [float(t) for t in s.replace(";", ",").split(",") if t.strip()]


def _ints(s: str) -> list[int]:
    out = []
    for t in s.split(","):
        t = t.strip()
        if not t:
            continue
        if ".." in t:
            a, b = t.split("..")
            out.extend(range(int(a), int(b) + 1))
        else:
            out.append(int(t))
    return out


FAMILY_ALIASES = {"amo": "almost_mathieu", "almost_mathieu": "almost_mathieu", "sturmian": "sturmian",
                  "free": "free", "skew": "skew_shift", "skew_shift": "skew_shift",
                  "custom": "custom_analytic", "custom_analytic": "custom_analytic",
                  "periodic": "periodic", "file": "file"}


def _potential_args(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("potential")
    g.add_argument("--family", default="amo", choices=sorted(FAMILY_ALIASES))
    g.add_argument("--lambda", dest="lam", type=float, default=1.0, help="coupling")
    g.add_argument("--alpha", default="golden",
                   help="golden, silver, liouville:beta=x[,n0=..,bursts=..], cf:[a1,...], p/q or decimal")
    g.add_argument("--theta", type=float, default=0.0)
    g.add_argument("--theta2", type=float, default=0.0, help="second phase (skew shift)")
    g.add_argument("--cos", default="", help="cosine coefficients (custom family)")
    g.add_argument("--sin", default="", help="sine coefficients (custom family)")
    g.add_argument("--c0", type=float, default=0.0, help="constant term (custom family)")
    g.add_argument("--values", default="", help="one period of values (periodic family)")
    g.add_argument("--file", default=None, help="potential file (file family)")
    g.add_argument("--origin", type=int, default=None, help="index of the first entry (file family)")
    g.add_argument("--depth", type=int, default=40, help="continued-fraction depth for --alpha")


def _build_source(ns):
    fam = FAMILY_ALIASES[ns.family]
    if fam == "free":
        return free(), None
    if fam == "periodic":
        vals = _floats(ns.values)
        if not vals:
            raise PreconditionError("--values is required for the periodic family")
        return periodic(vals), None
    if fam == "file":
        if not ns.file:
            raise PreconditionError("--file is required for the file family")
        return load_potential(ns.file, ns.origin), None
    alpha = parse_frequency(ns.alpha, ns.depth)
    if fam == "almost_mathieu":
        return almost_mathieu(ns.lam, alpha, ns.theta), alpha
    if fam == "sturmian":
        return sturmian(ns.lam, alpha, ns.theta), alpha
    if fam == "skew_shift":
        return skew_shift(ns.lam, alpha, ns.theta, ns.theta2), alpha
    return custom_analytic(alpha, ns.theta, ns.c0, _floats(ns.cos), _floats(ns.sin)), alpha


def _energies(src, spec: str, seed: int, default_n: int = 16):
    from .spectrum import sample_energies

    s = spec.strip()
    if s and (s[0].isdigit() or s[0] in "+-.") and ":" not in s:
        return np.asarray(_floats(s))
    return sample_energies(src, s, default_n, seed)


# commands -------------------------------------------------------------------------------------

def cmd_cf(ns, workers) -> Output:
    exp = parse_frequency(ns.alpha, ns.depth)
    d = exp.to_dict()
    res = {"expansion": d}
    if exp.depth >= 3:
        b = beta_exponent(exp)
        k_lo, k_hi = k_exponents(exp)
        res["beta"] = {"values": list(b.values), "limsup_estimate": b.limsup_estimate, "depth_used": b.depth_used}
        res["K_lower"] = k_lo.liminf_estimate
        res["K_upper"] = k_hi.limsup_estimate
    rows = [(i + 1, a) for i, a in enumerate(d["partial_quotients"])]
    return Output(res, ("n", "a_n"), rows)


def cmd_potential_scan(ns, workers) -> Output:
    src, alpha = _build_source(ns)
    if ns.q:
        qs = _ints(ns.q)
    elif alpha is not None:
        qs = [q for q in (alpha.convergent(k)[1] for k in range(1, alpha.depth + 1)) if q <= ns.q_max]
    else:
        raise PreconditionError("--q is required when the family has no frequency")
    scan = almost_periodicity_scan(src, qs, ns.k_max, workers)
    rows = [(p.q, p.defect, p.beta_of_q, p.epsilon_witness, p.k_certified) for p in scan.profiles]
    return Output({"source": src.describe(), "scan": scan.to_dict()},
                  ("q", "defect", "beta_of_q", "epsilon_witness", "k_certified"), rows)


def cmd_lyapunov(ns, workers) -> Output:
    from .cocycle import lyapunov_exponent

    src, _ = _build_source(ns)
    Es = _energies(src, ns.energies, ns.seed)
    rows = []
    for E in Es:
        L = lyapunov_exponent(src, float(E), ns.n, ns.theta_samples)
        rows.append((float(E), L.value, L.stderr, L.n, L.samples))
    res = {"source": src.describe(),
           "rows": [dict(zip(("E", "value", "stderr", "n", "samples"), r)) for r in rows]}
    return Output(res, ("E", "lyapunov", "stderr", "n", "samples"), rows)


def cmd_bands(ns, workers) -> Output:
    from .spectrum import band_set, discriminant

    src, _ = _build_source(ns)
    bs = band_set(discriminant(src, ns.q, shift=ns.shift))
    rows = [(float(a), float(b)) for a, b in bs.intervals]
    return Output({"source": src.describe(), "bands": bs.to_dict()}, ("left", "right"), rows)


def cmd_trace_scan(ns, workers) -> Output:
    from .spectrum import discriminant

    src, _ = _build_source(ns)
    d = discriminant(src, ns.q, grid=ns.grid, shift=ns.shift)
    rows = list(zip(d.energies.tolist(), d.values.tolist()))
    res = {"source": src.describe(), "q": d.q, "edges": d.edges.tolist(), "zeta": d.zeta,
           "max_edge_residual": float(np.max(d.residuals)) if len(d.residuals) else 0.0}
    if ns.format == "json":
        res["energies"] = d.energies.tolist()
        res["trace"] = d.values.tolist()
    return Output(res, ("E", "trace"), rows)


def cmd_level_set(ns, workers) -> Output:
    from .spectrum import discriminant, trace_level_set

    src, _ = _build_source(ns)
    d = discriminant(src, ns.q)
    if ns.pairs:
        rng = np.random.default_rng(ns.seed)
        ab = np.sort(rng.uniform(0.0, 2.0, (ns.pairs, 2)), axis=1)
        pairs = [(float(a), float(b), int(rng.choice([-1, 1]))) for a, b in ab]
    else:
        pairs = [(ns.a, ns.b, ns.sign)]
    sets = [trace_level_set(d, a, b, s) for a, b, s in pairs]
    rows = [(L.a, L.b, L.sign, L.measure, L.bound, L.holds) for L in sets]
    return Output({"source": src.describe(), "q": ns.q, "level_sets": [L.to_dict() for L in sets]},
                  ("a", "b", "sign", "measure", "bound", "holds"), rows)


def cmd_box_dim(ns, workers) -> Output:
    from .spectrum import band_set, box_dimension, discriminant

    src, _ = _build_source(ns)
    bs = band_set(discriminant(src, ns.q))
    scales = np.geomspace(ns.scale_max, ns.scale_min, ns.scales)
    fit = box_dimension(bs, scales)
    rows = list(zip(fit.scales, fit.values))
    return Output({"source": src.describe(), "q": ns.q, "fit": fit.to_dict(),
                   "dimension": fit.fitted}, ("delta", "boxes"), rows)


def cmd_mfunction(ns, workers) -> Output:
    from .subordinacy import m_function_half_line, whole_line_M

    src, _ = _build_source(ns)
    z = complex(ns.E, ns.eps)
    if ns.side == "whole":
        m = whole_line_M(src, z, ns.phi, check=True)
    else:
        m = m_function_half_line(src, z, ns.phi, ns.side)
    res = {"source": src.describe(), "E": ns.E, "eps": ns.eps, "phi": ns.phi, "side": ns.side,
           "real": m.real, "imag": m.imag, "abs": abs(m)}
    return Output(res, ("E", "eps", "phi", "side", "real", "imag"), [(ns.E, ns.eps, ns.phi, ns.side, m.real, m.imag)])


def cmd_sdim(ns, workers) -> Output:
    from .subordinacy import spectral_dimension_estimate

    src, _ = _build_source(ns)
    Es = _energies(src, ns.energies, ns.seed)
    eps = np.geomspace(ns.eps_max, ns.eps_min, ns.eps_num)
    fits = [spectral_dimension_estimate(src, float(E), eps, workers=workers) for E in Es]
    rows = [(float(E), f.extra["s_hat"], f.extra["sigma_max"], f.fitted) for E, f in zip(Es, fits)]
    s = [r[1] for r in rows]
    res = {"source": src.describe(), "energies": [float(e) for e in Es], "fits": [f.to_dict() for f in fits],
           "s_hat": s, "s_hat_mean": float(np.mean(s)) if s else None}
    return Output(res, ("E", "s_hat", "sigma_max", "tail_slope"), rows)


def cmd_dynamics(ns, workers) -> Output:
    from .dynamics import evolution_setup, evolve_moments, transport_exponents

    src, _ = _build_source(ns)
    T = np.geomspace(ns.t_min, ns.t_max, ns.t_num)
    setup = evolution_setup(src, ns.t_max, ns.L)
    ms = evolve_moments(setup, ns.p, T, workers)
    res = {"source": src.describe(), "moments": ms.to_dict()}
    try:
        te = transport_exponents(ms)
        res["exponents"] = te.to_dict()
    except PreconditionError as exc:
        res["exponents"] = {"unavailable": str(exc)}
    return Output(res, ("T", "moment"), list(zip(ms.times, ms.values)))


SUITES = ("sl2", "power", "conjugation", "perturbation", "jl", "phi", "all")


def cmd_verify_lemmas(ns, workers) -> Output:
    from .cocycle import conjugation_suite, perturbation_suite, power_suite
    from .subordinacy import jl_suite, phi_independence_suite

    n = ns.samples
    runs: list[tuple[str, Callable]] = []
    want = {ns.suite} if ns.suite != "all" else {"power", "conjugation", "perturbation", "jl", "phi"}
    if "sl2" in want:
        want |= {"power", "conjugation", "perturbation"}
    if "power" in want:
        runs.append(("lemma_power_formula", lambda: power_suite(n or 10_000, seed=ns.seed)))
    if "conjugation" in want:
        runs.append(("lemma_conjugation", lambda: conjugation_suite(n or 10_000, seed=ns.seed)))
    if "perturbation" in want:
        runs.append(("lemma_product_perturbation", lambda: perturbation_suite(n or 1000, seed=ns.seed)))
    if "jl" in want:
        runs.append(("jl_inequality", lambda: jl_suite(n or 500, seed=ns.seed)))
    if "phi" in want:
        runs.append(("m_phi_independence", lambda: phi_independence_suite(n or 100, seed=ns.seed)))
    results = [(name, f()) for name, f in runs]
    rows = [(name, r.samples, r.violations, r.worst, "pass" if r.passed else "fail") for name, r in results]
    for r in rows:
        print(f"{r[0]:<28} samples={r[1]:<6} violations={r[2]:<6} worst={r[3]:.4g}  {r[4]}", file=sys.stderr)
    return Output({"suites": {name: r.to_dict() for name, r in results},
                   "all_passed": all(r.passed for _, r in results)},
                  ("suite", "samples", "violations", "worst", "status"), rows)


def cmd_report(ns, workers) -> Output:
    """One-page summary of a potential: frequency exponents, repetition
    scan, Lyapunov exponents and bands at a reference period."""
    from .cocycle import lyapunov_exponent
    from .spectrum import auto_energies, periodic_band_set, reference_period

    src, alpha = _build_source(ns)
    res: dict = {"source": src.describe()}
    if alpha is not None:
        res["frequency"] = {"depth": alpha.depth, "label": alpha.label}
        if alpha.depth >= 3:
            res["frequency"]["beta_estimate"] = beta_exponent(alpha).limsup_estimate
        qs = [q for q in (alpha.convergent(k)[1] for k in range(1, alpha.depth + 1)) if q <= 500]
        res["repetitions"] = almost_periodicity_scan(src, qs, 1, workers).to_dict()
    q = reference_period(src)
    bs = periodic_band_set(src, q)
    res["reference_period"] = q
    res["band_measure"] = bs.total_measure
    res["band_count"] = bs.count
    Es = auto_energies(src, ns.n_energies)
    rows = []
    for E in Es:
        L = lyapunov_exponent(src, float(E), 2048, 16)
        rows.append((float(E), L.value, L.stderr))
    res["lyapunov"] = [dict(zip(("E", "value", "stderr"), r)) for r in rows]
    return Output(res, ("E", "lyapunov", "stderr"), rows)


# parser -------------------------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="qplab", description="Numerical laboratory for quasi-periodic Schroedinger operators.")
    p.add_argument("--version", action="version", version=f"qplab {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, func, help_, potential=True):
        sp = sub.add_parser(name, help=help_, description=help_)
        sp.add_argument("--out", default=None, help="output path (default stdout)")
        sp.add_argument("--format", choices=("json", "csv"), default="json")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--workers", type=int, default=None,
                        help=f"worker pool size (default ${WORKERS_ENV} or 1)")
        if potential:
            _potential_args(sp)
        sp.set_defaults(func=func)
        return sp

    sp = add("cf", cmd_cf, "continued-fraction expansion and growth exponents", potential=False)
    sp.add_argument("--alpha", default="golden")
    sp.add_argument("--depth", type=int, default=40)

    sp = add("potential-scan", cmd_potential_scan, "repetition defects across periods")
    sp.add_argument("--q", default="", help="periods, e.g. 5,8,13 or 3..10 (default: convergents)")
    sp.add_argument("--q-max", type=int, default=10_000)
    sp.add_argument("--k-max", type=int, default=1)

    sp = add("lyapunov", cmd_lyapunov, "phase-averaged Lyapunov exponents")
    sp.add_argument("--energies", default="auto:8", help="list, auto:N, spectral:N, bands:Q or uniform:a:b")
    sp.add_argument("--n", type=int, default=4096)
    sp.add_argument("--theta-samples", type=int, default=16)

    for name, func, help_ in (("bands", cmd_bands, "band set of a periodic approximant"),
                              ("trace-scan", cmd_trace_scan, "discriminant Tr A_q(E) on a grid")):
        sp = add(name, func, help_)
        sp.add_argument("--q", type=int, required=True)
        sp.add_argument("--shift", type=int, default=0)
        if name == "trace-scan":
            sp.add_argument("--grid", type=int, default=None)

    sp = add("level-set", cmd_level_set, "measure of {a < +-Tr A_q < b} against its bound")
    sp.add_argument("--q", type=int, required=True)
    sp.add_argument("--a", type=float, default=-1.0)
    sp.add_argument("--b", type=float, default=1.0)
    sp.add_argument("--sign", type=int, choices=(-1, 1), default=1)
    sp.add_argument("--pairs", type=int, default=0, help="draw this many random (a, b, sign) triples")

    sp = add("box-dim", cmd_box_dim, "box-counting dimension of a band set")
    sp.add_argument("--q", type=int, required=True)
    sp.add_argument("--scale-max", type=float, default=1e-2)
    sp.add_argument("--scale-min", type=float, default=1e-4)
    sp.add_argument("--scales", type=int, default=9)

    sp = add("mfunction", cmd_mfunction, "half-line or whole-line m-function")
    sp.add_argument("--E", type=float, required=True)
    sp.add_argument("--eps", type=float, default=1e-2)
    sp.add_argument("--phi", type=float, default=0.0)
    sp.add_argument("--side", choices=("right", "left", "whole"), default="whole")

    sp = add("sdim", cmd_sdim, "local spectral dimension estimates from M(E + i eps)")
    sp.add_argument("--energies", default="auto:8", help="list, auto:N, spectral:N, bands:Q or uniform:a:b")
    sp.add_argument("--eps-max", type=float, default=1e-2)
    sp.add_argument("--eps-min", type=float, default=1e-5)
    sp.add_argument("--eps-num", type=int, default=13)

    sp = add("dynamics", cmd_dynamics, "Abel-averaged moments and transport exponents")
    sp.add_argument("--p", type=float, default=2.0)
    sp.add_argument("--t-min", type=float, default=1.0)
    sp.add_argument("--t-max", type=float, default=100.0)
    sp.add_argument("--t-num", type=int, default=12)
    sp.add_argument("--L", type=int, default=None, help="box half-width (default: ballistic sizing)")

    sp = add("verify-lemmas", cmd_verify_lemmas, "randomized checks of the matrix and m-function lemmas",
             potential=False)
    sp.add_argument("--suite", choices=SUITES, default="sl2")
    sp.add_argument("--samples", type=int, default=0, help="samples per suite (0: suite default)")

    sp = add("report", cmd_report, "summary of a potential")
    sp.add_argument("--n-energies", type=int, default=8)
    return p


def run(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        workers = _workers(ns)
        out = ns.func(ns, workers)
        cfg = _config(ns)
        text = render_json(cfg, out.result) if ns.format == "json" else render_csv(cfg, out.header, out.rows)
    except PreconditionError as exc:
        print(f"qplab: precondition failed: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"qplab: numerical failure: {exc}", file=sys.stderr)
        return 3
    if ns.out:
        with open(ns.out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return 0


def main(argv: Sequence[str] | None = None) -> None:
    sys.exit(run(argv))
