"""Command-line interface.

Every subcommand prints or writes a single JSON object (the butterfly sweep writes a
CSV plus a JSON sidecar).  Exit codes: 0 success, 1 a verification failed, 2 bad
configuration or an I/O error.
"""
from __future__ import annotations

import argparse
import ast
import csv
import io
import json
import math
import operator
import os
import sys
import time
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__, arithmetic
from .cocycle import (CocycleSpec, Family, lyapunov_exponents, rotation_numbers)
from .duality import isospectrality_check
from .model import Couplings, Frequency
from .spectrum import (BandCountWarning, band_arcs, butterfly, gap_labels, gaps,
                       symmetry_check)

EXIT_OK, EXIT_CHECK_FAILED, EXIT_CONFIG = 0, 1, 2
GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0
DEFAULT_COUPLINGS = "1/sqrt(2),1/sqrt(3)"
DUALITY_TOL = 1e-8
SYMMETRY_TOL = 1e-8
CSV_HEADER = ("p", "q", "band_index", "zeta_lo", "zeta_hi")


class ConfigError(ValueError):
    pass


# -- parsing ---------------------------------------------------------------------

_BINOPS = {ast.Add: operator.add, ast.Sub: operator.sub, ast.Mult: operator.mul,
           ast.Div: operator.truediv, ast.Pow: operator.pow}


def parse_real(text: str) -> float:
    """Evaluate a small expression such as ``0.6``, ``3/5``, ``pi/2`` or ``1/sqrt(2)``."""

    def ev(node):
        if isinstance(node, ast.Expression):
            return ev(node.body)
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
            return float(node.value)
        if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
            return _BINOPS[type(node.op)](ev(node.left), ev(node.right))
        if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
            v = ev(node.operand)
            return -v if isinstance(node.op, ast.USub) else v
        if (isinstance(node, ast.Call) and isinstance(node.func, ast.Name)
                and node.func.id == "sqrt" and len(node.args) == 1):
            return math.sqrt(ev(node.args[0]))
        if isinstance(node, ast.Name) and node.id == "pi":
            return math.pi
        raise ConfigError(f"unsupported expression {text!r}")

    try:
        return float(ev(ast.parse(text.strip(), mode="eval")))
    except (SyntaxError, ZeroDivisionError, ValueError) as exc:
        raise ConfigError(f"cannot parse {text!r}: {exc}") from None


def parse_couplings(text: str) -> Couplings:
    parts = text.split(",")
    if len(parts) != 2:
        raise ConfigError("--couplings expects 'l1,l2'")
    try:
        return Couplings(parse_real(parts[0]), parse_real(parts[1]))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def parse_frequency(text: str) -> Frequency:
    """``p/q`` gives an exact fraction, ``golden`` the golden mean, anything else a real."""
    text = text.strip()
    if text == "golden":
        return Frequency.real(GOLDEN)
    try:
        if "/" in text:
            p, q = text.split("/")
            return Frequency.rational(int(p), int(q))
        return Frequency.real(float(text))
    except ValueError as exc:
        raise ConfigError(f"bad frequency {text!r}: {exc}") from None


def rational_frequency(freq: Frequency, depth: int) -> tuple[Frequency, Optional[tuple]]:
    """Exact fractions pass through; reals are replaced by their ``depth``-th convergent."""
    if freq.is_rational:
        return freq, None
    cf = arithmetic.continued_fraction(freq.value, depth)
    p, q = cf.convergents[-1] if cf.convergents else (round(freq.value), 1)
    return Frequency.rational(p, q), (p, q)


# -- serialization ---------------------------------------------------------------


def fmt(x: float) -> str:
    """Locale-independent 12-significant-digit rendering."""
    return format(float(x), ".12g")


def clean(obj):
    """JSON-ready copy: floats rounded to 12 significant digits, non-finite as strings."""
    if isinstance(obj, dict):
        return {str(k): clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return clean(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isnan(x):
            return None
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return float(fmt(x))
    return obj


def dumps(obj) -> str:
    return json.dumps(clean(obj), indent=2, sort_keys=True) + "\n"


def butterfly_csv(records) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for rec in records:
        if rec.bands is None:
            continue
        for i, a in enumerate(rec.bands.arcs):
            w.writerow((rec.p, rec.q, i, fmt(a.lo), fmt(a.hi)))
    return buf.getvalue()


def bands_csv(p: int, q: int, arcs) -> str:
    rows = [",".join(CSV_HEADER)]
    rows += [f"{p},{q},{i},{fmt(a.lo)},{fmt(a.hi)}" for i, a in enumerate(arcs)]
    return "\n".join(rows) + "\n"


def write_text(path, text: str) -> None:
    try:
        Path(path).write_text(text, encoding="utf-8")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


# -- configuration ---------------------------------------------------------------


@dataclass
class RunConfig:
    command: str
    couplings: Couplings
    freq: Frequency
    theta: float = 0.0
    qmax: int = 8
    res: Optional[int] = None
    iters: int = 20_000
    theta_grid: Optional[int] = None
    depth: int = 8
    zeta: list = field(default_factory=list)
    out: Optional[str] = None
    svg: Optional[str] = None
    format: str = "json"
    workers: int = 1
    seed: int = 0
    kappa: float = 0.2
    tau: float = 1.01
    horizon: int = 10_000

    def as_dict(self) -> dict:
        d = asdict(self)
        d["couplings"] = [self.couplings.lambda1, self.couplings.lambda2]
        d["freq"] = str(self.freq)
        return d


def build_config(args) -> RunConfig:
    cfg = RunConfig(
        command=args.command,
        couplings=parse_couplings(args.couplings),
        freq=parse_frequency(args.freq),
        theta=parse_real(args.theta) % 1.0,
        qmax=args.qmax,
        res=args.res,
        iters=args.iters,
        theta_grid=args.theta_grid,
        depth=args.depth,
        zeta=[parse_real(z) for z in args.zeta.split(",")] if args.zeta else [],
        out=args.out,
        svg=args.svg,
        format=args.format,
        workers=args.workers if args.workers else (os.cpu_count() or 1),
        seed=args.seed,
        kappa=args.kappa,
        tau=args.tau,
        horizon=args.horizon,
    )
    if cfg.qmax < 2 and cfg.command in ("butterfly", "report"):
        raise ConfigError("--qmax must be at least 2")
    if cfg.iters < 1 or cfg.workers < 1:
        raise ConfigError("--iters and --workers must be positive")
    if not 1 <= cfg.depth <= arithmetic.MAX_DEPTH:
        raise ConfigError(f"--depth must lie in [1, {arithmetic.MAX_DEPTH}]")
    if cfg.res is not None and cfg.res < 4:
        raise ConfigError("--res must be at least 4")
    if cfg.theta_grid is not None and cfg.theta_grid < 1:
        raise ConfigError("--theta-grid must be positive")
    for path in (cfg.out if cfg.command != "report" else None, cfg.svg):
        if path is not None and not Path(path).resolve().parent.is_dir():
            raise OSError(f"cannot write {path}: parent directory does not exist")
    return cfg


# -- commands --------------------------------------------------------------------


def _bands(cfg: RunConfig):
    freq, conv = rational_frequency(cfg.freq, cfg.depth)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", BandCountWarning)
        bs = band_arcs(cfg.couplings, freq, cfg.theta_grid, cfg.res)
    return bs, freq, conv, [str(w.message) for w in caught]


def _arc_rows(arcs) -> list:
    return [{"zeta_lo": a.lo, "zeta_hi": a.hi} for a in arcs]


def cmd_bands(cfg: RunConfig):
    bs, freq, conv, warns = _bands(cfg)
    ok = bs.count == bs.expected_count
    if cfg.svg:
        from .plotting import save_bands_svg
        save_bands_svg(bs.arcs, cfg.svg, f"{freq}  couplings {cfg.couplings.lambda1:.4g}, "
                       f"{cfg.couplings.lambda2:.4g}")
    if cfg.format == "csv":
        return bands_csv(freq.p, freq.q, bs.arcs), ok
    return {"p": freq.p, "q": freq.q, "convergent": conv, "count": bs.count,
            "expected_count": bs.expected_count, "measure": bs.measure,
            "touching": list(bs.touching), "bands": _arc_rows(bs.arcs),
            "warnings": warns, "pass": ok}, ok


def cmd_gaps(cfg: RunConfig):
    bs, freq, conv, warns = _bands(cfg)
    labeled = gap_labels(cfg.couplings, freq, gaps(bs), cfg.iters)
    ok = not any(g.flagged for g in labeled)
    return {"p": freq.p, "q": freq.q, "convergent": conv, "gaps": [g.as_dict() for g in labeled],
            "label_residual_tol": 1e-3, "warnings": warns, "pass": ok}, ok


def _cocycle_spec(cfg: RunConfig, family: Family) -> CocycleSpec:
    if not cfg.zeta:
        raise ConfigError("--zeta is required")
    return CocycleSpec(family, cfg.couplings, cfg.freq, 0.0)


def cmd_lyapunov(cfg: RunConfig):
    spec = _cocycle_spec(cfg, Family.TWO_STEP)
    values, spreads = lyapunov_exponents(spec, cfg.zeta, cfg.iters)
    return {"zeta": cfg.zeta, "lyapunov": values, "spread": spreads,
            "lyapunov_floor": arithmetic.lyapunov_floor(cfg.couplings)}, True


def cmd_rot(cfg: RunConfig):
    spec = _cocycle_spec(cfg, Family.TWO_STEP)
    rot = rotation_numbers(spec, cfg.zeta, cfg.iters, cfg.theta)
    return {"zeta": cfg.zeta, "rotation_number": rot}, True


def cmd_duality(cfg: RunConfig):
    freq, conv = rational_frequency(cfg.freq, cfg.depth)
    d = isospectrality_check(cfg.couplings, freq, cfg.res)
    ok = d < DUALITY_TOL
    return {"p": freq.p, "q": freq.q, "convergent": conv, "hausdorff": d,
            "tolerance": DUALITY_TOL, "pass": ok}, ok


def cmd_symmetry(cfg: RunConfig):
    bs, freq, conv, warns = _bands(cfg)
    dev_conj, dev_neg = symmetry_check(bs)
    ok = max(dev_conj, dev_neg) < SYMMETRY_TOL
    return {"p": freq.p, "q": freq.q, "convergent": conv, "dev_conj": dev_conj,
            "dev_neg": dev_neg, "tolerance": SYMMETRY_TOL, "warnings": warns, "pass": ok}, ok


def cmd_classify(cfg: RunConfig):
    return {"regime": arithmetic.phase_classify(cfg.couplings).value,
            "lyapunov_floor": arithmetic.lyapunov_floor(cfg.couplings)}, True


def cmd_arith(cfg: RunConfig):
    x = cfg.freq.value
    cf = arithmetic.continued_fraction(x, cfg.depth) if x > 0 else None
    dio = arithmetic.diophantine_check(x, arithmetic.DiophantineParams(cfg.kappa, cfg.tau,
                                                                       cfg.horizon))
    non = arithmetic.nonresonance_check(cfg.theta, x, cfg.tau, cfg.horizon)
    return {"value": x,
            "partial_quotients": cf.partial_quotients if cf else [0],
            "convergents": [list(c) for c in cf.convergents] if cf else [],
            "rational": cf.rational if cf else True,
            "diophantine_pass": dio.passed, "diophantine_worst_n": dio.worst_n,
            "diophantine_worst_ratio": dio.worst_ratio,
            "nonresonance_pass": non.passed, "nonresonance_violations": non.violations[:50],
            "nonresonance_floor": cfg.horizon // 2, "horizon": cfg.horizon, "note": dio.note}, True


def _sweep(cfg: RunConfig):
    start = time.perf_counter()
    records = butterfly(cfg.couplings, cfg.qmax, cfg.res, cfg.theta_grid, cfg.workers)
    wall = time.perf_counter() - start
    failures = [{"p": r.p, "q": r.q, "error": r.error} for r in records if r.bands is None]
    warned = [{"p": r.p, "q": r.q, "warnings": list(r.warnings)} for r in records if r.warnings]
    return records, wall, failures, warned


def _sidecar(cfg: RunConfig, records, wall, failures, warned) -> dict:
    return {"config": cfg.as_dict(), "version": __version__, "wall_time_s": wall,
            "frequencies": len(records), "rows": sum(r.bands.count for r in records if r.bands),
            "failures": failures, "warnings": warned, "warning_count": len(warned) + len(failures)}


def cmd_butterfly(cfg: RunConfig):
    records, wall, failures, warned = _sweep(cfg)
    text = butterfly_csv(records)
    side = _sidecar(cfg, records, wall, failures, warned)
    if cfg.out is None:
        sys.stdout.write(text)
    else:
        write_text(cfg.out, text)
        write_text(cfg.out + ".json", dumps(side))
    if cfg.svg:
        from .plotting import save_butterfly_svg
        save_butterfly_svg([(r.p, r.q, r.bands.arcs) for r in records if r.bands], cfg.svg,
                           f"q <= {cfg.qmax}")
    if side["warning_count"]:
        print(f"warning: {side['warning_count']} frequencies reported problems", file=sys.stderr)
    return None, True


def cmd_report(cfg: RunConfig):
    """Butterfly and single-frequency figures plus a JSON summary in directory ``--out``."""
    from .plotting import save_bands_svg, save_butterfly_svg
    if cfg.out is None:
        raise ConfigError("report needs --out DIR")
    out = Path(cfg.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create {out}: {exc}") from exc
    records, wall, failures, warned = _sweep(cfg)
    write_text(out / "butterfly.csv", butterfly_csv(records))
    save_butterfly_svg([(r.p, r.q, r.bands.arcs) for r in records if r.bands],
                       out / "butterfly.svg", f"q <= {cfg.qmax}")
    bs, freq, conv, warns = _bands(cfg)
    save_bands_svg(bs.arcs, out / "bands.svg", str(freq))
    counts_ok = all(r.bands is not None and r.bands.count == 2 * r.q for r in records)
    dev = symmetry_check(bs)
    summary = {"butterfly": _sidecar(cfg, records, wall, failures, warned),
               "all_counts_2q": counts_ok,
               "bands": {"p": freq.p, "q": freq.q, "count": bs.count, "measure": bs.measure,
                         "dev_conj": dev[0], "dev_neg": dev[1]},
               "regime": arithmetic.phase_classify(cfg.couplings).value}
    write_text(out / "report.json", dumps(summary))
    return {"report_dir": str(out), "files": ["butterfly.csv", "butterfly.svg", "bands.svg",
                                              "report.json"], "pass": counts_ok}, counts_ok


COMMANDS = {
    "butterfly": (cmd_butterfly, "band structures for all p/q with q <= qmax (CSV)"),
    "bands": (cmd_bands, "band arcs at one rational frequency"),
    "gaps": (cmd_gaps, "labeled spectral gaps"),
    "lyapunov": (cmd_lyapunov, "Lyapunov exponents at spectral angles --zeta"),
    "rot": (cmd_rot, "fibered rotation numbers at spectral angles --zeta"),
    "duality": (cmd_duality, "isospectrality of a coupling pair and its dual"),
    "symmetry": (cmd_symmetry, "conjugation and negation symmetry of the bands"),
    "classify": (cmd_classify, "coupling regime and Lyapunov floor"),
    "arith": (cmd_arith, "continued fraction, Diophantine and nonresonance scans"),
    "report": (cmd_report, "figures and summary written to a directory"),
}


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--couplings", default=DEFAULT_COUPLINGS,
                   help="l1,l2 (expressions like 1/sqrt(2) allowed)")
    p.add_argument("--freq", default="1/2", help="p/q, a decimal, or 'golden'")
    p.add_argument("--theta", default="0", help="phase in [0, 1)")
    p.add_argument("--qmax", type=int, default=8)
    p.add_argument("--res", type=int, default=None, help="coarse zeta grid size")
    p.add_argument("--iters", type=int, default=20_000, help="cocycle iterations")
    p.add_argument("--theta-grid", type=int, default=None, dest="theta_grid")
    p.add_argument("--depth", type=int, default=8, help="convergent depth for decimal --freq")
    p.add_argument("--zeta", default="", help="comma-separated spectral angles (radians)")
    p.add_argument("--out", default=None)
    p.add_argument("--svg", default=None, help="also render an SVG figure here")
    p.add_argument("--format", choices=("csv", "json", "svg"), default="json")
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--kappa", type=float, default=0.2)
    p.add_argument("--tau", type=float, default=1.01)
    p.add_argument("--horizon", type=int, default=10_000, help="scan range for arith")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="uamo", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        _add_common(sub.add_parser(name, help=help_text))
    return parser


def _emit(cfg: RunConfig, result) -> None:
    if isinstance(result, str):
        text = result
    else:
        result = dict(result)
        result.update({"command": cfg.command, "config": cfg.as_dict(), "version": __version__})
        text = dumps(result)
    if cfg.out is None or cfg.command == "report":
        sys.stdout.write(text)
    else:
        write_text(cfg.out, text)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code not in (0, None) else EXIT_OK
    try:
        cfg = build_config(args)
        if cfg.format == "svg" and cfg.svg is None and cfg.out is not None:
            cfg.svg, cfg.out = cfg.out, None
        result, ok = COMMANDS[cfg.command][0](cfg)
        if result is not None:
            _emit(cfg, result)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK if ok else EXIT_CHECK_FAILED


if __name__ == "__main__":
    sys.exit(main())
