"""Command-line entry point.

Run an analysis::

    fsens --config analysis.toml [--seed N] [--out DIR] [--weights NAME|PATH] [--dual] [--strict]

Print the weights each family puts on the conditional effects of one subset::

    fsens --table weights --dim 3 --subset "{2}" [--families uniform,mobius,shapley]

Exit codes: 0 success, 2 configuration error, 3 estimation failure,
4 verifier failure under ``--strict``.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import platform
import sys
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import scipy

from . import __version__
from .config import AnalysisConfig, ConfigError, load_config
from .effects import (
    EffectTable,
    ResidualReport,
    dual_effect_table,
    effect_table,
    self_duality_gap,
    verify_shapley_sum,
    verify_sobol_decomposition,
)
from .estimators import EstimationError, SensitivityEstimate, estimate_sensitivity_map
from .subset_lattice import (
    DimensionError,
    LatticeMap,
    check_dim,
    dual,
    format_subset,
    parse_subset,
    popcounts,
    table_order,
)
from .weights import (
    MobiusWeights,
    WeightError,
    WeightFamily,
    check_shapley_condition,
    is_palindromic,
    load_weights,
    named_family,
    NAMED_FAMILIES,
    validate,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_ESTIMATION = 3
EXIT_VERIFIER = 4


# --------------------------------------------------------------------------
# Verifiers


@dataclass
class Check:
    name: str
    target: str
    passed: bool
    expected: bool
    residual: float
    tol: float
    where: str = ""
    detail: str = ""

    def as_dict(self) -> dict:
        return {
            "name": self.name,
            "target": self.target,
            "passed": bool(self.passed),
            "expected": bool(self.expected),
            "residual": _num(self.residual),
            "tol": self.tol,
            "where": self.where,
            "detail": self.detail,
        }


def _from_residual(r: ResidualReport, target: str, expected: bool) -> Check:
    where = format_subset(r.argmax, r.dim) if r.argmax is not None else ""
    return Check(r.name, target, r.passed, expected, r.residual, r.tol, where)


def run_verifiers(tau: LatticeMap, w: WeightFamily, table: EffectTable, dual_table: Optional[EffectTable]) -> list:
    """Every algebraic check that applies to this run.

    ``expected`` marks checks that must hold for the chosen weights: the
    subset decomposition only for Möbius weights, the singleton sum only
    when the weights satisfy its characterizing conditions, and self-duality
    of odd-order effects only for palindromic weights.
    """
    checks = []
    vr = validate(w)
    checks.append(Check("weights_valid", w.name, vr.passed, True, vr.max_deviation, 1e-12, detail=vr.describe()))
    sc = check_shapley_condition(w)
    worst = max(sc.empty_residual, sc.full_residual, sc.max_middle)
    checks.append(Check("shapley_condition", w.name, sc.passed, False, worst, sc.tol, detail=sc.describe()))
    is_mobius = isinstance(w, MobiusWeights)

    targets = [("tau", tau, table)]
    if dual_table is not None:
        targets.append(("dual", dual(tau), dual_table))
    for name, m, t in targets:
        checks.append(_from_residual(verify_sobol_decomposition(m, t), name, is_mobius))
        checks.append(_from_residual(verify_shapley_sum(m, t), name, sc.passed))

    if dual_table is not None:
        d = tau.dim
        sizes = popcounts(d)
        odd = [b for b in range(1 << d) if sizes[b] & 1]
        gap = np.abs(self_duality_gap(tau, w))
        arg = max(odd, key=lambda b: gap[b])
        scale = max(1.0, float(np.max(np.abs(tau.values))))
        palindromic = all(is_palindromic(w, b) for b in odd)
        checks.append(
            Check(
                "self_duality_odd",
                "tau vs dual",
                bool(gap[arg] <= 1e-10 * scale),
                palindromic,
                float(gap[arg]),
                1e-10 * scale,
                where=format_subset(arg, d),
            )
        )
    return checks


# --------------------------------------------------------------------------
# Report writing


def _num(x: float):
    x = float(x)
    return None if not math.isfinite(x) else x


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (float, np.floating)):
        return "nan" if math.isnan(x) else repr(float(x))
    return str(x)


def _csv_text(header: Sequence[str], rows: Sequence[Sequence]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def _bit_columns(dim: int) -> list:
    return [f"X{i + 1}" for i in range(dim)]


def _bits_row(bits: int, dim: int) -> list:
    return [(bits >> i) & 1 for i in range(dim)]


def tau_rows(est: SensitivityEstimate) -> tuple:
    d = est.dim
    by_subset = {r.subset: r for r in est.reports}
    header = _bit_columns(d) + ["subset", "estimate", "std_error", "n", "n_inner", "seed", "estimator", "status"]
    rows = []
    for b in table_order(d):
        b = int(b)
        r = by_subset.get(b)
        if r is None:
            rows.append(_bits_row(b, d) + [format_subset(b, d), float("nan"), float("nan"), "", "", "", "", "failed"])
        else:
            rows.append(
                _bits_row(b, d)
                + [format_subset(b, d), r.estimate, r.std_error, r.n, r.n_inner, r.seed, r.estimator_kind, "ok"]
            )
    return header, rows


def map_rows(m: LatticeMap, se: Optional[np.ndarray], value_name: str = "value") -> tuple:
    d = m.dim
    header = _bit_columns(d) + ["subset", value_name, "std_error"]
    rows = []
    for b in table_order(d):
        b = int(b)
        s = 0.0 if se is None else float(se[b])
        rows.append(_bits_row(b, d) + [format_subset(b, d), float(m.values[b]), s])
    return header, rows


def dual_std_errors(est: SensitivityEstimate) -> np.ndarray:
    """Standard errors of ``tau(D) - tau(D - A)`` from those of ``tau``."""
    d = est.dim
    full = (1 << d) - 1
    out = np.zeros(1 << d)
    for a in range(1, 1 << d):
        comp = full & ~a
        if est.covariance is not None:
            C = est.covariance
            var = C[full, full] + C[comp, comp] - 2.0 * C[full, comp]
        else:
            var = est.std_errors[full] ** 2 + (est.std_errors[comp] ** 2 if comp else 0.0)
        out[a] = math.sqrt(max(var, 0.0))
    out[full] = est.std_errors[full] if est.covariance is None else math.sqrt(est.covariance[full, full])
    return out


@dataclass
class RunResult:
    exit_code: int
    out_dir: Path
    files: list = field(default_factory=list)
    estimate: Optional[SensitivityEstimate] = None
    table: Optional[EffectTable] = None
    dual_table: Optional[EffectTable] = None
    checks: list = field(default_factory=list)
    message: str = ""


def _manifest(config: AnalysisConfig, est: Optional[SensitivityEstimate], w: WeightFamily) -> dict:
    return {
        "tool": "factorial_sensitivity",
        "version": __version__,
        "versions": {
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
        },
        "seed": config.seed,
        "budget": {
            "n": config.n,
            "total": config.total,
            "n_inner": config.n_inner,
            "shared_base": config.shared_base,
            "n_used": None if est is None else est.reports[-1].n,
            "n_inner_used": None if est is None else est.reports[-1].n_inner,
        },
        "model": config.model.describe(),
        "inputs": config.dist.describe(),
        "method": config.method.name,
        "weights": w.name,
        "dual": config.dual,
        "notes": [] if est is None else est.notes,
    }


def _write(out_dir: Path, name: str, text: str, files: list) -> None:
    path = out_dir / name
    path.write_text(text)
    files.append(path)


def _table_doc(header, rows) -> list:
    return [dict(zip(header, [_num(v) if isinstance(v, (float, np.floating)) else v for v in row])) for row in rows]


def run(config: AnalysisConfig) -> RunResult:
    """Estimate the map, compute effects, verify, and write every report."""
    if config.seed is None:
        raise ConfigError("seed", "required (set it in the config or pass --seed)")
    w = config.weight_family()
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    files: list = []
    csv_on = "csv" in config.formats
    json_on = "json" in config.formats

    try:
        est = estimate_sensitivity_map(
            config.model,
            config.dist,
            config.method,
            config.n,
            seed=config.seed,
            budget=config.total,
            n_inner=config.n_inner,
            shared_base=config.shared_base,
            workers=config.workers,
            max_dim=config.max_dim,
        )
    except EstimationError as exc:
        header, rows = tau_rows(exc.partial)
        if csv_on:
            _write(out_dir, "tau.csv", _csv_text(header, rows), files)
        doc = {
            "manifest": _manifest(config, exc.partial, w),
            "tau": _table_doc(header, rows),
            "failures": {format_subset(b, exc.partial.dim): m for b, m in exc.partial.failures.items()},
        }
        if json_on:
            _write(out_dir, "report.json", json.dumps(doc, indent=2, sort_keys=True) + "\n", files)
        return RunResult(EXIT_ESTIMATION, out_dir, files, exc.partial, message=str(exc))

    table = effect_table(est.tau, w, est.std_errors, est.covariance, source_id=f"tau[{est.method}]")
    dual_table = None
    if config.dual:
        dual_table = dual_effect_table(est.tau, w, est.std_errors, est.covariance, source_id=f"dual[{est.method}]")
    checks = run_verifiers(est.tau, w, table, dual_table)

    tables = {}
    tables["tau"] = tau_rows(est)
    tables["effects"] = map_rows(table.effects, table.std_errors, "effect")
    if dual_table is not None:
        tables["dual_map"] = map_rows(dual(est.tau), dual_std_errors(est), "value")
        tables["dual_effects"] = map_rows(dual_table.effects, dual_table.std_errors, "effect")

    if csv_on:
        for name, (header, rows) in tables.items():
            _write(out_dir, f"{name}.csv", _csv_text(header, rows), files)
        check_header = ["name", "target", "passed", "expected", "residual", "tol", "where", "detail"]
        check_rows = [[c.name, c.target, c.passed, c.expected, c.residual, c.tol, c.where, c.detail] for c in checks]
        _write(out_dir, "verifiers.csv", _csv_text(check_header, check_rows), files)

    manifest = _manifest(config, est, w)
    if json_on:
        doc = {
            "manifest": manifest,
            "tables": {name: _table_doc(h, r) for name, (h, r) in tables.items()},
            "verifiers": [c.as_dict() for c in checks],
        }
        _write(out_dir, "report.json", json.dumps(doc, indent=2, sort_keys=True) + "\n", files)
    _write(out_dir, "manifest.json", json.dumps(manifest, indent=2, sort_keys=True) + "\n", files)

    failed = [c for c in checks if c.expected and not c.passed]
    code = EXIT_OK
    message = "ok"
    if failed:
        message = "verifier failure: " + ", ".join(f"{c.name}[{c.target}]" for c in failed)
        code = EXIT_VERIFIER
    return RunResult(code, out_dir, files, est, table, dual_table, checks, message)


# --------------------------------------------------------------------------
# Weight comparison table


def _exact_text(x: float) -> str:
    fr = Fraction(x).limit_denominator(1 << 20)
    if float(fr) == x:
        return str(fr)
    return repr(float(x))


def explain_weights(d: int, B, families: Sequence) -> tuple:
    """Rows ``tau(B | A) - tau(A)`` for every ``A`` avoiding ``B``, one weight column per family.

    ``families`` holds names or :class:`WeightFamily` objects.  Rows follow
    the factorial-table order.  Returns ``(header, rows)`` where each row is
    ``[label, A, w_1, w_2, ...]``.
    """
    d = check_dim(d)
    if isinstance(B, str):
        B = parse_subset(B, d)
    b = int(B)
    fams = [named_family(f, d) if isinstance(f, str) and f in NAMED_FAMILIES else f for f in families]
    fams = [load_weights(f, d) if isinstance(f, (str, Path)) else f for f in fams]
    header = ["conditional_effect", "A"] + [f.name for f in fams]
    rows = []
    for a in table_order(d):
        a = int(a)
        if a & b:
            continue
        label = f"tau{format_subset(a | b, d)}"
        if a:
            label += f" - tau{format_subset(a, d)}"
        rows.append([label, format_subset(a, d)] + [f.weight(b, a) for f in fams])
    return header, rows


# --------------------------------------------------------------------------
# Argument handling


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="fsens",
        description="Sensitivity indices as weighted factorial effects.",
    )
    p.add_argument("--config", help="analysis config (TOML)")
    p.add_argument("--seed", type=int, help="master seed; overrides the config")
    p.add_argument("--out", help="output directory; overrides the config")
    p.add_argument("--weights", help="uniform, mobius, shapley, or a weight-table path")
    p.add_argument("--dual", action="store_true", help="also compute effects of the dual map")
    p.add_argument("--strict", action="store_true", help="exit 4 when an expected identity fails")
    p.add_argument("--table", choices=["weights"], help="print a weight comparison table instead of running")
    p.add_argument("--dim", type=int, help="number of inputs for --table weights")
    p.add_argument("--subset", help='subset B for --table weights, e.g. "{2}"')
    p.add_argument(
        "--families",
        default="uniform,mobius,shapley",
        help="comma-separated families (names or table paths) for --table weights",
    )
    return p


def _main_table(args, out) -> int:
    if args.dim is None or args.subset is None:
        print("error: --table weights needs --dim and --subset", file=sys.stderr)
        return EXIT_CONFIG
    try:
        header, rows = explain_weights(args.dim, args.subset, [f.strip() for f in args.families.split(",") if f.strip()])
    except (ValueError, DimensionError, WeightError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    text = _csv_text(header, [r[:2] + [_exact_text(x) for x in r[2:]] for r in rows])
    out.write(text)
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        (Path(args.out) / "weights_table.csv").write_text(text)
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None, out=None) -> int:
    out = sys.stdout if out is None else out
    args = build_parser().parse_args(argv)
    if args.table == "weights":
        return _main_table(args, out)
    if not args.config:
        print("error: --config is required", file=sys.stderr)
        return EXIT_CONFIG
    try:
        config = load_config(args.config)
        config = config.with_overrides(
            seed=args.seed,
            out_dir=Path(args.out) if args.out else None,
            weights=args.weights,
            dual=True if args.dual else None,
        )
        result = run(config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except WeightError as exc:
        print(f"config error: weights: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    if result.exit_code == EXIT_ESTIMATION:
        print(f"estimation failed: {result.message}", file=sys.stderr)
        return EXIT_ESTIMATION
    for c in result.checks:
        status = "pass" if c.passed else "FAIL"
        flag = "" if c.expected else " (informational)"
        out.write(f"{c.name:<20} {c.target:<12} {status} residual={c.residual:.3e}{flag}\n")
    out.write(f"reports written to {result.out_dir}\n")
    if result.exit_code == EXIT_VERIFIER and args.strict:
        print(result.message, file=sys.stderr)
        return EXIT_VERIFIER
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
