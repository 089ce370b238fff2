"""Command-line front end: analyze, simulate and generate problem files.

A problem file is a single UTF-8 JSON document with explicit dimensions
and row-major matrix arrays:

    {"name": "...", "n": 2, "m": 1,
     "A": [...], "B": [...], "Q": [...], "S": [...], "R": [...],
     "tolerances": {...}, "rde": {...}, "x0": [[...], ...]}

Reports are printed human-readable on stdout and optionally written as
JSON; numbers are serialized at 17 significant digits so parsing them back
is lossless.  The SINGLQ_LOG environment variable (quiet, info, debug)
controls diagnostic verbosity.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import analyzer
from .matlib import Tolerances, spectral_abscissa
from .model import Problem, ProblemError, validate_problem
from .riccati import RdeOptions, RdeStatus

log = logging.getLogger("singlq")

_CLASSES = ("quadruple", "regular", "cheap", "hurwitz")
_MAX_N, _MAX_M = 12, 6


class DocumentError(ValueError):
    """The problem file is malformed (missing/ill-typed/ill-sized fields)."""


@dataclass
class ParsedDocument:
    name: str
    problem: Problem
    tolerances: Tolerances
    rde_options: RdeOptions
    x0s: list[np.ndarray]


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def _matrix_field(doc: dict, key: str, rows: int, cols: int) -> np.ndarray:
    if key not in doc:
        raise DocumentError(f"field '{key}' is missing")
    raw = doc[key]
    if not isinstance(raw, list) or not all(isinstance(v, (int, float)) for v in raw):
        raise DocumentError(f"field '{key}' must be a flat numeric array")
    if len(raw) != rows * cols:
        raise DocumentError(
            f"field '{key}' has {len(raw)} entries, expected {rows}x{cols} = {rows * cols}"
        )
    M = np.array(raw, dtype=float).reshape(rows, cols)
    if M.size and not np.all(np.isfinite(M)):
        raise DocumentError(f"field '{key}' contains non-finite entries")
    return M


def _count_field(doc: dict, key: str) -> int:
    if key not in doc:
        raise DocumentError(f"field '{key}' is missing")
    v = doc[key]
    if not isinstance(v, int) or isinstance(v, bool) or v < 1:
        raise DocumentError(f"field '{key}' must be a positive integer")
    return v


def parse_problem(path: str | Path) -> ParsedDocument:
    """Read and validate a problem document.

    Raises DocumentError for malformed documents (naming the offending
    field, or the line/column for JSON syntax errors) and ProblemError
    when the data violates the model invariants.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise DocumentError(f"cannot read '{path}': {e}") from e
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise DocumentError(
            f"'{path}': invalid JSON at line {e.lineno} column {e.colno}: {e.msg}"
        ) from e
    if not isinstance(doc, dict):
        raise DocumentError(f"'{path}': top-level value must be an object")

    n = _count_field(doc, "n")
    m = _count_field(doc, "m")
    A = _matrix_field(doc, "A", n, n)
    B = _matrix_field(doc, "B", n, m)
    Q = _matrix_field(doc, "Q", n, n)
    S = _matrix_field(doc, "S", n, m)
    R = _matrix_field(doc, "R", m, m)

    tol_doc = doc.get("tolerances", {})
    if not isinstance(tol_doc, dict):
        raise DocumentError("field 'tolerances' must be an object")
    try:
        tol = Tolerances(
            rank_tol=float(tol_doc.get("rank_tol", Tolerances.rank_tol)),
            residual_tol=float(tol_doc.get("residual_tol", Tolerances.residual_tol)),
            psd_tol=float(tol_doc.get("psd_tol", Tolerances.psd_tol)),
        )
    except (TypeError, ValueError) as e:
        raise DocumentError(f"field 'tolerances': {e}") from e

    rde_doc = doc.get("rde", {})
    if not isinstance(rde_doc, dict):
        raise DocumentError("field 'rde' must be an object")
    try:
        rde = RdeOptions(
            step=float(rde_doc.get("step", RdeOptions.step)),
            max_time=float(rde_doc.get("max_time", RdeOptions.max_time)),
            conv_tol=float(rde_doc.get("conv_tol", RdeOptions.conv_tol)),
            div_bound=(
                float(rde_doc["div_bound"]) if "div_bound" in rde_doc else None
            ),
        )
    except (TypeError, ValueError) as e:
        raise DocumentError(f"field 'rde': {e}") from e

    x0s = []
    for i, row in enumerate(doc.get("x0", [])):
        if not isinstance(row, list) or len(row) != n:
            raise DocumentError(f"field 'x0[{i}]' must be a list of {n} numbers")
        x0s.append(np.array(row, dtype=float))

    problem = validate_problem(A, B, Q, S, R, tol)
    name = doc.get("name", path.stem)
    if not isinstance(name, str):
        raise DocumentError("field 'name' must be a string")
    return ParsedDocument(
        name=name, problem=problem, tolerances=tol, rde_options=rde, x0s=x0s
    )


def problem_document(name: str, P: Problem) -> dict:
    """Serialize a Problem as a problem-file document (row-major arrays)."""
    return {
        "name": name,
        "n": P.n,
        "m": P.m,
        "A": [float(v) for v in P.A.ravel()],
        "B": [float(v) for v in P.B.ravel()],
        "Q": [float(v) for v in P.Q.ravel()],
        "S": [float(v) for v in P.S.ravel()],
        "R": [float(v) for v in P.R.ravel()],
    }


# ---------------------------------------------------------------------------
# analyze


def _merge_options(parsed: ParsedDocument, args) -> tuple[Tolerances, RdeOptions]:
    tol = parsed.tolerances
    if args.rank_tol is not None or args.residual_tol is not None:
        tol = Tolerances(
            rank_tol=args.rank_tol if args.rank_tol is not None else tol.rank_tol,
            residual_tol=(
                args.residual_tol if args.residual_tol is not None else tol.residual_tol
            ),
            psd_tol=tol.psd_tol,
        )
    rde = parsed.rde_options
    if args.conv_tol is not None or args.max_time is not None:
        rde = RdeOptions(
            step=rde.step,
            max_time=args.max_time if args.max_time is not None else rde.max_time,
            conv_tol=args.conv_tol if args.conv_tol is not None else rde.conv_tol,
            div_bound=rde.div_bound,
        )
    return tol, rde


def build_report(
    parsed: ParsedDocument,
    verdicts: analyzer.ConditionVerdicts,
    costs: list[dict],
    include_bases: bool,
) -> dict:
    geo = verdicts.geometry
    rde = verdicts.rde
    report = {
        "name": parsed.name,
        "n": parsed.problem.n,
        "m": parsed.problem.m,
        "verdicts": {
            "a": verdicts.a.value,
            "b": verdicts.b.value,
            "c": verdicts.c.value,
            "d": verdicts.d.value,
        },
        "finiteness": verdicts.finiteness.value,
        "sstar_eq_rstar": verdicts.sstar_eq_rstar,
        "consistency_ok": verdicts.consistency_ok,
        "dimensions": {
            "vstar": geo.vstar.dim,
            "sstar": geo.sstar.dim,
            "rstar": geo.rstar.dim,
            "reachable": geo.reachable.dim,
            "xstab": geo.xstab.dim,
        },
        "rde": {
            "status": rde.status.value,
            "final_time": float(rde.final_time),
        },
        "X_bar": (
            [float(v) for v in verdicts.X_bar.ravel()]
            if verdicts.X_bar is not None
            else None
        ),
        "K": None,
        "costs": costs,
        "notes": list(verdicts.notes),
    }
    if verdicts.X_bar is not None:
        syn = analyzer.synthesize(parsed.problem, verdicts.X_bar)
        report["K"] = [float(v) for v in syn.K.ravel()]
    if include_bases:
        report["bases"] = {
            key: [float(v) for v in getattr(geo, key).basis.ravel()]
            for key in ("vstar", "sstar", "rstar", "reachable", "xstab")
        }
    return report


def _print_human_report(report: dict, stream=None) -> None:
    stream = stream or sys.stdout
    w = stream.write
    w(f"problem: {report['name']}  (n={report['n']}, m={report['m']})\n")
    labels = {
        "a": "(a) regular optimal control exists for every x0",
        "b": "(b) constrained Riccati equation has a PSD solution",
        "c": "(c) symmetric solution exists and cost can be made finite",
        "d": "(d) subspaces coincide and cost can be made finite",
    }
    for key, label in labels.items():
        w(f"  {label:<60s} {report['verdicts'][key]}\n")
    w(
        f"  finiteness: {report['finiteness']}   "
        f"s* = r*: {'yes' if report['sstar_eq_rstar'] else 'no'}   "
        f"consistency: {'ok' if report['consistency_ok'] else 'VIOLATED'}\n"
    )
    dims = report["dimensions"]
    w(
        "  dim: v*={vstar} s*={sstar} r*={rstar} reachable={reachable} "
        "x_stab={xstab}\n".format(**dims)
    )
    w(
        f"  riccati flow: {report['rde']['status']} "
        f"(t = {report['rde']['final_time']:.6g})\n"
    )
    if report["X_bar"] is not None:
        n = report["n"]
        X = np.array(report["X_bar"]).reshape(n, n)
        w(f"  X_bar =\n{np.array2string(X, precision=10)}\n")
        K = np.array(report["K"]).reshape(report["m"], n)
        w(f"  K =\n{np.array2string(K, precision=10)}\n")
    for entry in report["costs"]:
        w(
            f"  x0 = {entry['x0']}: predicted {entry['predicted']:.10g}, "
            f"achieved {entry['achieved']:.10g}, rel.err {entry['relative_error']:.3g}"
            f"{'' if entry['decided'] else ' (tail not decayed; undecided)'}\n"
        )
    for note in report["notes"]:
        w(f"  note: {note}\n")


def _analyze_one(path: Path, args) -> tuple[int, dict | None]:
    try:
        parsed = parse_problem(path)
    except (DocumentError, ProblemError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1, None
    tol, rde_opts = _merge_options(parsed, args)
    log.info("analyzing %s", parsed.name)
    verdicts = analyzer.analyze(parsed.problem, rde_opts, tol)

    costs = []
    if verdicts.X_bar is not None and parsed.x0s:
        syn = analyzer.synthesize(parsed.problem, verdicts.X_bar, tol)
        for x0 in parsed.x0s:
            check = analyzer.verify_optimal_cost(parsed.problem, syn, x0)
            costs.append(
                {
                    "x0": [float(v) for v in x0],
                    "predicted": check.predicted,
                    "achieved": check.cost,
                    "relative_error": check.relative_error,
                    "decided": check.decided,
                }
            )
    report = build_report(parsed, verdicts, costs, args.bases)
    _print_human_report(report)
    return (2 if verdicts.any_undecided else 0), report


def cmd_analyze(args) -> int:
    if bool(args.file) == bool(args.batch):
        print("error: give exactly one of <file> or --batch <dir>", file=sys.stderr)
        return 1
    if args.file:
        code, report = _analyze_one(Path(args.file), args)
        if report is not None and args.out:
            Path(args.out).write_text(json.dumps(report, indent=2) + "\n")
        return code
    batch = Path(args.batch)
    if not batch.is_dir():
        print(f"error: '{batch}' is not a directory", file=sys.stderr)
        return 1
    out_dir = Path(args.out) if args.out else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
    worst = 0
    files = sorted(batch.glob("*.json"))
    if not files:
        print(f"error: no *.json files in '{batch}'", file=sys.stderr)
        return 1
    for f in files:
        code, report = _analyze_one(f, args)
        worst = max(worst, code)
        if report is not None and out_dir is not None:
            (out_dir / f"{f.stem}.report.json").write_text(
                json.dumps(report, indent=2) + "\n"
            )
        print()
    return worst


# ---------------------------------------------------------------------------
# simulate


def _parse_vector(text: str, size: int, what: str) -> np.ndarray:
    try:
        vals = [float(v) for v in text.split(",")]
    except ValueError as e:
        raise DocumentError(f"{what}: {e}") from e
    if len(vals) != size:
        raise DocumentError(f"{what} must have {size} comma-separated entries")
    return np.array(vals)


def cmd_simulate(args) -> int:
    try:
        parsed = parse_problem(args.file)
        P = parsed.problem
        x0 = _parse_vector(args.x0, P.n, "--x0")
    except (DocumentError, ProblemError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    tol, rde_opts = _merge_options(parsed, args)

    predicted = None
    if args.gain is not None:
        try:
            K = _parse_vector(args.gain, P.m * P.n, "--gain").reshape(P.m, P.n)
        except DocumentError as e:
            print(f"error: {e}", file=sys.stderr)
            return 1
        syn = analyzer.Synthesis(
            X_bar=np.zeros((P.n, P.n)),
            K=K,
            A_K=P.A - P.B @ K,
            G=P.kernel_projector(),
        )
    else:
        verdict, X_bar, _ = analyzer.check_condition_b(P, rde_opts, tol)
        if verdict is not analyzer.TriState.HOLDS:
            print(
                "error: no regular optimal control certified for this problem "
                f"(constructive check: {verdict.value}); pass --gain to simulate "
                "an explicit feedback",
                file=sys.stderr,
            )
            return 1
        syn = analyzer.synthesize(P, X_bar, tol)
        predicted = float(x0 @ syn.X_bar @ x0)

    traj = analyzer.simulate(P, syn, x0, None, args.T, args.dt)

    out = open(args.out, "w") if args.out else sys.stdout
    try:
        cols = ["t"] + [f"x[{i}]" for i in range(P.n)] + [f"u[{j}]" for j in range(P.m)] + ["J"]
        out.write("\t".join(cols) + "\n")
        for k, t in enumerate(traj.times):
            row = (
                [t]
                + list(traj.states[k])
                + list(traj.inputs[k])
                + [traj.running_cost[k]]
            )
            out.write("\t".join(_fmt(v) for v in row) + "\n")
        achieved = float(traj.running_cost[-1])
        if predicted is not None:
            rel = abs(achieved - predicted) / (1.0 + predicted)
            out.write(
                f"# optimal_cost={_fmt(predicted)}\trelative_error={_fmt(rel)}\n"
            )
        else:
            out.write(f"# achieved_cost={_fmt(achieved)}\t(explicit gain)\n")
    finally:
        if args.out:
            out.close()
    return 0


# ---------------------------------------------------------------------------
# generate


def generate_problem(rng: np.random.Generator, n: int, m: int, klass: str) -> Problem:
    """Draw one random instance of the requested class.

    All classes assemble the cost from a random factor [C D], which makes
    the joint weight PSD by construction.  'regular' appends an identity
    block to D so the input weight is positive definite; 'cheap' zeroes D;
    'hurwitz' shifts A to be stable so the cost is trivially attainable.
    """
    if klass not in _CLASSES:
        raise ValueError(f"unknown class '{klass}' (choose from {_CLASSES})")
    A = rng.uniform(-1.0, 1.0, (n, n))
    B = rng.uniform(-1.0, 1.0, (n, m))
    C = rng.uniform(-1.0, 1.0, (n, n))
    if klass == "cheap":
        D = np.zeros((n, m))
    else:
        D = rng.uniform(-1.0, 1.0, (n, m))
    if klass == "regular":
        C = np.vstack([C, np.zeros((m, n))])
        D = np.vstack([D, np.eye(m)])
    if klass == "hurwitz":
        A = A - (spectral_abscissa(A) + 0.5) * np.eye(n)
    Q = C.T @ C
    S = C.T @ D
    R = D.T @ D
    return validate_problem(A, B, Q, S, R)


def cmd_generate(args) -> int:
    if not (1 <= args.n <= _MAX_N and 1 <= args.m <= _MAX_M):
        print(
            f"error: dimensions out of range (1 <= n <= {_MAX_N}, 1 <= m <= {_MAX_M})",
            file=sys.stderr,
        )
        return 1
    if args.count < 0:
        print("error: count must be nonnegative", file=sys.stderr)
        return 1
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(args.seed)
    for i in range(args.count):
        P = generate_problem(rng, args.n, args.m, args.klass)
        name = f"{args.klass}_s{args.seed}_{i:03d}"
        doc = problem_document(name, P)
        path = out_dir / f"{name}.json"
        path.write_text(json.dumps(doc, indent=2) + "\n")
        log.info("wrote %s", path)
    return 0


# ---------------------------------------------------------------------------


def _add_tolerance_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--rank-tol", type=float, default=None, help="relative rank cutoff")
    p.add_argument(
        "--residual-tol", type=float, default=None, help="matrix-equation residual bound"
    )
    p.add_argument(
        "--conv-tol", type=float, default=None, help="flow derivative-norm threshold"
    )
    p.add_argument(
        "--max-time", type=float, default=None, help="flow integration horizon cap"
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="singlq",
        description=(
            "Decide whether a singular LQ problem admits a regular optimal "
            "control, and synthesize the optimal feedback when one exists."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    pa = sub.add_parser("analyze", help="evaluate the four existence conditions")
    pa.add_argument("file", nargs="?", help="problem JSON file")
    pa.add_argument("--out", help="write machine-readable report(s) here")
    pa.add_argument("--bases", action="store_true", help="include subspace bases")
    pa.add_argument("--batch", help="analyze every *.json in this directory")
    _add_tolerance_flags(pa)
    pa.set_defaults(func=cmd_analyze)

    ps = sub.add_parser("simulate", help="simulate the optimal closed loop")
    ps.add_argument("file", help="problem JSON file")
    ps.add_argument("--x0", required=True, help="initial state v1,...,vn")
    ps.add_argument("--T", type=float, required=True, help="simulation horizon")
    ps.add_argument("--dt", type=float, default=0.01, help="output sampling step")
    ps.add_argument("--gain", default=None, help="explicit feedback k11,k12,...")
    ps.add_argument("--out", help="write the trajectory here instead of stdout")
    _add_tolerance_flags(ps)
    ps.set_defaults(func=cmd_simulate)

    pg = sub.add_parser("generate", help="generate random problem instances")
    pg.add_argument("--seed", type=int, required=True)
    pg.add_argument("--n", type=int, required=True)
    pg.add_argument("--m", type=int, required=True)
    pg.add_argument(
        "--class", dest="klass", choices=_CLASSES, required=True, help="instance family"
    )
    pg.add_argument("--count", type=int, required=True)
    pg.add_argument("--out-dir", required=True)
    pg.set_defaults(func=cmd_generate)
    return parser


def _configure_logging() -> None:
    level = {"quiet": logging.WARNING, "info": logging.INFO, "debug": logging.DEBUG}.get(
        os.environ.get("SINGLQ_LOG", "quiet"), logging.WARNING
    )
    logging.basicConfig(level=level, format="%(name)s %(levelname)s: %(message)s")


def main(argv=None) -> int:
    _configure_logging()
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
