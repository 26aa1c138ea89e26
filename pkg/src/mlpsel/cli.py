"""Command line: ``mlpsel simulate | select | bound | replay``.

Exit codes: 0 success, 1 runtime failure, 2 usage or validation error.
Every run writes ``manifest.json`` next to its outputs; ``mlpsel replay
manifest.json --out DIR`` reruns it with the recorded arguments.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .bound import BoundConfig, verify_inequality
from .mlp_core import Architecture, Dataset
from .optimizer import FitConfig, FitError
from .parallel import resolve_jobs
from .selection import DegenerateError, PenaltySpec, Regime, select
from .simulation import THETA0, SimConfig, noise_variance, replication_data, run_study

logger = logging.getLogger("mlpsel")

MANIFEST_NAME = "manifest.json"


class UsageError(Exception):
    pass


class DataFormatError(UsageError):
    pass


def read_data_csv(path) -> Dataset:
    """Header row, then ``d >= 1`` input columns and one target column per row."""
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise DataFormatError(f"cannot read {path}: {exc}") from None
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DataFormatError(f"{path}: empty file, header row required")
        width = len(header)
        if width < 2:
            raise DataFormatError(
                f"{path}: need at least one input column and one target column, header has {width}"
            )
        rows = []
        for row_no, row in enumerate(reader, start=1):
            if not row:
                continue
            if len(row) != width:
                raise DataFormatError(
                    f"{path}: row {row_no} (line {row_no + 1}) has {len(row)} cells, header has {width}"
                )
            values = []
            for col, cell in enumerate(row):
                try:
                    v = float(cell)
                except ValueError:
                    v = math.nan
                if not math.isfinite(v):
                    raise DataFormatError(
                        f"{path}: row {row_no} (line {row_no + 1}), column {col + 1} "
                        f"({header[col]!r}): not a finite number: {cell!r}"
                    )
                values.append(v)
            rows.append(values)
    if not rows:
        raise DataFormatError(f"{path}: no data rows")
    arr = np.array(rows)
    return Dataset(arr[:, :-1], arr[:, -1])


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be a positive integer, got {text}")
    return v


def _positive_float(text):
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError(f"must be > 0, got {text}")
    return v


def _seed(text):
    v = int(text)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be a 64-bit unsigned integer")
    return v


def _add_fit_flags(p):
    p.add_argument("--restarts", type=_positive_int, default=10)
    p.add_argument("--max-iter", type=_positive_int, default=500)
    p.add_argument("--gtol", type=_positive_float, default=1e-6)
    p.add_argument("--init-width", type=_positive_float, default=1.0)
    p.add_argument("--box", type=_positive_float, default=100.0)


def _fit_config(args, seed) -> FitConfig:
    return FitConfig(
        restarts=args.restarts,
        max_iterations=args.max_iter,
        gradient_tolerance=args.gtol,
        init_half_width=args.init_width,
        box_bound=args.box,
        rng_seed=seed,
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mlpsel", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="replication study on the simulated model")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--reps", type=int, default=20)
    p.add_argument("--kmax", type=_positive_int, default=6)
    p.add_argument("--criteria", default="AIC:known,BIC:known,SP:known,VSP:known",
                   help="comma list of FAMILY:regime (regime: known, plugin, log)")
    p.add_argument("--sigma2", type=_positive_float, default=None,
                   help="noise variance for known-regime criteria (default: the simulated 1/3)")
    p.add_argument("--seed", type=_seed, default=0)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--dump-data", metavar="PATH", help="also write replication 0's dataset as CSV")
    p.add_argument("--jobs", type=_positive_int, default=None, help="worker processes (default: $MLPSEL_JOBS or CPU count)")
    _add_fit_flags(p)

    p = sub.add_parser("select", help="choose the number of hidden units for a CSV dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--kmax", type=_positive_int, default=6)
    p.add_argument("--criterion", default="SP:log")
    p.add_argument("--sigma2", type=_positive_float, default=None)
    p.add_argument("--seed", type=_seed, default=0)
    p.add_argument("--out", default=None, help="output directory (per-k CSV and manifest)")
    p.add_argument("--jobs", type=_positive_int, default=None, help="worker processes (default: $MLPSEL_JOBS or CPU count)")
    _add_fit_flags(p)

    p = sub.add_parser("bound", help="Monte-Carlo check of the overfitting inequality")
    p.add_argument("--n", type=_positive_int, default=500)
    p.add_argument("--k", type=_positive_int, default=3, help="hidden units of the candidate family")
    p.add_argument("--lambda", dest="lam", type=float, default=0.5)
    p.add_argument("--draws", type=int, default=200)
    p.add_argument("--norm-samples", type=int, default=100_000)
    p.add_argument("--elementary-samples", type=_positive_int, default=1_000_000)
    p.add_argument("--no-fit", action="store_true", help="skip the fitted candidate")
    p.add_argument("--force-theta0", action="store_true",
                   help="every draw equals the true parameter (degeneracy path); implies --no-fit")
    p.add_argument("--seed", type=_seed, default=0)
    p.add_argument("--out", required=True)
    _add_fit_flags(p)

    for name, subparser in sub.choices.items():
        subparser.set_defaults(_parser=subparser)

    p = sub.add_parser("replay", help="rerun a recorded run from its manifest")
    p.add_argument("manifest")
    p.add_argument("--out", required=True, help="output directory for the rerun")
    return parser


def resolved_argv(args) -> list:
    """Argument list with every default spelled out; replaying it ignores future default changes."""
    argv = [args.command]
    for action in args._parser._actions:
        if not action.option_strings or action.dest == "help":
            continue
        value = getattr(args, action.dest)
        flag = action.option_strings[-1]
        if isinstance(action, argparse._StoreTrueAction):
            if value:
                argv.append(flag)
        elif value is not None:
            argv += [flag, str(value)]
    return argv


def _write_manifest(out: Path, argv, args, config: dict, outputs):
    manifest = {
        "subcommand": args.command,
        "argv": list(argv),
        "resolved_argv": resolved_argv(args),
        "config": config,
        "seed": args.seed,
        "outputs": sorted(outputs),
        "version": __version__,
        "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
    }
    (out / MANIFEST_NAME).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _fit_dict(fc: FitConfig) -> dict:
    return {
        "restarts": fc.restarts,
        "max_iterations": fc.max_iterations,
        "gradient_tolerance": fc.gradient_tolerance,
        "init_half_width": fc.init_half_width,
        "box_bound": fc.box_bound,
        "rng_seed": fc.rng_seed,
    }


def _parse_criteria(text, sigma2):
    specs = []
    for item in text.split(","):
        spec = PenaltySpec.parse(item.strip(), sigma2=1.0)  # placeholder variance, checked below
        if spec.regime is Regime.KNOWN_VARIANCE:
            spec = PenaltySpec(spec.family, spec.regime, sigma2)
        specs.append(spec)
    labels = [s.label for s in specs]
    if len(set(labels)) != len(labels):
        raise UsageError(f"duplicate criteria in {text!r}")
    return specs


def cmd_simulate(args, argv) -> int:
    if args.n < 10:
        raise UsageError("--n must be >= 10")
    if args.reps < 1:
        raise UsageError("--reps must be >= 1")
    sigma2 = args.sigma2 if args.sigma2 is not None else noise_variance()
    try:
        specs = _parse_criteria(args.criteria, sigma2)
        config = SimConfig(
            n=args.n, reps=args.reps, k_max=args.kmax, criteria=specs,
            fit_config=_fit_config(args, args.seed), rng_seed=args.seed,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    jobs = resolve_jobs(args.jobs)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    table = run_study(config, jobs=jobs)
    (out / "selection_table.csv").write_text(table.to_csv())
    (out / "selection_table.md").write_text(table.to_markdown())
    outputs = ["selection_table.csv", "selection_table.md"]
    if args.dump_data:
        Path(args.dump_data).write_text(replication_data(config, 0).to_csv())
    print(table.to_markdown(), end="")
    _write_manifest(out, argv, args, {
        "n": config.n, "reps": config.reps, "k_max": config.k_max,
        "criteria": [s.label for s in specs], "sigma2": sigma2,
        "fit": _fit_dict(config.fit_config), "jobs": jobs,
    }, outputs)
    return 0


def cmd_select(args, argv) -> int:
    data = read_data_csv(args.data)
    try:
        spec = PenaltySpec.parse(args.criterion, sigma2=args.sigma2)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    jobs = resolve_jobs(args.jobs)
    fit_config = _fit_config(args, args.seed)
    result = select(data, args.kmax, spec, fit_config, jobs=jobs)
    print(f"k_hat: {result.k_hat}")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "selection.csv").write_text(result.to_csv())
        _write_manifest(out, argv, args, {
            "data": str(args.data), "n": data.n, "d": data.d, "k_max": args.kmax,
            "criterion": spec.label, "sigma2": args.sigma2,
            "fit": _fit_dict(fit_config), "jobs": jobs,
        }, ["selection.csv"])
    else:
        sys.stdout.write(result.to_csv())
    return 0


def cmd_bound(args, argv) -> int:
    if not args.lam > 0:
        raise UsageError("--lambda must be > 0")
    if args.draws < 0:
        raise UsageError("--draws must be >= 0")
    try:
        config = BoundConfig(
            lam=args.lam, norm_mc_samples=args.norm_samples, theta_draws=args.draws,
            rng_seed=args.seed, fit_config=_fit_config(args, args.seed),
        )
        arch = Architecture(THETA0.arch.d, args.k)
        if arch.k < THETA0.arch.k:
            raise ValueError(f"--k must be >= {THETA0.arch.k} to contain the true model")
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report = verify_inequality(
        config, arch, THETA0, args.n,
        include_fit=not args.no_fit, force_theta0=args.force_theta0,
        elementary_samples=args.elementary_samples,
    )
    (out / "bound_report.csv").write_text(report.to_csv())
    print(report.summary())
    print(f"skipped degenerate: {len(report.skipped)}")
    print(f"max overfit/bound ratio: {report.max_ratio:.6g}")
    print(f"elementary inequality violations: {report.elementary_violations} / {report.elementary_samples}")
    _write_manifest(out, argv, args, {
        "n": args.n, "k": args.k, "lambda": args.lam, "draws": args.draws,
        "norm_samples": args.norm_samples, "include_fit": not (args.no_fit or args.force_theta0),
        "force_theta0": args.force_theta0, "fit": _fit_dict(config.fit_config),
    }, ["bound_report.csv"])
    return 0


def _replace_out(argv, out):
    argv = list(argv)
    for i, tok in enumerate(argv):
        if tok == "--out":
            argv[i + 1] = out
            return argv
        if tok.startswith("--out="):
            argv[i] = f"--out={out}"
            return argv
    raise UsageError("manifest argv has no --out")


def cmd_replay(args, argv) -> int:
    try:
        manifest = json.loads(Path(args.manifest).read_text())
        recorded = manifest["resolved_argv"]
    except (OSError, ValueError, KeyError) as exc:
        raise UsageError(f"unreadable manifest {args.manifest}: {exc}") from None
    return main(_replace_out(recorded, args.out))


COMMANDS = {
    "simulate": cmd_simulate,
    "select": cmd_select,
    "bound": cmd_bound,
    "replay": cmd_replay,
}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args, argv)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"mlpsel {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (FitError, DegenerateError, ValueError) as exc:
        print(f"mlpsel {args.command}: failed: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
