"""Command-line interface: ``sockcal <subcommand> ...``.

Exit codes: 0 success, 2 usage, 3 unreadable or unparsable input,
4 invalid data, 5 optimizer stopped before convergence (outputs are still
written).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .calibration import (
    CalibrationOptions,
    distortion_error,
    insertion_feasibility,
    mean_absolute_error,
    optimize,
    placement_mae,
)
from .dataset import (
    atomic_write_text,
    check_compatible,
    dataset_from_csv,
    dataset_to_csv,
    dumps_dataset,
    load_dataset,
    validate_dataset,
)
from .exceptions import (
    DatasetSchemaError,
    DescriptionError,
    MissingLinkError,
    SockcalError,
    UnreachableSocketError,
)
from .synth import (
    generate_dataset,
    load_scenario_file,
    options_from_config,
    report_from_csv,
    run_experiment,
    scenario_config,
    scenario_from_config,
    sweep_noise,
)
from .urdf import BALL_LINK, RobotDescription, write_description

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_PARSE = 3
EXIT_INVALID = 4
EXIT_NOT_CONVERGED = 5

log = logging.getLogger("sockcal")


class UsageError(Exception):
    """Arguments parsed but do not make sense together."""


# --- argument parsing -------------------------------------------------------------


def _length_scale(args) -> float:
    return 1e-3 if args.units == "mm" else 1.0


def _add_model_args(p):
    p.add_argument("--base-link", default="base_link", help="root link of the chain")
    p.add_argument("--tip-link", default=None,
                   help="flange link carrying the ball (default: the document's "
                        f"'{BALL_LINK}' link if present)")
    p.add_argument("--ball-offset", nargs=3, type=float, metavar=("X", "Y", "Z"),
                   help="ball center in the tip-link frame; omit when the tip link is "
                        "already the ball center")


def _add_option_args(p):
    p.add_argument("--lambda", dest="lam", type=float, default=None,
                   help="regularization weight (default 1e-4)")
    p.add_argument("--rel-tol", type=float, default=None,
                   help="stop on relative objective change below this (default 1e-8)")
    p.add_argument("--max-iters", type=int, default=None,
                   help="iteration budget (default 500)")


def _add_common(p):
    p.add_argument("--units", choices=("m", "mm"), default="m",
                   help="unit of --ball-offset and --clearance (everything else is meters)")
    p.add_argument("-v", "--verbose", action="store_true",
                   help="log progress and report wall time")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sockcal",
        description="Kinematic calibration of serial arms from socket-constrained "
                    "joint recordings.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("calibrate", help="fit the geometry and write a calibrated model")
    p.add_argument("model", help="URDF robot description")
    p.add_argument("dataset", help="socket dataset (JSON or CSV)")
    p.add_argument("-o", "--output", required=True, help="calibrated URDF to write")
    p.add_argument("--trace", help="write the per-iteration cost trace as CSV")
    _add_model_args(p)
    _add_option_args(p)
    _add_common(p)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("evaluate", help="score a model on a dataset without fitting")
    p.add_argument("model")
    p.add_argument("dataset")
    _add_model_args(p)
    p.add_argument("--true-model", help="reference URDF for the insertion check")
    p.add_argument("--goal", nargs=3, type=float, action="append", metavar=("X", "Y", "Z"),
                   help="hole position in meters (repeatable); required with --true-model")
    p.add_argument("--clearance", type=float, help="diametral hole clearance")
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    _add_common(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("synth", help="generate synthetic data and run the benchmark")
    p.add_argument("scenario", nargs="?", help="scenario JSON (default: built-in scenario)")
    p.add_argument("-o", "--out-dir", required=True)
    p.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    p.add_argument("--noise-sweep", nargs="+", type=float, metavar="SIGMA",
                   help="joint noise levels in rad; one report row per level")
    p.add_argument("--ball-offset", nargs=3, type=float, metavar=("X", "Y", "Z"))
    _add_option_args(p)
    _add_common(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("report", help="print the text summary of a report CSV")
    p.add_argument("report")
    p.add_argument("-v", "--verbose", action="store_true")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("convert", help="convert a dataset between JSON and CSV")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--robot", default="", help="robot name stored when reading CSV")
    p.add_argument("-v", "--verbose", action="store_true")
    p.set_defaults(func=cmd_convert)
    return parser


# --- helpers ----------------------------------------------------------------------


def _options(args, base: CalibrationOptions = None) -> CalibrationOptions:
    base = base or CalibrationOptions()
    try:
        return CalibrationOptions(
            lam=base.lam if args.lam is None else args.lam,
            rel_tol=base.rel_tol if args.rel_tol is None else args.rel_tol,
            max_iterations=base.max_iterations if args.max_iters is None else args.max_iters,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _load_model(path, args, prefer_ball=False) -> RobotDescription:
    """Parse ``path`` with the chain-selection flags.

    With ``prefer_ball`` a document that already has a ball-center link (a
    calibrated or ground-truth model written by this tool) is read up to that
    link regardless of ``--tip-link`` and ``--ball-offset``.
    """
    text = Path(path).read_text(encoding="utf-8")
    if prefer_ball:
        try:
            return RobotDescription.from_text(text, args.base_link, BALL_LINK, None)
        except MissingLinkError:
            pass
    if args.ball_offset is not None:
        if args.tip_link is None:
            raise UsageError("--ball-offset needs --tip-link")
        offset = np.asarray(args.ball_offset) * _length_scale(args)
        return RobotDescription.from_text(text, args.base_link, args.tip_link, offset)
    if args.tip_link is not None:
        return RobotDescription.from_text(text, args.base_link, args.tip_link, None)
    try:
        return RobotDescription.from_text(text, args.base_link, BALL_LINK, None)
    except MissingLinkError:
        raise UsageError(
            f"no '{BALL_LINK}' link in {path}; give --tip-link (and --ball-offset)"
        ) from None


def _read_dataset(path, robot=""):
    path = Path(path)
    if path.suffix.lower() == ".csv":
        return dataset_from_csv(path.read_text(encoding="utf-8"), robot)
    return load_dataset(path)


def _write_dataset(dataset, path):
    path = Path(path)
    text = dataset_to_csv(dataset) if path.suffix.lower() == ".csv" else dumps_dataset(dataset)
    atomic_write_text(path, text)


def _dataset_for(desc, path):
    dataset = _read_dataset(path)
    check_compatible(dataset, desc.chain)
    for w in validate_dataset(dataset, desc.chain):
        print(f"warning: {w.message}", file=sys.stderr)
    return dataset


def _fmt(x: float) -> str:
    return f"{x:.4e}"


# --- subcommands ------------------------------------------------------------------


def cmd_calibrate(args) -> int:
    options = _options(args)
    desc = _load_model(args.model, args)
    dataset = _dataset_for(desc, args.dataset)
    start = time.perf_counter()
    result = optimize(desc.chain, desc.theta_nominal, dataset, options)
    elapsed = time.perf_counter() - start

    atomic_write_text(args.output, write_description(desc, result.theta_star))
    if args.trace:
        atomic_write_text(args.trace, result.trace_csv())

    print(f"model:       {args.model} ({desc.chain.m} frames, {desc.chain.n} joints)")
    print(f"dataset:     {args.dataset} ({len(dataset)} placements)")
    print(f"MAE [m]:     {_fmt(result.mae_before)} -> {_fmt(result.mae_after)}")
    print(f"removed:     {result.removed_error:.2f} %")
    print(f"distortion:  {_fmt(result.distortion_before)} -> {_fmt(result.distortion_after)} m")
    print(f"iterations:  {result.iterations} ({result.message})")
    print(f"written:     {args.output}")
    if args.verbose:
        print(f"wall time:   {elapsed:.3f} s")
    if not result.converged:
        print(f"warning: optimizer stopped before convergence ({result.message}); "
              "best parameters so far were written", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def cmd_evaluate(args) -> int:
    desc = _load_model(args.model, args)
    dataset = _dataset_for(desc, args.dataset)
    chain, theta = desc.chain, desc.theta_nominal
    print(f"MAE [m]:     {_fmt(mean_absolute_error(chain, theta, dataset))}")
    for idx, placement in enumerate(dataset.placements):
        name = placement.label or f"placement {idx}"
        print(f"  {name:<12} MAE {_fmt(placement_mae(chain, theta, placement))} m, "
              f"distortion {_fmt(distortion_error(chain, theta, placement))} m")

    if args.true_model is None:
        return EXIT_OK
    if not args.goal or args.clearance is None:
        raise UsageError("--true-model needs --goal and --clearance")
    truth = _load_model(args.true_model, args, prefer_ball=True)
    if truth.chain.n_params != chain.n_params or truth.chain.n != chain.n:
        raise DatasetSchemaError("reference model has a different chain structure")
    clearance = args.clearance * _length_scale(args)
    res = insertion_feasibility(chain, theta, truth.theta_nominal, args.goal, clearance,
                                trials=args.trials, rng=args.seed)
    print(f"insertion:   {res.successes}/{res.trials} within {clearance / 2:.3e} m "
          f"({res.ik_failures} IK failures)")
    return EXIT_OK


def cmd_synth(args) -> int:
    cfg = load_scenario_file(args.scenario) if args.scenario else scenario_config()
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.ball_offset is not None:
        cfg["ball_offset"] = list(np.asarray(args.ball_offset) * _length_scale(args))
    if args.noise_sweep:
        cfg["noise_sweep"] = args.noise_sweep
    scenario = scenario_from_config(cfg)
    options = _options(args, options_from_config(cfg))

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if cfg["noise_sweep"]:
        report = sweep_noise(scenario, cfg["noise_sweep"], options)
    else:
        report = run_experiment(scenario, options, cfg["train_sets"])
    atomic_write_text(out / "train.json", dumps_dataset(generate_dataset(scenario, "train")))
    atomic_write_text(out / "test.json", dumps_dataset(generate_dataset(scenario, "test")))
    atomic_write_text(out / "true_model.urdf",
                      write_description(scenario.description, scenario.theta_true))
    atomic_write_text(out / "report.csv", report.to_csv(include_timing=args.verbose))
    summary = report.summary(include_timing=args.verbose)
    atomic_write_text(out / "summary.txt", summary)
    sys.stdout.write(summary)
    if not all(r.converged for r in report.rows):
        print("warning: some calibrations stopped before convergence", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def cmd_report(args) -> int:
    text = Path(args.report).read_text(encoding="utf-8")
    try:
        report = report_from_csv(text)
    except (ValueError, TypeError) as exc:
        raise _ParseFailure(f"{args.report}: {exc}") from None
    sys.stdout.write(report.summary(include_timing="wall_time_s" in text.splitlines()[0]))
    return EXIT_OK


def cmd_convert(args) -> int:
    dataset = _read_dataset(args.input, args.robot)
    _write_dataset(dataset, args.output)
    print(f"{args.input} -> {args.output} ({len(dataset)} placements)")
    return EXIT_OK


class _ParseFailure(Exception):
    pass


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"sockcal: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DescriptionError, _ParseFailure, OSError, json.JSONDecodeError) as exc:
        print(f"sockcal: cannot read input: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except (DatasetSchemaError, UnreachableSocketError, ValueError) as exc:
        print(f"sockcal: invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except SockcalError as exc:
        print(f"sockcal: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
