"""Command-line driver: ``twinmodel {generate,train,gradient,report,sweep}``.

Exit codes: 0 success, 1 numerical failure, 2 invalid config, 3 missing input.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import ConfigError, load_config
from .eos import DomainError
from .fv1d import StepError
from .inference import CalibrationError
from .nozzle import NozzleError
from .optim import ObjectiveError
from . import studies

EXIT_OK, EXIT_NUMERIC, EXIT_CONFIG, EXIT_MISSING = 0, 1, 2, 3

logger = logging.getLogger("twinmodel")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, type=Path, help="experiment config (JSON)")
    common.add_argument("--out", required=True, type=Path, help="run directory")
    common.add_argument("--seed", type=int, default=None, help="override the config seed")
    common.add_argument("--jobs", type=int, default=1, help="max concurrent sub-runs")
    common.add_argument("--truth-mode", action="store_true",
                        help="also compute reference gradients with the truth model")
    common.add_argument("-v", "--verbose", action="store_true")
    parser = argparse.ArgumentParser(prog="twinmodel", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("generate", parents=[common], help="run the gray-box truth solver")
    sub.add_parser("train", parents=[common], help="train twin models on the gray-box data")
    sub.add_parser("gradient", parents=[common], help="twin (and reference) adjoint gradients")
    sub.add_parser("report", parents=[common], help="consolidated report and plot data")
    sub.add_parser("sweep", parents=[common], help="regularisation-weight sweep")
    return parser


def _run(args, cfg) -> None:
    out = args.out
    porous = cfg["case"] == "porous1d"
    if args.command == "generate":
        studies.prepare_run_dir(out, cfg)
        names = studies.porous_generate(cfg, out, args.jobs) if porous else studies.nozzle_generate(cfg, out)
        for n in names:
            print(f"generated {n}")
    elif args.command == "train":
        rows = studies.porous_train(cfg, out, args.jobs) if porous else studies.nozzle_train(cfg, out)
        for name, summary, _ in rows:
            print(f"trained {name}: {summary['status']} after {summary['n_iter']} iterations")
    elif args.command == "gradient":
        rows = (studies.porous_gradient(cfg, out, args.truth_mode, args.jobs) if porous
                else studies.nozzle_gradient(cfg, out, args.truth_mode))
        for name, summary in rows:
            err = summary["rel_l2_err"]
            print(f"gradient {name}: rel_l2_err={'n/a' if err is None else format(err, '.4e')}")
    elif args.command == "report":
        if not out.is_dir():
            raise studies.MissingInputError([out])
        expected = studies.porous_expected_files(cfg, out) if porous else studies.nozzle_expected_files(out)
        missing = [p for p in expected if not p.exists()]
        if missing:
            raise studies.MissingInputError(missing)
        (studies.porous_report if porous else studies.nozzle_report)(cfg, out)
        print(f"report written to {out / 'report' / 'report.json'}")
    elif args.command == "sweep":
        res = studies.run_sweep(cfg, out, args.jobs)
        for r in res["runs"]:
            print(f"lambda_rel={r['lambda_rel']:g}: sum={r['coeff_sum']:.6g} "
                  f"zeros={r['n_below_1e-8']}/{r['n_coeffs']}")


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg["seed"] = args.seed
        if args.jobs < 1:
            raise ConfigError("--jobs must be >= 1")
    except FileNotFoundError:
        print(f"error: config file not found: {args.config}", file=sys.stderr)
        return EXIT_MISSING
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        _run(args, cfg)
    except studies.MissingInputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except (StepError, NozzleError, ObjectiveError, CalibrationError, DomainError,
            studies.NumericalFailure, FloatingPointError) as exc:
        print(f"error: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
