"""Command-line interface.

Subcommands:
  run                 run a simulation scenario and write CSV/JSON/PNG artifacts
  test                test beta == beta0 on a CSV dataset, print the JSON outcome
  ci                  print the confidence interval for a CSV dataset
  lowerbound-verify   run the identity-check suite and write a JSON report

Exit codes: 0 on success, 1 on configuration or usage errors, 2 when an
identity check fails.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .datagen import load_dataset
from .errors import DensetestError
from .harness import SCENARIOS, ExperimentConfig, run_experiment
from .inference import test_beta, tuning_constants
from .model import SpaceConfig


def _load_space(path: str | None) -> SpaceConfig:
    if path is None:
        return SpaceConfig()
    return SpaceConfig.from_dict(json.loads(Path(path).read_text()))


def _load_experiment(args) -> ExperimentConfig:
    if args.config:
        cfg = ExperimentConfig.from_json_file(args.config)
        if args.scenario and args.scenario != cfg.scenario:
            cfg = ExperimentConfig.from_dict({**cfg.to_dict(), "scenario": args.scenario})
    else:
        if not args.scenario:
            raise ValueError("either --scenario or --config is required")
        cfg = ExperimentConfig(scenario=args.scenario)
    if args.seed is not None:
        cfg.seed = args.seed
    return cfg


def _threads(args) -> int:
    if args.threads is not None:
        return args.threads
    return int(os.environ.get("DENSETEST_THREADS", "1"))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="densetest",
        description=__doc__,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a simulation scenario")
    run.add_argument("--scenario", choices=SCENARIOS)
    run.add_argument("--config", help="ExperimentConfig JSON file")
    run.add_argument("--seed", type=int, default=None)
    run.add_argument("--out", default=None, help="output table path")
    run.add_argument("--threads", type=int, default=None,
                     help="worker threads (default: DENSETEST_THREADS or 1)")
    run.add_argument("--no-figures", action="store_true", help="skip figure rendering")

    for name, needs_beta0 in (("test", True), ("ci", False)):
        cmd = sub.add_parser(name, help=f"{name} from a CSV dataset")
        cmd.add_argument("--config", help="SpaceConfig JSON file (defaults used when omitted)")
        cmd.add_argument("--data", required=True, help="dataset CSV with header y,z,w_1,...")
        if needs_beta0:
            cmd.add_argument("--beta0", type=float, required=True)

    verify = sub.add_parser("lowerbound-verify", help="run the identity-check suite")
    verify.add_argument("--config", help="ExperimentConfig or SpaceConfig JSON file")
    verify.add_argument("--seed", type=int, default=None)
    verify.add_argument("--out", default="report.json")
    verify.add_argument("--no-figures", action="store_true")

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            cfg = _load_experiment(args)
            code, summary = run_experiment(
                cfg,
                threads=_threads(args),
                out_path=args.out,
                render_figures=not args.no_figures,
            )
            if cfg.scenario == "lowerbound-verify":
                print(json.dumps({"passed": summary["passed"]}))
            return code

        if args.command in ("test", "ci"):
            space = _load_space(args.config)
            data = load_dataset(args.data)
            if args.command == "test":
                outcome = test_beta(data, space, beta0=args.beta0)
                print(outcome.to_json())
            else:
                outcome = test_beta(data, space, beta0=0.0)
                tc = tuning_constants(space, data.n, data.p)
                print(json.dumps({
                    "beta_hat": outcome.beta_hat,
                    "c_n": tc.c_n,
                    "ci_lower": outcome.ci_lower,
                    "ci_upper": outcome.ci_upper,
                }))
            return 0

        if args.command == "lowerbound-verify":
            raw = json.loads(Path(args.config).read_text()) if args.config else {}
            if "scenario" in raw:
                raw["scenario"] = "lowerbound-verify"
                cfg = ExperimentConfig.from_dict(raw)
            elif raw and "M" in raw:
                cfg = ExperimentConfig(
                    scenario="lowerbound-verify", space=SpaceConfig.from_dict(raw)
                )
            else:
                cfg = ExperimentConfig(scenario="lowerbound-verify")
            if args.seed is not None:
                cfg.seed = args.seed
            code, summary = run_experiment(
                cfg, threads=1, out_path=args.out, render_figures=not args.no_figures
            )
            print(json.dumps({"passed": summary["passed"], "report": str(args.out)}))
            return code

        parser.error(f"unknown command {args.command}")
        return 1
    except (DensetestError, ValueError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
