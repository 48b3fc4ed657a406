"""Command-line surface: train, eval, gradcheck, suite, report.

Exit status: 0 success, 1 usage error (bad arguments, missing files),
2 validation failure (invalid config, corrupt checkpoint, failed
gradient checks), 3 numerical abort.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from .config import (
    ConfigError,
    ExperimentConfig,
    default_experiment_config,
    parse_config,
    render_config,
)
from .evaluation import evaluate_policy
from .gradcheck import reports_to_csv, run_gradcheck_suite
from .policy import CheckpointError, load_checkpoint
from .reports import ReportError, generate_plots, write_comparison_csv, write_dynamics_csv
from .tasks import generate_prompts
from .trainer import NumericalAbort, TrainResult, run_experiment_suite, train

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on usage errors; this CLI reserves 2 for
    # validation failures, so route usage problems through our own code.
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="experiment config file")
    common.add_argument("--seed", type=int, help="override [run] seed")
    common.add_argument("--out", type=Path, help="override output directory")
    common.add_argument(
        "--print-defaults",
        action="store_true",
        help="print the fully defaulted config and exit",
    )
    common.add_argument(
        "--dry-run",
        action="store_true",
        help="validate and print the resolved config without running",
    )

    parser = _Parser(prog="rlvrlab", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("train", parents=[common], help="run one training experiment")

    p_eval = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint")
    p_eval.add_argument("--checkpoint", type=Path, required=True)

    p_grad = sub.add_parser(
        "gradcheck", parents=[common], help="finite-difference gradient verification"
    )
    p_grad.add_argument("--cases", type=int, default=100, help="cases per objective")
    p_grad.add_argument("--tolerance", type=float, default=1e-6)
    p_grad.add_argument(
        "--negative-control",
        action="store_true",
        help="inject a sign flip; the suite must then report failures",
    )

    sub.add_parser(
        "suite", parents=[common], help="train all algorithms from one initial policy"
    )

    p_report = sub.add_parser(
        "report", parents=[common], help="regenerate plots from existing CSVs"
    )
    p_report.add_argument(
        "--k-list", type=str, default=None, help="comma-separated k filter for plots"
    )
    return parser


def _load_experiment(args) -> ExperimentConfig:
    if args.config is None:
        raise UsageError("--config is required (or use --print-defaults)")
    if not Path(args.config).exists():
        raise UsageError(f"config file not found: {args.config}")
    experiment = parse_config(args.config)
    if args.seed is not None:
        experiment.train = replace(experiment.train, seed=args.seed)
    if args.out is not None:
        experiment.output_dir = args.out
    if experiment.output_dir is None:
        raise ConfigError("no output directory: set [run] output_dir or pass --out")
    return experiment


def _write_resolved(experiment: ExperimentConfig) -> Path:
    out = Path(experiment.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "resolved-config.ini").write_text(render_config(experiment))
    return out


def _train_dynamics_rows(name: str, result: TrainResult):
    return [
        (name, rec.step, rec.entropy, rec.correct_ratio, rec.fully_solved_ratio)
        for rec in result.log
    ]


def cmd_train(args) -> int:
    if args.print_defaults:
        print(render_config(default_experiment_config()), end="")
        return EXIT_OK
    experiment = _load_experiment(args)
    if args.dry_run:
        print(render_config(experiment), end="")
        return EXIT_OK
    out = _write_resolved(experiment)
    result = train(experiment.train, out_dir=out)
    name = experiment.train.objective.algorithm.value
    base = next(r for r in result.eval_reports if r.step == 0)
    final = result.eval_reports[-1]
    rows = [("base", k, v) for k, v in zip(base.k_list, base.exact)]
    rows += [(name, k, v) for k, v in zip(final.k_list, final.exact)]
    write_comparison_csv(out / "comparison.csv", rows)
    write_dynamics_csv(out / "dynamics.csv", _train_dynamics_rows(name, result))
    generate_plots(out)
    print(f"trained {name} for {experiment.train.steps} steps -> {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    if args.print_defaults:
        print(render_config(default_experiment_config()), end="")
        return EXIT_OK
    if not Path(args.checkpoint).exists():
        raise UsageError(f"checkpoint not found: {args.checkpoint}")
    experiment = _load_experiment(args)
    checkpoint = load_checkpoint(args.checkpoint)
    train_cfg = experiment.train
    prompts = generate_prompts(train_cfg.task, train_cfg.prompt_count, train_cfg.seed)
    missing = [p.prompt_id for p in prompts if p.prompt_id not in checkpoint.params.tables]
    if missing:
        raise CheckpointError(
            f"checkpoint lacks prompts {missing}; was it trained with this config?"
        )
    recorded = (checkpoint.meta or {}).get("prompt_targets")
    if recorded is not None:
        mismatched = [
            p.prompt_id
            for p in prompts
            if recorded.get(str(p.prompt_id)) != p.target
        ]
        if mismatched:
            raise CheckpointError(
                f"checkpoint prompt targets disagree with this config/seed for "
                f"prompts {mismatched}; evaluation would score the wrong answers"
            )
    if args.dry_run:
        print(render_config(experiment), end="")
        return EXIT_OK
    out = _write_resolved(experiment)
    report = evaluate_policy(
        checkpoint.params,
        prompts,
        train_cfg.k_list,
        train_cfg.eval_samples,
        train_cfg.eval_temperature,
        seed=train_cfg.seed,
        step=checkpoint.step,
    )
    stem = f"eval-step-{checkpoint.step:06d}"
    (out / f"{stem}.json").write_bytes(report.to_json_bytes())
    (out / f"{stem}.csv").write_text(report.to_csv())
    print(f"evaluated step {checkpoint.step}: exact Pass@{report.k_list[0]} = "
          f"{report.exact[0]:.4f} -> {out / stem}.json")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    if args.print_defaults:
        print(render_config(default_experiment_config()), end="")
        return EXIT_OK
    corrupt = "psr_sign" if args.negative_control else None
    reports = run_gradcheck_suite(
        seed=args.seed if args.seed is not None else 0,
        cases=args.cases,
        tolerance=args.tolerance,
        corrupt=corrupt,
    )
    csv_text = reports_to_csv(reports)
    if args.out is not None:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "gradcheck.csv").write_text(csv_text)
    failures = [r for r in reports if not r.passed]
    print(f"gradcheck: {len(reports) - len(failures)}/{len(reports)} cases passed")
    for failure in failures[:10]:
        print(
            f"  FAIL {failure.case_id}: max_rel_err={failure.max_rel_err:.3e}",
            file=sys.stderr,
        )
    return EXIT_OK if not failures else EXIT_VALIDATION


def cmd_suite(args) -> int:
    if args.print_defaults:
        print(render_config(default_experiment_config()), end="")
        return EXIT_OK
    experiment = _load_experiment(args)
    if args.dry_run:
        print(render_config(experiment), end="")
        return EXIT_OK
    out = _write_resolved(experiment)
    suite = run_experiment_suite(
        experiment.train, experiment.suite_algorithms, out_dir=out
    )
    write_comparison_csv(out / "comparison.csv", suite.comparison_rows)
    dynamics = []
    for name, result in suite.results.items():
        dynamics.extend(_train_dynamics_rows(name, result))
    write_dynamics_csv(out / "dynamics.csv", dynamics)
    generate_plots(out)
    print(f"suite of {len(suite.results)} algorithms -> {out}")
    return EXIT_OK


def cmd_report(args) -> int:
    if args.print_defaults:
        print(render_config(default_experiment_config()), end="")
        return EXIT_OK
    out = args.out if args.out is not None else Path(".")
    if not Path(out).exists():
        raise UsageError(f"output directory not found: {out}")
    k_filter = None
    if args.k_list:
        k_filter = tuple(int(k) for k in args.k_list.replace(" ", "").split(",") if k)
    generate_plots(Path(out), k_filter)
    print(f"plots regenerated in {Path(out) / 'plots'}")
    return EXIT_OK


_COMMANDS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "gradcheck": cmd_gradcheck,
    "suite": cmd_suite,
    "report": cmd_report,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigError, CheckpointError, ReportError, ValueError) as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except NumericalAbort as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
