# --- START OF FILE main.py ---

import argparse
import logging
import sys

# --- Local Imports ---
from benchmarks import list_benchmarks
from history import HistoryWriter, export_history, read_history, resume_state, truncate_tail
from hyperband import MFESHyperband
from run_config import RunConfig, apply_overrides, build_evaluator, load_config
from utils import (
    ConfigFileError, EvaluatorSetupError, HistoryCorruptError, InvalidParameterError,
    __version__, default_history_path, format_loss, setup_logging,
)

logger = logging.getLogger(__name__)

EXIT_OK, EXIT_UNEXPECTED, EXIT_CONFIG, EXIT_EVALUATOR, EXIT_HISTORY = 0, 1, 2, 3, 4


def _make_driver(cfg: RunConfig) -> MFESHyperband:
    evaluator = build_evaluator(cfg)
    try:
        return MFESHyperband(cfg.space, cfg.hyperband, cfg.sampler, cfg.forest, cfg.ensemble, evaluator,
                             seed=cfg.seed, workers=cfg.workers, timeout=cfg.pool_timeout,
                             backend=cfg.backend, clock=cfg.clock)
    except InvalidParameterError as e:
        raise ConfigFileError(str(e))


def _report(result, history_path: str):
    if result.best is None:
        print("No successful evaluation was recorded.")
    else:
        print(f"Best configuration ({result.best.config.id}) at r={result.best.resource:g}: "
              f"loss {format_loss(result.best.loss)}")
        for name, value in result.best.config.values.items():
            print(f"  {name} = {value}")
    print(f"Brackets: {result.brackets_run}, resource used: {result.resource_used:g}, history: {history_path}")


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    cfg = apply_overrides(cfg, seed=args.seed, workers=args.workers, budget=args.budget, budget_kind=args.budget_kind,
                          history=args.history, clock=args.clock, rho=args.rho, fusion=args.fusion)
    path = cfg.history or default_history_path()
    driver = _make_driver(cfg)
    with HistoryWriter(path, cfg.clock) as writer:
        driver.recorder = writer
        writer.write_meta(cfg)
        logger.info(f"Run started: seed={cfg.seed}, R={cfg.hyperband.R}, eta={cfg.hyperband.eta}, "
                    f"budget={cfg.hyperband.total_budget} ({cfg.hyperband.budget_kind}), history={path}")
        result = driver.run(args.max_brackets)
    _report(result, path)
    return EXIT_OK


def cmd_resume(args) -> int:
    log = read_history(args.history)
    state = resume_state(log)
    if state.finished:
        logger.info(f"{args.history} already holds a finished run; nothing to do.")
        print(f"Run in {args.history} is already finished.")
        return EXIT_OK
    truncate_tail(log)
    cfg = state.config
    driver = _make_driver(cfg)
    with HistoryWriter(args.history, cfg.clock, append=True) as writer:
        driver.recorder = writer
        driver.restore(state.measurements, state.next_bracket, state.elapsed)
        result = driver.run(args.max_brackets)
    _report(result, args.history)
    return EXIT_OK


def cmd_export(args) -> int:
    inc_path, w_path = export_history(args.history, args.format, args.out)
    print(f"Incumbent table: {inc_path}")
    print(f"Weights table:   {w_path}")
    return EXIT_OK


def cmd_bench_list(args) -> int:
    print(f"{'name':<15}{'dim':>5}{'optimum':>12}{'R':>6}  description")
    for b in list_benchmarks():
        print(f"{b['name']:<15}{b['dimension']:>5}{b['optimum']:>12.6g}{b['default_R']:>6g}  {b['description']}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mfes-hb", description="Hyperband with a multi-fidelity ensemble surrogate.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--log-level", default=None, help="overrides MFES_LOG_LEVEL")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="start a new optimization run")
    run.add_argument("config", help="YAML run configuration")
    run.add_argument("--seed", type=int)
    run.add_argument("--workers", type=int)
    run.add_argument("--budget", type=float, help="total budget (seconds or resource units)")
    run.add_argument("--budget-kind", choices=("wallclock", "resource"))
    run.add_argument("--history", help="history file (default: MFES_HISTORY_DIR/run-<timestamp>.jsonl)")
    run.add_argument("--clock", choices=("wall", "virtual"))
    run.add_argument("--rho", type=float)
    run.add_argument("--fusion", choices=("gpoe", "equal_weight", "single_best", "top_only"))
    run.add_argument("--max-brackets", type=int, help="stop after this many brackets, leaving the run resumable")
    run.set_defaults(func=cmd_run)

    resume = sub.add_parser("resume", help="continue an interrupted run from its history file")
    resume.add_argument("history")
    resume.add_argument("--max-brackets", type=int)
    resume.set_defaults(func=cmd_resume)

    export = sub.add_parser("export", help="write incumbent and weight tables from a history file")
    export.add_argument("history")
    export.add_argument("--format", choices=("csv", "jsonl"), default="csv")
    export.add_argument("--out", help="output prefix (default: history path without extension)")
    export.set_defaults(func=cmd_export)

    bench = sub.add_parser("bench-list", help="list the built-in benchmarks")
    bench.set_defaults(func=cmd_bench_list)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    setup_logging(args.log_level)
    try:
        return args.func(args)
    except ConfigFileError as e:
        logger.error(f"Invalid configuration: {e}")
        print(f"error: invalid configuration: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except EvaluatorSetupError as e:
        logger.error(f"Evaluator setup failed: {e}")
        print(f"error: evaluator setup failed: {e}", file=sys.stderr)
        return EXIT_EVALUATOR
    except HistoryCorruptError as e:
        logger.error(f"History unusable: {e}")
        print(f"error: {e}", file=sys.stderr)
        return EXIT_HISTORY
    except KeyboardInterrupt:
        logger.info("Interrupted; the history file can be resumed.")
        return EXIT_UNEXPECTED
    except Exception as e:
        logger.critical(f"Unexpected error: {e}", exc_info=True)
        return EXIT_UNEXPECTED


if __name__ == '__main__':
    sys.exit(main())

# --- END OF FILE main.py ---
