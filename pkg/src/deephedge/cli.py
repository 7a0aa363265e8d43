"""``deephedge`` command line.

Subcommands: train, evaluate, policy-surface, path-comparison,
constant-price, pin-risk. Each failure class has its own exit code so
scripts can tell a bad flag from a missing checkpoint.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor

from . import experiments
from .config import load_config
from .errors import ConfigError, EpisodeFailure, MissingCheckpointError, NonFiniteError, TrainingFailure

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_MISSING_CHECKPOINT = 4
EXIT_TRAINING = 5
EXIT_NUMERIC = 6

OUT_ENV = "DEEPHEDGE_OUT"

COMMANDS = ("train", "evaluate", "policy-surface", "path-comparison", "constant-price", "pin-risk")

log = logging.getLogger("deephedge")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise _UsageError(f"{self.prog}: error: {message}")


class _UsageError(Exception):
    pass


def build_parser():
    parser = _Parser(prog="deephedge", description="Hedging under market impact: training and analyses.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress at INFO level")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        p = sub.add_parser(name)
        if name == "train":
            p.add_argument("--config", action="append", default=[],
                           help="config file; repeat to train several independent runs")
            p.add_argument("--jobs", type=int, default=1, help="concurrent training runs (default 1)")
            p.add_argument("--log-timing", action="store_true", help="add wall_ms to train_log.csv")
        else:
            p.add_argument("--config", help="config file")
        if name == "evaluate":
            p.add_argument("--checkpoint", help="trained policy to evaluate")
        p.add_argument("--seed", type=int, help="override run.seed")
        p.add_argument("--out", help="output directory (default: run.output_dir under $%s or cwd)" % OUT_ENV)
        p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                       help="override a config key")
    return parser


def output_dir(cfg, out, suffix=None):
    if out:
        path = out if suffix is None else os.path.join(out, suffix)
    else:
        rel = cfg.output_dir or os.path.join("runs", cfg.experiment if suffix is None else suffix)
        path = rel if os.path.isabs(rel) else os.path.join(os.environ.get(OUT_ENV) or os.getcwd(), rel)
    return os.path.abspath(path)


def _overrides(args, experiment):
    items = [f"run.experiment={experiment}"] + list(args.set)
    if args.seed is not None:
        items.append(f"run.seed={args.seed}")
    return items


def _train_one(config_path, overrides, out, suffix, log_timing):
    cfg = load_config(config_path, overrides)
    target = output_dir(cfg, out, suffix)
    result = experiments.run_train(cfg, target, log_timing=log_timing)
    return target, result.aborted


def _run(args):
    experiment = args.command.replace("-", "_")
    overrides = _overrides(args, experiment)
    if args.command == "train":
        configs = args.config or [None]
        many = len(configs) > 1
        suffixes = [os.path.splitext(os.path.basename(c))[0] if many else None for c in configs]
        if many and len(set(suffixes)) != len(suffixes):
            raise ConfigError("config files for one train invocation need distinct names")
        jobs = [(c, overrides, args.out, s, args.log_timing) for c, s in zip(configs, suffixes)]
        if args.jobs < 1:
            raise ConfigError("--jobs must be >= 1")
        if args.jobs == 1 or not many:
            done = [_train_one(*job) for job in jobs]
        else:
            with ProcessPoolExecutor(max_workers=args.jobs) as pool:
                done = list(pool.map(_train_one, *zip(*jobs)))
        for target, aborted in done:
            print(f"trained -> {target}" + (f" ({aborted} aborted iterations)" if aborted else ""))
        return
    cfg = load_config(args.config, overrides)
    target = output_dir(cfg, args.out)
    if args.command == "evaluate":
        checkpoint = os.path.abspath(args.checkpoint) if args.checkpoint else None
        reports = experiments.run_evaluate(cfg, target, checkpoint)
        for rep in reports:
            print(f"{rep.label:8s} rho_hat={rep.rho_hat:.6g} turnover={rep.turnover_mean:.4g} "
                  f"impact_cost={rep.impact_cost_mean:.4g}")
    else:
        experiments.RUNNERS[experiment](cfg, target)
    print(f"wrote {target}")


def cli_main(argv=None) -> int:
    """Run one command; returns the process exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        _run(args)
    except MissingCheckpointError as exc:
        print(f"deephedge: missing checkpoint: {exc}", file=sys.stderr)
        return EXIT_MISSING_CHECKPOINT
    except ConfigError as exc:
        print(f"deephedge: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TrainingFailure as exc:
        print(f"deephedge: training failed: {exc}", file=sys.stderr)
        return EXIT_TRAINING
    except (EpisodeFailure, NonFiniteError, FloatingPointError) as exc:
        print(f"deephedge: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, ValueError) as exc:
        print(f"deephedge: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    return EXIT_OK


def main():
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
