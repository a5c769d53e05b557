"""Command line entry point: ``scbandit {run,validate,oracle}``.

Exit status is 0 on success, 1 for an invalid configuration and 2 for a
runtime failure.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys

from . import __version__
from .errors import ConfigError
from .experiment import draw_instance, emit_results, load_config, run_experiment, stream
from .model import EnvironmentParams, expected_payoff
from .optimizer import optimal_sequence
from .oracle import DEFAULT_MAX_N, enumerate_optimal
from .simulator import sample_features

log = logging.getLogger("scbandit")


def _with_overrides(config, args):
    changes = {}
    for attr, value in (("seed", args.seed), ("replications", args.reps),
                        ("horizon", args.horizon), ("record_stride", args.record_stride)):
        if value is not None:
            if value < (0 if attr == "seed" else 1):
                raise ConfigError(f"--{attr.replace('_', '-')}: invalid value {value}")
            changes[attr] = value
    return dataclasses.replace(config, **changes)


def cmd_run(args) -> int:
    config = _with_overrides(load_config(args.config), args)
    result = run_experiment(config, parallelism=args.parallelism, out_dir=args.out,
                            resume=args.resume)
    for path in emit_results(result, args.out, keep_checkpoints=args.keep_checkpoints):
        log.info("wrote %s", path)
    for name in result.policies:
        final = result.final_regret(name)
        mean, se = result.aggregate(name)
        print(f"{name}: mean cumulative regret {mean[-1]:.4f} (stderr {se[-1]:.4f}) "
              f"over {final.size} replications")
    return 0


def cmd_validate(args) -> int:
    config = load_config(args.config)
    print(json.dumps(config.to_dict(), indent=2, sort_keys=True))
    return 0


def cmd_oracle(args) -> int:
    config = load_config(args.config)
    if not 0 <= args.replication:
        raise ConfigError("--replication must be >= 0")
    inst = draw_instance(config, args.replication)
    env = inst.env
    if env is None:
        x = sample_features(inst.ctx.features, stream(config.seed, args.replication, 1))
        env = inst.ctx.at(x)
        print("features:", " ".join(f"{v:.6g}" for v in x))
    seq = optimal_sequence(inst.catalog, env)
    value = expected_payoff(inst.catalog, env, seq).expected_payoff
    print(f"score ordering: {list(seq)} payoff {value:.10g}")
    if inst.catalog.n <= args.max_n:
        best, best_value = enumerate_optimal(inst.catalog, env, max_n=args.max_n)
        print(f"enumeration:    {list(best)} payoff {best_value:.10g}")
        print(f"gap: {best_value - value:.3e}")
    else:
        print(f"enumeration skipped: N={inst.catalog.n} exceeds --max-n {args.max_n}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="scbandit", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="simulate every configured policy and write results")
    run.add_argument("config")
    run.add_argument("--out", required=True, help="output directory")
    run.add_argument("--seed", type=int)
    run.add_argument("--reps", type=int, help="number of replications")
    run.add_argument("--horizon", type=int)
    run.add_argument("--record-stride", type=int, help="write every k-th step (plus the last)")
    run.add_argument("--parallelism", type=int, default=1, help="worker processes")
    run.add_argument("--resume", action="store_true",
                     help="reuse replications checkpointed in --out")
    run.add_argument("--keep-checkpoints", action="store_true")
    run.set_defaults(func=cmd_run)

    val = sub.add_parser("validate", help="check a config and print it normalized")
    val.add_argument("config")
    val.set_defaults(func=cmd_validate)

    orc = sub.add_parser("oracle", help="optimal sequence of a drawn instance, with brute force for small N")
    orc.add_argument("config")
    orc.add_argument("--replication", type=int, default=0)
    orc.add_argument("--max-n", type=int, default=DEFAULT_MAX_N)
    orc.set_defaults(func=cmd_oracle)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - report and map to the runtime exit code
        log.debug("failure", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
