"""Command line entry point: ``autobrake train`` and ``autobrake eval``."""
import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import harness
from .env import Scenario, parse_key_values
from .exceptions import AutobrakeError

logger = logging.getLogger("autobrake")


def _positive_int(text):
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {value}")
    return value


def _non_negative_int(text):
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {value}")
    return value


def build_parser():
    parser = argparse.ArgumentParser(prog="autobrake", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", help="train a DDPG brake/throttle controller")
    train.add_argument("--scenario", type=int, choices=[1, 2], default=1,
                       help="1 = static obstacle, 2 = intersection")
    train.add_argument("--episodes", type=_positive_int, default=2000)
    train.add_argument("--seed", type=int, default=0)
    train.add_argument("--config", type=Path, help="key = value overrides file")
    train.add_argument("--out", type=Path, default=Path("runs/train"))
    train.add_argument("--eval-every", type=_non_negative_int, default=None,
                       help="episodes between evaluations, 0 disables (default 50)")
    train.add_argument("--eval-episodes", type=_positive_int, default=None)

    ev = sub.add_parser("eval", help="evaluate a saved checkpoint with exploration off")
    ev.add_argument("--checkpoint", type=Path, required=True)
    ev.add_argument("--episodes", type=_positive_int, default=20)
    ev.add_argument("--seed", type=int, default=0)
    ev.add_argument("--out", type=Path, default=Path("runs/eval"))
    return parser


def parse_cli(args=None):
    """Parse ``args`` into a :class:`~autobrake.harness.RunConfig`.

    Usage errors exit via ``SystemExit`` with status 2.
    """
    parser = build_parser()
    ns = parser.parse_args(args)
    if ns.command == "eval":
        return harness.RunConfig(command="eval", episodes=ns.episodes, eval_episodes=ns.episodes,
                                 seed=ns.seed, output_dir=ns.out, checkpoint=ns.checkpoint)
    values = {}
    if ns.config is not None:
        try:
            values = parse_key_values(ns.config.read_text())
        except OSError as exc:
            parser.error(f"argument --config: {exc}")
    kwargs = dict(episodes=ns.episodes, seed=ns.seed, output_dir=ns.out)
    if ns.eval_every is not None:
        kwargs["eval_every"] = ns.eval_every
    if ns.eval_episodes is not None:
        kwargs["eval_episodes"] = ns.eval_episodes
    try:
        return harness.RunConfig.from_overrides(Scenario(ns.scenario), values, **kwargs)
    except AutobrakeError as exc:
        parser.error(f"argument --config: {exc}")


def _run(config):
    if config.command == "eval":
        agent, stored, _ = harness.load_run_checkpoint(config.checkpoint)
        config = replace(stored, seed=config.seed, eval_episodes=config.eval_episodes,
                         output_dir=config.output_dir, command="eval")
        config.output_dir.mkdir(parents=True, exist_ok=True)
        stats = harness.run_eval(agent, config, rng=np.random.default_rng(config.seed),
                                 out_dir=config.output_dir, tag=0)
        harness.write_csv(config.output_dir / "episodes.csv", harness.EPISODE_HEADER,
                          (r.row() for r in stats.records))
        result = stats.summary()
    else:
        summary = harness.run_training(config)
        result = {"episodes": len(summary.records),
                  "paths": {k: str(v) for k, v in summary.paths.items()}}
        if summary.final_eval is not None:
            result["final_eval"] = summary.final_eval.summary()
    print(json.dumps(result, indent=2, sort_keys=True))


def main(argv=None):
    args = sys.argv[1:] if argv is None else list(argv)
    config = parse_cli(args)
    verbose = "-v" in args or "--verbose" in args
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        _run(config)
    except AutobrakeError as exc:
        logger.error("%s", exc)
        return 1
    except OSError as exc:
        logger.error("I/O failure: %s", exc)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
