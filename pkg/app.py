import argparse
import logging
import os
import sys

from dotenv import load_dotenv

from api import ConfigError, ExperimentConfig, apply_overrides, cli_oracle_check, cli_sweep, cli_train, load_config

load_dotenv()

logger = logging.getLogger("ia_cache_rl")


def _threads() -> int:
    raw = os.getenv("IA_CACHE_RL_THREADS")
    if not raw:
        return os.cpu_count() or 1
    try:
        return max(1, int(raw))
    except ValueError:
        raise ConfigError(f"IA_CACHE_RL_THREADS must be an integer, got {raw!r}", key="IA_CACHE_RL_THREADS") from None


def _load(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    return apply_overrides(cfg, seed=args.seed, out_dir=args.out, full=args.full)


def train(args) -> int:
    cfg = _load(args)
    files = cli_train(cfg)
    for name, path in files.items():
        print(f"{name}: {path}")
    return 0


def sweep(args) -> int:
    cfg = _load(args)
    records = cli_sweep(cfg, max_workers=_threads())
    print(f"{len(records)} runs written to {cfg.out_dir}")
    return 0


def oracle_check(args) -> int:
    cfg = _load(args)
    report = cli_oracle_check(cfg, corrupt_discount=args.corrupt_discount)
    print("\n".join(report.lines[:6]))
    return 0 if report.passed else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="app.py",
        description="Deep Q-learning user scheduling for cache-enabled interference alignment networks",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    for name, handler, help_text in (
        ("train", train, "train one scheme and write the convergence curve"),
        ("sweep", sweep, "compare the schemes across p_stay values"),
        ("oracle-check", oracle_check, "check the learners against value iteration on L=2, H=3"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="key = value experiment file (defaults when omitted)")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--out", help="override the output directory")
        p.add_argument("--full", action="store_true", help="train for full_episodes instead of episodes")
        p.set_defaults(handler=handler)
        if name == "oracle-check":
            p.add_argument("--corrupt-discount", type=float, default=None, help=argparse.SUPPRESS)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(
        level=os.getenv("IA_CACHE_RL_LOG_LEVEL", "INFO").upper(),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    args = build_parser().parse_args(argv)
    try:
        return args.handler(args)
    except ConfigError as e:
        logger.error("Configuration error: %s", e)
        return 2
    except (ValueError, RuntimeError) as e:
        logger.error("%s failed: %s", args.command, e)
        return 1


if __name__ == '__main__':
    sys.exit(main())
