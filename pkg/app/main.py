"""Command-line entry point: python -m app.main {generate,solve,experiment} --config FILE."""
import argparse
import logging
import sys
from typing import List, Optional

from pydantic import ValidationError

from app.cli.commands import COMMANDS
from app.core.config import settings
from app.core.errors import ConfigurationError, PuccilabError
from app.core.logging_setup import configure_logging
from app.core.parallel import set_workers
from app.core.schemas import RunConfig, config_keys

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


def build_parser() -> argparse.ArgumentParser:
    keys = "\n".join(f"  {key}" for key in config_keys())
    parser = argparse.ArgumentParser(
        prog="python -m app.main",
        description="PucciLab: extremal operators, solvers and experiments on random data clouds.",
        epilog=f"Config keys (JSON, nested blocks):\n{keys}\n\nExit codes: 0 success, 2 configuration, 3 runtime.",
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("command", choices=sorted(COMMANDS), help="what to run")
    parser.add_argument("--config", required=True, help="path to the JSON run configuration")
    parser.add_argument("--seed", type=int, default=None, help="override the config seed")
    parser.add_argument("--threads", type=int, default=None, help="worker count (0 = all cores)")
    parser.add_argument("--out", default=None, help="output directory")
    return parser


def _format_validation(error: ValidationError) -> str:
    parts = []
    for item in error.errors():
        path = ".".join(str(p) for p in item["loc"]) or "<root>"
        parts.append(f"{path}: {item['msg']}")
    return "; ".join(parts)


def load_config(args: argparse.Namespace) -> RunConfig:
    config = RunConfig.load(args.config)
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.threads is not None:
        overrides["threads"] = args.threads
    if args.out is not None:
        overrides["output_dir"] = args.out
    if config.command is not None and config.command != args.command:
        raise ConfigurationError(f"command: config is for '{config.command}', not '{args.command}'")
    if overrides:
        data = config.model_dump(by_alias=True)
        data.update(overrides)
        config = RunConfig.model_validate(data)
    return config


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging()
    try:
        config = load_config(args)
        set_workers(config.threads if config.threads is not None else settings.workers)
        result = COMMANDS[args.command](config)
        logger.info(f"Command '{args.command}' finished: {result}")
        return EXIT_OK
    except ValidationError as e:
        message = _format_validation(e)
        logger.error(f"Configuration error: {message}")
        print(f"configuration error: {message}", file=sys.stderr)
        return EXIT_CONFIG
    except PuccilabError as e:
        logger.error(f"Command '{args.command}' failed: {e}", exc_info=e.exit_code != EXIT_CONFIG)
        print(f"{'configuration' if e.exit_code == EXIT_CONFIG else 'runtime'} error: {e}", file=sys.stderr)
        return e.exit_code
    except (OSError, ValueError) as e:
        logger.error(f"Command '{args.command}' failed: {e}", exc_info=True)
        print(f"runtime error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
