"""Command-line entry point.

Usage:
    python -m noise2inpaint.app.main synth   --config run.cfg --out data/
    python -m noise2inpaint.app.main train   --config run.cfg --input data/noisy --out runs/n2i
    python -m noise2inpaint.app.main denoise --checkpoint runs/n2i/model.ckpt --input data/noisy --out out/
    python -m noise2inpaint.app.main eval    --input out/ --clean data/clean --out out/
    python -m noise2inpaint.app.main compare --config compare.cfg --input data/clean --out out/

Precedence: model defaults < --config file < --set key=value < dedicated flags.
"""

from __future__ import annotations

import argparse
import logging
import sys
from collections.abc import Sequence
from pathlib import Path
from typing import NoReturn

import torch

from noise2inpaint.app.cli.commands import cmd_compare, cmd_denoise, cmd_eval, cmd_synth, cmd_train
from noise2inpaint.app.core.config import settings
from noise2inpaint.app.core.config_file import load_run_config
from noise2inpaint.app.core.errors import ConfigurationError, Noise2InpaintError, UsageError
from noise2inpaint.app.schemas.run import Command, RunConfig

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_LIBRARY_ERROR = 2
EXIT_IO_ERROR = 3

COMMANDS = {
    Command.SYNTH: cmd_synth,
    Command.TRAIN: cmd_train,
    Command.DENOISE: cmd_denoise,
    Command.EVAL: cmd_eval,
    Command.COMPARE: cmd_compare,
}

# Dedicated flags and the config keys they override
FLAG_KEYS = {
    "seed": "seed",
    "out": "paths.out",
    "input": "paths.input",
    "clean": "paths.clean",
    "checkpoint": "paths.checkpoint",
}


class _Parser(argparse.ArgumentParser):
    """Raises on bad arguments instead of printing usage and exiting."""

    def error(self, message: str) -> NoReturn:
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="noise2inpaint", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for command in Command:
        p = sub.add_parser(command.value, help=COMMANDS[command].__doc__.splitlines()[0])
        p.add_argument("--config", type=Path, help="flat key=value run configuration file")
        p.add_argument("--seed", type=int, help="global seed (overrides the config file)")
        p.add_argument("--out", type=Path, help="output directory")
        p.add_argument("--input", type=Path, help="input image folder")
        p.add_argument("--clean", type=Path, help="clean reference folder")
        p.add_argument("--checkpoint", type=Path, help="model checkpoint")
        p.add_argument(
            "--set",
            dest="overrides",
            action="append",
            default=[],
            metavar="KEY=VALUE",
            help="override one config key (repeatable)",
        )
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    overrides: dict[str, str] = {"command": args.command}
    for item in args.overrides:
        key, sep, value = item.partition("=")
        if not sep or not key.strip():
            raise ConfigurationError(f"--set expects KEY=VALUE, got {item!r}")
        overrides[key.strip()] = value.strip()
    for flag, key in FLAG_KEYS.items():
        value = getattr(args, flag)
        if value is not None:
            overrides[key] = str(value)
    return load_run_config(args.config, overrides)


def _one_line(exc: BaseException) -> str:
    return " ".join(str(exc).split())


def run(argv: Sequence[str] | None = None) -> int:
    """Parse *argv*, run the command and return the process exit code."""
    try:
        args = build_parser().parse_args(argv)
        config = resolve_config(args)
        COMMANDS[config.command](config)
    except Noise2InpaintError as exc:
        print(f"error: {exc.category}: {_one_line(exc)}", file=sys.stderr)
        return EXIT_LIBRARY_ERROR
    except OSError as exc:
        print(f"error: io: {_one_line(exc)}", file=sys.stderr)
        return EXIT_IO_ERROR
    except Exception as exc:
        logger.debug("Unhandled failure", exc_info=True)
        print(f"error: internal: {type(exc).__name__}: {_one_line(exc)}", file=sys.stderr)
        return EXIT_LIBRARY_ERROR
    return EXIT_OK


def main() -> None:
    logging.basicConfig(
        level=settings.LOG_LEVEL,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    if settings.NUM_THREADS:
        torch.set_num_threads(settings.NUM_THREADS)
    sys.exit(run())


if __name__ == "__main__":
    main()
