"""
Command-line entry point: lowreg <command> --config <path> [--out <dir>]
"""
import argparse
import sys
from pathlib import Path
from typing import List, Optional

import structlog

from app.commands import COMMANDS
from app.config import settings
from app.core.exceptions import ConfigValidationError
from app.middleware.error_handler import handle_exception
from app.schemas.config import load_config
from app.utils.logger import bind_experiment, configure_logging

logger = structlog.get_logger()


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lowreg",
        description="Distributional Ricci and Bakry-Emery curvature experiments on a coordinate chart",
    )
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", type=Path, help="Experiment TOML file (optional for `catalog`)")
    parser.add_argument("--out", type=Path, default=None, help="Output directory for CSV reports")
    return parser


def run_command(command: str, config_path: Optional[Path], out_dir: Optional[Path] = None) -> int:
    """
    Load the config, run one command and map the outcome to an exit status:
    0 for PASS, 1 for FAIL, 2 for errors.
    """
    context = {"command": command, "config": str(config_path) if config_path else None}
    try:
        config = load_config(config_path) if config_path is not None else None
        if config is None and command != "catalog":
            raise ConfigValidationError([{"field": "--config", "message": f"{command} needs an experiment file"}])
        out = Path(out_dir or settings.output_dir)
        if config is not None:
            context["experiment"] = config.name
        bind_experiment(**context)
        logger.info("Running command", out=str(out))
        return COMMANDS[command](config, out)
    except Exception as exc:
        return handle_exception(exc, context)


def main(argv: Optional[List[str]] = None) -> int:
    configure_logging()
    args = build_parser().parse_args(argv)
    return run_command(args.command, args.config, args.out)


if __name__ == "__main__":
    sys.exit(main())
