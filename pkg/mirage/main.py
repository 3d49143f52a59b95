# -*- coding: utf-8 -*-
import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

from dotenv import load_dotenv

from .config import load_config
from .errors import MirageError
from .runner import COMMANDS, run


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mirage",
        description="Explanation-manipulation experiments on tabular data.",
    )
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", required=True, type=Path,
                        help="experiment config file (flat key = value)")
    parser.add_argument("--output", type=Path, default=None,
                        help="output directory; overrides MIRAGE_OUTPUT_DIR and output.dir")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    """
    Main entry point.
    Load environment variables from .env file and run one command.

    Returns:
        int: Exit code.
    """
    load_dotenv()
    level = os.environ.get("MIRAGE_LOG_LEVEL", "INFO").strip().upper()
    logging.basicConfig(
        level=getattr(logging, level, logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    args = _parser().parse_args(argv)

    try:
        config = load_config(args.config)
        output_dir = (
            args.output
            or Path(os.environ.get("MIRAGE_OUTPUT_DIR", "").strip() or config.output_dir)
        )
        return run(args.command, config, output_dir)
    except MirageError as e:
        error = {
            "error": type(e).__name__,
            "message": str(e),
            "exit_code": e.exit_code,
        }
        print(json.dumps(error, ensure_ascii=False), file=sys.stderr)
        return e.exit_code


if __name__ == "__main__":
    raise SystemExit(main())
