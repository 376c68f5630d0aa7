#!/usr/bin/env python3
"""
OU Timing - Main Entry Point
Optimal entry and exit thresholds for mean-reverting spreads
"""
import logging
import sys

import colorlog
from dotenv import load_dotenv

# Load environment variables
load_dotenv()

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"


def setup_logging(level: str) -> None:
    handler = colorlog.StreamHandler()
    handler.setFormatter(colorlog.ColoredFormatter("%(log_color)s" + LOG_FORMAT))
    root = logging.getLogger()
    root.handlers[:] = [handler]
    root.setLevel(level.upper())


logger = logging.getLogger(__name__)


def main():
    """Main entry point"""
    from cli.app import run
    from config.settings import get_settings

    setup_logging(get_settings().log_level)
    try:
        code = run(sys.argv[1:])
    except KeyboardInterrupt:
        logger.info("Stopped by user")
        code = 130
    sys.exit(code)


if __name__ == "__main__":
    main()
