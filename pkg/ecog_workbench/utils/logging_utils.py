"""
Logging setup for the command-line entry point
"""

import logging
import sys

from ..config import LOG_DATE_FORMAT, LOG_FORMAT, PROJECT_NAME


def configure_logging(level: str = "INFO", quiet: bool = False) -> logging.Logger:
    """
    Install a single stderr handler on the package logger

    Args:
        level: Logging level name
        quiet: Only show warnings and errors

    Returns:
        The package logger
    """
    numeric = logging.WARNING if quiet else getattr(logging, str(level).upper(), None)
    if not isinstance(numeric, int):
        numeric = logging.INFO

    logger = logging.getLogger(PROJECT_NAME)
    for handler in list(logger.handlers):
        logger.removeHandler(handler)
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter(LOG_FORMAT, datefmt=LOG_DATE_FORMAT, style="{"))
    logger.addHandler(handler)
    logger.setLevel(numeric)
    logger.propagate = False
    return logger
