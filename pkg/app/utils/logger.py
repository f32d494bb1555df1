"""Structured logging configuration."""
import logging
import sys
from typing import Optional
from app.config import settings

_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'


def get_logger(name: Optional[str] = None) -> logging.Logger:
    """
    Get a configured logger instance.

    Args:
        name: Logger name (typically __name__ of the module)

    Returns:
        Configured logger
    """
    logger = logging.getLogger(name or __name__)

    # Only configure if not already configured
    if not logger.handlers:
        level = getattr(logging, settings.log_level.upper())
        logger.setLevel(level)

        handler = logging.StreamHandler(sys.stdout)
        handler.setLevel(level)
        handler.setFormatter(logging.Formatter(fmt=_FORMAT, datefmt='%Y-%m-%d %H:%M:%S'))

        logger.addHandler(handler)
        logger.propagate = False

    return logger


def set_level(level: str):
    """Change the level of every testbed logger created so far (CLI -v)."""
    numeric = getattr(logging, level.upper())
    for logger in [logging.getLogger(n) for n in logging.root.manager.loggerDict]:
        if logger.handlers:
            logger.setLevel(numeric)
            for handler in logger.handlers:
                handler.setLevel(numeric)


def progress_enabled(logger: logging.Logger) -> bool:
    """Progress bars are shown only when INFO output is shown."""
    return logger.isEnabledFor(logging.INFO)
