"""
structlog setup for the CLI.

Records go to stderr so that stdout only ever carries the artifact.
``LOG_FORMAT=json`` switches to one JSON object per line and
``LOG_TO_FILE=true`` adds an uncolored copy under ``LOG_FILE_PATH``.
"""

import logging
import os
import sys
from logging.handlers import RotatingFileHandler

import structlog
from structlog.types import Processor


def _env(name: str, default: str) -> str:
    return os.getenv(name, default).strip()


def _renderer(to_file: bool) -> Processor:
    if _env("LOG_FORMAT", "text").lower() == "json":
        return structlog.processors.JSONRenderer()
    return structlog.dev.ConsoleRenderer(
        colors=sys.stderr.isatty() and not to_file
    )


def configure_logging() -> None:
    level = getattr(
        logging, _env("LOG_LEVEL", "INFO").upper(), logging.INFO
    )
    to_file = _env("LOG_TO_FILE", "false").lower() == "true"

    root = logging.getLogger()
    for handler in root.handlers[:]:
        root.removeHandler(handler)
    handlers: list[logging.Handler] = [logging.StreamHandler(sys.stderr)]
    if to_file:
        path = _env("LOG_FILE_PATH", "logs/pa_percolation.log")
        os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
        handlers.append(
            RotatingFileHandler(path, maxBytes=10**6, backupCount=5)
        )
    for handler in handlers:
        handler.setFormatter(logging.Formatter("%(message)s"))
        root.addHandler(handler)
    root.setLevel(level)

    structlog.configure(
        processors=[
            structlog.stdlib.filter_by_level,
            structlog.contextvars.merge_contextvars,
            structlog.stdlib.add_logger_name,
            structlog.stdlib.add_log_level,
            structlog.processors.TimeStamper(fmt="iso"),
            structlog.processors.format_exc_info,
            _renderer(to_file),
        ],
        wrapper_class=structlog.stdlib.BoundLogger,
        logger_factory=structlog.stdlib.LoggerFactory(),
        cache_logger_on_first_use=True,
    )


configure_logging()


def get_logger(name: str) -> structlog.stdlib.BoundLogger:
    return structlog.get_logger(name)


def bind_run_context(**kwargs) -> None:
    """Attach run identifiers (subcommand, seed) to every later record."""
    structlog.contextvars.bind_contextvars(**kwargs)


def clear_run_context() -> None:
    structlog.contextvars.clear_contextvars()
