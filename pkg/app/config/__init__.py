import os
import sys

from loguru import logger

from app.config import config

_root_dir = os.path.dirname(os.path.dirname(os.path.dirname(os.path.realpath(__file__))))

_FORMAT = (
    "<green>{time:%Y-%m-%d %H:%M:%S}</> | "
    + "<level>{level}</> | "
    + "{thread.name} | "
    + '"{extra[rel_path]}:{line}":<blue> {function}</> '
    + "- <level>{message}</>"
    + "\n"
)


def _format_record(record):
    # paths relative to the project root; the record itself is shared between sinks
    record["extra"]["rel_path"] = f"./{os.path.relpath(record['file'].path, _root_dir)}"
    return _FORMAT


def log_level() -> str:
    """JUMPGEN_LOG_LEVEL, then the top-level log_level of config.toml."""
    return os.getenv("JUMPGEN_LOG_LEVEL", "").strip().upper() or config.log_level


def add_run_log(out_dir: str) -> int:
    """Mirror everything logged during one run into <out_dir>/run.log."""
    return logger.add(
        os.path.join(out_dir, "run.log"),
        level="DEBUG",
        format=_format_record,
        mode="w",
        encoding="utf-8",
        colorize=False,
    )


def __init_logger():
    logger.remove()
    logger.add(
        sys.stdout,
        level=log_level(),
        format=_format_record,
        colorize=True,
    )


__init_logger()
