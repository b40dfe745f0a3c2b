"""Logging setup and coloured operator output."""

import logging
import sys
from typing import Optional
from colorama import init, Fore as f, Style as s
from config import LOG_LEVEL
init(autoreset=True)

_LEVEL_COLORS = {
    logging.DEBUG: f.CYAN,
    logging.INFO: f.WHITE,
    logging.WARNING: f.YELLOW,
    logging.ERROR: f.RED,
    logging.CRITICAL: f.LIGHTRED_EX,
}

_configured = False


class ColorFormatter(logging.Formatter):
    """Formatter that tints the level name by severity."""

    def format(self, record: logging.LogRecord) -> str:
        color = _LEVEL_COLORS.get(record.levelno, '')
        record.levelname_colored = f"{color}{record.levelname:<7}{s.RESET_ALL}"
        return super().format(record)


def setup_logging(level: Optional[str] = None) -> None:
    """Configure the root logger once; level defaults to POSELABEL_LOG."""
    global _configured
    level_name = (level or LOG_LEVEL).upper()
    numeric = getattr(logging, level_name, logging.INFO)
    root = logging.getLogger()
    root.setLevel(numeric)
    if _configured:
        return
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(ColorFormatter('%(levelname_colored)s %(name)s: %(message)s'))
    root.addHandler(handler)
    _configured = True


def info(message: str) -> None:
    print(f"{f.CYAN}{message}")


def success(message: str) -> None:
    print(f"✅ {f.GREEN}{message}")


def warn(message: str) -> None:
    print(f"⚠️ {f.YELLOW}{message}")


def error(message: str) -> None:
    print(f"❌ {f.RED}{message}")


def rule() -> None:
    print(f"{f.YELLOW}=" * 50)
