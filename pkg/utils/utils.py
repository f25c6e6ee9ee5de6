from typing import Any, Callable, Optional
import logging
import os

logger = logging.getLogger(__name__)

_logging_configured = False


def default_on_exception(default_value: Any, func: Callable):
    try:
        return func()
    except Exception as e:
        logger.error(f"Error calling {getattr(func, '__name__', repr(func))}: {e}")
        return default_value


def setup_logging(level: Optional[str] = None, fmt: Optional[str] = None):
    """Configure root logging once; later calls only adjust the level"""
    global _logging_configured
    from config.settings import settings_manager

    defaults = settings_manager.settings.logging
    level_name = (level or defaults.level).upper()
    if not _logging_configured:
        logging.basicConfig(level=level_name, format=fmt or defaults.format)
        _logging_configured = True
    else:
        logging.getLogger().setLevel(level_name)


def worker_count() -> int:
    """Worker cap from HF_LAB_THREADS (1 = run inline)"""
    raw = os.environ.get("HF_LAB_THREADS", "1")
    try:
        count = int(raw)
    except ValueError:
        logger.warning(f"Ignoring non-integer HF_LAB_THREADS={raw!r}")
        return 1
    return max(1, count)
