# utils/logger.py

import logging
import os
from logging.handlers import RotatingFileHandler


def log_dir():
    """Directory for log files; MOPG_LOG_DIR overrides the default."""
    return os.getenv('MOPG_LOG_DIR', 'logs')


def _level_from_env(default):
    name = os.getenv('MOPG_LOG_LEVEL')
    if not name:
        return default
    return getattr(logging, name.upper(), default)


def setup_logger(name, log_file=None, level=logging.INFO, console_level=logging.WARNING, log_rotation=False):
    """Set up a logger with file and console handlers.

    ``log_file`` defaults to ``<log_dir>/<name>.log``. Calling this twice for the same
    name returns the already configured logger instead of stacking handlers.
    """
    logger = logging.getLogger(name)
    if getattr(logger, '_mopg_configured', False):
        return logger

    if log_file is None:
        log_file = os.path.join(log_dir(), f'{name}.log')
    os.makedirs(os.path.dirname(log_file) or '.', exist_ok=True)

    level = _level_from_env(level)
    logger.setLevel(level)
    logger.propagate = False

    if log_rotation:
        file_handler = RotatingFileHandler(log_file, maxBytes=1024*1024, backupCount=5)  # 1MB per file, keep 5 backups
    else:
        file_handler = logging.FileHandler(log_file)

    file_handler.setLevel(level)
    file_handler.setFormatter(logging.Formatter('%(asctime)s - %(name)s - %(levelname)s - %(message)s'))
    logger.addHandler(file_handler)

    console_handler = logging.StreamHandler()
    console_handler.setLevel(console_level)
    console_handler.setFormatter(logging.Formatter('%(name)s - %(levelname)s - %(message)s'))
    logger.addHandler(console_handler)

    logger._mopg_configured = True
    return logger


def close_logger(name):
    """Detach and close every handler of a logger (used by tests and worker processes)."""
    logger = logging.getLogger(name)
    for handler in logger.handlers[:]:
        handler.close()
        logger.removeHandler(handler)
    logger._mopg_configured = False
