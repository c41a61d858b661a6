"""
Utility functions for nullctl
"""

import os
import logging
import tempfile
from typing import Iterable, Optional, TypeVar

from rich.logging import RichHandler
from tqdm import tqdm

from . import config

T = TypeVar('T')

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'


def setup_logging(log_level=logging.INFO, log_file: Optional[str] = None) -> logging.Logger:
    """Setup logging configuration (rich console, optional plain log file)"""
    handlers = [RichHandler(rich_tracebacks=True, show_path=False)]
    if log_file:
        file_handler = logging.FileHandler(log_file)
        file_handler.setFormatter(logging.Formatter(LOG_FORMAT))
        handlers.append(file_handler)

    logging.basicConfig(
        level=log_level,
        format='%(message)s',
        datefmt='[%X]',
        handlers=handlers,
        force=True,
    )
    return logging.getLogger('nullctl')


def ensure_directory_exists(path: str):
    """Ensure directory exists, create if not"""
    os.makedirs(path, exist_ok=True)


def atomic_write_text(path: str, text: str) -> str:
    """Write text to path through a temp file in the same directory + rename"""
    directory = os.path.dirname(os.path.abspath(path))
    ensure_directory_exists(directory)
    fd, tmp_path = tempfile.mkstemp(prefix='.tmp-', dir=directory)
    try:
        with os.fdopen(fd, 'w', newline='') as handle:
            handle.write(text)
        os.replace(tmp_path, path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.remove(tmp_path)
        raise
    return path


def progress(iterable: Iterable[T], desc: str, total: Optional[int] = None) -> Iterable[T]:
    """tqdm progress bar honoring NULLCTL_PROGRESS"""
    return tqdm(iterable, desc=desc, total=total, leave=False, disable=not config.SHOW_PROGRESS)
