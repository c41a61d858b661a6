"""
CSV and manifest output for experiment runs
"""

import io
import json
import logging
import os
import platform
from dataclasses import dataclass, field
from importlib import metadata
from typing import Any, Dict, List, Optional

import pandas as pd

from . import __version__, config
from .utils import atomic_write_text, ensure_directory_exists

logger = logging.getLogger(__name__)


@dataclass
class ReportBundle:
    command: str
    tables: Dict[str, pd.DataFrame] = field(default_factory=dict)
    config: Dict[str, Any] = field(default_factory=dict)
    seed: Optional[int] = None
    timing: Dict[str, float] = field(default_factory=dict)
    status: str = 'ok'

    def add(self, name: str, table: pd.DataFrame):
        self.tables[name] = table


def table_path(directory: str, command: str, name: str) -> str:
    return os.path.join(directory, f"{command}_{name}.csv")


def manifest_path(directory: str, command: str) -> str:
    return os.path.join(directory, f"{command}_manifest.json")


def frame_to_csv(table: pd.DataFrame) -> str:
    buffer = io.StringIO()
    table.to_csv(buffer, index=False, float_format=config.CSV_FLOAT_FORMAT, lineterminator='\n')
    return buffer.getvalue()


def library_versions() -> Dict[str, str]:
    versions = {'nullctl': __version__, 'python': platform.python_version()}
    for package in ('numpy', 'scipy', 'pandas', 'pydantic', 'click'):
        try:
            versions[package] = metadata.version(package)
        except metadata.PackageNotFoundError:
            versions[package] = 'unknown'
    return versions


def emit_report(bundle: ReportBundle, directory: str) -> List[str]:
    """Write every table, then the manifest; returns the written paths"""
    ensure_directory_exists(directory)
    paths = []
    for name in sorted(bundle.tables):
        path = table_path(directory, bundle.command, name)
        atomic_write_text(path, frame_to_csv(bundle.tables[name]))
        paths.append(path)
        logger.debug(f"Wrote {path} ({len(bundle.tables[name])} rows)")

    manifest = {
        'command': bundle.command,
        'status': bundle.status,
        'seed': bundle.seed,
        'config': bundle.config,
        'tables': {name: os.path.basename(table_path(directory, bundle.command, name))
                   for name in sorted(bundle.tables)},
        'versions': library_versions(),
        'timing': bundle.timing,
    }
    path = manifest_path(directory, bundle.command)
    atomic_write_text(path, json.dumps(manifest, indent=2, sort_keys=True, default=str) + '\n')
    paths.append(path)
    logger.info(f"Report for '{bundle.command}' written to {directory} ({len(paths)} files)")
    return paths


def diagnostics_table(error: Exception) -> pd.DataFrame:
    """Flat key/value rows describing a failed run"""
    rows = [{'key': 'error_type', 'value': type(error).__name__},
            {'key': 'message', 'value': str(error)}]
    for key, value in sorted(getattr(error, 'diagnostics', {}).items()):
        rows.append({'key': key, 'value': value})
    return pd.DataFrame(rows, columns=['key', 'value'])
