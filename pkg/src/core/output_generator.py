"""
Output Generator - Module for writing run folders, CSV tables and manifests
"""
import csv
import json
import logging
import math
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence

import numpy as np

from .. import __version__


class OutputGenerator:
    """Class for writing experiment output (CSV tables, JSON manifest)"""

    def __init__(self, output_dir: str = "output", precision: int = 17):
        """
        Initialize the output generator

        Args:
            output_dir: Parent directory for timestamped run folders
            precision: Significant digits for every float written to CSV
        """
        self.output_dir = Path(output_dir)
        self.precision = precision
        self.logger = logging.getLogger(__name__)

    def create_output_folder(self, command: str, out_dir: Optional[str] = None) -> Path:
        """
        Create the folder a command writes into

        Args:
            command: Subcommand name, used for the timestamped default
            out_dir: Explicit folder; overrides the timestamped default

        Returns:
            Path object for the output folder
        """
        if out_dir:
            folder_path = Path(out_dir)
        else:
            timestamp = datetime.now().strftime("%Y%m%d_%H%M%S")
            folder_path = self.output_dir / f"{command}_{timestamp}"

        folder_path.mkdir(parents=True, exist_ok=True)
        self.logger.info(f"Created output folder: {folder_path}")
        return folder_path

    def format_value(self, value: Any) -> str:
        """Round-trip text for a CSV cell; integers stay integers"""
        if value is None:
            return ''
        if isinstance(value, (bool, np.bool_)):
            return str(bool(value)).lower()
        if isinstance(value, (int, np.integer)):
            return str(int(value))
        if isinstance(value, (float, np.floating)):
            value = float(value)
            if math.isnan(value):
                return 'nan'
            return f"{value:.{self.precision}g}"
        return str(value)

    def write_csv(self, folder_path: Path, filename: str, header: Sequence[str],
                  rows: Iterable[Sequence[Any]]) -> Path:
        """
        Write a comma-separated table with a header row and LF line endings

        Args:
            folder_path: Path to the output folder
            filename: File name inside the folder
            header: Column names
            rows: Row values, formatted with format_value

        Returns:
            Path to the saved file
        """
        filename = Path(folder_path) / filename
        count = 0
        with open(filename, 'w', newline='', encoding='utf-8') as f:
            writer = csv.writer(f, lineterminator='\n')
            writer.writerow(header)
            for row in rows:
                if len(row) != len(header):
                    raise ValueError(f"Row of length {len(row)} does not match header {list(header)}")
                writer.writerow([self.format_value(value) for value in row])
                count += 1

        self.logger.info(f"Saved {count} rows to {filename}")
        return filename

    def write_columns(self, folder_path: Path, filename: str, columns: Dict[str, Sequence[Any]]) -> Path:
        """Write equal-length columns as a table, in the order given"""
        lengths = {len(values) for values in columns.values()}
        if len(lengths) > 1:
            raise ValueError(f"Columns have different lengths: {sorted(lengths)}")
        return self.write_csv(folder_path, filename, list(columns), zip(*columns.values()))

    def write_manifest(self, folder_path: Path, command: str, config: Dict[str, Any],
                       seeds: Dict[str, Any], files: List[Path],
                       extra: Optional[Dict[str, Any]] = None) -> Path:
        """
        Save the run manifest: config echo, version, seeds, files and a timestamp

        Args:
            folder_path: Path to the output folder
            command: Subcommand name
            config: Effective configuration
            seeds: Master seed and replication bookkeeping
            files: Files written by the run
            extra: Command-specific metadata

        Returns:
            Path to the saved file
        """
        manifest = {
            'command': command,
            'version': __version__,
            'timestamp': datetime.now().isoformat(timespec='seconds'),
            'config': config,
            'seeds': seeds,
            'files': [Path(path).name for path in files],
        }
        if extra:
            manifest.update(extra)

        filename = Path(folder_path) / "manifest.json"
        with open(filename, 'w', encoding='utf-8') as f:
            json.dump(_jsonable(manifest), f, indent=2)

        self.logger.info(f"Saved manifest to {filename}")
        return filename


def _jsonable(value: Any) -> Any:
    if isinstance(value, dict):
        return {str(key): _jsonable(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(item) for item in value]
    if isinstance(value, np.ndarray):
        return [_jsonable(item) for item in value.tolist()]
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return value if math.isfinite(value) else str(value)
    if isinstance(value, Path):
        return str(value)
    return value
