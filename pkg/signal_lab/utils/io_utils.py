"""
This module contains the small file helpers shared by the configuration
loaders and the experiment harness: key=value parsing and atomic writes.
"""

import csv
import io
import os
import tempfile
from typing import Dict, Iterable, List, Sequence


def parse_key_value_text(text: str, source: str = '<text>') -> Dict[str, str]:
    """
    Parses flat `key=value` lines.

    Blank lines and lines starting with `#` are skipped. Trailing `# ...`
    comments are removed. Keys must be unique.

    Args:
        text (str): The file contents.
        source (str): Name used in error messages.

    Raises:
        ValueError: On a line without '=' or a repeated key (message names the
            line number).

    Returns:
        Dict[str, str]: Keys mapped to their (stripped) raw values.

    Example:
        >>> parse_key_value_text("controller=sotl  # baseline\\nsotl.theta=4")
        {'controller': 'sotl', 'sotl.theta': '4'}
    """
    values: Dict[str, str] = {}
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split('#', 1)[0].strip()
        if not line:
            continue
        if '=' not in line:
            raise ValueError(f"{source}: line {number}: expected key=value, got '{raw.strip()}'")
        key, value = (part.strip() for part in line.split('=', 1))
        if not key:
            raise ValueError(f"{source}: line {number}: empty key")
        if key in values:
            raise ValueError(f"{source}: line {number}: duplicate key '{key}'")
        values[key] = value
    return values


def parse_key_value_file(path: str) -> Dict[str, str]:
    """Reads a key=value file (see parse_key_value_text)."""
    with open(path, 'r', encoding='utf-8') as handle:
        return parse_key_value_text(handle.read(), path)


def write_text_atomic(path: str, text: str) -> None:
    """
    Writes text to path through a temporary file in the same directory, so a
    reader never sees a half-written file.
    """
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp_path = tempfile.mkstemp(dir=directory, prefix='.tmp-', suffix='.part')
    try:
        with os.fdopen(fd, 'w', encoding='utf-8', newline='') as handle:
            handle.write(text)
        os.replace(tmp_path, path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.remove(tmp_path)
        raise


def csv_text(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    """Renders rows as CSV text with '\\n' line endings."""
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator='\n')
    writer.writerow(header)
    writer.writerows(rows)
    return buffer.getvalue()


def write_csv_atomic(path: str, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    """Writes a CSV file atomically."""
    write_text_atomic(path, csv_text(header, rows))


def read_csv_rows(path: str) -> List[Dict[str, str]]:
    """Reads a CSV file with a header row into a list of dicts."""
    with open(path, 'r', encoding='utf-8', newline='') as handle:
        return list(csv.DictReader(handle))
