import io
import logging
import os
import tempfile
from typing import Any, Dict, Optional, Tuple

import pandas as pd

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.17g"


def format_header(header: Optional[Dict[str, Any]]) -> str:
    if not header:
        return ""
    return "".join(f"# {key}={value}\n" for key, value in header.items())


def write_text_atomic(text: str, path: str):
    """Write to a temp file in the target directory, then rename over the target."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp_path = tempfile.mkstemp(dir=directory, prefix=".tmp_", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", newline="") as handle:
            handle.write(text)
        os.replace(tmp_path, path)
    except Exception:
        if os.path.exists(tmp_path):
            os.remove(tmp_path)
        raise


def write_csv_atomic(frame: pd.DataFrame, path: str, header: Optional[Dict[str, Any]] = None):
    buffer = io.StringIO()
    buffer.write(format_header(header))
    frame.to_csv(buffer, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    write_text_atomic(buffer.getvalue(), path)
    logger.debug(f"Wrote {len(frame)} rows to {path}")


def read_csv_with_header(path: str) -> Tuple[pd.DataFrame, Dict[str, str]]:
    """Read a CSV written by write_csv_atomic, returning the frame and its '# key=value' header."""
    header: Dict[str, str] = {}
    with open(path, "r") as handle:
        for line in handle:
            if not line.startswith("#"):
                break
            key, _, value = line[1:].strip().partition("=")
            header[key.strip()] = value.strip()
    frame = pd.read_csv(path, comment="#", float_precision="round_trip")
    return frame, header
