"""Environment configuration: thread count, log level and output root."""

import logging
import os
from pathlib import Path
from typing import Optional

from dotenv import load_dotenv

load_dotenv()

ROOT_DIR = Path(__file__).parent.parent
DATA_DIR = ROOT_DIR / "data"
DEFAULT_DESK_CONFIG = DATA_DIR / "desk_run.conf"

TOOL_VERSION = "1.0.0"

_logging_ready = False


def get_threads(cli_value: Optional[int] = None) -> int:
    """Resolve the FFT worker count.

    Args:
        cli_value: Value of --threads, if given

    Returns:
        The thread count (>= 1); --threads wins over SQGFORGE_THREADS
    """
    if cli_value is not None:
        threads = cli_value
    else:
        raw = os.environ.get("SQGFORGE_THREADS", "1")
        try:
            threads = int(raw)
        except ValueError as e:
            raise ValueError(f"SQGFORGE_THREADS must be an integer: {str(e)}") from e
    if threads < 1:
        raise ValueError(f"thread count must be >= 1, got {threads}")
    return threads


def get_output_root() -> Path:
    return Path(os.environ.get("SQGFORGE_OUTPUT_DIR", "runs"))


def setup_logging(level: Optional[str] = None) -> None:
    """Configure the root logger once; later calls only adjust the level."""
    global _logging_ready
    name = (level or os.environ.get("SQGFORGE_LOG_LEVEL", "INFO")).upper()
    numeric = getattr(logging, name, logging.INFO)
    if not _logging_ready:
        logging.basicConfig(
            level=numeric,
            format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        )
        _logging_ready = True
    logging.getLogger().setLevel(numeric)
