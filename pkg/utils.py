# --- START OF FILE utils.py ---

import os
import logging
import hashlib
import json
from datetime import datetime

import numpy as np
import pytz

__version__ = "1.0.0"

# --- Logging Setup ---
LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
logger = logging.getLogger(__name__)


def setup_logging(level: str | None = None):
    """Configures root logging once for scripts and the CLI."""
    level_name = (level or LOG_LEVEL).upper()
    numeric_level = getattr(logging, level_name, None)
    if not isinstance(numeric_level, int):
        logger.warning(f"Unknown log level '{level_name}', using INFO.")
        numeric_level = logging.INFO
    logging.basicConfig(level=numeric_level, format=LOG_FORMAT)
    logging.getLogger("pebble").setLevel(logging.WARNING)


# --- Configuration Loading (from Environment Variables) ---
HISTORY_DIR = os.environ.get("MFES_HISTORY_DIR", "runs").strip() or "runs"
LOG_LEVEL = os.environ.get("MFES_LOG_LEVEL", "INFO").strip() or "INFO"
WORKERS_STR = os.environ.get("MFES_WORKERS", "1")
PROGRESS_STR = os.environ.get("MFES_PROGRESS", "1")

DEFAULT_WORKERS = 1
try:
    DEFAULT_WORKERS = int(WORKERS_STR)
    if DEFAULT_WORKERS <= 0: logger.warning("MFES_WORKERS non-positive, using 1 worker."); DEFAULT_WORKERS = 1
except ValueError: logger.warning(f"Invalid MFES_WORKERS '{WORKERS_STR}', using 1 worker."); DEFAULT_WORKERS = 1

SHOW_PROGRESS = PROGRESS_STR.strip() not in ("0", "false", "no", "off")


# --- Errors ---
class MFESError(Exception):
    """Base class for every error raised by this toolkit."""


class DomainError(MFESError, ValueError):
    """A value or vector does not belong to the space it was used with."""


class InsufficientDataError(MFESError):
    """Too few measurements to fit a surrogate or compute a loss."""


class DegenerateEnsembleError(MFESError):
    """gPoE fusion asked to combine experts whose weights are all zero."""


class InvalidParameterError(MFESError, ValueError):
    """A parameter object violates its invariants."""


class ConfigFileError(MFESError):
    """Run configuration could not be parsed or validated."""

    def __init__(self, message: str, field: str | None = None, line: int | None = None):
        self.field = field
        self.line = line
        location = ""
        if field: location += f"field '{field}'"
        if line is not None: location += f" (line {line})" if location else f"line {line}"
        super().__init__(f"{location}: {message}" if location else message)


class EvaluatorSetupError(MFESError):
    """The configured evaluator cannot be constructed or launched."""


class HistoryCorruptError(MFESError):
    """A run history file is missing its header or has a corrupt record."""


# --- Random Streams ---
_PURPOSES = {"sample": 1, "forest": 2, "cv": 3, "noise": 4, "bias": 5, "misc": 9}


def make_rng(seed: int, purpose: str = "misc", *index: int) -> np.random.Generator:
    """Independent generator for (seed, purpose, index...), stable across processes and resumes."""
    entropy = [int(seed) & 0xFFFFFFFF, _PURPOSES.get(purpose, 9)] + [int(i) & 0xFFFFFFFF for i in index]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))


def stable_hash(payload) -> str:
    """Short hex digest of a JSON-serializable payload (key order independent)."""
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha1(blob.encode("utf-8")).hexdigest()[:12]


def stable_int(payload) -> int:
    return int(stable_hash(payload), 16)


# --- Time Helpers ---
def utc_now_iso() -> str:
    return datetime.now(pytz.UTC).isoformat(timespec="milliseconds")


def default_history_path(name: str | None = None) -> str:
    """Path for a new history file inside MFES_HISTORY_DIR."""
    try: os.makedirs(HISTORY_DIR, exist_ok=True)
    except OSError as e: logger.warning(f"Could not create history dir {HISTORY_DIR}: {e}")
    if not name:
        name = datetime.now(pytz.UTC).strftime("run-%Y%m%d-%H%M%S")
    return os.path.join(HISTORY_DIR, f"{name}.jsonl")


def format_loss(value) -> str:
    try:
        if value is None: return "n/a"
        value = float(value)
        if not np.isfinite(value): return "failed"
        return f"{value:.6g}"
    except (ValueError, TypeError): return str(value)

# --- END OF FILE utils.py ---
