# --- START OF FILE history.py ---
"""
Append-only run history (one JSON object per line) plus replay and export.

Record kinds: run_meta, bracket_start, measurement, ensemble_build, run_end.
Each line is {"kind", "t", "payload"}; wall-clock runs also carry "ts".
"""

import csv
import json
import logging
import math
import os
from dataclasses import dataclass, field

from hyperband import MeasurementStore, measurement_from_payload
from run_config import RunConfig, config_from_dict
from utils import ConfigFileError, HistoryCorruptError, MFESError, __version__, utc_now_iso

logger = logging.getLogger(__name__)

RECORD_KINDS = ("run_meta", "bracket_start", "measurement", "ensemble_build", "run_end")


class HistoryWriter:
    """Single writer; every record is flushed before `record` returns."""

    def __init__(self, path: str, clock: str = "wall", append: bool = False):
        self.path = path
        self.clock = clock
        directory = os.path.dirname(os.path.abspath(path))
        os.makedirs(directory, exist_ok=True)
        self._file = open(path, "a" if append else "w", encoding="utf-8", newline="\n")
        self.count = 0

    def record(self, kind: str, payload: dict, t: float):
        if kind not in RECORD_KINDS:
            raise ValueError(f"unknown history record kind '{kind}'")
        line = {"kind": kind, "t": round(float(t), 6), "payload": _jsonable(payload)}
        if self.clock == "wall":
            line["ts"] = utc_now_iso()
        self._file.write(json.dumps(line, separators=(",", ":"), allow_nan=False) + "\n")
        self._file.flush()
        self.count += 1

    def write_meta(self, cfg: RunConfig, t: float = 0.0):
        self.record("run_meta", {"version": __version__, "seed": cfg.seed, "config": cfg.to_dict()}, t)

    def close(self):
        if not self._file.closed:
            self._file.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def _jsonable(value):
    """inf/nan become null so every line stays strict JSON."""
    if isinstance(value, float):
        return value if math.isfinite(value) else None
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if hasattr(value, "item"):
        return _jsonable(value.item())
    return value


# --- Reading ---
@dataclass
class HistoryLog:
    path: str
    records: list
    good_size: int
    dropped_tail: bool = False

    def of_kind(self, kind: str) -> list[dict]:
        return [r for r in self.records if r["kind"] == kind]

    @property
    def meta(self) -> dict:
        return self.records[0]["payload"]


def read_history(path: str) -> HistoryLog:
    """Parses a history file. A torn final line is dropped with a warning; any other bad line is fatal."""
    try:
        with open(path, "rb") as f:
            raw = f.read()
    except OSError as e:
        raise HistoryCorruptError(f"cannot read history '{path}': {e}")
    lines = raw.split(b"\n")
    records, offset, good_size, dropped = [], 0, 0, False
    for number, line in enumerate(lines, start=1):
        is_last = number == len(lines) or all(not rest.strip() for rest in lines[number:])
        size = len(line) + (1 if number < len(lines) else 0)
        if not line.strip():
            offset += size
            continue
        try:
            rec = json.loads(line.decode("utf-8"))
            if not isinstance(rec, dict) or rec.get("kind") not in RECORD_KINDS or "payload" not in rec:
                raise ValueError("not a history record")
        except (ValueError, UnicodeDecodeError) as e:
            if is_last:
                logger.warning(f"Ignoring truncated final line {number} of {path}: {e}")
                dropped = True
                break
            raise HistoryCorruptError(f"{path}, line {number}: corrupt record ({e})")
        records.append(rec)
        offset += size
        good_size = offset
    if not records or records[0]["kind"] != "run_meta":
        raise HistoryCorruptError(f"{path}: history does not start with a run_meta record")
    return HistoryLog(path, records, good_size, dropped)


def truncate_tail(log: HistoryLog):
    """Cuts a torn final line off so appended records start on a fresh line."""
    with open(log.path, "r+b") as f:
        if os.path.getsize(log.path) != log.good_size:
            f.truncate(log.good_size)
            logger.info(f"Truncated {log.path} to {log.good_size} bytes before appending.")
        if log.good_size > 0:
            f.seek(log.good_size - 1)
            if f.read(1) != b"\n":
                # last record is complete but unterminated
                f.seek(0, os.SEEK_END)
                f.write(b"\n")
                log.good_size += 1


@dataclass
class ResumeState:
    config: RunConfig
    measurements: list = field(default_factory=list)
    next_bracket: int = 0
    elapsed: float = 0.0
    finished: bool = False


def resume_state(log: HistoryLog) -> ResumeState:
    try:
        cfg = config_from_dict(log.meta.get("config", {}))
    except (ConfigFileError, TypeError, AttributeError) as e:
        raise HistoryCorruptError(f"{log.path}: run_meta holds an invalid configuration ({e})")
    version = log.meta.get("version")
    if version != __version__:
        logger.warning(f"History was written by version {version}, this is {__version__}.")
    try:
        measurements = [measurement_from_payload(r["payload"], cfg.space) for r in log.of_kind("measurement")]
    except (MFESError, KeyError, TypeError, ValueError) as e:
        raise HistoryCorruptError(f"{log.path}: measurement record does not fit the run's space ({e})")
    starts = [int(r["payload"]["bracket"]) for r in log.of_kind("bracket_start")]
    return ResumeState(cfg, measurements, max(starts) + 1 if starts else 0,
                       float(log.records[-1].get("t", 0.0)), bool(log.of_kind("run_end")))


def replay_store(log: HistoryLog, cfg: RunConfig | None = None) -> MeasurementStore:
    state = resume_state(log) if cfg is None else None
    cfg = cfg or state.config
    measurements = state.measurements if state else [measurement_from_payload(r["payload"], cfg.space)
                                                     for r in log.of_kind("measurement")]
    store = MeasurementStore(cfg.hyperband.R, cfg.hyperband.eta)
    for m in measurements:
        store.add(m)
    return store


# --- Export ---
def incumbent_rows(log: HistoryLog) -> list[tuple[float, float]]:
    """(t, running minimum) over successful top-fidelity measurements, in record order."""
    R = float(log.meta["config"]["hyperband"]["R"])
    rows, best = [], math.inf
    for rec in log.of_kind("measurement"):
        p = rec["payload"]
        if p.get("failed") or p.get("loss") is None or not math.isclose(float(p["resource"]), R, rel_tol=1e-9):
            continue
        best = min(best, float(p["loss"]))
        rows.append((float(rec["t"]), best))
    return rows


def weight_rows(log: HistoryLog) -> tuple[list[str], list[list]]:
    builds = log.of_kind("ensemble_build")
    K = max((len(r["payload"].get("weights", [])) for r in builds), default=0)
    header = ["bracket", "wall_clock_seconds"] + [f"w_{i + 1}" for i in range(K)] + [f"p_{i + 1}" for i in range(K)]
    rows = []
    for rec in builds:
        p = rec["payload"]
        weights = list(p.get("weights", [])) + [None] * (K - len(p.get("weights", [])))
        ps = list(p.get("p") or []) + [None] * (K - len(p.get("p") or []))
        rows.append([p.get("bracket"), rec["t"]] + weights + ps)
    return header, rows


def export_history(path: str, fmt: str = "csv", out_prefix: str | None = None) -> tuple[str, str]:
    """Writes <prefix>.incumbent.<ext> and <prefix>.weights.<ext>; returns both paths."""
    if fmt not in ("csv", "jsonl"):
        raise ValueError(f"unknown export format '{fmt}'")
    log = read_history(path)
    prefix = out_prefix or os.path.splitext(path)[0]
    incumbent = incumbent_rows(log)
    header, weights = weight_rows(log)
    if not incumbent:
        logger.warning(f"{path} has no successful top-fidelity measurement; the incumbent table is empty.")
    inc_path, w_path = f"{prefix}.incumbent.{fmt}", f"{prefix}.weights.{fmt}"
    inc_header = ["wall_clock_seconds", "best_loss_so_far"]
    _write_table(inc_path, fmt, inc_header, [list(r) for r in incumbent])
    _write_table(w_path, fmt, header, weights)
    logger.info(f"Exported {len(incumbent)} incumbent rows to {inc_path} and {len(weights)} weight rows to {w_path}.")
    return inc_path, w_path


def _write_table(path: str, fmt: str, header: list[str], rows: list[list]):
    with open(path, "w", encoding="utf-8", newline="") as f:
        if fmt == "csv":
            writer = csv.writer(f)
            writer.writerow(header)
            writer.writerows(rows)
        else:
            for row in rows:
                f.write(json.dumps(dict(zip(header, row))) + "\n")

# --- END OF FILE history.py ---
