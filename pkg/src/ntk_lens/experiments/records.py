"""Run records and their on-disk forms (JSON lines + summary CSV)."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .. import __version__
from ..dynamics import DynamicsTrace, KeyQuantities

RECORDS_FILE = "records.jsonl"
SUMMARY_FILE = "summary.csv"
SUMMARY_COLUMNS = (
    "sweep_value",
    "seed",
    "min_test_loss",
    "trace_init",
    "trace_min",
    "beta",
    "gamma_min",
    "chi_min",
    "label_alignment_min",
    "epochs_to_min",
    "status",
)


@dataclass
class RunRecord:
    config_hash: str
    sweep_axis: str
    sweep_value: float
    member: int
    seed: int
    init_seed: int
    data_seed: int
    status: str
    trace: DynamicsTrace
    key: KeyQuantities | None
    failed_epoch: int | None = None
    warnings: list[str] = field(default_factory=list)
    wall_seconds: float = 0.0
    version: str = __version__

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    @property
    def job_key(self) -> tuple:
        return (self.config_hash, float(self.sweep_value), self.seed)

    def payload(self) -> dict:
        """Everything except wall-clock time; identical runs give identical payloads."""
        d = {
            "config_hash": self.config_hash,
            "sweep_axis": self.sweep_axis,
            "sweep_value": self.sweep_value,
            "member": self.member,
            "seed": self.seed,
            "init_seed": self.init_seed,
            "data_seed": self.data_seed,
            "status": self.status,
            "failed_epoch": self.failed_epoch,
            "warnings": list(self.warnings),
            "version": self.version,
            "trace": self.trace.to_dict(),
            "key": asdict(self.key) if self.key is not None else None,
        }
        return _finite(d)

    def to_dict(self) -> dict:
        d = self.payload()
        d["wall_seconds"] = self.wall_seconds
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunRecord":
        key = d.get("key")
        return cls(
            config_hash=d["config_hash"],
            sweep_axis=d["sweep_axis"],
            sweep_value=d["sweep_value"],
            member=d["member"],
            seed=d["seed"],
            init_seed=d["init_seed"],
            data_seed=d["data_seed"],
            status=d["status"],
            trace=DynamicsTrace.from_dict(_restore_nan(d["trace"])),
            key=KeyQuantities(**_restore_nan(key)) if key is not None else None,
            failed_epoch=d.get("failed_epoch"),
            warnings=list(d.get("warnings", [])),
            wall_seconds=d.get("wall_seconds", 0.0),
            version=d.get("version", __version__),
        )


def _finite(obj):
    # JSON has no NaN; undefined values are written as null
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _finite(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_finite(v) for v in obj]
    return obj


# floats that may legitimately be NaN; everything else null stays None
_NAN_FIELDS = {"adaptation_rate_min"}


def _restore_nan(obj):
    if isinstance(obj, dict):
        return {k: float("nan") if v is None and k in _NAN_FIELDS else _restore_nan(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_restore_nan(v) for v in obj]
    return obj


def dumps_payload(record: RunRecord) -> str:
    return json.dumps(record.payload(), sort_keys=True, allow_nan=False)


def header(config_hash: str) -> dict:
    return {"kind": "header", "tool": "ntk-lens", "version": __version__, "config_hash": config_hash}


def header_comment(config_hash: str) -> str:
    return f"# ntk-lens {__version__} config_hash={config_hash}"


class RecordWriter:
    """Append-only JSON-lines writer; the first line of a new file is a header."""

    def __init__(self, path, config_hash: str):
        self.path = Path(path)
        self.config_hash = config_hash
        if not self.path.exists() or self.path.stat().st_size == 0:
            with self.path.open("w") as fh:
                fh.write(json.dumps(header(config_hash), sort_keys=True) + "\n")

    def append(self, record: RunRecord) -> None:
        line = json.dumps(record.to_dict(), sort_keys=True, allow_nan=False)
        with self.path.open("a") as fh:
            fh.write(line + "\n")


def read_records(path) -> tuple[dict | None, list[RunRecord]]:
    head = None
    records = []
    with Path(path).open() as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            d = json.loads(line)
            if d.get("kind") == "header":
                head = d
            else:
                records.append(RunRecord.from_dict(d))
    return head, records


def summary_row(rec: RunRecord) -> dict:
    row = {"sweep_value": rec.sweep_value, "seed": rec.seed, "status": rec.status}
    k = rec.key
    if k is not None:
        row.update(
            min_test_loss=k.min_test_loss,
            trace_init=k.trace_init,
            trace_min=k.trace_min,
            beta=k.trace_ratio,
            gamma_min=k.effective_rank_min,
            chi_min=k.adaptation_rate_min,
            label_alignment_min=k.label_alignment_min,
            epochs_to_min=k.epochs_to_min,
        )
    return {c: ("" if row.get(c) is None else _csv_value(row[c])) for c in SUMMARY_COLUMNS}


def _csv_value(v):
    if isinstance(v, float):
        return "" if not math.isfinite(v) else repr(v)
    return v


def write_summary(path, records: list[RunRecord], config_hash: str) -> None:
    ordered = sorted(records, key=lambda r: (float(r.sweep_value), r.seed))
    with Path(path).open("w", newline="") as fh:
        fh.write(header_comment(config_hash) + "\n")
        w = csv.DictWriter(fh, fieldnames=SUMMARY_COLUMNS)
        w.writeheader()
        for rec in ordered:
            w.writerow(summary_row(rec))
