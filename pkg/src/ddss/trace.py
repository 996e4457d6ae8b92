"""Convergence trace records, CSV serialization, and run summaries."""

import csv
import io
import json
from dataclasses import dataclass, asdict, field

TRACE_VERSION_LINE = "# ddss-trace v1"

TRACE_COLUMNS = [
    "epoch", "wall_time_s", "objective", "gap", "active_blocks",
    "active_features", "nnz_coefficients", "coordinate_touches", "staleness",
]

# Columns that legitimately differ between equivalent runs (timing and
# concurrency measurements); everything else must agree bit for bit when two
# backends claim equivalence.
TIMING_COLUMNS = ("wall_time_s", "staleness")


@dataclass
class TraceRecord:
    epoch: int
    wall_time_s: float
    objective: float
    gap: float
    active_blocks: int
    active_features: int
    nnz_coefficients: int
    coordinate_touches: int
    staleness: float = 0.0

    def row(self):
        return [getattr(self, c) for c in TRACE_COLUMNS]


def validate_trace(records):
    for a, b in zip(records, records[1:]):
        if b.epoch <= a.epoch:
            raise ValueError("trace epochs must be strictly increasing")
        if b.wall_time_s < a.wall_time_s:
            raise ValueError("trace wall time must be non-decreasing")
        if b.active_features > a.active_features:
            raise ValueError("active features must be non-increasing")


def write_trace(path, records):
    validate_trace(records)
    with open(path, "w", newline="") as fh:
        fh.write(TRACE_VERSION_LINE + "\n")
        writer = csv.writer(fh)
        writer.writerow(TRACE_COLUMNS)
        for rec in records:
            writer.writerow([repr(v) if isinstance(v, float) else v
                             for v in rec.row()])


def read_trace(path):
    with open(path) as fh:
        first = fh.readline().strip()
        if first != TRACE_VERSION_LINE:
            raise ValueError(f"unrecognized trace header {first!r}")
        reader = csv.DictReader(fh)
        records = []
        for row in reader:
            records.append(TraceRecord(
                epoch=int(row["epoch"]),
                wall_time_s=float(row["wall_time_s"]),
                objective=float(row["objective"]),
                gap=float(row["gap"]),
                active_blocks=int(row["active_blocks"]),
                active_features=int(row["active_features"]),
                nnz_coefficients=int(row["nnz_coefficients"]),
                coordinate_touches=int(row["coordinate_touches"]),
                staleness=float(row["staleness"]),
            ))
    return records


def traces_equal(a, b, ignore=TIMING_COLUMNS):
    """Bitwise comparison of two traces, ignoring timing columns."""
    if len(a) != len(b):
        return False
    cols = [c for c in TRACE_COLUMNS if c not in ignore]
    for ra, rb in zip(a, b):
        for c in cols:
            if getattr(ra, c) != getattr(rb, c):
                return False
    return True


@dataclass
class RunSummary:
    final_objective: float
    final_gap: float
    total_time_s: float
    active_blocks: int
    active_features: int
    nnz_coefficients: int
    coordinate_touches: int
    backend: str
    seed: int
    speedup: float = None
    oracle_objective: float = None
    oracle_objective_diff: float = None
    survivors_in_equicorrelation: bool = None

    def to_json(self):
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text):
        return cls(**json.loads(text))
