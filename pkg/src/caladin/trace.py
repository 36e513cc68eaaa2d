"""Per-iteration run records and their CSV persistence.

Centralized runs carry the base columns; decentralized runs append the
protocol counters and the cross-agent disagreement column. A JSON sidecar
next to each CSV archives every resolved setting of the run.
"""

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import TraceSchemaError

BASE_COLUMNS = (
    "iter",
    "consensus_error_l1",
    "energy",
    "z_step_norm",
    "dual_sum_norm",
    "wall_time_us",
)
DECENTRALIZED_COLUMNS = BASE_COLUMNS + (
    "fqac_rounds",
    "fqac_messages",
    "max_z_disagreement",
)


@dataclass
class TraceRow:
    iteration: int
    consensus_error_l1: float
    energy: float
    z_step_norm: float
    dual_sum_norm: float
    wall_time_us: float
    fqac_rounds: int = None
    fqac_messages: int = None
    max_z_disagreement: float = None

    def as_record(self, columns):
        mapping = {
            "iter": self.iteration,
            "consensus_error_l1": self.consensus_error_l1,
            "energy": self.energy,
            "z_step_norm": self.z_step_norm,
            "dual_sum_norm": self.dual_sum_norm,
            "wall_time_us": self.wall_time_us,
            "fqac_rounds": self.fqac_rounds,
            "fqac_messages": self.fqac_messages,
            "max_z_disagreement": self.max_z_disagreement,
        }
        return [mapping[c] for c in columns]


def _format_cell(value):
    if value is None:
        return ""
    if isinstance(value, float):
        if math.isnan(value):
            return "nan"
        return repr(value)
    return str(value)


@dataclass
class RunTrace:
    rows: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)
    converged: bool = False
    diverged: bool = False
    decentralized: bool = False

    def append(self, row: TraceRow):
        if self.rows and row.iteration <= self.rows[-1].iteration:
            raise TraceSchemaError("iteration numbers must be strictly increasing")
        self.rows.append(row)

    @property
    def columns(self):
        return DECENTRALIZED_COLUMNS if self.decentralized else BASE_COLUMNS

    def column(self, name) -> np.ndarray:
        if name not in self.columns:
            raise TraceSchemaError(f"trace has no column {name!r}")
        idx = self.columns.index(name)
        return np.array([row.as_record(self.columns)[idx] for row in self.rows], dtype=float)

    def final(self, name) -> float:
        values = self.column(name)
        if values.size == 0:
            raise TraceSchemaError("trace is empty")
        return float(values[-1])

    def write_csv(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as handle:
            writer = csv.writer(handle)
            writer.writerow(self.columns)
            for row in self.rows:
                writer.writerow([_format_cell(v) for v in row.as_record(self.columns)])

    def write_metadata(self, path):
        payload = dict(self.metadata)
        payload["converged"] = self.converged
        payload["diverged"] = self.diverged
        payload["iterations"] = len(self.rows)
        Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def sidecar_path(csv_path):
    csv_path = Path(csv_path)
    return csv_path.with_suffix(csv_path.suffix + ".meta.json")


def read_trace_csv(path) -> RunTrace:
    """Load a persisted trace; metadata is restored from the sidecar when present."""
    path = Path(path)
    with path.open(newline="") as handle:
        reader = csv.reader(handle)
        try:
            header = next(reader)
        except StopIteration:
            raise TraceSchemaError(f"{path} is empty") from None
        missing = [c for c in BASE_COLUMNS if c not in header]
        if missing:
            raise TraceSchemaError(f"{path} lacks required columns {missing}")
        decentralized = all(c in header for c in DECENTRALIZED_COLUMNS)
        index = {name: header.index(name) for name in header}

        def cell(record, name, cast):
            if name not in index:
                return None
            raw = record[index[name]]
            return cast(raw) if raw != "" else None

        trace = RunTrace(decentralized=decentralized)
        for record in reader:
            if not record:
                continue
            trace.append(
                TraceRow(
                    iteration=int(record[index["iter"]]),
                    consensus_error_l1=float(record[index["consensus_error_l1"]]),
                    energy=float(record[index["energy"]]),
                    z_step_norm=float(record[index["z_step_norm"]]),
                    dual_sum_norm=float(record[index["dual_sum_norm"]]),
                    wall_time_us=float(record[index["wall_time_us"]]),
                    fqac_rounds=cell(record, "fqac_rounds", lambda s: int(float(s))),
                    fqac_messages=cell(record, "fqac_messages", lambda s: int(float(s))),
                    max_z_disagreement=cell(record, "max_z_disagreement", float),
                )
            )
    side = sidecar_path(path)
    if side.exists():
        meta = json.loads(side.read_text())
        trace.converged = bool(meta.pop("converged", False))
        trace.diverged = bool(meta.pop("diverged", False))
        meta.pop("iterations", None)
        trace.metadata = meta
    return trace
