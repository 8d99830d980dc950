"""Line-oriented experiment metrics and their CSV / key-value export."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

__all__ = ["MetricsRow", "CSV_HEADER", "write_metrics", "read_metrics", "export_metrics"]

# column order is fixed; everything that writes or parses metrics uses this
CSV_HEADER = (
    "experiment", "point", "epoch", "epsilon", "ebn0_db", "beta", "k",
    "error_rate", "spike_rate", "seconds",
)


@dataclass(frozen=True)
class MetricsRow:
    experiment: str
    point: int
    epoch: int
    epsilon: float
    ebn0_db: float | None
    beta: float
    k: int
    error_rate: float
    spike_rate: float
    seconds: float

    def to_fields(self) -> list[str]:
        # repr round-trips float64 exactly, which keeps exports lossless
        return [
            self.experiment,
            str(self.point),
            str(self.epoch),
            repr(float(self.epsilon)),
            "" if self.ebn0_db is None else repr(float(self.ebn0_db)),
            repr(float(self.beta)),
            str(self.k),
            repr(float(self.error_rate)),
            repr(float(self.spike_rate)),
            repr(float(self.seconds)),
        ]

    @classmethod
    def from_fields(cls, fields: list[str]) -> "MetricsRow":
        if len(fields) != len(CSV_HEADER):
            raise ValueError(f"expected {len(CSV_HEADER)} fields, got {len(fields)}")
        return cls(
            experiment=fields[0],
            point=int(fields[1]),
            epoch=int(fields[2]),
            epsilon=float(fields[3]),
            ebn0_db=None if fields[4] == "" else float(fields[4]),
            beta=float(fields[5]),
            k=int(fields[6]),
            error_rate=float(fields[7]),
            spike_rate=float(fields[8]),
            seconds=float(fields[9]),
        )


def write_metrics(path, rows) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for row in rows:
            writer.writerow(row.to_fields())


def read_metrics(path) -> list[MetricsRow]:
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty metrics file")
        if tuple(header) != CSV_HEADER:
            raise ValueError(f"{path}: unexpected metrics header {header}")
        return [MetricsRow.from_fields(row) for row in reader if row]


def export_metrics(rows, fmt: str = "csv") -> str:
    """Render rows as CSV (default) or `key=value` lines, one row per line."""
    if fmt == "csv":
        lines = [",".join(CSV_HEADER)]
        for row in rows:
            lines.append(",".join(row.to_fields()))
        return "\n".join(lines) + "\n"
    if fmt == "kv":
        lines = []
        for row in rows:
            pairs = zip(CSV_HEADER, row.to_fields())
            lines.append(" ".join(f"{k}={v}" for k, v in pairs))
        return "\n".join(lines) + "\n"
    raise ValueError(f"unknown export format {fmt!r}")


def parse_kv_metrics(text: str) -> list[MetricsRow]:
    """Inverse of the kv export; used to check the round trip."""
    rows = []
    for line in text.splitlines():
        if not line.strip():
            continue
        values = dict(item.split("=", 1) for item in line.split(" "))
        rows.append(MetricsRow.from_fields([values.get(col, "") for col in CSV_HEADER]))
    return rows
