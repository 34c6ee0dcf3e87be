"""Per-round byte accounting records and order-independent sinks."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

TRACE_FIELDS = ("sent_protocol_bytes", "sent_param_bytes", "sent_meta_bytes", "kept_fraction", "degree")


@dataclass(frozen=True)
class MetricsRecord:
    """Bytes sent by one node in one round, split into the three traffic classes.

    protocol: prestep messages; params: 8 bytes per transmitted masked word;
    meta: framed index sets accompanying transmitted parameters.
    """

    round: int
    node: int
    sent_protocol_bytes: int
    sent_param_bytes: int
    sent_meta_bytes: int
    kept_fraction: float
    degree: int
    prestep_messages: int = 0
    algorithm: str = "cesar"
    seed: int = 0

    @property
    def total_bytes(self) -> int:
        return self.sent_protocol_bytes + self.sent_param_bytes + self.sent_meta_bytes

    def trace_row(self) -> dict:
        row = {"round": self.round, "node": self.node}
        row.update({k: getattr(self, k) for k in TRACE_FIELDS})
        return row


class MetricsSink:
    """Collects records; merging is associative and the output order is canonical."""

    def __init__(self, records: Iterable[MetricsRecord] = ()):
        self.records: list[MetricsRecord] = list(records)

    def add(self, records: Iterable[MetricsRecord]) -> None:
        self.records.extend(records)

    def merge(self, other: "MetricsSink") -> "MetricsSink":
        return MetricsSink(self.records + other.records)

    def sorted(self) -> list[MetricsRecord]:
        return sorted(self.records, key=lambda r: (r.algorithm, r.seed, r.round, r.node))

    def write_jsonl(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            for r in self.sorted():
                row = {"algorithm": r.algorithm, "seed": r.seed, **r.trace_row()}
                fh.write(json.dumps(row, sort_keys=False) + "\n")

    def __len__(self) -> int:
        return len(self.records)


def read_jsonl(path: str | Path) -> list[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def write_csv(path: str | Path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)

