"""Arrival-trace CSV files: ``timestamp,count`` rows sorted by timestamp."""

from __future__ import annotations

import csv
import math

from .simulator import Trace

__all__ = ["TraceFormatError", "read_trace", "write_trace"]

HEADER = ("timestamp", "count")


class TraceFormatError(ValueError):
    """Malformed or unsorted trace file; carries the offending 1-based line."""

    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


def read_trace(path) -> Trace:
    events: list[tuple[float, int]] = []
    last = -math.inf
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row:
                continue
            if lineno == 1 and tuple(f.strip() for f in row) == HEADER:
                continue
            if len(row) != 2:
                raise TraceFormatError(f"expected 2 fields, got {len(row)}", lineno)
            try:
                t = float(row[0])
                count = int(row[1])
            except ValueError:
                raise TraceFormatError(f"cannot parse {row!r}", lineno) from None
            if not math.isfinite(t) or t < 0.0:
                raise TraceFormatError(f"bad timestamp {row[0]}", lineno)
            if t < last:
                raise TraceFormatError(
                    f"timestamp {row[0]} precedes an earlier row", lineno
                )
            if count < 1:
                raise TraceFormatError(f"count must be >= 1, got {row[1]}", lineno)
            events.append((t, count))
            last = t
    if not events:
        raise TraceFormatError("trace holds no events", 1)
    return Trace(tuple(events))


def write_trace(path, trace: Trace) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(HEADER)
        for t, count in trace.events:
            writer.writerow((repr(float(t)), count))
