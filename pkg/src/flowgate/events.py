"""Append-only event log shared by the simulator, controllers and metering.

One event per line, comma separated: ``t,kind,field,...``. Field layout per
kind (documented here and in the README):

    arrival   vid,arm,movement,lane
    join      vid,lane,queue_len
    cross     vid,lane,movement
    exit      vid,delay_s
    signal    phase,state,movements   (movements '+'-joined; state green|yellow)
    budget    arm,what,z,count,budget (what: exceeded|reset|period_end)
    auction   winner,runner,totals,paid,distances (only with auction tracing)
"""

from __future__ import annotations

from typing import IO, Iterator, Optional


class EventLog:
    """Collects events in memory and/or streams them to a text file."""

    def __init__(self, keep: bool = True, stream: Optional[IO[str]] = None):
        self.keep = keep
        self.stream = stream
        self.records: list[tuple] = []

    @property
    def enabled(self) -> bool:
        return self.keep or self.stream is not None

    def emit(self, t: int, kind: str, *fields) -> None:
        if self.keep:
            self.records.append((t, kind) + fields)
        if self.stream is not None:
            self.stream.write(format_record((t, kind) + fields) + "\n")

    def of(self, kind: str) -> Iterator[tuple]:
        return (r for r in self.records if r[1] == kind)

    def count(self, kind: str) -> int:
        return sum(1 for _ in self.of(kind))

    def write(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for record in self.records:
                fh.write(format_record(record) + "\n")


class NullLog(EventLog):
    """Sink that drops everything; lets hot loops skip event formatting."""

    def __init__(self):
        super().__init__(keep=False, stream=None)

    def emit(self, t: int, kind: str, *fields) -> None:  # noqa: ARG002
        pass


def format_record(record: tuple) -> str:
    return ",".join(str(v) for v in record)
