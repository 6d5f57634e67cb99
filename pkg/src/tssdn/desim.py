"""Deterministic discrete-event kernel with integer-nanosecond time."""

from __future__ import annotations

import csv
import heapq
import io
import random
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Any, Callable, NamedTuple, Optional

from .netmodel import ns_to_us_text


class SchedulingInPast(ValueError):
    pass


class EventKind(str, Enum):
    FRAME_ARRIVAL = "FrameArrival"
    TRANSMISSION_COMPLETE = "TransmissionComplete"
    GATE_CHANGE = "GateChange"
    TIMER_FIRE = "TimerFire"
    CONTROL_MESSAGE = "ControlMessage"


@dataclass
class Event:
    time_ns: int
    seq: int
    kind: EventKind
    callback: Callable[..., Any]
    payload: tuple = ()
    cancelled: bool = False

    def cancel(self) -> None:
        self.cancelled = True


TRACE_ACTIONS = ("enqueued", "sent", "received", "dropped_ingress", "dropped_no_rule", "to_controller")
TRACE_HEADER = ("t_us", "node", "port", "action", "frame_id", "cf_id", "pcp", "wire_bytes", "detail")


class TraceRecord(NamedTuple):
    t_ns: int
    node: str
    port: Optional[int]
    action: str
    frame_id: Optional[int]
    cf_id: Optional[int]
    pcp: Optional[int]
    wire_bytes: Optional[int]
    detail: str


class EventTrace:
    """Append-only record of frame activity, ordered by time."""

    def __init__(self) -> None:
        self.records: list[TraceRecord] = []

    def append(self, record: TraceRecord) -> None:
        if self.records and record.t_ns < self.records[-1].t_ns:
            raise ValueError("trace timestamps must be non-decreasing")
        if record.action not in TRACE_ACTIONS:
            raise ValueError(f"unknown trace action {record.action!r}")
        self.records.append(record)

    def __len__(self) -> int:
        return len(self.records)

    def count(self, action: str, node: Optional[str] = None) -> int:
        return sum(1 for r in self.records if r.action == action and (node is None or r.node == node))

    def to_csv(self) -> str:
        out = io.StringIO()
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(TRACE_HEADER)
        for r in self.records:
            writer.writerow(
                [
                    ns_to_us_text(r.t_ns),
                    r.node,
                    "" if r.port is None else r.port,
                    r.action,
                    "" if r.frame_id is None else r.frame_id,
                    "" if r.cf_id is None else r.cf_id,
                    "" if r.pcp is None else r.pcp,
                    "" if r.wire_bytes is None else r.wire_bytes,
                    r.detail,
                ]
            )
        return out.getvalue()

    def write_csv(self, path: str | Path) -> None:
        Path(path).write_text(self.to_csv())


class Kernel:
    """Single-threaded event loop ordered by (time_ns, insertion seq)."""

    def __init__(self) -> None:
        self.now = 0
        self._queue: list[tuple[int, int, Event]] = []
        self._seq = 0
        self.trace = EventTrace()
        self.events_processed = 0

    def schedule_at(
        self,
        time_ns: int,
        callback: Callable[..., Any],
        *payload: Any,
        kind: EventKind = EventKind.TIMER_FIRE,
    ) -> Event:
        if time_ns < self.now:
            raise SchedulingInPast(f"t={time_ns} ns is before now={self.now} ns")
        event = Event(time_ns, self._seq, kind, callback, payload)
        heapq.heappush(self._queue, (time_ns, self._seq, event))
        self._seq += 1
        return event

    def schedule_in(self, delay_ns: int, callback: Callable[..., Any], *payload: Any, kind: EventKind = EventKind.TIMER_FIRE) -> Event:
        return self.schedule_at(self.now + delay_ns, callback, *payload, kind=kind)

    def run_until(self, t_end_ns: int) -> EventTrace:
        queue = self._queue
        while queue and queue[0][0] <= t_end_ns:
            time_ns, _, event = heapq.heappop(queue)
            if event.cancelled:
                continue
            self.now = time_ns
            self.events_processed += 1
            event.callback(*event.payload)
        if self.now < t_end_ns:
            self.now = t_end_ns
        return self.trace

    @property
    def pending(self) -> int:
        return sum(1 for _, _, e in self._queue if not e.cancelled)

    def record(
        self,
        node: str,
        port: Optional[int],
        action: str,
        frame: Any = None,
        detail: str = "",
    ) -> None:
        if frame is None:
            rec = TraceRecord(self.now, node, port, action, None, None, None, None, detail)
        else:
            rec = TraceRecord(
                self.now,
                node,
                port,
                action,
                frame.frame_id,
                frame.cf_id,
                frame.headers.pcp,
                frame.wire_bytes,
                detail,
            )
        self.trace.append(rec)


def rng(seed: int, stream_label: str) -> random.Random:
    """Independent, portable random stream for (seed, label).

    Uses the stdlib Mersenne Twister seeded from the string "seed/label"
    (hashed with SHA-512 by ``random.seed``), which is stable across
    platforms and Python versions.
    """
    return random.Random(f"{seed}/{stream_label}")
