"""Latency bounds, slot placement and schedule validation for scheduled flows."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .dataplane import ALL_GATES, GateControlList, ifg_ns
from .netmodel import MAX_FRAME_BYTES, Topology, transmission_ns, us_to_ns

GRID_NS = 10


class MissingSlot(ValueError):
    pass


class Overlap(ValueError):
    def __init__(self, port: tuple[str, int], window_a: "Window", window_b: "Window"):
        super().__init__(f"Overlap({port[0]}:{port[1]}, {window_a.flow}, {window_b.flow})")
        self.port = port
        self.window_a = window_a
        self.window_b = window_b


@dataclass(frozen=True)
class TimingConstants:
    bandwidth_bps: int = 100_000_000
    t_fwd_ns: int = 3000
    period_ns: int = 1_000_000
    max_frame_bytes: int = MAX_FRAME_BYTES

    @property
    def t_trans_max_ns(self) -> int:
        return transmission_ns(self.max_frame_bytes, self.bandwidth_bps)

    @property
    def t_ifg_ns(self) -> int:
        return ifg_ns(self.bandwidth_bps)

    @property
    def guard_band_ns(self) -> int:
        return self.t_trans_max_ns + self.t_ifg_ns


def transmission_time(wire_bytes: int, bandwidth_bps: int) -> float:
    """Transmission duration in microseconds, preamble included."""
    if wire_bytes < 64 or bandwidth_bps <= 0:
        raise ValueError("wire_bytes must be >= 64 and bandwidth > 0")
    return (wire_bytes + 8) * 8 * 1e6 / bandwidth_bps


@dataclass(frozen=True)
class SyncFlowSpec:
    """A scheduled flow: path runs host, switches..., host."""

    name: str
    path: tuple[str, ...]
    pcp: int
    offset_us: float
    n_frames: int = 1
    wire_bytes: int = MAX_FRAME_BYTES
    hold_us: float = 0.0  # queueing inserted at the first switch

    @property
    def offset_ns(self) -> int:
        return us_to_ns(self.offset_us)

    @property
    def hold_ns(self) -> int:
        return us_to_ns(self.hold_us)


@dataclass(frozen=True)
class Window:
    flow: str
    pcp: int
    start_ns: int
    end_ns: int
    gb_start_ns: int

    @property
    def gb_ns(self) -> int:
        return self.start_ns - self.gb_start_ns


@dataclass
class SlotPlan:
    period_ns: int
    guard_band_ns: int
    flows: dict[str, SyncFlowSpec] = field(default_factory=dict)
    # per flow: ordered (device, port, window) from sender to last switch
    hops: dict[str, list[tuple[str, int, Window]]] = field(default_factory=dict)
    ports: dict[tuple[str, int], list[Window]] = field(default_factory=dict)

    def window(self, flow: str, device: str) -> Window:
        for dev, _, win in self.hops.get(flow, ()):
            if dev == device:
                return win
        raise MissingSlot(f"MissingSlot({flow} at {device})")

    def devices(self) -> list[str]:
        return sorted({dev for dev, _ in self.ports})


def _interval_overlap(a0: int, a1: int, b0: int, b1: int, period: int) -> bool:
    """Overlap of two half-open intervals on a circle of length `period`."""
    for shift in (-period, 0, period):
        if a0 < b1 + shift and b0 + shift < a1:
            return True
    return False


def place_slots(
    flows: Iterable[SyncFlowSpec],
    topology: Topology,
    constants: TimingConstants = TimingConstants(),
) -> tuple[SlotPlan, dict[tuple[str, int], GateControlList]]:
    """Sender window at the flow offset; each switch hop shifted by
    t_trans + t_fwd (plus the flow's hold at the first switch); a guard band
    right before every window, clipped where it meets the previous window."""
    period = constants.period_ns
    gb = constants.guard_band_ns
    plan = SlotPlan(period, gb)
    raw: dict[tuple[str, int], list[tuple[str, int, int, int]]] = {}
    for spec in sorted(flows, key=lambda f: f.name):
        if len(spec.path) < 2:
            raise ValueError(f"flow {spec.name}: path too short")
        plan.flows[spec.name] = spec
        tt = transmission_ns(spec.wire_bytes, constants.bandwidth_bps)
        length = spec.n_frames * (tt + constants.t_ifg_ns)
        hops = []
        for k, device in enumerate(spec.path[:-1]):
            port = topology.port_to(device, spec.path[k + 1])
            start = spec.offset_ns
            if k > 0:
                start += k * (tt + constants.t_fwd_ns) + spec.hold_ns
            start %= period
            hops.append((device, port, start))
            raw.setdefault((device, port), []).append((spec.name, spec.pcp, start, start + length))
        plan.hops[spec.name] = [(d, p, None) for d, p, _ in hops]  # filled below
    for key, items in raw.items():
        items.sort(key=lambda w: w[2])
        windows = []
        for i, (name, pcp, start, end) in enumerate(items):
            for other in items[i + 1 :]:
                if _interval_overlap(start, end, other[2], other[3], period):
                    a = Window(name, pcp, start, end, start)
                    b = Window(other[0], other[1], other[2], other[3], other[2])
                    raise Overlap(key, a, b)
            prev_end = items[i - 1][3] - (period if i == 0 else 0)
            if len(items) == 1:
                prev_end = end - period
            gb_start = max(start - gb, prev_end)
            windows.append(Window(name, pcp, start, end, gb_start))
        plan.ports[key] = windows
    for name, hops in plan.hops.items():
        filled = []
        for device, port, _ in hops:
            win = next(w for w in plan.ports[(device, port)] if w.flow == name)
            filled.append((device, port, win))
        plan.hops[name] = filled
    gcls = {key: compile_gcl(wins, period) for key, wins in sorted(plan.ports.items())}
    return plan, gcls


def compile_gcl(windows: Sequence[Window], period_ns: int) -> GateControlList:
    """Gates of slot-owning priorities close outside their windows; guard
    bands close everything; all other gates stay open."""
    if not windows:
        return GateControlList.all_open(period_ns)
    slot_mask = 0
    for w in windows:
        slot_mask |= 1 << w.pcp
    base = ALL_GATES & ~slot_mask
    segments: list[tuple[int, int, int]] = []  # (start, end, bitmap) within [0, period)

    def add(start: int, end: int, bitmap: int) -> None:
        start_m = start % period_ns
        end_m = start_m + (end - start)
        if end_m <= period_ns:
            segments.append((start_m, end_m, bitmap))
        else:
            segments.append((start_m, period_ns, bitmap))
            segments.append((0, end_m - period_ns, bitmap))

    for w in windows:
        if w.start_ns > w.gb_start_ns:
            add(w.gb_start_ns, w.start_ns, 0)
        add(w.start_ns, w.end_ns, 1 << w.pcp)
    segments.sort()
    entries: list[list[int]] = []
    cursor = 0

    def push(bitmap: int, duration: int) -> None:
        if duration <= 0:
            return
        if entries and entries[-1][0] == bitmap:
            entries[-1][1] += duration
        else:
            entries.append([bitmap, duration])

    for start, end, bitmap in segments:
        if start > cursor:
            push(base, start - cursor)
        push(bitmap, end - max(start, cursor))
        cursor = max(cursor, end)
    push(base, period_ns - cursor)
    return GateControlList(period_ns, tuple((b, d) for b, d in entries))


def sync_bound(flow: str, plan: SlotPlan, constants: TimingConstants = TimingConstants()) -> float:
    """End-to-end latency (us) of the worst frame of a scheduled flow, walking
    each frame through its sender window and every hop window."""
    if flow not in plan.flows:
        raise MissingSlot(f"MissingSlot({flow})")
    spec = plan.flows[flow]
    hops = plan.hops.get(flow, [])
    if len(hops) != len(spec.path) - 1:
        raise MissingSlot(f"MissingSlot({flow})")
    return max(_frame_latencies_ns(spec, [w for _, _, w in hops], plan.period_ns, constants)) / 1000


def _frame_latencies_ns(spec: SyncFlowSpec, windows: Sequence[Window], period: int, constants: TimingConstants) -> list[int]:
    tt = transmission_ns(spec.wire_bytes, constants.bandwidth_bps)
    step = tt + constants.t_ifg_ns
    out = []
    prev_dep: list[Optional[int]] = [None] * len(windows)
    for j in range(spec.n_frames):
        release = spec.offset_ns + j * step
        t = release
        for k, win in enumerate(windows):
            if k > 0:
                t += tt + constants.t_fwd_ns
            earliest = t if prev_dep[k] is None else max(t, prev_dep[k] + step)
            cycle = (earliest - win.end_ns) // period
            while True:
                open_at = win.start_ns + cycle * period
                dep = max(earliest, open_at)
                if dep + tt <= win.end_ns + cycle * period:
                    break
                cycle += 1
            prev_dep[k] = dep
            t = dep
        out.append(t + tt - release)
    return out


def _closed_mask(gcl: GateControlList, pcp: int) -> np.ndarray:
    n = gcl.period_ns // GRID_NS
    mask = np.ones(n, dtype=bool)
    for start, end in gcl.windows(pcp):
        mask[start // GRID_NS : end // GRID_NS] = False
    return mask


def max_interference(
    hop_gcls: Sequence[GateControlList],
    pcp: int,
    constants: TimingConstants = TimingConstants(),
    plan: Optional[SlotPlan] = None,
    hop_keys: Optional[Sequence[tuple[str, int]]] = None,
    wire_bytes: int = MAX_FRAME_BYTES,
) -> float:
    """T_mi in us for a frame of priority `pcp` crossing the given hops.

    Hop k's closed-gate timeline is shifted back by k * (t_trans + t_fwd), so
    a blockage a frame can only meet on one hop of an aligned schedule is
    counted once. Open gaps shorter than the frame's own transmission time
    cannot be used and are bridged. If a slot plan is given, the longest
    blocked stretch is charged as one guard band plus the scheduled frames
    of every flow whose window falls inside it; otherwise its raw length.
    """
    if not hop_gcls:
        return 0.0
    period = hop_gcls[0].period_ns
    tt = transmission_ns(wire_bytes, constants.bandwidth_bps)
    shift = tt + constants.t_fwd_ns
    merged = np.zeros(period // GRID_NS, dtype=bool)
    for k, gcl in enumerate(hop_gcls):
        if gcl.period_ns != period:
            raise ValueError("hop GCLs must share one period")
        merged |= np.roll(_closed_mask(gcl, pcp), -((k * shift) // GRID_NS))
    if not merged.any():
        return 0.0
    if merged.all():
        return float("inf")
    merged = _bridge_short_gaps(merged, tt // GRID_NS)
    if merged.all():
        return float("inf")
    start, length = _longest_circular_run(merged)
    if plan is None or hop_keys is None:
        return length * GRID_NS / 1000
    lo, hi = start * GRID_NS, (start + length) * GRID_NS
    inside: dict[str, SyncFlowSpec] = {}
    for k, key in enumerate(hop_keys):
        for w in plan.ports.get(key, ()):
            s = (w.start_ns - k * shift) % period
            e = s + (w.end_ns - w.start_ns)
            if _interval_overlap(s, e, lo, hi, period):
                inside[w.flow] = plan.flows[w.flow]
    if not inside:
        return length * GRID_NS / 1000
    charge = constants.guard_band_ns
    for spec in inside.values():
        spec_tt = transmission_ns(spec.wire_bytes, constants.bandwidth_bps)
        charge += spec.n_frames * (spec_tt + constants.t_ifg_ns)
    return charge / 1000


def _bridge_short_gaps(closed: np.ndarray, min_open: int) -> np.ndarray:
    out = closed.copy()
    n = len(closed)
    # rotate so index 0 is closed, then scan open runs linearly
    first_closed = int(np.argmax(closed))
    rolled = np.roll(closed, -first_closed)
    i = 0
    while i < n:
        if rolled[i]:
            i += 1
            continue
        j = i
        while j < n and not rolled[j]:
            j += 1
        if j - i < min_open:
            idx = (np.arange(i, j) + first_closed) % n
            out[idx] = True
        i = j
    return out


def _longest_circular_run(mask: np.ndarray) -> tuple[int, int]:
    n = len(mask)
    first_open = int(np.argmin(mask))
    rolled = np.roll(mask, -first_open)
    best_start, best_len = 0, 0
    i = 0
    while i < n:
        if not rolled[i]:
            i += 1
            continue
        j = i
        while j < n and rolled[j]:
            j += 1
        if j - i > best_len:
            best_start, best_len = (i + first_open) % n, j - i
        i = j
    return best_start, best_len


def async_bound(
    hop_gcls: Sequence[GateControlList],
    pcp: int,
    constants: TimingConstants = TimingConstants(),
    plan: Optional[SlotPlan] = None,
    hop_keys: Optional[Sequence[tuple[str, int]]] = None,
    wire_bytes: int = MAX_FRAME_BYTES,
    hops: Optional[int] = None,
) -> float:
    """T_mi + hops * (T_BE + t_ifg + T_trans) + (hops - 1) * t_fwd, in us."""
    n = hops if hops is not None else len(hop_gcls)
    if n < 1:
        raise ValueError("need at least one hop")
    t_mi = max_interference(hop_gcls, pcp, constants, plan, hop_keys, wire_bytes) if hop_gcls else 0.0
    tt = transmission_ns(wire_bytes, constants.bandwidth_bps)
    per_hop = constants.t_trans_max_ns + constants.t_ifg_ns + tt
    return round(t_mi + (n * per_hop + (n - 1) * constants.t_fwd_ns) / 1000, 3)


def path_gcls(
    path: Sequence[str],
    topology: Topology,
    gcls: Mapping[tuple[str, int], GateControlList],
    period_ns: int = 1_000_000,
) -> tuple[list[GateControlList], list[tuple[str, int]]]:
    """GCLs along a path's transmitting ports (all-open where unscheduled)."""
    keys = [(dev, topology.port_to(dev, path[k + 1])) for k, dev in enumerate(path[:-1])]
    return [gcls.get(key, GateControlList.all_open(period_ns)) for key in keys], keys


def validate_schedule(
    gcls: Mapping[tuple[str, int], GateControlList],
    plan: Optional[SlotPlan] = None,
    constants: TimingConstants = TimingConstants(),
) -> list[str]:
    """Violations as text; an empty list means the schedule passes."""
    problems: list[str] = []
    for key, gcl in gcls.items():
        total = sum(d for _, d in gcl.entries)
        if total != gcl.period_ns:
            problems.append(f"{key[0]}:{key[1]}: durations sum to {total} ns, period {gcl.period_ns} ns")
    if plan is None:
        return problems
    period = plan.period_ns
    for key, windows in plan.ports.items():
        for w in windows:
            if w.end_ns - w.start_ns > period:
                problems.append(f"{key[0]}:{key[1]}: window of {w.flow} is longer than the period")
        for i, a in enumerate(windows):
            for b in windows[i + 1 :]:
                if _interval_overlap(a.gb_start_ns, a.end_ns, b.start_ns, b.end_ns, period) or _interval_overlap(
                    a.start_ns, a.end_ns, b.gb_start_ns, b.end_ns, period
                ):
                    problems.append(f"{key[0]}:{key[1]}: windows of {a.flow} and {b.flow} overlap")
        gcl = gcls.get(key)
        if gcl is None:
            problems.append(f"{key[0]}:{key[1]}: no GCL for scheduled port")
            continue
        ordered = sorted(windows, key=lambda w: w.start_ns)
        for i, w in enumerate(ordered):
            prev_end = ordered[i - 1].end_ns - (period if i == 0 else 0)
            gb_from = max(w.start_ns - plan.guard_band_ns, prev_end)
            for t in _sample(gb_from, w.start_ns):
                if gcl.bitmap_at(t) != 0:
                    problems.append(f"{key[0]}:{key[1]}: missing guard band before {w.flow}")
                    break
            for t in _sample(w.start_ns, w.end_ns):
                if gcl.bitmap_at(t) != 1 << w.pcp:
                    problems.append(f"{key[0]}:{key[1]}: window of {w.flow} not exclusively open")
                    break
    for name, hops in plan.hops.items():
        spec = plan.flows[name]
        tt = transmission_ns(spec.wire_bytes, constants.bandwidth_bps)
        for k in range(1, len(hops) - 1):
            step = (hops[k + 1][2].start_ns - hops[k][2].start_ns) % period
            if step != (tt + constants.t_fwd_ns) % period:
                problems.append(f"{name}: hop windows at {hops[k][0]} and {hops[k + 1][0]} are not contiguous")
    return problems


def _sample(start: int, end: int) -> range:
    if end <= start:
        return range(0)
    return range(start, end, GRID_NS)
