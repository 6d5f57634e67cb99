"""Network-wide transactional GCL updates: planning, commit order, execution."""

from __future__ import annotations

import csv
import io
import itertools
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Iterable, Mapping, Optional, Sequence

from .bounds import SlotPlan, SyncFlowSpec, TimingConstants, Window, _interval_overlap, place_slots, validate_schedule
from .dataplane import ControlMessage, Device, GateControlList
from .netmodel import ns_to_us_text, us_to_ns

TXN_LOG_HEADER = ("txn_id", "phase", "device", "t_us", "detail")


class OpKind(str, Enum):
    ADD_SLOT = "AddSlot"
    REMOVE_SLOT = "RemoveSlot"
    SHIFT_EARLIER = "ShiftEarlier"
    SHIFT_LATER = "ShiftLater"


DEST_TO_SOURCE = {OpKind.ADD_SLOT, OpKind.SHIFT_LATER}


@dataclass(frozen=True)
class SlotEdit:
    device: str
    port: int
    old: Optional[Window]
    new: Optional[Window]


@dataclass(frozen=True)
class BasicOp:
    kind: OpKind
    flow: str
    edits: tuple[SlotEdit, ...]
    path: tuple[str, ...]  # edited devices, source to destination

    @property
    def order(self) -> list[str]:
        return commit_order(self, list(self.path))


class Unrealizable(ValueError):
    pass


class ValidationFailure(RuntimeError):
    def __init__(self, device: str, reason: str):
        super().__init__(f"ValidationFailure({device}): {reason}")
        self.device = device
        self.reason = reason


def commit_order(op: BasicOp | OpKind, path: Sequence[str]) -> list[str]:
    """Adding or delaying a slot goes destination to source; removing or
    advancing one goes source to destination."""
    if not path:
        raise ValueError("path must be non-empty")
    kind = op.kind if isinstance(op, BasicOp) else op
    return list(reversed(path)) if kind in DEST_TO_SOURCE else list(path)


def plan_update(current: SlotPlan, target: SlotPlan) -> list[BasicOp]:
    ops = []
    retained = {
        name
        for name in set(current.flows) & set(target.flows)
        if [(d, p, w.start_ns, w.end_ns) for d, p, w in current.hops[name]]
        == [(d, p, w.start_ns, w.end_ns) for d, p, w in target.hops[name]]
    }
    for name in sorted(set(current.flows) | set(target.flows)):
        if name in retained:
            continue
        old = {d: (p, w) for d, p, w in current.hops.get(name, [])}
        new = {d: (p, w) for d, p, w in target.hops.get(name, [])}
        spec = target.flows.get(name) or current.flows[name]
        edits = []
        deltas = []
        for device in spec.path[:-1]:
            o, n = old.get(device), new.get(device)
            if o is None and n is None:
                continue
            if o is not None and n is not None and (o[1].start_ns, o[1].end_ns) == (n[1].start_ns, n[1].end_ns):
                continue
            port = (n or o)[0]
            edits.append(SlotEdit(device, port, o[1] if o else None, n[1] if n else None))
            if o is not None and n is not None:
                deltas.append(_signed_shift(o[1].start_ns, n[1].start_ns, current.period_ns))
        if not edits:
            continue
        if name not in current.flows:
            kind = OpKind.ADD_SLOT
        elif name not in target.flows:
            kind = OpKind.REMOVE_SLOT
        elif all(d >= 0 for d in deltas):
            kind = OpKind.SHIFT_LATER
        elif all(d <= 0 for d in deltas):
            kind = OpKind.SHIFT_EARLIER
        else:
            raise Unrealizable(f"flow {name} moves in both directions")
        for edit in edits:
            if edit.new is None:
                continue
            for other in current.ports.get((edit.device, edit.port), []):
                if other.flow in retained and _interval_overlap(
                    edit.new.gb_start_ns, edit.new.end_ns, other.start_ns, other.end_ns, current.period_ns
                ):
                    raise Unrealizable(f"{name} at {edit.device} overlaps retained slot of {other.flow}")
        ops.append(BasicOp(kind, name, tuple(edits), tuple(e.device for e in edits)))
    return ops


def _signed_shift(old: int, new: int, period: int) -> int:
    delta = (new - old) % period
    return delta - period if delta > period // 2 else delta


def merge_orders(orders: Iterable[Sequence[str]]) -> Optional[list[str]]:
    """One device sequence consistent with every given order, or None."""
    orders = [list(o) for o in orders]
    nodes: list[str] = []
    for order in orders:
        for d in order:
            if d not in nodes:
                nodes.append(d)
    after: dict[str, set[str]] = {d: set() for d in nodes}
    for order in orders:
        for a, b in zip(order, order[1:]):
            after[b].add(a)
    out: list[str] = []
    while len(out) < len(nodes):
        ready = [d for d in nodes if d not in out and after[d] <= set(out)]
        if not ready:
            return None
        out.append(ready[0])
    return out


class Phase(str, Enum):
    IDLE = "Idle"
    LOCKED = "Locked"
    CONFIGURED = "Configured"
    COMMITTED = "Committed"
    UNLOCKED = "Unlocked"


_NEXT = {
    Phase.IDLE: {Phase.LOCKED},
    Phase.LOCKED: {Phase.CONFIGURED, Phase.IDLE},
    Phase.CONFIGURED: {Phase.COMMITTED, Phase.IDLE},
    Phase.COMMITTED: {Phase.UNLOCKED},
    Phase.UNLOCKED: set(),
}


@dataclass(frozen=True)
class Synchronous:
    commit_time_ns: Optional[int] = None  # None: coordinator picks


@dataclass(frozen=True)
class Ordered:
    sequence: tuple[str, ...]


@dataclass
class Transaction:
    txn_id: str
    ops: list[BasicOp]
    strategy: Synchronous | Ordered
    devices: list[str] = field(default_factory=list)
    candidates: dict[str, dict[int, GateControlList]] = field(default_factory=dict)
    windows: dict[str, dict[int, list[Window]]] = field(default_factory=dict)
    target_flows: dict[str, SyncFlowSpec] = field(default_factory=dict)
    not_before_ns: int = 0
    phase: Phase = Phase.IDLE
    outcome: str = ""
    commit_times: dict[str, int] = field(default_factory=dict)

    def advance(self, phase: Phase) -> None:
        if phase not in _NEXT[self.phase]:
            raise RuntimeError(f"txn {self.txn_id}: illegal phase change {self.phase.value} -> {phase.value}")
        self.phase = phase


def split_transaction(ops: Sequence[BasicOp], prefix: str = "T") -> list[Transaction]:
    """Greedy sequential partition: an op joins the current transaction while
    its device order stays consistent with the orders already in it."""
    groups: list[list[BasicOp]] = []
    for op in ops:
        if groups and merge_orders([o.order for o in groups[-1]] + [op.order]) is not None:
            groups[-1].append(op)
        else:
            groups.append([op])
    out = []
    for i, group in enumerate(groups, 1):
        sequence = merge_orders([o.order for o in group]) or []
        out.append(Transaction(f"{prefix}-{i}", list(group), Ordered(tuple(sequence))))
    return out


def apply_ops(flows: Mapping[str, SyncFlowSpec], ops: Iterable[BasicOp], target: Mapping[str, SyncFlowSpec]) -> dict[str, SyncFlowSpec]:
    out = dict(flows)
    for op in ops:
        if op.kind == OpKind.REMOVE_SLOT:
            out.pop(op.flow, None)
        else:
            out[op.flow] = target[op.flow]
    return out


def device_candidates(
    before: SlotPlan,
    before_gcls: Mapping[tuple[str, int], GateControlList],
    after: SlotPlan,
    after_gcls: Mapping[tuple[str, int], GateControlList],
) -> tuple[dict[str, dict[int, GateControlList]], dict[str, dict[int, list[Window]]]]:
    """Per-device GCLs (and slot windows) for every device whose schedule changes."""
    period = after.period_ns
    keys = set(before_gcls) | set(after_gcls)
    gcls: dict[str, dict[int, GateControlList]] = {}
    wins: dict[str, dict[int, list[Window]]] = {}
    for device, port in sorted(keys):
        new = after_gcls.get((device, port), GateControlList.all_open(period))
        old = before_gcls.get((device, port), GateControlList.all_open(period))
        if new != old:
            gcls.setdefault(device, {})
    for device in gcls:
        for d, port in sorted(keys):
            if d == device:
                gcls[device][port] = after_gcls.get((d, port), GateControlList.all_open(period))
                wins.setdefault(device, {})[port] = list(after.ports.get((d, port), []))
    return gcls, wins


def validate_candidate(gcls: Mapping[int, GateControlList], windows: Mapping[int, Sequence[Window]], period_ns: int) -> list[str]:
    plan = SlotPlan(period_ns, TimingConstants().guard_band_ns)
    keyed = {("dev", p): g for p, g in gcls.items()}
    for port, wins in windows.items():
        if wins:
            plan.ports[("dev", port)] = list(wins)
    return validate_schedule(keyed, plan)


# --- device side --------------------------------------------------------------


class ConfigAgent:
    """Candidate/running datastore of one device with a single lock owner."""

    def __init__(self, device: Device):
        self.device = device
        self.locked_by: Optional[str] = None
        self.candidate: Optional[dict[int, GateControlList]] = None
        self.windows: dict[int, list[Window]] = {}
        self.commit_at: Optional[int] = None
        self.reject_next = False  # test hook: fail the next validation

    def _reply(self, msg: ControlMessage, ok: bool, detail: str = "") -> ControlMessage:
        return ControlMessage("reply", {"of": msg.kind, "ok": ok, "detail": detail, "txn": msg.body.get("txn")}, self.device.name, msg.xid)

    def handle(self, msg: ControlMessage, now_ns: int) -> Optional[ControlMessage]:
        txn = msg.body.get("txn")
        kind = msg.kind
        if kind == "lock":
            if self.locked_by not in (None, txn):
                return self._reply(msg, False, f"locked by {self.locked_by}")
            self.locked_by = txn
            return self._reply(msg, True)
        if self.locked_by != txn:
            return self._reply(msg, False, "not locked by this transaction")
        if kind == "configure":
            self.candidate = dict(msg.body["gcls"])
            self.windows = {p: list(w) for p, w in msg.body.get("windows", {}).items()}
            problems = validate_candidate(self.candidate, self.windows, msg.body["period_ns"])
            if self.reject_next:
                self.reject_next = False
                problems.append("rejected by device")
            if problems:
                return self._reply(msg, False, "; ".join(problems))
            return self._reply(msg, True)
        if kind == "discard":
            self.candidate = None
            self.windows = {}
            return self._reply(msg, True)
        if kind == "prepare":
            self.commit_at = msg.body["commit_time_ns"]
            return self._reply(msg, self.candidate is not None)
        if kind == "release":
            when = self.commit_at if self.commit_at is not None else now_ns
            if when < now_ns:
                return self._reply(msg, False, "commit time already passed")
            self.device.kernel.schedule_at(when, self._swap)
            return self._reply(msg, True, ns_to_us_text(when))
        if kind == "commit":
            self._swap()
            return self._reply(msg, True, ns_to_us_text(now_ns))
        if kind == "unlock":
            self.locked_by = None
            self.commit_at = None
            return self._reply(msg, True)
        return self._reply(msg, False, f"unknown request {kind}")

    def _swap(self) -> None:
        if self.candidate is not None:
            self.device.apply_gcls(self.candidate)
            self.candidate = None


# --- coordinator ------------------------------------------------------------------


class TransactionCoordinator:
    """Controller-resident state machine running one transaction at a time."""

    def __init__(
        self,
        kernel,
        send: Callable[[str, ControlMessage], None],
        device_order: Sequence[str],
        period_ns: int = 1_000_000,
        commit_phase_ns: Optional[int] = None,
    ):
        self.kernel = kernel
        self.send = send
        self.global_order = {d: i for i, d in enumerate(device_order)}
        self.period_ns = period_ns
        self.commit_phase_ns = commit_phase_ns
        self.log: list[tuple[str, str, str, int, str]] = []
        self.lock_sequence: list[tuple[str, str]] = []
        self._queue: list[tuple[Transaction, Callable[[Transaction], None]]] = []
        self._active: Optional[Transaction] = None
        self._pending: dict[int, str] = {}
        self._on_replies: Optional[Callable[[], None]] = None
        self._replies: dict[str, ControlMessage] = {}
        self._sent_at: dict[int, int] = {}
        self.rtt: dict[str, int] = {}
        self._xids = itertools.count(1)
        self.done: list[Transaction] = []
        self.idle_check: Optional[Callable[[Transaction, int], bool]] = None

    # bookkeeping -----------------------------------------------------------

    def note(self, txn: Transaction, phase: str, device: str = "", detail: str = "") -> None:
        self.log.append((txn.txn_id, phase, device, self.kernel.now, detail))

    def log_csv(self) -> str:
        out = io.StringIO()
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(TXN_LOG_HEADER)
        for txn_id, phase, device, t_ns, detail in self.log:
            writer.writerow([txn_id, phase, device, ns_to_us_text(t_ns), detail])
        return out.getvalue()

    def submit(self, txn: Transaction, on_done: Callable[[Transaction], None] = lambda t: None) -> None:
        self._queue.append((txn, on_done))
        if self._active is None:
            self._start_next()

    def _start_next(self) -> None:
        if not self._queue:
            self._active = None
            return
        txn, on_done = self._queue.pop(0)
        self._active = txn
        self._on_done = on_done
        if isinstance(txn.strategy, Synchronous):
            self.execute_synchronous(txn, txn.strategy.commit_time_ns)
        else:
            self.execute_ordered(txn)

    def _request(self, txn: Transaction, devices: Sequence[str], kind: str, body: Optional[dict], then: Callable[[dict[str, ControlMessage]], None]) -> None:
        self._replies = {}
        self._pending = {}
        self._on_replies = lambda: then(dict(self._replies))
        for device in devices:
            xid = next(self._xids)
            self._pending[xid] = device
            self._sent_at[xid] = self.kernel.now
            payload = {"txn": txn.txn_id}
            if body:
                payload.update(body.get(device) or body.get("*") or {})
            self.note(txn, kind, device)
            self.send(device, ControlMessage(kind, payload, device, xid))

    def on_message(self, msg: ControlMessage) -> None:
        device = self._pending.pop(msg.xid, None)
        if device is None:
            return
        sent = self._sent_at.pop(msg.xid, self.kernel.now)
        self.rtt[device] = max(self.rtt.get(device, 0), self.kernel.now - sent)
        self._replies[device] = msg
        if self._active is not None:
            ok = "ok" if msg.body.get("ok") else "fail"
            self.note(self._active, f"{msg.body.get('of')}_{ok}", device, msg.body.get("detail", ""))
        if not self._pending and self._on_replies is not None:
            callback, self._on_replies = self._on_replies, None
            callback()

    # phases ----------------------------------------------------------------

    def _lock_all(self, txn: Transaction, then: Callable[[], None]) -> None:
        devices = sorted(txn.devices, key=lambda d: (self.global_order.get(d, len(self.global_order)), d))
        remaining = list(devices)

        def step(replies: Optional[dict] = None) -> None:
            if replies is not None:
                (device, reply), = replies.items()
                if not reply.body.get("ok"):
                    self._rollback(txn, [d for d in devices if d not in remaining and d != device], f"lock refused by {device}")
                    return
            if not remaining:
                txn.advance(Phase.LOCKED)
                then()
                return
            device = remaining.pop(0)
            self.lock_sequence.append((txn.txn_id, device))
            self._request(txn, [device], "lock", None, step)

        step()

    def _configure_all(self, txn: Transaction, then: Callable[[], None]) -> None:
        body = {
            d: {"gcls": txn.candidates.get(d, {}), "windows": txn.windows.get(d, {}), "period_ns": self.period_ns}
            for d in txn.devices
        }

        def done(replies: dict[str, ControlMessage]) -> None:
            failed = sorted(d for d, r in replies.items() if not r.body.get("ok"))
            if failed:
                self._rollback(txn, txn.devices, f"ValidationFailure({failed[0]})")
                return
            txn.advance(Phase.CONFIGURED)
            then()

        self._request(txn, txn.devices, "configure", body, done)

    def _rollback(self, txn: Transaction, locked: Sequence[str], reason: str) -> None:
        self.note(txn, "rollback", "", reason)
        txn.outcome = reason

        def unlocked(_: dict) -> None:
            if txn.phase != Phase.IDLE:
                txn.advance(Phase.IDLE)
            self._finish(txn)

        def discarded(_: dict) -> None:
            self._request(txn, list(locked), "unlock", None, unlocked)

        if locked:
            self._request(txn, list(locked), "discard", None, discarded)
        else:
            unlocked({})

    def _unlock_all(self, txn: Transaction) -> None:
        def done(_: dict) -> None:
            txn.advance(Phase.UNLOCKED)
            txn.outcome = txn.outcome or "committed"
            self._finish(txn)

        self._request(txn, txn.devices, "unlock", None, done)

    def _finish(self, txn: Transaction) -> None:
        self.note(txn, "done", "", txn.outcome)
        self.done.append(txn)
        callback = self._on_done
        self._active = None
        callback(txn)
        self._start_next()

    def pick_commit_time(self, txn: Transaction, now_ns: int) -> int:
        """Earliest period boundary after two worst-case round trips (and not
        before the transaction's requested time) that the idle check accepts."""
        rtt = max((self.rtt.get(d, 0) for d in txn.devices), default=0)
        earliest = max(now_ns + 2 * rtt, txn.not_before_ns)
        t = -(-earliest // self.period_ns) * self.period_ns
        for _ in range(1000):
            if self.idle_check is None or self.idle_check(txn, t):
                return t
            t += self.period_ns
        raise RuntimeError("no idle commit boundary found")

    def execute_synchronous(self, txn: Transaction, commit_time_ns: Optional[int] = None) -> None:
        """Lock, configure, then a two-stage commit: every device swaps at one instant."""
        self.note(txn, "start", "", "synchronous")

        def commit() -> None:
            ts = commit_time_ns if commit_time_ns is not None else self.pick_commit_time(txn, self.kernel.now)

            def prepared(replies: dict[str, ControlMessage]) -> None:
                if not all(r.body.get("ok") for r in replies.values()):
                    self._rollback(txn, txn.devices, "prepare refused")
                    return

                def released(replies2: dict[str, ControlMessage]) -> None:
                    if not all(r.body.get("ok") for r in replies2.values()):
                        # a device missed the instant; it is inconsistent, surface it loudly
                        raise RuntimeError(f"txn {txn.txn_id}: release arrived after commit time")
                    for d in txn.devices:
                        txn.commit_times[d] = ts

                    def committed() -> None:
                        txn.advance(Phase.COMMITTED)
                        self.note(txn, "committed", "", ns_to_us_text(ts))
                        self._unlock_all(txn)

                    self.kernel.schedule_at(max(ts, self.kernel.now), committed)

                self._request(txn, txn.devices, "release", None, released)

            self._request(txn, txn.devices, "prepare", {"*": {"commit_time_ns": ts}}, prepared)

        self._lock_all(txn, lambda: self._configure_all(txn, commit))

    def execute_ordered(self, txn: Transaction) -> None:
        """Lock, configure, then commit device by device, each after the
        previous device confirmed."""
        assert isinstance(txn.strategy, Ordered)
        self.note(txn, "start", "", "ordered " + ">".join(txn.strategy.sequence))
        sequence = [d for d in txn.strategy.sequence if d in txn.devices]
        sequence += [d for d in txn.devices if d not in sequence]

        def commit_next(replies: Optional[dict] = None) -> None:
            if replies:
                for d, r in replies.items():
                    txn.commit_times[d] = us_to_ns(r.body["detail"])
            if not sequence:
                txn.advance(Phase.COMMITTED)
                self.note(txn, "committed")
                self._unlock_all(txn)
                return
            self._request(txn, [sequence.pop(0)], "commit", None, commit_next)

        def start_commits() -> None:
            now = self.kernel.now
            t = max(now, txn.not_before_ns)
            if self.commit_phase_ns is not None:
                base = t - t % self.period_ns
                t = base + self.commit_phase_ns if base + self.commit_phase_ns >= t else base + self.period_ns + self.commit_phase_ns
            self.kernel.schedule_at(t, commit_next)

        self._lock_all(txn, lambda: self._configure_all(txn, start_commits))
