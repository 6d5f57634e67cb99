"""Switch pipeline (ingress filter, flow tables, gated egress queues) and endpoints."""

from __future__ import annotations

import itertools
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Iterable, Optional, Sequence

from .desim import EventKind, Kernel
from .netmodel import (
    MATCH_FIELDS,
    Frame,
    HeaderTuple,
    NodeKind,
    Topology,
    transmission_ns,
    us_to_ns,
)

ETH_IPV4 = 0x0800
ETH_ARP = 0x0806
ETH_SRP = 0x22EA
ETH_MGMT = 0x88B5
ETH_CTRL = 0x88B6
ETH_CF = 0x88B7

CONTROL_FRAME_BYTES = 128
NEVER = 1 << 62
ALL_GATES = 0xFF


def ifg_ns(bandwidth_bps: int) -> int:
    return -((-96 * 1_000_000_000) // bandwidth_bps)


# --- matching ---------------------------------------------------------------


@dataclass(frozen=True)
class Pattern:
    """Header pattern; absent fields are wildcards."""

    fields: tuple[tuple[str, int], ...] = ()

    @classmethod
    def of(cls, **values: Optional[int]) -> "Pattern":
        for name in values:
            if name not in MATCH_FIELDS:
                raise ValueError(f"unknown match field {name!r}")
        return cls(tuple(sorted((k, v) for k, v in values.items() if v is not None)))

    @classmethod
    def exact(cls, headers: HeaderTuple) -> "Pattern":
        return cls(tuple(sorted(headers.as_dict().items())))

    def matches(self, headers: HeaderTuple) -> bool:
        for name, value in self.fields:
            if getattr(headers, name) != value:
                return False
        return True

    def as_dict(self) -> dict[str, int]:
        return dict(self.fields)


@dataclass(frozen=True)
class ForwardTo:
    port: int


@dataclass(frozen=True)
class ToController:
    pass


@dataclass(frozen=True)
class Drop:
    pass


Action = ForwardTo | ToController | Drop


class Table(str, Enum):
    STATIC = "static"
    DYNAMIC = "dynamic"


@dataclass(frozen=True)
class FlowRule:
    match: Pattern
    actions: tuple[Action, ...]
    priority: int = 0
    in_port: Optional[int] = None
    table: Table = Table.DYNAMIC
    cookie: Optional[str] = None

    def matches(self, headers: HeaderTuple, in_port: Optional[int]) -> bool:
        if self.in_port is not None and self.in_port != in_port:
            return False
        return self.match.matches(headers)


class StaticMutationAttempt(RuntimeError):
    pass


class FlowTables:
    """Static table (sealed after boot) consulted before the dynamic table."""

    def __init__(self) -> None:
        self.static: list[FlowRule] = []
        self.dynamic: list[FlowRule] = []
        self.sealed = False

    def install_static(self, rule: FlowRule) -> None:
        if self.sealed:
            raise StaticMutationAttempt("static table is immutable after boot")
        self.static.append(FlowRule(rule.match, rule.actions, rule.priority, rule.in_port, Table.STATIC, rule.cookie))

    def seal(self) -> None:
        self.sealed = True

    def install(self, rule: FlowRule) -> None:
        if rule.table == Table.STATIC:
            self.install_static(rule)
        else:
            self.dynamic.append(rule)

    def remove_dynamic(self, cookie: str) -> int:
        before = len(self.dynamic)
        self.dynamic = [r for r in self.dynamic if r.cookie != cookie]
        return before - len(self.dynamic)

    def all_rules(self) -> list[FlowRule]:
        return self.static + self.dynamic


def _best(rules: Sequence[FlowRule], headers: HeaderTuple, in_port: Optional[int]) -> Optional[FlowRule]:
    best = None
    for rule in rules:
        # strict '>' keeps the earliest-installed rule on priority ties
        if rule.matches(headers, in_port) and (best is None or rule.priority > best.priority):
            best = rule
    return best


def lookup(rules: FlowTables | Iterable[FlowRule], headers: HeaderTuple, in_port: Optional[int]) -> tuple[Action, ...]:
    """Actions for a frame; no matching rule means drop."""
    if isinstance(rules, FlowTables):
        static, dynamic = rules.static, rules.dynamic
    else:
        rules = list(rules)
        static = [r for r in rules if r.table == Table.STATIC]
        dynamic = [r for r in rules if r.table != Table.STATIC]
    for table in (static, dynamic):
        rule = _best(table, headers, in_port)
        if rule is not None:
            return rule.actions
    return (Drop(),)


# --- stream reservation -------------------------------------------------------


@dataclass(frozen=True)
class SRTableEntry:
    stream_id: int
    match: Pattern
    reserved_bps: int
    ports: frozenset[int]
    pcp: int = 4


class SRTable:
    def __init__(self) -> None:
        self.entries: dict[int, SRTableEntry] = {}

    def reserved_on(self, port: int) -> int:
        return sum(e.reserved_bps for e in self.entries.values() if port in e.ports)

    def install(self, entry: SRTableEntry) -> None:
        self.entries[entry.stream_id] = entry


# --- gate control ---------------------------------------------------------


@dataclass(frozen=True)
class GateControlList:
    """Periodic gate schedule. Bit i of a bitmap opens the gate of queue i."""

    period_ns: int
    entries: tuple[tuple[int, int], ...]
    base_ns: int = 0

    def __post_init__(self) -> None:
        if self.period_ns <= 0:
            raise ValueError("GCL period must be > 0")
        if not self.entries:
            raise ValueError("GCL needs at least one entry")
        total = 0
        for bitmap, duration in self.entries:
            if not 0 <= bitmap <= ALL_GATES or duration <= 0:
                raise ValueError(f"bad GCL entry ({bitmap:#x}, {duration})")
            total += duration
        if total != self.period_ns:
            raise ValueError(f"GCL durations sum to {total} ns, period is {self.period_ns} ns")
        starts = []
        acc = 0
        for _, duration in self.entries:
            starts.append(acc)
            acc += duration
        object.__setattr__(self, "_starts", tuple(starts))

    @classmethod
    def all_open(cls, period_ns: int = 1_000_000) -> "GateControlList":
        return cls(period_ns, ((ALL_GATES, period_ns),))

    @property
    def period_us(self) -> float:
        return self.period_ns / 1000

    def _locate(self, t_ns: int) -> tuple[int, int]:
        """(entry index, absolute end of that entry) at time t."""
        phase = (t_ns - self.base_ns) % self.period_ns
        cycle_start = t_ns - phase
        starts = self._starts  # type: ignore[attr-defined]
        lo, hi = 0, len(starts) - 1
        while lo < hi:
            mid = (lo + hi + 1) // 2
            if starts[mid] <= phase:
                lo = mid
            else:
                hi = mid - 1
        return lo, cycle_start + starts[lo] + self.entries[lo][1]

    def bitmap_at(self, t_ns: int) -> int:
        return self.entries[self._locate(t_ns)[0]][0]

    def gate_open(self, pcp: int, t_ns: int) -> bool:
        return bool(self.bitmap_at(t_ns) >> pcp & 1)

    def open_until(self, pcp: int, t_ns: int) -> Optional[int]:
        """End of the open stretch of gate `pcp` containing t; None if closed."""
        idx, end = self._locate(t_ns)
        if not self.entries[idx][0] >> pcp & 1:
            return None
        n = len(self.entries)
        for step in range(1, n + 1):
            nxt = (idx + step) % n
            if not self.entries[nxt][0] >> pcp & 1:
                return end
            end += self.entries[nxt][1]
        return NEVER

    def next_change(self, t_ns: int) -> Optional[int]:
        """Next entry boundary strictly after t, or None if the bitmap never changes."""
        if len({b for b, _ in self.entries}) <= 1:
            return None
        return self._locate(t_ns)[1]

    def windows(self, pcp: int) -> list[tuple[int, int]]:
        """Open intervals of a gate as in-period offsets, adjacent entries merged."""
        out: list[tuple[int, int]] = []
        for (bitmap, duration), start in zip(self.entries, self._starts):  # type: ignore[attr-defined]
            if bitmap >> pcp & 1:
                if out and out[-1][1] == start:
                    out[-1] = (out[-1][0], start + duration)
                else:
                    out.append((start, start + duration))
        return out

    def dump(self) -> str:
        lines = [f"{_us(self.period_ns)},{_us(self.base_ns)}"]
        for (bitmap, duration), start in zip(self.entries, self._starts):  # type: ignore[attr-defined]
            lines.append(f"{_us(start)},{_us(duration)},{bitmap:02x}")
        return "\n".join(lines) + "\n"

    @classmethod
    def parse_dump(cls, text: str) -> "GateControlList":
        rows = [ln.strip() for ln in text.splitlines() if ln.strip()]
        period, base = (us_to_ns(v) for v in rows[0].split(","))
        entries = []
        for row in rows[1:]:
            _, duration, bitmap = row.split(",")
            entries.append((int(bitmap, 16), us_to_ns(duration)))
        return cls(period, tuple(entries), base)


def _us(t_ns: int) -> str:
    text = f"{t_ns / 1000:.3f}".rstrip("0").rstrip(".")
    return text or "0"


# --- ingress filtering -------------------------------------------------------


@dataclass(frozen=True)
class FilterEntry:
    match: Pattern
    window: Optional[tuple[int, int]] = None  # (offset_ns, length_ns) within the period
    period_ns: int = 1_000_000
    max_frame_bytes: Optional[int] = None


class IngressVerdict(str, Enum):
    ACCEPT = "accept"
    MISSED_WINDOW = "missed_window"
    OVERSIZE = "oversize"


def ingress_check(filters: Sequence[FilterEntry], frame: Frame, arrival_ns: int) -> IngressVerdict:
    for entry in filters:
        if not entry.match.matches(frame.headers):
            continue
        if entry.max_frame_bytes is not None and frame.wire_bytes > entry.max_frame_bytes:
            return IngressVerdict.OVERSIZE
        if entry.window is not None:
            offset, length = entry.window
            phase = (arrival_ns - offset) % entry.period_ns
            if phase >= length:
                return IngressVerdict.MISSED_WINDOW
        return IngressVerdict.ACCEPT
    return IngressVerdict.ACCEPT


# --- credit-based shaper -----------------------------------------------------


@dataclass(frozen=True)
class CreditState:
    """Credit kept in bit-nanoseconds (bits x 1e9) so updates stay integral."""

    credit: int
    idle_slope_bps: int
    send_slope_bps: int

    @property
    def credit_bits(self) -> float:
        return self.credit / 1e9


def cbs_update(state: CreditState, event: str, dt_ns: int) -> CreditState:
    if dt_ns < 0:
        raise ValueError("dt must be >= 0")
    credit = state.credit
    if event == "waiting":
        credit += state.idle_slope_bps * dt_ns
    elif event == "transmitting":
        credit += state.send_slope_bps * dt_ns
    elif event == "idle":
        credit = 0 if credit > 0 else min(0, credit + state.idle_slope_bps * dt_ns)
    else:
        raise ValueError(f"unknown CBS event {event!r}")
    return CreditState(credit, state.idle_slope_bps, state.send_slope_bps)


class Shaper:
    """Per-queue CBS bookkeeping on an egress port, advanced lazily."""

    def __init__(self, idle_slope_bps: int, port_rate_bps: int, now_ns: int = 0):
        self.state = CreditState(0, idle_slope_bps, idle_slope_bps - port_rate_bps)
        self.last_ns = now_ns

    def advance(self, now_ns: int, backlogged: bool) -> None:
        if now_ns <= self.last_ns:
            return
        self.state = cbs_update(self.state, "waiting" if backlogged else "idle", now_ns - self.last_ns)
        self.last_ns = now_ns

    def charge(self, start_ns: int, tx_ns: int) -> None:
        self.state = cbs_update(self.state, "transmitting", tx_ns)
        self.last_ns = start_ns + tx_ns

    def ready_at(self, now_ns: int) -> int:
        credit = self.state.credit
        base = max(now_ns, self.last_ns)
        if credit >= 0:
            return base
        return base + -((credit) // self.state.idle_slope_bps)


# --- egress ---------------------------------------------------------------


class EgressPort:
    """Eight FIFO queues behind a GCL, one frame on the wire at a time."""

    def __init__(
        self,
        kernel: Kernel,
        owner: str,
        port: int,
        bandwidth_bps: int,
        deliver: Callable[[Frame, int], None],
        latency_ns: int = 0,
        gcl: Optional[GateControlList] = None,
    ):
        self.kernel = kernel
        self.owner = owner
        self.port = port
        self.bandwidth_bps = bandwidth_bps
        self.ifg_ns = ifg_ns(bandwidth_bps)
        self.deliver = deliver
        self.latency_ns = latency_ns
        self.gcl = gcl or GateControlList.all_open()
        self.queues: list[deque[Frame]] = [deque() for _ in range(8)]
        self.shapers: dict[int, Shaper] = {}
        self.busy = False
        self._wakeup = None
        self._wakeup_at: Optional[int] = None
        self.tx_log: Optional[list[tuple[int, int, int, GateControlList]]] = None

    def set_gcl(self, gcl: GateControlList) -> None:
        self.gcl = gcl
        self.kick()

    def set_shaper(self, pcp: int, idle_slope_bps: Optional[int]) -> None:
        if idle_slope_bps is None:
            self.shapers.pop(pcp, None)
        else:
            self.shapers[pcp] = Shaper(idle_slope_bps, self.bandwidth_bps, self.kernel.now)
        self.kick()

    def backlog(self) -> int:
        return sum(len(q) for q in self.queues)

    def enqueue(self, frame: Frame) -> None:
        enqueue_egress(self, frame, self.kernel.now)
        self.kernel.record(self.owner, self.port, "enqueued", frame)
        self.kick()

    def kick(self) -> None:
        if self.busy:
            return
        now = self.kernel.now
        frame = select_transmission(self, now)
        if frame is None:
            self._arm_wakeup(now)
            return
        tx = frame.tx_ns(self.bandwidth_bps)
        shaper = self.shapers.get(frame.headers.pcp)
        if shaper is not None:
            shaper.charge(now, tx)
        self.busy = True
        self.kernel.record(self.owner, self.port, "sent", frame)
        if self.tx_log is not None:
            self.tx_log.append((now, now + tx, frame.headers.pcp, self.gcl))
        self.kernel.schedule_at(now + tx + self.latency_ns, self.deliver, frame, kind=EventKind.FRAME_ARRIVAL)
        self.kernel.schedule_at(now + tx + self.ifg_ns, self._done, kind=EventKind.TRANSMISSION_COMPLETE)

    def _done(self) -> None:
        self.busy = False
        self.kick()

    def _arm_wakeup(self, now: int) -> None:
        if not any(self.queues):
            return
        candidates = []
        change = self.gcl.next_change(now)
        if change is not None:
            candidates.append(change)
        for pcp, shaper in self.shapers.items():
            if self.queues[pcp] and shaper.state.credit < 0:
                candidates.append(shaper.ready_at(now))
        if not candidates:
            return
        when = min(candidates)
        if self._wakeup is not None and not self._wakeup.cancelled and self._wakeup_at == when:
            return
        if self._wakeup is not None:
            self._wakeup.cancel()
        self._wakeup_at = when
        self._wakeup = self.kernel.schedule_at(when, self._on_wakeup, kind=EventKind.GATE_CHANGE)

    def _on_wakeup(self) -> None:
        self._wakeup = None
        self._wakeup_at = None
        self.kick()


def enqueue_egress(port: EgressPort, frame: Frame, now_ns: int) -> None:
    pcp = frame.headers.pcp
    if not 0 <= pcp <= 7:
        raise ValueError(f"pcp {pcp} outside 0-7")
    shaper = port.shapers.get(pcp)
    if shaper is not None:
        shaper.advance(now_ns, bool(port.queues[pcp]))
    port.queues[pcp].append(frame)


def select_transmission(port: EgressPort, now_ns: int) -> Optional[Frame]:
    """Pop the highest-priority head frame that its gate, its remaining open
    time and its shaper credit all allow; None if nothing qualifies."""
    for shaper_pcp, shaper in port.shapers.items():
        shaper.advance(now_ns, bool(port.queues[shaper_pcp]))
    for pcp in range(7, -1, -1):
        queue = port.queues[pcp]
        if not queue:
            continue
        until = port.gcl.open_until(pcp, now_ns)
        if until is None:
            continue
        head = queue[0]
        if until < now_ns + head.tx_ns(port.bandwidth_bps):
            continue
        shaper = port.shapers.get(pcp)
        if shaper is not None and shaper.state.credit < 0:
            continue
        return queue.popleft()
    return None


# --- devices ----------------------------------------------------------------


@dataclass(frozen=True)
class ControlMessage:
    kind: str
    body: dict = field(default_factory=dict)
    device: str = ""
    xid: int = 0


class Device:
    def __init__(self, network: "Network", name: str):
        self.network = network
        self.kernel = network.kernel
        self.name = name
        self.ports: dict[int, EgressPort] = {}
        self.agent = None  # configuration agent for transactional GCL updates

    @property
    def node(self):
        return self.network.topology.nodes[self.name]

    def receive(self, frame: Frame, port: int) -> None:
        raise NotImplementedError

    def running_gcls(self) -> dict[int, GateControlList]:
        return {p: ep.gcl for p, ep in self.ports.items()}

    def apply_gcls(self, gcls: dict[int, GateControlList]) -> None:
        for port, gcl in gcls.items():
            self.ports[port].set_gcl(gcl)

    def send_control(self, port: int, msg: ControlMessage, dst_mac: int, ethertype: int = ETH_CTRL, pcp: int = 0) -> None:
        headers = HeaderTuple(dst_mac=dst_mac, src_mac=self.node.mac, ethertype=ethertype, pcp=pcp)
        frame = self.network.new_frame(headers, CONTROL_FRAME_BYTES, body=msg)
        self.ports[port].enqueue(frame)


class Switch(Device):
    def __init__(self, network: "Network", name: str):
        super().__init__(network, name)
        self.tables = FlowTables()
        self.sr_table = SRTable()
        self.filters: list[FilterEntry] = []
        self.control_port: Optional[int] = None
        self.local_agent: Optional[Callable[["Switch", int, Frame], None]] = None
        self.packet_in_count = 0

    def receive(self, frame: Frame, port: int) -> None:
        k = self.kernel
        k.record(self.name, port, "received", frame)
        if port == self.control_port:
            self.handle_control(frame.body)
            return
        verdict = ingress_check(self.filters, frame, k.now)
        if verdict != IngressVerdict.ACCEPT:
            k.record(self.name, port, "dropped_ingress", frame, verdict.value)
            return
        self.process(frame, port)

    def process(self, frame: Frame, in_port: int) -> None:
        self.apply_actions(frame, in_port, lookup(self.tables, frame.headers, in_port))

    def apply_actions(self, frame: Frame, in_port: Optional[int], actions: Sequence[Action]) -> None:
        k = self.kernel
        out_ports = []
        for action in actions:
            if isinstance(action, ForwardTo):
                if action.port != in_port:
                    out_ports.append(action.port)
            elif isinstance(action, ToController):
                self.to_controller(frame, in_port)
            else:
                k.record(self.name, in_port, "dropped_no_rule", frame)
        if out_ports:
            delay = self.forwarding_delay(in_port)
            for port in out_ports:
                k.schedule_in(delay, self.ports[port].enqueue, frame)

    def forwarding_delay(self, in_port: Optional[int]) -> int:
        if in_port is None:
            return 0
        return self.network.topology.peer(self.name, in_port).link.forwarding_delay_ns

    def to_controller(self, frame: Frame, in_port: Optional[int]) -> None:
        self.kernel.record(self.name, in_port, "to_controller", frame)
        self.packet_in_count += 1
        if self.local_agent is not None:
            self.local_agent(self, in_port, frame)
            return
        if self.control_port is None:
            self.kernel.record(self.name, in_port, "dropped_no_rule", frame, "no controller")
            return
        msg = ControlMessage("packet_in", {"switch": self.name, "in_port": in_port, "frame": frame}, self.name)
        self.send_control(self.control_port, msg, self.network.controller_mac)

    def handle_control(self, msg: ControlMessage) -> None:
        kind = msg.kind
        if kind == "flow_mod":
            if msg.body.get("op", "add") == "add":
                self.tables.install(msg.body["rule"])
            else:
                self.tables.remove_dynamic(msg.body["cookie"])
        elif kind == "sr_mod":
            entry: SRTableEntry = msg.body["entry"]
            self.sr_table.install(entry)
            for port in entry.ports:
                self.ports[port].set_shaper(entry.pcp, self.sr_table.reserved_on(port))
        elif kind == "packet_out":
            frame = msg.body["frame"]
            if "ports" in msg.body:
                for port in msg.body["ports"]:
                    self.ports[port].enqueue(frame)
            else:
                self.process(frame, msg.body.get("in_port"))
        elif self.agent is not None:
            reply = self.agent.handle(msg, self.kernel.now)
            if reply is not None:
                self.send_control(self.control_port, reply, self.network.controller_mac)


class Host(Device):
    """Endpoint with one port; applications register per-ethertype handlers."""

    def __init__(self, network: "Network", name: str):
        super().__init__(network, name)
        self.handlers: dict[int, Callable[[Frame], None]] = {}
        self.received = 0

    @property
    def port(self) -> EgressPort:
        return self.ports[1]

    def send(self, frame: Frame) -> None:
        self.port.enqueue(frame)

    def receive(self, frame: Frame, port: int) -> None:
        self.kernel.record(self.name, port, "received", frame)
        self.received += 1
        if frame.headers.ethertype == ETH_MGMT and isinstance(frame.body, ControlMessage):
            if frame.headers.dst_mac == self.node.mac and self.agent is not None:
                reply = self.agent.handle(frame.body, self.kernel.now)
                if reply is not None:
                    self.send_control(1, reply, self.network.controller_mac, ETH_MGMT)
            return
        handler = self.handlers.get(frame.headers.ethertype)
        if handler is not None:
            handler(frame)
        elif frame.flow is not None and frame.headers.dst_mac == self.node.mac:
            self.network.note_delivery(frame, self.name)


@dataclass
class Delivery:
    flow: str
    frame_id: int
    created_ns: int
    received_ns: int
    node: str

    @property
    def latency_ns(self) -> int:
        return self.received_ns - self.created_ns


class Network:
    """Kernel, topology and devices wired together through egress ports."""

    def __init__(self, topology: Topology, kernel: Optional[Kernel] = None):
        self.topology = topology
        self.kernel = kernel or Kernel()
        self.devices: dict[str, Device] = {}
        self._ids = itertools.count(1)
        self.deliveries: list[Delivery] = []
        self.controller_mac = 0
        ctrl = topology.controller
        if ctrl is not None:
            self.controller_mac = topology.nodes[ctrl].mac

    def add(self, device: Device) -> Device:
        self.devices[device.name] = device
        return device

    def wire(self) -> None:
        """Create egress ports for every link end between registered devices."""
        topo = self.topology
        for name, device in self.devices.items():
            for port, info in topo.ports[name].items():
                peer = self.devices.get(info.peer)
                if peer is None:
                    continue
                device.ports[port] = EgressPort(
                    self.kernel,
                    name,
                    port,
                    info.link.bandwidth_bps,
                    _deliverer(peer, info.peer_port),
                    latency_ns=info.link.latency_ns,
                )
                if isinstance(device, Switch) and topo.kind(info.peer) == NodeKind.CONTROLLER:
                    device.control_port = port

    def new_frame(
        self,
        headers: HeaderTuple,
        wire_bytes: int,
        payload_bytes: Optional[int] = None,
        flow: Optional[str] = None,
        cf_id: Optional[int] = None,
        body: object = None,
    ) -> Frame:
        if payload_bytes is None:
            payload_bytes = max(0, wire_bytes - 22)
        return Frame(headers, payload_bytes, wire_bytes, next(self._ids), cf_id, flow, self.kernel.now, body)

    def note_delivery(self, frame: Frame, node: str) -> None:
        self.deliveries.append(Delivery(frame.flow, frame.frame_id, frame.created_ns, self.kernel.now, node))

    def host(self, name: str) -> Host:
        device = self.devices[name]
        assert isinstance(device, Host)
        return device

    def switch(self, name: str) -> Switch:
        device = self.devices[name]
        assert isinstance(device, Switch)
        return device


def _deliverer(peer: Device, peer_port: int) -> Callable[[Frame], None]:
    def deliver(frame: Frame) -> None:
        peer.receive(frame, peer_port)

    return deliver


def host_send_scheduled(
    host: Host,
    flow: str,
    dst: str,
    pcp: int,
    offset_ns: int,
    period_ns: int,
    start_ns: int,
    stop_ns: int,
    n_frames: int = 1,
    wire_bytes: int = 1522,
) -> None:
    """Periodic scheduled emission: frame j of each period is released at
    period_start + offset + j * (t_trans + t_ifg)."""
    network = host.network
    kernel = host.kernel
    dst_node = network.topology.nodes[dst]
    step = transmission_ns(wire_bytes, host.port.bandwidth_bps) + host.port.ifg_ns
    headers = HeaderTuple(
        dst_mac=dst_node.mac,
        src_mac=host.node.mac,
        ethertype=ETH_IPV4,
        pcp=pcp,
        src_ip=host.node.ip,
        dst_ip=dst_node.ip,
        ip_proto=17,
        src_port=40000 + pcp,
        dst_port=40000 + pcp,
    )

    def emit() -> None:
        host.send(network.new_frame(headers, wire_bytes, flow=flow))

    first_period = -(-(start_ns - offset_ns) // period_ns)
    t = first_period * period_ns + offset_ns
    while t < stop_ns:
        for j in range(n_frames):
            release = t + j * step
            if start_ns <= release < stop_ns:
                kernel.schedule_at(release, emit)
        t += period_ns
