"""Central controller: ACL-gated flow setup, stream reservation and static boot config."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Optional, Sequence

from .dataplane import (
    ETH_MGMT,
    ETH_SRP,
    ControlMessage,
    Device,
    FilterEntry,
    FlowRule,
    ForwardTo,
    GateControlList,
    Network,
    Pattern,
    SRTableEntry,
    Switch,
    Table,
)
from .netmodel import MATCH_FIELDS, Frame, HeaderTuple, NodeKind, Topology, ip_to_int, mac_to_int

BROADCAST_MAC = 0xFFFF_FFFF_FFFF


# --- ACL ----------------------------------------------------------------------


class Verdict(str, Enum):
    ALLOW = "allow"
    DENY = "deny"


@dataclass(frozen=True)
class AclEntry:
    pattern: Pattern
    verdict: Verdict
    node: Optional[str] = None


@dataclass(frozen=True)
class AclPolicy:
    entries: tuple[AclEntry, ...] = ()
    default: Verdict = Verdict.DENY

    def verdict(self, headers: HeaderTuple, node: Optional[str] = None) -> Verdict:
        for entry in self.entries:
            if entry.node is not None and entry.node != node:
                continue
            if entry.pattern.matches(headers):
                return entry.verdict
        return self.default

    def without(self, verdict: Verdict, **fields: int) -> "AclPolicy":
        drop = Pattern.of(**fields)
        return AclPolicy(tuple(e for e in self.entries if not (e.verdict == verdict and e.pattern == drop)), self.default)


class AclError(ValueError):
    pass


_MAC_FIELDS = {"dst_mac", "src_mac"}
_IP_FIELDS = {"src_ip", "dst_ip"}


def _parse_value(name: str, text: str) -> int:
    if name in _MAC_FIELDS and ":" in text:
        return mac_to_int(text)
    if name in _IP_FIELDS and "." in text:
        return ip_to_int(text)
    return int(text, 0)


def parse_acl(text: str) -> AclPolicy:
    """Lines `allow|deny,field=value[;field=value...]`, footer `default=allow|deny`."""
    entries: list[AclEntry] = []
    default: Optional[Verdict] = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("default="):
            try:
                default = Verdict(line.split("=", 1)[1].strip())
            except ValueError:
                raise AclError(f"line {lineno}: bad default verdict") from None
            continue
        if default is not None:
            raise AclError(f"line {lineno}: entries after the default footer")
        verdict_text, _, spec = line.partition(",")
        try:
            verdict = Verdict(verdict_text.strip())
        except ValueError:
            raise AclError(f"line {lineno}: verdict must be allow or deny") from None
        values: dict[str, int] = {}
        node = None
        for item in filter(None, (s.strip() for s in spec.split(";"))):
            name, eq, value = item.partition("=")
            name = name.strip()
            if not eq:
                raise AclError(f"line {lineno}: expected field=value, got {item!r}")
            if name == "node":
                node = value.strip()
                continue
            if name not in MATCH_FIELDS:
                raise AclError(f"line {lineno}: unknown field {name!r}")
            try:
                values[name] = _parse_value(name, value.strip())
            except ValueError:
                raise AclError(f"line {lineno}: bad value for {name}") from None
        entries.append(AclEntry(Pattern.of(**values), verdict, node))
    if default is None:
        raise AclError("missing default= footer")
    return AclPolicy(tuple(entries), default)


def load_acl(path: str | Path) -> AclPolicy:
    return parse_acl(Path(path).read_text())


def format_acl(policy: AclPolicy) -> str:
    lines = []
    for entry in policy.entries:
        parts = [f"{k}={v:#x}" for k, v in entry.pattern.fields]
        if entry.node:
            parts.append(f"node={entry.node}")
        lines.append(f"{entry.verdict.value}," + ";".join(parts))
    lines.append(f"default={policy.default.value}")
    return "\n".join(lines) + "\n"


# --- global view and reservations ------------------------------------------------


@dataclass
class GlobalView:
    topology: Topology
    host_locations: dict[int, tuple[str, int]] = field(default_factory=dict)
    rules: dict[str, list[FlowRule]] = field(default_factory=dict)
    gcls: dict[tuple[str, int], GateControlList] = field(default_factory=dict)
    reserved: dict[tuple[str, int], int] = field(default_factory=dict)

    @classmethod
    def from_topology(cls, topology: Topology) -> "GlobalView":
        view = cls(topology)
        for host in topology.names(NodeKind.HOST):
            view.host_locations[topology.nodes[host].mac] = topology.access_switch(host)
        for sw in topology.names(NodeKind.SWITCH):
            view.rules[sw] = []
        return view

    def host_by_mac(self, mac: int) -> Optional[str]:
        for node in self.topology.nodes.values():
            if node.kind == NodeKind.HOST and node.mac == mac:
                return node.name
        return None

    def host_by_ip(self, ip: int) -> Optional[str]:
        for node in self.topology.nodes.values():
            if node.kind == NodeKind.HOST and node.ip == ip:
                return node.name
        return None

    def edge_ports(self, switch: str) -> list[int]:
        topo = self.topology
        return [p for p, info in topo.ports[switch].items() if topo.kind(info.peer) == NodeKind.HOST]


class StreamStatus(str, Enum):
    ADVERTISED = "advertised"
    READY = "ready"
    ACTIVE = "active"


@dataclass
class Stream:
    stream_id: int
    talker: str
    bandwidth_bps: int
    headers: HeaderTuple
    listeners: set[str] = field(default_factory=set)
    hops: dict[str, set[int]] = field(default_factory=dict)  # switch -> egress ports
    status: StreamStatus = StreamStatus.ADVERTISED


@dataclass
class ReservationState:
    streams: dict[int, Stream] = field(default_factory=dict)
    refusals: list[tuple[int, str, str]] = field(default_factory=list)


class UnknownStream(KeyError):
    pass


class InsufficientBandwidth(RuntimeError):
    pass


# --- decisions ----------------------------------------------------------------


@dataclass
class Decision:
    install: bool
    rules: list[tuple[str, FlowRule]] = field(default_factory=list)
    reason: str = ""


def handle_packet_in(view: GlobalView, acl: AclPolicy, switch: str, in_port: int, frame: Frame) -> Decision:
    """ACL check, then exact-match rules (in_port and L4 included) on every
    hop of the shortest path to the destination host."""
    headers = frame.headers
    if acl.verdict(headers, switch) != Verdict.ALLOW:
        return Decision(False, reason="denied by ACL")
    if headers.dst_mac == BROADCAST_MAC:
        dst = view.host_by_ip(headers.dst_ip) if headers.dst_ip is not None else None
    else:
        dst = view.host_by_mac(headers.dst_mac)
    if dst is None:
        return Decision(False, reason="unknown destination")
    path = view.topology.shortest_path(switch, dst)
    if path is None:
        return Decision(False, reason="NoPath")
    match = Pattern.exact(headers)
    rules = []
    prev_in = in_port
    for k, sw in enumerate(path[:-1]):
        out = view.topology.port_to(sw, path[k + 1])
        rules.append((sw, FlowRule(match, (ForwardTo(out),), priority=100, in_port=prev_in, table=Table.DYNAMIC)))
        if k + 1 < len(path) - 1:
            prev_in = view.topology.port_to(path[k + 1], sw)
    return Decision(True, rules)


def handle_talker_advertise(
    view: GlobalView, res: ReservationState, switch: str, in_port: int, stream_id: int, talker: str, bandwidth_bps: int, headers: HeaderTuple
) -> list[tuple[str, list[int]]]:
    """Record the stream and return where to flood the advertise (edge ports)."""
    existing = res.streams.get(stream_id)
    if existing is None or existing.talker != talker:
        res.streams[stream_id] = Stream(stream_id, talker, bandwidth_bps, headers)
    flood = []
    for sw in view.topology.names(NodeKind.SWITCH):
        ports = [p for p in view.edge_ports(sw) if not (sw == switch and p == in_port)]
        if ports:
            flood.append((sw, ports))
    return flood


def handle_listener_ready(
    view: GlobalView, res: ReservationState, listener: str, stream_id: int
) -> list[tuple[str, FlowRule, SRTableEntry]]:
    """Admit a listener: per-switch forwarding rule and SR entry along the
    talker-to-listener path. Raises without touching state on refusal."""
    stream = res.streams.get(stream_id)
    if stream is None:
        raise UnknownStream(stream_id)
    topo = view.topology
    path = topo.shortest_path(stream.talker, listener)
    if path is None:
        res.refusals.append((stream_id, listener, "NoPath"))
        raise InsufficientBandwidth(f"stream {stream_id}: no path to {listener}")
    new_hops: dict[str, set[int]] = {sw: set(ports) for sw, ports in stream.hops.items()}
    added: list[tuple[str, int]] = []
    for k, node in enumerate(path[1:-1], 1):
        out = topo.port_to(node, path[k + 1])
        if out not in new_hops.get(node, set()):
            new_hops.setdefault(node, set()).add(out)
            added.append((node, out))
    for sw, port in added:
        capacity = topo.peer(sw, port).link.bandwidth_bps
        if view.reserved.get((sw, port), 0) + stream.bandwidth_bps > capacity:
            reason = f"InsufficientBandwidth at {sw}:{port}"
            res.refusals.append((stream_id, listener, reason))
            raise InsufficientBandwidth(reason)
    for key in added:
        view.reserved[key] = view.reserved.get(key, 0) + stream.bandwidth_bps
    stream.hops = new_hops
    stream.listeners.add(listener)
    stream.status = StreamStatus.ACTIVE
    match = Pattern.exact(stream.headers)
    cookie = f"stream:{stream_id}"
    out = []
    for sw in sorted(new_hops):
        ports = tuple(sorted(new_hops[sw]))
        rule = FlowRule(match, tuple(ForwardTo(p) for p in ports), priority=200, table=Table.DYNAMIC, cookie=cookie)
        entry = SRTableEntry(stream_id, match, stream.bandwidth_bps, frozenset(ports), stream.headers.pcp)
        out.append((sw, rule, entry))
    return out


def install_static_config(
    switches: Iterable[Switch],
    rules: dict[str, Sequence[FlowRule]],
    gcls: dict[tuple[str, int], GateControlList],
    filters: Optional[dict[str, Sequence[FilterEntry]]] = None,
    now_ns: int = 0,
) -> None:
    """Boot-time static configuration; the static tables are sealed afterwards."""
    from .dataplane import StaticMutationAttempt

    switches = list(switches)
    if now_ns != 0 or any(sw.tables.sealed for sw in switches):
        raise StaticMutationAttempt("static configuration is only accepted at boot")
    for sw in switches:
        for rule in rules.get(sw.name, ()):
            sw.tables.install_static(rule)
        for entry in (filters or {}).get(sw.name, ()):
            sw.filters.append(entry)
        sw.tables.seal()
    by_name = {sw.name: sw for sw in switches}
    for (name, port), gcl in gcls.items():
        if name in by_name:
            by_name[name].ports[port].gcl = gcl


# --- controller node ------------------------------------------------------------


class Controller(Device):
    """Controller process reached over dedicated control links."""

    def __init__(self, network: Network, name: str, acl: AclPolicy, processing_ns: int = 0):
        super().__init__(network, name)
        self.view = GlobalView.from_topology(network.topology)
        self.acl = acl
        self.reservations = ReservationState()
        self.processing_ns = processing_ns
        self.coordinator = None  # transaction coordinator, attached by the scenario builder
        self.packet_ins = 0
        self.denied = 0
        self.log: list[tuple[int, str, str]] = []
        self.on_stream_active = None

    def switch_port(self, switch: str) -> int:
        return self.network.topology.port_to(self.name, switch)

    def send_to_switch(self, switch: str, msg: ControlMessage) -> None:
        mac = self.network.topology.nodes[switch].mac
        self.send_control(self.switch_port(switch), msg, mac)

    def send_to_device(self, device: str, msg: ControlMessage) -> None:
        """Switches over their control link; hosts in-band via their access switch."""
        topo = self.network.topology
        if topo.kind(device) == NodeKind.SWITCH:
            self.send_to_switch(device, msg)
            return
        sw, port = topo.access_switch(device)
        headers = HeaderTuple(dst_mac=topo.nodes[device].mac, src_mac=self.node.mac, ethertype=ETH_MGMT, pcp=0)
        inner = self.network.new_frame(headers, 128, body=msg)
        self.send_to_switch(sw, ControlMessage("packet_out", {"frame": inner, "ports": (port,)}, sw))

    def receive(self, frame: Frame, port: int) -> None:
        self.kernel.record(self.name, port, "received", frame)
        msg = frame.body
        if self.processing_ns:
            self.kernel.schedule_in(self.processing_ns, self.dispatch, msg)
        else:
            self.dispatch(msg)

    def dispatch(self, msg: ControlMessage) -> None:
        if msg.kind != "packet_in":
            if self.coordinator is not None:
                self.coordinator.on_message(msg)
            return
        self.packet_ins += 1
        inner: Frame = msg.body["frame"]
        switch, in_port = msg.body["switch"], msg.body["in_port"]
        ethertype = inner.headers.ethertype
        if ethertype == ETH_MGMT:
            if self.coordinator is not None and isinstance(inner.body, ControlMessage):
                self.coordinator.on_message(inner.body)
            return
        if ethertype == ETH_SRP and isinstance(inner.body, ControlMessage):
            self.handle_srp(switch, in_port, inner)
            return
        decision = handle_packet_in(self.view, self.acl, switch, in_port, inner)
        if not decision.install:
            self.denied += 1
            self.log.append((self.kernel.now, "drop", decision.reason))
            return
        for sw, rule in decision.rules:
            self.view.rules.setdefault(sw, []).append(rule)
            self.send_to_switch(sw, ControlMessage("flow_mod", {"op": "add", "rule": rule}, sw))
        self.send_to_switch(switch, ControlMessage("packet_out", {"frame": inner, "in_port": in_port}, switch))

    def handle_srp(self, switch: str, in_port: int, frame: Frame) -> None:
        msg: ControlMessage = frame.body
        body = msg.body
        if msg.kind == "talker_advertise":
            flood = handle_talker_advertise(
                self.view, self.reservations, switch, in_port, body["stream_id"], body["talker"], body["bandwidth_bps"], body["headers"]
            )
            for sw, ports in flood:
                self.send_to_switch(sw, ControlMessage("packet_out", {"frame": frame, "ports": tuple(ports)}, sw))
        elif msg.kind == "listener_ready":
            try:
                installs = handle_listener_ready(self.view, self.reservations, body["listener"], body["stream_id"])
            except (UnknownStream, InsufficientBandwidth) as exc:
                self.log.append((self.kernel.now, "refused", str(exc)))
                return
            for sw, rule, entry in installs:
                self.view.rules.setdefault(sw, []).append(rule)
                self.send_to_switch(sw, ControlMessage("flow_mod", {"op": "del", "cookie": rule.cookie}, sw))
                self.send_to_switch(sw, ControlMessage("flow_mod", {"op": "add", "rule": rule}, sw))
                self.send_to_switch(sw, ControlMessage("sr_mod", {"entry": entry}, sw))
            talker = self.reservations.streams[body["stream_id"]].talker
            sw, port = self.network.topology.access_switch(talker)
            self.send_to_switch(sw, ControlMessage("packet_out", {"frame": frame, "ports": (port,)}, sw))
