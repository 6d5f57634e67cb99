"""Scan, flood and replay attacks launched from a compromised node, against a
conventional learning-bridge backbone and against the SDN-controlled one."""

from __future__ import annotations

import csv
import io
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Any, Optional, Sequence, Union

import yaml

from .controller import BROADCAST_MAC, AclPolicy, Controller, Verdict, parse_acl
from .dataplane import (
    ETH_ARP,
    ETH_CF,
    ETH_IPV4,
    FlowRule,
    ForwardTo,
    Host,
    Network,
    Pattern,
    Switch,
    Table,
    ToController,
)
from .desim import Kernel, rng
from .netmodel import (
    MIN_FRAME_BYTES,
    CommunicationMatrix,
    Frame,
    HeaderTuple,
    NodeKind,
    Topology,
    backbone_flows,
    int_to_ip,
    int_to_mac,
    ip_to_int,
    mac_to_int,
    parse_comm_matrix_text,
)
from .scenario import ScenarioError, topology_from_dict
from .secsep import EmbeddingStrategy, FrameLayout, derive_network_flows, embed

TCP, UDP = 6, 17
GROUP_BIT = 1 << 40
SPACING_NS = 100_000  # between attacker frames


class AccessControl(str, Enum):
    OFF = "off"
    ON = "on"


class MulticastPolicy(str, Enum):
    DROP_UNKNOWN = "drop"
    BROADCAST_UNKNOWN = "broadcast"


class MalformedTrace(ValueError):
    def __init__(self, row: int, reason: str):
        super().__init__(f"trace row {row}: {reason}")
        self.row = row


# --- fixture ------------------------------------------------------------------------


@dataclass
class AttackFixture:
    name: str
    topology: Topology
    attacker: str
    target: str
    tcp_ports: tuple[int, ...]
    udp_ports: tuple[int, ...]
    candidate_ports: tuple[int, ...]
    unused_addresses: tuple[int, ...]
    legit: dict[str, Any]
    acl: AclPolicy
    matrix: CommunicationMatrix
    recorded_at: str
    replay_horizon_us: int

    @property
    def hosts(self) -> list[str]:
        """Every host except the attacker."""
        return [h for h in self.topology.names(NodeKind.HOST) if h != self.attacker]

    @property
    def zone_controllers(self) -> list[str]:
        return list(self.matrix.zones)

    def acl_without_arp(self) -> AclPolicy:
        return self.acl.without(Verdict.ALLOW, ethertype=ETH_ARP)


def load_fixture(path: Union[str, Path, None] = None) -> AttackFixture:
    if path is None:
        base = resources.files("tssdn") / "data"
        text = (base / "attack_fixture.yaml").read_text()
        read = lambda name: (base / name).read_text()  # noqa: E731
    else:
        path = Path(path)
        text = path.read_text()
        read = lambda name: (path.parent / name).read_text()  # noqa: E731
    try:
        doc = yaml.safe_load(text)
        topology = topology_from_dict(doc["topology"])
        services = doc.get("services") or {}
        fixture = AttackFixture(
            name=str(doc.get("name", "attack")),
            topology=topology,
            attacker=str(doc["attacker"]),
            target=str(doc["target"]),
            tcp_ports=tuple(int(p) for p in services.get("tcp", ())),
            udp_ports=tuple(int(p) for p in services.get("udp", ())),
            candidate_ports=tuple(int(p) for p in doc.get("candidate_ports", ())),
            unused_addresses=tuple(ip_to_int(a) for a in doc.get("unused_addresses", ())),
            legit=dict(doc.get("legit_connection") or {}),
            acl=parse_acl(doc.get("acl", "default=deny")),
            matrix=parse_comm_matrix_text(read(doc["matrix"])),
            recorded_at=str(doc.get("recorded_at", "")),
            replay_horizon_us=int(doc.get("replay_horizon_us", 1_000_000)),
        )
    except (KeyError, TypeError, ValueError, yaml.YAMLError) as exc:
        raise ScenarioError(f"attack fixture: {exc}") from None
    for name in (fixture.attacker, fixture.target, *fixture.zone_controllers):
        if topology.nodes.get(name) is None or topology.kind(name) != NodeKind.HOST:
            raise ScenarioError(f"attack fixture: {name!r} is not a host of the topology")
    return fixture


# --- replay traces ---------------------------------------------------------------------

TRACE_COLUMNS = ("rel_t_us", "dst_mac", "src_mac", "ethertype", "vlan", "pcp", "src_ip", "dst_ip", "src_port", "dst_port", "wire_bytes")


@dataclass(frozen=True)
class TraceFrame:
    rel_t_ns: int
    headers: HeaderTuple
    wire_bytes: int


def record_trace(
    matrix: CommunicationMatrix,
    strategy: EmbeddingStrategy,
    zone: str,
    horizon_us: int = 1_000_000,
    layout: FrameLayout = FrameLayout(),
) -> list[TraceFrame]:
    """Frames a zone controller sends onto the backbone, one per message."""
    frames = []
    for cf in backbone_flows(matrix):
        if cf.sender_zc != zone:
            continue
        headers = embed(cf, strategy, matrix)
        if strategy.hidden:
            size = layout.hidden_overhead + layout.record(cf.payload_bytes)
        else:
            size = layout.exposed_overhead + cf.payload_bytes
        size = max(MIN_FRAME_BYTES, size)
        for t in range(0, horizon_us, cf.period_us):
            frames.append((t, cf.cf_id, TraceFrame(t * 1000, headers, size)))
    return [f for _, _, f in sorted(frames, key=lambda x: (x[0], x[1]))]


def _opt(value: Optional[int], fmt) -> str:
    return "" if value is None else fmt(value)


def trace_to_csv(trace: Sequence[TraceFrame]) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(TRACE_COLUMNS)
    for f in trace:
        h = f.headers
        writer.writerow(
            (
                f"{f.rel_t_ns / 1000:g}",
                int_to_mac(h.dst_mac),
                int_to_mac(h.src_mac),
                f"0x{h.ethertype:04x}",
                _opt(h.vlan_id, str),
                h.pcp,
                _opt(h.src_ip, int_to_ip),
                _opt(h.dst_ip, int_to_ip),
                _opt(h.src_port, str),
                _opt(h.dst_port, str),
                f.wire_bytes,
            )
        )
    return out.getvalue()


def parse_trace(text: str) -> list[TraceFrame]:
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header is None or tuple(c.strip() for c in header) != TRACE_COLUMNS:
        raise MalformedTrace(1, "header does not match " + ",".join(TRACE_COLUMNS))
    frames = []
    for row, cells in enumerate(reader, 2):
        if not cells:
            continue
        if len(cells) != len(TRACE_COLUMNS):
            raise MalformedTrace(row, f"expected {len(TRACE_COLUMNS)} fields, got {len(cells)}")
        c = dict(zip(TRACE_COLUMNS, (x.strip() for x in cells)))
        try:
            has_ip = bool(c["src_ip"] or c["dst_ip"])
            has_ports = bool(c["src_port"] or c["dst_port"])
            pcp = int(c["pcp"])
            headers = HeaderTuple(
                dst_mac=mac_to_int(c["dst_mac"]),
                src_mac=mac_to_int(c["src_mac"]),
                ethertype=int(c["ethertype"], 0),
                vlan_id=int(c["vlan"]) if c["vlan"] else None,
                pcp=pcp,
                src_ip=ip_to_int(c["src_ip"]) if c["src_ip"] else None,
                dst_ip=ip_to_int(c["dst_ip"]) if c["dst_ip"] else None,
                dscp=pcp << 3 if has_ip else None,
                ip_proto=UDP if has_ports else None,
                src_port=int(c["src_port"]) if c["src_port"] else None,
                dst_port=int(c["dst_port"]) if c["dst_port"] else None,
            )
            rel = round(float(c["rel_t_us"]) * 1000)
            frame = TraceFrame(rel, headers, int(c["wire_bytes"]))
        except ValueError as exc:
            raise MalformedTrace(row, str(exc)) from None
        if rel < 0:
            raise MalformedTrace(row, "negative timestamp")
        frames.append(frame)
    return frames


# --- attack kinds and reports ------------------------------------------------------------


@dataclass(frozen=True)
class HostScan:
    pass


@dataclass(frozen=True)
class PortScan:
    target: Optional[str] = None
    src_port: Optional[int] = None  # None: a fresh source port per probe


@dataclass(frozen=True)
class SynFlood:
    target: Optional[str] = None
    count: int = 1000
    port: Optional[int] = None


@dataclass(frozen=True)
class Replay:
    trace: tuple[TraceFrame, ...]
    embedding: EmbeddingStrategy
    source: Optional[str] = None  # node the frames are injected at; default the attacker


AttackKind = Union[HostScan, PortScan, SynFlood, Replay]


@dataclass(frozen=True)
class AttackScenario:
    fixture: AttackFixture
    kind: AttackKind
    access_control: AccessControl = AccessControl.OFF
    multicast_policy: MulticastPolicy = MulticastPolicy.DROP_UNKNOWN
    acl: Optional[AclPolicy] = None  # None: the fixture's ACL
    attacker: Optional[str] = None

    @property
    def attacker_node(self) -> str:
        return self.attacker or self.fixture.attacker


@dataclass
class AttackReport:
    attack: str
    access_control: AccessControl
    multicast_policy: MulticastPolicy
    sent: int = 0
    hosts_discovered: list[str] = field(default_factory=list)
    ports_discovered: list[tuple[str, int]] = field(default_factory=list)
    delivered: dict[str, int] = field(default_factory=dict)
    controller_packet_ins: int = 0
    controller_denied: int = 0

    @property
    def tcp_ports(self) -> list[int]:
        return [p for proto, p in self.ports_discovered if proto == "tcp"]

    @property
    def udp_ports(self) -> list[int]:
        return [p for proto, p in self.ports_discovered if proto == "udp"]

    def rows(self) -> list[tuple[str, str, str, str, int]]:
        head = (self.attack, self.access_control.value, self.multicast_policy.value)
        rows = [head + ("sent", self.sent)]
        if self.attack == "host_scan":
            rows.append(head + ("hosts_discovered", len(self.hosts_discovered)))
        if self.attack == "port_scan":
            rows.append(head + ("tcp_ports_discovered", len(self.tcp_ports)))
            rows.append(head + ("udp_ports_discovered", len(self.udp_ports)))
        for node, n in sorted(self.delivered.items()):
            rows.append(head + (f"delivered:{node}", n))
        rows.append(head + ("controller_packet_ins", self.controller_packet_ins))
        return rows


def reports_csv(reports: Sequence[AttackReport]) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(("attack", "access_control", "multicast_policy", "metric", "value"))
    for r in reports:
        writer.writerows(r.rows())
    return out.getvalue()


# --- conventional bridge -------------------------------------------------------------------


class LearningBridge(Switch):
    """MAC-learning bridge with per-switch multicast group registration."""

    def __init__(self, network: Network, name: str, policy: MulticastPolicy):
        super().__init__(network, name)
        self.policy = policy
        self.mac_table: dict[int, int] = {}
        self.members: dict[int, set[int]] = {}  # group -> local member ports
        self.trunks: dict[int, set[int]] = {}  # group -> ports toward switches that registered it

    def flood_ports(self, in_port: Optional[int]) -> list[int]:
        return [p for p in sorted(self.ports) if p != in_port and p != self.control_port]

    def process(self, frame: Frame, in_port: int) -> None:
        h = frame.headers
        self.mac_table[h.src_mac] = in_port
        if h.dst_mac == BROADCAST_MAC:
            out = self.flood_ports(in_port)
        elif h.dst_mac & GROUP_BIT:
            if h.dst_mac in self.members:
                out = sorted((self.members[h.dst_mac] | self.trunks.get(h.dst_mac, set())) - {in_port})
            elif self.policy is MulticastPolicy.BROADCAST_UNKNOWN:
                out = self.flood_ports(in_port)
            else:
                self.kernel.record(self.name, in_port, "dropped_no_rule", frame, "unregistered group")
                return
        elif h.dst_mac in self.mac_table:
            out = [self.mac_table[h.dst_mac]]
        else:
            out = self.flood_ports(in_port)
        self.apply_actions(frame, in_port, tuple(ForwardTo(p) for p in out))


def group_members(matrix: CommunicationMatrix, strategy: EmbeddingStrategy) -> dict[int, set[str]]:
    """Multicast group MAC -> zone controllers that joined it.  Exposed groups are
    joined by the receiving zones; tunnel groups by every zone controller."""
    groups: dict[int, set[str]] = {}
    for cf in backbone_flows(matrix):
        mac = embed(cf, strategy, matrix).dst_mac
        zones = cf.receiver_zcs if not strategy.hidden else set(matrix.zones)
        groups.setdefault(mac, set()).update(zones)
    return groups


def register_groups(topology: Topology, bridges: dict[str, LearningBridge], groups: dict[int, set[str]]) -> None:
    for group, hosts in groups.items():
        registered: dict[str, set[int]] = {}
        for host in hosts:
            sw, port = topology.access_switch(host)
            registered.setdefault(sw, set()).add(port)
        for sw, ports in registered.items():
            bridge = bridges[sw]
            bridge.members[group] = set(ports)
            for other in registered:
                if other != sw:
                    path = topology.shortest_path(sw, other)
                    bridge.trunks.setdefault(group, set()).add(topology.port_to(sw, path[1]))


# --- SDN backbone rules ----------------------------------------------------------------------


def nf_rules(topology: Topology, matrix: CommunicationMatrix, strategy: EmbeddingStrategy) -> dict[str, list[FlowRule]]:
    """Static per-NF rules bound to the ingress port on the legitimate path."""
    rules: dict[str, list[FlowRule]] = {}
    for nf in derive_network_flows(matrix, strategy):
        hops: dict[str, tuple[int, set[int]]] = {}
        for dst in sorted(nf.dest_zcs):
            path = topology.shortest_path(nf.source_zc, dst)
            for k in range(1, len(path) - 1):
                sw = path[k]
                in_port = topology.port_to(sw, path[k - 1])
                out = topology.port_to(sw, path[k + 1])
                hops.setdefault(sw, (in_port, set()))[1].add(out)
        match = Pattern.of(**nf.headers())
        for sw, (in_port, outs) in hops.items():
            actions = tuple(ForwardTo(p) for p in sorted(outs))
            rules.setdefault(sw, []).append(FlowRule(match, actions, 300, in_port=in_port, table=Table.STATIC, cookie="nf"))
    return rules


def legit_rules(topology: Topology, legit: dict[str, Any]) -> dict[str, list[FlowRule]]:
    """Exact rules in both directions for the fixture's legitimate connection."""
    if not legit:
        return {}
    proto = TCP if legit.get("proto", "tcp") == "tcp" else UDP
    a, b = topology.nodes[legit["client"]], topology.nodes[legit["server"]]
    fwd = HeaderTuple(b.mac, a.mac, ETH_IPV4, src_ip=a.ip, dst_ip=b.ip, ip_proto=proto, src_port=legit["client_port"], dst_port=legit["server_port"])
    rev = HeaderTuple(a.mac, b.mac, ETH_IPV4, src_ip=b.ip, dst_ip=a.ip, ip_proto=proto, src_port=legit["server_port"], dst_port=legit["client_port"])
    rules: dict[str, list[FlowRule]] = {}
    for src, dst, headers in ((a.name, b.name, fwd), (b.name, a.name, rev)):
        path = topology.shortest_path(src, dst)
        for k in range(1, len(path) - 1):
            sw = path[k]
            rule = FlowRule(
                Pattern.exact(headers),
                (ForwardTo(topology.port_to(sw, path[k + 1])),),
                200,
                in_port=topology.port_to(sw, path[k - 1]),
                table=Table.STATIC,
                cookie="legit",
            )
            rules.setdefault(sw, []).append(rule)
    return rules


# --- host behaviour ----------------------------------------------------------------------------


class HostStack:
    """ARP responder, listening services and reception counters of one host."""

    def __init__(self, host: Host, tcp: Sequence[int] = (), udp: Sequence[int] = ()):
        self.host = host
        self.tcp = set(tcp)
        self.udp = set(udp)
        self.counts: Counter[str] = Counter()
        self.arp_replies: list[int] = []
        self.open_ports: set[tuple[str, int]] = set()
        host.handlers[ETH_ARP] = self.on_arp
        host.handlers[ETH_IPV4] = self.on_ip
        host.handlers[ETH_CF] = self.on_other

    def _send(self, headers: HeaderTuple, body: str, flow: str) -> None:
        self.host.send(self.host.network.new_frame(headers, MIN_FRAME_BYTES, flow=flow, body=body))

    def on_arp(self, frame: Frame) -> None:
        h, me = frame.headers, self.host.node
        self.counts[frame.flow or "arp"] += 1
        if frame.body == "request" and h.dst_ip == me.ip:
            reply = HeaderTuple(h.src_mac, me.mac, ETH_ARP, src_ip=me.ip, dst_ip=h.src_ip)
            self._send(reply, "reply", "arp")
        elif frame.body == "reply" and h.dst_mac == me.mac:
            self.arp_replies.append(h.src_ip)

    def on_ip(self, frame: Frame) -> None:
        h, me = frame.headers, self.host.node
        self.counts[frame.flow or "ip"] += 1
        if h.dst_mac != me.mac and not h.dst_mac & GROUP_BIT:
            return
        if frame.body == "syn" and h.ip_proto == TCP and h.dst_port in self.tcp:
            reply = HeaderTuple(h.src_mac, me.mac, ETH_IPV4, src_ip=me.ip, dst_ip=h.src_ip, ip_proto=TCP, src_port=h.dst_port, dst_port=h.src_port)
            self._send(reply, "syn-ack", "reply")
        elif frame.body == "probe" and h.ip_proto == UDP and h.dst_port in self.udp:
            reply = HeaderTuple(h.src_mac, me.mac, ETH_IPV4, src_ip=me.ip, dst_ip=h.src_ip, ip_proto=UDP, src_port=h.dst_port, dst_port=h.src_port)
            self._send(reply, "udp-reply", "reply")
        elif frame.body == "syn-ack":
            self.open_ports.add(("tcp", h.src_port))
        elif frame.body == "udp-reply":
            self.open_ports.add(("udp", h.src_port))

    def on_other(self, frame: Frame) -> None:
        self.counts[frame.flow or "other"] += 1


# --- harness -----------------------------------------------------------------------------------


@dataclass
class AttackNetwork:
    kernel: Kernel
    network: Network
    stacks: dict[str, HostStack]
    controller: Optional[Controller]


def build_network(scenario: AttackScenario, embedding: EmbeddingStrategy) -> AttackNetwork:
    fx = scenario.fixture
    topo = fx.topology
    kernel = Kernel()
    net = Network(topo, kernel)
    controller = None
    on = scenario.access_control is AccessControl.ON
    bridges: dict[str, LearningBridge] = {}
    for name in topo.names(NodeKind.SWITCH):
        if on:
            net.add(Switch(net, name))
        else:
            bridges[name] = LearningBridge(net, name, scenario.multicast_policy)
            net.add(bridges[name])
    stacks = {}
    for name in topo.names(NodeKind.HOST):
        host = Host(net, name)
        net.add(host)
        if name == fx.target:
            stacks[name] = HostStack(host, fx.tcp_ports, fx.udp_ports)
        else:
            stacks[name] = HostStack(host)
    if on and topo.controller is not None:
        controller = Controller(net, topo.controller, scenario.acl or fx.acl)
        net.add(controller)
    net.wire()
    if on:
        rules = nf_rules(topo, fx.matrix, embedding)
        for sw, extra in legit_rules(topo, fx.legit).items():
            rules.setdefault(sw, []).extend(extra)
        for name in topo.names(NodeKind.SWITCH):
            sw = net.switch(name)
            for rule in rules.get(name, ()):
                sw.tables.install_static(rule)
            sw.tables.seal()
            sw.tables.install(FlowRule(Pattern(), (ToController(),), 0, table=Table.DYNAMIC, cookie="table-miss"))
    else:
        register_groups(topo, bridges, group_members(fx.matrix, embedding))
    return AttackNetwork(kernel, net, stacks, controller)


def _attack_name(kind: AttackKind) -> str:
    return {HostScan: "host_scan", PortScan: "port_scan", SynFlood: "syn_flood", Replay: "replay"}[type(kind)]


def run_attack(scenario: AttackScenario, seed: int = 1) -> AttackReport:
    fx, kind = scenario.fixture, scenario.kind
    embedding = kind.embedding if isinstance(kind, Replay) else EmbeddingStrategy.HIDDEN_PER_DOMAIN
    built = build_network(scenario, embedding)
    kernel, net = built.kernel, built.network
    attacker_name = kind.source if isinstance(kind, Replay) and kind.source else scenario.attacker_node
    attacker = net.host(attacker_name)
    me = attacker.node
    draw = rng(seed, f"attack/{_attack_name(kind)}")
    label = _attack_name(kind)
    sent = 0

    def emit_at(t_ns: int, headers: HeaderTuple, wire: int, body: str) -> None:
        def go() -> None:
            attacker.send(net.new_frame(headers, wire, flow=label, body=body))

        kernel.schedule_at(t_ns, go)

    t = 0
    if isinstance(kind, HostScan):
        targets = [fx.topology.nodes[h].ip for h in fx.topology.names(NodeKind.HOST) if h != attacker_name]
        for ip in sorted(targets + list(fx.unused_addresses)):
            emit_at(t, HeaderTuple(BROADCAST_MAC, me.mac, ETH_ARP, src_ip=me.ip, dst_ip=ip), MIN_FRAME_BYTES, "request")
            t += SPACING_NS
            sent += 1
    elif isinstance(kind, PortScan):
        target = fx.topology.nodes[kind.target or fx.target]
        for port in fx.candidate_ports:
            for proto, body in ((TCP, "syn"), (UDP, "probe")):
                src_port = kind.src_port if kind.src_port is not None else draw.randrange(32768, 61000)
                h = HeaderTuple(target.mac, me.mac, ETH_IPV4, src_ip=me.ip, dst_ip=target.ip, ip_proto=proto, src_port=src_port, dst_port=port)
                emit_at(t, h, MIN_FRAME_BYTES, body)
                t += SPACING_NS
                sent += 1
    elif isinstance(kind, SynFlood):
        target = fx.topology.nodes[kind.target or fx.target]
        port = kind.port if kind.port is not None else (fx.tcp_ports[0] if fx.tcp_ports else 80)
        for i in range(kind.count):
            src_ip = ip_to_int("172.16.0.0") + i + 1
            h = HeaderTuple(target.mac, me.mac, ETH_IPV4, src_ip=src_ip, dst_ip=target.ip, ip_proto=TCP, src_port=1024 + i, dst_port=port)
            emit_at(t, h, MIN_FRAME_BYTES, "syn")
            t += SPACING_NS // 10
            sent += 1
    else:
        for f in kind.trace:
            emit_at(f.rel_t_ns, f.headers, f.wire_bytes, "replay")
            t = max(t, f.rel_t_ns)
            sent += 1
    kernel.run_until(t + 100_000_000)

    report = AttackReport(label, scenario.access_control, scenario.multicast_policy, sent=sent)
    stack = built.stacks[attacker_name]
    by_ip = {n.ip: n.name for n in fx.topology.nodes.values()}
    report.hosts_discovered = sorted({by_ip[ip] for ip in stack.arp_replies if ip in by_ip})
    report.ports_discovered = sorted(stack.open_ports)
    report.delivered = {
        name: s.counts.get(label, 0) for name, s in built.stacks.items() if name != attacker_name
    }
    if built.controller is not None:
        report.controller_packet_ins = built.controller.packet_ins
        report.controller_denied = built.controller.denied
    return report


def replay_trace(fixture: AttackFixture, embedding: EmbeddingStrategy) -> tuple[TraceFrame, ...]:
    return tuple(record_trace(fixture.matrix, embedding, fixture.recorded_at, fixture.replay_horizon_us))


def scan_and_flood_suite(fixture: AttackFixture, syn_count: int = 1000) -> list[AttackReport]:
    """Host scan, port scan and SYN flood with access control off and on."""
    off, on = AccessControl.OFF, AccessControl.ON
    return [
        run_attack(AttackScenario(fixture, HostScan(), off)),
        run_attack(AttackScenario(fixture, HostScan(), on)),
        run_attack(AttackScenario(fixture, HostScan(), on, acl=fixture.acl_without_arp())),
        run_attack(AttackScenario(fixture, PortScan(), off)),
        run_attack(AttackScenario(fixture, PortScan(), on)),
        run_attack(AttackScenario(fixture, SynFlood(count=syn_count), off)),
        run_attack(AttackScenario(fixture, SynFlood(count=syn_count), on)),
    ]


def replay_suite(fixture: AttackFixture) -> list[AttackReport]:
    """Replay of the recorded zone traffic under every embedding and policy."""
    out = []
    for embedding in (EmbeddingStrategy.HIDDEN_PER_DOMAIN, EmbeddingStrategy.EXPOSED_PER_MESSAGE):
        trace = replay_trace(fixture, embedding)
        for policy in MulticastPolicy:
            out.append(run_attack(AttackScenario(fixture, Replay(trace, embedding), AccessControl.OFF, policy)))
        out.append(run_attack(AttackScenario(fixture, Replay(trace, embedding), AccessControl.ON)))
    return out
