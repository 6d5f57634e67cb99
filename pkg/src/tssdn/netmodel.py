"""Topology, frame, control-flow and communication-matrix types."""

from __future__ import annotations

import csv
import io
import ipaddress
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Optional

PREAMBLE_BYTES = 8
MIN_FRAME_BYTES = 64
MAX_FRAME_BYTES = 1522

MATRIX_HEADER = (
    "cf_id",
    "sender_ecu",
    "sender_zc",
    "receivers",
    "domain",
    "topic",
    "period_us",
    "payload_bytes",
    "priority",
)


def us_to_ns(value: float | int | str) -> int:
    """Convert microseconds to integer nanoseconds (rounded to the nearest ns)."""
    if isinstance(value, int):
        return value * 1000
    return round(float(value) * 1000)


def ns_to_us_text(t_ns: int) -> str:
    """Exact decimal rendering of a nanosecond count in microseconds."""
    sign = "-" if t_ns < 0 else ""
    t_ns = abs(t_ns)
    return f"{sign}{t_ns // 1000}.{t_ns % 1000:03d}"


def mac_to_int(text: str | int) -> int:
    if isinstance(text, int):
        return text
    parts = text.split(":")
    if len(parts) != 6:
        raise ValueError(f"bad MAC address {text!r}")
    return int("".join(p.zfill(2) for p in parts), 16)


def int_to_mac(value: int) -> str:
    raw = f"{value:012x}"
    return ":".join(raw[i : i + 2] for i in range(0, 12, 2))


def ip_to_int(text: str | int) -> int:
    if isinstance(text, int):
        return text
    return int(ipaddress.IPv4Address(text))


def int_to_ip(value: int) -> str:
    return str(ipaddress.IPv4Address(value))


class NodeKind(str, Enum):
    HOST = "host"
    SWITCH = "switch"
    CONTROLLER = "controller"


@dataclass(frozen=True)
class Node:
    name: str
    kind: NodeKind
    index: int

    @property
    def mac(self) -> int:
        # locally administered unicast, derived from the declaration index
        return 0x02_00_00_00_00_00 | (self.index + 1)

    @property
    def ip(self) -> int:
        return ip_to_int("10.0.0.0") | (self.index + 1)


MATCH_FIELDS = (
    "dst_mac",
    "src_mac",
    "ethertype",
    "vlan_id",
    "pcp",
    "src_ip",
    "dst_ip",
    "dscp",
    "ip_proto",
    "src_port",
    "dst_port",
)

_FIELD_BITS = {
    "dst_mac": 48,
    "src_mac": 48,
    "ethertype": 16,
    "vlan_id": 12,
    "pcp": 3,
    "src_ip": 32,
    "dst_ip": 32,
    "dscp": 6,
    "ip_proto": 8,
    "src_port": 16,
    "dst_port": 16,
}


@dataclass(frozen=True)
class HeaderTuple:
    """The matchable L2 to L4 header fields of a frame."""

    dst_mac: int
    src_mac: int
    ethertype: int
    vlan_id: Optional[int] = None
    pcp: int = 0
    src_ip: Optional[int] = None
    dst_ip: Optional[int] = None
    dscp: Optional[int] = None
    ip_proto: Optional[int] = None
    src_port: Optional[int] = None
    dst_port: Optional[int] = None

    def __post_init__(self) -> None:
        for name in MATCH_FIELDS:
            value = getattr(self, name)
            if value is None:
                continue
            if not isinstance(value, int) or value < 0 or value >= (1 << _FIELD_BITS[name]):
                raise ValueError(f"{name}={value!r} out of range")
        has_l3 = self.src_ip is not None or self.dst_ip is not None
        has_l4 = self.src_port is not None or self.dst_port is not None
        if has_l4 and not has_l3:
            raise ValueError("L4 ports require L3 addresses")

    def as_dict(self) -> dict[str, int]:
        return {n: getattr(self, n) for n in MATCH_FIELDS if getattr(self, n) is not None}


@dataclass(eq=False)
class Frame:
    headers: HeaderTuple
    payload_bytes: int
    wire_bytes: int
    frame_id: int
    cf_id: Optional[int] = None
    flow: Optional[str] = None
    created_ns: int = 0
    body: object = None
    preamble_bytes: int = PREAMBLE_BYTES

    def __post_init__(self) -> None:
        if not MIN_FRAME_BYTES <= self.wire_bytes <= MAX_FRAME_BYTES:
            raise ValueError(f"wire_bytes {self.wire_bytes} outside [64, 1522]")

    def tx_ns(self, bandwidth_bps: int) -> int:
        return transmission_ns(self.wire_bytes, bandwidth_bps)


def transmission_ns(wire_bytes: int, bandwidth_bps: int) -> int:
    bits = (wire_bytes + PREAMBLE_BYTES) * 8
    return -((-bits * 1_000_000_000) // bandwidth_bps)


class TopologyError(ValueError):
    pass


@dataclass(frozen=True)
class Link:
    a: str
    b: str
    bandwidth_bps: int = 100_000_000
    forwarding_delay_us: float = 3.0
    latency_us: float = 0.0

    @property
    def forwarding_delay_ns(self) -> int:
        return us_to_ns(self.forwarding_delay_us)

    @property
    def latency_ns(self) -> int:
        return us_to_ns(self.latency_us)


@dataclass(frozen=True)
class PortInfo:
    link: Link
    peer: str
    peer_port: int


class Topology:
    """Nodes plus links; ports are numbered per node from 1 in link order."""

    def __init__(self, nodes: Iterable[Node], links: Iterable[Link]):
        self.nodes: dict[str, Node] = {}
        for node in nodes:
            if node.name in self.nodes:
                raise TopologyError(f"duplicate node {node.name}")
            self.nodes[node.name] = node
        self.links: list[Link] = list(links)
        self.ports: dict[str, dict[int, PortInfo]] = {n: {} for n in self.nodes}
        for link in self.links:
            for end in (link.a, link.b):
                if end not in self.nodes:
                    raise TopologyError(f"link references unknown node {end}")
            pa = len(self.ports[link.a]) + 1
            pb = len(self.ports[link.b]) + 1
            self.ports[link.a][pa] = PortInfo(link, link.b, pb)
            self.ports[link.b][pb] = PortInfo(link, link.a, pa)

    @classmethod
    def build(cls, nodes: Iterable[tuple[str, str]], links: Iterable[Link]) -> "Topology":
        return cls([Node(n, NodeKind(k), i) for i, (n, k) in enumerate(nodes)], links)

    def kind(self, name: str) -> NodeKind:
        return self.nodes[name].kind

    def names(self, kind: NodeKind) -> list[str]:
        return [n.name for n in self.nodes.values() if n.kind == kind]

    @property
    def controller(self) -> Optional[str]:
        found = self.names(NodeKind.CONTROLLER)
        return found[0] if found else None

    def port_to(self, node: str, peer: str) -> int:
        for port, info in self.ports[node].items():
            if info.peer == peer:
                return port
        raise TopologyError(f"{node} has no link to {peer}")

    def peer(self, node: str, port: int) -> PortInfo:
        return self.ports[node][port]

    def neighbors(self, node: str) -> list[str]:
        return sorted({info.peer for info in self.ports[node].values()})

    def access_switch(self, host: str) -> tuple[str, int]:
        """(switch, switch port) a host hangs off."""
        info = next(iter(self.ports[host].values()))
        return info.peer, info.peer_port

    def validate(self) -> None:
        for link in self.links:
            if link.bandwidth_bps <= 0:
                raise TopologyError(f"link {link.a}-{link.b}: bandwidth must be > 0")
            if link.forwarding_delay_us < 0 or link.latency_us < 0:
                raise TopologyError(f"link {link.a}-{link.b}: negative delay")
        for name, node in self.nodes.items():
            if node.kind == NodeKind.HOST and len(self.ports[name]) != 1:
                raise TopologyError(f"host {name} must have exactly one link")
        if self.nodes and len(self._reachable(next(iter(self.nodes)), None)) != len(self.nodes):
            raise TopologyError("topology is not connected")
        ctrl = self.controller
        if ctrl is not None:
            seen = self._reachable(ctrl, {NodeKind.SWITCH, NodeKind.CONTROLLER})
            for sw in self.names(NodeKind.SWITCH):
                if sw not in seen:
                    raise TopologyError(f"controller cannot reach switch {sw}")

    def _reachable(self, start: str, via: Optional[set]) -> set[str]:
        seen = {start}
        todo = deque([start])
        while todo:
            cur = todo.popleft()
            for nxt in self.neighbors(cur):
                if nxt in seen:
                    continue
                if via is not None and self.nodes[nxt].kind not in via:
                    continue
                seen.add(nxt)
                todo.append(nxt)
        return seen

    def shortest_path(self, src: str, dst: str) -> Optional[list[str]]:
        """Fewest-hop data path; only switches may be transit nodes.

        Neighbours are expanded in node-name order so ties resolve the same
        way on every run.
        """
        if src == dst:
            return [src]
        parent: dict[str, Optional[str]] = {src: None}
        todo = deque([src])
        while todo:
            cur = todo.popleft()
            if cur != src and self.nodes[cur].kind != NodeKind.SWITCH:
                continue
            for nxt in self.neighbors(cur):
                if nxt in parent or self.nodes[nxt].kind == NodeKind.CONTROLLER:
                    continue
                parent[nxt] = cur
                if nxt == dst:
                    path = [dst]
                    while parent[path[-1]] is not None:
                        path.append(parent[path[-1]])
                    return path[::-1]
                todo.append(nxt)
        return None


# --- communication matrix -------------------------------------------------


class MatrixError(ValueError):
    pass


class DuplicateId(MatrixError):
    def __init__(self, cf_id: int):
        super().__init__(f"DuplicateId({cf_id})")
        self.cf_id = cf_id


class UnknownZone(MatrixError):
    def __init__(self, zone: str, row: int):
        super().__init__(f"row {row}: unknown zone {zone!r}")
        self.zone = zone
        self.row = row


class MalformedRow(MatrixError):
    def __init__(self, row: int, reason: str):
        super().__init__(f"row {row}: {reason}")
        self.row = row


@dataclass(frozen=True)
class ControlFlow:
    cf_id: int
    sender_ecu: str
    sender_zc: str
    receivers: tuple[tuple[str, str], ...]
    domain: str
    topic: str
    period_us: int
    payload_bytes: int
    priority: int

    def __post_init__(self) -> None:
        if not self.receivers:
            raise ValueError(f"cf {self.cf_id}: receivers must be non-empty")
        if not 0 <= self.priority <= 7:
            raise ValueError(f"cf {self.cf_id}: priority {self.priority} outside 0-7")

    @property
    def receiver_zcs(self) -> frozenset[str]:
        return frozenset(zc for _, zc in self.receivers)

    @property
    def is_local(self) -> bool:
        return self.receiver_zcs <= {self.sender_zc}


@dataclass
class CommunicationMatrix:
    flows: list[ControlFlow]
    zones: list[str]
    domains: list[str] = field(default_factory=list)
    topics: dict[str, str] = field(default_factory=dict)

    def domain_index(self, domain: str) -> int:
        return self.domains.index(domain) + 1

    def topic_index(self, topic: str) -> int:
        return list(self.topics).index(topic) + 1

    def flow(self, cf_id: int) -> ControlFlow:
        for cf in self.flows:
            if cf.cf_id == cf_id:
                return cf
        raise KeyError(cf_id)


def _parse_int(text: str, what: str, row: int) -> int:
    try:
        return int(text.strip())
    except ValueError:
        raise MalformedRow(row, f"{what} is not an integer: {text!r}") from None


def parse_comm_matrix_text(text: str, zones: Optional[Iterable[str]] = None) -> CommunicationMatrix:
    declared = list(zones) if zones is not None else None
    lines = text.splitlines()
    body_start = None
    for idx, line in enumerate(lines):
        stripped = line.strip()
        if not stripped:
            continue
        if stripped.startswith("#"):
            key, _, value = stripped.lstrip("#").partition(":")
            if key.strip() == "zones" and declared is None:
                declared = [z.strip() for z in value.split(";") if z.strip()]
            continue
        if tuple(c.strip() for c in stripped.split(",")) != MATRIX_HEADER:
            raise MalformedRow(idx + 1, "header line does not match the matrix format")
        body_start = idx + 1
        break
    if body_start is None:
        raise MalformedRow(1, "missing header line")

    flows: list[ControlFlow] = []
    seen: set[int] = set()
    zones_seen: list[str] = []
    domains: list[str] = []
    topics: dict[str, str] = {}

    def note_zone(zone: str, row: int) -> None:
        if declared is not None and zone not in declared:
            raise UnknownZone(zone, row)
        if zone not in zones_seen:
            zones_seen.append(zone)

    reader = csv.reader(lines[body_start:])
    for offset, cells in enumerate(reader):
        row = body_start + offset + 1
        if not cells or all(not c.strip() for c in cells):
            continue
        if len(cells) != len(MATRIX_HEADER):
            raise MalformedRow(row, f"expected {len(MATRIX_HEADER)} fields, got {len(cells)}")
        cells = [c.strip() for c in cells]
        cf_id = _parse_int(cells[0], "cf_id", row)
        if cf_id in seen:
            raise DuplicateId(cf_id)
        seen.add(cf_id)
        receivers = []
        for token in cells[3].split(";"):
            token = token.strip()
            if not token:
                continue
            ecu, sep, zc = token.partition("@")
            if not sep or not ecu or not zc:
                raise MalformedRow(row, f"receiver token {token!r} is not ecu@zc")
            note_zone(zc, row)
            receivers.append((ecu, zc))
        if not receivers:
            raise MalformedRow(row, "empty receiver list")
        if not cells[1] or not cells[2]:
            raise MalformedRow(row, "missing sender")
        note_zone(cells[2], row)
        domain, topic = cells[4], cells[5]
        if not domain or not topic:
            raise MalformedRow(row, "missing domain or topic")
        if topics.setdefault(topic, domain) != domain:
            raise MalformedRow(row, f"topic {topic!r} already belongs to domain {topics[topic]!r}")
        if domain not in domains:
            domains.append(domain)
        priority = _parse_int(cells[8], "priority", row)
        if not 0 <= priority <= 7:
            raise MalformedRow(row, f"priority {priority} outside 0-7")
        flows.append(
            ControlFlow(
                cf_id=cf_id,
                sender_ecu=cells[1],
                sender_zc=cells[2],
                receivers=tuple(receivers),
                domain=domain,
                topic=topic,
                period_us=_parse_int(cells[6], "period_us", row),
                payload_bytes=_parse_int(cells[7], "payload_bytes", row),
                priority=priority,
            )
        )
    return CommunicationMatrix(
        flows=flows,
        zones=declared if declared is not None else zones_seen,
        domains=domains,
        topics=topics,
    )


def parse_comm_matrix(path: str | Path, zones: Optional[Iterable[str]] = None) -> CommunicationMatrix:
    return parse_comm_matrix_text(Path(path).read_text(), zones)


def serialize_comm_matrix(matrix: CommunicationMatrix) -> str:
    out = io.StringIO()
    out.write("# zones: " + ";".join(matrix.zones) + "\n")
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(MATRIX_HEADER)
    for cf in matrix.flows:
        writer.writerow(
            [
                cf.cf_id,
                cf.sender_ecu,
                cf.sender_zc,
                ";".join(f"{e}@{z}" for e, z in cf.receivers),
                cf.domain,
                cf.topic,
                cf.period_us,
                cf.payload_bytes,
                cf.priority,
            ]
        )
    return out.getvalue()


def backbone_flows(matrix: CommunicationMatrix) -> list[ControlFlow]:
    """Flows with at least one receiver outside the sender's zone, by cf_id."""
    return sorted((cf for cf in matrix.flows if not cf.is_local), key=lambda cf: cf.cf_id)
