"""Control-flow embeddings, network-flow derivation, path classification and
the aggregation bandwidth model for zonal backbones."""

from __future__ import annotations

import csv
import io
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping, Optional, Sequence

from .dataplane import ETH_CF, ETH_IPV4
from .netmodel import (
    MAX_FRAME_BYTES,
    MIN_FRAME_BYTES,
    PREAMBLE_BYTES,
    CommunicationMatrix,
    ControlFlow,
    HeaderTuple,
    backbone_flows,
)


class EmbeddingStrategy(str, Enum):
    EXPOSED_PER_MESSAGE = "message"
    HIDDEN_PER_TOPIC = "topic"
    HIDDEN_PER_DOMAIN = "domain"

    @property
    def hidden(self) -> bool:
        return self is not EmbeddingStrategy.EXPOSED_PER_MESSAGE


STRATEGIES = (
    EmbeddingStrategy.EXPOSED_PER_MESSAGE,
    EmbeddingStrategy.HIDDEN_PER_TOPIC,
    EmbeddingStrategy.HIDDEN_PER_DOMAIN,
)

CF_MAC_BASE = 0x03_00_00_00_00_00  # group + locally administered bits
DOMAIN_IP_BASE = 0xEF_00_00_00  # 239.0.0.0
TOPIC_IP_BASE = 0xEF_01_00_00  # 239.1.0.0
IPV4_MCAST_MAC = 0x01_00_5E_00_00_00
TUNNEL_UDP_PORT = 30490
ZC_MAC_BASE = 0x02_00_00_00_10_00
ZC_IP_BASE = 0x0A_01_00_00  # 10.1.0.0

# fields that take part in forwarding; priority markings only pick a queue
NF_FIELDS = ("dst_mac", "src_mac", "ethertype", "vlan_id", "src_ip", "dst_ip", "ip_proto", "src_port", "dst_port")
SOURCE_FIELDS = ("src_mac", "src_ip")


class AggregationWithExposed(ValueError):
    """Exposed embeddings carry one message per frame and cannot aggregate."""


def zc_mac(matrix: CommunicationMatrix, zc: str) -> int:
    return ZC_MAC_BASE | (matrix.zones.index(zc) + 1)


def zc_ip(matrix: CommunicationMatrix, zc: str) -> int:
    return ZC_IP_BASE | (matrix.zones.index(zc) + 1)


def embed(cf: ControlFlow, strategy: EmbeddingStrategy, matrix: CommunicationMatrix) -> HeaderTuple:
    """Header tuple a zone controller puts on the backbone for one CF."""
    src_mac = zc_mac(matrix, cf.sender_zc)
    if strategy is EmbeddingStrategy.EXPOSED_PER_MESSAGE:
        return HeaderTuple(
            dst_mac=CF_MAC_BASE | cf.cf_id,
            src_mac=src_mac,
            ethertype=ETH_CF,
            vlan_id=matrix.domain_index(cf.domain),
            pcp=cf.priority,
        )
    if strategy is EmbeddingStrategy.HIDDEN_PER_DOMAIN:
        dst_ip = DOMAIN_IP_BASE | matrix.domain_index(cf.domain)
    else:
        dst_ip = TOPIC_IP_BASE | matrix.topic_index(cf.topic)
    dscp = cf.priority << 3
    return HeaderTuple(
        dst_mac=IPV4_MCAST_MAC | (dst_ip & 0x7F_FF_FF),
        src_mac=src_mac,
        ethertype=ETH_IPV4,
        pcp=dscp >> 3,
        src_ip=zc_ip(matrix, cf.sender_zc),
        dst_ip=dst_ip,
        dscp=dscp,
        ip_proto=17,
        src_port=TUNNEL_UDP_PORT,
        dst_port=TUNNEL_UDP_PORT,
    )


def nf_match(headers: HeaderTuple) -> tuple:
    return tuple(getattr(headers, f) for f in NF_FIELDS)


def group_key(match: tuple) -> tuple:
    """The match with the source identity removed: what any ZC would send."""
    return tuple(v for f, v in zip(NF_FIELDS, match) if f not in SOURCE_FIELDS)


@dataclass(frozen=True)
class NetworkFlow:
    match: tuple
    source_zc: str
    dest_zcs: frozenset[str]
    member_cfs: frozenset[int]

    @property
    def key(self) -> tuple:
        return group_key(self.match)

    def headers(self) -> dict[str, int]:
        return {f: v for f, v in zip(NF_FIELDS, self.match) if v is not None}


def derive_network_flows(matrix: CommunicationMatrix, strategy: EmbeddingStrategy) -> list[NetworkFlow]:
    groups: dict[tuple[str, tuple], list[ControlFlow]] = defaultdict(list)
    for cf in backbone_flows(matrix):
        groups[(cf.sender_zc, nf_match(embed(cf, strategy, matrix)))].append(cf)
    nfs = []
    for (zc, match), cfs in groups.items():
        dests = frozenset().union(*(cf.receiver_zcs for cf in cfs)) - {zc}
        nfs.append(NetworkFlow(match, zc, dests, frozenset(cf.cf_id for cf in cfs)))
    return sorted(nfs, key=lambda nf: (nf.source_zc, min(nf.member_cfs)))


@dataclass(frozen=True)
class SeparationMetrics:
    nf_count: int
    nfs_with_multiple: int
    min_cfs: int
    avg_cfs: float
    max_cfs: int
    dest_histogram: dict[int, int]


def separation_metrics(nfs: Sequence[NetworkFlow]) -> SeparationMetrics:
    sizes = [len(nf.member_cfs) for nf in nfs]
    if not sizes:
        return SeparationMetrics(0, 0, 0, 0.0, 0, {})
    hist = Counter(len(nf.dest_zcs) for nf in nfs)
    return SeparationMetrics(
        nf_count=len(nfs),
        nfs_with_multiple=sum(1 for s in sizes if s > 1),
        min_cfs=min(sizes),
        avg_cfs=round(sum(sizes) / len(sizes), 2),
        max_cfs=max(sizes),
        dest_histogram=dict(sorted(hist.items())),
    )


class PathVerdict(str, Enum):
    LEGITIMATE = "legitimate"
    OVERSUPPLIED = "oversupplied"
    PERMITTED = "permitted"
    FORBIDDEN = "forbidden"


@dataclass
class PathClassification:
    strategy: EmbeddingStrategy
    verdicts: dict[tuple[str, str, int], PathVerdict] = field(default_factory=dict)

    def of(self, verdict: PathVerdict) -> set[tuple[str, str, int]]:
        return {k for k, v in self.verdicts.items() if v is verdict}

    def counts(self) -> dict[PathVerdict, int]:
        c = Counter(self.verdicts.values())
        return {v: c.get(v, 0) for v in PathVerdict}


def classify_paths(matrix: CommunicationMatrix, nfs: Sequence[NetworkFlow], strategy: EmbeddingStrategy) -> PathClassification:
    """Verdict for every (source ZC, other ZC, backbone CF)."""
    nf_of_cf = {cf_id: nf for nf in nfs for cf_id in nf.member_cfs}
    reach: dict[tuple[str, tuple], set[str]] = defaultdict(set)
    for nf in nfs:
        reach[(nf.source_zc, nf.key)] |= nf.dest_zcs
    out = PathClassification(strategy)
    for cf in backbone_flows(matrix):
        nf = nf_of_cf[cf.cf_id]
        for src in matrix.zones:
            for dst in matrix.zones:
                if dst == src:
                    continue
                if src == cf.sender_zc:
                    if dst in cf.receiver_zcs:
                        verdict = PathVerdict.LEGITIMATE
                    elif dst in nf.dest_zcs:
                        verdict = PathVerdict.OVERSUPPLIED
                    else:
                        verdict = PathVerdict.FORBIDDEN
                elif dst in reach.get((src, nf.key), ()):
                    verdict = PathVerdict.PERMITTED
                else:
                    verdict = PathVerdict.FORBIDDEN
                out.verdicts[(src, dst, cf.cf_id)] = verdict
    return out


# --- aggregation -----------------------------------------------------------------


@dataclass(frozen=True)
class FrameLayout:
    """Byte counts of the backbone frame layouts."""

    ethernet: int = 14
    vlan_tag: int = 4
    fcs: int = 4
    ipv4: int = 20
    udp: int = 8
    tunnel: int = 8  # service header of the tunnel protocol
    record_id: int = 4
    record_length: int = 1
    preamble: int = PREAMBLE_BYTES
    ifg: int = 12
    min_frame: int = MIN_FRAME_BYTES
    max_frame: int = MAX_FRAME_BYTES

    @property
    def hidden_overhead(self) -> int:
        return self.ethernet + self.vlan_tag + self.ipv4 + self.udp + self.tunnel + self.fcs

    @property
    def exposed_overhead(self) -> int:
        return self.ethernet + self.vlan_tag + self.fcs

    def record(self, payload: int) -> int:
        return self.record_id + self.record_length + payload


@dataclass
class AggregationResult:
    strategy: EmbeddingStrategy
    interval_us: int
    frames: int
    avg_frame_bytes: float
    sent_bw_bps: dict[str, float]
    received_bw_bps: dict[str, float]

    @property
    def total_sent_bps(self) -> float:
        return sum(self.sent_bw_bps.values())

    @property
    def total_received_bps(self) -> float:
        return sum(self.received_bw_bps.values())


def _pack(records: Iterable[int], layout: FrameLayout) -> list[int]:
    """Frame sizes after packing whole records in order."""
    capacity = layout.max_frame - layout.hidden_overhead
    frames: list[int] = []
    used = 0
    for size in records:
        if size > capacity:
            raise ValueError(f"record of {size} bytes exceeds frame capacity")
        if used and used + size > capacity:
            frames.append(used)
            used = 0
        used += size
    if used:
        frames.append(used)
    return [max(layout.min_frame, layout.hidden_overhead + u) for u in frames]


def aggregation_model(
    matrix: CommunicationMatrix,
    interval_us: int,
    strategy: EmbeddingStrategy,
    horizon_us: int = 1_000_000,
    layout: FrameLayout = FrameLayout(),
) -> AggregationResult:
    """Average frame size and per-ZC wire bandwidth of the backbone traffic.

    Messages of each CF are released at k * period within the horizon.  With
    interval_us > 0 a tunnel collects its messages and releases them every
    interval (splitting into several frames when one is full)."""
    if interval_us < 0:
        raise ValueError("interval_us must be >= 0")
    if interval_us and not strategy.hidden:
        raise AggregationWithExposed("exposed embeddings cannot aggregate messages")
    nfs = derive_network_flows(matrix, strategy)
    by_id = {cf.cf_id: cf for cf in matrix.flows}
    sent = {zc: 0 for zc in matrix.zones}
    received = {zc: 0 for zc in matrix.zones}
    frame_count = 0
    frame_bytes = 0
    for nf in nfs:
        members = sorted(nf.member_cfs)
        sizes: list[int] = []
        if not strategy.hidden:
            for cf_id in members:
                cf = by_id[cf_id]
                n = -(-horizon_us // cf.period_us)
                sizes += [max(layout.min_frame, layout.exposed_overhead + cf.payload_bytes)] * n
        elif interval_us == 0:
            for cf_id in members:
                cf = by_id[cf_id]
                n = -(-horizon_us // cf.period_us)
                sizes += _pack([layout.record(cf.payload_bytes)], layout) * n
        else:
            buckets: dict[int, list[tuple[int, int, int]]] = defaultdict(list)
            for cf_id in members:
                cf = by_id[cf_id]
                for t in range(0, horizon_us, cf.period_us):
                    buckets[t // interval_us].append((t, cf_id, layout.record(cf.payload_bytes)))
            for b in sorted(buckets):
                sizes += _pack([r for _, _, r in sorted(buckets[b])], layout)
        wire = sum(s + layout.preamble + layout.ifg for s in sizes)
        frame_count += len(sizes)
        frame_bytes += sum(sizes)
        sent[nf.source_zc] += wire
        for zc in nf.dest_zcs:
            received[zc] += wire
    seconds = horizon_us / 1e6
    return AggregationResult(
        strategy=strategy,
        interval_us=interval_us,
        frames=frame_count,
        avg_frame_bytes=round(frame_bytes / frame_count, 2) if frame_count else 0.0,
        sent_bw_bps={zc: b * 8 / seconds for zc, b in sent.items()},
        received_bw_bps={zc: b * 8 / seconds for zc, b in received.items()},
    )


# --- reports ------------------------------------------------------------------------


def _csv(header: Sequence[str], rows: Iterable[Sequence[object]]) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return out.getvalue()


def separation_report(matrix: CommunicationMatrix, strategies: Sequence[EmbeddingStrategy] = STRATEGIES) -> str:
    rows = []
    for s in strategies:
        m = separation_metrics(derive_network_flows(matrix, s))
        rows.append((s.value, m.nf_count, m.nfs_with_multiple, m.min_cfs, f"{m.avg_cfs:.2f}", m.max_cfs))
    return _csv(("strategy", "nf_count", "nfs_multi", "min_cfs", "avg_cfs", "max_cfs"), rows)


def classification_report(matrix: CommunicationMatrix, strategies: Sequence[EmbeddingStrategy] = STRATEGIES) -> str:
    rows = []
    for s in strategies:
        result = classify_paths(matrix, derive_network_flows(matrix, s), s)
        for (src, dst, cf_id), verdict in sorted(result.verdicts.items()):
            rows.append((s.value, src, dst, cf_id, verdict.value))
    return _csv(("strategy", "src_zc", "dst_zc", "cf_id", "verdict"), rows)


def aggregation_report(results: Sequence[AggregationResult]) -> str:
    rows = [
        (r.strategy.value, r.interval_us, f"{r.avg_frame_bytes:.2f}", f"{r.total_sent_bps:.0f}", f"{r.total_received_bps:.0f}")
        for r in results
    ]
    return _csv(("strategy", "interval_us", "avg_frame_bytes", "sent_bw_bps", "received_bw_bps"), rows)


def aggregation_sweep(
    matrix: CommunicationMatrix, intervals_us: Sequence[int] = (0, 1000, 10000), horizon_us: int = 1_000_000
) -> list[AggregationResult]:
    out = [aggregation_model(matrix, 0, EmbeddingStrategy.EXPOSED_PER_MESSAGE, horizon_us)]
    for s in (EmbeddingStrategy.HIDDEN_PER_TOPIC, EmbeddingStrategy.HIDDEN_PER_DOMAIN):
        out += [aggregation_model(matrix, i, s, horizon_us) for i in intervals_us]
    return out


def bundled_matrix_names() -> list[str]:
    from importlib import resources

    data = resources.files("tssdn") / "data"
    return sorted(p.name for p in data.iterdir() if p.name.startswith("matrix_") and p.name.endswith(".csv"))


def load_bundled_matrix(name: str) -> CommunicationMatrix:
    from importlib import resources

    from .netmodel import parse_comm_matrix_text

    return parse_comm_matrix_text((resources.files("tssdn") / "data" / name).read_text())


def verdict_sets(result: PathClassification) -> Mapping[PathVerdict, set[tuple[str, str, int]]]:
    return {v: result.of(v) for v in PathVerdict}
