"""Stream reservation endpoints and the switch-local (distributed) SRP agent."""

from __future__ import annotations

from typing import Callable, Optional

from .dataplane import (
    ETH_SRP,
    ControlMessage,
    FlowRule,
    ForwardTo,
    Host,
    Pattern,
    SRTableEntry,
    Switch,
    Table,
)
from .netmodel import Frame, HeaderTuple, NodeKind

SRP_MULTICAST = 0x01_80_C2_00_00_0E
SRP_FRAME_BYTES = 128


class SrpEndpoint:
    """Talker and listener roles of one host."""

    def __init__(self, host: Host):
        self.host = host
        self.talking: dict[int, Callable[[int], None]] = {}
        self.listening: set[int] = set()
        self.stream_rates: dict[int, tuple[int, int]] = {}
        host.handlers[ETH_SRP] = self.on_frame

    def advertise(self, stream_id: int, headers: HeaderTuple, bandwidth_bps: int, on_ready: Callable[[int], None]) -> None:
        self.talking[stream_id] = on_ready
        self.stream_rates[stream_id] = (headers.pcp, bandwidth_bps)
        body = {"stream_id": stream_id, "talker": self.host.name, "bandwidth_bps": bandwidth_bps, "headers": headers}
        self._send(SRP_MULTICAST, ControlMessage("talker_advertise", body, self.host.name))

    def _send(self, dst_mac: int, msg: ControlMessage) -> None:
        headers = HeaderTuple(dst_mac=dst_mac, src_mac=self.host.node.mac, ethertype=ETH_SRP, pcp=0)
        self.host.send(self.host.network.new_frame(headers, SRP_FRAME_BYTES, body=msg))

    def on_frame(self, frame: Frame) -> None:
        msg = frame.body
        if not isinstance(msg, ControlMessage):
            return
        sid = msg.body.get("stream_id")
        if msg.kind == "talker_advertise" and sid in self.listening:
            talker = msg.body["talker"]
            body = {"stream_id": sid, "listener": self.host.name, "talker": talker}
            talker_mac = self.host.network.topology.nodes[talker].mac
            self._send(talker_mac, ControlMessage("listener_ready", body, self.host.name))
        elif msg.kind == "listener_ready" and sid in self.talking:
            pcp, bandwidth = self.stream_rates[sid]
            self.host.port.set_shaper(pcp, bandwidth)
            callback = self.talking.pop(sid)
            callback(self.host.kernel.now)


class DistributedSrpAgent:
    """Per-switch SRP handling for plain TSN bridges: flood advertisements,
    reserve on listener-ready and pass the ready back toward the talker."""

    def __init__(self, switch: Switch):
        self.switch = switch
        self.talker_port: dict[int, int] = {}
        self.streams: dict[int, dict] = {}
        self.refused: list[int] = []
        switch.local_agent = self

    def __call__(self, switch: Switch, in_port: Optional[int], frame: Frame) -> None:
        msg = frame.body
        if frame.headers.ethertype != ETH_SRP or not isinstance(msg, ControlMessage):
            switch.kernel.record(switch.name, in_port, "dropped_no_rule", frame, "not SRP")
            return
        topo = switch.network.topology
        delay = switch.forwarding_delay(in_port)
        sid = msg.body["stream_id"]
        if msg.kind == "talker_advertise":
            self.talker_port[sid] = in_port
            self.streams[sid] = dict(msg.body)
            for port, info in topo.ports[switch.name].items():
                if port == in_port or topo.kind(info.peer) == NodeKind.CONTROLLER:
                    continue
                switch.kernel.schedule_in(delay, switch.ports[port].enqueue, frame)
        elif msg.kind == "listener_ready":
            stream = self.streams.get(sid)
            if stream is None:
                return
            capacity = topo.peer(switch.name, in_port).link.bandwidth_bps
            entry = switch.sr_table.entries.get(sid)
            ports = set(entry.ports) if entry else set()
            if in_port not in ports:
                if switch.sr_table.reserved_on(in_port) + stream["bandwidth_bps"] > capacity:
                    self.refused.append(sid)
                    return
                ports.add(in_port)
            headers: HeaderTuple = stream["headers"]
            match = Pattern.exact(headers)
            cookie = f"stream:{sid}"
            switch.tables.remove_dynamic(cookie)
            switch.tables.install(
                FlowRule(match, tuple(ForwardTo(p) for p in sorted(ports)), 200, table=Table.DYNAMIC, cookie=cookie)
            )
            new_entry = SRTableEntry(sid, match, stream["bandwidth_bps"], frozenset(ports), headers.pcp)
            switch.sr_table.install(new_entry)
            for port in ports:
                switch.ports[port].set_shaper(headers.pcp, switch.sr_table.reserved_on(port))
            back = self.talker_port[sid]
            switch.kernel.schedule_in(delay, switch.ports[back].enqueue, frame)
