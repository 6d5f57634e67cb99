import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tssdn.controller import (
    AclError,
    GlobalView,
    InsufficientBandwidth,
    ReservationState,
    UnknownStream,
    Verdict,
    format_acl,
    handle_listener_ready,
    handle_packet_in,
    handle_talker_advertise,
    parse_acl,
)
from tssdn.dataplane import ETH_ARP, ETH_IPV4, ForwardTo
from tssdn.netmodel import Frame, HeaderTuple, Link, Topology


def tree():
    """sw1 -- sw2 -- sw3, hosts a,b on sw1, c on sw2, d,e on sw3."""
    nodes = [("sw1", "switch"), ("sw2", "switch"), ("sw3", "switch"), ("ctl", "controller")]
    nodes += [(h, "host") for h in "abcde"]
    links = [Link("a", "sw1"), Link("b", "sw1"), Link("sw1", "sw2"), Link("c", "sw2"), Link("sw2", "sw3"), Link("d", "sw3"), Link("e", "sw3")]
    links += [Link("ctl", s, latency_us=50) for s in ("sw1", "sw2", "sw3")]
    return Topology.build(nodes, links)


def udp(topo, src, dst, port=5000):
    s, d = topo.nodes[src], topo.nodes[dst]
    return HeaderTuple(dst_mac=d.mac, src_mac=s.mac, ethertype=ETH_IPV4, src_ip=s.ip, dst_ip=d.ip, ip_proto=17, src_port=port, dst_port=port)


# --- ACL --------------------------------------------------------------------


def test_acl_first_match_decides():
    acl = parse_acl("allow,ethertype=0x0806\ndeny,dst_port=22;ip_proto=6\nallow,ip_proto=6\ndefault=deny\n")
    arp = HeaderTuple(dst_mac=1, src_mac=2, ethertype=ETH_ARP)
    ssh = HeaderTuple(dst_mac=1, src_mac=2, ethertype=ETH_IPV4, src_ip=1, dst_ip=2, ip_proto=6, src_port=4000, dst_port=22)
    web = HeaderTuple(dst_mac=1, src_mac=2, ethertype=ETH_IPV4, src_ip=1, dst_ip=2, ip_proto=6, src_port=4000, dst_port=80)
    udp_frame = HeaderTuple(dst_mac=1, src_mac=2, ethertype=ETH_IPV4, src_ip=1, dst_ip=2, ip_proto=17, src_port=1, dst_port=1)
    assert [acl.verdict(h) for h in (arp, ssh, web, udp_frame)] == [Verdict.ALLOW, Verdict.DENY, Verdict.ALLOW, Verdict.DENY]


def test_acl_addresses_and_node_scope():
    acl = parse_acl("deny,src_ip=10.0.0.1;node=sw1\nallow,src_mac=02:00:00:00:00:01\ndefault=allow")
    h = HeaderTuple(dst_mac=5, src_mac=0x020000000001, ethertype=ETH_IPV4, src_ip=0x0A000001, dst_ip=9)
    assert acl.verdict(h, "sw1") == Verdict.DENY
    assert acl.verdict(h, "sw2") == Verdict.ALLOW


def test_acl_format_round_trip():
    text = "allow,ethertype=0x0806\ndeny,dst_port=22;node=sw2\ndefault=deny\n"
    acl = parse_acl(text)
    assert parse_acl(format_acl(acl)) == acl
    assert acl.without(Verdict.ALLOW, ethertype=ETH_ARP).entries == acl.entries[1:]


@pytest.mark.parametrize(
    "text",
    ["allow,ethertype=0x0806\n", "maybe,pcp=1\ndefault=deny", "allow,colour=3\ndefault=deny", "allow,pcp\ndefault=deny", "default=deny\nallow,pcp=1", "default=perhaps"],
)
def test_acl_errors(text):
    with pytest.raises(AclError):
        parse_acl(text)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 3), st.integers(0, 7)), min_size=1, max_size=30))
def test_acl_verdicts_deterministic(frames):
    acl = parse_acl("deny,pcp=7\nallow,vlan_id=1\ndeny,vlan_id=2;pcp=3\ndefault=allow")
    headers = [HeaderTuple(dst_mac=1, src_mac=2, ethertype=ETH_IPV4, vlan_id=v or None, pcp=p) for v, p in frames]
    first = [acl.verdict(h) for h in headers]
    again = [parse_acl(format_acl(acl)).verdict(h) for h in headers]
    assert first == again


# --- packet-in ------------------------------------------------------------------


def test_packet_in_installs_exact_rules_along_path():
    topo = tree()
    view = GlobalView.from_topology(topo)
    frame = Frame(udp(topo, "a", "e"), 50, 100, 1)
    decision = handle_packet_in(view, parse_acl("default=allow"), "sw1", topo.port_to("sw1", "a"), frame)
    assert decision.install
    assert [sw for sw, _ in decision.rules] == ["sw1", "sw2", "sw3"]
    sw2_rule = decision.rules[1][1]
    assert sw2_rule.in_port == topo.port_to("sw2", "sw1")
    assert sw2_rule.actions == (ForwardTo(topo.port_to("sw2", "sw3")),)
    assert sw2_rule.match.as_dict()["src_port"] == 5000


def test_packet_in_denied_or_unknown():
    topo = tree()
    view = GlobalView.from_topology(topo)
    frame = Frame(udp(topo, "a", "e"), 50, 100, 1)
    assert not handle_packet_in(view, parse_acl("default=deny"), "sw1", 1, frame).install
    stray = Frame(HeaderTuple(dst_mac=0x0200000000FF, src_mac=1, ethertype=ETH_IPV4), 50, 100, 2)
    assert handle_packet_in(view, parse_acl("default=allow"), "sw1", 1, stray).reason == "unknown destination"


# --- reservations -----------------------------------------------------------------


def advertise(view, res, sid, talker, bw):
    topo = view.topology
    sw, port = topo.access_switch(talker)
    return handle_talker_advertise(view, res, sw, port, sid, talker, bw, udp(topo, talker, "e", 7000 + sid))


def test_unknown_stream():
    view = GlobalView.from_topology(tree())
    with pytest.raises(UnknownStream):
        handle_listener_ready(view, ReservationState(), "e", 42)


def test_advertise_floods_edge_ports_except_ingress():
    topo = tree()
    view = GlobalView.from_topology(topo)
    flood = dict(advertise(view, ReservationState(), 1, "a", 10))
    assert flood["sw1"] == [topo.port_to("sw1", "b")]
    assert sorted(flood["sw3"]) == sorted([topo.port_to("sw3", "d"), topo.port_to("sw3", "e")])


def test_refusal_leaves_state_untouched():
    topo = tree()
    view = GlobalView.from_topology(topo)
    res = ReservationState()
    advertise(view, res, 1, "a", 70_000_000)
    advertise(view, res, 2, "b", 40_000_000)
    handle_listener_ready(view, res, "e", 1)
    before = dict(view.reserved)
    with pytest.raises(InsufficientBandwidth):
        handle_listener_ready(view, res, "d", 2)
    assert view.reserved == before
    assert res.streams[2].listeners == set()
    assert res.refusals[-1][:2] == (2, "d")


def test_second_listener_reuses_shared_hops():
    topo = tree()
    view = GlobalView.from_topology(topo)
    res = ReservationState()
    advertise(view, res, 1, "a", 10_000_000)
    handle_listener_ready(view, res, "e", 1)
    installs = handle_listener_ready(view, res, "d", 1)
    sw3 = [rule for sw, rule, _ in installs if sw == "sw3"][0]
    assert {a.port for a in sw3.actions} == {topo.port_to("sw3", "d"), topo.port_to("sw3", "e")}
    assert view.reserved[("sw1", topo.port_to("sw1", "sw2"))] == 10_000_000


@settings(max_examples=40, deadline=None)
@given(
    st.lists(
        st.tuples(st.integers(1, 4), st.sampled_from("abcde"), st.sampled_from("abcde"), st.integers(1, 60).map(lambda x: x * 1_000_000)),
        min_size=1,
        max_size=15,
    )
)
def test_reservation_atomicity_and_admission(ops):
    topo = tree()
    view = GlobalView.from_topology(topo)
    res = ReservationState()
    talkers = {}
    for sid, talker, listener, bw in ops:
        if sid not in talkers:
            talkers[sid] = talker
            advertise(view, res, sid, talker, bw)
        if listener == talkers[sid]:
            continue
        before = (dict(view.reserved), set(res.streams[sid].listeners), {k: set(v) for k, v in res.streams[sid].hops.items()})
        try:
            handle_listener_ready(view, res, listener, sid)
        except InsufficientBandwidth:
            after = (dict(view.reserved), set(res.streams[sid].listeners), {k: set(v) for k, v in res.streams[sid].hops.items()})
            assert after == before
        # every active stream covers the path to each listener
        expected = {}
        for stream in res.streams.values():
            for lst in stream.listeners:
                path = topo.shortest_path(stream.talker, lst)
                for k, node in enumerate(path[1:-1], 1):
                    assert topo.port_to(node, path[k + 1]) in stream.hops[node]
            for sw, ports in stream.hops.items():
                for p in ports:
                    expected[(sw, p)] = expected.get((sw, p), 0) + stream.bandwidth_bps
            if not stream.listeners:
                assert stream.hops == {}
        assert {k: v for k, v in view.reserved.items() if v} == expected
        for (sw, port), bw_used in view.reserved.items():
            assert bw_used <= topo.peer(sw, port).link.bandwidth_bps


# --- controller in the loop ------------------------------------------------------


def test_controller_bypass_after_rules_installed(tssdn_sync):
    """Each best-effort flow reaches the controller once; later frames follow the installed rules."""
    be_ids = {d.frame_id: d.flow for d in tssdn_sync.deliveries if d.flow.startswith("BE:")}
    punted = [r.frame_id for r in tssdn_sync.trace.records if r.action == "to_controller" and r.frame_id in be_ids]
    assert sorted(be_ids[i] for i in punted) == ["BE:S1", "BE:S2", "BE:S3", "BE:S4"]
    per_flow = {}
    for fid, flow in be_ids.items():
        per_flow[flow] = per_flow.get(flow, 0) + 1
    assert all(n > 100 for n in per_flow.values())
