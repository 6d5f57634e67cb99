"""Invariants over randomized small scenarios: determinism, conservation,
rollback completeness, lock-order safety and guard-band non-overrun."""

import copy
from functools import lru_cache

import yaml
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from tssdn.dataplane import ControlMessage
from tssdn.desim import Kernel
from tssdn.netmodel import Frame
from tssdn.runner import RunConfig, Simulation
from tssdn.scenario import reference_scenario_path, scenario_from_dict
from tssdn.txnsched import ConfigAgent, Ordered, Synchronous, Transaction, TransactionCoordinator
from txn_harness import PERIOD, FakeDevice, Harness, gcl_with_window

SLOW = settings(max_examples=12, deadline=None, suppress_health_check=[HealthCheck.too_slow])


@lru_cache(maxsize=None)
def reference_doc():
    return yaml.safe_load(reference_scenario_path().read_text())


@st.composite
def scenarios(draw):
    """The reference scenario with a random subset of flows, timing and policy."""
    doc = copy.deepcopy(reference_doc())
    keep = draw(st.sets(st.sampled_from(["S1", "S2", "S3"])))
    doc["sync_flows"] = {k: v for k, v in doc["sync_flows"].items() if k in keep}
    for c in doc["configurations"]:
        c["flows"] = {k: v for k, v in c["flows"].items() if k in keep}
        if "S3" not in keep:
            c.pop("ordered_sequence", None)
    if not draw(st.booleans()):
        doc["async_flows"] = {}
    doc["best_effort"] = [
        {**be, "period_us": draw(st.integers(3, 30)) * 100, "max_bytes": draw(st.integers(64, 1522))}
        for be in doc["best_effort"]
        if draw(st.booleans())
    ]
    denied = draw(st.sets(st.sampled_from([5001, 5002, 5003, 5004]), max_size=2))
    doc["controller"]["acl"] = "".join(f"deny,dst_port={p}\n" for p in sorted(denied)) + "default=allow\n"
    doc["t_end_s"] = draw(st.sampled_from([0.05, 0.15, 0.25, 0.35, 0.45]))
    cfg = RunConfig(
        variant=draw(st.sampled_from(["tssdn", "tsn"])),
        update=draw(st.sampled_from(["sync", "ordered", "split"])),
        seed=draw(st.integers(1, 10_000)),
    )
    return doc, cfg


def frames_in(obj):
    """Frames reachable from an event payload, queued frame or control message."""
    if isinstance(obj, Frame):
        yield obj
        yield from frames_in(obj.body)
    elif isinstance(obj, ControlMessage):
        for v in obj.body.values():
            yield from frames_in(v)
    elif isinstance(obj, (tuple, list)):
        for v in obj:
            yield from frames_in(v)


# --- determinism ---------------------------------------------------------------------------


@SLOW
@given(scenarios())
def test_repeated_runs_are_byte_identical(case):
    doc, cfg = case
    runs = [Simulation(scenario_from_dict(copy.deepcopy(doc)), cfg).run() for _ in range(2)]
    assert runs[0].trace.to_csv() == runs[1].trace.to_csv()
    assert runs[0].latency_csv() == runs[1].latency_csv()
    assert runs[0].txn_log == runs[1].txn_log


# --- conservation -------------------------------------------------------------------------------


@SLOW
@given(scenarios())
def test_every_sent_frame_is_accounted_for(case):
    doc, cfg = case
    sim = Simulation(scenario_from_dict(doc), cfg)
    sent = {}
    make = sim.network.new_frame

    def recording(*args, **kwargs):
        frame = make(*args, **kwargs)
        if frame.flow is not None:
            sent[frame.frame_id] = frame
        return frame

    sim.network.new_frame = recording
    result = sim.run()

    delivered = [d.frame_id for d in result.deliveries]
    assert len(delivered) == len(set(delivered)), "a frame was delivered twice"
    dropped = {r.frame_id for r in result.trace.records if r.action.startswith("dropped")}
    queued = {f.frame_id for dev in sim.network.devices.values() for p in dev.ports.values() for q in p.queues for f in frames_in(list(q))}
    pending = {f.frame_id for _, _, ev in sim.kernel._queue if not ev.cancelled for f in frames_in(ev.payload)}
    in_flight = queued | pending
    accounted = set(delivered) | dropped | in_flight
    assert set(delivered) <= set(sent)
    assert not set(delivered) & dropped
    lost = set(sent) - accounted
    denied = sim.controller.denied if sim.controller is not None else 0
    # frames refused by the controller leave the network without a per-frame record
    assert len(lost) == denied


# --- guard band -------------------------------------------------------------------------------------


@SLOW
@given(scenarios())
def test_no_transmission_overruns_its_gate(case):
    doc, cfg = case
    sim = Simulation(scenario_from_dict(doc), RunConfig(cfg.variant, cfg.update, cfg.seed, audit=True))
    sim.run()
    for device in sim.network.devices.values():
        for port in device.ports.values():
            for start, end, pcp, gcl in port.tx_log:
                open_until = gcl.open_until(pcp, start)
                assert open_until is not None and open_until >= end, (device.name, port.port, start, end, pcp)


# --- transactions ----------------------------------------------------------------------------------

DEVICES = ["d0", "d1", "d2", "d3", "d4"]


def transaction(txn_id, devices, ordered, shuffle, start):
    strategy = Ordered(tuple(shuffle)) if ordered else Synchronous()
    t = Transaction(txn_id, [], strategy, devices=list(devices))
    t.candidates = {d: {1: gcl_with_window(start, 150_000)} for d in devices}
    return t


@st.composite
def device_sets(draw):
    devices = draw(st.lists(st.sampled_from(DEVICES), min_size=1, max_size=5, unique=True))
    return devices, draw(st.permutations(devices))


@settings(max_examples=40, deadline=None)
@given(device_sets(), st.booleans(), st.integers(0, 5), st.booleans())
def test_failed_transaction_leaves_no_trace(devs, ordered, victim, held_lock):
    devices, shuffle = devs
    h = Harness(DEVICES)
    before = h.snapshot()
    bad = devices[victim % len(devices)]
    if held_lock:
        h.agents[bad].locked_by = "other"
    else:
        h.agents[bad].reject_next = True
    t = transaction("T", devices, ordered, shuffle, 200_000)
    h.submit(t)
    h.run()
    assert t.outcome != "committed" and bad in t.outcome
    assert h.snapshot() == before
    for name, agent in h.agents.items():
        assert agent.candidate is None
        assert agent.locked_by == ("other" if held_lock and name == bad else None)


class SharedDevices:
    """Several coordinators contending for the same device agents."""

    def __init__(self, n_coordinators, latency_ns=50_000):
        self.kernel = Kernel()
        self.latency = latency_ns
        self.devices = {n: FakeDevice(self.kernel, n) for n in DEVICES}
        self.agents = {n: ConfigAgent(d) for n, d in self.devices.items()}
        self.coords = [TransactionCoordinator(self.kernel, self._sender(i), DEVICES, PERIOD) for i in range(n_coordinators)]
        self.finished = []

    def _sender(self, i):
        def send(device, msg):
            self.kernel.schedule_in(self.latency, self._arrive, i, device, msg)

        return send

    def _arrive(self, i, device, msg):
        reply = self.agents[device].handle(msg, self.kernel.now)
        if reply is not None:
            self.kernel.schedule_in(self.latency, self.coords[i].on_message, reply)


@settings(max_examples=40, deadline=None)
@given(
    st.lists(st.tuples(device_sets(), st.booleans(), st.integers(0, 6)), min_size=2, max_size=4),
)
def test_contending_coordinators_lock_in_global_order(jobs):
    net = SharedDevices(len(jobs))
    txns = []
    for i, ((devices, shuffle), ordered, delay) in enumerate(jobs):
        t = transaction(f"T{i}", devices, ordered, shuffle, 100_000 * (i + 1))
        txns.append(t)
        net.kernel.schedule_at(delay * 25_000, net.coords[i].submit, t, net.finished.append)
    net.kernel.run_until(100 * PERIOD)

    # every transaction terminates, committed or refused
    assert sorted(t.txn_id for t in net.finished) == sorted(t.txn_id for t in txns)
    rank = {d: k for k, d in enumerate(DEVICES)}
    for coord in net.coords:
        for txn_id in {tid for tid, _ in coord.lock_sequence}:
            order = [rank[d] for tid, d in coord.lock_sequence if tid == txn_id]
            assert order == sorted(order)
    assert all(a.locked_by is None and a.candidate is None for a in net.agents.values())
    # the transaction that reaches the lowest contended device first is never refused
    assert any(t.outcome == "committed" for t in txns)
    committed = [t for t in txns if t.outcome == "committed"]
    assert all(t.outcome.startswith("lock refused") for t in txns if t not in committed)
    # each device runs the candidate of a committed transaction that touched it, or is untouched
    for name, device in net.devices.items():
        options = [t.candidates[name][1] for t in committed if name in t.devices]
        assert device.gcls[1] in options if options else device.gcls[1].entries == ((0xFF, PERIOD),)
