import pytest

from conftest import reference
from tssdn.dataplane import ControlMessage
from tssdn.desim import Kernel
from tssdn.runner import interval_plans
from tssdn.txnsched import (
    ConfigAgent,
    OpKind,
    Ordered,
    Phase,
    Synchronous,
    Transaction,
    Unrealizable,
    commit_order,
    merge_orders,
    plan_update,
    split_transaction,
)
from txn_harness import PERIOD, FakeDevice, Harness, gcl_with_window


def plans():
    return {name: plan for name, plan, _ in interval_plans(reference(), "tssdn")}


def txn(txn_id, devices, strategy, candidates=None, not_before=0):
    t = Transaction(txn_id, [], strategy, devices=list(devices), not_before_ns=not_before)
    t.candidates = candidates or {d: {1: gcl_with_window(100_000, 200_000)} for d in devices}
    return t


# --- planning ---------------------------------------------------------------


def test_commit_order_directions():
    path = ["S1", "SwL", "SwR"]
    assert commit_order(OpKind.ADD_SLOT, path) == ["SwR", "SwL", "S1"]
    assert commit_order(OpKind.SHIFT_LATER, path) == ["SwR", "SwL", "S1"]
    assert commit_order(OpKind.REMOVE_SLOT, path) == path
    assert commit_order(OpKind.SHIFT_EARLIER, path) == path
    with pytest.raises(ValueError):
        commit_order(OpKind.ADD_SLOT, [])


def test_merge_orders():
    assert merge_orders([["a", "b"], ["b", "c"]]) == ["a", "b", "c"]
    assert merge_orders([["a", "b"], ["b", "a"]]) is None
    assert merge_orders([]) == []


def test_reference_update_operations():
    p = plans()
    assert [(o.kind, o.flow) for o in plan_update(p["C0"], p["C1"])] == [(OpKind.ADD_SLOT, "S1")]
    c3 = plan_update(p["C2"], p["C3"])
    assert [(o.kind, o.flow) for o in c3] == [(OpKind.SHIFT_LATER, "S1"), (OpKind.SHIFT_EARLIER, "S2"), (OpKind.ADD_SLOT, "S3")]
    assert c3[0].order == ["SwR", "SwL"]
    assert c3[1].order == ["SwL", "SwR"]
    assert merge_orders([o.order for o in c3]) is None
    assert [(o.kind, o.flow) for o in plan_update(p["C3"], p["C4"])] == [(OpKind.REMOVE_SLOT, "S1")]
    assert plan_update(p["C3"], p["C3"]) == []


def test_split_transaction_groups_compatible_ops():
    p = plans()
    parts = split_transaction(plan_update(p["C2"], p["C3"]), "C3")
    assert [t.txn_id for t in parts] == ["C3-1", "C3-2"]
    assert [[o.flow for o in t.ops] for t in parts] == [["S1"], ["S2", "S3"]]
    assert parts[0].strategy == Ordered(("SwR", "SwL"))
    assert parts[1].strategy == Ordered(("SwL", "SwR", "S3"))


def test_slot_moving_both_ways_is_unrealizable():
    p = plans()
    c3 = p["C3"]
    moved = type(c3)(c3.period_ns, c3.guard_band_ns, dict(c3.flows), {k: list(v) for k, v in c3.hops.items()}, dict(c3.ports))
    (d0, port0, w0), (d1, port1, w1) = moved.hops["S1"][1], moved.hops["S1"][2]
    moved.hops["S1"][1] = (d0, port0, type(w0)(w0.flow, w0.pcp, w0.start_ns + 10_000, w0.end_ns + 10_000, w0.gb_start_ns + 10_000))
    moved.hops["S1"][2] = (d1, port1, type(w1)(w1.flow, w1.pcp, w1.start_ns - 10_000, w1.end_ns - 10_000, w1.gb_start_ns - 10_000))
    with pytest.raises(Unrealizable):
        plan_update(c3, moved)


def test_phase_machine_rejects_illegal_changes():
    t = txn("T", ["a"], Synchronous())
    with pytest.raises(RuntimeError):
        t.advance(Phase.COMMITTED)
    t.advance(Phase.LOCKED)
    t.advance(Phase.CONFIGURED)
    t.advance(Phase.COMMITTED)
    t.advance(Phase.UNLOCKED)
    with pytest.raises(RuntimeError):
        t.advance(Phase.IDLE)


# --- device agent -------------------------------------------------------------


def test_agent_lock_is_exclusive():
    agent = ConfigAgent(FakeDevice(Kernel(), "d"))
    assert agent.handle(ControlMessage("lock", {"txn": "A"}), 0).body["ok"]
    assert not agent.handle(ControlMessage("lock", {"txn": "B"}), 0).body["ok"]
    assert not agent.handle(ControlMessage("commit", {"txn": "B"}), 0).body["ok"]
    assert agent.handle(ControlMessage("unlock", {"txn": "A"}), 0).body["ok"]
    assert agent.handle(ControlMessage("lock", {"txn": "B"}), 0).body["ok"]


def test_agent_rejects_invalid_candidate():
    agent = ConfigAgent(FakeDevice(Kernel(), "d"))
    agent.handle(ControlMessage("lock", {"txn": "A"}), 0)
    good = {"txn": "A", "gcls": {1: gcl_with_window(0, 200_000)}, "period_ns": PERIOD}
    assert agent.handle(ControlMessage("configure", good), 0).body["ok"]
    agent.reject_next = True
    assert not agent.handle(ControlMessage("configure", good), 0).body["ok"]


# --- coordinator -----------------------------------------------------------------


def test_synchronous_commit_is_one_instant_on_a_period_boundary():
    h = Harness(["a", "b", "c"])
    t = txn("T", ["c", "a", "b"], Synchronous(), not_before=3 * PERIOD)
    h.submit(t)
    h.run()
    assert t.outcome == "committed"
    assert t.phase == Phase.UNLOCKED
    times = set(t.commit_times.values())
    assert len(times) == 1
    (ts,) = times
    assert ts % PERIOD == 0 and ts >= 3 * PERIOD
    assert all(h.devices[d].gcls[1] == t.candidates[d][1] for d in "abc")
    assert [d for _, d in h.coord.lock_sequence] == ["a", "b", "c"]
    assert all(agent.locked_by is None for agent in h.agents.values())


def test_explicit_commit_time_is_used():
    h = Harness(["a", "b"])
    t = txn("T", ["a", "b"], Synchronous(commit_time_ns=7 * PERIOD))
    h.submit(t)
    h.run()
    assert t.commit_times == {"a": 7 * PERIOD, "b": 7 * PERIOD}


def test_commit_time_respects_idle_check():
    h = Harness(["a"])
    h.coord.idle_check = lambda txn, t: t >= 5 * PERIOD
    t = txn("T", ["a"], Synchronous())
    h.submit(t)
    h.run()
    assert t.commit_times["a"] == 5 * PERIOD


def test_ordered_commits_follow_sequence():
    h = Harness(["a", "b", "c"])
    t = txn("T", ["a", "b", "c"], Ordered(("c", "a", "b")))
    h.submit(t)
    h.run()
    order = sorted(t.commit_times, key=t.commit_times.get)
    assert order == ["c", "a", "b"]
    ts = [t.commit_times[d] for d in order]
    # each commit waits for the previous confirmation: one round trip apart
    assert all(b - a == 2 * h.latency for a, b in zip(ts, ts[1:]))


def test_ordered_commit_phase_alignment():
    h = Harness(["a", "b"], commit_phase_ns=300_000)
    t = txn("T", ["a", "b"], Ordered(("a", "b")))
    h.submit(t)
    h.run()
    assert t.commit_times["a"] % PERIOD == 300_000 + h.latency


def test_validation_failure_rolls_back_every_device():
    h = Harness(["a", "b", "c"])
    before = h.snapshot()
    h.agents["b"].reject_next = True
    t = txn("T", ["a", "b", "c"], Synchronous())
    h.submit(t)
    h.run()
    assert t.outcome == "ValidationFailure(b)"
    assert t.phase == Phase.IDLE
    assert h.snapshot() == before
    assert all(a.locked_by is None and a.candidate is None for a in h.agents.values())
    phases = [p for _, p, *_ in h.coord.log]
    assert "rollback" in phases and "release" not in phases


def test_lock_refusal_unlocks_already_locked_devices():
    h = Harness(["a", "b", "c"])
    h.agents["c"].locked_by = "other"
    before = h.snapshot()
    t = txn("T", ["a", "b", "c"], Synchronous())
    h.submit(t)
    h.run()
    assert t.outcome == "lock refused by c"
    assert h.agents["a"].locked_by is None and h.agents["b"].locked_by is None
    assert h.agents["c"].locked_by == "other"
    assert h.snapshot() == before


def test_transactions_are_serialized():
    h = Harness(["a", "b"])
    first = txn("T1", ["a", "b"], Ordered(("a", "b")))
    second = txn("T2", ["a", "b"], Synchronous())
    h.submit(first)
    h.submit(second)
    h.run()
    assert [t.txn_id for t in h.finished] == ["T1", "T2"]
    t1_done = max(t for tid, p, _, t, _ in h.coord.log if tid == "T1")
    t2_start = min(t for tid, p, _, t, _ in h.coord.log if tid == "T2")
    assert t2_start >= t1_done


def test_transaction_log_csv():
    h = Harness(["a"])
    h.submit(txn("T", ["a"], Synchronous()))
    h.run()
    lines = h.coord.log_csv().splitlines()
    assert lines[0] == "txn_id,phase,device,t_us,detail"
    assert lines[1].startswith("T,start,,0.000,synchronous")
    assert lines[-1].split(",")[1] == "done"
