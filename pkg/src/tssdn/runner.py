"""Assemble a scenario into a simulated TSN or TSSDN network and run it."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Optional

from .bounds import SlotPlan, SyncFlowSpec, async_bound, path_gcls, place_slots, sync_bound, validate_schedule
from .controller import Controller, install_static_config
from .dataplane import (
    ETH_IPV4,
    ETH_MGMT,
    ETH_SRP,
    Delivery,
    FlowRule,
    ForwardTo,
    GateControlList,
    Host,
    Network,
    Pattern,
    Switch,
    Table,
    ToController,
    host_send_scheduled,
)
from .desim import EventTrace, Kernel, rng
from .netmodel import HeaderTuple, NodeKind, ns_to_us_text, us_to_ns
from .scenario import Configuration, Scenario
from .srp import DistributedSrpAgent, SrpEndpoint
from .txnsched import (
    ConfigAgent,
    Ordered,
    Synchronous,
    Transaction,
    TransactionCoordinator,
    apply_ops,
    device_candidates,
    merge_orders,
    plan_update,
    split_transaction,
)

VARIANTS = ("tsn", "tssdn")
UPDATES = ("sync", "ordered", "split")


@dataclass(frozen=True)
class RunConfig:
    variant: str = "tssdn"
    update: str = "sync"
    seed: int = 1
    sr_at_s: Optional[float] = None
    gates: bool = True
    t_end_s: Optional[float] = None
    audit: bool = False


@dataclass
class Epoch:
    """A slot plan and the interval over which devices switched to it."""

    name: str
    switch_start_ns: int
    switch_end_ns: int
    plan: SlotPlan
    gcls: dict


@dataclass
class RunResult:
    config: RunConfig
    trace: EventTrace
    deliveries: list[Delivery]
    txn_log: str
    sr_start_ns: Optional[int]
    sr_done_ns: Optional[int]
    epochs: list[Epoch]
    problems: list[str]
    intervals: list[tuple[str, int]]
    bound_rows: list[tuple[str, str, float, Optional[float], bool]] = field(default_factory=list)
    network: Optional[Network] = None
    wall_events: int = 0

    @property
    def sr_duration_ns(self) -> Optional[int]:
        if self.sr_start_ns is None or self.sr_done_ns is None:
            return None
        return self.sr_done_ns - self.sr_start_ns

    def flow(self, name: str) -> list[Delivery]:
        return [d for d in self.deliveries if d.flow == name]

    def interval_of(self, t_ns: int) -> str:
        current = self.intervals[0][0]
        for name, start in self.intervals:
            if t_ns >= start:
                current = name
        return current

    def max_by_interval(self, flow: str) -> dict[str, int]:
        out: dict[str, int] = {}
        for d in self.flow(flow):
            key = self.interval_of(d.created_ns)
            out[key] = max(out.get(key, 0), d.latency_ns)
        return out

    def allowed_latency_ns(self, flow: str, created_ns: int, received_ns: int) -> Optional[int]:
        """Largest analytic bound among the plans that may have carried a frame."""
        bounds = []
        for i, epoch in enumerate(self.epochs):
            active_from = epoch.switch_start_ns
            active_to = self.epochs[i + 1].switch_end_ns if i + 1 < len(self.epochs) else None
            if active_to is not None and active_to <= created_ns:
                continue
            if active_from > received_ns:
                continue
            if flow in epoch.plan.flows:
                bounds.append(us_to_ns(sync_bound(flow, epoch.plan)))
        return max(bounds) if bounds else None

    def latency_csv(self) -> str:
        out = io.StringIO()
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(("flow", "frame_id", "created_us", "received_us", "latency_us", "interval"))
        for d in self.deliveries:
            writer.writerow(
                (d.flow, d.frame_id, ns_to_us_text(d.created_ns), ns_to_us_text(d.received_ns), ns_to_us_text(d.latency_ns), self.interval_of(d.created_ns))
            )
        return out.getvalue()

    def bound_csv(self) -> str:
        out = io.StringIO()
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(("flow", "config", "bound_us", "measured_max_us", "ok"))
        for flow, config, bound, measured, ok in self.bound_rows:
            writer.writerow((flow, config, f"{bound:.3f}", "" if measured is None else f"{measured:.3f}", "true" if ok else "false"))
        return out.getvalue()


def s4_phase_us(scenario: Scenario, seed: int, flow: str = "S4") -> float:
    src = scenario.async_sources[flow]
    steps = int(round(scenario.period_ns / 1000 / src.phase_step_us))
    return rng(seed, f"{flow.lower()}_start").randrange(steps) * src.phase_step_us


class Simulation:
    def __init__(self, scenario: Scenario, cfg: RunConfig = RunConfig()):
        if cfg.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")
        if cfg.update not in UPDATES:
            raise ValueError(f"update must be one of {UPDATES}")
        self.scenario = scenario
        self.cfg = cfg
        self.kernel = Kernel()
        self.network = Network(scenario.topology, self.kernel)
        self.problems: list[str] = []
        self.epochs: list[Epoch] = []
        self.sr_start_ns: Optional[int] = None
        self.sr_done_ns: Optional[int] = None
        self.controller: Optional[Controller] = None
        self.coordinator: Optional[TransactionCoordinator] = None
        self._build()

    # --- construction ----------------------------------------------------------

    def _build(self) -> None:
        sc, net, topo = self.scenario, self.network, self.scenario.topology
        tssdn = self.cfg.variant == "tssdn"
        for name, node in topo.nodes.items():
            if node.kind == NodeKind.SWITCH:
                net.add(Switch(net, name))
            elif node.kind == NodeKind.HOST:
                net.add(Host(net, name))
            elif tssdn:
                self.controller = Controller(net, name, sc.acl, us_to_ns(sc.controller_processing_us))
                net.add(self.controller)
        net.wire()
        if self.cfg.audit:
            for device in net.devices.values():
                for port in device.ports.values():
                    port.tx_log = []
        self.endpoints = {h: SrpEndpoint(net.host(h)) for h in topo.names(NodeKind.HOST)}
        for src in sc.async_sources.values():
            self.endpoints[src.dst].listening.add(src.stream_id)
        switches = [net.switch(s) for s in topo.names(NodeKind.SWITCH)]
        if tssdn:
            self._boot_tssdn(switches)
        else:
            self._boot_tsn(switches)
        self._schedule_traffic()

    def _boot_tssdn(self, switches: list[Switch]) -> None:
        sc, net, topo = self.scenario, self.network, self.scenario.topology
        rules: dict[str, list[FlowRule]] = {sw.name: [] for sw in switches}
        for src in sc.sync_sources.values():
            path = topo.shortest_path(src.src, src.dst)
            a, b = topo.nodes[src.src], topo.nodes[src.dst]
            match = Pattern.of(src_mac=a.mac, dst_mac=b.mac, ethertype=ETH_IPV4, pcp=src.pcp)
            for k, node in enumerate(path[1:-1], 1):
                rules[node].append(FlowRule(match, (ForwardTo(topo.port_to(node, path[k + 1])),), 300, table=Table.STATIC))
        for sw in switches:
            rules[sw.name].append(FlowRule(Pattern.of(ethertype=ETH_SRP), (ToController(),), 500, table=Table.STATIC))
            rules[sw.name].append(
                FlowRule(Pattern.of(ethertype=ETH_MGMT, dst_mac=net.controller_mac), (ToController(),), 500, table=Table.STATIC)
            )
        install_static_config(switches, rules, {})
        for sw in switches:
            sw.tables.install(FlowRule(Pattern(), (ToController(),), 0, table=Table.DYNAMIC, cookie="table-miss"))
        for device in net.devices.values():
            if isinstance(device, (Switch, Host)):
                device.agent = ConfigAgent(device)
        order = list(topo.nodes)
        phase = sc.commit_phase_us
        self.coordinator = TransactionCoordinator(
            self.kernel,
            self.controller.send_to_device,
            order,
            sc.period_ns,
            None if phase is None else us_to_ns(phase),
        )
        self.coordinator.idle_check = self._boundary_idle
        self.controller.coordinator = self.coordinator
        empty, empty_gcls = place_slots([], topo, sc.constants)
        self.epochs.append(Epoch("C0", 0, 0, empty, empty_gcls))
        self.planned = {}
        self.planned_plan = (empty, empty_gcls)
        for config in sc.configurations:
            start = us_to_ns(config.at_s * 1e6 - config.lead_us)
            self.kernel.schedule_at(max(0, start), self._reconfigure, config)

    def _boot_tsn(self, switches: list[Switch]) -> None:
        sc, net, topo = self.scenario, self.network, self.scenario.topology
        rules: dict[str, list[FlowRule]] = {sw.name: [] for sw in switches}
        for sw in switches:
            for host in topo.names(NodeKind.HOST):
                path = topo.shortest_path(sw.name, host)
                out = topo.port_to(sw.name, path[1])
                rules[sw.name].append(FlowRule(Pattern.of(dst_mac=topo.nodes[host].mac), (ForwardTo(out),), 100, table=Table.STATIC))
            rules[sw.name].append(FlowRule(Pattern.of(ethertype=ETH_SRP), (ToController(),), 500, table=Table.STATIC))
            DistributedSrpAgent(sw)
        flows = sc.config_flows(sc.configuration(sc.tsn_static)) if (sc.tsn_static and self.cfg.gates) else {}
        plan, gcls = place_slots(flows.values(), topo, sc.constants)
        problems = validate_schedule(gcls, plan, sc.constants)
        self.problems.extend(problems)
        install_static_config(switches, rules, gcls)
        for (name, port), gcl in gcls.items():
            device = net.devices[name]
            if isinstance(device, Host):
                device.ports[port].gcl = gcl
        self.epochs.append(Epoch(sc.tsn_static or "static", 0, 0, plan, gcls))

    def _boundary_idle(self, txn: Transaction, t_ns: int) -> bool:
        """No scheduled window of the old or new plan spans the commit instant."""
        phase = t_ns % self.scenario.period_ns
        plans = [self.epochs[-1].plan, self.planned_plan[0]]
        for plan in plans:
            for windows in plan.ports.values():
                for w in windows:
                    if w.start_ns <= phase < w.end_ns or (w.end_ns > plan.period_ns and phase < w.end_ns - plan.period_ns):
                        return False
        return True

    # --- reconfiguration ----------------------------------------------------------

    def _reconfigure(self, config: Configuration) -> None:
        sc, topo = self.scenario, self.scenario.topology
        target = sc.config_flows(config)
        cur_plan, cur_gcls = self.planned_plan
        tgt_plan, tgt_gcls = place_slots(target.values(), topo, sc.constants)
        for problem in validate_schedule(tgt_gcls, tgt_plan, sc.constants):
            self.problems.append(f"{config.name}: {problem}")
        ops = plan_update(cur_plan, tgt_plan)
        at_ns = us_to_ns(config.at_s * 1e6)
        if self.cfg.update == "sync":
            txns = [Transaction(config.name, ops, Synchronous(), not_before_ns=at_ns)]
        elif self.cfg.update == "ordered":
            seq = config.ordered_sequence or tuple(merge_orders([op.order for op in ops]) or ())
            txns = [Transaction(config.name, ops, Ordered(tuple(seq)))]
        else:
            txns = split_transaction(ops, prefix=config.name)
            if len(txns) == 1:
                txns[0].txn_id = config.name
        flows = dict(self.planned)
        prev_plan, prev_gcls = cur_plan, cur_gcls
        for txn in txns:
            after_flows = apply_ops(flows, txn.ops, target)
            after_plan, after_gcls = place_slots(after_flows.values(), topo, sc.constants)
            candidates, windows = device_candidates(prev_plan, prev_gcls, after_plan, after_gcls)
            devices = set(candidates)
            for op in txn.ops:
                devices.update(op.path)
            txn.devices = sorted(devices, key=lambda d: list(topo.nodes).index(d))
            for device in txn.devices:
                if device not in candidates:
                    candidates[device] = {p: after_gcls.get((device, p), GateControlList.all_open(sc.period_ns)) for d, p in after_gcls if d == device}
            txn.candidates = candidates
            txn.windows = windows
            txn.target_flows = after_flows
            if txn.devices:
                self.coordinator.submit(txn, self._make_on_done(after_plan, after_gcls))
            flows, prev_plan, prev_gcls = after_flows, after_plan, after_gcls
        self.planned = target
        self.planned_plan = (tgt_plan, tgt_gcls)

    def _make_on_done(self, plan: SlotPlan, gcls: dict):
        def on_done(txn: Transaction) -> None:
            if txn.outcome != "committed":
                self.problems.append(f"{txn.txn_id}: {txn.outcome}")
                return
            times = list(txn.commit_times.values()) or [self.kernel.now]
            self.epochs.append(Epoch(txn.txn_id, min(times), max(times), plan, gcls))

        return on_done

    # --- traffic ----------------------------------------------------------------

    def _schedule_traffic(self) -> None:
        sc, net = self.scenario, self.network
        t_end = self.t_end_ns
        for src in sc.sync_sources.values():
            host_send_scheduled(
                net.host(src.src),
                src.name,
                src.dst,
                src.pcp,
                us_to_ns(src.offset_us),
                sc.period_ns,
                us_to_ns(src.start_s * 1e6),
                min(us_to_ns(src.stop_s * 1e6), t_end),
                src.frames,
                src.wire_bytes,
            )
        for src in sc.async_sources.values():
            self._schedule_async(src)
        for src in sc.best_effort:
            self._schedule_best_effort(src)

    @property
    def t_end_ns(self) -> int:
        t_end = self.cfg.t_end_s if self.cfg.t_end_s is not None else self.scenario.t_end_s
        return us_to_ns(t_end * 1e6)

    def _schedule_async(self, src) -> None:
        sc, net = self.scenario, self.network
        host = net.host(src.src)
        dst = sc.topology.nodes[src.dst]
        headers = HeaderTuple(
            dst_mac=dst.mac,
            src_mac=host.node.mac,
            ethertype=ETH_IPV4,
            pcp=src.pcp,
            src_ip=host.node.ip,
            dst_ip=dst.ip,
            ip_proto=17,
            src_port=7000 + src.stream_id,
            dst_port=7000 + src.stream_id,
        )
        sr_at = self.cfg.sr_at_s if self.cfg.sr_at_s is not None else src.sr_at_s
        start = us_to_ns(sr_at * 1e6 + s4_phase_us(sc, self.cfg.seed, src.name))
        period = us_to_ns(src.period_us)
        stop = min(us_to_ns(src.stop_s * 1e6), self.t_end_ns)

        def emit() -> None:
            host.send(net.new_frame(headers, src.wire_bytes, flow=src.name))

        def ready(t_ns: int) -> None:
            if self.sr_done_ns is None:
                self.sr_done_ns = t_ns
            # keep the phase of the requested start time
            t = start + -(-(t_ns - start) // period) * period
            while t < stop:
                self.kernel.schedule_at(t, emit)
                t += period

        def advertise() -> None:
            self.sr_start_ns = self.kernel.now
            self.endpoints[src.src].advertise(src.stream_id, headers, src.idle_slope_bps, ready)

        self.kernel.schedule_at(start, advertise)

    def _schedule_best_effort(self, src) -> None:
        sc, net = self.scenario, self.network
        host = net.host(src.src)
        dst = sc.topology.nodes[src.dst]
        draw = rng(self.cfg.seed, f"be/{src.src}/{src.udp_port}")
        headers = HeaderTuple(
            dst_mac=dst.mac,
            src_mac=host.node.mac,
            ethertype=ETH_IPV4,
            pcp=0,
            src_ip=host.node.ip,
            dst_ip=dst.ip,
            ip_proto=17,
            src_port=src.udp_port,
            dst_port=src.udp_port,
        )
        period = us_to_ns(src.period_us)
        first = draw.randrange(period)
        t_end = self.t_end_ns
        name = f"BE:{src.src}"

        def emit() -> None:
            size = draw.randint(src.min_bytes, src.max_bytes)
            host.send(net.new_frame(headers, size, flow=name))
            nxt = self.kernel.now + period
            if nxt <= t_end:
                self.kernel.schedule_at(nxt, emit)

        self.kernel.schedule_at(first, emit)

    # --- run ----------------------------------------------------------------------

    def run(self) -> RunResult:
        sc = self.scenario
        self.kernel.run_until(self.t_end_ns)
        intervals = [("C0", 0)] + [(c.name, us_to_ns(c.at_s * 1e6)) for c in sc.configurations]
        result = RunResult(
            config=self.cfg,
            trace=self.kernel.trace,
            deliveries=sorted(self.network.deliveries, key=lambda d: (d.received_ns, d.frame_id)),
            txn_log=self.coordinator.log_csv() if self.coordinator else "",
            sr_start_ns=self.sr_start_ns,
            sr_done_ns=self.sr_done_ns,
            epochs=self.epochs,
            problems=list(self.problems),
            intervals=intervals,
            network=self.network,
            wall_events=self.kernel.events_processed,
        )
        result.bound_rows = bound_rows(sc, result)
        return result


def interval_plans(scenario: Scenario, variant: str, gates: bool = True) -> list[tuple[str, SlotPlan, dict]]:
    """Slot plan in force during each named configuration interval."""
    topo = scenario.topology
    if variant == "tsn":
        flows = scenario.config_flows(scenario.configuration(scenario.tsn_static)) if (scenario.tsn_static and gates) else {}
        plan, gcls = place_slots(flows.values(), topo, scenario.constants)
        names = ["C0"] + [c.name for c in scenario.configurations]
        return [(n, plan, gcls) for n in names]
    out = [("C0",) + place_slots([], topo, scenario.constants)]
    for config in scenario.configurations:
        out.append((config.name,) + place_slots(scenario.config_flows(config).values(), topo, scenario.constants))
    return out


def analytic_rows(scenario: Scenario, variant: str = "tssdn", gates: bool = True) -> list[tuple[str, str, float]]:
    """(flow, config, bound_us) for every flow carried in each interval."""
    rows = []
    topo = scenario.topology
    for name, plan, gcls in interval_plans(scenario, variant, gates):
        for flow in sorted(plan.flows):
            rows.append((flow, name, sync_bound(flow, plan, scenario.constants)))
        for flow, src in sorted(scenario.async_sources.items()):
            path = topo.shortest_path(src.src, src.dst)
            hop_gcls, keys = path_gcls(path, topo, gcls, scenario.period_ns)
            rows.append((flow, name, async_bound(hop_gcls, src.pcp, scenario.constants, plan, keys, src.wire_bytes)))
    return rows


def bound_rows(scenario: Scenario, result: RunResult) -> list[tuple[str, str, float, Optional[float], bool]]:
    rows = []
    maxima: dict[tuple[str, str], int] = {}
    for d in result.deliveries:
        key = (d.flow, result.interval_of(d.created_ns))
        maxima[key] = max(maxima.get(key, 0), d.latency_ns)
    for flow, config, bound in analytic_rows(scenario, result.config.variant, result.config.gates):
        measured = maxima.get((flow, config))
        measured_us = None if measured is None else measured / 1000
        ok = measured is None or math.isinf(bound) or measured <= us_to_ns(bound)
        rows.append((flow, config, bound, measured_us, ok))
    return rows


def run_scenario(scenario: Scenario, cfg: RunConfig = RunConfig()) -> RunResult:
    return Simulation(scenario, cfg).run()


def bound_table(scenario: Scenario, variant: str = "tssdn") -> list[tuple[str, str, str]]:
    """Analytic bounds as printable rows; a synchronous flow sending during an
    interval whose plan has no slot for it yields a MissingSlot row."""
    rows = [(flow, config, f"{bound:.3f}".rstrip("0").rstrip(".")) for flow, config, bound in analytic_rows(scenario, variant)]
    if variant == "tsn":
        return rows
    starts = [("C0", 0.0)] + [(c.name, c.at_s) for c in scenario.configurations]
    for i, (name, start) in enumerate(starts):
        end = starts[i + 1][1] if i + 1 < len(starts) else float("inf")
        carried = set(scenario.configuration(name).flows) if name != "C0" else set()
        for flow, src in sorted(scenario.sync_sources.items()):
            if src.start_s < end and src.stop_s > start and flow not in carried:
                rows.append((flow, name, "MissingSlot"))
    return rows
