"""Scenario documents: topology, traffic, timeline and control settings (YAML)."""

from __future__ import annotations

from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Optional

import yaml

from .bounds import SyncFlowSpec, TimingConstants
from .controller import AclPolicy, Verdict, parse_acl
from .netmodel import Link, NodeKind, Topology, TopologyError, us_to_ns


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class SyncSource:
    name: str
    src: str
    dst: str
    pcp: int
    offset_us: float
    frames: int
    wire_bytes: int
    start_s: float
    stop_s: float


@dataclass(frozen=True)
class AsyncSource:
    name: str
    src: str
    dst: str
    pcp: int
    stream_id: int
    wire_bytes: int
    period_us: float
    sr_at_s: float
    phase_step_us: float
    stop_s: float
    idle_slope_bps: int


@dataclass(frozen=True)
class BestEffortSource:
    src: str
    dst: str
    period_us: float
    min_bytes: int
    max_bytes: int
    udp_port: int


@dataclass(frozen=True)
class Configuration:
    name: str
    at_s: float
    lead_us: float
    flows: dict[str, float]  # flow -> hold_us
    ordered_sequence: Optional[tuple[str, ...]] = None


@dataclass
class Scenario:
    name: str
    topology: Topology
    constants: TimingConstants
    sync_sources: dict[str, SyncSource]
    async_sources: dict[str, AsyncSource]
    best_effort: list[BestEffortSource]
    configurations: list[Configuration]
    acl: AclPolicy
    t_end_s: float = 1.0
    seed: int = 1
    sweep: int = 20
    controller_processing_us: float = 0.0
    commit_phase_us: Optional[float] = None
    tsn_static: Optional[str] = None
    extra: dict[str, Any] = field(default_factory=dict)

    @property
    def period_ns(self) -> int:
        return self.constants.period_ns

    def flow_spec(self, name: str, hold_us: float = 0.0) -> SyncFlowSpec:
        src = self.sync_sources[name]
        path = self.topology.shortest_path(src.src, src.dst)
        if path is None:
            raise ScenarioError(f"no path for flow {name}")
        return SyncFlowSpec(name, tuple(path), src.pcp, src.offset_us, src.frames, src.wire_bytes, hold_us)

    def config_flows(self, config: Optional[Configuration]) -> dict[str, SyncFlowSpec]:
        if config is None:
            return {}
        return {name: self.flow_spec(name, hold) for name, hold in config.flows.items()}

    def configuration(self, name: str) -> Configuration:
        for c in self.configurations:
            if c.name == name:
                return c
        raise ScenarioError(f"unknown configuration {name}")


def _req(doc: dict, key: str, where: str) -> Any:
    if key not in doc:
        raise ScenarioError(f"{where}: missing '{key}'")
    return doc[key]


def load_scenario(path: str | Path) -> Scenario:
    path = Path(path)
    try:
        doc = yaml.safe_load(path.read_text())
    except (OSError, yaml.YAMLError) as exc:
        raise ScenarioError(f"cannot read scenario {path}: {exc}") from None
    return scenario_from_dict(doc, base_dir=path.parent)


def reference_scenario_path() -> Path:
    return Path(str(resources.files("tssdn") / "data" / "reference.yaml"))


def load_reference() -> Scenario:
    return load_scenario(reference_scenario_path())


def topology_from_dict(topo_doc: Any) -> Topology:
    """Nodes and links from a `topology` mapping; link options default to `defaults`."""
    if not isinstance(topo_doc, dict):
        raise ScenarioError("topology must be a mapping")
    defaults = topo_doc.get("defaults", {})
    nodes = []
    for n in _req(topo_doc, "nodes", "topology"):
        try:
            nodes.append((str(n["name"]), NodeKind(n["kind"]).value))
        except (KeyError, ValueError, TypeError):
            raise ScenarioError(f"topology: bad node entry {n!r}") from None
    links = []
    for entry in _req(topo_doc, "links", "topology"):
        opts = {**defaults, **{k: v for k, v in entry.items() if k not in ("a", "b")}}
        try:
            links.append(Link(str(entry["a"]), str(entry["b"]), **opts))
        except (KeyError, TypeError) as exc:
            raise ScenarioError(f"topology: bad link {entry!r}: {exc}") from None
    try:
        topology = Topology.build(nodes, links)
        topology.validate()
    except TopologyError as exc:
        raise ScenarioError(f"topology: {exc}") from None
    return topology


def scenario_from_dict(doc: Any, base_dir: Optional[Path] = None) -> Scenario:
    if not isinstance(doc, dict):
        raise ScenarioError("scenario must be a mapping")
    topo_doc = _req(doc, "topology", "scenario")
    defaults = topo_doc.get("defaults", {})
    topology = topology_from_dict(topo_doc)
    names = set(topology.nodes)

    def node(name: Any, where: str) -> str:
        if name not in names:
            raise ScenarioError(f"{where}: unknown node {name!r}")
        return str(name)

    bandwidth = int(defaults.get("bandwidth_bps", 100_000_000))
    constants = TimingConstants(
        bandwidth_bps=bandwidth,
        t_fwd_ns=us_to_ns(defaults.get("forwarding_delay_us", 3.0)),
        period_ns=us_to_ns(doc.get("period_us", 1000)),
    )
    sync = {}
    for name, s in (doc.get("sync_flows") or {}).items():
        where = f"sync_flows.{name}"
        sync[name] = SyncSource(
            name,
            node(_req(s, "src", where), where),
            node(_req(s, "dst", where), where),
            int(_req(s, "pcp", where)),
            float(_req(s, "offset_us", where)),
            int(s.get("frames", 1)),
            int(s.get("wire_bytes", 1522)),
            float(_req(s, "start_s", where)),
            float(_req(s, "stop_s", where)),
        )
    asyncs = {}
    for name, s in (doc.get("async_flows") or {}).items():
        where = f"async_flows.{name}"
        asyncs[name] = AsyncSource(
            name,
            node(_req(s, "src", where), where),
            node(_req(s, "dst", where), where),
            int(_req(s, "pcp", where)),
            int(_req(s, "stream_id", where)),
            int(s.get("wire_bytes", 1522)),
            float(s.get("period_us", 1000)),
            float(_req(s, "sr_at_s", where)),
            float(s.get("phase_step_us", 50)),
            float(_req(s, "stop_s", where)),
            int(_req(s, "idle_slope_bps", where)),
        )
    be = []
    for i, s in enumerate(doc.get("best_effort") or []):
        where = f"best_effort[{i}]"
        be.append(
            BestEffortSource(
                node(_req(s, "src", where), where),
                node(_req(s, "dst", where), where),
                float(_req(s, "period_us", where)),
                int(s.get("min_bytes", 64)),
                int(s.get("max_bytes", 1522)),
                int(s.get("udp_port", 5000 + i)),
            )
        )
    configs = []
    for c in doc.get("configurations") or []:
        where = f"configurations.{c.get('name', '?')}"
        flows = {}
        for fname, opts in (c.get("flows") or {}).items():
            if fname not in sync:
                raise ScenarioError(f"{where}: unknown sync flow {fname!r}")
            flows[fname] = float((opts or {}).get("hold_us", 0))
        seq = c.get("ordered_sequence")
        configs.append(
            Configuration(
                str(_req(c, "name", where)),
                float(_req(c, "at_s", where)),
                float(c.get("lead_us", 0)),
                flows,
                tuple(node(d, where) for d in seq) if seq else None,
            )
        )
    times = [c.at_s for c in configs]
    if any(b <= a for a, b in zip(times, times[1:])):
        raise ScenarioError("configurations: timeline must be strictly increasing")
    ctrl = doc.get("controller") or {}
    acl = _load_acl(ctrl.get("acl"), base_dir)
    tsn = doc.get("tsn") or {}
    static = tsn.get("static_configuration")
    if static is not None and static not in {c.name for c in configs}:
        raise ScenarioError(f"tsn.static_configuration: unknown configuration {static!r}")
    phase = ctrl.get("commit_phase_us")
    return Scenario(
        name=str(doc.get("name", "scenario")),
        topology=topology,
        constants=constants,
        sync_sources=sync,
        async_sources=asyncs,
        best_effort=be,
        configurations=configs,
        acl=acl,
        t_end_s=float(doc.get("t_end_s", 1.0)),
        seed=int(doc.get("seed", 1)),
        sweep=int(doc.get("seeds", 20)),
        controller_processing_us=float(ctrl.get("processing_us", 0)),
        commit_phase_us=None if phase is None else float(phase),
        tsn_static=static,
        extra={k: v for k, v in doc.items() if k not in _KNOWN},
    )


_KNOWN = {
    "name",
    "topology",
    "period_us",
    "sync_flows",
    "async_flows",
    "best_effort",
    "configurations",
    "controller",
    "tsn",
    "t_end_s",
    "seed",
    "seeds",
}


def _load_acl(spec: Any, base_dir: Optional[Path]) -> AclPolicy:
    if spec is None:
        return AclPolicy((), Verdict.ALLOW)
    if isinstance(spec, str) and "\n" not in spec and "=" not in spec:
        path = Path(spec)
        if not path.is_absolute() and base_dir is not None:
            path = base_dir / path
        try:
            return parse_acl(path.read_text())
        except OSError as exc:
            raise ScenarioError(f"cannot read ACL {path}: {exc}") from None
    try:
        return parse_acl(str(spec))
    except ValueError as exc:
        raise ScenarioError(f"controller.acl: {exc}") from None
