# run_config.py
"""
Run configuration: TOML on disk, frozen dataclasses in memory.

Schema (every table optional, unknown keys rejected):

    name, preset, seeds, end_time_ms, out, ground_truth
    [simulation]  poll_interval_ms, armed, noise_sigma = {co = 5.0, ...}
    [protocol]    ProtocolConfig fields, [protocol.required_majority] per scenario
    [thresholds]  ThresholdSet fields
    [power]       StageProfile fields, capacity_Wh = [...]
    [topology]    loss_prob, latency_ms, corrupt_prob,
                  nodes = [{id, room, floor, weight, protocol = {...}, thresholds = {...}}]
                  [[topology.links]] a, b, loss_prob, latency_ms, corrupt_prob, symmetric
    [[script]]    action = "...", at_ms = ..., action fields
"""
import copy
import logging
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Dict, Optional, Tuple

from emergency_detector import SensorKind, ThresholdSet
from errors import ConfigInvalid
from message_codec import MAX_NODE_ID, ScenarioId
from network_simulator import DEFAULT_LATENCY_MS, LinkModel, NodeSpec, SimSettings, Topology
from power_model import StageProfile
from sensor_environment import StimulusScript, action_from_dict, action_to_dict
from voting_protocol import ProtocolConfig

logger = logging.getLogger(__name__)

DEFAULT_END_TIME_MS = 60000

_TOP_KEYS = {"name", "preset", "seeds", "end_time_ms", "out", "ground_truth", "simulation",
             "protocol", "thresholds", "power", "topology", "script"}
_PROTOCOL_KEYS = {f.name for f in fields(ProtocolConfig)}
_THRESHOLD_KEYS = {f.name for f in fields(ThresholdSet)}
_PROFILE_KEYS = {f.name for f in fields(StageProfile)}
_LINK_KEYS = {f.name for f in fields(LinkModel)}


def _check_keys(table, allowed, prefix):
    if not isinstance(table, dict):
        raise ConfigInvalid(prefix or "config", "expected a table")
    for key in table:
        if key not in allowed:
            raise ConfigInvalid(f"{prefix}.{key}" if prefix else key, "unknown key")


def _scenario(name, key):
    try:
        return ScenarioId[str(name).upper()]
    except KeyError:
        raise ConfigInvalid(key, f"unknown scenario {name!r}") from None


def _build(cls, values, key):
    try:
        return cls(**values)
    except TypeError as e:
        raise ConfigInvalid(key, str(e)) from None


@dataclass(frozen=True)
class NodeEntry:
    id: int
    room: str = ""
    floor: int = 0
    weight: float = 1.0
    protocol: Dict[str, object] = field(default_factory=dict)
    thresholds: Dict[str, object] = field(default_factory=dict)


@dataclass(frozen=True)
class LinkEntry:
    a: int
    b: int
    loss_prob: float = 0.0
    latency_ms: int = DEFAULT_LATENCY_MS
    corrupt_prob: float = 0.0
    symmetric: bool = True


@dataclass(frozen=True)
class RunConfig:
    name: str = "custom"
    seeds: Tuple[int, ...] = (0,)
    end_time_ms: int = DEFAULT_END_TIME_MS
    out: Optional[str] = None
    nodes: Tuple[NodeEntry, ...] = ()
    link: LinkModel = LinkModel()
    links: Tuple[LinkEntry, ...] = ()
    protocol: ProtocolConfig = field(default_factory=ProtocolConfig)
    thresholds: ThresholdSet = ThresholdSet()
    simulation: SimSettings = field(default_factory=SimSettings)
    capacity_Wh: Tuple[float, ...] = ()
    script: StimulusScript = StimulusScript()

    def __post_init__(self):
        if not self.seeds:
            raise ConfigInvalid("seeds", "at least one seed is required")
        if self.end_time_ms <= 0:
            raise ConfigInvalid("end_time_ms", "must be > 0")
        ids = [n.id for n in self.nodes]
        if len(set(ids)) != len(ids):
            raise ConfigInvalid("topology.nodes", "node ids must be unique")
        for cap in self.capacity_Wh:
            if not cap > 0:
                raise ConfigInvalid("power.capacity_Wh", "capacities must be > 0")

    @property
    def profile(self):
        return self.simulation.profile

    def topology(self) -> Topology:
        specs = [NodeSpec(n.id, n.room, n.floor) for n in self.nodes]
        topo = Topology.full_mesh(specs, self.link)
        for i, entry in enumerate(self.links):
            model = LinkModel(entry.loss_prob, entry.latency_ms, entry.corrupt_prob)
            pairs = [(entry.a, entry.b), (entry.b, entry.a)] if entry.symmetric else [(entry.a, entry.b)]
            for pair in pairs:
                if pair not in topo.links:
                    raise ConfigInvalid(f"topology.links.{i}", f"no link {pair[0]} -> {pair[1]}")
                topo.links[pair] = model
        return topo

    def node_configs(self) -> Dict[int, ProtocolConfig]:
        out = {}
        for n in self.nodes:
            overrides = dict(n.protocol)
            if "required_majority" in overrides:
                overrides["required_majority"] = _majorities(
                    overrides["required_majority"], f"topology.nodes.{n.id}.protocol",
                    self.protocol.required_majority)
            out[n.id] = replace(self.protocol, node_weight=n.weight, **overrides)
        return out

    def node_thresholds(self) -> Dict[int, ThresholdSet]:
        return {n.id: replace(self.thresholds, **n.thresholds) for n in self.nodes}

    def to_dict(self) -> dict:
        protocol = asdict(self.protocol)
        protocol["required_majority"] = {s.name.lower(): v for s, v in sorted(
            self.protocol.required_majority.items())}
        profile = asdict(self.profile)
        nodes = []
        for n in self.nodes:
            entry = {"id": n.id, "room": n.room, "floor": n.floor, "weight": n.weight}
            if n.protocol:
                entry["protocol"] = dict(n.protocol)
            if n.thresholds:
                entry["thresholds"] = dict(n.thresholds)
            nodes.append(entry)
        out = {
            "name": self.name,
            "seeds": list(self.seeds),
            "end_time_ms": self.end_time_ms,
            "simulation": {
                "poll_interval_ms": self.simulation.poll_interval_ms,
                "armed": self.simulation.armed,
                "noise_sigma": {k.value: v for k, v in sorted(
                    self.simulation.noise_sigma.items(), key=lambda kv: kv[0].value)},
            },
            "protocol": protocol,
            "thresholds": asdict(self.thresholds),
            "power": {**profile, "capacity_Wh": list(self.capacity_Wh)},
            "topology": {
                "loss_prob": self.link.loss_prob,
                "latency_ms": self.link.latency_ms,
                "corrupt_prob": self.link.corrupt_prob,
                "nodes": nodes,
                "links": [asdict(l) for l in self.links],
            },
            "script": [action_to_dict(a) for a in self.script.actions],
        }
        if self.out is not None:
            out["out"] = self.out
        if self.script.ground_truth is not None:
            out["ground_truth"] = sorted(s.name for s in self.script.ground_truth)
        return out


def _majorities(table, key, base):
    _check_keys(table, {s.name.lower() for s in ScenarioId}, f"{key}.required_majority")
    merged = dict(base)
    for name, value in table.items():
        merged[_scenario(name, f"{key}.required_majority.{name}")] = value
    return merged


def from_dict(raw: dict) -> RunConfig:
    _check_keys(raw, _TOP_KEYS, "")

    sim_raw = dict(raw.get("simulation", {}))
    _check_keys(sim_raw, {"poll_interval_ms", "armed", "noise_sigma"}, "simulation")
    noise = {}
    for name, sigma in sim_raw.pop("noise_sigma", {}).items():
        try:
            noise[SensorKind(name)] = float(sigma)
        except ValueError:
            raise ConfigInvalid(f"simulation.noise_sigma.{name}", "unknown sensor") from None

    power_raw = dict(raw.get("power", {}))
    _check_keys(power_raw, _PROFILE_KEYS | {"capacity_Wh"}, "power")
    capacities = tuple(float(c) for c in power_raw.pop("capacity_Wh", ()))
    profile = _build(StageProfile, power_raw, "power")
    simulation = _build(SimSettings, {**sim_raw, "noise_sigma": noise, "profile": profile},
                        "simulation")

    proto_raw = dict(raw.get("protocol", {}))
    _check_keys(proto_raw, _PROTOCOL_KEYS, "protocol")
    if "required_majority" in proto_raw:
        proto_raw["required_majority"] = _majorities(
            proto_raw["required_majority"], "protocol", ProtocolConfig().required_majority)
    protocol = _build(ProtocolConfig, proto_raw, "protocol")

    thr_raw = raw.get("thresholds", {})
    _check_keys(thr_raw, _THRESHOLD_KEYS, "thresholds")
    thresholds = _build(ThresholdSet, thr_raw, "thresholds")

    topo_raw = dict(raw.get("topology", {}))
    _check_keys(topo_raw, _LINK_KEYS | {"nodes", "links"}, "topology")
    nodes = []
    for i, entry in enumerate(topo_raw.pop("nodes", [])):
        key = f"topology.nodes.{i}"
        _check_keys(entry, {f.name for f in fields(NodeEntry)}, key)
        _check_keys(entry.get("protocol", {}), _PROTOCOL_KEYS - {"node_weight"}, f"{key}.protocol")
        _check_keys(entry.get("thresholds", {}), _THRESHOLD_KEYS, f"{key}.thresholds")
        nodes.append(_build(NodeEntry, entry, key))
        node_id = nodes[-1].id
        if isinstance(node_id, bool) or not isinstance(node_id, int) or not 0 <= node_id <= MAX_NODE_ID:
            raise ConfigInvalid(f"{key}.id", f"must be 0..{MAX_NODE_ID}")
    links = []
    for i, entry in enumerate(topo_raw.pop("links", [])):
        _check_keys(entry, {f.name for f in fields(LinkEntry)}, f"topology.links.{i}")
        links.append(_build(LinkEntry, entry, f"topology.links.{i}"))
    link = _build(LinkModel, topo_raw, "topology")

    actions = tuple(action_from_dict(a, i) for i, a in enumerate(raw.get("script", [])))
    truth = raw.get("ground_truth")
    if truth is not None:
        truth = frozenset(_scenario(s, "ground_truth") for s in truth)
    script = StimulusScript(actions, truth)

    config = RunConfig(
        name=raw.get("name", raw.get("preset", "custom")),
        seeds=tuple(int(s) for s in raw.get("seeds", (0,))),
        end_time_ms=int(raw.get("end_time_ms", DEFAULT_END_TIME_MS)),
        out=raw.get("out"),
        nodes=tuple(nodes),
        link=link,
        links=tuple(links),
        protocol=protocol,
        thresholds=thresholds,
        simulation=simulation,
        capacity_Wh=capacities,
        script=script,
    )
    # per-node overrides are only checked once they are combined with the defaults
    config.node_configs()
    config.node_thresholds()
    if not config.nodes:
        raise ConfigInvalid("topology.nodes", "at least one node is required")
    return config


def _parse_value(text):
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def apply_overrides(raw: dict, overrides) -> dict:
    """Apply key=value overrides given as dotted paths; numeric path parts index lists."""
    raw = copy.deepcopy(raw)
    for item in overrides or ():
        if "=" not in item:
            raise ConfigInvalid(item, "override must look like key=value")
        path, text = item.split("=", 1)
        parts = path.strip().split(".")
        target = raw
        for part in parts[:-1]:
            if isinstance(target, list):
                try:
                    target = target[int(part)]
                except (ValueError, IndexError):
                    raise ConfigInvalid(path, f"no list element {part}") from None
            elif isinstance(target, dict):
                target = target.setdefault(part, {})
            else:
                raise ConfigInvalid(path, f"{part!r} is inside a plain value")
        last = parts[-1]
        if isinstance(target, list):
            try:
                target[int(last)] = _parse_value(text.strip())
            except (ValueError, IndexError):
                raise ConfigInvalid(path, f"no list element {last}") from None
        elif isinstance(target, dict):
            target[last] = _parse_value(text.strip())
        else:
            raise ConfigInvalid(path, f"{last!r} is inside a plain value")
        logger.debug("Override %s = %r", path, text)
    return raw


def _merge(base, top):
    out = dict(base)
    for key, value in top.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = value
    return out


def load_config(path=None, preset=None, overrides=()) -> RunConfig:
    """Read a TOML config (optionally on top of a preset) and apply overrides."""
    from scenario_presets import get_preset

    raw = {}
    if path is not None:
        try:
            with Path(path).open("rb") as f:
                raw = tomllib.load(f)
        except OSError as e:
            raise ConfigInvalid("config", f"cannot read {path}: {e.strerror}") from None
        except tomllib.TOMLDecodeError as e:
            raise ConfigInvalid("config", f"{path}: {e}") from None

    base_name = preset or raw.get("preset")
    if base_name is not None:
        base = get_preset(base_name).to_dict()
        raw = _merge(base, {k: v for k, v in raw.items() if k != "preset"})
    raw = apply_overrides(raw, overrides)
    config = from_dict(raw)
    logger.info("Loaded config %r with %d nodes", config.name, len(config.nodes))
    return config
