# sensor_environment.py
"""
Ground-truth physical fields the simulated sensors sample, and the timed
stimulus script that shapes them.

A sensor reading is  rest + (channel(t) - rest) * exposure(node, t)  so a node
that a stimulus does not reach keeps reading the channel's rest value
(ambient temperature, gas baseline, 1 g on the z axis).
"""
import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, FrozenSet, List, Optional, Tuple

import numpy as np

from emergency_detector import ACCEL_SENSORS, GRAVITY_G, SensorKind
from errors import ConfigInvalid, MissingColumn, ParseError, UnknownChannel
from message_codec import ScenarioId

logger = logging.getLogger(__name__)

TRACE_DIR = Path(__file__).resolve().parent / "traces"
SMOULDERING_FIRE_TRACE = TRACE_DIR / "smouldering_fire.csv"
MASS_DROP_TRACE = TRACE_DIR / "1kg_40cm.csv"
TRACE_IGNITION_MS = 30000   # fire lit in the smouldering trace
TRACE_IMPACT_MS = 4000      # mass hits the table in the mass-drop trace

AMBIENT_TEMP_C = 20.0
CO_REST = 400.0
ODOR_REST = 300.0
OVEN_TEMP_C = 50.0


# --- channels ---

class Channel:
    rest = 0.0

    def __call__(self, t_ms: float) -> float:
        raise NotImplementedError


class ConstantChannel(Channel):
    def __init__(self, value, rest=None):
        self.value = float(value)
        self.rest = self.value if rest is None else float(rest)

    def __call__(self, t_ms):
        return self.value


class HoldChannel(Channel):
    """Zero-order hold over (time_ms, value) points; holds the last value forever."""

    def __init__(self, times_ms, values, rest=None, offset_ms=0):
        self.times = np.asarray(times_ms, dtype=float)
        self.values = np.asarray(values, dtype=float)
        if len(self.times) == 0 or len(self.times) != len(self.values):
            raise ValueError("hold channel needs matching, non-empty time and value series")
        self.rest = float(self.values[0]) if rest is None else float(rest)
        self.offset_ms = offset_ms

    def shifted(self, offset_ms):
        return HoldChannel(self.times, self.values, self.rest, offset_ms)

    def __call__(self, t_ms):
        idx = int(np.searchsorted(self.times, t_ms - self.offset_ms, side="right")) - 1
        return float(self.values[max(idx, 0)])


class RampChannel(Channel):
    def __init__(self, rest, start_ms, peak, rise_ms):
        self.rest = float(rest)
        self.start_ms = start_ms
        self.peak = float(peak)
        self.rise_ms = max(rise_ms, 1)

    def __call__(self, t_ms):
        if t_ms < self.start_ms:
            return self.rest
        frac = min(1.0, (t_ms - self.start_ms) / self.rise_ms)
        return self.rest + (self.peak - self.rest) * frac


class ShakeChannel(Channel):
    """Decaying square-wave vibration around the rest value."""

    def __init__(self, rest, start_ms, amplitude, decay_ms=3000, half_period_ms=20):
        self.rest = float(rest)
        self.start_ms = start_ms
        self.amplitude = float(amplitude)
        self.decay_ms = decay_ms
        self.half_period_ms = half_period_ms

    def __call__(self, t_ms):
        dt = t_ms - self.start_ms
        if dt < 0 or dt > 8 * self.decay_ms:
            return self.rest
        sign = 1.0 if int(dt // self.half_period_ms) % 2 == 0 else -1.0
        return self.rest + sign * self.amplitude * math.exp(-dt / self.decay_ms)


def quiet_channels():
    return {
        SensorKind.CO: ConstantChannel(CO_REST),
        SensorKind.ODOR_GAS: ConstantChannel(ODOR_REST),
        SensorKind.TEMPERATURE: ConstantChannel(AMBIENT_TEMP_C),
        SensorKind.ACCEL_X: ConstantChannel(0.0),
        SensorKind.ACCEL_Y: ConstantChannel(0.0),
        SensorKind.ACCEL_Z: ConstantChannel(GRAVITY_G),
        SensorKind.WATER: ConstantChannel(0.0),
        SensorKind.PIR: ConstantChannel(0.0),
        SensorKind.HALL: ConstantChannel(0.0),
    }


class Environment:
    def __init__(self, channels=None):
        self.channels: Dict[SensorKind, Channel] = quiet_channels() if channels is None else dict(channels)
        self.node_channels: Dict[Tuple[int, SensorKind], Channel] = {}
        self.exposure: Dict[SensorKind, Dict[int, List[Tuple[int, Optional[int]]]]] = {}

    def set_channel(self, kind, channel):
        self.channels[kind] = channel

    def set_node_channel(self, node, kind, channel):
        self.node_channels[(node, kind)] = channel

    def confine(self, kinds):
        """Only nodes exposed later read these channels away from rest."""
        for kind in kinds:
            self.exposure.setdefault(kind, {})

    def expose(self, node, kinds, start_ms, end_ms=None):
        for kind in kinds:
            self.exposure.setdefault(kind, {}).setdefault(node, []).append((start_ms, end_ms))

    def exposure_of(self, node, kind, t_ms):
        mask = self.exposure.get(kind)
        if mask is None:
            return 1.0
        for start, end in mask.get(node, ()):
            if start <= t_ms and (end is None or t_ms < end):
                return 1.0
        return 0.0

    def value(self, node, kind, t_ms):
        channel = self.node_channels.get((node, kind)) or self.channels.get(kind)
        if channel is None:
            raise UnknownChannel(f"no channel for {kind} at node {node}")
        raw = channel(t_ms)
        return channel.rest + (raw - channel.rest) * self.exposure_of(node, kind, t_ms)


def load_trace(path, columns, time_column="Time") -> Dict[object, HoldChannel]:
    """
    Read a comma-separated trace (header row, time in ms) into hold channels.
    columns maps a key of the caller's choice to the column name to read.
    """
    path = Path(path)
    times, series = [], {key: [] for key in columns}
    with path.open(newline="") as f:
        reader = csv.reader(f)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ParseError(1, "empty trace file") from None

        wanted = [time_column, *columns.values()]
        for name in wanted:
            if name not in header:
                raise MissingColumn(f"{path.name}: column {name!r} not in header {header}")
        index = {name: header.index(name) for name in wanted}

        for line_no, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            try:
                t = float(row[index[time_column]])
                values = {key: float(row[index[name]]) for key, name in columns.items()}
            except (ValueError, IndexError) as e:
                raise ParseError(line_no, f"{path.name}: {e}") from None
            if times and t < times[-1]:
                raise ParseError(line_no, f"{path.name}: time goes backwards")
            times.append(t)
            for key, v in values.items():
                series[key].append(v)

    if not times:
        raise ParseError(2, f"{path.name}: trace has no samples")
    logger.debug("Loaded %d samples from %s", len(times), path)
    return {key: HoldChannel(times, series[key]) for key in columns}


# --- stimulus script ---

@dataclass(frozen=True)
class FireStart:
    at_ms: int
    nodes: Tuple[int, ...]
    stagger_ms: int = 0
    insert_delay_ms: int = 0
    oven_temp_c: float = OVEN_TEMP_C
    trace: Optional[str] = None
    action = "fire_start"
    truth = ScenarioId.FIRE


@dataclass(frozen=True)
class GasRelease:
    at_ms: int
    nodes: Tuple[int, ...]
    stagger_ms: int = 0
    peak_odor: float = 1100.0
    peak_co: float = 600.0
    rise_ms: int = 10000
    action = "gas_release"
    truth = ScenarioId.GAS_LEAK


@dataclass(frozen=True)
class WaterPresent:
    at_ms: int
    node: int
    until_ms: Optional[int] = None
    action = "water_present"
    truth = ScenarioId.WATER_LEAK


@dataclass(frozen=True)
class MassDrop:
    at_ms: int
    nodes: Tuple[int, ...]
    amplitude_g: float = 2.0
    decay_ms: int = 3000
    trace: Optional[str] = None
    action = "mass_drop"
    truth = ScenarioId.EARTHQUAKE


@dataclass(frozen=True)
class Motion:
    at_ms: int
    node: int
    until_ms: int
    action = "motion"
    truth = ScenarioId.INTRUSION


@dataclass(frozen=True)
class Door:
    at_ms: int
    node: int
    open: bool = True
    action = "door"
    truth = None


@dataclass(frozen=True)
class NodeOff:
    at_ms: int
    node: int
    action = "node_off"
    truth = None


@dataclass(frozen=True)
class NodeOn:
    at_ms: int
    node: int
    action = "node_on"
    truth = None


@dataclass(frozen=True)
class ArmIntrusion:
    at_ms: int
    armed: bool = True
    action = "arm_intrusion"
    truth = None


@dataclass(frozen=True)
class SetLinkLoss:
    at_ms: int
    a: int
    b: int
    loss: float
    symmetric: bool = True
    action = "set_link_loss"
    truth = None


ACTION_TYPES = {cls.action: cls for cls in (
    FireStart, GasRelease, WaterPresent, MassDrop, Motion, Door,
    NodeOff, NodeOn, ArmIntrusion, SetLinkLoss)}


def _coverage_points(windows):
    bounds = sorted({0, *(s for s, _ in windows), *(e for _, e in windows)})
    points = []
    for b in bounds:
        covered = any(s <= b < e for s, e in windows)
        points.append((b, 1.0 if covered else 0.0))
    return points


@dataclass(frozen=True)
class StimulusScript:
    actions: Tuple[object, ...] = ()
    ground_truth: Optional[FrozenSet[ScenarioId]] = None

    def __post_init__(self):
        last = -1
        for i, action in enumerate(self.actions):
            if action.at_ms < last:
                raise ConfigInvalid(f"script.{i}.at_ms", "action times must be non-decreasing")
            last = action.at_ms

    def truth(self, armed_by_default=False):
        if self.ground_truth is not None:
            return frozenset(self.ground_truth)
        armed = armed_by_default or any(isinstance(a, ArmIntrusion) and a.armed for a in self.actions)
        found = set()
        for action in self.actions:
            if action.truth is ScenarioId.INTRUSION and not armed:
                continue
            if action.truth is not None:
                found.add(action.truth)
        return frozenset(found)

    def first_stimulus_ms(self, scenario):
        times = [a.at_ms for a in self.actions if a.truth is scenario]
        return min(times) if times else None

    def environment(self) -> Environment:
        env = Environment()
        motion: Dict[int, List[Tuple[int, int]]] = {}
        doors: Dict[int, List[Tuple[int, float]]] = {}

        for action in self.actions:
            if isinstance(action, FireStart):
                _apply_fire(env, action)
            elif isinstance(action, GasRelease):
                _apply_gas(env, action)
            elif isinstance(action, WaterPresent):
                points = [(0, 0.0), (action.at_ms, 1.0)]
                if action.until_ms is not None:
                    points.append((action.until_ms, 0.0))
                times, values = zip(*points)
                env.set_node_channel(action.node, SensorKind.WATER,
                                     HoldChannel(times, values, rest=0.0))
            elif isinstance(action, MassDrop):
                _apply_mass_drop(env, action)
            elif isinstance(action, Motion):
                motion.setdefault(action.node, []).append((action.at_ms, action.until_ms))
            elif isinstance(action, Door):
                doors.setdefault(action.node, []).append((action.at_ms, 1.0 if action.open else 0.0))

        for node, windows in motion.items():
            times, values = zip(*_coverage_points(windows))
            env.set_node_channel(node, SensorKind.PIR, HoldChannel(times, values, rest=0.0))
        for node, changes in doors.items():
            times, values = zip(*([(0, 0.0)] + changes))
            env.set_node_channel(node, SensorKind.HALL, HoldChannel(times, values, rest=0.0))
        return env


def _apply_fire(env, action: FireStart):
    trace = load_trace(action.trace or SMOULDERING_FIRE_TRACE,
                       {SensorKind.CO: "CO", SensorKind.ODOR_GAS: "Odor"})
    offset = action.at_ms - TRACE_IGNITION_MS
    env.set_channel(SensorKind.CO, trace[SensorKind.CO].shifted(offset))
    env.set_channel(SensorKind.ODOR_GAS, trace[SensorKind.ODOR_GAS].shifted(offset))
    env.set_channel(SensorKind.TEMPERATURE, ConstantChannel(action.oven_temp_c, rest=AMBIENT_TEMP_C))
    env.confine((SensorKind.CO, SensorKind.ODOR_GAS, SensorKind.TEMPERATURE))
    for k, node in enumerate(action.nodes):
        start = action.at_ms + action.insert_delay_ms + k * action.stagger_ms
        env.expose(node, (SensorKind.CO, SensorKind.ODOR_GAS, SensorKind.TEMPERATURE), start)


def _apply_gas(env, action: GasRelease):
    env.set_channel(SensorKind.ODOR_GAS, RampChannel(ODOR_REST, action.at_ms, action.peak_odor, action.rise_ms))
    env.set_channel(SensorKind.CO, RampChannel(CO_REST, action.at_ms, action.peak_co, action.rise_ms))
    env.confine((SensorKind.CO, SensorKind.ODOR_GAS))
    for k, node in enumerate(action.nodes):
        env.expose(node, (SensorKind.CO, SensorKind.ODOR_GAS), action.at_ms + k * action.stagger_ms)


def _apply_mass_drop(env, action: MassDrop):
    if action.trace:
        trace = load_trace(action.trace, {kind: col for kind, col in zip(ACCEL_SENSORS, "XYZ")})
        offset = action.at_ms - TRACE_IMPACT_MS
        for kind in ACCEL_SENSORS:
            env.set_channel(kind, trace[kind].shifted(offset))
        env.channels[SensorKind.ACCEL_Z].rest = GRAVITY_G
        env.channels[SensorKind.ACCEL_X].rest = 0.0
        env.channels[SensorKind.ACCEL_Y].rest = 0.0
    else:
        env.set_channel(SensorKind.ACCEL_X, ShakeChannel(0.0, action.at_ms, 0.15 * action.amplitude_g, action.decay_ms, 30))
        env.set_channel(SensorKind.ACCEL_Y, ShakeChannel(0.0, action.at_ms, 0.15 * action.amplitude_g, action.decay_ms, 25))
        env.set_channel(SensorKind.ACCEL_Z, ShakeChannel(GRAVITY_G, action.at_ms, action.amplitude_g, action.decay_ms))
    env.confine(ACCEL_SENSORS)
    for node in action.nodes:
        env.expose(node, ACCEL_SENSORS, action.at_ms)


def action_from_dict(entry: dict, index: int):
    """Build one script action from its config-file form."""
    entry = dict(entry)
    name = entry.pop("action", None)
    cls = ACTION_TYPES.get(name)
    if cls is None:
        raise ConfigInvalid(f"script.{index}.action", f"unknown action {name!r}")
    allowed = set(cls.__dataclass_fields__)
    for key in entry:
        if key not in allowed:
            raise ConfigInvalid(f"script.{index}.{key}", "unknown key")
    if "nodes" in entry:
        entry["nodes"] = tuple(entry["nodes"])
    try:
        return cls(**entry)
    except TypeError as e:
        raise ConfigInvalid(f"script.{index}", str(e)) from None


def action_to_dict(action) -> dict:
    out = {"action": action.action}
    for name in action.__dataclass_fields__:
        value = getattr(action, name)
        if isinstance(value, tuple):
            value = list(value)
        out[name] = value
    return out
