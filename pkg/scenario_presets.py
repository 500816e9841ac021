# scenario_presets.py
"""
The bench experiments as ready-to-run configurations.

Every preset uses five nodes, one per room, and a duty cycle whose sleep
interval (10 s) is shorter than the vote timeout (20 s), so each live node
wakes up at least once while a session is collecting.
"""
import re
from dataclasses import replace

from errors import ConfigInvalid
from message_codec import ScenarioId
from range_test import RANGE_SCENARIOS
from run_config import NodeEntry, RunConfig
from sensor_environment import (
    ArmIntrusion,
    Door,
    FireStart,
    GasRelease,
    MassDrop,
    Motion,
    NodeOff,
    StimulusScript,
    WaterPresent,
)
from voting_protocol import DEFAULT_REQUIRED_MAJORITY, ProtocolConfig

NODE_IDS = (1, 2, 3, 4, 5)
ROOMS = ("kitchen", "living_room", "bedroom", "bathroom", "hallway")

PRESET_PROTOCOL = ProtocolConfig(
    vote_timeout_ms=20000,
    retransmit_interval_ms=500,
    idle_listen_ms=5000,
    setup_ms=10000,
    sleep_interval_ms=10000,
)

FIRE_IGNITION_MS = 70000
OVEN_INSERT_DELAY_MS = 30000
INSERT_STAGGER_MS = 5000
FIRE_END_MS = 150000
GAS_RELEASE_MS = 20000
GAS_END_MS = 70000
WATER_AT_MS = 15000
WATER_END_MS = 45000
DROP_AT_MS = 20000
DROP_END_MS = 50000
INTRUSION_AT_MS = 20000
INTRUSION_END_MS = 60000
NODEFAIL_OFF_MS = 12000
DISHWASHER_WEIGHT = 2.5


def _nodes(weights=None):
    weights = weights or {}
    return tuple(NodeEntry(n, room=room, weight=weights.get(n, 1.0))
                 for n, room in zip(NODE_IDS, ROOMS))


def _protocol(**majority):
    table = dict(DEFAULT_REQUIRED_MAJORITY)
    for name, value in majority.items():
        table[ScenarioId[name.upper()]] = value
    return replace(PRESET_PROTOCOL, required_majority=table)


def fire_oven(exposed=5):
    script = StimulusScript((FireStart(FIRE_IGNITION_MS, NODE_IDS[:exposed],
                                       stagger_ms=INSERT_STAGGER_MS,
                                       insert_delay_ms=OVEN_INSERT_DELAY_MS),))
    return RunConfig(name=f"fire-oven-{exposed}", end_time_ms=FIRE_END_MS, nodes=_nodes(),
                     protocol=_protocol(fire=2.5), script=script)


def gas_oven(exposed=5):
    script = StimulusScript((GasRelease(GAS_RELEASE_MS, NODE_IDS[:exposed],
                                        stagger_ms=INSERT_STAGGER_MS),))
    return RunConfig(name=f"gas-oven-{exposed}", end_time_ms=GAS_END_MS, nodes=_nodes(),
                     protocol=_protocol(gas_leak=2.5), script=script)


def water_dishwasher(weighted=True):
    weights = {1: DISHWASHER_WEIGHT} if weighted else {}
    script = StimulusScript((WaterPresent(WATER_AT_MS, node=1),))
    name = "water-dishwasher" if weighted else "water-dishwasher-unweighted"
    return RunConfig(name=name, end_time_ms=WATER_END_MS, nodes=_nodes(weights),
                     protocol=_protocol(water_leak=2.5), script=script)


def earthquake_massdrop(exposed=5):
    script = StimulusScript((MassDrop(DROP_AT_MS, NODE_IDS[:exposed]),))
    # unanimity: the majority equals the sum of all weights
    return RunConfig(name=f"earthquake-massdrop-{exposed}", end_time_ms=DROP_END_MS,
                     nodes=_nodes(), protocol=_protocol(earthquake=5.0), script=script)


def _intrusion_actions(case):
    t, until = INTRUSION_AT_MS, INTRUSION_AT_MS + 20000
    if case == "i":
        return ()
    if case == "ii":
        return (Door(t, node=1, open=True),)
    if case == "iii":
        return (Door(t, node=1, open=True), Motion(t, node=2, until_ms=until))
    if case == "iv":
        return (Motion(t, node=2, until_ms=until),)
    if case == "v":
        # intruder opens the door and walks from room 1 into room 2
        return (Door(t, node=1, open=True), Motion(t, node=1, until_ms=t + 10000),
                Motion(t + 10000, node=2, until_ms=until))
    if case == "vi":
        return tuple(Motion(t, node=n, until_ms=until) for n in NODE_IDS)
    raise ConfigInvalid("preset", f"unknown intrusion case {case!r}")


INTRUSION_CASES = ("i", "ii", "iii", "iv", "v", "vi")
INTRUSION_TRUE_CASES = frozenset({"iii", "v", "vi"})


def intrusion_case(case):
    truth = frozenset({ScenarioId.INTRUSION}) if case in INTRUSION_TRUE_CASES else frozenset()
    script = StimulusScript((ArmIntrusion(0),) + _intrusion_actions(case), ground_truth=truth)
    return RunConfig(name=f"intrusion-case-{case}", end_time_ms=INTRUSION_END_MS, nodes=_nodes(),
                     protocol=_protocol(intrusion=2.0), script=script)


def node_failure(switched_off=2):
    if not 0 <= switched_off < len(NODE_IDS):
        raise ConfigInvalid("preset", f"nodefail needs 0..{len(NODE_IDS) - 1} nodes off")
    off = sorted(NODE_IDS, reverse=True)[:switched_off]
    actions = [NodeOff(NODEFAIL_OFF_MS, node=n) for n in sorted(off)]
    actions += [WaterPresent(WATER_AT_MS, node=n) for n in (1, 2, 3)]
    return RunConfig(name=f"nodefail-{switched_off}", end_time_ms=WATER_END_MS, nodes=_nodes(),
                     protocol=_protocol(water_leak=2.5), script=StimulusScript(tuple(actions)))


RUN_PRESETS = {
    "fire-oven": fire_oven,
    "gas-oven": gas_oven,
    "water-dishwasher": lambda: water_dishwasher(True),
    "water-dishwasher-unweighted": lambda: water_dishwasher(False),
    "earthquake-massdrop": earthquake_massdrop,
    "nodefail": node_failure,
    **{f"intrusion-case-{c}": (lambda c=c: intrusion_case(c)) for c in INTRUSION_CASES},
}
RANGE_PRESETS = {f"range-{name}": name for name in RANGE_SCENARIOS}
POWER_PRESET = "power"

_PARAMETERIZED = re.compile(r"^(fire-oven|gas-oven|earthquake-massdrop|nodefail)-(\d+)$")
_MAX_EXPOSED = {"fire-oven": 5, "gas-oven": 5, "earthquake-massdrop": 5, "nodefail": 4}


def preset_names():
    return sorted([*RUN_PRESETS, *RANGE_PRESETS, POWER_PRESET])


def is_range_preset(name):
    return name in RANGE_PRESETS


def get_preset(name) -> RunConfig:
    if name in RUN_PRESETS:
        return RUN_PRESETS[name]()
    match = _PARAMETERIZED.match(name)
    if match:
        base, k = match.group(1), int(match.group(2))
        if k > _MAX_EXPOSED[base]:
            raise ConfigInvalid("preset", f"{name}: at most {_MAX_EXPOSED[base]} for {base}")
        return RUN_PRESETS[base](k)
    if name in RANGE_PRESETS or name == POWER_PRESET:
        raise ConfigInvalid("preset", f"{name!r} is not a simulation run; use the "
                            f"{'range' if name in RANGE_PRESETS else 'power'} command")
    raise ConfigInvalid("preset", f"unknown preset {name!r}")
