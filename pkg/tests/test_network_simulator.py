from dataclasses import replace

import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import binom

import network_simulator
from emergency_detector import SensorKind
from errors import ConfigInvalid, NoLink
from message_codec import ScenarioId, SessionId, encode_message, vote_notification
from network_simulator import LinkModel, NetworkSimulator, NodeSpec, SimSettings, Topology
from power_model import MEASURED_AVERAGES_MW, Stage
from scenario_presets import (
    INTRUSION_CASES,
    earthquake_massdrop,
    fire_oven,
    gas_oven,
    intrusion_case,
    node_failure,
    water_dishwasher,
)
from sensor_environment import (
    SMOULDERING_FIRE_TRACE,
    FireStart,
    NodeOff,
    NodeOn,
    SetLinkLoss,
    StimulusScript,
    WaterPresent,
    load_trace,
)
from voting_protocol import ProtocolConfig

FAST = ProtocolConfig(vote_timeout_ms=2000, retransmit_interval_ms=500)


def simulate(config, seed=0):
    return network_simulator.run(config.topology(), config.script, config.node_configs(), seed,
                                 config.end_time_ms, config.node_thresholds(), config.simulation)


def accepted(config, seed=0):
    return set(simulate(config, seed).summary.accepted)


def test_same_inputs_same_log():
    config = fire_oven(3)
    first = simulate(config, seed=11).events.to_lines()
    second = simulate(config, seed=11).events.to_lines()
    assert first == second
    assert len(first) > 100


@pytest.mark.parametrize("exposed", range(6))
def test_fire_needs_three_exposed_nodes(exposed):
    result = simulate(fire_oven(exposed))
    assert ("FIRE" in result.summary.accepted) is (exposed >= 3)
    if exposed >= 3:
        notifications = [r for r in result.events.get_all_events("send")
                         if r["details"]["kind"] == "VOTE_NOTIFICATION"]
        assert notifications
    assert result.summary.false_positives == []


@pytest.mark.parametrize("build", [fire_oven, gas_oven, earthquake_massdrop])
def test_nobody_exposed_nothing_accepted(build):
    result = simulate(build(0))
    assert result.summary.accepted == []
    assert result.events.count("detect") == 0
    assert result.events.count("session_open") == 0


def test_gas_leak_accepted_when_all_exposed():
    result = simulate(gas_oven(5))
    assert result.summary.accepted == ["GAS_LEAK"]
    assert result.summary.false_positives == []


def test_lasting_fire_is_not_taken_for_gas():
    config = replace(fire_oven(5), end_time_ms=300000)
    result = simulate(config)
    assert result.summary.accepted == ["FIRE"]
    assert result.events.count("detect", scenario="GAS_LEAK") == 0


def test_weighted_node_decides_alone():
    result = simulate(water_dishwasher(weighted=True))
    assert "WATER_LEAK" in result.summary.accepted
    positive = {r["node"] for r in result.events.get_all_events(
        "vote", scenario="WATER_LEAK", normalized=1.0)}
    assert positive == {1}


def test_unweighted_single_voter_rejected():
    result = simulate(water_dishwasher(weighted=False))
    assert result.summary.accepted == []
    assert result.summary.false_negatives == ["WATER_LEAK"]
    assert any(not s["decision"] for s in result.summary.sessions)


@pytest.mark.parametrize("exposed,expected", [(4, False), (5, True)])
def test_earthquake_needs_unanimity(exposed, expected):
    assert ("EARTHQUAKE" in accepted(earthquake_massdrop(exposed))) is expected


@pytest.mark.parametrize("case", INTRUSION_CASES)
def test_intrusion_cases(case):
    result = simulate(intrusion_case(case))
    opened = result.events.count("session_open")
    if case in ("i", "ii"):
        assert opened == 0
    else:
        assert opened > 0
    assert ("INTRUSION" in result.summary.accepted) is (case in ("iii", "v", "vi"))
    assert result.summary.false_positives == []
    assert result.summary.false_negatives == []


def test_three_live_nodes_match_full_network():
    for seed in range(100):
        full = "WATER_LEAK" in accepted(node_failure(0), seed)
        degraded = "WATER_LEAK" in accepted(node_failure(2), seed)
        assert full == degraded, f"seed {seed}"


def _lone_voter(strict):
    base = node_failure(3)
    script = StimulusScript((NodeOff(12000, 3), NodeOff(12000, 4), NodeOff(12000, 5),
                             WaterPresent(15000, 1)))
    return replace(base, script=script, protocol=replace(base.protocol, strict_majority=strict))


def test_single_positive_voter_rebalanced_to_majority():
    result = simulate(_lone_voter(strict=False))
    (session,) = result.summary.sessions
    assert session["rebalanced"]
    assert session["total"] == pytest.approx(2.5)
    assert session["decision"]


def test_strict_majority_refuses_lone_voter():
    assert "WATER_LEAK" not in accepted(_lone_voter(strict=True))


def test_retransmits_until_deadline():
    topo = Topology.full_mesh([1, 2])
    script = StimulusScript((NodeOff(0, 2), WaterPresent(12000, 1)))
    result = network_simulator.run(topo, script, FAST, seed=0, end_time=30000)
    requests = result.events.get_all_events("send", kind="VOTE_REQUEST", to=2)
    assert len(requests) == 4
    assert [r["time_ms"] for r in requests] == [13000, 13500, 14000, 14500]
    (decide,) = result.events.get_all_events("decide", source="tally")
    assert decide["time_ms"] == 15000
    assert decide["details"]["missing"] == [2]
    assert result.summary.messages["dropped"]["failed"] == 5


def test_delivery_after_link_latency():
    sim = NetworkSimulator(Topology.full_mesh([1, 2]), StimulusScript(), ProtocolConfig())
    sim.nodes[2].booting = False
    data = encode_message(vote_notification(SessionId(1, 0), 1, ScenarioId.FIRE, False, 0.0))
    sim.transmit(1, 2, data)
    sim.env.run(until=10)
    (deliver,) = sim.events.get_all_events("deliver")
    assert deliver["time_ms"] == network_simulator.DEFAULT_LATENCY_MS


def test_total_loss_never_delivers():
    sim = NetworkSimulator(Topology.full_mesh([1, 2], LinkModel(loss_prob=1.0)),
                           StimulusScript(), ProtocolConfig())
    assert all(sim.transmit(1, 2, b"\x03") is None for _ in range(100))
    assert sim.counters.get_stats()["dropped"]["loss"] == 100


def test_loss_rate_within_binomial_bounds():
    low, high = binom.interval(0.99, 1000, 1 - 0.043)
    inside = 0
    for seed in range(10):
        sim = NetworkSimulator(Topology.full_mesh([1, 2], LinkModel(loss_prob=0.043)),
                               StimulusScript(), ProtocolConfig(), seed=seed)
        received = sum(sim.transmit(1, 2, b"\x03") is not None for _ in range(1000))
        inside += low <= received <= high
    assert inside >= 9


def test_transmit_without_link():
    topo = Topology([NodeSpec(1), NodeSpec(2)], {})
    sim = NetworkSimulator(topo, StimulusScript(), ProtocolConfig())
    with pytest.raises(NoLink):
        sim.transmit(1, 2, b"\x01")


def test_in_flight_messages_are_reported():
    topo = Topology.full_mesh([1, 2], LinkModel(latency_ms=100))
    sim = NetworkSimulator(topo, StimulusScript(), ProtocolConfig())
    data = encode_message(vote_notification(SessionId(1, 0), 1, ScenarioId.FIRE, False, 0.0))
    sim.transmit(1, 2, data)
    result = sim.run(50)
    assert result.summary.messages["in_flight"] == 1
    assert result.events.count("in_flight") == 1


def test_messages_reconcile_with_log():
    messages = simulate(fire_oven(5)).summary.messages
    assert messages["sent"] == (messages["delivered"] + sum(messages["dropped"].values())
                                + messages["in_flight"])
    assert messages["dropped"]["asleep"] > 0


def test_revived_node_boots_and_recalibrates():
    script = StimulusScript((NodeOff(12000, 2), NodeOn(20000, 2)))
    result = network_simulator.run(Topology.full_mesh([1, 2]), script, ProtocolConfig(),
                                   seed=0, end_time=40000)
    boots = [r["time_ms"] for r in result.events.get_all_events("calibrated") if r["node"] == 2]
    assert boots == [10000, 30000]
    assert result.events.count("node_off") == 1


def test_failed_initiator_leaves_cascaded_session():
    base = intrusion_case("iii")
    script = StimulusScript(base.script.actions + (SetLinkLoss(20000, 2, 5, 1.0), NodeOff(30000, 2)),
                            ground_truth=base.script.ground_truth)
    result = simulate(replace(base, script=script))

    (node_off,) = result.events.get_all_events("node_off")
    orphaned = node_off["details"]["open_sessions"]
    assert orphaned and all(s.startswith("2:") for s in orphaned)
    tallied = {r["details"]["session"] for r in result.events.get_all_events("decide", source="tally")}
    assert not tallied & set(orphaned)
    cascaded = {r["details"]["session"] for r in result.events.get_all_events(
        "session_open", cascaded=True)}
    assert cascaded & tallied


def test_water_detected_at_first_poll():
    for at_ms, expected in ((30000, 30000), (30100, 30250)):
        script = StimulusScript((WaterPresent(at_ms, 1),))
        result = network_simulator.run(Topology.full_mesh([1, 2]), script, FAST, seed=0,
                                       end_time=at_ms + 5000)
        (detect,) = result.events.get_all_events("detect", scenario="WATER_LEAK")
        assert detect["time_ms"] == expected


def test_fire_trace_detection_delay():
    # ignite once a full temperature-gradient window has been polled
    ignition = 90000
    script = StimulusScript((FireStart(ignition, (1,)),))
    result = network_simulator.run(Topology.full_mesh([1, 2]), script, FAST, seed=0,
                                   end_time=ignition + 30000)
    (detect,) = result.events.get_all_events("detect", scenario="FIRE")
    assert 7000 <= detect["time_ms"] - ignition <= 13000
    assert result.events.count("detect", scenario="GAS_LEAK") == 0


def test_sample_sensor_reads_channels():
    script = StimulusScript((FireStart(30000, (1,)),))
    sim = NetworkSimulator(Topology.full_mesh([1, 2]), script, ProtocolConfig())
    co = load_trace(SMOULDERING_FIRE_TRACE, {"co": "CO"})["co"]
    assert sim.sample_sensor(1, SensorKind.CO, 45000) == co(45000)
    assert sim.sample_sensor(2, SensorKind.CO, 45000) == co(0)
    assert sim.sample_sensor(1, SensorKind.WATER, 45000) == 0.0
    assert sim.sample_sensor(1, SensorKind.ACCEL_Z, 0) == 1.0


def test_noise_is_seeded_and_clipped():
    settings = SimSettings(noise_sigma={SensorKind.ACCEL_Z: 5.0, SensorKind.WATER: 5.0})
    a = NetworkSimulator(Topology.full_mesh([1, 2]), StimulusScript(), ProtocolConfig(),
                         seed=4, settings=settings)
    b = NetworkSimulator(Topology.full_mesh([1, 2]), StimulusScript(), ProtocolConfig(),
                         seed=4, settings=settings)
    za = [a.sample_sensor(1, SensorKind.ACCEL_Z, 0) for _ in range(50)]
    assert za == [b.sample_sensor(1, SensorKind.ACCEL_Z, 0) for _ in range(50)]
    assert all(-2.0 <= z <= 2.0 for z in za)
    assert a.sample_sensor(1, SensorKind.WATER, 0) == 0.0


@pytest.mark.parametrize("sleep_s,measured", MEASURED_AVERAGES_MW)
def test_quiet_network_average_power(sleep_s, measured):
    topo = Topology.full_mesh([1, 2])
    config = ProtocolConfig(sleep_interval_ms=int(sleep_s * 1000))
    # boot, then nine 5 s listen + sleep cycles
    result = network_simulator.run(topo, StimulusScript(), config, seed=0,
                                   end_time=10000 + 9 * (5000 + config.sleep_interval_ms))
    assert result.ledger.average_mW(1, exclude=(Stage.SETUP,)) == pytest.approx(measured, rel=0.15)
    assert result.ledger.mJ[1][Stage.SETUP] == pytest.approx(4250.0)


def test_topology_validation():
    with pytest.raises(ConfigInvalid):
        Topology([NodeSpec(1)], {(1, 1): LinkModel()})
    with pytest.raises(ConfigInvalid):
        Topology([NodeSpec(1)], {(1, 2): LinkModel()})
    with pytest.raises(ConfigInvalid):
        LinkModel(loss_prob=1.5)
    with pytest.raises(ConfigInvalid):
        Topology.full_mesh([1, 0xFFFF])


def test_missing_protocol_config():
    with pytest.raises(ConfigInvalid):
        NetworkSimulator(Topology.full_mesh([1, 2]), StimulusScript(), {1: ProtocolConfig()})


@st.composite
def small_networks(draw):
    ids = list(range(1, draw(st.integers(2, 10)) + 1))
    loss = draw(st.sampled_from([0.0, 0.05, 0.3]))
    wet = draw(st.lists(st.sampled_from(ids), min_size=1, max_size=len(ids), unique=True))
    off = draw(st.lists(st.sampled_from(ids), max_size=2, unique=True))
    at_ms = draw(st.integers(11000, 30000))
    actions = [NodeOff(10500, n) for n in sorted(off)] + [WaterPresent(at_ms, n) for n in sorted(wet)]
    return Topology.full_mesh(ids, LinkModel(loss_prob=loss)), StimulusScript(tuple(actions))


def _sends_while_not_awake(events):
    state, bad = {}, []
    for r in events.records:
        event, node = r["event"], r["node"]
        if event in ("boot", "wake"):
            state[node] = "up"
        elif event == "sleep":
            state[node] = "asleep"
        elif event == "node_off":
            state[node] = "off"
        elif event == "send" and state.get(node) != "up":
            bad.append(r)
    return bad


@settings(max_examples=20, deadline=None)
@given(small_networks(), st.integers(0, 2**16))
def test_random_networks_stay_consistent(network, seed):
    topo, script = network
    config = ProtocolConfig(vote_timeout_ms=20000, sleep_interval_ms=10000)
    first = network_simulator.run(topo, script, config, seed=seed, end_time=60000)
    again = network_simulator.run(topo, script, config, seed=seed, end_time=60000)
    assert first.events.to_lines() == again.events.to_lines()

    decisions = {}
    for r in first.events.get_all_events("decide"):
        decisions.setdefault(r["details"]["session"], set()).add(r["details"]["decision"])
    assert all(len(d) == 1 for d in decisions.values())

    assert _sends_while_not_awake(first.events) == []
    messages = first.summary.messages
    assert messages["sent"] == (messages["delivered"] + sum(messages["dropped"].values())
                                + messages["in_flight"])
