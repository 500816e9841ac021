# network_simulator.py
"""
Deterministic discrete-event harness around the voting state machine.

One simpy Environment drives every node. Simulated time is in integer
milliseconds; simpy orders events by (time, priority, insertion id), which
is what makes two runs with the same inputs produce the same log.
"""
import logging
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Dict, Iterable, Mapping, Optional, Tuple, Union

import numpy as np
import simpy

from emergency_detector import (
    ACCEL_SENSORS,
    BINARY_SENSORS,
    CALIBRATION_SAMPLES,
    GasCalibration,
    SampleWindow,
    SensorKind,
    ThresholdSet,
    calibrate_gas,
    clip_acceleration,
    fire_latch,
    instant_detections,
    temp_gradient,
    vote_inputs,
)
from errors import (
    ConfigInvalid,
    DuplicateSession,
    InsufficientWindow,
    InvariantViolation,
    MalformedMessage,
    NoLink,
)
from event_log import EventLog
from message_codec import MAX_NODE_ID, MessageKind, decode_message, encode_message
from power_model import EnergyLedger, Stage, StageProfile, record_stage, record_uptime_segment
from sensor_environment import (
    ArmIntrusion,
    Environment,
    NodeOff,
    NodeOn,
    SetLinkLoss,
    StimulusScript,
)
from stats_manager import RunSummary, StatsManager, build_summary
from voting_protocol import (
    WAKE_MESSAGE,
    WAKE_TIMER,
    DecisionRecorded,
    DutyState,
    NodeProtocolState,
    ProtocolConfig,
    ResponseRecorded,
    SendMessage,
    SessionOpened,
    compute_vote,
    duty_transition,
    handle_message,
    initiate_voting_actions,
    next_timer,
    on_timer,
    sensor_wake,
)

logger = logging.getLogger(__name__)

DEFAULT_LATENCY_MS = 2   # 250-byte frame at 1 Mbps
DEFAULT_POLL_INTERVAL_MS = 250

_DUTY_STAGE = {
    DutyState.DEEP_SLEEP: Stage.SLEEP,
    DutyState.IDLE_UPTIME: Stage.LISTEN,
    DutyState.ACTIVE_UPTIME: Stage.ACTIVE,
}


@dataclass(frozen=True)
class LinkModel:
    loss_prob: float = 0.0
    latency_ms: int = DEFAULT_LATENCY_MS
    corrupt_prob: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.loss_prob <= 1.0:
            raise ConfigInvalid("link.loss_prob", "must be within [0, 1]")
        if not 0.0 <= self.corrupt_prob <= 1.0:
            raise ConfigInvalid("link.corrupt_prob", "must be within [0, 1]")
        if not self.latency_ms > 0:
            raise ConfigInvalid("link.latency_ms", "must be > 0")


@dataclass(frozen=True)
class NodeSpec:
    id: int
    room: str = ""
    floor: int = 0


class Topology:
    def __init__(self, nodes: Iterable[NodeSpec], links: Mapping[Tuple[int, int], LinkModel]):
        self.nodes = {n.id: n for n in nodes}
        self.links = dict(links)
        for n in self.nodes:
            if not 0 <= n <= MAX_NODE_ID:
                raise ConfigInvalid(f"topology.nodes.{n}", f"node id must be 0..{MAX_NODE_ID}")
        for a, b in self.links:
            if a == b:
                raise ConfigInvalid(f"topology.links.{a}-{b}", "self-links are not allowed")
            if a not in self.nodes or b not in self.nodes:
                raise ConfigInvalid(f"topology.links.{a}-{b}", "link endpoint is not a node")

    @classmethod
    def full_mesh(cls, nodes, link: LinkModel = LinkModel()):
        specs = [n if isinstance(n, NodeSpec) else NodeSpec(n, room=f"room{n}") for n in nodes]
        ids = [s.id for s in specs]
        links = {(a, b): link for a in ids for b in ids if a != b}
        return cls(specs, links)

    @property
    def node_ids(self):
        return sorted(self.nodes)

    def neighbors(self, node):
        return frozenset(b for (a, b) in self.links if a == node)

    def link(self, a, b) -> LinkModel:
        try:
            return self.links[(a, b)]
        except KeyError:
            raise NoLink(f"no link {a} -> {b}") from None

    def set_loss(self, a, b, loss, symmetric=True):
        pairs = [(a, b), (b, a)] if symmetric else [(a, b)]
        for pair in pairs:
            self.links[pair] = replace(self.link(*pair), loss_prob=loss)

    def copy(self):
        return Topology(self.nodes.values(), self.links)


@dataclass(frozen=True)
class SimSettings:
    poll_interval_ms: int = DEFAULT_POLL_INTERVAL_MS
    noise_sigma: Mapping[SensorKind, float] = field(default_factory=dict)
    armed: bool = False
    profile: StageProfile = StageProfile()

    def __post_init__(self):
        if self.poll_interval_ms <= 0:
            raise ConfigInvalid("simulation.poll_interval_ms", "must be > 0")
        for kind, sigma in self.noise_sigma.items():
            if sigma < 0:
                raise ConfigInvalid(f"simulation.noise_sigma.{kind.value}", "must be >= 0")


@dataclass
class SimNode:
    spec: NodeSpec
    proto: NodeProtocolState
    thresholds: ThresholdSet
    powered: bool = True
    booting: bool = True
    boot_epoch: int = 0
    duty_epoch: int = 0
    calibration: Optional[GasCalibration] = None
    temps: deque = field(default_factory=deque)
    detected: frozenset = frozenset()
    fire_latched: bool = False
    pending: set = field(default_factory=set)
    timer_at: Optional[int] = None
    timer_token: int = 0
    uptime_started: int = 0
    stage: Optional[Stage] = None
    stage_since: int = 0

    @property
    def id(self):
        return self.spec.id


@dataclass
class RunResult:
    seed: int
    events: EventLog
    ledger: EnergyLedger
    counters: StatsManager
    summary: RunSummary
    nodes: Dict[int, SimNode]


class NetworkSimulator:
    def __init__(self, topology: Topology, script: StimulusScript,
                 configs: Union[ProtocolConfig, Mapping[int, ProtocolConfig]],
                 seed: int = 0, thresholds=None, settings: SimSettings = SimSettings()):
        self.topology = topology.copy()
        self.script = script
        self.seed = seed
        self.settings = settings
        self.env = simpy.Environment()
        self.rng = np.random.default_rng(seed)
        self.environment: Environment = script.environment()
        self.events = EventLog()
        self.counters = StatsManager()
        self.ledger = EnergyLedger()
        self.armed = settings.armed
        self._in_flight = {}
        self._next_msg_id = 0

        ids = self.topology.node_ids
        if not ids:
            raise ConfigInvalid("topology.nodes", "at least one node is required")
        if isinstance(configs, ProtocolConfig):
            configs = {n: configs for n in ids}
        missing = [n for n in ids if n not in configs]
        if missing:
            raise ConfigInvalid("nodes", f"no protocol config for nodes {missing}")
        if thresholds is None or isinstance(thresholds, ThresholdSet):
            thresholds = {n: thresholds or ThresholdSet() for n in ids}

        self.configs = dict(configs)
        self.nodes: Dict[int, SimNode] = {}
        for n in ids:
            self.nodes[n] = SimNode(spec=self.topology.nodes[n], proto=self._fresh_state(n),
                                    thresholds=thresholds[n])

    # --- plumbing ---

    @property
    def now(self) -> int:
        return int(self.env.now)

    def _at(self, when, fn, *args):
        event = self.env.timeout(max(0, when - self.now))
        event.callbacks.append(lambda _: fn(*args))

    def _log(self, node, event, **details):
        return self.events.log_event(self.now, node, event, **details)

    def _fresh_state(self, n, next_seq=-1):
        neighbors = self.topology.neighbors(n)
        return NodeProtocolState(
            node_id=n,
            config=self.configs[n],
            neighbors=neighbors,
            peer_weights={p: self.configs[p].node_weight for p in neighbors},
            next_seq=next_seq,
        )

    # --- energy ---

    def _set_stage(self, node: SimNode, stage: Optional[Stage]):
        now = self.now
        if node.stage is not None and now > node.stage_since:
            profile = self.settings.profile
            start_s, end_s = node.stage_since / 1000.0, now / 1000.0
            if node.stage in (Stage.LISTEN, Stage.ACTIVE):
                charged = record_uptime_segment(self.ledger, node.id, node.stage, start_s, end_s,
                                                node.uptime_started / 1000.0, profile)
            else:
                record_stage(self.ledger, node.id, node.stage, end_s - start_s, profile)
                charged = {node.stage: (end_s - start_s) * profile.power_of(node.stage)}
            for st, mj in charged.items():
                self._log(node.id, "energy", stage=st, mJ=mj, since_ms=node.stage_since)
        node.stage = stage
        node.stage_since = now

    # --- duty cycle ---

    def _duty(self, node: SimNode, wake_reason=None):
        before = node.proto.duty
        after = duty_transition(node.proto, self.now, wake_reason)
        node.duty_epoch += 1
        if before is DutyState.DEEP_SLEEP:
            node.uptime_started = self.now
        self._set_stage(node, _DUTY_STAGE[after])
        if after is DutyState.DEEP_SLEEP:
            self._log(node.id, "sleep", until_ms=self.now + node.proto.config.sleep_interval_ms)
            self._at(self.now + node.proto.config.sleep_interval_ms, self._wake, node, node.duty_epoch)
        else:
            self._log(node.id, "wake", state=after, reason=str(wake_reason))
            if after is DutyState.IDLE_UPTIME:
                self._at(self.now + node.proto.config.idle_listen_ms, self._idle_expired,
                         node, node.duty_epoch)

    def _wake(self, node, epoch):
        if node.duty_epoch == epoch and node.powered and node.proto.duty is DutyState.DEEP_SLEEP:
            self._duty(node, WAKE_TIMER)

    def _idle_expired(self, node, epoch):
        if node.duty_epoch == epoch and node.powered and node.proto.duty is DutyState.IDLE_UPTIME:
            self._duty(node)

    def _activate(self, node, reason):
        if node.proto.duty is not DutyState.ACTIVE_UPTIME:
            self._duty(node, reason)

    def _maybe_sleep(self, node):
        if (node.powered and node.proto.duty is DutyState.ACTIVE_UPTIME
                and not node.pending and not node.proto.collecting()):
            self._duty(node)

    # --- boot, failure ---

    def _boot(self, node: SimNode):
        node.powered = True
        node.booting = True
        node.boot_epoch += 1
        node.duty_epoch += 1
        node.calibration = None
        node.temps.clear()
        node.detected = frozenset()
        node.fire_latched = False
        node.pending.clear()
        node.timer_at = None
        node.proto = self._fresh_state(node.id, next_seq=node.proto.next_seq)
        node.uptime_started = self.now
        self._set_stage(node, Stage.SETUP)
        self._log(node.id, "boot", setup_ms=node.proto.config.setup_ms)
        self._at(self.now + node.proto.config.setup_ms, self._finish_boot, node, node.boot_epoch)

    def _finish_boot(self, node, epoch):
        if node.boot_epoch != epoch or not node.powered:
            return
        setup_ms = node.proto.config.setup_ms
        times = np.linspace(self.now - setup_ms, self.now, CALIBRATION_SAMPLES, endpoint=False)
        co = [self.sample_sensor(node.id, SensorKind.CO, t) for t in times]
        odor = [self.sample_sensor(node.id, SensorKind.ODOR_GAS, t) for t in times]
        node.calibration = calibrate_gas(co, odor, preheat_s=setup_ms / 1000.0)
        node.booting = False
        self._log(node.id, "calibrated", baseline_co=node.calibration.baseline_co,
                  baseline_odor=node.calibration.baseline_odor)

        node.proto.duty = DutyState.IDLE_UPTIME
        node.proto.duty_since = self.now
        node.uptime_started = self.now
        node.duty_epoch += 1
        self._set_stage(node, Stage.LISTEN)
        self._log(node.id, "wake", state=DutyState.IDLE_UPTIME, reason="setup_done")
        self._at(self.now + node.proto.config.idle_listen_ms, self._idle_expired, node, node.duty_epoch)

    def fail_node(self, node_id, at_time):
        self._at(at_time, self._fail, self.nodes[node_id])

    def revive_node(self, node_id, at_time):
        self._at(at_time, self._revive, self.nodes[node_id])

    def _fail(self, node):
        if not node.powered:
            return
        self._set_stage(node, None)
        node.powered = False
        node.boot_epoch += 1
        node.duty_epoch += 1
        node.pending.clear()
        node.timer_at = None
        self._log(node.id, "node_off", open_sessions=[s.id for s in node.proto.collecting()])

    def _revive(self, node):
        if node.powered:
            return
        self._log(node.id, "node_on")
        self._boot(node)

    # --- sensing ---

    def sample_sensor(self, node_id, kind: SensorKind, now=None) -> float:
        t = self.now if now is None else now
        value = self.environment.value(node_id, kind, t)
        sigma = self.settings.noise_sigma.get(kind, 0.0)
        if sigma > 0 and kind not in BINARY_SENSORS:
            value += float(self.rng.normal(0.0, sigma))
        if kind in ACCEL_SENSORS:
            value = clip_acceleration(value)
        return float(value)

    def _gradient(self, node):
        try:
            return temp_gradient(list(node.temps), node.thresholds.gradient_interval_s)
        except InsufficientWindow:
            return 0.0

    def _poll_loop(self):
        interval = self.settings.poll_interval_ms
        while True:
            for n in sorted(self.nodes):
                node = self.nodes[n]
                if node.powered and not node.booting:
                    self._poll(node)
            yield self.env.timeout(interval)

    def _poll(self, node: SimNode):
        now = self.now
        reading = {kind: self.sample_sensor(node.id, kind, now) for kind in SensorKind}
        node.temps.append((now / 1000.0, reading[SensorKind.TEMPERATURE]))
        horizon = now / 1000.0 - node.thresholds.gradient_interval_s - 2 * self.settings.poll_interval_ms / 1000.0
        while node.temps and node.temps[0][0] < horizon:
            node.temps.popleft()

        found = instant_detections(reading, node.calibration, self._gradient(node),
                                   node.thresholds, self.armed, node.fire_latched)
        node.fire_latched = fire_latch(node.fire_latched, found, reading[SensorKind.ODOR_GAS],
                                       node.calibration, node.thresholds)
        rising = sorted(found - node.detected)
        node.detected = frozenset(found)
        for scenario in rising:
            self._log(node.id, "detect", scenario=scenario, state=node.proto.duty)
            self._on_detection(node, scenario)

    def _on_detection(self, node, scenario):
        key = ("initiate", scenario)
        if key in node.pending or node.proto.own_collecting(scenario) is not None:
            logger.debug("Node %s: %s re-trigger suppressed", node.id, scenario.name)
            return
        self._activate(node, sensor_wake(scenario))
        self._measure(node, scenario, key, self._initiate)

    def _measure(self, node, scenario, key, done, *args):
        node.pending.add(key)
        cfg = node.proto.config
        self._at(self.now + cfg.sample_window_ms, self._measured, node, node.boot_epoch,
                 scenario, key, done, args)

    def _measured(self, node, epoch, scenario, key, done, args):
        if node.boot_epoch != epoch:
            return
        node.pending.discard(key)
        cfg = node.proto.config
        start = self.now - cfg.sample_window_ms
        times = np.linspace(start, self.now, cfg.sample_count) if cfg.sample_count > 1 else [self.now]
        samples = {kind: [self.sample_sensor(node.id, kind, t) for t in times] for kind in SensorKind}
        window = SampleWindow(samples, gradient=self._gradient(node), armed=self.armed)
        primary, predicate = vote_inputs(scenario, window, node.calibration, node.thresholds)
        vote = compute_vote(primary, predicate, cfg.node_weight)
        self._log(node.id, "vote", scenario=scenario, normalized=vote.normalized,
                  raw_mean=vote.raw_mean, purpose=key[0])
        done(node, scenario, vote, *args)
        self._maybe_sleep(node)

    def _initiate(self, node, scenario, vote):
        if vote.normalized != 1.0:
            return
        try:
            actions = initiate_voting_actions(node.proto, scenario, vote, self.now)
        except DuplicateSession:
            logger.debug("Node %s: %s session already open", node.id, scenario.name)
            return
        self._apply(node, actions)

    def _answer(self, node, scenario, vote, message):
        self._apply(node, handle_message(node.proto, message, self.now, own_vote=vote))

    # --- radio ---

    def transmit(self, sender, to, data: bytes):
        link = self.topology.link(sender, to)
        msg_id = self._next_msg_id
        self._next_msg_id += 1
        self.counters.increment_sent()
        self._log(sender, "send", msg=msg_id, to=to, bytes=len(data), kind=MessageKind(data[0]))

        if self.rng.random() < link.loss_prob:
            self.counters.increment_dropped("loss")
            self._log(to, "drop", msg=msg_id, sender=sender, reason="loss")
            return None
        if link.corrupt_prob > 0 and self.rng.random() < link.corrupt_prob:
            data = data[:-1]
        self._in_flight[msg_id] = (sender, to)
        self._at(self.now + link.latency_ms, self._deliver, msg_id, sender, to, data)
        return msg_id

    def _drop(self, msg_id, sender, to, reason):
        self.counters.increment_dropped(reason)
        self._log(to, "drop", msg=msg_id, sender=sender, reason=reason)

    def _deliver(self, msg_id, sender, to, data):
        del self._in_flight[msg_id]
        node = self.nodes[to]
        if not node.powered:
            return self._drop(msg_id, sender, to, "failed")
        if node.booting:
            return self._drop(msg_id, sender, to, "booting")
        if node.proto.duty is DutyState.DEEP_SLEEP:
            return self._drop(msg_id, sender, to, "asleep")
        try:
            message = decode_message(data)
        except MalformedMessage as e:
            logger.debug("Node %s: %s", to, e)
            return self._drop(msg_id, sender, to, "malformed")

        self.counters.increment_delivered()
        self._log(to, "deliver", msg=msg_id, sender=sender, kind=message.kind,
                  session=message.session, scenario=message.scenario)
        self._activate(node, WAKE_MESSAGE)

        if message.kind == MessageKind.VOTE_REQUEST:
            key = ("request", message.session)
            if key not in node.pending:
                self._measure(node, message.scenario, key, self._answer, message)
            return None
        self._apply(node, handle_message(node.proto, message, self.now))
        self._maybe_sleep(node)
        return None

    # --- protocol actions ---

    def _apply(self, node, actions):
        for action in actions:
            if isinstance(action, SendMessage):
                self.transmit(node.id, action.to, encode_message(action.message))
            elif isinstance(action, SessionOpened):
                self._log(node.id, "session_open", session=action.session_id,
                          scenario=action.scenario, cascaded=action.cascaded,
                          expected=list(action.expected))
            elif isinstance(action, ResponseRecorded):
                self._log(node.id, "response", session=action.session_id,
                          sender=action.sender, normalized=action.vote.normalized,
                          weight=action.vote.weight)
            elif isinstance(action, DecisionRecorded):
                self._log(node.id, "decide", session=action.session_id,
                          scenario=action.scenario, decision=action.decision,
                          total=action.total, source=action.source,
                          rebalanced=action.rebalanced, missing=list(action.missing))
        self._schedule_timer(node)

    def _schedule_timer(self, node):
        due = next_timer(node.proto)
        if due == node.timer_at:
            return
        node.timer_token += 1
        node.timer_at = due
        if due is not None:
            self._at(due, self._timer_fired, node, node.timer_token, node.boot_epoch)

    def _timer_fired(self, node, token, epoch):
        if token != node.timer_token or epoch != node.boot_epoch:
            return
        node.timer_at = None
        self._apply(node, on_timer(node.proto, self.now))
        self._maybe_sleep(node)

    # --- script ---

    def _apply_action(self, action):
        self._log(getattr(action, "node", None), "stimulus", action=action.action)
        if isinstance(action, NodeOff):
            self._fail(self.nodes[action.node])
        elif isinstance(action, NodeOn):
            self._revive(self.nodes[action.node])
        elif isinstance(action, ArmIntrusion):
            self.armed = action.armed
        elif isinstance(action, SetLinkLoss):
            self.topology.set_loss(action.a, action.b, action.loss, action.symmetric)

    def run(self, end_time_ms) -> RunResult:
        for n in sorted(self.nodes):
            self._boot(self.nodes[n])
        for action in self.script.actions:
            self._at(action.at_ms, self._apply_action, action)
        self.env.process(self._poll_loop())
        self.env.run(until=end_time_ms)
        return self._finish()

    def _finish(self) -> RunResult:
        for n in sorted(self.nodes):
            node = self.nodes[n]
            if node.powered:
                self._set_stage(node, node.stage)
        for msg_id, (sender, to) in sorted(self._in_flight.items()):
            self._log(to, "in_flight", msg=msg_id, sender=sender)
        self._check_invariants()

        truth = self.script.truth(armed_by_default=self.settings.armed)
        stimulus_ms = {}
        for scenario in truth:
            first = self.script.first_stimulus_ms(scenario)
            if first is not None:
                stimulus_ms[scenario.name] = first
        summary = build_summary(self.seed, self.events, self.counters, self.ledger,
                                truth, stimulus_ms)
        logger.info("Run seed=%s finished: %d events, accepted=%s", self.seed,
                    len(self.events), summary.accepted)
        return RunResult(self.seed, self.events, self.ledger, self.counters, summary, self.nodes)

    def _check_invariants(self):
        last = 0
        for r in self.events.records:
            if r["time_ms"] < last:
                raise InvariantViolation(f"event at {r['time_ms']} ms logged after {last} ms")
            last = r["time_ms"]

        decided = {}
        for r in self.events.get_all_events("decide"):
            session, decision = r["details"]["session"], r["details"]["decision"]
            if decided.setdefault(session, decision) != decision:
                raise InvariantViolation(f"nodes disagree on the decision of session {session}")

        for r in self.events.get_all_events("deliver"):
            self.topology.link(r["details"]["sender"], r["node"])


def run(topology: Topology, script: StimulusScript, configs, seed: int, end_time: int,
        thresholds=None, settings: SimSettings = SimSettings()) -> RunResult:
    return NetworkSimulator(topology, script, configs, seed, thresholds, settings).run(end_time)
