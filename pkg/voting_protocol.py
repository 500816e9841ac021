# voting_protocol.py
"""
Sans-IO node state machine for weighted-majority emergency voting.

Every public operation is a synchronous transition: it takes the node state,
an input and the current simulated time, mutates the state and returns the
actions the harness has to carry out (send a datagram, log a decision, ...).
Nothing in here owns a clock, a socket or a thread.
"""
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Dict, FrozenSet, List, Optional, Sequence, Tuple

import numpy as np

from errors import (
    ConfigInvalid,
    DuplicateSession,
    DutyViolation,
    EmptySampleWindow,
    IllegalTransition,
    NoRespondents,
    ProtocolError,
)
from message_codec import (
    MAX_SEQ,
    Message,
    MessageKind,
    NodeId,
    ScenarioId,
    SessionId,
    vote_notification,
    vote_request,
    vote_response,
)

logger = logging.getLogger(__name__)

DEFAULT_NODE_WEIGHT = 1.0
DEFAULT_VOTE_TIMEOUT_MS = 2000
DEFAULT_RETRANSMIT_INTERVAL_MS = 500
DEFAULT_IDLE_LISTEN_MS = 5000
DEFAULT_SETUP_MS = 10000
DEFAULT_SLEEP_INTERVAL_MS = 60000
ALLOWED_SLEEP_INTERVALS_MS = (10000, 30000, 60000)
DEFAULT_SAMPLE_COUNT = 10
DEFAULT_SAMPLE_WINDOW_MS = 1000
DEFAULT_CASCADE_HOLDOFF_MS = 30000

# Majority comparisons tolerate float rounding from rebalancing (e.g. 3 x 5/3).
MAJORITY_TOLERANCE = 1e-9

DEFAULT_REQUIRED_MAJORITY = {
    ScenarioId.FIRE: 2.5,
    ScenarioId.GAS_LEAK: 2.5,
    ScenarioId.WATER_LEAK: 2.5,
    ScenarioId.EARTHQUAKE: 5.0,
    ScenarioId.INTRUSION: 2.0,
}


@dataclass(frozen=True)
class Vote:
    raw_mean: float
    normalized: float
    weight: float

    def __post_init__(self):
        if self.normalized not in (0.0, 1.0):
            raise ValueError(f"normalized vote must be 0.0 or 1.0, got {self.normalized}")
        if not self.weight >= 0:
            raise ValueError(f"vote weight must be non-negative, got {self.weight}")


@dataclass(frozen=True)
class ProtocolConfig:
    node_weight: float = DEFAULT_NODE_WEIGHT
    required_majority: Dict[ScenarioId, float] = field(
        default_factory=lambda: dict(DEFAULT_REQUIRED_MAJORITY))
    vote_timeout_ms: int = DEFAULT_VOTE_TIMEOUT_MS
    retransmit_interval_ms: int = DEFAULT_RETRANSMIT_INTERVAL_MS
    idle_listen_ms: int = DEFAULT_IDLE_LISTEN_MS
    setup_ms: int = DEFAULT_SETUP_MS
    sleep_interval_ms: int = DEFAULT_SLEEP_INTERVAL_MS
    sample_count: int = DEFAULT_SAMPLE_COUNT
    sample_window_ms: int = DEFAULT_SAMPLE_WINDOW_MS
    initial_seq: int = 0
    strict_majority: bool = False
    rebalance: bool = True
    cascade_holdoff_ms: int = DEFAULT_CASCADE_HOLDOFF_MS

    def __post_init__(self):
        if not self.node_weight >= 0:
            raise ConfigInvalid("protocol.node_weight", "must be >= 0")
        for scenario in ScenarioId:
            majority = self.required_majority.get(scenario)
            if majority is None:
                raise ConfigInvalid(f"protocol.required_majority.{scenario.name.lower()}", "missing")
            if not majority > 0:
                raise ConfigInvalid(f"protocol.required_majority.{scenario.name.lower()}", "must be > 0")
        if self.vote_timeout_ms <= 0:
            raise ConfigInvalid("protocol.vote_timeout_ms", "must be > 0")
        if not 0 < self.retransmit_interval_ms < self.vote_timeout_ms:
            raise ConfigInvalid("protocol.retransmit_interval_ms", "must be > 0 and < vote_timeout_ms")
        if self.sleep_interval_ms not in ALLOWED_SLEEP_INTERVALS_MS:
            raise ConfigInvalid("protocol.sleep_interval_ms",
                                f"must be one of {ALLOWED_SLEEP_INTERVALS_MS}")
        if self.idle_listen_ms <= 0 or self.setup_ms < 0:
            raise ConfigInvalid("protocol.idle_listen_ms", "idle window must be > 0, setup >= 0")
        if self.sample_count < 1 or self.sample_window_ms < 0:
            raise ConfigInvalid("protocol.sample_count", "need at least one sample")
        if not 0 <= self.initial_seq <= MAX_SEQ:
            raise ConfigInvalid("protocol.initial_seq", "must fit in 32 bits")

    def majority_for(self, scenario):
        return self.required_majority[ScenarioId(scenario)]


class DutyState(Enum):
    DEEP_SLEEP = "deep_sleep"
    IDLE_UPTIME = "idle_uptime"
    ACTIVE_UPTIME = "active_uptime"


class WakeKind(Enum):
    TIMER = "timer"
    SENSOR_THRESHOLD = "sensor_threshold"
    EXTERNAL_MESSAGE = "external_message"


@dataclass(frozen=True)
class WakeReason:
    kind: WakeKind
    scenario: Optional[ScenarioId] = None

    def __str__(self):
        if self.scenario is None:
            return self.kind.value
        return f"{self.kind.value}({self.scenario.name})"


WAKE_TIMER = WakeReason(WakeKind.TIMER)
WAKE_MESSAGE = WakeReason(WakeKind.EXTERNAL_MESSAGE)


def sensor_wake(scenario):
    return WakeReason(WakeKind.SENSOR_THRESHOLD, ScenarioId(scenario))


class SessionState(Enum):
    COLLECTING = "collecting"
    DECIDED = "decided"


@dataclass
class VotingSession:
    id: SessionId
    scenario: ScenarioId
    own_vote: Vote
    expected: FrozenSet[NodeId]
    weights: Dict[NodeId, float]
    deadline: int
    next_retransmit: int
    opened_at: int = 0
    cascaded: bool = False
    responses: Dict[NodeId, Vote] = field(default_factory=dict)
    state: SessionState = SessionState.COLLECTING
    decision: Optional[bool] = None
    total: Optional[float] = None

    def missing(self):
        return sorted(self.expected - self.responses.keys())

    @property
    def complete(self):
        return not self.missing()

    def decide(self, decision, total):
        if self.state is SessionState.DECIDED:
            raise ProtocolError(f"session {self.id} already decided")
        self.state = SessionState.DECIDED
        self.decision = bool(decision)
        self.total = float(total)


@dataclass
class NodeProtocolState:
    node_id: NodeId
    config: ProtocolConfig
    neighbors: FrozenSet[NodeId] = frozenset()
    peer_weights: Dict[NodeId, float] = field(default_factory=dict)
    duty: DutyState = DutyState.IDLE_UPTIME
    duty_since: int = 0
    wake_reason: Optional[WakeReason] = None
    sessions: Dict[SessionId, VotingSession] = field(default_factory=dict)
    decisions: Dict[SessionId, bool] = field(default_factory=dict)
    last_decision_ms: Dict[ScenarioId, int] = field(default_factory=dict)
    next_seq: int = -1

    def __post_init__(self):
        if self.node_id in self.neighbors:
            raise ConfigInvalid(f"node.{self.node_id}", "a node cannot be its own neighbor")
        self.neighbors = frozenset(self.neighbors)
        if self.next_seq < 0:
            self.next_seq = self.config.initial_seq

    def own_collecting(self, scenario):
        for session in self.sessions.values():
            if (session.scenario == scenario and session.id.initiator == self.node_id
                    and session.state is SessionState.COLLECTING):
                return session
        return None

    def collecting(self):
        return [s for s in self.sessions.values() if s.state is SessionState.COLLECTING]

    def in_holdoff(self, scenario, now):
        last = self.last_decision_ms.get(scenario)
        return last is not None and now - last < self.config.cascade_holdoff_ms


# --- actions returned to the harness ---

@dataclass(frozen=True)
class SendMessage:
    to: NodeId
    message: Message


@dataclass(frozen=True)
class SessionOpened:
    session_id: SessionId
    scenario: ScenarioId
    cascaded: bool
    expected: Tuple[NodeId, ...]


@dataclass(frozen=True)
class ResponseRecorded:
    session_id: SessionId
    sender: NodeId
    vote: Vote


@dataclass(frozen=True)
class DecisionRecorded:
    session_id: SessionId
    scenario: ScenarioId
    decision: bool
    total: float
    source: str  # "tally" or "notification"
    rebalanced: bool = False
    missing: Tuple[NodeId, ...] = ()


def compute_vote(samples: Sequence[float], predicate: Callable[[Sequence[float]], bool],
                 weight: float) -> Vote:
    if len(samples) == 0:
        raise EmptySampleWindow("cannot vote on an empty sample window")
    raw_mean = float(np.mean(samples))
    normalized = 1.0 if predicate(samples) else 0.0
    return Vote(raw_mean=raw_mean, normalized=normalized, weight=float(weight))


def rebalance_weights(all_weights: Dict[NodeId, float], responding) -> Dict[NodeId, float]:
    """
    Scale the responders' weights so that they keep their mutual ratios and
    together carry the weight of the whole network.
    """
    responding = set(responding)
    if not responding:
        raise NoRespondents("no node responded; session cannot be tallied")
    unknown = responding - all_weights.keys()
    if unknown:
        raise ValueError(f"responders without a known weight: {sorted(unknown)}")

    total = math.fsum(all_weights.values())
    responding_total = math.fsum(all_weights[n] for n in responding)
    if responding_total <= 0:
        return {n: 0.0 for n in sorted(responding)}
    scale = total / responding_total
    return {n: all_weights[n] * scale for n in sorted(responding)}


def weighted_total(session: VotingSession, rebalanced: bool) -> float:
    votes = dict(session.responses)
    votes[session.id.initiator] = session.own_vote
    weights = {n: v.weight for n, v in votes.items()}

    if rebalanced and session.missing():
        all_weights = dict(session.weights)
        all_weights.update(weights)
        weights = rebalance_weights(all_weights, votes.keys())

    return math.fsum(votes[n].normalized * weights[n] for n in sorted(votes))


def _meets_majority(total, majority, strict):
    slack = MAJORITY_TOLERANCE * max(1.0, abs(majority))
    if total <= 0:
        return False
    if strict:
        return total > majority + slack
    return total >= majority - slack


def tally(session: VotingSession, majority: float, rebalanced: bool,
          strict_majority: bool = False) -> bool:
    return _meets_majority(weighted_total(session, rebalanced), majority, strict_majority)


def _finalize(state: NodeProtocolState, session: VotingSession, now: int):
    missing = tuple(session.missing())
    rebalanced = bool(missing) and state.config.rebalance
    majority = state.config.majority_for(session.scenario)

    try:
        total = weighted_total(session, rebalanced)
    except NoRespondents:
        logger.warning("Session %s aborted: no respondents (detection failure)", session.id)
        total = 0.0
    decision = _meets_majority(total, majority, state.config.strict_majority)

    session.decide(decision, total)
    state.decisions[session.id] = decision
    state.last_decision_ms[session.scenario] = now

    if missing:
        logger.info("Session %s: %d of %d nodes silent, rebalanced=%s",
                    session.id, len(missing), len(session.expected), rebalanced)
    logger.info("Session %s %s: total=%.3f majority=%.3f -> %s",
                session.id, session.scenario.name, total, majority,
                "ACCEPT" if decision else "reject")

    actions = [DecisionRecorded(session.id, session.scenario, decision, total, "tally",
                                rebalanced, missing)]
    for peer in sorted(state.neighbors):
        actions.append(SendMessage(peer, vote_notification(
            session.id, state.node_id, session.scenario, decision, total)))
    return actions


def _open_session(state, scenario, own_vote, now, cascaded):
    if own_vote.normalized != 1.0:
        raise ProtocolError("a node initiates voting only on its own positive detection")
    existing = state.own_collecting(scenario)
    if existing is not None:
        raise DuplicateSession(f"node {state.node_id} already collects {ScenarioId(scenario).name} "
                               f"in session {existing.id}")
    if state.next_seq > MAX_SEQ:
        raise ProtocolError(f"node {state.node_id} exhausted its session sequence space")

    cfg = state.config
    sid = SessionId(state.node_id, state.next_seq)
    state.next_seq += 1

    weights = {state.node_id: own_vote.weight}
    for peer in state.neighbors:
        weights[peer] = state.peer_weights.get(peer, DEFAULT_NODE_WEIGHT)

    session = VotingSession(
        id=sid,
        scenario=ScenarioId(scenario),
        own_vote=own_vote,
        expected=frozenset(state.neighbors),
        weights=weights,
        deadline=now + cfg.vote_timeout_ms,
        next_retransmit=now + cfg.retransmit_interval_ms,
        opened_at=now,
        cascaded=cascaded,
    )
    state.sessions[sid] = session

    outgoing = [(peer, vote_request(sid, state.node_id, session.scenario))
                for peer in sorted(state.neighbors)]
    actions = [SessionOpened(sid, session.scenario, cascaded, tuple(sorted(session.expected)))]
    actions += [SendMessage(to, msg) for to, msg in outgoing]
    if not state.neighbors:
        actions += _finalize(state, session, now)
    return session, outgoing, actions


def initiate_voting(state: NodeProtocolState, scenario: ScenarioId, own_vote: Vote,
                    now: int) -> Tuple[VotingSession, List[Tuple[NodeId, Message]]]:
    session, outgoing, _ = _open_session(state, scenario, own_vote, now, cascaded=False)
    return session, outgoing


def initiate_voting_actions(state, scenario, own_vote, now):
    """initiate_voting for harnesses that work on action lists."""
    _, _, actions = _open_session(state, scenario, own_vote, now, cascaded=False)
    return actions


def handle_message(state: NodeProtocolState, m: Message, now: int,
                   own_vote: Optional[Vote] = None) -> list:
    if state.duty is DutyState.DEEP_SLEEP:
        raise DutyViolation(f"node {state.node_id} consumed a message while in deep sleep")
    if m.sender == state.node_id:
        return []

    if m.kind == MessageKind.VOTE_REQUEST:
        return _handle_request(state, m, now, own_vote)
    if m.kind == MessageKind.VOTE_RESPONSE:
        return _handle_response(state, m, now)
    return _handle_notification(state, m, now)


def _handle_request(state, m, now, own_vote):
    if own_vote is None:
        raise ProtocolError("a VoteRequest must be answered with a freshly computed vote")

    actions = [SendMessage(m.sender, vote_response(m.session, state.node_id, m.scenario, own_vote))]

    if own_vote.normalized == 1.0:
        if state.own_collecting(m.scenario) is not None:
            logger.debug("Node %s: no cascade for %s, own session still collecting",
                         state.node_id, m.session)
        elif state.in_holdoff(m.scenario, now):
            logger.debug("Node %s: no cascade for %s, %s decided recently",
                         state.node_id, m.session, m.scenario.name)
        else:
            _, _, opened = _open_session(state, m.scenario, own_vote, now, cascaded=True)
            actions += opened
    return actions


def _handle_response(state, m, now):
    session = state.sessions.get(m.session)
    if session is None:
        logger.debug("Node %s: response from %s for unknown session %s dropped",
                     state.node_id, m.sender, m.session)
        return []
    if session.state is SessionState.DECIDED:
        return []
    if m.sender not in session.expected or m.scenario != session.scenario:
        logger.debug("Node %s: unexpected response from %s for %s dropped",
                     state.node_id, m.sender, m.session)
        return []
    if m.sender in session.responses:
        logger.debug("Node %s: duplicate response from %s for %s ignored",
                     state.node_id, m.sender, m.session)
        return []
    try:
        vote = Vote(m.raw_mean, m.normalized, m.weight)
    except ValueError as e:
        logger.debug("Node %s: invalid vote from %s dropped: %s", state.node_id, m.sender, e)
        return []

    session.responses[m.sender] = vote
    state.peer_weights[m.sender] = vote.weight
    actions = [ResponseRecorded(session.id, m.sender, vote)]
    if session.complete:
        actions += _finalize(state, session, now)
    return actions


def _handle_notification(state, m, now):
    state.decisions[m.session] = m.decision
    state.last_decision_ms[m.scenario] = now
    local = state.sessions.get(m.session)
    if local is not None and local.state is SessionState.COLLECTING:
        local.decide(m.decision, m.total_weighted_vote)
    return [DecisionRecorded(m.session, m.scenario, m.decision, m.total_weighted_vote,
                             "notification")]


def on_timer(state: NodeProtocolState, now: int) -> list:
    actions = []
    interval = state.config.retransmit_interval_ms
    for sid in sorted(state.sessions):
        session = state.sessions[sid]
        if session.state is not SessionState.COLLECTING:
            continue
        if now >= session.deadline:
            actions += _finalize(state, session, now)
        elif now >= session.next_retransmit:
            for peer in session.missing():
                actions.append(SendMessage(peer, vote_request(sid, state.node_id, session.scenario)))
            while session.next_retransmit <= now:
                session.next_retransmit += interval
    return actions


def next_timer(state: NodeProtocolState) -> Optional[int]:
    times = [min(s.next_retransmit, s.deadline) for s in state.collecting()]
    return min(times) if times else None


def duty_transition(state: NodeProtocolState, now: int,
                    wake_reason: Optional[WakeReason] = None) -> DutyState:
    current = state.duty

    def illegal(why):
        reason = "none" if wake_reason is None else str(wake_reason)
        return IllegalTransition(f"node {state.node_id}: {current.value} (reason {reason}): {why}")

    if current is DutyState.DEEP_SLEEP:
        if wake_reason is None:
            raise illegal("a sleeping node only leaves deep sleep on a wake reason")
        if wake_reason.kind is WakeKind.TIMER:
            new = DutyState.IDLE_UPTIME
        elif wake_reason.kind is WakeKind.SENSOR_THRESHOLD:
            new = DutyState.ACTIVE_UPTIME
        else:
            raise illegal("the radio is off during deep sleep")

    elif current is DutyState.IDLE_UPTIME:
        if wake_reason is None:
            if now - state.duty_since < state.config.idle_listen_ms:
                raise illegal("idle listen window has not elapsed")
            if state.collecting():
                raise illegal("sessions still collecting")
            new = DutyState.DEEP_SLEEP
        elif wake_reason.kind in (WakeKind.EXTERNAL_MESSAGE, WakeKind.SENSOR_THRESHOLD):
            new = DutyState.ACTIVE_UPTIME
        else:
            raise illegal("timer wake while already awake")

    else:
        if wake_reason is not None:
            raise illegal("already in active uptime")
        if state.collecting():
            raise illegal("sessions still collecting")
        new = DutyState.DEEP_SLEEP

    state.duty = new
    state.duty_since = now
    if wake_reason is not None:
        state.wake_reason = wake_reason
    return new
