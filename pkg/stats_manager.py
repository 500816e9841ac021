# stats_manager.py
from dataclasses import dataclass, field
from threading import Lock
from typing import Dict, List, Optional

from errors import InvariantViolation

DROP_REASONS = ("loss", "asleep", "failed", "booting", "malformed")


class StatsManager:
    def __init__(self):
        self.sent = 0
        self.delivered = 0
        self.dropped = {reason: 0 for reason in DROP_REASONS}
        self.in_flight = 0
        self.runs = 0
        self.lock = Lock()

    def increment_sent(self):
        with self.lock:
            self.sent += 1
            self.in_flight += 1

    def increment_delivered(self):
        with self.lock:
            self.delivered += 1
            self.in_flight -= 1

    def increment_dropped(self, reason):
        with self.lock:
            self.dropped[reason] += 1
            self.in_flight -= 1

    def add_run(self, other: "StatsManager"):
        snapshot = other.get_stats()
        with self.lock:
            self.runs += 1
            self.sent += snapshot["sent"]
            self.delivered += snapshot["delivered"]
            self.in_flight += snapshot["in_flight"]
            for reason, n in snapshot["dropped"].items():
                self.dropped[reason] += n

    def get_stats(self):
        with self.lock:
            return {
                "sent": self.sent,
                "delivered": self.delivered,
                "dropped": dict(self.dropped),
                "in_flight": self.in_flight,
            }


@dataclass
class RunSummary:
    seed: int
    sessions: List[dict] = field(default_factory=list)
    accepted: List[str] = field(default_factory=list)
    ground_truth: List[str] = field(default_factory=list)
    detection_latency_ms: Dict[str, Optional[int]] = field(default_factory=dict)
    messages: dict = field(default_factory=dict)
    energy: dict = field(default_factory=dict)
    false_positives: List[str] = field(default_factory=list)
    false_negatives: List[str] = field(default_factory=list)

    def to_dict(self):
        return {
            "seed": self.seed,
            "sessions": self.sessions,
            "accepted": self.accepted,
            "ground_truth": self.ground_truth,
            "detection_latency_ms": self.detection_latency_ms,
            "messages": self.messages,
            "energy": self.energy,
            "false_positives": self.false_positives,
            "false_negatives": self.false_negatives,
        }


def reconcile(events, counters: StatsManager):
    """Counters must match the event log record for record."""
    snapshot = counters.get_stats()
    from_log = {
        "sent": events.count("send"),
        "delivered": events.count("deliver"),
        "in_flight": events.count("in_flight"),
    }
    for key, n in from_log.items():
        if snapshot[key] != n:
            raise InvariantViolation(f"{key}: counter {snapshot[key]} != log {n}")
    for reason, n in snapshot["dropped"].items():
        logged = events.count("drop", reason=reason)
        if logged != n:
            raise InvariantViolation(f"drop/{reason}: counter {n} != log {logged}")
    total = snapshot["delivered"] + sum(snapshot["dropped"].values()) + snapshot["in_flight"]
    if total != snapshot["sent"]:
        raise InvariantViolation(f"{snapshot['sent']} sent but {total} accounted for")
    return snapshot


def build_summary(seed, events, counters, ledger, truth, stimulus_ms) -> RunSummary:
    summary = RunSummary(seed=seed)

    first_accept = {}
    for r in events.get_all_events("decide"):
        d = r["details"]
        if d["source"] == "tally":
            summary.sessions.append({
                "session": d["session"],
                "scenario": d["scenario"],
                "decision": d["decision"],
                "total": d["total"],
                "rebalanced": d["rebalanced"],
                "time_ms": r["time_ms"],
            })
        if d["decision"]:
            first_accept.setdefault(d["scenario"], r["time_ms"])

    truth_names = sorted(s.name for s in truth)
    summary.accepted = sorted(first_accept)
    summary.ground_truth = truth_names
    for name in truth_names:
        start = stimulus_ms.get(name)
        at = first_accept.get(name)
        summary.detection_latency_ms[name] = None if start is None or at is None else at - start
    summary.false_positives = sorted(set(summary.accepted) - set(truth_names))
    summary.false_negatives = sorted(set(truth_names) - set(summary.accepted))

    summary.messages = reconcile(events, counters)
    summary.energy = ledger.to_dict()
    return summary
