# event_log.py
import json
import logging
from enum import Enum
from pathlib import Path

from message_codec import SessionId

logger = logging.getLogger(__name__)


def _plain(value):
    if isinstance(value, Enum):
        return value.name if isinstance(value.value, int) else value.value
    if isinstance(value, SessionId):
        return str(value)
    if isinstance(value, (list, tuple, set, frozenset)):
        items = sorted(value) if isinstance(value, (set, frozenset)) else value
        return [_plain(v) for v in items]
    if isinstance(value, dict):
        return {str(_plain(k)): _plain(v) for k, v in value.items()}
    if isinstance(value, float):
        return round(value, 6)
    return value


class EventLog:
    """In-memory, time-ordered record of everything a run did."""

    def __init__(self):
        self.records = []

    def log_event(self, time_ms, node, event, **details):
        record = {
            "time_ms": int(time_ms),
            "node": node,
            "event": event,
            "details": _plain(details),
        }
        self.records.append(record)
        return record

    def get_all_events(self, event=None, **match):
        out = []
        for r in self.records:
            if event is not None and r["event"] != event:
                continue
            if any(r["details"].get(k) != v for k, v in match.items()):
                continue
            out.append(r)
        return out

    def count(self, event, **match):
        return len(self.get_all_events(event, **match))

    def __len__(self):
        return len(self.records)

    def to_lines(self):
        return [json.dumps(r, sort_keys=True, separators=(",", ":")) for r in self.records]

    def write(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w") as f:
            for line in self.to_lines():
                f.write(line + "\n")
        logger.info("Wrote %d events to %s", len(self.records), path)
        return path
