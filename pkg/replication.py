# replication.py
"""
Repeat a run (or a range test) over many seeds on a worker pool and
aggregate the per-seed metrics. Runs share only the locked message totals;
results are merged in seed order so the aggregate does not depend on
scheduling.
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List

import numpy as np
from scipy import stats as st

import network_simulator
from errors import ConfigInvalid
from range_test import run_range_scenario
from stats_manager import StatsManager

logger = logging.getLogger(__name__)

CONFIDENCE = 0.95


@dataclass(frozen=True)
class Aggregate:
    n: int
    mean: float
    std: float
    ci_low: float
    ci_high: float

    def to_dict(self):
        return {"n": self.n, "mean": self.mean, "std": self.std,
                "ci_low": self.ci_low, "ci_high": self.ci_high}


def aggregate(values, confidence=CONFIDENCE) -> Aggregate:
    """Mean, sample standard deviation and a Student-t confidence interval."""
    data = np.array([v for v in values if v is not None and math.isfinite(v)], dtype=float)
    n = len(data)
    if n == 0:
        return Aggregate(0, math.nan, math.nan, math.nan, math.nan)
    mean = float(np.mean(data))
    if n == 1:
        return Aggregate(1, mean, 0.0, mean, mean)
    std = float(np.std(data, ddof=1))
    half = float(st.t.ppf(0.5 + confidence / 2, n - 1)) * std / math.sqrt(n)
    return Aggregate(n, mean, std, mean - half, mean + half)


def run_metrics(config, seed, totals: StatsManager) -> Dict[str, float]:
    result = network_simulator.run(config.topology(), config.script, config.node_configs(), seed,
                                   config.end_time_ms, config.node_thresholds(), config.simulation)
    totals.add_run(result.counters)
    summary = result.summary
    sent = summary.messages["sent"]
    latencies = [v for v in summary.detection_latency_ms.values() if v is not None]
    return {
        "accepted": 1.0 if summary.accepted else 0.0,
        "detection_latency_ms": float(min(latencies)) if latencies else math.nan,
        "delivery_rate": summary.messages["delivered"] / sent if sent else math.nan,
        "average_mW": float(np.mean([e["average_mW"] for e in summary.energy.values()])),
        "false_positives": float(len(summary.false_positives)),
        "false_negatives": float(len(summary.false_negatives)),
    }


def range_metrics(scenario, seed) -> Dict[str, float]:
    result = run_range_scenario(scenario, seed=seed)
    return {"delivery_rate": result.delivery_rate()}


@dataclass
class Replication:
    seeds: List[int]
    per_seed: List[Dict[str, float]]
    # message counters summed over simulator runs; empty for range tests
    totals: StatsManager = field(default_factory=StatsManager)

    def metrics(self):
        return sorted(self.per_seed[0]) if self.per_seed else []

    def aggregates(self) -> Dict[str, Aggregate]:
        return {m: aggregate([row[m] for row in self.per_seed]) for m in self.metrics()}

    def to_dict(self):
        out = {
            "seeds": self.seeds,
            "per_seed": self.per_seed,
            "aggregate": {m: a.to_dict() for m, a in self.aggregates().items()},
        }
        if self.totals.runs:
            out["messages_total"] = {"runs": self.totals.runs, **self.totals.get_stats()}
        return out


def replicate(job, n_seeds, base_seed=0, workers=None) -> Replication:
    """
    job is either a RunConfig or the name of a range scenario ("i".."v").
    Seeds are base_seed, base_seed + 1, ...
    """
    if n_seeds < 1:
        raise ConfigInvalid("seeds", "need at least one seed")
    seeds = [base_seed + i for i in range(n_seeds)]
    totals = StatsManager()
    if isinstance(job, str):
        def one(seed):
            return range_metrics(job, seed)
    else:
        def one(seed):
            return run_metrics(job, seed, totals)

    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = {seed: pool.submit(one, seed) for seed in seeds}
        per_seed = [futures[seed].result() for seed in seeds]

    logger.info("Replicated %d seeds", n_seeds)
    return Replication(seeds, per_seed, totals)
