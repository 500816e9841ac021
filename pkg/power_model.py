# power_model.py
"""
Energy accounting for a duty-cycled node.

Two views are kept side by side. StageProfile is the stage-by-stage
description used to charge simulated time; CycleModel is the three-number
summary (uptime energy, uptime length, sleep power) that the measured
averages are fitted to.
"""
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Iterable, Sequence, Tuple

import numpy as np

from errors import ConfigInvalid, SingularSystem

logger = logging.getLogger(__name__)

# (deep sleep interval s, average mW) measured on the hardware
MEASURED_AVERAGES_MW = ((10.0, 424.87), (30.0, 378.00), (60.0, 327.21))
NO_SLEEP_AVERAGE_MW = 719.75
REFERENCE_CAPACITY_WH = 107.98
REPORT_INTERVALS_S = (0.0, 10.0, 30.0, 60.0)


class Stage(Enum):
    SETUP = "setup"
    WIFI_PEAK = "wifi_peak"
    LISTEN = "listen"
    ACTIVE = "active"
    SLEEP = "sleep"


@dataclass(frozen=True)
class StageProfile:
    setup_mW: float = 425.0
    setup_s: float = 10.0
    wifi_peak_mW: float = 2000.0
    peak_s: float = 0.5
    listen_mW: float = 750.0
    listen_s: float = 5.0
    active_mW: float = 750.0
    sleep_mW: float = 250.0

    def __post_init__(self):
        for name in ("setup_mW", "wifi_peak_mW", "listen_mW", "active_mW", "sleep_mW"):
            if not getattr(self, name) > 0:
                raise ConfigInvalid(f"power.{name}", "must be > 0")
        for name in ("setup_s", "peak_s", "listen_s"):
            if not getattr(self, name) >= 0:
                raise ConfigInvalid(f"power.{name}", "must be >= 0")

    def power_of(self, stage: Stage) -> float:
        return {
            Stage.SETUP: self.setup_mW,
            Stage.WIFI_PEAK: self.wifi_peak_mW,
            Stage.LISTEN: self.listen_mW,
            Stage.ACTIVE: self.active_mW,
            Stage.SLEEP: self.sleep_mW,
        }[stage]

    def cycle_model(self) -> "CycleModel":
        """One idle uptime (Wi-Fi peak, then listening) followed by deep sleep."""
        peak = min(self.peak_s, self.listen_s)
        energy = self.wifi_peak_mW * peak + self.listen_mW * (self.listen_s - peak)
        return CycleModel(uptime_energy_mJ=energy, uptime_s=self.listen_s, sleep_mW=self.sleep_mW)


@dataclass(frozen=True)
class CycleModel:
    uptime_energy_mJ: float
    uptime_s: float
    sleep_mW: float

    def __post_init__(self):
        if self.uptime_energy_mJ < 0 or not self.uptime_s > 0 or not self.sleep_mW > 0:
            raise ValueError(f"non-physical cycle model {self}")


def average_power(model: CycleModel, sleep_interval_s: float) -> float:
    if sleep_interval_s < 0:
        raise ValueError("sleep interval must be >= 0")
    return ((model.uptime_energy_mJ + model.sleep_mW * sleep_interval_s)
            / (model.uptime_s + sleep_interval_s))


def generate_averages(model: CycleModel, intervals_s: Iterable[float]):
    return [(float(t), average_power(model, t)) for t in intervals_s]


def fit_cycle_model(observations: Sequence[Tuple[float, float]]) -> CycleModel:
    """
    Solve  E_up + P_sleep*T_i - avg_i*T_up = avg_i*T_i  for (E_up, T_up, P_sleep).
    Exact for three observations, least squares beyond.
    """
    obs = [(float(t), float(avg)) for t, avg in observations]
    if len({t for t, _ in obs}) < 3:
        raise SingularSystem(f"need at least 3 distinct sleep intervals, got {len(obs)} observations")

    a = np.array([[1.0, -avg, t] for t, avg in obs])
    b = np.array([avg * t for t, avg in obs])
    solution, _, rank, _ = np.linalg.lstsq(a, b, rcond=None)
    if rank < 3:
        raise SingularSystem(f"observations are degenerate (rank {rank})")

    energy, uptime, sleep = (float(v) for v in solution)
    try:
        model = CycleModel(uptime_energy_mJ=energy, uptime_s=uptime, sleep_mW=sleep)
    except ValueError:
        raise SingularSystem(f"fit gave non-physical parameters E={energy:.1f} "
                             f"T={uptime:.2f} P={sleep:.1f}") from None
    logger.debug("Fitted cycle model %s", model)
    return model


def lifetime_hours(capacity_Wh: float, avg_mW: float) -> float:
    if not capacity_Wh > 0 or not avg_mW > 0:
        raise ValueError("capacity and average power must be positive")
    return capacity_Wh * 1000.0 / avg_mW


@dataclass
class EnergyLedger:
    mJ: Dict[int, Dict[Stage, float]] = field(default_factory=dict)
    seconds: Dict[int, Dict[Stage, float]] = field(default_factory=dict)

    def add(self, node, stage, duration_s, power_mW):
        if duration_s < 0:
            raise ValueError(f"negative stage duration {duration_s}")
        energy = self.mJ.setdefault(node, {})
        time = self.seconds.setdefault(node, {})
        energy[stage] = energy.get(stage, 0.0) + duration_s * power_mW
        time[stage] = time.get(stage, 0.0) + duration_s
        return duration_s * power_mW

    def nodes(self):
        return sorted(self.mJ)

    def total_mJ(self, node):
        return math.fsum(self.mJ.get(node, {}).values())

    def total_s(self, node):
        return math.fsum(self.seconds.get(node, {}).values())

    def average_mW(self, node, exclude=()):
        stages = [s for s in self.mJ.get(node, {}) if s not in exclude]
        seconds = math.fsum(self.seconds[node][s] for s in stages)
        if seconds == 0:
            return 0.0
        return math.fsum(self.mJ[node][s] for s in stages) / seconds

    def merge(self, other: "EnergyLedger") -> "EnergyLedger":
        merged = EnergyLedger()
        for ledger in (self, other):
            for node, stages in ledger.mJ.items():
                for stage, mj in stages.items():
                    bucket = merged.mJ.setdefault(node, {})
                    bucket[stage] = bucket.get(stage, 0.0) + mj
                    secs = merged.seconds.setdefault(node, {})
                    secs[stage] = secs.get(stage, 0.0) + ledger.seconds[node][stage]
        return merged

    def to_dict(self):
        return {
            str(node): {
                "stages_mJ": {s.value: round(v, 6) for s, v in sorted(
                    self.mJ[node].items(), key=lambda kv: kv[0].value)},
                "total_mJ": round(self.total_mJ(node), 6),
                "average_mW": round(self.average_mW(node), 6),
            }
            for node in self.nodes()
        }


def record_stage(ledger: EnergyLedger, node, stage: Stage, duration_s: float,
                 profile: StageProfile) -> EnergyLedger:
    ledger.add(node, Stage(stage), duration_s, profile.power_of(stage))
    return ledger


def record_uptime_segment(ledger: EnergyLedger, node, stage: Stage, start_s: float, end_s: float,
                          uptime_start_s: float, profile: StageProfile) -> Dict[Stage, float]:
    """
    Charge [start_s, end_s) of an uptime. The first peak_s seconds after the
    uptime began go to WIFI_PEAK, the rest to stage. Returns mJ per stage.
    """
    peak_end = uptime_start_s + profile.peak_s
    peak = max(0.0, min(end_s, peak_end) - start_s)
    rest = max(0.0, (end_s - start_s) - peak)
    charged = {}
    if peak > 0:
        charged[Stage.WIFI_PEAK] = ledger.add(node, Stage.WIFI_PEAK, peak, profile.wifi_peak_mW)
    if rest > 0:
        charged[stage] = ledger.add(node, stage, rest, profile.power_of(stage))
    return charged


def power_table(profile: StageProfile, fitted: CycleModel, capacities_Wh=(),
                intervals_s=REPORT_INTERVALS_S):
    """Rows of averages (narrative and fitted) and lifetimes per sleep interval."""
    narrative = profile.cycle_model()
    rows = []
    for t in intervals_s:
        row = {
            "sleep_s": t,
            "profile_mW": average_power(narrative, t),
            "fitted_mW": average_power(fitted, t),
        }
        for cap in capacities_Wh:
            row[f"lifetime_h@{cap:g}Wh"] = lifetime_hours(cap, row["fitted_mW"])
        rows.append(row)
    return rows


# node variants reported by average draw only; not modelled per component
VARIANT_AVERAGES_MW = {
    "deep-sleep-only": StageProfile.sleep_mW,
    "accelerometer-only": 18.0,
}


def variant_table(capacities_Wh=(), variants=None):
    rows = []
    for name, avg in (variants or VARIANT_AVERAGES_MW).items():
        row = {"variant": name, "average_mW": avg}
        for cap in capacities_Wh:
            row[f"lifetime_h@{cap:g}Wh"] = lifetime_hours(cap, avg)
        rows.append(row)
    return rows
