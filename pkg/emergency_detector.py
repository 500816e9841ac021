# emergency_detector.py
"""
Per-scenario sensor fusion. All functions are pure over sample windows, so
different nodes can be evaluated on different workers.
"""
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from errors import ConfigInvalid, InsufficientWindow, NotCalibrated, WrongSampleCount
from message_codec import ScenarioId

CALIBRATION_SAMPLES = 300
ACCEL_RANGE_G = 2.0    # sensor resolution config, cuts off peaks
GRAVITY_G = 1.0        # z axis at rest

DEFAULT_CO_ABOVE_BASELINE = 150.0
DEFAULT_ODOR_ABOVE_BASELINE = 150.0
DEFAULT_TEMP_GRADIENT = 0.2       # degC per second
DEFAULT_GRADIENT_INTERVAL_S = 60.0
DEFAULT_ACCEL_G = 0.8


class SensorKind(Enum):
    CO = "co"
    ODOR_GAS = "odor"
    TEMPERATURE = "temperature"
    ACCEL_X = "accel_x"
    ACCEL_Y = "accel_y"
    ACCEL_Z = "accel_z"
    WATER = "water"
    PIR = "pir"
    HALL = "hall"


BINARY_SENSORS = frozenset({SensorKind.WATER, SensorKind.PIR, SensorKind.HALL})
ACCEL_SENSORS = (SensorKind.ACCEL_X, SensorKind.ACCEL_Y, SensorKind.ACCEL_Z)


@dataclass(frozen=True)
class ThresholdSet:
    co_above_baseline: float = DEFAULT_CO_ABOVE_BASELINE
    odor_above_baseline: float = DEFAULT_ODOR_ABOVE_BASELINE
    temp_gradient: float = DEFAULT_TEMP_GRADIENT
    gradient_interval_s: float = DEFAULT_GRADIENT_INTERVAL_S
    accel_g: float = DEFAULT_ACCEL_G

    def __post_init__(self):
        for name in ("co_above_baseline", "odor_above_baseline", "temp_gradient",
                     "gradient_interval_s", "accel_g"):
            if not getattr(self, name) > 0:
                raise ConfigInvalid(f"thresholds.{name}", "must be > 0")


@dataclass(frozen=True)
class GasCalibration:
    baseline_co: float
    baseline_odor: float
    preheat_s: float = 0.0
    sample_count: int = CALIBRATION_SAMPLES


@dataclass(frozen=True)
class DetectionOutcome:
    scenario: Optional[ScenarioId]
    snapshot: Dict[str, float] = field(default_factory=dict)


class IntrusionReading(NamedTuple):
    initiate: bool
    vote: int


def calibrate_gas(co_samples: Sequence[float], odor_samples: Sequence[float],
                  preheat_s: float = 0.0) -> GasCalibration:
    for name, samples in (("CO", co_samples), ("odor", odor_samples)):
        if len(samples) != CALIBRATION_SAMPLES:
            raise WrongSampleCount(f"{name} calibration needs {CALIBRATION_SAMPLES} samples, "
                                   f"got {len(samples)}")
    return GasCalibration(
        baseline_co=float(np.mean(co_samples)),
        baseline_odor=float(np.mean(odor_samples)),
        preheat_s=preheat_s,
    )


def temp_gradient(window: Sequence[Tuple[float, float]], interval_s: float) -> float:
    """
    Temperature rise in degC/s between the newest sample and the sample
    nearest to interval_s before it. window holds (time_s, degC) pairs.
    """
    if len(window) < 2:
        raise InsufficientWindow("need at least two temperature samples")
    times = np.array([t for t, _ in window], dtype=float)
    temps = np.array([v for _, v in window], dtype=float)
    order = np.argsort(times, kind="stable")
    times, temps = times[order], temps[order]

    t_end = times[-1]
    if t_end - times[0] < interval_s:
        raise InsufficientWindow(f"window spans {t_end - times[0]:.1f} s, need {interval_s:.1f} s")

    start = int(np.argmin(np.abs(times - (t_end - interval_s))))
    return float((temps[-1] - temps[start]) / interval_s)


def classify_gas_event(co: float, odor: float, cal: Optional[GasCalibration],
                       gradient: float, th: ThresholdSet) -> DetectionOutcome:
    if cal is None:
        raise NotCalibrated("gas sensors have no baseline yet")

    co_high = co >= cal.baseline_co + th.co_above_baseline
    odor_high = odor >= cal.baseline_odor + th.odor_above_baseline
    hot = gradient >= th.temp_gradient
    snapshot = {"co": co, "odor": odor, "gradient": gradient}

    if co_high and odor_high and hot:
        return DetectionOutcome(ScenarioId.FIRE, snapshot)
    if odor_high and not hot:
        return DetectionOutcome(ScenarioId.GAS_LEAK, snapshot)
    return DetectionOutcome(None, snapshot)


def clip_acceleration(values, limit: float = ACCEL_RANGE_G):
    clipped = np.clip(values, -limit, limit)
    if np.ndim(clipped) == 0:
        return float(clipped)
    return clipped


def acceleration_deviation(ax: float, ay: float, az: float) -> float:
    ax, ay, az = (clip_acceleration(v) for v in (ax, ay, az))
    return max(abs(ax), abs(ay), abs(az - GRAVITY_G))


def detect_earthquake(ax: float, ay: float, az: float, th: ThresholdSet) -> bool:
    return acceleration_deviation(ax, ay, az) >= th.accel_g


def detect_water(present: float) -> bool:
    return present == 1.0


def detect_intrusion(pir: float, hall_open: float, armed: bool) -> IntrusionReading:
    if not armed:
        return IntrusionReading(False, 0)
    # The hall sensor alone never starts a vote, it only backs one.
    initiate = pir == 1.0
    vote = 1 if (pir == 1.0 or hall_open == 1.0) else 0
    return IntrusionReading(initiate, vote)


# --- what the simulator asks per node ---

@dataclass
class SampleWindow:
    """Samples of every sensor taken across one vote window."""
    samples: Dict[SensorKind, List[float]]
    gradient: float = 0.0
    armed: bool = False

    def of(self, kind):
        return self.samples[kind]


def _binary_present(samples):
    return 1.0 if float(np.mean(samples)) >= 0.5 else 0.0


def vote_inputs(scenario: ScenarioId, window: SampleWindow, cal: Optional[GasCalibration],
                th: ThresholdSet) -> Tuple[List[float], Callable[[Sequence[float]], bool]]:
    """Primary sample series and vote predicate for one scenario."""
    scenario = ScenarioId(scenario)

    if scenario is ScenarioId.FIRE:
        odor_mean = float(np.mean(window.of(SensorKind.ODOR_GAS)))

        def fire(co_samples):
            outcome = classify_gas_event(float(np.mean(co_samples)), odor_mean, cal,
                                         window.gradient, th)
            return outcome.scenario is ScenarioId.FIRE
        return list(window.of(SensorKind.CO)), fire

    if scenario is ScenarioId.GAS_LEAK:
        # gas-leak votes look at the odorized gas sensor only
        def gas(odor_samples):
            if cal is None:
                raise NotCalibrated("gas sensors have no baseline yet")
            return gas_excess(float(np.mean(odor_samples)), cal, th)
        return list(window.of(SensorKind.ODOR_GAS)), gas

    if scenario is ScenarioId.WATER_LEAK:
        return list(window.of(SensorKind.WATER)), lambda s: detect_water(_binary_present(s))

    if scenario is ScenarioId.EARTHQUAKE:
        deviations = [acceleration_deviation(x, y, z) for x, y, z in zip(
            *(window.of(kind) for kind in ACCEL_SENSORS))]
        return deviations, lambda s: max(s) >= th.accel_g

    pir = max(window.of(SensorKind.PIR))
    hall = max(window.of(SensorKind.HALL))
    reading = detect_intrusion(pir, hall, window.armed)
    return list(window.of(SensorKind.PIR)), lambda s: reading.vote == 1


def gas_excess(odor: float, cal: Optional[GasCalibration], th: ThresholdSet) -> bool:
    return cal is not None and odor >= cal.baseline_odor + th.odor_above_baseline


def fire_latch(latched: bool, found: set, odor: float, cal: Optional[GasCalibration],
               th: ThresholdSet) -> bool:
    """A node that saw a fire stays in fire mode while the odor excess lasts."""
    if ScenarioId.FIRE in found:
        return True
    return latched and gas_excess(odor, cal, th)


def instant_detections(reading: Dict[SensorKind, float], cal: Optional[GasCalibration],
                       gradient: float, th: ThresholdSet, armed: bool,
                       fire_latched: bool = False) -> set:
    """Scenarios whose threshold condition holds on one poll of every sensor."""
    found = set()
    if cal is not None:
        outcome = classify_gas_event(reading[SensorKind.CO], reading[SensorKind.ODOR_GAS],
                                     cal, gradient, th)
        # no gas leak while in fire mode
        if outcome.scenario is not None and not (fire_latched and outcome.scenario is ScenarioId.GAS_LEAK):
            found.add(outcome.scenario)
    if detect_earthquake(reading[SensorKind.ACCEL_X], reading[SensorKind.ACCEL_Y],
                         reading[SensorKind.ACCEL_Z], th):
        found.add(ScenarioId.EARTHQUAKE)
    if detect_water(reading[SensorKind.WATER]):
        found.add(ScenarioId.WATER_LEAK)
    if detect_intrusion(reading[SensorKind.PIR], reading[SensorKind.HALL], armed).initiate:
        found.add(ScenarioId.INTRUSION)
    return found
