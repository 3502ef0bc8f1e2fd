"""Energy and CO2-equivalent estimates from wall-clock time.

This is an estimator, not a measurement: elapsed time is genuinely measured,
but power draw is a configured constant (device TDP) and grid carbon intensity
a configured factor. That keeps the arithmetic portable and deterministic
while preserving the monotone emissions-vs-runtime relation.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable, TypeVar

from .errors import ConfigError

R = TypeVar("R")

DEFAULT_DEVICE_POWER_WATTS = 65.0  # typical desktop-CPU TDP
DEFAULT_CARBON_INTENSITY = 0.4    # kg CO2-eq per kWh


@dataclass
class EmissionsConfig:
    device_power_watts: float = DEFAULT_DEVICE_POWER_WATTS
    carbon_intensity_kg_per_kwh: float = DEFAULT_CARBON_INTENSITY

    def validate(self) -> None:
        if self.device_power_watts <= 0 or self.carbon_intensity_kg_per_kwh <= 0:
            raise ConfigError(
                "device_power_watts and carbon_intensity_kg_per_kwh must be > 0, got "
                f"{self.device_power_watts}, {self.carbon_intensity_kg_per_kwh}"
            )

    def energy_kwh(self, elapsed_seconds: float) -> float:
        return (elapsed_seconds / 3600.0) * (self.device_power_watts / 1000.0)


@dataclass
class EmissionsReport:
    elapsed_seconds: float
    energy_kwh: float
    co2eq_kg: float
    valid: bool = True  # False when the clock misbehaved during tracking


def estimate(elapsed_seconds: float, config: EmissionsConfig) -> EmissionsReport:
    """Apply the time x power x intensity identities to a measured duration."""
    config.validate()
    kwh = config.energy_kwh(elapsed_seconds)
    return EmissionsReport(
        elapsed_seconds=elapsed_seconds,
        energy_kwh=kwh,
        co2eq_kg=kwh * config.carbon_intensity_kg_per_kwh,
    )


def track(run: Callable[[], R], config: EmissionsConfig) -> tuple[R, EmissionsReport]:
    """Run the closure under the wall clock and attach an emissions estimate.

    A clock failure never loses the run result: the report comes back with
    valid=False and a zero duration instead.
    """
    config.validate()
    t0, clock_ok = _read_clock()
    result = run()
    t1, clock_end_ok = _read_clock()
    valid = clock_ok and clock_end_ok
    elapsed = max(t1 - t0, 0.0) if valid else 0.0
    report = estimate(elapsed, config)
    report.valid = valid
    return result, report


def _read_clock() -> tuple[float, bool]:
    try:
        return time.perf_counter(), True
    except OSError:
        return 0.0, False
