"""
Synthetic hourly PV station data for runs without a measured dataset.
"""
import logging
from typing import Union

import numpy as np
import pandas as pd

from models.frame import TimeSeriesFrame

logger = logging.getLogger(__name__)

FEATURE_NAMES = (
    "power",
    "global_irradiance",
    "direct_irradiance",
    "diffuse_irradiance",
    "temperature",
    "humidity",
    "pressure",
    "wind_speed",
    "wind_direction",
    "cloud_cover",
    "dew_point",
)
CAPACITY_KW = 50.0
SUNRISE_HOUR = 6
SUNSET_HOUR = 18


def clear_sky_profile(hours: np.ndarray) -> np.ndarray:
    """Half-sine day curve, exactly zero outside sunrise..sunset"""
    phase = (hours - SUNRISE_HOUR) / (SUNSET_HOUR - SUNRISE_HOUR)
    return np.where((phase > 0) & (phase < 1), np.sin(np.pi * np.clip(phase, 0.0, 1.0)), 0.0)


def cloud_process(n: int, rng: np.random.Generator, persistence: float = 0.95) -> np.ndarray:
    cloud = np.empty(n)
    level = rng.uniform(0.0, 1.0)
    for i in range(n):
        level = persistence * level + (1.0 - persistence) * rng.uniform(0.0, 1.0) + rng.normal(0.0, 0.05)
        level = min(max(level, 0.0), 1.0)
        cloud[i] = level
    return cloud


def synth_pv(days: int, seed: int = 0, start: Union[str, pd.Timestamp] = "2023-01-01") -> TimeSeriesFrame:
    """Hourly 11-feature frame; power is bell curve x seasonal amplitude x cloud attenuation"""
    if days < 1:
        raise ValueError(f"days must be >= 1, got {days}")
    rng = np.random.default_rng(seed)
    timestamps = pd.date_range(pd.Timestamp(start).normalize(), periods=days * 24, freq="h")
    n = len(timestamps)
    hours = timestamps.hour.to_numpy().astype(np.float64)
    doy = timestamps.dayofyear.to_numpy().astype(np.float64)

    bell = clear_sky_profile(hours)
    daylight = bell > 0
    season = 0.75 + 0.25 * np.cos(2.0 * np.pi * (doy - 172.0) / 365.25)
    cloud = cloud_process(n, rng)
    clearness = 1.0 - 0.75 * cloud

    temperature = (
        12.0 + 10.0 * np.cos(2.0 * np.pi * (doy - 200.0) / 365.25)
        + 6.0 * bell * clearness + rng.normal(0.0, 1.0, n)
    )
    humidity = np.clip(55.0 + 30.0 * cloud - 15.0 * bell + rng.normal(0.0, 4.0, n), 5.0, 100.0)
    pressure = 1013.0 - 8.0 * cloud + rng.normal(0.0, 1.5, n)
    wind_speed = np.abs(2.5 + 2.0 * cloud + rng.normal(0.0, 1.0, n))
    wind_direction = np.mod(220.0 + 40.0 * np.sin(2.0 * np.pi * np.arange(n) / 97.0) + rng.normal(0.0, 25.0, n), 360.0)
    dew_point = temperature - (100.0 - humidity) / 5.0

    ghi = np.where(daylight, np.maximum(1000.0 * bell * season * clearness + rng.normal(0.0, 10.0, n), 0.0), 0.0)
    dni = np.where(daylight, np.maximum(850.0 * bell * season * (1.0 - cloud) ** 2 + rng.normal(0.0, 8.0, n), 0.0), 0.0)
    dhi = np.where(daylight, np.maximum(ghi - dni * bell, 0.0), 0.0)

    derate = 1.0 - 0.004 * (temperature - 25.0)
    power = CAPACITY_KW * bell * season * clearness * derate + rng.normal(0.0, 0.3, n)
    power = np.where(daylight, np.maximum(power, 0.0), 0.0)

    values = np.column_stack([
        power, ghi, dni, dhi, temperature, humidity, pressure, wind_speed, wind_direction, 100.0 * cloud, dew_point,
    ])
    logger.info(f"Generated {days} synthetic day(s), {n} hourly rows, seed {seed}")
    return TimeSeriesFrame(timestamps=timestamps, values=values, feature_names=FEATURE_NAMES, target_index=0)
