"""Synthetic two-settlement price data for smoke runs and acceptance tests."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .market_data import PriceSeries, series_from_arrays


@dataclass(frozen=True)
class SyntheticPriceConfig:
    days: int = 90
    resolution_minutes: int = 5
    mean: float = 40.0
    amplitude: float = 25.0
    peak_hour: float = 18.0
    noise_std: float = 4.0
    spikes_per_day: float = 1.0
    spike_log_mean: float = float(np.log(80.0))
    spike_log_std: float = 0.6
    spike_steps: int = 3
    da_noise_std: float = 2.0
    seed: int = 7
    start: str = "2019-01-01T00:00:00"
    zone_id: str = "SYN"


def synthetic_series(cfg: SyntheticPriceConfig = SyntheticPriceConfig()) -> PriceSeries:
    """Daily sinusoid plus Gaussian noise and lognormal price spikes.

    The DA price of each hour is the hourly mean of the sinusoid plus its own
    small noise; spikes only appear in real time.
    """
    rng = np.random.default_rng(cfg.seed)
    per_hour = 60 // cfg.resolution_minutes
    steps = cfg.days * 24 * per_hour
    hours = np.arange(steps) / per_hour
    base = cfg.mean + cfg.amplitude * np.cos(2 * np.pi * (hours - cfg.peak_hour) / 24.0)
    rt = base + rng.normal(0.0, cfg.noise_std, steps)

    n_spikes = rng.poisson(cfg.spikes_per_day * cfg.days)
    starts = rng.integers(0, steps, n_spikes)
    heights = rng.lognormal(cfg.spike_log_mean, cfg.spike_log_std, n_spikes)
    for s, h in zip(starts, heights):
        rt[s:s + cfg.spike_steps] += h

    da = base.reshape(-1, per_hour).mean(axis=1) + rng.normal(0.0, cfg.da_noise_std, cfg.days * 24)
    return series_from_arrays(rt, da, resolution_minutes=cfg.resolution_minutes,
                              start=cfg.start, zone_id=cfg.zone_id)
