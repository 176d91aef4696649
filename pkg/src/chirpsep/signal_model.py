"""Ground-truth pulsed linear chirps, synthesis, and calibrated noise.

All frequencies are angular (rad/s). A pulse with start frequency ``theta``,
bandwidth parameter ``B`` and duration ``d`` has phase
``theta*u + (B/d)*u**2`` for ``u = t - gamma``, hence instantaneous frequency
``theta + (2B/d)*u``: one pulse sweeps ``2B`` rad/s.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np


class ConfigError(ValueError):
    """Invalid scenario or pipeline configuration."""


@dataclass(frozen=True)
class ChirpPulseTrain:
    amplitude: float = 1.0
    theta: float = 0.0
    bandwidth_param: float = 0.0
    duration: float = 1e-5
    start_time: float = 0.0
    pri: float = 0.0
    burst_count: int = 1

    def __post_init__(self):
        if not self.duration > 0:
            raise ConfigError("pulse duration must be positive")
        if int(self.burst_count) != self.burst_count or self.burst_count < 1:
            raise ConfigError("burst_count must be a positive integer")
        if self.pri < 0:
            raise ConfigError("PRI must be non-negative")
        if self.burst_count > 1 and self.pri < self.duration:
            raise ConfigError("bursts of one train overlap (PRI < duration)")

    @property
    def if_slope(self) -> float:
        """Rate of change of the instantaneous frequency, 2B/d (rad/s^2)."""
        return 2.0 * self.bandwidth_param / self.duration

    def burst_start(self, burst_index: int) -> float:
        if not 0 <= burst_index < self.burst_count:
            raise IndexError(f"burst {burst_index} out of range")
        return self.start_time + burst_index * self.pri

    def bursts(self) -> list[tuple[float, float]]:
        """(start, end) of every burst."""
        return [(g, g + self.duration)
                for g in (self.burst_start(i) for i in range(self.burst_count))]

    def burst_at(self, t: float) -> int | None:
        for i, (a, b) in enumerate(self.bursts()):
            if a <= t <= b:
                return i
        return None


def pulse_phase(train: ChirpPulseTrain, burst_index: int, t: float) -> float:
    gamma = train.burst_start(burst_index)
    u = t - gamma
    if u < 0 or u > train.duration:
        raise ValueError(f"t={t} outside burst {burst_index}")
    return train.theta * u + (train.bandwidth_param / train.duration) * u * u


def instantaneous_frequency(train: ChirpPulseTrain, t: float) -> float | None:
    k = train.burst_at(t)
    if k is None:
        return None
    return train.theta + train.if_slope * (t - train.burst_start(k))


def chirp_lipschitz_alpha(train: ChirpPulseTrain) -> float:
    """Relative Lipschitz constant of the IF over one burst.

    Uses the frequency law ``theta + (B/d)(t - gamma)`` over the burst, so the
    result is ``|B/d| / min |theta + (B/d) u|``.
    """
    rate = train.bandwidth_param / train.duration
    if rate == 0:
        return 0.0
    lo = train.theta
    hi = train.theta + rate * train.duration
    if lo == 0 or hi == 0 or (lo < 0) != (hi < 0):
        raise ValueError("instantaneous frequency crosses zero inside the burst")
    return abs(rate) / min(abs(lo), abs(hi))


@dataclass(frozen=True)
class Scenario:
    """K pulse trains observed on [0, horizon) at ``sample_rate`` Hz.

    ``band_center`` (rad/s) is the receiver tuning: complex sampling at R
    represents the window (band_center - pi R, band_center + pi R] without
    ambiguity, and every instantaneous frequency must lie inside it.
    """

    trains: tuple[ChirpPulseTrain, ...]
    horizon: float
    sample_rate: float
    band_center: float = 0.0
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "trains", tuple(self.trains))
        if not self.horizon > 0:
            raise ConfigError("horizon must be positive")
        if not self.sample_rate > 0:
            raise ConfigError("sample_rate must be positive")
        for j, tr in enumerate(self.trains):
            for a, b in tr.bursts():
                if a < 0 or b > self.horizon * (1 + 1e-12):
                    raise ConfigError(f"train {j}: burst [{a}, {b}] leaves [0, horizon]")
        lo, hi = self.frequency_window
        for j, tr in enumerate(self.trains):
            f0, f1 = tr.theta, tr.theta + 2.0 * tr.bandwidth_param
            if min(f0, f1) <= lo or max(f0, f1) > hi:
                raise ConfigError(
                    f"train {j}: IF range [{min(f0, f1):.4g}, {max(f0, f1):.4g}] rad/s "
                    f"aliases at R={self.sample_rate:.4g} Hz "
                    f"(window ({lo:.4g}, {hi:.4g}]); adjust band_center or sample_rate")

    @property
    def frequency_window(self) -> tuple[float, float]:
        half = math.pi * self.sample_rate
        return self.band_center - half, self.band_center + half

    @property
    def num_samples(self) -> int:
        # record covers [0, horizon); the epsilon absorbs T*R rounding
        return max(1, int(math.floor(self.horizon * self.sample_rate + 1e-9)))

    def with_rate(self, sample_rate: float) -> "Scenario":
        return Scenario(self.trains, self.horizon, sample_rate, self.band_center, self.name)

    def bursts(self) -> list[tuple[int, int, float, float]]:
        """(train index, burst index, start, end) for every burst."""
        return [(j, i, a, b) for j, tr in enumerate(self.trains)
                for i, (a, b) in enumerate(tr.bursts())]

    def total_pulses(self) -> int:
        return sum(tr.burst_count for tr in self.trains)

    def active_frequencies(self, t: float) -> list[float]:
        out = []
        for tr in self.trains:
            f = instantaneous_frequency(tr, t)
            if f is not None:
                out.append(f)
        return out


@dataclass(frozen=True)
class IQRecord:
    samples: np.ndarray
    sample_rate: float
    t0: float = 0.0

    def __post_init__(self):
        s = np.array(self.samples, dtype=np.complex128, copy=True)
        if s.ndim != 1 or s.size == 0:
            raise ValueError("IQRecord needs a non-empty 1-D sample array")
        if not np.all(np.isfinite(s)):
            raise ValueError("IQRecord samples must be finite")
        s.setflags(write=False)
        object.__setattr__(self, "samples", s)
        if not self.sample_rate > 0:
            raise ValueError("sample_rate must be positive")

    def __len__(self):
        return self.samples.size

    @property
    def times(self) -> np.ndarray:
        return self.t0 + np.arange(self.samples.size) / self.sample_rate

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass(frozen=True)
class NoiseSpec:
    snr_db: float
    seed: int = 0
    kind: str = "gaussian"

    def __post_init__(self):
        if self.kind != "gaussian":
            raise ConfigError(f"unsupported noise kind {self.kind!r}")
        if math.isnan(self.snr_db):
            raise ConfigError("snr_db must not be NaN")


def synthesize(scenario: Scenario) -> IQRecord:
    """Closed-form samples of the superposition at t = l/R, l = 0..N-1."""
    R = scenario.sample_rate
    N = scenario.num_samples
    out = np.zeros(N, dtype=np.complex128)
    for tr in scenario.trains:
        rate = tr.bandwidth_param / tr.duration
        for gamma, end in tr.bursts():
            lo = max(0, math.ceil(gamma * R - 1e-9))
            hi = min(N - 1, math.floor(end * R + 1e-9))
            if hi < lo:
                continue
            idx = np.arange(lo, hi + 1)
            u = idx / R - gamma
            # closed interval support, guard against the epsilon above
            keep = (u >= -1e-15) & (u <= tr.duration + 1e-15)
            idx, u = idx[keep], np.clip(u[keep], 0.0, tr.duration)
            out[idx] += tr.amplitude * np.exp(1j * (tr.theta * u + rate * u * u))
    return IQRecord(out, R, 0.0)


def noise_generator(seed: int | Sequence[int], *stream: int) -> np.random.Generator:
    """Independent generator for (seed, *stream); stream ids act as a counter split."""
    entropy = [int(s) for s in np.atleast_1d(seed)]
    ss = np.random.SeedSequence(entropy, spawn_key=tuple(int(s) for s in stream))
    return np.random.Generator(np.random.PCG64(ss))


def add_noise(clean: IQRecord, spec: NoiseSpec, *stream: int) -> IQRecord:
    """F = f + eps with ||eps|| / ||f|| = 10**(-SNR/20) exactly."""
    if math.isinf(spec.snr_db) and spec.snr_db > 0:
        return clean
    f = clean.samples
    fnorm = float(np.linalg.norm(f))
    if fnorm == 0:
        raise ValueError("cannot set an SNR on an all-zero signal")
    rng = noise_generator(spec.seed, *stream)
    n = (rng.standard_normal(f.size) + 1j * rng.standard_normal(f.size)) / math.sqrt(2.0)
    scale = fnorm / (10.0 ** (spec.snr_db / 20.0) * float(np.linalg.norm(n)))
    return IQRecord(f + scale * n, clean.sample_rate, clean.t0)


def realized_snr_db(clean: IQRecord, noisy: IQRecord) -> float:
    eps = noisy.samples - clean.samples
    return 20.0 * math.log10(np.linalg.norm(clean.samples) / np.linalg.norm(eps))
