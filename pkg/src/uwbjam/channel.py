"""Free-space propagation, superposition at a receiver, and receiver noise."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np

from .phy import CHIP_PS, SPEED_OF_LIGHT, BasebandSignal

# HRP channel numbers a transceiver may be tuned to
KNOWN_CHANNELS = frozenset(range(16))
ADJACENT_ISOLATION = 1e-3


class ChannelError(ValueError):
    pass


def noise_for_snr(snr_db: float, reference_loss: float = 1.0) -> float:
    """Per-chip noise variance giving ``snr_db`` for a unit pulse at 1 m."""
    return reference_loss / 10 ** (snr_db / 10)


@dataclass(frozen=True)
class ChannelParams:
    path_loss_exponent: float = 2.0
    reference_loss_at_1m: float = 1.0
    noise_power_density: float = noise_for_snr(25.0)
    propagation_speed: float = SPEED_OF_LIGHT
    rng_seed: int = 0
    # path loss is evaluated no closer than this to avoid the 1/d^n pole
    near_field_m: float = 0.1
    taps: tuple[tuple[int, float], ...] = ()

    def __post_init__(self) -> None:
        if self.path_loss_exponent < 1:
            raise ChannelError("path loss exponent must be >= 1")
        if self.noise_power_density < 0:
            raise ChannelError("noise power density must be >= 0")
        if self.propagation_speed != SPEED_OF_LIGHT:
            raise ChannelError("propagation speed is fixed to c")
        if self.reference_loss_at_1m <= 0:
            raise ChannelError("reference loss must be positive")
        if not 0 <= self.rng_seed < 2**64:
            raise ChannelError("rng seed must fit in 64 bits")
        for delay, _ in self.taps:
            if delay < 0:
                raise ChannelError("tap delays must be non-negative")
        object.__setattr__(self, "taps", tuple((int(d), float(a)) for d, a in self.taps))

    def to_dict(self) -> dict:
        return {
            "path_loss_exponent": self.path_loss_exponent,
            "reference_loss_at_1m": self.reference_loss_at_1m,
            "noise_power_density": self.noise_power_density,
            "rng_seed": self.rng_seed,
            "near_field_m": self.near_field_m,
            "taps": [list(t) for t in self.taps],
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "ChannelParams":
        data = dict(data)
        if "snr_db" in data:
            snr = data.pop("snr_db")
            data.setdefault("noise_power_density",
                            noise_for_snr(snr, data.get("reference_loss_at_1m", 1.0)))
        data.pop("propagation_speed", None)
        if "taps" in data:
            data["taps"] = tuple(tuple(t) for t in data["taps"])
        return cls(**data)


@dataclass(frozen=True)
class NodePosition:
    x: float
    y: float = 0.0

    def __post_init__(self) -> None:
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ChannelError("positions must be finite")

    def distance_to(self, other: "NodePosition") -> float:
        return math.hypot(self.x - other.x, self.y - other.y)


def tof_ps(distance_m: float, params: ChannelParams | None = None) -> int:
    speed = params.propagation_speed if params else SPEED_OF_LIGHT
    return round(distance_m / speed * 1e12)


def path_amplitude(distance_m: float, params: ChannelParams) -> float:
    d = max(distance_m, params.near_field_m)
    return math.sqrt(params.reference_loss_at_1m * d ** (-params.path_loss_exponent))


def cross_channel_isolation(ch_a: int, ch_b: int) -> float:
    """Amplitude factor for a signal sent on ``ch_a`` and heard on ``ch_b``."""
    for ch in (ch_a, ch_b):
        if ch not in KNOWN_CHANNELS:
            raise ChannelError(f"unknown channel id {ch}")
    return 1.0 if ch_a == ch_b else ADJACENT_ISOLATION


def apply_taps(samples: np.ndarray, taps: Iterable[tuple[int, float]]) -> np.ndarray:
    taps = list(taps)
    if not taps:
        return samples
    span = max(d for d, _ in taps)
    out = np.zeros(len(samples) + span)
    for delay, amp in taps:
        out[delay:delay + len(samples)] += amp * samples
    return out


def propagate(signal: BasebandSignal, frm: NodePosition, to: NodePosition,
              params: ChannelParams) -> BasebandSignal:
    d = frm.distance_to(to)
    samples = signal.samples * path_amplitude(d, params)
    bounds = signal.field_boundaries
    if params.taps:
        samples = apply_taps(samples, params.taps)
        extra = len(samples) - len(signal.samples)
        name, a, b = bounds[-1]
        bounds = bounds[:-1] + ((name, a, b + extra),)
    return BasebandSignal(samples, signal.start_time + tof_ps(d, params), bounds,
                          signal.sources)


@dataclass(frozen=True)
class TimeWindow:
    start: int  # ps
    n_chips: int

    @property
    def end(self) -> int:
        return self.start + round(self.n_chips * CHIP_PS)

    def overlaps(self, start_ps: int, end_ps: int) -> bool:
        return start_ps < self.end and end_ps > self.start


def noise_stream(params: ChannelParams, window: TimeWindow, salt: int = 0) -> np.ndarray:
    if params.noise_power_density == 0:
        return np.zeros(window.n_chips)
    rng = np.random.default_rng([params.rng_seed, window.start, salt])
    return rng.standard_normal(window.n_chips) * math.sqrt(params.noise_power_density)


def superpose(signals: Iterable[BasebandSignal], window: TimeWindow, params: ChannelParams,
              rx_channel: int | None = None, noise_salt: int = 0) -> BasebandSignal:
    """Sum signals on the window's chip grid and add receiver noise."""
    out = noise_stream(params, window, noise_salt)
    sources = []
    for sig in signals:
        offset = round((sig.start_time - window.start) / CHIP_PS)
        a, b = max(offset, 0), min(offset + len(sig), window.n_chips)
        if a >= b:
            continue
        gain = 1.0
        if rx_channel is not None and sig.sources:
            gain = cross_channel_isolation(sig.sources[0].channel, rx_channel)
        out[a:b] += gain * sig.samples[a - offset:b - offset]
        sources.extend(sig.sources)
    return BasebandSignal(out, window.start, (), tuple(sources))
