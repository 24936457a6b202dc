"""Two-way ranging arithmetic, node clocks, schedules and the stale-data policy."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .phy import SPEED_OF_LIGHT

PS = 1e-12


class RangingError(ValueError):
    pass


class Mode(str, enum.Enum):
    SS = "SS"
    DS = "DS"


class Role(str, enum.Enum):
    POLL = "poll"
    RESPONSE = "response"
    FINAL = "final"


@dataclass(frozen=True)
class ClockModel:
    drift_ppm: float = 0.0
    offset: int = 0  # ps

    def __post_init__(self) -> None:
        if abs(self.drift_ppm) > 100:
            raise RangingError("clock drift beyond ±100 ppm")

    @property
    def rate(self) -> float:
        return 1.0 + self.drift_ppm * 1e-6

    def local(self, t_global: int) -> int:
        return round(t_global * self.rate) + self.offset

    def to_global(self, t_local: int) -> int:
        return round((t_local - self.offset) / self.rate)


@dataclass(frozen=True)
class SessionSchedule:
    t1_us: float = 800.0
    t2_us: float = 1600.0
    t3_ms: float = 167.0
    jitter_bound_us: float = 0.0
    packet_us: float = 0.0  # t0, filled from the packet config

    def __post_init__(self) -> None:
        if not 0 < self.t1_us < self.t2_us < self.t3_ms * 1000:
            raise RangingError("schedule needs t1 < t2 < t3")
        if self.jitter_bound_us:
            if self.jitter_bound_us < self.packet_us:
                raise RangingError("jitter bound must be at least the packet duration")
            if self.t1_us + self.jitter_bound_us + self.packet_us >= self.t2_us - self.jitter_bound_us:
                raise RangingError("jitter would let the response and final collide")

    @property
    def jitter_on(self) -> bool:
        return self.jitter_bound_us > 0

    def draw_jitter_ps(self, rng: np.random.Generator) -> int:
        """Uniform over [-bound, -t0] U [t0, bound]; zero when disabled."""
        if not self.jitter_on:
            return 0
        lo, hi = self.packet_us, self.jitter_bound_us
        mag = rng.uniform(lo, hi)
        sign = 1 if rng.random() < 0.5 else -1
        return round(sign * mag * 1e6)

    def to_dict(self) -> dict:
        return {"t1_us": self.t1_us, "t2_us": self.t2_us, "t3_ms": self.t3_ms,
                "jitter_bound_us": self.jitter_bound_us}


@dataclass
class RangingRecord:
    session: int
    mode: Mode
    t_sp: int | None = None
    t_rp: int | None = None
    t_sr: int | None = None
    t_rr: int | None = None
    t_sf: int | None = None
    t_rf: int | None = None
    distance: float | None = None
    status: str = "Pending"  # Completed | Dropped(<role>) | Pending
    valid: bool = True
    finished_at: int | None = None  # global ps

    @property
    def completed(self) -> bool:
        return self.status == "Completed"

    def drop(self, at: Role, when: int) -> None:
        if self.status == "Pending":
            self.status = f"Dropped({at.value})"
            self.finished_at = when

    def complete(self, when: int) -> None:
        d = distance_ss_twr(self.t_sp, self.t_rp, self.t_sr, self.t_rr) if self.mode is Mode.SS \
            else distance_ds_twr(self)
        self.distance = d
        self.valid = d >= 0
        self.status = "Completed"
        self.finished_at = when

    def to_record(self) -> dict:
        rec = {"session": self.session, "mode": self.mode.value, "status": self.status,
               "tSP": self.t_sp, "tRP": self.t_rp, "tSR": self.t_sr, "tRR": self.t_rr}
        if self.mode is Mode.DS:
            rec.update(tSF=self.t_sf, tRF=self.t_rf)
        if self.distance is not None:
            rec["distance"] = round(self.distance, 9)
            rec["valid"] = self.valid
        return rec


def _check_order(*ts: int | None) -> None:
    if any(t is None for t in ts):
        raise RangingError("missing timestamp")


def distance_ss_twr(t_sp: int, t_rp: int, t_sr: int, t_rr: int) -> float:
    """Metres from one round trip: (c/2) * (round - reply)."""
    _check_order(t_sp, t_rp, t_sr, t_rr)
    if t_rr < t_sp or t_sr < t_rp:
        raise RangingError("timestamps out of protocol order")
    return SPEED_OF_LIGHT / 2 * ((t_rr - t_sp) - (t_sr - t_rp)) * PS


def distance_ds_twr(rec: RangingRecord) -> float:
    """Metres from two round trips; first-order clock drift cancels."""
    _check_order(rec.t_sp, rec.t_rp, rec.t_sr, rec.t_rr, rec.t_sf, rec.t_rf)
    if rec.t_rr < rec.t_sp or rec.t_sr < rec.t_rp or rec.t_sf < rec.t_rr or rec.t_rf < rec.t_sr:
        raise RangingError("timestamps out of protocol order")
    dt = (rec.t_rr - rec.t_sp) - (rec.t_sr - rec.t_rp) + (rec.t_rf - rec.t_sr) - (rec.t_sf - rec.t_rr)
    return SPEED_OF_LIGHT / 4 * dt * PS


def ideal_record(distance_m: float, schedule: SessionSchedule, *, initiator: ClockModel = ClockModel(),
                 responder: ClockModel = ClockModel(), mode: Mode = Mode.DS,
                 start_ps: int = 0) -> RangingRecord:
    """Timestamps of a clean exchange, computed in closed form.

    Used as the arithmetic oracle for drift effects: no waveforms involved.
    """
    tof = round(distance_m / SPEED_OF_LIGHT / PS)
    rec = RangingRecord(0, mode)
    rec.t_sp = initiator.local(start_ps)
    poll_rx = start_ps + tof
    rec.t_rp = responder.local(poll_rx)
    rec.t_sr = rec.t_rp + round(schedule.t1_us * 1e6)
    resp_tx = responder.to_global(rec.t_sr)
    rec.t_rr = initiator.local(resp_tx + tof)
    if mode is Mode.DS:
        rec.t_sf = rec.t_sp + round(schedule.t2_us * 1e6)
        final_tx = initiator.to_global(rec.t_sf)
        rec.t_rf = responder.local(final_tx + tof)
    rec.complete(start_ps)
    return rec


class AccessDecision(str, enum.Enum):
    GRANTED = "granted"
    DENIED = "denied"


def stale_data_policy(history: Iterable[RangingRecord], now_s: float, expiry_s: float,
                      radius_m: float = 5.0) -> AccessDecision:
    """Grant only on a recent enough, close enough successful ranging."""
    if expiry_s <= 0:
        raise RangingError("expiry must be positive")
    latest = None
    for rec in history:
        if rec.completed and rec.valid and rec.finished_at is not None:
            if latest is None or rec.finished_at > latest.finished_at:
                latest = rec
    if latest is None:
        return AccessDecision.DENIED
    age = now_s - latest.finished_at * PS
    if age < expiry_s and latest.distance <= radius_m:
        return AccessDecision.GRANTED
    return AccessDecision.DENIED


def run_session(world, schedule: SessionSchedule, mode: Mode | str = Mode.DS) -> RangingRecord:
    """Run one ranging exchange inside ``world`` (a :class:`simcore.Scenario`)."""
    from .simcore import run_single_session

    return run_single_session(world, schedule, Mode(mode))
