"""Receive pipeline: normalized cross-correlation, thresholds, field checks."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import fft as sfft

from .channel import cross_channel_isolation  # re-exported for callers
from .phy import (
    CHIP_PS, PHD_BITS, SFD_PATTERNS, SPREAD, BasebandSignal, PacketConfig,
    _spread, build_sync, code_period, crc_bits, header_ok, scrambler, sts_symbols,
)


class ReceiverError(ValueError):
    pass


# ------------------------------------------------------------------------ NCC

@dataclass(frozen=True, eq=False)
class CirEstimate:
    values: np.ndarray
    lag0: int = 0  # lag of values[0]

    @property
    def peak_lag(self) -> int:
        return self.lag0 + int(np.argmax(self.values))

    @property
    def peak_value(self) -> float:
        return float(self.values.max()) if len(self.values) else 0.0

    def at(self, lag: int) -> float:
        return float(self.values[lag - self.lag0])

    @property
    def lags(self) -> np.ndarray:
        return np.arange(self.lag0, self.lag0 + len(self.values))


def _xcorr_valid(x: np.ndarray, t: np.ndarray) -> np.ndarray:
    """sum_n t[n] x[n + k] for k = 0..len(x)-len(t)."""
    n = len(x)
    m = len(t)
    if m * (n - m + 1) <= 200_000:
        return np.correlate(x, t, mode="valid")
    size = sfft.next_fast_len(n + m - 1, real=True)
    spec = sfft.rfft(x, size) * np.conj(sfft.rfft(t, size))
    return sfft.irfft(spec, size)[: n - m + 1]


def ncc_cir(received: np.ndarray, template: np.ndarray,
            lags: tuple[int, int] | None = None) -> CirEstimate:
    """|R_xy(k)| / sqrt(P_template * P_window(k)) for every lag in ``lags``.

    ``lags`` is a half-open ``(first, stop)`` range of template offsets into
    ``received``; by default every valid offset.
    """
    received = np.asarray(received, dtype=np.float64)
    template = np.asarray(template, dtype=np.float64)
    p_t = float(np.dot(template, template))
    if p_t <= 0:
        raise ReceiverError("template has zero power")
    m = len(template)
    last = len(received) - m + 1
    if last < 1:
        raise ReceiverError("received window shorter than template")
    lo, hi = (0, last) if lags is None else (max(lags[0], 0), min(lags[1], last))
    if hi <= lo:
        return CirEstimate(np.zeros(0), lo)
    seg = received[lo: hi - 1 + m]
    r = _xcorr_valid(seg, template)
    csum = np.concatenate([[0.0], np.cumsum(seg * seg)])
    p_x = csum[m:] - csum[:-m]
    # the running sum loses quiet windows that follow loud ones; redo those directly
    shaky = np.flatnonzero(p_x <= 1e-9 * csum[-1])
    if len(shaky):
        windows = np.lib.stride_tricks.sliding_window_view(seg, m)
        for i in range(0, len(shaky), 256):
            ks = shaky[i: i + 256]
            w = windows[ks]
            p_x[ks] = np.einsum("ij,ij->i", w, w)
            r[ks] = w @ template
    denom = np.sqrt(p_t * np.maximum(p_x, 0.0))
    with np.errstate(invalid="ignore", divide="ignore"):
        vals = np.where(denom > 0, np.abs(r) / denom, 0.0)
    return CirEstimate(vals, lo)


def ncc_reference(received: Sequence[float], template: Sequence[float]) -> list[float]:
    """Plain double loop over lags; the oracle for :func:`ncc_cir`."""
    x = [float(v) for v in received]
    t = [float(v) for v in template]
    p_t = sum(v * v for v in t)
    out = []
    for k in range(len(x) - len(t) + 1):
        acc = 0.0
        p_x = 0.0
        for n, tv in enumerate(t):
            xv = x[n + k]
            acc += tv * xv
            p_x += xv * xv
        out.append(abs(acc) / math.sqrt(p_t * p_x) if p_x > 0 else 0.0)
    return out


def jam_attenuation_factor(victim_power: float, jam_power: float) -> float:
    """Predicted drop of the correlation peak when uncorrelated power is added."""
    if not victim_power > 0:
        raise ReceiverError("victim power must be positive")
    if jam_power < 0:
        raise ReceiverError("jam power must be non-negative")
    return math.sqrt(victim_power / (victim_power + jam_power))


def first_peak(cir: CirEstimate, threshold: float, width: int = 2) -> int | None:
    """Earliest qualifying peak, found by repeatedly removing the strongest one."""
    if not 0 < threshold < 1:
        raise ReceiverError("threshold must lie in (0, 1)")
    vals = cir.values.copy()
    found = []
    while len(vals):
        i = int(np.argmax(vals))
        if vals[i] < threshold:
            break
        found.append(i)
        vals[max(i - width, 0): i + width + 1] = -1.0
    return cir.lag0 + min(found) if found else None


# ----------------------------------------------------------------- thresholds

@dataclass(frozen=True)
class DetectionThresholds:
    presence: float = 0.2
    legitimacy: float = 0.4
    sfd: float = 0.6
    # STS passes at min(legitimacy, sts_cfar * off-peak rms)
    sts_cfar: float = 26.0
    # and never below this many standard deviations of a wrong-key correlation
    sts_null_sigmas: float = 5.0
    # data fields fail below this despread signal-to-interference ratio
    decode_sinr_db: float = -15.0

    def __post_init__(self) -> None:
        for name in ("presence", "legitimacy", "sfd"):
            v = getattr(self, name)
            if not 0 < v < 1:
                raise ReceiverError(f"{name} threshold must lie in (0, 1)")
        if not self.presence < self.legitimacy:
            raise ReceiverError("presence threshold must be below legitimacy")


DEFAULT_THRESHOLDS = DetectionThresholds()


class Outcome(str, enum.Enum):
    NO_DETECTION = "NoDetection"
    SYNC_ERROR = "SyncError"
    SFD_ERROR = "SfdError"
    STS_PHD_ERROR = "StsPhdError"
    OK = "Ok"


PIPELINE_ORDER = (Outcome.NO_DETECTION, Outcome.SYNC_ERROR, Outcome.SFD_ERROR,
                  Outcome.STS_PHD_ERROR, Outcome.OK)


@dataclass(frozen=True, eq=False)
class RxOutcome:
    kind: Outcome
    rx_timestamp: int | None = None
    sync_cir: CirEstimate | None = None
    sts_cir: CirEstimate | None = None
    sync_peak: float | None = None
    sts_peak: float | None = None

    def __post_init__(self) -> None:
        if (self.kind is Outcome.OK) != (self.rx_timestamp is not None):
            raise ReceiverError("only an Ok outcome carries a timestamp")

    @property
    def ok(self) -> bool:
        return self.kind is Outcome.OK

    def to_record(self) -> dict:
        rec = {"outcome": self.kind.value}
        if self.rx_timestamp is not None:
            rec["rx_ts"] = self.rx_timestamp
        if self.sync_peak is not None:
            rec["sync_peak"] = round(self.sync_peak, 6)
        if self.sts_peak is not None:
            rec["sts_peak"] = round(self.sts_peak, 6)
        return rec


# ----------------------------------------------------------------- pipeline

def _comb(n: int) -> np.ndarray:
    """Zero-mean template that rewards energy on the pulse grid only."""
    t = np.full(n, -1.0 / SPREAD)
    t[::SPREAD] += 1.0
    return t


def _segment(x: np.ndarray, a: int, n: int) -> np.ndarray:
    """x[a:a+n] zero-padded where it runs off the window."""
    out = np.zeros(n)
    lo, hi = max(a, 0), min(a + n, len(x))
    if hi > lo:
        out[lo - a: hi - a] = x[lo:hi]
    return out


def period_correlations(x: np.ndarray, start: int, count: int, period: np.ndarray) -> np.ndarray:
    """Signed normalized correlation of ``count`` consecutive code periods."""
    p = len(period)
    seg = _segment(x, start, count * p).reshape(count, p)
    num = seg @ period
    den = np.sqrt(np.dot(period, period) * np.einsum("ij,ij->i", seg, seg))
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(den > 0, num / den, 0.0)


def presence_score(x: np.ndarray, n: int, lags: tuple[int, int]) -> float:
    rect = np.abs(x)
    if len(rect) < n:
        return 0.0
    return ncc_cir(rect, _comb(n), lags).peak_value


def _structural_ok(x: np.ndarray, a: int, b: int, thr: float) -> bool:
    n = b - a
    if n <= 0 or a < 0 or b > len(x):
        return False
    return ncc_cir(np.abs(x[a:b]), _comb(n)).peak_value >= thr


@dataclass
class _Decoded:
    bits: np.ndarray
    sinr: float


def _soft_decode(x: np.ndarray, pos: int, n_bits: int, ppb: int, profile_id: int,
                 pulse_offset: int, amp: float) -> _Decoded | None:
    n_pulses = n_bits * ppb
    if n_bits == 0:
        return _Decoded(np.zeros(0, dtype=np.int64), math.inf)
    if pos < 0 or pos + n_pulses * SPREAD > len(x):
        return None
    slots = x[pos: pos + n_pulses * SPREAD].reshape(n_pulses, SPREAD).sum(axis=1)
    scr = scrambler(profile_id, pulse_offset + n_pulses)[pulse_offset:]
    soft = slots * scr
    metric = soft.reshape(n_bits, ppb).sum(axis=1)
    bits = (metric < 0).astype(np.int64)
    signed = soft * np.repeat(1.0 - 2.0 * bits, ppb)
    spread_power = float(np.mean(signed * signed)) - amp * amp
    sinr = math.inf if spread_power <= 0 else amp * amp / spread_power
    return _Decoded(bits, sinr)


def receive_packet(waveform: BasebandSignal, rx: PacketConfig, key: int | None,
                   thresholds: DetectionThresholds = DEFAULT_THRESHOLDS, *,
                   sts_counter: int = 0, search_chips: int | None = None) -> RxOutcome:
    """Run the field-by-field checks on a received window.

    ``key=None`` models a listener without the STS key: STS content cannot be
    verified, so only its on-air structure and the packet end are checked.
    """
    x = waveform.samples
    period = code_period(rx)
    P = len(period)
    search = P if search_chips is None else search_chips

    # (1) channel + PAC gate, then code-agnostic energy on one chunk
    if waveform.sources and not any(
        s.channel == rx.channel and s.pac == rx.pac for s in waveform.sources
    ):
        return RxOutcome(Outcome.NO_DETECTION)
    chunk = rx.pac * P
    if presence_score(x, chunk, (0, search)) < thresholds.presence:
        return RxOutcome(Outcome.NO_DETECTION)

    # (2) full-preamble NCC, then a preamble-length check on code periods
    template = build_sync(rx)
    if len(x) < len(template):
        return RxOutcome(Outcome.SYNC_ERROR)
    sync_cir = ncc_cir(x, template, (0, search))
    lag = first_peak(sync_cir, thresholds.legitimacy)
    if lag is None:
        return RxOutcome(Outcome.SYNC_ERROR, sync_cir=sync_cir, sync_peak=sync_cir.peak_value)
    sync_peak = sync_cir.at(lag)
    reps = rx.reps
    tail = period_correlations(x, lag + (reps - 4) * P, 5, period)
    if tail[:4].mean() < thresholds.presence or tail[4] >= thresholds.presence:
        return RxOutcome(Outcome.SYNC_ERROR, sync_cir=sync_cir, sync_peak=sync_peak)
    fail = lambda kind, **kw: RxOutcome(kind, sync_cir=sync_cir, sync_peak=sync_peak, **kw)  # noqa: E731

    # (3) SFD: despread each symbol period, then match the symbol pattern
    pattern = np.asarray(SFD_PATTERNS[rx.sfd_type], dtype=np.float64)
    sym = period_correlations(x, lag + reps * P, len(pattern), period)
    den = math.sqrt(float(np.dot(sym, sym)) * float(np.dot(pattern, pattern)))
    if den == 0 or float(np.dot(sym, pattern)) / den < thresholds.sfd:
        return fail(Outcome.SFD_ERROR)

    # (4) STS and PHD/payload share one verdict
    pos = lag + (reps + len(pattern)) * P
    prof = rx.profile
    sts_chips = rx.sts_length * SPREAD if rx.has_sts else 0
    phd_chips = PHD_BITS * prof.phd_pulses_per_bit * SPREAD
    amp = float(np.dot(template, x[lag: lag + len(template)])) / float(np.dot(template, template))
    sinr_min = 10 ** (thresholds.decode_sinr_db / 10)

    sts_pos = pos if rx.sts_mode in ("sp1", "sp3") else None
    data_pos = pos + sts_chips if rx.sts_mode == "sp1" else pos
    end = None
    sts_cir = None
    sts_peak = None

    if rx.has_phd:
        hdr = _soft_decode(x, data_pos, PHD_BITS, prof.phd_pulses_per_bit, prof.id, 0, amp)
        n_pay = header_ok(hdr.bits, prof) if hdr is not None else None
        if n_pay is None or hdr.sinr < sinr_min:
            return fail(Outcome.STS_PHD_ERROR)
        n_field = n_pay + 16 if n_pay else 0
        pay = _soft_decode(x, data_pos + phd_chips, n_field, prof.pulses_per_bit, prof.id,
                           PHD_BITS * prof.phd_pulses_per_bit, amp)
        if pay is None or pay.sinr < sinr_min:
            return fail(Outcome.STS_PHD_ERROR)
        if n_pay and list(pay.bits[n_pay:]) != crc_bits(list(pay.bits[:n_pay]), prof):
            return fail(Outcome.STS_PHD_ERROR)
        data_end = data_pos + phd_chips + n_field * prof.pulses_per_bit * SPREAD
        if rx.sts_mode == "sp2":
            sts_pos = data_end
            end = data_end + sts_chips
        else:
            end = data_end
    else:
        end = pos + sts_chips

    if rx.has_sts:
        if key is not None:
            tmpl = _spread(sts_symbols(key, rx.sts_length, sts_counter))
            sts_cir = ncc_cir(x, tmpl, (sts_pos - 64, sts_pos + 65))
            if len(sts_cir.values) == 0:
                return fail(Outcome.STS_PHD_ERROR)
            sts_peak = sts_cir.peak_value
            peak_at = sts_cir.peak_lag
            off = np.abs(sts_cir.lags - peak_at) > SPREAD
            floor = float(np.sqrt(np.mean(sts_cir.values[off] ** 2))) if off.any() else 0.0
            need = max(min(thresholds.legitimacy, thresholds.sts_cfar * floor),
                       thresholds.sts_null_sigmas / math.sqrt(rx.sts_length))
            if abs(peak_at - sts_pos) > 2 or sts_peak < need:
                return fail(Outcome.STS_PHD_ERROR, sts_cir=sts_cir, sts_peak=sts_peak)
        elif not _structural_ok(x, sts_pos, sts_pos + sts_chips, thresholds.presence):
            return fail(Outcome.STS_PHD_ERROR)

    if key is None or rx.sts_mode in ("sp3", "off"):
        # without the key, or with nothing after the last checked field, the
        # packet end is the only handle on what follows
        last = _structural_ok(x, end - P, end, thresholds.presence)
        after_n = min(P, len(x) - end)
        after = after_n >= 64 and _structural_ok(x, end, end + after_n, thresholds.presence)
        if not last or after:
            return fail(Outcome.STS_PHD_ERROR)

    ts = waveform.start_time + round(lag * CHIP_PS)
    return RxOutcome(Outcome.OK, ts, sync_cir, sts_cir, sync_peak, sts_peak)


# --------------------------------------------------------- link-level oracle

@dataclass(frozen=True)
class LinkBudget:
    """Received pulse amplitude and per-chip noise variance at the receiver."""

    amplitude: float
    noise_var: float


def _folded_mean(mu: float, sigma: float) -> float:
    """E|mu + N(0, sigma^2)|."""
    if sigma == 0:
        return abs(mu)
    z = mu / sigma
    return sigma * math.sqrt(2 / math.pi) * math.exp(-z * z / 2) + mu * math.erf(z / math.sqrt(2))


def expected_presence(amplitude: float, noise_var: float, density: float) -> float:
    """Mean comb score on the rectified signal, one pulse per 4-chip slot."""
    sigma = math.sqrt(noise_var)
    lift = density * (_folded_mean(amplitude, sigma) - _folded_mean(0.0, sigma))
    power = density * amplitude ** 2 / SPREAD + noise_var
    if power == 0:
        return 0.0
    # comb weights: (S-1)/S on the pulse chip, -1/S elsewhere
    weight = (SPREAD - 1) / SPREAD ** 2
    return math.sqrt(weight) * lift / math.sqrt(power)


def predict_outcome(tx: PacketConfig, rx: PacketConfig, link: LinkBudget, *,
                    arrival_ps: int, key_match: bool | None = True,
                    thresholds: DetectionThresholds = DEFAULT_THRESHOLDS) -> RxOutcome:
    """Outcome for a lone packet, from config comparison plus predicted NCC.

    Stands in for :func:`receive_packet` when nothing else is on air; the two
    agree on matched and mismatched configs (checked in the test-suite).
    """
    if tx.channel != rx.channel or tx.pac != rx.pac:
        return RxOutcome(Outcome.NO_DETECTION)
    a2 = link.amplitude ** 2
    n0 = link.noise_var
    code = rx.code
    dens = code.density
    presence = expected_presence(link.amplitude, n0, dens)
    if presence < thresholds.presence:
        return RxOutcome(Outcome.NO_DETECTION)
    if (tx.preamble_code, tx.preamble_length) != (rx.preamble_code, rx.preamble_length):
        return RxOutcome(Outcome.SYNC_ERROR)
    n_t = rx.preamble_length * SPREAD
    es = a2 * dens * n_t / SPREAD
    sync_peak = math.sqrt(es / (es + n0 * n_t))
    if sync_peak < thresholds.legitimacy:
        return RxOutcome(Outcome.SYNC_ERROR, sync_peak=sync_peak)
    if tx.sfd_type != rx.sfd_type:
        return RxOutcome(Outcome.SFD_ERROR, sync_peak=sync_peak)
    if tx.receiver_view() != rx.receiver_view() or (key_match is False and rx.has_sts):
        return RxOutcome(Outcome.STS_PHD_ERROR, sync_peak=sync_peak)
    if rx.has_phd and a2 / (SPREAD * n0 + 1e-300) < 10 ** (thresholds.decode_sinr_db / 10):
        return RxOutcome(Outcome.STS_PHD_ERROR, sync_peak=sync_peak)
    return RxOutcome(Outcome.OK, arrival_ps, sync_peak=sync_peak)


__all__ = [
    "CirEstimate", "ncc_cir", "ncc_reference", "jam_attenuation_factor", "first_peak",
    "DetectionThresholds", "DEFAULT_THRESHOLDS", "Outcome", "PIPELINE_ORDER", "RxOutcome",
    "receive_packet", "predict_outcome", "LinkBudget", "cross_channel_isolation",
    "period_correlations", "presence_score", "expected_presence", "ReceiverError",
]
