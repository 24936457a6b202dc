"""Threshold checks applied to experiment tables.

Each checker returns a list of human-readable failures; an empty list passes.
"""

from __future__ import annotations

import statistics

from .experiments import Table

DEGRADATION_TARGETS = {1.0: 0.707, 3.0: 0.5, 15.0: 0.25}
DEGRADATION_TOL = 0.05
SYNC_WINDOW_US = (736.0, 864.0)
SNIFF_MEAN = (124.0, 144.0)


def _rows(table: Table) -> list[dict]:
    return [dict(zip(table.header, r)) for r in table.rows]


def check_cir_degradation(table: Table) -> list[str]:
    out = []
    for r in _rows(table):
        want = DEGRADATION_TARGETS.get(r["gain"])
        if want is not None and abs(r["measuredFactor"] - want) > DEGRADATION_TOL:
            out.append(f"gain {r['gain']:g}: factor {r['measuredFactor']:.3f}, want {want}±{DEGRADATION_TOL}")
    return out


def check_field_sweep(table: Table) -> list[str]:
    rate = {(r["field"], r["gain"]): r["successRate"] for r in _rows(table)}
    out = []
    if rate.get(("SYNC", 8.0)) != 1.0:
        out.append(f"SYNC at 8x: {rate.get(('SYNC', 8.0))}, want exactly 1")
    sts = [v for (f, g), v in rate.items() if f == "STS"]
    if sts and max(sts) >= 1.0:
        out.append("STS jamming reached 100%")
    for f in ("PHD", "payload"):
        for (ff, g), v in rate.items():
            if ff != f:
                continue
            if g < 48 and v >= 1.0:
                out.append(f"{f} reached 100% below 48x (gain {g:g})")
            if g >= 48 and v < 1.0:
                out.append(f"{f} at {g:g}x: {v:.3f}, want 1")
    return out


def high_window(rows: list[dict], gain: float, level: float = 0.9) -> list[float]:
    return [r["delayUs"] for r in rows if r["gain"] == gain and r["successRate"] >= level]


def check_delay_sweep(table: Table, low: float = 0.05) -> list[str]:
    rows = _rows(table)
    out = []
    lo, hi = SYNC_WINDOW_US
    for r in rows:
        if r["gain"] != 8.0:
            continue
        inside = lo <= r["delayUs"] <= hi
        if not inside and r["successRate"] > low:
            out.append(f"gain 8 at {r['delayUs']:g} µs outside the overlap window: {r['successRate']:.3f}")
    w8, w15 = high_window(rows, 8.0), high_window(rows, 15.0)
    if not w8:
        out.append("gain 8 never reaches 90%")
    elif not all(lo <= d <= hi for d in w8):
        out.append("gain 8 high-success delays leave the overlap window")
    if w8 and not (set(w8) < set(w15)):
        out.append(f"gain 15 window {w15} not strictly wider than gain 8 window {w8}")
    return out


def check_sniff_time(table: Table) -> list[str]:
    rows = _rows(table)
    mean = statistics.fmean(r["packetsUsed"] for r in rows)
    out = []
    if not SNIFF_MEAN[0] <= mean <= SNIFF_MEAN[1]:
        out.append(f"mean packets {mean:.1f} outside {SNIFF_MEAN}")
    sync_share = sum(r["stage1"] + r["stage2"] for r in rows) / sum(r["packetsUsed"] for r in rows)
    if sync_share <= 0.5:
        out.append(f"SYNC stages take {sync_share:.2f} of packets, want > 0.5")
    return out


def check_countermeasure(table: Table, bound: float = 0.2) -> list[str]:
    return [f"jitter {r['jitterBoundUs']:g} gain {r['gain']:g}: {r['successRate']:.3f}"
            for r in _rows(table) if r["successRate"] >= bound]


def check_distance(table: Table) -> list[str]:
    out = []
    by_attack: dict[float, list[tuple[float, float]]] = {}
    for r in _rows(table):
        by_attack.setdefault(r["attackDistanceM"], []).append((r["rangingDistanceM"], r["successRate"]))
    for a, pts in by_attack.items():
        rates = [v for _, v in sorted(pts)]
        if any(b < a_ for a_, b in zip(rates, rates[1:])):
            out.append(f"attack distance {a:g}: success not monotone in ranging distance {rates}")
    return out


def check_selective(table: Table) -> list[str]:
    out = []
    for r in _rows(table):
        if r["targeted"] and r["successRate"] != 1.0:
            out.append(f"targeted pair {r['pair']}: success {r['successRate']}")
        if not r["targeted"] and r["completionRate"] < 0.99:
            out.append(f"bystander pair {r['pair']}: completion {r['completionRate']:.3f}")
    return out


CHECKS = {
    "cir_degradation": check_cir_degradation,
    "field_sweep": check_field_sweep,
    "delay_sweep": check_delay_sweep,
    "sniff_time": check_sniff_time,
    "countermeasure": check_countermeasure,
    "distance": check_distance,
    "selective": check_selective,
}


def check(table: Table) -> list[str]:
    return CHECKS[table.name](table)
