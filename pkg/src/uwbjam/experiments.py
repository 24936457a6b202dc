"""Built-in experiments. Each returns rows and writes a CSV with a fixed header."""

from __future__ import annotations

import csv
import io
import math
import os
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np

from .attacker import AttackerSpec, pick_jam_code, sniff_with_oracle
from .channel import ChannelParams, noise_for_snr
from .phy import DEFAULT_DOMAINS, build_sync, default_config
from .ranging import SessionSchedule
from .receiver import jam_attenuation_factor, ncc_cir
from .simcore import NodeSpec, PairSpec, Scenario, Trace, run

SESSIONS_PER_30S = 180
OUTPUT_ENV = "UWBJAM_OUTPUT_DIR"

# column order is part of the output contract
HEADERS = {
    "cir_degradation": ("gain", "predictedFactor", "measuredFactor", "measuredStd", "trials"),
    "field_sweep": ("field", "gain", "sessions", "polls", "responses", "successRate"),
    "delay_sweep": ("gain", "delayUs", "sessions", "polls", "responses", "successRate"),
    "sniff_time": ("trial", "packetsUsed", "stage1", "stage2", "stage3", "stage4", "seconds"),
    "countermeasure": ("jitterBoundUs", "gain", "sessions", "polls", "responses", "successRate"),
    "distance": ("attackDistanceM", "rangingDistanceM", "gain", "sessions", "successRate"),
    "selective": ("pair", "targeted", "sessions", "completed", "completionRate", "successRate"),
}


class ExperimentError(ValueError):
    pass


@dataclass(frozen=True)
class Table:
    name: str
    rows: list[tuple]

    @property
    def header(self) -> tuple[str, ...]:
        return HEADERS[self.name]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.header)
        for row in self.rows:
            w.writerow([_fmt(v) for v in row])
        return buf.getvalue()

    def write(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_csv())
        return path

    def column(self, name: str) -> list:
        i = self.header.index(name)
        return [r[i] for r in self.rows]


def _fmt(v: Any) -> str:
    if isinstance(v, float):
        return "" if math.isnan(v) else f"{v:.6f}"
    if v is None:
        return ""
    return str(v)


def output_dir(default: str | Path = "results") -> Path:
    return Path(os.environ.get(OUTPUT_ENV, default))


def point_seed(base: int, *index: int) -> int:
    """Independent 64-bit seed for one sweep point."""
    return int(np.random.SeedSequence([base, *index]).generate_state(1, np.uint64)[0])


def _map(fn: Callable, jobs: Sequence, workers: int) -> list:
    # results come back in job order regardless of worker count
    if workers <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, jobs))


# ------------------------------------------------------------ attack points

@dataclass(frozen=True)
class AttackPoint:
    gain: float
    field: str = "SYNC"
    delay_us: float = 800.0
    sessions: int = SESSIONS_PER_30S
    seed: int = 1
    t_delta_sigma_us: float = 0.0
    jitter_bound_us: float = 0.0
    responder_x: float = 1.0
    attacker_xy: tuple[float, float] = (0.0, 1.0)
    snr_db: float = 25.0


def attack_scenario(p: AttackPoint) -> Scenario:
    cfg = default_config()
    pair = PairSpec(responder=NodeSpec(p.responder_x, 0.0), config=cfg,
                    schedule=SessionSchedule(jitter_bound_us=p.jitter_bound_us))
    spec = AttackerSpec(x=p.attacker_xy[0], y=p.attacker_xy[1], gain=p.gain, known_config=cfg,
                        target_field=p.field, delay_override_us=p.delay_us,
                        t_delta_sigma_us=p.t_delta_sigma_us)
    return Scenario(
        pairs=(pair,), channel=ChannelParams(noise_power_density=noise_for_snr(p.snr_db)),
        attacker=spec, seed=p.seed, max_sessions=p.sessions,
        duration_s=(pair.start_offset_us * 1e-6 + p.sessions * pair.schedule.t3_ms * 1e-3),
    )


def run_attack_point(p: AttackPoint) -> dict:
    trace = run(attack_scenario(p))
    m = trace.metrics["pairs"]["0"]
    return {"polls": m["N_p"], "responses": m["N_r"], "success": m["success_rate"],
            "trace": trace}


def _points(points: Sequence[AttackPoint], workers: int, trace_dir: Path | None,
            tag: Callable[[AttackPoint], str]) -> list[dict]:
    results = _map(run_attack_point, points, workers)
    for p, r in zip(points, results):
        trace: Trace = r.pop("trace")
        if trace_dir is not None:
            trace.write(Path(trace_dir) / f"{tag(p)}.jsonl")
    return results


# -------------------------------------------------------------- experiments

def exp_cir_degradation(gains: Sequence[float] = (1, 3, 15), *, trials: int = 5, seed: int = 1,
                        snr_db: float = 25.0) -> Table:
    """Drop of the victim's SYNC correlation peak under a concurrent preamble jam."""
    cfg = default_config()
    sync = build_sync(cfg)
    jam_code = pick_jam_code(cfg.preamble_code)
    jam_len = len(build_sync(replace(cfg, preamble_code=jam_code, preamble_length=cfg.pac * 255)))
    reps = cfg.pac * math.ceil(len(sync) / (jam_len / cfg.pac) / cfg.pac)
    jam_cfg = replace(cfg, preamble_code=jam_code, preamble_length=reps * 255)
    jam_sync = build_sync(jam_cfg)[: len(sync)]
    guard = 64
    lags = (guard, guard + 1)
    noise_std = math.sqrt(noise_for_snr(snr_db))
    rows = []
    for gi, g in enumerate(gains):
        if g < 0:
            raise ExperimentError("gain must be non-negative")
        factors = []
        for t in range(trials):
            rng = np.random.default_rng(point_seed(seed, gi, t))
            clean = rng.standard_normal(len(sync) + 2 * guard) * noise_std
            clean[guard: guard + len(sync)] += sync
            jammed = clean.copy()
            jammed[guard: guard + len(sync)] += math.sqrt(g) * jam_sync
            ref = ncc_cir(clean, sync, lags).peak_value
            factors.append(ncc_cir(jammed, sync, lags).peak_value / ref)
        victim_power = float(np.mean(sync ** 2))
        jam_power = g * float(np.mean(jam_sync ** 2))
        pred = jam_attenuation_factor(victim_power, jam_power)
        std = statistics.pstdev(factors) if len(factors) > 1 else 0.0
        rows.append((float(g), pred, statistics.fmean(factors), std, trials))
    return Table("cir_degradation", rows)


FIELD_GAINS = (2, 4, 8, 16, 24, 48, 63)


def exp_field_sweep(fields: Sequence[str] = ("SYNC", "STS", "PHD", "payload"),
                    gains: Sequence[float] | dict[str, Sequence[float]] = FIELD_GAINS, *,
                    sessions: int = SESSIONS_PER_30S, seed: int = 1, workers: int = 1,
                    trace_dir: Path | None = None) -> Table:
    """Success rate per jammed field and power gain, with the exact delay."""
    points = []
    for fi, f in enumerate(fields):
        for gi, g in enumerate(gains[f] if isinstance(gains, dict) else gains):
            points.append(AttackPoint(float(g), f, sessions=sessions,
                                      seed=point_seed(seed, fi, gi)))
    res = _points(points, workers, trace_dir, lambda p: f"field_{p.field}_g{p.gain:g}")
    return Table("field_sweep", [(p.field, p.gain, p.sessions, r["polls"], r["responses"],
                                  r["success"]) for p, r in zip(points, res)])


def exp_delay_sweep(delays: Sequence[float] = tuple(range(700, 901, 10)),
                    gains: Sequence[float] = (8, 15), *, sessions: int = SESSIONS_PER_30S,
                    seed: int = 1, t_delta_sigma_us: float = 2.74, workers: int = 1,
                    trace_dir: Path | None = None) -> Table:
    """Success rate when the attacker's poll-to-response estimate is off."""
    points = [AttackPoint(float(g), "SYNC", float(d), sessions, point_seed(seed, gi, di),
                          t_delta_sigma_us)
              for gi, g in enumerate(gains) for di, d in enumerate(delays)]
    res = _points(points, workers, trace_dir, lambda p: f"delay_g{p.gain:g}_{p.delay_us:g}")
    return Table("delay_sweep", [(p.gain, p.delay_us, p.sessions, r["polls"], r["responses"],
                                  r["success"]) for p, r in zip(points, res)])


def exp_sniff_time(trials: int = 1000, ranging_rate: float = 6.0, *, seed: int = 1) -> Table:
    """Packets the staged sniffer spends on uniformly random victim configs."""
    if ranging_rate <= 0:
        raise ExperimentError("ranging rate must be positive")
    rng = np.random.default_rng(seed)
    rows = []
    for t in range(trials):
        victim = DEFAULT_DOMAINS.random_config(rng)
        state = sniff_with_oracle(victim)
        if state.candidate().receiver_view() != victim.receiver_view():
            raise ExperimentError(f"sniffer converged on the wrong config in trial {t}")
        n = state.packets_consumed
        rows.append((t, n, *state.stage_packets, n / ranging_rate))
    return Table("sniff_time", rows)


def exp_countermeasure(jitter_bounds: Sequence[float] = (250.0,), gains: Sequence[float] = (8, 15, 63),
                       *, sessions: int = 1000, seed: int = 1, delay_us: float = 800.0,
                       workers: int = 1, trace_dir: Path | None = None) -> Table:
    """Attack success when responders add a random reply delay."""
    points = [AttackPoint(float(g), "SYNC", delay_us, sessions, point_seed(seed, bi, gi),
                          jitter_bound_us=float(b))
              for bi, b in enumerate(jitter_bounds) for gi, g in enumerate(gains)]
    res = _points(points, workers, trace_dir,
                  lambda p: f"jitter_{p.jitter_bound_us:g}_g{p.gain:g}")
    return Table("countermeasure", [(p.jitter_bound_us, p.gain, p.sessions, r["polls"],
                                     r["responses"], r["success"]) for p, r in zip(points, res)])


def exp_distance(ranging_distances: Sequence[float] = (0.5, 1, 2, 4, 8),
                 attack_distances: Sequence[float] = (1.0,), *, gain: float = 1.5,
                 sessions: int = 60, seed: int = 1, workers: int = 1,
                 trace_dir: Path | None = None) -> Table:
    """Success against pairs farther apart, attacker at a fixed distance from the initiator."""
    points = [AttackPoint(gain, "SYNC", sessions=sessions, seed=point_seed(seed, ai, ri),
                          responder_x=float(r), attacker_xy=(0.0, float(a)))
              for ai, a in enumerate(attack_distances) for ri, r in enumerate(ranging_distances)]
    res = _points(points, workers, trace_dir,
                  lambda p: f"distance_a{p.attacker_xy[1]:g}_r{p.responder_x:g}")
    return Table("distance", [(p.attacker_xy[1], p.responder_x, p.gain, p.sessions, r["success"])
                              for p, r in zip(points, res)])


def selective_scenario(n_pairs: int = 2, target: int = 0, *, gain: float = 8.0,
                       sessions: int = SESSIONS_PER_30S, seed: int = 1) -> Scenario:
    base = default_config()
    pairs = []
    for k in range(n_pairs):
        cfg = replace(base, preamble_code=base.preamble_code + k)
        pairs.append(PairSpec(initiator=NodeSpec(0.0, 2.0 * k), responder=NodeSpec(1.0, 2.0 * k),
                              config=cfg, key=0x1000 + k,
                              start_offset_us=1000.0 + 5000.0 * k))
    spec = AttackerSpec(x=0.0, y=1.0, gain=gain, target_pair=target,
                        known_config=pairs[target].config, delay_override_us=800.0,
                        t_delta_sigma_us=0.0)
    span = max(p.start_offset_us for p in pairs) * 1e-6 + sessions * 0.167
    return Scenario(pairs=tuple(pairs), attacker=spec, seed=seed, max_sessions=sessions,
                    duration_s=span)


def exp_selective(pairs: int = 2, target: int = 0, *, gain: float = 8.0,
                  sessions: int = SESSIONS_PER_30S, seed: int = 1,
                  trace_dir: Path | None = None) -> Table:
    """Two or more pairs on distinct codes; only the target pair is attacked."""
    if not 0 <= target < pairs:
        raise ExperimentError("target pair out of range")
    trace = run(selective_scenario(pairs, target, gain=gain, sessions=sessions, seed=seed))
    if trace_dir is not None:
        trace.write(Path(trace_dir) / "selective.jsonl")
    rows = []
    for pid in range(pairs):
        m = trace.metrics["pairs"][str(pid)]
        rows.append((pid, int(pid == target), m["sessions"], m["completed"],
                     m["completed"] / m["sessions"], m["success_rate"]))
    return Table("selective", rows)


EXPERIMENTS: dict[str, Callable[..., Table]] = {
    "cir_degradation": exp_cir_degradation,
    "field_sweep": exp_field_sweep,
    "delay_sweep": exp_delay_sweep,
    "sniff_time": exp_sniff_time,
    "countermeasure": exp_countermeasure,
    "distance": exp_distance,
    "selective": exp_selective,
}
