"""Staged configuration sniffing, interval measurement and reactive jamming."""

from __future__ import annotations

import math
import statistics
from dataclasses import dataclass, replace
from typing import Mapping, Sequence

import numpy as np

from .codes import active_table
from .phy import (
    DEFAULT_DOMAINS, Domains, PacketConfig, PowerProfile, SPREAD,
    chips_to_us, chunk_chips, field_spans, packet_chips,
)
from .ranging import Role
from .receiver import PIPELINE_ORDER, Outcome


class SniffFailed(RuntimeError):
    """Every candidate of a stage was rejected."""


class UnstableTiming(RuntimeError):
    pass


class ConfigTooTight(ValueError):
    pass


# ------------------------------------------------------------------ sniffing

def search_space_size(domains: Domains = DEFAULT_DOMAINS) -> int:
    return domains.product_size()


def staged_search_size(domains: Domains = DEFAULT_DOMAINS) -> int:
    return sum(len(stage) for stage in domains.stages())


DONE = 5


@dataclass(frozen=True)
class SnifferState:
    domains: Domains = DEFAULT_DOMAINS
    stage: int = 1  # 1..4, then DONE
    cursor: int = 0
    fixed: tuple[tuple, ...] = ()  # frozen picks of completed stages
    packets_consumed: int = 0
    sessions_observed: int = 0
    stage_packets: tuple[int, ...] = (0, 0, 0, 0)

    @property
    def done(self) -> bool:
        return self.stage == DONE

    def _picks(self) -> list[tuple]:
        stages = self.domains.stages()
        picks = list(self.fixed)
        if not self.done:
            picks.append(stages[self.stage - 1][self.cursor])
        while len(picks) < 4:
            picks.append(stages[len(picks)][0])
        return picks

    def candidate(self) -> PacketConfig:
        """The full config tested on the next packet."""
        (ch, pac), (code, reps), (sfd,), (mode, sts_len, prof) = self._picks()
        return self.domains.config(ch, pac, code, reps, sfd, mode, sts_len, prof)

    def to_record(self) -> dict:
        return {"stage": self.stage, "cursor": self.cursor,
                "packets": self.packets_consumed}


def sniff_step(state: SnifferState, outcome: Outcome | str) -> SnifferState:
    """Consume one packet's receiver verdict for the current candidate."""
    if state.done:
        raise ValueError("sniffer already finished")
    outcome = Outcome(outcome)
    counts = list(state.stage_packets)
    counts[state.stage - 1] += 1
    nxt = replace(state, packets_consumed=state.packets_consumed + 1,
                  sessions_observed=state.sessions_observed + 1,
                  stage_packets=tuple(counts))
    # stage k fails on its own error code or anything earlier in the pipeline
    failed = PIPELINE_ORDER.index(outcome) < state.stage
    if failed:
        stage_size = len(state.domains.stages()[state.stage - 1])
        if state.cursor + 1 >= stage_size:
            raise SniffFailed(f"stage {state.stage} exhausted after {stage_size} candidates")
        return replace(nxt, cursor=state.cursor + 1)
    pick = state.domains.stages()[state.stage - 1][state.cursor]
    return replace(nxt, stage=state.stage + 1 if state.stage < 4 else DONE, cursor=0,
                   fixed=state.fixed + (pick,))


def sniff_with_oracle(victim: PacketConfig, domains: Domains = DEFAULT_DOMAINS,
                      max_packets: int | None = None) -> SnifferState:
    """Run the staged search against config comparison alone."""
    from .receiver import LinkBudget, predict_outcome

    link = LinkBudget(1.0, 0.0)
    state = SnifferState(domains)
    limit = max_packets or staged_search_size(domains)
    while not state.done:
        if state.packets_consumed >= limit:
            raise SniffFailed("packet budget exhausted")
        out = predict_outcome(victim, state.candidate(), link, arrival_ps=0, key_match=None)
        state = sniff_step(state, out.kind)
    return state


# ------------------------------------------------------------------- timing

DEFAULT_T_DELTA_US = 20.0
T_DELTA_SIGMA_US = 2.74


@dataclass(frozen=True)
class TimingEstimate:
    t1_hat: float  # µs
    t2_hat: float | None
    t3_hat: float
    anchor: int  # ps, latest poll
    t_delta: float = DEFAULT_T_DELTA_US
    t_chunk: float = 0.0
    t_packet: float = 0.0

    @property
    def attack_delay(self) -> float:
        return compute_attack_delay(self)

    def to_record(self) -> dict:
        return {k: (round(v, 6) if isinstance(v, float) else v)
                for k, v in self.__dict__.items()}


def config_timing(cfg: PacketConfig, n_payload_bits: int) -> tuple[float, float]:
    """(chunk, packet) durations in µs for a sniffed config."""
    return chips_to_us(chunk_chips(cfg)), chips_to_us(packet_chips(cfg, n_payload_bits))


def compute_attack_delay(est: TimingEstimate, measured_us: float | None = None) -> float:
    """Wait between finishing the poll and firing, in µs."""
    t = est.t1_hat if measured_us is None else measured_us
    delay = t - est.t_chunk - est.t_packet - est.t_delta
    if delay <= 0:
        raise ConfigTooTight(f"no time left to react ({delay:.1f} µs)")
    return delay


def _group_sessions(obs: Sequence[tuple[str, int]]) -> list[dict[str, int]]:
    sessions: list[dict[str, int]] = []
    for role, ts in sorted(obs, key=lambda o: o[1]):
        role = Role(role).value
        if role == Role.POLL.value or not sessions:
            sessions.append({})
        sessions[-1].setdefault(role, ts)
    return sessions


def measure_intervals(observations: Sequence[tuple[str, int]], *, t_delta_us: float = DEFAULT_T_DELTA_US,
                      t_chunk_us: float = 0.0, t_packet_us: float = 0.0) -> TimingEstimate:
    """Medians of the poll-relative intervals seen over several sessions."""
    sessions = [s for s in _group_sessions(observations) if "poll" in s and "response" in s]
    if len(sessions) < 2:
        raise ValueError("need at least two full sessions")
    us = lambda ps: ps * 1e-6  # noqa: E731
    t1s = [us(s["response"] - s["poll"]) for s in sessions]
    t2s = [us(s["final"] - s["poll"]) for s in sessions if "final" in s]
    polls = [s["poll"] for s in sessions]
    t3s = [us(b - a) for a, b in zip(polls, polls[1:])]
    for name, vals in (("t1", t1s), ("t2", t2s), ("t3", t3s)):
        if vals and max(vals) - min(vals) > 2 * t_delta_us:
            raise UnstableTiming(f"{name} spread {max(vals) - min(vals):.1f} µs")
    return TimingEstimate(
        t1_hat=statistics.median(t1s),
        t2_hat=statistics.median(t2s) if t2s else None,
        t3_hat=statistics.median(t3s),
        anchor=polls[-1], t_delta=t_delta_us, t_chunk=t_chunk_us, t_packet=t_packet_us,
    )


# ------------------------------------------------------------------- jamming

FIELDS = ("SYNC", "SFD", "STS", "PHD", "payload")


@dataclass(frozen=True)
class JamPlan:
    target_packet: Role
    jam_code_index: int
    sync_gain: float  # power ratio
    jam_config: PacketConfig
    target_field: str = "SYNC"
    field_offset_us: float = 0.0

    def __post_init__(self) -> None:
        if not self.sync_gain > 1:
            raise ValueError("sync gain must be a power ratio above 1")
        if self.target_field not in FIELDS:
            raise ValueError(f"unknown field {self.target_field}")

    @property
    def profile(self) -> PowerProfile:
        return PowerProfile.sync_power(self.sync_gain)

    def to_record(self) -> dict:
        return {"target_packet": self.target_packet.value, "jam_code": self.jam_code_index,
                "gain": self.sync_gain, "target_field": self.target_field,
                "jam_config": self.jam_config.to_dict()}


def pick_jam_code(victim_code: int) -> int:
    """A table code whose length is coprime with the victim's.

    Over co-prime periods the summed cross-correlation of two codes reduces to
    the product of their symbol sums, which is close to zero.
    """
    table = active_table()
    vlen = len(table[victim_code])
    ranked = sorted(
        (i for i in table if i != victim_code),
        key=lambda i: (math.gcd(len(table[i]), vlen) != 1,
                       abs(sum(table[i].symbols)) * abs(sum(table[victim_code].symbols)), i),
    )
    return ranked[0]


def plan_jam(victim: PacketConfig, gain: float, *, target_packet: Role | str = Role.RESPONSE,
             target_field: str = "SYNC", n_payload_bits: int = 48,
             jam_code: int | None = None) -> JamPlan:
    """Jam packet whose amplified preamble covers ``target_field`` of the victim."""
    target_packet = Role(target_packet)
    code = pick_jam_code(victim.preamble_code) if jam_code is None else jam_code
    if code == victim.preamble_code:
        raise ValueError("jam code must differ from the victim's code")
    spans = field_spans(victim, n_payload_bits)
    if target_field not in spans:
        raise ValueError(f"victim packet has no {target_field} field")
    a, b = spans[target_field]
    clen = len(active_table()[code])
    period = clen * SPREAD
    pac = victim.pac
    reps = max(pac, pac * round((b - a) / period / pac))
    jam_cfg = PacketConfig(victim.channel, code, reps * clen, pac, victim.sfd_type, "sp3",
                           victim.sts_length if victim.has_sts else 64, victim.phd_profile)
    return JamPlan(target_packet, code, float(gain), jam_cfg, target_field,
                   chips_to_us(a))


@dataclass(frozen=True)
class AttackerSpec:
    """Scenario-level description of the attacker node."""

    x: float = 0.0
    y: float = 1.0
    gain: float = 8.0
    target_pair: int = 0
    target_packet: str = "response"
    target_field: str = "SYNC"
    known_config: PacketConfig | None = None
    # fixed poll-to-target interval (µs); skips interval measurement
    delay_override_us: float | None = None
    t_delta_us: float = DEFAULT_T_DELTA_US
    t_delta_sigma_us: float = T_DELTA_SIGMA_US
    measure_sessions: int = 3
    jam_key: int = 0xA77AC4
    domains: Domains = DEFAULT_DOMAINS

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__ if k not in ("known_config", "domains")}
        d["known_config"] = self.known_config.to_dict() if self.known_config else None
        d["domains"] = self.domains.to_dict()
        return d

    @classmethod
    def from_dict(cls, data: Mapping) -> "AttackerSpec":
        data = dict(data)
        if data.get("known_config"):
            data["known_config"] = PacketConfig.from_dict(data["known_config"])
        if "domains" in data:
            data["domains"] = Domains.from_dict(data["domains"])
        return cls(**data)


@dataclass
class JamOrder:
    time: int  # global ps
    plan: JamPlan


class AttackerAgent:
    """Event-driven attacker: sniff, then measure, then jam on every poll."""

    GAP_PS = 10_000_000_000  # 10 ms of silence starts a new exchange
    MISS_LIMIT = 3

    def __init__(self, spec: AttackerSpec, n_payload_bits: int, rng: np.random.Generator):
        self.spec = spec
        self.n_payload_bits = n_payload_bits
        self.rng = rng
        self.log: list[dict] = []
        self.sniffer: SnifferState | None = None
        self.config: PacketConfig | None = spec.known_config
        self.estimate: TimingEstimate | None = None
        self.plan: JamPlan | None = None
        self.observations: list[tuple[str, int]] = []
        self.last_ok: int | None = None
        self.burst_index = 0
        self.misses = 0
        self.armed_at: int | None = None
        if self.config is None:
            self.phase = "sniff"
            self.sniffer = SnifferState(spec.domains)
        else:
            self._after_config(0)

    # -- helpers
    def _note(self, t: int, **rec) -> None:
        self.log.append({"t": t, "ev": "attacker", **rec})

    def _after_config(self, t: int) -> None:
        if self.spec.delay_override_us is not None:
            chunk, pkt = config_timing(self.config, self.n_payload_bits)
            t1 = self.spec.delay_override_us
            self.estimate = TimingEstimate(t1, t1, 0.0, 0, self.spec.t_delta_us, chunk, pkt)
            self._arm(t)
        else:
            self.phase = "measure"
            self._note(t, phase="measure", config=self.config.to_dict())

    def _arm(self, t: int) -> None:
        self.plan = plan_jam(self.config, self.spec.gain, target_packet=self.spec.target_packet,
                             target_field=self.spec.target_field,
                             n_payload_bits=self.n_payload_bits)
        compute_attack_delay(self.estimate)  # raises ConfigTooTight early
        self.phase = "attack"
        self.armed_at = t
        self._note(t, phase="attack", plan=self.plan.to_record(),
                   timing=self.estimate.to_record())

    def listen_config(self) -> PacketConfig:
        return self.sniffer.candidate() if self.phase == "sniff" else self.config

    # -- events
    def observe(self, t: int, true_role: str, kind: Outcome, rx_ts: int | None) -> JamOrder | None:
        """Handle one victim packet heard at time ``t``."""
        if self.phase == "sniff":
            # the sniffer spends exactly one packet per exchange, the first one
            if true_role != Role.POLL.value:
                return None
            state = sniff_step(self.sniffer, kind)
            self.log.append({"t": t, "ev": "sniff", "outcome": kind.value,
                             **self.sniffer.to_record()})
            self.sniffer = state
            if state.done:
                self.config = state.candidate()
                self._note(t, phase="sniffed", packets=state.packets_consumed)
                # the rest of this exchange must not be mistaken for a new poll
                self.last_ok = t
                self._after_config(t)
            return None

        if kind is not Outcome.OK:
            if self.phase == "attack" and (self.last_ok is None or t - self.last_ok > self.GAP_PS):
                self.misses += 1
                if self.misses == self.MISS_LIMIT:
                    self.estimate = replace(self.estimate, anchor=0)
                    self._note(t, anchor="forgotten")
            return None

        if self.last_ok is None or rx_ts - self.last_ok > self.GAP_PS:
            self.burst_index = 0
        else:
            self.burst_index += 1
        self.last_ok = rx_ts
        role = (Role.POLL, Role.RESPONSE, Role.FINAL)[min(self.burst_index, 2)]

        if self.phase == "measure":
            self.observations.append((role.value, rx_ts))
            polls = sum(1 for r, _ in self.observations if r == "poll")
            if role is Role.POLL and polls > self.spec.measure_sessions:
                chunk, pkt = config_timing(self.config, self.n_payload_bits)
                try:
                    self.estimate = measure_intervals(
                        self.observations[:-1], t_delta_us=self.spec.t_delta_us,
                        t_chunk_us=chunk, t_packet_us=pkt)
                except UnstableTiming as exc:
                    self._note(t, unstable=str(exc))
                    self.observations = self.observations[-1:]
                    return None
                self.estimate = replace(self.estimate, anchor=rx_ts)
                self._arm(t)
                return self._on_poll(rx_ts)
            return None

        if role is Role.POLL:
            self.misses = 0
            self.estimate = replace(self.estimate, anchor=rx_ts)
            return self._on_poll(rx_ts)
        return None

    def _on_poll(self, rx_ts: int) -> JamOrder:
        est, plan = self.estimate, self.plan
        measured = {Role.RESPONSE: est.t1_hat, Role.FINAL: est.t2_hat,
                    Role.POLL: est.t3_hat}[plan.target_packet]
        wait = compute_attack_delay(est, measured)
        sigma = self.spec.t_delta_sigma_us
        actual_delta = est.t_delta + (self.rng.normal(0.0, sigma) if sigma > 0 else 0.0)
        total_us = est.t_chunk + est.t_packet + wait + actual_delta + plan.field_offset_us
        return JamOrder(rx_ts + round(total_us * 1e6), plan)
