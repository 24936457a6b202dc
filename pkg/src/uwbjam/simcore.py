"""Discrete-event engine: picosecond clock, emissions on air, receptions, traces."""

from __future__ import annotations

import heapq
import itertools
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Iterable, Mapping

import numpy as np

from .attacker import AttackerAgent, AttackerSpec, JamOrder
from .channel import (
    ChannelParams, NodePosition, TimeWindow, cross_channel_isolation, path_amplitude,
    propagate, superpose, tof_ps,
)
from .phy import (
    CHIP_PS, BasebandSignal, PacketConfig, PowerProfile, assemble_packet, chips_to_us,
    default_config, packet_chips,
)
from .ranging import ClockModel, Mode, RangingRecord, Role, SessionSchedule
from .receiver import (
    DEFAULT_THRESHOLDS, DetectionThresholds, LinkBudget, RxOutcome, predict_outcome,
    receive_packet,
)

SCHEMA_VERSION = 1
PS_PER_S = 10**12
GUARD_CHIPS = 256
ATTACKER_ID = 1000


class ScenarioError(ValueError):
    pass


# ------------------------------------------------------------------ scenario

@dataclass(frozen=True)
class NodeSpec:
    x: float = 0.0
    y: float = 0.0
    drift_ppm: float = 0.0
    offset_ps: int = 0

    @property
    def position(self) -> NodePosition:
        return NodePosition(self.x, self.y)

    @property
    def clock(self) -> ClockModel:
        return ClockModel(self.drift_ppm, self.offset_ps)


@dataclass(frozen=True)
class PairSpec:
    initiator: NodeSpec = NodeSpec(0.0, 0.0)
    responder: NodeSpec = NodeSpec(1.0, 0.0)
    config: PacketConfig = field(default_factory=default_config)
    key: int = 0x2B7E151628AED2A6ABF7158809CF4F3C
    mode: Mode = Mode.DS
    schedule: SessionSchedule = SessionSchedule()
    start_offset_us: float = 1000.0
    payload_bytes: int = 6


@dataclass(frozen=True)
class Scenario:
    pairs: tuple[PairSpec, ...] = (PairSpec(),)
    channel: ChannelParams = ChannelParams()
    attacker: AttackerSpec | None = None
    duration_s: float = 30.06
    seed: int = 1
    thresholds: DetectionThresholds = DEFAULT_THRESHOLDS
    full_fidelity: bool = False
    max_sessions: int | None = None

    def validate(self) -> "Scenario":
        if not self.duration_s > 0:
            raise ScenarioError("duration must be positive")
        if not self.pairs:
            raise ScenarioError("at least one ranging pair is required")
        if not 0 <= self.seed < 2**64:
            raise ScenarioError("seed must fit in 64 bits")
        for p in self.pairs:
            if p.start_offset_us * 1e6 < 2 * GUARD_CHIPS * CHIP_PS:
                raise ScenarioError("first session starts before the receive guard")
            if not 0 <= p.payload_bytes <= 127:
                raise ScenarioError("payload must be 0..127 bytes")
        if self.attacker is not None and not 0 <= self.attacker.target_pair < len(self.pairs):
            raise ScenarioError("attacker targets a pair that does not exist")
        return self


def packet_duration_us(pair: PairSpec) -> float:
    return chips_to_us(packet_chips(pair.config, pair.payload_bytes * 8))


# ----------------------------------------------------------------- emissions

@dataclass(eq=False)
class Emission:
    id: int
    node: int
    pair: int
    role: str  # poll | response | final | jam
    session: int
    config: PacketConfig
    key: int | None
    counter: int
    payload: tuple[int, ...]
    start: int  # global ps
    position: NodePosition
    amplitude: float = 1.0
    profile: PowerProfile = PowerProfile.nominal()
    omit_data: bool = False
    _wave: BasebandSignal | None = None

    @property
    def n_chips(self) -> int:
        return packet_chips(self.config, len(self.payload), omit_phd_payload=self.omit_data)

    @property
    def end(self) -> int:
        return self.start + round(self.n_chips * CHIP_PS)

    def waveform(self) -> BasebandSignal:
        if self._wave is None:
            self._wave = assemble_packet(
                self.config, self.key, self.payload, self.profile, self.omit_data,
                sts_counter=self.counter, amplitude=self.amplitude, start_time=self.start,
                label=f"{self.role}:{self.pair}:{self.session}",
            )
        return self._wave


def payload_for(pair_id: int, session: int, role: str, n_bytes: int) -> tuple[int, ...]:
    if not n_bytes:
        return ()
    rng = np.random.default_rng([pair_id, session, ("poll", "response", "final").index(role)])
    return tuple(int(b) for b in rng.integers(0, 2, n_bytes * 8))


# ---------------------------------------------------------------------- trace

@dataclass
class Trace:
    events: list[dict]
    metrics: dict
    records: list[RangingRecord]

    def jsonl(self) -> str:
        return "".join(json.dumps(e, sort_keys=True, separators=(",", ":")) + "\n"
                       for e in self.events)

    def summary_json(self) -> str:
        return json.dumps(self.metrics, sort_keys=True, indent=2) + "\n"

    def write(self, path: str | Path) -> tuple[Path, Path]:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.jsonl())
        summary = path.with_suffix(".summary.json")
        summary.write_text(self.summary_json())
        return path, summary


def read_events(path: str | Path) -> list[dict]:
    return [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]


def compute_metrics(events: Iterable[dict]) -> dict:
    """Summary metrics from an event log alone."""
    events = list(events)
    armed = next((e["t"] for e in events if e["ev"] == "attacker" and e.get("phase") == "attack"),
                 None)
    pairs: dict[int, dict] = {}
    polls: dict[tuple[int, int], int] = {}
    for e in events:
        if e["ev"] == "tx" and e["role"] == "poll":
            p = pairs.setdefault(e["pair"], {"N_p": 0, "N_r": 0, "completed": 0, "sessions": 0,
                                             "distances": []})
            p["sessions"] += 1
            if armed is None or e["t"] >= armed:
                p["N_p"] += 1
                polls[(e["pair"], e["session"])] = e["t"]
        elif e["ev"] == "rx" and e["role"] == "response" and e.get("receiver") == "initiator":
            if (e["pair"], e["session"]) in polls and e["outcome"] == "Ok":
                pairs[e["pair"]]["N_r"] += 1
        elif e["ev"] == "session":
            rec = e["record"]
            p = pairs[e["pair"]]
            if rec["status"] == "Completed":
                p["completed"] += 1
                p["distances"].append(rec["distance"])
    out = {"armed_at": armed, "pairs": {}}
    for pid, p in sorted(pairs.items()):
        d = p.pop("distances")
        p["success_rate"] = (1 - p["N_r"] / p["N_p"]) if p["N_p"] else None
        p["mean_distance"] = (sum(d) / len(d)) if d else None
        out["pairs"][str(pid)] = p
    return out


# --------------------------------------------------------------------- engine

_KIND_RANK = {"tx": 0, "rx": 1, "session": 2, "end": 3}


class Engine:
    def __init__(self, scenario: Scenario):
        self.sc = scenario.validate()
        self.params = replace(scenario.channel, rng_seed=scenario.seed)
        self.queue: list = []
        self.seq = itertools.count()
        self.ids = itertools.count()
        self.events: list[dict] = []
        self.on_air: list[Emission] = []
        self.records: dict[tuple[int, int], RangingRecord] = {}
        self.finished: list[RangingRecord] = []
        self.now = 0
        self.end = round(scenario.duration_s * PS_PER_S)
        self.pair_rng = [np.random.default_rng([scenario.seed, i, 7]) for i in range(len(scenario.pairs))]
        self.schedules = [replace(p.schedule, packet_us=packet_duration_us(p)) for p in scenario.pairs]
        self.agent: AttackerAgent | None = None
        if scenario.attacker is not None:
            tgt = scenario.pairs[scenario.attacker.target_pair]
            self.agent = AttackerAgent(scenario.attacker, tgt.payload_bytes * 8,
                                       np.random.default_rng([scenario.seed, 99]))
            self.att_pos = NodePosition(scenario.attacker.x, scenario.attacker.y)
            self._drain_agent_log()

    # node ids: pair k initiator 2k, responder 2k+1
    def _node_pos(self, node: int) -> NodePosition:
        if node == ATTACKER_ID:
            return self.att_pos
        p = self.sc.pairs[node // 2]
        return (p.initiator if node % 2 == 0 else p.responder).position

    def _clock(self, node: int) -> ClockModel:
        p = self.sc.pairs[node // 2]
        return (p.initiator if node % 2 == 0 else p.responder).clock

    def push(self, t: int, node: int, kind: str, data: Any) -> None:
        heapq.heappush(self.queue, (t, node, _KIND_RANK[kind], next(self.seq), kind, data))

    def log(self, rec: dict) -> None:
        self.events.append(rec)

    def _drain_agent_log(self) -> None:
        if self.agent and self.agent.log:
            self.events.extend(self.agent.log)
            self.agent.log.clear()

    # ------------------------------------------------------------ scheduling
    def _schedule_sessions(self) -> None:
        for pid, pair in enumerate(self.sc.pairs):
            clk = pair.initiator.clock
            t3 = round(self.schedules[pid].t3_ms * 1e9)
            first_local = clk.local(0) + round(pair.start_offset_us * 1e6)
            for k in itertools.count():
                if self.sc.max_sessions is not None and k >= self.sc.max_sessions:
                    break
                t = clk.to_global(first_local + k * t3)
                if t >= self.end:
                    break
                self.push(t, 2 * pid, "session", (pid, k))

    def _emit(self, em: Emission) -> None:
        self.push(em.start, em.node, "tx", em)

    def _packet(self, pid: int, session: int, role: str, start: int) -> Emission:
        pair = self.sc.pairs[pid]
        node = 2 * pid + (1 if role == "response" else 0)
        return Emission(
            next(self.ids), node, pid, role, session, pair.config, pair.key,
            session * 4 + ("poll", "response", "final").index(role),
            payload_for(pid, session, role, pair.payload_bytes), start, self._node_pos(node),
        )

    # ----------------------------------------------------------- receptions
    def _receivers(self, em: Emission) -> list[int]:
        if em.role == "jam":
            return []
        pid = em.pair
        out = [2 * pid + 1] if em.role in ("poll", "final") else [2 * pid]
        if self.agent is not None and self.sc.attacker.target_pair == pid:
            out.append(ATTACKER_ID)
        return out

    def _window(self, em: Emission, rx: int) -> tuple[int, TimeWindow]:
        arrival = em.start + tof_ps(em.position.distance_to(self._node_pos(rx)), self.params)
        start = arrival - round(GUARD_CHIPS * CHIP_PS)
        return arrival, TimeWindow(start, em.n_chips + 2 * GUARD_CHIPS)

    def _interferers(self, em: Emission, rx: int, win: TimeWindow, channel: int) -> list[Emission]:
        pos = self._node_pos(rx)
        out = []
        for other in self.on_air:
            if other is em or other.config.channel != channel:
                continue
            d = tof_ps(other.position.distance_to(pos), self.params)
            if win.overlaps(other.start + d, other.end + d):
                out.append(other)
        return out

    def _receive(self, em: Emission, rx: int) -> tuple[RxOutcome, str]:
        if rx == ATTACKER_ID:
            rx_cfg, key = self.agent.listen_config(), None
        else:
            pair = self.sc.pairs[rx // 2]
            rx_cfg, key = pair.config, pair.key
        arrival, win = self._window(em, rx)
        others = self._interferers(em, rx, win, rx_cfg.channel)
        pos = self._node_pos(rx)
        if not others and not self.sc.full_fidelity:
            amp = em.amplitude * path_amplitude(em.position.distance_to(pos), self.params)
            amp *= cross_channel_isolation(em.config.channel, rx_cfg.channel)
            link = LinkBudget(amp, self.params.noise_power_density)
            key_match = None if key is None else (key == em.key)
            out = predict_outcome(em.config, rx_cfg, link, arrival_ps=arrival, key_match=key_match,
                                  thresholds=self.sc.thresholds)
            return out, "oracle"
        signals = [propagate(e.waveform(), e.position, pos, self.params) for e in [em] + others]
        wave = superpose(signals, win, self.params, rx_channel=rx_cfg.channel, noise_salt=rx)
        out = receive_packet(wave, rx_cfg, key, self.sc.thresholds, sts_counter=em.counter)
        return out, "waveform"

    # ---------------------------------------------------------------- events
    def on_session(self, pid: int, k: int) -> None:
        pair = self.sc.pairs[pid]
        rec = RangingRecord(k, pair.mode)
        self.records[(pid, k)] = rec
        rec.t_sp = self._clock(2 * pid).local(self.now)
        self._emit(self._packet(pid, k, "poll", self.now))

    def on_tx(self, em: Emission) -> None:
        self.on_air.append(em)
        horizon = self.now - 10 * 10**9
        self.on_air = [e for e in self.on_air if e.end >= horizon]
        rec = {"t": self.now, "ev": "tx" if em.role != "jam" else "jam", "node": em.node,
               "pair": em.pair, "role": em.role, "session": em.session}
        self.log(rec)
        for rx in self._receivers(em):
            arrival, win = self._window(em, rx)
            self.push(win.end, rx, "rx", (em, rx))

    def on_rx(self, em: Emission, rx: int) -> None:
        if rx == ATTACKER_ID and self.agent.phase == "attack" and em.role != "poll":
            # an armed attacker only reacts to polls; evaluating the rest changes nothing
            return
        out, path = self._receive(em, rx)
        who = "attacker" if rx == ATTACKER_ID else ("initiator" if rx % 2 == 0 else "responder")
        self.log({"t": self.now, "ev": "rx", "node": rx, "receiver": who, "pair": em.pair,
                  "role": em.role, "session": em.session, "path": path, **out.to_record()})
        if rx == ATTACKER_ID:
            order = self.agent.observe(self.now, em.role, out.kind, out.rx_timestamp)
            self._drain_agent_log()
            if order is not None:
                self._schedule_jam(order, em)
            return
        pair = self.sc.pairs[em.pair]
        sched = self.schedules[em.pair]
        rec = self.records.get((em.pair, em.session))
        if rec is None or rec.status != "Pending":
            return
        clock = self._clock(rx)
        if not out.ok:
            rec.drop(Role(em.role), self.now)
            self._finish(em.pair, rec)
            return
        local_rx = clock.local(out.rx_timestamp)
        rng = self.pair_rng[em.pair]
        if em.role == "poll":
            rec.t_rp = local_rx
            rec.t_sr = local_rx + round(sched.t1_us * 1e6) + sched.draw_jitter_ps(rng)
            self._emit(self._packet(em.pair, em.session, "response", clock.to_global(rec.t_sr)))
        elif em.role == "response":
            rec.t_rr = local_rx
            if pair.mode is Mode.SS:
                rec.complete(self.now)
                self._finish(em.pair, rec)
            else:
                rec.t_sf = rec.t_sp + round(sched.t2_us * 1e6) + sched.draw_jitter_ps(rng)
                self._emit(self._packet(em.pair, em.session, "final", clock.to_global(rec.t_sf)))
        else:
            rec.t_rf = local_rx
            rec.complete(self.now)
            self._finish(em.pair, rec)

    def _finish(self, pid: int, rec: RangingRecord) -> None:
        self.finished.append(rec)
        self.log({"t": self.now, "ev": "session", "pair": pid, "record": rec.to_record()})

    def _schedule_jam(self, order: JamOrder, trigger: Emission) -> None:
        plan = order.plan
        spec = self.sc.attacker
        em = Emission(next(self.ids), ATTACKER_ID, trigger.pair, "jam", trigger.session,
                      plan.jam_config, spec.jam_key, trigger.session, (), order.time,
                      self.att_pos, 1.0, plan.profile, omit_data=True)
        if order.time > self.now:
            self._emit(em)

    def run(self) -> Trace:
        self._schedule_sessions()
        while self.queue:
            t, node, _, _, kind, data = heapq.heappop(self.queue)
            if t > self.end and kind == "session":
                continue
            self.now = t
            if kind == "session":
                self.on_session(*data)
            elif kind == "tx":
                self.on_tx(data)
            elif kind == "rx":
                self.on_rx(*data)
        for (pid, k), rec in sorted(self.records.items()):
            if rec.status == "Pending":
                self.log({"t": self.now, "ev": "session", "pair": pid, "record": rec.to_record()})
        return Trace(self.events, compute_metrics(self.events),
                     [self.records[k] for k in sorted(self.records)])


def run(scenario: Scenario) -> Trace:
    return Engine(scenario).run()


def run_single_session(scenario: Scenario, schedule: SessionSchedule, mode: Mode) -> RangingRecord:
    pair = replace(scenario.pairs[0], schedule=schedule, mode=mode)
    sc = replace(scenario, pairs=(pair,) + tuple(scenario.pairs[1:]), max_sessions=1,
                 duration_s=max(scenario.duration_s, (pair.start_offset_us + 10_000) * 1e-6))
    return run(sc).records[0]


# ------------------------------------------------------------- serialization

def scenario_to_dict(sc: Scenario) -> dict:
    return {
        "schemaVersion": SCHEMA_VERSION,
        "duration_s": sc.duration_s,
        "seed": sc.seed,
        "full_fidelity": sc.full_fidelity,
        "max_sessions": sc.max_sessions,
        "thresholds": dict(sc.thresholds.__dict__),
        "channel": sc.channel.to_dict(),
        "pairs": [
            {
                "initiator": dict(p.initiator.__dict__),
                "responder": dict(p.responder.__dict__),
                "config": p.config.to_dict(),
                "key": hex(p.key),
                "mode": p.mode.value,
                "schedule": p.schedule.to_dict(),
                "start_offset_us": p.start_offset_us,
                "payload_bytes": p.payload_bytes,
            }
            for p in sc.pairs
        ],
        "attacker": sc.attacker.to_dict() if sc.attacker else None,
    }


def scenario_from_dict(data: Mapping) -> Scenario:
    version = data.get("schemaVersion")
    if version != SCHEMA_VERSION:
        raise ScenarioError(f"unsupported schemaVersion {version!r} (expected {SCHEMA_VERSION})")
    known = {"schemaVersion", "duration_s", "seed", "full_fidelity", "max_sessions", "thresholds",
             "channel", "pairs", "attacker"}
    extra = set(data) - known
    if extra:
        raise ScenarioError(f"unknown scenario keys: {sorted(extra)}")
    try:
        pairs = []
        for p in data.get("pairs", [{}]):
            kw: dict[str, Any] = {}
            if "initiator" in p:
                kw["initiator"] = NodeSpec(**p["initiator"])
            if "responder" in p:
                kw["responder"] = NodeSpec(**p["responder"])
            if "config" in p:
                kw["config"] = PacketConfig.from_dict(p["config"])
            if "key" in p:
                kw["key"] = int(p["key"], 0) if isinstance(p["key"], str) else int(p["key"])
            if "mode" in p:
                kw["mode"] = Mode(p["mode"])
            if "schedule" in p:
                kw["schedule"] = SessionSchedule(**p["schedule"])
            for k in ("start_offset_us", "payload_bytes"):
                if k in p:
                    kw[k] = p[k]
            pairs.append(PairSpec(**kw))
        sc = Scenario(
            pairs=tuple(pairs),
            channel=ChannelParams.from_dict(data.get("channel", {})),
            attacker=AttackerSpec.from_dict(data["attacker"]) if data.get("attacker") else None,
            duration_s=float(data.get("duration_s", 30.06)),
            seed=int(data.get("seed", 1)),
            thresholds=DetectionThresholds(**data.get("thresholds", {})),
            full_fidelity=bool(data.get("full_fidelity", False)),
            max_sessions=data.get("max_sessions"),
        )
    except (TypeError, ValueError) as exc:
        raise ScenarioError(str(exc)) from exc
    return sc.validate()


def load_scenario(path: str | Path) -> Scenario:
    path = Path(path)
    text = path.read_text()
    if path.suffix in (".yaml", ".yml"):
        try:
            import yaml
        except ImportError as exc:
            raise ScenarioError("YAML scenarios need pyyaml: pip install 'uwbjam[yaml]'") from exc
        data = yaml.safe_load(text)
    else:
        data = json.loads(text)
    return scenario_from_dict(data)
