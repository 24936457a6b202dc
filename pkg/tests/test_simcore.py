import json

import pytest

from uwbjam.attacker import AttackerSpec
from uwbjam.channel import ChannelParams
from uwbjam.phy import default_config
from uwbjam.ranging import ClockModel, Mode, SessionSchedule, ideal_record, run_session
from uwbjam.simcore import (
    NodeSpec, PairSpec, Scenario, ScenarioError, compute_metrics, load_scenario, read_events,
    run, scenario_from_dict, scenario_to_dict,
)

QUICK = dict(duration_s=1.0)


def test_clean_ds_sessions_complete_at_true_distance():
    trace = run(Scenario(pairs=(PairSpec(responder=NodeSpec(4.0, 0.0)),), **QUICK))
    m = trace.metrics["pairs"]["0"]
    assert m["sessions"] == m["completed"] == 6
    assert m["success_rate"] == 0.0
    for rec in trace.records:
        assert rec.distance == pytest.approx(4.0, abs=1e-3)


def test_thirty_seconds_is_180_sessions():
    trace = run(Scenario(duration_s=30.06, pairs=(PairSpec(mode=Mode.SS),)))
    assert trace.metrics["pairs"]["0"]["sessions"] == 180


def test_engine_matches_arithmetic_oracle_under_drift():
    sched = SessionSchedule()
    pair = PairSpec(initiator=NodeSpec(0, 0, drift_ppm=20), responder=NodeSpec(2, 0, drift_ppm=-20),
                    mode=Mode.SS, start_offset_us=1000.0)
    rec = run(Scenario(pairs=(pair,), max_sessions=1, **QUICK)).records[0]
    oracle = ideal_record(2.0, sched, mode=Mode.SS, initiator=ClockModel(20),
                          responder=ClockModel(-20), start_ps=10**9)
    assert rec.distance == pytest.approx(oracle.distance, abs=2e-3)


def test_run_session_entry_point():
    rec = run_session(Scenario(**QUICK), SessionSchedule(t1_us=700, t2_us=1500), "DS")
    assert rec.completed and rec.mode is Mode.DS
    assert rec.t_sr - rec.t_rp == 700 * 10**6


def test_trace_and_metrics_are_reproducible(tmp_path):
    sc = Scenario(attacker=AttackerSpec(known_config=default_config(), delay_override_us=800.0),
                  duration_s=2.0, seed=9)
    a, b = run(sc), run(sc)
    assert a.jsonl() == b.jsonl()
    path, summary = a.write(tmp_path / "t.jsonl")
    assert compute_metrics(read_events(path)) == json.loads(summary.read_text())
    assert a.metrics["pairs"]["0"]["success_rate"] == 1.0


def test_full_fidelity_matches_oracle_path_when_alone():
    fast = run(Scenario(max_sessions=3, **QUICK))
    slow = run(Scenario(max_sessions=3, full_fidelity=True, **QUICK))
    strip = lambda t: [{k: v for k, v in e.items() if k not in ("path", "sync_peak", "sts_peak")} for e in t.events]  # noqa: E731
    assert strip(fast) == strip(slow)
    assert {e.get("path") for e in slow.events if e["ev"] == "rx"} == {"waveform"}


def test_responder_out_of_range_drops_at_poll():
    pair = PairSpec(responder=NodeSpec(400.0, 0.0))
    trace = run(Scenario(pairs=(pair,), max_sessions=2, **QUICK))
    assert {r.status for r in trace.records} == {"Dropped(poll)"}


def test_jitter_moves_response_by_at_least_packet_length():
    pair = PairSpec(schedule=SessionSchedule(jitter_bound_us=250))
    trace = run(Scenario(pairs=(pair,), max_sessions=5, **QUICK))
    for rec in trace.records:
        reply_us = (rec.t_sr - rec.t_rp) * 1e-6
        assert 205.4 <= abs(reply_us - 800) <= 250
        assert rec.completed


def test_scenario_validation():
    with pytest.raises(ScenarioError):
        Scenario(duration_s=0).validate()
    with pytest.raises(ScenarioError):
        Scenario(pairs=()).validate()
    with pytest.raises(ScenarioError):
        Scenario(attacker=AttackerSpec(target_pair=3)).validate()
    with pytest.raises(ScenarioError):
        Scenario(pairs=(PairSpec(start_offset_us=0.1),)).validate()


def test_scenario_dict_round_trip():
    sc = Scenario(pairs=(PairSpec(mode=Mode.SS, schedule=SessionSchedule(t1_us=700)),),
                  attacker=AttackerSpec(gain=15), channel=ChannelParams(taps=((0, 1.0),)), seed=4)
    assert scenario_from_dict(json.loads(json.dumps(scenario_to_dict(sc)))) == sc


@pytest.mark.parametrize("data", [
    {"pairs": [{}]},
    {"schemaVersion": 2},
    {"schemaVersion": 1, "bogus": 1},
    {"schemaVersion": 1, "pairs": [{"config": {"channel": 9}}]},
    {"schemaVersion": 1, "pairs": [{"mode": "XX"}]},
])
def test_bad_scenarios_rejected(data):
    with pytest.raises(ScenarioError):
        scenario_from_dict(data)


def test_load_json_and_yaml(tmp_path):
    pytest.importorskip("yaml")
    j = tmp_path / "a.json"
    j.write_text(json.dumps({"schemaVersion": 1, "seed": 3}))
    y = tmp_path / "b.yaml"
    y.write_text("schemaVersion: 1\nseed: 3\n")
    assert load_scenario(j) == load_scenario(y)
