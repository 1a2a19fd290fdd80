"""End-to-end simulation runs, the error report, expectation matching,
trace serialization, and the echoguide-sim command line."""

from __future__ import annotations

import json

import pytest

from echoguide.cli import main as sim_main
from echoguide.harness import (
    assert_expectations,
    distance_error_experiment,
    error_report,
    experiment_grid,
    load_expectations,
    run_scenario,
)
from echoguide.trace import TraceLog, ev_measurement
from echoguide.world import Channel, SurfaceKind, Weather, load_scenario

from conftest import EXPECTATION_DIR, SCENARIO_DIR, make_script, zero_noise_config


def ground_obstacle_script(**overrides):
    """90 cm baseline with a 40 cm hazard in front of the cane from 2 s on."""
    doc = {
        "channels": {
            "ground": [
                {"t": 0, "distance_cm": 90},
                {"t": 2000, "distance_cm": 40},
            ],
        },
    }
    doc.update(overrides)
    return make_script(duration_ms=6000, **doc)


# -- run_scenario behaviour ----------------------------------------------------------


def test_quiet_scene_raises_no_alerts():
    script = make_script(channels={
        "ground": [{"t": 0, "distance_cm": 200}],
        "left": [{"t": 0, "distance_cm": 300}],
        "right": [{"t": 0, "distance_cm": 300}],
    })
    trace = run_scenario(script, config=zero_noise_config())
    assert list(trace.kind("alert")) == []
    assert list(trace.kind("speak")) == []
    assert list(trace.kind("frame")) == []
    assert len(list(trace.kind("measurement"))) > 0


def test_obstacle_pipeline_fires_in_order_within_one_round():
    trace = run_scenario(ground_obstacle_script(), config=zero_noise_config())
    alerts = list(trace.kind("alert"))
    assert alerts and alerts[0]["channel"] == "ground"
    assert alerts[0]["distance_cm"] == 40
    first_alert_t = alerts[0]["t"]

    frames = [e for e in trace.kind("frame") if e["data"] == "Ground\n"]
    speaks = [e for e in trace.kind("speak") if e["message"] == "Ground"]
    motors = [e for e in trace.kind("motor") if e["channel"] == "ground" and e["vibrating"]]
    assert frames[0]["t"] == first_alert_t
    assert speaks[0]["t"] == first_alert_t
    assert motors[0]["t"] == first_alert_t


def test_alert_announcements_repeat_on_two_second_cadence():
    trace = run_scenario(ground_obstacle_script(), config=zero_noise_config())
    speak_times = [e["t"] for e in trace.kind("speak")]
    assert len(speak_times) >= 2
    gaps = [b - a for a, b in zip(speak_times, speak_times[1:])]
    assert all(gap >= 2000 for gap in gaps)


def test_mute_stops_speech_but_not_decoding():
    script = ground_obstacle_script(user_events=[
        {"t": 3000, "kind": "button"},
        {"t": 3100, "kind": "utterance", "text": "stop speaking"},
    ])
    trace = run_scenario(script, config=zero_noise_config())
    muted = [e for e in trace.kind("set_muted") if e["muted"]]
    assert len(muted) == 1 and muted[0]["t"] == 3100
    speaks = [e["t"] for e in trace.kind("speak")]
    assert speaks and all(t <= 3100 for t in speaks)
    decodes = [e["t"] for e in trace.kind("decode")]
    assert any(t > 3100 for t in decodes)  # tokens keep flowing, silently


def test_every_frame_is_decoded_exactly_once():
    trace = run_scenario(ground_obstacle_script(), config=zero_noise_config())
    frames = list(trace.kind("frame"))
    decodes = list(trace.kind("decode"))
    unknowns = list(trace.kind("unknown_token"))
    assert len(frames) == len(decodes) + len(unknowns)
    assert unknowns == []


def test_trace_times_are_non_decreasing():
    trace = run_scenario(load_scenario(SCENARIO_DIR / "walk_20min.json"))
    times = [e["t"] for e in trace]
    assert times == sorted(times)


def test_upload_count_follows_duration_and_interval():
    script = make_script(duration_ms=1_200_000, channels={
        "ground": [{"t": 0, "distance_cm": 200}],
    })
    trace = run_scenario(script, config=zero_noise_config())
    uploads = list(trace.kind("upload"))
    assert len(uploads) == 4  # 20 min / 5 min
    assert [u["t"] for u in uploads] == [300_000, 600_000, 900_000, 1_200_000]
    assert all(u["outcome"] == "delivered" for u in uploads)
    assert [u["timestamp"] for u in uploads] == [
        "2015-06-01T00:05:00Z", "2015-06-01T00:10:00Z",
        "2015-06-01T00:15:00Z", "2015-06-01T00:20:00Z",
    ]


def test_offline_window_queues_then_flushes_in_order(tmp_path):
    store_path = tmp_path / "locations.jsonl"
    script = load_scenario(SCENARIO_DIR / "offline_queue.json")
    trace = run_scenario(script, store_path=str(store_path))

    uploads = list(trace.kind("upload"))
    by_due = {u["t"]: u["outcome"] for u in uploads}
    # Server is down across the 5- and 10-minute marks, back before 15.
    assert by_due[300_000] == "queued"
    assert by_due[600_000] == "queued"
    assert by_due[900_000] == "delivered"
    assert by_due[1_200_000] == "delivered"

    acks = list(trace.kind("server_ack"))
    assert [a["t"] for a in acks] == [900_000, 900_000, 900_000, 1_200_000]
    assert [a["id"] for a in acks] == [1, 2, 3, 4]

    rows = [json.loads(line) for line in store_path.read_text().splitlines()]
    assert [r["timestamp"] for r in rows] == [
        "2015-06-01T00:05:00Z", "2015-06-01T00:10:00Z",
        "2015-06-01T00:15:00Z", "2015-06-01T00:20:00Z",
    ]


def test_no_provider_due_is_skipped_entirely():
    script = make_script(
        duration_ms=1_200_000,
        gps_available=[{"t": 0, "value": True},
                       {"t": 550_000, "value": False},
                       {"t": 650_000, "value": True}],
        network_available=[{"t": 0, "value": False}],
    )
    trace = run_scenario(script, config=zero_noise_config())
    uploads = list(trace.kind("upload"))
    assert [u["t"] for u in uploads] == [300_000, 900_000, 1_200_000]
    assert all(u["outcome"] == "delivered" for u in uploads)


def test_same_inputs_reproduce_identical_traces():
    script = load_scenario(SCENARIO_DIR / "walk_20min.json")
    first = run_scenario(script)
    second = run_scenario(script)
    assert first.to_jsonl() == second.to_jsonl()


def test_seed_override_changes_the_noise():
    script = load_scenario(SCENARIO_DIR / "ground_obstacle.json")
    base = run_scenario(script)
    other = run_scenario(script, seed=script.seed + 1)
    assert base.to_jsonl() != other.to_jsonl()


def test_trace_jsonl_roundtrips_through_files(tmp_path):
    trace = run_scenario(load_scenario(SCENARIO_DIR / "ground_obstacle.json"))
    path = tmp_path / "run.jsonl"
    trace.write(path)
    again = TraceLog.read(path)
    assert again.to_jsonl() == trace.to_jsonl()


# -- error report ----------------------------------------------------------------


def synthetic_trace(rows):
    trace = TraceLog()
    for i, (measured, true_cm, surface, weather) in enumerate(rows):
        trace.add(ev_measurement(i * 10, Channel.GROUND, measured, true_cm,
                                 surface, weather))
    return trace


def test_error_report_zero_noise_is_zero():
    trace = distance_error_experiment(
        calibration=zero_noise_config().calibration, seed=7)
    report = error_report([trace])
    assert report.total_count == 4 * len(experiment_grid())
    assert report.overall_mape_pct == 0.0
    for stats in report.buckets.values():
        assert stats.mape_pct == 0.0 and stats.max_error_pct == 0.0


def test_error_report_computes_relative_errors():
    trace = synthetic_trace([
        (110, 100, SurfaceKind.TILES, Weather.DRY),    # 10 %
        (90, 100, SurfaceKind.TILES, Weather.DRY),     # 10 %
        (300, 300, SurfaceKind.CONCRETE, Weather.WET),  # 0 %
    ])
    report = error_report([trace])
    tiles = report.bucket(SurfaceKind.TILES, Weather.DRY)
    assert tiles.count == 2 and tiles.mape_pct == pytest.approx(10.0)
    assert tiles.max_error_pct == pytest.approx(10.0)
    assert report.overall_mape_pct == pytest.approx(20.0 / 3)
    assert report.mape_for_weather(Weather.DRY) == pytest.approx(10.0)
    assert report.mape_for_weather(Weather.WET) == pytest.approx(0.0)


def test_error_report_is_scale_invariant():
    base = [(105, 100, SurfaceKind.TILES, Weather.DRY),
            (210, 200, SurfaceKind.TILES, Weather.DRY)]
    scaled = [(m * 3, t * 3, s, w) for (m, t, s, w) in base]
    first = error_report([synthetic_trace(base)])
    second = error_report([synthetic_trace(scaled)])
    assert first.overall_mape_pct == pytest.approx(second.overall_mape_pct)


def test_error_report_skips_unusable_rows():
    trace = synthetic_trace([(50, None, SurfaceKind.TILES, Weather.DRY),
                             (50, 0, SurfaceKind.TILES, Weather.DRY)])
    report = error_report([trace])
    assert report.total_count == 0
    assert report.overall_mape_pct == 0.0


def test_error_report_merges_multiple_traces():
    a = synthetic_trace([(110, 100, SurfaceKind.TILES, Weather.DRY)])
    b = synthetic_trace([(90, 100, SurfaceKind.TILES, Weather.DRY)])
    report = error_report([a, b])
    assert report.bucket(SurfaceKind.TILES, Weather.DRY).count == 2


def test_experiment_measures_every_grid_point_deterministically():
    first = distance_error_experiment()
    second = distance_error_experiment()
    assert first.to_jsonl() == second.to_jsonl()
    measurements = list(first.kind("measurement"))
    assert len(measurements) == 4 * len(experiment_grid())
    seen = {(m["surface"], m["weather"], m["true_cm"]) for m in measurements}
    assert len(seen) == len(measurements)


# -- expectation matching ------------------------------------------------------------


def demo_trace():
    trace = TraceLog()
    trace.extend([
        {"t": 10, "kind": "alert", "channel": "ground"},
        {"t": 20, "kind": "speak", "message": "Ground"},
        {"t": 30, "kind": "alert", "channel": "left"},
    ])
    return trace


def test_eventually_advances_cursor_in_order():
    ok, detail = assert_expectations(demo_trace(), [
        {"op": "eventually", "kind": "alert", "where": {"channel": "ground"}},
        {"op": "eventually", "kind": "alert", "where": {"channel": "left"}},
    ])
    assert ok, detail


def test_eventually_fails_when_order_is_wrong():
    ok, detail = assert_expectations(demo_trace(), [
        {"op": "eventually", "kind": "alert", "where": {"channel": "left"}},
        {"op": "eventually", "kind": "alert", "where": {"channel": "ground"}},
    ])
    assert not ok
    assert "pattern 1" in detail


def test_never_applies_from_cursor_onward():
    # A ground alert exists, but only before the left alert; "never" passes.
    ok, _ = assert_expectations(demo_trace(), [
        {"op": "eventually", "kind": "alert", "where": {"channel": "left"}},
        {"op": "never", "kind": "alert", "where": {"channel": "ground"}},
    ])
    assert ok
    ok, detail = assert_expectations(demo_trace(), [
        {"op": "never", "kind": "alert", "where": {"channel": "left"}},
    ])
    assert not ok and "t=30ms" in detail


def test_never_does_not_advance_cursor():
    ok, _ = assert_expectations(demo_trace(), [
        {"op": "never", "kind": "call", "where": {}},
        {"op": "eventually", "kind": "alert", "where": {"channel": "ground"}},
    ])
    assert ok


def test_malformed_pattern_raises():
    with pytest.raises(ValueError):
        assert_expectations(demo_trace(), [{"op": "sometimes", "kind": "alert"}])
    with pytest.raises(ValueError):
        assert_expectations(demo_trace(), [{"op": "eventually"}])


def test_bundled_expectations_hold_for_ground_obstacle():
    trace = run_scenario(load_scenario(SCENARIO_DIR / "ground_obstacle.json"))
    patterns = load_expectations(EXPECTATION_DIR / "ground_alert.json")
    ok, detail = assert_expectations(trace, patterns)
    assert ok, detail


# -- command line ----------------------------------------------------------------


def test_cli_run_writes_trace_and_summary(tmp_path, capsys):
    trace_path = tmp_path / "run.jsonl"
    code = sim_main(["run", "--scenario", str(SCENARIO_DIR / "ground_obstacle.json"),
                     "--trace", str(trace_path)])
    assert code == 0
    out = capsys.readouterr().out
    assert "events" in out
    trace = TraceLog.read(trace_path)
    assert len(list(trace.kind("alert"))) > 0


def test_cli_run_missing_scenario_exits_2(tmp_path, capsys):
    code = sim_main(["run", "--scenario", str(tmp_path / "absent.json")])
    assert code == 2
    assert capsys.readouterr().err != ""


def test_cli_assert_pass_and_fail(tmp_path, capsys):
    trace_path = tmp_path / "run.jsonl"
    sim_main(["run", "--scenario", str(SCENARIO_DIR / "ground_obstacle.json"),
              "--trace", str(trace_path)])
    capsys.readouterr()

    code = sim_main(["assert", "--trace", str(trace_path),
                     "--expect", str(EXPECTATION_DIR / "ground_alert.json")])
    assert code == 0
    assert capsys.readouterr().out.startswith("PASS")

    bad = tmp_path / "impossible.json"
    bad.write_text(json.dumps([
        {"op": "eventually", "kind": "call", "where": {}},
    ]))
    code = sim_main(["assert", "--trace", str(trace_path), "--expect", str(bad)])
    assert code == 1
    assert capsys.readouterr().out.startswith("FAIL")


def test_cli_report_from_experiment_trace(tmp_path, capsys):
    trace_path = tmp_path / "exp.jsonl"
    report_path = tmp_path / "report.json"
    code = sim_main(["experiment", "--trace", str(trace_path)])
    assert code == 0
    capsys.readouterr()

    code = sim_main(["report", "--trace", str(trace_path), "--out", str(report_path)])
    assert code == 0
    out = capsys.readouterr().out
    assert "overall MAPE" in out
    doc = json.loads(report_path.read_text())
    assert doc["total_count"] == 120
    assert len(doc["buckets"]) == 4


def test_cli_experiment_report_matches_library(tmp_path, capsys):
    out_path = tmp_path / "report.json"
    code = sim_main(["experiment", "--seed", "42", "--out", str(out_path)])
    assert code == 0
    capsys.readouterr()
    doc = json.loads(out_path.read_text())
    expected = error_report([distance_error_experiment(seed=42)]).to_dict()
    assert doc == expected
