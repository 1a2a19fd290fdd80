"""End-to-end simulation harness.

run_scenario() wires the world model, firmware, serial link, handset app,
and an in-process tracking service into one deterministic run over virtual
time, producing a TraceLog.  distance_error_experiment() sweeps a fixed
distance grid per surface/weather condition to measure post-filter accuracy,
and assert_expectations() checks ordered eventually/never patterns against a
trace.
"""

from __future__ import annotations

import json
import os
import random
import tempfile
from collections import deque
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

from .app import (
    AssistiveApp,
    CallEmergency,
    SetMuted,
    UnknownTokenError,
    Uploader,
    decode_message,
    make_fix,
    select_provider,
)
from .clock import VirtualClock
from .config import SystemConfig
from .errors import ScenarioError
from .firmware import FirmwareConfig, FirmwareState, NoEchoError, acquire_distance, firmware_tick
from .link import LinkBuffer
from .server import FixValidationError, StorageError, TrackService, TrackStore
from .trace import (
    TraceLog,
    ev_alert,
    ev_button,
    ev_call,
    ev_decode,
    ev_frame,
    ev_measurement,
    ev_motor,
    ev_no_echo,
    ev_server_ack,
    ev_set_muted,
    ev_speak,
    ev_unknown_token,
    ev_upload,
    ev_utterance,
)
from .world import (
    Calibration,
    Channel,
    ScenarioScript,
    SurfaceKind,
    Weather,
    noise_params_for,
    sample_echo,
    utc_string,
)

# Secondary stream for fix noise so echo sampling and positioning stay
# independent; any fixed odd constant works.
_FIX_STREAM_SALT = 0x9E3779B9


def run_scenario(script: ScenarioScript, config: Optional[SystemConfig] = None,
                 seed: Optional[int] = None,
                 store_path: Optional[str] = None) -> TraceLog:
    """Simulate one scripted walk end to end and return its trace.

    The same (script, config, seed) triple always produces a byte-identical
    trace.  When store_path is given, the in-process tracking service
    persists there and the file survives the run; otherwise a throwaway
    store is used.
    """
    if config is None:
        config = SystemConfig.default()
    run_seed = script.seed if seed is None else seed
    echo_rng = random.Random(run_seed)
    fix_rng = random.Random(run_seed ^ _FIX_STREAM_SALT)

    clock = VirtualClock()
    trace = TraceLog()
    fw_state = FirmwareState()
    app = AssistiveApp(config.app)
    uploader = Uploader(config.app.upload_interval_ms)
    link = LinkBuffer()
    emit_times: deque[int] = deque()
    duration = script.duration_ms

    def make_sensor(channel: Channel) -> Callable[[], Optional[int]]:
        def poll() -> Optional[int]:
            t = clock.now()
            params = noise_params_for(
                script.surface_at(t), script.weather_at(t), config.calibration
            )
            return sample_echo(script.distance_cm_at(channel, t), params, echo_rng)
        return poll

    sensors = {channel: make_sensor(channel) for channel in Channel}

    temp_dir: Optional[tempfile.TemporaryDirectory] = None
    if store_path is None:
        temp_dir = tempfile.TemporaryDirectory(prefix="echoguide-run-")
        store_path = os.path.join(temp_dir.name, "locations.jsonl")
    store = TrackStore(store_path)
    service = TrackService(store)

    # The uploader calls fix_at(due) before delivering that instant's batch,
    # so the due instant also scopes reachability for the deliveries.
    current_due = 0

    def fix_at(due_ms: int):
        nonlocal current_due
        current_due = due_ms
        provider = select_provider(script.gps_at(due_ms), script.network_at(due_ms))
        if provider is None:
            return None
        lat, lon = script.position_at(due_ms)
        timestamp = utc_string(script.start_epoch_s + due_ms // 1000)
        return make_fix(lat, lon, provider, timestamp, config.app, fix_rng)

    def deliver(fix) -> Optional[int]:
        if not script.server_at(current_due):
            return None
        try:
            record = service.insert_fix({
                "device_id": fix.device_id,
                "latitude": fix.latitude,
                "longitude": fix.longitude,
                "timestamp": fix.timestamp,
                "provider": fix.provider.value,
            })
        except (FixValidationError, StorageError):
            return None
        trace.add(ev_server_ack(current_due, record.id, record.device_id, record.timestamp))
        return record.id

    def run_app_actions(actions, t_ms: int) -> None:
        for action in actions:
            if isinstance(action, CallEmergency):
                trace.add(ev_call(t_ms, action.number))
            elif isinstance(action, SetMuted):
                trace.add(ev_set_muted(t_ms, action.muted))

    try:
        motor_prev = {channel: False for channel in Channel}
        next_event = 0
        events = script.user_events

        while True:
            now = clock.now()
            horizon = min(now, duration)

            # Merge this iteration's app inputs into one time-ordered stream:
            # tokens the link just delivered plus user events now due.
            inputs: list[tuple[int, int, str, object]] = []
            order = 0
            for token in link.deframe():
                inputs.append((emit_times.popleft(), order, "token", token))
                order += 1
            while next_event < len(events) and events[next_event].t_ms <= horizon:
                event = events[next_event]
                next_event += 1
                inputs.append((event.t_ms, order, event.kind, event))
                order += 1
            inputs.sort(key=lambda item: (item[0], item[1]))

            for t_ms, _, kind, payload in inputs:
                if kind == "token":
                    token = payload  # type: ignore[assignment]
                    try:
                        message = decode_message(token)
                    except UnknownTokenError:
                        trace.add(ev_unknown_token(t_ms, token))
                        continue
                    trace.add(ev_decode(t_ms, message))
                    speak = app.announce(message, t_ms)
                    if speak is not None:
                        trace.add(ev_speak(t_ms, message, config.app.language.value, speak.text))
                elif kind == "button":
                    trace.add(ev_button(t_ms))
                    run_app_actions(app.handle_button(t_ms), t_ms)
                else:  # utterance
                    trace.add(ev_utterance(t_ms, payload.text))  # type: ignore[union-attr]
                    run_app_actions(app.handle_utterance(payload.text, t_ms), t_ms)

            app.handle_tick(horizon)  # expire a stale listening window

            for attempt in uploader.tick(now, duration, fix_at, deliver):
                trace.add(ev_upload(attempt))

            if now >= duration:
                break

            result = firmware_tick(fw_state, sensors, clock, config.firmware)
            round_time = {}
            for sample in result.samples:
                round_time[sample.channel] = sample.t_ms
                trace.add(ev_measurement(
                    sample.t_ms, sample.channel, sample.distance_cm,
                    script.distance_cm_at(sample.channel, sample.t_ms),
                    script.surface_at(sample.t_ms), script.weather_at(sample.t_ms),
                ))
            for channel, t_ms in result.failures:
                round_time[channel] = t_ms
                trace.add(ev_no_echo(t_ms, channel))
            for alert in result.alerts:
                trace.add(ev_alert(alert.t_ms, alert.channel, alert.distance_cm))
            for channel in Channel:
                vibrating = result.motor.vibrating(channel)
                if vibrating != motor_prev[channel]:
                    trace.add(ev_motor(round_time.get(channel, clock.now()), channel, vibrating))
                    motor_prev[channel] = vibrating
            for frame, t_ms in zip(result.frames, result.frame_times):
                trace.add(ev_frame(t_ms, frame))
                emit_times.append(t_ms)
                link.send(frame)
    finally:
        store.close()
        if temp_dir is not None:
            temp_dir.cleanup()

    trace.sort_by_time()
    return trace


# ---------------------------------------------------------------------------
# Distance-error experiment: post-filter accuracy per surface/weather.
# ---------------------------------------------------------------------------

GRID_START_CM = 20
GRID_STOP_CM = 600
GRID_STEP_CM = 20
EXPERIMENT_SEED = 42


def experiment_grid() -> list[int]:
    return list(range(GRID_START_CM, GRID_STOP_CM + 1, GRID_STEP_CM))


def distance_error_experiment(calibration: Optional[Calibration] = None,
                              firmware_cfg: Optional[FirmwareConfig] = None,
                              seed: int = EXPERIMENT_SEED,
                              grid: Optional[Sequence[float]] = None) -> TraceLog:
    """Measure every grid distance once per (surface, weather) condition.

    Each point runs the full firmware measurement round (nine gated samples,
    median) against the noise model for that condition, all on one seeded
    stream, and is recorded as a measurement event.
    """
    if calibration is None:
        calibration = SystemConfig.default().calibration
    cfg = firmware_cfg if firmware_cfg is not None else FirmwareConfig()
    points = list(grid) if grid is not None else experiment_grid()
    rng = random.Random(seed)
    clock = VirtualClock()
    trace = TraceLog()
    for surface in (SurfaceKind.TILES, SurfaceKind.CONCRETE):
        for weather in (Weather.DRY, Weather.WET):
            params = noise_params_for(surface, weather, calibration)
            for true_cm in points:
                def poll(true_cm=true_cm, params=params) -> Optional[int]:
                    return sample_echo(true_cm, params, rng)
                try:
                    measured = acquire_distance(Channel.GROUND, poll, clock, cfg)
                except NoEchoError:
                    trace.add(ev_no_echo(clock.now(), Channel.GROUND))
                    continue
                trace.add(ev_measurement(
                    clock.now(), Channel.GROUND, measured, true_cm, surface, weather
                ))
    return trace


@dataclass(frozen=True)
class BucketStats:
    surface: SurfaceKind
    weather: Weather
    count: int
    mape_pct: float
    max_error_pct: float


@dataclass(frozen=True)
class ErrorReport:
    """Accuracy per (surface, weather) bucket plus sample-weighted overall."""

    buckets: dict[tuple[SurfaceKind, Weather], BucketStats]
    overall_mape_pct: float
    total_count: int

    def bucket(self, surface: SurfaceKind, weather: Weather) -> Optional[BucketStats]:
        return self.buckets.get((surface, weather))

    def mape_for_weather(self, weather: Weather) -> Optional[float]:
        """Sample-weighted MAPE across every surface under one weather."""
        picked = [b for (_, w), b in self.buckets.items() if w is weather]
        total = sum(b.count for b in picked)
        if total == 0:
            return None
        return sum(b.mape_pct * b.count for b in picked) / total

    def to_dict(self) -> dict:
        return {
            "overall_mape_pct": self.overall_mape_pct,
            "total_count": self.total_count,
            "buckets": [
                {
                    "surface": stats.surface.value,
                    "weather": stats.weather.value,
                    "count": stats.count,
                    "mape_pct": stats.mape_pct,
                    "max_error_pct": stats.max_error_pct,
                }
                for stats in self.buckets.values()
            ],
        }

    def table(self) -> str:
        lines = [
            f"{'surface':<10} {'weather':<8} {'count':>5} {'MAPE %':>8} {'max err %':>10}",
            "-" * 45,
        ]
        for stats in self.buckets.values():
            lines.append(
                f"{stats.surface.value:<10} {stats.weather.value:<8} "
                f"{stats.count:>5} {stats.mape_pct:>8.2f} {stats.max_error_pct:>10.2f}"
            )
        lines.append("-" * 45)
        lines.append(f"overall MAPE over {self.total_count} measurements: "
                     f"{self.overall_mape_pct:.2f}%")
        return "\n".join(lines)


def error_report(traces: Sequence[TraceLog]) -> ErrorReport:
    """Aggregate measurement events into per-condition accuracy statistics.

    Errors are relative (percent of the true distance), so the report is
    invariant under uniform rescaling of true and measured values.
    """
    errors: dict[tuple[SurfaceKind, Weather], list[float]] = {}
    for trace in traces:
        for event in trace.kind("measurement"):
            true_cm = event.get("true_cm")
            if true_cm is None or true_cm <= 0:
                continue
            key = (SurfaceKind(event["surface"]), Weather(event["weather"]))
            err_pct = abs(event["measured_cm"] - true_cm) / true_cm * 100.0
            errors.setdefault(key, []).append(err_pct)

    buckets: dict[tuple[SurfaceKind, Weather], BucketStats] = {}
    weighted_sum = 0.0
    total = 0
    for key in sorted(errors, key=lambda k: (k[0].value, k[1].value)):
        errs = errors[key]
        stats = BucketStats(
            surface=key[0], weather=key[1], count=len(errs),
            mape_pct=sum(errs) / len(errs), max_error_pct=max(errs),
        )
        buckets[key] = stats
        weighted_sum += stats.mape_pct * stats.count
        total += stats.count
    overall = weighted_sum / total if total else 0.0
    return ErrorReport(buckets=buckets, overall_mape_pct=overall, total_count=total)


# ---------------------------------------------------------------------------
# Expectation matching: ordered eventually/never patterns over a trace.
# ---------------------------------------------------------------------------


def _matches(event: dict, kind: str, where: dict) -> bool:
    if event.get("kind") != kind:
        return False
    return all(event.get(field) == value for field, value in where.items())


def assert_expectations(trace: TraceLog, patterns: Sequence[dict]) -> tuple[bool, str]:
    """Check ordered patterns against a trace.

    Patterns are objects {"op": "eventually"|"never", "kind": ..., "where": {...}}
    processed left to right with a cursor.  "eventually" scans forward for a
    matching event and advances the cursor past it; "never" requires that no
    matching event exists at or after the cursor (it does not advance).  The
    first failure is reported with its pattern index and timestamps.
    """
    events = trace.events
    cursor = 0
    for index, pattern in enumerate(patterns):
        op = pattern.get("op")
        kind = pattern.get("kind")
        where = pattern.get("where", {})
        if op not in ("eventually", "never") or not isinstance(kind, str) \
                or not isinstance(where, dict):
            raise ValueError(f"pattern {index} is malformed: {pattern!r}")
        if op == "eventually":
            for i in range(cursor, len(events)):
                if _matches(events[i], kind, where):
                    cursor = i + 1
                    break
            else:
                at = events[cursor - 1]["t"] if cursor else 0
                return False, (
                    f"pattern {index}: eventually {kind} {where or ''} "
                    f"never matched after t={at}ms"
                )
        else:
            for i in range(cursor, len(events)):
                if _matches(events[i], kind, where):
                    return False, (
                        f"pattern {index}: never {kind} {where or ''} "
                        f"violated at t={events[i]['t']}ms"
                    )
    return True, f"all {len(patterns)} patterns satisfied"


def load_expectations(path: str) -> list[dict]:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if isinstance(doc, dict):
        patterns = doc.get("patterns")
    else:
        patterns = doc
    if not isinstance(patterns, list):
        raise ScenarioError(f"{path}: expected a list of patterns or an object with one")
    return patterns


__all__ = [
    "run_scenario", "distance_error_experiment", "experiment_grid",
    "BucketStats", "ErrorReport", "error_report", "assert_expectations",
    "load_expectations", "EXPERIMENT_SEED", "GRID_START_CM", "GRID_STOP_CM",
    "GRID_STEP_CM",
]
