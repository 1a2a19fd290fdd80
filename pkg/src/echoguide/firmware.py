"""Microcontroller logic of the wearable, reproduced cycle-for-cycle.

Each measurement takes nine gated echo samples 10 ms apart and keeps their
median; a distance below the per-direction threshold raises an alert, starts
the vibration motor, and sends a one-word frame down the serial link to the
handset.  All timing is driven by the shared virtual clock.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

from .clock import VirtualClock
from .world import (
    Channel,
    GATE_HIGH_CM,
    GATE_LOW_CM,
    PULSES_PER_CM,
    PULSES_PER_INCH,
)

# One poll of the rangefinder: a raw pulse count, or None when no echo returned.
EchoSource = Callable[[], Optional[int]]


class NoEchoError(RuntimeError):
    """A measurement round ran out of poll attempts before nine valid samples."""

    def __init__(self, channel: Channel, attempts: int) -> None:
        super().__init__(f"no usable echo on {channel.value} after {attempts} polls")
        self.channel = channel
        self.attempts = attempts


@dataclass(frozen=True)
class FirmwareConfig:
    """Tunable constants of the sensing firmware.

    The defaults mirror the deployed device: 58 pulses per centimetre
    (147 per inch), nine samples per measurement taken 10 ms apart, echoes
    trusted strictly between 15 and 645 cm, ground alerts under 60 cm and
    side alerts under 100 cm, with an alert frame repeated no more often
    than every two seconds while the condition persists.
    """

    pulses_per_cm: int = PULSES_PER_CM
    pulses_per_inch: int = PULSES_PER_INCH
    samples_per_measurement: int = 9
    sample_period_ms: int = 10
    gate_low_cm: int = GATE_LOW_CM
    gate_high_cm: int = GATE_HIGH_CM
    ground_alert_cm: int = 60
    left_alert_cm: int = 100
    right_alert_cm: int = 100
    max_sample_attempts: int = 50
    repeat_interval_ms: int = 2000

    def __post_init__(self) -> None:
        if not self.gate_low_cm < self.ground_alert_cm < self.gate_high_cm:
            raise ValueError("ground alert threshold must sit inside the valid gate")
        if self.samples_per_measurement % 2 != 1 or self.samples_per_measurement < 1:
            raise ValueError("samples_per_measurement must be odd and positive")
        for name in ("pulses_per_cm", "pulses_per_inch", "sample_period_ms",
                     "gate_low_cm", "ground_alert_cm", "left_alert_cm",
                     "right_alert_cm", "max_sample_attempts", "repeat_interval_ms"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.max_sample_attempts < self.samples_per_measurement:
            raise ValueError("max_sample_attempts must allow a full measurement")

    def alert_threshold_cm(self, channel: Channel) -> int:
        if channel is Channel.GROUND:
            return self.ground_alert_cm
        if channel is Channel.LEFT:
            return self.left_alert_cm
        return self.right_alert_cm


@dataclass(frozen=True)
class DistanceSample:
    """A completed, gate-valid measurement on one channel."""

    channel: Channel
    distance_cm: int
    t_ms: int


@dataclass(frozen=True)
class ObstacleAlert:
    """A measurement that fell below its channel's alert threshold."""

    channel: Channel
    distance_cm: int
    t_ms: int


@dataclass(frozen=True)
class MotorState:
    """Vibration motor drive per channel after a firmware pass."""

    ground: bool = False
    left: bool = False
    right: bool = False

    def vibrating(self, channel: Channel) -> bool:
        if channel is Channel.GROUND:
            return self.ground
        if channel is Channel.LEFT:
            return self.left
        return self.right

    @property
    def any_on(self) -> bool:
        return self.ground or self.left or self.right


def pulses_to_cm(pulses: int, cfg: FirmwareConfig = FirmwareConfig()) -> int:
    """Convert a raw pulse count to whole centimetres, rounding half up."""
    if pulses < 0:
        raise ValueError("pulse count cannot be negative")
    ppc = cfg.pulses_per_cm
    return (2 * pulses + ppc) // (2 * ppc)


def gate_valid(distance_cm: int, cfg: FirmwareConfig = FirmwareConfig()) -> bool:
    """True when a reading is strictly inside the trusted range."""
    return cfg.gate_low_cm < distance_cm < cfg.gate_high_cm


def median9(samples: Sequence[int], cfg: FirmwareConfig = FirmwareConfig()) -> int:
    """Median of exactly samples_per_measurement values (middle of the sorted run)."""
    n = cfg.samples_per_measurement
    if len(samples) != n:
        raise ValueError(f"median filter needs exactly {n} samples, got {len(samples)}")
    return sorted(samples)[n // 2]


def acquire_distance(channel: Channel, sensor: EchoSource, clock: VirtualClock,
                     cfg: FirmwareConfig = FirmwareConfig()) -> int:
    """Run one full measurement round on a channel.

    Polls the sensor every sample_period_ms, discarding missing echoes and
    readings outside the gate, until samples_per_measurement valid readings
    are banked; returns their median.  Every poll costs one sample period of
    virtual time whether or not it produced a usable reading.  Raises
    NoEchoError when max_sample_attempts polls yield too few valid samples.
    """
    valid: list[int] = []
    attempts = 0
    while len(valid) < cfg.samples_per_measurement:
        if attempts >= cfg.max_sample_attempts:
            raise NoEchoError(channel, attempts)
        pulses = sensor()
        attempts += 1
        clock.advance(cfg.sample_period_ms)
        if pulses is None:
            continue
        distance = pulses_to_cm(pulses, cfg)
        if gate_valid(distance, cfg):
            valid.append(distance)
    return median9(valid, cfg)


def classify(sample: DistanceSample,
             cfg: FirmwareConfig = FirmwareConfig()) -> Optional[ObstacleAlert]:
    """Alert when the measured distance is strictly below the channel threshold."""
    if sample.distance_cm < cfg.alert_threshold_cm(sample.channel):
        return ObstacleAlert(sample.channel, sample.distance_cm, sample.t_ms)
    return None


_CHANNEL_TOKENS = {
    Channel.GROUND: "Ground",
    Channel.LEFT: "Left",
    Channel.RIGHT: "Right",
}


def encode_message(alert: ObstacleAlert) -> bytes:
    """Wire frame for an alert: the channel word plus a newline terminator."""
    return (_CHANNEL_TOKENS[alert.channel] + "\n").encode("ascii")


@dataclass
class _ChannelLatch:
    alerting: bool = False
    last_emit_ms: Optional[int] = None


@dataclass
class FirmwareState:
    """Carry-over between firmware passes: per-channel alert latches."""

    latches: dict[Channel, _ChannelLatch] = field(
        default_factory=lambda: {c: _ChannelLatch() for c in Channel}
    )


@dataclass(frozen=True)
class TickResult:
    """Everything one firmware pass produced, for wiring and tracing."""

    motor: MotorState
    frames: list[bytes]
    frame_times: list[int]  # emission time of each frame, parallel to frames
    samples: list[DistanceSample]
    alerts: list[ObstacleAlert]
    failures: list[tuple[Channel, int]]  # (channel, t_ms) rounds with no echo


def firmware_tick(state: FirmwareState, echoes: dict[Channel, EchoSource],
                  clock: VirtualClock,
                  cfg: FirmwareConfig = FirmwareConfig()) -> TickResult:
    """One pass of the firmware main loop.

    Measures ground, then left, then right.  The motor vibrates on exactly
    the channels that alerted in this pass.  A frame is sent when a channel
    newly enters the alert state; while the alert persists, the frame is
    re-sent only once per repeat_interval_ms.
    """
    frames: list[bytes] = []
    frame_times: list[int] = []
    samples: list[DistanceSample] = []
    alerts: list[ObstacleAlert] = []
    failures: list[tuple[Channel, int]] = []
    motor = {c: False for c in Channel}

    for channel in (Channel.GROUND, Channel.LEFT, Channel.RIGHT):
        latch = state.latches[channel]
        try:
            distance = acquire_distance(channel, echoes[channel], clock, cfg)
        except NoEchoError:
            failures.append((channel, clock.now()))
            latch.alerting = False
            latch.last_emit_ms = None
            continue
        sample = DistanceSample(channel, distance, clock.now())
        samples.append(sample)
        alert = classify(sample, cfg)
        if alert is None:
            latch.alerting = False
            latch.last_emit_ms = None
            continue
        alerts.append(alert)
        motor[channel] = True
        fresh = not latch.alerting
        due_again = (
            latch.last_emit_ms is not None
            and alert.t_ms - latch.last_emit_ms >= cfg.repeat_interval_ms
        )
        if fresh or due_again:
            frames.append(encode_message(alert))
            frame_times.append(alert.t_ms)
            latch.last_emit_ms = alert.t_ms
        latch.alerting = True

    return TickResult(
        motor=MotorState(motor[Channel.GROUND], motor[Channel.LEFT], motor[Channel.RIGHT]),
        frames=frames,
        frame_times=frame_times,
        samples=samples,
        alerts=alerts,
        failures=failures,
    )


__all__ = [
    "EchoSource", "NoEchoError", "FirmwareConfig", "DistanceSample",
    "ObstacleAlert", "MotorState", "FirmwareState", "TickResult",
    "pulses_to_cm", "gate_valid", "median9", "acquire_distance", "classify",
    "encode_message", "firmware_tick",
]
