"""Handset application logic: spoken obstacle announcements, a push-to-talk
voice command loop, location fixes with provider fallback, and the periodic
upload schedule with an offline queue.

The whole app is one logical event loop consuming a merged, time-ordered
stream of link tokens, user events, and clock ticks; the uploader is a
timer-driven step inside that loop.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, Optional

from .errors import ConfigError


class ObstacleMessage(Enum):
    """Decoded one-word frames from the wearable."""

    GROUND = "Ground"
    LEFT = "Left"
    RIGHT = "Right"


class Language(Enum):
    BENGALI = "bengali"
    ENGLISH = "english"


class Provider(Enum):
    GPS = "gps"
    NETWORK = "network"


class UnknownTokenError(ValueError):
    """The link delivered a token that is not a known obstacle word."""

    def __init__(self, token: str) -> None:
        super().__init__(f"unknown link token: {token!r}")
        self.token = token


def decode_message(token: str) -> ObstacleMessage:
    """Map a link token to its message; exact, case-sensitive match only."""
    for message in ObstacleMessage:
        if token == message.value:
            return message
    raise UnknownTokenError(token)


# Default spoken phrases.  Placeholder wording, replaceable via the config
# file; the Bengali strings exercise the non-ASCII path end to end.
DEFAULT_PHRASES: dict[tuple[ObstacleMessage, Language], str] = {
    (ObstacleMessage.GROUND, Language.ENGLISH): "Obstacle on the ground ahead",
    (ObstacleMessage.LEFT, Language.ENGLISH): "Obstacle on your left",
    (ObstacleMessage.RIGHT, Language.ENGLISH): "Obstacle on your right",
    (ObstacleMessage.GROUND, Language.BENGALI): "সামনে মাটিতে বাধা আছে",
    (ObstacleMessage.LEFT, Language.BENGALI): "বাম দিকে বাধা আছে",
    (ObstacleMessage.RIGHT, Language.BENGALI): "ডান দিকে বাধা আছে",
}

# Voice commands after normalization (lowercase, trimmed, whitespace collapsed).
DEFAULT_COMMANDS: dict[str, str] = {
    "i need help": "call_emergency",
    "stop speaking": "mute",
    "start speaking": "unmute",
}

_COMMAND_ACTIONS = {"call_emergency", "mute", "unmute"}


@dataclass(frozen=True)
class AppConfig:
    language: Language = Language.ENGLISH
    phrases: dict[tuple[ObstacleMessage, Language], str] = field(
        default_factory=lambda: dict(DEFAULT_PHRASES)
    )
    emergency_number: str = "+15555550100"
    upload_interval_ms: int = 300_000
    announce_repeat_ms: int = 2000
    commands: dict[str, str] = field(default_factory=lambda: dict(DEFAULT_COMMANDS))
    device_id: str = "walker-1"
    listen_window_ms: int = 10_000
    gps_sigma_m: float = 5.0
    network_sigma_m: float = 50.0

    def __post_init__(self) -> None:
        for message in ObstacleMessage:
            for language in Language:
                if (message, language) not in self.phrases:
                    raise ConfigError(
                        f"phrase table missing entry for ({message.value}, {language.value})"
                    )
        for text, action in self.commands.items():
            if normalize_utterance(text) != text:
                raise ConfigError(f"command key {text!r} is not in normalized form")
            if action not in _COMMAND_ACTIONS:
                raise ConfigError(f"unknown command action {action!r}")
        if self.upload_interval_ms <= 0 or self.announce_repeat_ms <= 0:
            raise ConfigError("intervals must be positive")
        if self.listen_window_ms <= 0:
            raise ConfigError("listen_window_ms must be positive")
        if self.gps_sigma_m < 0 or self.network_sigma_m < 0:
            raise ConfigError("provider sigmas must be >= 0")
        if not self.device_id:
            raise ConfigError("device_id must be non-empty")

    def phrase_for(self, message: ObstacleMessage) -> str:
        return self.phrases[(message, self.language)]


# --------------------------------------------------------------------------
# App actions: the externally observable outputs of the event loop.
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Speak:
    text: str
    message: ObstacleMessage


@dataclass(frozen=True)
class CallEmergency:
    number: str


@dataclass(frozen=True)
class SetMuted:
    muted: bool


@dataclass(frozen=True)
class LocationFix:
    device_id: str
    latitude: float
    longitude: float
    timestamp: str  # ISO-8601 UTC, whole seconds, 'Z' suffix
    provider: Provider


@dataclass(frozen=True)
class Upload:
    fix: LocationFix


AppAction = object  # union of the four dataclasses above


# --------------------------------------------------------------------------
# Voice command finite-state machine.
# --------------------------------------------------------------------------


class VoiceMode(Enum):
    IDLE = "idle"
    LISTENING = "listening"


@dataclass(frozen=True)
class VoiceState:
    mode: VoiceMode = VoiceMode.IDLE
    muted: bool = False
    listening_deadline_ms: Optional[int] = None


@dataclass(frozen=True)
class ButtonPress:
    t_ms: int


@dataclass(frozen=True)
class Utterance:
    t_ms: int
    text: str


@dataclass(frozen=True)
class Tick:
    t_ms: int


VoiceEvent = object  # ButtonPress | Utterance | Tick


def normalize_utterance(text: str) -> str:
    """Lowercase, trim, and collapse internal whitespace."""
    return " ".join(text.split()).lower()


def voice_fsm_step(state: VoiceState, event: VoiceEvent,
                   cfg: AppConfig) -> tuple[VoiceState, Optional[AppAction]]:
    """Advance the push-to-talk state machine by one event.

    A button press opens (or re-opens) a listening window; the first
    utterance inside the window is matched against the command table and
    closes it; the window expires listen_window_ms after the press.
    Unrecognized speech and speech outside the window do nothing.
    """
    deadline = state.listening_deadline_ms
    expired = (
        state.mode is VoiceMode.LISTENING
        and deadline is not None
        and event.t_ms > deadline  # type: ignore[attr-defined]
    )
    if expired:
        state = replace(state, mode=VoiceMode.IDLE, listening_deadline_ms=None)

    if isinstance(event, ButtonPress):
        return (
            replace(state, mode=VoiceMode.LISTENING,
                    listening_deadline_ms=event.t_ms + cfg.listen_window_ms),
            None,
        )
    if isinstance(event, Utterance):
        if state.mode is not VoiceMode.LISTENING:
            return state, None
        state = replace(state, mode=VoiceMode.IDLE, listening_deadline_ms=None)
        command = cfg.commands.get(normalize_utterance(event.text))
        if command == "call_emergency":
            return state, CallEmergency(cfg.emergency_number)
        if command == "mute":
            return replace(state, muted=True), SetMuted(True)
        if command == "unmute":
            return replace(state, muted=False), SetMuted(False)
        return state, None
    if isinstance(event, Tick):
        return state, None
    raise TypeError(f"unknown voice event: {event!r}")


# --------------------------------------------------------------------------
# Location fixes.
# --------------------------------------------------------------------------

_METERS_PER_DEG_LAT = 111_320.0


def select_provider(gps_available: bool, network_available: bool) -> Optional[Provider]:
    """GPS when it has a lock, the network provider as fallback, else nothing."""
    if gps_available:
        return Provider.GPS
    if network_available:
        return Provider.NETWORK
    return None


def make_fix(true_lat: float, true_lon: float, provider: Provider, timestamp: str,
             cfg: AppConfig, rng: random.Random) -> LocationFix:
    """Build a fix: the true position plus provider-dependent isotropic error.

    GPS and network accuracy are configured in metres and converted to
    degrees through a local flat-earth metric.  Coordinates are clamped to
    the valid ranges and rounded to six decimal places (about 0.1 m).
    """
    sigma_m = cfg.gps_sigma_m if provider is Provider.GPS else cfg.network_sigma_m
    east_m = rng.gauss(0.0, sigma_m)
    north_m = rng.gauss(0.0, sigma_m)
    meters_per_deg_lon = _METERS_PER_DEG_LAT * max(math.cos(math.radians(true_lat)), 0.01)
    lat = true_lat + north_m / _METERS_PER_DEG_LAT
    lon = true_lon + east_m / meters_per_deg_lon
    lat = min(90.0, max(-90.0, lat))
    lon = min(180.0, max(-180.0, lon))
    return LocationFix(
        device_id=cfg.device_id,
        latitude=round(lat, 6),
        longitude=round(lon, 6),
        timestamp=timestamp,
        provider=provider,
    )


# --------------------------------------------------------------------------
# Periodic uploader with offline queue.
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class UploadAttempt:
    """Outcome of one fix handed to the uploader at a due instant."""

    fix: LocationFix
    delivered: bool
    ack_id: Optional[int]
    due_ms: int


class Uploader:
    """Timer-driven upload step.

    Fires at fixed multiples of the upload interval (never at t=0).  A due
    instant with no provider is skipped outright.  When delivery fails the
    fix joins an ordered pending queue, and the whole queue is flushed ahead
    of the current fix on the next successful delivery.
    """

    def __init__(self, interval_ms: int) -> None:
        if interval_ms <= 0:
            raise ValueError("interval_ms must be positive")
        self.interval_ms = interval_ms
        self.next_due_ms = interval_ms
        self.pending: list[LocationFix] = []

    def tick(self, now_ms: int, horizon_ms: Optional[int],
             fix_at: Callable[[int], Optional[LocationFix]],
             deliver: Callable[[LocationFix], Optional[int]]) -> list[UploadAttempt]:
        """Process every due instant up to now (capped at horizon_ms).

        fix_at(due_ms) returns the fix as of that instant, or None when no
        provider is available then.  deliver() returns the server's record id
        on success and None when the server is unreachable.
        """
        limit = now_ms if horizon_ms is None else min(now_ms, horizon_ms)
        attempts: list[UploadAttempt] = []
        while self.next_due_ms <= limit:
            due = self.next_due_ms
            self.next_due_ms += self.interval_ms
            fix = fix_at(due)
            if fix is None:
                continue  # no provider: nothing recorded, try next interval
            batch = self.pending + [fix]
            self.pending = []
            failed = False
            for item in batch:
                if not failed:
                    ack = deliver(item)
                    if ack is not None:
                        attempts.append(UploadAttempt(item, True, ack, due))
                        continue
                    failed = True
                self.pending.append(item)
                # Queued backlog was already reported at its own due time;
                # only the fix born at this instant gets a fresh record.
                if item is fix:
                    attempts.append(UploadAttempt(item, False, None, due))
        return attempts


# --------------------------------------------------------------------------
# The assembled application.
# --------------------------------------------------------------------------


class AssistiveApp:
    """Event-loop state of the handset app.

    Feed it decoded link tokens, user events, and ticks; it returns the
    actions (speech, emergency calls, mute switches) they caused.  Announce
    deduplication and the mute switch live here; upload scheduling is
    delegated to an Uploader owned by the caller's run loop.
    """

    def __init__(self, cfg: AppConfig) -> None:
        self.cfg = cfg
        self.voice = VoiceState()
        self._last_spoken_ms: dict[ObstacleMessage, int] = {}

    # -- announcements ----------------------------------------------------

    def announce(self, message: ObstacleMessage, now_ms: int) -> Optional[Speak]:
        """Speak an obstacle phrase unless muted or a repeat came too soon."""
        if self.voice.muted:
            return None
        last = self._last_spoken_ms.get(message)
        if last is not None and now_ms - last < self.cfg.announce_repeat_ms:
            return None
        phrase = self.cfg.phrases.get((message, self.cfg.language))
        if phrase is None:
            raise ConfigError(
                f"no phrase for ({message.value}, {self.cfg.language.value})"
            )
        self._last_spoken_ms[message] = now_ms
        return Speak(phrase, message)

    def handle_token(self, token: str, now_ms: int) -> list[AppAction]:
        """Decode one link token and maybe announce it.  May raise UnknownTokenError."""
        message = decode_message(token)
        action = self.announce(message, now_ms)
        return [action] if action is not None else []

    # -- voice ------------------------------------------------------------

    def _apply_voice(self, event: VoiceEvent) -> list[AppAction]:
        self.voice, action = voice_fsm_step(self.voice, event, self.cfg)
        return [action] if action is not None else []

    def handle_button(self, t_ms: int) -> list[AppAction]:
        return self._apply_voice(ButtonPress(t_ms))

    def handle_utterance(self, text: str, t_ms: int) -> list[AppAction]:
        return self._apply_voice(Utterance(t_ms, text))

    def handle_tick(self, t_ms: int) -> list[AppAction]:
        return self._apply_voice(Tick(t_ms))


__all__ = [
    "ObstacleMessage", "Language", "Provider", "UnknownTokenError",
    "decode_message", "DEFAULT_PHRASES", "DEFAULT_COMMANDS", "AppConfig",
    "Speak", "CallEmergency", "SetMuted", "LocationFix", "Upload",
    "VoiceMode", "VoiceState", "ButtonPress", "Utterance", "Tick",
    "normalize_utterance", "voice_fsm_step", "select_provider", "make_fix",
    "Uploader", "UploadAttempt", "AssistiveApp",
]
