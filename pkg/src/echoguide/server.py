"""Location-tracking service: validates posted fixes, persists them to an
append-only JSON-lines file, and answers latest/history queries.

The service core is transport-free so the simulation harness can call it
in-process; ``main()`` wraps the same core in a threaded HTTP server for
real clients.  Every accepted fix is flushed and fsynced before the caller
sees a response, so a restart answers queries identically.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import threading
from dataclasses import asdict, dataclass
from datetime import datetime
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Optional
from urllib.parse import parse_qs, urlsplit

DEFAULT_LISTEN = "127.0.0.1:8750"
DEFAULT_STORE = "locations.jsonl"
DEFAULT_HISTORY_LIMIT = 1000

ENV_LISTEN = "ECHOGUIDE_LISTEN"
ENV_STORE = "ECHOGUIDE_STORE"

_PROVIDERS = ("gps", "network")
_FIELDS = ("device_id", "latitude", "longitude", "timestamp", "provider")


class FixValidationError(ValueError):
    """A posted fix failed validation; .field names the offending field."""

    def __init__(self, field: str, message: str) -> None:
        super().__init__(message)
        self.field = field


class StorageError(RuntimeError):
    """The persistence layer failed mid-operation."""


@dataclass(frozen=True)
class FixRecord:
    id: int
    device_id: str
    latitude: float
    longitude: float
    timestamp: str  # ISO-8601 UTC with 'Z' suffix
    provider: str  # "gps" | "network"


def parse_record_timestamp(text: str) -> datetime:
    """Parse the canonical 'Z'-suffixed ISO-8601 instant; raises ValueError."""
    if not text.endswith("Z"):
        raise ValueError("timestamp must end with 'Z'")
    return datetime.fromisoformat(text[:-1] + "+00:00")


def validate_fix(body: object) -> dict:
    """Check a decoded POST body and return its canonical field dict.

    The body must be a JSON object carrying exactly device_id, latitude,
    longitude, timestamp, and provider with valid values; the error names
    the first offending field.
    """
    if not isinstance(body, dict):
        raise FixValidationError("body", "request body must be a JSON object")
    for name in _FIELDS:
        if name not in body:
            raise FixValidationError(name, f"missing required field '{name}'")
    for name in body:
        if name not in _FIELDS:
            raise FixValidationError(name, f"unexpected field '{name}'")
    device_id = body["device_id"]
    if not isinstance(device_id, str) or not device_id:
        raise FixValidationError("device_id", "device_id must be a non-empty string")
    latitude = body["latitude"]
    if not isinstance(latitude, (int, float)) or isinstance(latitude, bool) \
            or not -90.0 <= latitude <= 90.0:
        raise FixValidationError("latitude", "latitude must be a number in [-90, 90]")
    longitude = body["longitude"]
    if not isinstance(longitude, (int, float)) or isinstance(longitude, bool) \
            or not -180.0 <= longitude <= 180.0:
        raise FixValidationError("longitude", "longitude must be a number in [-180, 180]")
    timestamp = body["timestamp"]
    if not isinstance(timestamp, str):
        raise FixValidationError("timestamp", "timestamp must be a string")
    try:
        parse_record_timestamp(timestamp)
    except ValueError:
        raise FixValidationError(
            "timestamp", "timestamp must be ISO-8601 UTC with a 'Z' suffix"
        ) from None
    provider = body["provider"]
    if provider not in _PROVIDERS:
        raise FixValidationError("provider", "provider must be 'gps' or 'network'")
    return {
        "device_id": device_id,
        "latitude": float(latitude),
        "longitude": float(longitude),
        "timestamp": timestamp,
        "provider": provider,
    }


class TrackStore:
    """Append-only JSON-lines store of fixes; loads its file on startup.

    Appends are serialized through one lock and made durable (flush+fsync)
    before insert() returns, so reloading the same path reconstructs an
    identical store.
    """

    def __init__(self, path: str) -> None:
        self.path = path
        self._lock = threading.Lock()
        self._records: list[FixRecord] = []
        if os.path.exists(path):
            with open(path, "r", encoding="utf-8") as fh:
                for lineno, line in enumerate(fh, start=1):
                    line = line.strip()
                    if not line:
                        continue
                    try:
                        doc = json.loads(line)
                        record = FixRecord(
                            id=int(doc["id"]),
                            device_id=doc["device_id"],
                            latitude=float(doc["latitude"]),
                            longitude=float(doc["longitude"]),
                            timestamp=doc["timestamp"],
                            provider=doc["provider"],
                        )
                    except (ValueError, KeyError, TypeError) as exc:
                        raise StorageError(f"{path}:{lineno}: corrupt record ({exc})") from None
                    self._records.append(record)
        self._fh = open(path, "a", encoding="utf-8")

    def close(self) -> None:
        with self._lock:
            self._fh.close()

    def insert(self, fields: dict) -> FixRecord:
        """Assign the next id, persist durably, then expose the record."""
        with self._lock:
            record = FixRecord(id=len(self._records) + 1, **fields)
            try:
                self._fh.write(json.dumps(asdict(record), sort_keys=True) + "\n")
                self._fh.flush()
                os.fsync(self._fh.fileno())
            except (OSError, ValueError) as exc:
                raise StorageError(f"failed to persist fix: {exc}") from None
            self._records.append(record)
            return record

    def records(self) -> list[FixRecord]:
        with self._lock:
            return list(self._records)


def _sort_key(record: FixRecord) -> tuple[datetime, int]:
    return parse_record_timestamp(record.timestamp), record.id


class TrackService:
    """Transport-independent API core shared by HTTP and in-process callers."""

    def __init__(self, store: TrackStore) -> None:
        self.store = store

    def insert_fix(self, body: object) -> FixRecord:
        return self.store.insert(validate_fix(body))

    def latest_fix(self, device_id: str) -> Optional[FixRecord]:
        """Newest fix by timestamp; ties broken by the later insert."""
        fixes = [r for r in self.store.records() if r.device_id == device_id]
        if not fixes:
            return None
        return max(fixes, key=_sort_key)

    def history(self, device_id: str, limit: int) -> list[FixRecord]:
        """The most recent `limit` fixes, ascending by timestamp (id on ties)."""
        if limit < 1:
            raise ValueError("limit must be >= 1")
        fixes = sorted(
            (r for r in self.store.records() if r.device_id == device_id),
            key=_sort_key,
        )
        return fixes[-limit:]


# --------------------------------------------------------------------------
# HTTP adapter.
# --------------------------------------------------------------------------


def _record_json(record: FixRecord) -> dict:
    return asdict(record)


class TrackRequestHandler(BaseHTTPRequestHandler):
    service: TrackService  # injected by make_http_server
    protocol_version = "HTTP/1.1"

    # -- plumbing -----------------------------------------------------------

    def log_message(self, fmt: str, *args: object) -> None:
        pass  # keep stdio clean; errors surface through status codes

    def _reply(self, status: int, payload: object) -> None:
        body = json.dumps(payload).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json; charset=utf-8")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _error(self, status: int, message: str, field: Optional[str] = None) -> None:
        payload: dict = {"error": message}
        if field is not None:
            payload["field"] = field
        self._reply(status, payload)

    # -- routes ---------------------------------------------------------------

    def do_POST(self) -> None:
        parts = urlsplit(self.path)
        if parts.path != "/api/locations":
            self._error(404, "no such resource")
            return
        try:
            length = int(self.headers.get("Content-Length", "0"))
            raw = self.rfile.read(length)
            body = json.loads(raw.decode("utf-8"))
        except (ValueError, UnicodeDecodeError):
            self._error(400, "request body is not valid JSON", field="body")
            return
        try:
            record = self.service.insert_fix(body)
        except FixValidationError as exc:
            self._error(400, str(exc), field=exc.field)
            return
        except StorageError as exc:
            self._error(500, str(exc))
            return
        self._reply(201, _record_json(record))

    def do_GET(self) -> None:
        parts = urlsplit(self.path)
        query = parse_qs(parts.query)
        device_id = (query.get("device_id") or [None])[0]
        if parts.path == "/api/locations/latest":
            if not device_id:
                self._error(400, "query parameter 'device_id' is required", field="device_id")
                return
            record = self.service.latest_fix(device_id)
            if record is None:
                self._error(404, f"no fix recorded for device '{device_id}'")
                return
            self._reply(200, _record_json(record))
            return
        if parts.path == "/api/locations":
            if not device_id:
                self._error(400, "query parameter 'device_id' is required", field="device_id")
                return
            raw_limit = (query.get("limit") or [str(DEFAULT_HISTORY_LIMIT)])[0]
            try:
                limit = int(raw_limit)
                if limit < 1:
                    raise ValueError
            except ValueError:
                self._error(400, "limit must be a positive integer", field="limit")
                return
            records = self.service.history(device_id, limit)
            self._reply(200, [_record_json(r) for r in records])
            return
        self._error(404, "no such resource")


def make_http_server(listen: str, service: TrackService) -> ThreadingHTTPServer:
    """Bind a threaded HTTP server exposing the service; caller runs it."""
    host, _, port_text = listen.rpartition(":")
    if not host or not port_text.isdigit():
        raise ValueError(f"listen address must be host:port, got {listen!r}")
    handler = type("BoundHandler", (TrackRequestHandler,), {"service": service})
    return ThreadingHTTPServer((host, int(port_text)), handler)


def main(argv: Optional[list[str]] = None) -> int:
    parser = argparse.ArgumentParser(
        prog="echoguide-server",
        description="Location-tracking HTTP service with JSON-lines persistence.",
    )
    parser.add_argument("--listen", default=DEFAULT_LISTEN,
                        help=f"host:port to bind (default {DEFAULT_LISTEN}; "
                             f"env {ENV_LISTEN} overrides)")
    parser.add_argument("--store", default=DEFAULT_STORE,
                        help=f"JSON-lines persistence path (default {DEFAULT_STORE}; "
                             f"env {ENV_STORE} overrides)")
    args = parser.parse_args(argv)

    # Environment wins over flags so supervisors can pin the deployment.
    listen = os.environ.get(ENV_LISTEN, args.listen)
    store_path = os.environ.get(ENV_STORE, args.store)

    store = TrackStore(store_path)
    service = TrackService(store)
    httpd = make_http_server(listen, service)
    host, port = httpd.server_address[:2]
    print(f"serving on http://{host}:{port} (store: {store_path})", flush=True)
    try:
        httpd.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        httpd.server_close()
        store.close()
    return 0


if __name__ == "__main__":
    sys.exit(main())
