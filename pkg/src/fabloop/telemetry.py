"""Status snapshots and the HTTP monitoring endpoint.

The simulation publishes immutable :class:`StatusSnapshot` objects by
swapping a single reference; readers just load that reference, so a read
never blocks the publisher and never sees a half-written snapshot.
"""

from __future__ import annotations

import enum
import json
import logging
import threading
from dataclasses import asdict, dataclass, replace
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

log = logging.getLogger(__name__)


class Phase(str, enum.Enum):
    IDLE = "Idle"
    PRINTING = "Printing"
    CAPTURING = "Capturing"
    DETECTING = "Detecting"
    REPAIRING = "Repairing"
    VERIFYING = "Verifying"


@dataclass(frozen=True)
class StatusSnapshot:
    time_s: float = 0.0
    temp_c: float = 25.0
    heater_on: bool = False
    setpoint_c: float = 200.0
    extruder_steps_per_s: float = 0.0
    phase: Phase = Phase.IDLE
    layer: int = 0
    defects_open: int = 0

    def __post_init__(self):
        object.__setattr__(self, "phase", Phase(self.phase))
        if self.layer < 0 or self.defects_open < 0:
            raise ValueError("counts must be nonnegative")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["phase"] = self.phase.value
        return d


class Telemetry:
    """Single-writer snapshot cell."""

    def __init__(self, initial: StatusSnapshot | None = None):
        self._snapshot = initial or StatusSnapshot()
        self._write_lock = threading.Lock()  # writers only; readers never take it

    def snapshot(self) -> StatusSnapshot:
        return self._snapshot

    def publish(self, **changes) -> StatusSnapshot:
        with self._write_lock:
            current = self._snapshot
            if "time_s" in changes:
                changes["time_s"] = max(float(changes["time_s"]), current.time_s)
            new = replace(current, **changes)
            self._snapshot = new
        return new


def status_snapshot(telemetry: Telemetry) -> StatusSnapshot:
    return telemetry.snapshot()


def _make_handler(telemetry: Telemetry):
    class Handler(BaseHTTPRequestHandler):
        def _send(self, code: int, payload: dict):
            body = json.dumps(payload, sort_keys=True).encode("utf-8")
            self.send_response(code)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

        def do_GET(self):
            path = self.path.split("?", 1)[0]
            if path == "/status":
                self._send(200, telemetry.snapshot().to_dict())
            elif path == "/healthz":
                self._send(200, {"ok": True})
            else:
                self._send(404, {"error": f"no route {path}"})

        def log_message(self, fmt, *args):
            log.debug("telemetry: " + fmt, *args)

    return Handler


class TelemetryServer:
    """Serve ``/status`` and ``/healthz`` from a background thread."""

    def __init__(self, telemetry: Telemetry, host: str = "127.0.0.1", port: int = 0):
        self.telemetry = telemetry
        self._httpd = ThreadingHTTPServer((host, port), _make_handler(telemetry))
        self._httpd.daemon_threads = True
        self._thread = threading.Thread(target=self._httpd.serve_forever, name="telemetry", daemon=True)

    @property
    def port(self) -> int:
        return self._httpd.server_address[1]

    @property
    def url(self) -> str:
        host, port = self._httpd.server_address[:2]
        return f"http://{host}:{port}"

    def start(self) -> "TelemetryServer":
        self._thread.start()
        return self

    def stop(self) -> None:
        self._httpd.shutdown()
        self._httpd.server_close()
        self._thread.join(timeout=5)

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()
