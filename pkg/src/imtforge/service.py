"""HTTP+JSON wire protocol around sessions, decoding, and online updates.

Model state is published as an immutable (params, version) snapshot pair:
decodes grab the current pair and keep working against that params object
while a writer prepares the next one on a private copy and swaps it in
atomically. Updates are therefore serializable (versions totally ordered)
and a failed update leaves the published model bit-identical.
"""

from __future__ import annotations

import json
import logging
import mimetypes
import os
import threading
import time
import uuid
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

import numpy as np

from .decoding import ConstraintError
from .engine import Engine, EngineError
from .session import ACCEPTED, ACTIVE, SessionError, accept_hypothesis, \
    apply_char_feedback, apply_word_feedback, start_session
from .training import OPTIMIZERS, OptimizerState, online_update

log = logging.getLogger(__name__)

PROTOCOL_VERSION = 1
MAX_BODY_BYTES = 1 << 20


class ServiceError(Exception):
    pass


@dataclass
class ServiceConfig:
    host: str = "127.0.0.1"
    port: int = 8077
    adapt: bool = False
    optimizer: str = "adadelta"
    learning_rate: float | None = None
    beam_size: int = 6
    max_sessions: int = 8
    auth_token: str | None = None
    session_ttl_s: float = 3600.0
    ui_dir: str | None = None

    def __post_init__(self):
        if self.auth_token is None:
            self.auth_token = os.environ.get("IMTFORGE_TOKEN") or None

    def validate(self) -> "ServiceConfig":
        if self.max_sessions < 1:
            raise ServiceError("max_sessions must be >= 1")
        if self.beam_size < 1:
            raise ServiceError("beam_size must be >= 1")
        if self.optimizer not in OPTIMIZERS:
            raise ServiceError(f"unknown optimizer {self.optimizer!r}")
        if self.session_ttl_s <= 0:
            raise ServiceError("session_ttl_s must be positive")
        if self.ui_dir is not None and not Path(self.ui_dir).is_dir():
            raise ServiceError(f"ui_dir {self.ui_dir!r} is not a directory")
        return self

    def public_view(self) -> dict:
        # config echo never includes the auth token
        return {
            "adapt": self.adapt,
            "optimizer": self.optimizer,
            "learning_rate": self.learning_rate,
            "beam_size": self.beam_size,
            "max_sessions": self.max_sessions,
            "auth": self.auth_token is not None,
        }


class ApiError(Exception):
    def __init__(self, status: int, error: str, detail: str):
        super().__init__(detail)
        self.status = status
        self.error = error
        self.detail = detail

    def body(self) -> dict:
        return {"error": self.error, "detail": self.detail}


class ModelStore:
    """Versioned model snapshots with single-writer atomic replacement."""

    def __init__(self, engine: Engine):
        self._engine = engine
        self._version = 0
        self._swap = threading.Lock()    # guards the (engine, version) pair
        self._writer = threading.Lock()  # serializes updates

    def snapshot(self) -> tuple[Engine, int]:
        with self._swap:
            return self._engine, self._version

    def adapt(self, src_ids, tgt_ids, optimizer: OptimizerState,
              poison: bool = False) -> tuple[bool, int, float]:
        """One online update on a private copy, swapped in only on success.

        Returns (applied, version after, learning time ms). `poison`
        injects a non-finite weight into the working copy so the update
        must fail; the published model is untouched either way.
        """
        with self._writer:
            engine, _ = self.snapshot()
            params = engine.params.copy()
            if poison:
                name = sorted(params.arrays)[0]
                params.arrays[name][...] = np.nan
            t0 = time.perf_counter()
            applied = online_update(params, optimizer, list(src_ids),
                                    list(tgt_ids))
            lt_ms = (time.perf_counter() - t0) * 1000.0
            if not applied:
                with self._swap:
                    return False, self._version, lt_ms
            fresh = Engine(params, engine.merges, engine.src_vocab,
                           engine.tgt_vocab)
            with self._swap:
                self._engine = fresh
                self._version += 1
                return True, self._version, lt_ms


@dataclass
class SessionResource:
    record: object
    lock: threading.Lock = field(default_factory=threading.Lock)
    last_activity: float = field(default_factory=time.monotonic)

    def touch(self):
        self.last_activity = time.monotonic()


class Service:
    """Protocol logic, independent of the HTTP plumbing.

    Each handler returns (status, body dict); errors raise ApiError.
    """

    def __init__(self, engine: Engine, config: ServiceConfig):
        self.config = config.validate()
        self.store = ModelStore(engine)
        self.optimizer = OptimizerState(config.optimizer,
                                        config.learning_rate) \
            if config.adapt else None
        self.sessions: dict[str, SessionResource] = {}
        self._sessions_lock = threading.Lock()
        self.started = time.monotonic()
        self.fail_next_update = False

    # -- helpers --------------------------------------------------------------

    def _reap_expired(self):
        ttl = self.config.session_ttl_s
        now = time.monotonic()
        with self._sessions_lock:
            stale = [sid for sid, res in self.sessions.items()
                     if now - res.last_activity > ttl]
            for sid in stale:
                del self.sessions[sid]

    def _active_count(self) -> int:
        with self._sessions_lock:
            return sum(1 for res in self.sessions.values()
                       if res.record.status == ACTIVE)

    def _resource(self, session_id: str) -> SessionResource:
        with self._sessions_lock:
            res = self.sessions.get(session_id)
        if res is None:
            raise ApiError(404, "unknown_session",
                           f"no session {session_id!r}")
        return res

    def _session_body(self, record, version: int, **extra) -> dict:
        body = {
            "v": PROTOCOL_VERSION,
            "session_id": record.session_id,
            "state": record.status,
            "hypothesis": record.hypothesis_text,
            "keystrokes": record.keystrokes,
            "mouse_actions": record.mouse_actions,
            "constraint_chars": len(record.constraint.char_string()),
            "model_version": version,
        }
        body.update(extra)
        return body

    # -- handlers -------------------------------------------------------------

    def create_session(self, body: dict) -> tuple[int, dict]:
        self._reap_expired()
        source = body.get("source", "")
        if not isinstance(source, str) or not source.split():
            raise ApiError(400, "empty_source",
                           "body must carry a non-empty 'source' string")
        if self._active_count() >= self.config.max_sessions:
            raise ApiError(429, "too_many_sessions",
                           f"limit is {self.config.max_sessions} "
                           "concurrent sessions")
        engine, version = self.store.snapshot()
        try:
            record = start_session(engine, source.split(),
                                   self.config.beam_size,
                                   session_id=uuid.uuid4().hex)
        except (SessionError, EngineError) as exc:
            raise ApiError(400, "bad_source", str(exc))
        with self._sessions_lock:
            self.sessions[record.session_id] = SessionResource(record)
        return 201, self._session_body(record, version)

    def post_feedback(self, session_id: str, body: dict) -> tuple[int, dict]:
        res = self._resource(session_id)
        if not res.lock.acquire(blocking=False):
            raise ApiError(409, "busy",
                           "another request is mutating this session")
        try:
            record = res.record
            if record.status != ACTIVE:
                raise ApiError(409, "session_closed",
                               "session already accepted")
            kind = body.get("kind", "char")
            position = body.get("position")
            text = body.get("text")
            if kind not in ("char", "word") or not isinstance(position, int) \
                    or not isinstance(text, str):
                raise ApiError(422, "bad_feedback",
                               "need kind in {char,word}, integer position, "
                               "string text")
            engine, version = self.store.snapshot()
            t0 = time.perf_counter()
            try:
                if kind == "char":
                    apply_char_feedback(engine, record, position, text)
                else:
                    apply_word_feedback(engine, record, position, text)
            except (SessionError, ConstraintError, EngineError) as exc:
                raise ApiError(422, "rejected_feedback", str(exc))
            rt_ms = (time.perf_counter() - t0) * 1000.0
            res.touch()
            return 200, self._session_body(record, version, rt_ms=rt_ms)
        finally:
            res.lock.release()

    def post_accept(self, session_id: str, body: dict) -> tuple[int, dict]:
        res = self._resource(session_id)
        if not res.lock.acquire(blocking=False):
            raise ApiError(409, "busy",
                           "another request is mutating this session")
        try:
            record = res.record
            if record.status != ACTIVE:
                raise ApiError(409, "session_closed",
                               "session already accepted")
            at_char = body.get("at_char")
            if at_char is not None and not isinstance(at_char, int):
                raise ApiError(422, "bad_accept", "at_char must be an integer")
            engine, version = self.store.snapshot()
            try:
                record, pair = accept_hypothesis(engine, record,
                                                 at_char=at_char)
            except SessionError as exc:
                raise ApiError(422, "bad_accept", str(exc))
            adapted, lt_ms = False, 0.0
            if self.config.adapt:
                poison = self.fail_next_update
                self.fail_next_update = False
                src_ids, tgt_ids = pair
                adapted, version, lt_ms = self.store.adapt(
                    src_ids, tgt_ids, self.optimizer, poison=poison)
                if not adapted:
                    raise ApiError(500, "update_failed",
                                   "online update was rejected; "
                                   "model left unchanged")
            res.touch()
            return 200, self._session_body(
                record, version, final_text=record.hypothesis_text,
                adapted=adapted, lt_ms=lt_ms)
        finally:
            res.lock.release()

    def get_session(self, session_id: str) -> tuple[int, dict]:
        res = self._resource(session_id)
        _, version = self.store.snapshot()
        return 200, self._session_body(res.record, version)

    def get_status(self) -> tuple[int, dict]:
        _, version = self.store.snapshot()
        return 200, {
            "v": PROTOCOL_VERSION,
            "model_version": version,
            "active_sessions": self._active_count(),
            "uptime_s": time.monotonic() - self.started,
            "config": self.config.public_view(),
        }


def _route(service: Service, method: str, path: str,
           body: dict) -> tuple[int, dict]:
    parts = [p for p in path.split("/") if p]
    if parts[:1] != ["v1"]:
        raise ApiError(404, "unknown_route", path)
    rest = parts[1:]
    if rest == ["sessions"] and method == "POST":
        return service.create_session(body)
    if rest == ["status"] and method == "GET":
        return service.get_status()
    if len(rest) == 2 and rest[0] == "sessions" and method == "GET":
        return service.get_session(rest[1])
    if len(rest) == 3 and rest[0] == "sessions" and method == "POST":
        if rest[2] == "feedback":
            return service.post_feedback(rest[1], body)
        if rest[2] == "accept":
            return service.post_accept(rest[1], body)
    raise ApiError(404, "unknown_route", path)


def make_handler(service: Service):
    ui_dir = Path(service.config.ui_dir).resolve() \
        if service.config.ui_dir else None

    class Handler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"

        def log_message(self, fmt, *args):
            log.debug("http: " + fmt, *args)

        def _send_json(self, status: int, body: dict):
            payload = json.dumps(body).encode("utf-8")
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(payload)))
            self.send_header("Access-Control-Allow-Origin", "*")
            self.end_headers()
            self.wfile.write(payload)

        def _authorized(self) -> bool:
            token = service.config.auth_token
            if token is None:
                return True
            got = self.headers.get("Authorization", "")
            return got == f"Bearer {token}"

        def _read_body(self) -> dict:
            length = int(self.headers.get("Content-Length") or 0)
            if length > MAX_BODY_BYTES:
                raise ApiError(413, "body_too_large",
                               f"limit {MAX_BODY_BYTES} bytes")
            if length == 0:
                return {}
            raw = self.rfile.read(length)
            try:
                body = json.loads(raw.decode("utf-8"))
            except (UnicodeDecodeError, json.JSONDecodeError):
                raise ApiError(400, "bad_json", "body is not valid JSON")
            if not isinstance(body, dict):
                raise ApiError(400, "bad_json", "body must be a JSON object")
            return body

        def _api(self, method: str):
            try:
                if not self._authorized():
                    raise ApiError(401, "unauthorized",
                                   "missing or wrong bearer token")
                body = self._read_body() if method == "POST" else {}
                status, out = _route(service, method, self.path, body)
            except ApiError as exc:
                status, out = exc.status, exc.body()
            except Exception as exc:  # pragma: no cover - last resort
                log.exception("unhandled service error")
                status, out = 500, {"error": "internal",
                                    "detail": str(exc)}
            self._send_json(status, out)

        def _serve_static(self):
            rel = self.path.lstrip("/") or "index.html"
            target = (ui_dir / rel).resolve()
            if not str(target).startswith(str(ui_dir)) \
                    or not target.is_file():
                self._send_json(404, {"error": "not_found",
                                      "detail": self.path})
                return
            data = target.read_bytes()
            ctype = mimetypes.guess_type(str(target))[0] \
                or "application/octet-stream"
            self.send_response(200)
            self.send_header("Content-Type", ctype)
            self.send_header("Content-Length", str(len(data)))
            self.end_headers()
            self.wfile.write(data)

        def do_GET(self):
            if self.path.startswith("/v1/"):
                self._api("GET")
            elif ui_dir is not None:
                self._serve_static()
            else:
                self._send_json(404, {"error": "not_found",
                                      "detail": self.path})

        def do_POST(self):
            self._api("POST")

        def do_OPTIONS(self):
            self.send_response(204)
            self.send_header("Access-Control-Allow-Origin", "*")
            self.send_header("Access-Control-Allow-Methods",
                             "GET, POST, OPTIONS")
            self.send_header("Access-Control-Allow-Headers",
                             "Content-Type, Authorization")
            self.send_header("Content-Length", "0")
            self.end_headers()

    return Handler


class ServiceServer:
    """Threaded HTTP server wrapper with clean startup and shutdown."""

    def __init__(self, service: Service):
        self.service = service
        self.httpd = ThreadingHTTPServer(
            (service.config.host, service.config.port), make_handler(service))
        self.httpd.daemon_threads = True
        self._thread: threading.Thread | None = None

    @property
    def address(self) -> str:
        host, port = self.httpd.server_address[:2]
        return f"http://{host}:{port}"

    def start(self):
        self._thread = threading.Thread(target=self.httpd.serve_forever,
                                        name="imtforge-service", daemon=True)
        self._thread.start()
        return self

    def stop(self):
        self.httpd.shutdown()
        self.httpd.server_close()
        if self._thread is not None:
            self._thread.join(timeout=5)

    def serve_forever(self):
        try:
            self.httpd.serve_forever()
        finally:
            self.httpd.server_close()


def serve(engine: Engine, config: ServiceConfig) -> ServiceServer:
    """Build the service and bind its socket; caller starts or runs it."""
    return ServiceServer(Service(engine, config))
