"""JSON API for the annotation UI and interactive suggestion.

A single-process stdlib HTTP server: chord palette, prompt set, top-k
next-chord suggestions from a loaded language model checkpoint, and
validated annotation submissions appended to one JSONL file. Annotation
writes are serialized through a lock; everything else is read-only state,
so concurrent requests are safe.
"""

from __future__ import annotations

import dataclasses
import json
import threading
import urllib.parse
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Optional

from . import chords as chord_core
from . import evaluation
from .corpus import FormatError
from .lm import LMModel, predict_next

SUGGEST_DEFAULT_K = 4

_CONTENT_TYPES = {
    ".html": "text/html; charset=utf-8",
    ".js": "text/javascript; charset=utf-8",
    ".css": "text/css; charset=utf-8",
    ".json": "application/json; charset=utf-8",
    ".map": "application/json; charset=utf-8",
    ".svg": "image/svg+xml",
    ".png": "image/png",
    ".ico": "image/x-icon",
}


def palette_entries() -> list[dict]:
    """The 48 audition chords with their pitch classes."""
    entries = []
    for token in chord_core.annotation_palette():
        chord = chord_core.parse_chord(token)
        entries.append({"chord": token, "pitch_classes": chord_core.pitch_classes(chord)})
    return entries


def load_prompts(path) -> list[dict]:
    """Prompt file: JSON array of {prompt_id, progression} objects.

    Progressions must use the annotation lengths and parseable tokens, since
    they anchor the records the UI submits.
    """
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    if not isinstance(data, list):
        raise FormatError("prompt file must be a JSON array")
    prompts = []
    seen = set()
    for i, obj in enumerate(data):
        where = f"prompt {i}"
        if not isinstance(obj, dict) or "prompt_id" not in obj or "progression" not in obj:
            raise FormatError(f"{where}: need prompt_id and progression")
        progression = obj["progression"]
        if (
            not isinstance(progression, list)
            or len(progression) not in evaluation.PROMPT_LENGTHS
            or not all(isinstance(t, str) for t in progression)
        ):
            raise FormatError(
                f"{where}: progression must be a chord list of length "
                f"{evaluation.PROMPT_LENGTHS[0]} or {evaluation.PROMPT_LENGTHS[1]}"
            )
        for token in progression:
            try:
                chord_core.parse_chord(token)
            except chord_core.ParseError as exc:
                raise FormatError(f"{where}: bad chord {token!r}") from exc
        prompt_id = str(obj["prompt_id"])
        if prompt_id in seen:
            raise FormatError(f"{where}: duplicate prompt_id {prompt_id!r}")
        seen.add(prompt_id)
        prompts.append({"prompt_id": prompt_id, "progression": list(progression)})
    return prompts


class ServerState:
    """Shared state: model, prompts, annotation sink, optional static root."""

    def __init__(
        self,
        annotations_path,
        model: Optional[LMModel] = None,
        prompts: Optional[list[dict]] = None,
        static_dir=None,
    ):
        self.annotations_path = Path(annotations_path)
        self.model = model
        self.prompts = list(prompts or [])
        self.static_dir = Path(static_dir).resolve() if static_dir else None
        self.write_lock = threading.Lock()
        self.seen: set[tuple[str, str]] = set()
        if self.annotations_path.exists():
            for record in evaluation.load_annotations(self.annotations_path):
                self.seen.add((record.annotator_id, record.prompt_id))

    def store(self, record: evaluation.AnnotationRecord) -> bool:
        """Append one validated record; False when it is a duplicate."""
        key = (record.annotator_id, record.prompt_id)
        with self.write_lock:
            if key in self.seen:
                return False
            doc = dataclasses.asdict(record)
            doc["progression"] = list(doc["progression"])
            doc["alternatives"] = list(doc["alternatives"])
            with open(self.annotations_path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n")
            self.seen.add(key)
        return True


class ApiHandler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"

    @property
    def state(self) -> ServerState:
        return self.server.state

    def log_message(self, format, *args):  # quiet by default
        pass

    def _send_json(self, status: int, payload) -> None:
        body = json.dumps(payload).encode()
        self.send_response(status)
        self.send_header("Content-Type", "application/json; charset=utf-8")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _send_error_json(self, status: int, message: str) -> None:
        self._send_json(status, {"error": message})

    def do_GET(self):
        parsed = urllib.parse.urlsplit(self.path)
        route = parsed.path
        if route == "/healthz":
            self._send_json(200, {"status": "ok", "model_loaded": self.state.model is not None})
        elif route == "/api/palette":
            self._send_json(200, palette_entries())
        elif route == "/api/prompts":
            self._send_json(200, self.state.prompts)
        elif route == "/api/suggest":
            self._suggest(urllib.parse.parse_qs(parsed.query))
        elif route.startswith("/api/"):
            self._send_error_json(404, f"no such endpoint: {route}")
        else:
            self._static(route)

    def do_POST(self):
        if urllib.parse.urlsplit(self.path).path != "/api/annotations":
            self._send_error_json(404, "POST is only supported on /api/annotations")
            return
        try:
            length = int(self.headers.get("Content-Length", "0"))
        except ValueError:
            length = 0
        try:
            obj = json.loads(self.rfile.read(length).decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError):
            self._send_error_json(400, "body must be a JSON object")
            return
        try:
            record = evaluation.parse_record(obj)
        except FormatError as exc:
            self._send_error_json(400, str(exc))
            return
        if self.state.store(record):
            self._send_json(201, {"status": "stored"})
        else:
            self._send_error_json(
                409,
                f"annotator {record.annotator_id!r} already answered "
                f"prompt {record.prompt_id!r}",
            )

    def _suggest(self, query: dict) -> None:
        if self.state.model is None:
            self._send_error_json(503, "no model loaded")
            return
        raw = query.get("progression", [""])[0]
        tokens = [t.strip() for t in raw.split(",") if t.strip()]
        if not tokens:
            self._send_error_json(400, "progression query parameter is required")
            return
        for token in tokens:
            try:
                chord_core.parse_chord(token)
            except chord_core.ParseError:
                self._send_error_json(400, f"malformed chord {token!r}")
                return
        try:
            k = int(query.get("k", [str(SUGGEST_DEFAULT_K)])[0])
        except ValueError:
            self._send_error_json(400, "k must be an integer")
            return
        if k < 1:
            self._send_error_json(400, "k must be positive")
            return
        ranked = predict_next(self.state.model, tokens, k)
        self._send_json(200, {
            "progression": tokens,
            "suggestions": [
                {"chord": chord, "probability": prob} for chord, prob in ranked
            ],
        })

    def _static(self, route: str) -> None:
        if self.state.static_dir is None:
            self._send_error_json(404, "no static content configured")
            return
        relative = route.lstrip("/") or "index.html"
        target = (self.state.static_dir / relative).resolve()
        if not str(target).startswith(str(self.state.static_dir)) or not target.is_file():
            self._send_error_json(404, f"not found: {route}")
            return
        body = target.read_bytes()
        self.send_response(200)
        content_type = _CONTENT_TYPES.get(target.suffix, "application/octet-stream")
        self.send_header("Content-Type", content_type)
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)


def make_server(state: ServerState, host: str = "127.0.0.1", port: int = 8040) -> ThreadingHTTPServer:
    server = ThreadingHTTPServer((host, port), ApiHandler)
    server.state = state
    return server
