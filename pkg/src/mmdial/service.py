"""HTTP annotation service: serves sampled instances, persists scores.

Answers append to a flat CSV identical to the calibration input format, so
the headless path and the service path share one file. Every accepted
answer is flushed and fsynced before the response goes out, and the log is
replayed on startup, so acknowledged rows survive restarts.
"""

from __future__ import annotations

import csv
import io
import json
import mimetypes
import os
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Sequence
from urllib.parse import parse_qs, urlparse

from .builder import Instance
from .calibrate import ANNOTATION_FIELDS, SCORE_RANGES, load_annotations

QUESTION_SCHEMA = {"q1": "3-point", "q2": "3-point", "q3": "5-point", "q4": "choice-4"}

DEFAULT_BATCH_LIMIT = 10


class DuplicateAnswerError(ValueError):
    """The (instance, annotator) pair was already answered."""


class UnknownInstanceError(KeyError):
    """The answer references an instance outside the served sample."""


class AnnotationLog:
    """Append-only CSV answer log with single-writer serialization."""

    def __init__(self, path) -> None:
        self.path = Path(path)
        self._lock = threading.Lock()
        self._answered: set[tuple[str, str]] = set()
        if self.path.exists():
            for record in load_annotations(self.path):
                self._answered.add((record.instance_id, record.annotator_id))
        else:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.path, "w", encoding="utf-8", newline="") as fh:
                csv.writer(fh).writerow(ANNOTATION_FIELDS)
                fh.flush()
                os.fsync(fh.fileno())
        self._fh = open(self.path, "a", encoding="utf-8", newline="")

    def answered_by(self, annotator_id: str) -> set[str]:
        with self._lock:
            return {iid for iid, aid in self._answered if aid == annotator_id}

    def append(self, instance_id: str, annotator_id: str,
               q1: int, q2: int, q3: int, q4: int | None) -> None:
        with self._lock:
            key = (instance_id, annotator_id)
            if key in self._answered:
                raise DuplicateAnswerError(
                    f"{annotator_id!r} already answered {instance_id!r}"
                )
            buf = io.StringIO()
            csv.writer(buf).writerow(
                [instance_id, annotator_id, q1, q2, q3, "" if q4 is None else q4]
            )
            self._fh.write(buf.getvalue())
            self._fh.flush()
            os.fsync(self._fh.fileno())
            self._answered.add(key)

    def close(self) -> None:
        self._fh.close()


class AnnotationService:
    """Request handling for one served sample set, transport-agnostic."""

    def __init__(self, instances: Sequence[Instance], log: AnnotationLog,
                 image_base: str = "") -> None:
        if not instances:
            raise ValueError("no instances to serve")
        self.instances = tuple(instances)
        self.by_id = {inst.instance_id: inst for inst in self.instances}
        self.log = log
        self.image_base = image_base

    def _item(self, inst: Instance) -> dict:
        return {
            "instance_id": inst.instance_id,
            "target": inst.target_sentence,
            "context": [{"speaker": t.speaker, "text": t.text} for t in inst.context_turns],
            "image_ref": f"{self.image_base}{inst.image_id}",
            "questions": dict(QUESTION_SCHEMA),
        }

    def batch(self, annotator_id: str, limit: int = DEFAULT_BATCH_LIMIT) -> dict:
        """First ``limit`` instances this annotator has not answered, in sample order."""
        if not annotator_id:
            raise ValueError("annotator id is required")
        if limit < 1:
            raise ValueError("limit must be >= 1")
        done = self.log.answered_by(annotator_id)
        items = [
            self._item(inst) for inst in self.instances if inst.instance_id not in done
        ][:limit]
        return {"items": items}

    def submit(self, payload: dict) -> None:
        if not isinstance(payload, dict):
            raise ValueError("body must be a JSON object")
        missing = [k for k in ("instance_id", "annotator_id", "q1", "q2", "q3")
                   if k not in payload]
        if missing:
            raise ValueError(f"missing fields: {', '.join(missing)}")
        instance_id = payload["instance_id"]
        annotator_id = payload["annotator_id"]
        if not isinstance(instance_id, str) or not isinstance(annotator_id, str) \
                or not instance_id or not annotator_id:
            raise ValueError("instance_id and annotator_id must be non-empty strings")
        if instance_id not in self.by_id:
            raise UnknownInstanceError(instance_id)
        scores: dict[str, int | None] = {}
        for question in ("q1", "q2", "q3", "q4"):
            value = payload.get(question)
            if question == "q4" and value is None:
                scores[question] = None
                continue
            low, high = SCORE_RANGES[question]
            if not isinstance(value, int) or isinstance(value, bool) \
                    or not low <= value <= high:
                raise ValueError(f"{question} must be an integer in [{low},{high}]")
            scores[question] = value
        self.log.append(instance_id, annotator_id,
                        scores["q1"], scores["q2"], scores["q3"], scores["q4"])

    def progress(self, annotator_id: str) -> dict:
        if not annotator_id:
            raise ValueError("annotator id is required")
        done = self.log.answered_by(annotator_id)
        answered = sum(1 for inst in self.instances if inst.instance_id in done)
        return {"answered": answered, "total": len(self.instances)}


def _make_handler(service: AnnotationService, ui_dir: Path | None):
    class Handler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"

        def log_message(self, fmt, *args):  # keep test output quiet
            pass

        def _send_json(self, status: int, payload: dict) -> None:
            body = json.dumps(payload).encode("utf-8")
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

        def _send_error(self, status: int, message: str) -> None:
            self._send_json(status, {"error": message})

        def do_GET(self) -> None:
            url = urlparse(self.path)
            query = parse_qs(url.query)
            try:
                if url.path == "/api/batch":
                    annotator = (query.get("annotator") or [""])[0]
                    limit = int((query.get("limit") or [str(DEFAULT_BATCH_LIMIT)])[0])
                    self._send_json(200, service.batch(annotator, limit))
                elif url.path == "/api/progress":
                    annotator = (query.get("annotator") or [""])[0]
                    self._send_json(200, service.progress(annotator))
                else:
                    self._serve_static(url.path)
            except ValueError as exc:
                self._send_error(422, str(exc))

        def _serve_static(self, path: str) -> None:
            if ui_dir is None:
                if path == "/":
                    self._send_json(200, {
                        "service": "mmdial annotation",
                        "endpoints": ["/api/batch", "/api/answer", "/api/progress"],
                        "ui": False,
                    })
                else:
                    self._send_error(404, "not found")
                return
            rel = path.lstrip("/") or "index.html"
            target = (ui_dir / rel).resolve()
            if not str(target).startswith(str(ui_dir.resolve()) + os.sep) \
                    and target != ui_dir.resolve():
                self._send_error(404, "not found")
                return
            if target.is_dir():
                target = target / "index.html"
            if not target.is_file():
                self._send_error(404, "not found")
                return
            ctype = mimetypes.guess_type(str(target))[0] or "application/octet-stream"
            body = target.read_bytes()
            self.send_response(200)
            self.send_header("Content-Type", ctype)
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

        def do_POST(self) -> None:
            url = urlparse(self.path)
            if url.path != "/api/answer":
                self._send_error(404, "not found")
                return
            try:
                length = int(self.headers.get("Content-Length", "0"))
                payload = json.loads(self.rfile.read(length).decode("utf-8"))
            except (ValueError, json.JSONDecodeError):
                self._send_error(400, "body is not valid JSON")
                return
            try:
                service.submit(payload)
            except DuplicateAnswerError as exc:
                self._send_error(409, str(exc))
            except UnknownInstanceError as exc:
                self._send_error(404, f"unknown instance {exc.args[0]!r}")
            except ValueError as exc:
                self._send_error(422, str(exc))
            else:
                self._send_json(200, {"accepted": True})

    return Handler


def make_server(service: AnnotationService, port: int,
                ui_dir=None) -> ThreadingHTTPServer:
    """Bind a threading HTTP server for ``service``; port 0 picks a free port."""
    directory = Path(ui_dir) if ui_dir else None
    if directory is not None and not directory.is_dir():
        raise ValueError(f"UI directory {directory} does not exist")
    handler = _make_handler(service, directory)
    return ThreadingHTTPServer(("127.0.0.1", port), handler)
