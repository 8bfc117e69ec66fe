"""
Classifier adapter for an external process speaking newline-delimited JSON.

Wire protocol (one JSON object per line on the child's stdin/stdout):

    handshake (child → us): {"protocol": "rexl-clf/1", "classes": C,
                             "height": H, "width": W, "channels": Ch}
    request   (us → child): {"id": n, "pixels": "<base64 little-endian
                             float32, row-major H·W·C>"}
    response  (child → us): {"id": n, "scores": [C floats]}

Each adapter owns one child and one in-order channel; requests are
serialized with a lock. Use `SubprocessPool` for parallel throughput.
"""

from __future__ import annotations

import base64
import json
import logging
import os
import subprocess
import threading
import time
from collections import deque
from queue import Empty, Queue
from typing import Any, Deque, Dict, List, Optional, Sequence

import numpy as np

from ..errors import ContractViolation, ProcessExited, ProtocolError, TransportTimeout
from ..models import ClassScores, ImageTensor, ScoreKind
from .base import BaseClassifier

logger = logging.getLogger(__name__)

PROTOCOL = "rexl-clf/1"
DEFAULT_TIMEOUT = 30.0


def default_timeout() -> float:
    """Request timeout in seconds, overridable via REXL_SUBPROCESS_TIMEOUT."""
    raw = os.environ.get("REXL_SUBPROCESS_TIMEOUT")
    return float(raw) if raw else DEFAULT_TIMEOUT


def encode_pixels(image: ImageTensor) -> str:
    return base64.b64encode(image.data.astype("<f4").tobytes()).decode("ascii")


class SubprocessClassifier(BaseClassifier):
    """
    Scores images by delegating to a child process.

    Transport failures surface as TransportTimeout, ProtocolError or
    ProcessExited; scores that break the ClassScores invariants raise
    ScoreValidationError. A timed-out child is killed, since its channel
    can no longer be trusted to stay in order.
    """

    def __init__(
        self,
        command: Sequence[str],
        timeout: Optional[float] = None,
        kind: Optional[ScoreKind] = None,
        env: Optional[Dict[str, str]] = None,
    ):
        self.command = list(command)
        self.timeout = float(timeout) if timeout is not None else default_timeout()
        self._proc = subprocess.Popen(
            self.command,
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            stderr=subprocess.PIPE,
            text=True,
            bufsize=1,
            env=env,
        )
        if self._proc.stdin is None or self._proc.stdout is None or self._proc.stderr is None:
            raise ProcessExited("failed to open stdio pipes for classifier process")
        self._next_id = 1
        self._lock = threading.Lock()
        self._lines: Queue = Queue()
        self._stderr_lines: Deque[str] = deque(maxlen=50)
        self._stdout_closed = threading.Event()
        self._reader = threading.Thread(target=self._read_loop, daemon=True)
        self._stderr_reader = threading.Thread(target=self._read_stderr_loop, daemon=True)
        self._reader.start()
        self._stderr_reader.start()
        self.calls = 0

        try:
            hello = self._read_message("handshake")
            self._check_handshake(hello)
        except Exception:
            self.close()
            raise
        self.num_classes = int(hello["classes"])
        self.input_shape = (int(hello["height"]), int(hello["width"]), int(hello["channels"]))
        self.kind = kind or hello.get("kind", "multilabel")
        logger.info(
            "classifier process %s ready: %d classes, input %s",
            self.command[0], self.num_classes, self.input_shape,
        )

    @staticmethod
    def _check_handshake(hello: Dict[str, Any]) -> None:
        if hello.get("protocol") != PROTOCOL:
            raise ProtocolError(f"expected protocol {PROTOCOL!r}, got {hello.get('protocol')!r}")
        for key in ("classes", "height", "width", "channels"):
            value = hello.get(key)
            if not isinstance(value, int) or isinstance(value, bool) or value < 1:
                raise ProtocolError(f"handshake field {key!r} must be a positive integer, got {value!r}")
        if hello.get("kind", "multilabel") not in ("softmax", "multilabel"):
            raise ProtocolError(f"unknown score kind {hello.get('kind')!r}")

    def _read_loop(self) -> None:
        try:
            for line in self._proc.stdout:
                line = line.strip()
                if line:
                    self._lines.put(line)
        finally:
            self._stdout_closed.set()

    def _read_stderr_loop(self) -> None:
        for line in self._proc.stderr:
            line = line.strip()
            if line:
                self._stderr_lines.append(line)

    def _stderr_summary(self) -> str:
        lines = list(self._stderr_lines)
        return " | ".join(lines) if lines else "<no stderr>"

    def _assert_running(self, context: str) -> None:
        code = self._proc.poll()
        if code is not None:
            raise ProcessExited(
                f"classifier process exited ({code}) during {context}. stderr: {self._stderr_summary()}"
            )

    def _read_message(self, context: str) -> Dict[str, Any]:
        deadline = time.monotonic() + self.timeout
        while True:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                self._kill()
                raise TransportTimeout(
                    f"no answer within {self.timeout:.1f}s during {context}. stderr: {self._stderr_summary()}"
                )
            try:
                line = self._lines.get(timeout=min(remaining, 0.1))
                break
            except Empty:
                if self._stdout_closed.is_set() and self._lines.empty():
                    try:
                        self._proc.wait(timeout=1)
                    except subprocess.TimeoutExpired:
                        pass
                    self._assert_running(context)
                    raise ProcessExited(f"classifier stdout closed during {context}")
        try:
            message = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ProtocolError(f"malformed JSON during {context}: {line[:200]!r}") from exc
        if not isinstance(message, dict):
            raise ProtocolError(f"expected a JSON object during {context}")
        return message

    def score(self, image: ImageTensor, class_filter: Optional[Sequence[int]] = None) -> ClassScores:
        if image.shape != tuple(self.input_shape):
            raise ContractViolation(
                f"image shape {image.shape} does not match classifier input {tuple(self.input_shape)}"
            )
        return self.subprocess_score(image, class_filter)

    def _score(self, image: ImageTensor) -> ClassScores:
        return self.subprocess_score(image)

    def subprocess_score(
        self, image: ImageTensor, class_filter: Optional[Sequence[int]] = None
    ) -> ClassScores:
        """One request line out, one response line in; scores validated."""
        with self._lock:
            self._assert_running("score (pre-send)")
            request_id = self._next_id
            self._next_id += 1
            request: Dict[str, Any] = {"id": request_id, "pixels": encode_pixels(image)}
            if class_filter is not None:
                request["classes"] = [int(c) for c in class_filter]
            try:
                self._proc.stdin.write(json.dumps(request) + "\n")
                self._proc.stdin.flush()
            except (BrokenPipeError, OSError) as exc:
                raise ProcessExited(f"failed to send request {request_id}") from exc
            response = self._read_message(f"score request {request_id}")
            self.calls += 1
            logger.debug("request %d answered", request_id)
        if response.get("id") != request_id:
            raise ProtocolError(f"response id {response.get('id')!r} does not match request {request_id}")
        scores = response.get("scores")
        if not isinstance(scores, list) or len(scores) != self.num_classes:
            raise ProtocolError(f"response must carry {self.num_classes} scores, got {scores!r}")
        if not all(isinstance(s, (int, float)) and not isinstance(s, bool) for s in scores):
            raise ProtocolError("scores must be numbers")
        return ClassScores(np.asarray(scores, dtype=np.float64), self.kind)

    def _kill(self) -> None:
        if self._proc.poll() is None:
            self._proc.kill()
            try:
                self._proc.wait(timeout=3)
            except subprocess.TimeoutExpired:
                pass

    def close(self) -> None:
        if self._proc.poll() is None:
            try:
                self._proc.stdin.close()
            except OSError:
                pass
            self._proc.terminate()
            try:
                self._proc.wait(timeout=3)
            except subprocess.TimeoutExpired:
                self._proc.kill()


class SubprocessPool(BaseClassifier):
    """A pool of child processes; each request borrows one idle child."""

    def __init__(self, command: Sequence[str], size: int = 1, timeout: Optional[float] = None):
        if size < 1:
            raise ContractViolation("pool size must be ≥ 1")
        self.children: List[SubprocessClassifier] = []
        try:
            for _ in range(size):
                self.children.append(SubprocessClassifier(command, timeout=timeout))
        except Exception:
            self.close()
            raise
        first = self.children[0]
        self.num_classes = first.num_classes
        self.input_shape = first.input_shape
        self.kind = first.kind
        self._idle: Queue = Queue()
        for child in self.children:
            self._idle.put(child)

    def _score(self, image: ImageTensor) -> ClassScores:
        child = self._idle.get()
        try:
            return child.score(image)
        finally:
            self._idle.put(child)

    def close(self) -> None:
        for child in self.children:
            child.close()
