"""Subprocess adapter protocol for external neural tools.

Denoisers, ASR, dialect classifiers, synthesizers, and speaker embedders
run as child processes speaking newline-delimited JSON on stdin/stdout:
one envelope per line with fields ``request_id``, ``kind``, ``payload``.
A response echoes the request_id; a payload containing an ``error`` key
marks that single request failed. This wire format is the compatibility
contract for wrapping real models.

Request payloads by kind:
  denoise     {"audio_path": str}            -> {"audio_path": str}
  asr         {"audio_path": str}            -> {"text": str}
  classify    {"transcript": str}            -> {"scores": {label: conf}}
  synthesize  {"text", "reference_audio_path",
               "language", "dialect"?}       -> {"audio_path": str}
  embed       {"audio_path": str}            -> {"vector": [float, ...]}
"""

from __future__ import annotations

import json
import logging
import queue
import subprocess
import threading
import time
from dataclasses import dataclass, field
from typing import Mapping, Sequence

log = logging.getLogger(__name__)

ADAPTER_KINDS = ("denoise", "asr", "classify", "synthesize", "embed")


class AdapterError(RuntimeError):
    """Base class for adapter invocation problems."""


class AdapterSpawnError(AdapterError):
    """The adapter command could not be started at all.

    This is a configuration error (missing binary, bad permissions) and is
    distinct from per-request failures, which never raise.
    """


@dataclass(frozen=True)
class AdapterSpec:
    """How to run one external tool."""

    name: str
    kind: str
    command: tuple[str, ...]
    timeout_s: float = 60.0
    batch_size: int = 32

    def __post_init__(self):
        if self.kind not in ADAPTER_KINDS:
            raise ValueError(f"unknown adapter kind {self.kind!r}")
        if not self.command:
            raise ValueError("adapter command must be non-empty")
        object.__setattr__(self, "command", tuple(self.command))
        if self.timeout_s <= 0:
            raise ValueError("timeout_s must be > 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")

    @classmethod
    def from_dict(cls, data: Mapping) -> "AdapterSpec":
        return cls(
            name=str(data["name"]),
            kind=str(data["kind"]),
            command=tuple(str(c) for c in data["command"]),
            timeout_s=float(data.get("timeout_s", 60.0)),
            batch_size=int(data.get("batch_size", 32)),
        )

    def to_dict(self) -> dict:
        return {"name": self.name, "kind": self.kind,
                "command": list(self.command), "timeout_s": self.timeout_s,
                "batch_size": self.batch_size}


@dataclass(frozen=True)
class AdapterEnvelope:
    """One request or response on the wire."""

    request_id: str
    kind: str
    payload: dict = field(default_factory=dict)

    def to_line(self) -> str:
        return json.dumps(
            {"request_id": self.request_id, "kind": self.kind,
             "payload": self.payload},
            ensure_ascii=False, sort_keys=True)

    @classmethod
    def from_line(cls, line: str) -> "AdapterEnvelope":
        data = json.loads(line)
        if not isinstance(data, dict):
            raise ValueError("envelope must be a JSON object")
        payload = data.get("payload", {})
        if not isinstance(payload, dict):
            raise ValueError("envelope payload must be an object")
        return cls(request_id=str(data["request_id"]),
                   kind=str(data["kind"]), payload=payload)


@dataclass(frozen=True)
class AdapterResult:
    """Outcome of a single request: a response envelope or a failure."""

    request_id: str
    ok: bool
    payload: dict | None = None
    error: str | None = None


@dataclass(frozen=True)
class ClassifierVerdict:
    """One dialect classifier's confidence map for a segment."""

    classifier_name: str
    scores: dict[str, float]

    def __post_init__(self):
        if not self.scores:
            raise ValueError("verdict scores must be non-empty")
        for label, conf in self.scores.items():
            if not (isinstance(conf, (int, float)) and 0.0 <= conf <= 1.0):
                raise ValueError(
                    f"confidence for {label!r} outside [0, 1]: {conf!r}")


class _AdapterProcess:
    """A live child process with a background stdout reader."""

    def __init__(self, spec: AdapterSpec):
        try:
            self.proc = subprocess.Popen(
                spec.command,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=subprocess.DEVNULL,
                text=True,
                encoding="utf-8",
            )
        except OSError as err:
            raise AdapterSpawnError(
                f"cannot start adapter {spec.name!r} "
                f"({' '.join(spec.command)}): {err}") from err
        self.lines: queue.Queue[str | None] = queue.Queue()
        self._reader = threading.Thread(target=self._drain, daemon=True)
        self._reader.start()

    def _drain(self):
        for line in self.proc.stdout:
            self.lines.put(line)
        self.lines.put(None)  # EOF sentinel

    def send(self, lines: Sequence[str]) -> bool:
        try:
            self.proc.stdin.write("".join(l + "\n" for l in lines))
            self.proc.stdin.flush()
            return True
        except (BrokenPipeError, OSError, ValueError):
            return False

    def kill(self):
        try:
            self.proc.kill()
        except OSError:
            pass
        self.proc.wait()

    def close(self):
        try:
            self.proc.stdin.close()
        except (BrokenPipeError, OSError, ValueError):
            pass
        try:
            self.proc.wait(timeout=5)
        except subprocess.TimeoutExpired:
            self.kill()


def _chunks(items: Sequence, size: int):
    for i in range(0, len(items), size):
        yield items[i:i + size]


def invoke_adapter(adapter: AdapterSpec,
                   requests: Sequence[AdapterEnvelope]) -> list[AdapterResult]:
    """Run a batch of requests through one adapter process.

    Results come back in request order regardless of the adapter's reply
    order. Each request either succeeds or carries an individual failure
    record; timeouts and crashes fail only the affected batch, and the
    process is respawned for the next one. Only a command that cannot be
    started at all raises AdapterSpawnError.
    """
    if not requests:
        return []
    outcomes: dict[str, AdapterResult] = {}
    process: _AdapterProcess | None = _AdapterProcess(adapter)  # may raise

    try:
        for batch in _chunks(list(requests), adapter.batch_size):
            if process is None:
                try:
                    process = _AdapterProcess(adapter)
                except AdapterSpawnError as err:
                    for env in batch:
                        outcomes[env.request_id] = AdapterResult(
                            env.request_id, ok=False, error=str(err))
                    continue
            pending = {env.request_id for env in batch}
            if not process.send([env.to_line() for env in batch]):
                for rid in pending:
                    outcomes[rid] = AdapterResult(
                        rid, ok=False, error="adapter pipe closed")
                process.kill()
                process = None
                continue

            deadline = time.monotonic() + adapter.timeout_s
            eof = False
            while pending:
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    break
                try:
                    line = process.lines.get(timeout=remaining)
                except queue.Empty:
                    break
                if line is None:
                    eof = True
                    break
                line = line.strip()
                if not line:
                    continue
                try:
                    response = AdapterEnvelope.from_line(line)
                except (ValueError, KeyError) as err:
                    log.warning("adapter %s: malformed response line: %s",
                                adapter.name, err)
                    continue
                rid = response.request_id
                if rid not in pending:
                    log.warning("adapter %s: unexpected request_id %r",
                                adapter.name, rid)
                    continue
                pending.discard(rid)
                if "error" in response.payload:
                    outcomes[rid] = AdapterResult(
                        rid, ok=False, error=str(response.payload["error"]))
                else:
                    outcomes[rid] = AdapterResult(
                        rid, ok=True, payload=response.payload)

            if pending:
                reason = "adapter exited early" if eof else "adapter timeout"
                for rid in pending:
                    outcomes[rid] = AdapterResult(rid, ok=False, error=reason)
                process.kill()
                process = None
    finally:
        if process is not None:
            process.close()

    return [outcomes[env.request_id] for env in requests]


def classify_dialect(classifiers: Sequence[AdapterSpec],
                     transcript: str) -> list[ClassifierVerdict]:
    """Collect one verdict per responsive classifier for a transcript.

    Failed or unavailable classifiers are omitted and logged; an empty list
    means the segment stays unlabeled.
    """
    verdicts: list[ClassifierVerdict] = []
    for spec in classifiers:
        if spec.kind != "classify":
            raise ValueError(
                f"adapter {spec.name!r} has kind {spec.kind!r}, "
                "expected 'classify'")
        request = AdapterEnvelope(request_id="0", kind="classify",
                                  payload={"transcript": transcript})
        try:
            result = invoke_adapter(spec, [request])[0]
        except AdapterSpawnError as err:
            log.warning("classifier %s unavailable: %s", spec.name, err)
            continue
        verdict = _verdict_from_result(spec.name, result)
        if verdict is not None:
            verdicts.append(verdict)
    return verdicts


def classify_batch(classifiers: Sequence[AdapterSpec],
                   transcripts: Mapping[str, str],
                   ) -> dict[str, list[ClassifierVerdict]]:
    """Classify many transcripts, returning verdict lists keyed by id.

    Requests are batched per classifier; per-item failures just reduce the
    voter count for that item.
    """
    ids = list(transcripts)
    verdicts: dict[str, list[ClassifierVerdict]] = {i: [] for i in ids}
    for spec in classifiers:
        if spec.kind != "classify":
            raise ValueError(
                f"adapter {spec.name!r} has kind {spec.kind!r}, "
                "expected 'classify'")
        requests = [AdapterEnvelope(request_id=i, kind="classify",
                                    payload={"transcript": transcripts[i]})
                    for i in ids]
        try:
            results = invoke_adapter(spec, requests)
        except AdapterSpawnError as err:
            log.warning("classifier %s unavailable: %s", spec.name, err)
            continue
        for item_id, result in zip(ids, results):
            verdict = _verdict_from_result(spec.name, result)
            if verdict is not None:
                verdicts[item_id].append(verdict)
    return verdicts


def _verdict_from_result(name: str,
                         result: AdapterResult) -> ClassifierVerdict | None:
    if not result.ok:
        log.warning("classifier %s failed for request %s: %s",
                    name, result.request_id, result.error)
        return None
    scores = (result.payload or {}).get("scores")
    if not isinstance(scores, dict) or not scores:
        log.warning("classifier %s returned no scores for request %s",
                    name, result.request_id)
        return None
    try:
        return ClassifierVerdict(
            classifier_name=name,
            scores={str(k): float(v) for k, v in scores.items()})
    except ValueError as err:
        log.warning("classifier %s returned invalid scores: %s", name, err)
        return None
