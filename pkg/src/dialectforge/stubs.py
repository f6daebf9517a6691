"""Stub adapter executables: ``python -m dialectforge.stubs KIND [options]``.

These stand in for the real neural tools behind the adapter protocol and
double as reference implementations for anyone wrapping actual models.
Fault-injection flags (--drop-ids, --sleep-ids, --fail-spawn exit) exist so
the pipeline's degradation paths can be tested end to end.

Kinds:
  echo        reply with the request payload unchanged
  denoise     copy the input WAV into --out-dir, reply with the new path
  asr         reply with text looked up by audio basename in --fixture
  classify    reply with a score map looked up by transcript in --fixture
  synthesize  copy the reference WAV to --out-dir/<request_id>.wav
  embed       reply with a deterministic vector derived from file bytes
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import shutil
import sys
import time


def _reply(request_id: str, kind: str, payload: dict) -> None:
    line = json.dumps({"request_id": request_id, "kind": kind,
                       "payload": payload}, ensure_ascii=False)
    sys.stdout.write(line + "\n")
    sys.stdout.flush()


def _load_fixture(path: str | None) -> dict:
    if not path:
        return {}
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def _handle(kind: str, payload: dict, args: argparse.Namespace,
            fixture: dict, request_id: str) -> dict:
    if kind == "echo" or args.kind == "echo":
        return payload
    if kind == "denoise":
        src = payload["audio_path"]
        os.makedirs(args.out_dir, exist_ok=True)
        dst = os.path.join(args.out_dir, os.path.basename(src))
        shutil.copyfile(src, dst)
        return {"audio_path": dst}
    if kind == "asr":
        key = os.path.basename(payload["audio_path"])
        if key not in fixture:
            return {"error": f"no transcript fixture for {key}"}
        return {"text": fixture[key]}
    if kind == "classify":
        key = payload["transcript"]
        if key not in fixture:
            return {"error": "no score fixture for transcript"}
        return {"scores": fixture[key]}
    if kind == "synthesize":
        ref = payload["reference_audio_path"]
        os.makedirs(args.out_dir, exist_ok=True)
        dst = os.path.join(args.out_dir, f"{request_id}.wav")
        shutil.copyfile(ref, dst)
        return {"audio_path": dst}
    if kind == "embed":
        with open(payload["audio_path"], "rb") as fh:
            digest = hashlib.sha256(fh.read()).digest()
        # Deterministic pseudo-embedding from the content hash.
        raw = [b / 255.0 - 0.5 for b in digest[:args.dim]]
        while len(raw) < args.dim:
            raw.append(raw[len(raw) % len(digest)])
        norm = sum(x * x for x in raw) ** 0.5 or 1.0
        return {"vector": [x / norm for x in raw]}
    return {"error": f"stub cannot handle kind {kind!r}"}


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="dialectforge.stubs",
                                     description=__doc__)
    parser.add_argument("kind", choices=["echo", "denoise", "asr", "classify",
                                         "synthesize", "embed"])
    parser.add_argument("--fixture", help="JSON lookup table (asr, classify)")
    parser.add_argument("--out-dir", default=".",
                        help="output directory (denoise, synthesize)")
    parser.add_argument("--dim", type=int, default=32,
                        help="embedding dimensionality (embed)")
    parser.add_argument("--drop-ids", default="",
                        help="comma-separated request_ids to never answer")
    parser.add_argument("--sleep-ids", default="",
                        help="comma-separated request_ids to stall on")
    parser.add_argument("--sleep-s", type=float, default=30.0,
                        help="stall duration for --sleep-ids")
    parser.add_argument("--crash-after", type=int, default=-1,
                        help="exit abruptly after N replies")
    args = parser.parse_args(argv)

    fixture = _load_fixture(args.fixture)
    drop = set(filter(None, args.drop_ids.split(",")))
    stall = set(filter(None, args.sleep_ids.split(",")))
    replies = 0

    for raw in sys.stdin:
        raw = raw.strip()
        if not raw:
            continue
        try:
            request = json.loads(raw)
            request_id = str(request["request_id"])
            kind = str(request["kind"])
            payload = request.get("payload", {})
        except (ValueError, KeyError):
            continue
        if request_id in drop:
            continue
        if request_id in stall:
            time.sleep(args.sleep_s)
        try:
            response = _handle(kind, payload, args, fixture, request_id)
        except (OSError, KeyError) as err:
            response = {"error": f"{type(err).__name__}: {err}"}
        _reply(request_id, kind, response)
        replies += 1
        if args.crash_after >= 0 and replies >= args.crash_after:
            os._exit(13)
    return 0


if __name__ == "__main__":
    sys.exit(main())
