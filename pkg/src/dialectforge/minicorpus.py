"""Seeded synthetic mini-corpus for desk-scale runs and tests.

Generates a manifest of tiny tone WAVs with Arabic transcripts plus the
fixtures the stub adapters need: an ASR lookup (with word swaps injected
into a chosen number of hypotheses, to exercise the mismatch filter) and
per-classifier score tables. Everything derives from one seed.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from random import Random

import numpy as np

from .audio import AudioBuffer, write_wav
from .corpus import CorpusManifest, GENDERS, LabelSet, SegmentRecord, save_manifest

_WORD_POOL = (
    "مرحبا", "صباح", "الخير", "كيف", "حالك", "اليوم", "جميل", "شكرا",
    "جزيلا", "نعم", "لا", "ربما", "غدا", "قريبا", "بعيد", "سلام",
)

SAMPLE_RATE_HZ = 16000


@dataclass
class MiniCorpus:
    """Generated corpus plus the fixture paths for its stub adapters."""

    root: Path
    manifest: CorpusManifest
    manifest_path: Path
    asr_fixture_path: Path
    classifier_fixture_paths: list[Path] = field(default_factory=list)
    corrupted_ids: list[str] = field(default_factory=list)


def _tone(freq_hz: float, duration_s: float, harmonic: float,
          rng: Random) -> AudioBuffer:
    t = np.arange(int(duration_s * SAMPLE_RATE_HZ)) / SAMPLE_RATE_HZ
    phase = rng.uniform(0, 2 * math.pi)
    wave = (0.35 * np.sin(2 * math.pi * freq_hz * t + phase)
            + harmonic * np.sin(2 * math.pi * 2 * freq_hz * t))
    return AudioBuffer(samples=wave, sample_rate_hz=SAMPLE_RATE_HZ)


def _transcript(rng: Random) -> str:
    return " ".join(rng.choice(_WORD_POOL) for _ in range(rng.randint(3, 7)))


def _corrupt(transcript: str, rng: Random) -> str:
    words = transcript.split()
    index = rng.randrange(len(words))
    replacement = rng.choice([w for w in _WORD_POOL if w != words[index]])
    words[index] = replacement
    return " ".join(words)


def generate_mini_corpus(root: str | os.PathLike,
                         segments: int = 20,
                         speakers: int = 6,
                         corrupted: int = 6,
                         classifiers: int = 2,
                         seed: int = 0,
                         write_audio: bool = True,
                         label_set: LabelSet | None = None) -> MiniCorpus:
    """Build a corpus of ``segments`` segments across ``speakers`` speakers.

    Exactly ``corrupted`` hypotheses get a one-word swap (WER above zero);
    the rest match their transcripts. Each speaker's first segment is at
    least 5 s long and is never corrupted, so reference selection still has
    a candidate per speaker after the mismatch filter.
    """
    if segments < speakers:
        raise ValueError("need at least one segment per speaker")
    if corrupted > segments - speakers:
        raise ValueError(
            "corrupted count cannot exceed the non-reference segment count "
            f"({segments - speakers})")
    root = Path(root)
    wav_dir = root / "wavs"
    if write_audio:
        wav_dir.mkdir(parents=True, exist_ok=True)
    else:
        root.mkdir(parents=True, exist_ok=True)
    rng = Random(seed)
    labels = label_set or LabelSet.default()

    records: list[SegmentRecord] = []
    asr_fixture: dict[str, str] = {}
    # segment i for i < speakers is speaker i's long reference segment
    corrupted_ids = sorted(rng.sample(range(speakers, segments), corrupted))
    corrupted_set = set(corrupted_ids)

    per_speaker_seen: set[int] = set()
    for index in range(segments):
        speaker = index % speakers
        first_of_speaker = speaker not in per_speaker_seen
        per_speaker_seen.add(speaker)
        duration = (rng.uniform(5.2, 8.0) if first_of_speaker
                    else rng.uniform(3.0, 8.0))
        segment_id = f"seg{index:04d}"
        wav_path = wav_dir / f"{segment_id}.wav"
        if write_audio:
            buffer = _tone(180.0 + 37.0 * speaker, duration,
                           harmonic=0.04 * (speaker + 1), rng=rng)
            write_wav(wav_path, buffer)
            duration = buffer.duration_seconds()
        transcript = _transcript(rng)
        hypothesis = (_corrupt(transcript, rng) if index in corrupted_set
                      else transcript)
        asr_fixture[wav_path.name] = hypothesis
        records.append(SegmentRecord(
            segment_id=segment_id,
            audio_path=str(wav_path),
            speaker_id=f"spk{speaker:03d}",
            duration_s=duration,
            sample_rate_hz=SAMPLE_RATE_HZ,
            gender=GENDERS[speaker % len(GENDERS)],
            transcript=transcript,
        ))

    manifest = CorpusManifest.from_segments(records).with_provenance(
        "generate", {"seed": seed, "segments": segments,
                     "speakers": speakers, "corrupted": corrupted})
    manifest_path = root / "manifest.dfm"
    save_manifest(manifest, manifest_path)

    asr_fixture_path = root / "asr_fixture.json"
    with open(asr_fixture_path, "w", encoding="utf-8") as fh:
        json.dump(asr_fixture, fh, ensure_ascii=False, indent=2)

    classifier_fixture_paths = []
    codes = labels.sorted()
    for c in range(classifiers):
        table: dict[str, dict[str, float]] = {}
        crng = Random(f"{seed}-classifier-{c}")
        for transcript in sorted({r.transcript for r in records}
                                 | set(asr_fixture.values())):
            picks = crng.sample(codes, 3)
            raw = [crng.uniform(0.05, 1.0) for _ in picks]
            total = sum(raw)
            table[transcript] = {code: round(0.9 * value / total, 6)
                                 for code, value in zip(picks, raw)}
        path = root / f"classifier_{c}.json"
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(table, fh, ensure_ascii=False, indent=2)
        classifier_fixture_paths.append(path)

    return MiniCorpus(
        root=root,
        manifest=manifest,
        manifest_path=manifest_path,
        asr_fixture_path=asr_fixture_path,
        classifier_fixture_paths=classifier_fixture_paths,
        corrupted_ids=[f"seg{i:04d}" for i in corrupted_ids],
    )


def _main(argv=None) -> int:
    import argparse

    parser = argparse.ArgumentParser(
        prog="dialectforge.minicorpus",
        description="Generate a synthetic demo corpus plus stub fixtures.")
    parser.add_argument("out_dir")
    parser.add_argument("--segments", type=int, default=20)
    parser.add_argument("--speakers", type=int, default=6)
    parser.add_argument("--corrupted", type=int, default=6)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)
    corpus = generate_mini_corpus(args.out_dir, segments=args.segments,
                                  speakers=args.speakers,
                                  corrupted=args.corrupted, seed=args.seed)
    print(f"manifest: {corpus.manifest_path}")
    print(f"asr fixture: {corpus.asr_fixture_path}")
    for path in corpus.classifier_fixture_paths:
        print(f"classifier fixture: {path}")
    print(f"corrupted segments: {', '.join(corpus.corrupted_ids)}")
    return 0


def big_speaker_manifest(speakers: int, seed: int = 0) -> CorpusManifest:
    """A minimal manifest with one segment per speaker, for split tests."""
    rng = Random(seed)
    records = [
        SegmentRecord(
            segment_id=f"seg{i:06d}",
            audio_path=f"wavs/seg{i:06d}.wav",
            speaker_id=f"spk{i:06d}",
            duration_s=rng.uniform(2.0, 10.0),
            sample_rate_hz=SAMPLE_RATE_HZ,
            gender=GENDERS[i % len(GENDERS)],
            transcript="نص قصير",
        )
        for i in range(speakers)
    ]
    return CorpusManifest.from_segments(records)


if __name__ == "__main__":
    raise SystemExit(_main())
