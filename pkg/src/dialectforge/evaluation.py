"""Synthesized-speech evaluation: SECS, WER, and report rendering.

SECS compares speaker embeddings of synthesized audio against a reference
utterance of at least five seconds from the same speaker, chosen at random;
the experiment runs several times (three by default) and reports the mean.
The desk-scale embedder is deterministic mel statistics; a real speaker
verification model can be plugged in through an embed adapter. WER of the
synthesized audio comes from an ASR adapter and is pooled corpus-level:
total edits over total reference words.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
import random
import statistics
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .adapters import AdapterEnvelope, AdapterSpec, AdapterSpawnError, invoke_adapter
from .audio import AudioError, DEFAULT_MEL, MelConfig, MelMatrix, log_mel_spectrogram, read_wav
from .corpus import CorpusManifest, SegmentRecord
from .textmetrics import (
    DEFAULT_NORMALIZER,
    EditCounts,
    NormalizerConfig,
    normalize_text,
    pooled_wer,
    word_edit_distance,
)

log = logging.getLogger(__name__)

SPECTRAL_SOURCE = "spectral-desk"
ADAPTER_SOURCE = "external-adapter"


class EvalError(ValueError):
    """Raised for unusable evaluation inputs."""


@dataclass(frozen=True, eq=False)
class SpeakerEmbedding:
    """Unit-norm speaker vector with its originating embedder."""

    vector: np.ndarray
    source: str = SPECTRAL_SOURCE

    def __post_init__(self):
        vec = np.asarray(self.vector, dtype=np.float64)
        if vec.ndim != 1:
            raise EvalError("embedding vector must be 1-D")
        object.__setattr__(self, "vector", vec)


def _unit(vector: np.ndarray, source: str) -> SpeakerEmbedding:
    norm = float(np.linalg.norm(vector))
    if norm == 0.0 or not math.isfinite(norm):
        raise EvalError("cannot normalize a zero or non-finite vector")
    return SpeakerEmbedding(vector=vector / norm, source=source)


def spectral_speaker_embedding(mel: MelMatrix) -> SpeakerEmbedding:
    """Per-band mean and standard deviation over time, L2-normalized.

    Needs at least two frames; the standard deviation of a single frame is
    undefined.
    """
    if mel.n_frames < 2:
        raise EvalError(
            f"need >= 2 mel frames for an embedding, got {mel.n_frames}")
    means = mel.frames.mean(axis=1)
    stds = mel.frames.std(axis=1, ddof=1)
    return _unit(np.concatenate([means, stds]), SPECTRAL_SOURCE)


def embed_wav(path: str | os.PathLike,
              mel_config: MelConfig = DEFAULT_MEL) -> SpeakerEmbedding:
    """Read a WAV file and compute its spectral embedding."""
    return spectral_speaker_embedding(log_mel_spectrogram(read_wav(path),
                                                          mel_config))


def cosine_similarity(a: SpeakerEmbedding, b: SpeakerEmbedding) -> float:
    """Cosine similarity of two embeddings, clamped to [-1, 1]."""
    if a.vector.shape != b.vector.shape:
        raise EvalError(
            f"embedding dimensionality mismatch: {a.vector.shape[0]} "
            f"vs {b.vector.shape[0]}")
    return float(np.clip(np.dot(a.vector, b.vector), -1.0, 1.0))


def _reference_candidates(manifest: CorpusManifest, speaker_id: str,
                          min_duration_s: float,
                          exclude: str | None) -> list[SegmentRecord]:
    segments = manifest.segments_of(speaker_id)
    if not segments:
        raise EvalError(f"speaker {speaker_id!r} not in manifest")
    candidates = sorted(
        (s for s in segments
         if s.duration_s >= min_duration_s and s.segment_id != exclude),
        key=lambda s: s.segment_id)
    if not candidates:
        raise EvalError(
            f"speaker {speaker_id!r} has no reference segment of at least "
            f"{min_duration_s} s")
    return candidates


def select_reference(manifest: CorpusManifest, speaker_id: str,
                     min_duration_s: float, seed: int) -> SegmentRecord:
    """Uniform seeded choice among the speaker's long-enough segments."""
    rng = random.Random(seed)
    return rng.choice(_reference_candidates(manifest, speaker_id,
                                            min_duration_s, exclude=None))


@dataclass(frozen=True)
class EvalRunConfig:
    """Evaluation settings; defaults mirror the measurement protocol
    (three runs, five-second minimum reference)."""

    runs: int = 3
    min_reference_s: float = 5.0
    seed: int = 0
    asr: AdapterSpec | None = None
    embedder: AdapterSpec | None = None  # None: deterministic spectral
    mel: MelConfig = DEFAULT_MEL
    normalizer: NormalizerConfig = DEFAULT_NORMALIZER
    independent_reference: bool = True

    def __post_init__(self):
        if self.runs < 1:
            raise EvalError("runs must be >= 1")
        if self.min_reference_s <= 0:
            raise EvalError("min_reference_s must be > 0")

    def to_dict(self) -> dict:
        return {
            "runs": self.runs,
            "min_reference_s": self.min_reference_s,
            "seed": self.seed,
            "asr": self.asr.to_dict() if self.asr else None,
            "embedder": self.embedder.to_dict() if self.embedder else
                SPECTRAL_SOURCE,
            "independent_reference": self.independent_reference,
        }


def _make_embedder(config: EvalRunConfig) -> Callable[[str], SpeakerEmbedding]:
    if config.embedder is None:
        return lambda path: embed_wav(path, config.mel)

    def via_adapter(path: str) -> SpeakerEmbedding:
        request = AdapterEnvelope(request_id="0", kind="embed",
                                  payload={"audio_path": str(path)})
        result = invoke_adapter(config.embedder, [request])[0]
        if not result.ok:
            raise AudioError(f"embed adapter failed for {path}: "
                             f"{result.error}")
        vector = np.asarray((result.payload or {}).get("vector", ()),
                            dtype=np.float64)
        if vector.size == 0:
            raise AudioError(f"embed adapter returned no vector for {path}")
        return _unit(vector, ADAPTER_SOURCE)

    return via_adapter


@dataclass(frozen=True)
class SecsRun:
    """One SECS pass over a synth set."""

    score: float
    evaluated: int
    skipped: tuple[str, ...] = ()


def secs_run(synth_set: Mapping[str, str | os.PathLike],
             manifest: CorpusManifest, config: EvalRunConfig,
             run_index: int) -> SecsRun:
    """Mean cosine similarity between synthesized items and per-speaker
    references for one run.

    References are redrawn each run with seed ``config.seed + run_index``.
    Unreadable audio skips the item and records it; everything else is
    deterministic for fixed fixtures and seed.
    """
    if not synth_set:
        raise EvalError("nothing to evaluate: synth set is empty")
    embed = _make_embedder(config)
    rng = random.Random(config.seed + run_index)
    similarities: list[float] = []
    skipped: list[str] = []
    for segment_id in sorted(synth_set):
        segment = manifest.get(segment_id)
        if segment is None:
            raise EvalError(
                f"synthesized item {segment_id!r} is not in the manifest")
        exclude = segment_id if config.independent_reference else None
        reference = rng.choice(_reference_candidates(
            manifest, segment.speaker_id, config.min_reference_s, exclude))
        try:
            synth_emb = embed(str(synth_set[segment_id]))
            ref_emb = embed(reference.audio_path)
        except (AudioError, FileNotFoundError, EvalError) as err:
            log.warning("skipping %s: %s", segment_id, err)
            skipped.append(segment_id)
            continue
        similarities.append(cosine_similarity(synth_emb, ref_emb))
    if not similarities:
        raise EvalError("nothing to evaluate: every item was skipped")
    return SecsRun(score=statistics.fmean(similarities),
                   evaluated=len(similarities), skipped=tuple(skipped))


@dataclass
class EvalRow:
    model: str
    wer: float | None = None
    secs: float | None = None
    mos: float | None = None


@dataclass
class EvalReport:
    """Per-model WER / SECS / MOS table plus per-run detail."""

    rows: list[EvalRow] = field(default_factory=list)
    per_run_secs: dict[str, list[float]] = field(default_factory=dict)
    skipped: dict[str, list[str]] = field(default_factory=dict)
    annotations: list[str] = field(default_factory=list)
    config: dict = field(default_factory=dict)

    def row(self, model: str) -> EvalRow:
        for row in self.rows:
            if row.model == model:
                return row
        raise KeyError(model)

    def to_dict(self) -> dict:
        return {
            "rows": [row.__dict__.copy() for row in self.rows],
            "per_run_secs": {k: list(v) for k, v in self.per_run_secs.items()},
            "skipped": {k: list(v) for k, v in self.skipped.items()},
            "annotations": list(self.annotations),
            "config": dict(self.config),
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "EvalReport":
        return cls(
            rows=[EvalRow(**row) for row in data.get("rows", [])],
            per_run_secs={k: list(v)
                          for k, v in data.get("per_run_secs", {}).items()},
            skipped={k: list(v) for k, v in data.get("skipped", {}).items()},
            annotations=list(data.get("annotations", [])),
            config=dict(data.get("config", {})),
        )

    def save(self, path: str | os.PathLike) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, ensure_ascii=False, indent=2)
            fh.write("\n")

    @classmethod
    def load(cls, path: str | os.PathLike) -> "EvalReport":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def _model_order(models: Mapping[str, object]) -> list[str]:
    # Baseline leads the table; fine-tuned variants follow in given order.
    names = list(models)
    return sorted(names, key=lambda n: 0 if n == "baseline" else 1)


def _wer_for_model(synth_set: Mapping[str, str | os.PathLike],
                   manifest: CorpusManifest, config: EvalRunConfig,
                   report: EvalReport, model: str) -> float | None:
    requests = [
        AdapterEnvelope(request_id=sid, kind="asr",
                        payload={"audio_path": str(synth_set[sid])})
        for sid in sorted(synth_set)
    ]
    try:
        results = invoke_adapter(config.asr, requests)
    except AdapterSpawnError as err:
        report.annotations.append(f"wer disabled for {model}: {err}")
        return None
    counts: list[EditCounts] = []
    failed = 0
    for request, result in zip(requests, results):
        text = (result.payload or {}).get("text") if result.ok else None
        if text is None:
            failed += 1
            continue
        segment = manifest.get(request.request_id)
        counts.append(word_edit_distance(
            normalize_text(segment.transcript, config.normalizer),
            normalize_text(str(text), config.normalizer)))
    if failed:
        report.annotations.append(
            f"wer for {model}: {failed} item(s) failed ASR and were excluded")
    if not counts:
        report.annotations.append(
            f"wer disabled for {model}: no ASR output at all")
        return None
    return pooled_wer(counts)


def evaluate(models: Mapping[str, Mapping[str, str | os.PathLike]],
             manifest: CorpusManifest, config: EvalRunConfig,
             mos_csv: str | os.PathLike | None = None) -> EvalReport:
    """Score every model's synth set; never fabricate a column.

    SECS is the arithmetic mean of ``config.runs`` independent runs. WER
    needs an ASR adapter; without one the column is absent and annotated.
    MOS merges in from an annotation-service export when provided.
    """
    if not models:
        raise EvalError("no models to evaluate")
    for model, synth_set in models.items():
        for segment_id in synth_set:
            if manifest.get(segment_id) is None:
                raise EvalError(
                    f"synthesized item {segment_id!r} of model {model!r} "
                    "is not in the manifest")
    report = EvalReport(config=config.to_dict())
    mos_by_model = read_mos_export(mos_csv) if mos_csv else {}

    for model in _model_order(models):
        synth_set = models[model]
        row = EvalRow(model=model)

        try:
            runs = [secs_run(synth_set, manifest, config, run_index)
                    for run_index in range(config.runs)]
            report.per_run_secs[model] = [r.score for r in runs]
            skipped = sorted({sid for r in runs for sid in r.skipped})
            if skipped:
                report.skipped[model] = skipped
                report.annotations.append(
                    f"secs for {model}: skipped unreadable items: "
                    + ", ".join(skipped))
            row.secs = statistics.fmean(report.per_run_secs[model])
        except AdapterSpawnError as err:
            report.annotations.append(f"secs disabled for {model}: {err}")

        if config.asr is not None:
            row.wer = _wer_for_model(synth_set, manifest, config, report,
                                     model)
        else:
            report.annotations.append(
                f"wer disabled for {model}: no asr adapter configured")

        row.mos = mos_by_model.get(model)
        report.rows.append(row)
    return report


def synthesize_with_adapter(adapter: AdapterSpec, manifest: CorpusManifest,
                            language: str = "ar",
                            ) -> dict[str, str]:
    """Produce a synth set for every manifest segment via a synthesize
    adapter. Returns {segment_id: audio_path}; failures are logged and
    omitted."""
    requests = [
        AdapterEnvelope(
            request_id=seg.segment_id, kind="synthesize",
            payload={
                "text": seg.transcript,
                "reference_audio_path": seg.audio_path,
                "language": language,
                **({"dialect": seg.dialect} if seg.dialect else {}),
            })
        for seg in manifest
    ]
    results = invoke_adapter(adapter, requests)
    synth_set: dict[str, str] = {}
    for request, result in zip(requests, results):
        path = (result.payload or {}).get("audio_path") if result.ok else None
        if path:
            synth_set[request.request_id] = str(path)
        else:
            log.warning("synthesis failed for %s: %s", request.request_id,
                        result.error)
    return synth_set


def read_mos_export(path: str | os.PathLike) -> dict[str, float]:
    """Parse the annotation service's CSV export (model_name,mos,count,std).

    Models exported without data (empty mos field) are omitted, never
    turned into 0.0.
    """
    out: dict[str, float] = {}
    with open(path, encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            value = (row.get("mos") or "").strip()
            if value:
                out[row["model_name"]] = float(value)
    return out


def _columns(report: EvalReport) -> list[str]:
    cols = ["Model"]
    if any(row.wer is not None for row in report.rows):
        cols.append("WER")
    if any(row.secs is not None for row in report.rows):
        cols.append("SECS")
    if any(row.mos is not None for row in report.rows):
        cols.append("MOS")
    return cols


def _cell(row: EvalRow, column: str, display: bool) -> str:
    value = {"Model": row.model, "WER": row.wer, "SECS": row.secs,
             "MOS": row.mos}[column]
    if column == "Model":
        return str(value)
    if value is None:
        return "n/a" if display else ""
    if not display:
        return repr(float(value))
    if column == "WER":
        return f"{value * 100:.2f}"
    if column == "SECS":
        return f"{value:.3f}"
    return f"{value:.2f}"


def render_report(report: EvalReport, fmt: str = "markdown") -> str:
    """Render the report table.

    Markdown uses presentation precision (WER as percent with 2 decimals,
    SECS with 3); CSV carries full-precision fractions so a re-parse
    reproduces the source values exactly.
    """
    columns = _columns(report)
    if fmt == "markdown":
        lines = [
            "# Evaluation report",
            "",
            "WER is corpus-pooled: total edits over total reference words, "
            "shown as percent.",
            f"SECS is the mean of {report.config.get('runs', '?')} runs; "
            "per-run values below.",
            "",
            "| " + " | ".join(columns) + " |",
            "|" + "|".join("---" for _ in columns) + "|",
        ]
        for row in report.rows:
            lines.append("| " + " | ".join(
                _cell(row, col, display=True) for col in columns) + " |")
        if report.per_run_secs:
            lines.append("")
            lines.append("Per-run SECS:")
            for model, values in report.per_run_secs.items():
                rendered = ", ".join(f"{v:.3f}" for v in values)
                lines.append(f"- {model}: {rendered}")
        for note in report.annotations:
            lines.append(f"- note: {note}")
        return "\n".join(lines) + "\n"
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(col.lower() for col in columns)
        for row in report.rows:
            writer.writerow(_cell(row, col, display=False) for col in columns)
        return buf.getvalue()
    raise EvalError(f"unknown report format {fmt!r}")


def parse_report_csv(text: str) -> list[dict]:
    """Inverse of render_report(..., 'csv') for round-trip checks."""
    rows = []
    for record in csv.DictReader(io.StringIO(text)):
        parsed: dict = {"model": record.get("model")}
        for key in ("wer", "secs", "mos"):
            raw = record.get(key)
            parsed[key] = float(raw) if raw else None
        rows.append(parsed)
    return rows
