"""Corpus curation stages: denoise, transcribe, filter, label, split.

Stages run in a fixed order and each one writes an atomic manifest
snapshot, so a fatal failure leaves the last completed stage on disk.
Every input segment ends up either in the stage output or in the rejection
log; the conservation |in| = |out| + |rejected| holds per stage.
"""

from __future__ import annotations

import json
import logging
import math
import os
import random
import time
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

from .adapters import AdapterEnvelope, AdapterSpec, classify_batch, invoke_adapter
from .corpus import (
    CorpusManifest,
    CorpusStats,
    LabelSet,
    SegmentRecord,
    corpus_stats,
    load_manifest,
    save_manifest,
)
from .textmetrics import NormalizerConfig, DEFAULT_NORMALIZER, wer

log = logging.getLogger(__name__)

PIPELINE_SAMPLE_RATE_HZ = 16000

STAGE_ORDER = ("validate", "denoise", "asr", "filter", "label", "split")


class PipelineError(RuntimeError):
    """Raised for unrecoverable stage failures."""


class LabelMappingError(ValueError):
    """Raised when a classifier emits a native label with no mapping."""


@dataclass(frozen=True)
class Rejection:
    """One segment removed by one stage."""

    segment_id: str
    stage: str
    reason: str
    metric: float | None = None

    def to_dict(self) -> dict:
        return {"segment_id": self.segment_id, "stage": self.stage,
                "reason": self.reason, "metric": self.metric}


class RejectionLog:
    """Accumulates rejections across stages; serializable as JSON lines."""

    def __init__(self, entries: Sequence[Rejection] = ()):
        self.entries: list[Rejection] = list(entries)

    def extend(self, rejections: Sequence[Rejection]) -> None:
        self.entries.extend(rejections)

    def for_stage(self, stage: str) -> list[Rejection]:
        return [r for r in self.entries if r.stage == stage]

    def __len__(self) -> int:
        return len(self.entries)

    def save(self, path: str | os.PathLike) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for entry in self.entries:
                fh.write(json.dumps(entry.to_dict(), ensure_ascii=False) + "\n")

    @classmethod
    def load(cls, path: str | os.PathLike) -> "RejectionLog":
        entries = []
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    data = json.loads(line)
                    entries.append(Rejection(**data))
        return cls(entries)


class LabelMapping:
    """Bridges heterogeneous classifier label inventories to dialect codes.

    ``mapping`` is {classifier_name: {native_label: dialect_code}}. Native
    labels that already are valid dialect codes resolve via the identity
    fallback when enabled. Unmapped labels raise: silent drops would skew
    the vote.
    """

    def __init__(self, label_set: LabelSet,
                 mapping: Mapping[str, Mapping[str, str]] | None = None,
                 identity_fallback: bool = True):
        self.label_set = label_set
        self.mapping = {str(c): dict(m) for c, m in (mapping or {}).items()}
        self.identity_fallback = identity_fallback
        for classifier, table in self.mapping.items():
            for native, code in table.items():
                if code not in label_set:
                    raise LabelMappingError(
                        f"classifier {classifier!r} maps {native!r} to "
                        f"unknown dialect code {code!r}")

    @classmethod
    def identity(cls, label_set: LabelSet) -> "LabelMapping":
        return cls(label_set)

    @classmethod
    def from_file(cls, path: str | os.PathLike,
                  label_set: LabelSet) -> "LabelMapping":
        with open(path, encoding="utf-8") as fh:
            return cls(label_set, json.load(fh))

    def resolve(self, classifier_name: str, native_label: str) -> str:
        table = self.mapping.get(classifier_name)
        if table and native_label in table:
            return table[native_label]
        if self.identity_fallback and native_label in self.label_set:
            return native_label
        raise LabelMappingError(
            f"no mapping for native label {native_label!r} from "
            f"classifier {classifier_name!r}")

    def validate_inventory(self, classifier_name: str,
                           native_labels: Sequence[str]) -> None:
        """Startup check that every declarable native label resolves."""
        for native in native_labels:
            self.resolve(classifier_name, native)


@dataclass(frozen=True)
class VoteResult:
    """Outcome of cumulative-confidence voting for one segment."""

    label: str | None
    cumulative: dict[str, float]
    tie: bool = False


def aggregate_dialect_votes(verdicts, mapping: LabelMapping) -> VoteResult:
    """Sum mapped confidences per dialect and take the argmax.

    The cumulative sums use exact summation, so the result is invariant
    under verdict reordering. Ties break lexicographically on the dialect
    code and are flagged for provenance. No verdicts means unlabeled.
    """
    if not verdicts:
        return VoteResult(label=None, cumulative={})
    confidences: dict[str, list[float]] = defaultdict(list)
    for verdict in verdicts:
        for native, conf in verdict.scores.items():
            code = mapping.resolve(verdict.classifier_name, native)
            confidences[code].append(float(conf))
    cumulative = {code: math.fsum(vals) for code, vals in confidences.items()}
    best = max(cumulative.values())
    winners = sorted(code for code, total in cumulative.items()
                     if total == best)
    return VoteResult(label=winners[0], cumulative=cumulative,
                      tie=len(winners) > 1)


def _segment_wer(args: tuple[str, str, NormalizerConfig]) -> float:
    ref, hyp, config = args
    return wer(ref, hyp, config)


def filter_mismatched(manifest: CorpusManifest,
                      normalizer: NormalizerConfig = DEFAULT_NORMALIZER,
                      threshold: float = 0.0,
                      jobs: int = 1,
                      ) -> tuple[CorpusManifest, list[Rejection]]:
    """Drop segments whose hypothesis disagrees with the transcript.

    A segment is retained iff wer <= threshold (default 0: any word-level
    difference rejects). Segments without a hypothesis are rejected with
    reason "no-hypothesis". Retained segments carry the computed wer.
    """
    scored = [seg for seg in manifest if seg.hypothesis_transcript is not None]
    work = [(seg.transcript, seg.hypothesis_transcript, normalizer)
            for seg in scored]
    if jobs > 1 and len(work) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            wers = list(pool.map(_segment_wer, work, chunksize=64))
    else:
        wers = [_segment_wer(item) for item in work]
    wer_by_id = {seg.segment_id: value for seg, value in zip(scored, wers)}

    kept: list[SegmentRecord] = []
    rejections: list[Rejection] = []
    for seg in manifest:
        if seg.hypothesis_transcript is None:
            rejections.append(Rejection(seg.segment_id, "filter",
                                        "no-hypothesis"))
            continue
        value = wer_by_id[seg.segment_id]
        if value <= threshold:
            kept.append(replace(seg, wer=value))
        else:
            rejections.append(Rejection(seg.segment_id, "filter",
                                        "wer-above-threshold", metric=value))
    out = manifest.with_segments(kept).with_provenance(
        "filter", {"threshold": threshold, "rejected": len(rejections),
                   "normalizer": normalizer.to_dict()})
    return out, rejections


def assign_dialects(manifest: CorpusManifest,
                    classifiers: Sequence[AdapterSpec],
                    mapping: LabelMapping,
                    ) -> tuple[CorpusManifest, list[Rejection]]:
    """Pseudo-label every segment by ensemble cumulative-confidence voting.

    Classifier failures degrade to fewer voters; a segment with no verdicts
    at all stays unlabeled (dialect=None). Never rejects segments, so the
    returned rejection list is always empty; it exists for stage symmetry.
    """
    transcripts = {seg.segment_id: seg.transcript for seg in manifest}
    verdicts = classify_batch(classifiers, transcripts) if classifiers else \
        {sid: [] for sid in transcripts}

    labeled: list[SegmentRecord] = []
    ties: list[str] = []
    unlabeled: list[str] = []
    for seg in manifest:
        vote = aggregate_dialect_votes(verdicts[seg.segment_id], mapping)
        if vote.label is None:
            unlabeled.append(seg.segment_id)
            labeled.append(replace(seg, dialect=None))
        else:
            if vote.tie:
                ties.append(seg.segment_id)
            labeled.append(replace(seg, dialect=vote.label))

    histogram: dict[str, int] = defaultdict(int)
    for seg in labeled:
        histogram[seg.dialect or "unlabeled"] += 1
    out = manifest.with_segments(labeled).with_provenance(
        "label", {
            "classifiers": [spec.name for spec in classifiers],
            "histogram": dict(sorted(histogram.items())),
            "ties": ties,
            "unlabeled": unlabeled,
        })
    return out, []


def denoise_segments(manifest: CorpusManifest,
                     adapter: AdapterSpec,
                     ) -> tuple[CorpusManifest, list[Rejection]]:
    """Replace each segment's audio path with the denoised file path.

    Original paths are retained in the provenance entry for audit.
    Per-segment adapter failures reject the segment.
    """
    requests = [AdapterEnvelope(request_id=seg.segment_id, kind="denoise",
                                payload={"audio_path": seg.audio_path})
                for seg in manifest]
    results = invoke_adapter(adapter, requests)
    by_id = {res.request_id: res for res in results}

    kept: list[SegmentRecord] = []
    rejections: list[Rejection] = []
    original_paths: dict[str, str] = {}
    for seg in manifest:
        res = by_id[seg.segment_id]
        new_path = (res.payload or {}).get("audio_path") if res.ok else None
        if not new_path:
            reason = res.error or "denoiser returned no audio_path"
            rejections.append(Rejection(seg.segment_id, "denoise",
                                        f"denoise-failed: {reason}"))
            continue
        original_paths[seg.segment_id] = seg.audio_path
        kept.append(replace(seg, audio_path=str(new_path)))
    out = manifest.with_segments(kept).with_provenance(
        "denoise", {"adapter": adapter.name,
                    "original_audio_paths": original_paths})
    return out, rejections


def transcribe_segments(manifest: CorpusManifest,
                        adapter: AdapterSpec,
                        ) -> tuple[CorpusManifest, list[Rejection]]:
    """Attach an ASR hypothesis transcript to every segment."""
    requests = [AdapterEnvelope(request_id=seg.segment_id, kind="asr",
                                payload={"audio_path": seg.audio_path})
                for seg in manifest]
    results = invoke_adapter(adapter, requests)
    by_id = {res.request_id: res for res in results}

    kept: list[SegmentRecord] = []
    rejections: list[Rejection] = []
    for seg in manifest:
        res = by_id[seg.segment_id]
        text = (res.payload or {}).get("text") if res.ok else None
        if text is None:
            reason = res.error or "asr returned no text"
            rejections.append(Rejection(seg.segment_id, "asr",
                                        f"asr-failed: {reason}"))
            continue
        kept.append(replace(seg, hypothesis_transcript=str(text)))
    out = manifest.with_segments(kept).with_provenance(
        "asr", {"adapter": adapter.name, "rejected": len(rejections)})
    return out, rejections


def validate_segments(manifest: CorpusManifest,
                      sample_rate_hz: int = PIPELINE_SAMPLE_RATE_HZ,
                      ) -> tuple[CorpusManifest, list[Rejection]]:
    """Admission check: the pipeline only accepts the target sample rate."""
    kept: list[SegmentRecord] = []
    rejections: list[Rejection] = []
    for seg in manifest:
        if seg.sample_rate_hz != sample_rate_hz:
            rejections.append(Rejection(
                seg.segment_id, "validate", "sample-rate-mismatch",
                metric=float(seg.sample_rate_hz)))
        else:
            kept.append(seg)
    out = manifest.with_segments(kept).with_provenance(
        "validate", {"sample_rate_hz": sample_rate_hz,
                     "rejected": len(rejections)})
    return out, rejections


@dataclass(frozen=True)
class SplitResult:
    """Speaker-disjoint train/eval partition."""

    train: CorpusManifest
    eval: CorpusManifest
    seed: int
    holdout_speakers: tuple[str, ...]


def speaker_disjoint_split(manifest: CorpusManifest, holdout_count: int,
                           seed: int) -> SplitResult:
    """Hold out whole speakers for zero-shot evaluation.

    Holdout speakers are sampled uniformly without replacement from the
    sorted distinct speaker list with the given seed, so the same seed
    always yields the same split. All segments of a speaker land on one
    side.
    """
    speakers = manifest.speakers()
    if holdout_count <= 0:
        raise PipelineError("holdout_count must be positive")
    if holdout_count >= len(speakers):
        raise PipelineError(
            f"holdout_count {holdout_count} must be smaller than the "
            f"distinct speaker count {len(speakers)}")
    rng = random.Random(seed)
    holdout = tuple(sorted(rng.sample(speakers, holdout_count)))
    holdout_set = set(holdout)
    train_segments = [s for s in manifest if s.speaker_id not in holdout_set]
    eval_segments = [s for s in manifest if s.speaker_id in holdout_set]
    info = {"seed": seed, "holdout_count": holdout_count}
    train = manifest.with_segments(train_segments).with_provenance(
        "split", {**info, "side": "train"})
    eval_manifest = manifest.with_segments(eval_segments).with_provenance(
        "split", {**info, "side": "eval"})
    return SplitResult(train=train, eval=eval_manifest, seed=seed,
                       holdout_speakers=holdout)


@dataclass(frozen=True)
class StageSettings:
    enabled: bool = True
    adapter: AdapterSpec | None = None
    adapters: tuple[AdapterSpec, ...] = ()


@dataclass(frozen=True)
class PipelineConfig:
    """Declarative description of one pipeline run."""

    input_manifest: str
    workdir: str
    seed: int = 0
    holdout_count: int = 31
    wer_threshold: float = 0.0
    jobs: int = 1
    sample_rate_hz: int = PIPELINE_SAMPLE_RATE_HZ
    normalizer: NormalizerConfig = DEFAULT_NORMALIZER
    label_set: LabelSet = field(default_factory=LabelSet.default)
    label_mapping_path: str | None = None
    stages: dict = field(default_factory=dict)

    @classmethod
    def from_file(cls, path: str | os.PathLike) -> "PipelineConfig":
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
        label_set = (LabelSet.from_file(data["dialect_labels"])
                     if data.get("dialect_labels") else LabelSet.default())
        stages = {}
        for name, raw in data.get("stages", {}).items():
            if name not in STAGE_ORDER:
                raise PipelineError(f"unknown stage {name!r} in config")
            adapter = (AdapterSpec.from_dict(raw["adapter"])
                       if raw.get("adapter") else None)
            adapters = tuple(AdapterSpec.from_dict(a)
                             for a in raw.get("adapters", []))
            stages[name] = StageSettings(
                enabled=bool(raw.get("enabled", True)),
                adapter=adapter, adapters=adapters)
        return cls(
            input_manifest=str(data["input_manifest"]),
            workdir=str(data["workdir"]),
            seed=int(data.get("seed", 0)),
            holdout_count=int(data.get("holdout_count", 31)),
            wer_threshold=float(data.get("wer_threshold", 0.0)),
            jobs=int(data.get("jobs", 1)),
            sample_rate_hz=int(data.get("sample_rate_hz",
                                        PIPELINE_SAMPLE_RATE_HZ)),
            normalizer=NormalizerConfig.from_dict(data.get("normalizer", {})),
            label_set=label_set,
            label_mapping_path=data.get("label_mapping"),
            stages=stages,
        )

    def stage(self, name: str) -> StageSettings:
        return self.stages.get(name, StageSettings())


@dataclass
class StageReport:
    name: str
    enabled: bool
    input_count: int
    output_count: int
    rejected_count: int
    duration_s: float
    input_hours: float
    output_hours: float
    snapshot: str | None = None
    error: str | None = None

    def to_dict(self) -> dict:
        return self.__dict__.copy()


@dataclass
class PipelineReport:
    stages: list[StageReport] = field(default_factory=list)
    halted_at: str | None = None
    error: str | None = None

    @property
    def failed(self) -> bool:
        return self.halted_at is not None

    def to_dict(self) -> dict:
        return {"stages": [s.to_dict() for s in self.stages],
                "halted_at": self.halted_at, "error": self.error}

    def save(self, path: str | os.PathLike) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, ensure_ascii=False, indent=2)
            fh.write("\n")


@dataclass
class PipelineOutcome:
    split: SplitResult | None
    rejection_log: RejectionLog
    stats: CorpusStats | None
    report: PipelineReport


def _hours(manifest: CorpusManifest) -> float:
    return math.fsum(seg.duration_s for seg in manifest) / 3600.0


def run_pipeline(config: PipelineConfig) -> PipelineOutcome:
    """Run all enabled stages in order, snapshotting after each one.

    A stage-fatal error (for example a missing adapter binary) halts the
    run; earlier snapshots stay intact and the report names the failed
    stage. Per-segment problems go to the rejection log instead.
    """
    workdir = Path(config.workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    manifest = load_manifest(config.input_manifest, label_set=config.label_set)
    mapping = (LabelMapping.from_file(config.label_mapping_path,
                                      config.label_set)
               if config.label_mapping_path
               else LabelMapping.identity(config.label_set))

    rejection_log = RejectionLog()
    report = PipelineReport()
    split: SplitResult | None = None
    stats: CorpusStats | None = None

    def run_stage(index, name, fn):
        nonlocal manifest
        settings = config.stage(name)
        entry = StageReport(
            name=name, enabled=settings.enabled,
            input_count=len(manifest), output_count=len(manifest),
            rejected_count=0, duration_s=0.0,
            input_hours=_hours(manifest), output_hours=_hours(manifest))
        if not settings.enabled:
            report.stages.append(entry)
            return
        start = time.monotonic()
        out_manifest, rejections = fn(settings)
        rejection_log.extend(rejections)
        snapshot = workdir / f"{index:02d}_{name}.dfm"
        save_manifest(out_manifest, snapshot)
        entry.output_count = len(out_manifest)
        entry.rejected_count = len(rejections)
        entry.duration_s = time.monotonic() - start
        entry.output_hours = _hours(out_manifest)
        entry.snapshot = str(snapshot)
        report.stages.append(entry)
        manifest = out_manifest

    try:
        run_stage(0, "validate",
                  lambda s: validate_segments(manifest, config.sample_rate_hz))
        run_stage(1, "denoise",
                  lambda s: denoise_segments(manifest, _require(s.adapter,
                                                                "denoise")))
        run_stage(2, "asr",
                  lambda s: transcribe_segments(manifest, _require(s.adapter,
                                                                   "asr")))
        run_stage(3, "filter",
                  lambda s: filter_mismatched(manifest, config.normalizer,
                                              config.wer_threshold,
                                              config.jobs))
        run_stage(4, "label",
                  lambda s: assign_dialects(manifest, list(s.adapters),
                                            mapping))

        stats = corpus_stats(manifest)
        with open(workdir / "stats.json", "w", encoding="utf-8") as fh:
            json.dump(stats.to_dict(), fh, ensure_ascii=False, indent=2)

        if config.stage("split").enabled:
            start = time.monotonic()
            split = speaker_disjoint_split(manifest, config.holdout_count,
                                           config.seed)
            save_manifest(split.train, workdir / "05_train.dfm")
            save_manifest(split.eval, workdir / "05_eval.dfm")
            report.stages.append(StageReport(
                name="split", enabled=True,
                input_count=len(manifest),
                output_count=len(split.train) + len(split.eval),
                rejected_count=0,
                duration_s=time.monotonic() - start,
                input_hours=_hours(manifest),
                output_hours=_hours(manifest),
                snapshot=str(workdir / "05_train.dfm")))
        else:
            report.stages.append(StageReport(
                name="split", enabled=False, input_count=len(manifest),
                output_count=len(manifest), rejected_count=0,
                duration_s=0.0, input_hours=_hours(manifest),
                output_hours=_hours(manifest)))
    except Exception as err:  # stage-fatal: keep completed snapshots
        done = {entry.name for entry in report.stages}
        halted = next((s for s in STAGE_ORDER if s not in done), "unknown")
        report.halted_at = halted
        report.error = f"{type(err).__name__}: {err}"
        log.error("pipeline halted at stage %s: %s", halted, report.error)

    rejection_log.save(workdir / "rejections.jsonl")
    report.save(workdir / "report.json")
    return PipelineOutcome(split=split, rejection_log=rejection_log,
                           stats=stats, report=report)


def _require(adapter: AdapterSpec | None, stage: str) -> AdapterSpec:
    if adapter is None:
        raise PipelineError(f"stage {stage!r} is enabled but has no adapter")
    return adapter
