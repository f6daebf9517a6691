"""Segment records, dialect labels, manifest I/O, and corpus statistics.

A manifest is the single exchange format between pipeline stages: one
header line carrying the format version (``dfm/1``) plus JSON metadata,
then one tab-separated record per audio segment. Manifests are immutable
after parsing; every stage produces a new manifest and appends exactly one
provenance entry.
"""

from __future__ import annotations

import json
import math
import os
import re
import tempfile
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from typing import IO, Iterable, Iterator, Mapping

MANIFEST_VERSION = "dfm/1"

GENDERS = ("male", "female", "unknown")

UNLABELED = "unlabeled"

# Country-level dialect codes (ISO 3166-1 alpha-3) covering the Arab world,
# plus MSA. The regional list is configuration: override with a labels file
# when a deployment uses a different inventory.
DEFAULT_DIALECT_CODES = (
    "ARE", "BHR", "DJI", "DZA", "EGY", "IRQ", "JOR", "KWT", "LBN", "LBY",
    "MAR", "MRT", "MSA", "OMN", "PSE", "QAT", "SAU", "SDN", "SOM", "SYR",
    "TUN", "YEM",
)

_CODE_RE = re.compile(r"^[A-Za-z0-9_-]+$")

# Positional manifest columns, in file order.
_POSITIONAL_FIELDS = (
    "segment_id", "audio_path", "speaker_id", "duration_s",
    "sample_rate_hz", "gender", "transcript",
)
_OPTIONAL_KEYS = ("dialect", "hypothesis", "wer")


class ManifestError(ValueError):
    """Raised for malformed manifest content.

    Carries the 1-based line number and the offending field name when those
    are known, so callers can point at the exact input problem.
    """

    def __init__(self, message: str, line_number: int | None = None,
                 fieldname: str | None = None):
        prefix = ""
        if line_number is not None:
            prefix += f"line {line_number}: "
        if fieldname is not None:
            prefix += f"field '{fieldname}': "
        super().__init__(prefix + message)
        self.line_number = line_number
        self.fieldname = fieldname


class LabelError(ValueError):
    """Raised for invalid dialect label sets or codes."""


@dataclass(frozen=True)
class LabelSet:
    """The closed set of dialect codes a corpus may carry.

    MSA must always be a member. Codes are case-sensitive identifiers;
    ``unlabeled`` is reserved for segments without a pseudo-label.
    """

    codes: tuple[str, ...]

    def __post_init__(self):
        if len(set(self.codes)) != len(self.codes):
            raise LabelError("dialect codes must be distinct")
        if "MSA" not in self.codes:
            raise LabelError("MSA must be a member of every label set")
        for code in self.codes:
            if not _CODE_RE.match(code):
                raise LabelError(f"invalid dialect code {code!r}")
            if code == UNLABELED:
                raise LabelError(f"code {UNLABELED!r} is reserved")

    @classmethod
    def default(cls) -> "LabelSet":
        return cls(DEFAULT_DIALECT_CODES)

    @classmethod
    def from_file(cls, path: str | os.PathLike) -> "LabelSet":
        """Load a label set from a text file, one code per line."""
        with open(path, encoding="utf-8") as fh:
            codes = tuple(line.strip() for line in fh if line.strip())
        return cls(codes)

    def sorted(self) -> tuple[str, ...]:
        return tuple(sorted(self.codes))

    def __contains__(self, code: object) -> bool:
        return code in self.codes

    def __len__(self) -> int:
        return len(self.codes)


def _check_text_field(value: str, name: str, allow_empty: bool = False) -> str:
    if not isinstance(value, str):
        raise ManifestError(f"expected string, got {type(value).__name__}",
                            fieldname=name)
    if not allow_empty and not value:
        raise ManifestError("must be non-empty", fieldname=name)
    if "\t" in value or "\n" in value or "\r" in value:
        raise ManifestError("must not contain tab or newline characters",
                            fieldname=name)
    return value


@dataclass(frozen=True)
class SegmentRecord:
    """One audio segment of the corpus."""

    segment_id: str
    audio_path: str
    speaker_id: str
    duration_s: float
    sample_rate_hz: int
    gender: str
    transcript: str
    dialect: str | None = None
    hypothesis_transcript: str | None = None
    wer: float | None = None

    def __post_init__(self):
        _check_text_field(self.segment_id, "segment_id")
        _check_text_field(self.audio_path, "audio_path")
        _check_text_field(self.speaker_id, "speaker_id")
        _check_text_field(self.transcript, "transcript", allow_empty=True)
        if not (isinstance(self.duration_s, (int, float))
                and math.isfinite(self.duration_s) and self.duration_s > 0):
            raise ManifestError("must be a finite number > 0",
                                fieldname="duration_s")
        if not (isinstance(self.sample_rate_hz, int)
                and self.sample_rate_hz > 0):
            raise ManifestError("must be a positive integer",
                                fieldname="sample_rate_hz")
        if self.gender not in GENDERS:
            raise ManifestError(
                f"must be one of {GENDERS}, got {self.gender!r}",
                fieldname="gender")
        if self.dialect is not None:
            _check_text_field(self.dialect, "dialect")
        if self.hypothesis_transcript is not None:
            _check_text_field(self.hypothesis_transcript, "hypothesis",
                              allow_empty=True)
        if self.wer is not None:
            if not isinstance(self.wer, (int, float)) or math.isnan(self.wer) \
                    or self.wer < 0:
                raise ManifestError("must be a number >= 0", fieldname="wer")


@dataclass(frozen=True)
class ProvenanceEntry:
    """One pipeline stage's audit record. Entries are append-only."""

    stage: str
    at: str
    info: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"stage": self.stage, "at": self.at, "info": self.info}

    @classmethod
    def from_dict(cls, data: Mapping) -> "ProvenanceEntry":
        return cls(stage=str(data["stage"]), at=str(data["at"]),
                   info=dict(data.get("info", {})))


def _utc_now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


@dataclass(frozen=True)
class CorpusManifest:
    """An ordered, immutable collection of segment records plus metadata."""

    segments: tuple[SegmentRecord, ...]
    created_at: str = field(default_factory=_utc_now)
    provenance: tuple[ProvenanceEntry, ...] = ()

    def __post_init__(self):
        seen: set[str] = set()
        for seg in self.segments:
            if seg.segment_id in seen:
                raise ManifestError(
                    f"duplicate segment_id {seg.segment_id!r}")
            seen.add(seg.segment_id)

    @classmethod
    def from_segments(cls, segments: Iterable[SegmentRecord]) -> "CorpusManifest":
        return cls(segments=tuple(segments))

    def __len__(self) -> int:
        return len(self.segments)

    def __iter__(self) -> Iterator[SegmentRecord]:
        return iter(self.segments)

    def get(self, segment_id: str) -> SegmentRecord | None:
        for seg in self.segments:
            if seg.segment_id == segment_id:
                return seg
        return None

    def speakers(self) -> tuple[str, ...]:
        """Distinct speaker ids, sorted."""
        return tuple(sorted({seg.speaker_id for seg in self.segments}))

    def segments_of(self, speaker_id: str) -> tuple[SegmentRecord, ...]:
        return tuple(s for s in self.segments if s.speaker_id == speaker_id)

    def with_segments(self, segments: Iterable[SegmentRecord]) -> "CorpusManifest":
        """New manifest with replaced segments, same metadata."""
        return replace(self, segments=tuple(segments))

    def with_provenance(self, stage: str, info: Mapping | None = None) -> "CorpusManifest":
        """New manifest with one provenance entry appended."""
        entry = ProvenanceEntry(stage=stage, at=_utc_now(),
                                info=dict(info or {}))
        return replace(self, provenance=self.provenance + (entry,))


def _format_float(value: float) -> str:
    if math.isinf(value):
        return "inf"
    return repr(float(value))


def _segment_to_line(seg: SegmentRecord) -> str:
    cols = [
        seg.segment_id,
        seg.audio_path,
        seg.speaker_id,
        _format_float(seg.duration_s),
        str(seg.sample_rate_hz),
        seg.gender,
        seg.transcript,
    ]
    if seg.dialect is not None:
        cols.append(f"dialect={seg.dialect}")
    if seg.hypothesis_transcript is not None:
        cols.append(f"hypothesis={seg.hypothesis_transcript}")
    if seg.wer is not None:
        cols.append(f"wer={_format_float(seg.wer)}")
    return "\t".join(cols)


def _parse_segment_line(line: str, line_number: int,
                        label_set: LabelSet | None) -> SegmentRecord:
    cols = line.split("\t")
    if len(cols) < len(_POSITIONAL_FIELDS):
        raise ManifestError(
            f"expected at least {len(_POSITIONAL_FIELDS)} tab-separated "
            f"fields, got {len(cols)}", line_number=line_number)
    seg_id, audio_path, speaker_id, dur_s, rate_s, gender, transcript = \
        cols[:len(_POSITIONAL_FIELDS)]
    try:
        duration = float(dur_s)
    except ValueError:
        raise ManifestError(f"not a number: {dur_s!r}",
                            line_number=line_number, fieldname="duration_s")
    if not (math.isfinite(duration) and duration > 0):
        raise ManifestError(f"must be > 0, got {dur_s}",
                            line_number=line_number, fieldname="duration_s")
    try:
        rate = int(rate_s)
    except ValueError:
        raise ManifestError(f"not an integer: {rate_s!r}",
                            line_number=line_number, fieldname="sample_rate_hz")

    optional: dict[str, str] = {}
    for extra in cols[len(_POSITIONAL_FIELDS):]:
        key, sep, value = extra.partition("=")
        if not sep:
            raise ManifestError(f"optional field without '=': {extra!r}",
                                line_number=line_number)
        if key not in _OPTIONAL_KEYS:
            raise ManifestError(f"unknown optional field {key!r}",
                                line_number=line_number, fieldname=key)
        if key in optional:
            raise ManifestError(f"duplicate optional field {key!r}",
                                line_number=line_number, fieldname=key)
        optional[key] = value

    dialect = optional.get("dialect")
    if dialect is not None and label_set is not None and dialect not in label_set:
        raise ManifestError(f"unknown dialect code {dialect!r}",
                            line_number=line_number, fieldname="dialect")
    wer_value: float | None = None
    if "wer" in optional:
        try:
            wer_value = float(optional["wer"])
        except ValueError:
            raise ManifestError(f"not a number: {optional['wer']!r}",
                                line_number=line_number, fieldname="wer")

    try:
        return SegmentRecord(
            segment_id=seg_id,
            audio_path=audio_path,
            speaker_id=speaker_id,
            duration_s=duration,
            sample_rate_hz=rate,
            gender=gender,
            transcript=transcript,
            dialect=dialect,
            hypothesis_transcript=optional.get("hypothesis"),
            wer=wer_value,
        )
    except ManifestError as err:
        raise ManifestError(str(err), line_number=line_number) from None


def write_manifest(manifest: CorpusManifest, stream: IO[str]) -> None:
    """Serialize a manifest: version header with JSON metadata, then one
    tab-separated record per line."""
    meta = {
        "created_at": manifest.created_at,
        "provenance": [p.to_dict() for p in manifest.provenance],
    }
    stream.write(MANIFEST_VERSION + "\t"
                 + json.dumps(meta, ensure_ascii=False, sort_keys=True) + "\n")
    for seg in manifest.segments:
        stream.write(_segment_to_line(seg) + "\n")


def parse_manifest(stream: IO[str],
                   label_set: LabelSet | None = None) -> CorpusManifest:
    """Parse a manifest stream. Malformed lines raise ManifestError naming
    the line number and field; duplicate segment ids are rejected."""
    header = stream.readline()
    if not header:
        raise ManifestError("empty stream: missing manifest header",
                            line_number=1)
    header = header.rstrip("\n")
    version, _, meta_json = header.partition("\t")
    if version != MANIFEST_VERSION:
        raise ManifestError(
            f"unsupported manifest version {version!r} "
            f"(expected {MANIFEST_VERSION})", line_number=1)
    created_at = _utc_now()
    provenance: tuple[ProvenanceEntry, ...] = ()
    if meta_json:
        try:
            meta = json.loads(meta_json)
        except json.JSONDecodeError as err:
            raise ManifestError(f"invalid header metadata: {err}",
                                line_number=1)
        created_at = str(meta.get("created_at", created_at))
        provenance = tuple(ProvenanceEntry.from_dict(p)
                           for p in meta.get("provenance", []))

    segments: list[SegmentRecord] = []
    seen: set[str] = set()
    for line_number, raw in enumerate(stream, start=2):
        line = raw.rstrip("\n")
        if not line:
            continue
        seg = _parse_segment_line(line, line_number, label_set)
        if seg.segment_id in seen:
            raise ManifestError(
                f"duplicate segment_id {seg.segment_id!r}",
                line_number=line_number, fieldname="segment_id")
        seen.add(seg.segment_id)
        segments.append(seg)
    return CorpusManifest(segments=tuple(segments), created_at=created_at,
                          provenance=provenance)


def load_manifest(path: str | os.PathLike,
                  label_set: LabelSet | None = None) -> CorpusManifest:
    with open(path, encoding="utf-8") as fh:
        return parse_manifest(fh, label_set=label_set)


def save_manifest(manifest: CorpusManifest, path: str | os.PathLike) -> None:
    """Write a manifest atomically (temp file + rename)."""
    path = os.fspath(path)
    directory = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".dfm.tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            write_manifest(manifest, fh)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


@dataclass(frozen=True)
class CorpusStats:
    """Aggregate corpus statistics for reporting."""

    segment_count: int
    total_hours: float
    speaker_count: int
    gender_fractions: dict[str, float]
    dialect_histogram: dict[str, int]

    def to_dict(self) -> dict:
        return {
            "segment_count": self.segment_count,
            "total_hours": self.total_hours,
            "speaker_count": self.speaker_count,
            "gender_fractions": dict(self.gender_fractions),
            "dialect_histogram": dict(self.dialect_histogram),
        }


def corpus_stats(manifest: CorpusManifest) -> CorpusStats:
    """Total hours, speaker count, gender fractions, and the dialect
    histogram (unlabeled segments fall into an ``unlabeled`` bucket)."""
    total = len(manifest)
    hours = math.fsum(seg.duration_s for seg in manifest) / 3600.0
    gender_counts = {g: 0 for g in GENDERS}
    histogram: dict[str, int] = {}
    for seg in manifest:
        gender_counts[seg.gender] += 1
        key = seg.dialect if seg.dialect is not None else UNLABELED
        histogram[key] = histogram.get(key, 0) + 1
    fractions = {g: (gender_counts[g] / total if total else 0.0)
                 for g in GENDERS}
    return CorpusStats(
        segment_count=total,
        total_hours=hours,
        speaker_count=len(manifest.speakers()),
        gender_fractions=fractions,
        dialect_histogram=histogram,
    )
