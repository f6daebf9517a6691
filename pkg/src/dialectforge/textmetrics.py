"""Arabic-aware text normalization and word error rate.

WER drives the text-audio mismatch filter: a segment whose ASR hypothesis
differs from its reference transcript in any word gets a WER above zero and
is rejected. The alignment is a standard unit-cost dynamic program over word
tokens; the backtrace prefers substitution over deletion over insertion so
edit-count splits are deterministic.
"""

from __future__ import annotations

import math
import unicodedata
from dataclasses import dataclass
from typing import Sequence

_ALEF_FORMS = {
    "آ": "ا",  # alef with madda
    "أ": "ا",  # alef with hamza above
    "إ": "ا",  # alef with hamza below
    "ٱ": "ا",  # alef wasla
}


@dataclass(frozen=True)
class NormalizerConfig:
    """Text normalization profile applied before tokenization.

    The default is strict: canonical unicode composition only, so that the
    zero-WER filter compares hypotheses against references verbatim. Looser
    matching (diacritics, alef forms, punctuation) is opt-in.
    """

    strip_diacritics: bool = False
    unify_alef_forms: bool = False
    remove_punctuation: bool = False
    unicode_normalize: bool = True

    def to_dict(self) -> dict:
        return {
            "strip_diacritics": self.strip_diacritics,
            "unify_alef_forms": self.unify_alef_forms,
            "remove_punctuation": self.remove_punctuation,
            "unicode_normalize": self.unicode_normalize,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "NormalizerConfig":
        return cls(**{k: bool(v) for k, v in data.items()})


DEFAULT_NORMALIZER = NormalizerConfig()


def _is_arabic_diacritic(ch: str) -> bool:
    cp = ord(ch)
    return 0x0600 <= cp <= 0x06FF and unicodedata.combining(ch) != 0


def normalize_text(text: str,
                   config: NormalizerConfig = DEFAULT_NORMALIZER) -> list[str]:
    """Apply the configured transforms and split on unicode whitespace.

    Returns word tokens; never produces empty tokens.
    """
    if config.unicode_normalize:
        text = unicodedata.normalize("NFC", text)
    if config.unify_alef_forms:
        text = "".join(_ALEF_FORMS.get(ch, ch) for ch in text)
    if config.strip_diacritics:
        text = "".join(ch for ch in text if not _is_arabic_diacritic(ch))
    if config.remove_punctuation:
        text = "".join(
            ch for ch in text if not unicodedata.category(ch).startswith("P"))
    return text.split()


@dataclass(frozen=True)
class EditCounts:
    """Substitution / deletion / insertion counts of a minimal alignment."""

    substitutions: int
    deletions: int
    insertions: int
    reference_length: int

    def __post_init__(self):
        if min(self.substitutions, self.deletions, self.insertions,
               self.reference_length) < 0:
            raise ValueError("edit counts must be non-negative")
        if self.substitutions + self.deletions > self.reference_length:
            raise ValueError(
                "substitutions + deletions cannot exceed the reference "
                "length")

    @property
    def total(self) -> int:
        return self.substitutions + self.deletions + self.insertions


def word_edit_distance(ref: Sequence[str], hyp: Sequence[str]) -> EditCounts:
    """Minimal-edit alignment between token sequences, unit costs.

    The total S+D+I is the unique minimal edit distance; the split among
    equal-cost alignments is not unique, so it is made deterministic: the
    backtrace prefers substitution, then deletion, then insertion, applied
    in a canonical orientation of the pair. Swapping the arguments
    therefore mirrors the alignment exactly (S unchanged, D and I
    exchanged).
    """
    ref_t, hyp_t = tuple(ref), tuple(hyp)
    if (len(hyp_t), hyp_t) < (len(ref_t), ref_t):
        subs, dels, ins = _backtrace_counts(hyp_t, ref_t)
        dels, ins = ins, dels
    else:
        subs, dels, ins = _backtrace_counts(ref_t, hyp_t)
    return EditCounts(substitutions=subs, deletions=dels, insertions=ins,
                      reference_length=len(ref_t))


def _backtrace_counts(ref: tuple, hyp: tuple) -> tuple[int, int, int]:
    n, m = len(ref), len(hyp)
    # dist[i][j] = distance between ref[:i] and hyp[:j]
    dist = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(1, n + 1):
        dist[i][0] = i
    for j in range(1, m + 1):
        dist[0][j] = j
    for i in range(1, n + 1):
        row, prev = dist[i], dist[i - 1]
        ri = ref[i - 1]
        for j in range(1, m + 1):
            row[j] = min(
                prev[j - 1] + (ri != hyp[j - 1]),
                prev[j] + 1,
                row[j - 1] + 1,
            )

    subs = dels = ins = 0
    i, j = n, m
    while i > 0 or j > 0:
        here = dist[i][j]
        if i > 0 and j > 0 and dist[i - 1][j - 1] + (ref[i - 1] != hyp[j - 1]) == here:
            if ref[i - 1] != hyp[j - 1]:
                subs += 1
            i, j = i - 1, j - 1
        elif i > 0 and dist[i - 1][j] + 1 == here:
            dels += 1
            i -= 1
        else:
            ins += 1
            j -= 1
    return subs, dels, ins


def wer(ref_text: str, hyp_text: str,
        config: NormalizerConfig = DEFAULT_NORMALIZER) -> float:
    """Word error rate (S+D+I)/N between two texts after normalization.

    Degenerate empty references: returns 0.0 when the hypothesis is also
    empty, and the +infinity sentinel otherwise, so empty references can
    never slip past a WER threshold.
    """
    counts = word_edit_distance(normalize_text(ref_text, config),
                                normalize_text(hyp_text, config))
    return wer_from_counts(counts)


def wer_from_counts(counts: EditCounts) -> float:
    if counts.reference_length == 0:
        return 0.0 if counts.total == 0 else math.inf
    return counts.total / counts.reference_length


def pooled_wer(counts: Sequence[EditCounts]) -> float:
    """Corpus-level WER: pooled edit counts over pooled reference length."""
    total = sum(c.total for c in counts)
    ref_len = sum(c.reference_length for c in counts)
    if ref_len == 0:
        return 0.0 if total == 0 else math.inf
    return total / ref_len
