"""Conditioning-sequence construction and vocabulary extension.

Training sequences follow the autoregressive TTS layout: k opaque speaker
slots, a text part delimited by [bots]/[eots] with the language token first,
and an audio part delimited by [boas]/[eoas]. Dialect conditioning inserts
one reserved dialect token immediately after the language token; with no
dialect token the emitted ids are byte-identical to the pre-extension
format, so extended vocabularies stay backward compatible.
"""

from __future__ import annotations

import json
import os
import re
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

BOTS = "[bots]"
EOTS = "[eots]"
BOAS = "[boas]"
EOAS = "[eoas]"
SPKR = "[spkr]"

_MARKERS = (BOTS, EOTS, BOAS, EOAS)
_LANG_RE = re.compile(r"^\[lang:([^\[\]\s]+)\]$")
_DIALECT_RE = re.compile(r"^\[dialect:([^\[\]\s]+)\]$")


class VocabularyError(ValueError):
    """Raised for invalid vocabulary content or extension collisions."""


class SequenceError(ValueError):
    """Raised for structurally invalid token sequences."""


def lang_token(code: str) -> str:
    return f"[lang:{code}]"


def dialect_token(code: str) -> str:
    return f"[dialect:{code}]"


def is_reserved_token(token: str) -> bool:
    """True for structural tokens: markers, speaker slots, lang, dialect."""
    return (token in _MARKERS or token == SPKR
            or bool(_LANG_RE.match(token)) or bool(_DIALECT_RE.match(token)))


class Vocabulary:
    """Ordered token inventory with dense ids 0..size-1."""

    def __init__(self, tokens: Iterable[str]):
        self._tokens: list[str] = []
        self._ids: dict[str, int] = {}
        for token in tokens:
            if not isinstance(token, str) or not token:
                raise VocabularyError(f"invalid token {token!r}")
            if "\n" in token or "\r" in token:
                raise VocabularyError("tokens must not contain newlines")
            if token in self._ids:
                raise VocabularyError(f"duplicate token {token!r}")
            self._ids[token] = len(self._tokens)
            self._tokens.append(token)

    @property
    def size(self) -> int:
        return len(self._tokens)

    def __len__(self) -> int:
        return len(self._tokens)

    def __contains__(self, token: object) -> bool:
        return token in self._ids

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Vocabulary) and self._tokens == other._tokens

    def id(self, token: str) -> int:
        try:
            return self._ids[token]
        except KeyError:
            raise VocabularyError(f"token not in vocabulary: {token!r}") from None

    def token(self, token_id: int) -> str:
        if not 0 <= token_id < len(self._tokens):
            raise VocabularyError(f"id out of range: {token_id}")
        return self._tokens[token_id]

    def tokens(self) -> tuple[str, ...]:
        return tuple(self._tokens)

    def extend(self, new_tokens: Sequence[str]) -> "Vocabulary":
        """New vocabulary with tokens appended; existing ids unchanged."""
        for token in new_tokens:
            if token in self._ids:
                raise VocabularyError(
                    f"token already in vocabulary: {token!r}")
        return Vocabulary(self._tokens + list(new_tokens))

    def save(self, path: str | os.PathLike) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for token in self._tokens:
                fh.write(token + "\n")

    @classmethod
    def load(cls, path: str | os.PathLike) -> "Vocabulary":
        with open(path, encoding="utf-8") as fh:
            return cls(line.rstrip("\n") for line in fh)


def extend_vocabulary(base: Vocabulary, labels: Sequence[str]) -> Vocabulary:
    """Append one dialect token per label; ids continue after the base."""
    seen: set[str] = set()
    tokens: list[str] = []
    for code in labels:
        if code in seen:
            raise VocabularyError(f"duplicate dialect label {code!r}")
        seen.add(code)
        tokens.append(dialect_token(code))
    return base.extend(tokens)


def write_extended_vocabulary(base: Vocabulary, labels: Sequence[str],
                              path: str | os.PathLike) -> Vocabulary:
    """Extend, save the extended vocabulary, and record sizes in a JSON
    sidecar next to it (``<path>.meta.json``)."""
    extended = extend_vocabulary(base, labels)
    extended.save(path)
    sidecar = os.fspath(path) + ".meta.json"
    with open(sidecar, "w", encoding="utf-8") as fh:
        json.dump({
            "base_size": base.size,
            "extended_size": extended.size,
            "added_tokens": [dialect_token(c) for c in labels],
        }, fh, ensure_ascii=False, indent=2)
        fh.write("\n")
    return extended


@dataclass(frozen=True)
class TokenSequence:
    """Structured conditioning sequence.

    ``speaker_slots`` is the number of opaque speaker-latent positions
    prefixed to the token part (zero for a text-only sequence). The dialect
    code, when present, sits immediately after the language token.
    """

    speaker_slots: int
    lang: str
    dialect: str | None
    text_ids: tuple[int, ...]
    audio_ids: tuple[int, ...] | None = None


def _check_content_ids(vocab: Vocabulary, ids: Sequence[int], part: str) -> tuple[int, ...]:
    out = []
    for token_id in ids:
        token = vocab.token(token_id)  # range-checks
        if is_reserved_token(token):
            raise SequenceError(
                f"reserved token {token!r} (id {token_id}) not allowed "
                f"inside the {part} part")
        out.append(int(token_id))
    return tuple(out)


def build_text_sequence(vocab: Vocabulary, text_ids: Sequence[int],
                        lang: str, dialect: str | None = None) -> TokenSequence:
    """Text part only: [bots][lang]([dialect]) t1..tn [eots]."""
    if lang_token(lang) not in vocab:
        raise SequenceError(f"unknown language code {lang!r}")
    if dialect is not None and dialect_token(dialect) not in vocab:
        raise SequenceError(f"unknown dialect code {dialect!r}")
    return TokenSequence(
        speaker_slots=0,
        lang=lang,
        dialect=dialect,
        text_ids=_check_content_ids(vocab, text_ids, "text"),
        audio_ids=None,
    )


def build_training_sequence(vocab: Vocabulary, speaker_slots: int,
                            text_sequence: TokenSequence,
                            audio_ids: Sequence[int]) -> TokenSequence:
    """Full training layout: s1..sk [bots][lang]([dialect]) t.. [eots]
    [boas] a1..al [eoas]. Speaker conditioning is required (k >= 1)."""
    if text_sequence.audio_ids is not None:
        raise SequenceError("text sequence already has an audio part")
    if speaker_slots < 1:
        raise SequenceError(
            f"speaker slot count must be >= 1, got {speaker_slots}")
    if not audio_ids:
        raise SequenceError("audio token list must be non-empty")
    return TokenSequence(
        speaker_slots=speaker_slots,
        lang=text_sequence.lang,
        dialect=text_sequence.dialect,
        text_ids=text_sequence.text_ids,
        audio_ids=_check_content_ids(vocab, audio_ids, "audio"),
    )


def sequence_to_ids(vocab: Vocabulary, sequence: TokenSequence) -> list[int]:
    """Flatten a sequence to vocabulary ids."""
    ids = [vocab.id(SPKR)] * sequence.speaker_slots
    ids.append(vocab.id(BOTS))
    ids.append(vocab.id(lang_token(sequence.lang)))
    if sequence.dialect is not None:
        ids.append(vocab.id(dialect_token(sequence.dialect)))
    ids.extend(sequence.text_ids)
    ids.append(vocab.id(EOTS))
    if sequence.audio_ids is not None:
        ids.append(vocab.id(BOAS))
        ids.extend(sequence.audio_ids)
        ids.append(vocab.id(EOAS))
    return ids


def parse_sequence(vocab: Vocabulary, ids: Sequence[int]) -> TokenSequence:
    """Recover the structure of a flat id sequence.

    Rejects missing, duplicated, or disordered markers, and a dialect token
    anywhere but immediately after the language token; the error names the
    first violation encountered.
    """
    tokens = [vocab.token(i) for i in ids]
    pos = 0

    speaker_slots = 0
    while pos < len(tokens) and tokens[pos] == SPKR:
        speaker_slots += 1
        pos += 1

    if pos >= len(tokens):
        raise SequenceError(f"missing {BOTS} marker")
    if tokens[pos] != BOTS:
        raise SequenceError(
            f"marker order: expected {BOTS}, found {tokens[pos]!r}")
    pos += 1

    if pos >= len(tokens) or not _LANG_RE.match(tokens[pos]):
        found = tokens[pos] if pos < len(tokens) else "end of sequence"
        raise SequenceError(
            f"expected language token after {BOTS}, found {found!r}")
    lang = _LANG_RE.match(tokens[pos]).group(1)
    pos += 1

    dialect = None
    if pos < len(tokens) and _DIALECT_RE.match(tokens[pos]):
        dialect = _DIALECT_RE.match(tokens[pos]).group(1)
        pos += 1

    text_ids: list[int] = []
    while pos < len(tokens) and tokens[pos] != EOTS:
        token = tokens[pos]
        if _DIALECT_RE.match(token):
            raise SequenceError(
                "dialect token not immediately after the language token")
        if is_reserved_token(token):
            raise SequenceError(
                f"marker order: unexpected {token!r} inside the text part")
        text_ids.append(int(ids[pos]))
        pos += 1
    if pos >= len(tokens):
        raise SequenceError(f"missing {EOTS} marker")
    pos += 1  # consume [eots]

    audio_ids: tuple[int, ...] | None = None
    if pos < len(tokens):
        if tokens[pos] != BOAS:
            raise SequenceError(
                f"marker order: expected {BOAS} after {EOTS}, "
                f"found {tokens[pos]!r}")
        pos += 1
        collected: list[int] = []
        while pos < len(tokens) and tokens[pos] != EOAS:
            if is_reserved_token(tokens[pos]):
                raise SequenceError(
                    f"marker order: unexpected {tokens[pos]!r} inside "
                    "the audio part")
            collected.append(int(ids[pos]))
            pos += 1
        if pos >= len(tokens):
            raise SequenceError(f"missing {EOAS} marker")
        if not collected:
            raise SequenceError("empty audio part")
        pos += 1  # consume [eoas]
        if pos != len(tokens):
            raise SequenceError(
                f"marker order: trailing tokens after {EOAS}")
        audio_ids = tuple(collected)

    return TokenSequence(speaker_slots=speaker_slots, lang=lang,
                         dialect=dialect, text_ids=tuple(text_ids),
                         audio_ids=audio_ids)


@dataclass(frozen=True)
class EmbeddingInitSpec:
    """Initialization request for newly added embedding rows.

    Rows are drawn from the standard normal distribution (mean 0,
    variance 1) with a fixed seed for reproducibility.
    """

    row_count: int
    dim: int
    seed: int = 0


def init_embedding_rows(init: EmbeddingInitSpec) -> np.ndarray:
    """Seeded standard-normal matrix of shape [row_count, dim]."""
    if init.row_count <= 0:
        raise ValueError(f"row_count must be > 0, got {init.row_count}")
    if init.dim <= 0:
        raise ValueError(f"dim must be > 0, got {init.dim}")
    rng = np.random.default_rng(init.seed)
    return rng.standard_normal((init.row_count, init.dim))


def char_vocabulary(texts: Iterable[str],
                    langs: Sequence[str] = ("ar",)) -> Vocabulary:
    """Desk-scale character tokenizer vocabulary.

    Real deployments bring their own BPE inventory; this builds markers,
    speaker slot, language tokens, then the sorted characters of ``texts``.
    """
    chars: set[str] = set()
    for text in texts:
        chars.update(ch for ch in text if ch not in ("\n", "\r"))
    tokens = [SPKR, BOTS, EOTS, BOAS, EOAS]
    tokens.extend(lang_token(code) for code in langs)
    tokens.extend(sorted(chars))
    return Vocabulary(tokens)


def encode_chars(vocab: Vocabulary, text: str) -> list[int]:
    """Character-level encoding against a char_vocabulary."""
    try:
        return [vocab.id(ch) for ch in text]
    except VocabularyError as err:
        raise VocabularyError(f"cannot encode text: {err}") from None
