from __future__ import annotations

import sys

import numpy as np
import pytest

from dialectforge.audio import AudioBuffer, write_wav
from dialectforge.corpus import CorpusManifest, SegmentRecord

STUB = [sys.executable, "-m", "dialectforge.stubs"]


def make_segment(segment_id="seg0001", speaker_id="spk001", duration_s=6.0,
                 transcript="مرحبا صباح الخير", **overrides) -> SegmentRecord:
    fields = dict(
        segment_id=segment_id,
        audio_path=f"wavs/{segment_id}.wav",
        speaker_id=speaker_id,
        duration_s=duration_s,
        sample_rate_hz=16000,
        gender="male",
        transcript=transcript,
    )
    fields.update(overrides)
    return SegmentRecord(**fields)


def make_manifest(*segments: SegmentRecord) -> CorpusManifest:
    return CorpusManifest.from_segments(segments)


@pytest.fixture
def tone_wav(tmp_path):
    """Factory writing a 16 kHz sine WAV; returns its path."""

    def write(name="tone.wav", freq=300.0, duration_s=1.0, amplitude=0.5,
              sample_rate=16000):
        t = np.arange(int(duration_s * sample_rate)) / sample_rate
        buf = AudioBuffer(amplitude * np.sin(2 * np.pi * freq * t),
                          sample_rate)
        path = tmp_path / name
        write_wav(path, buf)
        return path

    return write
