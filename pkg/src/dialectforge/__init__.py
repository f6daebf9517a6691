"""dialectforge: corpus curation and evaluation for zero-shot multi-speaker
Arabic TTS."""

__version__ = "0.1.0"

from .adapters import (
    AdapterEnvelope,
    AdapterResult,
    AdapterSpawnError,
    AdapterSpec,
    ClassifierVerdict,
    classify_dialect,
    invoke_adapter,
)
from .audio import AudioBuffer, MelConfig, MelMatrix, log_mel_spectrogram, read_wav
from .corpus import (
    CorpusManifest,
    CorpusStats,
    LabelSet,
    ManifestError,
    SegmentRecord,
    corpus_stats,
    load_manifest,
    parse_manifest,
    save_manifest,
    write_manifest,
)
from .evaluation import (
    EvalReport,
    EvalRunConfig,
    SpeakerEmbedding,
    cosine_similarity,
    evaluate,
    render_report,
    secs_run,
    select_reference,
    spectral_speaker_embedding,
)
from .pipeline import (
    LabelMapping,
    PipelineConfig,
    RejectionLog,
    SplitResult,
    aggregate_dialect_votes,
    assign_dialects,
    filter_mismatched,
    run_pipeline,
    speaker_disjoint_split,
)
from .sequence import (
    EmbeddingInitSpec,
    TokenSequence,
    Vocabulary,
    build_text_sequence,
    build_training_sequence,
    extend_vocabulary,
    init_embedding_rows,
    parse_sequence,
    sequence_to_ids,
)
from .textmetrics import EditCounts, NormalizerConfig, normalize_text, wer, word_edit_distance
