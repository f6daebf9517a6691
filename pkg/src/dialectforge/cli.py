"""Command-line entry point: one subcommand per pipeline stage plus
sequence tooling, evaluation, and the annotation service.

Exit codes: 0 success, 1 operational failure (machine-readable JSON error
on stderr), 2 usage error. Every run prints its resolved configuration so
results are reproducible from the log alone.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import annotation, evaluation, pipeline, sequence
from .adapters import AdapterSpec
from .corpus import (
    CorpusManifest,
    LabelSet,
    ManifestError,
    SegmentRecord,
    corpus_stats,
    load_manifest,
    save_manifest,
)
from .textmetrics import NormalizerConfig


def _load_adapter(path: str) -> AdapterSpec:
    with open(path, encoding="utf-8") as fh:
        return AdapterSpec.from_dict(json.load(fh))


def _load_adapter_list(path: str) -> list[AdapterSpec]:
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    if isinstance(data, dict):
        data = [data]
    return [AdapterSpec.from_dict(entry) for entry in data]


def _label_set(args) -> LabelSet:
    if getattr(args, "labels", None):
        return LabelSet.from_file(args.labels)
    return LabelSet.default()


def _normalizer(args) -> NormalizerConfig:
    return NormalizerConfig(
        strip_diacritics=getattr(args, "strip_diacritics", False),
        unify_alef_forms=getattr(args, "unify_alef_forms", False),
        remove_punctuation=getattr(args, "remove_punctuation", False),
        unicode_normalize=not getattr(args, "no_unicode_normalize", False),
    )


def _write_rejections(rejections, path: str | None) -> None:
    if path:
        pipeline.RejectionLog(rejections).save(path)


def cmd_ingest(args) -> int:
    """JSONL records in, validated dfm manifest out."""
    records = []
    with open(args.input, encoding="utf-8") as fh:
        for line_number, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                data = json.loads(line)
                records.append(SegmentRecord(
                    segment_id=str(data["segment_id"]),
                    audio_path=str(data["audio_path"]),
                    speaker_id=str(data["speaker_id"]),
                    duration_s=float(data["duration_s"]),
                    sample_rate_hz=int(data["sample_rate_hz"]),
                    gender=str(data.get("gender", "unknown")),
                    transcript=str(data.get("transcript", "")),
                    dialect=data.get("dialect"),
                    hypothesis_transcript=data.get("hypothesis_transcript"),
                    wer=data.get("wer"),
                ))
            except (KeyError, ValueError) as err:
                raise ManifestError(str(err), line_number=line_number)
    manifest = CorpusManifest.from_segments(records).with_provenance(
        "ingest", {"source": args.input})
    save_manifest(manifest, args.out)
    print(f"ingested {len(manifest)} segments -> {args.out}")
    return 0


def cmd_stats(args) -> int:
    manifest = load_manifest(args.manifest)
    stats = corpus_stats(manifest)
    text = json.dumps(stats.to_dict(), ensure_ascii=False, indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    print(text)
    return 0


def cmd_denoise(args) -> int:
    manifest = load_manifest(args.manifest)
    out, rejections = pipeline.denoise_segments(manifest,
                                                _load_adapter(args.adapter))
    save_manifest(out, args.out)
    _write_rejections(rejections, args.rejects)
    print(f"denoise: {len(manifest)} in, {len(out)} out, "
          f"{len(rejections)} rejected")
    return 0


def cmd_transcribe(args) -> int:
    manifest = load_manifest(args.manifest)
    out, rejections = pipeline.transcribe_segments(manifest,
                                                   _load_adapter(args.adapter))
    save_manifest(out, args.out)
    _write_rejections(rejections, args.rejects)
    print(f"asr: {len(manifest)} in, {len(out)} out, "
          f"{len(rejections)} rejected")
    return 0


def cmd_filter(args) -> int:
    manifest = load_manifest(args.manifest)
    out, rejections = pipeline.filter_mismatched(
        manifest, _normalizer(args), threshold=args.threshold, jobs=args.jobs)
    save_manifest(out, args.out)
    _write_rejections(rejections, args.rejects)
    print(f"filter: {len(manifest)} in, {len(out)} out, "
          f"{len(rejections)} rejected")
    return 0


def cmd_label(args) -> int:
    labels = _label_set(args)
    manifest = load_manifest(args.manifest, label_set=labels)
    mapping = (pipeline.LabelMapping.from_file(args.mapping, labels)
               if args.mapping else pipeline.LabelMapping.identity(labels))
    classifiers = _load_adapter_list(args.adapters)
    out, rejections = pipeline.assign_dialects(manifest, classifiers, mapping)
    save_manifest(out, args.out)
    _write_rejections(rejections, args.rejects)
    histogram = out.provenance[-1].info.get("histogram", {})
    print(f"label: {len(out)} segments; histogram "
          f"{json.dumps(histogram, ensure_ascii=False)}")
    return 0


def cmd_split(args) -> int:
    manifest = load_manifest(args.manifest)
    result = pipeline.speaker_disjoint_split(manifest, args.holdout, args.seed)
    save_manifest(result.train, args.train)
    save_manifest(result.eval, args.eval)
    print(f"split: {len(result.train.speakers())} train speakers, "
          f"{len(result.eval.speakers())} eval speakers (seed {result.seed})")
    return 0


def cmd_extend_vocab(args) -> int:
    if args.base:
        base = sequence.Vocabulary.load(args.base)
    elif args.base_from_manifest:
        manifest = load_manifest(args.base_from_manifest)
        base = sequence.char_vocabulary(
            seg.transcript for seg in manifest)
    else:
        raise ValueError("need --base or --base-from-manifest")
    labels = _label_set(args)
    extended = sequence.write_extended_vocabulary(base, labels.codes,
                                                  args.out)
    print(f"extended vocabulary: {base.size} -> {extended.size} entries "
          f"-> {args.out}")
    return 0


def cmd_build_seq(args) -> int:
    vocab = sequence.Vocabulary.load(args.vocab)
    text_ids = sequence.encode_chars(vocab, args.text)
    seq = sequence.build_text_sequence(vocab, text_ids, args.lang,
                                       dialect=args.dialect)
    if args.k or args.audio_ids:
        audio_ids = [int(x) for x in (args.audio_ids or "").split(",") if x]
        seq = sequence.build_training_sequence(vocab, args.k, seq, audio_ids)
    ids = sequence.sequence_to_ids(vocab, seq)
    payload = {"ids": ids, "tokens": [vocab.token(i) for i in ids]}
    text = json.dumps(payload, ensure_ascii=False)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    print(text)
    return 0


def cmd_eval(args) -> int:
    manifest = load_manifest(args.manifest)
    models: dict[str, dict[str, str]] = {}
    for entry in args.model:
        name, _, directory = entry.partition("=")
        if not directory:
            raise ValueError(f"--model must be name=dir, got {entry!r}")
        synth_set = {p.stem: str(p) for p in sorted(Path(directory).glob("*.wav"))}
        if not synth_set:
            raise ValueError(f"no .wav files under {directory!r}")
        models[name] = synth_set
    config = evaluation.EvalRunConfig(
        runs=args.runs,
        min_reference_s=args.min_ref,
        seed=args.seed,
        asr=_load_adapter(args.asr) if args.asr else None,
        embedder=_load_adapter(args.embedder) if args.embedder else None,
        independent_reference=not args.self_reference,
    )
    report = evaluation.evaluate(models, manifest, config, mos_csv=args.mos)
    report.save(args.out)
    if args.markdown:
        Path(args.markdown).write_text(
            evaluation.render_report(report, "markdown"), encoding="utf-8")
    print(evaluation.render_report(report, "markdown"))
    return 0


def cmd_report(args) -> int:
    report = evaluation.EvalReport.load(args.report)
    text = evaluation.render_report(report, args.format)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    print(text)
    return 0


def cmd_run_pipeline(args) -> int:
    config = pipeline.PipelineConfig.from_file(args.config)
    outcome = pipeline.run_pipeline(config)
    print(json.dumps(outcome.report.to_dict(), ensure_ascii=False, indent=2))
    if outcome.report.failed:
        print(json.dumps({"error": outcome.report.error,
                          "halted_at": outcome.report.halted_at}),
              file=sys.stderr)
        return 1
    return 0


def cmd_serve_annotation(args) -> int:
    items = annotation.load_items(args.items)
    store = annotation.AnnotationStore(args.store, items)
    guideline = (Path(args.guideline).read_text(encoding="utf-8")
                 if args.guideline else None)
    kwargs = {"scale_label": args.scale_label, "ui_dir": args.ui}
    if guideline is not None:
        kwargs["guideline"] = guideline
    app = annotation.create_app(store, **kwargs)
    import uvicorn
    uvicorn.run(app, host=args.host, port=args.port)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dialectforge",
        description="Corpus curation and evaluation for zero-shot "
                    "multi-speaker Arabic TTS.")
    parser.add_argument("--verbose", action="store_true",
                        help="log at INFO level")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="JSONL segment records -> manifest")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_ingest)

    p = sub.add_parser("stats", help="corpus statistics from a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_stats)

    p = sub.add_parser("denoise", help="route audio through a denoise adapter")
    p.add_argument("--manifest", required=True)
    p.add_argument("--adapter", required=True, help="adapter spec JSON file")
    p.add_argument("--out", required=True)
    p.add_argument("--rejects")
    p.set_defaults(fn=cmd_denoise)

    p = sub.add_parser("transcribe",
                       help="attach ASR hypotheses via an asr adapter")
    p.add_argument("--manifest", required=True)
    p.add_argument("--adapter", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--rejects")
    p.set_defaults(fn=cmd_transcribe)

    p = sub.add_parser("filter",
                       help="drop segments with WER above the threshold")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--rejects")
    p.add_argument("--threshold", type=float, default=0.0)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--strip-diacritics", action="store_true")
    p.add_argument("--unify-alef-forms", action="store_true")
    p.add_argument("--remove-punctuation", action="store_true")
    p.add_argument("--no-unicode-normalize", action="store_true")
    p.set_defaults(fn=cmd_filter)

    p = sub.add_parser("label", help="ensemble dialect pseudo-labeling")
    p.add_argument("--manifest", required=True)
    p.add_argument("--adapters", required=True,
                   help="JSON file with a list of classify adapter specs")
    p.add_argument("--mapping", help="native-label mapping JSON")
    p.add_argument("--labels", help="dialect label set file")
    p.add_argument("--out", required=True)
    p.add_argument("--rejects")
    p.set_defaults(fn=cmd_label)

    p = sub.add_parser("split", help="speaker-disjoint train/eval split")
    p.add_argument("--manifest", required=True)
    p.add_argument("--holdout", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--train", required=True)
    p.add_argument("--eval", required=True)
    p.set_defaults(fn=cmd_split)

    p = sub.add_parser("extend-vocab",
                       help="append dialect tokens to a vocabulary")
    p.add_argument("--base", help="base vocabulary file, one token per line")
    p.add_argument("--base-from-manifest",
                   help="build a char-level base vocabulary from a manifest")
    p.add_argument("--labels", help="dialect label set file")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_extend_vocab)

    p = sub.add_parser("build-seq", help="build a conditioning sequence")
    p.add_argument("--vocab", required=True)
    p.add_argument("--text", required=True)
    p.add_argument("--lang", default="ar")
    p.add_argument("--dialect")
    p.add_argument("--k", type=int, default=0,
                   help="speaker slots (makes a training sequence)")
    p.add_argument("--audio-ids", help="comma-separated audio token ids")
    p.add_argument("--out")
    p.set_defaults(fn=cmd_build_seq)

    p = sub.add_parser("eval", help="SECS/WER/MOS evaluation")
    p.add_argument("--manifest", required=True)
    p.add_argument("--model", action="append", required=True,
                   metavar="NAME=DIR",
                   help="model name and directory of <segment_id>.wav files")
    p.add_argument("--runs", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--min-ref", type=float, default=5.0)
    p.add_argument("--asr", help="asr adapter spec JSON file")
    p.add_argument("--embedder", help="embed adapter spec JSON file")
    p.add_argument("--self-reference", action="store_true",
                   help="allow the evaluated clip itself as reference")
    p.add_argument("--mos", help="annotation-service export CSV")
    p.add_argument("--out", required=True, help="report JSON output")
    p.add_argument("--markdown", help="also render markdown here")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("report", help="render a saved evaluation report")
    p.add_argument("--report", required=True)
    p.add_argument("--format", choices=["markdown", "csv"],
                   default="markdown")
    p.add_argument("--out")
    p.set_defaults(fn=cmd_report)

    p = sub.add_parser("run-pipeline",
                       help="run all curation stages from a config file")
    p.add_argument("--config", required=True)
    p.set_defaults(fn=cmd_run_pipeline)

    p = sub.add_parser("serve-annotation", help="start the listening-test "
                                                "HTTP service")
    p.add_argument("--items", required=True, help="items JSON file")
    p.add_argument("--store", required=True, help="persistence directory")
    p.add_argument("--guideline", help="guideline text file")
    p.add_argument("--scale-label", default=annotation.DEFAULT_SCALE_LABEL)
    p.add_argument("--ui", help="built frontend directory to serve at /ui")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8321)
    p.set_defaults(fn=cmd_serve_annotation)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s")
    resolved = {k: v for k, v in vars(args).items()
                if k not in ("fn",) and not k.startswith("_")}
    print("resolved-config " + json.dumps(resolved, ensure_ascii=False,
                                          sort_keys=True, default=str))
    try:
        return args.fn(args)
    except Exception as err:
        print(json.dumps({"error": str(err),
                          "type": type(err).__name__}),
              file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
