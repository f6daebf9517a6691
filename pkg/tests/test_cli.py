from __future__ import annotations

import json

import pytest

from dialectforge.cli import main
from dialectforge.corpus import load_manifest
from dialectforge.minicorpus import big_speaker_manifest, generate_mini_corpus
from dialectforge.pipeline import RejectionLog
from dialectforge.corpus import save_manifest
from tests.conftest import STUB


def run(argv, capsys):
    code = main(argv)
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def filtered_corpus_manifest(tmp_path, segments=10, corrupted=4, seed=0):
    corpus = generate_mini_corpus(tmp_path / "corpus", segments=segments,
                                  speakers=3, corrupted=corrupted, seed=seed,
                                  write_audio=False)
    with open(corpus.asr_fixture_path, encoding="utf-8") as fh:
        fixture = json.load(fh)
    from dataclasses import replace
    segments_with_hyp = [
        replace(seg, hypothesis_transcript=fixture[f"{seg.segment_id}.wav"])
        for seg in corpus.manifest
    ]
    manifest = corpus.manifest.with_segments(segments_with_hyp)
    path = tmp_path / "with_hyp.dfm"
    save_manifest(manifest, path)
    return corpus, path


class TestUsage:
    def test_unknown_subcommand_exits_2_with_usage(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["frobnicate"])
        assert exc.value.code == 2
        assert "usage" in capsys.readouterr().err

    def test_missing_required_flag_exits_2(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["stats"])
        assert exc.value.code == 2

    def test_resolved_config_printed(self, tmp_path, capsys):
        corpus = generate_mini_corpus(tmp_path / "c", segments=4, speakers=2,
                                      corrupted=0, seed=0, write_audio=False)
        code, out, _ = run(["stats", "--manifest",
                            str(corpus.manifest_path)], capsys)
        assert code == 0
        first = out.splitlines()[0]
        assert first.startswith("resolved-config ")
        resolved = json.loads(first[len("resolved-config "):])
        assert resolved["command"] == "stats"
        assert resolved["manifest"] == str(corpus.manifest_path)

    def test_operational_failure_exits_1_with_json_error(self, tmp_path,
                                                         capsys):
        code, _, err = run(["stats", "--manifest",
                            str(tmp_path / "missing.dfm")], capsys)
        assert code == 1
        assert json.loads(err.strip())["type"] == "FileNotFoundError"


class TestStageCommands:
    def test_filter_conservation(self, tmp_path, capsys):
        corpus, manifest_path = filtered_corpus_manifest(tmp_path)
        out_path = tmp_path / "out.dfm"
        rejects_path = tmp_path / "rej.jsonl"
        code, _, _ = run(["filter", "--manifest", str(manifest_path),
                          "--out", str(out_path),
                          "--rejects", str(rejects_path)], capsys)
        assert code == 0
        retained = load_manifest(out_path)
        rejections = RejectionLog.load(rejects_path)
        assert len(retained) + len(rejections) == 10
        assert len(retained) == 6
        assert {r.segment_id for r in rejections.entries} == \
            set(corpus.corrupted_ids)

    def test_split_paper_counts(self, tmp_path, capsys):
        manifest = big_speaker_manifest(17341)
        manifest_path = tmp_path / "big.dfm"
        save_manifest(manifest, manifest_path)
        train_path = tmp_path / "train.dfm"
        eval_path = tmp_path / "eval.dfm"
        code, out, _ = run(["split", "--manifest", str(manifest_path),
                            "--holdout", "31", "--seed", "7",
                            "--train", str(train_path),
                            "--eval", str(eval_path)], capsys)
        assert code == 0
        assert "17310 train speakers" in out
        assert len(load_manifest(eval_path).speakers()) == 31

    def test_stats_output_file(self, tmp_path, capsys):
        corpus = generate_mini_corpus(tmp_path / "c", segments=4, speakers=2,
                                      corrupted=0, seed=0, write_audio=False)
        stats_path = tmp_path / "stats.json"
        code, _, _ = run(["stats", "--manifest", str(corpus.manifest_path),
                          "--out", str(stats_path)], capsys)
        assert code == 0
        stats = json.loads(stats_path.read_text(encoding="utf-8"))
        assert stats["segment_count"] == 4

    def test_transcribe_with_stub(self, tmp_path, capsys):
        corpus = generate_mini_corpus(tmp_path / "c", segments=4, speakers=2,
                                      corrupted=1, seed=0, write_audio=False)
        adapter_path = tmp_path / "asr.json"
        adapter_path.write_text(json.dumps({
            "name": "asr", "kind": "asr",
            "command": STUB + ["asr", "--fixture",
                               str(corpus.asr_fixture_path)],
            "timeout_s": 30,
        }), encoding="utf-8")
        out_path = tmp_path / "hyp.dfm"
        code, _, _ = run(["transcribe", "--manifest",
                          str(corpus.manifest_path),
                          "--adapter", str(adapter_path),
                          "--out", str(out_path)], capsys)
        assert code == 0
        out = load_manifest(out_path)
        assert all(seg.hypothesis_transcript is not None for seg in out)

    def test_label_with_stubs(self, tmp_path, capsys):
        corpus = generate_mini_corpus(tmp_path / "c", segments=6, speakers=2,
                                      corrupted=0, seed=2, write_audio=False)
        adapters_path = tmp_path / "classifiers.json"
        adapters_path.write_text(json.dumps([
            {"name": f"clf{i}", "kind": "classify",
             "command": STUB + ["classify", "--fixture", str(path)],
             "timeout_s": 30}
            for i, path in enumerate(corpus.classifier_fixture_paths)
        ]), encoding="utf-8")
        out_path = tmp_path / "labeled.dfm"
        code, _, _ = run(["label", "--manifest", str(corpus.manifest_path),
                          "--adapters", str(adapters_path),
                          "--out", str(out_path)], capsys)
        assert code == 0
        labeled = load_manifest(out_path)
        assert all(seg.dialect is not None for seg in labeled)

    def test_ingest_jsonl(self, tmp_path, capsys):
        jsonl = tmp_path / "in.jsonl"
        jsonl.write_text(json.dumps({
            "segment_id": "s1", "audio_path": "a.wav", "speaker_id": "spk",
            "duration_s": 2.0, "sample_rate_hz": 16000, "gender": "female",
            "transcript": "مرحبا",
        }) + "\n", encoding="utf-8")
        out_path = tmp_path / "out.dfm"
        code, _, _ = run(["ingest", "--input", str(jsonl),
                          "--out", str(out_path)], capsys)
        assert code == 0
        manifest = load_manifest(out_path)
        assert manifest.segments[0].gender == "female"
        assert manifest.provenance[-1].stage == "ingest"


class TestVocabCommands:
    def test_extend_vocab_from_manifest(self, tmp_path, capsys):
        corpus = generate_mini_corpus(tmp_path / "c", segments=4, speakers=2,
                                      corrupted=0, seed=0, write_audio=False)
        out_path = tmp_path / "vocab.txt"
        code, out, _ = run(["extend-vocab",
                            "--base-from-manifest", str(corpus.manifest_path),
                            "--out", str(out_path)], capsys)
        assert code == 0
        meta = json.loads((tmp_path / "vocab.txt.meta.json").read_text())
        assert meta["extended_size"] - meta["base_size"] == 22

    def test_build_seq_with_dialect(self, tmp_path, capsys):
        corpus = generate_mini_corpus(tmp_path / "c", segments=4, speakers=2,
                                      corrupted=0, seed=0, write_audio=False)
        vocab_path = tmp_path / "vocab.txt"
        run(["extend-vocab", "--base-from-manifest",
             str(corpus.manifest_path), "--out", str(vocab_path)], capsys)
        text = corpus.manifest.segments[0].transcript
        code, out, _ = run(["build-seq", "--vocab", str(vocab_path),
                            "--text", text, "--lang", "ar",
                            "--dialect", "EGY"], capsys)
        assert code == 0
        payload = json.loads(out.splitlines()[-1])
        tokens = payload["tokens"]
        assert tokens[0] == "[bots]"
        assert tokens[1] == "[lang:ar]"
        assert tokens[2] == "[dialect:EGY]"
        assert tokens[-1] == "[eots]"


class TestEvalCommand:
    def test_eval_self_synthesis(self, tmp_path, capsys):
        corpus = generate_mini_corpus(tmp_path / "c", segments=6, speakers=2,
                                      corrupted=0, seed=0, write_audio=True)
        synth_dir = tmp_path / "synth"
        synth_dir.mkdir()
        import shutil
        for seg in corpus.manifest:
            shutil.copyfile(seg.audio_path, synth_dir / f"{seg.segment_id}.wav")
        report_path = tmp_path / "report.json"
        code, out, _ = run(["eval", "--manifest", str(corpus.manifest_path),
                            "--model", f"baseline={synth_dir}",
                            "--runs", "2", "--self-reference",
                            "--out", str(report_path)], capsys)
        assert code == 0
        report = json.loads(report_path.read_text(encoding="utf-8"))
        assert report["rows"][0]["model"] == "baseline"
        assert "| baseline |" in out

    def test_report_rendering_roundtrip(self, tmp_path, capsys):
        report_path = tmp_path / "report.json"
        report_path.write_text(json.dumps({
            "rows": [{"model": "baseline", "wer": 0.0642, "secs": 0.755,
                      "mos": None}],
            "per_run_secs": {"baseline": [0.75, 0.76]},
            "config": {"runs": 2},
        }), encoding="utf-8")
        code, out, _ = run(["report", "--report", str(report_path),
                            "--format", "csv"], capsys)
        assert code == 0
        assert "model,wer,secs" in out


class TestRunPipelineCommand:
    def test_run_pipeline_from_config(self, tmp_path, capsys):
        corpus = generate_mini_corpus(tmp_path / "corpus", segments=12,
                                      speakers=4, corrupted=3, seed=5)
        config = {
            "input_manifest": str(corpus.manifest_path),
            "workdir": str(tmp_path / "work"),
            "seed": 3,
            "holdout_count": 2,
            "stages": {
                "denoise": {"adapter": {
                    "name": "denoiser", "kind": "denoise",
                    "command": STUB + ["denoise", "--out-dir",
                                       str(tmp_path / "denoised")],
                    "timeout_s": 30}},
                "asr": {"adapter": {
                    "name": "asr", "kind": "asr",
                    "command": STUB + ["asr", "--fixture",
                                       str(corpus.asr_fixture_path)],
                    "timeout_s": 30}},
                "label": {"adapters": [
                    {"name": f"clf{i}", "kind": "classify",
                     "command": STUB + ["classify", "--fixture", str(path)],
                     "timeout_s": 30}
                    for i, path in enumerate(corpus.classifier_fixture_paths)
                ]},
            },
        }
        config_path = tmp_path / "pipeline.json"
        config_path.write_text(json.dumps(config), encoding="utf-8")
        code, out, _ = run(["run-pipeline", "--config", str(config_path)],
                           capsys)
        assert code == 0
        assert (tmp_path / "work" / "05_train.dfm").exists()
        assert (tmp_path / "work" / "report.json").exists()

    def test_failed_pipeline_exits_1(self, tmp_path, capsys):
        corpus = generate_mini_corpus(tmp_path / "corpus", segments=4,
                                      speakers=2, corrupted=1, seed=5)
        config = {
            "input_manifest": str(corpus.manifest_path),
            "workdir": str(tmp_path / "work"),
            "holdout_count": 1,
            "stages": {
                "denoise": {"enabled": False},
                "asr": {"adapter": {
                    "name": "asr", "kind": "asr",
                    "command": ["/nonexistent/whisper"]}},
            },
        }
        config_path = tmp_path / "pipeline.json"
        config_path.write_text(json.dumps(config), encoding="utf-8")
        code, _, err = run(["run-pipeline", "--config", str(config_path)],
                           capsys)
        assert code == 1
        assert "asr" in err
