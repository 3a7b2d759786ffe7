import json
import time
from pathlib import Path

import numpy as np
import pytest

from pointer_reader.cli import main
from pointer_reader.clozegen import generate, write_instances
from pointer_reader.corpus import read_corpus, write_corpus
from pointer_reader.estimator import vocabulary_from_instances
from pointer_reader.synthetic import random_corpus

from .conftest import SAMPLE_CORPUS
from .pipeline import PIPELINE_CONFIG, compare_to_golden, run_pipeline, working_dir


@pytest.fixture(scope="module")
def pipeline_w1(tmp_path_factory):
    d = tmp_path_factory.mktemp("w1")
    assert run_pipeline(d, workers=1) == [0] * 6
    return d


def test_pipeline_matches_golden(pipeline_w1):
    assert compare_to_golden(pipeline_w1) == []


def test_pipeline_matches_golden_with_workers(tmp_path):
    assert run_pipeline(tmp_path, workers=4) == [0] * 6
    assert compare_to_golden(tmp_path) == []


def test_manifest_is_idempotent_except_timestamps(pipeline_w1, tmp_path):
    run_pipeline(tmp_path, workers=1)
    a = json.loads((pipeline_w1 / "run/manifest.json").read_text())
    b = json.loads((tmp_path / "run/manifest.json").read_text())
    assert a.pop("timestamps") and b.pop("timestamps")
    assert a == b
    assert a["hashes"]["vocab_sha256"] == json.loads((pipeline_w1 / "run/checkpoints/epoch-002/config.json")
                                                     .read_text())["vocab_sha256"]
    assert a["paths"]["checkpoints"] == ["checkpoints/epoch-000", "checkpoints/epoch-001", "checkpoints/epoch-002"]


def write_config(path, **sections):
    cfg = {"model": dict(PIPELINE_CONFIG["model"]), "train": dict(PIPELINE_CONFIG["train"])}
    for k, v in sections.items():
        cfg[k].update(v)
    Path(path).write_text(json.dumps(cfg))
    return str(path)


@pytest.fixture
def sample_dir(tmp_path):
    with working_dir(tmp_path):
        assert main(["generate", str(SAMPLE_CORPUS), "sample.jsonl"]) == 0
        yield tmp_path


def test_generate_prints_stats(tmp_path, capsys):
    assert main(["generate", str(SAMPLE_CORPUS), str(tmp_path / "x.jsonl")]) == 0
    out = capsys.readouterr().out
    assert "# test cases       23" in out
    stats = json.loads((tmp_path / "x.stats.json").read_text())
    assert stats["n"] == 23


def test_generate_multi_arg_empty_warns(tmp_path, caplog):
    docs = [d for d in read_corpus(SAMPLE_CORPUS)][:1]
    one = docs[0]
    # keep only events with at most one argument
    from dataclasses import replace

    thin = replace(one, events=tuple(replace(e, args=e.args[:1]) for e in one.events))
    write_corpus([thin], tmp_path / "c.jsonl")
    assert main(["generate", str(tmp_path / "c.jsonl"), str(tmp_path / "o.jsonl"), "--multi-arg"]) == 0
    assert (tmp_path / "o.jsonl").read_text() == ""
    assert "no instances" in caplog.text


def test_generate_missing_corpus_is_usage_error(tmp_path, capsys):
    assert main(["generate", str(tmp_path / "nope.jsonl"), str(tmp_path / "o.jsonl")]) == 1
    assert "not found" in capsys.readouterr().err


def test_generate_invalid_corpus_reports_line(tmp_path, capsys):
    lines = Path(SAMPLE_CORPUS).read_text().splitlines()
    lines.insert(1, '{"doc_id": 5}')
    (tmp_path / "bad.jsonl").write_text("\n".join(lines) + "\n")
    assert main(["generate", str(tmp_path / "bad.jsonl"), str(tmp_path / "o.jsonl")]) == 2
    assert "line 2" in capsys.readouterr().err


def test_usage_errors_exit_1(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 1
    with pytest.raises(SystemExit) as exc:
        main(["train", "x.jsonl"])
    assert exc.value.code == 1


@pytest.mark.parametrize("bad", [
    {"model": {"hidden_dim": 0}},
    {"model": {"num_hops": 3}},
    {"train": {"learning_rate": "fast"}},
    {"train": {"epochs": 2, "momentum": 0.9}},
    {"optimizer": {}},
])
def test_config_schema_violation_exits_2_before_compute(sample_dir, bad, capsys, monkeypatch):
    import pointer_reader.cli as cli

    monkeypatch.setattr(cli, "train", lambda *a, **k: pytest.fail("training started"))
    cfg = {"model": {}, "train": {}}
    for k, v in bad.items():
        cfg.setdefault(k, {}).update(v)
    Path("cfg.json").write_text(json.dumps(cfg))
    assert main(["train", "sample.jsonl", "--config", "cfg.json", "--out", "run"]) == 2
    assert "config" in capsys.readouterr().err
    assert not Path("run").exists()


def test_train_epochs_zero_writes_initial_checkpoint_only(sample_dir):
    cfg = write_config("cfg.json")
    assert main(["train", "sample.jsonl", "--config", cfg, "--out", "run", "--epochs", "0"]) == 0
    assert sorted(p.name for p in Path("run/checkpoints").iterdir()) == ["epoch-000"]
    assert Path("run/train_log.jsonl").read_text() == ""


def test_train_resume_matches_uninterrupted(sample_dir):
    cfg = write_config("cfg.json", train={"epochs": 3})
    assert main(["train", "sample.jsonl", "--config", cfg, "--out", "full"]) == 0
    assert main(["train", "sample.jsonl", "--config", cfg, "--out", "part", "--epochs", "1"]) == 0
    assert main(["train", "sample.jsonl", "--config", cfg, "--out", "part",
                 "--resume", "part/checkpoints/epoch-001"]) == 0
    assert Path("part/train_log.jsonl").read_text() == Path("full/train_log.jsonl").read_text()
    final = "checkpoints/epoch-003/arrays.bin"
    assert Path("part", final).read_bytes() == Path("full", final).read_bytes()


def test_train_with_dev_keeps_best(sample_dir):
    cfg = write_config("cfg.json", train={"epochs": 3})
    assert main(["train", "sample.jsonl", "--config", cfg, "--out", "run", "--dev", "sample.jsonl"]) == 0
    log = [json.loads(l) for l in Path("run/train_log.jsonl").read_text().splitlines()]
    assert all(r["dev_acc"] is not None for r in log)
    manifest = json.loads(Path("run/manifest.json").read_text())
    best = manifest["best"]
    assert best["dev_acc"] == max(r["dev_acc"] for r in log)
    src = Path(f"run/checkpoints/epoch-{best['epoch']:03d}/arrays.bin")
    assert Path("run/checkpoints/best/arrays.bin").read_bytes() == src.read_bytes()


def test_eval_refuses_vocab_mismatch(sample_dir, capsys):
    cfg = write_config("cfg.json", train={"epochs": 1})
    assert main(["train", "sample.jsonl", "--config", cfg, "--out", "run"]) == 0
    # instances generated with their own vocabulary (different corpus)
    write_corpus(random_corpus(5, seed=1), "other.jsonl")
    assert main(["generate", "other.jsonl", "other_inst.jsonl"]) == 0
    capsys.readouterr()
    assert main(["eval", "other_inst.jsonl", "--checkpoint", "run/checkpoints/epoch-001"]) == 2
    assert "does not match" in capsys.readouterr().err
    # reusing the checkpoint vocabulary fixes it
    assert main(["generate", "other.jsonl", "other_inst.jsonl", "--vocab", "run/checkpoints/epoch-001/vocab.json"]) == 0
    assert main(["eval", "other_inst.jsonl", "--checkpoint", "run/checkpoints/epoch-001"]) == 0


def test_eval_baseline_needs_no_checkpoint(sample_dir, capsys):
    capsys.readouterr()
    assert main(["eval", "sample.jsonl", "--baseline", "random"]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["n"] == 23 and report["expected_accuracy"] is not None


def test_eval_argument_conflicts_are_usage_errors(sample_dir):
    assert main(["eval", "sample.jsonl"]) == 1
    assert main(["eval", "sample.jsonl", "--baseline", "random", "--traces", "t.jsonl"]) == 1


def test_toy_training_run_is_fast_and_reduces_loss(tmp_path):
    insts = list(generate(random_corpus(40, seed=8)))[:50]
    assert len(insts) == 50
    with working_dir(tmp_path):
        write_instances(insts, "toy.jsonl")
        vocabulary_from_instances(insts).save("toy.vocab.json")
        cfg = write_config("cfg.json", model={"hidden_dim": 16, "embedding_dim": 16, "num_hops": 1},
                           train={"epochs": 5, "batch_size": 8, "learning_rate": 0.1})
        t0 = time.perf_counter()
        assert main(["train", "toy.jsonl", "--config", cfg, "--out", "run"]) == 0
        elapsed = time.perf_counter() - t0
        losses = [json.loads(l)["loss"] for l in Path("run/train_log.jsonl").read_text().splitlines()]
    assert elapsed < 60
    assert losses[-1] < losses[0]
    assert np.all(np.isfinite(losses))
