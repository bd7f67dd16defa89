"""End-to-end command-line behavior on tiny corpora."""

import json

import numpy as np
import pytest

from seqreorder.cli import main
from seqreorder.gradcheck import run_gradcheck
from seqreorder.synthetic import interaction_corpus, motif_sequences, write_interaction_tsv, write_sequence_tsv

TINY_ENCODER = [
    "--n", "4", "--l-max", "48",
    "--embed-dim", "16", "--layers", "1", "--heads", "2", "--ffn-dim", "32",
]
TINY_HEAD = [
    "--fusion-dim", "16", "--comp-layers", "1", "--comp-heads", "2", "--comp-ffn-dim", "32",
]


@pytest.fixture(scope="module")
def corpus_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    pairs = interaction_corpus(num_proteins=40, num_compounds=40, num_pairs=120, seed=7)
    write_interaction_tsv(root / "pairs.tsv", pairs)
    write_sequence_tsv(root / "seqs.tsv", motif_sequences(num_sequences=30, seed=7))
    return root


@pytest.fixture(scope="module")
def split_dir(corpus_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("split")
    assert main(["split", "--data", str(corpus_dir / "pairs.tsv"), "--seed", "7", "--out", str(out)]) == 0
    return out


@pytest.fixture(scope="module")
def pretrain_dir(corpus_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("pretrain")
    code = main(
        ["pretrain", "--proteins", str(corpus_dir / "seqs.tsv"), "--seed", "7",
         "--out", str(out), "--epochs", "2", "--batch-size", "8", "--lr", "1e-3"]
        + TINY_ENCODER
    )
    assert code == 0
    return out


def test_split_writes_six_tsvs_and_manifest(split_dir):
    names = [
        "train.tsv", "valid.tsv", "test_seen_both.tsv", "test_unseen_comp.tsv",
        "test_unseen_prot.tsv", "test_unseen_both.tsv",
    ]
    for name in names:
        assert (split_dir / name).exists()
    manifest = json.loads((split_dir / "split_manifest.json").read_text())
    assert manifest["seed"] == 7
    assert manifest["counts"]["train"] > 0
    total = sum(manifest["counts"].values())
    assert total == 120
    assert (split_dir / "vocab.tsv").exists()


def test_split_rerun_is_byte_identical(corpus_dir, split_dir, tmp_path):
    assert main(["split", "--data", str(corpus_dir / "pairs.tsv"), "--seed", "7", "--out", str(tmp_path)]) == 0
    for name in ("split_manifest.json", "train.tsv", "test_unseen_both.tsv", "run_meta.json"):
        assert (tmp_path / name).read_bytes() == (split_dir / name).read_bytes()


def test_split_missing_input_fails(tmp_path, capsys):
    code = main(["split", "--data", str(tmp_path / "nope.tsv"), "--out", str(tmp_path)])
    assert code == 1
    assert "error:" in capsys.readouterr().err


def test_pretrain_writes_checkpoints_and_log(pretrain_dir):
    assert (pretrain_dir / "best.ckpt").exists()
    assert (pretrain_dir / "epoch_0001.ckpt").exists()
    assert (pretrain_dir / "epoch_0002.ckpt").exists()
    log = (pretrain_dir / "train_log.csv").read_text().splitlines()
    assert log[0] == "epoch,step,loss,perm_acc,wall_ms"
    assert len(log) > 1
    meta = json.loads((pretrain_dir / "run_meta.json").read_text())
    assert meta["seed"] == 7
    assert meta["config"]["n"] == 4


def test_pretrain_rejects_zero_epochs(corpus_dir, tmp_path, capsys):
    code = main(
        ["pretrain", "--proteins", str(corpus_dir / "seqs.tsv"), "--out", str(tmp_path),
         "--epochs", "0"] + TINY_ENCODER
    )
    assert code == 1
    assert "epochs" in capsys.readouterr().err


def test_pretrain_requires_exactly_one_source(corpus_dir, tmp_path, capsys):
    code = main(["pretrain", "--out", str(tmp_path)])
    assert code == 1
    code = main(
        ["pretrain", "--data", str(corpus_dir / "pairs.tsv"),
         "--proteins", str(corpus_dir / "seqs.tsv"), "--out", str(tmp_path)]
    )
    assert code == 1


def _finetune(split_dir, out, extra):
    return main(
        ["finetune",
         "--train", str(split_dir / "train.tsv"),
         "--valid", str(split_dir / "valid.tsv"),
         "--test", f"seen_both={split_dir / 'test_seen_both.tsv'}",
         "--out", str(out), "--seed", "7",
         "--epochs", "2", "--batch-size", "16", "--lr", "1e-3", "--l-max", "48"]
        + TINY_HEAD + extra
    )


def test_finetune_random_init(split_dir, tmp_path):
    code = _finetune(split_dir, tmp_path, ["--random-init"] + TINY_ENCODER)
    assert code == 0
    assert (tmp_path / "cpi.ckpt").exists()
    pred = (tmp_path / "predictions_seen_both.csv").read_text().splitlines()
    assert pred[0] == "pair_id,score,label"
    n_pairs = len((split_dir / "test_seen_both.tsv").read_text().splitlines())
    assert len(pred) == n_pairs + 1
    assert pred[1].startswith("seen_both-000000,")


def test_finetune_from_checkpoint(split_dir, pretrain_dir, tmp_path):
    code = _finetune(
        split_dir, tmp_path, ["--checkpoint", str(pretrain_dir / "best.ckpt")]
    )
    assert code == 0
    scores = [
        float(row.split(",")[1])
        for row in (tmp_path / "predictions_seen_both.csv").read_text().splitlines()[1:]
    ]
    assert all(0.0 < s < 1.0 for s in scores)


def test_finetune_rejects_mismatched_geometry(split_dir, pretrain_dir, tmp_path, capsys):
    code = _finetune(
        split_dir, tmp_path,
        ["--checkpoint", str(pretrain_dir / "best.ckpt"), "--embed-dim", "64"],
    )
    assert code == 1
    assert "shape" in capsys.readouterr().err.lower()


def test_finetune_requires_encoder_choice(split_dir, tmp_path):
    assert _finetune(split_dir, tmp_path, []) == 1


def test_evaluate_aggregates_runs(split_dir, pretrain_dir, tmp_path):
    run_a, run_b = tmp_path / "a", tmp_path / "b"
    assert _finetune(split_dir, run_a, ["--random-init"] + TINY_ENCODER) == 0
    assert _finetune(split_dir, run_b, ["--checkpoint", str(pretrain_dir / "best.ckpt")]) == 0
    out = tmp_path / "report"
    code = main(
        ["evaluate", "--run", str(run_a), "--run", str(run_b),
         "--dataset-name", "toy", "--out", str(out)]
    )
    assert code == 0
    report = json.loads((out / "report.json").read_text())
    assert report["dataset"] == "toy"
    assert report["seed_count"] == 2
    assert "seen_both" in report["partitions"]
    assert (out / "seen_both_roc_seed0.csv").exists()
    assert (out / "seen_both_pr_seed1.csv").exists()


def test_evaluate_rejects_malformed_row(tmp_path, capsys):
    run = tmp_path / "run"
    run.mkdir()
    (run / "predictions_seen_both.csv").write_text(
        "pair_id,score,label\na-0,0.5,1\na-1,not_a_number,0\n"
    )
    code = main(["evaluate", "--run", str(run), "--out", str(tmp_path / "out")])
    assert code == 1
    assert "line 3" in capsys.readouterr().err


def test_evaluate_rejects_empty_run_dir(tmp_path):
    run = tmp_path / "empty"
    run.mkdir()
    assert main(["evaluate", "--run", str(run), "--out", str(tmp_path / "out")]) == 1


def test_gradcheck_command_passes(capsys):
    assert main(["gradcheck", "--seed", "0"]) == 0
    out = capsys.readouterr().out
    assert out.count("PASS") == 4
    assert "FAIL" not in out


def test_gradcheck_detects_planted_error():
    reports = run_gradcheck(seed=0, perturb=1e-3)
    assert any(not r.passed for r in reports)


def test_export_embeddings(pretrain_dir, corpus_dir, tmp_path):
    # one protein is too short to segment and must be skipped, not fail
    seqs = (corpus_dir / "seqs.tsv").read_text()
    mixed = tmp_path / "mixed.tsv"
    mixed.write_text(seqs + "tiny\tMK\n")
    out_a, out_b = tmp_path / "a", tmp_path / "b"
    for out in (out_a, out_b):
        code = main(
            ["export-embeddings", "--checkpoint", str(pretrain_dir / "best.ckpt"),
             "--proteins", str(mixed), "--out", str(out)]
        )
        assert code == 0
    emb = (out_a / "embeddings.tsv").read_text().splitlines()
    assert len(emb) == 30
    assert (out_a / "embeddings.tsv").read_bytes() == (out_b / "embeddings.tsv").read_bytes()
    skipped = (out_a / "skipped.log").read_text()
    assert "tiny" in skipped


def test_synth_commands(tmp_path):
    motif_out = tmp_path / "m.tsv"
    assert main(["synth", "motif", "--out-file", str(motif_out), "--num", "10"]) == 0
    assert len(motif_out.read_text().splitlines()) == 10
    cpi_out = tmp_path / "c.tsv"
    assert main(
        ["synth", "cpi", "--out-file", str(cpi_out),
         "--num-proteins", "10", "--num-compounds", "10", "--num-pairs", "25"]
    ) == 0
    rows = cpi_out.read_text().splitlines()
    assert len(rows) == 25
    assert all(len(r.split("\t")) == 3 for r in rows)
