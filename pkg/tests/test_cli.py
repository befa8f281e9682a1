import csv
import os

import numpy as np
import pytest
from click.testing import CliRunner

from iqarank.cli import HISTORY_FIELDS, SUMMARY_FIELDS, main, split_indices
from iqarank.synth import Manifest
from toydata import make_toy_groups, natural_tiles, write_labelled, write_toy_manifest


def run(*args, env=None, ok=True):
    result = CliRunner().invoke(main, [str(a) for a in args], env=env)
    if ok:
        assert result.exit_code == 0, result.output + repr(result.exception)
    return result


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


@pytest.fixture(scope="module")
def labelled(tmp_path_factory):
    tiles, mos = natural_tiles(12, size=32)
    root = tmp_path_factory.mktemp("labelled")
    return root, write_labelled(root, tiles, mos)


@pytest.fixture(scope="module")
def toy_manifest(tmp_path_factory):
    groups, y0 = make_toy_groups(40, size=32, seed=5)
    return write_toy_manifest(tmp_path_factory.mktemp("toy"), groups, y0)


def test_extend_livec_counts(labelled, tmp_path):
    root, scores = labelled
    out = tmp_path / "ext"
    res = run("extend", "--dataset", "livec", "--in", root, "--scores", scores, "--out", out,
              "--limit", 2, "--jobs", 1)
    assert "groups=90" in res.output and "images=450" in res.output
    m = Manifest.read(out)
    assert len(m) == 90 and m.n_rows() == 540


def test_extend_live_skips_jp2k_without_encoder(tmp_path):
    tiles, _ = natural_tiles(1, size=32)
    root = tmp_path / "live"
    scores = write_labelled(root, tiles, [40.0], header="# orientation=DMOS range=0,100")
    env = {"PATH": "", "IQARANK_JP2K_ENCODER": ""}
    res = run("extend", "--dataset", "live", "--in", root, "--scores", scores,
              "--out", tmp_path / "out", "--limit", 1, "--jobs", 1, env=env)
    assert "groups=3" in res.output and "skipped_jp2k=1" in res.output


def test_missing_score_file_exits_2_without_output(labelled, tmp_path):
    root, _ = labelled
    out = tmp_path / "never"
    res = run("extend", "--dataset", "livec", "--in", root, "--scores", tmp_path / "nope.csv",
              "--out", out, ok=False)
    assert res.exit_code == 2
    assert not out.exists()


def test_malformed_score_file_exits_2(labelled, tmp_path):
    root, _ = labelled
    bad = tmp_path / "bad.csv"
    bad.write_text("path,score\nimg000.png,50\n")
    res = run("extend", "--dataset", "livec", "--in", root, "--scores", bad,
              "--out", tmp_path / "o", ok=False)
    assert res.exit_code == 2 and "orientation" in res.output


def test_pretrain_csv_and_byte_determinism(toy_manifest, tmp_path):
    args = ["pretrain", "--in", toy_manifest, "--epochs", 2, "--lr", 0.01, "--seed", 4]
    run(*args, "--out", tmp_path / "a")
    run(*args, "--out", tmp_path / "b")
    rows = read_csv(tmp_path / "a" / "pretrain.csv")
    assert tuple(rows[0]) == HISTORY_FIELDS
    assert [r[0] for r in rows[1:]] == ["1", "2"]
    for name in ("pretrain.csv", "model.ckpt"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    run(*args[:-1], 5, "--out", tmp_path / "c")
    assert (tmp_path / "c" / "model.ckpt").read_bytes() != (tmp_path / "a" / "model.ckpt").read_bytes()


def test_pretrain_zero_lr_flat_curve(toy_manifest, tmp_path):
    # 32 px images fit one 224 window: no crop noise, so every epoch sees the same loss
    run("pretrain", "--in", toy_manifest, "--epochs", 3, "--lr", 0, "--out", tmp_path)
    losses = {r[1] for r in read_csv(tmp_path / "pretrain.csv")[1:]}
    assert len(losses) == 1


def test_pretrain_learns_toy_ranking(toy_manifest, tmp_path):
    run("pretrain", "--in", toy_manifest, "--epochs", 12, "--lr", 0.01, "--out", tmp_path)
    last = read_csv(tmp_path / "pretrain.csv")[-1]
    assert float(last[HISTORY_FIELDS.index("rank_acc")]) >= 0.95


def test_pretrain_resume_matches_uninterrupted(toy_manifest, tmp_path):
    base = ["pretrain", "--in", toy_manifest, "--lr", 0.01, "--seed", 2]
    run(*base, "--epochs", 4, "--out", tmp_path / "full")
    run(*base, "--epochs", 2, "--out", tmp_path / "part")
    run(*base, "--epochs", 2, "--out", tmp_path / "part", "--resume",
        tmp_path / "part" / "model.ckpt")
    for name in ("pretrain.csv", "model.ckpt"):
        assert (tmp_path / "full" / name).read_bytes() == (tmp_path / "part" / name).read_bytes()


def test_corrupt_checkpoint_exits_3(labelled, tmp_path):
    root, scores = labelled
    ckpt = tmp_path / "bad.ckpt"
    ckpt.write_bytes(b"IQRKCKPT" + b"\0" * 40)
    for cmd in (["finetune", "--in", root, "--scores", scores, "--out", tmp_path / "f"],
                ["evaluate", "--in", root, "--scores", scores, "--out", tmp_path / "e"]):
        res = run(*cmd, "--checkpoint", ckpt, ok=False)
        assert res.exit_code == 3 and "checkpoint" in res.output


def test_finetune_rejects_scale_mismatch(labelled, toy_manifest, tmp_path):
    root, scores = labelled  # MOS labels; the toy manifest is DMOS
    run("pretrain", "--in", toy_manifest, "--epochs", 1, "--out", tmp_path / "p")
    res = run("finetune", "--in", root, "--scores", scores, "--checkpoint",
              tmp_path / "p" / "model.ckpt", "--out", tmp_path / "f", ok=False)
    assert res.exit_code == 2 and "does not match" in res.output


def test_finetune_and_evaluate(toy_manifest, tmp_path):
    tiles, mos = natural_tiles(12, size=32)
    root = tmp_path / "data"
    scores = write_labelled(root, tiles, 100 - mos, header="# orientation=DMOS range=0,100")
    run("pretrain", "--in", toy_manifest, "--epochs", 1, "--lr", 0.01, "--out", tmp_path / "p")
    ft = ["finetune", "--in", root, "--scores", scores, "--checkpoint",
          tmp_path / "p" / "model.ckpt", "--lr", 1e-3, "--epochs", 3]
    run(*ft, "--out", tmp_path / "f1")
    run(*ft, "--out", tmp_path / "f2")
    rows = read_csv(tmp_path / "f1" / "finetune.csv")
    assert tuple(rows[0]) == HISTORY_FIELDS and len(rows) == 4
    assert rows[1][2:5] == ["", "", ""]  # psi terms undefined during fine-tuning
    for name in ("finetune.csv", "model.ckpt"):
        assert (tmp_path / "f1" / name).read_bytes() == (tmp_path / "f2" / name).read_bytes()

    ev = ["evaluate", "--in", root, "--scores", scores, "--checkpoint",
          tmp_path / "f1" / "model.ckpt", "--splits", 10]
    res = run(*ev, "--out", tmp_path / "e1")
    run(*ev, "--out", tmp_path / "e2")
    summary = read_csv(tmp_path / "e1" / "summary.csv")
    assert tuple(summary[0]) == SUMMARY_FIELDS
    assert [r[0] for r in summary[1:]] == [str(i) for i in range(10)] + ["median"]
    assert "split=median" in res.output
    for name in ("summary.csv", "predictions.csv"):
        assert (tmp_path / "e1" / name).read_bytes() == (tmp_path / "e2" / name).read_bytes()
    preds = read_csv(tmp_path / "e1" / "predictions.csv")
    assert len(preds) == 13 and preds[1][0] == "img000.png"


def test_evaluate_predictions_file(tmp_path):
    y = np.linspace(10, 90, 10)
    pred_file = tmp_path / "p.csv"
    pred_file.write_text("path,score,prediction\n"
                         + "".join(f"i{i}.png,{v},{v}\n" for i, v in enumerate(y)))
    res = run("evaluate", "--predictions", pred_file, "--splits", 0, "--out", tmp_path / "o")
    row = read_csv(tmp_path / "o" / "summary.csv")[1]
    assert row == ["all", "10", "1", "1"]
    assert "srocc=1.0000" in res.output


def test_evaluate_constant_predictions_fail(tmp_path):
    pred_file = tmp_path / "p.csv"
    pred_file.write_text("path,score,prediction\n"
                         + "".join(f"i{i}.png,{10 * i},5\n" for i in range(6)))
    res = run("evaluate", "--predictions", pred_file, "--splits", 0, "--out", tmp_path / "o",
              ok=False)
    assert res.exit_code != 0 and "undefined" in res.output


def test_evaluate_needs_inputs(tmp_path):
    res = run("evaluate", "--out", tmp_path, ok=False)
    assert res.exit_code == 2


def test_split_indices_partition():
    train, test = split_indices(30, seed=1, index=0)
    assert len(train) == 24 and len(test) == 6
    assert sorted(np.r_[train, test].tolist()) == list(range(30))
    again, _ = split_indices(30, seed=1, index=0)
    other, _ = split_indices(30, seed=1, index=1)
    assert np.array_equal(train, again) and not np.array_equal(train, other)


def test_environment_variable_overrides_flag(labelled, tmp_path):
    root, scores = labelled
    common = ["extend", "--dataset", "livec", "--in", root, "--scores", scores,
              "--limit", 1, "--jobs", 1]
    run(*common, "--out", tmp_path / "a", "--seed", 7)
    run(*common, "--out", tmp_path / "b", env={"IQARANK_EXTEND_SEED": "7"})
    run(*common, "--out", tmp_path / "c")
    a, b, c = (read_csv(tmp_path / d / "manifest.csv") for d in "abc")
    assert a == b
    assert (tmp_path / "a" / "manifest.json").read_text() == (tmp_path / "b" / "manifest.json").read_text()
    assert (tmp_path / "a" / "manifest.json").read_text() != (tmp_path / "c" / "manifest.json").read_text()
