import csv
import json

import numpy as np
import pytest

from dcrl import checkpoint
from dcrl.cli import LOCK_NAME, load_dataset, main
from dcrl.dataio import zscore

SMALL = ["--hidden", "8,8", "--latent-dim", "3", "--pretrain-epochs", "3", "--batch", "16", "--pretrain-batch", "16"]
BLOBS = "blobs:n=20,C=3,dim=5,spread=1.0,seed=1"


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _train(out, *extra, dataset=BLOBS):
    return main(["train", "--dataset", dataset, "--out", str(out), "--pretrain-first", "--zscore",
                 "--epochs", "5", "--ramp-end-epoch", "3", *SMALL, *extra])


# -- gen-data ------------------------------------------------------------------

def test_gen_data_manifolds(tmp_path, capsys):
    assert main(["gen-data", "--dataset", "manifolds:n=25,C=4", "--out", str(tmp_path), "--seed", "3"]) == 0
    rows = _rows(tmp_path / "data.csv")
    assert len(rows) == 100
    assert {r["label"] for r in rows} == {"0", "1", "2", "3"}
    first = (tmp_path / "data.csv").read_bytes()
    assert main(["gen-data", "--dataset", "manifolds:n=25,C=4", "--out", str(tmp_path), "--seed", "3"]) == 0
    assert (tmp_path / "data.csv").read_bytes() == first
    assert not (tmp_path / LOCK_NAME).exists()


# -- pretrain ------------------------------------------------------------------

def test_pretrain_writes_loadable_checkpoint(tmp_path):
    args = ["pretrain", "--dataset", BLOBS, "--zscore", *SMALL, "--pretrain-epochs", "8"]
    assert main([*args, "--out", str(tmp_path / "a")]) == 0
    assert main([*args, "--out", str(tmp_path / "b")]) == 0
    runner = checkpoint.load(tmp_path / "a" / "pretrained.ckpt")
    assert runner.model.layer_dims == [5, 8, 8, 3]
    losses = [float(r["loss"]) for r in _rows(tmp_path / "a" / "pretrain_loss.csv")]
    assert len(losses) == 8 and losses[-1] < losses[0]
    assert (tmp_path / "a" / "pretrained.ckpt").read_bytes() == (tmp_path / "b" / "pretrained.ckpt").read_bytes()


# -- train ---------------------------------------------------------------------

def test_train_outputs(tmp_path):
    assert _train(tmp_path / "a") == 0
    hist = _rows(tmp_path / "a" / "history.csv")
    assert len(hist) == 5
    assert float(hist[0]["alpha"]) == pytest.approx(0.1) and float(hist[-1]["alpha"]) == 0.0
    emb = _rows(tmp_path / "a" / "embeddings.csv")
    assert list(emb[0]) == ["z0", "z1", "z2", "pred", "label"] and len(emb) == 60
    assert _train(tmp_path / "b") == 0
    for name in ("history.csv", "embeddings.csv", "model.ckpt"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_train_from_pretrained_checkpoint(tmp_path):
    pre = tmp_path / "pre"
    assert main(["pretrain", "--dataset", BLOBS, "--zscore", "--out", str(pre), *SMALL]) == 0
    assert main(["train", "--dataset", BLOBS, "--zscore", "--out", str(tmp_path / "t"), "--checkpoint",
                 str(pre / "pretrained.ckpt"), "--epochs", "4", "--ramp-end-epoch", "2", *SMALL]) == 0
    assert len(_rows(tmp_path / "t" / "history.csv")) == 4


def test_resume_continues_the_run(tmp_path):
    assert _train(tmp_path / "part", "--epochs", "2", "--ramp-end-epoch", "2") == 0
    assert main(["train", "--dataset", BLOBS, "--zscore", "--out", str(tmp_path / "res"), "--resume",
                 "--checkpoint", str(tmp_path / "part" / "model.ckpt"), "--epochs", "4", *SMALL]) == 0
    assert len(_rows(tmp_path / "res" / "history.csv")) == 4


def test_no_structure_losses_toggle(tmp_path):
    assert _train(tmp_path, "--no-structure-losses") == 0
    cfg = json.loads((tmp_path / "config.json").read_text())
    assert (cfg["use_lis"], cfg["use_rank"], cfg["use_align"], cfg["use_cluster"]) == (False, False, False, True)
    hist = _rows(tmp_path / "history.csv")
    assert all(float(r["l_lis"]) == float(r["l_rank"]) == float(r["l_align"]) == 0.0 for r in hist)


def test_config_file_and_flag_precedence(tmp_path):
    conf = tmp_path / "c.json"
    conf.write_text(json.dumps({"version": 1, "kappa": 2.0, "epochs": 3, "ramp_end_epoch": 3}))
    assert _train(tmp_path / "o", "--config", str(conf), "--epochs", "4") == 0
    cfg = json.loads((tmp_path / "o" / "config.json").read_text())
    assert cfg["kappa"] == 2.0 and cfg["epochs"] == 4


# -- eval ----------------------------------------------------------------------

def test_identity_eval_is_perfect(tmp_path):
    assert main(["eval", "--dataset", BLOBS, "--out", str(tmp_path), "--identity"]) == 0
    rep = json.loads((tmp_path / "metrics.json").read_text())
    assert rep["trust"] == rep["cont"] == rep["acc"] == rep["cra"] == 1.0
    assert _rows(tmp_path / "metrics.csv")[0]["trust"] == "1.0"


def test_eval_train_and_held_out(tmp_path):
    data = "blobs:n=60,C=3,dim=5,spread=0.5,seed=2"
    common = ["--dataset", data, "--zscore", "--split", "0.7", "--split-seed", "1"]
    assert main(["train", *common, "--out", str(tmp_path / "run"), "--pretrain-first", "--hidden", "32,32",
                 "--latent-dim", "3", "--pretrain-epochs", "40", "--batch", "32", "--pretrain-batch", "32",
                 "--epochs", "20", "--ramp-end-epoch", "10"]) == 0
    ckpt = str(tmp_path / "run" / "model.ckpt")
    for part in ("train", "test"):
        assert main(["eval", *common, "--part", part, "--checkpoint", ckpt, "--out", str(tmp_path / "ev"),
                     "--prefix", part]) == 0
    train = json.loads((tmp_path / "ev" / "train.json").read_text())
    test = json.loads((tmp_path / "ev" / "test.json").read_text())
    assert train["acc"] >= 0.95
    assert abs(train["acc"] - test["acc"]) <= 0.05


# -- failures ------------------------------------------------------------------

def test_missing_dataset_file(tmp_path, capsys):
    rc = main(["pretrain", "--dataset", f"csv:{tmp_path / 'nope.csv'}", "--out", str(tmp_path / "o")])
    assert rc == 2
    assert "--dataset" in capsys.readouterr().err


def test_missing_required_flag_is_usage_error(tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["pretrain", "--out", str(tmp_path)])
    assert exc.value.code == 2


def test_malformed_csv_is_data_error(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("1,2\n3\n")
    assert main(["pretrain", "--dataset", f"csv:{bad}", "--out", str(tmp_path / "o")]) == 3


@pytest.mark.filterwarnings("ignore:overflow")
def test_numerical_abort_exit_code(tmp_path):
    huge = tmp_path / "huge.csv"
    huge.write_text("1e305,1e305\n-1e305,1e305\n1e305,-1e305\n")
    assert main(["pretrain", "--dataset", f"csv:{huge}", "--out", str(tmp_path / "o"), "--n-clusters", "2",
                 "--hidden", "4", "--latent-dim", "2", "--pretrain-epochs", "1"]) == 4


def test_dimension_mismatch(tmp_path):
    pre = tmp_path / "pre"
    assert main(["pretrain", "--dataset", BLOBS, "--out", str(pre), *SMALL]) == 0
    other = "blobs:n=20,C=3,dim=4,seed=1"
    assert main(["eval", "--dataset", other, "--checkpoint", str(pre / "pretrained.ckpt"),
                 "--out", str(tmp_path / "e")]) == 2


def test_bad_config_file(tmp_path):
    conf = tmp_path / "c.json"
    conf.write_text(json.dumps({"version": 1, "epochz": 3}))
    assert _train(tmp_path / "o", "--config", str(conf)) == 2
    conf.write_text(json.dumps({"kappa": 3.0}))
    assert _train(tmp_path / "o", "--config", str(conf)) == 2
    conf.write_text("{not json")
    assert _train(tmp_path / "o", "--config", str(conf)) == 2


def test_locked_output_directory(tmp_path):
    tmp_path.joinpath(LOCK_NAME).write_text("123\n")
    assert main(["gen-data", "--dataset", BLOBS, "--out", str(tmp_path)]) == 2
    assert not (tmp_path / "data.csv").exists()


def test_train_needs_a_model_source(tmp_path):
    assert main(["train", "--dataset", BLOBS, "--out", str(tmp_path)]) == 2


def test_embeddings_match_checkpoint(tmp_path):
    assert _train(tmp_path) == 0
    runner = checkpoint.load(tmp_path / "model.ckpt")
    emb = _rows(tmp_path / "embeddings.csv")
    z = np.array([[float(r[f"z{i}"]) for i in range(3)] for r in emb])
    ds = zscore(load_dataset(BLOBS, 0))
    assert np.array_equal(runner.embed(ds.x), z)
