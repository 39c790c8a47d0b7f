import csv
import os

import numpy as np
import pytest

from wdht.cli import build_parser, main
from wdht.codec import CodeMatrix, load_codes, pack_matrix, save_codes
from wdht.datastore import LabelMatrix, save_features, save_labels
from wdht.hashnet import load_checkpoint


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("synth")
    assert main(["synth", "--out_dir", str(root), "--per_cluster", "60", "--feature_dim", "16",
                 "--embedding_dim", "8", "--vocab_per_cluster", "20", "--seed", "3"]) == 0
    return root


def _train_args(dataset, out, *extra):
    return ["train", "--config", str(dataset / "train.cfg"), "--epochs", "8", "--batch_size", "32",
            "--hidden", "32", "--out_dir", str(out), *extra]


def test_synth_outputs(dataset):
    names = set(os.listdir(dataset))
    assert {"train_features.fvec", "train_tags.txt", "train_labels.txt", "query_features.fvec",
            "query_labels.txt", "embeddings.txt", "train.cfg"} <= names
    assert "learning_rate = 3e-06" in (dataset / "train.cfg").read_text()


def test_help_lists_defaults(capsys):
    with pytest.raises(SystemExit):
        build_parser().parse_args(["train", "--help"])
    text = capsys.readouterr().out
    for fragment in ("0.001", "0.9", "10.0", "--lambda4"):
        assert fragment in text


@pytest.mark.parametrize("mode", ["mean", "tf", "itf"])
def test_aggregate_modes(dataset, tmp_path, mode, capsys):
    assert main(["aggregate", "--dataset", str(dataset), "--agg_mode", mode, "--out_dir", str(tmp_path)]) == 0
    from wdht.datastore import load_features
    W = load_features(tmp_path / "tag_vectors.fvec")
    assert W.shape == (216, 8)
    assert (tmp_path / "dropped.txt").read_text() == ""
    assert (tmp_path / "tag_variance.png").exists()
    assert "variance median" in capsys.readouterr().out


def test_aggregate_reports_oov_sample(dataset, tmp_path):
    tags = tmp_path / "tags.txt"
    tags.write_text("c0_t1 c0_t2\nnot_a_word\nc1_t3\n")
    out = tmp_path / "out"
    assert main(["aggregate", "--tags", str(tags), "--embeddings", str(dataset / "embeddings.txt"),
                 "--out_dir", str(out), "--plots", "false"]) == 0
    assert (out / "dropped.txt").read_text().split() == ["1"]
    from wdht.datastore import load_features
    assert load_features(out / "tag_vectors.fvec").shape == (2, 8)


def test_train_encode_eval_query(dataset, tmp_path, capsys):
    out = tmp_path / "run"
    assert main(_train_args(dataset, out)) == 0
    rows = list(csv.DictReader(open(out / "loss.csv")))
    assert len(rows) == 8 and float(rows[-1]["total"]) < float(rows[0]["total"])
    assert (out / "model.wdhm").exists() and (out / "loss.png").exists()

    assert main(["encode", "--checkpoint", str(out / "model.wdhm"), "--dataset", str(dataset),
                 "--out_dir", str(out)]) == 0
    codes = load_codes(out / "codes.wdhc")
    assert codes.count == 216 and codes.bits == 16
    qdir = tmp_path / "q"
    assert main(["encode", "--checkpoint", str(out / "model.wdhm"),
                 "--features", str(dataset / "query_features.fvec"), "--out_dir", str(qdir)]) == 0

    assert main(["eval", "--db_codes", str(out / "codes.wdhc"), "--query_codes", str(qdir / "codes.wdhc"),
                 "--dataset", str(dataset), "--k_values", "10,50", "--out_dir", str(out)]) == 0
    report = list(csv.DictReader(open(out / "report.csv")))
    assert [(r["bits"], r["mode"], r["K"]) for r in report] == [("16", "mean", "10"), ("16", "mean", "50")]
    assert all(0 <= float(r["mAP"]) <= 1 for r in report)
    pr = (out / "pr.csv").read_text().splitlines()
    assert pr[0] == "recall,precision" and len(pr) == 1001
    assert (out / "pr.png").exists()

    assert main(["query", "--db_codes", str(out / "codes.wdhc"), "--query_codes", str(qdir / "codes.wdhc"),
                 "--k_values", "5", "--out_dir", str(out)]) == 0
    lines = (out / "results.tsv").read_text().splitlines()
    assert lines[0] == "query_id\trank\tdb_id\tdistance"
    assert len(lines) == 1 + 24 * 5
    first = [ln.split("\t") for ln in lines[1:6]]
    assert [r[1] for r in first] == ["1", "2", "3", "4", "5"]
    assert [int(r[3]) for r in first] == sorted(int(r[3]) for r in first)


def test_train_binary_tag_mode(dataset, tmp_path):
    out = tmp_path / "bt"
    assert main(_train_args(dataset, out, "--loss_mode", "binary_tag")) == 0
    assert load_checkpoint(out / "model.wdhm").sizes == (16, 32, 16, 0)
    assert main(_train_args(dataset, tmp_path / "alias", "--mode", "binary_tag")) == 0
    assert (tmp_path / "alias" / "model.wdhm").read_bytes() == (out / "model.wdhm").read_bytes()


def test_train_from_tag_vectors_with_dropped(dataset, tmp_path):
    agg = tmp_path / "agg"
    assert main(["aggregate", "--dataset", str(dataset), "--out_dir", str(agg), "--plots", "0"]) == 0
    out = tmp_path / "tv"
    assert main(_train_args(dataset, out, "--tag_vectors", str(agg / "tag_vectors.fvec"),
                            "--dropped", str(agg / "dropped.txt"))) == 0
    assert main(_train_args(dataset, tmp_path / "tv2", "--tag_vectors", str(agg / "tag_vectors.fvec"))) == 0
    assert (out / "model.wdhm").read_bytes() == (tmp_path / "tv2" / "model.wdhm").read_bytes()


def test_unknown_key(dataset, tmp_path, capsys):
    assert main(["train", "--bogus", "1"]) == 1
    assert "unknown key" in capsys.readouterr().err
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("lambda9 = 2\n")
    assert main(["train", "--config", str(cfg)]) == 1
    assert "unknown key" in capsys.readouterr().err
    assert main(["train", "--config", str(cfg).replace("bad", "missing")]) == 1
    assert main(["train", "--agg_mode", "median", "--dataset", str(dataset)]) == 1


def test_data_errors(dataset, tmp_path, capsys):
    # checkpoint trained on 16-d features cannot encode 5-d features
    run = tmp_path / "m"
    assert main(_train_args(dataset, run, "--epochs", "1")) == 0
    bad = tmp_path / "bad.fvec"
    save_features(bad, np.zeros((3, 5)))
    assert main(["encode", "--checkpoint", str(run / "model.wdhm"), "--features", str(bad),
                 "--out_dir", str(tmp_path)]) == 2
    assert "d_in" in capsys.readouterr().err
    assert main(["encode", "--checkpoint", str(tmp_path / "nope.wdhm"), "--features", str(bad)]) == 2


def test_numeric_failure_exit_code(dataset, tmp_path, monkeypatch, capsys):
    import wdht.hashnet as hn
    real = hn.batch_losses

    def poisoned(*a, **kw):
        out = real(*a, **kw)
        out["total"] = float("nan")
        return out

    monkeypatch.setattr(hn, "batch_losses", poisoned)
    assert main(_train_args(dataset, tmp_path / "n", "--epochs", "1")) == 3
    assert "non-finite loss" in capsys.readouterr().err


def test_eval_perfect_ranking(tmp_path, capsys):
    # codes equal to the one-hot label: every relevant item sits at distance 0
    y = np.repeat(np.arange(4), 10)
    bits = np.eye(4, dtype=int)[y]
    save_codes(tmp_path / "db.wdhc", CodeMatrix(pack_matrix(bits), 4))
    save_codes(tmp_path / "q.wdhc", CodeMatrix(pack_matrix(np.eye(4, dtype=int)), 4))
    save_labels(tmp_path / "db.txt", LabelMatrix([frozenset([int(c)]) for c in y], 4))
    save_labels(tmp_path / "q.txt", LabelMatrix([frozenset([c]) for c in range(4)], 4))
    assert main(["eval", "--db_codes", str(tmp_path / "db.wdhc"), "--query_codes", str(tmp_path / "q.wdhc"),
                 "--db_labels", str(tmp_path / "db.txt"), "--query_labels", str(tmp_path / "q.txt"),
                 "--k_values", "10,40", "--out_dir", str(tmp_path), "--plots", "no"]) == 0
    rows = list(csv.DictReader(open(tmp_path / "report.csv")))
    assert [float(r["mAP"]) for r in rows] == [1.0, 1.0]


def test_gradcheck(capsys):
    assert main(["gradcheck", "--gradcheck_seeds", "3"]) == 0
    line = capsys.readouterr().out.strip()
    assert line.startswith("PASS max_rel_err=")
    assert float(line.split("=")[1].split()[0]) <= 1e-4


def test_gridsearch(dataset, tmp_path, capsys):
    out = tmp_path / "grid"
    args = ["gridsearch", "--config", str(dataset / "train.cfg"), "--epochs", "3", "--batch_size", "32",
            "--hidden", "32", "--lambda2_grid", "0.1,10", "--lambda3_grid", "0.1,10", "--k_values", "20",
            "--out_dir", str(out)]
    assert main(args) == 0
    rows = list(csv.DictReader(open(out / "grid.csv")))
    assert len(rows) == 4 and (out / "grid.png").exists()
    best_line = capsys.readouterr().out.strip().splitlines()[-1]
    best = max(rows, key=lambda r: (float(r["mAP"]), -float(r["lambda3"]), -float(r["lambda2"])))
    assert best_line.startswith(f"best lambda2={float(best['lambda2']):g} lambda3={float(best['lambda3']):g}")


def test_commands_are_idempotent(dataset, tmp_path):
    for name in ("a", "b"):
        assert main(_train_args(dataset, tmp_path / name, "--epochs", "2")) == 0
        assert main(["encode", "--checkpoint", str(tmp_path / name / "model.wdhm"), "--dataset", str(dataset),
                     "--out_dir", str(tmp_path / name)]) == 0
    for f in ("model.wdhm", "codes.wdhc", "loss.csv"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
