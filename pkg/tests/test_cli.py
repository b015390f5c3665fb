import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from datm.cli import build_parser, main, read_config
from datm.corpus import load_uci_bow
from datm.trainer import load_checkpoint


def run(capsys, *argv):
    main([str(a) for a in argv])
    return json.loads(capsys.readouterr().out.strip().splitlines()[-1])


@pytest.fixture
def corpus_file(tmp_path, capsys):
    path = tmp_path / "docword.txt"
    info = run(capsys, "--seed", 1, "generate", "--vocab-size", 30, "--widths", "4", "--num-docs",
               60, "--r", 0.5, "--top-rate", 0.1, "--out", path, "--truth", tmp_path / "truth.npz")
    assert info["num_docs"] == 60 and path.exists()
    return path


@pytest.fixture
def model(tmp_path, corpus_file, capsys):
    out = tmp_path / "m.ckpt"
    run(capsys, "train", "--input", corpus_file, "--out", out, "--widths", "4,2", "--iterations", 20,
        "--burn-in", 10, "--num-samples", 2, "--batch-size", 20)
    return out


def test_generate_truth_matches_corpus(tmp_path, corpus_file):
    truth = np.load(tmp_path / "truth.npz")
    c = load_uci_bow(corpus_file)
    assert truth["phi1"].shape == (30, 4) and truth["theta1"].shape == (60, 4)
    np.testing.assert_allclose(truth["phi1"].sum(axis=0), 1.0)
    assert c.vocab_size == 30


def test_read_config_and_precedence(tmp_path, corpus_file, capsys):
    conf = tmp_path / "run.conf"
    conf.write_text("# toy run\nwidths = 3 2\niterations = 12  # short\nburn-in = 4\n"
                    "batch_size = 15\nvariant = ghai\nnum_samples = 2\n")
    assert read_config(conf)["burn_in"] == "4"
    out = tmp_path / "c.ckpt"
    info = run(capsys, "--config", conf, "--seed", 5, "train", "--input", corpus_file, "--out", out,
               "--iterations", 16)
    assert info["iterations"] == 16 and info["samples"] == 2
    cfg = load_checkpoint(out).cfg
    assert cfg.widths == (3, 2) and cfg.variant == "ghai" and cfg.seed == 5
    assert cfg.burn_in == 4 and cfg.batch_size == 15
    bad = tmp_path / "bad.conf"
    bad.write_text("widths 3\n")
    with pytest.raises(ValueError):
        read_config(bad)


def test_eval_ppl(model, corpus_file, capsys):
    info = run(capsys, "eval-ppl", "--model", model, "--input", corpus_file, "--test-frac", 0.3)
    assert 1.0 < info["perplexity"] < 30 * 5 and info["samples"] == 2
    one = run(capsys, "eval-ppl", "--model", model, "--input", corpus_file, "-S", 1,
              "--mode", "sample")
    assert one["samples"] == 1


def test_encode_csv(model, corpus_file, tmp_path):
    out = tmp_path / "theta.csv"
    main(["encode", "--model", str(model), "--input", str(corpus_file), "--layer", "2",
          "--output", str(out)])
    rows = list(csv.reader(out.open()))
    assert rows[0] == ["doc", "t1", "t2"] and len(rows) == 61
    assert all(float(v) > 0 for v in rows[1][1:])


def test_topics_files(model, tmp_path, capsys):
    vocab = tmp_path / "vocab.txt"
    vocab.write_text("\n".join(f"w{i}" for i in range(30)) + "\n")
    info = run(capsys, "topics", "--model", model, "--vocab", vocab, "--out-prefix",
               tmp_path / "tree", "--top-words", 3, "--threshold", 0.0)
    assert info["nodes"] == 6 and info["edges"] == 8
    assert (tmp_path / "tree.dot").read_text().count("->") == 8
    assert "w" in (tmp_path / "tree.txt").read_text()


def test_oracle_gibbs(corpus_file, tmp_path, capsys):
    info = run(capsys, "oracle-gibbs", "--input", corpus_file, "--widths", "4", "--sweeps", 20,
               "--test-frac", 0.3)
    assert 1.0 < info["perplexity"] < 30
    out = tmp_path / "g.ckpt"
    info = run(capsys, "oracle-gibbs", "--input", corpus_file, "--widths", "4", "--sweeps", 10,
               "--out", out)
    assert len(info["r"]) == 4
    assert load_checkpoint(out).g.widths == [4]


def test_bench_modes(model, corpus_file, capsys):
    rep = run(capsys, "bench", "--model", model, "--input", corpus_file, "--n-docs", 10,
              "--gibbs-sweeps", 5)
    assert set(rep) == {"encode", "gibbs"}
    rep = run(capsys, "bench", "--model", model, "--input", corpus_file, "--mode", "encode",
              "--n-docs", 10)
    assert set(rep) == {"encode"} and rep["encode"]["n_docs"] == 10


def test_supervised_train_then_classify(corpus_file, tmp_path, capsys):
    labels = tmp_path / "labels.txt"
    labels.write_text("\n".join(str(1 + i % 3) for i in range(60)) + "\n")
    out = tmp_path / "s.ckpt"
    run(capsys, "train", "--input", corpus_file, "--labels", labels, "--out", out, "--widths", "4",
        "--batch-size", 20, "--iterations", 0, "--burn-in", 0, "--unsup-epochs", 1,
        "--sup-epochs", 2, "--warmup-epochs", 1, "--head", "nonlinear")
    pred = tmp_path / "pred.csv"
    main(["classify", "--model", str(out), "--input", str(corpus_file), "--n-collect", "2",
          "--output", str(pred)])
    rows = list(csv.reader(pred.open()))
    assert rows[0] == ["doc", "predicted", "p1", "p2", "p3"] and len(rows) == 61
    for r in rows[1:]:
        assert r[1] in {"1", "2", "3"}
        assert sum(float(v) for v in r[2:]) == pytest.approx(1.0, abs=1e-4)


def test_classify_without_classifier_exits(model, corpus_file):
    with pytest.raises(SystemExit):
        main(["classify", "--model", str(model), "--input", str(corpus_file)])


def test_layerwise_then_evaluate(corpus_file, tmp_path, capsys):
    out = tmp_path / "lw.ckpt"
    info = run(capsys, "train-layerwise", "--input", corpus_file, "--out", out, "--k1-max", 6,
               "--num-layers", 2, "--stage-iterations", 20, "--burn-in", 10, "--batch-size", 20,
               "--prune-u", 0.0, "--num-samples", 2, "--iterations", 20)
    assert info["widths"] == [6, 6]
    tr = load_checkpoint(out)
    assert tr.cfg.widths == (6, 6) and len(tr.samples) == 2
    ppl = run(capsys, "eval-ppl", "--model", out, "--input", corpus_file)
    assert ppl["perplexity"] > 1


def test_threads_flag(corpus_file, tmp_path, capsys):
    info = run(capsys, "--threads", 1, "train", "--input", corpus_file, "--out", tmp_path / "t.ckpt",
               "--widths", "3", "--iterations", 3, "--burn-in", 1, "--num-samples", 1)
    assert info["iterations"] == 3


def test_parser_rejects_unknown_variant():
    with pytest.raises(SystemExit):
        build_parser().parse_args(["--variant", "vae", "train", "--input", "x", "--out", "y"])


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "datm", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    for cmd in ("train", "train-layerwise", "eval-ppl", "classify", "encode", "topics",
                "oracle-gibbs", "generate", "bench"):
        assert cmd in res.stdout
