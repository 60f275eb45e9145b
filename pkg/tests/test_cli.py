import csv
import json

import numpy as np
import pytest

from embcompress.analysis import HardwareCostModel, flop_report
from embcompress.cli import main
from embcompress.modelfile import load_model, save_model

SMALL = {
    "data": {"synthetic": {"num_classes": 2, "vocab_size": 41, "sentences_per_class": 100}},
    "embedding": {"dim": 16},
    "model": {"dan_hidden": [64, 32]},
    "train": {"epochs": 8},
    "sweep": {"R": [0.5, 0.9], "seeds": [0]},
}


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "small.json"
    cfg.write_text(json.dumps(SMALL), encoding="utf-8")
    assert main(["train", "--config", str(cfg), "--out", str(root / "train")]) == 0
    return root, cfg


def summary(path):
    return json.loads(path.read_text(encoding="utf-8"))


def test_train_summary(workdir):
    root, _ = workdir
    s = summary(root / "train" / "model.summary.json")
    assert s["test_accuracy"] >= 0.99
    assert s["file_bytes"] == (root / "train" / "model.emsq").stat().st_size
    rows = list(csv.reader(open(root / "train" / "model.metrics.csv")))
    assert rows[0] == ["batch_index", "epoch", "lr", "train_loss", "dev_accuracy"]
    assert sum(1 for r in rows[1:] if r[4]) == 8
    assert (root / "train" / "model.png").stat().st_size > 0


def test_train_is_byte_identical(workdir, tmp_path):
    root, cfg = workdir
    assert main(["train", "--config", str(cfg), "--out", str(tmp_path)]) == 0
    for f in (root / "train").iterdir():
        assert f.read_bytes() == (tmp_path / f.name).read_bytes(), f.name


def test_missing_dataset_fails(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"data": {"train": "nope.tsv", "dev": "d.tsv", "test": "t.tsv"}}))
    assert main(["train", "--config", str(cfg), "--out", str(tmp_path)]) != 0
    err = capsys.readouterr().err.strip()
    assert err.startswith("error:") and "nope.tsv" in err and "\n" not in err


def test_bad_config_fails(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"train": {"learning_rate": 1}}))
    assert main(["train", "--config", str(cfg), "--out", str(tmp_path)]) == 1
    cfg.write_text(json.dumps({"compression": {"p": 0.1, "R": 0.9}}))
    assert main(["train", "--config", str(cfg), "--out", str(tmp_path)]) == 1
    cfg.write_text("{not json")
    assert main(["train", "--config", str(cfg), "--out", str(tmp_path)]) == 1
    assert capsys.readouterr().err.count("\n") == 3


def test_compress_retrain(workdir):
    root, cfg = workdir
    out = root / "cr"
    assert main(["compress-retrain", str(root / "train" / "model.emsq"), "--config", str(cfg),
                 "--R", "0.9", "--out", str(out)]) == 0
    s = summary(out / "compressed.summary.json")
    assert s["k"] == 1     # floor(0.1 * 41 * 16 / 57)
    assert s["embedding_payload_bytes"] <= 0.12 * s["input_embedding_payload_bytes"]
    assert s["post_retrain_dev_accuracy"] >= s["pre_retrain_dev_accuracy"]
    for key in ("pre_retrain_test_accuracy", "post_retrain_test_accuracy", "file_bytes",
                "input_file_bytes"):
        assert key in s
    assert load_model(out / "compressed.emsq").factorized
    # a factorized model cannot be compressed again
    assert main(["compress-retrain", str(out / "compressed.emsq"), "--config", str(cfg),
                 "--out", str(out / "again")]) == 1


def test_compress_lossless_on_rank_deficient_embedding(workdir, tmp_path):
    root, cfg = workdir
    model = load_model(root / "train" / "model.emsq")
    rng = np.random.default_rng(0)
    model.params["embedding"] = rng.normal(size=(41, 3)) @ rng.normal(size=(3, 16))
    save_model(tmp_path / "lowrank.emsq", model)
    # p = 1 gives k = floor(41*16/57) = 11 >= rank 3, so nothing is lost
    assert main(["compress-retrain", str(tmp_path / "lowrank.emsq"), "--config", str(cfg),
                 "--p", "1.0", "--retrain-epochs", "1", "--out", str(tmp_path)]) == 0
    s = summary(tmp_path / "compressed.summary.json")
    assert s["k"] == 11
    assert s["pre_retrain_test_accuracy"] == s["uncompressed_test_accuracy"]
    assert s["pre_retrain_dev_accuracy"] == s["uncompressed_dev_accuracy"]


@pytest.mark.parametrize("bits,ratio", [(8, 0.25), (16, 0.5)])
def test_quantize(workdir, bits, ratio, tmp_path):
    root, cfg = workdir
    model = root / "train" / "model.emsq"
    assert main(["quantize", str(model), "--bits", str(bits), "--config", str(cfg),
                 "--out", str(tmp_path)]) == 0
    s = summary(tmp_path / f"quantized_q{bits}.summary.json")
    assert s["payload_ratio_vs_32bit"] == ratio
    assert s["test_accuracy"] >= 0.95
    out2 = tmp_path / "again"
    qfile = tmp_path / f"quantized_q{bits}.emsq"
    assert main(["quantize", str(qfile), "--bits", str(bits), "--config", str(cfg),
                 "--out", str(out2)]) == 0
    assert (out2 / qfile.name).read_bytes() == qfile.read_bytes()


def test_quantize_rejects_bits(workdir, tmp_path):
    root, cfg = workdir
    assert main(["quantize", str(root / "train" / "model.emsq"), "--bits", "4",
                 "--config", str(cfg), "--out", str(tmp_path)]) == 1


def test_eval(workdir, tmp_path):
    root, cfg = workdir
    assert main(["eval", str(root / "train" / "model.emsq"), "--config", str(cfg),
                 "--out", str(tmp_path)]) == 0
    s = summary(tmp_path / "eval.json")
    assert s["accuracy"] == 1.0
    assert sum(c["count"] for c in s["per_class"]) == s["size"]
    assert sum(c["predicted"] for c in s["per_class"]) == s["size"]


def test_eval_tsv_and_vocab_mismatch(workdir, tmp_path):
    root, cfg = workdir
    data = tmp_path / "d.tsv"
    data.write_text("0\tw11 w12 w13\n1\tw25 w26\n", encoding="utf-8")
    assert main(["eval", str(root / "train" / "model.emsq"), "--data", str(data),
                 "--config", str(cfg), "--out", str(tmp_path)]) == 0
    assert summary(tmp_path / "eval.json")["size"] == 2
    other = tmp_path / "other.json"
    other.write_text(json.dumps({**SMALL, "data": {"synthetic": {"vocab_size": 60}}}))
    assert main(["eval", str(root / "train" / "model.emsq"), "--config", str(other),
                 "--out", str(tmp_path)]) == 1


def test_analyze(tmp_path):
    assert main(["analyze", "--m", "10000", "--n", "300", "--p-list", "0.1", "1.0",
                 "--out", str(tmp_path)]) == 0
    rows = list(csv.reader(open(tmp_path / "analysis.csv")))
    want = flop_report(0.1, 10000, 300, HardwareCostModel())
    assert rows[1] == [str(v) for v in want.row()]
    assert (tmp_path / "analysis.txt").read_text().count("\n") == 3
    empty = tmp_path / "empty"
    assert main(["analyze", "--p-list", "--out", str(empty)]) == 0
    assert len(list(csv.reader(open(empty / "analysis.csv")))) == 1


def test_baseline_offline(workdir):
    root, cfg = workdir
    out = root / "offline"
    assert main(["baseline-offline", "--config", str(cfg), "--R", "0.9", "--out", str(out)]) == 0
    s = summary(out / "offline.summary.json")
    model = load_model(out / "offline.emsq")
    assert s["k"] == 1 and model.input_width == 1 and model.params["fc1.w"].shape == (1, 64)
    cr = root / "cr" / "compressed.emsq"
    if cr.exists():
        k, n, h1 = 1, 16, 64
        # compress-retrain additionally stores w_b (k x n, plus its 14-byte header)
        # and keeps fc1 at n rows instead of k
        extra = 8 * k * n + (2 + 3 + 9) + 8 * (n - k) * h1
        assert cr.stat().st_size - s["file_bytes"] == extra


def test_sweep(workdir):
    root, cfg = workdir
    out = root / "sweep"
    assert main(["sweep", "--config", str(cfg), "--out", str(out)]) == 0
    rows = list(csv.DictReader(open(out / "sweep.csv")))
    assert [r["method"] for r in rows] == ["uncompressed", "quantized_16bit", "quantized_8bit",
                                           "proposed", "proposed"]
    proposed = [int(r["size_bytes"]) for r in rows if r["method"] == "proposed"]
    offline = [int(r["baseline2_size_bytes"]) for r in rows if r["method"] == "proposed"]
    assert proposed[0] > proposed[1] and offline[0] > offline[1]
    for name in ("sweep.png", "recovery.png", "sweep.json"):
        assert (out / name).stat().st_size > 0


def test_usage_errors():
    with pytest.raises(SystemExit) as exc:
        main([])
    assert exc.value.code == 2
    with pytest.raises(SystemExit):
        main(["compress-retrain", "m.emsq", "--p", "0.1", "--R", "0.9"])
