"""Train -> compress -> retrain -> quantize -> evaluate pipelines behind the CLI.

Each ``run_*`` function writes its artifacts into an output directory and
returns a summary dict. Artifacts carry no timestamps or absolute paths, so a
rerun with the same config and seed reproduces them byte for byte.
"""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import plots
from .analysis import HardwareCostModel, flop_report, time_inference
from .config import PipelineConfig
from .data import Dataset, Vocabulary, load_tsv, make_synthetic
from .embedding import (choose_rank, load_glove_text, offline_compress, random_init)
from .modelfile import (embedding_payload_bytes, load_model, payload_bytes,
                        reference_payload_bytes, save_model, serialize)
from .models import Model, build_model
from .optim import accuracy, train
from .quantize import QuantizedModel, quantize_model

log = logging.getLogger(__name__)

LSTM_MAX_LEN = 400
MB = 1024 * 1024


class PipelineError(RuntimeError):
    pass


# ---------------------------------------------------------------- helpers

def load_corpus(cfg: PipelineConfig):
    d = cfg.data
    max_len = d.max_len
    if max_len is None and cfg.model.kind == "lstm":
        max_len = LSTM_MAX_LEN
    if d.uses_files:
        for p in (d.train, d.dev, d.test):
            if not Path(p).is_file():
                raise PipelineError(f"dataset file not found: {p}")
        tr = load_tsv(d.train, min_count=d.min_count, max_len=max_len)
        dv = load_tsv(d.dev, tr.vocab, tr.num_classes, "dev", max_len=max_len)
        te = load_tsv(d.test, tr.vocab, tr.num_classes, "test", max_len=max_len)
        classes = max(tr.num_classes, dv.num_classes, te.num_classes)
        return tuple(replace(ds, num_classes=classes) for ds in (tr, dv, te))
    s = d.synthetic
    return make_synthetic(s.num_classes, s.vocab_size, s.sentences_per_class, s.sep, s.seed)


def initial_embedding(cfg: PipelineConfig, vocab: Vocabulary, seed: int):
    if cfg.embedding.glove:
        if not Path(cfg.embedding.glove).is_file():
            raise PipelineError(f"embedding file not found: {cfg.embedding.glove}")
        table, coverage = load_glove_text(cfg.embedding.glove, vocab, seed)
        log.info("GloVe coverage %.4f", coverage)
        return table, coverage
    return random_init(len(vocab), cfg.embedding.dim, seed), None


def new_model(cfg: PipelineConfig, embedding, num_classes: int, seed: int) -> Model:
    kw = ({"hidden": tuple(cfg.model.dan_hidden)} if cfg.model.kind == "dan"
          else {"hidden": cfg.model.lstm_hidden})
    return build_model(cfg.model.kind, embedding, num_classes, seed=seed,
                       dropout=cfg.train["dropout"], **kw)


def _check_compatible(model, dataset: Dataset):
    m = model.dequantized() if isinstance(model, QuantizedModel) else model
    if m.vocab_size != len(dataset.vocab):
        raise PipelineError(
            f"vocabulary mismatch: model has {m.vocab_size} rows, dataset vocabulary "
            f"has {len(dataset.vocab)} tokens")
    if dataset.num_classes > m.num_classes:
        raise PipelineError(f"dataset has {dataset.num_classes} classes, model predicts "
                            f"{m.num_classes}")
    return m


def _acc(model, dataset) -> float:
    return accuracy(_check_compatible(model, dataset), dataset)


def _vocab_path(model_path) -> Path:
    return Path(model_path).with_suffix(".vocab")


def _write_model(out: Path, name: str, model, vocab: Vocabulary) -> int:
    size = save_model(out / f"{name}.emsq", model)
    vocab.save(out / f"{name}.vocab")
    return size


def _write_json(path: Path, obj):
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _sizes(model, size: int) -> dict:
    return {"file_bytes": size, "file_mb": round(size / MB, 2),
            "payload_bytes": payload_bytes(model),
            "embedding_payload_bytes": embedding_payload_bytes(model)}


def _load_full_precision(path) -> Model:
    if not Path(path).is_file():
        raise PipelineError(f"model file not found: {path}")
    model = load_model(path)
    if isinstance(model, QuantizedModel):
        raise PipelineError(f"{path} is quantized; a full-precision model is required")
    return model


def format_summary(summary: dict) -> str:
    lines = []
    for key in sorted(summary):
        value = summary[key]
        if isinstance(value, float) and "accuracy" in key:
            value = f"{value:.4f}"
        if isinstance(value, (dict, list)):
            value = json.dumps(value, sort_keys=True)
        lines.append(f"{key}: {value}")
    return "\n".join(lines)


# ---------------------------------------------------------------- commands

def run_train(cfg: PipelineConfig, out: Path, plots_on: bool = True) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    tr, dv, te = load_corpus(cfg)
    emb, coverage = initial_embedding(cfg, tr.vocab, cfg.seed)
    model = new_model(cfg, emb, tr.num_classes, cfg.seed)
    best, metrics = train(model, tr, dv, cfg.train_config(), cfg.calr_config())
    size = _write_model(out, "model", best, tr.vocab)
    metrics.write_csv(out / "model.metrics.csv")
    summary = {"command": "train", "model_kind": best.kind, "seed": cfg.seed,
               "dev_accuracy": _acc(best, dv), "test_accuracy": _acc(best, te),
               "num_params": best.num_params(), **_sizes(best, size)}
    if coverage is not None:
        summary["glove_coverage"] = coverage
    _write_json(out / "model.summary.json", summary)
    if plots_on:
        plots.plot_training(metrics, out / "model.png", f"{best.kind} training")
    return summary


def _retrain_compressed(cfg, model: Model, p: float, tr, dv, epochs):
    compressed = model.compress(p)
    best, metrics = train(compressed.copy(), tr, dv, cfg.train_config(epochs), cfg.calr_config())
    return compressed, best, metrics


def run_compress_retrain(cfg: PipelineConfig, model_path, out: Path, p: float | None = None,
                         retrain_epochs: int | None = None, plots_on: bool = True) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    model = _load_full_precision(model_path)
    if model.factorized:
        raise PipelineError(f"{model_path} already has a factorized embedding")
    p = cfg.compression.retained if p is None else p
    epochs = retrain_epochs or cfg.compression.retrain_epochs or cfg.train["epochs"]
    tr, dv, te = load_corpus(cfg)
    _check_compatible(model, tr)
    compressed, best, metrics = _retrain_compressed(cfg, model, p, tr, dv, epochs)
    in_size = len(serialize(model))
    size = _write_model(out, "compressed", best, tr.vocab)
    metrics.write_csv(out / "compressed.metrics.csv")
    plan = choose_rank(p, model.vocab_size, model.params["embedding"].shape[1])
    summary = {
        "command": "compress-retrain", "model_kind": model.kind, "seed": cfg.seed,
        "p": p, "R": 1 - p, "k": compressed.params["embedding"].shape[1], "planned_k": plan.k,
        "uncompressed_test_accuracy": _acc(model, te),
        "uncompressed_dev_accuracy": _acc(model, dv),
        "pre_retrain_test_accuracy": _acc(compressed, te),
        "pre_retrain_dev_accuracy": _acc(compressed, dv),
        "post_retrain_test_accuracy": _acc(best, te),
        "post_retrain_dev_accuracy": _acc(best, dv),
        "input_file_bytes": in_size, "input_file_mb": round(in_size / MB, 2),
        "input_embedding_payload_bytes": embedding_payload_bytes(model),
        **_sizes(best, size),
    }
    summary["embedding_payload_ratio"] = (summary["embedding_payload_bytes"]
                                          / summary["input_embedding_payload_bytes"])
    _write_json(out / "compressed.summary.json", summary)
    if plots_on:
        plots.plot_training(metrics, out / "compressed.png", f"retraining at R={1 - p:.2f}")
    return summary


def run_quantize(cfg: PipelineConfig, model_path, out: Path, bits: int | None = None,
                 data_path=None) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    bits = bits or cfg.quantize_bits
    if bits not in (8, 16):
        raise PipelineError(f"unsupported bit width {bits}; expected 8 or 16")
    if not Path(model_path).is_file():
        raise PipelineError(f"model file not found: {model_path}")
    src = load_model(model_path)
    if isinstance(src, QuantizedModel) and src.bits == bits:
        q = src   # already at this precision: re-quantizing is the identity
    else:
        base = src.dequantized() if isinstance(src, QuantizedModel) else src
        q = quantize_model(base, bits)
    ds = _eval_dataset(cfg, model_path, data_path)
    vocab_src = _vocab_path(model_path)
    vocab = Vocabulary.load(vocab_src) if vocab_src.is_file() else ds.vocab
    name = f"quantized_q{bits}"
    size = _write_model(out, name, q, vocab)
    ref32 = reference_payload_bytes(q, 32)
    summary = {"command": "quantize", "bits": bits, "model_kind": q.kind,
               "test_accuracy": _acc(q, ds),
               "input_file_bytes": Path(model_path).stat().st_size,
               "reference_32bit_payload_bytes": ref32,
               "payload_ratio_vs_32bit": payload_bytes(q) / ref32,
               **_sizes(q, size)}
    _write_json(out / f"{name}.summary.json", summary)
    return summary


def _eval_dataset(cfg: PipelineConfig, model_path, data_path=None, split: str = "test"):
    if data_path is None:
        tr, dv, te = load_corpus(cfg)
        return {"train": tr, "dev": dv, "test": te}[split]
    vocab_file = _vocab_path(model_path)
    if not vocab_file.is_file():
        raise PipelineError(f"vocabulary file not found next to the model: {vocab_file}")
    if not Path(data_path).is_file():
        raise PipelineError(f"dataset file not found: {data_path}")
    max_len = cfg.data.max_len or (LSTM_MAX_LEN if cfg.model.kind == "lstm" else None)
    return load_tsv(data_path, Vocabulary.load(vocab_file), split=split, max_len=max_len)


def run_eval(cfg: PipelineConfig, model_path, out: Path, data_path=None,
             split: str = "test") -> dict:
    out.mkdir(parents=True, exist_ok=True)
    if not Path(model_path).is_file():
        raise PipelineError(f"model file not found: {model_path}")
    model = load_model(model_path)
    ds = _eval_dataset(cfg, model_path, data_path, split)
    m = _check_compatible(model, ds)
    preds = m.predict([s.token_ids for s in ds.sentences])
    labels = ds.labels
    per_class = []
    for c in range(m.num_classes):
        sel = labels == c
        per_class.append({"class": c, "count": int(sel.sum()),
                          "correct": int((preds[sel] == c).sum()),
                          "predicted": int((preds == c).sum())})
    summary = {"command": "eval", "model": Path(model_path).name, "split": split,
               "size": len(ds), "accuracy": float(np.mean(preds == labels)),
               "per_class": per_class}
    _write_json(out / "eval.json", summary)
    return summary


def run_analyze(cfg: PipelineConfig, out: Path, plots_on: bool = True) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    a = cfg.analyze
    hw = HardwareCostModel(b_s=a.b_s, b_q=a.b_q, t_s=a.t_s, t_q=a.t_q)
    reports = [flop_report(p, a.m, a.n, hw) for p in a.p]
    with open(out / "analysis.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(reports[0].HEADER if reports else _report_header())
        for r in reports:
            w.writerow(r.row())
    lines = [f"m={a.m} n={a.n} B_S={a.b_s} B_Q={a.b_q} t_q/t_s={float(hw.time_ratio):.6g}"]
    for r in reports:
        lines.append(
            f"p={r.p:g} k={r.k} F_Q={r.f_q} F_S={r.f_s} "
            f"fewer-FLOPs exact={r.flops['holds']} (k < {r.flops['threshold']:.4f}) "
            f"approx={r.flops['approx_holds']} (k < {r.flops['approx_threshold']:.4f}) | "
            f"space p<B_Q/B_S={r.space.holds} | "
            f"latency exact={r.latency['exact_holds']} approx={r.latency['approx_holds']}")
    (out / "analysis.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    if plots_on and reports:
        plots.plot_flops(reports, out / "analysis.png")
    return {"command": "analyze", "rows": len(reports), "m": a.m, "n": a.n}


def _report_header():
    from .analysis import FlopReport
    return FlopReport.HEADER


def offline_model(cfg: PipelineConfig, vocab: Vocabulary, num_classes: int, p: float,
                  seed: int) -> Model:
    """Untrained baseline model whose embedding is already k columns wide."""
    if cfg.embedding.glove:
        table, _ = initial_embedding(cfg, vocab, seed)
        emb = offline_compress(table, p)
    else:
        k = choose_rank(p, len(vocab), cfg.embedding.dim).k
        emb = random_init(len(vocab), k, seed)
    return new_model(cfg, emb, num_classes, seed)


def run_baseline_offline(cfg: PipelineConfig, out: Path, p: float | None = None,
                         plots_on: bool = True) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    p = cfg.compression.retained if p is None else p
    tr, dv, te = load_corpus(cfg)
    model = offline_model(cfg, tr.vocab, tr.num_classes, p, cfg.seed)
    best, metrics = train(model, tr, dv, cfg.train_config(), cfg.calr_config())
    size = _write_model(out, "offline", best, tr.vocab)
    metrics.write_csv(out / "offline.metrics.csv")
    summary = {"command": "baseline-offline", "model_kind": best.kind, "seed": cfg.seed,
               "p": p, "R": 1 - p, "k": best.params["embedding"].shape[1],
               "first_layer_input_width": best.input_width,
               "dev_accuracy": _acc(best, dv), "test_accuracy": _acc(best, te),
               **_sizes(best, size)}
    _write_json(out / "offline.summary.json", summary)
    if plots_on:
        plots.plot_training(metrics, out / "offline.png", f"offline baseline at R={1 - p:.2f}")
    return summary


SWEEP_HEADER = ("method", "R_pct", "k", "size_bytes", "size_mb", "accuracy",
                "baseline2_size_bytes", "baseline2_size_mb", "baseline2_accuracy")


def run_sweep(cfg: PipelineConfig, out: Path, plots_on: bool = True, timing: bool = False,
              seeds=None) -> dict:
    """Uncompressed, quantized, proposed and offline-baseline models across R values.

    Accuracies are test-set means over the sweep seeds.
    """
    out.mkdir(parents=True, exist_ok=True)
    seeds = tuple(seeds if seeds is not None else cfg.sweep.seeds)
    r_values = tuple(cfg.sweep.R)
    tr, dv, te = load_corpus(cfg)
    acc = {}
    sizes = {}
    recovery = {}
    refs = {}
    timings = []

    def record(key, value):
        acc.setdefault(key, []).append(value)

    for si, seed in enumerate(seeds):
        scfg = replace(cfg, seed=seed)
        emb, _ = initial_embedding(scfg, tr.vocab, seed)
        base, _ = train(new_model(scfg, emb, tr.num_classes, seed), tr, dv,
                        scfg.train_config(), scfg.calr_config())
        record("uncompressed", accuracy(base, te))
        sizes["uncompressed"] = len(serialize(base))
        if si == 0:
            refs["uncompressed"] = accuracy(base, dv)
        for bits in cfg.sweep.bits:
            q = quantize_model(base, bits)
            record(("quantized", bits), accuracy(q.dequantized(), te))
            sizes[("quantized", bits)] = len(serialize(q))
            if si == 0:
                refs[f"{bits}-bit"] = accuracy(q.dequantized(), dv)
                if timing:
                    timings.append((f"quantized_{bits}bit", 100 * (1 - bits / 32),
                                    time_inference(q, te)))
        for r in r_values:
            p = 1 - r
            compressed, best, metrics = _retrain_compressed(scfg, base, p, tr, dv, None)
            record(("pre_retrain", r), accuracy(compressed, te))
            record(("proposed", r), accuracy(best, te))
            sizes[("proposed", r)] = len(serialize(best))
            sizes[("k", r)] = best.params["embedding"].shape[1]
            off, _ = train(offline_model(scfg, tr.vocab, tr.num_classes, p, seed), tr, dv,
                           scfg.train_config(), scfg.calr_config())
            record(("baseline2", r), accuracy(off, te))
            sizes[("baseline2", r)] = len(serialize(off))
            if si == 0:
                recovery[f"R={100 * r:g}%"] = [(0, accuracy(compressed, dv))] + [
                    (row[0] + 1, row[4]) for row in metrics.rows if row[4] is not None]
                if timing:
                    timings.append(("proposed", 100 * r, time_inference(best, te)))

    mean = {key: float(np.mean(v)) for key, v in acc.items()}
    rows = [("uncompressed", 0, "", sizes["uncompressed"],
             round(sizes["uncompressed"] / MB, 2), mean["uncompressed"], "", "", "")]
    for bits in cfg.sweep.bits:
        s = sizes[("quantized", bits)]
        rows.append((f"quantized_{bits}bit", round(100 * (1 - bits / 32), 2), "", s,
                     round(s / MB, 2), mean[("quantized", bits)], "", "", ""))
    for r in r_values:
        s, s2 = sizes[("proposed", r)], sizes[("baseline2", r)]
        rows.append(("proposed", round(100 * r, 2), sizes[("k", r)], s, round(s / MB, 2),
                     mean[("proposed", r)], s2, round(s2 / MB, 2), mean[("baseline2", r)]))
    with open(out / "sweep.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SWEEP_HEADER)
        for row in rows:
            w.writerow(tuple(f"{v:.4f}" if isinstance(v, float) and i == 5 or
                             isinstance(v, float) and i == 8 else v
                             for i, v in enumerate(row)))
    per_seed = {"seeds": list(seeds), "uncompressed": acc["uncompressed"],
                "quantized": {str(b): acc[("quantized", b)] for b in cfg.sweep.bits},
                "pre_retrain": {f"{r:g}": acc[("pre_retrain", r)] for r in r_values},
                "proposed": {f"{r:g}": acc[("proposed", r)] for r in r_values},
                "baseline2": {f"{r:g}": acc[("baseline2", r)] for r in r_values}}
    _write_json(out / "sweep.json", per_seed)
    if timing:
        with open(out / "timing.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("method", "R_pct", "mean_s", "stddev_s", "median_s", "repeats"))
            for name, r, t in timings:
                w.writerow((name, r, t.mean, t.stddev, t.median, t.repeats))
    if plots_on:
        plots.plot_sweep(r_values, [mean[("proposed", r)] for r in r_values],
                         [mean[("baseline2", r)] for r in r_values],
                         {b: (1 - b / 32, mean[("quantized", b)]) for b in cfg.sweep.bits},
                         mean["uncompressed"], out / "sweep.png")
        plots.plot_recovery(recovery, refs, out / "recovery.png")
    return {"command": "sweep", "rows": [dict(zip(SWEEP_HEADER, r)) for r in rows],
            "per_seed": per_seed}
