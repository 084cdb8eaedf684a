"""Pipeline stages that read and write explicit artifacts in a working directory.

Every stage returns a short summary string; the CLI prints it.
"""

import dataclasses
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import checkpoint as ckpt
from . import graph as graphmod
from . import metrics, model, synth
from .errors import SchemaViolation
from .ingest import load_tables, write_tables
from .preprocess import (FeatureMatrix, FittedTransform, fit_transform, preprocess_report,
                         split_table, transform)
from .train import mean_edge_gap, train_loop

log = logging.getLogger(__name__)

TRANSACTIONS = "transaction.csv"
IDENTITY = "identity.csv"
TABLE = "table.csv"
FEATURES = "features.npz"
FITTED = "fitted.json"
PREPROCESS_REPORT = "preprocess_report.json"
GRAPH = "graph.rgcsr"
GRAPH_SUMMARY = "graph_summary.txt"
CHECKPOINT = "model.rgckpt"
HISTORY = "history.jsonl"
REPORT = "report.txt"
SCORES = "scores.csv"
SWEEP_DEFAULTS = {
    "hidden_dim": [16, 32, 64, 128, 256],
    "dropout": [0.0, 0.1, 0.2, 0.3, 0.4, 0.5],
}


def _path(out, name):
    return os.path.join(out, name)


def _require(path, stage):
    if not os.path.exists(path):
        raise FileNotFoundError(f"{stage}: required input {path} does not exist")
    return path


def _joined_schema(schema):
    return [dataclasses.replace(c, source="transaction") for c in schema]


def _write_json(path, data):
    with open(path, "w") as f:
        json.dump(data, f, indent=2)
        f.write("\n")


def run_synth(cfg, out):
    os.makedirs(out, exist_ok=True)
    table = synth.generate(cfg.synth)
    write_tables(table, _path(out, TRANSACTIONS), _path(out, IDENTITY))
    return (f"synth: {table.n_rows} transactions, {int(table.labels.sum())} fraudulent "
            f"({table.labels.mean():.4f}) -> {out}")


def run_ingest(cfg, out, transactions=None, identity=None):
    os.makedirs(out, exist_ok=True)
    transactions = transactions or cfg.paths.transactions or _path(out, TRANSACTIONS)
    identity = identity or cfg.paths.identity
    if identity is None and os.path.exists(_path(out, IDENTITY)):
        identity = _path(out, IDENTITY)
    table = load_tables(_require(transactions, "ingest"), identity, cfg.schema)
    joined = dataclasses.replace(table, columns=tuple(_joined_schema(table.columns)))
    write_tables(joined, _path(out, TABLE))
    return f"ingest: {table.n_rows} rows x {len(table.columns)} columns -> {_path(out, TABLE)}"


def load_joined(cfg, out):
    return load_tables(_require(_path(out, TABLE), "load"), None, _joined_schema(cfg.schema))


def run_preprocess(cfg, out):
    table = load_joined(cfg, out)
    features, fitted, _ = fit_transform(table, cfg.preprocess)
    features.save(_path(out, FEATURES))
    _write_json(_path(out, FITTED), fitted.to_dict())
    report = preprocess_report(table, features, fitted)
    _write_json(_path(out, PREPROCESS_REPORT), report)
    counts = [int((features.split == s).sum()) for s in range(3)]
    return (f"preprocess: {features.n} rows, {features.d} features, "
            f"{len(report['dropped'])} columns dropped, split train/val/test = "
            f"{counts[0]}/{counts[1]}/{counts[2]}")


def run_build_graph(cfg, out):
    table = load_joined(cfg, out)
    g = graphmod.build_graph(table, cfg.graph.rules, cfg.graph.min_component_size)
    graphmod.save_csr(g, _path(out, GRAPH))
    summary = graphmod.graph_summary(g)
    with open(_path(out, GRAPH_SUMMARY), "w") as f:
        f.write(summary)
    return f"build-graph: {g.n_nodes} nodes, {g.edge_count // 2} edges -> {_path(out, GRAPH)}"


def load_inputs(out):
    features = FeatureMatrix.load(_require(_path(out, FEATURES), "train"))
    g = graphmod.load_csr(_require(_path(out, GRAPH), "train"))
    if g.n_nodes != features.n:
        raise SchemaViolation(f"graph has {g.n_nodes} nodes but features have {features.n} rows")
    return features, g


def train_and_save(cfg, out, features, g, checkpoint_path=None):
    fitted = FittedTransform.from_dict(_load_json(_require(_path(out, FITTED), "train")))
    result = train_loop(g, features, cfg.model, cfg.train)
    meta = {
        "seed": cfg.train.seed,
        "best_epoch": result.best_epoch,
        "best_val_auprc": result.best_val_auprc,
        "best_val_auroc": result.best_val_auroc,
        "stopped_epoch": result.stopped_epoch,
        "pos_weight": result.pos_weight,
        "input_dim": features.d,
    }
    ckpt.save_checkpoint(checkpoint_path or _path(out, CHECKPOINT), cfg, fitted,
                         result.params, meta)
    return result


def run_train(cfg, out):
    features, g = load_inputs(out)
    result = train_and_save(cfg, out, features, g)
    with open(_path(out, HISTORY), "w") as f:
        for rec in result.history:
            f.write(json.dumps(rec) + "\n")
    return (f"train: stopped after {result.stopped_epoch} epochs, best epoch "
            f"{result.best_epoch}, val AUPRC {_fmt(result.best_val_auprc)}, "
            f"val AUROC {_fmt(result.best_val_auroc)}")


def _fmt(v):
    return "n/a" if v is None else f"{v:.6f}"


def _load_json(path):
    with open(path) as f:
        return json.load(f)


def check_compatible(checkpoint, features):
    expected = checkpoint.params["layer0.head0.W"].shape[0]
    if features.d != expected:
        raise SchemaViolation(f"data has {features.d} features, checkpoint expects {expected}")


def run_evaluate(cfg, out, split="test", checkpoint_path=None):
    cp = ckpt.load_checkpoint(_require(checkpoint_path or _path(out, CHECKPOINT), "evaluate"))
    features, g = load_inputs(out)
    check_compatible(cp, features)
    p = model.predict(g, features.x, cp.params, cp.config.model)
    splits = ["train", "val", "test"] if split == "all" else [split]
    lines = []
    for name in splits:
        mask = features.mask(name)
        report = metrics.evaluate(p[mask], features.y[mask], split=name,
                                  threshold=cfg.eval.threshold, n_bins=cfg.eval.n_bins)
        with open(_path(out, f"metrics_{name}.json"), "w") as f:
            f.write(report.to_json())
        lines.append(f"evaluate[{name}]: n={report.n} AUROC={_fmt(report.auroc)} "
                     f"AUPRC={_fmt(report.auprc)} ECE={report.ece:.6f} "
                     f"Brier={report.brier:.6f} F1={report.f1:.6f}")
    return "\n".join(lines)


def run_report(cfg, out):
    sections = []
    path = _path(out, PREPROCESS_REPORT)
    if os.path.exists(path):
        rep = _load_json(path)
        sections.append("== preprocessing ==")
        sections.append(f"rows {rep['n_rows']}, features {rep['n_features']}")
        for name, rate in sorted(rep["dropped"].items()):
            sections.append(f"dropped {name} (missing {rate:.4f})")
        worst = sorted(rep["missing_before"].items(), key=lambda kv: -kv[1])[:10]
        for name, rate in worst:
            sections.append(f"missing before {name}: {rate:.4f} -> after 0.0000")
        if "amount" in rep:
            a = rep["amount"]
            sections.append(f"{a['column']} max before {a['before']['max']:.4f}, "
                            f"after {a['after']['max']:.4f} (clip [{a['clip_lo']:.4f}, "
                            f"{a['clip_hi']:.4f}])")
    if os.path.exists(_path(out, GRAPH_SUMMARY)):
        sections.append("== graph ==")
        with open(_path(out, GRAPH_SUMMARY)) as f:
            sections.extend(f.read().splitlines()[:6])
    if os.path.exists(_path(out, HISTORY)):
        with open(_path(out, HISTORY)) as f:
            hist = [json.loads(line) for line in f]
        sections.append("== training ==")
        sections.append(f"epochs {len(hist)}, first loss {hist[0]['loss_total']:.4f}, "
                        f"last loss {hist[-1]['loss_total']:.4f}")
    for name in ("train", "val", "test"):
        path = _path(out, f"metrics_{name}.json")
        if not os.path.exists(path):
            continue
        m = _load_json(path)
        sections.append(f"== metrics [{name}] ==")
        for key in ("accuracy", "precision", "recall", "f1", "auroc", "auprc", "ece", "brier"):
            sections.append(f"{key}\t{_fmt(m[key])}")
        sections.append("bin\tcount\tmean_p\tpos_rate")
        for r in m["reliability"]:
            if r["count"]:
                sections.append(f"{r['bin']}\t{r['count']}\t{r['mean_p']:.4f}\t"
                                f"{r['pos_rate']:.4f}")
    text = "\n".join(sections) + "\n"
    with open(_path(out, REPORT), "w") as f:
        f.write(text)
    return text.rstrip("\n")


def score_table(cp, table):
    """Risk probabilities for a raw table using a checkpoint's transform and graph rules."""
    if table.n_rows == 0:
        return np.zeros(0)
    features = transform(table, cp.fitted)
    check_compatible(cp, features)
    cfg = cp.config
    g = graphmod.build_graph(table, cfg.graph.rules, cfg.graph.min_component_size)
    return model.predict(g, features.x, cp.params, cfg.model)


def run_score(cfg, out, checkpoint_path=None, transactions=None, identity=None,
              output=None):
    cp = ckpt.load_checkpoint(_require(checkpoint_path or _path(out, CHECKPOINT), "score"))
    transactions = transactions or cfg.paths.transactions or _path(out, TRANSACTIONS)
    identity = identity or cfg.paths.identity
    if identity is None and transactions == _path(out, TRANSACTIONS) \
            and os.path.exists(_path(out, IDENTITY)):
        identity = _path(out, IDENTITY)
    table = load_tables(_require(transactions, "score"), identity, cp.config.schema)
    p = score_table(cp, table)
    output = output or _path(out, SCORES)
    threshold = cfg.eval.threshold
    with open(output, "w") as f:
        f.write(f"{table.id_column},p_fraud,predicted\n")
        for tid, prob in zip(table.ids, p):
            f.write(f"{int(tid)},{float(prob)!r},{int(prob >= threshold)}\n")
    return f"score: {table.n_rows} transactions -> {output}"


def _sweep_one(args):
    cfg, param, value, features, g = args
    if param == "hidden_dim":
        mcfg = dataclasses.replace(cfg.model, hidden_dim=int(value))
    else:
        mcfg = dataclasses.replace(cfg.model, dropout_rate=float(value))
    result = train_loop(g, features, mcfg, cfg.train)
    p = model.predict(g, features.x, result.params, mcfg)
    test = features.mask("test")
    return float(value), metrics.auroc(p[test], features.y[test])


def sweep(cfg, features, g, param, values, parallel=False):
    """Train from scratch once per value; return ``[(value, test AUROC)]`` ascending by value."""
    if param not in SWEEP_DEFAULTS:
        raise ValueError(f"sweep parameter must be one of {sorted(SWEEP_DEFAULTS)}")
    values = sorted(float(v) for v in (values or SWEEP_DEFAULTS[param]))
    jobs = [(cfg, param, v, features, g) for v in values]
    if parallel:
        with ProcessPoolExecutor() as pool:
            rows = list(pool.map(_sweep_one, jobs))
    else:
        rows = [_sweep_one(j) for j in jobs]
    return rows


def run_sweep(cfg, out, param, values=None, parallel=False):
    features, g = load_inputs(out)
    rows = sweep(cfg, features, g, param, values, parallel)
    fmt = (lambda v: str(int(v))) if param == "hidden_dim" else (lambda v: f"{v:g}")
    with open(_path(out, f"sweep_{param}.tsv"), "w") as f:
        f.write(f"{param}\ttest_auroc\n")
        for v, a in rows:
            f.write(f"{fmt(v)}\t{a:.6f}\n")
    _write_json(_path(out, f"sweep_{param}.json"),
                {"param": param, "values": [v for v, _ in rows],
                 "test_auroc": [a for _, a in rows]})
    lines = [f"{param}\ttest_auroc"] + [f"{fmt(v)}\t{a:.6f}" for v, a in rows]
    return "\n".join(lines)


def baseline_gap(cfg, features, g, result=None):
    """Test AUROC of the graph model and of the no-graph logistic baseline."""
    if result is None:
        result = train_loop(g, features, cfg.model, cfg.train)
    test = features.mask("test")
    p_gnn = model.predict(g, features.x, result.params, cfg.model)
    p_base, _ = synth.logistic_baseline(features, cfg.train)
    return (metrics.auroc(p_gnn[test], features.y[test]),
            metrics.auroc(p_base[test], features.y[test]))


def embedding_gap(cfg, features, g, params):
    h = model.encode(g, features.x, params, cfg.model, training=False)
    return mean_edge_gap(h, g)


def split_of(cfg, table):
    return split_table(table, cfg.preprocess)
