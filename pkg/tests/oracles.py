"""Independent brute-force reference implementations shared by the test modules."""

import itertools
import math

import numpy as np

from riskgraph.graph import EdgeKeyRule
from riskgraph.ingest import ColumnSpec, RawTable

KEYS = ["k1", "k2", "k3"]


def key_table(columns, t=None):
    n = len(next(iter(columns.values())))
    cols = [ColumnSpec("id", "identifier"), ColumnSpec("y", "label"), ColumnSpec("t", "time")]
    cells = {"id": np.arange(n, dtype=np.int64), "y": np.zeros(n, dtype=np.int64),
             "t": np.arange(n, dtype=float) if t is None else np.asarray(t, dtype=float)}
    for name, v in columns.items():
        cols.append(ColumnSpec(name, "categorical"))
        cells[name] = np.asarray(v, dtype=object)
    return RawTable(tuple(cols), n, cells)


# ----------------------------------------------------------------- metrics


def oracle_auroc(p, y):
    pos = [a for a, b in zip(p, y) if b == 1]
    neg = [a for a, b in zip(p, y) if b == 0]
    total = 0.0
    for a in pos:
        for b in neg:
            total += 1.0 if a > b else 0.5 if a == b else 0.0
    return total / (len(pos) * len(neg))


def oracle_auprc(p, y):
    n_pos = sum(y)
    ap, prev_recall = 0.0, 0.0
    for s in sorted(set(p), reverse=True):
        chosen = [b for a, b in zip(p, y) if a >= s]
        tp = sum(chosen)
        precision, recall = tp / len(chosen), tp / n_pos
        ap += (recall - prev_recall) * precision
        prev_recall = recall
    return ap


def oracle_ece(p, y, n_bins):
    bins = [[] for _ in range(n_bins)]
    for a, b in zip(p, y):
        bins[min(int(math.floor(a * n_bins)), n_bins - 1)].append((a, b))
    total = 0.0
    for members in bins:
        if members:
            mean_p = sum(a for a, _ in members) / len(members)
            rate = sum(b for _, b in members) / len(members)
            total += len(members) / len(p) * abs(mean_p - rate)
    return total


def oracle_threshold(p, y, tau):
    tp = fp = fn = tn = 0
    for a, b in zip(p, y):
        pred = a >= tau
        tp += pred and b == 1
        fp += pred and b == 0
        fn += (not pred) and b == 1
        tn += (not pred) and b == 0
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return (tp + tn) / len(p), precision, recall, f1


def random_instance(rng):
    n = int(rng.integers(2, 65))
    p = rng.random(n)
    # inject ties by snapping a share of scores onto a coarse grid
    snap = rng.random(n) < rng.random()
    p[snap] = np.round(p[snap] * 4) / 4
    y = (rng.random(n) < rng.uniform(0.1, 0.9)).astype(int)
    y[0], y[1] = 1, 0
    return p.tolist(), y.tolist()


# ------------------------------------------------------------------ graph


def brute_force_edges(table, rules):
    out = set()
    for i, j in itertools.combinations(range(table.n_rows), 2):
        for rule in rules:
            a = [table.cells[c][i] for c in rule.key_columns]
            b = [table.cells[c][j] for c in rule.key_columns]
            if None not in a and a == b:
                out.add((i, j))
    return out


def random_table(rng):
    n = int(rng.integers(2, 201))
    cols = {}
    for c in KEYS:
        vocab = int(rng.integers(1, 30))
        vals = rng.integers(0, vocab, n).astype(str).astype(object)
        vals[rng.random(n) < rng.random() * 0.5] = None
        cols[c] = vals
    return key_table(cols)


def random_rules(rng):
    rules = []
    for r in range(int(rng.integers(1, 4))):
        k = int(rng.integers(1, 3))
        cols = list(rng.choice(KEYS, k, replace=False))
        rules.append(EdgeKeyRule(f"r{r}", cols, max_group_size=1000, clique_max=1000))
    return rules


class UnionFind:
    def __init__(self, n):
        self.parent = list(range(n))

    def find(self, a):
        while self.parent[a] != a:
            self.parent[a] = self.parent[self.parent[a]]
            a = self.parent[a]
        return a

    def union(self, a, b):
        self.parent[self.find(a)] = self.find(b)
