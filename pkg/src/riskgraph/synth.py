"""Synthetic transaction data with planted fraud rings, and a no-graph baseline.

Ring members share a ring-specific card and device, so they form dense
subgraphs; their numeric features are drawn exactly like any other fraud, so
ring membership carries information only through the graph.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from . import gradeng as ge
from .errors import ConfigError
from .ingest import ColumnSpec, RawTable
from .model import glorot_bound
from .train import optimize, make_batches, resolve_pos_weight, TrainResult

START_TIME = 86400.0
SPAN_SECONDS = 180 * 86400.0
FIRST_ID = 2987000
PRODUCTS = ("W", "C", "R", "H", "S")
PRODUCT_P = (0.6, 0.15, 0.1, 0.1, 0.05)
EMAIL_DOMAINS = ("gmail.com", "yahoo.com", "hotmail.com", "anonymous.com", "aol.com",
                 "comcast.net", "icloud.com", "outlook.com", "msn.com", "att.net")
OS_NAMES = ("Windows 10", "Windows 7", "iOS 11", "Android 8", "Mac OS X 10_13")
BROWSERS = ("chrome 63.0", "mobile safari 11.0", "ie 11.0", "edge 16.0", "firefox 57.0")


@dataclass
class SynthConfig:
    n_transactions: int = 20000
    fraud_rate: float = 0.035
    n_rings: int = 40
    ring_size_min: int = 4
    ring_size_max: int = 12
    n_numeric_features: int = 20
    class_mean_shift: float = 0.3
    card_vocab: int = 2500
    addr_vocab: int = 200
    device_vocab: int = 3000
    identity_rate: float = 0.8
    d_missing_rate: float = 0.15
    seed: int = 42

    def __post_init__(self):
        if not 0.0 < self.fraud_rate < 0.5:
            raise ConfigError("fraud_rate must lie in (0, 0.5)")
        if self.n_transactions < 10:
            raise ConfigError("n_transactions must be >= 10")
        if not 2 <= self.ring_size_min <= self.ring_size_max:
            raise ConfigError("need 2 <= ring_size_min <= ring_size_max")
        if self.n_rings < 0 or self.n_numeric_features < 1:
            raise ConfigError("n_rings must be >= 0 and n_numeric_features >= 1")
        if min(self.card_vocab, self.addr_vocab, self.device_vocab) < 1:
            raise ConfigError("key vocabularies must be non-empty")
        if not 0.0 <= self.identity_rate <= 1.0 or not 0.0 <= self.d_missing_rate < 1.0:
            raise ConfigError("identity_rate and d_missing_rate must be fractions")


def numeric_feature_names(k):
    names = [f"C{i}" for i in range(1, min(k, 14) + 1)]
    names += [f"D{i}" for i in range(1, min(k - len(names), 6) + 1)]
    names += [f"V{i}" for i in range(1, k - len(names) + 1)]
    return names


def synth_schema(config):
    schema = [ColumnSpec("TransactionID", "identifier"), ColumnSpec("isFraud", "label"),
              ColumnSpec("TransactionDT", "time"), ColumnSpec("TransactionAmt", "numeric"),
              ColumnSpec("ProductCD", "categorical")]
    schema += [ColumnSpec(f"card{i}", "categorical") for i in range(1, 7)]
    schema += [ColumnSpec(c, "categorical")
               for c in ("addr1", "addr2", "P_emaildomain", "R_emaildomain")]
    schema += [ColumnSpec(c, "numeric") for c in numeric_feature_names(config.n_numeric_features)]
    schema += [ColumnSpec(c, "categorical", "identity")
               for c in ("DeviceType", "DeviceInfo", "id_30", "id_31")]
    return schema


def _card_attributes(rng, n_cards):
    # card2..card6 are fixed attributes of the card number
    return {
        "card2": rng.integers(100, 600, n_cards).astype(str),
        "card3": rng.choice(["150", "185", "144"], n_cards, p=[0.9, 0.06, 0.04]),
        "card4": rng.choice(["visa", "mastercard", "american express", "discover"],
                            n_cards, p=[0.65, 0.3, 0.03, 0.02]),
        "card5": rng.choice(["226", "224", "166", "102", "117"], n_cards),
        "card6": rng.choice(["debit", "credit"], n_cards, p=[0.75, 0.25]),
    }


def _categorical(values, missing):
    out = np.asarray(values).astype(object)
    out[missing] = None
    return out


def generate(config=None, return_rings=False):
    """Build a RawTable of synthetic transactions joined with identity columns.

    With ``return_rings`` also return each row's ring index (-1 outside rings).
    """
    config = config or SynthConfig()
    rng = np.random.default_rng(config.seed)
    n = config.n_transactions
    n_fraud = int(round(config.fraud_rate * n))
    ring_sizes = rng.integers(config.ring_size_min, config.ring_size_max + 1, config.n_rings)
    if ring_sizes.sum() > n_fraud:
        raise ConfigError(f"rings need {int(ring_sizes.sum())} fraudulent rows but the fraud "
                          f"budget is {n_fraud}")

    # ring members first, then singleton frauds, then legitimate rows
    n_ring = int(ring_sizes.sum())
    ring_of = np.full(n, -1)
    ring_of[:n_ring] = np.repeat(np.arange(config.n_rings), ring_sizes)
    label = np.zeros(n, dtype=np.int64)
    label[:n_fraud] = 1

    times = START_TIME + rng.uniform(0.0, SPAN_SECONDS, n)
    start = 0
    for r, size in enumerate(ring_sizes):
        # evenly spaced bursts keep every ring connected under time-kNN linking
        gap = float(rng.integers(60, 1800))
        t0 = START_TIME + rng.uniform(0.0, SPAN_SECONDS - gap * size)
        times[start:start + size] = t0 + gap * np.arange(size)
        start += size

    shift = config.class_mean_shift * label[:, None]
    numeric = rng.normal(0.0, 1.0, (n, config.n_numeric_features)) + shift
    amount = np.round(np.exp(rng.normal(4.0, 1.0, n) + config.class_mean_shift * label), 2)

    cards = _card_attributes(rng, config.card_vocab + config.n_rings)
    card_idx = rng.integers(0, config.card_vocab, n)
    card_idx[:n_ring] = config.card_vocab + ring_of[:n_ring]
    device = np.array([f"Device-{k}" for k in rng.integers(0, config.device_vocab, n)],
                      dtype=object)
    device[:n_ring] = [f"Shared-{r}" for r in ring_of[:n_ring]]
    has_identity = rng.random(n) < config.identity_rate
    has_identity[:n_ring] = True

    cells = {
        "TransactionAmt": amount,
        "ProductCD": _categorical(rng.choice(PRODUCTS, n, p=PRODUCT_P), np.zeros(n, bool)),
        "card1": _categorical((1000 + card_idx).astype(str), np.zeros(n, bool)),
    }
    for col, values in cards.items():
        cells[col] = _categorical(values[card_idx], np.zeros(n, bool))
    addr_missing = rng.random(n) < 0.12
    cells["addr1"] = _categorical(rng.integers(100, 100 + config.addr_vocab, n).astype(str),
                                  addr_missing)
    cells["addr2"] = _categorical(rng.choice(["87", "60", "96"], n, p=[0.9, 0.06, 0.04]),
                                  addr_missing)
    cells["P_emaildomain"] = _categorical(rng.choice(EMAIL_DOMAINS, n), rng.random(n) < 0.15)
    cells["R_emaildomain"] = _categorical(rng.choice(EMAIL_DOMAINS, n), rng.random(n) < 0.75)
    for j, name in enumerate(numeric_feature_names(config.n_numeric_features)):
        col = numeric[:, j].copy()
        if name.startswith("D"):
            col[rng.random(n) < config.d_missing_rate] = np.nan
        cells[name] = col
    cells["DeviceType"] = _categorical(rng.choice(["desktop", "mobile"], n, p=[0.6, 0.4]),
                                       ~has_identity)
    cells["DeviceInfo"] = _categorical(device, ~has_identity)
    cells["id_30"] = _categorical(rng.choice(OS_NAMES, n), ~has_identity)
    cells["id_31"] = _categorical(rng.choice(BROWSERS, n), ~has_identity)

    order = np.lexsort((np.arange(n), times))
    cells = {k: v[order] for k, v in cells.items()}
    cells["TransactionDT"] = np.floor(times[order])
    cells["isFraud"] = label[order]
    cells["TransactionID"] = FIRST_ID + np.arange(n, dtype=np.int64)
    table = RawTable(tuple(synth_schema(config)), n, cells)
    if return_rings:
        return table, ring_of[order]
    return table


def logistic_baseline(features, train_config):
    """Linear layer + sigmoid on node features alone, trained like the graph model.

    Returns ``(probabilities for every node, TrainResult)``.
    """
    cfg = train_config
    rng = np.random.default_rng(cfg.seed)
    bound = glorot_bound(features.d, 1)
    params = {"risk.w": rng.uniform(-bound, bound, (features.d, 1)), "risk.b": np.zeros((1, 1))}
    train_mask = features.mask("train")
    beta = resolve_pos_weight(cfg.pos_weight, features.y, train_mask)
    x = features.x

    def logits_of(p, rows=None):
        xs = x if rows is None else x[rows]
        return ge.add(ge.matmul(xs, p["risk.w"]), p["risk.b"])

    def step_losses(leaves, batch, rng):
        if batch is None:
            cls = ge.weighted_bce_with_logits(logits_of(leaves), features.y, beta, train_mask)
        else:
            cls = ge.weighted_bce_with_logits(logits_of(leaves, batch), features.y[batch], beta)
        return cls, cls, ge.Tensor(0.0)

    def batch_plan(rng):
        if cfg.mode == "full_batch":
            return [None]
        return make_batches(np.flatnonzero(train_mask), features.y, cfg.batch_size, rng)

    def predict(p):
        return expit(logits_of({k: ge.Tensor(v) for k, v in p.items()}).values[:, 0])

    best, history = optimize(params, step_losses, predict, features, cfg, batch_plan)
    result = TrainResult(params=best["params"], history=history, best_epoch=best["epoch"],
                         best_val_auprc=best["auprc"], best_val_auroc=best["auroc"],
                         pos_weight=beta, stopped_epoch=len(history))
    return predict(result.params), result
