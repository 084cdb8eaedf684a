"""Objectives, AdamW, cosine schedule, stratified batching and the training loop."""

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import gradeng as ge
from . import graph as graphmod
from . import metrics
from .errors import ConfigError, NonFiniteGradient, UndefinedMetric
from .model import encode, init_params, score

log = logging.getLogger(__name__)

MODES = ("full_batch", "sampled")
POS_WEIGHT_CAP = 50.0
MIN_IMPROVEMENT = 1e-5


@dataclass
class TrainConfig:
    pos_weight: object = "auto"
    lambda_smooth: float = 1e-4
    lr0: float = 5e-4
    lr_min: float = 0.0
    weight_decay: float = 1e-4
    max_epochs: int = 200
    batch_size: int = 1024
    patience: int = 20
    seed: int = 42
    mode: str = "full_batch"
    fanout: tuple = (15, 10, 5)
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    threshold: float = 0.5
    strict_time_edges: bool = False

    def __post_init__(self):
        self.fanout = tuple(int(f) for f in self.fanout)
        if self.pos_weight != "auto":
            try:
                self.pos_weight = float(self.pos_weight)
            except (TypeError, ValueError):
                raise ConfigError("pos_weight must be 'auto' or a number") from None
            if self.pos_weight <= 0:
                raise ConfigError("pos_weight must be positive")
        if self.lambda_smooth < 0:
            raise ConfigError("lambda_smooth must be >= 0")
        if self.lr0 <= 0 or self.lr_min < 0 or self.lr_min > self.lr0:
            raise ConfigError("need lr0 > 0 and 0 <= lr_min <= lr0")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be >= 0")
        if self.max_epochs < 1 or self.patience < 0:
            raise ConfigError("max_epochs must be >= 1 and patience >= 0")
        if self.batch_size < 2:
            raise ConfigError("batch_size must be >= 2")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}")
        if not (0 <= self.adam_beta1 < 1 and 0 <= self.adam_beta2 < 1 and self.adam_eps > 0):
            raise ConfigError("invalid Adam coefficients")
        if any(f < 1 for f in self.fanout):
            raise ConfigError("fanout entries must be >= 1")


# ------------------------------------------------------------- objectives


def resolve_pos_weight(pos_weight, y, mask):
    """Positive-class weight; ``"auto"`` means negatives/positives on the masked rows, capped."""
    if pos_weight != "auto":
        return float(pos_weight)
    y = np.asarray(y)[np.asarray(mask, dtype=bool)]
    n_pos = int(np.sum(y == 1))
    if n_pos == 0:
        log.warning("no positive labels under pos_weight=auto; using 1.0")
        return 1.0
    return min((len(y) - n_pos) / n_pos, POS_WEIGHT_CAP)


def loss_cls(logits, y, pos_weight, mask):
    return ge.weighted_bce_with_logits(logits, y, pos_weight, mask)


def loss_smooth(h, graph, alpha):
    """Edge smoothness of embeddings; ``alpha`` is treated as a constant."""
    return ge.edge_smoothness(h, graph.row_ptr, graph.col_idx, alpha)


def total_loss(logits, h, graph, alpha, y, mask, pos_weight, lambda_smooth):
    """``(total, classification, smoothness)`` tensors.

    With ``lambda_smooth == 0`` the smoothness term is not added at all, so the
    total equals the classification term exactly.
    """
    cls = loss_cls(logits, y, pos_weight, mask)
    smooth = loss_smooth(h, graph, alpha)
    if lambda_smooth == 0:
        return cls, cls, smooth
    return ge.add(cls, ge.scale(smooth, lambda_smooth)), cls, smooth


def mean_edge_gap(h, graph):
    """Mean of ``||h_i - h_j||^2`` over directed CSR entries (0 for an edgeless graph)."""
    h = h.values if isinstance(h, ge.Tensor) else np.asarray(h)
    if graph.edge_count == 0:
        return 0.0
    ones = np.ones(graph.edge_count)
    return ge.edge_smoothness(h, graph.row_ptr, graph.col_idx, ones).item() / graph.edge_count


# -------------------------------------------------------------- optimiser


def cosine_lr(epoch, total_epochs, lr0, lr_min=0.0):
    return lr_min + 0.5 * (lr0 - lr_min) * (1.0 + math.cos(math.pi * epoch / total_epochs))


@dataclass
class OptimizerState:
    m: dict
    v: dict
    t: int = 0

    @classmethod
    def zeros(cls, params):
        return cls(m={k: np.zeros_like(p) for k, p in params.items()},
                   v={k: np.zeros_like(p) for k, p in params.items()})


def adamw_step(params, grads, state, lr, config):
    """One decoupled-weight-decay Adam update, in place on ``params`` and ``state``."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            bad = int(np.sum(~np.isfinite(g)))
            raise NonFiniteGradient(f"gradient of {name!r} has {bad} non-finite entries "
                                    f"at step {state.t + 1}")
    state.t += 1
    b1, b2, eps = config.adam_beta1, config.adam_beta2, config.adam_eps
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p)
        p *= 1.0 - lr * config.weight_decay
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return params


# -------------------------------------------------------------- batching


def make_batches(train_nodes, y, batch_size, rng):
    """Stratified batches covering every training node exactly once.

    Positives and negatives are shuffled separately and each batch receives a
    share of positives proportional to its size.
    """
    train_nodes = np.asarray(train_nodes, dtype=np.int64)
    labels = np.asarray(y)[train_nodes]
    pos = rng.permutation(train_nodes[labels == 1])
    neg = rng.permutation(train_nodes[labels != 1])
    n = len(train_nodes)
    if n == 0:
        return []
    n_batches = -(-n // batch_size)
    sizes = np.full(n_batches, batch_size)
    sizes[-1] = n - batch_size * (n_batches - 1)
    cum = np.cumsum(sizes)
    pos_cum = (cum * len(pos)) // n
    pos_counts = np.diff(np.r_[0, pos_cum])
    batches = []
    pi = ni = 0
    for size, n_pos in zip(sizes, pos_counts):
        n_neg = size - n_pos
        batch = np.concatenate([pos[pi:pi + n_pos], neg[ni:ni + n_neg]])
        pi += n_pos
        ni += n_neg
        batches.append(rng.permutation(batch))
    return batches


def sample_subgraph(graph, seeds, fanout, rng):
    """Layer-wise uniform neighbour sampling without replacement.

    Hop ``k`` keeps at most ``fanout[k]`` neighbours of every frontier node.
    Returns ``(nodes, subgraph, seed_positions)`` where ``nodes`` maps local
    to global ids and the subgraph holds the sampled edges in both directions.
    """
    seeds = np.asarray(seeds, dtype=np.int64)
    frontier = np.unique(seeds)
    seen = set(frontier.tolist())
    pairs = []
    for k in fanout:
        starts = graph.row_ptr[frontier]
        counts = graph.row_ptr[frontier + 1] - starts
        if counts.sum() == 0:
            break
        seg = np.repeat(np.arange(len(frontier)), counts)
        offsets = np.arange(counts.sum()) - np.repeat(np.cumsum(counts) - counts, counts)
        entries = np.repeat(starts, counts) + offsets
        order = np.lexsort((rng.random(len(entries)), seg))
        seg_sorted = seg[order]
        rank = np.arange(len(order)) - np.repeat(np.cumsum(counts) - counts, counts)
        chosen = order[rank < k]
        dst = frontier[seg_sorted[rank < k]]
        src = graph.col_idx[entries[chosen]]
        pairs.append(np.column_stack([dst, src]))
        new = [s for s in np.unique(src).tolist() if s not in seen]
        seen.update(new)
        frontier = np.asarray(sorted(new), dtype=np.int64)
        if len(frontier) == 0:
            break
    nodes = np.asarray(sorted(seen), dtype=np.int64)
    edges = np.concatenate(pairs) if pairs else np.zeros((0, 2), dtype=np.int64)
    sub = graphmod.to_csr(np.searchsorted(nodes, edges), len(nodes))
    seed_pos = np.searchsorted(nodes, seeds)
    return nodes, sub, seed_pos


# ------------------------------------------------------------------- loop


def round_to_float32(params):
    """Parameters as stored in a checkpoint (float32 precision, kept as float64)."""
    return {k: v.astype(np.float32).astype(np.float64) for k, v in params.items()}


@dataclass
class TrainResult:
    params: dict
    history: list
    best_epoch: int
    best_val_auprc: float
    best_val_auroc: float
    pos_weight: float
    stopped_epoch: int
    extra: dict = field(default_factory=dict)


def _val_scores(p_val, y_val):
    try:
        ap = metrics.auprc(p_val, y_val)
    except UndefinedMetric:
        ap = None
    try:
        roc = metrics.auroc(p_val, y_val)
    except UndefinedMetric:
        roc = None
    return ap, roc


def optimize(params, step_losses, predict, features, config, batch_plan):
    """Shared epoch loop: cosine-scheduled AdamW with early stopping on validation AUPRC.

    ``batch_plan(rng)`` returns the epoch's batches; ``step_losses(leaves,
    batch, rng)`` returns ``(total, cls, smooth)`` tensors for one step;
    ``predict(params)`` scores every node in inference mode.
    """
    rng = np.random.default_rng(config.seed)
    state = OptimizerState.zeros(params)
    val = features.mask("val")
    y_val = features.y[val]
    history = []
    best = None
    stale = 0
    for epoch in range(config.max_epochs):
        lr = cosine_lr(epoch, config.max_epochs, config.lr0, config.lr_min)
        totals, clss, smooths = [], [], []
        for batch in batch_plan(rng):
            leaves = {k: ge.Tensor(v, requires_grad=True) for k, v in params.items()}
            with ge.Tape() as tape:
                total, cls, smooth = step_losses(leaves, batch, rng)
            ge.backward(tape, total)
            grads = {k: t.grad for k, t in leaves.items() if t.grad is not None}
            adamw_step(params, grads, state, lr, config)
            totals.append(total.item())
            clss.append(cls.item())
            smooths.append(smooth.item())
        snapshot = round_to_float32(params)
        p_all = predict(snapshot)
        ap, roc = _val_scores(p_all[val], y_val)
        record = {
            "epoch": epoch + 1,
            "lr": lr,
            "loss_total": float(np.mean(totals)),
            "loss_cls": float(np.mean(clss)),
            "loss_smooth": float(np.mean(smooths)),
            "val_auroc": roc,
            "val_auprc": ap,
        }
        history.append(record)
        score_now = -math.inf if ap is None else ap
        if best is None or score_now > best["score"] + MIN_IMPROVEMENT:
            best = {"score": score_now, "epoch": epoch + 1, "params": snapshot,
                    "auprc": ap, "auroc": roc}
            stale = 0
        else:
            stale += 1
            if stale >= max(config.patience, 1):
                break
    return best, history


def train_loop(graph, features, model_config, train_config, init_seed=None):
    """Train the graph encoder and risk head; return the best-validation checkpoint state."""
    cfg = train_config
    if cfg.mode == "sampled" and len(cfg.fanout) != model_config.n_layers:
        raise ConfigError(f"fanout needs {model_config.n_layers} entries in sampled mode")
    seed = cfg.seed if init_seed is None else init_seed
    params = init_params(model_config, features.d, seed)
    train_mask = features.mask("train")
    beta = resolve_pos_weight(cfg.pos_weight, features.y, train_mask)
    train_graph = (graphmod.drop_later_messages(graph, features.t)
                   if cfg.strict_time_edges else graph)
    y = features.y

    def step_losses(leaves, batch, rng):
        if batch is None:
            h, alpha = encode(train_graph, features.x, leaves, model_config,
                              training=True, rng=rng, return_alpha=True)
            logits = score(h, leaves)[1]
            return total_loss(logits, h, train_graph, alpha, y, train_mask, beta,
                              cfg.lambda_smooth)
        nodes, sub, seed_pos = batch
        if cfg.strict_time_edges:
            sub = graphmod.drop_later_messages(sub, features.t[nodes])
        h, alpha = encode(sub, features.x[nodes], leaves, model_config,
                          training=True, rng=rng, return_alpha=True)
        logits = score(h, leaves)[1]
        mask = np.zeros(len(nodes), dtype=bool)
        mask[seed_pos] = True
        return total_loss(logits, h, sub, alpha, y[nodes], mask, beta, cfg.lambda_smooth)

    def batch_plan(rng):
        if cfg.mode == "full_batch":
            return [None]
        train_nodes = np.flatnonzero(train_mask)
        return (sample_subgraph(graph, b, cfg.fanout, rng)
                for b in make_batches(train_nodes, y, cfg.batch_size, rng))

    def predict(p):
        h = encode(graph, features.x, p, model_config, training=False)
        return score(h, p)[0]

    best, history = optimize(params, step_losses, predict, features, cfg, batch_plan)
    return TrainResult(params=best["params"], history=history, best_epoch=best["epoch"],
                       best_val_auprc=best["auprc"], best_val_auroc=best["auroc"],
                       pos_weight=beta, stopped_epoch=len(history))
