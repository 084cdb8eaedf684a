"""Attention message-passing encoder and logistic risk head.

Layer update, per head ``k`` and destination node ``i``::

    z_i = W_k h_i + sum_{j in N(i)} alpha_ij U_k h_j

Heads are concatenated, a bias is added, then ReLU and (in training) dropout.
``alpha`` is either a learned softmax over ``N(i)`` of
``leaky_relu(a_dst . W_k h_i + a_src . U_k h_j)`` or the fixed symmetric
normalisation ``1 / sqrt(deg(i) deg(j))``.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from . import gradeng as ge
from .errors import ConfigError, ShapeError

AGGREGATIONS = ("attention", "degree_norm")
_P_MIN = np.nextafter(0.0, 1.0)
_P_MAX = np.nextafter(1.0, 0.0)


@dataclass
class ModelConfig:
    n_layers: int = 3
    hidden_dim: int = 128
    n_heads: int = 4
    dropout_rate: float = 0.30
    aggregation: str = "attention"
    leaky_slope: float = 0.2

    def __post_init__(self):
        if self.n_layers < 1:
            raise ConfigError("n_layers must be >= 1")
        if self.n_heads < 1 or self.hidden_dim % self.n_heads:
            raise ConfigError(f"hidden_dim {self.hidden_dim} is not divisible by "
                              f"n_heads {self.n_heads}")
        if self.aggregation not in AGGREGATIONS:
            raise ConfigError(f"aggregation must be one of {AGGREGATIONS}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError("dropout_rate must lie in [0, 1)")

    @property
    def head_dim(self):
        return self.hidden_dim // self.n_heads


def glorot_bound(fan_in, fan_out):
    return np.sqrt(6.0 / (fan_in + fan_out))


def param_shapes(config, input_dim):
    """Ordered ``name -> shape`` map of every learnable array."""
    shapes = {}
    hd = config.head_dim
    d_in = input_dim
    for layer in range(config.n_layers):
        for k in range(config.n_heads):
            p = f"layer{layer}.head{k}"
            shapes[f"{p}.W"] = (d_in, hd)
            shapes[f"{p}.U"] = (d_in, hd)
            if config.aggregation == "attention":
                shapes[f"{p}.a_dst"] = (hd, 1)
                shapes[f"{p}.a_src"] = (hd, 1)
        shapes[f"layer{layer}.bias"] = (1, config.hidden_dim)
        d_in = config.hidden_dim
    shapes["risk.w"] = (config.hidden_dim, 1)
    shapes["risk.b"] = (1, 1)
    return shapes


def glorot_fans(name, shape):
    # the two attention halves form one (2 * head_dim, 1) vector
    if name.endswith((".a_dst", ".a_src")):
        return 2 * shape[0], 1
    return shape


def init_params(config, input_dim, seed):
    """Glorot-uniform weights, zero biases; deterministic in ``seed``."""
    if input_dim < 1:
        raise ConfigError("input_dim must be >= 1")
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in param_shapes(config, input_dim).items():
        if name.endswith(("bias", "risk.b")):
            params[name] = np.zeros(shape)
        else:
            bound = glorot_bound(*glorot_fans(name, shape))
            params[name] = rng.uniform(-bound, bound, size=shape)
    return params


def degree_norm_alpha(graph):
    deg = np.maximum(graph.degrees(), 1).astype(np.float64)
    return 1.0 / np.sqrt(deg[graph.rows] * deg[graph.col_idx])


def _head_alpha(Wh, Uh, params, prefix, graph, config):
    s_dst = ge.matmul(Wh, params[f"{prefix}.a_dst"])
    s_src = ge.matmul(Uh, params[f"{prefix}.a_src"])
    e = ge.add(ge.row_gather(s_dst, graph.rows), ge.row_gather(s_src, graph.col_idx))
    return ge.segment_softmax(ge.leaky_relu(e, config.leaky_slope), graph.row_ptr)


def _as_tensors(params):
    return {k: v if isinstance(v, ge.Tensor) else ge.Tensor(v) for k, v in params.items()}


def _layer(h, layer, graph, params, config, fixed_alpha):
    heads, alphas = [], []
    for k in range(config.n_heads):
        prefix = f"layer{layer}.head{k}"
        Wh = ge.matmul(h, params[f"{prefix}.W"])
        Uh = ge.matmul(h, params[f"{prefix}.U"])
        if fixed_alpha is None:
            alpha = _head_alpha(Wh, Uh, params, prefix, graph, config)
        else:
            alpha = ge.Tensor(fixed_alpha[:, None])
        alphas.append(alpha.values[:, 0])
        heads.append(ge.add(Wh, ge.edge_aggregate(alpha, Uh, graph.row_ptr, graph.col_idx)))
    z = ge.add(ge.concat_cols(heads), params[f"layer{layer}.bias"])
    return ge.relu(z), alphas


def attention_coeffs(h, params, graph, config, layer=0):
    """Per-head edge coefficients of one layer for input embeddings ``h``."""
    params = _as_tensors(params)
    h = h if isinstance(h, ge.Tensor) else ge.Tensor(h)
    if config.aggregation == "degree_norm":
        return [degree_norm_alpha(graph)] * config.n_heads
    return _layer(h, layer, graph, params, config, None)[1]


def encode(graph, x, params, config, training=False, rng=None, return_alpha=False):
    """Run every message-passing layer; return the final embeddings tensor.

    With ``return_alpha`` also return the last layer's head-averaged edge
    coefficients as a plain array.
    """
    x = x if isinstance(x, ge.Tensor) else ge.Tensor(x)
    if x.shape[0] != graph.n_nodes:
        raise ShapeError(f"{x.shape[0]} feature rows for a {graph.n_nodes}-node graph")
    expected = params["layer0.head0.W"].shape[0]
    if x.shape[1] != expected:
        raise ShapeError(f"features have {x.shape[1]} columns, parameters expect {expected}")
    if training and config.dropout_rate > 0 and rng is None:
        raise ValueError("training with dropout needs an rng")
    params = _as_tensors(params)
    fixed = degree_norm_alpha(graph) if config.aggregation == "degree_norm" else None
    h = x
    alphas = None
    for layer in range(config.n_layers):
        h, alphas = _layer(h, layer, graph, params, config, fixed)
        h = ge.dropout(h, config.dropout_rate, training, rng)
    if return_alpha:
        return h, np.mean(alphas, axis=0)
    return h


def score(h, params):
    """Risk head: ``(probabilities, logits)`` with probabilities as an array."""
    h = h if isinstance(h, ge.Tensor) else ge.Tensor(h)
    w, b = params["risk.w"], params["risk.b"]
    w = w if isinstance(w, ge.Tensor) else ge.Tensor(w)
    if h.shape[1] != w.shape[0]:
        raise ShapeError(f"embeddings have {h.shape[1]} columns, head expects {w.shape[0]}")
    logits = ge.add(ge.matmul(h, w), b if isinstance(b, ge.Tensor) else ge.Tensor(b))
    # keep probabilities strictly inside (0, 1) where float64 sigmoid saturates
    p = np.clip(expit(logits.values[:, 0]), _P_MIN, _P_MAX)
    return p, logits


def predict(graph, x, params, config):
    """Inference-mode fraud probabilities for every node."""
    h = encode(graph, x, params, config, training=False)
    return score(h, params)[0]
