"""Minimal dense reverse-mode gradient engine.

Every tensor is a 2-D float64 matrix.  Operations executed while a :class:`Tape`
is active are recorded in execution order whenever at least one input requires
a gradient; :func:`backward` replays the records in exact reverse order.

Broadcasting is limited to adding a ``(1, cols)`` row vector to a matrix.
Any other shape mix raises :class:`ShapeError`.

Subgradient convention: ``relu'(0) = 0`` and ``leaky_relu'(0) = slope``.
"""

import numpy as np
import scipy.sparse as sp
from scipy.special import expit

from .errors import ConfigError, ShapeError

# edges processed per chunk in edge-wise reductions; bounds temporary memory
_EDGE_CHUNK = 65536

_active_tapes = []


class Tensor:
    """A row-major float64 matrix with an optional gradient slot."""

    __slots__ = ("values", "requires_grad", "grad")

    def __init__(self, values, requires_grad=False):
        values = np.asarray(values, dtype=np.float64)
        if values.ndim == 0:
            values = values.reshape(1, 1)
        elif values.ndim == 1:
            values = values.reshape(-1, 1)
        elif values.ndim != 2:
            raise ShapeError(f"tensors are 2-D, got shape {values.shape}")
        self.values = values
        self.requires_grad = bool(requires_grad)
        self.grad = None

    @property
    def shape(self):
        return self.values.shape

    def item(self):
        if self.values.size != 1:
            raise ShapeError(f"item() needs a scalar tensor, got shape {self.shape}")
        return float(self.values[0, 0])

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def tensor(values, requires_grad=False):
    return Tensor(values, requires_grad=requires_grad)


class Tape:
    """Ordered record of executed operations.

    Use as a context manager; operations inside the ``with`` block record onto
    the innermost active tape.
    """

    def __init__(self):
        self.records = []

    def __enter__(self):
        _active_tapes.append(self)
        return self

    def __exit__(self, *exc):
        _active_tapes.remove(self)
        return False

    def __len__(self):
        return len(self.records)


def _make_output(values, inputs, backward_fn):
    needs_grad = any(t.requires_grad for t in inputs)
    out = Tensor(values)
    if needs_grad and _active_tapes:
        out.requires_grad = True
        _active_tapes[-1].records.append((out, tuple(inputs), backward_fn))
    return out


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def backward(tape, loss):
    """Populate ``.grad`` of every grad-requiring leaf reachable from ``loss``.

    Leaf gradients accumulate with ``+=`` across calls, like a fan-out sum.
    """
    if loss.shape != (1, 1):
        raise ShapeError(f"backward needs a scalar (1, 1) loss, got {loss.shape}")
    produced = {id(rec[0]) for rec in tape.records}
    if id(loss) not in produced:
        raise ValueError("loss was not produced by an operation on this tape")

    grads = {id(loss): np.ones((1, 1))}
    leaves = {}
    for out, inputs, fn in reversed(tape.records):
        g = grads.pop(id(out), None)
        if g is None:
            continue
        for inp, gi in zip(inputs, fn(g)):
            if gi is None or not inp.requires_grad:
                continue
            key = id(inp)
            if key in grads:
                grads[key] = grads[key] + gi
            else:
                grads[key] = gi
            if key not in produced:
                leaves[key] = inp
    for key, leaf in leaves.items():
        g = grads[key]
        leaf.grad = g.copy() if leaf.grad is None else leaf.grad + g


# ---------------------------------------------------------------- core ops


def matmul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shapes {a.shape} and {b.shape} do not align")
    av, bv = a.values, b.values

    def bw(g):
        return (g @ bv.T if a.requires_grad else None,
                av.T @ g if b.requires_grad else None)

    return _make_output(av @ bv, (a, b), bw)


def add(a, b):
    """Elementwise sum; ``b`` may also be a ``(1, cols)`` row vector (bias)."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape == b.shape:
        return _make_output(a.values + b.values, (a, b), lambda g: (g, g))
    if b.shape == (1, a.shape[1]):
        return _make_output(a.values + b.values, (a, b),
                            lambda g: (g, g.sum(axis=0, keepdims=True)))
    raise ShapeError(f"add shapes {a.shape} and {b.shape} are incompatible")


def scale(a, c):
    a = _as_tensor(a)
    c = float(c)
    return _make_output(a.values * c, (a,), lambda g: (g * c,))


def relu(x):
    x = _as_tensor(x)
    pos = x.values > 0
    return _make_output(np.where(pos, x.values, 0.0), (x,),
                        lambda g: (np.where(pos, g, 0.0),))


def leaky_relu(x, slope=0.2):
    x = _as_tensor(x)
    pos = x.values > 0
    return _make_output(np.where(pos, x.values, slope * x.values), (x,),
                        lambda g: (np.where(pos, g, slope * g),))


def sigmoid(x):
    x = _as_tensor(x)
    s = expit(x.values)
    return _make_output(s, (x,), lambda g: (g * s * (1.0 - s),))


def concat_cols(parts):
    parts = [_as_tensor(p) for p in parts]
    rows = {p.shape[0] for p in parts}
    if len(rows) != 1:
        raise ShapeError(f"concat_cols row counts differ: {[p.shape for p in parts]}")
    bounds = np.cumsum([0] + [p.shape[1] for p in parts])

    def bw(g):
        return tuple(g[:, lo:hi] for lo, hi in zip(bounds[:-1], bounds[1:]))

    return _make_output(np.concatenate([p.values for p in parts], axis=1), parts, bw)


def slice_cols(x, start, stop):
    x = _as_tensor(x)
    if not 0 <= start <= stop <= x.shape[1]:
        raise ShapeError(f"column slice [{start}:{stop}] out of range for {x.shape}")

    def bw(g):
        full = np.zeros(x.shape)
        full[:, start:stop] = g
        return (full,)

    return _make_output(x.values[:, start:stop].copy(), (x,), bw)


def sum_all(x):
    x = _as_tensor(x)
    shape = x.shape
    return _make_output(np.array([[x.values.sum()]]), (x,),
                        lambda g: (np.full(shape, g[0, 0]),))


def _scatter_matrix(idx, n):
    m = len(idx)
    return sp.csr_matrix((np.ones(m), (idx, np.arange(m))), shape=(n, m))


def row_gather(x, idx):
    """Select rows ``x[idx]``; repeated indices are allowed."""
    x = _as_tensor(x)
    idx = np.asarray(idx, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= x.shape[0]):
        raise IndexError(f"row index out of range for {x.shape[0]} rows")
    n = x.shape[0]
    return _make_output(x.values[idx], (x,),
                        lambda g: (_scatter_matrix(idx, n) @ g,))


def row_scatter_add(x, idx, n):
    """Return an ``n``-row matrix whose row ``r`` sums the rows of ``x`` with ``idx == r``."""
    x = _as_tensor(x)
    idx = np.asarray(idx, dtype=np.int64)
    if len(idx) != x.shape[0]:
        raise ShapeError(f"row_scatter_add needs {x.shape[0]} indices, got {len(idx)}")
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise IndexError(f"scatter index out of range for {n} rows")
    out = _scatter_matrix(idx, n) @ x.values
    return _make_output(np.asarray(out), (x,), lambda g: (g[idx],))


# ------------------------------------------------------------ graph ops


def _segment_ids(row_ptr):
    row_ptr = np.asarray(row_ptr, dtype=np.int64)
    return np.repeat(np.arange(len(row_ptr) - 1), np.diff(row_ptr))


def segment_softmax(scores, row_ptr):
    """Softmax of ``scores`` (one per directed edge) within each CSR row segment."""
    scores = _as_tensor(scores)
    row_ptr = np.asarray(row_ptr, dtype=np.int64)
    n_edges = int(row_ptr[-1])
    if scores.shape != (n_edges, 1):
        raise ShapeError(f"segment_softmax needs ({n_edges}, 1) scores, got {scores.shape}")
    if n_edges == 0:
        return _make_output(np.zeros((0, 1)), (scores,), lambda g: (np.zeros((0, 1)),))
    seg = _segment_ids(row_ptr)
    starts = row_ptr[:-1][np.diff(row_ptr) > 0]
    s = scores.values[:, 0]
    seg_max = np.maximum.reduceat(s, starts)
    # position of each segment among the nonempty ones
    seg_rank = np.cumsum(np.diff(row_ptr) > 0) - 1
    where = seg_rank[seg]
    e = np.exp(s - seg_max[where])
    alpha = e / np.add.reduceat(e, starts)[where]

    def bw(g):
        ga = g[:, 0]
        dot = np.add.reduceat(alpha * ga, starts)[where]
        return ((alpha * (ga - dot))[:, None],)

    return _make_output(alpha[:, None], (scores,), bw)


def _adjacency(alpha, row_ptr, col_idx, n_cols):
    n = len(row_ptr) - 1
    return sp.csr_matrix((alpha, col_idx, row_ptr), shape=(n, n_cols))


def edge_aggregate(alpha, x, row_ptr, col_idx):
    """Weighted neighbour sum: ``out[i] = sum_e alpha[e] * x[col_idx[e]]`` over row ``i``.

    ``alpha`` is an ``(E, 1)`` tensor (differentiable) or a plain array (constant).
    """
    alpha = _as_tensor(alpha)
    x = _as_tensor(x)
    row_ptr = np.asarray(row_ptr, dtype=np.int64)
    col_idx = np.asarray(col_idx, dtype=np.int64)
    n_edges = int(row_ptr[-1])
    if alpha.shape != (n_edges, 1) or len(col_idx) != n_edges:
        raise ShapeError(f"edge_aggregate needs ({n_edges}, 1) weights, got {alpha.shape}")
    a = alpha.values[:, 0]
    adj = _adjacency(a, row_ptr, col_idx, x.shape[0])
    xv = x.values

    def bw(g):
        gx = np.asarray(adj.T @ g) if x.requires_grad else None
        ga = None
        if alpha.requires_grad:
            rows = _segment_ids(row_ptr)
            ga = np.empty(n_edges)
            for lo in range(0, n_edges, _EDGE_CHUNK):
                hi = min(lo + _EDGE_CHUNK, n_edges)
                ga[lo:hi] = np.einsum("ij,ij->i", g[rows[lo:hi]], xv[col_idx[lo:hi]])
            ga = ga[:, None]
        return ga, gx

    return _make_output(np.asarray(adj @ xv), (alpha, x), bw)


def edge_smoothness(h, row_ptr, col_idx, alpha):
    """``sum_e alpha[e] * ||h[row(e)] - h[col(e)]||^2`` with ``alpha`` held constant."""
    h = _as_tensor(h)
    row_ptr = np.asarray(row_ptr, dtype=np.int64)
    col_idx = np.asarray(col_idx, dtype=np.int64)
    alpha = np.asarray(alpha, dtype=np.float64).reshape(-1)
    n_edges = int(row_ptr[-1])
    if len(alpha) != n_edges:
        raise ShapeError(f"edge_smoothness needs {n_edges} weights, got {len(alpha)}")
    rows = _segment_ids(row_ptr)
    hv = h.values
    total = 0.0
    for lo in range(0, n_edges, _EDGE_CHUNK):
        hi = min(lo + _EDGE_CHUNK, n_edges)
        diff = hv[rows[lo:hi]] - hv[col_idx[lo:hi]]
        total += float(alpha[lo:hi] @ np.einsum("ij,ij->i", diff, diff))

    def bw(g):
        n = hv.shape[0]
        adj = _adjacency(alpha, row_ptr, col_idx, n)
        row_sum = np.asarray(adj.sum(axis=1)).reshape(-1, 1)
        col_sum = np.asarray(adj.sum(axis=0)).reshape(-1, 1)
        gh = 2.0 * ((row_sum + col_sum) * hv - adj @ hv - adj.T @ hv)
        return (g[0, 0] * np.asarray(gh),)

    return _make_output(np.array([[total]]), (h,), bw)


def weighted_bce_with_logits(logits, y, pos_weight, mask=None):
    """Summed class-weighted binary cross-entropy, evaluated from logits.

    ``-sum_i [pos_weight * y_i * log p_i + (1 - y_i) * log(1 - p_i)]`` with
    ``p = sigmoid(logits)``, using ``log p = -softplus(-z)``.
    """
    logits = _as_tensor(logits)
    if logits.shape[1] != 1:
        raise ShapeError(f"logits must be a column, got {logits.shape}")
    z = logits.values[:, 0]
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if len(y) != len(z):
        raise ShapeError(f"{len(z)} logits but {len(y)} labels")
    m = np.ones(len(z)) if mask is None else np.asarray(mask, dtype=np.float64).reshape(-1)
    if len(m) != len(z):
        raise ShapeError(f"{len(z)} logits but mask of length {len(m)}")
    beta = float(pos_weight)
    per_node = beta * y * np.logaddexp(0.0, -z) + (1.0 - y) * np.logaddexp(0.0, z)
    value = float(np.sum(m * per_node))

    def bw(g):
        dz = beta * y * -expit(-z) + (1.0 - y) * expit(z)
        return ((g[0, 0] * m * dz)[:, None],)

    return _make_output(np.array([[value]]), (logits,), bw)


# --------------------------------------------------------------- dropout


def dropout(x, rate, training, rng):
    """Inverted dropout: zero each entry with probability ``rate`` and scale survivors."""
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must lie in [0, 1), got {rate}")
    x = _as_tensor(x)
    if not training or rate == 0.0:
        return x
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return _make_output(x.values * keep, (x,), lambda g: (g * keep,))
