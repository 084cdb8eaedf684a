"""Finite-difference gradient checking helpers and random gradeng op instances."""

import numpy as np

from riskgraph import gradeng as ge
from riskgraph.graph import to_csr


def random_graph(n, p, rng):
    iu, ju = np.triu_indices(n, k=1)
    keep = rng.random(len(iu)) < p
    return to_csr(np.column_stack([iu[keep], ju[keep]]), n)


def central_differences(f, arrays, eps=1e-5):
    """Central-difference gradient of scalar ``f()`` w.r.t. every entry of each array (in place)."""
    grads = {}
    for name, a in arrays.items():
        g = np.zeros_like(a)
        it = np.nditer(a, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            old = a[idx]
            a[idx] = old + eps
            up = f()
            a[idx] = old - eps
            down = f()
            a[idx] = old
            g[idx] = (up - down) / (2 * eps)
        grads[name] = g
    return grads


def assert_grads_close(analytic, numeric, rtol=1e-4, atol=1e-7):
    for name in numeric:
        a, n = analytic[name], numeric[name]
        err = np.abs(a - n)
        bound = np.maximum(rtol * np.maximum(np.abs(a), np.abs(n)), atol)
        worst = np.max(err - bound) if err.size else -1
        assert worst <= 0, f"{name}: max abs err {err.max():.3e}"


def analytic_grads(loss_fn, arrays):
    leaves = {k: ge.Tensor(v, requires_grad=True) for k, v in arrays.items()}
    with ge.Tape() as tape:
        loss = loss_fn(leaves)
    ge.backward(tape, loss)
    return {k: (t.grad if t.grad is not None else np.zeros_like(arrays[k]))
            for k, t in leaves.items()}


def op_cases(rng):
    """One random instance of every op, as ``name -> (arrays, loss_fn)``."""
    g = random_graph(12, 0.3, rng)
    while g.edge_count == 0:
        g = random_graph(12, 0.3, rng)
    e = g.edge_count
    rows, cols = g.rows, g.col_idx
    y = (rng.random(12) < 0.4).astype(float)
    mask = rng.random(12) < 0.8
    const_alpha = rng.random(e)
    w_out = rng.normal(size=(12, 4))
    return {
        "matmul": ({"a": rng.normal(size=(5, 3)), "b": rng.normal(size=(3, 4))},
                   lambda t: ge.sum_all(ge.sigmoid(ge.matmul(t["a"], t["b"])))),
        "add_bias": ({"a": rng.normal(size=(5, 3)), "b": rng.normal(size=(1, 3))},
                     lambda t: ge.sum_all(ge.sigmoid(ge.add(t["a"], t["b"])))),
        "scale": ({"a": rng.normal(size=(4, 2))},
                  lambda t: ge.sum_all(ge.sigmoid(ge.scale(t["a"], -1.7)))),
        "relu": ({"a": rng.normal(size=(6, 3))},
                 lambda t: ge.sum_all(ge.sigmoid(ge.relu(t["a"])))),
        "leaky_relu": ({"a": rng.normal(size=(6, 3))},
                       lambda t: ge.sum_all(ge.sigmoid(ge.leaky_relu(t["a"], 0.2)))),
        "concat_slice": ({"a": rng.normal(size=(4, 2)), "b": rng.normal(size=(4, 3))},
                         lambda t: ge.sum_all(ge.sigmoid(ge.slice_cols(
                             ge.concat_cols([t["a"], t["b"]]), 1, 4)))),
        "gather_scatter": ({"a": rng.normal(size=(12, 3))},
                           lambda t: ge.sum_all(ge.sigmoid(ge.row_scatter_add(
                               ge.row_gather(t["a"], cols), rows, 12)))),
        "segment_softmax": ({"s": rng.normal(size=(e, 1))},
                            lambda t: ge.sum_all(ge.edge_aggregate(
                                ge.segment_softmax(t["s"], g.row_ptr), w_out,
                                g.row_ptr, g.col_idx))),
        "edge_aggregate": ({"a": rng.random((e, 1)), "x": rng.normal(size=(12, 4))},
                           lambda t: ge.sum_all(ge.sigmoid(ge.edge_aggregate(
                               t["a"], t["x"], g.row_ptr, g.col_idx)))),
        "edge_smoothness": ({"h": rng.normal(size=(12, 3))},
                            lambda t: ge.edge_smoothness(t["h"], g.row_ptr, g.col_idx,
                                                         const_alpha)),
        "weighted_bce": ({"z": rng.normal(scale=3.0, size=(12, 1))},
                         lambda t: ge.weighted_bce_with_logits(t["z"], y, 7.5, mask)),
    }


OPS = ["matmul", "add_bias", "scale", "relu", "leaky_relu", "concat_slice", "gather_scatter",
       "segment_softmax", "edge_aggregate", "edge_smoothness", "weighted_bce"]
