"""Shared-attribute transaction graph in CSR form."""

import struct
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .errors import ConfigError, SchemaViolation

CSR_MAGIC = b"RGCSR1"


@dataclass
class EdgeKeyRule:
    """Link transactions whose values agree on every column in ``key_columns``.

    Groups of size at most ``clique_max`` become cliques; larger groups up to
    ``max_group_size`` link each member to its ``time_knn`` nearest fellow
    members in time; larger groups contribute nothing.
    """

    name: str
    key_columns: list
    max_group_size: int = 100
    clique_max: int = 10
    time_knn: int = 3

    def __post_init__(self):
        self.key_columns = list(self.key_columns)
        if not self.key_columns:
            raise ConfigError(f"rule {self.name!r} has no key columns")
        if self.clique_max > self.max_group_size:
            raise ConfigError(f"rule {self.name!r}: clique_max exceeds max_group_size")
        if self.time_knn < 0 or self.clique_max < 0:
            raise ConfigError(f"rule {self.name!r}: counts must be non-negative")


def default_rules():
    return [
        EdgeKeyRule("card", [f"card{i}" for i in range(1, 7)]),
        EdgeKeyRule("address", ["addr1", "addr2"]),
        EdgeKeyRule("device", ["DeviceInfo"]),
        EdgeKeyRule("email", ["P_emaildomain"]),
    ]


@dataclass
class TransactionGraph:
    n_nodes: int
    row_ptr: np.ndarray
    col_idx: np.ndarray
    symmetric: bool = field(default=True)

    @property
    def edge_count(self):
        return int(self.row_ptr[-1])

    @property
    def rows(self):
        """Destination node of every directed entry."""
        return np.repeat(np.arange(self.n_nodes), np.diff(self.row_ptr))

    def degrees(self):
        return np.diff(self.row_ptr)

    def neighbors(self, i):
        return self.col_idx[self.row_ptr[i]:self.row_ptr[i + 1]]

    def undirected_edges(self):
        rows = self.rows
        keep = rows < self.col_idx
        return np.column_stack([rows[keep], self.col_idx[keep]])

    def check(self):
        """Raise ``AssertionError`` if any CSR invariant fails."""
        rp, ci = self.row_ptr, self.col_idx
        assert len(rp) == self.n_nodes + 1 and rp[0] == 0
        assert np.all(np.diff(rp) >= 0) and rp[-1] == len(ci)
        rows = self.rows
        assert not np.any(rows == ci), "self-loop"
        if len(ci):
            assert ci.min() >= 0 and ci.max() < self.n_nodes
            same_row = rows[1:] == rows[:-1]
            assert np.all(ci[1:][same_row] > ci[:-1][same_row]), "row not strictly ascending"
        if self.symmetric:
            fwd = rows * self.n_nodes + ci
            bwd = np.sort(ci * self.n_nodes + rows)
            assert np.array_equal(fwd, bwd), "not symmetric"
        return self


def _check_columns(table, rules):
    names = {c.name for c in table.columns}
    for rule in rules:
        for col in rule.key_columns:
            if col not in names:
                raise ConfigError(f"rule {rule.name!r} references unknown column {col!r}")


def _group_rows(table, rule):
    cols = [table.cells[c] for c in rule.key_columns]
    missing = np.zeros(table.n_rows, dtype=bool)
    for c in rule.key_columns:
        missing |= table.missing_mask(c)
    groups = {}
    for r in np.flatnonzero(~missing):
        key = tuple(col[r] for col in cols)
        groups.setdefault(key, []).append(int(r))
    return groups.values()


def _knn_pairs(members, times, ids, k):
    members = np.asarray(members)
    t = times[members]
    member_ids = ids[members]
    pairs = []
    for pos, i in enumerate(members):
        gap = np.abs(t - t[pos])
        # nearest in time, ties broken by identifier
        nearest = [j for j in np.lexsort((member_ids, gap)) if j != pos][:k]
        pairs.extend((int(i), int(members[j])) for j in nearest)
    return pairs


def build_edges(table, rules):
    """Undirected edge list ``(m, 2)`` from every rule, before canonicalisation."""
    _check_columns(table, rules)
    times = table.times if table.times is not None else np.zeros(table.n_rows)
    ids = np.asarray(table.ids)
    out = []
    for rule in rules:
        for members in _group_rows(table, rule):
            size = len(members)
            if size < 2 or size > rule.max_group_size:
                continue
            if size <= rule.clique_max:
                m = np.asarray(members)
                iu, ju = np.triu_indices(size, k=1)
                out.append(np.column_stack([m[iu], m[ju]]))
            elif rule.time_knn > 0:
                pairs = _knn_pairs(members, times, ids, rule.time_knn)
                out.append(np.asarray(pairs, dtype=np.int64).reshape(-1, 2))
    if not out:
        return np.zeros((0, 2), dtype=np.int64)
    return np.concatenate(out).astype(np.int64)


def dedup_canonicalize(edges):
    """Drop self-loops, store each pair once as ``(min, max)``, sort lexicographically."""
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    lo = np.minimum(edges[:, 0], edges[:, 1])
    hi = np.maximum(edges[:, 0], edges[:, 1])
    keep = lo != hi
    canon = np.column_stack([lo[keep], hi[keep]])
    if len(canon) == 0:
        return np.zeros((0, 2), dtype=np.int64)
    return np.unique(canon, axis=0)


def component_labels(edges, n_nodes):
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    adj = sp.csr_matrix((np.ones(len(edges)), (edges[:, 0], edges[:, 1])),
                        shape=(n_nodes, n_nodes))
    return connected_components(adj, directed=False)[1]


def prune_components(edges, n_nodes, min_component_size=1):
    """Remove edges inside components smaller than ``min_component_size``; nodes always stay."""
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if min_component_size <= 1 or len(edges) == 0:
        return edges
    labels = component_labels(edges, n_nodes)
    sizes = np.bincount(labels, minlength=labels.max() + 1)
    return edges[sizes[labels[edges[:, 0]]] >= min_component_size]


def to_csr(edges, n_nodes):
    """Materialise both directions of an undirected edge list as CSR."""
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if len(edges) and (edges.min() < 0 or edges.max() >= n_nodes):
        raise IndexError(f"edge endpoint outside [0, {n_nodes})")
    edges = dedup_canonicalize(edges)
    src = np.concatenate([edges[:, 0], edges[:, 1]])
    dst = np.concatenate([edges[:, 1], edges[:, 0]])
    order = np.lexsort((dst, src))
    col_idx = dst[order]
    row_ptr = np.zeros(n_nodes + 1, dtype=np.int64)
    np.cumsum(np.bincount(src, minlength=n_nodes), out=row_ptr[1:])
    return TransactionGraph(n_nodes, row_ptr, col_idx).check()


def build_graph(table, rules, min_component_size=1):
    edges = dedup_canonicalize(build_edges(table, rules))
    edges = prune_components(edges, table.n_rows, min_component_size)
    return to_csr(edges, table.n_rows)


def drop_later_messages(graph, t):
    """Directed view keeping only messages from nodes no later than the receiver."""
    t = np.asarray(t, dtype=np.float64)
    keep = t[graph.col_idx] <= t[graph.rows]
    row_ptr = np.zeros(graph.n_nodes + 1, dtype=np.int64)
    np.cumsum(np.bincount(graph.rows[keep], minlength=graph.n_nodes), out=row_ptr[1:])
    return TransactionGraph(graph.n_nodes, row_ptr, graph.col_idx[keep], symmetric=False)


def save_csr(graph, path):
    with open(path, "wb") as f:
        f.write(CSR_MAGIC)
        f.write(struct.pack("<QQ", graph.n_nodes, graph.edge_count))
        f.write(graph.row_ptr.astype("<i8").tobytes())
        f.write(graph.col_idx.astype("<i8").tobytes())


def load_csr(path):
    with open(path, "rb") as f:
        data = f.read()
    if not data.startswith(CSR_MAGIC):
        raise SchemaViolation(f"{path} is not an RGCSR1 graph dump")
    off = len(CSR_MAGIC)
    n, m = struct.unpack_from("<QQ", data, off)
    off += 16
    expected = off + 8 * (n + 1) + 8 * m
    if len(data) != expected:
        raise SchemaViolation(f"{path}: truncated graph dump ({len(data)} of {expected} bytes)")
    row_ptr = np.frombuffer(data, dtype="<i8", count=n + 1, offset=off).astype(np.int64)
    col_idx = np.frombuffer(data, dtype="<i8", count=m, offset=off + 8 * (n + 1)).astype(np.int64)
    return TransactionGraph(int(n), row_ptr, col_idx).check()


def graph_summary(graph):
    deg = graph.degrees()
    hist = np.bincount(deg) if len(deg) else np.zeros(1, dtype=np.int64)
    n_comp = (connected_components(
        sp.csr_matrix((np.ones(graph.edge_count), graph.col_idx, graph.row_ptr),
                      shape=(graph.n_nodes, graph.n_nodes)), directed=False)[0]
        if graph.n_nodes else 0)
    lines = [
        f"nodes\t{graph.n_nodes}",
        f"edges\t{graph.edge_count // 2}",
        f"directed_entries\t{graph.edge_count}",
        f"isolated_nodes\t{int((deg == 0).sum())}",
        f"max_degree\t{int(deg.max()) if len(deg) else 0}",
        f"components\t{int(n_comp)}",
        "degree_histogram",
    ]
    lines += [f"{d}\t{int(c)}" for d, c in enumerate(hist) if c]
    return "\n".join(lines) + "\n"
