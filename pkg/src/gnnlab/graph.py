"""Attributed CSR graphs, rooted balls and BFS subgraph extraction."""

from __future__ import annotations

import gzip
import hashlib
import warnings
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.sparse as sp


class GraphFormatError(ValueError):
    """Raised when a dataset file cannot be parsed."""


@dataclass(frozen=True, eq=False)
class AttributedGraph:
    """Immutable undirected graph in CSR form with node attributes.

    Adjacency is stored symmetrized, deduplicated and without self-loops.
    Labels use -1 for unlabeled nodes.
    """

    node_count: int
    offsets: np.ndarray
    neighbors: np.ndarray
    features: np.ndarray
    labels: np.ndarray
    train_mask: np.ndarray
    val_mask: np.ndarray
    test_mask: np.ndarray

    @cached_property
    def degrees(self) -> np.ndarray:
        return np.diff(self.offsets)

    @property
    def num_edges(self) -> int:
        """Number of undirected edges."""
        return int(self.offsets[-1]) // 2

    @property
    def num_features(self) -> int:
        return self.features.shape[1]

    @cached_property
    def num_classes(self) -> int:
        return int(self.labels.max()) + 1 if self.labels.size else 0

    @cached_property
    def adjacency(self) -> sp.csr_matrix:
        data = np.ones(self.neighbors.size)
        return sp.csr_matrix(
            (data, self.neighbors, self.offsets), shape=(self.node_count, self.node_count)
        )

    @cached_property
    def features_csr(self) -> sp.csr_matrix:
        return sp.csr_matrix(self.features)

    @cached_property
    def sparse_features(self) -> bool:
        """True when the feature matrix is sparse enough to multiply in CSR form."""
        if self.features.size == 0:
            return False
        return np.count_nonzero(self.features) < 0.1 * self.features.size

    @cached_property
    def fingerprint(self) -> str:
        h = hashlib.blake2b(digest_size=8)
        h.update(np.int64(self.node_count).tobytes())
        h.update(self.offsets.astype(np.int64).tobytes())
        h.update(self.neighbors.astype(np.int64).tobytes())
        return h.hexdigest()

    def neighbors_of(self, v: int) -> np.ndarray:
        return self.neighbors[self.offsets[v] : self.offsets[v + 1]]

    def has_edge(self, u: int, v: int) -> bool:
        row = self.neighbors_of(u)
        i = np.searchsorted(row, v)
        return bool(i < row.size and row[i] == v)

    def edge_array(self) -> np.ndarray:
        """Undirected edges as an (m, 2) array with u < v."""
        src = np.repeat(np.arange(self.node_count), self.degrees)
        keep = src < self.neighbors
        return np.stack([src[keep], self.neighbors[keep]], axis=1)

    @cached_property
    def train_nodes(self) -> np.ndarray:
        return np.flatnonzero(self.train_mask)

    def adjacency_lists(self) -> list[list[int]]:
        nb = self.neighbors.tolist()
        off = self.offsets.tolist()
        return [nb[off[i] : off[i + 1]] for i in range(self.node_count)]


@dataclass(frozen=True, eq=False)
class Subgraph(AttributedGraph):
    """Induced subgraph of a parent graph.

    Nodes are kept in increasing parent-id order, so drawing the whole graph
    reproduces the parent exactly.
    """

    parent_ids: np.ndarray
    seed_roots: np.ndarray

    @cached_property
    def subgraph_id(self) -> str:
        """Content hash of the parent node set."""
        return hashlib.blake2b(self.parent_ids.astype(np.int64).tobytes(), digest_size=6).hexdigest()


@dataclass(frozen=True, eq=False)
class RootedBall:
    """The k-hop ball around a root, local node 0 being the root."""

    parent_ids: np.ndarray
    offsets: np.ndarray
    neighbors: np.ndarray
    depth_of: np.ndarray
    radius: int
    features: np.ndarray | None = None
    labels: np.ndarray | None = None

    root_local = 0

    @property
    def node_count(self) -> int:
        return self.parent_ids.size

    @property
    def num_edges(self) -> int:
        return int(self.offsets[-1]) // 2

    def neighbors_of(self, v: int) -> np.ndarray:
        return self.neighbors[self.offsets[v] : self.offsets[v + 1]]

    def adjacency_lists(self) -> list[list[int]]:
        nb = self.neighbors.tolist()
        off = self.offsets.tolist()
        return [nb[off[i] : off[i + 1]] for i in range(self.node_count)]

    def truncate(self, k: int) -> "RootedBall":
        """The ball of radius ``k`` <= ``radius`` around the same root."""
        if k > self.radius:
            raise ValueError(f"cannot grow a radius-{self.radius} ball to radius {k}")
        keep = np.flatnonzero(self.depth_of <= k)
        if keep.size == self.node_count:
            return RootedBall(self.parent_ids, self.offsets, self.neighbors, self.depth_of,
                              k, self.features, self.labels)
        offsets, neighbors = _induced_csr(self.offsets, self.neighbors, keep, self.node_count)
        return RootedBall(
            parent_ids=self.parent_ids[keep],
            offsets=offsets,
            neighbors=neighbors,
            depth_of=self.depth_of[keep],
            radius=k,
            features=None if self.features is None else self.features[keep],
            labels=None if self.labels is None else self.labels[keep],
        )


def csr_from_edges(n: int, src, dst) -> tuple[np.ndarray, np.ndarray]:
    """Symmetrize, drop self-loops and duplicates, return (offsets, neighbors)."""
    src = np.asarray(src, dtype=np.int64).ravel()
    dst = np.asarray(dst, dtype=np.int64).ravel()
    keep = src != dst
    src, dst = src[keep], dst[keep]
    u = np.concatenate([src, dst])
    v = np.concatenate([dst, src])
    key = np.unique(u * n + v)
    u, v = key // n, key % n
    offsets = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(u, minlength=n), out=offsets[1:])
    return offsets, v.astype(np.int64)


def from_edges(
    n: int,
    edges,
    features=None,
    labels=None,
    train_mask=None,
    val_mask=None,
    test_mask=None,
) -> AttributedGraph:
    """Build an AttributedGraph; missing attributes get neutral defaults."""
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if edges.size and (edges.min() < 0 or edges.max() >= n):
        raise IndexError(f"edge endpoint out of range for {n} nodes")
    offsets, neighbors = csr_from_edges(n, edges[:, 0], edges[:, 1])
    if features is None:
        features = np.ones((n, 1))
    features = np.asarray(features, dtype=np.float64)
    if features.ndim == 1:
        features = features[:, None]
    if features.shape[0] != n:
        raise ValueError(f"feature rows {features.shape[0]} != node count {n}")
    labels = np.full(n, -1, dtype=np.int64) if labels is None else np.asarray(labels, dtype=np.int64)
    masks = [np.zeros(n, bool) if m is None else np.asarray(m, dtype=bool) for m in (train_mask, val_mask, test_mask)]
    g = AttributedGraph(n, offsets, neighbors, features, labels, *masks)
    validate(g)
    return g


def validate(g: AttributedGraph) -> None:
    n = g.node_count
    if g.offsets.shape != (n + 1,) or np.any(np.diff(g.offsets) < 0):
        raise ValueError("csr offsets must be monotone with length node_count + 1")
    if g.labels.shape != (n,) or g.labels.min(initial=-1) < -1:
        raise ValueError("labels must be integers >= -1, one per node")
    m = [g.train_mask, g.val_mask, g.test_mask]
    if any(x.shape != (n,) for x in m):
        raise ValueError("masks must have one entry per node")
    if np.any(m[0] & m[1]) or np.any(m[0] & m[2]) or np.any(m[1] & m[2]):
        raise ValueError("train/val/test masks overlap")


def _induced_csr(offsets, neighbors, keep, n):
    """CSR of the subgraph induced on ``keep`` (sorted local order = keep order)."""
    local = np.full(n, -1, dtype=np.int64)
    local[keep] = np.arange(keep.size)
    deg = offsets[keep + 1] - offsets[keep]
    rows = np.repeat(np.arange(keep.size), deg)
    idx = _gather_index(offsets, keep)
    cols = local[neighbors[idx]]
    ok = cols >= 0
    rows, cols = rows[ok], cols[ok]
    order = np.lexsort((cols, rows))
    rows, cols = rows[order], cols[order]
    new_off = np.zeros(keep.size + 1, dtype=np.int64)
    np.cumsum(np.bincount(rows, minlength=keep.size), out=new_off[1:])
    return new_off, cols


def _gather_index(offsets, nodes):
    """Flat CSR positions of the neighbor lists of ``nodes``, concatenated."""
    starts = offsets[nodes]
    deg = offsets[nodes + 1] - starts
    total = int(deg.sum())
    if total == 0:
        return np.zeros(0, dtype=np.int64)
    shift = np.repeat(starts - np.concatenate([[0], np.cumsum(deg)[:-1]]), deg)
    return np.arange(total, dtype=np.int64) + shift


def gather_neighbors(g: AttributedGraph, nodes: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(owner position, neighbor id) pairs for every neighbor of ``nodes``."""
    nodes = np.asarray(nodes, dtype=np.int64)
    deg = g.offsets[nodes + 1] - g.offsets[nodes]
    owner = np.repeat(np.arange(nodes.size), deg)
    return owner, g.neighbors[_gather_index(g.offsets, nodes)]


def induced_subgraph(g: AttributedGraph, nodes, seed_roots=()) -> Subgraph:
    keep = np.unique(np.asarray(nodes, dtype=np.int64))
    offsets, neighbors = _induced_csr(g.offsets, g.neighbors, keep, g.node_count)
    return Subgraph(
        node_count=int(keep.size),
        offsets=offsets,
        neighbors=neighbors,
        features=g.features[keep],
        labels=g.labels[keep],
        train_mask=g.train_mask[keep],
        val_mask=g.val_mask[keep],
        test_mask=g.test_mask[keep],
        parent_ids=keep,
        seed_roots=np.asarray(seed_roots, dtype=np.int64),
    )


def bfs_ball(g: AttributedGraph, v: int, k: int) -> RootedBall:
    """Induced subgraph on all nodes within ``k`` hops of ``v``, root first."""
    if not 0 <= v < g.node_count:
        raise IndexError(f"node {v} out of range for {g.node_count} nodes")
    if k < 0:
        raise ValueError("radius must be non-negative")
    off, nb = g.offsets, g.neighbors
    order = [v]
    depth = {v: 0}
    frontier = [v]
    for d in range(1, k + 1):
        nxt = []
        for u in frontier:
            for w in nb[off[u] : off[u + 1]].tolist():
                if w not in depth:
                    depth[w] = d
                    nxt.append(w)
        if not nxt:
            break
        order.extend(nxt)
        frontier = nxt
    ids = np.asarray(order, dtype=np.int64)
    local = {u: i for i, u in enumerate(order)}
    rows, cols = [], []
    for i, u in enumerate(order):
        for w in nb[off[u] : off[u + 1]].tolist():
            j = local.get(w)
            if j is not None:
                rows.append(i)
                cols.append(j)
    rows_a = np.asarray(rows, dtype=np.int64)
    cols_a = np.asarray(cols, dtype=np.int64)
    o = np.lexsort((cols_a, rows_a))
    offsets = np.zeros(ids.size + 1, dtype=np.int64)
    np.cumsum(np.bincount(rows_a, minlength=ids.size), out=offsets[1:])
    return RootedBall(
        parent_ids=ids,
        offsets=offsets,
        neighbors=cols_a[o],
        depth_of=np.asarray([depth[u] for u in order], dtype=np.int64),
        radius=k,
        features=g.features[ids],
        labels=g.labels[ids],
    )


def bfs_subgraph(g: AttributedGraph, rng: np.random.Generator, max_nodes: int) -> Subgraph:
    """Fixed-size BFS sample from a uniform random root.

    Each BFS level is shuffled and the last level is truncated to a uniform
    subset so exactly ``max_nodes`` nodes are visited.  An exhausted component
    is topped up from a fresh uniform root among unvisited nodes.
    """
    if max_nodes < 1:
        raise ValueError("max_nodes must be >= 1")
    n = g.node_count
    target = min(max_nodes, n)
    visited = np.zeros(n, dtype=bool)
    picked: list[np.ndarray] = []
    roots = []
    count = 0
    while count < target:
        unvisited = np.flatnonzero(~visited)
        root = int(unvisited[rng.integers(unvisited.size)])
        roots.append(root)
        visited[root] = True
        picked.append(np.array([root]))
        count += 1
        level = np.array([root])
        while count < target and level.size:
            _, cand = gather_neighbors(g, level)
            cand = np.unique(cand[~visited[cand]])
            if not cand.size:
                break
            cand = rng.permutation(cand)
            cand = cand[: target - count]
            visited[cand] = True
            picked.append(cand)
            count += cand.size
            level = cand
    nodes = np.concatenate(picked)
    return induced_subgraph(g, nodes, roots)


def normalized_adjacency_row(g: AttributedGraph, v: int, with_self_loops: bool = True):
    """Row ``v`` of D^{-1/2} A D^{-1/2} as (indices, values).

    With self-loops the matrix is built from A + I.  An isolated node without
    self-loops yields an empty row.
    """
    if not 0 <= v < g.node_count:
        raise IndexError(f"node {v} out of range")
    nb = g.neighbors_of(v)
    deg = g.degrees.astype(np.float64) + (1.0 if with_self_loops else 0.0)
    if with_self_loops:
        idx = np.sort(np.concatenate([nb, [v]]))
    else:
        idx = nb.copy()
    if idx.size == 0:
        return idx, np.zeros(0)
    return idx, 1.0 / np.sqrt(deg[v] * deg[idx])


def normalized_adjacency(g: AttributedGraph, with_self_loops: bool = True) -> sp.csr_matrix:
    a = g.adjacency
    if with_self_loops:
        a = a + sp.identity(g.node_count, format="csr")
    d = np.asarray(a.sum(axis=1)).ravel()
    inv = np.zeros_like(d)
    inv[d > 0] = 1.0 / np.sqrt(d[d > 0])
    return sp.csr_matrix(sp.diags(inv) @ a @ sp.diags(inv))


# ---------------------------------------------------------------- file io


def _open_text(path, mode="rt"):
    path = Path(path)
    if path.suffix == ".gz":
        return gzip.open(path, mode)
    return open(path, mode)


def _parse_int_lines(path, width: int, what: str):
    rows = []
    with _open_text(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != width:
                raise GraphFormatError(f"{path}:{lineno}: expected {width} field(s) in {what}, got {line!r}")
            try:
                rows.append([int(p, 10) for p in parts])
            except ValueError:
                raise GraphFormatError(f"{path}:{lineno}: non-integer value in {what}: {line!r}") from None
    return rows


def _parse_features(path) -> np.ndarray:
    with _open_text(path) as fh:
        text = fh.read()
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        return np.zeros((0, 0))
    width = lines[0].count(",") + 1
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DeprecationWarning)
        values = np.fromstring(",".join(lines), sep=",")
    if values.size != width * len(lines):
        for lineno, ln in enumerate(lines, 1):
            parts = ln.split(",")
            if len(parts) != width:
                raise GraphFormatError(f"{path}:{lineno}: expected {width} columns, got {len(parts)}")
            try:
                [float(p) for p in parts]
            except ValueError:
                raise GraphFormatError(f"{path}:{lineno}: non-numeric feature value") from None
        raise GraphFormatError(f"{path}: malformed feature matrix")
    return values.reshape(len(lines), width)


def load_graph(edge_path, feature_path, label_path, split_path) -> AttributedGraph:
    """Load a graph from the four dataset text files.

    Edge list: ``u v`` per line; features: CSV with row i for node i;
    labels: one integer per line; splits: ``train|val|test <node>`` lines.
    Any path may be gzip-compressed (``.gz``).
    """
    features = _parse_features(feature_path)
    n = features.shape[0]
    edges = np.asarray(_parse_int_lines(edge_path, 2, "edge list"), dtype=np.int64).reshape(-1, 2)
    if edges.size and (edges.min() < 0 or edges.max() >= n):
        bad = int(np.flatnonzero((edges < 0).any(1) | (edges >= n).any(1))[0])
        raise IndexError(f"{edge_path}: edge #{bad + 1} {tuple(edges[bad])} out of range for {n} nodes")
    labels = np.asarray(_parse_int_lines(label_path, 1, "labels"), dtype=np.int64).ravel()
    if labels.size != n:
        raise GraphFormatError(f"{label_path}: {labels.size} labels for {n} nodes")
    masks = {"train": np.zeros(n, bool), "val": np.zeros(n, bool), "test": np.zeros(n, bool)}
    with _open_text(split_path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 2 or parts[0] not in masks:
                raise GraphFormatError(f"{split_path}:{lineno}: expected 'train|val|test <node>', got {line!r}")
            try:
                node = int(parts[1], 10)
            except ValueError:
                raise GraphFormatError(f"{split_path}:{lineno}: bad node id {parts[1]!r}") from None
            if not 0 <= node < n:
                raise IndexError(f"{split_path}:{lineno}: node {node} out of range for {n} nodes")
            masks[parts[0]][node] = True
    return from_edges(n, edges, features, labels, masks["train"], masks["val"], masks["test"])


def write_graph(g: AttributedGraph, out_dir, compress: bool = False) -> dict[str, Path]:
    """Write ``g`` in the four-file dataset format; returns the paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ext = ".gz" if compress else ""
    paths = {
        "edges": out / f"edges.txt{ext}",
        "features": out / f"features.csv{ext}",
        "labels": out / f"labels.txt{ext}",
        "splits": out / f"splits.txt{ext}",
    }
    with _open_text(paths["edges"], "wt") as fh:
        for u, v in g.edge_array().tolist():
            fh.write(f"{u} {v}\n")
    feats = g.features
    integral = np.all(feats == np.round(feats))
    with _open_text(paths["features"], "wt") as fh:
        for row in feats:
            if integral:
                fh.write(",".join(str(int(x)) for x in row) + "\n")
            else:
                fh.write(",".join(repr(float(x)) for x in row) + "\n")
    with _open_text(paths["labels"], "wt") as fh:
        fh.write("".join(f"{int(y)}\n" for y in g.labels))
    with _open_text(paths["splits"], "wt") as fh:
        for name, mask in (("train", g.train_mask), ("val", g.val_mask), ("test", g.test_mask)):
            fh.write("".join(f"{name} {i}\n" for i in np.flatnonzero(mask)))
    return paths


def remap_ids(raw_ids) -> tuple[dict, list]:
    """Map arbitrary node identifiers to contiguous 0-based ids in first-seen order."""
    mapping: dict = {}
    order: list = []
    for x in raw_ids:
        if x not in mapping:
            mapping[x] = len(order)
            order.append(x)
    return mapping, order
