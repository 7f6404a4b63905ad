"""Node, computational-graph and subgraph samplers.

A :class:`ComputationalGraph` is stored layer by layer: ``layers[0]`` holds
the deepest input slots and ``layers[L]`` the output (seed) slots.  Slot
``i`` of layer ``l + 1`` reads its own previous embedding from slot
``self_index[l][i]`` of layer ``l`` and aggregates over ``edges[l]``.
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .graph import AttributedGraph, bfs_ball, bfs_subgraph, gather_neighbors, induced_subgraph

NODE_SAMPLERS = ("uniform", "weighted")
COMP_SAMPLERS = ("full", "sage", "fastgcn", "shadow")
SUBGRAPH_SAMPLERS = ("whole_graph", "bfs")


@dataclass(frozen=True)
class SamplerSpec:
    node_sampler: str = "uniform"
    weight_source: str = "degree"
    batch_size: int = 32
    comp_sampler: str = "full"
    fanouts: tuple[int, ...] = ()
    shadow_depth: int | None = None
    shadow_inner: str = "full"
    subgraph_sampler: str = "whole_graph"
    subgraph_size: int | None = None
    resample_interval: int = 1

    def __post_init__(self):
        object.__setattr__(self, "fanouts", tuple(int(k) for k in self.fanouts))
        if self.node_sampler not in NODE_SAMPLERS:
            raise ValueError(f"unknown node sampler {self.node_sampler!r}")
        if self.comp_sampler not in COMP_SAMPLERS:
            raise ValueError(f"unknown computational-graph sampler {self.comp_sampler!r}")
        if self.shadow_inner not in ("full", "sage", "fastgcn"):
            raise ValueError(f"unknown shadow inner sampler {self.shadow_inner!r}")
        if self.subgraph_sampler not in SUBGRAPH_SAMPLERS:
            raise ValueError(f"unknown subgraph sampler {self.subgraph_sampler!r}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if any(k < 1 for k in self.fanouts):
            raise ValueError("fanouts must all be >= 1")
        if self.resample_interval < 1:
            raise ValueError("resample_interval must be >= 1")
        if self.subgraph_sampler == "bfs" and (self.subgraph_size is None or self.subgraph_size < 1):
            raise ValueError("bfs subgraph sampler needs subgraph_size >= 1")


@dataclass
class ComputationalGraph:
    seeds: np.ndarray
    layers: list[np.ndarray]
    self_index: list[np.ndarray]
    edges: list[tuple[np.ndarray, np.ndarray]]
    weights: list[np.ndarray | None]
    decoupled: bool = False
    owner: list[np.ndarray] | None = None
    empty_parents: list[int] = field(default_factory=list)
    # per-edge inclusion probability of the child (importance-sampled layers only)
    inclusion: list[np.ndarray | None] | None = None

    @property
    def num_layers(self) -> int:
        return len(self.layers) - 1

    def children_of(self, layer: int, parent_slot: int) -> np.ndarray:
        """Global ids aggregated into ``parent_slot`` of ``layer + 1``."""
        child, parent = self.edges[layer]
        return self.layers[layer][child[parent == parent_slot]]


# ---------------------------------------------------------------- node sampling


def node_weights(g: AttributedGraph, source: str = "degree") -> np.ndarray:
    if source == "degree":
        return g.degrees.astype(np.float64)
    if source == "uniform":
        return np.ones(g.node_count)
    raise ValueError(f"unknown weight source {source!r}")


def sample_minibatch(g: AttributedGraph, spec: SamplerSpec, rng: np.random.Generator, raw_weights=None):
    """Draw a minibatch of train nodes; returns ``(nodes, nu)``.

    Uniform mode draws without replacement and every ``nu`` is 1.  Weighted
    mode draws i.i.d. with probability ``nu(v) / n_train`` where ``nu`` is the
    raw weight rescaled to mean 1 over the train nodes.
    """
    train = g.train_nodes
    if train.size == 0:
        raise ValueError("graph has no train nodes")
    b = spec.batch_size
    if spec.node_sampler == "uniform":
        if b > train.size:
            warnings.warn(f"batch size {b} exceeds {train.size} train nodes; clamping", stacklevel=2)
            b = train.size
        nodes = train[np.sort(rng.choice(train.size, size=b, replace=False))] if b < train.size else train.copy()
        return nodes, np.ones(b)
    w = node_weights(g, spec.weight_source) if raw_weights is None else np.asarray(raw_weights, float)
    w = w[train]
    if np.any(w <= 0):
        raise ValueError("weighted node sampler needs positive weights on every train node")
    nu = w * (train.size / w.sum())
    idx = rng.choice(train.size, size=b, replace=True, p=nu / nu.sum())
    return train[idx], nu[idx]


def enumerate_minibatches(g: AttributedGraph, spec: SamplerSpec, raw_weights=None):
    """Every minibatch ``sample_minibatch`` can return, as ``(nodes, nu, probability)``.

    Exponential in the batch size; meant for small fixtures.
    """
    train = g.train_nodes
    b = min(spec.batch_size, train.size)
    if spec.node_sampler == "uniform":
        subsets = list(itertools.combinations(range(train.size), b))
        return [(train[list(s)], np.ones(b), 1.0 / len(subsets)) for s in subsets]
    w = node_weights(g, spec.weight_source) if raw_weights is None else np.asarray(raw_weights, float)
    w = w[train]
    nu = w * (train.size / w.sum())
    p = nu / nu.sum()
    out = []
    for t in itertools.product(range(train.size), repeat=spec.batch_size):
        idx = list(t)
        out.append((train[idx], nu[idx], float(np.prod(p[idx]))))
    return out


def validate_batch_window(g: AttributedGraph, spec: SamplerSpec) -> dict:
    """Advisory check of the minibatch size against [log2 n, sqrt n]."""
    n = g.node_count
    b = spec.batch_size
    upper = math.sqrt(n)
    lower = math.ceil(math.log2(n)) if n > 1 else 1
    full = b >= n or b >= g.train_nodes.size > 0
    report = {
        "node_count": n,
        "batch_size": b,
        "upper_bound": upper,
        "lower_bound": lower,
        "upper_violated": b > upper and not full,
        "lower_violated": b < lower,
        "full_gradient": full,
    }
    report["within_window"] = not (report["upper_violated"] or report["lower_violated"]) and not full
    return report


# ------------------------------------------------------- computational graphs


def _slot_edges(parent_slot_uid, e_uid, e_child, e_w=None):
    """Expand edges keyed by unique-parent index onto (possibly repeated) slots."""
    order = np.argsort(e_uid, kind="stable")
    e_uid, e_child = e_uid[order], e_child[order]
    n_u = int(parent_slot_uid.max()) + 1 if parent_slot_uid.size else 0
    n_u = max(n_u, int(e_uid.max()) + 1 if e_uid.size else 0)
    counts = np.bincount(e_uid, minlength=n_u)
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    deg = counts[parent_slot_uid]
    parent = np.repeat(np.arange(parent_slot_uid.size), deg)
    pos = np.arange(int(deg.sum())) + np.repeat(starts[parent_slot_uid] - np.concatenate([[0], np.cumsum(deg)[:-1]]), deg)
    child = e_child[pos]
    w = None if e_w is None else e_w[order][pos]
    return child, parent, w


def _assemble(seeds, layer_ids_top_down, raw_edges, weighted, raw_pi=None):
    """Turn per-layer (unique parents, edges) into a ComputationalGraph.

    ``layer_ids_top_down[j]`` are the slot ids of layer ``L - j``;
    ``raw_edges[j]`` = (parent unique ids, edge parent uid index, edge child
    global id, edge weights) for the aggregation into layer ``L - j``.
    """
    L = len(raw_edges)
    layers = list(reversed(layer_ids_top_down))
    self_index, edges, weights, incl = [None] * L, [None] * L, [None] * L, [None] * L
    for j, (parents_u, e_uid, e_child, e_w) in enumerate(raw_edges):
        lvl = L - 1 - j
        below = layers[lvl]
        above = layers[lvl + 1]
        slot_uid = np.searchsorted(parents_u, above)
        self_index[lvl] = np.searchsorted(below, above)
        child_g, parent_slot, w = _slot_edges(slot_uid, e_uid, e_child, e_w if weighted else None)
        edges[lvl] = (np.searchsorted(below, child_g), parent_slot)
        weights[lvl] = w
        if raw_pi is not None:
            incl[lvl] = _slot_edges(slot_uid, e_uid, e_child, raw_pi[j])[2]
    return ComputationalGraph(np.asarray(seeds), layers, self_index, edges, weights,
                              inclusion=incl if raw_pi is not None else None)


def full_computational_graph(g: AttributedGraph, v, num_layers: int) -> ComputationalGraph:
    """The whole ``num_layers``-hop computational graph of ``v`` (node or batch)."""
    seeds = np.atleast_1d(np.asarray(v, dtype=np.int64))
    top_down = [seeds]
    raw = []
    ids = seeds
    for _ in range(num_layers):
        parents = np.unique(ids)
        owner, nb = gather_neighbors(g, parents)
        ids = np.unique(np.concatenate([parents, nb]))
        raw.append((parents, owner, nb, None))
        top_down.append(ids)
    return _assemble(seeds, top_down, raw, weighted=False)


def sage_computational_graph(g: AttributedGraph, v, fanouts, rng: np.random.Generator) -> ComputationalGraph:
    """GraphSAGE neighbor sampling: ``min(K, deg)`` distinct uniform neighbors per parent.

    ``fanouts[0]`` applies to the seeds' neighbors, ``fanouts[1]`` to the next hop.
    """
    seeds = np.atleast_1d(np.asarray(v, dtype=np.int64))
    top_down = [seeds]
    raw = []
    ids = seeds
    for j in range(len(fanouts)):
        k = fanouts[j]
        parents = np.unique(ids)
        owner, nb = gather_neighbors(g, parents)
        keys = rng.random(nb.size)
        order = np.lexsort((keys, owner))
        deg = np.bincount(owner, minlength=parents.size)
        starts = np.concatenate([[0], np.cumsum(deg)[:-1]])
        rank = np.arange(nb.size) - np.repeat(starts, deg)
        keep = order[rank < k]
        keep.sort()
        owner, nb = owner[keep], nb[keep]
        ids = np.unique(np.concatenate([parents, nb]))
        raw.append((parents, owner, nb, None))
        top_down.append(ids)
    return _assemble(seeds, top_down, raw, weighted=False)


def fastgcn_probabilities(g: AttributedGraph, parents, self_loops: bool = False):
    """Per-parent q(u;v) = Â(u,v)^2 / sum_u' Â(u',v)^2 over u in N(v).

    Returns (owner index, candidate id, q) with one entry per (parent, neighbor).
    """
    parents = np.asarray(parents, dtype=np.int64)
    owner, cand = gather_neighbors(g, parents)
    d = g.degrees.astype(np.float64) + (1.0 if self_loops else 0.0)
    a2 = 1.0 / (d[cand] * d[parents[owner]])
    tot = np.bincount(owner, weights=a2, minlength=parents.size)
    return owner, cand, a2 / tot[owner]


def fastgcn_computational_graph(g: AttributedGraph, batch, fanouts, rng: np.random.Generator,
                                self_loops: bool = False) -> ComputationalGraph:
    """Layer-wise importance sampling.

    Each layer draws ``k`` candidates without replacement from the union of
    the parents' neighborhoods with probability proportional to the pooled
    ``sum_v q(u;v)``.  Surviving child weights per parent are ``q / pi``
    renormalized, where ``pi`` is the candidate's inclusion probability.
    """
    seeds = np.atleast_1d(np.asarray(batch, dtype=np.int64))
    top_down = [seeds]
    raw = []
    raw_pi = []
    empty = []
    ids = seeds
    for j in range(len(fanouts)):
        k = fanouts[j]
        parents = np.unique(ids)
        owner, cand, q = fastgcn_probabilities(g, parents, self_loops)
        uniq, inv = np.unique(cand, return_inverse=True)
        if uniq.size:
            p = np.bincount(inv, weights=q, minlength=uniq.size)
            p = p / p.sum()
            if k >= uniq.size:
                chosen = np.ones(uniq.size, bool)
                pi = np.ones(uniq.size)
            else:
                pick = rng.choice(uniq.size, size=k, replace=False, p=p)
                chosen = np.zeros(uniq.size, bool)
                chosen[pick] = True
                pi = 1.0 - (1.0 - p) ** k
            keep = chosen[inv]
            owner, cand = owner[keep], cand[keep]
            e_pi = pi[inv[keep]]
            w = q[keep] / e_pi
            tot = np.bincount(owner, weights=w, minlength=parents.size)
            empty.append(int(np.sum(tot == 0)))
            w = w / tot[owner]
        else:
            w = e_pi = np.zeros(0)
            empty.append(int(parents.size))
        ids = np.unique(np.concatenate([parents, cand]))
        raw.append((parents, owner, cand, w))
        raw_pi.append(e_pi)
        top_down.append(ids)
    cg = _assemble(seeds, top_down, raw, weighted=True, raw_pi=raw_pi)
    cg.empty_parents = list(reversed(empty))
    return cg


def shadow_extract(g: AttributedGraph, batch, depth: int, inner: str = "full", rng=None,
                   fanouts=(), num_layers: int | None = None) -> ComputationalGraph:
    """Decoupled per-seed subgraphs of radius ``depth``.

    Every seed gets private copies of the nodes in its (possibly sampled)
    ``depth``-hop neighborhood.  The model runs ``num_layers`` layers over
    the induced subgraph of that node set; the last layer keeps only the seed.
    """
    seeds = np.atleast_1d(np.asarray(batch, dtype=np.int64))
    M = depth if num_layers is None else num_layers
    node_sets = []
    for s in seeds.tolist():
        if inner == "full":
            nodes = np.sort(bfs_ball(g, s, depth).parent_ids)
        elif inner == "sage":
            nodes = sage_computational_graph(g, s, fanouts, rng).layers[0]
        elif inner == "fastgcn":
            nodes = fastgcn_computational_graph(g, s, fanouts, rng).layers[0]
        else:
            raise ValueError(f"unknown inner sampler {inner!r}")
        node_sets.append(nodes)

    sizes = np.array([x.size for x in node_sets])
    base = np.concatenate([[0], np.cumsum(sizes)[:-1]])
    copy_ids = np.concatenate(node_sets)
    copy_owner = np.repeat(np.arange(seeds.size), sizes)
    inner_child, inner_parent = [], []
    seed_pos = np.empty(seeds.size, dtype=np.int64)
    top_child, top_parent = [], []
    for i, nodes in enumerate(node_sets):
        sub = induced_subgraph(g, nodes)
        src = np.repeat(np.arange(sub.node_count), sub.degrees)
        inner_child.append(sub.neighbors + base[i])
        inner_parent.append(src + base[i])
        sp_ = int(np.searchsorted(nodes, seeds[i]))
        seed_pos[i] = base[i] + sp_
        nb = sub.neighbors_of(sp_)
        top_child.append(nb + base[i])
        top_parent.append(np.full(nb.size, i, dtype=np.int64))
    ic = np.concatenate(inner_child).astype(np.int64)
    ip = np.concatenate(inner_parent).astype(np.int64)
    layers = [copy_ids] * M + [seeds]
    self_index = [np.arange(copy_ids.size)] * (M - 1) + [seed_pos]
    edges = [(ic, ip)] * (M - 1) + [(np.concatenate(top_child).astype(np.int64),
                                     np.concatenate(top_parent).astype(np.int64))]
    owner = [copy_owner] * M + [np.arange(seeds.size)]
    return ComputationalGraph(seeds, layers, self_index, edges, [None] * M, decoupled=True, owner=owner)


def whole_graph_cg(g: AttributedGraph, num_layers: int) -> ComputationalGraph:
    """Every node at every layer with all graph edges (full-graph propagation)."""
    ids = np.arange(g.node_count)
    src = np.repeat(ids, g.degrees)
    e = (g.neighbors.astype(np.int64), src)
    return ComputationalGraph(ids, [ids] * (num_layers + 1), [ids] * num_layers,
                              [e] * num_layers, [None] * num_layers)


def build_computational_graph(g: AttributedGraph, seeds, spec: SamplerSpec, num_layers: int,
                              rng: np.random.Generator) -> ComputationalGraph:
    kind = spec.comp_sampler
    if kind == "full":
        return full_computational_graph(g, seeds, num_layers)
    if kind == "sage":
        return sage_computational_graph(g, seeds, _pad(spec.fanouts, num_layers), rng)
    if kind == "fastgcn":
        return fastgcn_computational_graph(g, seeds, _pad(spec.fanouts, num_layers), rng)
    depth = spec.shadow_depth or num_layers
    return shadow_extract(g, seeds, depth, spec.shadow_inner, rng, _pad(spec.fanouts, depth), num_layers)


def _pad(fanouts, n):
    if not fanouts:
        raise ValueError("sampler needs fanouts")
    fanouts = tuple(fanouts)
    return fanouts + (fanouts[-1],) * (n - len(fanouts)) if len(fanouts) < n else fanouts[:n]


def draw_subgraph(g: AttributedGraph, spec: SamplerSpec, rng: np.random.Generator):
    """The subgraph sampler: the graph itself or a fixed-size BFS sample."""
    if spec.subgraph_sampler == "whole_graph":
        return induced_subgraph(g, np.arange(g.node_count))
    return bfs_subgraph(g, rng, spec.subgraph_size)
