"""Forward and reverse-mode passes over computational graphs.

Each layer is a sparse aggregation operator applied to the previous layer's
slot embeddings followed by a dense weight product, so the backward pass is
the transposed operator chain.  Losses are objects returning both the value
and the gradient with respect to the model output rows.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .graph import AttributedGraph
from .model import GradientRecord, ModelParams
from .samplers import ComputationalGraph


@dataclass
class LayerOp:
    agg: sp.csr_matrix
    sel: sp.csr_matrix | None = None  # self rows, sage only


def _selector(rows, cols, shape):
    return sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=shape)


def _gcn_neighbor_mass(graph: AttributedGraph) -> np.ndarray:
    """sum over u in N(v) of 1/sqrt((d_u+1)(d_v+1)), for every v."""
    r = 1.0 / np.sqrt(graph.degrees + 1.0)
    return r * (graph.adjacency @ r)


def _normalize_inverse_inclusion(base, pi, parent, n_parents, target):
    """Horvitz-Thompson style weights, self-normalized to ``target`` per parent."""
    a = base / pi
    tot = np.bincount(parent, weights=a, minlength=n_parents)
    with np.errstate(invalid="ignore", divide="ignore"):
        scale = np.where(tot > 0, target / tot, 0.0)
    return a * scale[parent]


def aggregation_operators(arch: str, cg: ComputationalGraph, graph: AttributedGraph) -> list[LayerOp]:
    """Per-layer sparse operators; GCN degrees always come from ``graph``."""
    ops = []
    deg = graph.degrees.astype(np.float64)
    mass = None
    for l in range(cg.num_layers):
        below, above = cg.layers[l], cg.layers[l + 1]
        child, parent = cg.edges[l]
        shape = (above.size, below.size)
        self_rows = np.arange(above.size)
        self_cols = cg.self_index[l]
        pg, cgid = above[parent], below[child]
        pi = cg.inclusion[l] if cg.inclusion is not None else None
        w = cg.weights[l]
        if arch == "gcn":
            dv = deg + 1.0
            base = 1.0 / np.sqrt(dv[pg] * dv[cgid])
            if pi is not None:
                if mass is None:
                    mass = _gcn_neighbor_mass(graph)
                base = _normalize_inverse_inclusion(base, pi, parent, above.size, mass[above])
            vals = np.concatenate([base, 1.0 / dv[above]])
            rows = np.concatenate([parent, self_rows])
            cols = np.concatenate([child, self_cols])
            ops.append(LayerOp(sp.csr_matrix((vals, (rows, cols)), shape=shape)))
        elif arch == "sage":
            if w is None:
                cnt = np.bincount(parent, minlength=above.size).astype(np.float64)
                vals = 1.0 / cnt[parent]
            else:
                vals = w
            agg = sp.csr_matrix((vals, (parent, child)), shape=shape)
            ops.append(LayerOp(agg, _selector(self_rows, self_cols, shape)))
        else:
            if pi is None:
                vals = np.ones(child.size)
            else:
                vals = _normalize_inverse_inclusion(np.ones(child.size), pi, parent, above.size, deg[above])
            vals = np.concatenate([vals, np.ones(above.size)])
            rows = np.concatenate([parent, self_rows])
            cols = np.concatenate([child, self_cols])
            ops.append(LayerOp(sp.csr_matrix((vals, (rows, cols)), shape=shape)))
    return ops


def _act(kind, z):
    return np.maximum(z, 0.0) if kind == "relu" else z


def _dense(x):
    return x.toarray() if sp.issparse(x) else np.asarray(x)


def log_softmax(z: np.ndarray) -> np.ndarray:
    m = z.max(axis=1, keepdims=True)
    s = z - m
    return s - np.log(np.exp(s).sum(axis=1, keepdims=True))


def layer_inputs(cg: ComputationalGraph, graph: AttributedGraph, features=None):
    if features is None:
        features = graph.features_csr if graph.sparse_features else graph.features
    return features[cg.layers[0]]


@dataclass
class ForwardCache:
    layer: list[dict] = field(default_factory=list)
    final_hidden: np.ndarray | None = None
    pooled_from: int | None = None
    logits: np.ndarray | None = None

    def relu_pattern(self) -> np.ndarray:
        """Signs of every relu pre-activation, for kink detection."""
        parts = [c[k].ravel() > 0 for c in self.layer for k in ("z1", "z") if k in c and c.get("act_" + k)]
        return np.concatenate(parts) if parts else np.zeros(0, bool)


def forward(params: ModelParams, cg: ComputationalGraph, graph: AttributedGraph, features=None,
            inputs=None, ops=None, return_cache=False):
    """Output rows for the top-layer slots (one row if the readout pools)."""
    if cg.num_layers != params.num_layers:
        raise ValueError(f"computational graph has {cg.num_layers} layers, model has {params.num_layers}")
    H = layer_inputs(cg, graph, features) if inputs is None else inputs
    if H.shape[1] != params.dims[0]:
        raise ValueError(f"feature dim {H.shape[1]} != model input dim {params.dims[0]}")
    if ops is None:
        ops = aggregation_operators(params.arch, cg, graph)
    cache = ForwardCache()
    nl = params.nonlinearity
    L = params.num_layers
    for l, (mats, op) in enumerate(zip(params.layers, ops)):
        act_out = l < L - 1 or params.head is not None
        c = {"act_z": act_out and nl == "relu"}
        if params.arch == "gcn":
            U = op.agg @ H
            Z = _dense(U @ mats[0])
            c["u"] = U
        elif params.arch == "sage":
            if sp.issparse(H):
                C = sp.hstack([op.sel @ H, op.agg @ H], format="csr")
            else:
                C = np.hstack([op.sel @ H, op.agg @ H])
            Z = _dense(C @ mats[0])
            c["u"] = C
        else:
            U = op.agg @ H
            Z1 = _dense(U @ mats[0])
            A1 = _act(nl, Z1)
            Z = A1 @ mats[1]
            c.update(u=U, z1=Z1, a1=A1, act_z1=nl == "relu")
        H = _act(nl, Z) if act_out else Z
        if not np.all(np.isfinite(H)):
            raise FloatingPointError(f"non-finite activation in layer {l}")
        c["z"] = Z
        cache.layer.append(c)
    if params.readout == "mean":
        H = readout_mean(H)[None, :]
        cache.pooled_from = cache.layer[-1]["z"].shape[0]
    cache.final_hidden = H
    if params.head is not None:
        H = H @ params.head
    cache.logits = H
    out = log_softmax(H) if params.output == "log_softmax" else H
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("non-finite model output")
    return (out, cache) if return_cache else out


def backward(params: ModelParams, cg: ComputationalGraph, graph: AttributedGraph, objective,
             features=None, inputs=None, ops=None) -> GradientRecord:
    """Exact gradient of ``objective(output)`` with respect to every weight matrix."""
    if ops is None:
        ops = aggregation_operators(params.arch, cg, graph)
    out, cache = forward(params, cg, graph, features, inputs, ops, return_cache=True)
    value, dout = objective(out)
    if params.output == "log_softmax":
        dlogits = dout - np.exp(out) * dout.sum(axis=1, keepdims=True)
    else:
        dlogits = dout
    grads_head = None
    if params.head is not None:
        grads_head = cache.final_hidden.T @ dlogits
        dH = dlogits @ params.head.T
    else:
        dH = dlogits
    if cache.pooled_from is not None:
        dH = np.repeat(dH / cache.pooled_from, cache.pooled_from, axis=0)

    nl = params.nonlinearity
    L = params.num_layers
    layer_grads = [None] * L
    for l in range(L - 1, -1, -1):
        c = cache.layer[l]
        mats = params.layers[l]
        act_out = l < L - 1 or params.head is not None
        dZ = dH * (c["z"] > 0) if act_out and nl == "relu" else dH
        op = ops[l]
        if params.arch == "gcn":
            layer_grads[l] = (_dense(c["u"].T @ dZ),)
            if l:
                dH = op.agg.T @ (dZ @ mats[0].T)
        elif params.arch == "sage":
            layer_grads[l] = (_dense(c["u"].T @ dZ),)
            if l:
                dC = dZ @ mats[0].T
                f = dC.shape[1] // 2
                dH = op.sel.T @ dC[:, :f] + op.agg.T @ dC[:, f:]
        else:
            dWb = c["a1"].T @ dZ
            dZ1 = dZ @ mats[1].T
            if nl == "relu":
                dZ1 = dZ1 * (c["z1"] > 0)
            layer_grads[l] = (_dense(c["u"].T @ dZ1), dWb)
            if l:
                dH = op.agg.T @ (dZ1 @ mats[0].T)
    arrays = [g for mats in layer_grads for g in mats]
    if grads_head is not None:
        arrays.append(grads_head)
    return GradientRecord(arrays, float(value))


# ---------------------------------------------------------------- objectives


def readout_mean(H) -> np.ndarray:
    H = np.asarray(H, dtype=np.float64)
    if H.shape[0] == 0:
        raise ValueError("mean readout over an empty node set")
    return H.mean(axis=0)


@dataclass
class NLLObjective:
    """Weighted negative log-likelihood ``-sum_i coef_i * out[rows_i, labels_i]``.

    ``coef`` defaults to ``1/len(rows)`` (plain mean).
    """

    rows: np.ndarray
    labels: np.ndarray
    coef: np.ndarray | None = None

    def __post_init__(self):
        self.rows = np.asarray(self.rows, dtype=np.int64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.rows.size == 0:
            raise ValueError("empty node set")
        if np.any(self.labels < 0):
            raise ValueError("node without a label in the loss set")
        if self.coef is None:
            self.coef = np.full(self.rows.size, 1.0 / self.rows.size)

    def __call__(self, out):
        picked = out[self.rows, self.labels]
        d = np.zeros_like(out)
        np.add.at(d, (self.rows, self.labels), -self.coef)
        return float(-np.dot(self.coef, picked)), d


def _softplus(x):
    return np.logaddexp(0.0, x)


def _sigmoid(x):
    return np.exp(-np.logaddexp(0.0, -x))


@dataclass
class NegSampleObjective:
    """Skip-gram style loss ``softplus(-z_a.z_p) + sum_q softplus(z_a.z_nq)`` per anchor.

    ``pos`` has one row index per anchor, ``neg`` has shape (anchors, Q).
    """

    anchors: np.ndarray
    pos: np.ndarray
    neg: np.ndarray
    coef: np.ndarray | None = None

    def __post_init__(self):
        self.anchors = np.asarray(self.anchors, dtype=np.int64)
        self.pos = np.asarray(self.pos, dtype=np.int64)
        self.neg = np.asarray(self.neg, dtype=np.int64).reshape(self.anchors.size, -1)
        if self.neg.shape[1] < 1:
            raise ValueError("need at least one negative per pair")
        if self.coef is None:
            self.coef = np.full(self.anchors.size, 1.0 / self.anchors.size)

    def __call__(self, out):
        za, zp, zn = out[self.anchors], out[self.pos], out[self.neg]
        s_pos = np.einsum("ij,ij->i", za, zp)
        s_neg = np.einsum("ij,iqj->iq", za, zn)
        value = np.dot(self.coef, _softplus(-s_pos) + _softplus(s_neg).sum(axis=1))
        g_pos = -_sigmoid(-s_pos) * self.coef
        g_neg = _sigmoid(s_neg) * self.coef[:, None]
        d = np.zeros_like(out)
        np.add.at(d, self.anchors, g_pos[:, None] * zp + np.einsum("iq,iqj->ij", g_neg, zn))
        np.add.at(d, self.pos, g_pos[:, None] * za)
        np.add.at(d, self.neg.ravel(), (g_neg[:, :, None] * za[:, None, :]).reshape(-1, za.shape[1]))
        return float(value), d


def nll_loss(log_probs, labels, nodes) -> float:
    log_probs = np.asarray(log_probs, dtype=np.float64)
    nodes = np.asarray(nodes, dtype=np.int64)
    lse = np.logaddexp.reduce(log_probs[nodes], axis=1)
    if np.any(np.abs(lse) > 1e-6):
        raise ValueError("log-probability rows are not normalized")
    return NLLObjective(nodes, np.asarray(labels)[nodes])(log_probs)[0]


def sample_negatives(num_nodes: int, num_pairs: int, q: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform negatives over all nodes, shape (num_pairs, q)."""
    if q < 1:
        raise ValueError("Q must be >= 1")
    return rng.integers(0, num_nodes, size=(num_pairs, q))


def negsample_loss(embeddings, pos_pairs, negatives=None, q: int = 1, rng=None) -> float:
    """Mean over positive pairs; negatives are drawn uniformly if not given."""
    emb = np.asarray(embeddings, dtype=np.float64)
    pairs = np.asarray(pos_pairs, dtype=np.int64).reshape(-1, 2)
    if negatives is None:
        negatives = sample_negatives(emb.shape[0], pairs.shape[0], q, rng)
    return NegSampleObjective(pairs[:, 0], pairs[:, 1], negatives)(emb)[0]


def random_walk_positives(g: AttributedGraph, anchors, rng: np.random.Generator) -> np.ndarray:
    """Endpoint of a length-2 random walk from each anchor (isolated nodes pair with themselves)."""
    anchors = np.asarray(anchors, dtype=np.int64)
    out = anchors.copy()
    for _ in range(2):
        d = g.degrees[out]
        has = d > 0
        pick = (rng.random(out.size) * np.maximum(d, 1)).astype(np.int64)
        out = np.where(has, g.neighbors[g.offsets[out] + np.minimum(pick, np.maximum(d - 1, 0))], out)
    return out


# -------------------------------------------------------- estimator, optimizers


def estimate_gradient(records, weights, widened: bool = False) -> GradientRecord:
    """``(1/|B|) sum_v grad_v / nu(v)`` over per-node gradient records."""
    weights = np.asarray(weights, dtype=np.float64)
    if len(records) == 0 or len(records) != weights.size:
        raise ValueError("need one positive weight per gradient record")
    if np.any(weights <= 0):
        raise ValueError("importance weights must be positive")
    dt = np.longdouble if widened else np.float64
    b = len(records)
    acc = [np.zeros(a.shape, dtype=dt) for a in records[0].arrays]
    loss = dt(0)
    for rec, w in zip(records, weights):
        for a, g in zip(acc, rec.arrays):
            a += np.asarray(g, dtype=dt) / dt(w)
        loss += dt(rec.loss) / dt(w)
    return GradientRecord([(a / b).astype(np.float64) for a in acc], float(loss / b))


def _check_finite(grad: GradientRecord):
    for g in grad.arrays:
        if not np.all(np.isfinite(g)):
            raise FloatingPointError("non-finite gradient")


def sgd_step(params: ModelParams, grad: GradientRecord, lr: float) -> ModelParams:
    _check_finite(grad)
    new = []
    for w, g in zip(params.arrays(), grad.arrays):
        if w.shape != g.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {w.shape}")
        new.append(w - lr * g)
    return params.with_arrays(new)


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params: ModelParams) -> "AdamState":
        return cls([np.zeros_like(a) for a in params.arrays()], [np.zeros_like(a) for a in params.arrays()])


def adam_step(params: ModelParams, grad: GradientRecord, state: AdamState | None, lr: float):
    _check_finite(grad)
    if state is None:
        state = AdamState.zeros_like(params)
    t = state.t + 1
    b1, b2 = state.beta1, state.beta2
    m = [b1 * m_ + (1 - b1) * g for m_, g in zip(state.m, grad.arrays)]
    v = [b2 * v_ + (1 - b2) * g * g for v_, g in zip(state.v, grad.arrays)]
    c1, c2 = 1 - b1**t, 1 - b2**t
    new = [w - lr * (m_ / c1) / (np.sqrt(v_ / c2) + state.eps) for w, m_, v_ in zip(params.arrays(), m, v)]
    return params.with_arrays(new), AdamState(m, v, t, b1, b2, state.eps)


# --------------------------------------------------------------- gradcheck


@dataclass
class GradCheckResult:
    max_rel_error: float
    checked: int
    excluded: int
    worst_index: int | None = None


def relative_error(analytic, numeric, floor: float = 1e-3):
    """``|a - n| / max(|a|, |n|, floor)`` elementwise."""
    a, n = np.asarray(analytic), np.asarray(numeric)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def finite_diff_check(params: ModelParams, cg: ComputationalGraph, graph: AttributedGraph, objective,
                      h: float = 1e-4, features=None, inputs=None, corrupt=None) -> GradCheckResult:
    """Compare analytic gradients with central differences, coordinate by coordinate.

    Coordinates whose perturbation flips any relu pre-activation sign are
    excluded, since the loss is not differentiable across the kink.
    ``corrupt`` is an optional callable applied to the analytic flat
    gradient (used to exercise failure paths).
    """
    ops = aggregation_operators(params.arch, cg, graph)
    rec = backward(params, cg, graph, objective, features, inputs, ops)
    analytic = rec.flat()
    if corrupt is not None:
        analytic = corrupt(analytic.copy())
    _, base_cache = forward(params, cg, graph, features, inputs, ops, return_cache=True)
    base_pattern = base_cache.relu_pattern()
    theta = np.concatenate([a.ravel() for a in params.arrays()])
    shapes = [a.shape for a in params.arrays()]
    splits = np.cumsum([int(np.prod(s)) for s in shapes])[:-1]

    def unflat(vec):
        return params.with_arrays([p.reshape(s) for p, s in zip(np.split(vec, splits), shapes)])

    def evaluate(vec):
        out, cache = forward(unflat(vec), cg, graph, features, inputs, ops, return_cache=True)
        return objective(out)[0], cache.relu_pattern()

    worst, worst_i, excluded = 0.0, None, 0
    for i in range(theta.size):
        tp, tm = theta.copy(), theta.copy()
        tp[i] += h
        tm[i] -= h
        fp, pp = evaluate(tp)
        fm, pm = evaluate(tm)
        if not (np.array_equal(pp, base_pattern) and np.array_equal(pm, base_pattern)):
            excluded += 1
            continue
        err = float(relative_error(analytic[i], (fp - fm) / (2 * h)))
        if err > worst:
            worst, worst_i = err, i
    return GradCheckResult(worst, theta.size - excluded, excluded, worst_i)
