"""Rooted-ball signatures, neighborhood censuses and local-convergence diagnostics."""

from __future__ import annotations

import csv
import hashlib
import math
from collections import Counter
from dataclasses import dataclass, field, replace
from itertools import combinations
from pathlib import Path

import numpy as np
from scipy import stats

from .graph import AttributedGraph, RootedBall, bfs_ball, csr_from_edges, from_edges

EXACT_LIMIT = 16


# ------------------------------------------------------------ canonical forms


def _local_adjacency(ball: RootedBall) -> list[list[int]]:
    return [ball.neighbors[ball.offsets[i] : ball.offsets[i + 1]].tolist() for i in range(len(ball.offsets) - 1)]


def _rank(keys) -> list[int]:
    """Replace each key by its rank among the distinct keys (a canonical relabeling)."""
    order = {k: i for i, k in enumerate(sorted(set(keys)))}
    return [order[k] for k in keys]


def _refine(adj, colors):
    colors = list(colors)
    n_cls = len(set(colors))
    while True:
        keys = [(colors[v], tuple(sorted(colors[u] for u in adj[v]))) for v in range(len(adj))]
        new = _rank(keys)
        m = len(set(new))
        if m == n_cls:
            return new
        colors, n_cls = new, m


def _twin_classes(adj, cell):
    """Group cell members with identical open or closed neighborhoods."""
    reps = []
    sets = [frozenset(a) for a in adj]
    for v in cell:
        key_open = sets[v]
        key_closed = sets[v] | {v}
        hit = None
        for r in reps:
            if sets[r] == key_open or (sets[r] | {r}) == key_closed:
                hit = r
                break
        if hit is None:
            reps.append(v)
    return reps


def canonical_form(adj, init_colors) -> tuple:
    """Exact canonical encoding of a vertex-colored graph by individualization-refinement.

    Two colored graphs get the same encoding iff they are isomorphic by a
    color-preserving map.  Exponential in the worst case, so only used on
    small balls.
    """
    init = _rank(init_colors)
    raw = list(init_colors)
    best = None

    def encode(colors):
        pos = colors  # discrete: colors are a permutation 0..n-1
        edges = sorted((min(pos[u], pos[v]), max(pos[u], pos[v])) for u in range(len(adj)) for v in adj[u] if u < v)
        lab = [None] * len(adj)
        for v in range(len(adj)):
            lab[pos[v]] = raw[v]
        return (tuple(lab), tuple(edges))

    def search(colors):
        nonlocal best
        colors = _refine(adj, colors)
        cells = Counter(colors)
        if len(cells) == len(adj):
            enc = encode(colors)
            if best is None or enc < best:
                best = enc
            return
        target = min(c for c, k in cells.items() if k > 1)
        cell = [v for v in range(len(adj)) if colors[v] == target]
        for v in _twin_classes(adj, cell):
            # individualize v: it keeps the cell's color, the rest move just above it
            nxt = [2 * c + (1 if (c == target and u != v) else 0) + (2 if c > target else 0)
                   for u, c in enumerate(colors)]
            search(_rank(nxt))

    search(init)
    return best


def quantize_features(features, bits: int = 4) -> np.ndarray:
    """Map each feature column to ``2**bits`` equal-width bins over its observed range."""
    f = np.asarray(features, dtype=np.float64)
    lo, hi = f.min(axis=0), f.max(axis=0)
    span = np.where(hi > lo, hi - lo, 1.0)
    q = np.floor((f - lo) / span * (2**bits)).astype(np.int64)
    return np.clip(q, 0, 2**bits - 1)


def _initial_colors(ball: RootedBall, attributed: bool, bits: int):
    depth = ball.depth_of.tolist()
    if not attributed or ball.features is None:
        return depth
    f = np.asarray(ball.features)
    q = f if np.issubdtype(f.dtype, np.integer) else quantize_features(f, bits)
    return [(d, tuple(row)) for d, row in zip(depth, q.tolist())]


def _digest(obj) -> int:
    return int.from_bytes(hashlib.blake2b(repr(obj).encode(), digest_size=8).digest(), "big")


def wl_hash(adj, init_colors, rounds: int) -> int:
    """Order-invariant color-refinement hash (sound, not complete)."""
    colors = [_digest(c) for c in init_colors]
    for _ in range(rounds):
        colors = [_digest((colors[v], tuple(sorted(colors[u] for u in adj[v])))) for v in range(len(adj))]
    return _digest((tuple(sorted(colors)), colors[0]))


@dataclass(frozen=True)
class BallSignature:
    radius: int
    hash: int
    exact: tuple | None = None

    @property
    def is_exact(self) -> bool:
        return self.exact is not None

    @property
    def hex(self) -> str:
        return f"{self.hash:016x}"


def ball_signature(ball: RootedBall, attributed: bool = False, bits: int = 4,
                   exact_limit: int = EXACT_LIMIT) -> BallSignature:
    """Exact canonical encoding for small balls, refinement hash otherwise.

    Colors are seeded by distance from the root, so the root is always
    distinguishable and isomorphism is rooted isomorphism.
    """
    adj = _local_adjacency(ball)
    init = _initial_colors(ball, attributed, bits)
    if len(adj) <= exact_limit:
        enc = canonical_form(adj, init)
        return BallSignature(ball.radius, _digest(("x", ball.radius, enc)), enc)
    return BallSignature(ball.radius, _digest(("wl", ball.radius, wl_hash(adj, init, max(ball.radius, 1) + 1))))


# ------------------------------------------------------------------ census


@dataclass
class CensusDistribution:
    radius: int
    probs: dict[int, float]
    samples: int
    approximate: bool = False
    labels: dict[int, str] = field(default_factory=dict)

    def __post_init__(self):
        tot = sum(self.probs.values())
        if self.probs and abs(tot - 1.0) > 1e-9:
            raise ValueError(f"census probabilities sum to {tot}")
        if any(p < 0 for p in self.probs.values()):
            raise ValueError("negative census probability")


def _from_counts(radius, counts: Counter, approx=False) -> CensusDistribution:
    n = sum(counts.values())
    return CensusDistribution(radius, {k: c / n for k, c in sorted(counts.items())}, n, approx)


def neighborhood_census(g: AttributedGraph, k: int, attributed: bool = False, cap: int | None = None,
                        rng: np.random.Generator | None = None, bits: int = 4) -> CensusDistribution:
    """Distribution of k-ball signatures over all roots, or over ``cap`` uniform roots."""
    if k < 0:
        raise ValueError("radius must be >= 0")
    if cap is None or g.node_count <= cap:
        roots = range(g.node_count)
    else:
        rng = rng if rng is not None else np.random.default_rng()
        roots = rng.integers(0, g.node_count, size=cap).tolist()
    feats = quantize_features(g.features, bits) if attributed else None
    counts = Counter()
    approx = False
    for v in roots:
        ball = bfs_ball(g, v, k)
        if feats is not None:
            ball = replace(ball, features=feats[ball.parent_ids])
        sig = ball_signature(ball, attributed, bits)
        approx |= not sig.is_exact
        counts[sig.hash] += 1
    return _from_counts(k, counts, approx)


def tv_distance(c1: CensusDistribution, c2: CensusDistribution) -> float:
    if c1.radius != c2.radius:
        raise ValueError(f"census radii differ ({c1.radius} vs {c2.radius})")
    keys = set(c1.probs) | set(c2.probs)
    return 0.5 * math.fsum(abs(c1.probs.get(s, 0.0) - c2.probs.get(s, 0.0)) for s in keys)


# --------------------------------------------------------------------- d_loc


@dataclass(frozen=True)
class LocalDistance:
    value: float
    first_discrepancy: int | None
    exact: bool
    k_max: int

    @property
    def bounded(self) -> bool:
        """No discrepancy up to k_max: the true distance is only known to be <= 1/(1+k_max)."""
        return self.first_discrepancy is None

    @property
    def bound(self) -> float:
        return self.value if not self.bounded else 1.0 / (1 + self.k_max)


def balls_isomorphic(b1: RootedBall, b2: RootedBall, attributed=False, bits=4) -> tuple[bool, bool]:
    """(isomorphic?, decided exactly?)."""
    n1, n2 = len(b1.parent_ids), len(b2.parent_ids)
    if n1 != n2 or len(b1.neighbors) != len(b2.neighbors):
        return False, True
    s1 = ball_signature(b1, attributed, bits)
    s2 = ball_signature(b2, attributed, bits)
    return s1 == s2, s1.is_exact and s2.is_exact


def d_loc(b1: RootedBall, b2: RootedBall, k_max: int, attributed=False, bits=4) -> LocalDistance:
    """``1/(1+k*)`` for the smallest radius ``k*`` at which the balls differ, else 0."""
    if b1.radius < k_max or b2.radius < k_max:
        raise ValueError("balls must be extracted with radius >= k_max")
    exact = True
    for k in range(k_max + 1):
        same, ex = balls_isomorphic(b1.truncate(k), b2.truncate(k), attributed, bits)
        exact &= ex
        if not same:
            return LocalDistance(1.0 / (1 + k), k, exact, k_max)
    return LocalDistance(0.0, None, exact, k_max)


# ---------------------------------------------------------------- generators


def _pairs_from_index(idx, n):
    """Decode linear indices of the strict upper triangle (row-major) into (i, j)."""
    rows = np.arange(n, dtype=np.int64)
    starts = rows * n - rows * (rows + 1) // 2
    i = np.searchsorted(starts, idx, side="right") - 1
    return i, idx - starts[i] + i + 1


def _graph(n, src, dst, labels=None):
    off, nb = csr_from_edges(n, np.asarray(src, np.int64), np.asarray(dst, np.int64))
    edges = np.stack([np.repeat(np.arange(n), np.diff(off)), nb], axis=1)
    edges = edges[edges[:, 0] < edges[:, 1]]
    return from_edges(n, edges, labels=labels)


def gen_erdos_renyi(n: int, lam: float, rng: np.random.Generator) -> AttributedGraph:
    """G(n, p) with p = lam / n, each pair independently."""
    if n < 1 or lam < 0 or lam > n:
        raise ValueError("need n >= 1 and 0 <= lam <= n")
    total = n * (n - 1) // 2
    m = int(rng.binomial(total, lam / n)) if total else 0
    chosen = np.unique(rng.integers(0, total, size=m)) if m else np.zeros(0, np.int64)
    while chosen.size < m:
        extra = rng.integers(0, total, size=m - chosen.size)
        chosen = np.unique(np.concatenate([chosen, extra]))
    i, j = _pairs_from_index(chosen, n)
    return _graph(n, i, j)


def gen_config_model(degrees, rng: np.random.Generator) -> AttributedGraph:
    """Erased configuration model: uniform stub matching, then drop loops and multi-edges."""
    degrees = np.asarray(degrees, dtype=np.int64)
    if np.any(degrees < 0):
        raise ValueError("negative degree")
    if degrees.sum() % 2:
        raise ValueError("degree sequence has an odd stub sum")
    stubs = rng.permutation(np.repeat(np.arange(degrees.size), degrees))
    return _graph(degrees.size, stubs[0::2], stubs[1::2])


def gen_pref_attachment(n: int, m: int, rng: np.random.Generator) -> AttributedGraph:
    """Each arriving node attaches to ``min(m, t)`` distinct earlier nodes, chosen proportional to degree."""
    if n < 1 or m < 1:
        raise ValueError("need n >= 1 and m >= 1")
    pool: list[int] = []  # node v appears deg(v) times
    src, dst = [], []
    for t in range(1, n):
        want = min(m, t)
        targets: set[int] = set()
        while len(targets) < want:
            # after the first arrival every earlier node has degree >= 1
            if pool:
                targets.add(pool[int(rng.integers(len(pool)))])
            else:
                targets.add(int(rng.integers(t)))
        for u in sorted(targets):
            src.append(t)
            dst.append(u)
            pool += [t, u]
    return _graph(n, src, dst)


def gen_two_community(n: int, p_in: float, p_out: float, rng: np.random.Generator) -> AttributedGraph:
    """Two equal blocks (labels 0/1) with in- and cross-block edge probabilities."""
    labels = (np.arange(n) >= n // 2).astype(np.int64)
    iu, ju = np.triu_indices(n, 1)
    p = np.where(labels[iu] == labels[ju], p_in, p_out)
    keep = rng.random(p.size) < p
    return _graph(n, iu[keep], ju[keep], labels=labels)


def gen_regular_ring(n: int, d: int) -> AttributedGraph:
    """Circulant graph joining each node to its d/2 nearest neighbors on each side."""
    if d % 2 or d >= n:
        raise ValueError("need even d < n")
    src = np.repeat(np.arange(n), d // 2)
    dst = (src + np.tile(np.arange(1, d // 2 + 1), n)) % n
    return _graph(n, src, dst)


# -------------------------------------------------------------- references


def star_ball(k: int) -> RootedBall:
    """Depth-1 ball of a root with k leaves and no leaf-leaf edges."""
    g = from_edges(k + 1, [(0, i) for i in range(1, k + 1)])
    return bfs_ball(g, 0, 1)


def poisson_depth1_reference(lam: float, max_deg: int = 30) -> CensusDistribution:
    """Depth-1 census of the Poisson(lam) Galton-Watson root: stars with Poisson degree."""
    if lam < 0:
        raise ValueError("lam must be >= 0")
    pmf = stats.poisson.pmf(np.arange(max_deg), lam) if lam > 0 else np.eye(1, max_deg)[0]
    probs = {}
    for k in range(max_deg):
        probs[ball_signature(star_ball(k)).hash] = float(pmf[k])
    probs[ball_signature(star_ball(max_deg)).hash] = max(0.0, 1.0 - math.fsum(pmf))
    tot = math.fsum(probs.values())
    return CensusDistribution(1, {k: p / tot for k, p in probs.items()}, 0)


def galton_watson_census(lam: float, k: int, samples: int, rng: np.random.Generator,
                         max_nodes: int = 5000) -> tuple[CensusDistribution, float]:
    """Monte-Carlo census of depth-k Poisson Galton-Watson trees.

    Returns the census and the worst-case binomial standard error over its
    support, as a sampling-error report.
    """
    counts = Counter()
    approx = False
    for _ in range(samples):
        src, dst = [], []
        frontier, n = [0], 1
        for _depth in range(k):
            nxt = []
            for v in frontier:
                c = int(rng.poisson(lam))
                for _ in range(c):
                    src.append(v)
                    dst.append(n)
                    nxt.append(n)
                    n += 1
            frontier = nxt
            if n > max_nodes:
                raise RuntimeError("Galton-Watson tree exceeded max_nodes")
        g = from_edges(n, list(zip(src, dst)))
        sig = ball_signature(bfs_ball(g, 0, k))
        approx |= not sig.is_exact
        counts[sig.hash] += 1
    c = _from_counts(k, counts, approx)
    se = max(math.sqrt(p * (1 - p) / samples) for p in c.probs.values())
    return c, se


def er_convergence(lam: float, sizes, seeds, rng_seed: int = 0, k: int = 1, max_deg: int = 30) -> list[dict]:
    """TV distance of ER(n, lam) depth-k structural censuses to the Poisson reference."""
    if k != 1:
        raise ValueError("analytic reference only available at k = 1")
    ref = poisson_depth1_reference(lam, max_deg)
    rows = []
    for n in sizes:
        for s in seeds:
            rng = np.random.default_rng([rng_seed, int(n), int(s)])
            g = gen_erdos_renyi(int(n), lam, rng)
            rows.append({"n": int(n), "seed": int(s), "k": k,
                         "tv_distance": tv_distance(neighborhood_census(g, k), ref)})
    return rows


# ------------------------------------------------------- almost-local estimators


def _sigmoid(x):
    return np.exp(-np.logaddexp(0.0, -x))


def negsample_estimate(g: AttributedGraph, embed, trials: int, rng: np.random.Generator,
                       neg_sampler=None) -> tuple[float, float]:
    """Monte-Carlo mean of sigmoid(z_v . z_u), v uniform, u from ``neg_sampler``.

    ``embed`` is an (n, d) array or a callable returning one.  Returns the
    estimate and its standard error.
    """
    z = np.asarray(embed(g) if callable(embed) else embed, dtype=np.float64)
    v = rng.integers(0, g.node_count, size=trials)
    u = neg_sampler(rng, trials) if neg_sampler is not None else rng.integers(0, g.node_count, size=trials)
    s = _sigmoid(np.einsum("ij,ij->i", z[v], z[u]))
    se = float(s.std(ddof=1) / math.sqrt(trials)) if trials > 1 else float("nan")
    return float(s.mean()), se


def degree_normalized_estimate(g: AttributedGraph, values) -> float:
    """``(1/n) sum_v g(v) deg(v) / mean_deg``, computed as ``sum g*deg / sum deg``."""
    deg = g.degrees.astype(np.float64)
    if deg.sum() == 0:
        raise ValueError("degree-normalized estimate needs at least one edge")
    vals = np.broadcast_to(np.asarray(values(g) if callable(values) else values, dtype=np.float64), deg.shape)
    return float(np.dot(vals, deg) / deg.sum())


def ball_max_degree(g: AttributedGraph, k: int) -> np.ndarray:
    """Largest degree inside each node's k-ball."""
    m = g.degrees.astype(np.int64)
    owner = np.repeat(np.arange(g.node_count), g.degrees)
    for _ in range(k):
        nb = np.zeros(g.node_count, np.int64)
        np.maximum.at(nb, owner, m[g.neighbors])
        m = np.maximum(m, nb)
    return m


def uniform_integrability_profile(g: AttributedGraph, k: int, deltas) -> dict[float, float]:
    """Fraction of nodes whose k-ball contains a node of degree above each threshold."""
    m = ball_max_degree(g, k)
    return {d: float(np.mean(m > d)) for d in deltas}


def _balls_disjoint(g, roots, K):
    seen: set[int] = set()
    for r in roots:
        ids = set(bfs_ball(g, int(r), K).parent_ids.tolist())
        if ids & seen:
            return False
        seen |= ids
    return True


def disjoint_ball_probability(g: AttributedGraph, batch: int, K: int, trials: int | None,
                              rng: np.random.Generator | None = None) -> tuple[float, float]:
    """Probability that K-balls of a uniform batch (no replacement) are pairwise disjoint.

    With ``trials=None`` every batch is enumerated.  Returns that probability
    and the bound ``batch^2 Delta^K / n`` on the failure probability.
    """
    n = g.node_count
    delta = int(g.degrees.max()) if n else 0
    bound = batch**2 * float(delta) ** K / n
    if batch <= 1:
        return 1.0, bound
    if trials is None:
        hits = tot = 0
        for roots in combinations(range(n), batch):
            hits += _balls_disjoint(g, roots, K)
            tot += 1
        return hits / tot, bound
    hits = sum(_balls_disjoint(g, rng.choice(n, size=batch, replace=False), K) for _ in range(trials))
    return hits / trials, bound


# ------------------------------------------------------------------- outputs


def write_census_tsv(census: CensusDistribution, path) -> Path:
    path = Path(path)
    with path.open("w") as fh:
        for h, p in sorted(census.probs.items(), key=lambda kv: (-kv[1], kv[0])):
            fh.write(f"{h:016x}\t{p:.12g}\n")
    return path


def write_convergence_csv(rows, path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["n", "seed", "k", "tv_distance"])
        w.writeheader()
        for r in rows:
            w.writerow({**r, "tv_distance": f"{r['tv_distance']:.12g}"})
    return path
