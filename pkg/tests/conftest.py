import itertools

import numpy as np
import pytest

from gnnlab.graph import from_edges


def path_graph(n):
    return from_edges(n, [(i, i + 1) for i in range(n - 1)])


def star_graph(leaves):
    return from_edges(leaves + 1, [(0, i) for i in range(1, leaves + 1)])


def cycle_graph(n):
    return from_edges(n, [(i, (i + 1) % n) for i in range(n)])


def random_graph(n, p, rng, features=3, classes=3):
    edges = [(i, j) for i in range(n) for j in range(i + 1, n) if rng.random() < p]
    x = rng.normal(size=(n, features))
    y = rng.integers(0, classes, n)
    train = np.ones(n, bool)
    return from_edges(n, edges, x, y, train)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def triangle():
    return from_edges(3, [(0, 1), (1, 2), (0, 2)])


@pytest.fixture
def fixture8():
    """The fixed 8-node labeled graph used by the estimator checks."""
    edges = [(0, 1), (0, 2), (1, 2), (2, 3), (3, 4), (4, 5), (5, 6), (6, 7), (4, 7), (1, 5)]
    r = np.random.default_rng(8)
    x = r.normal(size=(8, 3))
    y = np.array([0, 1, 0, 1, 2, 2, 0, 1])
    return from_edges(8, edges, x, y, np.ones(8, bool))


# ------------------------------------------------ brute-force rooted isomorphism


def ball_edges(n, edges, root, k):
    """Brute-force k-ball: (size, edge set) relabeled so the root is 0."""
    dist = {root: 0}
    frontier = [root]
    adj = {v: set() for v in range(n)}
    for a, b in edges:
        adj[a].add(b)
        adj[b].add(a)
    for d in range(1, k + 1):
        nxt = []
        for v in frontier:
            for u in adj[v]:
                if u not in dist:
                    dist[u] = d
                    nxt.append(u)
        frontier = nxt
    keep = [root] + sorted(v for v in dist if v != root)
    idx = {v: i for i, v in enumerate(keep)}
    es = {frozenset((idx[a], idx[b])) for a, b in edges if a in idx and b in idx}
    return len(keep), es


def rooted_isomorphic(b1, b2):
    """Try every root-fixing bijection."""
    (n1, e1), (n2, e2) = b1, b2
    if n1 != n2 or len(e1) != len(e2):
        return False
    for perm in itertools.permutations(range(1, n1)):
        p = (0,) + perm
        if all(frozenset((p[a], p[b])) in e2 for a, b in map(tuple, e1)):
            return True
    return False


def connected_rooted_graphs(max_n):
    """One representative per rooted-isomorphism class of connected graphs, root 0."""
    reps = []
    for n in range(1, max_n + 1):
        pairs = list(itertools.combinations(range(n), 2))
        for mask in range(1 << len(pairs)):
            edges = [pairs[i] for i in range(len(pairs)) if mask >> i & 1]
            b = ball_edges(n, edges, 0, n)
            if b[0] != n:
                continue
            if not any(rooted_isomorphic(b, r[2]) for r in reps if r[0] == n):
                reps.append((n, edges, b))
    return [(n, edges) for n, edges, _ in reps]


# ------------------------------------------------------- acceptance reporting

ACCEPTANCE_LINES = []


def report(name, ok, detail=""):
    line = f"{'PASS' if ok else 'FAIL'}  {name}" + (f"  [{detail}]" if detail else "")
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
