"""Citation-network ingestion.

Cora, CiteSeer and PubMed are converted into the four-file text format read
by :func:`gnnlab.graph.load_graph`.  The raw files are taken from the source
distribution of the ``pgl`` package on PyPI, which bundles the LINQS Cora
release and the Planetoid pickles for CiteSeer and PubMed.
"""

from __future__ import annotations

import io
import json
import pickle
import sys
import tarfile
import urllib.request
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .graph import AttributedGraph, from_edges, load_graph, remap_ids, write_graph

PGL_SDIST = "pgl==2.2.6"
DATA_ROOT = Path(__file__).resolve().parents[2] / "data"
NAMES = ("cora", "citeseer", "pubmed")
# Planetoid "full" split sizes.
N_VAL, N_TEST = 500, 1000


def dataset_paths(name: str, root=None) -> dict[str, Path]:
    d = Path(root or DATA_ROOT) / name
    out = {}
    for key, stem in (("edges", "edges.txt"), ("features", "features.csv"), ("labels", "labels.txt"),
                      ("splits", "splits.txt")):
        p = d / stem
        out[key] = p if p.exists() else d / (stem + ".gz")
    return out


def load_dataset(name: str, root=None) -> AttributedGraph:
    p = dataset_paths(name, root)
    missing = [str(v) for v in p.values() if not v.exists()]
    if missing:
        raise FileNotFoundError(
            f"dataset {name!r} not found ({missing[0]}); run `python -m gnnlab.datasets {name}`"
        )
    return load_graph(p["edges"], p["features"], p["labels"], p["splits"])


def _members(tar: tarfile.TarFile, folder: str) -> dict[str, bytes]:
    out = {}
    for m in tar.getmembers():
        parts = m.name.split("/")
        if m.isfile() and len(parts) == 5 and parts[1:4] == ["pgl", "data", folder]:
            out[parts[4]] = tar.extractfile(m).read()
    return out


def parse_linqs_cora(content: bytes, cites: bytes, split_seed: int = 0) -> AttributedGraph:
    """Raw LINQS Cora (``cora.content`` / ``cora.cites``).

    Publication ids are remapped to 0..N-1 in file order; class names are sorted.
    The raw release carries no split, so a Planetoid-"full"-sized split
    (500 val, 1000 test, rest train) is drawn with ``split_seed``.
    """
    rows = [ln.split("\t") for ln in content.decode().splitlines() if ln.strip()]
    mapping, _ = remap_ids(r[0] for r in rows)
    feats = np.array([[float(x) for x in r[1:-1]] for r in rows])
    classes = sorted({r[-1] for r in rows})
    labels = np.array([classes.index(r[-1]) for r in rows])
    edges = []
    for ln in cites.decode().splitlines():
        if not ln.strip():
            continue
        a, b = ln.split()
        if a in mapping and b in mapping:
            edges.append((mapping[a], mapping[b]))
    n = len(rows)
    perm = np.random.default_rng(split_seed).permutation(n)
    test = np.zeros(n, bool)
    val = np.zeros(n, bool)
    test[perm[:N_TEST]] = True
    val[perm[N_TEST : N_TEST + N_VAL]] = True
    train = ~(test | val)
    return from_edges(n, edges, feats, labels, train, val, test)


def _unpickle(raw: bytes):
    return pickle.load(io.BytesIO(raw), encoding="latin1")


def parse_planetoid(files: dict[str, bytes], name: str) -> AttributedGraph:
    """Planetoid ``ind.<name>.*`` pickles with the "full" split.

    CiteSeer has test indices with no test entry; those nodes get zero
    features and label -1 and are left out of every split.
    """
    get = lambda key: _unpickle(files[f"ind.{name}.{key}"])  # noqa: E731
    x, tx, allx = (sp.csr_matrix(get(k)) for k in ("x", "tx", "allx"))
    y, ty, ally = (np.asarray(get(k)) for k in ("y", "ty", "ally"))
    graph = get("graph")
    test_index = np.array([int(t) for t in files[f"ind.{name}.test.index"].decode().split()])
    test_range = np.sort(test_index)
    lo, hi = int(test_range.min()), int(test_range.max())
    n_test_full = hi - lo + 1
    tx_full = sp.lil_matrix((n_test_full, tx.shape[1]))
    tx_full[test_range - lo, :] = tx
    ty_full = np.zeros((n_test_full, ty.shape[1]))
    ty_full[test_range - lo, :] = ty
    present = np.zeros(n_test_full, bool)
    present[test_range - lo] = True

    feats = sp.vstack([allx, sp.csr_matrix(tx_full)]).tolil()
    labels_1h = np.vstack([ally, ty_full])
    # undo the Planetoid test-block permutation
    feats[test_index, :] = feats[test_range, :]
    labels_1h[test_index, :] = labels_1h[test_range, :]
    n = feats.shape[0]
    labels = labels_1h.argmax(1).astype(np.int64)
    unlabeled = labels_1h.sum(1) == 0
    labels[unlabeled] = -1

    edges = [(int(u), int(v)) for u, nbrs in graph.items() for v in nbrs]
    edges = [(u, v) for u, v in edges if u < n and v < n]
    val = np.zeros(n, bool)
    val[np.arange(y.shape[0], y.shape[0] + N_VAL)] = True
    test = np.zeros(n, bool)
    test[test_index] = True
    train = ~(val | test) & ~unlabeled
    return from_edges(n, edges, feats.toarray(), labels, train, val, test)


def fetch_pgl_sdist(cache_dir) -> Path:
    """Download the pgl source distribution from PyPI (cached)."""
    cache = Path(cache_dir)
    cache.mkdir(parents=True, exist_ok=True)
    name, version = PGL_SDIST.split("==")
    meta = json.load(urllib.request.urlopen(f"https://pypi.org/pypi/{name}/json", timeout=60))
    url = next(u["url"] for u in meta["releases"][version] if u["filename"].endswith(".tar.gz"))
    target = cache / url.rsplit("/", 1)[1]
    if not target.exists():
        urllib.request.urlretrieve(url, target)
    return target


def convert(name: str, sdist: Path, root=None) -> AttributedGraph:
    with tarfile.open(sdist) as tar:
        files = _members(tar, name)
    if name == "cora":
        g = parse_linqs_cora(files["cora.content"], files["cora.cites"])
    else:
        g = parse_planetoid(files, name)
    write_graph(g, Path(root or DATA_ROOT) / name, compress=True)
    return g


def main(argv=None) -> int:
    import argparse

    ap = argparse.ArgumentParser(description="Convert citation datasets into gnnlab's text format.")
    ap.add_argument("names", nargs="*", default=["cora", "citeseer"], choices=NAMES)
    ap.add_argument("--sdist", type=Path, help="local pgl .tar.gz (skips the download)")
    ap.add_argument("--root", type=Path, default=DATA_ROOT)
    ap.add_argument("--cache", type=Path, default=Path.home() / ".cache" / "gnnlab")
    args = ap.parse_args(argv)
    sdist = args.sdist or fetch_pgl_sdist(args.cache)
    for name in args.names:
        g = convert(name, sdist, args.root)
        print(f"{name}: {g.node_count} nodes, {2 * g.num_edges} directed edges, "
              f"{g.num_features} features, {g.num_classes} classes, "
              f"train/val/test {g.train_mask.sum()}/{g.val_mask.sum()}/{g.test_mask.sum()}")
    return 0


def toy_two_class(n: int = 20, seed: int = 0, p_in: float = 0.4, p_out: float = 0.05,
                  noise: float = 0.3) -> AttributedGraph:
    """Two-community graph whose first feature separates the classes linearly.

    Features are ``[+-1 + noise, 1]``; 60/20/20 train/val/test split.
    """
    from .limits import gen_two_community

    rng = np.random.default_rng(seed)
    base = gen_two_community(n, p_in, p_out, rng)
    y = base.labels
    sign = np.where(y == 1, 1.0, -1.0)
    x = np.stack([sign + noise * rng.uniform(-1, 1, n), np.ones(n)], axis=1)
    perm = rng.permutation(n)
    n_tr, n_va = int(round(0.6 * n)), int(round(0.2 * n))
    masks = [np.zeros(n, bool) for _ in range(3)]
    masks[0][perm[:n_tr]] = True
    masks[1][perm[n_tr : n_tr + n_va]] = True
    masks[2][perm[n_tr + n_va :]] = True
    return from_edges(n, base.edge_array(), x, y, *masks)


if __name__ == "__main__":
    sys.exit(main())

