import json

import numpy as np
import pytest

from gnnlab.model import ModelParams, init_params, load_checkpoint, save_checkpoint


@pytest.mark.parametrize("arch", ["gcn", "sage", "gin"])
def test_init_shapes(arch, rng):
    p = init_params(arch, 5, [4, 3], 2, rng)
    assert p.dims == [5, 4, 3]
    assert p.num_layers == 2
    assert p.head.shape == (3, 2)
    first = p.layers[0][0].shape
    assert first == ((10, 4) if arch == "sage" else (5, 4))
    assert all(np.all(np.isfinite(a)) for a in p.arrays())


def test_glorot_bounds(rng):
    p = init_params("gcn", 30, [20], None, rng)
    lim = np.sqrt(6 / 50)
    assert np.max(np.abs(p.layers[0][0])) <= lim


def test_init_is_seeded():
    a = init_params("gin", 3, [4], 2, np.random.default_rng(1))
    b = init_params("gin", 3, [4], 2, np.random.default_rng(1))
    assert all(np.array_equal(x, y) for x, y in zip(a.arrays(), b.arrays()))


def test_with_arrays_roundtrip(rng):
    p = init_params("gin", 3, [4, 2], 2, rng)
    q = p.with_arrays([a * 2 for a in p.arrays()])
    assert q.arch == "gin" and q.size == p.size
    assert np.array_equal(q.head, 2 * p.head)


@pytest.mark.parametrize("arch", ["gcn", "sage", "gin"])
def test_checkpoint_roundtrip(arch, rng, tmp_path):
    p = init_params(arch, 4, [3, 3], None, rng, readout="mean", output="identity")
    path = save_checkpoint(tmp_path / "ck.npz", p, "manifest.json")
    q, meta = load_checkpoint(path)
    assert meta["manifest"] == "manifest.json"
    assert (q.arch, q.readout, q.output, q.head) == (arch, "mean", "identity", None)
    for a, b in zip(p.arrays(), q.arrays()):
        assert np.array_equal(a, b)


def test_checkpoint_arrays_are_little_endian_f8(rng, tmp_path):
    p = init_params("gcn", 2, [2], 2, rng)
    save_checkpoint(tmp_path / "ck.npz", p)
    with np.load(tmp_path / "ck.npz") as z:
        assert z["w0"].dtype.str == "<f8"


def test_checkpoint_version_mismatch(rng, tmp_path):
    p = init_params("gcn", 2, [2], 2, rng)
    save_checkpoint(tmp_path / "ck.npz", p)
    with np.load(tmp_path / "ck.npz") as z:
        meta = json.loads(str(z["meta"]))
        arrays = {k: z[k] for k in z.files if k != "meta"}
    meta["format_version"] = 99
    np.savez(tmp_path / "bad.npz", meta=np.array(json.dumps(meta)), **arrays)
    with pytest.raises(ValueError, match="version"):
        load_checkpoint(tmp_path / "bad.npz")


def test_head_dim_checked():
    with pytest.raises(ValueError, match="head"):
        ModelParams("gcn", ((np.ones((2, 3)),),), head=np.ones((4, 2)))
