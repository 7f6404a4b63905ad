"""Model parameters, gradient records and checkpoints."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

ARCHS = ("gcn", "sage", "gin")
CHECKPOINT_VERSION = 1


@dataclass(frozen=True, eq=False)
class ModelParams:
    """Weights of an L-layer GNN with an optional node-wise linear head.

    ``layers[l]`` is ``(W,)`` for gcn (F_l x F_{l+1}) and sage (2F_l x F_{l+1},
    self block on top), ``(W_a, W_b)`` for gin's two-layer MLP.  Embeddings are
    row vectors, so a layer computes ``H @ W``.
    """

    arch: str
    layers: tuple[tuple[np.ndarray, ...], ...]
    head: np.ndarray | None = None
    nonlinearity: str = "relu"
    readout: str = "none"
    output: str = "log_softmax"

    def __post_init__(self):
        if self.arch not in ARCHS:
            raise ValueError(f"unknown architecture {self.arch!r}")
        if self.nonlinearity not in ("relu", "linear"):
            raise ValueError(f"unknown nonlinearity {self.nonlinearity!r}")
        if self.readout not in ("none", "mean"):
            raise ValueError(f"unknown readout {self.readout!r}")
        if self.output not in ("log_softmax", "identity"):
            raise ValueError(f"unknown output activation {self.output!r}")
        dims = self.dims
        for l, mats in enumerate(self.layers):
            f_in, f_out = dims[l], dims[l + 1]
            shapes = self.layer_shapes(f_in, f_out)
            if tuple(m.shape for m in mats) != shapes:
                raise ValueError(f"layer {l}: shapes {[m.shape for m in mats]} != {list(shapes)}")
        if self.head is not None and self.head.shape[0] != dims[-1]:
            raise ValueError("head input dim does not match last layer")

    def layer_shapes(self, f_in, f_out):
        if self.arch == "gcn":
            return ((f_in, f_out),)
        if self.arch == "sage":
            return ((2 * f_in, f_out),)
        return ((f_in, f_out), (f_out, f_out))

    @property
    def num_layers(self) -> int:
        return len(self.layers)

    @property
    def dims(self) -> list[int]:
        first = self.layers[0][0].shape[0]
        d = [first // 2 if self.arch == "sage" else first]
        d += [mats[-1].shape[1] if self.arch != "gin" else mats[0].shape[1] for mats in self.layers]
        return d

    def arrays(self) -> list[np.ndarray]:
        out = [m for mats in self.layers for m in mats]
        if self.head is not None:
            out.append(self.head)
        return out

    def with_arrays(self, arrays) -> "ModelParams":
        arrays = list(arrays)
        layers = []
        i = 0
        for mats in self.layers:
            layers.append(tuple(arrays[i : i + len(mats)]))
            i += len(mats)
        head = arrays[i] if self.head is not None else None
        return replace(self, layers=tuple(layers), head=head)

    @property
    def size(self) -> int:
        return sum(a.size for a in self.arrays())


def init_params(arch: str, in_dim: int, hidden: list[int], out_dim: int | None, rng: np.random.Generator,
                nonlinearity: str = "relu", readout: str = "none", output: str = "log_softmax") -> ModelParams:
    """Glorot-uniform initialization.

    ``hidden`` lists the GNN layer widths; ``out_dim`` adds a linear head of
    that width, ``None`` makes the last GNN layer the output.
    """

    def glorot(shape):
        lim = np.sqrt(6.0 / (shape[0] + shape[1]))
        return rng.uniform(-lim, lim, size=shape)

    dims = [in_dim] + list(hidden)
    tmp = ModelParams.__new__(ModelParams)
    object.__setattr__(tmp, "arch", arch)
    layers = tuple(tuple(glorot(s) for s in ModelParams.layer_shapes(tmp, dims[l], dims[l + 1]))
                   for l in range(len(hidden)))
    head = glorot((dims[-1], out_dim)) if out_dim is not None else None
    return ModelParams(arch, layers, head, nonlinearity, readout, output)


@dataclass(eq=False)
class GradientRecord:
    arrays: list[np.ndarray]
    loss: float = float("nan")
    meta: dict = field(default_factory=dict)

    @property
    def norm(self) -> float:
        return float(np.sqrt(sum(float(np.sum(a * a)) for a in self.arrays)))

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays])


def save_checkpoint(path, params: ModelParams, manifest: str | None = None) -> Path:
    """Write an ``.npz`` of little-endian float64 weight matrices plus metadata."""
    path = Path(path)
    meta = {
        "format_version": CHECKPOINT_VERSION,
        "arch": params.arch,
        "layer_sizes": [len(m) for m in params.layers],
        "head": params.head is not None,
        "nonlinearity": params.nonlinearity,
        "readout": params.readout,
        "output": params.output,
        "manifest": manifest,
    }
    arrays = {f"w{i}": np.asarray(a, dtype="<f8") for i, a in enumerate(params.arrays())}
    np.savez(path, meta=np.array(json.dumps(meta, sort_keys=True)), **arrays)
    return path


def load_checkpoint(path) -> tuple[ModelParams, dict]:
    with np.load(path, allow_pickle=False) as z:
        meta = json.loads(str(z["meta"]))
        if meta["format_version"] != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {meta['format_version']}")
        n = sum(meta["layer_sizes"]) + int(meta["head"])
        arrays = [z[f"w{i}"].astype(np.float64) for i in range(n)]
    layers, i = [], 0
    for k in meta["layer_sizes"]:
        layers.append(tuple(arrays[i : i + k]))
        i += k
    head = arrays[i] if meta["head"] else None
    params = ModelParams(meta["arch"], tuple(layers), head, meta["nonlinearity"], meta["readout"], meta["output"])
    return params, meta
