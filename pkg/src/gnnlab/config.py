"""Run configuration: JSON schema, defaults and graph construction."""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import jsonschema
import numpy as np

from .graph import AttributedGraph, from_edges, load_graph
from .samplers import SamplerSpec
from .trainer import TrainConfig

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    """Invalid configuration (maps to exit code 2)."""


_int = {"type": "integer"}
_num = {"type": "number"}
_pos_int = {"type": "integer", "minimum": 1}
_bool = {"type": "boolean"}


def _obj(props, required=()):
    return {"type": "object", "properties": props, "required": list(required), "additionalProperties": False}


GENERATOR_SCHEMA = _obj({
    "kind": {"enum": ["erdos_renyi", "config_model", "pref_attachment", "two_community", "regular_ring",
                      "edge_list", "toy_two_class"]},
    "n": _pos_int,
    "lam": _num,
    "degrees": {"type": "array", "items": {"type": "integer", "minimum": 0}},
    "m": _pos_int,
    "d": _pos_int,
    "p_in": _num,
    "p_out": _num,
    "edges": {"type": "array", "items": {"type": "array", "items": _int, "minItems": 2, "maxItems": 2}},
    "seed": _int,
}, required=["kind"])

SCHEMA = _obj({
    "schema_version": {"const": SCHEMA_VERSION},
    "seed": _int,
    "deterministic": _bool,
    "out": {"type": "string"},
    "data": _obj({
        "dataset": {"type": "string"},
        "root": {"type": "string"},
        "paths": _obj({k: {"type": "string"} for k in ("edges", "features", "labels", "splits")},
                      required=["edges", "features", "labels", "splits"]),
        "generator": GENERATOR_SCHEMA,
    }),
    "model": _obj({
        "arch": {"enum": ["gcn", "sage", "gin"]},
        "hidden": {"type": "array", "items": _pos_int, "minItems": 1},
        "head": {"type": "boolean"},
        "nonlinearity": {"enum": ["relu", "linear"]},
        "readout": {"enum": ["none", "mean"]},
    }),
    "train": _obj({
        "mode": {"enum": ["full", "subgraphs"]},
        "lr": {"type": "number", "exclusiveMinimum": 0},
        "optimizer": {"enum": ["sgd", "adam"]},
        "epsilon": {"type": "number", "minimum": 0},
        "max_epochs": {"type": "integer", "minimum": 0},
        "subgraph_size": {"type": ["integer", "null"], "minimum": 1},
        "resample_interval": _pos_int,
        "loss": {"enum": ["nll", "negsample"]},
        "neg_q": _pos_int,
        "retry_limit": _pos_int,
        "ema_decay": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
    }),
    "sampler": _obj({
        "node_sampler": {"enum": ["uniform", "weighted"]},
        "weight_source": {"enum": ["degree", "uniform"]},
        "batch_size": _pos_int,
        "comp_sampler": {"enum": ["full", "sage", "fastgcn", "shadow"]},
        "fanouts": {"type": "array", "items": _pos_int},
        "shadow_depth": {"type": ["integer", "null"], "minimum": 1},
        "shadow_inner": {"enum": ["full", "sage", "fastgcn"]},
    }),
    "census": _obj({
        "k": {"type": "integer", "minimum": 0},
        "attributed": _bool,
        "cap": {"type": ["integer", "null"], "minimum": 1},
        "bits": _pos_int,
        "sweep": {"oneOf": [{"type": "null"}, _obj({
            "lam": {"type": "number", "exclusiveMinimum": 0},
            "sizes": {"type": "array", "items": _pos_int, "minItems": 1},
            "seeds": _pos_int,
            "max_deg": _pos_int,
        })]},
    }),
    "gradcheck": _obj({
        "nodes": _pos_int,
        "layers": _pos_int,
        "hidden": _pos_int,
        "features": _pos_int,
        "classes": _pos_int,
        "h": {"type": "number", "exclusiveMinimum": 0},
        "archs": {"type": "array", "items": {"enum": ["gcn", "sage", "gin"]}, "minItems": 1},
        "losses": {"type": "array", "items": {"enum": ["nll", "negsample"]}, "minItems": 1},
        "tolerance": {"type": "number", "exclusiveMinimum": 0},
        "linear_tolerance": {"type": "number", "exclusiveMinimum": 0},
        "corrupt": _bool,
    }),
    "compare": _obj({
        "seeds": {"type": "array", "items": _int, "minItems": 1},
        "max_gap": {"type": "number", "minimum": 0},
        "max_ratio": {"type": "number", "minimum": 1},
    }),
}, required=["schema_version"])

DEFAULTS = {
    "seed": 0,
    "deterministic": False,
    "out": "runs/out",
    "data": {},
    "model": {"arch": "gcn", "hidden": [64, 32], "head": True, "nonlinearity": "relu", "readout": "none"},
    "train": {"mode": "full", "lr": 0.01, "optimizer": "adam", "epsilon": 0.0, "max_epochs": 100,
              "subgraph_size": None, "resample_interval": 1, "loss": "nll", "neg_q": 1, "retry_limit": 16,
              "ema_decay": 0.9},
    "sampler": {"node_sampler": "uniform", "weight_source": "degree", "batch_size": 32, "comp_sampler": "full",
                "fanouts": [], "shadow_depth": None, "shadow_inner": "full"},
    "census": {"k": 1, "attributed": False, "cap": None, "bits": 4, "sweep": None},
    "gradcheck": {"nodes": 20, "layers": 2, "hidden": 4, "features": 4, "classes": 3, "h": 1e-4,
                  "archs": ["gcn", "sage", "gin"], "losses": ["nll", "negsample"], "tolerance": 1e-4,
                  "linear_tolerance": 1e-7, "corrupt": False},
    "compare": {"seeds": [0], "max_gap": 0.05, "max_ratio": 3.0},
}


def _merge(defaults, given):
    out = copy.deepcopy(defaults)
    for k, v in given.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and out[k]:
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


@dataclass(frozen=True, eq=False)
class RunConfig:
    """A validated configuration with every default filled in."""

    doc: dict
    base_dir: Path = Path(".")

    def __eq__(self, other):
        return isinstance(other, RunConfig) and self.doc == other.doc

    def __getitem__(self, key):
        return self.doc[key]

    def to_dict(self) -> dict:
        return copy.deepcopy(self.doc)

    def with_overrides(self, seed=None, deterministic=None, out=None) -> "RunConfig":
        doc = self.to_dict()
        if seed is not None:
            doc["seed"] = int(seed)
        if deterministic:
            doc["deterministic"] = True
        if out is not None:
            doc["out"] = str(out)
        return RunConfig(doc, self.base_dir)

    @property
    def out_dir(self) -> Path:
        p = Path(self.doc["out"])
        return p if p.is_absolute() else Path.cwd() / p

    def sampler_spec(self) -> SamplerSpec:
        s = self.doc["sampler"]
        return SamplerSpec(**{**s, "fanouts": tuple(s["fanouts"])})

    def train_config(self, seed=None) -> TrainConfig:
        t = dict(self.doc["train"])
        t.pop("mode")
        return TrainConfig(**t, sampler=self.sampler_spec(), seed=self.doc["seed"] if seed is None else seed,
                           deterministic=self.doc["deterministic"])

    def resolve(self, path: str) -> Path:
        p = Path(path)
        return p if p.is_absolute() else self.base_dir / p


def parse_config(doc: dict, base_dir=".") -> RunConfig:
    try:
        jsonschema.validate(doc, SCHEMA)
    except jsonschema.ValidationError as e:
        where = "/".join(str(x) for x in e.absolute_path) or "<root>"
        raise ConfigError(f"config error at {where}: {e.message}") from None
    full = _merge(DEFAULTS, {k: v for k, v in doc.items()})
    cfg = RunConfig(full, Path(base_dir))
    data = full["data"]
    if sum(k in data for k in ("dataset", "paths", "generator")) > 1:
        raise ConfigError("data: give only one of dataset, paths, generator")
    if "paths" in data:
        for k, p in data["paths"].items():
            if not cfg.resolve(p).exists():
                raise ConfigError(f"data.paths.{k}: file not found: {p}")
    if "dataset" in data:
        from .datasets import dataset_paths

        root = cfg.resolve(data["root"]) if "root" in data else None
        missing = [str(p) for p in dataset_paths(data["dataset"], root).values() if not p.exists()]
        if missing:
            raise ConfigError(f"data.dataset {data['dataset']!r}: file not found: {missing[0]}")
    try:
        cfg.train_config()
    except ValueError as e:
        raise ConfigError(f"config error: {e}") from None
    return cfg


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"config is not valid JSON: {e}") from None
    return parse_config(doc, path.parent)


# ------------------------------------------------------------------- graphs


def build_generator(spec: dict, seed: int) -> AttributedGraph:
    from . import limits
    from .datasets import toy_two_class

    rng = np.random.default_rng(spec.get("seed", seed))
    kind = spec["kind"]

    def need(*keys):
        for k in keys:
            if k not in spec:
                raise ConfigError(f"generator {kind!r} needs {k!r}")
        return [spec[k] for k in keys]

    if kind == "erdos_renyi":
        n, lam = need("n", "lam")
        return limits.gen_erdos_renyi(n, lam, rng)
    if kind == "config_model":
        return limits.gen_config_model(need("degrees")[0], rng)
    if kind == "pref_attachment":
        n, m = need("n", "m")
        return limits.gen_pref_attachment(n, m, rng)
    if kind == "two_community":
        n, p_in, p_out = need("n", "p_in", "p_out")
        return limits.gen_two_community(n, p_in, p_out, rng)
    if kind == "regular_ring":
        n, d = need("n", "d")
        return limits.gen_regular_ring(n, d)
    if kind == "toy_two_class":
        return toy_two_class(spec.get("n", 20), spec.get("seed", seed))
    n, edges = need("n", "edges")
    return from_edges(n, edges)


def data_files(cfg: RunConfig) -> dict[str, Path]:
    data = cfg["data"]
    if "paths" in data:
        return {k: cfg.resolve(v) for k, v in data["paths"].items()}
    if "dataset" in data:
        from .datasets import dataset_paths

        return dataset_paths(data["dataset"], cfg.resolve(data["root"]) if "root" in data else None)
    return {}


def load_data(cfg: RunConfig) -> AttributedGraph:
    data = cfg["data"]
    if "generator" in data:
        return build_generator(data["generator"], cfg["seed"])
    files = data_files(cfg)
    if not files:
        raise ConfigError("config has no data section")
    return load_graph(files["edges"], files["features"], files["labels"], files["splits"])


def checksums(cfg: RunConfig, g: AttributedGraph | None = None) -> dict[str, str]:
    out = {}
    for k, p in data_files(cfg).items():
        out[p.name] = hashlib.sha256(p.read_bytes()).hexdigest()
    if g is not None:
        out["graph_fingerprint"] = g.fingerprint
    return out
