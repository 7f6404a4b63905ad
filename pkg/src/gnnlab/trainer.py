"""Training loops: full-graph minibatch training and training on sampled subgraphs."""

from __future__ import annotations

import contextlib
import csv
import hashlib
import io
import math
import time
from dataclasses import dataclass, field

import numpy as np
from threadpoolctl import threadpool_limits

from .engine import (
    AdamState,
    NegSampleObjective,
    NLLObjective,
    adam_step,
    aggregation_operators,
    backward,
    forward,
    random_walk_positives,
    sample_negatives,
    sgd_step,
)
from .graph import AttributedGraph, Subgraph
from .model import ModelParams
from .samplers import (
    SamplerSpec,
    build_computational_graph,
    draw_subgraph,
    sample_minibatch,
    whole_graph_cg,
)

METRIC_COLUMNS = ["epoch", "subgraph_id", "train_loss", "train_acc", "val_acc", "test_acc",
                  "grad_norm", "grad_norm_ema", "wall_ms"]


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.01
    optimizer: str = "adam"
    epsilon: float = 0.0
    max_epochs: int = 100
    subgraph_size: int | None = None
    resample_interval: int = 1
    sampler: SamplerSpec = field(default_factory=SamplerSpec)
    loss: str = "nll"
    neg_q: int = 1
    seed: int = 0
    deterministic: bool = False
    retry_limit: int = 16
    ema_decay: float = 0.9
    evaluate: bool = True

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError("learning rate must be > 0")
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")
        if self.max_epochs < 0:
            raise ValueError("max_epochs must be >= 0")
        if self.resample_interval < 1:
            raise ValueError("resample_interval must be >= 1")
        if self.subgraph_size is not None and self.subgraph_size < 1:
            raise ValueError("subgraph_size must be >= 1")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.loss not in ("nll", "negsample"):
            raise ValueError(f"unknown loss {self.loss!r}")
        if self.neg_q < 1:
            raise ValueError("neg_q must be >= 1")
        if self.retry_limit < 1:
            raise ValueError("retry_limit must be >= 1")


@dataclass
class RunMetrics:
    rows: list[dict] = field(default_factory=list)
    stop_epoch: int = 0
    stop_reason: str = ""
    init_grad_norm: float = float("nan")
    draw_epochs: list[int] = field(default_factory=list)
    wall_seconds: float = 0.0

    def column(self, name) -> np.ndarray:
        return np.array([r[name] for r in self.rows], dtype=float)

    def final(self, name, default=float("nan")) -> float:
        return float(self.rows[-1][name]) if self.rows else default

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(METRIC_COLUMNS)
        for r in self.rows:
            w.writerow([_fmt(r[c]) for c in METRIC_COLUMNS])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text


def _fmt(x):
    if isinstance(x, float):
        return "nan" if math.isnan(x) else repr(x)
    return str(x)


def graph_id(g: AttributedGraph) -> str:
    """Subgraph id, with the full graph labeled like its all-node subgraph."""
    if isinstance(g, Subgraph):
        return g.subgraph_id
    return hashlib.blake2b(np.arange(g.node_count, dtype=np.int64).tobytes(), digest_size=6).hexdigest()


class _Evaluator:
    """Full-graph propagation with cached aggregation operators."""

    def __init__(self, g: AttributedGraph, num_layers: int):
        self.g = g
        self.cg = whole_graph_cg(g, num_layers)
        self._ops = {}

    def ops(self, arch):
        if arch not in self._ops:
            self._ops[arch] = aggregation_operators(arch, self.cg, self.g)
        return self._ops[arch]

    def output(self, params):
        return forward(params, self.cg, self.g, ops=self.ops(params.arch))

    def gradient(self, params, nodes=None):
        nodes = self.g.train_nodes if nodes is None else nodes
        obj = NLLObjective(nodes, self.g.labels[nodes])
        return backward(params, self.cg, self.g, obj, ops=self.ops(params.arch))


def _accuracy_and_loss(out, labels, nodes):
    if nodes.size == 0:
        raise ValueError("empty evaluation mask")
    y = labels[nodes]
    if np.any(y < 0):
        raise ValueError("evaluation mask contains unlabeled nodes")
    pred = np.argmax(out[nodes], axis=1)  # ties go to the lowest class index
    return float(np.mean(pred == y)), float(-np.mean(out[nodes, y]))


def evaluate(params: ModelParams, g: AttributedGraph, mask) -> tuple[float, float]:
    """Accuracy and mean NLL on ``mask`` from a full, unsampled forward pass."""
    nodes = np.flatnonzero(np.asarray(mask, dtype=bool)) if np.asarray(mask).dtype == bool else np.asarray(mask)
    out = _Evaluator(g, params.num_layers).output(params)
    return _accuracy_and_loss(out, g.labels, nodes)


def _streams(seed):
    ss = np.random.SeedSequence(seed)
    return [np.random.default_rng(s) for s in ss.spawn(4)]


def _step_objective(graph, seeds, nu, cfg: TrainConfig, rng_neg):
    """CG seed set plus the objective over its output rows, scaled by 1/(|B| nu)."""
    b = seeds.size
    coef = 1.0 / (b * nu)
    if cfg.loss == "nll":
        return seeds, NLLObjective(np.arange(b), graph.labels[seeds], coef)
    pos = random_walk_positives(graph, seeds, rng_neg)
    neg = sample_negatives(graph.node_count, b, cfg.neg_q, rng_neg)
    nodes = np.unique(np.concatenate([seeds, pos, neg.ravel()]))
    rows = lambda x: np.searchsorted(nodes, x)  # noqa: E731
    return nodes, NegSampleObjective(rows(seeds), rows(pos), rows(neg), coef)


def _init_objective(graph, cfg, rng_neg):
    nodes = graph.train_nodes
    return _step_objective(graph, nodes, np.ones(nodes.size), cfg, rng_neg)


def _run(source: AttributedGraph, params0: ModelParams, cfg: TrainConfig, subgraphs: bool):
    metrics = RunMetrics()
    t_start = time.perf_counter()
    rng_sub, rng_batch, rng_cg, rng_neg = _streams(cfg.seed)
    spec = cfg.sampler
    if subgraphs:
        if cfg.subgraph_size is None:
            raise ValueError("training on subgraphs needs subgraph_size")
        spec = SamplerSpec(**{**spec.__dict__, "subgraph_sampler": "bfs", "subgraph_size": cfg.subgraph_size})
    L = params0.num_layers
    evaluator = _Evaluator(source, L) if cfg.evaluate and cfg.loss == "nll" else None
    masks = [np.flatnonzero(m) for m in (source.train_mask, source.val_mask, source.test_mask)]

    def draw(epoch):
        for _ in range(cfg.retry_limit):
            g = draw_subgraph(source, spec, rng_sub)
            if g.train_nodes.size:
                metrics.draw_epochs.append(epoch)
                return g
        raise RuntimeError(f"{cfg.retry_limit} consecutive subgraphs had no train nodes; "
                           f"increase subgraph_size (now {cfg.subgraph_size})")

    if source.train_nodes.size == 0:
        raise ValueError("graph has no train nodes")
    graph = draw(0) if subgraphs else source
    params = params0
    adam = None

    seeds, obj = _init_objective(graph, cfg, rng_neg)
    cg = build_computational_graph(graph, seeds, SamplerSpec(), L, rng_cg)
    ema = backward(params, cg, graph, obj).norm
    metrics.init_grad_norm = ema
    if ema <= cfg.epsilon:
        metrics.stop_reason = "threshold at init"
        metrics.wall_seconds = time.perf_counter() - t_start
        return params, metrics

    metrics.stop_reason = "max_epochs"
    for epoch in range(cfg.max_epochs):
        t0 = time.perf_counter()
        if subgraphs and epoch > 0 and epoch % cfg.resample_interval == 0:
            graph = draw(epoch)
        steps = math.ceil(graph.train_nodes.size / spec.batch_size)
        losses, norms = [], []
        for _ in range(steps):
            batch, nu = sample_minibatch(graph, spec, rng_batch)
            seeds, obj = _step_objective(graph, batch, nu, cfg, rng_neg)
            cg = build_computational_graph(graph, seeds, spec, L, rng_cg)
            grad = backward(params, cg, graph, obj)
            if cfg.optimizer == "adam":
                params, adam = adam_step(params, grad, adam, cfg.lr)
            else:
                params = sgd_step(params, grad, cfg.lr)
            norms.append(grad.norm)
            losses.append(grad.loss)
            ema = cfg.ema_decay * ema + (1 - cfg.ema_decay) * grad.norm
        row = {"epoch": epoch, "subgraph_id": graph_id(graph), "train_loss": float(np.mean(losses)),
               "grad_norm": float(np.mean(norms)), "grad_norm_ema": float(ema)}
        if evaluator is not None:
            out = evaluator.output(params)
            row["train_acc"], row["val_acc"], row["test_acc"] = (
                _accuracy_and_loss(out, source.labels, m)[0] if m.size else float("nan") for m in masks)
        else:
            row["train_acc"] = row["val_acc"] = row["test_acc"] = float("nan")
        row["wall_ms"] = 0 if cfg.deterministic else int(round((time.perf_counter() - t0) * 1000))
        metrics.rows.append(row)
        metrics.stop_epoch = epoch + 1
        if ema <= cfg.epsilon:
            metrics.stop_reason = "threshold"
            break
    metrics.wall_seconds = time.perf_counter() - t_start
    return params, metrics


def _limited(cfg: TrainConfig):
    return threadpool_limits(1) if cfg.deterministic else contextlib.nullcontext()


def train_full(g: AttributedGraph, params0: ModelParams, cfg: TrainConfig):
    """Minibatch training on the whole graph."""
    with _limited(cfg):
        return _run(g, params0, cfg, subgraphs=False)


def train_on_subgraphs(source: AttributedGraph, params0: ModelParams, cfg: TrainConfig):
    """Minibatch training on fixed-size BFS subgraphs redrawn every ``resample_interval`` epochs."""
    with _limited(cfg):
        return _run(source, params0, cfg, subgraphs=True)


def limit_gradient_check(params: ModelParams, reference: AttributedGraph, cfg: TrainConfig | None = None) -> float:
    """Norm of the full-batch NLL gradient over the reference graph's train nodes."""
    with _limited(cfg) if cfg is not None else contextlib.nullcontext():
        return _Evaluator(reference, params.num_layers).gradient(params).norm


def stop_epochs(metrics: RunMetrics, eps_list) -> list[int | None]:
    """First epoch count at which the smoothed norm is <= eps (None if censored).

    Stopping is a pure function of the trajectory, so one run at the
    smallest threshold answers every larger one.
    """
    ema = metrics.column("grad_norm_ema")
    out = []
    for eps in eps_list:
        if metrics.init_grad_norm <= eps:
            out.append(0)
            continue
        hit = np.flatnonzero(ema <= eps)
        out.append(int(hit[0]) + 1 if hit.size else None)
    return out


def epsilon_scaling_report(g: AttributedGraph, make_params, cfg: TrainConfig, eps_list, seeds,
                           subgraphs: bool = False) -> dict:
    """Stop epoch t* per threshold across seeds, plus a log-log slope.

    ``make_params(seed)`` builds the initial parameters of each run.
    """
    eps_list = [float(e) for e in eps_list]
    if any(a <= b for a, b in zip(eps_list, eps_list[1:])):
        raise ValueError("epsilon list must be strictly decreasing")
    per_seed = {}
    for s in seeds:
        run_cfg = TrainConfig(**{**cfg.__dict__, "seed": int(s), "epsilon": eps_list[-1], "evaluate": False})
        fn = train_on_subgraphs if subgraphs else train_full
        _, m = fn(g, make_params(int(s)), run_cfg)
        per_seed[int(s)] = stop_epochs(m, eps_list)
    rows = []
    for i, eps in enumerate(eps_list):
        ts = [v[i] for v in per_seed.values() if v[i] is not None]
        rows.append({"epsilon": eps, "mean_t": float(np.mean(ts)) if ts else float("nan"),
                     "std_t": float(np.std(ts)) if ts else float("nan"),
                     "censored": sum(v[i] is None for v in per_seed.values())})
    monotone = all(
        all((a is not None and (b is None or a <= b)) or (a is None and b is None)
            for a, b in zip(v, v[1:]))
        for v in per_seed.values()
    )
    ok = [(r["epsilon"], r["mean_t"]) for r in rows if r["censored"] == 0 and r["mean_t"] > 0]
    slope = float("nan")
    if len(ok) >= 2:
        x = np.log([1.0 / e for e, _ in ok])
        y = np.log([t for _, t in ok])
        slope = float(np.polyfit(x, y, 1)[0])
    return {"rows": rows, "per_seed": per_seed, "monotone": monotone, "slope": slope}
