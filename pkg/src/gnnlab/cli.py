"""Command-line entry point: ``gnnlab {train,census,gradcheck,compare,gen} CONFIG``."""

from __future__ import annotations

import argparse
import contextlib
import csv
import datetime as dt
import json
import logging
import platform
import sys
import traceback
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__
from .config import SCHEMA_VERSION, ConfigError, RunConfig, checksums, load_config, load_data
from .engine import NegSampleObjective, NLLObjective, finite_diff_check
from .graph import from_edges, write_graph
from .limits import (
    er_convergence,
    neighborhood_census,
    write_census_tsv,
    write_convergence_csv,
)
from .model import init_params, save_checkpoint
from .samplers import full_computational_graph
from .trainer import limit_gradient_check, train_full, train_on_subgraphs

log = logging.getLogger("gnnlab")

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2


def init_rng(seed: int) -> np.random.Generator:
    """Parameter-initialization stream, independent of the trainer's streams."""
    return np.random.default_rng(np.random.SeedSequence(seed).spawn(5)[4])


def build_params(cfg: RunConfig, g, seed: int):
    m = cfg["model"]
    nll = cfg["train"]["loss"] == "nll"
    head = max(g.num_classes, 1) if (m["head"] and nll) else None
    return init_params(m["arch"], g.num_features, m["hidden"], head, init_rng(seed), m["nonlinearity"],
                       m["readout"], "log_softmax" if nll else "identity")


class Manifest:
    """JSON run record, written before any long computation and updated at the end."""

    def __init__(self, out: Path, command: str, cfg: RunConfig):
        self.path = out / "manifest.json"
        self.doc = {
            "schema_version": SCHEMA_VERSION,
            "command": command,
            "status": "running",
            "code_version": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "seed": cfg["seed"],
            "deterministic": cfg["deterministic"],
            "started": dt.datetime.now(dt.timezone.utc).isoformat(timespec="seconds"),
            "config": cfg.to_dict(),
            "dataset_checksums": {},
            "choices": {
                "init": "glorot-uniform",
                "fastgcn_draws": "without replacement",
                "shared_initialization": True,
                "weighted_node_sampler": "iid with replacement",
            },
            "results": {},
        }
        self.write()

    def write(self):
        tmp = self.path.with_suffix(".tmp")
        tmp.write_text(json.dumps(self.doc, indent=2, sort_keys=True, default=_jsonable) + "\n")
        tmp.replace(self.path)

    def finish(self, status="complete", **results):
        self.doc["status"] = status
        self.doc["finished"] = dt.datetime.now(dt.timezone.utc).isoformat(timespec="seconds")
        self.doc["results"].update(results)
        self.write()


def _jsonable(x):
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating,)):
        return float(x)
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, Path):
        return str(x)
    raise TypeError(type(x))


# ------------------------------------------------------------------ commands


def cmd_train(cfg: RunConfig, out: Path, manifest: Manifest) -> int:
    g = load_data(cfg)
    manifest.doc["dataset_checksums"] = checksums(cfg, g)
    manifest.write()
    params0 = build_params(cfg, g, cfg["seed"])
    tc = cfg.train_config()
    fn = train_on_subgraphs if cfg["train"]["mode"] == "subgraphs" else train_full
    params, metrics = fn(g, params0, tc)
    metrics.to_csv(out / "metrics.csv")
    save_checkpoint(out / "checkpoint.npz", params, "manifest.json")
    if metrics.rows and tc.loss == "nll":
        from .plotting import plot_accuracy_curves

        plot_accuracy_curves({"train": metrics.column("train_acc"), "test": metrics.column("test_acc")},
                             out / "accuracy.png", ylabel="accuracy")
    manifest.finish(stop_epoch=metrics.stop_epoch, stop_reason=metrics.stop_reason,
                    init_grad_norm=metrics.init_grad_norm, draw_epochs=metrics.draw_epochs,
                    final_test_acc=metrics.final("test_acc"), wall_seconds=round(metrics.wall_seconds, 3))
    return EXIT_OK


def cmd_census(cfg: RunConfig, out: Path, manifest: Manifest) -> int:
    c = cfg["census"]
    results = {}
    if cfg["data"]:
        g = load_data(cfg)
        manifest.doc["dataset_checksums"] = checksums(cfg, g)
        manifest.write()
        census = neighborhood_census(g, c["k"], c["attributed"], c["cap"], np.random.default_rng(cfg["seed"]),
                                     c["bits"])
        write_census_tsv(census, out / "census.tsv")
        results.update(census_signatures=len(census.probs), census_samples=census.samples,
                       census_approximate=census.approximate)
    if c["sweep"] is not None:
        sw = {"seeds": 5, "max_deg": 30, **c["sweep"]}
        rows = er_convergence(sw["lam"], sw["sizes"], range(sw["seeds"]), rng_seed=cfg["seed"], k=c["k"],
                              max_deg=sw["max_deg"])
        write_convergence_csv(rows, out / "convergence.csv")
        from .plotting import plot_tv_vs_n

        plot_tv_vs_n(rows, out / "convergence.png", title=f"ER(lam={sw['lam']}) depth-{c['k']} census")
        means = {n: float(np.mean([r["tv_distance"] for r in rows if r["n"] == n])) for n in sw["sizes"]}
        results["mean_tv"] = means
        vals = [means[n] for n in sorted(means)]
        results["non_increasing"] = all(a >= b for a, b in zip(vals, vals[1:]))
    if not results:
        raise ConfigError("census needs a data section or a census.sweep")
    manifest.finish(**results)
    return EXIT_OK


def gradcheck_instance(nodes: int, rng: np.random.Generator, n_features: int, n_classes: int):
    edges = [(i, j) for i in range(nodes) for j in range(i + 1, nodes) if rng.random() < 3.0 / nodes]
    edges += [(i, (i + 1) % nodes) for i in range(nodes)]  # no isolated nodes
    x = rng.normal(size=(nodes, n_features))
    y = rng.integers(0, n_classes, nodes)
    return from_edges(nodes, edges, x, y)


def run_gradcheck(gc: dict, seed: int, corrupt: bool = False) -> list[dict]:
    rng = np.random.default_rng(seed)
    rows = []
    perturb = None
    if corrupt:
        def perturb(flat):
            flat[0] += 1e-2 * (1.0 + abs(flat[0]))
            return flat
    for arch in gc["archs"]:
        for loss in gc["losses"]:
            # the linear fixture is only exact under a loss linear in the outputs
            for fixture in ("generic", "linear") if loss == "nll" else ("generic",):
                g = gradcheck_instance(gc["nodes"], rng, gc["features"], gc["classes"])
                nl = "linear" if fixture == "linear" else "relu"
                hidden = [gc["hidden"]] * gc["layers"]
                if loss == "nll":
                    out_kind = "identity" if fixture == "linear" else "log_softmax"
                    params = init_params(arch, gc["features"], hidden, gc["classes"], rng, nl, "none", out_kind)
                    seeds = np.sort(rng.choice(gc["nodes"], size=min(6, gc["nodes"]), replace=False))
                    obj = NLLObjective(np.arange(seeds.size), g.labels[seeds])
                else:
                    params = init_params(arch, gc["features"], hidden, None, rng, "relu", "none", "identity")
                    seeds = np.arange(gc["nodes"])
                    a = rng.choice(gc["nodes"], size=4, replace=False)
                    obj = NegSampleObjective(a, rng.integers(0, gc["nodes"], 4), rng.integers(0, gc["nodes"], (4, 2)))
                cg = full_computational_graph(g, seeds, gc["layers"])
                res = finite_diff_check(params, cg, g, obj, h=gc["h"], corrupt=perturb)
                tol = gc["linear_tolerance"] if fixture == "linear" else gc["tolerance"]
                rows.append({"arch": arch, "loss": loss, "fixture": fixture, "params": params.size,
                             "max_rel_error": res.max_rel_error, "checked": res.checked, "excluded": res.excluded,
                             "tolerance": tol, "passed": res.max_rel_error <= tol})
    return rows


def cmd_gradcheck(cfg: RunConfig, out: Path, manifest: Manifest) -> int:
    gc = cfg["gradcheck"]
    rows = run_gradcheck(gc, cfg["seed"], corrupt=gc["corrupt"])
    with (out / "gradcheck.csv").open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)
    for r in rows:
        print(f"{r['arch']:5s} {r['loss']:9s} {r['fixture']:8s} max_rel_error={r['max_rel_error']:.3e} "
              f"tol={r['tolerance']:.0e} {'ok' if r['passed'] else 'FAIL'}")
    ok = all(r["passed"] for r in rows)
    manifest.finish("complete" if ok else "failed", passed=ok,
                    max_rel_error=max(r["max_rel_error"] for r in rows))
    return EXIT_OK if ok else EXIT_RUNTIME


def run_compare(g, cfg: RunConfig, seeds, out: Path | None = None) -> dict:
    """Full-graph baseline and subgraph training from the same initialization, per seed."""
    rows, curves = [], {}
    for s in seeds:
        params0 = build_params(cfg, g, s)
        tc = cfg.train_config(seed=s)
        pf, mf = train_full(g, params0, tc)
        ps, ms = train_on_subgraphs(g, params0, tc)
        gf = limit_gradient_check(pf, g, tc)
        gs = limit_gradient_check(ps, g, tc)
        if out is not None:
            mf.to_csv(out / f"full_seed{s}.csv")
            ms.to_csv(out / f"subgraph_seed{s}.csv")
        curves[s] = (mf.column("test_acc"), ms.column("test_acc"))
        acc_f, acc_s = mf.final("test_acc"), ms.final("test_acc")
        rows.append({"seed": s, "full_test_acc": acc_f, "subgraph_test_acc": acc_s, "gap": acc_f - acc_s,
                     "full_grad_norm": gf, "subgraph_grad_norm": gs, "grad_norm_ratio": gs / gf if gf > 0 else
                     (1.0 if gs == 0 else float("inf")), "full_epochs": mf.stop_epoch,
                     "subgraph_epochs": ms.stop_epoch})
    med = {k: float(np.median([r[k] for r in rows])) for k in
           ("full_test_acc", "subgraph_test_acc", "gap", "grad_norm_ratio")}
    return {"rows": rows, "median": med, "curves": curves}


def cmd_compare(cfg: RunConfig, out: Path, manifest: Manifest) -> int:
    g = load_data(cfg)
    manifest.doc["dataset_checksums"] = checksums(cfg, g)
    manifest.write()
    cmp = cfg["compare"]
    rep = run_compare(g, cfg, cmp["seeds"], out)
    with (out / "compare.csv").open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rep["rows"][0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rep["rows"])
    from .plotting import plot_accuracy_curves

    curves = {}
    for s, (f, sub) in rep["curves"].items():
        curves[f"full (seed {s})"] = f
        curves[f"subgraph (seed {s})"] = sub
    plot_accuracy_curves(curves, out / "compare_accuracy.png",
                         title=f"n={cfg['train']['subgraph_size']}, interval={cfg['train']['resample_interval']}")
    med = rep["median"]
    gap_ok = abs(med["gap"]) <= cmp["max_gap"]
    r = med["grad_norm_ratio"]
    ratio_ok = 1.0 / cmp["max_ratio"] <= r <= cmp["max_ratio"]
    print(f"median test accuracy: full {med['full_test_acc']:.4f}  subgraph {med['subgraph_test_acc']:.4f}  "
          f"gap {med['gap']:+.4f} ({'ok' if gap_ok else 'exceeds'} {cmp['max_gap']})")
    print(f"median grad-norm ratio subgraph/full: {r:.3f} ({'ok' if ratio_ok else 'outside'} x{cmp['max_ratio']})")
    manifest.finish(median=med, gap_within=gap_ok, ratio_within=ratio_ok)
    return EXIT_OK


def cmd_gen(cfg: RunConfig, out: Path, manifest: Manifest) -> int:
    if "generator" not in cfg["data"]:
        raise ConfigError("gen needs data.generator")
    g = load_data(cfg)
    paths = write_graph(g, out / "graph")
    manifest.finish(node_count=g.node_count, num_edges=g.num_edges, fingerprint=g.fingerprint,
                    files=[str(p) for p in paths.values()])
    return EXIT_OK


COMMANDS = {"train": cmd_train, "census": cmd_census, "gradcheck": cmd_gradcheck, "compare": cmd_compare,
            "gen": cmd_gen}


def make_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gnnlab", description=__doc__)
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("config", type=Path, help="JSON run configuration")
    ap.add_argument("--seed", type=int, help="override the config seed")
    ap.add_argument("--deterministic", action="store_true", help="single-threaded BLAS, no wall-clock columns")
    ap.add_argument("--out", type=Path, help="output directory (default: config 'out')")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config).with_overrides(args.seed, args.deterministic, args.out)
        out = cfg.out_dir
        out.mkdir(parents=True, exist_ok=True)
    except ConfigError as e:
        print(f"gnnlab: {e}", file=sys.stderr)
        return EXIT_CONFIG
    manifest = Manifest(out, args.command, cfg)
    limit = threadpool_limits(1) if cfg["deterministic"] else contextlib.nullcontext()
    try:
        with limit:
            return COMMANDS[args.command](cfg, out, manifest)
    except ConfigError as e:
        manifest.finish("config_error", error=str(e))
        print(f"gnnlab: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as e:  # noqa: BLE001 - any runtime failure becomes exit 1
        manifest.finish("failed", error=f"{type(e).__name__}: {e}")
        print(f"gnnlab: {type(e).__name__}: {e}", file=sys.stderr)
        log.debug("%s", traceback.format_exc())
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
