"""Command-line entry point: data generation, training, evaluation, sweeps and cost tables."""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .complexity import cost_model, format_breakdown, slotted_cost_model
from .model import PROFILES, ModelConfig
from .patching import read_assignment, write_assignment
from .tgraph import (TemporalGraph, generate_synthetic, load_temporal_graph, train_val_test_split,
                     write_temporal_graph)
from .trainer import Checkpoint, TrainConfig, evaluate, prepare, train, write_history

log = logging.getLogger("tgtod")

METRICS = ("auc", "ap", "recall_at_k")
PER_SEED_FIELDS = ("param", "value", "seed", "status", "best_epoch") + tuple(f"test_{m}" for m in METRICS)
SUMMARY_FIELDS = ("param", "value", "metric", "mean", "std", "n", "complete")


@dataclass(frozen=True)
class DataSource:
    """Either three CSV files or a synthetic generator spec."""
    edges: str | None = None
    features: str | None = None
    labels: str | None = None
    mode: str = "stationary"
    nodes: int = 300
    timestamps: int = 8
    outlier_rate: float = 0.05
    data_seed: int = 0

    def load(self) -> TemporalGraph:
        if self.edges:
            if not (self.features and self.labels):
                raise ValueError("--edges needs --features and --labels")
            return load_temporal_graph(self.edges, self.features, self.labels, self.mode)
        return generate_synthetic(self.data_seed, self.nodes, self.timestamps, self.outlier_rate,
                                  mode=self.mode)


@dataclass(frozen=True)
class ExperimentSpec:
    source: DataSource
    model: ModelConfig
    train: TrainConfig
    repeats: int = 1
    seeds: tuple[int, ...] | None = None  # default: train.seed, train.seed + 1, ...
    sweep_param: str | None = None
    sweep_values: tuple = ()

    def __post_init__(self):
        if self.repeats < 1:
            raise ValueError("repeats must be >= 1")
        if self.seeds is not None and len(self.seeds) != self.repeats:
            raise ValueError(f"{len(self.seeds)} seeds given for {self.repeats} repeats")
        if self.sweep_param is not None:
            if not self.sweep_values:
                raise ValueError("sweep needs at least one value")
            names = {f.name for f in fields(ModelConfig)} | {f.name for f in fields(TrainConfig)}
            if self.sweep_param not in names:
                raise ValueError(f"unknown sweep parameter {self.sweep_param!r}")

    def run_seeds(self) -> tuple[int, ...]:
        if self.seeds is not None:
            return tuple(self.seeds)
        return tuple(self.train.seed + r for r in range(self.repeats))

    def grid(self) -> list[tuple[str, object, ModelConfig, TrainConfig]]:
        if self.sweep_param is None:
            return [("", "", self.model, self.train)]
        out = []
        model_keys = {f.name for f in fields(ModelConfig)}
        for v in self.sweep_values:
            if self.sweep_param in model_keys:
                out.append((self.sweep_param, v, self.model.updated(**{self.sweep_param: v}), self.train))
            else:
                out.append((self.sweep_param, v, self.model, replace(self.train, **{self.sweep_param: v})))
        return out


@dataclass
class ExperimentResult:
    per_seed: list[dict]
    summary: list[dict]
    complete: bool
    checkpoints: dict = field(default_factory=dict)  # (param value, seed) -> Checkpoint


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def summarize(per_seed: list[dict]) -> list[dict]:
    """Mean and population std per grid point and metric, from per-seed rows only."""
    out = []
    keys = list(dict.fromkeys((r["param"], r["value"]) for r in per_seed))
    for param, value in keys:
        rows = [r for r in per_seed if (r["param"], r["value"]) == (param, value)]
        ok = [r for r in rows if r["status"] == "ok"]
        complete = int(len(ok) == len(rows))
        for m in METRICS:
            vals = [r[f"test_{m}"] for r in ok if r[f"test_{m}"] is not None]
            mean = float(np.mean(vals)) if vals else None
            std = float(np.std(vals)) if vals else None
            out.append({"param": param, "value": value, "metric": m, "mean": mean, "std": std,
                        "n": len(vals), "complete": complete})
    return out


def run_experiment(spec: ExperimentSpec, graph: TemporalGraph | None = None,
                   clusters=None) -> ExperimentResult:
    """Train and test once per (grid point, seed); failures are recorded, not raised."""
    g = graph if graph is not None else spec.source.load()
    per_seed, ckpts = [], {}
    for param, value, mcfg, tcfg in spec.grid():
        for seed in spec.run_seeds():
            row = {"param": param, "value": value, "seed": seed, "status": "ok", "best_epoch": None,
                   **{f"test_{m}": None for m in METRICS}}
            try:
                tc = replace(tcfg, seed=seed)
                split = train_val_test_split(g, seed, tc.split_ratios, tc.split_strategy)
                prep = prepare(g, mcfg, seed=seed, clusters=clusters)
                ck, history = train(g, mcfg, tc, split, prep=prep)
                rep = evaluate(ck, g, split.test)
                row["best_epoch"] = ck.epoch
                for m in METRICS:
                    row[f"test_{m}"] = getattr(rep, m)
                ckpts[(value, seed)] = (ck, history)
            except Exception as exc:  # a failed seed marks the report incomplete
                log.error("seed %s (%s=%s) failed: %s", seed, param or "-", value, exc)
                row["status"] = f"failed: {type(exc).__name__}"
            per_seed.append(row)
    summary = summarize(per_seed)
    return ExperimentResult(per_seed, summary, all(r["status"] == "ok" for r in per_seed), ckpts)


def write_rows(rows: list[dict], columns, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in columns])


def write_plot_data(summary: list[dict], path, metric: str = "auc") -> None:
    """x, y, err series of one metric across sweep values."""
    rows = [{"x": r["value"], "y": r["mean"], "err": r["std"]} for r in summary if r["metric"] == metric]
    write_rows(rows, ("x", "y", "err"), path)


def write_reports(res: ExperimentResult, out: Path, sweep: bool = False) -> None:
    out.mkdir(parents=True, exist_ok=True)
    write_rows(res.per_seed, PER_SEED_FIELDS, out / "per_seed.csv")
    write_rows(res.summary, SUMMARY_FIELDS, out / "summary.csv")
    if sweep:
        write_plot_data(res.summary, out / "plot.csv")


# --- argument handling ---------------------------------------------------------------

def read_config_file(path) -> dict[str, str]:
    """Flat ``key=value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key=value, got {line!r}")
        k, v = line.split("=", 1)
        out[k.strip().replace("-", "_")] = v.strip()
    return out


# flag name -> config key
FLAG_KEYS = {"dt": "interval", "clusters": "num_clusters", "alpha": "alpha", "hidden": "hidden_dim",
             "rf": "random_features", "heads": "heads", "pooling": "stationary_pooling",
             "gcn_layers": "gcn_layers", "epochs": "epochs", "lr": "learning_rate",
             "patience": "patience", "seed": "seed", "mode": "mode", "repeats": "repeats",
             "ratios": "split_ratios"}


def _convert(cls, kv: dict):
    types = {f.name: f.type for f in fields(cls)}
    out = {}
    for k, v in kv.items():
        if k not in types:
            continue
        t = types[k]
        if t == "int":
            out[k] = int(v)
        elif t == "float":
            out[k] = float(v)
        elif t.startswith("tuple"):
            out[k] = tuple(float(x) for x in str(v).split(",")) if isinstance(v, str) else tuple(v)
        else:
            out[k] = str(v)
    return cls(**out)


def resolve_settings(args) -> dict[str, str]:
    """Defaults < profile < config file < explicit flags."""
    kv: dict[str, object] = {}
    if getattr(args, "profile", None):
        kv.update(PROFILES[args.profile])
    if getattr(args, "config", None):
        kv.update(read_config_file(args.config))
    for flag, key in FLAG_KEYS.items():
        v = getattr(args, flag, None)
        if v is not None:
            kv[key] = v
    return kv


def build_spec(args) -> ExperimentSpec:
    kv = resolve_settings(args)
    src = DataSource(edges=args.edges, features=args.features, labels=args.labels,
                     mode=str(kv.get("mode", "stationary")), nodes=args.nodes,
                     timestamps=args.timestamps, outlier_rate=args.outlier_rate,
                     data_seed=args.data_seed)
    mcfg = _convert(ModelConfig, kv)
    tcfg = _convert(TrainConfig, kv)
    sweep_param = getattr(args, "param", None)
    values = ()
    if sweep_param:
        cast = {f.name: f.type for f in fields(ModelConfig)} | {f.name: f.type for f in fields(TrainConfig)}
        conv = float if cast.get(sweep_param) == "float" else int if cast.get(sweep_param) == "int" else str
        values = tuple(conv(v) for v in args.values.split(","))
    repeats = int(kv.get("repeats", 1))
    return ExperimentSpec(src, mcfg, tcfg, repeats=repeats, sweep_param=sweep_param, sweep_values=values)


def _data_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--edges", help="edge CSV: src,dst,timestamp")
    p.add_argument("--features", help="feature CSV")
    p.add_argument("--labels", help="label CSV")
    p.add_argument("--mode", choices=("stationary", "nonstationary"))
    p.add_argument("--nodes", type=int, default=300, help="synthetic nodes when no files are given")
    p.add_argument("--timestamps", type=int, default=8)
    p.add_argument("--outlier-rate", type=float, default=0.05)
    p.add_argument("--data-seed", type=int, default=0, help="synthetic generator seed")


def _model_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--profile", choices=sorted(PROFILES))
    p.add_argument("--config", help="key=value settings file")
    p.add_argument("--dt", type=int, help="time slot width")
    p.add_argument("--clusters", type=int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--hidden", type=int)
    p.add_argument("--rf", type=int, help="random features for linear attention")
    p.add_argument("--heads", type=int)
    p.add_argument("--pooling", choices=("mean", "concat"))
    p.add_argument("--gcn-layers", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--patience", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--repeats", type=int)
    p.add_argument("--ratios", help="train,val,test fractions, e.g. 0.6,0.2,0.2")
    p.add_argument("--out", required=True, help="output directory")


def make_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="tgtod", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train (repeated over seeds) and report test metrics")
    _data_args(p)
    _model_args(p)
    p.add_argument("--clusters-in", help="reuse a node_id,cluster_id assignment")
    p.add_argument("--clusters-out", help="write the computed assignment")

    p = sub.add_parser("eval", help="evaluate a saved checkpoint")
    _data_args(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", choices=("test", "val", "train", "all"), default="test")
    p.add_argument("--seed", type=int, default=0, help="split seed")
    p.add_argument("--ratios", default="0.6,0.2,0.2", help="split fractions used in training")
    p.add_argument("--out", help="write metrics CSV here")

    p = sub.add_parser("sweep", help="grid over one parameter, e.g. --param alpha --values 0.1,0.5,0.9")
    _data_args(p)
    _model_args(p)
    p.add_argument("--param", required=True)
    p.add_argument("--values", required=True)

    p = sub.add_parser("complexity", help="attention cost table")
    p.add_argument("--nodes", type=int, required=True)
    p.add_argument("--timestamps", type=int, required=True)
    p.add_argument("--clusters", type=int, required=True)
    p.add_argument("--dt", type=int, help="also print the slotted variant")

    p = sub.add_parser("gen", help="write a synthetic dataset as CSV files")
    p.add_argument("--nodes", type=int, default=300)
    p.add_argument("--timestamps", type=int, default=8)
    p.add_argument("--outlier-rate", type=float, default=0.05)
    p.add_argument("--mode", choices=("stationary", "nonstationary"), default="stationary")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    return ap


def _cmd_train(args) -> int:
    spec = build_spec(args)
    g = spec.source.load()
    clusters = None
    if args.clusters_in:
        pairs, counts = g.aggregated_edges()
        clusters = read_assignment(args.clusters_in, g.num_nodes, pairs, counts)
    res = run_experiment(spec, g, clusters)
    out = Path(args.out)
    write_reports(res, out)
    for (_, seed), (ck, history) in res.checkpoints.items():
        ck.save(out / f"checkpoint-seed{seed}")
        write_history(history, out / f"history-seed{seed}.csv")
    if args.clusters_out:
        ca = clusters or prepare(g, spec.model, seed=spec.run_seeds()[0]).clusters
        write_assignment(ca, args.clusters_out)
    _print_summary(res)
    return 0 if res.complete else 1


def _cmd_sweep(args) -> int:
    spec = build_spec(args)
    res = run_experiment(spec)
    write_reports(res, Path(args.out), sweep=True)
    _print_summary(res)
    return 0 if res.complete else 1


def _print_summary(res: ExperimentResult) -> None:
    for r in res.summary:
        label = f"{r['param']}={r['value']} " if r["param"] else ""
        mean = "n/a" if r["mean"] is None else f"{r['mean']:.4f}"
        std = "n/a" if r["std"] is None else f"{r['std']:.4f}"
        print(f"{label}{r['metric']}: {mean} +/- {std} (n={r['n']})")
    if not res.complete:
        print("WARNING: some seeds failed; the report is incomplete")


def _cmd_eval(args) -> int:
    ck = Checkpoint.load(args.checkpoint)
    mode = args.mode or ck.config.mode
    src = DataSource(args.edges, args.features, args.labels, mode, args.nodes, args.timestamps,
                     args.outlier_rate, args.data_seed)
    g = src.load()
    if args.split == "all":
        mask = g.labels.keys
    else:
        ratios = tuple(float(x) for x in args.ratios.split(","))
        mask = getattr(train_val_test_split(g, args.seed, ratios), args.split)
    rep = evaluate(ck, g, mask)
    row = {"split": args.split, **rep.row()}
    for m in METRICS:
        print(f"{m}: {'n/a' if row[m] is None else format(row[m], '.4f')}")
    if args.out:
        write_rows([row], ("split",) + METRICS, args.out)
    return 0


def _cmd_complexity(args) -> int:
    print(format_breakdown(cost_model(args.nodes, args.timestamps, args.clusters)))
    if args.dt:
        print(format_breakdown(slotted_cost_model(args.nodes, args.timestamps, args.clusters, args.dt)))
    return 0


def _cmd_gen(args) -> int:
    g = generate_synthetic(args.seed, args.nodes, args.timestamps, args.outlier_rate, mode=args.mode)
    for p in write_temporal_graph(g, args.out):
        print(p)
    return 0


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    handler = {"train": _cmd_train, "sweep": _cmd_sweep, "eval": _cmd_eval,
               "complexity": _cmd_complexity, "gen": _cmd_gen}[args.command]
    try:
        return handler(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
