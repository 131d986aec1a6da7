"""End-to-end training over cluster columns of the patch grid, and evaluation."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as tn
from .metrics import EvalReport, evaluate_scores
from .model import TGTOD, ModelConfig, PatchEmbeddingTable, loss_nonstationary, loss_stationary
from .patching import (ClusterAssignment, PatchGrid, SlotIndex, build_patches, cluster_graph,
                       slot_time)
from .tensor import NumericFault
from .tgraph import SplitMasks, TemporalGraph, train_val_test_split

log = logging.getLogger(__name__)

HISTORY_FIELDS = ("epoch", "split", "loss", "auc", "ap", "recall_at_k")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    learning_rate: float = 5e-3
    patience: int = 50
    eval_every: int = 1
    seed: int = 0
    batch_order: str = "sequential"
    split_ratios: tuple[float, float, float] = (0.6, 0.2, 0.2)
    split_strategy: str = "random"

    def __post_init__(self):
        # epochs == 0 means evaluate the initialization only
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.patience > max(self.epochs, 1) or self.patience < 1:
            object.__setattr__(self, "patience", max(1, min(self.patience, max(self.epochs, 1))))
        if self.eval_every < 1:
            raise ValueError("eval_every must be >= 1")
        if self.batch_order not in ("sequential", "shuffled"):
            raise ValueError(f"unknown batch order {self.batch_order!r}")


class TrainingDiverged(NumericFault):
    def __init__(self, msg: str, checkpoint: "Checkpoint", history: list[dict]):
        super().__init__(msg)
        self.checkpoint = checkpoint
        self.history = history


@dataclass
class Checkpoint:
    state: dict[str, np.ndarray]
    config: ModelConfig
    num_slots: int
    seed: int
    assignment: np.ndarray
    epoch: int = 0

    def model(self) -> TGTOD:
        m = TGTOD(self.config, self.config.feature_dim, self.num_slots, seed=self.seed)
        m.load_state_dict(self.state)
        return m

    def save(self, directory) -> None:
        directory = Path(directory)
        self.model().save(directory)
        with open(directory / "clusters.csv", "w") as fh:
            fh.write("node_id,cluster_id\n")
            for i, c in enumerate(self.assignment):
                fh.write(f"{i},{c}\n")
        with open(directory / "config.txt", "a") as fh:
            fh.write(f"epoch={self.epoch}\n")

    @classmethod
    def load(cls, directory) -> "Checkpoint":
        directory = Path(directory)
        m = TGTOD.load(directory)
        rows = (directory / "clusters.csv").read_text().splitlines()[1:]
        assign = np.array([int(r.split(",")[1]) for r in rows if r], dtype=np.int64)
        kv = dict(l.split("=", 1) for l in (directory / "config.txt").read_text().splitlines() if "=" in l)
        return cls(m.state_dict(), m.cfg, m.num_slots, m.seed, assign, int(kv.get("epoch", 0)))


@dataclass
class Prepared:
    """Slotted, clustered and patched view of a graph, plus label lookups."""
    graph: TemporalGraph
    slots: SlotIndex
    clusters: ClusterAssignment
    grid: PatchGrid
    local: np.ndarray = field(init=False)  # node -> row inside its cluster
    labels: np.ndarray = field(init=False)  # (N,) or (N, S); -1 where unlabeled

    def __post_init__(self):
        n = self.graph.num_nodes
        self.local = np.empty(n, dtype=np.int64)
        for m in self.clusters.cluster_members:
            self.local[m] = np.arange(len(m))
        lab = self.graph.labels
        if self.graph.mode == "stationary":
            self.labels = np.full(n, -1, dtype=np.int64)
            self.labels[lab.keys] = lab.values
        else:
            self.labels = np.full((n, self.slots.num_slots), -1, dtype=np.int64)
            keys, vals = self.slots.slot_entries(lab.keys, lab.values)
            self.labels[keys[:, 0], keys[:, 1] - 1] = vals

    def entries(self, keys) -> np.ndarray:
        """Label keys as node ids (stationary) or (node, 0-based slot) pairs."""
        if self.graph.mode == "stationary":
            return np.asarray(keys, dtype=np.int64).reshape(-1)
        ks = self.slots.slot_entries(keys)
        return np.c_[ks[:, 0], ks[:, 1] - 1]

    def cluster_mask(self, entries: np.ndarray, c: int) -> np.ndarray:
        """Local mask of ``entries`` inside cluster ``c``."""
        a = self.clusters.assignment
        if self.graph.mode == "stationary":
            return self.local[entries[a[entries] == c]]
        sel = entries[a[entries[:, 0]] == c]
        return np.c_[self.local[sel[:, 0]], sel[:, 1]]

    def gather(self, per_cluster: list[np.ndarray], entries: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Scores and labels for ``entries`` from per-cluster score arrays."""
        a = self.clusters.assignment
        if self.graph.mode == "stationary":
            scores = np.array([per_cluster[a[i]][self.local[i]] for i in entries])
            return scores, self.labels[entries]
        scores = np.array([per_cluster[a[i]][self.local[i], s] for i, s in entries])
        return scores, self.labels[entries[:, 0], entries[:, 1]]


def prepare(g: TemporalGraph, cfg: ModelConfig, seed: int = 0,
            clusters: ClusterAssignment | None = None) -> Prepared:
    slots = slot_time(g, cfg.interval)
    if clusters is None:
        clusters = cluster_graph(g, min(cfg.num_clusters, g.num_nodes), seed=seed)
    return Prepared(g, slots, clusters, build_patches(slots, clusters, g))


def _loss(mode: str, scores: tn.Tensor, labels: np.ndarray, mask: np.ndarray) -> tn.Tensor:
    if mode == "stationary":
        return loss_stationary(scores, labels, mask)
    return loss_nonstationary(scores, labels, mask)


class Trainer:
    """Mini-batch optimizer where each step owns one cluster column."""

    def __init__(self, prep: Prepared, mcfg: ModelConfig, tcfg: TrainConfig, split: SplitMasks):
        self.prep = prep
        self.mcfg = mcfg
        self.tcfg = tcfg
        self.split = split
        g = prep.graph
        self.model = TGTOD(mcfg.updated(mode=g.mode, num_clusters=prep.clusters.num_clusters),
                           g.feature_dim, prep.slots.num_slots, seed=tcfg.seed)
        self.opt = tn.Adam(self.model.parameters().values(), lr=tcfg.learning_rate)
        self.table = PatchEmbeddingTable(prep.grid.num_clusters, prep.grid.num_slots,
                                         mcfg.hidden_dim)
        self.entries = {k: prep.entries(v) for k, v in split.as_dict().items()}
        self._cluster_labels = self._local_label_arrays()
        self.rng = np.random.default_rng(tcfg.seed)

    def _local_label_arrays(self) -> list[np.ndarray]:
        out = []
        for m in self.prep.clusters.cluster_members:
            out.append(self.prep.labels[m])
        return out

    def checkpoint(self, epoch: int = 0) -> Checkpoint:
        m = self.model
        return Checkpoint(m.state_dict(), m.cfg, m.num_slots, m.seed,
                          self.prep.clusters.assignment.copy(), epoch)

    def refresh_table(self) -> None:
        self.table.fill(self.model.all_patch_embeddings(self.prep.grid))

    def step(self, c: int) -> float | None:
        """Forward cluster ``c`` against the frozen table, update, refresh its entries."""
        scores, fresh = self.model.cluster_forward(self.prep.grid, self.table, c)
        self.table.refresh(c, np.stack([p.data for p in fresh]))
        mask = self.prep.cluster_mask(self.entries["train"], c)
        if len(mask) == 0:
            return None
        loss = _loss(self.prep.graph.mode, scores, self._cluster_labels[c], mask)
        tn.backward(loss)
        self.opt.step()
        return loss.item()

    def scores(self) -> list[np.ndarray]:
        return self.model.score_all(self.prep.grid)

    def split_loss(self, per_cluster: list[np.ndarray], name: str) -> float:
        s, y = self.prep.gather(per_cluster, self.entries[name])
        s = np.clip(s, 1e-7, 1 - 1e-7)
        return float(-np.mean(y * np.log(s) + (1 - y) * np.log(1 - s)))

    def report(self, per_cluster, name: str) -> EvalReport:
        return evaluate_scores(*self.prep.gather(per_cluster, self.entries[name]))


def _row(epoch, split, loss, rep: EvalReport | None) -> dict:
    return {"epoch": epoch, "split": split, "loss": loss,
            "auc": rep.auc if rep else None, "ap": rep.ap if rep else None,
            "recall_at_k": rep.recall_at_k if rep else None}


def train(g: TemporalGraph, mcfg: ModelConfig, tcfg: TrainConfig, split: SplitMasks | None = None,
          prep: Prepared | None = None) -> tuple[Checkpoint, list[dict]]:
    """Train end to end; returns the best-validation-AP checkpoint and the history."""
    if split is None:
        split = train_val_test_split(g, tcfg.seed, tcfg.split_ratios, tcfg.split_strategy)
    if len(split.train) == 0:
        raise ValueError("training mask is empty")
    prep = prep or prepare(g, mcfg, seed=tcfg.seed)
    tr = Trainer(prep, mcfg, tcfg, split)
    best = tr.checkpoint(0)
    history: list[dict] = []
    if tcfg.epochs == 0:
        return best, history
    best_ap, since_best = -np.inf, 0
    has_val = len(tr.entries["val"]) > 0
    C = prep.grid.num_clusters
    for epoch in range(1, tcfg.epochs + 1):
        try:
            tr.refresh_table()
            order = tr.rng.permutation(C) if tcfg.batch_order == "shuffled" else range(C)
            for c in order:
                tr.step(int(c))
        except NumericFault as exc:
            raise TrainingDiverged(f"training diverged at epoch {epoch}: {exc}", best, history) from exc
        if epoch % tcfg.eval_every and epoch != tcfg.epochs:
            continue
        per_cluster = tr.scores()
        history.append(_row(epoch, "train", tr.split_loss(per_cluster, "train"), tr.report(per_cluster, "train")))
        if not has_val:
            best = tr.checkpoint(epoch)
            continue
        val = tr.report(per_cluster, "val")
        history.append(_row(epoch, "val", tr.split_loss(per_cluster, "val"), val))
        ap = val.ap if val.ap is not None else -np.inf
        if ap > best_ap:
            best_ap, since_best = ap, 0
            best = tr.checkpoint(epoch)
        else:
            since_best += tcfg.eval_every
            if since_best >= tcfg.patience:
                log.info("early stop at epoch %d (best val AP %.4f)", epoch, best_ap)
                break
    return best, history


def evaluate(checkpoint: Checkpoint, g: TemporalGraph, mask, mode: str | None = None) -> EvalReport:
    """Full no-gradient forward and metrics over the masked label entries."""
    mode = mode or g.mode
    if mode != g.mode:
        raise ValueError(f"graph is {g.mode}, evaluation requested {mode}")
    if len(mask) == 0:
        raise ValueError("evaluation mask is empty")
    model = checkpoint.model()
    clusters = _assignment(checkpoint.assignment)
    prep = prepare(g, model.cfg, clusters=clusters)
    per_cluster = model.score_all(prep.grid)
    return evaluate_scores(*prep.gather(per_cluster, prep.entries(mask)))


def _assignment(assign: np.ndarray) -> ClusterAssignment:
    k = int(assign.max()) + 1
    return ClusterAssignment(k, assign, tuple(np.flatnonzero(assign == c) for c in range(k)), 0.0)


def write_history(history: list[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=HISTORY_FIELDS, lineterminator="\n")
        w.writeheader()
        for row in history:
            w.writerow({k: ("" if row[k] is None else row[k]) for k in HISTORY_FIELDS})
