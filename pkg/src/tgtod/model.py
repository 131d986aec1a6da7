"""Hierarchical temporal graph transformer for node outlier scores.

Per slot each patch runs PFormer (GCN mixed with linear attention), is
mean-pooled into a patch embedding, and CFormer attends across the clusters
of that slot. Node embeddings concatenated with their cluster's updated patch
embedding go through TFormer across slots, then a logistic head.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

import numpy as np

from . import tensor as tn
from .attention import (GcnLayer, KernelFeatureMap, MhaParams, exact_attention,
                        gcn_forward, gcn_normalized_adjacency, linear_attention)
from .patching import Patch, PatchGrid
from .tensor import Parameter, Tensor

EPS_CLAMP = 1e-7


@dataclass(frozen=True)
class ModelConfig:
    interval: int = 1
    num_clusters: int = 64
    alpha: float = 0.8
    hidden_dim: int = 32
    heads: int = 1
    random_features: int = 32
    stationary_pooling: str = "mean"
    mode: str = "stationary"
    gcn_layers: int = 1
    feature_dim: int = 0  # filled from the data when 0

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.hidden_dim < 1:
            raise ValueError("hidden_dim must be >= 1")
        if self.hidden_dim % self.heads:
            raise ValueError("hidden_dim must be divisible by heads")
        if self.stationary_pooling not in ("mean", "concat"):
            raise ValueError(f"unknown pooling {self.stationary_pooling!r}")
        if self.mode not in ("stationary", "nonstationary"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.interval < 1 or self.num_clusters < 1 or self.random_features < 1:
            raise ValueError("interval, num_clusters and random_features must be >= 1")

    def updated(self, **kw) -> "ModelConfig":
        return replace(self, **kw)

    def to_text(self) -> str:
        return "".join(f"{k}={v}\n" for k, v in asdict(self).items())

    @classmethod
    def from_mapping(cls, kv: dict) -> "ModelConfig":
        types = {f.name: f.type for f in fields(cls)}
        out = {}
        for k, v in kv.items():
            if k not in types:
                continue
            t = types[k]
            out[k] = float(v) if t == "float" else int(v) if t == "int" else str(v)
        return cls(**out)


# dataset-tuned values; everything else follows the defaults above
PROFILES: dict[str, dict] = {
    "elliptic": dict(interval=1, num_clusters=64, alpha=0.8, hidden_dim=32),
    "dgraph": dict(interval=10, num_clusters=64, alpha=0.8, hidden_dim=16),
    "figraph": dict(interval=1, num_clusters=1, alpha=0.9, hidden_dim=16),
}


class PatchEmbeddingTable:
    """C x S grid of patch embeddings with a per-entry staleness counter.

    Stored values never carry gradient. ``leaves`` optionally exposes the
    entries as gradient-tracking leaf tensors so tests can confirm that
    frozen rows receive none.
    """

    def __init__(self, num_clusters: int, num_slots: int, dim: int):
        self.values = np.zeros((num_clusters, num_slots, dim))
        self.staleness = np.zeros((num_clusters, num_slots), dtype=np.int64)
        self.leaves: list[list[Tensor]] | None = None

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.values.shape

    def row(self, c: int, s: int) -> Tensor:
        """Frozen entry for cluster ``c`` at 0-based slot ``s``."""
        if self.leaves is not None:
            return self.leaves[c][s]
        return Tensor(self.values[c, s])

    def track_leaves(self) -> list[list[Tensor]]:
        C, S, _ = self.values.shape
        self.leaves = [[Tensor(self.values[c, s], requires_grad=True) for s in range(S)] for c in range(C)]
        return self.leaves

    def refresh(self, c: int, embeddings: np.ndarray) -> None:
        self.values[c] = embeddings
        self.staleness += 1
        self.staleness[c] = 0
        if self.leaves is not None:
            self.leaves = None

    def fill(self, all_embeddings: np.ndarray) -> None:
        self.values[...] = all_embeddings
        self.staleness[...] = 0
        self.leaves = None


def pool_patch(z: Tensor, dim: int | None = None) -> Tensor:
    """Column mean of the node embeddings; an empty patch pools to zeros."""
    if z.shape[0] == 0:
        return Tensor(np.zeros(dim if dim is not None else z.shape[1]))
    return tn.mean_rows(z)


def _clamp(scores: Tensor) -> Tensor:
    return tn.clip(scores, EPS_CLAMP, 1.0 - EPS_CLAMP)


def bce(scores: Tensor, labels: np.ndarray) -> Tensor:
    """Mean binary cross-entropy of clamped ``scores`` against 0/1 ``labels``."""
    if scores.data.size == 0:
        raise ValueError("loss needs at least one masked entry")
    y = np.asarray(labels, dtype=np.float64).reshape(scores.shape)
    p = _clamp(scores)
    pos = tn.mul(Tensor(y), tn.log(p))
    neg = tn.mul(Tensor(1.0 - y), tn.log(tn.scale(p, -1.0) + 1.0))
    return tn.scale(tn.mean_all(tn.add(pos, neg)), -1.0)


def loss_stationary(scores: Tensor, labels, mask=None) -> Tensor:
    """BCE averaged over masked nodes; ``mask`` indexes entries of ``scores``."""
    s = scores if mask is None else tn.take_rows(tn.reshape(scores, (-1,)), np.asarray(mask))
    y = np.asarray(labels) if mask is None else np.asarray(labels)[np.asarray(mask)]
    return bce(tn.reshape(s, (-1,)), y)


def loss_nonstationary(scores: Tensor, labels, mask) -> Tensor:
    """BCE averaged over masked (node, slot) pairs of an (n, S) score matrix.

    ``mask`` is a (k, 2) array of (row, 0-based slot); ``labels`` the matching
    (n, S) label matrix or a length-k vector.
    """
    mask = np.asarray(mask, dtype=np.int64).reshape(-1, 2)
    if len(mask) == 0:
        raise ValueError("loss needs at least one masked entry")
    n, S = scores.shape
    flat = tn.reshape(scores, (n * S,))
    idx = mask[:, 0] * S + mask[:, 1]
    lab = np.asarray(labels)
    y = lab[mask[:, 0], mask[:, 1]] if lab.ndim == 2 else lab
    return bce(tn.take_rows(flat, idx), y)


class TGTOD:
    """Parameters and forward stages of the hierarchical model."""

    def __init__(self, cfg: ModelConfig, feature_dim: int, num_slots: int, seed: int = 0):
        if cfg.feature_dim and cfg.feature_dim != feature_dim:
            raise ValueError(f"config feature_dim {cfg.feature_dim} != data feature_dim {feature_dim}")
        self.cfg = cfg.updated(feature_dim=feature_dim)
        self.num_slots = num_slots
        self.seed = seed
        rng = np.random.default_rng(seed)
        d, h = feature_dim, cfg.hidden_dim
        dims = [d] + [h] * cfg.gcn_layers
        self.gcn = [GcnLayer.init(rng, dims[i], dims[i + 1], name=f"pformer.gcn{i}")
                    for i in range(cfg.gcn_layers)]
        self.p_attn = MhaParams.init(rng, d, h, cfg.heads, name="pformer.attn")
        self.c_attn = MhaParams.init(rng, h, h, cfg.heads, name="cformer.attn")
        self.pos = tn.xavier_uniform(rng, num_slots, 2 * h, name="tformer.pos")
        self.t_attn = MhaParams.init(rng, 2 * h, 2 * h, cfg.heads, name="tformer.attn")
        head_in = 2 * h * (num_slots if cfg.mode == "stationary" and cfg.stationary_pooling == "concat" else 1)
        self.head_w = tn.xavier_uniform(rng, head_in, 1, name="head.weight")
        self.head_b = tn.zeros(1, name="head.bias")
        self.feature_map = KernelFeatureMap(h // cfg.heads, cfg.random_features,
                                            seed=int(rng.integers(2**31)))
        self._adj: dict[int, tuple[Patch, object]] = {}

    # -- parameters --------------------------------------------------------------------
    def parameters(self) -> dict[str, Parameter]:
        ps = [p for layer in self.gcn for p in layer.parameters()]
        ps += self.p_attn.parameters() + self.c_attn.parameters()
        ps += [self.pos, *self.t_attn.parameters(), self.head_w, self.head_b]
        return {p.name: p for p in ps}

    def state_dict(self) -> dict[str, np.ndarray]:
        out = {k: p.data.copy() for k, p in self.parameters().items()}
        out["pformer.feature_map"] = self.feature_map.projection.copy()
        return out

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        for k, p in self.parameters().items():
            if state[k].shape != p.shape:
                raise tn.ShapeError(f"{k}: checkpoint shape {state[k].shape} != {p.shape}")
            p.data = np.array(state[k], dtype=np.float64)
            p.grad = None
        self.feature_map.projection = np.array(state["pformer.feature_map"])

    # -- stages ------------------------------------------------------------------------
    def adjacency(self, patch: Patch):
        # keyed by identity; holding the patch keeps its id from being reused
        hit = self._adj.get(id(patch))
        if hit is None or hit[0] is not patch:
            hit = self._adj[id(patch)] = (patch, gcn_normalized_adjacency(patch.size, patch.edges))
        return hit[1]

    def pformer_forward(self, patch: Patch) -> Tensor:
        x = Tensor(patch.features)
        a = self.cfg.alpha
        if a == 1.0:
            return gcn_forward(x, patch.edges, self.gcn, adj=self.adjacency(patch))
        if a == 0.0:
            return linear_attention(x, self.p_attn, self.feature_map)
        g = gcn_forward(x, patch.edges, self.gcn, adj=self.adjacency(patch))
        t = linear_attention(x, self.p_attn, self.feature_map)
        return tn.add(tn.scale(g, a), tn.scale(t, 1.0 - a))

    def cformer_forward(self, table: PatchEmbeddingTable, slot: int, active: int,
                        fresh: Tensor) -> Tensor:
        """Exact attention over the C patch embeddings of 0-based ``slot``.

        Row ``active`` is ``fresh`` (gradient-carrying); every other row is the
        table entry with its gradient cut. Returns the (C, d') updated rows.
        """
        rows = [fresh if c == active else table.row(c, slot).detach()
                for c in range(table.shape[0])]
        return exact_attention(tn.stack(rows, axis=0), self.c_attn)

    def cformer_batch(self, table: PatchEmbeddingTable, active: int, fresh: list[Tensor]) -> Tensor:
        """:meth:`cformer_forward` for all slots at once; returns (S, C, d')."""
        C = table.shape[0]
        per_slot = []
        for s, f in enumerate(fresh):
            rows = [f if c == active else table.row(c, s).detach() for c in range(C)]
            per_slot.append(tn.stack(rows, axis=0))
        return exact_attention(tn.stack(per_slot, axis=0), self.c_attn)

    def spatial(self, z_slots: list[Tensor], pbar_slots: list[Tensor]) -> Tensor:
        """Concatenate node and updated patch embeddings per slot, add slot positions.

        Returns (n, S, 2d').
        """
        n = z_slots[0].shape[0]
        rows = []
        for s, (z, pb) in enumerate(zip(z_slots, pbar_slots)):
            zbar = tn.concat([z, tn.broadcast_rows(pb, n)], axis=-1)
            pos = tn.reshape(tn.take_rows(self.pos, [s]), (self.pos.shape[1],))
            rows.append(tn.add(zbar, pos))
        return tn.stack(rows, axis=1)

    def tformer_forward(self, spatial: Tensor) -> Tensor:
        return exact_attention(spatial, self.t_attn)

    def predict_stationary(self, z_tilde: Tensor) -> Tensor:
        """(n, S, 2d') -> (n,) scores after temporal pooling."""
        if self.cfg.stationary_pooling == "mean":
            pooled = tn.mean_rows(z_tilde)
        else:
            n, S, k = z_tilde.shape
            pooled = tn.reshape(z_tilde, (n, S * k))
        logits = tn.add(pooled @ self.head_w, self.head_b)
        return tn.reshape(tn.sigmoid(logits), (pooled.shape[0],))

    def predict_nonstationary(self, z_tilde: Tensor) -> Tensor:
        """(n, S, 2d') -> (n, S) scores with one head shared across slots."""
        n, S, _ = z_tilde.shape
        logits = tn.add(z_tilde @ self.head_w, self.head_b)
        return tn.reshape(tn.sigmoid(logits), (n, S))

    def predict(self, z_tilde: Tensor) -> Tensor:
        if self.cfg.mode == "stationary":
            return self.predict_stationary(z_tilde)
        return self.predict_nonstationary(z_tilde)

    # -- composite passes ------------------------------------------------------------------
    def patch_embeddings(self, grid: PatchGrid, c: int) -> tuple[list[Tensor], list[Tensor]]:
        z = [self.pformer_forward(grid[c, s]) for s in range(1, grid.num_slots + 1)]
        p = [pool_patch(zs, self.cfg.hidden_dim) for zs in z]
        return z, p

    def cluster_forward(self, grid: PatchGrid, table: PatchEmbeddingTable, c: int) -> tuple[Tensor, list[Tensor]]:
        """Scores for the members of cluster ``c`` with other clusters frozen.

        Returns (scores, fresh patch embeddings per slot).
        """
        z, p = self.patch_embeddings(grid, c)
        pbar_all = self.cformer_batch(table, c, p)  # (S, C, d')
        S, C, h = pbar_all.shape
        flat = tn.reshape(pbar_all, (S * C, h))
        pbar = [tn.reshape(tn.take_rows(flat, [s * C + c]), (h,)) for s in range(S)]
        z_tilde = self.tformer_forward(self.spatial(z, pbar))
        return self.predict(z_tilde), p

    def all_patch_embeddings(self, grid: PatchGrid) -> np.ndarray:
        with tn.no_grad():
            out = np.zeros((grid.num_clusters, grid.num_slots, self.cfg.hidden_dim))
            for c in range(grid.num_clusters):
                _, p = self.patch_embeddings(grid, c)
                out[c] = np.stack([x.data for x in p])
        return out

    def score_all(self, grid: PatchGrid) -> list[np.ndarray]:
        """No-gradient forward with every patch embedding fresh; scores per cluster."""
        table = PatchEmbeddingTable(grid.num_clusters, grid.num_slots, self.cfg.hidden_dim)
        table.fill(self.all_patch_embeddings(grid))
        out = []
        with tn.no_grad():
            for c in range(grid.num_clusters):
                scores, _ = self.cluster_forward(grid, table, c)
                out.append(scores.data.copy())
        return out

    # -- persistence --------------------------------------------------------------------
    def save(self, directory) -> None:
        directory = Path(directory)
        tn.save_tensors(self.state_dict(), directory)
        meta = self.cfg.to_text() + f"num_slots={self.num_slots}\nseed={self.seed}\n"
        (directory / "config.txt").write_text(meta)

    @classmethod
    def load(cls, directory) -> "TGTOD":
        directory = Path(directory)
        kv = dict(line.split("=", 1) for line in (directory / "config.txt").read_text().splitlines() if "=" in line)
        cfg = ModelConfig.from_mapping(kv)
        model = cls(cfg, cfg.feature_dim, int(kv["num_slots"]), seed=int(kv["seed"]))
        model.load_state_dict(tn.load_tensors(directory))
        return model
