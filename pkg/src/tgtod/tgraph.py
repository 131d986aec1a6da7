"""Temporal graph data model, CSV I/O, synthetic generator and label splits.

File formats (header row optional on read, always written):

* edges:    ``src,dst,timestamp`` with integer ids and timestamp >= 1
* features: ``node_id,f_1,...,f_d`` (stationary) or
            ``node_id,timestamp,f_1,...,f_d`` (non-stationary)
* labels:   ``node_id,label`` (stationary) or ``node_id,slot,label``
            (non-stationary; ``slot`` is a timestamp index)
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal

import numpy as np

log = logging.getLogger(__name__)

Mode = Literal["stationary", "nonstationary"]
MODES = ("stationary", "nonstationary")


class GraphFormatError(ValueError):
    """Malformed input row; carries the file and 1-based line number."""

    def __init__(self, path, line: int, msg: str):
        super().__init__(f"{path}:{line}: {msg}")
        self.path = str(path)
        self.line = line


class GraphValidationError(ValueError):
    pass


def _check_mode(mode: str) -> str:
    if mode == "non-stationary":
        mode = "nonstationary"
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    return mode


@dataclass(frozen=True)
class Snapshot:
    timestamp: int
    active_nodes: np.ndarray  # sorted node ids
    edges: np.ndarray  # (E, 2), u < v, lexicographically sorted
    feature_ids: np.ndarray  # nodes with a feature row observed at this timestamp
    feature_values: np.ndarray  # (len(feature_ids), d)


@dataclass(frozen=True)
class LabelSet:
    """Stationary labels ``node -> y`` or per-timestamp labels ``(node, t) -> y``.

    ``keys`` is (n,) of node ids or (n, 2) of (node, t); ``values`` holds 0/1.
    The labeled mask is exactly the set of keys.
    """
    mode: str
    keys: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        if not np.isin(self.values, (0, 1)).all():
            raise GraphValidationError("labels must be 0 or 1")
        want = 1 if self.mode == "stationary" else 2
        if self.keys.ndim != want or (want == 2 and self.keys.shape[1] != 2):
            raise GraphValidationError(f"{self.mode} labels need key shape {'(n,)' if want == 1 else '(n, 2)'}")
        if len(self.keys) != len(self.values):
            raise GraphValidationError("label keys and values differ in length")

    @property
    def stationary_labels(self) -> dict[int, int]:
        return dict(zip(self.keys.tolist(), self.values.tolist())) if self.mode == "stationary" else {}

    @property
    def per_slot_labels(self) -> dict[tuple[int, int], int]:
        if self.mode == "stationary":
            return {}
        return {(int(i), int(t)): int(y) for (i, t), y in zip(self.keys, self.values)}

    def __len__(self) -> int:
        return len(self.values)


@dataclass(frozen=True)
class TemporalGraph:
    num_nodes: int
    num_timestamps: int
    feature_dim: int
    snapshots: tuple[Snapshot, ...]
    labels: LabelSet
    base_features: np.ndarray  # (N, d): the constant feature, or the latest observed one
    imputed: np.ndarray  # (N,) bool: True where no feature row was ever seen
    node_ids: np.ndarray  # original id of each dense id
    mode: str = "stationary"
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        _validate(self)

    def features_at(self, t: int) -> tuple[np.ndarray, np.ndarray]:
        snap = self.snapshots[t - 1]
        return snap.feature_ids, snap.feature_values

    def aggregated_edges(self) -> tuple[np.ndarray, np.ndarray]:
        """Union of all edges with weight = number of timestamps carrying it."""
        allp = [s.edges for s in self.snapshots if len(s.edges)]
        if not allp:
            return np.zeros((0, 2), dtype=np.int64), np.zeros(0, dtype=np.int64)
        pairs, counts = np.unique(np.concatenate(allp), axis=0, return_counts=True)
        return pairs, counts


def _validate(g: TemporalGraph) -> None:
    if g.feature_dim < 1:
        raise GraphValidationError("feature dimension must be at least 1")
    if g.base_features.shape != (g.num_nodes, g.feature_dim):
        raise GraphValidationError(
            f"feature matrix shape {g.base_features.shape} != ({g.num_nodes}, {g.feature_dim})")
    if not np.all(np.isfinite(g.base_features)):
        raise GraphValidationError("non-finite feature value")
    if len(g.snapshots) != g.num_timestamps:
        raise GraphValidationError("snapshot count differs from num_timestamps")
    for i, s in enumerate(g.snapshots):
        if s.timestamp != i + 1:
            raise GraphValidationError("snapshot timestamps must be 1..T in order")
        if len(s.edges):
            if s.edges.max() >= g.num_nodes or s.edges.min() < 0:
                raise GraphValidationError(f"edge endpoint out of range at t={s.timestamp}")
            if not np.isin(s.edges.ravel(), s.active_nodes).all():
                raise GraphValidationError(f"edge endpoint inactive at t={s.timestamp}")
        if s.feature_values.shape != (len(s.feature_ids), g.feature_dim):
            raise GraphValidationError(f"feature rows at t={s.timestamp} must have {g.feature_dim} entries")
        if not np.all(np.isfinite(s.feature_values)):
            raise GraphValidationError(f"non-finite feature value at t={s.timestamp}")
    if g.labels.mode != g.mode:
        raise GraphValidationError("label mode differs from graph mode")
    keys = g.labels.keys
    ids = keys if keys.ndim == 1 else keys[:, 0]
    if len(ids) and (ids.min() < 0 or ids.max() >= g.num_nodes):
        raise GraphValidationError("label refers to an unknown node")
    if keys.ndim == 2 and len(keys) and (keys[:, 1].min() < 1 or keys[:, 1].max() > g.num_timestamps):
        raise GraphValidationError("label slot outside 1..T")


def _canon_edges(edges: np.ndarray) -> tuple[np.ndarray, int, int]:
    """Symmetrize to (min, max), drop self-loops and duplicates."""
    if len(edges) == 0:
        return np.zeros((0, 2), dtype=np.int64), 0, 0
    e = np.sort(np.asarray(edges, dtype=np.int64), axis=1)
    loops = e[:, 0] == e[:, 1]
    e = e[~loops]
    uniq = np.unique(e, axis=0) if len(e) else e.reshape(0, 2)
    return uniq, int(loops.sum()), len(e) - len(uniq)


def build_graph(
    edges: np.ndarray,
    timestamps: np.ndarray,
    num_nodes: int,
    features: np.ndarray,
    label_keys: np.ndarray,
    label_values: np.ndarray,
    mode: str = "stationary",
    feature_times: np.ndarray | None = None,
    feature_ids: np.ndarray | None = None,
    num_timestamps: int | None = None,
    node_ids: np.ndarray | None = None,
    activity: list[np.ndarray] | None = None,
    meta: dict | None = None,
) -> TemporalGraph:
    """Assemble a validated graph from dense-id arrays.

    Stationary: ``features`` is (N, d). Non-stationary: ``features`` is a
    stack of rows with matching ``feature_ids`` and ``feature_times``.
    ``activity`` optionally lists extra active nodes per timestamp.
    """
    mode = _check_mode(mode)
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    timestamps = np.asarray(timestamps, dtype=np.int64).ravel()
    if len(timestamps) and timestamps.min() < 1:
        raise GraphValidationError("timestamps must be >= 1")
    T = int(num_timestamps or 0)
    T = max(T, int(timestamps.max()) if len(timestamps) else 0)
    if feature_times is not None and len(feature_times):
        T = max(T, int(np.max(feature_times)))
    if mode == "nonstationary" and len(label_keys):
        T = max(T, int(np.asarray(label_keys)[:, 1].max()))
    if T < 1:
        raise GraphValidationError("graph has no timestamps")
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[1] == 0:
        raise GraphValidationError("feature dimension must be at least 1")
    d = features.shape[1]

    base = np.zeros((num_nodes, d))
    imputed = np.ones(num_nodes, dtype=bool)
    per_t_ids: list[np.ndarray] = []
    per_t_vals: list[np.ndarray] = []
    if mode == "stationary":
        if feature_ids is None:
            if features.shape[0] != num_nodes:
                raise GraphValidationError("stationary features need one row per node")
            base[:] = features
            imputed[:] = False
        else:
            fid = np.asarray(feature_ids, dtype=np.int64)
            base[fid] = features
            imputed[fid] = False
        all_ids = np.flatnonzero(~imputed)
        for _ in range(T):
            per_t_ids.append(all_ids)
            per_t_vals.append(base[all_ids])
    else:
        fid = np.asarray(feature_ids, dtype=np.int64)
        ft = np.asarray(feature_times, dtype=np.int64)
        order = np.lexsort((fid, ft))
        fid, ft, fv = fid[order], ft[order], features[order]
        for t in range(1, T + 1):
            sel = ft == t
            per_t_ids.append(fid[sel])
            per_t_vals.append(fv[sel])
            base[fid[sel]] = fv[sel]
            imputed[fid[sel]] = False

    snaps = []
    for t in range(1, T + 1):
        e, n_loops, n_dups = _canon_edges(edges[timestamps == t])
        if n_loops:
            log.warning("t=%d: dropped %d self-loop(s)", t, n_loops)
        if n_dups:
            log.warning("t=%d: dropped %d duplicate edge(s)", t, n_dups)
        act = [e.ravel()]
        if mode == "nonstationary":
            act.append(per_t_ids[t - 1])
        if activity is not None:
            act.append(np.asarray(activity[t - 1], dtype=np.int64))
        active = np.unique(np.concatenate(act)).astype(np.int64)
        snaps.append(Snapshot(t, active, e, per_t_ids[t - 1], per_t_vals[t - 1]))

    lk = np.asarray(label_keys, dtype=np.int64)
    lv = np.asarray(label_values, dtype=np.int64)
    if mode == "stationary":
        lk = lk.reshape(-1)
        order = np.argsort(lk, kind="stable")
    else:
        lk = lk.reshape(-1, 2)
        order = np.lexsort((lk[:, 1], lk[:, 0]))
    labels = LabelSet(mode, lk[order], lv[order])
    return TemporalGraph(
        num_nodes=int(num_nodes),
        num_timestamps=T,
        feature_dim=d,
        snapshots=tuple(snaps),
        labels=labels,
        base_features=base,
        imputed=imputed,
        node_ids=np.arange(num_nodes) if node_ids is None else np.asarray(node_ids),
        mode=mode,
        meta=dict(meta or {}),
    )


# --- CSV I/O -------------------------------------------------------------------------

def _read_rows(path) -> list[tuple[int, list[str]]]:
    rows = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not c.strip() for c in row):
                continue
            rows.append((lineno, [c.strip() for c in row]))
    if rows:
        try:
            float(rows[0][1][0])
        except ValueError:
            rows = rows[1:]  # header
    return rows


def _ints(path, lineno, cells, n) -> list[int]:
    if len(cells) != n:
        raise GraphFormatError(path, lineno, f"expected {n} columns, got {len(cells)}")
    try:
        return [int(c) for c in cells]
    except ValueError:
        raise GraphFormatError(path, lineno, f"non-integer value in {cells}") from None


def load_temporal_graph(edge_file, feature_file, label_file, mode: str = "stationary") -> TemporalGraph:
    """Read the three CSV files; ids are densified in ascending numeric order."""
    mode = _check_mode(mode)
    raw_e = []
    for lineno, cells in _read_rows(edge_file):
        u, v, t = _ints(edge_file, lineno, cells, 3)
        if t <= 0:
            raise GraphValidationError(f"{edge_file}:{lineno}: timestamp must be >= 1, got {t}")
        raw_e.append((u, v, t))

    fcols = 1 if mode == "stationary" else 2
    raw_f_ids, raw_f_t, raw_f_vals = [], [], []
    width = None
    for lineno, cells in _read_rows(feature_file):
        if len(cells) <= fcols:
            raise GraphFormatError(feature_file, lineno, "feature row has no values")
        if width is None:
            width = len(cells)
        elif len(cells) != width:
            raise GraphFormatError(feature_file, lineno, f"expected {width} columns, got {len(cells)}")
        head = _ints(feature_file, lineno, cells[:fcols], fcols)
        try:
            vals = [float(c) for c in cells[fcols:]]
        except ValueError:
            raise GraphFormatError(feature_file, lineno, "non-numeric feature value") from None
        if not all(np.isfinite(vals)):
            raise GraphFormatError(feature_file, lineno, "non-finite feature value")
        if mode == "nonstationary" and head[1] <= 0:
            raise GraphValidationError(f"{feature_file}:{lineno}: timestamp must be >= 1")
        raw_f_ids.append(head[0])
        raw_f_t.append(head[-1])
        raw_f_vals.append(vals)
    if not raw_f_vals:
        raise GraphValidationError(f"{feature_file}: no feature rows (feature dimension 0)")

    lcols = 2 if mode == "stationary" else 3
    raw_l = []
    for lineno, cells in _read_rows(label_file):
        vals = _ints(label_file, lineno, cells, lcols)
        if vals[-1] not in (0, 1):
            raise GraphValidationError(f"{label_file}:{lineno}: label must be 0 or 1, got {vals[-1]}")
        if mode == "nonstationary" and vals[1] <= 0:
            raise GraphValidationError(f"{label_file}:{lineno}: slot must be >= 1")
        raw_l.append(vals)

    ids = sorted({x for u, v, _ in raw_e for x in (u, v)} | set(raw_f_ids) | {r[0] for r in raw_l})
    dense = {orig: i for i, orig in enumerate(ids)}
    n = len(ids)
    e = np.array([(dense[u], dense[v]) for u, v, _ in raw_e], dtype=np.int64).reshape(-1, 2)
    ts = np.array([t for *_, t in raw_e], dtype=np.int64)
    fvals = np.array(raw_f_vals, dtype=np.float64)
    fids = np.array([dense[i] for i in raw_f_ids], dtype=np.int64)

    if mode == "stationary":
        if len(np.unique(fids)) != len(fids):
            raise GraphValidationError(f"{feature_file}: duplicate feature row for a node")
        lk = np.array([dense[r[0]] for r in raw_l], dtype=np.int64)
        lv = np.array([r[1] for r in raw_l], dtype=np.int64)
        if len(np.unique(lk)) != len(lk):
            raise GraphValidationError(f"{label_file}: duplicate label for a node")
        return build_graph(e, ts, n, fvals, lk, lv, mode, feature_ids=fids,
                           node_ids=np.array(ids))
    lk = np.array([(dense[r[0]], r[1]) for r in raw_l], dtype=np.int64).reshape(-1, 2)
    lv = np.array([r[2] for r in raw_l], dtype=np.int64)
    if len(np.unique(lk, axis=0)) != len(lk):
        raise GraphValidationError(f"{label_file}: duplicate label for a (node, slot)")
    ft = np.array(raw_f_t, dtype=np.int64)
    if len(np.unique(np.c_[fids, ft], axis=0)) != len(fids):
        raise GraphValidationError(f"{feature_file}: duplicate feature row for a (node, timestamp)")
    return build_graph(e, ts, n, fvals, lk, lv, mode, feature_times=ft, feature_ids=fids,
                       node_ids=np.array(ids))


def _fmt(x: float) -> str:
    return repr(float(x))


def write_temporal_graph(g: TemporalGraph, directory, prefix: str = "") -> tuple[Path, Path, Path]:
    """Write the canonical (dense-id, sorted, deduplicated) CSV form of ``g``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    ep, fp, lp = (directory / f"{prefix}{n}.csv" for n in ("edges", "features", "labels"))
    with open(ep, "w", newline="") as fh:
        fh.write("src,dst,timestamp\n")
        for s in g.snapshots:
            for u, v in s.edges:
                fh.write(f"{u},{v},{s.timestamp}\n")
    d = g.feature_dim
    fnames = ",".join(f"f_{k + 1}" for k in range(d))
    with open(fp, "w", newline="") as fh:
        if g.mode == "stationary":
            fh.write(f"node_id,{fnames}\n")
            for i in np.flatnonzero(~g.imputed):
                fh.write(f"{i}," + ",".join(_fmt(x) for x in g.base_features[i]) + "\n")
        else:
            fh.write(f"node_id,timestamp,{fnames}\n")
            rows = []
            for s in g.snapshots:
                for i, vals in zip(s.feature_ids, s.feature_values):
                    rows.append((int(i), s.timestamp, vals))
            rows.sort(key=lambda r: (r[0], r[1]))
            for i, t, vals in rows:
                fh.write(f"{i},{t}," + ",".join(_fmt(x) for x in vals) + "\n")
    with open(lp, "w", newline="") as fh:
        if g.mode == "stationary":
            fh.write("node_id,label\n")
            for i, y in zip(g.labels.keys, g.labels.values):
                fh.write(f"{i},{y}\n")
        else:
            fh.write("node_id,slot,label\n")
            for (i, t), y in zip(g.labels.keys, g.labels.values):
                fh.write(f"{i},{t},{y}\n")
    return ep, fp, lp


# --- synthetic generator -------------------------------------------------------------

@dataclass(frozen=True)
class SyntheticConfig:
    """Knobs of the planted-outlier generator.

    Inlier features are ``centroid[community] + noise``; outliers add
    ``feature_shift`` along the unit diagonal direction and receive
    ``outlier_cross_degree`` extra cross-community edges per timestamp.
    """
    n_communities: int = 4
    feature_dim: int = 8
    p_active: float = 0.9
    intra_degree: float = 4.0
    inter_degree: float = 0.2
    outlier_cross_degree: float = 8.0
    feature_shift: float = 1.0
    feature_offset: float = 1.0
    centroid_scale: float = 0.5
    noise: float = 1.0
    temporal_noise: float = 0.1
    flip_fraction: float = 0.05


def shift_direction(d: int) -> np.ndarray:
    return np.full(d, 1.0 / np.sqrt(d))


def generate_synthetic(seed: int, n_nodes: int, n_timestamps: int, outlier_rate: float,
                       mode: str = "stationary", config: SyntheticConfig | None = None) -> TemporalGraph:
    """Block-model temporal graph with planted outliers.

    Stationary: exactly ``floor(outlier_rate * n_nodes)`` outliers with
    constant features. Non-stationary: the same initial outliers plus
    ``floor(flip_fraction * n_nodes)`` inliers that turn into outliers at a
    random timestamp, gaining the feature shift and cross edges from then on.
    """
    mode = _check_mode(mode)
    if not 0 < outlier_rate < 0.5:
        raise ValueError(f"outlier_rate must lie in (0, 0.5), got {outlier_rate}")
    if n_nodes < 20:
        raise ValueError(f"n_nodes must be >= 20, got {n_nodes}")
    if n_timestamps < 1:
        raise ValueError("n_timestamps must be >= 1")
    cfg = config or SyntheticConfig()
    rng = np.random.default_rng(seed)
    n, T, d, K = n_nodes, n_timestamps, cfg.feature_dim, cfg.n_communities

    community = np.sort(rng.integers(0, K, size=n))
    centroids = cfg.feature_offset + cfg.centroid_scale * rng.standard_normal((K, d))
    base = centroids[community] + cfg.noise * rng.standard_normal((n, d))
    u = shift_direction(d)

    n_out = int(np.floor(outlier_rate * n))
    outliers = np.sort(rng.choice(n, size=n_out, replace=False))
    # onset[i] = first timestamp at which node i is an outlier (T + 1 = never)
    onset = np.full(n, T + 1, dtype=np.int64)
    onset[outliers] = 1
    if mode == "nonstationary":
        n_flip = int(np.floor(cfg.flip_fraction * n))
        pool = np.setdiff1d(np.arange(n), outliers)
        flips = np.sort(rng.choice(pool, size=min(n_flip, len(pool)), replace=False))
        onset[flips] = rng.integers(2, T + 1, size=len(flips)) if T > 1 else 1

    members = [np.flatnonzero(community == k) for k in range(K)]
    src, dst, ts, activity = [], [], [], []
    f_ids, f_ts, f_vals = [], [], []
    for t in range(1, T + 1):
        active = rng.random(n) < cfg.p_active
        activity.append(np.flatnonzero(active))
        for k in range(K):
            mk = members[k][active[members[k]]]
            if len(mk) > 1:
                p = min(1.0, cfg.intra_degree / max(len(mk) - 1, 1))
                iu, iv = np.triu_indices(len(mk), k=1)
                keep = rng.random(len(iu)) < p
                src.append(mk[iu[keep]]); dst.append(mk[iv[keep]])
        act_idx = np.flatnonzero(active)
        n_inter = rng.poisson(cfg.inter_degree * len(act_idx) / 2)
        if len(act_idx) > 1 and n_inter:
            a = rng.choice(act_idx, size=n_inter)
            b = rng.choice(act_idx, size=n_inter)
            cross = community[a] != community[b]
            src.append(a[cross]); dst.append(b[cross])
        for i in np.flatnonzero(active & (onset <= t)):
            others = act_idx[community[act_idx] != community[i]]
            m = rng.poisson(cfg.outlier_cross_degree)
            if len(others) and m:
                tgt = rng.choice(others, size=min(m, len(others)), replace=False)
                src.append(np.full(len(tgt), i)); dst.append(tgt)
        n_e = sum(len(x) for x in src) - sum(len(x) for x in ts)
        ts.append(np.full(n_e, t))
        if mode == "nonstationary":
            ids = np.flatnonzero(active)
            vals = base[ids] + cfg.temporal_noise * rng.standard_normal((len(ids), d))
            vals += np.outer(onset[ids] <= t, u) * cfg.feature_shift
            f_ids.append(ids); f_ts.append(np.full(len(ids), t)); f_vals.append(vals)

    edges = np.c_[np.concatenate(src), np.concatenate(dst)] if src else np.zeros((0, 2), np.int64)
    tsa = np.concatenate(ts) if ts else np.zeros(0, np.int64)
    # outlier and random cross edges may coincide; keep one copy per timestamp
    key = np.c_[tsa, edges.min(axis=1), edges.max(axis=1)].astype(np.int64)
    _, first = np.unique(key, axis=0, return_index=True)
    first = np.sort(first)
    edges, tsa = edges[first], tsa[first]
    meta = {"seed": seed, "community": community, "onset": onset, "config": cfg}
    if mode == "stationary":
        feats = base + np.outer(onset == 1, u) * cfg.feature_shift
        labels = (onset == 1).astype(np.int64)
        return build_graph(edges, tsa, n, feats, np.arange(n), labels, mode,
                           num_timestamps=T, activity=activity, meta=meta)
    fid = np.concatenate(f_ids)
    fts = np.concatenate(f_ts)
    # nonstationary labels exist wherever the node is observed
    lk = np.c_[fid, fts]
    lv = (onset[fid] <= fts).astype(np.int64)
    return build_graph(edges, tsa, n, np.concatenate(f_vals), lk, lv, mode,
                       feature_times=fts, feature_ids=fid, num_timestamps=T,
                       activity=activity, meta=meta)


# --- splits ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SplitMasks:
    """Label keys per partition (node ids, or (node, t) rows)."""
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray

    def as_dict(self) -> dict[str, np.ndarray]:
        return {"train": self.train, "val": self.val, "test": self.test}


def _sizes(n: int, ratios) -> tuple[int, int]:
    n_train = int(round(ratios[0] * n))
    n_val = int(round(ratios[1] * n))
    n_val = min(n_val, n - n_train)
    return n_train, n_val


def train_val_test_split(g: TemporalGraph, seed: int, ratios=(0.6, 0.2, 0.2),
                         strategy: str = "random") -> SplitMasks:
    """Partition the labeled entries into train/val/test.

    ``temporal`` orders non-stationary entries by timestamp and assigns whole
    timestamps (earliest to train); stationary nodes are ordered by their first
    active timestamp.
    """
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"split ratios must sum to 1, got {ratios}")
    keys, y = g.labels.keys, g.labels.values
    n = len(keys)
    if strategy == "random":
        perm = np.random.default_rng(seed).permutation(n)
        n_train, n_val = _sizes(n, ratios)
        parts = [perm[:n_train], perm[n_train:n_train + n_val], perm[n_train + n_val:]]
    elif strategy == "temporal":
        if g.mode == "nonstationary":
            slots = np.unique(keys[:, 1])
            s_train, s_val = _sizes(len(slots), ratios)
            groups = [slots[:s_train], slots[s_train:s_train + s_val], slots[s_train + s_val:]]
            parts = [np.flatnonzero(np.isin(keys[:, 1], gr)) for gr in groups]
        else:
            first = np.full(g.num_nodes, g.num_timestamps + 1)
            for s in reversed(g.snapshots):
                first[s.active_nodes] = s.timestamp
            order = np.lexsort((keys, first[keys]))
            n_train, n_val = _sizes(n, ratios)
            parts = [order[:n_train], order[n_train:n_train + n_val], order[n_train + n_val:]]
    else:
        raise ValueError(f"unknown split strategy {strategy!r}")
    out = []
    for name, idx in zip(("train", "val", "test"), parts):
        idx = np.sort(idx)
        if len(idx) and y[idx].sum() == 0:
            log.warning("%s split has no positive labels", name)
        out.append(keys[idx])
    return SplitMasks(*out)
