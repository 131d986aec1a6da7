"""Spatiotemporal patching: time slotting, graph clustering, patch grid.

The clustering is a self-contained multilevel k-way partitioner in the METIS
mould: heavy-edge-matching coarsening, a greedy balanced initial partition,
and boundary Fiduccia-Mattheyses refinement projected back level by level.
"""
from __future__ import annotations

import heapq
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .tgraph import TemporalGraph

log = logging.getLogger(__name__)

BALANCE = 1.2


# --- time slotting ----------------------------------------------------------------------

@dataclass(frozen=True)
class Slot:
    slot_id: int  # 1-based
    timestamps: tuple[int, ...]
    nodes: np.ndarray  # V^s, sorted
    edges: np.ndarray  # E^s, (E, 2) with u < v
    features: np.ndarray  # (N, d): the feature valid at this slot for every node
    observed: np.ndarray  # (N,) bool: node had a feature row within or before the window


@dataclass(frozen=True)
class SlotIndex:
    interval: int
    slots: tuple[Slot, ...]
    num_timestamps: int

    @property
    def num_slots(self) -> int:
        return len(self.slots)

    def slot_of(self, t) -> np.ndarray:
        return (np.asarray(t) - 1) // self.interval + 1

    def slot_entries(self, keys: np.ndarray, values: np.ndarray | None = None):
        """Map (node, timestamp) label keys to unique (node, slot) keys.

        When several labeled timestamps of a node fall in one slot the latest
        one wins. Entries whose node is absent from the slot are dropped.
        """
        keys = np.asarray(keys, dtype=np.int64).reshape(-1, 2)
        if len(keys) == 0:
            empty = np.zeros((0, 2), dtype=np.int64)
            return (empty, np.zeros(0, dtype=np.int64)) if values is not None else empty
        s = self.slot_of(keys[:, 1])
        order = np.lexsort((-keys[:, 1], s, keys[:, 0]))
        ks = np.c_[keys[order, 0], s[order]]
        first = np.r_[True, np.any(ks[1:] != ks[:-1], axis=1)]
        sel = order[first]
        out = np.c_[keys[sel, 0], s[sel]]
        present = np.array([np.isin(i, self.slots[j - 1].nodes) for i, j in out], dtype=bool)
        if values is None:
            return out[present]
        return out[present], np.asarray(values)[sel][present]


def slot_time(g: TemporalGraph, interval: int) -> SlotIndex:
    """Merge consecutive windows of ``interval`` timestamps into slots."""
    if interval < 1:
        raise ValueError(f"interval must be >= 1, got {interval}")
    T = g.num_timestamps
    if interval > T:
        log.warning("interval %d exceeds %d timestamps; using a single slot", interval, T)
    S = math.ceil(T / interval)
    latest = g.base_features.copy() if g.mode == "stationary" else np.zeros_like(g.base_features)
    observed = ~g.imputed if g.mode == "stationary" else np.zeros(g.num_nodes, dtype=bool)
    slots = []
    for s in range(S):
        ts = tuple(range(s * interval + 1, min((s + 1) * interval, T) + 1))
        snaps = [g.snapshots[t - 1] for t in ts]
        nodes = np.unique(np.concatenate([sn.active_nodes for sn in snaps])).astype(np.int64)
        e = [sn.edges for sn in snaps if len(sn.edges)]
        edges = np.unique(np.concatenate(e), axis=0) if e else np.zeros((0, 2), dtype=np.int64)
        if g.mode == "nonstationary":
            latest = latest.copy()
            observed = observed.copy()
            for sn in snaps:  # later timestamps overwrite earlier ones
                latest[sn.feature_ids] = sn.feature_values
                observed[sn.feature_ids] = True
        slots.append(Slot(s + 1, ts, nodes, edges, latest, observed))
    return SlotIndex(interval, tuple(slots), T)


# --- partitioning ---------------------------------------------------------------------

Adjacency = list[dict[int, float]]


def _adjacency(n: int, edges: np.ndarray, weights=None) -> Adjacency:
    adj: Adjacency = [dict() for _ in range(n)]
    w = np.ones(len(edges)) if weights is None else np.asarray(weights, dtype=np.float64)
    for (u, v), x in zip(np.asarray(edges, dtype=np.int64).tolist(), w.tolist()):
        if u == v:
            continue
        adj[u][v] = adj[u].get(v, 0.0) + x
        adj[v][u] = adj[v].get(u, 0.0) + x
    return adj


def edge_cut(adj: Adjacency, part) -> float:
    return sum(w for u, nb in enumerate(adj) for v, w in nb.items() if u < v and part[u] != part[v])


def _coarsen(adj: Adjacency, vwgt: list[int], max_vwgt: int):
    """One round of heavy-edge matching. Returns (cmap, coarse adj, coarse vwgt)."""
    n = len(adj)
    match = [-1] * n
    order = sorted(range(n), key=lambda u: (len(adj[u]), u))
    for u in order:
        if match[u] != -1:
            continue
        best, best_w = -1, -1.0
        for v, w in adj[u].items():
            if match[v] == -1 and v != u and vwgt[u] + vwgt[v] <= max_vwgt:
                if w > best_w or (w == best_w and v < best):
                    best, best_w = v, w
        if best == -1:
            match[u] = u
        else:
            match[u], match[best] = best, u
    cmap = [-1] * n
    nc = 0
    for u in range(n):
        if cmap[u] == -1:
            cmap[u] = nc
            cmap[match[u]] = nc
            nc += 1
    cvw = [0] * nc
    for u in range(n):
        cvw[cmap[u]] += vwgt[u]
    cadj: Adjacency = [dict() for _ in range(nc)]
    for u in range(n):
        cu = cmap[u]
        for v, w in adj[u].items():
            cv = cmap[v]
            if cu != cv:
                cadj[cu][cv] = cadj[cu].get(cv, 0.0) + w
    return cmap, cadj, cvw


def _part_weights(vwgt, part, k) -> list[int]:
    pw = [0] * k
    for u, p in enumerate(part):
        pw[p] += vwgt[u]
    return pw


def _greedy_initial(adj: Adjacency, vwgt, k: int, cap: int) -> list[int]:
    """Place super-nodes by descending weight into the best-connected part with room."""
    n = len(adj)
    part = [-1] * n
    pw = [0] * k
    for u in sorted(range(n), key=lambda x: (-vwgt[x], x)):
        conn = [0.0] * k
        for v, w in adj[u].items():
            if part[v] != -1:
                conn[part[v]] += w
        fits = [p for p in range(k) if pw[p] + vwgt[u] <= cap]
        cands = fits or list(range(k))
        # empty parts must fill before the last nodes arrive
        empties = [p for p in range(k) if pw[p] == 0]
        remaining = sum(1 for x in part if x == -1)
        if empties and remaining <= len(empties):
            cands = empties
        p = min(cands, key=lambda q: (-conn[q], pw[q], q))
        part[u] = p
        pw[p] += vwgt[u]
    return part


def _grow_initial(adj: Adjacency, vwgt, k: int, cap: int, rng: np.random.Generator) -> list[int]:
    """Greedy graph growing: grow k-1 regions from random seeds, rest is the last part."""
    n = len(adj)
    total = sum(vwgt)
    part = [k - 1] * n
    free = set(range(n))
    for p in range(k - 1):
        if not free:
            break
        target = min(cap, math.ceil(total / k))
        seed = int(rng.choice(sorted(free)))
        weight = 0
        conn: dict[int, float] = {seed: 0.0}
        while conn and weight < target:
            u = min(conn, key=lambda x: (-conn[x], x))
            del conn[u]
            if weight + vwgt[u] > cap:
                continue
            part[u] = p
            free.discard(u)
            weight += vwgt[u]
            for v, w in adj[u].items():
                if v in free:
                    conn[v] = conn.get(v, 0.0) + w
            if not conn and weight < target and free:
                nxt = int(rng.choice(sorted(free)))
                conn[nxt] = 0.0
    return part


def _rebalance(adj: Adjacency, vwgt, part: list[int], k: int, cap: int) -> None:
    """Move cheapest nodes out of overweight parts, and fill empty parts."""
    pw = _part_weights(vwgt, part, k)
    counts = [0] * k
    for p in part:
        counts[p] += 1
    guard = 0
    while guard < 10 * len(part):
        guard += 1
        over = [p for p in range(k) if pw[p] > cap and counts[p] > 1]
        empty = [p for p in range(k) if counts[p] == 0]
        if not over and not empty:
            return
        if over:
            src = max(over, key=lambda p: (pw[p], -p))
        else:
            src = max((p for p in range(k) if counts[p] > 1), key=lambda p: (pw[p], -p), default=None)
            if src is None:
                return
        best = None
        for u in range(len(part)):
            if part[u] != src:
                continue
            conn = [0.0] * k
            for v, w in adj[u].items():
                conn[part[v]] += w
            dests = empty if empty else [q for q in range(k) if q != src and pw[q] + vwgt[u] <= cap]
            if not dests:
                dests = [min((q for q in range(k) if q != src), key=lambda q: (pw[q], q))]
            for q in dests:
                key = (conn[src] - conn[q], pw[q], vwgt[u], u, q)
                if best is None or key < best:
                    best = key
        if best is None:
            return
        u, q = best[3], best[4]
        pw[src] -= vwgt[u]; counts[src] -= 1
        pw[q] += vwgt[u]; counts[q] += 1
        part[u] = q


def _fm_pass(adj: Adjacency, vwgt, part: list[int], k: int, cap: int) -> float:
    """One k-way FM pass with node locking; rolls back to the best prefix.

    Returns the cut reduction achieved (>= 0).
    """
    n = len(part)
    pw = _part_weights(vwgt, part, k)
    counts = [0] * k
    for p in part:
        counts[p] += 1
    conn = [dict() for _ in range(n)]
    for u in range(n):
        for v, w in adj[u].items():
            conn[u][part[v]] = conn[u].get(part[v], 0.0) + w

    def best_move(u):
        a = part[u]
        own = conn[u].get(a, 0.0)
        best = None
        for b, w in conn[u].items():
            if b == a:
                continue
            g = w - own
            if best is None or g > best[0] or (g == best[0] and b < best[1]):
                best = (g, b)
        return best

    heap = []
    for u in range(n):
        if any(b != part[u] for b in conn[u]):
            mv = best_move(u)
            if mv:
                heapq.heappush(heap, (-mv[0], u, mv[1]))
    locked = [False] * n
    moves: list[tuple[int, int, int]] = []
    gain_sum = 0.0
    best_sum, best_len = 0.0, 0
    bad_streak = 0
    limit = max(25, n // 4)
    while heap and bad_streak < limit:
        neg_g, u, b = heapq.heappop(heap)
        if locked[u]:
            continue
        mv = best_move(u)
        if mv is None or (mv[1] != b or -neg_g != mv[0]):
            if mv is not None:
                heapq.heappush(heap, (-mv[0], u, mv[1]))
            continue
        a = part[u]
        if pw[b] + vwgt[u] > cap or counts[a] == 1:
            locked[u] = True  # infeasible now; skip for this pass
            continue
        g = mv[0]
        locked[u] = True
        part[u] = b
        pw[a] -= vwgt[u]; pw[b] += vwgt[u]
        counts[a] -= 1; counts[b] += 1
        moves.append((u, a, b))
        gain_sum += g
        if gain_sum > best_sum + 1e-12:
            best_sum, best_len = gain_sum, len(moves)
            bad_streak = 0
        else:
            bad_streak += 1
        for v, w in adj[u].items():
            cv = conn[v]
            cv[a] -= w
            if cv[a] <= 1e-12:
                del cv[a]
            cv[b] = cv.get(b, 0.0) + w
            if not locked[v]:
                nm = best_move(v)
                if nm:
                    heapq.heappush(heap, (-nm[0], v, nm[1]))
    for u, a, b in reversed(moves[best_len:]):
        part[u] = a
    return best_sum


def _refine(adj, vwgt, part, k, cap, history: list, max_passes: int = 10) -> None:
    """Run FM passes until one fails to improve; log (cut before, cut after) per pass."""
    cut = edge_cut(adj, part)
    for _ in range(max_passes):
        gain = _fm_pass(adj, vwgt, part, k, cap)
        after = edge_cut(adj, part)
        history.append((cut, after))
        cut = after
        if gain <= 1e-12:
            break


def _multilevel(adj: Adjacency, k: int, cap: int, rng: np.random.Generator,
                trials: int, history: list) -> list[int]:
    n = len(adj)
    vwgt = [1] * n
    levels = []
    cur_adj, cur_vw = adj, vwgt
    max_vwgt = max(1, math.ceil(n / k))
    while len(cur_adj) > 4 * k:
        cmap, cadj, cvw = _coarsen(cur_adj, cur_vw, max_vwgt)
        if len(cadj) > 0.95 * len(cur_adj):
            break
        levels.append((cur_adj, cur_vw, cmap))
        cur_adj, cur_vw = cadj, cvw

    best_part, best_cut = None, math.inf
    for trial in range(trials):
        if trial == 0:
            part = _greedy_initial(cur_adj, cur_vw, k, cap)
        else:
            part = _grow_initial(cur_adj, cur_vw, k, cap, rng)
        _rebalance(cur_adj, cur_vw, part, k, cap)
        _refine(cur_adj, cur_vw, part, k, cap, [])
        cut = edge_cut(cur_adj, part)
        if _balanced(cur_vw, part, k, cap) and cut < best_cut:
            best_part, best_cut = part, cut
        elif best_part is None and trial == trials - 1:
            best_part = part
    part = best_part
    for fine_adj, fine_vw, cmap in reversed(levels):
        part = [part[cmap[u]] for u in range(len(fine_adj))]
        _rebalance(fine_adj, fine_vw, part, k, cap)
        _refine(fine_adj, fine_vw, part, k, cap, history)
    return part


def _balanced(vwgt, part, k, cap) -> bool:
    pw = _part_weights(vwgt, part, k)
    return max(pw) <= cap and min(pw) > 0


def balance_cap(n: int, k: int, factor: float = BALANCE) -> int:
    ideal = math.ceil(n / k)
    return max(ideal, int(math.floor(factor * ideal + 1e-9)))


@dataclass(frozen=True)
class ClusterAssignment:
    num_clusters: int
    assignment: np.ndarray  # node -> cluster
    cluster_members: tuple[np.ndarray, ...]
    edge_cut: float  # weighted
    cut_history: tuple[tuple[float, float], ...] = field(default=(), compare=False)

    @property
    def mean_size(self) -> float:
        return len(self.assignment) / self.num_clusters

    @property
    def num_nodes(self) -> int:
        return len(self.assignment)

    def balance_factor(self) -> float:
        ideal = math.ceil(self.num_nodes / self.num_clusters)
        return max(len(m) for m in self.cluster_members) / ideal


def partition_graph(n: int, edges, num_clusters: int, seed: int = 0, weights=None,
                    trials: int = 8) -> ClusterAssignment:
    """Balanced k-way partition of an undirected weighted graph on ``n`` nodes.

    Nodes without edges are dealt round-robin to the lightest clusters after
    the connected part is partitioned. Cluster ids are renumbered so that
    clusters appear in order of their smallest member.
    """
    k = int(num_clusters)
    if not 1 <= k <= n:
        raise ValueError(f"need 1 <= num_clusters <= n, got {k} for n={n}")
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    full_adj = _adjacency(n, edges, weights)
    if k == 1:
        assign = np.zeros(n, dtype=np.int64)
        return ClusterAssignment(1, assign, (np.arange(n),), 0.0, ())

    cap = balance_cap(n, k)
    linked = [u for u in range(n) if full_adj[u]]
    loose = [u for u in range(n) if not full_adj[u]]
    assign = np.full(n, -1, dtype=np.int64)
    history: list[tuple[float, float]] = []
    if linked:
        index = {u: i for i, u in enumerate(linked)}
        sub = [{index[v]: w for v, w in full_adj[u].items()} for u in linked]
        k_sub = min(k, len(linked))
        sub_cap = cap if k_sub == k else balance_cap(len(linked), k_sub)
        part = _multilevel(sub, k_sub, sub_cap, np.random.default_rng(seed), trials, history)
        assign[linked] = part
    sizes = np.bincount(assign[assign >= 0], minlength=k)
    for u in loose:
        p = int(np.argmin(sizes))  # lightest, lowest id on ties
        assign[u] = p
        sizes[p] += 1
    # empty clusters can remain only if the connected part had fewer nodes than k
    assign_l = assign.tolist()
    _rebalance(full_adj, [1] * n, assign_l, k, cap)
    _refine(full_adj, [1] * n, assign_l, k, cap, history)
    assign = np.asarray(assign_l, dtype=np.int64)

    first_seen = {}
    for u in range(n):
        first_seen.setdefault(int(assign[u]), len(first_seen))
    relabel = np.array([first_seen[int(p)] for p in assign], dtype=np.int64)
    members = tuple(np.flatnonzero(relabel == c) for c in range(k))
    cut = edge_cut(full_adj, relabel)
    return ClusterAssignment(k, relabel, members, cut, tuple(history))


def cluster_graph(g: TemporalGraph, num_clusters: int, seed: int = 0) -> ClusterAssignment:
    """Partition the time-aggregated graph; edge weight = #timestamps carrying the edge."""
    pairs, counts = g.aggregated_edges()
    ca = partition_graph(g.num_nodes, pairs, num_clusters, seed=seed, weights=counts)
    check_partition(ca, g.num_nodes)
    return ca


def check_partition(ca: ClusterAssignment, n: int) -> None:
    seen = np.concatenate(ca.cluster_members) if ca.cluster_members else np.zeros(0)
    if len(seen) != n or len(np.unique(seen)) != n:
        raise AssertionError("clusters are not a partition of the node set")
    if ca.num_clusters <= n and any(len(m) == 0 for m in ca.cluster_members):
        raise AssertionError("empty cluster")


def write_assignment(ca: ClusterAssignment, path) -> None:
    with open(path, "w") as fh:
        fh.write("node_id,cluster_id\n")
        for i, c in enumerate(ca.assignment):
            fh.write(f"{i},{c}\n")


def read_assignment(path, n: int, adj_edges=None, weights=None) -> ClusterAssignment:
    rows = [l.strip() for l in Path(path).read_text().splitlines() if l.strip()]
    if rows and not rows[0][0].isdigit():
        rows = rows[1:]
    assign = np.full(n, -1, dtype=np.int64)
    for r in rows:
        i, c = (int(x) for x in r.split(","))
        assign[i] = c
    if (assign < 0).any():
        raise ValueError(f"{path}: assignment misses some nodes")
    k = int(assign.max()) + 1
    members = tuple(np.flatnonzero(assign == c) for c in range(k))
    cut = 0.0
    if adj_edges is not None:
        cut = edge_cut(_adjacency(n, adj_edges, weights), assign)
    ca = ClusterAssignment(k, assign, members, cut)
    check_partition(ca, n)
    return ca


# --- patches -----------------------------------------------------------------------------

@dataclass(frozen=True)
class Patch:
    cluster: int
    slot: int  # 1-based
    members: np.ndarray  # global node ids, sorted
    edges: np.ndarray  # local-index intra-cluster edges (E, 2)
    features: np.ndarray  # (|V_c|, d)
    active: np.ndarray  # (|V_c|,) bool: member present in V^s

    @property
    def size(self) -> int:
        return len(self.members)


@dataclass(frozen=True)
class PatchGrid:
    num_clusters: int
    num_slots: int
    patches: tuple[tuple[Patch, ...], ...]  # [cluster][slot-1]

    def __getitem__(self, key: tuple[int, int]) -> Patch:
        c, s = key
        return self.patches[c][s - 1]

    def __len__(self) -> int:
        return self.num_clusters * self.num_slots

    def __iter__(self):
        for row in self.patches:
            yield from row


def build_patches(slots: SlotIndex, clusters: ClusterAssignment, g: TemporalGraph) -> PatchGrid:
    if len(clusters.assignment) != g.num_nodes:
        raise ValueError("cluster assignment and graph disagree on node count")
    local = np.empty(g.num_nodes, dtype=np.int64)
    for m in clusters.cluster_members:
        local[m] = np.arange(len(m))
    grid = []
    for c, m in enumerate(clusters.cluster_members):
        row = []
        for sl in slots.slots:
            e = sl.edges
            if len(e):
                cu, cv = clusters.assignment[e[:, 0]], clusters.assignment[e[:, 1]]
                keep = (cu == c) & (cv == c)
                le = local[e[keep]]
            else:
                le = np.zeros((0, 2), dtype=np.int64)
            row.append(Patch(c, sl.slot_id, m, le, sl.features[m], np.isin(m, sl.nodes)))
        grid.append(tuple(row))
    return PatchGrid(clusters.num_clusters, slots.num_slots, tuple(grid))
