"""Attention token-count cost model for the hierarchical architecture."""
from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class CostBreakdown:
    n_nodes: int
    n_temporal: int  # timestamps T, or slots S for the slotted variant
    n_clusters: int
    mean_cluster_size: int
    direct: int
    space_time_split: int
    hier_split: int
    tgtod: int
    temporal_unit: str = "timestamps"

    def rows(self) -> list[tuple[str, int]]:
        return [
            ("direct", self.direct),
            ("space_time_split", self.space_time_split),
            ("hier_split", self.hier_split),
            ("tgtod", self.tgtod),
        ]


def cost_model(n_nodes: int, n_timestamps: int, n_clusters: int,
               temporal_unit: str = "timestamps") -> CostBreakdown:
    """Exact integer costs of global attention and of each reduction step.

    ``n_timestamps`` may be a slot count; pass ``temporal_unit="slots"`` to
    label the breakdown accordingly. Python ints never overflow.
    """
    n, t, c = int(n_nodes), int(n_timestamps), int(n_clusters)
    if not 1 <= c <= n:
        raise ValueError(f"need 1 <= clusters <= nodes, got clusters={c}, nodes={n}")
    if t < 1:
        raise ValueError(f"need at least one timestamp, got {t}")
    m = -(-n // c)
    return CostBreakdown(
        n_nodes=n,
        n_temporal=t,
        n_clusters=c,
        mean_cluster_size=m,
        direct=n * n * t * t,
        space_time_split=n * n + t * t,
        hier_split=m * m + c * c + t * t,
        tgtod=m + c * c + t * t,
        temporal_unit=temporal_unit,
    )


def slotted_cost_model(n_nodes: int, n_timestamps: int, n_clusters: int, interval: int) -> CostBreakdown:
    slots = -(-int(n_timestamps) // int(interval))
    return cost_model(n_nodes, slots, n_clusters, temporal_unit="slots")


def format_breakdown(cb: CostBreakdown) -> str:
    head = (f"# N={cb.n_nodes} {cb.temporal_unit}={cb.n_temporal} "
            f"C={cb.n_clusters} M={cb.mean_cluster_size}")
    width = max(len(k) for k, _ in cb.rows())
    return "\n".join([head] + [f"{k.ljust(width)} = {v:,}" for k, v in cb.rows()])
