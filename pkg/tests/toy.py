"""Small hand-built graphs shared by the tests."""
import numpy as np

from tgtod.tgraph import build_graph

TRIANGLES = [(0, 1, 2), (3, 4, 5), (6, 7, 8)]
BRIDGES = [(2, 3), (5, 6), (0, 8)]


def toy_edges(T=6):
    """Three triangles present at every timestamp, bridges at odd timestamps."""
    edges, ts = [], []
    for t in range(1, T + 1):
        for a, b, c in TRIANGLES:
            edges += [(a, b), (b, c), (a, c)]
            ts += [t] * 3
        if t % 2:
            edges += BRIDGES
            ts += [t] * len(BRIDGES)
    return np.array(edges), np.array(ts)


def toy_graph(mode="stationary", d=3, seed=0, T=6):
    rng = np.random.default_rng(seed)
    edges, ts = toy_edges(T)
    y = np.array([0, 0, 0, 0, 1, 0, 0, 1, 0])
    if mode == "stationary":
        x = rng.standard_normal((9, d))
        return build_graph(edges, ts, 9, x, np.arange(9), y, mode, num_timestamps=T)
    ids = np.tile(np.arange(9), T)
    times = np.repeat(np.arange(1, T + 1), 9)
    x = rng.standard_normal((len(ids), d))
    # node 4 turns anomalous halfway through
    lv = np.where(ids == 7, 1, 0) | ((ids == 4) & (times > T // 2))
    return build_graph(edges, ts, 9, x, np.c_[ids, times], lv.astype(int), mode,
                       feature_times=times, feature_ids=ids, num_timestamps=T)
