import numpy as np
import pytest

from tgtod.tgraph import (GraphFormatError, GraphValidationError, SyntheticConfig, build_graph,
                          generate_synthetic, load_temporal_graph, train_val_test_split,
                          write_temporal_graph)
from toy import toy_graph


def write(path, text):
    path.write_text(text)
    return path


def test_build_graph_canonicalizes_edges(caplog):
    edges = np.array([[1, 0], [0, 1], [2, 2], [2, 1]])
    g = build_graph(edges, [1, 1, 1, 2], 3, np.eye(3), np.arange(3), [0, 1, 0])
    assert g.snapshots[0].edges.tolist() == [[0, 1]]
    assert g.snapshots[1].edges.tolist() == [[1, 2]]
    assert "self-loop" in caplog.text and "duplicate" in caplog.text


def test_build_graph_rejects_bad_input():
    with pytest.raises(GraphValidationError):
        build_graph([[0, 1]], [0], 2, np.eye(2), [0, 1], [0, 1])
    with pytest.raises(GraphValidationError):
        build_graph([[0, 1]], [1], 2, np.zeros((2, 0)), [0, 1], [0, 1])
    with pytest.raises(GraphValidationError):
        build_graph([[0, 1]], [1], 2, np.eye(2), [0, 1], [0, 2])
    with pytest.raises(GraphValidationError):
        build_graph([[0, 1]], [1], 2, np.array([[np.nan], [0.0]]), [0, 1], [0, 1])


def test_load_stationary_densifies_ids(tmp_path):
    e = write(tmp_path / "e.csv", "src,dst,timestamp\n10,30,1\n30,20,2\n")
    f = write(tmp_path / "f.csv", "10,0.5,1\n20,1.5,2\n30,2.5,3\n")
    lab = write(tmp_path / "l.csv", "node_id,label\n30,1\n10,0\n")
    g = load_temporal_graph(e, f, lab)
    assert g.node_ids.tolist() == [10, 20, 30]
    assert g.num_timestamps == 2 and g.feature_dim == 2
    assert g.snapshots[1].edges.tolist() == [[1, 2]]
    assert g.labels.stationary_labels == {0: 0, 2: 1}
    np.testing.assert_array_equal(g.base_features[2], [2.5, 3.0])


def test_load_nonstationary(tmp_path):
    e = write(tmp_path / "e.csv", "0,1,1\n1,2,2\n")
    f = write(tmp_path / "f.csv", "node_id,timestamp,f1\n0,1,1.0\n1,1,2.0\n2,2,3.0\n0,2,4.0\n")
    lab = write(tmp_path / "l.csv", "0,2,1\n2,2,0\n")
    g = load_temporal_graph(e, f, lab, mode="nonstationary")
    assert g.labels.per_slot_labels == {(0, 2): 1, (2, 2): 0}
    assert g.snapshots[1].feature_ids.tolist() == [0, 2]
    assert g.base_features[0, 0] == 4.0  # latest value


@pytest.mark.parametrize("edges,feats,labels,line", [
    ("0,1,1\n0,x,2\n", "0,1.0\n1,2.0\n", "0,1\n", 2),
    ("0,1\n", "0,1.0\n1,2.0\n", "0,1\n", 1),
    ("0,1,1\n", "0,1.0\n1,2.0,3.0\n", "0,1\n", 2),
    ("0,1,1\n", "0,1.0\n1,abc\n", "0,1\n", 2),
])
def test_format_errors_carry_line_numbers(tmp_path, edges, feats, labels, line):
    e = write(tmp_path / "e.csv", edges)
    f = write(tmp_path / "f.csv", feats)
    lab = write(tmp_path / "l.csv", labels)
    with pytest.raises(GraphFormatError) as info:
        load_temporal_graph(e, f, lab)
    assert info.value.line == line


def test_validation_errors(tmp_path):
    e = write(tmp_path / "e.csv", "0,1,1\n")
    f = write(tmp_path / "f.csv", "0,1.0\n1,2.0\n")
    with pytest.raises(GraphValidationError):
        load_temporal_graph(e, f, write(tmp_path / "l.csv", "0,3\n"))
    with pytest.raises(GraphValidationError):
        load_temporal_graph(e, write(tmp_path / "empty.csv", ""), write(tmp_path / "l2.csv", "0,1\n"))
    with pytest.raises(GraphValidationError):
        load_temporal_graph(write(tmp_path / "e0.csv", "0,1,0\n"), f, write(tmp_path / "l3.csv", "0,1\n"))


@pytest.mark.parametrize("mode", ["stationary", "nonstationary"])
def test_write_read_round_trip(tmp_path, mode):
    g = generate_synthetic(4, 40, 3, 0.1, mode=mode)
    paths = write_temporal_graph(g, tmp_path)
    h = load_temporal_graph(*paths, mode=mode)
    assert h.num_nodes == g.num_nodes and h.num_timestamps == g.num_timestamps
    for a, b in zip(g.snapshots, h.snapshots):
        np.testing.assert_array_equal(a.edges, b.edges)
        np.testing.assert_array_equal(a.feature_values, b.feature_values)
    np.testing.assert_array_equal(g.labels.keys, h.labels.keys)
    np.testing.assert_array_equal(g.labels.values, h.labels.values)
    np.testing.assert_array_equal(g.base_features, h.base_features)


def test_aggregated_edges_count_timestamps():
    g = toy_graph()
    pairs, counts = g.aggregated_edges()
    weight = dict(zip(map(tuple, pairs.tolist()), counts.tolist()))
    assert weight[(0, 1)] == 6 and weight[(2, 3)] == 3


def test_generator_plants_exact_outlier_count():
    g = generate_synthetic(0, 300, 8, 0.05)
    assert g.labels.values.sum() == 15
    assert g.num_nodes == 300 and g.num_timestamps == 8


def test_generator_is_deterministic():
    a = generate_synthetic(2, 100, 4, 0.1)
    b = generate_synthetic(2, 100, 4, 0.1)
    np.testing.assert_array_equal(a.base_features, b.base_features)
    for x, y in zip(a.snapshots, b.snapshots):
        np.testing.assert_array_equal(x.edges, y.edges)


def test_generator_emits_no_duplicate_edges(caplog):
    generate_synthetic(1, 300, 8, 0.05)
    assert "duplicate" not in caplog.text


def test_outliers_are_shifted_and_cross_linked():
    g = generate_synthetic(0, 300, 8, 0.05)
    y = g.labels.values.astype(bool)
    comm = g.meta["community"]
    cross = np.zeros(g.num_nodes)
    for s in g.snapshots:
        c = s.edges[comm[s.edges[:, 0]] != comm[s.edges[:, 1]]]
        np.add.at(cross, c.ravel(), 1)
    assert cross[y].mean() > 5 * cross[~y].mean()
    proj = g.base_features.sum(axis=1)
    assert proj[y].mean() > proj[~y].mean()


def test_nonstationary_generator_flips_inliers():
    cfg = SyntheticConfig(flip_fraction=0.1)
    g = generate_synthetic(0, 100, 6, 0.05, mode="nonstationary", config=cfg)
    onset = g.meta["onset"]
    flipped = np.flatnonzero((onset > 1) & (onset <= 6))
    assert len(flipped) == 10
    lab = g.labels.per_slot_labels
    i = flipped[0]
    seen = sorted(t for (n, t) in lab if n == i)
    assert all(lab[(i, t)] == int(t >= onset[i]) for t in seen)


@pytest.mark.parametrize("bad", [dict(outlier_rate=0.0), dict(outlier_rate=0.6), dict(n_nodes=5)])
def test_generator_rejects_bad_arguments(bad):
    args = dict(seed=0, n_nodes=50, n_timestamps=3, outlier_rate=0.1) | bad
    with pytest.raises(ValueError):
        generate_synthetic(**args)


def test_random_split_is_a_partition():
    g = generate_synthetic(0, 200, 3, 0.1)
    sp = train_val_test_split(g, 1, (0.6, 0.2, 0.2))
    assert (len(sp.train), len(sp.val), len(sp.test)) == (120, 40, 40)
    allk = np.concatenate([sp.train, sp.val, sp.test])
    assert sorted(allk.tolist()) == list(range(200))


def test_temporal_split_orders_timestamps():
    g = generate_synthetic(0, 60, 5, 0.1, mode="nonstationary")
    sp = train_val_test_split(g, 0, (0.6, 0.2, 0.2), strategy="temporal")
    assert sp.train[:, 1].max() < sp.val[:, 1].min() <= sp.val[:, 1].max() < sp.test[:, 1].min()


def test_split_validation(caplog):
    g = toy_graph()
    with pytest.raises(ValueError):
        train_val_test_split(g, 0, (0.5, 0.5, 0.5))
    with pytest.raises(ValueError):
        train_val_test_split(g, 0, strategy="bogus")
    train_val_test_split(g, 0, (0.9, 0.1, 0.0))
    assert "no positive labels" in caplog.text
