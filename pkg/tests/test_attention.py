import numpy as np
import pytest

from tgtod import tensor as tn
from tgtod.attention import (GcnLayer, KernelFeatureMap, MhaParams, exact_attention, gcn_forward,
                             gcn_normalized_adjacency, linear_attention, linear_attention_weights)
from tgtod.tensor import NumericFault, Tensor


def softmax(s):
    e = np.exp(s - s.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def reference_mha(x, p):
    heads = []
    for wq, wk, wv in zip(p.w_q, p.w_k, p.w_v):
        q, k, v = x @ wq.data, x @ wk.data, x @ wv.data
        heads.append(softmax(q @ np.swapaxes(k, -1, -2) / np.sqrt(q.shape[-1])) @ v)
    return np.concatenate(heads, axis=-1) @ p.w_o.data


@pytest.mark.parametrize("heads", [1, 2, 4])
def test_exact_attention_matches_reference(heads):
    rng = np.random.default_rng(0)
    x = rng.standard_normal((7, 5))
    p = MhaParams.init(rng, 5, 8, heads)
    np.testing.assert_allclose(exact_attention(Tensor(x), p).data, reference_mha(x, p), atol=1e-12)


def test_batched_attention_equals_per_item():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((3, 4, 6))
    p = MhaParams.init(rng, 6, 6, 2)
    out = exact_attention(Tensor(x), p).data
    for b in range(3):
        np.testing.assert_allclose(out[b], reference_mha(x[b], p), atol=1e-12)


def test_heads_must_divide_width():
    with pytest.raises(ValueError):
        MhaParams.init(np.random.default_rng(0), 4, 6, 4)


def test_feature_map_is_unbiased_for_the_exponential_kernel():
    rng = np.random.default_rng(2)
    a, b = 0.3 * rng.standard_normal((1, 4)), 0.3 * rng.standard_normal((1, 4))
    fm = KernelFeatureMap(4, 200_000, seed=0)
    with tn.no_grad():
        # undo the stabilizing shifts to recover the raw map
        def raw(u):
            proj = u @ fm.projection - 0.5 * (u ** 2).sum()
            return np.exp(proj) / np.sqrt(fm.num_features)
        est = (raw(a) @ raw(b).T).item()
    assert est == pytest.approx(np.exp((a @ b.T).item()), rel=2e-2)


def test_feature_map_shift_cancels_in_attention():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((6, 4))
    p = MhaParams.init(rng, 4, 4)
    fm = KernelFeatureMap(4, 16, seed=1)
    w = linear_attention_weights(x, p, fm)[0]
    # rebuild without any shift
    q = x @ p.w_q[0].data / 4 ** 0.25
    k = x @ p.w_k[0].data / 4 ** 0.25
    phi = lambda u: np.exp(u @ fm.projection - 0.5 * (u ** 2).sum(1, keepdims=True))
    a = phi(q) @ phi(k).T
    np.testing.assert_allclose(w, a / a.sum(1, keepdims=True), rtol=1e-10)
    out = linear_attention(Tensor(x), p, fm).data
    np.testing.assert_allclose(out, (w @ (x @ p.w_v[0].data)) @ p.w_o.data, atol=1e-12)


def test_reseed_changes_projection():
    fm = KernelFeatureMap(4, 8, seed=0)
    before = fm.projection.copy()
    fm.reseed(1)
    assert not np.allclose(before, fm.projection)
    fm.reseed(0)
    np.testing.assert_array_equal(before, fm.projection)


def test_linear_attention_never_forms_n_by_n():
    rng = np.random.default_rng(4)
    n = 64
    x = Tensor(rng.standard_normal((n, 4)))
    p = MhaParams.init(rng, 4, 4)
    fm = KernelFeatureMap(4, 8, seed=0)
    with tn.track_allocations() as shapes:
        linear_attention(x, p, fm)
    assert shapes and all(s.count(n) < 2 for s in shapes)


def test_linear_attention_denominator_floor():
    rng = np.random.default_rng(5)
    p = MhaParams.init(rng, 3, 3)

    class Zero(KernelFeatureMap):
        def __call__(self, u, shift="row"):
            return Tensor(np.zeros((u.shape[0], self.num_features)))

    with pytest.raises(NumericFault):
        linear_attention(Tensor(rng.standard_normal((5, 3))), p, Zero(3, 4))


def test_linear_attention_rejects_batches():
    p = MhaParams.init(np.random.default_rng(0), 3, 3)
    with pytest.raises(tn.ShapeError):
        linear_attention(Tensor(np.ones((2, 4, 3))), p, KernelFeatureMap(3, 4))


def test_normalized_adjacency_dense_formula():
    edges = np.array([[0, 1], [1, 2], [1, 3]])
    a = np.eye(4)
    for u, v in edges:
        a[u, v] = a[v, u] = 1
    d = np.diag(1 / np.sqrt(a.sum(1)))
    np.testing.assert_allclose(gcn_normalized_adjacency(4, edges).toarray(), d @ a @ d, atol=1e-15)


def test_normalized_adjacency_handles_empty_and_duplicates():
    np.testing.assert_allclose(gcn_normalized_adjacency(3, np.zeros((0, 2))).toarray(), np.eye(3))
    a = gcn_normalized_adjacency(2, [[0, 1], [0, 1], [1, 0]]).toarray()
    np.testing.assert_allclose(a, np.full((2, 2), 0.5))


def test_gcn_stack_uses_relu_between_layers_only():
    rng = np.random.default_rng(6)
    x = rng.standard_normal((4, 3))
    edges = [[0, 1], [2, 3]]
    l1, l2 = GcnLayer.init(rng, 3, 5), GcnLayer.init(rng, 5, 2)
    l2.bias.data[:] = -10.0  # a trailing relu would zero the output
    a = gcn_normalized_adjacency(4, edges).toarray()
    h = np.maximum(a @ x @ l1.weight.data + l1.bias.data, 0)
    want = a @ h @ l2.weight.data + l2.bias.data
    np.testing.assert_allclose(gcn_forward(Tensor(x), edges, [l1, l2]).data, want, atol=1e-12)
    assert (want < 0).any()
