import numpy as np
import pytest

from tgtod import tensor as tn
from tgtod.tensor import GradientError, NumericFault, Parameter, ShapeError, Tensor


def numeric_grad(f, x, h=1e-6):
    g = np.zeros_like(x.data)
    for idx in np.ndindex(x.shape):
        orig = x.data[idx]
        x.data[idx] = orig + h
        up = f().item()
        x.data[idx] = orig - h
        down = f().item()
        x.data[idx] = orig
        g[idx] = (up - down) / (2 * h)
    return g


def check_grads(build, *shapes, seed=0, positive=False):
    """Compare backward against central differences for sum(w * build(*params))."""
    rng = np.random.default_rng(seed)
    params = []
    for s in shapes:
        v = rng.uniform(0.5, 2.0, s) if positive else rng.standard_normal(s)
        params.append(Parameter(v))
    out_shape = build(*params).shape
    w = Tensor(rng.standard_normal(out_shape))

    def f():
        return tn.sum_all(tn.mul(build(*params), w))

    tn.backward(f())
    with tn.no_grad():
        for p in params:
            analytic, p.grad = p.grad, None
            np.testing.assert_allclose(analytic, numeric_grad(f, p), rtol=1e-6, atol=1e-8)


OPS = [
    ("add", lambda a, b: tn.add(a, b), [(3, 4), (3, 4)], False),
    ("add_bias", lambda a, b: tn.add(a, b), [(3, 4), (4,)], False),
    ("sub", lambda a, b: tn.sub(a, b), [(2, 3), (2, 3)], False),
    ("mul", lambda a, b: tn.mul(a, b), [(2, 3), (2, 3)], False),
    ("scale", lambda a: tn.scale(a, -2.5), [(4,)], False),
    ("add_col", lambda a, c: tn.add_col(a, c), [(3, 4), (3, 1)], False),
    ("div_col", lambda a, c: tn.div_col(a, c), [(3, 4), (3, 1)], True),
    ("mul_col", lambda a, c: tn.mul_col(a, c), [(3, 4), (3, 1)], False),
    ("relu", lambda a: tn.relu(a), [(5, 3)], False),
    ("exp", lambda a: tn.exp(a), [(2, 3)], False),
    ("log", lambda a: tn.log(a), [(2, 3)], True),
    ("sigmoid", lambda a: tn.sigmoid(a), [(2, 3)], False),
    ("square", lambda a: tn.square(a), [(2, 3)], False),
    ("mean_all", lambda a: tn.reshape(tn.mean_all(a), (1,)), [(2, 3)], False),
    ("sum_last", lambda a: tn.sum_last(a), [(2, 3)], False),
    ("mean_rows", lambda a: tn.mean_rows(a), [(4, 3)], False),
    ("mean_rows_3d", lambda a: tn.mean_rows(a), [(2, 4, 3)], False),
    ("matmul", lambda a, b: a @ b, [(3, 4), (4, 2)], False),
    ("matmul_batch_shared", lambda a, b: a @ b, [(2, 3, 4), (4, 5)], False),
    ("matmul_batch", lambda a, b: a @ b, [(2, 3, 4), (2, 4, 5)], False),
    ("transpose", lambda a: tn.transpose(a), [(2, 3)], False),
    ("transpose_3d", lambda a: tn.transpose(a), [(2, 3, 4)], False),
    ("row_softmax", lambda a: tn.row_softmax(a), [(3, 5)], False),
    ("concat", lambda a, b: tn.concat([a, b], axis=-1), [(3, 2), (3, 4)], False),
    ("stack", lambda a, b: tn.stack([a, b], axis=1), [(3, 2), (3, 2)], False),
    ("take_rows", lambda a: tn.take_rows(a, [0, 2, 2, 1]), [(3, 4)], False),
    ("slice_last", lambda a: tn.slice_last(a, 1, 3), [(3, 4)], False),
    ("reshape", lambda a: tn.reshape(a, (6,)), [(2, 3)], False),
    ("broadcast_rows", lambda v: tn.broadcast_rows(v, 4), [(3,)], False),
]


@pytest.mark.parametrize("name,build,shapes,positive", OPS, ids=[o[0] for o in OPS])
def test_op_gradients(name, build, shapes, positive):
    check_grads(build, *shapes, positive=positive)


def test_sparse_matmul_gradient():
    import scipy.sparse as sp
    adj = sp.random(5, 5, density=0.5, random_state=0, format="csr")
    check_grads(lambda a: tn.sparse_matmul(adj, a), (5, 3))


def test_clip_gradient_is_zero_outside():
    a = Parameter(np.array([-2.0, 0.5, 3.0]))
    tn.backward(tn.sum_all(tn.clip(a, 0.0, 1.0)))
    assert a.grad.tolist() == [0.0, 1.0, 0.0]


def test_sigmoid_is_stable_for_large_inputs():
    out = tn.sigmoid(Tensor(np.array([-800.0, 0.0, 800.0]))).data
    np.testing.assert_allclose(out, [0.0, 0.5, 1.0])


def test_non_finite_raises_numeric_fault():
    with pytest.raises(NumericFault):
        tn.log(Tensor(np.array([0.0])))
    with pytest.raises(NumericFault):
        tn.exp(Tensor(np.array([1e4])))


def test_broadcasting_is_restricted():
    with pytest.raises(ShapeError):
        tn.add(Tensor(np.ones((3, 4))), Tensor(np.ones((3, 1))))
    with pytest.raises(ShapeError):
        tn.mul(Tensor(np.ones((3, 4))), Tensor(np.ones(4)))
    with pytest.raises(ShapeError):
        Tensor(np.ones((2, 3))) @ Tensor(np.ones((2, 3)))


def test_second_backward_without_zeroing_raises():
    p = Parameter(np.ones(3))
    tn.backward(tn.sum_all(tn.square(p)))
    with pytest.raises(GradientError):
        tn.backward(tn.sum_all(tn.square(p)))
    p.zero_grad()
    tn.backward(tn.sum_all(tn.square(p)))
    np.testing.assert_allclose(p.grad, 2.0)


def test_backward_needs_scalar():
    p = Parameter(np.ones(3))
    with pytest.raises(GradientError):
        tn.backward(tn.square(p))


def test_gradient_accumulates_over_shared_use():
    p = Parameter(np.array([3.0]))
    tn.backward(tn.sum_all(tn.add(tn.mul(p, p), p)))  # d/dp (p^2 + p) = 2p + 1
    assert p.grad.tolist() == [7.0]


def test_no_grad_records_no_tape():
    p = Parameter(np.ones(2))
    with tn.no_grad():
        y = tn.square(p)
    assert not y.requires_grad and y._backward is None
    assert tn.square(p).requires_grad


def test_detach_cuts_gradient():
    p = Parameter(np.ones(2))
    tn.backward(tn.sum_all(tn.mul(p, p.detach())))
    np.testing.assert_allclose(p.grad, 1.0)


def test_track_allocations_records_shapes():
    with tn.track_allocations() as log:
        Tensor(np.ones((2, 3))) @ Tensor(np.ones((3, 4)))
    assert log == [(2, 4)]


def test_adam_first_step_moves_by_lr_times_sign():
    p = Parameter(np.array([1.0, -1.0, 2.0]))
    opt = tn.Adam([p], lr=0.1)
    tn.backward(tn.sum_all(tn.mul(p, Tensor(np.array([3.0, -0.5, 1e-3])))))
    opt.step()
    np.testing.assert_allclose(p.data, [0.9, -0.9, 1.9], atol=1e-5)
    assert p.grad is None


def test_adam_matches_reference_recursion():
    rng = np.random.default_rng(1)
    p = Parameter(rng.standard_normal(4))
    ref = p.data.copy()
    m = v = np.zeros(4)
    opt = tn.Adam([p], lr=0.01, betas=(0.8, 0.9), eps=1e-6)
    for t in range(1, 6):
        tn.backward(tn.sum_all(tn.square(p)))
        g = 2 * ref
        m = 0.8 * m + 0.2 * g
        v = 0.9 * v + 0.1 * g * g
        ref = ref - 0.01 * (m / (1 - 0.8 ** t)) / (np.sqrt(v / (1 - 0.9 ** t)) + 1e-6)
        opt.step()
        np.testing.assert_allclose(p.data, ref, rtol=1e-12)


def test_adam_minimizes_quadratic():
    p = Parameter(np.array([5.0, -3.0]))
    opt = tn.Adam([p], lr=0.1)
    for _ in range(500):
        tn.backward(tn.sum_all(tn.square(p)))
        opt.step()
    assert np.abs(p.data).max() < 1e-2


def test_checkpoint_round_trip_and_layout(tmp_path):
    state = {"b": np.arange(6.0).reshape(2, 3), "a": np.array([1.5, -2.0]), "s": np.array(3.0)}
    tn.save_tensors(state, tmp_path)
    back = tn.load_tensors(tmp_path)
    assert set(back) == set(state)
    for k in state:
        np.testing.assert_array_equal(back[k], state[k])
    raw = (tmp_path / "params.bin").read_bytes()
    # names are written in sorted order as little-endian float64
    assert raw[:8] == np.array(1.5, dtype="<f8").tobytes()
    assert len(raw) == 8 * 9


def test_xavier_uniform_bounds():
    w = tn.xavier_uniform(np.random.default_rng(0), 10, 6)
    assert np.abs(w.data).max() <= np.sqrt(6 / 16)
