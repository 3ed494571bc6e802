import math
import zlib

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from dualcorr import numcore as nc
from dualcorr.numcore import DimensionError, Tensor

finite = st.floats(-50, 50, allow_nan=False, allow_infinity=False)


def central_difference(f, x: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Independent gradient oracle on plain arrays."""
    grad = np.zeros_like(x)
    flat, g = x.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = f(x)
        flat[i] = orig - eps
        lo = f(x)
        flat[i] = orig
        g[i] = (hi - lo) / (2 * eps)
    return grad


def test_matmul_identity():
    a = Tensor(np.eye(2))
    b = Tensor([[1.0, 2.0], [3.0, 4.0]])
    np.testing.assert_array_equal(nc.matmul(a, b).data, [[1, 2], [3, 4]])


def test_matmul_row_times_column():
    assert nc.matmul(Tensor([[1.0, 0.0]]), Tensor([[0.0], [5.0]])).data.tolist() == [[0.0]]


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
        nc.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))


def test_matmul_grad_against_finite_differences():
    rng = np.random.default_rng(0)
    a_val, b_val = rng.normal(size=(3, 4)), rng.normal(size=(4, 2))
    a = nc.parameter(a_val)
    nc.backward(nc.matmul(a, Tensor(b_val)).sum())
    expected = np.ones((3, 2)) @ b_val.T
    numeric = central_difference(lambda x: float((x @ b_val).sum()), a_val.copy())
    np.testing.assert_allclose(numeric, expected, atol=1e-8)
    np.testing.assert_allclose(a.grad, expected, atol=1e-12)


def test_softmax_uniform_and_stable():
    np.testing.assert_allclose(nc.softmax(Tensor([0.0, 0.0, 0.0])).data, [1 / 3] * 3, atol=1e-15)
    out = nc.softmax(Tensor([1000.0, 0.0])).data
    assert np.all(np.isfinite(out))
    assert out[0] == pytest.approx(1.0) and out[1] < 1e-300


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (3, 5), elements=finite), st.sampled_from([0, 1]))
def test_softmax_slices_sum_to_one(x, axis):
    out = nc.softmax(Tensor(x), axis=axis).data
    assert np.all(out >= 0)
    assert np.all(np.abs(out.sum(axis=axis) - 1.0) < 1e-12)


def test_elementwise_closed_forms():
    assert nc.tanh(Tensor(0.0)).item() == 0.0
    np.testing.assert_allclose(nc.l2_normalize(Tensor([3.0, 4.0])).data, [0.6, 0.8])
    np.testing.assert_array_equal(nc.l2_normalize(Tensor([0.0, 0.0])).data, [0.0, 0.0])


def test_l2_normalize_zero_vector_has_zero_gradient():
    x = nc.parameter([0.0, 0.0])
    nc.backward((nc.l2_normalize(x) * Tensor([1.0, 2.0])).sum())
    np.testing.assert_array_equal(x.grad, [0.0, 0.0])


def test_cosine_closed_forms():
    u = Tensor([0.3, -1.2, 2.0])
    assert nc.cosine(u, u).item() == pytest.approx(1.0, abs=1e-15)
    assert nc.cosine(Tensor([1.0, 0.0]), Tensor([0.0, 1.0])).item() == 0.0
    assert nc.cosine(Tensor([1.0, 1.0]), Tensor([1.0, 0.0])).item() == pytest.approx(1 / math.sqrt(2), abs=1e-15)
    assert nc.cosine(Tensor([0.0, 0.0]), Tensor([1.0, 0.0])).item() == 0.0


def test_cosine_dimension_mismatch():
    with pytest.raises(DimensionError):
        nc.cosine(Tensor([1.0, 2.0]), Tensor([1.0, 2.0, 3.0]))


vectors = arrays(np.float64, 4, elements=st.floats(-10, 10, allow_nan=False))


@settings(max_examples=100, deadline=None)
@given(vectors, vectors, st.floats(0.01, 100))
def test_cosine_symmetric_and_scale_invariant(u, v, alpha):
    c = nc.cosine(Tensor(u), Tensor(v)).item()
    assert -1 - 1e-12 <= c <= 1 + 1e-12
    assert nc.cosine(Tensor(v), Tensor(u)).item() == pytest.approx(c, abs=1e-12)
    assert nc.cosine(Tensor(alpha * u), Tensor(v)).item() == pytest.approx(c, abs=1e-12)


def test_topk_examples():
    assert nc.topk(np.array([0.3, 0.9, 0.5]), 2).tolist() == [1, 2]
    assert nc.topk(np.array([0.5, 0.5, 0.1]), 1).tolist() == [0]
    assert sorted(nc.topk(np.array([0.2, 0.1, 0.4, 0.3]), 4).tolist()) == [0, 1, 2, 3]


@pytest.mark.parametrize("k", [0, 4])
def test_topk_k_out_of_range(k):
    with pytest.raises(ValueError):
        nc.topk(np.array([1.0, 2.0, 3.0]), k)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(0, 5), min_size=1, max_size=12), st.data())
def test_topk_is_stable_under_shuffling(values, data):
    # small integer values force many ties
    scores = np.array(values, dtype=np.float64)
    k = data.draw(st.integers(1, len(values)))
    perm = np.array(data.draw(st.permutations(range(len(values)))))
    picked = nc.topk(scores, k)
    picked_shuffled = perm[nc.topk(scores[perm], k)]
    # top values agree; among ties the rule is lowest index, so the value multiset matches
    assert sorted(scores[picked].tolist()) == sorted(scores[picked_shuffled].tolist())
    if len(set(values)) == len(values):
        assert set(picked.tolist()) == set(picked_shuffled.tolist())


def test_topk_orders_by_value_then_index():
    assert nc.topk(np.array([0.1, 0.7, 0.7, 0.9, 0.1]), 5).tolist() == [3, 1, 2, 0, 4]


def test_backward_of_sum_is_ones():
    x = nc.parameter(np.arange(6.0).reshape(2, 3))
    nc.backward(x.sum())
    np.testing.assert_array_equal(x.grad, np.ones((2, 3)))


def test_backward_rejects_non_scalar():
    with pytest.raises(DimensionError):
        nc.backward(nc.parameter([1.0, 2.0]) * 2.0)


def test_backward_shared_subexpression_accumulates():
    x = nc.parameter([2.0])
    y = x * x
    nc.backward((y + y).sum())
    np.testing.assert_allclose(x.grad, [8.0])


def test_graph_replays_each_op_once_in_reverse_order():
    x = nc.parameter([1.0, 2.0])
    a = nc.tanh(x)
    b = a * a
    c = b.sum() + a.sum()
    graph = nc.Graph.trace(c)
    seqs = [op._seq for op in graph.ops]
    assert seqs == sorted(seqs)
    assert len({id(op) for op in graph.ops}) == len(graph.ops)
    assert graph.leaves == [x]


def test_cosine_gradient_matches_finite_differences():
    rng = np.random.default_rng(1)
    u0, v0 = rng.normal(size=5), rng.normal(size=5)
    u, v = nc.parameter(u0), nc.parameter(v0)
    nc.backward(nc.cosine(u, v))
    cos = lambda a, b: float(a @ b / np.linalg.norm(a) / np.linalg.norm(b))
    np.testing.assert_allclose(u.grad, central_difference(lambda x: cos(x, v0), u0.copy()), rtol=1e-6, atol=1e-9)
    np.testing.assert_allclose(v.grad, central_difference(lambda x: cos(u0, x), v0.copy()), rtol=1e-6, atol=1e-9)


def test_finite_diff_check_quadratic():
    x = nc.parameter(np.random.default_rng(2).normal(size=6))
    assert nc.finite_diff_check(lambda ps: nc.square(ps[0]).sum(), [x], eps=1e-5) < 1e-7


def test_finite_diff_check_softmax_cross_entropy():
    rng = np.random.default_rng(3)
    w = nc.parameter(rng.normal(size=(4, 3)))
    x = Tensor(rng.normal(size=(5, 4)))
    target = rng.integers(0, 3, size=5)

    def f(ps):
        logp = nc.log_softmax(nc.matmul(x, ps[0]), axis=1)
        return -nc.mean(logp[np.arange(5), target])

    assert nc.finite_diff_check(f, [w]) < 1e-4


def test_finite_diff_check_detects_wrong_gradient():
    x = nc.parameter([0.5, -0.3])

    def broken(ps):
        y = ps[0]
        out = nc._make(y.data**3, (y,), lambda g: (g * 2 * y.data,), "bad_cube")
        return out.sum()

    assert nc.finite_diff_check(broken, [x]) > 1e-2


UNARY = {
    "tanh": nc.tanh,
    "exp": nc.exp,
    "log": lambda t: nc.log(nc.exp(t) + 1.0),
    "sigmoid": nc.sigmoid,
    "square": nc.square,
    "softmax0": lambda t: nc.softmax(t, axis=0),
    "softmax1": lambda t: nc.softmax(t, axis=1),
    "log_softmax": lambda t: nc.log_softmax(t, axis=1),
    "logsumexp": lambda t: nc.logsumexp(t, axis=1),
    "l2_normalize": lambda t: nc.l2_normalize(t, axis=1),
    "mean0": lambda t: nc.mean(t, axis=0),
    "sum1": lambda t: nc.tsum(t, axis=1, keepdims=True),
    "transpose": nc.transpose,
    "reshape": lambda t: t.reshape(6, 2),
    "getitem": lambda t: t[np.array([0, 2, 2]), 1:],
    "rowwise_cosine": lambda t: nc.rowwise_cosine(t, t[:, ::-1] * 1.0),
    "cosine_table": lambda t: nc.cosine_table(t, t[:2]),
    "concat": lambda t: nc.concat([t, nc.tanh(t)], axis=1),
    "stack": lambda t: nc.stack([t, t * t], axis=2),
    "div": lambda t: t / (nc.square(t) + 1.0),
    "broadcast": lambda t: t * t[0:1] - t[:, 0:1],
}


@pytest.mark.parametrize("name", sorted(UNARY))
def test_op_gradients_at_20_random_points(name):
    op = UNARY[name]
    rng = np.random.default_rng(zlib.crc32(name.encode()))
    weights = rng.normal(size=64)
    worst = 0.0
    for _ in range(20):
        x = nc.parameter(rng.normal(size=(3, 4)))

        def f(ps):
            out = op(ps[0])
            flat = out.reshape(-1)
            return (flat * Tensor(weights[: flat.shape[0]])).sum()

        worst = max(worst, nc.finite_diff_check(f, [x], eps=1e-5))
    assert worst < 1e-4


def test_tensor_serialization_round_trip(tmp_path):
    x = np.random.default_rng(4).normal(size=(2, 3, 4))
    path = tmp_path / "x.bin"
    nc.save_tensor(path, x)
    raw = path.read_bytes()
    assert raw[:16] == np.array([3, 2, 3, 4], dtype="<i4").tobytes()
    assert len(raw) == 16 + 8 * 24
    np.testing.assert_array_equal(nc.load_tensor(path), x)


def test_tensor_serialization_rejects_truncated_payload():
    buf = nc.to_bytes(np.zeros((2, 2)))
    with pytest.raises(ValueError):
        nc.from_bytes(buf[:-8])


def test_scalar_serialization():
    assert nc.from_bytes(nc.to_bytes(np.array(2.5))).shape == ()
