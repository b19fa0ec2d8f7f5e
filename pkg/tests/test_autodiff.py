import math

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from dcsgl import autodiff as ad
from dcsgl.autodiff import Tensor
from dcsgl.gradcheck import check_function, numeric_grad, primitive_cases


def leaf(a):
    return Tensor(np.asarray(a, dtype=float), requires_grad=True)


def test_matmul_hand_value():
    assert ad.matmul(Tensor([[1, 2]]), Tensor([[3], [4]])).data.tolist() == [[11.0]]


def test_matmul_matches_triple_loop():
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=(3, 4)), rng.normal(size=(4, 2))
    ref = np.array([[sum(a[i, k] * b[k, j] for k in range(4)) for j in range(2)] for i in range(3)])
    np.testing.assert_allclose(ad.matmul(Tensor(a), Tensor(b)).data, ref, atol=1e-12)


def test_matmul_shape_error_names_shapes():
    with pytest.raises(ad.ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
        ad.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))


def test_elementwise_shape_mismatch():
    with pytest.raises(ad.ShapeError):
        ad.mul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((3, 2))))


def test_relu_sign_cases():
    assert ad.relu(Tensor([[-1, 0, 2]])).data.tolist() == [[0, 0, 2]]


def test_softmax_and_mean_rows():
    np.testing.assert_allclose(ad.softmax_rows(Tensor([[0, 0]])).data, [[0.5, 0.5]])
    assert ad.mean_rows(Tensor([[1, 2], [3, 4]])).data.tolist() == [[2, 3]]


def test_mean_rows_empty_pool():
    with pytest.raises(ValueError, match="empty pool"):
        ad.mean_rows(Tensor(np.zeros((0, 3))))


def test_gather_identity_and_accumulation():
    a = leaf([[1.0, 2.0], [3.0, 4.0]])
    assert np.array_equal(ad.gather_rows(a, [0, 1]).data, a.data)
    ad.backward(ad.total(ad.gather_rows(a, [0, 0])))
    np.testing.assert_array_equal(a.grad, [[2, 2], [0, 0]])


def test_gather_out_of_range():
    with pytest.raises(IndexError):
        ad.gather_rows(Tensor(np.zeros((2, 2))), [2])


def test_kl_closed_forms():
    z = np.array([[0.3, -1.2, 2.0]])
    p = np.exp(z) / np.exp(z).sum()
    assert abs(ad.kl_categorical(p, Tensor(z)).item()) < 1e-12
    q_logits = Tensor(np.log([[0.8, 0.2]]))
    assert abs(ad.kl_categorical([1.0, 0.0], q_logits).item() - math.log(1 / 0.8)) < 1e-12
    assert abs(ad.kl_categorical([0.5, 0.5], Tensor([[0.0, 0.0]])).item()) < 1e-15


def test_kl_rejects_non_distribution():
    with pytest.raises(ValueError):
        ad.kl_categorical([0.7, 0.7], Tensor([[0.0, 0.0]]))


def test_kl_clamps_tiny_q():
    # q(present) underflows: the loss is finite and the clamped entry passes no gradient
    z = leaf([[-800.0, 0.0]])
    out = ad.kl_categorical([1.0, 0.0], z)
    assert math.isfinite(out.item()) and abs(out.item() + math.log(ad.PROB_FLOOR)) < 1e-9
    ad.backward(out)
    assert np.all(np.isfinite(z.grad))


def test_cross_entropy_values():
    assert abs(ad.cross_entropy(Tensor([[0.0, 0.0]]), [0]).item() - math.log(2)) < 1e-15
    v = ad.cross_entropy(Tensor([[1000.0, 0.0]]), [0]).item()
    assert math.isfinite(v) and v < 1e-300 + 1e-12
    with pytest.raises(ValueError):
        ad.cross_entropy(Tensor([[0.0, 0.0]]), [2])


def test_backward_relu_sum():
    x = leaf([[1.0, -1.0]])
    ad.backward(ad.total(ad.relu(x)))
    assert x.grad.tolist() == [[1.0, 0.0]]


def test_backward_needs_scalar():
    with pytest.raises(ad.ShapeError):
        ad.backward(leaf([[1.0, 2.0]]))


def test_shared_subexpression_visited_once():
    # y = x*x used twice; d/dx sum(y + y) = 4x
    x = leaf([[1.5, -2.0]])
    y = ad.mul(x, x)
    tape = ad.backward(ad.total(ad.add(y, y)))
    np.testing.assert_allclose(x.grad, 4 * x.data)
    assert len({n.node_id for n in tape.nodes}) == len(tape.nodes)


def test_independent_tapes_give_identical_grads():
    rng = np.random.default_rng(4)
    a, w = rng.normal(size=(5, 3)), rng.normal(size=(3, 2))
    grads = []
    for _ in range(2):
        x = leaf(w)
        ad.backward(ad.cross_entropy(ad.matmul(Tensor(a), x), [0, 1, 1, 0, 1]))
        grads.append(x.grad)
    assert np.array_equal(grads[0], grads[1])


def test_sum_of_product_matches_finite_differences():
    rng = np.random.default_rng(1)
    a, b = rng.normal(size=(3, 4)), rng.normal(size=(3, 4))
    err = check_function(lambda x, y: ad.total(ad.mul(x, y)), [a, b], eps=1e-5)
    assert err < 1e-6


@pytest.mark.parametrize("seed", range(34))
def test_every_primitive_against_finite_differences(seed):
    """Over 100 random shapes per primitive in total (34 seeds x 3 repeats)."""
    rng = np.random.default_rng(seed)
    for _ in range(3):
        for name, build, inputs in primitive_cases(rng):
            assert check_function(build, inputs, eps=1e-5) < 1e-4, name


def test_softmax_gradient_tight():
    rng = np.random.default_rng(7)
    w = rng.normal(size=(3, 5))
    err = check_function(lambda a: ad.total(ad.mul(ad.softmax_rows(a), Tensor(w))), [rng.normal(size=(3, 5))])
    assert err < 1e-6


def test_spmm_dense_and_sparse_agree():
    rng = np.random.default_rng(2)
    m = sp.random(4, 4, density=0.5, random_state=0, format="csr")
    a = rng.normal(size=(4, 3))
    x1, x2 = leaf(a), leaf(a)
    ad.backward(ad.total(ad.spmm(m, x1)))
    ad.backward(ad.total(ad.spmm(m.toarray(), x2)))
    np.testing.assert_allclose(x1.grad, x2.grad, atol=1e-12)


def test_adam_first_step_closed_form():
    p = {"w": np.array([[0.5]])}
    state = {}
    ad.adam_step(p, {"w": np.array([[1.0]])}, state, lr=0.001)
    delta = 0.5 - p["w"][0, 0]
    assert abs(delta - 0.001 * 1.0 / (math.sqrt(1.0) + 1e-8)) < 1e-9


def test_adam_zero_gradient():
    p = {"w": np.array([[0.5, -1.0]])}
    state = {}
    ad.adam_step(p, {"w": np.zeros((1, 2))}, state, lr=0.1)
    assert p["w"].tolist() == [[0.5, -1.0]]
    state["w"] = (np.ones((1, 2)), np.ones((1, 2)), 3)
    ad.adam_step(p, {"w": np.zeros((1, 2))}, state, lr=0.1)
    m, v, t = state["w"]
    np.testing.assert_allclose(m, 0.9)
    np.testing.assert_allclose(v, 0.999)
    assert t == 4


def test_adam_untouched_keys_keep_state():
    p = {"a": np.zeros((1, 1)), "b": np.zeros((1, 1))}
    state = {}
    ad.adam_step(p, {"a": np.ones((1, 1))}, state, lr=0.1)
    assert "b" not in state and p["b"][0, 0] == 0.0


def test_adam_shape_error():
    with pytest.raises(ad.ShapeError):
        ad.adam_step({"w": np.zeros((2, 2))}, {"w": np.zeros((1, 2))}, {}, lr=0.1)


@given(arrays(np.float64, (3, 4), elements=st.floats(-50, 50)))
def test_softmax_rows_are_distributions(a):
    s = ad.softmax_rows(Tensor(a)).data
    assert np.all(s >= 0)
    np.testing.assert_allclose(s.sum(axis=1), 1.0, atol=1e-12)


@given(arrays(np.float64, (2, 3), elements=st.floats(-30, 30)),
       arrays(np.float64, (2, 3), elements=st.floats(0.01, 1)))
def test_kl_is_nonnegative(z, raw):
    p = raw / raw.sum(axis=1, keepdims=True)
    assert ad.kl_categorical(p, Tensor(z)).item() >= -1e-12


def test_numeric_grad_restores_input():
    x = np.array([[1.0, 2.0]])
    before = x.copy()
    numeric_grad(lambda: float((x**2).sum()), x, 1e-5)
    assert np.array_equal(x, before)
