"""Tensor op contracts, gradient checks against central differences, Adam."""

import numpy as np
import numpy.testing as npt
import pytest

from bikefault.numerics import (AdamState, ShapeError, Tensor, adam_step, dropout,
                                layer_norm, masked_fill, matmul, no_grad, softmax_rows)

from conftest import numeric_grad, rel_error


# -- matmul ----------------------------------------------------------------------


def test_matmul_identity():
    a = np.arange(12, dtype=np.float64).reshape(3, 4)
    out = matmul(Tensor(a), Tensor(np.eye(4)))
    npt.assert_array_equal(out.data, a)


def test_matmul_hand_example():
    out = matmul(Tensor([[1.0, 2.0], [3.0, 4.0]]), Tensor([[1.0], [1.0]]))
    npt.assert_array_equal(out.data, [[3.0], [7.0]])


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(ShapeError, match=r"\(3, 4\).*\(3, 2\)"):
        matmul(Tensor(np.zeros((3, 4))), Tensor(np.zeros((3, 2))))


def test_matmul_transpose_identity():
    rng = np.random.default_rng(3)
    a = rng.standard_normal((4, 5))
    b = rng.standard_normal((5, 3))
    lhs = np.matmul(a, b).T
    rhs = matmul(Tensor(b.T.copy()), Tensor(a.T.copy())).data
    npt.assert_allclose(lhs, rhs, atol=1e-9)


def test_matmul_gradcheck_including_broadcast_batches():
    rng = np.random.default_rng(11)
    shapes = [((3, 4), (4, 2)), ((2, 3, 4), (4, 5)), ((2, 2, 3, 4), (2, 2, 4, 3))]
    for sa, sb in shapes:
        a = Tensor(rng.standard_normal(sa), requires_grad=True)
        b = Tensor(rng.standard_normal(sb), requires_grad=True)
        w = rng.standard_normal(np.matmul(a.data, b.data).shape)
        (matmul(a, b) * Tensor(w)).sum().backward()

        def f():
            return float((np.matmul(a.data, b.data) * w).sum())

        assert rel_error(a.grad, numeric_grad(f, a.data)) < 1e-4
        assert rel_error(b.grad, numeric_grad(f, b.data)) < 1e-4


# -- softmax ---------------------------------------------------------------------


def test_softmax_symmetry():
    npt.assert_allclose(softmax_rows(Tensor([0.0, 0.0])).data, [0.5, 0.5])


def test_softmax_closed_form():
    out = softmax_rows(Tensor([np.log(2.0), 0.0])).data
    npt.assert_allclose(out, [2.0 / 3.0, 1.0 / 3.0], atol=1e-9)


def test_softmax_extreme_logits_no_overflow():
    out = softmax_rows(Tensor([1000.0, 0.0])).data
    assert np.isfinite(out).all()
    npt.assert_allclose(out, [1.0, 0.0])


def test_softmax_rows_are_simplex():
    rng = np.random.default_rng(5)
    x = rng.standard_normal((6, 9)) * 30.0
    out = softmax_rows(Tensor(x)).data
    assert (out >= 0).all()
    npt.assert_allclose(out.sum(axis=-1), 1.0, atol=1e-6)


# -- layer norm -------------------------------------------------------------------


def test_layer_norm_constant_row_is_zero():
    out = layer_norm(Tensor([[5.0, 5.0, 5.0]]), Tensor(np.ones(3)), Tensor(np.zeros(3)))
    npt.assert_allclose(out.data, 0.0, atol=1e-9)


def test_layer_norm_two_values():
    out = layer_norm(Tensor([1.0, 3.0]), Tensor(np.ones(2)), Tensor(np.zeros(2)))
    npt.assert_allclose(out.data, [-1.0, 1.0], atol=1e-5)


def test_layer_norm_gradcheck():
    rng = np.random.default_rng(7)
    x = Tensor(rng.standard_normal((3, 6)), requires_grad=True)
    gain = Tensor(rng.standard_normal(6), requires_grad=True)
    bias = Tensor(rng.standard_normal(6), requires_grad=True)
    w = rng.standard_normal((3, 6))
    (layer_norm(x, gain, bias) * Tensor(w)).sum().backward()

    def f():
        mu = x.data.mean(-1, keepdims=True)
        var = ((x.data - mu) ** 2).mean(-1, keepdims=True)
        xhat = (x.data - mu) / np.sqrt(var + 1e-5)
        return float(((xhat * gain.data + bias.data) * w).sum())

    for t in (x, gain, bias):
        assert rel_error(t.grad, numeric_grad(f, t.data)) < 1e-4


# -- backward contract ------------------------------------------------------------


def test_backward_of_sum_is_ones():
    x = Tensor(np.array([1.0, -2.0, 4.0]), requires_grad=True)
    x.sum().backward()
    npt.assert_array_equal(x.grad, [1.0, 1.0, 1.0])


def test_backward_of_square_sum():
    x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    (x * x).sum().backward()
    npt.assert_allclose(x.grad, [2.0, 4.0])


def test_backward_rejects_nonscalar():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ShapeError, match="scalar"):
        (x * x).backward()


def test_backward_two_consumers_sum_contributions():
    rng = np.random.default_rng(9)
    x = Tensor(rng.standard_normal(4), requires_grad=True)
    w1 = rng.standard_normal(4)
    w2 = rng.standard_normal(4)
    y = (x * Tensor(w1)).sum() + (x.relu() * Tensor(w2)).sum()
    y.backward()

    def f():
        return float((x.data * w1).sum() + (np.maximum(x.data, 0) * w2).sum())

    assert rel_error(x.grad, numeric_grad(f, x.data)) < 1e-4


def test_backward_accumulates_across_calls():
    x = Tensor(np.array([3.0]), requires_grad=True)
    x.sum().backward()
    x.sum().backward()
    npt.assert_array_equal(x.grad, [2.0])


def test_no_grad_blocks_tape():
    x = Tensor(np.ones(3), requires_grad=True)
    with no_grad():
        y = (x * x).sum()
    assert not y.requires_grad and y._vjp is None


# -- elementwise / reduction / shape ops gradcheck ---------------------------------


def test_gradcheck_every_op_randomized():
    rng = np.random.default_rng(21)

    def check(build, reference, *leaves):
        build().backward()
        f = lambda: float(reference())  # noqa: E731
        for leaf in leaves:
            assert rel_error(leaf.grad, numeric_grad(f, leaf.data)) < 1e-4
            leaf.zero_grad()

    a = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
    b = Tensor(rng.standard_normal((4,)), requires_grad=True)
    w = rng.standard_normal((3, 4))
    check(lambda: ((a + b) * Tensor(w)).sum(), lambda: ((a.data + b.data) * w).sum(), a, b)
    check(lambda: ((a - b) * Tensor(w)).sum(), lambda: ((a.data - b.data) * w).sum(), a, b)
    check(lambda: ((a * b) * Tensor(w)).sum(), lambda: ((a.data * b.data) * w).sum(), a, b)
    check(lambda: ((-a) * Tensor(w)).sum(), lambda: ((-a.data) * w).sum(), a)
    check(lambda: (a.relu() * Tensor(w)).sum(), lambda: (np.maximum(a.data, 0) * w).sum(), a)
    check(lambda: (a.abs() * Tensor(w)).sum(), lambda: (np.abs(a.data) * w).sum(), a)
    check(lambda: (a.clip(-0.5, 0.5) * Tensor(w)).sum(),
          lambda: (np.clip(a.data, -0.5, 0.5) * w).sum(), a)

    pos = Tensor(rng.uniform(0.5, 2.0, (3, 4)), requires_grad=True)
    check(lambda: (pos.log() * Tensor(w)).sum(), lambda: (np.log(pos.data) * w).sum(), pos)

    w1 = rng.standard_normal(3)
    check(lambda: (a.sum(axis=1) * Tensor(w1)).sum(), lambda: (a.data.sum(axis=1) * w1).sum(), a)
    check(lambda: (a.mean(axis=0) * Tensor(np.ones(4))).sum(),
          lambda: a.data.mean(axis=0).sum(), a)
    w2 = rng.standard_normal((4, 3))
    check(lambda: (a.transpose((1, 0)) * Tensor(w2)).sum(), lambda: (a.data.T * w2).sum(), a)
    w3 = rng.standard_normal(12)
    check(lambda: (a.reshape(12) * Tensor(w3)).sum(), lambda: (a.data.reshape(12) * w3).sum(), a)

    x = Tensor(rng.standard_normal((2, 5)), requires_grad=True)
    ws = rng.standard_normal((2, 5))
    check(lambda: (softmax_rows(x) * Tensor(ws)).sum(),
          lambda: ((lambda e: e / e.sum(-1, keepdims=True))(
              np.exp(x.data - x.data.max(-1, keepdims=True))) * ws).sum(), x)

    xm = Tensor(rng.standard_normal((2, 4, 3)), requires_grad=True)
    tok = Tensor(rng.standard_normal(3), requires_grad=True)
    mask = rng.random((2, 4)) < 0.5
    wm = rng.standard_normal((2, 4, 3))
    check(lambda: (masked_fill(xm, mask, tok) * Tensor(wm)).sum(),
          lambda: (np.where(mask[..., None], tok.data, xm.data) * wm).sum(), xm, tok)


def test_dropout_eval_is_identity_and_train_scales():
    x = Tensor(np.ones((4, 4)))
    assert dropout(x, 0.5, np.random.default_rng(0), training=False) is x
    out = dropout(x, 0.5, np.random.default_rng(0), training=True).data
    assert set(np.unique(out)).issubset({0.0, 2.0})


# -- Adam -------------------------------------------------------------------------


def test_adam_zero_gradient_leaves_parameters():
    p = {"w": np.array([1.0, 2.0])}
    adam_step(p, {"w": np.zeros(2)}, AdamState(lr=0.1))
    npt.assert_array_equal(p["w"], [1.0, 2.0])


def test_adam_first_step_closed_form():
    p = {"w": np.array([0.0])}
    adam_step(p, {"w": np.array([1.0])}, AdamState(lr=0.1))
    npt.assert_allclose(p["w"], [-0.1], atol=1e-6)


def test_adam_deterministic():
    def run():
        rng = np.random.default_rng(13)
        p = {"w": np.zeros(4)}
        st = AdamState(lr=0.01)
        for _ in range(25):
            adam_step(p, {"w": rng.standard_normal(4)}, st)
        return p["w"]

    npt.assert_array_equal(run(), run())


def test_adam_shape_mismatch():
    with pytest.raises(ShapeError):
        adam_step({"w": np.zeros(3)}, {"w": np.zeros(2)}, AdamState())
