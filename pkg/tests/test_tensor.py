import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import gradcases
from audron.tensor import (ContractError, DimensionError, NumericError, Parameter, Tensor, backward, checkpoint,
                           float64_mode, gradcheck, no_grad, ops)
from audron.tensor.core import make_result
from audron.tensor.gradcheck import relative_error
from audron.tensor.nn import Linear

OPS = gradcases.op_names()


@pytest.mark.parametrize("seed", range(5))
@pytest.mark.parametrize("name", OPS)
def test_op_gradcheck(name, seed):
    report = gradcases.check_op(name, seed)
    assert report.passed, report.failures


def test_backward_sum():
    x = Parameter([1.0, 2.0, 3.0])
    backward(ops.sum(x))
    np.testing.assert_array_equal(x.grad, [1, 1, 1])


def test_backward_quadratic():
    x = Parameter([1.0, -2.0, 3.0])
    backward(ops.scale(ops.sum(ops.mul(x, x)), 0.5))
    np.testing.assert_allclose(x.grad, [1, -2, 3])


def test_two_layer_tanh_net_gradcheck():
    rng = np.random.default_rng(11)
    with float64_mode():
        l1, l2 = Linear(4, 6, rng), Linear(6, 3, rng)
        for p in l1.parameters() + l2.parameters():
            p.data = rng.normal(size=p.shape)
        x = Tensor(rng.normal(size=(5, 4)))
        labels = np.array([0, 2, 1, 1, 0])
        params = l1.parameters() + l2.parameters()
        report = gradcheck(lambda: ops.cross_entropy(l2(ops.tanh(l1(x))), labels), params, h=1e-5, tol=1e-4)
    assert report.passed and report.max_error < 1e-4


def test_non_scalar_loss_rejected():
    with pytest.raises(ContractError):
        backward(ops.add(Parameter(np.ones(3)), Parameter(np.ones(3))))


def test_unreachable_parameter_grad_is_zero():
    lin, other = Linear(3, 2, np.random.default_rng(0)), Linear(3, 2, np.random.default_rng(1))
    for m in (lin, other):
        m.zero_grad()
    backward(ops.sum(lin(Tensor(np.ones((2, 3))))))
    assert np.all(other.weight.grad == 0) and np.any(lin.weight.grad != 0)


def test_shape_mismatch_names_both_shapes():
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(4, 5\)"):
        ops.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 5))))


def test_non_finite_output_raises():
    with pytest.raises(NumericError), np.errstate(over="ignore"):
        ops.mul(Tensor([1e30]), Tensor([1e30]))


def test_identity_examples():
    x = Tensor(np.arange(6.0).reshape(2, 3))
    np.testing.assert_array_equal(ops.linear(x, Tensor(np.eye(3)), Tensor(np.zeros(3))).data, x.data)
    x1 = Tensor(np.random.default_rng(0).normal(size=(2, 3, 7)))
    delta = Tensor(np.eye(3)[:, :, None])
    np.testing.assert_allclose(ops.conv1d(x1, delta).data, x1.data, atol=1e-7)
    np.testing.assert_allclose(ops.softmax(Tensor(np.zeros(4))).data, [0.25] * 4)


def test_sign_flipped_conv2d_backward_scores_two():
    rng = np.random.default_rng(4)
    with float64_mode():
        x, w, b = (Parameter(rng.normal(size=s)) for s in [(2, 2, 5, 5), (3, 2, 3, 3), (3,)])
        proj = Tensor(rng.normal(size=(2, 3, 5, 5)))

        def corrupted():
            good = ops.conv2d(x, w, b, pad=1)
            flipped = make_result(good.data, good._parents,
                                  lambda g: tuple(None if t is None else -t for t in good._backward(g)), "bad")
            return ops.sum(ops.mul(flipped, proj))

        report = gradcheck(corrupted, [x, w, b])
    assert not report.passed
    assert all(abs(e - 2.0) < 1e-6 for e in report.errors.values())


def test_kink_aware_mode_still_catches_corruption():
    rng = np.random.default_rng(5)
    with float64_mode():
        x = Parameter(rng.normal(size=(4, 3)))
        w = Parameter(rng.normal(size=(2, 3)))

        def corrupted():
            good = ops.relu(ops.linear(x, w))
            bad = make_result(good.data, good._parents, lambda g: tuple(1.5 * t for t in good._backward(g)), "bad")
            return ops.sum(bad)

        report = gradcheck(corrupted, [x, w], kink_aware=True)
    assert report.max_error > 0.3


def test_relative_error_definition():
    assert relative_error(np.array(1.0), np.array(-1.0)) == 2.0
    assert relative_error(np.array(0.0), np.array(0.0)) == 0.0


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 6), st.integers(1, 6), st.integers(0, 1))
def test_softmax_is_probability(seed, n, k, axis):
    x = np.random.default_rng(seed).normal(scale=5, size=(n, k))
    y = ops.softmax(Tensor(x), axis=axis).data
    assert np.all(y > 0)
    np.testing.assert_allclose(y.sum(axis=axis), 1.0, atol=1e-6)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 6), st.integers(1, 6))
def test_batchnorm_train_standardizes(seed, n, f):
    x = np.random.default_rng(seed).normal(loc=3, scale=2, size=(n, f))
    with float64_mode():
        out = ops.batchnorm(Tensor(x), Tensor(np.ones(f)), Tensor(np.zeros(f)), np.zeros(f), np.ones(f), True).data
    assert np.all(np.abs(out.mean(axis=0)) < 1e-5)
    var = out.var(axis=0)
    raw_var = x.var(axis=0)
    # eps = 1e-5 shrinks the variance by raw_var / (raw_var + eps)
    np.testing.assert_allclose(var, raw_var / (raw_var + 1e-5), atol=1e-12)
    assert np.all(np.abs(var[raw_var > 0.1] - 1) < 1e-4)


def test_batchnorm_eval_uses_running_stats():
    rm, rv = np.array([1.0, -1.0]), np.array([4.0, 0.25])
    with float64_mode():
        out = ops.batchnorm(Tensor([[3.0, 0.0]]), Tensor(np.ones(2)), Tensor(np.zeros(2)), rm, rv, False).data
    np.testing.assert_allclose(out, [[2 / np.sqrt(4 + 1e-5), 1 / np.sqrt(0.25 + 1e-5)]])


def test_dropout_eval_identity_and_train_expectation():
    x = Tensor(np.ones((10_000, 1)))
    assert ops.dropout(x, 0.3, False) is x
    masks = ops.dropout(x, 0.3, True, np.random.default_rng(0)).data
    assert abs(masks.mean() - 1.0) < 0.02
    np.testing.assert_array_equal(ops.dropout(x, 0.3, True, np.random.default_rng(1)).data,
                                  ops.dropout(x, 0.3, True, np.random.default_rng(1)).data)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.lists(st.integers(1, 4), min_size=1, max_size=4))
def test_concat_then_split_roundtrip(seed, widths):
    rng = np.random.default_rng(seed)
    parts = [rng.normal(size=(3, w)) for w in widths]
    joined = ops.concat([Tensor(p) for p in parts], axis=1)
    edges = np.cumsum([0] + widths)
    for p, lo, hi in zip(parts, edges[:-1], edges[1:]):
        np.testing.assert_array_equal(ops.take(joined, int(lo), int(hi), axis=1).data, p.astype(np.float32))


def test_fan_out_accumulates_exactly_twice():
    rng = np.random.default_rng(2)
    x = Parameter(rng.normal(size=(3, 4)))

    def f():
        return ops.sum(ops.tanh(ops.mul(x, x)))

    backward(f())
    single = x.grad.copy()
    x.grad = None
    backward(ops.add(f(), f()))
    np.testing.assert_array_equal(x.grad, 2 * single)


def test_no_grad_builds_no_graph():
    x = Parameter(np.ones(3))
    with no_grad():
        y = ops.sum(ops.mul(x, x))
    assert not y.requires_grad


def test_maxpool_odd_dims_pad_by_replication():
    x = Tensor(np.arange(9.0).reshape(1, 1, 3, 3))
    np.testing.assert_array_equal(ops.maxpool2d(x).data[0, 0], [[4, 5], [7, 8]])


def test_checkpoint_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    state = {"a.weight": rng.normal(size=(3, 4)).astype(np.float32), "b": np.float32([1.5]),
             "scalar": np.array(2.0, dtype=np.float32)}
    checkpoint.save(state, tmp_path / "x.ckpt")
    blob = (tmp_path / "x.ckpt").read_bytes()
    assert blob.startswith(b"AUDRONCKPT1")
    back = checkpoint.load(tmp_path / "x.ckpt")
    assert list(back) == list(state)
    for k in state:
        np.testing.assert_array_equal(back[k], state[k])


def test_checkpoint_detects_corruption(tmp_path):
    blob = bytearray(checkpoint.encode({"w": np.ones((2, 2), dtype=np.float32)}))
    blob[20] ^= 1
    with pytest.raises(checkpoint.CheckpointError):
        checkpoint.decode(bytes(blob))
    with pytest.raises(checkpoint.CheckpointError):
        checkpoint.decode(b"NOTACKPT" + bytes(20))
