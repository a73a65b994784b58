import math

import numpy as np
import pytest

from mltts import autograd as ag
from mltts.autograd import ContractError, CorruptTapeError, Tensor
from mltts.gradcheck import finite_difference_check

from conftest import SEEDS


def grad_of(f, *params):
    with ag.Tape() as tape:
        loss = f()
    ag.backward(tape, loss)
    return [p.grad for p in params]


# -- worked examples ---------------------------------------------------------
def test_square_sum_gradient():
    x = ag.parameter([3.0])
    (g,) = grad_of(lambda: ag.tsum(x * x), x)
    np.testing.assert_array_equal(g, [6.0])


@pytest.mark.parametrize("shape", [(1,), (4,), (2, 3), (3, 1)])
def test_sum_gradient_is_ones(shape):
    x = ag.parameter(np.random.default_rng(0).standard_normal(shape))
    (g,) = grad_of(lambda: ag.tsum(x), x)
    np.testing.assert_array_equal(g, np.ones(shape))


def test_exp_sum_gradient_matches_oracle():
    x = ag.parameter([0.0, 1.0])
    (g,) = grad_of(lambda: ag.tsum(ag.exp(x)), x)
    np.testing.assert_allclose(g, [1.0, math.e], rtol=1e-12)
    rep = finite_difference_check(lambda: ag.tsum(ag.exp(x)), {"x": x}, h=1e-5)
    assert rep.passed, rep


@pytest.mark.parametrize("c", [-7.0, 0.0, 3.5, 1e3])
def test_softmax_of_constant_is_uniform(c):
    np.testing.assert_allclose(ag.softmax(Tensor([c] * 4)).data, [0.25] * 4, rtol=0, atol=1e-15)


def test_l2_norm_345():
    assert ag.l2_norm(Tensor([3.0, 4.0])).item() == 5.0


@pytest.mark.parametrize("label", range(4))
def test_cross_entropy_uniform(label):
    assert abs(ag.cross_entropy(Tensor(np.zeros(4)), label).item() - math.log(4)) < 1e-12


def test_l2_norm_zero_subgradient():
    x = ag.parameter(np.zeros(3))
    (g,) = grad_of(lambda: ag.l2_norm(x), x)
    np.testing.assert_array_equal(g, np.zeros(3))


# -- errors and tape semantics ---------------------------------------------
@pytest.mark.parametrize("op", [ag.add, ag.mul, ag.sub, ag.div, ag.mse])
def test_shape_mismatch_names_both_shapes(op):
    with pytest.raises(ContractError) as ei:
        op(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 5))))
    msg = str(ei.value)
    assert "2" in msg and "3" in msg and "4" in msg and "5" in msg


def test_matmul_shape_mismatch():
    with pytest.raises(ContractError, match="3"):
        ag.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 2))))


def test_backward_requires_scalar():
    x = ag.parameter(np.ones(3))
    with ag.Tape() as tape:
        y = x * x
    with pytest.raises(ContractError):
        ag.backward(tape, y)


def test_corrupt_tape_detected():
    x = ag.parameter(np.ones(3))
    with ag.Tape() as tape:
        y = ag.tsum(x * x)
    tape.nodes[0].input_ids = (999_999,) + tuple(tape.nodes[0].input_ids[1:])
    with pytest.raises(CorruptTapeError):
        ag.backward(tape, y)


def test_unused_leaf_gets_zero_grad():
    x = ag.parameter(np.ones(3))
    z = ag.parameter(np.full(2, 5.0))
    with ag.Tape() as tape:
        _ = z * 2.0
        loss = ag.tsum(x)
    ag.backward(tape, loss)
    np.testing.assert_array_equal(z.grad, np.zeros(2))


def test_grads_do_not_accumulate_across_backward_calls():
    x = ag.parameter([2.0])
    g1 = grad_of(lambda: ag.tsum(x * x), x)[0].copy()
    g2 = grad_of(lambda: ag.tsum(x * x), x)[0]
    np.testing.assert_array_equal(g1, g2)


def test_no_grad_records_nothing():
    x = ag.parameter(np.ones(2))
    with ag.Tape() as tape:
        with ag.no_grad():
            _ = ag.tsum(x * x)
    assert tape.nodes == []


def test_forward_is_deterministic():
    rng = np.random.default_rng(3)
    a, b = rng.standard_normal((4, 5)), rng.standard_normal((5, 3))
    out1 = ag.softmax(ag.matmul(Tensor(a), Tensor(b))).data
    out2 = ag.softmax(ag.matmul(Tensor(a), Tensor(b))).data
    assert out1.tobytes() == out2.tobytes()


def test_conv1d_rejects_even_kernel():
    with pytest.raises(ContractError):
        ag.conv1d(Tensor(np.ones((4, 2))), Tensor(np.ones((2, 2, 3))), Tensor(np.zeros(3)))


def test_conv1d_matches_direct_loop():
    rng = np.random.default_rng(0)
    x, w, b = rng.standard_normal((5, 2)), rng.standard_normal((3, 2, 4)), rng.standard_normal(4)
    out = ag.conv1d(Tensor(x), Tensor(w), Tensor(b)).data
    xp = np.pad(x, ((1, 1), (0, 0)))
    ref = np.stack([sum(xp[t + k] @ w[k] for k in range(3)) + b for t in range(5)])
    np.testing.assert_allclose(out, ref, rtol=1e-13)


# -- gradient oracle: every primitive, 20 seeds ------------------------------
def _p(rng, *shape, positive=False):
    x = rng.standard_normal(shape)
    return ag.parameter(np.abs(x) + 0.5 if positive else x)


def case_add(r):
    a, b = _p(r, 3, 4), _p(r, 4)
    return lambda: ag.tsum(ag.tanh(ag.add(a, b))), {"a": a, "b": b}


def case_sub(r):
    a, b = _p(r, 3, 4), _p(r, 3, 4)
    return lambda: ag.tsum(ag.tanh(ag.sub(a, b))), {"a": a, "b": b}


def case_mul(r):
    a, b = _p(r, 3, 4), _p(r, 1, 4)
    return lambda: ag.tsum(ag.mul(a, b)), {"a": a, "b": b}


def case_div(r):
    a, b = _p(r, 3, 4), _p(r, 3, 4, positive=True)
    return lambda: ag.tsum(ag.div(a, b)), {"a": a, "b": b}


def case_matmul(r):
    a, b, v = _p(r, 3, 4), _p(r, 4, 2), _p(r, 2)
    return lambda: ag.tsum(ag.tanh(ag.matmul(ag.matmul(a, b), v))), {"a": a, "b": b, "v": v}


def case_exp(r):
    a = _p(r, 5)
    return lambda: ag.tsum(ag.exp(a)), {"a": a}


def case_log(r):
    a = _p(r, 5, positive=True)
    return lambda: ag.tsum(ag.log(a)), {"a": a}


def case_tanh(r):
    a = _p(r, 2, 3)
    return lambda: ag.tsum(ag.tanh(a) * ag.tanh(a)), {"a": a}


def case_relu(r):
    # keep entries away from the kink
    x = r.standard_normal((3, 3))
    x = np.where(np.abs(x) < 0.05, 0.5, x)
    a = ag.parameter(x)
    return lambda: ag.tsum(ag.relu(a) * ag.relu(a)), {"a": a}


def case_sum_axis(r):
    a = _p(r, 3, 4)
    return lambda: ag.tsum(ag.tanh(ag.tsum(a, axis=0))), {"a": a}


def case_mean(r):
    a = _p(r, 3, 4)
    return lambda: ag.tsum(ag.exp(ag.mean(a, axis=1))) + ag.mean(a), {"a": a}


def case_softmax(r):
    a, w = _p(r, 2, 5), _p(r, 2, 5)
    return lambda: ag.tsum(ag.softmax(a) * w), {"a": a}


def case_log_softmax(r):
    a, w = _p(r, 2, 5), _p(r, 2, 5)
    return lambda: ag.tsum(ag.log_softmax(a, axis=0) * w), {"a": a}


def case_layer_norm(r):
    x, g, b, w = _p(r, 3, 6), _p(r, 6), _p(r, 6), _p(r, 3, 6)
    return lambda: ag.tsum(ag.layer_norm(x, g, b) * w), {"x": x, "g": g, "b": b}


def case_l2_norm(r):
    a = _p(r, 4)
    return lambda: ag.l2_norm(a), {"a": a}


def case_mse(r):
    a, b = _p(r, 3, 2), _p(r, 3, 2)
    return lambda: ag.mse(a, b), {"a": a, "b": b}


def case_cross_entropy(r):
    a = _p(r, 4)
    label = int(r.integers(4))
    return lambda: ag.cross_entropy(a, label), {"a": a}


def case_take(r):
    a = _p(r, 4, 3)
    idx = r.integers(0, 4, size=6)
    return lambda: ag.tsum(ag.tanh(ag.take(a, idx))), {"a": a}


def case_getitem_reshape_transpose(r):
    a = _p(r, 4, 3)
    return lambda: ag.tsum(ag.tanh(ag.transpose(ag.reshape(a[1:3], (3, 2))))), {"a": a}


def case_stack(r):
    a, b = _p(r, 3), _p(r, 3)
    return lambda: ag.tsum(ag.tanh(ag.stack([a, b]))), {"a": a, "b": b}


def case_conv1d(r):
    x, w, b = _p(r, 5, 2), _p(r, 3, 2, 3), _p(r, 3)
    return lambda: ag.tsum(ag.tanh(ag.conv1d(x, w, b))), {"x": x, "w": w, "b": b}


def case_grad_reverse(r):
    a = _p(r, 3)
    # scale -1 turns the reversal into a plain identity that differences can see
    return lambda: ag.tsum(ag.tanh(ag.grad_reverse(a, -1.0))), {"a": a}


CASES = [v for k, v in dict(globals()).items() if k.startswith("case_")]


@pytest.mark.parametrize("seed", SEEDS)
@pytest.mark.parametrize("case", CASES, ids=lambda c: c.__name__[5:])
def test_primitive_gradcheck(case, seed):
    f, params = case(np.random.default_rng(seed))
    rep = finite_difference_check(f, params, h=1e-4, tol=1e-3)
    assert rep.passed, f"{case.__name__} seed {seed}: {rep.worst()}"
