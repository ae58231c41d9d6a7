import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from afm import autodiff as ad
from afm.autodiff import OptimizerState, SGDMomentum, Tape, Tensor
from afm.errors import MissingGradientError, ShapeError, TapeError

from conftest import max_grad_rel_error


def param(x):
    return Tensor(np.asarray(x, dtype=np.float64), requires_grad=True)


def test_matmul_hand_value():
    out = ad.matmul(Tensor([[1.0, 2.0], [3.0, 4.0]]), Tensor([[1.0], [1.0]]))
    np.testing.assert_array_equal(out.data, [[3.0], [7.0]])


def test_sigmoid_at_zero():
    assert ad.sigmoid(Tensor(0.0)).item() == 0.5


def test_log_derivative():
    x = param([2.0])
    with Tape() as tape:
        y = ad.sum(ad.log(x))
    ad.backward(tape, y)
    assert x.grad[0] == pytest.approx(0.5, abs=1e-15)


def test_shape_error_names_op_and_shapes():
    with pytest.raises(ShapeError, match=r"matmul.*\(2, 3\).*\(2, 3\)"):
        ad.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))
    with pytest.raises(ShapeError, match="add"):
        ad.add(Tensor(np.ones((2, 3))), Tensor(np.ones((4,))))


def test_backward_sum_and_square():
    p = param([1.0, 2.0, 3.0])
    with Tape() as tape:
        loss = ad.sum(p)
    ad.backward(tape, loss)
    np.testing.assert_array_equal(p.grad, [1, 1, 1])

    p.grad = None
    with Tape() as tape:
        loss = ad.sum(ad.mul(p, p))
    ad.backward(tape, loss)
    np.testing.assert_array_equal(p.grad, [2, 4, 6])


def test_non_scalar_loss_rejected():
    p = param([1.0, 2.0])
    with Tape() as tape:
        y = ad.mul(p, 2.0)
    with pytest.raises(TapeError, match="scalar"):
        ad.backward(tape, y)


def test_double_backward_is_an_error():
    p = param([1.0, 2.0])
    with Tape() as tape:
        loss = ad.sum(ad.mul(p, p))
    ad.backward(tape, loss)
    with pytest.raises(TapeError, match="already"):
        ad.backward(tape, loss)


def test_stale_gradient_is_an_error_not_accumulated():
    p = param([1.0, 2.0])
    for expect_error in (False, True):
        with Tape() as tape:
            loss = ad.sum(p)
        if expect_error:
            with pytest.raises(TapeError, match="zero_grad"):
                ad.backward(tape, loss)
        else:
            ad.backward(tape, loss)
    ad.zero_grad([p])
    with Tape() as tape:
        loss = ad.sum(p)
    ad.backward(tape, loss)
    np.testing.assert_array_equal(p.grad, [1, 1])


def test_no_recording_outside_tape():
    p = param([1.0])
    y = ad.mul(p, p)
    assert y.adjoint is None and not y.requires_grad


# --- gradient reversal ------------------------------------------------------


@pytest.mark.parametrize("lam", [60.0, 1.0, 0.5, 0.0])
def test_grl_forward_identity_backward_reversed(lam):
    x = param([1.5, -2.0])
    with Tape() as tape:
        y = ad.grl(x, lam)
        loss = ad.sum(y)
    assert y.data.tobytes() == x.data.tobytes()
    ad.backward(tape, loss)
    np.testing.assert_array_equal(x.grad, [-lam, -lam])


def test_grl_scales_arbitrary_upstream(rng):
    x = param(rng.normal(size=(4, 3)))
    w = rng.normal(size=(4, 3))
    with Tape() as tape:
        loss = ad.sum(ad.mul(ad.grl(x, 60.0), w))
    ad.backward(tape, loss)
    np.testing.assert_array_equal(x.grad, -60.0 * w)


def test_grl_rejects_negative_coefficient():
    with pytest.raises(ValueError):
        ad.grl(Tensor([1.0]), -1.0)


# --- finite differences -----------------------------------------------------

UNARY = {
    "sigmoid": ad.sigmoid,
    "tanh": ad.tanh,
    "exp": ad.exp,
    "softmax": ad.softmax,
    "log": lambda a: ad.log(ad.add(ad.mul(a, a), 1.0)),
    "relu": lambda a: ad.relu(ad.add(a, 0.1)),
    "getitem": lambda a: a[1:, ::2],
    "mean0": lambda a: ad.mean(a, axis=0),
    "neg_scale": lambda a: ad.scale(ad.neg(a), 3.0),
    "clamp": lambda a: ad.clamp(a, lo=-0.5, hi=0.5),
}


@pytest.mark.parametrize("name", sorted(UNARY))
def test_unary_op_matches_finite_differences(name, rng):
    a = param(rng.normal(size=(3, 4)))
    w = rng.normal(size=UNARY[name](a).shape)
    fn = lambda: ad.sum(ad.mul(UNARY[name](a), w))  # noqa: E731
    assert max_grad_rel_error(fn, [a]) <= 1e-4


def test_binary_ops_with_broadcast_match_finite_differences(rng):
    a = param(rng.normal(size=(5, 3)))
    b = param(rng.normal(size=(3,)))
    m = param(rng.normal(size=(3, 2)))
    idx = rng.integers(0, 2, size=5)

    def fn():
        h = ad.sub(ad.mul(ad.add(a, b), a), b)
        z = ad.concat([ad.matmul(h, m), ad.tanh(h[:, :2])], axis=0)
        return ad.sum(ad.log(ad.pick(ad.softmax(z[:5]), idx)))

    assert max_grad_rel_error(fn, [a, b, m]) <= 1e-4


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2 ** 31 - 1), depth=st.integers(1, 4))
def test_random_graph_matches_finite_differences(seed, depth):
    rng = np.random.default_rng(seed)
    x = param(rng.normal(size=(3, 4)))
    w = param(rng.normal(size=(4, 4)) * 0.5)
    b = param(rng.normal(size=(4,)))
    choices = rng.integers(0, 4, size=depth)
    probe = rng.normal(size=(3, 4))

    def fn():
        h = x
        for c in choices:
            h = ad.add(ad.matmul(h, w), b)
            h = (ad.sigmoid, ad.tanh, ad.softmax, lambda t: ad.mul(t, t))[c](h)
        return ad.sum(ad.mul(h, probe))

    assert max_grad_rel_error(fn, [x, w, b]) <= 1e-4


def test_gradient_is_linear_over_frames(rng):
    w = param(rng.normal(size=(3, 2)))
    frames = rng.normal(size=(2, 3))

    def grad_of(rows):
        w.grad = None
        with Tape() as tape:
            loss = ad.sum(ad.tanh(ad.matmul(Tensor(rows), w)))
        ad.backward(tape, loss)
        return w.grad.copy()

    whole = grad_of(frames)
    split = grad_of(frames[:1]) + grad_of(frames[1:])
    np.testing.assert_allclose(whole, split, rtol=1e-12, atol=1e-14)


# --- optimizer --------------------------------------------------------------


def test_sgd_plain_reduction():
    p = param([1.0])
    p.grad = np.array([0.5])
    opt = SGDMomentum({"p": p}, lr=1.0, momentum=0.0)
    opt.step()
    assert p.data[0] == 0.5


def test_sgd_momentum_two_steps():
    p = param([0.0])
    opt = SGDMomentum({"p": p}, lr=1.0, momentum=0.5)
    for _ in range(2):
        opt.zero_grad()
        p.grad = np.array([1.0])
        opt.step()
    assert p.data[0] == -2.5
    assert opt.state.step == 2
    np.testing.assert_array_equal(opt.state.buffers["p"], [1.5])


def test_sgd_zero_grad_zero_buffer_is_noop(rng):
    p = param(rng.normal(size=(3, 2)))
    before = p.data.copy()
    p.grad = np.zeros_like(p.data)
    ad.sgd_momentum_step({"p": p}, OptimizerState(lr=0.1, momentum=0.5))
    np.testing.assert_array_equal(p.data, before)


def test_sgd_missing_gradient_names_parameter():
    p = param([1.0])
    with pytest.raises(MissingGradientError, match="'weight'"):
        SGDMomentum({"weight": p}, lr=0.1).step()


def test_precision_modes():
    with ad.precision(np.float32):
        assert Tensor([1.0]).dtype == np.float32
    assert Tensor([1.0]).dtype == np.float64
    a = Tensor(np.ones(2, dtype=np.float32))
    assert ad.sub(1.0, a).dtype == np.float32
