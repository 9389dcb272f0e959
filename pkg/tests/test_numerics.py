import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

import oracles
from gradcases import CASES
from crossutt.numerics import functional as F
from crossutt.numerics.gradcheck import check_gradients
from crossutt.numerics.layers import Dropout, LayerNorm, Linear
from crossutt.numerics.optim import SGD, Adam, sgd_step
from crossutt.numerics.rng import Rng
from crossutt.numerics.tensor import (Parameter, ShapeError, Tensor, default_dtype, matmul,
                                      no_grad)


# -- tensor core ------------------------------------------------------------------

def test_identity_matmul():
    m = np.arange(6.0).reshape(2, 3)
    assert np.array_equal(matmul(Tensor(np.eye(2)), Tensor(m)).data, m)


def test_matmul_hand_example():
    out = matmul(Tensor([[1.0, 2.0], [3.0, 4.0]]), Tensor([[1.0], [1.0]]))
    assert np.array_equal(out.data, [[3.0], [7.0]])


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 2\)"):
        matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 2))))


def test_matmul_gradient_tight(rng):
    f, inputs = CASES["matmul"](rng)
    assert max(check_gradients(f, inputs).values()) < 1e-6


@pytest.mark.parametrize("name", sorted(CASES))
def test_op_gradients(name):
    f, inputs = CASES[name](np.random.default_rng(7))
    errs = check_gradients(f, inputs)
    assert max(errs.values()) < 1e-4, errs


def test_shared_node_visited_once():
    a = Parameter(np.array([2.0]))
    b = a * a
    c = b + b  # b feeds c twice
    (c * c).sum().backward()
    # d/da (2a^2)^2 = 16 a^3
    assert a.grad[0] == pytest.approx(16 * 8)


def test_sum_of_outputs_equals_accumulated_elementwise(rng):
    x = Parameter(rng.normal(size=(3, 4)))
    w = Tensor(rng.normal(size=(4, 2)))
    (x @ w).sum().backward()
    total = x.grad.copy()
    acc = np.zeros_like(total)
    for i in range(3):
        for j in range(2):
            x.grad = None
            (x @ w)[i, j].backward()
            acc += x.grad
    assert np.allclose(total, acc, atol=1e-12)


def test_grad_shape_matches_and_no_grad_records_nothing(rng):
    x = Parameter(rng.normal(size=(2, 3)))
    (x.tanh() * 3).sum().backward()
    assert x.grad.shape == x.shape
    with no_grad():
        y = x * 2
    assert y._parents == () and not y.requires_grad


def test_float32_switch():
    with default_dtype("float32"):
        p = Parameter(np.ones(3))
    assert p.dtype == np.float32
    assert Parameter(np.ones(3)).dtype == np.float64


# -- activations and normalisation ---------------------------------------------------

def test_softmax_examples(rng):
    assert np.allclose(F.softmax(Tensor([0.0, 0.0, 0.0])).data, 1 / 3)
    big = F.softmax(Tensor([1000.0, 0.0])).data
    assert np.all(np.isfinite(big)) and big[0] == pytest.approx(1.0) and big[1] < 1e-300
    s = F.softmax(Tensor(rng.normal(size=(2, 5))), axis=1).data
    assert np.all(np.abs(s.sum(1) - 1) < 1e-12)


def test_softmax_rejects_non_finite():
    with pytest.raises(FloatingPointError):
        F.softmax(Tensor([np.nan, 1.0]))


@given(arrays(np.float64, (3, 4), elements=st.floats(-50, 50)),
       arrays(bool, (3, 4)))
def test_softmax_masked_rows_are_distributions(x, mask):
    mask[:, 0] = True
    y = F.softmax(Tensor(x), axis=-1, mask=mask).data
    assert np.all(y[~mask] == 0)
    assert np.all(np.abs(y.sum(-1) - 1) < 1e-9)


def test_layernorm_examples(rng):
    g, b = Tensor(np.ones(4)), Tensor(np.zeros(4))
    assert np.allclose(F.layernorm(Tensor(np.full(4, 3.0)), g, b).data, 0.0)
    two = F.layernorm(Tensor([1.0, 3.0]), Tensor(np.ones(2)), Tensor(np.zeros(2))).data
    assert np.allclose(two, [-1.0, 1.0], atol=1e-5)
    x = Tensor(rng.normal(3.0, 5.0, size=(6, 64)))
    y = F.layernorm(x, Tensor(np.ones(64)), Tensor(np.zeros(64))).data
    assert np.all(np.abs(y.mean(-1)) < 1e-6)
    assert np.all(np.abs(y.var(-1) - 1) < 1e-6)


def test_batchnorm_running_stats_train_then_eval(rng):
    x = rng.normal(2.0, 3.0, size=(50, 3))
    st = F.BatchNormState(3)
    g, b = Tensor(np.ones(3)), Tensor(np.zeros(3))
    y = F.batchnorm(Tensor(x), g, b, st, training=True).data
    assert np.allclose(y, oracles.batchnorm_train(x, np.ones(3), np.zeros(3)))
    assert np.allclose(st.running_mean, 0.1 * x.mean(0))
    assert np.allclose(st.running_var, 0.9 + 0.1 * x.var(0, ddof=1))
    ev = F.batchnorm(Tensor(x), g, b, st, training=False).data
    assert np.allclose(ev, oracles.batchnorm_eval(x, 1.0, 0.0, st.running_mean, st.running_var))


def test_batchnorm_zero_variance_is_finite():
    st = F.BatchNormState(2)
    y = F.batchnorm(Tensor(np.ones((4, 2))), Tensor(np.ones(2)), Tensor(np.zeros(2)), st, True).data
    assert np.all(y == 0)


def test_activation_examples():
    assert np.array_equal(F.relu(Tensor([-1.0, 2.0])).data, [0.0, 2.0])
    assert F.swish(Tensor([0.0])).data[0] == 0.0
    a = np.array([1.0, -2.0, 3.0])
    assert np.array_equal(F.glu(Tensor(np.concatenate([a, np.zeros(3)]))).data, a * 0.5)
    with pytest.raises(ShapeError):
        F.glu(Tensor(np.ones(5)))


# -- convolutions ---------------------------------------------------------------------

def test_pointwise_identity(rng):
    x = rng.normal(size=(5, 3))
    assert np.array_equal(F.conv1d_pointwise(Tensor(x), Tensor(np.eye(3))).data, x)


def test_depthwise_width_one_ones_is_identity(rng):
    x = rng.normal(size=(5, 3))
    assert np.array_equal(F.conv1d_depthwise(Tensor(x), Tensor(np.ones((1, 3)))).data, x)


@pytest.mark.parametrize("causal", [False, True])
def test_depthwise_matches_sliding_window_oracle(rng, causal):
    x, w, b = rng.normal(size=(9, 4)), rng.normal(size=(5, 4)), rng.normal(size=4)
    got = F.conv1d_depthwise(Tensor(x), Tensor(w), Tensor(b), "causal" if causal else "same").data
    assert np.allclose(got, oracles.depthwise_naive(x, w, b, causal), rtol=0, atol=1e-13)


def test_depthwise_errors():
    # padded length is T + K - 1 under either padding, so only T=0 is too short
    with pytest.raises(ShapeError):
        F.conv1d_depthwise(Tensor(np.ones((0, 3))), Tensor(np.ones((7, 3))))
    with pytest.raises(ShapeError):
        F.conv1d_depthwise(Tensor(np.ones((6, 3))), Tensor(np.ones((4, 3))))


def test_conv2d_matches_naive(rng):
    x, w, b = rng.normal(size=(2, 2, 7, 6)), rng.normal(size=(3, 2, 3, 3)), rng.normal(size=3)
    got = F.conv2d(Tensor(x), Tensor(w), Tensor(b)).data
    assert np.allclose(got, oracles.conv2d_naive(x, w, b), rtol=0, atol=1e-12)


# -- recurrent and lookup ---------------------------------------------------------------

def test_lstm_zero_weights_zero_state():
    z = lambda *s: Tensor(np.zeros(s))
    h, _ = F.lstm_cell(Tensor(np.ones((1, 2))), (z(1, 3), z(1, 3)), z(2, 12), z(3, 12), z(12))
    assert np.array_equal(h.data, np.zeros((1, 3)))


def test_lstm_scalar_hand_oracle():
    wx, wh, b = [0.5, -0.3, 0.8, 0.1], [0.2, 0.4, -0.6, 0.7], [0.1, 0.0, -0.2, 0.3]
    h, c = F.lstm_cell(Tensor([[0.7]]), (Tensor([[-0.2]]), Tensor([[0.4]])),
                       Tensor([wx]), Tensor([wh]), Tensor(b))
    eh, ec = oracles.lstm_step_scalar(0.7, -0.2, 0.4, wx, wh, b)
    assert h.data[0, 0] == pytest.approx(eh, abs=1e-15)
    assert c.data[0, 0] == pytest.approx(ec, abs=1e-15)


def test_embedding_lookup_and_range():
    w = Parameter(np.arange(6.0).reshape(3, 2))
    out = F.embedding(w, [2, 0, 2])
    assert np.array_equal(out.data, [[4, 5], [0, 1], [4, 5]])
    out.sum().backward()
    assert np.array_equal(w.grad, [[1, 1], [0, 0], [2, 2]])
    with pytest.raises(IndexError):
        F.embedding(w, [3])


# -- layers, rng, optimisers ---------------------------------------------------------------

def test_same_seed_same_init():
    a, b = Linear(4, 3, Rng(5)), Linear(4, 3, Rng(5))
    assert np.array_equal(a.weight.data, b.weight.data)
    assert not np.array_equal(a.weight.data, Linear(4, 3, Rng(6)).weight.data)
    assert np.array_equal(a.bias.data, np.zeros(3))
    assert np.array_equal(LayerNorm(3).gain.data, np.ones(3))


def test_dropout_inverted_and_disabled_in_eval(rng):
    d = Dropout(0.5)
    d.gen = np.random.default_rng(0)
    x = Tensor(np.ones((200, 50)))
    y = d(x).data
    assert set(np.unique(y)) <= {0.0, 2.0}
    assert abs(y.mean() - 1.0) < 0.05
    d.eval()
    assert d(x) is x


def test_dropout_without_stream_refuses():
    with pytest.raises(RuntimeError):
        Dropout(0.1)(Tensor(np.ones(3)))


def test_zero_grad_leaves_params():
    p = Parameter(np.array([1.0, 2.0]))
    p.grad = np.zeros(2)
    Adam([p], lr=0.1).step()
    sgd_step([p], 1.0)
    assert np.array_equal(p.data, [1.0, 2.0])


def test_sgd_lr_one():
    p = Parameter(np.array([1.0, 2.0]))
    p.grad = np.array([0.5, -1.0])
    SGD([p], 1.0).step()
    assert np.array_equal(p.data, [0.5, 3.0])


def test_adam_quadratic_bowl():
    target = np.array([1.5, -2.0, 0.25])
    curv = Tensor(np.array([1.0, 3.0, 0.5]))
    p = Parameter(np.zeros(3))
    # short-memory moments plus a decaying step settle without ringing
    opt = Adam([p], lr=0.2, betas=(0.5, 0.9), eps=1e-12)
    for step in range(200):
        opt.zero_grad()
        d = p - Tensor(target)
        (d * d * curv).sum().backward()
        opt.step(0.2 * 0.95 ** step)
    assert np.max(np.abs(p.data - target)) < 1e-6


def test_adam_state_round_trip(rng):
    p = Parameter(rng.normal(size=3))
    opt = Adam([p], lr=0.01)
    p.grad = rng.normal(size=3)
    opt.step()
    state = {k: v.copy() for k, v in opt.state_arrays().items()}
    opt2 = Adam([Parameter(p.data.copy())], lr=0.01)
    opt2.load_state_arrays(state, opt.t)
    g = rng.normal(size=3)
    p.grad = g
    opt2.params[0].grad = g.copy()
    opt.step()
    opt2.step()
    assert np.array_equal(p.data, opt2.params[0].data)
