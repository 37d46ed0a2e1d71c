import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qrnn import nn
from qrnn.errors import NumericalError
from qrnn.nn import Adam, Linear, MLP, Parameter, Tensor, grad_check

from oracles import naive_matmul


def test_linear_identity_and_constant():
    rng = np.random.default_rng(0)
    layer = Linear(4, 4, rng)
    layer.weight.data = np.eye(4)
    layer.bias.data = np.zeros(4)
    x = rng.normal(size=(3, 4))
    np.testing.assert_array_equal(layer(x).data, x)
    layer.weight.data = np.zeros((4, 4))
    layer.bias.data = np.full(4, 2.5)
    np.testing.assert_array_equal(layer(x).data, np.full((3, 4), 2.5))


def test_linear_matches_loop_oracle():
    rng = np.random.default_rng(1)
    W = rng.normal(size=(3, 5))
    b = rng.normal(size=3)
    x = rng.normal(size=5)
    y = nn.linear(Tensor(x), Tensor(W), Tensor(b)).data
    np.testing.assert_allclose(y, naive_matmul(W, x) + b, atol=1e-12)


def test_linear_shape_mismatch():
    with pytest.raises(ValueError):
        nn.linear(Tensor(np.zeros(4)), Tensor(np.zeros((3, 5))))


def test_linear_init_bounds():
    layer = Linear(16, 8, np.random.default_rng(2))
    assert np.all(np.abs(layer.weight.data) <= 0.25)
    assert layer.weight.shape == (8, 16)
    assert layer.bias.shape == (8,)


def test_activations_at_known_points():
    assert nn.sigmoid(Tensor(0.0)).data == 0.5
    assert nn.tanh(Tensor(0.0)).data == 0.0
    np.testing.assert_array_equal(nn.relu(Tensor([-3.2, 3.2])).data, [0.0, 3.2])


def test_sigmoid_is_stable_for_large_inputs():
    out = nn.sigmoid(Tensor([-800.0, 800.0])).data
    assert np.all(np.isfinite(out))
    np.testing.assert_allclose(out, [0.0, 1.0])


def test_losses():
    rng = np.random.default_rng(3)
    p = rng.normal(size=(4, 3))
    assert nn.mse_loss(Tensor(p), p).data == 0.0
    assert nn.mse_loss(Tensor(p + 2), p).data == pytest.approx(4.0)
    assert nn.mae_loss(Tensor(p + 2), p).data == pytest.approx(2.0)
    t = rng.normal(size=(4, 3))
    mse = sum((p[i, j] - t[i, j]) ** 2 for i in range(4) for j in range(3)) / 12
    mae = sum(abs(p[i, j] - t[i, j]) for i in range(4) for j in range(3)) / 12
    assert nn.mse_loss(Tensor(p), t).data == pytest.approx(mse, abs=1e-12)
    assert nn.mae_loss(Tensor(p), t).data == pytest.approx(mae, abs=1e-12)
    with pytest.raises(ValueError):
        nn.mse_loss(Tensor(p), t[:, :2])


def test_adam_zero_gradient_keeps_parameters():
    p = Parameter(np.array([1.0, -2.0]))
    opt = Adam([p], lr=0.1)
    opt.step([np.zeros(2)])
    np.testing.assert_array_equal(p.data, [1.0, -2.0])


def test_adam_first_step():
    # bias-corrected moments are g and g^2, so the step is lr * g / (|g| + eps)
    p = Parameter(np.array(0.5))
    opt = Adam([p], lr=0.1)
    opt.step([np.array(1.0)])
    assert p.data == pytest.approx(0.5 - 0.1 / (1.0 + 1e-8), abs=1e-15)


def test_adam_constant_gradient_step_tends_to_lr():
    p = Parameter(np.array(0.0))
    opt = Adam([p], lr=0.01)
    prev = 0.0
    for _ in range(2000):
        opt.step([np.array(3.0)])
        step = prev - float(p.data)
        prev = float(p.data)
    assert step == pytest.approx(0.01, rel=1e-6)


def test_adam_rejects_non_finite_gradient_by_name():
    a, b = Parameter(np.zeros(2)), Parameter(np.zeros(3))
    opt = Adam([a, b], names=["head.weight", "cell.bias"])
    with pytest.raises(NumericalError, match="cell.bias"):
        opt.step([np.zeros(2), np.array([0.0, np.nan, 0.0])])


def test_adam_step_functional_form():
    p = Parameter(np.array([1.0]))
    opt = Adam([p], lr=0.1)
    new = nn.adam_step(opt, [p], [np.array([2.0])])
    assert new[0][0] == pytest.approx(0.9, abs=1e-7)


def test_adam_state_round_trip():
    rng = np.random.default_rng(4)
    p1 = Parameter(rng.normal(size=3))
    p2 = Parameter(p1.data.copy())
    o1, o2 = Adam([p1], lr=0.05), Adam([p2], lr=0.05)
    g = rng.normal(size=(6, 3))
    for i in range(3):
        o1.step([g[i]])
    o2.load_state_dict(o1.state_dict())
    p2.data = p1.data.copy()
    for i in range(3, 6):
        o1.step([g[i]])
        o2.step([g[i]])
    np.testing.assert_array_equal(p1.data, p2.data)


def test_grad_check_quadratic_and_constant():
    x = Parameter(np.array(3.0))
    assert grad_check(lambda: nn.square(x), [x]) < 1e-7
    x.grad = None
    nn.square(x).backward()
    assert x.grad == pytest.approx(6.0)
    c = Parameter(np.array([1.0, 2.0]))
    assert grad_check(lambda: Tensor(5.0) + (c * 0.0).sum(), [c]) == 0.0


def test_grad_check_linear_mse():
    rng = np.random.default_rng(5)
    layer = Linear(5, 3, rng)
    x = rng.normal(size=(4, 5))
    y = rng.normal(size=(4, 3))
    assert grad_check(lambda: nn.mse_loss(layer(x), y), layer.parameters()) < 1e-6


def test_every_op_backward_matches_finite_differences():
    rng = np.random.default_rng(6)
    a = Parameter(rng.normal(size=(3, 4)))
    b = Parameter(rng.normal(size=(3, 4)))

    def f():
        s = nn.sigmoid(a) * nn.tanh(b) - nn.relu(a - 0.1) + nn.absolute(b + 3.0)
        c = nn.concat([s, a[:, 1:3] * 2.0], axis=-1)
        return (nn.square(c).sum(axis=0) * 0.5).mean() + c.reshape(-1)[3] - (1.0 - c).mean()

    assert grad_check(f, [a, b]) < 1e-6


def test_vqc_op_gradients():
    rng = np.random.default_rng(7)
    enc = Parameter(rng.uniform(-2, 2, (2, 3, 3, 3)))
    var = Parameter(rng.uniform(-2, 2, (3, 1, 3, 3)))
    w = rng.normal(size=(2, 3))
    assert grad_check(lambda: (nn.vqc(enc, var, "mean") * w).sum(), [enc, var]) < 1e-6


def test_mlp_structure_and_state_dict():
    rng = np.random.default_rng(8)
    m = MLP((6, 4, 2), rng)
    names = [n for n, _ in m.named_parameters()]
    assert names == ["layers.0.weight", "layers.0.bias", "layers.1.weight", "layers.1.bias"]
    other = MLP((6, 4, 2), np.random.default_rng(9))
    other.load_state_dict(m.state_dict())
    x = rng.normal(size=(2, 6))
    np.testing.assert_array_equal(m(x).data, other(x).data)
    with pytest.raises(ValueError):
        other.load_state_dict({"layers.0.weight": np.zeros((4, 6))})


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 4), st.integers(1, 4), st.integers(1, 3), st.integers(0, 2 ** 32 - 1))
def test_linear_backward_property(n_in, n_out, batch, seed):
    rng = np.random.default_rng(seed)
    layer = Linear(n_in, n_out, rng)
    x = Parameter(rng.normal(size=(batch, n_in)))
    t = rng.normal(size=(batch, n_out))
    assert grad_check(lambda: nn.mse_loss(nn.tanh(layer(x)), t), [x, *layer.parameters()]) < 1e-6


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=1, max_size=10))
def test_activation_ranges(values):
    x = Tensor(np.array(values))
    s = nn.sigmoid(x).data
    assert np.all((s >= 0) & (s <= 1))
    assert np.all(np.abs(nn.tanh(x).data) <= 1)
    assert np.all(nn.relu(x).data >= 0)
