import numpy as np
import pytest

from fieldlearn import autodiff
from fieldlearn.autodiff import (ACTIVATIONS, Jet2, Tape, component_index, eval_jet, loss_gradient,
                                 mlp_jet, n_components, seed_jet, value_and_gradient)
from fieldlearn.diffops import operator_jet_map, rot_grad2d
from fieldlearn.errors import CapabilityError, ShapeError
from fieldlearn.model import ConstrainedModel
from fieldlearn.network import MlpSpec, forward, init

from oracles import fd_hessian, fd_jacobian, fd_param_gradient, random_net, rel_err


def test_layout():
    assert n_components(2, 0) == 1 and n_components(2, 1) == 3 and n_components(2, 2) == 7
    assert component_index((0, 0)) == 0
    assert component_index((0, 1)) == 2
    assert component_index((1, 1)) == 1 + 2 + 1
    assert component_index((0, 2)) == 1 + 2 + 3
    with pytest.raises(CapabilityError):
        n_components(2, 3)


@pytest.mark.parametrize("name", ["tanh", "sigmoid", "sin", "exp", "identity"])
def test_activation_derivatives(name):
    fn = ACTIVATIONS[name].fn
    z = np.linspace(-2, 2, 9)
    vals = fn(z, 3)
    h = 1e-5
    for k in range(3):
        fd = (fn(z + h, 3)[k] - fn(z - h, 3)[k]) / (2 * h)
        np.testing.assert_allclose(vals[k + 1], fd, rtol=1e-6, atol=1e-8)


def test_tanh_gradient_example():
    spec = MlpSpec((1, 1, 1), ("tanh", "identity"))
    theta = np.array([2.0, 0.0, 1.0, 0.0])       # w=2, b=0, output weight 1
    (j,) = eval_jet(spec, theta, [0.5], 1)
    assert j.grad[0] == pytest.approx(2 * (1 - np.tanh(1.0) ** 2), rel=1e-12)
    assert j.grad[0] == pytest.approx(0.83995, abs=5e-6)


def test_linear_net_has_zero_hessian():
    spec = MlpSpec((3, 4, 2), ("identity", "identity"))
    theta = init(spec, 0) + 0.1
    for j in eval_jet(spec, theta, [0.3, -0.2, 1.5], 2):
        assert np.all(j.hess == 0.0)


def test_order_zero_matches_forward_bit_exactly():
    rng = np.random.default_rng(0)
    spec, theta = random_net(rng, 3, 2, hidden=(7, 5))
    X = rng.uniform(-1, 1, (25, 3))
    J = mlp_jet(Tape(), spec, theta, X, 0).value
    assert np.array_equal(J[:, 0], forward(spec, theta, X))


@pytest.mark.parametrize("seed", range(50))
def test_input_derivatives_match_finite_differences(seed):
    rng = np.random.default_rng(seed)
    D = int(rng.integers(1, 4))
    K = int(rng.integers(1, 3))
    act = ["tanh", "sigmoid", "sin"][seed % 3]
    spec, theta = random_net(rng, D, K, act=act)
    x = rng.uniform(-1.5, 1.5, D)
    jets = eval_jet(spec, theta, x, 2)
    f = lambda z: forward(spec, theta, z)
    J = fd_jacobian(f, x, h=1e-5)
    H = fd_hessian(f, x, h=1e-4)
    for k, j in enumerate(jets):
        assert rel_err(j.grad, J[k], floor=1e-3) < 1e-4
        assert rel_err(j.hess, H[k], floor=1e-3) < 1e-4
        assert np.array_equal(j.hess, j.hess.T)


def test_jet_hessian_slots_are_symmetric():
    rng = np.random.default_rng(3)
    spec, theta = random_net(rng, 3, 2, hidden=(6,))
    J = mlp_jet(Tape(), spec, theta, rng.uniform(-1, 1, (5, 3)), 2).value
    H = J[:, 4:].reshape(5, 3, 3, 2)
    np.testing.assert_allclose(H, H.transpose(0, 2, 1, 3), rtol=1e-13, atol=1e-15)


def test_linearity_through_block_network():
    rng = np.random.default_rng(4)
    s1, t1 = random_net(rng, 2, 1, hidden=(3,))
    s2, t2 = random_net(rng, 2, 1, hidden=(4,))
    a, b = 0.7, -1.9
    (W1, b1), (V1, c1) = s1.unpack(t1)
    (W2, b2), (V2, c2) = s2.unpack(t2)
    spec = MlpSpec((2, 7, 1), "tanh")
    W = np.vstack([W1, W2])
    V = np.hstack([a * V1, b * V2])
    theta = np.concatenate([W.ravel(), np.concatenate([b1, b2]), V.ravel(), a * c1 + b * c2])
    x = [0.4, -0.8]
    (j,) = eval_jet(spec, theta, x, 2)
    (j1,) = eval_jet(s1, t1, x, 2)
    (j2,) = eval_jet(s2, t2, x, 2)
    assert j.value == pytest.approx(a * j1.value + b * j2.value, abs=1e-12)
    np.testing.assert_allclose(j.grad, a * j1.grad + b * j2.grad, atol=1e-12)
    np.testing.assert_allclose(j.hess, a * j1.hess + b * j2.hess, atol=1e-12)


def test_relu_limits():
    spec = MlpSpec((2, 3, 1), "relu")
    theta = init(spec, 0)
    eval_jet(spec, theta, [0.1, 0.2], 1)
    with pytest.raises(CapabilityError):
        eval_jet(spec, theta, [0.1, 0.2], 2)
    with pytest.raises(CapabilityError):
        eval_jet(spec, theta, [0.1, 0.2], 3)


# -- Jet2 forward mode -------------------------------------------------------

def test_jet2_formula_matches_finite_differences():
    def formula(x1, x2, mod):
        p = x1 * x2
        return mod.exp(p * -0.01) * (mod.sin(p) * x1 * 0.01 - x1 * mod.cos(p))

    x = np.array([1.3, 0.7])
    j = formula(*Jet2.variables(x), autodiff)
    f = lambda z: np.array([formula(z[0], z[1], np)])
    assert rel_err(j.grad, fd_jacobian(f, x)[0]) < 1e-7
    assert rel_err(j.hess, fd_hessian(f, x)[0]) < 1e-5
    assert j.value == pytest.approx(f(x)[0], rel=1e-14)


# -- reverse mode ------------------------------------------------------------

def test_square_gradient():
    val, g = value_and_gradient(lambda t, th: t.sum(t.square(th)), np.array([3.0]))
    assert val == 9.0 and g[0] == 6.0


def test_linear_mse_closed_form():
    spec = MlpSpec((3, 1), ("identity",))
    theta = np.array([0.2, -0.4, 0.9, 0.1])
    x = np.array([[1.5, -2.0, 0.5]])
    y = 0.3

    def loss(t, th):
        F = mlp_jet(t, spec, th, x, 0)
        return t.sum(t.square(t.index(F, (slice(None), 0)) - y))

    yhat = x[0] @ theta[:3] + theta[3]
    expected = np.concatenate([2 * (yhat - y) * x[0], [2 * (yhat - y)]])
    np.testing.assert_allclose(loss_gradient(loss, theta), expected, rtol=0, atol=1e-12)


def _op_cases(rng):
    A = rng.standard_normal((4, 3))
    B = rng.standard_normal((4, 3))
    J = rng.standard_normal((5, 3, 2))
    M = rng.standard_normal((3, 2, 1, 4))
    T = rng.standard_normal((5, 1, 3, 2))
    return [
        ("add", lambda t, v: t.sum(t.add(v, B)), A),
        ("mul", lambda t, v: t.sum(t.mul(v, v * 2.0)), A),
        ("scale", lambda t, v: t.sum(t.scale(v, -3.0)), A),
        ("abs", lambda t, v: t.sum(t.abs(v)), A + np.sign(A)),
        ("mean", lambda t, v: t.mean(t.square(v)), A),
        ("take", lambda t, v: t.sum(t.square(t.take(v, 2, 8, (2, 3)))), A.ravel()),
        ("index", lambda t, v: t.sum(t.square(t.index(v, (slice(1, 3), 0)))), A),
        ("concat", lambda t, v: t.sum(t.square(t.concat([v, v * 3.0], axis=0))), A),
        ("contract", lambda t, v: t.sum(t.square(t.contract(v, M))), J),
        ("weighted", lambda t, v: t.sum(t.square(t.weighted_sum(v, T))), rng.standard_normal(3)),
        ("sub", lambda t, v: t.sum(t.square(1.0 - v)), A),
    ]


@pytest.mark.parametrize("case", range(11))
def test_tape_ops_match_finite_differences(case):
    rng = np.random.default_rng(case)
    name, fn, x0 = _op_cases(rng)[case]
    g = loss_gradient(fn, x0)
    fd = fd_param_gradient(lambda z: value_and_gradient(fn, z)[0], x0.ravel().reshape(x0.shape))
    assert rel_err(g, fd) < 1e-6, name


@pytest.mark.parametrize("seed", range(50))
def test_parameter_gradients_match_finite_differences(seed):
    rng = np.random.default_rng(1000 + seed)
    D = int(rng.integers(1, 4))
    order = int(rng.integers(0, 3))
    act = ["tanh", "sigmoid", "sin"][seed % 3]
    spec, theta = random_net(rng, D, 2, hidden=(int(rng.integers(2, 5)),), act=act)
    X = rng.uniform(-1, 1, (4, D))
    W = rng.standard_normal((4, n_components(D, order), 2))

    def loss(t, th):
        J = mlp_jet(t, spec, th, X, order)
        return t.sum(t.square(J - W))

    g = loss_gradient(loss, theta)
    fd = fd_param_gradient(lambda th: value_and_gradient(loss, th)[0], theta)
    assert rel_err(g, fd, floor=1e-3) < 1e-4


def test_constrained_loss_gradient():
    rng = np.random.default_rng(7)
    spec = MlpSpec((2, 3, 1), "tanh")      # 13 parameters
    model = ConstrainedModel.create(spec, rot_grad2d(), 3)
    X = rng.uniform(0, 4, (6, 2))
    Y = rng.standard_normal((6, 2))

    def loss(t, th):
        F = model.jets(t, th, X, 0)
        return t.mean(t.square(t.index(F, (slice(None), 0)) - Y))

    theta = model.theta + 0.2 * rng.standard_normal(model.theta.size)
    g = loss_gradient(loss, theta)
    fd = fd_param_gradient(lambda th: value_and_gradient(loss, th)[0], theta)
    assert rel_err(g, fd) < 1e-4


def test_second_order_operator_gradient():
    rng = np.random.default_rng(8)
    spec = MlpSpec((2, 4, 1), "tanh")
    from fieldlearn.diffops import airy_strain
    model = ConstrainedModel.create(spec, airy_strain(0.28), 2)
    X = rng.uniform(-1, 1, (5, 2))

    def loss(t, th):
        return t.sum(t.square(t.index(model.jets(t, th, X, 0), (slice(None), 0))))

    g = loss_gradient(loss, model.theta)
    fd = fd_param_gradient(lambda th: value_and_gradient(loss, th)[0], model.theta)
    assert rel_err(g, fd) < 1e-4


def test_gradient_of_unrelated_output_is_zero():
    t = Tape()
    a = t.variable(np.ones(3))
    out = t.constant(np.float64(2.0))
    assert np.all(t.gradient(out, a) == 0)


def test_non_scalar_loss_rejected():
    with pytest.raises(ShapeError):
        value_and_gradient(lambda t, th: t.square(th), np.ones(2))


def test_seed_jet():
    J = seed_jet(np.array([[1.0, 2.0]]), 2)
    assert J.shape == (1, 7, 2)
    np.testing.assert_array_equal(J[0, :3], [[1, 2], [1, 0], [0, 1]])
    assert np.all(J[0, 3:] == 0)


def test_operator_map_on_jets_matches_direct_formula():
    rng = np.random.default_rng(9)
    spec, theta = random_net(rng, 2, 1, hidden=(5,))
    X = rng.uniform(-1, 1, (4, 2))
    J = mlp_jet(Tape(), spec, theta, X, 1).value
    F = Tape().contract(J, operator_jet_map(rot_grad2d())).value[:, 0]
    np.testing.assert_array_equal(F[:, 0], J[:, 2, 0])
    np.testing.assert_array_equal(F[:, 1], -J[:, 1, 0])
