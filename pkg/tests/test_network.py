import numpy as np
import pytest

from fieldlearn import diffops
from fieldlearn.autodiff import Tape, mlp_jet
from fieldlearn.errors import ShapeError
from fieldlearn.network import (Mlp, MlpSpec, forward, init, load_params, save_params, split_widths,
                                validate_for_operator)


def test_param_count():
    expected = 2 * 100 + 100 + 100 * 50 + 50 + 50 * 1 + 1
    assert expected == 5401
    assert MlpSpec((2, 100, 50, 1)).n_params() == expected
    assert init(MlpSpec((2, 100, 50, 1)), 0).size == expected


def test_init_is_deterministic_per_seed():
    spec = MlpSpec((2, 1), ("identity",))
    assert np.array_equal(init(spec, 0), init(spec, 0))
    big = MlpSpec((3, 8, 2))
    assert not np.array_equal(init(big, 0), init(big, 1))


def test_init_statistics():
    spec = MlpSpec((100, 100, 1))
    theta = init(spec, 5)
    (W, b), _ = spec.unpack(theta)
    w = W.ravel()                                    # 10 000 draws
    limit = np.sqrt(6.0 / 200)
    sigma = limit / np.sqrt(3.0)
    assert abs(w.mean()) < 3 * sigma / np.sqrt(w.size)
    assert np.all(np.abs(w) <= limit)
    assert w.std() == pytest.approx(sigma, rel=0.03)
    assert np.all(b == 0)


def test_spec_validation():
    with pytest.raises(ShapeError):
        MlpSpec((2,))
    with pytest.raises(ShapeError):
        MlpSpec((2, 0, 1))
    with pytest.raises(ShapeError):
        MlpSpec((2, 3, 1), ("tanh", "tanh"))
    with pytest.raises(ShapeError):
        MlpSpec((2, 3, 1), ("tanh",))
    with pytest.raises(ValueError):
        MlpSpec((2, 3, 1), ("softplus", "identity"))
    assert MlpSpec((2, 3, 4, 1), "sin").activations == ("sin", "sin", "identity")


def test_forward_examples():
    spec = MlpSpec((3, 3, 3), ("identity", "identity"))
    eye = np.eye(3).ravel()
    theta = np.concatenate([eye, np.zeros(3), eye, np.zeros(3)])
    x = np.array([0.3, -1.2, 4.0])
    np.testing.assert_array_equal(forward(spec, theta, x), x)
    one = MlpSpec((1, 1, 1), ("tanh", "identity"))
    assert forward(one, np.array([1.0, 0.0, 1.0, 0.0]), [0.5])[0] == pytest.approx(0.46212, abs=5e-6)


def test_forward_shape_error():
    spec = MlpSpec((2, 3, 1))
    with pytest.raises(ShapeError):
        forward(spec, init(spec, 0), [1.0, 2.0, 3.0])
    with pytest.raises(ShapeError):
        forward(spec, np.zeros(3), [1.0, 2.0])


def test_forward_matches_order_zero_jets():
    spec = MlpSpec((2, 9, 4, 3), "sigmoid")
    theta = init(spec, 2)
    X = np.random.default_rng(0).uniform(-3, 3, (40, 2))
    assert np.array_equal(mlp_jet(Tape(), spec, theta, X, 0).value[:, 0], forward(spec, theta, X))


def test_validate_for_operator():
    tanh = MlpSpec((2, 5, 1), "tanh")
    relu = MlpSpec((2, 5, 1), "relu")
    relu3 = MlpSpec((3, 5, 1), "relu")
    assert validate_for_operator(tanh, diffops.airy_strain(0.28)) is None
    assert validate_for_operator(MlpSpec((2, 5, 1), "sigmoid"), diffops.airy_strain(0.28)) is None
    assert validate_for_operator(MlpSpec((2, 5, 1), "sin"), diffops.rot_grad2d()) is None
    assert "relu" in validate_for_operator(relu3, diffops.grad(3))
    assert validate_for_operator(relu, diffops.OperatorMatrix.identity(1, 2)) is None


def test_split_widths():
    assert split_widths(21) == (14, 7)
    assert split_widths(3) == (2, 1)
    assert split_widths(150) == (100, 50)
    with pytest.raises(ValueError):
        split_widths(20)


def test_params_round_trip(tmp_path):
    spec = MlpSpec((2, 4, 3), "tanh")
    theta = init(spec, 11)
    save_params(tmp_path / "net.bin", spec, theta, seed=11)
    spec2, theta2, seed = load_params(tmp_path / "net.bin")
    assert spec2 == spec and seed == 11
    assert np.array_equal(theta, theta2)
    assert (tmp_path / "net.bin").stat().st_size == 8 * theta.size


def test_mlp_wrapper():
    net = Mlp.initialised(MlpSpec((2, 3, 2)), 0)
    assert net.dim == 2 and net.out_dim == 2
    assert net.jet(np.zeros((1, 2)), 2).shape == (1, 7, 2)
