import numpy as np
import pytest

from lipsort import constraints as C
from lipsort.activations import AbsoluteValue, FullSort, GroupSort, Identity, MaxMin, ReLU
from lipsort.activations import ABS_IN_WEIGHT, ABS_OUT_WEIGHT
from lipsort.linalg import singular_spectrum
from lipsort.network import (
    Layer,
    LipschitzNet,
    activation_statistics,
    backward,
    build_net,
    empirical_lipschitz,
    finalize,
    forward,
    input_jacobian,
    input_jacobian_spectral_norm,
    input_jvp,
    load_net,
    save_net,
)

from conftest import central_diff


def _linear(w):
    w = np.asarray(w, dtype=float)
    return LipschitzNet([Layer(w, np.zeros(w.shape[0]))])


def _param_fd(net, x, g, h=1e-6):
    """Central differences of sum(g * f(x)) in every raw weight and bias."""
    out = []
    for layer in net.layers:
        pair = []
        for arr in (layer.weight, layer.bias):
            num = np.zeros_like(arr)
            for idx in np.ndindex(arr.shape):
                old = arr[idx]
                arr[idx] = old + h
                layer.touch()
                up = np.sum(g * forward(net, x)[0])
                arr[idx] = old - h
                layer.touch()
                down = np.sum(g * forward(net, x)[0])
                arr[idx] = old
                layer.touch()
                num[idx] = (up - down) / (2 * h)
            pair.append(num)
        out.append(pair)
    return out


def test_forward_examples():
    net = _linear(np.eye(3))
    np.testing.assert_array_equal(net(np.array([1.0, -2.0, 3.0])), [1, -2, 3])
    abs_net = LipschitzNet([
        Layer(ABS_IN_WEIGHT, np.zeros(2), activation=MaxMin()),
        Layer(ABS_OUT_WEIGHT, np.zeros(1)),
    ])
    assert abs_net(np.array([-3.0]))[0] == pytest.approx(3.0, abs=1e-12)
    with pytest.raises(ValueError, match="input width"):
        forward(net, np.zeros(2))


def test_net_validation():
    with pytest.raises(ValueError, match="width mismatch"):
        LipschitzNet([Layer(np.eye(2), np.zeros(2)), Layer(np.eye(3), np.zeros(3))])
    with pytest.raises(ValueError, match="declared K"):
        LipschitzNet([Layer(np.eye(2), np.zeros(2), scale=2.0)], None, 3.0)
    with pytest.raises(ValueError, match="norm family"):
        LipschitzNet([Layer(np.eye(2), np.zeros(2), C.Bjorck())], "inf", 1.0)
    with pytest.raises(ValueError, match="first layer"):
        LipschitzNet([Layer(np.eye(2), np.zeros(2), C.LInfProject()),
                      Layer(np.eye(2), np.zeros(2), C.MixedNorm(2))], "inf", 1.0)
    with pytest.raises(ValueError, match="bias"):
        Layer(np.eye(2), np.zeros(3))


def test_backward_linear_example():
    w = np.array([[1.0, 2.0], [3.0, 4.0]])
    net = _linear(w)
    _, tape = forward(net, np.array([0.5, -1.0]))
    _, dx = backward(net, tape, np.array([1.0, 0.0]))
    np.testing.assert_array_equal(dx, w[0])


def test_stale_tape_is_rejected():
    net = _linear(np.eye(2))
    _, tape = forward(net, np.ones(2))
    net.layers[0].weight[0, 0] = 2.0
    net.layers[0].touch()
    with pytest.raises(RuntimeError, match="stale"):
        backward(net, tape, np.ones(2))


@pytest.mark.parametrize("act", [MaxMin(), GroupSort(3), FullSort(), ReLU(), AbsoluteValue()], ids=str)
def test_input_jacobian_matches_finite_differences(act, rng):
    net = build_net([6, 12, 12, 3], act, C.Bjorck(), seed=int(rng.integers(1 << 30)))
    x = rng.standard_normal(6)
    num = np.stack([central_diff(lambda v: forward(net, v, "final")[0][i], x) for i in range(3)])
    np.testing.assert_allclose(input_jacobian(net, x), num, rtol=1e-5, atol=1e-8)


@pytest.mark.parametrize("constraint", [C.Bjorck(), C.SpectralNormalize(3), C.Unconstrained()], ids=str)
def test_parameter_gradients_match_finite_differences(constraint, rng):
    net = build_net([4, 6, 6, 2], GroupSort(3), constraint, K=2.0, seed=int(rng.integers(1 << 30)))
    for layer in net.layers:
        layer.weight += 0.1 * rng.standard_normal(layer.weight.shape)
        layer.bias += 0.1 * rng.standard_normal(layer.bias.shape)
        layer.touch()
    x = rng.standard_normal((3, 4))
    g = rng.standard_normal((3, 2))
    _, tape = forward(net, x)
    grads, _ = backward(net, tape, g)
    for (dw, db), (nw, nb) in zip(grads, _param_fd(net, x, g)):
        np.testing.assert_allclose(dw, nw, rtol=1e-5, atol=1e-7)
        np.testing.assert_allclose(db, nb, rtol=1e-5, atol=1e-7)


def test_jvp_examples(rng):
    w = rng.standard_normal((3, 4))
    v = rng.standard_normal(4)
    np.testing.assert_allclose(input_jvp(_linear(w), rng.standard_normal(4), v), w @ v, atol=1e-14)
    np.testing.assert_array_equal(input_jvp(_linear(np.eye(4)), np.zeros(4), v), v)
    net = build_net([5, 8, 8, 3], MaxMin(), C.Unconstrained(), seed=4)
    x = rng.standard_normal(5)
    np.testing.assert_allclose(input_jvp(net, x, v[:4].tolist() + [0.3]),
                               input_jacobian(net, x) @ np.r_[v[:4], 0.3], atol=1e-8)


def test_jacobian_spectral_norm(rng):
    assert input_jacobian_spectral_norm(_linear(np.diag([2.0, 1.0])), np.zeros(2)) == pytest.approx(2, abs=1e-6)
    net = finalize(build_net([4, 16, 16, 4], MaxMin(), C.Bjorck(), seed=1))
    for x in rng.standard_normal((500, 4)):
        assert input_jacobian_spectral_norm(net, x, iters=20) <= 1 + 1e-3
    free = build_net([5, 9, 3], ReLU(), C.Unconstrained(), seed=2)
    x = rng.standard_normal(5)
    oracle = singular_spectrum(input_jacobian(free, x))[0]
    assert input_jacobian_spectral_norm(free, x, iters=200) == pytest.approx(oracle, abs=1e-5)


def test_activation_statistics_examples():
    net = LipschitzNet([Layer(np.eye(2), np.zeros(2), activation=ReLU()), Layer(np.eye(2), np.zeros(2))])
    data = np.array([[1.0, 1.0], [1.0, -1.0]])
    assert activation_statistics(net, data, [0.7])[0.7] == 0.5
    pos = np.abs(data) + 1
    assert activation_statistics(net, pos, [0.2, 1.0]) == {0.2: 1.0, 1.0: 1.0}
    assert activation_statistics(net, -pos, [0.01])[0.01] == 0.0
    with pytest.raises(ValueError, match="ReLU"):
        activation_statistics(build_net([2, 4, 1], MaxMin(), C.Bjorck()), data, [0.5])


def test_gradient_norm_preservation(rng):
    net = finalize(build_net([8, 8, 8, 8], MaxMin(), C.Bjorck(), seed=3))
    x = rng.standard_normal((200, 8))
    dy = rng.standard_normal((200, 8))
    _, tape = forward(net, x, "final")
    _, dx = backward(net, tape, dy, param_grads=False)
    ratios = np.linalg.norm(dx, axis=1) / np.linalg.norm(dy, axis=1)
    np.testing.assert_allclose(ratios, 1, atol=1e-4)


def test_relu_units_active_on_full_gradient_path():
    # with ||grad|| = 1 through an orthonormal 2-norm ReLU net, every unit on
    # the path of the gradient must be switched on
    w1 = np.eye(2)
    net = LipschitzNet([Layer(w1, np.zeros(2), C.Bjorck(), ReLU(), enforced=True),
                        Layer(np.array([[1.0, 0.0]]), np.zeros(1), C.Bjorck(), enforced=True)], "2", 1.0)
    x = np.array([[0.7, -0.3], [0.2, 0.5]])
    _, tape = forward(net, x, "final")
    _, dx = backward(net, tape, np.ones((2, 1)), param_grads=False)
    full = np.linalg.norm(dx, axis=1) >= 1 - 1e-6
    z = x @ w1.T
    assert np.all(z[full, 0] > 0)


@pytest.mark.parametrize("family,constraint", [("2", C.Bjorck()), ("inf", C.LInfProject())])
def test_empirical_lipschitz_after_enforcement(family, constraint, rng):
    net = finalize(build_net([6, 16, 16, 2], MaxMin(), constraint, K=3.0, seed=5))
    assert net.norm_family == family
    x1, x2 = rng.standard_normal((2, 2000, 6))
    assert empirical_lipschitz(net, x1, x2).max() <= 3.0 * (1 + 1e-6)


def test_scale_layers_multiply_to_k():
    net = build_net([3, 4, 4, 1], MaxMin(), C.Bjorck(), K=8.0)
    assert [l.scale for l in net.layers] == pytest.approx([2.0, 2.0, 2.0])
    assert net.declared_K == pytest.approx(8.0)


def test_save_load_round_trip(tmp_path, rng):
    net = build_net([5, 8, 8, 3], GroupSort(4), C.Bjorck(iters=2, safe_scale="inf_bound"), K=2.0, seed=7)
    path = tmp_path / "net.lipn"
    save_net(net, path)
    back = load_net(path)
    x = rng.standard_normal((10, 5))
    np.testing.assert_array_equal(forward(back, x)[0], forward(net, x)[0])
    np.testing.assert_array_equal(back(x), net(x))
    assert back.declared_K == net.declared_K and back.norm_family == net.norm_family
    for a, b in zip(net.layers, back.layers):
        assert a.constraint == b.constraint and a.activation == b.activation
        np.testing.assert_array_equal(a.state["u"], b.state["u"])


def test_save_enforced_weights(tmp_path):
    net = finalize(build_net([6, 6, 6], MaxMin(), C.Bjorck(), seed=9))
    save_net(net, tmp_path / "f.lipn")
    back = load_net(tmp_path / "f.lipn")
    for layer in back.layers:
        assert layer.enforced
        np.testing.assert_allclose(singular_spectrum(layer.weight), 1, atol=1e-4)


def test_load_rejects_damaged_files(tmp_path):
    net = build_net([3, 4, 1], ReLU(), C.LInfProject())
    path = tmp_path / "n.lipn"
    save_net(net, path)
    blob = path.read_bytes()
    for bad in (blob[:-3], blob[:10], b"XXXX" + blob[4:], blob + b"\0"):
        path.write_bytes(bad)
        with pytest.raises(ValueError):
            load_net(path)
    path.write_bytes(blob[:4] + (99).to_bytes(4, "little") + blob[8:])
    with pytest.raises(ValueError, match="version"):
        load_net(path)


def test_float32_nets_stay_float32():
    net = build_net([3, 4, 1], MaxMin(), C.Bjorck())
    net.astype(np.float32)
    y, _ = forward(net, np.ones(3))
    assert y.dtype == np.float32
    net.astype(np.float64)
    assert forward(net, np.ones(3))[0].dtype == np.float64
