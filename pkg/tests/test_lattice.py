import numpy as np
import pytest

from lipsort import constraints as C
from lipsort.activations import GroupSort, MaxMin, ReLU
from lipsort.lattice import constraint_bounds_hold, fit_separating_line, lattice_combine
from lipsort.network import Layer, LipschitzNet, build_net, finalize


def _line(w, b=0.0):
    w = np.atleast_2d(np.asarray(w, dtype=float))
    return LipschitzNet([Layer(w, [b], C.LInfProject(), enforced=True)], "inf", 1.0)


def worst_row_norm(net):
    """Largest dual row norm over all layers; every entry of the combined net
    is a copy, an identity or a selector, so this can only stay the same."""
    out = 0.0
    for layer in net.layers:
        p = layer.constraint.p if isinstance(layer.constraint, C.MixedNorm) else np.inf
        q = {1: np.inf, 2: 2, np.inf: 1}[p]
        out = max(out, np.max(np.linalg.norm(layer.weight, q, axis=1)))
    return out


def random_net(rng, dim, first=None, act=MaxMin(), min_depth=1):
    depth = int(rng.integers(min_depth, 4))
    widths = [dim] + [2 * int(rng.integers(1, 5)) for _ in range(depth - 1)] + [1]
    net = build_net(widths, act, C.LInfProject(), seed=int(rng.integers(1 << 30)), first_constraint=first)
    for layer in net.layers:
        layer.weight *= 3.0
        layer.bias[:] = rng.standard_normal(layer.bias.shape)
        layer.touch()
    return finalize(net)


def test_abs_from_two_lines():
    net = lattice_combine(_line([1.0]), _line([-1.0]), "max")
    assert net(np.array([2.0]))[0] == 2.0
    assert net(np.array([-1.0]))[0] == 1.0
    assert constraint_bounds_hold(net)


def test_min_of_a_net_with_itself(rng):
    f = random_net(rng, 3)
    net = lattice_combine(f, f, "min")
    x = rng.standard_normal((100, 3))
    np.testing.assert_allclose(net(x), f(x), atol=1e-12)


@pytest.mark.parametrize("first", [None, C.MixedNorm(2), C.MixedNorm(1)], ids=str)
def test_random_pairs_are_exact(first, rng):
    for _ in range(10):
        f, g = random_net(rng, 4, first), random_net(rng, 4, first)
        x = rng.standard_normal((100, 4)) * 3
        for op, fn in (("max", np.maximum), ("min", np.minimum)):
            net = lattice_combine(f, g, op)
            np.testing.assert_allclose(net(x), fn(f(x), g(x)), rtol=0, atol=1e-12)
            assert worst_row_norm(net) <= max(worst_row_norm(f), worst_row_norm(g), 1.0)
            assert constraint_bounds_hold(net, tol=1e-12)
            assert net.declared_K == 1.0


def test_nested_combination(rng):
    f, g, h = (random_net(rng, 2) for _ in range(3))
    net = lattice_combine(lattice_combine(f, g, "max"), h, "max")
    x = rng.standard_normal((200, 2))
    np.testing.assert_allclose(net(x), np.maximum(np.maximum(f(x), g(x)), h(x)), atol=1e-12)


def test_construction_copies_weights_exactly(rng):
    f, g = random_net(rng, 3, min_depth=2), random_net(rng, 3, min_depth=2)
    net = lattice_combine(f, g)
    wf, wg = f.layers[0].weight, g.layers[0].weight
    np.testing.assert_array_equal(net.layers[0].weight[:wf.shape[0]], wf)
    np.testing.assert_array_equal(net.layers[0].weight[wf.shape[0]:], wg)


def test_other_pad_safe_activations(rng):
    for act in (ReLU(), GroupSort(4)):
        widths = [3, 8, 8, 1]
        f = finalize(build_net(widths, act, C.LInfProject(), seed=1))
        g = finalize(build_net(widths[:3] + [1], act, C.LInfProject(), seed=2))
        f.layers[0].bias[:] = rng.standard_normal(8)
        x = rng.standard_normal((50, 3))
        np.testing.assert_allclose(lattice_combine(f, g)(x), np.maximum(f(x), g(x)), atol=1e-12)


def test_rejections():
    two = build_net([2, 4, 1], MaxMin(), C.Bjorck())
    with pytest.raises(ValueError, match="l-inf"):
        lattice_combine(two, two)
    vec = finalize(build_net([2, 4, 2], MaxMin(), C.LInfProject()))
    with pytest.raises(ValueError, match="scalar"):
        lattice_combine(vec, vec)
    scaled = finalize(build_net([2, 4, 1], MaxMin(), C.LInfProject(), K=4.0))
    with pytest.raises(ValueError, match="scaled"):
        lattice_combine(scaled, scaled)
    with pytest.raises(ValueError, match="op"):
        lattice_combine(_line([1.0]), _line([1.0]), "avg")
    relu = finalize(build_net([1, 4, 1], ReLU(), C.LInfProject()))
    with pytest.raises(ValueError, match="single-layer"):
        lattice_combine(_line([1.0]), relu)
    with pytest.raises(ValueError, match="widths"):
        lattice_combine(_line([1.0]), _line([1.0, 1.0]))


def test_separating_line_examples():
    net = fit_separating_line([0.0], [2.0], 0.0, 1.0)
    assert net.layers[0].weight[0, 0] == 0.5
    assert net(np.array([1.0]))[0] == 0.5
    flat = fit_separating_line([0.0, 1.0], [3.0, 1.0], 0.7, 0.7)
    assert not np.any(flat.layers[0].weight)
    with pytest.raises(ValueError, match=r"\|a - b\|"):
        fit_separating_line([0.0], [1.0], 0.0, 2.0)
    with pytest.raises(ValueError, match="differ"):
        fit_separating_line([1.0], [1.0], 0.0, 0.0)


@pytest.mark.parametrize("p", [1, 2, np.inf])
def test_separating_line_random(p, rng):
    for _ in range(100):
        x1, x2 = rng.standard_normal((2, 5))
        dist = np.linalg.norm(x2 - x1, p)
        a = rng.standard_normal()
        b = a + rng.uniform(-1, 1) * dist
        net = fit_separating_line(x1, x2, a, b, p)
        assert abs(net(x1)[0] - a) <= 1e-12 * max(1, abs(a)) * 10
        assert abs(net(x2)[0] - b) <= 1e-12 * max(1, abs(b)) * 10
        assert constraint_bounds_hold(net, tol=1e-12)
