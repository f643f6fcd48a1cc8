import numpy as np
import pytest

from lipsort import constraints as C
from lipsort.activations import MaxMin
from lipsort.attacks import AttackConfig, attack_loss, cw_f6_loss, fgs_attack, pgd_attack
from lipsort.network import Layer, LipschitzNet, build_net, finalize
from lipsort.objectives import certify


def _linear(w, b):
    return LipschitzNet([Layer(np.asarray(w, float), np.asarray(b, float))])


@pytest.fixture
def classifier():
    net = build_net([6, 16, 16, 3], MaxMin(), C.LInfProject(), K=4.0, seed=11)
    rng = np.random.default_rng(0)
    for layer in net.layers:
        layer.weight += rng.standard_normal(layer.weight.shape)
        layer.touch()
    return finalize(net)


def test_cw_f6_examples():
    assert cw_f6_loss([2.0, 0.5], 0) == 1.5
    assert cw_f6_loss([0.5, 2.0], 0) == -1.5
    assert cw_f6_loss([0.5, 2.0], 0, kappa=1.0) == -1.0
    with pytest.raises(ValueError):
        cw_f6_loss([1.0], 0)


def test_config_validation():
    assert AttackConfig(0.3).alpha == pytest.approx(0.03)
    assert AttackConfig(0.3, step_size=0.01).alpha == 0.01
    for bad in (dict(epsilon=-1), dict(epsilon=1, steps=0), dict(epsilon=1, restarts=0),
                dict(epsilon=1, init_scale=2), dict(epsilon=1, loss="l2")):
        with pytest.raises(ValueError):
            AttackConfig(**bad)


def test_fgs_linear_model_moves_along_weight_sign():
    w = np.array([[0.3, -0.2, 0.0, 0.5], [-0.3, 0.2, 0.0, -0.5]])
    net = _linear(w, [0.0, 0.0])
    x = np.full(4, 0.5)
    cfg = AttackConfig(0.1, loss="cross_entropy", box=None)
    delta = fgs_attack(net, x, 0, cfg) - x
    np.testing.assert_allclose(delta, -0.1 * np.sign(w[0] - w[1]))
    np.testing.assert_array_equal(fgs_attack(net, x, 0, AttackConfig(0.0)), x)


def test_outputs_stay_in_ball_and_box(classifier, rng):
    x = rng.uniform(0, 1, (20, 6))
    t = rng.integers(0, 3, 20)
    for eps in (0.05, 0.3):
        cfg = AttackConfig(eps, steps=20, restarts=2)
        for x_adv in (fgs_attack(classifier, x, t, cfg), pgd_attack(classifier, x, t, cfg)[0]):
            assert np.all(np.abs(x_adv - x) <= eps + 1e-12)
            assert np.all((x_adv >= 0) & (x_adv <= 1))


def test_pgd_zero_epsilon(classifier, rng):
    x = rng.uniform(0, 1, 6)
    t = int(classifier(x).argmax())
    x_adv, ok = pgd_attack(classifier, x, t, AttackConfig(0.0, steps=5, restarts=2))
    np.testing.assert_array_equal(x_adv, x)
    assert not ok


def test_pgd_at_least_as_strong_as_fgs(classifier, rng):
    x = rng.uniform(0, 1, (100, 6))
    t = classifier(x).argmax(axis=1)
    cfg = AttackConfig(0.1, steps=40, restarts=3)
    fgs = attack_loss(classifier, fgs_attack(classifier, x, t, cfg), t, cfg)
    pgd = attack_loss(classifier, pgd_attack(classifier, x, t, cfg)[0], t, cfg)
    assert np.mean(pgd >= fgs - 1e-12) >= 0.95
    assert pgd.mean() >= fgs.mean()


def test_pgd_is_deterministic(classifier, rng):
    x = rng.uniform(0, 1, (5, 6))
    t = rng.integers(0, 3, 5)
    cfg = AttackConfig(0.2, steps=10, restarts=3, seed=4)
    a, sa = pgd_attack(classifier, x, t, cfg)
    b, sb = pgd_attack(classifier, x, t, cfg)
    np.testing.assert_array_equal(a, b)
    np.testing.assert_array_equal(sa, sb)


def test_certified_points_survive_pgd(classifier, rng):
    x = rng.uniform(0, 1, (300, 6))
    t = classifier(x).argmax(axis=1)
    report = certify(classifier, x, t)
    safe = report.correct & (report.certified_radius > 0)
    assert safe.sum() > 20
    for i in np.flatnonzero(safe)[:40]:
        eps = 0.999 * report.certified_radius[i]
        _, flipped = pgd_attack(classifier, x[i], t[i], AttackConfig(eps, steps=50, restarts=3, box=None))
        assert not flipped
