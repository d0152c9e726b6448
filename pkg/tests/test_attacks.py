import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import linear_model, random_model
from copyshield.attacks import (
    AttackConfig,
    ForwardOnly,
    apply_epsilon_cap,
    attack_dispatch,
    boundary_attack,
    cap_l2,
    cw,
    deepfool,
    fgm,
    fgsm,
    pgd,
    run_attack,
    success_rate,
)
from copyshield.numerics import LabeledSample, predict


def binary_linear():
    # class 1 wins when x0 > 0.5
    return linear_model([[0.0, 0.0], [4.0, 0.0]], [0.0, -2.0])


def test_fgsm_zero_epsilon_is_identity(small_model):
    x = np.full(6, 0.4)
    y = predict(small_model, x)
    out = fgsm(small_model, LabeledSample(x, y), AttackConfig("fgsm", epsilon=0.0))
    assert np.array_equal(out.x_adv, x)
    assert out.l2_dist == 0.0 and not out.success


def test_fgsm_sign_pattern_on_linear_model():
    m = linear_model([[1.0, -2.0, 0.5], [0.0, 0.0, 0.0]], [5.0, 0.0])
    x = np.full(3, 0.5)
    out = fgsm(m, LabeledSample(x, 0), AttackConfig("fgsm", epsilon=0.1))
    # loss gradient for class 0 points against row 0 minus the softmax mix
    assert np.allclose(out.x_adv - x, 0.1 * np.array([-1.0, 1.0, -1.0]))
    assert out.linf_dist == pytest.approx(0.1)


@given(st.floats(0.0, 2.0), st.integers(0, 100))
def test_fgsm_output_clipped_and_bounded(eps, seed):
    m = random_model((5, 4, 3), seed=seed)
    x = np.random.default_rng(seed).uniform(0, 1, 5)
    out = fgsm(m, LabeledSample(x, predict(m, x)), AttackConfig("fgsm", epsilon=eps))
    assert np.all((out.x_adv >= 0) & (out.x_adv <= 1))
    assert out.linf_dist <= eps + 1e-12


def test_fgm_step_has_epsilon_norm():
    m = binary_linear()
    x = np.array([0.3, 0.5])
    out = fgm(m, LabeledSample(x, 0), AttackConfig("fgm", epsilon=0.1))
    assert out.l2_dist == pytest.approx(0.1, abs=1e-12)
    assert out.x_adv[0] > x[0]


def test_pgd_one_full_linf_step_equals_fgsm(small_model):
    x = np.full(6, 0.5)
    s = LabeledSample(x, predict(small_model, x))
    a = fgsm(small_model, s, AttackConfig("fgsm", epsilon=0.05))
    b = pgd(small_model, s, AttackConfig("pgd_linf", epsilon=0.05, steps=1, step_size=0.05))
    assert np.array_equal(a.x_adv, b.x_adv)


@given(st.sampled_from(["pgd_l2", "pgd_linf"]), st.floats(0.01, 1.0), st.integers(0, 50),
       st.integers(0, 3))
def test_pgd_stays_in_ball(kind, eps, seed, rng_seed):
    m = random_model((6, 5, 3), seed=seed, scale=2.0)
    x = np.random.default_rng(seed).uniform(0, 1, 6)
    cfg = AttackConfig(kind, epsilon=eps, steps=8, rng_seed=rng_seed)
    out = pgd(m, LabeledSample(x, predict(m, x)), cfg, sample_index=seed)
    assert np.all((out.x_adv >= 0) & (out.x_adv <= 1))
    bound = out.l2_dist if kind == "pgd_l2" else out.linf_dist
    assert bound <= eps + 1e-12


def test_pgd_random_start_is_seeded(small_model):
    x = np.full(6, 0.5)
    s = LabeledSample(x, predict(small_model, x))
    cfg = AttackConfig("pgd_l2", epsilon=0.3, steps=3, rng_seed=9)
    a = pgd(small_model, s, cfg, sample_index=4)
    b = pgd(small_model, s, cfg, sample_index=4)
    c = pgd(small_model, s, cfg, sample_index=5)
    assert np.array_equal(a.x_adv, b.x_adv)
    assert not np.array_equal(a.x_adv, c.x_adv)


def test_deepfool_binary_linear_distance():
    m = binary_linear()
    x = np.array([0.3, 0.7])
    out = deepfool(m, LabeledSample(x, 0), AttackConfig("deepfool"))
    assert out.success
    assert abs(out.l2_dist - 0.2) / 0.2 < 0.05
    assert out.iterations_used == 1


def test_deepfool_picks_the_nearest_class():
    # three half-planes; class 2 boundary is closest from x
    W = np.array([[0.0, 0.0], [3.0, 0.0], [0.0, 3.0]])
    m = linear_model(W, [0.0, -1.8, -2.4])
    x = np.array([0.2, 0.5])  # class 1 boundary at x0 = 0.6, class 2 at x1 = 0.8
    out = deepfool(m, LabeledSample(x, 0), AttackConfig("deepfool"))
    assert predict(m, out.x_adv) == 2
    assert abs(out.l2_dist - 0.3) / 0.3 < 0.05


def test_cw_zero_c_does_not_move(small_model):
    x = np.full(6, 0.5)
    out = cw(small_model, LabeledSample(x, predict(small_model, x)), AttackConfig("cw", cw_c=0.0, steps=20))
    assert np.array_equal(out.x_adv, x)


def test_cw_binary_linear_near_minimal():
    m = binary_linear()
    x = np.array([0.3, 0.7])
    out = cw(m, LabeledSample(x, 0), AttackConfig("cw", cw_c=1.0, steps=400, step_size=0.01))
    assert out.success
    assert abs(out.l2_dist - 0.2) / 0.2 < 0.10


def test_boundary_attack_only_calls_forward():
    calls = []

    class Spy:
        num_classes, input_dim = 2, 2
        inner = binary_linear()

        def forward(self, x):
            calls.append(1)
            return self.inner.forward(x)

        def logits_jacobian(self, x):
            raise AssertionError("gradient access")

        loss_gradient = logits = logits_jacobian

    out = boundary_attack(Spy(), LabeledSample(np.array([0.3, 0.7]), 0),
                          AttackConfig("boundary", steps=300, rng_seed=3))
    assert calls and out.success


def test_boundary_attack_approaches_linear_boundary():
    m = binary_linear()
    out = boundary_attack(m, LabeledSample(np.array([0.3, 0.7]), 0),
                          AttackConfig("boundary", steps=2000, rng_seed=1))
    assert out.success
    assert abs(out.l2_dist - 0.2) / 0.2 < 0.20


def test_boundary_attack_reports_failed_initialization():
    m = linear_model([[1.0, 0.0], [0.0, 0.0]], [10.0, 0.0])  # always class 0
    out = boundary_attack(m, LabeledSample(np.array([0.5, 0.5]), 0), AttackConfig("boundary", rng_seed=2))
    assert not out.success and out.error == "initialization failed"


def test_forward_only_hides_gradients(small_model):
    fo = ForwardOnly(small_model)
    assert not hasattr(fo, "loss_gradient")
    assert np.array_equal(fo.forward(np.full(6, 0.2)), small_model.forward(np.full(6, 0.2)))


def test_dispatch_skips_misclassified_and_keeps_indices(small_model):
    rng = np.random.default_rng(0)
    xs = rng.uniform(0, 1, (12, 6))
    samples = [LabeledSample(x, (predict(small_model, x) + (k % 3 == 0)) % 3) for k, x in enumerate(xs)]
    outs = attack_dispatch(small_model, samples, AttackConfig("fgsm", epsilon=0.1))
    assert [o.index for o in outs] == [k for k in range(12) if k % 3]
    assert attack_dispatch(small_model, [], AttackConfig("fgsm", epsilon=0.1)) == []
    assert success_rate([]) == 0.0


def test_dispatch_turns_errors_into_failed_outcomes(small_model):
    class Broken:
        num_classes, input_dim = 3, 6

        def forward(self, x):
            return small_model.forward(x)

        def loss_gradient(self, x, y):
            raise ArithmeticError("boom")

    x = np.full(6, 0.5)
    outs = attack_dispatch(Broken(), [LabeledSample(x, predict(small_model, x))],
                           AttackConfig("fgsm", epsilon=0.1))
    assert outs[0].error == "boom" and not outs[0].success


def test_config_validation():
    with pytest.raises(ValueError):
        AttackConfig("nope")
    with pytest.raises(ValueError):
        AttackConfig("fgsm", epsilon=-1.0)
    with pytest.raises(ValueError):
        AttackConfig("pgd_l2", steps=0)
    assert AttackConfig("pgd_l2", epsilon=0.4, steps=10).step_size == pytest.approx(0.1)
    assert AttackConfig("pgd_l2", epsilon=0.4).with_epsilon(0.8).step_size == pytest.approx(0.05)


def test_epsilon_cap_on_minimization_outcome():
    m = binary_linear()
    x = np.array([0.3, 0.7])
    raw = deepfool(m, LabeledSample(x, 0), AttackConfig("deepfool"))
    kept = apply_epsilon_cap(m, x, 0, raw, 1.0)
    assert np.array_equal(kept.x_adv, raw.x_adv) and kept.success
    capped = apply_epsilon_cap(m, x, 0, raw, 0.1)
    assert capped.l2_dist == pytest.approx(0.1) and not capped.success
    assert np.array_equal(cap_l2(x, raw.x_adv, math.inf), raw.x_adv)
    direct = deepfool(m, LabeledSample(x, 0), AttackConfig("deepfool", epsilon=0.1))
    assert np.allclose(direct.x_adv, capped.x_adv)


def test_run_attack_is_deterministic(small_model):
    x = np.full(6, 0.45)
    s = LabeledSample(x, predict(small_model, x))
    for kind in ("fgsm", "fgm", "pgd_l2", "pgd_linf", "deepfool", "cw", "boundary"):
        cfg = AttackConfig(kind, epsilon=0.3, steps=30, rng_seed=4)
        a, b = run_attack(small_model, s, cfg, 2), run_attack(small_model, s, cfg, 2)
        assert np.array_equal(a.x_adv, b.x_adv), kind
