import numpy as np
import pytest

from slowtrack.errors import DataError
from slowtrack.objectives import (
    AdaptationObjective,
    SlownessObjective,
    finite_difference_gradient,
)


def random_instance(rng, with_gamma):
    d = int(rng.integers(2, 17))
    f = 2 * int(rng.integers(1, 5))
    n_seqs = int(rng.integers(1, 3))
    seqs = [rng.standard_normal((int(rng.integers(1, 4)), d)) for _ in range(n_seqs)]
    lam = float(rng.choice([1.0, 5.0]))
    w = 0.5 * rng.standard_normal((f, d))
    base = SlownessObjective(seqs, lam, eps_sqrt=1e-6, eps_abs=1e-6)
    if with_gamma:
        gamma = float(rng.choice([0.0, 100.0]))
        w_old = 0.5 * rng.standard_normal((f, d))
        return AdaptationObjective(base, gamma, w_old), w
    return base, w


class TestEvalSlowness:
    def test_single_patch_reconstruction_only(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal((1, 4))
        w = rng.standard_normal((4, 4))
        obj = SlownessObjective([x], lam=3.0, eps_sqrt=0.0, eps_abs=0.0)
        r = x[0] - w.T @ (w @ x[0])
        assert obj.value(w) == pytest.approx(float(r @ r), rel=1e-12)

    def test_identical_patches_zero_slowness(self):
        x = np.tile(np.array([1.0, -2.0, 0.5]), (2, 1))
        w = np.random.default_rng(1).standard_normal((4, 3))
        with_pair = SlownessObjective([x], lam=7.0, eps_sqrt=0.0, eps_abs=0.0)
        no_pair = SlownessObjective([x], lam=0.0, eps_sqrt=0.0, eps_abs=0.0)
        assert with_pair.value(w) == pytest.approx(no_pair.value(w), abs=1e-14)

    def test_identity_filters_on_unit_patches(self):
        # z = 1 for both patches, reconstruction exact: value 0
        seq = np.array([[1.0, 0.0], [0.0, 1.0]])
        obj = SlownessObjective([seq], lam=1.0, eps_sqrt=0.0, eps_abs=0.0)
        assert obj.value(np.eye(2)) == pytest.approx(0.0, abs=1e-14)

    def test_empty_training_set_rejected(self):
        with pytest.raises(DataError, match="empty"):
            SlownessObjective([], lam=1.0)

    def test_dimension_mismatch(self):
        obj = SlownessObjective([np.ones((2, 3))], lam=1.0)
        with pytest.raises(ValueError, match="shape"):
            obj.evaluate(np.ones((4, 5)))

    def test_nonnegative(self):
        rng = np.random.default_rng(7)
        for _ in range(10):
            obj, w = random_instance(rng, with_gamma=False)
            assert obj.value(w) >= 0.0


class TestEvalAdaptation:
    def test_gamma_zero_equals_slowness(self):
        rng = np.random.default_rng(2)
        base, w = random_instance(rng, with_gamma=False)
        adp = AdaptationObjective(base, 0.0, rng.standard_normal(w.shape))
        ev_b = base.evaluate(w)
        ev_a = adp.evaluate(w)
        assert abs(ev_a.value - ev_b.value) <= 1e-12
        np.testing.assert_allclose(ev_a.gradient, ev_b.gradient, atol=1e-12)

    def test_w_equals_w_old_zero_regularizer(self):
        rng = np.random.default_rng(3)
        base, w = random_instance(rng, with_gamma=False)
        adp = AdaptationObjective(base, 50.0, w)
        assert adp.value(w) == pytest.approx(base.value(w), abs=1e-12)

    def test_regularizer_hand_computed(self):
        # single patch (1,0): ||W x - W_old x||^2 = ||(2,0)-(1,0)||^2 = 1
        seq = np.array([[1.0, 0.0]])
        base = SlownessObjective([seq], lam=1.0, eps_sqrt=0.0, eps_abs=0.0)
        w_old = np.eye(2)
        w = np.array([[2.0, 0.0], [0.0, 1.0]])
        adp = AdaptationObjective(base, 1.0, w_old)
        assert adp.value(w) - base.value(w) == pytest.approx(1.0, abs=1e-14)

    def test_monotone_gamma(self):
        rng = np.random.default_rng(4)
        seqs = [rng.standard_normal((3, 4))]
        base = SlownessObjective(seqs, lam=1.0)
        w_old = rng.standard_normal((4, 4))
        w = w_old + 0.5
        values = [
            AdaptationObjective(base, g, w_old).value(w) for g in (0.0, 1.0, 10.0, 100.0)
        ]
        assert all(a < b for a, b in zip(values, values[1:]))


class TestGradients:
    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(42)
        for trial in range(20):
            obj, w = random_instance(rng, with_gamma=trial % 2 == 0)
            analytic = obj.evaluate(w).gradient
            fd = finite_difference_gradient(obj.value, w, h=1e-5)
            rel = np.max(np.abs(analytic - fd) / np.maximum(1.0, np.abs(fd)))
            assert rel < 1e-4, f"trial {trial}: rel err {rel}"

    def test_fd_exact_on_quadratic(self):
        f = lambda w: float((w**2).sum())
        w = np.array([[1.0, -2.0], [0.5, 3.0]])
        np.testing.assert_allclose(finite_difference_gradient(f, w, 1e-4), 2 * w, atol=1e-8)

    def test_fd_zero_on_constant(self):
        f = lambda w: 7.5
        np.testing.assert_array_equal(
            finite_difference_gradient(f, np.ones((2, 3)), 1e-5), np.zeros((2, 3))
        )

    def test_fd_requires_positive_step(self):
        with pytest.raises(ValueError):
            finite_difference_gradient(lambda w: 0.0, np.ones((2, 2)), 0.0)


class TestBoundaryRule:
    def test_break_removes_exactly_one_pair_term(self):
        rng = np.random.default_rng(5)
        seq = rng.standard_normal((5, 4))
        w = rng.standard_normal((4, 4))
        lam, eps_sqrt, eps_abs = 2.5, 1e-6, 1e-6
        joined = SlownessObjective([seq], lam, eps_sqrt=eps_sqrt, eps_abs=eps_abs)
        split = SlownessObjective(
            [seq[:3], seq[3:]], lam, eps_sqrt=eps_sqrt, eps_abs=eps_abs
        )
        v_joined, v_split = joined.value(w), split.value(w)
        assert v_split <= v_joined
        a = w @ seq[2]
        b = w @ seq[3]
        za = np.sqrt(a[::2] ** 2 + a[1::2] ** 2 + eps_sqrt)
        zb = np.sqrt(b[::2] ** 2 + b[1::2] ** 2 + eps_sqrt)
        removed = lam * np.sum(np.sqrt((za - zb) ** 2 + eps_abs))
        assert v_joined - v_split == pytest.approx(removed, rel=1e-12)
