"""Loss values against closed forms and gradients against central
differences at 1e-6 (64-bit)."""
import numpy as np
import pytest

from landseg.losses import (
    LossConfig,
    bce_loss,
    combined_loss,
    dice_loss,
    make_loss,
    wce_loss,
)
from landseg.tensor import Rng, ShapeError, Tensor, finite_diff_check

F64 = np.float64
LOSS_TOL = 1e-6


def _rand_pred(shape, seed):
    # keep probabilities away from the clamp boundaries
    return Tensor(Rng(seed).uniform(shape, 0.05, 0.95))


def _rand_target(shape, seed):
    return Tensor((Rng(seed).uniform(shape) > 0.6).astype(F64))


class TestBCE:
    def test_half_everywhere_is_ln2(self):
        pred = Tensor.full((2, 1, 4, 4), 0.5).astype(F64)
        target = _rand_target((2, 1, 4, 4), 1)
        value, _ = bce_loss(pred, target)
        assert value == pytest.approx(np.log(2.0), abs=1e-9)

    def test_single_pixel_closed_form(self):
        value, _ = bce_loss(Tensor([0.25], dtype=F64), Tensor([1.0], dtype=F64))
        assert value == pytest.approx(-np.log(0.25), abs=1e-9)
        assert value == pytest.approx(1.386294, abs=1e-6)

    def test_perfect_prediction_bound(self):
        y = Tensor([0.0, 1.0, 1.0, 0.0], dtype=F64)
        value, _ = bce_loss(y.copy(), y)
        assert value <= 2e-7  # ≈ delta after clamping

    def test_gradient_zero_where_clamped(self):
        pred = Tensor([0.0, 1.0, 0.5], dtype=F64)
        target = Tensor([0.0, 1.0, 1.0], dtype=F64)
        _, grad = bce_loss(pred, target)
        assert grad.data[0] == 0.0 and grad.data[1] == 0.0
        assert grad.data[2] != 0.0

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            bce_loss(Tensor([0.5, 0.5]), Tensor([1.0]))

    def test_nonbinary_target_rejected(self):
        with pytest.raises(ValueError):
            bce_loss(Tensor([0.5]), Tensor([0.3]))


class TestWCE:
    def test_weight_one_equals_bce(self):
        pred = _rand_pred((3, 1, 4, 4), 2)
        target = _rand_target((3, 1, 4, 4), 3)
        bv, bg = bce_loss(pred, target)
        wv, wg = wce_loss(pred, target, w=1.0)
        assert wv == pytest.approx(bv, abs=1e-12)
        assert np.allclose(wg.data, bg.data, atol=1e-12)

    def test_positive_pixel_closed_form(self):
        value, _ = wce_loss(Tensor([0.5], dtype=F64), Tensor([1.0], dtype=F64), w=2.0)
        assert value == pytest.approx(2.0 * np.log(2.0), abs=1e-9)

    def test_negative_term_unweighted(self):
        for w in (1.0, 2.0, 17.5):
            value, _ = wce_loss(Tensor([0.5], dtype=F64), Tensor([0.0], dtype=F64), w=w)
            assert value == pytest.approx(np.log(2.0), abs=1e-9)

    def test_scale_both_terms_variant(self):
        pred = _rand_pred((2, 2), 4)
        target = _rand_target((2, 2), 5)
        bv, bg = bce_loss(pred, target)
        wv, wg = wce_loss(pred, target, w=3.0, scale_both_terms=True)
        assert wv == pytest.approx(3.0 * bv, abs=1e-12)
        assert np.allclose(wg.data, 3.0 * bg.data, atol=1e-12)

    def test_nonpositive_weight_rejected(self):
        with pytest.raises(ValueError):
            wce_loss(Tensor([0.5]), Tensor([1.0]), w=0.0)


class TestDice:
    def test_perfect_overlap(self):
        m = Tensor(np.array([1.0, 1.0, 1.0, 1.0, 0.0, 0.0], dtype=F64))
        value, _ = dice_loss(m.copy(), m, eps=1.0)
        assert value == pytest.approx(0.0, abs=1e-12)

    def test_both_empty_rescued_by_eps(self):
        z = Tensor(np.zeros(8, dtype=F64))
        value, _ = dice_loss(z.copy(), z, eps=1.0)
        assert value == 0.0

    def test_hand_example_0_4(self):
        target = Tensor(np.array([1.0, 1.0, 0.0, 0.0], dtype=F64))
        pred = Tensor(np.array([1.0, 0.0, 1.0, 0.0], dtype=F64))
        value, _ = dice_loss(pred, target, eps=1.0)
        assert value == pytest.approx(0.4, abs=1e-12)  # 1 - (2+1)/(2+2+1)

    def test_value_below_one(self):
        pred = _rand_pred((4, 4), 6)
        target = _rand_target((4, 4), 7)
        value, _ = dice_loss(pred, target)
        assert 0.0 <= value < 1.0

    def test_bad_eps_rejected(self):
        with pytest.raises(ValueError):
            dice_loss(Tensor([0.5]), Tensor([1.0]), eps=0.0)


class TestCombined:
    def test_endpoints(self):
        pred = _rand_pred((2, 1, 4, 4), 8)
        target = _rand_target((2, 1, 4, 4), 9)
        w, eps = 2.5, 1.0
        cv0, cg0 = combined_loss(pred, target, LossConfig(alpha=0.0, pos_weight=w))
        wv, wg = wce_loss(pred, target, w)
        assert cv0 == pytest.approx(wv, abs=1e-12)
        assert np.allclose(cg0.data, wg.data, atol=1e-12)
        cv1, cg1 = combined_loss(pred, target, LossConfig(alpha=1.0, dice_eps=eps))
        dv, dg = dice_loss(pred, target, eps)
        assert cv1 == pytest.approx(dv, abs=1e-12)
        assert np.allclose(cg1.data, dg.data, atol=1e-12)

    def test_convex_combination_identity(self):
        pred = _rand_pred((3, 3), 10)
        target = _rand_target((3, 3), 11)
        cfg = LossConfig(alpha=0.3, pos_weight=4.0, dice_eps=0.5)
        cv, cg = combined_loss(pred, target, cfg)
        wv, wg = wce_loss(pred, target, 4.0)
        dv, dg = dice_loss(pred, target, 0.5)
        assert cv == pytest.approx(0.7 * wv + 0.3 * dv, abs=1e-12)
        assert np.allclose(cg.data, 0.7 * wg.data + 0.3 * dg.data, atol=1e-12)

    def test_mixing_arithmetic(self):
        # alpha=0.5 mixing of component values 0.8 and 0.4 must give 0.6
        assert (1.0 - 0.5) * 0.8 + 0.5 * 0.4 == pytest.approx(0.6)


class TestLossConfig:
    def test_validation(self):
        with pytest.raises(ValueError):
            LossConfig(kind="focal")
        with pytest.raises(ValueError):
            LossConfig(alpha=1.5)
        with pytest.raises(ValueError):
            LossConfig(pos_weight=-1.0)
        with pytest.raises(ValueError):
            LossConfig(clamp_delta=0.5)
        with pytest.raises(ValueError):
            LossConfig(dice_eps=0.0)

    def test_make_loss_dispatch(self):
        pred = _rand_pred((2, 2), 12)
        target = _rand_target((2, 2), 13)
        for kind, ref in [
            ("bce", bce_loss(pred, target)[0]),
            ("wce", wce_loss(pred, target, 1.0)[0]),
            ("dice", dice_loss(pred, target, 1.0)[0]),
            ("combined", combined_loss(pred, target, LossConfig())[0]),
        ]:
            value, _ = make_loss(LossConfig(kind=kind))(pred, target)
            assert value == pytest.approx(ref, abs=1e-12)


class TestLossGradients:
    """Analytic loss gradients vs central differences at 1e-6 (64-bit)."""

    def _check(self, lossfn):
        pred = _rand_pred((2, 1, 4, 4), 20)
        target = _rand_target((2, 1, 4, 4), 21)
        assert finite_diff_check(lambda p: lossfn(p, target), pred) < LOSS_TOL

    def test_bce_grad(self):
        self._check(lambda p, t: bce_loss(p, t))

    def test_wce_grad(self):
        self._check(lambda p, t: wce_loss(p, t, w=3.0))

    def test_wce_scale_both_grad(self):
        self._check(lambda p, t: wce_loss(p, t, w=2.0, scale_both_terms=True))

    def test_dice_grad_default_eps(self):
        self._check(lambda p, t: dice_loss(p, t, eps=1.0))

    def test_dice_grad_small_eps(self):
        self._check(lambda p, t: dice_loss(p, t, eps=0.01))

    def test_combined_grad(self):
        cfg = LossConfig(alpha=0.3, pos_weight=2.0)
        self._check(lambda p, t: combined_loss(p, t, cfg))
