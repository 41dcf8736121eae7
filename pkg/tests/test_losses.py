"""Set-prediction loss: term oracles, matching behavior, invariances."""

import numpy as np
import pytest

from miq3d import tensor as T
from miq3d.decoder import InstancePrediction
from miq3d.errors import ShapeMismatchError
from miq3d.losses import (
    LESION,
    GroundTruthSet,
    LossWeights,
    bce_loss,
    matching_cost,
    soft_dice_loss,
    total_loss,
)

SHAPE = (4, 4, 4)


def make_prediction(class_logits, mask_logits, requires_grad=False):
    cl = T.Tensor(np.asarray(class_logits, dtype=np.float64), requires_grad=requires_grad)
    ml = T.Tensor(np.asarray(mask_logits, dtype=np.float64), requires_grad=requires_grad)
    return InstancePrediction(
        class_logits=cl,
        class_probs=T.softmax_lastdim(cl),
        mask_logits=ml,
        masks=T.sigmoid(ml),
    )


def random_gts(rng, m, shape=SHAPE):
    """Disjoint random blobs, each nonempty."""
    flat_ids = rng.permutation(int(np.prod(shape)))
    masks = []
    chunk = int(np.prod(shape)) // (m + 1)
    for j in range(m):
        mask = np.zeros(int(np.prod(shape)), dtype=bool)
        take = rng.integers(1, chunk)
        mask[flat_ids[j * chunk : j * chunk + take]] = True
        masks.append(mask.reshape(shape))
    return GroundTruthSet(masks)


def structured_instance(rng, m, n, shape=SHAPE, w=None):
    """Prediction set where query q tracks gt q; extras predict no-object.

    Mimics a trained model: confident classes, masks aligned with their
    instance up to noise. Returns (loss, assignment, class_logits,
    mask_logits, gts).
    """
    w = w or LossWeights()
    gts = random_gts(rng, m, shape)
    class_logits = np.zeros((n, 2))
    mask_logits = rng.uniform(-3.0, -1.0, (n, *shape))
    for q in range(m):
        class_logits[q] = (3.0, -3.0)
        amp = rng.uniform(2.0, 5.0)
        mask_logits[q] = np.where(gts.masks[q], amp, -amp) + rng.uniform(-0.5, 0.5, shape)
    for q in range(m, n):
        class_logits[q] = (-3.0, 3.0)
    loss, assign = total_loss(make_prediction(class_logits, mask_logits), gts, w)
    return loss.item(), assign, class_logits, mask_logits, gts


class TestSoftDice:
    def test_perfect_binary_match_is_near_zero(self):
        rng = np.random.default_rng(0)
        gt = rng.uniform(0, 1, SHAPE) > 0.5
        loss = soft_dice_loss(T.Tensor(gt.astype(np.float64)), gt).item()
        assert loss < 1.0 / (2 * gt.sum() + 1.0)

    def test_empty_prediction_on_nonempty_gt(self):
        gt = np.zeros(SHAPE, dtype=bool)
        gt[1:3, 1:3, 1:3] = True
        loss = soft_dice_loss(T.Tensor(np.zeros(SHAPE)), gt).item()
        assert loss == pytest.approx(1.0 - 1.0 / (gt.sum() + 1.0))

    def test_random_case_matches_direct_sums(self):
        rng = np.random.default_rng(1)
        pred = rng.uniform(0, 1, SHAPE)
        gt = rng.uniform(0, 1, SHAPE) > 0.6
        inter = pssum = gsum = 0.0
        for idx in np.ndindex(SHAPE):
            inter += pred[idx] * gt[idx]
            pssum += pred[idx]
            gsum += float(gt[idx])
        expected = 1.0 - (2 * inter + 1.0) / (pssum + gsum + 1.0)
        assert soft_dice_loss(T.Tensor(pred), gt).item() == pytest.approx(expected, abs=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatchError):
            soft_dice_loss(T.Tensor(np.zeros((2, 2, 2))), np.zeros((3, 3, 3), dtype=bool))


class TestBce:
    def test_zero_logits_give_ln2(self):
        gt = np.random.default_rng(2).uniform(0, 1, SHAPE) > 0.5
        loss = bce_loss(T.Tensor(np.zeros(SHAPE)), gt).item()
        assert loss == pytest.approx(np.log(2.0), abs=1e-12)

    def test_confident_correct_logits_vanish_without_overflow(self):
        gt = np.ones(SHAPE, dtype=bool)
        loss = bce_loss(T.Tensor(np.full(SHAPE, 500.0)), gt).item()
        assert 0.0 <= loss < 1e-12

    def test_random_case_matches_float64_oracle(self):
        rng = np.random.default_rng(3)
        logits = rng.uniform(-4, 4, SHAPE)
        gt = rng.uniform(0, 1, SHAPE) > 0.5
        total = 0.0
        for idx in np.ndindex(SHAPE):
            p = 1.0 / (1.0 + np.exp(-logits[idx]))
            total += -(gt[idx] * np.log(p) + (1 - gt[idx]) * np.log(1 - p))
        expected = total / np.prod(SHAPE)
        assert bce_loss(T.Tensor(logits), gt).item() == pytest.approx(expected, abs=1e-10)


class TestMatchingCost:
    def test_perfect_prediction_cost_is_minus_lambda_cls(self):
        gt = np.zeros(SHAPE, dtype=bool)
        gt[0:2, 0:2, 0:2] = True
        logits = np.where(gt, 40.0, -40.0)
        pred = make_prediction([[40.0, -40.0]], logits[None])
        w = LossWeights()
        cost = matching_cost(pred, GroundTruthSet([gt]), w)
        assert cost.shape == (1, 1)
        assert cost[0, 0] == pytest.approx(-w.lambda_cls, abs=0.05)

    def test_bad_match_costs_more_than_good_match(self):
        gt = np.zeros(SHAPE, dtype=bool)
        gt[0, 0, 0] = True
        good_logits = np.where(gt, 8.0, -8.0)
        bad_logits = -good_logits
        pred = make_prediction([[8.0, -8.0], [-8.0, 8.0]], np.stack([good_logits, bad_logits]))
        cost = matching_cost(pred, GroundTruthSet([gt]), LossWeights())
        assert cost[1, 0] > cost[0, 0]

    def test_random_matrix_matches_scalar_oracle(self):
        rng = np.random.default_rng(4)
        gts = random_gts(rng, 2)
        class_logits = rng.uniform(-2, 2, (3, 2))
        mask_logits = rng.uniform(-3, 3, (3, *SHAPE))
        pred = make_prediction(class_logits, mask_logits)
        w = LossWeights(lambda_cls=1.5, lambda_dice=4.0, lambda_bce=2.5)
        cost = matching_cost(pred, gts, w)
        for i in range(3):
            prob = np.exp(class_logits[i, LESION]) / np.exp(class_logits[i]).sum()
            for j in range(2):
                dice = soft_dice_loss(T.sigmoid(T.Tensor(mask_logits[i])), gts.masks[j]).item()
                bce = bce_loss(T.Tensor(mask_logits[i]), gts.masks[j]).item()
                expected = -w.lambda_cls * prob + w.lambda_dice * dice + w.lambda_bce * bce
                assert cost[i, j] == pytest.approx(expected, rel=1e-9)


class TestTotalLoss:
    def test_perfect_single_prediction_is_tiny(self):
        gt = np.zeros(SHAPE, dtype=bool)
        gt[1:3, 1:3, 1:3] = True
        logits = np.where(gt, 40.0, -40.0)
        pred = make_prediction([[40.0, -40.0]], logits[None])
        loss, assign = total_loss(pred, GroundTruthSet([gt]), LossWeights())
        assert assign.pairs == ((0, 0),)
        assert loss.item() < 0.01

    def test_no_instances_and_confident_no_object_is_zero(self):
        pred = make_prediction([[-40.0, 40.0], [-40.0, 40.0]], np.zeros((2, *SHAPE)))
        loss, assign = total_loss(pred, GroundTruthSet([]), LossWeights())
        assert assign.pairs == ()
        assert loss.item() == pytest.approx(0.0, abs=1e-12)

    def test_permutation_invariance(self):
        rng = np.random.default_rng(5)
        gts = random_gts(rng, 3)
        class_logits = rng.uniform(-2, 2, (5, 2))
        mask_logits = rng.uniform(-3, 3, (5, *SHAPE))
        w = LossWeights()
        base, _ = total_loss(make_prediction(class_logits, mask_logits), gts, w)

        for _ in range(5):
            gt_perm = rng.permutation(3)
            q_perm = rng.permutation(5)
            shuffled_gts = GroundTruthSet([gts.masks[j] for j in gt_perm])
            pred = make_prediction(class_logits[q_perm], mask_logits[q_perm])
            value, _ = total_loss(pred, shuffled_gts, w)
            assert value.item() == pytest.approx(base.item(), abs=1e-9)

    def test_gradients_flow_only_to_matched_masks(self):
        rng = np.random.default_rng(6)
        gts = random_gts(rng, 2)
        class_logits = rng.uniform(-1, 1, (4, 2))
        mask_logits = rng.uniform(-1, 1, (4, *SHAPE))
        pred = make_prediction(class_logits, mask_logits, requires_grad=True)
        loss, assign = total_loss(pred, gts, LossWeights())
        loss.backward()
        matched = {i for i, _ in assign.pairs}
        grads = pred.mask_logits.grad
        class_grads = pred.class_logits.grad
        for i in range(4):
            if i in matched:
                assert np.abs(grads[i]).max() > 0
            else:
                assert np.abs(grads[i]).max() == 0
            assert np.abs(class_grads[i]).max() > 0

    def test_corrupting_matched_mask_never_decreases_loss(self):
        # Trials use predictions whose queries each track one instance
        # (the trained regime); with near-uniform random queries a
        # corruption can trigger a rematch whose class terms outweigh
        # the mask damage, because matching ranks classes by probability
        # while the loss uses log-probability.
        rng = np.random.default_rng(7)
        w = LossWeights()
        for trial in range(10):
            base_loss, assign, class_logits, mask_logits, gts = structured_instance(rng, m=2, n=4)
            qi, gj = assign.pairs[int(rng.integers(0, 2))]
            gt_flat = gts.masks[gj].reshape(-1)
            corrupted = mask_logits.copy()
            flat = corrupted[qi].reshape(-1)
            claimed = np.flatnonzero(gt_flat & (flat > 0))
            k = int(rng.integers(1, min(8, len(claimed)) + 1))
            for c in rng.choice(claimed, size=k, replace=False):
                flat[c] = -6.0
            worse, _ = total_loss(make_prediction(class_logits, corrupted), gts, w)
            assert worse.item() >= base_loss - 1e-12


class TestFiniteDifferenceGradient:
    @pytest.mark.parametrize("trial", range(5))
    def test_total_loss_gradient(self, trial):
        from fdcheck import assert_grads_close

        rng = np.random.default_rng(60 + trial)
        gts = random_gts(rng, 2)
        class_logits = rng.uniform(-1, 1, (3, 2))
        mask_logits = rng.uniform(-1, 1, (3, *SHAPE))
        w = LossWeights()

        def build(cl, ml):
            pred = InstancePrediction(
                class_logits=cl,
                class_probs=T.softmax_lastdim(cl),
                mask_logits=ml,
                masks=T.sigmoid(ml),
            )
            loss, _ = total_loss(pred, gts, w)
            return loss

        assert_grads_close(build, [class_logits, mask_logits])
