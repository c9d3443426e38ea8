"""Losses, optimizer, schedule, metrics, and the data-path helpers."""

import math

import numpy as np
import pytest

from lightformer import ops
from lightformer import training as tr
from lightformer.rng import stream
from lightformer.tensor import ShapeError, Tape, Tensor

K = 4


def _logits(shape, seed=0, scale=1.0):
    data = (stream(seed, "loss").standard_normal(shape) * scale).astype(np.float64)
    return Tensor(data, requires_grad=True)


def _labels(shape, seed=1, classes=K):
    return stream(seed, "lab").integers(0, classes, size=shape)


def _perfect_logits(labels, classes=K, margin=40.0):
    b, h, w = labels.shape
    safe = np.where(labels == 255, 0, labels)
    out = np.full((b, classes, h, w), -margin, dtype=np.float64)
    np.put_along_axis(out, safe[:, None], margin, axis=1)
    return Tensor(out)


class TestCrossEntropy:
    def test_uniform_logits_give_log_k(self):
        labels = _labels((2, 6, 6))
        ce = tr.cross_entropy_loss(Tensor(np.zeros((2, K, 6, 6))), labels)
        assert abs(ce.data - math.log(K)) < 1e-6

    def test_uniform_nonzero_logits_give_log_k(self):
        labels = _labels((1, 5, 5))
        ce = tr.cross_entropy_loss(Tensor(np.full((1, K, 5, 5), 3.25)), labels)
        assert abs(ce.data - math.log(K)) < 1e-6

    def test_perfect_predictions_vanish(self):
        labels = _labels((2, 8, 8))
        ce = tr.cross_entropy_loss(_perfect_logits(labels), labels)
        assert 0.0 <= ce.data <= 1e-6

    def test_ignored_pixels_do_not_contribute(self):
        labels = _labels((1, 6, 6)).copy()
        logits = _logits((1, K, 6, 6), seed=3)
        kept = tr.cross_entropy_loss(logits, labels).data
        noisy = labels.copy()
        noisy[0, :2] = 255
        # recompute on the surviving pixels only
        manual = tr.cross_entropy_loss(
            Tensor(logits.data[:, :, 2:, :]), labels[:, 2:, :]).data
        assert abs(tr.cross_entropy_loss(logits, noisy).data - manual) < 1e-12
        assert abs(kept - manual) > 1e-4  # the masked rows did matter before

    def test_all_ignored_rejected(self):
        with pytest.raises(ValueError, match="ignore"):
            tr.cross_entropy_loss(_logits((1, K, 4, 4)), np.full((1, 4, 4), 255))

    def test_label_validation(self):
        logits = _logits((1, K, 4, 4))
        with pytest.raises((ValueError, ShapeError)):
            tr.cross_entropy_loss(logits, np.full((1, 4, 4), K))  # out of range
        with pytest.raises(TypeError, match="integer"):
            tr.cross_entropy_loss(logits, np.zeros((1, 4, 4), dtype=np.float32))
        with pytest.raises(ShapeError):
            tr.cross_entropy_loss(logits, np.zeros((1, 5, 4), dtype=np.int64))


class TestDice:
    def test_perfect_predictions_vanish(self):
        labels = _labels((2, 8, 8), seed=5)
        dice = tr.dice_loss(_perfect_logits(labels), labels)
        assert 0.0 <= dice.data <= 1e-6

    def test_uniform_probabilities_land_at_known_value(self):
        # with p = 1/K on every true pixel the per-pixel term is
        # 2p / (p + 1), so the loss is 1 - 2/(1+K) up to epsilon
        labels = _labels((1, 10, 10), seed=6)
        dice = tr.dice_loss(Tensor(np.zeros((1, K, 10, 10))), labels)
        expected = 1.0 - 2.0 * (1.0 / K) / (1.0 / K + 1.0)
        assert abs(dice.data - expected) < 1e-5

    def test_gradient_flows(self):
        labels = _labels((1, 6, 6), seed=7)
        logits = _logits((1, K, 6, 6), seed=8)
        with Tape() as tape:
            loss = tr.dice_loss(logits, labels)
        g = tape.backward(loss).get(logits)
        assert g is not None and np.isfinite(g).all() and np.any(g)


class TestTotalLoss:
    def test_train_composition(self):
        labels = _labels((2, 8, 8), seed=9)
        logits = _logits((2, K, 8, 8), seed=10)
        aux = [_logits((2, K, 8, 8), seed=11 + i) for i in range(3)]
        bundle = tr.total_loss(logits, aux, labels, train=True)
        ce = tr.cross_entropy_loss(logits, labels).data
        dice = tr.dice_loss(logits, labels).data
        aux_ce = np.mean([tr.cross_entropy_loss(a, labels).data for a in aux])
        assert abs(bundle.total.data - (ce + dice + 0.4 * aux_ce)) < 1e-6
        assert abs(bundle.ce.data - ce) < 1e-12
        assert abs(bundle.dice.data - dice) < 1e-12
        assert abs(bundle.aux.data - aux_ce) < 1e-6

    def test_eval_composition_has_no_aux(self):
        labels = _labels((1, 8, 8), seed=12)
        logits = _logits((1, K, 8, 8), seed=13)
        bundle = tr.total_loss(logits, [], labels, train=False)
        expected = tr.cross_entropy_loss(logits, labels).data + \
            tr.dice_loss(logits, labels).data
        assert abs(bundle.total.data - expected) < 1e-6
        assert bundle.aux is None

    def test_mode_mismatches_rejected(self):
        labels = _labels((1, 8, 8), seed=14)
        logits = _logits((1, K, 8, 8), seed=15)
        with pytest.raises(ValueError, match="aux"):
            tr.total_loss(logits, [], labels, train=True)
        with pytest.raises(ValueError, match="aux"):
            tr.total_loss(logits, [logits], labels, train=False)

    def test_nonnegative_and_finite(self):
        for seed in range(5):
            labels = _labels((1, 6, 6), seed=20 + seed)
            logits = _logits((1, K, 6, 6), seed=30 + seed, scale=5.0)
            aux = [_logits((1, K, 6, 6), seed=40 + seed, scale=5.0)]
            total = tr.total_loss(logits, aux, labels, train=True).total.data
            assert np.isfinite(total) and total >= 0.0


class _FakeGrads:
    def __init__(self, table):
        self.table = table

    def get(self, tensor):
        return self.table.get(id(tensor))


def _store_of(values):
    from lightformer.params import ParamStore
    store = ParamStore()
    for name, arr in values.items():
        a = np.asarray(arr, dtype=np.float64)
        store.add(name, a.shape, ("zeros",)).data = a
    return store


class TestAdamW:
    def test_zero_gradient_is_pure_decay(self):
        store = _store_of({"encoder.w": [1.0, -2.0], "decoder.w": [4.0]})
        opt = tr.AdamW(store, {"encoder": 0.1, "decoder": 0.2}, weight_decay=0.5)
        opt.step(_FakeGrads({}))
        np.testing.assert_array_equal(store["encoder.w"].data,
                                      np.array([1.0, -2.0]) * (1.0 - 0.1 * 0.5))
        np.testing.assert_array_equal(store["decoder.w"].data,
                                      np.array([4.0]) * (1.0 - 0.2 * 0.5))

    def test_first_step_closed_form(self):
        store = _store_of({"decoder.w": [0.0, 0.0, 0.0]})
        opt = tr.AdamW(store, {"decoder": 1e-2}, weight_decay=0.0)
        g = np.array([3.0, -0.5, 1e-12])
        opt.step(_FakeGrads({id(store["decoder.w"]): g}))
        expected = -1e-2 * g / (np.abs(g) + 1e-8)
        np.testing.assert_allclose(store["decoder.w"].data, expected, rtol=1e-12)

    def test_longest_prefix_wins(self):
        store = _store_of({"decoder.head.w": [1.0], "decoder.body.w": [1.0]})
        opt = tr.AdamW(store, {"decoder": 0.1, "decoder.head": 0.7})
        assert opt._base_lr("decoder.head.w") == 0.7
        assert opt._base_lr("decoder.body.w") == 0.1

    def test_unmatched_parameter_rejected(self):
        store = _store_of({"stray.w": [1.0]})
        with pytest.raises(KeyError, match="stray.w"):
            tr.AdamW(store, {"decoder": 0.1})

    def test_nonfinite_gradient_raises_named_error(self):
        store = _store_of({"decoder.w": [1.0]})
        opt = tr.AdamW(store, {"decoder": 0.1})
        bad = np.array([np.nan])
        with pytest.raises(tr.DivergenceError, match=r"decoder\.w.*step 1"):
            opt.step(_FakeGrads({id(store["decoder.w"]): bad}))

    def test_lr_scale_rescales_both_terms(self):
        a = _store_of({"decoder.w": [2.0]})
        b = _store_of({"decoder.w": [2.0]})
        g = np.array([1.0])
        tr.AdamW(a, {"decoder": 0.1}, weight_decay=0.2).step(
            _FakeGrads({id(a["decoder.w"]): g}), lr_scale=0.5)
        tr.AdamW(b, {"decoder": 0.05}, weight_decay=0.2).step(
            _FakeGrads({id(b["decoder.w"]): g}))
        np.testing.assert_allclose(a["decoder.w"].data, b["decoder.w"].data, rtol=1e-15)

    def test_two_steps_track_reference_formulas(self):
        store = _store_of({"decoder.w": [0.5]})
        opt = tr.AdamW(store, {"decoder": 0.01}, weight_decay=0.1)
        grads = [np.array([0.3]), np.array([-0.7])]
        theta = 0.5
        m = v = 0.0
        for t, g in enumerate(grads, start=1):
            opt.step(_FakeGrads({id(store["decoder.w"]): g}))
            theta = theta * (1.0 - 0.01 * 0.1)
            m = 0.9 * m + 0.1 * g[0]
            v = 0.999 * v + 0.001 * g[0] ** 2
            mh = m / (1.0 - 0.9 ** t)
            vh = v / (1.0 - 0.999 ** t)
            theta = theta - 0.01 * mh / (math.sqrt(vh) + 1e-8)
        assert abs(store["decoder.w"].data[0] - theta) < 1e-14


class TestCosine:
    def test_endpoints(self):
        assert tr.cosine_lr(0, 100, 3e-3, 1e-4) == pytest.approx(3e-3, rel=1e-12)
        assert tr.cosine_lr(100, 100, 3e-3, 1e-4) == pytest.approx(1e-4, rel=1e-12)

    def test_midpoint_and_monotonicity(self):
        assert tr.cosine_lr(50, 100, 2.0, 0.0) == pytest.approx(1.0, rel=1e-12)
        values = [tr.cosine_lr(s, 100, 2.0, 0.1) for s in range(101)]
        assert all(a >= b for a, b in zip(values, values[1:]))

    def test_domain_checks(self):
        with pytest.raises(ValueError):
            tr.cosine_lr(5, 0, 1.0)
        with pytest.raises(ValueError):
            tr.cosine_lr(101, 100, 1.0)
        with pytest.raises(ValueError):
            tr.cosine_lr(-1, 100, 1.0)


class TestConfusionMatrix:
    def test_hand_case(self):
        cm = tr.ConfusionMatrix(2)
        cm.counts[:] = [[3, 1], [1, 3]]
        metrics = cm.finalize()
        assert metrics.miou == pytest.approx(0.600, abs=1e-12)
        assert metrics.overall_accuracy == pytest.approx(0.75)

    def test_streaming_equals_batch(self):
        rng = stream(0, "cm")
        preds = rng.integers(0, 5, size=(100, 17))
        truths = rng.integers(0, 5, size=(100, 17))
        truths[rng.random(truths.shape) < 0.1] = 255
        whole = tr.ConfusionMatrix(5)
        whole.update(preds, truths)
        parts = tr.ConfusionMatrix(5)
        for p, t in zip(preds, truths):
            parts.update(p, t)
        np.testing.assert_array_equal(whole.counts, parts.counts)

    def test_merge_matches_joint_update(self):
        rng = stream(1, "cm")
        a, b = tr.ConfusionMatrix(3), tr.ConfusionMatrix(3)
        pa, ta = rng.integers(0, 3, (40,)), rng.integers(0, 3, (40,))
        pb, tb = rng.integers(0, 3, (60,)), rng.integers(0, 3, (60,))
        a.update(pa, ta)
        b.update(pb, tb)
        joint = tr.ConfusionMatrix(3)
        joint.update(np.concatenate([pa, pb]), np.concatenate([ta, tb]))
        np.testing.assert_array_equal(a.merge(b).counts, joint.counts)

    def test_rows_are_truth(self):
        cm = tr.ConfusionMatrix(3)
        cm.update(np.array([2]), np.array([1]))
        assert cm.counts[1, 2] == 1 and cm.counts.sum() == 1

    def test_absent_class_excluded_from_means(self):
        cm = tr.ConfusionMatrix(3)
        cm.update(np.array([0, 0, 1, 1]), np.array([0, 0, 1, 0]))
        metrics = cm.finalize()
        np.testing.assert_array_equal(metrics.present, [True, True, False])
        # class 0: tp=2 fn=1 fp=0 -> iou 2/3; class 1: tp=1 fp=1 -> iou 1/2
        assert metrics.miou == pytest.approx((2 / 3 + 1 / 2) / 2)
        assert np.isnan(metrics.per_class_iou[2])

    def test_empty_finalize_rejected(self):
        with pytest.raises(ValueError):
            tr.ConfusionMatrix(2).finalize()

    def test_mf1_hand_value(self):
        cm = tr.ConfusionMatrix(2)
        cm.counts[:] = [[3, 1], [1, 3]]
        # both classes: precision = recall = 3/4 -> f1 = 3/4
        assert cm.finalize().mf1 == pytest.approx(0.75)


class TestStandardize:
    def test_values(self):
        img = np.ones((3, 2, 2), dtype=np.float32) * 0.5
        out = tr.standardize(img, (0.25, 0.5, 0.75), (0.5, 0.5, 0.25))
        np.testing.assert_allclose(out[0], 0.5, atol=1e-7)
        np.testing.assert_allclose(out[1], 0.0, atol=1e-7)
        np.testing.assert_allclose(out[2], -1.0, atol=1e-7)
        assert out.dtype == np.float32

    def test_zero_std_rejected(self):
        with pytest.raises(ValueError, match="std"):
            tr.standardize(np.ones((3, 2, 2), np.float32), (0,) * 3, (0.5, 0.0, 0.5))

    def test_shape_guard(self):
        with pytest.raises(ShapeError):
            tr.standardize(np.ones((2, 2, 3), np.float32), (0,) * 3, (1,) * 3)


class _ScriptedRng:
    """Plays back a fixed list of integers() results."""

    def __init__(self, values):
        self.values = list(values)

    def integers(self, low, high):
        return self.values.pop(0)


class TestRandomCrop:
    def _flat_image(self, mask):
        return np.broadcast_to(mask.astype(np.float32), (3, *mask.shape)).copy()

    def test_accepts_first_balanced_crop(self):
        mask = np.zeros((8, 8), dtype=np.uint8)
        mask[:, 4:] = 1  # any 4x4 crop straddling the boundary is balanced
        rng = _ScriptedRng([2, 2])
        img, crop = tr.random_crop(self._flat_image(mask), mask, 4, rng)
        assert crop.shape == (4, 4) and img.shape == (3, 4, 4)
        assert rng.values == []  # one draw was enough

    def test_rejects_dominated_crops(self):
        mask = np.zeros((8, 8), dtype=np.uint8)
        mask[:, 6:] = 1
        # first draw is pure class 0 (dominated), second straddles the edge
        rng = _ScriptedRng([0, 0, 0, 4])
        _, crop = tr.random_crop(self._flat_image(mask), mask, 4, rng)
        counts = np.bincount(crop.reshape(-1), minlength=2)
        assert counts.max() / counts.sum() <= 0.75

    def test_last_crop_wins_when_everything_dominated(self):
        mask = np.zeros((8, 8), dtype=np.uint8)
        rng = _ScriptedRng([i % 5 for i in range(20)])
        img, crop = tr.random_crop(self._flat_image(mask), mask, 4, rng)
        assert crop.shape == (4, 4)
        assert len(rng.values) == 0  # all ten draws were consumed

    def test_ignored_pixels_do_not_count_toward_dominance(self):
        mask = np.full((4, 4), 255, dtype=np.uint8)
        mask[0, 0] = 0
        mask[0, 1] = 1
        _, crop = tr.random_crop(self._flat_image(mask) * 0, mask, 4,
                                 _ScriptedRng([0, 0]))
        assert crop.shape == (4, 4)

    def test_returns_copies(self):
        mask = np.zeros((6, 6), dtype=np.uint8)
        mask[:, 3:] = 1
        image = self._flat_image(mask)
        img_c, mask_c = tr.random_crop(image, mask, 4, _ScriptedRng([1, 1]))
        mask_c[:] = 9
        img_c[:] = 9.0
        assert mask.max() == 1 and image.max() == 1.0

    def test_oversized_crop_rejected(self):
        mask = np.zeros((4, 4), dtype=np.uint8)
        with pytest.raises(ShapeError):
            tr.random_crop(self._flat_image(mask), mask, 8, _ScriptedRng([0, 0]))


class TestAugment:
    def test_pairs_stay_aligned(self):
        rng_data = stream(2, "aug")
        for seed in range(10):
            mask = rng_data.integers(0, 4, (6, 6)).astype(np.uint8)
            image = np.broadcast_to(mask.astype(np.float32), (3, 6, 6)).copy()
            img_a, mask_a = tr.augment(image, mask, stream(seed, "aug.rng"))
            np.testing.assert_array_equal(img_a[0], mask_a.astype(np.float32))

    def test_geometry_preserved(self):
        image = stream(3, "aug").standard_normal((3, 5, 5)).astype(np.float32)
        mask = np.zeros((5, 5), dtype=np.uint8)
        img_a, mask_a = tr.augment(image, mask, stream(4, "aug.rng"))
        assert img_a.shape == (3, 5, 5) and mask_a.shape == (5, 5)
        assert img_a.flags["C_CONTIGUOUS"] and mask_a.flags["C_CONTIGUOUS"]
        np.testing.assert_allclose(np.sort(img_a, axis=None),
                                   np.sort(image, axis=None))


class TestSlidingWindow:
    def test_documented_placement_grid(self):
        rows = tr.window_placements(3000, 1024, 512)
        cols = tr.window_placements(4000, 1024, 512)
        assert len(rows) == 5 and len(cols) == 7
        assert rows[-1] == 3000 - 1024 and cols[-1] == 4000 - 1024
        assert len(rows) * len(cols) == 35

    def test_full_coverage(self):
        for length, window, stride in ((3000, 1024, 512), (100, 30, 25), (64, 64, 1)):
            starts = tr.window_placements(length, window, stride)
            hit = np.zeros(length, dtype=bool)
            for s in starts:
                hit[s:s + min(window, length)] = True
            assert hit.all()

    def test_window_covering_image_is_single_placement(self):
        assert tr.window_placements(50, 64, 16) == [0]

    def test_equals_direct_inference_when_window_covers(self):
        rng = stream(5, "swi")
        image = rng.standard_normal((3, 20, 24)).astype(np.float32)

        def infer(chw):
            x = chw.sum(axis=0, keepdims=True)
            return np.stack([x[0], -x[0]])

        direct = infer(image)
        tiled = tr.sliding_window_infer(image, 32, 16, infer, num_classes=2)
        np.testing.assert_array_equal(tiled, direct)

    def test_overlaps_average_logits(self):
        image = np.zeros((3, 8, 4), dtype=np.float32)
        calls = []

        def infer(chw):
            calls.append(chw.shape)
            return np.full((2, *chw.shape[1:]), float(len(calls)))

        out = tr.sliding_window_infer(image, (4, 4), (4, 4), infer, num_classes=2)
        assert calls == [(3, 4, 4), (3, 4, 4)]
        np.testing.assert_array_equal(out[:, :4], 1.0)
        np.testing.assert_array_equal(out[:, 4:], 2.0)

    def test_overlap_mean_is_f64_then_f32(self):
        image = np.zeros((3, 4, 6), dtype=np.float32)
        values = iter((1.0, 2.0))

        def infer(chw):
            return np.full((1, *chw.shape[1:]), next(values), dtype=np.float32)

        out = tr.sliding_window_infer(image, (4, 4), (4, 2), infer, num_classes=1)
        assert out.dtype == np.float32
        np.testing.assert_array_equal(out[0, :, :2], 1.0)
        np.testing.assert_array_equal(out[0, :, 2:4], 1.5)  # both windows hit
        np.testing.assert_array_equal(out[0, :, 4:], 2.0)

    def test_bad_infer_output_rejected(self):
        image = np.zeros((3, 8, 8), dtype=np.float32)

        def infer(chw):
            return np.zeros((2, 3, 3), dtype=np.float32)

        with pytest.raises(ShapeError):
            tr.sliding_window_infer(image, 8, 8, infer, num_classes=2)
