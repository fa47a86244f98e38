import numpy as np
import pytest

from checkoutkit.density import DensityMap, count_from_density
from checkoutkit.geometry import BBox, Detection, iou
from checkoutkit.metrics import ShoppingList
from checkoutkit.pipeline import samples_from_scenes
from checkoutkit.reliability import (
    AdaptationConfig,
    TrainingHooks,
    SceneSample,
    SimulatedCounter,
    SimulatedDetector,
    SimulatedModelNoise,
    is_reliable,
    nms,
    pseudo_label,
    run_adaptation,
    select_reliable,
)
from checkoutkit.synthesis import generate_scenes


def _det(x, y, w, h, category, score):
    return Detection(BBox.from_xywh(x, y, w, h), category, score)


@pytest.fixture(scope="module")
def medium_samples(pruned_catalog):
    scenes = generate_scenes(pruned_catalog, "medium", 30, base_seed=404, canvas=(256, 256))
    return samples_from_scenes(scenes)


def _models(noise=None, seed=1, categories=12):
    noise = noise or SimulatedModelNoise.noiseless()
    return (
        SimulatedDetector(noise, seed, categories),
        SimulatedCounter(noise, seed),
    )


class TestNms:
    def test_empty(self):
        assert nms([], 0.5) == []

    def test_same_category_duplicate_suppressed(self):
        a = _det(0, 0, 10, 10, 1, 0.9)
        b = _det(0, 0, 10, 10, 1, 0.8)
        assert nms([b, a], 0.5) == [a]

    def test_different_categories_both_survive(self):
        a = _det(0, 0, 10, 10, 1, 0.9)
        b = _det(0, 0, 10, 10, 2, 0.8)
        assert nms([a, b], 0.5) == [a, b]

    def test_output_sorted_by_score(self):
        dets = [
            _det(0, 0, 5, 5, 1, 0.2),
            _det(20, 0, 5, 5, 1, 0.8),
            _det(40, 0, 5, 5, 1, 0.5),
        ]
        assert [d.score for d in nms(dets, 0.5)] == [0.8, 0.5, 0.2]

    def test_boundary_iou_survives(self):
        # IoU exactly at the threshold is kept (suppression needs strictly more).
        a = _det(0, 0, 10, 10, 1, 0.9)
        b = _det(0, 5, 10, 10, 1, 0.8)  # IoU = 50/150 = 1/3
        assert len(nms([a, b], 1 / 3)) == 2

    def test_survivors_respect_threshold(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            dets = [
                _det(
                    rng.uniform(0, 50),
                    rng.uniform(0, 50),
                    rng.uniform(5, 15),
                    rng.uniform(5, 15),
                    int(rng.integers(1, 3)),
                    float(rng.uniform(0, 1)),
                )
                for _ in range(12)
            ]
            survivors = nms(dets, 0.4)
            scores_in = sorted(d.score for d in dets)
            for d in survivors:
                assert d.score in scores_in
            for i, a in enumerate(survivors):
                for b in survivors[i + 1 :]:
                    if a.category == b.category:
                        assert iou(a.box, b.box) <= 0.4


class TestGate:
    def test_perfect_models_pass(self, medium_samples):
        detector, counter = _models()
        for sample in medium_samples[:10]:
            verdict, diag = is_reliable(sample, detector, counter)
            assert verdict
            assert diag.rounded_count == diag.confident_detections
            assert diag.rounded_count == sample.gt_shopping.total()

    def test_deleted_detection_flips(self, medium_samples):
        detector, counter = _models()

        class DropOne:
            concurrency_safe = True

            def detect(self, image):
                return detector.detect(image)[1:]

        for sample in medium_samples[:10]:
            verdict, _ = is_reliable(sample, DropOne(), counter)
            assert not verdict

    def test_scaled_counter_flips_on_big_scenes(self, medium_samples):
        detector, counter = _models()

        class Scaled:
            concurrency_safe = True

            def count_map(self, image):
                return DensityMap(counter.count_map(image).values * 1.1)

        for sample in medium_samples[:10]:
            assert sample.gt_shopping.total() >= 10
            verdict, _ = is_reliable(sample, detector, Scaled())
            assert not verdict

    def test_gate_only_counts_confident(self, medium_samples):
        # Detections at or below the threshold never enter the count.
        sample = medium_samples[0]

        class Muted:
            concurrency_safe = True

            def detect(self, image):
                return [
                    Detection(d.box, d.category, 0.95) for d in _models()[0].detect(image)
                ]

        detector, counter = _models()
        verdict, diag = is_reliable(sample, Muted(), counter)
        assert diag.confident_detections == 0
        assert not verdict

    def test_gate_invariant_under_detection_permutation(self, medium_samples):
        detector, counter = _models()

        class Reversed:
            concurrency_safe = True

            def detect(self, image):
                return list(reversed(detector.detect(image)))

        for sample in medium_samples[:5]:
            base, _ = is_reliable(sample, detector, counter)
            flipped, _ = is_reliable(sample, Reversed(), counter)
            assert base == flipped

    def test_gate_ignores_geometry_of_confident_detections(self):
        # Equality depends only on the number of super-threshold scores, so
        # nudging well-separated boxes around never changes the verdict.
        sample = SceneSample(
            image_id="geom",
            width=400,
            height=400,
            gt_points=(((50.0, 50.0), 1), ((200.0, 200.0), 2), ((350.0, 350.0), 3)),
            gt_shopping=ShoppingList({1: 1, 2: 1, 3: 1}),
        )
        _, counter = _models()
        rng = np.random.default_rng(0)
        verdicts = set()
        for _ in range(10):
            jitter = rng.uniform(-2, 2, size=(3, 2))

            class Wobbly:
                concurrency_safe = True

                def detect(self, image, _jitter=jitter):
                    boxes = [(40, 40, 60, 60), (190, 190, 210, 210), (340, 340, 360, 360)]
                    return [
                        Detection(
                            BBox(
                                x0 + _jitter[i, 0],
                                y0 + _jitter[i, 1],
                                x1 + _jitter[i, 0],
                                y1 + _jitter[i, 1],
                            ),
                            i + 1,
                            0.99,
                        )
                        for i, (x0, y0, x1, y1) in enumerate(boxes)
                    ]

            verdict, diag = is_reliable(sample, Wobbly(), counter)
            assert diag.confident_detections == 3
            verdicts.add(verdict)
        assert verdicts == {True}


class TestSelectReliable:
    def test_perfect_models_select_everything(self, medium_samples):
        detector, counter = _models()
        reliable, rejected = select_reliable(medium_samples, detector, counter)
        assert reliable == list(medium_samples)
        assert rejected == []

    def test_blind_detector_selects_nothing(self, medium_samples):
        _, counter = _models()

        class Blind:
            concurrency_safe = True

            def detect(self, image):
                return []

        reliable, rejected = select_reliable(medium_samples, Blind(), counter)
        assert reliable == []
        assert rejected == list(medium_samples)

    def test_partition_is_exact_and_ordered(self, medium_samples):
        noise = SimulatedModelNoise(miss_prob=0.3, score_concentration=64.0)
        detector, counter = _models(noise)
        reliable, rejected = select_reliable(medium_samples, detector, counter)
        assert len(reliable) + len(rejected) == len(medium_samples)
        assert set(s.image_id for s in reliable).isdisjoint(
            s.image_id for s in rejected
        )
        merged = sorted(reliable + rejected, key=lambda s: s.image_id)
        assert merged == sorted(medium_samples, key=lambda s: s.image_id)

    def test_parallel_matches_sequential(self, medium_samples):
        noise = SimulatedModelNoise(miss_prob=0.2, score_concentration=64.0)
        detector, counter = _models(noise)
        seq = select_reliable(medium_samples, detector, counter)
        par = select_reliable(medium_samples, detector, counter, max_workers=4)
        assert [s.image_id for s in seq[0]] == [s.image_id for s in par[0]]

    def test_miss_prob_sweep_monotone_in_expectation(self, pruned_catalog):
        scenes = generate_scenes(pruned_catalog, "medium", 200, base_seed=2023, canvas=(256, 256))
        samples = samples_from_scenes(scenes)
        selected_counts = []
        for miss in (0.0, 0.1, 0.3, 0.5):
            noise = SimulatedModelNoise(miss_prob=miss)
            detector, counter = _models(noise, seed=5)
            reliable, _ = select_reliable(samples, detector, counter)
            selected_counts.append(len(reliable))
        assert selected_counts[0] == len(samples)
        assert sorted(selected_counts, reverse=True) == selected_counts


class TestPseudoLabel:
    def test_perfect_oracle_reproduces_ground_truth(self, medium_samples):
        detector, _ = _models()
        for sample in medium_samples[:10]:
            labels = pseudo_label(sample, detector)
            assert labels.shopping_list == sample.gt_shopping
            assert len(labels.boxes) == len(sample.gt_boxes)
            for (box, category), (gt_box, gt_category) in zip(
                sorted(labels.boxes, key=lambda b: (b[0].x_min, b[0].y_min)),
                sorted(sample.gt_boxes, key=lambda b: (b[0].x_min, b[0].y_min)),
            ):
                assert category == gt_category
                assert iou(box, gt_box) >= 0.99

    def test_flipped_label_changes_two_entries(self):
        sample = SceneSample(
            image_id="fixture",
            width=100,
            height=100,
            gt_boxes=(
                (BBox(0, 0, 10, 10), 1),
                (BBox(30, 30, 40, 40), 2),
                (BBox(60, 60, 80, 80), 2),
            ),
            gt_points=(((5.0, 5.0), 1), ((35.0, 35.0), 2), ((70.0, 70.0), 2)),
            gt_shopping=ShoppingList({1: 1, 2: 2}),
        )

        class OneFlip:
            concurrency_safe = True

            def detect(self, image):
                return [
                    _det(0, 0, 10, 10, 1, 0.99),
                    _det(30, 30, 10, 10, 3, 0.99),  # true category 2, flipped to 3
                    _det(60, 60, 20, 20, 2, 0.99),
                ]

        _, counter = _models()
        verdict, _ = is_reliable(sample, OneFlip(), counter)
        assert verdict  # count still matches: 3 == 3
        labels = pseudo_label(sample, OneFlip())
        differing = {
            category
            for category in labels.shopping_list.categories()
            | sample.gt_shopping.categories()
            if labels.shopping_list.get(category) != sample.gt_shopping.get(category)
        }
        assert len(differing) == 2

    def test_empty_detections_give_empty_labels(self):
        sample = SceneSample(image_id="empty", width=10, height=10)

        class Silent:
            concurrency_safe = True

            def detect(self, image):
                return []

        labels = pseudo_label(sample, Silent())
        assert labels.boxes == ()
        assert labels.shopping_list == ShoppingList()


class TestRunAdaptation:
    def test_perfect_models_end_to_end(self, medium_samples):
        detector, counter = _models()
        report = run_adaptation(
            train_set=medium_samples,
            test_set=medium_samples,
            detector=detector,
            counter=counter,
        )
        assert report.selected_count == len(medium_samples)
        assert report.rejected_count == 0
        assert report.selection_precision == 1.0
        assert report.metrics.c_acc == 1.0
        assert report.metrics.map50 == 1.0

    def test_hook_sequence(self, medium_samples):
        calls = []
        hooks = TrainingHooks(
            train=lambda data: calls.append(("train", len(data))),
            fine_tune=lambda data: calls.append(("fine-tune", len(data))),
            remove_counter=lambda: calls.append(("remove-counter", None)),
        )
        detector, counter = _models()
        cfg = AdaptationConfig(n_iter=3)
        report = run_adaptation(
            medium_samples, medium_samples, detector, counter, hooks, cfg
        )
        assert [name for name, _ in calls] == (
            ["train"] * 3 + ["remove-counter"] + ["fine-tune"] * 3
        )
        assert [p.name for p in report.phases] == (
            ["train"] * 3
            + ["select", "remove-counter"]
            + ["fine-tune"] * 3
            + ["evaluate"]
        )

    def test_empty_selection_errors_by_default(self, medium_samples):
        class Blind:
            concurrency_safe = True

            def detect(self, image):
                return []

        _, counter = _models()
        with pytest.raises(RuntimeError, match="no images"):
            run_adaptation(medium_samples, medium_samples, Blind(), counter)

    def test_deterministic_given_seeds(self, medium_samples):
        noise = SimulatedModelNoise(miss_prob=0.15, score_concentration=64.0)
        runs = []
        for _ in range(2):
            detector, counter = _models(noise, seed=6)
            report = run_adaptation(
                medium_samples,
                medium_samples,
                detector,
                counter,
                cfg=AdaptationConfig(skip_fine_tune_when_empty=True),
            )
            runs.append(report)
        assert runs[0].selected_ids == runs[1].selected_ids
        assert runs[0].selection_precision == runs[1].selection_precision
        assert runs[0].metrics.to_dict() == runs[1].metrics.to_dict()

    def test_empty_selection_skippable(self, medium_samples):
        class Blind:
            concurrency_safe = True

            def detect(self, image):
                return []

        _, counter = _models()
        calls = []
        hooks = TrainingHooks(fine_tune=lambda data: calls.append(len(data)))
        cfg = AdaptationConfig(skip_fine_tune_when_empty=True)
        report = run_adaptation(
            medium_samples, medium_samples, Blind(), counter, hooks, cfg
        )
        assert report.selected_count == 0
        assert calls == []
        assert "fine-tune" not in [p.name for p in report.phases]


class TestSimulatedModels:
    def test_noiseless_matches_ground_truth(self, medium_samples):
        detector, counter = _models()
        for sample in medium_samples[:5]:
            dets = detector.detect(sample)
            assert len(dets) == len(sample.gt_boxes)
            assert all(d.score == 1.0 for d in dets)
            got = sorted(
                (d.box.x_min, d.box.y_min, d.box.x_max, d.box.y_max, d.category)
                for d in dets
            )
            want = sorted(
                (b.x_min, b.y_min, b.x_max, b.y_max, c) for b, c in sample.gt_boxes
            )
            assert got == want
            density = counter.count_map(sample)
            assert count_from_density(density) == pytest.approx(
                sample.gt_shopping.total(), abs=1e-6
            )

    def test_miss_prob_one_empties_output(self, medium_samples):
        detector, _ = _models(SimulatedModelNoise(miss_prob=1.0))
        assert detector.detect(medium_samples[0]) == []

    def test_deterministic_per_seed_and_image(self, medium_samples):
        noise = SimulatedModelNoise(
            miss_prob=0.2, false_pos_rate=0.5, label_flip_prob=0.1,
            box_jitter=2.0, score_concentration=32.0,
        )
        det_a = SimulatedDetector(noise, 7, 12)
        det_b = SimulatedDetector(noise, 7, 12)
        det_c = SimulatedDetector(noise, 8, 12)
        sample = medium_samples[0]
        assert det_a.detect(sample) == det_b.detect(sample)
        assert det_a.detect(sample) != det_c.detect(sample)

    def test_empirical_miss_rate(self, pruned_catalog):
        noise = SimulatedModelNoise(miss_prob=0.2)
        detector = SimulatedDetector(noise, 99, 12)
        scenes = generate_scenes(pruned_catalog, "hard", 700, base_seed=31, canvas=(256, 256))
        samples = samples_from_scenes(scenes)
        total = kept = 0
        for sample in samples:
            total += len(sample.gt_boxes)
            kept += len(detector.detect(sample))
        drop_rate = 1.0 - kept / total
        assert total >= 10_000
        assert abs(drop_rate - 0.2) < 0.01

    def test_counter_noise_perturbs_total(self, medium_samples):
        noise = SimulatedModelNoise(count_noise_std=2.0)
        counter = SimulatedCounter(noise, 3)
        sample = medium_samples[0]
        total = count_from_density(counter.count_map(sample))
        assert total != pytest.approx(sample.gt_shopping.total(), abs=1e-6)
        assert np.all(counter.count_map(sample).values >= 0)

    def test_false_positive_rate(self, medium_samples):
        noise = SimulatedModelNoise(false_pos_rate=0.5)
        detector = SimulatedDetector(noise, 42, 12)
        extra = sum(
            len(detector.detect(s)) - len(s.gt_boxes) for s in medium_samples
        )
        assert extra > 0

    def test_noise_validation(self):
        with pytest.raises(ValueError):
            SimulatedModelNoise(miss_prob=1.5)
        with pytest.raises(ValueError):
            SimulatedModelNoise(score_concentration=0.0)
        with pytest.raises(ValueError):
            SimulatedModelNoise.from_dict({"bogus": 1})
