import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from checkoutkit.geometry import (
    AffinePose,
    BBox,
    BinaryMask,
    Detection,
    ExemplarImage,
    connected_components,
    iou,
    mask_bbox,
    mask_centroid,
    transform_image,
    transform_mask,
)
from oracles import flood_fill_components

boxes = st.builds(
    lambda x, y, w, h: BBox(x, y, x + w, y + h),
    st.floats(-50, 50),
    st.floats(-50, 50),
    st.floats(0, 40),
    st.floats(0, 40),
)


class TestBBox:
    def test_orders_corners(self):
        with pytest.raises(ValueError):
            BBox(2, 0, 1, 1)

    def test_xywh_round_trip(self):
        box = BBox(1.5, 2.0, 4.0, 7.25)
        assert BBox.from_xywh(*box.as_xywh()) == box


class TestIou:
    def test_identical_unit_boxes(self):
        box = BBox(0, 0, 1, 1)
        assert iou(box, box) == 1.0

    def test_disjoint(self):
        assert iou(BBox(0, 0, 1, 1), BBox(5, 5, 6, 6)) == 0.0

    def test_partial_overlap_hand_value(self):
        # 2x2 squares offset by (1, 1): intersection 1, union 7.
        assert iou(BBox(0, 0, 2, 2), BBox(1, 1, 3, 3)) == pytest.approx(1 / 7)

    def test_degenerate_union(self):
        point = BBox(3, 3, 3, 3)
        assert iou(point, point) == 0.0

    @given(boxes, boxes)
    def test_symmetric(self, a, b):
        assert iou(a, b) == pytest.approx(iou(b, a))

    @given(boxes)
    def test_self_iou_is_one_for_positive_area(self, box):
        if box.area > 0:
            assert iou(box, box) == pytest.approx(1.0)

    @given(boxes, boxes)
    def test_range(self, a, b):
        assert 0.0 <= iou(a, b) <= 1.0


class TestAffinePose:
    def test_rotation_normalized(self):
        assert AffinePose(rotation=360.0).rotation == 0.0
        assert AffinePose(rotation=-90.0).rotation == 270.0

    def test_scale_bounds(self):
        with pytest.raises(ValueError):
            AffinePose(scale=0.0)
        with pytest.raises(ValueError):
            AffinePose(scale=1.5)


class TestTransformMask:
    def test_identity_is_bit_identical(self):
        rng = np.random.default_rng(0)
        mask = BinaryMask(rng.random((20, 30)) < 0.4)
        out = transform_mask(mask, AffinePose(), (30, 20))
        assert out == mask

    def test_full_turn_equals_no_turn(self):
        rng = np.random.default_rng(1)
        mask = BinaryMask(rng.random((16, 16)) < 0.5)
        turned = transform_mask(mask, AffinePose(rotation=360.0), (16, 16))
        still = transform_mask(mask, AffinePose(rotation=0.0), (16, 16))
        assert turned == still

    def test_half_scale_area(self):
        mask = BinaryMask.full(100, 100)
        out = transform_mask(mask, AffinePose(scale=0.5), (100, 100))
        assert abs(out.area - 2500) <= 0.02 * 2500

    def test_clips_outside_canvas(self):
        mask = BinaryMask.full(10, 10)
        out = transform_mask(mask, AffinePose(translation=(8.0, 0.0)), (10, 10))
        assert out.area == 20  # two columns remain

    def test_integer_translation_is_exact_shift(self):
        rng = np.random.default_rng(2)
        mask = BinaryMask(rng.random((12, 12)) < 0.5)
        shifted = transform_mask(mask, AffinePose(translation=(5.0, 3.0)), (30, 30))
        expected = np.zeros((30, 30), dtype=bool)
        expected[3:15, 5:17] = mask.bits
        assert shifted == BinaryMask(expected)

    def test_rejects_bad_canvas(self):
        with pytest.raises(ValueError):
            transform_mask(BinaryMask.full(4, 4), AffinePose(), (0, 5))


class TestTransformImage:
    def test_matches_mask_path_and_colors(self):
        rng = np.random.default_rng(3)
        pixels = rng.integers(0, 255, size=(24, 24, 3), dtype=np.uint8)
        mask = BinaryMask(rng.random((24, 24)) < 0.6)
        exemplar = ExemplarImage(category=1, view=0, pixels=pixels, mask=mask)
        pose = AffinePose(rotation=37.0, scale=0.8, translation=(10.0, 6.0))
        out_mask, out_rgb = transform_image(exemplar, pose, (64, 64))
        assert out_mask == transform_mask(mask, pose, (64, 64))
        assert np.all(out_rgb[~out_mask.bits] == 0)

    def test_requires_mask(self):
        pixels = np.zeros((4, 4, 3), dtype=np.uint8)
        exemplar = ExemplarImage(category=1, view=0, pixels=pixels)
        with pytest.raises(ValueError):
            transform_image(exemplar, AffinePose(), (4, 4))


class TestConnectedComponents:
    def test_empty_mask(self):
        assert connected_components(BinaryMask.zeros(5, 5)) == []

    def test_full_mask_single_component(self):
        components = connected_components(BinaryMask.full(4, 6))
        assert len(components) == 1
        assert components[0].area == 24

    def test_two_blocks_match_flood_fill_oracle(self):
        bits = np.zeros((10, 10), dtype=bool)
        bits[1:4, 1:4] = True
        bits[6:9, 6:9] = True
        components = connected_components(BinaryMask(bits))
        oracle = flood_fill_components(bits)
        assert sorted(c.area for c in components) == sorted(len(s) for s in oracle)
        got = sorted(
            frozenset(zip(*np.nonzero(c.mask.bits))) for c in components
        )
        assert got == sorted(frozenset(s) for s in oracle)

    def test_diagonal_connectivity_difference(self):
        bits = np.zeros((4, 4), dtype=bool)
        bits[0, 0] = bits[1, 1] = True
        assert len(connected_components(BinaryMask(bits), connectivity=8)) == 1
        assert len(connected_components(BinaryMask(bits), connectivity=4)) == 2

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=25, deadline=None)
    def test_random_masks_match_oracle(self, seed):
        rng = np.random.default_rng(seed)
        bits = rng.random((12, 12)) < 0.35
        components = connected_components(BinaryMask(bits))
        oracle = flood_fill_components(bits)
        assert len(components) == len(oracle)
        assert sum(c.area for c in components) == int(bits.sum())

    def test_areas_sum_to_popcount(self):
        rng = np.random.default_rng(7)
        bits = rng.random((20, 20)) < 0.5
        components = connected_components(BinaryMask(bits))
        assert sum(c.area for c in components) == int(bits.sum())


class TestMaskBBoxCentroid:
    def test_full_mask_extent(self):
        assert mask_bbox(BinaryMask.full(7, 3)) == BBox(0, 0, 7, 3)

    def test_single_bit(self):
        bits = np.zeros((8, 8), dtype=bool)
        bits[5, 3] = True
        assert mask_bbox(BinaryMask(bits)) == BBox(3, 5, 4, 6)
        assert mask_centroid(BinaryMask(bits)) == (3.0, 5.0)

    def test_l_shape_against_scan_oracle(self):
        bits = np.zeros((8, 8), dtype=bool)
        bits[0:2, 0:2] = True
        bits[0:1, 0:5] = True
        ys, xs = np.nonzero(bits)
        expected = BBox(xs.min(), ys.min(), xs.max() + 1, ys.max() + 1)
        assert mask_bbox(BinaryMask(bits)) == expected
        assert expected == BBox(0, 0, 5, 2)

    def test_symmetric_square_centroid(self):
        bits = np.zeros((9, 9), dtype=bool)
        bits[2:7, 2:7] = True
        assert mask_centroid(BinaryMask(bits)) == (4.0, 4.0)

    def test_two_bit_midpoint(self):
        bits = np.zeros((4, 12), dtype=bool)
        bits[0, 0] = bits[0, 10] = True
        assert mask_centroid(BinaryMask(bits)) == (5.0, 0.0)

    def test_empty_mask_errors(self):
        with pytest.raises(ValueError):
            mask_bbox(BinaryMask.zeros(3, 3))
        with pytest.raises(ValueError):
            mask_centroid(BinaryMask.zeros(3, 3))

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=25, deadline=None)
    def test_centroid_inside_bbox(self, seed):
        rng = np.random.default_rng(seed)
        bits = rng.random((10, 10)) < 0.3
        if not bits.any():
            bits[4, 4] = True
        mask = BinaryMask(bits)
        cx, cy = mask_centroid(mask)
        box = mask_bbox(mask)
        assert box.x_min <= cx < box.x_max
        assert box.y_min <= cy < box.y_max


class TestTypes:
    def test_mask_validates_dimensions(self):
        with pytest.raises(ValueError):
            BinaryMask(np.zeros((0, 4), dtype=bool))

    def test_mask_area_cached(self):
        mask = BinaryMask.full(4, 4)
        assert mask.area == 16

    def test_exemplar_mask_dimension_check(self):
        pixels = np.zeros((4, 4, 3), dtype=np.uint8)
        with pytest.raises(ValueError):
            ExemplarImage(category=1, view=0, pixels=pixels, mask=BinaryMask.full(3, 3))

    def test_detection_validation(self):
        box = BBox(0, 0, 1, 1)
        with pytest.raises(ValueError):
            Detection(box, category=0, score=0.5)
        with pytest.raises(ValueError):
            Detection(box, category=1, score=1.5)
