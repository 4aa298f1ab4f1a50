import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from radarscale.core import (
    EPS_DEPTH,
    CameraIntrinsics,
    EmptyDomain,
    FloatMap,
    InvalidMap,
    KindMismatch,
    MapKind,
    PointCloud,
    Pose,
    ShapeMismatch,
    apply_mask,
    invert_inverse_map,
    invert_map,
    masked_mean,
    masked_sum,
    resize_bilinear,
)


def depth(values, valid=None):
    values = np.asarray(values, dtype=float)
    if valid is None:
        return FloatMap.dense(values, MapKind.DEPTH)
    return FloatMap(values, valid, MapKind.DEPTH)


class TestFloatMap:
    def test_invalid_pixels_get_sentinel(self):
        m = FloatMap(np.array([[5.0, 7.0]]), np.array([[True, False]]), MapKind.DEPTH)
        assert m.values[0, 1] == 0.0
        assert m.n_valid == 1

    def test_immutable(self):
        m = depth([[1.0]])
        with pytest.raises(ValueError):
            m.values[0, 0] = 3.0

    def test_positive_kinds_reject_nonpositive(self):
        with pytest.raises(InvalidMap):
            depth([[1.0, -2.0]])
        # the same value at an invalid pixel is fine
        depth([[1.0, -2.0]], [[True, False]])

    def test_confidence_range(self):
        with pytest.raises(InvalidMap):
            FloatMap.dense([[1.5]], MapKind.CONFIDENCE)
        FloatMap.dense([[0.0, 1.0]], MapKind.CONFIDENCE)

    def test_nonfinite_rejected(self):
        with pytest.raises(InvalidMap):
            FloatMap.dense([[np.nan]], MapKind.RESIDUAL)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            FloatMap(np.ones((2, 2)), np.ones((2, 3), bool), MapKind.DEPTH)

    def test_empty_reductions_raise(self):
        m = FloatMap.empty(3, 4, MapKind.DEPTH)
        with pytest.raises(EmptyDomain):
            masked_mean(m)
        with pytest.raises(EmptyDomain):
            masked_sum(m)

    def test_reductions_ignore_invalid(self):
        m = depth([[1.0, 100.0, 3.0]], [[True, False, True]])
        assert masked_sum(m) == 4.0
        assert masked_mean(m) == 2.0


class TestInvert:
    def test_reciprocal(self):
        out = invert_map(depth([[2.0, 1.0]]))
        assert out.kind is MapKind.INVERSE_DEPTH
        assert out.values.tolist() == [[0.5, 1.0]]

    def test_tiny_depth_invalidated(self):
        out = invert_map(depth([[1e-12, 4.0]]))
        assert out.valid.tolist() == [[False, True]]

    def test_kind_checked(self):
        with pytest.raises(KindMismatch):
            invert_map(FloatMap.dense([[1.0]], MapKind.SCALE))

    @given(hnp.arrays(np.float64, (4, 5), elements=st.floats(1e-3, 1e4)))
    def test_double_inversion_is_identity(self, vals):
        m = depth(vals)
        back = invert_inverse_map(invert_map(m))
        np.testing.assert_allclose(back.values, vals, rtol=1e-12)
        assert back.valid.all()


class TestMask:
    def test_identity_and_annihilator(self):
        m = depth(np.full((3, 3), 2.0))
        assert apply_mask(m, np.ones((3, 3), bool)).valid.all()
        assert apply_mask(m, np.zeros((3, 3), bool)).n_valid == 0

    @pytest.mark.parametrize("h,w", [(3, 3), (4, 5), (5, 7)])
    def test_checkerboard_count(self, h, w):
        m = depth(np.full((h, w), 3.0))
        board = (np.add.outer(np.arange(h), np.arange(w)) % 2) == 0
        assert apply_mask(m, board).n_valid == math.ceil(h * w / 2)

    def test_values_unchanged_on_kept_pixels(self):
        m = depth([[1.0, 2.0]])
        out = apply_mask(m, [[False, True]])
        assert out.values[0, 1] == 2.0

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            apply_mask(depth([[1.0]]), np.ones((2, 2), bool))


class TestResize:
    def test_same_size_is_bit_identical(self, rng):
        m = depth(rng.uniform(1, 5, (6, 7)))
        out = resize_bilinear(m, 7, 6)
        assert np.array_equal(out.values, m.values) and np.array_equal(out.valid, m.valid)

    def test_constant_stays_constant(self):
        out = resize_bilinear(depth(np.full((5, 4), 3.25)), 9, 11)
        assert out.shape == (11, 9)
        assert np.all(out.values == 3.25)

    def test_hand_case(self):
        out = resize_bilinear(depth([[1.0, 3.0], [1.0, 3.0]]), 3, 2)
        assert out.values[:, 1].tolist() == [2.0, 2.0]
        assert out.values[:, 0].tolist() == [1.0, 1.0]

    def test_invalid_source_spreads(self):
        m = depth([[1.0, 3.0], [1.0, 3.0]], [[True, True], [True, False]])
        out = resize_bilinear(m, 3, 3)
        # center pixel touches all four sources, one of them invalid
        assert not out.valid[1, 1]
        assert out.valid[0, 0]

    def test_rejects_tiny_targets(self):
        with pytest.raises(ValueError):
            resize_bilinear(depth(np.ones((3, 3))), 1, 3)

    @given(hnp.arrays(np.float64, (4, 6), elements=st.floats(0.5, 90.0)),
           st.integers(2, 9), st.integers(2, 9))
    def test_bounds_preserved(self, vals, w, h):
        out = resize_bilinear(depth(vals), w, h)
        v = out.valid_values()
        assert v.min() >= vals.min() and v.max() <= vals.max()


class TestGeometryTypes:
    def test_intrinsics_validation(self):
        with pytest.raises(ValueError):
            CameraIntrinsics(0.0, 1.0, 0.0, 0.0, 4, 4)
        with pytest.raises(ValueError):
            CameraIntrinsics(1.0, 1.0, 4.0, 0.0, 4, 4)

    def test_back_project_round_trip(self):
        K = CameraIntrinsics(100.0, 120.0, 50.0, 40.0, 100, 80)
        pts = K.back_project(np.array([10.0, 70.0]), np.array([5.0, 60.0]), np.array([2.0, 9.0]))
        u, v = K.project(pts)
        np.testing.assert_allclose(u, [10.0, 70.0])
        np.testing.assert_allclose(v, [5.0, 60.0])

    def test_pose_rejects_reflection(self):
        m = np.eye(4)
        m[0, 0] = -1.0
        with pytest.raises(ValueError):
            Pose(m)

    def test_pose_inverse(self):
        c, s = math.cos(0.3), math.sin(0.3)
        T = Pose.from_rt(np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]]), [1.0, 2.0, 3.0])
        np.testing.assert_allclose((T @ T.inverse()).matrix, np.eye(4), atol=1e-15)

    def test_cloud_validation(self):
        with pytest.raises(ValueError):
            PointCloud(np.array([[0.0, 0.0, np.inf]]))
        assert len(PointCloud(np.zeros((0, 3)))) == 0

    def test_cloud_attributes_follow_subset(self):
        c = PointCloud(np.arange(9.0).reshape(3, 3), {"a": np.array([1.0, 2.0, 3.0])})
        sub = c.subset(np.array([False, True, True]))
        assert sub.attributes["a"].tolist() == [2.0, 3.0]
        assert EPS_DEPTH == 1e-6
