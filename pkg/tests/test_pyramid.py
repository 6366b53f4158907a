import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from pml.pyramid import (
    DensityMap,
    PointAnnotations,
    Pyramid,
    ResolutionSet,
    build_pyramid,
    downsample_avg,
    downsample_sum,
    rasterize,
    residual,
    upsample_replicate,
)
from pml.rng import SplitMix64


def square_maps(max_level=3, elements=st.floats(-8, 8, allow_nan=False, allow_infinity=False)):
    return st.integers(0, max_level).flatmap(
        lambda lvl: hnp.arrays(np.float64, (1 << lvl, 1 << lvl), elements=elements).map(
            lambda a: DensityMap(lvl, a)
        )
    )


class TestDensityMap:
    def test_flat_data_is_reshaped(self):
        m = DensityMap(1, [1.0, 2.0, 3.0, 4.0])
        assert m.data.shape == (2, 2)
        assert m.data[1, 0] == 3.0

    def test_wrong_length_rejected(self):
        with pytest.raises(ValueError, match="does not match"):
            DensityMap(1, [1.0, 2.0, 3.0])

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError, match="non-finite"):
            DensityMap(0, [[np.nan]])

    def test_data_is_locked(self):
        m = DensityMap(1, np.ones((2, 2)))
        with pytest.raises(ValueError):
            m.data[0, 0] = 5.0

    def test_nonnegativity_check(self):
        with pytest.raises(ValueError, match="negative"):
            DensityMap(0, [[-1.0]]).require_nonnegative()


class TestRasterize:
    def test_empty_annotations(self):
        ann = PointAnnotations(np.empty((0, 2)), scene_size=1.0)
        m = rasterize(ann, 3)
        assert m.data.shape == (8, 8)
        assert m.total() == 0.0

    def test_single_point_level_zero(self):
        ann = PointAnnotations(np.array([[0.5, 0.5]]), scene_size=1.0)
        assert rasterize(ann, 0).data.tolist() == [[1.0]]

    def test_quadrant_centers(self):
        pts = np.array([[0.25, 0.25], [0.75, 0.25], [0.25, 0.75], [0.75, 0.75]])
        ann = PointAnnotations(pts, scene_size=1.0)
        got = rasterize(ann, 1)
        # independent evaluation of the partition rule
        expected = np.zeros((2, 2))
        for x, y in pts:
            r = c = None
            for i in range(2):
                if i * 0.5 <= y < (i + 1) * 0.5:
                    r = i
                if i * 0.5 <= x < (i + 1) * 0.5:
                    c = i
            expected[r][c] += 1
        assert np.array_equal(got.data, expected)
        assert got.data.tolist() == [[1.0, 1.0], [1.0, 1.0]]

    def test_interior_grid_line_goes_to_larger_index(self):
        ann = PointAnnotations(np.array([[0.5, 0.0]]), scene_size=1.0)
        assert rasterize(ann, 1).data.tolist() == [[0.0, 1.0], [0.0, 0.0]]

    def test_out_of_bounds_names_offending_index(self):
        with pytest.raises(ValueError, match="point 2"):
            PointAnnotations(np.array([[0.1, 0.1], [0.2, 0.2], [1.0, 0.3]]), scene_size=1.0)

    def test_total_equals_point_count(self):
        rng = SplitMix64(11)
        pts = rng.uniform_block(2 * 257).reshape(257, 2) * 3.0
        ann = PointAnnotations(pts, scene_size=3.0)
        for level in (0, 2, 5):
            assert rasterize(ann, level).total() == 257.0


class TestDownsampleSum:
    def test_shape_8x8_to_2x2(self):
        m = DensityMap(3, SplitMix64(0).uniform_block(64).reshape(8, 8))
        assert downsample_sum(m, 1).data.shape == (2, 2)

    def test_block_sums_by_hand(self):
        assert downsample_sum(DensityMap(1, [[1, 2], [3, 4]]), 0).data.tolist() == [[10.0]]

    def test_identity(self):
        m = DensityMap(2, SplitMix64(1).uniform_block(16).reshape(4, 4))
        assert np.array_equal(downsample_sum(m, 2).data, m.data)

    def test_target_above_level_rejected(self):
        with pytest.raises(ValueError):
            downsample_sum(DensityMap(1, np.ones((2, 2))), 2)


class TestDownsampleAvg:
    def test_block_mean_by_hand(self):
        assert downsample_avg(DensityMap(1, [[1, 2], [3, 4]]), 0).data.tolist() == [[2.5]]

    def test_constant_map_stays_constant(self):
        m = DensityMap(3, np.full((8, 8), 2.75))
        for target in (0, 1, 2, 3):
            assert np.all(downsample_avg(m, target).data == 2.75)

    def test_equals_scaled_sum(self):
        m = DensityMap(3, SplitMix64(5).uniform_block(64, -4, 4).reshape(8, 8))
        for target in (0, 1, 2):
            scale = 4.0 ** (target - 3)
            np.testing.assert_allclose(
                downsample_avg(m, target).data,
                downsample_sum(m, target).data * scale,
                rtol=1e-12,
            )


class TestUpsampleReplicate:
    def test_single_cell(self):
        assert upsample_replicate(DensityMap(0, [[4.0]]), 1).data.tolist() == [[4, 4], [4, 4]]

    def test_avg_round_trip(self):
        m = DensityMap(1, [[1.0, 2.0], [3.0, 4.0]])
        round_trip = downsample_avg(upsample_replicate(m, 3), 1)
        assert np.array_equal(round_trip.data, m.data)

    def test_identity(self):
        m = DensityMap(1, [[1.0, 2.0], [3.0, 4.0]])
        assert np.array_equal(upsample_replicate(m, 1).data, m.data)

    def test_target_below_level_rejected(self):
        with pytest.raises(ValueError):
            upsample_replicate(DensityMap(1, np.ones((2, 2))), 0)


class TestResidual:
    def test_uniform_spread_leaves_nothing(self):
        r = residual(DensityMap(1, np.ones((2, 2))), DensityMap(0, [[4.0]]))
        assert np.array_equal(r.data, np.zeros((2, 2)))

    def test_hand_evaluated(self):
        r = residual(DensityMap(1, [[2.0, 0.0], [0.0, 2.0]]), DensityMap(0, [[4.0]]))
        assert r.data.tolist() == [[1.0, -1.0], [-1.0, 1.0]]

    def test_prior_zero_average(self):
        m = DensityMap(3, SplitMix64(9).uniform_block(64, -2, 5).reshape(8, 8))
        for coarse_level in (0, 1, 2):
            r = residual(m, downsample_sum(m, coarse_level))
            avg = DensityMap(3, r.data)
            assert np.max(np.abs(downsample_avg(avg, coarse_level).data)) < 1e-10

    def test_level_order_enforced(self):
        with pytest.raises(ValueError):
            residual(DensityMap(0, [[1.0]]), DensityMap(1, np.ones((2, 2))))


class TestBuildPyramid:
    def test_singleton(self):
        m = DensityMap(2, SplitMix64(2).uniform_block(16).reshape(4, 4))
        pyr = build_pyramid(m, [2])
        assert len(pyr) == 1
        assert np.array_equal(pyr.at_level(2).data, m.data)

    def test_zero_map(self):
        pyr = build_pyramid(DensityMap(3, np.zeros((8, 8))), [0, 1, 2, 3])
        assert all(m.total() == 0.0 for m in pyr)

    def test_counts_conserved_across_levels(self):
        m = DensityMap(4, SplitMix64(3).uniform_block(256).reshape(16, 16))
        pyr = build_pyramid(m, [0, 2, 4])
        totals = [lvl.total() for lvl in pyr]
        np.testing.assert_allclose(totals, totals[0], rtol=1e-12)

    def test_level_above_map_rejected(self):
        with pytest.raises(ValueError):
            build_pyramid(DensityMap(1, np.ones((2, 2))), [0, 2])

    def test_non_increasing_levels_rejected(self):
        with pytest.raises(ValueError, match="strictly increasing"):
            build_pyramid(DensityMap(2, np.ones((4, 4))), [1, 1, 2])


class TestResolutionSet:
    def test_dense(self):
        assert ResolutionSet.dense(2, 6).levels == (0, 1, 2, 6)
        assert ResolutionSet.dense(2, 6).sub_levels == (0, 1, 2)
        assert ResolutionSet.dense(2, 6).prediction_level == 6

    def test_dense_requires_room(self):
        with pytest.raises(ValueError):
            ResolutionSet.dense(3, 3)

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            ResolutionSet((-1, 2))

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            ResolutionSet(())

    def test_pyramid_at_level_missing(self):
        pyr = Pyramid((DensityMap(0, [[1.0]]),))
        with pytest.raises(KeyError):
            pyr.at_level(3)


class TestProperties:
    @given(square_maps(), st.data())
    @settings(max_examples=60, deadline=None)
    def test_count_conservation(self, m, data):
        target = data.draw(st.integers(0, m.level))
        coarse = downsample_sum(m, target)
        assert abs(coarse.total() - m.total()) <= 1e-12 * max(1.0, abs(m.total()))

    @given(square_maps(), st.data())
    @settings(max_examples=60, deadline=None)
    def test_pyramid_consistency(self, m, data):
        if m.level == 0:
            return
        j = data.draw(st.integers(1, m.level))
        i = data.draw(st.integers(0, j - 1))
        pyr = build_pyramid(m, [i, j])
        redone = downsample_sum(pyr.at_level(j), i)
        np.testing.assert_allclose(redone.data, pyr.at_level(i).data, rtol=1e-12, atol=1e-12)

    @given(square_maps(max_level=3), st.data())
    @settings(max_examples=60, deadline=None)
    def test_residual_prior(self, m, data):
        if m.level == 0:
            return
        lvl = data.draw(st.integers(0, m.level - 1))
        r = residual(m, downsample_sum(m, lvl))
        avg = downsample_avg(DensityMap(m.level, r.data), lvl)
        assert np.max(np.abs(avg.data)) < 1e-10

    @given(st.integers(0, 2), st.integers(1, 2), st.data())
    @settings(max_examples=60, deadline=None)
    def test_replicate_average_adjointness(self, l1, dl, data):
        l2 = l1 + dl
        elems = st.floats(-8, 8, allow_nan=False, allow_infinity=False)
        a = DensityMap(l1, data.draw(hnp.arrays(np.float64, (1 << l1, 1 << l1), elements=elems)))
        b = DensityMap(l2, data.draw(hnp.arrays(np.float64, (1 << l2, 1 << l2), elements=elems)))
        lhs = float(np.sum(upsample_replicate(a, l2).data * b.data))
        rhs = float(np.sum(a.data * (4.0 ** (l2 - l1)) * downsample_avg(b, l1).data))
        assert abs(lhs - rhs) <= 1e-10 * max(1.0, abs(lhs), abs(rhs))
