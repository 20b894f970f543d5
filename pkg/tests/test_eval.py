from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from hmsearch.errors import DimensionMismatch, EmptyList, LengthMismatch, ZeroNormVector
from hmsearch.evaluation import (
    MatchingTrial,
    cosine_similarity,
    match_trial,
    matching_accuracy,
    next_frame_mse,
    sequence_mse,
)


class TestMse:
    def test_identical(self):
        f = np.random.default_rng(0).uniform(size=(4, 4))
        assert next_frame_mse(f, f) == 0.0

    def test_constant_offset(self):
        assert next_frame_mse(np.zeros((2, 2)), np.full((2, 2), 0.5)) == 0.25

    def test_checkerboard(self):
        assert next_frame_mse(np.zeros((2, 2)), [[0, 1], [1, 0]]) == 0.5

    def test_shape_mismatch(self):
        with pytest.raises(DimensionMismatch):
            next_frame_mse(np.zeros((2, 2)), np.zeros((2, 3)))

    def test_sequence_is_mean_of_frames(self):
        p = [np.zeros((2, 2)), np.zeros((2, 2))]
        a = [np.full((2, 2), 0.5), np.ones((2, 2))]
        assert sequence_mse(p, a) == pytest.approx((0.25 + 1.0) / 2)
        with pytest.raises(LengthMismatch):
            sequence_mse(p, a[:1])
        with pytest.raises(EmptyList):
            sequence_mse([], [])

    @given(arrays(float, (3, 3), elements=st.floats(0, 1)), arrays(float, (3, 3), elements=st.floats(0, 1)))
    def test_symmetric_nonnegative(self, a, b):
        assert next_frame_mse(a, b) == next_frame_mse(b, a) >= 0

    @given(arrays(int, (3, 3), elements=st.integers(0, 255)), arrays(int, (3, 3), elements=st.integers(0, 255)))
    def test_zero_iff_identical(self, a, b):
        # 8-bit intensities: differences below ~1e-154 would square to zero in float64
        assert (next_frame_mse(a / 255, b / 255) == 0) == np.array_equal(a, b)


class TestCosine:
    def test_same(self):
        assert cosine_similarity([1, 0], [1, 0]) == 1.0

    def test_orthogonal(self):
        assert cosine_similarity([1, 0], [0, 1]) == 0.0

    def test_scale(self):
        assert cosine_similarity([1, 1], [2, 2]) == pytest.approx(1.0, abs=1e-15)

    def test_zero(self):
        with pytest.raises(ZeroNormVector):
            cosine_similarity([0, 0], [1, 1])

    @given(arrays(float, 5, elements=st.floats(-100, 100)))
    def test_self_similarity(self, a):
        if np.linalg.norm(a) > 1e-6:
            assert cosine_similarity(a, a) == pytest.approx(1.0, abs=1e-12)


class TestMatching:
    def gallery(self, g=6, n=8):
        return np.eye(n)[:g]

    def test_exact_match(self):
        gal = self.gallery()
        assert match_trial(MatchingTrial(gal[3], gal, 3)) == (3, True)

    def test_scaled_probe(self):
        gal = np.random.default_rng(1).normal(size=(6, 8))
        assert match_trial(MatchingTrial(5 * gal[0], gal, 0))[0] == 0

    def test_tie_lowest_index(self):
        gal = self.gallery()
        gal[4] = gal[2]
        assert match_trial(MatchingTrial(gal[2], gal, 4)) == (2, False)

    def test_zero_gallery_item(self):
        gal = self.gallery()
        gal[1] = 0
        with pytest.raises(ZeroNormVector) as info:
            match_trial(MatchingTrial(gal[0], gal, 0))
        assert info.value.position == 1

    def test_trial_validation(self):
        with pytest.raises(IndexError):
            MatchingTrial(np.ones(3), np.eye(3), 3)
        with pytest.raises(LengthMismatch):
            MatchingTrial(np.ones(4), np.eye(3), 0)

    def test_accuracy(self):
        gal = self.gallery()
        trials = [MatchingTrial(gal[i], gal, i) for i in range(4)]
        assert matching_accuracy(trials) == 1.0
        wrong = [MatchingTrial(gal[0], gal, 1), MatchingTrial(gal[2], gal, 3)]
        assert matching_accuracy(trials[:2] + wrong) == 0.5
        with pytest.raises(EmptyList):
            matching_accuracy([])

    def test_chance(self):
        rng = np.random.default_rng(7)
        trials = [MatchingTrial(rng.normal(size=8), rng.normal(size=(50, 8)), int(rng.integers(50)))
                  for _ in range(3000)]
        se = np.sqrt(0.02 * 0.98 / 3000)
        assert abs(matching_accuracy(trials) - 0.02) < 3 * se

    @given(st.integers(0, 2**32 - 1), st.floats(0.01, 100), st.integers(0, 9), st.floats(0.01, 100))
    def test_positive_scaling_invariance(self, seed, a, j, b):
        rng = np.random.default_rng(seed)
        gal = rng.normal(size=(10, 6))
        probe = rng.normal(size=6)
        before = match_trial(MatchingTrial(probe, gal, 0))[0]
        scaled = gal.copy()
        scaled[j] *= b
        after = match_trial(MatchingTrial(a * probe, scaled, 0))[0]
        sims = gal @ probe / np.linalg.norm(gal, axis=1)
        top2 = np.sort(sims)[-2:]
        if top2[1] - top2[0] > 1e-9 * abs(top2[1]):
            assert before == after
