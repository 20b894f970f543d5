from __future__ import annotations

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from hmsearch.errors import (
    DegenerateRdm,
    EmptyList,
    StimulusMismatch,
    TooFewFrames,
    ZeroVarianceVector,
)
from hmsearch.rsa import (
    ActivationMatrix,
    ActivationSequence,
    Rdm,
    average_rdms,
    build_rdm,
    dissimilarity,
    flatten,
    hms,
    m_from_pairs,
    n_pairs,
    temporal_pool,
)
from oracles import rdm_oracle


def ids(m):
    return tuple(f"s{i}" for i in range(m))


def rdm(entries):
    entries = np.asarray(entries, dtype=float)
    return Rdm(ids(m_from_pairs(entries.size)), entries)


finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


class TestDissimilarity:
    def test_identical(self):
        assert dissimilarity([1, 2, 3], [1, 2, 3]) == 0.0

    def test_reversed(self):
        assert dissimilarity([1, 2, 3], [3, 2, 1]) == 2.0

    def test_hand_computed(self):
        # centred (-1,0,1).(-1,1,0) / 2 = 0.5
        assert dissimilarity([1, 2, 3], [1, 3, 2]) == pytest.approx(0.5, abs=1e-15)

    def test_constant_vector(self):
        with pytest.raises(ZeroVarianceVector):
            dissimilarity([1, 1, 1], [1, 2, 3])

    @given(arrays(float, 6, elements=finite), arrays(float, 6, elements=finite),
           st.floats(0.1, 10), st.floats(-5, 5))
    def test_symmetry_and_affine_invariance(self, v, w, a, b):
        assume(np.std(v) > 1e-3 and np.std(w) > 1e-3)
        d = dissimilarity(v, w)
        assert d == pytest.approx(dissimilarity(w, v), abs=1e-12)
        assert dissimilarity(a * v + b, w) == pytest.approx(d, abs=1e-9)
        assert dissimilarity(-v, w) == pytest.approx(2.0 - d, abs=1e-9)


class TestBuildRdm:
    def test_identical_rows(self):
        r = build_rdm(ActivationMatrix(ids(3), [[1, 2, 3]] * 3))
        np.testing.assert_array_equal(r.entries, [0.0, 0.0, 0.0])

    def test_three_stimulus_fixture(self):
        r = build_rdm(ActivationMatrix(ids(3), [[1, 2, 3], [3, 2, 1], [1, 3, 2]]))
        np.testing.assert_allclose(r.entries, [2.0, 0.5, 1.5], atol=1e-15)

    def test_zero_variance_names_stimulus(self):
        a = ActivationMatrix(("a", "b", "c"), [[1, 2, 3], [4, 4, 4], [0, 1, 0]])
        with pytest.raises(ZeroVarianceVector, match="'b'") as info:
            build_rdm(a)
        assert info.value.stimulus_id == "b"

    def test_matches_oracle(self):
        rng = np.random.default_rng(11)
        for _ in range(50):
            m, n = rng.integers(3, 21), rng.integers(2, 51)
            values = rng.normal(size=(m, n))
            np.testing.assert_allclose(build_rdm(ActivationMatrix(ids(m), values)).entries,
                                       rdm_oracle(values), atol=1e-10, rtol=0)

    @given(st.integers(3, 8), st.integers(2, 10), st.integers(0, 2**32 - 1))
    def test_range_and_determinism(self, m, n, seed):
        values = np.random.default_rng(seed).normal(size=(m, n))
        a = ActivationMatrix(ids(m), values)
        r = build_rdm(a)
        assert r.entries.size == n_pairs(m)
        assert np.all((r.entries >= 0) & (r.entries <= 2))
        assert np.array_equal(flatten(r), flatten(build_rdm(a)))


class TestFlatten:
    def test_identity_on_storage(self):
        np.testing.assert_array_equal(flatten(rdm([0.1, 0.2, 0.3])), [0.1, 0.2, 0.3])

    def test_row_major_order(self):
        sq = np.zeros((4, 4))
        for i in range(4):
            for j in range(i + 1, 4):
                sq[i, j] = sq[j, i] = 0.1 * (10 * (i + 1) + j + 1) / 34
        r = rdm([sq[0, 1], sq[0, 2], sq[0, 3], sq[1, 2], sq[1, 3], sq[2, 3]])
        np.testing.assert_array_equal(r.to_square(), sq)
        assert flatten(r).size == 6

    def test_two_stimuli(self):
        assert flatten(rdm([0.7])).size == 1


class TestHms:
    def test_self(self):
        r = rdm([0.1, 0.5, 0.3, 0.9, 0.2, 0.4])
        assert hms(r, r) == 1.0

    def test_hand_computed(self):
        assert hms(rdm([0.1, 0.2, 0.3]), rdm([0.3, 0.5, 0.4])) == 0.5

    def test_reversed(self):
        assert hms(rdm([0.1, 0.2, 0.3]), rdm([0.9, 0.8, 0.7])) == -1.0

    def test_id_mismatch(self):
        a = Rdm(("a", "b", "c"), [0.1, 0.2, 0.3])
        b = Rdm(("a", "c", "b"), [0.1, 0.2, 0.3])
        with pytest.raises(StimulusMismatch):
            hms(a, b)

    def test_all_tied(self):
        with pytest.raises(DegenerateRdm):
            hms(rdm([0.5, 0.5, 0.5]), rdm([0.1, 0.2, 0.3]))

    @given(st.integers(0, 2**32 - 1), st.integers(3, 12))
    def test_symmetric_and_bounded(self, seed, m):
        rng = np.random.default_rng(seed)
        a = rdm(rng.uniform(0, 2, n_pairs(m)))
        b = rdm(rng.uniform(0, 2, n_pairs(m)))
        h = hms(a, b)
        assert h == hms(b, a)
        assert -1.0 <= h <= 1.0

    @given(st.integers(0, 2**32 - 1), st.sampled_from(["sqrt", "square", "affine", "log1p"]))
    def test_monotone_invariance(self, seed, kind):
        rng = np.random.default_rng(seed)
        a = rng.uniform(0, 2, 15)
        b = rng.uniform(0, 2, 15)
        f = {"sqrt": lambda x: np.sqrt(2 * x), "square": lambda x: x * x / 2,
             "affine": lambda x: 0.3 * x + 0.1, "log1p": lambda x: np.log1p(x) / np.log(3) * 2}[kind]
        assume(np.unique(f(a)).size == a.size)
        assert hms(rdm(f(a)), rdm(b)) == hms(rdm(a), rdm(b))


class TestAverage:
    def test_single(self):
        r = rdm([0.1, 0.2, 0.3])
        assert average_rdms([r]) == r

    def test_two(self):
        np.testing.assert_array_equal(average_rdms([rdm([0, 1, 2]), rdm([2, 1, 0])]).entries, [1, 1, 1])

    def test_copies(self):
        r = rdm([0.25, 0.5, 0.75])
        assert average_rdms([r] * 4) == r

    def test_empty(self):
        with pytest.raises(EmptyList):
            average_rdms([])

    def test_mismatch(self):
        with pytest.raises(StimulusMismatch):
            average_rdms([Rdm(("a", "b"), [1.0]), Rdm(("a", "c"), [1.0])])

    @given(st.integers(0, 2**32 - 1))
    def test_order_invariant_and_commutes_with_flatten(self, seed):
        rng = np.random.default_rng(seed)
        rs = [rdm(rng.uniform(0, 2, 6)) for _ in range(4)]
        avg = average_rdms(rs)
        np.testing.assert_allclose(avg.entries, average_rdms(rs[::-1]).entries, atol=1e-15)
        np.testing.assert_allclose(flatten(avg), np.mean([flatten(r) for r in rs], axis=0), atol=1e-15)


class TestTemporalPool:
    def seq(self, T, n=10, same=False):
        rng = np.random.default_rng(T)
        base = rng.normal(size=(4, n))
        return ActivationSequence(tuple(
            ActivationMatrix(ids(4), base if same else rng.normal(size=(4, n))) for _ in range(T)))

    def test_two_frames_mean(self):
        s = self.seq(2)
        np.testing.assert_array_equal(temporal_pool(s, "mean").values, s.frames[1].values)

    def test_concat_shape(self):
        assert temporal_pool(self.seq(5), "concat").values.shape == (4, 40)

    def test_identical_frames(self):
        s = self.seq(5, same=True)
        np.testing.assert_allclose(temporal_pool(s, "mean").values, s.frames[0].values, atol=1e-15)

    def test_last(self):
        s = self.seq(5)
        np.testing.assert_array_equal(temporal_pool(s, "last").values, s.frames[-1].values)

    def test_first_frame_dropped(self):
        s = self.seq(5)
        pooled = temporal_pool(s, "mean").values
        assert not np.allclose(pooled, np.mean([f.values for f in s.frames], axis=0))

    def test_single_frame(self):
        with pytest.raises(TooFewFrames):
            ActivationSequence((ActivationMatrix(ids(3), np.eye(3)),))

    def test_unknown_mode(self):
        with pytest.raises(ValueError):
            temporal_pool(self.seq(3), "max")


def test_types_validate():
    with pytest.raises(ValueError):
        ActivationMatrix(ids(2), np.eye(2))
    with pytest.raises(ValueError):
        ActivationMatrix(ids(3), [[1.0, np.nan], [1, 2], [3, 4]])
    with pytest.raises(ValueError):
        Rdm(ids(3), [0.1, 2.5, 0.3])
    with pytest.raises(ValueError):
        Rdm(ids(3), [0.1, 0.2])
