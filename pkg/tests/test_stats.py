from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from hmsearch.errors import (
    DegenerateSeries,
    InvalidP,
    LengthMismatch,
    SingularControl,
    UnknownColumn,
)
from hmsearch.stats import (
    MetricTable,
    bonferroni,
    correlation_matrix,
    format_correlation_table,
    format_summary,
    midranks,
    partial_correlation_matrix,
    partial_spearman,
    spearman_rho,
    spearman_with_p,
    summarize,
    t_approx_pvalue,
)
from oracles import (
    partial_residual_oracle,
    permutation_pvalue_bruteforce,
    spearman_exact,
    spearman_oracle,
)


class TestSpearman:
    def test_identical(self):
        x = np.arange(10.0)
        assert spearman_with_p(x, x)[0] == 1.0

    def test_reversed(self):
        assert spearman_with_p([1, 2, 3, 4], [4, 3, 2, 1])[0] == -1.0

    def test_hand_computed(self):
        # d = (0,1,1,1,1): 1 - 6*4/(5*24) = 0.8
        assert spearman_with_p([1, 2, 3, 4, 5], [1, 3, 2, 5, 4])[0] == 0.8

    def test_midranks(self):
        np.testing.assert_array_equal(midranks([3, 1, 3, 2]), [3.5, 1, 3.5, 2])

    def test_length_mismatch(self):
        with pytest.raises(LengthMismatch):
            spearman_with_p([1, 2, 3, 4], [1, 2, 3])

    def test_too_short(self):
        with pytest.raises(DegenerateSeries):
            spearman_with_p([1, 2, 3], [1, 2, 3])

    def test_all_tied(self):
        with pytest.raises(DegenerateSeries):
            spearman_with_p([1, 1, 1, 1], [1, 2, 3, 4])

    def test_exact_p_known_values(self):
        # n=4, perfect correlation: 2 of 24 permutations reach |rho| = 1
        assert spearman_with_p([1, 2, 3, 4], [1, 2, 3, 4])[1] == 2 / 24
        # frozen from brute-force enumeration of all 120 orderings
        assert spearman_with_p([1, 2, 3, 4, 5], [1, 3, 2, 5, 4])[1] == float(
            permutation_pvalue_bruteforce([1, 2, 3, 4, 5], [1, 3, 2, 5, 4]))
        assert spearman_with_p([1, 2, 3, 4, 5], [1, 3, 2, 5, 4])[1] == 16 / 120

    def test_t_approximation_used_above_twelve(self):
        rng = np.random.default_rng(0)
        x, y = rng.normal(size=30), rng.normal(size=30)
        rho, p = spearman_with_p(x, y)
        assert p == t_approx_pvalue(rho, 30)

    def test_t_approx_matches_formula(self):
        from scipy.stats import t

        rho, n = 0.4, 30
        stat = rho * math.sqrt((n - 2) / (1 - rho**2))
        assert t_approx_pvalue(rho, n) == pytest.approx(2 * t.sf(stat, n - 2), rel=1e-12)

    @given(st.lists(st.integers(-5, 5), min_size=4, max_size=7),
           st.lists(st.integers(-5, 5), min_size=7, max_size=7))
    @settings(max_examples=60, deadline=None)
    def test_exact_p_matches_enumeration_with_ties(self, x, y):
        y = y[: len(x)]
        assume(len(set(x)) > 1 and len(set(y)) > 1)
        assert spearman_with_p(x, y)[1] == float(permutation_pvalue_bruteforce(x, y))

    @given(st.permutations(list(range(40))), st.permutations(list(range(40))))
    def test_tie_free_matches_exact_rational(self, x, y):
        assert spearman_rho(x, y) == float(spearman_exact(x, y))

    @given(st.lists(st.integers(0, 6), min_size=5, max_size=60), st.data())
    def test_ties_match_oracle(self, x, data):
        y = data.draw(st.lists(st.integers(0, 6), min_size=len(x), max_size=len(x)))
        assume(len(set(x)) > 1 and len(set(y)) > 1)
        assert spearman_rho(x, y) == pytest.approx(spearman_oracle(x, y), abs=1e-12)

    @given(st.permutations(list(range(15))), st.permutations(list(range(15))))
    def test_monotone_transform_invariance(self, x, y):
        x = np.asarray(x, float)
        assert spearman_rho(np.exp(x / 3), y) == spearman_rho(x, y)
        assert spearman_rho(x, 5 * np.asarray(y) - 2) == spearman_rho(x, y)


class TestBonferroni:
    def test_scale(self):
        assert bonferroni([0.01], 3) == pytest.approx([0.03])

    def test_clamp(self):
        assert bonferroni([0.5], 3) == [1.0]

    def test_elementwise(self):
        assert bonferroni([0, 0.2, 0.4], 3) == pytest.approx([0, 0.6, 1.0])

    def test_invalid_p(self):
        with pytest.raises(InvalidP):
            bonferroni([1.2], 1)

    def test_k_too_small(self):
        with pytest.raises(ValueError):
            bonferroni([0.1, 0.2], 1)

    @given(st.floats(0, 1), st.floats(0, 1), st.integers(1, 20))
    def test_monotone(self, p1, p2, k):
        lo, hi = sorted([p1, p2])
        a, b = bonferroni([lo, hi], max(k, 2))
        assert a <= b and a >= lo and b >= hi


class TestPartial:
    def test_uncorrelated_control(self):
        x = [1, 2, 3, 4, 5, 6]
        y = [2, 1, 4, 3, 6, 5]
        z = [3, 5, 1, 6, 2, 4]
        rho, _ = partial_spearman(x, y, z)
        assert rho == pytest.approx(partial_residual_oracle(x, y, z), abs=1e-12)

    def test_x_equals_y(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=20)
        z = rng.normal(size=20)
        assert partial_spearman(x, x, z)[0] == pytest.approx(1.0, abs=1e-12)

    def test_formula_value(self):
        r_xy, r_xz, r_yz = 0.6, 0.5, 0.5
        assert (r_xy - r_xz * r_yz) / math.sqrt((1 - r_xz**2) * (1 - r_yz**2)) == pytest.approx(0.46667, abs=1e-5)

    def test_singular_control(self):
        x = np.arange(8.0)
        with pytest.raises(SingularControl):
            partial_spearman(x, np.sin(x), 2 * x + 1)

    @given(st.integers(0, 2**32 - 1), st.integers(6, 200))
    @settings(max_examples=40, deadline=None)
    def test_matches_residual_oracle(self, seed, n):
        rng = np.random.default_rng(seed)
        z = rng.normal(size=n)
        x = z + rng.normal(size=n)
        y = z + rng.normal(size=n)
        try:
            rho, p = partial_spearman(x, y, z)
        except SingularControl:
            assume(False)
        assert rho == pytest.approx(partial_residual_oracle(x, y, z), abs=1e-8)
        assert 0.0 <= p <= 1.0


def table(**cols):
    n = len(next(iter(cols.values())))
    return MetricTable(tuple(f"m{i}" for i in range(n)), cols)


class TestCorrelationMatrix:
    def test_three_columns(self):
        rng = np.random.default_rng(2)
        t = table(a=rng.normal(size=10), b=rng.normal(size=10), c=rng.normal(size=10))
        r = correlation_matrix(t, ["a", "b", "c"])
        assert r.k == 3 and len(r.pairs) == 3

    def test_self_pair_excluded(self):
        t = table(a=[1, 2, 3, 4, 5.0], b=[2, 1, 4, 3, 5.0])
        r = correlation_matrix(t, ["a", "a", "b"])
        assert [(p.col_a, p.col_b) for p in r.pairs] == [("a", "b")]

    def test_negated_column(self):
        t = table(a=[0.3, 0.1, 0.5, 0.2, 0.4], b=[-0.3, -0.1, -0.5, -0.2, -0.4])
        pair = correlation_matrix(t, ["a", "b"]).pairs[0]
        assert pair.rho == -1.0 and pair.passes_effect_gate

    def test_unknown_column(self):
        with pytest.raises(UnknownColumn):
            correlation_matrix(table(a=[1, 2, 3, 4.0]), ["a", "zz"])

    def test_bonferroni_applied(self):
        rng = np.random.default_rng(3)
        t = table(a=rng.normal(size=20), b=rng.normal(size=20), c=rng.normal(size=20))
        for p in correlation_matrix(t, ["a", "b", "c"]).pairs:
            assert p.p_adjusted == min(1.0, 3 * p.p_raw)

    def test_partial_matrix_excludes_control(self):
        rng = np.random.default_rng(4)
        t = table(a=rng.normal(size=15), b=rng.normal(size=15), lr=rng.normal(size=15))
        r = partial_correlation_matrix(t, ["a", "b", "lr"], "lr")
        assert r.k == 1 and r.control == "lr"
        assert r.pairs[0].rho == partial_spearman(t.column("a"), t.column("b"), t.column("lr"))[0]

    def test_text_layout(self):
        t = table(hms=[1, 2, 3, 4, 5, 6.0], accuracy=[1, 2, 3, 4, 6, 5.0], mse=[6, 5, 4, 3, 2, 1.0])
        text = format_correlation_table(correlation_matrix(t, ["hms", "accuracy", "mse"]))
        lines = text.splitlines()
        assert "Bonferroni k=3" in lines[0]
        assert lines[1].split() == ["Variable", "accuracy", "mse"]
        # N=6: exact p for |rho| = 1 is 2/720, times k=3 is above 0.001
        assert lines[2].split() == ["hms", "0.943", "-1.000"]
        assert lines[3].split() == ["accuracy", ".", "-0.943"]

    def test_significance_marker(self):
        x = np.arange(20.0)
        t = table(a=x, b=x ** 2, c=np.cos(x))
        text = format_correlation_table(correlation_matrix(t, ["a", "b", "c"]))
        assert "1.000**" in text.splitlines()[2]


class TestSummarize:
    def test_constant(self):
        s = summarize(table(a=[2.0, 2.0, 2.0]), "a", 1)
        assert s.full["a"].mean == 2.0 and s.full["a"].sd == 0.0

    def test_sample_sd(self):
        s = summarize(table(a=[1.0, 2.0, 3.0]), "a", 3)
        assert s.full["a"].mean == 2.0 and s.full["a"].sd == 1.0

    def test_top_one(self):
        s = summarize(table(hms=[0.1, 0.2]), "hms", 1)
        assert s.top_ids == ("m1",)

    def test_top_k_bounds(self):
        with pytest.raises(ValueError):
            summarize(table(a=[1.0, 2.0]), "a", 3)

    @given(st.lists(st.floats(-10, 10), min_size=2, max_size=30), st.data())
    def test_top_bottom_disjoint(self, values, data):
        k = data.draw(st.integers(1, len(values) // 2))
        s = summarize(table(a=values), "a", k)
        assert not set(s.top_ids) & set(s.bottom_ids)

    def test_format(self):
        text = format_summary(summarize(table(hms=[0.1, 0.2, 0.3], mse=[3.0, 2.0, 1.0]), "hms", 1))
        assert "Top 1 hms" in text
        assert text.splitlines()[1].split()[:3] == ["hms", "0.200", "(0.100)"]


def test_metric_table_validates():
    with pytest.raises(LengthMismatch):
        MetricTable(("a", "b"), {"x": [1.0]})
    t = MetricTable(("a", "b"), {"x": [1.0, 2.0]})
    with pytest.raises(UnknownColumn, match="unknown column 'y'"):
        t.column("y")
    assert len(t.take([1])) == 1
