"""Rank statistics over per-model metric tables.

Spearman correlations are computed on midranks. Midranks doubled are always
integers, so the rank covariance is accumulated in exact integer arithmetic
and only the final division rounds; for tie-free data the coefficient is the
correctly rounded value of an exact rational.

Two-sided p-values use the exact permutation distribution of the rank
statistic for small samples and the Student-t approximation otherwise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from itertools import combinations
from typing import Mapping, Sequence

import numpy as np
from scipy.stats import rankdata
from scipy.stats import t as student_t

from .errors import (
    DegenerateSeries,
    InvalidP,
    LengthMismatch,
    SingularControl,
    UnknownColumn,
)

EXACT_MAX_N = 12
EFFECT_GATE = 0.2
SINGULAR_TOL = 1e-12
MIN_SERIES = 4

_INT64_SAFE_N = 2_000_000


# ---------------------------------------------------------------------------
# rank primitives


def midranks(x) -> np.ndarray:
    """1-based ranks with ties assigned the average of their positions."""
    return rankdata(np.asarray(x, dtype=float), method="average")


def _doubled_ranks(x) -> np.ndarray:
    r = midranks(x)
    dtype = np.int64 if r.size < _INT64_SAFE_N else object
    return np.rint(2.0 * r).astype(np.int64).astype(dtype)


def _centered(doubled: np.ndarray) -> np.ndarray:
    # mean of doubled ranks is n + 1 regardless of ties
    return doubled - (doubled.size + 1)


def _pearson_int(cx: np.ndarray, cy: np.ndarray) -> float:
    dot = int(cx @ cy)
    sx = int(cx @ cx)
    sy = int(cy @ cy)
    if sx == 0 or sy == 0:
        raise DegenerateSeries("series has no rank variation (all values tied)")
    if sx == sy:
        rho = dot / sx
    else:
        rho = dot / math.sqrt(sx * sy)
    return min(1.0, max(-1.0, rho))


def _check_pair(x, y, min_n: int) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if x.size != y.size:
        raise LengthMismatch(f"series lengths differ: {x.size} vs {y.size}")
    if x.size < min_n:
        raise DegenerateSeries(f"need at least {min_n} observations, got {x.size}")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise DegenerateSeries("series contain non-finite values")
    return x, y


def spearman_rho(x, y) -> float:
    """Spearman's rho (Pearson correlation of midranks), without a p-value."""
    x, y = _check_pair(x, y, 2)
    return _pearson_int(_centered(_doubled_ranks(x)), _centered(_doubled_ranks(y)))


# ---------------------------------------------------------------------------
# p-values


@lru_cache(maxsize=256)
def _permutation_counts(a: tuple[int, ...], b: tuple[int, ...]) -> np.ndarray:
    """Count, for each value s, how many of the n! pairings give sum a_i*b_pi(i) = s.

    Dynamic programme over subsets of ``b`` already assigned; O(n 2^n) array
    additions, so only usable for small n.
    """
    n = len(a)
    smax = int(sum(sorted(a)[i] * sorted(b)[i] for i in range(n)))
    start = np.zeros(smax + 1, dtype=np.int64)
    start[0] = 1
    layer: dict[int, np.ndarray] = {0: start}
    for i in range(n):
        nxt: dict[int, np.ndarray] = {}
        ai = a[i]
        for mask, counts in layer.items():
            for j in range(n):
                if mask >> j & 1:
                    continue
                shift = ai * b[j]
                key = mask | (1 << j)
                acc = nxt.get(key)
                if acc is None:
                    acc = np.zeros(smax + 1, dtype=np.int64)
                    nxt[key] = acc
                if shift:
                    acc[shift:] += counts[:-shift]
                else:
                    acc += counts
        layer = nxt
    return layer[(1 << n) - 1]


def exact_permutation_pvalue(x, y) -> float:
    """Two-sided p = P(|rho| >= |rho_obs|) over all n! reorderings of ``y``'s ranks."""
    a = tuple(sorted(int(v) for v in _doubled_ranks(x)))
    b_obs = [int(v) for v in _doubled_ranks(y)]
    a_obs = [int(v) for v in _doubled_ranks(x)]
    b = tuple(sorted(b_obs))
    n = len(a)
    if n > EXACT_MAX_N:
        raise ValueError(f"exact enumeration limited to n <= {EXACT_MAX_N}")
    counts = _permutation_counts(a, b)
    sa, sb = sum(a), sum(b)
    s_obs = sum(p * q for p, q in zip(a_obs, b_obs))
    dev_obs = abs(n * s_obs - sa * sb)
    s = np.arange(counts.size, dtype=np.int64)
    extreme = np.abs(n * s - sa * sb) >= dev_obs
    return int(counts[extreme].sum()) / math.factorial(n)


def _null_pvalue_tie_free(rho: float, n: int) -> float:
    """P(|rho_null| >= |rho|) under the tie-free permutation null for n samples."""
    ranks = tuple(range(2, 2 * n + 1, 2))
    counts = _permutation_counts(ranks, ranks)
    s = np.arange(counts.size, dtype=np.int64)
    ss = sum((r - (n + 1)) ** 2 for r in ranks)
    dev = np.abs(n * s - (n * (n + 1)) ** 2).astype(float)
    bound = abs(rho) * n * ss * (1.0 - 1e-12)
    return int(counts[dev >= bound].sum()) / math.factorial(n)


def t_approx_pvalue(rho: float, n: int) -> float:
    """Two-sided Student-t p-value for a correlation on ``n`` samples (df = n - 2)."""
    if abs(rho) >= 1.0:
        return 0.0
    df = n - 2
    t = rho * math.sqrt(df / (1.0 - rho * rho))
    return float(min(1.0, 2.0 * student_t.sf(abs(t), df)))


def pvalue_method(n: int) -> str:
    if n <= EXACT_MAX_N:
        return f"exact permutation (n={n})"
    return f"t approximation (df={n - 2})"


def spearman_with_p(x, y) -> tuple[float, float]:
    """Spearman's rho with a two-sided p-value.

    Exact permutation p for ``N <= 12`` (conditional on the observed midranks,
    so ties are handled exactly), t approximation with ``N - 2`` df beyond.
    """
    x, y = _check_pair(x, y, MIN_SERIES)
    rho = spearman_rho(x, y)
    if x.size <= EXACT_MAX_N:
        p = exact_permutation_pvalue(x, y)
    else:
        p = t_approx_pvalue(rho, x.size)
    return rho, p


def partial_spearman(x, y, control) -> tuple[float, float]:
    """Rank partial correlation of ``x`` and ``y`` controlling for ``control``.

    All three series are midranked first; the p-value treats the result like a
    Spearman rho on ``N - 1`` samples.
    """
    x, y = _check_pair(x, y, MIN_SERIES + 1)
    x, z = _check_pair(x, control, MIN_SERIES + 1)
    cx, cy, cz = (_centered(_doubled_ranks(v)) for v in (x, y, z))
    r_xy = _pearson_int(cx, cy)
    r_xz = _pearson_int(cx, cz)
    r_yz = _pearson_int(cy, cz)
    if abs(r_xz) >= 1 - SINGULAR_TOL or abs(r_yz) >= 1 - SINGULAR_TOL:
        raise SingularControl(f"control is rank-collinear (r_xz={r_xz}, r_yz={r_yz})")
    rho = (r_xy - r_xz * r_yz) / math.sqrt((1.0 - r_xz**2) * (1.0 - r_yz**2))
    rho = min(1.0, max(-1.0, rho))
    n_eff = x.size - 1
    if n_eff <= EXACT_MAX_N:
        p = _null_pvalue_tie_free(rho, n_eff)
    else:
        p = t_approx_pvalue(rho, n_eff)
    return rho, p


def bonferroni(p_values: Sequence[float], k: int) -> list[float]:
    p = [float(v) for v in p_values]
    if k < len(p):
        raise ValueError(f"k={k} is smaller than the number of p-values ({len(p)})")
    for v in p:
        if not (0.0 <= v <= 1.0):
            raise InvalidP(f"p-value out of [0, 1]: {v}")
    return [min(1.0, k * v) for v in p]


# ---------------------------------------------------------------------------
# tables


@dataclass(frozen=True)
class MetricTable:
    """Per-model metric records: one row per model, one named series per metric."""

    model_ids: tuple[str, ...]
    columns: Mapping[str, np.ndarray]

    def __post_init__(self):
        ids = tuple(str(m) for m in self.model_ids)
        object.__setattr__(self, "model_ids", ids)
        cols = {}
        for name, values in self.columns.items():
            arr = np.asarray(values, dtype=float).ravel()
            if arr.size != len(ids):
                raise LengthMismatch(
                    f"column {name!r} has {arr.size} entries, expected {len(ids)}"
                )
            arr.setflags(write=False)
            cols[str(name)] = arr
        object.__setattr__(self, "columns", cols)

    def __len__(self) -> int:
        return len(self.model_ids)

    @property
    def names(self) -> list[str]:
        return list(self.columns)

    def column(self, name: str) -> np.ndarray:
        try:
            return self.columns[name]
        except KeyError:
            raise UnknownColumn(
                f"unknown column {name!r}; available: {', '.join(self.columns)}"
            ) from None

    def take(self, rows: Sequence[int]) -> "MetricTable":
        rows = list(rows)
        return MetricTable(
            tuple(self.model_ids[i] for i in rows),
            {k: v[rows] for k, v in self.columns.items()},
        )


@dataclass(frozen=True)
class CorrelationPair:
    col_a: str
    col_b: str
    rho: float
    p_raw: float
    p_adjusted: float
    passes_effect_gate: bool


@dataclass(frozen=True)
class CorrelationReport:
    pairs: tuple[CorrelationPair, ...]
    k: int
    n: int
    method: str
    control: str | None = None
    columns: tuple[str, ...] = field(default=())

    def get(self, a: str, b: str) -> CorrelationPair:
        for pair in self.pairs:
            if {pair.col_a, pair.col_b} == {a, b}:
                return pair
        raise UnknownColumn(f"no pair ({a}, {b}) in report")


def _resolve(t: MetricTable, columns: Sequence[str]) -> list[str]:
    columns = list(dict.fromkeys(columns))
    for c in columns:
        t.column(c)
    if len(columns) < 2:
        raise ValueError("need at least two distinct columns")
    return columns


def correlation_matrix(t: MetricTable, columns: Sequence[str]) -> CorrelationReport:
    """Spearman rho for every unordered column pair, Bonferroni-adjusted over the pairs."""
    columns = _resolve(t, columns)
    pairs = list(combinations(columns, 2))
    raw = [spearman_with_p(t.column(a), t.column(b)) for a, b in pairs]
    adjusted = bonferroni([p for _, p in raw], len(pairs))
    out = tuple(
        CorrelationPair(a, b, rho, p, pa, abs(rho) >= EFFECT_GATE)
        for (a, b), (rho, p), pa in zip(pairs, raw, adjusted)
    )
    return CorrelationReport(out, len(pairs), len(t), pvalue_method(len(t)), None, tuple(columns))


def partial_correlation_matrix(
    t: MetricTable, columns: Sequence[str], control: str
) -> CorrelationReport:
    """Like :func:`correlation_matrix`, but every pair is partialled on ``control``."""
    columns = [c for c in _resolve(t, columns) if c != control]
    z = t.column(control)
    pairs = list(combinations(columns, 2))
    raw = [partial_spearman(t.column(a), t.column(b), z) for a, b in pairs]
    adjusted = bonferroni([p for _, p in raw], len(pairs))
    out = tuple(
        CorrelationPair(a, b, rho, p, pa, abs(rho) >= EFFECT_GATE)
        for (a, b), (rho, p), pa in zip(pairs, raw, adjusted)
    )
    method = "partial on ranks, " + pvalue_method(len(t) - 1)
    return CorrelationReport(out, len(pairs), len(t), method, control, tuple(columns))


@dataclass(frozen=True)
class ColumnStats:
    mean: float
    sd: float


@dataclass(frozen=True)
class Summary:
    rank_by: str
    top_k: int
    full: dict[str, ColumnStats]
    top: dict[str, ColumnStats]
    bottom: dict[str, ColumnStats]
    top_ids: tuple[str, ...]
    bottom_ids: tuple[str, ...]


def _stats(values: np.ndarray) -> ColumnStats:
    mean = float(np.mean(values))
    sd = float(np.std(values, ddof=1)) if values.size > 1 else float("nan")
    return ColumnStats(mean, sd)


def summarize(t: MetricTable, rank_by: str, top_k: int) -> Summary:
    """Mean and sample SD per column for the whole table and its top/bottom ``top_k`` rows."""
    key = t.column(rank_by)
    if not 1 <= top_k <= len(t):
        raise ValueError(f"top_k must be in [1, {len(t)}], got {top_k}")
    # bottom is the tail of the same ordering, so the sets are disjoint whenever 2 * top_k <= N
    order = np.argsort(-key, kind="stable")
    top = order[:top_k]
    bottom = order[::-1][:top_k]
    return Summary(
        rank_by,
        top_k,
        {c: _stats(v) for c, v in t.columns.items()},
        {c: _stats(v[top]) for c, v in t.columns.items()},
        {c: _stats(v[bottom]) for c, v in t.columns.items()},
        tuple(t.model_ids[i] for i in top),
        tuple(t.model_ids[i] for i in bottom),
    )


# ---------------------------------------------------------------------------
# human-readable rendering


def format_correlation_table(report: CorrelationReport, alpha: float = 0.001) -> str:
    """Pairwise upper-triangular rho matrix, ``**`` marking adjusted p < ``alpha``."""
    cols = list(report.columns) or sorted({p.col_a for p in report.pairs} | {p.col_b for p in report.pairs})
    rows, heads = cols[:-1], cols[1:]
    width = max(12, *(len(c) + 2 for c in cols))
    lines = []
    title = "Spearman's rho"
    if report.control:
        title += f" (partial, controlling for {report.control})"
    lines.append(f"{title}; N={report.n}; Bonferroni k={report.k}; p-values: {report.method}")
    lines.append("Variable".ljust(width) + "".join(h.rjust(width) for h in heads))
    for i, r in enumerate(rows):
        cells = []
        for j, h in enumerate(heads, start=1):
            if j <= i:
                cells.append(".".rjust(width))
                continue
            pair = report.get(r, h)
            mark = "**" if pair.p_adjusted < alpha else ""
            cells.append(f"{pair.rho:.3f}{mark}".rjust(width))
        lines.append(r.ljust(width) + "".join(cells))
    lines.append(f"** p < {alpha:g} (Bonferroni-adjusted)")
    gated = [f"{p.col_a}~{p.col_b}" for p in report.pairs if not p.passes_effect_gate]
    if gated:
        lines.append(f"|rho| < {EFFECT_GATE:g}, not interpreted: " + ", ".join(gated))
    return "\n".join(lines) + "\n"


def format_summary(s: Summary) -> str:
    width = max(12, *(len(c) + 2 for c in s.full))
    head = (
        "Metric".ljust(width)
        + "Mean (SD)".rjust(22)
        + f"Top {s.top_k} {s.rank_by} Mean (SD)".rjust(28)
        + f"Bottom {s.top_k} {s.rank_by} Mean (SD)".rjust(31)
    )
    lines = [head]

    def cell(c: ColumnStats) -> str:
        return f"{c.mean:.3f} ({c.sd:.3f})"

    for name in s.full:
        lines.append(
            name.ljust(width)
            + cell(s.full[name]).rjust(22)
            + cell(s.top[name]).rjust(28)
            + cell(s.bottom[name]).rjust(31)
        )
    return "\n".join(lines) + "\n"
