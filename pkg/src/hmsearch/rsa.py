"""Representational dissimilarity matrices and the human-model similarity score.

An RDM is stored as its strict upper triangle in row-major pair order
(1,2), (1,3), ..., (1,m), (2,3), ..., (m-1,m); the diagonal is implicitly zero.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import (
    DegenerateRdm,
    DegenerateSeries,
    EmptyList,
    LengthMismatch,
    StimulusMismatch,
    TooFewFrames,
    ZeroVarianceVector,
)
from .stats import spearman_rho

ZERO_VARIANCE_TOL = 1e-12
POOLING_MODES = ("mean", "concat", "last")


def n_pairs(m: int) -> int:
    return m * (m - 1) // 2


def m_from_pairs(k: int) -> int:
    m = int(round((1 + np.sqrt(1 + 8 * k)) / 2))
    if n_pairs(m) != k:
        raise LengthMismatch(f"{k} entries is not a triangular count")
    return m


@dataclass(frozen=True, eq=False)
class ActivationMatrix:
    """Feature vectors for ``m`` stimuli, one row per stimulus."""

    stimulus_ids: tuple[str, ...]
    values: np.ndarray

    def __post_init__(self):
        ids = tuple(str(s) for s in self.stimulus_ids)
        values = np.array(self.values, dtype=float)
        if values.ndim != 2:
            raise ValueError(f"activation values must be 2-D, got shape {values.shape}")
        if values.shape[0] != len(ids):
            raise LengthMismatch(f"{len(ids)} stimulus ids for {values.shape[0]} rows")
        if len(ids) < 3:
            raise ValueError(f"need at least 3 stimuli, got {len(ids)}")
        if values.shape[1] < 2:
            raise ValueError(f"need at least 2 features, got {values.shape[1]}")
        if not np.all(np.isfinite(values)):
            bad = int(np.argwhere(~np.isfinite(values))[0, 0])
            raise ValueError(f"non-finite activation for stimulus {ids[bad]!r}")
        values.setflags(write=False)
        object.__setattr__(self, "stimulus_ids", ids)
        object.__setattr__(self, "values", values)

    @property
    def m(self) -> int:
        return self.values.shape[0]

    @property
    def n(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True, eq=False)
class Rdm:
    stimulus_ids: tuple[str, ...]
    entries: np.ndarray

    def __post_init__(self):
        ids = tuple(str(s) for s in self.stimulus_ids)
        entries = np.array(self.entries, dtype=float).ravel()
        if len(ids) < 2:
            raise ValueError("an RDM needs at least 2 stimuli")
        if entries.size != n_pairs(len(ids)):
            raise LengthMismatch(
                f"{len(ids)} stimuli need {n_pairs(len(ids))} entries, got {entries.size}"
            )
        if not np.all(np.isfinite(entries)) or entries.min() < 0.0 or entries.max() > 2.0:
            raise ValueError("RDM entries must be finite and within [0, 2]")
        entries.setflags(write=False)
        object.__setattr__(self, "stimulus_ids", ids)
        object.__setattr__(self, "entries", entries)

    @property
    def m(self) -> int:
        return len(self.stimulus_ids)

    def to_square(self) -> np.ndarray:
        out = np.zeros((self.m, self.m))
        iu = np.triu_indices(self.m, k=1)
        out[iu] = self.entries
        out.T[iu] = self.entries
        return out

    def __eq__(self, other):
        if not isinstance(other, Rdm):
            return NotImplemented
        return self.stimulus_ids == other.stimulus_ids and np.array_equal(
            self.entries, other.entries
        )


@dataclass(frozen=True)
class ActivationSequence:
    """Activation snapshots over presentation time steps for the same stimuli."""

    frames: tuple[ActivationMatrix, ...]

    def __post_init__(self):
        frames = tuple(self.frames)
        if len(frames) < 2:
            raise TooFewFrames(f"need at least 2 time steps, got {len(frames)}")
        first = frames[0]
        for f in frames[1:]:
            if f.stimulus_ids != first.stimulus_ids or f.n != first.n:
                raise StimulusMismatch("all frames must share stimulus ids and width")
        object.__setattr__(self, "frames", frames)


def dissimilarity(v_i, v_j) -> float:
    """Correlation distance ``1 - pearson(v_i, v_j)``, in [0, 2]."""
    a = np.asarray(v_i, dtype=float).ravel()
    b = np.asarray(v_j, dtype=float).ravel()
    if a.size != b.size:
        raise LengthMismatch(f"vector lengths differ: {a.size} vs {b.size}")
    if a.size < 2:
        raise LengthMismatch("vectors need at least 2 features")
    a = a - a.mean()
    b = b - b.mean()
    ssa = float(a @ a)
    ssb = float(b @ b)
    if np.sqrt(ssa) < ZERO_VARIANCE_TOL or np.sqrt(ssb) < ZERO_VARIANCE_TOL:
        raise ZeroVarianceVector("constant activation vector has no correlation")
    r = float(a @ b) / np.sqrt(ssa * ssb)
    return float(np.clip(1.0 - r, 0.0, 2.0))


def build_rdm(a: ActivationMatrix) -> Rdm:
    x = a.values - a.values.mean(axis=1, keepdims=True)
    ss = np.einsum("ij,ij->i", x, x)
    norms = np.sqrt(ss)
    low = np.flatnonzero(norms < ZERO_VARIANCE_TOL)
    if low.size:
        sid = a.stimulus_ids[low[0]]
        raise ZeroVarianceVector(
            f"stimulus {sid!r} has a constant activation pattern", stimulus_id=sid
        )
    i, j = np.triu_indices(a.m, k=1)
    dots = (x @ x.T)[i, j]
    r = dots / np.sqrt(ss[i] * ss[j])
    return Rdm(a.stimulus_ids, np.clip(1.0 - r, 0.0, 2.0))


def flatten(r: Rdm) -> np.ndarray:
    return r.entries.copy()


def hms(r1: Rdm, r2: Rdm) -> float:
    """Human-model similarity: Spearman's rho between two flattened RDMs."""
    if r1.stimulus_ids != r2.stimulus_ids:
        raise StimulusMismatch("RDMs are built over different stimulus ids or orders")
    if r1.entries.size < 2:
        raise DegenerateRdm("need at least two RDM entries")
    try:
        return spearman_rho(r1.entries, r2.entries)
    except DegenerateSeries:
        raise DegenerateRdm("all entries of an RDM are tied; rank correlation undefined") from None


def average_rdms(rs: Sequence[Rdm]) -> Rdm:
    rs = list(rs)
    if not rs:
        raise EmptyList("cannot average an empty list of RDMs")
    ids = rs[0].stimulus_ids
    for r in rs[1:]:
        if r.stimulus_ids != ids:
            raise StimulusMismatch("RDMs to average must share stimulus ids and order")
    stacked = np.stack([r.entries for r in rs])
    return Rdm(ids, stacked.mean(axis=0))


def temporal_pool(seq: ActivationSequence, mode: str = "mean") -> ActivationMatrix:
    """Drop the first (blank) time step and combine the rest.

    ``mean`` averages the remaining frames element-wise, ``concat`` stacks
    them side by side, ``last`` keeps only the final frame.
    """
    if len(seq.frames) < 2:
        raise TooFewFrames("need at least 2 time steps")
    kept = seq.frames[1:]
    ids = kept[0].stimulus_ids
    if mode == "mean":
        values = np.mean([f.values for f in kept], axis=0)
    elif mode == "concat":
        values = np.hstack([f.values for f in kept])
    elif mode == "last":
        values = kept[-1].values
    else:
        raise ValueError(f"unknown pooling mode {mode!r}; expected one of {POOLING_MODES}")
    return ActivationMatrix(ids, values)
