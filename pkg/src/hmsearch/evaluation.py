"""Computer-vision performance metrics: next-frame error and gallery matching."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DimensionMismatch, EmptyList, LengthMismatch, ZeroNormVector

NORM_TOL = 1e-12
DEFAULT_GALLERY_SIZE = 50


def _frame(x, name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if arr.ndim not in (2, 3) or min(arr.shape) < 1:
        raise DimensionMismatch(f"{name} must be a 2-D or 3-channel image, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite pixels")
    return arr


def next_frame_mse(predicted, actual) -> float:
    """Mean over pixels of the squared prediction error."""
    p = _frame(predicted, "predicted")
    a = _frame(actual, "actual")
    if p.shape != a.shape:
        raise DimensionMismatch(f"frame shapes differ: {p.shape} vs {a.shape}")
    return float(np.mean((p - a) ** 2))


def sequence_mse(predicted: Sequence, actual: Sequence) -> float:
    """Per-frame MSE averaged over frames."""
    if len(predicted) != len(actual):
        raise LengthMismatch(f"{len(predicted)} predicted frames for {len(actual)} actual")
    if not predicted:
        raise EmptyList("no frames to score")
    return float(np.mean([next_frame_mse(p, a) for p, a in zip(predicted, actual)]))


def cosine_similarity(a, b) -> float:
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if a.size != b.size:
        raise LengthMismatch(f"vector lengths differ: {a.size} vs {b.size}")
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na <= NORM_TOL or nb <= NORM_TOL:
        raise ZeroNormVector("cosine similarity of a zero vector is undefined")
    return float(np.clip((a @ b) / (na * nb), -1.0, 1.0))


@dataclass(frozen=True, eq=False)
class MatchingTrial:
    """One probe against a gallery containing exactly one correct item."""

    probe: np.ndarray
    gallery: np.ndarray
    true_index: int

    def __post_init__(self):
        probe = np.asarray(self.probe, dtype=float).ravel()
        gallery = np.asarray(self.gallery, dtype=float)
        if gallery.ndim != 2:
            gallery = np.stack([np.asarray(g, dtype=float).ravel() for g in self.gallery])
        if gallery.shape[0] < 2:
            raise ValueError("gallery needs at least 2 items")
        if probe.size < 2 or gallery.shape[1] != probe.size:
            raise LengthMismatch("probe and gallery vectors must share a length >= 2")
        if not 0 <= int(self.true_index) < gallery.shape[0]:
            raise IndexError(f"true_index {self.true_index} outside gallery of {gallery.shape[0]}")
        object.__setattr__(self, "probe", probe)
        object.__setattr__(self, "gallery", gallery)
        object.__setattr__(self, "true_index", int(self.true_index))


def match_trial(t: MatchingTrial) -> tuple[int, bool]:
    """Predicted gallery index (highest cosine to the probe, lowest index on ties)."""
    pnorm = np.linalg.norm(t.probe)
    if pnorm <= NORM_TOL:
        raise ZeroNormVector("probe vector has zero norm", position=None)
    norms = np.linalg.norm(t.gallery, axis=1)
    low = np.flatnonzero(norms <= NORM_TOL)
    if low.size:
        raise ZeroNormVector(f"gallery item {low[0]} has zero norm", position=int(low[0]))
    sims = np.clip((t.gallery @ t.probe) / (norms * pnorm), -1.0, 1.0)
    predicted = int(np.argmax(sims))  # first maximum
    return predicted, predicted == t.true_index


def matching_accuracy(trials: Sequence[MatchingTrial]) -> float:
    if not trials:
        raise EmptyList("no matching trials")
    hits = sum(match_trial(t)[1] for t in trials)
    return hits / len(trials)
