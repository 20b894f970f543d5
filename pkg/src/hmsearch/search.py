"""Monte Carlo model search.

Hyperparameters are drawn at random from a six-dimensional space, each model
is trained through a backend, and HMS, matching accuracy and next-frame MSE
are recorded at checkpoints. Everything is reproducible from a master seed.
"""

from __future__ import annotations

import abc
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Any, Callable, Sequence, Union

import numpy as np

from .earlystop import MetricTrajectory
from .errors import (
    BackendFailure,
    DegenerateRdm,
    InvalidSpace,
    StimulusMismatch,
    ZeroVarianceVector,
)
from .evaluation import MatchingTrial, matching_accuracy, next_frame_mse
from .rsa import ActivationSequence, Rdm, build_rdm, hms, temporal_pool
from .stats import MetricTable

DIMENSIONS = (
    "epochs",
    "validation_sequences",
    "training_sequences",
    "batch_size",
    "learning_rate",
    "filter_size",
)
METRICS = ("hms", "accuracy", "mse")


# ---------------------------------------------------------------------------
# hyperparameter space


@dataclass(frozen=True)
class IntRange:
    low: int
    high: int

    def validate(self, name: str):
        if not (math.isfinite(self.low) and math.isfinite(self.high)) or self.low > self.high:
            raise InvalidSpace(f"{name}: need finite low <= high, got [{self.low}, {self.high}]")

    def sample(self, rng: np.random.Generator) -> int:
        return int(rng.integers(self.low, self.high + 1))

    def contains(self, v) -> bool:
        return self.low <= v <= self.high and int(v) == v


@dataclass(frozen=True)
class RealRange:
    low: float
    high: float
    log: bool = False

    def validate(self, name: str):
        if not (math.isfinite(self.low) and math.isfinite(self.high)) or self.low > self.high:
            raise InvalidSpace(f"{name}: need finite low <= high, got [{self.low}, {self.high}]")
        if self.log and self.low <= 0:
            raise InvalidSpace(f"{name}: log-uniform range needs low > 0")

    def sample(self, rng: np.random.Generator) -> float:
        if self.low == self.high:
            return float(self.low)
        if self.log:
            v = 10.0 ** rng.uniform(math.log10(self.low), math.log10(self.high))
        else:
            v = rng.uniform(self.low, self.high)
        return float(min(self.high, max(self.low, v)))

    def contains(self, v) -> bool:
        return self.low <= v <= self.high


@dataclass(frozen=True)
class Choice:
    values: tuple

    def validate(self, name: str):
        if not self.values:
            raise InvalidSpace(f"{name}: empty choice set")
        if not all(math.isfinite(v) for v in self.values):
            raise InvalidSpace(f"{name}: choices must be finite")

    def sample(self, rng: np.random.Generator):
        return self.values[int(rng.integers(len(self.values)))]

    def contains(self, v) -> bool:
        return v in self.values


Dimension = Union[IntRange, RealRange, Choice]


@dataclass(frozen=True)
class HyperparameterSpace:
    epochs: Dimension = IntRange(10, 150)
    validation_sequences: Dimension = IntRange(10, 100)
    training_sequences: Dimension = IntRange(50, 500)
    batch_size: Dimension = Choice((2, 4, 8, 16))
    learning_rate: Dimension = RealRange(1e-5, 1e-2, log=True)
    filter_size: Dimension = Choice((3, 5, 7))

    def __post_init__(self):
        for name in DIMENSIONS:
            getattr(self, name).validate(name)
        if isinstance(self.epochs, RealRange):
            raise InvalidSpace("epochs must be integer-valued")

    def to_dict(self) -> dict[str, dict]:
        out = {}
        for name in DIMENSIONS:
            dim = getattr(self, name)
            if isinstance(dim, IntRange):
                out[name] = {"type": "int", "low": dim.low, "high": dim.high}
            elif isinstance(dim, RealRange):
                out[name] = {"type": "real", "low": dim.low, "high": dim.high, "log": dim.log}
            else:
                out[name] = {"type": "choice", "values": list(dim.values)}
        return out

    @classmethod
    def from_dict(cls, d: dict[str, Any] | None) -> "HyperparameterSpace":
        d = dict(d or {})
        unknown = set(d) - set(DIMENSIONS)
        if unknown:
            raise InvalidSpace(f"unknown dimensions: {sorted(unknown)}")
        kwargs = {}
        for name, spec in d.items():
            kind = spec.get("type")
            if kind == "int":
                kwargs[name] = IntRange(int(spec["low"]), int(spec["high"]))
            elif kind == "real":
                kwargs[name] = RealRange(float(spec["low"]), float(spec["high"]), bool(spec.get("log", False)))
            elif kind == "choice":
                kwargs[name] = Choice(tuple(spec["values"]))
            else:
                raise InvalidSpace(f"{name}: unknown dimension type {kind!r}")
        return cls(**kwargs)


@dataclass(frozen=True)
class HyperparameterSample:
    epochs: int
    validation_sequences: int
    training_sequences: int
    batch_size: int
    learning_rate: float
    filter_size: int
    seed: int = 0

    def values(self) -> dict[str, float]:
        return {name: getattr(self, name) for name in DIMENSIONS}

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


def sample_space(space: HyperparameterSpace, rng_seed) -> HyperparameterSample:
    """Draw every dimension independently, in a fixed order, from ``rng_seed``."""
    if not isinstance(space, HyperparameterSpace):
        raise InvalidSpace("expected a HyperparameterSpace")
    rng = np.random.default_rng(rng_seed)
    values = {name: getattr(space, name).sample(rng) for name in DIMENSIONS}
    return HyperparameterSample(**values, seed=int(rng_seed))


def checkpoint_epochs(epochs: int, every: int) -> list[int]:
    """Multiples of ``every`` up to ``epochs``; ``epochs`` itself is always last."""
    if every < 1:
        raise ValueError("checkpoint interval must be >= 1")
    if epochs < 1:
        return []
    points = list(range(every, epochs + 1, every))
    if not points or points[-1] != epochs:
        points.append(epochs)
    return points


# ---------------------------------------------------------------------------
# backend contract


@dataclass(frozen=True, eq=False)
class StimulusSet:
    """Images shown to a model (and, upstream, to human subjects)."""

    ids: tuple[str, ...]
    images: np.ndarray
    labels: np.ndarray | None = None

    def __post_init__(self):
        images = np.asarray(self.images, dtype=float)
        if images.ndim != 3 or images.shape[0] != len(self.ids):
            raise ValueError(f"expected ({len(self.ids)}, H, W) images, got {images.shape}")
        object.__setattr__(self, "ids", tuple(str(i) for i in self.ids))
        object.__setattr__(self, "images", images)
        if self.labels is not None:
            object.__setattr__(self, "labels", np.asarray(self.labels, dtype=int))

    def __len__(self) -> int:
        return len(self.ids)


@dataclass(frozen=True, eq=False)
class GalleryTrial:
    """A probe image and a gallery of images, one of which shows the same object."""

    probe: np.ndarray
    gallery: np.ndarray
    true_index: int


class ModelBackend(abc.ABC):
    """What the search harness needs from a trainable model.

    Implementations must be deterministic given ``(sample, seed)`` and the
    sequence of calls made on them.
    """

    @abc.abstractmethod
    def init(self, sample: HyperparameterSample, seed: int) -> None: ...

    @abc.abstractmethod
    def train_epochs(self, count: int) -> None: ...

    @abc.abstractmethod
    def activations_for(self, stimuli: StimulusSet, frames: int) -> ActivationSequence:
        """Per-time-step activations while each stimulus is shown for ``frames`` steps."""

    @abc.abstractmethod
    def final_layer_activations(self, images: np.ndarray) -> np.ndarray:
        """One activation vector per image, shape ``(len(images), d)``."""

    @abc.abstractmethod
    def predict_next(self, frames: np.ndarray) -> np.ndarray:
        """Predict the frame that follows ``frames`` (shape ``(t, H, W)``)."""


# ---------------------------------------------------------------------------
# single model


@dataclass
class SearchRecord:
    model_id: str
    sample: HyperparameterSample | None
    trajectories: dict[str, MetricTrajectory]
    final: dict[str, float]
    epochs_trained: int
    wall_units: float
    error: str | None = None
    missing: dict[str, list[int]] = field(default_factory=dict)

    @property
    def failed(self) -> bool:
        return self.error is not None


@dataclass(frozen=True)
class EvaluationSuite:
    """Fixed inputs every checkpoint is scored against."""

    reference_rdm: Rdm
    stimuli: StimulusSet
    gallery_trials: tuple[GalleryTrial, ...]
    heldout_frames: tuple[np.ndarray, ...]
    frames: int = 5
    pooling: str = "mean"

    def __post_init__(self):
        if tuple(self.stimuli.ids) != self.reference_rdm.stimulus_ids:
            raise StimulusMismatch("stimulus ids do not match the reference RDM")
        object.__setattr__(self, "gallery_trials", tuple(self.gallery_trials))
        object.__setattr__(self, "heldout_frames", tuple(np.asarray(s, dtype=float) for s in self.heldout_frames))


def _score_hms(backend: ModelBackend, suite: EvaluationSuite) -> float | None:
    seq = backend.activations_for(suite.stimuli, suite.frames)
    try:
        model_rdm = build_rdm(temporal_pool(seq, suite.pooling))
        return hms(model_rdm, suite.reference_rdm)
    except (DegenerateRdm, ZeroVarianceVector):
        return None


def _score_accuracy(backend: ModelBackend, suite: EvaluationSuite) -> float | None:
    if not suite.gallery_trials:
        return None
    images = np.concatenate(
        [np.concatenate([t.probe[None], t.gallery]) for t in suite.gallery_trials]
    )
    vecs = np.asarray(backend.final_layer_activations(images), dtype=float)
    trials, pos = [], 0
    for t in suite.gallery_trials:
        g = len(t.gallery)
        trials.append(MatchingTrial(vecs[pos], vecs[pos + 1 : pos + 1 + g], t.true_index))
        pos += g + 1
    return matching_accuracy(trials)


def _score_mse(backend: ModelBackend, suite: EvaluationSuite) -> float | None:
    errors = []
    for seq in suite.heldout_frames:
        for t in range(1, len(seq)):
            errors.append(next_frame_mse(backend.predict_next(seq[:t]), seq[t]))
    return float(np.mean(errors)) if errors else None


def run_model(
    sample: HyperparameterSample,
    backend: ModelBackend,
    suite: EvaluationSuite,
    checkpoint_every: int = 5,
    model_id: str = "m0000",
) -> SearchRecord:
    """Train ``backend`` to ``sample.epochs`` and score it at each checkpoint.

    A degenerate model RDM at a checkpoint leaves that HMS point missing;
    any other backend error aborts the model with :class:`BackendFailure`.
    """
    if checkpoint_every < 1:
        raise ValueError("checkpoint_every must be >= 1")
    points: dict[str, list[tuple[int, float]]] = {m: [] for m in METRICS}
    missing: dict[str, list[int]] = {m: [] for m in METRICS}
    trained = 0
    scorers = {"hms": _score_hms, "accuracy": _score_accuracy, "mse": _score_mse}
    for epoch in checkpoint_epochs(sample.epochs, checkpoint_every):
        try:
            backend.train_epochs(epoch - trained)
            trained = epoch
            scores = {m: f(backend, suite) for m, f in scorers.items()}
        except BackendFailure:
            raise
        except Exception as exc:
            raise BackendFailure(f"{model_id} at epoch {epoch}: {exc}", epoch=epoch) from exc
        for m, v in scores.items():
            if v is None or not math.isfinite(v):
                missing[m].append(epoch)
            else:
                points[m].append((epoch, float(v)))
    trajectories = {m: MetricTrajectory.from_pairs(m, p) for m, p in points.items()}
    final = {m: t.final for m, t in trajectories.items() if len(t)}
    return SearchRecord(
        model_id,
        sample,
        trajectories,
        final,
        epochs_trained=trained,
        wall_units=float(trained),
        missing={m: e for m, e in missing.items() if e},
    )


# ---------------------------------------------------------------------------
# sweep


BackendFactory = Callable[[], ModelBackend]


def model_seeds(master_seed: int, n_models: int) -> list[tuple[int, int]]:
    """(sample seed, backend seed) for each model, spawned from ``master_seed``."""
    children = np.random.SeedSequence(master_seed).spawn(n_models)
    return [tuple(int(s) for s in c.generate_state(2, dtype=np.uint32)) for c in children]


def _run_one(job) -> SearchRecord:
    index, sample, backend_seed, factory, suite, checkpoint_every = job
    model_id = f"m{index:04d}"
    try:
        backend = factory()
        backend.init(sample, backend_seed)
        record = run_model(sample, backend, suite, checkpoint_every, model_id)
    except Exception as exc:  # one bad model must not abort the sweep
        return SearchRecord(model_id, sample, {}, {}, 0, 0.0, error=f"{type(exc).__name__}: {exc}")
    if any(m not in record.final for m in METRICS):
        absent = [m for m in METRICS if m not in record.final]
        record.error = "no valid checkpoint for " + ", ".join(absent)
    return record


def run_search(
    space: HyperparameterSpace,
    backend_factory: BackendFactory,
    n_models: int,
    suite: EvaluationSuite,
    *,
    master_seed: int = 0,
    checkpoint_every: int = 5,
    workers: int = 1,
    fixed_sample: HyperparameterSample | None = None,
) -> tuple[MetricTable, list[SearchRecord]]:
    """Sample, train and score ``n_models`` models.

    With ``fixed_sample`` every model shares those hyperparameters and only
    the backend seed varies (the across-network stability design). Failed
    models stay in the returned records, flagged, but not in the table.
    ``backend_factory`` must be picklable when ``workers > 1``.
    """
    if n_models < 1:
        raise ValueError("n_models must be >= 1")
    jobs = []
    for i, (sample_seed, backend_seed) in enumerate(model_seeds(master_seed, n_models)):
        if fixed_sample is not None:
            sample = HyperparameterSample(**fixed_sample.values(), seed=fixed_sample.seed)
        else:
            sample = sample_space(space, sample_seed)
        jobs.append((i, sample, backend_seed, backend_factory, suite, checkpoint_every))

    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(_run_one, jobs))
    else:
        records = [_run_one(j) for j in jobs]
    return metric_table(records), records


def metric_table(records: Sequence[SearchRecord]) -> MetricTable:
    """Final metrics plus hyperparameter columns for every non-failed record."""
    ok = [r for r in records if not r.failed]
    columns: dict[str, list[float]] = {m: [r.final[m] for r in ok] for m in METRICS}
    if ok and all(r.sample is not None for r in ok):
        for name in DIMENSIONS:
            columns[name] = [float(getattr(r.sample, name)) for r in ok]
    return MetricTable(tuple(r.model_id for r in ok), columns)
