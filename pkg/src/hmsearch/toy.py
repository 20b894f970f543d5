"""Desk-scale stand-ins for the network, the human reference RDM and the datasets.

The toy encoder is analytic, not trained. Its response to an image mixes a
category-informative random projection of the pixels with pseudo-random noise:

    features = alpha * zscore(W @ (x - 0.5)) + (1 - alpha) * gain * zscore(noise(x))

where ``alpha`` rises with "training" for viable learning rates and decays
for non-viable ones. HMS, matching accuracy and next-frame error all improve
with ``alpha``, which is how the harness gets metric correlations by
construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np
from scipy.ndimage import gaussian_filter
from scipy.optimize import brentq

from .earlystop import MetricTrajectory
from .errors import InvalidCounts, InvalidProfile, InvalidSpec
from .rsa import ActivationMatrix, ActivationSequence, Rdm, n_pairs
from .search import (
    EvaluationSuite,
    GalleryTrial,
    HyperparameterSample,
    ModelBackend,
    SearchRecord,
    StimulusSet,
    checkpoint_epochs,
)

N_FEATURES = 64
NOISE_FREQUENCY = 50.0
# stimulus-frame noise is scaled so HMS keeps improving up to alpha ~ 0.8
ENCODER_NOISE_GAIN = 8.0

ALPHA_INIT = 0.25
VIABLE_LOG_LR = (-4.7, -2.5)
BEST_LOG_LR = -3.5
DECAY_RATE = 0.03


# ---------------------------------------------------------------------------
# stimuli and reference


def gen_stimuli(
    m: int = 92, k: int = 6, size: int = 16, seed: int = 0, perturbation: float = 0.1
) -> StimulusSet:
    """``m`` images built from ``k`` random prototypes plus bounded uniform perturbation.

    Categories are contiguous blocks whose sizes differ by at most one.
    """
    if not (m >= k >= 1) or m < 3:
        raise InvalidCounts(f"need m >= k >= 1 and m >= 3, got m={m}, k={k}")
    if size < 2:
        raise InvalidCounts("image size must be at least 2")
    rng = np.random.default_rng(seed)
    prototypes = rng.uniform(0.0, 1.0, size=(k, size, size))
    labels = np.arange(m) * k // m
    noise = rng.uniform(-perturbation, perturbation, size=(m, size, size))
    images = np.clip(prototypes[labels] + noise, 0.0, 1.0)
    width = len(str(m))
    ids = tuple(f"s{i + 1:0{width}d}" for i in range(m))
    return StimulusSet(ids, images, labels)


@dataclass(frozen=True)
class ReferenceRdmSpec:
    delta_in: float = 0.3
    delta_out: float = 1.0
    noise: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if not (0.0 <= self.delta_in < self.delta_out <= 2.0):
            raise InvalidSpec(f"need 0 <= delta_in < delta_out <= 2, got {self.delta_in}, {self.delta_out}")
        if not self.noise >= 0.0:
            raise InvalidSpec("noise SD must be non-negative")


def reference_rdm(spec: ReferenceRdmSpec, labels, ids=None) -> Rdm:
    """Block RDM: ``delta_in`` within a category, ``delta_out`` across, plus clamped noise."""
    labels = np.asarray(labels)
    m = labels.size
    if ids is None:
        width = len(str(m))
        ids = tuple(f"s{i + 1:0{width}d}" for i in range(m))
    i, j = np.triu_indices(m, k=1)
    entries = np.where(labels[i] == labels[j], spec.delta_in, spec.delta_out)
    if spec.noise > 0:
        rng = np.random.default_rng(spec.seed)
        entries = entries + rng.normal(0.0, spec.noise, size=n_pairs(m))
    return Rdm(tuple(ids), np.clip(entries, 0.0, 2.0))


def gen_gallery_trials(
    n_trials: int = 40,
    gallery_size: int = 50,
    size: int = 16,
    seed: int = 0,
    families: int = 5,
    spread: float = 0.2,
    probe_noise: float = 0.3,
) -> tuple[GalleryTrial, ...]:
    """Fine-grained matching trials.

    Gallery objects are perturbations of a few shared family prototypes; the
    probe is the true object under a lighting change (gain and offset) plus
    pixel noise.
    """
    if gallery_size < 2 or n_trials < 1:
        raise InvalidCounts("need at least one trial and a gallery of two")
    rng = np.random.default_rng(seed)
    trials = []
    for _ in range(n_trials):
        protos = rng.uniform(0.0, 1.0, size=(families, size, size))
        fam = rng.integers(families, size=gallery_size)
        gallery = np.clip(
            protos[fam] + rng.uniform(-spread, spread, size=(gallery_size, size, size)), 0.0, 1.0
        )
        true_index = int(rng.integers(gallery_size))
        gain = rng.uniform(0.8, 1.2)
        offset = rng.uniform(-0.1, 0.1)
        probe = gallery[true_index] * gain + offset
        probe = np.clip(probe + rng.uniform(-probe_noise, probe_noise, size=(size, size)), 0.0, 1.0)
        trials.append(GalleryTrial(probe, gallery, true_index))
    return tuple(trials)


def gen_heldout_sequences(
    n_sequences: int = 4, frames: int = 5, size: int = 16, seed: int = 0
) -> tuple[np.ndarray, ...]:
    """Smooth random textures drifting one pixel per frame."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n_sequences):
        base = gaussian_filter(rng.uniform(0.0, 1.0, size=(size, size)), sigma=2.0, mode="wrap")
        base = (base - base.min()) / max(base.max() - base.min(), 1e-12)
        dx, dy = rng.choice([-1, 1], size=2)
        seq = np.stack([np.roll(base, (t * dy, t * dx), axis=(0, 1)) for t in range(frames)])
        out.append(seq)
    return tuple(out)


@dataclass(frozen=True)
class ToyEnvironment:
    """Everything a toy sweep needs besides the hyperparameters."""

    stimuli: StimulusSet
    reference: Rdm
    suite: EvaluationSuite


def build_environment(
    seed: int = 0,
    n_stimuli: int = 92,
    categories: int = 6,
    size: int = 16,
    gallery_size: int = 50,
    n_trials: int = 40,
    heldout_sequences: int = 4,
    frames: int = 5,
    reference: ReferenceRdmSpec | None = None,
    reference_override: Rdm | None = None,
    stimuli_override: StimulusSet | None = None,
    pooling: str = "mean",
) -> ToyEnvironment:
    ss = np.random.SeedSequence(seed).spawn(4)
    s_stim, s_ref, s_gal, s_seq = (int(c.generate_state(1)[0]) for c in ss)
    stimuli = stimuli_override or gen_stimuli(n_stimuli, categories, size, s_stim)
    size = stimuli.images.shape[1]
    if reference_override is not None:
        ref = reference_override
    else:
        if stimuli.labels is None:
            raise InvalidSpec("a synthetic reference RDM needs category labels")
        spec = reference or ReferenceRdmSpec(seed=s_ref)
        ref = reference_rdm(spec, stimuli.labels, stimuli.ids)
    suite = EvaluationSuite(
        ref,
        stimuli,
        gen_gallery_trials(n_trials, gallery_size, size, s_gal),
        gen_heldout_sequences(heldout_sequences, frames, size, s_seq),
        frames=frames,
        pooling=pooling,
    )
    return ToyEnvironment(stimuli, ref, suite)


# ---------------------------------------------------------------------------
# toy model


def alpha_max(sample: HyperparameterSample) -> float:
    """Asymptotic mixing coefficient reachable with these hyperparameters."""
    log_lr = math.log10(sample.learning_rate)
    q_lr = math.exp(-(((log_lr - BEST_LOG_LR) / 0.9) ** 2))
    q_data = 1.0 - 0.5 * math.exp(-sample.training_sequences / 150.0)
    q_filter = 1.0 - 0.03 * abs(sample.filter_size - 5)
    q_batch = 1.0 - 0.02 * math.log2(max(sample.batch_size, 1))
    return 0.3 + 0.65 * q_lr * q_data * q_filter * q_batch


def is_viable(sample: HyperparameterSample) -> bool:
    lo, hi = VIABLE_LOG_LR
    return lo <= math.log10(sample.learning_rate) <= hi


def rise_rate(sample: HyperparameterSample) -> float:
    return 0.06 * (sample.learning_rate / 1e-3) ** 0.3 * math.sqrt(sample.training_sequences / 250.0)


def alpha_schedule(sample: HyperparameterSample, epoch: int) -> float:
    """Mixing coefficient after ``epoch`` epochs.

    Viable learning rates approach ``alpha_max`` monotonically from
    ``ALPHA_INIT``; non-viable ones decay toward zero.
    """
    if is_viable(sample):
        top = alpha_max(sample)
        return top - (top - ALPHA_INIT) * math.exp(-rise_rate(sample) * epoch)
    return ALPHA_INIT * math.exp(-DECAY_RATE * epoch)


@dataclass(frozen=True)
class ToyModel:
    sample: HyperparameterSample
    seed: int
    epoch: int = 0
    n_features: int = N_FEATURES
    alpha_override: float | None = None

    @property
    def alpha(self) -> float:
        if self.alpha_override is not None:
            return float(self.alpha_override)
        return alpha_schedule(self.sample, self.epoch)


def train_epoch(model: ToyModel) -> ToyModel:
    if model.epoch >= model.sample.epochs:
        raise ValueError(f"model already trained for {model.sample.epochs} epochs")
    return replace(model, epoch=model.epoch + 1)


@dataclass(frozen=True, eq=False)
class _Maps:
    signal: np.ndarray
    frame_noise: np.ndarray
    final_noise: np.ndarray
    predict_noise: np.ndarray
    blank: np.ndarray
    phases: np.ndarray


@lru_cache(maxsize=64)
def _maps(seed: int, pixels: int, n_features: int, frames: int) -> _Maps:
    rng = np.random.default_rng([seed, pixels, n_features, frames])
    scale = 1.0 / math.sqrt(pixels)
    return _Maps(
        signal=rng.normal(0.0, scale, size=(n_features, pixels)),
        frame_noise=rng.normal(0.0, scale, size=(max(frames - 1, 1), n_features, pixels)),
        final_noise=rng.normal(0.0, scale, size=(n_features, pixels)),
        predict_noise=rng.normal(0.0, scale, size=(pixels, pixels)),
        blank=rng.normal(0.0, 1.0, size=n_features),
        phases=rng.uniform(0.0, 2 * math.pi, size=(max(frames - 1, 1) + 2, n_features)),
    )


def _zscore(x: np.ndarray) -> np.ndarray:
    x = x - x.mean(axis=-1, keepdims=True)
    sd = x.std(axis=-1, keepdims=True)
    return x / np.where(sd > 0, sd, 1.0)


def _flat(images) -> np.ndarray:
    images = np.asarray(images, dtype=float)
    if images.ndim == 2:
        images = images[None]
    return images.reshape(images.shape[0], -1)


def encode(model: ToyModel, stimulus, T: int = 5) -> np.ndarray:
    """Activation frames for one image ``(H, W)`` or a batch ``(m, H, W)``.

    Returns shape ``(T, m, n_features)``. Frame 0 is the blank response,
    identical for every stimulus; later frames mix signal and per-frame noise.
    """
    x = _flat(stimulus)
    maps = _maps(model.seed, x.shape[1], model.n_features, T)
    a = model.alpha
    signal = _zscore((x - 0.5) @ maps.signal.T)
    out = np.empty((T, x.shape[0], model.n_features))
    out[0] = maps.blank
    for t in range(1, T):
        noise = _zscore(np.sin(NOISE_FREQUENCY * (x @ maps.frame_noise[t - 1].T) + maps.phases[t - 1]))
        out[t] = a * signal + (1.0 - a) * ENCODER_NOISE_GAIN * noise
    return out


def final_layer(model: ToyModel, images) -> np.ndarray:
    x = _flat(images)
    maps = _maps(model.seed, x.shape[1], model.n_features, 5)
    a = model.alpha
    signal = _zscore((x - 0.5) @ maps.signal.T)
    noise = _zscore(np.sin(NOISE_FREQUENCY * (x @ maps.final_noise.T) + maps.phases[-1]))
    return a * signal + (1.0 - a) * noise


def predict_frame(model: ToyModel, frames) -> np.ndarray:
    """Blend of "copy the last frame" and a pseudo-random image, weighted by alpha."""
    frames = np.asarray(frames, dtype=float)
    last = frames[-1]
    maps = _maps(model.seed, last.size, model.n_features, 5)
    garbage = 0.5 + 0.5 * np.sin(NOISE_FREQUENCY * (maps.predict_noise @ last.ravel()))
    a = model.alpha
    return np.clip(a * last + (1.0 - a) * garbage.reshape(last.shape), 0.0, 1.0)


class ToyBackend(ModelBackend):
    """:class:`ModelBackend` over :class:`ToyModel`."""

    def __init__(self, n_features: int = N_FEATURES, alpha_override: float | None = None):
        self.n_features = n_features
        self.alpha_override = alpha_override
        self.model: ToyModel | None = None

    def init(self, sample: HyperparameterSample, seed: int) -> None:
        self.model = ToyModel(sample, int(seed), 0, self.n_features, self.alpha_override)

    def _require(self) -> ToyModel:
        if self.model is None:
            raise RuntimeError("backend not initialised")
        return self.model

    def train_epochs(self, count: int) -> None:
        model = self._require()
        for _ in range(count):
            model = train_epoch(model)
        self.model = model

    def activations_for(self, stimuli: StimulusSet, frames: int) -> ActivationSequence:
        acts = encode(self._require(), stimuli.images, frames)
        return ActivationSequence(tuple(ActivationMatrix(stimuli.ids, a) for a in acts))

    def final_layer_activations(self, images: np.ndarray) -> np.ndarray:
        return final_layer(self._require(), images)

    def predict_next(self, frames: np.ndarray) -> np.ndarray:
        return predict_frame(self._require(), frames)


# ---------------------------------------------------------------------------
# trajectory simulator


def _sigmoid(z):
    return 1.0 / (1.0 + np.exp(-np.asarray(z, dtype=float)))


def logistic_center(amplitude: float, scale: float, stable_epoch: float, window: float, tol: float) -> float:
    """Centre ``c`` such that ``L(e_s) - L(e_s - window) == tol`` for
    ``L(e) = amplitude * sigmoid((e - c) / scale)``, on the late side of the rise.
    """
    amplitude = abs(amplitude)
    if amplitude <= tol:
        return stable_epoch - window  # curve never moves more than tol over a window

    def gap(c):
        return amplitude * float(
            _sigmoid((stable_epoch - c) / scale) - _sigmoid((stable_epoch - window - c) / scale)
        ) - tol

    hi = stable_epoch - window / 2.0
    if gap(hi) <= 0:
        return hi  # even the steepest window of the rise stays within tol
    lo = hi - 60.0 * scale
    return brentq(gap, lo, hi)


def analytic_stable_epoch(curve, window: float, tol: float, horizon: float) -> float:
    """Smallest ``e`` >= window at which ``|curve(e) - curve(e - window)| <= tol`` from then on."""
    grid = np.arange(window, horizon + 1e-9, 0.01)
    diff = np.abs(curve(grid) - curve(grid - window))
    bad = np.flatnonzero(diff > tol)
    if bad.size == 0:
        return float(window)
    if bad[-1] == grid.size - 1:
        return float("inf")
    return float(grid[bad[-1] + 1])


@dataclass(frozen=True)
class TrajectoryProfile:
    """Parametric metric curves for one simulated training run.

    HMS is logistic (falling for ``diverging``), accuracy dips then rises
    logistically, MSE decays exponentially to a floor (grows for
    ``diverging``). ``*_stable_epoch`` place each curve's flattening point
    under the stability criterion given by ``window`` and ``sd_tol``.
    """

    profile: str = "converging"
    seed: int = 0
    hms_start: float = 0.0
    hms_final: float = 0.15
    hms_stable_epoch: float = 33.0
    hms_scale: float = 4.0
    acc_start: float = 0.3
    acc_dip: float = 0.1
    acc_final: float = 0.45
    acc_dip_tau: float = 6.0
    acc_stable_epoch: float = 66.5
    acc_scale: float = 6.0
    mse_start: float = 0.3
    mse_floor: float = 0.01
    mse_tau: float = 45.0
    mse_growth: float = 0.012
    hms_noise: float = 0.0
    acc_noise: float = 0.0
    mse_noise: float = 0.0
    window: int = 25
    sd_tol: float = 0.01

    def __post_init__(self):
        if self.profile not in ("converging", "diverging"):
            raise InvalidProfile(f"profile must be converging or diverging, got {self.profile!r}")
        if min(self.hms_noise, self.acc_noise, self.mse_noise) < 0:
            raise InvalidProfile("noise SDs must be non-negative")
        if self.hms_scale <= 0 or self.acc_scale <= 0 or self.mse_tau <= 0 or self.acc_dip_tau <= 0:
            raise InvalidProfile("curve scales must be positive")
        if not (-1 <= self.hms_start <= 1 and -1 <= self.hms_final <= 1):
            raise InvalidProfile("HMS levels must lie in [-1, 1]")
        if not all(0 <= v <= 1 for v in (self.acc_start, self.acc_dip, self.acc_final)):
            raise InvalidProfile("accuracy levels must lie in [0, 1]")
        if self.mse_start < 0 or self.mse_floor < 0:
            raise InvalidProfile("MSE levels must be non-negative")

    def hms_curve(self):
        amp = self.hms_final - self.hms_start
        c = logistic_center(amp, self.hms_scale, self.hms_stable_epoch, self.window, self.sd_tol)
        return lambda e: self.hms_start + amp * _sigmoid((np.asarray(e, float) - c) / self.hms_scale)

    def accuracy_curve(self):
        amp = self.acc_final - self.acc_dip
        c = logistic_center(amp, self.acc_scale, self.acc_stable_epoch, self.window, self.sd_tol)
        lo, hi = self.acc_dip, self.acc_start

        def curve(e):
            e = np.asarray(e, dtype=float)
            dip = (hi - lo) * np.exp(-np.maximum(e, 0.0) / self.acc_dip_tau)
            return lo + dip + amp * _sigmoid((e - c) / self.acc_scale)

        return curve

    def mse_curve(self):
        if self.profile == "diverging":
            return lambda e: self.mse_start * np.exp(self.mse_growth * np.asarray(e, float))
        return lambda e: self.mse_floor + (self.mse_start - self.mse_floor) * np.exp(
            -np.asarray(e, float) / self.mse_tau
        )


def simulate_trajectory(
    profile: TrajectoryProfile, epochs: int, checkpoint_every: int = 5
) -> dict[str, MetricTrajectory]:
    """Sample the profile's curves at checkpoints, add seeded noise, clamp to metric ranges."""
    if checkpoint_every < 1 or epochs < checkpoint_every:
        raise InvalidProfile("need epochs >= checkpoint_every >= 1")
    e = np.asarray(checkpoint_epochs(epochs, checkpoint_every), dtype=float)
    rng = np.random.default_rng(profile.seed)
    hms = profile.hms_curve()(e) + rng.normal(0.0, 1.0, e.size) * profile.hms_noise
    acc = profile.accuracy_curve()(e) + rng.normal(0.0, 1.0, e.size) * profile.acc_noise
    mse = profile.mse_curve()(e) + rng.normal(0.0, 1.0, e.size) * profile.mse_noise
    epochs_t = tuple(int(v) for v in e)
    return {
        "hms": MetricTrajectory("hms", epochs_t, np.clip(hms, -1.0, 1.0)),
        "accuracy": MetricTrajectory("accuracy", epochs_t, np.clip(acc, 0.0, 1.0)),
        "mse": MetricTrajectory("mse", epochs_t, np.maximum(mse, 0.0)),
    }


@dataclass(frozen=True)
class PopulationSpec:
    """Distribution of simulated runs for large-N early-stopping studies."""

    n_models: int = 95
    epochs: int = 150
    checkpoint_every: int = 5
    diverging_fraction: float = 0.3
    hms_stable_mean: float = 33.0
    hms_stable_sd: float = 5.0
    acc_stable_mean: float = 66.5
    acc_stable_sd: float = 36.0
    hms_noise: float = 0.002
    acc_noise: float = 0.01
    mse_noise: float = 0.002
    extra: dict = field(default_factory=dict)


def simulate_population(spec: PopulationSpec = PopulationSpec(), seed: int = 0) -> list[SearchRecord]:
    """Seeded mix of converging and diverging runs; final accuracy tracks final HMS."""
    rng = np.random.default_rng(seed)
    children = np.random.SeedSequence(seed).spawn(spec.n_models)
    records = []
    lo = spec.checkpoint_every * math.ceil(25 / spec.checkpoint_every)
    for i in range(spec.n_models):
        diverging = rng.uniform() < spec.diverging_fraction
        hms_stable = float(np.clip(rng.normal(spec.hms_stable_mean, spec.hms_stable_sd), lo, spec.epochs))
        acc_stable = float(np.clip(rng.normal(spec.acc_stable_mean, spec.acc_stable_sd), lo, spec.epochs))
        if diverging:
            hms_final = float(rng.normal(0.0, 0.02))
            kw = dict(
                profile="diverging",
                hms_start=0.05,
                hms_final=hms_final,
                acc_start=0.25,
                acc_dip=float(np.clip(rng.normal(0.08, 0.03), 0.0, 1.0)),
                acc_final=float(np.clip(rng.normal(0.1, 0.05), 0.0, 1.0)),
                mse_start=float(rng.uniform(0.1, 0.3)),
            )
        else:
            hms_final = float(np.clip(rng.normal(0.13, 0.04), -1.0, 1.0))
            acc_final = float(np.clip(0.2 + 1.5 * hms_final + rng.normal(0.0, 0.05), 0.0, 1.0))
            kw = dict(
                profile="converging",
                hms_start=0.0,
                hms_final=hms_final,
                acc_start=0.3,
                acc_dip=float(np.clip(min(acc_final, 0.3) - 0.1, 0.0, 1.0)),
                acc_final=acc_final,
                mse_start=float(rng.uniform(0.1, 0.3)),
                mse_floor=float(np.clip(0.02 - 0.08 * (hms_final - 0.13), 0.001, None)),
            )
        profile = TrajectoryProfile(
            seed=int(children[i].generate_state(1)[0]),
            hms_stable_epoch=hms_stable,
            acc_stable_epoch=acc_stable,
            hms_noise=spec.hms_noise,
            acc_noise=spec.acc_noise,
            mse_noise=spec.mse_noise,
            **{**kw, **spec.extra},
        )
        traj = simulate_trajectory(profile, spec.epochs, spec.checkpoint_every)
        final = {m: t.final for m, t in traj.items()}
        records.append(SearchRecord(f"sim{i:04d}", None, traj, final, spec.epochs, float(spec.epochs)))
    return records
