"""HMS-driven early stopping: stability detection, threshold gating, savings accounting."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from .errors import DegenerateSeries, MissingTrajectory
from .stats import MetricTable

POLICIES = ("stability", "threshold")
GATE_AT = ("stable", "final")


@dataclass(frozen=True, eq=False)
class MetricTrajectory:
    """A metric sampled at checkpoint epochs (missing checkpoints left out)."""

    metric_name: str
    epochs: tuple[int, ...]
    values: np.ndarray

    def __post_init__(self):
        epochs = tuple(int(e) for e in self.epochs)
        values = np.array(self.values, dtype=float).ravel()
        if len(epochs) != values.size:
            raise ValueError(f"{len(epochs)} epochs for {values.size} values")
        if any(b <= a for a, b in zip(epochs, epochs[1:])):
            raise ValueError("checkpoint epochs must be strictly increasing")
        if not np.all(np.isfinite(values)):
            raise ValueError("trajectory values must be finite")
        values.setflags(write=False)
        object.__setattr__(self, "epochs", epochs)
        object.__setattr__(self, "values", values)

    @classmethod
    def from_pairs(cls, metric_name: str, pairs) -> "MetricTrajectory":
        pairs = list(pairs)
        return cls(metric_name, tuple(e for e, _ in pairs), [v for _, v in pairs])

    def __len__(self) -> int:
        return len(self.epochs)

    def __eq__(self, other):
        if not isinstance(other, MetricTrajectory):
            return NotImplemented
        return (
            self.metric_name == other.metric_name
            and self.epochs == other.epochs
            and np.array_equal(self.values, other.values)
        )

    @property
    def checkpoints(self) -> list[tuple[int, float]]:
        return list(zip(self.epochs, self.values.tolist()))

    def value_at(self, epoch: int) -> float:
        return float(self.values[self.epochs.index(epoch)])

    @property
    def final(self) -> float:
        return float(self.values[-1])


@dataclass(frozen=True)
class StopDecision:
    policy: str
    stopped: bool
    stop_epoch: int | None
    detail: dict[str, Any] = field(default_factory=dict)


def stability_stop(
    t: MetricTrajectory, window_epochs: int = 25, sd_tol: float = 0.01
) -> StopDecision:
    """Stop at the first checkpoint whose trailing window is stable.

    The window for checkpoint ``e`` is the half-open epoch span
    ``(e - window_epochs, e]``; it only counts once ``e >= window_epochs`` and
    it holds at least two values. Stable means sample SD <= ``sd_tol``.
    """
    if len(t) == 0:
        raise MissingTrajectory(f"empty {t.metric_name} trajectory")
    epochs = np.asarray(t.epochs)
    if epochs[-1] < window_epochs:
        return StopDecision(
            "stability",
            False,
            None,
            {"reason": "window larger than trajectory", "window": window_epochs},
        )
    for e in t.epochs:
        if e < window_epochs:
            continue
        inside = (epochs > e - window_epochs) & (epochs <= e)
        vals = t.values[inside]
        if vals.size < 2:
            continue
        sd = float(np.std(vals, ddof=1))
        if sd <= sd_tol:
            return StopDecision(
                "stability", True, int(e), {"window_sd": sd, "n_points": int(vals.size)}
            )
    return StopDecision("stability", False, None, {"reason": "never stable"})


def threshold_stop(hms_value: float, threshold: float, epoch: int | None = None) -> StopDecision:
    """Discard (stop) when the value is strictly below the threshold.

    ``epoch`` is the checkpoint at which the gate is evaluated and becomes the
    stop epoch of a discarded model.
    """
    stopped = bool(hms_value < threshold)
    return StopDecision(
        "threshold",
        stopped,
        epoch if stopped else None,
        {"value": float(hms_value), "threshold": float(threshold), "epoch": epoch},
    )


def compute_threshold(hms_column) -> float:
    """Mean plus one sample standard deviation."""
    x = np.asarray(hms_column, dtype=float).ravel()
    if x.size < 2:
        raise DegenerateSeries("threshold needs at least two values")
    if not np.all(np.isfinite(x)):
        raise DegenerateSeries("threshold series has non-finite values")
    return float(np.mean(x) + np.std(x, ddof=1))


@dataclass(frozen=True)
class ModelSavings:
    model_id: str
    full_epochs: int
    stopped_epochs: int
    stop_epoch: int | None
    gate_epoch: int
    gate_value: float
    retained: bool


@dataclass(frozen=True)
class SavingsReport:
    policy: str
    metric: str
    params: dict[str, Any]
    models: tuple[ModelSavings, ...]
    flagged: tuple[str, ...] = ()

    @property
    def total_full(self) -> int:
        return sum(m.full_epochs for m in self.models)

    @property
    def total_stopped(self) -> int:
        return sum(m.stopped_epochs for m in self.models)

    @property
    def total_saved_fraction(self) -> float:
        full = self.total_full
        if full == 0:
            return 0.0
        return 1.0 - self.total_stopped / full

    @property
    def retained_model_ids(self) -> tuple[str, ...]:
        return tuple(m.model_id for m in self.models if m.retained)

    @property
    def discarded_model_ids(self) -> tuple[str, ...]:
        return tuple(m.model_id for m in self.models if not m.retained)


def _resolve_threshold(threshold, finals: Sequence[float]) -> float | None:
    if threshold is None:
        return None
    if isinstance(threshold, str):
        if threshold != "auto":
            raise ValueError(f"threshold must be a number, 'auto' or None, got {threshold!r}")
        return compute_threshold(finals)
    return float(threshold)


def savings_analysis(
    records: Sequence,
    policy: str = "stability",
    *,
    metric: str = "hms",
    window: int = 25,
    sd_tol: float = 0.01,
    threshold: float | str | None = None,
    gate_at: str = "stable",
) -> SavingsReport:
    """Apply an early-stopping policy to every record's trajectory of ``metric``.

    ``stability``: a model stops at its stability epoch (full length if it
    never stabilises). With a threshold, models whose value at that epoch is
    below it are marked discarded; without one every model is retained.

    ``threshold``: the gate is read at the stability epoch (``gate_at="stable"``,
    falling back to the final checkpoint) or at the final checkpoint. Discarded
    models cost the gate epoch, retained ones their full run. The threshold
    defaults to ``"auto"``: mean + SD of the final values.

    Records need ``model_id``, ``trajectories`` and ``epochs_trained``.
    """
    if policy not in POLICIES:
        raise ValueError(f"unknown policy {policy!r}; expected one of {POLICIES}")
    if gate_at not in GATE_AT:
        raise ValueError(f"gate_at must be one of {GATE_AT}")
    if policy == "threshold" and threshold is None:
        threshold = "auto"

    usable, flagged = [], []
    for r in records:
        traj = (r.trajectories or {}).get(metric)
        if traj is None or len(traj) == 0:
            flagged.append(r.model_id)
        else:
            usable.append((r, traj))
    if not usable:
        raise MissingTrajectory(f"no record has a {metric} trajectory")

    thr = _resolve_threshold(threshold, [t.final for _, t in usable])
    rows = []
    for r, traj in usable:
        full = int(r.epochs_trained)
        stable = stability_stop(traj, window, sd_tol)
        if policy == "stability":
            gate = stable.stop_epoch if stable.stopped else traj.epochs[-1]
            value = traj.value_at(gate)
            spent = stable.stop_epoch if stable.stopped else full
            retained = thr is None or not value < thr
            rows.append(
                ModelSavings(r.model_id, full, spent, stable.stop_epoch, gate, value, retained)
            )
        else:
            if gate_at == "stable" and stable.stopped:
                gate = stable.stop_epoch
            else:
                gate = traj.epochs[-1]
            value = traj.value_at(gate)
            d = threshold_stop(value, thr, epoch=gate)
            spent = min(gate, full) if d.stopped else full
            rows.append(
                ModelSavings(r.model_id, full, spent, d.stop_epoch, gate, value, not d.stopped)
            )

    params = {"window": window, "sd_tol": sd_tol, "threshold": thr}
    if policy == "threshold":
        params["gate_at"] = gate_at
    return SavingsReport(policy, metric, params, tuple(rows), tuple(flagged))


@dataclass(frozen=True)
class RetentionQuality:
    metric: str
    retained_max: float
    retained_mean: float
    discarded_max: float
    discarded_mean: float
    global_best_id: str
    best_retained: bool


def retention_quality(report: SavingsReport, table: MetricTable, metric: str) -> RetentionQuality:
    values = table.column(metric)
    index = {mid: i for i, mid in enumerate(table.model_ids)}
    for mid in report.retained_model_ids + report.discarded_model_ids:
        if mid not in index:
            raise MissingTrajectory(f"model {mid!r} is not in the metric table")

    def agg(ids):
        if not ids:
            return float("nan"), float("nan")
        v = values[[index[i] for i in ids]]
        return float(np.max(v)), float(np.mean(v))

    r_max, r_mean = agg(report.retained_model_ids)
    d_max, d_mean = agg(report.discarded_model_ids)
    best = table.model_ids[int(np.argmax(values))]
    return RetentionQuality(
        metric, r_max, r_mean, d_max, d_mean, best, best in report.retained_model_ids
    )


def format_savings(report: SavingsReport, quality: RetentionQuality | None = None) -> str:
    lines = [
        f"policy: {report.policy} on {report.metric}",
        "params: " + ", ".join(f"{k}={v}" for k, v in report.params.items()),
        f"models: {len(report.models)} analysed, {len(report.flagged)} flagged",
        f"epochs: {report.total_stopped} of {report.total_full}",
        f"saved: {100.0 * report.total_saved_fraction:.1f}%",
        f"retained: {len(report.retained_model_ids)}, discarded: {len(report.discarded_model_ids)}",
    ]
    if report.flagged:
        lines.append("flagged (missing trajectory): " + ", ".join(report.flagged))
    if quality is not None:
        lines.append(
            f"{quality.metric}: retained max {quality.retained_max:.4f} mean {quality.retained_mean:.4f}; "
            f"discarded max {quality.discarded_max:.4f} mean {quality.discarded_mean:.4f}; "
            f"best model {quality.global_best_id} {'retained' if quality.best_retained else 'discarded'}"
        )
    return "\n".join(lines) + "\n"
