"""Text codecs for every file the tools read or write.

Numbers are written with 17 significant digits, which round-trips any
float64 exactly, so write -> read -> write is byte-identical. Every writer goes
through a temp file and an atomic rename.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import os
import re
import shutil
import tempfile
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .earlystop import MetricTrajectory, ModelSavings, SavingsReport
from .errors import FormatError
from .evaluation import MatchingTrial
from .rsa import ActivationMatrix, ActivationSequence, Rdm, n_pairs
from .stats import CorrelationPair, CorrelationReport, MetricTable

RDM_MAGIC = "rdm"
RDM_VERSION = "v1"
TRAJECTORY_METRICS = ("hms", "accuracy", "mse")


def fmt(x: float) -> str:
    return format(float(x), ".17g")


def _num(text: str, where: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise FormatError(f"{where}: not a number: {text!r}") from None


def _check_id(s: str) -> str:
    if not s or any(c in s for c in ",\n\r\"") or s != s.strip():
        raise FormatError(f"invalid identifier {s!r} (empty, padded, or contains , \" or newline)")
    return s


# ---------------------------------------------------------------------------
# atomic output


def atomic_write_text(path, text: str) -> Path:
    return atomic_write_bytes(path, text.encode("utf-8"))


def atomic_write_bytes(path, data: bytes) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


@contextmanager
def staged_dir(out):
    """Yield a scratch directory; on success its contents are moved into ``out``.

    Nothing lands in ``out`` if the body raises.
    """
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=f".{out.name}.", dir=out.parent))
    try:
        yield tmp
        out.mkdir(parents=True, exist_ok=True)
        for src in sorted(tmp.rglob("*")):
            if src.is_dir():
                continue
            dst = out / src.relative_to(tmp)
            dst.parent.mkdir(parents=True, exist_ok=True)
            os.replace(src, dst)
    finally:
        shutil.rmtree(tmp, ignore_errors=True)


def _csv_text(rows: Iterable[Sequence[str]]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerows(rows)
    return buf.getvalue()


def _csv_rows(text: str) -> list[list[str]]:
    return [row for row in csv.reader(io.StringIO(text)) if row]


# ---------------------------------------------------------------------------
# RDM


def dumps_rdm(r: Rdm) -> str:
    ids = [_check_id(s) for s in r.stimulus_ids]
    return (
        f"{RDM_MAGIC},{RDM_VERSION},m={r.m}\n"
        + ",".join(ids)
        + "\n"
        + ",".join(fmt(v) for v in r.entries)
        + "\n"
    )


def loads_rdm(text: str) -> Rdm:
    lines = text.splitlines()
    if len(lines) < 3:
        raise FormatError("RDM file needs a header, an id line and an entry line")
    head = lines[0].split(",")
    if len(head) != 3 or head[0] != RDM_MAGIC or head[1] != RDM_VERSION or not head[2].startswith("m="):
        raise FormatError(f"bad RDM header {lines[0]!r}")
    try:
        m = int(head[2][2:])
    except ValueError:
        raise FormatError(f"bad stimulus count in header {lines[0]!r}") from None
    ids = lines[1].split(",")
    if len(ids) != m:
        raise FormatError(f"header says m={m} but {len(ids)} ids given")
    entries = [_num(v, "RDM entry") for v in lines[2].split(",")] if lines[2] else []
    if len(entries) != n_pairs(m):
        raise FormatError(f"expected {n_pairs(m)} entries for m={m}, got {len(entries)}")
    if any(line.strip() for line in lines[3:]):
        raise FormatError("trailing content after RDM entries")
    try:
        return Rdm(tuple(ids), np.array(entries))
    except ValueError as exc:
        raise FormatError(str(exc)) from None


def write_rdm(path, r: Rdm) -> Path:
    return atomic_write_text(path, dumps_rdm(r))


def read_rdm(path) -> Rdm:
    return loads_rdm(Path(path).read_text(encoding="utf-8"))


# ---------------------------------------------------------------------------
# activations


def dumps_activations(a: ActivationMatrix) -> str:
    header = ["stimulus_id"] + [f"f{i + 1}" for i in range(a.n)]
    rows = [header] + [[_check_id(s)] + [fmt(v) for v in row] for s, row in zip(a.stimulus_ids, a.values)]
    return _csv_text(rows)


def loads_activations(text: str) -> ActivationMatrix:
    rows = _csv_rows(text)
    if not rows or rows[0][0] != "stimulus_id":
        raise FormatError("activation CSV must start with a 'stimulus_id,f1,...' header")
    n = len(rows[0]) - 1
    ids, values = [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != n + 1:
            raise FormatError(f"line {lineno}: expected {n + 1} fields, got {len(row)}")
        ids.append(row[0])
        values.append([_num(v, f"line {lineno}") for v in row[1:]])
    try:
        return ActivationMatrix(tuple(ids), np.array(values, dtype=float).reshape(len(ids), n))
    except ValueError as exc:
        raise FormatError(str(exc)) from None


def write_activations(path, a: ActivationMatrix) -> Path:
    return atomic_write_text(path, dumps_activations(a))


def read_activations(path) -> ActivationMatrix:
    return loads_activations(Path(path).read_text(encoding="utf-8"))


def _frame_index(p: Path) -> int:
    found = re.findall(r"\d+", p.stem)
    if not found:
        raise FormatError(f"cannot order frame file {p.name!r}: no step number in its name")
    return int(found[-1])


def read_activation_sequence(directory) -> ActivationSequence:
    """Frames are the ``*.csv`` files of ``directory`` ordered by the last number in each name."""
    files = sorted(Path(directory).glob("*.csv"), key=_frame_index)
    if not files:
        raise FormatError(f"no frame CSVs in {directory}")
    return ActivationSequence(tuple(read_activations(f) for f in files))


def write_activation_sequence(directory, seq: ActivationSequence) -> list[Path]:
    directory = Path(directory)
    return [
        write_activations(directory / f"frame_{t + 1}.csv", frame)
        for t, frame in enumerate(seq.frames)
    ]


# ---------------------------------------------------------------------------
# metric tables and trajectories


def dumps_metric_table(t: MetricTable) -> str:
    header = ["model_id"] + t.names
    rows = [header]
    for i, mid in enumerate(t.model_ids):
        rows.append([_check_id(mid)] + [fmt(t.columns[c][i]) for c in t.names])
    return _csv_text(rows)


def loads_metric_table(text: str) -> MetricTable:
    rows = _csv_rows(text)
    if not rows or rows[0][0] != "model_id":
        raise FormatError("metric table must start with a 'model_id,...' header")
    names = rows[0][1:]
    if len(set(names)) != len(names):
        raise FormatError("duplicate column names in metric table")
    ids, data = [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != len(names) + 1:
            raise FormatError(f"line {lineno}: expected {len(names) + 1} fields, got {len(row)}")
        ids.append(row[0])
        data.append([_num(v, f"line {lineno}") for v in row[1:]])
    arr = np.array(data, dtype=float).reshape(len(ids), len(names))
    return MetricTable(tuple(ids), {c: arr[:, k] for k, c in enumerate(names)})


def write_metric_table(path, t: MetricTable) -> Path:
    return atomic_write_text(path, dumps_metric_table(t))


def read_metric_table(path) -> MetricTable:
    return loads_metric_table(Path(path).read_text(encoding="utf-8"))


def dumps_trajectories(trajectories: dict[str, MetricTrajectory], metrics=TRAJECTORY_METRICS) -> str:
    """One row per checkpoint epoch; a metric missing at that epoch is left empty."""
    epochs = sorted({e for t in trajectories.values() for e in t.epochs})
    lookup = {m: dict(t.checkpoints) for m, t in trajectories.items()}
    rows = [["epoch", *metrics]]
    for e in epochs:
        rows.append([str(e)] + [fmt(lookup[m][e]) if e in lookup.get(m, {}) else "" for m in metrics])
    return _csv_text(rows)


def loads_trajectories(text: str) -> dict[str, MetricTrajectory]:
    rows = _csv_rows(text)
    if not rows or rows[0][0] != "epoch":
        raise FormatError("trajectory CSV must start with an 'epoch,...' header")
    metrics = rows[0][1:]
    points: dict[str, list[tuple[int, float]]] = {m: [] for m in metrics}
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != len(metrics) + 1:
            raise FormatError(f"line {lineno}: expected {len(metrics) + 1} fields")
        try:
            epoch = int(row[0])
        except ValueError:
            raise FormatError(f"line {lineno}: epoch must be an integer") from None
        for m, v in zip(metrics, row[1:]):
            if v != "":
                points[m].append((epoch, _num(v, f"line {lineno}")))
    try:
        return {m: MetricTrajectory.from_pairs(m, p) for m, p in points.items()}
    except ValueError as exc:
        raise FormatError(str(exc)) from None


def write_trajectory_dir(directory, records) -> list[Path]:
    directory = Path(directory)
    return [
        atomic_write_text(directory / f"{_check_id(r.model_id)}.csv", dumps_trajectories(r.trajectories))
        for r in records
        if not r.failed
    ]


def read_trajectory_dir(directory) -> list:
    """Trajectory CSVs as search records; a run's length is its last checkpoint epoch."""
    from .search import SearchRecord

    files = sorted(Path(directory).glob("*.csv"))
    if not files:
        raise FormatError(f"no trajectory CSVs in {directory}")
    records = []
    for f in files:
        traj = loads_trajectories(f.read_text(encoding="utf-8"))
        last = max((t.epochs[-1] for t in traj.values() if len(t)), default=0)
        final = {m: t.final for m, t in traj.items() if len(t)}
        records.append(SearchRecord(f.stem, None, traj, final, last, float(last)))
    return records


# ---------------------------------------------------------------------------
# reports

_BOOL = {"true": True, "false": False}


def _bool(text: str, where: str) -> bool:
    try:
        return _BOOL[text]
    except KeyError:
        raise FormatError(f"{where}: expected true/false, got {text!r}") from None


def dumps_correlation_report(report: CorrelationReport) -> str:
    rows = [["col_a", "col_b", "rho", "p_raw", "p_adjusted", "effect_gate"]]
    for p in report.pairs:
        rows.append(
            [p.col_a, p.col_b, fmt(p.rho), fmt(p.p_raw), fmt(p.p_adjusted), str(p.passes_effect_gate).lower()]
        )
    return _csv_text(rows)


def loads_correlation_pairs(text: str) -> tuple[CorrelationPair, ...]:
    rows = _csv_rows(text)
    if not rows or rows[0] != ["col_a", "col_b", "rho", "p_raw", "p_adjusted", "effect_gate"]:
        raise FormatError("bad correlation report header")
    out = []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != 6:
            raise FormatError(f"line {lineno}: expected 6 fields")
        where = f"line {lineno}"
        out.append(
            CorrelationPair(
                row[0],
                row[1],
                _num(row[2], where),
                _num(row[3], where),
                _num(row[4], where),
                _bool(row[5], where),
            )
        )
    return tuple(out)


def dumps_savings(report: SavingsReport) -> str:
    rows = [["model_id", "full_epochs", "stopped_epochs", "stop_epoch", "gate_epoch", "gate_value", "retained"]]
    for m in report.models:
        rows.append(
            [
                _check_id(m.model_id),
                str(m.full_epochs),
                str(m.stopped_epochs),
                "" if m.stop_epoch is None else str(m.stop_epoch),
                str(m.gate_epoch),
                fmt(m.gate_value),
                str(m.retained).lower(),
            ]
        )
    return _csv_text(rows)


def loads_savings(text: str) -> tuple[ModelSavings, ...]:
    rows = _csv_rows(text)
    if not rows or rows[0][0] != "model_id" or len(rows[0]) != 7:
        raise FormatError("bad savings report header")
    out = []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != 7:
            raise FormatError(f"line {lineno}: expected 7 fields")
        try:
            out.append(
                ModelSavings(
                    row[0],
                    int(row[1]),
                    int(row[2]),
                    None if row[3] == "" else int(row[3]),
                    int(row[4]),
                    _num(row[5], f"line {lineno}"),
                    _bool(row[6], f"line {lineno}"),
                )
            )
        except ValueError:
            raise FormatError(f"line {lineno}: bad integer field") from None
    return tuple(out)


# ---------------------------------------------------------------------------
# matching trials and frames


def dumps_trials(trials: Sequence[MatchingTrial]) -> str:
    """Rows ``trial,role,index,is_true,f1..fn``: one probe row then the gallery rows."""
    if not trials:
        raise FormatError("no trials to write")
    n = trials[0].probe.size
    rows = [["trial", "role", "index", "is_true"] + [f"f{i + 1}" for i in range(n)]]
    for k, t in enumerate(trials):
        if t.probe.size != n:
            raise FormatError("all trials must share the vector length")
        rows.append([str(k), "probe", "0", "false"] + [fmt(v) for v in t.probe])
        for g, vec in enumerate(t.gallery):
            rows.append([str(k), "gallery", str(g), str(g == t.true_index).lower()] + [fmt(v) for v in vec])
    return _csv_text(rows)


def loads_trials(text: str) -> list[MatchingTrial]:
    rows = _csv_rows(text)
    if not rows or rows[0][:4] != ["trial", "role", "index", "is_true"]:
        raise FormatError("trial CSV must start with 'trial,role,index,is_true,f1,...'")
    width = len(rows[0])
    grouped: dict[str, dict] = {}
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != width:
            raise FormatError(f"line {lineno}: expected {width} fields")
        where = f"line {lineno}"
        vec = [_num(v, where) for v in row[4:]]
        entry = grouped.setdefault(row[0], {"probe": None, "gallery": {}, "true": []})
        if row[1] == "probe":
            if entry["probe"] is not None:
                raise FormatError(f"{where}: trial {row[0]} has two probes")
            entry["probe"] = vec
        elif row[1] == "gallery":
            try:
                idx = int(row[2])
            except ValueError:
                raise FormatError(f"{where}: gallery index must be an integer") from None
            entry["gallery"][idx] = vec
            if _bool(row[3], where):
                entry["true"].append(idx)
        else:
            raise FormatError(f"{where}: role must be probe or gallery, got {row[1]!r}")
    trials = []
    for key, entry in grouped.items():
        if entry["probe"] is None or len(entry["true"]) != 1:
            raise FormatError(f"trial {key} needs exactly one probe and one true gallery item")
        gallery = entry["gallery"]
        if sorted(gallery) != list(range(len(gallery))):
            raise FormatError(f"trial {key}: gallery indices must be 0..G-1")
        trials.append(
            MatchingTrial(np.array(entry["probe"]), np.array([gallery[i] for i in range(len(gallery))]), entry["true"][0])
        )
    return trials


def dumps_frame_csv(frame) -> str:
    frame = np.asarray(frame, dtype=float)
    if frame.ndim != 2:
        raise FormatError("CSV frames must be 2-D grayscale")
    return _csv_text([[fmt(v) for v in row] for row in frame])


def loads_frame_csv(text: str) -> np.ndarray:
    rows = _csv_rows(text)
    if not rows or len({len(r) for r in rows}) != 1:
        raise FormatError("frame CSV must be a non-empty rectangular grid")
    return np.array([[_num(v, "frame") for v in r] for r in rows])


def dumps_pgm(frame, maxval: int = 255) -> str:
    """Plain (P2) PGM; intensities in [0, 1] are quantised to ``0..maxval``."""
    frame = np.asarray(frame, dtype=float)
    if frame.ndim != 2:
        raise FormatError("PGM frames must be 2-D grayscale")
    q = np.rint(np.clip(frame, 0.0, 1.0) * maxval).astype(int)
    h, w = q.shape
    body = "\n".join(" ".join(str(v) for v in row) for row in q)
    return f"P2\n{w} {h}\n{maxval}\n{body}\n"


def loads_pgm(data: bytes | str) -> np.ndarray:
    """Read a P2 (plain) or P5 (raw, 8/16-bit) PGM into intensities in [0, 1]."""
    if isinstance(data, str):
        data = data.encode("ascii")
    magic = data[:2]
    if magic not in (b"P2", b"P5"):
        raise FormatError("not a PGM file (expected P2 or P5)")
    # header tokens, skipping comments
    tokens, pos = [], 2
    while len(tokens) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError("truncated PGM header")
        tokens.append(data[start:pos])
    try:
        w, h, maxval = (int(t) for t in tokens)
    except ValueError:
        raise FormatError("bad PGM header") from None
    if w < 1 or h < 1 or not 0 < maxval < 65536:
        raise FormatError("bad PGM dimensions")
    if magic == b"P2":
        try:
            values = [int(t) for t in data[pos:].split()]
        except ValueError:
            raise FormatError("bad PGM pixel value") from None
        if len(values) != w * h:
            raise FormatError(f"expected {w * h} pixels, got {len(values)}")
        arr = np.array(values, dtype=float)
    else:
        raw = data[pos + 1 :]
        dtype = ">u2" if maxval > 255 else "u1"
        itemsize = 2 if maxval > 255 else 1
        if len(raw) < w * h * itemsize:
            raise FormatError("truncated PGM raster")
        arr = np.frombuffer(raw[: w * h * itemsize], dtype=dtype).astype(float)
    return (arr / maxval).reshape(h, w)


def write_frame(path, frame) -> Path:
    path = Path(path)
    if path.suffix.lower() == ".pgm":
        return atomic_write_text(path, dumps_pgm(frame))
    return atomic_write_text(path, dumps_frame_csv(frame))


def read_frame(path) -> np.ndarray:
    path = Path(path)
    if path.suffix.lower() == ".pgm":
        return loads_pgm(path.read_bytes())
    return loads_frame_csv(path.read_text(encoding="utf-8"))


# ---------------------------------------------------------------------------
# stimulus sets


def write_stimuli(directory, stimuli) -> list[Path]:
    """``stimuli.csv`` (flattened pixels, activation format) and ``labels.csv``."""
    directory = Path(directory)
    flat = ActivationMatrix(stimuli.ids, stimuli.images.reshape(len(stimuli), -1))
    out = [write_activations(directory / "stimuli.csv", flat)]
    if stimuli.labels is not None:
        rows = [["stimulus_id", "category"]] + [[s, str(int(c))] for s, c in zip(stimuli.ids, stimuli.labels)]
        out.append(atomic_write_text(directory / "labels.csv", _csv_text(rows)))
    return out


def read_stimuli(path):
    """Stimulus images from an activation-format CSV of square images (labels optional)."""
    from .search import StimulusSet

    path = Path(path)
    if path.is_dir():
        path = path / "stimuli.csv"
    flat = read_activations(path)
    side = int(round(np.sqrt(flat.n)))
    if side * side != flat.n:
        raise FormatError(f"{flat.n} pixels is not a square image")
    labels = None
    label_path = path.with_name("labels.csv")
    if label_path.exists():
        rows = _csv_rows(label_path.read_text(encoding="utf-8"))
        mapping = {r[0]: int(r[1]) for r in rows[1:]}
        try:
            labels = np.array([mapping[s] for s in flat.stimulus_ids])
        except KeyError as exc:
            raise FormatError(f"no label for stimulus {exc.args[0]!r}") from None
    return StimulusSet(flat.stimulus_ids, flat.values.reshape(flat.m, side, side), labels)


# ---------------------------------------------------------------------------
# manifests


@dataclass
class RunManifest:
    command: str
    tool_version: str
    config_hash: str = ""
    master_seed: int | None = None
    started: str = ""
    finished: str = ""
    inputs: dict[str, str] = field(default_factory=dict)
    outputs: list[str] = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "RunManifest":
        try:
            return cls(**json.loads(text))
        except (ValueError, TypeError) as exc:
            raise FormatError(f"bad manifest: {exc}") from None


def config_hash(config: dict) -> str:
    canonical = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def write_manifest(path, manifest: RunManifest) -> Path:
    return atomic_write_text(path, manifest.to_json())


def read_manifest(path) -> RunManifest:
    return RunManifest.from_json(Path(path).read_text(encoding="utf-8"))
