"""Feature files, stream manifests and synthetic task streams.

Binary layout of a feature file (all little-endian)::

    magic "UVCL" | version u32 = 1 | count u64 | dim u32 | count*dim f32, row-major

Ground-truth labels never live in the payload. When present they go to a
sidecar ``<path>.labels.csv`` holding one integer per line.
"""
from __future__ import annotations

import json
import math
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, DataError, FeatureFileError

MAGIC = b"UVCL"
VERSION = 1
_HEADER = struct.Struct("<4sIQI")
LABEL_SUFFIX = ".labels.csv"


@dataclass(frozen=True)
class FeatureRecord:
    vector: np.ndarray
    hidden_label: int | None = None
    source_id: str = ""


@dataclass
class TaskBatch:
    """One task's payload: an ``(n, d)`` float64 matrix plus optional labels.

    ``labels`` is evaluation-only metadata. Learners receive
    :meth:`without_labels` copies.
    """

    task_index: int
    features: np.ndarray
    labels: np.ndarray | None = None
    source_ids: list[str] | None = None

    def __post_init__(self):
        x = np.asarray(self.features, dtype=np.float64)
        if x.ndim != 2:
            raise DataError(f"features must be a 2-d matrix, got shape {x.shape}")
        if x.shape[0] == 0:
            raise DataError("empty batch")
        if x.shape[1] == 0:
            raise DataError("dimension zero")
        if not np.all(np.isfinite(x)):
            raise DataError("non-finite value in features")
        self.features = x
        if self.labels is not None:
            y = np.asarray(self.labels)
            if y.shape != (x.shape[0],):
                raise DataError(
                    f"label count {y.size} does not match record count {x.shape[0]}"
                )
            if y.size and not np.issubdtype(y.dtype, np.integer):
                if not np.all(y == np.round(y)):
                    raise DataError("labels must be integers")
            self.labels = y.astype(np.int64)
        if self.source_ids is not None and len(self.source_ids) != x.shape[0]:
            raise DataError("source_ids length does not match record count")

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    @property
    def records(self) -> list[FeatureRecord]:
        ids = self.source_ids or [""] * len(self)
        labels = self.labels if self.labels is not None else [None] * len(self)
        return [
            FeatureRecord(v.copy(), None if lab is None else int(lab), sid)
            for v, lab, sid in zip(self.features, labels, ids)
        ]

    @classmethod
    def from_records(cls, task_index: int, records: Sequence[FeatureRecord]) -> "TaskBatch":
        if len(records) == 0:
            raise DataError("empty batch")
        dims = {np.asarray(r.vector).shape for r in records}
        if len(dims) != 1:
            raise DataError(f"records have mixed dimensions: {sorted(dims)}")
        has_label = [r.hidden_label is not None for r in records]
        if any(has_label) and not all(has_label):
            raise DataError("hidden_label must be present for all records or none")
        x = np.stack([np.asarray(r.vector, dtype=np.float64) for r in records])
        y = np.array([r.hidden_label for r in records], dtype=np.int64) if all(has_label) else None
        return cls(task_index, x, y, [r.source_id for r in records])

    def without_labels(self) -> "TaskBatch":
        return TaskBatch(self.task_index, self.features, None, self.source_ids)


# --------------------------------------------------------------------------
# Feature files


def label_path(path: str | os.PathLike) -> Path:
    return Path(str(path) + LABEL_SUFFIX)


def write_features(batch: TaskBatch, path: str | os.PathLike) -> None:
    """Write ``batch`` to ``path``; labels (if any) go to the sidecar."""
    x = np.asarray(batch.features)
    if x.ndim != 2 or x.shape[0] == 0:
        raise DataError("empty batch")
    if x.shape[1] == 0:
        raise DataError("dimension zero")
    if not np.all(np.isfinite(x)):
        raise DataError("non-finite value in features")
    path = Path(path)
    payload = np.ascontiguousarray(x, dtype="<f4")
    if not np.all(np.isfinite(payload)):
        raise DataError("non-finite value after float32 conversion")
    try:
        with open(path, "wb") as fh:
            fh.write(_HEADER.pack(MAGIC, VERSION, x.shape[0], x.shape[1]))
            fh.write(payload.tobytes())
        side = label_path(path)
        if batch.labels is not None:
            side.write_text("".join(f"{int(v)}\n" for v in batch.labels))
        elif side.exists():
            side.unlink()
    except OSError as exc:
        raise DataError(f"cannot write {path}: {exc}") from exc


def _read_labels(path: Path, count: int) -> np.ndarray | None:
    side = label_path(path)
    if not side.exists():
        return None
    lines = [ln.strip() for ln in side.read_text().splitlines() if ln.strip()]
    if len(lines) != count:
        raise FeatureFileError(
            f"{side}: {len(lines)} labels for {count} records"
        )
    try:
        return np.array([int(ln) for ln in lines], dtype=np.int64)
    except ValueError as exc:
        raise FeatureFileError(f"{side}: {exc}") from exc


def _read_csv(path: Path) -> np.ndarray:
    try:
        x = np.loadtxt(path, delimiter=",", dtype=np.float64, ndmin=2)
    except ValueError as exc:
        raise FeatureFileError(f"{path}: {exc}") from exc
    return x


def read_features(
    path: str | os.PathLike,
    task_index: int = 1,
    expected_dim: int | None = None,
) -> TaskBatch:
    """Read a binary feature file, or a headerless CSV matrix as a fallback."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise FeatureFileError(f"cannot read {path}: {exc}") from exc

    if raw[:4] != MAGIC:
        if path.suffix.lower() == ".csv":
            x = _read_csv(path)
        else:
            raise FeatureFileError(f"{path}: bad magic {raw[:4]!r}")
    else:
        if len(raw) < _HEADER.size:
            raise FeatureFileError(f"{path}: truncated header")
        _, version, count, dim = _HEADER.unpack_from(raw)
        if version != VERSION:
            raise FeatureFileError(f"{path}: unsupported version {version}")
        if dim == 0:
            raise FeatureFileError(f"{path}: dimension zero")
        need = count * dim * 4
        have = len(raw) - _HEADER.size
        if need > have:
            raise FeatureFileError(
                f"{path}: truncated payload ({have} bytes, header declares {need})"
            )
        x = np.frombuffer(raw, dtype="<f4", count=count * dim, offset=_HEADER.size)
        x = x.reshape(count, dim).astype(np.float64)

    if expected_dim is not None and x.shape[1] != expected_dim:
        raise DataError(
            f"{path}: dimension mismatch (file {x.shape[1]}, manifest {expected_dim})"
        )
    labels = _read_labels(path, x.shape[0])
    try:
        return TaskBatch(task_index, x, labels)
    except DataError as exc:
        raise FeatureFileError(f"{path}: {exc}") from exc


# --------------------------------------------------------------------------
# Synthetic streams


def make_class_centers(
    num_classes: int, dim: int, separation: float, seed: int = 0
) -> np.ndarray:
    """Class centers with pairwise distance ``separation`` (or at least that).

    For ``dim >= num_classes`` the centers are a randomly rotated scaled
    simplex, so every pair is exactly ``separation`` apart up to rounding.
    Otherwise centers are rejection-sampled. Values are rounded to float32 so
    that they survive a round trip through a feature file.
    """
    if num_classes < 1 or dim < 1:
        raise ConfigError("num_classes and dim must be positive")
    if separation <= 0:
        raise ConfigError("separation must be positive")
    rng = np.random.default_rng(seed)
    if dim >= num_classes:
        q, _ = np.linalg.qr(rng.standard_normal((dim, num_classes)))
        centers = q.T * (separation / math.sqrt(2.0))
    else:
        centers = np.empty((0, dim))
        tries = 0
        while centers.shape[0] < num_classes:
            tries += 1
            if tries > 100_000:
                raise ConfigError("could not place class centers; lower separation")
            c = rng.standard_normal(dim) * separation * math.sqrt(num_classes)
            if centers.shape[0] == 0 or np.min(np.linalg.norm(centers - c, axis=1)) >= separation:
                centers = np.vstack([centers, c])
    return centers.astype(np.float32).astype(np.float64)


def default_schedule(num_classes: int, tasks: int) -> list[list[int]]:
    """Task ``t`` (1-based) activates classes ``0 .. 2t-1``."""
    return [list(range(min(2 * t, num_classes))) for t in range(1, tasks + 1)]


@dataclass
class SyntheticSpec:
    num_classes: int
    dim: int
    class_centers: np.ndarray
    class_stddev: float
    tasks: int
    examples_per_task: int = 256
    classes_per_task_schedule: list[list[int]] | None = None
    seed: int = 0
    test_examples_per_class: int = 50

    def __post_init__(self):
        if self.tasks < 1:
            raise ConfigError("tasks must be >= 1")
        if self.num_classes < 1 or self.dim < 1:
            raise ConfigError("num_classes and dim must be >= 1")
        if self.examples_per_task < 1:
            raise ConfigError("examples_per_task must be >= 1")
        if self.test_examples_per_class < 0:
            raise ConfigError("test_examples_per_class must be >= 0")
        if not (math.isfinite(self.class_stddev) and self.class_stddev >= 0):
            raise ConfigError("class_stddev must be finite and non-negative")
        c = np.asarray(self.class_centers, dtype=np.float64)
        if c.shape != (self.num_classes, self.dim):
            raise ConfigError(
                f"class_centers shape {c.shape} != ({self.num_classes}, {self.dim})"
            )
        if not np.all(np.isfinite(c)):
            raise ConfigError("class_centers must be finite")
        for i in range(len(c)):
            if np.any(np.all(c[i + 1:] == c[i], axis=1)):
                raise ConfigError("class centers must be pairwise distinct")
        self.class_centers = c
        if self.classes_per_task_schedule is None:
            self.classes_per_task_schedule = default_schedule(self.num_classes, self.tasks)
        sched = [list(map(int, s)) for s in self.classes_per_task_schedule]
        if len(sched) != self.tasks:
            raise ConfigError(f"schedule has {len(sched)} entries for {self.tasks} tasks")
        for s in sched:
            if not s:
                raise ConfigError("schedule entry activates no class")
            bad = [k for k in s if not 0 <= k < self.num_classes]
            if bad:
                raise ConfigError(f"schedule references unknown class {bad[0]}")
        missing = set(range(self.num_classes)) - {k for s in sched for k in s}
        if missing:
            raise ConfigError(f"schedule never activates classes {sorted(missing)}")
        self.classes_per_task_schedule = sched

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticSpec":
        d = dict(d)
        sep = d.pop("separation", None)
        centers_seed = d.pop("centers_seed", None)
        if d.get("class_centers") is None:
            if sep is None:
                raise ConfigError("synthetic spec needs class_centers or separation")
            seed = d.get("seed", 0) if centers_seed is None else centers_seed
            d["class_centers"] = make_class_centers(d["num_classes"], d["dim"], sep, seed)
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown synthetic spec fields: {sorted(unknown)}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def to_dict(self) -> dict:
        return {
            "num_classes": self.num_classes,
            "dim": self.dim,
            "class_centers": self.class_centers.tolist(),
            "class_stddev": self.class_stddev,
            "tasks": self.tasks,
            "examples_per_task": self.examples_per_task,
            "classes_per_task_schedule": self.classes_per_task_schedule,
            "seed": self.seed,
            "test_examples_per_class": self.test_examples_per_class,
        }


def _f32(x: np.ndarray) -> np.ndarray:
    # Keep in-memory streams identical to what a feature file would return.
    return x.astype(np.float32).astype(np.float64)


def generate_synthetic_stream(spec: SyntheticSpec) -> list[TaskBatch]:
    rng = np.random.default_rng(spec.seed)
    out = []
    for t, active in enumerate(spec.classes_per_task_schedule, start=1):
        n = spec.examples_per_task
        cls = rng.choice(np.asarray(active), size=n)
        noise = rng.standard_normal((n, spec.dim))
        x = _f32(spec.class_centers[cls] + spec.class_stddev * noise)
        ids = [f"synthetic:t{t}:{i}" for i in range(n)]
        out.append(TaskBatch(t, x, cls.astype(np.int64), ids))
    return out


def generate_test_set(spec: SyntheticSpec) -> TaskBatch:
    """Held-out draw covering every class, independent of the task draws."""
    if spec.test_examples_per_class < 1:
        raise ConfigError("test_examples_per_class must be >= 1 for a test set")
    rng = np.random.default_rng([spec.seed, 0x7E57])
    per = spec.test_examples_per_class
    cls = np.repeat(np.arange(spec.num_classes), per)
    noise = rng.standard_normal((cls.size, spec.dim))
    x = _f32(spec.class_centers[cls] + spec.class_stddev * noise)
    return TaskBatch(0, x, cls.astype(np.int64), [f"synthetic:test:{i}" for i in range(cls.size)])


def split_tasks(
    records: Sequence[FeatureRecord] | TaskBatch, per_task: int, seed: int
) -> list[TaskBatch]:
    """Shuffle ``records`` with ``seed`` and cut them into chunks of ``per_task``.

    The last chunk keeps the remainder, so no record is ever dropped.
    """
    if per_task < 1:
        raise ConfigError("per_task must be >= 1")
    if isinstance(records, TaskBatch):
        records = records.records
    n = len(records)
    if n == 0:
        return []
    perm = np.random.default_rng(seed).permutation(n)
    shuffled = [records[i] for i in perm]
    return [
        TaskBatch.from_records(k + 1, shuffled[start:start + per_task])
        for k, start in enumerate(range(0, n, per_task))
    ]


# --------------------------------------------------------------------------
# Manifests


@dataclass
class StreamManifest:
    dimension: int
    tasks: list[Path]
    seed: int | None = None
    synthetic: SyntheticSpec | None = None
    test: Path | None = None
    base_dir: Path = field(default_factory=Path)

    def task_paths(self) -> list[Path]:
        return [self.base_dir / p for p in self.tasks]

    def test_path(self) -> Path | None:
        return None if self.test is None else self.base_dir / self.test

    def load_tasks(self) -> list[TaskBatch]:
        return [
            read_features(p, task_index=k, expected_dim=self.dimension)
            for k, p in enumerate(self.task_paths(), start=1)
        ]

    def load_test(self) -> TaskBatch | None:
        p = self.test_path()
        return None if p is None else read_features(p, 0, expected_dim=self.dimension)


def save_manifest(manifest: StreamManifest, path: str | os.PathLike) -> None:
    doc = {
        "dimension": manifest.dimension,
        "tasks": [str(p) for p in manifest.tasks],
        "seed": manifest.seed,
        "synthetic": None if manifest.synthetic is None else manifest.synthetic.to_dict(),
        "test": None if manifest.test is None else str(manifest.test),
    }
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def load_manifest(path: str | os.PathLike) -> StreamManifest:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot load manifest {path}: {exc}") from exc
    for key in ("dimension", "tasks"):
        if key not in doc:
            raise DataError(f"manifest {path} lacks '{key}'")
    if not doc["tasks"]:
        raise DataError(f"manifest {path} lists no tasks")
    synth = doc.get("synthetic")
    return StreamManifest(
        dimension=int(doc["dimension"]),
        tasks=[Path(p) for p in doc["tasks"]],
        seed=doc.get("seed"),
        synthetic=None if synth is None else SyntheticSpec.from_dict(synth),
        test=None if doc.get("test") is None else Path(doc["test"]),
        base_dir=path.parent,
    )


def check_dimensions(batches: Iterable[TaskBatch]) -> int:
    dims = {b.dim for b in batches}
    if len(dims) != 1:
        raise DataError(f"inconsistent dimensions across tasks: {sorted(dims)}")
    return dims.pop()
