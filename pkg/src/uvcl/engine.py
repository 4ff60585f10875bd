"""The continual loop for both variants and its per-task reports.

``kde``      mean-shift over memory + new data, modes matched to clusters
             within theta1, nearest-center prediction.
``kde_rbf``  the same clustering for task 1, then a linear head whose
             softmax confidence (theta2) gates new data; novel samples are
             clustered separately and spawn new clusters.
"""
from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import _backend
from .errors import ConfigError, DataError, Theta1UndefinedError
from .head import (
    LinearHead,
    TrainConfig,
    expand_head,
    novelty_rbf_many,
    predict,
    train,
)
from .ingest import (
    StreamManifest,
    SyntheticSpec,
    TaskBatch,
    check_dimensions,
    generate_synthetic_stream,
    generate_test_set,
)
from .kde import MeanShiftConfig, assign_to_modes, check_bandwidth, find_modes_with_stats
from .metrics import AccuracyTrace, acacc, bwf, cluster_accuracy, fwf
from .registry import (
    Registry,
    estimate_theta1,
    match_modes_to_clusters,
    memory_arrays,
    novelty_kde_many,
    plan_matches,
    push_exemplars,
)

log = logging.getLogger("uvcl.engine")

VARIANTS = ("kde", "kde_rbf")

# tags that separate the per-task random streams
_EXEMPLARS, _INIT, _EXPAND, _TRAIN = 1, 2, 3, 4


@dataclass
class EngineConfig:
    bandwidth: float
    variant: str = "kde_rbf"
    theta2: float = 0.3
    buffer_capacity: int = 20
    train: TrainConfig = field(default_factory=TrainConfig)
    meanshift: MeanShiftConfig = field(default_factory=MeanShiftConfig)
    seed: int = 0
    eval_each_task: bool = True
    # Also flag samples whose KDE basin matches no known cluster (kde_rbf).
    support_gate: bool = True
    record_timing: bool = False

    def __post_init__(self):
        self.bandwidth = check_bandwidth(self.bandwidth)
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}")
        if not 0 < self.theta2 <= 1:
            raise ConfigError("theta2 must be in (0, 1]")
        if self.buffer_capacity < 0:
            raise ConfigError("buffer_capacity must be >= 0")
        self.train.theta2 = self.theta2

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TaskReport:
    task_index: int
    L_k: int
    cacc: float | None = None
    novel_count: int = 0
    merged_count: int = 0
    buffered: int = 0
    wall_time_ms: float | None = None

    def to_dict(self) -> dict:
        return {
            "k": self.task_index,
            "L_k": self.L_k,
            "cacc": self.cacc,
            "novel": self.novel_count,
            "merged": self.merged_count,
            "buffered": self.buffered,
            "ms": self.wall_time_ms,
        }


@dataclass
class RunReport:
    per_task: list[TaskReport]
    config: dict
    theta1: float | None
    theta1_fallback: bool = False
    acacc: float | None = None
    bwf: float | None = None
    fwf: float | None = None

    @property
    def trace(self) -> list[float | None]:
        return [t.cacc for t in self.per_task]

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "theta1": self.theta1,
            "theta1_fallback": self.theta1_fallback,
            "per_task": [t.to_dict() for t in self.per_task],
            "acacc": self.acacc,
            "bwf": self.bwf,
            "fwf": self.fwf,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    def trace_csv(self) -> str:
        rows = ["task,L_k,cacc"]
        for t in self.per_task:
            rows.append(f"{t.task_index},{t.L_k},{'' if t.cacc is None else repr(t.cacc)}")
        return "\n".join(rows) + "\n"


def _rng(cfg: EngineConfig, task: int, tag: int) -> np.random.Generator:
    return np.random.default_rng([cfg.seed, task, tag])


def _seed(cfg: EngineConfig, task: int, tag: int) -> int:
    return int(_rng(cfg, task, tag).integers(0, 2**63 - 1))


def _store_exemplars(registry: Registry, x: np.ndarray, labels: np.ndarray, rng) -> None:
    """Random subset of up to N samples per cluster, pushed in input order."""
    if registry.capacity == 0:
        return
    for cid in np.unique(labels):
        members = np.flatnonzero(labels == cid)
        if members.size > registry.capacity:
            members = np.sort(rng.choice(members, registry.capacity, replace=False))
        push_exemplars(int(cid), x[members], registry)


def _fix_theta1(registry: Registry, cfg: EngineConfig) -> None:
    if registry.theta1 is not None:
        return
    try:
        estimate_theta1(registry)
    except Theta1UndefinedError:
        registry.theta1 = 2.0 * cfg.bandwidth
        registry.theta1_fallback = True
        log.warning("theta1 undefined after task 1 (one cluster); using 2h=%g", registry.theta1)


def _check_batch(registry: Registry, batch: TaskBatch) -> np.ndarray:
    if batch.dim != registry.dimension:
        raise DataError(
            f"task {batch.task_index}: dimension {batch.dim} != registry {registry.dimension}"
        )
    return batch.features


def _kde_task(registry: Registry, batch: TaskBatch, cfg: EngineConfig):
    x = _check_batch(registry, batch)
    k = batch.task_index
    novel = int(novelty_kde_many(x, registry).sum()) if registry.theta1 is not None else len(x)
    mem_x, _ = memory_arrays(registry)
    pool = np.vstack([mem_x, x])
    modes, merged = find_modes_with_stats(pool, cfg.bandwidth, cfg.meanshift)
    ids = match_modes_to_clusters(modes, registry, k)
    labels = np.asarray(ids, dtype=np.int64)[assign_to_modes(x, modes)]
    _store_exemplars(registry, x, labels, _rng(cfg, k, _EXEMPLARS))
    _fix_theta1(registry, cfg)
    report = TaskReport(k, len(registry), None, novel, merged, registry.buffered_count())
    return report, labels


def run_task_kde(registry: Registry, batch: TaskBatch, cfg: EngineConfig) -> TaskReport:
    report, _ = _kde_task(registry, batch, cfg)
    return report


def rbf_novelty(registry: Registry, head: LinearHead, x: np.ndarray, cfg: EngineConfig):
    """Novelty mask for a task under the kde_rbf variant.

    A sample is novel when its max softmax is below theta2 or, with
    ``support_gate``, when the mean-shift mode it falls into (over memory
    plus the task) is not matched to any existing cluster within theta1.
    The second test exists because the confidence of a linear softmax head
    grows away from its training data and never drops below ``1/L``.
    Returns ``(novel, predicted_ids, merged_count)``.
    """
    novel, top, _ = novelty_rbf_many(head, x, cfg.theta2)
    merged = 0
    if cfg.support_gate:
        mem_x, _ = memory_arrays(registry)
        modes, merged = find_modes_with_stats(np.vstack([mem_x, x]), cfg.bandwidth, cfg.meanshift)
        plan = plan_matches(modes, registry)
        unmatched = np.array([cid is None for cid in plan])
        novel = novel | unmatched[assign_to_modes(x, modes)]
    return novel, top, merged


def _train_cfg(cfg: EngineConfig, task: int) -> TrainConfig:
    t = TrainConfig(**{**asdict(cfg.train), "seed": _seed(cfg, task, _TRAIN)})
    return t


def run_task_rbf(registry: Registry, head: LinearHead | None, batch: TaskBatch, cfg: EngineConfig):
    """One task of the kde_rbf variant. Returns ``(report, head)``."""
    x = _check_batch(registry, batch)
    k = batch.task_index
    mem_x, mem_y = memory_arrays(registry)

    if head is None or len(registry) == 0:
        report, labels = _kde_task(registry, batch, cfg)
        head = LinearHead.random(len(registry), registry.dimension, _seed(cfg, k, _INIT))
    else:
        if head.L != len(registry):
            raise DataError(f"head has {head.L} rows for {len(registry)} clusters")
        novel, labels, merged = rbf_novelty(registry, head, x, cfg)
        labels = labels.astype(np.int64)
        if novel.any():
            xn = x[novel]
            modes, m2 = find_modes_with_stats(xn, cfg.bandwidth, cfg.meanshift)
            merged += m2
            new_ids = np.array([registry.new_cluster(m.center, k).id for m in modes])
            labels[novel] = new_ids[assign_to_modes(xn, modes)]
            head = expand_head(head, len(new_ids), _seed(cfg, k, _EXPAND))
        if not cfg.train.warm_start:
            head = LinearHead.random(len(registry), registry.dimension, _seed(cfg, k, _INIT))
        _store_exemplars(registry, x, labels, _rng(cfg, k, _EXEMPLARS))
        report = TaskReport(k, len(registry), None, int(novel.sum()), merged, registry.buffered_count())

    head, loss = train(head, np.vstack([mem_x, x]), np.concatenate([mem_y, labels]), _train_cfg(cfg, k))
    head.meta["last_loss"] = loss
    report.buffered = registry.buffered_count()
    return report, head


def evaluate_after_task(registry: Registry, head: LinearHead | None, test: TaskBatch) -> float:
    """Cluster accuracy on a labelled test set.

    Predicts with the head when one is given, otherwise by nearest center.
    """
    if test.labels is None:
        raise DataError("test set has no labels")
    if len(registry) == 0:
        raise DataError("nothing learned yet")
    if head is not None:
        pred = predict(head, test.features)
    else:
        idx, _ = _backend.kernels.nearest_rows(test.features, registry.centers())
        pred = np.asarray(registry.ids)[idx]
    return float(cluster_accuracy(pred, test.labels))


class ContinualLearner:
    """Holds the registry (and head) across a task sequence."""

    def __init__(self, cfg: EngineConfig, dimension: int):
        self.cfg = cfg
        self.registry = Registry(dimension, cfg.buffer_capacity)
        self.head: LinearHead | None = None

    def learn(self, batch: TaskBatch) -> TaskReport:
        t0 = time.perf_counter()
        batch = batch.without_labels()
        if self.cfg.variant == "kde":
            report = run_task_kde(self.registry, batch, self.cfg)
        else:
            report, self.head = run_task_rbf(self.registry, self.head, batch, self.cfg)
        if self.cfg.record_timing:
            report.wall_time_ms = (time.perf_counter() - t0) * 1e3
        return report

    def evaluate(self, test: TaskBatch) -> float:
        head = self.head if self.cfg.variant == "kde_rbf" else None
        return evaluate_after_task(self.registry, head, test)


def resolve_stream(stream, test: TaskBatch | None = None):
    """Turn a manifest, synthetic spec or list of batches into ``(tasks, test)``."""
    if isinstance(stream, SyntheticSpec):
        tasks = generate_synthetic_stream(stream)
        if test is None and stream.test_examples_per_class > 0:
            test = generate_test_set(stream)
    elif isinstance(stream, StreamManifest):
        tasks = stream.load_tasks()
        if test is None:
            test = stream.load_test()
    else:
        tasks = list(stream)
    if not tasks:
        raise DataError("stream has no tasks")
    dim = check_dimensions(tasks)
    if test is not None and test.dim != dim:
        raise DataError(f"test set dimension {test.dim} != stream dimension {dim}")
    return tasks, test


def run_stream(
    stream: Sequence[TaskBatch] | StreamManifest | SyntheticSpec,
    cfg: EngineConfig,
    test: TaskBatch | None = None,
    return_learner: bool = False,
):
    tasks, test = resolve_stream(stream, test)
    learner = ContinualLearner(cfg, tasks[0].dim)
    reports = []
    can_eval = test is not None and test.labels is not None
    for i, batch in enumerate(tasks):
        report = learner.learn(batch)
        last = i == len(tasks) - 1
        if can_eval and (cfg.eval_each_task or last):
            report.cacc = learner.evaluate(test)
        log.info(
            "task done",
            extra={"task": report.task_index, "L_k": report.L_k, "cacc": report.cacc,
                   "novel": report.novel_count},
        )
        reports.append(report)

    run = RunReport(reports, cfg.to_dict(), learner.registry.theta1, learner.registry.theta1_fallback)
    trace = [r.cacc for r in reports]
    if trace and all(v is not None for v in trace):
        tr = AccuracyTrace()
        for v in trace:
            tr.append(v)
        run.acacc = acacc(tr)
        if len(tr) >= 2:
            run.fwf = fwf(tr)
            run.bwf = bwf(tr)
    return (run, learner) if return_learner else run
