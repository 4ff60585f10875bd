"""Continual cluster state: pseudo-labelled clusters and their replay buffers."""
from __future__ import annotations

import json
import math
import os
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import _backend
from .errors import ConfigError, DataError, Theta1UndefinedError
from .kde import Mode


class ReplayBuffer:
    """FIFO store of exemplar vectors; the oldest are evicted first."""

    def __init__(self, capacity: int = 20, items: Sequence[np.ndarray] = ()):
        if capacity < 0:
            raise ConfigError("buffer capacity must be >= 0")
        self.capacity = int(capacity)
        self._items: deque[np.ndarray] = deque(maxlen=self.capacity)
        self.extend(items)

    def extend(self, items) -> None:
        for v in items:
            self._items.append(np.array(v, dtype=np.float64))

    @property
    def items(self) -> list[np.ndarray]:
        return list(self._items)

    def __len__(self) -> int:
        return len(self._items)


@dataclass
class Cluster:
    id: int
    center: np.ndarray
    buffer: ReplayBuffer
    created_at_task: int


@dataclass
class Registry:
    dimension: int
    capacity: int = 20
    clusters: list[Cluster] = field(default_factory=list)
    theta1: float | None = None
    next_id: int = 0
    theta1_fallback: bool = False

    def __post_init__(self):
        if self.dimension < 1:
            raise ConfigError("dimension must be >= 1")
        if self.capacity < 0:
            raise ConfigError("buffer capacity must be >= 0")

    def __len__(self) -> int:
        return len(self.clusters)

    @property
    def ids(self) -> list[int]:
        return [c.id for c in self.clusters]

    def centers(self) -> np.ndarray:
        if not self.clusters:
            return np.empty((0, self.dimension))
        return np.array([c.center for c in self.clusters])

    def get(self, cluster_id: int) -> Cluster:
        for c in self.clusters:
            if c.id == cluster_id:
                return c
        raise KeyError(f"unknown cluster id {cluster_id}")

    def new_cluster(self, center, task_index: int) -> Cluster:
        center = np.array(center, dtype=np.float64)
        if center.shape != (self.dimension,):
            raise DataError(f"center has shape {center.shape}, expected ({self.dimension},)")
        if not np.all(np.isfinite(center)):
            raise DataError("non-finite cluster center")
        c = Cluster(self.next_id, center, ReplayBuffer(self.capacity), task_index)
        self.next_id += 1
        self.clusters.append(c)
        return c

    def buffered_count(self) -> int:
        return sum(len(c.buffer) for c in self.clusters)

    # -- checkpoints -------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "dimension": self.dimension,
            "capacity": self.capacity,
            "theta1": self.theta1,
            "theta1_fallback": self.theta1_fallback,
            "next_id": self.next_id,
            "clusters": [
                {
                    "id": c.id,
                    "center": c.center.tolist(),
                    "created_at_task": c.created_at_task,
                    "buffer": [v.tolist() for v in c.buffer.items],
                }
                for c in self.clusters
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Registry":
        reg = cls(
            dimension=int(d["dimension"]),
            capacity=int(d.get("capacity", 20)),
            theta1=d.get("theta1"),
            next_id=int(d["next_id"]),
            theta1_fallback=bool(d.get("theta1_fallback", False)),
        )
        for c in d["clusters"]:
            reg.clusters.append(
                Cluster(
                    int(c["id"]),
                    np.asarray(c["center"], dtype=np.float64),
                    ReplayBuffer(reg.capacity, [np.asarray(v, float) for v in c["buffer"]]),
                    int(c["created_at_task"]),
                )
            )
        return reg

    def save(self, path: str | os.PathLike) -> None:
        Path(path).write_text(json.dumps(self.to_dict()) + "\n")

    @classmethod
    def load(cls, path: str | os.PathLike) -> "Registry":
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except FileNotFoundError as exc:
            raise DataError(f"checkpoint not found: {path}") from exc
        except (KeyError, ValueError, TypeError) as exc:
            raise DataError(f"malformed checkpoint {path}: {exc}") from exc


def estimate_theta1(registry: Registry) -> float:
    """Largest pairwise distance between cluster centers.

    The value is stored on the registry the first time and reused afterwards.
    """
    if registry.theta1 is not None:
        return registry.theta1
    c = registry.centers()
    if len(c) < 2:
        raise Theta1UndefinedError("theta1 undefined: fewer than 2 clusters")
    best = 0.0
    for i in range(len(c) - 1):
        best = max(best, float(np.max(np.linalg.norm(c[i + 1:] - c[i], axis=1))))
    registry.theta1 = best
    return best


def novelty_kde(x, registry: Registry):
    """``("known", cluster_id)`` if the nearest center is within theta1, else ``("novel", None)``."""
    if registry.theta1 is None:
        raise Theta1UndefinedError("theta1 is not set")
    x = np.asarray(x, dtype=np.float64)
    idx, d2 = _backend.kernels.nearest_rows(x[None, :], registry.centers())
    if math.sqrt(d2[0]) > registry.theta1:
        return ("novel", None)
    return ("known", registry.clusters[int(idx[0])].id)


def novelty_kde_many(x, registry: Registry) -> np.ndarray:
    """Boolean novelty mask for the rows of ``x``."""
    if registry.theta1 is None:
        raise Theta1UndefinedError("theta1 is not set")
    _, d2 = _backend.kernels.nearest_rows(np.asarray(x, float), registry.centers())
    return np.sqrt(d2) > registry.theta1


def push_exemplars(cluster_id: int, items, registry: Registry) -> None:
    try:
        cluster = registry.get(cluster_id)
    except KeyError as exc:
        raise DataError(str(exc)) from exc
    cluster.buffer.extend(items)


def plan_matches(modes: Sequence[Mode], registry: Registry) -> list[int | None]:
    """Greedy nearest matching of modes to existing clusters, without mutating.

    All (mode, cluster) pairs within theta1 are visited in ascending distance
    (ties: lower mode index, then lower cluster id); a pair is taken when
    neither side is claimed yet. Unmatched modes map to ``None``.
    """
    out: list[int | None] = [None] * len(modes)
    if not modes or not registry.clusters:
        return out
    limit = math.inf if registry.theta1 is None else registry.theta1
    centers = registry.centers()
    pairs = []
    for i, m in enumerate(modes):
        dist = np.linalg.norm(centers - np.asarray(m.center, float), axis=1)
        for j, dj in enumerate(dist):
            if dj <= limit:
                pairs.append((float(dj), i, registry.clusters[j].id))
    pairs.sort()
    taken: set[int] = set()
    for _, i, cid in pairs:
        if out[i] is None and cid not in taken:
            out[i] = cid
            taken.add(cid)
    return out


def match_modes_to_clusters(
    modes: Sequence[Mode], registry: Registry, task_index: int = 0
) -> list[int]:
    """Map each mode to a cluster id, creating clusters for unmatched modes.

    Matched clusters move their center to the mode center. New ids are issued
    in mode order.
    """
    plan = plan_matches(modes, registry)
    ids = []
    for m, cid in zip(modes, plan):
        if cid is None:
            cid = registry.new_cluster(m.center, task_index).id
        else:
            registry.get(cid).center = np.array(m.center, dtype=np.float64)
        ids.append(cid)
    return ids


def memory_snapshot(registry: Registry) -> list[tuple[np.ndarray, int]]:
    return [(v.copy(), c.id) for c in registry.clusters for v in c.buffer.items]


def memory_arrays(registry: Registry) -> tuple[np.ndarray, np.ndarray]:
    """The snapshot as an ``(n, d)`` matrix and an id vector."""
    snap = memory_snapshot(registry)
    if not snap:
        return np.empty((0, registry.dimension)), np.empty(0, dtype=np.int64)
    return np.array([v for v, _ in snap]), np.array([c for _, c in snap], dtype=np.int64)
