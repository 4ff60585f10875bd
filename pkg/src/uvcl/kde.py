"""Gaussian kernel density, mean-shift mode seeking and mode merging.

The kernel is the unnormalised Gaussian ``exp(-|x - x_i|^2 / (2 h^2))``.
Normalising constants cancel both in the mean-shift update and in the
ridge test between two modes, so they are never computed.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _backend
from .errors import ConfigError, DataError, IsolatedSeedError


def check_bandwidth(h: float) -> float:
    h = float(h)
    if not (math.isfinite(h) and h > 0):
        raise ConfigError("bandwidth must be positive")
    return h


def _as_data(data) -> np.ndarray:
    x = np.asarray(data, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2:
        raise DataError(f"data must be a list of vectors, got shape {x.shape}")
    return x


@dataclass
class Mode:
    center: np.ndarray
    support_count: int = 0
    converged_in: int = 0
    density: float = 0.0


@dataclass
class MeanShiftConfig:
    """Mean-shift stopping and seeding rules.

    ``convergence_eps=None`` means ``1e-4 * h``. ``seed_strategy`` is either
    ``"every-point"`` or ``"subsample"``; the latter seeds from a random
    ``subsample_fraction`` of the data drawn with ``seed``.
    """

    max_iterations: int = 300
    convergence_eps: float | None = None
    merge_samples: int = 21
    seed_strategy: str = "every-point"
    subsample_fraction: float = 1.0
    seed: int = 0
    merge_tolerance: float = 1e-6

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ConfigError("max_iterations must be >= 1")
        if self.convergence_eps is not None and not self.convergence_eps > 0:
            raise ConfigError("convergence_eps must be positive")
        if self.merge_samples < 3:
            raise ConfigError("merge_samples must be >= 3")
        if self.seed_strategy not in ("every-point", "subsample"):
            raise ConfigError(f"unknown seed_strategy {self.seed_strategy!r}")
        if not 0 < self.subsample_fraction <= 1:
            raise ConfigError("subsample_fraction must be in (0, 1]")

    def eps_for(self, h: float) -> float:
        return 1e-4 * h if self.convergence_eps is None else self.convergence_eps


def kde_density(x, data, h: float) -> float:
    """Sum of Gaussian kernels of width ``h`` centred on ``data``, at ``x``."""
    h = check_bandwidth(h)
    data = _as_data(data)
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    if x.shape != (data.shape[1],):
        raise DataError(f"dimension mismatch: point {x.shape}, data dim {data.shape[1]}")
    return float(_backend.kernels.kde_density_many(x[None, :], data, h)[0])


def kde_density_many(points, data, h: float) -> np.ndarray:
    h = check_bandwidth(h)
    data = _as_data(data)
    points = _as_data(points)
    if points.shape[1] != data.shape[1]:
        raise DataError("dimension mismatch between points and data")
    return _backend.kernels.kde_density_many(points, data, h)


def mean_shift_step(mu, data, h: float) -> np.ndarray:
    """One Gaussian mean-shift update: the kernel-weighted mean of ``data``.

    Raises :class:`IsolatedSeedError` when every weight underflows to zero.
    """
    h = check_bandwidth(h)
    data = _as_data(data)
    mu = np.atleast_1d(np.asarray(mu, dtype=np.float64))
    if mu.shape != (data.shape[1],):
        raise DataError("dimension mismatch")
    diff = data - mu
    w = np.exp(-np.einsum("ij,ij->i", diff, diff) / (2.0 * h * h))
    den = w.sum()
    if den == 0.0:
        raise IsolatedSeedError("isolated seed: all kernel weights underflowed")
    return (w @ data) / den


def _canonical_order(centers: np.ndarray) -> np.ndarray:
    # first coordinate, then the remaining ones lexicographically
    return np.lexsort(centers.T[::-1])


def merge_modes(a: Mode, b: Mode, data, h: float, cfg: MeanShiftConfig) -> Mode | None:
    """Ridge test between two candidate modes.

    Returns ``None`` when the density dips below both endpoints somewhere on
    the joining segment (the modes are distinct). Otherwise returns the
    higher-density mode as the merged representative.
    """
    h = check_bandwidth(h)
    data = _as_data(data)
    ca, cb = np.asarray(a.center, float), np.asarray(b.center, float)
    if np.linalg.norm(ca - cb) < cfg.eps_for(h):
        return a if _density_of(a, data, h) >= _density_of(b, data, h) else b
    t = np.linspace(0.0, 1.0, cfg.merge_samples)
    seg = ca[None, :] + t[:, None] * (cb - ca)[None, :]
    dens = _backend.kernels.kde_density_many(seg, data, h)
    floor = min(dens[0], dens[-1]) * (1.0 - cfg.merge_tolerance)
    if np.any(dens[1:-1] < floor):
        return None
    return a if dens[0] >= dens[-1] else b


def _density_of(mode: Mode, data, h) -> float:
    return float(_backend.kernels.kde_density_many(np.asarray(mode.center, float)[None, :], data, h)[0])


def find_modes(data, h: float, cfg: MeanShiftConfig | None = None) -> list[Mode]:
    modes, _ = find_modes_with_stats(data, h, cfg)
    return modes


def find_modes_with_stats(data, h: float, cfg: MeanShiftConfig | None = None):
    """Run mean-shift from every seed and reduce the endpoints to modes.

    Returns ``(modes, merged)`` where ``merged`` counts candidates absorbed
    by the ridge test. Modes come back in canonical order (first coordinate,
    then lexicographic) with ``support_count`` from :func:`assign_to_modes`.
    """
    cfg = cfg or MeanShiftConfig()
    h = check_bandwidth(h)
    data = _as_data(data)
    n = data.shape[0]
    if n == 0:
        raise DataError("find_modes needs at least one data point")
    if not np.all(np.isfinite(data)):
        raise DataError("non-finite value in data")

    if cfg.seed_strategy == "subsample" and cfg.subsample_fraction < 1.0:
        k = max(1, int(round(cfg.subsample_fraction * n)))
        pick = np.sort(np.random.default_rng(cfg.seed).choice(n, size=k, replace=False))
        seeds = data[pick]
    else:
        seeds = data
    ends, iters, _isolated = _backend.kernels.mean_shift_seeds(
        seeds, data, h, cfg.eps_for(h), cfg.max_iterations
    )
    dens = _backend.kernels.kde_density_many(ends, data, h)

    # Highest density first; ties broken by canonical position so the
    # outcome does not depend on the order of the input rows.
    canon = np.empty(len(ends), dtype=np.int64)
    canon[_canonical_order(ends)] = np.arange(len(ends))
    order = np.lexsort((canon, -dens))

    radius = h / 2.0
    kept: list[Mode] = []
    kept_centers = np.empty((0, data.shape[1]))
    for i in order:
        if kept and np.min(np.linalg.norm(kept_centers - ends[i], axis=1)) < radius:
            j = int(np.argmin(np.linalg.norm(kept_centers - ends[i], axis=1)))
            kept[j].support_count += 1
            continue
        kept.append(Mode(ends[i].copy(), 1, int(iters[i]), float(dens[i])))
        kept_centers = np.vstack([kept_centers, ends[i]])

    accepted: list[Mode] = []
    merged = 0
    for cand in kept:  # already in descending density
        for acc in accepted:
            if merge_modes(acc, cand, data, h, cfg) is not None:
                acc.support_count += cand.support_count
                merged += 1
                break
        else:
            accepted.append(cand)

    centers = np.array([m.center for m in accepted])
    modes = [accepted[i] for i in _canonical_order(centers)]
    assign_to_modes(data, modes)
    return modes, merged


def assign_to_modes(data, modes: list[Mode]) -> np.ndarray:
    """Index of the nearest mode for every datum (ties go to the lower index).

    Also overwrites each mode's ``support_count``.
    """
    if not modes:
        raise DataError("assign_to_modes needs at least one mode")
    data = _as_data(data)
    centers = np.array([np.asarray(m.center, float) for m in modes])
    if centers.shape[1] != data.shape[1]:
        raise DataError("dimension mismatch between data and modes")
    idx, _ = _backend.kernels.nearest_rows(data, centers)
    counts = np.bincount(idx, minlength=len(modes))
    for m, c in zip(modes, counts):
        m.support_count = int(c)
    return idx
