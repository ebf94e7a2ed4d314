"""Bandit environments (synthetic linear, CSV classification) and activation schedules."""
from __future__ import annotations

import csv
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError


@dataclass
class RoundContext:
    t: int
    arms: np.ndarray           # K x d
    expected: np.ndarray       # mean reward of each arm
    best_value: float


def unit_sphere(rng: np.random.Generator, n: int, k: int) -> np.ndarray:
    z = rng.standard_normal((n, k))
    norms = np.linalg.norm(z, axis=1, keepdims=True)
    norms[norms == 0.0] = 1.0
    return z / norms


class SyntheticEnv:
    """Linear rewards ``<x, theta*> + N(0, R^2)`` with arms on a unit sphere.

    When ``arm_rank < d`` the arms live on the unit sphere of a fixed random
    ``arm_rank``-dimensional subspace, and a default ``theta*`` is drawn from
    the same subspace.
    """

    def __init__(self, d: int, K: int, arm_rank: int | None = None, R: float = 0.1,
                 S_norm: float = 1.0, rng: np.random.Generator | None = None,
                 noise_rng: np.random.Generator | None = None, theta_star=None):
        self.d, self.K = d, K
        self.arm_rank = d if arm_rank is None else int(arm_rank)
        if not 1 <= self.arm_rank <= d:
            raise ValueError(f"arm_rank must lie in [1, {d}], got {self.arm_rank}")
        self.R = R
        self.rng = rng if rng is not None else np.random.default_rng()
        self.noise_rng = noise_rng if noise_rng is not None else np.random.default_rng()
        if self.arm_rank < d:
            q, _ = np.linalg.qr(self.rng.standard_normal((d, self.arm_rank)))
            self.basis = q
        else:
            self.basis = None
        if theta_star is None:
            # Drawn inside the arm subspace: a component orthogonal to every arm
            # is unobservable and would only shrink the reward gaps.
            if self.basis is None:
                theta_star = S_norm * unit_sphere(self.rng, 1, d)[0]
            else:
                theta_star = S_norm * (self.basis @ unit_sphere(self.rng, 1, self.arm_rank)[0])
        self.theta_star = np.asarray(theta_star, dtype=np.float64)

    def step(self, t: int) -> RoundContext:
        if t < 1:
            raise ValueError("rounds start at 1")
        if self.basis is None:
            arms = unit_sphere(self.rng, self.K, self.d)
        else:
            arms = unit_sphere(self.rng, self.K, self.arm_rank) @ self.basis.T
        expected = arms @ self.theta_star
        return RoundContext(t, arms, expected, float(expected.max()))

    def reward(self, ctx: RoundContext, index: int) -> float:
        mean = float(ctx.expected[index])
        if self.R == 0:
            return mean
        return mean + self.R * float(self.noise_rng.standard_normal())


class DatasetEnv:
    """One-vs-rest classification bandit over L2-normalised feature rows.

    Each round offers ``K`` rows sampled without replacement, at least one of
    which carries ``target_label``; pulling a target row pays 1, anything else 0.
    """

    max_retries = 100

    def __init__(self, features, labels, target_label=None, K: int = 10,
                 rng: np.random.Generator | None = None):
        self.features = np.asarray(features, dtype=np.float64)
        self.labels = np.asarray(labels)
        if self.features.ndim != 2 or self.features.shape[0] == 0:
            raise DataError("no feature rows")
        if target_label is None:
            target_label = Counter(self.labels.tolist()).most_common(1)[0][0]
        self.target_label = target_label
        self.is_target = self.labels == target_label
        if not self.is_target.any():
            raise DataError(f"no row carries target label {target_label!r}")
        self.K = K
        self.d = self.features.shape[1]
        self.rng = rng if rng is not None else np.random.default_rng()
        self.theta_star = None

    @property
    def n(self) -> int:
        return self.features.shape[0]

    def step(self, t: int) -> RoundContext:
        if t < 1:
            raise ValueError("rounds start at 1")
        k = min(self.K, self.n)
        for _ in range(self.max_retries):
            idx = self.rng.choice(self.n, size=k, replace=False)
            if self.is_target[idx].any():
                break
        else:
            raise DataError(f"no target row drawn in {self.max_retries} attempts")
        expected = self.is_target[idx].astype(np.float64)
        return RoundContext(t, self.features[idx], expected, 1.0)

    def reward(self, ctx: RoundContext, index: int) -> float:
        return float(ctx.expected[index])


def _is_number(cell: str) -> bool:
    try:
        float(cell)
        return True
    except ValueError:
        return False


def load_dataset_csv(path, K: int = 10, rng=None) -> DatasetEnv:
    """Parse a comma-separated file whose last column is the label.

    A first row with any non-numeric feature cell is taken as a header.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    if not rows:
        raise DataError(f"{path}: empty file")
    if not all(_is_number(c) for c in rows[0][:-1]):
        rows = rows[1:]
        if not rows:
            raise DataError(f"{path}: header only")
    width = len(rows[0])
    if width < 2:
        raise DataError(f"{path}: need at least one feature column and a label")
    feats, labels = [], []
    for i, row in enumerate(rows):
        if len(row) != width:
            raise DataError(f"{path}: row {i} has {len(row)} cells, expected {width}")
        try:
            feats.append([float(c) for c in row[:-1]])
        except ValueError:
            raise DataError(f"{path}: non-numeric feature in row {i}") from None
        labels.append(row[-1].strip())
    X = np.array(feats)
    if not np.isfinite(X).all():
        raise DataError(f"{path}: non-finite feature value")
    norms = np.linalg.norm(X, axis=1, keepdims=True)
    norms[norms == 0.0] = 1.0
    return DatasetEnv(X / norms, np.array(labels), None, K, rng)


class Schedule:
    """Which agent is active in round ``t``: ``uniform``, ``round-robin`` or ``block``."""

    def __init__(self, mode: str, M: int, block: int = 1, rng=None):
        if mode not in ("uniform", "round-robin", "block"):
            raise ValueError(f"unknown schedule mode {mode!r}")
        if block < 1:
            raise ValueError("block length must be positive")
        self.mode, self.M, self.block = mode, M, block
        self.rng = rng if rng is not None else np.random.default_rng()

    def next(self, t: int) -> int:
        if t < 1:
            raise ValueError("rounds start at 1")
        if self.mode == "uniform":
            return int(self.rng.integers(self.M))
        if self.mode == "round-robin":
            return (t - 1) % self.M
        return ((t - 1) // self.block) % self.M


def schedule_next(schedule: Schedule, t: int) -> int:
    return schedule.next(t)
