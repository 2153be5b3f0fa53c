"""Min-max feature scaling to [-1, 1] and user-disjoint fold assignment."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import N_FEATURES, Dataset


@dataclass(frozen=True)
class NormParams:
    x_min: tuple[float, ...]
    x_max: tuple[float, ...]

    def __post_init__(self):
        if len(self.x_min) != N_FEATURES or len(self.x_max) != N_FEATURES:
            raise ValueError("NormParams needs one (min, max) pair per feature")
        if any(lo > hi for lo, hi in zip(self.x_min, self.x_max)):
            raise ValueError("x_min exceeds x_max")

    def to_dict(self) -> dict:
        return {"x_min": list(self.x_min), "x_max": list(self.x_max)}

    @classmethod
    def from_dict(cls, d: dict) -> "NormParams":
        return cls(tuple(map(float, d["x_min"])), tuple(map(float, d["x_max"])))


def fit_norm(dataset: Dataset) -> NormParams:
    X = dataset.feature_matrix()
    if X.shape[0] == 0:
        raise ValueError("cannot fit normalization on an empty dataset")
    return NormParams(tuple(X.min(axis=0).tolist()), tuple(X.max(axis=0).tolist()))


def normalize_matrix(params: NormParams, X: np.ndarray, clamp: bool = False) -> np.ndarray:
    """``X' = 2 (X - min) / (max - min) - 1`` column-wise; constant columns map to 0."""
    lo = np.asarray(params.x_min)
    hi = np.asarray(params.x_max)
    span = hi - lo
    const = span == 0
    safe = np.where(const, 1.0, span)
    out = 2.0 * (X - lo) / safe - 1.0
    out[:, const] = 0.0
    if clamp:
        np.clip(out, -1.0, 1.0, out=out)
    return out


def apply_norm(params: NormParams, dataset: Dataset, clamp: bool = False) -> Dataset:
    return dataset.with_feature_matrix(normalize_matrix(params, dataset.feature_matrix(), clamp))


@dataclass(frozen=True)
class FoldPlan:
    k: int
    seed: int
    assignment: dict[str, int]

    def fold_users(self, fold: int) -> list[str]:
        return [u for u, f in self.assignment.items() if f == fold]

    def train_users(self, fold: int) -> list[str]:
        return [u for u, f in self.assignment.items() if f != fold]

    def sizes(self) -> list[int]:
        return [sum(1 for f in self.assignment.values() if f == i) for i in range(self.k)]


def split_folds(dataset: Dataset | list[str], k: int = 5, seed: int = 0) -> FoldPlan:
    """Shuffle users with a seeded generator and deal them round-robin into ``k`` folds."""
    users = dataset.users if isinstance(dataset, Dataset) else list(dataset)
    if k < 2:
        raise ValueError("need at least 2 folds")
    if len(users) < k:
        raise ValueError(f"{len(users)} users cannot fill {k} folds")
    order = np.random.default_rng(seed).permutation(len(users))
    return FoldPlan(k, seed, {users[j]: i % k for i, j in enumerate(order)})
