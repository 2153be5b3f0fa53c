"""Random forest used as the high-recall first-phase filter.

Trees are grown to purity on bootstrap samples, choosing the Gini-optimal
split among a fresh random subset of features at every node. A record's
score is the fraction of trees whose leaf calls it "home" (leaf home
fraction > 0.5); the filter keeps every record whose score reaches the
threshold, so with 500 trees and threshold 0.002 a single vote suffices.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numba
import numpy as np

from .data import N_FEATURES, Dataset

DEFAULT_N_TREES = 500
DEFAULT_THRESHOLD = 0.002
DEFAULT_SUBSET_SIZE = int(math.isqrt(N_FEATURES))


@dataclass(frozen=True)
class Tree:
    """Flat array encoding of one tree, nodes stored in preorder.

    Internal node ``i`` routes ``x[feature[i]] <= threshold[i]`` to ``left[i]``
    and everything else to ``right[i]``. Leaves have ``feature == -1`` and
    carry their home fraction in ``value``.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    @property
    def depth(self) -> int:
        depth = np.zeros(self.n_nodes, dtype=int)
        for i in range(self.n_nodes):
            if self.feature[i] >= 0:
                depth[self.left[i]] = depth[self.right[i]] = depth[i] + 1
        return int(depth.max())

    def features_used(self) -> tuple[int, ...]:
        return tuple(sorted({int(f) for f in self.feature if f >= 0}))

    def leaf_values(self, X: np.ndarray) -> np.ndarray:
        return _tree_leaf_values(self.feature, self.threshold, self.left, self.right,
                                 self.value, np.ascontiguousarray(X, dtype=np.float64))

    def to_preorder(self) -> list[dict]:
        nodes = []
        for i in range(self.n_nodes):
            if self.feature[i] < 0:
                nodes.append({"leaf": float(self.value[i])})
            else:
                nodes.append({"feature": int(self.feature[i]), "threshold": float(self.threshold[i])})
        return nodes

    @classmethod
    def from_preorder(cls, nodes: list[dict]) -> "Tree":
        n = len(nodes)
        feature = np.full(n, -1, dtype=np.int64)
        threshold = np.zeros(n)
        left = np.full(n, -1, dtype=np.int64)
        right = np.full(n, -1, dtype=np.int64)
        value = np.zeros(n)
        # preorder: each internal node's left child follows it; the right child
        # follows the end of the left subtree
        pending: list[int] = []
        for i, node in enumerate(nodes):
            if pending:
                parent = pending[-1]
                if left[parent] < 0:
                    left[parent] = i
                else:
                    right[parent] = i
                    pending.pop()
            if "leaf" in node:
                value[i] = float(node["leaf"])
            else:
                feature[i] = int(node["feature"])
                threshold[i] = float(node["threshold"])
                pending.append(i)
        if pending:
            raise ValueError("truncated preorder node list")
        return cls(feature, threshold, left, right, value)


@dataclass(frozen=True)
class ForestModel:
    trees: tuple[Tree, ...]
    seed: int
    feature_subset_size: int = DEFAULT_SUBSET_SIZE
    feature_subsets: tuple[tuple[int, ...], ...] = field(default=())

    def __post_init__(self):
        if not self.feature_subsets:
            object.__setattr__(self, "feature_subsets", tuple(t.features_used() for t in self.trees))

    @property
    def n_trees(self) -> int:
        return len(self.trees)

    def to_dict(self) -> dict:
        return {
            "n_trees": self.n_trees,
            "seed": self.seed,
            "feature_subset_size": self.feature_subset_size,
            "trees": [t.to_preorder() for t in self.trees],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ForestModel":
        trees = tuple(Tree.from_preorder(t) for t in d["trees"])
        if len(trees) != d["n_trees"]:
            raise ValueError("n_trees does not match the number of serialized trees")
        return cls(trees, int(d["seed"]), int(d["feature_subset_size"]))


@dataclass(frozen=True)
class FilterStats:
    recall: float
    selected_fraction: float
    mean_records_per_user: float
    mean_selected_per_user: float
    n_selected: int
    n_records: int
    empty_users: tuple[str, ...]


# ---------------------------------------------------------------------------
# compiled kernels
# ---------------------------------------------------------------------------

@numba.njit(cache=True, nogil=True)
def _grow_tree(X, y, sample, n_sub, rng_seed):
    np.random.seed(rng_seed)
    m_total = sample.shape[0]
    d = X.shape[1]
    cap = 2 * m_total + 1
    feature = np.full(cap, -1, dtype=np.int64)
    threshold = np.zeros(cap)
    left = np.full(cap, -1, dtype=np.int64)
    right = np.full(cap, -1, dtype=np.int64)
    value = np.zeros(cap)

    work = sample.copy()
    # stack rows: start, end, parent, side (0 left / 1 right / -1 root)
    stack = np.empty((cap, 4), dtype=np.int64)
    top = 0
    stack[0, 0] = 0
    stack[0, 1] = m_total
    stack[0, 2] = -1
    stack[0, 3] = -1
    top = 1
    n_nodes = 0
    cand = np.empty(d, dtype=np.int64)
    vals = np.empty(m_total)
    while top > 0:
        top -= 1
        s = stack[top, 0]
        e = stack[top, 1]
        parent = stack[top, 2]
        side = stack[top, 3]
        node = n_nodes
        n_nodes += 1
        if parent >= 0:
            if side == 0:
                left[parent] = node
            else:
                right[parent] = node
        m = e - s
        h = 0
        for i in range(s, e):
            h += y[work[i]]
        value[node] = h / m
        if h == 0 or h == m:
            continue
        nc = 0
        for f in range(d):
            lo = X[work[s], f]
            hi = lo
            for i in range(s + 1, e):
                v = X[work[i], f]
                if v < lo:
                    lo = v
                elif v > hi:
                    hi = v
            if lo < hi:
                cand[nc] = f
                nc += 1
        if nc == 0:
            continue
        k = min(n_sub, nc)
        for j in range(k):
            r = j + int(np.random.random() * (nc - j))
            if r >= nc:
                r = nc - 1
            tmp = cand[j]
            cand[j] = cand[r]
            cand[r] = tmp
        chosen = np.sort(cand[:k])

        best = np.inf
        best_f = -1
        best_t = 0.0
        for f in chosen:
            for i in range(m):
                vals[i] = X[work[s + i], f]
            order = np.argsort(vals[:m], kind="mergesort")
            hl = 0
            for i in range(m - 1):
                hl += y[work[s + order[i]]]
                a = vals[order[i]]
                b = vals[order[i + 1]]
                if a < b:
                    nl = i + 1
                    nr = m - nl
                    hr = h - hl
                    g = hl * (nl - hl) / nl + hr * (nr - hr) / nr
                    if g < best:
                        best = g
                        best_f = f
                        t = 0.5 * (a + b)
                        if t >= b:
                            t = a
                        best_t = t
        feature[node] = best_f
        threshold[node] = best_t
        # in-place partition of work[s:e]
        i = s
        j = e - 1
        while i <= j:
            if X[work[i], best_f] <= best_t:
                i += 1
            else:
                tmp = work[i]
                work[i] = work[j]
                work[j] = tmp
                j -= 1
        # right pushed first so left is popped next (preorder numbering)
        stack[top, 0] = i
        stack[top, 1] = e
        stack[top, 2] = node
        stack[top, 3] = 1
        top += 1
        stack[top, 0] = s
        stack[top, 1] = i
        stack[top, 2] = node
        stack[top, 3] = 0
        top += 1
    return (feature[:n_nodes].copy(), threshold[:n_nodes].copy(), left[:n_nodes].copy(),
            right[:n_nodes].copy(), value[:n_nodes].copy())


@numba.njit(cache=True, nogil=True)
def _tree_leaf_values(feature, threshold, left, right, value, X):
    out = np.empty(X.shape[0])
    for r in range(X.shape[0]):
        i = 0
        while feature[i] >= 0:
            if X[r, feature[i]] <= threshold[i]:
                i = left[i]
            else:
                i = right[i]
        out[r] = value[i]
    return out


# ---------------------------------------------------------------------------
# public API
# ---------------------------------------------------------------------------

def tree_rng(seed: int, index: int) -> np.random.Generator:
    """Independent stream for tree ``index``; serial and parallel training agree."""
    return np.random.default_rng([seed, index])


def bootstrap_sample(n: int | Dataset, seed: int | np.random.Generator) -> np.ndarray:
    """Row indices of a same-size sample drawn with replacement."""
    if isinstance(n, Dataset):
        n = len(n)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return rng.integers(0, n, size=n)


def train_tree(X: np.ndarray, y: np.ndarray, feature_subset_size: int = DEFAULT_SUBSET_SIZE,
               seed: int | np.random.Generator = 0) -> Tree:
    """Grow one unpruned Gini tree on every row of ``(X, y)``."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.asarray(y).astype(np.int64)
    if X.shape[0] == 0:
        raise ValueError("cannot train a tree on an empty sample")
    if feature_subset_size < 1:
        raise ValueError("feature_subset_size must be >= 1")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    kernel_seed = int(rng.integers(0, 2**31 - 1))
    arrays = _grow_tree(X, y, np.arange(X.shape[0], dtype=np.int64), feature_subset_size, kernel_seed)
    return Tree(*arrays)


def _train_one(X, y, subset, seed, i):
    rng = tree_rng(seed, i)
    rows = bootstrap_sample(X.shape[0], rng)
    kernel_seed = int(rng.integers(0, 2**31 - 1))
    return Tree(*_grow_tree(X, y, rows.astype(np.int64), subset, kernel_seed))


def train_forest(X: np.ndarray, y: np.ndarray, n_trees: int = DEFAULT_N_TREES, seed: int = 0,
                 feature_subset_size: int = DEFAULT_SUBSET_SIZE, jobs: int = 1) -> ForestModel:
    """Bagged ensemble of :func:`train_tree`; identical output for any ``jobs``."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.asarray(y).astype(np.int64)
    if X.shape[0] == 0:
        raise ValueError("cannot train a forest on an empty dataset")
    if jobs > 1 and n_trees > 1:
        with ThreadPoolExecutor(jobs) as pool:
            trees = list(pool.map(lambda i: _train_one(X, y, feature_subset_size, seed, i), range(n_trees)))
    else:
        trees = [_train_one(X, y, feature_subset_size, seed, i) for i in range(n_trees)]
    return ForestModel(tuple(trees), seed, feature_subset_size)


def vote_fractions(model: ForestModel, X: np.ndarray) -> np.ndarray:
    """Fraction of trees voting "home" (leaf home fraction > 0.5) for each row."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    if model.n_trees == 0:
        return np.zeros(X.shape[0])
    votes = np.zeros(X.shape[0], dtype=np.int64)
    for t in model.trees:
        votes += t.leaf_values(X) > 0.5
    return votes / model.n_trees


def vote_fraction(model: ForestModel, record) -> float:
    x = np.asarray(getattr(record, "features", record), dtype=float)[None, :]
    return float(vote_fractions(model, x)[0])


def filter_stats(users: list[str], labels: np.ndarray, keep: np.ndarray) -> FilterStats:
    labels = np.asarray(labels, dtype=bool)
    keep = np.asarray(keep, dtype=bool)
    n_home = int(labels.sum())
    uniq = list(dict.fromkeys(users))
    kept_users = {u for u, k in zip(users, keep) if k}
    return FilterStats(
        recall=float((labels & keep).sum() / n_home) if n_home else 0.0,
        selected_fraction=float(keep.mean()) if keep.size else 0.0,
        mean_records_per_user=len(users) / len(uniq) if uniq else 0.0,
        mean_selected_per_user=float(keep.sum()) / len(uniq) if uniq else 0.0,
        n_selected=int(keep.sum()),
        n_records=len(users),
        empty_users=tuple(u for u in uniq if u not in kept_users),
    )


def phase1_filter(model: ForestModel, dataset: Dataset, threshold: float = DEFAULT_THRESHOLD,
                  scores: np.ndarray | None = None) -> tuple[Dataset, FilterStats]:
    """Keep records whose vote fraction is at least ``threshold``.

    ``scores`` may carry precomputed vote fractions for ``dataset``.
    """
    if scores is None:
        scores = vote_fractions(model, dataset.feature_matrix())
    keep = scores >= threshold
    selected = Dataset(r for r, k in zip(dataset.records, keep) if k)
    stats = filter_stats([r.user_id for r in dataset.records], dataset.labels(), keep)
    return selected, stats
