"""Run configuration: every tunable of the pipeline in one validated record."""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

from . import __version__

SEED_ENV = "HOMECAST_SEED"


@dataclass(frozen=True)
class RunConfig:
    # clustering
    eps_m: float = 100.0
    min_pts: int = 2
    # transition-graph PageRank
    pagerank_damping: float = 0.85
    pagerank_tol: float = 1e-9
    pagerank_max_iter: int = 100
    # phase 1
    n_trees: int = 500
    feature_subset_size: int = 3
    phase1_threshold: float = 0.002
    # phase 2
    epochs: int = 50
    dnnc_epochs: int = 50
    batch_size: int = 32
    dnnr_dropout: float = 0.30
    dnnc_dropout: float = 0.20
    sgd_lr: float = 0.1
    rmsprop_lr: float = 0.001
    rmsprop_rho: float = 0.9
    rmsprop_eps: float = 1e-8
    gate_threshold: float = 0.5
    # evaluation
    k_folds: int = 5
    strict_leakage: bool = False
    seed: int = 0

    def __post_init__(self):
        checks = [
            (self.eps_m > 0, "eps_m must be positive"),
            (self.min_pts >= 1, "min_pts must be >= 1"),
            (0 < self.pagerank_damping < 1, "pagerank_damping must lie in (0, 1)"),
            (self.pagerank_tol > 0, "pagerank_tol must be positive"),
            (self.pagerank_max_iter >= 1, "pagerank_max_iter must be >= 1"),
            (self.n_trees >= 1, "n_trees must be >= 1"),
            (1 <= self.feature_subset_size <= 10, "feature_subset_size must lie in 1..10"),
            (0 <= self.phase1_threshold <= 1, "phase1_threshold must lie in [0, 1]"),
            (self.epochs >= 0 and self.dnnc_epochs >= 0, "epochs must be >= 0"),
            (self.batch_size >= 1, "batch_size must be >= 1"),
            (0 <= self.dnnr_dropout < 1 and 0 <= self.dnnc_dropout < 1, "dropout must lie in [0, 1)"),
            (self.sgd_lr > 0 and self.rmsprop_lr > 0, "learning rates must be positive"),
            (0 < self.rmsprop_rho < 1, "rmsprop_rho must lie in (0, 1)"),
            (self.rmsprop_eps > 0, "rmsprop_eps must be positive"),
            (0 <= self.gate_threshold <= 1, "gate_threshold must lie in [0, 1]"),
            (self.k_folds >= 2, "k_folds must be >= 2"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ValueError(msg)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name: f for f in fields(cls)}
        unknown = sorted(set(d) - set(known))
        if unknown:
            raise ValueError(f"unknown config keys: {unknown}")
        return cls(**d)

    @classmethod
    def load(cls, path: str | Path | None) -> "RunConfig":
        if path is None:
            return cls()
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def to_dict(self) -> dict:
        return asdict(self)

    def with_seed(self, seed: int | None) -> "RunConfig":
        return self if seed is None else replace(self, seed=seed)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def resolve_seed(cli_seed: int | None, file_seed: int | None, default: int = 0) -> int:
    """``--seed`` wins, then a seed set in the config file, then ``HOMECAST_SEED``."""
    if cli_seed is not None:
        return cli_seed
    if file_seed is not None:
        return file_seed
    env = os.environ.get(SEED_ENV)
    return int(env) if env else default


def header_comment(tool: str, config_hash: str) -> str:
    return f"homecast {__version__} {tool} config={config_hash}"
