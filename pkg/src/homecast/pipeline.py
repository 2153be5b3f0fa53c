"""The two-phase predictor: forest filter, then DNN-R selection and DNN-C gating."""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import forest as rf
from . import nn
from .config import RunConfig
from .data import UNKNOWN, Dataset, HomePrediction
from .preprocess import NormParams, apply_norm, fit_norm

STAGE_FOREST, STAGE_DNNR, STAGE_DNNC = 1, 2, 3


class PipelineError(ValueError):
    """Training data unusable for a pipeline stage."""


def stage_seed(seed: int, stage: int) -> int:
    return int(np.random.SeedSequence([seed, stage]).generate_state(1)[0])


@dataclass(frozen=True)
class PipelineArtifact:
    norm: NormParams
    forest: rf.ForestModel
    dnnr: nn.MlpModel
    dnnc: nn.MlpModel
    phase1_threshold: float
    gate_threshold: float
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "format": "homecast-artifact/1",
            "config": self.config,
            "phase1_threshold": self.phase1_threshold,
            "gate_threshold": self.gate_threshold,
            "norm": self.norm.to_dict(),
            "forest": self.forest.to_dict(),
            "dnnr": self.dnnr.to_dict(),
            "dnnc": self.dnnc.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineArtifact":
        if d.get("format") != "homecast-artifact/1":
            raise ValueError("not a homecast artifact")
        return cls(
            NormParams.from_dict(d["norm"]),
            rf.ForestModel.from_dict(d["forest"]),
            nn.MlpModel.from_dict(d["dnnr"]),
            nn.MlpModel.from_dict(d["dnnc"]),
            float(d["phase1_threshold"]),
            float(d["gate_threshold"]),
            d.get("config", {}),
        )

    def save(self, path: str | Path, comment: str | None = None) -> None:
        text = json.dumps(self.to_dict(), sort_keys=True)
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            if comment:
                fh.write(f"# {comment}\n")
            fh.write(text + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "PipelineArtifact":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        body = "\n".join(l for l in lines if not l.startswith("#"))
        return cls.from_dict(json.loads(body))


@dataclass
class Phase1Result:
    forest: rf.ForestModel
    selected: Dataset
    stats: rf.FilterStats
    seconds: float


def fit_phase1(train: Dataset, cfg: RunConfig, jobs: int = 1) -> Phase1Result:
    """Train the forest on normalized training records and filter them."""
    t0 = time.perf_counter()
    model = rf.train_forest(train.feature_matrix(), train.labels(), cfg.n_trees,
                            stage_seed(cfg.seed, STAGE_FOREST), cfg.feature_subset_size, jobs)
    seconds = time.perf_counter() - t0
    selected, stats = rf.phase1_filter(model, train, cfg.phase1_threshold)
    return Phase1Result(model, selected, stats, seconds)


def _check_trainable(data: Dataset, what: str) -> None:
    y = data.labels()
    if y.size == 0:
        raise PipelineError(f"{what}: no training records")
    if y.all() or not y.any():
        raise PipelineError(f"{what}: training records contain a single class")


def train_dnnr(data: Dataset, cfg: RunConfig, dropout: float | None = None,
               epochs: int | None = None) -> nn.MlpModel:
    _check_trainable(data, "DNN-R")
    spec = nn.dnnr_spec(cfg.dnnr_dropout if dropout is None else dropout)
    return nn.train(spec, nn.MSE, nn.OptimizerState.sgd(cfg.sgd_lr), data.feature_matrix(),
                    data.labels().astype(float), cfg.epochs if epochs is None else epochs,
                    cfg.batch_size, stage_seed(cfg.seed, STAGE_DNNR))


def train_dnnc(data: Dataset, cfg: RunConfig) -> nn.MlpModel:
    _check_trainable(data, "DNN-C")
    y = data.labels().astype(int)
    onehot = np.eye(2)[y]  # columns: not-home, home
    opt = nn.OptimizerState.rmsprop(cfg.rmsprop_lr, cfg.rmsprop_rho, cfg.rmsprop_eps)
    return nn.train(nn.dnnc_spec(cfg.dnnc_dropout), nn.CCE, opt, data.feature_matrix(), onehot,
                    cfg.dnnc_epochs, cfg.batch_size, stage_seed(cfg.seed, STAGE_DNNC))


def dnnc_home_score(model: nn.MlpModel, X: np.ndarray) -> np.ndarray:
    """Home output divided by the sum of both outputs."""
    out = nn.predict(model, X)
    return out[:, 1] / out.sum(axis=1)


def fit(train: Dataset, cfg: RunConfig, norm: NormParams | None = None, jobs: int = 1,
        timings: dict | None = None) -> PipelineArtifact:
    """Fit every stage on raw-feature training records.

    ``norm`` overrides the normalization fitted on ``train`` (used when the
    scaling is fitted on the whole dataset before splitting).
    """
    norm = norm if norm is not None else fit_norm(train)
    train_n = apply_norm(norm, train, clamp=cfg.strict_leakage)
    p1 = fit_phase1(train_n, cfg, jobs)
    t0 = time.perf_counter()
    dnnr = train_dnnr(p1.selected, cfg)
    t1 = time.perf_counter()
    dnnc = train_dnnc(p1.selected, cfg)
    t2 = time.perf_counter()
    if timings is not None:
        timings.update(forest=p1.seconds, dnnr=t1 - t0, dnnc=t2 - t1)
    return PipelineArtifact(norm, p1.forest, dnnr, dnnc, cfg.phase1_threshold,
                            cfg.gate_threshold, cfg.to_dict())


def normalize(artifact: PipelineArtifact, dataset: Dataset) -> Dataset:
    strict = bool(artifact.config.get("strict_leakage", False))
    return apply_norm(artifact.norm, dataset, clamp=strict)


@dataclass(frozen=True)
class ScoredRecords:
    """Per-record scores for a normalized dataset, reused across gate thresholds."""

    dataset: Dataset
    votes: np.ndarray
    survive: np.ndarray
    dnnr: np.ndarray
    dnnc: np.ndarray


def score_records(artifact: PipelineArtifact, dataset: Dataset,
                  votes: np.ndarray | None = None) -> ScoredRecords:
    X = dataset.feature_matrix()
    if votes is None:
        votes = rf.vote_fractions(artifact.forest, X)
    survive = votes >= artifact.phase1_threshold
    dnnr = np.full(len(dataset), np.nan)
    dnnc = np.full(len(dataset), np.nan)
    if survive.any():
        dnnr[survive] = nn.predict(artifact.dnnr, X[survive])[:, 0]
        dnnc[survive] = dnnc_home_score(artifact.dnnc, X[survive])
    return ScoredRecords(dataset, votes, survive, dnnr, dnnc)


def select_homes(scored: ScoredRecords, gate_threshold: float) -> list[HomePrediction]:
    """Per-user argmax of DNN-R over survivors, then the DNN-C gate."""
    out = []
    records = scored.dataset.records
    for user, rows in scored.dataset.index.items():
        alive = [i for i in rows if scored.survive[i]]
        if not alive:
            out.append(HomePrediction(user, UNKNOWN, None, None, False))
            continue
        best = min(alive, key=lambda i: (-scored.dnnr[i], records[i].cluster_id))
        c_score = float(scored.dnnc[best])
        out.append(HomePrediction(user, records[best].cluster_id, float(scored.dnnr[best]),
                                  c_score, c_score >= gate_threshold))
    return out


def predict_all(artifact: PipelineArtifact, dataset: Dataset,
                gate_threshold: float | None = None) -> list[HomePrediction]:
    """Predictions for every user of an already-normalized dataset, in dataset order."""
    gate = artifact.gate_threshold if gate_threshold is None else gate_threshold
    return select_homes(score_records(artifact, dataset), gate)


def predict_user(artifact: PipelineArtifact, records: Sequence) -> HomePrediction:
    ds = Dataset(records)
    if len(ds.users) != 1:
        raise ValueError("predict_user expects the records of exactly one user")
    return predict_all(artifact, ds)[0]


@dataclass(frozen=True)
class GatePoint:
    threshold: float
    reported_fraction: float
    subset_accuracy: float
    n_reported: int
    empty: bool


def gate_curve(predictions: Sequence[HomePrediction], truth: dict[str, int],
               thresholds: Sequence[float]) -> list[GatePoint]:
    """Reported fraction and accuracy among reported users, per gate threshold.

    The DNN-R choice of each user is fixed; only the DNN-C cut moves. The
    fraction's denominator is every user in ``predictions``.
    """
    n = len(predictions)
    scores = np.array([-np.inf if p.dnnc_score is None else p.dnnc_score for p in predictions])
    correct = np.array([p.predicted_cluster != UNKNOWN and truth.get(p.user_id) == p.predicted_cluster
                        for p in predictions], dtype=bool)
    out = []
    for t in thresholds:
        rep = scores >= t
        k = int(rep.sum())
        out.append(GatePoint(float(t), k / n if n else 0.0,
                             float(correct[rep].mean()) if k else 0.0, k, k == 0))
    return out


def sweep_gate(artifact: PipelineArtifact, dataset: Dataset,
               thresholds: Sequence[float]) -> list[GatePoint]:
    """Gate sweep on a normalized, labelled dataset without retraining."""
    preds = predict_all(artifact, dataset, gate_threshold=0.0)
    return gate_curve(preds, dataset.true_homes(), thresholds)


def parse_grid(spec: str) -> list[float]:
    """``"start:stop:step"`` (inclusive stop) or a comma-separated list."""
    if ":" in spec:
        start, stop, step = (float(x) for x in spec.split(":"))
        if step <= 0:
            raise ValueError("grid step must be positive")
        n = int(np.floor((stop - start) / step + 1e-9)) + 1
        return [round(start + i * step, 12) for i in range(n)]
    return [float(x) for x in spec.split(",") if x.strip()]
