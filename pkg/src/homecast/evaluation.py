"""User-grouped cross-validation, accuracy metrics, ablations and parameter sweeps."""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import forest as rf
from . import pipeline as pl
from .config import RunConfig
from .data import UNKNOWN, Dataset, HomePrediction
from .preprocess import FoldPlan, apply_norm, fit_norm, split_folds
from .synthetic import argmax_baseline

log = logging.getLogger(__name__)

DEFAULT_GATE_GRID = [round(i * 0.01, 2) for i in range(101)]


def home_accuracy(predictions: Sequence[HomePrediction], truth: dict[str, int]) -> float:
    """Share of users whose predicted cluster is the true home; UNKNOWN is wrong."""
    if not predictions:
        return 0.0
    hits = sum(p.predicted_cluster != UNKNOWN and truth.get(p.user_id) == p.predicted_cluster
               for p in predictions)
    return hits / len(predictions)


@dataclass(frozen=True)
class SubsetResult:
    reported_fraction: float
    accuracy: float
    empty: bool


def subset_accuracy(predictions: Sequence[HomePrediction], truth: dict[str, int]) -> SubsetResult:
    reported = [p for p in predictions if p.reported]
    if not reported:
        return SubsetResult(0.0, 0.0, True)
    return SubsetResult(len(reported) / len(predictions), home_accuracy(reported, truth), False)


@dataclass
class FoldReport:
    fold: int
    n_train_users: int
    n_test_users: int
    recall: float
    records_per_user: float
    selected_per_user: float
    selected_fraction: float
    accuracy: float
    reported_fraction: float
    subset_accuracy: float
    baseline_accuracy: float
    seconds: dict = field(default_factory=dict)
    curve: list[pl.GatePoint] = field(default_factory=list)


@dataclass
class EvalReport:
    k: int
    seed: int
    folds: list[FoldReport]
    predictions: list[HomePrediction]
    pooled_curve: list[pl.GatePoint]
    test_users: dict[int, list[str]] = field(default_factory=dict)

    def mean(self, attr: str) -> float:
        return float(np.mean([getattr(f, attr) for f in self.folds]))

    @property
    def mean_curve(self) -> list[pl.GatePoint]:
        """Fold-averaged curve; folds with nobody reported are left out of the accuracy mean."""
        out = []
        for j, t in enumerate(self.folds[0].curve):
            pts = [f.curve[j] for f in self.folds]
            filled = [p.subset_accuracy for p in pts if not p.empty]
            out.append(pl.GatePoint(
                t.threshold,
                float(np.mean([p.reported_fraction for p in pts])),
                float(np.mean(filled)) if filled else 0.0,
                sum(p.n_reported for p in pts),
                not filled,
            ))
        return out

    def summary(self) -> dict:
        keys = ["recall", "records_per_user", "selected_per_user", "selected_fraction",
                "accuracy", "reported_fraction", "subset_accuracy", "baseline_accuracy"]
        return {k: self.mean(k) for k in keys}

    def table(self) -> str:
        cols = ["fold", "recall", "sel/user", "rec/user", "accuracy", "reported", "subset acc", "baseline"]
        lines = ["  ".join(f"{c:>10s}" for c in cols)]
        for f in self.folds:
            lines.append("  ".join(f"{v:>10}" for v in [
                f.fold, f"{f.recall:.4f}", f"{f.selected_per_user:.2f}", f"{f.records_per_user:.2f}",
                f"{f.accuracy:.4f}", f"{f.reported_fraction:.4f}", f"{f.subset_accuracy:.4f}",
                f"{f.baseline_accuracy:.4f}"]))
        s = self.summary()
        lines.append("  ".join(f"{v:>10}" for v in [
            "mean", f"{s['recall']:.4f}", f"{s['selected_per_user']:.2f}", f"{s['records_per_user']:.2f}",
            f"{s['accuracy']:.4f}", f"{s['reported_fraction']:.4f}", f"{s['subset_accuracy']:.4f}",
            f"{s['baseline_accuracy']:.4f}"]))
        return "\n".join(lines)


def write_curve(points: Sequence[pl.GatePoint], path: str | Path, comment: str | None = None) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["threshold", "reported_fraction", "subset_accuracy", "n_reported", "empty"])
        for p in points:
            w.writerow([p.threshold, repr(p.reported_fraction), repr(p.subset_accuracy),
                        p.n_reported, int(p.empty)])


def write_report(report: EvalReport, path: str | Path, comment: str | None = None) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        w = csv.writer(fh, lineterminator="\n")
        cols = ["fold", "n_train_users", "n_test_users", "recall", "records_per_user",
                "selected_per_user", "selected_fraction", "accuracy", "reported_fraction",
                "subset_accuracy", "baseline_accuracy", "forest_s", "dnnr_s", "dnnc_s"]
        w.writerow(cols)
        for f in report.folds:
            d = asdict(f)
            w.writerow([d[c] for c in cols[:11]] + [round(f.seconds.get(k, 0.0), 3)
                                                    for k in ("forest", "dnnr", "dnnc")])


# ---------------------------------------------------------------------------
# fold preparation shared by CV, ablation and sweeps
# ---------------------------------------------------------------------------

@dataclass
class FoldData:
    fold: int
    train: Dataset
    test: Dataset
    norm: object


def prepare_folds(dataset: Dataset, cfg: RunConfig) -> tuple[FoldPlan, list[FoldData]]:
    """Split users into folds and normalize each partition.

    By default scaling is fitted once on the whole dataset before splitting;
    with ``strict_leakage`` it is fitted on each training partition and test
    values are clamped to [-1, 1].
    """
    plan = split_folds(dataset, cfg.k_folds, cfg.seed)
    global_norm = None if cfg.strict_leakage else fit_norm(dataset)
    out = []
    for k in range(cfg.k_folds):
        train_raw = dataset.subset_users(plan.train_users(k))
        test_raw = dataset.subset_users(plan.fold_users(k))
        norm = fit_norm(train_raw) if cfg.strict_leakage else global_norm
        out.append(FoldData(k, apply_norm(norm, train_raw, clamp=cfg.strict_leakage),
                            apply_norm(norm, test_raw, clamp=cfg.strict_leakage), norm))
    return plan, out


def _fold_seed_cfg(cfg: RunConfig, fold: int) -> RunConfig:
    return replace(cfg, seed=pl.stage_seed(cfg.seed, 100 + fold))


def cross_validate(dataset: Dataset, cfg: RunConfig, gate_grid: Sequence[float] = DEFAULT_GATE_GRID,
                   jobs: int = 1) -> EvalReport:
    """k-fold CV with user-disjoint folds; every stage is retrained inside each fold."""
    plan, folds = prepare_folds(dataset, cfg)
    baseline = argmax_baseline(dataset, "midnight_ratio")
    reports, all_preds = [], []
    for fd in folds:
        fcfg = _fold_seed_cfg(cfg, fd.fold)
        p1 = pl.fit_phase1(fd.train, fcfg, jobs)
        t0 = time.perf_counter()
        dnnr = pl.train_dnnr(p1.selected, fcfg)
        t1 = time.perf_counter()
        dnnc = pl.train_dnnc(p1.selected, fcfg)
        t2 = time.perf_counter()
        art = pl.PipelineArtifact(fd.norm, p1.forest, dnnr, dnnc, cfg.phase1_threshold,
                                  cfg.gate_threshold, fcfg.to_dict())
        scored = pl.score_records(art, fd.test)
        stats = rf.filter_stats([r.user_id for r in fd.test.records], fd.test.labels(), scored.survive)
        preds = pl.select_homes(scored, cfg.gate_threshold)
        truth = fd.test.true_homes()
        sub = subset_accuracy(preds, truth)
        users = fd.test.users
        rep = FoldReport(
            fold=fd.fold,
            n_train_users=len(fd.train.users),
            n_test_users=len(users),
            recall=stats.recall,
            records_per_user=stats.mean_records_per_user,
            selected_per_user=stats.mean_selected_per_user,
            selected_fraction=stats.selected_fraction,
            accuracy=home_accuracy(preds, truth),
            reported_fraction=sub.reported_fraction,
            subset_accuracy=sub.accuracy,
            baseline_accuracy=float(np.mean([baseline[u] == truth[u] for u in users])),
            seconds={"forest": p1.seconds, "dnnr": t1 - t0, "dnnc": t2 - t1},
            curve=pl.gate_curve(preds, truth, gate_grid),
        )
        log.info("fold %d: recall %.4f, %.2f -> %.2f records/user, accuracy %.4f",
                 fd.fold, rep.recall, rep.records_per_user, rep.selected_per_user, rep.accuracy)
        reports.append(rep)
        all_preds.extend(preds)
    pooled = pl.gate_curve(all_preds, dataset.true_homes(), gate_grid)
    return EvalReport(cfg.k_folds, cfg.seed, reports, all_preds, pooled,
                      {k: plan.fold_users(k) for k in range(cfg.k_folds)})


# ---------------------------------------------------------------------------
# ablation
# ---------------------------------------------------------------------------

ABLATION_ROWS = ("forest-only", "DNN-R-only", "DNN-C-only", "DNN-R+DNN-C", "full pipeline")


@dataclass
class AblationRow:
    method: str
    accuracy: float
    subset_accuracy: float
    reported_fraction: float
    train_seconds: float


def _argmax_predictions(dataset: Dataset, scores: np.ndarray, mask: np.ndarray | None = None):
    preds = []
    recs = dataset.records
    for user, rows in dataset.index.items():
        alive = [i for i in rows if mask is None or mask[i]]
        if not alive:
            preds.append(HomePrediction(user, UNKNOWN, None, None, False))
            continue
        best = min(alive, key=lambda i: (-scores[i], recs[i].cluster_id))
        preds.append(HomePrediction(user, recs[best].cluster_id, float(scores[best]), None, True))
    return preds


def _gated(preds: list[HomePrediction], dnnc_scores: dict[tuple[str, int], float], gate: float):
    out = []
    for p in preds:
        if p.predicted_cluster == UNKNOWN:
            out.append(p)
            continue
        s = dnnc_scores[(p.user_id, p.predicted_cluster)]
        out.append(HomePrediction(p.user_id, p.predicted_cluster, p.dnnr_score, s, s >= gate))
    return out


def ablate(dataset: Dataset, cfg: RunConfig, jobs: int = 1) -> list[AblationRow]:
    """Accuracy and training time of each component alone and in combination.

    forest-only picks each user's highest vote fraction; DNN-R-only and
    DNN-C-only train on every record (no filter) and pick the per-user argmax
    of their home score; DNN-R+DNN-C is the unfiltered two-network cascade.
    Accuracies are fold means; times are summed over folds.
    """
    _, folds = prepare_folds(dataset, cfg)
    acc: dict[str, list[float]] = {m: [] for m in ABLATION_ROWS}
    sub: dict[str, list[float]] = {m: [] for m in ABLATION_ROWS}
    frac: dict[str, list[float]] = {m: [] for m in ABLATION_ROWS}
    secs: dict[str, float] = {m: 0.0 for m in ABLATION_ROWS}
    for fd in folds:
        fcfg = _fold_seed_cfg(cfg, fd.fold)
        truth = fd.test.true_homes()
        Xt = fd.test.feature_matrix()

        def record(name, preds, seconds):
            acc[name].append(home_accuracy(preds, truth))
            s = subset_accuracy(preds, truth)
            sub[name].append(s.accuracy)
            frac[name].append(s.reported_fraction)
            secs[name] += seconds

        p1 = pl.fit_phase1(fd.train, fcfg, jobs)
        votes = rf.vote_fractions(p1.forest, Xt)
        record("forest-only", _argmax_predictions(fd.test, votes), p1.seconds)

        t0 = time.perf_counter()
        dnnr_all = pl.train_dnnr(fd.train, fcfg)
        t_r = time.perf_counter() - t0
        r_scores = pl.nn.predict(dnnr_all, Xt)[:, 0]
        r_preds = _argmax_predictions(fd.test, r_scores)
        record("DNN-R-only", r_preds, t_r)

        t0 = time.perf_counter()
        dnnc_all = pl.train_dnnc(fd.train, fcfg)
        t_c = time.perf_counter() - t0
        c_scores = pl.dnnc_home_score(dnnc_all, Xt)
        record("DNN-C-only", _argmax_predictions(fd.test, c_scores), t_c)

        keyed = {(r.user_id, r.cluster_id): float(s) for r, s in zip(fd.test.records, c_scores)}
        record("DNN-R+DNN-C", _gated(r_preds, keyed, cfg.gate_threshold), t_r + t_c)

        t0 = time.perf_counter()
        dnnr = pl.train_dnnr(p1.selected, fcfg)
        dnnc = pl.train_dnnc(p1.selected, fcfg)
        t_full = time.perf_counter() - t0 + p1.seconds
        art = pl.PipelineArtifact(fd.norm, p1.forest, dnnr, dnnc, cfg.phase1_threshold,
                                  cfg.gate_threshold)
        record("full pipeline", pl.select_homes(pl.score_records(art, fd.test, votes),
                                                cfg.gate_threshold), t_full)
    return [AblationRow(m, float(np.mean(acc[m])), float(np.mean(sub[m])),
                        float(np.mean(frac[m])), secs[m]) for m in ABLATION_ROWS]


def ablation_table(rows: Sequence[AblationRow]) -> str:
    lines = [f"{'method':<16}{'accuracy':>10}{'reported':>10}{'subset acc':>12}{'train s':>10}"]
    for r in rows:
        lines.append(f"{r.method:<16}{r.accuracy:>10.4f}{r.reported_fraction:>10.4f}"
                     f"{r.subset_accuracy:>12.4f}{r.train_seconds:>10.2f}")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# DNN-R sweeps
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SweepPoint:
    value: float
    accuracy: float
    fold_accuracies: tuple[float, ...]


def _dnnr_sweep(dataset: Dataset, cfg: RunConfig, settings: Sequence[float], kind: str,
                jobs: int = 1) -> list[SweepPoint]:
    _, folds = prepare_folds(dataset, cfg)
    per_setting: list[list[float]] = [[] for _ in settings]
    for fd in folds:
        fcfg = _fold_seed_cfg(cfg, fd.fold)
        # the filter does not depend on the swept DNN-R setting, so train it once per fold
        p1 = pl.fit_phase1(fd.train, fcfg, jobs)
        votes = rf.vote_fractions(p1.forest, fd.test.feature_matrix())
        survive = votes >= cfg.phase1_threshold
        truth = fd.test.true_homes()
        Xt = fd.test.feature_matrix()
        for j, v in enumerate(settings):
            if kind == "dropout":
                model = pl.train_dnnr(p1.selected, fcfg, dropout=float(v))
            else:
                model = pl.train_dnnr(p1.selected, fcfg, epochs=int(v))
            scores = np.full(len(fd.test), -np.inf)
            if survive.any():
                scores[survive] = pl.nn.predict(model, Xt[survive])[:, 0]
            preds = _argmax_predictions(fd.test, scores, survive)
            per_setting[j].append(home_accuracy(preds, truth))
    return [SweepPoint(float(v), float(np.mean(a)), tuple(a)) for v, a in zip(settings, per_setting)]


def sweep_dropout(dataset: Dataset, rates: Sequence[float], cfg: RunConfig, jobs: int = 1) -> list[SweepPoint]:
    return _dnnr_sweep(dataset, cfg, rates, "dropout", jobs)


def sweep_epochs(dataset: Dataset, epochs: Sequence[int], cfg: RunConfig, jobs: int = 1) -> list[SweepPoint]:
    return _dnnr_sweep(dataset, cfg, epochs, "epochs", jobs)


def write_sweep(points: Sequence[SweepPoint], name: str, path: str | Path, comment: str | None = None) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        w = csv.writer(fh, lineterminator="\n")
        k = len(points[0].fold_accuracies) if points else 0
        w.writerow([name, "accuracy", *[f"fold{i}" for i in range(k)]])
        for p in points:
            w.writerow([p.value, repr(p.accuracy), *map(repr, p.fold_accuracies)])


def phase1_curve(forest: rf.ForestModel, dataset: Dataset, thresholds: Sequence[float],
                 votes: np.ndarray | None = None) -> list[tuple[float, float, float]]:
    """(threshold, recall, selected fraction) triples for recall-vs-threshold plots."""
    if votes is None:
        votes = rf.vote_fractions(forest, dataset.feature_matrix())
    users = [r.user_id for r in dataset.records]
    labels = dataset.labels()
    out = []
    for t in thresholds:
        s = rf.filter_stats(users, labels, votes >= t)
        out.append((float(t), s.recall, s.selected_fraction))
    return out
