"""Domain types and the CSV formats shared across the pipeline."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

FEATURE_NAMES: tuple[str, ...] = (
    "check_in_ratio",
    "daily_total_rate",
    "end_of_day_ratio",
    "end_of_inactive_day_ratio",
    "distance_from_most_checkin_m",
    "midnight_ratio",
    "checkins_here",
    "total_checkins",
    "pagerank",
    "reverse_pagerank",
)
N_FEATURES = len(FEATURE_NAMES)
RATIO_FEATURES: tuple[int, ...] = (0, 2, 3, 5, 8, 9)

CHECKIN_HEADER = ("user_id", "timestamp", "lat", "lon")
RECORD_HEADER = ("user_id", "cluster_id", "lat", "lon", *FEATURE_NAMES, "is_home")
PREDICTION_HEADER = ("user_id", "predicted_cluster_id", "dnnr_score", "dnnc_score", "reported")

UNKNOWN = -1


class DataValidationError(ValueError):
    """Raised when an input file or in-memory dataset violates its schema."""


def _check_coords(lat: float, lon: float) -> None:
    if not (-90.0 <= lat <= 90.0) or not (-180.0 <= lon <= 180.0):
        raise DataValidationError(f"coordinates out of range: lat={lat}, lon={lon}")


@dataclass(frozen=True)
class CheckIn:
    user_id: str
    timestamp: datetime
    lat: float
    lon: float

    def __post_init__(self):
        _check_coords(self.lat, self.lon)
        if self.timestamp.tzinfo is not None:
            raise DataValidationError("timestamps must not carry a zone offset")


@dataclass(frozen=True)
class LocationRecord:
    """One (user, location) row: centroid, the ten features and the home label."""

    user_id: str
    cluster_id: int
    lat: float
    lon: float
    features: tuple[float, ...]
    is_home: bool = False

    def __post_init__(self):
        if self.cluster_id < 0:
            raise DataValidationError(f"negative cluster_id {self.cluster_id} for {self.user_id}")
        if len(self.features) != N_FEATURES:
            raise DataValidationError(
                f"expected {N_FEATURES} features, got {len(self.features)}"
            )
        _check_coords(self.lat, self.lon)

    def with_features(self, features: Sequence[float]) -> "LocationRecord":
        return LocationRecord(
            self.user_id, self.cluster_id, self.lat, self.lon,
            tuple(float(v) for v in features), self.is_home,
        )


@dataclass(frozen=True)
class Dataset:
    """Ordered collection of location records with a per-user index.

    Users keep the order of their first appearance in ``records``. The
    constructor validates that (user_id, cluster_id) pairs are unique and that
    no user has more than one home record; ``require_labels`` additionally
    demands exactly one home per user.
    """

    records: tuple[LocationRecord, ...]
    index: dict[str, tuple[int, ...]] = field(init=False, repr=False, compare=False)

    def __init__(self, records: Iterable[LocationRecord], require_labels: bool = False):
        records = tuple(records)
        index: dict[str, list[int]] = {}
        seen: set[tuple[str, int]] = set()
        for i, rec in enumerate(records):
            key = (rec.user_id, rec.cluster_id)
            if key in seen:
                raise DataValidationError(f"duplicate record {key}")
            seen.add(key)
            index.setdefault(rec.user_id, []).append(i)
        for user, rows in index.items():
            n_home = sum(records[i].is_home for i in rows)
            if n_home > 1:
                raise DataValidationError(f"user {user} has {n_home} home records")
            if require_labels and n_home != 1:
                raise DataValidationError(f"user {user} has no home record")
        object.__setattr__(self, "records", records)
        object.__setattr__(self, "index", {u: tuple(r) for u, r in index.items()})

    def __len__(self) -> int:
        return len(self.records)

    @property
    def users(self) -> list[str]:
        return list(self.index)

    def user_records(self, user_id: str) -> list[LocationRecord]:
        return [self.records[i] for i in self.index[user_id]]

    def subset_users(self, users: Iterable[str]) -> "Dataset":
        keep = set(users)
        return Dataset(r for r in self.records if r.user_id in keep)

    def feature_matrix(self) -> np.ndarray:
        if not self.records:
            return np.zeros((0, N_FEATURES))
        return np.array([r.features for r in self.records], dtype=float)

    def labels(self) -> np.ndarray:
        return np.array([r.is_home for r in self.records], dtype=bool)

    def with_feature_matrix(self, X: np.ndarray) -> "Dataset":
        if X.shape != (len(self.records), N_FEATURES):
            raise ValueError(f"feature matrix shape {X.shape} does not match dataset")
        return Dataset(r.with_features(row) for r, row in zip(self.records, X.tolist()))

    def true_homes(self) -> dict[str, int]:
        """Map user -> home cluster_id (users without a label are omitted)."""
        return {r.user_id: r.cluster_id for r in self.records if r.is_home}


@dataclass(frozen=True)
class HomePrediction:
    user_id: str
    predicted_cluster: int
    dnnr_score: float | None
    dnnc_score: float | None
    reported: bool

    @property
    def is_unknown(self) -> bool:
        return self.predicted_cluster == UNKNOWN


# ---------------------------------------------------------------------------
# CSV I/O
# ---------------------------------------------------------------------------

def _data_lines(fh):
    """Yield (line_number, line) skipping ``#`` header comments."""
    for lineno, line in enumerate(fh, start=1):
        if line.startswith("#"):
            continue
        yield lineno, line


def _read_rows(path: str | Path, header: Sequence[str]):
    with open(path, newline="", encoding="utf-8") as fh:
        lines = list(_data_lines(fh))
    if not lines:
        raise DataValidationError(f"{path}: missing header")
    reader = csv.reader([line for _, line in lines])
    got = next(reader)
    if tuple(got) != tuple(header):
        raise DataValidationError(f"{path}: expected header {','.join(header)}, got {','.join(got)}")
    for (lineno, _), row in zip(lines[1:], reader):
        if len(row) != len(header):
            raise DataValidationError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
        yield lineno, row


def _write_csv(path: str | Path, header: Sequence[str], rows: Iterable[Sequence], comment: str | None):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def parse_timestamp(text: str) -> datetime:
    ts = datetime.fromisoformat(text)
    if ts.tzinfo is not None:
        raise ValueError(f"timestamp {text!r} carries a zone offset")
    return ts


def read_checkins(path: str | Path) -> list[CheckIn]:
    out = []
    for lineno, row in _read_rows(path, CHECKIN_HEADER):
        try:
            out.append(CheckIn(row[0], parse_timestamp(row[1]), float(row[2]), float(row[3])))
        except ValueError as exc:
            raise DataValidationError(f"{path}:{lineno}: {exc}") from None
    return out


def write_checkins(checkins: Iterable[CheckIn], path: str | Path, comment: str | None = None) -> None:
    rows = (
        (c.user_id, c.timestamp.isoformat(timespec="seconds"), repr(c.lat), repr(c.lon))
        for c in checkins
    )
    _write_csv(path, CHECKIN_HEADER, rows, comment)


def _fmt(x: float) -> str:
    # shortest repr round-trips exactly, which covers the 12-digit contract
    return repr(float(x))


def read_records(path: str | Path) -> Dataset:
    records = []
    for lineno, row in _read_rows(path, RECORD_HEADER):
        try:
            is_home = row[-1].strip()
            if is_home not in ("0", "1"):
                raise ValueError(f"is_home must be 0 or 1, got {is_home!r}")
            feats = tuple(float(v) for v in row[4:-1])
            if not all(math.isfinite(v) for v in feats):
                raise ValueError("non-finite feature value")
            records.append(LocationRecord(
                row[0], int(row[1]), float(row[2]), float(row[3]), feats, is_home == "1",
            ))
        except ValueError as exc:
            raise DataValidationError(f"{path}:{lineno}: {exc}") from None
    return Dataset(records)


def write_records(dataset: Dataset, path: str | Path, comment: str | None = None) -> None:
    rows = (
        (r.user_id, r.cluster_id, _fmt(r.lat), _fmt(r.lon), *map(_fmt, r.features), int(r.is_home))
        for r in dataset.records
    )
    _write_csv(path, RECORD_HEADER, rows, comment)


def write_predictions(predictions: Iterable[HomePrediction], path: str | Path, comment: str | None = None) -> None:
    def opt(x):
        return "" if x is None else _fmt(x)

    rows = (
        (p.user_id, p.predicted_cluster, opt(p.dnnr_score), opt(p.dnnc_score), int(p.reported))
        for p in predictions
    )
    _write_csv(path, PREDICTION_HEADER, rows, comment)


def read_predictions(path: str | Path) -> list[HomePrediction]:
    out = []
    for lineno, row in _read_rows(path, PREDICTION_HEADER):
        try:
            out.append(HomePrediction(
                row[0], int(row[1]),
                float(row[2]) if row[2] else None,
                float(row[3]) if row[3] else None,
                row[4] == "1",
            ))
        except ValueError as exc:
            raise DataValidationError(f"{path}:{lineno}: {exc}") from None
    return out
