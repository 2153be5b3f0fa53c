"""Synthetic check-in streams with planted homes.

Each user gets a home, up to two workplaces, a handful of favourite leisure
spots and an open-ended supply of one-off places. Days are simulated
independently: the user is active with some probability, posts a random
number of check-ins at times drawn from a diurnal profile, and picks a venue
according to the time slot. Home dominates nights and evenings, but every
user draws their own propensities, and some users have a second place where
they regularly spend nights, so the per-location features are informative
without being decisive.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from datetime import date, datetime, timedelta
from pathlib import Path

import numpy as np

from .data import FEATURE_NAMES, CheckIn, Dataset
from .geo import GeoPoint, haversine_matrix

# relative check-in intensity for logical-day hours 03..26 (26 == 02:00 next day)
HOUR_WEIGHTS = np.array([
    0.15, 0.12, 0.15, 0.30,            # 03-06
    0.6, 0.9, 1.0, 1.0, 1.0, 1.2,      # 07-12
    1.4, 1.2, 1.0, 1.0, 1.1, 1.3,      # 13-18
    1.6, 1.8, 1.8, 1.7, 1.5, 1.2,      # 19-24
    0.8, 0.45,                         # 01-02
])
assert HOUR_WEIGHTS.size == 24

M_PER_DEG_LAT = 111_195.0


class InfeasibleLayoutError(ValueError):
    """Venues cannot be placed at the requested separation."""


@dataclass(frozen=True)
class GeneratorConfig:
    n_users: int = 500
    days: int = 120
    start_date: str = "2014-06-01"
    seed: int = 42
    # spatial layout
    lat_range: tuple[float, float] = (41.70, 42.00)
    lon_range: tuple[float, float] = (-87.85, -87.55)
    min_venue_separation_m: float = 300.0
    gps_jitter_m: float = 12.0
    # activity
    active_day_prob: float = 0.55
    checkins_per_active_day: float = 2.2
    # venue portfolio
    leisure_venues: tuple[int, int] = (3, 12)
    explore_prob: float = 0.45
    work_venue_probs: tuple[float, float, float] = (0.25, 0.55, 0.20)
    work_hours_venue_prob: float = 0.6
    # home behaviour
    home_night_prob: float = 0.8
    home_evening_prob: float = 0.4
    weekend_home_boost: float = 1.5
    noise: float = 1.0
    second_place_prob: float = 0.55
    second_place_night_share: float = 0.65

    def __post_init__(self):
        probs = {
            "active_day_prob": self.active_day_prob,
            "explore_prob": self.explore_prob,
            "work_hours_venue_prob": self.work_hours_venue_prob,
            "home_night_prob": self.home_night_prob,
            "home_evening_prob": self.home_evening_prob,
            "noise": self.noise,
            "second_place_prob": self.second_place_prob,
            "second_place_night_share": self.second_place_night_share,
        }
        for name, p in probs.items():
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {p}")
        if abs(sum(self.work_venue_probs) - 1.0) > 1e-9:
            raise ValueError("work_venue_probs must sum to 1")
        if self.gps_jitter_m * 3.0 * 2 >= 100.0:
            raise ValueError("gps jitter too large for 100 m clustering")
        if self.min_venue_separation_m <= 100.0 + 6.0 * self.gps_jitter_m:
            raise ValueError("venue separation must exceed the clustering radius plus jitter")
        if self.n_users < 1 or self.days < 1:
            raise ValueError("n_users and days must be >= 1")

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratorConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown generator keys: {sorted(unknown)}")
        d = {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}
        return cls(**d)

    @classmethod
    def load(cls, path: str | Path) -> "GeneratorConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        return asdict(self)


class _VenueBook:
    """Per-user venue coordinates kept at least ``sep`` meters apart."""

    def __init__(self, cfg: GeneratorConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.rng = rng
        self.lat: list[float] = []
        self.lon: list[float] = []

    def add(self, near: GeoPoint | None = None, radius_m: float = 0.0) -> int:
        cfg = self.cfg
        for _ in range(200):
            if near is None:
                lat = self.rng.uniform(*cfg.lat_range)
                lon = self.rng.uniform(*cfg.lon_range)
            else:
                r = radius_m * np.sqrt(self.rng.random())
                theta = self.rng.uniform(0, 2 * np.pi)
                lat = near.lat + r * np.cos(theta) / M_PER_DEG_LAT
                lon = near.lon + r * np.sin(theta) / (M_PER_DEG_LAT * np.cos(np.radians(near.lat)))
            if self.lat:
                d = haversine_matrix([lat], [lon], self.lat, self.lon)
                if d.min() < cfg.min_venue_separation_m:
                    continue
            self.lat.append(float(lat))
            self.lon.append(float(lon))
            return len(self.lat) - 1
        raise InfeasibleLayoutError(
            f"could not place a venue {cfg.min_venue_separation_m} m from {len(self.lat)} others"
        )

    def point(self, i: int) -> GeoPoint:
        return GeoPoint(self.lat[i], self.lon[i])


def _jitter(rng: np.random.Generator, p: GeoPoint, sigma_m: float) -> tuple[float, float]:
    # truncated at 3 sigma so every check-in stays within the venue's 100 m cell
    dx, dy = np.clip(rng.normal(0.0, sigma_m, 2), -3 * sigma_m, 3 * sigma_m) / np.sqrt(2)
    lat = p.lat + dy / M_PER_DEG_LAT
    lon = p.lon + dx / (M_PER_DEG_LAT * np.cos(np.radians(p.lat)))
    return round(float(lat), 7), round(float(lon), 7)


def _boost(p: float, factor: float) -> float:
    """Multiply the odds of ``p`` by ``factor``."""
    if p >= 1.0:
        return 1.0
    odds = p / (1.0 - p) * factor
    return odds / (1.0 + odds)


def _simulate_user(cfg: GeneratorConfig, index: int) -> tuple[list[CheckIn], GeoPoint]:
    rng = np.random.default_rng([cfg.seed, index])
    user = f"u{index:05d}"
    book = _VenueBook(cfg, rng)
    home = book.add()
    n_work = int(rng.choice(3, p=cfg.work_venue_probs))
    work = [book.add() for _ in range(n_work)]
    has_second = rng.random() < cfg.second_place_prob
    second = book.add() if has_second else None
    n_leisure = int(rng.integers(cfg.leisure_venues[0], cfg.leisure_venues[1] + 1))
    leisure = [book.add(near=book.point(home), radius_m=4000.0) if rng.random() < 0.4 else book.add()
               for _ in range(n_leisure)]
    leisure_w = 1.0 / np.arange(1, n_leisure + 1) ** 1.1
    leisure_w /= leisure_w.sum()

    # per-user propensities; noise scales how far they fall below the config means
    shy = rng.beta(1.3, 2.2) * cfg.noise
    p_night = cfg.home_night_prob * (1.0 - shy)
    p_evening = cfg.home_evening_prob * (1.0 - 0.7 * shy)
    p_day_home = 0.12 * (1.0 - shy)
    explore = float(np.clip(cfg.explore_prob * rng.uniform(0.5, 1.5), 0.0, 0.95))
    active = float(np.clip(cfg.active_day_prob * rng.uniform(0.4, 1.6), 0.02, 1.0))
    rate = cfg.checkins_per_active_day * rng.lognormal(0.0, 0.45)
    second_share = cfg.second_place_night_share * rng.uniform(0.5, 1.5) if has_second else 0.0
    hour_p = HOUR_WEIGHTS / HOUR_WEIGHTS.sum()

    def elsewhere() -> int:
        if rng.random() < explore:
            return book.add()
        return leisure[int(rng.choice(n_leisure, p=leisure_w))]

    start = date.fromisoformat(cfg.start_date)
    visits: list[tuple[datetime, int]] = []
    for d in range(cfg.days):
        day = start + timedelta(days=d)
        if rng.random() >= active:
            continue
        weekend = day.weekday() >= 5
        away = second is not None and not weekend and rng.random() < second_share * cfg.noise
        n = 1 + rng.poisson(max(rate - 1.0, 0.0))
        hours = np.sort(3.0 + rng.choice(24, size=n, p=hour_p) + rng.random(n))
        for h in hours:
            ts = datetime.combine(day, datetime.min.time()) + timedelta(seconds=int(h * 3600))
            clock = h % 24
            boost = cfg.weekend_home_boost if weekend else 1.0
            # on an away night the second place stands in for home
            night_spot = second if away else home
            if clock < 7:
                if rng.random() < _boost(p_night, boost):
                    v = night_spot
                else:
                    v = elsewhere()
            elif clock >= 17:
                if rng.random() < _boost(p_evening, boost):
                    v = night_spot if clock >= 21 else home
                else:
                    v = elsewhere()
            elif not weekend and 9 <= clock < 17 and work and rng.random() < cfg.work_hours_venue_prob:
                v = work[int(rng.integers(len(work)))]
            else:
                v = home if rng.random() < _boost(p_day_home, boost) else elsewhere()
            visits.append((ts, v))

    if not visits:
        ts = datetime.combine(start, datetime.min.time()).replace(hour=22)
        visits.append((ts, home))
    if all(v != home for _, v in visits):
        # every labelled user must tweet from home at least once
        k = int(rng.integers(len(visits)))
        visits[k] = (visits[k][0], home)

    out = []
    for ts, v in visits:
        lat, lon = _jitter(rng, book.point(v), cfg.gps_jitter_m)
        out.append(CheckIn(user, ts, lat, lon))
    return out, book.point(home)


def generate(cfg: GeneratorConfig) -> tuple[list[CheckIn], dict[str, GeoPoint]]:
    """Check-ins for every user (user-major, time-ordered) and the planted home of each."""
    checkins: list[CheckIn] = []
    truth: dict[str, GeoPoint] = {}
    for i in range(cfg.n_users):
        rows, home = _simulate_user(cfg, i)
        checkins.extend(rows)
        truth[rows[0].user_id] = home
    return checkins, truth


TRUTH_HEADER = "user_id,home_lat,home_lon"


def write_truth(truth: dict[str, GeoPoint], path: str | Path, comment: str | None = None) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        fh.write(TRUTH_HEADER + "\n")
        for user, p in truth.items():
            fh.write(f"{user},{p.lat!r},{p.lon!r}\n")


def read_truth(path: str | Path) -> dict[str, GeoPoint]:
    from .data import DataValidationError

    out = {}
    with open(path, encoding="utf-8") as fh:
        lines = [(n, l.rstrip("\n")) for n, l in enumerate(fh, 1) if not l.startswith("#")]
    if not lines or lines[0][1] != TRUTH_HEADER:
        raise DataValidationError(f"{path}: expected header {TRUTH_HEADER}")
    for n, line in lines[1:]:
        parts = line.split(",")
        try:
            out[parts[0]] = GeoPoint(float(parts[1]), float(parts[2]))
        except (IndexError, ValueError) as exc:
            raise DataValidationError(f"{path}:{n}: {exc}") from None
    return out


def argmax_baseline(dataset: Dataset, feature: str = "midnight_ratio") -> dict[str, int]:
    """Per-user cluster with the largest raw value of one feature (ties -> lowest cluster id)."""
    j = FEATURE_NAMES.index(feature)
    out = {}
    for user in dataset.users:
        recs = dataset.user_records(user)
        out[user] = min(recs, key=lambda r: (-r.features[j], r.cluster_id)).cluster_id
    return out


def bayes_gap_report(dataset: Dataset) -> dict:
    """How well each feature separates home from non-home records.

    Per feature: home and non-home means, pooled standard deviation and the
    standardized mean difference. Also reports the accuracy of picking each
    user's argmax of every feature, which is what a one-feature rule achieves.
    """
    X = dataset.feature_matrix()
    y = dataset.labels()
    truth = dataset.true_homes()
    per_feature = {}
    for j, name in enumerate(FEATURE_NAMES):
        a, b = X[y, j], X[~y, j]
        pooled = np.sqrt(((a.size - 1) * a.var(ddof=1) + (b.size - 1) * b.var(ddof=1))
                         / max(a.size + b.size - 2, 1)) if a.size > 1 and b.size > 1 else 0.0
        pick = argmax_baseline(dataset, name)
        per_feature[name] = {
            "home_mean": float(a.mean()) if a.size else 0.0,
            "other_mean": float(b.mean()) if b.size else 0.0,
            "pooled_sd": float(pooled),
            "standardized_gap": float((a.mean() - b.mean()) / pooled) if pooled > 0 else 0.0,
            "argmax_accuracy": float(np.mean([pick[u] == truth.get(u) for u in dataset.users])),
        }
    return {
        "n_users": len(dataset.users),
        "n_records": len(dataset),
        "records_per_user": len(dataset) / max(len(dataset.users), 1),
        "features": per_feature,
    }
