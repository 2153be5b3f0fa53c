"""Per-(user, location) feature extraction.

Every feature is computed from one user's clustered check-ins only. Days run
from 03:00 to 03:00 local time ("logical days"), so late-night activity is
attributed to the evening that preceded it.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass
from datetime import date, datetime, time, timedelta
from typing import Mapping, Sequence

import numpy as np

from .data import CheckIn, Dataset, LocationRecord
from .geo import GeoPoint, assign_noise, dbscan, haversine_m, haversine_matrix

DAY_START = time(3, 0)
EVENING_START = time(17, 0)
MIDNIGHT_END = time(7, 0)

PAGERANK_DAMPING = 0.85
PAGERANK_TOL = 1e-9
PAGERANK_MAX_ITER = 100


def logical_day(ts: datetime) -> date:
    """Date of the 03:00-to-03:00 window containing ``ts``."""
    if ts.time() < DAY_START:
        return ts.date() - timedelta(days=1)
    return ts.date()


def in_end_of_day_window(ts: datetime) -> bool:
    t = ts.time()
    return t >= EVENING_START or t < DAY_START


@dataclass(frozen=True)
class UserTrace:
    """A single user's check-ins in time order, each tagged with a cluster id."""

    user_id: str
    timestamps: tuple[datetime, ...]
    clusters: np.ndarray
    lat: np.ndarray
    lon: np.ndarray

    @classmethod
    def from_checkins(cls, checkins: Sequence[CheckIn], clusters: Sequence[int]) -> "UserTrace":
        if len(checkins) != len(clusters):
            raise ValueError("checkins and clusters differ in length")
        if not checkins:
            raise ValueError("a trace needs at least one check-in")
        users = {c.user_id for c in checkins}
        if len(users) != 1:
            raise ValueError(f"trace mixes users: {sorted(users)}")
        # stable: equal timestamps keep input order
        order = sorted(range(len(checkins)), key=lambda i: checkins[i].timestamp)
        return cls(
            user_id=checkins[0].user_id,
            timestamps=tuple(checkins[i].timestamp for i in order),
            clusters=np.array([clusters[i] for i in order], dtype=int),
            lat=np.array([checkins[i].lat for i in order], dtype=float),
            lon=np.array([checkins[i].lon for i in order], dtype=float),
        )

    @property
    def cluster_ids(self) -> list[int]:
        return sorted(int(c) for c in np.unique(self.clusters))

    def days(self) -> list[date]:
        return [logical_day(ts) for ts in self.timestamps]

    def day_endings(self) -> dict[date, int]:
        """Logical day -> position of its final check-in."""
        last = {}
        for i, d in enumerate(self.days()):
            last[d] = i
        return last

    def centroids(self) -> dict[int, GeoPoint]:
        return {
            c: GeoPoint(float(self.lat[self.clusters == c].mean()),
                        float(self.lon[self.clusters == c].mean()))
            for c in self.cluster_ids
        }


def check_in_ratio(trace: UserTrace, cluster: int) -> float:
    return float(np.count_nonzero(trace.clusters == cluster)) / len(trace.clusters)


def daily_total_rate(trace: UserTrace) -> float:
    return len(trace.clusters) / len(set(trace.days()))


def _end_of_day_ratio(trace: UserTrace, cluster: int, weekend_only: bool) -> float:
    num = den = 0
    for d, i in trace.day_endings().items():
        if weekend_only and d.weekday() < 5:
            continue
        if not in_end_of_day_window(trace.timestamps[i]):
            continue
        den += 1
        num += int(trace.clusters[i] == cluster)
    return num / den if den else 0.0


def end_of_day_ratio(trace: UserTrace, cluster: int) -> float:
    """Share of evening-ending days (last check-in 17:00-03:00) that end at ``cluster``."""
    return _end_of_day_ratio(trace, cluster, weekend_only=False)


def end_of_inactive_day_ratio(trace: UserTrace, cluster: int) -> float:
    """As :func:`end_of_day_ratio`, counting Saturday and Sunday logical days only."""
    return _end_of_day_ratio(trace, cluster, weekend_only=True)


def midnight_ratio(trace: UserTrace, cluster: int) -> float:
    night = np.array([ts.time() < MIDNIGHT_END for ts in trace.timestamps])
    den = int(night.sum())
    if den == 0:
        return 0.0
    return int(np.count_nonzero(night & (trace.clusters == cluster))) / den


def most_visited_cluster(trace: UserTrace) -> int:
    ids, counts = np.unique(trace.clusters, return_counts=True)
    # np.unique sorts ids, so argmax picks the lowest id on ties
    return int(ids[np.argmax(counts)])


def distance_from_most_checkin_m(trace: UserTrace, cluster: int) -> float:
    cents = trace.centroids()
    return haversine_m(cents[cluster], cents[most_visited_cluster(trace)])


# ---------------------------------------------------------------------------
# transition graph and PageRank
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TransitionGraph:
    """Weighted directed graph; ``edges[(u, v)]`` counts same-day moves u -> v."""

    nodes: tuple[int, ...]
    edges: Mapping[tuple[int, int], float]

    def reversed(self) -> "TransitionGraph":
        return TransitionGraph(self.nodes, {(v, u): w for (u, v), w in self.edges.items()})


def build_transition_graph(trace: UserTrace) -> TransitionGraph:
    edges: dict[tuple[int, int], float] = defaultdict(float)
    days = trace.days()
    for i in range(1, len(days)):
        u, v = int(trace.clusters[i - 1]), int(trace.clusters[i])
        if days[i] == days[i - 1] and u != v:
            edges[(u, v)] += 1.0
    return TransitionGraph(tuple(trace.cluster_ids), dict(edges))


def pagerank(graph: TransitionGraph, damping: float = PAGERANK_DAMPING,
             tol: float = PAGERANK_TOL, max_iter: int = PAGERANK_MAX_ITER) -> dict[int, float]:
    """Weighted PageRank by power iteration.

    Out-edges are normalized by total out-weight; a node without out-edges
    spreads its mass uniformly. Iteration stops once the L1 change between
    successive vectors drops below ``tol`` or after ``max_iter`` sweeps.
    """
    if not 0.0 < damping < 1.0:
        raise ValueError("damping must lie in (0, 1)")
    nodes = list(graph.nodes)
    n = len(nodes)
    if n == 0:
        return {}
    pos = {u: i for i, u in enumerate(nodes)}
    W = np.zeros((n, n))
    for (u, v), w in graph.edges.items():
        W[pos[u], pos[v]] += w
    out = W.sum(axis=1)
    dangling = out == 0
    P = np.divide(W, out[:, None], out=np.zeros_like(W), where=~dangling[:, None])
    r = np.full(n, 1.0 / n)
    for _ in range(max_iter):
        nxt = damping * (r @ P + r[dangling].sum() / n) + (1.0 - damping) / n
        delta = np.abs(nxt - r).sum()
        r = nxt
        if delta < tol:
            break
    r = r / r.sum()
    return {u: float(r[i]) for i, u in enumerate(nodes)}


def reverse_pagerank(graph: TransitionGraph, damping: float = PAGERANK_DAMPING,
                     tol: float = PAGERANK_TOL, max_iter: int = PAGERANK_MAX_ITER) -> dict[int, float]:
    return pagerank(graph.reversed(), damping, tol, max_iter)


# ---------------------------------------------------------------------------
# assembly
# ---------------------------------------------------------------------------

def user_feature_rows(trace: UserTrace, damping: float = PAGERANK_DAMPING,
                      tol: float = PAGERANK_TOL, max_iter: int = PAGERANK_MAX_ITER,
                      ) -> dict[int, tuple[float, ...]]:
    """Cluster id -> ten features in canonical order, for one user.

    Single pass over the trace; agrees with the per-feature functions above.
    """
    ids = trace.cluster_ids
    pos = np.searchsorted(ids, trace.clusters)
    k = len(ids)
    counts = np.bincount(pos, minlength=k).astype(float)
    total = float(len(trace.clusters))

    night = np.array([ts.time() < MIDNIGHT_END for ts in trace.timestamps])
    night_counts = np.bincount(pos[night], minlength=k).astype(float)
    night_total = night_counts.sum()

    eod = np.zeros(k)
    eod_weekend = np.zeros(k)
    days = trace.days()
    for d, i in trace.day_endings().items():
        if in_end_of_day_window(trace.timestamps[i]):
            eod[pos[i]] += 1
            if d.weekday() >= 5:
                eod_weekend[pos[i]] += 1
    eod_total, eod_weekend_total = eod.sum(), eod_weekend.sum()

    lat = np.bincount(pos, weights=trace.lat, minlength=k) / counts
    lon = np.bincount(pos, weights=trace.lon, minlength=k) / counts
    top = int(np.argmax(counts))
    dist = haversine_matrix(lat, lon, [lat[top]], [lon[top]])[:, 0]

    graph = build_transition_graph(trace)
    pr = pagerank(graph, damping, tol, max_iter)
    rpr = reverse_pagerank(graph, damping, tol, max_iter)
    rate = total / len(set(days))

    rows = {}
    for j, c in enumerate(ids):
        rows[c] = (
            counts[j] / total,
            rate,
            eod[j] / eod_total if eod_total else 0.0,
            eod_weekend[j] / eod_weekend_total if eod_weekend_total else 0.0,
            float(dist[j]),
            night_counts[j] / night_total if night_total else 0.0,
            counts[j],
            total,
            pr[c],
            rpr[c],
        )
    return rows


def group_by_user(checkins: Sequence[CheckIn], labels: Sequence[int]) -> dict[str, UserTrace]:
    """Split a flat check-in list into per-user traces, preserving first-seen user order."""
    if len(checkins) != len(labels):
        raise ValueError("checkins and labels differ in length")
    rows: dict[str, list[int]] = {}
    for i, c in enumerate(checkins):
        rows.setdefault(c.user_id, []).append(i)
    return {
        u: UserTrace.from_checkins([checkins[i] for i in idx], [int(labels[i]) for i in idx])
        for u, idx in rows.items()
    }


def label_homes(traces: Mapping[str, UserTrace], truth: Mapping[str, GeoPoint]) -> dict[str, int]:
    """Home cluster per user: the cluster whose centroid is closest to the true home point."""
    homes = {}
    for user, trace in traces.items():
        if user not in truth:
            continue
        cents = trace.centroids()
        home = truth[user]
        homes[user] = min(cents, key=lambda c: (haversine_m(cents[c], home), c))
    return homes


def extract_dataset(checkins: Sequence[CheckIn], labels: Sequence[int],
                    homes: Mapping[str, int], damping: float = PAGERANK_DAMPING,
                    tol: float = PAGERANK_TOL, max_iter: int = PAGERANK_MAX_ITER) -> Dataset:
    """Build one record per (user, cluster) from clustered check-ins.

    ``labels`` holds one cluster id per check-in (no noise labels). ``homes``
    maps user to its home cluster id; users absent from it get no home record.
    """
    if any(int(x) < 0 for x in labels):
        raise ValueError("labels contain noise; promote noise points first")
    records: list[LocationRecord] = []
    for user, trace in group_by_user(checkins, labels).items():
        cents = trace.centroids()
        rows = user_feature_rows(trace, damping, tol, max_iter)
        home = homes.get(user)
        if home is not None and home not in rows:
            raise ValueError(f"home cluster {home} of user {user} has no check-ins")
        for c, feats in rows.items():
            records.append(LocationRecord(user, c, cents[c].lat, cents[c].lon, feats, c == home))
    return Dataset(records)


def cluster_checkins(checkins: Sequence[CheckIn], eps_m: float = 100.0, min_pts: int = 2) -> np.ndarray:
    """Per-user DBSCAN with noise promoted to singletons; labels aligned with ``checkins``."""
    labels = np.empty(len(checkins), dtype=int)
    rows: dict[str, list[int]] = {}
    for i, c in enumerate(checkins):
        rows.setdefault(c.user_id, []).append(i)
    for idx in rows.values():
        pts = [GeoPoint(checkins[i].lat, checkins[i].lon) for i in idx]
        labels[idx] = assign_noise(dbscan(pts, eps_m, min_pts))
    return labels
