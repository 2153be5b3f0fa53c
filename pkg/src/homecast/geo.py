"""Haversine distance and per-user DBSCAN clustering of check-in points."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

EARTH_RADIUS_M = 6_371_000.0
NOISE = -1


@dataclass(frozen=True)
class GeoPoint:
    lat: float
    lon: float

    def __post_init__(self):
        if not (-90.0 <= self.lat <= 90.0) or not (-180.0 <= self.lon <= 180.0):
            raise ValueError(f"invalid coordinates ({self.lat}, {self.lon})")


def haversine_m(a: GeoPoint, b: GeoPoint) -> float:
    """Great-circle distance in meters between two points."""
    return float(haversine_matrix([a.lat], [a.lon], [b.lat], [b.lon])[0, 0])


def haversine_matrix(lat1, lon1, lat2, lon2) -> np.ndarray:
    """Pairwise haversine distances (meters), shape ``(len(lat1), len(lat2))``."""
    p1 = np.radians(np.asarray(lat1, dtype=float))[:, None]
    p2 = np.radians(np.asarray(lat2, dtype=float))[None, :]
    l1 = np.radians(np.asarray(lon1, dtype=float))[:, None]
    l2 = np.radians(np.asarray(lon2, dtype=float))[None, :]
    h = np.sin((p2 - p1) / 2.0) ** 2 + np.cos(p1) * np.cos(p2) * np.sin((l2 - l1) / 2.0) ** 2
    return 2.0 * EARTH_RADIUS_M * np.arcsin(np.sqrt(np.clip(h, 0.0, 1.0)))


def _coords(points: Sequence[GeoPoint]) -> tuple[np.ndarray, np.ndarray]:
    return (np.array([p.lat for p in points], dtype=float),
            np.array([p.lon for p in points], dtype=float))


def dbscan(points: Sequence[GeoPoint], eps_m: float = 100.0, min_pts: int = 2) -> np.ndarray:
    """Density-based clustering over haversine distance.

    A point is core when at least ``min_pts`` points (itself included) lie
    within ``eps_m``. Clusters are the connected components of the core-core
    neighbor graph, numbered by their lowest-index core point. A non-core
    point within reach of a core point takes the cluster of its lowest-index
    core neighbor; everything else is ``NOISE`` (-1).

    Returns an integer label array aligned with ``points``.
    """
    if eps_m <= 0:
        raise ValueError("eps_m must be positive")
    if min_pts < 1:
        raise ValueError("min_pts must be >= 1")
    n = len(points)
    if n == 0:
        return np.zeros(0, dtype=int)
    lat, lon = _coords(points)
    adj = haversine_matrix(lat, lon, lat, lon) <= eps_m
    core = adj.sum(axis=1) >= min_pts
    labels = np.full(n, NOISE, dtype=int)
    core_idx = np.flatnonzero(core)
    if core_idx.size == 0:
        return labels
    sub = adj[np.ix_(core_idx, core_idx)]
    _, comp = connected_components(csr_matrix(sub), directed=False)
    # renumber components by first (lowest-index) core point
    remap: dict[int, int] = {}
    for c in comp:
        if c not in remap:
            remap[c] = len(remap)
    labels[core_idx] = [remap[c] for c in comp]
    for i in np.flatnonzero(~core):
        reach = np.flatnonzero(adj[i] & core)
        if reach.size:
            labels[i] = labels[reach[0]]
    return labels


def assign_noise(labels: np.ndarray) -> np.ndarray:
    """Promote every noise point to a fresh singleton cluster (ids appended)."""
    out = np.array(labels, dtype=int, copy=True)
    next_id = int(out.max()) + 1 if out.size and out.max() >= 0 else 0
    for i in np.flatnonzero(out == NOISE):
        out[i] = next_id
        next_id += 1
    return out


def centroids(points: Sequence[GeoPoint], labels: np.ndarray) -> dict[int, GeoPoint]:
    """Arithmetic mean lat/lon for every non-noise cluster."""
    lat, lon = _coords(points)
    labels = np.asarray(labels)
    if len(labels) != len(points):
        raise ValueError("labels and points differ in length")
    out = {}
    for c in np.unique(labels[labels != NOISE]):
        mask = labels == c
        out[int(c)] = GeoPoint(float(lat[mask].mean()), float(lon[mask].mean()))
    return out


def centroid_of(points: Sequence[GeoPoint], labels: np.ndarray, cluster_id: int) -> GeoPoint:
    cents = centroids(points, labels)
    if cluster_id not in cents:
        raise KeyError(f"unknown cluster id {cluster_id}")
    return cents[cluster_id]
