import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from homecast.geo import NOISE, GeoPoint, assign_noise, centroid_of, centroids, dbscan, haversine_m


def test_haversine_identity():
    a = GeoPoint(41.8, -87.6)
    assert haversine_m(a, a) == 0.0


def test_one_degree_at_equator():
    assert haversine_m(GeoPoint(0, 0), GeoPoint(0, 1)) == pytest.approx(111_195, abs=5)


coords = st.tuples(st.floats(-90, 90), st.floats(-180, 180))


@given(coords, coords)
def test_haversine_symmetric_and_matches_oracle(a, b):
    pa, pb = GeoPoint(*a), GeoPoint(*b)
    assert haversine_m(pa, pb) == haversine_m(pb, pa)
    assert haversine_m(pa, pb) == pytest.approx(oracles.haversine(a, b), rel=1e-9, abs=1e-6)


def offset(p, north_m, east_m):
    dlat = north_m / 111_195.0
    dlon = east_m / (111_195.0 * np.cos(np.radians(p[0])))
    return (p[0] + dlat, p[1] + dlon)


def test_pair_within_eps_is_one_cluster():
    a = (41.8, -87.6)
    pts = [GeoPoint(*a), GeoPoint(*offset(a, 50, 0))]
    labels = dbscan(pts, 100, 2)
    assert labels[0] == labels[1] != NOISE


def test_pair_far_apart_is_noise():
    a = (41.8, -87.6)
    pts = [GeoPoint(*a), GeoPoint(*offset(a, 500, 0))]
    assert dbscan(pts, 100, 2).tolist() == [NOISE, NOISE]


def test_min_pts_one_makes_everything_core():
    a = (41.8, -87.6)
    pts = [GeoPoint(*a), GeoPoint(*offset(a, 500, 0))]
    assert NOISE not in dbscan(pts, 100, 1)


def test_bad_parameters():
    with pytest.raises(ValueError):
        dbscan([GeoPoint(0, 0)], 0, 2)
    with pytest.raises(ValueError):
        dbscan([GeoPoint(0, 0)], 100, 0)


def random_instance(rng, n):
    centers = [(41.7 + 0.3 * rng.random(), -87.8 + 0.3 * rng.random()) for _ in range(rng.integers(1, 8))]
    pts = []
    for _ in range(n):
        c = centers[rng.integers(len(centers))]
        pts.append(offset(c, rng.normal(0, 120), rng.normal(0, 120)))
    return pts


def test_dbscan_matches_bruteforce_oracle():
    rng = np.random.default_rng(2024)
    for _ in range(50):
        n = int(rng.integers(1, 201))
        eps = float(rng.uniform(30, 250))
        min_pts = int(rng.integers(1, 6))
        pts = random_instance(rng, n)
        got = dbscan([GeoPoint(*p) for p in pts], eps, min_pts).tolist()
        want = oracles.dbscan(pts, eps, min_pts)
        assert oracles.same_partition(got, want), (n, eps, min_pts)


def test_cluster_numbering_matches_oracle_exactly():
    # clusters are numbered in order of their lowest-index core point
    rng = np.random.default_rng(5)
    raw = random_instance(rng, 120)
    labels = dbscan([GeoPoint(*p) for p in raw], 100, 3)
    assert labels.tolist() == oracles.dbscan(raw, 100, 3)


def test_permutation_invariant_for_small_min_pts():
    # with min_pts <= 2 every non-noise point is core, so no border ties exist
    rng = np.random.default_rng(11)
    pts = random_instance(rng, 150)
    labels = dbscan([GeoPoint(*p) for p in pts], 100, 2)
    perm = rng.permutation(len(pts))
    shuffled = dbscan([GeoPoint(*pts[i]) for i in perm], 100, 2)
    assert oracles.same_partition(labels[perm].tolist(), shuffled.tolist())


def test_assign_noise_appends_singletons():
    out = assign_noise(np.array([NOISE, 0, NOISE, 1, 0]))
    assert out.tolist() == [2, 0, 3, 1, 0]
    assert assign_noise(np.array([NOISE, NOISE])).tolist() == [0, 1]


def test_centroids():
    pts = [GeoPoint(1.0, 2.0), GeoPoint(3.0, 4.0), GeoPoint(10.0, 10.0),
           GeoPoint(0.0, 0.0), GeoPoint(0.3, 0.6), GeoPoint(0.6, 0.3)]
    labels = np.array([0, 0, 1, 2, 2, 2])
    cents = centroids(pts, labels)
    assert cents[0] == GeoPoint(2.0, 3.0)
    assert cents[1] == GeoPoint(10.0, 10.0)
    assert cents[2].lat == pytest.approx(0.3) and cents[2].lon == pytest.approx(0.3)
    assert centroid_of(pts, labels, 1) == GeoPoint(10.0, 10.0)
    with pytest.raises(KeyError):
        centroid_of(pts, labels, 9)
