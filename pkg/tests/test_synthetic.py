import numpy as np
import pytest

from conftest import build_dataset
from homecast.data import FEATURE_NAMES
from homecast.geo import GeoPoint, haversine_m
from homecast.synthetic import (
    GeneratorConfig,
    InfeasibleLayoutError,
    argmax_baseline,
    bayes_gap_report,
    generate,
    read_truth,
    write_truth,
)


def test_deterministic():
    cfg = GeneratorConfig(n_users=5, days=20, seed=3)
    assert generate(cfg) == generate(cfg)
    other = generate(GeneratorConfig(n_users=5, days=20, seed=4))
    assert other[0] != generate(cfg)[0]


def test_user_streams_independent_of_population_size():
    small, _ = generate(GeneratorConfig(n_users=3, days=15, seed=1))
    big, _ = generate(GeneratorConfig(n_users=6, days=15, seed=1))
    assert big[:len(small)] == small


def test_checkins_time_ordered_per_user():
    checkins, truth = generate(GeneratorConfig(n_users=4, days=30, seed=2))
    by_user = {}
    for c in checkins:
        by_user.setdefault(c.user_id, []).append(c.timestamp)
    assert set(by_user) == set(truth)
    for ts in by_user.values():
        assert ts == sorted(ts)


def test_noise_free_users_sleep_at_home():
    cfg = GeneratorConfig(n_users=25, days=60, seed=5, noise=0.0, home_night_prob=1.0)
    _, _, _, ds = build_dataset(cfg)
    j = FEATURE_NAMES.index("midnight_ratio")
    for user, home in ds.true_homes().items():
        rec = next(r for r in ds.user_records(user) if r.cluster_id == home)
        assert rec.features[j] == 1.0
    pick = argmax_baseline(ds, "midnight_ratio")
    assert all(pick[u] == c for u, c in ds.true_homes().items())


def test_default_scale_records_per_user():
    _, _, _, ds = build_dataset(GeneratorConfig(n_users=40, seed=42))
    assert 40 <= len(ds) / len(ds.users) <= 80


def test_home_cluster_contains_planted_home(small_world):
    _, truth, _, ds = small_world
    for user, cid in ds.true_homes().items():
        rec = next(r for r in ds.user_records(user) if r.cluster_id == cid)
        assert haversine_m(GeoPoint(rec.lat, rec.lon), truth[user]) < 50


def test_config_validation():
    with pytest.raises(ValueError):
        GeneratorConfig.from_dict({"n_users": 3, "bogus": 1})
    with pytest.raises(ValueError):
        GeneratorConfig(noise=1.5)
    with pytest.raises(ValueError):
        GeneratorConfig(work_venue_probs=(0.5, 0.6, 0.1))
    with pytest.raises(ValueError):
        GeneratorConfig(min_venue_separation_m=120.0)
    cfg = GeneratorConfig(n_users=2)
    assert GeneratorConfig.from_dict(cfg.to_dict()) == cfg


def test_infeasible_layout():
    cfg = GeneratorConfig(n_users=1, days=5, lat_range=(41.8, 41.8001), lon_range=(-87.6, -87.5999))
    with pytest.raises(InfeasibleLayoutError):
        generate(cfg)


def test_truth_round_trip(tmp_path):
    _, truth = generate(GeneratorConfig(n_users=3, days=5, seed=1))
    p = tmp_path / "truth.csv"
    write_truth(truth, p, "homecast test")
    assert read_truth(p) == truth


def test_gap_report(small_dataset):
    rep = bayes_gap_report(small_dataset)
    assert rep["n_users"] == len(small_dataset.users)
    mid = rep["features"]["midnight_ratio"]
    assert mid["standardized_gap"] > 0
    assert 0.0 <= mid["argmax_accuracy"] <= 1.0
