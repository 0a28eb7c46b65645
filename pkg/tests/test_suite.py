import numpy as np
import pytest

from hdap.cluster import ClusterPartition, cluster_fleet
from hdap.errors import DimensionError, DomainError
from hdap.fleet import DeviceProfile, Fleet, FleetConfig, measure_fleet, simulate_fleet
from hdap.model_space import chain_model, prune
from hdap.surrogate.gbrt import GbrtEnsemble, GbrtParams, TrainingSet, fit_gbrt
from hdap.surrogate.suite import (
    UNIFIED_KEY, SurrogateSuite, build_suite, cluster_targets, estimate_average_latency, estimate_many, fit_suite,
    load_suite, mape, measure_matrix, predict_devices, sample_training_set, sample_vectors, save_suite,
)

MODEL = chain_model([8, 12, 6, 10], seed=0)
FAST = GbrtParams(n_rounds=30)


def const(value, n_features=4):
    return GbrtEnsemble(value, [], 0.1, GbrtParams(), n_features)


def small_fleet(**kw):
    return simulate_fleet(FleetConfig(n_devices=12, **kw))


def test_sample_vectors_deterministic_in_box():
    a = sample_vectors(4, 50, 3)
    assert np.array_equal(a, sample_vectors(4, 50, 3))
    assert a.min() >= 0 and a.max() <= 0.95
    assert not np.array_equal(a, sample_vectors(4, 50, 3, stream=1))
    with pytest.raises(DomainError):
        sample_vectors(4, 0, 3)


def test_measure_matrix_matches_prune_path():
    fleet = small_fleet()
    X = sample_vectors(MODEL.L, 6, 1)
    expected = np.stack([measure_fleet(fleet, prune(MODEL, x), 30, 1) for x in X])
    assert np.array_equal(measure_matrix(fleet, MODEL, X, 30, 1), expected)


def test_training_set_two_scales_exact_ratio():
    fleet = Fleet((DeviceProfile("a", 1.0), DeviceProfile("b", 2.0)))
    part = ClusterPartition({"a": 1, "b": 2}, 2, {1: "a", 2: "b"})
    sets = sample_training_set(fleet, part, MODEL, 20, seed=4)
    assert np.array_equal(sets[1].X, sets[2].X)
    assert np.array_equal(sets[2].y, 2.0 * sets[1].y)
    again = sample_training_set(fleet, part, MODEL, 20, seed=4)
    assert np.array_equal(again[1].y, sets[1].y)


def test_single_zero_row_gives_unpruned_cluster_latency(monkeypatch):
    import hdap.surrogate.suite as suite_mod
    monkeypatch.setattr(suite_mod, "sample_vectors", lambda L, count, seed, **kw: np.zeros((count, L)))
    fleet = Fleet((DeviceProfile("a", 1.0), DeviceProfile("b", 1.4)))
    part = ClusterPartition({"a": 1, "b": 1}, 1, {1: "a"})
    sets = sample_training_set(fleet, part, MODEL, 1)
    assert sets[1].y[0] == pytest.approx(np.mean(measure_fleet(fleet, MODEL)), rel=1e-15)


def test_estimate_examples():
    assert estimate_average_latency(SurrogateSuite("clustering", {1: const(4.0)}), np.zeros(4)) == 4.0
    two = SurrogateSuite("clustering", {1: const(10.0), 2: const(20.0)})
    assert estimate_average_latency(two, np.zeros(4)) == 15.0
    ens = fit_gbrt(TrainingSet(sample_vectors(4, 30, 0), np.linspace(1, 3, 30)), FAST)
    same = SurrogateSuite("per-device", {"a": ens, "b": ens, "c": ens})
    x = np.full(4, 0.3)
    assert estimate_average_latency(same, x) == pytest.approx(
        float(ens.raw_predict(x[None, :])[0]), rel=1e-15)


def test_suite_invariants():
    with pytest.raises(DomainError):
        SurrogateSuite("bogus", {1: const(1.0)})
    with pytest.raises(DomainError):
        SurrogateSuite("unified", {"x": const(1.0)})
    with pytest.raises(DimensionError):
        SurrogateSuite("clustering", {1: const(1.0, 3), 2: const(1.0, 4)})
    with pytest.raises(DimensionError):
        SurrogateSuite("clustering", {1: const(1.0)}).predict_all(np.zeros((1, 3)))


def test_mape_examples():
    assert mape([1, 2], [1, 2]) == 0.0
    assert mape([110], [100]) == pytest.approx(10.0)
    assert mape([90, 110], [100, 100]) == pytest.approx(10.0)
    with pytest.raises(DomainError):
        mape([1.0], [0.0])
    with pytest.raises(DimensionError):
        mape([], [])


def test_mode_sizes_and_shared_rows():
    fleet = small_fleet(seed=2)
    part = cluster_fleet(fleet, MODEL)
    suites = {m: build_suite(m, fleet, part, MODEL, 40, seed=1, hyper=FAST)
              for m in ("per-device", "unified", "clustering")}
    assert len(suites["per-device"].models) == len(fleet)
    assert list(suites["unified"].models) == [UNIFIED_KEY]
    assert sorted(suites["clustering"].models) == list(range(1, part.K + 1))
    X = sample_vectors(MODEL.L, 5, 8)
    preds = predict_devices(suites["clustering"], X, fleet, part)
    assert preds.shape == (5, len(fleet))


def test_single_device_fleet_modes_agree():
    fleet = Fleet((DeviceProfile("solo", 1.2, 0.03),))
    part = ClusterPartition({"solo": 1}, 1, {1: "solo"})
    X = sample_vectors(MODEL.L, 8, 5)
    est = [estimate_many(build_suite(m, fleet, part, MODEL, 40, seed=2, hyper=FAST), X)
           for m in ("per-device", "unified", "clustering")]
    assert np.array_equal(est[0], est[1]) and np.array_equal(est[1], est[2])


def test_singleton_clusters_match_per_device_targets():
    fleet = small_fleet(seed=5)
    ids = fleet.ids
    part = ClusterPartition({d: i + 1 for i, d in enumerate(ids)}, len(ids), {i + 1: d for i, d in enumerate(ids)})
    lat = measure_matrix(fleet, MODEL, sample_vectors(MODEL.L, 10, 0))
    assert np.array_equal(cluster_targets(lat, fleet, part), lat)


def test_representative_only_targets():
    fleet = small_fleet(seed=6)
    part = cluster_fleet(fleet, MODEL)
    lat = measure_matrix(fleet, MODEL, sample_vectors(MODEL.L, 10, 0))
    rep = cluster_targets(lat, fleet, part, representative_only=True)
    for k in range(1, part.K + 1):
        assert np.array_equal(rep[:, k - 1], lat[:, fleet.ids.index(part.representatives[k])])


def test_suite_round_trip(tmp_path):
    fleet = small_fleet(seed=1)
    part = cluster_fleet(fleet, MODEL)
    X = sample_vectors(MODEL.L, 30, 0)
    lat = measure_matrix(fleet, MODEL, X)
    for mode in ("per-device", "unified", "clustering"):
        suite = fit_suite(mode, X, lat, fleet, part, FAST)
        save_suite(suite, tmp_path / "s.json")
        back = load_suite(tmp_path / "s.json")
        assert back.models.keys() == suite.models.keys()
        Q = sample_vectors(MODEL.L, 7, 3)
        assert np.array_equal(back.predict_all(Q), suite.predict_all(Q))


def test_predict_all_matches_single_ensembles():
    fleet = small_fleet(seed=1)
    part = cluster_fleet(fleet, MODEL)
    X = sample_vectors(MODEL.L, 30, 0)
    suite = fit_suite("per-device", X, measure_matrix(fleet, MODEL, X), fleet, part, FAST)
    Q = sample_vectors(MODEL.L, 6, 2)
    cols = np.stack([np.maximum(e.raw_predict(Q), 1e-3) for e in suite.models.values()], axis=1)
    np.testing.assert_allclose(suite.predict_all(Q), cols, rtol=1e-13)
