"""End-to-end exactness of the two-layer engine against linear scans."""

import numpy as np
import pytest

from oracle import BruteForce
from mmsearch.dataset import Dataset
from mmsearch.engine import EngineConfig, SearchEngine
from mmsearch.errors import (IndexStateError, InvalidWeightsError, QueryError,
                             UnknownIdError)
from mmsearch.synth import (calibrated_radius, default_schema, random_query,
                            random_weights, synthetic_dataset)


def _assert_matches(result, want):
    assert list(result.ids) == [i for _, i in want]
    assert list(result.distances) == pytest.approx([d for d, _ in want],
                                                   abs=1e-9)


def test_range_matches_oracle(small_engine, small_oracle, rng):
    for _ in range(30):
        q = random_query(small_engine.dataset, rng)
        w = random_weights(3, rng, zero_prob=0.3)
        r = calibrated_radius(small_engine.dataset, q, w,
                              float(rng.uniform(0.002, 0.08)))
        _assert_matches(small_engine.execute_range(q, w, r),
                        small_oracle.range(q, w, r))


def test_range_empty_and_everything(small_engine, small_oracle, rng):
    q = random_query(small_engine.dataset, rng)
    w = (1.0, 1.0, 1.0)
    assert len(small_engine.execute_range(q, w, 0.0)) == len(
        small_oracle.range(q, w, 0.0))
    everything = small_engine.execute_range(q, w, 1e9)
    assert len(everything) == len(small_engine.dataset)


def test_knn_matches_oracle(small_engine, small_oracle, rng):
    for k in (1, 5, 10, 50):
        for _ in range(8):
            q = random_query(small_engine.dataset, rng)
            w = random_weights(3, rng, zero_prob=0.25)
            _assert_matches(small_engine.execute_knn(q, w, k),
                            small_oracle.knn(q, w, k))


def test_single_space_weights(small_engine, small_oracle, rng):
    # zeroed spaces must not influence results; text-only hits integer ties
    for w in ((1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (0.0, 0.0, 1.0)):
        q = random_query(small_engine.dataset, rng)
        _assert_matches(small_engine.execute_knn(q, w, 25),
                        small_oracle.knn(q, w, 25))
        r = calibrated_radius(small_engine.dataset, q, w, 0.02)
        _assert_matches(small_engine.execute_range(q, w, r),
                        small_oracle.range(q, w, r))


def test_probe_cap_never_changes_results(small_dataset, small_oracle, rng):
    engines = {cap: SearchEngine(small_dataset,
                                 EngineConfig(leaf_capacity=64, seed=13,
                                              probe_space_cap=cap))
               for cap in (None, 1, 2)}
    for _ in range(12):
        q = random_query(small_dataset, rng)
        w = random_weights(3, rng)
        r = calibrated_radius(small_dataset, q, w, 0.03)
        want = small_oracle.range(q, w, r)
        for cap, engine in engines.items():
            result = engine.execute_range(q, w, r)
            _assert_matches(result, want)
            if cap == 1:
                assert (sum(result.stats.probes_per_space)
                        == result.stats.partitions_visited)


def test_knn_expand_never_changes_results(small_dataset, small_oracle, rng):
    eager = SearchEngine(small_dataset, EngineConfig(leaf_capacity=64, seed=13,
                                                     knn_expand=4))
    for _ in range(10):
        q = random_query(small_dataset, rng)
        w = random_weights(3, rng)
        _assert_matches(eager.execute_knn(q, w, 10), small_oracle.knn(q, w, 10))


def test_scan_stats_accounting(small_engine, rng):
    q = random_query(small_engine.dataset, rng)
    w = (1.0, 1.0, 1.0)
    r = calibrated_radius(small_engine.dataset, q, w, 0.02)
    result = small_engine.execute_range(q, w, r)
    assert result.stats.objects_verified >= len(result)
    assert result.stats.partitions_visited >= 1
    assert len(result.stats.probes_per_space) == 3

    knn = small_engine.execute_knn(q, w, 5)
    assert knn.stats.knn_bound is not None
    assert knn.stats.knn_bound >= knn.distances[-1]


def test_partition_pruning_skips_most_objects(small_engine, rng):
    # blob-clustered data at ~1% selectivity: far partitions are never probed
    n = len(small_engine.dataset)
    verified = []
    for _ in range(20):
        q = random_query(small_engine.dataset, rng)
        w = (1.0, 1.0, 1.0)
        r = calibrated_radius(small_engine.dataset, q, w, 0.01)
        verified.append(small_engine.execute_range(q, w, r).stats.objects_verified)
    assert np.mean(verified) <= 0.2 * n


def test_knn_truncates_when_k_exceeds_data():
    ds = synthetic_dataset(40, seed=3)
    engine = SearchEngine(ds, EngineConfig(seed=3))
    result = engine.execute_knn(random_query(ds, np.random.default_rng(0)),
                                (1.0, 1.0, 1.0), 100)
    assert result.truncated and len(result) == 40
    full = engine.execute_knn(random_query(ds, np.random.default_rng(1)),
                              (1.0, 1.0, 1.0), 40)
    assert not full.truncated and len(full) == 40


def test_verify_deduplicates_and_checks_ids(small_engine, small_oracle, rng):
    q = random_query(small_engine.dataset, rng)
    w = (0.5, 0.8, 0.2)
    ids = small_engine.dataset.live_ids()[:4].tolist()
    rows = small_engine.verify(q, w, [ids[0], ids[1], ids[0], ids[2]])
    assert [i for i, _ in rows] == [ids[0], ids[1], ids[2]]
    by_id = dict(small_oracle.all_distances(q, w))
    # oracle rows are (distance, id); invert for the comparison
    want = {oid: d for d, oid in small_oracle.all_distances(q, w)}
    for oid, d in rows:
        assert d == pytest.approx(want[oid], abs=1e-9)
    with pytest.raises(UnknownIdError):
        small_engine.verify(q, w, [ids[0], 10 ** 9])


def test_updates_keep_results_exact(rng):
    ds = synthetic_dataset(300, seed=21, blobs=4)
    engine = SearchEngine(ds, EngineConfig(leaf_capacity=48, seed=21))
    engine.build_all()

    removed = [int(i) for i in rng.choice(ds.live_ids(), 9, replace=False)]
    for oid in removed:
        engine.delete(oid)
    added = [engine.insert(random_query(ds, rng)) for _ in range(9)]

    oracle = BruteForce(ds)  # rebuilt over the post-churn rows
    seen = set()
    for _ in range(20):
        q = random_query(ds, rng)
        w = random_weights(3, rng, zero_prob=0.2)
        r = calibrated_radius(ds, q, w, 0.05)
        got = engine.execute_range(q, w, r)
        _assert_matches(got, oracle.range(q, w, r))
        seen.update(got.ids)
        knn = engine.execute_knn(q, w, 12)
        _assert_matches(knn, oracle.knn(q, w, 12))
        seen.update(knn.ids)
    assert not seen & set(removed)

    with pytest.raises(UnknownIdError):
        engine.delete(removed[0])
    assert engine.verify((ds.object(added[0]).components), (1, 1, 1), added)


def test_rebuild_reproduces_results(small_dataset, rng):
    twin = SearchEngine(small_dataset, EngineConfig(leaf_capacity=64, seed=13))
    baseline = SearchEngine(small_dataset, EngineConfig(leaf_capacity=64, seed=13))
    for _ in range(6):
        q = random_query(small_dataset, rng)
        w = random_weights(3, rng)
        r = calibrated_radius(small_dataset, q, w, 0.02)
        a, b = twin.execute_range(q, w, r), baseline.execute_range(q, w, r)
        assert a.ids == b.ids and a.distances == b.distances
        ka, kb = twin.execute_knn(q, w, 7), baseline.execute_knn(q, w, 7)
        assert ka.ids == kb.ids and ka.distances == kb.distances


def test_query_argument_validation(small_engine, rng):
    q = random_query(small_engine.dataset, rng)
    with pytest.raises(QueryError):
        small_engine.execute_range(q, (1, 1, 1), -0.5)
    with pytest.raises(QueryError):
        small_engine.execute_knn(q, (1, 1, 1), 0)
    with pytest.raises(QueryError):
        small_engine.execute_range(q[:2], (1, 1, 1), 1.0)
    with pytest.raises(InvalidWeightsError):
        small_engine.execute_range(q, (0.0, 0.0, 0.0), 1.0)
    with pytest.raises(InvalidWeightsError):
        small_engine.execute_knn(q, (1.0, 1.0), 3)


def test_empty_dataset_rejected():
    _, schema = default_schema()
    with pytest.raises(IndexStateError):
        SearchEngine(Dataset(schema))


def test_run_batch_reports_throughput(small_engine, rng):
    q = random_query(small_engine.dataset, rng)
    batch = [("range", q, (1.0, 1.0, 1.0), 0.05), ("knn", q, (1.0, 0.5, 0.2), 5)]
    assert small_engine.run_batch(batch) > 0.0
