"""Exact range and k-nearest-neighbor execution over the two index layers.

Range: the query becomes a box in mapped space; surviving partitions are
probed per space at the pigeonhole threshold; the union of candidates is
verified with the exact combined distance.

kNN runs in two phases.  Phase one pools verified candidates from the
partitions nearest the query (expanding until k are in hand), whose k-th
distance is a certified upper bound on the true k-th distance.  Phase
two is a range query at that bound followed by a cut to k.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .dataset import Dataset, compute_stats
from .errors import IndexStateError, QueryError, UnknownIdError
from .global_index import DEFAULT_LEAF_CAPACITY, GlobalIndex
from .local_index import IndexForest, build_forest
from .metrics import MultiMetricObject, Schema, check_weights, coerce_value


@dataclass
class EngineConfig:
    """Tunable knobs of a single engine instance.

    leaf_capacity and sample_pairs shape the build; probe_space_cap and
    knn_expand shape query execution and may change between queries.
    """

    leaf_capacity: int = DEFAULT_LEAF_CAPACITY
    probe_space_cap: int | None = None   # None: probe every active space
    knn_expand: int = 1                  # partitions pooled before the first check
    sample_pairs: int = 2000             # pair budget for per-partition routing
    seed: int = 0


@dataclass
class ScanStats:
    """Work counters for one query."""

    objects_verified: int = 0
    partitions_visited: int = 0
    probes_per_space: list[int] = field(default_factory=list)
    knn_bound: float | None = None

    def merge(self, verified: int, probes: list[int]):
        self.objects_verified += verified
        self.partitions_visited += 1
        if not self.probes_per_space:
            self.probes_per_space = [0] * len(probes)
        for i, p in enumerate(probes):
            self.probes_per_space[i] += p


@dataclass(frozen=True)
class ResultSet:
    """Ordered (id, distance) rows plus the work it took to get them."""

    ids: tuple[int, ...]
    distances: tuple[float, ...]
    stats: ScanStats
    truncated: bool = False

    def pairs(self) -> list[tuple[int, float]]:
        return list(zip(self.ids, self.distances))

    def __len__(self) -> int:
        return len(self.ids)


class SearchEngine:
    """A dataset, its global partition directory, and per-partition forests."""

    def __init__(self, dataset: Dataset, config: EngineConfig | None = None):
        if len(dataset) == 0:
            raise IndexStateError("cannot index an empty dataset")
        self.dataset = dataset
        self.config = config or EngineConfig()
        if dataset.stats is None:
            dataset.stats = compute_stats(dataset, dataset.schema, seed=self.config.seed)
        self.global_index = GlobalIndex.build(dataset, self.config.leaf_capacity)
        self.forests: dict[int, IndexForest] = {}
        self._dirty: set[int] = set(self.global_index.partitions())

    @classmethod
    def from_parts(cls, dataset: Dataset, config: EngineConfig,
                   global_index: GlobalIndex,
                   forests: dict[int, IndexForest]) -> "SearchEngine":
        """Assemble an engine from previously persisted pieces.

        No rebuild happens; partitions without a saved forest stay
        pending and are built lazily on first probe.
        """
        engine = cls.__new__(cls)
        engine.dataset = dataset
        engine.config = config
        engine.global_index = global_index
        engine.forests = dict(forests)
        engine._dirty = set(global_index.partitions()) - set(forests)
        return engine

    @property
    def schema(self) -> Schema:
        return self.dataset.schema

    # -- partition forests -----------------------------------------------------------

    def forest(self, pid: int) -> IndexForest:
        """The partition's forest, (re)built on first use after a change."""
        if pid in self._dirty:
            members = self.global_index.tree.leaf(pid).ids
            self.forests[pid] = build_forest(
                self.dataset.objects(members), self.schema, self.dataset.stats,
                seed=self.config.seed, sample_pairs=self.config.sample_pairs)
            self._dirty.discard(pid)
        return self.forests[pid]

    def build_all(self):
        """Eagerly build every pending forest (queries do this lazily)."""
        for pid in sorted(self.global_index.partitions()):
            self.forest(pid)

    def _mark_dirty(self, pids):
        live = self.global_index.partitions()
        for pid in pids:
            self.forests.pop(pid, None)
            if pid in live:
                self._dirty.add(pid)
            else:
                self._dirty.discard(pid)

    # -- updates -----------------------------------------------------------------------

    def insert(self, components) -> int:
        """Add one object to the dataset and the index; returns its id."""
        oid = self.dataset.append(components)
        touched = self.global_index.insert(oid, self.dataset.object(oid).components)
        self._mark_dirty(touched)
        return oid

    def delete(self, oid: int):
        """Remove one object from the dataset and the index."""
        self.dataset.remove(oid)
        pid = self.global_index.delete(oid)
        self._mark_dirty([pid])

    # -- queries -------------------------------------------------------------------------

    def _coerced(self, q_components):
        if len(q_components) != len(self.schema):
            raise QueryError(
                f"query needs {len(self.schema)} components, got {len(q_components)}")
        return [coerce_value(s, v) for s, v in zip(self.schema, q_components)]

    def execute_range(self, q_components, weights, r: float) -> ResultSet:
        """All ids with combined distance <= r, ordered by (distance, id)."""
        if r < 0:
            raise QueryError("radius must be non-negative")
        w = check_weights(weights, len(self.schema), require_nonzero=True)
        q = self._coerced(q_components)
        stats = ScanStats(probes_per_space=[0] * len(self.schema))
        box = self.global_index.query_box(q, w, r)
        rows: list[tuple[float, int]] = []
        for pid in self.global_index.candidate_partitions(box):
            hits, (verified, probes) = self.forest(pid).verified_range(
                q, w, r, probe_cap=self.config.probe_space_cap)
            stats.merge(verified, probes)
            rows.extend(hits)
        rows.sort()
        return ResultSet(ids=tuple(i for _, i in rows),
                         distances=tuple(d for d, _ in rows), stats=stats)

    def execute_knn(self, q_components, weights, k: int) -> ResultSet:
        """The k nearest ids by combined distance, ties toward smaller ids."""
        if k < 1:
            raise QueryError("k must be at least 1")
        w = check_weights(weights, len(self.schema), require_nonzero=True)
        q = self._coerced(q_components)
        stats = ScanStats(probes_per_space=[0] * len(self.schema))
        ranked = self.global_index.ranked_partitions(q, w)
        pool: list[tuple[float, int]] = []
        upto = 0
        while upto < len(ranked) and (len(pool) < k or upto < self.config.knn_expand):
            _, pid = ranked[upto]
            upto += 1
            hits, (verified, probes) = self.forest(pid).knn_pool(q, w, k)
            stats.merge(verified, probes)
            pool.extend(hits)
        pool.sort()
        if not pool:
            raise IndexStateError("phase one produced no candidates")
        bound = pool[min(k, len(pool)) - 1][0]
        stats.knn_bound = bound
        phase2 = self.execute_range(q, w, bound)
        stats.objects_verified += phase2.stats.objects_verified
        stats.partitions_visited += phase2.stats.partitions_visited
        for i, p in enumerate(phase2.stats.probes_per_space):
            stats.probes_per_space[i] += p
        rows = list(zip(phase2.distances, phase2.ids))[:k]
        if rows and len(phase2) >= k:
            assert rows[-1][0] <= bound + 1e-12, "phase-one bound failed to cover k-th"
        return ResultSet(ids=tuple(i for _, i in rows),
                         distances=tuple(d for d, _ in rows),
                         stats=stats, truncated=len(rows) < k)

    def verify(self, q_components, weights, candidate_ids) -> list[tuple[int, float]]:
        """Exact combined distances for explicit candidates (deduplicated)."""
        w = check_weights(weights, len(self.schema))
        q = self._coerced(q_components)
        seen: set[int] = set()
        ids = []
        for i in candidate_ids:
            i = int(i)
            if i not in seen:
                seen.add(i)
                ids.append(i)
        for i in ids:
            if not self.dataset.is_live(i):
                raise UnknownIdError(f"candidate id {i} is not present")
        arr = np.asarray(ids, dtype=np.int64)
        dists = self.dataset.weighted_distances(q, w, arr)
        return [(int(i), float(d)) for i, d in zip(arr, dists)]

    # -- benchmarking -----------------------------------------------------------------------

    def run_batch(self, queries) -> float:
        """Execute a mixed query batch; returns throughput in queries/second.

        Each entry is ("range", q, w, r) or ("knn", q, w, k).
        """
        t0 = time.perf_counter()
        for kind, q, w, arg in queries:
            if kind == "range":
                self.execute_range(q, w, arg)
            else:
                self.execute_knn(q, w, int(arg))
        dt = time.perf_counter() - t0
        return len(queries) / dt if dt > 0 else float("inf")
