"""Global layer: pivot mapping plus a packed tree over the mapped vectors.

Each space elects one pivot by a farthest-first sweep.  An object's
mapped vector stacks its normalized distance to each space's pivot, one
coordinate per space.  The mapped vectors are bulk-loaded into an
R-tree whose leaves are the partitions everything downstream works on.

A range query translates into a box in mapped space.  Because the
combined score weights each space by at most 1, an object inside the
radius can sit up to r / w_i away from the query along coordinate i, so
the box is widened per dimension by the reciprocal weight; dimensions
with zero weight cannot prune at all and are marked inactive.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import Dataset
from .errors import IndexStateError, QueryError
from .metrics import (
    MultiMetricObject,
    NormalizationStats,
    Schema,
    SpaceValue,
    check_weights,
    coerce_value,
    normalized_distance,
)
from .rtree import DEFAULT_FANOUT, RTree

DEFAULT_LEAF_CAPACITY = 128


@dataclass(frozen=True)
class PivotSet:
    """One pivot per space: the component values plus their source ids."""

    values: tuple[SpaceValue, ...]
    ids: tuple[int, ...]


@dataclass(frozen=True)
class QueryBox:
    """Per-dimension intervals in mapped space; inactive dims never prune."""

    lo: np.ndarray
    hi: np.ndarray
    active: np.ndarray


def select_pivots(dataset: Dataset) -> PivotSet:
    """Farthest-first pivot per space.

    The sweep is seeded at the live object with the smallest id; the
    pivot is the object whose component lies farthest (raw distance)
    from the seed's component, ties resolved toward the smaller id.
    """
    ids = dataset.live_ids()
    if len(ids) == 0:
        raise IndexStateError("cannot select pivots from an empty dataset")
    seed = int(ids[0])
    values, pivot_ids = [], []
    for i, space in enumerate(dataset.schema):
        seed_val = dataset.component(seed, i)
        dists = dataset.space_distances(i, seed_val, ids, normalized=False)
        k = int(np.argmax(dists))  # first max wins; ids ascend, so smallest id
        pid = int(ids[k])
        values.append(dataset.component(pid, i))
        pivot_ids.append(pid)
    return PivotSet(values=tuple(values), ids=tuple(pivot_ids))


def map_components(components, pivots: PivotSet, schema: Schema,
                   stats: NormalizationStats) -> np.ndarray:
    """Mapped vector of one object: normalized distance to each pivot."""
    out = np.empty(len(schema), dtype=np.float64)
    for i, space in enumerate(schema):
        out[i] = normalized_distance(i, space, components[i], pivots.values[i], stats)
    return out


def map_all(dataset: Dataset, pivots: PivotSet) -> tuple[np.ndarray, np.ndarray]:
    """Mapped vectors for every live object, returned as (ids, matrix)."""
    ids = dataset.live_ids()
    cols = [dataset.space_distances(i, pivots.values[i], ids)
            for i in range(len(dataset.schema))]
    return ids, np.stack(cols, axis=1)


def map_query_region(q_components, weights, r: float, pivots: PivotSet,
                     schema: Schema, stats: NormalizationStats) -> QueryBox:
    """Box in mapped space that covers every possible result at radius r.

    Active dimension i spans the query's pivot distance plus or minus
    r / w_i (clamped at zero below): a result's combined score bounds
    w_i times its distance in space i, nothing tighter.
    """
    if r < 0:
        raise QueryError("radius must be non-negative")
    w = check_weights(weights, len(schema), require_nonzero=True)
    m = len(schema)
    lo = np.zeros(m)
    hi = np.full(m, np.inf)
    active = w > 0
    for i, space in enumerate(schema):
        if not active[i]:
            continue
        d = normalized_distance(i, space, q_components[i], pivots.values[i], stats)
        radius = r / w[i]
        lo[i] = max(0.0, d - radius)
        hi[i] = d + radius
    return QueryBox(lo=lo, hi=hi, active=active)


class GlobalIndex:
    """Partition directory: mapped vectors in an R-tree, leaves = partitions."""

    def __init__(self, tree: RTree, pivots: PivotSet, schema: Schema,
                 stats: NormalizationStats):
        self.tree = tree
        self.pivots = pivots
        self.schema = schema
        self.stats = stats

    @classmethod
    def build(cls, dataset: Dataset, leaf_capacity: int = DEFAULT_LEAF_CAPACITY,
              fanout: int = DEFAULT_FANOUT) -> "GlobalIndex":
        if dataset.stats is None:
            raise IndexStateError("dataset needs normalization stats before indexing")
        pivots = select_pivots(dataset)
        ids, matrix = map_all(dataset, pivots)
        tree = RTree.bulk_load(ids, matrix, leaf_capacity, fanout)
        return cls(tree, pivots, dataset.schema, dataset.stats)

    def mapped_vector(self, components) -> np.ndarray:
        return map_components(components, self.pivots, self.schema, self.stats)

    def insert(self, oid: int, components) -> list[int]:
        """Insert one object; returns partition labels whose membership changed."""
        coords = self.mapped_vector(
            [coerce_value(s, v) for s, v in zip(self.schema, components)])
        return self.tree.insert(oid, coords)

    def delete(self, oid: int) -> int:
        """Remove one object; returns the label of its former partition."""
        return self.tree.delete(oid)

    def partitions(self) -> dict[int, list[int]]:
        return self.tree.partitions()

    def query_box(self, q_components, weights, r: float) -> QueryBox:
        return map_query_region(q_components, weights, r, self.pivots,
                                self.schema, self.stats)

    def candidate_partitions(self, box: QueryBox) -> list[int]:
        """Labels of exactly the leaves the box fails to prune, ascending."""
        leaves = self.tree.search_leaves(box.lo, box.hi, box.active)
        return [leaf.pid for leaf in leaves]

    def ranked_partitions(self, q_components, weights) -> list[tuple[float, int]]:
        """All partitions by weighted L1 gap between mapped query and leaf mbr."""
        w = check_weights(weights, len(self.schema), require_nonzero=True)
        q_mapped = np.empty(len(self.schema))
        for i, space in enumerate(self.schema):
            if w[i] > 0:
                q_mapped[i] = normalized_distance(
                    i, space, q_components[i], self.pivots.values[i], self.stats)
            else:
                q_mapped[i] = 0.0  # weight zero: contributes nothing below
        return self.tree.rank_leaves(q_mapped, w)

    def nearest_partition(self, q_components, weights) -> int:
        ranked = self.ranked_partitions(q_components, weights)
        if not ranked:
            raise IndexStateError("index holds no partitions")
        return ranked[0][1]

    # -- serialization ------------------------------------------------------------

    def to_state(self) -> dict:
        pivot_vals = []
        for space, val in zip(self.schema, self.pivots.values):
            pivot_vals.append(val if space.kind.is_text else np.asarray(val).tolist())
        ids = sorted(self.tree.points)
        return {
            "pivot_values": pivot_vals,
            "pivot_ids": list(self.pivots.ids),
            "coords_ids": ids,
            "coords": [self.tree.points[i].tolist() for i in ids],
            "tree": self.tree.to_state(),
        }

    @classmethod
    def from_state(cls, state: dict, schema: Schema,
                   stats: NormalizationStats) -> "GlobalIndex":
        values = []
        for space, val in zip(schema, state["pivot_values"]):
            values.append(val if space.kind.is_text
                          else np.asarray(val, dtype=np.float64))
        pivots = PivotSet(values=tuple(values), ids=tuple(state["pivot_ids"]))
        coords = {int(i): np.asarray(v, dtype=np.float64)
                  for i, v in zip(state["coords_ids"], state["coords"])}
        tree = RTree.from_state(state["tree"], coords.__getitem__)
        return cls(tree, pivots, schema, stats)
