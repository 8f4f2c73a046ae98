"""Per-partition index forest: one index per space, picked by the data.

Text always gets a 2-gram inverted index with a count filter.  Vector
spaces are routed by the intrinsic dimensionality estimate mu^2 / (2 *
sigma^2) over sampled pair distances: above 5 a vantage-point tree
handles the space (box bounds degrade in high dimension), otherwise an
R-tree.  Every probe verifies its survivors exactly, so probes return
precise per-space result sets, never approximations.

Forests are self-contained: they copy their members' components so a
remote worker can keep probing without the source dataset.
"""

from __future__ import annotations

import enum
import heapq
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .dataset import lower_median, sample_pair_indices, _pair_distances, _space_rng
from .errors import IndexStateError, InvalidWeightsError, QueryError
from .metrics import (
    MultiMetricObject,
    NormalizationStats,
    Schema,
    Space,
    SpaceKind,
    check_weights,
    coerce_value,
    encode_strings,
    levenshtein_batch,
)
from .rtree import Node, RTree

MVP_DIMENSION_THRESHOLD = 5.0
MVP_BUCKET = 16
MVP_SAMPLE = 32
LOCAL_LEAF_CAPACITY = 32
GRAM_WIDTH = 2


class IndexKind(enum.Enum):
    RTREE = "rtree"
    MVP = "mvp"
    INVERTED = "inverted"


@dataclass(frozen=True)
class HiddenDim:
    """Intrinsic dimensionality estimate of one space's pair distances."""

    mu: float
    sigma2: float
    value: float
    degenerate: bool


def hidden_dimension(values, space: Space, sample_pairs: int = 2000,
                     seed: int = 0) -> HiddenDim:
    """Estimate mu^2 / (2 sigma^2) from sampled pairwise raw distances.

    Zero variance (all sampled distances equal) and sets of fewer than
    two objects are flagged degenerate with value 0.
    """
    n = len(values)
    if n < 2:
        return HiddenDim(mu=0.0, sigma2=0.0, value=0.0, degenerate=True)
    rng = _space_rng(seed, space.name)
    pairs = sample_pair_indices(n, sample_pairs, rng)
    dists = _pair_distances(space, values, pairs)
    mu = float(dists.mean())
    sigma2 = float(dists.var())  # population variance
    if sigma2 <= 0.0:
        return HiddenDim(mu=mu, sigma2=0.0, value=0.0, degenerate=True)
    return HiddenDim(mu=mu, sigma2=sigma2, value=mu * mu / (2.0 * sigma2),
                     degenerate=False)


def choose_index(space: Space, hd: HiddenDim) -> IndexKind:
    """Routing rule: text -> inverted; d > 5 -> vantage tree; else R-tree."""
    if space.kind.is_text:
        return IndexKind.INVERTED
    if hd.value > MVP_DIMENSION_THRESHOLD:
        return IndexKind.MVP
    return IndexKind.RTREE


def pigeonhole_threshold(weights, r: float) -> float:
    """Per-space candidate threshold r / sum(weights).

    Any object within combined radius r is within this much of the query
    in at least one positively weighted space, so unioning per-space
    probes at this threshold can never lose a result.
    """
    w = np.asarray(weights, dtype=np.float64)
    total = float(w.sum())
    if total <= 0.0:
        raise InvalidWeightsError("weights sum to zero; no space is active")
    return r / total


def _raw_distances(kind: SpaceKind, block: np.ndarray, q: np.ndarray) -> np.ndarray:
    diff = block - q[None, :]
    if kind is SpaceKind.L1_VECTOR:
        return np.abs(diff).sum(axis=1)
    return np.sqrt((diff * diff).sum(axis=1))


# -- vantage-point tree -------------------------------------------------------------


class _MvpNode:
    __slots__ = ("vp1", "vp2", "children", "ids", "table")

    def __init__(self):
        self.vp1 = None        # (id, vector) stored at the node
        self.vp2 = None
        self.children = None   # list of (b1_lo, b1_hi, b2_lo, b2_hi, node)
        self.ids = None        # leaf members
        self.table = None      # leaf: (len(ids), n_ancestors) raw distances


class MvpTree:
    """Vantage-point tree: 2 vantage points per node, quantile fanout 4.

    Vantage points are the farthest pair among an evenly spaced sample
    of at most 32 members.  Each leaf member keeps its raw distance to
    every ancestor vantage point, giving a triangle lower bound that is
    checked before any real distance computation.
    """

    def __init__(self, kind: SpaceKind, ids: Sequence[int], vectors: np.ndarray,
                 bucket: int = MVP_BUCKET, sample: int = MVP_SAMPLE):
        self.kind = kind
        self.bucket = bucket
        self.sample = sample
        ids = [int(i) for i in ids]
        self.vec_of = {i: vectors[k] for k, i in enumerate(ids)}
        order = np.argsort(ids)
        self.root = self._build(np.asarray(ids, dtype=np.int64)[order],
                                vectors[order], [])
        self.size = len(ids)

    def _dist(self, a: np.ndarray, b: np.ndarray) -> float:
        if self.kind is SpaceKind.L1_VECTOR:
            return float(np.abs(a - b).sum())
        return float(np.sqrt(((a - b) ** 2).sum()))

    def _build(self, ids: np.ndarray, vecs: np.ndarray, anc_rows: list) -> _MvpNode:
        node = _MvpNode()
        n = len(ids)
        if n <= self.bucket or n < 4:
            node.ids = ids.copy()
            node.table = (np.stack(anc_rows, axis=1)
                          if anc_rows else np.zeros((n, 0)))
            return node
        # farthest pair among an evenly spaced sample; ids ascend within nodes
        take = min(self.sample, n)
        cand = np.unique(np.round(np.linspace(0, n - 1, take)).astype(int))
        best = (-1.0, 0, 0)
        for a in range(len(cand)):
            da = _raw_distances(self.kind, vecs[cand[a + 1:]], vecs[cand[a]])
            if len(da) == 0:
                continue
            j = int(np.argmax(da))
            if da[j] > best[0]:
                best = (float(da[j]), int(cand[a]), int(cand[a + 1 + j]))
        _, i1, i2 = best
        node.vp1 = (int(ids[i1]), vecs[i1].copy())
        node.vp2 = (int(ids[i2]), vecs[i2].copy())
        keep = np.ones(n, dtype=bool)
        keep[[i1, i2]] = False
        ids, vecs = ids[keep], vecs[keep]
        rows = [r[keep] for r in anc_rows]
        d1 = _raw_distances(self.kind, vecs, node.vp1[1])
        d2 = _raw_distances(self.kind, vecs, node.vp2[1])
        m1 = lower_median(d1)
        groups = []
        for mask1 in (d1 <= m1, d1 > m1):
            if not mask1.any():
                continue
            m2 = lower_median(d2[mask1])
            for mask2 in (mask1 & (d2 <= m2), mask1 & (d2 > m2)):
                if mask2.any():
                    groups.append(mask2)
        # a degenerate split (single group) still recurses on n - 2 members,
        # so termination holds even when all pair distances coincide
        node.children = []
        for mask in groups:
            child = self._build(ids[mask], vecs[mask],
                                [r[mask] for r in rows] + [d1[mask], d2[mask]])
            node.children.append((float(d1[mask].min()), float(d1[mask].max()),
                                  float(d2[mask].min()), float(d2[mask].max()),
                                  child))
        return node

    def range_probe(self, q: np.ndarray, t_raw: float) -> list[tuple[float, int]]:
        """All (raw distance, id) with distance <= t_raw."""
        out: list[tuple[float, int]] = []
        self._range(self.root, q, t_raw, (), out)
        return out

    def _range(self, node: _MvpNode, q: np.ndarray, t: float,
               anc_dq: tuple, out: list):
        if node.ids is not None:
            if node.table.shape[1]:
                lb = np.abs(node.table - np.asarray(anc_dq)[None, :]).max(axis=1)
                survivors = np.flatnonzero(lb <= t)
            else:
                survivors = np.arange(len(node.ids))
            if len(survivors):
                block = np.stack([self.vec_of[int(i)] for i in node.ids[survivors]])
                dists = _raw_distances(self.kind, block, q)
                for d, i in zip(dists, node.ids[survivors]):
                    if d <= t:
                        out.append((float(d), int(i)))
            return
        dq1 = self._dist(q, node.vp1[1])
        dq2 = self._dist(q, node.vp2[1])
        if dq1 <= t:
            out.append((dq1, node.vp1[0]))
        if dq2 <= t:
            out.append((dq2, node.vp2[0]))
        for b1_lo, b1_hi, b2_lo, b2_hi, child in node.children:
            if dq1 - b1_hi > t or b1_lo - dq1 > t:
                continue
            if dq2 - b2_hi > t or b2_lo - dq2 > t:
                continue
            self._range(child, q, t, anc_dq + (dq1, dq2), out)

    def knn_probe(self, q: np.ndarray, k: int) -> list[tuple[float, int]]:
        """k smallest (raw distance, id), best-first with a shrinking bound."""
        if self.root is None or k < 1:
            return []
        worst: list[tuple[float, int]] = []  # max-heap via (-d, -id)

        def offer(d: float, i: int):
            if len(worst) < k:
                heapq.heappush(worst, (-d, -i))
            elif (d, i) < (-worst[0][0], -worst[0][1]):
                heapq.heapreplace(worst, (-d, -i))

        def kth() -> float:
            return -worst[0][0] if len(worst) == k else math.inf

        seq = 0
        heap: list = [(0.0, seq, self.root, ())]
        while heap:
            lb, _, node, anc_dq = heapq.heappop(heap)
            if lb > kth():
                continue
            if node.ids is not None:
                if node.table.shape[1]:
                    lbs = np.abs(node.table - np.asarray(anc_dq)[None, :]).max(axis=1)
                else:
                    lbs = np.zeros(len(node.ids))
                for pos in np.argsort(lbs, kind="stable"):
                    if lbs[pos] > kth():
                        continue
                    d = self._dist(self.vec_of[int(node.ids[pos])], q)
                    offer(float(d), int(node.ids[pos]))
                continue
            dq1 = self._dist(q, node.vp1[1])
            dq2 = self._dist(q, node.vp2[1])
            offer(dq1, node.vp1[0])
            offer(dq2, node.vp2[0])
            for b1_lo, b1_hi, b2_lo, b2_hi, child in node.children:
                clb = max(lb, dq1 - b1_hi, b1_lo - dq1, dq2 - b2_hi, b2_lo - dq2)
                if clb <= kth():
                    seq += 1
                    heapq.heappush(heap, (clb, seq, child, anc_dq + (dq1, dq2)))
        return sorted((-d, -i) for d, i in worst)

    def check_tables(self):
        """Recompute every stored vantage distance; raise on any mismatch."""

        def walk(node: _MvpNode, anc: list):
            if node.ids is not None:
                for row, oid in zip(node.table, node.ids):
                    for d_stored, (vid, vvec) in zip(row, anc):
                        d_true = self._dist(self.vec_of[int(oid)], vvec)
                        if d_stored != d_true:
                            raise IndexStateError(
                                f"stored distance {d_stored} != {d_true} "
                                f"for object {oid} vs vantage {vid}")
                return
            for *_, child in node.children:
                walk(child, anc + [node.vp1, node.vp2])

        walk(self.root, [])

    def members(self) -> list[int]:
        out: list[int] = []

        def walk(node: _MvpNode):
            if node.ids is not None:
                out.extend(int(i) for i in node.ids)
                return
            out.append(node.vp1[0])
            out.append(node.vp2[0])
            for *_, child in node.children:
                walk(child)

        walk(self.root)
        return out

    def to_state(self) -> dict:
        def dump(node: _MvpNode):
            if node.ids is not None:
                return {"ids": node.ids.tolist(), "table": node.table.tolist()}
            return {
                "vp1": [node.vp1[0], node.vp1[1].tolist()],
                "vp2": [node.vp2[0], node.vp2[1].tolist()],
                "children": [[b1l, b1h, b2l, b2h, dump(c)]
                             for b1l, b1h, b2l, b2h, c in node.children],
            }

        ids = sorted(self.vec_of)
        return {"kind": self.kind.value, "bucket": self.bucket, "sample": self.sample,
                "ids": ids, "vectors": [self.vec_of[i].tolist() for i in ids],
                "root": dump(self.root)}

    @classmethod
    def from_state(cls, state: dict) -> "MvpTree":
        tree = cls.__new__(cls)
        tree.kind = SpaceKind(state["kind"])
        tree.bucket = state["bucket"]
        tree.sample = state["sample"]
        tree.vec_of = {int(i): np.asarray(v, dtype=np.float64)
                       for i, v in zip(state["ids"], state["vectors"])}
        tree.size = len(tree.vec_of)

        def load(d: dict) -> _MvpNode:
            node = _MvpNode()
            if "ids" in d:
                node.ids = np.asarray(d["ids"], dtype=np.int64)
                node.table = np.asarray(d["table"], dtype=np.float64)
                if node.table.ndim == 1:
                    node.table = node.table.reshape(len(node.ids), 0)
                return node
            node.vp1 = (int(d["vp1"][0]), np.asarray(d["vp1"][1], dtype=np.float64))
            node.vp2 = (int(d["vp2"][0]), np.asarray(d["vp2"][1], dtype=np.float64))
            node.children = [(b1l, b1h, b2l, b2h, load(c))
                             for b1l, b1h, b2l, b2h, c in d["children"]]
            return node

        tree.root = load(state["root"])
        return tree


# -- q-gram inverted index ------------------------------------------------------------


def grams_of(s: str, width: int = GRAM_WIDTH) -> dict[str, int]:
    """Multiset of overlapping width-grams as gram -> count."""
    out: dict[str, int] = {}
    for i in range(len(s) - width + 1):
        g = s[i:i + width]
        out[g] = out.get(g, 0) + 1
    return out


class InvertedTextIndex:
    """2-gram postings with a shared-gram count filter.

    Two strings within edit distance tau share at least
    max(len_a, len_b) - 1 - 2*tau grams (each edit touches at most two).
    Survivors of the filter are verified with a batched edit distance;
    when the bound is non-positive the filter passes everything.
    """

    def __init__(self, ids: Sequence[int], strings: Sequence[str]):
        self.ids = np.asarray([int(i) for i in ids], dtype=np.int64)
        order = np.argsort(self.ids)
        self.ids = self.ids[order]
        self.strings = [strings[int(p)] for p in order]
        self.codes, self.lengths = encode_strings(self.strings)
        self.size = len(self.ids)
        self.postings: dict[str, tuple[np.ndarray, np.ndarray]] = {}
        acc: dict[str, list[tuple[int, int]]] = {}
        for pos, s in enumerate(self.strings):
            for g, c in grams_of(s).items():
                acc.setdefault(g, []).append((pos, c))
        for g, pairs in acc.items():
            arr = np.asarray(pairs, dtype=np.int64)
            self.postings[g] = (arr[:, 0], arr[:, 1])

    def _tau(self, t_raw: float) -> int:
        # raw edit distances are integers: <= t_raw means <= floor(t_raw)
        return int(math.floor(t_raw + 1e-9))

    def candidates(self, q: str, tau: int) -> np.ndarray:
        """Positions passing the count filter for threshold tau."""
        if tau < 0:
            return np.zeros(0, dtype=np.int64)
        bound = np.maximum(len(q), self.lengths) - 1 - 2 * tau
        shared = np.zeros(self.size, dtype=np.int64)
        for g, cq in grams_of(q).items():
            hit = self.postings.get(g)
            if hit is not None:
                pos, cnt = hit
                shared[pos] += np.minimum(cq, cnt)
        return np.flatnonzero((bound <= 0) | (shared >= bound))

    def range_probe(self, q: str, t_raw: float) -> list[tuple[float, int]]:
        """All (raw edit distance, id) with distance <= t_raw."""
        tau = self._tau(t_raw)
        pos = self.candidates(q, tau)
        if len(pos) == 0:
            return []
        eds = levenshtein_batch(q, self.codes[pos], self.lengths[pos])
        keep = eds <= tau
        return [(float(d), int(self.ids[p])) for d, p in zip(eds[keep], pos[keep])]

    def knn_probe(self, q: str, k: int) -> list[tuple[float, int]]:
        """k smallest (raw edit distance, id) by widening the filter radius.

        The count filter cannot be walked best-first, so the threshold
        doubles until at least k strings fall inside; every string within
        the final threshold is found, which makes the cutoff exact.
        """
        if k < 1 or self.size == 0:
            return []
        k = min(k, self.size)
        tau_max = int(self.lengths.max(initial=0)) + len(q)
        tau = 1
        while True:
            hits = self.range_probe(q, tau)
            if len(hits) >= k or tau >= tau_max:
                hits.sort(key=lambda t: (t[0], t[1]))
                return hits[:k]
            tau = min(tau * 2, tau_max)

    def to_state(self) -> dict:
        return {"ids": self.ids.tolist(), "strings": list(self.strings)}

    @classmethod
    def from_state(cls, state: dict) -> "InvertedTextIndex":
        return cls(state["ids"], state["strings"])


# -- local R-tree probes -----------------------------------------------------------


def _box_mindist(kind: SpaceKind, node: Node, q: np.ndarray) -> float:
    gap = np.maximum(np.maximum(node.lo - q, q - node.hi), 0.0)
    if kind is SpaceKind.L1_VECTOR:
        return float(gap.sum())
    return float(np.sqrt((gap * gap).sum()))


class VectorRTreeIndex:
    """Per-space R-tree over raw vectors with exact range / knn probes."""

    def __init__(self, kind: SpaceKind, ids: Sequence[int], vectors: np.ndarray,
                 leaf_capacity: int = LOCAL_LEAF_CAPACITY):
        self.kind = kind
        ids = [int(i) for i in ids]
        self.vec_of = {i: vectors[k] for k, i in enumerate(ids)}
        self.tree = RTree.bulk_load(ids, vectors, leaf_capacity)
        self.size = len(ids)

    def range_probe(self, q: np.ndarray, t_raw: float) -> list[tuple[float, int]]:
        # any candidate within distance t sits inside the coordinate box
        lo, hi = q - t_raw, q + t_raw
        out: list[tuple[float, int]] = []
        for leaf in self.tree.search_leaves(lo, hi):
            block = np.stack([self.vec_of[i] for i in leaf.ids])
            dists = _raw_distances(self.kind, block, q)
            for d, i in zip(dists, leaf.ids):
                if d <= t_raw:
                    out.append((float(d), int(i)))
        return out

    def knn_probe(self, q: np.ndarray, k: int) -> list[tuple[float, int]]:
        if k < 1 or self.tree.root is None:
            return []
        worst: list[tuple[float, int]] = []

        def offer(d: float, i: int):
            if len(worst) < k:
                heapq.heappush(worst, (-d, -i))
            elif (d, i) < (-worst[0][0], -worst[0][1]):
                heapq.heapreplace(worst, (-d, -i))

        def kth() -> float:
            return -worst[0][0] if len(worst) == k else math.inf

        seq = 0
        heap = [(_box_mindist(self.kind, self.tree.root, q), seq, self.tree.root)]
        while heap:
            lb, _, node = heapq.heappop(heap)
            if lb > kth():
                continue
            if node.is_leaf:
                block = np.stack([self.vec_of[i] for i in node.ids])
                dists = _raw_distances(self.kind, block, q)
                for d, i in zip(dists, node.ids):
                    offer(float(d), int(i))
            else:
                for child in node.children:
                    clb = _box_mindist(self.kind, child, q)
                    if clb <= kth():
                        seq += 1
                        heapq.heappush(heap, (clb, seq, child))
        return sorted((-d, -i) for d, i in worst)

    def members(self) -> list[int]:
        return [i for leaf in self.tree.leaves() for i in leaf.ids]

    def to_state(self) -> dict:
        ids = sorted(self.vec_of)
        return {"kind": self.kind.value, "ids": ids,
                "vectors": [self.vec_of[i].tolist() for i in ids],
                "tree": self.tree.to_state()}

    @classmethod
    def from_state(cls, state: dict) -> "VectorRTreeIndex":
        obj = cls.__new__(cls)
        obj.kind = SpaceKind(state["kind"])
        obj.vec_of = {int(i): np.asarray(v, dtype=np.float64)
                      for i, v in zip(state["ids"], state["vectors"])}
        obj.tree = RTree.from_state(state["tree"], obj.vec_of.__getitem__)
        obj.size = len(obj.vec_of)
        return obj


# -- the forest ---------------------------------------------------------------------


class IndexForest:
    """All per-space indexes of one partition plus the member components.

    Owns copies of its members' data, so probing and verification work
    without the originating dataset (workers rely on this).
    """

    def __init__(self, objects: Sequence[MultiMetricObject], schema: Schema,
                 stats: NormalizationStats, seed: int = 0,
                 sample_pairs: int = 2000):
        if not objects:
            raise IndexStateError("a forest needs at least one member")
        objects = sorted(objects, key=lambda o: o.id)
        self.schema = schema
        self.stats = stats
        self.ids = np.asarray([o.id for o in objects], dtype=np.int64)
        if len(set(self.ids.tolist())) != len(self.ids):
            raise IndexStateError("duplicate member ids")
        self.size = len(objects)
        self.columns: list = []
        self.kinds: list[IndexKind] = []
        self.hidden: list[HiddenDim | None] = []
        self.indexes: list = []
        for i, space in enumerate(schema):
            vals = [coerce_value(space, o.components[i]) for o in objects]
            if space.kind.is_text:
                col = list(vals)
                self.columns.append(col)
                hd = None
                kind = IndexKind.INVERTED
                idx = InvertedTextIndex(self.ids, col)
            else:
                col = np.stack(vals)
                self.columns.append(col)
                hd = hidden_dimension(col, space, sample_pairs=sample_pairs, seed=seed)
                kind = choose_index(space, hd)
                if kind is IndexKind.MVP:
                    idx = MvpTree(space.kind, self.ids, col)
                else:
                    idx = VectorRTreeIndex(space.kind, self.ids, col)
            self.kinds.append(kind)
            self.hidden.append(hd)
            self.indexes.append(idx)
        self._pos = {int(i): p for p, i in enumerate(self.ids)}

    # -- probes ------------------------------------------------------------------

    def range_probe(self, space_index: int, q_value, t: float, *,
                    weight: float = 1.0) -> np.ndarray:
        """Ids of members with normalized per-space distance <= t, ascending.

        Probing a space whose query weight is zero is a contract
        violation: the caller must skip it instead.
        """
        if weight == 0.0:
            raise InvalidWeightsError(
                f"space {space_index} has weight 0 and must not be probed")
        if t < 0:
            raise QueryError("probe threshold must be non-negative")
        space = self.schema.spaces[space_index]
        q_value = coerce_value(space, q_value)
        t_raw = t * self.stats.scale(space_index)
        hits = self.indexes[space_index].range_probe(q_value, t_raw)
        return np.asarray(sorted(i for _, i in hits), dtype=np.int64)

    def knn_probe(self, space_index: int, q_value, k: int) -> np.ndarray:
        """min(k, size) member ids nearest in one space, ties toward small ids."""
        if k < 1:
            raise QueryError("k must be at least 1")
        space = self.schema.spaces[space_index]
        q_value = coerce_value(space, q_value)
        hits = self.indexes[space_index].knn_probe(q_value, k)
        return np.asarray([i for _, i in hits], dtype=np.int64)

    # -- verification -------------------------------------------------------------

    def weighted_distances(self, q_components, weights, ids: np.ndarray) -> np.ndarray:
        """Exact combined distance from the query to the given member ids."""
        w = check_weights(weights, len(self.schema))
        pos = np.asarray([self._pos[int(i)] for i in ids], dtype=np.int64)
        total = np.zeros(len(pos), dtype=np.float64)
        for i, space in enumerate(self.schema):
            if w[i] == 0.0:
                continue
            q_val = coerce_value(space, q_components[i])
            if space.kind.is_text:
                # inverted index stores members id-sorted, same order as self.ids
                idx: InvertedTextIndex = self.indexes[i]
                raw = levenshtein_batch(
                    q_val, idx.codes[pos], idx.lengths[pos]).astype(np.float64)
            else:
                raw = _raw_distances(space.kind, self.columns[i][pos], q_val)
            total += w[i] * (raw / self.stats.scale(i))
        return total

    def range_candidates(self, q_components, weights, r: float,
                         probe_cap: int | None = None) -> tuple[np.ndarray, list[int]]:
        """Union of per-space probes guaranteed to cover all results within r.

        Probes the positively weighted spaces (optionally only the
        ``probe_cap`` heaviest; the threshold loosens to r over the probed
        weight mass, which keeps the union complete).  Returns candidate
        ids plus the number of probes issued per space.
        """
        w = check_weights(weights, len(self.schema), require_nonzero=True)
        active = [i for i in range(len(self.schema)) if w[i] > 0]
        if probe_cap is not None and probe_cap < 1:
            raise QueryError("probe_cap must be at least 1")
        if probe_cap is not None and probe_cap < len(active):
            order = sorted(active, key=lambda i: (-w[i], i))
            active = sorted(order[:probe_cap])
        # hair of headroom: keeps objects at combined distance exactly r from
        # losing to one-ulp rounding in the division; verification is exact
        threshold = (r / float(sum(w[i] for i in active))) * (1.0 + 1e-12)
        out: set[int] = set()
        probes = [0] * len(self.schema)
        for i in active:
            probes[i] += 1
            out.update(int(x) for x in
                       self.range_probe(i, q_components[i], threshold, weight=w[i]))
        return np.asarray(sorted(out), dtype=np.int64), probes

    def verified_range(self, q_components, weights, r: float,
                       probe_cap: int | None = None):
        """Exact partition-level range result: ([(distance, id)], stats).

        stats is (candidates verified, probes per space).
        """
        cand, probes = self.range_candidates(q_components, weights, r, probe_cap)
        if len(cand) == 0:
            return [], (0, probes)
        dists = self.weighted_distances(q_components, weights, cand)
        keep = dists <= r
        pairs = sorted(zip(dists[keep].tolist(), cand[keep].tolist()))
        return [(float(d), int(i)) for d, i in pairs], (int(len(cand)), probes)

    def knn_pool(self, q_components, weights, k: int):
        """Phase-one candidate pool: per-space knn probes, verified exactly.

        Returns ([(distance, id)] ascending, stats) where stats counts
        (candidates verified, probes per space).
        """
        w = check_weights(weights, len(self.schema), require_nonzero=True)
        pool: set[int] = set()
        probes = [0] * len(self.schema)
        for i in range(len(self.schema)):
            if w[i] == 0.0:
                continue
            probes[i] += 1
            pool.update(int(x) for x in self.knn_probe(i, q_components[i], k))
        cand = np.asarray(sorted(pool), dtype=np.int64)
        dists = self.weighted_distances(q_components, weights, cand)
        pairs = sorted(zip(dists.tolist(), cand.tolist()))
        return [(float(d), int(i)) for d, i in pairs], (int(len(cand)), probes)

    # -- serialization ---------------------------------------------------------------

    def to_state(self) -> dict:
        spaces = []
        for i, space in enumerate(self.schema):
            entry = {"kind": self.kinds[i].value}
            if self.hidden[i] is not None:
                hd = self.hidden[i]
                entry["hidden"] = [hd.mu, hd.sigma2, hd.value, hd.degenerate]
            entry["index"] = self.indexes[i].to_state()
            spaces.append(entry)
        cols = []
        for i, space in enumerate(self.schema):
            cols.append(list(self.columns[i]) if space.kind.is_text
                        else self.columns[i].tolist())
        return {"ids": self.ids.tolist(), "columns": cols, "spaces": spaces}

    @classmethod
    def from_state(cls, state: dict, schema: Schema,
                   stats: NormalizationStats) -> "IndexForest":
        forest = cls.__new__(cls)
        forest.schema = schema
        forest.stats = stats
        forest.ids = np.asarray(state["ids"], dtype=np.int64)
        forest.size = len(forest.ids)
        forest.columns = []
        forest.kinds = []
        forest.hidden = []
        forest.indexes = []
        loaders = {IndexKind.RTREE.value: VectorRTreeIndex,
                   IndexKind.MVP.value: MvpTree,
                   IndexKind.INVERTED.value: InvertedTextIndex}
        for i, (space, entry) in enumerate(zip(schema, state["spaces"])):
            col = state["columns"][i]
            forest.columns.append(list(col) if space.kind.is_text
                                  else np.asarray(col, dtype=np.float64))
            forest.kinds.append(IndexKind(entry["kind"]))
            if "hidden" in entry:
                mu, s2, val, deg = entry["hidden"]
                forest.hidden.append(HiddenDim(mu, s2, val, deg))
            else:
                forest.hidden.append(None)
            forest.indexes.append(loaders[entry["kind"]].from_state(entry["index"]))
        forest._pos = {int(x): p for p, x in enumerate(forest.ids)}
        return forest


def build_forest(objects: Sequence[MultiMetricObject], schema: Schema,
                 stats: NormalizationStats, seed: int = 0,
                 sample_pairs: int = 2000) -> IndexForest:
    """Index every space of one partition's members."""
    return IndexForest(objects, schema, stats, seed=seed, sample_pairs=sample_pairs)
