"""Packed R-tree over points, bulk-loaded with sort-tile-recursive.

Doubles as the pivot-space tree of the global layer (leaves are the
partitions) and as the per-space vector index inside partitions.  Leaves
carry stable integer labels (``pid``); splits mint fresh labels, deletes
retire them.
"""

from __future__ import annotations

import math
from typing import Callable, Iterator, Sequence

import numpy as np

from .errors import IndexStateError, UnknownIdError

DEFAULT_FANOUT = 16

# absolute slack for box-overlap pruning; mapped coordinates are O(1), so
# this dwarfs accumulated rounding yet stays far below any real distance gap
PRUNE_SLACK = 1e-12


class Node:
    __slots__ = ("lo", "hi", "children", "ids", "pid", "min_pid")

    def __init__(self, lo, hi, children=None, ids=None, pid=None):
        self.lo = lo                  # mbr lower corner, shape (d,)
        self.hi = hi                  # mbr upper corner, shape (d,)
        self.children = children     # internal: list[Node]
        self.ids = ids               # leaf: list[int]
        self.pid = pid               # leaf label
        self.min_pid = pid           # smallest leaf label in subtree

    @property
    def is_leaf(self) -> bool:
        return self.children is None

    def volume(self) -> float:
        return float(np.prod(self.hi - self.lo))


def _mbr_of(points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    return points.min(axis=0).copy(), points.max(axis=0).copy()


def _str_tiles(order_ids: np.ndarray, pts: np.ndarray, dim: int,
               dims_left: int, cap: int) -> list[np.ndarray]:
    """Recursive sort-tile split; returns leaf id-arrays in tile order."""
    n = len(order_ids)
    key = np.lexsort((order_ids, pts[:, dim]))
    order_ids = order_ids[key]
    pts = pts[key]
    if dims_left == 1 or n <= cap:
        return [order_ids[i:i + cap] for i in range(0, n, cap)]
    n_leaves = math.ceil(n / cap)
    slabs = math.ceil(n_leaves ** (1.0 / dims_left))
    # hand each slab a whole number of leaves' worth of points, so the
    # total leaf count stays exactly ceil(n / cap) and only the very
    # last leaf can come up short
    step = math.ceil(n_leaves / slabs) * cap
    out = []
    for s in range(0, n, step):
        out.extend(_str_tiles(order_ids[s:s + step], pts[s:s + step],
                              dim + 1, dims_left - 1, cap))
    return out


class RTree:
    """R-tree with stable leaf labels and deterministic tie-breaking."""

    def __init__(self, dim: int, leaf_capacity: int, fanout: int = DEFAULT_FANOUT):
        if leaf_capacity < 2:
            raise IndexStateError("leaf_capacity must be at least 2")
        self.dim = dim
        self.cap = leaf_capacity
        self.fanout = max(2, fanout)
        self.root: Node | None = None
        self.points: dict[int, np.ndarray] = {}
        self.next_pid = 0
        self._leaf_by_pid: dict[int, Node] = {}

    # -- construction ----------------------------------------------------------

    @classmethod
    def bulk_load(cls, ids: Sequence[int], points: np.ndarray, leaf_capacity: int,
                  fanout: int = DEFAULT_FANOUT) -> "RTree":
        """Sort-tile-recursive packing; leaves are labeled 0..P-1 in tile order."""
        points = np.asarray(points, dtype=np.float64)
        if points.ndim != 2 or len(ids) != points.shape[0]:
            raise IndexStateError("ids and points disagree")
        if points.shape[0] == 0:
            raise IndexStateError("cannot bulk load an empty point set")
        tree = cls(points.shape[1], leaf_capacity, fanout)
        id_arr = np.asarray(ids, dtype=np.int64)
        tree.points = {int(i): points[k].copy() for k, i in enumerate(id_arr)}
        tiles = _str_tiles(id_arr, points, 0, tree.dim, leaf_capacity)
        leaves = []
        for pid, tile in enumerate(tiles):
            pts = np.stack([tree.points[int(i)] for i in tile])
            lo, hi = _mbr_of(pts)
            leaf = Node(lo, hi, ids=[int(i) for i in tile], pid=pid)
            leaves.append(leaf)
            tree._leaf_by_pid[pid] = leaf
        tree.next_pid = len(leaves)
        level = leaves
        while len(level) > 1:
            parents = []
            for s in range(0, len(level), tree.fanout):
                group = level[s:s + tree.fanout]
                lo = np.min([g.lo for g in group], axis=0)
                hi = np.max([g.hi for g in group], axis=0)
                parent = Node(lo, hi, children=group)
                parent.min_pid = min(g.min_pid for g in group)
                parents.append(parent)
            level = parents
        tree.root = level[0]
        return tree

    # -- bookkeeping helpers -----------------------------------------------------

    def _refresh(self, node: Node):
        """Recompute mbr and min_pid of an internal node from its children."""
        if node.is_leaf:
            pts = np.stack([self.points[i] for i in node.ids])
            node.lo, node.hi = _mbr_of(pts)
            node.min_pid = node.pid
        else:
            node.lo = np.min([c.lo for c in node.children], axis=0)
            node.hi = np.max([c.hi for c in node.children], axis=0)
            node.min_pid = min(c.min_pid for c in node.children)

    def leaves(self) -> Iterator[Node]:
        def walk(n: Node):
            if n.is_leaf:
                yield n
            else:
                for c in n.children:
                    yield from walk(c)
        if self.root is not None:
            yield from walk(self.root)

    def leaf(self, pid: int) -> Node:
        try:
            return self._leaf_by_pid[pid]
        except KeyError:
            raise IndexStateError(f"no leaf labeled {pid}") from None

    def partitions(self) -> dict[int, list[int]]:
        return {leaf.pid: list(leaf.ids) for leaf in self.leaves()}

    # -- insertion ---------------------------------------------------------------

    def insert(self, oid: int, point: np.ndarray) -> list[int]:
        """Insert a point; returns the labels of leaves whose membership changed.

        The target leaf is the one whose mbr grows least (ties: smaller
        area, then smaller label).  An overfull leaf splits on its longest
        mbr side at the member median; the upper half gets a fresh label.
        """
        point = np.asarray(point, dtype=np.float64)
        if point.shape != (self.dim,):
            raise IndexStateError(f"point must have dim {self.dim}")
        if oid in self.points:
            raise IndexStateError(f"id {oid} already present")
        self.points[oid] = point.copy()
        if self.root is None:
            leaf = Node(point.copy(), point.copy(), ids=[oid], pid=self.next_pid)
            self._leaf_by_pid[leaf.pid] = leaf
            self.next_pid += 1
            self.root = leaf
            return [leaf.pid]
        path = []
        node = self.root
        while not node.is_leaf:
            path.append(node)
            node = min(node.children, key=lambda c: self._choose_key(c, point))
        node.ids.append(oid)
        node.lo = np.minimum(node.lo, point)
        node.hi = np.maximum(node.hi, point)
        for p in path:
            p.lo = np.minimum(p.lo, point)
            p.hi = np.maximum(p.hi, point)
        touched = [node.pid]
        if len(node.ids) > self.cap:
            touched.append(self._split_leaf(node, path))
        self._split_internal_overflow(path)
        return touched

    def _choose_key(self, child: Node, point: np.ndarray):
        new_lo = np.minimum(child.lo, point)
        new_hi = np.maximum(child.hi, point)
        vol = child.volume()
        enlargement = float(np.prod(new_hi - new_lo)) - vol
        return (enlargement, vol, child.min_pid)

    def _split_leaf(self, leaf: Node, path: list[Node]) -> int:
        side = leaf.hi - leaf.lo
        d = int(np.argmax(side))
        members = sorted(leaf.ids, key=lambda i: (self.points[i][d], i))
        half = len(members) // 2
        lower, upper = members[:half], members[half:]
        leaf.ids = lower
        self._refresh(leaf)
        new_leaf = Node(None, None, ids=upper, pid=self.next_pid)
        self.next_pid += 1
        self._refresh(new_leaf)
        self._leaf_by_pid[new_leaf.pid] = new_leaf
        if path:
            path[-1].children.append(new_leaf)
            for p in reversed(path):
                self._refresh(p)
        else:
            root = Node(None, None, children=[leaf, new_leaf])
            self._refresh(root)
            self.root = root
        return new_leaf.pid

    def _split_internal_overflow(self, path: list[Node]):
        # walk bottom-up; splitting a node may overflow its parent
        for depth in range(len(path) - 1, -1, -1):
            node = path[depth]
            if len(node.children) <= self.fanout:
                continue
            side = node.hi - node.lo
            d = int(np.argmax(side))
            kids = sorted(node.children,
                          key=lambda c: (float(c.lo[d] + c.hi[d]) / 2.0, c.min_pid))
            half = len(kids) // 2
            node.children = kids[:half]
            self._refresh(node)
            sibling = Node(None, None, children=kids[half:])
            self._refresh(sibling)
            if depth == 0:
                root = Node(None, None, children=[node, sibling])
                self._refresh(root)
                self.root = root
            else:
                parent = path[depth - 1]
                parent.children.append(sibling)
                for p in reversed(path[:depth]):
                    self._refresh(p)

    # -- deletion -----------------------------------------------------------------

    def delete(self, oid: int) -> int:
        """Remove a point; returns the label of the leaf it lived in.

        Ancestor mbrs shrink; an emptied leaf disappears (its label is
        retired), as do internal nodes left childless.
        """
        if oid not in self.points:
            raise UnknownIdError(f"id {oid} is not present")
        point = self.points[oid]
        found = self._find_leaf(self.root, oid, point, [])
        if found is None:
            raise IndexStateError(f"id {oid} points dict and tree disagree")
        leaf, path = found
        leaf.ids.remove(oid)
        del self.points[oid]
        if leaf.ids:
            self._refresh(leaf)
        else:
            del self._leaf_by_pid[leaf.pid]
            if path:
                path[-1].children.remove(leaf)
            else:
                self.root = None
                return leaf.pid
        for depth in range(len(path) - 1, -1, -1):
            node = path[depth]
            if not node.children:
                if depth == 0:
                    self.root = None
                else:
                    path[depth - 1].children.remove(node)
            else:
                self._refresh(node)
        while self.root is not None and not self.root.is_leaf and len(self.root.children) == 1:
            self.root = self.root.children[0]
        return leaf.pid

    def _find_leaf(self, node: Node | None, oid: int, point: np.ndarray,
                   path: list[Node]):
        if node is None:
            return None
        if np.any(point < node.lo) or np.any(point > node.hi):
            return None
        if node.is_leaf:
            return (node, list(path)) if oid in node.ids else None
        path.append(node)
        for c in node.children:
            hit = self._find_leaf(c, oid, point, path)
            if hit is not None:
                return hit
        path.pop()
        return None

    # -- queries --------------------------------------------------------------------

    def search_leaves(self, lo: np.ndarray, hi: np.ndarray,
                      active: np.ndarray | None = None) -> list[Node]:
        """Leaves whose mbr meets [lo, hi] on every active dimension.

        A subtree is pruned when some active dimension's interval misses
        the node mbr by more than PRUNE_SLACK; inactive dimensions never
        prune.  The slack keeps objects sitting exactly on a query
        boundary from being lost to rounding in the box arithmetic;
        exact verification downstream discards any extras it admits.
        """
        if self.root is None:
            return []
        if active is None:
            active = np.ones(self.dim, dtype=bool)
        out: list[Node] = []
        stack = [self.root]
        while stack:
            node = stack.pop()
            disjoint = (hi < node.lo - PRUNE_SLACK) | (lo > node.hi + PRUNE_SLACK)
            if bool(np.any(disjoint & active)):
                continue
            if node.is_leaf:
                out.append(node)
            else:
                stack.extend(node.children)
        out.sort(key=lambda n: n.pid)
        return out

    def rank_leaves(self, q: np.ndarray, weights: np.ndarray) -> list[tuple[float, int]]:
        """All leaves ordered by weighted L1 gap between q and the mbr.

        Only positive-weight dimensions contribute.  Ties order by label.
        """
        ranked = []
        for leaf in self.leaves():
            gap = np.maximum(np.maximum(leaf.lo - q, q - leaf.hi), 0.0)
            dist = float(np.sum(weights * gap))
            ranked.append((dist, leaf.pid))
        ranked.sort(key=lambda t: (t[0], t[1]))
        return ranked

    # -- integrity and serialization ---------------------------------------------------

    def check_integrity(self) -> dict:
        """Verify containment and size invariants; returns tree facts."""
        if self.root is None:
            return {"leaves": 0, "depth": 0, "leaf_sizes": [], "count": 0}
        depths, sizes = [], []

        def walk(node: Node, depth: int):
            if node.is_leaf:
                if not node.ids:
                    raise IndexStateError("empty leaf")
                if len(node.ids) > self.cap:
                    raise IndexStateError("overfull leaf")
                pts = np.stack([self.points[i] for i in node.ids])
                if np.any(pts < node.lo - 1e-12) or np.any(pts > node.hi + 1e-12):
                    raise IndexStateError("leaf mbr does not contain its points")
                depths.append(depth)
                sizes.append(len(node.ids))
                return
            for c in node.children:
                if np.any(c.lo < node.lo - 1e-12) or np.any(c.hi > node.hi + 1e-12):
                    raise IndexStateError("child mbr escapes parent mbr")
                walk(c, depth + 1)

        walk(self.root, 0)
        if len(set(depths)) > 1:
            raise IndexStateError("leaves at unequal depths")
        return {"leaves": len(sizes), "depth": depths[0], "leaf_sizes": sizes,
                "count": sum(sizes)}

    def to_state(self) -> dict:
        def dump(node: Node):
            base = {"lo": node.lo.tolist(), "hi": node.hi.tolist()}
            if node.is_leaf:
                base["ids"] = list(node.ids)
                base["pid"] = node.pid
            else:
                base["children"] = [dump(c) for c in node.children]
            return base

        return {
            "dim": self.dim, "cap": self.cap, "fanout": self.fanout,
            "next_pid": self.next_pid,
            "root": dump(self.root) if self.root is not None else None,
        }

    @classmethod
    def from_state(cls, state: dict, point_of: Callable[[int], np.ndarray]) -> "RTree":
        tree = cls(state["dim"], state["cap"], state["fanout"])
        tree.next_pid = state["next_pid"]

        def load(d: dict) -> Node:
            lo = np.asarray(d["lo"], dtype=np.float64)
            hi = np.asarray(d["hi"], dtype=np.float64)
            if "children" in d:
                node = Node(lo, hi, children=[load(c) for c in d["children"]])
                node.min_pid = min(c.min_pid for c in node.children)
                return node
            node = Node(lo, hi, ids=list(d["ids"]), pid=d["pid"])
            tree._leaf_by_pid[node.pid] = node
            for i in node.ids:
                tree.points[i] = np.asarray(point_of(i), dtype=np.float64)
            return node

        if state["root"] is not None:
            tree.root = load(state["root"])
        return tree
