"""Distance primitives for records that live in several metric spaces.

A record holds one component per declared space: real vectors compared
with the L1 norm, coordinate pairs compared with the L2 norm, and text
compared with edit distance.  Per-space distances are normalized by a
dataset-level scale and blended into a single weighted score; a weight
of zero removes a space from every computation, not just the total.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

from .errors import (
    DimensionError,
    InvalidWeightsError,
    SchemaError,
    StatsError,
)

Vector = np.ndarray
SpaceValue = Union[np.ndarray, str]


class SpaceKind(enum.Enum):
    """How one component of a record is compared."""

    L1_VECTOR = "l1"
    L2_POINT = "l2"
    EDIT_TEXT = "edit"

    @property
    def is_text(self) -> bool:
        return self is SpaceKind.EDIT_TEXT


@dataclass(frozen=True)
class Space:
    """One metric space of the record layout.

    Parameters
    ----------
    name : str
        Unique label, also the key used by data rows and query literals.
    kind : SpaceKind
        Comparison rule for this component.
    dim : int or None
        Vector length for the numeric kinds; must be None for text.
    """

    name: str
    kind: SpaceKind
    dim: int | None = None

    def __post_init__(self):
        if self.kind.is_text:
            if self.dim is not None:
                raise SchemaError(f"space {self.name!r}: text spaces take no dim")
        else:
            if self.dim is None or self.dim < 1:
                raise SchemaError(f"space {self.name!r}: vector spaces need dim >= 1")


@dataclass(frozen=True)
class Schema:
    """Ordered list of spaces shared by every object of a dataset."""

    spaces: tuple[Space, ...]

    def __post_init__(self):
        names = [s.name for s in self.spaces]
        if len(set(names)) != len(names):
            raise SchemaError("space names must be unique")
        if not self.spaces:
            raise SchemaError("schema declares no spaces")

    def __len__(self) -> int:
        return len(self.spaces)

    def __iter__(self):
        return iter(self.spaces)

    def index_of(self, name: str) -> int:
        for i, s in enumerate(self.spaces):
            if s.name == name:
                return i
        raise SchemaError(f"unknown space {name!r}")

    def names(self) -> tuple[str, ...]:
        return tuple(s.name for s in self.spaces)


@dataclass(frozen=True)
class MultiMetricObject:
    """One record: an id plus one component per schema space."""

    id: int
    components: tuple[SpaceValue, ...]


@dataclass(frozen=True)
class NormalizationStats:
    """Per-space scale factors that map raw distances to comparable units.

    ``scales[i]`` divides every raw distance of space ``i``.  Scales are
    computed once from sampled pairs (twice the sample median) and reused
    verbatim afterwards so results stay reproducible across updates.
    """

    scales: tuple[float, ...]
    medians: tuple[float, ...] = ()
    sample_counts: tuple[int, ...] = ()

    def __post_init__(self):
        for i, s in enumerate(self.scales):
            if not math.isfinite(s) or s <= 0:
                raise StatsError(f"space {i}: scale must be finite and positive, got {s}")

    def scale(self, i: int) -> float:
        return self.scales[i]


def coerce_value(space: Space, value) -> SpaceValue:
    """Validate ``value`` against ``space`` and return its canonical form.

    Numeric components become float64 arrays, text stays ``str``.
    Raises SchemaError / DimensionError on kind or length mismatch.
    """
    if space.kind.is_text:
        if not isinstance(value, str):
            raise SchemaError(
                f"space {space.name!r} expects text, got {type(value).__name__}")
        return value
    if isinstance(value, str):
        raise SchemaError(f"space {space.name!r} expects a vector, got text")
    arr = np.asarray(value, dtype=np.float64)
    if arr.ndim != 1:
        raise SchemaError(f"space {space.name!r} expects a flat vector")
    if arr.shape[0] != space.dim:
        raise DimensionError(
            f"space {space.name!r} expects dim {space.dim}, got {arr.shape[0]}")
    if not np.all(np.isfinite(arr)):
        raise SchemaError(f"space {space.name!r}: vector has non-finite entries")
    return arr


def levenshtein(a: str, b: str, ceiling: int | None = None) -> int:
    """Edit distance between two strings (unit-cost insert/delete/substitute).

    Parameters
    ----------
    a, b : str
    ceiling : int, optional
        When given, computation is restricted to a diagonal band and cut
        short as soon as the distance provably exceeds ``ceiling``; any
        return value greater than ``ceiling`` then only means "above the
        ceiling", not the exact distance.

    Returns
    -------
    int
    """
    la, lb = len(a), len(b)
    if ceiling is not None and abs(la - lb) > ceiling:
        return ceiling + 1
    if la == 0:
        return lb
    if lb == 0:
        return la
    prev = list(range(lb + 1))
    for i in range(1, la + 1):
        ca = a[i - 1]
        if ceiling is None:
            lo, hi = 1, lb
        else:
            # cells with |i - j| > ceiling cannot lie on a path of cost <= ceiling
            lo = max(1, i - ceiling)
            hi = min(lb, i + ceiling)
        cur = [0] * (lb + 1)
        cur[lo - 1] = i if lo == 1 else ceiling + 1
        best = cur[lo - 1]
        for j in range(lo, hi + 1):
            sub = prev[j - 1] + (ca != b[j - 1])
            dele = prev[j] + 1
            ins = cur[j - 1] + 1
            v = sub if sub <= dele else dele
            if ins < v:
                v = ins
            cur[j] = v
            if v < best:
                best = v
        if hi < lb:
            cur[hi + 1:] = [ceiling + 1] * (lb - hi)
        if ceiling is not None and best > ceiling:
            return ceiling + 1
        prev = cur
    return prev[lb]


def encode_strings(strings: Sequence[str]) -> tuple[np.ndarray, np.ndarray]:
    """Pack strings into a padded int32 code matrix plus a length vector.

    Padding uses -1, which never equals a real code point, so padded cells
    can flow through the batched edit-distance recurrence harmlessly.
    """
    n = len(strings)
    lengths = np.fromiter((len(s) for s in strings), dtype=np.int64, count=n)
    width = int(lengths.max()) if n else 0
    codes = np.full((n, width), -1, dtype=np.int32)
    for i, s in enumerate(strings):
        if s:
            codes[i, : len(s)] = np.frombuffer(s.encode("utf-32-le"), dtype=np.uint32)
    return codes, lengths


def levenshtein_batch(query: str, codes: np.ndarray, lengths: np.ndarray) -> np.ndarray:
    """Edit distance from ``query`` to every encoded string, vectorized.

    Runs the usual dynamic program one query character at a time across
    all rows at once; the insert branch, which is a running prefix
    minimum, is rewritten as ``min-accumulate(row - j) + j``.

    Parameters
    ----------
    query : str
    codes, lengths : np.ndarray
        Output of :func:`encode_strings`.

    Returns
    -------
    np.ndarray of int64, one distance per encoded string.
    """
    n, width = codes.shape
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    q = np.frombuffer(query.encode("utf-32-le"), dtype=np.uint32).astype(np.int32)
    cols = np.arange(width + 1, dtype=np.int64)
    row = np.broadcast_to(cols, (n, width + 1)).copy()
    if len(q) == 0:
        return lengths.astype(np.int64)
    for i in range(1, len(q) + 1):
        sub = row[:, :-1] + (codes != q[i - 1])
        dele = row[:, 1:] + 1
        seed = np.empty((n, width + 1), dtype=np.int64)
        seed[:, 0] = i
        np.minimum(sub, dele, out=seed[:, 1:])
        row = np.minimum.accumulate(seed - cols, axis=1) + cols
    return row[np.arange(n), lengths]


def distance(kind: SpaceKind, a: SpaceValue, b: SpaceValue) -> float:
    """Raw (unnormalized) distance between two components of one space.

    Parameters
    ----------
    kind : SpaceKind
    a, b : SpaceValue
        Both must match ``kind``: strings for text, equal-length vectors
        otherwise.

    Returns
    -------
    float
        L1 norm, L2 norm, or edit distance depending on ``kind``.
    """
    if kind.is_text:
        if not isinstance(a, str) or not isinstance(b, str):
            raise SchemaError("edit distance needs two strings")
        return float(levenshtein(a, b))
    if isinstance(a, str) or isinstance(b, str):
        raise SchemaError(f"{kind.value} distance needs two vectors")
    va = np.asarray(a, dtype=np.float64)
    vb = np.asarray(b, dtype=np.float64)
    if va.shape != vb.shape:
        raise DimensionError(f"vector lengths differ: {va.shape[0]} vs {vb.shape[0]}")
    if kind is SpaceKind.L1_VECTOR:
        return float(np.abs(va - vb).sum())
    return float(np.sqrt(((va - vb) ** 2).sum()))


def normalized_distance(space_index: int, space: Space, a: SpaceValue,
                        b: SpaceValue, stats: NormalizationStats) -> float:
    """Raw distance divided by the space's scale factor."""
    s = stats.scale(space_index)
    return distance(space.kind, a, b) / s


def check_weights(weights: Sequence[float], m: int, *, require_nonzero: bool = False) -> np.ndarray:
    """Validate a weight vector against a schema of ``m`` spaces.

    Weights must have length ``m`` with every entry in [0, 1].  With
    ``require_nonzero`` the sum must also be positive.
    """
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim != 1 or w.shape[0] != m:
        raise InvalidWeightsError(f"expected {m} weights, got shape {w.shape}")
    if not np.all(np.isfinite(w)):
        raise InvalidWeightsError("weights must be finite")
    if np.any(w < 0) or np.any(w > 1):
        raise InvalidWeightsError("weights must lie in [0, 1]")
    if require_nonzero and float(w.sum()) <= 0.0:
        raise InvalidWeightsError("weights sum to zero; no space is active")
    return w


def multi_metric_distance(q: MultiMetricObject, o: MultiMetricObject,
                          weights: Sequence[float], schema: Schema,
                          stats: NormalizationStats) -> float:
    """Weighted sum of normalized per-space distances between two records.

    Spaces with weight exactly zero are skipped outright; their distance
    is never evaluated, which matters when a single space is expensive.
    """
    w = check_weights(weights, len(schema))
    total = 0.0
    for i, space in enumerate(schema):
        wi = w[i]
        if wi == 0.0:
            continue
        total += wi * normalized_distance(i, space, q.components[i], o.components[i], stats)
    return total
