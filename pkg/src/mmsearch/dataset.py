"""Loading, validating, and columnar storage of multi-space datasets.

A dataset is declared by a JSON schema file (spaces, their kinds and
dims) and a line-delimited JSON data file (one object per line, keyed
by space name).  Objects are stored column-wise per space so distance
kernels can run vectorized; text columns keep a packed code matrix for
the batched edit-distance routine.

Normalization statistics come from sampled pairwise distances: the
scale of a space is twice the median sampled distance.  Sampling is
seeded per space name, so removing one space never changes the draws
for the others.
"""

from __future__ import annotations

import itertools
import json
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    DatasetFormatError,
    DuplicateIdError,
    InsufficientDataError,
    SchemaError,
    UnknownIdError,
)
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

DEFAULT_SAMPLE_PAIRS = 100_000

_KIND_BY_TAG = {k.value: k for k in SpaceKind}


def parse_schema(obj: dict) -> tuple[str, Schema]:
    """Build a Schema from a decoded schema document.

    Returns the table name (default ``"T"``) and the schema.
    """
    if not isinstance(obj, dict) or "spaces" not in obj:
        raise SchemaError("schema document must be an object with a 'spaces' list")
    table = obj.get("table", "T")
    if not isinstance(table, str) or not table:
        raise SchemaError("'table' must be a non-empty string")
    spaces = []
    for entry in obj["spaces"]:
        if not isinstance(entry, dict):
            raise SchemaError("each space must be an object")
        try:
            name = entry["name"]
            tag = entry["kind"]
        except KeyError as exc:
            raise SchemaError(f"space entry missing key {exc.args[0]!r}") from None
        if tag not in _KIND_BY_TAG:
            raise SchemaError(
                f"space {name!r}: unknown kind {tag!r} (use one of {sorted(_KIND_BY_TAG)})")
        kind = _KIND_BY_TAG[tag]
        dim = entry.get("dim")
        spaces.append(Space(name=name, kind=kind, dim=dim))
    return table, Schema(tuple(spaces))


def load_schema_file(path: str | Path) -> tuple[str, Schema]:
    text = Path(path).read_text(encoding="utf-8")
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DatasetFormatError(f"schema file: {exc.msg}",
                                 line=exc.lineno, column=exc.colno) from None
    return parse_schema(obj)


class Dataset:
    """Columnar store of multi-space objects with live/dead bookkeeping.

    Row index equals object id.  Deletion marks a row dead rather than
    compacting, so ids handed out earlier stay valid; insertion appends
    a fresh id at the end.
    """

    def __init__(self, schema: Schema, table: str = "T"):
        self.schema = schema
        self.table = table
        self.stats: NormalizationStats | None = None
        self._vec: dict[int, np.ndarray] = {}
        self._txt: dict[int, list[str]] = {}
        for i, space in enumerate(schema):
            if space.kind.is_text:
                self._txt[i] = []
            else:
                self._vec[i] = np.empty((0, space.dim), dtype=np.float64)
        self._alive = np.zeros(0, dtype=bool)
        self._txt_cache: dict[int, tuple[np.ndarray, np.ndarray]] = {}

    # -- size and membership -------------------------------------------------

    def __len__(self) -> int:
        """Number of live objects."""
        return int(self._alive.sum())

    @property
    def row_count(self) -> int:
        """Number of rows ever allocated, live or dead."""
        return self._alive.shape[0]

    def is_live(self, oid: int) -> bool:
        return 0 <= oid < self.row_count and bool(self._alive[oid])

    def live_ids(self) -> np.ndarray:
        return np.flatnonzero(self._alive)

    def _check_live(self, oid: int):
        if not self.is_live(oid):
            raise UnknownIdError(f"object id {oid} is not present")

    # -- construction ---------------------------------------------------------

    def append(self, components: Sequence) -> int:
        """Validate and append one object; returns its id."""
        if len(components) != len(self.schema):
            raise SchemaError(
                f"expected {len(self.schema)} components, got {len(components)}")
        coerced = [coerce_value(s, v) for s, v in zip(self.schema, components)]
        oid = self.row_count
        for i, space in enumerate(self.schema):
            if space.kind.is_text:
                self._txt[i].append(coerced[i])
                self._txt_cache.pop(i, None)
            else:
                self._vec[i] = np.vstack([self._vec[i], coerced[i][None, :]])
        self._alive = np.append(self._alive, True)
        return oid

    def extend(self, rows: Iterable[Sequence]) -> list[int]:
        """Bulk append; validates each row, far cheaper than repeated append."""
        rows = list(rows)
        if not rows:
            return []
        m = len(self.schema)
        coerced_cols: list[list] = [[] for _ in range(m)]
        for row in rows:
            if len(row) != m:
                raise SchemaError(f"expected {m} components, got {len(row)}")
            for i, space in enumerate(self.schema):
                coerced_cols[i].append(coerce_value(space, row[i]))
        start = self.row_count
        for i, space in enumerate(self.schema):
            if space.kind.is_text:
                self._txt[i].extend(coerced_cols[i])
                self._txt_cache.pop(i, None)
            else:
                block = np.stack(coerced_cols[i], axis=0)
                self._vec[i] = np.vstack([self._vec[i], block])
        self._alive = np.append(self._alive, np.ones(len(rows), dtype=bool))
        return list(range(start, self.row_count))

    def remove(self, oid: int):
        self._check_live(oid)
        self._alive[oid] = False

    # -- access ---------------------------------------------------------------

    def component(self, oid: int, space_index: int):
        self._check_live(oid)
        space = self.schema.spaces[space_index]
        if space.kind.is_text:
            return self._txt[space_index][oid]
        return self._vec[space_index][oid].copy()

    def object(self, oid: int) -> MultiMetricObject:
        self._check_live(oid)
        parts = []
        for i, space in enumerate(self.schema):
            if space.kind.is_text:
                parts.append(self._txt[i][oid])
            else:
                parts.append(self._vec[i][oid].copy())
        return MultiMetricObject(id=oid, components=tuple(parts))

    def objects(self, ids: Iterable[int] | None = None) -> list[MultiMetricObject]:
        if ids is None:
            ids = self.live_ids()
        return [self.object(int(i)) for i in ids]

    def text_codes(self, space_index: int) -> tuple[np.ndarray, np.ndarray]:
        """Packed code matrix + lengths for a text column (cached)."""
        if space_index not in self._txt:
            raise SchemaError(f"space {space_index} is not a text space")
        if space_index not in self._txt_cache:
            self._txt_cache[space_index] = encode_strings(self._txt[space_index])
        return self._txt_cache[space_index]

    # -- vectorized distances --------------------------------------------------

    def space_distances(self, space_index: int, q_value, ids: np.ndarray,
                        normalized: bool = True) -> np.ndarray:
        """Distance from one query component to the named rows of a space."""
        space = self.schema.spaces[space_index]
        ids = np.asarray(ids, dtype=np.int64)
        q_value = coerce_value(space, q_value)
        if space.kind.is_text:
            codes, lengths = self.text_codes(space_index)
            out = levenshtein_batch(q_value, codes[ids], lengths[ids]).astype(np.float64)
        else:
            block = self._vec[space_index][ids]
            diff = block - q_value[None, :]
            if space.kind is SpaceKind.L1_VECTOR:
                out = np.abs(diff).sum(axis=1)
            else:
                out = np.sqrt((diff * diff).sum(axis=1))
        if normalized:
            if self.stats is None:
                raise InsufficientDataError("dataset has no normalization stats")
            out = out / self.stats.scale(space_index)
        return out

    def distance_matrix(self, q_components: Sequence, ids: np.ndarray) -> np.ndarray:
        """Normalized per-space distances, shape (len(ids), m)."""
        ids = np.asarray(ids, dtype=np.int64)
        cols = [self.space_distances(i, q_components[i], ids) for i in range(len(self.schema))]
        return np.stack(cols, axis=1) if cols else np.zeros((len(ids), 0))

    def weighted_distances(self, q_components: Sequence, weights, ids: np.ndarray) -> np.ndarray:
        """Weighted combined distance to the named rows.

        Zero-weight spaces are skipped entirely, so an expensive column
        (usually text) costs nothing when its weight is zero.
        """
        w = check_weights(weights, len(self.schema))
        ids = np.asarray(ids, dtype=np.int64)
        total = np.zeros(len(ids), dtype=np.float64)
        for i in range(len(self.schema)):
            if w[i] == 0.0:
                continue
            total += w[i] * self.space_distances(i, q_components[i], ids)
        return total

    # -- state round trip ------------------------------------------------------

    def to_state(self) -> dict:
        """Plain-data snapshot, including dead rows so ids stay stable."""
        cols = []
        for i, space in enumerate(self.schema):
            cols.append(list(self._txt[i]) if space.kind.is_text
                        else self._vec[i].tolist())
        state = {"table": self.table, "columns": cols,
                 "alive": [bool(a) for a in self._alive]}
        if self.stats is not None:
            state["stats"] = {"scales": list(self.stats.scales),
                              "medians": list(self.stats.medians),
                              "sample_counts": list(self.stats.sample_counts)}
        return state

    @classmethod
    def from_state(cls, state: dict, schema: Schema) -> "Dataset":
        ds = cls(schema, table=state["table"])
        for i, space in enumerate(schema):
            col = state["columns"][i]
            if space.kind.is_text:
                ds._txt[i] = [str(s) for s in col]
            else:
                ds._vec[i] = np.asarray(col, dtype=np.float64).reshape(-1, space.dim)
        ds._alive = np.asarray(state["alive"], dtype=bool)
        rows = {len(ds._alive)}
        for i, space in enumerate(schema):
            rows.add(len(ds._txt[i]) if space.kind.is_text else len(ds._vec[i]))
        if len(rows) != 1:
            raise DatasetFormatError("column lengths disagree in dataset state")
        if "stats" in state:
            s = state["stats"]
            ds.stats = NormalizationStats(
                scales=tuple(float(x) for x in s["scales"]),
                medians=tuple(float(x) for x in s["medians"]),
                sample_counts=tuple(int(x) for x in s["sample_counts"]))
        return ds


# -- pair sampling and statistics ----------------------------------------------


def _space_rng(seed: int, name: str) -> np.random.Generator:
    # keyed by space name so dropping a space leaves the others' draws alone
    return np.random.Generator(np.random.PCG64(
        np.random.SeedSequence([seed, zlib.crc32(name.encode("utf-8"))])))


def sample_pair_indices(n: int, count: int, rng: np.random.Generator) -> np.ndarray:
    """Distinct unordered index pairs from ``range(n)``, shape (k, 2).

    Enumerates all pairs when there are at most ``count`` of them,
    otherwise rejection-samples without replacement.
    """
    total = n * (n - 1) // 2
    if total <= count:
        return np.array(list(itertools.combinations(range(n), 2)), dtype=np.int64)
    seen: set[int] = set()
    out = np.empty((count, 2), dtype=np.int64)
    filled = 0
    while filled < count:
        need = count - filled
        a = rng.integers(0, n, size=2 * need + 8)
        b = rng.integers(0, n, size=2 * need + 8)
        for i, j in zip(a, b):
            if i == j:
                continue
            lo, hi = (i, j) if i < j else (j, i)
            key = int(lo) * n + int(hi)
            if key in seen:
                continue
            seen.add(key)
            out[filled] = (lo, hi)
            filled += 1
            if filled == count:
                break
    return out


def _pair_distances(space: Space, values, pairs: np.ndarray) -> np.ndarray:
    """Raw distances for the given index pairs within one space column."""
    if space.kind.is_text:
        codes, lengths = encode_strings(values)
        out = np.empty(len(pairs), dtype=np.float64)
        # group by left index so each distinct left string costs one batched call
        order = np.argsort(pairs[:, 0], kind="stable")
        k = 0
        while k < len(order):
            run = [order[k]]
            left = pairs[order[k], 0]
            k += 1
            while k < len(order) and pairs[order[k], 0] == left:
                run.append(order[k])
                k += 1
            run = np.asarray(run)
            rights = pairs[run, 1]
            out[run] = levenshtein_batch(values[left], codes[rights], lengths[rights])
        return out
    arr = np.asarray(values, dtype=np.float64)
    diff = arr[pairs[:, 0]] - arr[pairs[:, 1]]
    if space.kind is SpaceKind.L1_VECTOR:
        return np.abs(diff).sum(axis=1)
    return np.sqrt((diff * diff).sum(axis=1))


def lower_median(values: np.ndarray) -> float:
    """Median taking the lower-middle element for even counts."""
    v = np.sort(np.asarray(values, dtype=np.float64))
    if v.size == 0:
        raise InsufficientDataError("median of empty sample")
    return float(v[(v.size - 1) // 2])


def compute_stats(objects: Sequence[MultiMetricObject] | Dataset, schema: Schema,
                  sample_pairs: int = DEFAULT_SAMPLE_PAIRS, seed: int = 0) -> NormalizationStats:
    """Per-space normalization scales from sampled pairwise distances.

    For each space, ``min(sample_pairs, n*(n-1)/2)`` distinct unordered
    pairs are drawn (seeded per space name) and the scale is set to twice
    the lower median of their raw distances.  A zero median falls back to
    a scale of 1 so degenerate columns stay usable.

    Raises InsufficientDataError with fewer than two objects.
    """
    if isinstance(objects, Dataset):
        ds = objects
        ids = ds.live_ids()
        n = len(ids)
        get_col = lambda i: (  # noqa: E731
            [ds._txt[i][j] for j in ids] if schema.spaces[i].kind.is_text
            else ds._vec[i][ids])
    else:
        objects = list(objects)
        n = len(objects)
        get_col = lambda i: (  # noqa: E731
            [o.components[i] for o in objects] if schema.spaces[i].kind.is_text
            else np.asarray([o.components[i] for o in objects], dtype=np.float64))
    if n < 2:
        raise InsufficientDataError(f"need at least 2 objects to compute stats, have {n}")
    if sample_pairs < 1:
        raise InsufficientDataError("sample_pairs must be at least 1")
    scales, medians, counts = [], [], []
    for i, space in enumerate(schema):
        rng = _space_rng(seed, space.name)
        pairs = sample_pair_indices(n, sample_pairs, rng)
        dists = _pair_distances(space, get_col(i), pairs)
        med = lower_median(dists)
        scales.append(2.0 * med if med > 0 else 1.0)
        medians.append(med)
        counts.append(len(pairs))
    return NormalizationStats(scales=tuple(scales), medians=tuple(medians),
                              sample_counts=tuple(counts))


# -- ingestion -------------------------------------------------------------------


def _load_rows(data_path: str | Path, schema: Schema) -> list[tuple[int | None, list, int]]:
    rows: list[tuple[int | None, list, int]] = []
    allowed = set(schema.names()) | {"id"}
    with open(data_path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetFormatError(f"data file: {exc.msg}",
                                         line=lineno, column=exc.colno) from None
            if not isinstance(rec, dict):
                raise DatasetFormatError("data row must be a JSON object", line=lineno)
            extra = set(rec) - allowed
            if extra:
                raise DatasetFormatError(
                    f"row references undeclared spaces: {sorted(extra)}", line=lineno)
            missing = set(schema.names()) - set(rec)
            if missing:
                raise DatasetFormatError(
                    f"row missing spaces: {sorted(missing)}", line=lineno)
            oid = rec.get("id")
            if oid is not None and not isinstance(oid, int):
                raise DatasetFormatError("'id' must be an integer", line=lineno)
            rows.append((oid, [rec[s.name] for s in schema], lineno))
    return rows


def load_dataset(schema_path: str | Path, data_path: str | Path, *,
                 sample_pairs: int = DEFAULT_SAMPLE_PAIRS, seed: int = 0,
                 with_stats: bool = True) -> Dataset:
    """Read schema + data files into a validated Dataset.

    Rows may carry an explicit integer ``id``; if any does, all must, the
    ids must be unique, and together they must cover exactly 0..n-1 (they
    describe the row order, not arbitrary labels).  Without ids, rows are
    numbered in file order.  Either way ids are 0..n-1 afterwards.

    With ``with_stats`` (the default) normalization statistics are
    computed immediately, which requires at least two rows.
    """
    table, schema = load_schema_file(schema_path)
    rows = _load_rows(data_path, schema)
    explicit = [oid for oid, _, _ in rows if oid is not None]
    if explicit and len(explicit) != len(rows):
        raise DatasetFormatError("either every row carries an id or none does")
    if explicit:
        seen: set[int] = set()
        for oid, _, lineno in rows:
            if oid in seen:
                raise DuplicateIdError(f"duplicate id {oid}", line=lineno)
            seen.add(oid)
        if seen != set(range(len(rows))):
            raise DatasetFormatError(
                f"ids must cover exactly 0..{len(rows) - 1}")
        rows = sorted(rows, key=lambda t: t[0])
    ds = Dataset(schema, table=table)
    coerced = []
    for _, comps, lineno in rows:
        try:
            coerced.append([coerce_value(s, v) for s, v in zip(schema, comps)])
        except SchemaError as exc:
            raise DatasetFormatError(str(exc), line=lineno) from None
    ds.extend(coerced)
    if with_stats:
        ds.stats = compute_stats(ds, schema, sample_pairs=sample_pairs, seed=seed)
    return ds
