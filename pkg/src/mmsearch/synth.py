"""Seeded synthetic datasets and query workloads.

Objects span three spaces: a dense vector (L1), a coordinate pair (L2),
and a short string (edit distance).  With ``blobs`` set, all three
components of an object derive from the same cluster, which gives the
cross-space correlation that makes partition pruning earn its keep.
"""

from __future__ import annotations

import string as _string

import numpy as np

from .dataset import Dataset, compute_stats
from .metrics import Schema, Space, SpaceKind

ALPHABET = _string.ascii_lowercase


def default_schema(vec_dim: int = 5, names: tuple[str, str, str] = ("vec", "loc", "txt"),
                   table: str = "T") -> tuple[str, Schema]:
    schema = Schema((
        Space(name=names[0], kind=SpaceKind.L1_VECTOR, dim=vec_dim),
        Space(name=names[1], kind=SpaceKind.L2_POINT, dim=2),
        Space(name=names[2], kind=SpaceKind.EDIT_TEXT),
    ))
    return table, schema


def _random_string(rng: np.random.Generator, lo: int, hi: int) -> str:
    length = int(rng.integers(lo, hi + 1))
    return "".join(ALPHABET[int(c)] for c in rng.integers(0, len(ALPHABET), length))


def _mutate_string(rng: np.random.Generator, s: str, edits: int,
                   lo: int, hi: int) -> str:
    out = list(s)
    for _ in range(edits):
        op = int(rng.integers(0, 3))
        if op == 0 and len(out) > lo:          # delete
            del out[int(rng.integers(0, len(out)))]
        elif op == 1 and len(out) < hi:        # insert
            out.insert(int(rng.integers(0, len(out) + 1)),
                       ALPHABET[int(rng.integers(0, len(ALPHABET)))])
        elif out:                              # substitute
            out[int(rng.integers(0, len(out)))] = ALPHABET[int(rng.integers(0, len(ALPHABET)))]
    return "".join(out)


def synthetic_dataset(n: int, seed: int = 0, *, vec_dim: int = 5,
                      text_len: tuple[int, int] = (5, 20), blobs: int | None = None,
                      blob_spread: float = 0.08, sample_pairs: int = 20_000,
                      with_stats: bool = True) -> Dataset:
    """Build an n-object dataset; ``blobs`` adds shared cluster structure.

    Without blobs, components are independent and roughly uniform.  With
    blobs, each object picks one of ``blobs`` clusters; its vector and
    location are Gaussian around that cluster's centers and its string is
    the cluster's string plus a couple of random edits.
    """
    rng = np.random.Generator(np.random.PCG64(seed))
    _, schema = default_schema(vec_dim=vec_dim)
    lo, hi = text_len
    rows = []
    if blobs:
        vec_centers = rng.uniform(0.0, 1.0, size=(blobs, vec_dim))
        loc_centers = rng.uniform(0.0, 1.0, size=(blobs, 2))
        txt_centers = [_random_string(rng, lo, hi) for _ in range(blobs)]
        labels = rng.integers(0, blobs, size=n)
        for b in labels:
            b = int(b)
            vec = vec_centers[b] + rng.normal(0.0, blob_spread, vec_dim)
            loc = loc_centers[b] + rng.normal(0.0, blob_spread, 2)
            txt = _mutate_string(rng, txt_centers[b], int(rng.integers(0, 3)), lo, hi)
            rows.append((vec, loc, txt))
    else:
        for _ in range(n):
            rows.append((rng.uniform(0.0, 1.0, vec_dim),
                         rng.uniform(0.0, 1.0, 2),
                         _random_string(rng, lo, hi)))
    ds = Dataset(schema)
    ds.extend(rows)
    if with_stats:
        ds.stats = compute_stats(ds, schema, sample_pairs=sample_pairs, seed=seed)
    return ds


def random_query(dataset: Dataset, rng: np.random.Generator,
                 text_len: tuple[int, int] = (5, 20)) -> list:
    """A query object: a perturbed copy of a random live object."""
    ids = dataset.live_ids()
    base = dataset.object(int(ids[rng.integers(0, len(ids))]))
    out = []
    for i, space in enumerate(dataset.schema):
        if space.kind.is_text:
            out.append(_mutate_string(rng, base.components[i],
                                      int(rng.integers(0, 3)), *text_len))
        else:
            out.append(np.asarray(base.components[i]) +
                       rng.normal(0.0, 0.02, space.dim))
    return out


def random_weights(m: int, rng: np.random.Generator, zero_prob: float = 0.0) -> np.ndarray:
    """Weights in (0, 1], optionally zeroing spaces; never all zero."""
    while True:
        w = rng.uniform(0.05, 1.0, m)
        if zero_prob > 0:
            w = np.where(rng.uniform(size=m) < zero_prob, 0.0, w)
        if w.sum() > 0:
            return w


def calibrated_radius(dataset: Dataset, q_components, weights,
                      selectivity: float, probe: int = 2000,
                      rng: np.random.Generator | None = None) -> float:
    """Radius whose range result covers roughly ``selectivity`` of the data."""
    ids = dataset.live_ids()
    if rng is not None and len(ids) > probe:
        ids = np.sort(rng.choice(ids, size=probe, replace=False))
    dists = np.sort(dataset.weighted_distances(q_components, weights, ids))
    pos = min(len(dists) - 1, max(0, int(round(selectivity * len(dists))) - 1))
    return float(dists[pos])


def benchmark_batch(dataset: Dataset, count: int = 30, seed: int = 7,
                    knn_ks: tuple[int, ...] = (1, 5, 10),
                    selectivities: tuple[float, ...] = (0.005, 0.02)) -> list:
    """A mixed, seeded query batch for throughput measurement."""
    rng = np.random.Generator(np.random.PCG64(seed))
    m = len(dataset.schema)
    batch = []
    for j in range(count):
        q = random_query(dataset, rng)
        w = random_weights(m, rng)
        if j % 2 == 0:
            sel = selectivities[(j // 2) % len(selectivities)]
            batch.append(("range", q, w, calibrated_radius(dataset, q, w, sel, rng=rng)))
        else:
            batch.append(("knn", q, w, knn_ks[(j // 2) % len(knn_ks)]))
    return batch
