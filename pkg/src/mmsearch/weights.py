"""Learning query weights from relevance examples.

Each training case pairs a query with the ids the caller considers
relevant.  Every epoch retrieves the current top-k per case, splits it
into positives (retrieved and relevant, falling back to the full truth
set when the overlap is empty) and negatives (retrieved but not
relevant), and takes one projected full-batch gradient step on a
softmax contrast of combined distances.  The exponent uses -distance by
default so closer means more likely; a literal flag flips the sign to
the printed form for comparison.  The returned weights are the iterate
whose retrieval recall was best, not the last one.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .engine import SearchEngine
from .errors import TrainingError
from .metrics import check_weights


@dataclass(frozen=True)
class QueryCase:
    """One supervised example: a query, the relevant ids, and its k."""

    components: tuple
    truth: tuple[int, ...]
    k: int

    def __post_init__(self):
        if self.k < 1:
            raise TrainingError("case k must be at least 1")
        if not self.truth:
            raise TrainingError("case has an empty truth set")


@dataclass
class QuerySample:
    """Per-space distance rows for one case's positives and negatives."""

    positives: np.ndarray  # (p, m)
    negatives: np.ndarray  # (n, m), possibly empty


@dataclass
class TrainResult:
    weights: np.ndarray
    best_recall: float
    best_epoch: int
    epochs_run: int
    loss_history: list[float] = field(default_factory=list)
    recall_history: list[float] = field(default_factory=list)
    lr_final: float = 0.0
    seed: int = 0


class _RowCache:
    """Per-case distance matrix over all live rows, computed once.

    Per-space distances do not depend on the weights, so an epoch only
    needs one weighted combination of the cached columns.  The live id
    set is frozen at construction; training assumes no concurrent
    dataset updates.
    """

    def __init__(self, engine: SearchEngine, cases: Sequence[QueryCase]):
        self.engine = engine
        self.cases = list(cases)
        self.ids = engine.dataset.live_ids()
        self._pos = {int(i): at for at, i in enumerate(self.ids)}
        self._full: list[np.ndarray | None] = [None] * len(self.cases)

    def full(self, case_index: int) -> np.ndarray:
        mat = self._full[case_index]
        if mat is None:
            mat = self.engine.dataset.distance_matrix(
                self.cases[case_index].components, self.ids)
            self._full[case_index] = mat
        return mat

    def rows(self, case_index: int, ids: Sequence[int]) -> np.ndarray:
        m = len(self.engine.schema)
        if not len(ids):
            return np.zeros((0, m))
        at = np.asarray([self._pos[int(i)] for i in ids], dtype=np.int64)
        return self.full(case_index)[at]

    def top_k(self, case_index: int, w: np.ndarray, k: int) -> tuple[int, ...]:
        """Exact nearest ids under ``w``; ties go to the smaller id.

        Same accumulation order and zero-weight skipping as the query
        engine, so the result matches an index-backed search exactly.
        """
        full = self.full(case_index)
        total = np.zeros(len(self.ids), dtype=np.float64)
        for i in range(full.shape[1]):
            if w[i] == 0.0:
                continue
            total += w[i] * full[:, i]
        order = np.lexsort((self.ids, total))[: min(k, len(self.ids))]
        return tuple(int(self.ids[i]) for i in order)


def generate_samples(cases: Sequence[QueryCase], engine: SearchEngine, weights,
                     cache: _RowCache | None = None
                     ) -> tuple[list[QuerySample], list[tuple[int, ...]]]:
    """Retrieve top-k per case under ``weights`` and split into a batch.

    Returns the sample batch plus the retrieved id tuples (handy for
    recall bookkeeping).  Positives are truth intersect retrieved, or the
    whole truth set when the intersection is empty.
    """
    w = check_weights(weights, len(engine.schema), require_nonzero=True)
    cache = cache or _RowCache(engine, cases)
    batch, retrieved_all = [], []
    for ci, case in enumerate(cases):
        retrieved = cache.top_k(ci, w, case.k)
        retrieved_all.append(retrieved)
        truth = set(case.truth)
        pos = sorted(truth.intersection(retrieved)) or sorted(truth)
        neg = sorted(i for i in retrieved if i not in truth)
        batch.append(QuerySample(positives=cache.rows(ci, pos),
                                 negatives=cache.rows(ci, neg)))
    return batch, retrieved_all


def _group_logsum(rows: np.ndarray, w: np.ndarray, sign: float,
                  shift: float) -> tuple[float, np.ndarray]:
    """Sum of exp(sign*delta - shift) and its weighted distance rows."""
    scores = np.exp(sign * (rows @ w) - shift)
    return float(scores.sum()), scores


def loss(batch: Sequence[QuerySample], weights, sign: float = -1.0) -> float:
    """Mean over queries of -log(pos mass / total mass).

    A query without negatives contributes exactly zero (its ratio is 1).
    A query without positives is a contract violation.
    """
    w = np.asarray(weights, dtype=np.float64)
    if not batch:
        raise TrainingError("empty sample batch")
    total = 0.0
    for sample in batch:
        if sample.positives.shape[0] == 0:
            raise TrainingError("sample has no positives")
        deltas = sign * np.concatenate(
            [sample.positives @ w, sample.negatives @ w])
        shift = float(deltas.max())
        p, _ = _group_logsum(sample.positives, w, sign, shift)
        n, _ = _group_logsum(sample.negatives, w, sign, shift) \
            if sample.negatives.shape[0] else (0.0, None)
        total += np.log(p + n) - np.log(p)
    return float(total / len(batch))


def loss_gradient(batch: Sequence[QuerySample], weights,
                  sign: float = -1.0) -> np.ndarray:
    """Analytic gradient of :func:`loss` with respect to the weights."""
    w = np.asarray(weights, dtype=np.float64)
    if not batch:
        raise TrainingError("empty sample batch")
    grad = np.zeros_like(w)
    for sample in batch:
        if sample.positives.shape[0] == 0:
            raise TrainingError("sample has no positives")
        deltas = sign * np.concatenate(
            [sample.positives @ w, sample.negatives @ w])
        shift = float(deltas.max())
        p, ps = _group_logsum(sample.positives, w, sign, shift)
        if sample.negatives.shape[0]:
            n, ns = _group_logsum(sample.negatives, w, sign, shift)
            both = (ps @ sample.positives + ns @ sample.negatives)
        else:
            n, both = 0.0, ps @ sample.positives
        grad += sign * (both / (p + n) - (ps @ sample.positives) / p)
    return grad / len(batch)


def recall_of(retrieved: Sequence[tuple[int, ...]], cases: Sequence[QueryCase]) -> float:
    """Mean |truth intersect retrieved| / k over the cases."""
    vals = [len(set(case.truth).intersection(got)) / case.k
            for case, got in zip(cases, retrieved)]
    return float(np.mean(vals))


def train(cases: Sequence[QueryCase], engine: SearchEngine, *,
          epochs: int = 300, lr: float = 0.5, seed: int = 0,
          sign: float = -1.0, stop_recall: float | None = None) -> TrainResult:
    """Projected full-batch gradient descent on the contrastive loss.

    Weights start uniform at random in [0, 1]^m (seeded) and stay inside
    the box by clipping after every step.  The learning rate halves
    whenever the epoch loss rises.  Should clipping ever zero the whole
    vector, it is re-randomized once; a second collapse aborts.  Training
    returns the iterate with the best retrieval recall over the cases,
    optionally stopping early once ``stop_recall`` is reached.
    """
    if not cases:
        raise TrainingError("no training cases")
    if epochs < 0:
        raise TrainingError("epochs must be non-negative")
    m = len(engine.schema)
    rng = np.random.Generator(np.random.PCG64(seed))
    w = rng.uniform(0.0, 1.0, m)
    if w.sum() == 0.0:
        w = rng.uniform(0.0, 1.0, m)
    cache = _RowCache(engine, cases)
    result = TrainResult(weights=w.copy(), best_recall=-1.0, best_epoch=0,
                         epochs_run=0, lr_final=lr, seed=seed)
    prev_loss = None
    rerandomized = False
    for epoch in range(epochs):
        batch, retrieved = generate_samples(cases, engine, w, cache=cache)
        rec = recall_of(retrieved, cases)
        cur = loss(batch, w, sign=sign)
        result.loss_history.append(cur)
        result.recall_history.append(rec)
        result.epochs_run = epoch + 1
        if rec > result.best_recall:
            result.best_recall = rec
            result.best_epoch = epoch
            result.weights = w.copy()
        if stop_recall is not None and rec >= stop_recall:
            break
        if prev_loss is not None and cur > prev_loss:
            lr /= 2.0
        prev_loss = cur
        w = np.clip(w - lr * loss_gradient(batch, w, sign=sign), 0.0, 1.0)
        if w.sum() == 0.0:
            if rerandomized:
                raise TrainingError("weights collapsed to zero twice; aborting")
            rerandomized = True
            w = rng.uniform(0.0, 1.0, m)
    result.lr_final = lr
    return result
