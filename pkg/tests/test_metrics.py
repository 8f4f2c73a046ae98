import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import mmsearch.metrics as metrics
from mmsearch.errors import DimensionError, InvalidWeightsError, SchemaError
from mmsearch.metrics import (MultiMetricObject, NormalizationStats, Schema,
                              Space, SpaceKind, check_weights, distance,
                              encode_strings, levenshtein, levenshtein_batch,
                              multi_metric_distance, normalized_distance)

import oracle


def test_l1_worked_example():
    assert distance(SpaceKind.L1_VECTOR, [1, 2], [3, 1]) == 3.0


def test_l2_worked_example():
    assert distance(SpaceKind.L2_POINT, [0, 0], [3, 4]) == 5.0


def test_edit_worked_example():
    assert distance(SpaceKind.EDIT_TEXT, "kitten", "sitting") == 3.0


def test_distance_kind_mismatch():
    with pytest.raises(SchemaError):
        distance(SpaceKind.EDIT_TEXT, [1, 2], "ab")
    with pytest.raises(SchemaError):
        distance(SpaceKind.L1_VECTOR, "ab", [1, 2])


def test_distance_dimension_mismatch():
    with pytest.raises(DimensionError):
        distance(SpaceKind.L1_VECTOR, [1, 2, 3], [1, 2])


def test_normalized_distance_examples():
    space = Space("v", SpaceKind.L1_VECTOR, 1)
    stats = NormalizationStats(scales=(2.0,))
    assert normalized_distance(0, space, [1.0], [2.0], stats) == 0.5
    assert normalized_distance(0, space, [5.0], [5.0], stats) == 0.0
    stats1 = NormalizationStats(scales=(1.0,))
    assert normalized_distance(0, space, [0.0], [0.3], stats1) == pytest.approx(0.3)


def test_stats_reject_nonpositive_scale():
    with pytest.raises(Exception):
        NormalizationStats(scales=(0.0,))
    with pytest.raises(Exception):
        NormalizationStats(scales=(-1.0,))
    with pytest.raises(Exception):
        NormalizationStats(scales=(float("nan"),))


def _toy_schema():
    return Schema((Space("a", SpaceKind.L1_VECTOR, 1),
                   Space("b", SpaceKind.L2_POINT, 2),
                   Space("c", SpaceKind.EDIT_TEXT, None)))


def _pair_with_normalized(d1, d2, d3):
    """Two objects whose normalized per-space distances are d1, d2, d3."""
    schema = _toy_schema()
    stats = NormalizationStats(scales=(1.0, 1.0, 1.0))
    q = MultiMetricObject(0, (np.array([0.0]), np.array([0.0, 0.0]), "aaaaaaaaaa"))
    o = MultiMetricObject(1, (np.array([d1]), np.array([d2, 0.0]),
                              "aaaaaaaaaa"[: 10 - int(d3)] + "b" * int(d3)))
    return schema, stats, q, o


def test_multi_metric_worked_examples():
    schema, stats, q, o = _pair_with_normalized(0.2, 0.9, 3)
    got = multi_metric_distance(q, o, (1.0, 0.0, 1.0), schema, stats)
    assert got == pytest.approx(0.2 + 3.0, abs=1e-9)
    assert multi_metric_distance(q, o, (0.0, 0.0, 0.0), schema, stats) == 0.0

    schema2 = Schema(schema.spaces[:2])
    stats2 = NormalizationStats(scales=(1.0, 1.0))
    q2 = MultiMetricObject(0, (np.array([0.0]), np.array([0.0, 0.0])))
    o2 = MultiMetricObject(1, (np.array([0.4]), np.array([0.6, 0.0])))
    got2 = multi_metric_distance(q2, o2, (0.5, 0.5), schema2, stats2)
    assert got2 == pytest.approx(0.5, abs=1e-9)


def test_zero_weight_spaces_never_computed(monkeypatch):
    schema, stats, q, o = _pair_with_normalized(0.2, 0.9, 3)
    calls = []
    real = metrics.distance

    def counting(kind, a, b):
        calls.append(kind)
        return real(kind, a, b)

    monkeypatch.setattr(metrics, "distance", counting)
    for weights, active in [((1.0, 0.0, 1.0), 2), ((0.0, 0.0, 0.0), 0),
                            ((0.3, 0.3, 0.3), 3), ((0.0, 1.0, 0.0), 1)]:
        calls.clear()
        multi_metric_distance(q, o, weights, schema, stats)
        assert len(calls) == active


def test_check_weights_contract():
    assert check_weights([0.5, 1.0], 2).tolist() == [0.5, 1.0]
    with pytest.raises(InvalidWeightsError):
        check_weights([0.5], 2)
    with pytest.raises(InvalidWeightsError):
        check_weights([1.5, 0.0], 2)
    with pytest.raises(InvalidWeightsError):
        check_weights([-0.1, 0.5], 2)
    with pytest.raises(InvalidWeightsError):
        check_weights([float("inf"), 0.5], 2)
    with pytest.raises(InvalidWeightsError):
        check_weights([0.0, 0.0], 2, require_nonzero=True)
    assert check_weights([0.0, 0.0], 2).sum() == 0.0


# -- metric laws -------------------------------------------------------------------

vec3 = st.lists(st.floats(-50, 50, allow_nan=False), min_size=3, max_size=3)
word = st.text(alphabet="abcdef", max_size=12)


@given(vec3, vec3)
def test_l1_symmetry(a, b):
    assert distance(SpaceKind.L1_VECTOR, a, b) == distance(SpaceKind.L1_VECTOR, b, a)


@given(vec3, vec3, vec3)
def test_l1_triangle(a, b, c):
    ab = distance(SpaceKind.L1_VECTOR, a, b)
    bc = distance(SpaceKind.L1_VECTOR, b, c)
    ac = distance(SpaceKind.L1_VECTOR, a, c)
    assert ac <= ab + bc + 1e-9


@given(vec3, vec3, vec3)
def test_l2_triangle_and_symmetry(a, b, c):
    d = lambda x, y: distance(SpaceKind.L2_POINT, x, y)
    assert d(a, b) == d(b, a)
    assert d(a, c) <= d(a, b) + d(b, c) + 1e-9


@given(word, word)
def test_edit_symmetry_and_identity(a, b):
    assert levenshtein(a, b) == levenshtein(b, a)
    assert (levenshtein(a, b) == 0) == (a == b)


@given(word, word, word)
def test_edit_triangle(a, b, c):
    assert levenshtein(a, c) <= levenshtein(a, b) + levenshtein(b, c)


@given(word, word)
def test_edit_matches_reference(a, b):
    assert levenshtein(a, b) == oracle.edit(a, b)


@given(word, word, st.integers(0, 6))
def test_edit_ceiling_exact_when_under(a, b, ceiling):
    """With a ceiling the result is exact whenever it is <= the ceiling."""
    full = oracle.edit(a, b)
    banded = levenshtein(a, b, ceiling=ceiling)
    if full <= ceiling:
        assert banded == full
    else:
        assert banded > ceiling


@settings(max_examples=30)
@given(st.lists(word, min_size=1, max_size=20), word)
def test_batch_levenshtein_matches_scalar(strings, q):
    codes, lengths = encode_strings(strings)
    got = levenshtein_batch(q, codes, lengths)
    want = [oracle.edit(q, s) for s in strings]
    assert got.tolist() == want


def test_delta_w_is_a_metric_on_random_triples(rng):
    schema = _toy_schema()
    stats = NormalizationStats(scales=(2.0, 3.0, 4.0))
    w = (0.7, 0.2, 0.4)

    def rand_obj(i):
        s = "".join(chr(97 + c) for c in rng.integers(0, 5, rng.integers(1, 10)))
        return MultiMetricObject(i, (rng.uniform(-5, 5, 1), rng.uniform(-5, 5, 2), s))

    for _ in range(200):
        a, b, c = rand_obj(0), rand_obj(1), rand_obj(2)
        dab = multi_metric_distance(a, b, w, schema, stats)
        dba = multi_metric_distance(b, a, w, schema, stats)
        dac = multi_metric_distance(a, c, w, schema, stats)
        dbc = multi_metric_distance(b, c, w, schema, stats)
        assert dab == pytest.approx(dba, abs=1e-9)
        assert dac <= dab + dbc + 1e-9
        assert dab >= 0.0


def test_encode_strings_roundtrip_unicode():
    strings = ["héllo", "", "日本語", "abc"]
    codes, lengths = encode_strings(strings)
    assert lengths.tolist() == [5, 0, 3, 3]
    got = levenshtein_batch("héllo", codes, lengths)
    assert got[0] == 0
    assert got[1] == 5
