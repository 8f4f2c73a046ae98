"""A tiny SQL dialect for issuing multi-metric queries.

Two statement shapes are accepted:

    SELECT * FROM T WHERE T.col IN ODBRANGE({...}, [w, ...] | LEARNED, r)
    SELECT * FROM T WHERE T.col IN ODBKNN({...}, [w, ...] | LEARNED, k)

Keywords are case-insensitive and whitespace is free-form.  The query
object is an inline JSON object keyed by space name, so values cannot
be attached to the wrong space by position.  Only ``SELECT *`` is
supported; naming a projection fails cleanly at parse time.  The
statements cannot be combined with other SQL clauses.

Parse errors carry the byte offset of the offending token plus the set
of tokens that would have been accepted there.  Semantic checks
(unknown space names, weight arity) happen later, at bind time.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import BindError, SqlSyntaxError
from .metrics import Schema, SpaceKind, coerce_value

LEARNED = "LEARNED"

_PUNCT = set("*.,()[];")
_IDENT_START = set("abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ_")
_IDENT_BODY = _IDENT_START | set("0123456789")
_NUM_START = set("0123456789+-.")


@dataclass(frozen=True)
class RangePredicate:
    literal: dict
    weights: tuple[float, ...] | None  # None means LEARNED
    radius: float


@dataclass(frozen=True)
class KnnPredicate:
    literal: dict
    weights: tuple[float, ...] | None
    k: int


@dataclass(frozen=True)
class Query:
    table: str
    qualifier: str
    column: str
    predicate: RangePredicate | KnnPredicate


class _Parser:
    """Cursor over one statement; offsets reported in bytes."""

    def __init__(self, text: str):
        self.text = text
        self.at = 0  # character cursor

    def _byte(self, char_index: int) -> int:
        return len(self.text[:char_index].encode("utf-8"))

    def fail(self, char_index: int, expected: Sequence[str], note: str = ""):
        got = self.text[char_index: char_index + 20] or "end of statement"
        msg = f"expected {' or '.join(expected)}, found {got!r}"
        if note:
            msg = f"{msg} ({note})"
        raise SqlSyntaxError(msg, offset=self._byte(char_index),
                             expected=tuple(expected))

    def skip_ws(self):
        while self.at < len(self.text) and self.text[self.at].isspace():
            self.at += 1

    def _scan_ident(self) -> str:
        start = self.at
        while self.at < len(self.text) and self.text[self.at] in _IDENT_BODY:
            self.at += 1
        return self.text[start: self.at]

    def keyword(self, *words: str):
        """Consume one of the keywords (case-insensitive) or fail."""
        self.skip_ws()
        start = self.at
        if self.at < len(self.text) and self.text[self.at] in _IDENT_START:
            word = self._scan_ident()
            if word.upper() in words:
                return word.upper()
        self.at = start
        self.fail(start, words)

    def ident(self, what: str) -> str:
        self.skip_ws()
        start = self.at
        if self.at < len(self.text) and self.text[self.at] in _IDENT_START:
            return self._scan_ident()
        self.fail(start, (what,))

    def punct(self, ch: str):
        self.skip_ws()
        if self.at < len(self.text) and self.text[self.at] == ch:
            self.at += 1
            return
        self.fail(self.at, (repr(ch),))

    def peek(self) -> str:
        self.skip_ws()
        return self.text[self.at: self.at + 1]

    def number(self, what: str = "number") -> tuple[float, int]:
        """Parse a numeric literal; returns (value, start offset in chars)."""
        self.skip_ws()
        start = self.at
        if not (self.at < len(self.text) and self.text[self.at] in _NUM_START):
            self.fail(start, (what,))
        self.at += 1
        while self.at < len(self.text) and (self.text[self.at] in _NUM_START
                                            or self.text[self.at] in "eE"):
            # allow exponent signs only right after e/E
            if self.text[self.at] in "+-" and self.text[self.at - 1] not in "eE":
                break
            self.at += 1
        token = self.text[start: self.at]
        try:
            value = float(token)
        except ValueError:
            self.fail(start, (what,))
        if not math.isfinite(value):
            self.fail(start, ("finite " + what,))
        return value, start

    def json_object(self) -> dict:
        """Slice one balanced {...} literal and decode it as JSON."""
        self.skip_ws()
        start = self.at
        if self.peek() != "{":
            self.fail(start, ("'{'",))
        depth = 0
        in_string = False
        escaped = False
        i = start
        while i < len(self.text):
            c = self.text[i]
            if in_string:
                if escaped:
                    escaped = False
                elif c == "\\":
                    escaped = True
                elif c == '"':
                    in_string = False
            elif c == '"':
                in_string = True
            elif c == "{":
                depth += 1
            elif c == "}":
                depth -= 1
                if depth == 0:
                    i += 1
                    break
            i += 1
        else:
            self.fail(start, ("'}'",), note="unterminated query literal")
        raw = self.text[start:i]
        try:
            value = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise SqlSyntaxError(
                f"bad query literal: {exc.msg}",
                offset=self._byte(start + exc.pos),
                expected=("valid JSON",)) from None
        if not isinstance(value, dict):
            self.fail(start, ("object keyed by space name",))
        self.at = i
        return value

    def weights(self) -> tuple[float, ...] | None:
        self.skip_ws()
        start = self.at
        c = self.peek()
        if c in _IDENT_START:
            word = self._scan_ident()
            if word.upper() == LEARNED:
                return None
            self.at = start
            self.fail(start, ("'['", LEARNED))
        if c != "[":
            self.fail(start, ("'['", LEARNED))
        self.punct("[")
        vals = [self.number("weight")[0]]
        while self.peek() == ",":
            self.punct(",")
            vals.append(self.number("weight")[0])
        self.punct("]")
        return tuple(vals)

    def end(self):
        self.skip_ws()
        if self.peek() == ";":
            self.punct(";")
            self.skip_ws()
        if self.at < len(self.text):
            self.fail(self.at, ("end of statement",))


def parse(statement: str) -> Query:
    """Parse one statement into its AST or raise :class:`SqlSyntaxError`."""
    p = _Parser(statement)
    p.keyword("SELECT")
    p.skip_ws()
    if p.peek() != "*":
        p.fail(p.at, ("'*'",), note="only SELECT * is supported")
    p.punct("*")
    p.keyword("FROM")
    table = p.ident("table name")
    p.keyword("WHERE")
    qualifier = p.ident("table name")
    p.punct(".")
    column = p.ident("column name")
    p.keyword("IN")
    func = p.keyword("ODBRANGE", "ODBKNN")
    p.punct("(")
    literal = p.json_object()
    p.punct(",")
    weights = p.weights()
    p.punct(",")
    if func == "ODBRANGE":
        radius, at = p.number("radius")
        if radius < 0:
            p.fail(at, ("radius >= 0",))
        predicate: RangePredicate | KnnPredicate = RangePredicate(
            literal=literal, weights=weights, radius=radius)
    else:
        k, at = p.number("k")
        if k != int(k) or k < 1:
            p.fail(at, ("positive integer k",))
        predicate = KnnPredicate(literal=literal, weights=weights, k=int(k))
    p.punct(")")
    p.end()
    return Query(table=table, qualifier=qualifier, column=column,
                 predicate=predicate)


def _render_number(x: float) -> str:
    return repr(int(x)) if float(x).is_integer() else repr(float(x))


def pretty(ast: Query) -> str:
    """Canonical single-line rendering; reparsing it rebuilds the AST."""
    pred = ast.predicate
    literal = json.dumps(pred.literal, sort_keys=True, separators=(", ", ": "))
    if pred.weights is None:
        w = LEARNED
    else:
        w = "[" + ", ".join(_render_number(v) for v in pred.weights) + "]"
    if isinstance(pred, RangePredicate):
        tail = f"ODBRANGE({literal}, {w}, {_render_number(pred.radius)})"
    else:
        tail = f"ODBKNN({literal}, {w}, {pred.k})"
    return (f"SELECT * FROM {ast.table} WHERE "
            f"{ast.qualifier}.{ast.column} IN {tail}")


def parse_statements(text: str) -> list[tuple[int, str]]:
    """Split a statement file: one statement per line, ``--`` comments."""
    out = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        cut = line.find("--")
        if cut >= 0:
            line = line[:cut]
        line = line.strip()
        if line:
            out.append((lineno, line))
    return out


# -- binding -----------------------------------------------------------------------


def _neutral_value(space) -> object:
    """Placeholder for a zero-weight space missing from the literal.

    Never contributes to any distance (weight zero skips the space), so
    any well-typed value works.
    """
    if space.kind is SpaceKind.EDIT_TEXT:
        return ""
    return np.zeros(space.dim)


@dataclass(frozen=True)
class BoundQuery:
    components: tuple
    weights: np.ndarray
    radius: float | None
    k: int | None


def bind(ast: Query, schema: Schema, table: str,
         learned_weights=None) -> BoundQuery:
    """Resolve an AST against a concrete schema.

    ``learned_weights`` backs the LEARNED token; binding fails if the
    token is used and no vector is available.  The predicate column is
    not constrained to a space name: the operators always search every
    weighted space.
    """
    if ast.table != table:
        raise BindError(f"unknown table {ast.table!r} (expected {table!r})")
    if ast.qualifier != ast.table:
        raise BindError(
            f"qualifier {ast.qualifier!r} does not match table {ast.table!r}")
    m = len(schema)
    pred = ast.predicate
    if pred.weights is None:
        if learned_weights is None:
            raise BindError("no learned weights available; run learn-weights first")
        weights = np.asarray(learned_weights, dtype=np.float64)
    else:
        weights = np.asarray(pred.weights, dtype=np.float64)
    if weights.shape != (m,):
        raise BindError(f"expected {m} weights, got {len(weights)}")
    if not np.all(np.isfinite(weights)) or weights.min() < 0 or weights.max() > 1:
        raise BindError("weights must be finite numbers in [0, 1]")
    if float(weights.sum()) == 0.0:
        raise BindError("at least one weight must be positive")

    names = {s.name for s in schema.spaces}
    for key in pred.literal:
        if key not in names:
            raise BindError(f"unknown space name {key!r} in query literal "
                            f"(schema has {sorted(names)})")
    components = []
    for i, space in enumerate(schema.spaces):
        if space.name in pred.literal:
            try:
                components.append(coerce_value(space, pred.literal[space.name]))
            except Exception as exc:
                raise BindError(f"bad value for space {space.name!r}: {exc}") from None
        elif weights[i] == 0.0:
            components.append(_neutral_value(space))
        else:
            raise BindError(f"query literal missing space {space.name!r} "
                            f"(weight {weights[i]:g} is nonzero)")
    if isinstance(pred, RangePredicate):
        return BoundQuery(tuple(components), weights, pred.radius, None)
    return BoundQuery(tuple(components), weights, None, pred.k)


def _engine_dataset(engine):
    ds = getattr(engine, "dataset", None)
    if ds is None:  # cluster coordinator wraps a local engine
        ds = engine.engine.dataset
    return ds


def engine_schema(engine) -> Schema:
    return _engine_dataset(engine).schema


def execute(ast: Query, engine, table: str | None = None,
            learned_weights=None):
    """Bind and run one statement against a local or cluster engine.

    Always returns a plain result set; the cluster's workload report is
    dropped here (the CLI fetches it separately when asked).
    """
    name = table if table is not None else _engine_dataset(engine).table
    bound = bind(ast, engine_schema(engine), name, learned_weights)
    if bound.radius is not None:
        if hasattr(engine, "execute_range"):
            return engine.execute_range(bound.components, bound.weights, bound.radius)
        result, _ = engine.range_query(bound.components, bound.weights, bound.radius)
        return result
    if hasattr(engine, "execute_knn"):
        return engine.execute_knn(bound.components, bound.weights, bound.k)
    result, _ = engine.knn_query(bound.components, bound.weights, bound.k)
    return result
