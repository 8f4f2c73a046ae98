"""
The SQL surface and the on-disk container format
=================================================

Queries can arrive as SQL text with ODBRANGE / ODBKNN predicates; the
parser reports byte-accurate error offsets, the pretty-printer is a
stable inverse, and execution matches the direct API.  Datasets and
indexes round-trip through a tagged-section container file.
"""

import json
import tempfile
from pathlib import Path

from mmsearch import (EngineConfig, SearchEngine, SqlSyntaxError, execute,
                      load_dataset_file, load_index, parse, pretty,
                      save_dataset, save_index)
from mmsearch.synth import synthetic_dataset

dataset = synthetic_dataset(400, seed=13, blobs=4)
engine = SearchEngine(dataset, EngineConfig(leaf_capacity=32, seed=13))
engine.build_all()

first = dataset.object(0).components
literal = json.dumps({"vec": [float(v) for v in first[0]],
                      "loc": [float(v) for v in first[1]],
                      "txt": first[2]})

stmt = (f"SELECT * FROM T WHERE T.obj IN ODBKNN({literal}, [1, 0.5, 0.25], 5)")
ast = parse(stmt)
print("parsed:", pretty(ast))
assert parse(pretty(ast)) == ast            # printing then reparsing is lossless

res = execute(ast, engine)
print("knn over SQL:", [(i, round(d, 4)) for i, d in res.pairs()])
assert res.ids[0] == 0 and res.distances[0] == 0.0   # the object finds itself

# syntax errors carry the byte offset of the offending token
broken = "SELECT * FROM T WHRE T.obj IN ODBKNN({}, [1, 1, 1], 3)"
try:
    parse(broken)
except SqlSyntaxError as exc:
    print(f"\nsyntax error at byte {exc.offset}: {exc}")
    print("  " + broken)
    print("  " + " " * exc.offset + "^")

# weights may be the token LEARNED, resolved at bind time from a
# trained artifact (see the learn-weights CLI command)
print("\nLEARNED form:", pretty(parse(
    f"SELECT * FROM T WHERE T.obj IN ODBKNN({literal}, LEARNED, 5)")))

# containers: magic, version, tagged JSON sections
with tempfile.TemporaryDirectory() as tmp:
    data_path = Path(tmp) / "demo.mmsd"
    index_path = Path(tmp) / "demo.mmsi"
    save_dataset(data_path, dataset)
    save_index(index_path, engine)
    print(f"\nwrote {data_path.name} ({data_path.stat().st_size:,} bytes) "
          f"and {index_path.name} ({index_path.stat().st_size:,} bytes)")

    again = load_index(index_path, load_dataset_file(data_path))
    r2 = execute(ast, again)
    assert r2.ids == res.ids and r2.distances == res.distances
    print("reloaded engine answers the same SQL identically")
