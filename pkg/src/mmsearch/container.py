"""Versioned binary files for datasets and built indexes.

Layout: 4 magic bytes, a little-endian u16 format version, then tagged
sections until end of file.  Each section is a 4-byte ASCII tag
followed by a little-endian u64 payload length and the payload itself.
Payloads are UTF-8 JSON; floats survive the round trip exactly because
they are written with full repr precision.

Two file kinds share the format, distinguished by their ``meta``
section: a dataset file (schema, rows including dead ones, the
normalization stats) and an index file (engine knobs, the global index
state, one section of partition forests).
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

from .dataset import Dataset, parse_schema
from .engine import EngineConfig, SearchEngine
from .errors import ContainerFormatError
from .global_index import GlobalIndex
from .local_index import IndexForest

MAGIC = b"MMSC"
VERSION = 1

_U16 = struct.Struct("<H")
_U64 = struct.Struct("<Q")


def write_container(path: str | Path, sections: list[tuple[str, bytes]]):
    """Write sections in the given order (tags are 4 ASCII characters)."""
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(_U16.pack(VERSION))
        for tag, payload in sections:
            raw = tag.encode("ascii")
            if len(raw) != 4:
                raise ContainerFormatError(f"section tag must be 4 bytes: {tag!r}")
            fh.write(raw)
            fh.write(_U64.pack(len(payload)))
            fh.write(payload)


def read_container(path: str | Path) -> dict[str, bytes]:
    """Read every section; duplicate tags keep the last occurrence."""
    data = Path(path).read_bytes()
    if len(data) < 6 or data[:4] != MAGIC:
        raise ContainerFormatError(f"{path}: not a container file (bad magic)")
    (version,) = _U16.unpack_from(data, 4)
    if version != VERSION:
        raise ContainerFormatError(
            f"{path}: unsupported container version {version} (expected {VERSION})")
    sections: dict[str, bytes] = {}
    at = 6
    while at < len(data):
        if at + 12 > len(data):
            raise ContainerFormatError(f"{path}: truncated section header")
        tag = data[at: at + 4].decode("ascii", errors="replace")
        (length,) = _U64.unpack_from(data, at + 4)
        at += 12
        if at + length > len(data):
            raise ContainerFormatError(
                f"{path}: section {tag!r} runs past end of file")
        sections[tag] = data[at: at + length]
        at += length
    return sections


def _json_section(obj) -> bytes:
    return json.dumps(obj, separators=(",", ":")).encode("utf-8")


def _must(sections: dict[str, bytes], tag: str, path) -> bytes:
    if tag not in sections:
        raise ContainerFormatError(f"{path}: missing section {tag!r}")
    return sections[tag]


def _schema_obj(table: str, schema) -> dict:
    return {"table": table,
            "spaces": [{"name": s.name, "kind": s.kind.value,
                        **({"dim": s.dim} if s.dim is not None else {})}
                       for s in schema]}


# -- dataset files ---------------------------------------------------------------


def save_dataset(path: str | Path, dataset: Dataset):
    sections = [
        ("meta", _json_section({"kind": "dataset"})),
        ("schm", _json_section(_schema_obj(dataset.table, dataset.schema))),
        ("rows", _json_section(dataset.to_state())),
    ]
    write_container(path, sections)


def load_dataset(path: str | Path) -> Dataset:
    sections = read_container(path)
    meta = json.loads(_must(sections, "meta", path))
    if meta.get("kind") != "dataset":
        raise ContainerFormatError(
            f"{path}: expected a dataset file, found kind {meta.get('kind')!r}")
    _, schema = parse_schema(json.loads(_must(sections, "schm", path)))
    return Dataset.from_state(json.loads(_must(sections, "rows", path)), schema)


# -- index files ---------------------------------------------------------------------


def save_index(path: str | Path, engine: SearchEngine):
    """Persist the global index and every built partition forest."""
    engine.build_all()
    cfg = engine.config
    forests = {str(pid): engine.forest(pid).to_state()
               for pid in sorted(engine.global_index.partitions())}
    sections = [
        ("meta", _json_section({"kind": "index",
                                "leaf_capacity": cfg.leaf_capacity,
                                "probe_space_cap": cfg.probe_space_cap,
                                "knn_expand": cfg.knn_expand,
                                "sample_pairs": cfg.sample_pairs,
                                "seed": cfg.seed})),
        ("glob", _json_section(engine.global_index.to_state())),
        ("frst", _json_section(forests)),
    ]
    write_container(path, sections)


def load_index(path: str | Path, dataset: Dataset) -> SearchEngine:
    """Rebuild an engine from a dataset and its saved index file."""
    sections = read_container(path)
    meta = json.loads(_must(sections, "meta", path))
    if meta.get("kind") != "index":
        raise ContainerFormatError(
            f"{path}: expected an index file, found kind {meta.get('kind')!r}")
    if dataset.stats is None:
        raise ContainerFormatError(
            f"{path}: dataset carries no normalization stats; re-run ingest")
    config = EngineConfig(
        leaf_capacity=int(meta["leaf_capacity"]),
        probe_space_cap=meta.get("probe_space_cap"),
        knn_expand=int(meta.get("knn_expand", 1)),
        sample_pairs=int(meta.get("sample_pairs", 2000)),
        seed=int(meta.get("seed", 0)))
    glob = GlobalIndex.from_state(
        json.loads(_must(sections, "glob", path)), dataset.schema, dataset.stats)
    forests = {int(pid): IndexForest.from_state(state, dataset.schema, dataset.stats)
               for pid, state in json.loads(_must(sections, "frst", path)).items()}
    return SearchEngine.from_parts(dataset, config, glob, forests)
