"""Command-line front end.

    mmsearch ingest         schema + JSONL rows -> dataset file
    mmsearch build          dataset file -> index file
    mmsearch query          run SQL statements locally or against workers
    mmsearch serve-worker   host one worker over TCP
    mmsearch serve-coordinator  distribute partitions, then a SQL prompt
    mmsearch learn-weights  train query weights from labeled cases
    mmsearch tune           run the knob tuner, emit a trace
    mmsearch report         summarize a tuner trace

File formats: dataset and index files are the binary containers of
:mod:`.container`; cases files are JSONL objects with "components"
(keyed by space name), "truth" (id list) and optional "k"; weights
artifacts and tuner configs are plain JSON; traces are JSONL, one
record per tuning step.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import container, sql
from .cluster import Worker, WorkerServer, make_socket_cluster
from .dataset import load_dataset as ingest_dataset
from .engine import EngineConfig, SearchEngine
from .errors import MMSearchError
from .metrics import coerce_value
from .tuning import (EngineEnvironment, SimulatedEnvironment,
                     default_knob_schema, tune)
from .weights import QueryCase, train


def _fail(message: str) -> int:
    print(f"error: {message}", file=sys.stderr)
    return 1


def _load_learned(path: str | None):
    """Weights artifact for the LEARNED token; default: ./weights.json."""
    candidate = Path(path) if path else Path("weights.json")
    if not candidate.exists():
        return None
    with open(candidate, "r", encoding="utf-8") as fh:
        return np.asarray(json.load(fh)["weights"], dtype=np.float64)


def _open_engine(args) -> SearchEngine:
    dataset_path = Path(args.dataset)
    if not dataset_path.exists():
        raise MMSearchError(f"dataset file {dataset_path} not found; run ingest first")
    dataset = container.load_dataset(dataset_path)
    index_path = Path(args.index)
    if not index_path.exists():
        raise MMSearchError(f"index not built: {index_path} not found; run build first")
    return container.load_index(index_path, dataset)


def _render(result, engine, fmt: str):
    ds = sql._engine_dataset(engine)
    if fmt == "jsonl":
        for oid, dist in result.pairs():
            comp = ds.object(oid).components
            rec = {"id": oid, "distance": dist,
                   "values": {s.name: (v if isinstance(v, str) else np.asarray(v).tolist())
                              for s, v in zip(ds.schema, comp)}}
            print(json.dumps(rec))
        return
    print(f"{'id':>8}  {'distance':>12}  values")
    for oid, dist in result.pairs():
        comp = ds.object(oid).components
        vals = ", ".join(f"{s.name}={v!r}" if isinstance(v, str)
                         else f"{s.name}={np.asarray(v).round(4).tolist()}"
                         for s, v in zip(ds.schema, comp))
        print(f"{oid:>8}  {dist:>12.6f}  {vals}")
    print(f"({len(result)} rows)")


# -- subcommands -----------------------------------------------------------------


def cmd_ingest(args) -> int:
    ds = ingest_dataset(args.schema, args.data,
                        sample_pairs=args.sample_pairs, seed=args.seed)
    container.save_dataset(args.out, ds)
    print(f"ingested {len(ds)} objects x {len(ds.schema)} spaces -> {args.out}")
    return 0


def cmd_build(args) -> int:
    dataset = container.load_dataset(args.dataset)
    config = EngineConfig(leaf_capacity=args.leaf_capacity,
                          sample_pairs=args.sample_pairs, seed=args.seed)
    engine = SearchEngine(dataset, config)
    engine.build_all()
    container.save_index(args.out, engine)
    parts = len(engine.global_index.partitions())
    print(f"built {parts} partitions over {len(dataset)} objects -> {args.out}")
    return 0


def _statements(args) -> list[str]:
    if args.sql:
        return [args.sql]
    text = Path(args.file).read_text(encoding="utf-8")
    return [stmt for _, stmt in sql.parse_statements(text)]


def _query_target(args, engine):
    if not args.workers:
        return engine
    endpoints = []
    for spec in args.workers.split(","):
        host, _, port = spec.strip().rpartition(":")
        endpoints.append((host or "127.0.0.1", int(port)))
    return make_socket_cluster(engine, endpoints, worker_batch=args.worker_batch)


def cmd_query(args) -> int:
    engine = _open_engine(args)
    learned = _load_learned(args.weights)
    target = _query_target(args, engine)
    for stmt in _statements(args):
        ast = sql.parse(stmt)
        result = sql.execute(ast, target, learned_weights=learned)
        _render(result, target, args.format)
    return 0


def cmd_serve_worker(args) -> int:
    server = WorkerServer(Worker(args.worker_id), host=args.host, port=args.port)
    server.start()
    print(f"worker {args.worker_id} listening on {server.host}:{server.port}",
          flush=True)
    try:
        while True:
            server._thread.join(timeout=1.0)
    except KeyboardInterrupt:
        server.stop()
    return 0


def cmd_serve_coordinator(args) -> int:
    engine = _open_engine(args)
    cluster = _query_target(args, engine)
    if cluster is engine:
        return _fail("serve-coordinator needs --workers host:port[,host:port...]")
    learned = _load_learned(args.weights)
    n = len(cluster.transports)
    print(f"coordinator ready: {len(cluster.owners)} partitions over {n} workers")
    print("enter one SQL statement per line (Ctrl-D to quit)", flush=True)
    for line in sys.stdin:
        stmt = line.strip()
        if not stmt or stmt.startswith("--"):
            continue
        try:
            result = sql.execute(sql.parse(stmt), cluster, learned_weights=learned)
            _render(result, cluster, args.format)
        except MMSearchError as exc:
            print(f"error: {exc}", file=sys.stderr, flush=True)
    return 0


def _load_cases(path: str, engine: SearchEngine) -> list[QueryCase]:
    cases = []
    schema = engine.schema
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            by_name = obj["components"]
            comps = tuple(coerce_value(s, by_name[s.name]) for s in schema)
            cases.append(QueryCase(components=comps,
                                   truth=tuple(int(i) for i in obj["truth"]),
                                   k=int(obj.get("k", len(obj["truth"])))))
    if not cases:
        raise MMSearchError(f"no cases found in {path}")
    return cases


def cmd_learn_weights(args) -> int:
    engine = _open_engine(args)
    cases = _load_cases(args.cases, engine)
    result = train(cases, engine, epochs=args.epochs, lr=args.lr,
                   seed=args.seed, stop_recall=args.stop_recall)
    artifact = {"weights": result.weights.tolist(),
                "best_recall": result.best_recall,
                "best_epoch": result.best_epoch,
                "epochs_run": result.epochs_run,
                "seed": result.seed}
    with open(args.out, "w", encoding="utf-8") as fh:
        json.dump(artifact, fh, indent=2)
        fh.write("\n")
    print(f"trained on {len(cases)} cases: recall {result.best_recall:.3f} "
          f"at epoch {result.best_epoch} -> {args.out}")
    return 0


def cmd_tune(args) -> int:
    with open(args.config, "r", encoding="utf-8") as fh:
        cfg = json.load(fh)
    schema = default_knob_schema()
    mode = cfg.get("mode", "sim")
    if mode == "sim":
        env = SimulatedEnvironment(schema, optimum=cfg.get("optimum"))
    elif mode == "engine":
        engine = _open_engine(argparse.Namespace(
            dataset=cfg["dataset"], index=cfg["index"]))
        queries = _tune_queries(engine, cfg)
        env = EngineEnvironment(engine.dataset, queries, schema)
    else:
        return _fail(f"unknown tune mode {mode!r} (use 'sim' or 'engine')")
    result = tune(env, steps=int(cfg.get("steps", 50)),
                  seed=int(cfg.get("seed", 0)),
                  reward=cfg.get("reward", "base"),
                  schema=schema,
                  penalty_lambda=cfg.get("penalty_lambda"))
    with open(args.out, "w", encoding="utf-8") as fh:
        for step in result.trace:
            fh.write(json.dumps({"step": step.step, "knobs": step.knobs,
                                 "perf": step.perf, "reward": step.reward}) + "\n")
        fh.write(json.dumps({"step": "best", "knobs": result.best_knobs,
                             "perf": result.best_perf,
                             "baseline": result.baseline_perf,
                             "improvement": result.improvement}) + "\n")
    print(f"tuned {len(result.trace)} steps: perf {result.baseline_perf:.3f} -> "
          f"{result.best_perf:.3f} ({result.improvement:+.1%}) -> {args.out}")
    return 0


def _tune_queries(engine: SearchEngine, cfg: dict) -> list:
    from .synth import benchmark_batch
    return benchmark_batch(engine.dataset, count=int(cfg.get("queries", 20)),
                           seed=int(cfg.get("seed", 0)))


def cmd_report(args) -> int:
    steps = []
    best = None
    with open(args.trace, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            if rec.get("step") == "best":
                best = rec
            else:
                steps.append(rec)
    if not steps:
        return _fail(f"no steps found in {args.trace}")
    top = max(steps, key=lambda r: r["perf"])
    print(f"steps: {len(steps)}")
    print(f"best perf {top['perf']:.4f} at step {top['step']}")
    if best is not None:
        print(f"improvement over baseline: {best['improvement']:+.2%}")
        print(f"best knobs: {json.dumps(best['knobs'])}")
    return 0


# -- argument wiring -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mmsearch",
        description="multi-metric similarity search over mixed-type records")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="parse schema + JSONL rows into a dataset file")
    p.add_argument("--schema", required=True, help="schema JSON file")
    p.add_argument("--data", required=True, help="JSONL rows, one object per line")
    p.add_argument("--out", required=True, help="output dataset container")
    p.add_argument("--sample-pairs", type=int, default=100_000,
                   help="pair budget for distance normalization")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(run=cmd_ingest)

    p = sub.add_parser("build", help="build the index files for a dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True, help="output index container")
    p.add_argument("--leaf-capacity", type=int, default=128)
    p.add_argument("--sample-pairs", type=int, default=2000,
                   help="pair budget for per-partition index routing")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(run=cmd_build)

    p = sub.add_parser("query", help="run SQL statements against an index")
    p.add_argument("--dataset", required=True)
    p.add_argument("--index", required=True)
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--sql", help="one SQL statement")
    g.add_argument("--file", help="statement file (one per line, -- comments)")
    p.add_argument("--weights", help="weights artifact backing the LEARNED token")
    p.add_argument("--workers", help="comma-separated host:port worker endpoints")
    p.add_argument("--worker-batch", type=int, default=8)
    p.add_argument("--format", choices=("table", "jsonl"), default="table")
    p.set_defaults(run=cmd_query)

    p = sub.add_parser("serve-worker", help="host one worker process over TCP")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=0, help="0 picks a free port")
    p.add_argument("--worker-id", type=int, default=0)
    p.set_defaults(run=cmd_serve_worker)

    p = sub.add_parser("serve-coordinator",
                       help="distribute partitions to workers, then a SQL prompt")
    p.add_argument("--dataset", required=True)
    p.add_argument("--index", required=True)
    p.add_argument("--workers", required=True,
                   help="comma-separated host:port worker endpoints")
    p.add_argument("--worker-batch", type=int, default=8)
    p.add_argument("--weights", help="weights artifact backing the LEARNED token")
    p.add_argument("--format", choices=("table", "jsonl"), default="table")
    p.set_defaults(run=cmd_serve_coordinator)

    p = sub.add_parser("learn-weights", help="train query weights from labeled cases")
    p.add_argument("--dataset", required=True)
    p.add_argument("--index", required=True)
    p.add_argument("--cases", required=True, help="JSONL cases file")
    p.add_argument("--out", required=True, help="output weights artifact (JSON)")
    p.add_argument("--epochs", type=int, default=300)
    p.add_argument("--lr", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--stop-recall", type=float, default=None)
    p.set_defaults(run=cmd_learn_weights)

    p = sub.add_parser("tune", help="tune engine knobs, emitting a step trace")
    p.add_argument("--config", required=True, help="tuner config JSON")
    p.add_argument("--out", required=True, help="output trace (JSONL)")
    p.set_defaults(run=cmd_tune)

    p = sub.add_parser("report", help="summarize a tuner trace")
    p.add_argument("--trace", required=True)
    p.set_defaults(run=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.run(args)
    except MMSearchError as exc:
        return _fail(str(exc))
    except FileNotFoundError as exc:
        return _fail(str(exc))


if __name__ == "__main__":
    sys.exit(main())
