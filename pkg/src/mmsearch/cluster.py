"""Coordinator/worker execution of queries over partitioned data.

The coordinator keeps the dataset and the global partition directory;
workers hold the forests of the partitions assigned to them (round
robin by partition label).  Both deployment modes speak the same wire
protocol: a frame is a 4-byte little-endian payload length followed by
a UTF-8 JSON object.  In-process mode pushes the encoded frames through
in-memory queues so the protocol code never goes stale; socket mode
carries them over TCP.

Every task gets a monotonically increasing id and exactly one terminal
reply (a result or an error).  A worker that dies or stalls mid-query
surfaces as a partial-failure error naming the worker; no partial
result set is ever returned.
"""

from __future__ import annotations

import json
import queue
import socket
import struct
import threading
from dataclasses import dataclass, field

import numpy as np

from .dataset import parse_schema
from .engine import ResultSet, ScanStats, SearchEngine
from .errors import ProtocolError, QueryError, WorkerFailureError
from .local_index import IndexForest, build_forest
from .metrics import MultiMetricObject, NormalizationStats, Schema, check_weights

DEFAULT_TIMEOUT = 30.0
_LEN = struct.Struct("<I")

TAG_BUILD = "build_partition"
TAG_RANGE = "range_task"
TAG_KNN_SAMPLE = "knn_sample_task"
TAG_CANDIDATES = "candidate_reply"
TAG_STATS = "stats_reply"
TAG_ERROR = "error"


class _UnownedPartition(Exception):
    pass


def encode_frame(msg: dict) -> bytes:
    payload = json.dumps(msg, separators=(",", ":")).encode("utf-8")
    return _LEN.pack(len(payload)) + payload


def decode_payload(payload: bytes) -> dict:
    try:
        msg = json.loads(payload.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ProtocolError(f"undecodable frame: {exc}") from None
    if not isinstance(msg, dict) or "tag" not in msg:
        raise ProtocolError("frame is not a tagged message")
    return msg


def _components_to_wire(schema: Schema, components) -> list:
    out = []
    for space, val in zip(schema, components):
        out.append(val if space.kind.is_text else np.asarray(val).tolist())
    return out


def _components_from_wire(schema: Schema, wire) -> list:
    out = []
    for space, val in zip(schema, wire):
        out.append(val if space.kind.is_text else np.asarray(val, dtype=np.float64))
    return out


def schema_to_wire(table: str, schema: Schema) -> dict:
    return {"table": table,
            "spaces": [{"name": s.name, "kind": s.kind.value,
                        **({"dim": s.dim} if s.dim is not None else {})}
                       for s in schema]}


def assign_partitions(pids, n_workers: int) -> dict[int, int]:
    """Round-robin owner per partition label."""
    if n_workers < 1:
        raise QueryError("need at least one worker")
    return {int(p): int(p) % n_workers for p in pids}


# -- worker ------------------------------------------------------------------------


class Worker:
    """Holds forests for its partitions and answers task messages."""

    def __init__(self, worker_id: int):
        self.worker_id = worker_id
        self.schema: Schema | None = None
        self.stats: NormalizationStats | None = None
        self.forests: dict[int, IndexForest] = {}
        self._lock = threading.RLock()

    def handle_frame(self, payload: bytes) -> bytes:
        try:
            msg = decode_payload(payload)
        except ProtocolError as exc:
            return encode_frame({"tag": TAG_ERROR, "task_id": -1,
                                 "code": "parse", "message": str(exc)})
        return encode_frame(self.handle(msg))

    def handle(self, msg: dict) -> dict:
        tid = msg.get("task_id", -1)
        try:
            with self._lock:
                if msg["tag"] == TAG_BUILD:
                    return self._build(msg)
                if msg["tag"] == TAG_RANGE:
                    return self._range(msg)
                if msg["tag"] == TAG_KNN_SAMPLE:
                    return self._knn_sample(msg)
            return {"tag": TAG_ERROR, "task_id": tid, "code": "unknown-tag",
                    "message": f"unknown message tag {msg['tag']!r}"}
        except _UnownedPartition as exc:
            return {"tag": TAG_ERROR, "task_id": tid, "code": "unowned-partition",
                    "message": str(exc)}
        except Exception as exc:  # noqa: BLE001  - workers must answer, not die
            return {"tag": TAG_ERROR, "task_id": tid, "code": "internal",
                    "message": f"{type(exc).__name__}: {exc}"}

    def _require_partition(self, tid: int, pid: int):
        if pid not in self.forests:
            raise _UnownedPartition(
                f"partition {pid} is not owned by worker {self.worker_id}")

    def _build(self, msg: dict) -> dict:
        _, self.schema = parse_schema(msg["schema"])
        self.stats = NormalizationStats(scales=tuple(msg["stats"]["scales"]))
        objects = [MultiMetricObject(id=int(o["id"]),
                                     components=tuple(_components_from_wire(
                                         self.schema, o["components"])))
                   for o in msg["objects"]]
        pid = int(msg["partition"])
        self.forests[pid] = build_forest(
            objects, self.schema, self.stats,
            seed=int(msg.get("seed", 0)), sample_pairs=int(msg.get("sample_pairs", 2000)))
        return {"tag": TAG_STATS, "task_id": msg["task_id"],
                "partition": pid, "members": len(objects)}

    def _range(self, msg: dict) -> dict:
        tid = msg["task_id"]
        q = _components_from_wire(self.schema, msg["query"])
        w = np.asarray(msg["weights"], dtype=np.float64)
        r = float(msg["radius"])
        cap = msg.get("probe_cap")
        rows: list[list] = []
        verified = 0
        probes = [0] * len(self.schema)
        for pid in msg["partitions"]:
            pid = int(pid)
            self._require_partition(tid, pid)
            hits, (v, p) = self.forests[pid].verified_range(q, w, r, probe_cap=cap)
            rows.extend([d, i] for d, i in hits)
            verified += v
            probes = [a + b for a, b in zip(probes, p)]
        return {"tag": TAG_CANDIDATES, "task_id": tid, "rows": rows,
                "verified": verified, "probes": probes}

    def _knn_sample(self, msg: dict) -> dict:
        tid = msg["task_id"]
        q = _components_from_wire(self.schema, msg["query"])
        w = np.asarray(msg["weights"], dtype=np.float64)
        k = int(msg["k"])
        pid = int(msg["partition"])
        self._require_partition(tid, pid)
        hits, (v, p) = self.forests[pid].knn_pool(q, w, k)
        return {"tag": TAG_CANDIDATES, "task_id": tid,
                "rows": [[d, i] for d, i in hits], "verified": v, "probes": p}


# -- transports ----------------------------------------------------------------------


class QueueTransport:
    """In-process worker behind a pair of queues carrying encoded frames."""

    def __init__(self, worker: Worker, timeout: float = DEFAULT_TIMEOUT):
        self.worker = worker
        self.worker_id = worker.worker_id
        self.timeout = timeout
        self._requests: queue.Queue = queue.Queue()
        self._replies: queue.Queue = queue.Queue()
        self._alive = True
        self._thread = threading.Thread(target=self._serve, daemon=True)
        self._thread.start()
        self._lock = threading.Lock()

    def _serve(self):
        while True:
            frame = self._requests.get()
            if frame is None:
                return
            self._replies.put(self.worker.handle_frame(frame[4:]))

    def request(self, msg: dict) -> dict:
        with self._lock:
            if not self._alive:
                raise WorkerFailureError(self.worker_id, "worker is down")
            self._requests.put(encode_frame(msg))
            try:
                reply = self._replies.get(timeout=self.timeout)
            except queue.Empty:
                raise WorkerFailureError(
                    self.worker_id, f"no reply within {self.timeout}s") from None
            return decode_payload(reply[4:])

    def kill(self):
        """Simulate a crash: stop serving, drop pending work."""
        self._alive = False
        self._requests.put(None)

    def close(self):
        self._requests.put(None)
        self._alive = False


class SocketTransport:
    """Client side of one TCP worker connection."""

    def __init__(self, host: str, port: int, worker_id: int,
                 timeout: float = DEFAULT_TIMEOUT):
        self.worker_id = worker_id
        self.timeout = timeout
        self._lock = threading.Lock()
        try:
            self._sock = socket.create_connection((host, port), timeout=timeout)
        except OSError as exc:
            raise WorkerFailureError(worker_id, f"cannot connect: {exc}") from None

    def request(self, msg: dict) -> dict:
        with self._lock:
            try:
                self._sock.sendall(encode_frame(msg))
                header = self._read_exact(4)
                (length,) = _LEN.unpack(header)
                return decode_payload(self._read_exact(length))
            except (OSError, ProtocolError) as exc:
                raise WorkerFailureError(self.worker_id, str(exc)) from None

    def _read_exact(self, n: int) -> bytes:
        buf = b""
        while len(buf) < n:
            chunk = self._sock.recv(n - len(buf))
            if not chunk:
                raise OSError("connection closed mid-frame")
            buf += chunk
        return buf

    def close(self):
        try:
            self._sock.close()
        except OSError:
            pass


class WorkerServer:
    """TCP server wrapping one Worker; one thread per connection."""

    def __init__(self, worker: Worker, host: str = "127.0.0.1", port: int = 0):
        self.worker = worker
        self._listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._listener.bind((host, port))
        self._listener.listen()
        self.host, self.port = self._listener.getsockname()
        self._stop = threading.Event()
        self._thread = threading.Thread(target=self._accept_loop, daemon=True)

    def start(self) -> "WorkerServer":
        self._thread.start()
        return self

    def _accept_loop(self):
        self._listener.settimeout(0.2)
        while not self._stop.is_set():
            try:
                conn, _ = self._listener.accept()
            except socket.timeout:
                continue
            except OSError:
                return
            threading.Thread(target=self._serve_conn, args=(conn,), daemon=True).start()

    def _serve_conn(self, conn: socket.socket):
        with conn:
            while not self._stop.is_set():
                header = b""
                try:
                    while len(header) < 4:
                        chunk = conn.recv(4 - len(header))
                        if not chunk:
                            return
                        header += chunk
                    (length,) = _LEN.unpack(header)
                    payload = b""
                    while len(payload) < length:
                        chunk = conn.recv(length - len(payload))
                        if not chunk:
                            return
                        payload += chunk
                    conn.sendall(self.worker.handle_frame(payload))
                except OSError:
                    return

    def stop(self):
        self._stop.set()
        try:
            self._listener.close()
        except OSError:
            pass
        self._thread.join(timeout=2.0)


# -- coordinator ------------------------------------------------------------------------


@dataclass
class WorkloadReport:
    """Per-worker verified-candidate counts for one query."""

    per_worker: dict[int, int] = field(default_factory=dict)

    @property
    def total_verified(self) -> int:
        return sum(self.per_worker.values())

    @property
    def stddev(self) -> float:
        counts = np.asarray(list(self.per_worker.values()), dtype=np.float64)
        return float(counts.std()) if len(counts) else 0.0


class ClusterEngine:
    """Executes queries by fanning partition work out to workers.

    Construction ships every partition of the local engine to its owner
    (label mod worker count) as BuildPartition messages.  Query results
    are identical to the local engine's: the same per-partition routines
    run remotely, and the coordinator merges and orders exactly as the
    local path does.
    """

    def __init__(self, engine: SearchEngine, transports, worker_batch: int = 8):
        if not transports:
            raise QueryError("need at least one worker transport")
        self.engine = engine
        self.transports = list(transports)
        self.worker_batch = max(1, int(worker_batch))
        self._task_id = 0
        self._tid_lock = threading.Lock()
        self.owners: dict[int, int] = {}
        self._distribute()

    # -- plumbing -------------------------------------------------------------------

    def _next_task_id(self) -> int:
        with self._tid_lock:
            self._task_id += 1
            return self._task_id

    def _request(self, wid: int, msg: dict) -> dict:
        reply = self.transports[wid].request(msg)
        if reply.get("task_id") not in (msg["task_id"], -1):
            raise ProtocolError(
                f"reply for task {reply.get('task_id')} to task {msg['task_id']}")
        if reply["tag"] == TAG_ERROR:
            raise WorkerFailureError(
                self.transports[wid].worker_id,
                f"{reply.get('code')}: {reply.get('message')}")
        return reply

    def _distribute(self):
        eng = self.engine
        parts = eng.global_index.partitions()
        self.owners = assign_partitions(parts.keys(), len(self.transports))
        schema_wire = schema_to_wire(eng.dataset.table, eng.schema)
        stats_wire = {"scales": list(eng.dataset.stats.scales)}
        for pid, members in sorted(parts.items()):
            objs = [{"id": int(i),
                     "components": _components_to_wire(
                         eng.schema, eng.dataset.object(int(i)).components)}
                    for i in members]
            msg = {"tag": TAG_BUILD, "task_id": self._next_task_id(),
                   "partition": pid, "schema": schema_wire, "stats": stats_wire,
                   "objects": objs, "seed": eng.config.seed,
                   "sample_pairs": eng.config.sample_pairs}
            reply = self._request(self.owners[pid], msg)
            if reply["tag"] != TAG_STATS or reply.get("members") != len(objs):
                raise ProtocolError(f"bad build ack for partition {pid}: {reply}")

    def close(self):
        for t in self.transports:
            t.close()

    # -- queries ---------------------------------------------------------------------

    def range_query(self, q_components, weights, r: float) -> tuple[ResultSet, WorkloadReport]:
        """Distributed exact range query; merged rows match local execution."""
        eng = self.engine
        if r < 0:
            raise QueryError("radius must be non-negative")
        w = check_weights(weights, len(eng.schema), require_nonzero=True)
        q = eng._coerced(q_components)
        box = eng.global_index.query_box(q, w, r)
        pids = eng.global_index.candidate_partitions(box)
        rows, stats, report = self._fanout_range(q, w, r, pids)
        rows.sort()
        rs = ResultSet(ids=tuple(i for _, i in rows),
                       distances=tuple(d for d, _ in rows), stats=stats)
        return rs, report

    def _fanout_range(self, q, w, r: float, pids):
        eng = self.engine
        stats = ScanStats(probes_per_space=[0] * len(eng.schema))
        report = WorkloadReport(per_worker={t.worker_id: 0 for t in self.transports})
        by_worker: dict[int, list[int]] = {}
        for pid in pids:
            by_worker.setdefault(self.owners[pid], []).append(pid)
        tasks = []
        for wid, owned in sorted(by_worker.items()):
            for s in range(0, len(owned), self.worker_batch):
                chunk = owned[s:s + self.worker_batch]
                msg = {"tag": TAG_RANGE, "task_id": self._next_task_id(),
                       "partitions": chunk,
                       "query": _components_to_wire(eng.schema, q),
                       "weights": w.tolist(), "radius": r,
                       "probe_cap": eng.config.probe_space_cap}
                tasks.append((wid, chunk, msg))
        rows: list[tuple[float, int]] = []
        failures: list[WorkerFailureError] = []
        lock = threading.Lock()

        def run(wid: int, chunk: list[int], msg: dict):
            try:
                reply = self._request(wid, msg)
                with lock:
                    rows.extend((float(d), int(i)) for d, i in reply["rows"])
                    stats.objects_verified += int(reply["verified"])
                    stats.partitions_visited += len(chunk)
                    for i, p in enumerate(reply["probes"]):
                        stats.probes_per_space[i] += int(p)
                    report.per_worker[self.transports[wid].worker_id] += int(reply["verified"])
            except WorkerFailureError as exc:
                with lock:
                    failures.append(exc)

        threads = [threading.Thread(target=run, args=t) for t in tasks]
        for th in threads:
            th.start()
        for th in threads:
            th.join()
        if failures:
            raise failures[0]
        return rows, stats, report

    def knn_query(self, q_components, weights, k: int) -> tuple[ResultSet, WorkloadReport]:
        """Distributed exact kNN; same two phases and pooling rule as local."""
        eng = self.engine
        if k < 1:
            raise QueryError("k must be at least 1")
        w = check_weights(weights, len(eng.schema), require_nonzero=True)
        q = eng._coerced(q_components)
        ranked = eng.global_index.ranked_partitions(q, w)
        stats = ScanStats(probes_per_space=[0] * len(eng.schema))
        report = WorkloadReport(per_worker={t.worker_id: 0 for t in self.transports})
        pool: list[tuple[float, int]] = []
        upto = 0
        while upto < len(ranked) and (len(pool) < k or upto < eng.config.knn_expand):
            _, pid = ranked[upto]
            upto += 1
            msg = {"tag": TAG_KNN_SAMPLE, "task_id": self._next_task_id(),
                   "partition": pid,
                   "query": _components_to_wire(eng.schema, q),
                   "weights": w.tolist(), "k": k}
            reply = self._request(self.owners[pid], msg)
            pool.extend((float(d), int(i)) for d, i in reply["rows"])
            stats.objects_verified += int(reply["verified"])
            stats.partitions_visited += 1
            for i, p in enumerate(reply["probes"]):
                stats.probes_per_space[i] += int(p)
            report.per_worker[self.transports[self.owners[pid]].worker_id] += int(reply["verified"])
        pool.sort()
        if not pool:
            raise QueryError("phase one produced no candidates")
        bound = pool[min(k, len(pool)) - 1][0]
        stats.knn_bound = bound
        box = eng.global_index.query_box(q, w, bound)
        pids = eng.global_index.candidate_partitions(box)
        rows, stats2, report2 = self._fanout_range(q, w, bound, pids)
        rows.sort()
        rows = rows[:k]
        stats.objects_verified += stats2.objects_verified
        stats.partitions_visited += stats2.partitions_visited
        for i, p in enumerate(stats2.probes_per_space):
            stats.probes_per_space[i] += p
        for wid, v in report2.per_worker.items():
            report.per_worker[wid] = report.per_worker.get(wid, 0) + v
        rs = ResultSet(ids=tuple(i for _, i in rows),
                       distances=tuple(d for d, _ in rows),
                       stats=stats, truncated=len(rows) < k)
        return rs, report


def make_inprocess_cluster(engine: SearchEngine, n_workers: int,
                           worker_batch: int = 8,
                           timeout: float = DEFAULT_TIMEOUT) -> ClusterEngine:
    """Spin up n in-process workers behind queues and ship partitions."""
    transports = [QueueTransport(Worker(i), timeout=timeout) for i in range(n_workers)]
    return ClusterEngine(engine, transports, worker_batch=worker_batch)


def make_socket_cluster(engine: SearchEngine, endpoints,
                        worker_batch: int = 8,
                        timeout: float = DEFAULT_TIMEOUT) -> ClusterEngine:
    """Connect to already-running worker servers at (host, port) pairs."""
    transports = [SocketTransport(host, port, worker_id=i, timeout=timeout)
                  for i, (host, port) in enumerate(endpoints)]
    return ClusterEngine(engine, transports, worker_batch=worker_batch)
