"""Exact similarity search over records with several metric attributes.

A record holds one component per metric space (dense vectors under L1,
geo points under L2, strings under edit distance); queries combine the
per-space distances into one weighted score and return exact range or
k-nearest results through a two-layer index, optionally fanned out to
worker processes.  Weights can be learned from labeled examples and
engine knobs tuned against measured throughput.
"""

from .container import load_dataset as load_dataset_file
from .container import load_index, save_dataset, save_index
from .dataset import Dataset, compute_stats, load_dataset, load_schema_file
from .engine import EngineConfig, ResultSet, ScanStats, SearchEngine
from .errors import (BindError, ContainerFormatError, DatasetFormatError,
                     DimensionError, DuplicateIdError, InsufficientDataError,
                     InvalidWeightsError, IndexStateError, MMSearchError,
                     ProtocolError, QueryError, SchemaError, SqlSyntaxError,
                     TrainingError, UnknownIdError, WorkerFailureError)
from .metrics import (MultiMetricObject, NormalizationStats, Schema, Space,
                      SpaceKind, distance, levenshtein, multi_metric_distance,
                      normalized_distance)
from .cluster import (ClusterEngine, WorkloadReport, make_inprocess_cluster,
                      make_socket_cluster)
from .sql import BoundQuery, Query, bind, execute, parse, pretty
from .tuning import (ActorCritic, EngineEnvironment, Knob, KnobSchema,
                     ReplayBuffer, SimulatedEnvironment, TuneResult,
                     default_knob_schema, reward_base, reward_exp, reward_log,
                     reward_penalty, tune)
from .weights import QueryCase, TrainResult, train

__version__ = "0.1.0"

__all__ = [
    "BindError", "BoundQuery", "ClusterEngine", "ContainerFormatError",
    "Dataset", "DatasetFormatError", "DimensionError", "DuplicateIdError",
    "EngineConfig", "EngineEnvironment", "ActorCritic", "IndexStateError",
    "InsufficientDataError", "InvalidWeightsError", "Knob", "KnobSchema",
    "MMSearchError", "MultiMetricObject", "NormalizationStats", "ProtocolError",
    "Query", "QueryCase", "QueryError", "ReplayBuffer", "ResultSet", "ScanStats",
    "Schema", "SchemaError", "SearchEngine", "SimulatedEnvironment", "Space",
    "SpaceKind", "SqlSyntaxError", "TrainResult", "TrainingError", "TuneResult",
    "UnknownIdError", "WorkerFailureError", "WorkloadReport", "bind",
    "compute_stats", "default_knob_schema", "distance", "execute",
    "levenshtein", "load_dataset", "load_dataset_file", "load_index",
    "load_schema_file", "make_inprocess_cluster", "make_socket_cluster",
    "multi_metric_distance", "normalized_distance", "parse", "pretty",
    "reward_base", "reward_exp", "reward_log", "reward_penalty",
    "save_dataset", "save_index", "train", "tune",
]
