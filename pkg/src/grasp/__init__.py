"""Provenance-graph anomaly detection by masked executable classification."""

__version__ = "0.1.0"

from .detector import AlarmReport, Verdict, VerdictKind, judge, run_inference
from .encode import ExecutableVocab, build_vocab, encode_batch
from .errors import ConfigError, DataError, GraspError, TrainingError
from .estimator import GraspDetector
from .events import EventLog, ProvenanceEvent, parse_events, read_events, split_dataset
from .evalkit import GroundTruth, attack_recall, summarize_runs, unseen_exec_baseline
from .location import LocationEncoder
from .trainer import TrainConfig, TrainedModel, compute_f1, fit
from .windows import WindowGraph, build_windows, two_hop_subgraph

__all__ = [
    "AlarmReport", "ConfigError", "DataError", "EventLog", "ExecutableVocab", "GraspDetector",
    "GraspError", "GroundTruth", "LocationEncoder", "ProvenanceEvent", "TrainConfig",
    "TrainedModel", "TrainingError", "Verdict", "VerdictKind", "WindowGraph", "attack_recall",
    "build_vocab", "build_windows", "compute_f1", "encode_batch", "fit", "judge", "parse_events",
    "read_events", "run_inference", "split_dataset", "summarize_runs", "two_hop_subgraph",
    "unseen_exec_baseline",
]
