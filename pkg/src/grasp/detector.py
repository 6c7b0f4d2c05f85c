"""Per-window verdicts and the alarm report.

A process is benign when the predicted executable equals the observed one, or
when the prediction is a known benign mix-up for the observed executable.
Processes running an executable never seen in training are anomalous by
definition. No probability threshold is involved anywhere.
"""

from __future__ import annotations

import csv
import enum
import json
import os
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping

from .encode import ExecutableVocab
from .errors import ConfigError
from .events import EventLog
from .windows import build_windows

VERDICTS_FILE = "verdicts.jsonl"
SUMMARY_FILE = "summary.json"
TIMELINE_FILE = "timeline.csv"


class VerdictKind(str, enum.Enum):
    BENIGN_MATCH = "BenignMatch"
    BENIGN_CLUSTER = "BenignCluster"
    ANOMALY_MISCLASS = "AnomalyMisclass"
    ANOMALY_UNSEEN = "AnomalyUnseen"

    @property
    def is_anomaly(self) -> bool:
        return self in (VerdictKind.ANOMALY_MISCLASS, VerdictKind.ANOMALY_UNSEEN)


def judge(observed: int | None, predicted: int,
          clusters: Mapping[int, set[int]]) -> VerdictKind:
    """Classify one prediction. ``observed`` is ``None`` for unseen executables."""
    if observed is None:
        return VerdictKind.ANOMALY_UNSEEN
    if predicted == observed:
        return VerdictKind.BENIGN_MATCH
    if predicted in clusters.get(observed, ()):
        return VerdictKind.BENIGN_CLUSTER
    return VerdictKind.ANOMALY_MISCLASS


@dataclass(frozen=True)
class Verdict:
    window_start: int
    window_end: int
    node_id: str
    observed: str
    predicted: str | None
    probability: float | None
    kind: VerdictKind

    def to_dict(self) -> dict:
        return {
            "window_start": self.window_start, "window_end": self.window_end,
            "node_id": self.node_id, "observed": self.observed,
            "predicted": self.predicted,
            "probability": None if self.probability is None else round(self.probability, 6),
            "kind": self.kind.value,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Verdict":
        return cls(d["window_start"], d["window_end"], d["node_id"], d["observed"],
                   d["predicted"], d["probability"], VerdictKind(d["kind"]))


@dataclass
class AlarmReport:
    """Anomalous verdicts of one inference run.

    ``windows`` lists every scored window (including those without alarms) and
    ``unseen_nodes`` every distinct test process with an out-of-vocabulary
    executable, so coverage and timelines can be derived from the report alone.
    """

    verdicts: list[Verdict]
    windows: list[tuple[int, int]]
    metadata: dict = field(default_factory=dict)
    n_processes: int = 0
    n_verdicts: int = 0
    kind_counts: dict = field(default_factory=dict)
    unseen_nodes: frozenset = frozenset()

    def __post_init__(self):
        self.verdicts = sorted(self.verdicts, key=lambda v: (v.window_start, v.node_id))

    @property
    def alarmed_nodes(self) -> set[str]:
        return {v.node_id for v in self.verdicts}

    @property
    def time_alarms(self) -> int:
        return len(self.verdicts)

    @property
    def unseen_coverage(self) -> float | None:
        if not self.unseen_nodes:
            return None
        return len(self.unseen_nodes & self.alarmed_nodes) / len(self.unseen_nodes)

    def per_window_counts(self) -> dict[int, int]:
        counts = Counter(v.window_start for v in self.verdicts)
        return {start: counts.get(start, 0) for start, _ in self.windows}

    def summary(self) -> dict:
        unseen_alarmed = len(self.unseen_nodes & self.alarmed_nodes)
        return {
            "metadata": self.metadata,
            "time_alarms": self.time_alarms,
            "unique_alarms": len(self.alarmed_nodes),
            "n_processes": self.n_processes,
            "n_verdicts": self.n_verdicts,
            "kind_counts": dict(sorted(self.kind_counts.items())),
            "unseen_processes": sorted(self.unseen_nodes),
            "unseen_alarmed": unseen_alarmed,
            "unseen_coverage": self.unseen_coverage,
            "windows": [list(w) for w in self.windows],
        }

    def write(self, directory) -> None:
        os.makedirs(directory, exist_ok=True)
        with open(os.path.join(directory, VERDICTS_FILE), "w", newline="\n") as fh:
            for v in self.verdicts:
                fh.write(json.dumps(v.to_dict(), sort_keys=True) + "\n")
        with open(os.path.join(directory, SUMMARY_FILE), "w", newline="\n") as fh:
            json.dump(self.summary(), fh, indent=2, sort_keys=True)
            fh.write("\n")
        write_timeline(self, os.path.join(directory, TIMELINE_FILE))

    @classmethod
    def load(cls, directory) -> "AlarmReport":
        with open(os.path.join(directory, SUMMARY_FILE)) as fh:
            summary = json.load(fh)
        with open(os.path.join(directory, VERDICTS_FILE)) as fh:
            verdicts = [Verdict.from_dict(json.loads(line)) for line in fh if line.strip()]
        return cls(verdicts, [tuple(w) for w in summary["windows"]], summary["metadata"],
                   summary["n_processes"], summary["n_verdicts"], summary["kind_counts"],
                   frozenset(summary["unseen_processes"]))


def window_timeline(report: AlarmReport) -> list[tuple[int, int]]:
    """(window_start, alarm_count) for every scored window, in time order."""
    return sorted(report.per_window_counts().items())


def write_timeline(report: AlarmReport, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["window_start", "alarm_count"])
        writer.writerows(window_timeline(report))


def _score_window(model, w) -> tuple[list[Verdict], Counter]:
    from .trainer import predict_window

    vocab: ExecutableVocab = model.vocab
    verdicts, counts = [], Counter()
    for batch, probs in predict_window(model, w):
        pred = probs.argmax(axis=1)
        for row, node_id in enumerate(batch.seed_ids):
            exe = w.node_attr[w.index_of(node_id)]
            observed = vocab.get(exe)
            p = int(pred[row])
            kind = judge(observed, p, model.clusters)
            counts[kind.value] += 1
            if kind.is_anomaly:
                verdicts.append(Verdict(w.window_start, w.window_end, node_id, exe,
                                        vocab.name(p), float(probs[row, p]), kind))
    return verdicts, counts


def check_compatible(model, cfg) -> None:
    """Raise :class:`ConfigError` if ``cfg`` disagrees with the trained model."""
    if cfg is None:
        return
    trained = model.config
    for name in ("context_minutes", "step_minutes", "schema"):
        if getattr(cfg, name) != getattr(trained, name):
            raise ConfigError(f"{name} mismatch: model trained with {getattr(trained, name)!r}, "
                              f"inference requested {getattr(cfg, name)!r}")


def run_inference(model, test: EventLog, cfg=None, jobs: int = 1,
                  metadata: dict | None = None) -> AlarmReport:
    """Score every process of every test window with a frozen model."""
    check_compatible(model, cfg)
    if test.schema != model.config.schema:
        raise ConfigError(f"schema mismatch: model {model.config.schema!r}, data {test.schema!r}")
    windows = build_windows(test, model.config.context_minutes, model.config.step_minutes)
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(lambda w: _score_window(model, w), windows))
    else:
        results = [_score_window(model, w) for w in windows]
    verdicts, counts = [], Counter()
    for v, c in results:
        verdicts.extend(v)
        counts.update(c)
    meta = dict(model.metadata())
    meta.update(metadata or {})
    subjects = {pid for w in windows for pid in w.seed_processes}
    unseen = frozenset(pid for pid, exe in test.subjects().items() if exe not in model.vocab)
    return AlarmReport(verdicts, [(w.window_start, w.window_end) for w in windows], meta,
                       n_processes=len(subjects), n_verdicts=sum(counts.values()),
                       kind_counts=dict(counts), unseen_nodes=unseen)

