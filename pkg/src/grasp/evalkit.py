"""Ground-truth scoring, multi-run statistics, the unseen-executable baseline
and the living-off-the-land dataset transform."""

from __future__ import annotations

import csv
import json
import statistics
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .detector import AlarmReport, Verdict, VerdictKind
from .encode import ExecutableVocab
from .events import EventLog, build_log
from .windows import build_windows


@dataclass
class Attack:
    name: str
    node_ids: frozenset[str]
    t_start: int | None = None
    t_end: int | None = None


@dataclass
class GroundTruth:
    attacks: list[Attack] = field(default_factory=list)

    @property
    def k(self) -> int:
        return len(self.attacks)

    @property
    def all_nodes(self) -> set[str]:
        return set().union(*(a.node_ids for a in self.attacks)) if self.attacks else set()

    def to_json(self) -> dict:
        out = []
        for a in self.attacks:
            d = {"name": a.name, "node_ids": sorted(a.node_ids)}
            if a.t_start is not None:
                d["t_start"] = a.t_start
            if a.t_end is not None:
                d["t_end"] = a.t_end
            out.append(d)
        return {"attacks": out}

    @classmethod
    def from_json(cls, d: dict) -> "GroundTruth":
        return cls([Attack(a["name"], frozenset(a["node_ids"]), a.get("t_start"), a.get("t_end"))
                    for a in d["attacks"]])

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "GroundTruth":
        with open(path) as fh:
            return cls.from_json(json.load(fh))

    def merged(self, other: "GroundTruth") -> "GroundTruth":
        return GroundTruth(self.attacks + other.attacks)


def attack_recall(reported: Iterable[str], gt: GroundTruth) -> float:
    """Fraction of attacks with at least one reported node."""
    if gt.k == 0:
        raise ValueError("no attacks defined")
    reported = set(reported)
    return sum(1 for a in gt.attacks if a.node_ids & reported) / gt.k


def true_positives(report: AlarmReport, gt: GroundTruth) -> int:
    return len(report.alarmed_nodes & gt.all_nodes)


def precision(report: AlarmReport, gt: GroundTruth) -> float | None:
    """Informational only: TP / unique alarmed nodes."""
    n = len(report.alarmed_nodes)
    return true_positives(report, gt) / n if n else None


def unseen_processes(test: EventLog, vocab: ExecutableVocab) -> set[str]:
    return {pid for pid, exe in test.subjects().items() if exe not in vocab}


def unseen_coverage(report: AlarmReport, test: EventLog, vocab: ExecutableVocab) -> float | None:
    """Share of distinct out-of-vocabulary processes alarmed at least once.

    ``None`` (reported as ``"n/a"``) when the test data has no such process.
    """
    unseen = unseen_processes(test, vocab)
    if not unseen:
        return None
    return len(unseen & report.alarmed_nodes) / len(unseen)


def unseen_exec_baseline(vocab: ExecutableVocab, test: EventLog, context_minutes: float = 120,
                         step_minutes: float = 120) -> AlarmReport:
    """Alarm every process whose executable never occurred in training."""
    verdicts, spans, n_judged = [], [], 0
    for w in build_windows(test, context_minutes, step_minutes):
        spans.append((w.window_start, w.window_end))
        n_judged += len(w.seed_processes)
        for pid in w.seed_processes:
            exe = w.node_attr[w.index_of(pid)]
            if exe not in vocab:
                verdicts.append(Verdict(w.window_start, w.window_end, pid, exe, None, None,
                                        VerdictKind.ANOMALY_UNSEEN))
    counts = {VerdictKind.ANOMALY_UNSEEN.value: len(verdicts)} if verdicts else {}
    return AlarmReport(verdicts, spans, metadata={"system": "unseen-executable-baseline"},
                       n_processes=len(test.subjects()), n_verdicts=n_judged, kind_counts=counts,
                       unseen_nodes=frozenset(unseen_processes(test, vocab)))


def lotl_transform(log: EventLog, vocab: ExecutableVocab) -> EventLog:
    """Delete every out-of-vocabulary process and all events touching it."""
    drop = {eid for eid, (kind, attr) in log.entity_table.items()
            if kind == "Subject" and attr not in vocab}
    kept = [e for e in log.events if e.src_id not in drop and e.dst_id not in drop]
    return build_log(kept, log.schema)


@dataclass
class RunResult:
    attack_recall: float
    alarms: int
    unseen_coverage: float | None
    true_positives: int
    time_alarms: int = 0
    seed: int | None = None

    @classmethod
    def score(cls, report: AlarmReport, gt: GroundTruth, seed=None) -> "RunResult":
        return cls(attack_recall(report.alarmed_nodes, gt), len(report.alarmed_nodes),
                   report.unseen_coverage, true_positives(report, gt), len(report.verdicts), seed)


def mean_and_cv(values: Sequence[float]) -> tuple[float, float]:
    """Mean and sample coefficient of variation (0 when the mean is 0)."""
    mean = statistics.fmean(values)
    if len(values) < 2 or mean == 0:
        return mean, 0.0
    return mean, statistics.stdev(values) / mean


@dataclass
class RunSummary:
    runs: list[RunResult]
    mu_ar: float
    cv_ar: float
    mu_a: float
    cv_a: float
    mu_e: float | None
    mu_tp: float

    @property
    def n(self) -> int:
        return len(self.runs)

    def row(self) -> dict:
        return {
            "runs": self.n,
            "mu_AR": f"{self.mu_ar:.4f}",
            "CV_AR": f"{self.cv_ar:.4f}",
            "mu_a": f"{self.mu_a:.2f}",
            "CV_a": f"{self.cv_a:.4f}",
            "mu_e": "n/a" if self.mu_e is None else f"{self.mu_e:.4f}",
            "mu_TP": f"{self.mu_tp:.2f}",
        }

    def write_csv(self, path, dataset: str = "synthetic") -> None:
        row = {"dataset": dataset, **self.row()}
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(row), lineterminator="\n")
            writer.writeheader()
            writer.writerow(row)


def summarize_runs(results: Sequence[RunResult]) -> RunSummary:
    if not results:
        raise ValueError("at least one run is required")
    mu_ar, cv_ar = mean_and_cv([r.attack_recall for r in results])
    mu_a, cv_a = mean_and_cv([r.alarms for r in results])
    coverage = [r.unseen_coverage for r in results if r.unseen_coverage is not None]
    mu_e = statistics.fmean(coverage) if coverage else None
    mu_tp = statistics.fmean([r.true_positives for r in results])
    return RunSummary(list(results), mu_ar, cv_ar, mu_a, cv_a, mu_e, mu_tp)

