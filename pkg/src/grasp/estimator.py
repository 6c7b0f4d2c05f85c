"""scikit-learn style front end for the detector."""

from __future__ import annotations

import os

from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .detector import AlarmReport, run_inference
from .errors import DataError
from .events import EventLog, loads_events, read_events
from .evalkit import GroundTruth, attack_recall
from .trainer import TrainConfig, fit


def check_event_log(X, schema: str = "TC") -> EventLog:
    """Accept an :class:`EventLog`, a JSONL path or JSONL text."""
    if isinstance(X, EventLog):
        if X.schema != schema:
            raise DataError(f"event log uses schema {X.schema!r}, estimator expects {schema!r}")
        return X
    if isinstance(X, (str, os.PathLike)):
        if os.path.isfile(X):
            return read_events(X, schema)
        if isinstance(X, str) and X.lstrip().startswith("{"):
            return loads_events(X, schema)
        raise DataError(f"events file not found: {X}")
    raise DataError(f"expected an EventLog or a JSONL path, got {type(X).__name__}")


class GraspDetector(BaseEstimator):
    """Train on benign history, then report processes that do not fit in.

    Every constructor argument maps one-to-one onto :class:`TrainConfig`.

    >>> det = GraspDetector(epochs=2, random_state=1)     # doctest: +SKIP
    >>> report = det.fit(train_log).predict(test_log)     # doctest: +SKIP
    """

    def __init__(self, context_minutes=120, step_minutes=120, batch_size=32, epochs=4,
                 fanout1=-1, fanout2=-1, dropout=0.1, lr=0.01, weight_decay=1e-4,
                 location_mode="autoencoder", location_epochs=10, clustering=True,
                 schema="TC", random_state=0):
        self.context_minutes = context_minutes
        self.step_minutes = step_minutes
        self.batch_size = batch_size
        self.epochs = epochs
        self.fanout1 = fanout1
        self.fanout2 = fanout2
        self.dropout = dropout
        self.lr = lr
        self.weight_decay = weight_decay
        self.location_mode = location_mode
        self.location_epochs = location_epochs
        self.clustering = clustering
        self.schema = schema
        self.random_state = random_state

    def _config(self) -> TrainConfig:
        params = self.get_params()
        seed = params.pop("random_state")
        return TrainConfig(seed=seed, **params)

    def fit(self, X, y=None):
        log = check_event_log(X, self.schema)
        self.model_ = fit(log, self._config())
        self.vocab_ = self.model_.vocab
        self.train_report_ = self.model_.report
        return self

    def predict(self, X, jobs: int = 1) -> AlarmReport:
        check_is_fitted(self, "model_")
        return run_inference(self.model_, check_event_log(X, self.schema), jobs=jobs)

    def score(self, X, gt: GroundTruth) -> float:
        """Attack recall of the alarms raised on ``X``."""
        return attack_recall(self.predict(X).alarmed_nodes, gt)
