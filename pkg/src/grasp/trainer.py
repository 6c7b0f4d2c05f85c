"""Masked self-supervised training, F1 tracking and benign mix-up clustering.

Every process in a window is a training target. Targets are grouped into
batches of ``batch_size`` (sorted node ids, so membership is fixed); each
batch is expanded to its sampled two-hop neighborhood, the targets'
executables are masked, and the model learns to predict them. Only the order
of batches is shuffled between epochs.
"""

from __future__ import annotations

import hashlib
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from typing import Iterator, Sequence

import numpy as np

from .encode import (
    EncodedBatch, ExecutableVocab, LOC_DIM, N_KINDS, build_vocab, encode_batch,
    location_corpus, window_features,
)
from .errors import ConfigError, TrainingError
from .events import EventLog, schema_ops
from .location import LocationEncoder
from .neural import (
    Adam, ModelShape, ReduceLROnPlateau, init_params, loss_and_gradients, predict_proba,
)
from .windows import WindowGraph, build_windows, two_hop_subgraph

logger = logging.getLogger(__name__)

LOCATION_MODES = ("autoencoder", "word2vec", "disabled")


@dataclass
class TrainConfig:
    context_minutes: float = 120
    step_minutes: float = 120
    batch_size: int = 32
    epochs: int = 4
    fanout1: int = -1
    fanout2: int = -1
    dropout: float = 0.1
    lr: float = 0.01
    weight_decay: float = 1e-4
    scheduler_factor: float = 0.5
    scheduler_patience: int = 5
    seed: int = 0
    location_mode: str = "autoencoder"
    location_epochs: int = 10
    heads: int = 4
    hidden: int = 128
    mlp_hidden: int = 128
    clustering: bool = True
    schema: str = "TC"

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.context_minutes <= 0 or self.step_minutes <= 0:
            raise ConfigError("context_minutes and step_minutes must be positive")
        for name in ("batch_size", "epochs", "heads", "hidden", "mlp_hidden", "location_epochs"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        for name in ("fanout1", "fanout2"):
            if getattr(self, name) < -1:
                raise ConfigError(f"{name} must be -1 (all neighbors) or >= 0")
        if not 0 <= self.dropout < 1:
            raise ConfigError("dropout must be in [0, 1)")
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if self.location_mode not in LOCATION_MODES:
            raise ConfigError(f"location_mode must be one of {LOCATION_MODES}")
        schema_ops(self.schema)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown training options: {sorted(unknown)}")
        return cls(**d)

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    @property
    def deterministic_sampling(self) -> bool:
        return self.fanout1 in (-1, 0) and self.fanout2 in (-1, 0)


@dataclass
class TrainReport:
    epoch_losses: list[float]
    learning_rates: list[float]
    macro_f1: float
    weighted_f1: float
    support: dict[str, int]
    n_windows: int
    n_batches: int
    n_targets: int
    seconds: float = field(default=0.0, compare=False)

    def to_json(self) -> dict:
        d = asdict(self)
        d.pop("seconds")
        return d

    @classmethod
    def from_json(cls, d: dict) -> "TrainReport":
        return cls(**d)


ClusterMap = dict  # true executable index -> set of tolerated predicted indices


@dataclass
class TrainedModel:
    config: TrainConfig
    shape: ModelShape
    params: dict[str, np.ndarray]
    vocab: ExecutableVocab
    location: LocationEncoder
    clusters: ClusterMap
    report: TrainReport | None = None
    bundle_id: str | None = None

    def metadata(self) -> dict:
        return {"seed": self.config.seed, "config_hash": self.config.config_hash(),
                "bundle_id": self.bundle_id}

    def clusters_json(self) -> dict[str, list[str]]:
        name = self.vocab.name
        return {name(t): sorted(name(p) for p in preds)
                for t, preds in sorted(self.clusters.items()) if preds}


def clusters_from_json(d: dict, vocab: ExecutableVocab) -> ClusterMap:
    return {vocab.get(t): {vocab.get(p) for p in preds} for t, preds in d.items()}


def seed_chunks(w: WindowGraph, batch_size: int) -> list[list[str]]:
    seeds = w.seed_processes
    return [seeds[i: i + batch_size] for i in range(0, len(seeds), batch_size)]


def sampling_seed(seed: int, window_start: int, chunk: int, epoch: int | None = None) -> int:
    """Per-batch neighbor-sampling seed. ``epoch=None`` is the fixed inference draw."""
    key = [seed, window_start & 0xFFFFFFFF, window_start >> 32, chunk,
           0 if epoch is None else epoch + 1]
    return int(np.random.SeedSequence(key).generate_state(1)[0])


def make_batches(window: WindowGraph, cfg: TrainConfig, vocab: ExecutableVocab,
                 loc: LocationEncoder, rng: np.random.Generator | None = None,
                 epoch: int | None = None, base: np.ndarray | None = None) -> list[EncodedBatch]:
    """Encode the window's processes in batches of ``cfg.batch_size``.

    When ``rng`` is given the batch order is shuffled with it.
    """
    if base is None:
        base = window_features(window, vocab, loc)
    batches = []
    for c, seeds in enumerate(seed_chunks(window, cfg.batch_size)):
        sub = two_hop_subgraph(window, seeds, cfg.fanout1, cfg.fanout2,
                               sampling_seed(cfg.seed, window.window_start, c, epoch))
        batches.append(encode_batch(sub, vocab, loc, base))
    if rng is not None:
        batches = [batches[i] for i in rng.permutation(len(batches))]
    return batches


def compute_f1(predictions: Sequence[int], truths: Sequence[int], K: int) -> tuple[float, float]:
    """Macro and support-weighted F1.

    The macro average runs over classes that occur in either sequence; a class
    with no true positive scores 0.
    """
    preds = np.asarray(predictions, dtype=np.int64)
    truth = np.asarray(truths, dtype=np.int64)
    if len(truth) == 0 or len(preds) != len(truth):
        raise ValueError("predictions and truths must be non-empty and of equal length")
    tp = np.bincount(truth[preds == truth], minlength=K).astype(float)
    support = np.bincount(truth, minlength=K).astype(float)
    predicted = np.bincount(preds, minlength=K).astype(float)
    denom = support + predicted
    f1 = np.divide(2 * tp, denom, out=np.zeros(K), where=denom > 0)
    present = (support > 0) | (predicted > 0)
    macro = float(f1[present].mean())
    weighted = float((f1 * support).sum() / support.sum())
    return macro, weighted


class _BatchSource:
    """Produces the per-epoch batch list, reusing encodings when sampling is exact."""

    def __init__(self, windows, cfg, vocab, loc):
        self.windows = windows
        self.cfg = cfg
        self.vocab = vocab
        self.loc = loc
        self._bases = [window_features(w, vocab, loc) for w in windows]
        self._cache = None

    def epoch(self, epoch: int) -> list[EncodedBatch]:
        if self.cfg.deterministic_sampling and self._cache is not None:
            return self._cache
        out = []
        for w, base in zip(self.windows, self._bases):
            out.extend(make_batches(w, self.cfg, self.vocab, self.loc, epoch=epoch, base=base))
        if self.cfg.deterministic_sampling:
            self._cache = out
        return out


def _check_labels(batch: EncodedBatch) -> None:
    if (batch.labels < 0).any():
        raise TrainingError("training target with an executable outside the vocabulary")


def train(windows: Sequence[WindowGraph], cfg: TrainConfig, vocab: ExecutableVocab,
          loc: LocationEncoder) -> TrainedModel:
    """Run ``cfg.epochs`` passes of masked executable classification.

    The reported F1 scores come from a dropout-free pass over the training
    windows after the last epoch, the same predictions the cluster map sees.
    """
    windows = [w for w in windows if w.seed_processes]
    if not windows:
        raise TrainingError("empty training set: no window contains a process")
    started = time.perf_counter()
    shape = ModelShape(N_KINDS + LOC_DIM + vocab.K, len(windows[0].ops), vocab.K,
                       cfg.heads, cfg.hidden, cfg.mlp_hidden)
    params = init_params(shape, seed=cfg.seed)
    opt = Adam(lr=cfg.lr, weight_decay=cfg.weight_decay)
    sched = ReduceLROnPlateau(opt, cfg.scheduler_factor, cfg.scheduler_patience)
    dropout_rng = np.random.default_rng([cfg.seed, 1])
    source = _BatchSource(windows, cfg, vocab, loc)
    losses, lrs = [], []
    n_batches = 0
    for epoch in range(cfg.epochs):
        batches = source.epoch(epoch)
        order = np.random.default_rng([cfg.seed, 2, epoch]).permutation(len(batches))
        total = 0.0
        n_batches = 0
        for i in order:
            batch = batches[i]
            _check_labels(batch)
            out = loss_and_gradients(batch, params, rng=dropout_rng, heads=cfg.heads,
                                     dropout=cfg.dropout)
            if out is None:
                continue
            loss, grads, _ = out
            opt.step(params, grads)
            total += loss
            n_batches += 1
        mean_loss = total / max(n_batches, 1)
        losses.append(mean_loss)
        lrs.append(sched.step(mean_loss))
        logger.info("epoch %d: loss %.4f lr %.4g", epoch + 1, mean_loss, opt.lr)

    model = TrainedModel(cfg, shape, params, vocab, loc, {})
    preds, truths = training_predictions(model, windows)
    macro, weighted = compute_f1(preds, truths, vocab.K)
    support = np.bincount(truths, minlength=vocab.K)
    model.report = TrainReport(losses, lrs, macro, weighted,
                               {vocab.name(i): int(support[i]) for i in range(vocab.K)},
                               len(windows), n_batches, int(len(truths)),
                               time.perf_counter() - started)
    return model


def predict_window(model: TrainedModel, w: WindowGraph) -> Iterator[tuple[EncodedBatch, np.ndarray]]:
    """Dropout-free predictions for every process of ``w``, in fixed batch order."""
    base = window_features(w, model.vocab, model.location)
    for batch in make_batches(w, model.config, model.vocab, model.location, base=base):
        yield batch, predict_proba(batch, model.params, heads=model.config.heads)


def training_predictions(model: TrainedModel, windows: Sequence[WindowGraph]) -> tuple[np.ndarray, np.ndarray]:
    preds, truths = [], []
    for w in windows:
        for batch, probs in predict_window(model, w):
            preds.append(probs.argmax(axis=1))
            truths.append(batch.labels)
    if not preds:
        return np.zeros(0, np.int64), np.zeros(0, np.int64)
    return np.concatenate(preds), np.concatenate(truths)


def build_clusters(model: TrainedModel, windows: Sequence[WindowGraph]) -> ClusterMap:
    """Record every residual mis-prediction on the training windows as a benign mix-up."""
    clusters: ClusterMap = {}
    preds, truths = training_predictions(model, windows)
    for t, p in zip(truths.tolist(), preds.tolist()):
        if t >= 0 and t != p:
            clusters.setdefault(t, set()).add(p)
    return clusters


def fit_location_encoder(train_log: EventLog, cfg: TrainConfig) -> LocationEncoder:
    return LocationEncoder(mode=cfg.location_mode, epochs=cfg.location_epochs,
                           random_state=cfg.seed).fit(location_corpus(train_log))


def fit(train_log: EventLog, cfg: TrainConfig) -> TrainedModel:
    """Full training pipeline: vocabulary, location encoder, model, clusters."""
    if train_log.schema != cfg.schema:
        raise ConfigError(f"schema mismatch: config {cfg.schema!r}, data {train_log.schema!r}")
    vocab = build_vocab(train_log)
    loc = fit_location_encoder(train_log, cfg)
    windows = build_windows(train_log, cfg.context_minutes, cfg.step_minutes)
    model = train(windows, cfg, vocab, loc)
    if cfg.clustering:
        model.clusters = build_clusters(model, windows)
    return model
