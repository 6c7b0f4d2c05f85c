"""Feature encoding of sampled subgraphs.

Node feature layout (``d_in = 11 + K``)::

    [ kind one-hot (3) | location embedding (8) | executable one-hot (K) ]

Only File and Netflow nodes carry a location embedding; process rows keep that
block at zero so nothing about a masked target's executable leaks into its
own row. The executable block is zero for seeds (masked), for non-process
nodes, and for processes whose executable is outside the vocabulary.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError
from .events import NODE_KINDS, EventLog
from .location import LocationEncoder
from .windows import SampledSubgraph, WindowGraph

N_KINDS = len(NODE_KINDS)
LOC_DIM = 8
UNKNOWN = -1

_KIND_INDEX = {k: i for i, k in enumerate(NODE_KINDS)}


@dataclass(frozen=True)
class ExecutableVocab:
    """Sorted executables seen in training; index lookups are dense in ``[0, K)``."""

    executables: tuple[str, ...]
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not self.executables:
            raise DataError("no learnable targets: the vocabulary is empty")
        if list(self.executables) != sorted(set(self.executables)):
            raise ValueError("executables must be sorted and distinct")
        object.__setattr__(self, "_index", {e: i for i, e in enumerate(self.executables)})

    @property
    def K(self) -> int:
        return len(self.executables)

    def __len__(self) -> int:
        return len(self.executables)

    def __contains__(self, exe) -> bool:
        return exe in self._index

    def get(self, exe: str) -> int | None:
        """Index of ``exe``, or ``None`` when it was never seen in training."""
        return self._index.get(exe)

    def label(self, exe: str) -> int:
        return self._index.get(exe, UNKNOWN)

    def name(self, index: int) -> str:
        return self.executables[index]

    def to_json(self) -> dict:
        return {"executables": list(self.executables)}

    @classmethod
    def from_json(cls, d: dict) -> "ExecutableVocab":
        return cls(tuple(d["executables"]))


def build_vocab(train: EventLog) -> ExecutableVocab:
    exes = sorted(set(train.subjects().values()))
    if not exes:
        raise DataError("no learnable targets: training data contains no process nodes")
    return ExecutableVocab(tuple(exes))


def location_corpus(log: EventLog) -> list[str]:
    """Distinct location strings of a log, in sorted order."""
    return sorted({attr for kind, attr in log.entity_table.values() if attr})


@dataclass
class EncodedBatch:
    x: np.ndarray
    edge_index: np.ndarray
    edge_attr: np.ndarray
    seed_index: np.ndarray
    labels: np.ndarray
    node_ids: list[str]
    window_start: int = 0

    @property
    def n_seeds(self) -> int:
        return len(self.seed_index)

    @property
    def seed_ids(self) -> list[str]:
        return [self.node_ids[i] for i in self.seed_index]


def window_features(w: WindowGraph, vocab: ExecutableVocab, loc: LocationEncoder,
                    dtype=np.float32) -> np.ndarray:
    """Unmasked feature rows for every node of a window."""
    n, K = w.n_nodes, vocab.K
    x = np.zeros((n, N_KINDS + LOC_DIM + K), dtype=dtype)
    kinds = np.fromiter((_KIND_INDEX[k] for k in w.node_kind), np.int64, n)
    x[np.arange(n), kinds] = 1.0
    located = [i for i in range(n) if w.node_kind[i] != "Subject"]
    if located:
        x[located, N_KINDS:N_KINDS + LOC_DIM] = loc.transform([w.node_attr[i] for i in located])
    for i in range(n):
        if w.node_kind[i] == "Subject":
            j = vocab.get(w.node_attr[i])
            if j is not None:
                x[i, N_KINDS + LOC_DIM + j] = 1.0
    return x


def encode_batch(sub: SampledSubgraph, vocab: ExecutableVocab, loc: LocationEncoder,
                 base: np.ndarray | None = None, dtype=np.float32) -> EncodedBatch:
    """Turn a sampled subgraph into model inputs, masking every seed's executable.

    ``base`` may carry precomputed :func:`window_features` for ``sub.window``.
    """
    w = sub.window
    if base is None:
        base = window_features(w, vocab, loc, dtype)
    x = base[sub.nodes].astype(dtype, copy=True)
    x[: sub.n_seeds, N_KINDS + LOC_DIM:] = 0.0
    pos = {int(g): r for r, g in enumerate(sub.nodes)}
    src = np.fromiter((pos[int(w.edge_src[e])] for e in sub.edges), np.int64, len(sub.edges))
    dst = np.fromiter((pos[int(w.edge_dst[e])] for e in sub.edges), np.int64, len(sub.edges))
    edge_index = np.stack([np.concatenate([src, dst]), np.concatenate([dst, src])])
    n_ops = len(w.ops)
    ops = w.edge_op[sub.edges] if len(sub.edges) else np.zeros(0, dtype=np.int64)
    attr = np.zeros((2 * len(ops), n_ops), dtype=dtype)
    attr[np.arange(2 * len(ops)), np.concatenate([ops, ops])] = 1.0
    labels = np.fromiter((vocab.label(w.node_attr[int(i)]) for i in sub.nodes[: sub.n_seeds]),
                         np.int64, sub.n_seeds)
    return EncodedBatch(x, edge_index, attr, np.arange(sub.n_seeds), labels,
                        [w.node_ids[int(i)] for i in sub.nodes], w.window_start)
