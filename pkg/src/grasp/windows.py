"""Sliding-window graph construction and k-hop neighborhood extraction."""

from __future__ import annotations

import bisect
import csv
import json
import math
import os
from collections import deque
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigError
from .events import EventLog, schema_ops

NS_PER_MINUTE = 60_000_000_000
DEFAULT_NODE_BUDGET = 250_000


def minutes_to_ns(minutes: float) -> int:
    return int(round(minutes * NS_PER_MINUTE))


@dataclass(eq=False)
class WindowGraph:
    """Undirected multigraph of the events inside ``[window_start, window_end)``.

    Nodes are addressed by dense integer indices (``node_ids`` is sorted);
    edges are stored once as parallel arrays and traversed both ways.
    """

    window_start: int
    window_end: int
    node_ids: list[str]
    node_kind: list[str]
    node_attr: list[str]
    edge_src: np.ndarray
    edge_dst: np.ndarray
    edge_op: np.ndarray
    edge_ts: np.ndarray
    ops: tuple[str, ...]
    seed_processes: list[str] = field(init=False)
    neighbors: list[list[int]] = field(init=False, repr=False)
    _pair_edges: dict = field(init=False, repr=False)
    _index: dict = field(init=False, repr=False)

    def __post_init__(self):
        n = len(self.node_ids)
        self._index = {nid: i for i, nid in enumerate(self.node_ids)}
        self.seed_processes = [nid for nid, k in zip(self.node_ids, self.node_kind) if k == "Subject"]
        pairs: dict[tuple[int, int], list[int]] = {}
        nbrs = [set() for _ in range(n)]
        for e, (u, v) in enumerate(zip(self.edge_src.tolist(), self.edge_dst.tolist())):
            if u == v:
                continue
            key = (u, v) if u < v else (v, u)
            pairs.setdefault(key, []).append(e)
            nbrs[u].add(v)
            nbrs[v].add(u)
        self._pair_edges = pairs
        self.neighbors = [sorted(s) for s in nbrs]

    @property
    def nodes(self) -> dict[str, tuple[str, str]]:
        return {i: (k, a) for i, k, a in zip(self.node_ids, self.node_kind, self.node_attr)}

    @property
    def edges(self) -> list[tuple[str, str, str, int]]:
        ids, ops = self.node_ids, self.ops
        return [(ids[u], ids[v], ops[o], int(t)) for u, v, o, t in
                zip(self.edge_src.tolist(), self.edge_dst.tolist(),
                    self.edge_op.tolist(), self.edge_ts.tolist())]

    @property
    def n_nodes(self) -> int:
        return len(self.node_ids)

    @property
    def n_edges(self) -> int:
        return len(self.edge_src)

    def index_of(self, node_id: str) -> int:
        try:
            return self._index[node_id]
        except KeyError:
            raise KeyError(f"node {node_id!r} is not in window "
                           f"[{self.window_start}, {self.window_end})") from None

    def edges_between(self, u: int, v: int) -> list[int]:
        return self._pair_edges.get((u, v) if u < v else (v, u), [])

    def to_dict(self) -> dict:
        return {
            "window_start": self.window_start, "window_end": self.window_end,
            "ops": list(self.ops),
            "nodes": [[i, k, a] for i, k, a in zip(self.node_ids, self.node_kind, self.node_attr)],
            "edges": [[int(u), int(v), int(o), int(t)] for u, v, o, t in
                      zip(self.edge_src, self.edge_dst, self.edge_op, self.edge_ts)],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "WindowGraph":
        nodes = d["nodes"]
        edges = np.asarray(d["edges"], dtype=np.int64).reshape(-1, 4)
        return cls(d["window_start"], d["window_end"],
                   [n[0] for n in nodes], [n[1] for n in nodes], [n[2] for n in nodes],
                   edges[:, 0].copy(), edges[:, 1].copy(), edges[:, 2].copy(), edges[:, 3].copy(),
                   tuple(d["ops"]))


def _make_window(log: EventLog, lo: int, hi: int, start: int, end: int,
                 ops: tuple[str, ...]) -> WindowGraph:
    events = log.events[lo:hi]
    ids = sorted({e.src_id for e in events} | {e.dst_id for e in events})
    index = {nid: i for i, nid in enumerate(ids)}
    op_index = {o: i for i, o in enumerate(ops)}
    table = log.entity_table
    return WindowGraph(
        start, end, ids,
        [table[i][0] for i in ids], [table[i][1] for i in ids],
        np.fromiter((index[e.src_id] for e in events), np.int64, len(events)),
        np.fromiter((index[e.dst_id] for e in events), np.int64, len(events)),
        np.fromiter((op_index[e.op] for e in events), np.int64, len(events)),
        np.fromiter((e.ts for e in events), np.int64, len(events)),
        ops,
    )


def window_starts(first_ts: int, last_ts: int, context_ns: int, step_ns: int) -> list[int]:
    """Grid of window start times covering ``[first_ts, last_ts]``.

    The grid is anchored at ``first_ts`` floored to the step and ends at the
    first start whose window reaches past ``last_ts``.
    """
    t0 = (first_ts // step_ns) * step_ns
    k_last = max(0, math.ceil((last_ts - context_ns + 1 - t0) / step_ns))
    return [t0 + k * step_ns for k in range(k_last + 1)]


def build_windows(log: EventLog, context_minutes: float = 120,
                  step_minutes: float = 120) -> list[WindowGraph]:
    """Segment ``log`` into sliding-window graphs.

    Windows start on a grid of ``step_minutes`` anchored at the first event;
    only windows containing at least one event are returned.
    """
    if context_minutes <= 0 or step_minutes <= 0:
        raise ConfigError(f"context ({context_minutes}) and step ({step_minutes}) "
                          "must both be positive")
    if not log.events:
        return []
    ctx, step = minutes_to_ns(context_minutes), minutes_to_ns(step_minutes)
    ops = schema_ops(log.schema)
    ts = [e.ts for e in log.events]
    out = []
    for start in window_starts(ts[0], ts[-1], ctx, step):
        lo = bisect.bisect_left(ts, start)
        hi = bisect.bisect_left(ts, start + ctx)
        if hi > lo:
            out.append(_make_window(log, lo, hi, start, start + ctx, ops))
    return out


@dataclass
class SampledSubgraph:
    """Seeds plus their sampled <=2-hop context inside one window.

    ``nodes`` holds window node indices with the seeds first; ``edges`` holds
    window edge indices (each undirected edge once).
    """

    window: WindowGraph
    nodes: np.ndarray
    hop: np.ndarray
    edges: np.ndarray
    n_seeds: int

    @property
    def seed_ids(self) -> list[str]:
        return [self.window.node_ids[i] for i in self.nodes[: self.n_seeds]]

    @property
    def node_ids(self) -> list[str]:
        return [self.window.node_ids[i] for i in self.nodes]


def _sample(neigh: list[int], k: int, rng: np.random.Generator) -> list[int]:
    if k < 0 or len(neigh) <= k:
        return neigh
    if k == 0:
        return []
    picked = rng.choice(len(neigh), size=k, replace=False)
    return [neigh[i] for i in np.sort(picked)]


def two_hop_subgraph(w: WindowGraph, seeds: Sequence[str], fanout1: int = -1,
                     fanout2: int = -1, rng_seed: int = 0) -> SampledSubgraph:
    """GraphSAGE-style two-level neighbor sampling around ``seeds``.

    Fanouts are per expansion: each seed draws at most ``fanout1`` distinct
    neighbors, each newly reached 1-hop node draws at most ``fanout2``.
    ``-1`` keeps every neighbor and ``0`` disables that level. All parallel
    edges between an expanded node and a drawn neighbor are retained.
    """
    for f in (fanout1, fanout2):
        if f < -1:
            raise ConfigError(f"fanout must be -1 (all) or >= 0, got {f}")
    rng = np.random.default_rng(rng_seed)
    hop: dict[int, int] = {}
    order: list[int] = []
    for s in seeds:
        i = w.index_of(s)
        if w.node_kind[i] != "Subject":
            raise KeyError(f"seed {s!r} is not a process node")
        if i not in hop:
            hop[i] = 0
            order.append(i)
    n_seeds = len(order)
    pairs: set[tuple[int, int]] = set()
    frontier: list[int] = []
    for s in order[:n_seeds]:
        for v in _sample(w.neighbors[s], fanout1, rng):
            pairs.add((s, v) if s < v else (v, s))
            if v not in hop:
                hop[v] = 1
                order.append(v)
                frontier.append(v)
    for u in frontier:
        for v in _sample(w.neighbors[u], fanout2, rng):
            pairs.add((u, v) if u < v else (v, u))
            if v not in hop:
                hop[v] = 2
                order.append(v)
    edges = sorted(e for p in pairs for e in w.edges_between(*p))
    nodes = np.asarray(order, dtype=np.int64)
    return SampledSubgraph(w, nodes, np.asarray([hop[i] for i in order], dtype=np.int64),
                           np.asarray(edges, dtype=np.int64), n_seeds)


@dataclass
class HopStats:
    """Neighborhood sizes per hop for a set of seed processes.

    ``sizes[i, k-1]`` is the number of nodes within distance ``k`` of seed
    ``i`` (seed excluded); ``-1`` marks a seed whose search hit the node
    budget at that hop.
    """

    max_hop: int
    sizes: np.ndarray

    @property
    def empty(self) -> bool:
        return self.sizes.shape[0] == 0

    def rows(self) -> list[tuple[int, float | None, float | None]]:
        out = []
        for k in range(1, self.max_hop + 1):
            col = self.sizes[:, k - 1] if not self.empty else np.zeros(0)
            if self.empty:
                out.append((k, 0, 0.0))
            elif (col < 0).any():
                out.append((k, None, None))
            else:
                out.append((k, int(col.max()), float(col.mean())))
        return out

    @staticmethod
    def merge(parts: Sequence["HopStats"]) -> "HopStats":
        if not parts:
            return HopStats(4, np.zeros((0, 4), dtype=np.int64))
        max_hop = parts[0].max_hop
        return HopStats(max_hop, np.concatenate([p.sizes for p in parts], axis=0))

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["hop", "max", "mean"])
            for k, mx, mean in self.rows():
                writer.writerow([k, "n/a" if mx is None else mx,
                                 "n/a" if mean is None else f"{mean:.6f}"])


def hop_statistics(w: WindowGraph, max_hop: int = 4,
                   node_budget: int = DEFAULT_NODE_BUDGET) -> HopStats:
    if not 1 <= max_hop <= 4:
        raise ValueError("max_hop must be in [1, 4]")
    seeds = [w.index_of(s) for s in w.seed_processes]
    sizes = np.zeros((len(seeds), max_hop), dtype=np.int64)
    for row, s in enumerate(seeds):
        dist = {s: 0}
        queue = deque([s])
        counts = [0] * (max_hop + 1)
        aborted_at = None
        while queue:
            u = queue.popleft()
            d = dist[u]
            if d == max_hop:
                continue
            for v in w.neighbors[u]:
                if v not in dist:
                    dist[v] = d + 1
                    counts[d + 1] += 1
                    queue.append(v)
            if len(dist) > node_budget:
                aborted_at = d + 1
                break
        total = 0
        for k in range(1, max_hop + 1):
            total += counts[k]
            sizes[row, k - 1] = -1 if aborted_at is not None and k >= aborted_at else total
    return HopStats(max_hop, sizes)


def save_window_cache(windows: Sequence[WindowGraph], directory) -> None:
    os.makedirs(directory, exist_ok=True)
    index = {}
    for w in windows:
        name = f"window_{w.window_start}.json"
        with open(os.path.join(directory, name), "w") as fh:
            json.dump(w.to_dict(), fh, sort_keys=True, separators=(",", ":"))
        index[str(w.window_start)] = name
    with open(os.path.join(directory, "index.json"), "w") as fh:
        json.dump(index, fh, sort_keys=True, indent=1)


def load_window_cache(directory) -> list[WindowGraph]:
    with open(os.path.join(directory, "index.json")) as fh:
        index = json.load(fh)
    out = []
    for start in sorted(index, key=int):
        with open(os.path.join(directory, index[start])) as fh:
            out.append(WindowGraph.from_dict(json.load(fh)))
    return out
