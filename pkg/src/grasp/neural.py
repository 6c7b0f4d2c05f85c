"""Two-layer graph-attention encoder and MLP decoder, with hand-written backward.

Each attention layer follows the edge-aware GAT formulation: for a message
from node ``j`` to node ``i`` over edge ``e`` and head ``k``::

    score = leaky_relu(a_src[k] . Wx_j + a_dst[k] . Wx_i + a_edge[k] . W_e f_e, 0.2)
    alpha = softmax of score over all edges entering i (self-loop included)
    out_i = concat_k( sum_e alpha * Wx_j ) + bias

Edge features only enter the score. Every node gets a self-loop whose edge
features are zero. Dropout, when training, is applied to ``alpha``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .encode import EncodedBatch
from .errors import TrainingError

NEG_SLOPE = 0.2


@dataclass(frozen=True)
class ModelShape:
    d_in: int
    n_ops: int
    K: int
    heads: int = 4
    hidden: int = 128
    mlp_hidden: int = 128

    @property
    def width(self) -> int:
        return self.heads * self.hidden


def param_shapes(shape: ModelShape) -> dict[str, tuple[int, ...]]:
    H, C, D = shape.heads, shape.hidden, shape.width
    out = {}
    for layer, d in ((0, shape.d_in), (1, D)):
        out[f"gat{layer}.weight"] = (d, D)
        out[f"gat{layer}.att_src"] = (H, C)
        out[f"gat{layer}.att_dst"] = (H, C)
        out[f"gat{layer}.edge_weight"] = (shape.n_ops, D)
        out[f"gat{layer}.att_edge"] = (H, C)
        out[f"gat{layer}.bias"] = (D,)
    out["mlp0.weight"] = (D, shape.mlp_hidden)
    out["mlp0.bias"] = (shape.mlp_hidden,)
    out["mlp1.weight"] = (shape.mlp_hidden, shape.K)
    out["mlp1.bias"] = (shape.K,)
    return out


def init_params(shape: ModelShape, seed: int = 0, dtype=np.float32) -> dict[str, np.ndarray]:
    """Glorot-uniform weights and attention vectors, zero biases."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, shp in param_shapes(shape).items():
        if name.endswith("bias"):
            params[name] = np.zeros(shp, dtype=dtype)
            continue
        if name.split(".")[1].startswith("att"):
            fan_in, fan_out = 1, shp[1]
        else:
            fan_in, fan_out = shp
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        params[name] = rng.uniform(-limit, limit, size=shp).astype(dtype)
    return params


def check_params(params: dict[str, np.ndarray], shape: ModelShape) -> None:
    for name, shp in param_shapes(shape).items():
        if name not in params:
            raise ValueError(f"missing parameter {name}")
        if params[name].shape != shp:
            raise ValueError(f"{name}: expected shape {shp}, got {params[name].shape}")


class _Graph:
    """Edge structure with self-loops, sorted by destination."""

    def __init__(self, edge_index: np.ndarray, edge_attr: np.ndarray, n: int, dtype):
        loops = np.arange(n)
        src = np.concatenate([edge_index[0], loops]).astype(np.int64)
        dst = np.concatenate([edge_index[1], loops]).astype(np.int64)
        attr = np.concatenate([edge_attr.astype(dtype), np.zeros((n, edge_attr.shape[1]), dtype)])
        order = np.argsort(dst, kind="stable")
        self.n = n
        self.src, self.dst, self.attr = src[order], dst[order], attr[order]
        self.starts = np.searchsorted(self.dst, np.arange(n))
        m = len(self.src)
        self.scatter_src = sp.csr_matrix((np.ones(m, dtype), (self.src, np.arange(m))), shape=(n, m))

    def seg_sum(self, v: np.ndarray) -> np.ndarray:
        return np.add.reduceat(v, self.starts, axis=0)

    def seg_max(self, v: np.ndarray) -> np.ndarray:
        return np.maximum.reduceat(v, self.starts, axis=0)

    def scatter_to_src(self, v: np.ndarray) -> np.ndarray:
        flat = v.reshape(len(self.src), -1)
        return np.asarray(self.scatter_src @ flat).reshape((self.n,) + v.shape[1:])


def _gat_layer(x, g: _Graph, p: dict, prefix: str, heads: int, training: bool,
               dropout: float, rng):
    n = x.shape[0]
    W = p[f"{prefix}.weight"]
    if x.shape[1] != W.shape[0]:
        raise ValueError(f"{prefix}: expected input width {W.shape[0]}, got {x.shape[1]}")
    h = (x @ W).reshape(n, heads, -1)
    he = (g.attr @ p[f"{prefix}.edge_weight"]).reshape(len(g.src), heads, -1)
    a_src = (h * p[f"{prefix}.att_src"]).sum(-1)
    a_dst = (h * p[f"{prefix}.att_dst"]).sum(-1)
    a_edge = (he * p[f"{prefix}.att_edge"]).sum(-1)
    s = a_src[g.src] + a_dst[g.dst] + a_edge
    e = np.where(s > 0, s, NEG_SLOPE * s)
    ex = np.exp(e - g.seg_max(e)[g.dst])
    alpha = ex / g.seg_sum(ex)[g.dst]
    if training and dropout > 0:
        keep = (rng.random(alpha.shape) >= dropout).astype(x.dtype) / (1.0 - dropout)
    else:
        keep = None
    alpha_d = alpha * keep if keep is not None else alpha
    h_src = h[g.src]
    out = g.seg_sum(alpha_d[:, :, None] * h_src).reshape(n, -1) + p[f"{prefix}.bias"]
    y = np.maximum(out, 0)
    cache = (x, h, he, s, alpha, keep, alpha_d, h_src, out)
    return y, cache


def _gat_layer_backward(gy, cache, g: _Graph, p: dict, prefix: str, heads: int, grads: dict):
    x, h, he, s, alpha, keep, alpha_d, h_src, out = cache
    n = x.shape[0]
    gout = gy * (out > 0)
    grads[f"{prefix}.bias"] = gout.sum(0)
    gmsg = gout.reshape(n, heads, -1)[g.dst]
    g_alpha = (gmsg * h_src).sum(-1)
    gh = g.scatter_to_src(alpha_d[:, :, None] * gmsg)
    if keep is not None:
        g_alpha = g_alpha * keep
    ge = alpha * (g_alpha - g.seg_sum(alpha * g_alpha)[g.dst])
    gs = ge * np.where(s > 0, 1.0, NEG_SLOPE).astype(ge.dtype)
    g_asrc = g.scatter_to_src(gs)
    g_adst = g.seg_sum(gs)
    att_src, att_dst, att_edge = (p[f"{prefix}.att_src"], p[f"{prefix}.att_dst"],
                                  p[f"{prefix}.att_edge"])
    grads[f"{prefix}.att_src"] = (g_asrc[:, :, None] * h).sum(0)
    grads[f"{prefix}.att_dst"] = (g_adst[:, :, None] * h).sum(0)
    grads[f"{prefix}.att_edge"] = (gs[:, :, None] * he).sum(0)
    gh = gh + g_asrc[:, :, None] * att_src + g_adst[:, :, None] * att_dst
    ghe = (gs[:, :, None] * att_edge).reshape(len(g.src), -1)
    grads[f"{prefix}.edge_weight"] = g.attr.T @ ghe
    gh = gh.reshape(n, -1)
    grads[f"{prefix}.weight"] = x.T @ gh
    return gh @ p[f"{prefix}.weight"].T


def _encode(batch: EncodedBatch, params, heads, training, dropout, rng):
    dtype = params["gat0.weight"].dtype
    x = batch.x.astype(dtype, copy=False)
    g = _Graph(batch.edge_index, batch.edge_attr, x.shape[0], dtype)
    h1, c0 = _gat_layer(x, g, params, "gat0", heads, training, dropout, rng)
    h2, c1 = _gat_layer(h1, g, params, "gat1", heads, training, dropout, rng)
    return h2, (g, c0, c1)


def gat_forward(batch: EncodedBatch, params: dict, heads: int = 4, training: bool = False,
                dropout: float = 0.1, rng: np.random.Generator | None = None) -> np.ndarray:
    """Seed embeddings, one row (width ``heads * hidden``) per seed."""
    if training and dropout > 0 and rng is None:
        raise ValueError("a random generator is required for training-mode dropout")
    h2, _ = _encode(batch, params, heads, training, dropout, rng)
    return h2[batch.seed_index]


def _mlp(z, params):
    pre = z @ params["mlp0.weight"] + params["mlp0.bias"]
    hidden = np.maximum(pre, 0)
    logits = hidden @ params["mlp1.weight"] + params["mlp1.bias"]
    return pre, hidden, logits


def softmax(logits: np.ndarray) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    ez = np.exp(z)
    return ez / ez.sum(axis=-1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def decode(embeddings: np.ndarray, params: dict) -> np.ndarray:
    """Class probabilities (float64, rows sum to 1) for each embedding row."""
    if embeddings.shape[1] != params["mlp0.weight"].shape[0]:
        raise ValueError(f"decoder expects width {params['mlp0.weight'].shape[0]}, "
                         f"got {embeddings.shape[1]}")
    return softmax(_mlp(embeddings, params)[2])


def predict_proba(batch: EncodedBatch, params: dict, heads: int = 4) -> np.ndarray:
    return decode(gat_forward(batch, params, heads), params)


def cross_entropy(logits: np.ndarray, labels: np.ndarray) -> float:
    return float(-np.mean(log_softmax(logits)[np.arange(len(labels)), labels]))


def loss_and_gradients(batch: EncodedBatch, params: dict, labels: np.ndarray | None = None,
                       rng: np.random.Generator | None = None, heads: int = 4,
                       dropout: float = 0.1, training: bool = True):
    """Mean cross-entropy over seeds with a known label, and its exact gradient.

    Returns ``None`` when no seed carries a known label, so callers can skip
    the batch. Otherwise returns ``(loss, grads, probs)``; ``probs`` covers all
    seeds and is computed under the same dropout mask.
    """
    labels = batch.labels if labels is None else np.asarray(labels)
    known = labels >= 0
    if not known.any():
        return None
    if training and dropout > 0 and rng is None:
        raise ValueError("a random generator is required for training-mode dropout")
    h2, (g, c0, c1) = _encode(batch, params, heads, training, dropout, rng)
    z = h2[batch.seed_index]
    pre, hidden, logits = _mlp(z, params)
    probs = softmax(logits)
    n_known = int(known.sum())
    rows = np.flatnonzero(known)
    loss = float(-log_softmax(logits)[rows, labels[rows]].sum() / n_known)

    dtype = params["gat0.weight"].dtype
    glogits = np.zeros_like(probs)
    glogits[rows] = probs[rows]
    glogits[rows, labels[rows]] -= 1.0
    glogits = (glogits / n_known).astype(dtype)
    grads = {
        "mlp1.weight": hidden.T @ glogits,
        "mlp1.bias": glogits.sum(0),
    }
    gpre = (glogits @ params["mlp1.weight"].T) * (pre > 0)
    grads["mlp0.weight"] = z.T @ gpre
    grads["mlp0.bias"] = gpre.sum(0)
    gz = gpre @ params["mlp0.weight"].T
    gh2 = np.zeros_like(h2)
    np.add.at(gh2, batch.seed_index, gz)
    gh1 = _gat_layer_backward(gh2, c1, g, params, "gat1", heads, grads)
    _gat_layer_backward(gh1, c0, g, params, "gat0", heads, grads)
    grads = {k: np.asarray(v, dtype=dtype) for k, v in grads.items()}
    return loss, grads, probs


class Adam:
    """Adam with bias correction; weight decay is added to the gradient (L2)."""

    def __init__(self, lr=0.01, betas=(0.9, 0.999), eps=1e-8, weight_decay=1e-4):
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: dict, grads: dict) -> dict:
        for name, gr in grads.items():
            if not np.all(np.isfinite(gr)):
                raise TrainingError(f"non-finite gradient for {name}")
        self.t += 1
        b1, b2 = self.betas
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for name, gr in grads.items():
            p = params[name]
            if self.weight_decay:
                gr = gr + self.weight_decay * p
            m = self.m.get(name)
            if m is None:
                m = self.m[name] = np.zeros_like(p)
                self.v[name] = np.zeros_like(p)
            v = self.v[name]
            m *= b1
            m += (1.0 - b1) * gr
            v *= b2
            v += (1.0 - b2) * gr * gr
            denom = np.sqrt(v) / np.sqrt(c2) + self.eps
            p -= (self.lr / c1) * m / denom
            if not np.all(np.isfinite(p)):
                raise TrainingError(f"parameter {name} became non-finite")
        return params


class ReduceLROnPlateau:
    """Halve (``factor``) the optimizer's learning rate after more than
    ``patience`` epochs without a relative improvement of ``threshold``."""

    def __init__(self, optimizer: Adam, factor=0.5, patience=5, threshold=1e-4, min_lr=0.0):
        self.optimizer = optimizer
        self.factor = factor
        self.patience = patience
        self.threshold = threshold
        self.min_lr = min_lr
        self.best = np.inf
        self.num_bad_epochs = 0

    def step(self, loss: float) -> float:
        if loss < self.best * (1.0 - self.threshold):
            self.best = loss
            self.num_bad_epochs = 0
        else:
            self.num_bad_epochs += 1
        if self.num_bad_epochs > self.patience:
            self.optimizer.lr = max(self.optimizer.lr * self.factor, self.min_lr)
            self.num_bad_epochs = 0
        return self.optimizer.lr

    def state(self) -> dict:
        return {"best": float(self.best), "num_bad_epochs": self.num_bad_epochs,
                "factor": self.factor, "patience": self.patience, "lr": self.optimizer.lr}
