"""Fixed-width embeddings for location strings (file paths, ``ip:port``).

Three modes are available:

``"autoencoder"``
    A character-level transformer encoder-decoder. The encoder output is
    mean-pooled into the embedding, and the decoder reconstructs the string
    from that single vector alone, so the vector has to carry the content.
``"word2vec"``
    Path segments (split on ``/ . :``) embedded by factorising their
    positive-PMI co-occurrence matrix; a string is the mean of its segments.
``"disabled"``
    Every string maps to the zero vector (ablation).
"""

from __future__ import annotations

import logging
import math
import re
import string

import numpy as np
import torch
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted
from torch import nn

logger = logging.getLogger(__name__)

MODES = ("autoencoder", "word2vec", "disabled")

# string.printable: 10 digits, 52 letters, 32 punctuation, 6 whitespace = 100
CHARSET = string.printable
PAD, BOS, EOS, OOV = 0, 1, 2, 3
_OFFSET = 4
_CHAR_INDEX = {c: i + _OFFSET for i, c in enumerate(CHARSET)}
VOCAB_SIZE = len(CHARSET) + _OFFSET
_SEGMENT_SPLIT = re.compile(r"[/.:]+")


def tokenize(s: str, max_len: int) -> tuple[list[int], bool, int]:
    """Map ``s`` to character ids. Returns (ids, truncated, n_oov)."""
    truncated = len(s) > max_len
    ids = [_CHAR_INDEX.get(c, OOV) for c in s[:max_len]]
    return ids, truncated, sum(1 for i in ids if i == OOV)


def detokenize(ids) -> str:
    out = []
    for i in ids:
        if i == EOS:
            break
        if i >= _OFFSET:
            out.append(CHARSET[i - _OFFSET])
        elif i == OOV:
            out.append("�")
    return "".join(out)


class _PositionalEncoding(nn.Module):
    def __init__(self, dim: int, max_len: int):
        super().__init__()
        pos = torch.arange(max_len).unsqueeze(1)
        div = torch.exp(torch.arange(0, dim, 2) * (-math.log(10000.0) / dim))
        pe = torch.zeros(max_len, dim)
        pe[:, 0::2] = torch.sin(pos * div)
        pe[:, 1::2] = torch.cos(pos * div)
        self.register_buffer("pe", pe)

    def forward(self, x):
        return x + self.pe[: x.size(1)]


class _CharAutoencoder(nn.Module):
    def __init__(self, dim, n_layers, n_heads, ff_dim, max_len):
        super().__init__()
        self.embed = nn.Embedding(VOCAB_SIZE, dim, padding_idx=PAD)
        self.pos = _PositionalEncoding(dim, max_len + 2)
        enc_layer = nn.TransformerEncoderLayer(dim, n_heads, ff_dim, dropout=0.0, batch_first=True)
        dec_layer = nn.TransformerDecoderLayer(dim, n_heads, ff_dim, dropout=0.0, batch_first=True)
        self.encoder = nn.TransformerEncoder(enc_layer, n_layers, enable_nested_tensor=False)
        self.decoder = nn.TransformerDecoder(dec_layer, n_layers)
        self.out = nn.Linear(dim, VOCAB_SIZE)

    def encode(self, src):
        pad = src.eq(PAD)
        h = self.encoder(self.pos(self.embed(src)), src_key_padding_mask=pad)
        keep = (~pad).unsqueeze(-1).to(h.dtype)
        return (h * keep).sum(1) / keep.sum(1).clamp(min=1.0)

    def decode_logits(self, z, tgt_in):
        length = tgt_in.size(1)
        causal = torch.triu(torch.full((length, length), float("-inf")), diagonal=1)
        # the code vector is added to every target position and is the only memory
        h = self.pos(self.embed(tgt_in) + z.unsqueeze(1))
        h = self.decoder(h, z.unsqueeze(1), tgt_mask=causal)
        return self.out(h)


class LocationEncoder(TransformerMixin, BaseEstimator):
    """Embed location strings into ``dim``-dimensional vectors.

    Parameters
    ----------
    mode : {"autoencoder", "word2vec", "disabled"}
    dim : int
        Embedding width (8 by default).
    n_layers, n_heads, ff_dim : int
        Transformer encoder/decoder shape (autoencoder mode).
    epochs : int
        Training passes over the distinct corpus strings.
    max_len : int
        Strings are truncated to this many characters.
    random_state : int
    """

    def __init__(self, mode="autoencoder", dim=8, n_layers=2, n_heads=4, ff_dim=64,
                 epochs=10, batch_size=32, lr=5e-3, max_len=100, random_state=0):
        self.mode = mode
        self.dim = dim
        self.n_layers = n_layers
        self.n_heads = n_heads
        self.ff_dim = ff_dim
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.max_len = max_len
        self.random_state = random_state

    def _batch_ids(self, strings):
        rows, truncated, oov = [], 0, 0
        for s in strings:
            ids, trunc, n_oov = tokenize(s, self.max_len)
            rows.append(ids)
            truncated += trunc
            oov += n_oov
        width = max((len(r) for r in rows), default=0) + 1
        arr = np.full((len(rows), width), PAD, dtype=np.int64)
        for i, r in enumerate(rows):
            arr[i, : len(r)] = r
            arr[i, len(r)] = EOS
        return arr, truncated, oov

    def fit(self, X, y=None):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        corpus = sorted(set(X))
        if not corpus:
            raise ValueError("location corpus is empty")
        self.cache_ = {}
        ids, self.n_truncated_, self.n_oov_chars_ = self._batch_ids(corpus)
        self.n_strings_ = len(corpus)
        if self.mode == "autoencoder":
            self._fit_autoencoder(ids)
        elif self.mode == "word2vec":
            self._fit_word2vec(corpus)
        self.fitted_ = True
        return self

    def _build_module(self):
        return _CharAutoencoder(self.dim, self.n_layers, self.n_heads, self.ff_dim, self.max_len)

    def _fit_autoencoder(self, ids):
        torch.manual_seed(self.random_state)
        gen = torch.Generator().manual_seed(self.random_state)
        model = self._build_module()
        opt = torch.optim.Adam(model.parameters(), lr=self.lr)
        data = torch.from_numpy(ids)
        loss_fn = nn.CrossEntropyLoss(ignore_index=PAD)
        self.loss_curve_ = []
        model.train()
        for _ in range(self.epochs):
            perm = torch.randperm(len(data), generator=gen)
            total, batches = 0.0, 0
            for start in range(0, len(data), self.batch_size):
                src = data[perm[start: start + self.batch_size]]
                src = src[:, : int(src.ne(PAD).sum(1).max())]
                tgt_in = torch.cat([torch.full((len(src), 1), BOS), src[:, :-1]], dim=1)
                logits = model.decode_logits(model.encode(src), tgt_in)
                loss = loss_fn(logits.reshape(-1, VOCAB_SIZE), src.reshape(-1))
                opt.zero_grad()
                loss.backward()
                opt.step()
                total += float(loss.detach())
                batches += 1
            self.loss_curve_.append(total / batches)
        model.eval()
        self.module_ = model

    def _fit_word2vec(self, corpus):
        segs = [[t for t in _SEGMENT_SPLIT.split(s) if t] for s in corpus]
        vocab = sorted({t for row in segs for t in row})
        index = {t: i for i, t in enumerate(vocab)}
        n = len(vocab)
        co = np.zeros((n, n))
        for row in segs:
            uniq = [index[t] for t in row]
            for a in uniq:
                for b in uniq:
                    if a != b:
                        co[a, b] += 1.0
        # segments that never co-occur still get a self-context
        co[np.arange(n), np.arange(n)] += 1.0
        total = co.sum()
        rows = co.sum(1, keepdims=True)
        cols = co.sum(0, keepdims=True)
        with np.errstate(divide="ignore"):
            pmi = np.log(co * total / (rows @ cols))
        ppmi = np.where(np.isfinite(pmi) & (pmi > 0), pmi, 0.0)
        u, s, _ = np.linalg.svd(ppmi, full_matrices=False)
        k = min(self.dim, len(s))
        vecs = np.zeros((n, self.dim))
        vecs[:, :k] = u[:, :k] * np.sqrt(s[:k])
        # fix SVD sign ambiguity for reproducibility across LAPACK builds
        signs = np.sign(vecs[np.abs(vecs).argmax(0), np.arange(self.dim)])
        signs[signs == 0] = 1.0
        self.segment_index_ = index
        self.segment_vectors_ = (vecs * signs).astype(np.float32)

    def transform(self, X) -> np.ndarray:
        check_is_fitted(self, "fitted_")
        strings = list(X)
        missing = sorted({s for s in strings if s not in self.cache_})
        if missing:
            for s, vec in zip(missing, self._embed(missing)):
                self.cache_[s] = vec
        if not strings:
            return np.zeros((0, self.dim), dtype=np.float32)
        return np.stack([self.cache_[s] for s in strings])

    def _embed(self, strings) -> np.ndarray:
        if self.mode == "disabled":
            return np.zeros((len(strings), self.dim), dtype=np.float32)
        if self.mode == "word2vec":
            out = np.zeros((len(strings), self.dim), dtype=np.float32)
            for i, s in enumerate(strings):
                rows = [self.segment_index_[t] for t in _SEGMENT_SPLIT.split(s) if t in self.segment_index_]
                if rows:
                    out[i] = self.segment_vectors_[rows].mean(0)
            return out
        # one string per forward pass: batch composition would otherwise
        # perturb the last bits of the embedding
        out = np.zeros((len(strings), self.dim), dtype=np.float32)
        with torch.no_grad():
            for i, s in enumerate(strings):
                ids, _, _ = self._batch_ids([s])
                out[i] = self.module_.encode(torch.from_numpy(ids))[0].numpy()
        return out

    def reconstruct(self, strings) -> list[str]:
        """Greedy-decode each string from its embedding (autoencoder mode)."""
        check_is_fitted(self, "fitted_")
        if self.mode != "autoencoder":
            raise ValueError("reconstruction is only defined for the autoencoder mode")
        ids, _, _ = self._batch_ids(strings)
        with torch.no_grad():
            z = self.module_.encode(torch.from_numpy(ids))
            out = torch.full((len(strings), 1), BOS)
            for _ in range(ids.shape[1]):
                nxt = self.module_.decode_logits(z, out)[:, -1].argmax(-1, keepdim=True)
                out = torch.cat([out, nxt], dim=1)
        return [detokenize(row[1:]) for row in out.tolist()]

    # -- persistence -------------------------------------------------------

    def state(self) -> tuple[dict, dict[str, np.ndarray]]:
        """Return (JSON-able metadata, named arrays) describing the fitted encoder."""
        check_is_fitted(self, "fitted_")
        meta = {"params": self.get_params(), "n_strings": self.n_strings_,
                "n_truncated": self.n_truncated_, "n_oov_chars": self.n_oov_chars_}
        arrays: dict[str, np.ndarray] = {}
        if self.mode == "autoencoder":
            for name, t in self.module_.state_dict().items():
                arrays[name] = t.detach().numpy().copy()
        elif self.mode == "word2vec":
            meta["segments"] = sorted(self.segment_index_, key=self.segment_index_.get)
            arrays["segment_vectors"] = self.segment_vectors_
        return meta, arrays

    @classmethod
    def from_state(cls, meta: dict, arrays: dict[str, np.ndarray]) -> "LocationEncoder":
        enc = cls(**meta["params"])
        enc.cache_ = {}
        enc.n_strings_ = meta["n_strings"]
        enc.n_truncated_ = meta["n_truncated"]
        enc.n_oov_chars_ = meta["n_oov_chars"]
        if enc.mode == "autoencoder":
            module = enc._build_module()
            module.load_state_dict({k: torch.from_numpy(np.array(v)) for k, v in arrays.items()})
            module.eval()
            enc.module_ = module
        elif enc.mode == "word2vec":
            enc.segment_index_ = {t: i for i, t in enumerate(meta["segments"])}
            enc.segment_vectors_ = np.asarray(arrays["segment_vectors"], dtype=np.float32)
        enc.fitted_ = True
        return enc
