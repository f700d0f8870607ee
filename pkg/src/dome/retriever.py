"""Intent-partitioned exemplar retrieval.

The corpus is first restricted to records carrying the requested intent; the
comment of the highest-scoring code in that partition becomes the exemplar.
Scoring is either the dot product of bi-encoder code vectors or BM25 over
code token bags.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .corpus import PAD_ID, GENERATABLE, CodeCommentRecord, IntentCategory
from .errors import ConfigError, NoExemplar
from .layers import Dropout, encoder_forward, init_encoder
from .model import pad_rows
from .params import Adam, ParameterStore

BM25_K1 = 1.2
BM25_B = 0.75


def partition_by_intent(corpus) -> dict[IntentCategory, list[CodeCommentRecord]]:
    """Group records by intent, keeping corpus order; every generatable intent gets a key."""
    parts = {i: [] for i in GENERATABLE}
    for rec in corpus:
        parts.setdefault(rec.intent, []).append(rec)
    return parts


# ---------------------------------------------------------------------------
# bi-encoder

@dataclass
class BiEncoderConfig:
    d_r: int = 64
    heads: int = 4
    blocks: int = 2
    ffn_mult: int = 2
    epochs: int = 10
    batch_size: int = 8
    lr: float = 1e-3
    seed: int = 0
    max_len: int = 256

    def __post_init__(self):
        if self.batch_size < 2:
            raise ConfigError("in-batch negatives need batch_size >= 2")
        if self.d_r % self.heads or self.d_r % 2:
            raise ConfigError("d_r must be even and divisible by heads")


class BiEncoder:
    """Separate code and comment encoders scored by dot product of mean-pooled states."""

    def __init__(self, cfg: BiEncoderConfig, code_vocab_size: int, comment_vocab_size: int):
        self.cfg = cfg
        self.vocab_sizes = (code_vocab_size, comment_vocab_size)
        self.params = ParameterStore()
        rng = np.random.default_rng([cfg.seed, 11])
        init_encoder(self.params, "code", rng, code_vocab_size, cfg.d_r, cfg.heads, cfg.blocks, cfg.ffn_mult)
        init_encoder(self.params, "comment", rng, comment_vocab_size, cfg.d_r, cfg.heads, cfg.blocks, cfg.ffn_mult)
        self.pe = T.sinusoidal_pe(cfg.max_len, cfg.d_r)

    @property
    def tag(self) -> str:
        c = self.cfg
        return f"biencoder-d{c.d_r}-h{c.heads}-b{c.blocks}-s{c.seed}"

    def _pool(self, side: str, seqs) -> T.Tensor:
        seqs = [list(s)[: self.cfg.max_len] or [PAD_ID] for s in seqs]
        ids = pad_rows(seqs, max(map(len, seqs)), PAD_ID)
        pad = np.zeros(ids.shape, bool)
        for i, s in enumerate(seqs):
            pad[i, len(s):] = True
        h = encoder_forward(self.params, side, ids, pad, self.cfg.heads, self.cfg.blocks,
                            self.pe, Dropout())
        w = (~pad).astype(np.float64)
        w /= w.sum(axis=1, keepdims=True)
        return T.sum_(h * w[:, :, None], axis=1)

    def embed(self, side: str, seqs, batch_size: int = 64) -> np.ndarray:
        out = []
        with T.no_grad():
            for i in range(0, len(seqs), batch_size):
                out.append(self._pool(side, seqs[i:i + batch_size]).data)
        return np.concatenate(out) if out else np.zeros((0, self.cfg.d_r))

    def embed_code(self, token_ids) -> np.ndarray:
        return self.embed("code", [token_ids])[0]

    def loss(self, codes, comments) -> T.Tensor:
        """In-batch negative softmax over code-comment dot products."""
        q = self._pool("code", codes)
        p = self._pool("comment", comments)
        scores = T.matmul(q, p.T)
        return T.cross_entropy(scores, np.arange(len(codes)))


def _batches(n, batch_size, rng):
    order = rng.permutation(n)
    chunks = [order[i:i + batch_size] for i in range(0, n, batch_size)]
    if len(chunks) > 1 and len(chunks[-1]) == 1:
        chunks[-2] = np.concatenate([chunks[-2], chunks.pop()])
    return chunks


def train_biencoder(pairs, cfg: BiEncoderConfig, code_vocab_size: int, comment_vocab_size: int):
    """Train on ``(code ids, comment ids)`` pairs; returns the encoder and per-epoch mean loss."""
    if len(pairs) < 2:
        raise ConfigError("need at least two pairs for in-batch negatives")
    enc = BiEncoder(cfg, code_vocab_size, comment_vocab_size)
    opt = Adam(enc.params, lr=cfg.lr)
    history = []
    for epoch in range(cfg.epochs):
        rng = np.random.default_rng([cfg.seed, epoch, 3])
        total = 0.0
        chunks = _batches(len(pairs), cfg.batch_size, rng)
        for chunk in chunks:
            enc.params.zero_grad()
            loss = enc.loss([pairs[i][0] for i in chunk], [pairs[i][1] for i in chunk])
            T.backward(loss)
            opt.step()
            total += float(loss.data)
        history.append(total / len(chunks))
    enc.params.snap_float32()
    return enc, history


# ---------------------------------------------------------------------------
# index

@dataclass
class Exemplar:
    comment: str
    score: float
    source_id: int


@dataclass
class Partition:
    ids: list[int] = field(default_factory=list)
    comments: list[str] = field(default_factory=list)
    vectors: np.ndarray | None = None
    bags: list[Counter] | None = None

    def __len__(self):
        return len(self.ids)


@dataclass
class RetrievalIndex:
    kind: str                                   # "dense" | "lexical"
    partitions: dict[IntentCategory, Partition]
    dim: int = 0
    encoder_tag: str = ""

    def partition(self, intent) -> Partition:
        return self.partitions.get(IntentCategory.parse(intent), Partition())


def build_dense_index(records, vectors: np.ndarray, encoder_tag: str = "") -> RetrievalIndex:
    vectors = np.asarray(vectors, dtype=np.float32).astype(np.float64)
    if len(records) != len(vectors):
        raise ConfigError("one vector per record required")
    if vectors.size and not np.isfinite(vectors).all():
        raise ConfigError("non-finite retrieval vector")
    dim = vectors.shape[1] if vectors.ndim == 2 else 0
    rows = {i: [] for i in GENERATABLE}
    for j, rec in enumerate(records):
        rows.setdefault(rec.intent, []).append(j)
    parts = {}
    for intent, js in rows.items():
        parts[intent] = Partition([records[j].id for j in js], [records[j].comment for j in js],
                                  vectors[js] if js else np.zeros((0, dim)))
    return RetrievalIndex("dense", parts, dim, encoder_tag)


def build_lexical_index(records, token_lists) -> RetrievalIndex:
    parts = {i: Partition(bags=[]) for i in GENERATABLE}
    for rec, toks in zip(records, token_lists):
        p = parts.setdefault(rec.intent, Partition(bags=[]))
        p.ids.append(rec.id)
        p.comments.append(rec.comment)
        p.bags.append(Counter(toks))
    return RetrievalIndex("lexical", parts)


def _pick(part: Partition, scores: np.ndarray, exclude_id) -> Exemplar:
    ids = np.asarray(part.ids)
    allowed = np.ones(len(ids), bool) if exclude_id is None else ids != exclude_id
    if not allowed.any():
        raise NoExemplar("no candidate in the intent partition")
    masked = np.where(allowed, scores, -np.inf)
    top = masked.max()
    j = int(np.flatnonzero(masked == top)[np.argmin(ids[masked == top])])
    return Exemplar(part.comments[j], float(scores[j]), int(ids[j]))


def retrieve(query_vec, intent, index: RetrievalIndex, exclude_id=None) -> Exemplar:
    """Top-1 by dot product inside the intent partition; ties go to the lowest record id."""
    part = index.partition(intent)
    if not len(part):
        raise NoExemplar(f"empty partition for intent {IntentCategory.parse(intent).value}")
    return _pick(part, part.vectors @ np.asarray(query_vec, dtype=np.float64), exclude_id)


def bm25_scores(query_tokens, part: Partition, k1=BM25_K1, b=BM25_B) -> np.ndarray:
    n = len(part.bags)
    lengths = np.array([sum(bag.values()) for bag in part.bags], dtype=np.float64)
    avgdl = lengths.mean() if n and lengths.mean() > 0 else 1.0
    df = Counter()
    for bag in part.bags:
        df.update(bag.keys())
    scores = np.zeros(n)
    for term in sorted(set(query_tokens)):
        if not df[term]:
            continue
        idf = math.log(1.0 + (n - df[term] + 0.5) / (df[term] + 0.5))
        for j, bag in enumerate(part.bags):
            f = bag.get(term, 0)
            if f:
                scores[j] += idf * f * (k1 + 1) / (f + k1 * (1 - b + b * lengths[j] / avgdl))
    return scores


def lexical_retrieve(query_tokens, intent, index: RetrievalIndex, exclude_id=None) -> Exemplar:
    part = index.partition(intent)
    if not len(part):
        raise NoExemplar(f"empty partition for intent {IntentCategory.parse(intent).value}")
    return _pick(part, bm25_scores(query_tokens, part), exclude_id)
