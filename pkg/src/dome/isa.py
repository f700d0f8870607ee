"""Intent-guided selective attention.

Statement-level top-k attention picks the statements a target position cares
about; token-level top-k attention, normalised inside every statement, picks
tokens within them. The two are multiplied into one token-level distribution
that weights the token value vectors.

All tensors are batched: queries ``[B, Ty, d_model + d_intent]``, token states
``[B, T, d_model]``, statement states ``[B, L, d_model]``. ``seg_ids [B, T]``
gives each token's statement (-1 for padding).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor as T
from .errors import ConfigError, ShapeError
from .layers import merge_heads, split_heads


@dataclass
class ISAConfig:
    k_token: int = 10
    k_statement: int = 5
    heads: int = 8
    d_model: int = 512
    d_intent: int = 128

    def __post_init__(self):
        if min(self.k_token, self.k_statement, self.heads) < 1:
            raise ConfigError("k_token, k_statement and heads must be >= 1")
        if self.d_model % self.heads:
            raise ConfigError("d_model must be divisible by heads")


def init_isa(params, prefix, rng, d_model, d_intent):
    dq = d_model + d_intent
    params.linear(f"{prefix}.q_stmt", rng, dq, d_model, bias=False)
    params.linear(f"{prefix}.k_stmt", rng, d_model, d_model, bias=False)
    params.linear(f"{prefix}.q_tok", rng, dq, d_model, bias=False)
    params.linear(f"{prefix}.k_tok", rng, d_model, d_model, bias=False)
    params.linear(f"{prefix}.v_tok", rng, d_model, d_model, bias=False)
    params.linear(f"{prefix}.out", rng, d_model, d_model, bias=False)


# ---------------------------------------------------------------------------
# top-k selection (piecewise constant, computed on raw arrays)

def topk_keep(scores: np.ndarray, k: int, valid=None) -> np.ndarray:
    """Boolean mask of the ``min(k, n)`` largest entries per row; ties keep the lower index."""
    scores = np.asarray(scores, dtype=np.float64)
    if valid is not None:
        valid = np.broadcast_to(np.asarray(valid, bool), scores.shape)
        scores = np.where(valid, scores, -np.inf)
    order = np.argsort(-scores, axis=-1, kind="stable")
    rank = np.empty(scores.shape, dtype=np.int64)
    np.put_along_axis(rank, order, np.broadcast_to(np.arange(scores.shape[-1]), scores.shape), axis=-1)
    keep = rank < k
    if valid is not None:
        keep &= valid
    return keep


def topk_mask(scores, k: int) -> np.ndarray:
    """Keep the k largest scores of every row, set the rest to -inf."""
    if k < 1:
        raise ConfigError("k must be >= 1")
    scores = np.asarray(scores, dtype=np.float64)
    return np.where(topk_keep(scores, k), scores, -np.inf)


def segment_topk_keep(scores: np.ndarray, seg_ids, k: int) -> np.ndarray:
    """Per-row, per-segment top-k mask; positions with segment id -1 are never kept."""
    scores = np.asarray(scores, dtype=np.float64)
    seg = np.broadcast_to(np.asarray(seg_ids), scores.shape)
    x = np.where(seg >= 0, scores, -np.inf)
    order = np.lexsort((-x, seg), axis=-1)
    seg_sorted = np.take_along_axis(seg, order, axis=-1)
    idx = np.broadcast_to(np.arange(scores.shape[-1]), scores.shape)
    change = np.ones(scores.shape, dtype=bool)
    change[..., 1:] = seg_sorted[..., 1:] != seg_sorted[..., :-1]
    start = np.maximum.accumulate(np.where(change, idx, 0), axis=-1)
    keep_sorted = ((idx - start) < k) & (seg_sorted >= 0)
    keep = np.empty(scores.shape, dtype=bool)
    np.put_along_axis(keep, order, keep_sorted, axis=-1)
    return keep


def segment_onehot(seg_ids, n_segments: int) -> np.ndarray:
    seg_ids = np.asarray(seg_ids)
    return (seg_ids[..., None] == np.arange(n_segments)).astype(np.float64)


# ---------------------------------------------------------------------------
# attention pieces

def _scores(params, prefix, q_name, k_name, Q1, X, heads):
    q = split_heads(T.matmul(Q1, params[f"{prefix}.{q_name}.w"]), heads)
    k = split_heads(T.matmul(X, params[f"{prefix}.{k_name}.w"]), heads)
    return T.matmul(q, T.swap_last(k)) * (1.0 / math.sqrt(q.shape[-1]))


def statement_attention(Q1, X_sta, cfg: ISAConfig, params, prefix="isa", stmt_valid=None):
    """Top-k_statement masked softmax over statements -> ``A_s [B, heads, Ty, L]``."""
    if X_sta.shape[1] == 0:
        raise ShapeError("statement attention over zero statements")
    alpha = _scores(params, prefix, "q_stmt", "k_stmt", Q1, X_sta, cfg.heads)
    valid = None if stmt_valid is None else np.asarray(stmt_valid, bool)[:, None, None, :]
    keep = topk_keep(alpha.data, cfg.k_statement, valid)
    return T.softmax(T.masked_fill(alpha, ~keep, T.NEG_INF), axis=-1)


def token_attention(Q1, X_tok, seg_ids, n_segments, cfg: ISAConfig, params, prefix="isa"):
    """Per-statement top-k_token softmax -> ``A_t [B, heads, Ty, T]``.

    Row ``[b, h, j]`` restricted to statement l's columns is the token
    distribution of that statement; every such block sums to one.
    """
    seg_ids = np.asarray(seg_ids)
    for b in range(seg_ids.shape[0]):
        present = np.unique(seg_ids[b][seg_ids[b] >= 0])
        if len(present) and (present != np.arange(len(present))).any():
            raise ShapeError("empty statement segment")
    beta = _scores(params, prefix, "q_tok", "k_tok", Q1, X_tok, cfg.heads)
    seg4 = seg_ids[:, None, None, :]
    keep = segment_topk_keep(beta.data, seg4, cfg.k_token)
    onehot = segment_onehot(seg_ids, n_segments)[:, None, None]
    return T.segment_softmax(beta, onehot, keep)


def combine_attention(A_s, A_t, seg_ids, n_segments):
    """``A[j, t] = A_s[j, seg(t)] * A_t[j, t]``."""
    gather = np.swapaxes(segment_onehot(seg_ids, n_segments), -1, -2)[:, None]  # [B,1,L,T]
    return T.matmul(A_s, gather) * A_t


def isa_forward(Q1, X_tok, X_sta, seg_ids, cfg: ISAConfig, params, prefix="isa",
                stmt_valid=None, trace=False):
    """Selective attention output ``[B, Ty, d_model]`` and, if asked, the raw weights."""
    n_seg = X_sta.shape[1]
    A_s = statement_attention(Q1, X_sta, cfg, params, prefix, stmt_valid)
    A_t = token_attention(Q1, X_tok, seg_ids, n_seg, cfg, params, prefix)
    A = combine_attention(A_s, A_t, seg_ids, n_seg)
    v = split_heads(T.matmul(X_tok, params[f"{prefix}.v_tok.w"]), cfg.heads)
    out = T.matmul(merge_heads(T.matmul(A, v)), params[f"{prefix}.out.w"])
    weights = {"A_s": A_s.data, "A_t": A_t.data, "A": A.data} if trace else None
    return out, weights


# ---------------------------------------------------------------------------
# trace export

@dataclass
class AttentionTrace:
    block: int
    head: int
    step: int
    A_s: list
    A_t: dict = field(default_factory=dict)
    A: list = field(default_factory=list)
    beta: float | None = None

    def to_json(self) -> dict:
        d = asdict(self)
        d["A_t"] = {str(k): v for k, v in self.A_t.items()}
        return d


def build_traces(block: int, weights: dict, segments, betas=None) -> list[AttentionTrace]:
    """Split one example's ISA weights (batch index 0) into per-head, per-step traces."""
    A_s, A_t, A = weights["A_s"][0], weights["A_t"][0], weights["A"][0]
    out = []
    heads, steps = A.shape[0], A.shape[1]
    for h in range(heads):
        for j in range(steps):
            out.append(AttentionTrace(
                block=block, head=h, step=j,
                A_s=[A_s[h, j, : len(segments)].tolist()],
                A_t={l: [A_t[h, j, s:e].tolist()] for l, (s, e) in enumerate(segments)},
                A=[A[h, j, : segments[-1][1]].tolist()],
                beta=None if betas is None else float(betas[j]),
            ))
    return out
