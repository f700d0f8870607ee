"""Transformer building blocks over :mod:`dome.tensor`."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .params import ParameterStore


@dataclass
class Dropout:
    p: float = 0.0
    training: bool = False
    rng: np.random.Generator | None = None

    def __call__(self, x):
        return T.dropout(x, self.p, self.training, self.rng)


def linear(params: ParameterStore, name: str, x):
    out = T.matmul(x, params[f"{name}.w"])
    if f"{name}.b" in params:
        out = out + params[f"{name}.b"]
    return out


def norm(params: ParameterStore, name: str, x):
    return T.layer_norm(x, params[f"{name}.g"], params[f"{name}.b"])


def split_heads(x, heads: int):
    b, t, d = x.shape
    return T.transpose(T.reshape(x, (b, t, heads, d // heads)), (0, 2, 1, 3))


def merge_heads(x):
    b, h, t, dh = x.shape
    return T.reshape(T.transpose(x, (0, 2, 1, 3)), (b, t, h * dh))


def init_mha(params, name, rng, d_query, d_kv, d_model):
    params.linear(f"{name}.q", rng, d_query, d_model)
    params.linear(f"{name}.k", rng, d_kv, d_model, bias=False)  # a key bias only shifts rows
    params.linear(f"{name}.v", rng, d_kv, d_model)
    params.linear(f"{name}.o", rng, d_model, d_model)


def mha(params, name, q_in, kv_in, heads, mask=None):
    """Scaled dot-product multi-head attention.

    ``mask`` is boolean, broadcastable to ``[B, heads, Tq, Tk]``; True hides a key.
    """
    q = split_heads(linear(params, f"{name}.q", q_in), heads)
    k = split_heads(linear(params, f"{name}.k", kv_in), heads)
    v = split_heads(linear(params, f"{name}.v", kv_in), heads)
    scores = T.matmul(q, T.swap_last(k)) * (1.0 / math.sqrt(q.shape[-1]))
    if mask is not None:
        scores = T.masked_fill(scores, mask, T.NEG_INF)
    attn = T.softmax(scores, axis=-1)
    return linear(params, f"{name}.o", merge_heads(T.matmul(attn, v)))


def init_ffn(params, name, rng, d, hidden):
    params.linear(f"{name}.in", rng, d, hidden)
    params.linear(f"{name}.out", rng, hidden, d)


def ffn(params, name, x):
    return linear(params, f"{name}.out", T.relu(linear(params, f"{name}.in", x)))


def init_encoder(params, name, rng, vocab_size, d, heads, blocks, ffn_mult):
    params.embedding(f"{name}.embed", rng, vocab_size, d)
    for n in range(blocks):
        p = f"{name}.block{n}"
        init_mha(params, f"{p}.attn", rng, d, d, d)
        params.norm(f"{p}.norm1", d)
        init_ffn(params, f"{p}.ffn", rng, d, d * ffn_mult)
        params.norm(f"{p}.norm2", d)


def embed(params, name, ids, pe_table, drop: Dropout):
    d = params[f"{name}.embed"].shape[1]
    x = T.embedding(params[f"{name}.embed"], ids) * math.sqrt(d)
    x = x + pe_table.data[: ids.shape[-1]]
    return drop(x)


def encoder_block(params, p, h, heads, mask, drop: Dropout):
    h1 = norm(params, f"{p}.norm1", h + drop(mha(params, f"{p}.attn", h, h, heads, mask)))
    return norm(params, f"{p}.norm2", h1 + drop(ffn(params, f"{p}.ffn", h1)))


def encoder_forward(params, name, ids, pad, heads, blocks, pe_table, drop: Dropout):
    """Run an encoder stack on ``ids [B, T]``; ``pad [B, T]`` marks padding positions."""
    mask = np.asarray(pad, bool)[:, None, None, :]
    h = embed(params, name, ids, pe_table, drop)
    for n in range(blocks):
        h = encoder_block(params, f"{name}.block{n}", h, heads, mask, drop)
    return h


def causal_mask(length: int) -> np.ndarray:
    return np.triu(np.ones((length, length), dtype=bool), k=1)
