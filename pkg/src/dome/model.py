"""The intent-conditioned encoder-decoder.

Two encoder stacks (code, exemplar) share the vanilla block layout; the code
encoder additionally max-pools its token states per statement. Each decoder
block runs masked self-attention, then selective attention over the code and
ordinary cross-attention over the exemplar (both queried by the decoder state
concatenated with the intent embedding), blends the two with a sigmoid gate,
and finishes with the usual feed-forward sublayer.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor as T
from .corpus import (BOS_ID, EOS_ID, GENERATABLE, PAD_ID, IntentCategory,
                     PreprocessedCode)
from .errors import ConfigError, InputTooLong, InvalidIntent
from .isa import ISAConfig, build_traces, init_isa, isa_forward
from .layers import (Dropout, causal_mask, embed, encoder_block, encoder_forward,
                     ffn, init_encoder, init_ffn, init_mha, linear, mha, norm)
from .params import ParameterStore


@dataclass
class ModelConfig:
    code_vocab_size: int
    comment_vocab_size: int
    d_model: int = 512
    d_intent: int = 128
    heads: int = 8
    blocks: int = 6
    ffn_mult: int = 4
    dropout: float = 0.2
    k_token: int = 10
    k_statement: int = 5
    max_comment_len: int = 15
    max_code_len: int = 512
    beam_size: int = 5
    zero_init_output: bool = True

    def __post_init__(self):
        dims = (self.code_vocab_size, self.comment_vocab_size, self.d_model, self.d_intent,
                self.heads, self.blocks, self.ffn_mult, self.max_comment_len,
                self.max_code_len, self.beam_size)
        if min(dims) < 1:
            raise ConfigError("all model dimensions must be positive")
        if self.d_model % self.heads:
            raise ConfigError("d_model must be divisible by heads")
        if self.d_model % 2:
            raise ConfigError("d_model must be even for positional encoding")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must be in [0, 1)")

    @property
    def isa(self) -> ISAConfig:
        return ISAConfig(self.k_token, self.k_statement, self.heads, self.d_model, self.d_intent)

    def to_json(self) -> dict:
        return asdict(self)


def intent_index(intent) -> int:
    intent = IntentCategory.parse(intent)
    if intent.is_noise:
        raise InvalidIntent("comments cannot be generated for the 'others' intent")
    return GENERATABLE.index(intent)


# ---------------------------------------------------------------------------
# batching

@dataclass
class Example:
    code: PreprocessedCode
    intent: IntentCategory
    exemplar: list[int] = field(default_factory=list)
    target: list[int] | None = None
    record_id: int | None = None
    exemplar_id: int | None = None


@dataclass
class Batch:
    code_ids: np.ndarray      # [B, T]
    code_pad: np.ndarray      # [B, T] bool
    seg_ids: np.ndarray       # [B, T], -1 on padding
    stmt_valid: np.ndarray    # [B, L] bool
    ex_ids: np.ndarray        # [B, Tz]
    ex_pad: np.ndarray        # [B, Tz] bool
    ex_empty: np.ndarray      # [B] bool
    intents: np.ndarray       # [B]
    dec_in: np.ndarray | None = None    # [B, Ty]
    targets: np.ndarray | None = None   # [B, Ty]
    tgt_valid: np.ndarray | None = None

    @property
    def size(self):
        return self.code_ids.shape[0]


def pad_rows(rows, width, fill):
    out = np.full((len(rows), width), fill, dtype=np.int64)
    for i, r in enumerate(rows):
        out[i, : len(r)] = r
    return out


def collate(examples: list[Example], extra_code_pad: int = 0, extra_target_pad: int = 0) -> Batch:
    """Pad a list of examples to a batch; the ``extra_*`` arguments add surplus PAD columns."""
    codes = [list(e.code.token_ids) for e in examples]
    segs = [e.code.segment_ids() for e in examples]
    t = max(map(len, codes)) + extra_code_pad
    n_stmt = max(e.code.L for e in examples)
    exs = [list(e.exemplar) for e in examples]
    tz = max(1, max(map(len, exs)))
    ex_ids = pad_rows(exs, tz, PAD_ID)
    ex_empty = np.array([len(x) == 0 for x in exs])
    batch = Batch(
        code_ids=pad_rows(codes, t, PAD_ID),
        code_pad=pad_rows([[0] * len(c) for c in codes], t, 1).astype(bool),
        seg_ids=pad_rows(segs, t, -1),
        stmt_valid=np.array([[l < e.code.L for l in range(n_stmt)] for e in examples]),
        ex_ids=ex_ids,
        ex_pad=(ex_ids == PAD_ID) & ~ex_empty[:, None],
        ex_empty=ex_empty,
        intents=np.array([intent_index(e.intent) for e in examples]),
    )
    if all(e.target is not None for e in examples):
        ins = [[BOS_ID] + list(e.target) for e in examples]
        outs = [list(e.target) + [EOS_ID] for e in examples]
        ty = max(map(len, ins)) + extra_target_pad
        batch.dec_in = pad_rows(ins, ty, PAD_ID)
        batch.targets = pad_rows(outs, ty, PAD_ID)
        batch.tgt_valid = pad_rows([[1] * len(o) for o in outs], ty, 0).astype(bool)
    return batch


# ---------------------------------------------------------------------------

@dataclass
class EncodedCode:
    X_tok: T.Tensor
    X_sta: T.Tensor
    seg_ids: np.ndarray
    stmt_valid: np.ndarray
    tok_pad: np.ndarray


@dataclass
class Memory:
    """Everything the decoder attends to, computed once per input."""
    code: EncodedCode
    Z: T.Tensor
    z_pad: np.ndarray
    E: T.Tensor

    def repeat(self, n: int) -> "Memory":
        """Tile a batch-of-one memory ``n`` times (inference only)."""
        rep = lambda a: np.repeat(a, n, axis=0)
        c = self.code
        return Memory(
            EncodedCode(T.Tensor(rep(c.X_tok.data)), T.Tensor(rep(c.X_sta.data)),
                        rep(c.seg_ids), rep(c.stmt_valid), rep(c.tok_pad)),
            T.Tensor(rep(self.Z.data)), rep(self.z_pad), T.Tensor(rep(self.E.data)))


class DomeModel:
    def __init__(self, cfg: ModelConfig, seed: int = 0):
        self.cfg = cfg
        self.params = ParameterStore()
        self.drop = Dropout(cfg.dropout, False, np.random.default_rng([seed, 7]))
        self.pe = T.sinusoidal_pe(max(cfg.max_code_len, cfg.max_comment_len + 1), cfg.d_model)
        rng = np.random.default_rng(seed)
        P, d, di = self.params, cfg.d_model, cfg.d_intent
        init_encoder(P, "code_enc", rng, cfg.code_vocab_size, d, cfg.heads, cfg.blocks, cfg.ffn_mult)
        init_encoder(P, "ex_enc", rng, cfg.comment_vocab_size, d, cfg.heads, cfg.blocks, cfg.ffn_mult)
        P.embedding("ex_enc.null", rng, 1, d)
        P.embedding("intent", rng, len(GENERATABLE), di)
        P.embedding("dec.embed", rng, cfg.comment_vocab_size, d)
        for n in range(cfg.blocks):
            p = f"dec.block{n}"
            init_mha(P, f"{p}.self", rng, d, d, d)
            P.norm(f"{p}.norm1", d)
            init_isa(P, f"{p}.isa", rng, d, di)
            init_mha(P, f"{p}.cross", rng, d + di, d, d)
            P.linear(f"{p}.gate", rng, 2 * d, 1, bias=False)
            init_ffn(P, f"{p}.ffn", rng, d, d * cfg.ffn_mult)
            P.norm(f"{p}.norm2", d)
        P.linear("out", rng, d + di, cfg.comment_vocab_size, zero=cfg.zero_init_output)

    # mode -------------------------------------------------------------------
    def train(self, rng: np.random.Generator | None = None):
        self.drop.training = True
        if rng is not None:
            self.drop.rng = rng
        return self

    def eval(self):
        self.drop.training = False
        return self

    # encoders ---------------------------------------------------------------
    def encode_code(self, batch: Batch) -> EncodedCode:
        cfg = self.cfg
        if batch.code_ids.shape[1] > cfg.max_code_len:
            raise InputTooLong(f"code has {batch.code_ids.shape[1]} tokens, limit {cfg.max_code_len}")
        X_tok = encoder_forward(self.params, "code_enc", batch.code_ids, batch.code_pad,
                                cfg.heads, cfg.blocks, self.pe, self.drop)
        X_sta = T.segment_max_pool_ids(X_tok, batch.seg_ids, batch.stmt_valid.shape[1])
        return EncodedCode(X_tok, X_sta, batch.seg_ids, batch.stmt_valid, batch.code_pad)

    def encode_exemplar(self, batch: Batch):
        """Exemplar states ``[B, Tz, d]``; an empty exemplar becomes one learned null row."""
        cfg = self.cfg
        enc_pad = batch.ex_pad.copy()
        enc_pad[batch.ex_empty, 0] = False
        Z = encoder_forward(self.params, "ex_enc", batch.ex_ids, enc_pad,
                            cfg.heads, cfg.blocks, self.pe, self.drop)
        z_pad = enc_pad.copy()
        if batch.ex_empty.any():
            z_pad[batch.ex_empty, 1:] = True
            sel = batch.ex_empty.astype(np.float64)[:, None, None]
            Z = Z * (1.0 - sel) + T.broadcast_to(self.params["ex_enc.null"], Z.shape) * sel
        return Z, z_pad

    def intent_embed(self, intents) -> T.Tensor:
        idx = np.asarray([i if isinstance(i, (int, np.integer)) else intent_index(i)
                          for i in np.atleast_1d(intents)])
        return T.embedding(self.params["intent"], idx)

    def memory(self, batch: Batch) -> Memory:
        Z, z_pad = self.encode_exemplar(batch)
        return Memory(self.encode_code(batch), Z, z_pad, self.intent_embed(batch.intents))

    # decoder ----------------------------------------------------------------
    def _with_intent(self, S, E):
        b, ty, _ = S.shape
        Eb = T.broadcast_to(T.reshape(E, (b, 1, E.shape[-1])), (b, ty, E.shape[-1]))
        return T.concat([S, Eb], axis=-1)

    def decoder_block(self, n, S, mem: Memory, self_mask, trace=False):
        cfg, P, drop = self.cfg, self.params, self.drop
        p = f"dec.block{n}"
        S1 = norm(P, f"{p}.norm1", S + drop(mha(P, f"{p}.self", S, S, cfg.heads, self_mask)))
        Q1 = self._with_intent(S1, mem.E)
        c = mem.code
        O_isa, weights = isa_forward(Q1, c.X_tok, c.X_sta, c.seg_ids, cfg.isa, P,
                                     f"{p}.isa", c.stmt_valid, trace)
        O_mha = mha(P, f"{p}.cross", Q1, mem.Z, cfg.heads, mem.z_pad[:, None, None, :])
        beta = T.sigmoid(linear(P, f"{p}.gate", T.concat([O_isa, O_mha], axis=-1)))
        S2 = drop(O_mha + beta * (O_isa - O_mha))
        S_n = norm(P, f"{p}.norm2", S2 + drop(ffn(P, f"{p}.ffn", S2)))
        return S_n, beta, weights

    def decode(self, dec_in, mem: Memory, trace=False):
        """Final decoder states for teacher-forced inputs ``dec_in [B, Ty]``."""
        ty = dec_in.shape[1]
        pad = dec_in == PAD_ID
        pad[:, 0] = False
        self_mask = causal_mask(ty)[None, None] | pad[:, None, None, :]
        S = embed(self.params, "dec", dec_in, self.pe, self.drop)
        betas, weights = [], []
        for n in range(self.cfg.blocks):
            S, beta, w = self.decoder_block(n, S, mem, self_mask, trace)
            betas.append(beta.data[..., 0])
            weights.append(w)
        return S, betas, weights

    def project_output(self, S, E):
        return linear(self.params, "out", self._with_intent(S, E))

    def logits(self, batch: Batch, trace=False):
        mem = self.memory(batch)
        S, betas, weights = self.decode(batch.dec_in, mem, trace)
        return self.project_output(S, mem.E), betas, weights

    def loss(self, batch: Batch) -> T.Tensor:
        """Mean token cross-entropy over non-PAD target positions."""
        logits, _, _ = self.logits(batch)
        return T.cross_entropy(logits, batch.targets, batch.tgt_valid)

    def step_logprobs(self, prefixes: np.ndarray, mem: Memory) -> np.ndarray:
        """Log-probabilities of the next token after each prefix row ``[n, t]``."""
        with T.no_grad():
            S, _, _ = self.decode(prefixes, mem)
            logits = self.project_output(S, mem.E).data[:, -1]
        m = logits.max(axis=-1, keepdims=True)
        return logits - m - np.log(np.exp(logits - m).sum(axis=-1, keepdims=True))

    def attention_traces(self, example: Example, steps: list[int]):
        """Per-block/head/step attention for one example.

        ``steps`` are the emitted token ids (including a final EOS if one was
        produced); trace step j is the position that emitted ``steps[j]``.
        """
        ex = Example(example.code, example.intent, example.exemplar, list(steps[:-1]))
        batch = collate([ex])
        with T.no_grad():
            _, betas, weights = self.logits(batch, trace=True)
        segments = list(example.code.segments)
        traces = []
        for n, w in enumerate(weights):
            traces.extend(build_traces(n, w, segments, betas[n][0]))
        return traces
