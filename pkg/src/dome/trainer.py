"""Training loops, the model bundle, and checkpoint persistence."""

from __future__ import annotations

import dataclasses
import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .checkpoint import read_archive, write_archive
from .corpus import (GENERATABLE, CodeCommentRecord, IntentCategory, PreprocessedCode,
                     Vocabulary, build_vocab, detokenize, encode_comment, filter_others,
                     preprocess_code, tokenize)
from .decoding import greedy_decode
from .errors import ConfigError, CorruptCheckpoint, EmptyInput, NoExemplar, StateError
from .model import Batch, DomeModel, Example, ModelConfig, collate
from .params import Adam, clip_grad_norm
from .retriever import (BiEncoder, BiEncoderConfig, Exemplar, Partition, RetrievalIndex,
                        build_dense_index, build_lexical_index, lexical_retrieve, retrieve,
                        train_biencoder)

log = logging.getLogger(__name__)


def _from_dict(cls, data: dict, what: str):
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown {what} keys: {sorted(unknown)}")
    try:
        return cls(**data)
    except TypeError as exc:
        raise ConfigError(f"bad {what}: {exc}") from None


@dataclass
class TrainConfig:
    batch_size: int = 64
    epochs: int = 10
    lr: float = 1e-4
    seed: int = 0
    retriever: str = "dense"
    clip_norm: float = 1.0
    max_statements: int = 32
    max_statement_len: int = 16
    code_vocab_size: int = 50_000
    comment_vocab_size: int = 50_000
    model: dict = field(default_factory=dict)
    biencoder: dict = field(default_factory=dict)
    checkpoint: str | None = None
    sample_every: int = 0

    def __post_init__(self):
        if self.batch_size < 1 or self.epochs < 1:
            raise ConfigError("batch_size and epochs must be >= 1")
        if self.retriever not in ("dense", "lexical"):
            raise ConfigError(f"retriever must be 'dense' or 'lexical', got {self.retriever!r}")

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        return _from_dict(cls, data, "train config")

    @classmethod
    def from_json(cls, path) -> "TrainConfig":
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict(data)

    def to_json(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class ModelBundle:
    """Everything generation needs: network, vocabularies, retrieval index and retriever."""
    model: DomeModel
    code_vocab: Vocabulary
    comment_vocab: Vocabulary
    index: RetrievalIndex
    config: TrainConfig
    biencoder: BiEncoder | None = None
    optimizer: Adam | None = None
    epoch: int = 0
    history: list = field(default_factory=list)

    def preprocess(self, code: str) -> PreprocessedCode:
        return preprocess_code(code, self.code_vocab, self.config.max_statements,
                               self.config.max_statement_len)

    def find_exemplar(self, code: str, pre: PreprocessedCode, intent, exclude_id=None) -> Exemplar | None:
        try:
            if self.index.kind == "dense":
                return retrieve(self.biencoder.embed_code(pre.token_ids), intent, self.index, exclude_id)
            return lexical_retrieve(tokenize(code), intent, self.index, exclude_id)
        except NoExemplar:
            return None

    def make_example(self, code: str, intent, comment: str | None = None,
                     record_id: int | None = None, exclude_id=None) -> Example:
        intent = IntentCategory.parse(intent)
        pre = self.preprocess(code)
        ex = self.find_exemplar(code, pre, intent, exclude_id)
        max_len = self.model.cfg.max_comment_len
        return Example(
            code=pre, intent=intent,
            exemplar=encode_comment(ex.comment, self.comment_vocab, max_len) if ex else [],
            target=None if comment is None else encode_comment(comment, self.comment_vocab, max_len),
            record_id=record_id, exemplar_id=ex.source_id if ex else None,
        )

    def detokenize(self, ids) -> str:
        return detokenize(ids, self.comment_vocab)


# ---------------------------------------------------------------------------
# batching and the loss

def make_batches(examples: list[Example], batch_size: int, seed: int, epoch: int = 0) -> list[Batch]:
    """Shuffle by ``(seed, epoch)`` and collate consecutive chunks."""
    if not examples:
        raise EmptyInput("no examples to batch")
    order = np.random.default_rng([seed, epoch]).permutation(len(examples))
    return [collate([examples[i] for i in order[s:s + batch_size]])
            for s in range(0, len(examples), batch_size)]


def teacher_forcing_step(batch: Batch, model: DomeModel) -> T.Tensor:
    return model.loss(batch)


# ---------------------------------------------------------------------------
# training

def _build_retriever(records, code_vocab, comment_vocab, cfg: TrainConfig, pres):
    if cfg.retriever == "lexical":
        return build_lexical_index(records, [tokenize(r.code) for r in records]), None
    bcfg = _from_dict(BiEncoderConfig, dict({"seed": cfg.seed}, **cfg.biencoder), "biencoder config")
    pairs = [(pre.token_ids, comment_vocab.encode(tokenize(r.comment))) for r, pre in zip(records, pres)]
    enc, hist = train_biencoder(pairs, bcfg, len(code_vocab), len(comment_vocab))
    log.info("bi-encoder loss %.4f -> %.4f", hist[0], hist[-1])
    vectors = enc.embed("code", [p.token_ids for p in pres])
    return build_dense_index(records, vectors, enc.tag), enc


def build_bundle(corpus, cfg: TrainConfig) -> ModelBundle:
    """Vocabularies, retriever and a freshly initialised model for ``corpus``."""
    records = filter_others(corpus)
    if not records:
        raise EmptyInput("no trainable records (empty corpus or all 'others')")
    if any(r.intent is None for r in records):
        raise ConfigError("training records must carry an intent")
    code_vocab = build_vocab(records, "code", cfg.code_vocab_size)
    comment_vocab = build_vocab(records, "comment", cfg.comment_vocab_size)
    pres = [preprocess_code(r.code, code_vocab, cfg.max_statements, cfg.max_statement_len) for r in records]
    index, enc = _build_retriever(records, code_vocab, comment_vocab, cfg, pres)
    overrides = dict(cfg.model)
    overrides.setdefault("max_code_len", cfg.max_statements * cfg.max_statement_len)
    mcfg = _from_dict(ModelConfig, dict(code_vocab_size=len(code_vocab),
                                        comment_vocab_size=len(comment_vocab), **overrides), "model config")
    model = DomeModel(mcfg, seed=cfg.seed)
    return ModelBundle(model, code_vocab, comment_vocab, index, cfg, enc,
                       Adam(model.params, lr=cfg.lr))


def training_examples(bundle: ModelBundle, records) -> list[Example]:
    """Examples with exemplars retrieved under self-exclusion."""
    return [bundle.make_example(r.code, r.intent, r.comment, r.id, exclude_id=r.id)
            for r in records]


def train_epoch(bundle: ModelBundle, examples, epoch: int) -> float:
    cfg, model = bundle.config, bundle.model
    model.train(np.random.default_rng([cfg.seed, epoch, 5]))
    total = tokens = 0.0
    for batch in make_batches(examples, cfg.batch_size, cfg.seed, epoch):
        model.params.zero_grad()
        loss = teacher_forcing_step(batch, model)
        T.backward(loss)
        clip_grad_norm(model.params, cfg.clip_norm)
        bundle.optimizer.step()
        n = float(batch.tgt_valid.sum())
        total += float(loss.data) * n
        tokens += n
    model.eval()
    return total / tokens


def train_dome(corpus, cfg: TrainConfig, resume: ModelBundle | None = None):
    """Teacher-forced training; returns the bundle and the per-epoch mean token loss.

    At every epoch boundary parameters and optimizer moments are rounded to
    float32, so that resuming from the (float32) checkpoint reproduces an
    uninterrupted run exactly.
    """
    records = filter_others(corpus)
    bundle = resume if resume is not None else build_bundle(records, cfg)
    if resume is not None:
        bundle.config = cfg
    if not records:
        raise EmptyInput("no trainable records")
    examples = training_examples(bundle, records)
    for epoch in range(bundle.epoch + 1, cfg.epochs + 1):
        loss = train_epoch(bundle, examples, epoch)
        bundle.model.params.snap_float32()
        bundle.optimizer.snap_float32()
        bundle.epoch = epoch
        bundle.history.append(loss)
        log.info("epoch %d loss %.5f", epoch, loss)
        if cfg.sample_every and epoch % cfg.sample_every == 0:
            hyp = greedy_decode(bundle.model, examples[0])
            log.info("sample: %s", bundle.detokenize(hyp.tokens))
        if cfg.checkpoint:
            save_checkpoint(bundle, cfg.checkpoint)
    return bundle, list(bundle.history)


# ---------------------------------------------------------------------------
# persistence

def _index_manifest(index: RetrievalIndex):
    parts, blocks = {}, {}
    for intent in sorted(index.partitions, key=lambda i: i.index):
        p = index.partitions[intent]
        entry = {"ids": p.ids, "comments": p.comments}
        if index.kind == "dense":
            blocks[f"index.{intent.value}"] = p.vectors.reshape(len(p.ids), index.dim)
        else:
            entry["bags"] = [dict(sorted(b.items())) for b in p.bags]
        parts[intent.value] = entry
    return {"kind": index.kind, "dim": index.dim, "encoder_tag": index.encoder_tag,
            "partitions": parts}, blocks


def _index_from_manifest(meta, blocks) -> RetrievalIndex:
    parts = {}
    # taxonomy order, so a reloaded index saves back to identical bytes
    for name, entry in sorted(meta["partitions"].items(), key=lambda kv: IntentCategory.parse(kv[0]).index):
        p = Partition(list(entry["ids"]), list(entry["comments"]))
        if meta["kind"] == "dense":
            p.vectors = blocks[f"index.{name}"].reshape(len(p.ids), meta["dim"])
        else:
            p.bags = [Counter(b) for b in entry["bags"]]
        parts[IntentCategory.parse(name)] = p
    return RetrievalIndex(meta["kind"], parts, meta["dim"], meta["encoder_tag"])


def save_checkpoint(bundle: ModelBundle, path) -> None:
    index_meta, blocks = _index_manifest(bundle.index)
    for name, arr in bundle.model.params.arrays().items():
        blocks[f"model.{name}"] = arr
    manifest = {
        "kind": "dome",
        "model_config": bundle.model.cfg.to_json(),
        "train_config": bundle.config.to_json(),
        "seed": bundle.config.seed,
        "epoch": bundle.epoch,
        "history": bundle.history,
        "vocabs": {"code": list(bundle.code_vocab.tokens), "code_max": bundle.code_vocab.max_size,
                   "comment": list(bundle.comment_vocab.tokens),
                   "comment_max": bundle.comment_vocab.max_size},
        "index": index_meta,
    }
    if bundle.biencoder is not None:
        manifest["biencoder"] = {"config": dataclasses.asdict(bundle.biencoder.cfg),
                                 "vocab_sizes": list(bundle.biencoder.vocab_sizes)}
        for name, arr in bundle.biencoder.params.arrays().items():
            blocks[f"biencoder.{name}"] = arr
    opt = bundle.optimizer
    if opt is not None:
        manifest["optimizer"] = {"t": opt.t, "lr": opt.lr, "beta1": opt.beta1,
                                 "beta2": opt.beta2, "eps": opt.eps}
        for name in opt.m:
            blocks[f"optim.m.{name}"] = opt.m[name]
            blocks[f"optim.v.{name}"] = opt.v[name]
    write_archive(path, manifest, blocks)


def _strip(blocks, prefix):
    return {k[len(prefix):]: v for k, v in blocks.items() if k.startswith(prefix)}


def load_checkpoint(path) -> ModelBundle:
    manifest, blocks = read_archive(path)
    if manifest.get("kind") != "dome":
        raise CorruptCheckpoint(f"{path}: not a comment-generation checkpoint")
    try:
        cfg = TrainConfig.from_dict(manifest["train_config"])
        model = DomeModel(ModelConfig(**manifest["model_config"]), seed=cfg.seed)
        model.params.load_arrays(_strip(blocks, "model."))
        v = manifest["vocabs"]
        code_vocab = Vocabulary(tuple(v["code"]), v["code_max"])
        comment_vocab = Vocabulary(tuple(v["comment"]), v["comment_max"])
        index = _index_from_manifest(manifest["index"], blocks)
        enc = None
        if "biencoder" in manifest:
            b = manifest["biencoder"]
            enc = BiEncoder(BiEncoderConfig(**b["config"]), *b["vocab_sizes"])
            enc.params.load_arrays(_strip(blocks, "biencoder."))
        opt = None
        if "optimizer" in manifest:
            o = manifest["optimizer"]
            opt = Adam(model.params, o["lr"], o["beta1"], o["beta2"], o["eps"])
            opt.t = o["t"]
            opt.m = {n: a.copy() for n, a in _strip(blocks, "optim.m.").items()}
            opt.v = {n: a.copy() for n, a in _strip(blocks, "optim.v.").items()}
            if set(opt.m) != set(model.params) or set(opt.v) != set(model.params):
                raise CorruptCheckpoint(f"{path}: optimizer state does not match parameters")
    except (KeyError, TypeError, ValueError, StateError) as exc:
        if isinstance(exc, CorruptCheckpoint):
            raise
        raise CorruptCheckpoint(f"{path}: inconsistent checkpoint ({exc})") from None
    return ModelBundle(model, code_vocab, comment_vocab, index, cfg, enc, opt,
                       manifest["epoch"], list(manifest["history"]))
