"""Comment-intent classifier used to auto-label code/comment corpora.

Input is ``[CLS] comment [SEP] code [SEP]`` over a shared vocabulary; the
final ``[CLS]`` state goes through a two-layer ReLU MLP and a softmax over the
six intent categories.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .checkpoint import read_archive, write_archive
from .corpus import (CLS_ID, PAD_ID, SEP_ID, CodeCommentRecord, IntentCategory, Vocabulary,
                     build_vocab, tokenize)
from .errors import ConfigError, CorruptCheckpoint, EmptyInput, StateError
from .layers import Dropout, encoder_forward, init_encoder, linear
from .model import pad_rows
from .params import Adam, ParameterStore, clip_grad_norm

INTENTS = list(IntentCategory)
N_CLASSES = len(INTENTS)


@dataclass
class ClassifierConfig:
    d_model: int = 64
    heads: int = 4
    blocks: int = 2
    ffn_mult: int = 2
    mlp_hidden: int = 64
    classes: int = N_CLASSES
    max_seq_len: int = 64
    dropout: float = 0.1
    lr: float = 1e-3
    batch_size: int = 32
    epochs: int = 8
    vocab_size: int = 50_000
    clip_norm: float = 1.0

    def __post_init__(self):
        if self.classes != N_CLASSES:
            raise ConfigError(f"the intent taxonomy has exactly {N_CLASSES} classes")
        if self.d_model % self.heads or self.d_model % 2:
            raise ConfigError("d_model must be even and divisible by heads")
        if self.max_seq_len < 3:
            raise ConfigError("max_seq_len must leave room for [CLS] and two [SEP]")


def build_classifier_input(comment_tokens, code_tokens, vocab: Vocabulary, max_seq_len: int) -> list[int]:
    """``[CLS] comment [SEP] code [SEP]``, cutting the code side first when too long."""
    budget = max_seq_len - 3
    comment = vocab.encode(comment_tokens)[:budget]
    code = vocab.encode(code_tokens)[: budget - len(comment)]
    return [CLS_ID] + comment + [SEP_ID] + code + [SEP_ID]


class IntentClassifier:
    def __init__(self, cfg: ClassifierConfig, vocab: Vocabulary, seed: int = 0):
        self.cfg = cfg
        self.vocab = vocab
        self.seed = seed
        self.params = ParameterStore()
        rng = np.random.default_rng([seed, 13])
        init_encoder(self.params, "enc", rng, len(vocab), cfg.d_model, cfg.heads, cfg.blocks, cfg.ffn_mult)
        self.params.linear("mlp.hidden", rng, cfg.d_model, cfg.mlp_hidden)
        self.params.linear("mlp.out", rng, cfg.mlp_hidden, cfg.classes, zero=True)
        self.pe = T.sinusoidal_pe(cfg.max_seq_len, cfg.d_model)
        self.drop = Dropout(cfg.dropout, False, np.random.default_rng([seed, 17]))

    def encode(self, record: CodeCommentRecord) -> list[int]:
        return build_classifier_input(tokenize(record.comment), tokenize(record.code),
                                      self.vocab, self.cfg.max_seq_len)

    def logits(self, seqs) -> T.Tensor:
        ids = pad_rows(seqs, max(map(len, seqs)), PAD_ID)
        pad = ids == PAD_ID
        h = encoder_forward(self.params, "enc", ids, pad, self.cfg.heads, self.cfg.blocks,
                            self.pe, self.drop)
        cls = h[:, 0, :]
        hidden = self.drop(T.relu(linear(self.params, "mlp.hidden", cls)))
        return linear(self.params, "mlp.out", hidden)

    def loss(self, seqs, labels) -> T.Tensor:
        return T.cross_entropy(self.logits(seqs), np.asarray(labels))

    def classify(self, ids) -> np.ndarray:
        """Probability vector over the six intents for one id sequence."""
        return self.predict_proba([ids])[0]

    def predict_proba(self, seqs, batch_size: int = 128) -> np.ndarray:
        self.drop.training = False
        out = []
        with T.no_grad():
            for i in range(0, len(seqs), batch_size):
                out.append(T.softmax(self.logits(seqs[i:i + batch_size]), axis=-1).data)
        return np.concatenate(out) if out else np.zeros((0, N_CLASSES))

    def predict(self, records) -> list[IntentCategory]:
        probs = self.predict_proba([self.encode(r) for r in records])
        return [INTENTS[i] for i in probs.argmax(axis=1)]


def train_classifier(records, cfg: ClassifierConfig, seed: int = 0, vocab: Vocabulary | None = None):
    """Minibatch cross-entropy with Adam; returns the classifier and per-epoch mean loss."""
    if not records:
        raise EmptyInput("cannot train on an empty dataset")
    if any(r.intent is None for r in records):
        raise ConfigError("every training record needs an intent label")
    vocab = vocab or build_vocab(records, "both", cfg.vocab_size)
    clf = IntentClassifier(cfg, vocab, seed)
    seqs = [clf.encode(r) for r in records]
    labels = np.array([r.intent.index for r in records])
    opt = Adam(clf.params, lr=cfg.lr)
    history = []
    for epoch in range(cfg.epochs):
        rng = np.random.default_rng([seed, epoch, 19])
        order = rng.permutation(len(records))
        clf.drop.training = True
        total = 0.0
        for s in range(0, len(order), cfg.batch_size):
            idx = order[s:s + cfg.batch_size]
            clf.params.zero_grad()
            loss = clf.loss([seqs[i] for i in idx], labels[idx])
            T.backward(loss)
            clip_grad_norm(clf.params, cfg.clip_norm)
            opt.step()
            total += float(loss.data) * len(idx)
        history.append(total / len(records))
    clf.drop.training = False
    clf.params.snap_float32()
    return clf, history


def kfold_split(dataset, k: int, seed: int = 0) -> list[list]:
    """Shuffle by ``seed`` and cut into ``k`` folds whose sizes differ by at most one."""
    if k < 2:
        raise ConfigError("k must be >= 2")
    if k > len(dataset):
        raise ConfigError(f"cannot split {len(dataset)} items into {k} folds")
    order = np.random.default_rng(seed).permutation(len(dataset))
    return [[dataset[i] for i in part] for part in np.array_split(order, k)]


@dataclass
class EvaluationReport:
    per_class: dict
    macro_precision: float
    macro_recall: float
    macro_f1: float
    confusion: list = field(default_factory=list)

    @property
    def accuracy(self) -> float:
        c = np.asarray(self.confusion)
        return float(np.trace(c) / c.sum()) if c.sum() else 0.0

    def to_json(self) -> dict:
        return dict(dataclasses.asdict(self), accuracy=self.accuracy,
                    classes=[i.value for i in INTENTS])


def report_from_predictions(y_true, y_pred) -> EvaluationReport:
    """Per-class and macro P/R/F1 over all six classes; 0 wherever a denominator is 0."""
    conf = np.zeros((N_CLASSES, N_CLASSES), dtype=np.int64)
    for t, p in zip(y_true, y_pred):
        conf[IntentCategory.parse(t).index, IntentCategory.parse(p).index] += 1
    per_class = {}
    ps, rs, fs = [], [], []
    for c, intent in enumerate(INTENTS):
        tp = conf[c, c]
        fp = conf[:, c].sum() - tp
        fn = conf[c, :].sum() - tp
        p = tp / (tp + fp) if tp + fp else 0.0
        r = tp / (tp + fn) if tp + fn else 0.0
        f = 2 * p * r / (p + r) if p + r else 0.0
        per_class[intent.value] = {"precision": float(p), "recall": float(r), "f1": float(f),
                                   "support": int(conf[c].sum())}
        ps.append(p)
        rs.append(r)
        fs.append(f)
    return EvaluationReport(per_class, float(np.mean(ps)), float(np.mean(rs)), float(np.mean(fs)),
                            conf.tolist())


def evaluate_classifier(clf: IntentClassifier, records) -> EvaluationReport:
    if not records:
        raise EmptyInput("empty test set")
    return report_from_predictions([r.intent for r in records], clf.predict(records))


def cross_validate(records, cfg: ClassifierConfig, k: int = 10, seed: int = 0):
    """k-fold evaluation; the vocabulary of each fold is built from its training part only."""
    folds = kfold_split(records, k, seed)
    reports = []
    for i, test in enumerate(folds):
        train = [r for j, f in enumerate(folds) if j != i for r in f]
        clf, _ = train_classifier(train, cfg, seed=seed + i)
        reports.append(evaluate_classifier(clf, test))
    return reports


def auto_label(records, clf: IntentClassifier) -> list[CodeCommentRecord]:
    """Assign the argmax intent to every record (``others`` included; filter downstream)."""
    labels = clf.predict(records) if records else []
    return [CodeCommentRecord(r.code, r.comment, lab, r.id) for r, lab in zip(records, labels)]


def save_classifier(clf: IntentClassifier, path, history=None) -> None:
    manifest = {"kind": "coin", "config": dataclasses.asdict(clf.cfg), "seed": clf.seed,
                "vocab": list(clf.vocab.tokens), "vocab_max": clf.vocab.max_size,
                "history": list(history or [])}
    write_archive(path, manifest, {f"model.{n}": a for n, a in clf.params.arrays().items()})


def load_classifier(path) -> IntentClassifier:
    manifest, blocks = read_archive(path)
    if manifest.get("kind") != "coin":
        raise CorruptCheckpoint(f"{path}: not an intent-classifier checkpoint")
    try:
        clf = IntentClassifier(ClassifierConfig(**manifest["config"]),
                               Vocabulary(tuple(manifest["vocab"]), manifest["vocab_max"]),
                               manifest["seed"])
        clf.params.load_arrays({k[6:]: v for k, v in blocks.items() if k.startswith("model.")})
    except (KeyError, TypeError, ValueError, StateError) as exc:
        raise CorruptCheckpoint(f"{path}: inconsistent checkpoint ({exc})") from None
    return clf
