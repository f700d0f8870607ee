"""Corpus records, preprocessing and vocabulary."""

from __future__ import annotations

import enum
import json
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .errors import ConfigError, CorpusFormatError, EmptyInput, InvalidIntent


class IntentCategory(enum.Enum):
    WHAT = "what"
    WHY = "why"
    HOW_TO_USE = "how-to-use"
    HOW_IT_IS_DONE = "how-it-is-done"
    PROPERTY = "property"
    OTHERS = "others"

    @classmethod
    def parse(cls, label: str) -> "IntentCategory":
        if isinstance(label, cls):
            return label
        try:
            return cls(str(label).strip().lower())
        except ValueError:
            raise InvalidIntent(f"unknown intent label {label!r}") from None

    @property
    def is_noise(self) -> bool:
        return self is IntentCategory.OTHERS

    @property
    def index(self) -> int:
        return _INTENT_ORDER.index(self)


_INTENT_ORDER = list(IntentCategory)
# Intents a comment can be generated for (noise excluded).
GENERATABLE = tuple(i for i in IntentCategory if not i.is_noise)


@dataclass(frozen=True)
class CodeCommentRecord:
    code: str
    comment: str
    intent: IntentCategory | None
    id: int

    def __post_init__(self):
        if not self.code.strip():
            raise EmptyInput(f"record {self.id}: empty code")
        if not self.comment.strip():
            raise EmptyInput(f"record {self.id}: empty comment")

    def to_json(self) -> dict:
        out = {"id": self.id, "code": self.code, "comment": self.comment}
        if self.intent is not None:
            out["intent"] = self.intent.value
        return out


def read_corpus(path, require_intent: bool = True) -> list[CodeCommentRecord]:
    """Read a JSONL corpus; ids default to the 0-based line position."""
    with open(path, encoding="utf-8") as fh:
        return parse_corpus(fh, require_intent=require_intent)


def parse_corpus(lines: Iterable[str], require_intent: bool = True) -> list[CodeCommentRecord]:
    records = []
    seen = set()
    position = 0
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise CorpusFormatError(f"invalid JSON ({exc.msg})", lineno) from None
        if not isinstance(obj, dict):
            raise CorpusFormatError("expected a JSON object", lineno)
        for key in ("code", "comment"):
            if not isinstance(obj.get(key), str):
                raise CorpusFormatError(f"missing or non-string {key!r}", lineno)
        intent = None
        if obj.get("intent") is not None:
            try:
                intent = IntentCategory.parse(obj["intent"])
            except InvalidIntent as exc:
                raise CorpusFormatError(str(exc), lineno) from None
        elif require_intent:
            raise CorpusFormatError("missing 'intent'", lineno)
        rid = obj.get("id", position)
        if isinstance(rid, bool) or not isinstance(rid, int):
            raise CorpusFormatError(f"id must be an integer, got {rid!r}", lineno)
        if rid in seen:
            raise CorpusFormatError(f"duplicate id {rid}", lineno)
        seen.add(rid)
        try:
            records.append(CodeCommentRecord(obj["code"], obj["comment"], intent, rid))
        except EmptyInput as exc:
            raise CorpusFormatError(str(exc), lineno) from None
        position += 1
    return records


def write_corpus(records: Iterable[CodeCommentRecord], path) -> int:
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_json(), ensure_ascii=False) + "\n")
            n += 1
    return n


# ---------------------------------------------------------------------------
# text processing

_STATEMENT_END = re.compile(r"(?<=;)")
_CHUNK = re.compile(r"[^\W_]+|_|[^\w\s]")
_CAMEL = re.compile(r"(?<=[a-z0-9])(?=[A-Z])")


def split_statements(code: str) -> list[str]:
    """Split on newlines and after every semicolon; blank pieces are dropped.

    Braces are not split off: a line holding only ``}`` is its own statement,
    while ``if (p) {`` keeps its brace.
    """
    if not code.strip():
        raise EmptyInput("code is empty")
    out = []
    for line in code.splitlines():
        for piece in _STATEMENT_END.split(line):
            piece = piece.strip()
            if piece:
                out.append(piece)
    return out


def tokenize(text: str) -> list[str]:
    """Lowercased tokens split on whitespace, punctuation and lower-to-upper humps."""
    tokens = []
    for chunk in _CHUNK.findall(text):
        for part in _CAMEL.split(chunk):
            if part:
                tokens.append(part.lower())
    return tokens


# ---------------------------------------------------------------------------
# vocabulary

PAD, UNK, CLS, SEP, BOS, EOS = "[PAD]", "[UNK]", "[CLS]", "[SEP]", "[BOS]", "[EOS]"
RESERVED = (PAD, UNK, CLS, SEP, BOS, EOS)
PAD_ID, UNK_ID, CLS_ID, SEP_ID, BOS_ID, EOS_ID = range(6)


@dataclass(frozen=True)
class Vocabulary:
    tokens: tuple[str, ...]
    max_size: int = 50_000
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if tuple(self.tokens[: len(RESERVED)]) != RESERVED:
            raise ConfigError("vocabulary must start with the reserved tokens")
        if len(self.tokens) > self.max_size:
            raise ConfigError("vocabulary exceeds max_size")
        index = {tok: i for i, tok in enumerate(self.tokens)}
        if len(index) != len(self.tokens):
            raise ConfigError("duplicate tokens in vocabulary")
        object.__setattr__(self, "_index", index)

    def __len__(self):
        return len(self.tokens)

    def __contains__(self, token):
        return token in self._index

    def id(self, token: str) -> int:
        return self._index.get(token, UNK_ID)

    def encode(self, tokens: Sequence[str]) -> list[int]:
        return [self._index.get(t, UNK_ID) for t in tokens]

    def decode(self, ids: Sequence[int]) -> list[str]:
        return [self.tokens[i] for i in ids]

    def save(self, path) -> None:
        Path(path).write_text("\n".join(self.tokens) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path, max_size: int | None = None) -> "Vocabulary":
        tokens = tuple(Path(path).read_text(encoding="utf-8").splitlines())
        return cls(tokens, max_size or max(len(tokens), len(RESERVED)))


def side_tokens(record: CodeCommentRecord, side: str) -> list[str]:
    if side == "code":
        return tokenize(record.code)
    if side == "comment":
        return tokenize(record.comment)
    if side == "both":
        return tokenize(record.comment) + tokenize(record.code)
    raise ConfigError(f"unknown vocabulary side {side!r}")


def build_vocab(corpus: Sequence[CodeCommentRecord], side: str, max_size: int = 50_000) -> Vocabulary:
    """Frequency-ranked vocabulary (ties lexicographic) after the reserved ids."""
    if not corpus:
        raise EmptyInput("cannot build a vocabulary from an empty corpus")
    if max_size <= len(RESERVED):
        raise ConfigError(f"max_size must exceed {len(RESERVED)}")
    counts = Counter()
    for rec in corpus:
        counts.update(side_tokens(rec, side))
    for tok in RESERVED:
        counts.pop(tok, None)
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    keep = [tok for tok, _ in ranked[: max_size - len(RESERVED)]]
    return Vocabulary(RESERVED + tuple(keep), max_size)


@dataclass(frozen=True)
class PreprocessedCode:
    token_ids: tuple[int, ...]
    segments: tuple[tuple[int, int], ...]

    @property
    def L(self) -> int:
        return len(self.segments)

    def segment_ids(self) -> list[int]:
        out = []
        for l, (s, e) in enumerate(self.segments):
            out.extend([l] * (e - s))
        return out


def preprocess_code(code: str, vocab: Vocabulary, max_statements: int = 32,
                    max_statement_len: int = 16) -> PreprocessedCode:
    if max_statement_len < 2 or max_statements < 1:
        raise ConfigError("need max_statement_len >= 2 and max_statements >= 1")
    ids: list[int] = []
    segments = []
    for stmt in split_statements(code):
        toks = tokenize(stmt)
        if not toks:
            continue
        if len(segments) == max_statements:
            break
        start = len(ids)
        ids.extend(vocab.encode(toks[: max_statement_len - 1]))
        ids.append(SEP_ID)
        segments.append((start, len(ids)))
    if not segments:
        raise EmptyInput("code has no statements after preprocessing")
    return PreprocessedCode(tuple(ids), tuple(segments))


def encode_comment(comment: str, vocab: Vocabulary, max_len: int) -> list[int]:
    return vocab.encode(tokenize(comment)[:max_len])


def detokenize(ids: Sequence[int], vocab: Vocabulary) -> str:
    return " ".join(vocab.tokens[i] for i in ids if i >= len(RESERVED))


# ---------------------------------------------------------------------------
# corpus-level utilities

def filter_others(corpus: Sequence[CodeCommentRecord]) -> list[CodeCommentRecord]:
    return [r for r in corpus if r.intent is not IntentCategory.OTHERS]


def intent_distribution(corpus) -> dict[IntentCategory, tuple[int, float]]:
    """Count and proportion per intent. Accepts records or a ready-made count mapping."""
    if isinstance(corpus, dict):
        counts = Counter({IntentCategory.parse(k): int(v) for k, v in corpus.items()})
    else:
        if any(r.intent is None for r in corpus):
            raise InvalidIntent("intent_distribution needs labelled records")
        counts = Counter(r.intent for r in corpus)
    total = sum(counts.values())
    if total == 0:
        raise EmptyInput("empty corpus")
    return {i: (counts[i], counts[i] / total) for i in IntentCategory}
