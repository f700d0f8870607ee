"""End-to-end generation and evaluation over a trained :class:`ModelBundle`."""

from __future__ import annotations

from dataclasses import dataclass, field

from .corpus import CodeCommentRecord, IntentCategory, tokenize
from .decoding import beam_search, greedy_decode, prepare
from .errors import EmptyInput, InvalidIntent
from .isa import AttentionTrace
from .metrics import MetricReport, corpus_report
from .trainer import ModelBundle


@dataclass
class Generation:
    comment: str
    intent: IntentCategory
    exemplar_id: int | None
    score: float
    steps: list[int] = field(default_factory=list)
    traces: list[AttentionTrace] | None = None

    def to_json(self) -> dict:
        return {"comment": self.comment, "intent": self.intent.value,
                "exemplar_id": self.exemplar_id, "score": self.score}


def generate(code: str, intent, bundle: ModelBundle, beam_size: int | None = None,
             trace: bool = False, exclude_id: int | None = None) -> Generation:
    """Retrieve an exemplar for ``intent``, then beam-decode a comment for ``code``.

    An empty intent partition is not an error: decoding proceeds with the
    learned null exemplar. ``exclude_id`` keeps a record out of retrieval,
    which is how training pairs see their exemplars; pass it when generating
    for code that is itself in the index.
    """
    if not code.strip():
        raise EmptyInput("code is empty")
    intent = IntentCategory.parse(intent)
    if intent.is_noise:
        raise InvalidIntent(f"comments cannot be generated for intent {intent.value!r}")
    example = bundle.make_example(code, intent, exclude_id=exclude_id)
    model = bundle.model
    mem = prepare(model, example)
    beam = model.cfg.beam_size if beam_size is None else beam_size
    hyp = (greedy_decode(model, example, mem) if beam == 1
           else beam_search(model, example, beam, mem))
    traces = None
    if trace:
        traces = model.attention_traces(example, hyp.steps)
    return Generation(bundle.detokenize(hyp.tokens), intent, example.exemplar_id,
                      hyp.score, list(hyp.steps), traces)


def evaluate(bundle: ModelBundle, records: list[CodeCommentRecord], beam_size: int | None = None) -> MetricReport:
    """Generate for every record that has a generatable intent and score against its comment."""
    usable = [r for r in records if r.intent is not None and not r.intent.is_noise]
    if not usable:
        raise EmptyInput("no test records with a generatable intent")
    cands, refs, intents = [], [], []
    for rec in usable:
        out = generate(rec.code, rec.intent, bundle, beam_size)
        cands.append(out.comment.split())
        refs.append(tokenize(rec.comment))
        intents.append(rec.intent.value)
    return corpus_report(cands, refs, intents)
