"""Greedy and beam-search decoding for :class:`~dome.model.DomeModel`.

Scores are length-normalised: total log-probability divided by the number of
emitted tokens, where a final EOS counts as a token.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .corpus import BOS_ID, EOS_ID
from .errors import ConfigError
from .model import DomeModel, Example, Memory, collate


@dataclass
class Hypothesis:
    steps: list[int]          # emitted ids, EOS included when produced
    logprob: float

    @property
    def tokens(self) -> list[int]:
        return self.steps[:-1] if self.steps and self.steps[-1] == EOS_ID else list(self.steps)

    @property
    def finished(self) -> bool:
        return bool(self.steps) and self.steps[-1] == EOS_ID

    @property
    def score(self) -> float:
        return self.logprob / max(len(self.steps), 1)


def prepare(model: DomeModel, example: Example) -> Memory:
    model.eval()
    with T.no_grad():
        return model.memory(collate([example]))


def greedy_decode(model: DomeModel, example: Example, memory: Memory | None = None,
                  max_len: int | None = None) -> Hypothesis:
    mem = memory or prepare(model, example)
    max_len = max_len or model.cfg.max_comment_len
    steps, total = [], 0.0
    for _ in range(max_len):
        logp = model.step_logprobs(np.array([[BOS_ID] + steps]), mem)[0]
        tok = int(np.argmax(logp))
        steps.append(tok)
        total += float(logp[tok])
        if tok == EOS_ID:
            break
    return Hypothesis(steps, total)


def _better(a: Hypothesis, b: Hypothesis) -> bool:
    if a.score != b.score:
        return a.score > b.score
    return a.steps < b.steps


def beam_search(model: DomeModel, example: Example, beam_size: int | None = None,
                memory: Memory | None = None, max_len: int | None = None) -> Hypothesis:
    """Beam search keeping the ``beam_size`` best prefixes by cumulative log-probability.

    A prefix that emits EOS is retired; the search ends when no live prefix is
    left or the length cap is reached. The retired or capped hypothesis with
    the best normalised score wins (ties: smaller token-id sequence).
    """
    beam_size = model.cfg.beam_size if beam_size is None else beam_size
    if beam_size < 1:
        raise ConfigError("beam_size must be >= 1")
    mem = memory or prepare(model, example)
    max_len = max_len or model.cfg.max_comment_len
    live = [Hypothesis([], 0.0)]
    done: list[Hypothesis] = []
    for step in range(max_len):
        prefixes = np.array([[BOS_ID] + h.steps for h in live])
        logp = model.step_logprobs(prefixes, mem.repeat(len(live)))
        vocab = logp.shape[1]
        cand = np.array([h.logprob for h in live])[:, None] + logp
        flat = cand.reshape(-1)
        # descending total; ties -> lower (prefix rank, token id)
        order = np.lexsort((np.arange(flat.size), -flat))[:beam_size]
        nxt = []
        for idx in order:
            h, tok = live[idx // vocab], int(idx % vocab)
            new = Hypothesis(h.steps + [tok], float(flat[idx]))
            (done if tok == EOS_ID else nxt).append(new)
        live = nxt
        if not live:
            break
    done.extend(live)
    best = done[0]
    for h in done[1:]:
        if _better(h, best):
            best = h
    return best


def sequence_logprob(model: DomeModel, example: Example, steps: list[int]) -> float:
    """Teacher-forced log-probability of an emitted step sequence."""
    mem = prepare(model, example)
    prefix = np.array([[BOS_ID] + list(steps[:-1])])
    with T.no_grad():
        S, _, _ = model.decode(prefix, mem)
        logits = model.project_output(S, mem.E).data[0]
    m = logits.max(axis=-1, keepdims=True)
    logp = logits - m - np.log(np.exp(logits - m).sum(axis=-1, keepdims=True))
    return float(sum(logp[j, t] for j, t in enumerate(steps)))
