"""Corpus BLEU, ROUGE-L and an exact-match METEOR.

METEOR here aligns identical unigrams only (no stemming or synonyms), so its
values are not comparable with the reference METEOR toolkit.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import asdict, dataclass, field

from .errors import ShapeError

METEOR_ALPHA = 0.9  # P*R / (alpha*P + (1-alpha)*R) leans on recall when alpha is large
METEOR_BETA = 3.0
METEOR_GAMMA = 0.5


def _ngrams(tokens, n):
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu(candidates, references, max_n: int = 4) -> float:
    """Corpus BLEU: pooled clipped n-gram precisions, uniform weights, brevity penalty, no smoothing.

    A zero pooled precision gives 0. An order for which the candidates hold no
    n-gram at all is dropped from the geometric mean instead of counting as 0/0.
    """
    if len(candidates) != len(references):
        raise ShapeError("candidates and references differ in length")
    if not candidates:
        raise ShapeError("empty corpus")
    matches = [0] * max_n
    totals = [0] * max_n
    c_len = r_len = 0
    for cand, ref in zip(candidates, references):
        c_len += len(cand)
        r_len += len(ref)
        for n in range(1, max_n + 1):
            cg, rg = _ngrams(cand, n), _ngrams(ref, n)
            matches[n - 1] += sum(min(c, rg[g]) for g, c in cg.items())
            totals[n - 1] += max(len(cand) - n + 1, 0)
    # orders with no candidate n-gram anywhere (every candidate shorter than n) are left out
    orders = [(m, t) for m, t in zip(matches, totals) if t > 0]
    if c_len == 0 or any(m == 0 for m, _ in orders):
        return 0.0
    log_p = sum(math.log(m / t) for m, t in orders) / len(orders)
    bp = 1.0 if c_len > r_len else math.exp(1.0 - r_len / c_len)
    return bp * math.exp(log_p)


def lcs_length(a, b) -> int:
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge_l(candidate, reference) -> float:
    if not candidate or not reference:
        raise ShapeError("ROUGE-L needs non-empty sequences")
    lcs = lcs_length(candidate, reference)
    if lcs == 0:
        return 0.0
    p, r = lcs / len(candidate), lcs / len(reference)
    return 2 * p * r / (p + r)


def _align(candidate, reference):
    """Greedy left-to-right exact matching; returns (cand_idx, ref_idx) pairs."""
    used = set()
    pairs = []
    for i, tok in enumerate(candidate):
        for j, ref_tok in enumerate(reference):
            if j not in used and ref_tok == tok:
                used.add(j)
                pairs.append((i, j))
                break
    return pairs


def meteor(candidate, reference, alpha=METEOR_ALPHA, beta=METEOR_BETA, gamma=METEOR_GAMMA) -> float:
    if not candidate or not reference:
        raise ShapeError("METEOR needs non-empty sequences")
    pairs = _align(candidate, reference)
    m = len(pairs)
    if m == 0:
        return 0.0
    p, r = m / len(candidate), m / len(reference)
    f_mean = p * r / (alpha * p + (1 - alpha) * r)
    chunks = 1
    for (i0, j0), (i1, j1) in zip(pairs, pairs[1:]):
        if not (i1 == i0 + 1 and j1 == j0 + 1):
            chunks += 1
    penalty = gamma * (chunks / m) ** beta
    return f_mean * (1 - penalty)


@dataclass
class MetricReport:
    bleu: float
    rouge_l: float
    meteor: float
    count: int
    per_intent: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return asdict(self)


def _scores(cands, refs):
    # an empty candidate scores zero on the pairwise metrics
    rl = [rouge_l(c, r) if c else 0.0 for c, r in zip(cands, refs)]
    mt = [meteor(c, r) if c else 0.0 for c, r in zip(cands, refs)]
    return bleu(cands, refs), sum(rl) / len(rl), sum(mt) / len(mt)


def corpus_report(candidates, references, intents=None) -> MetricReport:
    """Overall scores plus a breakdown keyed by intent name when ``intents`` is given."""
    b, r, m = _scores(candidates, references)
    report = MetricReport(b, r, m, len(candidates))
    if intents is not None:
        groups: dict[str, list[int]] = {}
        for i, intent in enumerate(intents):
            groups.setdefault(getattr(intent, "value", str(intent)), []).append(i)
        for name, idx in sorted(groups.items()):
            gb, gr, gm = _scores([candidates[i] for i in idx], [references[i] for i in idx])
            report.per_intent[name] = {"bleu": gb, "rouge_l": gr, "meteor": gm, "count": len(idx)}
    return report
