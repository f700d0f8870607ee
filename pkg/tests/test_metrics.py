import pytest
from hypothesis import given
from hypothesis import strategies as st

from dome.errors import ShapeError
from dome.metrics import MetricReport, bleu, corpus_report, lcs_length, meteor, rouge_l

tokens = st.lists(st.sampled_from("abcdefg"), min_size=1, max_size=10)


# ---------------------------------------------------------------------------
# BLEU

def test_bleu_identity_and_disjoint():
    x = "return the sum of two numbers".split()
    assert bleu([x], [x]) == pytest.approx(1.0, abs=1e-12)
    assert bleu([["a", "b", "c", "d"]], [["e", "f", "g", "h"]]) == 0.0


def test_bleu_clipped_repeated_token():
    cand, ref = "the the the the".split(), "the cat sat down".split()
    assert bleu([cand], [ref]) == 0.0
    assert bleu([cand], [ref], max_n=1) == pytest.approx(0.25, abs=1e-12)


def test_bleu_brevity_penalty():
    # unigram precision 1, c=2, r=4 -> exp(1 - 2)
    assert bleu([["a", "b"]], [["a", "b", "c", "d"]], max_n=1) == pytest.approx(0.36787944117144233, abs=1e-12)


def test_bleu_pools_over_corpus():
    # one perfect pair and one disjoint pair pool to p_1 = 2/4
    score = bleu([["a", "b"], ["c", "d"]], [["a", "b"], ["x", "y"]], max_n=1)
    assert score == pytest.approx(0.5, abs=1e-12)


def test_bleu_errors():
    with pytest.raises(ShapeError):
        bleu([["a"]], [])
    with pytest.raises(ShapeError):
        bleu([], [])


@given(tokens)
def test_bleu_identity_property(x):
    assert bleu([x], [x]) == pytest.approx(1.0, abs=1e-12)


@given(st.lists(st.tuples(tokens, tokens), min_size=1, max_size=6), st.randoms(use_true_random=False))
def test_bleu_range_and_permutation_invariance(pairs, rnd):
    cands, refs = map(list, zip(*pairs))
    score = bleu(cands, refs)
    assert 0.0 <= score <= 1.0
    shuffled = list(pairs)
    rnd.shuffle(shuffled)
    c2, r2 = map(list, zip(*shuffled))
    assert bleu(c2, r2) == pytest.approx(score, abs=1e-12)


# ---------------------------------------------------------------------------
# ROUGE-L

def test_lcs_examples():
    assert lcs_length("abcd", "acbd") == 3
    assert lcs_length("", "abc") == 0
    assert lcs_length("abcbdab", "bdcaba") == 4


def test_rouge_examples():
    assert rouge_l(list("abcd"), list("abcd")) == 1.0
    assert rouge_l(list("ab"), list("cd")) == 0.0
    assert rouge_l(list("abcd"), list("acbd")) == pytest.approx(0.75, abs=1e-12)


def test_rouge_empty_raises():
    with pytest.raises(ShapeError):
        rouge_l([], ["a"])


@given(tokens, tokens)
def test_rouge_symmetric_and_bounded(a, b):
    assert 0.0 <= rouge_l(a, b) <= 1.0
    assert rouge_l(a, b) == pytest.approx(rouge_l(b, a), abs=1e-12)
    assert rouge_l(a, a) == 1.0


# ---------------------------------------------------------------------------
# METEOR

def test_meteor_identity_three_tokens():
    assert meteor(list("abc"), list("abc")) == pytest.approx(1 - 0.5 / 27, abs=1e-12)


def test_meteor_single_token_and_no_match():
    assert meteor(["a"], ["a"]) == pytest.approx(0.5, abs=1e-12)
    assert meteor(["a", "b"], ["c"]) == 0.0


def test_meteor_recall_weighted():
    # P=1, R=1/2 versus P=1/2, R=1: the higher-recall candidate wins
    short = meteor(["a"], ["a", "b"])
    long = meteor(["a", "b"], ["a"])
    assert long > short


def test_meteor_fragmentation():
    # same matches, two chunks instead of one
    assert meteor(list("abcd"), list("abcd")) > meteor(list("abcd"), list("cdab"))


def test_meteor_empty_raises():
    with pytest.raises(ShapeError):
        meteor(["a"], [])


@given(tokens, tokens)
def test_meteor_bounded(a, b):
    assert 0.0 <= meteor(a, b) <= 1.0


# ---------------------------------------------------------------------------
# corpus report

def test_corpus_report_per_intent():
    cands = [["a", "b"], ["c"], ["x", "y"], []]
    refs = [["a", "b"], ["c"], ["p", "q"], ["z"]]
    report = corpus_report(cands, refs, ["what", "why", "what", "why"])
    assert isinstance(report, MetricReport) and report.count == 4
    assert set(report.per_intent) == {"what", "why"}
    what = report.per_intent["what"]
    assert what["count"] == 2 and what["rouge_l"] == pytest.approx(0.5)
    # the empty candidate scores zero on the pairwise metrics
    assert report.per_intent["why"]["rouge_l"] == pytest.approx(0.5)
    assert report.rouge_l == pytest.approx(0.5)
    assert set(report.to_json()) == {"bleu", "rouge_l", "meteor", "count", "per_intent"}


def test_corpus_report_without_intents():
    report = corpus_report([["a"]], [["a"]])
    assert report.per_intent == {} and report.bleu == 1.0
