"""The ten acceptance criteria, each at its stated tolerance and runtime budget.

Every test prints one ``PASS``/``FAIL`` line to the terminal (even under
output capture) before asserting.
"""

import math
import time
from fractions import Fraction
from contextlib import contextmanager

import numpy as np
import pytest

from dome import tensor as T
from dome.coin import ClassifierConfig, IntentClassifier, cross_validate, kfold_split
from dome.corpus import GENERATABLE, CodeCommentRecord, IntentCategory, build_vocab, intent_distribution, tokenize
from dome.decoding import beam_search, greedy_decode
from dome.errors import NoExemplar
from dome.gradcheck import check_gradients
from dome.isa import ISAConfig, init_isa, isa_forward, topk_keep, topk_mask
from dome.layers import ffn, init_ffn, init_mha, mha
from dome.metrics import bleu, meteor, rouge_l
from dome.model import DomeModel, collate
from dome.params import ParameterStore
from dome.pipeline import generate
from dome.retriever import build_dense_index, retrieve
from dome.synthetic import keyword_corpus, one_to_many_corpus
from dome.trainer import (TrainConfig, load_checkpoint, save_checkpoint, teacher_forcing_step,
                          train_dome, training_examples)

from conftest import random_example, tiny_config
from test_decoding import exhaustive_best, random_model


@pytest.fixture
def criterion(capsys):
    """Yields a recorder; prints the verdict line when the test body finishes."""
    @contextmanager
    def run(number, title, budget_s):
        state = {"detail": ""}
        start = time.perf_counter()
        ok = False
        try:
            yield state
            ok = True
        finally:
            elapsed = time.perf_counter() - start
            ok = ok and elapsed < budget_s
            with capsys.disabled():
                print(f"\n[criterion {number:2d}] {'PASS' if ok else 'FAIL'}  {title}: "
                      f"{state['detail']} ({elapsed:.1f}s, budget {budget_s:g}s)")
        assert elapsed < budget_s, f"took {elapsed:.1f}s, budget {budget_s}s"
    return run


# ---------------------------------------------------------------------------

def _raw_scores(params, q, k, Q1, X, heads):
    qa, ka = Q1 @ params[f"isa.{q}.w"].data, X @ params[f"isa.{k}.w"].data
    b, t, d = qa.shape
    dh = d // heads
    qh = qa.reshape(b, t, heads, dh).transpose(0, 2, 1, 3)
    kh = ka.reshape(b, -1, heads, dh).transpose(0, 2, 1, 3)
    return qh @ kh.transpose(0, 1, 3, 2) / math.sqrt(dh)


def test_criterion_01_isa_normalization(criterion):
    with criterion(1, "ISA normalization", 10) as c:
        rng = np.random.default_rng(2024)
        worst_sum, leaked = 0.0, 0
        for trial in range(200):
            L = int(rng.integers(1, 9))
            lens = rng.multinomial(int(rng.integers(L, 41)) - L, np.ones(L) / L) + 1
            n_tok = int(lens.sum())
            k_tok, k_sta = int(rng.integers(1, 7)), int(rng.integers(1, 5))
            cfg = ISAConfig(k_tok, k_sta, heads=2, d_model=8, d_intent=4)
            params = ParameterStore()
            init_isa(params, "isa", rng, 8, 4)
            seg = np.repeat(np.arange(L), lens)[None]
            Q1 = T.Tensor(rng.normal(size=(1, int(rng.integers(1, 6)), 12)))
            X_tok = T.Tensor(rng.normal(size=(1, n_tok, 8)))
            X_sta = T.segment_max_pool_ids(X_tok, seg, L)
            _, w = isa_forward(Q1, X_tok, X_sta, seg, cfg, params, trace=True)
            A = w["A"]
            worst_sum = max(worst_sum, float(np.abs(A.sum(-1) - 1).max()))
            # independent selection oracle: top statements, then top tokens inside each statement
            keep_s = topk_keep(_raw_scores(params, "q_stmt", "k_stmt", Q1.data, X_sta.data, 2), k_sta)
            beta = _raw_scores(params, "q_tok", "k_tok", Q1.data, X_tok.data, 2)
            keep_t = np.zeros_like(beta, dtype=bool)
            start = 0
            for n in lens:
                keep_t[..., start:start + n] = topk_keep(beta[..., start:start + n], k_tok)
                start += n
            selected = keep_s[..., seg[0]] & keep_t
            leaked += int((A[~selected] != 0.0).sum())
        c["detail"] = f"max |row sum - 1| = {worst_sum:.2e}, nonzero masked weights = {leaked}"
        assert worst_sum <= 1e-6 and leaked == 0


def test_criterion_02_topk_cardinality(criterion):
    with criterion(2, "top-k cardinality", 5) as c:
        rng = np.random.default_rng(7)
        bad = 0
        for _ in range(1000):
            n = int(rng.integers(1, 30))
            row = rng.integers(-3, 4, size=n).astype(float) if rng.random() < 0.5 else rng.normal(size=n)
            k = int(rng.integers(1, 35))
            got = topk_mask(row[None], k)[0]
            ranked = sorted(range(n), key=lambda i: (-row[i], i))[:k]
            expected = np.full(n, -np.inf)
            expected[ranked] = row[ranked]
            bad += int(not np.array_equal(got, expected) or np.isfinite(got).sum() != min(k, n))
        c["detail"] = f"{1000 - bad}/1000 rows match the sort oracle"
        assert bad == 0


def _layer_checks():
    rng = np.random.default_rng(0)

    def t(*shape):
        return T.Tensor(rng.normal(size=shape), requires_grad=True)
    w, w_ab = rng.normal(size=(2, 5, 6)), rng.normal(size=(3, 2))
    a, b, x, g, bias = t(3, 4), t(4, 2), t(2, 5, 6), t(6), t(6)
    seg = np.array([[0, 0, 1, 1, 1], [0, 1, 1, 2, 2]])
    s7, w7 = t(2, 7), rng.normal(size=(2, 7))
    onehot = (np.array([0, 0, 1, 1, 1, 2, 2])[:, None] == np.arange(3)).astype(float)
    keep = np.array([[1, 1, 1, 0, 1, 1, 1], [1, 0, 1, 1, 1, 0, 1]], bool)
    logits, table = t(2, 5, 7), t(9, 6)
    targets = rng.integers(0, 7, size=(2, 5))
    valid = rng.random((2, 5)) < 0.7
    valid[0, 0] = True
    params = ParameterStore()
    init_mha(params, "mha", rng, 6, 6, 6)
    init_ffn(params, "ffn", rng, 6, 12)
    mask = rng.random((2, 1, 5, 5)) < 0.3
    mask[..., 0] = False
    return {
        "matmul": (lambda: T.sum_(T.matmul(a, b) * w_ab), {"a": a, "b": b}),
        "softmax": (lambda: T.sum_(T.softmax(x) * w), {"x": x}),
        "log_softmax": (lambda: T.sum_(T.log_softmax(x) * w), {"x": x}),
        "layer_norm": (lambda: T.sum_(T.layer_norm(x, g, bias) * w), {"x": x, "g": g, "b": bias}),
        "segment_max_pool": (lambda: T.sum_(T.segment_max_pool_ids(x, seg, 3) * w[:, :3]), {"x": x}),
        "segment_softmax": (lambda: T.sum_(T.segment_softmax(s7, onehot, keep) * w7), {"x": s7}),
        "cross_entropy": (lambda: T.cross_entropy(logits, targets, valid), {"logits": logits}),
        "embedding": (lambda: T.sum_(T.embedding(table, targets) * w), {"table": table}),
        "relu_sigmoid_exp_log": (lambda: T.sum_(T.log(T.sigmoid(T.relu(x) + T.exp(x * 0.1))) * w), {"x": x}),
        "dropout": (lambda: T.sum_(T.dropout(x, 0.3, True, np.random.default_rng(5)) * w), {"x": x}),
        "mha": (lambda: T.sum_(mha(params, "mha", x, x, 2, mask) * w),
                {"x": x, **{n: params[n] for n in params.names("mha.")}}),
        "ffn": (lambda: T.sum_(ffn(params, "ffn", x) * w), {"x": x, **{n: params[n] for n in params.names("ffn.")}}),
    }


def test_criterion_03_gradients(criterion):
    with criterion(3, "gradient correctness", 300) as c:
        errors = {}
        for name, (f, tensors) in _layer_checks().items():
            errors[name] = max(check_gradients(f, tensors).values())

        # isa_forward
        rng = np.random.default_rng(1)
        cfg = ISAConfig(2, 2, heads=2, d_model=8, d_intent=4)
        params = ParameterStore()
        init_isa(params, "isa", rng, 8, 4)
        seg = np.array([[0, 0, 1, 1, 1, 2]])
        Q1 = T.Tensor(rng.normal(size=(1, 3, 12)), requires_grad=True)
        X_tok = T.Tensor(rng.normal(size=(1, 6, 8)), requires_grad=True)
        w = rng.normal(size=(1, 3, 8))

        def isa_loss():
            out, _ = isa_forward(Q1, X_tok, T.segment_max_pool_ids(X_tok, seg, 3), seg, cfg, params)
            return T.sum_(out * w)
        errors["isa_forward"] = max(check_gradients(isa_loss, {"Q1": Q1, "X_tok": X_tok,
                                                               **{n: params[n] for n in params}}).values())

        # decoder_block and teacher_forcing_step on a tiny model
        model = DomeModel(tiny_config(d_model=8, heads=2, blocks=1), seed=3)
        batch = collate([random_example(np.random.default_rng(4), model.cfg) for _ in range(2)])
        from dome.layers import causal_mask
        S0 = T.Tensor(np.random.default_rng(5).normal(size=(2, batch.dec_in.shape[1], 8)), requires_grad=True)
        wd = np.random.default_rng(6).normal(size=S0.shape)
        mask = causal_mask(S0.shape[1])[None, None]

        def block_loss():
            m = model.memory(batch)
            S, beta, _ = model.decoder_block(0, S0, m, mask)
            return T.sum_(S * wd) + T.sum_(beta)
        block_params = {n: model.params[n] for n in model.params.names("dec.block0.")}
        errors["decoder_block"] = max(check_gradients(block_loss, {"S": S0, **block_params}).values())
        all_params = {n: model.params[n] for n in model.params}
        errors["teacher_forcing_step"] = max(check_gradients(
            lambda: teacher_forcing_step(batch, model), all_params, max_entries=8).values())

        # classifier loss
        corpus = keyword_corpus(30, seed=2)
        clf = IntentClassifier(ClassifierConfig(d_model=8, heads=2, blocks=1, mlp_hidden=8, dropout=0.0,
                                                max_seq_len=16), build_vocab(corpus, "both", 100))
        prng = np.random.default_rng(8)
        for n in clf.params:
            clf.params[n].data += prng.normal(scale=0.1, size=clf.params[n].shape)
        seqs = [clf.encode(r)[:10] for r in corpus[:3]]
        labels = [r.intent.index for r in corpus[:3]]
        errors["classifier_loss"] = max(check_gradients(
            lambda: clf.loss(seqs, labels), {n: clf.params[n] for n in clf.params}, max_entries=8).values())

        worst = max(errors, key=errors.get)
        c["detail"] = f"{len(errors)} checks, worst {worst} rel err {errors[worst]:.1e}"
        assert all(e < 1e-4 for e in errors.values()), errors


OVERFIT = TrainConfig(batch_size=4, epochs=250, lr=5e-4, seed=0, retriever="dense",
                      model=dict(d_model=64, d_intent=32, heads=4, blocks=2, ffn_mult=2, dropout=0.0,
                                 k_token=10, k_statement=5, max_comment_len=15),
                      biencoder=dict(epochs=10))


def test_criterion_04_one_to_many_overfit(criterion):
    with criterion(4, "one-to-many overfit", 600) as c:
        records = one_to_many_corpus()
        bundle, history = train_dome(records, OVERFIT)
        # exemplars come from other records, exactly as in training and as for unseen code
        exact = sum(generate(r.code, r.intent, bundle, beam_size=1, exclude_id=r.id).comment
                    == " ".join(tokenize(r.comment)) for r in records)
        direct = sum(bundle.detokenize(greedy_decode(bundle.model, ex).tokens) == " ".join(tokenize(r.comment))
                     for ex, r in zip(training_examples(bundle, records), records))
        # informational: a record retrieving its own comment is outside the training distribution
        own = sum(generate(r.code, r.intent, bundle, beam_size=1).comment == " ".join(tokenize(r.comment))
                  for r in records)
        snippets = {r.code for r in records if sum(s.code == r.code for s in records) > 1}
        c["detail"] = (f"{exact}/32 exact via greedy generate ({direct}/32 on training examples), "
                       f"{len(snippets)} multi-intent snippets, final loss {history[-1]:.4f}; "
                       f"own-comment exemplars {own}/32")
        assert exact == 32 and direct == 32 and history[-1] < 0.1


def test_criterion_05_retrieval(criterion):
    with criterion(5, "retrieval correctness", 10) as c:
        rng = np.random.default_rng(11)
        n, dim = 80, 8
        records = [CodeCommentRecord("f();", f"c{i}", GENERATABLE[int(rng.integers(5))], int(i))
                   for i in rng.permutation(500)[:n]]
        vectors = rng.normal(size=(n, dim)).astype(np.float32)
        vectors[5] = vectors[9]           # a duplicated vector exercises the id tie-break
        index = build_dense_index(records, vectors)
        by_id = {r.id: r for r in records}
        agree = checked = 0
        for q in range(100):
            query = rng.normal(size=dim)
            intent = GENERATABLE[int(rng.integers(5))]
            excl = int(records[int(rng.integers(n))].id) if q % 2 else None
            best = None
            for r, v in zip(records, vectors.astype(np.float64)):
                if r.intent is intent and r.id != excl:
                    s = float(v @ query)
                    if best is None or s > best[0] or (s == best[0] and r.id < best[1]):
                        best = (s, r.id)
            try:
                ex = retrieve(query, intent, index, excl)
            except NoExemplar:
                agree += best is None
                continue
            checked += 1
            ok = (best is not None and ex.source_id == best[1] and abs(ex.score - best[0]) < 1e-9
                  and by_id[ex.source_id].intent is intent and ex.source_id != excl)
            agree += ok
        c["detail"] = f"{agree}/100 queries agree with the exhaustive scan"
        assert agree == 100 and checked > 90


def test_criterion_06_metric_oracles(criterion):
    with criterion(6, "metric oracles", 1) as c:
        cand, ref = "the the the the".split(), "the cat sat down".split()
        x = "returns the sum of two numbers".split()
        checks = {
            "bleu clipped max_n=4": (bleu([cand], [ref]), 0.0),
            "bleu clipped max_n=1": (bleu([cand], [ref], max_n=1), 0.25),
            "bleu identity": (bleu([x], [x]), 1.0),
            "bleu disjoint": (bleu([list("abcd")], [list("efgh")]), 0.0),
            "rouge lcs": (rouge_l(list("abcd"), list("acbd")), 0.75),
            "rouge identity": (rouge_l(x, x), 1.0),
            "rouge disjoint": (rouge_l(list("ab"), list("cd")), 0.0),
            "meteor m=3": (meteor(list("abc"), list("abc")), 1 - 0.5 / 27),
            "meteor single": (meteor(["a"], ["a"]), 0.5),
            "meteor disjoint": (meteor(["a"], ["b"]), 0.0),
        }
        bad = [k for k, (got, want) in checks.items() if abs(got - want) > 1e-9]
        c["detail"] = f"{len(checks) - len(bad)}/{len(checks)} oracle values within 1e-9"
        assert not bad, bad


def test_criterion_07_classifier_separability(criterion):
    with criterion(7, "classifier separability", 300) as c:
        records = keyword_corpus(600, seed=0)
        folds = kfold_split(records, 5, seed=0)
        ids = sorted(r.id for f in folds for r in f)
        partition = ids == sorted(r.id for r in records) and len(ids) == 600
        cfg = ClassifierConfig(d_model=32, heads=4, blocks=1, mlp_hidden=32, epochs=6, batch_size=16,
                               lr=2e-3, dropout=0.0, max_seq_len=32)
        reports = cross_validate(records, cfg, k=5, seed=0)
        f1 = [r.macro_f1 for r in reports]
        c["detail"] = f"macro-F1 per fold {[round(v, 3) for v in f1]}, mean {np.mean(f1):.4f}, partition {partition}"
        assert partition and np.mean(f1) >= 0.95


def test_criterion_08_decoding(criterion):
    with criterion(8, "decoding equivalences", 30) as c:
        same = beam_ge = 0
        for seed in range(50):
            model, ex = random_model(seed, comment_vocab_size=int(6 + seed % 9), max_comment_len=int(1 + seed % 7))
            g, b1 = greedy_decode(model, ex), beam_search(model, ex, 1)
            same += g.steps == b1.steps
            beam_ge += beam_search(model, ex, 5).score >= g.score - 1e-12
        oracle_ok = 0
        for seed in range(5):
            model, ex = random_model(100 + seed, comment_vocab_size=6, max_comment_len=3)
            oracle = exhaustive_best(model, ex, 3)
            full = beam_search(model, ex, 36)
            oracle_ok += full.steps == oracle.steps and abs(full.score - oracle.score) < 1e-9
        c["detail"] = f"beam1==greedy {same}/50, beam5>=greedy {beam_ge}/50, exhaustive oracle {oracle_ok}/5"
        assert same == 50 and beam_ge == 50 and oracle_ok == 5


def test_criterion_09_determinism_and_persistence(criterion, tmp_path):
    with criterion(9, "determinism & persistence", 120) as c:
        cfg = TrainConfig(batch_size=8, epochs=3, lr=1e-3, seed=0, retriever="dense",
                          model=dict(d_model=16, d_intent=8, heads=2, blocks=1, dropout=0.1,
                                     k_token=3, k_statement=2, max_comment_len=10),
                          biencoder=dict(d_r=16, heads=2, blocks=1, epochs=2, batch_size=8))
        records = one_to_many_corpus()
        bundle, h1 = train_dome(records, cfg)
        _, h2 = train_dome(records, cfg)
        save_checkpoint(bundle, tmp_path / "a.ckpt")
        back = load_checkpoint(tmp_path / "a.ckpt")
        save_checkpoint(back, tmp_path / "b.ckpt")
        same_gen = sum(generate(r.code, r.intent, bundle, beam_size=3).steps
                       == generate(r.code, r.intent, back, beam_size=3).steps for r in records)
        stable = (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()
        c["detail"] = f"histories equal {h1 == h2}, generations preserved {same_gen}/32, byte-stable {stable}"
        assert h1 == h2 and same_gen == 32 and stable


def test_criterion_10_intent_distribution(criterion):
    with criterion(10, "intent distribution", 1) as c:
        counts = {"what": 12264, "why": 1708, "how-to-use": 573, "how-it-is-done": 2933,
                  "property": 2270, "others": 252}
        expected = [61.32, 8.54, 2.87, 14.67, 11.35, 1.26]
        dist = intent_distribution(counts)
        total = sum(n for n, _ in dist.values())
        assert all(abs(p - n / total) < 1e-15 for n, p in dist.values())
        # how-to-use sits exactly on the tolerance (2.865 vs 2.87), so compare in exact arithmetic
        exact = [Fraction(100 * dist[i][0], total) for i in IntentCategory]
        worst = max(abs(v - Fraction(str(e))) for v, e in zip(exact, expected))
        c["detail"] = " / ".join(f"{float(v):.3f}" for v in exact) + f" (max deviation {float(worst):.4f})"
        assert worst <= Fraction("0.005")
