import json
import math
import struct

import numpy as np
import pytest

from dome.checkpoint import MAGIC, read_archive, write_archive
from dome.corpus import CodeCommentRecord, IntentCategory
from dome.errors import ConfigError, CorruptCheckpoint, EmptyInput
from dome.pipeline import generate
from dome.synthetic import one_to_many_corpus
from dome.trainer import (TrainConfig, build_bundle, load_checkpoint, make_batches, save_checkpoint,
                          teacher_forcing_step, train_dome, training_examples)

from conftest import random_example, tiny_config

TINY_MODEL = dict(d_model=16, d_intent=8, heads=2, blocks=1, ffn_mult=2, dropout=0.1,
                  k_token=3, k_statement=2, max_comment_len=12)


def small_config(**kw):
    base = dict(batch_size=8, epochs=3, lr=1e-3, seed=0, retriever="lexical", model=dict(TINY_MODEL))
    base.update(kw)
    return TrainConfig(**base)


def dense_config(**kw):
    return small_config(retriever="dense",
                        biencoder=dict(d_r=16, heads=2, blocks=1, epochs=2, batch_size=8), **kw)


@pytest.fixture(scope="module")
def corpus():
    return one_to_many_corpus()


# ---------------------------------------------------------------------------
# config

def test_config_validation(tmp_path):
    with pytest.raises(ConfigError):
        TrainConfig(retriever="sparse")
    with pytest.raises(ConfigError):
        TrainConfig.from_dict({"epochs": 1, "unknown": 3})
    path = tmp_path / "c.json"
    path.write_text("[1, 2]")
    with pytest.raises(ConfigError):
        TrainConfig.from_json(path)
    path.write_text(json.dumps({"epochs": 4, "lr": 0.01}))
    assert TrainConfig.from_json(path).epochs == 4


# ---------------------------------------------------------------------------
# batching

def test_batch_sizes_and_shared_padding():
    rng = np.random.default_rng(0)
    cfg = tiny_config()
    examples = [random_example(rng, cfg) for _ in range(10)]
    batches = make_batches(examples, 4, seed=0)
    assert [b.size for b in batches] == [4, 4, 2]
    for b in batches:
        assert b.dec_in.shape == b.targets.shape == b.tgt_valid.shape and b.dec_in.shape[0] == b.size


def test_batches_cover_every_example_and_depend_on_epoch():
    rng = np.random.default_rng(1)
    cfg = tiny_config(comment_vocab_size=20)
    examples = [random_example(rng, cfg) for _ in range(10)]
    for i, ex in enumerate(examples):
        ex.exemplar = [6 + i]  # tags the example inside the collated batch
    ids = lambda bs: [int(t) - 6 for b in bs for t in b.ex_ids[:, 0]]  # noqa: E731
    a = ids(make_batches(examples, 4, seed=0, epoch=1))
    assert sorted(a) == list(range(10))
    assert a == ids(make_batches(examples, 4, seed=0, epoch=1))
    assert a != ids(make_batches(examples, 4, seed=0, epoch=2))


def test_make_batches_empty():
    with pytest.raises(EmptyInput):
        make_batches([], 4, 0)


def test_teacher_forcing_padding_invariance(corpus):
    bundle = build_bundle(corpus, small_config(model=dict(TINY_MODEL, dropout=0.0)))
    exs = training_examples(bundle, corpus[:4])
    from dome.model import collate
    a = teacher_forcing_step(collate(exs), bundle.model).data
    b = teacher_forcing_step(collate(exs, extra_code_pad=5, extra_target_pad=3), bundle.model).data
    assert float(a) == pytest.approx(float(b), abs=1e-12)


def test_initial_loss_near_log_vocab(corpus):
    bundle = build_bundle(corpus, small_config(model=dict(TINY_MODEL, dropout=0.0, zero_init_output=True)))
    from dome.model import collate
    loss = float(teacher_forcing_step(collate(training_examples(bundle, corpus)), bundle.model).data)
    V = bundle.model.cfg.comment_vocab_size
    assert loss == pytest.approx(math.log(V), rel=0.2)


# ---------------------------------------------------------------------------
# training

def test_history_length_and_determinism(corpus):
    _, h1 = train_dome(corpus, small_config())
    _, h2 = train_dome(corpus, small_config())
    assert len(h1) == 3 and h1 == h2
    assert all(x >= 0 for x in h1)
    _, h3 = train_dome(corpus, small_config(seed=1))
    assert h3 != h1


def test_training_examples_exclude_self(corpus):
    bundle = build_bundle(corpus, small_config())
    for rec, ex in zip(corpus, training_examples(bundle, corpus)):
        assert ex.exemplar_id != rec.id


def test_others_are_dropped_and_empty_corpus_rejected(corpus):
    with pytest.raises(EmptyInput):
        train_dome([CodeCommentRecord("f();", "hmm", IntentCategory.OTHERS, 0)], small_config())
    with pytest.raises(EmptyInput):
        train_dome([], small_config())


def test_resume_matches_uninterrupted_run(tmp_path, corpus):
    _, full = train_dome(corpus, dense_config(epochs=4))
    part, _ = train_dome(corpus, dense_config(epochs=2, checkpoint=str(tmp_path / "ck")))
    resumed = load_checkpoint(tmp_path / "ck")
    assert resumed.epoch == 2
    _, history = train_dome(corpus, dense_config(epochs=4), resume=resumed)
    assert history == full


# ---------------------------------------------------------------------------
# checkpoints

@pytest.fixture(scope="module")
def trained(corpus):
    bundle, _ = train_dome(corpus, dense_config())
    return bundle


def test_round_trip_preserves_generation(tmp_path, corpus, trained):
    path = tmp_path / "m.ckpt"
    save_checkpoint(trained, path)
    back = load_checkpoint(path)
    for rec in corpus[:10]:
        a = generate(rec.code, rec.intent, trained, beam_size=3)
        b = generate(rec.code, rec.intent, back, beam_size=3)
        assert a.steps == b.steps and a.exemplar_id == b.exemplar_id


def test_round_trip_logits_close(tmp_path, corpus, trained):
    path = tmp_path / "m.ckpt"
    save_checkpoint(trained, path)
    back = load_checkpoint(path)
    from dome.model import collate
    batch = collate(training_examples(trained, corpus[:6]))
    a, _, _ = trained.model.logits(batch)
    b, _, _ = back.model.logits(collate(training_examples(back, corpus[:6])))
    assert np.abs(a.data - b.data).max() < 1e-5


def test_save_load_save_is_byte_stable(tmp_path, trained):
    save_checkpoint(trained, tmp_path / "a")
    save_checkpoint(load_checkpoint(tmp_path / "a"), tmp_path / "b")
    assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()


def test_lexical_round_trip(tmp_path, corpus):
    bundle, _ = train_dome(corpus, small_config(epochs=1))
    save_checkpoint(bundle, tmp_path / "a")
    back = load_checkpoint(tmp_path / "a")
    assert back.index.kind == "lexical" and back.biencoder is None
    save_checkpoint(back, tmp_path / "b")
    assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()


def _rewrite_manifest(src, dst, edit):
    raw = src.read_bytes()
    (n,) = struct.unpack("<Q", raw[8:16])
    manifest = json.loads(raw[16:16 + n])
    edit(manifest)
    head = json.dumps(manifest, sort_keys=True).encode()
    dst.write_bytes(MAGIC + struct.pack("<Q", len(head)) + head + raw[16 + n:])


def test_unknown_version_is_rejected(tmp_path, trained):
    save_checkpoint(trained, tmp_path / "a")
    _rewrite_manifest(tmp_path / "a", tmp_path / "b", lambda m: m.update(format_version=99))
    with pytest.raises(CorruptCheckpoint):
        load_checkpoint(tmp_path / "b")


def test_corrupt_files_are_rejected(tmp_path, trained):
    save_checkpoint(trained, tmp_path / "a")
    raw = (tmp_path / "a").read_bytes()
    cases = {"magic": b"NOTACKPT" + raw[8:], "truncated": raw[:-10], "trailing": raw + b"\0\0\0\0",
             "short": raw[:5]}
    for name, data in cases.items():
        (tmp_path / name).write_bytes(data)
        with pytest.raises(CorruptCheckpoint):
            load_checkpoint(tmp_path / name)
    _rewrite_manifest(tmp_path / "a", tmp_path / "kind", lambda m: m.update(kind="coin"))
    with pytest.raises(CorruptCheckpoint):
        load_checkpoint(tmp_path / "kind")
    _rewrite_manifest(tmp_path / "a", tmp_path / "cfg", lambda m: m["model_config"].update(d_model=32))
    with pytest.raises(CorruptCheckpoint):
        load_checkpoint(tmp_path / "cfg")


def test_archive_layout(tmp_path):
    blocks = {"w": np.arange(6, dtype=np.float64).reshape(2, 3), "b": np.array([0.5])}
    write_archive(tmp_path / "x", {"kind": "test"}, blocks)
    raw = (tmp_path / "x").read_bytes()
    assert raw[:8] == MAGIC
    manifest, back = read_archive(tmp_path / "x")
    assert manifest["kind"] == "test"
    assert np.array_equal(back["w"], blocks["w"]) and back["w"].shape == (2, 3)
    assert raw[-4:] == np.float32(0.5).tobytes()
