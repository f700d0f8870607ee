import numpy as np
import pytest

from dome.corpus import GENERATABLE, SEP_ID, PreprocessedCode
from dome.model import DomeModel, Example, ModelConfig

N_RESERVED = 6


def tiny_config(**overrides) -> ModelConfig:
    base = dict(code_vocab_size=20, comment_vocab_size=12, d_model=8, d_intent=4, heads=2,
                blocks=1, ffn_mult=2, dropout=0.0, k_token=2, k_statement=2,
                max_comment_len=6, max_code_len=64, zero_init_output=False)
    base.update(overrides)
    return ModelConfig(**base)


def random_code(rng, vocab_size, n_statements=None, max_len=4) -> PreprocessedCode:
    n_statements = n_statements or int(rng.integers(1, 4))
    ids, segments = [], []
    for _ in range(n_statements):
        start = len(ids)
        ids.extend(rng.integers(N_RESERVED, vocab_size, size=int(rng.integers(1, max_len))).tolist())
        ids.append(SEP_ID)
        segments.append((start, len(ids)))
    return PreprocessedCode(tuple(ids), tuple(segments))


def random_example(rng, cfg: ModelConfig, target=True, exemplar=True) -> Example:
    V = cfg.comment_vocab_size
    return Example(
        code=random_code(rng, cfg.code_vocab_size),
        intent=GENERATABLE[int(rng.integers(len(GENERATABLE)))],
        exemplar=rng.integers(min(N_RESERVED, V - 1), V, size=int(rng.integers(1, 5))).tolist() if exemplar else [],
        target=rng.integers(min(N_RESERVED, V - 1), V, size=int(rng.integers(1, cfg.max_comment_len))).tolist() if target else None,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def tiny_model():
    return DomeModel(tiny_config(), seed=0)
