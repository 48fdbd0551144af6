import numpy as np
import pytest

from lsrkit.core import TokenizedText
from lsrkit.encoders import EmbeddingBundle, HeadParameters


def make_bundle(ctx, input_emb, cls=None):
    """EmbeddingBundle from plain nested lists."""
    ctx = np.asarray(ctx, dtype=np.float64)
    input_emb = np.asarray(input_emb, dtype=np.float64)
    if ctx.size == 0:
        ctx = ctx.reshape(0, input_emb.shape[1])
    d = input_emb.shape[1]
    cls = np.zeros(d) if cls is None else np.asarray(cls, dtype=np.float64)
    return EmbeddingBundle(
        ctx_embeddings=ctx, cls_embedding=cls, input_embeddings=input_emb, embedding_dim=d
    )


def make_heads(
    vocab_size,
    dim,
    mlp_weight=None,
    mlp_bias=0.0,
    mlm_bias=None,
    activation="relu",
    mlp_log_normalize=True,
    use_quality_heads=False,
):
    return HeadParameters(
        mlp_weight=np.ones(dim) if mlp_weight is None else np.asarray(mlp_weight, dtype=np.float64),
        mlp_bias=mlp_bias,
        mlm_bias=np.zeros(vocab_size) if mlm_bias is None else np.asarray(mlm_bias, dtype=np.float64),
        quality_weight=np.zeros(dim),
        quality_bias=0.0,
        importance_weight=np.zeros(dim),
        importance_bias=0.0,
        activation=activation,
        mlp_log_normalize=mlp_log_normalize,
        use_quality_heads=use_quality_heads,
    )


def text(doc_id, *ids):
    return TokenizedText(doc_id=doc_id, token_ids=tuple(ids))


@pytest.fixture
def rng():
    return np.random.default_rng(42)


#: one line per acceptance criterion, echoed after the test summary
acceptance_lines: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if acceptance_lines:
        terminalreporter.section("acceptance criteria")
        for line in acceptance_lines:
            terminalreporter.write_line(line)
