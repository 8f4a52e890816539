import numpy as np
import pytest
from hypothesis import settings

from saner import autodiff as ad
from saner import synthetic
from saner.corpus import vocabulary
from saner.embeddings import CompositeEmbedder, build_neighbor_index

settings.register_profile("ci", max_examples=60, deadline=None)
settings.load_profile("ci")


def gradcheck(build, leaves, h=1e-4, indices=None):
    """Max relative error between backward() and central differences over ``leaves``."""
    for t in leaves:
        t.grad = None
    loss = build()
    ad.backward(loss)
    worst = 0.0
    for t in leaves:
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        numeric = ad.numerical_gradient(lambda: float(build().data), t.data, h, indices)
        if indices is not None:
            sel = tuple(np.array(list(indices)).T)
            analytic, numeric = analytic[sel], numeric[sel]
        worst = max(worst, ad.max_relative_error(analytic, numeric))
    return worst


@pytest.fixture(scope="session")
def toy():
    corpus = synthetic.generate(42)
    index = build_neighbor_index(corpus.source_table, vocabulary(corpus.train + corpus.dev + corpus.test), 10)
    return corpus, CompositeEmbedder([corpus.input_table]), index


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def small_config(mode="AU+GA", **overrides):
    """A narrow model that trains in seconds on the toy corpus."""
    from saner.encoder import EncoderConfig
    from saner.model import ModelConfig

    enc = EncoderConfig(layers=1, heads=2, model_dim=16, feedforward_dim=32)
    kw = {"mode": mode, "encoder": enc, "lr": 1e-2, "batch_size": 4, "epochs": 5, "seed": 42}
    kw.update(overrides)
    return ModelConfig(**kw)
