import json

import numpy as np
import pytest

from conftest import small_config
from saner.autodiff import encode_checkpoint
from saner.errors import DivergenceError
from saner.model import MODES
from saner.train import bucketed_batches, format_log, train


def run(toy, **kw):
    corpus, embedder, index = toy
    return train(small_config(**kw), corpus.train, corpus.dev, embedder, index)


def test_loss_decreases_over_five_epochs(toy):
    result = run(toy, epochs=5)
    losses = [e["loss"] for e in result.log]
    assert all(np.isfinite(losses))
    assert losses[4] < losses[0]


def test_log_entries(toy):
    result = run(toy, epochs=2)
    assert [set(e) for e in result.log] == [{"epoch", "loss", "dev_p", "dev_r", "dev_f1"}] * 2
    assert [json.loads(line)["epoch"] for line in format_log(result.log).splitlines()] == [1, 2]


def test_zero_epochs_returns_initial_parameters(toy):
    result = run(toy, epochs=0)
    assert result.log == [] and result.best_epoch == 0
    for name, p in result.tagger.params.items():
        assert np.array_equal(result.best_params[name].data, p.data)


def test_bit_identical_reruns(toy):
    a, b = run(toy, epochs=3), run(toy, epochs=3)
    assert format_log(a.log) == format_log(b.log)
    ta, tb = a.best_tagger(), b.best_tagger()
    assert encode_checkpoint(ta.params, ta.metadata()) == encode_checkpoint(tb.params, tb.metadata())


def test_different_seed_differs(toy):
    assert run(toy, epochs=1).log[0]["loss"] != run(toy, epochs=1, seed=7).log[0]["loss"]


def test_input_embeddings_frozen(toy):
    corpus, embedder, _ = toy
    before = [slot.matrix.copy() for slot in embedder.slots]
    run(toy, epochs=2)
    for slot, old in zip(embedder.slots, before):
        assert slot.matrix.tobytes() == old.tobytes()


def test_best_epoch_has_max_dev_f1_earliest(toy):
    result = run(toy, epochs=6)
    f1s = [e["dev_f1"] for e in result.log]
    assert result.best_f1 == max(f1s)
    assert result.best_epoch == f1s.index(max(f1s)) + 1


@pytest.mark.parametrize("mode", MODES)
def test_every_mode_trains(toy, mode):
    result = run(toy, mode=mode, epochs=2)
    assert len(result.log) == 2 and all(np.isfinite(e["loss"]) for e in result.log)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_is_reported(toy):
    with pytest.raises(DivergenceError, match="epoch 1, batch"):
        run(toy, lr=1e300, epochs=2)


def test_bucketed_batches_cover_everything():
    lengths = [5, 1, 3, 3, 9, 2, 2, 7, 4]
    batches = bucketed_batches(lengths, 2, np.random.default_rng(0), pool_factor=2)
    assert sorted(np.concatenate(batches).tolist()) == list(range(len(lengths)))
    assert all(1 <= len(b) <= 2 for b in batches)
