import numpy as np
import pytest

from embcompress.data import make_synthetic
from embcompress.embedding import EmbeddingTable
from embcompress.models import DanModel, LstmModel

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def toy_embedding(seed=0):
    # unit-scale entries keep activations O(1), so gradients stay well above
    # the roundoff floor of central differences
    return EmbeddingTable(np.random.default_rng(seed).normal(size=(6, 4)))


def toy_dan(factorized=False, seed=0):
    model = DanModel.create(toy_embedding(seed), 3, hidden=(5, 4), seed=seed, dropout=0.0)
    return model.compress(0.9) if factorized else model


def toy_lstm(factorized=False, seed=0):
    model = LstmModel.create(toy_embedding(seed), 3, hidden=3, seed=seed, dropout=0.0)
    return model.compress(0.9) if factorized else model


def toy_batch(rng, n=4, vocab=6, max_len=5):
    batch = [rng.integers(0, vocab, size=rng.integers(1, max_len + 1)) for _ in range(n)]
    return batch, rng.integers(0, 3, size=n)


@pytest.fixture(scope="session")
def tiny_corpus():
    return make_synthetic(3, 60, 40, sep=1.0, seed=0)


def relu_masks(model, batch):
    """Activity pattern of every ReLU unit; differences across it are only valid if unchanged."""
    tensors = model.forward(batch)[2].tensors
    return [tensors[k] > 0 for k in ("z1", "z2") if k in tensors]


def numeric_grad(model, batch, labels, name, eps=1e-5, entries=None, skip_kinks=False):
    """Central differences of the mean loss for (a subset of) one parameter.

    With ``skip_kinks`` entries whose perturbation flips a ReLU are left out
    of the returned dict.
    """
    w = model.params[name]
    flat = w.reshape(-1)
    idx = range(flat.size) if entries is None else entries
    base = relu_masks(model, batch) if skip_kinks else None
    out = {}
    for i in idx:
        old = flat[i]
        crossed = False
        flat[i] = old + eps
        up = model.loss(batch, labels)
        if skip_kinks:
            crossed |= any(np.any(a != b) for a, b in zip(base, relu_masks(model, batch)))
        flat[i] = old - eps
        down = model.loss(batch, labels)
        if skip_kinks:
            crossed |= any(np.any(a != b) for a, b in zip(base, relu_masks(model, batch)))
        flat[i] = old
        if not crossed:
            out[i] = (up - down) / (2 * eps)
    return out


def rel_error(a, b, floor=1e-10, atol=0.0):
    """Relative error; pairs tinier than ``floor`` or closer than ``atol`` count as equal."""
    scale = abs(a) + abs(b)
    if scale < floor or abs(a - b) <= atol:
        return 0.0
    return abs(a - b) / scale


def worst_grad_error(model, batch, labels, eps=1e-5, sample=None, rng=None,
                     skip_kinks=False, floor=1e-10, atol=0.0, skipped=None):
    """Worst relative error per parameter; ``skipped`` (a list) collects excluded entries."""
    from embcompress.models import dense_grad
    _, _, trace = model.forward(batch)
    grads = model.backward(trace, labels)
    worst = {}
    for name, w in model.params.items():
        analytic = dense_grad(model, grads, name).reshape(-1)
        entries = None
        if sample is not None and w.size > sample:
            entries = rng.choice(w.size, size=sample, replace=False)
        num = numeric_grad(model, batch, labels, name, eps, entries, skip_kinks)
        if skipped is not None:
            total = w.size if entries is None else len(entries)
            skipped.extend([name] * (total - len(num)))
        worst[name] = max((rel_error(analytic[i], g, floor, atol) for i, g in num.items()),
                          default=0.0)
    return worst
