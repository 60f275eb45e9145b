"""DAN and LSTM sentence classifiers with hand-written backward passes.

Both models read tokens through an embedding that is either a single table
(``embedding``) or a factor pair (``embedding`` = W_a, ``w_b`` = W_b, a
bias-free linear layer applied right after the lookup). Forward passes work on
a batch of variable-length token-id arrays; gradients are of the mean
cross-entropy over the batch. L2 decay is applied by the optimizer, not here.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from .data import Sentence
from .embedding import EmbeddingTable, FactorizedEmbedding, factorize

DROPOUT = 0.4
DAN_HIDDEN = (1024, 512)
LSTM_HIDDEN = 168
PROB_FLOOR = 1e-12


class ModelError(ValueError):
    pass


@dataclass
class SparseRows:
    """Gradient that is zero except on ``rows`` (sorted, unique)."""

    rows: np.ndarray
    values: np.ndarray

    def to_dense(self, shape) -> np.ndarray:
        out = np.zeros(shape)
        out[self.rows] = self.values
        return out


@dataclass
class ForwardTrace:
    kind: str
    model_id: int
    ids: list
    tensors: dict = field(default_factory=dict)


def glorot(rng, fan_in, fan_out, shape=None):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape or (fan_in, fan_out))


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def sigmoid(x):
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def cross_entropy(probs, label: int) -> float:
    return float(-np.log(max(float(probs[label]), PROB_FLOOR)))


def _embedding_grad(ids_flat: np.ndarray, contrib: np.ndarray) -> SparseRows:
    rows, inv = np.unique(ids_flat, return_inverse=True)
    values = np.zeros((len(rows), contrib.shape[1]))
    np.add.at(values, inv, contrib)
    return SparseRows(rows, values)


def _dropout(x, rate, rng):
    if rate <= 0.0:
        return x, None
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return x * mask, mask


class Model:
    """Shared plumbing: parameter dict, embedding access, evaluation helpers."""

    kind = ""

    def __init__(self, params: dict, dropout: float = DROPOUT):
        self.params = params
        self.dropout = dropout
        self._check()

    def _check(self):
        emb = self.params["embedding"]
        if "w_b" in self.params and self.params["w_b"].shape[0] != emb.shape[1]:
            raise ModelError("w_b rows must equal the embedding width")

    @property
    def factorized(self) -> bool:
        return "w_b" in self.params

    @property
    def vocab_size(self) -> int:
        return self.params["embedding"].shape[0]

    @property
    def input_width(self) -> int:
        """Width of the vector entering the first layer after the embedding."""
        if self.factorized:
            return self.params["w_b"].shape[1]
        return self.params["embedding"].shape[1]

    @property
    def num_classes(self) -> int:
        return self.params["out.b"].shape[0]

    def embedding_view(self):
        if self.factorized:
            return FactorizedEmbedding(self.params["embedding"], self.params["w_b"])
        return EmbeddingTable(self.params["embedding"])

    def copy(self) -> "Model":
        return copy.deepcopy(self)

    def num_params(self) -> int:
        return sum(v.size for v in self.params.values())

    def _validate_ids(self, batch):
        out = []
        for ids in batch:
            ids = np.asarray(ids, dtype=np.int64)
            if ids.ndim != 1 or len(ids) == 0:
                raise ModelError("each sentence needs at least one token")
            if ids.min() < 0 or ids.max() >= self.vocab_size:
                raise ModelError(f"token id outside [0, {self.vocab_size})")
            out.append(ids)
        return out

    def forward(self, batch, train: bool = False, rng=None):
        """Return ``(logits, probs, trace)`` for a list of token-id arrays."""
        raise NotImplementedError

    def backward(self, trace: ForwardTrace, labels) -> dict:
        raise NotImplementedError

    def loss(self, batch, labels) -> float:
        _, probs, _ = self.forward(batch)
        return float(np.mean([cross_entropy(p, y) for p, y in zip(probs, labels)]))

    def predict_proba(self, batch, chunk: int = 256) -> np.ndarray:
        parts = [self.forward(batch[i:i + chunk])[1] for i in range(0, len(batch), chunk)]
        return np.concatenate(parts, axis=0)

    def predict(self, batch) -> np.ndarray:
        return np.argmax(self.predict_proba(batch), axis=1)

    def compress(self, p: float) -> "Model":
        """Copy of this model with the embedding replaced by its SVD factor pair."""
        if self.factorized:
            raise ModelError("embedding is already factorized")
        fe = factorize(EmbeddingTable(self.params["embedding"]), p)
        params = {k: v.copy() for k, v in self.params.items()}
        params["embedding"] = fe.w_a
        params["w_b"] = fe.w_b
        return type(self)(_ordered(params, self.param_order(True)), dropout=self.dropout)

    @classmethod
    def param_order(cls, factorized: bool) -> list[str]:
        raise NotImplementedError


def _ordered(params, names):
    return {n: params[n] for n in names}


def _embedding_params(embedding):
    if isinstance(embedding, FactorizedEmbedding):
        return {"embedding": embedding.w_a.copy(), "w_b": embedding.w_b.copy()}, embedding.dim
    return {"embedding": embedding.weights.copy()}, embedding.dim


class DanModel(Model):
    """Deep averaging network: mean embedding, two ReLU layers, softmax head."""

    kind = "dan"

    @classmethod
    def param_order(cls, factorized):
        head = ["embedding", "w_b"] if factorized else ["embedding"]
        return head + ["fc1.w", "fc1.b", "fc2.w", "fc2.b", "out.w", "out.b"]

    @classmethod
    def create(cls, embedding, num_classes: int, hidden=DAN_HIDDEN, seed: int = 0,
               dropout: float = DROPOUT) -> "DanModel":
        rng = np.random.default_rng(seed)
        params, width = _embedding_params(embedding)
        h1, h2 = hidden
        params.update({
            "fc1.w": glorot(rng, width, h1), "fc1.b": np.zeros(h1),
            "fc2.w": glorot(rng, h1, h2), "fc2.b": np.zeros(h2),
            "out.w": glorot(rng, h2, num_classes), "out.b": np.zeros(num_classes),
        })
        return cls(_ordered(params, cls.param_order("w_b" in params)), dropout=dropout)

    def forward(self, batch, train=False, rng=None):
        ids = self._validate_ids(batch)
        P = self.params
        lengths = np.array([len(s) for s in ids])
        flat = np.concatenate(ids)
        offsets = np.concatenate(([0], np.cumsum(lengths)[:-1]))
        # averaging before w_b: the mean commutes with the linear map
        means = np.add.reduceat(P["embedding"][flat], offsets, axis=0) / lengths[:, None]
        x = means @ P["w_b"] if self.factorized else means
        rate = self.dropout if train else 0.0
        if rate > 0.0 and rng is None:
            raise ModelError("train-mode dropout needs an rng")
        z1 = x @ P["fc1.w"] + P["fc1.b"]
        h1, m1 = _dropout(np.maximum(z1, 0.0), rate, rng)
        z2 = h1 @ P["fc2.w"] + P["fc2.b"]
        h2, m2 = _dropout(np.maximum(z2, 0.0), rate, rng)
        logits = h2 @ P["out.w"] + P["out.b"]
        probs = softmax(logits)
        trace = ForwardTrace("dan", id(self), ids, dict(
            flat=flat, lengths=lengths, means=means, x=x, z1=z1, h1=h1, m1=m1,
            z2=z2, h2=h2, m2=m2, probs=probs))
        return logits, probs, trace

    def backward(self, trace, labels):
        if trace.kind != "dan" or trace.model_id != id(self):
            raise ModelError("trace was not produced by this model")
        P, t = self.params, trace.tensors
        labels = np.asarray(labels)
        B = len(labels)
        d = t["probs"].copy()
        d[np.arange(B), labels] -= 1.0
        d /= B
        g = {"out.w": t["h2"].T @ d, "out.b": d.sum(0)}
        dh2 = d @ P["out.w"].T
        if t["m2"] is not None:
            dh2 *= t["m2"]
        dz2 = dh2 * (t["z2"] > 0)
        g["fc2.w"] = t["h1"].T @ dz2
        g["fc2.b"] = dz2.sum(0)
        dh1 = dz2 @ P["fc2.w"].T
        if t["m1"] is not None:
            dh1 *= t["m1"]
        dz1 = dh1 * (t["z1"] > 0)
        g["fc1.w"] = t["x"].T @ dz1
        g["fc1.b"] = dz1.sum(0)
        dx = dz1 @ P["fc1.w"].T
        if self.factorized:
            g["w_b"] = t["means"].T @ dx
            dx = dx @ P["w_b"].T
        per_token = np.repeat(dx / t["lengths"][:, None], t["lengths"], axis=0)
        g["embedding"] = _embedding_grad(t["flat"], per_token)
        return g


class LstmModel(Model):
    """Single-layer LSTM; the final hidden state feeds the softmax head.

    Gate blocks in ``lstm.w_x``/``lstm.w_h``/``lstm.b`` are ordered
    input, forget, output, candidate.
    """

    kind = "lstm"

    @classmethod
    def param_order(cls, factorized):
        head = ["embedding", "w_b"] if factorized else ["embedding"]
        return head + ["lstm.w_x", "lstm.w_h", "lstm.b", "out.w", "out.b"]

    @classmethod
    def create(cls, embedding, num_classes: int, hidden: int = LSTM_HIDDEN, seed: int = 0,
               dropout: float = DROPOUT) -> "LstmModel":
        rng = np.random.default_rng(seed)
        params, width = _embedding_params(embedding)
        H = hidden
        b = np.zeros(4 * H)
        b[H:2 * H] = 1.0
        params.update({
            "lstm.w_x": np.concatenate([glorot(rng, width, H) for _ in range(4)], axis=1),
            "lstm.w_h": np.concatenate([glorot(rng, H, H) for _ in range(4)], axis=1),
            "lstm.b": b,
            "out.w": glorot(rng, H, num_classes), "out.b": np.zeros(num_classes),
        })
        return cls(_ordered(params, cls.param_order("w_b" in params)), dropout=dropout)

    @property
    def hidden(self) -> int:
        return self.params["lstm.w_h"].shape[0]

    def forward(self, batch, train=False, rng=None):
        ids = self._validate_ids(batch)
        P = self.params
        H = self.hidden
        B = len(ids)
        lengths = np.array([len(s) for s in ids])
        T = int(lengths.max())
        padded = np.zeros((B, T), dtype=np.int64)
        mask = np.zeros((B, T))
        for b, s in enumerate(ids):
            padded[b, :len(s)] = s
            mask[b, :len(s)] = 1.0
        emb = P["embedding"][padded]
        x = emb @ P["w_b"] if self.factorized else emb
        xz = x @ P["lstm.w_x"] + P["lstm.b"]
        h = np.zeros((B, H))
        c = np.zeros((B, H))
        steps = []
        for t in range(T):
            z = xz[:, t] + h @ P["lstm.w_h"]
            gi, gf, go = (sigmoid(z[:, j * H:(j + 1) * H]) for j in range(3))
            gg = np.tanh(z[:, 3 * H:])
            c_new = gf * c + gi * gg
            tc = np.tanh(c_new)
            h_new = go * tc
            m = mask[:, t:t + 1]
            steps.append((h, c, gi, gf, go, gg, tc))
            h = m * h_new + (1.0 - m) * h
            c = m * c_new + (1.0 - m) * c
        rate = self.dropout if train else 0.0
        if rate > 0.0 and rng is None:
            raise ModelError("train-mode dropout needs an rng")
        hd, mdrop = _dropout(h, rate, rng)
        logits = hd @ P["out.w"] + P["out.b"]
        probs = softmax(logits)
        trace = ForwardTrace("lstm", id(self), ids, dict(
            padded=padded, mask=mask, emb=emb, x=x, steps=steps, hd=hd, mdrop=mdrop,
            probs=probs))
        return logits, probs, trace

    def backward(self, trace, labels):
        if trace.kind != "lstm" or trace.model_id != id(self):
            raise ModelError("trace was not produced by this model")
        P, t = self.params, trace.tensors
        H = self.hidden
        labels = np.asarray(labels)
        B = len(labels)
        d = t["probs"].copy()
        d[np.arange(B), labels] -= 1.0
        d /= B
        g = {"out.w": t["hd"].T @ d, "out.b": d.sum(0)}
        dh = d @ P["out.w"].T
        if t["mdrop"] is not None:
            dh *= t["mdrop"]
        dc = np.zeros((B, H))
        mask, x = t["mask"], t["x"]
        T = mask.shape[1]
        gwx = np.zeros_like(P["lstm.w_x"])
        gwh = np.zeros_like(P["lstm.w_h"])
        gb = np.zeros_like(P["lstm.b"])
        dx = np.zeros_like(x)
        for step in range(T - 1, -1, -1):
            h_prev, c_prev, gi, gf, go, gg, tc = t["steps"][step]
            m = mask[:, step:step + 1]
            dh_new, dc_new = m * dh, m * dc
            dc_tot = dc_new + dh_new * go * (1.0 - tc * tc)
            dz = np.concatenate([
                dc_tot * gg * gi * (1.0 - gi),
                dc_tot * c_prev * gf * (1.0 - gf),
                dh_new * tc * go * (1.0 - go),
                dc_tot * gi * (1.0 - gg * gg),
            ], axis=1)
            gwx += x[:, step].T @ dz
            gwh += h_prev.T @ dz
            gb += dz.sum(0)
            dx[:, step] = dz @ P["lstm.w_x"].T
            dh = dz @ P["lstm.w_h"].T + (1.0 - m) * dh
            dc = dc_tot * gf + (1.0 - m) * dc
        g["lstm.w_x"], g["lstm.w_h"], g["lstm.b"] = gwx, gwh, gb
        valid = mask.reshape(-1) > 0
        if self.factorized:
            emb = t["emb"].reshape(-1, t["emb"].shape[-1])[valid]
            dxv = dx.reshape(-1, dx.shape[-1])[valid]
            g["w_b"] = emb.T @ dxv
            demb = dxv @ P["w_b"].T
        else:
            demb = dx.reshape(-1, dx.shape[-1])[valid]
        g["embedding"] = _embedding_grad(t["padded"].reshape(-1)[valid], demb)
        return g


MODEL_KINDS = {"dan": DanModel, "lstm": LstmModel}


def build_model(kind: str, embedding, num_classes: int, seed: int = 0, **kwargs) -> Model:
    try:
        cls = MODEL_KINDS[kind]
    except KeyError:
        raise ModelError(f"unknown model kind {kind!r}") from None
    return cls.create(embedding, num_classes, seed=seed, **kwargs)


def dense_grad(model: Model, grads: dict, name: str) -> np.ndarray:
    g = grads[name]
    if isinstance(g, SparseRows):
        return g.to_dense(model.params[name].shape)
    return g


# single-sentence entry points

def dan_forward(model: DanModel, s: Sentence, train_mode: bool = False, rng=None):
    if not isinstance(model, DanModel):
        raise ModelError("dan_forward needs a DanModel")
    logits, probs, trace = model.forward([s.token_ids], train=train_mode, rng=rng)
    return logits[0], probs[0], trace


def lstm_forward(model: LstmModel, s: Sentence, train_mode: bool = False, rng=None):
    if not isinstance(model, LstmModel):
        raise ModelError("lstm_forward needs an LstmModel")
    logits, probs, trace = model.forward([s.token_ids], train=train_mode, rng=rng)
    return logits[0], probs[0], trace


def backward(model: Model, s: Sentence, trace: ForwardTrace) -> dict:
    return model.backward(trace, [s.label])


def predict(model: Model, s: Sentence) -> int:
    return int(model.predict([s.token_ids])[0])
