"""Tokenization, vocabularies, labeled datasets and batching."""
from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

UNK = "<unk>"
_TOKEN_RE = re.compile(r"'\w+|\w+|[^\w\s]")


class DataError(ValueError):
    pass


def tokenize(text: str) -> list[str]:
    """Lowercase and split into words, clitics (``'s``) and punctuation marks.

    >>> tokenize("It's good.")
    ['it', "'s", 'good', '.']
    """
    return _TOKEN_RE.findall(text.lower())


@dataclass
class Vocabulary:
    itos: list[str]
    stoi: dict[str, int] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if not self.itos or self.itos[0] != UNK:
            raise DataError(f"index 0 must be {UNK!r}")
        self.stoi = {tok: i for i, tok in enumerate(self.itos)}
        if len(self.stoi) != len(self.itos):
            raise DataError("duplicate tokens in vocabulary")

    def __len__(self):
        return len(self.itos)

    def __contains__(self, token):
        return token in self.stoi

    def index(self, token: str) -> int:
        return self.stoi.get(token, 0)

    def encode(self, tokens) -> list[int]:
        return [self.stoi.get(t, 0) for t in tokens]

    def save(self, path):
        Path(path).write_text("".join(t + "\n" for t in self.itos), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        text = Path(path).read_text(encoding="utf-8")
        return cls(text.split("\n")[:-1])


def build_vocab(corpus, min_count: int = 1) -> Vocabulary:
    """Build a vocabulary from raw training sentences.

    Tokens seen at least ``min_count`` times are indexed by descending
    frequency, ties broken lexicographically; index 0 is reserved for UNK.
    """
    counts = Counter()
    for text in corpus:
        counts.update(tokenize(text))
    kept = sorted((t for t, c in counts.items() if c >= min_count and t != UNK),
                  key=lambda t: (-counts[t], t))
    return Vocabulary([UNK] + kept)


@dataclass
class Sentence:
    token_ids: np.ndarray
    label: int

    def __post_init__(self):
        self.token_ids = np.asarray(self.token_ids, dtype=np.int64)
        if self.token_ids.ndim != 1 or len(self.token_ids) == 0:
            raise DataError("a sentence needs at least one token")


@dataclass
class Dataset:
    sentences: list[Sentence]
    num_classes: int
    vocab: Vocabulary
    split: str = "train"

    def __post_init__(self):
        if not self.sentences:
            raise DataError(f"{self.split} dataset is empty")
        size = len(self.vocab)
        for i, s in enumerate(self.sentences):
            if not 0 <= s.label < self.num_classes:
                raise DataError(f"sentence {i}: label {s.label} outside [0, {self.num_classes})")
            if s.token_ids.min() < 0 or s.token_ids.max() >= size:
                raise DataError(f"sentence {i}: token id outside vocabulary of size {size}")

    def __len__(self):
        return len(self.sentences)

    @property
    def labels(self) -> np.ndarray:
        return np.array([s.label for s in self.sentences], dtype=np.int64)


def _read_tsv(path):
    rows = []
    with open(path, encoding="utf-8", newline="\n") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            label, sep, text = line.partition("\t")
            if not sep:
                raise DataError(f"{path}:{lineno}: expected 'label<TAB>text'")
            if not label.isdigit():
                raise DataError(f"{path}:{lineno}: label {label!r} is not a non-negative integer")
            rows.append((int(label), text))
    return rows


def load_tsv(path, vocab: Vocabulary | None = None, num_classes: int | None = None,
             split: str | None = None, min_count: int = 1, max_len: int | None = None) -> Dataset:
    """Load a ``label<TAB>text`` file.

    Without ``vocab`` the file is treated as the training split and a
    vocabulary is built from it.
    """
    rows = _read_tsv(path)
    if not rows:
        raise DataError(f"{path}: no examples")
    if vocab is None:
        vocab = build_vocab((text for _, text in rows), min_count=min_count)
        split = split or "train"
    sentences = []
    for label, text in rows:
        ids = vocab.encode(tokenize(text)) or [0]
        if max_len is not None:
            ids = ids[:max_len]
        sentences.append(Sentence(ids, label))
    if num_classes is None:
        num_classes = max(label for label, _ in rows) + 1
    return Dataset(sentences, num_classes, vocab, split or "eval")


def make_synthetic(num_classes: int, vocab_size: int, sentences_per_class: int,
                   sep: float = 1.0, seed: int = 0, min_len: int = 5, max_len: int = 15):
    """Bag-of-words corpus with class-owned tokens and shared noise tokens.

    Token ids ``1..vocab_size-1`` are split evenly between one noise pool and
    ``num_classes`` disjoint class pools. Each token of a sentence comes from
    its class pool with probability ``sep`` and from the noise pool otherwise.
    Returns ``(train, dev, test)`` split 80/10/10.
    """
    if not 0.0 <= sep <= 1.0:
        raise DataError(f"sep must lie in [0, 1], got {sep}")
    pool = (vocab_size - 1) // (num_classes + 1)
    if pool < 1:
        raise DataError(f"vocab_size={vocab_size} too small for {num_classes} classes")
    vocab = Vocabulary([UNK] + [f"w{i}" for i in range(1, vocab_size)])
    ids = np.arange(1, vocab_size)
    noise = ids[:pool]
    owned = [ids[pool * (c + 1):pool * (c + 2)] for c in range(num_classes)]

    rng = np.random.default_rng(seed)
    sentences = []
    for c in range(num_classes):
        for _ in range(sentences_per_class):
            length = int(rng.integers(min_len, max_len + 1))
            from_class = rng.random(length) < sep
            toks = np.where(from_class, rng.choice(owned[c], length), rng.choice(noise, length))
            sentences.append(Sentence(toks, c))
    order = rng.permutation(len(sentences))
    sentences = [sentences[i] for i in order]
    n_train = int(round(0.8 * len(sentences)))
    n_dev = int(round(0.1 * len(sentences)))
    parts = (sentences[:n_train], sentences[n_train:n_train + n_dev], sentences[n_train + n_dev:])
    return tuple(Dataset(list(p), num_classes, vocab, name)
                 for p, name in zip(parts, ("train", "dev", "test")))


def batches(dataset: Dataset, batch_size: int, seed: int, epoch: int) -> list[list[Sentence]]:
    """Shuffle with a generator keyed on ``(seed, epoch)`` and cut into batches."""
    rng = np.random.default_rng([seed, epoch])
    order = rng.permutation(len(dataset))
    return [[dataset.sentences[i] for i in order[j:j + batch_size]]
            for j in range(0, len(order), batch_size)]
