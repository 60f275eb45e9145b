import numpy as np
import pytest

from embcompress.data import (UNK, DataError, Dataset, Sentence, Vocabulary, batches,
                              build_vocab, load_tsv, make_synthetic, tokenize)


def test_tokenize():
    assert tokenize("It's a GOOD film, isn't it?") == [
        "it", "'s", "a", "good", "film", ",", "isn", "'t", "it", "?"]
    assert tokenize("   ") == []


def test_build_vocab_order_and_min_count():
    v = build_vocab(["b a a", "c a b", "d"], min_count=1)
    assert v.itos == [UNK, "a", "b", "c", "d"]
    v2 = build_vocab(["b a a", "c a b", "d"], min_count=2)
    assert v2.itos == [UNK, "a", "b"]
    assert v2.encode(["a", "zzz"]) == [1, 0]


def test_vocabulary_roundtrip(tmp_path):
    v = Vocabulary([UNK, "x", "y z", "'s"])
    v.save(tmp_path / "v.txt")
    assert Vocabulary.load(tmp_path / "v.txt").itos == v.itos


def test_vocabulary_validation():
    with pytest.raises(DataError):
        Vocabulary(["a", UNK])
    with pytest.raises(DataError):
        Vocabulary([UNK, "a", "a"])


def test_load_tsv(tmp_path):
    tr = tmp_path / "train.tsv"
    tr.write_text("1\tGreat movie!\n0\tbad movie\n\n1\tgreat\n", encoding="utf-8")
    te = tmp_path / "test.tsv"
    te.write_text("0\tawful movie\n1\t...?\n", encoding="utf-8")
    train = load_tsv(tr)
    assert len(train) == 3 and train.num_classes == 2 and train.split == "train"
    assert train.vocab.itos[:3] == [UNK, "great", "movie"]
    test = load_tsv(te, train.vocab, 2, "test")
    assert list(test.sentences[0].token_ids) == [0, train.vocab.index("movie")]
    assert list(test.labels) == [0, 1]
    short = load_tsv(tr, max_len=1)
    assert all(len(s.token_ids) == 1 for s in short.sentences)


def test_empty_text_maps_to_unk(tmp_path):
    f = tmp_path / "t.tsv"
    f.write_text("0\thello\n1\t\n", encoding="utf-8")
    ds = load_tsv(f)
    assert list(ds.sentences[1].token_ids) == [0]


@pytest.mark.parametrize("text,line", [("1\tok\nno tab here\n", ":2:"), ("x\tword\n", ":1:"),
                                       ("-1\tword\n", ":1:")])
def test_load_tsv_errors(tmp_path, text, line):
    f = tmp_path / "bad.tsv"
    f.write_text(text, encoding="utf-8")
    with pytest.raises(DataError, match=line):
        load_tsv(f)


def test_dataset_validation():
    v = Vocabulary([UNK, "a"])
    with pytest.raises(DataError):
        Dataset([Sentence([1], 2)], 2, v)
    with pytest.raises(DataError):
        Dataset([Sentence([5], 0)], 2, v)
    with pytest.raises(DataError):
        Dataset([], 2, v)
    with pytest.raises(DataError):
        Sentence([], 0)


def test_make_synthetic_shape_and_determinism():
    tr, dv, te = make_synthetic(4, 500, 625, sep=1.0, seed=0)
    assert (len(tr), len(dv), len(te)) == (2000, 250, 250)
    assert len(tr.vocab) == 500
    tr2, _, _ = make_synthetic(4, 500, 625, sep=1.0, seed=0)
    assert all(np.array_equal(a.token_ids, b.token_ids) and a.label == b.label
               for a, b in zip(tr.sentences, tr2.sentences))


def test_make_synthetic_sep_one_is_token_disjoint():
    tr, dv, te = make_synthetic(3, 100, 50, sep=1.0, seed=2)
    owner = {}
    for ds in (tr, dv, te):
        for s in ds.sentences:
            for t in s.token_ids:
                assert owner.setdefault(int(t), s.label) == s.label


def test_make_synthetic_sep_zero_shares_pool():
    tr, _, _ = make_synthetic(2, 31, 100, sep=0.0, seed=0)
    pools = [set(), set()]
    for s in tr.sentences:
        pools[s.label].update(s.token_ids.tolist())
    assert pools[0] == pools[1] and max(pools[0]) <= 10


def test_make_synthetic_errors():
    with pytest.raises(DataError):
        make_synthetic(2, 100, 10, sep=1.5)
    with pytest.raises(DataError):
        make_synthetic(5, 4, 10)


def test_batches_deterministic_and_complete(tiny_corpus):
    tr = tiny_corpus[0]
    a = batches(tr, 7, seed=3, epoch=1)
    b = batches(tr, 7, seed=3, epoch=1)
    c = batches(tr, 7, seed=3, epoch=2)
    ids = lambda bs: [id(s) for batch in bs for s in batch]
    assert ids(a) == ids(b) and ids(a) != ids(c)
    assert sorted(ids(a)) == sorted(id(s) for s in tr.sentences)
    assert all(len(x) == 7 for x in a[:-1]) and 1 <= len(a[-1]) <= 7
