import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fstc.errors import ConfigError, IngestionError, SamplingError
from fstc.textpipe import (
    build_vocab,
    fingerprint,
    kshot_subset,
    load_20news,
    merge,
    restrict_classes,
    split_meta_classes,
    subsample_fraction,
    tfidf_featurize,
    tokenize,
    train_test_split,
)

from conftest import make_corpus
from oracles import brute_tfidf


def write_tree(root, layout):
    for rel, text in layout.items():
        path = root / rel
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(text if isinstance(text, bytes) else text.encode())
    return root


# ---------------------------------------------------------------- ingestion


def test_two_classes_three_files(tmp_path):
    layout = {f"{c}/{i}": f"From: x\nSubject: {c}\n\nbody {c} text {i}" for c in ("alt.a", "sci.b") for i in range(3)}
    corpus = load_20news(write_tree(tmp_path, layout))
    assert len(corpus) == 6 and corpus.num_classes == 2
    assert corpus.class_names == ["alt.a", "sci.b"]
    assert corpus.ids[:3] == ["alt.a/0", "alt.a/1", "alt.a/2"]
    assert corpus.documents[0].text == "body alt.a text 0"
    assert corpus.labels.tolist() == [0, 0, 0, 1, 1, 1]


def test_headers_are_stripped_to_first_blank_line(tmp_path):
    corpus = load_20news(write_tree(tmp_path, {"a/1": "Newsgroups: secret\n\nkept\n\nalso kept", "b/1": "only header"}))
    assert corpus.documents[0].text == "kept\n\nalso kept"
    assert corpus.documents[1].text == ""


def test_bydate_halves_are_merged(tmp_path):
    layout = {
        "20news-bydate-train/a/1": "h\n\ntrain a",
        "20news-bydate-train/b/2": "h\n\ntrain b",
        "20news-bydate-test/a/3": "h\n\ntest a",
    }
    corpus = load_20news(write_tree(tmp_path, layout))
    assert corpus.class_counts() == {"a": 2, "b": 1}
    assert corpus.ids == ["20news-bydate-train/a/1", "20news-bydate-test/a/3", "20news-bydate-train/b/2"]


def test_undecodable_bytes_are_replaced(tmp_path, caplog):
    corpus = load_20news(write_tree(tmp_path, {"a/1": b"h\n\ncaf\xe9 ok", "b/1": "h\n\nfine"}))
    assert "�" in corpus.documents[0].text
    assert "not valid UTF-8" in caplog.text


def test_ingestion_errors(tmp_path):
    with pytest.raises(IngestionError, match="does not exist"):
        load_20news(tmp_path / "missing")
    with pytest.raises(IngestionError, match="no class directories"):
        load_20news(tmp_path)
    (tmp_path / "empty_class").mkdir()
    with pytest.raises(IngestionError, match="empty_class"):
        load_20news(tmp_path)


def test_synthetic_corpus_loads(small_corpus_dir):
    corpus = load_20news(small_corpus_dir)
    assert corpus.num_classes == 20 and len(corpus) == 800
    assert all(n == 40 for n in corpus.class_counts().values())
    # the header names the class; stripping must remove it
    assert not any("Newsgroups" in d.text for d in corpus.documents)


# ---------------------------------------------------------------- tokens and vocabulary


@pytest.mark.parametrize(
    "text, tokens",
    [("Hello, world!", ["hello", "world"]), ("a I 42 ok", ["ok"]), ("", []), ("x" * 31 + " b2b", ["b2b"])],
)
def test_tokenize(text, tokens):
    assert tokenize(text) == tokens


def test_single_letter_docs_give_empty_vocab():
    with pytest.raises(ConfigError, match="empty"):
        build_vocab(make_corpus({"c": ["a b", "b c", "b"]}), min_df=2)


def test_min_df_keeps_shared_terms():
    vocab = build_vocab(make_corpus({"c": ["aa bb", "bb cc", "bb"]}), min_df=2)
    assert vocab.terms == ("bb",) and vocab.df == (3,) and vocab.num_docs == 3


def test_max_size_keeps_highest_df_then_lexicographic():
    texts = ["hi lo"] * 3 + ["hi"] * 2 + ["zz"] * 3
    assert build_vocab(make_corpus({"c": texts}), min_df=1, max_size=1).terms == ("hi",)
    # lo and zz tie at df 3: lexicographic order keeps lo
    assert build_vocab(make_corpus({"c": texts}), min_df=1, max_size=2).terms == ("hi", "lo")


def test_min_df_above_corpus_size_is_a_config_error():
    with pytest.raises(ConfigError):
        build_vocab(make_corpus({"c": ["aa bb", "aa"]}), min_df=3)


# ---------------------------------------------------------------- TF-IDF


TOY_CORPORA = [
    ["the cat sat", "the dog sat down", "a cat and a dog"],
    ["alpha beta beta gamma", "beta gamma", "gamma delta delta delta", "alpha", "epsilon beta"],
    ["one two three", "two three four", "three four five", "four five six", "five six seven",
     "six seven eight", "seven eight nine", "eight nine ten", "nine ten eleven", "ten eleven twelve"],
    ["repeat repeat repeat word", "word other", "other other repeat", "nothing here", "word word"],
]


@pytest.mark.parametrize("texts", TOY_CORPORA)
@pytest.mark.parametrize("min_df, max_size", [(1, 100), (2, 100), (1, 3)])
def test_tfidf_matches_brute_force(texts, min_df, max_size):
    corpus = make_corpus({"c": texts})
    terms, expect = brute_tfidf(texts, min_df, max_size)
    vocab = build_vocab(corpus, min_df=min_df, max_size=max_size)
    got = tfidf_featurize(corpus, vocab).features
    assert list(vocab.terms) == terms
    assert np.array_equal(got, expect)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.lists(st.sampled_from(["ab", "cd", "ef", "gh", "ij", "kl"]), min_size=0, max_size=8), min_size=2, max_size=10))
def test_tfidf_matches_brute_force_on_generated_corpora(docs):
    texts = [" ".join(d) for d in docs]
    try:
        terms, expect = brute_tfidf(texts, 1, 1000)
        vocab = build_vocab(make_corpus({"c": texts}), min_df=1, max_size=1000)
    except ConfigError:
        assert not any(docs)
        return
    got = tfidf_featurize(make_corpus({"c": texts}), vocab).features
    assert list(vocab.terms) == terms
    assert np.array_equal(got, expect)
    norms = np.linalg.norm(got, axis=1)
    assert np.all((np.abs(norms - 1) < 1e-12) | (norms == 0))


def test_term_in_every_document_weighs_exactly_zero():
    texts = ["common aa", "common bb", "common aa bb", "common"]
    corpus = make_corpus({"c": texts})
    vocab = build_vocab(corpus, min_df=1)
    x = tfidf_featurize(corpus, vocab).features
    col = vocab.index["common"]
    assert np.all(x[:, col] == 0.0)
    assert np.all(x[3] == 0.0)  # only the all-docs term: zero row kept


def test_single_document_corpus_gives_zero_row():
    corpus = make_corpus({"c": ["lonely words here"]})
    x = tfidf_featurize(corpus, build_vocab(corpus, min_df=1)).features
    assert x.shape == (1, 3) and np.all(x == 0.0)


def test_out_of_vocabulary_terms_are_ignored():
    train = make_corpus({"c": ["aa bb", "bb cc"]})
    vocab = build_vocab(train, min_df=1)
    other = make_corpus({"c": ["zz zz zz"]})
    assert np.all(tfidf_featurize(other, vocab).features == 0.0)


def test_fingerprint_depends_on_order_and_terms():
    assert fingerprint(["a", "b"], ["t"]) != fingerprint(["b", "a"], ["t"])
    assert fingerprint(["a", "b"], ["t"]) != fingerprint(["a", "b"], ["u"])
    assert fingerprint(["ab"]) != fingerprint(["a", "b"])
    assert len(fingerprint([])) == 64


# ---------------------------------------------------------------- splits


def many(n, prefix="w"):
    return [f"{prefix}{i} common" for i in range(n)]


def test_subsample_rounding_examples():
    corpus = make_corpus({"big": many(100), "tiny": many(3), "mid": many(30)})
    counts = subsample_fraction(corpus, 0.05, seed=0).class_counts()
    assert counts == {"big": 5, "tiny": 1, "mid": 2}  # 1.5 rounds half up
    assert subsample_fraction(corpus, 1.0, seed=0).ids == corpus.ids


def test_subsample_is_nested_and_deterministic():
    corpus = make_corpus({"a": many(57), "b": many(41)})
    for seed in range(5):
        few = set(subsample_fraction(corpus, 0.05, seed).ids)
        half = set(subsample_fraction(corpus, 0.5, seed).ids)
        assert few <= half <= set(corpus.ids)
        assert subsample_fraction(corpus, 0.5, seed).ids == subsample_fraction(corpus, 0.5, seed).ids
    assert subsample_fraction(corpus, 0.5, 0).ids != subsample_fraction(corpus, 0.5, 1).ids


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(1, 60), min_size=1, max_size=5), st.floats(0.01, 1.0), st.integers(0, 2**32))
def test_subsample_counts_follow_rounding_rule(sizes, frac, seed):
    corpus = make_corpus({f"c{i}": many(n) for i, n in enumerate(sizes)})
    counts = subsample_fraction(corpus, frac, seed).class_counts()
    for i, n in enumerate(sizes):
        assert counts[f"c{i}"] == (n if frac == 1.0 else max(1, int(np.floor(frac * n + 0.5))))


def test_subsample_rejects_bad_fraction():
    corpus = make_corpus({"a": many(3)})
    for bad in (0.0, -0.1, 1.5):
        with pytest.raises(ConfigError):
            subsample_fraction(corpus, bad, 0)


def test_kshot_examples():
    corpus = make_corpus({f"c{i}": many(8 + i) for i in range(20)})
    assert len(kshot_subset(corpus, 5, seed=1)) == 100
    smallest = kshot_subset(corpus, 8, seed=2)
    assert {d.id for d in smallest.documents if d.class_name == "c0"} == {d.id for d in corpus.documents if d.class_name == "c0"}
    with pytest.raises(SamplingError):
        kshot_subset(corpus, 9, seed=0)


def test_split_meta_classes():
    names = [f"c{i}" for i in range(20)]
    corpus = make_corpus({n: many(2) for n in names})
    train, test = split_meta_classes(corpus, names[:15], names[15:])
    assert (train.num_classes, test.num_classes) == (15, 5)
    for part in (train, test):
        assert sorted(part.label_map.values()) == list(range(part.num_classes))
    with pytest.raises(ConfigError, match="overlap"):
        split_meta_classes(corpus, names[:15], names[14:])


def test_restrict_classes_redensifies_in_given_order():
    corpus = make_corpus({"a": many(2), "b": many(2), "c": many(2)})
    sub = restrict_classes(corpus, ["c", "a"], "target_train")
    assert sub.label_map == {"c": 0, "a": 1}
    assert all(d.class_name in ("a", "c") for d in sub.documents)
    with pytest.raises(ConfigError):
        restrict_classes(corpus, ["zzz"], "source")


def test_train_test_split_is_stratified_and_disjoint():
    corpus = make_corpus({"a": many(10), "b": many(7), "c": many(2)})
    train, test = train_test_split(corpus, 0.3, seed=4)
    assert not set(train.ids) & set(test.ids)
    assert sorted(train.ids + test.ids) == sorted(corpus.ids)
    assert test.class_counts() == {"a": 3, "b": 2, "c": 1}
    assert train_test_split(corpus, 0.3, seed=4)[1].ids == test.ids
    with pytest.raises(SamplingError):
        train_test_split(make_corpus({"a": many(1), "b": many(3)}), 0.3, 0)


def test_merge_keeps_first_label_map_order():
    a = make_corpus({"x": many(1), "y": many(1)})
    b = make_corpus({"y": many(1, "v"), "z": many(1, "v")})
    m = merge([a, b])
    assert m.label_map == {"x": 0, "y": 1, "z": 2} and len(m) == 4
