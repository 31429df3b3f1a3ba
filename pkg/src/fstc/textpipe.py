"""Corpus ingestion, tokenization, vocabulary and TF-IDF featurization.

The on-disk layout is the 20 Newsgroups "bydate" tree: one directory per
class, one plain-text file per article.  The original archive nests that
tree under ``20news-bydate-train`` / ``20news-bydate-test``; both forms are
accepted and the two halves are merged.
"""

from __future__ import annotations

import hashlib
import logging
import math
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, IngestionError, SamplingError

logger = logging.getLogger(__name__)

SPLIT_TAGS = ("source", "target_train", "target_test", "meta_train", "meta_test", "all")

_TOKEN_SPLIT = re.compile(r"[^0-9a-z]+")


@dataclass(frozen=True)
class Document:
    id: str
    text: str
    label: int
    class_name: str


@dataclass(frozen=True)
class Corpus:
    documents: tuple[Document, ...]
    label_map: dict[str, int]
    split_tag: str = "all"

    def __post_init__(self):
        if self.split_tag not in SPLIT_TAGS:
            raise ConfigError(f"unknown split tag {self.split_tag!r}")
        n = len(self.label_map)
        if sorted(self.label_map.values()) != list(range(n)):
            raise ConfigError("label indices must be dense from 0")
        seen = set()
        for doc in self.documents:
            if self.label_map.get(doc.class_name) != doc.label:
                raise ConfigError(f"document {doc.id} label disagrees with the label map")
            seen.add(doc.label)
        if len(seen) != n:
            missing = sorted(set(self.label_map) - {d.class_name for d in self.documents})
            raise ConfigError(f"classes without documents: {missing}")

    @property
    def num_classes(self) -> int:
        return len(self.label_map)

    @property
    def class_names(self) -> list[str]:
        return sorted(self.label_map, key=self.label_map.__getitem__)

    @property
    def labels(self) -> np.ndarray:
        return np.array([d.label for d in self.documents], dtype=np.int64)

    @property
    def ids(self) -> list[str]:
        return [d.id for d in self.documents]

    def __len__(self) -> int:
        return len(self.documents)

    def class_counts(self) -> dict[str, int]:
        counts = Counter(d.class_name for d in self.documents)
        return {name: counts[name] for name in self.class_names}

    def retag(self, split_tag: str) -> Corpus:
        return Corpus(self.documents, self.label_map, split_tag)

    def subset(self, indices: Iterable[int], split_tag: str | None = None) -> Corpus:
        """Documents at ``indices`` (kept in corpus order), same label map."""
        keep = sorted(set(int(i) for i in indices))
        return Corpus(
            tuple(self.documents[i] for i in keep), self.label_map, split_tag or self.split_tag
        )


@dataclass(frozen=True)
class Vocabulary:
    terms: tuple[str, ...]
    df: tuple[int, ...]
    num_docs: int
    index: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if list(self.terms) != sorted(set(self.terms)):
            raise ConfigError("vocabulary terms must be unique and sorted")
        object.__setattr__(self, "index", {t: i for i, t in enumerate(self.terms)})

    def __len__(self) -> int:
        return len(self.terms)


@dataclass(frozen=True)
class FeatureMatrix:
    features: np.ndarray
    labels: np.ndarray
    doc_ids: tuple[str, ...] = ()
    class_names: tuple[str, ...] = ()

    def __post_init__(self):
        if self.features.ndim != 2 or self.features.shape[0] != len(self.labels):
            raise ConfigError(
                f"features {self.features.shape} do not align with {len(self.labels)} labels"
            )

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def num_classes(self) -> int:
        return len(self.class_names) if self.class_names else int(self.labels.max()) + 1

    def take(self, rows: Sequence[int]) -> FeatureMatrix:
        rows = np.asarray(rows, dtype=np.int64)
        ids = tuple(self.doc_ids[i] for i in rows) if self.doc_ids else ()
        return FeatureMatrix(self.features[rows], self.labels[rows], ids, self.class_names)


# ---------------------------------------------------------------- ingestion


def _strip_headers(text: str) -> str:
    head, sep, body = text.partition("\n\n")
    return body if sep else ""


def _class_dirs(root: Path) -> tuple[list[tuple[str, list[Path]]], bool]:
    """Class name -> directories, and whether the tree had train/test halves."""
    subdirs = sorted(p for p in root.iterdir() if p.is_dir())
    nested = subdirs and all(
        not any(c.is_file() for c in d.iterdir()) and any(c.is_dir() for c in d.iterdir())
        for d in subdirs
    )
    if not nested:
        return [(d.name, [d]) for d in subdirs], False
    merged: dict[str, list[Path]] = {}
    for half in subdirs:
        for d in sorted(p for p in half.iterdir() if p.is_dir()):
            merged.setdefault(d.name, []).append(d)
    return sorted(merged.items()), True


def load_20news(root_path: str | Path) -> Corpus:
    """Read a bydate-style directory tree into a :class:`Corpus`.

    Documents are ordered by class name, then file name.  Header lines up to
    the first blank line are dropped.  Undecodable bytes are replaced.
    """
    root = Path(root_path)
    if not root.is_dir():
        raise IngestionError(f"corpus root {root} does not exist or is not a directory")
    classes, nested = _class_dirs(root)
    if not classes:
        raise IngestionError(f"corpus root {root} has no class directories")
    label_map = {name: i for i, (name, _) in enumerate(classes)}
    documents: list[Document] = []
    lossy = 0
    for name, dirs in classes:
        files = sorted(
            ((f.name, f, d) for d in dirs for f in d.iterdir() if f.is_file()),
            key=lambda item: (item[0], str(item[2])),
        )
        if not files:
            raise IngestionError(f"class directory {name!r} under {root} is empty")
        for fname, path, d in files:
            raw = path.read_bytes()
            try:
                text = raw.decode("utf-8")
            except UnicodeDecodeError:
                text = raw.decode("utf-8", errors="replace")
                lossy += 1
            doc_id = f"{d.parent.name}/{name}/{fname}" if nested else f"{name}/{fname}"
            documents.append(Document(doc_id, _strip_headers(text), label_map[name], name))
    if lossy:
        logger.warning("%d files were not valid UTF-8 and were decoded lossily", lossy)
    logger.info("loaded %d documents in %d classes from %s", len(documents), len(classes), root)
    return Corpus(tuple(documents), label_map, "all")


# ---------------------------------------------------------------- features


def tokenize(text: str) -> list[str]:
    return [
        tok
        for tok in _TOKEN_SPLIT.split(text.lower())
        if 2 <= len(tok) <= 30 and not tok.isdigit()
    ]


def build_vocab(corpus: Corpus, min_df: int = 2, max_size: int = 2000) -> Vocabulary:
    if min_df < 1:
        raise ConfigError(f"min_df must be at least 1, got {min_df}")
    if max_size < 1:
        raise ConfigError(f"max_size must be at least 1, got {max_size}")
    df: Counter[str] = Counter()
    for doc in corpus.documents:
        df.update(set(tokenize(doc.text)))
    kept = [(t, c) for t, c in df.items() if c >= min_df]
    if len(kept) > max_size:
        kept.sort(key=lambda tc: (-tc[1], tc[0]))
        kept = kept[:max_size]
    if not kept:
        raise ConfigError(
            f"vocabulary is empty (min_df={min_df} over {len(corpus)} documents)"
        )
    kept.sort()
    return Vocabulary(tuple(t for t, _ in kept), tuple(c for _, c in kept), len(corpus))


def tfidf_featurize(corpus: Corpus, vocab: Vocabulary) -> FeatureMatrix:
    """Raw-count tf times ln(N/df), rows scaled to unit L2 norm (zero rows stay zero)."""
    idf = np.log(vocab.num_docs / np.asarray(vocab.df, dtype=np.float64))
    x = np.zeros((len(corpus), len(vocab)))
    for row, doc in enumerate(corpus.documents):
        counts = Counter(t for t in tokenize(doc.text) if t in vocab.index)
        for term, c in counts.items():
            col = vocab.index[term]
            x[row, col] = c * idf[col]
    norms = np.sqrt((x * x).sum(axis=1))
    nz = norms > 0
    x[nz] /= norms[nz, None]
    return FeatureMatrix(x, corpus.labels, tuple(corpus.ids), tuple(corpus.class_names))


def fingerprint(doc_ids: Iterable[str], terms: Iterable[str] = ()) -> str:
    """SHA-256 over ordered document ids followed by vocabulary terms."""
    h = hashlib.sha256()
    for d in doc_ids:
        h.update(b"d\x00" + d.encode("utf-8") + b"\x00")
    for t in terms:
        h.update(b"t\x00" + t.encode("utf-8") + b"\x00")
    return h.hexdigest()


# ---------------------------------------------------------------- splits


def _by_class(corpus: Corpus) -> dict[int, list[int]]:
    groups: dict[int, list[int]] = {c: [] for c in range(corpus.num_classes)}
    for i, doc in enumerate(corpus.documents):
        groups[doc.label].append(i)
    return groups


def _keep_count(fraction: float, count: int) -> int:
    return max(1, math.floor(fraction * count + 0.5))


def subsample_fraction(corpus: Corpus, fraction: float, seed: int) -> Corpus:
    """Stratified per-class sample without replacement.

    Each class is shuffled with the same seeded stream regardless of
    ``fraction``, so samples drawn with one seed are nested across fractions.
    """
    if not 0.0 < fraction <= 1.0:
        raise ConfigError(f"fraction must lie in (0, 1], got {fraction}")
    if fraction == 1.0:
        return corpus
    rng = np.random.default_rng(seed)
    keep: list[int] = []
    for _, idx in sorted(_by_class(corpus).items()):
        order = rng.permutation(len(idx))
        keep.extend(idx[j] for j in order[: _keep_count(fraction, len(idx))])
    return corpus.subset(keep)


def kshot_subset(corpus: Corpus, k: int, seed: int) -> Corpus:
    if k < 1:
        raise ConfigError(f"k must be at least 1, got {k}")
    rng = np.random.default_rng(seed)
    keep: list[int] = []
    names = corpus.class_names
    for label, idx in sorted(_by_class(corpus).items()):
        if len(idx) < k:
            raise SamplingError(f"class {names[label]!r} has {len(idx)} documents, need {k}")
        order = rng.permutation(len(idx))
        keep.extend(idx[j] for j in order[:k])
    return corpus.subset(keep)


def restrict_classes(corpus: Corpus, classes: Sequence[str], split_tag: str) -> Corpus:
    """Keep only ``classes`` and re-densify their labels in the given order."""
    unknown = [c for c in classes if c not in corpus.label_map]
    if unknown:
        raise ConfigError(f"unknown classes: {unknown}")
    if len(set(classes)) != len(classes):
        raise ConfigError("duplicate class names")
    label_map = {name: i for i, name in enumerate(classes)}
    docs = tuple(
        Document(d.id, d.text, label_map[d.class_name], d.class_name)
        for d in corpus.documents
        if d.class_name in label_map
    )
    return Corpus(docs, label_map, split_tag)


def split_meta_classes(
    corpus: Corpus, meta_train_classes: Sequence[str], meta_test_classes: Sequence[str]
) -> tuple[Corpus, Corpus]:
    overlap = set(meta_train_classes) & set(meta_test_classes)
    if overlap:
        raise ConfigError(f"meta-train and meta-test classes overlap: {sorted(overlap)}")
    return (
        restrict_classes(corpus, list(meta_train_classes), "meta_train"),
        restrict_classes(corpus, list(meta_test_classes), "meta_test"),
    )


def train_test_split(corpus: Corpus, test_fraction: float, seed: int) -> tuple[Corpus, Corpus]:
    """Stratified split; every class keeps at least one document on each side."""
    if not 0.0 < test_fraction < 1.0:
        raise ConfigError(f"test fraction must lie in (0, 1), got {test_fraction}")
    rng = np.random.default_rng(seed)
    train: list[int] = []
    test: list[int] = []
    names = corpus.class_names
    for label, idx in sorted(_by_class(corpus).items()):
        if len(idx) < 2:
            raise SamplingError(f"class {names[label]!r} needs two documents for a train/test split")
        order = rng.permutation(len(idx))
        n_test = min(len(idx) - 1, _keep_count(test_fraction, len(idx)))
        test.extend(idx[j] for j in order[:n_test])
        train.extend(idx[j] for j in order[n_test:])
    return corpus.subset(train, "target_train"), corpus.subset(test, "target_test")


def merge(corpora: Sequence[Corpus], split_tag: str = "all") -> Corpus:
    """Concatenate corpora that share class names; labels follow the first label map seen."""
    label_map: dict[str, int] = {}
    for c in corpora:
        for name in c.class_names:
            label_map.setdefault(name, len(label_map))
    docs = tuple(
        Document(d.id, d.text, label_map[d.class_name], d.class_name)
        for c in corpora
        for d in c.documents
    )
    return Corpus(docs, label_map, split_tag)
