from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from synthcorpus import write_corpus  # noqa: E402

from fstc.textpipe import Corpus, Document, FeatureMatrix  # noqa: E402


def make_corpus(texts_by_class: dict[str, list[str]], split_tag: str = "all") -> Corpus:
    label_map = {name: i for i, name in enumerate(texts_by_class)}
    docs = tuple(
        Document(f"{name}/{j}", text, label_map[name], name)
        for name, texts in texts_by_class.items()
        for j, text in enumerate(texts)
    )
    return Corpus(docs, label_map, split_tag)


def random_features(n_classes=4, per_class=30, dim=12, seed=0, spread=1.0) -> FeatureMatrix:
    """Gaussian class blobs; separable when ``spread`` is small."""
    rng = np.random.default_rng(seed)
    centers = rng.normal(0, 1, size=(n_classes, dim))
    x = np.concatenate([c + spread * 0.3 * rng.normal(size=(per_class, dim)) for c in centers])
    y = np.repeat(np.arange(n_classes), per_class)
    ids = tuple(f"doc{i}" for i in range(len(y)))
    return FeatureMatrix(x, y, ids, tuple(f"c{i}" for i in range(n_classes)))


@pytest.fixture(scope="session")
def small_corpus_dir(tmp_path_factory) -> Path:
    """20 classes x 40 docs, easy mix; cheap enough for CLI runs."""
    return write_corpus(tmp_path_factory.mktemp("corpus") / "news", docs_per_class=40)


@pytest.fixture(scope="session")
def hard_corpus_dir(tmp_path_factory) -> Path:
    """Full-size surrogate (20 classes x 140 docs) with a harder token mix."""
    return write_corpus(tmp_path_factory.mktemp("hard") / "news", mix=(0.05, 0.03, 0.3))


ACCEPTANCE: list[str] = []


def record_acceptance(number: int, title: str, ok: bool, detail: str) -> None:
    """Log one criterion outcome and fail the calling test if it did not hold."""
    line = f"C{number:<2} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
    ACCEPTANCE.append(line)
    print(line)
    assert ok, line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
