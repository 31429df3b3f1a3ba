"""Synthetic newsgroup-style corpus written in the bydate directory layout.

Classes come in groups (like comp.* or rec.* in 20 Newsgroups).  Each
document mixes shared filler words, words of its group, words of its own
class and noise words from elsewhere, behind a mail-style header that names
the class (so header stripping matters).

Run as a script to materialise a corpus:  python tests/synthcorpus.py OUT_DIR
"""

from __future__ import annotations

import itertools
import sys
from pathlib import Path

import numpy as np

_SYLLABLES = [a + b for a in "bdfgklmnprstvz" for b in "aeiou"]


def _words(rng: np.random.Generator, count: int, taken: set[str]) -> list[str]:
    out = []
    while len(out) < count:
        w = "".join(rng.choice(_SYLLABLES, size=rng.integers(2, 4)))
        if w not in taken:
            taken.add(w)
            out.append(w)
    return out


def write_corpus(
    root: str | Path,
    groups: int = 5,
    classes_per_group: int = 4,
    docs_per_class: int = 140,
    seed: int = 0,
    mix: tuple[float, float, float] = (0.55, 0.12, 0.10),
    length: tuple[int, int] = (30, 90),
) -> Path:
    """Write the corpus under ``root`` and return it.

    ``mix`` gives the per-token probability of a group word, a class word and
    a noise word; the rest are common filler.
    """
    root = Path(root)
    rng = np.random.default_rng(seed)
    taken: set[str] = set()
    common = _words(rng, 400, taken)
    group_words = [_words(rng, 80, taken) for _ in range(groups)]
    class_words = [[_words(rng, 40, taken) for _ in range(classes_per_group)] for _ in range(groups)]
    every = common + list(itertools.chain(*group_words)) + [w for g in class_words for c in g for w in c]
    zipf = 1.0 / np.arange(1, len(common) + 1)
    zipf /= zipf.sum()
    p_group, p_class, p_noise = mix
    for g, c in itertools.product(range(groups), range(classes_per_group)):
        name = f"grp{g}.topic{c}"
        d = root / name
        d.mkdir(parents=True, exist_ok=True)
        for i in range(docs_per_class):
            n = int(rng.integers(*length))
            kind = rng.random(n)
            tokens = []
            for u in kind:
                if u < p_group:
                    tokens.append(group_words[g][rng.integers(len(group_words[g]))])
                elif u < p_group + p_class:
                    tokens.append(class_words[g][c][rng.integers(40)])
                elif u < p_group + p_class + p_noise:
                    tokens.append(every[rng.integers(len(every))])
                else:
                    tokens.append(common[rng.choice(len(common), p=zipf)])
            body = "\n".join(" ".join(tokens[j : j + 12]) for j in range(0, n, 12))
            header = f"From: user{i}@example.org\nNewsgroups: {name}\nSubject: re {i}\n\n"
            (d / f"{100000 + i}").write_text(header + body + "\n", encoding="utf-8")
    return root


if __name__ == "__main__":
    print(write_corpus(sys.argv[1] if len(sys.argv) > 1 else "synthetic_corpus"))
