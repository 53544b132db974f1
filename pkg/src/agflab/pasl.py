"""Follower-distance statistics over a plain-text corpus.

For an anchor token, count how often a target token (or any token) appears
``i`` positions later, for ``i = 1..max_d``, never looking across a document
boundary, and normalise the counts into a probability density over offsets.
"""

import string
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

from .exceptions import EmptyDistributionError, IngestionError

__all__ = [
    "WILDCARD",
    "DEFAULT_MAX_D",
    "TokenStream",
    "PaslDistribution",
    "tokenize",
    "ingest_corpus",
    "follower_distribution",
    "distance_decay_samples",
    "synthetic_power_law_corpus",
]

WILDCARD = "*"
DEFAULT_MAX_D = 128
_STRIP = string.punctuation + "“”‘’«»…–—"


def tokenize(text):
    """Whitespace split, lowercase, strip surrounding punctuation, drop empties."""
    out = []
    for raw in text.split():
        tok = raw.lower().strip(_STRIP)
        if tok:
            out.append(tok)
    return out


@dataclass(frozen=True)
class TokenStream:
    """Concatenated tokens of all documents.

    ``boundaries`` lists the index of the first token of every document after
    the first, so it is strictly increasing and lies in ``(0, len(tokens))``.
    """

    tokens: tuple
    boundaries: tuple = ()

    def __post_init__(self):
        b = self.boundaries
        if any(x >= y for x, y in zip(b, b[1:])) or (b and (b[0] <= 0 or b[-1] >= len(self.tokens))):
            raise ValueError("boundaries must be strictly increasing and inside the token range")

    @classmethod
    def from_documents(cls, documents):
        """Build from raw text documents (each string is tokenised) or pre-tokenised lists."""
        tokens = []
        boundaries = []
        for doc in documents:
            toks = tokenize(doc) if isinstance(doc, str) else list(doc)
            if not toks:
                continue
            if tokens:
                boundaries.append(len(tokens))
            tokens.extend(toks)
        return cls(tuple(tokens), tuple(boundaries))

    def documents(self):
        edges = (0,) + self.boundaries + (len(self.tokens),)
        return [self.tokens[a:b] for a, b in zip(edges, edges[1:])]

    @cached_property
    def index(self):
        """``(codes, doc_end, vocab)``: integer token ids, the end of each position's document, and the id map."""
        vocab = {}
        codes = np.fromiter((vocab.setdefault(t, len(vocab)) for t in self.tokens), dtype=np.int64, count=len(self.tokens))
        edges = np.array(self.boundaries + (len(self.tokens),), dtype=np.int64)
        doc_end = edges[np.searchsorted(edges, np.arange(len(self.tokens)), side="right")]
        return codes, doc_end, vocab

    def __len__(self):
        return len(self.tokens)


@dataclass(frozen=True)
class PaslDistribution:
    """Normalised follower-distance density; ``density[i-1]`` is the probability of offset ``i``."""

    anchor: str
    target: str
    density: np.ndarray
    counts: np.ndarray
    total_count: int

    @property
    def offsets(self):
        return np.arange(1, self.density.size + 1)

    @property
    def max_d(self):
        return self.density.size

    def to_csv(self):
        rows = ["offset,probability"]
        rows += [f"{i},{p!r}" for i, p in zip(self.offsets, self.density.tolist())]
        return "\n".join(rows) + "\n"

    def summary(self):
        return {
            "anchor": self.anchor,
            "target": self.target,
            "max_d": self.max_d,
            "total_count": self.total_count,
            "mean_offset": float(np.dot(self.offsets, self.density)),
        }


def ingest_corpus(path):
    """Read a UTF-8 text file with one document per line into a :class:`TokenStream`."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise IngestionError(f"cannot read corpus {path}: {exc}") from exc
    ts = TokenStream.from_documents(text.splitlines())
    if not ts.tokens:
        raise IngestionError(f"corpus {path} contains no tokens")
    return ts


def _follower_counts(ts, anchor, target, max_d):
    codes, doc_end, vocab = ts.index
    counts = np.zeros(max_d, dtype=np.int64)
    a = vocab.get(anchor)
    if a is None or (target != WILDCARD and target not in vocab):
        return counts
    pos = np.flatnonzero(codes == a)
    limit = doc_end[pos]
    t = None if target == WILDCARD else vocab[target]
    for i in range(1, max_d + 1):
        p = pos[pos + i < limit]
        if p.size == 0:
            break
        counts[i - 1] = p.size if t is None else np.count_nonzero(codes[p + i] == t)
    return counts


def follower_distribution(ts, anchor, target=WILDCARD, max_d=DEFAULT_MAX_D):
    """Density of ``target`` appearing ``i`` tokens after ``anchor``, ``i = 1..max_d``.

    Raises
    ------
    EmptyDistributionError
        If no (anchor, target) pair occurs within ``max_d`` inside a document.
    """
    if max_d < 1:
        raise ValueError("max_d must be at least 1")
    target = WILDCARD if target is None else target
    counts = _follower_counts(ts, anchor, target, max_d)
    total = int(counts.sum())
    if total == 0:
        raise EmptyDistributionError(f"no occurrences of {target!r} within {max_d} tokens after {anchor!r}")
    return PaslDistribution(anchor, target, counts / total, counts, total)


def distance_decay_samples(ts, anchors, max_d=DEFAULT_MAX_D):
    """Average the follower densities of several anchors.

    Each element of ``anchors`` is either a token (wildcard target) or an
    ``(anchor, target)`` pair. Returns ``(offsets, mean_density)``.
    """
    anchors = list(anchors)
    if not anchors:
        raise ValueError("anchor set is empty")
    dens = []
    for a in anchors:
        anchor, target = (a, WILDCARD) if isinstance(a, str) else a
        dens.append(follower_distribution(ts, anchor, target, max_d).density)
    return np.arange(1, max_d + 1), np.mean(dens, axis=0)


def synthetic_power_law_corpus(n_docs=2000, seed=0, r=4.0, k=2.0, max_d=32, n_pairs=3, n_filler=50, doc_len=40):
    """Corpus in which each anchor ``a<j>`` is followed by its partner ``b<j>`` at a power-law distance.

    Distances ``d`` in ``1..max_d`` are drawn with probability proportional
    to ``(1 + d/r)**(-k)``; all other slots hold random filler words.
    Returns a list of document strings.
    """
    rng = np.random.default_rng(seed)
    d = np.arange(1, max_d + 1)
    pd = (1.0 + d / r) ** (-k)
    pd /= pd.sum()
    docs = []
    for _ in range(n_docs):
        words = [f"w{int(t)}" for t in rng.integers(0, n_filler, doc_len + max_d + 1)]
        j = int(rng.integers(0, n_pairs))
        start = int(rng.integers(0, doc_len))
        dist = int(rng.choice(d, p=pd))
        words[start] = f"a{j}"
        words[start + dist] = f"b{j}"
        docs.append(" ".join(words))
    return docs

