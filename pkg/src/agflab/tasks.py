"""Synthetic sequence-to-sequence tasks and the plain-text dataset cache."""

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .exceptions import ConfigError

__all__ = [
    "PAD",
    "BOS",
    "EOS",
    "MARK",
    "FIRST_CONTENT",
    "TASK_KINDS",
    "TaskSpec",
    "substitution_table",
    "translate",
    "generate_task",
    "split_dataset",
    "save_dataset",
    "load_dataset",
]

PAD, BOS, EOS, MARK = 0, 1, 2, 3
FIRST_CONTENT = 4
TASK_KINDS = ("copy", "reverse", "toy-translate")


@dataclass(frozen=True)
class TaskSpec:
    kind: str = "copy"
    min_len: int = 4
    max_len: int = 16
    vocab_size: int = 32
    n_samples: int = 10_000
    seed: int = 0
    mark_prob: float = 0.15

    def __post_init__(self):
        if self.kind not in TASK_KINDS:
            raise ConfigError(f"unknown task kind {self.kind!r}; expected one of {TASK_KINDS}")
        if not 1 <= self.min_len <= self.max_len:
            raise ConfigError("need 1 <= min_len <= max_len")
        if self.vocab_size <= FIRST_CONTENT + 1:
            raise ConfigError(f"vocab_size must exceed {FIRST_CONTENT + 1}")
        if self.n_samples < 1:
            raise ConfigError("n_samples must be positive")
        if not 0.0 <= self.mark_prob < 1.0:
            raise ConfigError("mark_prob must lie in [0, 1)")


def substitution_table(vocab_size):
    """Fixed token substitution used by the toy translation task.

    Content tokens map through an affine permutation ``t -> 5t + 3 (mod n)``
    (the multiplier is bumped until it is coprime with ``n``); special tokens
    map to themselves. The table depends only on the vocabulary size, so
    train and validation sets drawn with different seeds agree.
    """
    n = vocab_size - FIRST_CONTENT
    mult = 5
    while math.gcd(mult, n) != 1:
        mult += 1
    table = np.arange(vocab_size)
    content = np.arange(n)
    table[FIRST_CONTENT:] = FIRST_CONTENT + (content * mult + 3) % n
    return table


def translate(src, table):
    """Substitute every token, and swap the two tokens that follow each marker."""
    out = []
    i = 0
    n = len(src)
    while i < n:
        if src[i] == MARK and i + 2 < n:
            out.extend((MARK, int(table[src[i + 2]]), int(table[src[i + 1]])))
            i += 3
        else:
            out.append(int(table[src[i]]))
            i += 1
    return out


def generate_task(spec):
    """Deterministic list of ``(source, target)`` tuples for ``spec``."""
    rng = np.random.default_rng(spec.seed)
    table = substitution_table(spec.vocab_size) if spec.kind == "toy-translate" else None
    data = []
    for _ in range(spec.n_samples):
        n = int(rng.integers(spec.min_len, spec.max_len + 1))
        src = rng.integers(FIRST_CONTENT, spec.vocab_size, n)
        if table is not None:
            src = np.where(rng.random(n) < spec.mark_prob, MARK, src)
        src = tuple(int(t) for t in src)
        if spec.kind == "copy":
            tgt = src
        elif spec.kind == "reverse":
            tgt = src[::-1]
        else:
            tgt = tuple(translate(src, table))
        data.append((src, tgt))
    return data


def split_dataset(data, n_val):
    """Split off the last ``n_val`` pairs as a validation set."""
    if not 0 < n_val < len(data):
        raise ConfigError("n_val must be between 1 and len(data) - 1")
    return data[:-n_val], data[-n_val:]


def save_dataset(data, path):
    """Write one pair per line: source and target integers, tab separated."""
    lines = [" ".join(map(str, s)) + "\t" + " ".join(map(str, t)) for s, t in data]
    Path(path).write_text("\n".join(lines) + "\n")


def load_dataset(path):
    data = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            s, t = line.split("\t")
            data.append((tuple(int(x) for x in s.split()), tuple(int(x) for x in t.split())))
        except ValueError as exc:
            raise ConfigError(f"{path}:{lineno}: malformed dataset line") from exc
    return data
