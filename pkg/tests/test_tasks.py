import math

import pytest

from agflab.exceptions import ConfigError
from agflab.tasks import (
    FIRST_CONTENT,
    MARK,
    TaskSpec,
    generate_task,
    load_dataset,
    save_dataset,
    split_dataset,
    substitution_table,
    translate,
)


def test_copy_and_reverse_definitions():
    for src, tgt in generate_task(TaskSpec("copy", 1, 8, 16, 50, seed=0)):
        assert src == tgt
    for src, tgt in generate_task(TaskSpec("reverse", 1, 8, 16, 50, seed=0)):
        assert tgt == src[::-1]


def test_generation_is_deterministic_and_in_range():
    spec = TaskSpec("toy-translate", 2, 10, 20, 200, seed=5)
    a, b = generate_task(spec), generate_task(spec)
    assert a == b
    assert generate_task(TaskSpec("toy-translate", 2, 10, 20, 200, seed=6)) != a
    for src, tgt in a:
        assert 2 <= len(src) <= 10 and len(tgt) == len(src)
        assert all(t == MARK or FIRST_CONTENT <= t < 20 for t in src)


def test_substitution_table_is_permutation():
    for v in (16, 32, 33, 64):
        t = substitution_table(v)
        assert sorted(t[FIRST_CONTENT:]) == list(range(FIRST_CONTENT, v))
        assert list(t[:FIRST_CONTENT]) == list(range(FIRST_CONTENT))


def test_translate_marker_swap():
    table = substitution_table(16)
    src = (4, MARK, 5, 6, 7, MARK)
    assert translate(src, table) == [table[4], MARK, table[6], table[5], table[7], MARK]


def test_toy_translate_is_not_the_identity():
    data = generate_task(TaskSpec("toy-translate", 4, 8, 32, 100, seed=1))
    assert sum(s != t for s, t in data) > 90


def test_spec_validation():
    with pytest.raises(ConfigError):
        TaskSpec("sort")
    with pytest.raises(ConfigError):
        TaskSpec(min_len=5, max_len=3)
    with pytest.raises(ConfigError):
        TaskSpec(vocab_size=5)


def test_split_and_roundtrip(tmp_path):
    data = generate_task(TaskSpec("reverse", 1, 5, 12, 20, seed=2))
    tr, va = split_dataset(data, 5)
    assert len(tr) == 15 and va == data[-5:]
    save_dataset(data, tmp_path / "d.tsv")
    assert load_dataset(tmp_path / "d.tsv") == data
    with pytest.raises(ConfigError):
        split_dataset(data, 0)


def test_marker_rate_roughly_matches():
    data = generate_task(TaskSpec("toy-translate", 16, 16, 32, 500, seed=3, mark_prob=0.15))
    rate = sum(s.count(MARK) for s, _ in data) / (500 * 16)
    assert math.isclose(rate, 0.15, abs_tol=0.02)
