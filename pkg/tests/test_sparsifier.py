import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cesar.errors import ConfigError, IndexOutOfRange, MalformedBitstring
from cesar.maskcrypt import fx_encode
from cesar.sparsifier import (
    Method,
    SelectionSpec,
    elias_gamma_bit_length,
    elias_gamma_decode,
    elias_gamma_encode,
    frame_index_set,
    framed_size,
    intersect,
    random_subsample,
    topk,
    unframe_index_set,
)


def gamma_oracle(indices):
    out, prev = [], -1
    for i in indices:
        v = i - prev
        b = bin(v)[2:]
        out.append("0" * (len(b) - 1) + b)
        prev = i
    return "".join(out)


index_sets = st.integers(1, 5000).flatmap(
    lambda d: st.tuples(st.just(d), st.sets(st.integers(0, d - 1), max_size=200))
)


def test_gamma_fixtures():
    assert elias_gamma_encode(np.array([0])) == "1"
    assert elias_gamma_encode(np.array([0, 3, 7])) == "1" + "011" + "00100"
    assert elias_gamma_encode(np.array([], dtype=np.int64)) == ""
    assert list(elias_gamma_decode("", 10)) == []
    assert list(elias_gamma_decode("1011", 4)) == [0, 3]


def test_gamma_errors():
    with pytest.raises(MalformedBitstring):
        elias_gamma_decode("00", 10)
    with pytest.raises(MalformedBitstring):
        elias_gamma_decode("0001", 100)
    with pytest.raises(IndexOutOfRange):
        elias_gamma_decode("1011", 3)


@settings(max_examples=300, deadline=None)
@given(index_sets)
def test_gamma_matches_oracle_and_round_trips(case):
    d, s = case
    idx = np.array(sorted(s), dtype=np.int64)
    bits = elias_gamma_encode(idx)
    assert bits == gamma_oracle(idx)
    assert elias_gamma_bit_length(idx) == len(bits)
    assert np.array_equal(elias_gamma_decode(bits, d), idx)
    frame = frame_index_set(idx)
    assert len(frame) == framed_size(idx) == 4 + math.ceil(len(bits) / 8)
    assert np.array_equal(unframe_index_set(frame, d), idx)


def test_gamma_round_trip_large_d():
    rng = np.random.default_rng(0)
    for d in (1, 10, 10**5):
        for _ in range(50):
            m = rng.integers(0, d + 1)
            idx = np.sort(rng.choice(d, size=m, replace=False))
            assert np.array_equal(elias_gamma_decode(elias_gamma_encode(idx), d), idx)


def test_bit_length_depends_only_on_contents():
    a = topk(np.array([3.0, 0.0, 2.0, 9.0]), 0.5)
    b = np.array(sorted({3, 0}), dtype=np.int64)
    assert elias_gamma_bit_length(a) == elias_gamma_bit_length(b)


def test_unframe_rejects_bad_length():
    frame = frame_index_set(np.array([0, 3, 7]))
    with pytest.raises(MalformedBitstring):
        unframe_index_set(frame[:-1], 10)
    with pytest.raises(MalformedBitstring):
        unframe_index_set(b"\x01", 10)


def test_topk_examples():
    assert list(topk(np.array([0.1, -5.0, 2.0]), 1 / 3)) == [1]
    assert list(topk(np.array([1.0, 1.0, 1.0, 1.0]), 0.5)) == [0, 1]
    assert topk(np.zeros(7), 0.0).size == 0


def test_topk_matches_full_sort():
    v = np.random.default_rng(1).normal(size=1000)
    expected = sorted(sorted(range(1000), key=lambda p: (-abs(v[p]), p))[:300])
    assert list(topk(v, 0.3)) == expected


def test_topk_on_fixed_point_words_matches_reals():
    v = np.random.default_rng(2).normal(size=500)
    assert np.array_equal(topk(fx_encode(v), 0.2), topk(v, 0.2))


@settings(max_examples=100, deadline=None)
@given(d=st.integers(1, 400), alpha=st.floats(0, 1))
def test_topk_size_is_ceil(d, alpha):
    v = np.random.default_rng(d).normal(size=d)
    assert topk(v, alpha).size == min(d, math.ceil(alpha * d - 1e-12))


def test_random_subsample():
    assert np.array_equal(random_subsample(50, 1.0, 3), np.arange(50))
    a = random_subsample(10**5, 0.4383, 42)
    assert np.array_equal(a, random_subsample(10**5, 0.4383, 42))
    assert abs(a.size / 10**5 - 0.4383) < 0.01
    assert not np.array_equal(a, random_subsample(10**5, 0.4383, 43))
    assert random_subsample(100, 0.0, 1).size == 0


def test_random_subsample_is_position_keyed():
    # a prefix of the model sees the same decisions as the full model
    full = random_subsample(1000, 0.3, 7)
    part = random_subsample(400, 0.3, 7)
    assert np.array_equal(full[full < 400], part)


@settings(max_examples=100, deadline=None)
@given(st.sets(st.integers(0, 300)), st.sets(st.integers(0, 300)))
def test_intersect(a, b):
    x = np.array(sorted(a), dtype=np.int64)
    y = np.array(sorted(b), dtype=np.int64)
    assert list(intersect(x, y)) == sorted(a & b)


def test_selection_spec_validation():
    assert SelectionSpec("topk", 0.5).method is Method.TOPK
    with pytest.raises(ConfigError):
        SelectionSpec(Method.RANDOM, 1.5)
    with pytest.raises(ValueError):
        SelectionSpec("bogus", 0.5)
