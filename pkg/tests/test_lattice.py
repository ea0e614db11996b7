import numpy as np
import pytest
from hypothesis import given, strategies as st

from kcexclusion.errors import ConfigError, SizeError
from kcexclusion.lattice import (
    Configuration,
    Window,
    all_configurations,
    bit,
    box_window,
    complement,
    exchange,
    local_average,
    popcount,
    rotate,
    rotate_words,
    shift,
    window_count,
    window_count_naive,
)

configs = st.integers(4, 30).flatmap(
    lambda n: st.builds(lambda b: Configuration(n, b), st.integers(0, (1 << n) - 1))
)


def test_string_roundtrip():
    c = Configuration.from_string("1101000")
    assert c.to_string() == "1101000"
    assert c.particle_count() == 3
    assert c[0] == 1 and c[2] == 0 and c[7] == 1  # wraps


def test_bad_input():
    with pytest.raises(ConfigError):
        Configuration.from_string("10a1")
    with pytest.raises(ConfigError):
        Configuration(3, 8)
    with pytest.raises(ConfigError):
        Configuration.from_array([0, 2])


@given(configs, st.integers(-40, 40))
def test_shift_convention(c, i):
    s = shift(c, i)
    for x in range(c.n_sites):
        assert s[x] == c[x + i]


@given(configs, st.integers(-40, 40), st.integers(-40, 40))
def test_exchange_involution_and_conservation(c, x, d):
    y = x + 1 + abs(d) % (c.n_sites - 1)
    e = exchange(c, x, y)
    assert e.particle_count() == c.particle_count()
    assert exchange(e, x, y) == c
    assert e[x] == c[y] and e[y] == c[x]


@given(configs)
def test_complement(c):
    assert complement(complement(c)) == c
    assert complement(c).particle_count() == c.n_sites - c.particle_count()


@given(configs, st.integers(-40, 40), st.integers(0, 4), st.integers(0, 4))
def test_window_count_matches_loop(c, x, j, extra):
    L = j + extra
    if L + 2 > c.n_sites:
        with pytest.raises(SizeError):
            window_count(c, x, box_window(j, L))
        return
    w = box_window(j, L)
    assert window_count(c, x, w) == window_count_naive(c, x, w)
    assert 0 <= window_count(c, x, w) <= L


def test_box_window_skips_node():
    assert box_window(2, 3).offsets() == [-2, -1, 2]
    assert box_window(0, 2).offsets() == [2, 3]
    assert Window(-1, 4).offsets() == [-1, 2]


def test_window_too_large():
    with pytest.raises(SizeError):
        window_count(Configuration.full(5), 0, box_window(1, 4))


def test_local_average():
    c = Configuration.from_string("11110000")
    assert local_average(c, 0, 4) == 1.0
    assert local_average(c, 2, 4) == 0.5
    assert local_average(c, 6, 4) == 0.5
    with pytest.raises(ConfigError):
        local_average(c, 0, 0)


@pytest.mark.parametrize("n", [5, 8, 11])
def test_vectorised_helpers(n):
    words = all_configurations(n)
    for x in (-3, 0, 1, 4):
        r = rotate_words(words, n, x)
        expect = np.array([rotate(int(w), n, x) for w in words], dtype=np.uint64)
        assert np.array_equal(r, expect)
    assert np.array_equal(popcount(words), [int(w).bit_count() for w in words])
    assert np.array_equal(bit(words, n + 2, n), (words >> np.uint64(2)) & np.uint64(1))


def test_enumeration_limit():
    with pytest.raises(SizeError):
        all_configurations(30)
