"""Configurations of an exclusion process on the discrete torus Z/NZ.

Occupations are packed into a Python integer: bit ``x`` holds the occupation
of site ``x``.  Every site argument accepts an arbitrary integer and is reduced
modulo ``N``.  Window particle counts are masked popcounts on the rotated word.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable

import numpy as np

from .errors import ConfigError, SizeError

NODE = frozenset({0, 1})


@dataclass(frozen=True)
class Configuration:
    """Occupation state ``eta`` on the torus with ``n_sites`` sites."""

    n_sites: int
    bits: int

    def __post_init__(self):
        if self.n_sites < 1:
            raise ConfigError(f"n_sites must be positive, got {self.n_sites}")
        if self.bits < 0 or self.bits >> self.n_sites:
            raise ConfigError("bits outside the lattice")

    @classmethod
    def from_string(cls, text: str) -> "Configuration":
        """Parse a 0/1 string, site 0 first."""
        text = text.strip()
        if not text or set(text) - {"0", "1"}:
            raise ConfigError(f"not a 0/1 string: {text!r}")
        bits = 0
        for x, ch in enumerate(text):
            if ch == "1":
                bits |= 1 << x
        return cls(len(text), bits)

    @classmethod
    def from_array(cls, occupations: Iterable[int]) -> "Configuration":
        occ = [int(v) for v in occupations]
        if any(v not in (0, 1) for v in occ):
            raise ConfigError("occupations must be 0 or 1")
        bits = 0
        for x, v in enumerate(occ):
            bits |= v << x
        return cls(len(occ), bits)

    @classmethod
    def full(cls, n_sites: int) -> "Configuration":
        return cls(n_sites, (1 << n_sites) - 1)

    @classmethod
    def empty(cls, n_sites: int) -> "Configuration":
        return cls(n_sites, 0)

    def to_string(self) -> str:
        return "".join("1" if (self.bits >> x) & 1 else "0" for x in range(self.n_sites))

    def to_array(self) -> np.ndarray:
        return np.array([(self.bits >> x) & 1 for x in range(self.n_sites)], dtype=np.uint8)

    def particle_count(self) -> int:
        return self.bits.bit_count()

    def __getitem__(self, x: int) -> int:
        return (self.bits >> (x % self.n_sites)) & 1

    def __str__(self) -> str:
        return self.to_string()


@dataclass(frozen=True)
class Window:
    """Block of ``length`` consecutive sites starting ``anchor`` sites from a
    reference site, minus the relative offsets in ``excluded``."""

    anchor: int
    length: int
    excluded: frozenset = NODE

    def __post_init__(self):
        if self.length < 0:
            raise ConfigError("window length must be nonnegative")

    def offsets(self) -> list[int]:
        return [
            self.anchor + i
            for i in range(self.length)
            if self.anchor + i not in self.excluded
        ]


def box_window(j: int, size: int) -> Window:
    """Window of ``size`` sites from the box [-j, -j + size + 1] with the node removed."""
    return Window(anchor=-j, length=size + 2, excluded=NODE)


def _full(n: int) -> int:
    return (1 << n) - 1


def rotate(bits: int, n: int, x: int) -> int:
    """Bits of the shifted configuration tau_x eta, i.e. site ``x`` moved to 0."""
    x %= n
    if x == 0:
        return bits
    return ((bits >> x) | (bits << (n - x))) & _full(n)


@lru_cache(maxsize=4096)
def window_mask(n: int, window: Window) -> int:
    """Bitmask of the window sites relative to reference site 0."""
    if window.length > n:
        raise SizeError(f"window of length {window.length} wraps on a lattice of {n} sites")
    offsets = window.offsets()
    if len(offsets) > n - 2:
        raise SizeError(f"window of {len(offsets)} sites too large for N={n}")
    mask = 0
    for off in offsets:
        mask |= 1 << (off % n)
    return mask


def occupation(cfg: Configuration, x: int) -> int:
    return cfg[x]


def exchange(cfg: Configuration, x: int, y: int) -> Configuration:
    """Swap the occupations of sites ``x`` and ``y``."""
    n = cfg.n_sites
    x %= n
    y %= n
    bx = (cfg.bits >> x) & 1
    by = (cfg.bits >> y) & 1
    if bx == by:
        return cfg
    return Configuration(n, cfg.bits ^ ((1 << x) | (1 << y)))


def complement(cfg: Configuration) -> Configuration:
    return Configuration(cfg.n_sites, cfg.bits ^ _full(cfg.n_sites))


def shift(cfg: Configuration, i: int = 1) -> Configuration:
    """Shift operator tau_i: the result satisfies ``shift(c, i)[x] == c[x + i]``."""
    return Configuration(cfg.n_sites, rotate(cfg.bits, cfg.n_sites, i))


def window_count(cfg: Configuration, x: int, w: Window) -> int:
    """Number of particles in the window ``w`` placed at reference site ``x``."""
    mask = window_mask(cfg.n_sites, w)
    return (rotate(cfg.bits, cfg.n_sites, x) & mask).bit_count()


def window_count_naive(cfg: Configuration, x: int, w: Window) -> int:
    """Per-site loop; reference implementation for :func:`window_count`."""
    window_mask(cfg.n_sites, w)  # same size checks
    return sum(cfg[x + off] for off in w.offsets())


def local_average(cfg: Configuration, x: int, ell: int) -> float:
    """Empirical density of the ``ell`` sites starting at ``x``."""
    if not 1 <= ell <= cfg.n_sites:
        raise ConfigError(f"ell must lie in [1, N], got {ell}")
    mask = _full(ell)
    return (rotate(cfg.bits, cfg.n_sites, x) & mask).bit_count() / ell


def all_configurations(n: int) -> np.ndarray:
    """Every configuration of ``n`` sites as packed uint64 words."""
    if n > 24:
        raise SizeError(f"refusing to enumerate 2^{n} configurations")
    return np.arange(1 << n, dtype=np.uint64)


def rotate_words(words: np.ndarray, n: int, x: int) -> np.ndarray:
    """Vectorised :func:`rotate` on an array of packed words (n <= 63)."""
    x %= n
    if x == 0:
        return words
    full = np.uint64(_full(n))
    return ((words >> np.uint64(x)) | (words << np.uint64(n - x))) & full


def popcount(words: np.ndarray) -> np.ndarray:
    return np.bitwise_count(words).astype(np.int64)


def bit(words: np.ndarray, x: int, n: int) -> np.ndarray:
    return ((words >> np.uint64(x % n)) & np.uint64(1)).astype(np.int64)
