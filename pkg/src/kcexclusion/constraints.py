"""Kinetic constraints of symmetric exclusion processes.

Every constraint family here is built from *window-count* terms.  For a
window length ``L`` and an offset ``j in [0, L]`` the window is the box
``[-j, -j + L + 1]`` with the node ``{0, 1}`` removed (``L`` sites).  A
constraint is

    c(eta) = sum_L sum_j F_L[j, count_j^L(eta)]

and :class:`WindowTables` stores the arrays ``F_L``.  The per-family
functions (:func:`bernstein_constraint`, :func:`pmm_constraint`, ...) evaluate
the definitions directly and serve as an independent path to the tables.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Optional

import numpy as np
from scipy.stats import binom as binom_dist

from .errors import ConfigError, SizeError
from .lattice import (
    Configuration,
    box_window,
    popcount,
    rotate,
    window_count,
)

FAMILIES = ("ssep", "pmm", "bernstein", "interpolating", "windowed", "superposition")
MAX_ENUMERATION_SITES = 24


def gen_binom(m: float, k: int) -> float:
    """Generalised binomial coefficient m (m-1) ... (m-k+1) / k!."""
    if k < 0:
        raise ConfigError("k must be nonnegative")
    out = 1.0
    for i in range(k):
        out *= (m - i) / (i + 1)
    return out


def binomial_coefficients(m: float, ell: int) -> np.ndarray:
    """binom(m, k) for k = 0..ell by the product recurrence."""
    out = np.empty(ell + 1)
    out[0] = 1.0
    for k in range(1, ell + 1):
        out[k] = out[k - 1] * (m - k + 1) / k
    return out


def binomial_tail(m: float, start: int, stop: int) -> float:
    """sum_{k=start}^{stop} |binom(m, k)|."""
    if stop < start:
        return 0.0
    return float(np.abs(binomial_coefficients(m, stop)[start:]).sum())


def default_ell(n_sites: int) -> int:
    """Cutoff used when only N is given: grows like sqrt(N), capped at N/2 - 2."""
    return max(2, min(math.isqrt(n_sites), n_sites // 2 - 2))


# ---------------------------------------------------------------------------
# Model descriptions


@dataclass(frozen=True)
class ModelSpec:
    """A constraint family with its parameters.

    ``perturbation`` is the SSEP admixture strength; ``None`` means "use the
    simulator default" (``1/N`` in the slow-diffusion regime, ``0`` otherwise).
    """

    family: str
    n: Optional[int] = None
    L: Optional[int] = None
    m: Optional[float] = None
    ell: Optional[int] = None
    weights: Optional[tuple] = None
    components: tuple = ()
    perturbation: Optional[float] = None

    def __post_init__(self):
        f = self.family
        if f not in FAMILIES:
            raise ConfigError(f"unknown family {f!r}")
        if self.perturbation is not None and not self.perturbation >= 0:
            raise ConfigError("perturbation must be >= 0")
        if f == "pmm":
            if self.n is None or self.n < 1:
                raise ConfigError("pmm needs n >= 1")
        elif f in ("bernstein", "windowed"):
            if self.n is None or self.L is None or not 0 <= self.n <= self.L:
                raise ConfigError("bernstein needs 0 <= n <= L")
            if f == "windowed":
                if self.weights is None or len(self.weights) != self.L + 1:
                    raise ConfigError("windowed needs L + 1 window weights")
                if any(w < 0 for w in self.weights):
                    raise ConfigError("window weights must be nonnegative")
        elif f == "interpolating":
            if self.n is None or self.n < 1:
                raise ConfigError("interpolating needs n >= 1")
            if self.m is None or not 0.0 <= self.m <= 1.0:
                raise ConfigError("interpolating needs m in [0, 1]")
            if self.ell is None or self.ell < 2:
                raise ConfigError("interpolating needs ell >= 2")
        elif f == "superposition":
            if not self.components:
                raise ConfigError("superposition needs at least one component")
            for w, comp in self.components:
                if not w >= 0:
                    raise ConfigError("superposition weights must be nonnegative")
                if not isinstance(comp, ModelSpec):
                    raise ConfigError("superposition components must be ModelSpec")

    # constructors -----------------------------------------------------------
    @classmethod
    def ssep(cls, perturbation=None):
        return cls("ssep", perturbation=perturbation)

    @classmethod
    def pmm(cls, n, perturbation=None):
        return cls("pmm", n=int(n), perturbation=perturbation)

    @classmethod
    def bernstein(cls, n, L, perturbation=None):
        return cls("bernstein", n=int(n), L=int(L), perturbation=perturbation)

    @classmethod
    def interpolating(cls, n, m, ell, perturbation=None):
        return cls("interpolating", n=int(n), m=float(m), ell=int(ell), perturbation=perturbation)

    @classmethod
    def windowed(cls, n, L, weights, perturbation=None):
        """Bernstein-type windows with individual weights (generally not gradient)."""
        return cls("windowed", n=int(n), L=int(L), weights=tuple(float(w) for w in weights),
                   perturbation=perturbation)

    @classmethod
    def superposition(cls, components, perturbation=None):
        comps = tuple((float(w), replace(s, perturbation=None)) for w, s in components)
        return cls("superposition", components=comps, perturbation=perturbation)

    @classmethod
    def fractional(cls, m, ell, perturbation=None):
        """Fast-diffusion model sum_k binom(m-1, k)(-1)^k B(0, k), m in (0, 1].

        All weights are nonnegative in this range; the constraint is >= 1.
        """
        if not 0.0 < m <= 1.0:
            raise ConfigError("fractional model needs m in (0, 1]")
        coeffs = binomial_coefficients(m - 1.0, ell) * (-1.0) ** np.arange(ell + 1)
        comps = [(1.0, cls.ssep())]
        comps += [(float(coeffs[k]), cls.bernstein(0, k)) for k in range(1, ell + 1)]
        return cls.superposition(comps, perturbation=perturbation)

    def with_perturbation(self, p):
        return replace(self, perturbation=p)

    # text form --------------------------------------------------------------
    def canonical(self) -> str:
        body = self._body()
        if self.perturbation is not None:
            body += f"|p={self.perturbation!r}"
        return body

    def _body(self) -> str:
        f = self.family
        if f == "ssep":
            return "ssep()"
        if f == "pmm":
            return f"pmm(n={self.n})"
        if f == "bernstein":
            return f"bernstein(n={self.n},L={self.L})"
        if f == "interpolating":
            return f"interpolating(n={self.n},m={self.m!r},ell={self.ell})"
        if f == "windowed":
            ws = ":".join(repr(w) for w in self.weights)
            return f"windowed(n={self.n},L={self.L},weights={ws})"
        terms = "+".join(f"{w!r}*{c._body()}" for w, c in self.components)
        return f"superposition({terms})"

    def __str__(self):
        return self.canonical()


_NUM = r"[-+]?(?:\d+\.?\d*(?:[eE][-+]?\d+)?|\.\d+(?:[eE][-+]?\d+)?|inf|nan)"


def parse_spec(text: str) -> ModelSpec:
    """Inverse of :meth:`ModelSpec.canonical`."""
    text = "".join(text.split())
    pert = None
    if "|" in text:
        text, tail = text.rsplit("|", 1)
        mt = re.fullmatch(r"p=(" + _NUM + ")", tail)
        if not mt:
            raise ConfigError(f"bad perturbation suffix {tail!r}")
        pert = float(mt.group(1))
    spec, rest = _parse_body(text)
    if rest:
        raise ConfigError(f"trailing text in model spec: {rest!r}")
    return spec.with_perturbation(pert)


def _parse_body(text: str):
    mt = re.match(r"([a-z]+)\(", text)
    if not mt:
        raise ConfigError(f"cannot parse model spec at {text!r}")
    name = mt.group(1)
    pos = mt.end()
    depth = 1
    i = pos
    while i < len(text) and depth:
        depth += {"(": 1, ")": -1}.get(text[i], 0)
        i += 1
    if depth:
        raise ConfigError("unbalanced parentheses in model spec")
    inner, rest = text[pos:i - 1], text[i:]
    if name == "superposition":
        comps = []
        while inner:
            mw = re.match("(" + _NUM + r")\*", inner)
            if not mw:
                raise ConfigError(f"bad superposition term at {inner!r}")
            comp, inner = _parse_body(inner[mw.end():])
            comps.append((float(mw.group(1)), comp))
            if inner.startswith("+"):
                inner = inner[1:]
            elif inner:
                raise ConfigError(f"bad superposition separator at {inner!r}")
        return ModelSpec.superposition(comps), rest
    kwargs = {}
    if inner:
        for item in inner.split(","):
            if "=" not in item:
                raise ConfigError(f"expected key=value, got {item!r}")
            key, val = item.split("=", 1)
            kwargs[key] = val
    try:
        if name == "ssep":
            spec = ModelSpec.ssep()
        elif name == "pmm":
            spec = ModelSpec.pmm(int(kwargs.pop("n")))
        elif name == "bernstein":
            spec = ModelSpec.bernstein(int(kwargs.pop("n")), int(kwargs.pop("L")))
        elif name == "interpolating":
            spec = ModelSpec.interpolating(int(kwargs.pop("n")), float(kwargs.pop("m")),
                                           int(kwargs.pop("ell")))
        elif name == "windowed":
            ws = [float(w) for w in kwargs.pop("weights").split(":")]
            spec = ModelSpec.windowed(int(kwargs.pop("n")), int(kwargs.pop("L")), ws)
        else:
            raise ConfigError(f"unknown family {name!r}")
    except KeyError as exc:
        raise ConfigError(f"{name}: missing parameter {exc.args[0]}") from None
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"{name}: {exc}") from None
    if kwargs:
        raise ConfigError(f"{name}: unknown parameters {sorted(kwargs)}")
    return spec, rest


# ---------------------------------------------------------------------------
# Compiled window tables


class WindowTables:
    """Constraint as a sum of window-count terms, ``tables[L][j, q]``."""

    def __init__(self, tables: dict):
        self.tables = {int(L): np.asarray(F, dtype=float) for L, F in sorted(tables.items())}
        for L, F in self.tables.items():
            if F.shape != (L + 1, L + 1):
                raise ConfigError(f"table for L={L} has shape {F.shape}")

    @property
    def max_len(self) -> int:
        return max(self.tables)

    @property
    def radius(self) -> int:
        """Largest |offset| inspected by the constraint, node site 1 included."""
        return self.max_len + 1

    @property
    def uniform(self) -> bool:
        """True when every window of a given length uses the same count function."""
        return all(np.array_equal(F, np.broadcast_to(F[0], F.shape)) for F in self.tables.values())

    def min_lattice(self) -> int:
        """Smallest N on which the windows around a node do not overlap."""
        return 2 * self.max_len + 2

    def check_lattice(self, n_sites: int):
        if n_sites < self.min_lattice():
            raise SizeError(
                f"N={n_sites} too small: constraint windows need N >= {self.min_lattice()}"
            )

    def nondecreasing(self) -> bool:
        """Every count function nonnegative and nondecreasing, so c is monotone in eta."""
        return all((F >= 0).all() and (np.diff(F, axis=1) >= 0).all() for F in self.tables.values())

    def potential_tables(self) -> dict:
        """phi_L[P] = sum_{q < P} F_L[q] for P = 0..L+1 (requires uniform tables)."""
        if not self.uniform:
            raise ConfigError("window weights differ across offsets; no closed-form potential")
        return {L: np.concatenate([[0.0], np.cumsum(F[0])]) for L, F in self.tables.items()}

    def kernel_arrays(self):
        """(Ls, F) padded for the compiled simulation kernel."""
        Ls = np.array(list(self.tables), dtype=np.int64)
        Lmax = self.max_len
        F = np.zeros((len(Ls), Lmax + 1, Lmax + 1))
        for k, L in enumerate(Ls):
            F[k, : L + 1, : L + 1] = self.tables[L]
        return Ls, F

    # evaluation -------------------------------------------------------------
    def value(self, cfg: Configuration, x: int) -> float:
        """c(tau_x eta) via popcounts on the packed configuration."""
        n = cfg.n_sites
        self.check_lattice(n)
        word = rotate(cfg.bits, n, x)
        total = 0.0
        for L, F in self.tables.items():
            for j in range(L + 1):
                total += F[j, (word & _box_mask(n, j, L)).bit_count()]
        return total

    def evaluate(self, words: np.ndarray, n: int) -> np.ndarray:
        """c at the node {0, 1} for an array of packed configurations of ``n`` sites."""
        self.check_lattice(n)
        out = np.zeros(words.shape, dtype=float)
        for L, F in self.tables.items():
            for j in range(L + 1):
                out += F[j][popcount(words & np.uint64(_box_mask(n, j, L)))]
        return out

    def diffusivity(self, alpha):
        """E_alpha[c] through the binomial law of each window count."""
        alpha = np.asarray(alpha, dtype=float)
        out = np.zeros(alpha.shape)
        for L, F in self.tables.items():
            pmf = binom_dist.pmf(np.arange(L + 1)[:, None], L, alpha.reshape(1, -1))
            out += (F.sum(axis=0) @ pmf).reshape(alpha.shape)
        return out

    def bounds(self) -> tuple[float, float]:
        """Exact (inf, sup) of the constraint over all configurations."""
        if self.nondecreasing():
            zeros = sum(F[:, 0].sum() for F in self.tables.values())
            ones = sum(F[np.arange(L + 1), L].sum() for L, F in self.tables.items())
            return float(zeros), float(ones)
        width = 2 * self.max_len
        if width > MAX_ENUMERATION_SITES:
            raise SizeError(f"support of {width} sites too large to enumerate")
        vals = self.collapsed_values(np.arange(1 << width, dtype=np.uint64))
        return float(vals.min()), float(vals.max())

    def collapsed_values(self, patterns: np.ndarray) -> np.ndarray:
        """Constraint on collapsed windows: bit i of a pattern is site i - Lmax for
        i < Lmax and site i - Lmax + 2 otherwise (the node is dropped)."""
        Lmax = self.max_len
        out = np.zeros(patterns.shape)
        for L, F in self.tables.items():
            for j in range(L + 1):
                mask = ((1 << L) - 1) << (Lmax - j)
                out += F[j][popcount(patterns & np.uint64(mask))]
        return out


@lru_cache(maxsize=None)
def _box_mask(n: int, j: int, L: int) -> int:
    mask = 0
    for off in range(-j, -j + L + 2):
        if off not in (0, 1):
            mask |= 1 << (off % n)
    return mask


def _bernstein_table(n: int, L: int, weights=None) -> np.ndarray:
    F = np.zeros((L + 1, L + 1))
    w = np.full(L + 1, 1.0 / (L + 1)) if weights is None else np.asarray(weights, dtype=float)
    F[:, n] = w
    return F


def _aux_table(n: int, k: int) -> np.ndarray:
    """Count function of p_{n,k}: binom(q, n)/binom(n+k, n) 1{q >= n+1}, normalised."""
    L = n + k
    row = np.zeros(L + 1)
    for q in range(n + 1, L + 1):
        row[q] = math.comb(q, n) / math.comb(L, n)
    return np.tile(row / (L + 1), (L + 1, 1))


def interpolating_series_tables(n: int, m: float, ell: int) -> WindowTables:
    """delta p_n + sum_k |binom(m, k)| p_{n,k}, evaluated for any m (no endpoint shortcut)."""
    signed = binomial_coefficients(m, ell) * (-1.0) ** np.arange(ell + 1)
    delta = float(signed.sum())  # 1 - sum_k |binom(m, k)|
    tables = {n: delta * _bernstein_table(n, n)}
    for k in range(1, ell + 1):
        w = -float(signed[k])
        if w != 0.0:
            tables[n + k] = w * _aux_table(n, k)
    return WindowTables(tables)


@lru_cache(maxsize=256)
def compile_spec(spec: ModelSpec) -> WindowTables:
    """Window tables of a model (the perturbation is not included)."""
    tables: dict = {}

    def add(L, F, weight=1.0):
        if weight == 0.0:
            return
        if L in tables:
            tables[L] = tables[L] + weight * F
        else:
            tables[L] = weight * F

    f = spec.family
    if f == "ssep":
        add(0, np.ones((1, 1)))
    elif f == "pmm":
        add(spec.n, _bernstein_table(spec.n, spec.n))
    elif f == "bernstein":
        add(spec.L, _bernstein_table(spec.n, spec.L))
    elif f == "windowed":
        add(spec.L, _bernstein_table(spec.n, spec.L, spec.weights))
    elif f == "interpolating":
        n, m, ell = spec.n, spec.m, spec.ell
        if m == 0.0:
            add(n, _bernstein_table(n, n))
        elif m == 1.0:
            add(n + 1, _bernstein_table(n + 1, n + 1))
        else:
            for L, F in interpolating_series_tables(n, m, ell).tables.items():
                add(L, F)
    else:
        for w, comp in spec.components:
            for L, F in compile_spec(comp).tables.items():
                add(L, F, w)
    if not tables:
        raise ConfigError("model has no nonzero terms")
    return WindowTables(tables)


# ---------------------------------------------------------------------------
# Direct per-family evaluators


def _require_sites(cfg: Configuration, need: int):
    if cfg.n_sites < need:
        raise SizeError(f"lattice of {cfg.n_sites} sites too small, need >= {need}")


def bernstein_constraint(cfg: Configuration, x: int, n: int, L: int) -> float:
    """Fraction of the L + 1 windows of length L holding exactly n particles."""
    if not 0 <= n <= L:
        raise ConfigError("need 0 <= n <= L")
    _require_sites(cfg, L + 2)
    hits = sum(window_count(cfg, x, box_window(j, L)) == n for j in range(L + 1))
    return hits / (L + 1)


def pmm_constraint(cfg: Configuration, x: int, n: int) -> float:
    """Normalised count of fully occupied boxes of n sites next to the node."""
    if n < 1:
        raise ConfigError("need n >= 1")
    _require_sites(cfg, n + 4)
    full = 0
    for j in range(n + 1):
        if all(cfg[x + i] for i in range(-j, -j + n + 2) if i not in (0, 1)):
            full += 1
    return full / (n + 1)


def interp_aux_constraint(cfg: Configuration, x: int, n: int, k: int) -> float:
    """Auxiliary constraint p_{n,k}."""
    if k < 1:
        raise ConfigError("need k >= 1")
    _require_sites(cfg, n + k + 4)
    L = n + k
    total = 0.0
    for j in range(L + 1):
        q = window_count(cfg, x, box_window(j, L))
        if q >= n + 1:
            total += math.comb(q, n) / math.comb(L, n)
    return total / (L + 1)


def interp_constraint(cfg: Configuration, x: int, n: int, m: float, ell: int) -> float:
    """Interpolating constraint between PMM(n) (m = 0) and PMM(n + 1) (m = 1)."""
    if not 0.0 <= m <= 1.0 or ell < 2 or n < 1:
        raise ConfigError("need n >= 1, m in [0, 1], ell >= 2")
    if m == 0.0:
        return pmm_constraint(cfg, x, n)
    if m == 1.0:
        return pmm_constraint(cfg, x, n + 1)
    p_n = pmm_constraint(cfg, x, n)
    coeffs = binomial_coefficients(m, ell)
    total = p_n
    for k in range(1, ell + 1):
        total += coeffs[k] * (-1) ** k * (p_n - interp_aux_constraint(cfg, x, n, k))
    return total


def constraint_value(cfg: Configuration, x: int, spec: ModelSpec) -> float:
    """Kinetic constraint c(tau_x eta) of the bond {x, x+1} (no perturbation)."""
    f = spec.family
    if f == "ssep":
        return 1.0
    if f == "pmm":
        return pmm_constraint(cfg, x, spec.n)
    if f == "bernstein":
        return bernstein_constraint(cfg, x, spec.n, spec.L)
    if f == "interpolating":
        return interp_constraint(cfg, x, spec.n, spec.m, spec.ell)
    if f == "windowed":
        return sum(
            w for j, w in enumerate(spec.weights)
            if window_count(cfg, x, box_window(j, spec.L)) == spec.n
        )
    return sum(w * constraint_value(cfg, x, comp) for w, comp in spec.components)


def bond_rate(cfg: Configuration, x: int, spec: ModelSpec) -> float:
    """Exchange rate of the bond {x, x+1} in microscopic time units."""
    if cfg[x] == cfg[x + 1]:
        return 0.0
    return constraint_value(cfg, x, spec) + (spec.perturbation or 0.0)


# ---------------------------------------------------------------------------
# Expectations under Bernoulli product measures


def exact_expectation(spec: ModelSpec, alpha: float, chunk: int = 1 << 20) -> float:
    """E_alpha[c] by enumerating every occupation of the constraint's support."""
    if not 0.0 <= alpha <= 1.0:
        raise ConfigError("alpha must lie in [0, 1]")
    tables = compile_spec(spec)
    width = 2 * tables.max_len
    if width > MAX_ENUMERATION_SITES:
        raise SizeError(f"support of {width} sites exceeds {MAX_ENUMERATION_SITES}")
    total = 0.0
    for start in range(0, 1 << width, chunk):
        pats = np.arange(start, min(start + chunk, 1 << width), dtype=np.uint64)
        k = popcount(pats)
        weights = alpha ** k * (1.0 - alpha) ** (width - k)
        total += float(np.dot(weights, tables.collapsed_values(pats)))
    return total


def closed_form_diffusivity(spec: ModelSpec, alpha):
    """Family formula for E_alpha[c]: Bernstein polynomials, alpha^n, and the
    truncated binomial series of the interpolating model."""
    alpha = np.asarray(alpha, dtype=float)
    f = spec.family
    if f == "ssep":
        return np.ones_like(alpha)
    if f == "pmm":
        return alpha ** spec.n
    if f == "bernstein":
        return math.comb(spec.L, spec.n) * alpha ** spec.n * (1 - alpha) ** (spec.L - spec.n)
    if f == "windowed":
        return sum(spec.weights) * math.comb(spec.L, spec.n) * alpha ** spec.n * (1 - alpha) ** (spec.L - spec.n)
    if f == "interpolating":
        if spec.m == 0.0:
            return alpha ** spec.n
        if spec.m == 1.0:
            return alpha ** (spec.n + 1)
        coeffs = binomial_coefficients(spec.m, spec.ell)
        series = sum(coeffs[k] * (alpha - 1.0) ** k for k in range(spec.ell + 1))
        return alpha ** spec.n * series
    return sum(w * closed_form_diffusivity(c, alpha) for w, c in spec.components)
