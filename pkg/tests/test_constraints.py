import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kcexclusion.constraints import (
    ModelSpec,
    binomial_coefficients,
    binomial_tail,
    bernstein_constraint,
    bond_rate,
    closed_form_diffusivity,
    compile_spec,
    constraint_value,
    default_ell,
    exact_expectation,
    gen_binom,
    interp_aux_constraint,
    interp_constraint,
    parse_spec,
    pmm_constraint,
)
from kcexclusion.errors import ConfigError, SizeError
from kcexclusion.lattice import Configuration, all_configurations, box_window, window_count

ALPHAS = np.linspace(0, 1, 11)

MODELS = [
    ModelSpec.ssep(),
    ModelSpec.pmm(1),
    ModelSpec.pmm(2),
    ModelSpec.bernstein(0, 2),
    ModelSpec.bernstein(1, 3),
    ModelSpec.interpolating(1, 0.5, 3),
    ModelSpec.interpolating(2, 0.25, 2),
    ModelSpec.windowed(1, 2, (0.2, 0.5, 0.1)),
    ModelSpec.superposition([(0.3, ModelSpec.pmm(1)), (0.7, ModelSpec.bernstein(1, 2))]),
]


def test_gen_binom_examples():
    assert gen_binom(0.5, 2) == -0.125
    assert gen_binom(0.37, 0) == 1.0
    assert gen_binom(1, 2) == 0.0
    assert np.allclose(binomial_coefficients(0.5, 6), [gen_binom(0.5, k) for k in range(7)])
    # integer m agrees with math.comb
    assert np.allclose(binomial_coefficients(5, 7), [math.comb(5, k) for k in range(8)])


@pytest.mark.parametrize("m", [0.1, 0.25, 0.5, 0.75, 0.9])
def test_binomial_table_signs_and_mass(m):
    c = binomial_coefficients(m, 64)
    k = np.arange(1, 65)
    assert np.all((-1.0) ** (k + 1) * c[1:] >= 0)
    assert binomial_tail(m, 1, 64) <= 1.0
    # partial sums increase toward 1 (slowly for small m)
    partial = [binomial_tail(m, 1, e) for e in (4, 16, 64, 1024)]
    assert all(a < b < 1 for a, b in zip(partial, partial[1:]))


def test_default_ell():
    assert default_ell(12) == 3
    assert default_ell(64) == 8
    assert default_ell(10) == 3
    assert default_ell(4) == 2


def test_constraint_examples():
    # two windows {x+2}, {x-1}; one full
    c = Configuration.from_string("10000001")  # eta(-1) = 1, eta(2) = 0 at x = 0
    assert bernstein_constraint(c, 0, 1, 1) == 0.5
    assert bernstein_constraint(Configuration.full(8), 0, 0, 2) == 0.0
    assert bernstein_constraint(Configuration.full(8), 0, 3, 3) == 1.0
    c = Configuration.from_string("00100001")
    assert pmm_constraint(c, 0, 1) == 1.0
    assert pmm_constraint(Configuration.from_string("1000000000"), 0, 2) == 0.0
    assert pmm_constraint(Configuration.full(10), 3, 2) == 1.0
    assert interp_aux_constraint(Configuration.full(12), 0, 1, 3) == pytest.approx(1.0)
    assert interp_aux_constraint(Configuration.empty(12), 0, 1, 3) == 0.0
    assert interp_constraint(Configuration.full(14), 0, 1, 0.5, 4) == pytest.approx(1.0)
    cfg = Configuration.from_string("11010100")
    assert window_count(cfg, 0, box_window(1, 2)) == 0


def test_bond_rate_examples():
    c = Configuration.from_string("10000011")  # x = 7: eta(6)=1, eta(7)=1, eta(0)=1 -> concordant
    assert bond_rate(c, 7, ModelSpec.pmm(1)) == 0.0
    c = Configuration.from_string("00001100")  # x = 4? use x = 5: eta(4)=1, eta(5)=1, eta(6)=0, eta(7)=0
    assert bond_rate(c, 5, ModelSpec.ssep()) == 1.0
    assert bond_rate(c, 5, ModelSpec.pmm(1)) == 0.5
    assert bond_rate(c, 5, ModelSpec.pmm(1, perturbation=0.25)) == 0.75


def test_too_small_lattice():
    with pytest.raises(SizeError):
        pmm_constraint(Configuration.full(4), 0, 2)
    with pytest.raises(SizeError):
        compile_spec(ModelSpec.pmm(3)).value(Configuration.full(7), 0)


@pytest.mark.parametrize("spec", MODELS, ids=str)
def test_tables_match_direct_evaluation(spec):
    """Window tables against the per-family definitions, exhaustive at N = 12."""
    N = 12
    tables = compile_spec(spec)
    words = all_configurations(N)
    vec = tables.evaluate(words, N)
    rng = np.random.default_rng(5)
    for w in rng.choice(words, 300, replace=False):
        cfg = Configuration(N, int(w))
        direct = constraint_value(cfg, 0, spec)
        assert vec[int(w)] == pytest.approx(direct, abs=1e-13)
        x = int(rng.integers(N))
        assert tables.value(cfg, x) == pytest.approx(constraint_value(cfg, x, spec), abs=1e-13)


@pytest.mark.parametrize("spec", MODELS, ids=str)
def test_node_independence(spec):
    N = 12
    tables = compile_spec(spec)
    words = all_configurations(N)
    base = tables.evaluate(words, N)
    for flip in (1, 2, 3):
        assert np.array_equal(base, tables.evaluate(words ^ np.uint64(flip), N))


@pytest.mark.parametrize("m", np.linspace(0, 1, 11))
def test_interpolating_nonnegative(m):
    tables = compile_spec(ModelSpec.interpolating(1, float(m), 4))
    vals = tables.evaluate(all_configurations(12), 12)
    assert vals.min() >= -1e-14
    assert vals.max() <= 1 + 2 * binomial_tail(m, 1, 4) + 1e-12


def _series_interp(cfg, x, n, m, ell):
    # general series, no short-circuit at the endpoints
    p = pmm_constraint(cfg, x, n)
    b = binomial_coefficients(m, ell)
    return p + sum(b[k] * (-1) ** k * (p - interp_aux_constraint(cfg, x, n, k)) for k in range(1, ell + 1))


@pytest.mark.parametrize("n", [1, 2])
def test_endpoint_identities_series(n):
    N = 12
    ell = 3 if n == 1 else 2
    rng = np.random.default_rng(n)
    for w in rng.integers(0, 1 << N, 200):
        cfg = Configuration(N, int(w))
        x = int(rng.integers(N))
        assert _series_interp(cfg, x, n, 0.0, ell) == pytest.approx(pmm_constraint(cfg, x, n), abs=1e-12)
        assert _series_interp(cfg, x, n, 1.0, ell) == pytest.approx(pmm_constraint(cfg, x, n + 1), abs=1e-12)
        assert bernstein_constraint(cfg, x, n, n) == pmm_constraint(cfg, x, n)


@pytest.mark.parametrize("n,L", [(0, 2), (1, 2), (1, 3), (2, 3), (2, 5)])
def test_bernstein_expectation(n, L):
    spec = ModelSpec.bernstein(n, L)
    for a in ALPHAS:
        assert exact_expectation(spec, a) == pytest.approx(math.comb(L, n) * a**n * (1 - a) ** (L - n), abs=1e-12)
    assert np.allclose(compile_spec(spec).diffusivity(ALPHAS), closed_form_diffusivity(spec, ALPHAS), atol=1e-13)


def test_expectation_examples():
    assert exact_expectation(ModelSpec.bernstein(1, 2), 0.5) == pytest.approx(0.5)
    assert exact_expectation(ModelSpec.ssep(), 0.3) == pytest.approx(1.0)
    v = exact_expectation(ModelSpec.interpolating(1, 0.5, 8), 0.7)
    assert abs(v - 0.7**1.5) <= binomial_tail(0.5, 9, 400)


@pytest.mark.parametrize("k", [1, 2, 4])
def test_aux_expectation(k):
    # E[p_{n,k}] = alpha^n (1 - (1 - alpha)^k)
    from kcexclusion.constraints import WindowTables, _aux_table

    t = WindowTables({1 + k: _aux_table(1, k)})
    for a in ALPHAS:
        assert t.diffusivity(a) == pytest.approx(a * (1 - (1 - a) ** k), abs=1e-13)


@pytest.mark.parametrize("spec", [ModelSpec.interpolating(1, 0.5, 4), ModelSpec.interpolating(2, 0.3, 5)], ids=str)
def test_interpolating_expectation(spec):
    for a in ALPHAS:
        assert exact_expectation(spec, a) == pytest.approx(float(closed_form_diffusivity(spec, a)), abs=1e-12)
    # tends to alpha^(n+m), without an extra factor m
    big = spec.__class__.interpolating(spec.n, spec.m, 200)
    assert np.allclose(closed_form_diffusivity(big, ALPHAS), ALPHAS ** (spec.n + spec.m), atol=0.01)


def test_bounds_and_regime_quantities():
    assert compile_spec(ModelSpec.ssep()).bounds() == (1.0, 1.0)
    assert compile_spec(ModelSpec.pmm(2)).bounds() == (0.0, 1.0)
    lo, hi = compile_spec(ModelSpec.windowed(1, 2, (0.2, 0.5, 0.1))).bounds()
    vals = compile_spec(ModelSpec.windowed(1, 2, (0.2, 0.5, 0.1))).evaluate(all_configurations(10), 10)
    assert lo == pytest.approx(vals.min()) and hi == pytest.approx(vals.max())
    lo, _ = compile_spec(ModelSpec.fractional(0.5, 4)).bounds()
    assert lo == 1.0


def test_fractional_diffusivity():
    # D(alpha) = sum_k binom(m-1,k)(-1)^k (1-alpha)^k -> alpha^(m-1)
    spec = ModelSpec.fractional(0.5, 60)
    a = np.array([0.5, 0.8, 0.95])
    assert np.allclose(closed_form_diffusivity(spec, a), a ** -0.5, atol=1e-6)


@pytest.mark.parametrize("spec", MODELS + [ModelSpec.pmm(2, perturbation=0.125)], ids=str)
def test_canonical_roundtrip(spec):
    assert parse_spec(spec.canonical()) == spec
    assert parse_spec(spec.canonical()).canonical() == spec.canonical()


@pytest.mark.parametrize("text", ["pmm()", "pmm(n=0)", "bernstein(n=3,L=2)", "interpolating(n=1,m=1.5,ell=4)",
                                  "foo(n=1)", "pmm(n=1", "pmm(n=1)|q=2", "pmm(n=1,k=2)", "interpolating(n=1,m=0.5,ell=1)"])
def test_parse_errors(text):
    with pytest.raises(ConfigError):
        parse_spec(text)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, (1 << 14) - 1), st.integers(0, 13))
def test_shift_covariance(word, x):
    spec = ModelSpec.interpolating(1, 0.5, 3)
    tables = compile_spec(spec)
    cfg = Configuration(14, word)
    from kcexclusion.lattice import shift

    assert tables.value(cfg, x) == tables.value(shift(cfg, x), 0)
