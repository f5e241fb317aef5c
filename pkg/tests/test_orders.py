from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from leftcurtain import Measure, combine
from leftcurtain.measures import moments, rightmost_submeasure, restrict_quantile
from leftcurtain.orders import (
    OrderRelation,
    call_gap,
    leq_composite,
    leq_convex,
    leq_plus,
    leq_sto,
    max_potential_gap,
)
from support import atomic_measures, dilate, mixed_measures, quantile_bisect, small_atomic

U01 = Measure.uniform(0.0, 1.0)
RELATIONS = list(OrderRelation)


def test_parse_short_tags():
    assert OrderRelation.parse("cp") is OrderRelation.CONVEX_PLUS
    assert OrderRelation.parse("ps") is OrderRelation.PLUS_STO
    assert OrderRelation.parse("cs") is OrderRelation.CONVEX_STO
    assert OrderRelation.parse("cps") is OrderRelation.CONVEX_PLUS_STO
    assert OrderRelation.parse("sto") is OrderRelation.STO


# mass order


def test_leq_plus_examples():
    assert leq_plus(Measure.uniform(0.25, 0.75, 0.5), U01)
    assert not leq_plus(Measure.atom(0.5, 0.1), U01)
    mu = combine([(1, U01), (1, Measure.atom(3.0, 0.2))])
    assert leq_plus(mu, mu)


@given(mixed_measures(), st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_quantile_pieces_are_below(nu, a, b):
    s, t = sorted((a * nu.mass, b * nu.mass))
    if t - s > 1e-6:
        assert leq_plus(restrict_quantile(nu, s, t), nu)


def test_leq_plus_against_cell_masses():
    # nu(I) >= mu(I) on every interval of a fine grid, plus atoms compared directly
    nu = combine([(1, Measure.uniform(0.0, 2.0, 1.0)), (1, Measure.atom(1.0, 0.3))])
    good = combine([(1, Measure.uniform(0.5, 1.5, 0.4)), (1, Measure.atom(1.0, 0.3))])
    bad = combine([(1, Measure.uniform(0.5, 1.5, 0.6))])
    grid = np.linspace(-0.5, 2.5, 3001)
    for mu, expect in ((good, True), (bad, False)):
        oracle = bool(np.all(np.diff(mu.cdf(grid)) <= np.diff(nu.cdf(grid)) + 1e-12))
        assert oracle == expect == leq_plus(mu, nu)


# stochastic order


def test_leq_sto_examples():
    assert leq_sto(U01, Measure.uniform(0.5, 1.5))
    assert not leq_sto(Measure.from_atoms([0.0, 2.0]), Measure.from_atoms([1.0, 1.0]))
    assert leq_sto(U01, U01)


@given(mixed_measures(mass=1.0), mixed_measures(mass=1.0))
def test_leq_sto_matches_quantile_comparison(mu, nu):
    t = np.linspace(0.0, 1.0, 2001)[1:]
    gap = np.max(quantile_bisect(mu, t) - quantile_bisect(nu, t))
    if gap > 1e-6:
        assert not leq_sto(mu, nu)
    if leq_sto(mu, nu):
        assert gap <= 1e-9


@given(mixed_measures(), st.floats(0.05, 1.0))
def test_submeasures_below_the_rightmost_one(nu, frac):
    alpha = frac * nu.mass
    top = rightmost_submeasure(nu, alpha)
    for s in np.linspace(0, nu.mass - alpha, 4):
        piece = restrict_quantile(nu, float(s), float(s) + alpha)
        assert leq_sto(piece, top, tol=1e-9)


# convex order


def test_leq_convex_examples():
    assert leq_convex(Measure.atom(0.0), Measure.from_atoms([-1.0, 1.0], [0.5, 0.5]))
    assert leq_convex(U01, Measure.uniform(-1.0, 2.0, 1.0))
    assert not leq_convex(Measure.atom(0.0), Measure.atom(1.0))


def test_uniform_spread_by_dense_potentials():
    xs = np.linspace(-2, 3, 5001)
    assert np.all(U01.potential(xs) <= Measure.uniform(-1.0, 2.0, 1.0).potential(xs) + 1e-15)


@given(mixed_measures(mass=1.0), mixed_measures(mass=1.0))
def test_potential_gap_matches_dense_grid(mu, nu):
    from support import brute_convex_gap

    exact = max_potential_gap(mu, nu)
    dense = brute_convex_gap(mu, nu)
    # the grid misses the maximum by at most the Lipschitz constant (2 * mass) times half a cell
    cell = (max(mu.hi[-1], nu.hi[-1]) - min(mu.lo[0], nu.lo[0]) + 2) / 4000
    assert dense - 1e-12 <= exact <= dense + 2 * cell


@given(atomic_measures(max_atoms=4), st.integers(0, 2 ** 32 - 1))
def test_dilations_are_larger(mu, seed):
    nu = dilate(mu, np.random.default_rng(seed))
    assert leq_convex(mu, nu)
    assert not leq_convex(nu, mu) or nu == mu


# composite relations


def test_convex_plus_witness_by_symmetry():
    holds, eta = leq_composite("cp", Measure.atom(0.5, 0.5), U01)
    assert holds and eta == Measure.uniform(0.25, 0.75)


def test_convex_plus_sto_example_and_call_grid():
    assert leq_composite("cps", Measure.atom(0.4), U01)[0]
    # where the atom's call is in the money (K < 0.4) the smallest margin is 0.1 at K = 0;
    # beyond K = 1 both calls vanish, so over the whole line the margin only reaches 0
    K = np.linspace(-1, 0.4, 14001)
    margin = (1 - K) ** 2 / 2 - np.maximum(0.4 - K, 0)
    assert margin.min() == pytest.approx(0.1, abs=1e-9)
    assert K[np.argmin(margin)] == pytest.approx(0.0, abs=1e-3)
    assert call_gap(Measure.atom(0.4), U01) == pytest.approx(0.0, abs=1e-12)


def test_plus_sto_example():
    nu = combine([(1, U01), (1, Measure.atom(3.0))])
    holds, top = leq_composite("ps", Measure.atom(2.0), nu)
    assert holds and top == Measure.atom(3.0)


@pytest.mark.parametrize("rel", RELATIONS)
@given(mu=small_atomic(), nu=small_atomic())
def test_antisymmetry(rel, mu, nu):
    if leq_composite(rel, mu, nu)[0] and leq_composite(rel, nu, mu)[0]:
        assert mu == nu


def _chain(rel: OrderRelation, mu: Measure, rng) -> tuple[Measure, Measure]:
    """Two successors of mu, each related to the previous one by ``rel``."""
    def step(m):
        if rel is OrderRelation.PLUS:
            return combine([(1, m), (1, Measure.atom(float(rng.uniform(-2, 2)), 0.3))])
        if rel is OrderRelation.STO:
            # x -> x + c + k (x - min): increasing and never below the identity
            c, k, x0 = rng.uniform(0, 1), rng.uniform(0, 1), m.lo[0]
            return Measure(m.widths, m.lo + c + k * (m.lo - x0), m.hi + c + k * (m.hi - x0))
        if rel is OrderRelation.CONVEX:
            return dilate(m, rng)
        if rel is OrderRelation.CONVEX_STO:
            return dilate(m, rng).shifted(float(rng.uniform(0, 1)))
        extra = Measure.atom(float(rng.uniform(-2, 2)), 0.3)
        grown = combine([(1, m), (1, extra)])
        if rel is OrderRelation.CONVEX_PLUS:
            return combine([(1, dilate(m, rng)), (1, extra)])
        if rel is OrderRelation.PLUS_STO:
            return combine([(1, m.shifted(float(rng.uniform(0, 1)))), (1, extra)])
        return combine([(1, dilate(m, rng).shifted(float(rng.uniform(0, 1)))), (1, extra)])
    b = step(mu)
    return b, step(b)


@pytest.mark.parametrize("rel", RELATIONS)
@given(mu=atomic_measures(max_atoms=3), seed=st.integers(0, 2 ** 32 - 1))
def test_transitivity(rel, mu, seed):
    rng = np.random.default_rng(seed)
    b, c = _chain(rel, mu, rng)
    assert leq_composite(rel, mu, b)[0]
    assert leq_composite(rel, b, c)[0]
    assert leq_composite(rel, mu, c)[0]


@given(atomic_measures(max_atoms=4), st.integers(0, 2 ** 32 - 1))
def test_implication_lattice(mu, seed):
    rng = np.random.default_rng(seed)
    nu = dilate(mu, rng)
    assert leq_convex(mu, nu) and leq_composite("cs", mu, nu)[0]
    up = mu.shifted(float(rng.uniform(0, 1)))
    assert leq_sto(mu, up) and leq_composite("ps", mu, up)[0]
    assert leq_plus(mu, combine([(1, mu), (1, Measure.atom(0.0, 0.1))]))


@given(mixed_measures(mass=1.0), mixed_measures(mass=1.0))
def test_plus_with_equal_mass_forces_equality(mu, nu):
    if leq_plus(mu, nu):
        assert mu == nu


@given(atomic_measures(max_atoms=5), mixed_measures(), st.integers(0, 2 ** 32 - 1))
def test_convex_plus_witness_is_sound(mu, pad, seed):
    nu = combine([(1, dilate(mu, np.random.default_rng(seed))), (1, pad)])
    holds, eta = leq_composite("cp", mu, nu)
    assert holds
    assert leq_convex(mu, eta, tol=1e-9) and leq_plus(eta, nu, tol=1e-9)
    assert moments(eta)[0] == pytest.approx(mu.mass, abs=1e-12)
