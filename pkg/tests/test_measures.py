from __future__ import annotations

import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from leftcurtain import DomainError, Measure, combine
from leftcurtain.measures import (
    atomize_dyadic,
    cdf,
    difference,
    from_spatial,
    moments,
    potential,
    quantile,
    restrict_quantile,
    restrict_union,
    rightmost_submeasure,
    spatial_form,
    top_down,
    wasserstein,
)
from leftcurtain.orders import leq_plus, leq_sto
from support import (
    atomic_measures,
    mixed_measures,
    potential_dense,
    quantile_bisect,
    quantile_cells,
    wasserstein_cdf,
)

U01 = Measure.uniform(0.0, 1.0)
HALVES = Measure.from_atoms([0.0, 1.0], [0.5, 0.5])


# quantile and cdf


def test_quantile_examples():
    assert quantile(U01, 0.25) == pytest.approx(0.25)
    assert quantile(Measure.atom(3.0), 0.7) == 3.0
    assert quantile(HALVES, 0.5) == 0.0
    assert quantile(HALVES, 0.5 + 1e-12) == 1.0


def test_quantile_rejects_levels_outside_mass():
    with pytest.raises(DomainError):
        quantile(U01, 0.0)
    with pytest.raises(DomainError):
        quantile(U01, 1.5)


def test_cdf_examples():
    assert cdf(Measure.atom(0.0), 0.0) == 1.0
    assert cdf(Measure.uniform(0.0, 2.0), 1.0) == pytest.approx(1.0)
    assert cdf(combine([(1, U01), (1, Measure.atom(1.0))]), 1.0) == pytest.approx(2.0)


@given(mixed_measures())
def test_quantile_matches_cdf_inversion(mu):
    t = np.linspace(0.0, mu.mass, 41)[1:]
    assert np.allclose(quantile(mu, t), quantile_bisect(mu, t), atol=1e-9)


# moments and potential


def test_moments_examples():
    assert moments(Measure.atom(2.0, 0.5)) == pytest.approx((0.5, 2.0, 2.0))
    assert moments(U01) == pytest.approx((1.0, 0.5, 1 / 3))
    # int_{1/4}^{3/4} x^2 dx = 0.13541666...
    exact = (0.75 ** 3 - 0.25 ** 3) / 3
    assert moments(Measure.uniform(0.25, 0.75)) == pytest.approx((0.5, 0.5, exact))


def test_potential_examples():
    for x in (-2.0, 0.0, 1.5):
        assert potential(Measure.atom(0.0), x) == pytest.approx(abs(x))
    assert potential(U01, 0.5) == pytest.approx(0.25)
    assert potential(Measure.from_atoms([-1.0, 1.0], [0.5, 0.5]), 0.0) == pytest.approx(1.0)


@given(mixed_measures(), st.integers(-400, 400).map(lambda k: k / 100))
def test_potential_matches_dense_quadrature(mu, x):
    assert potential(mu, x) == pytest.approx(potential_dense(mu, x), abs=2e-4 * mu.mass * (1 + abs(x)))


def test_potential_vectorized_agrees_with_scalar(rng):
    mu = combine([(1, Measure.uniform(-1, 2, 0.7)), (1, Measure.atom(0.3, 0.4)), (1, Measure.atom(5.0, 0.1))])
    xs = rng.uniform(-3, 7, 50)
    assert np.allclose(potential(mu, xs), [potential(mu, float(x)) for x in xs], atol=1e-14)


# Kantorovich distance


def test_wasserstein_examples():
    assert wasserstein(Measure.atom(0.0), Measure.atom(1.0)) == pytest.approx(1.0)
    for n, eps in ((4, 1e-3), (32, 1e-3)):
        shifted = Measure.uniform(eps / n, 1 + eps / n)
        assert abs(wasserstein(U01, shifted) - eps / n) <= 1e-12
    assert wasserstein(Measure.from_atoms([0.0, 2.0], [0.5, 0.5]), Measure.uniform(0.0, 2.0, 1.0)) == pytest.approx(0.5)


def test_wasserstein_example_against_riemann_sum():
    mu = Measure.from_atoms([0.0, 2.0], [0.5, 0.5])
    nu = Measure.uniform(0.0, 2.0, 1.0)
    n = 10 ** 6
    t = (np.arange(n) + 0.5) / n
    riemann = float(np.mean(np.abs(np.where(t <= 0.5, 0.0, 2.0) - 2 * t)))
    assert wasserstein(mu, nu) == pytest.approx(riemann, abs=1e-9)


@given(mixed_measures(mass=1.0), mixed_measures(mass=1.0))
def test_wasserstein_matches_cdf_integral(mu, nu):
    assert wasserstein(mu, nu) == pytest.approx(wasserstein_cdf(mu, nu), abs=1e-6)


@given(mixed_measures(mass=1.0), mixed_measures(mass=1.0), mixed_measures(mass=1.0))
def test_wasserstein_is_a_metric(a, b, c):
    assert wasserstein(a, b) == pytest.approx(wasserstein(b, a), abs=1e-12)
    assert wasserstein(a, a) <= 1e-12
    assert wasserstein(a, c) <= wasserstein(a, b) + wasserstein(b, c) + 1e-10


def test_wasserstein_rejects_unequal_masses():
    with pytest.raises(DomainError):
        wasserstein(U01, Measure.atom(0.0, 2.0))


@given(mixed_measures(mass=1.0), st.integers(0, 300).map(lambda k: k / 100))
def test_sorted_pair_distance_is_barycenter_gap(mu, shift):
    nu = mu.shifted(shift)
    assert leq_sto(mu, nu)
    assert wasserstein(mu, nu) == pytest.approx(moments(nu)[1] - moments(mu)[1], abs=1e-12)


@given(mixed_measures(mass=1.0), mixed_measures(mass=1.0), st.integers(-400, 400).map(lambda k: k / 100))
def test_potential_is_one_lipschitz_in_w(mu, nu, x):
    assert abs(potential(mu, x) - potential(nu, x)) <= wasserstein(mu, nu) + 1e-12


# quantile surgery


def test_restrict_quantile_examples():
    assert restrict_quantile(U01, 0.25, 0.75) == Measure.uniform(0.25, 0.75)
    assert restrict_quantile(HALVES, 0.25, 0.75) == Measure.from_atoms([0.0, 1.0], [0.25, 0.25])
    assert restrict_quantile(U01, 0.0, 1.0) == U01


def test_restrict_union_complement():
    out = restrict_union(U01, [(0.0, 0.25), (0.75, 1.0)])
    assert out == combine([(1, Measure.uniform(0.0, 0.25)), (1, Measure.uniform(0.75, 1.0))])


def test_rightmost_submeasure_examples():
    assert rightmost_submeasure(U01, 0.5) == Measure.uniform(0.5, 1.0)
    assert rightmost_submeasure(HALVES, 0.75) == Measure.from_atoms([0.0, 1.0], [0.25, 0.5])
    assert rightmost_submeasure(U01, 1.0) == U01


@given(mixed_measures())
def test_full_restriction_is_identity(mu):
    assert restrict_quantile(mu, 0.0, mu.mass) == mu


@given(mixed_measures(), st.floats(0.05, 0.95))
def test_rightmost_submeasure_dominates_other_submeasures(nu, frac):
    alpha = frac * nu.mass
    top = rightmost_submeasure(nu, alpha)
    assert leq_plus(top, nu)
    for s in np.linspace(0.0, nu.mass - alpha, 5):
        assert leq_sto(restrict_quantile(nu, float(s), float(s) + alpha), top, tol=1e-9)


# Top and Down


def test_top_down_examples():
    top, down = top_down(Measure.from_atoms([0.0, 3.0]), Measure.from_atoms([1.0, 2.0]))
    assert top == Measure.from_atoms([1.0, 3.0])
    assert down == Measure.from_atoms([0.0, 2.0])
    mu = Measure.uniform(0.0, 1.0)
    assert top_down(mu, mu) == (mu, mu)
    top, down = top_down(U01, Measure.uniform(0.5, 1.5))
    assert (top, down) == (Measure.uniform(0.5, 1.5), U01)


@given(mixed_measures(mass=1.0), mixed_measures(mass=1.0))
def test_top_down_split_the_distance(mu, nu):
    top, down = top_down(mu, nu)
    w = wasserstein(mu, nu)
    assert w == pytest.approx(wasserstein(mu, down) + wasserstein(down, nu), abs=1e-12)
    assert w == pytest.approx(wasserstein(mu, top) + wasserstein(top, nu), abs=1e-12)


@given(mixed_measures(mass=1.0), mixed_measures(mass=1.0), mixed_measures())
def test_top_commutes_with_adding_a_measure(mu, mu2, nu):
    lhs = combine([(1, top_down(mu, mu2)[0]), (1, nu)])
    rhs = top_down(combine([(1, mu), (1, nu)]), combine([(1, mu2), (1, nu)]))[0]
    assert wasserstein(lhs, rhs) <= 1e-10


# combination and spatial form


def test_combine_examples():
    assert combine([(1, Measure.atom(0.0)), (1, Measure.atom(0.0))]) == Measure.atom(0.0, 2.0)
    half = combine([(0.5, U01)])
    assert spatial_form(half).blocks == ((0.0, 1.0, 0.5),)
    mixed = combine([(1, U01), (1, Measure.atom(0.5))])
    assert mixed.mass == pytest.approx(2.0)
    flat = mixed.lo == mixed.hi
    assert mixed.widths[flat].tolist() == [1.0] and mixed.lo[flat].tolist() == [0.5]


def test_spatial_form_examples():
    sf = spatial_form(combine([(1, Measure.atom(0.0)), (1, U01)]))
    assert sf.atoms == ((0.0, 1.0),)
    assert sf.blocks == ((0.0, 1.0, 1.0),)
    assert spatial_form(Measure.uniform(0.0, 2.0)).blocks == ((0.0, 2.0, 1.0),)


@given(mixed_measures())
def test_spatial_form_round_trip(mu):
    assert from_spatial(spatial_form(mu)) == mu


@given(mixed_measures())
def test_json_round_trip(mu):
    assert Measure.from_json(json.loads(json.dumps(mu.to_json()))) == mu


@pytest.mark.parametrize("bad", [
    [], {"atoms": [[0.0]]}, {"atoms": [[0.0, -1.0]]}, {"uniform": [[1.0, 0.0, 1.0]]},
    {"points": [[0, 1]]}, {"atoms": [], "uniform": []}, {"atoms": [[math.inf, 1.0]]},
])
def test_from_json_rejects_malformed_literals(bad):
    with pytest.raises(DomainError):
        Measure.from_json(bad)


def test_difference_and_rejection():
    nu = combine([(1, U01), (1, Measure.atom(2.0, 0.5))])
    assert difference(nu, Measure.uniform(0.0, 0.5)) == combine([(1, Measure.uniform(0.5, 1.0)), (1, Measure.atom(2.0, 0.5))])
    with pytest.raises(DomainError):
        difference(U01, Measure.atom(0.5, 0.1))


# atomization


def test_atomize_examples():
    assert atomize_dyadic(U01, 1) == Measure.from_atoms([0.25, 0.75], [0.5, 0.5])
    assert atomize_dyadic(U01, 2) == Measure.from_atoms([0.125, 0.375, 0.625, 0.875], [0.25] * 4)
    five = atomize_dyadic(Measure.atom(5.0), 6)
    assert len(five) == 1 and five == Measure.atom(5.0)


@given(mixed_measures(), st.integers(0, 8))
def test_atomization_keeps_mass_and_barycenter(mu, k):
    at = atomize_dyadic(mu, k)
    m0, b0, _ = moments(mu)
    m1, b1, _ = moments(at)
    assert m1 == pytest.approx(m0, abs=1e-12) and b1 == pytest.approx(b0, abs=1e-12)
    assert at.is_atomic


def test_atomization_block_means_against_cells():
    mu = combine([(1, Measure.uniform(-1, 1, 0.6)), (1, Measure.atom(0.2, 0.4))])
    at = atomize_dyadic(mu, 3)
    cells = quantile_cells(mu, 8 * 5000).reshape(8, -1).mean(axis=1)
    got = np.repeat(at.lo, np.round(at.widths / (mu.mass / 8)).astype(int))
    assert np.allclose(got, cells, atol=1e-6)


def test_empirical_quantile_push_forward(rng):
    mu = combine([(1, Measure.uniform(-1, 1, 0.6)), (1, Measure.atom(0.2, 0.4))])
    draws = quantile(mu, rng.uniform(0, 1, 20_000) * mu.mass)
    emp = Measure.from_atoms(draws, np.full(draws.size, mu.mass / draws.size))
    assert wasserstein(emp, mu) <= 3 / math.sqrt(draws.size)
