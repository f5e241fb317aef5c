from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.optimize import linprog

from leftcurtain import Measure, combine
from leftcurtain.measures import (
    atomize_dyadic,
    cdf,
    leftmost_submeasure,
    moments,
    potential,
    restrict_quantile,
    restrict_union,
    wasserstein,
)
from leftcurtain.orders import leq_convex, leq_plus, leq_sto
from leftcurtain.shadow import (
    FeasibilityError,
    QuantileSet,
    pad_left,
    residual,
    shadow_atom,
    shadow_atomic,
    shadow_general,
)
from support import atomic_measures, dilate, mixed_measures

U01 = Measure.uniform(0.0, 1.0)


def _feasible_pair(mu, pad, seed):
    return combine([(1, dilate(mu, np.random.default_rng(seed))), (1, pad)])


def lp_potential_floor(mu: Measure, nu: Measure, K: float) -> float:
    """min of int |y - K| d eta over martingale transports of mu into eta <=+ nu (nu atomic)."""
    (xs, a), (ys, b) = (np.array(v).T for v in (mu.atoms(), nu.atoms()))
    n, k = xs.size, ys.size
    a_eq = np.zeros((2 * n, n * k))
    for i in range(n):
        a_eq[i, i * k:(i + 1) * k] = 1.0
        a_eq[n + i, i * k:(i + 1) * k] = ys
    b_eq = np.concatenate((a, a * xs))
    a_ub = np.tile(np.eye(k), n)
    res = linprog(np.tile(np.abs(ys - K), n), A_ub=a_ub, b_ub=b, A_eq=a_eq, b_eq=b_eq,
                  bounds=(0, None), method="highs")
    assert res.status == 0
    return float(res.fun)


# residual


def test_residual_examples():
    cut = QuantileSet.build(1.0, [(0.25, 0.75)])
    assert residual(U01, cut) == combine([(1, Measure.uniform(0, 0.25)), (1, Measure.uniform(0.75, 1.0))])
    assert residual(U01, QuantileSet(1.0)) == U01
    assert residual(U01, QuantileSet.build(1.0, [(0.0, 1.0)])).is_empty


# one atom


def test_shadow_atom_by_symmetry():
    inc, piece = shadow_atom(0.5, 0.5, U01)
    assert np.allclose(inc.intervals, [(0.25, 0.75)], atol=1e-12)
    assert piece == Measure.uniform(0.25, 0.75)


def test_shadow_atom_closed_form():
    inc, piece = shadow_atom(0.8, 0.2, U01)
    assert np.allclose(inc.intervals, [(0.7, 0.9)], atol=1e-12)
    assert piece == Measure.uniform(0.7, 0.9)


def test_shadow_atom_beyond_the_boundary():
    with pytest.raises(FeasibilityError) as err:
        shadow_atom(0.95, 0.2, U01, atom_index=3)
    assert err.value.to_json()["atom_index"] == 3
    assert err.value.to_json()["kind"] == "feasibility"


def test_shadow_atom_across_a_used_interval():
    # u + v = 0.25 and u (0.55 - u) + v (1.05 + v) = 0.225 give u = 0.1, v = 0.15
    u, v = 0.1, 0.15
    assert u * (0.55 - u) + v * (1.05 + v) == pytest.approx(0.225)
    assert (u * 0.225 + v * 0.6) / 0.25 == pytest.approx(0.45)
    inc, piece = shadow_atom(0.45, 0.25, U01, QuantileSet.build(1.0, [(0.275, 0.525)]))
    assert np.allclose(inc.intervals, [(0.175, 0.275), (0.525, 0.675)], atol=1e-12)
    assert piece == combine([(1, Measure.uniform(0.175, 0.275)), (1, Measure.uniform(0.525, 0.675))])


def test_mass_exceeding_the_residual():
    with pytest.raises(FeasibilityError):
        shadow_atom(0.5, 0.6, U01, QuantileSet.build(1.0, [(0.0, 0.5)]))


# atomic sources


def test_two_atoms_sequentially():
    eta, trace = shadow_atomic(Measure.from_atoms([0.3, 0.6], [0.25, 0.25]), U01)
    assert eta == combine([(1, Measure.uniform(0.175, 0.425)), (1, Measure.uniform(0.475, 0.725))])
    assert len(trace.records) == 2
    assert trace.shadow_at(1) == Measure.uniform(0.175, 0.425)


def test_single_atom_reduces_to_shadow_atom():
    mu = Measure.atom(0.3, 0.4)
    assert shadow_atomic(mu, U01)[0] == shadow_atom(0.3, 0.4, U01)[1]


def test_far_atom_is_left_alone():
    nu = combine([(1, U01), (1, Measure.atom(5.0))])
    assert shadow_atomic(Measure.atom(0.5, 0.5), nu)[0] == Measure.uniform(0.25, 0.75)


def test_infeasible_source_reports_atom():
    mu = Measure.from_atoms([0.2, 2.0], [0.2, 0.2])
    with pytest.raises(FeasibilityError) as err:
        shadow_atomic(mu, U01)
    assert err.value.atom_index == 1


def test_bad_order_argument():
    from leftcurtain import DomainError

    with pytest.raises(DomainError):
        shadow_atomic(Measure.from_atoms([0.2, 0.4], [0.2, 0.2]), U01, order=[0, 0])


@given(atomic_measures(max_atoms=4), atomic_measures(max_atoms=3), st.integers(0, 2 ** 32 - 1))
def test_shadow_potential_is_the_lp_floor(mu, pad, seed):
    nu = _feasible_pair(mu, pad, seed)
    eta, _ = shadow_atomic(mu, nu)
    for K in np.concatenate((np.array(nu.lo), [nu.lo[0] - 1, nu.hi[-1] + 1])):
        assert potential(eta, float(K)) == pytest.approx(lp_potential_floor(mu, nu, float(K)), abs=1e-7)


@given(atomic_measures(max_atoms=6), mixed_measures(), st.integers(0, 2 ** 32 - 1))
def test_shadow_invariants(mu, pad, seed):
    nu = _feasible_pair(mu, pad, seed)
    eta, _ = shadow_atomic(mu, nu)
    assert eta.mass == pytest.approx(mu.mass, abs=1e-12)
    assert leq_plus(eta, nu, tol=1e-9)
    assert leq_convex(mu, eta, tol=1e-9)


@given(atomic_measures(max_atoms=8), mixed_measures(), st.integers(0, 2 ** 32 - 1), st.randoms())
def test_order_independence(mu, pad, seed, rnd):
    nu = _feasible_pair(mu, pad, seed)
    perm = list(range(len(mu)))
    rnd.shuffle(perm)
    assert wasserstein(shadow_atomic(mu, nu)[0], shadow_atomic(mu, nu, order=perm)[0]) <= 1e-8


def _two_window_competitor(nu: Measure, m: float, bary: float, u: float, beta: float):
    """Quantile windows [u, u + beta] and [v, v + m - beta] of nu with total barycenter ``bary``."""
    rest = m - beta

    def mean(v):
        part = restrict_union(nu, [(u, u + beta), (v, v + rest)])
        return moments(part)[1] if part.mass > m - 1e-12 else None

    lo, hi = u + beta, nu.mass - rest
    if hi <= lo:
        return None
    f_lo, f_hi = mean(lo), mean(hi)
    if f_lo is None or f_hi is None or not f_lo <= bary <= f_hi:
        return None
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if mean(mid) < bary:
            lo = mid
        else:
            hi = mid
    return restrict_union(nu, [(u, u + beta), (hi, hi + rest)])


def test_shadow_has_smallest_variance(rng):
    kept = 0
    for _ in range(200):
        mu = Measure.from_atoms(rng.uniform(-1, 1, 3), rng.uniform(0.1, 0.3, 3))
        nu = combine([(1, Measure.uniform(-2.0, 2.0, 2.0)), (1, Measure.atom(float(rng.uniform(-1, 1)), 0.3))])
        eta, _ = shadow_atomic(mu, nu)
        m = mu.mass
        beta = float(rng.uniform(0.05, 0.95)) * m
        u = float(rng.uniform(0, nu.mass - m))
        comp = _two_window_competitor(nu, m, moments(mu)[1], u, beta)
        if comp is None or not leq_convex(mu, comp, tol=1e-9):
            continue
        kept += 1
        assert moments(eta)[2] <= moments(comp)[2] + 1e-9
    assert kept >= 20


@given(st.lists(st.integers(-100, 100), min_size=2, max_size=6), st.lists(st.integers(0, 60), min_size=6, max_size=6))
def test_monotone_in_the_source(base, bumps):
    k = len(base)
    xs = np.sort(np.array(base) / 100)
    xs2 = xs + np.array(bumps[:k]) / 100
    mu, mu2 = Measure.from_atoms(xs, np.full(k, 0.1)), Measure.from_atoms(np.sort(xs2), np.full(k, 0.1))
    assert leq_sto(mu, mu2)
    nu = combine([(1, Measure.uniform(-2.0, 2.5, 1.5)), (1, Measure.atom(0.3, 0.2))])
    assert leq_sto(shadow_atomic(mu, nu)[0], shadow_atomic(mu2, nu)[0], tol=1e-9)


@given(atomic_measures(max_atoms=5), st.integers(0, 2 ** 32 - 1))
def test_part_above_the_last_atom_is_leftmost(mu, seed):
    rng = np.random.default_rng(seed)
    nu = combine([(1, Measure.uniform(-4.0, 5.0, 3 * mu.mass)), (1, dilate(mu, rng))])
    y = mu.hi[-1]
    eta, _ = shadow_atomic(mu, nu)
    above = eta.mass - cdf(eta, y)
    if above <= 1e-9 or any(abs(x - y) < 1e-12 for x, _ in nu.atoms()):
        return
    eta_up = restrict_quantile(eta, cdf(eta, y), eta.mass)
    nu_up = restrict_quantile(nu, cdf(nu, y), nu.mass)
    assert wasserstein(eta_up, leftmost_submeasure(nu_up, above)) <= 1e-8


def test_far_atom_does_not_move_the_shadow():
    mu = Measure.from_atoms([0.1, 0.6, 0.9], [0.2, 0.3, 0.2])
    nu = combine([(1, U01), (1, Measure.atom(0.6, 0.2))])
    base, _ = shadow_atomic(mu, nu)
    effects = [wasserstein(base, shadow_atomic(mu, combine([(1, nu), (1, Measure.atom(10.0 ** k))]))[0])
               for k in range(1, 8)]
    assert all(b <= a + 1e-15 for a, b in zip(effects, effects[1:]))
    assert effects[-1] <= 1e-6


def test_pad_left_makes_room():
    mu = Measure.from_atoms([-3.0, 0.9], [0.2, 0.2])
    with pytest.raises(FeasibilityError):
        shadow_atomic(mu, U01)
    eta, _ = shadow_atomic(mu, pad_left(U01))
    assert eta.mass == pytest.approx(0.4)
    assert leq_convex(mu, eta)


@given(atomic_measures(max_atoms=5), atomic_measures(max_atoms=5), mixed_measures(), st.integers(0, 2 ** 32 - 1))
def test_lipschitz_in_the_source(mu, mu2, pad, seed):
    mu2 = mu2.scaled(mu.mass / mu2.mass)
    rng = np.random.default_rng(seed)
    nu = combine([(1, dilate(mu, rng)), (1, dilate(mu2, rng)), (1, pad)])
    try:
        a, b = shadow_atomic(mu, nu)[0], shadow_atomic(mu2, nu)[0]
    except FeasibilityError:
        return
    assert wasserstein(a, b) <= wasserstein(mu, mu2) + 1e-8


# general sources


def test_equal_mass_shadow_is_the_target():
    a = 0.3
    nu = Measure.uniform(-a, 1 + a, 1.0)
    assert wasserstein(shadow_general(U01, nu, tol=1e-6), nu) <= 1e-6


def test_atom_needs_no_refinement():
    for k in (0, 3, 6):
        at = atomize_dyadic(Measure.atom(0.5, 0.5), k)
        assert shadow_atomic(at, U01)[0] == Measure.uniform(0.25, 0.75)
    assert shadow_general(Measure.atom(0.5, 0.5), U01) == Measure.uniform(0.25, 0.75)


def test_block_source_against_fine_atomization():
    mu = Measure.uniform(0.4, 0.6, 0.2)
    eta = shadow_general(mu, U01, tol=1e-7)
    ref, _ = shadow_atomic(atomize_dyadic(mu, 12), U01)
    assert eta.mass == pytest.approx(0.2)
    assert wasserstein(eta, ref) <= 1e-6
    assert leq_plus(eta, U01, tol=1e-9)
