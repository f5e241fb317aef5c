"""Hypothesis strategies and independent oracles shared by the tests."""

from __future__ import annotations

import numpy as np
from hypothesis import strategies as st

from leftcurtain import Measure, combine

positions = st.integers(-300, 300).map(lambda k: k / 100)
weights = st.integers(5, 100).map(lambda k: k / 100)


@st.composite
def atomic_measures(draw, min_atoms=1, max_atoms=6, mass=None):
    n = draw(st.integers(min_atoms, max_atoms))
    xs = draw(st.lists(positions, min_size=n, max_size=n))
    ws = draw(st.lists(weights, min_size=n, max_size=n))
    mu = Measure.from_atoms(xs, ws)
    return mu if mass is None else mu.scaled(mass / mu.mass)


@st.composite
def mixed_measures(draw, mass=None):
    terms = []
    for _ in range(draw(st.integers(0, 3))):
        terms.append((1.0, Measure.atom(draw(positions), draw(weights))))
    for _ in range(draw(st.integers(0 if terms else 1, 3))):
        a = draw(positions)
        length = draw(st.integers(5, 200)) / 100
        terms.append((1.0, Measure.uniform(a, a + length, draw(weights))))
    mu = combine(terms)
    return mu if mass is None else mu.scaled(mass / mu.mass)


# independent oracles, computed through routes the library does not use


def quantile_bisect(mu: Measure, t) -> np.ndarray:
    """inf{x : F_mu(x) >= t} by bisection on the cdf."""
    t = np.asarray(t, dtype=float)
    lo = np.full(t.shape, mu.lo[0] - 1.0)
    hi = np.full(t.shape, mu.hi[-1])
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        up = mu.cdf(mid) >= t
        hi = np.where(up, mid, hi)
        lo = np.where(up, lo, mid)
    return hi


def quantile_cells(mu: Measure, n: int = 20_000) -> np.ndarray:
    """G_mu at the midpoints of n equal quantile cells."""
    return quantile_bisect(mu, (np.arange(n) + 0.5) / n * mu.mass)


def wasserstein_cdf(mu: Measure, nu: Measure, per_cell: int = 4000) -> float:
    """W as int |F_mu - F_nu| dx by the midpoint rule inside each cell between nodes."""
    nodes = np.unique(np.concatenate((mu.lo, mu.hi, nu.lo, nu.hi)))
    total = 0.0
    for a, b in zip(nodes[:-1], nodes[1:]):
        xm = a + (np.arange(per_cell) + 0.5) * (b - a) / per_cell
        total += float(np.abs(mu.cdf(xm) - nu.cdf(xm)).sum() * (b - a) / per_cell)
    return total


def potential_dense(mu: Measure, x: float, n: int = 20_000) -> float:
    """int |s - x| dmu(s) through the quantile cells."""
    return float(np.abs(quantile_cells(mu, n) - x).mean() * mu.mass)


@st.composite
def small_atomic(draw):
    """Atoms on a coarse lattice so that equal measures come up often."""
    n = draw(st.integers(1, 3))
    xs = draw(st.lists(st.integers(0, 3), min_size=n, max_size=n))
    ws = draw(st.lists(st.integers(1, 2), min_size=n, max_size=n))
    return Measure.from_atoms([float(x) for x in xs], [w / 2 for w in ws])


def dilate(mu: Measure, rng: np.random.Generator, spread: float = 1.0) -> Measure:
    """Second marginal of a random martingale kernel: each atom splits in two around itself."""
    xs, ws = [], []
    for x, w in mu.atoms():
        d1, d2 = rng.uniform(0.05, spread, 2)
        xs += [x - d1, x + d2]
        ws += [w * d2 / (d1 + d2), w * d1 / (d1 + d2)]
    return Measure.from_atoms(xs, ws)


def brute_convex_gap(mu: Measure, nu: Measure, n: int = 4001) -> float:
    """max of u_mu - u_nu on a dense grid covering both supports."""
    lo = min(mu.lo[0], nu.lo[0]) - 1.0
    hi = max(mu.hi[-1], nu.hi[-1]) + 1.0
    xs = np.linspace(lo, hi, n)
    return float(np.max(mu.potential(xs) - nu.potential(xs)))
