"""Decision procedures for the partial orders between finite measures.

All predicates are exact up to stated tolerances: quantile comparisons are
done at merged breakpoints, potential-function comparisons per spatial cell
where the difference of potentials is a quadratic with a closed-form maximum.
"""

from __future__ import annotations

from enum import Enum

import numpy as np

from .measures import (
    TAU_MASS,
    Measure,
    _cells,
    _grid_masses,
    _merged_grid,
    _scale,
    first_moment,
    potential,
    rightmost_submeasure,
    spatial_nodes,
)

__all__ = [
    "OrderRelation",
    "leq_plus",
    "leq_sto",
    "leq_convex",
    "leq_composite",
    "max_potential_gap",
    "call_gap",
]


class OrderRelation(str, Enum):
    PLUS = "plus"
    STO = "sto"
    CONVEX = "convex"
    CONVEX_PLUS = "convex_plus"
    PLUS_STO = "plus_sto"
    CONVEX_STO = "convex_sto"
    CONVEX_PLUS_STO = "convex_plus_sto"

    @classmethod
    def parse(cls, tag: str) -> "OrderRelation":
        short = {"cp": cls.CONVEX_PLUS, "ps": cls.PLUS_STO, "cs": cls.CONVEX_STO, "cps": cls.CONVEX_PLUS_STO}
        if tag in short:
            return short[tag]
        return cls(tag)


def _same_mass(mu: Measure, nu: Measure) -> bool:
    return abs(mu.mass - nu.mass) <= TAU_MASS * _scale(mu.mass, nu.mass)


def leq_plus(mu: Measure, nu: Measure, tol: float = 1e-12) -> bool:
    """True iff nu - mu is a positive measure."""
    if mu.is_empty:
        return True
    if nu.is_empty:
        return False
    nodes = spatial_nodes(mu, nu)
    ma, mc = _grid_masses(mu, nodes)
    na, nc = _grid_masses(nu, nodes)
    if np.any(ma > na + tol):
        return False
    # densities compared through cell masses; relative slack absorbs rounding of split blocks
    return bool(np.all(mc <= nc * (1 + 1e-9) + tol))


def leq_sto(mu: Measure, nu: Measure, tol: float = 1e-12) -> bool:
    """True iff the masses agree and G_mu <= G_nu everywhere."""
    if mu.is_empty or nu.is_empty or not _same_mass(mu, nu):
        return False
    grid = _merged_grid(mu, nu)
    a0, a1 = _cells(grid, mu)
    b0, b1 = _cells(grid, nu)
    return bool(np.all(a0 <= b0 + tol) and np.all(a1 <= b1 + tol))


def max_potential_gap(mu: Measure, nu: Measure) -> float:
    """sup_x u_mu(x) - u_nu(x) for measures of equal mass.

    Outside the joint support the difference is constant, so the supremum is
    reached at a spatial node or at an interior critical point of a cell,
    where the derivative 2(F_mu - F_nu) crosses zero downwards.
    """
    nodes = spatial_nodes(mu, nu)
    ma, mc = _grid_masses(mu, nodes)
    na, nc = _grid_masses(nu, nodes)
    diff_a = ma - na
    diff_c = mc - nc
    # F_mu - F_nu just right of each node and just left of the next one
    right = np.cumsum(diff_a)[:-1] + np.concatenate(([0.0], np.cumsum(diff_c)[:-1]))
    left = right + diff_c
    down = (right > 0) & (left < 0)
    x0, x1 = nodes[:-1], nodes[1:]
    r = np.where(down, right / np.where(down, right - left, 1.0), 0.0)
    crit = (x0 + r * (x1 - x0))[down]
    pts = np.concatenate((nodes, crit))
    gap = potential(mu, pts) - potential(nu, pts)
    return float(np.max(gap))


def leq_convex(mu: Measure, nu: Measure, tol: float = 1e-10) -> bool:
    """Convex order: equal mass, equal barycenter, u_mu <= u_nu."""
    if mu.is_empty or nu.is_empty or not _same_mass(mu, nu):
        return False
    m = mu.mass
    if abs(first_moment(mu) - first_moment(nu)) / m > tol * _scale(*mu.support, *nu.support):
        return False
    return max_potential_gap(mu, nu) <= tol


def call_gap(mu: Measure, nu: Measure) -> float:
    """sup_K C_mu(K) - C_nu(K) with C(K) = int (x - K)_+, for equal masses.

    Uses (x - K)_+ = (|x - K| + x - K) / 2.
    """
    return 0.5 * (max_potential_gap(mu, nu) + first_moment(mu) - first_moment(nu))


def _increasing_convex(mu: Measure, nu: Measure, tol: float) -> bool:
    if not _same_mass(mu, nu):
        return False
    return call_gap(mu, nu) <= tol


def leq_composite(rel, mu: Measure, nu: Measure, tol: float = 1e-10) -> tuple[bool, Measure | None]:
    """Decide any of the seven orders; returns (holds, witness).

    The witness is the intermediate measure of the decomposition when the
    relation is a composite one: the rightmost submeasure of nu for the
    relations involving a mass inequality, the shadow for convex_plus.
    """
    rel = OrderRelation.parse(rel) if isinstance(rel, str) else rel
    if rel is OrderRelation.PLUS:
        return leq_plus(mu, nu), None
    if rel is OrderRelation.STO:
        return leq_sto(mu, nu), None
    if rel is OrderRelation.CONVEX:
        return leq_convex(mu, nu, tol), None
    if rel is OrderRelation.CONVEX_STO:
        if mu.is_empty or nu.is_empty:
            return False, None
        return _increasing_convex(mu, nu, tol), None
    if mu.is_empty:
        return True, Measure.empty()
    if nu.is_empty or mu.mass > nu.mass + TAU_MASS * _scale(nu.mass):
        return False, None
    if rel is OrderRelation.CONVEX_PLUS:
        from .shadow import FeasibilityError, shadow_atomic, shadow_general

        try:
            if mu.is_atomic:
                eta, _ = shadow_atomic(mu, nu)
            else:
                eta = shadow_general(mu, nu, tol=1e-9)
        except FeasibilityError:
            return False, None
        return True, eta
    top = rightmost_submeasure(nu, mu.mass)
    if rel is OrderRelation.PLUS_STO:
        ok = leq_sto(mu, top)
    else:
        ok = _increasing_convex(mu, top, tol)
    return ok, (top if ok else None)
