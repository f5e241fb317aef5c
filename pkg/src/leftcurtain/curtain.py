"""Left-curtain couplings and the tools used to check them.

The left-curtain coupling of mu <=C nu sends the part of mu left of x to the
shadow of that part, for every x.  With mu atomic this is read off the
sequential shadow computation: atom k is coupled to the window it took from
nu.  Besides the construction the module holds the certificates used to
test it (left-monotonicity on the reduced support, the cost it minimises,
brute-force vertex enumeration of the martingale transport polytope) and the
two distances between couplings used for continuity statements.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar

from .measures import (
    TAU_MASS,
    TAU_MERGE,
    DomainError,
    Measure,
    _grid_masses,
    _scale,
    atomize_dyadic,
    combine,
    difference,
    moments,
    restrict_quantile,
    spatial_form,
    spatial_nodes,
    wasserstein,
)
from .orders import leq_convex
from .shadow import shadow_atom, shadow_atomic

__all__ = [
    "Coupling",
    "FiniteCoupling",
    "ReducedSupport",
    "UniformKernel",
    "curtain_atomic",
    "curtain_general",
    "curtain_uniform_kernel",
    "identity_prefix",
    "reduced_support",
    "check_left_monotone",
    "martingale_cost",
    "enumerate_vertices",
    "z_distance",
    "support_distance_lb",
]


@dataclass
class Coupling:
    """A transport plan given by source atoms and their target measures.

    ``sources`` holds (x, weight, target) with mass(target) == weight.  The
    optional ``diagonal`` is a measure transported to itself (the identity
    part of a curtain whose source and target share a left piece).
    """

    sources: list[tuple[float, float, Measure]]
    diagonal: Measure | None = None

    def __post_init__(self):
        self.sources = sorted(self.sources, key=lambda s: s[0])

    @property
    def total_mass(self) -> float:
        diag = 0.0 if self.diagonal is None else self.diagonal.mass
        return diag + float(sum(w for _, w, _ in self.sources))

    def first_marginal(self) -> Measure:
        terms = [(1.0, Measure.atom(x, w)) for x, w, _ in self.sources]
        if self.diagonal is not None:
            terms.append((1.0, self.diagonal))
        return combine(terms)

    def second_marginal(self) -> Measure:
        terms = [(1.0, t) for _, _, t in self.sources]
        if self.diagonal is not None:
            terms.append((1.0, self.diagonal))
        return combine(terms)

    def martingale_residual(self) -> float:
        if not self.sources:
            return 0.0
        return max(abs(moments(t)[1] - x) for x, _, t in self.sources)

    def to_finite(self) -> "FiniteCoupling":
        if self.diagonal is not None and not self.diagonal.is_atomic:
            raise DomainError("coupling has a continuous diagonal part")
        rows = [(x, t) for x, _, t in self.sources]
        if self.diagonal is not None:
            rows += [(x, Measure.atom(x, w)) for x, w in self.diagonal.atoms()]
        rows.sort(key=lambda r: r[0])
        if any(not t.is_atomic for _, t in rows):
            raise DomainError("coupling targets are not all atomic")
        xs = np.array([x for x, _ in rows])
        ys = spatial_nodes(*[t for _, t in rows])
        m = np.zeros((xs.size, ys.size))
        for i, (_, t) in enumerate(rows):
            atoms, _ = _grid_masses(t, ys)
            m[i] += atoms
        return FiniteCoupling(xs, ys, m)

    def to_json(self) -> dict:
        out = {
            "sources": [{"x": x, "w": w, "target": t.to_json()} for x, w, t in self.sources],
        }
        if self.diagonal is not None:
            out["diagonal"] = self.diagonal.to_json()
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "Coupling":
        sources = [(float(s["x"]), float(s["w"]), Measure.from_json(s["target"])) for s in obj["sources"]]
        diag = Measure.from_json(obj["diagonal"]) if obj.get("diagonal") else None
        return cls(sources, diag)


@dataclass
class FiniteCoupling:
    """Dense matrix form of a coupling between finitely supported measures.

    ``m[i, j]`` is the mass sent from ``xs[i]`` to ``ys[j]``.  ``support``
    marks the pairs in the closed support; it defaults to the positive
    entries and may carry extra limit points of a discretised continuous plan.
    """

    xs: np.ndarray
    ys: np.ndarray
    m: np.ndarray
    support: np.ndarray | None = None

    def __post_init__(self):
        self.xs = np.asarray(self.xs, dtype=float)
        self.ys = np.asarray(self.ys, dtype=float)
        self.m = np.asarray(self.m, dtype=float)
        if self.m.shape != (self.xs.size, self.ys.size):
            raise DomainError("mass matrix shape does not match the supports")
        if self.support is None:
            self.support = self.m > 1e-14
        else:
            self.support = np.asarray(self.support, dtype=bool) | (self.m > 1e-14)

    @property
    def a(self) -> np.ndarray:
        return self.m.sum(axis=1)

    @property
    def b(self) -> np.ndarray:
        return self.m.sum(axis=0)

    def martingale_residual(self) -> float:
        return float(np.max(np.abs(self.m @ self.ys - self.a * self.xs)))

    def to_coupling(self) -> Coupling:
        sources = []
        for i, x in enumerate(self.xs):
            row = self.m[i]
            if row.sum() > 0:
                sources.append((float(x), float(row.sum()), Measure.from_atoms(self.ys, row)))
        return Coupling(sources)


@dataclass
class ReducedSupport:
    pairs: list[tuple[float, float]] = field(default_factory=list)


@dataclass(frozen=True)
class UniformKernel:
    """Closed-form curtain kernel from the uniform law on [0, 1] to the uniform law on [-a, 1 + a].

    A source x goes up to (1 + a) x with probability 1 - p_down and down
    to -a x with probability p_down = a / (1 + 2a).
    """

    a: float

    @property
    def p_down(self) -> float:
        return self.a / (1.0 + 2.0 * self.a)

    @property
    def up_slope(self) -> float:
        return 1.0 + self.a

    @property
    def down_slope(self) -> float:
        return -self.a

    def up(self, x):
        return (1.0 + self.a) * np.asarray(x, dtype=float)

    def down(self, x):
        return -self.a * np.asarray(x, dtype=float)


def curtain_uniform_kernel(a: float) -> UniformKernel:
    if a < 0:
        raise DomainError("the spread parameter a must be non-negative")
    return UniformKernel(float(a))


def _require_convex_order(mu: Measure, nu: Measure) -> None:
    if not leq_convex(mu, nu):
        raise DomainError("source and target are not in convex order")


def curtain_atomic(mu: Measure, nu: Measure, check: bool = True) -> Coupling:
    """Left-curtain coupling of an atomic mu with any nu, mu <=C nu."""
    if check:
        _require_convex_order(mu, nu)
    _, trace = shadow_atomic(mu, nu)
    return Coupling([(x, a, piece) for (x, a, _), piece in zip(trace.records, trace.pieces)])


def identity_prefix(mu: Measure, nu: Measure, tol: float = 1e-12) -> float:
    """Largest quantile level F such that the first F units of mu lie below nu.

    The curtain coupling is the identity on that left piece of mu: a measure
    dominated by nu in the <=+ order is its own shadow.
    """
    nodes = spatial_nodes(mu, nu)
    ma, mc = _grid_masses(mu, nodes)
    na, nc = _grid_masses(nu, nodes)
    bad_atom = np.flatnonzero(ma > na + tol)
    bad_cell = np.flatnonzero(mc > nc * (1 + 1e-9) + tol)
    ja = int(bad_atom[0]) if bad_atom.size else nodes.size
    jc = int(bad_cell[0]) if bad_cell.size else nodes.size
    if ja <= jc:
        level = ma[:ja].sum() + mc[:ja].sum()
    else:
        level = ma[: jc + 1].sum() + mc[:jc].sum()
    return float(min(level, mu.mass))


@dataclass
class BlockCurtain:
    """A curtain coupling built on the dyadic atomization of mu.

    ``prefix_level`` is the quantile level of mu below which the coupling is
    the identity; the remaining mass is split in quantile blocks whose
    barycenters are the atomic sources of ``coupling``.
    """

    coupling: Coupling
    prefix_level: float
    remainder: Measure | None
    level: int


def curtain_blocks(mu: Measure, nu: Measure, k: int, peel: bool = True, check: bool = True) -> BlockCurtain:
    if check:
        _require_convex_order(mu, nu)
    level = identity_prefix(mu, nu) if peel else 0.0
    if level <= TAU_MASS * _scale(mu.mass):
        level = 0.0
    m = mu.mass
    if level >= m - TAU_MASS * _scale(m):
        return BlockCurtain(Coupling([], mu), m, None, k)
    prefix = restrict_quantile(mu, 0.0, level) if level > 0 else None
    rem = restrict_quantile(mu, level, m) if level > 0 else mu
    rest = difference(nu, prefix) if prefix is not None else nu
    coupling = curtain_atomic(atomize_dyadic(rem, k), rest, check=False)
    coupling.diagonal = prefix
    return BlockCurtain(coupling, level, rem, k)


def curtain_general(mu: Measure, nu: Measure, k: int, peel: bool = True) -> Coupling:
    """Curtain coupling with mu replaced by its 2^k-atom dyadic atomization.

    With ``peel`` the left piece of mu that already lies below nu is kept on
    the diagonal exactly and only the rest is atomized.
    """
    return curtain_blocks(mu, nu, k, peel=peel).coupling


def reduced_support(pi: FiniteCoupling) -> ReducedSupport:
    """Support pairs left after removing the vertical lines over right-isolated no-crossing points.

    A point x has no crossing when no mass goes from x' < x to y > x.
    Such a source x is isolated on the right when its own fibre reaches
    above x; its line is removed unless x carries mass (atom fibres stay).
    """
    sup = pi.support
    xs, ys = pi.xs, pi.ys
    row_mass = pi.m.sum(axis=1)
    pairs = []
    for i, x in enumerate(xs):
        tol = TAU_MERGE * _scale(x)
        left = xs < x - tol
        crossing = bool(np.any(pi.m[left][:, ys > x + tol] > 0)) if left.any() else False
        above = bool(np.any(sup[i] & (ys > x + tol)))
        drop = (not crossing) and above and row_mass[i] <= 0
        if drop:
            continue
        pairs.extend((float(x), float(y)) for y in ys[sup[i]])
    return ReducedSupport(pairs)


def check_left_monotone(pi: FiniteCoupling):
    """(True, None) if the reduced support has no forbidden triple, else (False, triple).

    A triple (x, y-), (x, y+), (x', y') is forbidden when x < x' and y- < y' < y+.
    """
    pairs = np.array(reduced_support(pi).pairs, dtype=float).reshape(-1, 2)
    if pairs.shape[0] < 3:
        return True, None
    xs = np.unique(pairs[:, 0])
    for x in xs:
        fibre = pairs[pairs[:, 0] == x, 1]
        lo, hi = fibre.min(), fibre.max()
        tol = TAU_MERGE * _scale(lo, hi, x)
        later = pairs[(pairs[:, 0] > x + tol) & (pairs[:, 1] > lo + tol) & (pairs[:, 1] < hi - tol)]
        if later.size:
            xp, yp = later[0]
            return False, ((float(x), float(lo)), (float(x), float(hi)), (float(xp), float(yp)))
    return True, None


def _sqrt_antiderivative(y):
    y = np.asarray(y, dtype=float)
    return 0.5 * (y * np.sqrt(y * y + 1.0) + np.arcsinh(y))


def _integrate_sqrt(t: Measure) -> float:
    """int sqrt(y^2 + 1) dt(y) in closed form."""
    flat = t.lo == t.hi
    val = float(np.dot(t.widths[flat], np.sqrt(t.lo[flat] ** 2 + 1.0)))
    if (~flat).any():
        a, b, w = t.lo[~flat], t.hi[~flat], t.widths[~flat]
        val += float(np.sum(w / (b - a) * (_sqrt_antiderivative(b) - _sqrt_antiderivative(a))))
    return val


def _source_factor(x):
    return 1.0 + np.tanh(-np.asarray(x, dtype=float))


def martingale_cost(pi) -> tuple[float, float]:
    """(martingale residual, cost) for the cost (1 + tanh(-x)) sqrt(y^2 + 1)."""
    if isinstance(pi, FiniteCoupling):
        cost = float(np.sum(pi.m * np.outer(_source_factor(pi.xs), np.sqrt(pi.ys ** 2 + 1.0))))
        return pi.martingale_residual(), cost
    cost = sum(float(_source_factor(x)) * _integrate_sqrt(t) for x, _, t in pi.sources)
    if pi.diagonal is not None:
        cost += _diagonal_cost(pi.diagonal)
    return pi.martingale_residual(), cost


def _diagonal_cost(d: Measure) -> float:
    f = lambda y: _source_factor(y) * np.sqrt(y * y + 1.0)  # noqa: E731
    flat = d.lo == d.hi
    val = float(np.dot(d.widths[flat], f(d.lo[flat])))
    nodes, weights = np.polynomial.legendre.leggauss(32)
    for w, a, b in zip(d.widths[~flat], d.lo[~flat], d.hi[~flat]):
        ys = 0.5 * (b - a) * nodes + 0.5 * (a + b)
        val += float(w * 0.5 * np.dot(weights, f(ys)))
    return val


def _atomic_arrays(mu: Measure) -> tuple[np.ndarray, np.ndarray]:
    if mu.is_empty or not mu.is_atomic:
        raise DomainError("vertex enumeration needs purely atomic measures")
    return np.asarray(mu.lo), np.asarray(mu.widths)


def enumerate_vertices(mu: Measure, nu: Measure, max_atoms: int = 5, chunk: int = 100_000) -> list[FiniteCoupling]:
    """All vertices of the polytope of martingale couplings between two atomic measures.

    Each vertex is a basic solution: pick as many free entries as the rank
    of the constraint system (row sums, column sums, barycenters), force
    the others to zero, solve, and keep the non-negative solutions.
    """
    xs, a = _atomic_arrays(mu)
    ys, b = _atomic_arrays(nu)
    n, k = xs.size, ys.size
    if max(n, k) > max_atoms:
        raise DomainError(f"vertex enumeration is limited to {max_atoms} atoms per side")
    if abs(a.sum() - b.sum()) > TAU_MASS * _scale(a.sum()):
        raise DomainError("masses differ")
    # constraint matrix on the row-major flattening of the n x k matrix
    rows, rhs = [], []
    for i in range(n):
        r = np.zeros((n, k)); r[i, :] = 1.0
        rows.append(r.ravel()); rhs.append(a[i])
    for j in range(k):
        r = np.zeros((n, k)); r[:, j] = 1.0
        rows.append(r.ravel()); rhs.append(b[j])
    for i in range(n):
        r = np.zeros((n, k)); r[i, :] = ys
        rows.append(r.ravel()); rhs.append(a[i] * xs[i])
    full = np.array(rows)
    full_rhs = np.array(rhs)
    # keep an independent set of constraints
    keep: list[int] = []
    for idx in range(full.shape[0]):
        trial = full[keep + [idx]]
        if np.linalg.matrix_rank(trial, tol=1e-10) == len(keep) + 1:
            keep.append(idx)
    eq = full[keep]
    eq_rhs = full_rhs[keep]
    r = len(keep)
    size = n * k
    cells = np.arange(size)
    found: list[np.ndarray] = []
    combos = itertools.combinations(range(size), r)
    scale = max(1.0, float(np.max(np.abs(full_rhs))))
    while True:
        block = np.array(list(itertools.islice(combos, chunk)), dtype=int)
        if block.size == 0:
            break
        # every row and column needs at least one free entry
        ri = block // k
        ci = block % k
        ok = np.ones(block.shape[0], dtype=bool)
        for i in range(n):
            ok &= (ri == i).any(axis=1)
        for j in range(k):
            ok &= (ci == j).any(axis=1)
        block = block[ok]
        if block.size == 0:
            continue
        mats = eq[:, block].transpose(1, 0, 2)
        det = np.linalg.det(mats)
        good = np.abs(det) > 1e-12
        if not good.any():
            continue
        block, mats = block[good], mats[good]
        sol = np.linalg.solve(mats, np.broadcast_to(eq_rhs, (mats.shape[0], r))[..., None])[..., 0]
        x = np.zeros((block.shape[0], size))
        np.put_along_axis(x, block, sol, axis=1)
        feasible = np.all(x >= -1e-10, axis=1)
        resid = np.max(np.abs(x @ full.T - full_rhs), axis=1)
        feasible &= resid <= 1e-9 * scale
        for v in x[feasible]:
            found.append(np.clip(v, 0.0, None))
    del cells
    unique: list[np.ndarray] = []
    for v in sorted(found, key=lambda u: tuple(np.round(u, 9))):
        if not any(np.max(np.abs(v - u)) <= 1e-9 for u in unique):
            unique.append(v)
    return [FiniteCoupling(xs, ys, v.reshape(n, k)) for v in unique]


class _Prefixes:
    """Quantile prefixes pi^s of a coupling, atoms split inside their own fibre.

    The prefix of mass s takes whole sources in increasing position, then a
    fraction of the next atom whose part of the fibre is the shadow of that
    fraction inside the fibre.  This is an admissible family and, for a
    curtain coupling, it gives exactly the shadows of the prefixes of mu.
    """

    def __init__(self, pi: Coupling):
        self.diag = pi.diagonal
        d0 = 0.0 if self.diag is None else self.diag.mass
        self.xs = np.array([x for x, _, _ in pi.sources])
        self.ws = np.array([w for _, w, _ in pi.sources])
        self.targets = [t for _, _, t in pi.sources]
        self.cum = d0 + np.concatenate(([0.0], np.cumsum(self.ws)))
        self.d0 = d0
        self._second = [self.diag] if self.diag is not None else [Measure.empty()]
        self._first = [self.diag] if self.diag is not None else [Measure.empty()]

    @property
    def mass(self) -> float:
        return float(self.cum[-1])

    def breakpoints(self) -> np.ndarray:
        pts = list(self.cum)
        if self.diag is not None:
            pts += list(self.diag.cum)
        return np.array(pts)

    def _full(self, k: int) -> tuple[Measure, Measure]:
        while len(self._second) <= k:
            j = len(self._second) - 1
            self._second.append(combine([(1.0, self._second[j]), (1.0, self.targets[j])]))
            self._first.append(combine([(1.0, self._first[j]), (1.0, Measure.atom(self.xs[j], self.ws[j]))]))
        return self._first[k], self._second[k]

    def at(self, s: float) -> tuple[Measure, Measure]:
        if s <= self.d0:
            part = restrict_quantile(self.diag, 0.0, s)
            return part, part
        k = int(np.clip(np.searchsorted(self.cum, s, side="left") - 1, 0, self.ws.size - 1))
        theta = min(s - self.cum[k], self.ws[k])
        first, second = self._full(k)
        if theta <= 0:
            return first, second
        if theta >= self.ws[k] * (1 - 1e-15):
            part = self.targets[k]
        else:
            _, part = shadow_atom(float(self.xs[k]), theta, self.targets[k])
        return (
            combine([(1.0, first), (1.0, Measure.atom(self.xs[k], theta))]),
            combine([(1.0, second), (1.0, part)]),
        )


def z_distance(pi: Coupling, pi2: Coupling, inner: int = 3) -> float:
    """max(W(mu, mu'), sup_s W(nu^s, nu'^s)) over the quantile-prefix family.

    The supremum is evaluated at every merged breakpoint and refined inside
    each piece from ``inner`` interior samples plus a bounded scalar search.
    """
    p1, p2 = _Prefixes(pi), _Prefixes(pi2)
    m = p1.mass
    if abs(m - p2.mass) > TAU_MASS * _scale(m):
        raise DomainError("couplings carry different masses")
    best = wasserstein(pi.first_marginal(), pi2.first_marginal())
    grid = np.unique(np.clip(np.concatenate((p1.breakpoints(), p2.breakpoints())), 0.0, m))
    grid = grid[grid > TAU_MASS * _scale(m)]
    grid = np.unique(np.append(grid, m))

    def gap(s: float) -> float:
        return wasserstein(p1.at(s)[1], p2.at(s)[1])

    prev_s, prev_v = 0.0, 0.0
    for s in grid:
        v = gap(float(s))
        best = max(best, v)
        if inner > 0 and s - prev_s > 1e-12 * m:
            ts = prev_s + (s - prev_s) * np.arange(1, inner + 1) / (inner + 1)
            vals = [gap(float(t)) for t in ts]
            j = int(np.argmax(vals))
            best = max(best, vals[j])
            if vals[j] > max(prev_v, v):
                lo = ts[j - 1] if j > 0 else prev_s
                hi = ts[j + 1] if j + 1 < inner else s
                res = minimize_scalar(lambda t: -gap(float(t)), bounds=(lo, hi), method="bounded",
                                      options={"xatol": 1e-10 * m})
                best = max(best, -float(res.fun))
        prev_s, prev_v = float(s), v
    return float(best)


def _support_pieces(pi: Coupling) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vertical segments {x} x [lo, hi] covering the support of pi."""
    if pi.diagonal is not None:
        raise DomainError("support distance is implemented for atomic first marginals")
    xs, los, his = [], [], []
    for x, _, t in pi.sources:
        sf = spatial_form(t)
        for y, _ in sf.atoms:
            xs.append(x); los.append(y); his.append(y)
        for a, b, _ in sf.blocks:
            xs.append(x); los.append(a); his.append(b)
    return np.array(xs), np.array(los), np.array(his)


def support_distance_lb(pi: Coupling, pi2: Coupling) -> float:
    """int dist_l1((x, y), spt pi) dpi2(x, y), a lower bound on the planar transport distance."""
    px, pa, pb = _support_pieces(pi)
    total = 0.0
    for x, _, t in pi2.sources:
        c = np.abs(x - px)

        def g(y):
            y = np.asarray(y, dtype=float)[:, None]
            return np.min(c + np.maximum(np.maximum(pa - y, 0.0), y - pb), axis=1)

        sf = spatial_form(t)
        if sf.atoms:
            ys = np.array([y for y, _ in sf.atoms])
            ms = np.array([w for _, w in sf.atoms])
            total += float(np.dot(ms, g(ys)))
        if not sf.blocks:
            continue
        # g is piecewise linear with slopes in {-1, 0, 1}; its kinks are the
        # piece endpoints and the crossings of two pieces' distance profiles
        ci, cj = c[:, None], c[None, :]
        ai, aj = pa[:, None], pa[None, :]
        bi, bj = pb[:, None], pb[None, :]
        kinks = np.concatenate([
            pa, pb,
            (ci + ai - cj).ravel(),
            (0.5 * (ci + ai - cj + bj)).ravel(),
            (ci - cj + bj).ravel(),
        ])
        for lo, hi, dens in sf.blocks:
            pts = np.unique(np.concatenate(([lo, hi], kinks[(kinks > lo) & (kinks < hi)])))
            vals = g(pts)
            total += float(dens * np.sum(0.5 * (vals[:-1] + vals[1:]) * np.diff(pts)))
    return total
