"""Shadow projection of a measure onto a larger one.

The shadow of mu in nu is the convex-order smallest measure eta with
mu <=C eta <=+ nu.  For one atom it is a restriction of nu between two
quantile levels; for a finite sum of atoms the atoms are processed one after
the other, each one taking its window out of what is left of nu.  Windows are
tracked as quantile levels of nu (a QuantileSet), so the final shadow is a
quantile restriction of nu and is exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .measures import (
    TAU_MASS,
    TAU_MERGE,
    DomainError,
    Measure,
    _scale,
    atomize_dyadic,
    combine,
    quantile_integral,
    restrict_quantile,
    restrict_union,
    wasserstein,
)

TAU_BARY = 1e-9

__all__ = [
    "TAU_BARY",
    "FeasibilityError",
    "NonConvergence",
    "QuantileSet",
    "ShadowTrace",
    "residual",
    "shadow_atom",
    "shadow_atomic",
    "shadow_general",
    "pad_left",
]


class FeasibilityError(DomainError):
    """The atom does not fit in the residual: its position is outside the window barycenter range."""

    def __init__(self, message: str, x: float, bary_range: tuple[float, float], atom_index: int | None = None):
        super().__init__(message)
        self.x = x
        self.bary_range = bary_range
        self.atom_index = atom_index

    def to_json(self) -> dict:
        return {
            "kind": "feasibility",
            "message": str(self),
            "atom_index": self.atom_index,
            "x": self.x,
            "barycenter_range": list(self.bary_range),
        }


class NonConvergence(RuntimeError):
    def __init__(self, message: str, level: int, last_delta: float):
        super().__init__(message)
        self.level = level
        self.last_delta = last_delta


@dataclass(frozen=True)
class QuantileSet:
    """A finite disjoint union of quantile intervals ]s, t] inside ]0, target_mass]."""

    target_mass: float
    intervals: tuple[tuple[float, float], ...] = ()

    @classmethod
    def build(cls, target_mass: float, intervals) -> "QuantileSet":
        iv = sorted((float(s), float(t)) for s, t in intervals if t > s)
        merged: list[list[float]] = []
        for s, t in iv:
            if s < -TAU_MASS or t > target_mass + TAU_MASS * _scale(target_mass):
                raise DomainError("interval outside the target quantile range")
            s, t = max(s, 0.0), min(t, target_mass)
            if merged and s <= merged[-1][1] + TAU_MERGE:
                merged[-1][1] = max(merged[-1][1], t)
            else:
                merged.append([s, t])
        return cls(target_mass, tuple((s, t) for s, t in merged))

    @property
    def measure(self) -> float:
        return float(sum(t - s for s, t in self.intervals))

    def union(self, other: "QuantileSet") -> "QuantileSet":
        return QuantileSet.build(self.target_mass, self.intervals + other.intervals)

    def complement(self) -> list[tuple[float, float]]:
        free = []
        cursor = 0.0
        for s, t in self.intervals:
            if s > cursor:
                free.append((cursor, s))
            cursor = max(cursor, t)
        if cursor < self.target_mass:
            free.append((cursor, self.target_mass))
        return free

    def contains(self, other: "QuantileSet", tol: float = TAU_MERGE) -> bool:
        for s, t in other.intervals:
            if not any(a - tol <= s and t <= b + tol for a, b in self.intervals):
                return False
        return True


@dataclass
class ShadowTrace:
    """Per-atom records of a sequential shadow computation.

    ``records[k]`` is (x_k, alpha_k, increment_k); ``pieces[k]`` is the
    measure taken from nu by atom k.  Cumulative sets and partial shadows
    are rebuilt on demand.
    """

    nu: Measure
    records: list[tuple[float, float, QuantileSet]] = field(default_factory=list)
    pieces: list[Measure] = field(default_factory=list)
    order: list[int] = field(default_factory=list)

    def cumulative(self, k: int) -> QuantileSet:
        """J_k: union of the first k increments (k = 0 gives the empty set)."""
        out = QuantileSet(self.nu.mass)
        for _, _, inc in self.records[:k]:
            out = out.union(inc)
        return out

    def shadow_at(self, k: int) -> Measure:
        return restrict_union(self.nu, self.cumulative(k).intervals)

    def to_json(self) -> list[dict]:
        return [
            {"x": x, "alpha": a, "increment": [list(iv) for iv in inc.intervals], "atom_index": i}
            for (x, a, inc), i in zip(self.records, self.order)
        ]


def residual(nu: Measure, used: QuantileSet) -> Measure:
    """The part of nu left over once the quantile levels in ``used`` are removed."""
    return restrict_union(nu, used.complement())


def _window_start(res: Measure, x: float, alpha: float) -> tuple[float, tuple[float, float]]:
    """Smallest s with mean of G_res over [s, s + alpha] equal to x.

    The window mean f(s) is non-decreasing and piecewise quadratic between
    the breakpoints {c_k} and {c_k - alpha}; we locate the bracketing piece
    from the values at breakpoints and solve the quadratic on it.
    """
    m = res.mass
    top = max(m - alpha, 0.0)
    cand = np.concatenate((res.cum, res.cum - alpha, [0.0, top]))
    cand = np.unique(np.clip(cand, 0.0, top))
    f = (quantile_integral(res, cand + alpha) - quantile_integral(res, cand)) / alpha
    f = np.maximum.accumulate(f)
    lo, hi = float(f[0]), float(f[-1])
    slack = TAU_BARY * _scale(x)
    if x < lo - slack or x > hi + slack:
        raise FeasibilityError(
            f"atom at {x!r} with mass {alpha!r} does not fit: window barycenters span [{lo!r}, {hi!r}]",
            x, (lo, hi),
        )
    if x <= lo:
        return 0.0, (lo, hi)
    if x >= hi:
        i = int(np.searchsorted(f, hi, side="left"))
        return float(cand[i]), (lo, hi)
    i = int(np.searchsorted(f, x, side="left"))
    b, e = float(cand[i - 1]), float(cand[i])
    # segments are read at the middle of the piece: b + alpha may round onto a breakpoint
    mid = 0.5 * (b + e)
    k0 = int(np.clip(np.searchsorted(res.cum, mid, side="right") - 1, 0, len(res) - 1))
    k1 = int(np.clip(np.searchsorted(res.cum, mid + alpha, side="right") - 1, 0, len(res) - 1))
    sl = res.slopes
    g0 = res.lo[k0] + sl[k0] * (b - res.cum[k0])
    g1 = res.lo[k1] + sl[k1] * (b + alpha - res.cum[k1])
    qa = 0.5 * (sl[k1] - sl[k0])
    qb = g1 - g0
    qc = alpha * (x - f[i - 1])
    disc = max(qb * qb + 4.0 * qa * qc, 0.0)
    denom = qb + math.sqrt(disc)
    d = 2.0 * qc / denom if denom > 0 else e - b
    s = b + min(max(d, 0.0), e - b)
    if abs(_window_mean(res, s, alpha) - x) > slack:
        # the closed form lost precision; the mean is monotone on [b, e], so bisect
        for _ in range(200):
            s = 0.5 * (b + e)
            if _window_mean(res, s, alpha) < x:
                b = s
            else:
                e = s
            if e - b <= 1e-15 * _scale(m):
                break
        s = e
    return s, (lo, hi)


def _window_mean(res: Measure, s: float, alpha: float) -> float:
    return float((quantile_integral(res, s + alpha) - quantile_integral(res, s)) / alpha)


def _to_target_levels(free: list[tuple[float, float]], r0: float, r1: float) -> list[tuple[float, float]]:
    """Map residual levels ]r0, r1] back to levels of the full target."""
    out = []
    offset = 0.0
    for a, b in free:
        length = b - a
        lo = max(r0, offset)
        hi = min(r1, offset + length)
        if hi > lo:
            out.append((a + lo - offset, a + hi - offset))
        offset += length
    return out


def shadow_atom(x: float, alpha: float, nu: Measure, used: QuantileSet | None = None,
                atom_index: int | None = None) -> tuple[QuantileSet, Measure]:
    """Shadow of alpha * delta_x in the residual of nu; returns (increment, piece)."""
    if alpha <= 0:
        raise DomainError("atom mass must be positive")
    used = used if used is not None else QuantileSet(nu.mass)
    free = used.complement()
    res = restrict_union(nu, free)
    avail = 0.0 if res.is_empty else res.mass
    if alpha > avail + TAU_MASS * _scale(avail):
        raise FeasibilityError(
            f"atom mass {alpha!r} exceeds the free mass {avail!r}", x, (math.nan, math.nan), atom_index
        )
    alpha_eff = min(alpha, avail)
    try:
        s, _ = _window_start(res, x, alpha_eff)
    except FeasibilityError as err:
        err.atom_index = atom_index
        raise
    r1 = min(s + alpha_eff, avail)
    piece = restrict_quantile(res, s, r1)
    increment = QuantileSet.build(nu.mass, _to_target_levels(free, s, r1))
    return increment, piece


def _atoms_of(mu: Measure) -> tuple[np.ndarray, np.ndarray]:
    if mu.is_empty:
        raise DomainError("empty source measure")
    if not mu.is_atomic:
        raise DomainError("source measure must be purely atomic")
    return np.asarray(mu.lo), np.asarray(mu.widths)


def shadow_atomic(mu: Measure, nu: Measure, order=None) -> tuple[Measure, ShadowTrace]:
    """Shadow of a finite sum of atoms, processed in ascending position by default.

    ``order`` may give another processing permutation of the atom indices;
    the resulting shadow does not depend on it.
    """
    xs, ws = _atoms_of(mu)
    if nu.is_empty or mu.mass > nu.mass + TAU_MASS * _scale(nu.mass):
        raise FeasibilityError("source mass exceeds target mass", float(xs[0]), (math.nan, math.nan), 0)
    idx = list(range(xs.size)) if order is None else [int(i) for i in order]
    if sorted(idx) != list(range(xs.size)):
        raise DomainError("order must be a permutation of the atom indices")
    trace = ShadowTrace(nu)
    used = QuantileSet(nu.mass)
    for i in idx:
        inc, piece = shadow_atom(float(xs[i]), float(ws[i]), nu, used, atom_index=i)
        used = used.union(inc)
        trace.records.append((float(xs[i]), float(ws[i]), inc))
        trace.pieces.append(piece)
        trace.order.append(i)
    return restrict_union(nu, used.intervals), trace


def shadow_general(mu: Measure, nu: Measure, tol: float = 1e-7, k0: int = 4, kmax: int = 16) -> Measure:
    """Shadow of an arbitrary measure through dyadic atomizations of increasing depth.

    Purely atomic sources are handled exactly.  Otherwise the depth grows
    from k0 until two successive shadows are within ``tol`` in W.
    """
    if mu.is_atomic:
        return shadow_atomic(mu, nu)[0]
    prev = None
    delta = math.inf
    for k in range(k0, kmax + 1):
        cur = shadow_atomic(atomize_dyadic(mu, k), nu)[0]
        if prev is not None:
            delta = wasserstein(prev, cur)
            if delta <= tol:
                return cur
        prev = cur
    raise NonConvergence(f"no convergence up to depth {kmax}: last W step {delta:.3g}", kmax, delta)


def pad_left(nu: Measure, position: float | None = None, mass: float = 1.0) -> Measure:
    """nu plus an atom far to the left.

    With enough mass this makes room for any source whose atoms lie strictly
    below the top of the support of nu.
    """
    lo, hi = nu.support
    if position is None:
        position = lo - 10.0 * max(hi - lo, 1.0)
    return combine([(1.0, nu), (1.0, Measure.atom(position, mass))])
