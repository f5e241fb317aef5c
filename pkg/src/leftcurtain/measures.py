"""Finite measures on the real line stored as piecewise-linear quantile functions.

A measure of mass m is the push-forward of Lebesgue measure on ]0, m] by its
quantile function G.  We keep G as an ordered list of segments
``(width, lo, hi)``: on a quantile interval of length ``width`` the function
runs linearly from ``lo`` to ``hi``.  A flat segment (lo == hi) is an atom, a
sloped one is a uniform block of density ``width / (hi - lo)``.

Every operation here is closed form: quantile surgery splits segments, the
Kantorovich distance integrates |G_mu - G_nu| piece by piece, and sums go
through the spatial (atoms + blocks) picture.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

TAU_MERGE = 1e-13
TAU_MASS = 1e-12

__all__ = [
    "TAU_MERGE",
    "TAU_MASS",
    "DomainError",
    "Measure",
    "SpatialForm",
    "quantile",
    "cdf",
    "moments",
    "potential",
    "wasserstein",
    "restrict_quantile",
    "restrict_union",
    "rightmost_submeasure",
    "leftmost_submeasure",
    "top_down",
    "combine",
    "difference",
    "atomize_dyadic",
    "spatial_form",
    "from_spatial",
    "quantile_integral",
]


class DomainError(ValueError):
    """An argument lies outside the domain of the requested operation."""


def _scale(*values: float) -> float:
    return max(1.0, *(abs(v) for v in values))


class Measure:
    """Immutable finite positive measure with a piecewise-linear quantile function.

    Build instances with the class helpers (``atom``, ``uniform``,
    ``from_atoms``, ``from_json``) or with :func:`combine`.  The constructor
    takes raw segment arrays and brings them to canonical form.
    """

    __slots__ = ("widths", "lo", "hi", "cum")

    def __init__(self, widths, lo, hi):
        w = np.asarray(widths, dtype=float).reshape(-1)
        a = np.asarray(lo, dtype=float).reshape(-1)
        b = np.asarray(hi, dtype=float).reshape(-1)
        if not (w.shape == a.shape == b.shape):
            raise DomainError("segment arrays must have equal length")
        if w.size and not (np.all(np.isfinite(w)) and np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
            raise DomainError("segments must be finite")
        w, a, b = _canonical(w, a, b)
        for arr in (w, a, b):
            arr.setflags(write=False)
        self.widths = w
        self.lo = a
        self.hi = b
        cum = np.concatenate(([0.0], np.cumsum(w)))
        cum.setflags(write=False)
        self.cum = cum

    # construction helpers

    @classmethod
    def empty(cls) -> "Measure":
        return cls((), (), ())

    @classmethod
    def atom(cls, x: float, mass: float = 1.0) -> "Measure":
        if mass <= 0:
            raise DomainError("atom mass must be positive")
        return cls([mass], [x], [x])

    @classmethod
    def uniform(cls, a: float, b: float, mass: float | None = None) -> "Measure":
        """Uniform block on [a, b]; the default mass b - a gives Lebesgue measure."""
        if not a < b:
            raise DomainError("uniform block needs a < b")
        if mass is None:
            mass = b - a
        if mass <= 0:
            raise DomainError("block mass must be positive")
        return cls([mass], [a], [b])

    @classmethod
    def from_atoms(cls, xs: Sequence[float], ws: Sequence[float] | None = None) -> "Measure":
        xs = np.asarray(xs, dtype=float).reshape(-1)
        ws = np.ones_like(xs) if ws is None else np.asarray(ws, dtype=float).reshape(-1)
        if xs.shape != ws.shape:
            raise DomainError("positions and weights differ in length")
        if np.any(ws < 0):
            raise DomainError("atom weights must be non-negative")
        keep = ws > 0
        xs, ws = xs[keep], ws[keep]
        order = np.argsort(xs, kind="stable")
        return cls(ws[order], xs[order], xs[order])

    @classmethod
    def from_json(cls, obj: dict) -> "Measure":
        """Parse ``{"atoms": [[x, w], ...], "uniform": [[a, b, w], ...]}``."""
        if not isinstance(obj, dict):
            raise DomainError("measure literal must be a JSON object")
        unknown = set(obj) - {"atoms", "uniform"}
        if unknown:
            raise DomainError(f"unknown measure keys: {sorted(unknown)}")
        terms = []
        for item in obj.get("atoms", []):
            if not (isinstance(item, (list, tuple)) and len(item) == 2):
                raise DomainError("atom entries must be [x, w]")
            x, w = (float(v) for v in item)
            if not (math.isfinite(x) and math.isfinite(w)) or w <= 0:
                raise DomainError("atom entries need finite x and w > 0")
            terms.append((1.0, cls.atom(x, w)))
        for item in obj.get("uniform", []):
            if not (isinstance(item, (list, tuple)) and len(item) == 3):
                raise DomainError("uniform entries must be [a, b, w]")
            a, b, w = (float(v) for v in item)
            if not all(math.isfinite(v) for v in (a, b, w)) or w <= 0 or not a < b:
                raise DomainError("uniform entries need finite a < b and w > 0")
            terms.append((1.0, cls.uniform(a, b, w)))
        if not terms:
            raise DomainError("measure literal has no mass")
        return combine(terms)

    def to_json(self) -> dict:
        sf = spatial_form(self)
        return {
            "atoms": [[float(x), float(m)] for x, m in sf.atoms],
            "uniform": [[float(a), float(b), float(d * (b - a))] for a, b, d in sf.blocks],
        }

    # basic properties

    @property
    def mass(self) -> float:
        return float(self.cum[-1])

    @property
    def is_empty(self) -> bool:
        return self.widths.size == 0

    @property
    def is_atomic(self) -> bool:
        return bool(np.all(self.lo == self.hi))

    @property
    def support(self) -> tuple[float, float]:
        if self.is_empty:
            raise DomainError("empty measure has no support")
        return float(self.lo[0]), float(self.hi[-1])

    @property
    def slopes(self) -> np.ndarray:
        return (self.hi - self.lo) / self.widths

    def atoms(self) -> list[tuple[float, float]]:
        """(position, mass) of the flat segments, in increasing position."""
        flat = self.lo == self.hi
        return [(float(x), float(w)) for x, w in zip(self.lo[flat], self.widths[flat])]

    def scaled(self, c: float) -> "Measure":
        """The measure c * self, c > 0, obtained by stretching quantile widths."""
        if c <= 0:
            raise DomainError("scale factor must be positive")
        return Measure(self.widths * c, self.lo, self.hi)

    def shifted(self, d: float) -> "Measure":
        return Measure(self.widths, self.lo + d, self.hi + d)

    def isclose(self, other: "Measure", atol: float = 1e-11) -> bool:
        if self.is_empty or other.is_empty:
            return self.is_empty and other.is_empty
        if abs(self.mass - other.mass) > TAU_MASS * _scale(self.mass):
            return False
        return wasserstein(self, other) <= atol * _scale(*self.support, *other.support)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Measure):
            return NotImplemented
        return self.isclose(other)

    __hash__ = None

    def __len__(self) -> int:
        return int(self.widths.size)

    def __repr__(self) -> str:
        parts = []
        for w, a, b in zip(self.widths, self.lo, self.hi):
            parts.append(f"{w:.6g}·δ({a:.6g})" if a == b else f"{w:.6g}·U[{a:.6g},{b:.6g}]")
        return "Measure(" + " + ".join(parts) + ")" if parts else "Measure(empty)"

    # convenience methods mirroring the module functions

    def quantile(self, t):
        return quantile(self, t)

    def cdf(self, x):
        return cdf(self, x)

    def potential(self, x):
        return potential(self, x)

    def moments(self):
        return moments(self)


def _canonical(w: np.ndarray, a: np.ndarray, b: np.ndarray):
    """Validate monotonicity and merge adjacent collinear segments."""
    if w.size == 0:
        return w.copy(), a.copy(), b.copy()
    if np.any(w < 0):
        raise DomainError("segment widths must be non-negative")
    keep = w > 0
    w, a, b = w[keep], a[keep].copy(), b[keep].copy()
    if w.size == 0:
        return w, a, b
    scale = np.maximum(1.0, np.maximum(np.abs(a), np.abs(b)))
    tol = 1e-9 * scale
    if np.any(b < a - tol):
        raise DomainError("segment values must be non-decreasing")
    if np.any(b[:-1] > a[1:] + tol[1:]):
        raise DomainError("quantile function must be non-decreasing")
    # rounding noise: snap nearly flat segments and nearly continuous joints
    b = np.maximum(b, a)
    flat = (b - a) <= TAU_MERGE * scale
    b[flat] = a[flat]
    if w.size > 1:
        back = a[1:] < b[:-1]
        a[1:][back] = b[:-1][back]
        b = np.maximum(b, a)
    if w.size == 1:
        return w, a, b
    # decide which joints merge
    touch = np.abs(a[1:] - b[:-1]) <= TAU_MERGE * scale[1:]
    flat = a == b
    both_flat = flat[:-1] & flat[1:]
    s = (b - a) / w
    predicted = b[:-1] + s[:-1] * w[1:]
    collinear = (~flat[:-1]) & (~flat[1:]) & (np.abs(predicted - b[1:]) <= TAU_MERGE * scale[1:])
    merge = touch & (both_flat | collinear)
    if not merge.any():
        return w, a, b
    starts = np.concatenate(([True], ~merge))
    group = np.cumsum(starts) - 1
    first = np.flatnonzero(starts)
    last = np.concatenate((first[1:] - 1, [w.size - 1]))
    new_w = np.bincount(group, weights=w)
    new_a, new_b = a[first], b[last]
    all_flat = np.bincount(group, weights=(~flat).astype(float)) == 0
    if all_flat.any():
        # merged atoms sit where the heaviest member sits, so rounding slivers cannot move them
        order = np.lexsort((-w, group))
        heavy = order[np.concatenate(([True], np.diff(group[order]) > 0))]
        new_a[all_flat] = a[heavy][all_flat]
        new_b[all_flat] = new_a[all_flat]
    return new_w, new_a, new_b


def _require_nonempty(mu: Measure) -> None:
    if mu.is_empty:
        raise DomainError("operation undefined on the empty measure")


def _segment_index(mu: Measure, t: np.ndarray) -> np.ndarray:
    """Index k of the segment with cum[k] < t <= cum[k+1] (left-continuous)."""
    k = np.searchsorted(mu.cum, t, side="left") - 1
    return np.clip(k, 0, mu.widths.size - 1)


def quantile(mu: Measure, t):
    """Left-continuous quantile G_mu(t) for 0 < t <= mass."""
    _require_nonempty(mu)
    arr = np.asarray(t, dtype=float)
    m = mu.mass
    if np.any(arr <= 0) or np.any(arr > m + TAU_MASS * _scale(m)):
        raise DomainError("quantile level outside ]0, mass]")
    arr = np.minimum(arr, m)
    k = _segment_index(mu, arr)
    val = mu.lo[k] + mu.slopes[k] * (arr - mu.cum[k])
    val = np.minimum(val, mu.hi[k])
    return float(val) if np.ndim(val) == 0 else val


def cdf(mu: Measure, x):
    """Right-continuous distribution function F_mu(x) = mu(]-inf, x])."""
    arr = np.asarray(x, dtype=float)
    if mu.is_empty:
        return 0.0 if arr.ndim == 0 else np.zeros_like(arr)
    xs = arr.reshape(-1, 1)
    flat = mu.lo == mu.hi
    span = np.where(flat, 1.0, mu.hi - mu.lo)
    frac = np.clip((xs - mu.lo) / span, 0.0, 1.0)
    frac = np.where(flat, (xs >= mu.lo).astype(float), frac)
    out = frac @ mu.widths
    return float(out[0]) if arr.ndim == 0 else out.reshape(arr.shape)


def moments(mu: Measure) -> tuple[float, float, float]:
    """(mass, barycenter, second moment int x^2 dmu)."""
    _require_nonempty(mu)
    w, a, b = mu.widths, mu.lo, mu.hi
    m = float(w.sum())
    first = float(np.dot(w, (a + b) / 2))
    second = float(np.dot(w, (a * a + a * b + b * b) / 3))
    return m, first / m, second


def first_moment(mu: Measure) -> float:
    if mu.is_empty:
        return 0.0
    return float(np.dot(mu.widths, (mu.lo + mu.hi) / 2))


def potential(mu: Measure, x):
    """u_mu(x) = int |s - x| dmu(s), exact.

    Segments are ordered, so at most one of them straddles x; the others
    contribute through prefix sums of mass and first moment.
    """
    arr = np.asarray(x, dtype=float)
    if mu.is_empty:
        return 0.0 if arr.ndim == 0 else np.zeros_like(arr)
    xs = arr.reshape(-1)
    w, a, b = mu.widths, mu.lo, mu.hi
    n = w.size
    mom = np.concatenate(([0.0], np.cumsum(w * (a + b) / 2)))
    cum = mu.cum
    j = np.searchsorted(b, xs, side="right")
    jc = np.minimum(j, n - 1)
    inside = (j < n) & (a[jc] < xs)
    span = np.where(b[jc] > a[jc], b[jc] - a[jc], 1.0)
    mid_term = np.where(inside, w[jc] / span * ((xs - a[jc]) ** 2 + (b[jc] - xs) ** 2) / 2, 0.0)
    k = np.where(inside, j + 1, j)
    left = xs * cum[j] - mom[j]
    right = (mom[n] - mom[k]) - xs * (cum[n] - cum[k])
    out = left + right + mid_term
    return float(out[0]) if arr.ndim == 0 else out.reshape(arr.shape)


def _cells(grid: np.ndarray, mu: Measure):
    """Values of G_mu at both ends of each cell of a quantile grid.

    Inside a cell G_mu is linear; the returned pair holds its right limit at
    the left end and its left limit at the right end.
    """
    mids = 0.5 * (grid[:-1] + grid[1:])
    k = _segment_index(mu, mids)
    s = mu.slopes[k]
    v0 = mu.lo[k] + s * (grid[:-1] - mu.cum[k])
    v1 = mu.lo[k] + s * (grid[1:] - mu.cum[k])
    return v0, v1


def _merged_grid(mu: Measure, nu: Measure) -> np.ndarray:
    """Union of the quantile breakpoints, with levels closer than TAU_MERGE clustered.

    A rounding-level cell would be read on different sides of a jump by the
    two measures and report a spurious gap.
    """
    m = min(mu.mass, nu.mass)
    tol = TAU_MERGE * _scale(m)
    grid = np.union1d(mu.cum, nu.cum)
    grid = grid[grid < m - tol]
    keep = np.concatenate(([True], np.diff(grid) > tol))
    return np.append(grid[keep], m)


def _check_equal_mass(mu: Measure, nu: Measure) -> None:
    _require_nonempty(mu)
    _require_nonempty(nu)
    if abs(mu.mass - nu.mass) > TAU_MASS * _scale(mu.mass, nu.mass):
        raise DomainError(f"masses differ: {mu.mass!r} vs {nu.mass!r}")


def _abs_linear_integral(d0: np.ndarray, d1: np.ndarray, dt: np.ndarray) -> np.ndarray:
    same = d0 * d1 >= 0
    tot = np.abs(d0) + np.abs(d1)
    safe = np.where(tot > 0, tot, 1.0)
    return np.where(same, 0.5 * tot * dt, 0.5 * (d0 * d0 + d1 * d1) / safe * dt)


def wasserstein(mu: Measure, nu: Measure) -> float:
    """Kantorovich distance int_0^m |G_mu - G_nu|, exact for piecewise-linear G."""
    _check_equal_mass(mu, nu)
    grid = _merged_grid(mu, nu)
    a0, a1 = _cells(grid, mu)
    b0, b1 = _cells(grid, nu)
    return float(_abs_linear_integral(a0 - b0, a1 - b1, np.diff(grid)).sum())


def _clip_range(mu: Measure, s: float, t: float) -> tuple[float, float]:
    m = mu.mass
    tol = TAU_MASS * _scale(m)
    if s < -tol or t > m + tol or not s < t:
        raise DomainError(f"quantile range ({s}, {t}) not inside ]0, {m}]")
    return max(s, 0.0), min(t, m)


def restrict_union(mu: Measure, intervals) -> Measure:
    """(G_mu)_# Lebesgue restricted to a sorted disjoint union of quantile intervals."""
    iv = np.asarray(intervals, dtype=float).reshape(-1, 2)
    if iv.size == 0 or mu.is_empty:
        return Measure.empty()
    m = mu.mass
    s = np.clip(iv[:, 0], 0.0, m)
    t = np.clip(iv[:, 1], 0.0, m)
    c0, c1 = mu.cum[:-1], mu.cum[1:]
    # pairs (interval i, segment k) with positive overlap
    lo_k = np.searchsorted(c1, s, side="right")
    hi_k = np.searchsorted(c0, t, side="left")
    counts = np.maximum(hi_k - lo_k, 0)
    if counts.sum() == 0:
        return Measure.empty()
    rows = np.repeat(np.arange(iv.shape[0]), counts)
    offs = np.arange(counts.sum()) - np.repeat(np.cumsum(counts) - counts, counts)
    k = np.repeat(lo_k, counts) + offs
    u0 = np.maximum(s[rows], c0[k])
    u1 = np.minimum(t[rows], c1[k])
    width = u1 - u0
    sl = mu.slopes[k]
    new_lo = mu.lo[k] + sl * (u0 - c0[k])
    new_hi = np.minimum(mu.lo[k] + sl * (u1 - c0[k]), mu.hi[k])
    good = width > 0
    return Measure(width[good], new_lo[good], new_hi[good])


def restrict_quantile(mu: Measure, s: float, t: float) -> Measure:
    """(G_mu)_# Lebesgue on ]s, t]."""
    _require_nonempty(mu)
    s, t = _clip_range(mu, s, t)
    return restrict_union(mu, [(s, t)])


def rightmost_submeasure(nu: Measure, alpha: float) -> Measure:
    """The stochastically largest submeasure of nu with mass alpha."""
    _require_nonempty(nu)
    m = nu.mass
    if alpha <= 0 or alpha > m + TAU_MASS * _scale(m):
        raise DomainError("alpha outside ]0, mass]")
    return restrict_quantile(nu, max(m - alpha, 0.0), m)


def leftmost_submeasure(nu: Measure, alpha: float) -> Measure:
    """The stochastically smallest submeasure of nu with mass alpha."""
    _require_nonempty(nu)
    m = nu.mass
    if alpha <= 0 or alpha > m + TAU_MASS * _scale(m):
        raise DomainError("alpha outside ]0, mass]")
    return restrict_quantile(nu, 0.0, min(alpha, m))


def top_down(mu: Measure, nu: Measure) -> tuple[Measure, Measure]:
    """Measures whose quantile functions are max(G_mu, G_nu) and min(G_mu, G_nu)."""
    _check_equal_mass(mu, nu)
    grid = _merged_grid(mu, nu)
    a0, a1 = _cells(grid, mu)
    b0, b1 = _cells(grid, nu)
    u0, u1 = grid[:-1], grid[1:]
    d0, d1 = a0 - b0, a1 - b1
    cross = d0 * d1 < 0
    # split crossing cells at the intersection
    r = np.where(cross, d0 / np.where(cross, d0 - d1, 1.0), 1.0)
    um = u0 + r * (u1 - u0)
    am = a0 + r * (a1 - a0)
    bm = b0 + r * (b1 - b0)
    xm = 0.5 * (am + bm)

    def pieces(sign: float) -> Measure:
        whole = sign * (d0 + d1) >= 0
        first = sign * d0 > 0
        second = sign * d1 > 0
        w1 = np.where(cross, um - u0, u1 - u0)
        lo1 = np.where(cross, np.where(first, a0, b0), np.where(whole, a0, b0))
        hi1 = np.where(cross, xm, np.where(whole, a1, b1))
        w2 = np.where(cross, u1 - um, 0.0)
        hi2 = np.where(second, a1, b1)
        w = np.column_stack((w1, w2)).reshape(-1)
        lo = np.column_stack((lo1, xm)).reshape(-1)
        hi = np.column_stack((hi1, hi2)).reshape(-1)
        keep = w > 0
        return Measure(w[keep], lo[keep], np.maximum(hi[keep], lo[keep]))

    return pieces(1.0), pieces(-1.0)


@dataclass(frozen=True)
class SpatialForm:
    """Atoms and uniform blocks of a measure, sorted by position.

    ``atoms`` holds (position, mass); ``blocks`` holds (a, b, density).
    """

    atoms: tuple[tuple[float, float], ...]
    blocks: tuple[tuple[float, float, float], ...]

    @property
    def mass(self) -> float:
        return sum(m for _, m in self.atoms) + sum(d * (b - a) for a, b, d in self.blocks)


def spatial_form(mu: Measure) -> SpatialForm:
    if mu.is_empty:
        return SpatialForm((), ())
    flat = mu.lo == mu.hi
    atoms = tuple((float(x), float(w)) for x, w in zip(mu.lo[flat], mu.widths[flat]))
    blocks = tuple(
        (float(a), float(b), float(w / (b - a)))
        for w, a, b in zip(mu.widths[~flat], mu.lo[~flat], mu.hi[~flat])
    )
    return SpatialForm(atoms, blocks)


def _assemble(atom_x, atom_m, blk_a, blk_b, blk_d) -> Measure:
    """Quantile form of a positive combination of atoms and uniform blocks."""
    atom_x = np.asarray(atom_x, dtype=float)
    atom_m = np.asarray(atom_m, dtype=float)
    blk_a = np.asarray(blk_a, dtype=float)
    blk_b = np.asarray(blk_b, dtype=float)
    blk_d = np.asarray(blk_d, dtype=float)
    ws, los, his, keys = [], [], [], []
    if atom_x.size:
        order = np.argsort(atom_x, kind="stable")
        x, m = atom_x[order], atom_m[order]
        scale = np.maximum(1.0, np.abs(x))
        new = np.concatenate(([True], np.diff(x) > TAU_MERGE * scale[1:]))
        grp = np.cumsum(new) - 1
        mass = np.bincount(grp, weights=m)
        pos = x[new]
        ws.append(mass)
        los.append(pos)
        his.append(pos)
        keys.append(np.column_stack((pos, np.zeros_like(pos))))
    if blk_a.size:
        nodes = np.unique(np.concatenate((blk_a, blk_b, atom_x)))
        ia = np.searchsorted(nodes, blk_a)
        ib = np.searchsorted(nodes, blk_b)
        delta = np.zeros(nodes.size)
        np.add.at(delta, ia, blk_d)
        np.add.at(delta, ib, -blk_d)
        dens = np.cumsum(delta)[:-1]
        dmax = float(np.max(blk_d))
        dens[dens <= 1e-12 * dmax] = 0.0
        length = np.diff(nodes)
        cell_mass = dens * length
        keep = cell_mass > 0
        ws.append(cell_mass[keep])
        los.append(nodes[:-1][keep])
        his.append(nodes[1:][keep])
        keys.append(np.column_stack((nodes[:-1][keep], np.ones(int(keep.sum())))))
    if not ws:
        return Measure.empty()
    w = np.concatenate(ws)
    lo = np.concatenate(los)
    hi = np.concatenate(his)
    key = np.concatenate(keys)
    order = np.lexsort((key[:, 1], key[:, 0]))
    return Measure(w[order], lo[order], hi[order])


def from_spatial(sf: SpatialForm) -> Measure:
    ax = [x for x, _ in sf.atoms]
    am = [m for _, m in sf.atoms]
    ba = [a for a, _, _ in sf.blocks]
    bb = [b for _, b, _ in sf.blocks]
    bd = [d for _, _, d in sf.blocks]
    return _assemble(ax, am, ba, bb, bd)


def combine(ops: Iterable[tuple[float, Measure]]) -> Measure:
    """Positive linear combination sum_i c_i mu_i in canonical form."""
    ax, am, ba, bb, bd = [], [], [], [], []
    for c, mu in ops:
        if c < 0:
            raise DomainError("combine takes non-negative coefficients")
        if c == 0 or mu.is_empty:
            continue
        flat = mu.lo == mu.hi
        ax.append(mu.lo[flat])
        am.append(c * mu.widths[flat])
        ba.append(mu.lo[~flat])
        bb.append(mu.hi[~flat])
        bd.append(c * mu.widths[~flat] / (mu.hi[~flat] - mu.lo[~flat]))
    if not ax:
        return Measure.empty()
    return _assemble(*(np.concatenate(v) for v in (ax, am, ba, bb, bd)))


def _locate(nodes: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """Index of the node each point belongs to, allowing TAU_MERGE slack."""
    idx = np.searchsorted(nodes, pts, side="left")
    prev = np.clip(idx - 1, 0, nodes.size - 1)
    near = (idx > 0) & (pts - nodes[prev] <= TAU_MERGE * np.maximum(1.0, np.abs(pts)))
    return np.where(near, prev, np.minimum(idx, nodes.size - 1))


def _grid_masses(mu: Measure, nodes: np.ndarray):
    """Atom mass at each node and block mass on each cell of a spatial grid.

    ``nodes`` must contain every atom position and block endpoint of mu, up
    to TAU_MERGE (see :func:`spatial_nodes`).
    """
    atoms = np.zeros(nodes.size)
    cells = np.zeros(max(nodes.size - 1, 0))
    if mu.is_empty:
        return atoms, cells
    flat = mu.lo == mu.hi
    if flat.any():
        np.add.at(atoms, _locate(nodes, mu.lo[flat]), mu.widths[flat])
    if (~flat).any():
        ia = _locate(nodes, mu.lo[~flat])
        ib = _locate(nodes, mu.hi[~flat])
        span = ib > ia
        # a block shorter than the node tolerance is charged to its node as an atom
        np.add.at(atoms, ia[~span], mu.widths[~flat][~span])
        w = mu.widths[~flat][span]
        ia, ib = ia[span], ib[span]
        d = w / (nodes[ib] - nodes[ia])
        delta = np.zeros(nodes.size)
        np.add.at(delta, ia, d)
        np.add.at(delta, ib, -d)
        dens = np.cumsum(delta)[:-1]
        dens[dens < 0] = 0.0
        cells = dens * np.diff(nodes)
    return atoms, cells


def spatial_nodes(*measures: Measure) -> np.ndarray:
    """Sorted atom positions and block endpoints, clustered within TAU_MERGE."""
    parts = [np.concatenate((mu.lo, mu.hi)) for mu in measures if not mu.is_empty]
    if not parts:
        return np.zeros(0)
    pts = np.unique(np.concatenate(parts))
    gap = np.diff(pts) > TAU_MERGE * np.maximum(1.0, np.abs(pts[1:]))
    return pts[np.concatenate(([True], gap))]


def difference(nu: Measure, mu: Measure) -> Measure:
    """nu - mu for mu <=+ nu; negative rounding residue is dropped."""
    if mu.is_empty:
        return nu
    nodes = spatial_nodes(nu, mu)
    na, nc = _grid_masses(nu, nodes)
    ma, mc = _grid_masses(mu, nodes)
    da = na - ma
    dc = nc - mc
    tol = TAU_MASS * _scale(nu.mass)
    if np.any(da < -tol) or np.any(dc < -tol - 1e-9 * nc):
        raise DomainError("difference would be a signed measure")
    da[da <= tol] = 0.0
    dc[dc <= tol] = 0.0
    length = np.diff(nodes)
    pos = dc > 0
    return _assemble(nodes[da > 0], da[da > 0], nodes[:-1][pos], nodes[1:][pos], dc[pos] / length[pos])


def quantile_integral(mu: Measure, u):
    """I(u) = int_0^u G_mu, the cumulative first moment in quantile coordinates."""
    arr = np.clip(np.asarray(u, dtype=float), 0.0, mu.mass)
    seg_int = mu.widths * (mu.lo + mu.hi) / 2
    base = np.concatenate(([0.0], np.cumsum(seg_int)))
    k = np.clip(np.searchsorted(mu.cum, arr, side="right") - 1, 0, mu.widths.size - 1)
    d = arr - mu.cum[k]
    val = base[k] + d * mu.lo[k] + 0.5 * mu.slopes[k] * d * d
    return float(val) if np.ndim(val) == 0 else val


def block_means(mu: Measure, edges: np.ndarray) -> np.ndarray:
    """Mean of G_mu over each quantile cell [edges[j], edges[j+1]]."""
    edges = np.asarray(edges, dtype=float)
    grid = np.union1d(edges, mu.cum)
    grid = grid[(grid >= edges[0]) & (grid <= edges[-1])]
    v0, v1 = _cells(grid, mu)
    cell_int = 0.5 * (v0 + v1) * np.diff(grid)
    owner = np.clip(np.searchsorted(edges, 0.5 * (grid[:-1] + grid[1:]), side="right") - 1, 0, edges.size - 2)
    sums = np.bincount(owner, weights=cell_int, minlength=edges.size - 1)
    return sums / np.diff(edges)


def atomize_dyadic(mu: Measure, k: int) -> Measure:
    """2^k atoms of equal mass at the conditional means of the dyadic quantile blocks."""
    if k < 0:
        raise DomainError("k must be non-negative")
    _require_nonempty(mu)
    n = 2 ** k
    edges = np.linspace(0.0, mu.mass, n + 1)
    xs = block_means(mu, edges)
    # block means of a monotone function are monotone; clamp to the true range
    xs = np.clip(np.maximum.accumulate(xs), mu.lo[0], mu.hi[-1])
    return Measure(np.diff(edges), xs, xs)
