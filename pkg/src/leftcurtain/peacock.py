"""Peacocks, their curtain-transition Markov chains and the limit semigroup.

A peacock is a family of measures mu_t non-decreasing in convex order.  Over
a partition t_0 < ... < t_Q the curtain couplings between consecutive
marginals are glued into a Markov chain.  For finitely supported peacocks the
chain is a product of row-stochastic matrices on trajectory states; as the
mesh goes to zero it converges to the solution of dA/du = A N(u).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterator

import numpy as np
from numpy.polynomial import polynomial as P

from .curtain import BlockCurtain, Coupling, UniformKernel, curtain_atomic, curtain_blocks, curtain_uniform_kernel
from .measures import TAU_MASS, DomainError, Measure, _scale, quantile
from .orders import leq_convex

__all__ = [
    "Peacock",
    "UniformExp",
    "FiniteCurves",
    "ThreePoint",
    "Stocking",
    "Grid",
    "TimeChange",
    "Partition",
    "TransitionMatrix",
    "PathSet",
    "JumpStats",
    "marginal",
    "validate_peacock",
    "transition",
    "chain_compose",
    "sample_paths",
    "iter_paths",
    "estimate_generator",
    "integrate_semigroup",
    "jump_statistics",
    "markov_defect",
    "euler_excess",
    "uniform_limit_path",
]

_STATE_MERGE = 1e-12


# scenarios


class Peacock:
    """Base class: a marginal family on a time domain."""

    domain: tuple[float, float] = (0.0, 1.0)
    finite: bool = False

    def marginal(self, t: float) -> Measure:
        raise NotImplementedError

    def states(self, t: float) -> tuple[np.ndarray, np.ndarray]:
        raise DomainError(f"{type(self).__name__} has no finite trajectory states")

    def continuation(self, s: float, t: float, x: np.ndarray) -> np.ndarray:
        """Deterministic path continuation used to detect jumps."""
        return np.asarray(x, dtype=float)

    def kernel(self, s: float, t: float):
        """Per-step sampler object; defaults to the atomized curtain."""
        raise NotImplementedError

    def to_domain(self, u) -> np.ndarray:
        d0, d1 = self.domain
        return d0 + (d1 - d0) * np.asarray(u, dtype=float)

    def _check_time(self, t: float) -> None:
        d0, d1 = self.domain
        slack = 1e-12 * _scale(d0, d1)
        if not d0 - slack <= t <= d1 + slack:
            raise DomainError(f"time {t!r} outside the domain [{d0}, {d1}]")


@dataclass(frozen=True)
class ScaledUniformKernel:
    """Curtain kernel between the uniform laws on [left, left + L] and [left - aL, left + (1 + a)L]."""

    base: UniformKernel
    left: float
    length: float

    @property
    def p_down(self) -> float:
        return self.base.p_down

    def up(self, x):
        return self.left + self.length * self.base.up((np.asarray(x) - self.left) / self.length)

    def down(self, x):
        return self.left + self.length * self.base.down((np.asarray(x) - self.left) / self.length)

    def martingale_residual(self, x) -> float:
        p = self.p_down
        return float(np.max(np.abs((1 - p) * self.up(x) + p * self.down(x) - np.asarray(x))))

    def sample(self, x, state, u1, u2):
        return np.where(u2 < self.p_down, self.down(x), self.up(x)), state


class UniformExp(Peacock):
    """mu_t uniform on [-e^{2t}/2, e^{2t}/2], t in [0, 1]."""

    domain = (0.0, 1.0)

    def marginal(self, t: float) -> Measure:
        self._check_time(t)
        half = math.exp(2 * t) / 2
        return Measure.uniform(-half, half, 1.0)

    def kernel(self, s: float, t: float) -> ScaledUniformKernel:
        if t < s:
            raise DomainError("transition needs s <= t")
        a = math.expm1(2 * (t - s)) / 2
        length = math.exp(2 * s)
        return ScaledUniformKernel(curtain_uniform_kernel(a), -length / 2, length)

    def continuation(self, s, t, x):
        return self.kernel(s, t).up(x)


class FiniteCurves(Peacock):
    """mu_t = sum_i a_i(t) delta_{x_i(t)} with polynomial positions and weights."""

    finite = True

    def __init__(self, x_coefs, a_coefs, domain=(0.0, 1.0)):
        if len(x_coefs) != len(a_coefs) or not x_coefs:
            raise DomainError("each curve needs a position and a weight polynomial")
        self.x_coefs = [np.asarray(c, dtype=float) for c in x_coefs]
        self.a_coefs = [np.asarray(c, dtype=float) for c in a_coefs]
        self.domain = (float(domain[0]), float(domain[1]))
        if not self.domain[0] < self.domain[1]:
            raise DomainError("empty time domain")

    @classmethod
    def from_json(cls, obj: dict) -> "FiniteCurves":
        try:
            curves = obj["curves"]
            xs = [c["x"] for c in curves]
            As = [c["a"] for c in curves]
        except (KeyError, TypeError) as err:
            raise DomainError(f"curves scenario needs curves[].x and curves[].a: {err}") from None
        return cls(xs, As, obj.get("domain", (0.0, 1.0)))

    def to_json(self) -> dict:
        return {
            "curves": [{"x": x.tolist(), "a": a.tolist()} for x, a in zip(self.x_coefs, self.a_coefs)],
            "domain": list(self.domain),
        }

    @property
    def n(self) -> int:
        return len(self.x_coefs)

    def states(self, t: float) -> tuple[np.ndarray, np.ndarray]:
        self._check_time(t)
        xs = np.array([P.polyval(t, c) for c in self.x_coefs])
        a = np.array([P.polyval(t, c) for c in self.a_coefs])
        if np.any(a <= 0):
            raise DomainError(f"non-positive curve weight at t={t!r}")
        return xs, a

    def marginal(self, t: float) -> Measure:
        xs, a = self.states(t)
        return Measure.from_atoms(xs, a)

    def kernel(self, s, t):
        return _FiniteSampler(_finite_matrix(self, s, t)[1])


class ThreePoint(FiniteCurves):
    """x = (9 - t, 8 + 2t, 10), a = (1/2, 1/4, 1/4) on [1/2, 3/2]; curves 2 and 3 meet at t = 1."""

    def __init__(self):
        super().__init__([[9.0, -1.0], [8.0, 2.0], [10.0]], [[0.5], [0.25], [0.25]], (0.5, 1.5))


class Stocking(Peacock):
    """Piecewise-uniform approximation of the stopped uniform-exponential martingale.

    mu_t = mu1_t + mu2_t.  mu1_t lives below -1/2 with mass 1 - e^{-t}: its
    quantile function, read from -1/2 leftwards, interpolates
    v -> -1/(2(1 - v)^2) linearly between the levels 1 - e^{-i/2^level}, so
    mu1_s is a piece of mu1_t for s < t.  mu2_t is uniform with mass e^{-t},
    left end e^{2t}/2 - e^t and the right end fixed by a zero total mean.
    """

    domain = (0.0, 1.0)
    barrier = -0.5

    def __init__(self, level: int = 10, atoms: int = 5):
        if level < 0 or atoms < 0:
            raise DomainError("levels must be non-negative")
        self.level = int(level)
        self.atoms = int(atoms)
        tau = np.arange(2 ** self.level + 1) / 2 ** self.level
        self._v = -np.expm1(-tau)
        self._x = -np.exp(2 * tau) / 2

    def _lower(self, t: float) -> Measure | None:
        vt = -math.expm1(-t)
        if vt <= 0:
            return None
        inner = self._v < vt
        v = np.append(self._v[inner], vt)
        x = np.append(self._x[inner], np.interp(vt, self._v, self._x))
        # cell i holds levels ]v_i, v_{i+1}] and positions [x_{i+1}, x_i]
        widths, lo, hi = np.diff(v), x[1:], x[:-1]
        return Measure(widths[::-1], lo[::-1], hi[::-1])

    def marginal(self, t: float) -> Measure:
        self._check_time(t)
        low = self._lower(t)
        m2 = math.exp(-t)
        left = math.exp(2 * t) / 2 - math.exp(t)
        first = 0.0 if low is None else float(np.dot(low.widths, (low.lo + low.hi) / 2))
        center = -first / m2
        upper = Measure.uniform(left, 2 * center - left, m2)
        if low is None:
            return upper
        return Measure(np.concatenate((low.widths, upper.widths)), np.concatenate((low.lo, upper.lo)),
                       np.concatenate((low.hi, upper.hi)))

    def kernel(self, s, t):
        return _BlockSampler(curtain_blocks(self.marginal(s), self.marginal(t), self.atoms), self.marginal(s))


class Grid(Peacock):
    """Explicit marginals at a finite list of times; no interpolation between them."""

    def __init__(self, times, measures, atoms: int = 5):
        times = np.asarray(times, dtype=float)
        if times.size < 1 or len(measures) != times.size or np.any(np.diff(times) <= 0):
            raise DomainError("grid needs strictly increasing times with one measure each")
        self.times = times
        self.measures = list(measures)
        self.atoms = int(atoms)
        self.domain = (float(times[0]), float(times[-1]) if times.size > 1 else float(times[0]) + 1.0)

    @classmethod
    def from_json(cls, obj: dict) -> "Grid":
        try:
            entries = obj["grid"]
            times = [float(e["t"]) for e in entries]
            ms = [Measure.from_json(e["measure"]) for e in entries]
        except (KeyError, TypeError) as err:
            raise DomainError(f"grid scenario needs grid[].t and grid[].measure: {err}") from None
        return cls(times, ms, obj.get("atoms", 5))

    def _index(self, t: float) -> int:
        i = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[i] - t) > 1e-9 * _scale(t):
            raise DomainError(f"grid scenario has no marginal at t={t!r}")
        return i

    def marginal(self, t: float) -> Measure:
        return self.measures[self._index(t)]

    def kernel(self, s, t):
        return _BlockSampler(curtain_blocks(self.marginal(s), self.marginal(t), self.atoms), self.marginal(s))


class TimeChange(Peacock):
    """The peacock t -> base.marginal(clock(t)) for an increasing clock."""

    def __init__(self, base: Peacock, clock: Callable[[float], float], domain=(0.0, 1.0)):
        self.base = base
        self.clock = clock
        self.domain = (float(domain[0]), float(domain[1]))
        self.finite = base.finite

    def marginal(self, t):
        return self.base.marginal(float(self.clock(t)))

    def states(self, t):
        return self.base.states(float(self.clock(t)))

    def continuation(self, s, t, x):
        return self.base.continuation(float(self.clock(s)), float(self.clock(t)), x)

    def kernel(self, s, t):
        return self.base.kernel(float(self.clock(s)), float(self.clock(t)))


# partitions and matrices


@dataclass(frozen=True)
class Partition:
    """0 = t_0 < ... < t_Q = 1, mapped onto the scenario domain when used."""

    times: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        if t.size < 2 or t[0] != 0.0 or t[-1] != 1.0 or np.any(np.diff(t) <= 0):
            raise DomainError("partition must increase strictly from 0 to 1")
        t.setflags(write=False)
        object.__setattr__(self, "times", t)

    @classmethod
    def uniform(cls, mesh: float) -> "Partition":
        if not 0 < mesh <= 1:
            raise DomainError("mesh must lie in ]0, 1]")
        q = max(1, int(round(1.0 / mesh)))
        if abs(q * mesh - 1.0) > 1e-9:
            q = math.ceil(1.0 / mesh)
        t = np.linspace(0.0, 1.0, q + 1)
        return cls(t)

    @property
    def mesh(self) -> float:
        return float(np.max(np.diff(self.times)))

    @property
    def steps(self) -> int:
        return self.times.size - 1


@dataclass
class TransitionMatrix:
    """Row-stochastic matrix between trajectory states at times s and t."""

    m: np.ndarray
    s: float
    t: float

    @property
    def states(self) -> int:
        return self.m.shape[0]


def _normalize_rows(m: np.ndarray) -> np.ndarray:
    m = np.where(m < 0, 0.0, m)
    return m / m.sum(axis=1, keepdims=True)


def _group(xs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Distinct positions (sorted) and the index of each state's position."""
    order = np.argsort(xs, kind="stable")
    sx = xs[order]
    new = np.concatenate(([True], np.diff(sx) > _STATE_MERGE * np.maximum(1.0, np.abs(sx[1:]))))
    gid = np.cumsum(new) - 1
    inv = np.empty_like(gid)
    inv[order] = gid
    pos = np.array([sx[gid == g].mean() for g in range(gid[-1] + 1)])
    return pos, inv


def _finite_matrix(p: Peacock, s: float, t: float) -> tuple[Coupling | None, TransitionMatrix]:
    """Curtain coupling of (mu_s, mu_t) and the matrix M~ = Diag(a)^{-1} M on trajectory states.

    Coinciding states are merged before the coupling is built; mass arriving
    at a merged position is split among its states in proportion to their
    weights, and merged sources share one kernel.
    """
    xs_s, a_s = p.states(s)
    if t == s:
        return None, TransitionMatrix(np.eye(xs_s.size), s, t)
    xs_t, a_t = p.states(t)
    ps, inv_s = _group(xs_s)
    pt, inv_t = _group(xs_t)
    A_s = np.bincount(inv_s, a_s)
    A_t = np.bincount(inv_t, a_t)
    mu = Measure.from_atoms(ps, A_s)
    nu = Measure.from_atoms(pt, A_t)
    if not leq_convex(mu, nu):
        raise DomainError(f"marginals at {s!r} and {t!r} are not in convex order")
    pi = curtain_atomic(mu, nu, check=False)
    fc = pi.to_finite()
    grouped = np.zeros((ps.size, pt.size))
    ri = np.abs(fc.xs[:, None] - ps[None, :]).argmin(axis=1)
    cj = np.abs(fc.ys[:, None] - pt[None, :]).argmin(axis=1)
    np.add.at(grouped, (ri[:, None], cj[None, :]), fc.m)
    m = grouped[inv_s][:, inv_t] * (a_s / A_s[inv_s])[:, None] * (a_t / A_t[inv_t])[None, :]
    mt = m / a_s[:, None]
    mt[np.abs(mt) < 1e-15] = 0.0
    return pi, TransitionMatrix(_normalize_rows(mt), s, t)


@dataclass
class _FiniteSampler:
    tm: TransitionMatrix

    def sample(self, x, state, u1, u2):
        cum = np.cumsum(self.tm.m, axis=1)
        cum[:, -1] = 1.0
        nxt = (u2[:, None] > cum[state]).sum(axis=1)
        return None, np.minimum(nxt, cum.shape[1] - 1)


@dataclass
class _BlockSampler:
    """Sample the atomized curtain: identity below the prefix level, block kernels above."""

    blocks: BlockCurtain
    mu: Measure

    def __post_init__(self):
        c = self.blocks.coupling
        self._w = np.array([w for _, w, _ in c.sources])
        self._cum = np.concatenate(([0.0], np.cumsum(self._w)))
        self._targets = [tgt for _, _, tgt in c.sources]

    def _levels(self, x, u1):
        """Quantile level of x in mu, uniform inside the span of an atom."""
        mu = self.mu
        j_right = np.searchsorted(mu.hi, x, side="right")
        j_left = np.searchsorted(mu.hi, x, side="left")

        def part(j):
            jc = np.minimum(j, len(mu) - 1)
            inside = (j < len(mu)) & (mu.lo[jc] < x)
            span = np.where(mu.hi[jc] > mu.lo[jc], mu.hi[jc] - mu.lo[jc], 1.0)
            frac = np.clip((x - mu.lo[jc]) / span, 0.0, 1.0)
            return mu.cum[np.minimum(j, len(mu))] + np.where(inside, mu.widths[jc] * frac, 0.0)

        f_right, f_left = part(j_right), part(j_left)
        return f_left + u1 * (f_right - f_left)

    def sample(self, x, state, u1, u2):
        level = self._levels(x, u1)
        base = self.blocks.prefix_level
        y = np.array(x, dtype=float, copy=True)
        moving = level > base + TAU_MASS * _scale(self.mu.mass)
        if not moving.any() or self._w.size == 0:
            return y, state
        r = level[moving] - base
        j = np.clip(np.searchsorted(self._cum, r, side="left") - 1, 0, self._w.size - 1)
        out = np.empty(r.size)
        uu = u2[moving]
        for k in np.unique(j):
            sel = j == k
            out[sel] = quantile(self._targets[k], np.maximum(uu[sel], 1e-300) * self._w[k])
        y[moving] = out
        return y, state


# operations


def marginal(p: Peacock, t: float) -> Measure:
    return p.marginal(t)


def validate_peacock(p: Peacock, grid) -> tuple[bool, tuple[float, float] | None]:
    """(True, None) if consecutive grid marginals increase in convex order, else the first failing pair."""
    grid = [float(t) for t in grid]
    for s, t in zip(grid[:-1], grid[1:]):
        if not leq_convex(p.marginal(s), p.marginal(t), tol=1e-9):
            return False, (s, t)
    return True, None


def transition(p: Peacock, s: float, t: float):
    """(coupling, TransitionMatrix or None) between scenario times s <= t."""
    if t < s:
        raise DomainError("transition needs s <= t")
    p._check_time(s)
    p._check_time(t)
    if p.finite:
        return _finite_matrix(p, s, t)
    if isinstance(p, UniformExp) or (isinstance(p, TimeChange) and isinstance(p.base, UniformExp)):
        return p.kernel(s, t), None
    mu, nu = p.marginal(s), p.marginal(t)
    return curtain_blocks(mu, nu, getattr(p, "atoms", 5)).coupling, None


def _require_finite(p: Peacock) -> None:
    if not p.finite:
        raise DomainError("operation needs a finitely supported scenario")


def chain_compose(p: Peacock, part: Partition) -> TransitionMatrix:
    """Ordered product of the per-step matrices M~(t_k, t_{k+1})."""
    _require_finite(p)
    times = p.to_domain(part.times)
    a = np.eye(p.states(times[0])[0].size)
    for s, t in zip(times[:-1], times[1:]):
        a = a @ _finite_matrix(p, float(s), float(t))[1].m
    return TransitionMatrix(a, float(times[0]), float(times[-1]))


def estimate_generator(p: Peacock, t: float, h: float) -> np.ndarray:
    """(M~(t, t + h) - I) / h."""
    _require_finite(p)
    if h <= 0:
        raise DomainError("h must be positive")
    p._check_time(t + h)
    m = _finite_matrix(p, t, t + h)[1].m
    return (m - np.eye(m.shape[0])) / h


def integrate_semigroup(p: Peacock, s: float, t: float, step: float) -> TransitionMatrix:
    """Explicit Euler for dA/du = A N(u), A(s) = I, with N from estimate_generator at h = step / 4."""
    _require_finite(p)
    if step <= 0:
        raise DomainError("step must be positive")
    n = max(1, int(round((t - s) / step)))
    grid = np.linspace(s, t, n + 1)
    a = np.eye(p.states(s)[0].size)
    for u0, u1 in zip(grid[:-1], grid[1:]):
        dt = u1 - u0
        h = min(step / 4, p.domain[1] - u0)
        gen = estimate_generator(p, float(u0), h) if h > 0 else np.zeros_like(a)
        a = _normalize_rows(a @ (np.eye(a.shape[0]) + dt * gen))
    return TransitionMatrix(a, float(s), float(t))


def markov_defect(p: Peacock, t_split: float, h: float) -> float:
    """||M~(t - h, t + h) - M~(t - h, t) M~(t, t + h)|| in the induced infinity norm."""
    _require_finite(p)
    one = _finite_matrix(p, t_split - h, t_split + h)[1].m
    two = _finite_matrix(p, t_split - h, t_split)[1].m @ _finite_matrix(p, t_split, t_split + h)[1].m
    return float(np.max(np.abs(one - two).sum(axis=1)))


# sampling


@dataclass
class PathSet:
    """Sampled paths at the partition times; rows are paths ``start``, ``start + 1``, ..."""

    partition: Partition
    paths: np.ndarray
    seed: int
    peacock: Peacock | None = None
    start: int = 0
    states: np.ndarray | None = None

    @property
    def times(self) -> np.ndarray:
        if self.peacock is None:
            return self.partition.times
        return self.peacock.to_domain(self.partition.times)

    def to_csv(self) -> str:
        """Header ``t_0,...,t_Q`` then one row per path; the times themselves are in ``self.times``."""
        lines = [",".join(f"t_{k}" for k in range(self.paths.shape[1]))]
        lines += [",".join(repr(float(v)) for v in row) for row in self.paths]
        return "\n".join(lines) + "\n"


def _path_uniforms(seed: int, index: int, steps: int) -> np.ndarray:
    """Uniforms of path ``index``: a counter-based stream keyed by (seed, index)."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(index),))
    return np.random.Generator(np.random.Philox(ss)).random((steps + 1, 2))


def _kernels(p: Peacock, part: Partition) -> list:
    times = p.to_domain(part.times)
    return [p.kernel(float(s), float(t)) for s, t in zip(times[:-1], times[1:])]


def _sample_block(p: Peacock, part: Partition, kernels: list, seed: int, start: int, stop: int) -> PathSet:
    steps = part.steps
    draws = np.stack([_path_uniforms(seed, i, steps) for i in range(start, stop)], axis=1)
    t0 = float(p.to_domain(0.0))
    n = stop - start
    out = np.empty((n, steps + 1))
    if p.finite:
        xs, a = p.states(t0)
        cum = np.cumsum(a) / a.sum()
        state = np.minimum((draws[0, :, 1][:, None] > cum[None, :]).sum(axis=1), a.size - 1)
        states = np.empty((n, steps + 1), dtype=int)
        states[:, 0] = state
        out[:, 0] = xs[state]
        times = p.to_domain(part.times)
        for k, ker in enumerate(kernels):
            _, state = ker.sample(None, state, draws[k + 1, :, 0], draws[k + 1, :, 1])
            states[:, k + 1] = state
            out[:, k + 1] = p.states(float(times[k + 1]))[0][state]
        return PathSet(part, out, seed, p, start, states)
    mu0 = p.marginal(t0)
    x = np.asarray(quantile(mu0, np.maximum(draws[0, :, 1], 1e-300) * mu0.mass), dtype=float).reshape(n)
    out[:, 0] = x
    for k, ker in enumerate(kernels):
        x, _ = ker.sample(x, None, draws[k + 1, :, 0], draws[k + 1, :, 1])
        out[:, k + 1] = x
    return PathSet(part, out, seed, p, start)


def iter_paths(p: Peacock, part: Partition, n: int, seed: int, chunk: int = 1000) -> Iterator[PathSet]:
    """Sample paths in blocks of ``chunk``; every path depends only on (seed, its index)."""
    if n < 0:
        raise DomainError("path count must be non-negative")
    kernels = _kernels(p, part)
    for start in range(0, n, chunk):
        yield _sample_block(p, part, kernels, seed, start, min(n, start + chunk))


def sample_paths(p: Peacock, part: Partition, n: int, seed: int, chunk: int = 1000) -> PathSet:
    blocks = list(iter_paths(p, part, n, seed, chunk))
    if not blocks:
        return PathSet(part, np.zeros((0, part.steps + 1)), seed, p)
    states = None
    if blocks[0].states is not None:
        states = np.concatenate([b.states for b in blocks])
    return PathSet(part, np.concatenate([b.paths for b in blocks]), seed, p, 0, states)


@dataclass
class JumpStats:
    counts: np.ndarray
    jump_times: list[np.ndarray] = field(default_factory=list)
    down_jumps: int = 0

    @property
    def mean_jumps(self) -> float:
        return float(self.counts.mean()) if self.counts.size else 0.0

    @property
    def down_fraction(self) -> float:
        total = int(self.counts.sum())
        return self.down_jumps / total if total else 0.0

    def merge(self, other: "JumpStats") -> "JumpStats":
        return JumpStats(np.concatenate((self.counts, other.counts)), self.jump_times + other.jump_times,
                         self.down_jumps + other.down_jumps)


def _jump_mask(ps: PathSet) -> tuple[np.ndarray, np.ndarray]:
    """(jumped, went_down) per path and step.

    Finite scenarios jump when the trajectory index changes; otherwise a jump
    is a departure from the deterministic continuation.
    """
    times = ps.times
    x = ps.paths
    if ps.states is not None:
        jumped = ps.states[:, 1:] != ps.states[:, :-1]
        stay = np.stack([ps.peacock.states(float(t))[0][ps.states[:, k]] for k, t in enumerate(times[1:])], axis=1)
        return jumped, jumped & (x[:, 1:] < stay)
    cont = ps.peacock.continuation if ps.peacock is not None else (lambda s, t, v: v)
    jumped = np.zeros((x.shape[0], x.shape[1] - 1), dtype=bool)
    for k in range(x.shape[1] - 1):
        expect = cont(float(times[k]), float(times[k + 1]), x[:, k])
        thresh = 10 * np.finfo(float).eps * np.maximum(1.0, np.maximum(np.abs(expect), np.abs(x[:, k + 1])))
        jumped[:, k] = np.abs(x[:, k + 1] - expect) > thresh
    down = jumped & (np.diff(x, axis=1) < 0)
    return jumped, down


def jump_statistics(ps: PathSet) -> JumpStats:
    """Per-path jump counts and times; a jump leaves the deterministic continuation."""
    jumped, down = _jump_mask(ps)
    times = ps.times
    return JumpStats(jumped.sum(axis=1), [times[1:][row] for row in jumped], int(down.sum()))


def uniform_limit_path(t, start: float, x0: float | None = None):
    """Flow line of the uniform-exponential limit: e^{2t}/2 - e^{S + t}, or through x0 at time 0."""
    t = np.asarray(t, dtype=float)
    if x0 is not None:
        return np.exp(2 * t) / 2 - (0.5 - x0) * np.exp(t)
    return np.exp(2 * t) / 2 - np.exp(start + t)


def euler_excess(ps: PathSet, lipschitz: float = 1.0, local: float = 2 * math.e ** 2,
                 speed: float = math.e ** 2) -> float:
    """Largest (deviation - bound) over all inter-jump stretches of uniform-exponential paths.

    Each stretch starting at time S is compared with the flow line through
    the limit curve started at S; the bound is (d0 + local h) e^{L (t - S)} + speed h
    with d0 the landing error and h the mesh.  A non-positive value means
    every sampled point lies within the bound.
    """
    jumped, _ = _jump_mask(ps)
    times = ps.times
    h = ps.partition.mesh
    worst = -math.inf
    for row, jrow in zip(ps.paths, jumped):
        starts = np.concatenate(([0], np.flatnonzero(jrow) + 1))
        ends = np.concatenate((starts[1:], [row.size]))
        for i0, i1 in zip(starts, ends):
            S = times[i0]
            t = times[i0:i1]
            if i0 == 0:
                curve = uniform_limit_path(t, 0.0, x0=row[0])
                d0 = 0.0
            else:
                curve = uniform_limit_path(t, S)
                d0 = abs(row[i0] - curve[0])
            bound = (d0 + local * h) * np.exp(lipschitz * (t - S)) + speed * h
            worst = max(worst, float(np.max(np.abs(row[i0:i1] - curve) - bound)))
    return worst
