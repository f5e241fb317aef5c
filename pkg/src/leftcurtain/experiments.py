"""Pinned-seed experiments behind ``leftcurtain reproduce`` and the acceptance tests.

Each runner returns an :class:`Outcome` with raw metrics and the thresholds
they are judged against, so callers can print or assert on them.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .curtain import (
    check_left_monotone,
    curtain_atomic,
    curtain_general,
    curtain_uniform_kernel,
    enumerate_vertices,
    martingale_cost,
    support_distance_lb,
    z_distance,
)
from .measures import Measure, combine, moments, restrict_quantile, wasserstein
from .orders import leq_convex, leq_plus, leq_sto
from .peacock import (
    FiniteCurves,
    Partition,
    Stocking,
    ThreePoint,
    UniformExp,
    chain_compose,
    euler_excess,
    integrate_semigroup,
    iter_paths,
    jump_statistics,
    markov_defect,
    sample_paths,
    transition,
)
from .shadow import FeasibilityError, shadow_atomic

DEFAULT_SEED = 20240611


@dataclass
class Outcome:
    name: str
    passed: bool
    metrics: dict = field(default_factory=dict)
    thresholds: dict = field(default_factory=dict)
    seconds: float = 0.0

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        shown = ", ".join(f"{k}={_fmt(v)}" for k, v in sorted(self.metrics.items()))
        return f"[{status}] {self.name}: {shown} ({self.seconds:.1f}s)"

    def to_json(self) -> dict:
        return {"name": self.name, "passed": self.passed, "metrics": self.metrics,
                "thresholds": self.thresholds, "seconds": round(self.seconds, 3)}


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


# random instances


def random_target(rng: np.random.Generator) -> Measure:
    """One to three uniform blocks plus up to three atoms on [-2, 4]."""
    terms = []
    for _ in range(rng.integers(1, 4)):
        a = rng.uniform(-2, 2)
        terms.append((1.0, Measure.uniform(a, a + rng.uniform(0.1, 2), rng.uniform(0.2, 1))))
    for _ in range(rng.integers(0, 4)):
        terms.append((1.0, Measure.atom(rng.uniform(-2, 2), rng.uniform(0.05, 0.5))))
    return combine(terms)


def pieces_of(nu: Measure, cuts) -> Measure:
    """Collapse the quantile pieces ]c_{2j}, c_{2j+1}] of nu to their barycenters."""
    xs, ws = [], []
    for s, t in zip(cuts[0::2], cuts[1::2]):
        if t - s < 1e-9:
            continue
        p = restrict_quantile(nu, s, t)
        xs.append(moments(p)[1])
        ws.append(p.mass)
    return Measure.from_atoms(xs, ws)


def random_sub_atoms(rng: np.random.Generator, nu: Measure, n: int) -> Measure:
    """n atoms that fit in nu: barycenters of disjoint random quantile pieces."""
    while True:
        mu = pieces_of(nu, np.sort(rng.uniform(0, nu.mass, 2 * n)))
        if not mu.is_empty:
            return mu


def random_atoms(rng: np.random.Generator, nu: Measure, n: int, mass: float) -> Measure:
    """n atoms of equal mass spread over the support of nu (feasibility not guaranteed)."""
    lo, hi = nu.support
    return Measure.from_atoms(rng.uniform(lo, hi, n), np.full(n, mass / n))


def pad(nu: Measure, mass: float, position: float = -12.0) -> Measure:
    return combine([(1.0, nu), (1.0, Measure.atom(position, mass))])


def jitter(rng: np.random.Generator, mu: Measure, scale: float) -> Measure:
    """Move segment endpoints by small normal steps, keeping masses and quantile order."""
    n = len(mu)
    flat = mu.lo == mu.hi
    d_lo = rng.normal(0, scale, n)
    d_hi = np.where(flat, d_lo, rng.normal(0, scale, n))
    ends = np.maximum.accumulate(np.column_stack((mu.lo + d_lo, mu.hi + d_hi)).ravel()).reshape(n, 2)
    hi = np.where(flat, ends[:, 0], ends[:, 1])
    return Measure(mu.widths, ends[:, 0], hi)


def feasible(mu: Measure, nu: Measure) -> bool:
    try:
        shadow_atomic(mu, nu)
    except FeasibilityError:
        return False
    return True


def curtain_source(nu: Measure, cuts) -> Measure:
    """mu <=C nu: collapse consecutive quantile blocks of all of nu."""
    c = np.concatenate(([0.0], np.asarray(cuts) * nu.mass, [nu.mass]))
    xs, ws = [], []
    for s, t in zip(c[:-1], c[1:]):
        if t - s < 1e-9:
            continue
        p = restrict_quantile(nu, s, t)
        xs.append(moments(p)[1])
        ws.append(p.mass)
    return Measure.from_atoms(xs, ws)


# criteria


def shadow_suite(seed: int = DEFAULT_SEED, count: int = 1000) -> Outcome:
    """Random atomic sources: mass, <=+ and <=C invariants and order independence."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    fails = {"mass": 0, "plus": 0, "convex": 0}
    worst_perm = 0.0
    for i in range(count):
        nu = random_target(rng)
        n = int(rng.integers(1, 9))
        if i % 2 == 0:
            mu = random_sub_atoms(rng, nu, n)
        else:
            nu = pad(nu, nu.mass)
            mu = random_sub_atoms(rng, nu, n)
            mu = Measure.from_atoms(mu.lo + rng.normal(0, 0.05, len(mu)), mu.widths)
            if not feasible(mu, nu):
                mu = random_sub_atoms(rng, nu, n)
        eta, _ = shadow_atomic(mu, nu)
        fails["mass"] += abs(eta.mass - mu.mass) > 1e-12 * max(1.0, mu.mass)
        fails["plus"] += not leq_plus(eta, nu)
        fails["convex"] += not leq_convex(mu, eta)
        perm = rng.permutation(len(mu))
        worst_perm = max(worst_perm, wasserstein(eta, shadow_atomic(mu, nu, order=perm)[0]))
    secs = time.perf_counter() - t0
    ok = sum(fails.values()) == 0 and worst_perm <= 1e-8 and secs < 20
    metrics = {f"{k}_failures": v for k, v in fails.items()}
    metrics.update(instances=count, max_order_w=worst_perm)
    return Outcome("shadow-suite", ok, metrics, {"order_w": 1e-8, "seconds": 20}, secs)


def _sorted_equal_atoms(rng, lo, hi, n, alpha):
    return Measure.from_atoms(np.sort(rng.uniform(lo, hi, n)), np.full(n, alpha))


def monotonicity_suite(seed: int = DEFAULT_SEED, count: int = 1000) -> Outcome:
    """Sources with n equal atoms, mu <=sto mu': their shadows keep the order."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed + 1)
    fails = 0
    done = 0
    while done < count:
        nu = random_target(rng)
        n = int(rng.integers(1, 7))
        alpha = nu.mass / (2 * n)
        nu = pad(nu, nu.mass)
        lo, hi = -2.0, 3.0
        x = np.sort(rng.uniform(lo, hi, n))
        xp = x + rng.exponential(0.3, n)
        mu = Measure.from_atoms(x, np.full(n, alpha))
        mup = Measure.from_atoms(np.sort(xp), np.full(n, alpha))
        if not (feasible(mu, nu) and feasible(mup, nu)):
            continue
        done += 1
        a, _ = shadow_atomic(mu, nu)
        b, _ = shadow_atomic(mup, nu)
        fails += not leq_sto(a, b, tol=1e-9)
    secs = time.perf_counter() - t0
    return Outcome("shadow-monotonicity", fails == 0, {"instances": count, "failures": fails},
                   {"quantile_tol": 1e-9}, secs)


def _joint_instance(rng, move_mu: bool, move_nu: bool):
    while True:
        base = random_target(rng)
        nu = pad(base, base.mass)
        nup = pad(jitter(rng, base, 0.1), base.mass) if move_nu else nu
        n = int(rng.integers(1, 7))
        mu = random_sub_atoms(rng, nu, n)
        if move_mu:
            mup = Measure.from_atoms(mu.lo + rng.normal(0, 0.2, len(mu)), mu.widths)
        else:
            mup = mu
        if feasible(mu, nu) and feasible(mup, nup):
            return mu, mup, nu, nup


def lipschitz_suite(seed: int = DEFAULT_SEED, count: int = 1000, each: int = 500) -> Outcome:
    """W(S(mu), S'(mu')) against W(mu, mu') + 2 W(nu, nu'), jointly and per argument."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed + 2)
    slack = {"joint": math.inf, "source_only": math.inf, "target_only": math.inf}
    plan = (("joint", True, True, count), ("source_only", True, False, each), ("target_only", False, True, each))
    for key, mm, mn, k in plan:
        for _ in range(k):
            mu, mup, nu, nup = _joint_instance(rng, mm, mn)
            lhs = wasserstein(shadow_atomic(mu, nu)[0], shadow_atomic(mup, nup)[0])
            rhs = (wasserstein(mu, mup) if mm else 0.0) + (2 * wasserstein(nu, nup) if mn else 0.0)
            slack[key] = min(slack[key], rhs - lhs)
    secs = time.perf_counter() - t0
    ok = all(v >= -1e-8 for v in slack.values())
    metrics = {f"min_slack_{k}": v for k, v in slack.items()}
    metrics.update(joint=count, per_argument=each)
    return Outcome("shadow-lipschitz", ok, metrics, {"slack": -1e-8}, secs)


def curtain_lipschitz_suite(seed: int = DEFAULT_SEED, count: int = 300) -> Outcome:
    """Z(Curt(mu, nu), Curt(mu', nu')) against W(mu, mu') + 2 W(nu, nu')."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed + 3)
    worst = math.inf
    for _ in range(count):
        nu = random_target(rng)
        nup = jitter(rng, nu, 0.05)
        cuts = np.sort(rng.uniform(0, 1, rng.integers(0, 7)))
        mu = curtain_source(nu, cuts)
        mup = curtain_source(nup, np.sort(np.clip(cuts + rng.normal(0, 0.02, cuts.size), 0, 1)))
        z = z_distance(curtain_atomic(mu, nu), curtain_atomic(mup, nup))
        worst = min(worst, wasserstein(mu, mup) + 2 * wasserstein(nu, nup) - z)
    secs = time.perf_counter() - t0
    return Outcome("curtain-lipschitz", worst >= -1e-8, {"instances": count, "min_slack": worst},
                   {"slack": -1e-8}, secs)


def random_martingale_instance(rng: np.random.Generator, n: int):
    """Atomic mu <=C nu with n atoms each, built from a random positive coupling."""
    y = np.sort(rng.uniform(-2, 2, n))
    m = rng.uniform(0.05, 1, (n, n))
    a, b = m.sum(axis=1), m.sum(axis=0)
    x = m @ y / a
    return Measure.from_atoms(x, a), Measure.from_atoms(y, b)


def optimality_suite(seed: int = DEFAULT_SEED, n3: int = 200, n4: int = 50) -> Outcome:
    """Curtain coupling against the cost minimiser over all vertices of the martingale polytope."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed + 4)
    mismatch = not_monotone = 0
    worst = 0.0
    for n, k in ((3, n3), (4, n4)):
        for _ in range(k):
            mu, nu = random_martingale_instance(rng, n)
            fc = curtain_atomic(mu, nu).to_finite()
            verts = enumerate_vertices(mu, nu)
            best = min(verts, key=lambda v: martingale_cost(v)[1])
            same = best.m.shape == fc.m.shape and np.allclose(best.xs, fc.xs) and np.allclose(best.ys, fc.ys)
            diff = float(np.max(np.abs(best.m - fc.m))) if same else math.inf
            worst = max(worst, diff)
            mismatch += diff > 1e-9
            not_monotone += not check_left_monotone(fc)[0]
    secs = time.perf_counter() - t0
    ok = mismatch == 0 and not_monotone == 0 and secs < 60
    return Outcome("curtain-optimality", ok,
                   {"instances": n3 + n4, "mismatches": mismatch, "not_monotone": not_monotone, "max_entry_diff": worst},
                   {"entry": 1e-9, "seconds": 60}, secs)


def wass_plouf_pair(n: int, eps: float):
    mu = Measure.from_atoms(np.arange(n, dtype=float))
    nu = Measure.uniform(-0.5, n - 0.5)
    mup = Measure.from_atoms(np.concatenate(([eps], np.arange(1, n, dtype=float))))
    nup = Measure.uniform(-0.5 + eps / n, n - 0.5 + eps / n)
    return mu, nu, mup, nup


def wass_plouf(ns=(4, 8, 16, 32), eps: float = 1e-3) -> Outcome:
    """Couplings at marginal distance eps whose planar distance grows like log(n) eps."""
    t0 = time.perf_counter()
    ok = True
    metrics = {}
    for n in ns:
        mu, nu, mup, nup = wass_plouf_pair(n, eps)
        wm, wn = wasserstein(mu, mup), wasserstein(nu, nup)
        lb = support_distance_lb(curtain_atomic(mu, nu), curtain_atomic(mup, nup))
        harmonic = sum(1 / (2 * k) for k in range(2, n + 1))
        ok &= abs(wm - eps) <= 1e-12 and abs(wn - eps) <= 1e-12 and lb / eps >= harmonic - 1e-6
        metrics[f"n{n}_lb_over_eps"] = lb / eps
        metrics[f"n{n}_harmonic"] = harmonic
        metrics[f"n{n}_w_error"] = max(abs(wm - eps), abs(wn - eps))
    return Outcome("wass-plouf", bool(ok), metrics, {"w": 1e-12, "lb": -1e-6}, time.perf_counter() - t0)


def uniform_kernel_check(a: float = 0.3, k: int = 10) -> Outcome:
    """Atomized curtain of the uniform laws against the two-branch closed form."""
    t0 = time.perf_counter()
    pi = curtain_general(Measure.uniform(0.0, 1.0, 1.0), Measure.uniform(-a, 1 + a, 1.0), k)
    kern = curtain_uniform_kernel(a)
    mass_err = pos_err = 0.0
    one_sided = 0
    for x, w, tgt in pi.sources:
        # the down branch lives on [-a, 0] and the up branch on [0, 1 + a]; split pieces at 0
        lo, hi, wd = np.asarray(tgt.lo), np.asarray(tgt.hi), np.asarray(tgt.widths)
        span = hi - lo
        frac = np.where(span > 0, np.clip(-lo / np.where(span > 0, span, 1.0), 0.0, 1.0), (lo < 0).astype(float))
        m_dn, m_up = wd * frac, wd * (1.0 - frac)
        mid_dn = (lo + np.minimum(hi, 0.0)) / 2
        mid_up = (np.maximum(lo, 0.0) + hi) / 2
        mass_err = max(mass_err, abs(float(m_dn.sum()) / w - kern.p_down))
        if m_dn.sum() <= 0 or m_up.sum() <= 0:
            one_sided += 1
            continue
        lo_pos = float(np.dot(m_dn, mid_dn) / m_dn.sum())
        hi_pos = float(np.dot(m_up, mid_up) / m_up.sum())
        pos_err = max(pos_err, abs(lo_pos - float(kern.down(x))), abs(hi_pos - float(kern.up(x))))
    ok = mass_err <= 2e-3 and pos_err <= 5e-3
    return Outcome("uniform-kernel", ok, {"p_down": kern.p_down, "max_down_mass_error": mass_err,
                                          "max_branch_error": pos_err, "one_sided_atoms": one_sided},
                   {"mass": 2e-3, "position": 5e-3},
                   time.perf_counter() - t0)


def uniform_poisson(seed: int = DEFAULT_SEED, paths: int = 10_000, log2_mesh: int = 12) -> Outcome:
    """Curtain chain of the uniform-exponential peacock: Bernoulli jumps and Euler-tracked flow."""
    t0 = time.perf_counter()
    p = UniformExp()
    part = Partition.uniform(2.0 ** -log2_mesh)
    times = part.times
    kernel_err = max(abs(transition(p, float(s), float(t))[0].p_down - (-math.expm1(-2 * (t - s)) / 2))
                     for s, t in zip(times[:-1], times[1:]))
    stats = None
    excess = -math.inf
    for ps in iter_paths(p, part, paths, seed):
        js = jump_statistics(ps)
        stats = js if stats is None else stats.merge(js)
        excess = max(excess, euler_excess(ps))
    secs = time.perf_counter() - t0
    ok = kernel_err <= 1e-12 and 0.94 <= stats.mean_jumps <= 1.06 and excess <= 0 and secs < 120
    return Outcome("uniform-poisson", ok,
                   {"kernel_error": kernel_err, "mean_jumps": stats.mean_jumps, "down_fraction": stats.down_fraction,
                    "euler_excess": excess, "paths": paths},
                   {"kernel": 1e-12, "mean_jumps": [0.94, 1.06], "euler_excess": 0.0, "seconds": 120}, secs)


def smooth_three_curves() -> FiniteCurves:
    """Three non-crossing polynomial curves with constant weights and mean."""
    return FiniteCurves([[-1.0, -1.0], [0.0, 0.0, -0.375], [1.0, 1.0, 0.5]], [[0.3], [0.4], [0.3]])


def finite_convergence(meshes=(1e-1, 5e-2, 2.5e-2, 1.25e-2, 6.25e-3)) -> Outcome:
    """Composed curtain matrices against the integrated semigroup, first-order decay."""
    t0 = time.perf_counter()
    p = smooth_three_curves()
    errs = []
    for m in meshes:
        c = chain_compose(p, Partition.uniform(m)).m
        a = integrate_semigroup(p, 0.0, 1.0, m / 4).m
        errs.append(float(np.max(np.abs(c - a).sum(axis=1))))
    ratios = [errs[i] / errs[i + 1] for i in range(len(errs) - 1)]
    ok = all(1.5 <= r <= 2.8 for r in ratios) and errs[3] <= 0.05
    metrics = {f"e_{m:g}": e for m, e in zip(meshes, errs)}
    metrics.update({f"ratio_{i}": r for i, r in enumerate(ratios)})
    return Outcome("finite-convergence", ok, metrics, {"ratio": [1.5, 2.8], "e_0.0125": 0.05},
                   time.perf_counter() - t0)


PERMUTATION = np.array([[1.0, 0, 0], [0, 0, 1], [0, 1, 0]])
MIXING = np.array([[1.0, 0, 0], [0, 0.5, 0.5], [0, 0.5, 0.5]])


def threepoint(h: float = 1e-3) -> Outcome:
    """One step across the meeting time permutes the trajectories; two steps mix them."""
    t0 = time.perf_counter()
    p = ThreePoint()
    one = transition(p, 1 - h, 1 + h)[1].m
    two = transition(p, 1 - h, 1.0)[1].m @ transition(p, 1.0, 1 + h)[1].m
    e1 = float(np.max(np.abs(one - PERMUTATION)))
    e2 = float(np.max(np.abs(two - MIXING)))
    d1, d7 = markov_defect(p, 1.0, h), markov_defect(p, 0.7, h)
    ok = e1 <= 5e-3 and e2 <= 5e-3 and d1 >= 0.8 and d7 <= 0.05
    return Outcome("threepoint", ok, {"one_step_error": e1, "two_step_error": e2, "defect_at_1": d1,
                                      "defect_at_0.7": d7},
                   {"matrix": 5e-3, "defect_at_1": 0.8, "defect_at_0.7": 0.05}, time.perf_counter() - t0)


def absorption_violations(paths: np.ndarray, barrier: float) -> int:
    """Number of paths that move after first reaching ]-inf, barrier]."""
    bad = 0
    for row in paths:
        hit = np.flatnonzero(row <= barrier)
        if hit.size and np.any(row[hit[0]:] != row[hit[0]]):
            bad += 1
    return bad


def stocking(seed: int = DEFAULT_SEED, paths: int = 1000, log2_mesh: int = 10) -> Outcome:
    """Sampled stocking paths never move once they are below the barrier."""
    t0 = time.perf_counter()
    p = Stocking(level=log2_mesh)
    ps = sample_paths(p, Partition.uniform(2.0 ** -log2_mesh), paths, seed)
    bad = absorption_violations(ps.paths, p.barrier)
    absorbed = float(np.mean(ps.paths[:, -1] <= p.barrier))
    return Outcome("stocking", bad == 0, {"violations": bad, "paths": paths, "absorbed_fraction": absorbed,
                                          "absorbed_limit": 1 - math.exp(-1)},
                   {"violations": 0}, time.perf_counter() - t0)


CRITERIA = {
    1: shadow_suite,
    2: monotonicity_suite,
    3: lipschitz_suite,
    4: curtain_lipschitz_suite,
    5: optimality_suite,
    6: wass_plouf,
    7: uniform_kernel_check,
    8: uniform_poisson,
    9: finite_convergence,
    10: threepoint,
    11: stocking,
}

FIXTURES = {
    "wass-plouf": (6,),
    "uniform-poisson": (7, 8),
    "threepoint": (9, 10),
    "stocking": (11,),
    "lips-suite": (1, 2, 3, 4, 5),
}
