"""Acceptance criteria 1-10, each at its stated tolerance.

Every test records one ``criterion``/``detail`` pair; the terminal summary
prints one PASS/FAIL line per criterion.
"""

import time

import numpy as np
import pytest

from homflow.engine import (
    ForcingTerm,
    RefinePolicy,
    evolve,
    fractional_backend,
    gronwall_constant,
    resolvent_iterate,
    tv_backend,
)
from homflow.estimates import (
    check_forced_decay,
    check_mass_estimates,
    check_perturbed_decay,
    check_pointwise_bound,
    check_smoothing_exponent,
    fit_log_slope,
    flow_pair,
    k_grid,
    level_excess,
    pointwise_excess,
    semigroup_homogeneity_defect,
)
from homflow.grid import Domain, ResolventTolerance, lp_norm
from homflow.nemytskii import linear_map
from homflow.oracles import (
    PlateauState,
    chain_weights,
    dense_resolvent_oracle,
    plateau_extinction_time,
    plateau_ode_oracle,
)
from homflow.fractional import FractionalSpec
from homflow.tv import TVSpec, tv_resolvent_1d

from conftest import THIRD, TWO_THIRDS

REL_GAP = 1e-8
TOL = ResolventTolerance(rel_gap=REL_GAP)


@pytest.fixture
def record(record_property):
    def _rec(k, detail):
        record_property("criterion", k)
        record_property("detail", detail)
        print(f"criterion {k}: {detail}")

    return _rec


def _random_nonneg(rng, dom):
    """Piecewise-constant nonnegative data with a few random jumps plus noise."""
    n = dom.size
    cuts = np.sort(rng.choice(np.arange(1, n), size=min(4, n - 1), replace=False))
    vals = np.zeros(n)
    for a, b in zip(np.r_[0, cuts], np.r_[cuts, n]):
        vals[a:b] = rng.uniform(0, 1)
    return dom.grid_function(vals + 0.1 * rng.uniform(0, 1, n))


def test_criterion_01_resolvent_homogeneity(record):
    start = time.perf_counter()
    rng = np.random.default_rng(1)
    d = Domain.interval(1.0, 300)
    op = tv_backend(d)
    worst_tv = 0.0
    for _ in range(50):
        v = d.grid_function(rng.normal(size=300))
        for lam in (0.25, 4.0):
            for mu in (1e-3, 1e-1):
                a = op.resolvent(lam * mu, v)
                b = op.resolvent(mu, v.with_values(v.values / lam))
                worst_tv = max(worst_tv, float(np.abs(a.values / lam - b.values).max()))
    fd = Domain.interval(1.0, 8, "dirichlet_zero")
    fop = fractional_backend(fd, 0.5)
    worst_fr = 0.0
    for _ in range(5):
        v = fd.grid_function(rng.normal(size=8))
        for lam in (0.25, 4.0):
            mu = 0.05
            a = fop.resolvent(lam * mu, v, TOL)
            b = fop.resolvent(mu, v.with_values(v.values / lam), TOL)
            worst_fr = max(worst_fr, float(np.abs(a.values / lam - b.values).max()))
    elapsed = time.perf_counter() - start
    record(1, f"tv defect {worst_tv:.3e} <= 1e-12, fractional defect {worst_fr:.3e} <= {5 * REL_GAP:.0e}, {elapsed:.1f} s < 10 s")
    assert worst_tv <= 1e-12
    assert worst_fr <= 5 * REL_GAP
    assert elapsed < 10


def test_criterion_02_semigroup_homogeneity(record):
    start = time.perf_counter()
    d = Domain.interval(1.0, 300)
    op = tv_backend(d)
    u0 = d.indicator(THIRD, TWO_THIRDS)
    l1 = u0.norm(1)
    floor = 1e-14 * l1
    rows = []
    for lam in (0.5, 2.0):
        for t in (0.02, 0.05):
            d1 = semigroup_homogeneity_defect(op, u0, t, lam, 4096)
            d2 = semigroup_homogeneity_defect(op, u0, t, lam, 8192)
            rows.append((lam, t, d1, d2))
    elapsed = time.perf_counter() - start
    worst = max(r[2] for r in rows)
    # the shared-n discrete flow is exactly homogeneous, so doubling n can only be judged against round-off
    halves = all(r[3] <= max(r[2] / 2, floor) for r in rows)
    record(2, f"max defect {worst:.3e} <= {1e-3 * l1:.3e}, doubling-n ratio ok={halves} (round-off floor {floor:.1e}), {elapsed:.1f} s < 60 s")
    assert worst <= 1e-3 * l1
    assert halves
    assert elapsed < 60


def _decay_violations(op, rng, n, n_data, times, tol):
    worst = -np.inf
    bad = 0
    for _ in range(n_data):
        u0 = _random_nonneg(rng, op.domain)
        for t in times:
            h = t / 100
            a, b = flow_pair(op, u0, t, h, n, tol)
            for p in (1, 2, np.inf):
                lhs = lp_norm(b.values - a.values, u0.cell_measure, p)
                rhs = 2 * (h / t) * u0.norm(p) * (1 + 1e-6)
                worst = max(worst, lhs / rhs)
                bad += lhs > rhs
    return bad, worst


def test_criterion_03_global_decay(record):
    start = time.perf_counter()
    rng = np.random.default_rng(3)
    times = np.logspace(-3, -1, 10)
    tv = tv_backend(Domain.interval(1.0, 200))
    bad_tv, worst_tv = _decay_violations(tv, rng, 1024, 20, times, TOL)
    fr = fractional_backend(Domain.interval(1.0, 16, "dirichlet_zero"), 0.5)
    bad_fr, worst_fr = _decay_violations(fr, rng, 64, 20, times, TOL)
    elapsed = time.perf_counter() - start
    record(3, f"violations tv={bad_tv} fractional={bad_fr} (worst lhs/rhs {worst_tv:.3f}, {worst_fr:.3f}), {elapsed:.1f} s < 300 s")
    assert bad_tv == 0 and bad_fr == 0
    assert elapsed < 300


def test_criterion_04_pointwise_saturation(record):
    d = Domain.interval(1.0, 300)
    op = tv_backend(d)
    u0 = d.indicator(THIRD, TWO_THIRDS)
    outer = (d.centers()[:, 0] < THIRD) | (d.centers()[:, 0] > TWO_THIRDS)
    ok, worst = True, 0.0
    for t in (0.02, 0.05, 0.08):
        states = flow_pair(op, u0, t, t / 100, 4096)
        ok &= check_pointwise_bound(op, u0, t, t / 100, states=states).passed
        gap = float(np.abs(pointwise_excess(op, u0, t, t / 100, states=states)[outer]).max())
        worst = max(worst, gap * t)
    record(4, f"pointwise bound passed={ok}, outer-plateau t*|quotient - u/t| = {worst:.3e} <= 1e-2")
    assert ok and worst <= 1e-2


def test_criterion_05_mass(record):
    d = Domain.interval(1.0, 300)
    op = tv_backend(d)
    u0 = d.indicator(THIRD, TWO_THIRDS)
    target = THIRD * d.volume
    tr = evolve(op, u0, [0.0, 0.02, 0.05, 0.08, 0.1, 0.15, 0.2], RefinePolicy(fixed_n=2048))
    drift = max(abs(s.mass() - target) for s in tr.states)
    worst_bound, worst_balance = -np.inf, 0.0
    ok = True
    for t in tr.grid.times[1:]:
        reps = check_mass_estimates(op, u0, t, t / 100, n=2048)
        ok &= all(r.passed for r in reps)
        worst_bound = max(worst_bound, reps[1].lhs - reps[1].rhs)
        worst_balance = max(worst_balance, reps[2].lhs)
    record(5, f"mass drift {drift:.2e} <= 1e-8, change bound excess {worst_bound:.2e}, |pos - neg| {worst_balance:.2e} <= 1e-8")
    assert drift <= 1e-8 and ok and worst_balance <= 1e-8 and worst_bound <= 1e-8


def test_criterion_06_oracle_equivalence(record):
    d = Domain.interval(1.0, 300)
    op = tv_backend(d)
    u0 = d.indicator(THIRD, TWO_THIRDS)
    p0 = PlateauState.indicator(THIRD, TWO_THIRDS)
    times = np.linspace(0.0, 0.2, 21)
    tr = evolve(op, u0, times, RefinePolicy(fixed_n=4096))
    traj_err = max((s - plateau_ode_oracle(p0, t).cell_average(d)).norm(1) for t, s in zip(times, tr.states))

    # discrete merge time: first step at which the flow becomes constant
    dt = 1e-4
    u, k = u0, 0
    while np.ptp(u.values) > 1e-12 and k < 10000:
        u, k = op.resolvent(dt, u), k + 1
    t_merge = k * dt
    rel_merge = abs(t_merge - 1 / 9) / (1 / 9)
    assert plateau_extinction_time(p0) == pytest.approx(1 / 9, rel=1e-12)

    rng = np.random.default_rng(6)
    d30 = Domain.interval(1.0, 30)
    w30 = chain_weights(d30)
    tv_err = 0.0
    for v in [d30.indicator(THIRD, TWO_THIRDS)] + [d30.grid_function(rng.normal(size=30)) for _ in range(5)]:
        for mu in (0.01, 0.05):
            u_ref = dense_resolvent_oracle(w30, v.values, mu, d30.cell_volume)
            u_eng = tv_resolvent_1d(TVSpec(d30), v, mu)
            tv_err = max(tv_err, float(np.abs(u_eng.values - u_ref).max()))

    spec = FractionalSpec(0.5, Domain.interval(1.0, 8, "dirichlet_zero"), 8)
    fop = fractional_backend(spec.domain, 0.5, 8)
    fr_err = 0.0
    for v in [spec.domain.grid_function(np.linspace(0, 1, 8))] + [spec.domain.grid_function(rng.normal(size=8)) for _ in range(3)]:
        u_ref = dense_resolvent_oracle(spec.weights, v.values, 0.1, spec.domain.cell_measure())
        fr_err = max(fr_err, float(np.abs(fop.resolvent(0.1, v, TOL).values - u_ref).max()))
    record(6, f"plateau L1 {traj_err:.2e} <= 1e-2*|u0|_1, merge at {t_merge:.4f} ({100 * rel_merge:.2f}% off), dense tv {tv_err:.1e} <= 1e-10, dense fractional {fr_err:.1e} <= {10 * REL_GAP:.0e}")
    assert traj_err <= 1e-2 * u0.norm(1)
    assert rel_merge <= 0.02
    assert tv_err <= 1e-10
    assert fr_err <= 10 * REL_GAP


def test_criterion_07_forced_saturation(record):
    d = Domain.interval(1.0, 100)
    op = tv_backend(d)
    T, c = 0.2, 0.7
    f = ForcingTerm.sampled([0.0, T], [d.constant(c)] * 2, [d.zeros()] * 2)
    ratios = []
    for t in (0.02, 0.05, 0.1):
        r = check_forced_decay(op, d.zeros(), f, t, t / 100, n=256)
        ratios.append(r.lhs / r.rhs)
    lo, hi = min(ratios), max(ratios)
    record(7, f"lhs/rhs in [{lo:.10f}, {hi:.10f}] within 1 +- 1e-6")
    assert 1 - 1e-6 <= lo and hi <= 1 + 1e-6


def test_criterion_08_perturbed_decay(record):
    d = Domain.interval(1.0, 100)
    op = tv_backend(d)
    F = linear_map(0.5)
    rng = np.random.default_rng(8)
    bad, total = 0, 0
    for _ in range(10):
        u0 = _random_nonneg(rng, d)
        for t in (0.02, 0.05, 0.1, 0.2):
            for p in (1, 2, np.inf):
                total += 1
                bad += not check_perturbed_decay(op, F, u0, t, t / 100, p, n=512).passed
    exact = all(gronwall_constant(0.0, 1.0, t) == 2.0 for t in (1e-3, 0.1, 1.0, 10.0, 100.0))
    record(8, f"violations {bad}/{total}, gronwall(0, 1, t) == 2 exactly: {exact}")
    assert bad == 0 and exact


def _order_checks(op, rng, pairs, n, slack):
    ks_levels = 32
    worst_cc, worst_op = -np.inf, -np.inf
    dom = op.domain
    for _ in range(pairs):
        u0 = dom.grid_function(rng.uniform(-1, 1, dom.size))
        v0 = dom.grid_function(u0.values + rng.uniform(0, 1, dom.size) * (rng.uniform(size=dom.size) < 0.5))
        d0 = u0.values - v0.values
        ks = k_grid(float(np.abs(d0).max()), ks_levels)
        for t in (0.02, 0.05):
            a = resolvent_iterate(op, u0, t, n, TOL).values
            b = resolvent_iterate(op, v0, t, n, TOL).values
            worst_cc = max(worst_cc, level_excess(a - b, d0, u0.cell_measure, ks))
            worst_op = max(worst_op, float((a - b).max()))
    return worst_cc, worst_op


def test_criterion_09_complete_contraction(record):
    rng = np.random.default_rng(9)
    cases = [
        ("tv-1d", tv_backend(Domain.interval(1.0, 50)), 64, 1e-10),
        ("tv-2d", tv_backend(Domain.square(1.0, 6)), 8, 5 * REL_GAP),
        ("fractional-1d", fractional_backend(Domain.interval(1.0, 8, "dirichlet_zero"), 0.5), 8, 5 * REL_GAP),
    ]
    parts, ok = [], True
    for name, op, n, slack in cases:
        cc, od = _order_checks(op, rng, 100, n, slack)
        ok &= cc <= slack and od <= slack
        detail = f"{name} level {cc:.1e} order {od:.1e} (<= {slack:.0e}"
        if slack != 1e-10:
            detail += f"; {max(cc, od) / REL_GAP:.0f} x rel_gap"
        parts.append(detail + ")")
    record(9, ", ".join(parts))
    assert ok


def test_criterion_10_smoothing_exponent(record):
    d = Domain.interval(1.0, 64, "dirichlet_zero")
    op = fractional_backend(d, 0.5)
    x = d.centers()[:, 0]
    u0 = d.grid_function(np.maximum(0.0, 1 - np.abs(x - 0.5) / 0.15))
    r = check_smoothing_exponent(op, u0, np.logspace(-3, np.log10(0.025), 8), 0.5, n=16)
    t = np.logspace(-3, -1, 12)
    fitted = fit_log_slope(t, 3.0 * t ** -2.0)
    self_test = abs(fitted + 2.0) <= 1e-6
    record(10, f"report produced (non-gating), t*|du/dt|_inf slope {r.context['scaled_quotient_slope']:.3f}, fitter self-test slope {fitted:.9f}")
    assert not r.gating and "scaled_quotient_slope" in r.context
    assert self_test
