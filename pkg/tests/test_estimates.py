import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from homflow.engine import ForcingTerm, tv_backend
from homflow.estimates import (
    InequalityReport,
    check_complete_contraction,
    check_contraction,
    check_forced_decay,
    check_global_decay,
    check_mass_estimates,
    check_order_preservation,
    check_perturbed_decay,
    check_pointwise_bound,
    check_resolvent_homogeneity,
    check_semigroup_homogeneity,
    check_smoothing_exponent,
    fit_log_slope,
    flow_pair,
    k_grid,
    level_excess,
    semigroup_homogeneity_defect,
)
from homflow.exceptions import ConfigurationError, PreconditionError
from homflow.grid import Domain
from homflow.nemytskii import linear_map, saturating_map

REPORT_KEYS = {"name", "lhs", "rhs", "margin", "pass", "slack_budget", "context"}


@given(st.floats(-1e6, 1e6), st.floats(-1e6, 1e6), st.floats(0, 1e3))
def test_report_invariants(lhs, rhs, slack):
    r = InequalityReport("x", lhs, rhs, slack)
    d = r.to_dict()
    assert set(d) == REPORT_KEYS
    assert d["margin"] == rhs - lhs
    assert d["pass"] == (lhs <= rhs + slack)
    assert r.gating


def test_report_rejects_nan():
    with pytest.raises(ConfigurationError):
        InequalityReport("x", np.nan, 0.0, 0.0)


def test_informational_flag():
    assert not InequalityReport("x", 0, 0, 0, {"gating": False}).gating


def test_resolvent_homogeneity(tv300, indicator300):
    for lam in (0.25, 0.5, 2.0, 4.0, 3.0):
        r = check_resolvent_homogeneity(tv300, indicator300, 0.02, lam)
        assert r.passed, r.to_dict()
    with pytest.raises(PreconditionError):
        check_resolvent_homogeneity(tv300, indicator300, 0.02, 0.0)


def test_semigroup_homogeneity(tv300, indicator300):
    r = check_semigroup_homogeneity(tv300, indicator300, 0.05, 2.0, n=512)
    assert r.passed and r.lhs == 0.0
    assert semigroup_homogeneity_defect(tv300, indicator300, 0.05, 3.0, 512) <= 1e-12


@pytest.mark.parametrize("p", [1, 2, np.inf])
def test_global_decay_forms(tv300, indicator300, p):
    states = flow_pair(tv300, indicator300, 0.05, 0.005, 1024)
    for form in ("finite_h", "quotient"):
        r = check_global_decay(tv300, indicator300, 0.05, 0.005, p, form=form, states=states)
        assert r.passed and r.margin > 0


def test_global_decay_catches_corruption(tv300, indicator300):
    a, b = flow_pair(tv300, indicator300, 0.05, 0.005, 256)
    bad = b.with_values(b.values + np.where(np.arange(300) == 0, 1.0, 0.0) * 300)
    assert not check_global_decay(tv300, indicator300, 0.05, 0.005, states=(a, bad)).passed


def test_decay_preconditions(tv300, indicator300):
    with pytest.raises(PreconditionError):
        check_global_decay(tv300, indicator300, 0.05, 0.01)
    with pytest.raises(PreconditionError):
        check_global_decay(tv300, indicator300, 0.0, 0.0)
    with pytest.raises(ConfigurationError):
        check_global_decay(tv300, indicator300, 0.05, 0.005, form="other")


def test_pointwise_bound_saturates(tv300, indicator300):
    t, h = 0.05, 0.005
    r = check_pointwise_bound(tv300, indicator300, t, h, n=1024)
    assert r.passed
    assert abs(r.context["tightest"]) <= 1e-3 * 1.0 / t
    with pytest.raises(PreconditionError):
        check_pointwise_bound(tv300, indicator300.scale(-1.0), t, h)


def test_mass_estimates(tv300, indicator300):
    reps = check_mass_estimates(tv300, indicator300, 0.05, 0.005, n=1024)
    assert [r.name for r in reps] == ["mass_conservation", "mass_change_bound", "mass_change_balance"]
    assert all(r.passed for r in reps)
    dir_op = tv_backend(Domain.interval(1.0, 30, "dirichlet_zero"))
    with pytest.raises(PreconditionError):
        check_mass_estimates(dir_op, Domain.interval(1.0, 30, "dirichlet_zero").constant(1.0), 0.05, 0.005)


def test_contraction_family(tv300, line300, rng):
    u0 = line300.grid_function(rng.uniform(0, 1, 300))
    v0 = line300.grid_function(u0.values + rng.uniform(0, 0.5, 300))
    for p in (1, 2, np.inf):
        assert check_contraction(tv300, u0, v0, 0.03, p, n=128).passed
    assert check_complete_contraction(tv300, u0, v0, 0.03, n=128).passed
    assert check_order_preservation(tv300, u0, v0, 0.03, n=128).passed
    with pytest.raises(PreconditionError):
        check_order_preservation(tv300, v0, u0, 0.03, n=128)


def test_level_grid():
    ks = k_grid(2.0)
    assert ks.size == 32 and ks[0] == 0.0 and ks[-1] == 2.0
    assert k_grid(0.0).tolist() == [0.0]
    w = np.ones(3)
    assert level_excess(np.array([0.5, 0, 0]), np.array([1.0, 0, 0]), w, ks) <= 0
    assert level_excess(np.array([2.0, 0, 0]), np.array([1.0, 0, 0]), w, ks) > 0


def test_perturbed_decay(tv300, indicator300):
    F = saturating_map(0.5)
    r = check_perturbed_decay(tv300, F, indicator300, 0.05, 0.005, n=512)
    assert r.passed and r.context["gronwall"] > 2.0
    assert check_perturbed_decay(tv300, linear_map(0.5), indicator300, 0.05, 0.005, n=512).passed


def test_forced_decay(tv300, line300, indicator300):
    T = 0.1
    times = np.linspace(0, T, 5)
    vals = [line300.constant(0.5 * np.sin(10 * s)) for s in times]
    ders = [line300.constant(5.0 * np.cos(10 * s)) for s in times]
    f = ForcingTerm.sampled(times, vals, ders)
    r = check_forced_decay(tv300, indicator300, f, 0.05, 0.005, n=400)
    assert r.passed
    with pytest.raises(PreconditionError):
        check_forced_decay(tv300, indicator300, ForcingTerm.constant(line300.zeros(), T), 0.05, 0.005)


def test_log_slope_fitter_recovers_power():
    t = np.logspace(-3, -1, 12)
    assert fit_log_slope(t, 3.0 * t ** -2.0) == pytest.approx(-2.0, abs=1e-6)
    with pytest.raises(ConfigurationError):
        fit_log_slope([1.0], [1.0])


def test_smoothing_report_is_informational(frac8):
    d = frac8.domain
    u0 = d.grid_function(np.sin(np.pi * d.centers()[:, 0]))
    r = check_smoothing_exponent(frac8, u0, np.logspace(-3, -2, 8), 0.5, n=16)
    assert not r.gating
    assert "quotient_slope" in r.context
    z = check_smoothing_exponent(frac8, d.zeros(), np.logspace(-3, -2, 8), 0.5, n=16)
    assert "skipped" in z.context
    with pytest.raises(PreconditionError):
        check_smoothing_exponent(frac8, u0, [0.1, 0.2], 0.5)
