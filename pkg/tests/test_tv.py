import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from homflow.exceptions import ConfigurationError, SolverError
from homflow.grid import Domain, ResolventTolerance
from homflow.oracles import chain_weights, dense_resolvent_oracle
from homflow.tv import TVSpec, prox_tv_chain, tv_resolvent, tv_resolvent_1d, tv_resolvent_2d, tv_seminorm

from conftest import THIRD, TWO_THIRDS

values = arrays(np.float64, st.integers(1, 40), elements=st.floats(-5, 5))
mus = st.floats(1e-4, 2.0)


def test_constant_is_fixed():
    d = Domain.interval(1.0, 50)
    u = tv_resolvent_1d(TVSpec(d), d.constant(2.5), 0.3)
    assert np.all(u.values == 2.5)


@pytest.mark.parametrize("bc", ["neumann", "dirichlet_zero"])
def test_zero_is_fixed(bc):
    d = Domain.interval(1.0, 20, bc)
    assert np.all(tv_resolvent_1d(TVSpec(d), d.zeros(), 0.1).values == 0)


def test_indicator_plateaus(line300, indicator300):
    # dense oracle at 30 cells gives plateau values 1 - 6 mu and 3 mu for mu < 1/9
    u = tv_resolvent_1d(TVSpec(line300), indicator300, 0.01)
    inner = u.values[100:200]
    outer = np.concatenate([u.values[:100], u.values[200:]])
    np.testing.assert_allclose(inner, 0.94, atol=1e-12)
    np.testing.assert_allclose(outer, 0.03, atol=1e-12)
    assert u.mass() == pytest.approx(1 / 3, abs=1e-14)


def test_mu_must_be_positive(line300, indicator300):
    with pytest.raises(ConfigurationError):
        tv_resolvent_1d(TVSpec(line300), indicator300, 0.0)


def test_wrong_domain_rejected(indicator300):
    with pytest.raises(ConfigurationError):
        tv_resolvent_1d(TVSpec(Domain.interval(1.0, 299)), indicator300, 0.1)


def test_seminorm_examples():
    d = Domain.interval(1.0, 300)
    spec = TVSpec(d)
    assert tv_seminorm(spec, d.constant(3.0)) == 0
    assert tv_seminorm(spec, d.indicator(THIRD, TWO_THIRDS)) == 2.0
    dd = Domain.interval(1.0, 10, "dirichlet_zero")
    assert tv_seminorm(TVSpec(dd), dd.constant(1.0)) == 2.0


def _objective(spec, v, u, mu):
    return 0.5 * float(np.dot(v.cell_measure, (u.values - v.values) ** 2)) + mu * tv_seminorm(spec, u)


@given(values, mus, st.sampled_from(["neumann", "dirichlet_zero"]))
def test_1d_matches_dense_oracle(vals, mu, bc):
    d = Domain.interval(1.0, vals.size, bc)
    v = d.grid_function(vals)
    u = tv_resolvent_1d(TVSpec(d), v, mu)
    ref = dense_resolvent_oracle(chain_weights(d), v, mu, d.cell_measure())
    assert np.abs(u.values - ref).max() <= 1e-10 * max(1.0, np.abs(vals).max())


@given(values, mus)
def test_neumann_mean_preserved(vals, mu):
    d = Domain.interval(1.0, vals.size)
    v = d.grid_function(vals)
    assert tv_resolvent_1d(TVSpec(d), v, mu).mean() == pytest.approx(v.mean(), abs=1e-12 * (1 + np.abs(vals).max()))


@given(values, mus, st.sampled_from([0.25, 4.0]))
def test_resolvent_homogeneity_1d(vals, mu, lam):
    d = Domain.interval(1.0, vals.size)
    spec = TVSpec(d)
    v = d.grid_function(vals)
    a = tv_resolvent_1d(spec, v, lam * mu).values / lam
    b = tv_resolvent_1d(spec, v.with_values(vals / lam), mu).values
    assert np.abs(a - b).max() <= 1e-12 * max(1.0, np.abs(vals).max())


@given(values, values, mus, st.sampled_from(["neumann", "dirichlet_zero"]))
def test_nonexpansive_and_ordered(a, b, mu, bc):
    n = min(a.size, b.size)
    a, b = a[:n], b[:n]
    d = Domain.interval(1.0, n, bc)
    spec = TVSpec(d)
    ua = tv_resolvent_1d(spec, d.grid_function(a), mu).values
    ub = tv_resolvent_1d(spec, d.grid_function(b), mu).values
    w = d.cell_measure()
    for p in (1, 2):
        assert np.sum(w * np.abs(ua - ub) ** p) ** (1 / p) <= np.sum(w * np.abs(a - b) ** p) ** (1 / p) + 1e-10
    assert np.abs(ua - ub).max() <= np.abs(a - b).max() + 1e-10
    hi = np.maximum(a, b)
    uh = tv_resolvent_1d(spec, d.grid_function(hi), mu).values
    assert np.all(ua <= uh + 1e-10)


@given(values, values, mus)
def test_level_set_inequality(a, b, mu):
    n = min(a.size, b.size)
    a, b = a[:n], b[:n]
    d = Domain.interval(1.0, n)
    spec = TVSpec(d)
    da = tv_resolvent_1d(spec, d.grid_function(a), mu).values - tv_resolvent_1d(spec, d.grid_function(b), mu).values
    d0 = a - b
    w = d.cell_measure()
    for k in np.linspace(0, np.abs(d0).max(), 32):
        assert np.dot(w, np.maximum(da - k, 0)) <= np.dot(w, np.maximum(d0 - k, 0)) + 1e-10
        assert np.dot(w, np.maximum(-da - k, 0)) <= np.dot(w, np.maximum(-d0 - k, 0)) + 1e-10


def test_chain_rejects_size_mismatch():
    with pytest.raises(ConfigurationError):
        prox_tv_chain(np.zeros(3), np.ones(3), np.ones(3))


# --------------------------------------------------------------------------
# 2D


def test_2d_constant():
    d = Domain.square(1.0, 8)
    u = tv_resolvent_2d(TVSpec(d), d.constant(1.7), 0.1)
    np.testing.assert_allclose(u.values, 1.7, atol=1e-10)


@pytest.mark.parametrize("bc", ["neumann", "dirichlet_zero"])
def test_2d_symmetry(bc, rng):
    d = Domain.square(1.0, 8, bc)
    a = rng.normal(size=(8, 8))
    v = d.grid_function(a + a.T)
    u = tv_resolvent_2d(TVSpec(d), v, 0.05).values.reshape(8, 8)
    assert np.abs(u - u.T).max() <= 1e-8


@pytest.mark.parametrize("bc", ["neumann", "dirichlet_zero"])
def test_2d_matches_dense_oracle(bc):
    d = Domain.square(1.0, 8, bc)
    v = d.box_indicator([0.25, 0.25], [0.75, 0.75])
    tol = ResolventTolerance(rel_gap=1e-8)
    u, z, info = tv_resolvent_2d(TVSpec(d), v, 0.05, tol, return_info=True)
    ref = dense_resolvent_oracle(chain_weights(d), v, 0.05, d.cell_measure())
    assert np.abs(u.values - ref).max() <= 10 * tol.rel_gap * v.norm(np.inf)
    assert info.gap <= tol.rel_gap
    assert all(np.abs(za).max() <= 1.0 for za in z.z)


def test_2d_neumann_mean(rng):
    d = Domain.square(1.0, 8)
    v = d.grid_function(rng.uniform(size=64))
    u, _ = tv_resolvent(TVSpec(d), v, 0.05, ResolventTolerance(rel_gap=1e-10))
    assert u.mean() == pytest.approx(v.mean(), abs=1e-12)


def test_2d_iteration_cap_raises():
    d = Domain.square(1.0, 8)
    v = d.box_indicator([0.25, 0.25], [0.75, 0.75])
    with pytest.raises(SolverError) as exc:
        tv_resolvent_2d(TVSpec(d), v, 0.05, ResolventTolerance(rel_gap=1e-14, max_iters=5))
    assert exc.value.gap is not None and exc.value.iterations == 5


def test_dual_step_bound():
    with pytest.raises(ConfigurationError):
        TVSpec(Domain.square(1.0, 4), dual_step=0.25)
