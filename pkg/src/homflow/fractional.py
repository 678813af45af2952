"""Fractional Dirichlet 1-Laplacian on a grid with a truncated zero exterior.

The operator is discretized as a weighted graph total variation.  Interior
cells ``i`` interact with every other interior cell and with a collar of
exterior cells (values pinned to 0) through the kernel

    w_ij = m_i m_j / |x_i - x_j|^(d + s),   i != j.

With the collar folded into unary weights ``kappa_i = sum_c w_ic`` the
seminorm reads

    [u] = 1/2 sum_{i != j} w_ij |u_i - u_j|
        = sum_{i<j interior} w_ij |u_i - u_j| + sum_i kappa_i |u_i|,

and the resolvent is ``argmin 1/2 |u - v|_M^2 + mu [u]``.  It is computed with
the accelerated primal-dual iteration of Chambolle and Pock on the stacked
operator ``K u = (w_e (u_i - u_j), kappa_i u_i)`` with dual box ``|p| <= mu``
(i.e. ``p = mu * eta`` with ``|eta| <= 1``), stopped on the relative
duality gap of the dual-derived primal point ``u(p) = v - M^{-1} K^T p``.

Truncating the exterior at a finite collar changes the operator, not its
structure: the truncated operator is still homogeneous of order zero and
completely accretive.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .exceptions import ConfigurationError, SolverError
from .grid import DEFAULT_TOL, Domain, GridFunction, ResolventTolerance, SolveInfo


@dataclass(frozen=True)
class PairwiseWeights:
    """Graph TV data: pair list ``(i, j, w)`` with ``i < j`` plus unary weights."""

    i: np.ndarray
    j: np.ndarray
    w: np.ndarray
    unary: np.ndarray

    @property
    def n(self) -> int:
        return self.unary.size

    def apply(self, u):
        return np.concatenate([self.w * (u[self.i] - u[self.j]), self.unary * u])

    def adjoint(self, p):
        e = self.w.size
        q = p[:e] * self.w
        return np.bincount(self.i, q, self.n) - np.bincount(self.j, q, self.n) + self.unary * p[e:]

    def seminorm(self, u) -> float:
        return float(np.abs(self.w * (u[self.i] - u[self.j])).sum() + np.abs(self.unary * u).sum())

    def gram(self) -> np.ndarray:
        """Dense ``K^T K`` (weighted graph Laplacian plus unary diagonal)."""
        n = self.n
        g = np.zeros((n, n))
        w2 = self.w**2
        np.add.at(g, (self.i, self.i), w2)
        np.add.at(g, (self.j, self.j), w2)
        np.add.at(g, (self.i, self.j), -w2)
        np.add.at(g, (self.j, self.i), -w2)
        g[np.diag_indices(n)] += self.unary**2
        return g


@dataclass(frozen=True)
class FractionalSpec:
    s: float
    domain: Domain
    collar_cells: int | None = None
    pd_safety: float = 0.99

    def __post_init__(self):
        if not (0.0 < self.s < 1.0):
            raise ConfigurationError(f"fractional order s must lie in (0, 1), got {self.s}")
        if self.domain.boundary != "dirichlet_zero":
            raise ConfigurationError("the fractional operator carries the zero exterior condition; use boundary='dirichlet_zero'")
        if self.collar_cells is None:
            object.__setattr__(self, "collar_cells", 2 * max(self.domain.cells))
        if self.collar_cells < 0:
            raise ConfigurationError("collar_cells must be >= 0")
        if not (0 < self.pd_safety < 1):
            raise ConfigurationError("pd_safety must lie in (0, 1) so that tau*sigma*|K|^2 < 1")

    @cached_property
    def weights(self) -> PairwiseWeights:
        return build_weights(self.domain, self.s, self.collar_cells)

    @cached_property
    def operator_norm(self) -> float:
        return float(np.sqrt(np.linalg.eigvalsh(self.weights.gram())[-1]))

    def pd_steps(self, ratio: float = 1.0) -> tuple[float, float]:
        """Initial ``(tau, sigma)`` with ``tau * sigma * |K|^2 = pd_safety``."""
        nk = self.operator_norm
        return ratio / nk, self.pd_safety / (ratio * nk)


@dataclass
class FractionalDualState:
    """Antisymmetric pair field ``eta`` with ``|eta| <= 1``.

    ``pairs`` holds ``eta_ij`` for ``i < j`` (``eta_ji = -eta_ij``) and
    ``collar`` the common value of ``eta_ic`` for every collar cell ``c``.
    """

    pairs: np.ndarray
    collar: np.ndarray
    n: int = field(default=0)

    def matrix(self) -> np.ndarray:
        """Interior block of ``eta`` as an antisymmetric matrix."""
        iu = np.triu_indices(self.n, 1)
        eta = np.zeros((self.n, self.n))
        eta[iu] = self.pairs
        return eta - eta.T


def build_weights(domain: Domain, s: float, collar: int) -> PairwiseWeights:
    d = domain.ndim
    m = domain.cell_volume
    widths = np.asarray(domain.widths)
    interior = domain.centers()
    axes = [np.arange(-collar, c + collar) for c in domain.cells]
    mesh = np.meshgrid(*axes, indexing="ij")
    idx = np.stack([g.ravel() for g in mesh], axis=1)
    outside = np.any((idx < 0) | (idx >= np.asarray(domain.cells)), axis=1)
    exterior = (idx[outside] + 0.5) * widths
    i, j = np.triu_indices(interior.shape[0], 1)
    dist = np.linalg.norm(interior[i] - interior[j], axis=1)
    w = m * m / dist ** (d + s)
    unary = np.zeros(interior.shape[0])
    if exterior.size:
        for k in range(interior.shape[0]):
            r = np.linalg.norm(exterior - interior[k], axis=1)
            unary[k] = np.sum(m * m / r ** (d + s))
    return PairwiseWeights(i.astype(np.intp), j.astype(np.intp), w, unary)


def nonlocal_seminorm(spec: FractionalSpec, u: GridFunction) -> float:
    _check_on_domain(u, spec.domain)
    return spec.weights.seminorm(u.values)


def pairwise_gap(weights: PairwiseWeights, m, v, mu, p):
    """``(u(p), P(u(p)) - D(p))`` for the graph TV prox with dual point ``p``."""
    ktp = weights.adjoint(p)
    u = v - ktp / m
    primal = 0.5 * float(np.sum(m * (u - v) ** 2)) + mu * weights.seminorm(u)
    return u, primal - pairwise_dual(weights, m, v, p, ktp)


def pairwise_dual(weights: PairwiseWeights, m, v, p, ktp=None) -> float:
    """Dual objective ``<p, K v> - 1/2 |K^T p|_{M^-1}^2``."""
    if ktp is None:
        ktp = weights.adjoint(p)
    return float(np.dot(p, weights.apply(v))) - 0.5 * float(np.sum(ktp * ktp / m))


def frac_resolvent(
    spec: FractionalSpec,
    v: GridFunction,
    mu: float,
    tol: ResolventTolerance = DEFAULT_TOL,
    return_info: bool = False,
):
    if not (mu > 0):
        raise ConfigurationError(f"mu must be positive, got {mu}")
    _check_on_domain(v, spec.domain)
    u, p, info = _primal_dual(spec, v.values, mu, tol)
    out = v.with_values(u)
    if not return_info:
        return out
    e = spec.weights.w.size
    state = FractionalDualState(p[:e] / mu, p[e:] / mu, spec.weights.n)
    return out, state, info


def _primal_dual(spec, v, mu, tol):
    peak = float(np.abs(v).max())
    if peak == 0.0 or not np.isfinite(peak):
        return _primal_dual_unit(spec, v, mu, tol)
    # rescale by a power of two (exact) so tiny or huge data do not under/overflow
    c = np.ldexp(1.0, np.frexp(peak)[1])
    u, p, info = _primal_dual_unit(spec, v / c, mu / c, tol)
    return c * u, c * p, info


def _primal_dual_unit(spec, v, mu, tol):
    wts = spec.weights
    m = spec.domain.cell_volume
    n = wts.n
    scale = 0.5 * m * float(np.dot(v, v))
    p = np.zeros(wts.w.size + n)
    if scale == 0.0:
        return np.zeros(n), p, SolveInfo(0, 0.0)
    # balance primal/dual step lengths by the natural units |v|_inf and mu;
    # the ratio is invariant under (v, mu) -> (v / lam, mu / lam).  Once mu
    # exceeds |v|_inf the dual scale is set by v, so the ratio is capped at 1.
    tau, sigma = spec.pd_steps(max(1.0, float(np.abs(v).max()) / mu))
    u = np.zeros(n)
    u_bar = u.copy()
    it = 0
    while True:
        p = np.clip(p + sigma * wts.apply(u_bar), -mu, mu)
        ktp = wts.adjoint(p)
        u_new = (u - tau * ktp + tau * m * v) / (1.0 + tau * m)
        theta = 1.0 / np.sqrt(1.0 + 2.0 * m * tau)
        tau *= theta
        sigma /= theta
        u_bar = u_new + theta * (u_new - u)
        u = u_new
        if it % 10 == 0 or it + 1 >= tol.max_iters:
            u_p, gap = pairwise_gap(wts, m, v, mu, p)
            # u = 0 has primal value `scale`; for mu >> |v| it certifies where u(p)
            # cannot, since mu amplifies the round-off left in u(p)
            gap0 = scale - pairwise_dual(wts, m, v, p)
            if gap0 < gap:
                u_p, gap = np.zeros(n), gap0
            gap = max(gap, 0.0)
            if gap <= tol.rel_gap * scale:
                return u_p, p, SolveInfo(it + 1, gap / scale)
            if it + 1 >= tol.max_iters:
                raise SolverError(
                    f"fractional primal-dual stopped after {it + 1} iterations "
                    f"with relative gap {gap / scale:.3e}",
                    iterations=it + 1,
                    gap=gap / scale,
                )
        it += 1


def frac_resolvent_info(spec, v, mu, tol=DEFAULT_TOL):
    u, _, info = frac_resolvent(spec, v, mu, tol, return_info=True)
    return u, info


@dataclass(frozen=True)
class SmoothingExponents:
    r: float
    delta: float
    gamma: float

    @property
    def quotient_exponent(self) -> float:
        """Power of ``t`` in the L^inf bound on the time derivative (negative)."""
        return -(self.delta + 1.0)


def smoothing_exponents(s: float, d: int, q: float) -> SmoothingExponents:
    """Exponent bundle of the fractional L^2 -> L^{d/(d-s)} -> L^inf chain.

    ``r = d/(d-s)``; ``delta = (d-s)/(s(q+1)-d)`` is the decay power of
    ``|T_t u0|_inf`` and ``gamma = delta * s q/(d-s)`` the power of the
    initial-data norm.  Requires ``q > (d-s)/s``.
    """
    if d < 1 or not (0 < s < 1):
        raise ConfigurationError("need d >= 1 and 0 < s < 1")
    threshold = (d - s) / s
    if not (q > threshold):
        raise ConfigurationError(f"q must exceed (d-s)/s = {threshold}, got {q}")
    denom = s * (q + 1) - d
    delta = (d - s) / denom
    return SmoothingExponents(r=d / (d - s), delta=delta, gamma=delta * s * q / (d - s))


def _check_on_domain(u: GridFunction, dom: Domain):
    if u.domain_id != dom.key or len(u) != dom.size:
        raise ConfigurationError(f"grid function lives on {u.domain_id}, expected {dom.key}")
