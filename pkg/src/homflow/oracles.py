"""Slow, independent references for cross-validating the production solvers.

* :func:`plateau_ode_oracle`: exact event-driven 1D Neumann TV flow of
  piecewise-constant data.
* :func:`dense_resolvent_oracle`: tiny graph-TV proximal problems solved via
  the dual box QP (L-BFGS-B) followed by an exact polish: the level-set
  partition of the approximate solution fixes every subgradient outside the
  level sets, the level values follow in closed form, and feasibility of the
  remaining intra-level subgradients is certified by a linear program.
* :func:`quadrature_oracle`: composite Gauss-Legendre quadrature with a
  doubled-order error estimate for the Gronwall-type constants.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog, minimize

from .exceptions import ConfigurationError, SolverError
from .fractional import PairwiseWeights
from .grid import Domain, GridFunction

MAX_DENSE_SIZE = 64


# --------------------------------------------------------------------------
# plateau dynamics


@dataclass(frozen=True)
class PlateauState:
    """Piecewise-constant function on ``[edges[0], edges[-1]]``.

    ``edges`` has one more entry than ``heights``; plateau ``k`` occupies
    ``[edges[k], edges[k+1]]``.
    """

    edges: np.ndarray
    heights: np.ndarray

    def __post_init__(self):
        edges = np.array(self.edges, dtype=float)
        heights = np.array(self.heights, dtype=float)
        if edges.ndim != 1 or heights.ndim != 1 or edges.size != heights.size + 1 or heights.size < 1:
            raise ConfigurationError("PlateauState needs len(edges) == len(heights) + 1 >= 2")
        if np.any(np.diff(edges) <= 0):
            raise ConfigurationError("plateau edges must be strictly increasing")
        edges, heights = _coalesce(edges, heights)
        edges.setflags(write=False)
        heights.setflags(write=False)
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "heights", heights)

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.edges)

    def mass(self) -> float:
        return float(np.dot(self.widths, self.heights))

    def speeds(self) -> np.ndarray:
        return _speeds(self.heights, self.widths)

    def sample(self, domain: Domain) -> GridFunction:
        """Evaluate at the cell centres of a 1D domain."""
        x = domain.centers()[:, 0]
        k = np.clip(np.searchsorted(self.edges, x, side="right") - 1, 0, self.heights.size - 1)
        return domain.grid_function(self.heights[k])

    def cell_average(self, domain: Domain) -> GridFunction:
        """Exact cell averages on a 1D domain."""
        (w,) = domain.widths
        faces = np.arange(domain.size + 1) * w + self.edges[0]
        cum = np.concatenate([[0.0], np.cumsum(self.widths * self.heights)])
        prim = np.interp(faces, self.edges, cum)
        return domain.grid_function(np.diff(prim) / w)

    @classmethod
    def indicator(cls, a: float, b: float, length: float = 1.0, height: float = 1.0):
        return cls([0.0, a, b, length], [0.0, height, 0.0])


def _coalesce(edges, heights):
    keep = np.concatenate([[True], heights[1:] != heights[:-1]])
    starts = np.flatnonzero(keep)
    return np.concatenate([edges[starts], edges[-1:]]), heights[starts]


def _speeds(heights, widths):
    sig = np.zeros_like(heights)
    sig[:-1] += np.sign(heights[1:] - heights[:-1])
    sig[1:] += np.sign(heights[:-1] - heights[1:])
    return sig / widths


def plateau_events(u0: PlateauState, t_end: float = np.inf):
    """Merge event times of the flow up to ``t_end``."""
    out = []
    _evolve(u0, t_end, out)
    return out


def plateau_ode_oracle(u0: PlateauState, t: float) -> PlateauState:
    """Exact 1D Neumann TV flow of piecewise-constant data at time ``t``."""
    if t < 0:
        raise ConfigurationError("t must be nonnegative")
    return _evolve(u0, float(t), [])


def plateau_extinction_time(u0: PlateauState) -> float:
    """Time at which the flow reaches its constant state (0 if already constant)."""
    ev = plateau_events(u0)
    return ev[-1] if ev else 0.0


def _evolve(u0, t_end, events):
    edges, h = u0.edges, u0.heights.copy()
    now = 0.0
    while h.size > 1:
        w = np.diff(edges)
        s = _speeds(h, w)
        gap = h[1:] - h[:-1]
        rate = s[1:] - s[:-1]
        closing = gap * rate < 0
        tau = np.full(gap.size, np.inf)
        tau[closing] = -gap[closing] / rate[closing]
        dt = float(tau.min())
        if now + dt >= t_end:
            h = h + (t_end - now) * s
            return PlateauState(edges, h)
        now += dt
        events.append(now)
        h = h + dt * s
        # merge every pair that closes at this event (up to rounding)
        hit = tau <= dt * (1 + 1e-12) + 1e-300
        e2, h2 = [edges[0]], []
        k = 0
        while k < h.size:
            j = k
            while j < gap.size and hit[j]:
                j += 1
            ww = w[k : j + 1]
            h2.append(float(np.dot(ww, h[k : j + 1]) / ww.sum()))
            e2.append(edges[j + 1])
            k = j + 1
        edges, h = _coalesce(np.asarray(e2), np.asarray(h2))
    return PlateauState(edges, h)


# --------------------------------------------------------------------------
# dense graph-TV prox


def chain_weights(domain: Domain) -> PairwiseWeights:
    """Nearest-neighbour graph of a TV discretization (1D or 2D)."""
    shape = domain.shape
    idx = np.arange(domain.size).reshape(shape)
    vol = domain.cell_volume
    ii, jj, ww = [], [], []
    unary = np.zeros(domain.size)
    for axis, width in enumerate(domain.widths):
        face = vol / width
        a = np.take(idx, range(shape[axis] - 1), axis=axis).ravel()
        b = np.take(idx, range(1, shape[axis]), axis=axis).ravel()
        ii.append(a)
        jj.append(b)
        ww.append(np.full(a.size, face))
        if domain.boundary == "dirichlet_zero":
            for side in (0, shape[axis] - 1):
                np.add.at(unary, np.take(idx, side, axis=axis).ravel(), face)
    return PairwiseWeights(
        np.concatenate(ii).astype(np.intp),
        np.concatenate(jj).astype(np.intp),
        np.concatenate(ww),
        unary,
    )


def dense_resolvent_oracle(weights: PairwiseWeights, v, mu: float, measure=None) -> np.ndarray:
    """Minimizer of ``1/2 sum m (u-v)^2 + mu (sum w |u_i-u_j| + sum kappa |u_i|)``.

    Refuses problems with more than 64 unknowns.  Raises :class:`SolverError`
    when no level-set partition can be certified.
    """
    v = np.asarray(v.values if isinstance(v, GridFunction) else v, dtype=float)
    n = v.size
    if n > MAX_DENSE_SIZE:
        raise ConfigurationError(f"dense oracle is limited to {MAX_DENSE_SIZE} unknowns, got {n}")
    if weights.n != n:
        raise ConfigurationError("weights and v sizes differ")
    if not (mu > 0):
        raise ConfigurationError("mu must be positive")
    m = np.ones(n) if measure is None else np.broadcast_to(np.asarray(measure, dtype=float), (n,)).copy()
    scale = float(np.abs(v).max())
    if scale == 0.0:
        return np.zeros(n)
    # solve the unit-scale problem: J_mu(v) = c J_{mu/c}(v/c)
    v1, mu1 = v / scale, mu / scale
    approx = _dual_qp(weights, m, v1, mu1)
    for rel in (1e-9, 1e-7, 1e-11, 1e-5, 1e-3):
        u = _polish(weights, m, v1, mu1, approx, rel)
        if u is not None:
            return scale * u
    raise SolverError("dense oracle could not certify a level-set partition")


def _dual_qp(wts, m, v, mu):
    e = wts.w.size
    bounds = [(-mu, mu)] * (e + wts.n)

    def fun(p):
        u = v - wts.adjoint(p) / m
        val = 0.5 * float(np.sum(m * (v - u) ** 2)) - float(np.dot(p, wts.apply(v)))
        return val, -wts.apply(u)

    p0 = np.zeros(e + wts.n)
    res = minimize(fun, p0, jac=True, method="L-BFGS-B", bounds=bounds,
                   options={"ftol": 1e-16, "gtol": 1e-14, "maxiter": 20000, "maxcor": 50})
    return v - wts.adjoint(res.x) / m


def _polish(wts, m, v, mu, approx, thresh):
    n = v.size
    order = np.argsort(approx, kind="stable")
    labels = np.empty(n, dtype=int)
    g = 0
    labels[order[0]] = 0
    for a, b in zip(order[:-1], order[1:]):
        if approx[b] - approx[a] > thresh:
            g += 1
        labels[b] = g
    ng = g + 1
    has_unary = np.any(wts.unary > 0)
    zero_group = -1
    if has_unary:
        means = np.array([approx[labels == k].mean() for k in range(ng)])
        k0 = int(np.argmin(np.abs(means)))
        if abs(means[k0]) <= thresh:
            zero_group = k0
    # group ranking fixes sign(u_i - u_j) across groups
    li, lj = labels[wts.i], labels[wts.j]
    cross = li != lj
    sgn = np.sign(li - lj).astype(float)
    flux = np.zeros(n)
    np.add.at(flux, wts.i[cross], mu * wts.w[cross] * sgn[cross])
    np.add.at(flux, wts.j[cross], -mu * wts.w[cross] * sgn[cross])
    zero_rank_sign = np.zeros(ng)
    if zero_group >= 0:
        zero_rank_sign = np.sign(np.arange(ng) - zero_group).astype(float)
    values = np.zeros(ng)
    for k in range(ng):
        mem = labels == k
        if k == zero_group:
            continue
        if has_unary and zero_group < 0:
            su = np.sign(approx[mem].mean())
        else:
            su = zero_rank_sign[k]
        num = float(np.dot(m[mem], v[mem]) - flux[mem].sum() - mu * su * wts.unary[mem].sum())
        values[k] = num / m[mem].sum()
        if su != 0 and np.sign(values[k]) != su:
            return None
    if np.any(np.diff(values) <= 0):
        return None
    u = values[labels]
    # certify the remaining subgradients group by group
    for k in range(ng):
        mem = np.flatnonzero(labels == k)
        if not _intra_feasible(wts, m, v, mu, u, labels, k, mem, flux, k == zero_group, values[k]):
            return None
    return u


def _intra_feasible(wts, m, v, mu, u, labels, k, mem, flux, is_zero, value):
    pos = -np.ones(wts.n, dtype=int)
    pos[mem] = np.arange(mem.size)
    inside = (labels[wts.i] == k) & (labels[wts.j] == k)
    ei, ej, ew = wts.i[inside], wts.j[inside], wts.w[inside]
    resid = m[mem] * (u[mem] - v[mem]) + flux[mem]
    if not is_zero:
        resid = resid + mu * np.sign(value) * wts.unary[mem]
    cols = []
    bounds = []
    for a, b, w in zip(ei, ej, ew):
        col = np.zeros(mem.size)
        col[pos[a]] = 1.0
        col[pos[b]] = -1.0
        cols.append(col)
        bounds.append((-mu * w, mu * w))
    if is_zero:
        for r, node in enumerate(mem):
            if wts.unary[node] > 0:
                col = np.zeros(mem.size)
                col[r] = 1.0
                cols.append(col)
                bounds.append((-mu * wts.unary[node], mu * wts.unary[node]))
    # resid cancels terms of size m |v|, so round-off is relative to those too
    scale = max(
        float(np.abs(resid).max()),
        mu * float(wts.w.max(initial=0.0)),
        float(np.abs(m[mem] * v[mem]).max()),
        float(np.abs(m[mem] * u[mem]).max()),
        1e-300,
    )
    if not cols:
        return float(np.abs(resid).max()) <= 1e-12 * scale
    A = np.stack(cols, axis=1)
    # minimize the l1 infeasibility of A x = -resid with slacks
    ncol = A.shape[1]
    r = mem.size
    A_eq = np.hstack([A, np.eye(r), -np.eye(r)])
    c = np.concatenate([np.zeros(ncol), np.ones(2 * r)])
    res = linprog(c, A_eq=A_eq, b_eq=-resid, bounds=bounds + [(0, None)] * (2 * r), method="highs")
    return res.status == 0 and res.fun <= 1e-11 * scale * r


def pair_objective(weights: PairwiseWeights, m, v, mu, u) -> float:
    m = np.broadcast_to(np.asarray(m, dtype=float), v.shape)
    return 0.5 * float(np.sum(m * (u - v) ** 2)) + mu * weights.seminorm(u)


# --------------------------------------------------------------------------
# Gauss-Legendre quadrature

_GL = {k: np.polynomial.legendre.leggauss(k) for k in (16, 32)}

INTEGRANDS = ("quotient", "derivative", "quotient_exponent", "derivative_exponent")


def _gl(f, a, b, k):
    x, w = _GL[k]
    half = 0.5 * (b - a)
    return half * float(np.dot(w, f(0.5 * (a + b) + half * x)))


def _adaptive(f, a, b, rtol=1e-13, depth=0):
    lo = _gl(f, a, b, 16)
    hi = _gl(f, a, b, 32)
    if abs(hi - lo) <= rtol * max(abs(hi), 1e-300) or depth > 40 or b - a < 1e-14:
        return hi
    mid = 0.5 * (a + b)
    return _adaptive(f, a, mid, rtol, depth + 1) + _adaptive(f, mid, b, rtol, depth + 1)


def _inner(omega, s, t, weighted):
    """Vectorized ``int_s^t e^{-omega r} (r if weighted else 1) dr``."""
    s = np.atleast_1d(np.asarray(s, dtype=float))
    x, w = _GL[32]
    half = 0.5 * (t - s)[:, None]
    r = 0.5 * (t + s)[:, None] + half * x[None, :]
    g = np.exp(-omega * r) * (r if weighted else 1.0)
    return (half * g) @ w


def quadrature_oracle(integrand: str, omega: float, L: float, t: float) -> float:
    """High-order reference values for the Gronwall-type constants.

    ``quotient`` / ``derivative`` return the full factor
    ``e^{wt} L [2 exp(c int_0^t k) + w int_0^t exp(c int_s^t k) ds]`` with
    kernel ``k(r) = e^{-wr}``, ``c = 2Lw`` (quotient form) or
    ``k(r) = r e^{-wr}``, ``c = Lw`` (derivative form).  The ``*_exponent``
    ids return ``int_0^t k`` alone.
    """
    if integrand not in INTEGRANDS:
        raise ConfigurationError(f"unknown integrand {integrand!r}")
    omega, L, t = float(omega), float(L), float(t)
    weighted = integrand.startswith("derivative")
    if integrand.endswith("_exponent"):
        return _adaptive(lambda r: np.exp(-omega * r) * (r if weighted else 1.0), 0.0, t)
    c = (2.0 if not weighted else 1.0) * L * omega
    head = 2.0 * np.exp(c * _adaptive(lambda r: np.exp(-omega * r) * (r if weighted else 1.0), 0.0, t))
    if omega == 0.0:
        return float(np.exp(omega * t) * L * head)
    tail = _adaptive(lambda s: np.exp(c * _inner(omega, s, t, weighted)), 0.0, t)
    return float(np.exp(omega * t) * L * (head + omega * tail))
