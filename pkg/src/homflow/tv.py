"""Resolvents of the Neumann / homogeneous-Dirichlet 1-Laplacian on uniform grids.

The resolvent ``J_mu v`` of the discrete operator is the proximal point

    argmin_u  1/2 sum_i m_i (u_i - v_i)^2 + mu * TV(u),

where ``m_i`` are cell volumes and ``TV`` is the anisotropic discrete total
variation ``sum_e l_e |u_i - u_j|`` over axis-aligned edges, ``l_e`` being the
measure of the face shared by the two cells.  Under ``dirichlet_zero`` every
boundary face also contributes ``l_e |u_i|`` (jump to the zero exterior).

In 1D the problem is solved exactly by a forward/backward dynamic program on
piecewise-linear derivative messages (linear time, no iteration).  In 2D the
dual problem over edge fields ``|z_e| <= 1`` is solved by projected gradient,
stopped on the relative duality gap

    gap = P(u) - D(z),   P(u) = 1/2 |u - v|_M^2 + mu TV(u),
                         D(z) = 1/2 (|v|_M^2 - |u|_M^2),
    u = v - M^{-1} D^T (mu l z),

normalized by ``P(u_ref)`` with ``u_ref`` the mean of ``v`` (Neumann) or 0
(Dirichlet).  ``P(u) - P(u*) <= gap`` and ``|u - u*|_M^2 <= 2 gap``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from .exceptions import ConfigurationError, SolverError
from .grid import DEFAULT_TOL, Domain, GridFunction, ResolventTolerance, SolveInfo


@dataclass(frozen=True)
class TVSpec:
    domain: Domain
    solver_1d: str = "taut_string"
    solver_2d: str = "dual_projection"
    dual_step: float = 0.248

    def __post_init__(self):
        if not (0 < self.dual_step < 0.25):
            raise ConfigurationError("dual_step must lie in (0, 1/4) for the dual iteration to contract")
        if self.solver_1d != "taut_string" or self.solver_2d != "dual_projection":
            raise ConfigurationError("unsupported TV solver selection")

    @property
    def boundary(self) -> str:
        return self.domain.boundary

    def face_measures(self) -> tuple[float, ...]:
        """Measure of a face orthogonal to each axis."""
        vol = self.domain.cell_volume
        return tuple(vol / w for w in self.domain.widths)


@dataclass
class TVDualState:
    """Edge field ``z`` (one array per axis) with ``|z| <= 1``."""

    z: list


# --------------------------------------------------------------------------
# exact 1D solver


@njit(cache=True)
def _prox_tv1d(v, w, lam, bl, br):  # pragma: no cover - compiled
    """Minimize sum w_i (u_i-v_i)^2/2 + sum lam_i |u_{i+1}-u_i| + bl|u_0| + br|u_{n-1}|.

    Forward pass keeps the derivative of the cost-to-come as a deque of knots
    (position, slope jump, intercept jump); clipping it to [-lam, lam] yields
    the bounds used by the backward pass u_i = clip(u_{i+1}, lo_i, hi_i).
    """
    n = v.size
    cap = 2 * n + 6
    kx = np.empty(cap)
    ka = np.empty(cap)
    kb = np.empty(cap)
    lo_edge = np.empty(max(n - 1, 1))
    hi_edge = np.empty(max(n - 1, 1))
    lo = n + 3
    hi = n + 2
    a_left = w[0]
    b_left = -w[0] * v[0] - bl
    a_right = w[0]
    b_right = -w[0] * v[0] + bl
    if bl > 0.0:
        hi += 1
        kx[hi] = 0.0
        ka[hi] = 0.0
        kb[hi] = 2.0 * bl
    for i in range(n - 1):
        lm = lam[i]
        # smallest x with D(x) >= -lm, popping knots on the way
        a = a_left
        b = b_left
        found = False
        x_minus = 0.0
        while lo <= hi:
            xk = kx[lo]
            if a * xk + b >= -lm:
                break
            while lo <= hi and kx[lo] == xk:
                a += ka[lo]
                b += kb[lo]
                lo += 1
            if a * xk + b >= -lm:
                x_minus = xk
                found = True
                break
        if not found:
            x_minus = (-lm - b) / a
        a_m = a
        b_m = b
        # largest x with D(x) <= lm, popping from the right
        a = a_right
        b = b_right
        found = False
        x_plus = 0.0
        while hi >= lo:
            xk = kx[hi]
            if a * xk + b <= lm:
                break
            while hi >= lo and kx[hi] == xk:
                a -= ka[hi]
                b -= kb[hi]
                hi -= 1
            if a * xk + b <= lm:
                x_plus = xk
                found = True
                break
        if not found:
            x_plus = (lm - b) / a
        if x_plus < x_minus:
            x_plus = x_minus
        lo_edge[i] = x_minus
        hi_edge[i] = x_plus
        lo -= 1
        kx[lo] = x_minus
        ka[lo] = a_m
        kb[lo] = b_m + lm
        hi += 1
        kx[hi] = x_plus
        ka[hi] = -a
        kb[hi] = lm - b
        a_left = w[i + 1]
        b_left = -lm - w[i + 1] * v[i + 1]
        a_right = w[i + 1]
        b_right = lm - w[i + 1] * v[i + 1]

    u = np.empty(n)
    if br > 0.0:
        x_a = _generalized_inverse(kx, ka, kb, lo, hi, a_left, b_left, -br)
        x_b = _generalized_inverse(kx, ka, kb, lo, hi, a_left, b_left, br)
        if x_a > 0.0:
            last = x_a
        elif x_b < 0.0:
            last = x_b
        else:
            last = 0.0
    else:
        last = _generalized_inverse(kx, ka, kb, lo, hi, a_left, b_left, 0.0)
    u[n - 1] = last
    for i in range(n - 2, -1, -1):
        x = u[i + 1]
        if x < lo_edge[i]:
            x = lo_edge[i]
        elif x > hi_edge[i]:
            x = hi_edge[i]
        u[i] = x
    return u


@njit(cache=True)
def _generalized_inverse(kx, ka, kb, lo, hi, a, b, target):  # pragma: no cover - compiled
    """inf{x : D(x) >= target} for the increasing piecewise-linear D."""
    k = lo
    while k <= hi:
        xk = kx[k]
        if a * xk + b >= target:
            return (target - b) / a
        while k <= hi and kx[k] == xk:
            a = a + ka[k]
            b = b + kb[k]
            k += 1
        if a * xk + b >= target:
            return xk
    return (target - b) / a


def prox_tv_chain(v, weights, edge_weights, left=0.0, right=0.0) -> np.ndarray:
    """Exact weighted 1D TV prox; see :func:`_prox_tv1d` for the objective."""
    v = np.ascontiguousarray(v, dtype=float)
    weights = np.ascontiguousarray(weights, dtype=float)
    edge_weights = np.ascontiguousarray(edge_weights, dtype=float)
    if v.size == 0:
        return v.copy()
    if edge_weights.size != max(v.size - 1, 0) or weights.size != v.size:
        raise ConfigurationError("inconsistent array sizes for chain TV prox")
    if v.size == 1:
        edge_weights = np.zeros(1)
    return _prox_tv1d(v, weights, edge_weights, float(left), float(right))


def tv_resolvent_1d(spec: TVSpec, v: GridFunction, mu: float) -> GridFunction:
    dom = spec.domain
    if dom.ndim != 1:
        raise ConfigurationError("tv_resolvent_1d needs an interval domain")
    if not (mu > 0):
        raise ConfigurationError(f"mu must be positive, got {mu}")
    _check_on_domain(v, dom)
    n = dom.size
    face = spec.face_measures()[0]
    lam = np.full(max(n - 1, 0), mu * face)
    if spec.boundary == "dirichlet_zero":
        bterm = mu * face
        return v.with_values(prox_tv_chain(v.values, v.cell_measure, lam, bterm, bterm))
    # Neumann: the prox commutes with adding constants; centring on the
    # midrange makes constants exact fixed points (and keeps 2^k scaling exact)
    shift = 0.5 * (float(v.values.max()) + float(v.values.min()))
    u = prox_tv_chain(v.values - shift, v.cell_measure, lam, 0.0, 0.0)
    return v.with_values(u + shift)


# --------------------------------------------------------------------------
# 2D dual projection


def _grad(u, axis, dirichlet):
    if dirichlet:
        pad = [(0, 0)] * u.ndim
        pad[axis] = (1, 1)
        u = np.pad(u, pad)
    return np.diff(u, axis=axis)


def _grad_adjoint(p, axis, dirichlet):
    if not dirichlet:
        pad = [(0, 0)] * p.ndim
        pad[axis] = (1, 1)
        p = np.pad(p, pad)
    return -np.diff(p, axis=axis)


def _tv_from_grads(grads, faces) -> float:
    return float(sum(f * np.abs(g).sum() for g, f in zip(grads, faces)))


def tv_resolvent_2d(
    spec: TVSpec,
    v: GridFunction,
    mu: float,
    tol: ResolventTolerance = DEFAULT_TOL,
    return_info: bool = False,
):
    dom = spec.domain
    if dom.ndim != 2:
        raise ConfigurationError("tv_resolvent_2d needs a 2D grid domain")
    if not (mu > 0):
        raise ConfigurationError(f"mu must be positive, got {mu}")
    _check_on_domain(v, dom)
    u, state, info = _dual_projection(spec, v.values.reshape(dom.shape), mu, tol)
    out = v.with_values(u.ravel())
    if return_info:
        return out, state, info
    return out


def _dual_projection(spec, v, mu, tol):
    dom = spec.domain
    dirichlet = spec.boundary == "dirichlet_zero"
    faces = spec.face_measures()
    m = dom.cell_volume
    vnorm2 = m * float(np.sum(v * v))
    ref = 0.0 if dirichlet else float(v.mean())
    scale = 0.5 * m * float(np.sum((v - ref) ** 2))
    zero_state = TVDualState([np.zeros_like(_grad(v, a, dirichlet)) for a in range(v.ndim)])
    if scale == 0.0:
        return v.copy(), zero_state, SolveInfo(0, 0.0)
    # Lipschitz bound of the dual gradient in z: mu^2 * 4 * sum_a l_a^2 / m
    lip = mu * mu * 4.0 * sum(f * f / m for f in faces)
    step = 8.0 * spec.dual_step / lip
    z = zero_state.z
    coef = [mu * f / m for f in faces]
    gap = np.inf
    it = 0
    while True:
        div = sum(c * _grad_adjoint(za, a, dirichlet) for a, (c, za) in enumerate(zip(coef, z)))
        u = v - div
        grads = [_grad(u, a, dirichlet) for a in range(v.ndim)]
        if it % 10 == 0 or it >= tol.max_iters:
            primal = 0.5 * m * float(np.sum(div * div)) + mu * _tv_from_grads(grads, faces)
            dual = 0.5 * (vnorm2 - m * float(np.sum(u * u)))
            gap = max(primal - dual, 0.0)
            if gap <= tol.rel_gap * scale:
                break
            if it >= tol.max_iters:
                raise SolverError(
                    f"2D TV dual projection stopped after {it} iterations with "
                    f"relative gap {gap / scale:.3e}",
                    iterations=it,
                    gap=gap / scale,
                )
        z = [
            np.clip(za + step * mu * f * g, -1.0, 1.0)
            for za, f, g in zip(z, faces, grads)
        ]
        it += 1
    return u, TVDualState(z), SolveInfo(it, gap / scale)


# --------------------------------------------------------------------------


def tv_seminorm(spec: TVSpec, u: GridFunction) -> float:
    dom = spec.domain
    _check_on_domain(u, dom)
    arr = u.values.reshape(dom.shape)
    dirichlet = spec.boundary == "dirichlet_zero"
    grads = [_grad(arr, a, dirichlet) for a in range(dom.ndim)]
    return _tv_from_grads(grads, spec.face_measures())


def tv_resolvent(spec: TVSpec, v: GridFunction, mu: float, tol: ResolventTolerance = DEFAULT_TOL):
    """Dispatch to the exact 1D or iterative 2D solver; returns ``(u, info)``."""
    if spec.domain.ndim == 1:
        return tv_resolvent_1d(spec, v, mu), SolveInfo(0, 0.0, {"exact": True})
    u, _, info = tv_resolvent_2d(spec, v, mu, tol, return_info=True)
    return u, info


def _check_on_domain(u: GridFunction, dom: Domain):
    if u.domain_id != dom.key or len(u) != dom.size:
        raise ConfigurationError(f"grid function lives on {u.domain_id}, expected {dom.key}")
