"""Mild solutions by resolvent iteration.

``T_t u0`` is approximated by ``[J_{t/n}]^n u0`` (implicit Euler with ``n``
equal steps).  Forcing enters each step as ``J_mu(v + mu f_bar)`` with
``f_bar`` the average of ``f`` over the step; Lipschitz perturbations are
treated fully implicitly, ``u_k = J_h(u_{k-1} - h F(u_k))``, by an inner
fixed-point iteration.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import integrate

from .exceptions import ConfigurationError, NonConvergenceError, SolverError
from .fractional import FractionalSpec, frac_resolvent_info
from .grid import DEFAULT_TOL, Domain, GridFunction, ResolventTolerance, SolveInfo, TimeGrid
from .nemytskii import CaratheodoryMap
from .tv import TVSpec, tv_resolvent

GRONWALL_VARIANTS = ("quotient", "derivative", "max")


@dataclass(frozen=True)
class OperatorBackend:
    """Resolvent provider ``(mu, v, tol) -> (J_mu v, SolveInfo)`` plus structural flags."""

    solve: Callable[[float, GridFunction, ResolventTolerance], tuple]
    domain: Domain
    name: str = "custom"
    omega: float = 0.0
    lipschitz_L: float = 1.0
    homogeneous_zero: bool = True
    completely_accretive: bool = True
    zero_in_A0: bool = True
    exact: bool = False
    mass_conserving: bool = False

    def __post_init__(self):
        if self.lipschitz_L < 1:
            raise ConfigurationError("lipschitz_L must be >= 1")
        if not np.isfinite(self.omega):
            raise ConfigurationError("omega must be finite")

    def resolvent(self, mu: float, v: GridFunction, tol: ResolventTolerance = DEFAULT_TOL) -> GridFunction:
        return self.solve(mu, v, tol)[0]

    def slack(self, tol: ResolventTolerance = DEFAULT_TOL) -> float:
        """Declared resolvent accuracy used by the checks' slack budgets."""
        return 1e-12 if self.exact else 5.0 * tol.rel_gap

    def initial(self, values) -> GridFunction:
        return self.domain.grid_function(values)


def tv_backend(domain: Domain, **kwargs) -> OperatorBackend:
    spec = TVSpec(domain, **kwargs)
    return OperatorBackend(
        solve=lambda mu, v, tol: tv_resolvent(spec, v, mu, tol),
        domain=domain,
        name=f"tv/{domain.key}",
        exact=domain.ndim == 1,
        mass_conserving=domain.boundary == "neumann",
    )


def fractional_backend(domain: Domain, s: float, collar_cells: int | None = None) -> OperatorBackend:
    spec = FractionalSpec(s, domain, collar_cells)
    return OperatorBackend(
        solve=lambda mu, v, tol: frac_resolvent_info(spec, v, mu, tol),
        domain=domain,
        name=f"fractional[s={s!r},collar={spec.collar_cells}]/{domain.key}",
    )


# --------------------------------------------------------------------------
# forcing


@dataclass(frozen=True)
class ForcingTerm:
    """Step or sampled forcing ``f : [0, T] -> GridFunction``.

    ``step``: ``times`` are breakpoints ``0 = t_0 < ... < t_N = T`` and
    ``values[i]`` is the constant value on ``(t_i, t_{i+1}]``.
    ``sampled``: ``values[k]`` and ``derivatives[k]`` are ``f(t_k)`` and
    ``f'(t_k)``; between samples ``f`` is interpolated linearly.
    """

    kind: str
    times: np.ndarray
    values: tuple
    derivatives: tuple | None = None

    def __post_init__(self):
        times = np.array(self.times, dtype=float)
        vals = tuple(self.values)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", vals)
        if self.derivatives is not None:
            object.__setattr__(self, "derivatives", tuple(self.derivatives))
        if self.kind not in ("step", "sampled"):
            raise ConfigurationError(f"unknown forcing kind {self.kind!r}")
        if times.ndim != 1 or times.size < 2 or times[0] != 0 or np.any(np.diff(times) <= 0):
            raise ConfigurationError("forcing times must start at 0 and increase strictly")
        expected = times.size - 1 if self.kind == "step" else times.size
        if len(vals) != expected:
            raise ConfigurationError(f"{self.kind} forcing needs {expected} values, got {len(vals)}")
        if self.kind == "sampled" and self.derivatives is not None and len(self.derivatives) != times.size:
            raise ConfigurationError("f and f' tables must share the time grid")
        ids = {g.domain_id for g in vals} | {g.domain_id for g in (self.derivatives or ())}
        if len(ids) != 1:
            raise ConfigurationError("all forcing values must live on one domain")

    @classmethod
    def step(cls, breakpoints, values):
        return cls("step", breakpoints, values)

    @classmethod
    def sampled(cls, times, values, derivatives=None):
        return cls("sampled", times, values, derivatives)

    @classmethod
    def constant(cls, g: GridFunction, T: float):
        return cls("step", [0.0, T], [g])

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    @property
    def domain_id(self) -> str:
        return self.values[0].domain_id

    def is_zero(self) -> bool:
        return all(not np.any(g.values) for g in self.values)

    def _table(self, which="values"):
        src = self.values if which == "values" else self.derivatives
        return np.stack([g.values for g in src])

    def at(self, t: float) -> np.ndarray:
        if self.kind == "step":
            i = int(np.clip(np.searchsorted(self.times, t, side="left") - 1, 0, len(self.values) - 1))
            return self.values[i].values
        return _interp_rows(self.times, self._table(), t)

    def derivative_at(self, t: float) -> np.ndarray:
        if self.derivatives is None:
            raise ConfigurationError("forcing carries no derivative table")
        return _interp_rows(self.times, self._table("derivatives"), t)

    def average(self, a: float, b: float) -> np.ndarray:
        """Exact mean of the (step or piecewise-linear) forcing over ``[a, b]``."""
        if b <= a:
            raise ConfigurationError("empty averaging interval")
        if self.kind == "step":
            tab = self._table()
            lo = np.clip(self.times[:-1], a, b)
            hi = np.clip(self.times[1:], a, b)
            return (hi - lo) @ tab / (b - a)
        tab = self._table()
        knots = np.unique(np.concatenate([[a, b], self.times[(self.times > a) & (self.times < b)]]))
        vals = np.stack([_interp_rows(self.times, tab, x) for x in knots])
        seg = np.diff(knots)
        return (seg @ (0.5 * (vals[1:] + vals[:-1]))) / (b - a)


def _interp_rows(times, table, t):
    if t <= times[0]:
        return table[0]
    if t >= times[-1]:
        return table[-1]
    k = int(np.searchsorted(times, t, side="right") - 1)
    lam = (t - times[k]) / (times[k + 1] - times[k])
    return (1 - lam) * table[k] + lam * table[k + 1]


# --------------------------------------------------------------------------
# trajectories


@dataclass(frozen=True)
class RefinePolicy:
    """Doubling policy for the number of implicit Euler steps.

    ``n`` starts at ``n_start`` and doubles until two successive results differ
    by less than ``tol * max(1, |u0|_1)`` in L^1, or ``n_max`` is reached.
    With ``fixed_n`` set no refinement takes place.
    """

    tol: float = 1e-6
    n_start: int = 64
    n_max: int = 2**16
    fixed_n: int | None = None
    strict: bool = True

    def __post_init__(self):
        if self.n_start < 1 or self.n_max < self.n_start:
            raise ConfigurationError("need 1 <= n_start <= n_max")
        if self.fixed_n is not None and self.fixed_n < 1:
            raise ConfigurationError("fixed_n must be >= 1")
        if not (self.tol > 0):
            raise ConfigurationError("refinement tolerance must be positive")


@dataclass
class Trajectory:
    grid: TimeGrid
    states: list
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.states)

    def values(self) -> np.ndarray:
        return np.stack([s.values for s in self.states])

    def identical(self, other: "Trajectory") -> bool:
        return (
            np.array_equal(self.grid.times, other.grid.times)
            and len(self) == len(other)
            and all(a.identical(b) for a, b in zip(self.states, other.states))
        )


def _check_step(op: OperatorBackend, t: float, n: int):
    if op.omega > 0 and (t / n) * op.omega >= 1:
        raise ConfigurationError(f"step t/n = {t / n} violates (t/n) * omega < 1 for omega = {op.omega}")


def _flow(op, u0, t, n, tol, forcing=None, F=None, fp_tol=1e-10, fp_max=1000):
    """``n``-step implicit Euler flow to time ``t``; returns ``(state, stats)``."""
    if u0.domain_id != op.domain.key:
        raise ConfigurationError(f"u0 lives on {u0.domain_id}, backend on {op.domain.key}")
    _check_step(op, t, n)
    if forcing is not None and forcing.kind == "step":
        cuts = forcing.times[(forcing.times > 0) & (forcing.times < t)]
        knots = np.concatenate([[0.0], cuts, [t]])
        steps = [(a + k * (b - a) / n, a + (k + 1) * (b - a) / n) for a, b in zip(knots[:-1], knots[1:]) for k in range(n)]
    else:
        steps = [(t * k / n, t * (k + 1) / n) for k in range(n)]
    u = u0
    iters = 0
    max_gap = 0.0
    fp_iters = 0
    for a, b in steps:
        mu = b - a
        v = u
        if forcing is not None:
            fbar = forcing.average(a, b)
            if np.any(fbar):
                v = v.with_values(v.values + mu * fbar)
        if F is None:
            u, info = op.solve(mu, v, tol)
        else:
            if mu * F.omega >= 0.5:
                raise ConfigurationError(f"step h = {mu} violates h * omega < 1/2 for omega = {F.omega}")
            u, info, k = _implicit_step(op, F, v, mu, tol, fp_tol, fp_max)
            fp_iters += k
        iters += info.iterations
        max_gap = max(max_gap, info.gap)
    return u, {"iterations": iters, "max_gap": max_gap, "fixed_point_iterations": fp_iters, "steps": len(steps)}


def _implicit_step(op, F, v, h, tol, fp_tol, fp_max):
    w = v
    iters = 0
    gap = 0.0
    for k in range(1, fp_max + 1):
        w_new, info = op.solve(h, v.with_values(v.values - h * F.values(w.values)), tol)
        iters += info.iterations
        gap = max(gap, info.gap)
        delta = float(np.abs(w_new.values - w.values).max())
        size = float(np.abs(w_new.values).max())
        w = w_new
        if delta <= fp_tol * size or delta == 0.0:
            return w, SolveInfo(iters, gap), k
    raise SolverError(f"implicit fixed point stalled after {fp_max} iterations (last change {delta:.3e})", iterations=fp_max)


def resolvent_iterate(op: OperatorBackend, u0: GridFunction, t: float, n: int, tol: ResolventTolerance = DEFAULT_TOL) -> GridFunction:
    """``[J_{t/n}]^n u0``."""
    if not (t > 0):
        raise ConfigurationError("t must be positive")
    if int(n) != n or n < 1:
        raise ConfigurationError("n must be a positive integer")
    return _flow(op, u0, float(t), int(n), tol)[0]


def _refined(op, u0, t, refine, tol, **kw):
    if refine.fixed_n is not None:
        u, stats = _flow(op, u0, t, refine.fixed_n, tol, **kw)
        return u, dict(stats, n=refine.fixed_n, distance=None, converged=True)
    thresh = refine.tol * max(1.0, u0.norm(1))
    n = refine.n_start
    prev, _ = _flow(op, u0, t, n, tol, **kw)
    dist = np.inf
    while n < refine.n_max:
        n *= 2
        cur, stats = _flow(op, u0, t, n, tol, **kw)
        dist = (cur - prev).norm(1)
        if dist < thresh:
            return cur, dict(stats, n=n, distance=dist, converged=True)
        prev = cur
    if refine.strict:
        raise NonConvergenceError(
            f"refinement reached n = {n} at t = {t} with L1 distance {dist:.3e} >= {thresh:.3e}",
            n=n,
            distance=dist,
        )
    return prev, dict(stats, n=n, distance=dist, converged=False)


def _trajectory(op, u0, grid, refine, tol, **kw):
    grid = grid if isinstance(grid, TimeGrid) else TimeGrid(grid)
    if grid.times[0] != 0:
        raise ConfigurationError("time grid must start at t = 0")
    states, metas = [], []
    for t in grid.times:
        if t == 0:
            states.append(u0)
            metas.append({"n": 0, "iterations": 0, "max_gap": 0.0, "distance": 0.0, "converged": True})
            continue
        u, m = _refined(op, u0, float(t), refine, tol, **kw)
        states.append(u)
        metas.append(m)
    meta = {key: [m.get(key) for m in metas] for key in ("n", "iterations", "max_gap", "distance", "converged")}
    meta["rel_gap"] = tol.rel_gap
    meta["backend"] = op.name
    return Trajectory(grid, states, meta)


def evolve(op: OperatorBackend, u0: GridFunction, grid, refine: RefinePolicy = RefinePolicy(), tol: ResolventTolerance = DEFAULT_TOL) -> Trajectory:
    """States ``T_t u0`` on ``grid`` (each from ``u0``; ``t = 0`` returns ``u0`` itself)."""
    return _trajectory(op, u0, grid, refine, tol)


def evolve_forced(op, u0, f: ForcingTerm, grid, refine: RefinePolicy = RefinePolicy(), tol: ResolventTolerance = DEFAULT_TOL) -> Trajectory:
    """Forced flow ``u' + A u = f``; step forcing is resolved interval by interval."""
    grid = grid if isinstance(grid, TimeGrid) else TimeGrid(grid)
    if f.domain_id != op.domain.key:
        raise ConfigurationError("forcing and backend live on different domains")
    if grid.times[-1] > f.horizon * (1 + 1e-12):
        raise ConfigurationError(f"forcing is defined up to {f.horizon}, grid reaches {grid.times[-1]}")
    if f.kind == "step":
        inner = f.times[(f.times > 0) & (f.times < grid.times[-1])]
        for b in inner:
            if not np.any(np.abs(grid.times - b) <= 1e-12 * max(1.0, b)):
                raise ConfigurationError(f"time grid does not contain forcing breakpoint {b}")
    if f.is_zero():
        return evolve(op, u0, grid, refine, tol)
    return _trajectory(op, u0, grid, refine, tol, forcing=f)


def evolve_perturbed(op, F: CaratheodoryMap, u0, grid, refine: RefinePolicy = RefinePolicy(), tol: ResolventTolerance = DEFAULT_TOL, fp_tol: float = 1e-10) -> Trajectory:
    """Flow of ``u' + A u + F(u) = 0`` with fully implicit perturbation steps."""
    n0 = refine.fixed_n or refine.n_start
    grid = grid if isinstance(grid, TimeGrid) else TimeGrid(grid)
    if grid.times[-1] / n0 * F.omega >= 0.5:
        raise ConfigurationError(f"step {grid.times[-1] / n0} violates h * omega < 1/2 for omega = {F.omega}")
    return _trajectory(op, u0, grid, refine, tol, F=F, fp_tol=fp_tol)


def difference_quotient(op, u0, t: float, h: float, n: int = 1024, tol: ResolventTolerance = DEFAULT_TOL, forcing=None, F=None) -> GridFunction:
    """``(T_{t+h} u0 - T_t u0) / h`` with both states at the same ``n``."""
    if not (t > 0) or not (t + h > 0) or h == 0:
        raise ConfigurationError("need t > 0, t + h > 0 and h != 0")
    a, b = _pair(op, u0, t, h, n, tol, forcing, F)
    return b.with_values((b.values - a.values) / h)


def _pair(op, u0, t, h, n, tol, forcing=None, F=None):
    kw = {}
    if forcing is not None and not forcing.is_zero():
        kw["forcing"] = forcing
    if F is not None:
        kw["F"] = F
    a = _flow(op, u0, t, n, tol, **kw)[0]
    b = _flow(op, u0, t + h, n, tol, **kw)[0]
    return a, b


# --------------------------------------------------------------------------
# Gronwall-type constants


def gronwall_constant(omega: float, L: float, t: float, variant: str = "max") -> float:
    """Factor ``C`` in ``|d/dt T_t u0| <= C |u0| / t`` for perturbed flows.

    ``quotient``:   ``e^{wt} L [2 e^{2Lw int_0^t e^{-ws} ds} + w int_0^t e^{2Lw int_s^t e^{-wr} dr} ds]``
    ``derivative``: ``e^{wt} L [2 e^{Lw int_0^t s e^{-ws} ds} + w int_0^t e^{Lw int_s^t r e^{-wr} dr} ds]``
    ``max`` takes the larger of the two.  For ``w = 0`` every variant is ``2L``.
    """
    if variant not in GRONWALL_VARIANTS:
        raise ConfigurationError(f"unknown Gronwall variant {variant!r}")
    if omega < 0 or L < 0 or not (t > 0):
        raise ConfigurationError("need omega >= 0, L >= 0, t > 0")
    if variant == "max":
        return max(gronwall_constant(omega, L, t, "quotient"), gronwall_constant(omega, L, t, "derivative"))
    if omega == 0:
        return 2.0 * L
    if variant == "quotient":
        c = 2.0 * L * omega
        kern = lambda r: np.exp(-omega * r)  # noqa: E731
    else:
        c = L * omega
        kern = lambda r: r * np.exp(-omega * r)  # noqa: E731

    def inner(s):
        return integrate.quad(kern, s, t, epsabs=0.0, epsrel=1e-13, limit=200)[0]

    head = 2.0 * np.exp(c * inner(0.0))
    tail = integrate.quad(lambda s: np.exp(c * inner(s)), 0.0, t, epsabs=0.0, epsrel=1e-12, limit=200)[0]
    return float(np.exp(omega * t) * L * (head + omega * tail))
