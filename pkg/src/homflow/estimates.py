"""Regularity, decay and order estimates as pass/fail checks.

Every check returns :class:`InequalityReport` objects whose verdict is
``lhs <= rhs + slack_budget``.  Slack budgets come from the backend's declared
resolvent accuracy (round-off level for exact solvers, a multiple of the
duality-gap tolerance for iterative ones) unless a check has a documented
fixed budget.

Time derivatives are realized as finite quotients at ``h > 0``; the finite-h
decay form ``|T_{t+h} u0 - T_t u0| <= 2 (h/t) L e^{wt} |u0|`` needs no limit
and is the primary gate.  Both states of a quotient share the step count
``n``, which makes the zero-order homogeneity of the discrete flow exact.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .engine import ForcingTerm, OperatorBackend, _pair, gronwall_constant, resolvent_iterate
from .exceptions import ConfigurationError, PreconditionError
from .fractional import smoothing_exponents
from .grid import DEFAULT_TOL, GridFunction, ResolventTolerance, lp_norm
from .nemytskii import CaratheodoryMap

DEFAULT_N = 1024
K_LEVELS = 32
INFORMATIONAL_SLOPE_SLACK = 0.1


@dataclass
class InequalityReport:
    name: str
    lhs: float
    rhs: float
    slack_budget: float
    context: dict = field(default_factory=dict)

    def __post_init__(self):
        self.lhs = float(self.lhs)
        self.rhs = float(self.rhs)
        self.slack_budget = float(self.slack_budget)
        if not (np.isfinite(self.lhs) and np.isfinite(self.rhs) and np.isfinite(self.slack_budget)):
            raise ConfigurationError(f"report {self.name!r} has non-finite entries")

    @property
    def margin(self) -> float:
        return self.rhs - self.lhs

    @property
    def passed(self) -> bool:
        return self.lhs <= self.rhs + self.slack_budget

    @property
    def gating(self) -> bool:
        return bool(self.context.get("gating", True))

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "lhs": self.lhs,
            "rhs": self.rhs,
            "margin": self.margin,
            "pass": self.passed,
            "slack_budget": self.slack_budget,
            "context": _jsonable(self.context),
        }


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in sorted(obj.items())}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if np.isfinite(x) else repr(x)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def mass(u: GridFunction) -> float:
    """The mass functional ``sum m_i u_i``."""
    return u.mass()


def _ctx(op, **kw):
    out = {"backend": op.name}
    out.update(kw)
    return out


def _norm_label(p):
    return "inf" if p in (np.inf, "inf") else str(int(p)) if float(p).is_integer() else str(p)


def _require_nonneg(u0):
    if np.any(u0.values < 0):
        raise PreconditionError("initial datum must be nonnegative")


def _require_dissipative(op):
    if op.omega != 0:
        raise PreconditionError("check requires an accretive (omega = 0) backend")


def _check_h(t, h):
    if not (t > 0):
        raise PreconditionError("t must be positive")
    if not (0 < h <= t / 10 * (1 + 1e-12)):
        raise PreconditionError(f"need 0 < h <= t/10, got h = {h}, t = {t}")


def flow_pair(op, u0, t, h, n=DEFAULT_N, tol=DEFAULT_TOL, forcing=None, F=None):
    """``(T_t u0, T_{t+h} u0)`` at shared ``n``."""
    return _pair(op, u0, t, h, n, tol, forcing, F)


# --------------------------------------------------------------------------
# homogeneity


def check_resolvent_homogeneity(op: OperatorBackend, v: GridFunction, mu: float, lam: float, tol: ResolventTolerance = DEFAULT_TOL):
    """``|lam^{-1} J_{lam mu} v - J_mu(lam^{-1} v)|_inf`` against 0."""
    if not (lam > 0 and mu > 0):
        raise PreconditionError("lambda and mu must be positive")
    a = op.resolvent(lam * mu, v, tol)
    b = op.resolvent(mu, v.with_values(v.values / lam), tol)
    lhs = float(np.abs(a.values / lam - b.values).max())
    scale = max(1.0, float(np.abs(v.values).max()) / lam)
    return InequalityReport(
        "resolvent_homogeneity", lhs, 0.0, op.slack(tol) * scale,
        _ctx(op, mu=mu, lam=lam, rel_gap=tol.rel_gap, exact=op.exact),
    )


def semigroup_homogeneity_defect(op, u0, t, lam, n, tol=DEFAULT_TOL) -> float:
    a = resolvent_iterate(op, u0, lam * t, n, tol)
    b = resolvent_iterate(op, u0.with_values(u0.values / lam), t, n, tol)
    return lp_norm(a.values / lam - b.values, u0.cell_measure, 1)


def check_semigroup_homogeneity(op, u0, t, lam, n=4096, tol=DEFAULT_TOL, slack=1e-3):
    """``|lam^{-1} T_{lam t} u0 - T_t(lam^{-1} u0)|_1`` against 0, budget ``slack |u0|_1``."""
    if not (t > 0 and lam > 0):
        raise PreconditionError("t and lambda must be positive")
    lhs = semigroup_homogeneity_defect(op, u0, t, lam, n, tol)
    return InequalityReport(
        "semigroup_homogeneity", lhs, 0.0, slack * u0.norm(1), _ctx(op, t=t, lam=lam, n=n),
    )


# --------------------------------------------------------------------------
# decay


def check_global_decay(op, u0, t, h, p=1, n=DEFAULT_N, tol=DEFAULT_TOL, form="finite_h", states=None, rel_slack=1e-6):
    """Decay of the time derivative.

    ``finite_h``: ``|T_{t+h} u0 - T_t u0|_p <= 2 (h/t) L e^{wt} |u0|_p``.
    ``quotient``: ``|(T_{t+h} u0 - T_t u0)/h|_p <= 2 L e^{wt} |u0|_p / t``.
    """
    if form not in ("finite_h", "quotient"):
        raise ConfigurationError(f"unknown decay form {form!r}")
    _check_h(t, h)
    a, b = states if states is not None else flow_pair(op, u0, t, h, n, tol)
    diff = lp_norm(b.values - a.values, u0.cell_measure, p)
    bound = 2.0 * op.lipschitz_L * np.exp(op.omega * t) * u0.norm(p) / t
    if form == "finite_h":
        lhs, rhs = diff, bound * h
    else:
        lhs, rhs = diff / h, bound
    slack = rel_slack * rhs
    if not op.exact:
        slack += op.slack(tol) * max(1.0, u0.norm(p)) * (1.0 if form == "finite_h" else 1.0 / h)
    return InequalityReport(
        f"global_decay_{form}[p={_norm_label(p)}]", lhs, rhs, slack, _ctx(op, t=t, h=h, n=n, p=_norm_label(p)),
    )


def pointwise_excess(op, u0, t, h, n=DEFAULT_N, tol=DEFAULT_TOL, states=None) -> np.ndarray:
    """Per-cell ``(T_{t+h} u0 - T_t u0)/h - T_t u0 / t``."""
    a, b = states if states is not None else flow_pair(op, u0, t, h, n, tol)
    return (b.values - a.values) / h - a.values / t


def check_pointwise_bound(op, u0, t, h, n=DEFAULT_N, tol=DEFAULT_TOL, states=None):
    """``(T_{t+h} u0 - T_t u0)/h <= T_t u0 / t`` for ``u0 >= 0``."""
    _require_nonneg(u0)
    if not op.completely_accretive:
        raise PreconditionError("pointwise bound needs an order-preserving backend")
    _check_h(t, h)
    ex = pointwise_excess(op, u0, t, h, n, tol, states)
    scale = float(np.abs(u0.values).max()) / t
    return InequalityReport(
        "pointwise_bound", float(ex.max()), 0.0, 1e-3 * scale,
        _ctx(op, t=t, h=h, n=n, tightest=float(np.abs(ex).min()) if ex.size else 0.0),
    )


def check_mass_estimates(op, u0, t, h, n=DEFAULT_N, tol=DEFAULT_TOL, states=None, slack=1e-8):
    """Conservation, the ``(h/t)`` bound on the positive/negative mass change and its balance."""
    if not op.mass_conserving:
        raise PreconditionError("mass estimates need a mass-conserving (Neumann) backend")
    _require_nonneg(u0)
    _check_h(t, h)
    a, b = states if states is not None else flow_pair(op, u0, t, h, n, tol)
    m = u0.cell_measure
    lam0 = u0.mass()
    d = b.values - a.values
    pos = float(np.dot(m, np.maximum(d, 0.0)))
    neg = float(np.dot(m, np.maximum(-d, 0.0)))
    ctx = _ctx(op, t=t, h=h, n=n, mass0=lam0, positive=pos, negative=neg)
    return [
        InequalityReport("mass_conservation", abs(a.mass() - lam0), 0.0, slack, ctx),
        InequalityReport("mass_change_bound", max(pos, neg), (h / t) * lam0, slack, ctx),
        InequalityReport("mass_change_balance", abs(pos - neg), 0.0, slack, ctx),
    ]


def check_contraction(op, u0, v0, t, p=1, n=DEFAULT_N, tol=DEFAULT_TOL):
    _require_dissipative(op)
    a = resolvent_iterate(op, u0, t, n, tol)
    b = resolvent_iterate(op, v0, t, n, tol)
    lhs = lp_norm(a.values - b.values, u0.cell_measure, p)
    rhs = lp_norm(u0.values - v0.values, u0.cell_measure, p)
    return InequalityReport(
        f"contraction[p={_norm_label(p)}]", lhs, rhs, _pair_slack(op, tol, u0, v0, n), _ctx(op, t=t, n=n),
    )


def _pair_slack(op, tol, u0, v0, n):
    scale = max(1.0, float(np.abs(u0.values).max()), float(np.abs(v0.values).max()))
    base = 1e-10 if op.exact else op.slack(tol)
    return base * scale


def k_grid(spread: float, levels: int = K_LEVELS) -> np.ndarray:
    """``0`` followed by ``levels - 1`` log-spaced levels up to ``spread``."""
    if spread <= 0:
        return np.zeros(1)
    return np.concatenate([[0.0], spread * np.logspace(-6, 0, levels - 1)])


def level_excess(a, b, weights, ks) -> float:
    """Largest violation of ``a << b`` on the level grid ``ks``."""
    worst = -np.inf
    for k in ks:
        worst = max(
            worst,
            float(np.dot(weights, np.maximum(a - k, 0.0)) - np.dot(weights, np.maximum(b - k, 0.0))),
            float(np.dot(weights, np.maximum(-a - k, 0.0)) - np.dot(weights, np.maximum(-b - k, 0.0))),
        )
    return worst


def check_complete_contraction(op, u0, v0, t, n=DEFAULT_N, tol=DEFAULT_TOL, levels=K_LEVELS):
    """``T_t u0 - T_t v0 << u0 - v0`` tested on a level grid."""
    _require_dissipative(op)
    a = resolvent_iterate(op, u0, t, n, tol)
    b = resolvent_iterate(op, v0, t, n, tol)
    d0 = u0.values - v0.values
    ks = k_grid(float(np.abs(d0).max()), levels)
    lhs = level_excess(a.values - b.values, d0, u0.cell_measure, ks)
    return InequalityReport(
        "complete_contraction", lhs, 0.0, _pair_slack(op, tol, u0, v0, n),
        _ctx(op, t=t, n=n, levels=int(ks.size)),
    )


def check_order_preservation(op, u0, v0, t, n=DEFAULT_N, tol=DEFAULT_TOL):
    """``u0 <= v0`` implies ``T_t u0 <= T_t v0``; lhs is ``max(T_t u0 - T_t v0)``."""
    if np.any(u0.values > v0.values):
        raise PreconditionError("order check needs u0 <= v0")
    a = resolvent_iterate(op, u0, t, n, tol)
    b = resolvent_iterate(op, v0, t, n, tol)
    return InequalityReport(
        "order_preservation", float((a.values - b.values).max()), 0.0, _pair_slack(op, tol, u0, v0, n),
        _ctx(op, t=t, n=n),
    )


def check_perturbed_decay(op, F: CaratheodoryMap, u0, t, h, p=1, n=DEFAULT_N, tol=DEFAULT_TOL, states=None, rel_slack=1e-6):
    """``|(S_{t+h} u0 - S_t u0)/h|_p <= C(w, 1, t) |u0|_p / t`` for the perturbed flow ``S``."""
    _check_h(t, h)
    a, b = states if states is not None else flow_pair(op, u0, t, h, n, tol, F=F)
    lhs = lp_norm(b.values - a.values, u0.cell_measure, p) / h
    const = gronwall_constant(F.omega, 1.0, t, "max")
    rhs = const * u0.norm(p) / t
    slack = rel_slack * rhs
    if not op.exact:
        slack += op.slack(tol) * max(1.0, u0.norm(p)) / h
    return InequalityReport(
        f"perturbed_decay[p={_norm_label(p)}]", lhs, rhs, slack,
        _ctx(op, t=t, h=h, n=n, omega=F.omega, family=F.family, gronwall=const),
    )


def forced_decay_bound(op, u0, f: ForcingTerm, t, p=1, sub=64) -> float:
    """``(L e^{wt}/t) [2|u0| + int_0^t e^{-ws} s |f'(s)| ds + int_0^t e^{-ws} |f(s)| ds]``."""
    if f.kind != "sampled" or f.derivatives is None:
        raise PreconditionError("forced decay needs sampled forcing with a derivative table")
    knots = np.concatenate([f.times[f.times < t], [t]])
    pts = np.unique(np.concatenate([np.linspace(a, b, sub + 1) for a, b in zip(knots[:-1], knots[1:])]))
    w = u0.cell_measure
    fn = np.array([lp_norm(f.at(s), w, p) for s in pts])
    dn = np.array([lp_norm(f.derivative_at(s), w, p) for s in pts])
    damp = np.exp(-op.omega * pts)
    integral = np.trapezoid(damp * pts * dn, pts) + np.trapezoid(damp * fn, pts)
    return float(op.lipschitz_L * np.exp(op.omega * t) / t * (2.0 * u0.norm(p) + integral))


def check_forced_decay(op, u0, f: ForcingTerm, t, h, p=1, n=DEFAULT_N, tol=DEFAULT_TOL, states=None, rel_slack=1e-6):
    if f.kind != "sampled" or f.derivatives is None:
        raise PreconditionError("forced decay needs sampled forcing with a derivative table")
    _check_h(t, h)
    a, b = states if states is not None else flow_pair(op, u0, t, h, n, tol, forcing=f)
    lhs = lp_norm(b.values - a.values, u0.cell_measure, p) / h
    rhs = forced_decay_bound(op, u0, f, t, p)
    slack = rel_slack * rhs
    if not op.exact:
        slack += op.slack(tol) * max(1.0, u0.norm(p)) / h
    return InequalityReport(f"forced_decay[p={_norm_label(p)}]", lhs, rhs, slack, _ctx(op, t=t, h=h, n=n))


# --------------------------------------------------------------------------
# smoothing exponents (informational)


def fit_log_slope(t, y) -> float:
    """Least-squares slope of ``log y`` against ``log t``."""
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    if t.size < 2 or np.any(t <= 0) or np.any(y <= 0):
        raise ConfigurationError("slope fit needs >= 2 positive samples")
    return float(np.polyfit(np.log(t), np.log(y), 1)[0])


def check_smoothing_exponent(op, u0, times, s, d=1, q=2.0, n=256, tol=DEFAULT_TOL, eta=1e-2):
    """Fitted decay slopes of ``|T_t u0|_{d/(d-s)}`` and ``|du/dt|_inf`` (non-gating)."""
    times = np.asarray(times, dtype=float)
    if times.size < 8 or np.any(times <= 0):
        raise PreconditionError("need at least 8 positive times")
    ex = smoothing_exponents(s, d, q)
    ctx = _ctx(op, gating=False, s=s, d=d, q=q, n=n, expected_quotient_slope=ex.quotient_exponent,
               expected_lr_slope=-1.0, r=ex.r, delta=ex.delta, gamma=ex.gamma)
    if not np.any(u0.values):
        ctx["skipped"] = "equilibrium initial datum"
        return InequalityReport("smoothing_exponent", 0.0, 0.0, 0.0, ctx)
    lr, dq = [], []
    for t in times:
        a, b = flow_pair(op, u0, t, eta * t, n, tol)
        lr.append(a.norm(ex.r))
        dq.append(float(np.abs(b.values - a.values).max()) / (eta * t))
    lr, dq = np.asarray(lr), np.asarray(dq)
    if np.any(lr <= 0) or np.any(dq <= 0):
        ctx["skipped"] = "flow reached zero inside the time window"
        return InequalityReport("smoothing_exponent", 0.0, 0.0, 0.0, ctx)
    slope_q = fit_log_slope(times, dq)
    ctx.update(
        quotient_slope=slope_q,
        scaled_quotient_slope=fit_log_slope(times, times * dq),
        lr_slope=fit_log_slope(times, lr),
        times=times.tolist(),
    )
    # the bound caps the blow-up rate: the fitted slope should not fall below the predicted one
    return InequalityReport("smoothing_exponent", ex.quotient_exponent, slope_q, INFORMATIONAL_SLOPE_SLACK, ctx)
