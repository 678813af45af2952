"""Lipschitz Caratheodory perturbations ``F(u)(x) = f(x, u(x))`` with ``f(x, 0) = 0``."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .exceptions import ConfigurationError, InvariantBreachError
from .grid import GridFunction

FAMILIES = ("zero", "linear", "saturating", "sine", "custom")


@dataclass(frozen=True)
class CaratheodoryMap:
    """Pointwise rule ``f(i, a)``, vectorized over cells.

    ``rule(index, values)`` receives the cell index array and the value array
    and must return an array of the same shape.
    """

    rule: Callable[[np.ndarray, np.ndarray], np.ndarray]
    omega: float
    family: str = "custom"
    params: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigurationError(f"unknown perturbation family {self.family!r}")
        if not (self.omega >= 0) or not np.isfinite(self.omega):
            raise ConfigurationError("omega must be a finite nonnegative number")

    def __call__(self, u: GridFunction) -> GridFunction:
        return apply(self, u)

    def values(self, arr: np.ndarray) -> np.ndarray:
        arr = np.asarray(arr, dtype=float)
        return np.asarray(self.rule(np.arange(arr.size), arr), dtype=float)


def apply(F: CaratheodoryMap, u: GridFunction) -> GridFunction:
    return u.with_values(F.values(u.values))


def zero_map() -> CaratheodoryMap:
    return CaratheodoryMap(lambda i, a: np.zeros_like(a), 0.0, "zero")


def linear_map(omega: float) -> CaratheodoryMap:
    """``f(x, u) = omega * u``."""
    omega = float(omega)
    return CaratheodoryMap(lambda i, a: omega * a, omega, "linear", {"omega": omega})


def saturating_map(omega: float, scale: float = 1.0, profile=None) -> CaratheodoryMap:
    """``f(x, u) = omega * c(x) * scale * tanh(u / scale)`` with ``0 <= c(x) <= 1``.

    ``profile`` is an optional array of per-cell factors ``c``; the Lipschitz
    constant in ``u`` is ``omega * max c``.
    """
    omega = float(omega)
    scale = float(scale)
    if scale <= 0:
        raise ConfigurationError("saturation scale must be positive")
    prof = None if profile is None else np.asarray(profile, dtype=float)
    if prof is not None and (np.any(prof < 0) or np.any(prof > 1)):
        raise ConfigurationError("saturation profile must lie in [0, 1]")

    def rule(i, a):
        out = omega * scale * np.tanh(a / scale)
        return out if prof is None else prof[i] * out

    return CaratheodoryMap(rule, omega, "saturating", {"omega": omega, "scale": scale})


def sine_map(omega: float) -> CaratheodoryMap:
    """``f(x, u) = omega * sin(u)``."""
    omega = float(omega)
    return CaratheodoryMap(lambda i, a: omega * np.sin(a), omega, "sine", {"omega": omega})


def from_config(family: str, omega: float = 0.0, **params) -> CaratheodoryMap:
    if family == "zero":
        return zero_map()
    if family == "linear":
        return linear_map(omega)
    if family == "saturating":
        return saturating_map(omega, **params)
    if family == "sine":
        return sine_map(omega)
    raise ConfigurationError(f"perturbation family {family!r} cannot be built from config")


def verify_lipschitz(F: CaratheodoryMap, probes: int = 1000, seed: int = 0, n_cells: int = 1, radius: float = 1.0) -> float:
    """Randomized certificate of the declared Lipschitz constant.

    Draws ``probes`` pairs per cell uniformly from ``[-2 radius, 2 radius]``
    with a fixed seed and returns the largest difference quotient.  Also
    checks ``f(i, 0) = 0``.  Raises :class:`InvariantBreachError` naming the
    witness when either property fails.
    """
    if probes < 100:
        raise ConfigurationError("at least 100 probes are required")
    rng = np.random.default_rng(seed)
    idx = np.repeat(np.arange(n_cells), probes)
    at_zero = np.asarray(F.rule(np.arange(n_cells), np.zeros(n_cells)), dtype=float)
    if np.any(at_zero != 0):
        k = int(np.flatnonzero(at_zero)[0])
        raise InvariantBreachError(f"f({k}, 0) = {at_zero[k]!r} != 0", witness=(k, 0.0))
    r = 2.0 * radius
    a = rng.uniform(-r, r, idx.size)
    b = rng.uniform(-r, r, idx.size)
    fa = np.asarray(F.rule(idx, a), dtype=float)
    fb = np.asarray(F.rule(idx, b), dtype=float)
    diff = np.abs(a - b)
    ok = diff > 0
    q = np.zeros_like(diff)
    q[ok] = np.abs(fa[ok] - fb[ok]) / diff[ok]
    k = int(np.argmax(q))
    est = float(q[k])
    if est > F.omega * (1 + 1e-12):
        raise InvariantBreachError(
            f"Lipschitz bound {F.omega} violated: quotient {est} at cell {idx[k]} "
            f"between {a[k]!r} and {b[k]!r}",
            witness=(int(idx[k]), float(a[k]), float(b[k])),
        )
    return est
