"""Discrete domains, grid functions, time grids and solver tolerances."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .exceptions import ConfigurationError

KINDS = ("interval_1d", "grid_2d")
BOUNDARIES = ("neumann", "dirichlet_zero")


@dataclass(frozen=True)
class Domain:
    """Uniform tensor grid on a box ``[0, L_1] x ... x [0, L_d]``.

    Values of a grid function on a 2D domain are stored flattened in C order
    of ``shape`` (first axis slowest).
    """

    kind: str
    lengths: tuple[float, ...]
    cells: tuple[int, ...]
    boundary: str = "neumann"

    def __post_init__(self):
        object.__setattr__(self, "lengths", tuple(float(x) for x in self.lengths))
        object.__setattr__(self, "cells", tuple(int(c) for c in self.cells))
        if self.kind not in KINDS:
            raise ConfigurationError(f"unknown domain kind {self.kind!r}")
        if self.boundary not in BOUNDARIES:
            raise ConfigurationError(f"unknown boundary {self.boundary!r}")
        ndim = 1 if self.kind == "interval_1d" else 2
        if len(self.lengths) != ndim or len(self.cells) != ndim:
            raise ConfigurationError(
                f"{self.kind} needs {ndim} lengths and cell counts, got "
                f"{self.lengths} and {self.cells}"
            )
        if any(not np.isfinite(x) or x <= 0 for x in self.lengths):
            raise ConfigurationError("domain lengths must be positive and finite")
        if any(c < 1 for c in self.cells):
            raise ConfigurationError("cell counts must be >= 1")

    @classmethod
    def interval(cls, length=1.0, cells=100, boundary="neumann"):
        return cls("interval_1d", (length,), (cells,), boundary)

    @classmethod
    def square(cls, length=1.0, cells=8, boundary="neumann"):
        return cls("grid_2d", (length, length), (cells, cells), boundary)

    @property
    def ndim(self) -> int:
        return len(self.cells)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.cells

    @property
    def size(self) -> int:
        return int(np.prod(self.cells))

    @property
    def widths(self) -> tuple[float, ...]:
        return tuple(L / c for L, c in zip(self.lengths, self.cells))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.widths))

    @property
    def volume(self) -> float:
        return float(np.prod(self.lengths))

    @property
    def key(self) -> str:
        dims = "x".join(f"{L!r}:{c}" for L, c in zip(self.lengths, self.cells))
        return f"{self.kind}[{dims}]/{self.boundary}"

    def with_boundary(self, boundary: str) -> "Domain":
        return Domain(self.kind, self.lengths, self.cells, boundary)

    def centers(self) -> np.ndarray:
        """Cell centres, shape ``(size, ndim)``."""
        axes = [(np.arange(c) + 0.5) * w for c, w in zip(self.cells, self.widths)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def cell_measure(self) -> np.ndarray:
        return np.full(self.size, self.cell_volume)

    def grid_function(self, values) -> "GridFunction":
        return GridFunction(np.asarray(values, dtype=float).ravel(), self.cell_measure(), self.key)

    def constant(self, c: float) -> "GridFunction":
        return self.grid_function(np.full(self.size, float(c)))

    def zeros(self) -> "GridFunction":
        return self.constant(0.0)

    def indicator(self, a: float, b: float, axis: int = 0) -> "GridFunction":
        """Indicator of the slab ``a <= x_axis <= b`` evaluated at cell centres."""
        x = self.centers()[:, axis]
        return self.grid_function(((x >= a) & (x <= b)).astype(float))

    def box_indicator(self, lower: Sequence[float], upper: Sequence[float]) -> "GridFunction":
        x = self.centers()
        inside = np.all((x >= np.asarray(lower)) & (x <= np.asarray(upper)), axis=1)
        return self.grid_function(inside.astype(float))


@dataclass(frozen=True, eq=False)
class GridFunction:
    """Immutable snapshot of a real function on a :class:`Domain`."""

    values: np.ndarray
    cell_measure: np.ndarray
    domain_id: str

    def __post_init__(self):
        values = np.array(self.values, dtype=float).ravel()
        measure = np.array(self.cell_measure, dtype=float).ravel()
        if values.size < 1 or values.shape != measure.shape:
            raise ConfigurationError(
                f"values and cell_measure must have equal length >= 1, got "
                f"{values.shape} and {measure.shape}"
            )
        if not np.all(measure > 0):
            raise ConfigurationError("cell_measure entries must be positive")
        values.setflags(write=False)
        measure.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "cell_measure", measure)

    def __len__(self):
        return self.values.size

    def with_values(self, values) -> "GridFunction":
        return GridFunction(values, self.cell_measure, self.domain_id)

    def norm(self, p=1) -> float:
        return lp_norm(self.values, self.cell_measure, p)

    def mass(self) -> float:
        return float(np.dot(self.cell_measure, self.values))

    def mean(self) -> float:
        return self.mass() / float(self.cell_measure.sum())

    def same_domain(self, other: "GridFunction") -> bool:
        return self.domain_id == other.domain_id

    def __sub__(self, other: "GridFunction") -> "GridFunction":
        _require_same_domain(self, other)
        return self.with_values(self.values - other.values)

    def __add__(self, other: "GridFunction") -> "GridFunction":
        _require_same_domain(self, other)
        return self.with_values(self.values + other.values)

    def scale(self, factor: float) -> "GridFunction":
        return self.with_values(factor * self.values)

    def identical(self, other: "GridFunction") -> bool:
        """Bitwise equality of values and metadata."""
        return (
            self.domain_id == other.domain_id
            and self.values.tobytes() == other.values.tobytes()
            and self.cell_measure.tobytes() == other.cell_measure.tobytes()
        )


def _require_same_domain(a: GridFunction, b: GridFunction):
    if a.domain_id != b.domain_id:
        raise ConfigurationError(f"domain mismatch: {a.domain_id} vs {b.domain_id}")


def lp_norm(values, weights, p=1) -> float:
    """Weighted L^p norm ``(sum w |u|^p)^(1/p)``; ``p`` may be ``inf``."""
    values = np.abs(np.asarray(values, dtype=float))
    if p == np.inf or p == "inf":
        return float(values.max()) if values.size else 0.0
    p = float(p)
    if p < 1:
        raise ConfigurationError(f"norm exponent must be >= 1, got {p}")
    if p == 1.0:
        return float(np.dot(weights, values))
    scale = values.max()
    if scale == 0:
        return 0.0
    return float(scale * np.dot(weights, (values / scale) ** p) ** (1.0 / p))


@dataclass(frozen=True)
class TimeGrid:
    times: np.ndarray

    def __post_init__(self):
        times = np.array(self.times, dtype=float).ravel()
        if times.size < 1:
            raise ConfigurationError("time grid must contain at least one time")
        if not np.all(np.isfinite(times)):
            raise ConfigurationError("time grid entries must be finite")
        if times[0] < 0:
            raise ConfigurationError("time grid must start at t >= 0")
        if np.any(np.diff(times) <= 0):
            raise ConfigurationError("time grid must be strictly increasing")
        times.setflags(write=False)
        object.__setattr__(self, "times", times)

    def __len__(self):
        return self.times.size

    def __iter__(self):
        return iter(self.times.tolist())


@dataclass(frozen=True)
class ResolventTolerance:
    """Stopping rule for iterative resolvents (ignored by exact solvers)."""

    mode: str = "duality_gap"
    rel_gap: float = 1e-8
    max_iters: int = 200_000

    def __post_init__(self):
        if self.mode not in ("exact", "duality_gap"):
            raise ConfigurationError(f"unknown tolerance mode {self.mode!r}")
        if not (self.rel_gap > 0):
            raise ConfigurationError("rel_gap must be positive")
        if self.max_iters < 1:
            raise ConfigurationError("max_iters must be >= 1")


DEFAULT_TOL = ResolventTolerance()


@dataclass
class SolveInfo:
    """Per-call solver diagnostics attached to trajectories."""

    iterations: int = 0
    gap: float = 0.0
    extra: dict = field(default_factory=dict)
