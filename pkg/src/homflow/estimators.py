"""scikit-learn style transformers over batches of grid functions.

Each row of ``X`` is one grid function (flattened in C order of the domain
shape).  ``fit`` only validates the input width and builds the backend, so
the transformers compose with :class:`sklearn.pipeline.Pipeline`.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .engine import fractional_backend, resolvent_iterate, tv_backend
from .exceptions import ConfigurationError
from .grid import Domain, ResolventTolerance


def _domain(kind, lengths, cells, boundary):
    return Domain(kind, tuple(lengths), tuple(cells), boundary)


class _GridTransformer(TransformerMixin, BaseEstimator):
    def _backend(self, domain):
        raise NotImplementedError

    def fit(self, X, y=None):
        X = check_array(X, dtype=float)
        dom = _domain(self.kind, self.lengths, self.cells, self.boundary)
        if X.shape[1] != dom.size:
            raise ConfigurationError(f"expected {dom.size} features (cells), got {X.shape[1]}")
        self.domain_ = dom
        self.backend_ = self._backend(dom)
        self.n_features_in_ = X.shape[1]
        return self

    def _rows(self, X):
        check_is_fitted(self, "backend_")
        X = check_array(X, dtype=float)
        if X.shape[1] != self.n_features_in_:
            raise ConfigurationError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        return [self.domain_.grid_function(row) for row in X]

    def _tol(self):
        return ResolventTolerance(rel_gap=self.rel_gap)


class TVResolvent(_GridTransformer):
    """Rows ``v`` mapped to ``J_mu v`` for the TV operator."""

    def __init__(self, mu=0.05, kind="interval_1d", lengths=(1.0,), cells=(100,), boundary="neumann", rel_gap=1e-8):
        self.mu = mu
        self.kind = kind
        self.lengths = lengths
        self.cells = cells
        self.boundary = boundary
        self.rel_gap = rel_gap

    def _backend(self, domain):
        return tv_backend(domain)

    def transform(self, X):
        tol = self._tol()
        return np.stack([self.backend_.resolvent(self.mu, v, tol).values for v in self._rows(X)])


class FractionalResolvent(_GridTransformer):
    """Rows ``v`` mapped to ``J_mu v`` for the fractional 1-Laplacian."""

    def __init__(self, mu=0.05, s=0.5, kind="interval_1d", lengths=(1.0,), cells=(16,), collar_cells=None, rel_gap=1e-8):
        self.mu = mu
        self.s = s
        self.kind = kind
        self.lengths = lengths
        self.cells = cells
        self.collar_cells = collar_cells
        self.rel_gap = rel_gap

    boundary = "dirichlet_zero"

    def _backend(self, domain):
        return fractional_backend(domain, self.s, self.collar_cells)

    def transform(self, X):
        tol = self._tol()
        return np.stack([self.backend_.resolvent(self.mu, v, tol).values for v in self._rows(X)])


class SemigroupFlow(_GridTransformer):
    """Rows ``u0`` mapped to ``[J_{t/n}]^n u0`` (TV or fractional backend)."""

    def __init__(self, t=0.05, n=256, operator="tv", s=0.5, kind="interval_1d", lengths=(1.0,), cells=(100,),
                 boundary="neumann", collar_cells=None, rel_gap=1e-8):
        self.t = t
        self.n = n
        self.operator = operator
        self.s = s
        self.kind = kind
        self.lengths = lengths
        self.cells = cells
        self.boundary = boundary
        self.collar_cells = collar_cells
        self.rel_gap = rel_gap

    def _backend(self, domain):
        if self.operator == "tv":
            return tv_backend(domain)
        if self.operator == "fractional":
            return fractional_backend(domain, self.s, self.collar_cells)
        raise ConfigurationError(f"unknown operator {self.operator!r}")

    def transform(self, X):
        tol = self._tol()
        return np.stack([resolvent_iterate(self.backend_, u, self.t, self.n, tol).values for u in self._rows(X)])
