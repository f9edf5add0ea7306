"""Problem types and objective evaluators.

The dataclasses here are the validated configuration and result carriers;
heavy numerics live in ``pattern`` and ``refine``. The objective functions
are used for convergence traces, restart scoring, and as independent checks
in the test-suite.

Index conventions used everywhere in the package:

* Views are 0-based in code. For a view pair (r, s) with r < s the stored
  cross-covariance is C_rs = (1/n) X_r.T X_s with shape (p_r, p_s).
* ``oriented_cross_covariance(covs, a, b)`` returns the (p_a, p_b) matrix
  for any ordered pair, transposing when a > b.
* Per-direction weights mu are strictly decreasing positives; N = diag(mu).
* The hinge argument matrix for a target view s is
  A = sum_{r != s} oriented(s, r) @ Z_r, shape (p_s, d): column j holds the
  aggregate coefficients of the j-th direction of view s.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ConfigError, DegenerateCovariate, DimensionError
from .linalg import pearson

__all__ = [
    "ViewMatrix",
    "SpectralWeights",
    "SparsityParams",
    "MultiViewSparsityParams",
    "DirectedConfig",
    "SparsityPattern",
    "FitResult",
    "oriented_cross_covariance",
    "objective_trace_block",
    "objective_l1_surrogate",
    "objective_l0_surrogate",
    "objective_multiview_surrogate",
    "objective_directed_surrogate",
    "canonical_correlations",
]

MEAN_TOL = 1e-10
SD_TOL = 1e-8
UNIT_TOL = 1e-8


def as_data(x):
    """Underlying ndarray of a ViewMatrix, or the array itself."""
    return x.data if isinstance(x, ViewMatrix) else np.asarray(x, dtype=np.float64)


def as_mu(weights):
    """Weight vector of a SpectralWeights, or the array itself."""
    if isinstance(weights, SpectralWeights):
        return weights.mu
    return np.asarray(weights, dtype=np.float64)


@dataclass
class ViewMatrix:
    """One data view: n samples by p named features.

    ``standardized`` asserts that every non-constant column has mean within
    1e-10 of zero and sample sd (divisor n - 1) within 1e-8 of one;
    this is checked at construction.
    """

    data: np.ndarray
    feature_names: list
    standardized: bool = False
    constant_columns: tuple = ()

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 2:
            raise DimensionError(f"view data must be 2-d, got ndim={self.data.ndim}")
        n, p = self.data.shape
        if len(self.feature_names) != p:
            raise DimensionError(
                f"{len(self.feature_names)} feature names for {p} columns"
            )
        if not np.all(np.isfinite(self.data)):
            raise ConfigError("view data contains non-finite values")
        bad = [c for c in self.constant_columns if not 0 <= c < p]
        if bad:
            raise ConfigError(f"constant column indices out of range: {bad}")
        if self.standardized and n >= 2:
            keep = np.setdiff1d(np.arange(p), np.asarray(self.constant_columns, int))
            if keep.size:
                sub = self.data[:, keep]
                if np.abs(sub.mean(axis=0)).max() > MEAN_TOL:
                    raise ConfigError("standardized view has a column mean off zero")
                if np.abs(sub.std(axis=0, ddof=1) - 1.0).max() > SD_TOL:
                    raise ConfigError("standardized view has a column sd off one")

    @property
    def n(self):
        return self.data.shape[0]

    @property
    def p(self):
        return self.data.shape[1]


@dataclass
class SpectralWeights:
    """Strictly decreasing positive per-direction weights mu_1 > ... > mu_d."""

    mu: np.ndarray

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=np.float64).ravel()
        if self.mu.size == 0:
            raise ConfigError("weights must be non-empty")
        if not np.all(np.isfinite(self.mu)) or np.any(self.mu <= 0):
            raise ConfigError("weights must be finite and positive")
        if np.any(np.diff(self.mu) >= 0):
            raise ConfigError("weights must be strictly decreasing")

    @classmethod
    def default(cls, d):
        """mu_j = 1 - (j - 1) / (2 d) for j = 1..d."""
        if d < 1:
            raise ConfigError(f"need d >= 1, got {d}")
        return cls(1.0 - np.arange(d) / (2.0 * d))

    @property
    def d(self):
        return self.mu.size

    @property
    def matrix(self):
        return np.diag(self.mu)


def _gamma_vector(g, d, name):
    g = np.asarray(g, dtype=np.float64)
    if g.ndim == 0:
        g = np.full(d, float(g))
    g = g.ravel()
    if g.size != d:
        raise ConfigError(f"{name} must have length d={d}, got {g.size}")
    if not np.all(np.isfinite(g)) or np.any(g < 0):
        raise ConfigError(f"{name} must be finite and non-negative")
    return g


@dataclass
class SparsityParams:
    """Per-direction non-negative thresholds for the two-view problem."""

    gamma1: np.ndarray
    gamma2: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.gamma1).ravel().size
        self.gamma1 = _gamma_vector(self.gamma1, d, "gamma1")
        self.gamma2 = _gamma_vector(self.gamma2, d, "gamma2")

    @classmethod
    def broadcast(cls, gamma1, gamma2, d):
        return cls(_gamma_vector(gamma1, d, "gamma1"), _gamma_vector(gamma2, d, "gamma2"))

    @property
    def d(self):
        return self.gamma1.size


@dataclass
class MultiViewSparsityParams:
    """Per-direction m x m threshold matrices, zero diagonal.

    ``gammas[j, s, r]`` regulates the sparsity of direction j of view s in
    relation to view r; the support threshold for view s sums the row over
    r != s.
    """

    gammas: np.ndarray

    def __post_init__(self):
        self.gammas = np.asarray(self.gammas, dtype=np.float64)
        if self.gammas.ndim != 3 or self.gammas.shape[1] != self.gammas.shape[2]:
            raise ConfigError("gammas must have shape (d, m, m)")
        if not np.all(np.isfinite(self.gammas)) or np.any(self.gammas < 0):
            raise ConfigError("gammas must be finite and non-negative")
        diag = self.gammas[:, np.arange(self.m), np.arange(self.m)]
        if np.any(diag != 0):
            raise ConfigError("gammas must have zero diagonals")

    @classmethod
    def uniform(cls, gamma, m, d):
        """Fill every off-diagonal entry of each per-direction matrix."""
        g = _gamma_vector(gamma, d, "gamma")
        out = np.zeros((d, m, m))
        off = ~np.eye(m, dtype=bool)
        for j in range(d):
            out[j][off] = g[j]
        return cls(out)

    @property
    def d(self):
        return self.gammas.shape[0]

    @property
    def m(self):
        return self.gammas.shape[1]

    def target_threshold(self, s):
        """Vector over directions of sum_{r != s} gammas[j, s, r]."""
        return self.gammas[:, s, :].sum(axis=1)


@dataclass
class DirectedConfig:
    """Outcome columns and their per-direction coupling strengths.

    ``y`` is n x d with unit-norm columns (enforced); eps1/eps2 weigh the
    pull of each view's directions toward the outcome columns.
    """

    y: np.ndarray
    eps1: np.ndarray
    eps2: np.ndarray

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=np.float64)
        if self.y.ndim == 1:
            self.y = self.y[:, None]
        if self.y.ndim != 2:
            raise ConfigError("y must be a vector or matrix")
        d = self.y.shape[1]
        self.eps1 = _gamma_vector(self.eps1, d, "eps1")
        self.eps2 = _gamma_vector(self.eps2, d, "eps2")
        norms = np.linalg.norm(self.y, axis=0)
        if np.any(np.abs(norms - 1.0) > UNIT_TOL):
            raise ConfigError("outcome columns must have unit Euclidean norm")

    @classmethod
    def normalized(cls, y, eps1, eps2):
        """Normalize outcome columns to unit length before validation."""
        y = np.asarray(y, dtype=np.float64)
        if y.ndim == 1:
            y = y[:, None]
        norms = np.linalg.norm(y, axis=0)
        if np.any(norms == 0.0):
            raise ConfigError("outcome columns must be non-zero")
        return cls(y / norms, eps1, eps2)

    @property
    def d(self):
        return self.y.shape[1]


@dataclass
class SparsityPattern:
    """Boolean p x d mask; True marks an active entry."""

    mask: np.ndarray

    def __post_init__(self):
        self.mask = np.asarray(self.mask)
        if self.mask.dtype != bool:
            vals = np.unique(self.mask)
            if not np.all(np.isin(vals, (0, 1))):
                raise ConfigError("pattern entries must be 0/1")
            self.mask = self.mask.astype(bool)
        if self.mask.ndim != 2:
            raise DimensionError("pattern must be 2-d")

    @classmethod
    def all_active(cls, p, d):
        return cls(np.ones((p, d), dtype=bool))

    @property
    def p(self):
        return self.mask.shape[0]

    @property
    def d(self):
        return self.mask.shape[1]

    @property
    def active_counts(self):
        return self.mask.sum(axis=0)

    def active_indices(self, j):
        """Strictly increasing active row indices of direction j."""
        return np.flatnonzero(self.mask[:, j])


@dataclass
class FitResult:
    """Everything a fit produces, including convergence diagnostics.

    ``directions`` hold the final masked blocks (no renormalization after
    masking; ``orthonormality`` reports each block's deviation instead).
    Correlation slots that could not be computed are flagged False in
    ``correlation_defined`` and hold 0.0, never silently.
    """

    variant: str
    patterns: list
    directions: list
    canonical_correlations: np.ndarray
    correlation_defined: np.ndarray
    stage1_traces: list
    stage2_trace: list
    stage1_iterations: list
    stage2_iterations: int
    stage1_converged: list
    stage2_converged: bool
    stage1_stop: list
    stage2_stop: str
    dead_directions: tuple
    orthonormality: dict
    seeds: dict
    order: tuple
    restart_scores: list = field(default_factory=list)
    selected_restart: int = 0
    pairwise_correlations: Optional[dict] = None
    stage1_trace_resets: list = field(default_factory=list)
    stage2_trace_resets: list = field(default_factory=list)
    stage2_oscillated: bool = False

    def __post_init__(self):
        rho = np.asarray(self.canonical_correlations, dtype=np.float64)
        if rho.size and (np.any(rho < -1.0) or np.any(rho > 1.0)):
            raise ConfigError("canonical correlations must lie in [-1, 1]")
        self.canonical_correlations = rho
        self.correlation_defined = np.asarray(self.correlation_defined, dtype=bool)

    @property
    def d(self):
        return self.canonical_correlations.size


def oriented_cross_covariance(covs, a, b):
    """C with shape (p_a, p_b) from a dict keyed by sorted view pairs."""
    if a == b:
        raise ConfigError("no cross-covariance of a view with itself")
    return covs[(a, b)] if a < b else covs[(b, a)].T


def _check_pair(c12, z1, z2, mu):
    if c12.shape[0] != z1.shape[0]:
        raise DimensionError(
            f"c12 rows {c12.shape[0]} != z1 rows {z1.shape[0]}"
        )
    if c12.shape[1] != z2.shape[0]:
        raise DimensionError(
            f"c12 cols {c12.shape[1]} != z2 rows {z2.shape[0]}"
        )
    if z1.shape[1] != z2.shape[1] or z1.shape[1] != mu.size:
        raise DimensionError("direction counts of z1, z2 and mu must agree")


def objective_trace_block(c12, z1, z2, weights):
    """trace(Z1.T C12 Z2 N), the weighted block covariance objective."""
    c12 = np.asarray(c12, dtype=np.float64)
    z1 = np.asarray(z1, dtype=np.float64)
    z2 = np.asarray(z2, dtype=np.float64)
    mu = as_mu(weights)
    _check_pair(c12, z1, z2, mu)
    m = z1.T @ (c12 @ z2)
    return float(np.diagonal(m) @ mu)


def objective_l1_surrogate(c12, z1, gamma2, weights):
    """Sum of squared hinges sum_j sum_i [mu_j |c_i.T z_1j| - gamma_2j]_+^2.

    c_i is the i-th column of c12; the sum over i runs over the opposite
    view's features.
    """
    c12 = np.asarray(c12, dtype=np.float64)
    z1 = np.asarray(z1, dtype=np.float64)
    mu = as_mu(weights)
    gamma2 = np.asarray(gamma2, dtype=np.float64).ravel()
    if c12.shape[0] != z1.shape[0]:
        raise DimensionError("c12 rows must match z1 rows")
    if z1.shape[1] != mu.size or gamma2.size != mu.size:
        raise DimensionError("direction counts must agree")
    a = c12.T @ z1
    h = np.maximum(mu * np.abs(a) - gamma2, 0.0)
    return float(np.sum(h * h))


def objective_l0_surrogate(c12, z1, gamma2, weights):
    """Hinge sum sum_j sum_i [(mu_j c_i.T z_1j)^2 - gamma_2j]_+."""
    c12 = np.asarray(c12, dtype=np.float64)
    z1 = np.asarray(z1, dtype=np.float64)
    mu = as_mu(weights)
    gamma2 = np.asarray(gamma2, dtype=np.float64).ravel()
    if c12.shape[0] != z1.shape[0]:
        raise DimensionError("c12 rows must match z1 rows")
    if z1.shape[1] != mu.size or gamma2.size != mu.size:
        raise DimensionError("direction counts must agree")
    a = c12.T @ z1
    h = np.maximum((mu * a) ** 2 - gamma2, 0.0)
    return float(np.sum(h))


def objective_multiview_surrogate(covs, zs, target, gammas, weights):
    """Target-view surrogate: squared hinges plus cross trace terms.

    ``zs`` lists one block per view; the target's entry is ignored. The
    cross terms couple the swept views pairwise, so per-view updates remain
    coordinate ascent on this single value.
    """
    mu = as_mu(weights)
    if isinstance(gammas, MultiViewSparsityParams):
        thresh = gammas.target_threshold(target)
    else:
        thresh = np.asarray(gammas, dtype=np.float64).ravel()
    m = len(zs)
    others = [r for r in range(m) if r != target]
    a = None
    for r in others:
        term = oriented_cross_covariance(covs, target, r) @ zs[r]
        a = term if a is None else a + term
    h = np.maximum(mu * np.abs(a) - thresh, 0.0)
    total = float(np.sum(h * h))
    for i, l in enumerate(others):
        for r in others[i + 1:]:
            total += objective_trace_block(
                oriented_cross_covariance(covs, l, r), zs[l], zs[r], mu
            )
    return total


def objective_directed_surrogate(c12, x1, x2, y, z1, gamma2, eps1, eps2, weights):
    """Directed stage-1 surrogate for sweeps of view 1.

    Squared hinges on c_i.T z_1j + eps_2j x_2i.T y_j plus the alignment
    term sum_j eps_1j y_j.T X_1 z_1j. The alignment term carries no mu_j,
    matching the implemented sweep update, so sweeps ascend this value.
    """
    c12 = np.asarray(c12, dtype=np.float64)
    z1 = np.asarray(z1, dtype=np.float64)
    mu = as_mu(weights)
    gamma2 = np.asarray(gamma2, dtype=np.float64).ravel()
    eps1 = np.asarray(eps1, dtype=np.float64).ravel()
    eps2 = np.asarray(eps2, dtype=np.float64).ravel()
    x1 = as_data(x1)
    x2 = as_data(x2)
    y = np.asarray(y, dtype=np.float64)
    a = c12.T @ z1 + (x2.T @ y) * eps2
    h = np.maximum(mu * np.abs(a) - gamma2, 0.0)
    align = float(np.sum(eps1 * np.sum((x1 @ z1) * y, axis=0)))
    return float(np.sum(h * h)) + align


def canonical_correlations(x1, x2, z1, z2):
    """Per-direction Pearson correlations of the projected views.

    Returns (values, defined); a direction whose projection is constant in
    either view gets value 0.0 and defined False.
    """
    x1 = as_data(x1)
    x2 = as_data(x2)
    z1 = np.asarray(z1, dtype=np.float64)
    z2 = np.asarray(z2, dtype=np.float64)
    if x1.shape[0] != x2.shape[0]:
        raise DimensionError("views must share rows")
    if z1.shape[1] != z2.shape[1]:
        raise DimensionError("direction counts must agree")
    u = x1 @ z1
    v = x2 @ z2
    d = z1.shape[1]
    values = np.zeros(d)
    defined = np.zeros(d, dtype=bool)
    for j in range(d):
        try:
            values[j] = pearson(u[:, j], v[:, j])
            defined[j] = True
        except DegenerateCovariate:
            values[j] = 0.0
            defined[j] = False
    return values, defined
