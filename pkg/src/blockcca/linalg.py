"""Dense linear-algebra kernels shared by both estimation stages.

Everything here is a pure function of its arguments and safe to call from
worker threads. All randomness flows through numpy's named PCG64 generator
(``numpy.random.default_rng``) so that results are reproducible across
platforms and numpy releases.
"""

from __future__ import annotations

import numpy as np

from .errors import DegenerateCovariate, DimensionError, RankDeficient

__all__ = [
    "polar",
    "orthonormality_defect",
    "random_stiefel",
    "derived_rng",
    "cross_covariance",
    "column_stats",
    "standardize",
    "pearson",
]

# A singular value below RANK_RTOL times the largest one means the polar
# factor is not uniquely determined; for an exactly-zero matrix the relative
# test degenerates, so an absolute floor takes over.
RANK_RTOL = 1e-12
RANK_FLOOR = 1e-300


def _as_matrix(m, name="matrix"):
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2:
        raise DimensionError(f"{name} must be 2-dimensional, got ndim={m.ndim}")
    return m


def polar(m):
    """Orthonormal polar factor of a tall matrix.

    For p x d input with p >= d, returns u @ vt from the thin SVD, which is
    the maximizer of trace(q.T @ m) over all q with orthonormal columns.
    Raises RankDeficient when the smallest singular value is below
    RANK_RTOL * largest (or below RANK_FLOOR for a zero matrix); upstream
    that usually means a direction lost all of its active entries.
    """
    m = _as_matrix(m)
    p, d = m.shape
    if p < d:
        raise DimensionError(f"polar needs p >= d, got shape ({p}, {d})")
    u, s, vt = np.linalg.svd(m, full_matrices=False)
    tol = RANK_RTOL * s[0] if s[0] > 0.0 else RANK_FLOOR
    if s[-1] < tol:
        raise RankDeficient(
            f"smallest singular value {s[-1]:.3e} below tolerance {tol:.3e}; "
            "polar factor is not determined"
        )
    return u @ vt


def orthonormality_defect(q):
    """max |q.T q - I|, the reported deviation from orthonormal columns."""
    q = _as_matrix(q, "q")
    d = q.shape[1]
    return float(np.abs(q.T @ q - np.eye(d)).max())


def derived_rng(*keys):
    """Named generator for a tuple of integer keys.

    The key tuple seeds a PCG64 stream; disjoint key tuples give
    independent streams. All seeding in the package goes through here so
    the derivation scheme is written down exactly once.
    """
    return np.random.default_rng(list(keys))


def random_stiefel(p, d, seed):
    """Random p x d matrix with orthonormal columns.

    Draws a standard normal matrix from the seeded generator and returns
    its polar factor. ``seed`` may be an int or a tuple of ints.
    """
    if p < d:
        raise DimensionError(f"random_stiefel needs p >= d, got ({p}, {d})")
    rng = derived_rng(*seed) if isinstance(seed, (tuple, list)) else derived_rng(seed)
    return polar(rng.standard_normal((p, d)))


def cross_covariance(x_r, x_s):
    """Sample cross-covariance (1/n) x_r.T @ x_s of two row-aligned views."""
    x_r = _as_matrix(x_r, "x_r")
    x_s = _as_matrix(x_s, "x_s")
    if x_r.shape[0] != x_s.shape[0]:
        raise DimensionError(
            f"views must share rows, got {x_r.shape[0]} and {x_s.shape[0]}"
        )
    n = x_r.shape[0]
    if n < 2:
        raise DimensionError(f"need at least 2 samples, got {n}")
    return x_r.T @ x_s / n


def column_stats(x):
    """Per-column mean and sample sd (divisor n - 1); constant columns get sd 0."""
    x = _as_matrix(x, "x")
    if x.shape[0] < 2:
        raise DimensionError(f"need at least 2 rows, got {x.shape[0]}")
    mean = x.mean(axis=0)
    sd = (x - mean).std(axis=0, ddof=1)
    return mean, sd


def standardize(x, feature_names=None):
    """Center every column and scale non-constant columns to unit sample sd.

    The scaling divisor is n - 1. Exactly-constant columns are centered,
    left unscaled, and flagged in ``constant_columns``.
    """
    from .model import ViewMatrix

    x = _as_matrix(x, "x")
    n, p = x.shape
    if feature_names is None:
        feature_names = [f"f{i + 1}" for i in range(p)]
    if len(feature_names) != p:
        raise DimensionError(
            f"{len(feature_names)} feature names for {p} columns"
        )
    mean, sd = column_stats(x)
    constant = np.flatnonzero(sd == 0.0)
    scale = np.where(sd == 0.0, 1.0, sd)
    return ViewMatrix(
        data=(x - mean) / scale,
        feature_names=list(feature_names),
        standardized=True,
        constant_columns=tuple(int(i) for i in constant),
    )


def pearson(a, b):
    """Plain Pearson correlation of two vectors.

    Raises DegenerateCovariate if either vector is constant. The result is
    clamped into [-1, 1] to absorb last-bit rounding.
    """
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise DimensionError(f"length mismatch: {a.shape[0]} vs {b.shape[0]}")
    a0 = a - a.mean()
    b0 = b - b.mean()
    na = float(np.linalg.norm(a0))
    nb = float(np.linalg.norm(b0))
    if na == 0.0 or nb == 0.0:
        raise DegenerateCovariate("correlation undefined for a constant vector")
    r = float(a0 @ b0 / (na * nb))
    return min(1.0, max(-1.0, r))
