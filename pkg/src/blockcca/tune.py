"""Permutation-test significance and grid-based threshold selection.

The test refits the two-view pipeline on row-permuted copies of the first
view and compares the observed first canonical correlation against the
permuted ones with a strict inequality. Permutations are keyed by their
index, so the report is bitwise identical no matter how many worker
threads execute them, and every grid cell sees the same permutations
(common random numbers across cells).
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import BlockCCAError, ConfigError, DegenerateCovariate
from .estimators import BlockCCA, _ingest
from .linalg import derived_rng

__all__ = [
    "PermutationReport",
    "TuneCell",
    "TuneResult",
    "permutation_test",
    "select_gamma",
    "tune_grid",
]

# Tag separating permutation shuffles from stage-1 init streams; the full
# key of shuffle p is (seed, TAG_PERM, p).
TAG_PERM = 3


@dataclass
class PermutationReport:
    """Observed vs permuted first canonical correlations.

    ``p_value`` is the strict fraction #{rho_perm > rho_observed} / P, so
    it can be exactly 0. Permutation fits that fail or yield an undefined
    first correlation contribute rho_perm = -1 (which can never exceed the
    observed value) and are tallied in ``n_failures`` and ``failed``.
    """

    rho_observed: float
    rho_permuted: np.ndarray
    p_value: float
    gamma: tuple
    seed: int
    n_failures: int = 0
    failed: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))

    @property
    def n_permutations(self):
        return self.rho_permuted.size


def _first_correlation(estimator, x1, x2):
    """First-direction canonical correlation of a fresh fit.

    Raises DegenerateCovariate when the first direction is dead or its
    correlation is undefined; other pipeline errors propagate as they are.
    """
    fit = estimator.fit(x1, x2)
    if 0 in fit.dead_directions_ or not fit.correlation_defined_[0]:
        raise DegenerateCovariate(
            "first canonical correlation is undefined for this fit"
        )
    return float(fit.correlations_[0])


def _clone(template, **overrides):
    params = template.get_params()
    params.update(overrides)
    return type(template)(**params)


def permutation_test(x1, x2, gamma1, gamma2, perms, d=1, seed=0, workers=1,
                     penalty="l1", restarts=1, mu=None, standardize=True,
                     tol=1e-7, max_iters=500, refine_tol=1e-9,
                     refine_max_iters=1000):
    """Significance of the first canonical correlation by permutation.

    Fits once on (x1, x2), then ``perms`` times on row-permuted copies of
    x1 with x2 fixed, always from the same estimator seed. An error in the
    observed fit propagates; errors in permuted fits are recorded.
    """
    perms = int(perms)
    if perms < 1:
        raise ConfigError(f"need at least one permutation, got {perms}")
    workers = int(workers)
    if workers < 1:
        raise ConfigError(f"need at least one worker, got {workers}")
    # Standardize once up front: row permutation leaves column statistics
    # unchanged, so this matches standardizing inside every fit bitwise.
    vm1, _, _ = _ingest(x1, standardize)
    vm2, _, _ = _ingest(x2, standardize)
    base = BlockCCA(
        d=d, penalty=penalty, gamma1=gamma1, gamma2=gamma2, mu=mu,
        seed=seed, restarts=restarts, tol=tol, max_iters=max_iters,
        refine_tol=refine_tol, refine_max_iters=refine_max_iters,
        standardize=False,
    )
    rho_observed = _first_correlation(_clone(base), vm1.data, vm2.data)
    n = vm1.n

    def one(index):
        order = derived_rng(seed, TAG_PERM, index).permutation(n)
        try:
            rho = _first_correlation(_clone(base), vm1.data[order], vm2.data)
            return rho, False
        except BlockCCAError:
            return -1.0, True

    if workers == 1:
        outcomes = [one(p) for p in range(perms)]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(one, range(perms)))
    rho_permuted = np.array([r for r, _ in outcomes])
    failed = np.array([f for _, f in outcomes], dtype=bool)
    p_value = float(np.count_nonzero(rho_permuted > rho_observed)) / perms
    return PermutationReport(
        rho_observed=rho_observed,
        rho_permuted=rho_permuted,
        p_value=p_value,
        gamma=(gamma1, gamma2),
        seed=int(seed),
        n_failures=int(failed.sum()),
        failed=failed,
    )


@dataclass
class TuneCell:
    """One grid entry: its report, or the error that killed the cell."""

    gamma: tuple
    report: object = None
    error: str = None

    @property
    def ok(self):
        return self.report is not None


@dataclass
class TuneResult:
    cells: list
    selected_index: int
    alpha: float

    @property
    def selected(self):
        return self.cells[self.selected_index].gamma

    @property
    def selected_report(self):
        return self.cells[self.selected_index].report


def select_gamma(p_values, gammas):
    """Index of the winning cell: lowest p, then sparser (larger gamma sum),
    then earliest grid position. ``p_values`` entries of None mark failed
    cells and are skipped entirely."""
    best_key = None
    best_idx = -1
    for i, (p, g) in enumerate(zip(p_values, gammas)):
        if p is None:
            continue
        key = (p, -float(np.sum(g[0]) + np.sum(g[1])), i)
        if best_key is None or key < best_key:
            best_key = key
            best_idx = i
    if best_idx < 0:
        raise ConfigError("every grid cell failed")
    return best_idx


def tune_grid(x1, x2, grid, perms, d=1, alpha=0.05, seed=0, workers=1,
              **fit_options):
    """Run the permutation test over a grid of (gamma1, gamma2) pairs.

    Failed cells (observed fit raised) stay in the table with the error
    message; the winner is chosen among the rest by ``select_gamma``. The
    full table is returned so callers can apply their own rule.
    """
    grid = list(grid)
    if not grid:
        raise ConfigError("grid must be non-empty")
    cells = []
    for gamma1, gamma2 in grid:
        try:
            report = permutation_test(
                x1, x2, gamma1, gamma2, perms, d=d, seed=seed,
                workers=workers, **fit_options,
            )
            cells.append(TuneCell(gamma=(gamma1, gamma2), report=report))
        except BlockCCAError as e:
            cells.append(TuneCell(
                gamma=(gamma1, gamma2), error=f"{e.category}: {e}"
            ))
    p_values = [c.report.p_value if c.ok else None for c in cells]
    idx = select_gamma(p_values, [c.gamma for c in cells])
    return TuneResult(cells=cells, selected_index=idx, alpha=float(alpha))
