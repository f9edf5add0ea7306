"""Stage 1: sparsity-pattern estimation by hinge-gradient sweeps.

A sweep linearizes the convex hinge surrogate at the current blocks and
projects the gradient back onto the constraint set (joint polar factor for
unconstrained views, per-direction normalization over the active set for
views whose pattern is already fixed). ``estimate_patterns`` chains one
estimation phase per view, shrinking coefficient matrices onto the active
sets of every previously estimated view, per direction.

Support rules are boundary-inactive: an entry exactly on its threshold is
dropped. Thresholds are evaluated in the divided form (gamma / mu, or
gamma / mu^2 for the L0 rule) so the published inequalities hold to
floating-point exactness.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import (
    ConfigError,
    DeadGradient,
    DimensionError,
    EmptySupport,
    RankDeficient,
)
from .linalg import polar, random_stiefel
from .model import (
    DirectedConfig,
    MultiViewSparsityParams,
    SparsityParams,
    SparsityPattern,
    as_data,
    as_mu,
    oriented_cross_covariance,
)

__all__ = [
    "sweep_l1",
    "sweep_l0",
    "sweep_directed",
    "sweep_multiview",
    "support_l1",
    "support_l0",
    "support_directed",
    "support_multiview",
    "shrink_covariance",
    "gamma_from_column_norms",
    "PatternProblem",
    "PatternResult",
    "estimate_patterns",
]

VARIANTS = ("l1", "l0", "multiview", "directed")

# Tag separating stage-1 init streams from every other consumer of the
# master seed; full key is (seed, STAGE1_TAG, restart, phase, view).
STAGE1_TAG = 1


def _hinge_weights_l1(a, gamma, mu):
    # w_ij = mu_j [mu_j |a_ij| - gamma_j]_+ sgn(a_ij); sgn(0) = 0.
    h = np.maximum(mu * np.abs(a) - gamma, 0.0)
    return mu * h * np.sign(a)


def _hinge_weights_l0(a, gamma, mu):
    # w_ij = mu_j^2 [(mu_j a_ij)^2 - gamma_j]_+ a_ij.
    h = np.maximum((mu * a) ** 2 - gamma, 0.0)
    return (mu * mu) * h * a


def _dead_columns(g):
    return np.flatnonzero(np.linalg.norm(g, axis=0) == 0.0)


def _apply_mask(q, mask):
    if mask is None:
        return q
    m = mask.mask if isinstance(mask, SparsityPattern) else np.asarray(mask, bool)
    if m.shape != q.shape:
        raise DimensionError(f"mask shape {m.shape} != block shape {q.shape}")
    return q * m


def _conform(c, z, gamma, mu):
    c = np.asarray(c, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    mu = as_mu(mu)
    gamma = np.asarray(gamma, dtype=np.float64).ravel()
    if c.shape[0] != z.shape[0]:
        raise DimensionError(f"coefficient rows {c.shape[0]} != block rows {z.shape[0]}")
    if z.shape[1] != mu.size or gamma.size != mu.size:
        raise DimensionError("direction counts of block, gamma and mu must agree")
    return c, z, gamma, mu


def sweep_l1(c, z, gamma, mu, mask=None):
    """One L1 sweep of the block z against coefficient matrix c.

    ``c`` has the swept view's features as rows and the opposite view's as
    columns (for the classic first phase: c = C12, z = Z1, gamma = gamma2).
    Raises DeadGradient naming the zero gradient columns when gamma is too
    large for a direction.
    """
    c, z, gamma, mu = _conform(c, z, gamma, mu)
    g = c @ _hinge_weights_l1(c.T @ z, gamma, mu)
    dead = _dead_columns(g)
    if dead.size:
        raise DeadGradient(f"zero gradient for directions {dead.tolist()}", dead)
    return _apply_mask(polar(g), mask)


def sweep_l0(c, z, gamma, mu, mask=None):
    """One L0 sweep; same shape conventions as sweep_l1."""
    c, z, gamma, mu = _conform(c, z, gamma, mu)
    g = c @ _hinge_weights_l0(c.T @ z, gamma, mu)
    dead = _dead_columns(g)
    if dead.size:
        raise DeadGradient(f"zero gradient for directions {dead.tolist()}", dead)
    return _apply_mask(polar(g), mask)


def sweep_directed(c, x_sweep, x_target, y, z, gamma, eps_sweep, eps_target, mu, mask=None):
    """One directed sweep of the block z (the x_sweep view's directions).

    The hinge argument gains eps_target_j x_i.T y_j from the target view's
    features; the gradient gains the constant pull eps_sweep_j X_sweep.T y_j.
    """
    c, z, gamma, mu = _conform(c, z, gamma, mu)
    x_sweep = as_data(x_sweep)
    x_target = as_data(x_target)
    y = np.asarray(y, dtype=np.float64)
    eps_sweep = np.asarray(eps_sweep, dtype=np.float64).ravel()
    eps_target = np.asarray(eps_target, dtype=np.float64).ravel()
    a = c.T @ z
    if np.any(eps_target):
        a = a + (x_target.T @ y) * eps_target
    g = c @ _hinge_weights_l1(a, gamma, mu)
    if np.any(eps_sweep):
        g = g + (x_sweep.T @ y) * eps_sweep
    dead = _dead_columns(g)
    if dead.size:
        raise DeadGradient(f"zero gradient for directions {dead.tolist()}", dead)
    return _apply_mask(polar(g), mask)


def sweep_multiview(covs, zs, target, gammas, mu, masks=None):
    """One full multi-view cycle: update every block except the target's.

    Views are updated in ascending index (Gauss-Seidel); the hinge
    aggregates every non-target block, and each update adds the weighted
    cross terms toward the other swept views. Returns a new list of blocks
    with the target's entry passed through unchanged.
    """
    mu = as_mu(mu)
    if isinstance(gammas, MultiViewSparsityParams):
        thresh = gammas.target_threshold(target)
    else:
        thresh = np.asarray(gammas, dtype=np.float64).ravel()
    m = len(zs)
    others = [r for r in range(m) if r != target]
    zs = [None if z is None else np.asarray(z, dtype=np.float64) for z in zs]
    for r in others:
        a = None
        for rr in others:
            term = oriented_cross_covariance(covs, target, rr) @ zs[rr]
            a = term if a is None else a + term
        w = _hinge_weights_l1(a, thresh, mu)
        g = oriented_cross_covariance(covs, r, target) @ w
        for l in others:
            if l != r:
                g = g + (oriented_cross_covariance(covs, r, l) @ zs[l]) * mu
        dead = _dead_columns(g)
        if dead.size:
            raise DeadGradient(
                f"zero gradient for view {r} directions {dead.tolist()}", dead
            )
        q = polar(g)
        if masks is not None and masks[r] is not None:
            q = _apply_mask(q, masks[r])
        zs[r] = q
    return zs


def support_l1(c, z, gamma, mu):
    """Active iff |c_i.T z_j| > gamma_j / mu_j; boundary entries inactive."""
    c, z, gamma, mu = _conform(c, z, gamma, mu)
    return SparsityPattern(np.abs(c.T @ z) > gamma / mu)


def support_l0(c, z, gamma, mu):
    """Active iff (c_i.T z_j)^2 > gamma_j / mu_j^2; boundary inactive."""
    c, z, gamma, mu = _conform(c, z, gamma, mu)
    a = c.T @ z
    return SparsityPattern(a * a > gamma / (mu * mu))


def support_directed(c, x_target, y, z, gamma, eps_target, mu):
    """Directed rule: threshold |c_i.T z_j + eps_j x_i.T y_j| at gamma_j / mu_j."""
    c, z, gamma, mu = _conform(c, z, gamma, mu)
    x_target = as_data(x_target)
    y = np.asarray(y, dtype=np.float64)
    eps_target = np.asarray(eps_target, dtype=np.float64).ravel()
    a = c.T @ z
    if np.any(eps_target):
        a = a + (x_target.T @ y) * eps_target
    return SparsityPattern(np.abs(a) > gamma / mu)


def support_multiview(covs, zs, target, gammas, mu):
    """Aggregate rule: |sum_r c~_i.T z_rj| > (sum_r gamma_srj) / mu_j."""
    mu = as_mu(mu)
    if isinstance(gammas, MultiViewSparsityParams):
        thresh = gammas.target_threshold(target)
    else:
        thresh = np.asarray(gammas, dtype=np.float64).ravel()
    a = None
    for r in range(len(zs)):
        if r == target:
            continue
        term = oriented_cross_covariance(covs, target, r) @ np.asarray(zs[r], float)
        a = term if a is None else a + term
    return SparsityPattern(np.abs(a) > thresh / mu)


def shrink_covariance(c, pattern, direction, side):
    """Submatrix of c on the active rows or columns of one pattern direction.

    Raises EmptySupport when the direction has no active entries; indices
    stay in increasing order, so shrunk coordinates map back monotonically.
    """
    c = np.asarray(c, dtype=np.float64)
    if side not in ("rows", "cols"):
        raise ConfigError(f"side must be 'rows' or 'cols', got {side!r}")
    idx = pattern.active_indices(direction)
    if idx.size == 0:
        raise EmptySupport(f"direction {direction} has no active entries")
    expect = c.shape[0] if side == "rows" else c.shape[1]
    if pattern.p != expect:
        raise DimensionError(
            f"pattern rows {pattern.p} do not match covariance {side}"
        )
    return c[idx, :] if side == "rows" else c[:, idx]


def gamma_from_column_norms(c, mu, quantile=0.8):
    """Threshold heuristic built on the sufficient inactivity condition.

    Rows of the target view with column norm ||c_i||_2 <= gamma_j / mu_j can
    never be active, so gamma_j = mu_j * (the ``quantile`` of the column
    norms) suppresses that fraction of rows outright. The default 0.8 aims
    the guaranteed-inactive bound at the bottom 8 of 10 feature blocks,
    matching a design where the active set fills at most 2 blocks. Pass c
    transposed to get the other view's vector.
    """
    c = np.asarray(c, dtype=np.float64)
    mu = as_mu(mu)
    if not 0.0 <= quantile < 1.0:
        raise ConfigError(f"quantile must be in [0, 1), got {quantile}")
    q = float(np.quantile(np.linalg.norm(c, axis=0), quantile))
    return mu * q


@dataclass
class PatternProblem:
    """Inputs of one stage-1 run.

    ``covs`` maps 0-based sorted view pairs (r, s), r < s, to (1/n) X_r.T X_s.
    ``params`` is SparsityParams for the two-view variants and
    MultiViewSparsityParams for the multi-view one. ``x_views`` (standardized
    data arrays) are required by the directed variant for its accessory
    terms. ``order`` lists target views; by default (1, 0) for two-view
    variants (second view's pattern first) and ascending for multi-view.
    """

    variant: str
    covs: dict
    dims: tuple
    params: object
    weights: object
    directed: Optional[DirectedConfig] = None
    x_views: Optional[list] = None
    order: Optional[tuple] = None
    seed: int = 0
    tol: float = 1e-7
    max_iters: int = 500
    restarts: int = 1

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}")
        self.dims = tuple(int(p) for p in self.dims)
        m = len(self.dims)
        if self.variant == "multiview":
            if m < 2:
                raise ConfigError("multiview needs at least two views")
            if not isinstance(self.params, MultiViewSparsityParams):
                raise ConfigError("multiview requires MultiViewSparsityParams")
            if self.params.m != m:
                raise ConfigError("params view count does not match dims")
        else:
            if m != 2:
                raise ConfigError(f"variant {self.variant!r} is two-view only")
            if not isinstance(self.params, SparsityParams):
                raise ConfigError("two-view variants require SparsityParams")
        if self.variant == "directed":
            if self.directed is None or self.x_views is None:
                raise ConfigError("directed variant needs DirectedConfig and x_views")
        mu = as_mu(self.weights)
        d = mu.size
        if d > min(self.dims):
            raise ConfigError(f"d={d} exceeds the smallest view dimension")
        self.seed = int(self.seed)
        self.covs = {k: np.asarray(v, dtype=np.float64) for k, v in self.covs.items()}
        for (r, s), c in self.covs.items():
            if c.shape != (self.dims[r], self.dims[s]):
                raise DimensionError(
                    f"covariance ({r},{s}) has shape {c.shape}, "
                    f"expected {(self.dims[r], self.dims[s])}"
                )
        for r in range(m):
            for s in range(r + 1, m):
                if (r, s) not in self.covs:
                    raise ConfigError(f"missing covariance for view pair ({r},{s})")
        if self.order is None:
            self.order = tuple(range(m)) if self.variant == "multiview" else (1, 0)
        else:
            self.order = tuple(int(s) for s in self.order)
            if sorted(self.order) != list(range(m)):
                raise ConfigError("order must be a permutation of the views")
        if self.tol <= 0 or self.max_iters < 1 or self.restarts < 1:
            raise ConfigError("tol, max_iters and restarts must be positive")

    @property
    def m(self):
        return len(self.dims)

    @property
    def d(self):
        return as_mu(self.weights).size


@dataclass
class PatternResult:
    """Patterns plus the masked stage-1 blocks and per-phase diagnostics.

    ``blocks`` are the final swept blocks masked by their own patterns (the
    warm start of stage 2). ``traces`` hold one surrogate trace per phase in
    target order; ``trace_resets`` marks trace positions where directions
    died (the live set shrank, so adjacent values are not comparable).
    """

    patterns: list
    blocks: list
    traces: list
    trace_resets: list
    iterations: list
    converged: list
    stop_reasons: list
    dead_directions: tuple
    dead_causes: dict
    order: tuple
    score: float
    restart_scores: list = field(default_factory=list)
    selected_restart: int = 0
    seeds: dict = field(default_factory=dict)


class _AllDead(Exception):
    """Internal: every direction died; carries the public error to raise."""

    def __init__(self, public):
        self.public = public


class _PhaseState:
    """Live-direction bookkeeping for one restart of the pattern engine."""

    def __init__(self, problem, restart):
        self.problem = problem
        self.restart = restart
        self.mu_full = as_mu(problem.weights).copy()
        self.d = self.mu_full.size
        self.live = list(range(self.d))
        self.dead_causes = {}
        self.patterns = [None] * problem.m
        self.zs = [None] * problem.m
        self.final_blocks = [None] * problem.m
        self.traces = []
        self.trace_resets = []
        self.iterations = []
        self.converged = []
        self.stop_reasons = []
        self.seeds = {"master": problem.seed, "stage1_tag": STAGE1_TAG, "init_keys": []}
        self._acc_cache = {}
        self.rescued = False

    @property
    def mu(self):
        return self.mu_full[self.live]

    def gamma_target(self, s):
        p = self.problem
        if p.variant == "multiview":
            g = p.params.target_threshold(s)
        else:
            g = p.params.gamma1 if s == 0 else p.params.gamma2
        return g[self.live]

    def eps(self, view):
        cfg = self.problem.directed
        e = cfg.eps1 if view == 0 else cfg.eps2
        return e[self.live]

    def acc(self, view):
        # X_view.T Y, the constant accessory block of the directed variant.
        if view not in self._acc_cache:
            x = as_data(self.problem.x_views[view])
            self._acc_cache[view] = x.T @ self.problem.directed.y
        return self._acc_cache[view][:, self.live]

    def kill(self, cols, cause):
        """Remove live columns (positions into the live list) and record why."""
        drop = set(cols)
        for k in sorted(cols, reverse=True):
            j = self.live.pop(k)
            self.dead_causes[j] = cause
        for r in range(self.problem.m):
            if self.zs[r] is not None:
                keep = [k for k in range(self.zs[r].shape[1]) if k not in drop]
                self.zs[r] = self.zs[r][:, keep]
        if not self.live:
            err = (
                DeadGradient(f"every direction died: {self.dead_causes}")
                if cause == "DeadGradient"
                else EmptySupport(f"every direction died: {self.dead_causes}")
            )
            raise _AllDead(err)


def _init_block(state, phase_idx, view):
    """Fresh seeded start for one sweeper; constrained views are restricted
    per direction to their active sets and renormalized."""
    p = state.problem
    key = (p.seed, STAGE1_TAG, state.restart, phase_idx, view)
    state.seeds["init_keys"].append(key)
    z = random_stiefel(p.dims[view], len(state.live), key)
    pat = state.patterns[view]
    if pat is not None:
        out = np.zeros_like(z)
        for k, j in enumerate(state.live):
            idx = pat.active_indices(j)
            v = z[idx, k]
            nrm = np.linalg.norm(v)
            if nrm == 0.0:
                # Measure-zero fallback: point mass on the first active row.
                v = np.zeros(idx.size)
                v[0] = 1.0
                nrm = 1.0
            out[idx, k] = v / nrm
        z = out
    return z


def _aggregate(state, s, others):
    a = None
    for r in others:
        term = oriented_cross_covariance(state.problem.covs, s, r) @ state.zs[r]
        a = term if a is None else a + term
    return a


def _phase_objective(state, s, others, gamma, acc_target):
    """Surrogate ascended by this phase's sweeps, on the current live set."""
    p = state.problem
    mu = state.mu
    a = _aggregate(state, s, others)
    if acc_target is not None:
        a = a + acc_target
    if p.variant == "l0":
        total = float(np.sum(np.maximum((mu * a) ** 2 - gamma, 0.0)))
    else:
        h = np.maximum(mu * np.abs(a) - gamma, 0.0)
        total = float(np.sum(h * h))
    if p.variant == "multiview":
        for i, l in enumerate(others):
            for r in others[i + 1:]:
                c = oriented_cross_covariance(p.covs, l, r)
                total += float(np.diagonal(state.zs[l].T @ (c @ state.zs[r])) @ mu)
    if p.variant == "directed":
        for r in others:
            eps_r = state.eps(r)
            if not np.any(eps_r):
                continue
            align = np.sum((as_data(p.x_views[r]) @ state.zs[r]) * p.directed.y[:, state.live], axis=0)
            total += float(np.sum(eps_r * align))
    return total


def _sweep_view(state, s, r, others, gamma, acc_target, bootstrap=False):
    """Gradient step for sweeper r; returns True if directions died.

    With ``bootstrap`` (the first cycle of a phase), a direction whose
    gradient is zero takes one unpenalized step instead of dying: a fresh
    start can sit where every hinge is flat even though the threshold is
    attainable, and one gamma-free step moves it toward the dominant
    covariance directions. From the second cycle on, a zero gradient means
    the threshold is genuinely out of reach and the direction is killed.
    """
    p = state.problem
    mu = state.mu
    a = _aggregate(state, s, others)
    if acc_target is not None:
        a = a + acc_target
    hinge = _hinge_weights_l0 if p.variant == "l0" else _hinge_weights_l1
    pat = state.patterns[r]

    def gradient(w):
        g = oriented_cross_covariance(p.covs, r, s) @ w
        if p.variant == "multiview":
            for l in others:
                if l != r:
                    g = g + (oriented_cross_covariance(p.covs, r, l) @ state.zs[l]) * mu
        if p.variant == "directed":
            eps_r = state.eps(r)
            if np.any(eps_r):
                g = g + state.acc(r) * eps_r
        return g

    def dead_positions(g):
        if pat is None:
            return _dead_columns(g).tolist()
        return [
            k for k, j in enumerate(state.live)
            if float(np.linalg.norm(g[pat.active_indices(j), k])) == 0.0
        ]

    w = hinge(a, gamma, mu)
    g = gradient(w)
    dead = dead_positions(g)
    if dead and bootstrap:
        w0 = hinge(a, np.zeros_like(gamma), mu)
        w[:, dead] = w0[:, dead]
        g = gradient(w)
        dead = dead_positions(g)
        if not dead:
            state.rescued = True
    if dead:
        state.kill(dead, "DeadGradient")
        return True
    if pat is None:
        state.zs[r] = polar(g)
        return False
    # Constrained sweeper: per-direction unit-sphere step on the active set.
    z = np.zeros_like(g)
    for k, j in enumerate(state.live):
        idx = pat.active_indices(j)
        z[idx, k] = g[idx, k] / np.linalg.norm(g[idx, k])
    state.zs[r] = z
    return False


def _run_phase(state, phase_idx, s):
    p = state.problem
    others = [r for r in range(p.m) if r != s]
    for r in others:
        state.zs[r] = _init_block(state, phase_idx, r)

    def live_slices():
        gamma = state.gamma_target(s)
        acc = None
        if p.variant == "directed":
            e = state.eps(s)
            acc = state.acc(s) * e if np.any(e) else None
        return gamma, acc

    gamma, acc_target = live_slices()
    trace = [_phase_objective(state, s, others, gamma, acc_target)]
    resets = []
    converged = False
    stop = "max_iters"
    it = 0
    while it < p.max_iters:
        it += 1
        died = False
        state.rescued = False
        for r in others:
            if _sweep_view(state, s, r, others, gamma, acc_target, bootstrap=(it == 1)):
                died = True
                gamma, acc_target = live_slices()
        f = _phase_objective(state, s, others, gamma, acc_target)
        trace.append(f)
        if died:
            resets.append(len(trace) - 1)
            continue
        if state.rescued:
            # A direction took the unpenalized fallback step this cycle; it
            # must face the strict zero-gradient rule once before the run may
            # converge, otherwise an unreachable threshold reads as a
            # converged all-flat objective instead of a dead gradient.
            continue
        prev = trace[-2]
        rel = abs(f - prev) / max(abs(prev), 1e-30)
        if rel <= p.tol:
            converged = True
            stop = "tol"
            break
    # Support rule on the converged aggregate (same matrix the hinge saw).
    a = _aggregate(state, s, others)
    if acc_target is not None:
        a = a + acc_target
    if p.variant == "l0":
        mask_live = a * a > gamma / (state.mu * state.mu)
    else:
        mask_live = np.abs(a) > gamma / state.mu
    full = np.zeros((p.dims[s], state.d), dtype=bool)
    empty = []
    for k, j in enumerate(state.live):
        col = mask_live[:, k]
        if not col.any():
            empty.append(k)
        else:
            full[:, j] = col
    if empty:
        state.kill(empty, "EmptySupport")
    state.patterns[s] = SparsityPattern(full)
    for r in others:
        # Snapshot the live set: later phases may kill more directions and
        # the recorded columns must keep their original direction labels.
        state.final_blocks[r] = (list(state.live), state.zs[r].copy())
    state.traces.append(trace)
    state.trace_resets.append(resets)
    state.iterations.append(it)
    state.converged.append(converged)
    state.stop_reasons.append(stop)
    return trace[-1]


def _run_once(problem, restart):
    state = _PhaseState(problem, restart)
    score = 0.0
    for phase_idx, s in enumerate(problem.order):
        score += _run_phase(state, phase_idx, s)
    final_live = set(state.live)
    dead = tuple(sorted(state.dead_causes))
    patterns = []
    for r in range(problem.m):
        mask = state.patterns[r].mask.copy()
        # A direction that died after this view's phase keeps no support.
        mask[:, list(dead)] = False
        patterns.append(SparsityPattern(mask))
    blocks = []
    for r in range(problem.m):
        z_full = np.zeros((problem.dims[r], state.d))
        rec = state.final_blocks[r]
        if rec is not None:
            snapshot, z = rec
            for k, j in enumerate(snapshot):
                if j in final_live:
                    z_full[:, j] = z[:, k]
        blocks.append(z_full * patterns[r].mask)
    return PatternResult(
        patterns=patterns,
        blocks=blocks,
        traces=state.traces,
        trace_resets=state.trace_resets,
        iterations=state.iterations,
        converged=state.converged,
        stop_reasons=state.stop_reasons,
        dead_directions=dead,
        dead_causes=dict(state.dead_causes),
        order=problem.order,
        score=score,
        seeds=state.seeds,
    )


def estimate_patterns(problem):
    """Run stage 1, with optional restarts scored by final surrogate values.

    The best restart (highest sum of per-phase final surrogates) wins; ties
    go to the lowest restart index. Directions whose gradient column dies or
    whose support empties are flagged dead and carried along. A restart that
    loses every direction or hits a rank-deficient polar step scores -inf;
    only if every restart fails is the first such error raised.
    """
    best = None
    best_idx = -1
    scores = []
    first_err = None
    for r in range(problem.restarts):
        try:
            res = _run_once(problem, r)
        except (_AllDead, RankDeficient) as e:
            scores.append(float("-inf"))
            if first_err is None:
                first_err = e.public if isinstance(e, _AllDead) else e
            continue
        scores.append(res.score)
        if best is None or res.score > best.score:
            best = res
            best_idx = r
    if best is None:
        raise first_err
    best.restart_scores = scores
    best.selected_restart = best_idx
    return best
