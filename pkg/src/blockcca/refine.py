"""Stage 2: refinement of the active entries on fixed sparsity patterns.

Each block update restricts the weighted coefficient matrix to the block's
own support, takes its polar factor, and re-applies the mask entrywise
(the polar factor spreads across masked entries whenever direction supports
differ, so the trailing mask is what keeps supp(Z_i) inside T_i exactly).
Because the coefficient matrix is masked before the polar step, the polar
factor maximizes the support-restricted linearized objective over
orthonormal frames and the trailing mask leaves that value unchanged, so
the trace objective is non-decreasing along the alternation. Masked entries
are never renormalized afterwards, so the blocks drift off the orthonormal
frame; the deviation is reported, not corrected.

A masked pre-polar matrix with an exactly-zero column means the pattern
starved that direction; it is dropped mid-run and reported dead. Rank
deficiency without zero columns stops the run with converged=False. A trace
value that drops by more than the slack sets the ``oscillated`` diagnostic.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DimensionError, RankDeficient
from .linalg import orthonormality_defect, polar
from .model import (
    SparsityPattern,
    as_data,
    as_mu,
    objective_trace_block,
    oriented_cross_covariance,
)

__all__ = ["RefineResult", "refine_two_view", "refine_multiview", "refine_directed"]

MONOTONE_SLACK = 1e-10


@dataclass
class RefineResult:
    """Refined blocks (same width as the inputs; dead columns zeroed)."""

    zs: list
    trace: list
    trace_resets: list
    iterations: int
    converged: bool
    stop_reason: str
    oscillated: bool
    dead_directions: tuple
    orthonormality: list = field(default_factory=list)


class _AllDead(RankDeficient):
    """Internal: refinement lost every direction."""


class _RefineState:
    """Shared bookkeeping: live columns, masks, kill handling."""

    def __init__(self, patterns, mu, zs):
        self.mu_full = as_mu(mu).copy()
        d = self.mu_full.size
        self.live = list(range(d))
        self.dead = []
        self.masks = [
            (p.mask if isinstance(p, SparsityPattern) else np.asarray(p, bool)).copy()
            for p in patterns
        ]
        self.zs = []
        for i, z in enumerate(zs):
            z = np.asarray(z, dtype=np.float64).copy()
            if z.shape != self.masks[i].shape:
                raise DimensionError(
                    f"block {i} shape {z.shape} != pattern shape {self.masks[i].shape}"
                )
            # Enforce the support invariant on entry.
            self.zs.append(z * self.masks[i])
        self.width = d

    @property
    def mu(self):
        return self.mu_full[self.live]

    def mask(self, i):
        return self.masks[i][:, self.live]

    def kill(self, positions):
        removed = []
        for k in sorted(positions, reverse=True):
            removed.append(self.live.pop(k))
        self.dead.extend(removed)
        for i in range(len(self.zs)):
            self.zs[i] = np.delete(self.zs[i], positions, axis=1)
        return not self.live

    def update(self, i, m):
        """polar of the masked m into block i; True if directions died."""
        m = m * self.mask(i)
        zero = np.flatnonzero(np.linalg.norm(m, axis=0) == 0.0)
        if zero.size:
            if self.kill(zero.tolist()):
                raise _AllDead("every direction died during refinement")
            return True
        self.zs[i] = polar(m) * self.mask(i)
        return False

    def embed(self):
        out = []
        for z in self.zs:
            full = np.zeros((z.shape[0], self.width))
            for k, j in enumerate(self.live):
                full[:, j] = z[:, k]
            out.append(full)
        return out


def _drive(state, cycle, objective, tol, max_iters):
    trace = [objective()]
    resets = []
    oscillated = False
    converged = False
    stop = "max_iters"
    it = 0
    while it < max_iters:
        it += 1
        try:
            died = cycle()
        except _AllDead:
            raise
        except RankDeficient:
            stop = "rank_deficient"
            break
        f = objective()
        trace.append(f)
        if died:
            resets.append(len(trace) - 1)
            continue
        prev = trace[-2]
        if f < prev - MONOTONE_SLACK:
            oscillated = True
        if abs(f - prev) / max(abs(prev), 1e-30) <= tol:
            converged = True
            stop = "tol"
            break
    live_orth = [orthonormality_defect(z) if z.size else 0.0 for z in state.zs]
    return RefineResult(
        zs=state.embed(),
        trace=trace,
        trace_resets=resets,
        iterations=it,
        converged=converged,
        stop_reason=stop,
        oscillated=oscillated,
        dead_directions=tuple(sorted(state.dead)),
        orthonormality=live_orth,
    )


def refine_two_view(c12, t1, t2, mu, z1, z2, tol=1e-9, max_iters=1000):
    """Alternate Z2 <- polar((C12.T Z1 N) * T2) * T2 and the mirror for Z1.

    With d = 1 this is exactly the power iteration on the cross-covariance
    restricted to the two masks. The trace records trace(Z1.T C12 Z2 N) per
    full iteration, starting from the (masked) initial blocks.
    """
    c12 = np.asarray(c12, dtype=np.float64)
    state = _RefineState([t1, t2], mu, [z1, z2])

    def cycle():
        died = state.update(1, (c12.T @ state.zs[0]) * state.mu)
        died |= state.update(0, (c12 @ state.zs[1]) * state.mu)
        return died

    def objective():
        return objective_trace_block(c12, state.zs[0], state.zs[1], state.mu)

    return _drive(state, cycle, objective, tol, max_iters)


def refine_multiview(covs, patterns, mu, zs, tol=1e-9, max_iters=1000,
                     order=None):
    """Cycle over views: Z_s <- polar((sum_{r != s} C~_rs.T Z_r N) * T_s) * T_s.

    ``order`` fixes the update sequence within a cycle (default ascending);
    with m = 2 and order (1, 0) each cycle reproduces refine_two_view
    exactly. The trace records sum_{r < s} trace(Z_r.T C_rs Z_s N) per
    full cycle.
    """
    m = len(patterns)
    covs = {k: np.asarray(v, dtype=np.float64) for k, v in covs.items()}
    if order is None:
        order = tuple(range(m))
    else:
        order = tuple(int(s) for s in order)
        if sorted(order) != list(range(m)):
            raise ConfigError("order must be a permutation of the views")
    state = _RefineState(patterns, mu, zs)

    def cycle():
        died = False
        for s in order:
            acc = None
            for r in range(m):
                if r == s:
                    continue
                term = oriented_cross_covariance(covs, s, r) @ state.zs[r]
                acc = term if acc is None else acc + term
            died |= state.update(s, acc * state.mu)
        return died

    def objective():
        total = 0.0
        for r in range(m):
            for s in range(r + 1, m):
                total += objective_trace_block(
                    covs[(r, s)], state.zs[r], state.zs[s], state.mu
                )
        return total

    return _drive(state, cycle, objective, tol, max_iters)


def refine_directed(c12, x1, x2, y, eps1, eps2, t1, t2, mu, z1, z2,
                    tol=1e-9, max_iters=1000):
    """Two-view refinement with the outcome pull X_i.T Y N E_i added.

    The trace adds sum_i sum_j mu_j eps_ij y_j.T X_i z_ij to the block
    objective. With eps1 = eps2 = 0 this reduces exactly to
    refine_two_view.
    """
    c12 = np.asarray(c12, dtype=np.float64)
    x1 = as_data(x1)
    x2 = as_data(x2)
    y = np.asarray(y, dtype=np.float64)
    eps_full = [
        np.asarray(eps1, dtype=np.float64).ravel(),
        np.asarray(eps2, dtype=np.float64).ravel(),
    ]
    acc_full = [x1.T @ y, x2.T @ y]
    state = _RefineState([t1, t2], mu, [z1, z2])

    def pull(i):
        e = eps_full[i][state.live]
        if not np.any(e):
            return None
        return acc_full[i][:, state.live] * (state.mu * e)

    def cycle():
        p2 = pull(1)
        m2 = (c12.T @ state.zs[0]) * state.mu
        if p2 is not None:
            m2 = m2 + p2
        died = state.update(1, m2)
        p1 = pull(0)
        m1 = (c12 @ state.zs[1]) * state.mu
        if p1 is not None:
            m1 = m1 + p1
        died |= state.update(0, m1)
        return died

    def objective():
        total = objective_trace_block(c12, state.zs[0], state.zs[1], state.mu)
        for i in range(2):
            e = eps_full[i][state.live]
            if np.any(e):
                align = np.sum(acc_full[i][:, state.live] * state.zs[i], axis=0)
                total += float(np.sum(state.mu * e * align))
        return total

    return _drive(state, cycle, objective, tol, max_iters)
