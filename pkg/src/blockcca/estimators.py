"""User-facing estimators running the full two-stage pipeline.

``BlockCCA`` (two views, L1 or L0 pattern stage), ``MultiViewBlockCCA``
(m views) and ``DirectedBlockCCA`` (two views pulled toward accessory
columns) share one skeleton: standardize the inputs, estimate sparsity
patterns by hinge-gradient sweeps, then refine the active entries by masked
alternating polar updates started from the masked stage-1 blocks. The
estimators follow the light scikit-learn protocol (constructor stores
parameters verbatim, ``fit`` validates, fitted attributes end in an
underscore, ``get_params``/``set_params`` round-trip) and remember the
training column statistics so ``transform`` maps new samples consistently.
"""

from __future__ import annotations

import inspect

import numpy as np

from .errors import ConfigError, DimensionError
from .linalg import column_stats, cross_covariance, orthonormality_defect
from .model import (
    DirectedConfig,
    FitResult,
    MultiViewSparsityParams,
    SparsityParams,
    SparsityPattern,
    SpectralWeights,
    ViewMatrix,
    as_data,
    canonical_correlations,
)
from .pattern import PatternProblem, estimate_patterns
from .refine import refine_directed, refine_multiview, refine_two_view

__all__ = ["BlockCCA", "MultiViewBlockCCA", "DirectedBlockCCA"]


def _ingest(x, do_standardize):
    """ViewMatrix plus the (mean, scale) maps that produced it.

    Accepts a raw array or a ViewMatrix. Without standardization the data
    pass through and the maps are identity, so ``transform`` stays uniform.
    """
    names = x.feature_names if isinstance(x, ViewMatrix) else None
    raw = as_data(x)
    if raw.ndim != 2:
        raise DimensionError(f"view data must be 2-d, got ndim={raw.ndim}")
    p = raw.shape[1]
    if names is None:
        names = [f"f{i + 1}" for i in range(p)]
    if not do_standardize:
        vm = x if isinstance(x, ViewMatrix) else ViewMatrix(raw, list(names))
        return vm, np.zeros(p), np.ones(p)
    mean, sd = column_stats(raw)
    scale = np.where(sd == 0.0, 1.0, sd)
    vm = ViewMatrix(
        data=(raw - mean) / scale,
        feature_names=list(names),
        standardized=True,
        constant_columns=tuple(int(i) for i in np.flatnonzero(sd == 0.0)),
    )
    return vm, mean, scale


def _resolve_weights(mu, d):
    if mu is None:
        return SpectralWeights.default(d)
    w = mu if isinstance(mu, SpectralWeights) else SpectralWeights(np.asarray(mu, dtype=np.float64))
    if w.d != d:
        raise ConfigError(f"mu has {w.d} entries for d={d}")
    return w


def _embed_columns(z, live, d):
    full = np.zeros((z.shape[0], d))
    for k, j in enumerate(live):
        full[:, j] = z[:, k]
    return full


def _assemble(variant, pat, rr, directions, correlations, defined, d,
              stage2_dead, pairwise=None):
    dead = tuple(sorted(set(pat.dead_directions) | set(stage2_dead)))
    live = [j for j in range(d) if j not in dead]
    patterns = []
    for pattern in pat.patterns:
        mask = pattern.mask.copy()
        mask[:, list(dead)] = False
        patterns.append(SparsityPattern(mask))
    orth = {
        i: (orthonormality_defect(z[:, live]) if live else 0.0)
        for i, z in enumerate(directions)
    }
    skipped = rr is None
    return FitResult(
        variant=variant,
        patterns=patterns,
        directions=directions,
        canonical_correlations=correlations,
        correlation_defined=defined,
        stage1_traces=pat.traces,
        stage2_trace=[] if skipped else rr.trace,
        stage1_iterations=pat.iterations,
        stage2_iterations=0 if skipped else rr.iterations,
        stage1_converged=pat.converged,
        stage2_converged=True if skipped else rr.converged,
        stage1_stop=pat.stop_reasons,
        stage2_stop="skipped" if skipped else rr.stop_reason,
        dead_directions=dead,
        orthonormality=orth,
        seeds=pat.seeds,
        order=pat.order,
        restart_scores=pat.restart_scores,
        selected_restart=pat.selected_restart,
        pairwise_correlations=pairwise,
        stage1_trace_resets=pat.trace_resets,
        stage2_trace_resets=[] if skipped else rr.trace_resets,
        stage2_oscillated=False if skipped else rr.oscillated,
    )


class _ParamsMixin:
    """Constructor-argument parameter protocol plus shared plumbing."""

    @classmethod
    def _param_names(cls):
        sig = inspect.signature(cls.__init__)
        return [
            p.name
            for p in sig.parameters.values()
            if p.name != "self" and p.kind == p.POSITIONAL_OR_KEYWORD
        ]

    def get_params(self, deep=True):
        return {name: getattr(self, name) for name in self._param_names()}

    def set_params(self, **params):
        valid = set(self._param_names())
        for key, value in params.items():
            if key not in valid:
                raise ConfigError(
                    f"unknown parameter {key!r} for {type(self).__name__}"
                )
            setattr(self, key, value)
        return self

    def _check_fitted(self):
        if not hasattr(self, "result_"):
            raise ConfigError(f"{type(self).__name__} is not fitted")

    def _store(self, result, views, means, scales, weights):
        self.result_ = result
        self.patterns_ = result.patterns
        self.directions_ = result.directions
        self.correlations_ = result.canonical_correlations
        self.correlation_defined_ = result.correlation_defined
        self.dead_directions_ = result.dead_directions
        self.feature_names_ = [vm.feature_names for vm in views]
        self.n_samples_ = views[0].n
        self.means_ = means
        self.scales_ = scales
        self.weights_ = weights
        return self

    def _project(self, i, x):
        raw = as_data(x)
        p = self.directions_[i].shape[0]
        if raw.ndim != 2 or raw.shape[1] != p:
            raise DimensionError(
                f"view {i} needs {p} columns, got shape {raw.shape}"
            )
        return ((raw - self.means_[i]) / self.scales_[i]) @ self.directions_[i]


class BlockCCA(_ParamsMixin):
    """Two-view block sparse canonical correlation analysis.

    ``penalty`` picks the stage-1 hinge family: 'l1' thresholds the
    magnitude of aggregate coefficients, 'l0' their square. gamma1/gamma2
    are per-direction sparsity thresholds (scalars broadcast to length d).
    ``mu`` overrides the default strictly decreasing per-direction weights
    1 - (j - 1) / (2d). With penalty='l0' the patterns are the final
    estimand and stage 2 is skipped unless ``l0_refine`` is set.

    After ``fit``: ``result_`` (full FitResult), ``patterns_``,
    ``directions_``, ``correlations_``, ``correlation_defined_``,
    ``dead_directions_``, ``means_``/``scales_`` (training column maps).
    """

    def __init__(self, d=1, penalty="l1", gamma1=0.0, gamma2=0.0, mu=None,
                 seed=0, restarts=1, tol=1e-7, max_iters=500,
                 refine_tol=1e-9, refine_max_iters=1000, standardize=True,
                 l0_refine=False):
        self.d = d
        self.penalty = penalty
        self.gamma1 = gamma1
        self.gamma2 = gamma2
        self.mu = mu
        self.seed = seed
        self.restarts = restarts
        self.tol = tol
        self.max_iters = max_iters
        self.refine_tol = refine_tol
        self.refine_max_iters = refine_max_iters
        self.standardize = standardize
        self.l0_refine = l0_refine

    def fit(self, x1, x2):
        d = int(self.d)
        if d < 1:
            raise ConfigError(f"need d >= 1, got {d}")
        if self.penalty not in ("l1", "l0"):
            raise ConfigError(f"penalty must be 'l1' or 'l0', got {self.penalty!r}")
        vm1, mean1, scale1 = _ingest(x1, self.standardize)
        vm2, mean2, scale2 = _ingest(x2, self.standardize)
        if vm1.n != vm2.n:
            raise DimensionError(f"views have {vm1.n} and {vm2.n} samples")
        weights = _resolve_weights(self.mu, d)
        params = SparsityParams.broadcast(self.gamma1, self.gamma2, d)
        c12 = cross_covariance(vm1.data, vm2.data)
        pat = estimate_patterns(PatternProblem(
            variant=self.penalty,
            covs={(0, 1): c12},
            dims=(vm1.p, vm2.p),
            params=params,
            weights=weights,
            seed=self.seed,
            tol=self.tol,
            max_iters=self.max_iters,
            restarts=self.restarts,
        ))
        rr = None
        stage2_dead = ()
        if self.penalty == "l1" or self.l0_refine:
            live = [j for j in range(d) if j not in pat.dead_directions]
            rr = refine_two_view(
                c12,
                pat.patterns[0].mask[:, live],
                pat.patterns[1].mask[:, live],
                weights.mu[live],
                pat.blocks[0][:, live],
                pat.blocks[1][:, live],
                tol=self.refine_tol,
                max_iters=self.refine_max_iters,
            )
            directions = [_embed_columns(rr.zs[i], live, d) for i in range(2)]
            stage2_dead = tuple(live[k] for k in rr.dead_directions)
        else:
            directions = [b.copy() for b in pat.blocks]
        values, defined = canonical_correlations(vm1, vm2, directions[0], directions[1])
        result = _assemble(self.penalty, pat, rr, directions, values, defined,
                           d, stage2_dead)
        return self._store(result, [vm1, vm2], [mean1, mean2], [scale1, scale2],
                           weights)

    def transform(self, x1, x2):
        self._check_fitted()
        return [self._project(0, x1), self._project(1, x2)]

    def fit_transform(self, x1, x2):
        return self.fit(x1, x2).transform(x1, x2)


class MultiViewBlockCCA(_ParamsMixin):
    """Block sparse CCA across m >= 2 views.

    ``gamma`` may be a scalar, a length-d vector (broadcast to every view
    pair), a full (d, m, m) array of per-pair thresholds with zero
    diagonals, or a MultiViewSparsityParams. ``order`` fixes the sequence
    in which view patterns are estimated (default ascending); it is part of
    the estimator's identity and recorded in the result.

    Canonical correlations are reported per direction as the mean over all
    view pairs; ``result_.pairwise_correlations`` keeps the full detail.
    """

    def __init__(self, d=1, gamma=0.0, mu=None, seed=0, restarts=1,
                 order=None, tol=1e-7, max_iters=500, refine_tol=1e-9,
                 refine_max_iters=1000, standardize=True):
        self.d = d
        self.gamma = gamma
        self.mu = mu
        self.seed = seed
        self.restarts = restarts
        self.order = order
        self.tol = tol
        self.max_iters = max_iters
        self.refine_tol = refine_tol
        self.refine_max_iters = refine_max_iters
        self.standardize = standardize

    def _params_for(self, m, d):
        if isinstance(self.gamma, MultiViewSparsityParams):
            params = self.gamma
        else:
            g = np.asarray(self.gamma, dtype=np.float64)
            if g.ndim == 3:
                params = MultiViewSparsityParams(g)
            else:
                params = MultiViewSparsityParams.uniform(g, m, d)
        if params.m != m or params.d != d:
            raise ConfigError(
                f"gamma describes {params.m} views x {params.d} directions, "
                f"need {m} x {d}"
            )
        return params

    def fit(self, views):
        if len(views) < 2:
            raise ConfigError("need at least two views")
        d = int(self.d)
        if d < 1:
            raise ConfigError(f"need d >= 1, got {d}")
        m = len(views)
        ingested = [_ingest(x, self.standardize) for x in views]
        vms = [t[0] for t in ingested]
        ns = {vm.n for vm in vms}
        if len(ns) != 1:
            raise DimensionError(f"views disagree on sample count: {sorted(ns)}")
        weights = _resolve_weights(self.mu, d)
        params = self._params_for(m, d)
        covs = {
            (r, s): cross_covariance(vms[r].data, vms[s].data)
            for r in range(m)
            for s in range(r + 1, m)
        }
        pat = estimate_patterns(PatternProblem(
            variant="multiview",
            covs=covs,
            dims=tuple(vm.p for vm in vms),
            params=params,
            weights=weights,
            order=self.order,
            seed=self.seed,
            tol=self.tol,
            max_iters=self.max_iters,
            restarts=self.restarts,
        ))
        live = [j for j in range(d) if j not in pat.dead_directions]
        rr = refine_multiview(
            covs,
            [p.mask[:, live] for p in pat.patterns],
            weights.mu[live],
            [b[:, live] for b in pat.blocks],
            tol=self.refine_tol,
            max_iters=self.refine_max_iters,
            order=pat.order,
        )
        directions = [_embed_columns(rr.zs[i], live, d) for i in range(m)]
        stage2_dead = tuple(live[k] for k in rr.dead_directions)
        pairwise = {}
        values = np.zeros(d)
        defined = np.ones(d, dtype=bool)
        for r in range(m):
            for s in range(r + 1, m):
                v, df = canonical_correlations(
                    vms[r], vms[s], directions[r], directions[s]
                )
                pairwise[(r, s)] = (v, df)
                defined &= df
        npairs = len(pairwise)
        for j in range(d):
            if defined[j]:
                values[j] = sum(v[j] for v, _ in pairwise.values()) / npairs
        result = _assemble("multiview", pat, rr, directions, values, defined,
                           d, stage2_dead, pairwise=pairwise)
        return self._store(result, vms, [t[1] for t in ingested],
                           [t[2] for t in ingested], weights)

    def transform(self, views):
        self._check_fitted()
        if len(views) != len(self.directions_):
            raise DimensionError(
                f"fitted on {len(self.directions_)} views, got {len(views)}"
            )
        return [self._project(i, x) for i, x in enumerate(views)]

    def fit_transform(self, views):
        return self.fit(views).transform(views)


class DirectedBlockCCA(_ParamsMixin):
    """Two-view block sparse CCA steered toward accessory columns.

    ``fit`` takes the accessory matrix y (one column per direction, or a
    single column reused for every direction); columns are normalized to
    unit length. eps1/eps2 weigh the pull of each view's directions toward
    the accessory columns in both stages; zero reduces exactly to the plain
    two-view pipeline.
    """

    def __init__(self, d=1, gamma1=0.0, gamma2=0.0, eps1=0.0, eps2=0.0,
                 mu=None, seed=0, restarts=1, tol=1e-7, max_iters=500,
                 refine_tol=1e-9, refine_max_iters=1000, standardize=True):
        self.d = d
        self.gamma1 = gamma1
        self.gamma2 = gamma2
        self.eps1 = eps1
        self.eps2 = eps2
        self.mu = mu
        self.seed = seed
        self.restarts = restarts
        self.tol = tol
        self.max_iters = max_iters
        self.refine_tol = refine_tol
        self.refine_max_iters = refine_max_iters
        self.standardize = standardize

    def fit(self, x1, x2, y):
        d = int(self.d)
        if d < 1:
            raise ConfigError(f"need d >= 1, got {d}")
        vm1, mean1, scale1 = _ingest(x1, self.standardize)
        vm2, mean2, scale2 = _ingest(x2, self.standardize)
        if vm1.n != vm2.n:
            raise DimensionError(f"views have {vm1.n} and {vm2.n} samples")
        y = np.asarray(y, dtype=np.float64)
        if y.ndim == 1:
            y = y[:, None]
        if y.ndim != 2 or y.shape[0] != vm1.n:
            raise DimensionError(
                f"y must have one row per sample ({vm1.n}), got shape {y.shape}"
            )
        if y.shape[1] == 1 and d > 1:
            y = np.repeat(y, d, axis=1)
        elif y.shape[1] != d:
            raise ConfigError(f"y has {y.shape[1]} columns for d={d}")
        directed = DirectedConfig.normalized(y, self.eps1, self.eps2)
        weights = _resolve_weights(self.mu, d)
        params = SparsityParams.broadcast(self.gamma1, self.gamma2, d)
        c12 = cross_covariance(vm1.data, vm2.data)
        pat = estimate_patterns(PatternProblem(
            variant="directed",
            covs={(0, 1): c12},
            dims=(vm1.p, vm2.p),
            params=params,
            weights=weights,
            directed=directed,
            x_views=[vm1, vm2],
            seed=self.seed,
            tol=self.tol,
            max_iters=self.max_iters,
            restarts=self.restarts,
        ))
        live = [j for j in range(d) if j not in pat.dead_directions]
        rr = refine_directed(
            c12,
            vm1.data,
            vm2.data,
            directed.y[:, live],
            directed.eps1[live],
            directed.eps2[live],
            pat.patterns[0].mask[:, live],
            pat.patterns[1].mask[:, live],
            weights.mu[live],
            pat.blocks[0][:, live],
            pat.blocks[1][:, live],
            tol=self.refine_tol,
            max_iters=self.refine_max_iters,
        )
        directions = [_embed_columns(rr.zs[i], live, d) for i in range(2)]
        stage2_dead = tuple(live[k] for k in rr.dead_directions)
        values, defined = canonical_correlations(vm1, vm2, directions[0], directions[1])
        result = _assemble("directed", pat, rr, directions, values, defined,
                           d, stage2_dead)
        return self._store(result, [vm1, vm2], [mean1, mean2], [scale1, scale2],
                           weights)

    def transform(self, x1, x2):
        self._check_fitted()
        return [self._project(0, x1), self._project(1, x2)]

    def fit_transform(self, x1, x2, y):
        return self.fit(x1, x2, y).transform(x1, x2)
