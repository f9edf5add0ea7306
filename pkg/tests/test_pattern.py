"""Stage-1 sweeps, support rules, shrinkage, and pattern estimation.

Derived expectations are checked against independently coded oracles: hand
hinge arithmetic, an explicit-loop transcription of the multi-view update,
and brute-force maximization over a dense sphere grid.
"""

import numpy as np
import pytest

from blockcca.errors import (
    ConfigError,
    DeadGradient,
    DimensionError,
    EmptySupport,
    RankDeficient,
)
from blockcca.linalg import random_stiefel
from blockcca.model import (
    MultiViewSparsityParams,
    SparsityParams,
    SparsityPattern,
    SpectralWeights,
    objective_l1_surrogate,
)
from blockcca.pattern import (
    PatternProblem,
    estimate_patterns,
    gamma_from_column_norms,
    shrink_covariance,
    support_directed,
    support_l0,
    support_l1,
    support_multiview,
    sweep_directed,
    sweep_l0,
    sweep_l1,
    sweep_multiview,
)

MU2 = np.array([1.0, 0.9])


def planted_rank_two(p=6, s1=2.0, s2=1.0):
    """Cross-covariance with two planted pairs on disjoint 3-row blocks."""
    u1 = np.zeros(p)
    u1[: p // 2] = 1.0 / np.sqrt(p // 2)
    u2 = np.zeros(p)
    u2[p // 2 :] = 1.0 / np.sqrt(p - p // 2)
    c = s1 * np.outer(u1, u1) + s2 * np.outer(u2, u2)
    mask1 = np.zeros((p, 2), dtype=bool)
    mask1[: p // 2, 0] = True
    mask1[p // 2 :, 1] = True
    return c, mask1


class TestSweepL1:
    def test_identity_fixed_point(self):
        out = sweep_l1(np.eye(2), np.eye(2), np.zeros(2), MU2)
        np.testing.assert_allclose(out, np.eye(2), atol=1e-15)

    def test_dead_gradient_above_column_norm_bound(self):
        rng = np.random.default_rng(0)
        c = rng.standard_normal((4, 3))
        z = random_stiefel(4, 2, 1)
        gamma = MU2 * np.linalg.norm(c, axis=0).max() + 1.0
        with pytest.raises(DeadGradient) as err:
            sweep_l1(c, z, gamma, MU2)
        assert err.value.columns == (0, 1)

    def test_single_direction_hand_gradient(self):
        # Hinges 0.6 and 0.1 weight the two coefficient columns.
        c = np.array([[1.0, 0.5], [0.5, 1.0]])
        z = np.array([[1.0], [0.0]])
        g = 0.6 * np.array([1.0, 0.5]) + 0.1 * np.array([0.5, 1.0])
        expect = g / np.linalg.norm(g)
        out = sweep_l1(c, z, [0.4], [1.0])
        np.testing.assert_allclose(out[:, 0], expect, atol=1e-12)
        np.testing.assert_allclose(out[:, 0], [0.8517, 0.5241], atol=5e-5)

    def test_mask_zeroes_inactive_entries(self):
        rng = np.random.default_rng(2)
        c = rng.standard_normal((4, 4))
        z = random_stiefel(4, 2, 3)
        mask = np.ones((4, 2), dtype=bool)
        mask[0, 0] = False
        out = sweep_l1(c, z, np.zeros(2), MU2, mask=SparsityPattern(mask))
        assert out[0, 0] == 0.0
        unmasked = sweep_l1(c, z, np.zeros(2), MU2)
        np.testing.assert_array_equal(out[1:, 0], unmasked[1:, 0])

    def test_conformance_errors(self):
        with pytest.raises(DimensionError):
            sweep_l1(np.eye(3), np.eye(2), np.zeros(2), MU2)
        with pytest.raises(DimensionError):
            sweep_l1(np.eye(2), np.eye(2), np.zeros(3), MU2)


class TestSweepL0:
    def test_identity_fixed_point(self):
        out = sweep_l0(np.eye(2), np.eye(2), np.zeros(2), MU2)
        np.testing.assert_allclose(out, np.eye(2), atol=1e-15)

    def test_dead_gradient_above_squared_bound(self):
        rng = np.random.default_rng(4)
        c = rng.standard_normal((4, 3))
        z = random_stiefel(4, 2, 5)
        gamma = (MU2 * np.linalg.norm(c, axis=0).max()) ** 2 + 1.0
        with pytest.raises(DeadGradient):
            sweep_l0(c, z, gamma, MU2)

    def test_single_direction_hand_gradient(self):
        # Squared hinges: 1 - 0.4 = 0.6 active, 0.25 - 0.4 clipped.
        c = np.array([[1.0, 0.5], [0.5, 1.0]])
        z = np.array([[1.0], [0.0]])
        out = sweep_l0(c, z, [0.4], [1.0])
        np.testing.assert_allclose(
            out[:, 0], [0.8944271909999159, 0.4472135954999579], atol=1e-12
        )


class TestSweepDirected:
    def test_zero_pull_reduces_to_l1_bitwise(self):
        rng = np.random.default_rng(6)
        n, p1, p2, d = 10, 5, 4, 2
        x1 = rng.standard_normal((n, p1))
        x2 = rng.standard_normal((n, p2))
        c = x1.T @ x2 / n
        z = random_stiefel(p1, d, 7)
        y = rng.standard_normal((n, d))
        y /= np.linalg.norm(y, axis=0)
        gamma = np.array([0.05, 0.02])
        out = sweep_directed(c, x1, x2, y, z, gamma, np.zeros(d), np.zeros(d), MU2)
        np.testing.assert_array_equal(out, sweep_l1(c, z, gamma, MU2))

    def test_orthogonal_accessory_contributes_nothing(self):
        rng = np.random.default_rng(7)
        n, p1, p2 = 8, 3, 3
        # Columns sum to zero exactly, so x.T @ (ones/sqrt(n)) is exactly zero.
        half = rng.integers(1, 6, size=(n // 2, p1)).astype(float)
        x1 = np.vstack([half, -half])
        x2 = np.vstack([-half, half])
        c = x1.T @ x2 / n
        y = np.ones((n, 1)) / np.sqrt(n)
        z = random_stiefel(p1, 1, 8)
        out = sweep_directed(c, x1, x2, y, z, [0.1], [0.7], [0.0], [1.0])
        np.testing.assert_array_equal(out, sweep_l1(c, z, [0.1], [1.0]))

    def test_hand_gradient_with_pull(self):
        rng = np.random.default_rng(9)
        n, p = 6, 2
        x1 = rng.standard_normal((n, p))
        x2 = rng.standard_normal((n, p))
        c = x1.T @ x2 / n
        y = rng.standard_normal((n, 1))
        y /= np.linalg.norm(y)
        z = np.array([[1.0], [0.0]])
        eps, gamma, mu = 0.5, 0.05, 1.0
        g = np.zeros(p)
        for i in range(p):
            a_i = float(c[:, i] @ z[:, 0]) + eps * float(x2[:, i] @ y[:, 0])
            h = mu * max(mu * abs(a_i) - gamma, 0.0) * np.sign(a_i)
            g += h * c[:, i]
        g += eps * (x1.T @ y[:, 0])
        expect = g / np.linalg.norm(g)
        out = sweep_directed(c, x1, x2, y, z, [gamma], [eps], [eps], [mu])
        np.testing.assert_allclose(out[:, 0], expect, atol=1e-12)


class TestSweepMultiview:
    def test_two_views_reduce_to_l1_bitwise(self):
        rng = np.random.default_rng(10)
        c = rng.standard_normal((5, 4))
        z = random_stiefel(5, 2, 11)
        gamma = np.array([0.1, 0.05])
        out = sweep_multiview({(0, 1): c}, [z, None], target=1,
                              gammas=gamma, mu=MU2)
        np.testing.assert_array_equal(out[0], sweep_l1(c, z, gamma, MU2))
        assert out[1] is None

    def test_all_zero_covariances_dead(self):
        zs = [random_stiefel(3, 1, s) for s in (1, 2, 3)]
        covs = {pair: np.zeros((3, 3)) for pair in [(0, 1), (0, 2), (1, 2)]}
        with pytest.raises(DeadGradient):
            sweep_multiview(covs, zs, target=0, gammas=np.zeros(1), mu=[1.0])

    def test_matches_explicit_loop_transcription(self):
        rng = np.random.default_rng(7)
        m, p, d = 3, 2, 1
        covs = {pair: rng.standard_normal((p, p))
                for pair in [(0, 1), (0, 2), (1, 2)]}
        zs = [random_stiefel(p, d, (7, r)) for r in range(m)]
        mu = np.array([1.0])
        thresh = np.array([0.15])
        target = 0

        def oc(a, b):
            return covs[(a, b)] if a < b else covs[(b, a)].T

        # Independent transcription: explicit index loops, Gauss-Seidel order.
        naive = [z.copy() for z in zs]
        others = [r for r in range(m) if r != target]
        for r in others:
            g = np.zeros(p)
            for i in range(p):
                agg = 0.0
                for rr in others:
                    agg += float(oc(target, rr)[i, :] @ naive[rr][:, 0])
                h = mu[0] * max(mu[0] * abs(agg) - thresh[0], 0.0) * np.sign(agg)
                g += h * oc(r, target)[:, i]
            for l in others:
                if l != r:
                    g += mu[0] * (oc(r, l) @ naive[l][:, 0])
            naive[r] = (g / np.linalg.norm(g))[:, None]

        out = sweep_multiview(covs, zs, target=target, gammas=thresh, mu=mu)
        for r in others:
            np.testing.assert_allclose(out[r], naive[r], atol=1e-12)

    def test_accepts_params_object(self):
        rng = np.random.default_rng(12)
        c = rng.standard_normal((4, 4))
        z = random_stiefel(4, 1, 13)
        params = MultiViewSparsityParams.uniform(0.05, m=2, d=1)
        out = sweep_multiview({(0, 1): c}, [z, None], target=1,
                              gammas=params, mu=[1.0])
        np.testing.assert_array_equal(out[0], sweep_l1(c, z, [0.05], [1.0]))


class TestSupportRules:
    def test_zero_threshold_keeps_nonzero_coefficients(self):
        c = np.array([[1.0, 0.0], [0.0, 0.0]])
        z = np.array([[1.0], [0.0]])
        pat = support_l1(c, z, [0.0], [1.0])
        np.testing.assert_array_equal(pat.mask[:, 0], [True, False])

    def test_boundary_is_inactive_exact(self):
        # a = 0.75 exactly; gamma / mu = (0.375 / 0.5) = 0.75 exactly.
        c = np.array([[0.75], [0.5]])
        z = np.array([[1.0], [0.0]])
        pat = support_l1(c, z, [0.375], [0.5])
        assert not pat.mask[0, 0]
        above = np.nextafter(0.375, 0.0)
        assert support_l1(c, z, [above], [0.5]).mask[0, 0]

    def test_squared_boundary_is_inactive_exact(self):
        # a = 0.25, a^2 = 0.0625; gamma / mu^2 = 0.015625 / 0.25 = 0.0625.
        c = np.array([[0.25], [0.1]])
        z = np.array([[1.0], [0.0]])
        pat = support_l0(c, z, [0.015625], [0.5])
        assert not pat.mask[0, 0]
        assert support_l0(c, z, [np.nextafter(0.015625, 0.0)], [0.5]).mask[0, 0]

    def test_column_norm_sufficient_condition(self):
        # Rows with ||c_i|| <= gamma / mu can never activate, any direction.
        c = np.array([[3.0, 0.1], [4.0, 0.2]])
        gamma, mu = [5.0], [1.0]
        for seed in range(25):
            z = random_stiefel(2, 1, seed)
            pat = support_l1(c, z, gamma, mu)
            assert not pat.mask[0, 0]
            assert not pat.mask[1, 0]
        aligned = (np.array([3.0, 4.0]) / 5.0)[:, None]
        assert not support_l1(c, aligned, gamma, mu).mask[0, 0]

    def test_directed_rule_shifts_threshold_argument(self):
        rng = np.random.default_rng(14)
        n, p = 6, 3
        x2 = rng.standard_normal((n, p))
        c = rng.standard_normal((p, p))
        z = random_stiefel(p, 1, 15)
        y = rng.standard_normal((n, 1))
        y /= np.linalg.norm(y)
        eps = np.array([0.4])
        pat = support_directed(c, x2, y, z, [0.3], eps, [1.0])
        a = c.T @ z + (x2.T @ y) * eps
        np.testing.assert_array_equal(pat.mask, np.abs(a) > 0.3)

    def test_multiview_aggregate_rule(self):
        rng = np.random.default_rng(16)
        p = 3
        covs = {pair: rng.standard_normal((p, p))
                for pair in [(0, 1), (0, 2), (1, 2)]}
        zs = [random_stiefel(p, 1, (16, r)) for r in range(3)]
        params = MultiViewSparsityParams.uniform(0.2, m=3, d=1)
        pat = support_multiview(covs, zs, target=0, gammas=params, mu=[1.0])
        a = covs[(0, 1)] @ zs[1] + covs[(0, 2)] @ zs[2]
        np.testing.assert_array_equal(pat.mask, np.abs(a) > 0.4)

    def test_support_shrinks_as_threshold_grows(self):
        rng = np.random.default_rng(17)
        for trial in range(20):
            c = rng.standard_normal((5, 4))
            z = random_stiefel(5, 2, (17, trial))
            lo = np.abs(rng.standard_normal(2)) * 0.3
            hi = lo + np.abs(rng.standard_normal(2)) * 0.3
            wide = support_l1(c, z, lo, MU2).mask
            narrow = support_l1(c, z, hi, MU2).mask
            assert not np.any(narrow & ~wide)


class TestShrinkCovariance:
    def test_all_active_is_identity(self):
        c = np.arange(12.0).reshape(3, 4)
        pat = SparsityPattern.all_active(4, 1)
        np.testing.assert_array_equal(shrink_covariance(c, pat, 0, "cols"), c)

    def test_single_active_row(self):
        c = np.arange(25.0).reshape(5, 5)
        mask = np.zeros((5, 1), dtype=bool)
        mask[2, 0] = True
        out = shrink_covariance(c, SparsityPattern(mask), 0, "rows")
        np.testing.assert_array_equal(out, c[[2], :])

    def test_column_subset_in_order(self):
        c = np.arange(16.0).reshape(4, 4)
        mask = np.zeros((4, 1), dtype=bool)
        mask[[1, 3], 0] = True
        out = shrink_covariance(c, SparsityPattern(mask), 0, "cols")
        np.testing.assert_array_equal(out, c[:, [1, 3]])

    def test_empty_column_rejected(self):
        c = np.eye(3)
        mask = np.zeros((3, 1), dtype=bool)
        with pytest.raises(EmptySupport):
            shrink_covariance(c, SparsityPattern(mask), 0, "rows")

    def test_side_and_shape_validated(self):
        pat = SparsityPattern.all_active(3, 1)
        with pytest.raises(ConfigError):
            shrink_covariance(np.eye(3), pat, 0, "diag")
        with pytest.raises(DimensionError):
            shrink_covariance(np.eye(4), pat, 0, "rows")


class TestGammaHeuristic:
    def test_quantile_of_column_norms(self):
        c = np.diag([1.0, 2.0, 3.0, 4.0])
        mu = np.array([1.0, 0.5])
        np.testing.assert_allclose(
            gamma_from_column_norms(c, mu, quantile=0.5), [2.5, 1.25]
        )

    def test_zero_quantile_is_minimum_norm(self):
        c = np.diag([1.0, 2.0, 3.0, 4.0])
        np.testing.assert_allclose(gamma_from_column_norms(c, [1.0], 0.0), [1.0])

    def test_quantile_range_validated(self):
        for q in (1.0, -0.1, 2.0):
            with pytest.raises(ConfigError):
                gamma_from_column_norms(np.eye(2), [1.0], q)


def two_view_problem(c, gamma1, gamma2, d=1, **kw):
    gamma1 = np.full(d, gamma1, dtype=float) if np.ndim(gamma1) == 0 else gamma1
    gamma2 = np.full(d, gamma2, dtype=float) if np.ndim(gamma2) == 0 else gamma2
    return PatternProblem(
        variant=kw.pop("variant", "l1"),
        covs={(0, 1): c},
        dims=c.shape,
        params=SparsityParams(np.asarray(gamma1), np.asarray(gamma2)),
        weights=SpectralWeights.default(d),
        **kw,
    )


class TestPatternProblemValidation:
    def test_unknown_variant(self):
        with pytest.raises(ConfigError):
            two_view_problem(np.eye(3), 0.0, 0.0, variant="elastic")

    def test_multiview_requires_matrix_params(self):
        with pytest.raises(ConfigError):
            two_view_problem(np.eye(3), 0.0, 0.0, variant="multiview")

    def test_two_view_rejects_matrix_params(self):
        with pytest.raises(ConfigError):
            PatternProblem(
                variant="l1", covs={(0, 1): np.eye(3)}, dims=(3, 3),
                params=MultiViewSparsityParams.uniform(0.1, m=2, d=1),
                weights=SpectralWeights.default(1),
            )

    def test_missing_covariance_pair(self):
        with pytest.raises(ConfigError):
            PatternProblem(
                variant="multiview",
                covs={(0, 1): np.eye(3)},
                dims=(3, 3, 3),
                params=MultiViewSparsityParams.uniform(0.1, m=3, d=1),
                weights=SpectralWeights.default(1),
            )

    def test_order_must_be_permutation(self):
        with pytest.raises(ConfigError):
            two_view_problem(np.eye(3), 0.0, 0.0, order=(0, 0))

    def test_d_bounded_by_smallest_view(self):
        with pytest.raises(ConfigError):
            two_view_problem(np.ones((4, 2)), 0.0, 0.0, d=3)

    def test_directed_requires_config(self):
        with pytest.raises(ConfigError):
            two_view_problem(np.eye(3), 0.0, 0.0, variant="directed")

    def test_default_order_two_view(self):
        assert two_view_problem(np.eye(3), 0.0, 0.0).order == (1, 0)


class TestEstimatePatterns:
    def test_zero_threshold_all_active(self):
        rng = np.random.default_rng(20)
        c = rng.standard_normal((4, 3))
        res = estimate_patterns(two_view_problem(c, 0.0, 0.0, d=2))
        assert res.patterns[0].mask.all() and res.patterns[1].mask.all()
        assert res.dead_directions == ()
        assert all(res.converged)

    def test_planted_disjoint_blocks_recovered(self):
        c, mask1 = planted_rank_two()
        problem = two_view_problem(c, np.array([0.5, 0.25]),
                                   np.array([0.5, 0.25]), d=2, restarts=6)
        res = estimate_patterns(problem)
        np.testing.assert_array_equal(res.patterns[0].mask, mask1)
        np.testing.assert_array_equal(res.patterns[1].mask, mask1)
        assert res.dead_directions == ()

    def test_converged_surrogate_matches_sphere_grid(self):
        step = 0.01
        theta = np.arange(0.0, np.pi + step, step)
        phi = np.arange(0.0, 2.0 * np.pi, step)
        t, f = np.meshgrid(theta, phi, indexing="ij")
        grid = np.stack(
            [np.sin(t) * np.cos(f), np.sin(t) * np.sin(f), np.cos(t)]
        ).reshape(3, -1)
        rng = np.random.default_rng(21)
        for trial in range(3):
            c = rng.standard_normal((3, 3))
            gamma2 = 0.5 * float(np.median(np.linalg.norm(c, axis=0)))
            a = np.abs(c.T @ grid)
            hinge = np.maximum(a - gamma2, 0.0)
            values = np.sum(hinge * hinge, axis=0)
            best = int(np.argmax(values))
            res = estimate_patterns(
                two_view_problem(c, gamma2, gamma2, seed=trial, restarts=10,
                                 tol=1e-12, max_iters=2000)
            )
            assert res.traces[0][-1] == pytest.approx(float(values[best]), abs=1e-3)
            grid_support = a[:, best] > gamma2
            np.testing.assert_array_equal(res.patterns[1].mask[:, 0], grid_support)

    def test_flat_start_survives_where_raw_sweep_dies(self):
        # A fresh random start sits below every hinge threshold even though
        # the threshold is attainable at the optimum; the driver recovers,
        # the raw single sweep cannot.
        p = 30
        u = np.zeros(p)
        u[:5] = 1.0 / np.sqrt(5.0)
        w = np.zeros(p)
        w[-5:] = 1.0 / np.sqrt(5.0)
        c = 3.0 * np.outer(u, w)
        z0 = random_stiefel(p, 1, (0, 1, 0, 0, 0))
        with pytest.raises(DeadGradient):
            sweep_l1(c, z0, [1.0], [1.0])
        res = estimate_patterns(two_view_problem(c, 1.0, 1.0))
        assert res.dead_directions == ()
        np.testing.assert_array_equal(res.patterns[0].mask[:, 0], u > 0)
        np.testing.assert_array_equal(res.patterns[1].mask[:, 0], w > 0)

    def test_unreachable_direction_dies_with_cause(self):
        c, mask1 = planted_rank_two()
        big = np.linalg.norm(c, axis=0).max() + 1.0
        problem = two_view_problem(
            c, np.array([0.5, big]), np.array([0.5, big]), d=2, restarts=4
        )
        res = estimate_patterns(problem)
        assert res.dead_directions == (1,)
        assert res.dead_causes == {1: "DeadGradient"}
        assert not res.patterns[0].mask[:, 1].any()
        assert not res.patterns[1].mask[:, 1].any()
        np.testing.assert_array_equal(res.patterns[0].mask[:, 0], mask1[:, 0])

    def test_every_direction_dead_raises(self):
        rng = np.random.default_rng(22)
        c = rng.standard_normal((4, 4)) * 0.01
        # Threshold far above every row norm: all hinges stay flat even
        # after the fallback step, so the death is a dead gradient, not an
        # emptied support.
        with pytest.raises(DeadGradient):
            estimate_patterns(two_view_problem(c, 10.0, 10.0))
        # Zero covariance: flat before the fallback has anything to move.
        with pytest.raises(DeadGradient):
            estimate_patterns(two_view_problem(np.zeros((4, 4)), 0.5, 0.5))

    @pytest.mark.parametrize("kappa", [0.5, 3.0, 100.0])
    def test_joint_scaling_leaves_run_invariant(self, kappa):
        rng = np.random.default_rng(23)
        c = rng.standard_normal((5, 4))
        gamma = 0.3 * float(np.median(np.linalg.norm(c, axis=0)))
        base = estimate_patterns(two_view_problem(c, gamma, gamma, d=2, seed=9))
        scaled = estimate_patterns(
            two_view_problem(kappa * c, kappa * gamma, kappa * gamma, d=2, seed=9)
        )
        for i in range(2):
            np.testing.assert_array_equal(
                base.patterns[i].mask, scaled.patterns[i].mask
            )
            np.testing.assert_allclose(base.blocks[i], scaled.blocks[i], atol=1e-10)

    def test_restart_bookkeeping(self):
        rng = np.random.default_rng(24)
        c = rng.standard_normal((4, 4))
        res = estimate_patterns(two_view_problem(c, 0.1, 0.1, restarts=3))
        assert len(res.restart_scores) == 3
        assert res.selected_restart == int(np.argmax(res.restart_scores))

    def test_monotone_surrogate_between_resets(self):
        rng = np.random.default_rng(25)
        for trial in range(20):
            p1, p2 = rng.integers(3, 12, size=2)
            d = int(rng.integers(1, min(p1, p2) + 1))
            d = min(d, 3)
            c = rng.standard_normal((p1, p2))
            scale = float(np.median(np.linalg.norm(c, axis=0)))
            gamma1 = rng.uniform(0.0, 0.8 * scale, size=d)
            gamma2 = rng.uniform(0.0, 0.8 * scale, size=d)
            try:
                res = estimate_patterns(
                    two_view_problem(c, gamma1, gamma2, d=d, seed=trial)
                )
            except (DeadGradient, EmptySupport, RankDeficient):
                continue
            for trace, resets in zip(res.traces, res.trace_resets):
                for k in range(1, len(trace)):
                    if k in resets:
                        continue
                    assert trace[k] >= trace[k - 1] - 1e-10

    def test_blocks_masked_by_patterns(self):
        c, _ = planted_rank_two()
        res = estimate_patterns(
            two_view_problem(c, np.array([0.5, 0.25]), np.array([0.5, 0.25]),
                             d=2, restarts=6)
        )
        for i in range(2):
            assert not res.blocks[i][~res.patterns[i].mask].any()

    def test_l0_variant_runs(self):
        c, mask1 = planted_rank_two()
        res = estimate_patterns(
            two_view_problem(c, 0.25, 0.25, variant="l0", restarts=4)
        )
        np.testing.assert_array_equal(res.patterns[0].mask[:, 0], mask1[:, 0])
