import numpy as np
import pytest

from conftest import make_ar_series, make_instance
from tailedts.losses import LossSpec, total_objective
from tailedts.solvers import (
    DesignPair,
    IrlsOptions,
    SingularDesignError,
    build_design,
    fit_huber_oracle,
    fit_irls,
    fit_l1_lp,
    fit_model,
    fit_quantile_lp,
    fit_wls,
    predict_one_step,
    rolling_forecast,
)


class TestBuildDesign:
    def test_hand_example(self):
        pair = build_design([1, 2, 3, 4], 2)
        assert pair.a.tolist() == [[2, 1], [3, 2]]
        assert pair.y.tolist() == [3, 4]

    def test_boundary_single_row(self):
        pair = build_design([1, 2, 3, 4], 3)
        assert pair.a.shape == (1, 3)
        assert pair.a.tolist() == [[3, 2, 1]]

    def test_pool_stacks_blocks(self):
        x = np.arange(10.0)
        pair = build_design([x, x + 1], 4)
        assert pair.n_rows == 2 * (10 - 4)

    def test_too_short_rejected(self):
        with pytest.raises(ValueError):
            build_design([1, 2, 3], 3)


class TestFitWls:
    def test_noiseless_ar1_recovered_exactly(self):
        x = 0.5 ** np.arange(12)
        pair = build_design(x, 1)
        w = fit_wls(pair)
        assert w[0] == pytest.approx(0.5, abs=1e-12)

    def test_zero_weight_row_equals_deleted_row_ols(self):
        a = np.array([[1.0, 0.0], [1.0, 1.0], [2.0, 5.0]])
        y = np.array([1.0, 3.0, -4.0])
        pair = DesignPair(a=a, y=y)
        w = fit_wls(pair, np.array([1.0, 1.0, 0.0]))
        # exact 2x2 solve on the surviving rows
        w_ref = np.linalg.solve(a[:2], y[:2])
        assert w == pytest.approx(w_ref, abs=1e-9)

    def test_hand_weighted_normal_equations(self):
        # A=[[1,0],[1,1]], y=[1,3], theta=[2,1] -> G=[[3,1],[1,1]], c=[5,3]
        # -> w = [1, 2] by elimination
        pair = DesignPair(a=np.array([[1.0, 0.0], [1.0, 1.0]]), y=np.array([1.0, 3.0]))
        w = fit_wls(pair, np.array([2.0, 1.0]))
        assert w == pytest.approx([1.0, 2.0], abs=1e-12)

    def test_negative_weights_rejected(self):
        pair = build_design([1, 2, 3, 4], 1)
        with pytest.raises(ValueError):
            fit_wls(pair, np.array([-1.0, 1.0, 1.0]))

    def test_singular_design_ridge_rescue(self):
        # duplicated column: exactly rank deficient, rescue must kick in
        a = np.array([[1.0, 1.0], [2.0, 2.0], [3.0, 3.0]])
        pair = DesignPair(a=a, y=np.array([1.0, 2.0, 3.0]))
        w = fit_wls(pair)
        assert np.all(np.isfinite(w))

    def test_non_finite_rejected(self):
        a = np.array([[1.0, np.inf], [1.0, 2.0]])
        pair = DesignPair(a=a, y=np.array([1.0, 2.0]))
        with pytest.raises(SingularDesignError):
            fit_wls(pair)


class TestQuantileLp:
    def test_five_point_grid_oracle(self):
        x = np.array([1.0, 2.0, -1.0, 3.0, 0.5, 1.7])
        pair = build_design(x, 1)
        fit = fit_quantile_lp(pair, 0.3)
        spec = LossSpec.quantile(0.3)
        grid = np.arange(-2.0, 2.0 + 1e-9, 1e-4)
        best = min(total_objective(spec, pair.y - pair.a @ np.array([g])) for g in grid)
        assert fit.objective <= best + 1e-6
        assert fit.objective == pytest.approx(best, abs=1e-4)

    def test_tau_half_is_half_the_l1_objective(self):
        pair = make_instance(11, n=80, d=3)
        q = fit_quantile_lp(pair, 0.5)
        l1 = fit_l1_lp(pair)
        assert 2 * q.objective == pytest.approx(l1.objective, rel=1e-9)

    @pytest.mark.parametrize("seed", range(8))
    def test_certification_holds_on_random_instances(self, seed):
        pair = make_instance(seed, n=60, d=4)
        fit = fit_quantile_lp(pair, 0.3)  # raises if certification fails
        assert fit.converged
        # at most d residuals are interpolated to zero beyond ties
        resid = pair.y - pair.a @ fit.weights
        near_zero = np.sum(np.abs(resid) < 1e-7 * max(1, np.abs(pair.y).max()))
        assert near_zero >= pair.order  # basis rows are interpolated


class TestQuantileLpVsScipyPrimal:
    @pytest.mark.parametrize("seed", range(6))
    def test_medium_instances(self, seed):
        from scipy.optimize import linprog

        pair = make_instance(seed, n=300, d=8)
        tau = [0.1, 0.3, 0.5, 0.7, 0.9, 0.25][seed]
        fit = fit_quantile_lp(pair, tau)
        n, d = pair.a.shape
        c = np.concatenate([np.zeros(d), np.full(n, tau), np.full(n, 1 - tau)])
        a_eq = np.hstack([pair.a, np.eye(n), -np.eye(n)])
        bounds = [(None, None)] * d + [(0, None)] * (2 * n)
        ref = linprog(c, A_eq=a_eq, b_eq=pair.y, bounds=bounds, method="highs")
        assert ref.status == 0
        assert fit.objective == pytest.approx(ref.fun, rel=1e-9, abs=1e-9)


class TestL1Lp:
    def test_exact_ar_interpolation(self):
        x = make_ar_series(3, n=60, d=2, weights=[0.4, 0.3], level=1.0)
        # replace noise with an exact AR recursion
        w_true = np.array([0.4, 0.3])
        x2 = np.zeros(60)
        x2[:2] = [1.0, 2.0]
        for t in range(2, 60):
            x2[t] = w_true @ x2[t - 2: t][::-1] + 0.5
        # add the constant as a third pseudo-lag via an intercept-free trick:
        # fit on differences of an exact recursion without drift instead
        x3 = np.zeros(60)
        x3[:2] = [1.0, 2.0]
        for t in range(2, 60):
            x3[t] = w_true @ x3[t - 2: t][::-1]
        pair = build_design(x3 + 0.0, 2)
        fit = fit_l1_lp(pair)
        assert fit.objective == pytest.approx(0.0, abs=1e-8)
        assert fit.weights == pytest.approx(w_true, abs=1e-6)

    def test_l1_optimum_dominates_ols_l1_objective(self):
        pair = make_instance(7, n=50, d=3)
        l1 = fit_l1_lp(pair)
        w_ols = fit_wls(pair)
        ols_l1 = total_objective(LossSpec.l1(), pair.y - pair.a @ w_ols)
        assert l1.objective <= ols_l1 + 1e-9


class TestHuberOracle:
    def test_huge_delta_equals_ols(self):
        pair = make_instance(2, n=120, d=4)
        fit = fit_huber_oracle(pair, 1e9)
        w_ols = fit_wls(pair)
        assert fit.weights == pytest.approx(w_ols, rel=1e-7, abs=1e-7)

    @pytest.mark.parametrize("seed", range(50))
    def test_irls_agreement_fifty_seeds(self, seed):
        pair = make_instance(seed, n=150, d=4)
        strong = IrlsOptions(max_iter=300, eps0=0.0, tol=1e-14)
        fi = fit_irls(pair, LossSpec.huber(1.0), strong)
        fo = fit_huber_oracle(pair, 1.0)
        assert fi.objective == pytest.approx(fo.objective, rel=1e-6)

    def test_small_delta_approaches_l1_direction(self):
        pair = make_instance(9, n=100, d=3)
        l1_spec = LossSpec.l1()
        # near the l1 limit the quadratic region is microscopic and plain
        # gradient descent oscillates across the kinks well above 1e-9; a
        # loose gradient target suffices for an objective-ordering check
        w_h = fit_huber_oracle(pair, 1e-3, gtol=1e-3).weights
        w_ols = fit_wls(pair)
        l1_of = lambda w: total_objective(l1_spec, pair.y - pair.a @ w)
        l1_opt = fit_l1_lp(pair).objective
        # the tiny-delta huber solution is nearly l1-optimal; OLS is not
        assert l1_of(w_h) <= l1_of(w_ols)
        assert l1_of(w_h) == pytest.approx(l1_opt, rel=1e-2)


def _coordinate_search(pair, p, restarts=100, sweeps=30, seed=0):
    """Multi-start coordinate descent with nested grid refinement."""
    rng = np.random.default_rng(seed)
    d = pair.order
    best_obj = np.inf
    for _ in range(restarts):
        w = rng.uniform(-0.5, 1.0, size=d)
        for _ in range(sweeps):
            moved = False
            for k in range(d):
                lo, hi = w[k] - 1.0, w[k] + 1.0
                for _ in range(4):
                    grid = np.linspace(lo, hi, 33)
                    trials = np.repeat(w[None, :], 33, axis=0)
                    trials[:, k] = grid
                    objs = (np.abs(pair.y[None, :] - trials @ pair.a.T) ** p).sum(axis=1)
                    j = int(np.argmin(objs))
                    span = (hi - lo) / 8
                    lo, hi = grid[j] - span, grid[j] + span
                if abs(grid[j] - w[k]) > 1e-12:
                    moved = True
                w[k] = grid[j]
            if not moved:
                break
        obj = total_objective(LossSpec.lp(p), pair.y - pair.a @ w)
        best_obj = min(best_obj, obj)
    return best_obj


class TestFitIrls:
    def test_huber_equals_ols_when_all_residuals_inside(self):
        rng = np.random.default_rng(4)
        x = make_ar_series(4, n=150, d=3, level=1.0)
        x = x + rng.normal(0, 0.0, size=x.shape)  # noise already small vs delta
        pair = build_design(x, 3)
        w_ols = fit_wls(pair)
        resid = pair.y - pair.a @ w_ols
        delta = float(np.abs(resid).max()) * 2 + 1.0
        fit = fit_irls(pair, LossSpec.huber(delta))
        assert fit.weights == pytest.approx(w_ols, abs=1e-8)

    def test_quantile_close_to_lp_with_defaults(self):
        pair = make_instance(13, n=100, d=2)
        fi = fit_irls(pair, LossSpec.quantile(0.3))
        fl = fit_quantile_lp(pair, 0.3)
        assert fi.objective == pytest.approx(fl.objective, rel=1e-3)

    def test_lp_beats_multistart_coordinate_search(self):
        pair = make_instance(3, n=200, d=3)
        fit = fit_irls(pair, LossSpec.lp(0.5),
                       IrlsOptions(max_iter=400, eps0=100.0, decay=0.95))
        oracle = _coordinate_search(pair, 0.5)
        assert fit.objective <= oracle * (1 + 1e-4)

    def test_huber_objective_monotone_along_iterations(self):
        for seed in range(5):
            pair = make_instance(seed, n=120, d=3)
            fit = fit_irls(pair, LossSpec.huber(1.0),
                           IrlsOptions(max_iter=40, eps0=0.0))
            traj = np.array(fit.trajectory)
            assert np.all(np.diff(traj) <= 1e-12 * np.maximum(1.0, traj[:-1]))

    def test_l2_is_refused(self):
        pair = make_instance(0, n=30, d=2)
        with pytest.raises(ValueError):
            fit_irls(pair, LossSpec.l2())

    def test_objective_field_consistent(self):
        pair = make_instance(21, n=80, d=3)
        fit = fit_irls(pair, LossSpec.l1())
        recomputed = total_objective(fit.loss, pair.y - pair.a @ fit.weights)
        assert fit.objective == pytest.approx(recomputed, rel=1e-9)


class TestInvariances:
    def test_row_permutation_leaves_weights(self, rng):
        pair = make_instance(17, n=60, d=3)
        perm = rng.permutation(pair.n_rows)
        shuffled = DesignPair(a=pair.a[perm], y=pair.y[perm])
        for fitter in (lambda p: fit_wls(p),
                       lambda p: fit_l1_lp(p).weights,
                       lambda p: fit_quantile_lp(p, 0.3).weights):
            w1, w2 = fitter(pair), fitter(shuffled)
            assert w1 == pytest.approx(w2, rel=1e-6, abs=1e-8)

    def test_scale_equivariance_l2_l1(self):
        x = make_ar_series(19, n=80, d=2)
        for c in (0.01, 7.3):
            p1 = build_design(x, 2)
            p2 = build_design(c * x, 2)
            assert fit_wls(p1) == pytest.approx(fit_wls(p2), rel=1e-8)
            assert fit_l1_lp(p1).weights == pytest.approx(
                fit_l1_lp(p2).weights, rel=1e-6, abs=1e-8)


class TestFitModelDispatch:
    def test_auto_routes(self):
        pair = make_instance(1, n=60, d=2)
        assert fit_model(pair, LossSpec.l2()).iterations == 1
        assert fit_model(pair, LossSpec.quantile(0.3)).converged
        assert fit_model(pair, LossSpec.huber(1.0)).iterations >= 1

    def test_bad_combinations_rejected(self):
        pair = make_instance(1, n=30, d=2)
        with pytest.raises(ValueError):
            fit_model(pair, LossSpec.l1(), method="wls")
        with pytest.raises(ValueError):
            fit_model(pair, LossSpec.l2(), method="lp")


class TestPrediction:
    def test_predict_one_step_examples(self):
        assert predict_one_step([0.5], [10.0]) == pytest.approx(5.0)
        w = np.zeros(24)
        w[23] = 1.0  # unit weight at lag 24: yesterday-same-hour copy
        history = np.arange(24.0)  # most recent first
        assert predict_one_step(w, history) == pytest.approx(23.0)
        assert predict_one_step(np.zeros(3), [1.0, 2.0, 3.0]) == 0.0

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            predict_one_step([0.5, 0.5], [1.0])

    def test_constant_series_fixed_point(self):
        w = np.array([0.25, 0.25, 0.5])
        x = np.full(50, 7.0)
        preds = rolling_forecast(w, x, range(3, 50))
        assert preds == pytest.approx(np.full(47, 7.0))

    def test_168_step_window(self):
        x = make_ar_series(23, n=400, d=4)
        preds = rolling_forecast(np.array([0.3, 0.2, 0.1, 0.1]), x, range(200, 368))
        assert preds.shape == (168,)

    def test_exact_ar_has_zero_error(self):
        w = np.array([0.4, 0.3])
        x = np.zeros(40)
        x[:2] = [1.0, 2.0]
        for t in range(2, 40):
            x[t] = w @ x[t - 2: t][::-1]
        preds = rolling_forecast(w, x, range(2, 40))
        assert preds == pytest.approx(x[2:], abs=1e-12)

    def test_range_before_order_rejected(self):
        with pytest.raises(ValueError):
            rolling_forecast(np.ones(3), np.arange(10.0), range(2, 5))

    def test_matches_loop(self):
        x = make_ar_series(29, n=60, d=3)
        w = np.array([0.2, 0.3, 0.1])
        preds = rolling_forecast(w, x, range(10, 20))
        for i, t in enumerate(range(10, 20)):
            manual = w @ x[t - 1: t - 4: -1]
            assert preds[i] == pytest.approx(manual, rel=1e-12)
