import numpy as np
import pytest

from tailedts.bench import compute_metrics
from tailedts.losses import LossSpec
from tailedts.solvers import (
    DesignPair,
    IrlsOptions,
    build_design,
    fit_irls,
    fit_l1_lp,
    fit_wls,
)


def make_ar_series(seed, n=200, d=5, weights=None, level=2.0, burn=50):
    """Stationary AR(d) series with mixed Gaussian + Pareto-burst noise."""
    r = np.random.default_rng(seed)
    if weights is None:
        base = [0.3, 0.2, 0.1, 0.05, 0.05]
        weights = np.array((base * (d // 5 + 1))[:d])
        weights *= 0.9 / weights.sum() if weights.sum() > 0.9 else 1.0
    weights = np.asarray(weights, dtype=float)
    x = np.zeros(n + d + burn)
    for t in range(d, len(x)):
        noise = r.normal(0, 1) + (r.random() < 0.1) * r.pareto(1.5) * 2
        x[t] = weights @ x[t - d: t][::-1] + noise + level
    return x[burn:]


def make_instance(seed, n=200, d=5, **kw) -> DesignPair:
    return build_design(make_ar_series(seed, n=n, d=d, **kw), d)


HEAVY_TAIL_W = np.array([0.3, 0.2, 0.2])
_LP_STRONG = IrlsOptions(max_iter=300, eps0=100.0, decay=0.95)


def heavy_tail_trial(seed, t_train=600, t_test=100, n_pool=4,
                     burst_prob=0.05, burst_scale=2.0):
    """One seed of the heavy-tail robustness comparison.

    Pools of AR(3) series with Gaussian cores carry additive Pareto(1.5)
    bursts through the training window; the held-out window scores
    teacher-forced one-step predictions of the process continuation.
    Returns per-loss test RMSE and coefficient errors against the true
    weights.
    """
    r = np.random.default_rng(seed)
    tr_a, tr_y, te_a, te_y = [], [], [], []
    for _ in range(n_pool):
        t_total = t_train + t_test + 60
        z = np.zeros(t_total)
        for t in range(3, t_total):
            z[t] = HEAVY_TAIL_W @ z[t - 3: t][::-1] + r.normal(0, 1)
        bursts = (r.random(t_total) < burst_prob) * burst_scale * (
            1 + r.pareto(1.5, t_total))
        bursts[60 + t_train:] = 0.0
        x = (z + bursts)[60:]
        pair = build_design(x, 3)
        cut = t_train - 3
        tr_a.append(pair.a[:cut])
        tr_y.append(pair.y[:cut])
        te_a.append(pair.a[cut:])
        te_y.append(pair.y[cut:])
    train = DesignPair(a=np.vstack(tr_a), y=np.concatenate(tr_y))
    test_a, test_y = np.vstack(te_a), np.concatenate(te_y)

    fits = {
        "l2": fit_wls(train),
        "huber": fit_irls(train, LossSpec.huber(1.0)).weights,
        "lp": fit_irls(train, LossSpec.lp(0.5), _LP_STRONG).weights,
        "l1": fit_l1_lp(train).weights,
    }
    rmse = {k: compute_metrics(test_a @ w, test_y).rmse for k, w in fits.items()}
    coef_err = {k: float(np.linalg.norm(w - HEAVY_TAIL_W)) for k, w in fits.items()}
    return rmse, coef_err


@pytest.fixture
def rng():
    return np.random.default_rng(0)
