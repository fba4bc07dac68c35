"""Periodicity quantification via cardinality-constrained non-negative AR.

One support set of at most tau lag indices is shared across all page
categories; each category gets its own non-negative coefficient vector.
Fitting works on Gram-pair sufficient statistics (Phi = sum A^T A,
psi = sum A^T y), so pools of any size reduce to d x d data. The search
over supports is an exact branch-and-bound over include/exclude
decisions, warm-started by greedy forward selection, with an exhaustive
enumerator as the desk-scale ground truth.
"""

from __future__ import annotations

import heapq
import itertools
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .solvers import build_design

__all__ = [
    "GramPair",
    "SparseArProblem",
    "SparseArResult",
    "SparseArError",
    "SupportViolationError",
    "accumulate_gram",
    "objective_value",
    "nnls_on_support",
    "greedy_support",
    "solve_branch_and_bound",
    "exhaustive_oracle",
    "seasonality_report",
]


class SparseArError(RuntimeError):
    pass


class SupportViolationError(SparseArError):
    pass


@dataclass(frozen=True)
class GramPair:
    """Sufficient statistics (Phi, psi) of one category's pooled design.

    Phi is symmetrized on construction after an absolute 1e-9 symmetry
    check; eigenvalues are checked non-negative down to -1e-7. Adding two
    pairs pools their underlying series.
    """

    phi: np.ndarray
    psi: np.ndarray
    n_rows: int
    category: str | None = None

    def __post_init__(self) -> None:
        phi = np.asarray(self.phi, dtype=float)
        psi = np.asarray(self.psi, dtype=float)
        if phi.ndim != 2 or phi.shape[0] != phi.shape[1] or psi.shape != (phi.shape[0],):
            raise ValueError("Gram pair shapes are inconsistent")
        if np.max(np.abs(phi - phi.T), initial=0.0) > 1e-9 * max(1.0, np.max(np.abs(phi), initial=0.0)):
            raise ValueError("Phi is not symmetric")
        phi = (phi + phi.T) / 2.0
        if phi.shape[0] and float(np.linalg.eigvalsh(phi)[0]) < -1e-7 * max(1.0, float(np.max(np.abs(phi)))):
            raise ValueError("Phi has a significantly negative eigenvalue")
        phi.flags.writeable = False
        psi = psi.copy()
        psi.flags.writeable = False
        object.__setattr__(self, "phi", phi)
        object.__setattr__(self, "psi", psi)

    @property
    def order(self) -> int:
        return int(self.phi.shape[0])

    def __add__(self, other: "GramPair") -> "GramPair":
        if self.order != other.order:
            raise ValueError("cannot add Gram pairs of different order")
        cat = self.category if self.category == other.category else None
        return GramPair(self.phi + other.phi, self.psi + other.psi,
                        self.n_rows + other.n_rows, cat)


def accumulate_gram(pool, d: int, category: str | None = None) -> GramPair:
    """Exact Gram pair of a series pool, one series in memory at a time.

    Uses compensated (Kahan) summation across series: squared hourly
    counts summed over millions of rows would otherwise lose low bits.
    """
    phi = np.zeros((d, d))
    psi = np.zeros(d)
    phi_c = np.zeros((d, d))
    psi_c = np.zeros(d)
    rows = 0
    for series in pool:
        pair = build_design(series, d)
        term_phi = pair.a.T @ pair.a
        term_psi = pair.a.T @ pair.y
        rows += pair.n_rows
        # Kahan step for each accumulator.
        yy = term_phi - phi_c
        tt = phi + yy
        phi_c = (tt - phi) - yy
        phi = tt
        yv = term_psi - psi_c
        tv = psi + yv
        psi_c = (tv - psi) - yv
        psi = tv
    return GramPair(phi=phi, psi=psi, n_rows=rows, category=category)


@dataclass(frozen=True)
class SparseArProblem:
    """Shared-support sparse AR instance over one or more categories.

    big_m only matters for exported MIQP formulations; the in-house
    search branches on inclusion directly and never materializes it.
    """

    grams: tuple[GramPair, ...]
    order: int
    sparsity: int
    big_m: float = 5.0

    def __post_init__(self) -> None:
        if not self.grams:
            raise ValueError("need at least one category")
        if any(g.order != self.order for g in self.grams):
            raise ValueError("Gram pairs disagree with the stated order")
        if not (isinstance(self.sparsity, int) and 1 <= self.sparsity <= self.order):
            raise ValueError("sparsity must be an integer in [1, order]")
        if not self.big_m > 0:
            raise ValueError("big_m must be positive")
        object.__setattr__(self, "grams", tuple(self.grams))

    @property
    def categories(self) -> list[str]:
        return [g.category or f"cat{i}" for i, g in enumerate(self.grams)]


@dataclass(frozen=True)
class SparseArResult:
    """Shared support plus per-category non-negative coefficient vectors."""

    support: tuple[int, ...]
    weights: dict[str, np.ndarray]
    objective: float
    optimality: str  # "exact" | "incumbent"
    nodes: int

    def __post_init__(self) -> None:
        supp = tuple(sorted(int(k) for k in self.support))
        object.__setattr__(self, "support", supp)
        mask_ok = True
        for w in self.weights.values():
            if np.any(w < 0):
                raise ValueError("weights must be non-negative")
            outside = np.ones(w.shape[0], dtype=bool)
            if supp:
                outside[[k - 1 for k in supp]] = False
            if np.any(w[outside] != 0.0):
                mask_ok = False
        if not mask_ok:
            raise SupportViolationError("weights outside the support must be exactly zero")


def objective_value(problem: SparseArProblem, support, weights: dict[str, np.ndarray]) -> float:
    """Sum over categories of w@Phi@w - 2*w@psi for the given weights.

    Support entries are lags in [1, order]; weight entry j holds the
    coefficient of lag j+1. The value equals the pooled squared error
    minus the constant sum of ||y||^2, so negative values are normal.
    Raises SupportViolationError when a weight vector strays outside the
    support or below zero.
    """
    supp = sorted(int(k) for k in support)
    if supp and not (1 <= supp[0] and supp[-1] <= problem.order):
        raise ValueError("support lags must lie in [1, order]")
    outside = np.ones(problem.order, dtype=bool)
    if supp:
        outside[[k - 1 for k in supp]] = False
    total = 0.0
    for gram, cat in zip(problem.grams, problem.categories):
        w = np.asarray(weights[cat], dtype=float)
        if w.shape != (problem.order,):
            raise ValueError(f"weight vector for {cat!r} has wrong length")
        if np.any(w < 0):
            raise SupportViolationError(f"negative weight in category {cat!r}")
        if np.any(w[outside] != 0.0):
            raise SupportViolationError(f"nonzero weight outside support in category {cat!r}")
        total += float(w @ gram.phi @ w - 2.0 * w @ gram.psi)
    return total


def _solve_psd(phi_sub: np.ndarray, psi_sub: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.solve(phi_sub, psi_sub)
    except np.linalg.LinAlgError:
        jitter = 1e-12 * max(1.0, float(np.trace(phi_sub)))
        return np.linalg.solve(phi_sub + jitter * np.eye(phi_sub.shape[0]), psi_sub)


def _nnls_gram(phi: np.ndarray, psi: np.ndarray, warm=None):
    """Lawson-Hanson style active set on Gram data.

    Minimizes w@phi@w - 2*w@psi over w >= 0. Returns (w, objective,
    passive index list). KKT tolerance scales with max(1, |psi|_inf).
    """
    m = psi.shape[0]
    tol = 1e-9 * max(1.0, float(np.max(np.abs(psi), initial=0.0)))
    w = np.zeros(m)
    passive: list[int] = []

    if warm:
        passive = sorted(set(int(j) for j in warm if 0 <= int(j) < m))

    def restore() -> None:
        # Inner loop of Lawson-Hanson: pull the unconstrained solution on
        # the passive set back into the feasible region, dropping the
        # first variable that hits zero each time.
        nonlocal w, passive
        while passive:
            idx = np.array(passive)
            z = _solve_psd(phi[np.ix_(idx, idx)], psi[idx])
            if np.all(z > 0.0):
                w = np.zeros(m)
                w[idx] = z
                return
            cur = w[idx]
            neg = z <= 0.0
            denom = cur - z
            with np.errstate(divide="ignore", invalid="ignore"):
                ratios = np.where(neg & (denom > 0.0), cur / denom, np.inf)
            alpha = float(np.min(ratios))
            if not np.isfinite(alpha):
                alpha = 0.0
            cur = cur + alpha * (z - cur)
            w = np.zeros(m)
            w[idx] = np.maximum(cur, 0.0)
            passive = [j for j in passive if w[j] > 0.0]
        w = np.zeros(m)

    if passive:
        restore()

    max_outer = max(m * m, 16)
    for _ in range(max_outer):
        grad_half = psi - phi @ w  # negative half-gradient
        mask = np.ones(m, dtype=bool)
        if passive:
            mask[passive] = False
        candidates = np.flatnonzero(mask & (grad_half > tol))
        if candidates.size == 0:
            obj = float(w @ phi @ w - 2.0 * w @ psi)
            return w, obj, passive
        scores = grad_half[candidates]
        best = int(candidates[scores == scores.max()].min())  # tie -> smallest index
        passive = sorted(passive + [best])
        restore()
    raise SparseArError(f"NNLS failed to converge within {max_outer} active-set iterations")


def nnls_on_support(gram: GramPair, support, warm=None) -> np.ndarray:
    """Non-negative minimizer of w@Phi@w - 2*w@psi restricted to `support`.

    Support entries are lags in [1, order]. Returns a full-length vector
    (entry j = coefficient of lag j+1) with exact zeros off the support.
    """
    supp = sorted(set(int(k) for k in support))
    if not supp:
        raise ValueError("support must be non-empty")
    if supp[0] < 1 or supp[-1] > gram.order:
        raise ValueError("support lag out of range")
    idx = np.array(supp) - 1
    phi_sub = gram.phi[np.ix_(idx, idx)]
    psi_sub = gram.psi[idx]
    warm_local = None
    if warm is not None:
        pos = {k: i for i, k in enumerate(supp)}
        warm_local = [pos[int(j)] for j in warm if int(j) in pos]
    z, _, _ = _nnls_gram(phi_sub, psi_sub, warm_local)
    w = np.zeros(gram.order)
    w[idx] = z
    return w


def _fit_on(grams, support, warms=None):
    """Per-category NNLS on one lag support; returns (objective, weights, positive lags)."""
    total = 0.0
    weights = []
    positives = []
    lags = sorted(support)
    idx = np.array(lags) - 1
    for gi, gram in enumerate(grams):
        phi_sub = gram.phi[np.ix_(idx, idx)]
        psi_sub = gram.psi[idx]
        warm = warms[gi] if warms else None
        z, obj, passive = _nnls_gram(phi_sub, psi_sub, warm)
        total += obj
        weights.append(z)
        positives.append([lags[j] for j in np.flatnonzero(z > 0.0)])
    return total, weights, positives


def _expand(order, support, z_list):
    idx = np.array(sorted(support)) - 1
    out = []
    for z in z_list:
        w = np.zeros(order)
        if idx.size:
            w[idx] = z
        out.append(w)
    return out


def _trimmed_support(support, weights_full) -> tuple[int, ...]:
    # Drop lags that carry zero weight in every category; the objective
    # is unchanged and the canonical support stays minimal.
    keep = []
    for k in sorted(support):
        if any(w[k - 1] > 0.0 for w in weights_full):
            keep.append(int(k))
    return tuple(keep)


def _result_from(problem, support, workers=1, nodes=0, optimality="incumbent",
                 objective=None) -> SparseArResult:
    if support:
        total, z_list, _ = _fit_on(problem.grams, support)
        weights_full = _expand(problem.order, support, z_list)
    else:
        total = 0.0
        weights_full = [np.zeros(problem.order) for _ in problem.grams]
    trimmed = _trimmed_support(support, weights_full) if support else ()
    weights = {cat: w for cat, w in zip(problem.categories, weights_full)}
    return SparseArResult(support=trimmed, weights=weights,
                          objective=total if objective is None else objective,
                          optimality=optimality, nodes=nodes)


_TIE_EPS = 1e-9


def _tie_eps(obj: float) -> float:
    return _TIE_EPS * max(1.0, abs(obj))


def greedy_support(problem: SparseArProblem) -> SparseArResult:
    """Forward selection up to tau lags plus one-swap local search.

    Ties break toward the smallest lag index; the result is an incumbent
    for the branch-and-bound, not a certified optimum.
    """
    d, tau = problem.order, problem.sparsity
    all_lags = list(range(1, d + 1))
    evals = 0

    if tau >= d:
        res = _result_from(problem, tuple(all_lags), optimality="incumbent")
        return res

    selected: list[int] = []
    current_obj = 0.0
    while len(selected) < tau:
        best_lag, best_obj = None, current_obj
        for cand in all_lags:
            if cand in selected:
                continue
            obj, _, _ = _fit_on(problem.grams, selected + [cand])
            evals += 1
            if obj < best_obj - _tie_eps(best_obj):
                best_lag, best_obj = cand, obj
        if best_lag is None:
            break
        selected.append(best_lag)
        current_obj = best_obj

    # One-swap local search to a local optimum.
    for _ in range(50):
        best_move, best_obj = None, current_obj
        for s in sorted(selected):
            for c in all_lags:
                if c in selected:
                    continue
                trial = [k for k in selected if k != s] + [c]
                obj, _, _ = _fit_on(problem.grams, trial)
                evals += 1
                if obj < best_obj - _tie_eps(best_obj):
                    best_move, best_obj = (s, c), obj
        if best_move is None:
            break
        s, c = best_move
        selected = [k for k in selected if k != s] + [c]
        current_obj = best_obj

    return _result_from(problem, tuple(sorted(selected)), nodes=evals,
                        optimality="incumbent")


def solve_branch_and_bound(problem: SparseArProblem, *, node_limit: int | None = None,
                           time_limit: float | None = None,
                           workers: int = 1) -> SparseArResult:
    """Exact best-first branch-and-bound over lag include/exclude decisions.

    The node bound drops the cardinality constraint on undecided lags
    (valid: fewer constraints) and solves per-category NNLS on the still
    allowed set. A node closes exactly once the relaxed positive set fits
    the cardinality budget; otherwise it branches on the heaviest
    positive undecided lag. Hitting a node or time limit returns the
    incumbent, never an error.
    """
    d, tau = problem.order, problem.sparsity
    grams = problem.grams
    started = time.monotonic()

    incumbent = greedy_support(problem)
    best_obj = incumbent.objective
    best_support = tuple(sorted(incumbent.support))

    pool = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None

    def node_fit(allowed, warms):
        lags = sorted(allowed)
        if pool is not None:
            arr = np.array(lags) - 1
            warm_sets = list(warms) if warms else None

            def one(gi):
                gram = grams[gi]
                # Warm sets hold lags; map to compact positions.
                warm_local = None
                if warm_sets:
                    pos = {k: i for i, k in enumerate(lags)}
                    warm_local = [pos[k] for k in warm_sets[gi] if k in pos]
                return _nnls_gram(gram.phi[np.ix_(arr, arr)], gram.psi[arr], warm_local)

            results = list(pool.map(one, range(len(grams))))
            total = sum(r[1] for r in results)
            z_list = [r[0] for r in results]
            positives = [[lags[j] for j in np.flatnonzero(z > 0.0)] for z in z_list]
            return total, z_list, positives
        return _fit_on(grams, lags, warms)

    # Heap entries: (bound, -depth, seq, included, excluded, warm positive sets)
    seq = itertools.count()
    root_allowed = frozenset(range(1, d + 1))
    bound0, z0, pos0 = node_fit(root_allowed, None)
    heap = [(bound0, 0, next(seq), frozenset(), frozenset(), tuple(tuple(p) for p in pos0))]
    nodes = 0
    exact = True

    def maybe_update(support):
        nonlocal best_obj, best_support
        if not support:
            return
        obj, _, _ = _fit_on(grams, sorted(support))
        if obj < best_obj - _tie_eps(best_obj):
            best_obj = obj
            best_support = tuple(sorted(support))

    try:
        while heap:
            if node_limit is not None and nodes >= node_limit:
                exact = False
                break
            if time_limit is not None and time.monotonic() - started > time_limit:
                exact = False
                break
            bound, negdepth, _, included, excluded, warms = heapq.heappop(heap)
            if bound >= best_obj - _TIE_EPS * max(1.0, abs(best_obj)):
                # Best-first order: every remaining node is also prunable.
                break
            nodes += 1
            allowed = root_allowed - excluded
            total, z_list, positives = node_fit(allowed, list(warms) if warms else None)
            if total >= best_obj - _tie_eps(best_obj):
                continue
            pos_union = set().union(*[set(p) for p in positives]) if positives else set()
            eff = set(included) | pos_union
            if len(eff) <= tau:
                # The relaxed solution is feasible here: node solved exactly.
                maybe_update(eff if eff else included)
                continue
            # Cheap rounding: the heaviest positive lags form a candidate.
            weight_sum = np.zeros(d + 1)  # indexed by lag
            allowed_lags = sorted(allowed)
            for z in z_list:
                for j, k in enumerate(allowed_lags):
                    weight_sum[k] += z[j]
            undecided = [k for k in sorted(pos_union) if k not in included]
            room = tau - len(included)
            if room > 0 and undecided:
                ranked = sorted(undecided, key=lambda k: (-weight_sum[k], k))
                maybe_update(set(included) | set(ranked[:room]))
            if len(included) >= tau:
                maybe_update(included)
                continue
            # Branch on the heaviest positive undecided lag.
            k_star = max(undecided, key=lambda k: (weight_sum[k], -k))
            depth = -negdepth + 1
            child_warm = tuple(tuple(p) for p in positives)
            heapq.heappush(heap, (total, -depth, next(seq),
                                  frozenset(included | {k_star}), excluded, child_warm))
            heapq.heappush(heap, (total, -depth, next(seq),
                                  included, frozenset(excluded | {k_star}), child_warm))
    finally:
        if pool is not None:
            pool.shutdown(wait=False)

    return _result_from(problem, best_support, nodes=nodes,
                        optimality="exact" if exact else "incumbent")


def exhaustive_oracle(problem: SparseArProblem, budget: int = 1_000_000) -> SparseArResult:
    """Enumerate every support of size <= tau; ground truth for the search.

    Supports are visited in ascending size then lexicographic order and
    replaced only on strict improvement, so the kept optimum is the
    lexicographically first of minimal size among ties.
    """
    d, tau = problem.order, problem.sparsity
    count = sum(math.comb(d, k) for k in range(0, tau + 1))
    if count > budget:
        raise SparseArError(f"{count} supports exceed the enumeration budget {budget}")

    best_obj = 0.0  # empty support scores zero
    best_support: tuple[int, ...] = ()
    evals = 0
    for size in range(1, tau + 1):
        for combo in itertools.combinations(range(1, d + 1), size):
            obj, _, _ = _fit_on(problem.grams, list(combo))
            evals += 1
            if obj < best_obj - _tie_eps(best_obj):
                best_obj = obj
                best_support = combo
    return _result_from(problem, best_support, nodes=evals, optimality="exact")


def seasonality_report(result: SparseArResult, cycle_lags=(24, 48, 96, 168)) -> dict:
    """Coefficients at the requested cycle lags per category.

    Lags outside the fitted support report exactly zero. The rows list
    has one entry per (category, lag) pair for table rendering.
    """
    lags = [int(k) for k in cycle_lags]
    per_category = {}
    rows = []
    for cat in sorted(result.weights):
        w = result.weights[cat]
        values = {}
        for k in lags:
            coeff = float(w[k - 1]) if 1 <= k <= w.shape[0] and k in result.support else 0.0
            values[k] = coeff
            rows.append({"category": cat, "lag": k, "coefficient": coeff})
        per_category[cat] = values
    return {"support": list(result.support), "coefficients": per_category, "rows": rows}
