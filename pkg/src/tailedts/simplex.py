"""Dense revised simplex for linear programs with box constraints.

Solves    min c @ x    s.t.    G @ x = b,    lower <= x <= upper

with any mix of finite and infinite bounds (free variables allowed).
Two phases: artificial variables supply the starting basis, then the
original costs are optimized with the artificials pinned at zero.

The basis inverse is held explicitly, updated by eta pivots and
refactorized periodically. Entering variables are normally picked by
most-negative reduced cost; after a run of degenerate pivots the
selection switches to Bland's rule, which guarantees termination, and
switches back once progress resumes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["LpResult", "SimplexError", "solve_bounded_lp"]

# Nonbasic rest positions. Free variables rest at value zero.
_AT_LOWER = 0
_AT_UPPER = 1
_FREE = 2
_BASIC = 3

_STALL_LIMIT = 25  # degenerate pivots before Bland's rule kicks in


class SimplexError(RuntimeError):
    """Numerical breakdown inside the simplex (singular basis, drift)."""


@dataclass
class LpResult:
    status: str  # "optimal" | "infeasible" | "unbounded" | "iteration_limit"
    x: np.ndarray
    objective: float
    prices: np.ndarray  # multipliers of the equality constraints
    reduced_costs: np.ndarray
    basis: np.ndarray
    iterations: int


def _nonbasic_value(j, state, lower, upper):
    if state[j] == _AT_LOWER:
        return lower[j]
    if state[j] == _AT_UPPER:
        return upper[j]
    return 0.0


def _full_x(G, b, basis, state, lower, upper, B_inv):
    n = G.shape[1]
    x = np.zeros(n)
    at_lo = state == _AT_LOWER
    at_up = state == _AT_UPPER
    x[at_lo] = lower[at_lo]
    x[at_up] = upper[at_up]
    x[basis] = 0.0
    r = b - G @ x
    x[basis] = B_inv @ r
    return x


def _refactor(G, basis):
    try:
        return np.linalg.inv(G[:, basis])
    except np.linalg.LinAlgError as exc:
        raise SimplexError("singular basis during refactorization") from exc


def _run_phase(c, G, b, lower, upper, state, basis, B_inv, tol, max_iter,
               refactor_every, allow_unbounded):
    """Primal bounded simplex loop; mutates state/basis, returns status."""
    m, n = G.shape
    iters = 0
    stall = 0
    bland = False
    pivots_since_refactor = 0
    fixed = lower == upper  # pinned variables never enter

    while iters < max_iter:
        iters += 1
        x = _full_x(G, b, basis, state, lower, upper, B_inv)
        pi = c[basis] @ B_inv
        red = c - pi @ G

        nonbasic = state != _BASIC
        can_up = nonbasic & ~fixed & ((state == _AT_LOWER) | (state == _FREE)) & (red < -tol)
        can_dn = nonbasic & ~fixed & ((state == _AT_UPPER) | (state == _FREE)) & (red > tol)
        eligible = can_up | can_dn
        if not np.any(eligible):
            return "optimal", iters, B_inv

        idx = np.flatnonzero(eligible)
        if bland:
            e = int(idx[0])
        else:
            e = int(idx[np.argmax(np.abs(red[idx]))])
        sgn = 1.0 if can_up[e] else -1.0

        col = G[:, e]
        alpha = B_inv @ col
        rate = -sgn * alpha  # change of basic values per unit step

        # Ratio test: basic variables hitting their own bounds, plus the
        # entering variable flipping to its opposite bound.
        theta = np.inf
        leave_pos = -1
        leave_to = _AT_LOWER
        span = upper[e] - lower[e]
        flip = span if np.isfinite(span) else np.inf

        bx = x[basis]
        for i in range(m):
            ri = rate[i]
            vi = basis[i]
            if ri > tol:
                room = upper[vi] - bx[i]
                if np.isfinite(room):
                    ti = max(room, 0.0) / ri
                    if ti < theta - tol or (ti < theta + tol and (leave_pos < 0 or vi < basis[leave_pos])):
                        theta, leave_pos, leave_to = ti, i, _AT_UPPER
            elif ri < -tol:
                room = bx[i] - lower[vi]
                if np.isfinite(room):
                    ti = max(room, 0.0) / (-ri)
                    if ti < theta - tol or (ti < theta + tol and (leave_pos < 0 or vi < basis[leave_pos])):
                        theta, leave_pos, leave_to = ti, i, _AT_LOWER

        if flip < theta:
            # Bound flip: entering variable travels to its other bound.
            state[e] = _AT_UPPER if state[e] == _AT_LOWER else _AT_LOWER
            stall = 0
            bland = False
            continue

        if not np.isfinite(theta):
            if allow_unbounded:
                return "unbounded", iters, B_inv
            raise SimplexError("phase-1 subproblem reported unbounded")

        if theta <= tol:
            stall += 1
            if stall >= _STALL_LIMIT:
                bland = True
        else:
            stall = 0
            bland = False

        # Pivot: entering becomes basic, blocking variable leaves.
        leaving = basis[leave_pos]
        state[leaving] = leave_to
        state[e] = _BASIC
        basis[leave_pos] = e

        piv = alpha[leave_pos]
        if abs(piv) < 1e-12:
            B_inv = _refactor(G, basis)
            pivots_since_refactor = 0
            continue
        B_inv[leave_pos, :] /= piv
        others = np.arange(m) != leave_pos
        B_inv[others, :] -= np.outer(alpha[others], B_inv[leave_pos, :])
        pivots_since_refactor += 1
        if pivots_since_refactor >= refactor_every:
            B_inv = _refactor(G, basis)
            pivots_since_refactor = 0

    return "iteration_limit", iters, B_inv


def solve_bounded_lp(c, G, b, lower, upper, *, tol: float = 1e-9,
                     max_iter: int | None = None,
                     refactor_every: int = 64) -> LpResult:
    """Solve min c@x subject to G@x = b and lower <= x <= upper.

    Bounds may be -inf/+inf in any combination. Returns an LpResult whose
    status is "optimal", "infeasible", "unbounded" or "iteration_limit";
    x, prices and reduced_costs refer to the structural variables only.
    """
    c = np.asarray(c, dtype=float).copy()
    G = np.ascontiguousarray(G, dtype=float)
    b = np.asarray(b, dtype=float).copy()
    lower = np.asarray(lower, dtype=float).copy()
    upper = np.asarray(upper, dtype=float).copy()
    m, n = G.shape
    if m < 1:
        raise ValueError("need at least one equality constraint")
    if not (c.shape == (n,) and lower.shape == (n,) and upper.shape == (n,) and b.shape == (m,)):
        raise ValueError("inconsistent LP dimensions")
    if np.any(lower > upper):
        raise ValueError("crossed bounds")
    if max_iter is None:
        max_iter = 200 * (n + m) + 1000

    # Rest positions for the structural variables: the finite bound of
    # smallest magnitude, or value zero for free variables.
    state = np.full(n + m, _AT_LOWER, dtype=np.int8)
    for j in range(n):
        lo_f, up_f = np.isfinite(lower[j]), np.isfinite(upper[j])
        if lo_f and up_f:
            state[j] = _AT_LOWER if abs(lower[j]) <= abs(upper[j]) else _AT_UPPER
        elif lo_f:
            state[j] = _AT_LOWER
        elif up_f:
            state[j] = _AT_UPPER
        else:
            state[j] = _FREE

    x0 = np.zeros(n)
    at_lo = state[:n] == _AT_LOWER
    at_up = state[:n] == _AT_UPPER
    x0[at_lo] = lower[at_lo]
    x0[at_up] = upper[at_up]
    r = b - G @ x0

    # Artificial columns +-e_i make the start basic and feasible.
    signs = np.where(r >= 0.0, 1.0, -1.0)
    G_aug = np.hstack([G, np.diag(signs)])
    lower_aug = np.concatenate([lower, np.zeros(m)])
    upper_aug = np.concatenate([upper, np.full(m, np.inf)])
    basis = np.arange(n, n + m)
    state[n:] = _BASIC
    B_inv = np.diag(signs)  # inverse of diag(signs) is itself

    feas_tol = tol * (1.0 + float(np.sum(np.abs(b))))

    c1 = np.concatenate([np.zeros(n), np.ones(m)])
    status, it1, B_inv = _run_phase(c1, G_aug, b, lower_aug, upper_aug, state, basis,
                                    B_inv, tol, max_iter, refactor_every,
                                    allow_unbounded=False)
    x_aug = _full_x(G_aug, b, basis, state, lower_aug, upper_aug, B_inv)
    if status != "optimal" or float(c1 @ x_aug) > feas_tol:
        if status == "optimal":
            status = "infeasible"
        return LpResult(status=status, x=x_aug[:n], objective=float(c @ x_aug[:n]),
                        prices=np.zeros(m), reduced_costs=np.zeros(n),
                        basis=basis.copy(), iterations=it1)

    # Pin the artificials so they cannot re-enter, then optimize for real.
    upper_aug[n:] = 0.0
    c2 = np.concatenate([c, np.zeros(m)])
    status, it2, B_inv = _run_phase(c2, G_aug, b, lower_aug, upper_aug, state, basis,
                                    B_inv, tol, max_iter, refactor_every,
                                    allow_unbounded=True)

    x_aug = _full_x(G_aug, b, basis, state, lower_aug, upper_aug, B_inv)
    x = x_aug[:n]
    pi = c2[basis] @ B_inv
    red = c - pi @ G
    resid = float(np.max(np.abs(G @ x - b))) if n else 0.0
    if status == "optimal" and resid > 1e3 * feas_tol:
        raise SimplexError(f"optimal basis violates equality constraints by {resid:g}")
    return LpResult(status=status, x=x, objective=float(c @ x), prices=pi,
                    reduced_costs=red, basis=basis.copy(), iterations=it1 + it2)
