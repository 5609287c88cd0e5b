"""Dense two-phase tableau simplex for the degree-optimization LPs.

Solves   max/min c.x   s.t.  A_ub x <= b_ub,  A_eq x = b_eq,  x >= 0.

Small and self-contained on purpose: the degree LPs have at most a few
thousand columns and a few hundred active rows, well within dense range.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_TOL = 1e-9


@dataclass
class LPSolution:
    status: str  # optimal | infeasible | unbounded
    x: np.ndarray | None = None
    objective: float | None = None


def _pivot(T, basis, row, col):
    T[row] /= T[row, col]
    factors = T[:, col].copy()
    factors[row] = 0.0
    T -= np.outer(factors, T[row])
    T[:, col] = 0.0
    T[row, col] = 1.0
    basis[row] = col


def _price_and_pivot(T, basis, ncols, max_iter):
    """Run simplex iterations on tableau T (objective in last row).

    Dantzig pricing with a switch to Bland's rule late in the run to break
    any cycling. Returns 'optimal' or 'unbounded'.
    """
    m = T.shape[0] - 1
    for it in range(max_iter):
        obj = T[-1, :ncols]
        if it < max_iter // 2:
            col = int(np.argmin(obj))
            if obj[col] >= -_TOL:
                return "optimal"
        else:  # Bland
            neg = np.nonzero(obj < -_TOL)[0]
            if neg.size == 0:
                return "optimal"
            col = int(neg[0])
        ratios = np.full(m, np.inf)
        pos = T[:m, col] > _TOL
        ratios[pos] = T[:m, -1][pos] / T[:m, col][pos]
        if not np.isfinite(ratios).any():
            return "unbounded"
        row = int(np.argmin(ratios))
        _pivot(T, basis, row, col)
    raise RuntimeError("simplex iteration limit exceeded")


def solve_lp(c, a_ub=None, b_ub=None, a_eq=None, b_eq=None,
             maximize=True, max_iter=20000) -> LPSolution:
    c = np.asarray(c, dtype=float)
    n = c.size
    rows = []
    rhs = []
    kinds = []  # "ub" or "eq"
    if a_ub is not None:
        a_ub = np.atleast_2d(np.asarray(a_ub, dtype=float))
        b_ub = np.atleast_1d(np.asarray(b_ub, dtype=float))
        for r, b in zip(a_ub, b_ub):
            rows.append(r)
            rhs.append(b)
            kinds.append("ub")
    if a_eq is not None:
        a_eq = np.atleast_2d(np.asarray(a_eq, dtype=float))
        b_eq = np.atleast_1d(np.asarray(b_eq, dtype=float))
        for r, b in zip(a_eq, b_eq):
            rows.append(r)
            rhs.append(b)
            kinds.append("eq")
    m = len(rows)
    if m == 0:
        # unconstrained over x >= 0
        obj = c if maximize else -c
        if np.any(obj > _TOL):
            return LPSolution("unbounded")
        return LPSolution("optimal", np.zeros(n), 0.0)

    A = np.vstack(rows)
    b = np.asarray(rhs, dtype=float)
    # normalize to b >= 0
    neg = b < 0
    A[neg] *= -1
    b[neg] = -b[neg]
    kinds = ["ge" if (neg[i] and kinds[i] == "ub") else kinds[i]
             for i in range(m)]

    # columns: structural | slack/surplus | artificial | rhs
    n_slack = sum(k in ("ub", "ge") for k in kinds)
    art_rows = [i for i, k in enumerate(kinds) if k in ("eq", "ge")]
    n_art = len(art_rows)
    ncols = n + n_slack + n_art
    T = np.zeros((m + 1, ncols + 1))
    T[:m, :n] = A
    T[:m, -1] = b
    basis = np.full(m, -1, dtype=int)
    si = 0
    for i, k in enumerate(kinds):
        if k == "ub":
            T[i, n + si] = 1.0
            basis[i] = n + si
            si += 1
        elif k == "ge":
            T[i, n + si] = -1.0
            si += 1
    for j, i in enumerate(art_rows):
        T[i, n + n_slack + j] = 1.0
        basis[i] = n + n_slack + j

    if n_art:
        # phase 1: minimize sum of artificials
        T[-1, :] = 0.0
        T[-1, n + n_slack:ncols] = 1.0
        for i in art_rows:
            T[-1, :] -= T[i, :]
        status = _price_and_pivot(T, basis, ncols, max_iter)
        if status != "optimal" or T[-1, -1] < -1e-7:
            return LPSolution("infeasible")
        # drive leftover artificial basics out
        for i in range(m):
            if basis[i] >= n + n_slack:
                cand = np.nonzero(np.abs(T[i, :n + n_slack]) > _TOL)[0]
                if cand.size:
                    _pivot(T, basis, i, int(cand[0]))
        # forbid artificials from re-entering
        T[:, n + n_slack:ncols] = 0.0

    # phase 2
    obj = -c if maximize else c  # tableau minimizes
    T[-1, :] = 0.0
    T[-1, :n] = obj
    for i in range(m):
        if basis[i] < ncols and abs(T[-1, basis[i]]) > 0:
            T[-1, :] -= T[-1, basis[i]] * T[i, :]
    status = _price_and_pivot(T, basis, n + n_slack, max_iter)
    if status == "unbounded":
        return LPSolution("unbounded")
    x = np.zeros(ncols)
    for i in range(m):
        if basis[i] >= 0:
            x[basis[i]] = T[i, -1]
    val = float(np.dot(c, x[:n]))
    return LPSolution("optimal", x[:n], val)
