"""Simplex solver tests, including a vertex-enumeration oracle."""

import itertools

import numpy as np
import pytest

from batskit.simplex import solve_lp


def test_trivial_box():
    sol = solve_lp([1.0], a_ub=[[1.0]], b_ub=[3.0])
    assert sol.status == "optimal"
    assert sol.objective == pytest.approx(3.0, abs=1e-9)


def test_equality_feasibility():
    sol = solve_lp([0.0, 0.0], a_eq=[[1.0, 1.0]], b_eq=[1.0])
    assert sol.status == "optimal"
    assert sol.x.sum() == pytest.approx(1.0, abs=1e-9)
    bad = solve_lp([0.0], a_eq=[[0.0]], b_eq=[1.0])
    assert bad.status == "infeasible"


def test_unbounded():
    assert solve_lp([1.0, 0.0], a_ub=[[0.0, 1.0]], b_ub=[1.0]).status == "unbounded"


def test_minimize():
    sol = solve_lp([1.0, 2.0], a_ub=[[-1.0, -1.0]], b_ub=[-4.0], maximize=False)
    assert sol.status == "optimal"
    assert sol.objective == pytest.approx(4.0, abs=1e-7)


def _vertex_oracle(c, A, b, maximize=True):
    """Enumerate basic feasible points of {Ax <= b, x >= 0} (<= 3 vars)."""
    n = len(c)
    rows = [list(r) + [v] for r, v in zip(A, b)]
    for i in range(n):
        e = [0.0] * n
        e[i] = -1.0
        rows.append(e + [0.0])
    best = None
    for combo in itertools.combinations(rows, n):
        M = np.array([r[:n] for r in combo])
        v = np.array([r[n] for r in combo])
        if abs(np.linalg.det(M)) < 1e-10:
            continue
        x = np.linalg.solve(M, v)
        if np.all(np.array(A) @ x <= np.array(b) + 1e-8) and np.all(x >= -1e-8):
            val = float(np.dot(c, x))
            if best is None or (val > best if maximize else val < best):
                best = val
    return best


def test_random_lps_vs_vertex_oracle():
    rng = np.random.default_rng(42)
    solved = 0
    for _ in range(60):
        n = int(rng.integers(2, 4))
        m = int(rng.integers(2, 6))
        A = rng.normal(size=(m, n))
        b = rng.uniform(0.5, 2.0, size=m)  # origin feasible
        c = rng.normal(size=n)
        sol = solve_lp(c, a_ub=A, b_ub=b)
        oracle = _vertex_oracle(c, A, b)
        if sol.status == "unbounded":
            # oracle cannot certify unboundedness; skip
            continue
        assert sol.status == "optimal"
        assert sol.objective == pytest.approx(oracle, abs=1e-7)
        solved += 1
    assert solved >= 30


def test_mixed_eq_ub():
    # max x0 + x1 s.t. x0 + x1 + x2 = 1, x0 <= 0.3
    sol = solve_lp([1.0, 1.0, 0.0],
                   a_ub=[[1.0, 0.0, 0.0]], b_ub=[0.3],
                   a_eq=[[1.0, 1.0, 1.0]], b_eq=[1.0])
    assert sol.status == "optimal"
    assert sol.objective == pytest.approx(1.0, abs=1e-8)


def test_negative_rhs_ge_handling():
    # x >= 2 encoded as -x <= -2, minimize x
    sol = solve_lp([1.0], a_ub=[[-1.0]], b_ub=[-2.0], maximize=False)
    assert sol.status == "optimal"
    assert sol.objective == pytest.approx(2.0, abs=1e-8)
