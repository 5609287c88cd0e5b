"""Density evolution and degree-distribution optimization.

Implements the decodable-edge density Omega(x), the closed-form BP
trajectory rho_0(tau) and the per-(degree, rank) densities, incomplete
beta utilities, the max-degree and closed-form bounds, the baseline telescoping
distribution, and the four sampled-grid linear programs (single rank
distribution, multicast over a finite set, percentage form, and the
finite-length penalty form) solved with the embedded simplex.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import betainc as _betainc_reg
from scipy.special import gammaln

from .gf import RandomStream
from .rankdist import (
    EffectiveRankDistribution,
    RankDistribution,
    effective_dist,
    zeta_dkr,
)
from .simplex import solve_lp


@dataclass(frozen=True)
class DegreeDistribution:
    """psi[d-1] = Psi_d for d = 1..D."""

    D: int
    psi: np.ndarray

    def __post_init__(self):
        psi = np.asarray(self.psi, dtype=float)
        object.__setattr__(self, "psi", psi)
        if psi.shape != (self.D,):
            raise ValueError(f"psi must have length D={self.D}")
        if np.any(psi < -1e-12):
            raise ValueError("negative degree probability")
        if abs(psi.sum() - 1.0) > 1e-9:
            raise ValueError(f"degree probabilities sum to {psi.sum()}, not 1")

    def mean_degree(self) -> float:
        return float(np.dot(np.arange(1, self.D + 1), self.psi))

    def to_json_dict(self) -> dict:
        return {"D": self.D, "psi": [float(v) for v in self.psi]}

    @classmethod
    def from_json_dict(cls, d: dict) -> "DegreeDistribution":
        return cls(int(d["D"]), np.asarray(d["psi"], dtype=float))


@dataclass
class EvolutionCurve:
    theta: float
    grid: np.ndarray  # x = tau/theta values, strictly increasing, in [0,1)
    rho0: np.ndarray
    rho_dr: dict | None = None  # {(d, r): array over grid}

    def first_crossing(self) -> float | None:
        """Smallest grid x with rho0(x) <= 0, or None."""
        idx = np.nonzero(self.rho0 <= 0)[0]
        # rho0(0) = Omega(0) may be 0 legitimately; skip a leading zero at x=0
        for i in idx:
            if self.grid[i] > 0:
                return float(self.grid[i])
        return None


@dataclass
class DegreeOptResult:
    psi: DegreeDistribution
    value: float  # theta-hat (P1/P2/P4) or alpha-hat (P3)
    empty_support: bool = False
    status: str = "optimal"


# -- incomplete beta -------------------------------------------------------

def inc_beta(a: int, b: int, x) -> float | np.ndarray:
    """Regularized incomplete beta I_{a,b}(x) for integer a, b >= 1.

    Stable binomial-sum form: sum_{j=a}^{n} C(n,j) x^j (1-x)^{n-j} with
    n = a+b-1, evaluated through log-gamma to stay finite for large a.
    """
    if a < 1 or b < 1:
        raise ValueError("integer a, b >= 1 required")
    x = np.asarray(x, dtype=float)
    n = a + b - 1
    j = np.arange(a, n + 1)
    logc = gammaln(n + 1) - gammaln(j + 1) - gammaln(n - j + 1)
    with np.errstate(divide="ignore", invalid="ignore"):
        lx = np.where(x > 0, np.log(x), -np.inf)
        l1x = np.where(x < 1, np.log1p(-x), -np.inf)
        terms = np.exp(logc[:, None] + j[:, None] * lx[None, ...]
                       + (n - j)[:, None] * l1x[None, ...])
    out = np.where(x >= 1, 1.0, np.nansum(terms, axis=0))
    out = np.where(x <= 0, 0.0, out)
    return out if out.shape else float(out)


# -- Omega -----------------------------------------------------------------

def thin_degrees(D: int, dense_up_to: int = 64,
                 ratio: float = 1.05) -> np.ndarray:
    """Degree subset: every degree up to `dense_up_to`, then a geometric
    net up to D. Restricting the LP to this set gives a certified lower
    bound on the optimum (the solution stays feasible for the full LP)."""
    ds = list(range(1, min(dense_up_to, D) + 1))
    d = ds[-1]
    while d < D:
        d = min(max(d + 1, math.ceil(d * ratio)), D)
        ds.append(d)
    return np.array(ds, dtype=int)


def omega_coeffs(eff: EffectiveRankDistribution, D: int,
                 xs: np.ndarray, degrees: np.ndarray | None = None
                 ) -> np.ndarray:
    """W with Omega(x_i) = sum_k W[i, k] psi_{degrees[k]}.

    Coefficient of Psi_d at x: d * sum_{r<d, r<=M} hbar_r I_{d-r,r}(x)
    plus d * hbar'_d for d <= M. The incomplete beta block is evaluated
    with the library routine; the binomial-sum form above is the contract
    and is cross-checked in tests.
    """
    xs = np.asarray(xs, dtype=float)
    if degrees is None:
        degrees = np.arange(1, D + 1)
    M = eff.M
    N = xs.size
    W = np.zeros((N, degrees.size))
    for r in range(1, M + 1):
        if eff.hbar[r - 1] == 0.0:
            continue
        sel = np.nonzero(degrees > r)[0]
        if sel.size == 0:
            continue
        ds = degrees[sel]
        a = (ds - r).astype(float)
        I = _betainc_reg(a[:, None], float(r), xs[None, :])  # (len(ds), N)
        W[:, sel] += (eff.hbar[r - 1] * ds[None, :]) * I.T
    small = np.nonzero(degrees <= M)[0]
    if small.size:
        ds = degrees[small]
        W[:, small] += ds[None, :] * eff.hbar_prime[ds - 1][None, :]
    return W


def omega(x, eff: EffectiveRankDistribution, psi: DegreeDistribution):
    """Decodable-edge density Omega(x); nondecreasing on [0,1]."""
    xs = np.atleast_1d(np.asarray(x, dtype=float))
    out = omega_coeffs(eff, psi.D, xs) @ psi.psi
    return float(out[0]) if np.isscalar(x) or np.asarray(x).ndim == 0 else out


def omega_sr_form(x: float, eff: EffectiveRankDistribution,
                  psi: DegreeDistribution) -> float:
    """Alternative form Omega(x) = sum_r hbar_r S_r(x) with
    S_r(x) = sum_{d>r} d Psi_d I_{d-r,r}(x) + sum_{d<=r} d Psi_d."""
    M = eff.M
    D = psi.D
    total = 0.0
    for r in range(1, M + 1):
        s = 0.0
        for d in range(1, D + 1):
            if d > r:
                s += d * psi.psi[d - 1] * inc_beta(d - r, r, x)
            else:
                s += d * psi.psi[d - 1]
        total += eff.hbar[r - 1] * s
    return total


# -- density evolution -----------------------------------------------------

def alpha_dr(d: int, r: int, q: int) -> float:
    """Probability a degree-d rank-r check edge survives one substitution."""
    return (1.0 - q ** (-d + r)) / (1.0 - q ** float(-d))


def density_evolution(psi: DegreeDistribution, h: RankDistribution, q: int,
                      theta: float, grid, with_dr: bool = False) -> EvolutionCurve:
    """Closed-form BP trajectory.

    rho0(x) = (1 - x)(Omega(x) + theta ln(1 - x)) with x = tau/theta.
    With `with_dr`, also the per-(d, r) edge densities
    rho_{d,r}(tau) = (1-x)^d sum_{j>=d} C(j-1, d-1) x^{j-d} rho-hat_{j,r}^{(j-d)}.
    """
    grid = np.asarray(grid, dtype=float)
    if np.any((grid < 0) | (grid >= 1)):
        raise ValueError("grid must lie in [0, 1)")
    if np.any(np.diff(grid) <= 0):
        raise ValueError("grid must be strictly increasing")
    eff = effective_dist(h, q)
    om = omega_coeffs(eff, psi.D, grid) @ psi.psi
    with np.errstate(divide="ignore"):
        rho0 = (1.0 - grid) * (om + theta * np.log1p(-grid))
    rho_dr = None
    if with_dr:
        D = psi.D
        if D > 200:
            raise ValueError("per-(d,r) densities limited to D <= 200")
        M = h.M
        # rho-hat^{(0)}_{d,r} = rho_{d,r} = d Psi_d sum_k zeta_r^{d,k} h_k
        rho_hat = np.zeros((D + 1, D + 1, M + 2))  # [i][d][r]
        for d in range(1, D + 1):
            for r in range(0, min(d, M) + 1):
                s = sum(zeta_dkr(d, k, r, q) * h.h[k] for k in range(M + 1))
                rho_hat[0, d, r] = d * psi.psi[d - 1] * s
        for i in range(D):
            for d in range(1, D + 1):
                if d - i <= 0:
                    continue
                for r in range(0, min(d, M) + 1):
                    a = alpha_dr(d - i, r, q) if d - i > r else 0.0
                    nxt = rho_hat[i, d, r + 1] if r + 1 <= M else 0.0
                    ab = (1.0 - alpha_dr(d - i, r + 1, q)) \
                        if d - i > r + 1 else 1.0
                    rho_hat[i + 1, d, r] = a * rho_hat[i, d, r] + ab * nxt
        rho_dr = {}
        for d in range(1, D + 1):
            for r in range(0, min(d, M) + 1):
                vals = np.zeros_like(grid)
                for j in range(d, D + 1):
                    cb = math.comb(j - 1, d - 1)
                    vals += cb * grid ** (j - d) * rho_hat[j - d, j, r]
                rho_dr[(d, r)] = (1.0 - grid) ** d * vals
    return EvolutionCurve(theta, grid, rho0, rho_dr)


# -- closed-form bounds and baselines ----------------------------------------

def max_degree(M: int, eta: float) -> int:
    """Largest useful degree: D = ceil(M/eta) - 1."""
    if not 0 < eta < 1:
        raise ValueError("eta must be in (0, 1)")
    return math.ceil(M / eta) - 1


def baseline_psi(r: int, D: int) -> DegreeDistribution:
    """Telescoping distribution: Psi_d = r/(d(d-1)) for r+1 <= d <= D-1,
    Psi_D = r/(D-1)."""
    if not 1 <= r < D:
        raise ValueError("need 1 <= r < D")
    psi = np.zeros(D)
    for d in range(r + 1, D):
        psi[d - 1] = r / (d * (d - 1))
    psi[D - 1] = r / (D - 1)
    return DegreeDistribution(D, psi)


def theta_bounds(h: RankDistribution, q: int, eta: float) -> tuple[float, float]:
    """(lower, upper) for the optimal theta of the single-distribution LP:
    lower = max_r r hbar'_r, upper = (sum_r r hbar_r)/(1 - eta)."""
    eff = effective_dist(h, q)
    r = np.arange(1, h.M + 1)
    lower = float(np.max(r * eff.hbar_prime)) if h.M else 0.0
    upper = eff.weighted_sum() / (1.0 - eta)
    return max(lower, 0.0), upper


# -- LP machinery ----------------------------------------------------------

def _grid(eta: float, N: int) -> np.ndarray:
    return (1.0 - eta) * np.arange(1, N + 1) / N


def _omega_on_support(eff, psi_vec, xs):
    """Omega(x) over xs using only the nonzero entries of psi_vec."""
    support = np.nonzero(psi_vec > 0)[0]
    xs = np.asarray(xs, dtype=float)
    if support.size == 0:
        return np.zeros(xs.size)
    M = eff.M
    ds = support + 1
    rs = np.arange(1, M + 1, dtype=float)
    a = ds[:, None] - rs[None, :]  # (S, M)
    valid = a >= 1
    I = _betainc_reg(np.where(valid, a, 1.0)[:, :, None],
                     rs[None, :, None], xs[None, None, :])
    I = np.where(valid[:, :, None], I, 0.0)
    coef = np.einsum("r,srx->sx", eff.hbar, I)
    small = ds <= M
    coef[small] += eff.hbar_prime[ds[small] - 1][:, None]
    return (ds * psi_vec[support]) @ coef


def _solve_degree_lp(effs, gfuns, D, eta, N, verify=True, degrees=None,
                     max_rounds=80):
    """max t s.t. Omega_h(x_i) + t g_h(x_i) >= 0 on the grid, psi on simplex.

    Solved by row generation: start from a subset of grid rows, add violated
    rows until the full grid is satisfied. When `verify`, a 10x finer grid is
    then screened and any violated fine points are promoted to LP rows, so
    the returned (psi, t) is feasible on the finer grid as well instead of
    merely shrinking t by the observed margin.

    `degrees` optionally restricts psi's support to a subset of 1..D; the
    result is then a certified lower bound on the full optimum.
    """
    if degrees is None:
        degrees = np.arange(1, D + 1)
    nd = degrees.size
    xs = _grid(eta, N)
    blocks = [(omega_coeffs(eff, D, xs, degrees), gfun(xs))
              for eff, gfun in zip(effs, gfuns)]
    total = len(effs) * N
    active = []
    for bi in range(len(effs)):
        if total <= 400:
            idxs = range(N)
        else:
            step = max(1, N // 40)
            idxs = sorted(set(list(range(0, N, step)) + [N - 1]))
        active.extend((bi, i) for i in idxs)
    extra_rows = []  # promoted fine-grid constraint rows
    a_eq = [np.concatenate([np.ones(nd), [0.0]])]
    c = np.zeros(nd + 1)
    c[-1] = 1.0
    fine = _grid(eta, 10 * N) if verify else None
    gfine = [gfun(fine) for gfun in gfuns] if verify else None
    if verify:
        # preseed fine points near x = 1 - eta, where the log term moves
        # fastest between coarse grid points and violations concentrate
        seed = fine[-60::4]
        for bi, eff in enumerate(effs):
            Wf = omega_coeffs(eff, D, seed, degrees)
            gs = gfuns[bi](seed)
            for k in range(len(seed)):
                extra_rows.append(np.concatenate([-Wf[k], [-gs[k]]]))
    psi_sub = None
    t = None
    for _ in range(max_rounds):
        rows = [np.concatenate([-blocks[bi][0][i], [-blocks[bi][1][i]]])
                for bi, i in active]
        A_ub = np.array(rows + extra_rows)
        sol = solve_lp(c, a_ub=A_ub, b_ub=np.zeros(len(A_ub)),
                       a_eq=a_eq, b_eq=[1.0])
        if sol.status != "optimal":
            return sol.status, None, None
        psi_sub = np.clip(sol.x[:nd], 0.0, None)
        t = sol.x[nd]
        new = []
        seen = set(active)
        for bi, (W, g) in enumerate(blocks):
            viol = W @ psi_sub + t * g
            bad = np.nonzero(viol < -1e-9)[0]
            if bad.size:
                worst = bad[np.argsort(viol[bad])[:5]]
                new.extend((bi, int(i)) for i in worst
                           if (bi, int(i)) not in seen)
        if new:
            active.extend(new)
            continue
        if not verify:
            break
        psi_full = np.zeros(D)
        psi_full[degrees - 1] = psi_sub
        promoted = 0
        for bi, eff in enumerate(effs):
            om = _omega_on_support(eff, psi_full, fine)
            viol = om + t * gfine[bi]
            bad = np.nonzero(viol < -1e-8)[0]
            if bad.size:
                worst = bad[np.argsort(viol[bad])[:20]]
                Wf = omega_coeffs(eff, D, fine[worst], degrees)
                for k, fi in enumerate(worst):
                    extra_rows.append(
                        np.concatenate([-Wf[k], [-gfine[bi][fi]]]))
                promoted += len(worst)
        if promoted == 0:
            break
    psi_vec = np.zeros(D)
    psi_vec[degrees - 1] = psi_sub
    return "optimal", psi_vec / psi_vec.sum(), t


def _fixup_and_verify(psi_vec, t, blocks_fine, eff_list, eta,
                      delta: float = 1e-4):
    """Apply the small-mass fix-up when Omega(0) = 0, then re-verify on a
    finer grid and shrink t to the worst observed ratio if needed."""
    D = len(psi_vec)
    # Omega(0) = sum_{d<=M} d psi_d hbar'_d must be positive for BP to start
    omega0 = min(
        float(np.dot(np.arange(1, min(eff.M, D) + 1)
                     * psi_vec[:min(eff.M, D)],
                     eff.hbar_prime[:min(eff.M, D)]))
        for eff in eff_list)
    if omega0 <= 1e-12:
        rstar = 0
        for eff in eff_list:
            nz = np.nonzero(eff.hbar_prime > 0)[0]
            if nz.size:
                rstar = max(rstar, int(nz[-1]) + 1)
        if rstar > 0:
            psi_vec = psi_vec.copy()
            psi_vec[:rstar] += delta / rstar
            psi_vec /= psi_vec.sum()
    # fine-grid verification on the support
    t_ok = t
    for eff, gfine in blocks_fine:
        om = _omega_on_support(eff, psi_vec, gfine[0])
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = om / (-gfine[1])
        t_ok = min(t_ok, float(np.min(ratio)))
    return psi_vec, max(t_ok, 0.0)


def achievable_theta(psi: DegreeDistribution, h: RankDistribution, q: int,
                     eta: float, N: int = 100) -> float:
    """Largest theta keeping rho0 nonnegative on the sampled grid:
    theta = min_i Omega(x_i) / (-ln(1 - x_i))."""
    xs = _grid(eta, N)
    eff = effective_dist(h, q)
    om = _omega_on_support(eff, psi.psi, xs)
    return float(np.min(om / (-np.log1p(-xs))))


def optimize_p1(h: RankDistribution, q: int, eta: float,
                N: int = 100, verify: bool = True,
                degrees: np.ndarray | None = None) -> DegreeOptResult:
    return optimize_p2([h], q, eta, N, verify=verify, degrees=degrees)


def optimize_p2(H, q: int, eta: float, N: int = 100,
                verify: bool = True,
                degrees: np.ndarray | None = None) -> DegreeOptResult:
    """Single theta maximized under every rank distribution's constraints."""
    H = list(H)
    if not H:
        raise ValueError("need at least one rank distribution")
    M = max(h.M for h in H)
    D = max_degree(M, eta)
    if degrees is not None:
        D = max(D, int(degrees.max()))
    effs = [effective_dist(h, q) for h in H]
    if all(np.all(eff.hbar == 0) for eff in effs):
        return DegreeOptResult(DegreeDistribution(1, np.array([1.0])), 0.0,
                               empty_support=True)
    gfun = lambda x: np.log1p(-x)
    status, psi_vec, t = _solve_degree_lp(
        effs, [gfun] * len(effs), D, eta, N, verify=verify, degrees=degrees)
    if status != "optimal":
        return DegreeOptResult(DegreeDistribution(1, np.array([1.0])), 0.0,
                               status=status)
    fine = _grid(eta, 10 * N)
    psi_vec, t = _fixup_and_verify(
        psi_vec, t, [(eff, (fine, gfun(fine))) for eff in effs], effs, eta)
    return DegreeOptResult(DegreeDistribution(D, psi_vec), float(t))


def optimize_p3(H, q: int, eta: float, N: int = 100,
                verify: bool = True,
                degrees: np.ndarray | None = None) -> DegreeOptResult:
    """Maximize the common fraction alpha of each node's capacity proxy
    sum_r r hbar_r(h)."""
    H = list(H)
    if not H:
        raise ValueError("need at least one rank distribution")
    M = max(h.M for h in H)
    D = max_degree(M, eta)
    effs = [effective_dist(h, q) for h in H]
    scales = [eff.weighted_sum() for eff in effs]
    gfuns = [(lambda x, s=s: s * np.log1p(-x)) for s in scales]
    status, psi_vec, t = _solve_degree_lp(effs, gfuns, D, eta, N,
                                          verify=verify, degrees=degrees)
    if status != "optimal":
        return DegreeOptResult(DegreeDistribution(1, np.array([1.0])), 0.0,
                               status=status)
    fine = _grid(eta, 10 * N)
    psi_vec, t = _fixup_and_verify(
        psi_vec, t,
        [(eff, (fine, g(fine))) for eff, g in zip(effs, gfuns)],
        effs, eta)
    return DegreeOptResult(DegreeDistribution(D, psi_vec), float(t))


def optimize_p4(h: RankDistribution, q: int, eta: float, K: int,
                c: float, c_prime: float, N: int = 100,
                verify: bool = True, degrees=None) -> DegreeOptResult:
    """Finite-length variant: penalty ln(1-x) - (c/K)(1-x)^{c'}."""
    if K <= 0 or c < 0 or c_prime < 0:
        raise ValueError("need K > 0, c >= 0, c' >= 0")
    D = max_degree(h.M, eta)
    eff = effective_dist(h, q)
    if np.all(eff.hbar == 0):
        return DegreeOptResult(DegreeDistribution(1, np.array([1.0])), 0.0,
                               empty_support=True)
    if degrees is not None:
        D = max(D, int(np.max(degrees)))
    gfun = lambda x: np.log1p(-x) - (c / K) * (1.0 - x) ** c_prime
    status, psi_vec, t = _solve_degree_lp([eff], [gfun], D, eta, N,
                                          verify=verify, degrees=degrees)
    if status != "optimal":
        return DegreeOptResult(DegreeDistribution(1, np.array([1.0])), 0.0,
                               status=status)
    fine = _grid(eta, 10 * N)
    psi_vec, t = _fixup_and_verify(
        psi_vec, t, [(eff, (fine, gfun(fine)))], [eff], eta)
    return DegreeOptResult(DegreeDistribution(D, psi_vec), float(t))


def sample_rank_dist(M: int, stream: RandomStream) -> RankDistribution:
    """Near-uniform sample over {h: h_0 = 0, sum h = 1} by sorting M-1
    uniforms and taking consecutive gaps."""
    xs = np.sort(stream.uniform(size=M - 1))
    edges = np.concatenate([[0.0], xs, [1.0]])
    h = np.concatenate([[0.0], np.diff(edges)])
    return RankDistribution(M, h)
