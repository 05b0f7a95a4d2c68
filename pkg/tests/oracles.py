"""Independent reference implementations used to cross-check the package.

Everything here is written from the defining formulas, deliberately in
the plainest possible style (scalar loops, closed forms, exhaustive
enumeration) and without importing anything from portrisk, so agreement
between the two codebases is meaningful evidence rather than a tautology.
scipy is a test-only dependency and supplies the high-precision special
functions.
"""

import itertools
import math

import numpy as np
from scipy import special, stats


def quantile_oracle(p: float) -> float:
    """Upper-tail standard normal quantile via the inverse error function."""
    return math.sqrt(2.0) * float(special.erfinv(1.0 - 2.0 * p))


def chi2_critical(quantile: float, dof: int) -> float:
    return float(stats.chi2.ppf(quantile, dof))


def brute_force_gammas(series, center: float, L: int):
    """Truncated autocovariances of the squared series, by double loop.

    gamma(h) = (1/T) * sum_{t=0}^{T-h-1} (s_t^2 - center)(s_{t+h}^2 - center)
    """
    s = [float(x) for x in series]
    T = len(s)
    gammas = []
    for h in range(L + 1):
        acc = 0.0
        for t in range(T - h):
            acc += (s[t] * s[t] - center) * (s[t + h] * s[t + h] - center)
        gammas.append(acc / T)
    return gammas


def brute_force_sigma2(series, center: float, L: int) -> float:
    """Unclamped long-run variance: gamma(0) + 2 * sum_{h=1}^{L} gamma(h)."""
    g = brute_force_gammas(series, center, L)
    return g[0] + 2.0 * sum(g[1:])


def sample_cov_oracle(X: np.ndarray, demean: bool) -> np.ndarray:
    """(1/T) sum of outer products, entry by entry."""
    X = np.asarray(X, dtype=float)
    T, N = X.shape
    if demean:
        X = X - X.mean(axis=0)
    S = np.empty((N, N))
    for i in range(N):
        for j in range(N):
            S[i, j] = sum(X[t, i] * X[t, j] for t in range(T)) / T
    return S


def hard_ref(z: float, tau: float) -> float:
    return 0.0 if abs(z) <= tau else z


def soft_ref(z: float, tau: float) -> float:
    if abs(z) <= tau:
        return 0.0
    return math.copysign(abs(z) - tau, z)


def scad_ref(z: float, tau: float, a: float = 3.7) -> float:
    az = abs(z)
    if az <= tau:
        return 0.0
    if az <= 2.0 * tau:
        return math.copysign(az - tau, z)
    if az <= a * tau:
        return ((a - 1.0) * z - math.copysign(a * tau, z)) / (a - 2.0)
    return z


def gmv_weights(Sigma: np.ndarray) -> np.ndarray:
    """Unconstrained global minimum variance: Sigma^-1 1 / (1' Sigma^-1 1)."""
    ones = np.ones(Sigma.shape[0])
    x = np.linalg.solve(Sigma, ones)
    return x / x.sum()


def min_variance_brute_force(Sigma: np.ndarray, c: float):
    """Exact solution of min w'Sw s.t. sum w = 1, ||w||_1 <= c, small N only.

    Enumerates every sign pattern in {-1, 0, +1}^N.  Zeros pin weights at
    zero; the nonzero block is solved in closed form twice, once with the
    exposure constraint binding (sum s_i w_i = c) and once slack (budget
    constraint only).  A candidate counts when its weights match the
    postulated signs and it is feasible; the optimum of the convex
    problem has to show up among these KKT systems.
    """
    Sigma = np.asarray(Sigma, dtype=float)
    N = Sigma.shape[0]
    best_obj, best_w = math.inf, None
    for pattern in itertools.product((-1.0, 0.0, 1.0), repeat=N):
        s = np.array(pattern)
        support = s != 0.0
        m = int(support.sum())
        if m == 0:
            continue
        sub = Sigma[np.ix_(support, support)]
        ssub = s[support]
        candidates = []
        # exposure constraint slack: plain budget-constrained minimum
        kkt = np.zeros((m + 1, m + 1))
        kkt[:m, :m] = 2.0 * sub
        kkt[:m, m] = 1.0
        kkt[m, :m] = 1.0
        rhs = np.zeros(m + 1)
        rhs[m] = 1.0
        try:
            sol = np.linalg.solve(kkt, rhs)
            candidates.append(sol[:m])
        except np.linalg.LinAlgError:
            pass
        # exposure constraint binding (skip when it duplicates the budget)
        if abs(ssub.sum() - m) > 1e-12 or c != 1.0:
            kkt2 = np.zeros((m + 2, m + 2))
            kkt2[:m, :m] = 2.0 * sub
            kkt2[:m, m] = 1.0
            kkt2[m, :m] = 1.0
            kkt2[:m, m + 1] = ssub
            kkt2[m + 1, :m] = ssub
            rhs2 = np.zeros(m + 2)
            rhs2[m] = 1.0
            rhs2[m + 1] = c
            try:
                sol2 = np.linalg.solve(kkt2, rhs2)
                candidates.append(sol2[:m])
            except np.linalg.LinAlgError:
                pass
        for w_sub in candidates:
            if np.any(w_sub * ssub < -1e-10):
                continue
            w = np.zeros(N)
            w[support] = w_sub
            if abs(w.sum() - 1.0) > 1e-8 or np.abs(w).sum() > c + 1e-8:
                continue
            obj = float(w @ Sigma @ w)
            if obj < best_obj:
                best_obj, best_w = obj, w
    return best_w, best_obj


def max_abs_entry_diff(A: np.ndarray, B: np.ndarray) -> float:
    """Entrywise sup-norm distance, by explicit loop."""
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    worst = 0.0
    for i in range(A.shape[0]):
        for j in range(A.shape[1]):
            worst = max(worst, abs(A[i, j] - B[i, j]))
    return worst
