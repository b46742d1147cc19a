"""Independent dense reference computations used by the tests."""

import cvxpy as cp
import numpy as np
import scipy.linalg


def conic_objective(problem, penalty):
    """Optimal objective from a conic solve over u_m, where K_m = L_m L_m' from a fresh eigh."""
    n = problem.n
    factors = []
    for b in problem.blocks:
        lam, q = np.linalg.eigh(b.matrix)
        keep = lam > 1e-12 * lam.max()
        factors.append(q[:, keep] * np.sqrt(lam[keep]))
    us = [cp.Variable(f.shape[1]) for f in factors]
    fitted = sum(f @ u for f, u in zip(factors, us))
    obj = cp.sum_squares(problem.y - fitted) / n
    obj += penalty.lambda1 * sum(cp.norm(u, 2) for u in us)
    obj += penalty.lambda2 * sum(cp.sum_squares(u) for u in us)
    prob = cp.Problem(cp.Minimize(obj))
    prob.solve(solver=cp.CLARABEL)
    return prob.value


def dense_irrepresentable(matrices, truth, active, lam1, lam2):
    """Scores from the explicitly materialized |I|n x |I|n operator on the active set."""
    n = matrices[0].shape[0]
    k = len(active)
    big = np.zeros((k * n, k * n))
    g = np.zeros(k * n)
    for i, m in enumerate(active):
        big[i * n:(i + 1) * n, i * n:(i + 1) * n] += lam2 * np.eye(n)
        for j, l in enumerate(active):
            big[i * n:(i + 1) * n, j * n:(j + 1) * n] += matrices[l] / n
        a = truth[m]
        norm = np.sqrt(a @ matrices[m] @ a)
        g[i * n:(i + 1) * n] = (1.0 / norm + 2.0 * lam2 / lam1) * a
    c = np.linalg.solve(big, g)
    pushed = sum(matrices[l] @ c[j * n:(j + 1) * n] for j, l in enumerate(active)) / n
    return {m: float(np.sqrt(pushed @ matrices[m] @ pushed)) for m in range(len(matrices)) if m not in active}


def feature_irrepresentable(feats, truth, active, lam1, lam2):
    """Same score for linear kernels computed on explicit feature weights."""
    n = feats[0].shape[0]
    phi = np.hstack([feats[m] for m in active])
    w_star = [feats[m].T @ truth[m] for m in active]
    g = np.concatenate([(1.0 / np.linalg.norm(w) + 2.0 * lam2 / lam1) * w for w in w_star])
    W = np.linalg.solve(phi.T @ phi / n + lam2 * np.eye(phi.shape[1]), g)
    return {
        m: float(np.linalg.norm(feats[m].T @ (phi @ W) / n)) for m in range(len(feats)) if m not in active
    }


def gevp_kappa(matrices):
    """Smallest generalized eigenvalue of (J'J, blockdiag(B_m'B_m)) over the column spaces."""
    cols = []
    for k in matrices:
        v = scipy.linalg.orth(k, rcond=1e-10)
        cols.append(k @ v)
    J = np.hstack(cols)
    D = scipy.linalg.block_diag(*[c.T @ c for c in cols])
    return float(scipy.linalg.eigh(J.T @ J, D, eigvals_only=True)[0])


def cca_rho(x_in, x_out):
    """First canonical correlation between two feature sets by Cholesky whitening."""
    n = x_in.shape[0]
    c11 = x_in.T @ x_in / n
    c22 = x_out.T @ x_out / n
    c12 = x_in.T @ x_out / n
    l1 = np.linalg.cholesky(c11)
    l2 = np.linalg.cholesky(c22)
    m = scipy.linalg.solve_triangular(l1, c12, lower=True)
    m = scipy.linalg.solve_triangular(l2, m.T, lower=True).T
    return float(np.linalg.svd(m, compute_uv=False)[0])


def angle_rho(mats_in, mats_out):
    """Cosine of the smallest principal angle between two sums of column spaces."""
    a = scipy.linalg.orth(np.hstack(mats_in), rcond=1e-10)
    b = scipy.linalg.orth(np.hstack(mats_out), rcond=1e-10)
    return float(np.cos(np.min(scipy.linalg.subspace_angles(a, b))))


def proximal_gradient_objective(problem, penalty, iters=20_000):
    """Optimal objective from a long accelerated proximal-gradient run over u_m."""
    n = problem.n
    factors = []
    for b in problem.blocks:
        lam, q = np.linalg.eigh(b.matrix)
        keep = lam > 1e-12 * lam.max()
        factors.append(q[:, keep] * np.sqrt(lam[keep]))
    L = np.hstack(factors)
    cuts = np.cumsum([f.shape[1] for f in factors])[:-1]
    lip = 2.0 * np.linalg.norm(L, 2) ** 2 / n
    step = 1.0 / lip
    y = problem.y
    lam1, lam2 = penalty.lambda1, penalty.lambda2

    def value(u):
        r = y - L @ u
        parts = np.split(u, cuts)
        return r @ r / n + sum(lam1 * np.linalg.norm(p) + lam2 * p @ p for p in parts)

    def prox(v):
        out = []
        for p in np.split(v, cuts):
            nv = np.linalg.norm(p)
            shrink = max(0.0, 1.0 - step * lam1 / nv) if nv > 0 else 0.0
            out.append(shrink * p / (1.0 + 2.0 * step * lam2))
        return np.concatenate(out)

    u = np.zeros(L.shape[1])
    z, t = u.copy(), 1.0
    for _ in range(iters):
        grad = -2.0 / n * (L.T @ (y - L @ z))
        u_next = prox(z - step * grad)
        t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        z = u_next + (t - 1.0) / t_next * (u_next - u)
        if value(u_next) > value(u):
            # adaptive restart keeps the run monotone
            z, t_next = u.copy(), 1.0
            u_next = u
        elif np.linalg.norm(u_next - u) <= 1e-14 * (1.0 + np.linalg.norm(u)):
            u = u_next
            break
        u, t = u_next, t_next
    return float(value(u))
