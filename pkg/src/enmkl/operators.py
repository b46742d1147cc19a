"""Empirical covariance-operator algebra on kernel-section spans.

Functions are represented by coefficient vectors in the basis
``k_m(., x_1), ..., k_m(., x_n)`` of their block, and a collection of
such functions over an index set is a ``CoeffStack``: a dict mapping block
index to coefficient vector. The empirical non-centered cross covariance
``<f_m, S_ml g_l> = (1/n) sum_i f_m(x_i) g_l(x_i)`` then acts on
coefficients as ``c -> K_l c / n``, which turns every operator expression
into n x n linear algebra.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import InvalidInputError

# Relative eigenvalue cutoff defining a Gram block's column space.
RIDGE = 1e-10
# Singular values below this are dropped when orthonormalizing joint spans.
SUBSPACE_TOL = 1e-8
# Stand-in for lambda2 -> 0 in the block-l1 irrepresentable score.
L1_LIMIT_LAMBDA2 = 1e-8


@dataclass(frozen=True)
class IncoherenceReport:
    kappa_min: float
    rho: float
    index_set: tuple
    regularizer_used: float = RIDGE

    @property
    def generalized_incoherence(self):
        """``(1 - rho^2) * kappa_min``."""
        return (1.0 - self.rho**2) * self.kappa_min


@dataclass(frozen=True)
class IrrepresentableScore:
    per_inactive: dict
    max_score: float
    condition_elastic_ok: bool
    condition_l1: dict | None = None
    lambda1: float = field(default=0.0, repr=False)
    lambda2: float = field(default=0.0, repr=False)


def _stack(blocks, h):
    n = blocks[0].n
    for m, c in h.items():
        c = np.asarray(c)
        if not 0 <= m < len(blocks):
            raise InvalidInputError(f"block index {m} out of range")
        if c.shape != (n,):
            raise InvalidInputError(f"coefficients for block {m} have shape {c.shape}, expected ({n},)")
    return n


def cov_apply(blocks, h, target):
    """Coefficients of ``sum_l S_{target,l} h_l`` in the target block's basis."""
    n = _stack(blocks, h)
    if not 0 <= target < len(blocks):
        raise InvalidInputError(f"target block {target} out of range")
    out = np.zeros(n)
    for m, c in h.items():
        out += blocks[m].matrix @ np.asarray(c, dtype=float)
    return out / n


def resolvent_solve(blocks, index_set, lambda2, rhs):
    """Solve ``(S_II + lambda2) h = g`` on the index set ``I``.

    In coefficients: ``lambda2 c_m + (1/n) sum_l K_l c_l = g_m`` for every m
    in I. All blocks share ``s = sum_l K_l c_l``, which solves the n x n
    system ``(lambda2 I + K_I / n) s = sum_l K_l g_l``; then
    ``c_m = (g_m - s/n) / lambda2``.
    """
    if not lambda2 > 0:
        raise InvalidInputError("lambda2 must be positive")
    index_set = list(index_set)
    if not index_set:
        raise InvalidInputError("index set is empty")
    n = blocks[index_set[0]].n
    rhs = {m: np.asarray(rhs[m], dtype=float) if m in rhs else np.zeros(n) for m in index_set}
    _stack(blocks, rhs)
    k_sum = np.zeros((n, n))
    b = np.zeros(n)
    for m in index_set:
        k_sum += blocks[m].matrix
        b += blocks[m].matrix @ rhs[m]
    s = scipy.linalg.solve(lambda2 * np.eye(n) + k_sum / n, b, assume_a="pos")
    return {m: (rhs[m] - s / n) / lambda2 for m in index_set}


def _rkhs_norm(block, c):
    return float(np.sqrt(max(float(c @ (block.matrix @ c)), 0.0)))


def irrepresentable_score(problem, active, penalty, l1_variant=False):
    """Elastic-net irrepresentable scores of the inactive blocks.

    ``score_m = | S_{m,I} (S_II + lambda2)^{-1} (D + 2 lambda2/lambda1) f*_I |_{H_m}``
    with ``D`` scaling block m by ``1/|f*_m|``. With ``l1_variant`` the
    block-l1 form is also returned, approximated by ``lambda2 = 1e-8`` and
    the ``2 lambda2/lambda1`` term dropped.
    """
    if problem.truth is None:
        raise InvalidInputError("irrepresentable score needs the true block functions")
    lam1, lam2 = penalty.lambda1, penalty.lambda2
    if not (lam1 > 0 and lam2 > 0):
        raise InvalidInputError("irrepresentable score needs lambda1 > 0 and lambda2 > 0")
    active = sorted(set(int(m) for m in active))
    if not active:
        raise InvalidInputError("active set is empty")
    blocks = problem.blocks
    inactive = [m for m in range(problem.M) if m not in active]
    norms = {}
    for m in active:
        norms[m] = _rkhs_norm(blocks[m], problem.truth[m].coeffs)
        if norms[m] == 0.0:
            raise InvalidInputError(f"true block {m} has zero norm but is listed as active")

    def scores(lambda2, ratio):
        g = {m: (1.0 / norms[m] + ratio) * problem.truth[m].coeffs for m in active}
        w = resolvent_solve(blocks, active, lambda2, g)
        c = cov_apply(blocks, w, active[0])
        return {m: _rkhs_norm(blocks[m], c) for m in inactive}

    per = scores(lam2, 2.0 * lam2 / lam1)
    top = max(per.values()) if per else 0.0
    l1 = scores(L1_LIMIT_LAMBDA2, 0.0) if l1_variant else None
    return IrrepresentableScore(
        per_inactive=per,
        max_score=top,
        condition_elastic_ok=top < 1.0,
        condition_l1=l1,
        lambda1=lam1,
        lambda2=lam2,
    )


def _range_basis(block, cutoff=RIDGE):
    lam, q = block.eigenvalues, block.eigenvectors
    if lam.size == 0 or lam[0] <= 0:
        raise InvalidInputError(f"block {block.index} has no empirical L2 mass")
    keep = lam > cutoff * lam[0]
    return q[:, keep], lam[keep]


def _orth(mats):
    u, sv, _ = np.linalg.svd(np.hstack(mats), full_matrices=False)
    return u[:, sv > SUBSPACE_TOL * sv[0]]


def kappa_min(blocks, index_set, cutoff=RIDGE):
    """Smallest ratio ``|sum f_m|_n^2 / sum |f_m|_n^2`` over the block spans.

    Each span is the column space of its Gram matrix (eigenvalues above
    ``RIDGE`` times the largest). With orthonormal bases ``U_m`` the ratio
    is a Rayleigh quotient of ``U'U`` for ``U = [U_1 ... U_k]``. Returns the
    value clamped to [0, 1] and a minimizing CoeffStack. A larger ``cutoff``
    keeps only the leading part of each span; full-rank kernels otherwise
    make the spans of different blocks intersect.
    """
    index_set = list(index_set)
    if not index_set:
        raise InvalidInputError("index set is empty")
    bases = [_range_basis(blocks[m], cutoff) for m in index_set]
    u = np.hstack([q for q, _ in bases])
    evals, evecs = np.linalg.eigh(u.T @ u)
    value = float(min(max(evals[0], 0.0), 1.0))
    w = evecs[:, 0]
    argmin, start = {}, 0
    for m, (q, lam) in zip(index_set, bases):
        wm = w[start:start + q.shape[1]]
        start += q.shape[1]
        # f_m = q wm at the samples; the pseudo-inverse of K_m maps it to coefficients.
        argmin[m] = q @ (wm / lam)
    return value, argmin


def rho(blocks, index_set, cutoff=RIDGE):
    """First canonical correlation between the spans of I and its complement."""
    index_set = sorted(set(int(m) for m in index_set))
    rest = [m for m in range(len(blocks)) if m not in index_set]
    if not index_set or not rest:
        raise InvalidInputError("both the index set and its complement must be nonempty")
    ui = _orth([_range_basis(blocks[m], cutoff)[0] for m in index_set])
    uj = _orth([_range_basis(blocks[m], cutoff)[0] for m in rest])
    top = float(np.linalg.svd(ui.T @ uj, compute_uv=False)[0])
    return min(max(top, 0.0), 1.0)


def incoherence(blocks, index_set, cutoff=RIDGE):
    """kappa_min and rho of an index set; rho is 0 when I covers every block."""
    index_set = sorted(set(int(m) for m in index_set))
    kappa, _ = kappa_min(blocks, index_set, cutoff)
    r = rho(blocks, index_set, cutoff) if len(index_set) < len(blocks) else 0.0
    return IncoherenceReport(kappa_min=kappa, rho=r, index_set=tuple(index_set), regularizer_used=cutoff)
