"""Elastic-net multiple kernel learning by exact block coordinate descent.

The estimator minimizes, over ``f_m = sum_i alpha_{m,i} k_m(., x_i)``::

    (1/n) |y - sum_m K_m alpha_m|^2
        + lambda1 * sum_m |f_m|_H + lambda2 * sum_m |f_m|_H^2

with ``|f_m|_H^2 = alpha_m' K_m alpha_m``. Each block is minimized exactly
in the eigenbasis of its Gram matrix, so inactive blocks come out as exact
zero vectors and the active set needs no thresholding.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import IllPosedError, InconsistentModelError, InvalidInputError, NumericalError
from .kernels import BlockFunction, GramBlock

log = logging.getLogger(__name__)

NU_RTOL = 1e-12
MAX_ROOT_ITER = 200


@dataclass(frozen=True)
class RegPenalty:
    """Block-l1 weight ``lambda1`` and block-l2 weight ``lambda2``."""

    lambda1: float
    lambda2: float
    allow_unpenalized: bool = False

    def __post_init__(self):
        for name in ("lambda1", "lambda2"):
            v = float(getattr(self, name))
            if not np.isfinite(v) or v < 0:
                raise InvalidInputError(f"{name} must be a finite nonnegative number, got {v}")
            object.__setattr__(self, name, v)
        if self.lambda1 == 0 and self.lambda2 == 0 and not self.allow_unpenalized:
            raise IllPosedError(
                "lambda1 = lambda2 = 0 leaves the problem unpenalized; "
                "set allow_unpenalized to fit it anyway"
            )


@dataclass(frozen=True, eq=False)
class MklProblem:
    """Responses, one Gram block per base kernel, and optionally the truth."""

    y: np.ndarray
    blocks: tuple
    xs: np.ndarray | None = None
    truth: tuple | None = None

    def __post_init__(self):
        y = np.array(self.y, dtype=float).ravel()
        if not np.all(np.isfinite(y)):
            raise InvalidInputError("y has non-finite entries")
        y.setflags(write=False)
        object.__setattr__(self, "y", y)
        blocks = tuple(self.blocks)
        if not blocks:
            raise InvalidInputError("need at least one kernel block")
        for m, b in enumerate(blocks):
            if b.n != y.size:
                raise InvalidInputError(f"block {m} has n={b.n}, y has {y.size}")
        object.__setattr__(self, "blocks", blocks)
        if self.truth is not None:
            truth = tuple(
                t if isinstance(t, BlockFunction) else BlockFunction(np.asarray(t, dtype=float), m)
                for m, t in enumerate(self.truth)
            )
            if len(truth) != len(blocks):
                raise InvalidInputError("truth must have one function per block")
            object.__setattr__(self, "truth", truth)

    @property
    def n(self):
        return self.y.size

    @property
    def M(self):
        return len(self.blocks)


@dataclass(frozen=True, eq=False)
class MklModel:
    """Fitted per-block dual coefficients and the resulting active set."""

    coeffs: tuple
    active_set: tuple
    objective: float
    iterations: int
    converged: bool
    penalty: RegPenalty
    history: tuple = field(default=(), repr=False)

    def to_dict(self):
        return {
            "penalty": {"lambda1": self.penalty.lambda1, "lambda2": self.penalty.lambda2},
            "active_set": list(self.active_set),
            "coeffs": [c.tolist() for c in self.coeffs],
            "objective": self.objective,
            "iterations": self.iterations,
            "converged": self.converged,
        }

    @classmethod
    def from_dict(cls, d):
        p = d["penalty"]
        pen = RegPenalty(p["lambda1"], p["lambda2"], allow_unpenalized=True)
        coeffs = tuple(np.asarray(c, dtype=float) for c in d["coeffs"])
        return cls(
            coeffs=coeffs,
            active_set=tuple(int(m) for m in d["active_set"]),
            objective=float(d["objective"]),
            iterations=int(d["iterations"]),
            converged=bool(d["converged"]),
            penalty=pen,
        )

    def to_json(self):
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class KktReport:
    max_zero_block_violation: float
    max_active_block_residual: float
    satisfied: bool
    tol: float
    per_block: tuple = ()


def _check_coeffs(problem, coeffs):
    coeffs = [np.asarray(c, dtype=float) for c in coeffs]
    if len(coeffs) != problem.M or any(c.shape != (problem.n,) for c in coeffs):
        raise InvalidInputError("coefficients are not dimensioned for this problem")
    return coeffs


def objective(problem, coeffs, penalty):
    """Elastic-net MKL objective at the given dual coefficients."""
    coeffs = _check_coeffs(problem, coeffs)
    resid = problem.y.copy()
    l1 = l2 = 0.0
    for b, a in zip(problem.blocks, coeffs):
        if not np.any(a):
            continue
        ka = b.matrix @ a
        resid -= ka
        sq = max(float(a @ ka), 0.0)
        l1 += np.sqrt(sq)
        l2 += sq
    return float(resid @ resid) / problem.n + penalty.lambda1 * l1 + penalty.lambda2 * l2


def predict(coeffs, problem, xs_new=None):
    """Sum of block functions at the training inputs or at ``xs_new``."""
    if isinstance(coeffs, MklModel):
        coeffs = coeffs.coeffs
    coeffs = _check_coeffs(problem, coeffs)
    if xs_new is None:
        out = np.zeros(problem.n)
        for b, a in zip(problem.blocks, coeffs):
            if np.any(a):
                out += b.matrix @ a
        return out
    if problem.xs is None:
        raise InvalidInputError("problem carries no training inputs for out-of-sample prediction")
    xs_new = np.asarray(xs_new, dtype=float)
    out = np.zeros(xs_new.shape[0])
    for b, a in zip(problem.blocks, coeffs):
        if np.any(a):
            out += b.cross_gram(xs_new, problem.xs) @ a
    return out


def prox_group_elastic(v, step, penalty):
    """Minimizer of ``0.5|u - v|^2 + step*(lambda1 |u| + lambda2 |u|^2)``."""
    if not step > 0:
        raise InvalidInputError("step must be positive")
    v = np.asarray(v, dtype=float)
    nv = float(np.linalg.norm(v))
    if nv <= step * penalty.lambda1:
        return np.zeros_like(v)
    shrink = 1.0 - step * penalty.lambda1 / nv
    return (shrink / (1.0 + 2.0 * step * penalty.lambda2)) * v


def _solve_norm(a2, c, lam1):
    """Root of ``sum a2/(c nu + lam1)^2 = 1`` for nu > 0.

    The left side is convex and strictly decreasing in nu, so Newton started
    from a lower bound climbs monotonically; bisection guards roundoff.
    """
    anorm = np.sqrt(a2.sum())
    live = a2 > 0
    gap = anorm - lam1
    lo = max(gap / c[live].max(), 0.0)
    hi = gap / c[live].min()
    nu = lo
    for _ in range(MAX_ROOT_ITER):
        den = c * nu + lam1
        g = float(np.sum(a2 / den**2)) - 1.0
        if abs(g) <= 8 * np.finfo(float).eps:
            return nu
        if g > 0:
            lo = nu
        else:
            hi = nu
        dg = -2.0 * float(np.sum(a2 * c / den**3))
        new = nu - g / dg
        if not lo <= new <= hi:
            new = 0.5 * (lo + hi)
        if abs(new - nu) <= NU_RTOL * new or hi - lo <= NU_RTOL * hi:
            return new
        nu = new
    raise NumericalError(f"block norm root finder did not converge (bracket [{lo}, {hi}])")


def _block_solve(z, lam, n, penalty):
    """Exact block minimizer in eigen coordinates.

    ``z = Q' r`` for the positive-eigenvalue part of the block. Returns the
    eigen coordinates ``d`` of alpha (``alpha = Q d``) and ``|f_m|_H``.
    """
    a = (2.0 / n) * np.sqrt(lam) * z
    anorm = float(np.linalg.norm(a))
    lam1, lam2 = penalty.lambda1, penalty.lambda2
    if anorm <= lam1:
        return np.zeros_like(z), 0.0
    c = (2.0 / n) * lam + 2.0 * lam2
    if lam1 == 0.0:
        d = (2.0 / n) * z / c
    else:
        nu = _solve_norm(a * a, c, lam1)
        if not nu > 0:
            return np.zeros_like(z), 0.0
        d = (2.0 / n) * z / (c + lam1 / nu)
    return d, float(np.linalg.norm(np.sqrt(lam) * d))


def block_update(residual, block: GramBlock, penalty):
    """Exact minimizer over one block given the partial residual.

    ``residual`` is ``y - sum_{l != m} K_l alpha_l``. Components along the
    Gram null space are set to zero.
    """
    residual = np.asarray(residual, dtype=float)
    if residual.shape != (block.n,):
        raise InvalidInputError("residual length does not match the block")
    q, lam = block.support
    d, _ = _block_solve(q.T @ residual, lam, block.n, penalty)
    if not np.any(d):
        return np.zeros(block.n)
    return q @ d


def _model(problem, coeffs, penalty, iterations, converged, history=()):
    coeffs = tuple(np.asarray(c, dtype=float) for c in coeffs)
    for c in coeffs:
        c.setflags(write=False)
    active = tuple(m for m, c in enumerate(coeffs) if np.any(c))
    return MklModel(
        coeffs=coeffs,
        active_set=active,
        objective=objective(problem, coeffs, penalty),
        iterations=iterations,
        converged=converged,
        penalty=penalty,
        history=tuple(history),
    )


def fit(problem, penalty, max_iter=10_000, tol=1e-10, init=None):
    """Cyclic exact block coordinate descent.

    Stops when no block's coefficients move by more than ``tol`` (in l2)
    during a sweep, or when the sweep lowers the objective by less than
    ``tol**2`` relative. The objective change is quadratic in the step, so
    comparing it against ``tol`` itself would stop far from stationarity.
    A model that hits ``max_iter`` is returned with ``converged=False``.
    """
    if not tol > 0:
        raise InvalidInputError("tol must be positive")
    if max_iter < 1:
        raise InvalidInputError("max_iter must be at least 1")
    n = problem.n
    supports = [b.support for b in problem.blocks]
    if init is not None:
        init_coeffs = _check_coeffs(problem, init.coeffs if isinstance(init, MklModel) else init)
        ds = [q.T @ a for (q, _), a in zip(supports, init_coeffs)]
    else:
        ds = [np.zeros(lam.size) for _, lam in supports]
    fits = [q @ (lam * d) for (q, lam), d in zip(supports, ds)]
    nus = [float(np.linalg.norm(np.sqrt(lam) * d)) for (_, lam), d in zip(supports, ds)]
    resid = problem.y - np.sum(fits, axis=0)

    def state_objective():
        return (
            float(resid @ resid) / n
            + penalty.lambda1 * sum(nus)
            + penalty.lambda2 * sum(v * v for v in nus)
        )

    prev = state_objective()
    history = [prev]
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        max_change = 0.0
        for m, (q, lam) in enumerate(supports):
            if lam.size == 0:
                continue
            partial = resid + fits[m]
            d, nu = _block_solve(q.T @ partial, lam, n, penalty)
            max_change = max(max_change, float(np.linalg.norm(d - ds[m])))
            ds[m] = d
            fits[m] = q @ (lam * d) if nu > 0 else np.zeros(n)
            nus[m] = nu
            resid = partial - fits[m]
        cur = state_objective()
        history.append(cur)
        decrease = (prev - cur) / max(abs(prev), np.finfo(float).tiny)
        prev = cur
        if max_change < tol or decrease < tol * tol:
            converged = True
            break
    if not converged:
        log.warning("block coordinate descent stopped after %d sweeps without converging", it)
    coeffs = [q @ d if np.any(d) else np.zeros(n) for (q, _), d in zip(supports, ds)]
    return _model(problem, coeffs, penalty, it, converged, history)


def closed_form_l2(problem, lambda2):
    """Block-l2 MKL solution, identical coefficients on every block.

    With ``lambda1 = 0`` stationarity forces ``alpha_m = c`` for all m where
    ``(sum_l K_l + n lambda2 I) c = y``.
    """
    if not lambda2 > 0:
        raise InvalidInputError("lambda2 must be positive for the closed form")
    n = problem.n
    total = np.sum([b.matrix for b in problem.blocks], axis=0)
    c = scipy.linalg.solve(total + n * lambda2 * np.eye(n), problem.y, assume_a="pos")
    coeffs = [c.copy() if np.any(b.matrix @ c) else np.zeros(n) for b in problem.blocks]
    return _model(problem, coeffs, RegPenalty(0.0, lambda2), 0, True)


def zero_threshold(problem, residual=None):
    """Per-block ``|(2/n) K_m^{1/2} r|``; every block is zero iff lambda1 >= its entry."""
    r = problem.y if residual is None else np.asarray(residual, dtype=float)
    out = []
    for b in problem.blocks:
        q, lam = b.support
        out.append(float(np.linalg.norm((2.0 / problem.n) * np.sqrt(lam) * (q.T @ r))))
    return np.array(out)


def kkt_residual(model, problem, penalty=None, tol=1e-6):
    """Optimality residuals of a model for the elastic-net MKL problem.

    Inactive blocks must satisfy ``|(2/n) K_m^{1/2} r| <= lambda1`` with
    ``r`` the full residual; active blocks must zero the block gradient
    ``-(2/n) K_m^{1/2} r + (lambda1/|f_m| + 2 lambda2) K_m^{1/2} alpha_m``.
    """
    penalty = model.penalty if penalty is None else penalty
    coeffs = _check_coeffs(problem, model.coeffs)
    n = problem.n
    resid = problem.y - predict(coeffs, problem)
    active = set(model.active_set)
    zero_viol, act_res, per_block = 0.0, 0.0, []
    for m, (b, a) in enumerate(zip(problem.blocks, coeffs)):
        q, lam = b.support
        sl = np.sqrt(lam)
        grad_loss = (2.0 / n) * sl * (q.T @ resid)
        if m in active:
            u = sl * (q.T @ a)
            nu = float(np.linalg.norm(u))
            if nu == 0.0:
                raise InconsistentModelError(f"block {m} is marked active but has zero RKHS norm")
            g = -grad_loss + (penalty.lambda1 / nu + 2.0 * penalty.lambda2) * u
            val = float(np.linalg.norm(g))
            act_res = max(act_res, val)
        else:
            if np.any(a):
                raise InconsistentModelError(f"block {m} is inactive but has nonzero coefficients")
            val = max(0.0, float(np.linalg.norm(grad_loss)) - penalty.lambda1)
            zero_viol = max(zero_viol, val)
        per_block.append(val)
    return KktReport(
        max_zero_block_violation=zero_viol,
        max_active_block_residual=act_res,
        satisfied=zero_viol <= tol and act_res <= tol,
        tol=tol,
        per_block=tuple(per_block),
    )
