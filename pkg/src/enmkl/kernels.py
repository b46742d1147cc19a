"""Base kernels, normalized Gram blocks and their spectra.

A :class:`GramBlock` is the finite-sample stand-in for one base kernel:
the n x n Gram matrix on the training inputs together with its cached
eigendecomposition. Everything downstream (the block solver, the
covariance operators, the spectral decay fit) works in that eigenbasis.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.spatial.distance import cdist

from .errors import InsufficientSpectrumError, InvalidInputError, NumericalError

FAMILIES = ("gaussian", "polynomial", "linear", "precomputed")

# Eigenvalues in [-NEG_EIG_TOL * max(1, lambda_max), 0) are roundoff and get clamped.
NEG_EIG_TOL = 1e-10
SYMMETRY_TOL = 1e-10
SPECTRUM_FLOOR = 1e-12
MIN_USABLE_EIGS = 8


def _freeze(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class KernelSpec:
    """A base kernel restricted to a subset of input coordinates.

    ``gaussian``: ``exp(-||x - x'||^2 / width^2)``.
    ``polynomial``: ``(<x, x'> + offset)^degree``.
    ``linear``: ``<x, x'>``.
    ``precomputed``: a fixed n x n matrix; no out-of-sample evaluation.

    ``center`` makes :func:`gram` center the kernel in feature space with
    respect to the training sample, so that every function in the span has
    zero empirical mean.
    """

    family: str = "gaussian"
    width: float = 1.0
    degree: int = 2
    offset: float = 1.0
    coordinate_mask: Optional[tuple] = None
    scale: float = 1.0
    center: bool = False
    matrix: Optional[np.ndarray] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise InvalidInputError(f"unknown kernel family {self.family!r}")
        if self.family == "gaussian" and not self.width > 0:
            raise InvalidInputError("gaussian width must be positive")
        if self.family == "polynomial":
            if int(self.degree) != self.degree or self.degree < 1:
                raise InvalidInputError("polynomial degree must be a positive integer")
            if self.offset < 0:
                raise InvalidInputError("polynomial offset must be nonnegative")
        if not self.scale > 0:
            raise InvalidInputError("kernel scale must be positive")
        if self.coordinate_mask is not None:
            object.__setattr__(self, "coordinate_mask", tuple(int(c) for c in self.coordinate_mask))
        if self.family == "precomputed":
            if self.matrix is None:
                raise InvalidInputError("precomputed kernel needs a matrix")
            object.__setattr__(self, "matrix", _freeze(self.matrix))

    def _select(self, xs):
        xs = np.asarray(xs, dtype=float)
        if xs.ndim == 1:
            xs = xs[:, None]
        if self.coordinate_mask is not None:
            xs = xs[:, list(self.coordinate_mask)]
        return xs

    def evaluate(self, xa, xb):
        """Raw kernel matrix ``k(xa_i, xb_j)`` (scale applied, no centering)."""
        if self.family == "precomputed":
            raise InvalidInputError("precomputed kernels cannot be evaluated on new inputs")
        a, b = self._select(xa), self._select(xb)
        if self.family == "gaussian":
            k = np.exp(-cdist(a, b, "sqeuclidean") / self.width**2)
        elif self.family == "polynomial":
            k = (a @ b.T + self.offset) ** int(self.degree)
        else:
            k = a @ b.T
        return self.scale * k


def normalize_gram(matrix):
    """Rescale so the largest diagonal entry is at most one.

    Returns ``(normalized, factor)``. Idempotent: a matrix that already
    satisfies the bound comes back unchanged with factor 1.
    """
    top = float(np.max(np.diag(matrix))) if matrix.size else 0.0
    if top > 1.0:
        return matrix / top, 1.0 / top
    return matrix, 1.0


@dataclass(frozen=True, eq=False)
class GramBlock:
    """Normalized Gram matrix of one base kernel with its eigendecomposition.

    ``eigenvalues`` are nonincreasing and clamped at zero; ``eigenvectors``
    holds the matching orthonormal columns.
    """

    matrix: np.ndarray
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    kernel: KernelSpec
    index: int = 0
    normalization: float = 1.0
    col_means: Optional[np.ndarray] = field(default=None, repr=False)
    grand_mean: float = 0.0

    @property
    def n(self):
        return self.matrix.shape[0]

    @functools.cached_property
    def rank_tol(self):
        top = self.eigenvalues[0] if self.n else 0.0
        return max(self.n, 1) * np.finfo(float).eps * max(top, 0.0)

    @functools.cached_property
    def support(self):
        """Eigenpairs above the numerical rank tolerance, as ``(Q, lam)``."""
        keep = self.eigenvalues > self.rank_tol
        q = self.eigenvectors[:, keep]
        lam = self.eigenvalues[keep]
        q.setflags(write=False)
        lam.setflags(write=False)
        return q, lam

    def cross_gram(self, xs_new, xs_train):
        """Kernel values between new points and the training inputs.

        Applies the same centering and normalization as the training Gram,
        so ``f(x) = cross_gram(x, X) @ alpha`` evaluates the block function.
        """
        k = self.kernel.evaluate(xs_new, xs_train)
        if self.kernel.center:
            k = k - k.mean(axis=1, keepdims=True) - self.col_means[None, :] + self.grand_mean
        return self.normalization * k


def _decompose(matrix, index):
    try:
        lam, q = np.linalg.eigh(matrix)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"eigensolver failed: {exc}", index) from exc
    lam, q = lam[::-1].copy(), q[:, ::-1].copy()
    floor = -NEG_EIG_TOL * max(1.0, abs(lam[0]) if lam.size else 0.0)
    if lam.size and lam[-1] < floor:
        raise NumericalError(f"Gram matrix is not PSD (eigenvalue {lam[-1]:.3e})", index)
    lam = np.maximum(lam, 0.0)
    return lam, q


def gram(kernel, xs, index=0):
    """Build the normalized Gram block of ``kernel`` on the sample ``xs``.

    For precomputed kernels ``xs`` may be None; the stored matrix is checked
    for symmetry and symmetrized.
    """
    if kernel.family == "precomputed":
        raw = np.array(kernel.matrix, dtype=float)
        if raw.ndim != 2 or raw.shape[0] != raw.shape[1] or raw.shape[0] < 1:
            raise InvalidInputError("precomputed kernel must be a nonempty square matrix")
        if not np.all(np.isfinite(raw)):
            raise InvalidInputError("precomputed kernel has non-finite entries")
        if np.max(np.abs(raw - raw.T)) > SYMMETRY_TOL * max(1.0, np.max(np.abs(raw))):
            raise InvalidInputError("precomputed kernel is not symmetric")
        raw = 0.5 * (raw + raw.T)
    else:
        xs = np.asarray(xs, dtype=float)
        if xs.ndim == 1:
            xs = xs[:, None]
        if xs.shape[0] < 1:
            raise InvalidInputError("need at least one sample")
        if not np.all(np.isfinite(xs)):
            raise InvalidInputError("sample matrix has non-finite entries")
        raw = kernel.evaluate(xs, xs)
        if not np.all(np.isfinite(raw)):
            raise InvalidInputError(f"kernel {index} produced non-finite values")
        raw = 0.5 * (raw + raw.T)

    col_means, grand = None, 0.0
    if kernel.center:
        col_means = raw.mean(axis=0)
        grand = float(col_means.mean())
        raw = raw - col_means[:, None] - col_means[None, :] + grand
        raw = 0.5 * (raw + raw.T)

    matrix, factor = normalize_gram(raw)
    lam, q = _decompose(matrix, index)
    return GramBlock(
        matrix=_freeze(matrix),
        eigenvalues=_freeze(lam),
        eigenvectors=_freeze(q),
        kernel=kernel,
        index=index,
        normalization=factor,
        col_means=None if col_means is None else _freeze(col_means),
        grand_mean=grand,
    )


def block_from_matrix(matrix, index=0):
    """Gram block of a precomputed matrix."""
    return gram(KernelSpec(family="precomputed", matrix=matrix), None, index=index)


@dataclass(frozen=True)
class BlockFunction:
    """``f_m(.) = sum_i coeffs[i] * k_m(., x_i)`` for one block."""

    coeffs: np.ndarray
    block_index: int = 0

    def __post_init__(self):
        object.__setattr__(self, "coeffs", _freeze(self.coeffs))

    def values(self, block):
        """Function values at the training inputs, ``K alpha``."""
        return block.matrix @ self.coeffs


def block_norms(f, block):
    """RKHS norm ``sqrt(a'Ka)`` and empirical L2 norm ``sqrt(|Ka|^2 / n)``."""
    a = np.asarray(f.coeffs if isinstance(f, BlockFunction) else f, dtype=float)
    if a.shape != (block.n,):
        raise InvalidInputError(f"coefficient length {a.shape} does not match n={block.n}")
    ka = block.matrix @ a
    rkhs = float(np.sqrt(max(float(a @ ka), 0.0)))
    emp = float(np.sqrt(ka @ ka / block.n))
    return rkhs, emp


@dataclass(frozen=True)
class SpectrumEstimate:
    s_hat: float
    fit_range: tuple
    r_squared: float
    slope: float


def spectral_decay(block, fit_range=None):
    """Fit ``mu_k ~ C k^(-1/s)`` on a window of the empirical spectrum.

    ``block`` is a :class:`GramBlock` (its eigenvalues are divided by n to
    give the empirical operator spectrum) or a plain nonincreasing array of
    eigenvalues. ``fit_range`` is an inclusive 1-based ``(k_lo, k_hi)``;
    by default the two leading eigenvalues and everything below 1e-12 are
    left out.
    """
    if isinstance(block, GramBlock):
        mu = np.asarray(block.eigenvalues, dtype=float) / block.n
    else:
        mu = np.sort(np.asarray(block, dtype=float))[::-1]
    usable = int(np.sum(mu > SPECTRUM_FLOOR))
    if usable < MIN_USABLE_EIGS:
        raise InsufficientSpectrumError(
            f"only {usable} eigenvalues above {SPECTRUM_FLOOR:g}; need {MIN_USABLE_EIGS}"
        )
    if fit_range is None:
        lo, hi = 3, usable
    else:
        lo, hi = int(fit_range[0]), min(int(fit_range[1]), usable)
    if hi - lo + 1 < 2:
        raise InsufficientSpectrumError(f"fit window ({lo}, {hi}) holds fewer than two points")

    k = np.arange(lo, hi + 1, dtype=float)
    lx, ly = np.log(k), np.log(mu[lo - 1:hi])
    slope, intercept = np.polyfit(lx, ly, 1)
    resid = ly - (slope * lx + intercept)
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 - float(resid @ resid) / ss_tot if ss_tot > 0 else 1.0
    s_hat = -1.0 / slope if slope < 0 else 1.0
    s_hat = min(max(s_hat, np.finfo(float).tiny), 1.0)
    return SpectrumEstimate(
        s_hat=float(s_hat), fit_range=(lo, hi), r_squared=float(min(max(r2, 0.0), 1.0)), slope=float(slope)
    )


def grams(kernels: Sequence[KernelSpec], xs):
    """Gram blocks for a list of kernels on a shared sample."""
    return [gram(k, xs, index=m) for m, k in enumerate(kernels)]
