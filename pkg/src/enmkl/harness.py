"""Synthetic MKL problems and Monte-Carlo rate and support experiments.

Inputs are uniform on ``[0, 1]^p``. Every kernel looks at ``dims_per_kernel``
coordinates: ``round(overlap * dims_per_kernel)`` of them are shared by all
kernels and the rest are private, so ``overlap`` is the correlation knob.
Each true block function lives in the span of 10 anchor sections
``k_m(., z_j)`` with the anchors drawn from the training sample, which keeps
its RKHS norm exactly settable.
"""

from __future__ import annotations

import csv
import dataclasses
import functools
import io
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from . import theory
from .errors import ConfigError, InsufficientSpectrumError, InvalidInputError, NumericalError
from .kernels import BlockFunction, KernelSpec, block_norms, gram, spectral_decay
from .operators import incoherence, irrepresentable_score
from .solver import MklProblem, RegPenalty, closed_form_l2, fit

log = logging.getLogger(__name__)

METHODS = ("l1", "l2", "elastic")
RATE_COLUMNS = ("method", "n", "trial", "error", "lambda1", "lambda2", "converged")
SUPPORT_COLUMNS = ("method", "n", "trial", "recovered", "max_irrep_score")
COMPARISON_COLUMNS = ("method", "constant", "trial", "error")
PILOT_SEED_OFFSET = 1_000_003
N_ANCHORS = 10
MAX_ANCHOR_RETRIES = 10


@dataclass(frozen=True)
class GeneratorConfig:
    """Design of one synthetic problem; exactly one of ``d`` and ``beta`` is set.

    ``d`` gives ``d`` active blocks of equal norm ``C3``; ``beta`` gives the
    near-sparse law ``|f*_m| = C3 * m^(-beta)`` (m counted from 1).
    ``duplicate_pairs = k`` turns block ``M-1-j`` into an exact copy of block
    ``j`` for ``j < k``; an active block and its copy share the truth equally.
    """

    M: int = 5
    d: int | None = 2
    beta: float | None = None
    C3: float = 1.0
    kernel_family: str = "gaussian"
    widths: float | tuple = 0.5
    degree: int = 2
    dims_per_kernel: int = 2
    overlap: float = 0.0
    center: bool = True
    noise_level: float = 0.5
    n_train: int = 200
    n_test: int = 1000
    duplicate_pairs: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.M < 1:
            raise ConfigError("M must be at least 1")
        if (self.d is None) == (self.beta is None):
            raise ConfigError("set exactly one of d and beta")
        if self.d is not None and not 0 <= self.d <= self.M:
            raise ConfigError("d must lie in [0, M]")
        if self.beta is not None and not self.beta > 0:
            raise ConfigError("beta must be positive")
        if not self.C3 > 0:
            raise ConfigError("C3 must be positive")
        if not 0.0 <= self.overlap <= 1.0:
            raise ConfigError("overlap must lie in [0, 1]")
        if self.dims_per_kernel < 1:
            raise ConfigError("dims_per_kernel must be at least 1")
        if self.noise_level < 0:
            raise ConfigError("noise_level must be nonnegative")
        if self.n_train < N_ANCHORS:
            raise ConfigError(f"n_train must be at least {N_ANCHORS}")
        if self.n_test < 1:
            raise ConfigError("n_test must be positive")
        if not 0 <= self.duplicate_pairs <= self.M // 2:
            raise ConfigError("duplicate_pairs must lie in [0, M // 2]")
        if self.duplicate_pairs and self.d is None:
            raise ConfigError("duplicate_pairs needs the exact-sparse mode (d)")
        if self.kernel_family not in ("gaussian", "polynomial", "linear"):
            raise ConfigError(f"unsupported kernel family {self.kernel_family!r}")
        widths = self.widths if isinstance(self.widths, (int, float)) else tuple(self.widths)
        if isinstance(widths, tuple) and len(widths) != self.M:
            raise ConfigError("widths must be a scalar or one value per kernel")
        object.__setattr__(self, "widths", widths)

    @property
    def n_shared(self):
        return int(round(self.overlap * self.dims_per_kernel))

    def masks(self):
        """Coordinate mask per kernel, with copies reusing their source's mask."""
        q, shared = self.dims_per_kernel, self.n_shared
        private = q - shared
        sources = self.sources()
        base = list(range(shared))
        masks, nxt = [], shared
        for m in range(self.M):
            if sources[m] != m:
                masks.append(masks[sources[m]])
                continue
            masks.append(tuple(base + list(range(nxt, nxt + private))))
            nxt += private
        return masks

    def sources(self):
        src = list(range(self.M))
        for j in range(self.duplicate_pairs):
            src[self.M - 1 - j] = j
        return src

    @property
    def n_features(self):
        return max(max(mask) for mask in self.masks()) + 1

    def kernels(self):
        out = []
        for m, mask in enumerate(self.masks()):
            w = self.widths if not isinstance(self.widths, tuple) else self.widths[self.sources()[m]]
            out.append(
                KernelSpec(
                    family=self.kernel_family,
                    width=float(w),
                    degree=self.degree,
                    coordinate_mask=mask,
                    center=self.center,
                )
            )
        return out

    def target_norms(self):
        if self.beta is not None:
            return np.array([self.C3 * (m + 1) ** (-self.beta) for m in range(self.M)])
        norms = np.zeros(self.M)
        sources = self.sources()
        copies = np.bincount(sources, minlength=self.M)
        for m in range(self.M):
            j = sources[m]
            if j < self.d:
                norms[m] = self.C3 / copies[j]
        return norms

    def to_dict(self):
        d = dataclasses.asdict(self)
        if isinstance(d["widths"], tuple):
            d["widths"] = list(d["widths"])
        return d


@dataclass(frozen=True, eq=False)
class SyntheticProblem:
    problem: MklProblem
    true_active: tuple
    target_norms: np.ndarray
    test_xs: np.ndarray
    test_f_star: np.ndarray
    config: GeneratorConfig = field(repr=False, default=None)

    @functools.cached_property
    def test_cross(self):
        """Per-block kernel values between test and training inputs."""
        xs = self.problem.xs
        return [b.cross_gram(self.test_xs, xs) for b in self.problem.blocks]


def derive_seed(seed, *keys):
    """A 63-bit seed determined by ``seed`` and integer keys."""
    ss = np.random.SeedSequence([int(seed), *(int(k) for k in keys)])
    return int(ss.generate_state(1, np.uint64)[0] >> np.uint64(1))


def gen_problem(cfg):
    """Draw one synthetic problem from ``cfg``."""
    rng = np.random.default_rng(np.random.SeedSequence(int(cfg.seed)))
    n, p = cfg.n_train, cfg.n_features
    xs = rng.uniform(0.0, 1.0, size=(n, p))
    test_xs = rng.uniform(0.0, 1.0, size=(cfg.n_test, p))
    kernels = cfg.kernels()
    sources = cfg.sources()
    blocks = [None] * cfg.M
    for m in range(cfg.M):
        blocks[m] = gram(kernels[m], xs, index=m) if sources[m] == m else blocks[sources[m]]
    # copies must still carry their own index
    blocks = [b if b.index == m else dataclasses.replace(b, index=m) for m, b in enumerate(blocks)]
    for b in blocks:
        if np.max(np.diag(b.matrix)) > 1.0 + 1e-12:
            raise NumericalError("normalized Gram has a diagonal entry above one", b.index)

    targets = cfg.target_norms()
    coeffs = [np.zeros(n) for _ in range(cfg.M)]
    for m in range(cfg.M):
        if targets[m] == 0.0 or sources[m] != m:
            continue
        for _ in range(MAX_ANCHOR_RETRIES):
            anchors = rng.choice(n, size=N_ANCHORS, replace=False)
            alpha = np.zeros(n)
            alpha[anchors] = rng.standard_normal(N_ANCHORS)
            norm, _ = block_norms(alpha, blocks[m])
            if norm > 1e-8:
                break
        else:
            raise NumericalError("could not reach the target norm: anchors span a zero function", m)
        coeffs[m] = alpha * (targets[m] / norm)
    for m in range(cfg.M):
        if sources[m] != m and targets[m] > 0:
            coeffs[m] = coeffs[sources[m]].copy()

    f_train = np.zeros(n)
    f_test = np.zeros(cfg.n_test)
    for b, a in zip(blocks, coeffs):
        if np.any(a):
            f_train += b.matrix @ a
            f_test += b.cross_gram(test_xs, xs) @ a
    noise = rng.uniform(-cfg.noise_level, cfg.noise_level, size=n)
    assert np.all(np.abs(noise) <= cfg.noise_level)
    truth = tuple(BlockFunction(a, m) for m, a in enumerate(coeffs))
    problem = MklProblem(y=f_train + noise, blocks=tuple(blocks), xs=xs, truth=truth)
    return SyntheticProblem(
        problem=problem,
        true_active=tuple(int(m) for m in np.flatnonzero(targets > 0)),
        target_norms=targets,
        test_xs=test_xs,
        test_f_star=f_test,
        config=cfg,
    )


def resample_test(sp, n_test, seed):
    """The same training problem with a fresh held-out set of ``n_test`` points."""
    rng = np.random.default_rng(np.random.SeedSequence(int(seed)))
    xs = sp.problem.xs
    test_xs = rng.uniform(0.0, 1.0, size=(n_test, xs.shape[1]))
    f = np.zeros(n_test)
    for b, t in zip(sp.problem.blocks, sp.problem.truth):
        if np.any(t.coeffs):
            f += b.cross_gram(test_xs, xs) @ t.coeffs
    return dataclasses.replace(sp, test_xs=test_xs, test_f_star=f)


def l2_error(model, sp):
    """Mean squared difference between the fitted and true function on the test set."""
    if sp.test_xs.shape[0] == 0:
        raise InvalidInputError("test set is empty")
    coeffs = model.coeffs if hasattr(model, "coeffs") else model
    pred = np.zeros(sp.test_xs.shape[0])
    for cross, a in zip(sp.test_cross, coeffs):
        if np.any(a):
            pred += cross @ np.asarray(a, dtype=float)
    diff = pred - sp.test_f_star
    return float(diff @ diff) / diff.size


def estimate_s(problem):
    """Median spectral-decay estimate over the blocks (1.0 when none is fittable)."""
    vals = []
    for b in problem.blocks:
        try:
            vals.append(spectral_decay(b).s_hat)
        except InsufficientSpectrumError:
            continue
    return float(np.median(vals)) if vals else 1.0


def fit_slope(ns, errors):
    """Least-squares slope of log error on log n and its standard error."""
    ns, errors = np.asarray(ns, dtype=float), np.asarray(errors, dtype=float)
    ok = np.isfinite(errors) & (errors > 0)
    if ok.sum() < 3:
        return float("nan"), float("nan")
    res = stats.linregress(np.log(ns[ok]), np.log(errors[ok]))
    return float(res.slope), float(res.stderr)


def _workers():
    try:
        return max(1, int(os.environ.get("MKL_THREADS", "1")))
    except ValueError:
        return 1


def _map(func, items):
    items = list(items)
    workers = _workers()
    if workers == 1 or len(items) < 2:
        return [func(it) for it in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(func, items))


# ---------------------------------------------------------------- rates


@dataclass(frozen=True)
class RateSettings:
    """How the regularization is scheduled in a rate experiment.

    ``s`` fixes the spectral decay used by the schedules; when None it is
    estimated per problem. ``b`` is the assumed incoherence exponent used to
    pick the elastic case in near-sparse designs. ``tau`` makes M grow as
    ``ceil(n^tau)``. ``constants`` multiplies each method's schedule.
    """

    s: float | None = None
    b: float = 2.0
    tau: float | None = None
    constants: dict = field(default_factory=dict)
    fit_tol: float = 1e-8
    max_iter: int = 10_000


def _elastic_theorem(cfg, n, s, M, settings):
    if cfg.d is not None:
        return theory.sparse_branch(cfg.d, s, n), {"d": cfg.d}
    p = theory.TheoryParams(beta=max(cfg.beta, 1.0 + 1e-9), b=settings.b, s=min(s, 1 - 1e-9))
    tau = math.log(M) / math.log(n) if M > 1 else 0.0
    label = theory.classify(p, tau)
    case = {"elastic_case2": "elastic2", "elastic_case3": "elastic3", "l1_best": "elastic3"}.get(label, "elastic1")
    return case, {"beta": p.beta, "b": p.b, "tau": tau}


def schedule(method, cfg, n, s, M, settings, constant=None):
    """Scheduled ``(lambda1, lambda2)`` for a method, scaled by its constant."""
    c = settings.constants.get(method, 1.0) if constant is None else constant
    if method == "l1":
        lam1, lam2 = theory.lambda_schedule("l1", n, s, M)
    elif method == "l2":
        lam1, lam2 = theory.lambda_schedule("l2", n, s, M)
    elif method == "elastic":
        name, extras = _elastic_theorem(cfg, n, s, M, settings)
        lam1, lam2 = theory.lambda_schedule(name, n, s, M, **extras)
    else:
        raise ConfigError(f"unknown method {method!r}")
    return c * lam1, c * lam2


def fit_method(sp, lam1, lam2, settings):
    """Fit one penalty; l2-only penalties use the closed form."""
    if lam1 == 0.0:
        return closed_form_l2(sp.problem, lam2)
    return fit(sp.problem, RegPenalty(lam1, lam2), max_iter=settings.max_iter, tol=settings.fit_tol)


def predicted_slopes(cfg, s, settings, methods):
    """Predicted log-log slope of the squared error per method."""
    if cfg.d is not None:
        return {m: -2.0 / (2.0 + s) for m in methods}
    p = theory.TheoryParams(beta=max(cfg.beta, 1.0 + 1e-9), b=settings.b, s=min(s, 1 - 1e-9))
    tau = settings.tau if settings.tau is not None else 0.0
    ex = theory.exponents(p, tau)
    label = theory.classify(p, tau)
    elastic = ex[label] if label.startswith("elastic") else min(ex["l1"], ex["l2"])
    out = {"l1": ex["l1"], "l2": ex["l2"], "elastic": elastic}
    return {m: out[m] for m in methods}


@dataclass(frozen=True)
class RateResult:
    grid: tuple
    methods: tuple
    median_errors: dict
    fitted_slope: dict
    slope_stderr: dict
    predicted_slope: dict
    s_hat: dict
    excluded: dict
    rows: tuple
    trials: int
    seed: int
    diagnostics: dict = field(default_factory=dict)

    def summary(self):
        return {
            "grid": list(self.grid),
            "methods": list(self.methods),
            "median_errors": self.median_errors,
            "fitted_slope": self.fitted_slope,
            "slope_stderr": self.slope_stderr,
            "predicted_slope": self.predicted_slope,
            "s_hat": {str(k): v for k, v in self.s_hat.items()},
            "excluded": self.excluded,
            "trials": self.trials,
            "seed": self.seed,
            "diagnostics": self.diagnostics,
        }


def _trial_config(cfg, n, trial, settings):
    M = cfg.M if settings.tau is None else max(int(math.ceil(n**settings.tau)), cfg.M)
    return dataclasses.replace(cfg, n_train=n, M=M, seed=derive_seed(cfg.seed, n, trial))


def _check_grid(n_grid, trials, min_points):
    grid = tuple(int(n) for n in n_grid)
    if len(grid) < min_points:
        raise ConfigError(f"need at least {min_points} grid points")
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise ConfigError("n_grid must be strictly ascending")
    if trials < 1:
        raise ConfigError("trials must be positive")
    return grid


def rate_experiment(cfg, n_grid, methods=METHODS, trials=10, settings=None):
    """Median test error per (method, n) and fitted log-log slopes."""
    settings = settings or RateSettings()
    grid = _check_grid(n_grid, trials, 4)
    methods = tuple(methods)
    for m in methods:
        if m not in METHODS:
            raise ConfigError(f"unknown method {m!r}")
    if trials < 5:
        raise ConfigError("rate experiments need at least 5 trials")

    def run(key):
        n, trial = key
        sp = gen_problem(_trial_config(cfg, n, trial, settings))
        s = settings.s if settings.s is not None else estimate_s(sp.problem)
        rows = []
        for method in methods:
            lam1, lam2 = schedule(method, sp.config, n, s, sp.problem.M, settings)
            model = fit_method(sp, lam1, lam2, settings)
            rows.append((method, n, trial, l2_error(model, sp), lam1, lam2, int(model.converged)))
        return rows, s

    keys = [(n, t) for n in grid for t in range(trials)]
    outputs = _map(run, keys)
    rows = sorted((r for rs, _ in outputs for r in rs), key=lambda r: (methods.index(r[0]), r[1], r[2]))
    s_by_n = {n: float(np.median([s for (kn, _), (_, s) in zip(keys, outputs) if kn == n])) for n in grid}

    med, slopes, errs, excluded = {}, {}, {}, {}
    for method in methods:
        med[method], excluded[method] = [], 0
        for n in grid:
            vals = [r[3] for r in rows if r[0] == method and r[1] == n and r[6]]
            excluded[method] += trials - len(vals)
            med[method].append(float(np.median(vals)) if vals else float("nan"))
        if excluded[method] > 0.1 * trials * len(grid):
            log.warning("%s: %d of %d fits did not converge", method, excluded[method], trials * len(grid))
        slopes[method], errs[method] = fit_slope(grid, med[method])

    s_pred = settings.s if settings.s is not None else s_by_n[grid[-1]]
    diagnostics = {}
    sp0 = gen_problem(_trial_config(cfg, grid[0], 0, settings))
    if 0 < len(sp0.true_active) < sp0.problem.M:
        rep = incoherence(sp0.problem.blocks, sp0.true_active)
        diagnostics = {
            "n": grid[0],
            "kappa_min": rep.kappa_min,
            "rho": rep.rho,
            "generalized_incoherence": rep.generalized_incoherence,
        }
    return RateResult(
        grid=grid,
        methods=methods,
        median_errors=med,
        fitted_slope=slopes,
        slope_stderr=errs,
        predicted_slope=predicted_slopes(cfg, s_pred, settings, methods),
        s_hat=s_by_n,
        excluded=excluded,
        rows=tuple(rows),
        trials=trials,
        seed=cfg.seed,
        diagnostics=diagnostics,
    )


@dataclass(frozen=True)
class ComparisonResult:
    """Per-trial errors of each method at each calibration constant, at one n."""

    n: int
    methods: tuple
    constants: tuple
    errors: dict
    best_constant: dict
    best_errors: dict
    elastic_win_fraction: float

    def table(self):
        out = []
        for method in self.methods:
            for c in self.constants:
                out.append((method, c, float(np.median(self.errors[method][c]))))
        return out


def method_comparison(cfg, n, methods=METHODS, trials=20, constants=(0.1, 0.3, 1.0, 3.0), settings=None):
    """Fit every method at every schedule constant on shared problems.

    The best constant per method minimizes its median error over trials;
    ``elastic_win_fraction`` is the share of trials where elastic (at its
    best constant) is no worse than the better of l1 and l2 (at theirs).
    """
    settings = settings or RateSettings()
    methods = tuple(methods)
    constants = tuple(float(c) for c in constants)
    if trials < 1 or not constants:
        raise ConfigError("need at least one trial and one constant")

    def run(trial):
        sp = gen_problem(_trial_config(cfg, n, trial, settings))
        s = settings.s if settings.s is not None else estimate_s(sp.problem)
        out = {}
        for method in methods:
            for c in constants:
                lam1, lam2 = schedule(method, sp.config, n, s, sp.problem.M, settings, constant=c)
                out[method, c] = l2_error(fit_method(sp, lam1, lam2, settings), sp)
        return out

    results = _map(run, range(trials))
    errors = {m: {c: [r[m, c] for r in results] for c in constants} for m in methods}
    best = {m: min(constants, key=lambda c: (float(np.median(errors[m][c])), c)) for m in methods}
    best_err = {m: errors[m][best[m]] for m in methods}
    win = float("nan")
    others = [m for m in methods if m != "elastic"]
    if "elastic" in methods and others:
        wins = [
            best_err["elastic"][t] <= min(best_err[m][t] for m in others) for t in range(trials)
        ]
        win = float(np.mean(wins))
    return ComparisonResult(
        n=n,
        methods=methods,
        constants=constants,
        errors=errors,
        best_constant=best,
        best_errors=best_err,
        elastic_win_fraction=win,
    )


def calibrate(cfg, n, methods=METHODS, trials=5, constants=(0.1, 0.3, 1.0, 3.0), settings=None,
              seed_offset=PILOT_SEED_OFFSET):
    """Settings whose per-method constants are the best of a pilot comparison.

    The pilot draws its problems from ``cfg.seed + seed_offset`` so it never
    shares data with the experiment it calibrates.
    """
    settings = settings or RateSettings()
    pilot = method_comparison(
        dataclasses.replace(cfg, seed=cfg.seed + seed_offset), n, methods, trials, constants, settings
    )
    return dataclasses.replace(settings, constants={**settings.constants, **pilot.best_constant})


# ---------------------------------------------------------------- support


@dataclass(frozen=True)
class SupportResult:
    grid: tuple
    methods: tuple
    frequency: dict
    median_score: dict
    rows: tuple
    trials: int
    seed: int

    def summary(self):
        return {
            "grid": list(self.grid),
            "methods": list(self.methods),
            "frequency": self.frequency,
            "median_score": self.median_score,
            "trials": self.trials,
            "seed": self.seed,
        }


def support_experiment(cfg, n_grid, trials=50, methods=("elastic",), c1=1.0, c2=1.0, settings=None):
    """Frequency of exact support recovery along an n grid.

    ``lambda1 = c1 n^(-1/3)`` and ``lambda2 = c2 n^(-1/2)`` (``lambda2 = 0``
    for l1). The recorded score is the elastic irrepresentable score at the
    scheduled pair, or its small-lambda2 l1 form for the l1 method.
    """
    if cfg.d is None:
        raise ConfigError("support experiments need an exact-sparse design (d)")
    settings = settings or RateSettings()
    grid = _check_grid(n_grid, trials, 1)
    methods = tuple(methods)
    for m in methods:
        if m not in ("l1", "elastic"):
            raise ConfigError(f"support experiments compare l1 and elastic, not {m!r}")

    def run(key):
        n, trial = key
        sp = gen_problem(_trial_config(cfg, n, trial, settings))
        truth = set(sp.true_active)
        lam1, lam2 = c1 * n ** (-1.0 / 3.0), c2 * n ** -0.5
        score = l1_score = float("nan")
        inactive = len(truth) < sp.problem.M and len(truth) > 0
        if inactive:
            irr = irrepresentable_score(sp.problem, sp.true_active, RegPenalty(lam1, lam2), l1_variant="l1" in methods)
            score = irr.max_score
            if irr.condition_l1:
                l1_score = max(irr.condition_l1.values())
        rows = []
        for method in methods:
            pen = RegPenalty(lam1, lam2 if method == "elastic" else 0.0)
            model = fit(sp.problem, pen, max_iter=settings.max_iter, tol=settings.fit_tol)
            recovered = int(set(model.active_set) == truth)
            rows.append((method, n, trial, recovered, score if method == "elastic" else l1_score))
        return rows

    keys = [(n, t) for n in grid for t in range(trials)]
    rows = sorted((r for rs in _map(run, keys) for r in rs), key=lambda r: (methods.index(r[0]), r[1], r[2]))
    freq, score = {}, {}
    for method in methods:
        freq[method] = [float(np.mean([r[3] for r in rows if r[0] == method and r[1] == n])) for n in grid]
        score[method] = [float(np.median([r[4] for r in rows if r[0] == method and r[1] == n])) for n in grid]
    return SupportResult(
        grid=grid, methods=methods, frequency=freq, median_score=score, rows=tuple(rows), trials=trials, seed=cfg.seed
    )


# ---------------------------------------------------------------- output


def rows_to_csv(columns, rows):
    """CSV text with a fixed header; floats use their shortest round-trip repr."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([repr(v) if isinstance(v, float) else v for v in r])
    return buf.getvalue()


def rate_csv(result):
    return rows_to_csv(RATE_COLUMNS, result.rows)


def support_csv(result):
    return rows_to_csv(SUPPORT_COLUMNS, result.rows)


def comparison_csv(result):
    rows = [
        (m, c, t, e) for m in result.methods for c in result.constants for t, e in enumerate(result.errors[m][c])
    ]
    return rows_to_csv(COMPARISON_COLUMNS, rows)
