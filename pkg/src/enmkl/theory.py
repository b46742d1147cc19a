"""Closed-form rates, thresholds and regularization schedules.

Near-sparse setting: true block norms decay like ``m^(-beta)``, kernel
correlation grows like ``|I|^b``, the spectrum decays like ``k^(-1/s)``
and the number of kernels grows like ``M = ceil(n^tau)``. The thresholds
``tau1 < tau2 < tau3 < tau4`` split the tau axis into the regimes where
block-l2, the three elastic-net cases, or block-l1 MKL has the fastest
predicted rate. All exponents here are exponents of n in the squared
L2 error; unknown constants are left to the caller.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

from .errors import InvalidInputError

REGIMES = ("l2_best", "elastic_case1", "elastic_case2", "elastic_case3", "l1_best", "undefined")
SCHEDULES = (
    "sparse",
    "sparse_small_d",
    "sparse_large_d",
    "elastic1",
    "elastic2",
    "elastic3",
    "l1",
    "l2",
)


def _div(num, den, what):
    if den == 0:
        raise InvalidInputError(f"zero denominator while evaluating {what}")
    return num / den


@dataclass(frozen=True)
class TheoryParams:
    beta: float
    b: float
    s: float
    tau: float | None = None
    d: int | None = None
    n: int | None = None
    M: int | None = None

    def __post_init__(self):
        if not self.beta > 1:
            raise InvalidInputError("beta must exceed 1")
        if not self.b > 0:
            raise InvalidInputError("b must be positive")
        if not 0 < self.s < 1:
            raise InvalidInputError("s must lie in (0, 1)")
        if self.tau is not None and not self.tau > 0:
            raise InvalidInputError("tau must be positive")
        if self.d is not None and self.d < 1:
            raise InvalidInputError("d must be a positive integer")
        if self.tau is None and self.n is not None and self.M is not None:
            if self.n > 1 and self.M > 1:
                object.__setattr__(self, "tau", math.log(self.M) / math.log(self.n))
        elif self.tau is not None and self.n is not None:
            implied = math.ceil(self.n**self.tau)
            if self.M is None:
                object.__setattr__(self, "M", implied)
            elif abs(self.M - self.n**self.tau) > 1:
                raise InvalidInputError(f"M={self.M} is inconsistent with ceil(n^tau)={implied}")

    @property
    def admissible(self):
        """Whether ``2 beta (1 - s) < s (b - 1)``, i.e. the elastic window is nonempty."""
        return 2 * self.beta * (1 - self.s) < self.s * (self.b - 1)


def thresholds(p):
    """The six tau thresholds as a dict ``tau1 .. tau6``."""
    beta, b, s = p.beta, p.b, p.s
    den12 = (2 * beta + b) * (2 + s) - 1 - s
    return {
        "tau1": _div(1.0, den12, "tau1"),
        "tau2": _div((s - 1) * (2 * beta - 1) + b * s, den12, "tau2"),
        "tau3": _div(s * (2 * (b + beta) - 1), 2 * (2 + s) * (b + beta) - s, "tau3"),
        "tau4": _div(s, 2 + s, "tau4"),
        "tau5": _div(b + 1, (beta + b) * (b * (2 + s) + 2), "tau5"),
        "tau6": _div(1.0, (1 - s) * (1 + b), "tau6"),
    }


def gammas(p):
    beta, b, s = p.beta, p.b, p.s
    return {
        "gamma1": _div(4 * beta + b - 2, (2 + s) * (2 * beta + b) - 1 - s, "gamma1"),
        "gamma2": _div(4 * beta + b * (2 + s) - 2, 2 * ((2 + s) * (b + beta) - s), "gamma2"),
        "gamma3": _div(b + 2 * beta - 1, 2 * (b + beta), "gamma3"),
        "gamma4": _div(2 * beta + b - 1, (beta + b) * (2 + s), "gamma4"),
        "gamma5": _div(2.0, 2 + s, "gamma5"),
    }


def exponents(p, tau):
    """Leading n-exponent of the squared error for each method at a given tau.

    Keys ``elastic_case1..3`` give the three elastic-net formulas evaluated
    regardless of which case applies; ``l1`` and ``l2`` the single-penalty
    rates.
    """
    beta, b, s = p.beta, p.b, p.s
    g = gammas(p)
    case2_slope = _div((2 + s) * b + 2, 2 * ((2 + s) * (b + beta) - s), "case-2 slope")
    return {
        "elastic_case1": -g["gamma1"],
        "elastic_case2": tau * case2_slope - g["gamma2"],
        "elastic_case3": g["gamma3"] * (tau - 1),
        "l1": -g["gamma4"],
        "l2": tau * (b + 2 / (2 + s)) - g["gamma5"],
    }


def classify(p, tau, th=None):
    """Regime label at an explicit tau (``p.tau`` is ignored)."""
    th = thresholds(p) if th is None else th
    if not p.admissible:
        return "undefined"
    if tau <= th["tau1"]:
        return "l2_best"
    if tau < th["tau2"]:
        return "elastic_case1"
    if tau < th["tau3"]:
        return "elastic_case2"
    if tau < th["tau4"]:
        return "elastic_case3"
    return "l1_best"


def regime(p):
    """Which method the rates favour at ``p.tau``.

    Ties at tau1 go to l2 and at tau4 to l1, where the rates coincide.
    """
    if p.tau is None:
        raise InvalidInputError("regime needs tau (or n and M)")
    return classify(p, p.tau, thresholds(p))


@dataclass(frozen=True)
class RegimeReport:
    taus: dict
    gammas: dict
    regime: str
    admissible: bool
    predicted_exponent: dict
    hypothesis_unmet: bool = False
    params: dict = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)


def rate_exponents(p):
    """Thresholds, gammas, regime and predicted exponents for ``p``.

    ``predicted_exponent["elastic"]`` is the applicable elastic case inside
    (tau1, tau4) for admissible parameters and None elsewhere. The l1 rate
    is only proven for tau > tau5 and the l2 rate for tau < tau6;
    ``hypothesis_unmet`` flags a winning method whose theorem does not
    cover the given tau.
    """
    th = thresholds(p)
    report_tau = p.tau
    pred = {"elastic": None, "l1": None, "l2": None}
    label = "undefined"
    unmet = False
    if report_tau is not None:
        ex = exponents(p, report_tau)
        label = classify(p, report_tau, th)
        pred["l1"] = ex["l1"]
        pred["l2"] = ex["l2"]
        if label.startswith("elastic"):
            pred["elastic"] = ex[label]
        unmet = (label == "l1_best" and not report_tau > th["tau5"]) or (
            label == "l2_best" and not report_tau < th["tau6"]
        )
    return RegimeReport(
        taus=th,
        gammas=gammas(p),
        regime=label,
        admissible=p.admissible,
        predicted_exponent=pred,
        hypothesis_unmet=unmet,
        params=asdict(p),
    )


def sparse_branch(d, s, n):
    """``sparse_small_d`` when ``d^(3+s) <= n``, else ``sparse_large_d``."""
    return "sparse_small_d" if d ** (3 + s) <= n else "sparse_large_d"


def lambda_schedule(
    theorem, n, s, M, t=0.0, K=1.0, K2=1.0, F=1.0, d=None, beta=None, b=None, tau=None, ratio=1.0
):
    """Scheduled ``(lambda1, lambda2)`` for one of the rate theorems.

    ``K``, ``K2`` and ``F`` stand in for the unknown theorem constants.
    ``ratio`` sets ``lambda2 = ratio * lambda1`` in the large-d sparse case,
    where only ``lambda2 <= lambda1`` is required. For the elastic cases
    tau defaults to ``log M / log n``.
    """
    if theorem not in SCHEDULES:
        raise InvalidInputError(f"unknown schedule {theorem!r}; choose from {SCHEDULES}")
    if n < 2 or M < 1:
        raise InvalidInputError("need n >= 2 and M >= 1")
    if not 0 < s <= 1:
        raise InvalidInputError("s must lie in (0, 1]")
    floor = F * math.sqrt(math.log(M * n) / n)
    noise = K2 * math.sqrt(t / n)

    if theorem == "sparse":
        if d is None:
            raise InvalidInputError("the sparse schedule needs d")
        theorem = sparse_branch(d, s, n)
    if theorem == "sparse_small_d":
        lam = max(K * n ** (-1 / (2 + s)) + noise, floor)
        return lam, lam
    if theorem == "sparse_large_d":
        if not 0 <= ratio <= 1:
            raise InvalidInputError("ratio must lie in [0, 1]")
        lam = max(K * (1 + math.sqrt(t)) * n ** -0.5, floor)
        return lam, ratio * lam
    if theorem == "l1":
        return max(K * n ** (-1 / (2 + s)) + noise, floor), 0.0
    if theorem == "l2":
        return 0.0, max(K * (M / n) ** (1 / (2 + s)), floor)

    if beta is None or b is None:
        raise InvalidInputError(f"schedule {theorem} needs beta and b")
    if theorem == "elastic1":
        den = (2 * beta + b) * (2 + s) - 1 - s
        lam1 = max(K * n ** (-(3 * beta + b - 1) / den) + noise, floor)
        lam2 = K * n ** (-(2 * beta + b - 1) / den)
        return lam1, lam2
    lam1 = max(K * math.sqrt(M / n) + noise, floor)
    if theorem == "elastic2":
        if tau is None:
            tau = math.log(M) / math.log(n)
        lam2 = K * n ** ((tau - (2 * (b + beta) - 1)) / (2 * ((2 + s) * (b + beta) - s)))
        return lam1, lam2
    lam2 = K * (M / n) ** ((2 * (b + beta) - 1) / (4 * (b + beta)))
    return lam1, lam2


def sparse_rate_bound(d, n, s, M, t=0.0, include_log=True):
    """Both branches of the sparse-case bound (unit constants) and their minimum."""
    if min(d, n, s, M) <= 0:
        raise InvalidInputError("d, n, s and M must be positive")
    log_term = math.log(M * n) if include_log else 0.0
    first = d * n ** (-2 / (2 + s)) + d * t / n
    second = d ** ((1 - s) / (1 + s)) * n ** (-1 / (1 + s)) + d * (log_term + t) / n
    return {"branch1": first, "branch2": second, "bound": min(first, second)}
