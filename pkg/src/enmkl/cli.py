"""``mkl`` command-line front end.

Every subcommand reads a strict JSON config (unknown keys are errors) and
writes its results under ``--out``. Exit codes: 0 success, 1 invalid
config or input, 2 I/O failure, 3 solver did not converge.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path
from typing import Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from . import harness, theory
from .errors import MklError
from .kernels import KernelSpec, grams
from .operators import incoherence, irrepresentable_score
from .solver import MklProblem, RegPenalty, fit

log = logging.getLogger("enmkl")

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NOCONV = 0, 1, 2, 3


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class GeneratorModel(_Strict):
    M: int = 5
    d: Optional[int] = 2
    beta: Optional[float] = None
    C3: float = 1.0
    kernel_family: Literal["gaussian", "polynomial", "linear"] = "gaussian"
    widths: float | list[float] = 0.5
    degree: int = 2
    dims_per_kernel: int = 2
    overlap: float = 0.0
    center: bool = True
    noise_level: float = 0.5
    n_train: int = 200
    n_test: int = 1000
    duplicate_pairs: int = 0
    seed: int = 0

    def build(self, seed=None):
        d = self.model_dump()
        if isinstance(d["widths"], list):
            d["widths"] = tuple(d["widths"])
        if seed is not None:
            d["seed"] = seed
        return harness.GeneratorConfig(**d)


class KernelModel(_Strict):
    family: Literal["gaussian", "polynomial", "linear"] = "gaussian"
    width: float = 1.0
    degree: int = 2
    offset: float = 1.0
    coordinate_mask: Optional[list[int]] = None
    scale: float = 1.0
    center: bool = False

    def build(self):
        d = self.model_dump()
        if d["coordinate_mask"] is not None:
            d["coordinate_mask"] = tuple(d["coordinate_mask"])
        return KernelSpec(**d)


class PenaltyModel(_Strict):
    lambda1: float
    lambda2: float
    allow_unpenalized: bool = False

    def build(self):
        return RegPenalty(self.lambda1, self.lambda2, self.allow_unpenalized)


class DataModel(_Strict):
    x: str
    y: str


class FitConfig(_Strict):
    penalty: PenaltyModel
    data: Optional[DataModel] = None
    kernels: Optional[list[KernelModel]] = None
    generator: Optional[GeneratorModel] = None
    max_iter: int = Field(default=10_000, ge=1)
    tol: float = Field(default=1e-10, gt=0)
    model_file: str = "model.json"


class SettingsModel(_Strict):
    s: Optional[float] = None
    b: float = 2.0
    tau: Optional[float] = None
    constants: dict[str, float] = Field(default_factory=dict)
    fit_tol: float = 1e-8
    max_iter: int = 10_000

    def build(self):
        return harness.RateSettings(**self.model_dump())


class CalibrationModel(_Strict):
    n: Optional[int] = None
    trials: int = Field(default=5, ge=1)
    constants: list[float] = [0.1, 0.3, 1.0, 3.0]
    seed_offset: int = harness.PILOT_SEED_OFFSET


class RatesConfig(_Strict):
    generator: GeneratorModel
    n_grid: list[int]
    trials: int
    methods: list[Literal["l1", "l2", "elastic"]] = ["l1", "l2", "elastic"]
    settings: SettingsModel = Field(default_factory=SettingsModel)
    calibration: Optional[CalibrationModel] = None


class SupportConfig(_Strict):
    generator: GeneratorModel
    n_grid: list[int]
    trials: int
    methods: list[Literal["l1", "elastic"]] = ["elastic"]
    c1: float = 1.0
    c2: float = 1.0
    fit_tol: float = 1e-8


class DiagConfig(_Strict):
    generator: GeneratorModel
    penalty: PenaltyModel
    active: Optional[list[int]] = None
    span_cutoff: float = Field(default=1e-10, gt=0, lt=1)


class TheoryConfig(_Strict):
    beta: float
    b: float
    s: float
    tau: Optional[float] = None
    n: Optional[int] = None
    d: Optional[int] = None
    M: Optional[int] = None


class IOFailure(Exception):
    pass


def _read_json(path):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise IOFailure(f"cannot read {path}: {exc}") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path} is not valid JSON: {exc}") from exc


def _write(path, text):
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
    except OSError as exc:
        raise IOFailure(f"cannot write {path}: {exc}") from exc
    log.info("wrote %s", path)


def _load_matrix(path, base):
    p = Path(path)
    if not p.is_absolute():
        p = base / p
    try:
        return np.loadtxt(p, delimiter=",", ndmin=2)
    except OSError as exc:
        raise IOFailure(f"cannot read {p}: {exc}") from exc


# ---------------------------------------------------------------- commands


def cmd_fit(cfg: FitConfig, out: Path, seed=None, base=Path(".")):
    penalty = cfg.penalty.build()
    if cfg.data is not None:
        if cfg.generator is not None or not cfg.kernels:
            raise ValueError("a fit config takes either data with kernels or a generator")
        xs = _load_matrix(cfg.data.x, base)
        y = _load_matrix(cfg.data.y, base).ravel()
        problem = MklProblem(y=y, blocks=tuple(grams([k.build() for k in cfg.kernels], xs)), xs=xs)
    elif cfg.generator is not None:
        problem = harness.gen_problem(cfg.generator.build(seed)).problem
    else:
        raise ValueError("a fit config needs data or a generator")
    model = fit(problem, penalty, max_iter=cfg.max_iter, tol=cfg.tol)
    _write(out / cfg.model_file, model.to_json())
    print(f"objective={model.objective:.12g} active={len(model.active_set)} iterations={model.iterations}")
    return EXIT_OK if model.converged else EXIT_NOCONV


def cmd_rates(cfg: RatesConfig, out: Path, seed=None):
    gen = cfg.generator.build(seed)
    settings = cfg.settings.build()
    if cfg.calibration is not None:
        cal = cfg.calibration
        settings = harness.calibrate(
            gen,
            cal.n or cfg.n_grid[0],
            methods=cfg.methods,
            trials=cal.trials,
            constants=cal.constants,
            settings=settings,
            seed_offset=cal.seed_offset,
        )
    res = harness.rate_experiment(gen, cfg.n_grid, methods=cfg.methods, trials=cfg.trials, settings=settings)
    summary = res.summary()
    summary["constants"] = {m: settings.constants.get(m, 1.0) for m in cfg.methods}
    _write(out / "rates.csv", harness.rate_csv(res))
    _write(out / "summary.json", json.dumps(summary, indent=2, sort_keys=True))
    _write(out / "rates.svg", slope_svg(res))
    for m in res.methods:
        print(f"{m}: slope={res.fitted_slope[m]:.3f} (+/- {res.slope_stderr[m]:.3f}) predicted={res.predicted_slope[m]:.3f}")
    total = sum(res.excluded.values())
    return EXIT_NOCONV if total else EXIT_OK


def cmd_support(cfg: SupportConfig, out: Path, seed=None):
    gen = cfg.generator.build(seed)
    settings = harness.RateSettings(fit_tol=cfg.fit_tol)
    res = harness.support_experiment(
        gen, cfg.n_grid, trials=cfg.trials, methods=cfg.methods, c1=cfg.c1, c2=cfg.c2, settings=settings
    )
    _write(out / "support.csv", harness.support_csv(res))
    _write(out / "support_summary.json", json.dumps(res.summary(), indent=2, sort_keys=True))
    for m in res.methods:
        print(f"{m}: recovery={res.frequency[m]}")
    return EXIT_OK


def cmd_diag(cfg: DiagConfig, out: Path, seed=None):
    sp = harness.gen_problem(cfg.generator.build(seed))
    active = tuple(cfg.active) if cfg.active is not None else sp.true_active
    rep = incoherence(sp.problem.blocks, active, cfg.span_cutoff)
    irr = irrepresentable_score(sp.problem, active, cfg.penalty.build())
    payload = {
        "kappa_min": rep.kappa_min,
        "rho": rep.rho,
        "scores": {str(m): v for m, v in sorted(irr.per_inactive.items())},
        "condition_elastic_ok": irr.condition_elastic_ok,
    }
    text = json.dumps(payload, indent=2)
    _write(out / "diag.json", text)
    print(text)
    return EXIT_OK


def cmd_theory(cfg: TheoryConfig, out: Optional[Path] = None, seed=None):
    report = theory.rate_exponents(theory.TheoryParams(**cfg.model_dump()))
    text = json.dumps(report.to_dict(), indent=2)
    if out is not None:
        _write(out / "theory.json", text)
    print(text)
    return EXIT_OK


# ---------------------------------------------------------------- svg


def slope_svg(res, width=480, height=360):
    """Log-log scatter of median errors with fitted (solid) and predicted (dashed) lines."""
    colors = {"l1": "#1f77b4", "l2": "#2ca02c", "elastic": "#d62728"}
    pad = 50
    lx = np.log10(np.asarray(res.grid, dtype=float))
    pts = {m: np.log10(np.asarray(res.median_errors[m], dtype=float)) for m in res.methods}
    finite = np.concatenate([v[np.isfinite(v)] for v in pts.values()] or [np.zeros(1)])
    if finite.size == 0:
        finite = np.zeros(1)
    y0, y1 = float(finite.min()) - 0.2, float(finite.max()) + 0.2
    x0, x1 = float(lx[0]) - 0.05, float(lx[-1]) + 0.05

    def sx(x):
        return pad + (x - x0) / (x1 - x0) * (width - 2 * pad)

    def sy(y):
        return height - pad - (y - y0) / (y1 - y0) * (height - 2 * pad)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        f'<rect x="{pad}" y="{pad}" width="{width - 2 * pad}" height="{height - 2 * pad}" fill="none" stroke="black"/>',
        f'<text x="{width / 2}" y="{height - 10}" text-anchor="middle" font-size="12">log10 n</text>',
        f'<text x="12" y="{height / 2}" font-size="12" transform="rotate(-90 12 {height / 2})">log10 median error</text>',
    ]
    for k, m in enumerate(res.methods):
        c = colors.get(m, "black")
        ys = pts[m]
        ok = np.isfinite(ys)
        for x, y in zip(lx[ok], ys[ok]):
            parts.append(f'<circle cx="{sx(x):.2f}" cy="{sy(y):.2f}" r="3" fill="{c}"/>')
        if ok.sum() >= 2:
            xm, ym = float(lx[ok].mean()), float(ys[ok].mean())
            for slope, dash in ((res.fitted_slope[m], ""), (res.predicted_slope[m], ' stroke-dasharray="5,4"')):
                if slope is None or not math.isfinite(slope):
                    continue
                ya, yb = ym + slope * (x0 - xm), ym + slope * (x1 - xm)
                parts.append(
                    f'<line x1="{sx(x0):.2f}" y1="{sy(ya):.2f}" x2="{sx(x1):.2f}" y2="{sy(yb):.2f}" stroke="{c}"{dash}/>'
                )
        parts.append(
            f'<text x="{width - pad - 5}" y="{pad + 15 + 15 * k}" text-anchor="end" font-size="12" fill="{c}">'
            f"{m}: {res.fitted_slope[m]:.2f} (pred {res.predicted_slope[m]:.2f})</text>"
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


# ---------------------------------------------------------------- entry


COMMANDS = {
    "fit": (FitConfig, cmd_fit),
    "rates": (RatesConfig, cmd_rates),
    "support": (SupportConfig, cmd_support),
    "diag": (DiagConfig, cmd_diag),
    "theory": (TheoryConfig, cmd_theory),
}


def build_parser():
    parser = argparse.ArgumentParser(prog="mkl", description="Elastic-net multiple kernel learning.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=name != "theory", help="JSON config file")
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--seed", type=int, default=None, help="override the generator seed")
        if name == "theory":
            for flag, typ in (("beta", float), ("b", float), ("s", float), ("tau", float), ("n", int), ("d", int), ("M", int)):
                p.add_argument(f"--{flag}", type=typ, default=None)
    return parser


def _config_payload(args):
    payload = {}
    if args.config:
        payload = _read_json(args.config)
        if not isinstance(payload, dict):
            raise ValueError("config must be a JSON object")
    if args.command == "theory":
        for key in ("beta", "b", "s", "tau", "n", "d", "M"):
            val = getattr(args, key)
            if val is not None:
                payload[key] = val
    return payload


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    model_cls, command = COMMANDS[args.command]
    out = Path(args.out)
    try:
        cfg = model_cls.model_validate(_config_payload(args))
        if args.command == "fit":
            base = Path(args.config).resolve().parent
            return command(cfg, out, args.seed, base)
        if args.command == "theory":
            return command(cfg, out if args.config else None)
        return command(cfg, out, args.seed)
    except IOFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValidationError as exc:
        print(f"error: invalid config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (MklError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
