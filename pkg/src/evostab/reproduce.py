"""Self-contained check bundles for the worked examples.

Each bundle returns a list of :class:`CheckRow`; the CLI renders them as a
pass/fail table.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .evolution import check_axioms
from .lp_spaces import INF, Grid, SampledSignal, band_limited, indicator, lp_norm
from .mild_solver import MildSolveConfig
from .models import (
    SPEED_PRESETS,
    TravelTimeTable,
    SpectralHeatModel,
    attraction_check,
    check_bounded_solutions,
    scalar_flow_family,
    find_fixed_point,
    heat_mild_family,
    reaction_linear,
    sandwich_ratios,
    scalar_forced_model,
)
from .stability import (
    ConvolutionCase,
    StabilityCertificate,
    convolution_bound,
    exp_convolve,
    extract_exponential,
    geometric_worst_case,
    verify_certificate,
)


@dataclass
class CheckRow:
    name: str
    passed: bool
    detail: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"name": self.name, "passed": self.passed, "detail": self.detail}


def _preset_field(name: str) -> TravelTimeTable:
    params = {"c": 1.0} if name == "constant" else {}
    return TravelTimeTable(SPEED_PRESETS[name](**params))


def scalar_flow(seed: int = 0, n_samples: int = 500) -> list[CheckRow]:
    rows = []
    for name in SPEED_PRESETS:
        field_h = _preset_field(name)
        F = scalar_flow_family(field_h)
        r = sandwich_ratios(F, n_samples, seed)
        lo, hi = float(r.min()), float(r.max())
        rows.append(CheckRow(f"sandwich [1/2, 1] ({name})", lo >= 0.5 - 1e-6 and hi <= 1 + 1e-6,
                             {"min_ratio": lo, "max_ratio": hi}))
        rows.append(CheckRow(f"sandwich [1/2, 2] ({name})", lo >= 0.5 - 1e-6 and hi <= 2 + 1e-6,
                             {"min_ratio": lo, "max_ratio": hi}))
        ax = check_axioms(F, Grid(10.0, 0.01), n_samples=n_samples, seed=seed)
        limit = 10 * field_h.inversion_tol
        rows.append(CheckRow(f"cocycle ({name})", ax.e2_violation <= limit,
                             {"e2_violation": ax.e2_violation, "limit": limit}))
    return rows


def semilinear_models(seed: int = 0) -> list[CheckRow]:
    rows = []
    grid = Grid(8.0, 1e-3)
    F = scalar_forced_model(lambda t: np.exp(-t), 1.0, MildSolveConfig(dt=grid.dt))
    fp = find_fixed_point(F, grid)
    err = float(np.abs(fp.phi.values - grid.times * np.exp(-grid.times)).max())
    rows.append(CheckRow("fixed point vs t e^{-t}", err <= 1e-3, {"max_error": err, **fp.to_dict()}))
    xs = np.random.default_rng(seed).uniform(-2.0, 2.0, 20)
    ok, excess = attraction_check(F, fp.phi, fp.N, fp.alpha, xs)
    rows.append(CheckRow("exponential attraction", ok, {"worst_excess": excess, "N": fp.N, "alpha": fp.alpha}))

    n_modes, tau = 16, 0.1
    H = heat_mild_family(SpectralHeatModel(n_modes, reaction_linear(1.0)), MildSolveConfig(dt=1e-3))
    out = H.batch(np.full(n_modes, tau), np.zeros(n_modes), np.eye(n_modes))
    k = np.arange(n_modes)
    rates = -np.log(np.diag(out)) / tau
    rel = float(np.abs(rates / (k**2 + 1.0) - 1.0).max())
    rows.append(CheckRow("modal decay rates k^2 + 1", rel <= 1e-3, {"max_relative_error": rel}))
    bounded = check_bounded_solutions(H, 1.0, Grid(2.0, 0.01), seed=seed)
    rows.append(CheckRow("boundedness with N = 1", bounded, {}))
    return rows


def extraction(seed: int = 0, n_cases: int = 100) -> list[CheckRow]:
    rng = np.random.default_rng(seed)
    failures = 0
    for _ in range(n_cases):
        M, d, c = rng.uniform(1.0, 5.0), rng.uniform(0.1, 3.0), rng.uniform(0.05, 0.95)
        N, nu = extract_exponential(M, d, c)
        t0 = rng.uniform(0.0, 5.0, 400)
        tau = np.concatenate([rng.uniform(0.0, 10 * d, 200), d * rng.integers(0, 10, 200)])
        g = geometric_worst_case(M, d, c, t0 + tau, t0)
        cert = StabilityCertificate(N, nu, "theoretical")
        if not verify_certificate(np.column_stack([t0 + tau, t0, g]), cert, tol=1e-12):
            failures += 1
    return [CheckRow("exponential extraction", failures == 0, {"cases": n_cases, "failures": failures})]


CONVERSE_CASES = [(INF, INF), (1.0, 1.0), (1.0, 2.0), (1.0, INF), (2.0, 2.0), (2.0, 4.0)]


def _nonnegative_band_limited(grid: Grid, rng: np.random.Generator) -> SampledSignal:
    b = band_limited(grid, rng)
    return b.with_values(b.values - b.values.min() + rng.uniform(0.0, 0.5))


def converse(seed: int = 0, n_signals: int = 200) -> list[CheckRow]:
    rows = []
    grid = Grid(20.0, 0.01)
    for p, q in CONVERSE_CASES:
        rng = np.random.default_rng([seed, int(min(p, 9)), int(min(q, 9))])
        violations, worst = 0, 0.0
        for _ in range(n_signals):
            case = ConvolutionCase(p, q, rng.uniform(0.5, 2.0))
            res = convolution_bound(case, _nonnegative_band_limited(grid, rng))
            violations += not res.holds
            worst = max(worst, res.H_norm_q / res.bound)
        rows.append(CheckRow(f"convolution bound p={p:g} q={q:g}", violations == 0,
                             {"violations": violations, "worst_ratio": worst}))
    fine = Grid(20.0, 1e-3)
    spot1 = lp_norm(exp_convolve(indicator(0.0, 1.0, 1.0, fine), 1.0), INF)
    spot2 = lp_norm(exp_convolve(SampledSignal(0.0, fine.dt, np.ones(fine.n)), 2.0), INF)
    rows.append(CheckRow("spot value 1 - e^{-1}", abs(spot1 - (1 - math.exp(-1))) <= 1e-4, {"value": spot1}))
    rows.append(CheckRow("spot value 1/2", abs(spot2 - 0.5) <= 1e-4, {"value": spot2}))
    return rows


BUNDLES: dict[str, Callable[..., list[CheckRow]]] = {
    "scalar-flow": scalar_flow,
    "semilinear": semilinear_models,
    "extraction": extraction,
    "converse": converse,
}


def format_table(rows: list[CheckRow]) -> str:
    width = max(len(r.name) for r in rows)
    lines = [f"{'check'.ljust(width)}  result"]
    lines += [f"{r.name.ljust(width)}  {'PASS' if r.passed else 'FAIL'}" for r in rows]
    return "\n".join(lines) + "\n"
