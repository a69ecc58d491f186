"""Evolution families, axiom checks and Lipschitz-seminorm estimation.

An evolution family is represented by a *batched* evaluator
``evaluate(t, s, x)`` taking arrays ``t``, ``s`` of shape ``(m,)`` and states
``x`` of shape ``(m, d)``; it returns the ``(m, d)`` array of ``X(t_i, s_i) x_i``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional

import numpy as np

from .lp_spaces import Grid, SampledSignal

Sampler = Callable[[np.random.Generator, int], np.ndarray]

EPS_OMEGA = 1e-6


class EstimationError(RuntimeError):
    """Raised when a sampled estimate has no admissible samples."""


@dataclass(frozen=True, eq=False)
class EvolutionFamily:
    evaluate: Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]
    M: float
    omega: float
    kind: str = "linear"
    dim: int = 1
    name: str = "family"
    # set for autonomous diagonal linear families: X(t,s) = diag(exp(-rates (t-s)))
    diagonal_rates: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        if self.kind not in ("linear", "nonlinear"):
            raise ValueError(f"kind must be 'linear' or 'nonlinear', got {self.kind!r}")
        if not self.M > 0:
            raise ValueError("growth constant M must be positive")

    @property
    def growth(self) -> tuple[float, float]:
        return (self.M, self.omega)

    def growth_bound(self, tau):
        return self.M * np.exp(self.omega * np.asarray(tau, dtype=float))

    def batch(self, t, s, x) -> np.ndarray:
        """Broadcasting front-end to ``evaluate``."""
        x = np.asarray(x, dtype=float)
        if x.ndim <= 1:
            x = x.reshape(-1, self.dim)
        t = np.asarray(t, dtype=float).reshape(-1)
        s = np.asarray(s, dtype=float).reshape(-1)
        m = max(t.size, s.size, x.shape[0])
        t = np.broadcast_to(t, (m,))
        s = np.broadcast_to(s, (m,))
        x = np.broadcast_to(x, (m, self.dim))
        if np.any(t < s - 1e-12):
            raise ValueError("evolution family evaluated outside t >= s")
        if m == 0:
            return np.zeros((0, self.dim))
        return np.asarray(self.evaluate(t, s, x), dtype=float).reshape(m, self.dim)

    def __call__(self, t: float, s: float, x):
        xa = np.asarray(x, dtype=float)
        out = self.batch([t], [s], xa.reshape(1, self.dim))[0]
        if xa.ndim == 0:
            return float(out[0])
        return out


def from_pointwise(
    fn: Callable[[float, float, np.ndarray], np.ndarray],
    M: float,
    omega: float,
    kind: str = "nonlinear",
    dim: int = 1,
    name: str = "family",
) -> EvolutionFamily:
    """Wrap a one-at-a-time map ``fn(t, s, x)`` as a batched family."""

    def evaluate(t, s, x):
        return np.stack([np.asarray(fn(ti, si, xi), dtype=float).reshape(dim) for ti, si, xi in zip(t, s, x)])

    return EvolutionFamily(evaluate, M, omega, kind, dim, name)


def diagonal_exponential_family(rates, M: float = 1.0, omega: Optional[float] = None, name: str = "diag-exp"):
    """X(t,s)x = exp(-rates*(t-s)) * x componentwise (exact linear cocycle)."""
    rates = np.atleast_1d(np.asarray(rates, dtype=float))

    def evaluate(t, s, x):
        return np.exp(-np.outer(t - s, rates)) * x

    if omega is None:
        omega = max(-float(rates.min()), EPS_OMEGA)
    return EvolutionFamily(evaluate, M, omega, "linear", rates.size, name, diagonal_rates=rates)


def exponential_family(rate: float, dim: int = 1, M: float = 1.0, omega: Optional[float] = None):
    """Scalar-rate family e^{-rate (t-s)} on R^dim; rate < 0 expands, rate = 0 is the identity."""
    return diagonal_exponential_family(np.full(dim, float(rate)), M, omega, name=f"exp({-rate:g}(t-s))")


def identity_family(dim: int = 1) -> EvolutionFamily:
    return exponential_family(0.0, dim)


def uniform_sampler(dim: int, low: float = -1.0, high: float = 1.0) -> Sampler:
    def sample(rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.uniform(low, high, size=(n, dim))

    return sample


def _sampler_for(F: EvolutionFamily, sampler: Optional[Sampler]) -> Sampler:
    return sampler if sampler is not None else uniform_sampler(F.dim)


# ---------------------------------------------------------------------------
# axioms


@dataclass
class AxiomReport:
    e1_violation: float
    e2_violation: float
    e3_violation: float
    tol: float
    n_samples: int
    seed: int
    worst_e2: Optional[tuple[float, float, float]] = None
    worst_e3: Optional[tuple[float, float]] = None

    @property
    def e1_ok(self) -> bool:
        return self.e1_violation <= self.tol

    @property
    def e2_ok(self) -> bool:
        return self.e2_violation <= self.tol

    @property
    def e3_ok(self) -> bool:
        return self.e3_violation <= self.tol

    @property
    def passed(self) -> bool:
        return self.e1_ok and self.e2_ok and self.e3_ok

    def to_dict(self) -> dict:
        return {
            "e1_violation": self.e1_violation,
            "e2_violation": self.e2_violation,
            "e3_violation": self.e3_violation,
            "tol": self.tol,
            "n_samples": self.n_samples,
            "seed": self.seed,
            "worst_e2": self.worst_e2,
            "worst_e3": self.worst_e3,
            "passed": self.passed,
        }


def check_axioms(
    F: EvolutionFamily,
    grid: Grid,
    sampler: Optional[Sampler] = None,
    tol: float = 1e-9,
    n_samples: int = 50,
    seed: int = 0,
) -> AxiomReport:
    """Sample (t, r, s, x, y) on ``grid`` and measure violations of (e1)-(e3).

    The e2 and e3 violations are relative to ``M e^{omega (t-s)}`` so that a
    single ``tol`` works for families obtained by numerical integration.
    """
    rng = np.random.default_rng(seed)
    sample = _sampler_for(F, sampler)
    times = grid.times
    trs = np.sort(rng.choice(times, size=(n_samples, 3)), axis=1)
    s, r, t = trs[:, 0], trs[:, 1], trs[:, 2]
    x = sample(rng, n_samples)
    y = sample(rng, n_samples)

    e1 = np.abs(F.batch(t, t, x) - x).max()

    direct = F.batch(t, s, x)
    composed = F.batch(t, r, F.batch(r, s, x))
    scale = F.growth_bound(t - s)
    e2_each = np.linalg.norm(direct - composed, axis=1) / (scale * (1.0 + np.linalg.norm(x, axis=1)))
    k2 = int(np.argmax(e2_each))

    dxy = np.linalg.norm(x - y, axis=1)
    ok = dxy > 0
    num = np.linalg.norm(direct - F.batch(t, s, y), axis=1)
    ratio = np.where(ok, num / np.where(ok, dxy, 1.0), 0.0)
    e3_each = np.maximum(ratio - scale, 0.0) / scale
    k3 = int(np.argmax(e3_each))

    return AxiomReport(
        e1_violation=float(e1),
        e2_violation=float(e2_each[k2]),
        e3_violation=float(e3_each[k3]),
        tol=tol,
        n_samples=n_samples,
        seed=seed,
        worst_e2=(float(t[k2]), float(r[k2]), float(s[k2])),
        worst_e3=(float(t[k3]), float(s[k3])),
    )


# ---------------------------------------------------------------------------
# Lipschitz seminorm


@dataclass
class LipschitzEstimate:
    t: float
    s: float
    value: float
    n_pairs: int
    seed: int
    ratios: np.ndarray = field(repr=False, default_factory=lambda: np.zeros(0))

    def to_dict(self) -> dict:
        return {
            "t": self.t,
            "s": self.s,
            "value": self.value,
            "n_pairs": self.n_pairs,
            "seed": self.seed,
            "ratios": [float(r) for r in self.ratios],
        }


def _pairs(F: EvolutionFamily, sampler: Optional[Sampler], n_pairs: int, seed: int):
    if n_pairs < 1:
        raise ValueError("n_pairs must be >= 1")
    rng = np.random.default_rng(seed)
    sample = _sampler_for(F, sampler)
    x = sample(rng, n_pairs)
    y = sample(rng, n_pairs)
    dxy = np.linalg.norm(x - y, axis=1)
    keep = dxy > 0
    if not keep.any():
        raise EstimationError("sampler produced only coincident pairs")
    return x[keep], y[keep], dxy[keep]


def lip_estimates(
    F: EvolutionFamily,
    t,
    s,
    sampler: Optional[Sampler] = None,
    n_pairs: int = 64,
    seed: int = 0,
) -> list[LipschitzEstimate]:
    """``estimate_lip_norm`` at many (t, s) with one batched family call."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    s = np.atleast_1d(np.asarray(s, dtype=float))
    t, s = np.broadcast_arrays(t, s)
    x, y, dxy = _pairs(F, sampler, n_pairs, seed)
    k = x.shape[0]
    tt = np.repeat(t, k)
    ss = np.repeat(s, k)
    out = F.batch(np.concatenate([tt, tt]), np.concatenate([ss, ss]), np.concatenate([np.tile(x, (t.size, 1)), np.tile(y, (t.size, 1))]))
    fx, fy = out[: tt.size], out[tt.size :]
    ratios = (np.linalg.norm(fx - fy, axis=1) / np.tile(dxy, t.size)).reshape(t.size, k)
    return [
        LipschitzEstimate(float(ti), float(si), float(r.max()), int(n_pairs), int(seed), r)
        for ti, si, r in zip(t, s, ratios)
    ]


def estimate_lip_norm(
    F: EvolutionFamily,
    t: float,
    s: float,
    sampler: Optional[Sampler] = None,
    n_pairs: int = 64,
    seed: int = 0,
) -> LipschitzEstimate:
    """Lower bound on ||X(t,s)||_lip: max ratio over sampled pairs x != y."""
    if t < s or s < 0:
        raise ValueError("need t >= s >= 0")
    return lip_estimates(F, [t], [s], sampler, n_pairs, seed)[0]


class DomainError(ValueError):
    pass


def growth_from_phi(phi: Callable[[np.ndarray], np.ndarray], n: int = 1001) -> tuple[float, float]:
    """Growth constants from a local bound phi: M = sup_[0,1] phi, omega = max(1, ln phi(1))."""
    p1 = float(np.asarray(phi(np.array([1.0])), dtype=float).reshape(-1)[0])
    if not p1 > 0:
        raise DomainError("phi(1) must be positive")
    grid = np.linspace(0.0, 1.0, n)
    M = float(np.max(np.asarray(phi(grid), dtype=float)))
    return M, max(1.0, math.log(p1))


# ---------------------------------------------------------------------------
# trajectories


@dataclass
class Trajectory:
    t0: float
    x0: np.ndarray
    path: SampledSignal


def trajectory(F: EvolutionFamily, t0: float, x0, grid: Grid) -> Trajectory:
    """u_{t0,x0}: X(t, t0) x0 for t >= t0 and zero before."""
    times = grid.times
    if t0 < times[0] - 1e-12 or t0 > times[-1] + 1e-12:
        raise ValueError("t0 outside grid span")
    x0a = np.asarray(x0, dtype=float).reshape(F.dim)
    vals = np.zeros((grid.n, F.dim))
    on = times >= t0 - 1e-9 * grid.dt
    vals[on] = F.batch(np.maximum(times[on], t0), t0, x0a)
    if np.ndim(x0) == 0 and F.dim == 1:
        vals = vals[:, 0]
    return Trajectory(float(t0), x0a, SampledSignal(grid.t0, grid.dt, vals))


def trajectory_tail_max(
    F: EvolutionFamily,
    grid: Grid,
    sampler: Optional[Sampler] = None,
    tail_fraction: float = 0.25,
    n_starts: int = 8,
    seed: int = 0,
) -> np.ndarray:
    """Max ||u_{t0,x0}(t)|| over the final ``tail_fraction`` of the grid, per sampled start."""
    if not 0 < tail_fraction <= 1:
        raise ValueError("tail_fraction must lie in (0, 1]")
    rng = np.random.default_rng(seed)
    sample = _sampler_for(F, sampler)
    x0 = sample(rng, n_starts)
    T = grid.times[-1]
    t0 = rng.uniform(grid.t0, grid.t0 + (1 - tail_fraction) * (T - grid.t0) / 2, size=n_starts)
    t0 = grid.t0 + np.round((t0 - grid.t0) / grid.dt) * grid.dt
    times = grid.times
    tail = times[times >= T - tail_fraction * (T - grid.t0) - 1e-12]
    out = []
    for a, x in zip(t0, x0):
        vals = F.batch(tail, a, x)
        out.append(np.linalg.norm(vals, axis=1).max())
    return np.array(out)


# ---------------------------------------------------------------------------
# classification


class ExponentialFit(NamedTuple):
    N: float
    nu: float
    rms: float


def fit_exponential(taus, values) -> ExponentialFit:
    """Least squares of log(values) on taus; N is raised to envelope every sample."""
    taus = np.asarray(taus, dtype=float)
    logs = np.log(np.maximum(np.asarray(values, dtype=float), 1e-300))
    A = np.column_stack([np.ones_like(taus), -taus])
    (logN, nu), *_ = np.linalg.lstsq(A, logs, rcond=None)
    resid = logs - (logN - nu * taus)
    return ExponentialFit(float(math.exp(logN + max(resid.max(), 0.0))), float(nu), float(np.sqrt(np.mean(resid**2))))


@dataclass
class StabilityClassification:
    uniformly_exponentially_stable: bool
    uniformly_stable: bool
    asymptotically_stable: bool
    N: Optional[float]
    nu: Optional[float]
    N_uniform: float
    fit_rms: float
    taus: list[float]
    estimates: list[float]
    tail_max: list[float]
    seed: int

    def to_dict(self) -> dict:
        return {
            "uniformly_exponentially_stable": self.uniformly_exponentially_stable,
            "uniformly_stable": self.uniformly_stable,
            "asymptotically_stable": self.asymptotically_stable,
            "N": self.N,
            "nu": self.nu,
            "N_uniform": self.N_uniform,
            "fit_rms": self.fit_rms,
            "taus": self.taus,
            "estimates": self.estimates,
            "tail_max": self.tail_max,
            "seed": self.seed,
            "provenance": "empirical",
        }


def classify_stability(
    F: EvolutionFamily,
    grid: Grid,
    sampler: Optional[Sampler] = None,
    tol: float = 1e-3,
    n_tau: int = 12,
    n_pairs: int = 16,
    seed: int = 0,
    fit_tol: float = 0.05,
    growth_tol: float = 1e-3,
    tail_fraction: float = 0.25,
) -> StabilityClassification:
    """Empirical u.e.s. / u.s. / a.s. classification from sampled seminorms.

    The (t - s) samples are geometric between ``dt`` and ``0.75 T``.
    u.e.s. needs a decaying log-linear fit with RMS residual <= ``fit_tol``;
    u.s. needs the long-horizon half of the estimates not to exceed the
    short-horizon half by more than ``growth_tol`` (relative); a.s. needs
    every sampled trajectory tail below ``tol``.
    """
    rng = np.random.default_rng(seed)
    span = grid.times[-1] - grid.t0
    taus = np.geomspace(grid.dt, 0.75 * span, n_tau)
    s = grid.t0 + rng.uniform(0.0, 1.0, n_tau) * (span - taus)
    ests = lip_estimates(F, s + taus, s, sampler, n_pairs, seed)
    g = np.array([e.value for e in ests])

    fit = fit_exponential(taus, g)
    ues = fit.nu > growth_tol and fit.rms <= fit_tol
    half = n_tau // 2
    us = bool(ues or g[half:].max() <= (1 + growth_tol) * g[:half].max())
    tails = trajectory_tail_max(F, grid, sampler, tail_fraction, seed=seed)
    as_ = bool(np.all(tails <= tol))
    return StabilityClassification(
        uniformly_exponentially_stable=bool(ues),
        uniformly_stable=us,
        asymptotically_stable=as_,
        N=fit.N if ues else None,
        nu=fit.nu if ues else None,
        N_uniform=float(g.max()),
        fit_rms=fit.rms,
        taus=[float(v) for v in taus],
        estimates=[float(v) for v in g],
        tail_max=[float(v) for v in tails],
        seed=seed,
    )
