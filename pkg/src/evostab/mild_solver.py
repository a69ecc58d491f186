"""Mild solutions of x' = A(t)x + f(t, x) by Picard iteration.

The variation-of-constants equation

    x(t) = U(t, s) x + int_s^t U(t, tau) f(tau, x(tau)) dtau

is discretised with the trapezoid rule on a uniform grid and solved as a
fixed point over the whole path.  For a linear family the trapezoid sum
obeys

    S_i = U(t_i, t_{i-1}) (S_{i-1} + h/2 f_{i-1}) + h/2 f_i,

so one Picard sweep costs O(n) family evaluations instead of O(n^2).
Long horizons are solved in chunks of length ``cfg.chunk`` and chained.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional

import numpy as np
from scipy.signal import lfilter

from .evolution import EPS_OMEGA, EvolutionFamily, Sampler, uniform_sampler
from .lp_spaces import SampledSignal


class ConvergenceError(RuntimeError):
    """Picard iteration failed; ``residual`` holds the last sup-norm update."""

    def __init__(self, message: str, residual: float, iterations: int):
        super().__init__(f"{message} (residual={residual:.3e}, iterations={iterations})")
        self.residual = residual
        self.iterations = iterations


@dataclass(frozen=True, eq=False)
class Nonlinearity:
    """Batched f(t, x): ``t`` of shape (m,), ``x`` of shape (m, d) -> (m, d)."""

    evaluate: Callable[[np.ndarray, np.ndarray], np.ndarray]
    lipschitz_L: float
    vanishes_at_zero: bool = True
    dim: int = 1
    name: str = "f"

    def __post_init__(self) -> None:
        if self.lipschitz_L < 0:
            raise ValueError("Lipschitz constant must be nonnegative")

    def batch(self, t, x) -> np.ndarray:
        x = np.asarray(x, dtype=float).reshape(-1, self.dim)
        t = np.broadcast_to(np.asarray(t, dtype=float).reshape(-1), (x.shape[0],))
        return np.asarray(self.evaluate(t, x), dtype=float).reshape(x.shape)

    def __call__(self, t: float, x):
        xa = np.asarray(x, dtype=float)
        out = self.batch([t], xa.reshape(1, self.dim))[0]
        return float(out[0]) if xa.ndim == 0 else out


def zero_nonlinearity(dim: int = 1) -> Nonlinearity:
    return Nonlinearity(lambda t, x: np.zeros_like(x), 0.0, True, dim, "zero")


def linear_nonlinearity(lam: float, dim: int = 1) -> Nonlinearity:
    """f(t, x) = lam * x."""
    return Nonlinearity(lambda t, x: lam * x, abs(lam), True, dim, f"{lam:g}*x")


def forcing(g: Callable[[np.ndarray], np.ndarray], dim: int = 1, name: str = "forcing") -> Nonlinearity:
    """State-independent f(t, x) = g(t) (L = 0, does not vanish at zero)."""

    def evaluate(t, x):
        return np.broadcast_to(np.asarray(g(t), dtype=float).reshape(-1, 1 if dim == 1 else dim), x.shape).copy()

    return Nonlinearity(evaluate, 0.0, False, dim, name)


@dataclass(frozen=True)
class MildSolveConfig:
    dt: float = 0.01
    max_picard_iters: int = 200
    fixed_point_tol: float = 1e-12
    chunk: float = 1.0
    # cap on batch*steps*dim per block, keeps path arrays small
    block_elems: int = 2_000_000

    def __post_init__(self) -> None:
        if not (self.dt > 0 and self.max_picard_iters > 0 and self.fixed_point_tol > 0 and self.chunk > 0):
            raise ValueError("MildSolveConfig fields must be positive")


@dataclass
class SolveReport:
    iterations: list[int] = field(default_factory=list)
    residual: float = 0.0
    history: list[list[float]] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "iterations": self.iterations,
            "total_iterations": int(sum(self.iterations)),
            "residual": self.residual,
        }


def _propagator(U: EvolutionFamily, h: np.ndarray):
    """Return step(t_new, t_old, w) applying U(t_new, t_old)."""
    if U.diagonal_rates is not None:
        factor = np.exp(-np.outer(h, U.diagonal_rates))
        return lambda t_new, t_old, w: factor * w
    return lambda t_new, t_old, w: U.batch(t_new, t_old, w)


def _diagonal_sweep(factor: np.ndarray, z: np.ndarray, fv: np.ndarray) -> np.ndarray:
    """Recursion w_i = a (w_{i-1} + fv_{i-1}) + fv_i, w_0 = z, as a first-order filter per mode."""
    out = np.empty_like(fv)
    for k, a in enumerate(factor):
        col = np.ascontiguousarray(fv[:, :, k].T)
        y, _ = lfilter([1.0, a], [1.0, -a], col, axis=-1, zi=(z[:, k] - col[:, 0])[:, None])
        out[:, :, k] = y.T
    return out


def _solve_block(
    U: EvolutionFamily,
    f: Nonlinearity,
    s: np.ndarray,
    x: np.ndarray,
    tau: np.ndarray,
    n: int,
    cfg: MildSolveConfig,
    report: SolveReport,
    keep_path: bool,
):
    B, d = x.shape
    h = tau / n
    step = _propagator(U, h)
    chunk_steps = max(1, int(round(cfg.chunk / cfg.dt)))
    hh = (h / 2)[:, None]
    common_factor = None
    if U.diagonal_rates is not None and np.ptp(h) == 0:
        common_factor = np.exp(-U.diagonal_rates * h[0])
    z = x.copy()
    path = [z[None]] if keep_path else None
    # time-major layout (m+1, B, d) keeps per-step slices contiguous
    for c0 in range(0, n, chunk_steps):
        m = min(chunk_steps, n - c0)
        t = s[None, :] + np.arange(c0, c0 + m + 1)[:, None] * h[None, :]
        history: list[float] = []
        expanding = 0
        if f.lipschitz_L == 0:
            # state-independent f: the Picard map is constant, one sweep is exact
            X = np.broadcast_to(z, (m + 1, B, d))
            max_iters = 1
        else:
            X = U.batch(t.ravel(), np.tile(t[0], m + 1), np.tile(z, (m + 1, 1))).reshape(m + 1, B, d)
            max_iters = cfg.max_picard_iters
        for it in range(1, max_iters + 1):
            fv = hh[None] * f.batch(t.ravel(), X.reshape(-1, d)).reshape(m + 1, B, d)
            if common_factor is not None:
                new = _diagonal_sweep(common_factor, z, fv)
            else:
                new = np.empty_like(X)
                new[0] = z
                w = z
                for i in range(1, m + 1):
                    w = step(t[i], t[i - 1], w + fv[i - 1]) + fv[i]
                    new[i] = w
            change = 0.0 if max_iters == 1 else float(np.abs(new - X).max())
            X = new
            history.append(change)
            if change <= cfg.fixed_point_tol:
                break
            if len(history) > 1 and change > history[-2]:
                expanding += 1
                if expanding >= 3:
                    raise ConvergenceError(
                        "Picard map expanding for 3 consecutive iterations; shrink cfg.chunk", change, it
                    )
            else:
                expanding = 0
        else:
            raise ConvergenceError("Picard iteration did not converge", history[-1], max_iters)
        report.iterations.append(len(history))
        report.history.append(history)
        report.residual = max(report.residual, history[-1])
        z = X[m]
        if keep_path:
            path.append(X[1:])
    return z, (np.concatenate(path, axis=0).transpose(1, 0, 2) if keep_path else None)


def solve_batch(
    U: EvolutionFamily,
    f: Nonlinearity,
    s,
    x,
    tau,
    cfg: MildSolveConfig,
    report: Optional[SolveReport] = None,
) -> np.ndarray:
    """X(s_k + tau_k, s_k) x_k for a batch; each solve uses ceil(max tau / dt) steps."""
    if U.kind != "linear":
        raise ValueError("the linear part U must be a linear evolution family")
    x = np.asarray(x, dtype=float).reshape(-1, U.dim)
    B = x.shape[0]
    s = np.broadcast_to(np.asarray(s, dtype=float).reshape(-1), (B,)).astype(float)
    tau = np.broadcast_to(np.asarray(tau, dtype=float).reshape(-1), (B,)).astype(float)
    if np.any(tau < -1e-12):
        raise ValueError("need t >= s")
    tau = np.maximum(tau, 0.0)
    report = report if report is not None else SolveReport()
    out = np.empty_like(x)
    if B == 0:
        return out
    order = np.argsort(tau, kind="stable")
    # bucket by step count so short solves do not pay for long ones
    steps = np.maximum(1, np.ceil(tau[order] / cfg.dt - 1e-9).astype(int))
    start = 0
    while start < B:
        n = steps[start]
        stop = max(int(np.searchsorted(steps, 2 * n, side="left")), start + 1)
        n = int(steps[stop - 1])
        per = max(1, cfg.block_elems // (min(n, int(round(cfg.chunk / cfg.dt)) + 1) * U.dim))
        for b0 in range(start, stop, per):
            idx = order[b0 : min(stop, b0 + per)]
            z, _ = _solve_block(U, f, s[idx], x[idx], tau[idx], n, cfg, report, False)
            out[idx] = z
        start = stop
    return out


def solve_mild_with_report(
    U: EvolutionFamily,
    f: Nonlinearity,
    s: float,
    x,
    horizon: float,
    cfg: MildSolveConfig,
) -> tuple[SampledSignal, SolveReport]:
    if U.kind != "linear":
        raise ValueError("the linear part U must be a linear evolution family")
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    xa = np.asarray(x, dtype=float)
    n = max(1, int(round(horizon / cfg.dt)))
    report = SolveReport()
    _, path = _solve_block(
        U, f, np.array([float(s)]), xa.reshape(1, U.dim), np.array([float(horizon)]), n, cfg, report, True
    )
    vals = path[0]
    if xa.ndim == 0 and U.dim == 1:
        vals = vals[:, 0]
    return SampledSignal(float(s), horizon / n, vals), report


def solve_mild(U: EvolutionFamily, f: Nonlinearity, s: float, x, horizon: float, cfg: MildSolveConfig) -> SampledSignal:
    """Path of the mild solution on [s, s + horizon]; start iterate is U(t, s) x."""
    return solve_mild_with_report(U, f, s, x, horizon, cfg)[0]


@dataclass(frozen=True, eq=False)
class MildFamily(EvolutionFamily):
    """Nonlinear family generated by a linear family U and a nonlinearity f."""

    U: Optional[EvolutionFamily] = None
    f: Optional[Nonlinearity] = None
    cfg: Optional[MildSolveConfig] = None


def generate_family(U: EvolutionFamily, f: Nonlinearity, cfg: MildSolveConfig) -> MildFamily:
    """Evolution family X(t,s)x := mild solution at t started from x at s.

    Declared growth follows the Gronwall bound: (K, omega_U + K L) with
    omega_U forced positive.
    """
    if U.kind != "linear":
        raise ValueError("the linear part U must be a linear evolution family")
    if f.dim != U.dim:
        raise ValueError("U and f act on different state dimensions")
    K = U.M
    omega = max(U.omega, EPS_OMEGA)

    def evaluate(t, s, x):
        return solve_batch(U, f, s, x, t - s, cfg)

    return MildFamily(
        evaluate,
        K,
        omega + K * f.lipschitz_L,
        "nonlinear",
        U.dim,
        f"mild[{U.name} + {f.name}]",
        U=U,
        f=f,
        cfg=cfg,
    )


class GronwallCheck(NamedTuple):
    lhs: np.ndarray
    rhs: np.ndarray
    holds: bool
    n_violations: int


def sample_tuples(dim: int, T: float, n: int, seed: int = 0, sampler: Optional[Sampler] = None):
    """Random (t, s, x, y) with 0 <= s <= t <= T."""
    rng = np.random.default_rng(seed)
    a = rng.uniform(0.0, T, size=(n, 2))
    s, t = a.min(axis=1), a.max(axis=1)
    sample = sampler or uniform_sampler(dim)
    return t, s, sample(rng, n), sample(rng, n)


def gronwall_bound_check(
    U: EvolutionFamily,
    f: Nonlinearity,
    generated: EvolutionFamily,
    t,
    s,
    x,
    y,
    tol: float = 1e-9,
) -> GronwallCheck:
    """||X(t,s)x - X(t,s)y|| <= K e^{(omega + K L)(t-s)} ||x - y|| on sampled tuples."""
    t = np.asarray(t, dtype=float).reshape(-1)
    s = np.asarray(s, dtype=float).reshape(-1)
    x = np.asarray(x, dtype=float).reshape(t.size, -1)
    y = np.asarray(y, dtype=float).reshape(t.size, -1)
    K = U.M
    omega = max(U.omega, EPS_OMEGA)
    out = generated.batch(np.concatenate([t, t]), np.concatenate([s, s]), np.concatenate([x, y]))
    lhs = np.linalg.norm(out[: t.size] - out[t.size :], axis=1)
    rhs = K * np.exp((omega + K * f.lipschitz_L) * (t - s)) * np.linalg.norm(x - y, axis=1)
    dt = getattr(getattr(generated, "cfg", None), "dt", 0.0)
    allowance = tol + dt * dt * np.maximum(t - s, 1.0) * rhs
    bad = lhs > rhs + allowance
    return GronwallCheck(lhs, rhs, not bool(bad.any()), int(bad.sum()))


def order_check(errors_coarse: float, errors_fine: float) -> float:
    """Error ratio when dt halves (≈ 4 for a second-order scheme)."""
    return errors_coarse / errors_fine if errors_fine > 0 else math.inf


def solve_paths(
    U: EvolutionFamily,
    f: Nonlinearity,
    s: float,
    xs,
    horizon: float,
    cfg: MildSolveConfig,
) -> tuple[np.ndarray, np.ndarray]:
    """Batched mild paths from a common start ``s``: returns (times, paths[B, n+1, d])."""
    xs = np.asarray(xs, dtype=float).reshape(-1, U.dim)
    n = max(1, int(round(horizon / cfg.dt)))
    B = xs.shape[0]
    report = SolveReport()
    _, path = _solve_block(U, f, np.full(B, float(s)), xs, np.full(B, float(horizon)), n, cfg, report, True)
    return s + (horizon / n) * np.arange(n + 1), path


def integral_residual(U: EvolutionFamily, f: Nonlinearity, x0, path: SampledSignal) -> float:
    """Sup-norm defect of ``path`` in the discrete variation-of-constants equation from x0 at path.t0."""
    states = path.states()
    n = states.shape[0]
    t = path.times
    h = np.array([path.dt])
    step = _propagator(U, h)
    fv = f.batch(t, states)
    w = np.asarray(x0, dtype=float).reshape(1, U.dim)
    worst = float(np.abs(w[0] - states[0]).max())
    for i in range(1, n):
        w = step(t[i : i + 1], t[i - 1 : i], w + path.dt / 2 * fv[i - 1 : i]) + path.dt / 2 * fv[i : i + 1]
        worst = max(worst, float(np.abs(w[0] - states[i]).max()))
    return worst
