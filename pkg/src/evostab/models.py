"""Concrete models: the scalar flow u' = h(u), the Neumann heat equation with
a reaction term in a cosine basis, and evolution semigroups on signals.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.fft import dct, idct

from .evolution import (
    EPS_OMEGA,
    EvolutionFamily,
    Sampler,
    diagonal_exponential_family,
    exponential_family,
    fit_exponential,
    lip_estimates,
    uniform_sampler,
)
from .lp_spaces import Grid, SampledSignal, as_exponent, lp_norm
from .mild_solver import (
    MildFamily,
    MildSolveConfig,
    Nonlinearity,
    forcing,
    generate_family,
    integral_residual,
    solve_paths,
)


class HypothesisViolation(RuntimeError):
    """A stability hypothesis fails for the supplied family."""


class NonContractiveError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# u' = h(u) with h valued in [1/2, 1]


def h_constant(c: float) -> Callable[[np.ndarray], np.ndarray]:
    if not 0.5 <= c <= 1.0:
        raise ValueError("constant h must lie in [1/2, 1]")
    return lambda u: np.full_like(np.asarray(u, dtype=float), c)


def h_affine_clip(a: float = 0.75, b: float = 0.1) -> Callable[[np.ndarray], np.ndarray]:
    return lambda u: np.clip(a + b * np.asarray(u, dtype=float), 0.5, 1.0)


def h_sin_clip(amp: float = 0.25, freq: float = 1.0) -> Callable[[np.ndarray], np.ndarray]:
    return lambda u: np.clip(0.75 + amp * np.sin(freq * np.asarray(u, dtype=float)), 0.5, 1.0)


SPEED_PRESETS = {
    "constant": h_constant,
    "affine-clip": h_affine_clip,
    "sin-clip": h_sin_clip,
}


class TravelTimeTable:
    """Tabulated H(u) = int_0^u ds / h(s) and its inverse.

    H is the piecewise-linear interpolant of a cumulative-trapezoid table; it
    is strictly increasing with every slope in [1, 2], and the inverse is the
    exact inverse of that interpolant.  Queries outside the table span are
    served by integrating further out on demand (nothing is cached).
    """

    def __init__(self, h: Callable[[np.ndarray], np.ndarray], span: float = 64.0, step: float = 1e-3,
                 inversion_tol: float = 1e-12):
        self.h = h
        self.step = step
        self.inversion_tol = inversion_tol
        self._u, self._H = self._table(-span, span)

    def _table(self, lo: float, hi: float) -> tuple[np.ndarray, np.ndarray]:
        n_right = max(1, int(math.ceil(max(hi, 0.0) / self.step)))
        n_left = max(1, int(math.ceil(max(-lo, 0.0) / self.step)))
        u = self.step * np.arange(-n_left, n_right + 1)
        inv = 1.0 / np.asarray(self.h(u), dtype=float)
        if np.any(inv < 1.0 - 1e-12) or np.any(inv > 2.0 + 1e-12):
            raise ValueError("h must take values in [1/2, 1]")
        seg = 0.5 * self.step * (inv[1:] + inv[:-1])
        # accumulate outward from u = 0 so H stays accurate near the origin
        right = np.cumsum(seg[n_left:])
        left = -np.cumsum(seg[:n_left][::-1])[::-1]
        return u, np.concatenate([left, [0.0], right])

    def _tables_for(self, lo: float, hi: float):
        if lo >= self._u[0] and hi <= self._u[-1]:
            return self._u, self._H
        return self._table(min(lo, self._u[0]) - self.step, max(hi, self._u[-1]) + self.step)

    def travel_time(self, u):
        u = np.asarray(u, dtype=float)
        if u.size == 0:
            return u
        tu, tH = self._tables_for(float(u.min()), float(u.max()))
        return np.interp(u, tu, tH)

    def position(self, y):
        y = np.asarray(y, dtype=float)
        if y.size == 0:
            return y
        tu, tH = self._u, self._H
        lo, hi = float(y.min()), float(y.max())
        if lo < tH[0] or hi > tH[-1]:
            # slope >= 1 bounds how far out the preimage can lie
            tu, tH = self._tables_for(tu[0] - max(0.0, tH[0] - lo), tu[-1] + max(0.0, hi - tH[-1]))
        return np.interp(y, tH, tu)

    def check_invariants(self, n: int = 2001) -> bool:
        u = np.linspace(self._u[0], self._u[-1], n)
        hv = np.asarray(self.h(u), dtype=float)
        slopes = np.diff(self._H) / np.diff(self._u)
        return bool(np.all((hv >= 0.5) & (hv <= 1.0)) and np.all((slopes >= 1 - 1e-9) & (slopes <= 2 + 1e-9)))


def scalar_flow_family(field: TravelTimeTable) -> EvolutionFamily:
    """X(t,s)x = H^{-1}(t - s + H(x)).

    The local stretch is h(X(t,s)x) / h(x), so ||X(t,s)||_lip lies in [1/2, 2]
    and drops to <= 1 only when h is non-increasing.
    """

    def evaluate(t, s, x):
        return field.position((t - s) + field.travel_time(x[:, 0]))[:, None]

    return EvolutionFamily(evaluate, 2.0, EPS_OMEGA, "nonlinear", 1, "scalar-flow")



def sandwich_ratios(F: EvolutionFamily, n_samples: int = 500, seed: int = 0, T: float = 10.0,
                    x_range: float = 5.0) -> np.ndarray:
    """|X(t,s)x - X(t,s)y| / |x - y| over random (t, s, x, y) with 0 <= s <= t <= T."""
    rng = np.random.default_rng(seed)
    a = rng.uniform(0.0, T, (n_samples, 2))
    s, t = a.min(axis=1), a.max(axis=1)
    x = rng.uniform(-x_range, x_range, (n_samples, 1))
    y = rng.uniform(-x_range, x_range, (n_samples, 1))
    keep = np.abs(x - y)[:, 0] > 1e-6
    num = np.abs(F.batch(t, s, x) - F.batch(t, s, y))[:, 0]
    return num[keep] / np.abs(x - y)[keep, 0]

# ---------------------------------------------------------------------------
# Neumann heat equation with reaction, cosine spectral discretisation


@dataclass(frozen=True, eq=False)
class Reaction:
    """Pointwise reaction g(t, y) acting on collocation values."""

    fn: Callable[[np.ndarray, np.ndarray], np.ndarray]
    L: float
    vanishes_at_zero: bool = True
    name: str = "g"


def reaction_zero() -> Reaction:
    return Reaction(lambda t, y: np.zeros_like(y), 0.0, True, "zero")


def reaction_linear(lam: float = 1.0) -> Reaction:
    """g(t, y) = -lam y."""
    return Reaction(lambda t, y: -lam * y, abs(lam), True, f"-{lam:g}y")


def reaction_saturating(lam: float = 0.5, mu: float = 0.5) -> Reaction:
    """g(t, y) = -lam y - mu tanh(y); Lipschitz constant lam + mu."""
    return Reaction(lambda t, y: -lam * y - mu * np.tanh(y), abs(lam) + abs(mu), True, f"-{lam:g}y-{mu:g}tanh(y)")


REACTION_PRESETS = {
    "zero": reaction_zero,
    "linear": reaction_linear,
    "saturating": reaction_saturating,
}


@dataclass(frozen=True, eq=False)
class SpectralHeatModel:
    """u_t = u_xx + g(t, u) on (0, pi), u_x = 0 at the ends.

    States are coefficients in the orthonormal basis 1/sqrt(pi),
    sqrt(2/pi) cos(kx), so the Euclidean norm of a state is its L^2(0, pi)
    norm.  The reaction is applied at the n_modes DCT-II collocation points.
    """

    n_modes: int = 16
    g: Reaction = reaction_zero()

    def __post_init__(self) -> None:
        if self.n_modes < 1:
            raise ValueError("n_modes must be >= 1")

    @property
    def eigenvalues(self) -> np.ndarray:
        return -(np.arange(self.n_modes, dtype=float) ** 2)

    @property
    def collocation_points(self) -> np.ndarray:
        n = self.n_modes
        return math.pi * (np.arange(n) + 0.5) / n

    def to_values(self, coeffs) -> np.ndarray:
        c = np.asarray(coeffs, dtype=float)
        return math.sqrt(self.n_modes / math.pi) * idct(c, type=2, norm="ortho", axis=-1)

    def to_coeffs(self, values) -> np.ndarray:
        u = np.asarray(values, dtype=float)
        return math.sqrt(math.pi / self.n_modes) * dct(u, type=2, norm="ortho", axis=-1)

    def semigroup(self) -> EvolutionFamily:
        return diagonal_exponential_family(-self.eigenvalues, 1.0, EPS_OMEGA, name="heat-neumann")

    def nemytsky(self) -> Nonlinearity:
        g = self.g

        def evaluate(t, C):
            return self.to_coeffs(g.fn(t[:, None], self.to_values(C)))

        return Nonlinearity(evaluate, g.L, g.vanishes_at_zero, self.n_modes, f"nemytsky[{g.name}]")


def heat_semigroup_apply(model: SpectralHeatModel, t: float, coeffs) -> np.ndarray:
    """Multiply mode k by e^{-k^2 t}."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    return np.exp(model.eigenvalues * t) * np.asarray(coeffs, dtype=float)


def heat_mild_family(model: SpectralHeatModel, cfg: Optional[MildSolveConfig] = None) -> MildFamily:
    return generate_family(model.semigroup(), model.nemytsky(), cfg or MildSolveConfig())


# ---------------------------------------------------------------------------
# evolution semigroups on signals


@dataclass(frozen=True)
class EvolutionSemigroupState:
    r: float
    f: SampledSignal

    def __post_init__(self) -> None:
        r = as_exponent(self.r)
        if math.isinf(r):
            raise ValueError("evolution semigroups act on L^r with r finite")
        object.__setattr__(self, "r", r)

    def norm(self) -> float:
        return lp_norm(self.f, self.r)


def _shifted(f: SampledSignal, hstep: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(times >= h mask, t, f(t - h)) with linear interpolation between nodes."""
    t = f.times
    mask = t >= hstep - 1e-9 * f.dt
    src = t[mask] - hstep
    states = f.states()
    shifted = np.column_stack([np.interp(src, t, states[:, k], left=0.0, right=0.0) for k in range(states.shape[1])])
    return mask, t[mask], shifted


def _propagate(state: EvolutionSemigroupState, hstep: float, F: EvolutionFamily, fill_from_origin: bool):
    if hstep < 0:
        raise ValueError("hstep must be nonnegative")
    f = state.f
    if hstep == 0:
        return state
    mask, t, shifted = _shifted(f, hstep)
    out = np.zeros((f.n, F.dim))
    if t.size:
        out[mask] = F.batch(t, t - hstep, shifted)
    if fill_from_origin and F.kind == "nonlinear" and (~mask).any():
        early = f.times[~mask]
        out[~mask] = F.batch(early, np.zeros_like(early), np.zeros((early.size, F.dim)))
    return EvolutionSemigroupState(state.r, f.with_values(out.reshape(f.values.shape)))


def evolution_semigroup_T(state: EvolutionSemigroupState, hstep: float, U: EvolutionFamily) -> EvolutionSemigroupState:
    """[T^h f](t) = U(t, t-h) f(t-h) for t >= h, 0 before."""
    return _propagate(state, hstep, U, False)


def evolution_semigroup_S(state: EvolutionSemigroupState, hstep: float, F: EvolutionFamily) -> EvolutionSemigroupState:
    """[S(h) f](t) = X(t, t-h) f(t-h) for t >= h; X(t, 0) 0 for t < h.

    The early branch is the solution started at zero from the origin; it is
    identically zero when X(t, 0) 0 = 0 (e.g. linear families).
    """
    return _propagate(state, hstep, F, True)


# ---------------------------------------------------------------------------
# attracting mild solution


@dataclass
class FixedPointResult:
    phi: SampledSignal
    n0: int
    N: float
    alpha: float
    iterations: int
    diffs: list[float]
    residual: float
    zero_start_gap: float

    def to_dict(self) -> dict:
        return {
            "n0": self.n0,
            "N": self.N,
            "alpha": self.alpha,
            "iterations": self.iterations,
            "diffs": self.diffs,
            "residual": self.residual,
            "zero_start_gap": self.zero_start_gap,
        }


def fit_decay(F: EvolutionFamily, grid: Grid, n_tau: int = 6, n_pairs: int = 8, seed: int = 0,
              sampler: Optional[Sampler] = None, tau_max: Optional[float] = None) -> tuple[float, float]:
    """Empirical (N, alpha) from seminorm estimates of X(tau, 0)."""
    span = grid.times[-1] - grid.t0
    tau_max = tau_max or min(span, 4.0)
    taus = np.linspace(tau_max / n_tau, tau_max, n_tau)
    g = [e.value for e in lip_estimates(F, grid.t0 + taus, grid.t0, sampler, n_pairs, seed)]
    fit = fit_exponential(np.concatenate([[0.0], taus]), np.concatenate([[1.0], g]))
    return fit.N, fit.nu


def choose_n0(N: float, alpha: float, target: float = 0.5) -> int:
    """Smallest integer n0 >= 1 with N e^{-alpha n0} <= target."""
    if alpha <= 0:
        raise NonContractiveError("no decay rate: S(h) is not eventually contractive")
    return max(1, int(math.ceil(math.log(N / target) / alpha - 1e-12)))


def find_fixed_point(
    F: MildFamily,
    grid: Grid,
    n0: Optional[int] = None,
    r: float = 2.0,
    tol: float = 1e-10,
    max_iters: int = 200,
    N: Optional[float] = None,
    alpha: Optional[float] = None,
    start: Optional[SampledSignal] = None,
) -> FixedPointResult:
    """Fixed point of S(n0) on L^r(0, T) by iteration from ``start`` (default zero)."""
    if N is None or alpha is None:
        N_fit, a_fit = fit_decay(F, grid)
        N = N if N is not None else N_fit
        alpha = alpha if alpha is not None else a_fit
    if n0 is None:
        n0 = choose_n0(N, alpha)
    state = EvolutionSemigroupState(r, start if start is not None else grid.zeros(None if F.dim == 1 else F.dim))
    diffs: list[float] = []
    for it in range(1, max_iters + 1):
        nxt = evolution_semigroup_S(state, float(n0), F)
        diff = lp_norm(nxt.f - state.f, r)
        diffs.append(diff)
        state = nxt
        if diff <= tol:
            break
        if len(diffs) > 1 and diffs[-2] > 0 and diff >= diffs[-2]:
            raise NonContractiveError(f"S({n0}) not contracting: {diffs[-2]:.3e} -> {diff:.3e}")
    else:
        raise NonContractiveError(f"no convergence in {max_iters} iterations (last diff {diffs[-1]:.3e})")
    phi = state.f
    residual = float("nan")
    gap = float("nan")
    if isinstance(F, MildFamily) and F.U is not None:
        zero = np.zeros(F.dim)
        residual = integral_residual(F.U, F.f, zero, phi)
        _, paths = solve_paths(F.U, F.f, grid.t0, zero, grid.times[-1] - grid.t0, F.cfg)
        gap = float(np.abs(paths[0] - phi.states()).max())
    return FixedPointResult(phi, int(n0), float(N), float(alpha), it, diffs, residual, gap)


def attraction_check(
    F: MildFamily,
    phi: SampledSignal,
    N: float,
    alpha: float,
    xs,
    tol: float = 1e-9,
) -> tuple[bool, float]:
    """||X(t,0)x - phi(t)|| <= N e^{-alpha t} ||x|| along the grid for every x in ``xs``.

    Returns (holds, worst excess over the bound).
    """
    xs = np.asarray(xs, dtype=float).reshape(-1, F.dim)
    times, paths = solve_paths(F.U, F.f, phi.t0, xs, phi.t_end - phi.t0, F.cfg)
    dev = np.linalg.norm(paths - phi.states()[None, :, :], axis=2)
    bound = N * np.exp(-alpha * (times - phi.t0))[None, :] * np.linalg.norm(xs, axis=1)[:, None]
    excess = float((dev - bound).max())
    return excess <= tol, excess


def check_bounded_solutions(
    F: EvolutionFamily,
    N: float,
    grid: Grid,
    sampler: Optional[Sampler] = None,
    tol: float = 1e-9,
    n_samples: int = 50,
    seed: int = 0,
) -> bool:
    """Boundedness ||X(t,s)x|| <= N ||x|| on sampled (s, x, t); requires X(t,s)0 = 0."""
    rng = np.random.default_rng(seed)
    f = getattr(F, "f", None)
    if f is not None and not f.vanishes_at_zero:
        raise HypothesisViolation("nonlinearity does not vanish at zero (g(t,0) != 0)")
    a = rng.choice(grid.times, size=(n_samples, 2))
    s, t = a.min(axis=1), a.max(axis=1)
    zero_img = np.linalg.norm(F.batch(t, s, np.zeros((n_samples, F.dim))), axis=1)
    if zero_img.max() > tol:
        k = int(np.argmax(zero_img))
        raise HypothesisViolation(
            f"zero is not a solution: ||X({t[k]:g},{s[k]:g})0|| = {zero_img[k]:.3e}"
        )
    x = (sampler or uniform_sampler(F.dim))(rng, n_samples)
    vals = np.linalg.norm(F.batch(t, s, x), axis=1)
    return bool(np.all(vals <= N * np.linalg.norm(x, axis=1) + tol))


# ---------------------------------------------------------------------------
# model specs (config-driven construction)


def scalar_forced_model(g: Callable[[np.ndarray], np.ndarray], rate: float = 1.0,
                        cfg: Optional[MildSolveConfig] = None) -> MildFamily:
    """x' = -rate x + g(t) as a generated family."""
    return generate_family(exponential_family(rate), forcing(g), cfg or MildSolveConfig())


def build_family(spec: dict, cfg: Optional[MildSolveConfig] = None) -> EvolutionFamily:
    """Build a family from a model spec dictionary (see README for the schema)."""
    kind = spec.get("kind")
    if kind == "closed_form_linear":
        return exponential_family(float(spec.get("nu", 1.0)), int(spec.get("dim", 1)))
    if kind == "scalar_h":
        name = spec.get("h", "constant")
        params = dict(spec.get("h_params", {}))
        if name not in SPEED_PRESETS:
            raise ValueError(f"unknown h preset {name!r}; choose from {sorted(SPEED_PRESETS)}")
        if name == "constant" and not params:
            params = {"c": 1.0}
        return scalar_flow_family(TravelTimeTable(SPEED_PRESETS[name](**params)))
    if kind == "spectral_heat":
        name = spec.get("reaction", "zero")
        if name not in REACTION_PRESETS:
            raise ValueError(f"unknown reaction preset {name!r}; choose from {sorted(REACTION_PRESETS)}")
        model = SpectralHeatModel(int(spec.get("n_modes", 16)), REACTION_PRESETS[name](**dict(spec.get("reaction_params", {}))))
        return heat_mild_family(model, cfg)
    if kind == "scalar_forced":
        rate = float(spec.get("rate", 1.0))
        decay = float(spec.get("forcing_decay", 1.0))
        return scalar_forced_model(lambda t: np.exp(-decay * t), rate, cfg)
    raise ValueError(f"unknown model kind {kind!r}")
