"""Green's operator and sampled admissibility constants."""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence, Union

import numpy as np
from scipy.signal import lfilter

from .evolution import EstimationError, EvolutionFamily, Sampler, lip_estimates, trajectory, uniform_sampler
from .lp_spaces import (
    INF,
    Grid,
    SampledSignal,
    as_exponent,
    band_limited,
    exponent_str,
    lp_norm,
    quadrature_allowance,
    truncate,
)
from .stability import uniform_bound_constant

# family evaluations per block in the direct (nonlinear) Green sum
_BLOCK = 400_000


def _grid_of(f: SampledSignal) -> Grid:
    return Grid(T=f.dt * (f.n - 1) if f.n > 1 else f.dt, dt=f.dt, t0=f.t0)


def _green_diagonal(values: np.ndarray, rates: np.ndarray, dt: float) -> np.ndarray:
    """Trapezoid convolution with diag(e^{-r (t-s)}) along axis 0 via a first-order filter."""
    out = np.empty_like(values)
    for k, r in enumerate(rates):
        a = math.exp(-r * dt)
        b = [dt / 2, a * dt / 2]
        col = values[:, k]
        y, _ = lfilter(b, [1.0, -a], col, zi=[-b[0] * col[0]])
        y[0] = 0.0
        out[:, k] = y
    return out


def green_apply(F: EvolutionFamily, f: SampledSignal, grid: Optional[Grid] = None) -> SampledSignal:
    """(G f)(t_i) = trapezoid over s_j <= t_i of F(t_i, s_j, f(s_j)).

    The signal is taken to start at time 0 (the Green's operator integrates
    from the origin); ``grid`` defaults to the signal's own grid.
    """
    if grid is not None and (grid.n != f.n or abs(grid.dt - f.dt) > 1e-12 * f.dt):
        raise ValueError("signal does not live on the supplied grid")
    states = f.states()
    if states.shape[1] != F.dim:
        raise ValueError("signal dimension does not match the family")
    n, d = states.shape
    times = f.times
    if F.diagonal_rates is not None:
        out = _green_diagonal(states, F.diagonal_rates, f.dt)
        return f.with_values(out)

    out = np.zeros((n, d))
    rows_per_block = max(1, _BLOCK // max(n, 1))
    for i0 in range(1, n, rows_per_block):
        rows = np.arange(i0, min(n, i0 + rows_per_block))
        ii = np.concatenate([np.full(i + 1, i) for i in rows])
        jj = np.concatenate([np.arange(i + 1) for i in rows])
        vals = F.batch(times[ii], times[jj], states[jj])
        w = np.full(ii.size, f.dt)
        w[jj == 0] = f.dt / 2
        w[jj == ii] = f.dt / 2
        np.add.at(out, ii, w[:, None] * vals)
    return f.with_values(out)


def truncated_trajectories(
    F: EvolutionFamily,
    grid: Grid,
    spec: Union[int, Sequence[tuple]],
    seed: int = 0,
    sampler: Optional[Sampler] = None,
) -> list[SampledSignal]:
    """Truncated trajectories chi_[a,b] u_{t0,x}.

    ``spec`` is either a list of ``(x, t0, a, b)`` tuples or a count of
    random members drawn with ``seed``.
    """
    if isinstance(spec, int):
        rng = np.random.default_rng(seed)
        spec = [_random_ax_tuple(F, grid, rng, sampler) for _ in range(spec)]
    out = []
    for x, t0, a, b in spec:
        if a < 0 or a > b:
            truncate(grid.zeros(), a, b)  # raises InvalidIntervalError
        path = trajectory(F, t0, x, grid).path
        out.append(truncate(path, a, b))
    return out


def _random_ax_tuple(F, grid, rng, sampler):
    sample = sampler or uniform_sampler(F.dim)
    T0, T1 = grid.t0, grid.times[-1]
    t0 = grid.t0 + grid.dt * int(rng.integers(0, max(1, (grid.n - 1) // 2)))
    a = rng.uniform(T0, T1)
    b = rng.uniform(a, T1)
    x = sample(rng, 1)[0]
    return (x if F.dim > 1 else float(x[0]), float(t0), float(a), float(b))


def _test_pair(F: EvolutionFamily, grid: Grid, rng: np.random.Generator, kind: str, sampler):
    """Two test signals: an truncated-trajectory pair sharing (t0, a, b), or two band-limited signals."""
    dim = None if F.dim == 1 else F.dim
    if kind == "truncated":
        sample = sampler or uniform_sampler(F.dim)
        x1, t0, a, b = _random_ax_tuple(F, grid, rng, sampler)
        x2 = sample(rng, 1)[0]
        x2 = x2 if F.dim > 1 else float(x2[0])
        f, g = truncated_trajectories(F, grid, [(x1, t0, a, b), (x2, t0, a, b)])
        return f, g
    max_freq = rng.uniform(0.0, 2.0)
    f = band_limited(grid, rng, dim, max_freq=max_freq)
    g = band_limited(grid, rng, dim, max_freq=max_freq)
    return f, g


@dataclass
class AdmissibilityReport:
    p: float
    q: float
    K_estimate: float
    n_test_pairs: int
    n_valid_pairs: int
    witness_pair: tuple[SampledSignal, SampledSignal]
    witness_index: int
    witness_kind: str
    seed: int
    T: float
    dt: float
    ratios: list[float] = field(default_factory=list)
    kinds: list[str] = field(default_factory=list)
    psi_witness: Optional[SampledSignal] = None

    def estimate_quality(self) -> dict:
        ax = [r for r, k in zip(self.ratios, self.kinds) if k == "truncated" and not math.isnan(r)]
        rnd = [r for r, k in zip(self.ratios, self.kinds) if k == "random" and not math.isnan(r)]
        return {
            "label": "estimate (lower bound)",
            "max_ratio_truncated": max(ax) if ax else None,
            "max_ratio_random": max(rnd) if rnd else None,
            "n_truncated": len(ax),
            "n_random": len(rnd),
            "horizon_T": self.T,
        }

    def to_dict(self) -> dict:
        f, g = self.witness_pair
        return {
            "p": exponent_str(self.p),
            "q": exponent_str(self.q),
            "K_estimate": self.K_estimate,
            "n_test_pairs": self.n_test_pairs,
            "n_valid_pairs": self.n_valid_pairs,
            "witness_pair": {"f": f.to_dict(), "g": g.to_dict(), "index": self.witness_index, "kind": self.witness_kind},
            "psi_witness": None if self.psi_witness is None else self.psi_witness.to_dict(),
            "seed": self.seed,
            "T": self.T,
            "dt": self.dt,
            "ratios": [None if math.isnan(r) else r for r in self.ratios],
            "estimate_quality": self.estimate_quality(),
        }


def _pair_ratio(F, grid, p, q, seed, k, sampler):
    rng = np.random.default_rng([seed, k])
    kind = "truncated" if k % 2 == 0 else "random"
    f, g = _test_pair(F, grid, rng, kind, sampler)
    den = lp_norm(f - g, p)
    if den <= 0:
        return kind, f, g, math.nan
    num = lp_norm(green_apply(F, f) - green_apply(F, g), q)
    return kind, f, g, num / den


def estimate_admissibility(
    F: EvolutionFamily,
    p,
    q,
    grid: Grid,
    n_test_pairs: int = 64,
    seed: int = 0,
    sampler: Optional[Sampler] = None,
    workers: int = 1,
    psi: Optional[SampledSignal] = None,
) -> AdmissibilityReport:
    """Lower bound on the Lipschitz constant of G: L^p -> L^q over a mixed test set.

    Even-indexed pairs are truncated trajectories sharing (t0, a, b), odd-indexed pairs
    are random band-limited signals.  Pair k is drawn from its own seeded
    stream, so the estimate for n pairs is a prefix of the one for n+1.
    """
    if n_test_pairs < 1:
        raise ValueError("n_test_pairs must be >= 1")
    p, q = as_exponent(p), as_exponent(q)
    run = lambda k: _pair_ratio(F, grid, p, q, seed, k, sampler)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, range(n_test_pairs)))
    else:
        results = [run(k) for k in range(n_test_pairs)]
    ratios = [r[3] for r in results]
    valid = [k for k, r in enumerate(ratios) if not math.isnan(r)]
    if not valid:
        raise EstimationError("all sampled test pairs coincide")
    best = max(valid, key=lambda k: ratios[k])
    kind, f, g, _ = results[best]
    return AdmissibilityReport(
        p=p,
        q=q,
        K_estimate=float(ratios[best]),
        n_test_pairs=n_test_pairs,
        n_valid_pairs=len(valid),
        witness_pair=(f, g),
        witness_index=best,
        witness_kind=kind,
        seed=seed,
        T=float(grid.times[-1] - grid.t0),
        dt=grid.dt,
        ratios=[float(r) for r in ratios],
        kinds=[r[0] for r in results],
        psi_witness=psi,
    )


# ---------------------------------------------------------------------------
# (L^1, L^inf) characterization


@dataclass
class CharacterizationReport:
    psi_bounded: bool
    uniformly_bounded: bool
    bound_holds: bool
    necessity_holds: bool
    N: float
    N_measured: float
    G_psi_sup: float
    K_1_inf: float
    C_from_K: float
    witness_tau: Optional[float]
    bound_violations: int
    taus: list[float]
    estimates: list[float]

    @property
    def passed(self) -> bool:
        return self.psi_bounded and self.uniformly_bounded and self.bound_holds

    def to_dict(self) -> dict:
        return {
            "i_psi_bounded": self.psi_bounded,
            "ii_uniformly_bounded": self.uniformly_bounded,
            "bound_holds": self.bound_holds,
            "necessity_holds": self.necessity_holds,
            "passed": self.passed,
            "N": self.N,
            "N_measured": self.N_measured,
            "G_psi_sup": self.G_psi_sup,
            "K_1_inf": self.K_1_inf,
            "C_from_K": self.C_from_K,
            "witness_tau": self.witness_tau,
            "bound_violations": self.bound_violations,
            "taus": self.taus,
            "estimates": self.estimates,
        }


def _non_growing(values: np.ndarray, growth_tol: float, atol: float = 1e-12) -> bool:
    half = len(values) // 2
    return bool(values[half:].max() <= (1 + growth_tol) * values[:half].max() + atol)


def check_l1_linf_characterization(
    F: EvolutionFamily,
    grid: Grid,
    sampler: Optional[Sampler] = None,
    psi: Optional[SampledSignal] = None,
    N: Optional[float] = None,
    n_test_pairs: int = 32,
    n_tau: int = 12,
    n_pairs: int = 16,
    seed: int = 0,
    growth_tol: float = 1e-3,
) -> CharacterizationReport:
    """Desk-scale check of: (L^1, L^inf) admissible <=> (i) G psi bounded for some psi in L^1
    and (ii) sup ||X(t,s)||_lip < inf.

    (ii) is judged from seminorm estimates at geometric (t - s) up to 0.9 T:
    the long-horizon half must not exceed the short-horizon half (or, if
    ``N`` is given, every estimate must be <= N).  The sufficiency estimate
    ||G f - G g||_inf <= N ||f - g||_1 is then checked on sampled pairs.
    """
    rng = np.random.default_rng(seed)
    span = grid.times[-1] - grid.t0
    taus = np.geomspace(grid.dt, 0.9 * span, n_tau)
    s = grid.t0 + rng.uniform(0.0, 1.0, n_tau) * (span - taus)
    g = np.array([e.value for e in lip_estimates(F, s + taus, s, sampler, n_pairs, seed)])
    N_measured = float(g.max())
    if N is None:
        ii = _non_growing(g, growth_tol)
        N_use = N_measured
    else:
        ii = bool(np.all(g <= N + 1e-12))
        N_use = float(N)
    witness_tau = None if ii else float(taus[int(np.argmax(g))])

    psi = psi if psi is not None else grid.zeros(None if F.dim == 1 else F.dim)
    Gpsi = green_apply(F, psi).pointwise_norm()
    psi_ok = bool(np.all(np.isfinite(Gpsi))) and _non_growing(Gpsi, growth_tol)

    adm = estimate_admissibility(F, 1, INF, grid, n_test_pairs, seed, sampler, psi=psi)
    violations = 0
    for k, r in enumerate(adm.ratios):
        if math.isnan(r):
            continue
        if r > N_use + quadrature_allowance(grid.dt, span):
            violations += 1
    C = uniform_bound_constant(adm.K_estimate, F.M, F.omega)
    return CharacterizationReport(
        psi_bounded=psi_ok,
        uniformly_bounded=ii,
        bound_holds=violations == 0,
        necessity_holds=N_measured <= C + 1e-12,
        N=N_use,
        N_measured=N_measured,
        G_psi_sup=float(Gpsi.max()),
        K_1_inf=adm.K_estimate,
        C_from_K=C,
        witness_tau=witness_tau,
        bound_violations=violations,
        taus=[float(v) for v in taus],
        estimates=[float(v) for v in g],
    )
