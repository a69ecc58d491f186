"""Constructive stability machinery.

Uniform bounds from a window premise, exponential extraction from a
one-step contraction, admissibility-to-certificate pipeline, and the
exponential-kernel convolution estimates used for the converse direction.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, NamedTuple, Optional, Union

import numpy as np
from scipy.signal import lfilter

from .evolution import DomainError, EvolutionFamily, Sampler, trajectory_tail_max
from .lp_spaces import INF, Grid, SampledSignal, a_p, as_exponent, b_p, conjugate, exponent_str, lp_norm


class NonCertifiableError(ValueError):
    """Raised for exponent pairs whose gauge product stays bounded, i.e. (1, inf)."""


@dataclass
class StabilityCertificate:
    N: float
    nu: float
    provenance: str = "theoretical"
    audit: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not (self.nu > 0 and self.N > 0):
            raise ValueError("certificate needs N > 0 and nu > 0")
        if self.provenance not in ("empirical", "theoretical"):
            raise ValueError("provenance must be 'empirical' or 'theoretical'")

    def bound(self, tau):
        return self.N * np.exp(-self.nu * np.asarray(tau, dtype=float))

    def to_dict(self) -> dict:
        return {"N": self.N, "nu": self.nu, "provenance": self.provenance, "audit": self.audit}


# ---------------------------------------------------------------------------
# uniform bound from the window premise


class WindowBound(NamedTuple):
    premise_holds: bool
    bound: float
    sup_h: float
    holds: bool


def window_sup_bound(h: SampledSignal, m: float, q: float, tol: float = 1e-12) -> WindowBound:
    """Check h(r) <= m h(t) for grid r in [t, t+1]; bound = m h(0) + m ||h||_q."""
    if m < 1:
        raise ValueError("m must be >= 1")
    vals = np.asarray(h.values, dtype=float)
    if vals.ndim != 1:
        raise ValueError("h must be scalar")
    if np.any(vals < 0):
        raise DomainError("h must be nonnegative")
    w = int(math.floor((1.0 + h.dt / 2) / h.dt))
    padded = np.concatenate([vals, np.full(w, -np.inf)])
    win_max = np.lib.stride_tricks.sliding_window_view(padded, w + 1).max(axis=1)
    premise = bool(np.all(win_max <= m * vals + tol))
    bound = m * vals[0] + m * lp_norm(h, q)
    sup_h = float(vals.max())
    return WindowBound(premise, float(bound), sup_h, (not premise) or sup_h <= bound + tol)


# ---------------------------------------------------------------------------
# exponential extraction


def extract_exponential(M: float, d: float, c: float) -> tuple[float, float]:
    """(N, nu) with nu = -ln(c)/d and N = M e^{nu d} = M / c."""
    if not 0 < c < 1:
        raise DomainError("c must lie in (0, 1) for decay to be extractable")
    if not (d > 0 and M > 0):
        raise DomainError("need M > 0 and d > 0")
    nu = -math.log(c) / d
    return M * math.exp(nu * d), nu


Samples = Union[Mapping[tuple, float], np.ndarray, list]


def _as_rows(samples: Samples) -> np.ndarray:
    if isinstance(samples, Mapping):
        rows = [(t, t0, v) for (t, t0), v in samples.items()]
    else:
        rows = samples
    arr = np.asarray(rows, dtype=float)
    return arr.reshape(-1, 3)


def verify_certificate(samples: Samples, cert: StabilityCertificate, tol: float = 1e-12) -> bool:
    """Every sample g(t, t0) satisfies g <= N e^{-nu (t - t0)} + tol."""
    rows = _as_rows(samples)
    if rows.size == 0:
        return True
    t, t0, g = rows.T
    return bool(np.all(g <= cert.bound(t - t0) + tol))


def certificate_violations(samples: Samples, cert: StabilityCertificate, tol: float = 1e-12) -> np.ndarray:
    rows = _as_rows(samples)
    if rows.size == 0:
        return rows
    t, t0, g = rows.T
    return rows[g > cert.bound(t - t0) + tol]


def geometric_worst_case(M: float, d: float, c: float, t, t0) -> np.ndarray:
    """g(t, t0) = M c^floor((t - t0)/d)."""
    tau = np.asarray(t, dtype=float) - np.asarray(t0, dtype=float)
    return M * c ** np.floor(tau / d)


# ---------------------------------------------------------------------------
# admissibility -> certificate


def gauge_exponent(p: float, q: float) -> float:
    """e with a_p(d) b_q(d) = d^e."""
    p, q = as_exponent(p), as_exponent(q)
    return (1.0 - 1.0 / p) + (0.0 if math.isinf(q) else 1.0 / q)


def uniform_bound_constant(K: float, M: float, omega: float) -> float:
    """C = (K+1) M^2 e^{2 omega} + M e^{omega}, the uniform bound on ||X(t,s)||_lip."""
    return (K + 1.0) * M * M * math.exp(2 * omega) + M * math.exp(omega)


def certify_from_admissibility(K: float, M: float, omega: float, p: float, q: float) -> StabilityCertificate:
    """Theoretical (N, nu) from an (L^p, L^q) admissibility constant K.

    Steps: C bounds every ||X(t,s)||_lip; ||X(t0+d, t0)||_lip <= 2 K C^2 / (a_p(d) b_q(d))
    drops to 1/2 once d^e = 4 K C^2; then N = 2C, nu = ln 2 / d.
    """
    p, q = as_exponent(p), as_exponent(q)
    if p == 1.0 and math.isinf(q):
        raise NonCertifiableError("(p, q) = (1, inf) is excluded: a_1(d) b_inf(d) = 1 for all d")
    if not (K > 0 and M > 0 and omega > 0):
        raise ValueError("need K > 0, M > 0, omega > 0")
    e = gauge_exponent(p, q)
    if e <= 0:
        raise NonCertifiableError(f"gauge exponent e(p,q) = {e} is not positive")
    C = uniform_bound_constant(K, M, omega)
    d = (4.0 * K * C * C) ** (1.0 / e)
    c = 0.5
    N, nu = extract_exponential(C, d, c)
    audit = {
        "M": M,
        "omega": omega,
        "K": K,
        "C": C,
        "d": d,
        "c": c,
        "p": exponent_str(p),
        "q": exponent_str(q),
        "e(p,q)": e,
        "gauge_at_d": a_p(d, p) * b_p(d, q),
    }
    return StabilityCertificate(N, nu, "theoretical", audit)


def derivation_trace(cert: StabilityCertificate) -> list[str]:
    """Human-readable steps of the certificate chain."""
    a = cert.audit
    if cert.provenance != "theoretical" or "C" not in a:
        return [f"empirical certificate: N = {cert.N:.6g}, nu = {cert.nu:.6g}"]
    return [
        f"growth: M = {a['M']:.6g}, omega = {a['omega']:.6g}; admissibility (L^{a['p']}, L^{a['q']}) with K = {a['K']:.6g}",
        f"uniform bound: C = (K+1) M^2 e^(2 omega) + M e^omega = {a['C']:.6g}",
        f"decay step: ||X(t0+d, t0)||_lip <= 2 K C^2 / (a_p(d) b_q(d)), gauge exponent e = {a['e(p,q)']:.6g}",
        f"choose d = (4 K C^2)^(1/e) = {a['d']:.6g} so the step contracts by c = {a['c']}",
        f"extraction: nu = -ln(c)/d = {cert.nu:.6g}, N = C/c = {cert.N:.6g}",
    ]


# ---------------------------------------------------------------------------
# exponential convolution estimates


@dataclass(frozen=True)
class ConvolutionCase:
    p: float
    q: float
    nu: float
    alpha: float = 0.5

    def __post_init__(self) -> None:
        object.__setattr__(self, "p", as_exponent(self.p))
        object.__setattr__(self, "q", as_exponent(self.q))
        if not self.nu > 0:
            raise ValueError("nu must be positive")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")

    @property
    def beta(self) -> float:
        return 1.0 - self.alpha

    @property
    def p_conj(self) -> float:
        return conjugate(self.p)

    @property
    def case(self) -> int:
        if math.isinf(self.p):
            return 1
        if self.p == 1.0:
            return 2
        return 3

    @property
    def C(self) -> float:
        """(nu alpha p')^{1-p}, only meaningful for 1 < p < inf."""
        return (self.nu * self.alpha * self.p_conj) ** (1.0 - self.p)

    def constant(self) -> float:
        """K with ||H||_q <= K ||h||_p."""
        if self.p > self.q:
            raise DomainError("convolution bound needs p <= q")
        nu, p = self.nu, self.p
        if self.case == 1:
            return 1.0 / nu
        if self.case == 2:
            return max(1.0, 1.0 / nu)
        pc = self.p_conj
        sup_part = (nu * pc) ** (-1.0 / pc)
        lp_part = self.C ** (1.0 / p) * (nu * self.beta * p) ** (-1.0 / p)
        return max(sup_part, lp_part)


def converse_constant(p: float, q: float, nu: float, N: float = 1.0, alpha: float = 0.5) -> float:
    """Admissibility constant N * K_case for a u.e.s. family with (N, nu)."""
    return N * ConvolutionCase(p, q, nu, alpha).constant()


def exp_convolve(h: SampledSignal, nu: float) -> SampledSignal:
    """Trapezoid H(t_i) = int_0^{t_i} e^{-nu (t_i - s)} h(s) ds (h starts at the grid origin)."""
    vals = np.asarray(h.values, dtype=float)
    if vals.ndim != 1:
        raise ValueError("h must be scalar")
    if np.any(vals < 0):
        raise DomainError("h must be nonnegative")
    a = math.exp(-nu * h.dt)
    b = [h.dt / 2, a * h.dt / 2]
    H, _ = lfilter(b, [1.0, -a], vals, zi=[-b[0] * vals[0]])
    H[0] = 0.0
    return h.with_values(np.maximum(H, 0.0))


class ConvolutionBound(NamedTuple):
    H_norm_q: float
    bound: float
    constant: float
    allowance: float
    holds: bool


def convolution_bound(case: ConvolutionCase, h: SampledSignal, tol: float = 1e-9) -> ConvolutionBound:
    """||exp_convolve(h, nu)||_q against the case constant times ||h||_p."""
    if case.p > case.q:
        raise DomainError("convolution bound needs p <= q")
    const = case.constant()
    H = exp_convolve(h, case.nu)
    Hq = lp_norm(H, case.q)
    bound = const * lp_norm(h, case.p)
    stretch = max(2.0, case.p_conj if not math.isinf(case.p_conj) else 2.0, case.p if not math.isinf(case.p) else 2.0)
    allowance = tol + bound * (case.nu * stretch * h.dt) ** 2
    return ConvolutionBound(Hq, bound, const, allowance, Hq <= bound + allowance)


# ---------------------------------------------------------------------------
# asymptotic stability


def check_asymptotic(
    F: EvolutionFamily,
    grid: Grid,
    sampler: Optional[Sampler] = None,
    tail_fraction: float = 0.25,
    tol: float = 1e-3,
    n_starts: int = 8,
    seed: int = 0,
) -> bool:
    """Every sampled trajectory stays below ``tol`` on the final grid tail (L_0^inf read as 'limit 0')."""
    tails = trajectory_tail_max(F, grid, sampler, tail_fraction, n_starts, seed)
    return bool(np.all(tails <= tol))
