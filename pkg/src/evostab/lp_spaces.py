"""Grid-based L^p machinery.

Signals live on a uniform grid ``t0 + k*dt``.  Integrals use the composite
trapezoid rule; the ``p = inf`` norm is the maximum over grid nodes.
Values outside the grid span are treated as zero (half-line convention).
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from typing import Any, Iterable, NamedTuple, Union

import numpy as np

INF = math.inf

Exponent = float  # a real p >= 1 or math.inf

ABS_TOL = 1e-9


class InvalidIntervalError(ValueError):
    """Raised for intervals [a, b] with a > b or a < 0."""


def as_exponent(p: Union[float, int, str]) -> float:
    """Parse an exponent; accepts numbers and the strings 'inf', 'infinity', '∞'."""
    if isinstance(p, str):
        key = p.strip().lower()
        if key in ("inf", "infinity", "∞", "+inf"):
            return INF
        p = float(key)
    p = float(p)
    if math.isnan(p) or p < 1.0:
        raise ValueError(f"exponent must be >= 1 or inf, got {p!r}")
    return p


def exponent_str(p: float) -> str:
    return "inf" if math.isinf(p) else repr(float(p))


def conjugate(p: float) -> float:
    """Hölder conjugate p' with 1/p + 1/p' = 1."""
    if p == 1.0:
        return INF
    if math.isinf(p):
        return 1.0
    return p / (p - 1.0)


@dataclass(frozen=True)
class Grid:
    """Uniform grid over [t0, t0 + T] with step dt."""

    T: float
    dt: float
    t0: float = 0.0

    def __post_init__(self) -> None:
        if not (self.dt > 0) or not (self.T > 0) or self.dt > self.T:
            raise ValueError(f"invalid grid: need T > 0, 0 < dt <= T (T={self.T}, dt={self.dt})")
        if self.t0 < 0:
            raise ValueError("grid must start at t0 >= 0")

    @property
    def n(self) -> int:
        return int(round(self.T / self.dt)) + 1

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.n)

    def zeros(self, dim: int | None = None) -> "SampledSignal":
        shape = (self.n,) if dim is None else (self.n, dim)
        return SampledSignal(self.t0, self.dt, np.zeros(shape))

    def sample(self, fn, dim: int | None = None) -> "SampledSignal":
        """Sample a vectorised ``fn(t)`` on the grid."""
        vals = np.asarray(fn(self.times), dtype=float)
        if dim is not None and vals.ndim == 1:
            vals = vals.reshape(self.n, dim)
        return SampledSignal(self.t0, self.dt, vals)


@dataclass(frozen=True, eq=False)
class SampledSignal:
    """A function R+ -> state sampled at ``t0 + k*dt``.

    ``values`` has shape ``(n,)`` for scalar signals and ``(n, d)`` for
    vector-valued ones.
    """

    t0: float
    dt: float
    values: np.ndarray

    def __post_init__(self) -> None:
        vals = np.array(self.values, dtype=float)
        if vals.ndim == 0 or vals.shape[0] == 0:
            raise ValueError("signal values must be nonempty")
        if vals.ndim > 2:
            raise ValueError("signal values must be 1-D (scalar) or 2-D (n, d)")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.t0 < 0:
            raise ValueError("grid times must be nonnegative")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "t0", float(self.t0))
        object.__setattr__(self, "dt", float(self.dt))

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def is_scalar(self) -> bool:
        return self.values.ndim == 1

    @property
    def dim(self) -> int:
        return 1 if self.is_scalar else self.values.shape[1]

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.n)

    @property
    def t_end(self) -> float:
        return self.t0 + self.dt * (self.n - 1)

    def pointwise_norm(self) -> np.ndarray:
        """||f(t_k)|| at every node (Euclidean norm for vector states)."""
        if self.is_scalar:
            return np.abs(self.values)
        return np.linalg.norm(self.values, axis=1)

    def states(self) -> np.ndarray:
        """Values as an ``(n, d)`` array regardless of scalar/vector storage."""
        return self.values.reshape(self.n, -1)

    def with_values(self, values: np.ndarray) -> "SampledSignal":
        return SampledSignal(self.t0, self.dt, np.asarray(values, dtype=float).reshape(self.values.shape))

    def value_at(self, t: float) -> np.ndarray | float:
        """Linear interpolation between nodes; zero outside the grid span."""
        pos = (t - self.t0) / self.dt
        if pos < -1e-9 or pos > self.n - 1 + 1e-9:
            return 0.0 if self.is_scalar else np.zeros(self.dim)
        k = int(math.floor(pos + 1e-9))
        k = min(max(k, 0), self.n - 1)
        frac = pos - k
        if k == self.n - 1 or frac <= 1e-12:
            v = self.values[k]
        else:
            v = (1 - frac) * self.values[k] + frac * self.values[k + 1]
        return float(v) if self.is_scalar else np.array(v)

    def __add__(self, other: "SampledSignal") -> "SampledSignal":
        _check_compatible(self, other)
        return self.with_values(self.values + other.values)

    def __sub__(self, other: "SampledSignal") -> "SampledSignal":
        _check_compatible(self, other)
        return self.with_values(self.values - other.values)

    def __mul__(self, c: float) -> "SampledSignal":
        return self.with_values(c * self.values)

    __rmul__ = __mul__

    # --- serialization -------------------------------------------------
    def to_dict(self) -> dict[str, Any]:
        return {"t0": self.t0, "dt": self.dt, "values": self.values.tolist()}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "SampledSignal":
        return cls(float(data["t0"]), float(data["dt"]), np.asarray(data["values"], dtype=float))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "SampledSignal":
        return cls.from_dict(json.loads(text))

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["t"] + [f"v{i}" for i in range(self.dim)])
        for t, row in zip(self.times, self.states()):
            writer.writerow([repr(float(t))] + [repr(float(v)) for v in row])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "SampledSignal":
        rows = list(csv.reader(io.StringIO(text)))
        header, body = rows[0], [r for r in rows[1:] if r]
        if not header or header[0] != "t":
            raise ValueError("CSV signal must have header 't, v0, ...'")
        data = np.array([[float(x) for x in r] for r in body])
        t = data[:, 0]
        dt = float(t[1] - t[0]) if len(t) > 1 else 1.0
        vals = data[:, 1:]
        if vals.shape[1] == 1:
            vals = vals[:, 0]
        return cls(float(t[0]), dt, vals)


def _check_compatible(a: SampledSignal, b: SampledSignal) -> None:
    if a.n != b.n or abs(a.t0 - b.t0) > 1e-12 or abs(a.dt - b.dt) > 1e-12 * a.dt:
        raise ValueError("signals live on different grids")


def trapezoid_weights(n: int, dt: float) -> np.ndarray:
    if n == 1:
        return np.zeros(1)
    w = np.full(n, dt)
    w[0] = w[-1] = dt / 2
    return w


def lp_norm(f: SampledSignal, p: float) -> float:
    """Trapezoid L^p norm of a sampled signal; grid max for p = inf."""
    p = as_exponent(p)
    a = f.pointwise_norm()
    if math.isinf(p):
        return float(a.max())
    # scale to avoid under/overflow in a**p
    top = a.max()
    if top == 0.0:
        return 0.0
    w = trapezoid_weights(f.n, f.dt)
    return float(top * np.dot(w, (a / top) ** p) ** (1.0 / p))


def a_p(t: float, p: float) -> float:
    """t^(1 - 1/p), or t when p = inf."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    p = as_exponent(p)
    if math.isinf(p):
        return float(t)
    return float(t) ** (1.0 - 1.0 / p)


def b_p(t: float, p: float) -> float:
    """||chi_[0,t]||_p: t^(1/p), or 1 when p = inf."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    p = as_exponent(p)
    if math.isinf(p):
        return 1.0
    return float(t) ** (1.0 / p)


def _node_mask(times: np.ndarray, a: float, b: float, dt: float) -> np.ndarray:
    eps = 1e-9 * dt
    return (times >= a - eps) & (times <= b + eps)


def indicator(a: float, b: float, amplitude, grid: Grid) -> SampledSignal:
    """chi_[a,b] * amplitude sampled on ``grid``; scalar or vector amplitude."""
    if a < 0 or a > b:
        raise InvalidIntervalError(f"invalid interval [{a}, {b}]")
    amp = np.asarray(amplitude, dtype=float)
    mask = _node_mask(grid.times, a, b, grid.dt).astype(float)
    if amp.ndim == 0:
        vals = mask * float(amp)
    else:
        vals = mask[:, None] * amp[None, :]
    return SampledSignal(grid.t0, grid.dt, vals)


def truncate(f: SampledSignal, a: float, b: float) -> SampledSignal:
    """chi_[a,b] * f."""
    if a < 0 or a > b:
        raise InvalidIntervalError(f"invalid interval [{a}, {b}]")
    mask = _node_mask(f.times, a, b, f.dt)
    vals = np.where(mask if f.is_scalar else mask[:, None], f.values, 0.0)
    return f.with_values(vals)


def window_integral(f: SampledSignal, a: float, b: float) -> float:
    """Trapezoid integral of ||f|| over the grid nodes inside [a, b]."""
    mask = _node_mask(f.times, a, b, f.dt)
    vals = f.pointwise_norm()[mask]
    if vals.size < 2:
        return 0.0
    return float(np.dot(trapezoid_weights(vals.size, f.dt), vals))


class TruncationCheck(NamedTuple):
    lhs: float
    rhs: float
    holds: bool


def quadrature_allowance(dt: float, length: float, tol: float = ABS_TOL) -> float:
    return tol + dt * dt * max(length, 1.0)


def truncation_bound_check(
    f: SampledSignal, p: float, t0: float, t: float, tol: float | None = None
) -> TruncationCheck:
    """Compare the window integral of ||f|| over [t0, t0+t] with a_p(t)*||f||_p."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    lhs = window_integral(f, t0, t0 + t)
    rhs = a_p(t, p) * lp_norm(f, p)
    if tol is None:
        tol = quadrature_allowance(f.dt, t)
    return TruncationCheck(lhs, rhs, lhs <= rhs + tol)


def band_limited(
    grid: Grid, rng: np.random.Generator, dim: int | None = None, n_terms: int = 4, max_freq: float = 2.0
) -> SampledSignal:
    """Random trigonometric polynomial with frequencies below ``max_freq``."""
    t = grid.times
    d = 1 if dim is None else dim
    vals = np.zeros((grid.n, d))
    for _ in range(n_terms):
        amp = rng.uniform(-1.0, 1.0, size=d)
        freq = rng.uniform(0.0, max_freq)
        phase = rng.uniform(0.0, 2 * math.pi)
        vals += np.cos(freq * t + phase)[:, None] * amp[None, :]
    return SampledSignal(grid.t0, grid.dt, vals[:, 0] if dim is None else vals)


def stack_signals(signals: Iterable[SampledSignal]) -> np.ndarray:
    return np.stack([s.values for s in signals])
