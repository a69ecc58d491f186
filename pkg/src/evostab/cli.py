"""Batch command line: load a model config, run one command, write CSV/JSON outputs.

Exit statuses: 0 ok, 2 invalid config or missing prerequisite, 3 numeric
failure, 4 hypothesis violation.
"""
from __future__ import annotations

import argparse
import copy
import datetime as _dt
import hashlib
import json
import os
import re
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import reproduce
from .evolution import DomainError, EstimationError, classify_stability, lip_estimates
from .green import estimate_admissibility, green_apply
from .lp_spaces import Grid, SampledSignal, band_limited, indicator, lp_norm
from .mild_solver import ConvergenceError, MildFamily, MildSolveConfig, integral_residual, solve_paths
from .models import HypothesisViolation, NonContractiveError, SpectralHeatModel, build_family, REACTION_PRESETS
from .stability import (
    NonCertifiableError,
    certificate_violations,
    certify_from_admissibility,
    check_asymptotic,
    derivation_trace,
)

EXIT_OK = 0
EXIT_INVALID_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_HYPOTHESIS = 4

COMMANDS = ("simulate", "green", "admissibility", "certify", "classify", "reproduce")
MODEL_KINDS = ("closed_form_linear", "scalar_h", "spectral_heat", "scalar_forced")


class ConfigError(ValueError):
    pass


class DependencyError(ConfigError):
    """A command needs the output of a prior command."""


def _locate(text: str, key: str) -> Optional[int]:
    pat = re.compile(rf'^\s*"?{re.escape(key)}"?\s*[=:]', re.M)
    m = pat.search(text)
    return text.count("\n", 0, m.start()) + 1 if m else None


@dataclass
class RunConfig:
    model: dict
    T: float
    dt: float
    seed: int = 0
    output_dir: str = "evostab_out"
    command: Optional[str] = None
    sections: dict = field(default_factory=dict)
    source: str = "<inline>"
    text: str = ""

    def section(self, name: str) -> dict:
        return dict(self.sections.get(name, {}))

    @property
    def grid(self) -> Grid:
        return Grid(self.T, self.dt)

    def canonical(self) -> dict:
        """Everything that affects results; the output directory does not."""
        return {
            "model": self.model,
            "grid": {"T": self.T, "dt": self.dt},
            "seed": self.seed,
            "sections": self.sections,
        }

    def hash(self) -> str:
        blob = json.dumps(self.canonical(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def fail(self, key: str, message: str) -> ConfigError:
        line = _locate(self.text, key.split(".")[-1]) if self.text else None
        where = f"{self.source}:{line}" if line else self.source
        return ConfigError(f"{where}: field '{key}': {message}")

    @classmethod
    def from_dict(cls, data: dict, source: str = "<inline>", text: str = "") -> "RunConfig":
        data = copy.deepcopy(data)
        probe = cls({}, 1.0, 1.0, source=source, text=text)
        grid = data.pop("grid", None)
        if not isinstance(grid, dict):
            raise probe.fail("grid", "missing [grid] table with T and dt")
        try:
            T, dt = float(grid["T"]), float(grid["dt"])
        except KeyError as exc:
            raise probe.fail(f"grid.{exc.args[0]}", "required") from None
        except (TypeError, ValueError):
            raise probe.fail("grid", "T and dt must be numbers") from None
        if not T > 0:
            raise probe.fail("grid.T", f"must be > 0 (got {T})")
        if not dt > 0:
            raise probe.fail("grid.dt", f"must be > 0 (got {dt})")
        if dt > T:
            raise probe.fail("grid.dt", f"must be <= T (got dt={dt}, T={T})")
        model = data.pop("model", {})
        if not isinstance(model, dict):
            raise probe.fail("model", "must be a table")
        kind = model.get("kind")
        if kind is not None and kind not in MODEL_KINDS:
            raise probe.fail("model.kind", f"unknown kind {kind!r}; choose from {list(MODEL_KINDS)}")
        seed = data.pop("seed", 0)
        if not isinstance(seed, int) or isinstance(seed, bool):
            raise probe.fail("seed", "must be an integer")
        out = str(data.pop("output_dir", "evostab_out"))
        command = data.pop("command", None)
        if command is not None and command not in COMMANDS:
            raise probe.fail("command", f"unknown command {command!r}")
        for name, sec in data.items():
            if not isinstance(sec, dict):
                raise probe.fail(name, "unknown top-level key (expected a command table)")
        return cls(model, T, dt, seed, out, command, data, source, text)


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config ({exc.strerror})") from None
    try:
        if path.suffix.lower() == ".json":
            data = json.loads(text)
        else:
            data = tomllib.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}: {exc.msg}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a table")
    return RunConfig.from_dict(data, str(path), text)


# ---------------------------------------------------------------------------
# output helpers


def _dump(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def _write(out: Path, name: str, text: str, files: list[str]) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / name).write_text(text)
    files.append(name)


def _report(cfg: RunConfig, command: str, result: dict) -> str:
    return _dump({"command": command, "config_hash": cfg.hash(), "seed": cfg.seed, "result": result})


def _family(cfg: RunConfig):
    if "kind" not in cfg.model:
        raise cfg.fail("model.kind", "required")
    try:
        return build_family(cfg.model, MildSolveConfig(dt=cfg.dt))
    except (TypeError, ValueError) as exc:
        raise cfg.fail("model", str(exc)) from None


def _threads() -> int:
    raw = os.environ.get("EVOSTAB_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ConfigError(f"EVOSTAB_THREADS must be an integer (got {raw!r})") from None


# ---------------------------------------------------------------------------
# commands


def _initial_state(cfg: RunConfig, F, sec: dict) -> np.ndarray:
    if cfg.model.get("kind") == "spectral_heat" and "x0" not in sec:
        x0 = np.zeros(F.dim)
        mode = int(sec.get("mode", 1))
        if not 0 <= mode < F.dim:
            raise cfg.fail("simulate.mode", f"must lie in [0, {F.dim - 1}]")
        x0[mode] = 1.0
        return x0
    x0 = np.atleast_1d(np.asarray(sec.get("x0", 1.0), dtype=float))
    if x0.shape != (F.dim,):
        raise cfg.fail("simulate.x0", f"expected {F.dim} component(s)")
    return x0


def cmd_simulate(cfg: RunConfig, out: Path, files: list[str]) -> dict:
    F = _family(cfg)
    sec = cfg.section("simulate")
    s = float(sec.get("s", 0.0))
    x0 = _initial_state(cfg, F, sec)
    horizon = cfg.T
    if isinstance(F, MildFamily):
        times, paths = solve_paths(F.U, F.f, s, x0, horizon, F.cfg)
        path = SampledSignal(s, float(times[1] - times[0]), paths[0] if F.dim > 1 else paths[0][:, 0])
        residual: Optional[float] = integral_residual(F.U, F.f, x0, path)
    else:
        grid = Grid(horizon, cfg.dt, s)
        vals = F.batch(grid.times, np.full(grid.n, s), np.tile(x0, (grid.n, 1)))
        path = SampledSignal(s, cfg.dt, vals if F.dim > 1 else vals[:, 0])
        residual = None
    _write(out, "trajectory.csv", path.to_csv(), files)
    if cfg.model.get("kind") == "spectral_heat":
        # the cosine transform does not depend on the reaction term
        model = SpectralHeatModel(F.dim, REACTION_PRESETS["zero"]())
        values = SampledSignal(path.t0, path.dt, model.to_values(path.states()))
        _write(out, "trajectory_values.csv", values.to_csv(), files)
    result = {
        "model": cfg.model,
        "s": s,
        "x0": x0.tolist(),
        "horizon": horizon,
        "n_steps": path.n - 1,
        "residual": residual,
        "final_norm": float(np.linalg.norm(path.states()[-1])),
    }
    _write(out, "simulate.json", _report(cfg, "simulate", result), files)
    return {"residual": residual}


def _input_signal(cfg: RunConfig, sec: dict, grid: Grid, dim: int) -> SampledSignal:
    spec = sec.get("signal", {"kind": "zero"})
    if isinstance(spec, str):
        spec = {"kind": spec}
    kind = spec.get("kind", "csv" if "csv" in spec else "zero")
    shape_dim = None if dim == 1 else dim
    if kind == "zero":
        return grid.zeros(shape_dim)
    if kind == "indicator":
        amp = spec.get("amplitude", 1.0 if dim == 1 else [1.0] * dim)
        return indicator(float(spec.get("a", 0.0)), float(spec.get("b", 1.0)), amp, grid)
    if kind == "band_limited":
        return band_limited(grid, np.random.default_rng(cfg.seed), shape_dim)
    if kind == "csv":
        try:
            return SampledSignal.from_csv(Path(spec["csv"]).read_text())
        except (OSError, KeyError, ValueError) as exc:
            raise cfg.fail("green.signal", f"cannot load CSV signal ({exc})") from None
    raise cfg.fail("green.signal", f"unknown signal kind {kind!r}")


def cmd_green(cfg: RunConfig, out: Path, files: list[str]) -> dict:
    F = _family(cfg)
    grid = cfg.grid
    f = _input_signal(cfg, cfg.section("green"), grid, F.dim)
    Gf = green_apply(F, f, grid)
    _write(out, "green_input.csv", f.to_csv(), files)
    _write(out, "green.csv", Gf.to_csv(), files)
    result = {
        "norms": {p: lp_norm(Gf, p) for p in ("1", "2", "inf")},
        "input_norms": {p: lp_norm(f, p) for p in ("1", "2", "inf")},
        "T": cfg.T,
        "dt": cfg.dt,
    }
    _write(out, "green.json", _report(cfg, "green", result), files)
    return {}


def run_admissibility(cfg: RunConfig):
    F = _family(cfg)
    sec = cfg.section("admissibility")
    n = int(sec.get("n_test_pairs", 64))
    if n < 1:
        raise cfg.fail("admissibility.n_test_pairs", "must be >= 1")
    try:
        return estimate_admissibility(F, sec.get("p", 2), sec.get("q", 2), cfg.grid, n, cfg.seed, workers=_threads())
    except ValueError as exc:
        if isinstance(exc, (EstimationError, DomainError)):
            raise
        raise cfg.fail("admissibility", str(exc)) from None


def cmd_admissibility(cfg: RunConfig, out: Path, files: list[str]) -> dict:
    rep = run_admissibility(cfg)
    _write(out, "admissibility.json", _report(cfg, "admissibility", rep.to_dict()), files)
    return {"K_estimate": rep.K_estimate}


def _admissibility_input(cfg: RunConfig, sec: dict, out: Path) -> tuple[float, Any, Any, str]:
    if "K" in sec:
        return float(sec["K"]), sec.get("p", 2), sec.get("q", 2), "inline"
    path = Path(sec["report"]) if "report" in sec else out / "admissibility.json"
    if not path.exists():
        raise DependencyError(
            f"certify needs an admissibility constant: run '--command admissibility' first "
            f"(expected {path}) or set certify.K"
        )
    data = json.loads(path.read_text())["result"]
    return float(data["K_estimate"]), sec.get("p", data["p"]), sec.get("q", data["q"]), str(path)


def cmd_certify(cfg: RunConfig, out: Path, files: list[str]) -> dict:
    F = _family(cfg)
    sec = cfg.section("certify")
    K, p, q, source = _admissibility_input(cfg, sec, out)
    try:
        cert = certify_from_admissibility(K, F.M, F.omega, p, q)
    except NonCertifiableError:
        raise
    except ValueError as exc:
        raise cfg.fail("certify.K", str(exc)) from None
    result = {"certificate": cert.to_dict(), "trace": derivation_trace(cert), "K_source": source}
    if sec.get("verify", True):
        span = cfg.T
        n_tau = int(sec.get("n_tau", 16))
        rng = np.random.default_rng(cfg.seed)
        taus = np.linspace(0.0, span, n_tau)
        s = rng.uniform(0.0, 1.0, n_tau) * (span - taus)
        est = lip_estimates(F, s + taus, s, None, int(sec.get("n_pairs", 16)), cfg.seed)
        rows = np.column_stack([s + taus, s, [e.value for e in est]])
        bad = certificate_violations(rows, cert)
        result["verification"] = {"samples": int(len(rows)), "violations": int(len(bad))}
    _write(out, "certify.json", _report(cfg, "certify", result), files)
    return {}


def cmd_classify(cfg: RunConfig, out: Path, files: list[str]) -> dict:
    F = _family(cfg)
    sec = cfg.section("classify")
    tol = float(sec.get("tol", 1e-3))
    cls = classify_stability(F, cfg.grid, tol=tol, seed=cfg.seed)
    result = cls.to_dict()
    result["asymptotic_tail_check"] = check_asymptotic(F, cfg.grid, tol=tol, seed=cfg.seed)
    _write(out, "classify.json", _report(cfg, "classify", result), files)
    return {}


def cmd_reproduce(example: str, seed: int, out: Path, files: list[str]) -> dict:
    if example not in reproduce.BUNDLES:
        raise ConfigError(f"unknown example {example!r}; choose from {sorted(reproduce.BUNDLES)}")
    rows = reproduce.BUNDLES[example](seed=seed)
    _write(out, f"reproduce_{example}.txt", reproduce.format_table(rows), files)
    payload = {"example": example, "seed": seed, "rows": [r.to_dict() for r in rows],
               "all_passed": all(r.passed for r in rows)}
    _write(out, f"reproduce_{example}.json", _dump(payload), files)
    sys.stdout.write(reproduce.format_table(rows))
    if not payload["all_passed"]:
        raise NumericFailure(f"reproduce {example}: {sum(not r.passed for r in rows)} check(s) failed")
    return {}


class NumericFailure(RuntimeError):
    pass


HANDLERS = {
    "simulate": cmd_simulate,
    "green": cmd_green,
    "admissibility": cmd_admissibility,
    "certify": cmd_certify,
    "classify": cmd_classify,
}


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="evostab", description=__doc__.splitlines()[0])
    ap.add_argument("--config", help="TOML (or .json) run config")
    ap.add_argument("--command", choices=COMMANDS, help="command to run (default: config 'command')")
    ap.add_argument("--out", help="output directory (env EVOSTAB_OUT, else config output_dir)")
    ap.add_argument("--seed", type=int, help="override the config seed")
    ap.add_argument("--example", choices=sorted(reproduce.BUNDLES), help="bundle for 'reproduce'")
    return ap


def _error(kind: str, message: str, **extra) -> None:
    sys.stderr.write(json.dumps({"error": kind, "message": message, **extra}, sort_keys=True) + "\n")


def run(args: argparse.Namespace) -> int:
    cfg: Optional[RunConfig] = None
    if args.config:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.seed = args.seed
    command = args.command or (cfg.command if cfg else None)
    if command is None:
        raise ConfigError("no command given (use --command or set 'command' in the config)")
    out = Path(args.out or os.environ.get("EVOSTAB_OUT") or (cfg.output_dir if cfg else "evostab_out"))
    files: list[str] = []
    started = time.perf_counter()
    if command == "reproduce":
        example = args.example or (cfg.section("reproduce").get("example") if cfg else None)
        if example is None:
            raise ConfigError("reproduce needs --example")
        seed = args.seed if args.seed is not None else (cfg.seed if cfg else 0)
        summary = cmd_reproduce(example, seed, out, files)
        config_hash = cfg.hash() if cfg else None
    else:
        if cfg is None:
            raise ConfigError(f"command '{command}' needs --config")
        summary = HANDLERS[command](cfg, out, files)
        config_hash = cfg.hash()
    manifest = {
        "command": command,
        "config_hash": config_hash,
        "seed": cfg.seed if cfg else args.seed,
        "files": files,
        "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(),
        "wall_time_s": time.perf_counter() - started,
        **summary,
    }
    _write(out, "manifest.json", _dump(manifest), [])
    return EXIT_OK


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return run(args)
    except DependencyError as exc:
        _error("missing-prerequisite", str(exc), requires="admissibility")
        return EXIT_INVALID_CONFIG
    except ConfigError as exc:
        _error("invalid-config", str(exc))
        return EXIT_INVALID_CONFIG
    except NonCertifiableError as exc:
        _error("hypothesis-violation", str(exc), excluded_pair=["1", "inf"])
        return EXIT_HYPOTHESIS
    except (HypothesisViolation, DomainError) as exc:
        _error("hypothesis-violation", str(exc))
        return EXIT_HYPOTHESIS
    except (NumericFailure, ConvergenceError, EstimationError, NonContractiveError, FloatingPointError) as exc:
        _error("numeric-failure", str(exc))
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
