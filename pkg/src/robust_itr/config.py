"""Run configuration: a flat key = value file, overridable by CLI flags."""

from __future__ import annotations

import math
from dataclasses import dataclass, fields, replace
from pathlib import Path

from .dca import SolverConfig
from .pipeline import METHODS, LearnConfig

COMMANDS = ("simulate", "train", "evaluate", "experiment", "cv")


class ConfigError(ValueError):
    pass


def _opt_float(s: str):
    return None if s.lower() in ("", "none", "auto") else float(s)


def _opt_int(s: str):
    return None if s.lower() in ("", "none", "auto") else int(s)


def _opt_str(s: str):
    return None if s.lower() in ("", "none") else s


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _methods(s: str) -> tuple:
    out = tuple(m.strip() for m in s.split(",") if m.strip())
    bad = [m for m in out if m not in METHODS]
    if bad:
        raise ValueError(f"unknown method(s) {bad}; choose from {METHODS}")
    return out


@dataclass(frozen=True)
class RunConfig:
    command: str = "experiment"
    scenario: str | None = None
    data: str | None = None
    schema: str = "standard"
    horizon: float = math.inf
    model: str | None = None
    out: str = "out"
    n: int = 500
    seed: int = 0
    criterion: str = "cvar"
    methods: tuple = METHODS
    gamma: float = 0.5
    tau: float = 0.5
    lam: float = 1e-3
    select_lambda: bool = False
    bandwidth: float | None = None
    delta: float = 1.0
    censoring: str = "km"
    cox_selector: str = "x*a"
    floor: float = 0.05
    decomposition: str = "envelope"
    deterministic: bool = False
    rho: float = 10.0
    eps: float = 1e-4
    delta_nu: int | None = None
    max_outer: int = 200
    tol_step: float = 1e-5
    inner_tol: float = 1e-7
    inner_max_iter: int = 500
    alpha: float | None = None
    c: float | None = None
    repeats: int = 20
    folds: int = 5
    n_test: int = 10_000
    workers: int = 1
    plot_data: bool = False

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise ConfigError(f"unknown command {self.command!r}")
        for name in ("n", "repeats", "folds", "n_test", "workers", "max_outer", "inner_max_iter"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be at least 1")
        if self.criterion not in METHODS:
            raise ConfigError(f"unknown criterion {self.criterion!r}")
        if self.schema not in ("standard", "actg175"):
            raise ConfigError(f"unknown schema {self.schema!r}")
        if not 0 < self.gamma < 1:
            raise ConfigError("gamma must lie in (0, 1)")
        if not (self.tau > 0 and self.lam > 0 and self.delta > 0):
            raise ConfigError("tau, lam and delta must be positive")
        if self.folds < 2 and self.command == "cv":
            raise ConfigError("folds must be at least 2")
        try:
            self.solver()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def solver(self) -> SolverConfig:
        return SolverConfig(rho=self.rho, eps=self.eps, delta_nu=self.delta_nu,
                            max_outer=self.max_outer, tol_step=self.tol_step,
                            inner_tol=self.inner_tol, inner_max_iter=self.inner_max_iter,
                            seed=self.seed)

    def learn_config(self, criterion: str | None = None) -> LearnConfig:
        return LearnConfig(
            criterion=criterion or self.criterion, gamma=self.gamma, tau=self.tau, lam=self.lam,
            bandwidth=self.bandwidth, delta=self.delta, censoring=self.censoring,
            cox_selector=self.cox_selector, floor=self.floor, decomposition=self.decomposition,
            deterministic=self.deterministic, solver=self.solver(),
        )

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                s = ",".join(v)
            elif isinstance(v, bool):
                s = "true" if v else "false"
            elif v is None:
                s = "none"
            elif isinstance(v, float):
                s = repr(v)
            else:
                s = str(v)
            lines.append(f"{f.name} = {s}")
        return "\n".join(lines) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.to_text())


_PARSERS = {
    "command": str, "scenario": _opt_str, "data": _opt_str, "schema": str, "horizon": float,
    "model": _opt_str, "out": str, "n": int, "seed": int, "criterion": str,
    "methods": _methods, "gamma": float, "tau": float, "lam": float, "select_lambda": _bool,
    "bandwidth": _opt_float, "delta": float, "censoring": str, "cox_selector": str,
    "floor": float, "decomposition": str, "deterministic": _bool, "rho": float, "eps": float,
    "delta_nu": _opt_int, "max_outer": int, "tol_step": float, "inner_tol": float,
    "inner_max_iter": int, "alpha": _opt_float, "c": _opt_float, "repeats": int,
    "folds": int, "n_test": int, "workers": int, "plot_data": _bool,
}
assert set(_PARSERS) == {f.name for f in fields(RunConfig)}


def parse_value(key: str, raw: str):
    if key not in _PARSERS:
        raise ConfigError(f"unknown key {key!r}")
    try:
        return _PARSERS[key](raw.strip())
    except ValueError as exc:
        raise ConfigError(f"invalid value {raw.strip()!r} for {key}: {exc}") from None


def parse_text(text: str, source: str = "<config>") -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for no, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"{source}:{no}: expected 'key = value'")
        key, raw = (s.strip() for s in body.split("=", 1))
        try:
            out[key] = parse_value(key, raw)
        except ConfigError as exc:
            raise ConfigError(f"{source}:{no}: {exc}") from None
    return out


def load_file(path) -> dict:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    return parse_text(p.read_text(), str(p))


def resolve(file_values: dict | None = None, overrides: dict | None = None) -> RunConfig:
    """Defaults, then file values, then explicit overrides."""
    vals = {**(file_values or {}), **{k: v for k, v in (overrides or {}).items() if v is not None}}
    try:
        return replace(RunConfig(command=vals.get("command", "experiment")), **vals)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
