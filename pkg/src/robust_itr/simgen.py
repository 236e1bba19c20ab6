"""Seeded generators for the simulation scenarios and the two-group example.

Scenario s: X ~ Unif(0,1)^3, A = +/-1 with probability 1/2,
log T~ = m0(X) + A m1(X) + eps, T = min(T~, h), and a Cox censoring time with
baseline hazard t^(-1/2) / 2, i.e. cumulative baseline hazard sqrt(t).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .data import Dataset

# (intercept, x1, x2, x3) for the main and the arm-interaction parts
_AFT = {
    "S1": ((0.0, -1.0, 0.5, 0.5), (0.0, 1.0, 0.5, -0.5)),
    "S2": ((-1.2, 2.4, 0.0, -1.8), (1.2, -1.6, -1.0, 0.0)),
    "S3": ((0.3, 0.6, -0.1, 0.3), (0.8, -1.0, -2.0, 0.5)),
}
_COX = {
    "S1": ((-1.0, -0.8, -0.8, 0.4), (0.6, -0.5, 0.3, -0.5)),
    "S2": ((-1.5, 1.0, 0.0, 0.0), (-0.5, 1.8, -0.6, 0.0)),
    "S3": ((-0.5, -1.5, 0.5, 0.0), (1.2, -0.6, -1.4, -0.2)),
}
_ERRORS = {
    "S1": ("normal", (0.0, 1.0)),
    "S2": ("weibull", (0.3, 0.5)),
    "S3": ("lognormal", (0.0, 2.0)),
}
_HORIZON = {"S1": 10.0, "S2": 20.0, "S3": 20.0, "ILLUSTRATIVE": math.inf}
SCENARIOS = ("S1", "S2", "S3", "ILLUSTRATIVE")

# (mean, sd) of log T for (male?, arm)
_ILLUSTRATIVE_CELLS = {
    (1, 1): (1.0, 1.0),
    (1, -1): (0.95, 0.5),
    (0, 1): (0.95, 0.5),
    (0, -1): (1.0, 1.0),
}


@dataclass(frozen=True)
class ScenarioSpec:
    id: str
    n: int = 500
    seed: int = 0
    h: float = field(default=None)
    error_dist: tuple = field(default=None)
    aft_coeffs: tuple = field(default=None)
    cox_coeffs: tuple = field(default=None)

    def __post_init__(self):
        if self.id not in SCENARIOS:
            raise ValueError(f"unknown scenario id {self.id!r}; expected one of {SCENARIOS}")
        if self.n < 1:
            raise ValueError("n must be at least 1")
        # scenario constants are fixed; user-supplied values are ignored
        object.__setattr__(self, "h", _HORIZON[self.id])
        object.__setattr__(self, "error_dist", _ERRORS.get(self.id))
        object.__setattr__(self, "aft_coeffs", _AFT.get(self.id))
        object.__setattr__(self, "cox_coeffs", _COX.get(self.id))

    def with_(self, **kw) -> "ScenarioSpec":
        return replace(self, **kw)


def _rng(seed) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))


def spawn_seeds(master_seed: int, count: int) -> list:
    """Independent child seeds (as integers) for replication workers."""
    children = np.random.SeedSequence(master_seed).spawn(count)
    return [int(c.generate_state(1, dtype=np.uint64)[0]) for c in children]


def _linear(coefs, x):
    return coefs[0] + x @ np.asarray(coefs[1:])


def aft_location(spec: ScenarioSpec, x, a):
    main, inter = spec.aft_coeffs
    return _linear(main, x) + np.asarray(a) * _linear(inter, x)


def cox_linear_predictor(spec: ScenarioSpec, x, a):
    main, inter = spec.cox_coeffs
    return _linear(main, x) + np.asarray(a) * _linear(inter, x)


def _errors(spec: ScenarioSpec, rng, n):
    kind, (p1, p2) = spec.error_dist
    if kind == "normal":
        return rng.normal(p1, p2, n)
    if kind == "weibull":
        # scale p1, shape p2: survival exp(-(e / p1)^p2)
        return p1 * rng.weibull(p2, n)
    if kind == "lognormal":
        return rng.lognormal(p1, p2, n)
    raise ValueError(kind)


def _failure_times(spec, x, a, eps):
    log_t = aft_location(spec, x, a) + eps
    return np.minimum(np.exp(np.minimum(log_t, math.log(spec.h))), spec.h)


def censoring_times(lp, e):
    """Invert Lambda(t) = sqrt(t) exp(lp) at unit-exponential draws ``e``."""
    return (np.asarray(e) * np.exp(-np.asarray(lp))) ** 2


def generate(spec: ScenarioSpec) -> Dataset:
    if spec.id == "ILLUSTRATIVE":
        return generate_illustrative(spec.n, spec.seed)
    rng = _rng(spec.seed)
    n = spec.n
    x = rng.uniform(0.0, 1.0, (n, 3))
    a = np.where(rng.random(n) < 0.5, 1, -1)
    eps = _errors(spec, rng, n)
    e = rng.standard_exponential(n)
    t = _failure_times(spec, x, a, eps)
    c = censoring_times(cox_linear_predictor(spec, x, a), e)
    return Dataset(
        x=x, a=a, y=np.minimum(t, c), delta=(t <= c).astype(int),
        propensity=0.5, horizon=spec.h, covariate_names=("x1", "x2", "x3"),
    )


def _illustrative_log_t(male, a, rng):
    n = male.size
    mu = np.empty(n)
    sd = np.empty(n)
    for (g, arm), (m, s) in _ILLUSTRATIVE_CELLS.items():
        sel = (male == g) & (a == arm)
        mu[sel], sd[sel] = m, s
    return mu + sd * rng.standard_normal(n)


def generate_illustrative(n: int, seed: int) -> Dataset:
    """Two-group example: log T = eps with a group-by-arm error law, no censoring."""
    if n < 1:
        raise ValueError("n must be at least 1")
    rng = _rng(seed)
    male = rng.permutation(np.arange(n) % 2)
    a = np.where(rng.random(n) < 0.5, 1, -1)
    t = np.exp(_illustrative_log_t(male, a, rng))
    return Dataset(
        x=male.reshape(-1, 1).astype(float), a=a, y=t, delta=np.ones(n, dtype=int),
        propensity=0.5, horizon=math.inf, covariate_names=("male",),
    )


def potential_outcomes(spec: ScenarioSpec, n_test: int, seed: int):
    """Covariates and both potential outcomes, ``(x, t_plus, t_minus)``.

    Both arms share the same error draw, so rules are compared on common
    random numbers.
    """
    rng = _rng(seed)
    if spec.id == "ILLUSTRATIVE":
        male = (rng.random(n_test) < 0.5).astype(int)
        z = rng.standard_normal(n_test)
        out = {}
        for arm in (1, -1):
            mu = np.array([_ILLUSTRATIVE_CELLS[(g, arm)][0] for g in (0, 1)])[male]
            sd = np.array([_ILLUSTRATIVE_CELLS[(g, arm)][1] for g in (0, 1)])[male]
            out[arm] = np.exp(mu + sd * z)
        return male.reshape(-1, 1).astype(float), out[1], out[-1]
    x = rng.uniform(0.0, 1.0, (n_test, 3))
    eps = _errors(spec, rng, n_test)
    ones = np.ones(n_test)
    return x, _failure_times(spec, x, ones, eps), _failure_times(spec, x, -ones, eps)


def generate_potential_outcomes(spec: ScenarioSpec, rule, n_test: int, seed: int) -> np.ndarray:
    """Uncensored T drawn for fresh covariates with A = rule(X)."""
    x, t_plus, t_minus = potential_outcomes(spec, n_test, seed)
    d = np.asarray(rule(x)).ravel()
    if not np.isin(d, (1, -1)).all():
        raise ValueError("rule must return +1 or -1")
    return np.where(d == 1, t_plus, t_minus)


def oracle_rule(spec: ScenarioSpec):
    """sign of the AFT location contrast, optimal for every criterion here.

    T(a) = min(exp(m_a(X) + eps), h) is stochastically increasing in m_a, so
    assigning the arm with the larger location is optimal pointwise.
    """
    from .kernel import LinearRule

    if spec.id == "ILLUSTRATIVE":
        raise ValueError("no location-shift oracle for the two-group example")
    inter = spec.aft_coeffs[1]
    return LinearRule(inter[0], inter[1:])
