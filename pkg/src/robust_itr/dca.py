"""Sampling-based proximal DC algorithm with epsilon-active enhancement."""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import cho_factor, cho_solve, LinAlgError

from .objectives import DcObjective, SampleState

log = logging.getLogger(__name__)


class SubproblemError(RuntimeError):
    def __init__(self, msg, beta=None, residual=math.nan):
        super().__init__(msg)
        self.beta = beta
        self.residual = residual


class SolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class SolverConfig:
    rho: float = 10.0
    eps: float = 1e-4
    delta_nu: int | None = None     # None -> max(32, ceil(n / 20))
    max_outer: int = 200
    tol_step: float = 1e-5          # relative to 1 + ||beta||
    inner_tol: float = 1e-7         # relative to 1 + |subproblem value|
    inner_max_iter: int = 500
    seed: int = 0

    def __post_init__(self):
        if not self.rho > 0:
            raise ValueError("rho must be positive")
        if self.eps < 0:
            raise ValueError("eps must be nonnegative")
        if self.delta_nu is not None and self.delta_nu < 1:
            raise ValueError("delta_nu must be at least 1")
        if not (self.tol_step > 0 and self.inner_tol > 0):
            raise ValueError("tolerances must be positive")
        if self.max_outer < 1 or self.inner_max_iter < 1:
            raise ValueError("iteration caps must be positive")

    def increment(self, n: int) -> int:
        return self.delta_nu if self.delta_nu is not None else max(32, math.ceil(n / 20))


@dataclass
class FitResult:
    beta: np.ndarray
    inner_scalar: float
    criterion: str
    trace: list = field(default_factory=list)
    converged: bool = False
    reason: str = ""
    config: dict = field(default_factory=dict)
    seconds: float = 0.0

    @property
    def n_iter(self) -> int:
        return len(self.trace)

    def to_dict(self) -> dict:
        return {
            "criterion": self.criterion,
            "beta": [float(b) for b in self.beta],
            "inner_scalar": self.inner_scalar,
            "converged": self.converged,
            "reason": self.reason,
            "seconds": self.seconds,
            "config": self.config,
            "trace": self.trace,
        }

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))


def solve_prox_subproblem(model, beta_ref, rho: float, inner_tol: float = 1e-7,
                          max_iter: int = 500) -> np.ndarray:
    """argmin model(beta) + ||beta - beta_ref||^2 / (2 rho) by damped Newton.

    Starts at ``beta_ref`` and only accepts decreasing steps, so the returned
    point never has a larger subproblem value than the reference point.
    Stops once the full-space gradient norm is at most
    ``inner_tol * (1 + |value|)``.  When the model carries an eigenbasis of
    K, Newton directions are computed in that (numerically exact) range and
    the solver falls back to full-space steps if they stall.  A point where
    no step gives a representable decrease is accepted when its residual is
    within ``1e3 * inner_tol`` or within ``inner_tol`` of the model's
    ``grad_scale`` (large linearization gradients cancel against phi1's).
    """
    beta_ref = np.asarray(beta_ref, dtype=float)
    inv_rho = 1.0 / rho
    beta = beta_ref.copy()
    K = model.K
    basis = getattr(model, "basis", None)
    reduced = basis is not None
    scale = getattr(model, "grad_scale", 0.0)

    def total(b, Kb):
        d = b - beta_ref
        return model.value(b, Kb) + 0.5 * inv_rho * (d @ d)

    Kb = K @ beta
    f = total(beta, Kb)
    gnorm = math.inf
    for _ in range(max_iter):
        g = model.grad(beta, Kb) + inv_rho * (beta - beta_ref)
        gnorm = float(np.linalg.norm(g))
        if gnorm <= inner_tol * (1.0 + abs(f)):
            return beta
        if reduced:
            U, _ = basis
            gz = U.T @ g
            H = model.hess_reduced(beta, Kb)
            H[np.diag_indices_from(H)] += inv_rho
            step = U @ -cho_solve(cho_factor(H, check_finite=False), gz, check_finite=False)
        else:
            H = model.hess(beta, Kb)
            H[np.diag_indices_from(H)] += inv_rho
            try:
                step = -cho_solve(cho_factor(H, check_finite=False), g, check_finite=False)
            except LinAlgError:
                step = -rho * g
        slope = g @ step
        if slope >= 0:
            step, slope = -rho * g, -rho * gnorm**2
        t = 1.0
        Kstep = K @ step
        while True:
            cand = beta + t * step
            Kc = Kb + t * Kstep
            fc = total(cand, Kc)
            if fc <= f + 1e-4 * t * slope or t < 1e-12:
                break
            t *= 0.5
        # no representable decrease: the iterate sits at the rounding floor
        if fc >= f - 4.0 * np.finfo(float).eps * (1.0 + abs(f)):
            if reduced:
                reduced = False
                continue
            if gnorm <= 1e3 * inner_tol * (1.0 + abs(f)) or gnorm <= inner_tol * scale:
                log.debug("subproblem stalled at residual %.3e; accepting", gnorm)
                return beta
            raise SubproblemError("line search failed", beta, gnorm)
        beta, Kb, f = cand, Kc, fc
    g = model.grad(beta, Kb) + inv_rho * (beta - beta_ref)
    gnorm = float(np.linalg.norm(g))
    if gnorm <= inner_tol * (1.0 + abs(f)):
        return beta
    raise SubproblemError(f"inner solver hit {max_iter} iterations (residual {gnorm:.3e})",
                          beta, gnorm)


def _solve_with_retry(model, beta_ref, cfg: SolverConfig):
    try:
        return solve_prox_subproblem(model, beta_ref, cfg.rho, cfg.inner_tol, cfg.inner_max_iter)
    except SubproblemError as exc:
        log.warning("subproblem failed (%s); retrying with doubled budget", exc)
        try:
            return solve_prox_subproblem(model, beta_ref, cfg.rho, cfg.inner_tol,
                                         2 * cfg.inner_max_iter)
        except SubproblemError as exc2:
            raise SolverError(f"subproblem failed twice: {exc2}") from exc2


def uniform_sampler(obj: DcObjective, cfg: SolverConfig):
    """Grow the multiset by Delta_nu i.i.d. uniform draws per iteration."""
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(cfg.seed)))
    inc = cfg.increment(obj.n)

    def step(state: SampleState) -> SampleState:
        return state.grow(rng.integers(0, obj.n, size=inc))

    return step


def identity_sampler(obj: DcObjective, cfg: SolverConfig):
    """Every iteration uses the full index set once: the deterministic DCA."""
    full = obj.full_state()
    return lambda state: full


def _run(obj: DcObjective, cfg: SolverConfig, beta0, sampler) -> FitResult:
    t0 = time.perf_counter()
    n = obj.n
    beta = np.zeros(n) if beta0 is None else np.asarray(beta0, dtype=float).copy()
    if beta.shape != (n,):
        raise ValueError(f"beta0 must have length {n}")
    state = SampleState.empty(n)
    half_rho = 0.5 / cfg.rho
    trace = []
    small_steps = 0
    converged, reason = False, f"reached max_outer={cfg.max_outer}"
    for nu in range(1, cfg.max_outer + 1):
        state = sampler(state)
        active, g, knots = obj.epsilon_active_set(beta, state, cfg.eps)
        v_ref = float(g.min() + obj.ridge(beta))
        best = None
        for k in active:
            model = obj.convexified_model(state, beta, int(k))
            cand = _solve_with_retry(model, beta, cfg)
            d = cand - beta
            score = obj.value(cand, state) + half_rho * float(d @ d)
            if best is None or score < best[0]:
                best = (score, int(k), cand)
        score, k_sel, new_beta = best
        step = float(np.linalg.norm(new_beta - beta))
        v_new = obj.value(new_beta, state)
        trace.append({
            "iter": nu,
            "N": state.size,
            "value": v_ref,
            "value_next": v_new,
            "step": step,
            "active": int(active.size),
            "knot": int(knots.ids[k_sel]),
            "descent_slack": float(v_new + half_rho * step**2 - v_ref),
        })
        thresh = cfg.tol_step * (1.0 + float(np.linalg.norm(beta)))
        beta = new_beta
        small_steps = small_steps + 1 if step <= thresh else 0
        if small_steps >= 2:
            converged, reason = True, "step norm below tolerance on two consecutive iterations"
            break
    return FitResult(
        beta=beta,
        inner_scalar=obj.inner_scalar(beta),
        criterion=obj.criterion,
        trace=trace,
        converged=converged,
        reason=reason,
        config=asdict(cfg),
        seconds=time.perf_counter() - t0,
    )


def fit_sampled(obj: DcObjective, cfg: SolverConfig = SolverConfig(), beta0=None,
                sampler=None) -> FitResult:
    """Algorithm with incremental i.i.d. resampling of the data.

    ``sampler`` maps the current SampleState to the next one; the default
    draws ``cfg.increment(n)`` fresh uniform indices per outer iteration.
    """
    sampler = sampler or uniform_sampler(obj, cfg)
    return _run(obj, cfg, beta0, sampler)


def fit_deterministic(obj: DcObjective, cfg: SolverConfig = SolverConfig(), beta0=None) -> FitResult:
    """Same iteration on the full data set every time (no resampling)."""
    return _run(obj, cfg, beta0, identity_sampler(obj, cfg))


def extract_inner_scalar(obj: DcObjective, beta) -> float:
    return obj.inner_scalar(beta)


def stationarity_gap(obj: DcObjective, beta, cfg: SolverConfig = SolverConfig()) -> float:
    """Largest proximal step away from ``beta`` over the minimizing knots.

    Zero (to solver tolerance) at a directional-stationary point.
    """
    beta = np.asarray(beta, dtype=float)
    state = obj.full_state()
    _, M = obj.full_objective(beta)
    knots = obj.knots(state)
    gap = 0.0
    for k in np.flatnonzero(np.isin(knots.ids, list(M))):
        model = obj.convexified_model(state, beta, int(k))
        cand = _solve_with_retry(model, beta, cfg)
        gap = max(gap, float(np.linalg.norm(cand - beta)))
    return gap
