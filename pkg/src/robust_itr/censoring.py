"""Estimators of the censoring survival function S_C(t | x, a).

Both estimators treat Delta = 0 as the event of interest (the censoring time
was observed) and Delta = 1 as right-censoring of C.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np


class ConvergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class StepFunction:
    """Right-continuous nonincreasing step function starting at 1."""

    times: np.ndarray
    values: np.ndarray

    def __call__(self, t) -> np.ndarray:
        idx = np.searchsorted(self.times, np.asarray(t, dtype=float), side="right")
        return np.concatenate(([1.0], self.values))[idx]

    def left(self, t) -> np.ndarray:
        """Left limit S(t-)."""
        idx = np.searchsorted(self.times, np.asarray(t, dtype=float), side="left")
        return np.concatenate(([1.0], self.values))[idx]


def km_curve(times, events) -> StepFunction:
    """Product-limit survival curve; knots at the distinct event times."""
    times = np.asarray(times, dtype=float)
    events = np.asarray(events, dtype=bool)
    ev_times, counts = np.unique(times[events], return_counts=True)
    if ev_times.size == 0:
        return StepFunction(np.empty(0), np.empty(0))
    at_risk = times.size - np.searchsorted(np.sort(times), ev_times, side="left")
    surv = np.cumprod(1.0 - counts / at_risk)
    return StepFunction(ev_times, surv)


def _main_effects(x, a):
    return np.asarray(x, dtype=float)


def _arm_and_main(x, a):
    x = np.asarray(x, dtype=float)
    return np.column_stack([x, np.asarray(a, dtype=float)])


def _full_interaction(x, a):
    x = np.asarray(x, dtype=float)
    a = np.asarray(a, dtype=float)
    return np.column_stack([x, a, a[:, None] * x])


COVARIATE_SELECTORS: dict[str, Callable] = {
    "x": _main_effects,
    "x+a": _arm_and_main,
    "x*a": _full_interaction,
}


class CensorSurvival:
    """Fitted censoring survival; immutable after construction."""

    kind: str

    def survival(self, t, x, a) -> np.ndarray:
        raise NotImplementedError

    def at_risk(self, t, x, a) -> np.ndarray:
        """S_C(t- | x, a), i.e. the estimate of P(C >= t | x, a)."""
        raise NotImplementedError

    def export_csv(self, path) -> None:
        raise NotImplementedError


class KaplanMeierByArm(CensorSurvival):
    kind = "km"

    def __init__(self, curves: dict):
        self.curves = dict(curves)

    def _per_arm(self, fn, t, a):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        a = np.broadcast_to(np.asarray(a), t.shape)
        out = np.ones_like(t)
        for arm, curve in self.curves.items():
            m = a == arm
            out[m] = getattr(curve, fn)(t[m]) if fn == "left" else curve(t[m])
        return out

    def survival(self, t, x=None, a=1):
        return self._per_arm("call", t, a)

    def at_risk(self, t, x=None, a=1):
        return self._per_arm("left", t, a)

    def export_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["arm", "time", "survival"])
            for arm, c in sorted(self.curves.items()):
                w.writerow([arm, 0.0, 1.0])
                for t, s in zip(c.times, c.values):
                    w.writerow([arm, repr(float(t)), repr(float(s))])


def fit_km(data) -> KaplanMeierByArm:
    """Per-arm product-limit estimate of the censoring distribution."""
    curves = {}
    for arm in (1, -1):
        m = data.a == arm
        if not m.any():
            raise ValueError(f"arm {arm:+d} has zero subjects")
        curves[arm] = km_curve(data.y[m], data.delta[m] == 0)
    return KaplanMeierByArm(curves)


class UnitSurvival(CensorSurvival):
    """S_C == 1: the no-censoring case."""

    kind = "none"

    def survival(self, t, x=None, a=None):
        return np.ones_like(np.atleast_1d(np.asarray(t, dtype=float)))

    at_risk = survival

    def export_csv(self, path) -> None:
        Path(path).write_text("arm,time,survival\n")


class CoxPH(CensorSurvival):
    kind = "cox"

    def __init__(self, coef, center, baseline: StepFunction, selector: str,
                 n_iter: int, grad_norm: float, std_err=None):
        self.coef = np.asarray(coef, dtype=float)
        self.center = np.asarray(center, dtype=float)
        self.baseline = baseline  # cumulative hazard, stored as step "values"
        self.selector = selector
        self.n_iter = n_iter
        self.grad_norm = grad_norm
        self.std_err = None if std_err is None else np.asarray(std_err, dtype=float)

    def _risk(self, x, a):
        z = COVARIATE_SELECTORS[self.selector](np.atleast_2d(x), np.atleast_1d(a))
        return np.exp((z - self.center) @ self.coef)

    def _cumhaz(self, t, left: bool):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        side = "left" if left else "right"
        idx = np.searchsorted(self.baseline.times, t, side=side)
        return np.concatenate(([0.0], self.baseline.values))[idx]

    def survival(self, t, x, a):
        return np.exp(-self._cumhaz(t, left=False) * self._risk(x, a))

    def at_risk(self, t, x, a):
        return np.exp(-self._cumhaz(t, left=True) * self._risk(x, a))

    def export_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["time", "baseline_survival"])
            w.writerow([0.0, 1.0])
            for t, h in zip(self.baseline.times, self.baseline.values):
                w.writerow([repr(float(t)), repr(float(np.exp(-h)))])


def _cox_derivatives(beta, z, event, first_idx, d_counts):
    eta = z @ beta
    r = np.exp(eta - eta.max())
    # reverse cumulative sums give risk-set sums at every sorted position
    s0 = np.cumsum(r[::-1])[::-1]
    s1 = np.cumsum((r[:, None] * z)[::-1], axis=0)[::-1]
    s2 = np.cumsum((r[:, None, None] * z[:, :, None] * z[:, None, :])[::-1], axis=0)[::-1]
    s0k, s1k, s2k = s0[first_idx], s1[first_idx], s2[first_idx]
    shift = eta.max()
    ll = eta[event].sum() - np.sum(d_counts * (np.log(s0k) + shift))
    mean_k = s1k / s0k[:, None]
    grad = z[event].sum(axis=0) - (d_counts[:, None] * mean_k).sum(axis=0)
    cov_k = s2k / s0k[:, None, None] - mean_k[:, :, None] * mean_k[:, None, :]
    hess = -(d_counts[:, None, None] * cov_k).sum(axis=0)
    return ll, grad, hess


def fit_cox(data, covariate_selector: str = "x*a", max_iter: int = 100,
            tol: float = 1e-8) -> CoxPH:
    """Cox model for the censoring hazard by Newton-Raphson, Breslow ties.

    Convergence is declared when the mean-score norm ||grad loglik|| / n
    falls below ``tol``.
    """
    if covariate_selector not in COVARIATE_SELECTORS:
        raise ValueError(f"unknown covariate selector {covariate_selector!r}")
    event_all = data.delta == 0
    if not event_all.any():
        raise ValueError("no events for censoring model")
    z_raw = COVARIATE_SELECTORS[covariate_selector](data.x, data.a)
    center = z_raw.mean(axis=0)
    order = np.argsort(data.y, kind="stable")
    t = data.y[order]
    z = (z_raw - center)[order]
    if np.linalg.matrix_rank(z) < z.shape[1]:
        raise np.linalg.LinAlgError("design matrix is rank deficient")
    event = event_all[order]
    ev_times, d_counts = np.unique(t[event], return_counts=True)
    first_idx = np.searchsorted(t, ev_times, side="left")
    n = t.size

    beta = np.zeros(z.shape[1])
    ll, grad, hess = _cox_derivatives(beta, z, event, first_idx, d_counts)
    gnorm = np.linalg.norm(grad) / n
    it = 0
    while gnorm > tol and it < max_iter:
        try:
            step = np.linalg.solve(-hess, grad)
        except np.linalg.LinAlgError as exc:
            raise np.linalg.LinAlgError("singular information matrix") from exc
        scale = 1.0
        while True:
            cand = beta + scale * step
            ll_c, g_c, h_c = _cox_derivatives(cand, z, event, first_idx, d_counts)
            if ll_c >= ll - 1e-12 * abs(ll) or scale < 1e-10:
                break
            scale *= 0.5
        beta, ll, grad, hess = cand, ll_c, g_c, h_c
        gnorm = np.linalg.norm(grad) / n
        it += 1
    if gnorm > tol:
        raise ConvergenceError(
            f"Cox fit did not converge in {max_iter} iterations (gradient norm {gnorm:.3e})"
        )
    try:
        std_err = np.sqrt(np.diag(np.linalg.inv(-hess)))
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError("singular information matrix") from exc

    risk = np.exp(z @ beta)
    s0 = np.cumsum(risk[::-1])[::-1][first_idx]
    cumhaz = np.cumsum(d_counts / s0)
    return CoxPH(beta, center, StepFunction(ev_times, cumhaz), covariate_selector,
                 it, float(gnorm), std_err)


def fit_censoring(data, kind: str = "km", covariate_selector: str = "x*a") -> CensorSurvival:
    if kind == "km":
        return fit_km(data)
    if kind == "cox":
        return fit_cox(data, covariate_selector)
    if kind == "none":
        return UnitSurvival()
    raise ValueError(f"unknown censoring estimator {kind!r}")
