"""Empirical value functions, IPW metrics and brute-force tail oracles."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .data import SURVIVAL_FLOOR, Dataset, ipw_weights
from .objectives import hinge_sums
from .simgen import ScenarioSpec, generate_potential_outcomes


def _values(t) -> np.ndarray:
    t = np.asarray(t, dtype=float).ravel()
    if t.size == 0:
        raise ValueError("empty sample")
    return t


def empirical_v_mean(t) -> float:
    return float(np.mean(_values(t)))


def right_quantile(t, gamma: float) -> float:
    """inf{a : F_n(a) > gamma}, the order statistic T_(floor(gamma n) + 1)."""
    t = np.sort(_values(t))
    return float(t[min(int(math.floor(gamma * t.size)), t.size - 1)])


def empirical_v1(t, gamma: float) -> float:
    """Lower-tail mass mean[T I{T < Q}] + (gamma - F_n(Q-)) Q at the right quantile Q.

    The second term splits the atom at Q so that exactly a gamma fraction of
    probability is counted; for continuous data it is below 1/n in weight.
    """
    if not 0 < gamma < 1:
        raise ValueError("gamma must lie in (0, 1)")
    t = _values(t)
    q = right_quantile(t, gamma)
    below = t < q
    return float(np.mean(np.where(below, t, 0.0)) + (gamma - below.mean()) * q)


def cvar_oracle(t, gamma: float, weights=None, chunk: int = 2048) -> float:
    """sup_a mean[w (a gamma - (a - T)+)] by checking every order statistic.

    The objective is concave and piecewise affine in ``a`` with breakpoints
    at the sample values, so the maximum sits at one of them.
    """
    if not 0 < gamma < 1:
        raise ValueError("gamma must lie in (0, 1)")
    t = _values(t)
    w = np.ones_like(t) if weights is None else np.asarray(weights, dtype=float)
    n = t.size
    cand = np.unique(t[w > 0]) if (w > 0).any() else np.array([0.0])
    best = -math.inf
    for s in range(0, cand.size, chunk):
        a = cand[s:s + chunk, None]
        vals = (a[:, 0] * gamma * w.sum() - (w * np.maximum(a - t, 0.0)).sum(axis=1)) / n
        best = max(best, float(vals.max()))
    return best


def argmax_alpha(t, gamma: float, weights=None) -> float:
    """Smallest maximizer of the cvar_oracle objective."""
    t = _values(t)
    w = np.ones_like(t) if weights is None else np.asarray(weights, dtype=float)
    cand = np.unique(t[w > 0])
    if cand.size == 0:
        return 0.0
    vals = cand * gamma * w.sum() - hinge_sums(t, w, cand, np.ones_like(cand))
    return float(cand[np.argmax(vals >= vals.max() - 1e-12 * max(1.0, abs(vals.max())))])


def bpoe_inner(t, tau: float, c, weights=None) -> np.ndarray:
    """mean[w max(0, c (tau - T) + 1)] for each c."""
    t = _values(t)
    w = np.ones_like(t) if weights is None else np.asarray(weights, dtype=float)
    c = np.atleast_1d(np.asarray(c, dtype=float))
    return hinge_sums(t, w, 1.0 + c * tau, c) / t.size


def bpoe_knots(t, tau: float) -> np.ndarray:
    t = _values(t)
    return np.concatenate(([0.0], np.unique(1.0 / (t[t > tau] - tau))))


def bpoe_oracle(t, tau: float) -> float:
    """1 - min over the knots c of mean[max(0, c (tau - T) + 1)].

    Returns 1 when tau <= min T and 0 when tau > mean T.
    """
    t = _values(t)
    if tau <= t.min():
        return 1.0
    if tau > t.mean():
        return 0.0
    inner = bpoe_inner(t, tau, bpoe_knots(t, tau)).min()
    return float(min(1.0, max(0.0, 1.0 - inner)))


def bpoe_scan(t, tau: float) -> tuple:
    """Solve E[T | T in the lowest p-fraction] = tau by a sorted scan.

    Returns ``(1 - p, q)`` with q the largest order statistic inside the
    lowest p-fraction.  ``1 - p`` equals ``bpoe_oracle`` on empirical data.
    """
    t = np.sort(_values(t))
    n = t.size
    if tau <= t[0]:
        return 1.0, float(t[0])
    csum = np.concatenate(([0.0], np.cumsum(t)))
    above = np.flatnonzero(csum[1:] / np.arange(1, n + 1) > tau)
    if above.size == 0:
        return 0.0, float(t[-1])
    k = int(above[0])
    # tail mean over mass m in [k, k+1] is (S_k + (m - k) t_k) / m
    mass = (k * t[k] - csum[k]) / (t[k] - tau)
    # q is the largest order statistic carrying part of that mass
    q = t[max(int(math.ceil(mass)) - 1, 0)]
    return float(1.0 - mass / n), float(q)


@dataclass
class EvalReport:
    method: str
    v_mean: float
    v1: float
    v2: float
    gamma: float
    tau: float
    n_test: int
    replicate: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


def evaluate_values(t, gamma: float, tau: float, method: str = "", replicate: int = 0) -> EvalReport:
    t = _values(t)
    return EvalReport(method, empirical_v_mean(t), empirical_v1(t, gamma), bpoe_oracle(t, tau),
                      gamma, tau, t.size, replicate)


def evaluate_rule_simulation(spec: ScenarioSpec, rule, gamma: float = 0.5, tau: float = 0.5,
                             n_test: int = 10_000, seed: int = 0, method: str = "",
                             replicate: int = 0) -> EvalReport:
    t = generate_potential_outcomes(spec, rule, n_test, seed)
    return evaluate_values(t, gamma, tau, method, replicate)


def summarize(reports, keys=("v_mean", "v1", "v2")) -> dict:
    """Per-method mean, sd and count over replications."""
    out = {}
    for m in dict.fromkeys(r.method for r in reports):
        rows = [r for r in reports if r.method == m]
        entry = {"n_rep": len(rows)}
        for k in keys:
            v = np.array([getattr(r, k) for r in rows], dtype=float)
            entry[f"{k}_mean"] = float(v.mean())
            entry[f"{k}_sd"] = float(v.std(ddof=1)) if v.size > 1 else 0.0
        out[m] = entry
    return out


def boxplot_quantiles(reports, keys=("v_mean", "v1", "v2")) -> list:
    """Five-number summaries per method and metric."""
    rows = []
    for m in dict.fromkeys(r.method for r in reports):
        for k in keys:
            v = np.array([getattr(r, k) for r in reports if r.method == m], dtype=float)
            q = np.quantile(v, [0.0, 0.25, 0.5, 0.75, 1.0])
            rows.append({"method": m, "metric": k, "min": q[0], "q1": q[1], "median": q[2],
                         "q3": q[3], "max": q[4]})
    return rows


@dataclass
class IpwMetrics:
    v: float
    v1: float
    m2: float
    alpha: float
    c: float


def evaluate_rule_ipw(data: Dataset, rule, s_hat, gamma: float = 0.5, tau: float = 0.5,
                      alpha_hat: float | None = None, c_hat: float | None = None,
                      floor: float = SURVIVAL_FLOOR) -> IpwMetrics:
    """IPW value, lower-tail value and buffered exceedance of ``rule`` on ``data``.

    With ``alpha_hat`` (``c_hat``) omitted the tail metric is optimized over
    its inner scalar instead of plugging in a fitted one.
    """
    match = (np.asarray(rule(data.x)).ravel() == data.a).astype(float)
    w = ipw_weights(data, s_hat, floor)     # Delta / (pi S_C)
    ind = match / data.arm_propensity()     # I{A = d(X)} / pi
    y = data.y
    n = data.n
    v = float(np.sum(match * w * y) / n)
    if alpha_hat is None:
        # Delta/S_C replaces the unit weight inside the hinge
        alpha_hat = _ipw_alpha(y, gamma, ind, match * w)
    a = float(alpha_hat)
    v1 = float(np.sum(ind * a * gamma - match * w * np.maximum(a - y, 0.0)) / n)
    if c_hat is None:
        knots = bpoe_knots(y, tau)
        vals = hinge_sums(y, match * w, 1.0 + knots * tau, knots) / n
        c_hat = float(knots[int(np.argmin(vals))])
    c = float(c_hat)
    m2 = float(np.sum(match * w * np.maximum(0.0, c * (tau - y) + 1.0)) / n)
    return IpwMetrics(v, v1, m2, a, c)


def _ipw_alpha(y, gamma, ind, wh) -> float:
    cand = np.unique(y[wh > 0])
    if cand.size == 0:
        return 0.0
    vals = cand * gamma * ind.sum() - hinge_sums(y, wh, cand, np.ones_like(cand))
    top = vals.max()
    return float(cand[np.argmax(vals >= top - 1e-12 * max(1.0, abs(top)))])
