"""End-to-end learner: censoring fit, weights, Gram matrix, DC fit, rule."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .censoring import CensorSurvival, fit_censoring
from .data import SURVIVAL_FLOOR, Dataset, ipw_weights
from .dca import FitResult, SolverConfig, fit_deterministic, fit_sampled
from .kernel import ConstantRule, KernelModel, SurrogateLoss, TreatmentRule, median_bandwidth
from .objectives import DcObjective, hinge_sums

log = logging.getLogger(__name__)

METHODS = ("cvar", "bpoe", "mean", "const+1", "const-1")
LAMBDA_GRID = tuple(np.logspace(-4, 0, 5))


@dataclass(frozen=True)
class LearnConfig:
    criterion: str = "cvar"
    gamma: float = 0.5
    tau: float = 0.5
    lam: float = 1e-3
    bandwidth: float | None = None      # None -> median pairwise distance
    delta: float = 1.0
    censoring: str = "km"
    cox_selector: str = "x*a"
    floor: float = SURVIVAL_FLOOR
    decomposition: str = "envelope"
    deterministic: bool = False
    solver: SolverConfig = field(default_factory=SolverConfig)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Learned:
    rule: object
    fit: FitResult | None
    s_hat: CensorSurvival | None
    config: LearnConfig

    @property
    def inner_scalar(self) -> float:
        return float("nan") if self.fit is None else self.fit.inner_scalar


def build_objective(data: Dataset, cfg: LearnConfig, s_hat: CensorSurvival | None = None):
    s_hat = s_hat or fit_censoring(data, cfg.censoring, cfg.cox_selector)
    w = ipw_weights(data, s_hat, cfg.floor)
    bw = cfg.bandwidth or median_bandwidth(data.x)
    km = KernelModel(bw, data.x)
    obj = DcObjective(cfg.criterion, w, data.y, data.a, km.gram, cfg.lam, cfg.gamma,
                      cfg.tau, SurrogateLoss(cfg.delta), cfg.decomposition)
    return obj, km, s_hat


def learn(data: Dataset, cfg: LearnConfig = LearnConfig(), s_hat=None, beta0=None) -> Learned:
    """Fit one method on ``data``.  Constant rules skip the optimizer."""
    if cfg.criterion == "const+1":
        return Learned(ConstantRule(1), None, s_hat, cfg)
    if cfg.criterion == "const-1":
        return Learned(ConstantRule(-1), None, s_hat, cfg)
    obj, km, s_hat = build_objective(data, cfg, s_hat)
    fit = (fit_deterministic if cfg.deterministic else fit_sampled)(obj, cfg.solver, beta0)
    log.info("%s fit: %d iterations, %s", cfg.criterion, fit.n_iter, fit.reason)
    return Learned(TreatmentRule(km, fit.beta), fit, s_hat, cfg)


def _folds(n: int, k: int, rng) -> list:
    perm = rng.permutation(n)
    return [np.sort(f) for f in np.array_split(perm, k)]


def select_lambda(data: Dataset, cfg: LearnConfig, grid=LAMBDA_GRID, folds: int = 5,
                  seed: int = 0) -> tuple:
    """k-fold CV over ``grid`` on the held-out value of the training criterion.

    Returns ``(best_lambda, mean held-out objective per grid point)``; lower
    is better since every criterion is written as a minimization.
    """
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    parts = _folds(data.n, folds, rng)
    scores = np.zeros(len(grid))
    for test in parts:
        train = np.setdiff1d(np.arange(data.n), test)
        tr, te = data.subset(train), data.subset(test)
        s_hat = fit_censoring(tr, cfg.censoring, cfg.cox_selector)
        beta = None
        # warm start along the grid from the strongest ridge
        for g in np.argsort(grid)[::-1]:
            c = replace(cfg, lam=float(grid[g]))
            res = learn(tr, c, s_hat, beta)
            beta = res.fit.beta
            scores[g] += held_out_criterion(te, res, s_hat) / folds
    return float(grid[int(np.argmin(scores))]), scores


def held_out_criterion(test: Dataset, learned: Learned, s_hat) -> float:
    """Unpenalized criterion of a learned decision function on new data."""
    cfg = learned.config
    w = ipw_weights(test, s_hat, cfg.floor)
    lv = SurrogateLoss(cfg.delta).value(test.a * learned.rule.score(test.x))
    c = lv * w / test.n
    y = test.y
    if cfg.criterion == "mean":
        return float(-(c @ y))
    if cfg.criterion == "cvar":
        g = -cfg.gamma * y + hinge_sums(y, c, y, np.ones_like(y))
        return float(g.min())
    ck = np.concatenate(([0.0], 1.0 / (y[y > cfg.tau] - cfg.tau)))
    return float(hinge_sums(y, c, 1.0 + ck * cfg.tau, ck).min())
