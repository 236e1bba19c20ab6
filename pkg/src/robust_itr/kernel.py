"""Gaussian-kernel decision functions and the smooth DC surrogate of I(u > 0)."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial.distance import cdist, pdist


def gram(X, bandwidth: float, Z=None) -> np.ndarray:
    """Gaussian kernel matrix exp(-||x - z||^2 / (2 bandwidth^2)).

    With ``Z`` omitted the square training Gram matrix of ``X`` is returned.
    """
    if not bandwidth > 0:
        raise ValueError(f"bandwidth must be positive, got {bandwidth}")
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Z = X if Z is None else np.atleast_2d(np.asarray(Z, dtype=float))
    if not (np.isfinite(X).all() and np.isfinite(Z).all()):
        raise ValueError("covariates must be finite")
    sq = cdist(X, Z, "sqeuclidean")
    K = np.exp(-sq / (2.0 * bandwidth**2))
    if Z is X:
        K = 0.5 * (K + K.T)
        np.fill_diagonal(K, 1.0)
    return K


def median_bandwidth(X) -> float:
    """Median pairwise distance, ignoring exact duplicates.

    Falls back to 1.0 when every row is identical.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[0] < 2:
        return 1.0
    d = pdist(X)
    d = d[d > 0]
    if d.size == 0:
        return 1.0
    return float(np.median(d))


@dataclass(frozen=True)
class SurrogateLoss:
    """Smooth ramp L = L1 - L2 with transition half-width ``delta``.

    L rises from 0 at u = -delta to 1 at u = +delta; L1 and L2 are convex
    and their derivatives are Lipschitz with modulus 1 / delta**2.
    """

    delta: float = 1.0

    def __post_init__(self):
        if not self.delta > 0:
            raise ValueError(f"delta must be positive, got {self.delta}")

    def l1(self, u):
        s = np.asarray(u, dtype=float) / self.delta
        return np.where(s <= -1.0, 0.0, np.where(s <= 0.0, 0.5 * (1.0 + s) ** 2, 0.5 + s))

    def l2(self, u):
        s = np.asarray(u, dtype=float) / self.delta
        return np.where(s <= 0.0, 0.0, np.where(s <= 1.0, 0.5 * s**2, s - 0.5))

    def dl1(self, u):
        s = np.asarray(u, dtype=float) / self.delta
        return np.where(s <= -1.0, 0.0, np.where(s <= 0.0, 1.0 + s, 1.0)) / self.delta

    def dl2(self, u):
        s = np.asarray(u, dtype=float) / self.delta
        return np.where(s <= 0.0, 0.0, np.where(s <= 1.0, s, 1.0)) / self.delta

    def d2l1(self, u):
        s = np.asarray(u, dtype=float) / self.delta
        return np.where((s > -1.0) & (s <= 0.0), 1.0, 0.0) / self.delta**2

    def d2l2(self, u):
        s = np.asarray(u, dtype=float) / self.delta
        return np.where((s > 0.0) & (s <= 1.0), 1.0, 0.0) / self.delta**2

    def value(self, u):
        """The ramp itself, evaluated branch-wise (not as L1 - L2)."""
        s = np.asarray(u, dtype=float) / self.delta
        return np.where(
            s < -1.0,
            0.0,
            np.where(
                s < 0.0,
                0.5 * (1.0 + s) ** 2,
                np.where(s < 1.0, 1.0 - 0.5 * (1.0 - s) ** 2, 1.0),
            ),
        )

    def __call__(self, u):
        return self.value(u)


def loss(u, delta: float = 1.0):
    """Return ``(L, L1, L2, dL1, dL2)`` at ``u``."""
    sl = SurrogateLoss(delta)
    return sl.value(u), sl.l1(u), sl.l2(u), sl.dl1(u), sl.dl2(u)


@dataclass(frozen=True)
class KernelModel:
    bandwidth: float
    train_x: np.ndarray

    @classmethod
    def from_data(cls, X, bandwidth: float | None = None) -> "KernelModel":
        X = np.atleast_2d(np.asarray(X, dtype=float))
        bw = median_bandwidth(X) if bandwidth is None else float(bandwidth)
        return cls(bandwidth=bw, train_x=X)

    @property
    def gram(self) -> np.ndarray:
        return gram(self.train_x, self.bandwidth)

    def features(self, x) -> np.ndarray:
        """Cross-kernel rows k(x, X_j) for new points ``x``."""
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x.reshape(1, -1)
        if x.shape[1] != self.train_x.shape[1]:
            raise ValueError(
                f"expected covariate dimension {self.train_x.shape[1]}, got {x.shape[1]}"
            )
        return gram(self.train_x, self.bandwidth, x).T


@dataclass(frozen=True)
class TreatmentRule:
    """d(x) = sign(sum_j beta_j k(x, X_j)), with exact zeros sent to +1."""

    kernel_model: KernelModel
    beta: np.ndarray

    def score(self, x) -> np.ndarray:
        return self.kernel_model.features(x) @ np.asarray(self.beta, dtype=float)

    def __call__(self, x) -> np.ndarray:
        return np.where(self.score(x) >= 0.0, 1, -1)

    def to_dict(self) -> dict:
        return {
            "kind": "kernel",
            "bandwidth": self.kernel_model.bandwidth,
            "train_x": self.kernel_model.train_x.tolist(),
            "beta": np.asarray(self.beta, dtype=float).tolist(),
        }

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def from_dict(cls, d: dict) -> "TreatmentRule":
        km = KernelModel(float(d["bandwidth"]), np.asarray(d["train_x"], dtype=float))
        return cls(km, np.asarray(d["beta"], dtype=float))

    @classmethod
    def load(cls, path) -> "TreatmentRule":
        return cls.from_dict(json.loads(Path(path).read_text()))


def decision(rule: TreatmentRule, x) -> int:
    """Treatment (+1/-1) assigned to a single covariate vector."""
    x = np.asarray(x, dtype=float).reshape(1, -1)
    return int(rule(x)[0])


class ConstantRule:
    """Assigns the same arm to everyone."""

    def __init__(self, arm: int):
        if arm not in (1, -1):
            raise ValueError("arm must be +1 or -1")
        self.arm = arm

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        n = 1 if x.ndim == 1 else x.shape[0]
        return np.full(n, self.arm, dtype=int)

    def to_dict(self) -> dict:
        return {"kind": "constant", "arm": self.arm}


class LinearRule:
    """sign(b0 + x @ b); used for oracle rules in simulations."""

    def __init__(self, intercept: float, coef):
        self.intercept = float(intercept)
        self.coef = np.asarray(coef, dtype=float)

    def __call__(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return np.where(self.intercept + x @ self.coef >= 0.0, 1, -1)

    def to_dict(self) -> dict:
        return {"kind": "linear", "intercept": self.intercept, "coef": self.coef.tolist()}


def rule_from_dict(d: dict):
    kind = d.get("kind", "kernel")
    if kind == "kernel":
        return TreatmentRule.from_dict(d)
    if kind == "constant":
        return ConstantRule(int(d["arm"]))
    if kind == "linear":
        return LinearRule(d["intercept"], d["coef"])
    raise ValueError(f"unknown rule kind {kind!r}")


def load_rule(path):
    return rule_from_dict(json.loads(Path(path).read_text()))
