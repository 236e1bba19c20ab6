"""Kernelized empirical objectives in min-of-finitely-many-DC form.

For a knot k with per-subject coefficient a_k(y) = max(0, p_k - q_k y) and
offset b_k, the knot function is

    g_k(beta) = b_k + sum_i c_i L(u_i) a_k(y_i),   u = A * (K beta),

with row weights c_i = m_i W_i / N over a (multi)set of subjects.  The
objective is min_k g_k(beta) + lam beta'K beta.

  CVaR  knots alpha = Y_j:        b = -gamma Y_j, a(y) = (Y_j - y)+
  bPOE  knots c = 1/(Y_j - tau):  b = 0,          a(y) = max(0, c (tau - y) + 1)
        plus the boundary knot c = 0 with a(y) = 1

Any per-subject coefficient Abar_i >= a_k(y_i) for every knot k gives the
decomposition phi1 - max_k phi2_k with

    phi1    = sum_i c_i Abar_i L1(u_i)
    phi2_k  = -b_k + sum_i c_i [(Abar_i - a_k(y_i)) L1(u_i) + a_k(y_i) L2(u_i)],

both convex.  "sum" uses Abar_i = sum_k m_k a_k(y_i), which grows with the
number of knots; "envelope" uses Abar_i = max_k a_k(y_i), the smallest valid
choice.  The envelope keeps the curvature of phi1 on the scale of a single
knot, so proximal steps are not throttled as the sample grows.  Both give
the same objective value.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kernel import SurrogateLoss

TIE_RTOL = 1e-9
DECOMPOSITIONS = ("sum", "envelope")


@dataclass(frozen=True)
class SampleState:
    """Multiset of subject indices, stored as per-subject counts."""

    counts: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.counts, dtype=np.int64)
        if (c < 0).any():
            raise ValueError("counts must be nonnegative")
        c.setflags(write=False)
        object.__setattr__(self, "counts", c)

    @classmethod
    def full(cls, n: int) -> "SampleState":
        return cls(np.ones(n, dtype=np.int64))

    @classmethod
    def empty(cls, n: int) -> "SampleState":
        return cls(np.zeros(n, dtype=np.int64))

    @classmethod
    def from_indices(cls, n: int, idx) -> "SampleState":
        return cls(np.bincount(np.asarray(idx, dtype=np.int64), minlength=n))

    @property
    def size(self) -> int:
        return int(self.counts.sum())

    def grow(self, idx) -> "SampleState":
        return SampleState(self.counts + np.bincount(np.asarray(idx, dtype=np.int64),
                                                     minlength=self.counts.size))

    def contains(self, other: "SampleState") -> bool:
        return bool((self.counts >= other.counts).all())


@dataclass(frozen=True)
class Knots:
    ids: np.ndarray       # subject index of the knot, -1 for the bPOE boundary knot
    scalar: np.ndarray    # alpha (CVaR) or c (bPOE)
    p: np.ndarray
    q: np.ndarray
    b: np.ndarray
    mult: np.ndarray

    def __len__(self):
        return self.ids.size

    def coef(self, k: int, y) -> np.ndarray:
        return np.maximum(0.0, self.p[k] - self.q[k] * y)


def hinge_sums(y, coef, p, q):
    """S_k = sum_i coef_i max(0, p_k - q_k y_i) for every k, by prefix sums."""
    order = np.argsort(y, kind="stable")
    ys = y[order]
    c0 = np.concatenate(([0.0], np.cumsum(coef[order])))
    c1 = np.concatenate(([0.0], np.cumsum((coef * y)[order])))
    with np.errstate(divide="ignore", invalid="ignore"):
        thr = np.where(q > 0, p / np.where(q > 0, q, 1.0), np.inf)
    idx = np.searchsorted(ys, thr, side="left")
    return p * c0[idx] - q * c1[idx]


def _knot_totals(y, knots: Knots):
    """Abar_i = sum_k m_k max(0, p_k - q_k y_i) for every i."""
    with np.errstate(divide="ignore", invalid="ignore"):
        thr = np.where(knots.q > 0, knots.p / np.where(knots.q > 0, knots.q, 1.0), np.inf)
    order = np.argsort(thr, kind="stable")
    ts = thr[order]
    mp = (knots.mult * knots.p)[order]
    mq = (knots.mult * knots.q)[order]
    sp = np.concatenate((np.cumsum(mp[::-1])[::-1], [0.0]))
    sq = np.concatenate((np.cumsum(mq[::-1])[::-1], [0.0]))
    idx = np.searchsorted(ts, y, side="right")
    return np.maximum(sp[idx] - y * sq[idx], 0.0)


def _knot_envelope(y, knots: Knots, chunk: int = 512):
    """Astar_i = max_k max(0, p_k - q_k y_i) over knots with positive multiplicity."""
    keep = knots.mult > 0
    p, q = knots.p[keep], knots.q[keep]
    out = np.zeros(y.size)
    for s in range(0, p.size, chunk):
        block = p[s:s + chunk, None] - q[s:s + chunk, None] * y[None, :]
        np.maximum(out, block.max(axis=0), out=out)
    return out


class ConvexModel:
    """phi1(beta) - [phi2_k(ref) + <grad phi2_k(ref), beta - ref>] + lam beta'K beta.

    phi1 = sum_i (P_i L1(u_i) + Q_i L2(u_i)), with P, Q >= 0 already
    carrying the row weights.
    """

    def __init__(self, K, arms, loss: SurrogateLoss, P, Q, lam, lin_grad, lin_const,
                 basis=None):
        self.K = K
        self.basis = basis
        self.arms = arms
        self.loss = loss
        self.P = P
        self.Q = Q
        self.lam = lam
        self.lin_grad = lin_grad
        self.lin_const = lin_const
        # size of the two gradient pieces that cancel near the solution
        self.grad_scale = float(np.linalg.norm(lin_grad))

    def value(self, beta, Kb=None):
        Kb = self.K @ beta if Kb is None else Kb
        u = self.arms * Kb
        phi1 = self.P @ self.loss.l1(u) + self.Q @ self.loss.l2(u)
        return phi1 - self.lin_const - self.lin_grad @ beta + self.lam * beta @ Kb

    def grad(self, beta, Kb=None):
        Kb = self.K @ beta if Kb is None else Kb
        u = self.arms * Kb
        v = self.arms * (self.P * self.loss.dl1(u) + self.Q * self.loss.dl2(u))
        return self.K @ v - self.lin_grad + 2.0 * self.lam * Kb

    def hess(self, beta, Kb=None):
        Kb = self.K @ beta if Kb is None else Kb
        u = self.arms * Kb
        d = self.P * self.loss.d2l1(u) + self.Q * self.loss.d2l2(u)
        rows = np.flatnonzero(d)
        H = 2.0 * self.lam * self.K
        if rows.size:
            Kr = self.K[:, rows]
            H = H + (Kr * d[rows]) @ Kr.T
        return H

    def hess_reduced(self, beta, Kb=None):
        """Hessian restricted to the span of ``basis = (U, evals)`` of K."""
        U, ev = self.basis
        Kb = self.K @ beta if Kb is None else Kb
        u = self.arms * Kb
        d = self.P * self.loss.d2l1(u) + self.Q * self.loss.d2l2(u)
        rows = np.flatnonzero(d)
        Ur = U[rows] * ev
        H = (Ur.T * d[rows]) @ Ur
        H[np.diag_indices_from(H)] += 2.0 * self.lam * ev
        return H

    def __call__(self, beta):
        return self.value(beta)


class DcObjective:
    """Empirical CVaR, bPOE or mean criterion for a kernel decision function."""

    def __init__(self, criterion: str, weights, times, arms, gram, lam: float,
                 gamma: float = 0.5, tau: float = 0.5, loss: SurrogateLoss | None = None,
                 decomposition: str = "envelope"):
        criterion = criterion.lower()
        if criterion not in ("cvar", "bpoe", "mean"):
            raise ValueError(f"unknown criterion {criterion!r}")
        if not lam > 0:
            raise ValueError("lambda must be positive")
        if criterion == "cvar" and not 0 < gamma < 1:
            raise ValueError("gamma must lie in (0, 1)")
        if criterion == "bpoe" and not tau > 0:
            raise ValueError("tau must be positive")
        if decomposition not in DECOMPOSITIONS:
            raise ValueError(f"unknown decomposition {decomposition!r}")
        self.criterion = criterion
        self.decomposition = decomposition
        self.W = np.asarray(weights, dtype=float)
        self.Y = np.asarray(times, dtype=float)
        self.A = np.asarray(arms, dtype=float)
        self.K = np.asarray(gram, dtype=float)
        self.lam = float(lam)
        self.gamma = float(gamma)
        self.tau = float(tau)
        self.loss = loss or SurrogateLoss(1.0)
        self._basis = None
        n = self.Y.size
        if not (self.W.size == self.A.size == n and self.K.shape == (n, n)):
            raise ValueError("weights, times, arms and gram sizes disagree")
        if (self.W < 0).any():
            raise ValueError("weights must be nonnegative")

    @classmethod
    def from_data(cls, criterion, data, weights, gram, lam, gamma=0.5, tau=0.5, delta=1.0,
                  decomposition="envelope"):
        return cls(criterion, weights, data.y, data.a, gram, lam, gamma, tau,
                   SurrogateLoss(delta), decomposition)

    @property
    def n(self) -> int:
        return self.Y.size

    def basis(self, rtol: float = 1e-12):
        """Eigenpairs of K with eigenvalue above ``rtol`` times the largest."""
        if self._basis is None:
            ev, U = np.linalg.eigh(self.K)
            keep = ev > rtol * ev[-1]
            self._basis = (np.ascontiguousarray(U[:, keep]), ev[keep])
        return self._basis

    def full_state(self) -> SampleState:
        return SampleState.full(self.n)

    # ---- pieces -------------------------------------------------------

    def ridge(self, beta) -> float:
        return self.lam * float(beta @ (self.K @ beta))

    def margins(self, beta) -> np.ndarray:
        return self.A * (self.K @ beta)

    def row_weights(self, state: SampleState) -> np.ndarray:
        N = state.size
        if N == 0:
            raise ValueError("empty sample state")
        return state.counts * self.W / N

    def knots(self, state: SampleState | None = None) -> Knots:
        state = state or self.full_state()
        m = state.counts
        if self.criterion == "cvar":
            ids = np.flatnonzero(m)
            y = self.Y[ids]
            return Knots(ids, y, y, np.ones_like(y), -self.gamma * y, m[ids].astype(float))
        if self.criterion == "bpoe":
            ids = np.flatnonzero((m > 0) & (self.Y > self.tau))
            c = 1.0 / (self.Y[ids] - self.tau)
            return Knots(
                np.concatenate((ids, [-1])),
                np.concatenate((c, [0.0])),
                np.concatenate((c * self.Y[ids], [1.0])),
                np.concatenate((c, [0.0])),
                np.zeros(ids.size + 1),
                np.concatenate((m[ids].astype(float), [1.0])),
            )
        # mean: one artificial knot, no inner variable
        return Knots(np.array([-1]), np.array([0.0]), np.array([0.0]), np.array([0.0]),
                     np.array([0.0]), np.array([1.0]))

    def knot_values(self, beta, state: SampleState | None = None, Kb=None):
        """Per-knot values g_k(beta) (without the ridge term) and the knots."""
        state = state or self.full_state()
        knots = self.knots(state)
        Kb = self.K @ beta if Kb is None else Kb
        lv = self.loss.value(self.A * Kb)
        c = self.row_weights(state) * lv
        if self.criterion == "mean":
            return np.array([-(c @ self.Y)]), knots
        return knots.b + hinge_sums(self.Y, c, knots.p, knots.q), knots

    def value(self, beta, state: SampleState | None = None) -> float:
        beta = np.asarray(beta, dtype=float)
        Kb = self.K @ beta
        g, _ = self.knot_values(beta, state, Kb)
        return float(g.min() + self.lam * beta @ Kb)

    def full_objective(self, beta):
        """V(beta) and the set M(beta) of minimizing knots (subject ids; -1 = c0)."""
        beta = np.asarray(beta, dtype=float)
        Kb = self.K @ beta
        g, knots = self.knot_values(beta, None, Kb)
        gmin = g.min()
        tie = g <= gmin + TIE_RTOL * max(1.0, abs(gmin))
        return float(gmin + self.lam * beta @ Kb), set(knots.ids[tie].tolist())

    def sampled_objective(self, beta, state: SampleState) -> float:
        return self.value(beta, state)

    def mean_objective(self, beta) -> float:
        beta = np.asarray(beta, dtype=float)
        Kb = self.K @ beta
        lv = self.loss.value(self.A * Kb)
        return float(-np.mean(lv * self.W * self.Y) + self.lam * beta @ Kb)

    def psi(self, beta, alpha: float, i: int) -> float:
        """alpha gamma - L(A_i K_i'beta) W_i (alpha - Y_i)+ (CVaR only)."""
        if self.criterion != "cvar":
            raise ValueError("psi is defined for the CVaR criterion")
        u = self.A[i] * (self.K[i] @ beta)
        lv = float(self.loss.l1(u) - self.loss.l2(u))
        return alpha * self.gamma - lv * self.W[i] * max(alpha - self.Y[i], 0.0)

    def epsilon_active_set(self, beta, state: SampleState, eps: float):
        """Positions (into ``self.knots(state)``) within ``eps`` of the sampled minimum."""
        if eps < 0:
            raise ValueError("eps must be nonnegative")
        g, knots = self.knot_values(beta, state)
        return np.flatnonzero(g <= g.min() + eps), g, knots

    def inner_scalar(self, beta) -> float:
        """alpha-hat or c-hat attaining the full-data inner minimum (smallest under ties)."""
        if self.criterion == "mean":
            return float("nan")
        g, knots = self.knot_values(np.asarray(beta, dtype=float))
        gmin = g.min()
        tie = g <= gmin + TIE_RTOL * max(1.0, abs(gmin))
        return float(knots.scalar[tie].min())

    def ybar(self, state: SampleState | None = None) -> np.ndarray:
        """Ybar_i = sum over the multiset of (Y_k - Y_i)+ (CVaR aggregates)."""
        state = state or self.full_state()
        ids = np.flatnonzero(state.counts)
        y = self.Y[ids]
        knots = Knots(ids, y, y, np.ones_like(y), np.zeros_like(y),
                      state.counts[ids].astype(float))
        return _knot_totals(self.Y, knots)

    def yhat(self, j: int, state: SampleState | None = None) -> np.ndarray:
        """Yhat_{i,j}: Ybar_i with one copy of knot j left out."""
        return self.ybar(state) - np.maximum(self.Y[j] - self.Y, 0.0)

    # ---- DC decomposition --------------------------------------------

    def common_coef(self, knots: Knots) -> np.ndarray:
        """Per-subject coefficient of L1 shared by phi1 and every phi2_k."""
        if self.decomposition == "sum":
            return _knot_totals(self.Y, knots)
        return _knot_envelope(self.Y, knots)

    def _pq(self, state: SampleState, knots: Knots, abar=None):
        c = self.row_weights(state)
        if self.criterion == "mean":
            return np.zeros_like(c), c * self.Y
        abar = self.common_coef(knots) if abar is None else abar
        return c * abar, np.zeros_like(c)

    def _rs(self, state: SampleState, knots: Knots, k: int, abar=None):
        c = self.row_weights(state)
        if self.criterion == "mean":
            return c * self.Y, np.zeros_like(c)
        abar = self.common_coef(knots) if abar is None else abar
        ak = knots.coef(k, self.Y)
        return c * np.maximum(abar - ak, 0.0), c * ak

    def phi1(self, beta, state: SampleState | None = None) -> float:
        state = state or self.full_state()
        P, Q = self._pq(state, self.knots(state))
        u = self.margins(beta)
        return float(P @ self.loss.l1(u) + Q @ self.loss.l2(u))

    def phi2(self, beta, k: int, state: SampleState | None = None) -> float:
        state = state or self.full_state()
        knots = self.knots(state)
        R, S = self._rs(state, knots, k)
        u = self.margins(beta)
        return float(-knots.b[k] + R @ self.loss.l1(u) + S @ self.loss.l2(u))

    def phi2_grad(self, beta, k: int, state: SampleState | None = None) -> np.ndarray:
        state = state or self.full_state()
        knots = self.knots(state)
        R, S = self._rs(state, knots, k)
        u = self.margins(beta)
        return self.K @ (self.A * (R * self.loss.dl1(u) + S * self.loss.dl2(u)))

    def dc_value(self, beta, state: SampleState | None = None) -> float:
        """phi1 + ridge - max_k phi2_k, evaluated term by term."""
        state = state or self.full_state()
        knots = self.knots(state)
        P, Q = self._pq(state, knots)
        u = self.margins(beta)
        l1, l2 = self.loss.l1(u), self.loss.l2(u)
        phi1 = P @ l1 + Q @ l2
        c = self.row_weights(state)
        if self.criterion == "mean":
            phi2 = np.array([c @ (self.Y * l1)])
        else:
            abar = self.common_coef(knots)
            phi2 = np.array([
                -knots.b[k] + (c * (abar - knots.coef(k, self.Y))) @ l1
                + (c * knots.coef(k, self.Y)) @ l2
                for k in range(len(knots))
            ])
        return float(phi1 + self.ridge(beta) - phi2.max())

    def convexified_model(self, state: SampleState, beta_ref, k: int) -> ConvexModel:
        """Convex majorant built by linearizing phi2_k at ``beta_ref``."""
        beta_ref = np.asarray(beta_ref, dtype=float)
        knots = self.knots(state)
        abar = None if self.criterion == "mean" else self.common_coef(knots)
        P, Q = self._pq(state, knots, abar)
        R, S = self._rs(state, knots, k, abar)
        u = self.margins(beta_ref)
        phi2_ref = -knots.b[k] + R @ self.loss.l1(u) + S @ self.loss.l2(u)
        g = self.K @ (self.A * (R * self.loss.dl1(u) + S * self.loss.dl2(u)))
        return ConvexModel(self.K, self.A, self.loss, P, Q, self.lam, g,
                           phi2_ref - g @ beta_ref, basis=self.basis())
