import json

import numpy as np
import pytest

from robust_itr.censoring import fit_km
from robust_itr.data import ipw_weights
from robust_itr.dca import (FitResult, SolverConfig, SolverError, SubproblemError,
                            extract_inner_scalar, fit_deterministic, fit_sampled,
                            identity_sampler, solve_prox_subproblem, stationarity_gap)
from robust_itr.evaluation import right_quantile
from robust_itr.kernel import KernelModel, SurrogateLoss
from robust_itr.objectives import ConvexModel, DcObjective
from robust_itr.simgen import ScenarioSpec, generate, spawn_seeds

CFG = SolverConfig(max_outer=40)


def s1_objective(criterion, n=150, seed=0, lam=1e-2, **kw):
    d = generate(ScenarioSpec("S1", n=n, seed=seed))
    w = ipw_weights(d, fit_km(d))
    km = KernelModel.from_data(d.x)
    return DcObjective.from_data(criterion, d, w, km.gram, lam, gamma=0.5, tau=0.5, **kw)


def _quadratic(n, lam):
    z = np.zeros(n)
    return ConvexModel(np.eye(n), np.ones(n), SurrogateLoss(1.0), z, z, lam, z, 0.0)


@pytest.mark.parametrize("lam, rho", [(0.3, 2.0), (1.0, 10.0), (1e-3, 0.5)])
def test_prox_closed_form(lam, rho):
    ref = np.random.default_rng(0).normal(size=6)
    beta = solve_prox_subproblem(_quadratic(6, lam), ref, rho, inner_tol=1e-12)
    assert np.max(np.abs(beta - ref / (1 + 2 * lam * rho))) < 1e-8


def test_prox_zero_model_returns_reference():
    ref = np.random.default_rng(1).normal(size=5)
    assert np.array_equal(solve_prox_subproblem(_quadratic(5, 0.0), ref, 3.0), ref)


@pytest.mark.parametrize("criterion", ["cvar", "bpoe", "mean"])
def test_prox_gradient_contract(criterion):
    obj = s1_objective(criterion, n=60, seed=2)
    rng = np.random.default_rng(2)
    for _ in range(3):
        ref = rng.normal(size=obj.n)
        model = obj.convexified_model(obj.full_state(), ref, 0)
        rho, tol = 10.0, 1e-7
        beta = solve_prox_subproblem(model, ref, rho, tol)
        g = model.grad(beta) + (beta - ref) / rho
        f = model(beta) + (beta - ref) @ (beta - ref) / (2 * rho)
        assert np.linalg.norm(g) <= tol * (1 + abs(f))
        assert f <= model(ref)


def test_prox_iteration_cap_raises():
    obj = s1_objective("cvar", n=40, seed=3)
    model = obj.convexified_model(obj.full_state(), np.ones(obj.n), 0)
    with pytest.raises(SubproblemError) as info:
        solve_prox_subproblem(model, np.ones(obj.n), 10.0, inner_tol=1e-300, max_iter=1)
    assert info.value.beta is not None and info.value.residual > 0


def test_solver_error_after_retry():
    obj = s1_objective("cvar", n=40, seed=3)
    cfg = SolverConfig(inner_max_iter=1, inner_tol=1e-300, max_outer=3)
    with pytest.raises(SolverError, match="twice"):
        fit_deterministic(obj, cfg, beta0=np.ones(obj.n))


def test_sum_decomposition_survives_cancelling_gradients():
    # linearization gradients here reach ~2e4 while the model value stays O(1)
    seed = spawn_seeds(2024, 40)[14]
    obj = s1_objective("cvar", n=500, seed=seed, lam=1e-3, decomposition="sum")
    res = fit_sampled(obj, SolverConfig(seed=seed))
    assert res.n_iter == 200 and np.all(np.isfinite(res.beta))


@pytest.mark.parametrize("kw", [{"rho": 0.0}, {"eps": -1.0}, {"delta_nu": 0}, {"tol_step": 0.0},
                                {"max_outer": 0}])
def test_solver_config_validation(kw):
    with pytest.raises(ValueError):
        SolverConfig(**kw)


def test_increment_default():
    assert SolverConfig().increment(100) == 32
    assert SolverConfig().increment(2000) == 100
    assert SolverConfig(delta_nu=7).increment(2000) == 7


@pytest.mark.parametrize("criterion", ["cvar", "bpoe", "mean"])
def test_deterministic_descent_ledger(criterion):
    obj = s1_objective(criterion)
    res = fit_deterministic(obj, CFG)
    slack = [t["descent_slack"] for t in res.trace]
    assert max(slack) <= 10 * CFG.inner_tol
    assert obj.value(res.beta) <= obj.value(np.zeros(obj.n))
    values = [t["value"] for t in res.trace]
    assert all(b <= a + 10 * CFG.inner_tol for a, b in zip(values, values[1:]))


@pytest.mark.parametrize("criterion", ["cvar", "bpoe"])
def test_sampled_descent_ledger(criterion):
    obj = s1_objective(criterion)
    res = fit_sampled(obj, CFG)
    assert max(t["descent_slack"] for t in res.trace) <= 10 * CFG.inner_tol
    sizes = [t["N"] for t in res.trace]
    assert sizes == [32 * (i + 1) for i in range(len(sizes))]


def test_identity_sampling_reproduces_deterministic():
    obj = s1_objective("cvar", n=50, seed=4)
    cfg = SolverConfig(max_outer=25, seed=9)
    det = fit_deterministic(obj, cfg)
    samp = fit_sampled(obj, cfg, sampler=identity_sampler(obj, cfg))
    assert det.trace == samp.trace
    assert np.array_equal(det.beta, samp.beta)


def test_eps_irrelevant_when_active_set_is_singleton():
    rng = np.random.default_rng(5)
    y = np.sort(rng.uniform(1, 10, 5))
    x = rng.uniform(size=(5, 1))
    obj = DcObjective("cvar", np.full(5, 2.0), y, rng.choice([-1.0, 1.0], 5),
                      KernelModel(0.5, x).gram, 1e-2, gamma=0.5)
    a = fit_deterministic(obj, SolverConfig(eps=0.0, max_outer=30))
    b = fit_deterministic(obj, SolverConfig(eps=0.1, max_outer=30))
    assert all(t["active"] == 1 for t in b.trace)
    assert np.array_equal(a.beta, b.beta)
    assert [t["value"] for t in a.trace] == [t["value"] for t in b.trace]


def test_large_lambda_shrinks_beta():
    small = fit_deterministic(s1_objective("cvar", lam=1e-3), CFG)
    big = fit_deterministic(s1_objective("cvar", lam=1e3), CFG)
    assert np.linalg.norm(big.beta) < 1e-3
    assert np.linalg.norm(big.beta) < np.linalg.norm(small.beta)


@pytest.mark.parametrize("criterion", ["cvar", "bpoe"])
def test_converged_fit_is_stationary(criterion):
    d = generate(ScenarioSpec("S1", n=80, seed=5))
    w = ipw_weights(d, fit_km(d))
    # a narrow kernel keeps K well conditioned, so the run converges quickly
    obj = DcObjective.from_data(criterion, d, w, KernelModel(0.1, d.x).gram, 1e-2)
    cfg = SolverConfig(max_outer=1000, eps=1e-3)
    res = fit_deterministic(obj, cfg)
    assert res.converged
    assert stationarity_gap(obj, res.beta, cfg) <= 1e-4 * (1 + np.linalg.norm(res.beta))
    _, M = obj.full_objective(res.beta)
    active, _, knots = obj.epsilon_active_set(res.beta, obj.full_state(), cfg.eps)
    assert M <= set(knots.ids[active].tolist())


def test_sampled_fit_deterministic_given_seed():
    obj = s1_objective("bpoe", n=100, seed=6)
    cfg = SolverConfig(max_outer=15, seed=3)
    a, b = fit_sampled(obj, cfg), fit_sampled(obj, cfg)
    assert np.array_equal(a.beta, b.beta) and a.trace == b.trace
    c = fit_sampled(obj, SolverConfig(max_outer=15, seed=4))
    assert not np.array_equal(a.beta, c.beta)


def test_beta0_shape_checked():
    obj = s1_objective("cvar", n=20)
    with pytest.raises(ValueError, match="length"):
        fit_deterministic(obj, CFG, beta0=np.zeros(3))


def test_inner_scalar_cvar_is_right_quantile():
    rng = np.random.default_rng(7)
    y = rng.exponential(size=7)
    obj = DcObjective("cvar", np.full(7, 2.0), y, rng.choice([-1.0, 1.0], 7), np.eye(7), 1.0,
                      gamma=0.5)
    assert extract_inner_scalar(obj, np.zeros(7)) == right_quantile(y, 0.5)


def test_inner_scalar_bpoe_hand_case():
    y = np.array([1.0, 2.0, 3.0, 4.0])
    obj = DcObjective("bpoe", np.ones(4), y, np.ones(4), np.eye(4), 1.0, tau=2.0)
    beta = np.full(4, 2.0)     # margins 2 > delta, so L = 1
    g, knots = obj.knot_values(beta)
    assert g.min() == pytest.approx(0.75, abs=1e-15)
    c = extract_inner_scalar(obj, beta)
    assert 0.5 <= c <= 1.0 and c in knots.scalar
    assert c == 0.5


def test_inner_scalar_bpoe_tau_below_min():
    rng = np.random.default_rng(8)
    y = rng.uniform(1, 3, 10)
    obj = DcObjective("bpoe", rng.uniform(1, 2, 10), y, np.ones(10), np.eye(10), 1.0, tau=0.5)
    beta = rng.normal(size=10)
    g, knots = obj.knot_values(beta)
    c = extract_inner_scalar(obj, beta)
    assert c in knots.scalar
    L = obj.loss.value(obj.margins(beta))
    assert g.min() <= np.mean(L * obj.W) + 1e-15


def test_fit_result_json(tmp_path):
    res = fit_deterministic(s1_objective("bpoe", n=30), SolverConfig(max_outer=3))
    res.save(tmp_path / "fit.json")
    d = json.loads((tmp_path / "fit.json").read_text())
    assert d["beta"] == [float(b) for b in res.beta]
    assert d["config"]["seed"] == 0 and len(d["trace"]) == res.n_iter
    assert isinstance(res, FitResult) and d["criterion"] == "bpoe"
