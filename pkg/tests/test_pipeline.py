from dataclasses import replace

import numpy as np
import pytest

from robust_itr.censoring import fit_km
from robust_itr.dca import SolverConfig
from robust_itr.experiments import method_configs, run_cv, run_simulation
from robust_itr.kernel import ConstantRule, TreatmentRule
from robust_itr.pipeline import LearnConfig, held_out_criterion, learn, select_lambda
from robust_itr.simgen import ScenarioSpec, generate

QUICK = LearnConfig(solver=SolverConfig(max_outer=5))


@pytest.fixture(scope="module")
def s1():
    return generate(ScenarioSpec("S1", n=60, seed=1))


def test_learn_kernel_and_constant(s1):
    res = learn(s1, QUICK)
    assert isinstance(res.rule, TreatmentRule) and res.fit.beta.shape == (60,)
    assert res.inner_scalar in s1.y
    const = learn(s1, replace(QUICK, criterion="const-1"))
    assert isinstance(const.rule, ConstantRule) and np.isnan(const.inner_scalar)


def test_learn_cox_censoring(s1):
    res = learn(s1, replace(QUICK, criterion="bpoe", censoring="cox", cox_selector="x+a"))
    assert res.s_hat.kind == "cox"


def test_held_out_criterion_matches_objective(s1):
    cfg = replace(QUICK, criterion="cvar")
    res = learn(s1, cfg)
    from robust_itr.pipeline import build_objective

    obj, _, _ = build_objective(s1, cfg, res.s_hat)
    expected = obj.value(res.fit.beta) - obj.ridge(res.fit.beta)
    assert held_out_criterion(s1, res, res.s_hat) == pytest.approx(expected, abs=1e-12)


def test_select_lambda(s1):
    lam, scores = select_lambda(s1, replace(QUICK, solver=SolverConfig(max_outer=3)),
                                grid=(1e-3, 1e-1), folds=2)
    assert lam in (1e-3, 1e-1) and scores.shape == (2,)
    assert lam == (1e-3, 1e-1)[int(np.argmin(scores))]


def test_run_simulation_shared_data_and_determinism():
    cfgs = method_configs(QUICK, ("cvar", "const+1", "const-1"))
    a = run_simulation("S1", 40, cfgs, 2, seed=3, n_test=400)
    b = run_simulation("S1", 40, cfgs, 2, seed=3, n_test=400)
    assert [r.to_dict() for r in a] == [r.to_dict() for r in b]
    assert [r.method for r in a] == ["cvar", "const+1", "const-1"] * 2
    assert [r.replicate for r in a] == [0, 0, 0, 1, 1, 1]
    assert a[1].v_mean != a[4].v_mean


def test_run_simulation_workers_match_serial():
    cfgs = method_configs(QUICK, ("const+1", "mean"))
    serial = run_simulation("S2", 30, cfgs, 2, seed=4, n_test=300)
    pooled = run_simulation("S2", 30, cfgs, 2, seed=4, n_test=300, workers=2)
    assert [r.to_dict() for r in serial] == [r.to_dict() for r in pooled]


def test_run_cv_shares_inner_scalars(s1):
    cfgs = method_configs(replace(QUICK, solver=SolverConfig(max_outer=3)),
                          ("cvar", "bpoe", "const+1"))
    reps = run_cv(s1, cfgs, repeats=2, folds=2, seed=0)
    assert len(reps) == 6
    assert all(0 <= r.v2 for r in reps)
    again = run_cv(s1, cfgs, repeats=2, folds=2, seed=0)
    assert [r.to_dict() for r in reps] == [r.to_dict() for r in again]


def test_km_fit_on_training_only(s1):
    tr = s1.subset(np.arange(30))
    s = fit_km(tr)
    assert s.curves[1].times.max() <= tr.y.max()
