import math

import numpy as np
import pytest

from robust_itr.censoring import UnitSurvival
from robust_itr.data import (ACTG175_SCHEMA, CsvSchema, DataError, Dataset, Subject,
                             attach_weights, ipw_weights, load_csv, write_csv)


class ConstSurv:
    def __init__(self, s):
        self.s = s

    def at_risk(self, t, x, a):
        return np.full(np.size(t), self.s)


def _write(path, text):
    path.write_text(text)
    return path


def test_load_four_rows(tmp_path):
    p = _write(tmp_path / "d.csv",
               "x1,x2,arm,time,event\n0,1,1,1.0,1\n1,0,-1,2.0,1\n2,2,1,0.5,0\n3,1,-1,3.0,1\n")
    d = load_csv(p)
    assert d.n == 4 and d.p == 2
    assert d.y.tolist() == [1.0, 2.0, 0.5, 3.0]
    assert d.delta.tolist() == [1, 1, 0, 1]
    assert d.a.tolist() == [1, -1, 1, -1]
    assert d.covariate_names == ("x1", "x2")


@pytest.mark.parametrize("text, msg", [
    ("x,arm,time,event\n0,1,1.0,1\n0,1,-1,1\n", "negative time at row 2"),
    ("x,arm,event\n0,1,1\n", "missing column 'time'"),
    ("x,arm,time,event\n0,1,abc,1\n", "non-numeric value 'abc' in column 'time' at row 1"),
    ("x,arm,time,event\n0,1,1,1\n0,2,1,1\n", "arm value '2' outside mapping at row 2"),
    ("x,arm,time,event\n0,1,1,3\n", "event indicator"),
])
def test_load_errors(tmp_path, text, msg):
    with pytest.raises(DataError, match=msg):
        load_csv(_write(tmp_path / "bad.csv", text))


def test_load_missing_file(tmp_path):
    with pytest.raises(DataError, match="file not found"):
        load_csv(tmp_path / "nope.csv")


def test_horizon_truncation(tmp_path):
    p = _write(tmp_path / "d.csv", "x,arm,time,event\n0,1,5.0,1\n0,-1,15.0,0\n")
    d = load_csv(p, CsvSchema(horizon=10.0))
    assert d.y.tolist() == [5.0, 10.0]
    assert d.horizon == 10.0


def test_actg175_schema(tmp_path):
    cols = list(ACTG175_SCHEMA.covariates)
    rng = np.random.default_rng(0)
    lines = [",".join(["pidnum", *cols, "arms", "days", "cens"])]
    arms = [0, 1, 2, 3, 1, 3, 3, 1]
    for i, arm in enumerate(arms):
        vals = [f"{v:.3f}" for v in rng.uniform(0, 100, len(cols))]
        lines.append(",".join([str(i), *vals, str(arm), str(100 + i), str(i % 2)]))
    d = load_csv(_write(tmp_path / "actg.csv", "\n".join(lines) + "\n"), ACTG175_SCHEMA)
    assert d.p == 12
    assert d.n == 6
    assert d.a.tolist() == [1, -1, 1, -1, -1, 1]


def test_propensity_column(tmp_path):
    p = _write(tmp_path / "d.csv", "x,arm,time,event,ps\n0,1,1,1,0.25\n1,-1,2,1,0.25\n")
    d = load_csv(p, CsvSchema(propensity="ps"))
    assert d.arm_propensity().tolist() == [0.25, 0.75]
    with pytest.raises(DataError, match="propensity"):
        load_csv(_write(tmp_path / "e.csv", "x,arm,time,event,ps\n0,1,1,1,1.5\n"),
                 CsvSchema(propensity="ps"))


def test_round_trip_identity(tmp_path):
    rng = np.random.default_rng(1)
    n = 30
    d = Dataset(rng.normal(size=(n, 3)), rng.choice([-1, 1], n), rng.exponential(size=n),
                rng.integers(0, 2, n), rng.uniform(0.2, 0.8, n), math.inf, ("a", "b", "c"))
    schema = write_csv(d, tmp_path / "rt.csv")
    assert load_csv(tmp_path / "rt.csv", schema).equals(d)


def test_dataset_validation():
    with pytest.raises(DataError):
        Dataset([[0.0]], [0], [1.0], [1], 0.5, math.inf)
    with pytest.raises(DataError):
        Dataset([[0.0]], [1], [1.0], [1], 1.0, math.inf)
    with pytest.raises(DataError):
        Dataset([[0.0]], [1], [11.0], [1], 0.5, 10.0)
    with pytest.raises(DataError):
        Subject((0.0,), 1, -1.0, 1)


def test_dataset_is_immutable():
    d = Dataset([[0.0], [1.0]], [1, -1], [1.0, 2.0], [1, 0], 0.5, math.inf)
    with pytest.raises(ValueError):
        d.y[0] = 5.0


def test_weights_examples():
    d = Dataset([[0.0], [1.0]], [1, -1], [1.0, 2.0], [0, 1], 0.5, math.inf)
    w = ipw_weights(d, ConstSurv(0.8))
    assert w.tolist() == [0.0, 2.5]


def test_weights_uncensored_unit_survival():
    rng = np.random.default_rng(2)
    n = 20
    prop = rng.uniform(0.1, 0.9, n)
    d = Dataset(rng.normal(size=(n, 2)), rng.choice([-1, 1], n), rng.exponential(size=n),
                np.ones(n, int), prop, math.inf)
    w = ipw_weights(d, UnitSurvival())
    assert np.array_equal(w, 1.0 / d.arm_propensity())
    half = Dataset(d.x, d.a, d.y, d.delta, 0.5, math.inf)
    assert np.all(ipw_weights(half, UnitSurvival()) == 2.0)


def test_weights_floor():
    d = Dataset([[0.0]], [1], [1.0], [1], 0.5, math.inf)
    assert ipw_weights(d, ConstSurv(0.001))[0] == pytest.approx(1 / (0.5 * 0.05))


def test_attach_weights_pairs_subjects():
    d = Dataset([[0.0], [1.0]], [1, -1], [1.0, 2.0], [0, 1], 0.5, math.inf)
    ws = attach_weights(d, ConstSurv(1.0))
    assert [w.w for w in ws] == [0.0, 2.0]
    assert ws[1].subject == Subject((1.0,), -1, 2.0, 1)
