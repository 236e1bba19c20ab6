"""Right-censored two-arm treatment data: types, validation and CSV I/O."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

SURVIVAL_FLOOR = 0.05


class DataError(ValueError):
    """Raised for malformed or invalid input data."""


@dataclass(frozen=True)
class Subject:
    x: tuple
    a: int
    y: float
    delta: int

    def __post_init__(self):
        if self.a not in (1, -1):
            raise DataError(f"arm must be +1 or -1, got {self.a}")
        if self.delta not in (0, 1):
            raise DataError(f"event indicator must be 0 or 1, got {self.delta}")
        if not (math.isfinite(self.y) and self.y >= 0):
            raise DataError(f"observed time must be finite and nonnegative, got {self.y}")


@dataclass(frozen=True, eq=False)
class Dataset:
    """Immutable column store of subjects.

    ``propensity`` holds pi(+1 | x_i) per subject; pi(-1 | x_i) is its
    complement.  Times are already truncated at ``horizon``.
    """

    x: np.ndarray
    a: np.ndarray
    y: np.ndarray
    delta: np.ndarray
    propensity: np.ndarray
    horizon: float
    covariate_names: tuple = field(default=())

    def __post_init__(self):
        x = np.atleast_2d(np.asarray(self.x, dtype=float))
        if x.shape[0] != np.size(self.y) and np.size(self.y) > 0:
            x = x.reshape(np.size(self.y), -1)
        a = np.asarray(self.a, dtype=int).ravel()
        y = np.asarray(self.y, dtype=float).ravel()
        d = np.asarray(self.delta, dtype=int).ravel()
        n = y.size
        prop = np.asarray(self.propensity, dtype=float)
        if prop.ndim == 0:
            prop = np.full(n, float(prop))
        if not (x.shape[0] == a.size == d.size == prop.size == n):
            raise DataError("column lengths disagree")
        if not np.isin(a, (1, -1)).all():
            raise DataError("arm labels must be +1 or -1")
        if not np.isin(d, (0, 1)).all():
            raise DataError("event indicator must be 0 or 1")
        if not (np.isfinite(y).all() and (y >= 0).all()):
            raise DataError("observed times must be finite and nonnegative")
        if not np.isfinite(x).all():
            raise DataError("covariates must be finite")
        if not ((prop > 0) & (prop < 1)).all():
            raise DataError("propensity scores must lie strictly inside (0, 1)")
        if not self.horizon > 0:
            raise DataError("horizon must be positive")
        if (y > self.horizon).any():
            raise DataError("observed times exceed the horizon")
        names = tuple(self.covariate_names) or tuple(f"x{k + 1}" for k in range(x.shape[1]))
        if len(names) != x.shape[1]:
            raise DataError("covariate_names length does not match covariate dimension")
        for arr in (x, a, y, d, prop):
            arr.setflags(write=False)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "delta", d)
        object.__setattr__(self, "propensity", prop)
        object.__setattr__(self, "horizon", float(self.horizon))
        object.__setattr__(self, "covariate_names", names)

    @classmethod
    def from_subjects(cls, subjects: Sequence[Subject], propensity=0.5, horizon=math.inf,
                      covariate_names=()) -> "Dataset":
        subjects = list(subjects)
        if not subjects:
            raise DataError("empty dataset")
        p = {len(s.x) for s in subjects}
        if len(p) != 1:
            raise DataError("subjects disagree on covariate dimension")
        y = np.minimum([s.y for s in subjects], horizon)
        return cls(
            x=np.array([s.x for s in subjects], dtype=float).reshape(len(subjects), -1),
            a=[s.a for s in subjects],
            y=y,
            delta=[s.delta for s in subjects],
            propensity=propensity,
            horizon=horizon,
            covariate_names=covariate_names,
        )

    def __len__(self) -> int:
        return self.y.size

    @property
    def n(self) -> int:
        return self.y.size

    @property
    def p(self) -> int:
        return self.x.shape[1]

    @property
    def subjects(self) -> list:
        return [
            Subject(tuple(self.x[i]), int(self.a[i]), float(self.y[i]), int(self.delta[i]))
            for i in range(self.n)
        ]

    def arm_propensity(self) -> np.ndarray:
        """pi(A_i | X_i) for the arm each subject actually received."""
        return np.where(self.a == 1, self.propensity, 1.0 - self.propensity)

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(self.x[idx], self.a[idx], self.y[idx], self.delta[idx],
                       self.propensity[idx], self.horizon, self.covariate_names)

    def censoring_fraction(self) -> float:
        return float(1.0 - self.delta.mean())

    def equals(self, other: "Dataset") -> bool:
        return (
            self.horizon == other.horizon
            and self.covariate_names == other.covariate_names
            and np.array_equal(self.x, other.x)
            and np.array_equal(self.a, other.a)
            and np.array_equal(self.y, other.y)
            and np.array_equal(self.delta, other.delta)
            and np.array_equal(self.propensity, other.propensity)
        )


@dataclass(frozen=True)
class WeightedSubject:
    subject: Subject
    w: float


def ipw_weights(data: Dataset, s_hat, floor: float = SURVIVAL_FLOOR) -> np.ndarray:
    """W_i = delta_i / (pi(A_i|X_i) * max(S_C(Y_i- | X_i, A_i), floor))."""
    surv = np.asarray(s_hat.at_risk(data.y, data.x, data.a), dtype=float)
    surv = np.maximum(surv, floor)
    return data.delta / (data.arm_propensity() * surv)


def attach_weights(data: Dataset, s_hat, floor: float = SURVIVAL_FLOOR) -> list:
    w = ipw_weights(data, s_hat, floor)
    return [WeightedSubject(s, float(wi)) for s, wi in zip(data.subjects, w)]


@dataclass(frozen=True)
class CsvSchema:
    """Column mapping for CSV ingestion.

    ``arm_map`` sends raw arm labels (compared as stripped strings) to +1/-1.
    When ``covariates`` is empty every column not otherwise claimed is used.
    """

    covariates: tuple = ()
    arm: str = "arm"
    time: str = "time"
    event: str = "event"
    propensity: str | None = None
    arm_map: tuple = (("1", 1), ("-1", -1))
    horizon: float = math.inf
    default_propensity: float = 0.5
    drop_unmapped_arms: bool = False

    def arm_lookup(self) -> dict:
        return {str(k).strip(): int(v) for k, v in dict(self.arm_map).items()}


ACTG175_SCHEMA = CsvSchema(
    covariates=(
        "gender", "homo", "race", "symptom", "drugs", "hemo", "str2",
        "age", "wtkg", "karnof", "cd40", "cd80",
    ),
    arm="arms",
    time="days",
    event="cens",
    arm_map=(("1", 1), ("3", -1)),
    drop_unmapped_arms=True,
)


def _to_float(cell: str, row: int, col: str) -> float:
    try:
        return float(cell)
    except (TypeError, ValueError):
        raise DataError(f"non-numeric value {cell!r} in column {col!r} at row {row}") from None


def _arm_value(raw: str, lookup: dict, row: int) -> int:
    key = raw.strip()
    if key in lookup:
        return lookup[key]
    try:
        # "1.0" should match "1"
        num = float(key)
        for k, v in lookup.items():
            try:
                if float(k) == num:
                    return v
            except ValueError:
                continue
    except ValueError:
        pass
    raise DataError(f"arm value {raw!r} outside mapping at row {row}")


def _maps(raw: str, lookup: dict) -> bool:
    try:
        _arm_value(raw, lookup, 0)
    except DataError:
        return False
    return True


def load_csv(path, schema: CsvSchema = CsvSchema()) -> Dataset:
    """Read a CSV into a validated Dataset, truncating times at the horizon.

    Row numbers in error messages count data rows from 1 (header excluded).
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"file not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = [h.strip() for h in (reader.fieldnames or [])]
        reader.fieldnames = header
        claimed = {schema.arm, schema.time, schema.event}
        if schema.propensity:
            claimed.add(schema.propensity)
        covs = list(schema.covariates) or [h for h in header if h not in claimed]
        for col in [*covs, *sorted(claimed)]:
            if col not in header:
                raise DataError(f"missing column {col!r}")
        lookup = schema.arm_lookup()
        xs, arms, ys, ds, props = [], [], [], [], []
        for row_no, row in enumerate(reader, start=1):
            if schema.drop_unmapped_arms and not _maps(row[schema.arm], lookup):
                continue
            xs.append([_to_float(row[c], row_no, c) for c in covs])
            arms.append(_arm_value(row[schema.arm], lookup, row_no))
            t = _to_float(row[schema.time], row_no, schema.time)
            if t < 0:
                raise DataError(f"negative time at row {row_no}")
            if not math.isfinite(t):
                raise DataError(f"non-finite time at row {row_no}")
            ys.append(min(t, schema.horizon))
            ev = _to_float(row[schema.event], row_no, schema.event)
            if ev not in (0.0, 1.0):
                raise DataError(f"event indicator {ev} not in {{0, 1}} at row {row_no}")
            ds.append(int(ev))
            if schema.propensity:
                pr = _to_float(row[schema.propensity], row_no, schema.propensity)
                if not 0 < pr < 1:
                    raise DataError(f"propensity {pr} outside (0, 1) at row {row_no}")
                props.append(pr)
    if not ys:
        raise DataError(f"no data rows in {path}")
    return Dataset(
        x=np.array(xs, dtype=float).reshape(len(ys), len(covs)),
        a=arms,
        y=ys,
        delta=ds,
        propensity=np.array(props) if schema.propensity else schema.default_propensity,
        horizon=schema.horizon,
        covariate_names=tuple(covs),
    )


def write_csv(data: Dataset, path, include_propensity: bool = True) -> CsvSchema:
    """Write ``data`` in the standard schema and return the schema that reads it back.

    Floats are written with ``repr`` so a round trip is exact.
    """
    names = list(data.covariate_names)
    header = [*names, "arm", "time", "event"] + (["propensity"] if include_propensity else [])
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for i in range(data.n):
            row = [repr(float(v)) for v in data.x[i]]
            row += [str(int(data.a[i])), repr(float(data.y[i])), str(int(data.delta[i]))]
            if include_propensity:
                row.append(repr(float(data.propensity[i])))
            w.writerow(row)
    return CsvSchema(
        covariates=tuple(names),
        propensity="propensity" if include_propensity else None,
        horizon=data.horizon,
    )
