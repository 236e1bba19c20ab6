"""Command-line driver: simulate, train, evaluate, experiment, cv."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import fields, replace
from pathlib import Path

import numpy as np

from .censoring import ConvergenceError, fit_censoring
from .config import COMMANDS, ConfigError, RunConfig, load_file, parse_value, resolve
from .data import ACTG175_SCHEMA, CsvSchema, DataError, load_csv, write_csv
from .dca import SolverError, SubproblemError
from .evaluation import (boxplot_quantiles, evaluate_rule_ipw, evaluate_rule_simulation,
                         summarize)
from .experiments import method_configs, run_cv, run_simulation
from .kernel import load_rule
from .pipeline import learn, select_lambda
from .simgen import ScenarioSpec, generate

log = logging.getLogger("robust_itr")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_SOLVER = 0, 1, 2, 3
_FLAGS = {"plot_data", "deterministic", "select_lambda"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def num(x):
    """Round a float to 12 significant digits for output."""
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if not np.isfinite(x) else float(f"{x:.12g}")
    if isinstance(x, dict):
        return {k: num(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [num(v) for v in x]
    return x


def _cell(x) -> str:
    return f"{x:.12g}" if isinstance(x, (float, np.floating)) else str(x)


def write_rows(path, rows: list) -> None:
    if not rows:
        Path(path).write_text("")
        return
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(list(rows[0]))
        for r in rows:
            w.writerow([_cell(v) for v in r.values()])


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(num(obj), indent=2) + "\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="robust-itr", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for cmd in COMMANDS:
        sp = sub.add_parser(cmd)
        sp.add_argument("--config", help="key = value file; flags override it")
        for f in fields(RunConfig):
            if f.name == "command":
                continue
            flag = "--" + f.name.replace("_", "-")
            if f.name in _FLAGS:
                sp.add_argument(flag, dest=f.name, action="store_const", const="true")
            else:
                sp.add_argument(flag, dest=f.name, metavar=f.name.upper())
    return p


def config_from_args(argv) -> RunConfig:
    ns = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if ns.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    file_vals = load_file(ns.config) if ns.config else {}
    overrides = {"command": ns.command}
    for f in fields(RunConfig):
        raw = getattr(ns, f.name, None)
        if f.name != "command" and raw is not None:
            overrides[f.name] = parse_value(f.name, raw)
    return resolve(file_vals, overrides)


def _schema(cfg: RunConfig) -> CsvSchema:
    if cfg.schema == "actg175":
        return replace(ACTG175_SCHEMA, horizon=cfg.horizon)
    # an optional propensity column is picked up when present
    with Path(cfg.data).open(newline="") as fh:
        header = [h.strip() for h in next(csv.reader(fh), [])]
    return CsvSchema(propensity="propensity" if "propensity" in header else None,
                     horizon=cfg.horizon)


def _require(cfg: RunConfig, *names):
    missing = [n for n in names if getattr(cfg, n) is None]
    if missing:
        raise ConfigError(f"{cfg.command} needs --{missing[0].replace('_', '-')}")


def _load_data(cfg: RunConfig):
    _require(cfg, "data")
    if not Path(cfg.data).exists():
        raise DataError(f"file not found: {cfg.data}")
    return load_csv(cfg.data, _schema(cfg))


def cmd_simulate(cfg: RunConfig, out: Path) -> None:
    _require(cfg, "scenario")
    data = generate(ScenarioSpec(cfg.scenario, n=cfg.n, seed=cfg.seed))
    write_csv(data, out / "data.csv")
    write_json(out / "summary.json", {"scenario": cfg.scenario, "n": data.n,
                                      "censoring_fraction": data.censoring_fraction()})


def cmd_train(cfg: RunConfig, out: Path) -> None:
    data = _load_data(cfg)
    lc = cfg.learn_config()
    if cfg.select_lambda and not cfg.criterion.startswith("const"):
        lam, scores = select_lambda(data, lc, folds=cfg.folds, seed=cfg.seed)
        write_json(out / "lambda_cv.json", {"selected": lam, "scores": scores.tolist()})
        lc = replace(lc, lam=lam)
    res = learn(data, lc)
    write_json(out / "model.json", res.rule.to_dict())
    if res.fit is not None:
        fit = res.fit.to_dict()
        fit.pop("seconds")
        write_json(out / "fit.json", fit)
        res.s_hat.export_csv(out / "censoring.csv")


def cmd_evaluate(cfg: RunConfig, out: Path) -> None:
    _require(cfg, "model")
    rule = load_rule(cfg.model)
    if cfg.scenario:
        rep = evaluate_rule_simulation(ScenarioSpec(cfg.scenario), rule, cfg.gamma, cfg.tau,
                                       cfg.n_test, cfg.seed, method=Path(cfg.model).stem)
        row = rep.to_dict()
    else:
        data = _load_data(cfg)
        s_hat = fit_censoring(data, cfg.censoring, cfg.cox_selector)
        m = evaluate_rule_ipw(data, rule, s_hat, cfg.gamma, cfg.tau, cfg.alpha, cfg.c, cfg.floor)
        row = {"method": Path(cfg.model).stem, "v": m.v, "v1": m.v1, "m2": m.m2,
               "alpha": m.alpha, "c": m.c, "gamma": cfg.gamma, "tau": cfg.tau, "n": data.n}
    write_rows(out / "report.csv", [row])
    write_json(out / "report.json", row)


def _emit_reports(cfg: RunConfig, out: Path, reports: list, stem: str, keys) -> None:
    rows = [r.to_dict() for r in reports]
    write_rows(out / f"{stem}.csv", rows)
    summary = summarize(reports, keys)
    write_json(out / "summary.json", summary)
    write_rows(out / "summary.csv", [{"method": m, **v} for m, v in summary.items()])
    if cfg.plot_data:
        write_rows(out / "boxplot.csv", boxplot_quantiles(reports, keys))


def cmd_experiment(cfg: RunConfig, out: Path) -> None:
    _require(cfg, "scenario")
    configs = method_configs(cfg.learn_config(), cfg.methods)
    reports = run_simulation(cfg.scenario, cfg.n, configs, cfg.repeats, cfg.seed, cfg.n_test,
                             cfg.workers)
    _emit_reports(cfg, out, reports, "replicates", ("v_mean", "v1", "v2"))


def cmd_cv(cfg: RunConfig, out: Path) -> None:
    data = _load_data(cfg)
    configs = method_configs(cfg.learn_config(), cfg.methods)
    reports = run_cv(data, configs, cfg.repeats, cfg.folds, cfg.seed, cfg.workers)
    # v_mean / v1 / v2 carry the IPW value, lower-tail value and buffered exceedance
    _emit_reports(cfg, out, reports, "cv_repeats", ("v_mean", "v1", "v2"))


COMMAND_FUNCS = {
    "simulate": cmd_simulate, "train": cmd_train, "evaluate": cmd_evaluate,
    "experiment": cmd_experiment, "cv": cmd_cv,
}


def run(cfg: RunConfig) -> int:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg.save(out / "config.txt")
    COMMAND_FUNCS[cfg.command](cfg, out)
    return EXIT_OK


def _fail(kind: str, msg, code: int) -> int:
    print(f"robust-itr: {kind}: {msg}", file=sys.stderr)
    return code


def main(argv=None) -> int:
    try:
        cfg = config_from_args(sys.argv[1:] if argv is None else argv)
        return run(cfg)
    except (UsageError, ConfigError) as exc:
        return _fail("usage error", exc, EXIT_USAGE)
    except (DataError, FileNotFoundError) as exc:
        return _fail("data error", exc, EXIT_DATA)
    except (SolverError, SubproblemError, ConvergenceError, np.linalg.LinAlgError) as exc:
        return _fail("solver failure", exc, EXIT_SOLVER)
    except ValueError as exc:
        # remaining validation errors come from the inputs
        return _fail("data error", exc, EXIT_DATA)


if __name__ == "__main__":
    sys.exit(main())
