"""Command-line entry point.

Every subcommand accepts ``--config FILE.json``; values given as flags
override the file, which overrides the built-in defaults.  The effective
settings are written into every JSON artifact.  Exit status is 0 on
success, 1 on bad input or I/O errors, and 3 when a solver stopped before
meeting its tolerance (its outputs are still written).
"""

from __future__ import annotations

import argparse
import json
import sys
from collections.abc import Sequence
from pathlib import Path
from typing import Any

import numpy as np

from . import data_model as dm
from .inference import SOLVERS, RegressionModel, impute, predict_batch, solve_envelope
from .lda import LdaModel, classify_batch, em_rnda_train
from .moments import MomentEnvelope, build_envelope
from .regression import DivergenceError

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_NOT_CONVERGED = 3

DEFAULTS: dict[str, dict[str, Any]] = {
    "generate-missing": {"kind": "mcar", "p": 0.0, "a": 0.0, "b": 0.0, "columns": None, "seed": 0,
                         "missing_token": "NA"},
    "estimate-moments": {"k": 30, "c": 2.0, "seed": 0, "threads": 1, "missing_token": "NA"},
    "train-regression": {"solver": "pga", "lam": 1.0, "c": 2.0, "k": 30, "rho": 1.0, "iters": None,
                         "tol": None, "seed": 0, "threads": 1, "missing_token": "NA"},
    "train-lda": {"k": 5, "iters": 300, "alpha": 0.05, "delta": None, "n_mc": 512, "c": 2.0,
                  "em_rounds": 5, "seed": 0, "missing_token": "NA"},
    "predict": {"missing_token": "NA", "threads": 1},
    "impute": {"solver": "pga", "lam": 1.0, "c": 2.0, "k": 30, "rho": 1.0, "iters": None, "seed": 0,
               "threads": 1, "missing_token": "NA"},
    "evaluate": {"task": "regression", "truth_column": None, "pred_column": None,
                 "missing_token": "NA"},
}


class UsageError(Exception):
    pass


# --------------------------------------------------------------------------
# helpers
# --------------------------------------------------------------------------


def _effective(cmd: str, ns: argparse.Namespace) -> dict[str, Any]:
    cfg = dict(DEFAULTS[cmd])
    if getattr(ns, "config", None):
        with open(ns.config, encoding="utf-8") as fh:
            from_file = json.load(fh)
        if not isinstance(from_file, dict):
            raise UsageError("config file must hold a JSON object")
        unknown = set(from_file) - set(cfg)
        if unknown:
            raise UsageError(f"unknown config keys for {cmd}: {sorted(unknown)}")
        cfg.update(from_file)
        ns.explicit = set(from_file)
    else:
        ns.explicit = set()
    for key in DEFAULTS[cmd]:
        if hasattr(ns, key):
            cfg[key] = getattr(ns, key)
            ns.explicit.add(key)
    return cfg


def _validate(cfg: dict[str, Any]) -> None:
    checks = {
        "lam": lambda v: v > 0,
        "c": lambda v: v >= 0,
        "k": lambda v: int(v) >= 1,
        "rho": lambda v: v > 0,
        "iters": lambda v: v is None or int(v) >= 1,
        "seed": lambda v: int(v) >= 0,
        "threads": lambda v: int(v) >= 1,
        "alpha": lambda v: v > 0,
        "n_mc": lambda v: int(v) >= 1,
        "delta": lambda v: v is None or v > 0,
        "p": lambda v: 0 <= v <= 1,
        "em_rounds": lambda v: int(v) >= 1,
    }
    for key, ok in checks.items():
        if key in cfg and not ok(cfg[key]):
            raise UsageError(f"invalid value for {key}: {cfg[key]!r}")
    if cfg.get("solver") is not None and cfg["solver"] not in SOLVERS:
        raise UsageError(f"unknown solver {cfg['solver']!r}")


def _split_target(m: dm.MaskedMatrix, name: str):
    if name not in m.column_names:
        raise UsageError(f"column {name!r} not in data (columns: {list(m.column_names)})")
    j = m.column_names.index(name)
    feats = m.columns([i for i in range(m.n_cols) if i != j])
    return feats, (m.values[:, j], m.mask[:, j])


def _select(m: dm.MaskedMatrix, names: Sequence[str]) -> dm.MaskedMatrix:
    missing = [n for n in names if n not in m.column_names]
    if missing:
        raise UsageError(f"data lacks model columns {missing}")
    return m.columns([m.column_names.index(n) for n in names])


def _write_json(path: str, doc: dict) -> None:
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _write_jsonl(path: str, cfg: dict, records) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"config": cfg}, sort_keys=True) + "\n")
        fh.writelines(json.dumps(rec, sort_keys=True) + "\n" for rec in records)


def _write_column(path: str, name: str, values) -> None:
    m = dm.MaskedMatrix(np.asarray(values, dtype=float)[:, None], np.ones((len(values), 1), bool), (name,))
    dm.write_csv(path, m)


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------


def cmd_generate_missing(ns) -> int:
    cfg = _effective("generate-missing", ns)
    _validate(cfg)
    m = dm.load_csv(ns.input, cfg["missing_token"])
    if cfg["kind"] == "mcar":
        out = dm.apply_mcar(m, dm.MissingnessSpec.mcar(cfg["p"], cfg["seed"]))
    else:
        spec = dm.MissingnessSpec.mnar(cfg["a"], cfg["b"], cfg["seed"])
        cols = None
        if cfg["columns"]:
            cols = [m.column_names.index(c) if c in m.column_names else int(c) for c in cfg["columns"]]
        out = dm.apply_mnar(m, spec, cols)
    dm.write_csv(ns.output, out)
    print(json.dumps({"missing_fraction": out.missing_fraction(), "config": cfg}, sort_keys=True))
    return EXIT_OK


def cmd_estimate_moments(ns) -> int:
    cfg = _effective("estimate-moments", ns)
    _validate(cfg)
    m = dm.load_csv(ns.data, cfg["missing_token"])
    if ns.target:
        feats, y = _split_target(m, ns.target)
    else:
        feats, y = m, None
    env = build_envelope(feats, y, k=int(cfg["k"]), c=float(cfg["c"]), seed=int(cfg["seed"]),
                         threads=int(cfg["threads"]), target_name=ns.target or "y")
    doc = env.to_dict()
    doc["config"] = cfg
    _write_json(ns.output, doc)
    return EXIT_OK


def _regression_env(ns, cfg) -> MomentEnvelope:
    if ns.envelope:
        doc = json.loads(Path(ns.envelope).read_text(encoding="utf-8"))
        doc.pop("config", None)
        env = MomentEnvelope.from_dict(doc)
        if "c" in ns.explicit:
            env = env.with_c(float(cfg["c"]))
        return env
    if not (ns.data and ns.target):
        raise UsageError("train-regression needs DATA and --target, or --envelope")
    m = dm.load_csv(ns.data, cfg["missing_token"])
    feats, y = _split_target(m, ns.target)
    return build_envelope(feats, y, k=int(cfg["k"]), c=float(cfg["c"]), seed=int(cfg["seed"]),
                          threads=int(cfg["threads"]), target_name=ns.target)


def cmd_train_regression(ns) -> int:
    cfg = _effective("train-regression", ns)
    _validate(cfg)
    env = _regression_env(ns, cfg)
    try:
        state, report = solve_envelope(env, float(cfg["lam"]), cfg["solver"],
                                       T=None if cfg["iters"] is None else int(cfg["iters"]),
                                       rho=float(cfg["rho"]), tol=cfg["tol"])
    except DivergenceError as exc:
        if ns.trace:
            _write_jsonl(ns.trace, cfg, [{"error": str(exc), "iteration": exc.iteration}])
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    summary = report.summary()
    summary.pop("wall_time", None)
    model = RegressionModel.from_state(state, env, metadata={"config": cfg, "solver": summary})
    _write_json(ns.output, model.to_dict())
    if ns.trace:
        _write_jsonl(ns.trace, cfg, report.records())
    if not report.converged:
        print(f"warning: {cfg['solver']} did not reach its tolerance in {report.iterations} iterations",
              file=sys.stderr)
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def cmd_train_lda(ns) -> int:
    cfg = _effective("train-lda", ns)
    _validate(cfg)
    m = dm.load_csv(ns.data, cfg["missing_token"])
    feats, (yv, ym) = _split_target(m, ns.label)
    y = np.where(ym, yv, np.nan)
    model = em_rnda_train(
        feats, y, T_em=int(cfg["em_rounds"]), seed=int(cfg["seed"]), k=int(cfg["k"]),
        T=int(cfg["iters"]), alpha=float(cfg["alpha"]), delta=cfg["delta"], n_mc=int(cfg["n_mc"]),
        c=float(cfg["c"]),
    )
    doc = model.to_dict()
    doc["config"] = cfg
    doc["label_name"] = ns.label
    _write_json(ns.output, doc)
    if ns.trace:
        _write_jsonl(ns.trace, cfg, ({"iteration": t, "objective": v, "gradient_calls": g}
                                     for t, (v, g) in enumerate(zip(model.loss_trace, model.grad_calls))))
    return EXIT_OK


def _load_model(path: str):
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    doc.pop("config", None)
    doc.pop("label_name", None)
    if doc.get("kind") == "lda":
        return LdaModel.from_dict(doc)
    return RegressionModel.from_dict(doc)


def cmd_predict(ns) -> int:
    cfg = _effective("predict", ns)
    _validate(cfg)
    model = _load_model(ns.model)
    m = _select(dm.load_csv(ns.data, cfg["missing_token"]), model.feature_names)
    if isinstance(model, LdaModel):
        _write_column(ns.output, "label", classify_batch(model, m))
    else:
        _write_column(ns.output, model.target_name, predict_batch(model, m, threads=int(cfg["threads"])))
    return EXIT_OK


def cmd_impute(ns) -> int:
    cfg = _effective("impute", ns)
    _validate(cfg)
    m = dm.load_csv(ns.data, cfg["missing_token"])
    filled = impute(m, lam=float(cfg["lam"]), solver=cfg["solver"], k=int(cfg["k"]), c=float(cfg["c"]),
                    seed=int(cfg["seed"]), T=None if cfg["iters"] is None else int(cfg["iters"]),
                    rho=float(cfg["rho"]), threads=int(cfg["threads"]))
    dm.write_csv(ns.output, dm.MaskedMatrix(filled, np.ones(filled.shape, bool), m.column_names))
    return EXIT_OK


def _column(m: dm.MaskedMatrix, name):
    j = 0 if name is None else (m.column_names.index(name) if name in m.column_names else None)
    if j is None:
        raise UsageError(f"column {name!r} not in {list(m.column_names)}")
    if not m.mask[:, j].all():
        raise UsageError(f"column {m.column_names[j]!r} has missing entries")
    return m.values[:, j]


def cmd_evaluate(ns) -> int:
    cfg = _effective("evaluate", ns)
    truth = _column(dm.load_csv(ns.truth, cfg["missing_token"]), cfg["truth_column"])
    pred = _column(dm.load_csv(ns.predictions, cfg["missing_token"]), cfg["pred_column"])
    if truth.shape != pred.shape:
        raise UsageError(f"{truth.size} true values but {pred.size} predictions")
    if cfg["task"] == "regression":
        rec = {"metric": "nrmse", "value": dm.nrmse(truth, pred)}
    elif cfg["task"] == "classification":
        rec = {"metric": "accuracy", "value": float(np.mean(truth == pred))}
    else:
        raise UsageError(f"unknown task {cfg['task']!r}")
    rec["n"] = int(truth.size)
    rec["config"] = cfg
    line = json.dumps(rec, sort_keys=True)
    print(line)
    if ns.out:
        with open(ns.out, "a", encoding="utf-8") as fh:
            fh.write(line + "\n")
    return EXIT_OK


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    S = argparse.SUPPRESS
    parser = argparse.ArgumentParser(prog="momentrobust", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, seed=True, token=True):
        p.add_argument("--config", help="JSON file of settings; flags take precedence")
        if seed:
            p.add_argument("--seed", type=int, default=S)
        if token:
            p.add_argument("--missing-token", dest="missing_token", default=S,
                           help="cell text meaning missing (empty cells are always missing)")

    def solver_flags(p):
        p.add_argument("--solver", choices=SOLVERS, default=S)
        p.add_argument("--lambda", dest="lam", type=float, default=S)
        p.add_argument("--c", type=float, default=S)
        p.add_argument("--k", type=int, default=S)
        p.add_argument("--rho", type=float, default=S)
        p.add_argument("--iters", type=int, default=S)
        p.add_argument("--threads", type=int, default=S)

    p = sub.add_parser("generate-missing", help="hide cells completely at random or by value")
    p.add_argument("input")
    p.add_argument("output")
    mode = p.add_mutually_exclusive_group()
    mode.add_argument("--mcar", dest="p", type=float, default=S, metavar="P")
    mode.add_argument("--mnar", nargs=2, type=float, metavar=("A", "B"), default=S)
    p.add_argument("--columns", nargs="+", default=S)
    common(p)
    p.set_defaults(func=cmd_generate_missing)

    p = sub.add_parser("estimate-moments", help="write the moment envelope as JSON")
    p.add_argument("data")
    p.add_argument("--target")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--k", type=int, default=S)
    p.add_argument("--c", type=float, default=S)
    p.add_argument("--threads", type=int, default=S)
    common(p)
    p.set_defaults(func=cmd_estimate_moments)

    p = sub.add_parser("train-regression", help="fit the robust regression model")
    p.add_argument("data", nargs="?")
    p.add_argument("--target")
    p.add_argument("--envelope", help="envelope JSON to use instead of estimating from data")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--trace", help="JSON-lines file for per-iteration values")
    p.add_argument("--tol", type=float, default=S)
    solver_flags(p)
    common(p)
    p.set_defaults(func=cmd_train_regression)

    p = sub.add_parser("train-lda", help="fit the robust discriminant classifier")
    p.add_argument("data")
    p.add_argument("--label", required=True)
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--trace")
    p.add_argument("--k", type=int, default=S)
    p.add_argument("--iters", type=int, default=S)
    p.add_argument("--alpha", type=float, default=S)
    p.add_argument("--delta", type=float, default=S)
    p.add_argument("--n-mc", dest="n_mc", type=int, default=S)
    p.add_argument("--c", type=float, default=S)
    p.add_argument("--em-rounds", dest="em_rounds", type=int, default=S)
    common(p)
    p.set_defaults(func=cmd_train_lda)

    p = sub.add_parser("predict", help="apply a saved model to a CSV")
    p.add_argument("model")
    p.add_argument("data")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--threads", type=int, default=S)
    common(p, seed=False)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("impute", help="fill missing cells column by column")
    p.add_argument("data")
    p.add_argument("-o", "--output", required=True)
    solver_flags(p)
    common(p)
    p.set_defaults(func=cmd_impute)

    p = sub.add_parser("evaluate", help="NRMSE or accuracy against ground truth")
    p.add_argument("truth")
    p.add_argument("predictions")
    p.add_argument("--task", choices=("regression", "classification"), default=S)
    p.add_argument("--truth-column", dest="truth_column", default=S)
    p.add_argument("--pred-column", dest="pred_column", default=S)
    p.add_argument("--out", help="append the result as a JSON line to this file")
    common(p, seed=False)
    p.set_defaults(func=cmd_evaluate)
    return parser


def _normalize(ns: argparse.Namespace) -> None:
    if ns.command == "generate-missing":
        if hasattr(ns, "mnar"):
            ns.kind = "mnar"
            ns.a, ns.b = ns.mnar
            del ns.mnar
        elif hasattr(ns, "p"):
            ns.kind = "mcar"


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)
    _normalize(ns)
    try:
        return ns.func(ns)
    except (UsageError, dm.CSVFormatError, dm.DegenerateColumnError, ValueError, OSError,
            np.linalg.LinAlgError, ZeroDivisionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
