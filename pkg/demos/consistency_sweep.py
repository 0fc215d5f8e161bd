"""
Consistency sweep through the command line
==========================================

Fits the robust regression on growing samples of jointly normal data with
40% of the cells hidden completely at random, and scores each model on a
clean test set.  The target noise is set so that a perfect model scores an
NRMSE of 0.01.  Every step goes through ``momentrobust`` subcommands, so
the script doubles as an end-to-end check of the CLI.  The result is one
JSON line per sample size in ``consistency.jsonl``.

Run with ``python demos/consistency_sweep.py [OUTDIR]``.
"""

import json
import sys
import tempfile
from pathlib import Path

import numpy as np

from momentrobust.cli import main as cli
from momentrobust.data_model import MaskedMatrix, write_csv

SIZES = (500, 2000, 8000, 32000)
DIM = 10


def draw(beta, sigma, n, seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, DIM))
    return np.column_stack([X, X @ beta + sigma * rng.normal(size=n)])


def run(outdir, sizes=SIZES, c=0.25, solver="admm"):
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    names = tuple(f"x{j}" for j in range(DIM)) + ("y",)
    beta = np.random.default_rng(7).normal(size=DIM)
    # noise share of the target variance is 1e-4, so the floor NRMSE is 0.01
    sigma = 0.01 * np.linalg.norm(beta) / np.sqrt(1 - 1e-4)

    test = out / "test.csv"
    write_csv(test, MaskedMatrix.from_array(draw(beta, sigma, 20_000, 99), names))
    log = out / "consistency.jsonl"
    log.unlink(missing_ok=True)

    for n in sizes:
        full, holey = out / f"full_{n}.csv", out / f"train_{n}.csv"
        model, preds = out / f"model_{n}.json", out / f"pred_{n}.csv"
        write_csv(full, MaskedMatrix.from_array(draw(beta, sigma, n, n), names))
        steps = [
            ["generate-missing", str(full), str(holey), "--mcar", "0.4", "--seed", str(n)],
            ["train-regression", str(holey), "--target", "y", "-o", str(model), "--solver", solver,
             "--lambda", "1e-3", "--c", str(c), "--seed", "1"],
            ["predict", str(model), str(test), "-o", str(preds)],
            ["evaluate", str(test), str(preds), "--truth-column", "y", "--out", str(log)],
        ]
        for argv in steps:
            status = cli(argv)
            if status != 0:
                raise SystemExit(f"{argv[0]} exited with {status}")

    records = [json.loads(line) for line in log.read_text().splitlines()]
    return [r["value"] for r in records]


if __name__ == "__main__":
    target = sys.argv[1] if len(sys.argv) > 1 else tempfile.mkdtemp(prefix="consistency_")
    series = run(target)
    for n, value in zip(SIZES, series):
        print(json.dumps({"n": n, "nrmse": value}))
    print(f"artifacts in {target}", file=sys.stderr)
