"""Prediction under arbitrary missing patterns and column-by-column imputation."""

from __future__ import annotations

import json
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Any, Literal

import numpy as np

from .admm import AdmmConfig, admm_solve
from .data_model import MaskedMatrix, pattern_groups
from .moments import DEFAULT_C, DEFAULT_K, MomentEnvelope, build_envelope
from .regression import DEFAULT_T, nesterov_solve, pga_solve, ridge_solve

Solver = Literal["pga", "nesterov", "admm"]
SOLVERS = ("pga", "nesterov", "admm")


@dataclass(frozen=True, eq=False)
class RegressionModel:
    """Trained weights together with the worst-case moments they were fit on.

    Keeping ``C`` and ``b`` lets :func:`predict` refit a ridge model on any
    subset of features without re-running the robust solver.  No intercept is
    added; append a constant column to the data if one is wanted.
    """

    theta: np.ndarray
    C: np.ndarray
    b: np.ndarray
    lam: float
    feature_names: tuple[str, ...] = ()
    y_mean: float = 0.0
    target_name: str = "y"
    metadata: dict | None = None

    def __post_init__(self):
        for name in ("theta", "C", "b"):
            a = np.array(getattr(self, name), dtype=float)
            a.flags.writeable = False
            object.__setattr__(self, name, a)
        d = self.theta.shape[0]
        if self.C.shape != (d, d) or self.b.shape != (d,):
            raise ValueError("theta, C and b dimensions disagree")
        if not self.lam > 0:
            raise ValueError("lambda must be positive")
        if not self.feature_names:
            object.__setattr__(self, "feature_names", tuple(f"x{j}" for j in range(d)))
        elif len(self.feature_names) != d:
            raise ValueError("feature_names length does not match theta")

    @property
    def dim(self) -> int:
        return self.theta.shape[0]

    @classmethod
    def from_state(cls, state, env: MomentEnvelope, **kw) -> RegressionModel:
        return cls(
            theta=state.theta,
            C=state.C,
            b=state.b,
            lam=state.lam,
            feature_names=env.column_names,
            y_mean=env.y_mean,
            target_name=env.target_name,
            **kw,
        )

    def to_dict(self) -> dict[str, Any]:
        doc = {
            "kind": "regression",
            "feature_names": list(self.feature_names),
            "target_name": self.target_name,
            "lambda": self.lam,
            "theta": self.theta.tolist(),
            "C": self.C.tolist(),
            "b": self.b.tolist(),
            "y_mean": self.y_mean,
        }
        if self.metadata:
            doc["metadata"] = self.metadata
        return doc

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_dict(cls, doc: dict[str, Any]) -> RegressionModel:
        if doc.get("kind", "regression") != "regression":
            raise ValueError(f"not a regression model: kind={doc.get('kind')!r}")
        return cls(
            theta=doc["theta"],
            C=doc["C"],
            b=doc["b"],
            lam=float(doc["lambda"]),
            feature_names=tuple(doc.get("feature_names") or ()),
            y_mean=float(doc.get("y_mean", 0.0)),
            target_name=doc.get("target_name", "y"),
            metadata=doc.get("metadata"),
        )

    @classmethod
    def from_json(cls, text: str) -> RegressionModel:
        return cls.from_dict(json.loads(text))


def restricted_weights(model: RegressionModel, available: np.ndarray) -> np.ndarray:
    """Ridge weights on the available features, using the model's ``C`` and ``b``."""
    idx = np.flatnonzero(available)
    return ridge_solve(model.C[np.ix_(idx, idx)], model.b[idx], model.lam)


def _row(model: RegressionModel, x, mask=None) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=float)
    if mask is None:
        mask = ~np.isnan(x)
    mask = np.asarray(mask, dtype=bool)
    if x.shape != (model.dim,) or mask.shape != (model.dim,):
        raise ValueError(f"row has length {x.shape[0]}, model expects {model.dim}")
    return x, mask


def predict(model: RegressionModel, x, mask=None) -> float:
    """Predict one row; NaN (or ``mask=False``) marks a missing feature.

    Complete rows use the trained weights.  Otherwise the model is refit on
    the available features; a row with nothing available gets ``y_mean``.
    """
    x, mask = _row(model, x, mask)
    if mask.all():
        return float(model.theta @ x)
    if not mask.any():
        return float(model.y_mean)
    return float(restricted_weights(model, mask) @ x[mask])


def predict_batch(model: RegressionModel, m: MaskedMatrix, threads: int | None = None) -> np.ndarray:
    """Predict every row of ``m``, solving one restricted system per missing pattern."""
    if m.n_cols != model.dim:
        raise ValueError(f"data has {m.n_cols} columns, model expects {model.dim}")
    out = np.empty(m.n_rows)
    groups = list(pattern_groups(m).items())

    def solve(item):
        key, rows = item
        avail = np.array(key, dtype=bool)
        if avail.all():
            return rows, avail, model.theta
        if not avail.any():
            return rows, avail, None
        return rows, avail, restricted_weights(model, avail)

    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            solved = list(pool.map(solve, groups))
    else:
        solved = [solve(g) for g in groups]
    for rows, avail, w in solved:
        if w is None:
            out[rows] = model.y_mean
        else:
            # row-by-row dot products so results match predict() bit for bit
            vals = m.values[np.ix_(rows, np.flatnonzero(avail))]
            out[rows] = [float(w @ v) for v in vals]
    return out


def solve_envelope(
    env: MomentEnvelope,
    lam: float,
    solver: Solver = "pga",
    T: int | None = None,
    rho: float = 1.0,
    tol: float | None = None,
):
    """Dispatch to one of the three solvers.  Returns ``(state, report)``."""
    if solver == "pga":
        return pga_solve(env, lam, T=T or DEFAULT_T, **({} if tol is None else {"tol": tol}))
    if solver == "nesterov":
        return nesterov_solve(env, lam, T=T or DEFAULT_T, **({} if tol is None else {"tol": tol}))
    if solver == "admm":
        cfg = AdmmConfig(rho=rho, T=T or AdmmConfig.T, tol=AdmmConfig.tol if tol is None else tol)
        state, report, _ = admm_solve(env, lam, cfg)
        return state, report
    raise ValueError(f"unknown solver {solver!r}; choose from {SOLVERS}")


def fit_regression(
    m: MaskedMatrix,
    y,
    lam: float,
    solver: Solver = "pga",
    k: int = DEFAULT_K,
    c: float = DEFAULT_C,
    seed: int = 0,
    T: int | None = None,
    rho: float = 1.0,
    threads: int | None = None,
    target_name: str = "y",
):
    """Build the envelope for ``(m, y)`` and solve.  Returns ``(model, report, env)``."""
    env = build_envelope(m, y, k=k, c=c, seed=seed, threads=threads, target_name=target_name)
    state, report = solve_envelope(env, lam, solver, T=T, rho=rho)
    return RegressionModel.from_state(state, env), report, env


def _impute_column(m: MaskedMatrix, j: int, lam, solver, k, c, seed, T, rho) -> np.ndarray:
    col = m.values[:, j].copy()
    missing = ~m.mask[:, j]
    if not missing.any():
        return col
    others = [i for i in range(m.n_cols) if i != j]
    feats = m.columns(others)
    env = build_envelope(feats, (m.values[:, j], m.mask[:, j]), k=k, c=c, seed=seed,
                         target_name=m.column_names[j])
    state, _ = solve_envelope(env, lam, solver, T=T, rho=rho)
    model = RegressionModel.from_state(state, env)
    col[missing] = predict_batch(model, feats.rows(missing))
    return col


def impute(
    m: MaskedMatrix,
    lam: float = 1.0,
    solver: Solver = "pga",
    k: int = DEFAULT_K,
    c: float = DEFAULT_C,
    seed: int = 0,
    T: int | None = None,
    rho: float = 1.0,
    threads: int | None = None,
    columns: Sequence[int] | None = None,
) -> np.ndarray:
    """Fill missing cells column by column.

    Each column is regressed on all the others using the original matrix
    (never the partially filled one), so columns are independent and may be
    processed in any order or in parallel.  Available cells pass through.
    """
    counts = m.mask.sum(axis=0)
    empty = [m.column_names[j] for j in np.flatnonzero(counts == 0)]
    if empty:
        raise ValueError(f"cannot impute columns with no available entries: {empty}")
    if m.n_cols < 2 and not m.mask.all():
        raise ValueError("imputation needs at least two columns")
    order = list(range(m.n_cols)) if columns is None else list(columns)
    out = m.values.copy()

    def work(j):
        return j, _impute_column(m, j, lam, solver, k, c, seed, T, rho)

    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(work, order))
    else:
        results = [work(j) for j in order]
    for j, col in results:
        out[:, j] = col
    return out
