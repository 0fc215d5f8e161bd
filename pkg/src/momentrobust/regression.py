"""Box-relaxed robust ridge regression.

The learner solves

    min_theta  max_{C, b in box}  theta' C theta - 2 b' theta + lam |theta|^2

where the box comes from a :class:`~momentrobust.moments.MomentEnvelope`.
For fixed ``(C, b)`` the inner minimizer is the ridge solution, so the outer
problem maximizes the concave function ``g(C, b) = -b' (C + lam I)^-1 b``
over the box.  Its gradient is ``(theta theta', -2 theta)``.  Both solvers
here run projected gradient ascent on ``g`` and ignore the positive
semidefinite requirement on ``C``; :mod:`momentrobust.admm` keeps it.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .moments import MomentEnvelope

DEFAULT_T = 10_000
DEFAULT_TOL = 1e-9


class DivergenceError(ArithmeticError):
    """An iterate became non-finite."""

    def __init__(self, iteration: int, what: str = "iterate"):
        super().__init__(f"{what} became non-finite at iteration {iteration}")
        self.iteration = iteration


def _check_finite(*arrays) -> None:
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise FloatingPointError("non-finite input")


def ridge_solve(C: np.ndarray, b: np.ndarray, lam: float) -> np.ndarray:
    """Minimizer of ``t' C t - 2 b' t + lam |t|^2``, i.e. ``(C + lam I)^-1 b``."""
    if not lam > 0:
        raise ValueError(f"ridge coefficient must be positive, got {lam}")
    C = np.asarray(C, dtype=float)
    b = np.asarray(b, dtype=float)
    _check_finite(C, b)
    if b.size == 0:
        return np.zeros(0)
    return np.linalg.solve(C + lam * np.eye(b.shape[0]), b)


def objective(theta, C, b, lam: float) -> float:
    theta = np.asarray(theta, dtype=float)
    return float(theta @ C @ theta - 2.0 * b @ theta + lam * theta @ theta)


def eval_g(C, b, lam: float) -> float:
    """Inner minimum ``-b' (C + lam I)^-1 b``."""
    return float(-np.asarray(b) @ ridge_solve(C, b, lam))


def box_project(M, M0, radius) -> np.ndarray:
    """Clamp ``M`` elementwise into ``[M0 - radius, M0 + radius]``."""
    M0 = np.asarray(M0, dtype=float)
    radius = np.asarray(radius, dtype=float)
    return np.clip(M, M0 - radius, M0 + radius)


def _inner(C, b, lam: float) -> tuple[np.ndarray, float]:
    """Ridge weights and ``g``; ``g = -inf`` when ``C + lam I`` is not positive definite.

    Off the positive definite region the inner minimum over ``theta`` is
    unbounded below, so such points are never worth moving to.
    """
    if not (np.all(np.isfinite(C)) and np.all(np.isfinite(b))):
        return np.full_like(b, np.nan), -np.inf
    try:
        factor = cho_factor(C + lam * np.eye(b.shape[0]))
    except LinAlgError:
        return np.full_like(b, np.nan), -np.inf
    theta = cho_solve(factor, b)
    return theta, float(-b @ theta)


def _grad(theta):
    return np.outer(theta, theta), -2.0 * theta


def frank_wolfe_gap(C, b, theta, c_bounds, b_bounds) -> float:
    """Upper bound on ``max g - g(C, b)`` from concavity.

    Maximizes the linearization of ``g`` at ``(C, b)`` over the box, which
    is attained at a vertex picked by the gradient signs.
    """
    gC, gb = _grad(theta)
    C_star = np.where(gC > 0, c_bounds[1], c_bounds[0])
    b_star = np.where(gb > 0, b_bounds[1], b_bounds[0])
    return float(max(0.0, np.sum(gC * (C_star - C)) + gb @ (b_star - b)))


@dataclass
class SaddleState:
    theta: np.ndarray
    C: np.ndarray
    b: np.ndarray
    lam: float

    @property
    def g(self) -> float:
        return float(-self.b @ self.theta)

    def ridge_residual(self) -> float:
        d = self.theta.shape[0]
        r = (self.C + self.lam * np.eye(d)) @ self.theta - self.b
        return float(np.linalg.norm(r))

    def ascent_residual(self, env: MomentEnvelope, alpha: float | None = None) -> float:
        """Distance moved by one projected ascent step; zero at a box-stationary point."""
        alpha = self.lam / 2 if alpha is None else alpha
        lo, hi = env.C_bounds()
        blo, bhi = env.b_bounds()
        gC, gb = _grad(self.theta)
        dC = np.clip(self.C + alpha * gC, lo, hi) - self.C
        db = np.clip(self.b + alpha * gb, blo, bhi) - self.b
        return float(np.sqrt(np.sum(dC * dC) + db @ db))


@dataclass
class SolverReport:
    solver: str
    iterations: int
    g_values: list[float] = field(default_factory=list)
    gaps: list[float] = field(default_factory=list)
    final_gap: float = float("nan")
    converged: bool = False
    wall_time: float = 0.0
    step: float = float("nan")

    def records(self):
        for t, g in enumerate(self.g_values):
            rec = {"iteration": t, "g": g}
            if t < len(self.gaps):
                rec["residual"] = self.gaps[t]
            yield rec

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r) + "\n" for r in self.records())

    def summary(self) -> dict:
        return {
            "solver": self.solver,
            "iterations": self.iterations,
            "final_g": self.g_values[-1] if self.g_values else None,
            "final_gap": self.final_gap,
            "converged": self.converged,
            "wall_time": self.wall_time,
            "step": self.step,
        }


def _initial_point(env, init, lo, hi, blo, bhi, lam):
    if init is None:
        C, b = env.C0.copy(), env.b0.copy()
    else:
        C, b = init
        C = np.clip(np.asarray(C, dtype=float), lo, hi)
        C, b = (C + C.T) / 2, np.clip(np.asarray(b, dtype=float), blo, bhi)
    if np.isfinite(_inner(C, b, lam)[1]):
        return C, b
    # pairwise estimates need not be positive semidefinite; try raising the
    # diagonal toward its upper bound, which only helps definiteness
    diag = np.diag_indices_from(C)
    for frac in (0.25, 0.5, 1.0):
        trial = C.copy()
        trial[diag] = C[diag] + frac * (hi[diag] - C[diag])
        if np.isfinite(_inner(trial, b, lam)[1]):
            return trial, b
    raise DivergenceError(0, "starting point (C + lam I not positive definite)")


def _ascent(
    env: MomentEnvelope,
    lam: float,
    T: int,
    alpha: float | None,
    tol: float,
    init,
    accelerate: bool,
    backtrack: bool,
) -> tuple[SaddleState, SolverReport]:
    if not env.has_target:
        raise ValueError("regression needs an envelope built with a target")
    if not lam > 0:
        raise ValueError(f"lambda must be positive, got {lam}")
    if T < 1:
        raise ValueError("T must be at least 1")
    start = time.perf_counter()
    lo, hi = env.C_bounds()
    blo, bhi = env.b_bounds()
    step = lam / 2 if alpha is None else float(alpha)
    if not step > 0:
        raise ValueError("step size must be positive")

    C, b = _initial_point(env, init, lo, hi, blo, bhi, lam)
    C_prev, b_prev = C, b
    theta, g = _inner(C, b, lam)
    report = SolverReport("nesterov" if accelerate else "pga", 0, step=step)
    report.g_values.append(g)
    report.gaps.append(frank_wolfe_gap(C, b, theta, (lo, hi), (blo, bhi)))
    gamma = 1.0

    for it in range(1, T + 1):
        if accelerate:
            gamma_next = (1.0 + np.sqrt(1.0 + 4.0 * gamma * gamma)) / 2.0
            beta = (gamma - 1.0) / gamma_next
            gamma = gamma_next
            YC = C + beta * (C - C_prev)
            Yb = b + beta * (b - b_prev)
            theta_y, g_y = _inner(YC, Yb, lam)
            if not np.isfinite(g_y):
                # extrapolated off the feasible region: restart momentum
                gamma = 1.0
                YC, Yb, theta_y, g_y = C, b, theta, g
        else:
            YC, Yb, theta_y, g_y = C, b, theta, g
        gC, gb = _grad(theta_y)
        while True:
            C_new = np.clip(YC + step * gC, lo, hi)
            b_new = np.clip(Yb + step * gb, blo, bhi)
            dC, db = C_new - YC, b_new - Yb
            theta_new, g_new = _inner(C_new, b_new, lam)
            if not backtrack:
                break
            # quadratic lower model of the concave g around Y
            model = g_y + np.sum(gC * dC) + gb @ db - (np.sum(dC * dC) + db @ db) / (2 * step)
            if np.isfinite(g_new) and g_new >= model - 1e-12 * max(1.0, abs(g_y)):
                break
            step /= 2
            if step < 1e-300:
                raise DivergenceError(it, "step size")
        if not (np.all(np.isfinite(C_new)) and np.all(np.isfinite(theta_new)) and np.isfinite(g_new)):
            raise DivergenceError(it)
        C_prev, b_prev = C, b
        C, b, theta = C_new, b_new, theta_new
        change = abs(g_new - g)
        g = g_new
        report.g_values.append(g)
        report.gaps.append(frank_wolfe_gap(C, b, theta, (lo, hi), (blo, bhi)))
        report.iterations = it
        moved = np.sum(dC * dC) + db @ db
        if change <= tol * max(1.0, abs(g)) and (not accelerate or moved <= tol * tol * max(1.0, np.sum(C * C))):
            report.converged = True
            break

    report.final_gap = report.gaps[-1]
    report.step = step
    report.wall_time = time.perf_counter() - start
    return SaddleState(theta=theta, C=C, b=b, lam=lam), report


def pga_solve(
    env: MomentEnvelope,
    lam: float,
    T: int = DEFAULT_T,
    alpha: float | None = None,
    tol: float = DEFAULT_TOL,
    init=None,
    backtrack: bool = True,
) -> tuple[SaddleState, SolverReport]:
    """Projected gradient ascent on ``g`` over the moment box.

    Starts from ``(C0, b0)`` (or ``init``, clamped into the box) with step
    ``alpha`` (default ``lam / 2``).  With ``backtrack=True`` the step is
    halved whenever the quadratic lower model fails, which keeps ``g``
    nondecreasing even when ``|theta|`` exceeds one.  Stops after ``T``
    iterations or when the change in ``g`` falls to ``tol`` relative.
    """
    return _ascent(env, lam, T, alpha, tol, init, accelerate=False, backtrack=backtrack)


def nesterov_solve(
    env: MomentEnvelope,
    lam: float,
    T: int = DEFAULT_T,
    alpha: float | None = None,
    tol: float = DEFAULT_TOL,
    init=None,
    backtrack: bool = True,
) -> tuple[SaddleState, SolverReport]:
    """Accelerated projected ascent with extrapolation weights from :func:`momentum_sequence`.

    The returned state has ``theta`` re-solved at the final ``(C, b)``.
    ``g`` need not increase monotonically.
    """
    return _ascent(env, lam, T, alpha, tol, init, accelerate=True, backtrack=backtrack)


def momentum_sequence(n: int) -> np.ndarray:
    """First ``n`` momentum weights, starting from 1."""
    out = np.empty(n)
    gamma = 1.0
    for i in range(n):
        out[i] = gamma
        gamma = (1.0 + np.sqrt(1.0 + 4.0 * gamma * gamma)) / 2.0
    return out


def iterations_to_gap(g_values, g_star: float, eps: float) -> int:
    """First iteration whose ``g`` is within ``eps`` of ``g_star``; -1 if never."""
    hits = np.flatnonzero(g_star - np.asarray(g_values) <= eps)
    return int(hits[0]) if hits.size else -1
