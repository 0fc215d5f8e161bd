"""ADMM on the dual of the inner maximization, keeping ``C`` positive semidefinite.

For fixed ``theta`` the inner problem maximizes over ``C`` in its box and
the PSD cone, and ``b`` in its box.  Its Lagrangian dual has nonnegative
box multipliers ``A, B`` (for ``C``) and ``d, e`` (for ``b``), a PSD slack
``H``, and the couplings ``B - A = H + theta theta'`` and
``2 theta - d + e = 0``.  Minimizing jointly over ``theta`` and the dual
variables gives a convex problem.

Two splittings are provided.

``split`` (:func:`admm_step`) uses the blocks

    block 1: theta, d, e, G, A', B'
    block 2: d', e', theta', A, B

with ``G = H + theta' theta'`` and copies ``A = A'``, ``B = B'``,
``d = d'``, ``e = e'``, ``theta = theta'``.  The constraint
``G >= theta' theta'`` ties the two blocks together nonlinearly and is
enforced by alternating projections, so the scheme can settle on points
that satisfy every equality but are not optimal (from an all-zero start it
stays at ``theta = 0``).

``lifted`` (:func:`lifted_step`, the default) keeps the same primal block
``(theta, d, e, A, B)`` but replaces ``(theta', G)`` by the single matrix
``W = [[1, theta'], [theta', G]]`` constrained to the PSD cone, which is
equivalent to ``G >= theta' theta'`` by a Schur complement.  Every coupling
is then linear and the iteration is a standard two-block ADMM.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field, fields, replace

import numpy as np

from .moments import MomentEnvelope
from .regression import DivergenceError, SaddleState, ridge_solve

SYMMETRY_TOL = 1e-10
NEG_EIG_TOL = 1e-8


def _symmetrize(S: np.ndarray, tol: float = SYMMETRY_TOL) -> np.ndarray:
    S = np.asarray(S, dtype=float)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {S.shape}")
    scale = max(1.0, float(np.max(np.abs(S)))) if S.size else 1.0
    if np.max(np.abs(S - S.T), initial=0.0) > tol * scale:
        raise ValueError("matrix is not symmetric")
    return (S + S.T) / 2


def psd_project(S: np.ndarray) -> np.ndarray:
    """Nearest PSD matrix in Frobenius norm (negative eigenvalues set to zero)."""
    return _clamp_eigenvalues(_symmetrize(S))


def _clamp_eigenvalues(S: np.ndarray) -> np.ndarray:
    w, U = np.linalg.eigh(S)
    out = (U * np.maximum(w, 0.0)) @ U.T
    return (out + out.T) / 2


@dataclass
class EllipsoidProjection:
    point: np.ndarray
    mu: float
    iterations: int


def ellipsoid_project(alpha, G, tol: float = 1e-12, full_output: bool = False):
    """Project ``alpha`` onto ``{t : G - t t' is PSD}``.

    In the eigenbasis of ``G`` the set is the ellipsoid
    ``sum beta_i^2 / lam_i <= 1`` (with ``beta_i = 0`` on zero eigenvalues),
    and the projection scales each coordinate by ``lam_i / (lam_i + mu)``
    for the multiplier ``mu >= 0`` found by bisection.
    """
    alpha = np.asarray(alpha, dtype=float)
    G = _symmetrize(G)
    w, U = np.linalg.eigh(G)
    scale = max(1.0, float(np.max(np.abs(w)))) if w.size else 1.0
    if w.size and w.min() < -NEG_EIG_TOL * scale:
        raise ValueError(f"G has a negative eigenvalue {w.min():.3e}")
    pos = w > 1e-14 * scale
    lam = np.where(pos, w, 0.0)
    gamma = U.T @ alpha
    g2 = np.where(pos, gamma * gamma, 0.0)

    def constraint(mu):
        return float(np.sum(g2[pos] * lam[pos] / (lam[pos] + mu) ** 2))

    iters = 0
    null_energy = float(np.sum(gamma[~pos] ** 2))
    if np.sum(g2[pos] / lam[pos]) <= 1.0:
        mu = 0.0
        if null_energy == 0.0:
            out = EllipsoidProjection(alpha.copy(), 0.0, 0)
            return out if full_output else out.point
    else:
        lo, hi = 0.0, 1.0
        while constraint(hi) >= 1.0:
            lo, hi = hi, hi * 2.0
        while True:
            iters += 1
            mid = 0.5 * (lo + hi)
            if mid <= lo or mid >= hi:
                break
            val = constraint(mid)
            if val >= 1.0:
                lo = mid
            else:
                hi = mid
            if abs(val - 1.0) <= tol and val <= 1.0:
                hi = mid
                break
            if iters >= 2000:
                break
        mu = hi
    beta = np.zeros_like(gamma)
    beta[pos] = gamma[pos] * lam[pos] / (lam[pos] + mu)
    out = EllipsoidProjection(U @ beta, float(mu), iters)
    return out if full_output else out.point


@dataclass(frozen=True)
class AdmmConfig:
    rho: float = 1.0
    T: int = 20_000
    tol: float = 1e-6

    def __post_init__(self):
        if not self.rho > 0:
            raise ValueError(f"rho must be positive, got {self.rho}")
        if self.T < 1:
            raise ValueError("T must be at least 1")
        if not self.tol >= 0:
            raise ValueError("tolerance must be non-negative")


@dataclass
class DualState:
    """All ADMM variables.  Matrices are ``d x d``, vectors length ``d``."""

    theta: np.ndarray
    d: np.ndarray
    e: np.ndarray
    G: np.ndarray
    A_copy: np.ndarray
    B_copy: np.ndarray
    d_copy: np.ndarray
    e_copy: np.ndarray
    theta_copy: np.ndarray
    A: np.ndarray
    B: np.ndarray
    M_A: np.ndarray
    M_B: np.ndarray
    mu_d: np.ndarray
    mu_e: np.ndarray
    mu_theta: np.ndarray
    eta: np.ndarray
    Gamma: np.ndarray

    @classmethod
    def zeros(cls, dim: int) -> DualState:
        kw = {}
        for f in fields(cls):
            matrix = f.name in ("G", "A_copy", "B_copy", "A", "B", "M_A", "M_B", "Gamma")
            kw[f.name] = np.zeros((dim, dim) if matrix else dim)
        return cls(**kw)

    def copy(self) -> DualState:
        return replace(self, **{f.name: getattr(self, f.name).copy() for f in fields(self)})

    def constraint_residuals(self) -> dict[str, float]:
        return {
            "A": float(np.linalg.norm(self.A - self.A_copy)),
            "B": float(np.linalg.norm(self.B - self.B_copy)),
            "d": float(np.linalg.norm(self.d - self.d_copy)),
            "e": float(np.linalg.norm(self.e - self.e_copy)),
            "theta": float(np.linalg.norm(self.theta - self.theta_copy)),
            "link": float(np.linalg.norm(2 * self.theta - self.d + self.e)),
            "G": float(np.linalg.norm(self.B - self.A - self.G)),
        }

    def residual(self) -> float:
        """Sum of the norms of all equality-constraint violations."""
        return float(sum(self.constraint_residuals().values()))

    def max_change(self, other: DualState) -> float:
        return max(
            float(np.max(np.abs(getattr(self, f.name) - getattr(other, f.name)), initial=0.0))
            for f in fields(self)
        )


def _theta_block_matrix(lam: float, rho: float) -> np.ndarray:
    # stationarity of the augmented Lagrangian in (theta, d, e), per coordinate
    return np.array(
        [
            [2 * lam + 5 * rho, -2 * rho, 2 * rho],
            [-2 * rho, 2 * rho, -rho],
            [2 * rho, -rho, 2 * rho],
        ]
    )


def admm_step(s: DualState, env: MomentEnvelope, lam: float, rho: float) -> DualState:
    """One sweep of the split scheme: block 1, block 2, then the seven multiplier updates."""
    return _split_step(s, env.C_bounds(), env.b_bounds(), lam, rho)


def _split_step(s, c_bounds, b_bounds, lam, rho, block_inverse=None) -> DualState:
    C_min, C_max = c_bounds
    b_min, b_max = b_bounds
    if block_inverse is None:
        block_inverse = np.linalg.inv(_theta_block_matrix(lam, rho))
    n = s.copy()

    # block 1
    r_theta = rho * s.theta_copy - s.mu_theta - 2 * s.eta
    r_d = rho * s.d_copy - s.mu_d + b_min + s.eta
    r_e = rho * s.e_copy - s.mu_e - b_max - s.eta
    n.theta, n.d, n.e = block_inverse @ np.vstack([r_theta, r_d, r_e])
    tt = np.outer(s.theta_copy, s.theta_copy)
    n.G = psd_project(s.B - s.A + s.Gamma / rho - tt) + tt
    n.A_copy = np.maximum(s.A + s.M_A / rho, 0.0)
    n.B_copy = np.maximum(s.B + s.M_B / rho, 0.0)

    # block 2
    n.d_copy = np.maximum(n.d + s.mu_d / rho, 0.0)
    n.e_copy = np.maximum(n.e + s.mu_e / rho, 0.0)
    n.theta_copy = ellipsoid_project(n.theta + s.mu_theta / rho, n.G)
    D1 = C_min - s.M_A + rho * n.A_copy + s.Gamma - rho * n.G
    D2 = -C_max - s.M_B + rho * n.B_copy - s.Gamma + rho * n.G
    n.A = (2 * D1 + D2) / (3 * rho)
    n.B = (D1 + 2 * D2) / (3 * rho)
    n.A = (n.A + n.A.T) / 2
    n.B = (n.B + n.B.T) / 2

    # multipliers
    n.M_A = s.M_A + rho * (n.A - n.A_copy)
    n.M_B = s.M_B + rho * (n.B - n.B_copy)
    n.mu_d = s.mu_d + rho * (n.d - n.d_copy)
    n.mu_e = s.mu_e + rho * (n.e - n.e_copy)
    n.mu_theta = s.mu_theta + rho * (n.theta - n.theta_copy)
    n.eta = s.eta + rho * (2 * n.theta - n.d + n.e)
    n.Gamma = s.Gamma + rho * (n.B - n.A - n.G)
    return n




@dataclass
class LiftedState:
    """Variables of the lifted scheme; ``W`` and ``Omega`` are ``(d+1) x (d+1)``."""

    theta: np.ndarray
    d: np.ndarray
    e: np.ndarray
    A: np.ndarray
    B: np.ndarray
    W: np.ndarray
    A_copy: np.ndarray
    B_copy: np.ndarray
    d_copy: np.ndarray
    e_copy: np.ndarray
    M_A: np.ndarray
    M_B: np.ndarray
    mu_d: np.ndarray
    mu_e: np.ndarray
    eta: np.ndarray
    Omega: np.ndarray

    @classmethod
    def zeros(cls, dim: int) -> LiftedState:
        kw = {}
        for f in fields(cls):
            if f.name in ("W", "Omega"):
                kw[f.name] = np.zeros((dim + 1, dim + 1))
            elif f.name in ("A", "B", "A_copy", "B_copy", "M_A", "M_B"):
                kw[f.name] = np.zeros((dim, dim))
            else:
                kw[f.name] = np.zeros(dim)
        return cls(**kw)

    def copy(self) -> LiftedState:
        return replace(self, **{f.name: getattr(self, f.name).copy() for f in fields(self)})

    @property
    def G(self) -> np.ndarray:
        return self.W[1:, 1:]

    @property
    def theta_copy(self) -> np.ndarray:
        return self.W[1:, 0]

    def lifted_target(self) -> np.ndarray:
        return _lift(self.theta, self.B - self.A)

    def constraint_residuals(self) -> dict[str, float]:
        return {
            "A": float(np.linalg.norm(self.A - self.A_copy)),
            "B": float(np.linalg.norm(self.B - self.B_copy)),
            "d": float(np.linalg.norm(self.d - self.d_copy)),
            "e": float(np.linalg.norm(self.e - self.e_copy)),
            "link": float(np.linalg.norm(2 * self.theta - self.d + self.e)),
            "W": float(np.linalg.norm(self.W - self.lifted_target())),
        }

    def residual(self) -> float:
        """Sum of the norms of all equality-constraint violations."""
        parts = (self.A - self.A_copy, self.B - self.B_copy, self.d - self.d_copy, self.e - self.e_copy,
                 2 * self.theta - self.d + self.e, self.W - self.lifted_target())
        return float(sum(math.sqrt(np.vdot(r, r)) for r in parts))

    def max_change(self, other: LiftedState) -> float:
        return max(
            float(np.max(np.abs(getattr(self, f.name) - getattr(other, f.name)), initial=0.0))
            for f in fields(self)
        )


def _lift(theta: np.ndarray, S: np.ndarray) -> np.ndarray:
    d = theta.shape[0]
    out = np.empty((d + 1, d + 1))
    out[0, 0] = 1.0
    out[1:, 0] = theta
    out[0, 1:] = theta
    out[1:, 1:] = (S + S.T) / 2
    return out


def _lifted_block_matrix(lam: float, rho: float) -> np.ndarray:
    # the off-diagonal of W appears twice in the Frobenius penalty, hence 6 rho
    return np.array(
        [
            [2 * lam + 6 * rho, -2 * rho, 2 * rho],
            [-2 * rho, 2 * rho, -rho],
            [2 * rho, -rho, 2 * rho],
        ]
    )


def lifted_step(s: LiftedState, env: MomentEnvelope, lam: float, rho: float) -> LiftedState:
    """One sweep of the lifted scheme."""
    return _lifted_step(s, env.C_bounds(), env.b_bounds(), lam, rho)


def _lifted_step(s, c_bounds, b_bounds, lam, rho, block_inverse=None) -> LiftedState:
    C_min, C_max = c_bounds
    b_min, b_max = b_bounds
    if block_inverse is None:
        block_inverse = np.linalg.inv(_lifted_block_matrix(lam, rho))
    w, S = s.W[1:, 0], s.W[1:, 1:]
    omega, Omega_S = s.Omega[1:, 0], s.Omega[1:, 1:]

    # primal block: (theta, d, e) per coordinate, (A, B) per entry
    r_theta = 2 * omega + 2 * rho * w - 2 * s.eta
    r_d = b_min - s.mu_d + rho * s.d_copy + s.eta
    r_e = -b_max - s.mu_e + rho * s.e_copy - s.eta
    theta, d, e = block_inverse @ np.vstack([r_theta, r_d, r_e])
    D1 = C_min - s.M_A + rho * s.A_copy - Omega_S - rho * S
    D2 = -C_max - s.M_B + rho * s.B_copy + Omega_S + rho * S
    A = (2 * D1 + D2) / (3 * rho)
    B = (D1 + 2 * D2) / (3 * rho)

    # constrained block: nonnegative copies and the lifted PSD matrix
    A_copy = np.maximum(A + s.M_A / rho, 0.0)
    B_copy = np.maximum(B + s.M_B / rho, 0.0)
    d_copy = np.maximum(d + s.mu_d / rho, 0.0)
    e_copy = np.maximum(e + s.mu_e / rho, 0.0)
    target = _lift(theta, B - A)
    shifted = target - s.Omega / rho
    W = _clamp_eigenvalues((shifted + shifted.T) / 2)

    # multipliers
    return LiftedState(
        theta=theta, d=d, e=e, A=A, B=B, W=W,
        A_copy=A_copy, B_copy=B_copy, d_copy=d_copy, e_copy=e_copy,
        M_A=s.M_A + rho * (A - A_copy),
        M_B=s.M_B + rho * (B - B_copy),
        mu_d=s.mu_d + rho * (d - d_copy),
        mu_e=s.mu_e + rho * (e - e_copy),
        eta=s.eta + rho * (2 * theta - d + e),
        Omega=s.Omega + rho * (W - target),
    )


def dual_objective(s, c_bounds, b_bounds, lam: float) -> float:
    """Dual objective at the nonnegative copies of the state."""
    C_min, C_max = c_bounds
    b_min, b_max = b_bounds
    return float(
        -b_min @ s.d_copy
        + b_max @ s.e_copy
        - np.sum(C_min * s.A_copy)
        + np.sum(C_max * s.B_copy)
        + lam * s.theta @ s.theta
    )


def recover_primal(s, c_bounds, b_bounds) -> tuple[np.ndarray, np.ndarray]:
    """Worst-case ``(C, b)`` read off the coupling multipliers.

    At a KKT point the multiplier of the matrix coupling equals ``C`` (up to
    sign) and the multiplier of ``2 theta - d + e = 0`` equals ``-b``.  Both
    are clamped into their boxes to absorb the remaining violation.
    """
    C = s.Omega[1:, 1:] if isinstance(s, LiftedState) else -s.Gamma
    C = np.clip(C, *c_bounds)
    C = (C + C.T) / 2
    b = np.clip(-s.eta, *b_bounds)
    return C, b


@dataclass
class AdmmReport:
    method: str = "lifted"
    iterations: int = 0
    residuals: list[float] = field(default_factory=list)
    objectives: list[float] = field(default_factory=list)
    converged: bool = False
    wall_time: float = 0.0
    rho: float = 1.0
    admm_theta: np.ndarray | None = None

    def records(self):
        for t, (r, o) in enumerate(zip(self.residuals, self.objectives), start=1):
            yield {"iteration": t, "objective": o, "residual": r}

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r) + "\n" for r in self.records())

    def summary(self) -> dict:
        return {
            "solver": "admm",
            "method": self.method,
            "iterations": self.iterations,
            "final_residual": self.residuals[-1] if self.residuals else None,
            "final_objective": self.objectives[-1] if self.objectives else None,
            "converged": self.converged,
            "wall_time": self.wall_time,
            "rho": self.rho,
        }


_METHODS = {
    "lifted": (LiftedState, _lifted_step, _lifted_block_matrix),
    "split": (DualState, _split_step, _theta_block_matrix),
}


def admm_solve(
    env: MomentEnvelope,
    lam: float,
    cfg: AdmmConfig = AdmmConfig(),
    init=None,
    method: str = "lifted",
):
    """Run ADMM until the combined residual reaches ``cfg.tol`` or ``cfg.T`` sweeps.

    Returns ``(state, report, dual_state)``.  The :class:`SaddleState` holds
    the ``(C, b)`` from :func:`recover_primal` and the ridge ``theta`` at that
    ``(C, b)``; the raw ADMM ``theta`` is kept in ``report.admm_theta``.
    """
    if method not in _METHODS:
        raise ValueError(f"unknown ADMM method {method!r}")
    if not env.has_target:
        raise ValueError("regression needs an envelope built with a target")
    if not lam > 0:
        raise ValueError(f"lambda must be positive, got {lam}")
    state_cls, step, block = _METHODS[method]
    start = time.perf_counter()
    c_bounds = env.C_bounds()
    b_bounds = env.b_bounds()
    inv = np.linalg.inv(block(lam, cfg.rho))
    s = state_cls.zeros(env.dim) if init is None else init.copy()
    report = AdmmReport(method=method, rho=cfg.rho)
    for it in range(1, cfg.T + 1):
        s = step(s, c_bounds, b_bounds, lam, cfg.rho, inv)
        res = s.residual()
        if not np.isfinite(res):
            raise DivergenceError(it, "ADMM state")
        report.residuals.append(res)
        report.objectives.append(dual_objective(s, c_bounds, b_bounds, lam))
        report.iterations = it
        if res <= cfg.tol:
            report.converged = True
            break
    C, b = recover_primal(s, c_bounds, b_bounds)
    theta = ridge_solve(C, b, lam)
    report.admm_theta = s.theta.copy()
    report.wall_time = time.perf_counter() - start
    return SaddleState(theta=theta, C=C, b=b, lam=lam), report, s
