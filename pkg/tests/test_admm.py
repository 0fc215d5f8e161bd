import itertools

import cvxpy as cp
import numpy as np
import pytest
from conftest import grid_ellipsoid_oracle, make_envelope, random_envelope
from hypothesis import given, settings
from hypothesis import strategies as st

from momentrobust.admm import (
    AdmmConfig,
    DualState,
    LiftedState,
    admm_solve,
    admm_step,
    dual_objective,
    ellipsoid_project,
    lifted_step,
    psd_project,
)
from momentrobust.regression import pga_solve, ridge_solve

# ---------------------------------------------------------------- projections


def random_symmetric(rng, d):
    A = rng.normal(size=(d, d))
    return (A + A.T) / 2


def test_psd_project_examples():
    np.testing.assert_allclose(psd_project(np.diag([1.0, -1.0])), np.diag([1.0, 0.0]), atol=1e-15)
    np.testing.assert_allclose(
        psd_project(np.array([[0.0, 1.0], [1.0, 0.0]])), np.full((2, 2), 0.5), atol=1e-15
    )
    rng = np.random.default_rng(0)
    A = rng.normal(size=(4, 4))
    P = A @ A.T
    np.testing.assert_allclose(psd_project(P), P, atol=1e-12)


def test_psd_project_rejects_asymmetric():
    with pytest.raises(ValueError):
        psd_project(np.array([[1.0, 2.0], [0.0, 1.0]]))
    # tiny asymmetry is symmetrized away
    S = np.array([[1.0, 0.5], [0.5 + 1e-13, -1.0]])
    out = psd_project(S)
    np.testing.assert_array_equal(out, out.T)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 6))
def test_psd_project_idempotent_and_matches_clamp(seed, d):
    rng = np.random.default_rng(seed)
    S = random_symmetric(rng, d)
    P = psd_project(S)
    w, U = np.linalg.eigh(S)
    oracle = U @ np.diag(np.clip(w, 0, None)) @ U.T
    np.testing.assert_allclose(P, oracle, atol=1e-10)
    np.testing.assert_allclose(psd_project(P), P, atol=1e-10)
    assert np.linalg.eigvalsh(P).min() >= -1e-10


def test_ellipsoid_examples():
    alpha = np.array([1.2, -1.6])
    np.testing.assert_allclose(ellipsoid_project(alpha, np.eye(2)), alpha / 2, atol=1e-10)
    G = np.diag([4.0, 1.0])
    inside = np.array([1.0, 0.5])
    res = ellipsoid_project(inside, G, full_output=True)
    np.testing.assert_array_equal(res.point, inside)
    assert res.mu == 0.0
    np.testing.assert_allclose(
        ellipsoid_project(np.array([4.0, 4.0]), G), grid_ellipsoid_oracle(np.array([4.0, 4.0]), G),
        atol=1e-5,
    )


def test_ellipsoid_degenerate_axes_and_errors():
    G = np.diag([4.0, 0.0])
    out = ellipsoid_project(np.array([1.0, 3.0]), G)
    np.testing.assert_allclose(out, [1.0, 0.0], atol=1e-12)
    with pytest.raises(ValueError):
        ellipsoid_project(np.ones(2), np.diag([1.0, -0.1]))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 5))
def test_ellipsoid_feasible(seed, d):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(d, d))
    G = A @ A.T
    alpha = rng.normal(size=d) * 5
    t = ellipsoid_project(alpha, G)
    assert np.linalg.eigvalsh(G - np.outer(t, t)).min() >= -1e-8


# ------------------------------------------------------- block oracles (split)


def split_lagrangian(s, env, lam, rho):
    (C_min, C_max), (b_min, b_max) = env.C_bounds(), env.b_bounds()
    val = (
        -b_min @ s.d + b_max @ s.e - np.sum(C_min * s.A) + np.sum(C_max * s.B)
        + lam * s.theta @ s.theta
    )
    pairs = [
        (s.M_A, s.A - s.A_copy),
        (s.M_B, s.B - s.B_copy),
        (s.mu_d, s.d - s.d_copy),
        (s.mu_e, s.e - s.e_copy),
        (s.mu_theta, s.theta - s.theta_copy),
        (s.eta, 2 * s.theta - s.d + s.e),
        (s.Gamma, s.B - s.A - s.G),
    ]
    for mult, r in pairs:
        val += np.sum(mult * r) + rho / 2 * np.sum(r * r)
    return val


def lifted_lagrangian(s, env, lam, rho):
    (C_min, C_max), (b_min, b_max) = env.C_bounds(), env.b_bounds()
    val = (
        -b_min @ s.d + b_max @ s.e - np.sum(C_min * s.A) + np.sum(C_max * s.B)
        + lam * s.theta @ s.theta
    )
    pairs = [
        (s.M_A, s.A - s.A_copy),
        (s.M_B, s.B - s.B_copy),
        (s.mu_d, s.d - s.d_copy),
        (s.mu_e, s.e - s.e_copy),
        (s.eta, 2 * s.theta - s.d + s.e),
        (s.Omega, s.W - s.lifted_target()),
    ]
    for mult, r in pairs:
        val += np.sum(mult * r) + rho / 2 * np.sum(r * r)
    return val


def random_state(cls, d, rng):
    s = cls.zeros(d)
    for name, value in vars(s).items():
        new = rng.normal(size=value.shape)
        if new.ndim == 2:
            new = (new + new.T) / 2
        setattr(s, name, new)
    return s


def minimize_block(lagrangian, s, env, lam, rho, names):
    """Exact minimizer of the augmented Lagrangian over ``names``.

    The Lagrangian is quadratic in these variables, so its Hessian and
    gradient are recovered from function values by polarization and the
    stationarity system is solved densely.
    """
    shapes = [getattr(s, n).shape for n in names]
    sizes = [int(np.prod(sh)) for sh in shapes]

    def f(x):
        t = s.copy()
        pos = 0
        for n, sh, k in zip(names, shapes, sizes):
            setattr(t, n, x[pos:pos + k].reshape(sh))
            pos += k
        return lagrangian(t, env, lam, rho), t

    dim = sum(sizes)
    zero = np.zeros(dim)
    f0 = f(zero)[0]
    E = np.eye(dim)
    fp = np.array([f(E[i])[0] for i in range(dim)])
    fm = np.array([f(-E[i])[0] for i in range(dim)])
    H = np.diag(fp + fm - 2 * f0)
    for i in range(dim):
        for j in range(i + 1, dim):
            H[i, j] = H[j, i] = f(E[i] + E[j])[0] - fp[i] - fp[j] + f0
    g = (fp - fm) / 2
    x, *_ = np.linalg.lstsq(H, -g, rcond=None)
    return f(x)[1]


@pytest.mark.parametrize("rho", [0.5, 2.0])
def test_split_blocks_minimize_augmented_lagrangian(rho):
    rng = np.random.default_rng(4)
    env = random_envelope(1, d=2)
    lam = 0.3
    s = random_state(DualState, 2, rng)
    n = admm_step(s, env, lam, rho)

    # (theta, d, e) with the copies and multipliers of the previous sweep
    oracle = minimize_block(split_lagrangian, s, env, lam, rho, ["theta", "d", "e"])
    for name in ("theta", "d", "e"):
        np.testing.assert_allclose(getattr(n, name), getattr(oracle, name), atol=1e-6)

    # (A, B) after block 1 updated G and the nonnegative copies
    mid = s.copy()
    mid.G, mid.A_copy, mid.B_copy = n.G, n.A_copy, n.B_copy
    oracle = minimize_block(split_lagrangian, mid, env, lam, rho, ["A", "B"])
    np.testing.assert_allclose(n.A, oracle.A, atol=1e-6)
    np.testing.assert_allclose(n.B, oracle.B, atol=1e-6)


@pytest.mark.parametrize("rho", [0.5, 2.0])
def test_lifted_primal_block_minimizes_augmented_lagrangian(rho):
    rng = np.random.default_rng(5)
    env = random_envelope(2, d=2)
    lam = 0.3
    s = random_state(LiftedState, 2, rng)
    n = lifted_step(s, env, lam, rho)
    oracle = minimize_block(lifted_lagrangian, s, env, lam, rho, ["theta", "d", "e", "A", "B"])
    for name in ("theta", "d", "e", "A", "B"):
        np.testing.assert_allclose(getattr(n, name), getattr(oracle, name), atol=1e-6)


# ------------------------------------------------------------- step behaviour


def test_split_invariants_hold_after_every_step(worked_env):
    s = DualState.zeros(3)
    s.theta_copy = np.array([0.3, -0.2, 0.1])
    for _ in range(300):
        s = admm_step(s, worked_env, 0.1, 1.0)
        for name in ("A_copy", "B_copy", "d_copy", "e_copy"):
            assert np.all(getattr(s, name) >= 0)
        assert np.linalg.eigvalsh(s.G - np.outer(s.theta_copy, s.theta_copy)).min() >= -1e-8


def test_lifted_invariants_hold_after_every_step(worked_env):
    s = LiftedState.zeros(3)
    for _ in range(300):
        s = lifted_step(s, worked_env, 0.1, 1.0)
        for name in ("A_copy", "B_copy", "d_copy", "e_copy"):
            assert np.all(getattr(s, name) >= 0)
        assert np.linalg.eigvalsh(s.W).min() >= -1e-8


@pytest.mark.parametrize("rho", [0.5, 1.0, 2.0])
def test_first_step_multipliers_are_scaled_residuals(rho):
    env = random_envelope(7, d=2)
    n = admm_step(DualState.zeros(2), env, 0.5, rho)
    np.testing.assert_allclose(n.M_A, rho * (n.A - n.A_copy))
    np.testing.assert_allclose(n.M_B, rho * (n.B - n.B_copy))
    np.testing.assert_allclose(n.mu_d, rho * (n.d - n.d_copy))
    np.testing.assert_allclose(n.mu_e, rho * (n.e - n.e_copy))
    np.testing.assert_allclose(n.mu_theta, rho * (n.theta - n.theta_copy))
    np.testing.assert_allclose(n.eta, rho * (2 * n.theta - n.d + n.e))
    np.testing.assert_allclose(n.Gamma, rho * (n.B - n.A - n.G))

    m = lifted_step(LiftedState.zeros(2), env, 0.5, rho)
    np.testing.assert_allclose(m.Omega, rho * (m.W - m.lifted_target()))
    np.testing.assert_allclose(m.eta, rho * (2 * m.theta - m.d + m.e))


@pytest.mark.parametrize("method", ["lifted", "split"])
def test_converged_state_is_a_fixed_point(method):
    env = random_envelope(3, d=2)
    _, report, s = admm_solve(env, 0.5, AdmmConfig(tol=1e-12, T=200_000), method=method)
    assert report.converged
    step = lifted_step if method == "lifted" else admm_step
    assert step(s, env, 0.5, 1.0).max_change(s) <= 1e-8


def test_worked_example_converges_in_5000_steps(worked_env):
    _, report, _ = admm_solve(worked_env, 0.1, AdmmConfig(rho=1.0, T=5000, tol=1e-5))
    assert report.converged and report.residuals[-1] <= 1e-5


def test_zero_width_box_gives_ridge():
    env = random_envelope(4, c=0.0)
    state, report, _ = admm_solve(env, 0.5, AdmmConfig(tol=1e-9, T=50_000))
    expected = ridge_solve(env.C0, env.b0, 0.5)
    np.testing.assert_allclose(state.theta, expected, rtol=1e-5)
    np.testing.assert_allclose(report.admm_theta, expected, rtol=1e-5, atol=1e-7)


def test_residual_trend_and_rho_ordering(worked_env):
    iterations = []
    for rho in (0.5, 1.0, 2.0):
        _, report, _ = admm_solve(worked_env, 0.1, AdmmConfig(rho=rho, tol=1e-5))
        assert report.converged
        r = np.log(report.residuals)
        slope = np.polyfit(np.arange(r.size), r, 1)[0]
        assert slope < 0
        iterations.append(report.iterations)
    assert iterations[0] < iterations[1] < iterations[2]


def psd_saddle_oracle(env, lam):
    """Solve max over the box and PSD cone of -b'(C + lam I)^-1 b directly."""
    d = env.dim
    (C_min, C_max), (b_min, b_max) = env.C_bounds(), env.b_bounds()
    C = cp.Variable((d, d), PSD=True)
    b = cp.Variable(d)
    prob = cp.Problem(
        cp.Maximize(-cp.matrix_frac(b, C + lam * np.eye(d))),
        [C >= C_min, C <= C_max, b >= b_min, b <= b_max],
    )
    prob.solve(solver=cp.CLARABEL)
    return np.linalg.solve(C.value + lam * np.eye(d), b.value), prob.value


@pytest.mark.parametrize("seed", range(3))
def test_matches_convex_solver_on_low_rank_centers(seed):
    # wide boxes around a rank-one center, so the PSD cone cuts through the box
    rng = np.random.default_rng(seed)
    v = rng.normal(size=(3, 1))
    C0 = v @ v.T
    env = make_envelope(C0, np.full((3, 3), 0.5), rng.normal(size=3), np.full(3, 0.2))
    lam = 0.5
    theta_ref, value = psd_saddle_oracle(env, lam)
    state, report, _ = admm_solve(env, lam, AdmmConfig(tol=1e-8, T=100_000))
    assert report.converged
    np.testing.assert_allclose(state.theta, theta_ref, atol=1e-4)
    assert state.g == pytest.approx(value, abs=1e-4)


def test_matches_convex_solver_on_worked_example(worked_env):
    theta_ref, _ = psd_saddle_oracle(worked_env, 0.1)
    state, _, _ = admm_solve(worked_env, 0.1, AdmmConfig(tol=1e-8))
    np.testing.assert_allclose(state.theta, theta_ref, atol=1e-4)


def test_psd_constraint_changes_solution_when_it_binds():
    # C = [[a, c], [c, a]] with a <= 1, |c| <= 3 and b = (1, 1): the inner
    # value -2 / (a + lam + c) grows with c, so the relaxed maximizer takes
    # a = 1, c = 3 (indefinite) while the PSD cone caps c at 1
    env = make_envelope(
        np.diag([0.5, 0.5]), np.array([[0.5, 3.0], [3.0, 0.5]]), np.ones(2), np.zeros(2)
    )
    relaxed, _ = pga_solve(env, 3.0)
    np.testing.assert_allclose(relaxed.theta, [1 / 7, 1 / 7], atol=1e-8)
    constrained, report, _ = admm_solve(env, 3.0, AdmmConfig(tol=1e-9, T=100_000))
    assert report.converged
    np.testing.assert_allclose(constrained.theta, [1 / 5, 1 / 5], atol=1e-6)


def test_relaxed_optimum_is_psd_on_worked_example(worked_env):
    # the relaxed maximizer already lies in the PSD cone here, so both
    # problems share their saddle point and the solvers agree
    relaxed, _ = pga_solve(worked_env, 0.1, T=50_000)
    assert np.linalg.eigvalsh(relaxed.C).min() > 0.3
    constrained, _, _ = admm_solve(worked_env, 0.1, AdmmConfig(tol=1e-9, T=50_000))
    assert np.linalg.norm(constrained.theta - relaxed.theta) <= 1e-6


def test_weak_duality_on_small_instances():
    for seed in range(3):
        env = random_envelope(10 + seed, d=2, c=1.0)
        lam = 0.5
        state, _, s = admm_solve(env, lam, AdmmConfig(tol=1e-8, T=100_000))
        c_bounds, b_bounds = env.C_bounds(), env.b_bounds()
        theta = s.theta
        # brute-force max of theta'C theta - 2 b'theta + lam |theta|^2 over the box and PSD cone
        grids = [np.linspace(c_bounds[0][i, j], c_bounds[1][i, j], 61) for i, j in ((0, 0), (0, 1), (1, 1))]
        best = -np.inf
        for c00, c01, c11 in itertools.product(*grids):
            if c00 < 0 or c11 < 0 or c00 * c11 < c01 * c01:
                continue
            val = c00 * theta[0] ** 2 + 2 * c01 * theta[0] * theta[1] + c11 * theta[1] ** 2
            best = max(best, val)
        b_star = np.where(theta < 0, b_bounds[1], b_bounds[0])
        inner = best - 2 * b_star @ theta + lam * theta @ theta
        assert dual_objective(s, c_bounds, b_bounds, lam) >= inner - 1e-3


def test_split_scheme_stalls_from_cold_start(worked_env):
    # why the lifted scheme is the default: the split iteration satisfies
    # every coupling at theta = 0 without being optimal
    _, report, s = admm_solve(worked_env, 0.1, AdmmConfig(tol=1e-6), method="split")
    assert report.converged
    assert np.linalg.norm(s.theta) <= 1e-6
    lifted, _, _ = admm_solve(worked_env, 0.1, AdmmConfig(tol=1e-6))
    assert np.linalg.norm(lifted.theta) > 1.0


def test_config_and_input_validation(worked_env):
    with pytest.raises(ValueError):
        AdmmConfig(rho=0.0)
    with pytest.raises(ValueError):
        AdmmConfig(T=0)
    with pytest.raises(ValueError):
        admm_solve(worked_env, 0.0)
    with pytest.raises(ValueError):
        admm_solve(worked_env, 1.0, method="other")


def test_report_trace(worked_env):
    _, report, _ = admm_solve(worked_env, 1.0, AdmmConfig(T=7, tol=0.0))
    recs = list(report.records())
    assert len(recs) == 7 and recs[0]["iteration"] == 1
    assert set(recs[0]) == {"iteration", "objective", "residual"}
