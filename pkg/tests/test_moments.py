import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from momentrobust.data_model import MaskedMatrix, MissingnessSpec, apply_mcar
from momentrobust.moments import (
    MomentEnvelope,
    UnavailablePairError,
    bootstrap_radius,
    build_envelope,
    cross_radius,
    mean_radius,
    point_cross_moment,
    point_mean,
    point_second_moment,
)


def loop_second_moment(values, mask):
    n, d = values.shape
    C = np.full((d, d), np.nan)
    for i in range(d):
        for j in range(d):
            total, count = 0.0, 0
            for r in range(n):
                if mask[r, i] and mask[r, j]:
                    total += values[r, i] * values[r, j]
                    count += 1
            if count:
                C[i, j] = total / count
    return C


def random_masked(seed, n=20, d=4, p=0.3):
    rng = np.random.default_rng(seed)
    full = MaskedMatrix.from_array(rng.normal(size=(n, d)))
    return apply_mcar(full, MissingnessSpec.mcar(p, seed))


def test_second_moment_examples():
    C0, counts = point_second_moment(MaskedMatrix.from_array([[1.0, 2.0], [3.0, 4.0]]))
    np.testing.assert_allclose(C0, [[5, 7], [7, 10]])
    np.testing.assert_array_equal(counts, [[2, 2], [2, 2]])

    C0, counts = point_second_moment(MaskedMatrix.from_array([[1.0, np.nan], [3.0, 4.0]]))
    assert C0[0, 1] == 12 and C0[0, 0] == 5 and C0[1, 1] == 16
    assert counts[0, 1] == 1


@pytest.mark.parametrize("seed", range(5))
def test_second_moment_matches_loop(seed):
    m = random_masked(seed)
    C0, counts = point_second_moment(m)
    expected = loop_second_moment(m.values, m.mask)
    np.testing.assert_allclose(C0, expected, rtol=1e-13, atol=1e-15)
    np.testing.assert_array_equal(C0, C0.T)
    np.testing.assert_array_equal(counts, (m.mask.T.astype(int) @ m.mask.astype(int)))


def test_cross_moment():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(10, 3))
    y = rng.normal(size=10)
    b0, counts = point_cross_moment(MaskedMatrix.from_array(X), y)
    np.testing.assert_allclose(b0, X.T @ y / 10)
    assert np.all(counts == 10)

    b0, counts = point_cross_moment(MaskedMatrix.from_array(X), np.full(10, np.nan))
    assert np.all(np.isnan(b0)) and np.all(counts == 0)


@pytest.mark.parametrize("seed", range(3))
def test_cross_moment_matches_loop(seed):
    m = random_masked(seed, d=5)
    feats, y = m.columns(range(4)), (m.values[:, 4], m.mask[:, 4])
    b0, _ = point_cross_moment(feats, y)
    expected = loop_second_moment(m.values, m.mask)[:4, 4]
    np.testing.assert_allclose(b0, expected, rtol=1e-13)


def test_point_mean():
    mu, counts = point_mean(MaskedMatrix.from_array([[1.0, np.nan], [3.0, np.nan]]))
    assert mu[0] == 2.0 and np.isnan(mu[1])
    np.testing.assert_array_equal(counts, [2, 0])


def test_radius_degenerate_cases():
    const = MaskedMatrix.from_array(np.tile([2.0, -1.0], (30, 1)))
    assert bootstrap_radius(const, 0, 1, k=10) == 0.0
    single = MaskedMatrix.from_array([[1.0, 2.0], [3.0, np.nan], [np.nan, 5.0]])
    assert bootstrap_radius(single, 0, 1, k=10) == 0.0
    with pytest.raises(UnavailablePairError):
        bootstrap_radius(MaskedMatrix.from_array([[1.0, np.nan], [np.nan, 2.0]]), 0, 1)
    with pytest.raises(ValueError):
        bootstrap_radius(const, 0, 1, k=1)


def test_radius_uniform_standard_error():
    rng = np.random.default_rng(42)
    m = MaskedMatrix.from_array(rng.random((200, 2)))
    # Var(UV) = E[U^2] E[V^2] - (E[U] E[V])^2 = 1/9 - 1/16 for independent uniforms
    se = np.sqrt((1 / 9 - 1 / 16) / 200)
    r = bootstrap_radius(m, 0, 1, k=100, seed=3)
    assert se / 2 <= r <= 2 * se


def test_radius_symmetric_in_pair_order():
    m = random_masked(1, n=50)
    assert bootstrap_radius(m, 0, 2, seed=9) == bootstrap_radius(m, 2, 0, seed=9)


def test_other_radii():
    m = random_masked(2, n=80, d=3)
    y = np.random.default_rng(0).normal(size=80)
    assert cross_radius(m, y, 1, k=20) > 0
    assert mean_radius(m, 2, k=20) > 0


def test_envelope_zero_width():
    m = random_masked(3, n=40)
    env = build_envelope(m.columns(range(3)), (m.values[:, 3], m.mask[:, 3]), k=5, c=0)
    lo, hi = env.C_bounds()
    np.testing.assert_array_equal(lo, env.C0)
    np.testing.assert_array_equal(hi, env.C0)
    blo, bhi = env.b_bounds()
    np.testing.assert_array_equal(blo, bhi)


def test_envelope_radii_shrink_like_inverse_sqrt_n():
    rng = np.random.default_rng(5)
    radii = []
    for n in (100, 400, 1600):
        X = rng.normal(size=(n, 3)) + 1.0
        env = build_envelope(MaskedMatrix.from_array(X), k=200, c=1, seed=n)
        radii.append(env.Delta.mean())
    ratios = np.array(radii[:-1]) / np.array(radii[1:])
    assert np.all((ratios > 1.5) & (ratios < 2.7)), ratios


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0, 5))
def test_envelope_invariants(seed, c):
    m = random_masked(seed, n=25, p=0.4)
    y = np.random.default_rng(seed).normal(size=25)
    env = build_envelope(m, y, k=4, c=c, seed=seed)
    np.testing.assert_array_equal(env.C0, env.C0.T)
    np.testing.assert_array_equal(env.Delta, env.Delta.T)
    np.testing.assert_array_equal(env.counts, env.counts.T)
    assert np.all(env.Delta >= 0) and np.all(env.delta >= 0) and np.all(env.mu_delta >= 0)
    lo, hi = env.C_bounds()
    assert np.all(lo <= hi)
    ok = ~env.C_flagged
    assert np.all(lo[ok] <= env.C0[ok]) and np.all(env.C0[ok] <= hi[ok])


def test_envelope_deterministic_and_thread_independent():
    m = random_masked(7, n=60, d=5)
    a = build_envelope(m, k=10, seed=4)
    b = build_envelope(m, k=10, seed=4, threads=4)
    assert a.to_json() == b.to_json()
    c = build_envelope(m, k=10, seed=5)
    assert not np.array_equal(a.Delta, c.Delta)


def test_flagged_pairs_get_wide_box():
    nan = np.nan
    X = np.array([[1.0, 2.0, nan], [3.0, 1.0, nan], [nan, 4.0, 5.0], [nan, 2.0, 1.0]])
    env = build_envelope(MaskedMatrix.from_array(X), k=5, c=1.0)
    assert env.C_flagged[0, 2] and env.C_flagged[2, 0] and env.C_flagged.sum() == 2
    B = np.max(np.abs(env.C0[~env.C_flagged]))
    lo, hi = env.C_bounds()
    assert lo[0, 2] == -B and hi[0, 2] == B
    assert env.to_dict()["flagged_pairs"] == [[0, 2]]


def test_envelope_json_round_trip():
    m = random_masked(8, n=30)
    env = build_envelope(m.columns(range(3)), (m.values[:, 3], m.mask[:, 3]), k=5, seed=2)
    back = MomentEnvelope.from_json(env.to_json())
    for name in ("C0", "Delta", "b0", "delta", "mu0", "mu_delta", "counts"):
        np.testing.assert_array_equal(getattr(back, name), getattr(env, name))
    assert back.c == env.c and back.column_names == env.column_names


def test_consistency_under_mcar():
    rng = np.random.default_rng(21)
    A = rng.normal(size=(4, 4))
    C_true = A @ A.T / 4 + np.eye(4)
    L = np.linalg.cholesky(C_true)
    errors, widths = [], []
    for n in (250, 1000, 4000, 16000):
        X = rng.normal(size=(n, 4)) @ L.T
        m = apply_mcar(MaskedMatrix.from_array(X), MissingnessSpec.mcar(0.3, n))
        env = build_envelope(m, k=30, c=1, seed=1)
        errors.append(np.abs(env.C0 - C_true).mean())
        widths.append(env.Delta.mean())
    for series in (errors, widths):
        rises = [(a, b) for a, b in zip(series, series[1:]) if b > a]
        assert len(rises) <= 1 and all(b <= 1.1 * a for a, b in rises), series
