import numpy as np
import pytest

from momentrobust.moments import MomentEnvelope

# 3x3 worked example: a nearly rank-deficient second-moment matrix with a
# small box around it.  The radius matrix is given unsymmetric and is
# averaged with its transpose.
FIXTURE_C = np.array([[97.0, 40.0, 92.0], [40.0, 17.0, 38.0], [92.0, 38.0, 88.0]])
FIXTURE_DELTA_RAW = np.array([[0.2, 0.3, 0.2], [0.3, 0.1, 0.2], [0.1, 0.3, 0.1]])
FIXTURE_B = np.array([6.65, 8.97, 5.40])
FIXTURE_DELTA_B = np.array([0.1, 0.2, 0.2])


def make_envelope(C0, Delta, b0, delta, c=1.0) -> MomentEnvelope:
    d = len(b0)
    return MomentEnvelope(
        C0=C0, Delta=Delta, mu0=np.zeros(d), mu_delta=np.zeros(d), c=c, b0=b0, delta=delta
    )


def fixture_envelope(c=1.0) -> MomentEnvelope:
    Delta = (FIXTURE_DELTA_RAW + FIXTURE_DELTA_RAW.T) / 2
    return make_envelope(FIXTURE_C, Delta, FIXTURE_B, FIXTURE_DELTA_B, c)


def random_envelope(seed: int, d: int = 4, n: int = 60, c: float = 1.0) -> MomentEnvelope:
    """Complete-data moments with random box radii around them."""
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, d)) @ rng.normal(size=(d, d))
    y = X @ rng.normal(size=d) + rng.normal(size=n)
    C0 = X.T @ X / n
    b0 = X.T @ y / n
    D = np.abs(rng.normal(size=(d, d))) * 0.1 * np.abs(C0).mean()
    D = (D + D.T) / 2
    db = np.abs(rng.normal(size=d)) * 0.1 * np.abs(b0).mean()
    return make_envelope(C0, D, b0, db, c)


def grid_ellipsoid_oracle(alpha, G):
    """Project by scanning the scalar multiplier on a grid, then a finer grid."""
    w, U = np.linalg.eigh(G)
    gamma = U.T @ alpha
    w, gamma = w[:, None], gamma[:, None]

    def excess(mu):
        return np.abs(np.sum(gamma**2 * w / (w + mu) ** 2, axis=0) - 1.0)

    mus = np.linspace(0, 1e3, 1_000_001)[:, None]
    best = mus[np.argmin(excess(mus.T))][0]
    fine = np.linspace(max(0.0, best - 2e-3), best + 2e-3, 400_001)[:, None]
    mu = fine[np.argmin(excess(fine.T))][0]
    return U @ (gamma * w / (w + mu))[:, 0]


@pytest.fixture
def worked_env():
    return fixture_envelope()
