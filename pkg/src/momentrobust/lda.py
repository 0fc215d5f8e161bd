"""Robust two-class normal discriminant analysis with missing features and labels.

Each class ``t`` is modelled as ``N(mu_t, Sigma_t)``.  The class mean is only
known to lie in a bootstrap box and the covariance is one of ``k``
bootstrap estimates.  Training minimizes over the weights ``w`` the
worst-case logistic loss

    max_{i, j}  pi_1 E_{N(mu_1*, Sigma_1i)}[-log s(w'x)] + pi_0 E_{N(mu_0*, Sigma_0j)}[-log(1 - s(w'x))]

where ``s`` is the sigmoid, the worst-case means ``mu_t*`` follow a sign
rule on ``w``, and the maximum over the finite sets is smoothed by a
quadratic penalty on the mixing weights.  Expectations are Monte Carlo
averages with common random numbers across the covariance candidates.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Any

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.special import expit

from . import _rng
from .admm import psd_project
from .data_model import MaskedMatrix
from .moments import (
    DEFAULT_C,
    DEFAULT_K,
    bootstrap_std,
    point_mean,
    point_second_moment,
)

DEFAULT_NMC = 512
DEFAULT_ALPHA = 0.05
DEFAULT_T = 300
DEFAULT_EPS = 1e-8
DELTA_FRACTION = 0.1


class EmptyClassError(ValueError):
    """A class has no rows."""


# --------------------------------------------------------------------------
# Worst-case means and covariance sets
# --------------------------------------------------------------------------


def worst_case_mean(w, mu_min, mu_max, label: int = 1) -> np.ndarray:
    """Mean in the box that maximizes the class loss for weights ``w``.

    The positive class loss decreases in ``w'mu``, so coordinates with
    ``w <= 0`` take the upper bound.  The negative class mirrors this.
    """
    w = np.asarray(w, dtype=float)
    mu_min = np.asarray(mu_min, dtype=float)
    mu_max = np.asarray(mu_max, dtype=float)
    if np.any(mu_min > mu_max):
        raise ValueError("mu_min must not exceed mu_max")
    if label == 1:
        return np.where(w <= 0, mu_max, mu_min)
    if label == 0:
        return np.where(w <= 0, mu_min, mu_max)
    raise ValueError("label must be 0 or 1")


def pairwise_covariance(m: MaskedMatrix) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``(covariance, means, second_moments)`` from pairwise-available entries.

    The covariance is ``second_moment - mean mean'``.  Pairs never observed
    together (and columns with no entries) contribute zero covariance.
    """
    second, counts = point_second_moment(m)
    mu, _ = point_mean(m)
    mu0 = np.nan_to_num(mu)
    cov = np.where(counts > 0, np.nan_to_num(second) - np.outer(mu0, mu0), 0.0)
    return (cov + cov.T) / 2, mu, second


def resample_rows(n: int, index: int, seed: int) -> np.ndarray:
    """Row indices of bootstrap resample ``index`` (``index >= 1``)."""
    return _rng.stream(seed, _rng.TAG_COV_SET, index).integers(0, n, size=n)


def bootstrap_cov_set(class_data: MaskedMatrix, k: int = DEFAULT_K, seed: int = 0) -> list[np.ndarray]:
    """``k`` covariance candidates for one class.

    The first is the plug-in estimate on all rows; the others come from row
    resamples drawn by :func:`resample_rows`.  Each is PSD-projected.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    n = class_data.n_rows
    if n == 0:
        raise EmptyClassError("cannot estimate covariances of an empty class")
    out = [psd_project(pairwise_covariance(class_data)[0])]
    for t in range(1, k):
        out.append(psd_project(pairwise_covariance(class_data.rows(resample_rows(n, t, seed)))[0]))
    return out


# --------------------------------------------------------------------------
# Regularized maximization over the simplex
# --------------------------------------------------------------------------


@dataclass
class SimplexWeights:
    p: np.ndarray
    lam: float
    iterations: int = 0


def _weights(f, lam, delta):
    return np.maximum((f - lam) / (2.0 * delta), 0.0)


def simplex_bisection(f, delta: float, eps: float = DEFAULT_EPS, max_iter: int = 64) -> SimplexWeights:
    """Maximize ``p'f - delta |p|^2`` over the probability simplex by bisection.

    The optimum is ``p_i = max((f_i - lam) / (2 delta), 0)`` with ``lam``
    chosen so the weights sum to one.  The sum is nonincreasing in ``lam``
    and lies above one at ``max f - 2 delta`` and at zero at ``max f``, so
    that interval always brackets the root.
    """
    f = np.asarray(f, dtype=float)
    if f.ndim != 1 or f.size == 0:
        raise ValueError("f must be a nonempty vector")
    if not delta > 0:
        raise ValueError("delta must be positive")
    hi = float(f.max())
    lo = hi - 2.0 * delta
    lam = lo
    p = _weights(f, lam, delta)
    it = 0
    while abs(p.sum() - 1.0) > eps and it < max_iter:
        it += 1
        lam = 0.5 * (lo + hi)
        p = _weights(f, lam, delta)
        if p.sum() < 1.0:
            hi = lam
        else:
            lo = lam
    s = p.sum()
    if abs(s - 1.0) > eps:
        # interval exhausted in floating point; renormalize the active weights
        p = p / s
    return SimplexWeights(p, float(lam), it)


def simplex_sort_solve(f, delta: float) -> SimplexWeights:
    """Exact solution of the same problem by sorting ``f``."""
    f = np.asarray(f, dtype=float)
    if f.ndim != 1 or f.size == 0:
        raise ValueError("f must be a nonempty vector")
    if not delta > 0:
        raise ValueError("delta must be positive")
    s = np.sort(f)[::-1]
    csum = np.cumsum(s)
    r = np.arange(1, f.size + 1)
    lams = (csum - 2.0 * delta) / r
    active = np.flatnonzero(s > lams)
    j = int(active[-1])
    lam = float(lams[j])
    return SimplexWeights(_weights(f, lam, delta), lam, 0)


# --------------------------------------------------------------------------
# Monte Carlo class losses
# --------------------------------------------------------------------------


def _sqrt_psd(S: np.ndarray) -> np.ndarray:
    S = np.asarray(S, dtype=float)
    S = (S + S.T) / 2
    w, U = np.linalg.eigh(S)
    scale = max(1.0, float(np.max(np.abs(w)))) if w.size else 1.0
    if w.size and w.min() < -1e-8 * scale:
        raise ValueError(f"covariance is not PSD (eigenvalue {w.min():.3e})")
    return U * np.sqrt(np.maximum(w, 0.0))


def standard_normals(seed: int, n_mc: int, dim: int, *key: int) -> np.ndarray:
    """Standard normal draws shared by every covariance candidate with the same key."""
    return _rng.stream(seed, _rng.TAG_MC, *key).standard_normal((n_mc, dim))


def _loss_and_grad(w, bias, mu, root, prior, Z, label):
    X = mu + Z @ root.T
    z = X @ w + bias
    if label == 1:
        loss = np.logaddexp(0.0, -z)
        dz = -expit(-z)
    else:
        loss = np.logaddexp(0.0, z)
        dz = expit(z)
    value = prior * float(loss.mean())
    grad_w = prior * (dz @ X) / z.size
    grad_b = prior * float(dz.mean())
    return value, grad_w, grad_b


def class_loss_mc(
    w,
    mu,
    Sigma,
    prior: float,
    n_mc: int = DEFAULT_NMC,
    seed: int = 0,
    label: int = 1,
    bias: float = 0.0,
    with_grad: bool = False,
    draws: np.ndarray | None = None,
):
    """Monte Carlo estimate of ``prior * E[-log s(w'x + bias)]`` (``label=1``)
    or ``prior * E[-log(1 - s(w'x + bias))]`` (``label=0``), ``x ~ N(mu, Sigma)``.

    Uses the mean over draws.  With ``with_grad`` also returns the gradients
    with respect to ``w`` and ``bias``.
    """
    w = np.asarray(w, dtype=float)
    mu = np.asarray(mu, dtype=float)
    if n_mc < 1:
        raise ValueError("n_mc must be at least 1")
    root = _sqrt_psd(Sigma)
    Z = standard_normals(seed, n_mc, w.size) if draws is None else draws
    value, gw, gb = _loss_and_grad(w, bias, mu, root, prior, Z, label)
    return (value, gw, gb) if with_grad else value


# --------------------------------------------------------------------------
# Models
# --------------------------------------------------------------------------


@dataclass
class ClassMoments:
    mu_min: np.ndarray
    mu_max: np.ndarray
    covariances: list[np.ndarray]
    prior: float

    def to_dict(self) -> dict[str, Any]:
        return {
            "mu_min": self.mu_min.tolist(),
            "mu_max": self.mu_max.tolist(),
            "covariances": [S.tolist() for S in self.covariances],
            "prior": self.prior,
        }

    @classmethod
    def from_dict(cls, doc) -> ClassMoments:
        return cls(
            np.asarray(doc["mu_min"], dtype=float),
            np.asarray(doc["mu_max"], dtype=float),
            [np.asarray(S, dtype=float) for S in doc["covariances"]],
            float(doc["prior"]),
        )


@dataclass
class LdaModel:
    """Linear classifier ``s(w'(x - center) + bias) >= threshold``."""

    w: np.ndarray
    bias: float = 0.0
    center: np.ndarray | None = None
    threshold: float = 0.5
    feature_names: tuple[str, ...] = ()
    class0: ClassMoments | None = None
    class1: ClassMoments | None = None
    loss_trace: list[float] = field(default_factory=list)
    grad_calls: list[int] = field(default_factory=list)
    settings: dict = field(default_factory=dict)

    def __post_init__(self):
        self.w = np.asarray(self.w, dtype=float)
        if self.center is None:
            self.center = np.zeros_like(self.w)
        self.center = np.asarray(self.center, dtype=float)
        if not np.all(np.isfinite(self.w)) or not np.isfinite(self.bias):
            raise ValueError("weights must be finite")
        if not self.feature_names:
            self.feature_names = tuple(f"x{j}" for j in range(self.w.size))

    @property
    def dim(self) -> int:
        return self.w.size

    def decision(self, X, mask=None) -> np.ndarray:
        """``w'(x - center) + bias`` with missing coordinates contributing zero."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.dim:
            raise ValueError(f"rows have {X.shape[1]} features, model expects {self.dim}")
        mask = ~np.isnan(X) if mask is None else np.atleast_2d(np.asarray(mask, dtype=bool))
        Xc = np.where(mask, X - self.center, 0.0)
        return Xc @ self.w + self.bias

    def predict_proba(self, X, mask=None) -> np.ndarray:
        return expit(self.decision(X, mask))

    def to_dict(self) -> dict[str, Any]:
        return {
            "kind": "lda",
            "feature_names": list(self.feature_names),
            "w": self.w.tolist(),
            "bias": self.bias,
            "center": self.center.tolist(),
            "threshold": self.threshold,
            "class0": self.class0.to_dict() if self.class0 else None,
            "class1": self.class1.to_dict() if self.class1 else None,
            "loss_trace": list(self.loss_trace),
            "settings": self.settings,
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_dict(cls, doc) -> LdaModel:
        if doc.get("kind", "lda") != "lda":
            raise ValueError(f"not an LDA model: kind={doc.get('kind')!r}")
        return cls(
            w=doc["w"],
            bias=float(doc.get("bias", 0.0)),
            center=doc.get("center"),
            threshold=float(doc.get("threshold", 0.5)),
            feature_names=tuple(doc.get("feature_names") or ()),
            class0=ClassMoments.from_dict(doc["class0"]) if doc.get("class0") else None,
            class1=ClassMoments.from_dict(doc["class1"]) if doc.get("class1") else None,
            loss_trace=list(doc.get("loss_trace", [])),
            settings=doc.get("settings", {}),
        )

    @classmethod
    def from_json(cls, text: str) -> LdaModel:
        return cls.from_dict(json.loads(text))


def classify(model: LdaModel, x, mask=None) -> int:
    """Label of one row; NaN or ``mask=False`` marks a missing feature."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise ValueError("classify expects a single row")
    return int(model.predict_proba(x, mask)[0] >= model.threshold)


def classify_batch(model: LdaModel, m: MaskedMatrix) -> np.ndarray:
    return (model.predict_proba(m.values, m.mask) >= model.threshold).astype(int)


# --------------------------------------------------------------------------
# Training
# --------------------------------------------------------------------------


def _labels(y, n: int) -> tuple[np.ndarray, np.ndarray]:
    y = np.asarray(y, dtype=float)
    if y.shape != (n,):
        raise ValueError(f"expected {n} labels, got shape {y.shape}")
    known = ~np.isnan(y)
    if np.any((y[known] != 0) & (y[known] != 1)):
        raise ValueError("labels must be 0, 1 or missing")
    return y, known


def class_moments(m: MaskedMatrix, center, k: int, c: float, seed: int, label: int, prior: float) -> ClassMoments:
    """Mean box and covariance set for the rows of one class (already selected)."""
    if m.n_rows == 0:
        raise EmptyClassError(f"class {label} has no labelled rows")
    mu, counts = point_mean(m)
    mu = np.where(counts > 0, mu - center, 0.0)
    radius = np.zeros_like(mu)
    for j in np.flatnonzero(counts > 0):
        x = m.values[m.mask[:, j], j]
        rng = _rng.stream(seed, _rng.TAG_MEAN, label, j)
        radius[j] = bootstrap_std(x, max(k, 2), rng)
    covs = bootstrap_cov_set(m, k, _seed_for(seed, label))
    return ClassMoments(mu - c * radius, mu + c * radius, covs, prior)


def _seed_for(seed: int, label: int) -> int:
    return int(np.random.SeedSequence(seed, spawn_key=(_rng.TAG_COV_SET, label)).generate_state(1)[0])


@dataclass
class _Objective:
    value: float
    grad_w: np.ndarray
    grad_b: float
    f: np.ndarray
    g: np.ndarray
    p: np.ndarray
    q: np.ndarray
    calls: int


def _robust_step(w, bias, m1: ClassMoments, m0: ClassMoments, Z1, Z0, delta, eps, fit_intercept) -> _Objective:
    mu1 = worst_case_mean(w, m1.mu_min, m1.mu_max, 1)
    mu0 = worst_case_mean(w, m0.mu_min, m0.mu_max, 0)
    parts1 = [_loss_and_grad(w, bias, mu1, _sqrt_psd(S), m1.prior, Z1, 1) for S in m1.covariances]
    parts0 = [_loss_and_grad(w, bias, mu0, _sqrt_psd(S), m0.prior, Z0, 0) for S in m0.covariances]
    f = np.array([v for v, _, _ in parts1])
    g = np.array([v for v, _, _ in parts0])
    df = delta if delta is not None else max(DELTA_FRACTION * float(f.max()), 1e-12)
    dg = delta if delta is not None else max(DELTA_FRACTION * float(g.max()), 1e-12)
    p = simplex_bisection(f, df, eps).p
    q = simplex_bisection(g, dg, eps).p
    grad_w = sum(pi * gw for pi, (_, gw, _) in zip(p, parts1)) + sum(
        qj * gw for qj, (_, gw, _) in zip(q, parts0)
    )
    grad_b = sum(pi * gb for pi, (_, _, gb) in zip(p, parts1)) + sum(
        qj * gb for qj, (_, _, gb) in zip(q, parts0)
    )
    if not fit_intercept:
        grad_b = 0.0
    return _Objective(float(f.max() + g.max()), grad_w, float(grad_b), f, g, p, q, len(parts1) + len(parts0))


def robust_objective(w, bias, m1: ClassMoments, m0: ClassMoments, n_mc: int = DEFAULT_NMC, seed: int = 0) -> float:
    """Worst case over the covariance sets of the Monte Carlo class losses at fixed weights."""
    w = np.asarray(w, dtype=float)
    Z1 = standard_normals(seed, n_mc, w.size, 0, 1)
    Z0 = standard_normals(seed, n_mc, w.size, 0, 0)
    return _robust_step(w, bias, m1, m0, Z1, Z0, None, DEFAULT_EPS, True).value


def rnda_train(
    m: MaskedMatrix,
    y,
    k: int = 5,
    T: int = DEFAULT_T,
    alpha: float = DEFAULT_ALPHA,
    delta: float | None = None,
    n_mc: int = DEFAULT_NMC,
    seed: int = 0,
    c: float = DEFAULT_C,
    eps: float = DEFAULT_EPS,
    fit_intercept: bool = True,
    w0=None,
) -> LdaModel:
    """Train the robust discriminant on the labelled rows of ``m``.

    ``y`` holds 0, 1 or NaN; unlabelled rows are ignored.  Features are
    centered by the pooled per-column mean of the labelled rows.  ``delta``
    fixes the smoothing weight; by default it is a tenth of the largest
    class loss, recomputed every iteration.
    """
    y, known = _labels(y, m.n_rows)
    if k < 1 or T < 0 or not alpha > 0 or n_mc < 1:
        raise ValueError("need k >= 1, T >= 0, alpha > 0 and n_mc >= 1")
    if delta is not None and not delta > 0:
        raise ValueError("delta must be positive")
    labelled = m.rows(known)
    yl = y[known]
    n1 = int(np.sum(yl == 1))
    n0 = int(np.sum(yl == 0))
    if n1 == 0 or n0 == 0:
        raise EmptyClassError(f"both classes need labelled rows (got {n0} zeros and {n1} ones)")
    center, _ = point_mean(labelled)
    center = np.nan_to_num(center)
    m1 = class_moments(labelled.rows(yl == 1), center, k, c, seed, 1, n1 / (n0 + n1))
    m0 = class_moments(labelled.rows(yl == 0), center, k, c, seed, 0, n0 / (n0 + n1))

    d = m.n_cols
    w = np.zeros(d) if w0 is None else np.array(w0, dtype=float)
    bias = 0.0
    trace: list[float] = []
    calls: list[int] = []
    for t in range(T):
        Z1 = standard_normals(seed, n_mc, d, t, 1)
        Z0 = standard_normals(seed, n_mc, d, t, 0)
        obj = _robust_step(w, bias, m1, m0, Z1, Z0, delta, eps, fit_intercept)
        w = w - alpha * obj.grad_w
        bias = bias - alpha * obj.grad_b
        trace.append(obj.value)
        calls.append(obj.calls)
        if not (np.all(np.isfinite(w)) and np.isfinite(bias)):
            raise FloatingPointError(f"weights became non-finite at iteration {t}")
    return LdaModel(
        w=w,
        bias=float(bias),
        center=center,
        feature_names=m.column_names,
        class0=m0,
        class1=m1,
        loss_trace=trace,
        grad_calls=calls,
        settings=dict(k=k, T=T, alpha=alpha, delta=delta, n_mc=n_mc, seed=seed, c=c, eps=eps,
                      fit_intercept=fit_intercept),
    )


# --------------------------------------------------------------------------
# Hard EM for missing labels
# --------------------------------------------------------------------------


@dataclass
class EmParams:
    mu0: np.ndarray
    mu1: np.ndarray
    second0: np.ndarray
    second1: np.ndarray
    cov0: np.ndarray
    cov1: np.ndarray
    pi0: float
    pi1: float
    counts0: np.ndarray
    counts1: np.ndarray


def em_m_step(m: MaskedMatrix, labels) -> EmParams:
    """Per-class pairwise means, second moments, covariances and priors.

    Second moments are exactly :func:`point_second_moment` on each label
    subset.  The covariance used by the E-step is ``second - mu mu'``
    (zero for pairs never observed together), PSD-projected.
    """
    labels = np.asarray(labels)
    if labels.shape != (m.n_rows,):
        raise ValueError("one label per row required")
    out = {}
    for t in (0, 1):
        rows = labels == t
        if not rows.any():
            raise EmptyClassError(f"class {t} is empty")
        sub = m.rows(rows)
        cov, mu, second = pairwise_covariance(sub)
        _, counts = point_second_moment(sub)
        out[t] = (np.nan_to_num(mu), second, psd_project(cov), counts)
    n1 = int(np.sum(labels == 1))
    n0 = int(np.sum(labels == 0))
    return EmParams(
        mu0=out[0][0], mu1=out[1][0],
        second0=out[0][1], second1=out[1][1],
        cov0=out[0][2], cov1=out[1][2],
        pi0=n0 / (n0 + n1), pi1=n1 / (n0 + n1),
        counts0=out[0][3], counts1=out[1][3],
    )


def _log_density(X: np.ndarray, mu: np.ndarray, S: np.ndarray) -> np.ndarray:
    d = mu.size
    if d == 0:
        return np.zeros(X.shape[0])
    jitter = 0.0
    base = max(float(np.trace(S)) / d, 1.0)
    for _ in range(12):
        try:
            factor = cho_factor(S + jitter * np.eye(d), lower=True)
            break
        except np.linalg.LinAlgError:
            jitter = base * 1e-10 if jitter == 0.0 else jitter * 10
    else:
        raise np.linalg.LinAlgError("covariance not positive definite even after jitter")
    diff = X - mu
    quad = np.sum(diff * cho_solve(factor, diff.T).T, axis=1)
    logdet = 2.0 * np.sum(np.log(np.diag(factor[0])))
    return -0.5 * (quad + logdet + d * np.log(2 * np.pi))


def em_e_step(m: MaskedMatrix, params: EmParams) -> np.ndarray:
    """Hard labels: 1 iff ``pi_1 N(x; mu_1, S_1) > pi_0 N(x; mu_0, S_0)``.

    Densities are the Gaussian marginals on each row's available
    coordinates, compared in log space.  Ties go to 0.
    """
    labels = np.zeros(m.n_rows, dtype=int)
    log_pi0 = np.log(params.pi0) if params.pi0 > 0 else -np.inf
    log_pi1 = np.log(params.pi1) if params.pi1 > 0 else -np.inf
    groups: dict[tuple[bool, ...], list[int]] = {}
    for i, row in enumerate(m.mask):
        groups.setdefault(tuple(bool(v) for v in row), []).append(i)
    for key, rows in groups.items():
        idx = np.flatnonzero(key)
        rows = np.asarray(rows)
        X = m.values[np.ix_(rows, idx)]
        ix = np.ix_(idx, idx)
        s1 = log_pi1 + _log_density(X, params.mu1[idx], params.cov1[ix])
        s0 = log_pi0 + _log_density(X, params.mu0[idx], params.cov0[ix])
        labels[rows] = (s1 > s0).astype(int)
    return labels


def _shared_params(p: EmParams) -> EmParams:
    # equal priors and one pooled covariance give a linear rule, so a broad
    # or populous class cannot absorb the other while labels are still noise
    pooled = p.pi0 * p.cov0 + p.pi1 * p.cov1
    return replace(p, cov0=pooled, cov1=pooled, pi0=0.5, pi1=0.5)


def em_rnda_train(
    m: MaskedMatrix,
    y,
    T_em: int = 5,
    warmup: int = 100,
    max_retries: int = 5,
    seed: int = 0,
    **inner,
) -> LdaModel:
    """Train with some labels missing.

    Missing labels start random, are refined by up to ``warmup`` rounds of
    hard Gaussian EM (:func:`em_m_step` / :func:`em_e_step` with equal priors
    and a pooled covariance), and then ``T_em``
    rounds alternate :func:`rnda_train` on the completed labels with
    relabelling the missing rows by the trained classifier.  If a class
    empties out the labels are re-drawn, up to ``max_retries`` times.  With
    no missing labels this is exactly :func:`rnda_train`.
    """
    y, known = _labels(y, m.n_rows)
    if known.all():
        return rnda_train(m, y, seed=seed, **inner)
    missing = ~known
    for attempt in range(max_retries + 1):
        rng = _rng.stream(seed, _rng.TAG_EM, attempt)
        labels = np.where(known, np.nan_to_num(y), 0).astype(int)
        labels[missing] = rng.integers(0, 2, size=int(missing.sum()))
        try:
            for _ in range(warmup):
                params = _shared_params(em_m_step(m, labels))
                new = em_e_step(m, params)
                new[known] = labels[known]
                if np.array_equal(new, labels):
                    break
                labels = new
            model = None
            for _ in range(max(T_em, 1)):
                model = rnda_train(m, labels.astype(float), seed=seed, **inner)
                new = labels.copy()
                new[missing] = classify_batch(model, m.rows(missing))
                if np.array_equal(new, labels):
                    break
                labels = new
                if labels.min() == labels.max():
                    raise EmptyClassError("a class emptied out")
            model.settings["em"] = dict(T_em=T_em, warmup=warmup, attempt=attempt)
            return model
        except EmptyClassError:
            continue
    raise EmptyClassError(f"a class stayed empty after {max_retries} relabelling retries")
