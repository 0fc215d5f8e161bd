"""Pairwise moment estimates and bootstrap confidence boxes.

The point estimate of ``E[x_i x_j]`` averages ``x_i * x_j`` over the rows
where both entries are observed.  Its radius is the standard deviation of
the same average over ``k`` bootstrap resamples of those rows.  A
:class:`MomentEnvelope` bundles the centers, radii and a robustness
multiplier ``c``; the boxes are ``center +/- c * radius``.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Any

import numpy as np

from . import _rng
from .data_model import MaskedMatrix, as_masked_vector

DEFAULT_K = 30
DEFAULT_C = 2.0

# resample index blocks are drawn in chunks of at most this many cells
_CHUNK = 4_000_000


class UnavailablePairError(ValueError):
    """Raised when a statistic needs rows that are never jointly observed."""


def _mirror_upper(a: np.ndarray) -> np.ndarray:
    return np.triu(a) + np.triu(a, 1).T


def point_second_moment(m: MaskedMatrix) -> tuple[np.ndarray, np.ndarray]:
    """Pairwise-available second moments.

    Returns ``(C0, counts)`` where ``counts[i, j]`` is the number of rows with
    both columns observed.  Entries with ``counts == 0`` are NaN.
    """
    X = m.filled(0.0)
    M = m.mask.astype(float)
    counts = _mirror_upper(M.T @ M).astype(np.int64)
    S = _mirror_upper(X.T @ X)
    with np.errstate(invalid="ignore", divide="ignore"):
        C0 = np.where(counts > 0, S / np.maximum(counts, 1), np.nan)
    return C0, counts


def point_cross_moment(m: MaskedMatrix, y) -> tuple[np.ndarray, np.ndarray]:
    """Pairwise-available ``E[x_i y]``; NaN where no row has both."""
    yv, ym = as_masked_vector(y)
    if yv.shape[0] != m.n_rows:
        raise ValueError("target length does not match number of rows")
    X = m.filled(0.0)
    joint = m.mask & ym[:, None]
    counts = joint.sum(axis=0).astype(np.int64)
    s = (X * np.where(ym, yv, 0.0)[:, None]).sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        b0 = np.where(counts > 0, s / np.maximum(counts, 1), np.nan)
    return b0, counts


def point_mean(m: MaskedMatrix) -> tuple[np.ndarray, np.ndarray]:
    """Per-column mean over available entries; NaN for empty columns."""
    counts = m.mask.sum(axis=0).astype(np.int64)
    s = m.filled(0.0).sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        mu = np.where(counts > 0, s / np.maximum(counts, 1), np.nan)
    return mu, counts


def bootstrap_std(samples: np.ndarray, k: int, rng: np.random.Generator) -> float:
    """Standard deviation (ddof=1) of the mean of ``samples`` over ``k`` resamples.

    Each resample has the same size as ``samples`` and is drawn with
    replacement.
    """
    n = samples.shape[0]
    if n == 0:
        raise UnavailablePairError("no samples to resample")
    if k < 2:
        raise ValueError("need at least two bootstrap resamples")
    means = np.empty(k)
    per_chunk = max(1, _CHUNK // n)
    for start in range(0, k, per_chunk):
        stop = min(k, start + per_chunk)
        idx = rng.integers(0, n, size=(stop - start, n))
        means[start:stop] = samples[idx].mean(axis=1)
    return float(means.std(ddof=1))


def _joint_products(m: MaskedMatrix, i: int, j: int) -> np.ndarray:
    rows = m.mask[:, i] & m.mask[:, j]
    return m.values[rows, i] * m.values[rows, j]


def bootstrap_radius(m: MaskedMatrix, i: int, j: int, k: int = DEFAULT_K, seed: int = 0) -> float:
    """Bootstrap radius of the ``(i, j)`` second moment.

    Resamples ``m_ij`` rows with replacement from the jointly observed rows,
    ``k`` times, and returns the standard deviation of the resampled product
    means.  The stream depends only on ``(seed, min(i,j), max(i,j))``.
    """
    i, j = min(i, j), max(i, j)
    prods = _joint_products(m, i, j)
    if prods.size == 0:
        raise UnavailablePairError(
            f"columns {m.column_names[i]!r} and {m.column_names[j]!r} are never observed together"
        )
    return bootstrap_std(prods, k, _rng.stream(seed, _rng.TAG_SECOND_MOMENT, i, j))


def cross_radius(m: MaskedMatrix, y, i: int, k: int = DEFAULT_K, seed: int = 0) -> float:
    """Bootstrap radius of ``E[x_i y]``."""
    yv, ym = as_masked_vector(y)
    rows = m.mask[:, i] & ym
    prods = m.values[rows, i] * yv[rows]
    if prods.size == 0:
        raise UnavailablePairError(f"column {m.column_names[i]!r} never observed with the target")
    return bootstrap_std(prods, k, _rng.stream(seed, _rng.TAG_CROSS_MOMENT, i))


def mean_radius(m: MaskedMatrix, i: int, k: int = DEFAULT_K, seed: int = 0) -> float:
    """Bootstrap radius of the mean of column ``i``."""
    x = m.values[m.mask[:, i], i]
    if x.size == 0:
        raise UnavailablePairError(f"column {m.column_names[i]!r} has no available entries")
    return bootstrap_std(x, k, _rng.stream(seed, _rng.TAG_MEAN, i))


@dataclass(frozen=True, eq=False)
class MomentEnvelope:
    """Centers, radii and robustness multiplier for first and second moments.

    ``C_flagged`` / ``b_flagged`` / ``mu_flagged`` mark statistics that no row
    could estimate.  Their box is ``[-B, B]`` where ``B`` is the largest
    absolute center among the estimable entries of the same statistic,
    independently of ``c``.
    """

    C0: np.ndarray
    Delta: np.ndarray
    mu0: np.ndarray
    mu_delta: np.ndarray
    c: float = DEFAULT_C
    b0: np.ndarray | None = None
    delta: np.ndarray | None = None
    counts: np.ndarray | None = None
    b_counts: np.ndarray | None = None
    C_flagged: np.ndarray | None = None
    b_flagged: np.ndarray | None = None
    mu_flagged: np.ndarray | None = None
    y_mean: float = 0.0
    y_second_moment: float = 0.0
    k: int = DEFAULT_K
    seed: int = 0
    column_names: tuple[str, ...] = ()
    target_name: str = "y"

    def __post_init__(self):
        if self.c < 0:
            raise ValueError(f"robustness multiplier c must be >= 0, got {self.c}")
        d = np.asarray(self.C0).shape[0]

        def arr(x, shape, dtype=float, fill=0):
            a = np.full(shape, fill, dtype=dtype) if x is None else np.array(x, dtype=dtype)
            if a.shape != shape:
                raise ValueError(f"expected shape {shape}, got {a.shape}")
            a.flags.writeable = False
            return a

        object.__setattr__(self, "C0", arr(self.C0, (d, d)))
        object.__setattr__(self, "Delta", arr(self.Delta, (d, d)))
        object.__setattr__(self, "mu0", arr(self.mu0, (d,)))
        object.__setattr__(self, "mu_delta", arr(self.mu_delta, (d,)))
        object.__setattr__(self, "C_flagged", arr(self.C_flagged, (d, d), bool, False))
        object.__setattr__(self, "mu_flagged", arr(self.mu_flagged, (d,), bool, False))
        if self.b0 is not None:
            object.__setattr__(self, "b0", arr(self.b0, (d,)))
            object.__setattr__(self, "delta", arr(self.delta, (d,)))
            object.__setattr__(self, "b_flagged", arr(self.b_flagged, (d,), bool, False))
            if self.b_counts is not None:
                object.__setattr__(self, "b_counts", arr(self.b_counts, (d,), np.int64))
        if self.counts is not None:
            object.__setattr__(self, "counts", arr(self.counts, (d, d), np.int64))
        if np.any(self.Delta < 0) or np.any(self.mu_delta < 0) or (
            self.delta is not None and np.any(self.delta < 0)
        ):
            raise ValueError("radii must be non-negative")
        if not self.column_names:
            object.__setattr__(self, "column_names", tuple(f"x{j}" for j in range(d)))

    @property
    def dim(self) -> int:
        return self.C0.shape[0]

    @property
    def has_target(self) -> bool:
        return self.b0 is not None

    @staticmethod
    def _bounds(center, radius, c, flagged):
        lo = center - c * radius
        hi = center + c * radius
        if flagged.any():
            ok = ~flagged
            B = float(np.max(np.abs(center[ok]))) if ok.any() else 0.0
            lo = np.where(flagged, -B, lo)
            hi = np.where(flagged, B, hi)
        return lo, hi

    def C_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return self._bounds(self.C0, self.Delta, self.c, self.C_flagged)

    def b_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        if self.b0 is None:
            raise ValueError("envelope was built without a target")
        return self._bounds(self.b0, self.delta, self.c, self.b_flagged)

    def mu_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return self._bounds(self.mu0, self.mu_delta, self.c, self.mu_flagged)

    def with_c(self, c: float) -> MomentEnvelope:
        return replace(self, c=float(c))

    def to_dict(self) -> dict[str, Any]:
        def lst(a):
            return None if a is None else np.asarray(a).tolist()

        flagged_pairs = [
            [int(i), int(j)] for i, j in zip(*np.nonzero(np.triu(self.C_flagged)))
        ]
        return {
            "dimension": self.dim,
            "column_names": list(self.column_names),
            "target_name": self.target_name,
            "c": self.c,
            "k": self.k,
            "seed": self.seed,
            "C0": lst(self.C0),
            "Delta": lst(self.Delta),
            "b0": lst(self.b0),
            "delta": lst(self.delta),
            "mu0": lst(self.mu0),
            "mu_delta": lst(self.mu_delta),
            "counts": lst(self.counts),
            "b_counts": lst(self.b_counts),
            "flagged_pairs": flagged_pairs,
            "b_flagged": lst(self.b_flagged),
            "mu_flagged": lst(self.mu_flagged),
            "y_mean": self.y_mean,
            "y_second_moment": self.y_second_moment,
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_dict(cls, doc: dict[str, Any]) -> MomentEnvelope:
        d = int(doc["dimension"])
        flagged = np.zeros((d, d), dtype=bool)
        for i, j in doc.get("flagged_pairs", []):
            flagged[i, j] = flagged[j, i] = True
        return cls(
            C0=doc["C0"],
            Delta=doc["Delta"],
            mu0=doc.get("mu0") or np.zeros(d),
            mu_delta=doc.get("mu_delta") or np.zeros(d),
            c=float(doc.get("c", DEFAULT_C)),
            b0=doc.get("b0"),
            delta=doc.get("delta"),
            counts=doc.get("counts"),
            b_counts=doc.get("b_counts"),
            C_flagged=flagged,
            b_flagged=doc.get("b_flagged"),
            mu_flagged=doc.get("mu_flagged"),
            y_mean=float(doc.get("y_mean", 0.0)),
            y_second_moment=float(doc.get("y_second_moment", 0.0)),
            k=int(doc.get("k", DEFAULT_K)),
            seed=int(doc.get("seed", 0)),
            column_names=tuple(doc.get("column_names") or ()),
            target_name=doc.get("target_name", "y"),
        )

    @classmethod
    def from_json(cls, text: str) -> MomentEnvelope:
        return cls.from_dict(json.loads(text))


def _map(fn, items, threads):
    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, items))
    return [fn(it) for it in items]


def build_envelope(
    m: MaskedMatrix,
    y=None,
    k: int = DEFAULT_K,
    c: float = DEFAULT_C,
    seed: int = 0,
    threads: int | None = None,
    target_name: str = "y",
) -> MomentEnvelope:
    """Estimate all centers and bootstrap radii for features ``m`` and target ``y``.

    Pairs that are never jointly observed are flagged instead of raising; see
    :class:`MomentEnvelope`.  The result depends only on the inputs and
    ``seed``, not on ``threads``.
    """
    if c < 0:
        raise ValueError("c must be non-negative")
    if k < 2:
        raise ValueError("k must be at least 2")
    d = m.n_cols
    C0, counts = point_second_moment(m)
    mu0, mu_counts = point_mean(m)

    pairs = [(i, j) for i in range(d) for j in range(i, d) if counts[i, j] > 0]
    radii = _map(lambda ij: bootstrap_radius(m, ij[0], ij[1], k, seed), pairs, threads)
    Delta = np.zeros((d, d))
    for (i, j), r in zip(pairs, radii):
        Delta[i, j] = Delta[j, i] = r
    C_flagged = counts == 0
    C0 = np.where(C_flagged, 0.0, C0)

    cols = [i for i in range(d) if mu_counts[i] > 0]
    mu_delta = np.zeros(d)
    for i, r in zip(cols, _map(lambda i: mean_radius(m, i, k, seed), cols, threads)):
        mu_delta[i] = r
    mu_flagged = mu_counts == 0
    mu0 = np.where(mu_flagged, 0.0, mu0)

    extra: dict[str, Any] = {}
    if y is not None:
        yv, ym = as_masked_vector(y)
        b0, b_counts = point_cross_moment(m, (yv, ym))
        feats = [i for i in range(d) if b_counts[i] > 0]
        delta = np.zeros(d)
        rad = _map(lambda i: cross_radius(m, (yv, ym), i, k, seed), feats, threads)
        for i, r in zip(feats, rad):
            delta[i] = r
        b_flagged = b_counts == 0
        y_obs = yv[ym]
        extra = dict(
            b0=np.where(b_flagged, 0.0, b0),
            delta=delta,
            b_counts=b_counts,
            b_flagged=b_flagged,
            y_mean=float(y_obs.mean()) if y_obs.size else 0.0,
            y_second_moment=float(np.mean(y_obs * y_obs)) if y_obs.size else 0.0,
        )

    return MomentEnvelope(
        C0=C0,
        Delta=Delta,
        mu0=mu0,
        mu_delta=mu_delta,
        c=float(c),
        counts=counts,
        C_flagged=C_flagged,
        mu_flagged=mu_flagged,
        k=k,
        seed=seed,
        column_names=m.column_names,
        target_name=target_name,
        **extra,
    )
