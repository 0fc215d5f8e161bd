"""Masked datasets, CSV I/O, missingness generators and error metrics."""

from __future__ import annotations

import csv
import math
from collections.abc import Sequence
from dataclasses import dataclass
from os import PathLike
from typing import Literal

import numpy as np
from scipy.stats import norm

from . import _rng


class CSVFormatError(ValueError):
    """Raised for malformed CSV input (ragged rows, unparsable cells)."""


class DegenerateColumnError(ValueError):
    """Raised when a column cannot be standardized (zero spread)."""


@dataclass(frozen=True, eq=False)
class MaskedMatrix:
    """An ``n x d`` real matrix together with an availability mask.

    ``mask[i, j]`` is True when the cell is observed.  Missing cells in
    ``values`` hold NaN, but the mask is the authority: nothing reads a value
    whose mask bit is False.  Both arrays are stored read-only.
    """

    values: np.ndarray
    mask: np.ndarray
    column_names: tuple[str, ...] = ()

    def __post_init__(self):
        values = np.array(self.values, dtype=float, copy=True)
        mask = np.array(self.mask, dtype=bool, copy=True)
        if values.ndim != 2:
            raise ValueError(f"values must be 2-D, got shape {values.shape}")
        if mask.shape != values.shape:
            raise ValueError(
                f"mask shape {mask.shape} does not match values shape {values.shape}"
            )
        values[~mask] = np.nan
        if not np.all(np.isfinite(values[mask])):
            raise ValueError("available cells must be finite")
        names = tuple(self.column_names) or tuple(f"x{j}" for j in range(values.shape[1]))
        if len(names) != values.shape[1]:
            raise ValueError(f"{len(names)} column names for {values.shape[1]} columns")
        values.flags.writeable = False
        mask.flags.writeable = False
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "mask", mask)
        object.__setattr__(self, "column_names", names)

    @classmethod
    def from_array(cls, data, column_names: Sequence[str] = ()) -> MaskedMatrix:
        """Build from an array where NaN marks a missing cell."""
        data = np.asarray(data, dtype=float)
        if data.ndim == 1:
            data = data[:, None]
        return cls(data, ~np.isnan(data), tuple(column_names))

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    @property
    def n_cols(self) -> int:
        return self.values.shape[1]

    def filled(self, fill: float = 0.0) -> np.ndarray:
        """Writable copy of the values with missing cells set to ``fill``."""
        out = np.where(self.mask, self.values, fill)
        return out

    def rows(self, index) -> MaskedMatrix:
        return MaskedMatrix(self.values[index], self.mask[index], self.column_names)

    def columns(self, index) -> MaskedMatrix:
        index = np.atleast_1d(np.arange(self.n_cols)[index])
        names = tuple(self.column_names[j] for j in index)
        return MaskedMatrix(self.values[:, index], self.mask[:, index], names)

    def with_mask(self, mask: np.ndarray) -> MaskedMatrix:
        """Same values under a new mask.  Only used to hide cells."""
        return MaskedMatrix(self.values, mask, self.column_names)

    def missing_fraction(self) -> float:
        return float(1.0 - self.mask.mean()) if self.mask.size else 0.0

    def __eq__(self, other):
        if not isinstance(other, MaskedMatrix):
            return NotImplemented
        return (
            self.column_names == other.column_names
            and np.array_equal(self.mask, other.mask)
            and np.array_equal(self.values[self.mask], other.values[other.mask])
        )

    __hash__ = None


def as_masked_vector(y) -> tuple[np.ndarray, np.ndarray]:
    """Normalize a target to ``(values, mask)``.

    Accepts a one-column :class:`MaskedMatrix`, a ``(values, mask)`` pair or
    a 1-D array with NaN for missing entries.
    """
    if isinstance(y, MaskedMatrix):
        if y.n_cols != 1:
            raise ValueError("target MaskedMatrix must have exactly one column")
        return y.values[:, 0], y.mask[:, 0]
    if isinstance(y, tuple) and len(y) == 2:
        values = np.asarray(y[0], dtype=float)
        mask = np.asarray(y[1], dtype=bool)
        if values.shape != mask.shape or values.ndim != 1:
            raise ValueError("target values and mask must be matching 1-D arrays")
        return np.where(mask, values, np.nan), mask
    values = np.asarray(y, dtype=float)
    if values.ndim != 1:
        raise ValueError("target must be one-dimensional")
    return values, ~np.isnan(values)


@dataclass(frozen=True)
class MissingnessSpec:
    """How to hide cells: ``kind='mcar'`` uses ``p``, ``kind='mnar'`` uses ``a`` and ``b``."""

    kind: Literal["mcar", "mnar"]
    p: float = 0.0
    a: float = 0.0
    b: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("mcar", "mnar"):
            raise ValueError(f"unknown missingness kind {self.kind!r}")
        if self.kind == "mcar" and not 0.0 <= self.p <= 1.0:
            raise ValueError(f"MCAR probability must lie in [0, 1], got {self.p}")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")

    @classmethod
    def mcar(cls, p: float, seed: int = 0) -> MissingnessSpec:
        return cls("mcar", p=p, seed=seed)

    @classmethod
    def mnar(cls, a: float, b: float, seed: int = 0) -> MissingnessSpec:
        return cls("mnar", a=a, b=b, seed=seed)


# --------------------------------------------------------------------------
# CSV
# --------------------------------------------------------------------------


def load_csv(path: str | PathLike, missing_token: str = "NA") -> MaskedMatrix:
    """Read a comma-separated file with a header row.

    A cell is missing when it is empty (after stripping whitespace) or equals
    ``missing_token``.  Every other cell must parse as a finite float.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CSVFormatError(f"{path}: empty file, expected a header row") from None
        names = tuple(h.strip() for h in header)
        d = len(names)
        values, mask = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != d:
                raise CSVFormatError(
                    f"{path}: line {lineno} has {len(row)} fields, header has {d}"
                )
            vrow, mrow = [], []
            for j, cell in enumerate(row):
                cell = cell.strip()
                if cell == "" or cell == missing_token:
                    vrow.append(math.nan)
                    mrow.append(False)
                    continue
                try:
                    v = float(cell)
                except ValueError:
                    raise CSVFormatError(
                        f"{path}: line {lineno}, column {names[j]!r}: cannot parse {cell!r}"
                    ) from None
                if not math.isfinite(v):
                    raise CSVFormatError(
                        f"{path}: line {lineno}, column {names[j]!r}: non-finite value {cell!r}"
                    )
                vrow.append(v)
                mrow.append(True)
            values.append(vrow)
            mask.append(mrow)
    if not values:
        return MaskedMatrix(np.empty((0, d)), np.empty((0, d), dtype=bool), names)
    return MaskedMatrix(np.array(values), np.array(mask), names)


def write_csv(path: str | PathLike, m: MaskedMatrix) -> None:
    """Write ``m`` with missing cells as empty fields.

    Floats are written with ``repr`` so a reload is bit-exact.
    """
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(m.column_names)
        for vals, avail in zip(m.values, m.mask):
            writer.writerow([repr(float(v)) if a else "" for v, a in zip(vals, avail)])


# --------------------------------------------------------------------------
# Missingness generators
# --------------------------------------------------------------------------


def apply_mcar(m: MaskedMatrix, spec: MissingnessSpec) -> MaskedMatrix:
    """Hide each available cell independently with probability ``spec.p``."""
    if spec.kind != "mcar":
        raise ValueError("apply_mcar needs an MCAR spec")
    rng = _rng.stream(spec.seed, _rng.TAG_MCAR)
    hide = rng.random(m.shape) < spec.p
    return m.with_mask(m.mask & ~hide)


def mnar_probabilities(col: np.ndarray, avail: np.ndarray, a: float, b: float) -> np.ndarray:
    """Masking probability ``Phi(a*|z| + b)`` for each entry of a column.

    ``z`` standardizes with the mean and (population) standard deviation of
    the available entries.  Unavailable entries get probability 0.
    """
    x = col[avail]
    if x.size < 2:
        raise DegenerateColumnError("MNAR needs at least two available entries")
    mu = x.mean()
    var = np.mean(x * x) - mu * mu
    if not var > 0.0:
        raise DegenerateColumnError("MNAR standardization undefined: column has zero variance")
    z = np.zeros_like(col, dtype=float)
    z[avail] = (x - mu) / math.sqrt(var)
    probs = norm.cdf(a * np.abs(z) + b)
    probs[~avail] = 0.0
    return probs


def apply_mnar_column(col, a: float, b: float, seed: int, mask=None, *, key: int = 0) -> np.ndarray:
    """Return the new availability mask of one column under the MNAR rule.

    ``mask`` is the column's current availability (all True if omitted);
    cells already missing stay missing.
    """
    col = np.asarray(col, dtype=float)
    avail = np.ones(col.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    probs = mnar_probabilities(col, avail, a, b)
    rng = _rng.stream(seed, _rng.TAG_MNAR, key)
    hide = rng.random(col.shape) < probs
    return avail & ~hide


def apply_mnar(m: MaskedMatrix, spec: MissingnessSpec, columns: Sequence[int] | None = None) -> MaskedMatrix:
    """Apply the MNAR rule to each listed column (all columns by default)."""
    if spec.kind != "mnar":
        raise ValueError("apply_mnar needs an MNAR spec")
    columns = range(m.n_cols) if columns is None else columns
    mask = m.mask.copy()
    for j in columns:
        mask[:, j] = apply_mnar_column(m.values[:, j], spec.a, spec.b, spec.seed, m.mask[:, j], key=j)
    return m.with_mask(mask)


def apply_missingness(m: MaskedMatrix, spec: MissingnessSpec) -> MaskedMatrix:
    return apply_mcar(m, spec) if spec.kind == "mcar" else apply_mnar(m, spec)


# --------------------------------------------------------------------------
# Metrics and grouping
# --------------------------------------------------------------------------


def nrmse(y_true, y_pred) -> float:
    """RMSE of ``y_pred`` divided by the RMSE of the constant mean predictor."""
    y_true = np.asarray(y_true, dtype=float)
    y_pred = np.asarray(y_pred, dtype=float)
    if y_true.shape != y_pred.shape or y_true.ndim != 1:
        raise ValueError("y_true and y_pred must be 1-D arrays of equal length")
    if y_true.size < 2:
        raise ValueError("nrmse needs at least two points")
    denom = np.sqrt(np.mean((y_true - y_true.mean()) ** 2))
    if denom == 0.0:
        raise ZeroDivisionError("nrmse undefined: y_true is constant")
    return float(np.sqrt(np.mean((y_true - y_pred) ** 2)) / denom)


def pattern_groups(m: MaskedMatrix) -> dict[tuple[bool, ...], np.ndarray]:
    """Group row indices by their row of mask bits, in order of first appearance."""
    groups: dict[tuple[bool, ...], list[int]] = {}
    for i, row in enumerate(m.mask):
        groups.setdefault(tuple(bool(v) for v in row), []).append(i)
    return {k: np.asarray(v, dtype=int) for k, v in groups.items()}


def mean_impute(m: MaskedMatrix) -> np.ndarray:
    """Fill each missing cell with its column's available mean (baseline imputer)."""
    out = m.filled(0.0)
    counts = m.mask.sum(axis=0)
    if np.any(counts == 0):
        empty = [m.column_names[j] for j in np.flatnonzero(counts == 0)]
        raise ValueError(f"columns with no available entries: {empty}")
    means = out.sum(axis=0) / counts
    return np.where(m.mask, out, means)
