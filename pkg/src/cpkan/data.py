"""Datasets, preprocessing, splits, metrics and synthetic OU data."""

import fnmatch
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd

from .errors import ColumnError, DataError, InvalidInputError, UndefinedMetricError
from .lstsq import fit_coeffs
from .chebyshev import basis

log = logging.getLogger(__name__)


@dataclass
class Dataset:
    X: np.ndarray
    y: np.ndarray
    weights: np.ndarray | None = None
    feature_names: list = field(default_factory=list)
    dates: np.ndarray | None = None
    dropped: int = 0

    def __post_init__(self):
        self.X = np.atleast_2d(np.asarray(self.X, dtype=float))
        self.y = np.asarray(self.y, dtype=float)
        n = self.X.shape[0]
        if self.y.shape[0] != n:
            raise InvalidInputError(f"X has {n} rows but y has {self.y.shape[0]}")
        if self.weights is not None:
            self.weights = np.asarray(self.weights, dtype=float).ravel()
            if self.weights.size != n or np.any(self.weights < 0) or not self.weights.sum() > 0:
                raise InvalidInputError("weights must be non-negative, one per row, with positive sum")
        if self.dates is not None and len(self.dates) != n:
            raise InvalidInputError("dates must have one entry per row")
        if not self.feature_names:
            self.feature_names = [f"x{j}" for j in range(self.X.shape[1])]

    def __len__(self):
        return self.X.shape[0]

    def subset(self, rows):
        return replace(self, X=self.X[rows], y=self.y[rows],
                       weights=None if self.weights is None else self.weights[rows],
                       dates=None if self.dates is None else self.dates[rows], dropped=0)

    def to_csv(self, path, target_name="target"):
        frame = pd.DataFrame(self.X, columns=self.feature_names)
        frame[target_name] = self.y
        if self.weights is not None:
            frame["weight"] = self.weights
        frame.to_csv(path, index=False, float_format="%.17g", lineterminator="\n")


def weighted_r2(y, yhat, w=None):
    """Sample-weighted R^2 without mean-centering: ``1 - sum w r^2 / sum w y^2``."""
    y = np.asarray(y, dtype=float).ravel()
    yhat = np.asarray(yhat, dtype=float).ravel()
    w = np.ones_like(y) if w is None else np.asarray(w, dtype=float).ravel()
    if not (y.shape == yhat.shape == w.shape):
        raise InvalidInputError("y, yhat and w must have equal lengths")
    if np.any(w < 0):
        raise InvalidInputError("weights must be non-negative")
    denom = float(w @ (y * y))
    if denom == 0:
        raise UndefinedMetricError("sum(w * y^2) is zero; weighted R^2 is undefined")
    return 1.0 - float(w @ ((y - yhat) ** 2)) / denom


# -- CSV ------------------------------------------------------------------------------

def _resolve_columns(columns, spec):
    if isinstance(spec, str):
        matched = [c for c in columns if fnmatch.fnmatchcase(c, spec)]
        if not matched:
            raise ColumnError(f"no columns match {spec!r}")
        return matched
    missing = [c for c in spec if c not in columns]
    if missing:
        raise ColumnError(f"missing columns: {missing}")
    return list(spec)


def _to_float(value):
    try:
        return float(value)
    except (TypeError, ValueError):
        return math.nan


def _numeric_column(col):
    # pandas parses clean numeric columns exactly; columns holding stray text
    # come back as objects and are converted cell by cell
    if pd.api.types.is_numeric_dtype(col):
        return col.astype(float)
    return col.map(_to_float).astype(float)


def load_csv(path, feature_cols, target_col, weight_col=None, date_col=None):
    """Read a numeric CSV with a header row.

    ``feature_cols`` is a list of names, a glob such as ``"feature_*"``, or
    None for every column not used as target, weight or date.
    Rows with a missing or non-numeric value in any selected column are
    dropped; the count is stored in ``Dataset.dropped``.
    """
    try:
        frame = pd.read_csv(path, float_precision="round_trip", skipinitialspace=True)
    except FileNotFoundError as exc:
        raise DataError(f"no such file: {path}") from exc
    except (pd.errors.EmptyDataError, pd.errors.ParserError) as exc:
        raise DataError(f"cannot parse {path}: {exc}") from exc
    extra = [c for c in (target_col, weight_col, date_col) if c is not None]
    _resolve_columns(list(frame.columns), extra)
    if feature_cols is None:
        features = [c for c in frame.columns if c not in extra]
    else:
        features = _resolve_columns(list(frame.columns), feature_cols)
    selected = list(dict.fromkeys(features + extra))
    numeric = frame[selected].apply(_numeric_column)
    ok = np.isfinite(numeric.to_numpy(dtype=float)).all(axis=1)
    dropped = int((~ok).sum())
    numeric = numeric[ok]
    if len(numeric) == 0:
        raise DataError(f"{path}: no usable rows")
    if dropped:
        log.info("%s: dropped %d unusable rows", path, dropped)
    return Dataset(numeric[features].to_numpy(dtype=float), numeric[target_col].to_numpy(dtype=float),
                   None if weight_col is None else numeric[weight_col].to_numpy(dtype=float),
                   features, None if date_col is None else numeric[date_col].to_numpy(), dropped)


# -- preprocessing ----------------------------------------------------------------------

@dataclass
class Standardizer:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, X):
        X = np.asarray(X, dtype=float)
        std = X.std(axis=0)
        std[std == 0] = 1.0
        return cls(X.mean(axis=0), std)

    def apply(self, ds):
        return replace(ds, X=(ds.X - self.mean) / self.std)

    def to_dict(self):
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["mean"], dtype=float), np.asarray(d["std"], dtype=float))


def standardize(ds, stats=None):
    """Zero-mean, unit-variance features. Pass training ``stats`` to reuse them."""
    stats = stats or Standardizer.fit(ds.X)
    return stats.apply(ds), stats


def log1p_target(ds):
    if np.any(ds.y <= -1):
        raise InvalidInputError("log1p needs every target > -1")
    return replace(ds, y=np.log1p(ds.y))


def split(ds, train_ratio=0.7, seed=42, by_time=False):
    """Seeded shuffle split, or a chronological split on ``ds.dates``.

    The chronological split never puts one date on both sides: training
    gets every row dated before the date found at the ``train_ratio``
    position.
    """
    if not 0 < train_ratio < 1:
        raise InvalidInputError(f"train_ratio must lie in (0, 1), got {train_ratio}")
    n = len(ds)
    n_train = int(round(train_ratio * n))
    if by_time:
        if ds.dates is None:
            raise InvalidInputError("time split needs a date column")
        order = np.argsort(ds.dates, kind="stable")
        cutoff = ds.dates[order[min(n_train, n - 1)]]
        train_rows = order[ds.dates[order] < cutoff]
        val_rows = order[ds.dates[order] >= cutoff]
    else:
        order = np.random.default_rng(seed).permutation(n)
        train_rows, val_rows = order[:n_train], order[n_train:]
    if train_rows.size == 0 or val_rows.size == 0:
        raise DataError(f"split of {n} rows at ratio {train_ratio} leaves one side empty")
    return ds.subset(train_rows), ds.subset(val_rows)


# -- Ornstein-Uhlenbeck -------------------------------------------------------------------

@dataclass
class OUParams:
    theta: float = 1.0
    mu: float = 0.0
    sigma: float = 0.5
    dt: float = 0.01
    x0: float = 0.0
    n_steps: int = 10_000
    seed: int = 0
    method: str = "euler"

    def __post_init__(self):
        if not (self.theta > 0 and self.sigma > 0 and self.dt > 0):
            raise InvalidInputError("theta, sigma and dt must be positive")
        if self.n_steps < 1:
            raise InvalidInputError("n_steps must be positive")
        if self.method not in ("euler", "exact"):
            raise InvalidInputError(f"unknown OU method {self.method!r}")


def gen_ou(params):
    """Simulate ``dX = theta (mu - X) dt + sigma dW``; ``x0`` is the first value.

    ``method="euler"`` uses Euler-Maruyama steps. ``method="exact"`` samples
    the Gaussian transition density, which has no discretisation bias.
    """
    p = params
    xi = np.random.default_rng(p.seed).standard_normal(p.n_steps - 1)
    if p.method == "euler":
        decay = 1.0 - p.theta * p.dt
        shift = p.theta * p.mu * p.dt
        noise = p.sigma * math.sqrt(p.dt) * xi
    else:
        decay = math.exp(-p.theta * p.dt)
        shift = p.mu * (1.0 - decay)
        noise = p.sigma * math.sqrt((1.0 - decay**2) / (2.0 * p.theta)) * xi
    x = np.empty(p.n_steps)
    x[0] = p.x0
    for t in range(1, p.n_steps):
        x[t] = decay * x[t - 1] + shift + noise[t - 1]
    return x


def make_lagged(series, n_lags):
    """Rows ``[x_{t-n}, ..., x_{t-1}]`` with target ``x_t``."""
    series = np.asarray(series, dtype=float).ravel()
    if n_lags < 1 or series.size <= n_lags:
        raise InvalidInputError(f"need n_lags >= 1 and more than {n_lags} points, got {series.size}")
    X = np.lib.stride_tricks.sliding_window_view(series[:-1], n_lags).copy()
    return Dataset(X, series[n_lags:].copy(), feature_names=[f"lag_{j}" for j in range(n_lags)])


# -- coefficient decay ----------------------------------------------------------------

@dataclass
class DecayReport:
    coeffs: np.ndarray
    abs_coeffs: np.ndarray
    slope: float
    used: np.ndarray


def coeff_decay_check(x, f, max_degree):
    """Least-squares Chebyshev fit of samples ``f(x)`` and its log-log decay slope.

    The slope regresses ``log|c_i|`` on ``log i`` over ``i >= 1`` with
    ``|c_i| > 1e-14``; it is NaN when fewer than two coefficients qualify.
    """
    x = np.asarray(x, dtype=float).ravel()
    f = np.asarray(f, dtype=float).ravel()
    if x.size != f.size or x.size < 4 * max_degree or np.any(np.abs(x) > 1):
        raise InvalidInputError("need at least 4 * max_degree samples on [-1, 1]")
    fit = fit_coeffs(basis(x, max_degree), f)
    mag = np.abs(fit.coeffs)
    idx = np.arange(1, max_degree + 1)
    used = idx[mag[1:] > 1e-14]
    slope = float(np.polyfit(np.log(used), np.log(mag[used]), 1)[0]) if used.size >= 2 else float("nan")
    return DecayReport(fit.coeffs, mag, slope, used)


def ols_baseline(train, val):
    """Closed-form linear regression with intercept; returns validation predictions."""
    A = np.column_stack([np.ones(len(train)), train.X])
    coef, *_ = np.linalg.lstsq(A, train.y, rcond=None)
    return np.column_stack([np.ones(len(val)), val.X]) @ coef
