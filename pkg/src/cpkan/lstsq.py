"""Small dense least-squares solves for Chebyshev coefficient fits."""

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .errors import InvalidInputError, NumericalFailure

#: Ridge used when the unregularised normal equations are singular.
FALLBACK_RIDGE = 1e-8

# Reciprocal condition number below which a Cholesky factor is treated as singular.
_RCOND_MIN = 1e-13


@dataclass
class FitResult:
    coeffs: np.ndarray
    mse: float
    ridge_used: float


def _solve_spd(gram, rhs):
    """Cholesky solve; raises LinAlgError when the system is (near) singular."""
    factor, lower = linalg.cho_factor(gram, lower=True, check_finite=False)
    diag = np.abs(np.diag(factor))
    if diag.min() <= 0 or (diag.min() / diag.max()) ** 2 < _RCOND_MIN:
        raise linalg.LinAlgError("ill-conditioned normal equations")
    return linalg.cho_solve((factor, lower), rhs, check_finite=False)


def fit_coeffs(phi, y, ridge=0.0):
    """Least-squares coefficients for ``y ~ phi @ c``.

    Solves ``(phi^T phi + ridge I) c = phi^T y`` by Cholesky. If ``ridge`` is
    zero and the system is singular (a constant projection makes every
    Chebyshev column collinear, for instance) the solve is retried once
    with :data:`FALLBACK_RIDGE`.

    The reported ``mse`` is ``||y - phi c||^2 / B`` and never includes the
    ridge term.
    """
    phi = np.asarray(phi, dtype=float)
    y = np.asarray(y, dtype=float)
    if phi.ndim != 2 or y.ndim != 1 or phi.shape[0] != y.shape[0] or y.shape[0] < 1:
        raise InvalidInputError(
            f"design matrix {phi.shape} and target {y.shape} are not aligned"
        )
    if ridge < 0:
        raise InvalidInputError(f"ridge must be non-negative, got {ridge}")
    if not (np.all(np.isfinite(phi)) and np.all(np.isfinite(y))):
        raise InvalidInputError("design matrix or target contains non-finite values")

    gram = phi.T @ phi
    rhs = phi.T @ y
    eye = np.eye(gram.shape[0])
    attempts = [ridge] if ridge > 0 else [0.0, FALLBACK_RIDGE]
    for lam in attempts:
        try:
            coeffs = _solve_spd(gram + lam * eye, rhs)
        except linalg.LinAlgError:
            continue
        if np.all(np.isfinite(coeffs)):
            resid = y - phi @ coeffs
            return FitResult(coeffs, float(resid @ resid) / y.shape[0], lam)
    raise NumericalFailure(f"normal equations singular even with ridge {attempts[-1]}")


def mse(y, yhat, weights=None):
    """Mean squared error, or ``sum w r^2 / sum w`` when weights are given."""
    y = np.asarray(y, dtype=float).ravel()
    yhat = np.asarray(yhat, dtype=float).ravel()
    if y.shape != yhat.shape:
        raise InvalidInputError(f"length mismatch: {y.shape} vs {yhat.shape}")
    if y.size == 0:
        raise InvalidInputError("empty input")
    sq = (y - yhat) ** 2
    if weights is None:
        return float(np.mean(sq))
    w = np.asarray(weights, dtype=float).ravel()
    if w.shape != y.shape:
        raise InvalidInputError(f"weights length {w.size} != {y.size}")
    if np.any(w < 0):
        raise InvalidInputError("weights must be non-negative")
    total = w.sum()
    if not total > 0:
        raise InvalidInputError("weights sum to zero")
    return float(w @ sq / total)
