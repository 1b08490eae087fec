"""Chebyshev polynomials of the first kind.

Everything is built from the three-term recurrence

    T_0 = 1,  T_1 = x,  T_{n+1} = 2 x T_n - T_{n-1}

evaluated in double precision. Derivatives use T_n' = n U_{n-1} where U is
the second-kind family, generated by the same recurrence with U_1 = 2x.
"""

import math

import numpy as np

from .errors import InvalidInputError


def _check_scalar(n, x):
    if int(n) != n or n < 0:
        raise InvalidInputError(f"degree must be a non-negative integer, got {n!r}")
    x = float(x)
    if not math.isfinite(x):
        raise InvalidInputError(f"x must be finite, got {x!r}")
    return int(n), x


def eval_T(n, x):
    """Return T_n(x) via the recurrence. Exact for n in {0, 1}."""
    n, x = _check_scalar(n, x)
    if n == 0:
        return 1.0
    t_prev, t = 1.0, x
    for _ in range(n - 1):
        t_prev, t = t, 2.0 * x * t - t_prev
    return t


def eval_basis_row(d, x):
    """Return ``[T_0(x), ..., T_d(x)]`` in one recurrence pass.

    Entry k is bit-identical to ``eval_T(k, x)`` since both run the same
    floating-point operations in the same order.
    """
    d, x = _check_scalar(d, x)
    row = np.empty(d + 1)
    row[0] = 1.0
    if d >= 1:
        row[1] = x
    for k in range(2, d + 1):
        row[k] = 2.0 * x * row[k - 1] - row[k - 2]
    return row


def eval_dT(n, x):
    """Return dT_n/dx using T_n' = n * U_{n-1}(x)."""
    n, x = _check_scalar(n, x)
    if n == 0:
        return 0.0
    u_prev, u = 0.0, 1.0  # U_{-1} = 0, U_0 = 1
    for _ in range(n - 1):
        u_prev, u = u, 2.0 * x * u - u_prev
    return n * u


def basis(x, d):
    """Vectorised basis: array of shape ``x.shape + (d + 1,)``.

    Same recurrence as :func:`eval_basis_row`, applied elementwise.
    """
    x = np.asarray(x, dtype=float)
    if d < 0:
        raise InvalidInputError(f"degree must be non-negative, got {d}")
    if not np.all(np.isfinite(x)):
        raise InvalidInputError("x contains non-finite values")
    out = np.empty(x.shape + (d + 1,))
    out[..., 0] = 1.0
    if d >= 1:
        out[..., 1] = x
    for k in range(2, d + 1):
        out[..., k] = 2.0 * x * out[..., k - 1] - out[..., k - 2]
    return out


def basis_deriv(x, d):
    """Vectorised derivatives ``[T_0'(x), ..., T_d'(x)]``."""
    x = np.asarray(x, dtype=float)
    out = np.zeros(x.shape + (d + 1,))
    if d == 0:
        return out
    u_prev = np.zeros_like(x)
    u = np.ones_like(x)
    out[..., 1] = 1.0
    for k in range(2, d + 1):
        u_prev, u = u, 2.0 * x * u - u_prev
        out[..., k] = k * u
    return out
