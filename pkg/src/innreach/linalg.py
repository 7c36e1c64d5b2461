"""Small dense matrix primitives: sign splits, weighted norms and Perron data.

Weight convention: ``weighted_inf_norm(x, w) = max_i |x_i| / w_i`` and
``weighted_matrix_measure(A, w)`` is the matrix measure induced by that norm,
``max_i A_ii + sum_{j != i} (w_j / w_i) |A_ij|``.  Where the literature writes
a measure with respect to ``[eta]^{-1}``, pass ``1 / eta``.
"""

import numpy as np

from .exceptions import ConvergenceError, DimensionError


def _as_matrix(A, name="A"):
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2:
        raise DimensionError(f"{name} must be 2-dimensional, got shape {A.shape}")
    return A


def _as_square(A, name="A"):
    A = _as_matrix(A, name)
    if A.shape[0] != A.shape[1]:
        raise DimensionError(f"{name} must be square, got shape {A.shape}")
    return A


def positive_part(B):
    """Elementwise ``max(B, 0)``."""
    return np.maximum(np.asarray(B, dtype=np.float64), 0.0)


def negative_part(B):
    """Elementwise ``min(B, 0)``."""
    return np.minimum(np.asarray(B, dtype=np.float64), 0.0)


def metzler_part(A):
    """Keep the diagonal and the nonnegative off-diagonal entries of ``A``."""
    A = _as_square(A)
    keep = (A >= 0) | np.eye(A.shape[0], dtype=bool)
    return np.where(keep, A, 0.0)


def nonmetzler_part(A):
    """``A - metzler_part(A)``: the negative off-diagonal entries."""
    A = _as_square(A)
    drop = (A < 0) & ~np.eye(A.shape[0], dtype=bool)
    return np.where(drop, A, 0.0)


def metzler_majorant(A):
    """Diagonal of ``A`` with ``|A_ij|`` off the diagonal."""
    A = _as_square(A)
    M = np.abs(A)
    np.fill_diagonal(M, np.diag(A))
    return M


def weighted_inf_norm(x, eta):
    """``max_i |x_i| / eta_i``.

    ``x`` may be a batch of shape ``(m, n)``; the maximum is then taken over
    every entry.
    """
    x = np.asarray(x, dtype=np.float64)
    eta = np.asarray(eta, dtype=np.float64)
    if x.shape[-1] != eta.shape[0]:
        raise DimensionError(f"dimension mismatch: x has {x.shape[-1]}, eta has {eta.shape[0]}")
    if x.size == 0:
        return 0.0
    return float(np.max(np.abs(x) / eta))


def weighted_row_measures(A, eta):
    """Per-row terms ``A_ii + sum_{j != i} (eta_j / eta_i) |A_ij|``."""
    A = _as_square(A)
    eta = np.asarray(eta, dtype=np.float64)
    if eta.shape != (A.shape[0],):
        raise DimensionError(f"eta has shape {eta.shape}, expected ({A.shape[0]},)")
    off = np.abs(A) * eta[None, :] / eta[:, None]
    np.fill_diagonal(off, 0.0)
    return np.diag(A) + off.sum(axis=1)


def weighted_matrix_measure(A, eta):
    """Weighted l-infinity matrix measure (logarithmic norm) of ``A``."""
    rows = weighted_row_measures(A, eta)
    return float(rows.max()) if rows.size else 0.0


def weighted_operator_norm(A, eta):
    """Operator norm induced by ``weighted_inf_norm(., eta)`` on both sides."""
    A = _as_square(A)
    eta = np.asarray(eta, dtype=np.float64)
    S = np.abs(A) * eta[None, :] / eta[:, None]
    return float(S.sum(axis=1).max()) if S.size else 0.0


def _power_iterate(S, tol, max_iter):
    v = np.ones(S.shape[0])
    lam = float(S.sum(axis=1).max())
    for _ in range(max_iter):
        w = S @ v
        lam_new = float(w.max())
        w = w / lam_new
        dv = float(np.max(np.abs(w - v)))
        dlam = abs(lam_new - lam) / max(lam_new, 1.0)
        v, lam = w, lam_new
        if dv < tol and dlam < tol:
            return v, lam
    return None


def perron_vector_abs(A, tol=1e-12, max_iter=100000):
    """Perron root and right Perron vector of ``|A|`` by shifted power iteration.

    Returns ``(eta, lam)`` with ``|A| eta ~= lam eta`` and ``max(eta) == 1``.
    The zero matrix returns ``(ones, 0.0)``.

    The iteration first runs on ``|A| + eps I`` with a tiny regularizing
    ``eps``, which handles reducible and nilpotent matrices.  Periodic
    matrices (e.g. antidiagonal ones) make that iteration cycle; it is then
    restarted with the shift raised by the largest row sum of ``|A|``, which
    bounds the spectral radius and so leaves the shifted Perron root as the
    unique eigenvalue of largest modulus.
    """
    A = _as_square(A)
    if tol <= 0:
        raise ValueError("tol must be positive")
    n = A.shape[0]
    P = np.abs(A)
    amax = float(P.max()) if P.size else 0.0
    if n == 0 or amax == 0.0:
        return np.ones(n), 0.0
    eps = 1e-12 * (1.0 + amax)
    first_budget = min(max_iter, 1000)
    attempts = [(eps, first_budget),
                (eps + float(P.sum(axis=1).max()), max_iter - first_budget)]
    for shift, budget in attempts:
        if budget <= 0:
            continue
        found = _power_iterate(P + shift * np.eye(n), tol, budget)
        if found is not None:
            v, lam = found
            return v, max(lam - shift, 0.0)
    raise ConvergenceError(f"power iteration did not converge in {max_iter} iterations")


def spectral_radius_abs(A, tol=1e-12, max_iter=100000):
    """Spectral radius of the entrywise absolute value ``|A|``."""
    _, lam = perron_vector_abs(A, tol=tol, max_iter=max_iter)
    return lam
