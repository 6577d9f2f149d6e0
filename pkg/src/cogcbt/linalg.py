"""Dense double-precision kernels shared by the rest of the package."""

from __future__ import annotations

from typing import Sequence

import numpy as np
import scipy.linalg

from .errors import ConvergenceError, DimensionError, RankError


def as_matrix(m, name: str = "matrix") -> np.ndarray:
    a = np.asarray(m, dtype=np.float64)
    if a.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {a.shape}")
    return a


def frobenius_norm(m) -> float:
    a = np.asarray(m, dtype=np.float64)
    if a.size == 0:
        raise DimensionError("Frobenius norm of an empty matrix")
    return float(np.sqrt(np.sum(a * a)))


def spectral_radius(m, tol: float = 1e-13, max_iter: int = 100_000, seed: int = 0) -> float:
    """Largest absolute eigenvalue by power iteration.

    The estimate at each step is ``||A x||`` for the unit iterate ``x``; this
    tracks ``|lambda_max|`` regardless of the eigenvalue's sign, so
    ``diag(0.5, -0.9)`` converges to 0.9 without oscillating.

    Raises:
        DimensionError: if ``m`` is not square.
        ConvergenceError: if the relative change between two successive
            estimates stays above ``tol`` for ``max_iter`` steps. The last
            estimate is attached to the exception.
    """
    a = as_matrix(m)
    n, k = a.shape
    if n != k or n == 0:
        raise DimensionError(f"spectral radius needs a square matrix, got {a.shape}")
    rng = np.random.default_rng(seed)
    # strictly positive start vector: overlaps the Perron vector of nonnegative matrices
    x = rng.uniform(0.5, 1.5, size=n)
    x /= np.linalg.norm(x)
    estimate = 0.0
    for _ in range(max_iter):
        y = a @ x
        new = float(np.linalg.norm(y))
        if new == 0.0:
            return 0.0
        x = y / new
        if estimate > 0.0 and abs(new - estimate) <= tol * new:
            return new
        estimate = new
    raise ConvergenceError("power iteration did not converge", estimate)


def ridge_solve(design, targets, lam: float) -> np.ndarray:
    """Minimise ``||design @ W - targets||_F^2 + lam * ||W||_F^2``.

    Solved through the normal equations with a Cholesky factorisation.
    """
    x = as_matrix(design, "design")
    y = as_matrix(targets, "targets")
    if x.shape[0] < 1 or x.shape[0] != y.shape[0]:
        raise DimensionError(f"design {x.shape} and targets {y.shape} disagree on samples")
    if lam < 0:
        raise ValueError("ridge lambda must be non-negative")
    gram = x.T @ x
    gram[np.diag_indices_from(gram)] += lam
    try:
        factor = scipy.linalg.cho_factor(gram, lower=True, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise RankError("normal equations are not positive definite") from exc
    pivots = np.abs(np.diag(factor[0])) ** 2
    if lam == 0 and pivots.min() <= gram.shape[0] * np.finfo(np.float64).eps * pivots.max():
        raise RankError("normal equations are numerically singular")
    return scipy.linalg.cho_solve(factor, x.T @ y, check_finite=False)


def elementwise_median(stack: Sequence) -> np.ndarray:
    """Entry-wise median of equally shaped matrices (midpoint for even counts)."""
    if len(stack) == 0:
        raise DimensionError("median of an empty stack")
    arrays = [np.asarray(s, dtype=np.float64) for s in stack]
    shape = arrays[0].shape
    for a in arrays:
        if a.shape != shape:
            raise DimensionError(f"shape mismatch in median stack: {a.shape} vs {shape}")
    return np.median(np.stack(arrays), axis=0)


def pearson(x, y) -> float:
    """Pearson correlation; 0 when either input is constant."""
    a = np.asarray(x, dtype=np.float64).ravel()
    b = np.asarray(y, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise DimensionError(f"length mismatch: {a.size} vs {b.size}")
    if a.size < 2:
        raise DimensionError("pearson needs at least two samples")
    if np.ptp(a) == 0 or np.ptp(b) == 0:
        return 0.0
    a = a - a.mean()
    b = b - b.mean()
    return centered_correlation(a, b)


def centered_correlation(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity of already-centred arrays, 0 if either is all zero."""
    a = a.ravel()
    b = b.ravel()
    saa = float(a @ a)
    sbb = float(b @ b)
    if saa == 0.0 or sbb == 0.0:
        return 0.0
    r = float(a @ b) / np.sqrt(saa * sbb)
    return float(min(1.0, max(-1.0, r)))
