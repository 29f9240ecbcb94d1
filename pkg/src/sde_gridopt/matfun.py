"""Matrix functions underlying the exact linear SDE transition.

For dX = AX dt + B dW with D = B B^T, one step of length t is governed by
a handful of matrix-valued functions of A and D:

* the propagator exp(tA),
* the first phi function E(tA) = sum_k (tA)^k / (k+1)!,
* the noise covariance G_t = int_0^t exp(sA) D exp(sA^T) ds,
* the observability Gramian Q_t = int_0^t exp(sA^T) M exp(sA) ds,
* the residual covariance scale K_t with cov(Z | dW) = K_t t^3,
* its small-time limit mho(A, D) = A D A^T / 12.

All matrices are plain float ndarrays.  Norms are Frobenius throughout, and
every nominally symmetric result is symmetrised before it is returned.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.linalg import expm

SquareMatrix = np.ndarray
RectMatrix = np.ndarray

# Below this value of t * ||A||_F the series for K_t converges within a few
# terms; above it the direct formula in extended precision is better behaved.
KT_BRANCH_THRESHOLD = 0.1

__all__ = [
    "SquareMatrix",
    "RectMatrix",
    "mat_exp",
    "phi1",
    "ctrl_gramian",
    "obs_gramian",
    "weight_propagate",
    "kt_matrix",
    "mho",
]


def _as_square(A, name: str) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"{name} must be a square matrix, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise ValueError(f"{name} must have finite entries")
    return A


def _check_symmetric(X: np.ndarray, name: str) -> None:
    if np.linalg.norm(X - X.T) > 1e-12 * max(1.0, np.linalg.norm(X)):
        raise ValueError(f"{name} must be symmetric")


def _sym(X: np.ndarray) -> np.ndarray:
    return 0.5 * (X + X.T)


def mat_exp(A: SquareMatrix, t: float) -> SquareMatrix:
    """Propagator exp(tA)."""
    A = _as_square(A, "A")
    if not np.isfinite(t):
        raise ValueError("t must be finite")
    return expm(t * A)


def phi1(A: SquareMatrix, t: float) -> SquareMatrix:
    """First phi function E(tA) = sum_{k>=0} (tA)^k / (k+1)!.

    Satisfies tA E(tA) + I = exp(tA) and E(0) = I.  Evaluated through the
    augmented exponential exp(t [[A, I], [0, 0]]) whose top-right block is
    t E(tA), which avoids explicit series handling near singular tA.
    """
    A = _as_square(A, "A")
    if not np.isfinite(t):
        raise ValueError("t must be finite")
    n = A.shape[0]
    if t == 0.0:
        return np.eye(n)
    H = np.zeros((2 * n, 2 * n))
    H[:n, :n] = A
    H[:n, n:] = np.eye(n)
    F = expm(t * H)
    return F[:n, n:] / t


def ctrl_gramian(A: SquareMatrix, D: SquareMatrix, t: float) -> SquareMatrix:
    """Controllability Gramian G_t = int_0^t exp(sA) D exp(sA^T) ds.

    Uses the block-exponential construction: with
    H = [[A, D], [0, -A^T]], the blocks of exp(tH) give
    G_t = F_12 F_11^T.  Intended for moderate t * ||A||; the blocks grow
    like exp(t ||A||) before the product cancels.
    """
    A = _as_square(A, "A")
    D = _as_square(D, "D")
    if D.shape != A.shape:
        raise ValueError("A and D must have matching shapes")
    _check_symmetric(D, "D")
    if not np.isfinite(t) or t < 0:
        raise ValueError("t must be nonnegative")
    n = A.shape[0]
    if t == 0.0:
        return np.zeros((n, n))
    H = np.zeros((2 * n, 2 * n))
    H[:n, :n] = A
    H[:n, n:] = D
    H[n:, n:] = -A.T
    F = expm(t * H)
    return _sym(F[:n, n:] @ F[:n, :n].T)


def obs_gramian(A: SquareMatrix, M: SquareMatrix, t: float) -> SquareMatrix:
    """Observability Gramian Q_t = int_0^t exp(sA^T) M exp(sA) ds."""
    A = _as_square(A, "A")
    M = _as_square(M, "M")
    return ctrl_gramian(A.T, M, t)


def weight_propagate(A: SquareMatrix, M: SquareMatrix, t: float) -> SquareMatrix:
    """Propagated weight R_t = exp(tA^T) M exp(tA)."""
    A = _as_square(A, "A")
    M = _as_square(M, "M")
    if M.shape != A.shape:
        raise ValueError("A and M must have matching shapes")
    _check_symmetric(M, "M")
    if not np.isfinite(t):
        raise ValueError("t must be finite")
    E = expm(t * A)
    return _sym(E.T @ M @ E)


def mho(A: SquareMatrix, D: SquareMatrix) -> SquareMatrix:
    """Small-time limit of K_t: mho = A D A^T / 12."""
    A = _as_square(A, "A")
    D = _as_square(D, "D")
    if D.shape != A.shape:
        raise ValueError("A and D must have matching shapes")
    _check_symmetric(D, "D")
    return _sym(A @ D @ A.T) / 12.0


def _kt_series(A: np.ndarray, D: np.ndarray, t: float, smax: int = 80) -> np.ndarray:
    """Series for K_t, valid for small t ||A||.

    K_t = sum_{j,k >= 1} jk t^{j+k-2} / ((j+1)! (k+1)! (j+k+1)) A^j D A^T^k,
    accumulated by total degree with a 1e-16 relative truncation.
    """
    n = A.shape[0]
    Apow = [np.eye(n), A.copy()]
    K = np.zeros((n, n))
    for s in range(2, smax + 1):
        while len(Apow) <= s - 1:
            Apow.append(A @ Apow[-1])
        C = np.zeros((n, n))
        for j in range(1, s):
            k = s - j
            c = j * k / (math.factorial(j + 1) * math.factorial(k + 1) * (s + 1))
            C += c * (Apow[j] @ D @ Apow[k].T)
        term = t ** (s - 2) * C
        K += term
        if np.linalg.norm(term) <= 1e-16 * max(np.linalg.norm(K), np.finfo(float).tiny):
            break
    return _sym(K)


def _expm_ld(H: np.ndarray) -> np.ndarray:
    """Scaling-and-squaring exponential in extended precision.

    Plain 30-term Taylor evaluation after scaling the norm below 0.25; used
    only by the direct K_t branch where float64 cancellation dominates.
    """
    X = H.astype(np.longdouble)
    nrm = float(np.sqrt(float((X * X).sum())))
    s = 0
    if nrm > 0.25:
        s = int(math.ceil(math.log2(nrm / 0.25)))
    X = X / np.longdouble(2.0) ** s
    n = H.shape[0]
    E = np.eye(n, dtype=np.longdouble)
    term = np.eye(n, dtype=np.longdouble)
    for k in range(1, 31):
        term = term @ X / np.longdouble(k)
        E = E + term
    for _ in range(s):
        E = E @ E
    return E


def _kt_direct(A: np.ndarray, D: np.ndarray, t: float) -> np.ndarray:
    """Direct formula K_t = t^{-2} (G_t / t - E(tA) D E(tA)^T).

    The subtraction loses roughly t^2 ||A||^2 digits, so the whole pipeline
    (block exponentials included) runs in longdouble before rounding back.
    """
    n = A.shape[0]
    Al = A.astype(np.longdouble)
    Dl = D.astype(np.longdouble)
    tl = np.longdouble(t)

    H = np.zeros((2 * n, 2 * n), dtype=np.longdouble)
    H[:n, :n] = Al
    H[:n, n:] = Dl
    H[n:, n:] = -Al.T
    F = _expm_ld(tl * H)
    G = F[:n, n:] @ F[:n, :n].T

    P = np.zeros((2 * n, 2 * n), dtype=np.longdouble)
    P[:n, :n] = Al
    P[:n, n:] = np.eye(n, dtype=np.longdouble)
    E = _expm_ld(tl * P)[:n, n:] / tl

    K = (G / tl - E @ Dl @ E.T) / tl**2
    return _sym(K.astype(float))


def kt_matrix(A: SquareMatrix, D: SquareMatrix, t: float) -> SquareMatrix:
    """Residual covariance scale K_t with cov(Z | dW) = K_t t^3.

    Continuous in t with kt_matrix(A, D, 0) = mho(A, D).  Switches from the
    total-degree series to the extended-precision direct formula once
    t ||A||_F exceeds KT_BRANCH_THRESHOLD.
    """
    A = _as_square(A, "A")
    D = _as_square(D, "D")
    if D.shape != A.shape:
        raise ValueError("A and D must have matching shapes")
    _check_symmetric(D, "D")
    if not np.isfinite(t) or t < 0:
        raise ValueError("t must be nonnegative")
    if t * np.linalg.norm(A) < KT_BRANCH_THRESHOLD:
        return _kt_series(A, D, t)
    return _kt_direct(A, D, t)
