"""Shared generators for randomised property tests."""

import numpy as np

from sde_gridopt import LinearSdeModel, TimeGrid, regularity_check


def random_model(rng, n=2, m=None, T=1.0, stable_shift=0.5):
    """Random model with moderate norms and a stable drift."""
    m = n if m is None else m
    A = rng.standard_normal((n, n))
    A = A / max(np.linalg.norm(A), 1e-12)
    A = A - stable_shift * np.eye(n)
    B = rng.standard_normal((n, m))
    H = rng.standard_normal((n, n))
    M = H @ H.T + 0.1 * np.eye(n)
    return LinearSdeModel(A=A, B=B, M=M, T=T)


def random_regular_model(rng, n=2, m=None, T=1.0):
    """Random model resampled until the regularity determinant is positive."""
    while True:
        model = random_model(rng, n=n, m=m, T=T)
        if regularity_check(model).satisfied:
            return model


def random_grid(rng, N, T=1.0):
    """Random strictly increasing grid with N steps on [0, T]."""
    while True:
        interior = np.sort(rng.random(N - 1)) * T
        pts = np.concatenate(([0.0], interior, [T]))
        if np.all(np.diff(pts) > 1e-6 * T / N):
            return TimeGrid(pts)
