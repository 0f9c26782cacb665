"""Pure-numpy reference versions of the thresholding kernels."""

from __future__ import annotations

import numpy as np


def soft_threshold(S: np.ndarray, tau: np.ndarray) -> np.ndarray:
    """Entrywise ``sgn(s) (|s| - tau)_+`` off the diagonal; diagonal copied."""
    S = np.asarray(S, dtype=float)
    out = np.sign(S) * np.maximum(np.abs(S) - tau, 0.0)
    d = np.diag_indices(S.shape[0])
    out[d] = S[d]
    return out


def cv_grid_objective(S_train: np.ndarray, scale: np.ndarray, S_val: np.ndarray,
                      grid: np.ndarray) -> np.ndarray:
    """``||threshold(S_train, c * scale) - S_val||_F^2`` for every ``c`` in ``grid``."""
    S_train = np.asarray(S_train, dtype=float)
    grid = np.asarray(grid, dtype=float)
    p = S_train.shape[0]
    off = ~np.eye(p, dtype=bool)
    a = np.abs(S_train[off])
    sg = np.sign(S_train[off])
    sc = np.asarray(scale, dtype=float)[off]
    v = np.asarray(S_val, dtype=float)[off]
    diag_term = float(np.sum((np.diag(S_train) - np.diag(S_val)) ** 2))
    shrunk = sg * np.maximum(a[None, :] - grid[:, None] * sc[None, :], 0.0)
    return np.sum((shrunk - v[None, :]) ** 2, axis=1) + diag_term


def diagonal_cap(S: np.ndarray, scale: np.ndarray) -> float:
    """Smallest constant ``c`` for which every off-diagonal entry is thresholded to zero."""
    S = np.asarray(S, dtype=float)
    p = S.shape[0]
    off = ~np.eye(p, dtype=bool)
    a = np.abs(S[off])
    sc = np.asarray(scale, dtype=float)[off]
    if a.size == 0:
        return 0.0
    nz = a > 0
    if np.any(nz & (sc <= 0)):
        return float("inf")
    if not np.any(nz):
        return 0.0
    return float(np.max(a[nz] / sc[nz]))
