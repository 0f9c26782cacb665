"""Dense linear algebra primitives used by every estimator.

All functions are pure and operate on ``numpy`` arrays.  Eigenvectors follow a
fixed sign convention (the entry of largest magnitude in each vector is
positive, ties resolved by the lowest index) so that results are reproducible
bit-for-bit for identical inputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, NotPositiveDefiniteError, RankError, SymmetryError

PD_TOLERANCE = 1e-10
SYMMETRY_RTOL = 1e-8
RANK_TOLERANCE = 1e-12


@dataclass(frozen=True)
class SpectralDecomposition:
    """Leading eigenpairs, eigenvalues non-increasing."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    def __iter__(self):
        yield self.eigenvalues
        yield self.eigenvectors


def as_matrix(A, name: str = "matrix") -> np.ndarray:
    """Return ``A`` as a finite 2-D float array or raise."""
    M = np.asarray(A, dtype=float)
    if M.ndim != 2 or M.shape[0] < 1 or M.shape[1] < 1:
        raise DimensionError(f"{name} must be a non-empty 2-D array, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise ValueError(f"{name} contains non-finite entries")
    return M


def check_symmetric(S: np.ndarray, rtol: float = SYMMETRY_RTOL, name: str = "matrix") -> np.ndarray:
    S = as_matrix(S, name)
    if S.shape[0] != S.shape[1]:
        raise DimensionError(f"{name} must be square, got shape {S.shape}")
    scale = np.max(np.abs(S))
    if np.max(np.abs(S - S.T)) > rtol * scale:
        raise SymmetryError(f"{name} is not symmetric within {rtol:g} relative tolerance")
    return S


def fix_signs(Q: np.ndarray) -> np.ndarray:
    """Flip columns so that each column's largest-magnitude entry is positive."""
    Q = np.array(Q, dtype=float, copy=True)
    if Q.size == 0:
        return Q
    idx = np.argmax(np.abs(Q), axis=0)
    signs = np.where(Q[idx, np.arange(Q.shape[1])] < 0, -1.0, 1.0)
    return Q * signs


def _eigh_desc(S: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    S = 0.5 * (S + S.T)
    w, Q = np.linalg.eigh(S)
    return w[::-1], Q[:, ::-1]


def sym_eig_topk(S, k: int) -> SpectralDecomposition:
    """Top-``k`` eigenpairs of a symmetric matrix with the sign convention applied."""
    S = check_symmetric(S)
    p = S.shape[0]
    if not 1 <= k <= p:
        raise DimensionError(f"k={k} must satisfy 1 <= k <= {p}")
    w, Q = _eigh_desc(S)
    return SpectralDecomposition(w[:k].copy(), fix_signs(Q[:, :k]))


def eigengap_is_degenerate(eigenvalues: np.ndarray, k: int, rtol: float = 1e-8) -> bool:
    """True when the gap after the ``k``-th eigenvalue is below ``rtol * lambda_1``."""
    if k >= len(eigenvalues):
        return False
    scale = abs(eigenvalues[0])
    return bool(eigenvalues[k - 1] - eigenvalues[k] < rtol * scale)


def _spd_eig(S, tol: float, what: str) -> tuple[np.ndarray, np.ndarray]:
    S = check_symmetric(S, name=what)
    w, Q = np.linalg.eigh(0.5 * (S + S.T))
    if w[0] <= tol:
        raise NotPositiveDefiniteError(w[0], tol, what)
    return w, Q


def spd_power(S, power: float, tol: float = PD_TOLERANCE) -> np.ndarray:
    """``S**power`` for SPD ``S`` via one spectral decomposition."""
    w, Q = _spd_eig(S, tol, "matrix")
    M = (Q * w**power) @ Q.T
    return 0.5 * (M + M.T)


def spd_sqrt(S, tol: float = PD_TOLERANCE) -> np.ndarray:
    """Symmetric square root of an SPD matrix."""
    return spd_power(S, 0.5, tol)


def spd_inv_sqrt(S, tol: float = PD_TOLERANCE) -> np.ndarray:
    """Symmetric inverse square root of an SPD matrix."""
    return spd_power(S, -0.5, tol)


@dataclass(frozen=True)
class SPDFactors:
    """Square root, inverse square root and inverse from a single eigendecomposition."""

    sqrt: np.ndarray
    inv_sqrt: np.ndarray
    inv: np.ndarray
    is_identity: bool = False

    @classmethod
    def of(cls, S, tol: float = PD_TOLERANCE, what: str = "matrix") -> "SPDFactors":
        S = np.asarray(S, dtype=float)
        if S.ndim == 2 and S.shape[0] == S.shape[1] and np.array_equal(S, np.eye(S.shape[0])):
            eye = np.eye(S.shape[0])
            return cls(eye, eye.copy(), eye.copy(), True)
        w, Q = _spd_eig(S, tol, what)

        def _sym(M):
            return 0.5 * (M + M.T)

        return cls(_sym((Q * np.sqrt(w)) @ Q.T), _sym((Q / np.sqrt(w)) @ Q.T), _sym((Q / w) @ Q.T))


def orthonormalize(Q) -> np.ndarray:
    """Gram-Schmidt orthonormalization (modified, two passes) preserving column span.

    Raises :class:`RankError` when a column's remaining norm during elimination
    falls below ``1e-12``.
    """
    A = as_matrix(Q, "Q").copy()
    p, q = A.shape
    if q > p:
        raise RankError(f"{q} columns cannot be independent in R^{p}")
    out = np.empty_like(A)
    for j in range(q):
        v = A[:, j].copy()
        for _ in range(2):
            for i in range(j):
                v -= (out[:, i] @ v) * out[:, i]
        nrm = np.linalg.norm(v)
        if nrm < RANK_TOLERANCE:
            raise RankError(f"column {j} is numerically dependent on previous columns (norm {nrm:.3g})")
        out[:, j] = v / nrm
    return out


def subspace_distance(Q1, Q2) -> float:
    """Projector-trace distance between column spans, in ``[0, 1]``.

    ``D = sqrt(1 - Tr(P1 P2) / min(q1, q2))``.  Evaluated as the residual of the
    smaller basis after projection onto the larger one (or the projector
    difference when both have the same width), which keeps small distances
    accurate and makes the value exactly symmetric in its arguments.
    """
    A = as_matrix(Q1, "Q1")
    B = as_matrix(Q2, "Q2")
    if A.shape[0] != B.shape[0]:
        raise DimensionError(f"row counts differ: {A.shape[0]} vs {B.shape[0]}")
    A = orthonormalize(A)
    B = orthonormalize(B)
    q1, q2 = A.shape[1], B.shape[1]
    if q1 == q2:
        diff = A @ A.T - B @ B.T
        d2 = np.sum(diff * diff) / (2.0 * q1)
    else:
        small, big = (A, B) if q1 < q2 else (B, A)
        resid = small - big @ (big.T @ small)
        d2 = np.sum(resid * resid) / small.shape[1]
    return float(min(1.0, np.sqrt(max(d2, 0.0))))
