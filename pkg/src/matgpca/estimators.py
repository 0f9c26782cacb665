"""Matrix factor model estimators.

Model: ``X_t = R F_t C^T + E_t`` with ``Cov(vec E_t) = V kron U``.  Whitening by
``Z_t = U^{-1/2} X_t V^{-1/2}`` turns the weighted least-squares problem into a
projected eigen-problem that is solved by alternating eigen-updates of the row
and column loadings.  ``U = V = I`` gives the projected estimator (PE).

Series are ``numpy`` arrays of shape ``(T, p1, p2)``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import DimensionError, RankError
from .linalg import (
    PD_TOLERANCE,
    SPDFactors,
    check_symmetric,
    eigengap_is_degenerate,
    subspace_distance,
)

DEFAULT_MAX_ITER = 100
DEFAULT_TOL = 1e-6

METHODS = ("alpha_pca", "pe", "oracle_gpca", "gpca")


class EigengapWarning(RuntimeWarning):
    """Retained eigenvalues are (numerically) not separated from the rest."""


def as_series(X, name: str = "X") -> np.ndarray:
    """Validate a matrix series as a finite ``(T, p1, p2)`` float array."""
    A = np.asarray(X, dtype=float)
    if A.ndim == 2:
        A = A[None]
    if A.ndim != 3 or min(A.shape) < 1:
        raise DimensionError(f"{name} must have shape (T, p1, p2) with all sizes >= 1, got {A.shape}")
    if not np.all(np.isfinite(A)):
        raise ValueError(f"{name} contains non-finite entries")
    return A


def _check_k(k1: int, k2: int, p1: int, p2: int) -> None:
    if not (1 <= k1 <= p1 and 1 <= k2 <= p2):
        raise DimensionError(f"factor numbers (k1={k1}, k2={k2}) must lie in [1, p1={p1}] x [1, p2={p2}]")


@dataclass(frozen=True)
class SeparableCovariance:
    """Separable noise covariance ``Cov(vec E_t) = V kron U``.

    ``U`` and ``V`` are identified only up to ``(cU, V/c)``; ``scale_convention``
    records which side carries the normalising constant.
    """

    U: np.ndarray
    V: np.ndarray
    scale_convention: str = "unspecified"

    def __post_init__(self):
        U = check_symmetric(self.U, rtol=1e-10, name="U")
        V = check_symmetric(self.V, rtol=1e-10, name="V")
        object.__setattr__(self, "U", 0.5 * (U + U.T))
        object.__setattr__(self, "V", 0.5 * (V + V.T))

    @classmethod
    def identity(cls, p1: int, p2: int) -> "SeparableCovariance":
        return cls(np.eye(p1), np.eye(p2), "identity")

    @property
    def shape(self) -> tuple[int, int]:
        return self.U.shape[0], self.V.shape[0]

    def kron(self) -> np.ndarray:
        return np.kron(self.V, self.U)

    def factors(self, tol: float = PD_TOLERANCE) -> tuple[SPDFactors, SPDFactors]:
        return SPDFactors.of(self.U, tol, "U"), SPDFactors.of(self.V, tol, "V")


@dataclass
class EstimationResult:
    """Fitted loadings, factors and common components.

    ``R_hat``/``C_hat`` are raw loadings (``R_hat = sqrt(p1) U^{1/2} Q_R``);
    ``Q_R``/``Q_C`` are the orthonormal whitened bases.
    """

    R_hat: np.ndarray
    C_hat: np.ndarray
    Q_R: np.ndarray
    Q_C: np.ndarray
    factors: np.ndarray
    common: np.ndarray
    residuals: np.ndarray
    method: str
    iterations: int = 0
    final_step_distance: float = 0.0
    converged: bool = True
    cov: Optional[SeparableCovariance] = None
    objective_path: list = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)

    @property
    def k1(self) -> int:
        return self.R_hat.shape[1]

    @property
    def k2(self) -> int:
        return self.C_hat.shape[1]

    def whitened_loadings(self) -> tuple[np.ndarray, np.ndarray]:
        p1, p2 = self.Q_R.shape[0], self.Q_C.shape[0]
        return np.sqrt(p1) * self.Q_R, np.sqrt(p2) * self.Q_C

    def project(self, Y) -> tuple[np.ndarray, np.ndarray]:
        """Factors and common components of new observations under the fitted weights."""
        Y = as_series(Y, "Y")
        cov = self.cov if self.cov is not None else SeparableCovariance.identity(*Y.shape[1:])
        F = estimate_factors(Y, self.R_hat, self.C_hat, cov)
        return F, common_components(self.R_hat, F, self.C_hat)


class _Whitened:
    """Two flat views of a whitened stack for BLAS-friendly aggregation."""

    def __init__(self, Z: np.ndarray):
        self.Z = Z
        T, p1, p2 = Z.shape
        self.shape = Z.shape
        self.rows = Z.reshape(T * p1, p2)
        self.cols = np.ascontiguousarray(Z.transpose(1, 0, 2)).reshape(p1, T * p2)

    def row_aggregate(self, C_star: np.ndarray) -> np.ndarray:
        """``sum_t Z_t C* C*^T Z_t^T / (T p2)``."""
        T, p1, p2 = self.shape
        Y = (self.rows @ C_star).reshape(T, p1, -1)
        Yf = np.ascontiguousarray(Y.transpose(1, 0, 2)).reshape(p1, -1)
        M = (Yf @ Yf.T) / (T * p2)
        return 0.5 * (M + M.T)

    def col_aggregate(self, R_star: np.ndarray) -> np.ndarray:
        """``sum_t Z_t^T R* R*^T Z_t / (T p1)``."""
        T, p1, p2 = self.shape
        Y = (R_star.T @ self.cols).reshape(-1, p2)
        M = (Y.T @ Y) / (T * p1)
        return 0.5 * (M + M.T)


def _top_eigvecs(M: np.ndarray, k: int, label: str) -> np.ndarray:
    w, Q = np.linalg.eigh(M)
    w, Q = w[::-1], Q[:, ::-1]
    if eigengap_is_degenerate(w, k):
        warnings.warn(f"{label}: eigengap after component {k} is numerically zero", EigengapWarning, stacklevel=3)
    idx = np.argmax(np.abs(Q[:, :k]), axis=0)
    Qk = Q[:, :k]
    signs = np.where(Qk[idx, np.arange(k)] < 0, -1.0, 1.0)
    return Qk * signs


def alpha_pca_init(X, k1: int, k2: int) -> tuple[np.ndarray, np.ndarray]:
    """Alpha-PCA loadings with ``alpha = 0`` (second-moment aggregate only).

    Returns ``(sqrt(p1) * Q_R, sqrt(p2) * Q_C)`` where ``Q_R`` holds the top ``k1``
    eigenvectors of ``sum_t X_t X_t^T / (T p1 p2)`` and ``Q_C`` the top ``k2`` of
    ``sum_t X_t^T X_t / (T p1 p2)``.
    """
    X = as_series(X)
    T, p1, p2 = X.shape
    _check_k(k1, k2, p1, p2)
    scale = 1.0 / (T * p1 * p2)
    flat_rows = X.transpose(1, 0, 2).reshape(p1, -1)
    flat_cols = X.transpose(2, 0, 1).reshape(p2, -1)
    M_row = flat_rows @ flat_rows.T * scale
    M_col = flat_cols @ flat_cols.T * scale
    Q_R = _top_eigvecs(0.5 * (M_row + M_row.T), k1, "alpha-PCA row")
    Q_C = _top_eigvecs(0.5 * (M_col + M_col.T), k2, "alpha-PCA column")
    return np.sqrt(p1) * Q_R, np.sqrt(p2) * Q_C


def closed_form_factor(X_t, R, C, cov: SeparableCovariance | None = None) -> np.ndarray:
    """``R^T U^{-1} X_t V^{-1} C / (p1 p2)`` for a single observation."""
    X_t = np.asarray(X_t, dtype=float)
    if X_t.ndim != 2:
        raise DimensionError("X_t must be a single p1 x p2 matrix")
    return estimate_factors(X_t[None], R, C, cov)[0]


def estimate_factors(X, R, C, cov: SeparableCovariance | None = None) -> np.ndarray:
    """Generalized least-squares factors for every ``t``; returns ``(T, k1, k2)``."""
    X = as_series(X)
    T, p1, p2 = X.shape
    R = np.asarray(R, dtype=float)
    C = np.asarray(C, dtype=float)
    if R.ndim != 2 or C.ndim != 2 or R.shape[0] != p1 or C.shape[0] != p2:
        raise DimensionError(f"loading shapes {R.shape}, {C.shape} do not match data ({p1}, {p2})")
    if cov is None:
        left, right = R.T, C
    else:
        if cov.shape != (p1, p2):
            raise DimensionError(f"covariance shape {cov.shape} does not match data ({p1}, {p2})")
        fu, fv = cov.factors()
        left = R.T if fu.is_identity else R.T @ fu.inv
        right = C if fv.is_identity else fv.inv @ C
    return (left @ X @ right) / (p1 * p2)


def common_components(R, factors, C) -> np.ndarray:
    """``R F_t C^T`` for each ``t``; returns ``(T, p1, p2)``."""
    R = np.asarray(R, dtype=float)
    C = np.asarray(C, dtype=float)
    F = np.asarray(factors, dtype=float)
    if F.ndim == 2:
        F = F[None]
    if R.ndim != 2 or C.ndim != 2 or F.ndim != 3 or F.shape[1] != R.shape[1] or F.shape[2] != C.shape[1]:
        raise DimensionError(f"incompatible shapes R{R.shape}, F{F.shape}, C{C.shape}")
    return R @ F @ C.T


def gpca_objective(Z: np.ndarray, Q_R: np.ndarray, Q_C: np.ndarray) -> float:
    """Whitened least-squares loss at the optimal factors for given bases.

    Equals ``(1/T) sum_t ||Z_t - R* F_t C*^T||_F^2`` with ``F_t`` profiled out.
    """
    proj = Q_R.T @ Z @ Q_C
    return float((np.sum(Z * Z) - np.sum(proj * proj)) / Z.shape[0])


def _finish(X, cov, fu, fv, Q_R, Q_C, method, **extra) -> EstimationResult:
    T, p1, p2 = X.shape
    R_hat = np.sqrt(p1) * (Q_R if fu.is_identity else fu.sqrt @ Q_R)
    C_hat = np.sqrt(p2) * (Q_C if fv.is_identity else fv.sqrt @ Q_C)
    left = R_hat.T if fu.is_identity else R_hat.T @ fu.inv
    right = C_hat if fv.is_identity else fv.inv @ C_hat
    F = (left @ X @ right) / (p1 * p2)
    S = R_hat @ F @ C_hat.T
    return EstimationResult(
        R_hat=R_hat, C_hat=C_hat, Q_R=Q_R, Q_C=Q_C, factors=F, common=S,
        residuals=X - S, method=method, cov=cov, **extra,
    )


def oracle_gpca(
    X,
    cov: SeparableCovariance,
    k1: int,
    k2: int,
    init: tuple[np.ndarray, np.ndarray] | Callable | None = None,
    max_iter: int = DEFAULT_MAX_ITER,
    tol: float = DEFAULT_TOL,
    method: str = "oracle_gpca",
) -> EstimationResult:
    """Generalized PCA with known separable covariance.

    Each pass updates the row basis from the current column loadings and then
    the column basis from the freshly updated row loadings.  Iteration stops
    once both bases move by less than ``tol`` in subspace distance, or after
    ``max_iter`` passes (``converged`` is then ``False``).

    ``init`` is either a pair of whitened loadings ``(R0*, C0*)``, a callable
    ``init(Z, k1, k2)`` returning such a pair, or ``None`` for alpha-PCA on the
    whitened data.
    """
    X = as_series(X)
    T, p1, p2 = X.shape
    _check_k(k1, k2, p1, p2)
    if tol <= 0:
        raise ValueError("tol must be positive")
    if cov.shape != (p1, p2):
        raise DimensionError(f"covariance shape {cov.shape} does not match data ({p1}, {p2})")
    fu, fv = cov.factors()
    Z = X
    if not fu.is_identity:
        Z = fu.inv_sqrt @ Z
    if not fv.is_identity:
        Z = Z @ fv.inv_sqrt

    if init is None:
        init = alpha_pca_init
    R0, C0 = init(Z, k1, k2) if callable(init) else init
    R0 = np.asarray(R0, dtype=float)
    C0 = np.asarray(C0, dtype=float)
    if R0.shape != (p1, k1) or C0.shape != (p2, k2):
        raise DimensionError(f"initial loadings have shapes {R0.shape}, {C0.shape}; expected {(p1, k1)}, {(p2, k2)}")
    if np.linalg.matrix_rank(R0) < k1 or np.linalg.matrix_rank(C0) < k2:
        raise RankError("initial loadings are rank deficient")

    W = _Whitened(Z)
    Q_R, Q_C = R0, C0
    C_star = C0
    step = np.inf
    it = 0
    path = []
    for it in range(1, max_iter + 1):
        Q_R_new = _top_eigvecs(W.row_aggregate(C_star), k1, "row aggregate")
        R_star = np.sqrt(p1) * Q_R_new
        Q_C_new = _top_eigvecs(W.col_aggregate(R_star), k2, "column aggregate")
        C_star = np.sqrt(p2) * Q_C_new
        step = max(subspace_distance(Q_R_new, Q_R), subspace_distance(Q_C_new, Q_C))
        Q_R, Q_C = Q_R_new, Q_C_new
        path.append(gpca_objective(Z, Q_R, Q_C))
        if step < tol:
            break
    converged = bool(step < tol)
    return _finish(
        X, cov, fu, fv, Q_R, Q_C, method,
        iterations=it, final_step_distance=float(step), converged=converged,
        objective_path=path,
    )


def pe_estimate(X, k1: int, k2: int, max_iter: int = DEFAULT_MAX_ITER, tol: float = DEFAULT_TOL,
                init=None) -> EstimationResult:
    """Projected estimation: the identity-covariance case of :func:`oracle_gpca`."""
    X = as_series(X)
    _, p1, p2 = X.shape
    return oracle_gpca(X, SeparableCovariance.identity(p1, p2), k1, k2, init=init,
                       max_iter=max_iter, tol=tol, method="pe")


def alpha_pca(X, k1: int, k2: int) -> EstimationResult:
    """Alpha-PCA (``alpha = 0``) as a stand-alone estimator."""
    X = as_series(X)
    _, p1, p2 = X.shape
    R0, C0 = alpha_pca_init(X, k1, k2)
    cov = SeparableCovariance.identity(p1, p2)
    fu, fv = cov.factors()
    return _finish(X, cov, fu, fv, R0 / np.sqrt(p1), C0 / np.sqrt(p2), "alpha_pca",
                   iterations=0, final_step_distance=0.0)
