"""Residual-based estimation of the separable noise covariance ``V kron U``.

Pipeline: PE loadings, residuals, sample row/column covariances, adaptive
soft thresholding with entrywise thresholds ``C * sqrt(theta_ij) * omega``,
cross-validated constants and a trace rescaling of ``U``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import kernels
from .errors import ConfigError, DimensionError, InsufficientDataError, InvalidCovarianceError, RankError
from .estimators import (
    DEFAULT_MAX_ITER,
    DEFAULT_TOL,
    EstimationResult,
    SeparableCovariance,
    _check_k,
    as_series,
    oracle_gpca,
    pe_estimate,
)
from .linalg import PD_TOLERANCE

log = logging.getLogger(__name__)

SIDES = ("row", "col")
DEFAULT_GRID = tuple(round(0.1 * i, 10) for i in range(41))
# residual energy below this fraction of the data energy counts as noiseless
DEGENERATE_RESIDUAL_RTOL = 1e-20


@dataclass(frozen=True)
class ThresholdConfig:
    """Thresholding constants; ``None`` constants are chosen by cross-validation."""

    C_r: Optional[float] = None
    C_c: Optional[float] = None
    H: int = 10
    grid: tuple = DEFAULT_GRID
    M_cap: Optional[float] = None
    pd_tolerance: float = PD_TOLERANCE

    def __post_init__(self):
        g = tuple(float(x) for x in np.atleast_1d(np.asarray(self.grid, dtype=float)))
        if not g:
            raise ConfigError("threshold grid must be non-empty")
        if any(b <= a for a, b in zip(g, g[1:])):
            raise ConfigError("threshold grid must be strictly increasing")
        if g[0] < 0 or not all(math.isfinite(x) for x in g):
            raise ConfigError("threshold grid must be finite and nonnegative")
        object.__setattr__(self, "grid", g)
        if int(self.H) != self.H or self.H < 1:
            raise ConfigError("H must be a positive integer")
        for name in ("C_r", "C_c", "M_cap"):
            v = getattr(self, name)
            if v is not None and (not math.isfinite(v) or v < 0):
                raise ConfigError(f"{name} must be nonnegative")
        if not self.pd_tolerance >= 0:
            raise ConfigError("pd_tolerance must be nonnegative")

    def constant(self, side: str) -> Optional[float]:
        return self.C_r if _side(side) == "row" else self.C_c

    def echo(self) -> dict:
        return {"C_r": self.C_r, "C_c": self.C_c, "H": int(self.H), "grid": list(self.grid),
                "M_cap": self.M_cap, "pd_tolerance": self.pd_tolerance}


@dataclass
class ThresholdedCovariance:
    """Soft-thresholded sample covariance and the quantities that produced it."""

    matrix: np.ndarray
    chosen_constant: float
    omega: float
    theta: np.ndarray
    sparsity: float
    side: str = "row"
    diagnostics: dict = field(default_factory=dict)


def _side(side: str) -> str:
    if side not in SIDES:
        raise ConfigError(f"side must be 'row' or 'col', got {side!r}")
    return side


def _orient(E: np.ndarray, side: str) -> np.ndarray:
    """Flat matrix whose Gram matrix gives the side's covariance sum."""
    T, p1, p2 = E.shape
    if side == "row":
        return E.transpose(1, 0, 2).reshape(p1, T * p2)
    return E.reshape(T * p1, p2).T


def residual_series(X, R, C) -> np.ndarray:
    """``E_t = X_t - R (R^T X_t C / (p1 p2)) C^T`` for PE loadings ``R``, ``C``."""
    X = as_series(X)
    T, p1, p2 = X.shape
    R = np.asarray(R, dtype=float)
    C = np.asarray(C, dtype=float)
    if R.ndim != 2 or C.ndim != 2 or R.shape[0] != p1 or C.shape[0] != p2:
        raise DimensionError(f"loadings {R.shape}, {C.shape} do not match data ({p1}, {p2})")
    if np.any(np.all(R == 0, axis=0)) or np.any(np.all(C == 0, axis=0)):
        raise RankError("loading matrices must not contain zero columns")
    F = R.T @ X @ C / (p1 * p2)
    return X - R @ F @ C.T


def sample_row_cov(E) -> np.ndarray:
    """``(1/(T p2)) sum_t E_t E_t^T``."""
    E = as_series(E, "E")
    T, p1, p2 = E.shape
    A = _orient(E, "row")
    S = A @ A.T / (T * p2)
    return 0.5 * (S + S.T)


def sample_col_cov(E) -> np.ndarray:
    """``(1/(T p1)) sum_t E_t^T E_t``."""
    E = as_series(E, "E")
    T, p1, p2 = E.shape
    A = _orient(E, "col")
    S = A @ A.T / (T * p1)
    return 0.5 * (S + S.T)


def sample_cov(E, side: str) -> np.ndarray:
    return sample_row_cov(E) if _side(side) == "row" else sample_col_cov(E)


def threshold_rate(side: str, dims: tuple[int, int, int]) -> float:
    """Rate ``omega``; the column side swaps the roles of ``p1`` and ``p2``."""
    T, p1, p2 = dims
    if _side(side) == "col":
        p1, p2 = p2, p1
    return math.sqrt(math.log(p1) / (T * p2)) + 1.0 / math.sqrt(T * p1) + 1.0 / math.sqrt(p1 * p2)


def _theta_from_sums(S_sum: np.ndarray, Q_sum: np.ndarray, n: int) -> np.ndarray:
    # mean of (e_il e_jl - u_ij)^2 = mean of e_il^2 e_jl^2 - u_ij^2
    u = S_sum / n
    th = Q_sum / n - u * u
    th = 0.5 * (th + th.T)
    return np.maximum(th, 0.0)


def threshold_theta(E, side: str) -> np.ndarray:
    """Entrywise variance proxy ``theta_ij`` of the products ``e_il e_jl``."""
    E = as_series(E, "E")
    A = _orient(E, _side(side))
    A2 = A * A
    return _theta_from_sums(A @ A.T, A2 @ A2.T, A.shape[1])


def _sparsity(M: np.ndarray) -> float:
    p = M.shape[0]
    if p < 2:
        return 1.0
    off = ~np.eye(p, dtype=bool)
    return float(np.mean(M[off] == 0.0))


def _threshold_matrix(S: np.ndarray, scale: np.ndarray, C: float) -> np.ndarray:
    return kernels.soft_threshold(S, C * scale)


def adaptive_threshold(sample_cov, E, side: str, C: float, dims=None,
                       theta: np.ndarray | None = None) -> ThresholdedCovariance:
    """Soft-threshold ``sample_cov`` off the diagonal at ``C * sqrt(theta_ij) * omega``.

    ``theta`` may be passed when already computed from ``E``.
    """
    side = _side(side)
    if not C >= 0:
        raise ConfigError("threshold constant must be nonnegative")
    S = np.asarray(sample_cov, dtype=float)
    E = as_series(E, "E")
    if dims is None:
        dims = E.shape
    p = E.shape[1] if side == "row" else E.shape[2]
    if S.shape != (p, p):
        raise DimensionError(f"sample covariance shape {S.shape} does not match {side} dimension {p}")
    if theta is None:
        theta = threshold_theta(E, side)
    omega = threshold_rate(side, dims)
    scale = np.sqrt(theta) * omega
    M = S.copy() if C == 0 else _threshold_matrix(S, scale, C)
    return ThresholdedCovariance(matrix=M, chosen_constant=float(C), omega=omega, theta=theta,
                                 sparsity=_sparsity(M), side=side)


def _check_diagonal(S: np.ndarray) -> None:
    d = np.diag(S)
    if np.any(d <= 0):
        raise InvalidCovarianceError(
            f"sample covariance has nonpositive diagonal entries (min {float(d.min()):.3g})")


def _min_pd_scan(S: np.ndarray, scale: np.ndarray, grid, tol: float) -> tuple[float, bool]:
    for c in grid:
        M = S if c == 0 else _threshold_matrix(S, scale, c)
        if np.linalg.eigvalsh(M)[0] > tol:
            return float(c), True
    return float(grid[-1]), False


def min_pd_constant(sample_cov, E, side: str, dims=None, cfg: ThresholdConfig | None = None,
                    theta: np.ndarray | None = None, with_flag: bool = False):
    """Smallest grid constant whose thresholded estimate has ``lambda_min > pd_tolerance``.

    If no grid value qualifies the grid maximum is returned; ``with_flag=True``
    returns ``(C, found)`` to expose that case.
    """
    cfg = cfg or ThresholdConfig()
    side = _side(side)
    S = np.asarray(sample_cov, dtype=float)
    _check_diagonal(S)
    E = as_series(E, "E")
    if dims is None:
        dims = E.shape
    if theta is None:
        theta = threshold_theta(E, side)
    scale = np.sqrt(theta) * threshold_rate(side, dims)
    c, ok = _min_pd_scan(S, scale, cfg.grid, cfg.pd_tolerance)
    if not ok:
        log.warning("no grid constant gives a positive definite %s covariance; using %g", side, c)
    return (c, ok) if with_flag else c


def diagonal_cap_constant(S: np.ndarray, scale: np.ndarray, cfg: ThresholdConfig) -> float:
    """Smallest grid value at which the estimate is exactly diagonal (grid max if none)."""
    if cfg.M_cap is not None:
        return float(cfg.M_cap)
    need = kernels.diagonal_cap(S, scale)
    for c in cfg.grid:
        if c >= need:
            return float(c)
    return float(cfg.grid[-1])


def _split_sizes(T: int) -> int:
    n1 = int(round(T * (1.0 - 1.0 / math.log(T))))
    return min(max(n1, 1), T - 1)


class _SideSums:
    """Per-period sums needed to form sample covariances and theta on any subset of periods."""

    def __init__(self, E: np.ndarray, side: str):
        self.side = side
        self.E = E
        T, p1, p2 = E.shape
        self.dims = (T, p1, p2)
        self.width = p2 if side == "row" else p1
        A = _orient(E, side)
        A2 = A * A
        self.S_sum = A @ A.T
        self.Q_sum = A2 @ A2.T

    def subset_sums(self, idx: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        A = _orient(self.E[idx], self.side)
        A2 = A * A
        return A @ A.T, A2 @ A2.T


def _cv_curve(sums: _SideSums, cands: np.ndarray, H: int, seed) -> np.ndarray:
    T, p1, p2 = sums.dims
    if T < 4:
        raise InsufficientDataError(f"cross-validation needs T >= 4, got {T}")
    n1 = _split_sizes(T)
    rng = np.random.default_rng(seed)
    total = np.zeros(cands.size)
    for _ in range(H):
        perm = rng.permutation(T)
        J2 = np.sort(perm[n1:])
        S2, Q2 = sums.subset_sums(J2)
        # training sums as complements of the smaller validation block
        S1 = sums.S_sum - S2
        Q1 = sums.Q_sum - Q2
        m1 = n1 * sums.width
        m2 = (T - n1) * sums.width
        S_train = S1 / m1
        S_train = 0.5 * (S_train + S_train.T)
        theta = _theta_from_sums(S1, Q1, m1)
        scale = np.sqrt(theta) * threshold_rate(sums.side, (n1, p1, p2))
        S_val = S2 / m2
        S_val = 0.5 * (S_val + S_val.T)
        total += kernels.cv_grid_objective(S_train, scale, S_val, cands)
    return total / H


def cross_validate_constant(E, side: str, cfg: ThresholdConfig | None = None, rng_seed=0,
                            return_details: bool = False):
    """Cross-validated threshold constant on the grid restricted to ``[C_min, M_cap]``.

    Each of ``H`` random splits fits on ``round(T (1 - 1/log T))`` periods and
    scores against the sample covariance of the rest; ties go to the smaller
    constant.
    """
    cfg = cfg or ThresholdConfig()
    side = _side(side)
    E = as_series(E, "E")
    if E.shape[0] < 4:
        raise InsufficientDataError(f"cross-validation needs T >= 4, got {E.shape[0]}")
    sums = _SideSums(E, side)
    return _cross_validate(sums, cfg, rng_seed, return_details)


def _cross_validate(sums: _SideSums, cfg: ThresholdConfig, seed, return_details: bool):
    T = sums.dims[0]
    n = T * sums.width
    S = 0.5 * (sums.S_sum + sums.S_sum.T) / n
    _check_diagonal(S)
    theta = _theta_from_sums(sums.S_sum, sums.Q_sum, n)
    scale = np.sqrt(theta) * threshold_rate(sums.side, sums.dims)
    grid = np.asarray(cfg.grid)
    c_min, pd_ok = _min_pd_scan(S, scale, cfg.grid, cfg.pd_tolerance)
    m_cap = diagonal_cap_constant(S, scale, cfg)
    cands = grid[(grid >= c_min) & (grid <= max(m_cap, c_min))]
    if cands.size == 0:
        cands = np.array([c_min])
    if cands.size == 1:
        curve = np.zeros(1)
    else:
        curve = _cv_curve(sums, cands, cfg.H, seed)
    best = float(cands[int(np.argmin(curve))])  # argmin keeps the first, i.e. smallest, minimiser
    if not return_details:
        return best
    details = {"C_min": c_min, "pd_found": pd_ok, "M_cap": m_cap,
               "candidates": cands.tolist(), "cv_curve": curve.tolist()}
    return best, S, theta, details


def _side_seed(seed, side: str):
    base = seed if isinstance(seed, tuple) else (seed,)
    return np.random.SeedSequence([int(s) for s in base] + [0 if side == "row" else 1])


def threshold_side(E: np.ndarray, side: str, cfg: ThresholdConfig, seed=0) -> ThresholdedCovariance:
    """Sample covariance, constant choice (fixed or CV) and thresholding for one side."""
    sums = _SideSums(E, side)
    fixed = cfg.constant(side)
    if fixed is None:
        C, S, theta, details = _cross_validate(sums, cfg, _side_seed(seed, side), True)
    else:
        n = sums.dims[0] * sums.width
        S = 0.5 * (sums.S_sum + sums.S_sum.T) / n
        theta = _theta_from_sums(sums.S_sum, sums.Q_sum, n)
        C, details = float(fixed), {"fixed": True}
    out = adaptive_threshold(S, E, side, C, sums.dims, theta=theta)
    out.diagnostics = details
    return out


def estimate_separable_cov(X, k1: int, k2: int, cfg: ThresholdConfig | None = None, seed=0,
                           max_iter: int = DEFAULT_MAX_ITER, tol: float = DEFAULT_TOL,
                           return_details: bool = False):
    """Thresholded estimate of ``(U, V)`` from PE residuals.

    ``U`` carries the identifiability constant ``T p1 p2 / sum_t ||E_t||_F^2``,
    so ``V kron U`` is the product estimator.  Data whose residuals vanish
    (noiseless fits) give the identity pair, flagged in the details.
    """
    cfg = cfg or ThresholdConfig()
    X = as_series(X)
    T, p1, p2 = X.shape
    _check_k(k1, k2, p1, p2)
    pe = pe_estimate(X, k1, k2, max_iter=max_iter, tol=tol)
    E = residual_series(X, pe.R_hat, pe.C_hat)
    energy = float(np.sum(E * E))
    details = {"pe_iterations": pe.iterations, "residual_energy": energy, "degenerate": False}
    if energy <= DEGENERATE_RESIDUAL_RTOL * float(np.sum(X * X)):
        details["degenerate"] = True
        cov = SeparableCovariance(np.eye(p1), np.eye(p2), "identity (vanishing residuals)")
        return (cov, details) if return_details else cov
    row = threshold_side(E, "row", cfg, seed)
    col = threshold_side(E, "col", cfg, seed)
    c = T * p1 * p2 / energy
    cov = SeparableCovariance(c * row.matrix, col.matrix, "constant assigned to U")
    details.update({"row": row, "col": col, "rescale": c})
    return (cov, details) if return_details else cov


def data_driven_gpca(X, k1: int, k2: int, cfg: ThresholdConfig | None = None,
                     max_iter: int = DEFAULT_MAX_ITER, tol: float = DEFAULT_TOL,
                     seed=0) -> EstimationResult:
    """GPCA with the thresholded covariance estimate plugged in for ``(U, V)``."""
    cov, details = estimate_separable_cov(X, k1, k2, cfg, seed=seed, max_iter=max_iter, tol=tol,
                                          return_details=True)
    res = oracle_gpca(X, cov, k1, k2, max_iter=max_iter, tol=tol, method="gpca")
    diag = {"degenerate_covariance": details["degenerate"], "rescale": details.get("rescale", 1.0)}
    for side in SIDES:
        tc = details.get(side)
        if tc is not None:
            diag[f"C_{side}"] = tc.chosen_constant
            diag[f"sparsity_{side}"] = tc.sparsity
    res.diagnostics.update(diag)
    return res
