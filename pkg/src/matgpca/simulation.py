"""Synthetic matrix factor data and Monte Carlo experiments.

Data generating process: ``X_t = R F_t C^T + E_t`` with loadings drawn from
``U(-1, 1)``, VAR(1) factors ``vec F_t = phi vec F_{t-1} + sqrt(1-phi^2) eps_t``
and matrix-normal AR(1) noise ``vec E_t = psi vec E_{t-1} + sqrt(1-psi^2) vec W_t``
with ``W_t ~ MN(0, U, V)``.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy import stats

from .covariance import ThresholdConfig, data_driven_gpca
from .errors import ConfigError, DimensionError, RankError
from .estimators import (
    DEFAULT_MAX_ITER,
    DEFAULT_TOL,
    EstimationResult,
    SeparableCovariance,
    alpha_pca,
    oracle_gpca,
    pe_estimate,
)
from .linalg import spd_inv_sqrt, spd_sqrt, subspace_distance

logger = logging.getLogger(__name__)

CASES = ("case1", "case2", "case3")
NORMALITY_D = (1.5, 1.0, 0.5)
METHOD_ORDER = ("gpca", "oracle", "alpha_pca", "pe")
METRICS = ("D_R", "D_C", "MSE")


def _case_name(case) -> str:
    name = str(case).lower()
    if name in {"1", "2", "3"}:
        name = "case" + name
    if name not in CASES and name != "custom":
        raise ConfigError(f"unknown covariance case {case!r}")
    return name


def gen_cov(case, p: int, seed=None) -> np.ndarray:
    """Noise covariance for the three simulation designs.

    case1: unit diagonal, off-diagonal ``1/p``.
    case2: banded, ``(1/2 - |i-j|/10)_+`` off the diagonal.
    case3: five diagonal blocks of size ``p/5`` with off-diagonal ``10/p`` and
    diagonal entries drawn uniformly from ``{1.0, 1.1, 1.2, 1.3, 1.4}``.
    """
    case = _case_name(case)
    if p < 1:
        raise ConfigError("dimension must be positive")
    if case == "case1":
        S = np.full((p, p), 1.0 / p)
        np.fill_diagonal(S, 1.0)
        return S
    if case == "case2":
        d = np.abs(np.subtract.outer(np.arange(p), np.arange(p)))
        S = np.maximum(0.5 - d / 10.0, 0.0)
        np.fill_diagonal(S, 1.0)
        return S
    if case == "case3":
        if p % 5:
            raise ConfigError(f"case3 requires dimension divisible by 5, got {p}")
        rng = np.random.default_rng(seed)
        b = p // 5
        S = np.zeros((p, p))
        for j in range(5):
            S[j * b:(j + 1) * b, j * b:(j + 1) * b] = 10.0 / p
        diag = rng.integers(10, 15, size=p) / 10.0
        S[np.diag_indices(p)] = diag
        return S
    raise ConfigError("custom covariances must be passed explicitly")


MIXINGS = ("linear", "sqrt")


@dataclass(frozen=True)
class DgpConfig:
    """Simulation design.

    ``mixing`` fixes how a standard normal matrix ``W`` becomes noise: ``"sqrt"``
    gives ``U^{1/2} W V^{1/2}`` (noise covariance ``V kron U``), ``"linear"``
    gives ``U W V`` (noise covariance ``V^2 kron U^2``).  The linear form is the
    default because it matches the benchmark values; ``GroundTruth.cov``
    always holds the covariance the noise actually has.
    """

    T: int = 200
    p1: int = 20
    p2: int = 200
    k1: int = 3
    k2: int = 3
    phi: float = 0.1
    psi: float = 0.1
    cov_case: str = "case1"
    seed: int = 0
    burn_in: int = 100
    normality_mode: bool = False
    noise_scale: float = 1.0
    setting: str = "custom"
    mixing: str = "linear"
    U: Optional[np.ndarray] = field(default=None, compare=False, repr=False)
    V: Optional[np.ndarray] = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if min(self.T, self.p1, self.p2, self.k1, self.k2) < 1:
            raise ConfigError("T, p1, p2, k1, k2 must all be positive")
        if self.k1 > self.p1 or self.k2 > self.p2:
            raise ConfigError("factor numbers cannot exceed dimensions")
        if not (abs(self.phi) < 1 and abs(self.psi) < 1):
            raise ConfigError("|phi| and |psi| must be < 1")
        if self.burn_in < 0 or self.noise_scale < 0:
            raise ConfigError("burn_in and noise_scale must be nonnegative")
        if self.mixing not in MIXINGS:
            raise ConfigError(f"mixing must be one of {MIXINGS}, got {self.mixing!r}")
        case = _case_name(self.cov_case)
        object.__setattr__(self, "cov_case", case)
        if case == "case3" and (self.p1 % 5 or self.p2 % 5):
            raise ConfigError("case3 requires p1 and p2 divisible by 5")
        if case == "custom" and (self.U is None or self.V is None):
            raise ConfigError("custom case requires U and V")

    def echo(self) -> dict:
        d = {k: v for k, v in asdict(self).items() if k not in ("U", "V")}
        if self.cov_case == "custom":
            d["U"] = np.asarray(self.U).tolist()
            d["V"] = np.asarray(self.V).tolist()
        return d


def setting_config(setting: str, T: int, cov_case="case1", **kw) -> DgpConfig:
    """Setting A fixes ``p1 = 20`` with ``p2 = T``; B fixes ``p2 = 20`` with ``p1 = T``."""
    s = setting.upper()
    if s == "A":
        return DgpConfig(T=T, p1=kw.pop("p1", 20), p2=T, cov_case=cov_case, setting="A", **kw)
    if s == "B":
        return DgpConfig(T=T, p1=T, p2=kw.pop("p2", 20), cov_case=cov_case, setting="B", **kw)
    raise ConfigError(f"unknown setting {setting!r}")


@dataclass
class GroundTruth:
    R: np.ndarray
    C: np.ndarray
    cov: SeparableCovariance
    factors: np.ndarray
    noise: np.ndarray
    normality_mode: bool = False
    factor_variances: Optional[np.ndarray] = None

    @property
    def common(self) -> np.ndarray:
        return self.R @ self.factors @ self.C.T


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    if isinstance(seed, (tuple, list)):
        return np.random.default_rng(np.random.SeedSequence([int(s) for s in seed]))
    return np.random.default_rng(seed)


def normality_factor_variances(k1: int, k2: int) -> np.ndarray:
    """Diagonal of ``Cov(vec F_t)``: the pattern 1.5, 1, 0.5 repeated."""
    return np.resize(np.array(NORMALITY_D), k1 * k2)


def _normalize_loading(L: np.ndarray, S: np.ndarray) -> np.ndarray:
    """Rescale raw loadings so the whitened version is ``sqrt(p)`` times its left singular vectors."""
    p = L.shape[0]
    W = spd_inv_sqrt(S) @ L
    Ul, _, _ = np.linalg.svd(W, full_matrices=False)
    return spd_sqrt(S) @ (np.sqrt(p) * Ul)


def gen_series(cfg: DgpConfig, seed=None) -> tuple[np.ndarray, GroundTruth]:
    """Draw ``(X, truth)``; ``seed`` overrides ``cfg.seed`` (may be a tuple)."""
    rng = _rng(cfg.seed if seed is None else seed)
    T, p1, p2, k1, k2 = cfg.T, cfg.p1, cfg.p2, cfg.k1, cfg.k2
    if cfg.cov_case == "custom":
        U, V = np.asarray(cfg.U, float), np.asarray(cfg.V, float)
        if U.shape != (p1, p1) or V.shape != (p2, p2):
            raise DimensionError("custom U/V shapes do not match p1/p2")
    else:
        U = gen_cov(cfg.cov_case, p1, rng)
        V = gen_cov(cfg.cov_case, p2, rng)
    if cfg.mixing == "sqrt":
        U_half, V_half = spd_sqrt(U), spd_sqrt(V)
    else:
        U_half, V_half = U, V
        U, V = U @ U, V @ V
    cov = SeparableCovariance(U, V, "truth")

    R = rng.uniform(-1.0, 1.0, size=(p1, k1))
    C = rng.uniform(-1.0, 1.0, size=(p2, k2))
    d = None
    if cfg.normality_mode:
        R = _normalize_loading(R, U)
        C = _normalize_loading(C, V)
        d = normality_factor_variances(k1, k2)
        eps = rng.standard_normal((T, k1 * k2)) * np.sqrt(d)
        # vec() stacks columns
        F = eps.reshape(T, k2, k1).transpose(0, 2, 1)
        G = rng.standard_normal((T, p1, p2))
        E = U_half @ G @ V_half
    else:
        n = T + cfg.burn_in
        eps = rng.standard_normal((n + 1, k1 * k2))
        f = np.empty_like(eps)
        f[0] = eps[0]
        a = math.sqrt(1.0 - cfg.phi ** 2)
        for t in range(1, n + 1):
            f[t] = cfg.phi * f[t - 1] + a * eps[t]
        F = f[cfg.burn_in + 1:].reshape(T, k2, k1).transpose(0, 2, 1)
        G = U_half @ rng.standard_normal((n + 1, p1, p2)) @ V_half
        b = math.sqrt(1.0 - cfg.psi ** 2)
        e = G  # overwritten in place: e[t] = psi e[t-1] + b W_t
        for t in range(1, n + 1):
            e[t] = cfg.psi * e[t - 1] + b * e[t]
        E = e[cfg.burn_in + 1:]
    F = np.ascontiguousarray(F)
    E = np.ascontiguousarray(E) * cfg.noise_scale
    X = R @ F @ C.T + E
    return X, GroundTruth(R, C, cov, F, E, cfg.normality_mode, d)


def mse_common(S_hat, S) -> float:
    """Mean squared error of common components, averaged over all ``T p1 p2`` cells."""
    A = np.asarray(S_hat, dtype=float)
    B = np.asarray(S, dtype=float)
    if A.shape != B.shape:
        raise DimensionError(f"shape mismatch {A.shape} vs {B.shape}")
    diff = A - B
    return float(np.sum(diff * diff) / diff.size)


def align_rotation(est, truth) -> np.ndarray:
    """Least-squares ``H`` with ``est ~= truth @ H``."""
    L = np.asarray(truth, dtype=float)
    Lh = np.asarray(est, dtype=float)
    if L.shape != Lh.shape:
        raise DimensionError(f"shape mismatch {Lh.shape} vs {L.shape}")
    if np.linalg.matrix_rank(L) < L.shape[1]:
        raise RankError("truth loading is rank deficient")
    H, *_ = np.linalg.lstsq(L, Lh, rcond=None)
    return H


# --------------------------------------------------------------------------- fitting

def fit_method(method: str, X: np.ndarray, truth: GroundTruth | None, k1: int, k2: int,
               threshold: ThresholdConfig | None = None, seed=0,
               max_iter: int = DEFAULT_MAX_ITER, tol: float = DEFAULT_TOL) -> EstimationResult:
    """Fit one of ``gpca``, ``oracle``, ``alpha_pca``, ``pe``."""
    m = method.lower().replace("-", "_")
    if m in ("alpha_pca", "alphapca", "alpha"):
        return alpha_pca(X, k1, k2)
    if m == "pe":
        return pe_estimate(X, k1, k2, max_iter=max_iter, tol=tol)
    if m in ("oracle", "oracle_gpca"):
        if truth is None:
            raise ConfigError("oracle GPCA needs the true covariances")
        return oracle_gpca(X, truth.cov, k1, k2, max_iter=max_iter, tol=tol)
    if m == "gpca":
        return data_driven_gpca(X, k1, k2, threshold or ThresholdConfig(), max_iter=max_iter, tol=tol, seed=seed)
    raise ConfigError(f"unknown method {method!r}")


def canonical_method(method: str) -> str:
    m = method.lower().replace("-", "_")
    return {"alphapca": "alpha_pca", "alpha": "alpha_pca", "oracle_gpca": "oracle"}.get(m, m)


# ----------------------------------------------------------------------- Monte Carlo

@dataclass
class ReportRow:
    case: str
    setting: str
    T: int
    p1: int
    p2: int
    method: str
    metric: str
    mean: float
    sd: float
    n_effective: int


@dataclass
class ReportTable:
    rows: list
    n_reps: int
    failures: dict = field(default_factory=dict)

    COLUMNS = ("case", "setting", "T", "p1", "p2", "method", "metric", "mean", "sd", "n_effective")

    def get(self, method: str, metric: str) -> ReportRow:
        method = canonical_method(method)
        for r in self.rows:
            if r.method == method and r.metric == metric:
                return r
        raise KeyError((method, metric))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.COLUMNS)
        for r in self.rows:
            w.writerow([r.case, r.setting, r.T, r.p1, r.p2, r.method, r.metric,
                        format(r.mean, ".17g"), format(r.sd, ".17g"), r.n_effective])
        return buf.getvalue()

    def to_text(self) -> str:
        """``mean(sd)`` per method, one line per metric."""
        methods = [m for m in METHOD_ORDER if any(r.method == m for r in self.rows)]
        lines = []
        if self.rows:
            r0 = self.rows[0]
            lines.append(f"{r0.case}  setting={r0.setting}  T={r0.T}  p1={r0.p1}  p2={r0.p2}  reps={self.n_reps}")
        lines.append(f"{'metric':<8}" + "".join(f"{m:>20}" for m in methods))
        for metric in METRICS:
            cells = []
            for m in methods:
                try:
                    r = self.get(m, metric)
                except KeyError:
                    cells.append(f"{'-':>20}")
                    continue
                cells.append(f"{r.mean:.4f}({r.sd:.4f})".rjust(20))
            lines.append(f"{metric:<8}" + "".join(cells))
        if any(self.failures.values()):
            lines.append("failed replications: " + ", ".join(f"{k}={v}" for k, v in self.failures.items() if v))
        return "\n".join(lines) + "\n"


def _one_replication(cfg: DgpConfig, methods: Sequence[str], rep: int,
                     threshold: ThresholdConfig | None) -> dict:
    X, truth = gen_series(cfg, seed=(cfg.seed, rep))
    S = truth.common
    out = {}
    for m in methods:
        try:
            res = fit_method(m, X, truth, cfg.k1, cfg.k2, threshold, seed=(cfg.seed, rep, 1))
            out[m] = (subspace_distance(res.R_hat, truth.R), subspace_distance(res.C_hat, truth.C),
                      mse_common(res.common, S))
        except Exception as exc:  # recorded as a failed cell
            logger.warning("replication %d, method %s failed: %s", rep, m, exc)
            out[m] = None
    return out


def _map(fn, args: list, threads: int) -> list:
    if threads <= 1 or len(args) <= 1:
        return [fn(*a) for a in args]
    with ProcessPoolExecutor(max_workers=threads) as ex:
        futures = [ex.submit(fn, *a) for a in args]
        return [f.result() for f in futures]


def run_monte_carlo(cfg: DgpConfig, methods: Iterable[str] = METHOD_ORDER, n_reps: int = 200,
                    setting: str | None = None, threshold: ThresholdConfig | None = None,
                    threads: int = 1) -> ReportTable:
    """Replicate the DGP ``n_reps`` times and summarise subspace distances and MSE.

    Replication ``r`` uses the seed pair ``(cfg.seed, r)``; results are aggregated
    in replication order, so output does not depend on ``threads``.
    """
    if n_reps < 1:
        raise ConfigError("n_reps must be >= 1")
    methods = [canonical_method(m) for m in methods]
    results = _map(_one_replication, [(cfg, methods, r, threshold) for r in range(n_reps)], threads)
    setting = setting or cfg.setting
    rows, failures = [], {}
    for m in sorted(methods, key=lambda x: METHOD_ORDER.index(x) if x in METHOD_ORDER else 99):
        vals = np.array([res[m] for res in results if res[m] is not None], dtype=float).reshape(-1, 3)
        failures[m] = n_reps - len(vals)
        for j, metric in enumerate(METRICS):
            col = vals[:, j]
            mean = float(col.mean()) if len(col) else float("nan")
            sd = float(col.std(ddof=1)) if len(col) > 1 else 0.0 if len(col) else float("nan")
            rows.append(ReportRow(cfg.cov_case, setting, cfg.T, cfg.p1, cfg.p2, m, metric, mean, sd, len(col)))
    return ReportTable(rows, n_reps, failures)


# ----------------------------------------------------------------- asymptotic normality

def factor_second_moment(truth: GroundTruth) -> np.ndarray:
    """Closed-form ``E(F F^T)`` for independent factor entries with known variances."""
    k1, k2 = truth.R.shape[1], truth.C.shape[1]
    d = truth.factor_variances if truth.factor_variances is not None else np.ones(k1 * k2)
    return np.diag(d.reshape(k2, k1).sum(axis=0))


def asymptotic_variance_R(truth: GroundTruth, i: int = 0, n_mc: int = 20000, seed=0,
                          return_se: bool = False):
    """Asymptotic covariance of ``sqrt(T p2) (R_hat_i - H^T R_i)`` for GPCA.

    ``A_i = (u_ii / p2) E[F C^T V^{-1} C F^T]`` is averaged over ``n_mc`` factor
    draws and sandwiched as ``Lambda^{-1} Gamma^T A_i Gamma Lambda^{-1}`` with
    ``Sigma_1 = E(F F^T) = Gamma Lambda Gamma^T``.  With ``return_se`` the
    entrywise Monte Carlo standard errors are returned as well.
    """
    if not truth.normality_mode:
        raise ConfigError("asymptotic variance requires a normality-mode truth (iid factors with known variances)")
    rng = _rng(seed)
    U, V = truth.cov.U, truth.cov.V
    C = truth.C
    p2 = C.shape[0]
    k1, k2 = truth.R.shape[1], C.shape[1]
    G = C.T @ np.linalg.solve(V, C)
    G = 0.5 * (G + G.T)
    d = truth.factor_variances
    eps = rng.standard_normal((n_mc, k1 * k2)) * np.sqrt(d)
    F = eps.reshape(n_mc, k2, k1).transpose(0, 2, 1)
    draws = (U[i, i] / p2) * (F @ G @ np.swapaxes(F, 1, 2))
    A = draws.mean(axis=0)
    Sigma1 = factor_second_moment(truth)
    lam, Gam = np.linalg.eigh(Sigma1)
    lam, Gam = lam[::-1], Gam[:, ::-1]
    Linv = np.diag(1.0 / lam)
    sandwich = Linv @ Gam.T
    out = sandwich @ A @ sandwich.T
    out = 0.5 * (out + out.T)
    if not return_se:
        return out
    per = np.einsum("ab,nbc,dc->nad", sandwich, draws, sandwich)
    se = per.std(axis=0, ddof=1) / np.sqrt(n_mc)
    return out, se


@dataclass
class NormalityResult:
    method: str
    values: np.ndarray
    ks_statistic: float
    ks_pvalue: float
    variance: float
    failures: int = 0

    def histogram(self, bins: int = 30, limit: float = 4.0) -> tuple[np.ndarray, np.ndarray]:
        edges = np.linspace(-limit, limit, bins + 1)
        counts, _ = np.histogram(np.clip(self.values, -limit, limit), bins=edges)
        return counts, edges


def _normality_replication(cfg: DgpConfig, methods: Sequence[str], rep: int, row: int,
                           threshold: ThresholdConfig | None) -> dict:
    X, truth = gen_series(cfg, seed=(cfg.seed, rep))
    out = {}
    keep = np.ones(cfg.p1, dtype=bool)
    keep[row] = False
    for m in methods:
        try:
            res = fit_method(m, X, truth, cfg.k1, cfg.k2, threshold, seed=(cfg.seed, rep, 1))
            # rotation fitted on the other rows so that row `row`'s own error is not absorbed
            H = align_rotation(res.R_hat[keep], truth.R[keep])
            err = res.R_hat[row] - H.T @ truth.R[row]
            out[m] = float(np.sqrt(cfg.T * cfg.p2) * err[0])
        except Exception as exc:
            logger.warning("normality replication %d, method %s failed: %s", rep, m, exc)
            out[m] = None
    return out


def normality_experiment(cfg: DgpConfig, methods: Sequence[str] = ("gpca",), n_reps: int = 1000,
                         row: int = 0, n_mc: int = 200000, threshold: ThresholdConfig | None = None,
                         threads: int = 1) -> dict:
    """Standardized estimation errors of ``R[row, 0]`` across replications.

    Every method's error is standardized by the GPCA asymptotic variance of the
    same truth; the Kolmogorov-Smirnov distance to ``N(0, 1)`` summarises
    normality.  Returns ``{method: NormalityResult}``.
    """
    if not cfg.normality_mode:
        raise ConfigError("normality_experiment needs cfg.normality_mode=True")
    methods = [canonical_method(m) for m in methods]
    # in normality mode C^T V^{-1} C = p2 I, so the variance does not depend on the drawn loadings
    _, truth = gen_series(cfg, seed=(cfg.seed, 0))
    variance = float(asymptotic_variance_R(truth, row, n_mc, seed=(cfg.seed, 2**31 - 1))[0, 0])
    results = _map(_normality_replication,
                   [(cfg, methods, r, row, threshold) for r in range(n_reps)], threads)
    out = {}
    for m in methods:
        z = np.array([res[m] for res in results if res[m] is not None], dtype=float)
        z = z / np.sqrt(variance)
        ks = stats.kstest(z, "norm") if len(z) else None
        out[m] = NormalityResult(m, z, float(ks.statistic) if ks else float("nan"),
                                 float(ks.pvalue) if ks else float("nan"), variance, n_reps - len(z))
    return out
