"""Matrix-valued panel data: CSV ingestion, preprocessing and rolling validation.

A rolling validation refits the factor model each year on the trailing
``n_years`` of data and scores the fitted loadings on that year's months:

* ``MSE_t``: mean squared error of the projected observations,
* ``rho_t``: unexplained share of the within-year variation,
* ``upsilon_t``: subspace distance between this year's and last year's
  ``C kron R``.
"""

from __future__ import annotations

import csv
import io
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .covariance import ThresholdConfig, data_driven_gpca
from .errors import ConfigError, DataError, DimensionError, ParseError
from .estimators import DEFAULT_MAX_ITER, DEFAULT_TOL, EstimationResult, alpha_pca, pe_estimate
from .linalg import subspace_distance

SCHEMAS = ("long", "wide", "french")
MISSING_TOKENS = ("", "NA", "NaN", "nan", "N/A")
# sentinels used by the portfolio data library for missing returns
FRENCH_MISSING = (-99.99, -999.0)

_DATE_RE = re.compile(r"^(\d{4})(?:-?(\d{2}))?(?:-?(\d{2}))?$")


@dataclass
class PanelDataset:
    """A ``(T, p1, p2)`` panel with labels; missing entries are ``NaN`` and masked."""

    dates: list
    row_labels: list
    col_labels: list
    values: np.ndarray
    missing_mask: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        self.missing_mask = np.asarray(self.missing_mask, dtype=bool)
        T = len(self.dates)
        if self.values.shape != (T, len(self.row_labels), len(self.col_labels)):
            raise DimensionError(
                f"values shape {self.values.shape} does not match labels "
                f"({T}, {len(self.row_labels)}, {len(self.col_labels)})")
        if self.missing_mask.shape != self.values.shape:
            raise DimensionError("missing mask shape does not match values")
        keys = [date_key(d) for d in self.dates]
        if any(b <= a for a, b in zip(keys, keys[1:])):
            raise DataError("dates must be strictly increasing")

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.values.shape

    @property
    def years(self) -> np.ndarray:
        return np.array([date_key(d)[0] for d in self.dates])

    def subset(self, idx) -> "PanelDataset":
        idx = np.asarray(idx)
        return PanelDataset([self.dates[i] for i in idx], list(self.row_labels), list(self.col_labels),
                            self.values[idx], self.missing_mask[idx])

    def to_wide_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["date"] + [f"{r}__{c}" for r in self.row_labels for c in self.col_labels])
        for t, d in enumerate(self.dates):
            row = self.values[t].ravel()
            miss = self.missing_mask[t].ravel()
            w.writerow([d] + ["NA" if m else format(v, ".17g") for v, m in zip(row, miss)])
        return buf.getvalue()


def date_key(s: str) -> tuple[int, int, int]:
    """``(year, month, day)`` from ``YYYY``, ``YYYYMM``, ``YYYY-MM`` or ``YYYY-MM-DD``."""
    m = _DATE_RE.match(str(s).strip())
    if not m:
        raise ValueError(f"unrecognised date {s!r}")
    y, mo, d = m.group(1), m.group(2), m.group(3)
    mo_i = int(mo) if mo else 1
    d_i = int(d) if d else 1
    if not (1 <= mo_i <= 12 and 1 <= d_i <= 31):
        raise ValueError(f"unrecognised date {s!r}")
    return int(y), mo_i, d_i


def _parse_value(tok: str, line: int) -> float:
    tok = tok.strip()
    if tok in MISSING_TOKENS:
        return math.nan
    try:
        v = float(tok)
    except ValueError:
        raise ParseError(f"cannot parse value {tok!r}", line) from None
    if math.isinf(v):
        raise ParseError(f"infinite value {tok!r}", line)
    return v


def _check_date(tok: str, line: int) -> str:
    tok = tok.strip()
    try:
        date_key(tok)
    except ValueError as exc:
        raise ParseError(str(exc), line) from None
    return tok


def _ordered(seq) -> list:
    return list(dict.fromkeys(seq))


def _assemble(cells: dict, dates: list, rows: list, cols: list) -> PanelDataset:
    order = sorted(range(len(dates)), key=lambda i: date_key(dates[i]))
    dates = [dates[i] for i in order]
    keys = [date_key(d) for d in dates]
    for a, b, da, db in zip(keys, keys[1:], dates, dates[1:]):
        if a == b:
            raise ParseError(f"dates {da!r} and {db!r} refer to the same period")
    ri = {r: i for i, r in enumerate(rows)}
    ci = {c: j for j, c in enumerate(cols)}
    di = {d: t for t, d in enumerate(dates)}
    vals = np.full((len(dates), len(rows), len(cols)), np.nan)
    seen = np.zeros(vals.shape, dtype=bool)
    for (d, r, c), v in cells.items():
        t, i, j = di[d], ri[r], ci[c]
        vals[t, i, j] = v
        seen[t, i, j] = True
    if not seen.all():
        t, i, j = map(int, np.argwhere(~seen)[0])
        raise DimensionError(
            f"inconsistent matrix shape: no entry for date {dates[t]!r}, row {rows[i]!r}, column {cols[j]!r}")
    return PanelDataset(dates, rows, cols, vals, np.isnan(vals))


def _read_long(reader) -> PanelDataset:
    header = next(reader, None)
    if header is None:
        raise ParseError("empty file", 1)
    names = [h.strip().lower() for h in header]
    need = ["date", "row", "col", "value"]
    if names[:4] != need or len(names) != 4:
        raise ParseError(f"long format expects header {','.join(need)}, got {','.join(header)}", 1)
    cells = {}
    dates, rows, cols = [], [], []
    for rec in reader:
        line = reader.line_num
        if not rec or all(not f.strip() for f in rec):
            continue
        if len(rec) != 4:
            raise ParseError(f"expected 4 fields, got {len(rec)}", line)
        d = _check_date(rec[0], line)
        r, c = rec[1].strip(), rec[2].strip()
        if not r or not c:
            raise ParseError("empty row or column label", line)
        key = (d, r, c)
        if key in cells:
            raise ParseError(f"duplicate entry for ({d}, {r}, {c})", line)
        cells[key] = _parse_value(rec[3], line)
        dates.append(d)
        rows.append(r)
        cols.append(c)
    if not cells:
        raise ParseError("no data rows")
    return _assemble(cells, _ordered(dates), _ordered(rows), _ordered(cols))


def _grid_labels(names: Sequence[str], sep: str, line: int) -> tuple[list, list]:
    pairs = []
    for n in names:
        parts = n.split(sep)
        if len(parts) != 2 or not parts[0] or not parts[1]:
            raise ParseError(f"column {n!r} is not of the form row{sep}col", line)
        pairs.append((parts[0], parts[1]))
    rows, cols = _ordered(p[0] for p in pairs), _ordered(p[1] for p in pairs)
    if len(set(pairs)) != len(pairs):
        raise ParseError("duplicate value columns", line)
    if len(pairs) != len(rows) * len(cols):
        raise DimensionError(f"{len(pairs)} value columns do not form a {len(rows)}x{len(cols)} grid")
    return rows, cols


def _read_wide(reader) -> PanelDataset:
    header = next(reader, None)
    if header is None:
        raise ParseError("empty file", 1)
    if len(header) < 2 or header[0].strip().lower() != "date":
        raise ParseError("wide format expects a leading 'date' column", 1)
    names = [h.strip() for h in header[1:]]
    rows, cols = _grid_labels(names, "__", 1)
    cells = {}
    dates = []
    for rec in reader:
        line = reader.line_num
        if not rec or all(not f.strip() for f in rec):
            continue
        if len(rec) != len(header):
            raise ParseError(f"expected {len(header)} fields, got {len(rec)}", line)
        d = _check_date(rec[0], line)
        if d in dates:
            raise ParseError(f"duplicate date {d}", line)
        dates.append(d)
        for n, tok in zip(names, rec[1:]):
            r, c = n.split("__")
            cells[(d, r, c)] = _parse_value(tok, line)
    if not dates:
        raise ParseError("no data rows")
    return _assemble(cells, dates, rows, cols)


def _french_labels(names: Sequence[str], p1: int | None, p2: int | None) -> tuple[list, list, int, int]:
    n = len(names)
    if p1 is None and p2 is None:
        s = math.isqrt(n)
        if s * s != n:
            raise DimensionError(f"{n} portfolio columns: pass p1/p2 explicitly")
        p1 = p2 = s
    elif p1 is None:
        p1 = n // p2
    elif p2 is None:
        p2 = n // p1
    if p1 * p2 != n:
        raise DimensionError(f"{n} portfolio columns do not form a {p1}x{p2} grid")
    return [f"S{i + 1}" for i in range(p1)], [f"BE{j + 1}" for j in range(p2)], p1, p2


def _read_french(reader, p1=None, p2=None) -> PanelDataset:
    """First monthly block of a data-library portfolio file (``YYYYMM`` rows, row-major cells)."""
    header, rows_out, dates = None, [], []
    for rec in reader:
        line = reader.line_num
        first = rec[0].strip() if rec else ""
        if header is None:
            if len(rec) > 2 and first == "" and any(f.strip() for f in rec[1:]):
                header = [f.strip() for f in rec[1:]]
            continue
        if not re.fullmatch(r"\d{6}", first):
            if dates:
                break  # end of the first block
            continue
        if len(rec) != len(header) + 1:
            raise ParseError(f"expected {len(header) + 1} fields, got {len(rec)}", line)
        vals = [_parse_value(tok, line) for tok in rec[1:]]
        vals = [math.nan if any(abs(v - s) < 1e-9 for s in FRENCH_MISSING) else v for v in vals]
        d = f"{first[:4]}-{first[4:]}"
        _check_date(d, line)
        if d in dates:
            raise ParseError(f"duplicate date {d}", line)
        dates.append(d)
        rows_out.append(vals)
    if header is None or not dates:
        raise ParseError("no monthly data block found")
    rl, cl, p1, p2 = _french_labels(header, p1, p2)
    vals = np.array(rows_out).reshape(len(dates), p1, p2)
    return PanelDataset(dates, rl, cl, vals, np.isnan(vals))


def ingest_csv(path, schema: str = "wide", p1: int | None = None, p2: int | None = None) -> PanelDataset:
    """Read a panel from CSV.

    ``long``: columns ``date,row,col,value``.  ``wide``: a ``date`` column and
    one column per cell named ``row__col``.  ``french``: the monthly block of a
    portfolio file from the Fama-French data library (``-99.99``/``-999`` are
    missing).  Empty fields and ``NA`` are missing in every schema.
    """
    if schema not in SCHEMAS:
        raise ConfigError(f"schema must be one of {SCHEMAS}, got {schema!r}")
    with open(path, newline="", encoding="utf-8-sig") as fh:
        reader = csv.reader(fh)
        if schema == "long":
            return _read_long(reader)
        if schema == "wide":
            return _read_wide(reader)
        return _read_french(reader, p1, p2)


def preprocess(d: PanelDataset, standardize: bool = True) -> PanelDataset:
    """Impute missing values by linear interpolation in time and standardize each cell.

    Leading/trailing gaps take the nearest observed value.  Standardization uses
    full-sample mean and (population) standard deviation.  The returned
    ``missing_mask`` still marks the originally missing entries.
    """
    X = d.values.copy()
    T, p1, p2 = X.shape
    t = np.arange(T, dtype=float)
    for i in range(p1):
        for j in range(p2):
            x = X[:, i, j]
            obs = ~np.isnan(x)
            n_obs = int(obs.sum())
            if n_obs < 2:
                raise DataError(
                    f"series ({d.row_labels[i]}, {d.col_labels[j]}) has {n_obs} observed values; need at least 2")
            if n_obs < T:
                X[:, i, j] = np.interp(t, t[obs], x[obs])
    if standardize:
        mu = X.mean(axis=0)
        sd = X.std(axis=0)
        bad = np.argwhere(sd <= 1e-12 * np.maximum(1.0, np.abs(mu)))
        if bad.size:
            i, j = map(int, bad[0])
            raise DataError(f"series ({d.row_labels[i]}, {d.col_labels[j]}) is constant")
        X = (X - mu) / sd
    return PanelDataset(list(d.dates), list(d.row_labels), list(d.col_labels), X, d.missing_mask.copy())


# --------------------------------------------------------------------------- rolling validation

@dataclass
class YearRecord:
    year: int
    mse: float
    rho: float
    upsilon: Optional[float]


@dataclass
class RollingReport:
    records: list
    config: dict = field(default_factory=dict)

    @property
    def mse_bar(self) -> float:
        return float(np.mean([r.mse for r in self.records]))

    @property
    def rho_bar(self) -> float:
        return float(np.mean([r.rho for r in self.records]))

    @property
    def upsilon_bar(self) -> float:
        u = [r.upsilon for r in self.records if r.upsilon is not None]
        return float(np.mean(u)) if u else math.nan

    def to_csv(self) -> str:
        def fmt(v):
            return "" if v is None or (isinstance(v, float) and math.isnan(v)) else format(v, ".17g")
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["year", "mse", "rho", "upsilon"])
        for r in self.records:
            w.writerow([r.year, fmt(r.mse), fmt(r.rho), fmt(r.upsilon)])
        w.writerow(["mean", fmt(self.mse_bar), fmt(self.rho_bar), fmt(self.upsilon_bar)])
        return buf.getvalue()


FitFn = Callable[[np.ndarray, int, int], EstimationResult]


def _fitter(method, threshold: ThresholdConfig | None, seed, max_iter: int, tol: float) -> FitFn:
    if callable(method):
        return method
    m = str(method).lower().replace("-", "_")
    if m == "gpca":
        return lambda X, k1, k2: data_driven_gpca(X, k1, k2, threshold, max_iter=max_iter, tol=tol, seed=seed)
    if m == "pe":
        return lambda X, k1, k2: pe_estimate(X, k1, k2, max_iter=max_iter, tol=tol)
    if m in ("alpha_pca", "alphapca"):
        return alpha_pca
    raise ConfigError(f"unknown rolling method {method!r}")


def _window_standardize(train: np.ndarray, test: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mu = train.mean(axis=0)
    sd = train.std(axis=0)
    if np.any(sd <= 0):
        raise DataError("a series is constant within a training window")
    return (train - mu) / sd, (test - mu) / sd


def rolling_validate(d: PanelDataset, n_years: int, k: int, method="gpca", start_year: int | None = None,
                     end_year: int | None = None, months_per_period: int = 12,
                     threshold: ThresholdConfig | None = None, seed=0, window_standardize: bool = False,
                     max_iter: int = DEFAULT_MAX_ITER, tol: float = DEFAULT_TOL) -> RollingReport:
    """Yearly refits on the trailing ``n_years * months_per_period`` observations.

    ``method`` is ``"gpca"``, ``"pe"``, ``"alpha_pca"`` or a callable
    ``fit(X, k1, k2)`` returning an :class:`EstimationResult`.  Each year's
    months are projected with the fitted loadings (and, for GPCA, the fitted
    covariance).  ``d`` is expected to be preprocessed; with
    ``window_standardize`` the raw values are instead standardized by the
    training window's moments.
    """
    if n_years < 1 or k < 1 or months_per_period < 1:
        raise ConfigError("n_years, k and months_per_period must be positive")
    if np.isnan(d.values).any():
        raise DataError("dataset has missing values; run preprocess first")
    fit = _fitter(method, threshold, seed, max_iter, tol)
    years = d.years
    window = n_years * months_per_period
    uniq = sorted(set(years.tolist()))
    feasible = [y for y in uniq if np.sum(years < y) >= window]
    if not feasible:
        raise ConfigError(f"not enough history for a {n_years}-year window")
    first = feasible[0] if start_year is None else start_year
    last = uniq[-1] if end_year is None else end_year
    eval_years = [y for y in uniq if first <= y <= last]
    if not eval_years:
        raise ConfigError(f"no evaluation years in [{first}, {last}]")
    if eval_years[0] not in feasible:
        raise ConfigError(f"insufficient history before {eval_years[0]} for a {n_years}-year window")

    records = []
    prev = None
    _, p1, p2 = d.shape
    for y in eval_years:
        before = np.flatnonzero(years < y)[-window:]
        test_idx = np.flatnonzero(years == y)
        train, test = d.values[before], d.values[test_idx]
        if window_standardize:
            train, test = _window_standardize(train, test)
        res = fit(train, k, k)
        _, Y_hat = res.project(test)
        err = float(np.sum((Y_hat - test) ** 2))
        dev = float(np.sum((test - test.mean(axis=0)) ** 2))
        mse = err / test.size
        rho = err / dev if dev > 0 else math.nan
        L = np.kron(res.C_hat, res.R_hat)
        ups = None if prev is None else float(subspace_distance(L, prev))
        prev = L
        records.append(YearRecord(int(y), mse, rho, ups))
    cfg = {"n_years": n_years, "k": k, "method": method if isinstance(method, str) else getattr(method, "__name__", "custom"),
           "start_year": eval_years[0], "end_year": eval_years[-1], "months_per_period": months_per_period,
           "window_standardize": window_standardize, "seed": seed, "max_iter": max_iter, "tol": tol}
    if threshold is not None:
        cfg["threshold"] = threshold.echo()
    return RollingReport(records, cfg)


# --------------------------------------------------------------------------- fixture

def _random_orthogonal(rng: np.random.Generator, p: int) -> np.ndarray:
    Q, Rq = np.linalg.qr(rng.standard_normal((p, p)))
    return Q * np.sign(np.diag(Rq))


def _fixture_side(rng, p: int, k: int, quiet: float, loud: float, second: float):
    """Loadings inside the quiet eigenspace of the noise covariance, plus its square root."""
    Q = _random_orthogonal(rng, p)
    lam = np.ones(p)
    lam[:k] = quiet
    if k < p:
        lam[k] = loud
    strengths = np.ones(k)
    strengths[1:] = second
    L = np.sqrt(p) * Q[:, :k] * strengths
    return L, (Q * np.sqrt(lam)) @ Q.T


def synthetic_portfolio_panel(seed: int = 1, start: str = "1964-01", n_months: int = 672,
                              p1: int = 10, p2: int = 10, k: int = 2, signal: float = 0.5,
                              quiet: float = 0.05, loud: float = 4.0, second: float = 0.6,
                              phi: float = 0.3, missing_rate: float = 0.0) -> PanelDataset:
    """Portfolio-like monthly panel from a matrix factor model with structured noise.

    The noise covariance on each side has one loud direction (eigenvalue
    ``loud``) orthogonal to the loadings, which sit in a quiet eigenspace
    (eigenvalue ``quiet``); all other directions have unit variance.  The loud
    direction competes with the factors in the raw data but disappears after
    whitening.  Defaults give a 10x10 grid of monthly returns from 1964-01 to
    2019-12.
    """
    rng = np.random.default_rng(seed)
    y0, m0, _ = date_key(start)
    dates = []
    for t in range(n_months):
        mm = m0 - 1 + t
        dates.append(f"{y0 + mm // 12:04d}-{mm % 12 + 1:02d}")
    R, A = _fixture_side(rng, p1, k, quiet, loud, second)
    C, B = _fixture_side(rng, p2, k, quiet, loud, second)
    F = np.empty((n_months, k, k))
    f = rng.standard_normal((k, k))
    s = math.sqrt(1.0 - phi * phi)
    for t in range(n_months):
        f = phi * f + s * rng.standard_normal((k, k))
        F[t] = f
    E = A @ rng.standard_normal((n_months, p1, p2)) @ B
    X = signal * (R @ F @ C.T) + E
    X = 4.0 * X + 1.0  # percent-return-like scale and drift
    mask = rng.random(X.shape) < missing_rate if missing_rate > 0 else np.zeros(X.shape, dtype=bool)
    X = np.where(mask, np.nan, X)
    return PanelDataset(dates, [f"S{i + 1}" for i in range(p1)], [f"BE{j + 1}" for j in range(p2)], X, mask)


def fixture_path() -> Path:
    return Path(__file__).with_name("data") / "ff_synthetic_10x10.csv"


def load_fixture() -> PanelDataset:
    return ingest_csv(fixture_path(), "wide")
