"""Command-line interface: ``matgpca {simulate,estimate,cov,rolling}``.

Every run writes its outputs plus ``config.json``, the fully resolved
configuration; passing that file back with ``--config`` reproduces the run
byte for byte.  Flags override values read from ``--config``.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .covariance import DEFAULT_GRID, ThresholdConfig, data_driven_gpca, estimate_separable_cov
from .errors import GPCAError
from .estimators import DEFAULT_MAX_ITER, DEFAULT_TOL, alpha_pca, pe_estimate
from .evaluation import fixture_path, ingest_csv, preprocess, rolling_validate
from .simulation import DgpConfig, METHOD_ORDER, canonical_method, normality_experiment, run_monte_carlo

log = logging.getLogger("matgpca")

COMMON_DEFAULTS = {"seed": 0, "threads": 1, "out": "out"}
THRESHOLD_DEFAULTS = {"c_r": None, "c_c": None, "h": 10, "grid": list(DEFAULT_GRID), "m_cap": None,
                      "pd_tolerance": ThresholdConfig().pd_tolerance}
DEFAULTS = {
    "simulate": {**COMMON_DEFAULTS, "case": "case1", "setting": "custom", "t": 200, "p1": 20, "p2": 200,
                 "k1": 3, "k2": 3, "phi": 0.1, "psi": 0.1, "burn_in": 100, "normality_mode": False,
                 "noise_scale": 1.0, "mixing": "linear", "reps": 200, "methods": list(METHOD_ORDER),
                 "n_mc": 200000, "row": 0, "bins": 40, **THRESHOLD_DEFAULTS},
    "estimate": {**COMMON_DEFAULTS, "input": None, "schema": "wide", "method": "gpca", "k1": 2, "k2": 2,
                 "preprocess": True, "max_iter": DEFAULT_MAX_ITER, "tol": DEFAULT_TOL, **THRESHOLD_DEFAULTS},
    "cov": {**COMMON_DEFAULTS, "input": None, "schema": "wide", "k1": 2, "k2": 2, "preprocess": True,
            "max_iter": DEFAULT_MAX_ITER, "tol": DEFAULT_TOL, **THRESHOLD_DEFAULTS},
    "rolling": {**COMMON_DEFAULTS, "input": None, "schema": "wide", "methods": ["gpca", "pe", "alpha_pca"],
                "n_years": [5], "k": [1, 2], "start_year": None, "end_year": None, "months_per_period": 12,
                "window_standardize": False, "max_iter": DEFAULT_MAX_ITER, "tol": DEFAULT_TOL,
                **THRESHOLD_DEFAULTS},
}


def _csv_list(s: str) -> list:
    return [x.strip() for x in s.split(",") if x.strip()]


def _int_list(s: str) -> list:
    return [int(x) for x in _csv_list(s)]


def _float_list(s: str) -> list:
    return [float(x) for x in _csv_list(s)]


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {s!r}")


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="JSON config; flags override its values")
    p.add_argument("--seed", type=int)
    p.add_argument("--threads", type=int)
    p.add_argument("--out", help="output directory")
    p.add_argument("-v", "--verbose", action="store_true")


def _add_threshold(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("thresholding")
    g.add_argument("--c-r", type=float, help="fixed row threshold constant (default: cross-validated)")
    g.add_argument("--c-c", type=float, help="fixed column threshold constant (default: cross-validated)")
    g.add_argument("--h", type=int, help="number of cross-validation splits")
    g.add_argument("--grid", type=_float_list, help="comma-separated candidate constants")
    g.add_argument("--m-cap", type=float)
    g.add_argument("--pd-tolerance", type=float)


def _add_input(p: argparse.ArgumentParser) -> None:
    p.add_argument("--input", help="panel CSV")
    p.add_argument("--schema", choices=("long", "wide", "french"))
    p.add_argument("--preprocess", type=_bool, help="impute and standardize before fitting (default true)")
    p.add_argument("--max-iter", type=int)
    p.add_argument("--tol", type=float)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="matgpca", description="Generalized PCA for matrix factor models")
    ap.add_argument("--version", action="version", version=f"matgpca {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="Monte Carlo study on simulated data")
    _add_common(s)
    s.add_argument("--case", help="noise covariance design: 1, 2, 3 (or case1..case3)")
    s.add_argument("--setting", choices=("A", "B", "custom"))
    s.add_argument("--t", type=int)
    s.add_argument("--p1", type=int)
    s.add_argument("--p2", type=int)
    s.add_argument("--k1", type=int)
    s.add_argument("--k2", type=int)
    s.add_argument("--phi", type=float)
    s.add_argument("--psi", type=float)
    s.add_argument("--burn-in", type=int)
    s.add_argument("--normality-mode", type=_bool)
    s.add_argument("--noise-scale", type=float)
    s.add_argument("--mixing", choices=("linear", "sqrt"))
    s.add_argument("--reps", type=int)
    s.add_argument("--methods", type=_csv_list, help="comma-separated: gpca,oracle,pe,alpha_pca")
    s.add_argument("--n-mc", type=int, help="Monte Carlo draws for the asymptotic variance")
    s.add_argument("--row", type=int, help="loading row studied in normality mode")
    s.add_argument("--bins", type=int, help="histogram bins in normality mode")
    _add_threshold(s)

    e = sub.add_parser("estimate", help="fit a factor model to a panel CSV")
    _add_common(e)
    _add_input(e)
    e.add_argument("--method", choices=("gpca", "pe", "alpha_pca"))
    e.add_argument("--k1", type=int)
    e.add_argument("--k2", type=int)
    _add_threshold(e)

    c = sub.add_parser("cov", help="thresholded estimate of the separable noise covariance")
    _add_common(c)
    _add_input(c)
    c.add_argument("--k1", type=int)
    c.add_argument("--k2", type=int)
    _add_threshold(c)

    r = sub.add_parser("rolling", help="rolling validation (defaults to the shipped fixture)")
    _add_common(r)
    r.add_argument("--input", help="panel CSV (default: shipped fixture)")
    r.add_argument("--schema", choices=("long", "wide", "french"))
    r.add_argument("--methods", type=_csv_list)
    r.add_argument("--n-years", type=_int_list, help="comma-separated bandwidths in years")
    r.add_argument("--k", type=_int_list, help="comma-separated factor numbers")
    r.add_argument("--start-year", type=int)
    r.add_argument("--end-year", type=int)
    r.add_argument("--months-per-period", type=int)
    r.add_argument("--window-standardize", type=_bool)
    r.add_argument("--max-iter", type=int)
    r.add_argument("--tol", type=float)
    _add_threshold(r)
    return ap


def resolve_config(args: argparse.Namespace) -> dict:
    """Defaults, then the ``--config`` file, then explicit flags."""
    cmd = args.command
    cfg = json.loads(json.dumps(DEFAULTS[cmd]))
    if args.config is not None:
        data = json.loads(Path(args.config).read_text())
        if data.get("command", cmd) != cmd:
            raise GPCAError(f"config is for '{data['command']}', not '{cmd}'")
        unknown = set(data) - set(cfg) - {"command", "version"}
        if unknown:
            raise GPCAError(f"unknown config keys: {', '.join(sorted(unknown))}")
        cfg.update({k: v for k, v in data.items() if k in cfg})
    for k in cfg:
        v = getattr(args, k, None)
        if v is not None:
            cfg[k] = v
    cfg["command"] = cmd
    cfg["version"] = __version__
    return cfg


def threshold_from(cfg: dict) -> ThresholdConfig:
    return ThresholdConfig(C_r=cfg["c_r"], C_c=cfg["c_c"], H=cfg["h"], grid=tuple(cfg["grid"]),
                           M_cap=cfg["m_cap"], pd_tolerance=cfg["pd_tolerance"])


def _fmt(x) -> str:
    return format(float(x), ".17g")


def _write(path: Path, text: str) -> None:
    path.write_text(text, encoding="utf-8")


def _matrix_csv(M: np.ndarray, rows=None, cols=None) -> str:
    M = np.atleast_2d(M)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    rows = rows if rows is not None else [str(i) for i in range(M.shape[0])]
    cols = cols if cols is not None else [str(j) for j in range(M.shape[1])]
    w.writerow([""] + list(cols))
    for r, row in zip(rows, M):
        w.writerow([r] + [_fmt(v) for v in row])
    return buf.getvalue()


def _series_csv(S: np.ndarray, dates, rows=None, cols=None) -> str:
    """Long format ``date,row,col,value``."""
    T, p, q = S.shape
    rows = rows if rows is not None else [str(i) for i in range(p)]
    cols = cols if cols is not None else [str(j) for j in range(q)]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["date", "row", "col", "value"])
    for t in range(T):
        for i in range(p):
            for j in range(q):
                w.writerow([dates[t], rows[i], cols[j], _fmt(S[t, i, j])])
    return buf.getvalue()


def _dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _load_panel(cfg: dict):
    if not cfg["input"]:
        raise GPCAError("--input is required")
    d = ingest_csv(cfg["input"], cfg["schema"])
    return preprocess(d) if cfg["preprocess"] else d


def cmd_simulate(cfg: dict, out: Path) -> None:
    dgp = DgpConfig(T=cfg["t"], p1=cfg["p1"], p2=cfg["p2"], k1=cfg["k1"], k2=cfg["k2"], phi=cfg["phi"],
                    psi=cfg["psi"], cov_case=cfg["case"], seed=cfg["seed"], burn_in=cfg["burn_in"],
                    normality_mode=cfg["normality_mode"], noise_scale=cfg["noise_scale"],
                    setting=cfg["setting"], mixing=cfg["mixing"])
    methods = [canonical_method(m) for m in cfg["methods"]]
    thr = threshold_from(cfg)
    table = run_monte_carlo(dgp, methods, cfg["reps"], threshold=thr, threads=cfg["threads"])
    _write(out / "table.csv", table.to_csv())
    if dgp.normality_mode:
        res = normality_experiment(dgp, methods, cfg["reps"], row=cfg["row"], n_mc=cfg["n_mc"],
                                   threshold=thr, threads=cfg["threads"])
        summary = []
        for m, r in res.items():
            _write(out / f"normality_{m}.csv", "z\n" + "".join(_fmt(z) + "\n" for z in r.values))
            counts, edges = r.histogram(cfg["bins"])
            _write(out / f"normality_{m}_hist.csv", "lower,upper,count\n" + "".join(
                f"{_fmt(a)},{_fmt(b)},{int(c)}\n" for a, b, c in zip(edges[:-1], edges[1:], counts)))
            summary.append([m, _fmt(r.ks_statistic), _fmt(r.ks_pvalue), _fmt(r.variance), r.failures])
        _write(out / "normality_summary.csv", "method,ks_statistic,ks_pvalue,variance,failures\n" + "".join(
            ",".join(map(str, row)) + "\n" for row in summary))
    print(table.to_text())


def _fit(cfg: dict, X: np.ndarray):
    m = cfg["method"]
    if m == "gpca":
        return data_driven_gpca(X, cfg["k1"], cfg["k2"], threshold_from(cfg), max_iter=cfg["max_iter"],
                                tol=cfg["tol"], seed=cfg["seed"])
    if m == "pe":
        return pe_estimate(X, cfg["k1"], cfg["k2"], max_iter=cfg["max_iter"], tol=cfg["tol"])
    return alpha_pca(X, cfg["k1"], cfg["k2"])


def cmd_estimate(cfg: dict, out: Path) -> None:
    d = _load_panel(cfg)
    res = _fit(cfg, d.values)
    fac_r = [f"f{i + 1}" for i in range(res.k1)]
    fac_c = [f"g{j + 1}" for j in range(res.k2)]
    _write(out / "row_loadings.csv", _matrix_csv(res.R_hat, d.row_labels, fac_r))
    _write(out / "col_loadings.csv", _matrix_csv(res.C_hat, d.col_labels, fac_c))
    _write(out / "factors.csv", _series_csv(res.factors, d.dates, fac_r, fac_c))
    _write(out / "common.csv", _series_csv(res.common, d.dates, d.row_labels, d.col_labels))
    _write(out / "residuals.csv", _series_csv(res.residuals, d.dates, d.row_labels, d.col_labels))
    diag = {k: v for k, v in res.diagnostics.items() if isinstance(v, (int, float, bool, str))}
    summary = {"method": res.method, "iterations": res.iterations, "converged": res.converged,
               "final_step_distance": res.final_step_distance, "shape": list(d.shape), "diagnostics": diag}
    _write(out / "summary.json", _dump_json(summary))
    print(f"{res.method}: {res.iterations} iterations, converged={res.converged}")


def cmd_cov(cfg: dict, out: Path) -> None:
    d = _load_panel(cfg)
    cov, det = estimate_separable_cov(d.values, cfg["k1"], cfg["k2"], threshold_from(cfg), seed=cfg["seed"],
                                      max_iter=cfg["max_iter"], tol=cfg["tol"], return_details=True)
    _write(out / "U.csv", _matrix_csv(cov.U, d.row_labels, d.row_labels))
    _write(out / "V.csv", _matrix_csv(cov.V, d.col_labels, d.col_labels))
    summary = {"scale_convention": cov.scale_convention, "degenerate": det["degenerate"],
               "rescale": det.get("rescale", 1.0)}
    for side in ("row", "col"):
        tc = det.get(side)
        if tc is None:
            continue
        info = {"constant": tc.chosen_constant, "omega": tc.omega, "sparsity": tc.sparsity}
        for key in ("C_min", "M_cap", "pd_found"):
            if key in tc.diagnostics:
                info[key] = tc.diagnostics[key]
        summary[side] = info
    _write(out / "cov_summary.json", _dump_json(summary))
    for side in ("row", "col"):
        if side in summary:
            s = summary[side]
            print(f"{side}: constant={s['constant']:g} sparsity={s['sparsity']:.3f}")


def cmd_rolling(cfg: dict, out: Path) -> None:
    path = cfg["input"] or str(fixture_path())
    d = ingest_csv(path, cfg["schema"])
    d = preprocess(d, standardize=not cfg["window_standardize"])
    thr = threshold_from(cfg)
    rows = []
    for n in cfg["n_years"]:
        for k in cfg["k"]:
            for m in cfg["methods"]:
                m = canonical_method(m)
                rep = rolling_validate(d, n, k, m, start_year=cfg["start_year"], end_year=cfg["end_year"],
                                       months_per_period=cfg["months_per_period"], threshold=thr,
                                       seed=cfg["seed"], window_standardize=cfg["window_standardize"],
                                       max_iter=cfg["max_iter"], tol=cfg["tol"])
                _write(out / f"rolling_{m}_n{n}_k{k}.csv", rep.to_csv())
                rows.append([n, k, m, rep.mse_bar, rep.rho_bar, rep.upsilon_bar])
    _write(out / "rolling_summary.csv", "n_years,k,method,mse_bar,rho_bar,upsilon_bar\n" + "".join(
        f"{n},{k},{m},{_fmt(a)},{_fmt(b)},{_fmt(c)}\n" for n, k, m, a, b, c in rows))
    for n, k, m, a, b, c in rows:
        print(f"n={n} k={k} {m:<10} MSE={a:.3f} rho={b:.3f} upsilon={c:.3f}")


COMMANDS = {"simulate": cmd_simulate, "estimate": cmd_estimate, "cov": cmd_cov, "rolling": cmd_rolling}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR, format="%(levelname)s %(message)s")
    try:
        cfg = resolve_config(args)
        out = Path(cfg["out"])
        out.mkdir(parents=True, exist_ok=True)
        COMMANDS[args.command](cfg, out)
        _write(out / "config.json", _dump_json(cfg))
    except (GPCAError, ValueError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
