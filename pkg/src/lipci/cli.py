"""Command-line front end: ``lipci ci | variance | simulate | ablation | evaluate``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import re
import sys
import time
from importlib import resources
from pathlib import Path

import numpy as np

from . import harness
from .dataset import SourceDataset, TargetSet, validate, with_intercept
from .geometry import EARTH_RADIUS_KM, LocationSet, Metric, degrees_to_radians
from .interval import estimate_sigma2, lipschitz_ci
from .regression import (GEO_BANDWIDTHS, kdeiw_interval, ols_fit, ols_interval,
                         sandwich_interval)

SCHEMA_VERSION = "1.0"
_FLOAT_RE = re.compile(r"^[+-]?(\d+(\.\d*)?|\.\d+)([eE][+-]?\d+)?$")

log = logging.getLogger("lipci")


class CliError(Exception):
    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code


# --------------------------------------------------------------------------
# CSV

def read_table(path) -> dict[str, np.ndarray]:
    """Numeric CSV with a header row, parsed strictly column by column."""
    path = Path(path)
    if not path.exists():
        raise CliError("missing-file", f"{path} does not exist")
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise CliError("missing-header", f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    if len(set(header)) != len(header):
        raise CliError("duplicate-columns", f"{path}: duplicate column names")
    values = np.empty((len(rows) - 1, len(header)))
    for r, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise CliError("inconsistent-columns",
                           f"{path}: row {r} has {len(row)} cells, header has {len(header)}")
        for c, cell in enumerate(row):
            if not _FLOAT_RE.match(cell.strip()):
                raise CliError("unparsable-cell",
                               f"{path}: row {r}, column {header[c]!r}: cannot parse {cell!r}")
            values[r - 2, c] = float(cell)
    return {h: values[:, k] for k, h in enumerate(header)}


def write_table(path, columns: dict[str, np.ndarray]) -> None:
    names = list(columns)
    n = len(next(iter(columns.values()))) if columns else 0
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names)
        for i in range(n):
            w.writerow([repr(float(columns[k][i])) for k in names])


def _numbered(table, prefix):
    cols = sorted((k for k in table if re.fullmatch(prefix + r"\d+", k)),
                  key=lambda k: int(k[len(prefix):]))
    expected = [f"{prefix}{i}" for i in range(1, len(cols) + 1)]
    if cols != expected:
        raise CliError("missing-columns", f"columns {prefix}1..{prefix}K must be contiguous, got {cols}")
    return cols


def _locations_from(table, metric: Metric, path) -> LocationSet:
    has_geo = "lat" in table or "lon" in table
    s_cols = _numbered(table, "s")
    if has_geo:
        if not ("lat" in table and "lon" in table):
            raise CliError("missing-columns", f"{path}: need both lat and lon")
        if s_cols:
            raise CliError("ambiguous-locations", f"{path}: both lat/lon and s columns present")
        if metric.kind != "haversine":
            raise CliError("ambiguous-units",
                           f"{path}: lat/lon columns (degrees) require --metric haversine")
        coords = degrees_to_radians(np.column_stack([table["lat"], table["lon"]]))
        if np.any(np.abs(coords[:, 0]) > np.pi / 2):
            raise CliError("invalid-geometry", f"{path}: latitude outside [-90, 90]")
        return LocationSet(coords, "radians")
    if not s_cols:
        raise CliError("missing-columns", f"{path}: need s1..sD or lat,lon columns")
    if metric.kind == "haversine":
        raise CliError("ambiguous-units", f"{path}: haversine needs lat,lon columns in degrees")
    return LocationSet(np.column_stack([table[c] for c in s_cols]))


def _covariates_from(table, path, intercept):
    x_cols = _numbered(table, "x")
    if not x_cols:
        raise CliError("missing-columns", f"{path}: need covariate columns x1..xP")
    X = np.column_stack([table[c] for c in x_cols])
    return with_intercept(X) if intercept else X


def parse_source_csv(path, metric: Metric | None = None, intercept: bool = True) -> SourceDataset:
    metric = metric or Metric.euclidean()
    table = read_table(path)
    if "y" not in table:
        raise CliError("missing-columns", f"{path}: source file needs a y column")
    return SourceDataset(_locations_from(table, metric, path),
                         _covariates_from(table, path, intercept), table["y"], intercept)


def parse_target_csv(path, metric: Metric | None = None, intercept: bool = True,
                     with_responses: bool = False):
    """Target locations and covariates; with ``with_responses`` also the y column."""
    metric = metric or Metric.euclidean()
    table = read_table(path)
    target = TargetSet(_locations_from(table, metric, path),
                       _covariates_from(table, path, intercept), intercept)
    if with_responses:
        if "y" not in table:
            raise CliError("missing-columns", f"{path}: evaluation needs target responses (y)")
        return target, table["y"]
    return target


def dataset_columns(data, degrees: bool = False, responses=None) -> dict[str, np.ndarray]:
    """Column mapping for writing a source or target dataset back to CSV."""
    coords = data.locations.coords
    cols = {}
    if degrees:
        cols["lat"], cols["lon"] = np.degrees(coords[:, 0]), np.degrees(coords[:, 1])
    else:
        for k in range(coords.shape[1]):
            cols[f"s{k + 1}"] = coords[:, k]
    X = data.covariates[:, 1:] if data.intercept_included else data.covariates
    for k in range(X.shape[1]):
        cols[f"x{k + 1}"] = X[:, k]
    y = getattr(data, "responses", None) if responses is None else responses
    if y is not None:
        cols["y"] = np.asarray(y)
    return cols


# --------------------------------------------------------------------------
# output

def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_clean(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def dumps(doc) -> str:
    return json.dumps(_clean(doc), indent=2, sort_keys=True) + "\n"


def load_schema(name: str) -> dict:
    return json.loads(resources.files("lipci").joinpath("schemas", name).read_text())


def _emit(doc, output):
    text = dumps(doc)
    if output:
        Path(output).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _coverage_csv(path, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method", "coefficient", "shift_or_L", "coverage", "cov_lo", "cov_hi",
                    "mean_width", "width_sd"])
        for r in rows:
            w.writerow([r["method"], r["coefficient"], repr(r["setting"]), repr(r["coverage"]),
                        repr(r["coverage_ci"][0]), repr(r["coverage_ci"][1]),
                        repr(r["mean_width"]), repr(r["width_sd"])])


# --------------------------------------------------------------------------
# commands

def _metric(args) -> Metric:
    if args.metric == "haversine":
        return Metric.haversine(args.radius if args.radius is not None else EARTH_RADIUS_KM)
    return Metric.euclidean()


def _check_common(args):
    if getattr(args, "lipschitz", None) is not None:
        for L in np.atleast_1d(args.lipschitz):
            if not (math.isfinite(L) and L > 0):
                raise CliError("invalid-lipschitz", f"Lipschitz constant must be positive, got {L}")
    if hasattr(args, "alpha") and not 0 < args.alpha < 1:
        raise CliError("invalid-alpha", f"alpha must lie in (0, 1), got {args.alpha}")
    if getattr(args, "sigma2", None) is not None and not args.sigma2 >= 0:
        raise CliError("invalid-sigma2", "sigma2 must be nonnegative")


def _coefficients(spec, p):
    if spec in (None, "all"):
        return list(range(p))
    try:
        idx = [int(x) for x in spec.split(",")]
    except ValueError:
        raise CliError("invalid-coefficients", f"cannot parse coefficient list {spec!r}") from None
    if any(not 0 <= i < p for i in idx):
        raise CliError("invalid-coefficients", f"coefficient indices must lie in [0, {p})")
    return idx


def _config_echo(args) -> dict:
    skip = {"func", "output", "csv", "verbose", "timing"}
    out = {k: v for k, v in sorted(vars(args).items()) if k not in skip}
    for key in ("source", "target"):  # file names only, so documents are path-independent
        if out.get(key):
            out[key] = Path(out[key]).name
    return out


def cmd_ci(args) -> dict:
    metric = _metric(args)
    source = parse_source_csv(args.source, metric, args.intercept)
    target = parse_target_csv(args.target, metric, args.intercept)
    coefs = _coefficients(args.coefficients, source.p)
    if args.sigma2 is not None:
        sigma2 = args.sigma2
    else:
        sigma2 = estimate_sigma2(metric, source, args.lipschitz, args.sigma2_mode)
    results = lipschitz_ci(source, target, args.lipschitz, args.alpha, metric, sigma2=sigma2,
                           psi_kind=args.psi, coefficients=coefs, seed=args.seed)
    records, per_coef = [], []
    for r in results:
        records.append({"coefficient": r.coefficient_index, "estimate": r.estimate,
                        "lower": r.lower, "upper": r.upper, "B": r.bias_halfwidth,
                        "c": r.randomness_scale, "delta": r.delta, "sigma2": r.sigma2,
                        "sigma2_method": r.sigma2_source})
        per_coef.append({"coefficient": r.coefficient_index, **r.diagnostics,
                         "delta": r.delta})
    noise_diag = {}
    if args.sigma2 is None:
        noise_diag = {k: v for k, v in sigma2.diagnostics.items() if k != "neighbors"}
    doc = {"schema_version": SCHEMA_VERSION, "command": "ci", "config": _config_echo(args),
           "results": records,
           "diagnostics": {"coefficients": per_coef, "sigma2": noise_diag,
                           "validation": validate(source, target).findings,
                           "N": source.n, "M": target.m}}
    if args.baselines:
        base = []
        fit = ols_fit(source.covariates, source.responses)
        for method in args.baselines.split(","):
            for p in coefs:
                if method == "ols":
                    bi = ols_interval(fit, p, args.alpha)
                elif method == "sandwich":
                    bi = sandwich_interval(source.covariates, source.responses, p, args.alpha)
                elif method == "kdeiw":
                    grid = GEO_BANDWIDTHS if metric.kind == "haversine" else harness.SIM_BANDWIDTHS
                    bi = kdeiw_interval(source.covariates, source.responses, source.locations,
                                        target.locations, p, args.alpha, grid, args.seed)
                else:
                    raise CliError("invalid-method", f"unknown baseline {method!r}")
                base.append({"method": method, "coefficient": p, "estimate": bi.estimate,
                             "lower": bi.lower, "upper": bi.upper, "se": bi.se})
        doc["baselines"] = base
    return doc


def cmd_variance(args) -> dict:
    metric = _metric(args)
    source = parse_source_csv(args.source, metric, args.intercept)
    est = estimate_sigma2(metric, source, args.lipschitz, args.method,
                          allow_large=args.allow_large) if args.method == "qp" else \
        estimate_sigma2(metric, source, args.lipschitz, args.method)
    diag = {k: v for k, v in est.diagnostics.items() if k != "neighbors"}
    return {"schema_version": SCHEMA_VERSION, "command": "variance",
            "config": _config_echo(args),
            "results": [{"sigma2": est.sigma2, "sigma2_method": est.method}],
            "diagnostics": diag}


_EXPERIMENTS = {"single": "single_covariate", "three": "three_covariate",
                "single_covariate": "single_covariate", "three_covariate": "three_covariate"}


def _experiment_config(args) -> harness.ExperimentConfig:
    return harness.ExperimentConfig(
        experiment=_EXPERIMENTS[args.experiment], N=args.N, M=args.M, shifts=tuple(args.shift),
        seeds=args.seeds, alpha=args.alpha,
        L=args.lipschitz if not isinstance(args.lipschitz, list) else None,
        sigma2_mode=args.sigma2_mode, methods=tuple(args.methods.split(",")),
        coefficient=args.coefficient, seed=args.seed, full_scale=args.full_scale,
        threads=_threads(args))


def _threads(args) -> int:
    return args.threads if args.threads else harness.default_threads()


def cmd_simulate(args) -> dict:
    try:
        cfg = _experiment_config(args)
    except ValueError as exc:
        raise CliError("invalid-config", str(exc)) from None
    rows = [r.to_dict() for r in harness.run_coverage(cfg)]
    config = _config_echo(args)
    config.pop("threads", None)
    return {"schema_version": SCHEMA_VERSION, "command": "simulate", "config": config,
            "results": rows}


def cmd_ablation(args) -> dict:
    grid = args.lipschitz
    args.lipschitz = None
    try:
        cfg = _experiment_config(args)
    except ValueError as exc:
        raise CliError("invalid-config", str(exc)) from None
    args.lipschitz = grid
    table = harness.lipschitz_ablation(cfg, grid)
    rows = []
    for t in table:
        d = t.to_dict()
        d.pop("per_seed")
        d.update(method="lipschitz", coefficient=cfg.coefficient, setting=t.L)
        rows.append(d)
    config = _config_echo(args)
    config.pop("threads", None)
    return {"schema_version": SCHEMA_VERSION, "command": "ablation", "config": config,
            "results": rows}


def cmd_evaluate(args) -> dict:
    metric = _metric(args)
    pool = parse_source_csv(args.source, metric, args.intercept)
    target, y_target = parse_target_csv(args.target, metric, args.intercept, with_responses=True)
    coefs = _coefficients(args.coefficients, pool.p)
    grid = GEO_BANDWIDTHS if metric.kind == "haversine" else harness.SIM_BANDWIDTHS
    diff, point = harness.real_data_coverage(
        pool, target, y_target, args.subsample, args.seeds, tuple(args.methods.split(",")),
        args.lipschitz, args.alpha, metric, coefs, args.sigma2_mode, grid, args.seed,
        _threads(args))
    rows = [r.to_dict() for r in diff] + [r.to_dict() for r in point]
    config = _config_echo(args)
    config.pop("threads", None)
    return {"schema_version": SCHEMA_VERSION, "command": "evaluate", "config": config,
            "results": rows,
            "diagnostics": {"target_variance_rule":
                            "difference intervals add sigma2_ols * [(X*'X*)^-1]_pp to each "
                            "method's variance; for the Lipschitz method it enters c"}}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="lipci", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    ap.add_argument("--timing", action="store_true", help="record wall time in diagnostics")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, data=True):
        p.add_argument("--alpha", type=float, default=0.05)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--output", "-o", help="write JSON here instead of stdout")
        if data:
            p.add_argument("--metric", choices=["euclidean", "haversine"], default="euclidean")
            p.add_argument("--radius", type=float, default=None,
                           help=f"sphere radius for haversine (default {EARTH_RADIUS_KM} km)")
            p.add_argument("--no-intercept", dest="intercept", action="store_false")

    p = sub.add_parser("ci", help="Lipschitz-driven confidence intervals")
    common(p)
    p.add_argument("--source", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--lipschitz", type=float, required=True)
    p.add_argument("--sigma2", type=float, default=None)
    p.add_argument("--sigma2-mode", choices=["qp", "nn"], default=None)
    p.add_argument("--psi", default="nn1", help="nn1 or knn:K")
    p.add_argument("--coefficients", default="all")
    p.add_argument("--baselines", default="", help="comma list of ols,sandwich,kdeiw")
    p.set_defaults(func=cmd_ci)

    p = sub.add_parser("variance", help="noise variance estimate")
    common(p)
    p.add_argument("--source", required=True)
    p.add_argument("--lipschitz", type=float, required=True)
    p.add_argument("--method", choices=["qp", "nn"], default="qp")
    p.add_argument("--allow-large", action="store_true")
    p.set_defaults(func=cmd_variance)

    for name, func in (("simulate", cmd_simulate), ("ablation", cmd_ablation)):
        p = sub.add_parser(name)
        common(p, data=False)
        p.add_argument("--experiment", choices=sorted(_EXPERIMENTS), default="single")
        p.add_argument("--shift", type=float, action="append", default=None)
        p.add_argument("--seeds", type=int, default=50)
        p.add_argument("--N", type=int, default=None)
        p.add_argument("--M", type=int, default=100)
        p.add_argument("--coefficient", type=int, default=1)
        p.add_argument("--sigma2-mode", choices=["known", "qp", "nn"],
                       default="known" if name == "simulate" else "qp")
        p.add_argument("--methods", default=",".join(harness.METHODS) if name == "simulate"
                       else "lipschitz")
        p.add_argument("--full-scale", action="store_true",
                       help="three-covariate experiment at N=10000")
        p.add_argument("--threads", type=int, default=None)
        p.add_argument("--csv", help="also write a flat coverage CSV")
        if name == "simulate":
            p.add_argument("--lipschitz", type=float, default=None)
        else:
            p.add_argument("--lipschitz", type=float, nargs="+",
                           default=[0.1, 0.5, 1.0, 2.0, 3.5, 5.0, 7.5, 10.0])
        p.set_defaults(func=func)

    p = sub.add_parser("evaluate", help="difference-based coverage with observed targets")
    common(p)
    p.add_argument("--source", required=True, help="source pool CSV with y")
    p.add_argument("--target", required=True, help="target CSV with y")
    p.add_argument("--lipschitz", type=float, required=True)
    p.add_argument("--subsample", type=float, default=0.2)
    p.add_argument("--seeds", type=int, default=100)
    p.add_argument("--methods", default=",".join(harness.METHODS))
    p.add_argument("--coefficients", default="all")
    p.add_argument("--sigma2-mode", choices=["qp", "nn"], default="qp")
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--csv", help="also write a flat coverage CSV")
    p.set_defaults(func=cmd_evaluate)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    if getattr(args, "shift", "unset") is None:
        args.shift = [0.0]
    try:
        _check_common(args)
        start = time.perf_counter()
        doc = args.func(args)
        if args.timing:  # opt-in: timing would break byte-identical outputs
            doc.setdefault("diagnostics", {})["timing_s"] = time.perf_counter() - start
        _emit(doc, args.output)
        if getattr(args, "csv", None):
            _coverage_csv(args.csv, doc["results"])
    except CliError as exc:
        _fail(exc.code, str(exc))
        return 2
    except Exception as exc:  # surface module errors with their stable code
        code = getattr(exc, "code", None) or "internal-error"
        _fail(code, f"{type(exc).__name__}: {exc}")
        return 1 if code == "internal-error" else 2
    return 0


def _fail(code, message):
    sys.stdout.write(dumps({"schema_version": SCHEMA_VERSION,
                            "error": {"code": code, "message": message}}))


if __name__ == "__main__":
    sys.exit(main())
