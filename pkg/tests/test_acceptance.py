"""Acceptance suite: each test checks one criterion at its stated size and prints
a single ``CRITERION k: PASS|FAIL`` line with the measured quantities."""

import contextlib
import io
import json
import math
import time
from pathlib import Path

import jsonschema
import numpy as np
import pytest

from lipci import harness
from lipci.cli import load_schema, main
from lipci.dataset import SourceDataset
from lipci.geometry import LocationSet, Metric, pairwise_distances
from lipci.harness import ExperimentConfig, binomial_coverage_ci
from lipci.interval import delta_residual, find_delta, std_normal_quantile
from lipci.transport import bias_bound, worst_case_bias_direct
from lipci.variance import sigma2_qp
from lipci.weights import ContrastVectors

EUC = Metric.euclidean()
FIXTURES = Path(__file__).parent / "fixtures"
SHIFTS5 = (0.0, 0.4, -0.4, 0.8, -0.8)


@pytest.fixture
def verdict(capsys):
    def emit(k, ok, detail, started):
        with capsys.disabled():
            print(f"\nCRITERION {k}: {'PASS' if ok else 'FAIL'} ({time.perf_counter() - started:.1f}s) "
                  f"{detail}")
        assert ok, detail
    return emit


def coverage_table(reports):
    return {(r.method, r.setting): r for r in reports}


def test_criterion_01_delta_calibration(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    worst_res, outside = 0.0, 0
    for _ in range(10_000):
        B, c = rng.exponential(2.0) * rng.integers(0, 2), 10 ** rng.uniform(-3, 1)
        alpha = 10 ** rng.uniform(-4, math.log10(0.5))
        d = find_delta(B, c, alpha)
        worst_res = max(worst_res, abs(delta_residual(d, B / c, alpha)))
        lo, hi = std_normal_quantile(1 - alpha), std_normal_quantile(1 - alpha / 2)
        outside += not (lo - 1e-12 <= d <= hi + 1e-12)
    elapsed = time.perf_counter() - t0
    ok = worst_res <= 1e-10 and outside == 0 and elapsed < 5
    verdict(1, ok, f"max residual {worst_res:.2e}, outside bracket {outside}", t0)


def test_criterion_02_transport_duality(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(200):
        total = rng.integers(2, 13)
        m = rng.integers(1, total)
        n = total - m
        target, source = LocationSet(rng.uniform(size=(m, 2))), LocationSet(rng.uniform(size=(n, 2)))
        w = rng.normal(size=m)
        psi = rng.dirichlet(np.ones(n), size=m)
        c = ContrastVectors(w, psi.T @ w, 0)
        L = rng.uniform(0.1, 5)
        B = bias_bound(EUC, source, target, c, L).B
        direct = worst_case_bias_direct(EUC, source, target, c, L)
        worst = max(worst, abs(B - direct) / max(abs(direct), 1e-300))
    ok = worst <= 1e-7 and time.perf_counter() - t0 < 60
    verdict(2, ok, f"max relative discrepancy {worst:.2e} over 200 instances", t0)


def test_criterion_03_qp_variance(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    err_l0, worst_interp = 0.0, 0.0
    for _ in range(50):
        n = int(rng.integers(5, 60))
        S, y = rng.uniform(size=(n, 2)), rng.normal(size=n) * rng.uniform(0.1, 3)
        data = SourceDataset(LocationSet(S), np.ones((n, 1)), y)
        err_l0 = max(err_l0, abs(sigma2_qp(EUC, data, 0.0).sigma2 - np.var(y)))
        D = pairwise_distances(EUC, S, S)
        L = 1.01 * np.ptp(y) / D[D > 0].min()
        worst_interp = max(worst_interp, sigma2_qp(EUC, data, L).sigma2)
    line = SourceDataset(LocationSet([[0.0, 0], [1, 0], [2, 0]]), np.ones((3, 1)), [0.0, 10.0, 0.0])
    hand = abs(sigma2_qp(EUC, line, 1.0).sigma2 - 18.0)
    ok = err_l0 <= 1e-8 and worst_interp <= 1e-8 and hand <= 1e-6 and time.perf_counter() - t0 < 30
    verdict(3, ok, f"L=0 error {err_l0:.1e}, interpolating max {worst_interp:.1e}, "
                   f"hand instance error {hand:.1e}", t0)


def test_criterion_04_sigma2_consistency(verdict):
    t0 = time.perf_counter()
    sigma = 0.1
    L = math.sqrt(2) / 2  # f(s) = sin(s1 + s2) / 2

    medians = []
    for n in (50, 200, 800):
        errs = []
        for r in range(20):
            rng = np.random.default_rng([4, n, r])
            S = rng.uniform(size=(n, 2))
            y = 0.5 * np.sin(S.sum(axis=1)) + sigma * rng.normal(size=n)
            est = sigma2_qp(EUC, SourceDataset(LocationSet(S), np.ones((n, 1)), y), L).sigma2
            errs.append(abs(est - sigma ** 2) / sigma ** 2)
        medians.append(float(np.median(errs)))
    ok = medians[0] > medians[1] > medians[2] and medians[2] <= 0.2 \
        and time.perf_counter() - t0 < 600
    verdict(4, ok, "median relative errors at N=50/200/800: "
                   + ", ".join(f"{m:.3f}" for m in medians), t0)


def test_criterion_05_known_sigma_coverage(verdict):
    t0 = time.perf_counter()
    cfg = ExperimentConfig(shifts=SHIFTS5, seeds=100, sigma2_mode="known",
                           methods=("lipschitz", "ols", "sandwich"),
                           threads=harness.default_threads())
    tab = coverage_table(harness.run_coverage(cfg))
    lip_ok = all(tab["lipschitz", s].coverage >= 0.95 and tab["lipschitz", s].coverage_ci[0] >= 0.88
                 for s in SHIFTS5)
    base_ok = all(tab[m, s].coverage <= 0.10 for m in ("ols", "sandwich") for s in (0.8, -0.8))
    ok = lip_ok and base_ok and time.perf_counter() - t0 < 900
    detail = "; ".join(f"shift {s:+.1f}: lip {tab['lipschitz', s].coverage:.2f} "
                       f"(lo {tab['lipschitz', s].coverage_ci[0]:.3f}) ols {tab['ols', s].coverage:.2f} "
                       f"sand {tab['sandwich', s].coverage:.2f}" for s in SHIFTS5)
    verdict(5, ok, detail, t0)


def test_criterion_06_estimated_sigma_coverage(verdict):
    t0 = time.perf_counter()
    cfg = ExperimentConfig(shifts=SHIFTS5, seeds=100, sigma2_mode="qp", methods=("lipschitz",),
                           threads=harness.default_threads())
    tab = coverage_table(harness.run_coverage(cfg))
    lows = {s: tab["lipschitz", s].coverage_ci[0] for s in SHIFTS5}
    fails = sum(tab["lipschitz", s].failures for s in SHIFTS5)
    ok = all(v >= 0.85 for v in lows.values()) and fails == 0 and time.perf_counter() - t0 < 1800
    verdict(6, ok, "coverage CI lower bounds " + ", ".join(f"{s:+.1f}: {v:.3f}" for s, v in lows.items())
            + f"; solver failures {fails}", t0)


def test_criterion_07_lipschitz_ablation(verdict):
    t0 = time.perf_counter()
    grid = [0.1, 0.5, 1.0, 2.0, 3.5, 5.0, 7.5, 10.0]
    cfg = ExperimentConfig(shifts=(0.0,), seeds=50, sigma2_mode="qp",
                           threads=harness.default_threads())
    rows = harness.lipschitz_ablation(cfg, grid)
    bias_up = rand_down = True
    for k in range(cfg.seeds):
        b = [r.per_seed[k]["bias_part"] for r in rows]
        c = [r.per_seed[k]["randomness_part"] for r in rows]
        bias_up &= all(x < y for x, y in zip(b, b[1:]))
        rand_down &= all(y <= x * (1 + 1e-9) for x, y in zip(c, c[1:]))
    covs = [r.coverage for r in rows]
    ok = bias_up and rand_down and all(c == 1.0 for c in covs) and time.perf_counter() - t0 < 1200
    verdict(7, ok, f"bias part strictly increasing {bias_up}, randomness part nonincreasing "
                   f"{rand_down}, coverage by L {covs}", t0)


def test_criterion_08_three_covariate(verdict):
    t0 = time.perf_counter()
    shifts = (0.0, 0.8, -0.8)
    cfg = ExperimentConfig(experiment="three_covariate", N=2000, M=100, shifts=shifts, seeds=50,
                           sigma2_mode="nn", L=3 * math.sqrt(2), threads=harness.default_threads())
    tab = coverage_table(harness.run_coverage(cfg))
    lip_ok = all(tab["lipschitz", s].coverage_ci[0] >= 0.85 for s in shifts)
    base_ok = all(tab[m, s].coverage <= 0.30 for m in ("ols", "sandwich", "kdeiw") for s in shifts)
    ok = lip_ok and base_ok and time.perf_counter() - t0 < 1200
    detail = "; ".join(f"shift {s:+.1f}: " + " ".join(
        f"{m} {tab[m, s].coverage:.2f}" for m in ("lipschitz", "ols", "sandwich", "kdeiw"))
        + f" (lip lo {tab['lipschitz', s].coverage_ci[0]:.3f})" for s in shifts)
    verdict(8, ok, detail, t0)


def test_criterion_09_geographic_difference_protocol(verdict):
    t0 = time.perf_counter()
    pool, target, y_target, truth = harness.gen_geographic(seed=0)
    diff, _ = harness.real_data_coverage(pool, target, y_target, subsample_fraction=0.2, seeds=100,
                                         L=truth.lipschitz_L0, sigma2_mode="qp",
                                         threads=harness.default_threads())
    lip = [r for r in diff if r.method == "lipschitz"]
    base = [r for r in diff if r.method != "lipschitz"]
    floor = 0.95 - 3 * math.sqrt(0.95 * 0.05 / 100)
    lip_ok = all(r.coverage >= floor and r.failures == 0 for r in lip)
    base_ok = any(r.coverage < 0.80 for r in base)
    ok = lip_ok and base_ok and time.perf_counter() - t0 < 600
    detail = " ".join(f"{r.method}[{r.coefficient}]={r.coverage:.2f}" for r in diff)
    verdict(9, ok, f"threshold {floor:.3f}; {detail}", t0)


def test_criterion_10_binomial_ci(verdict):
    t0 = time.perf_counter()
    lo_all, _ = binomial_coverage_ci(250, 250)
    lo_none, _ = binomial_coverage_ci(0, 250)
    ok = abs(lo_all - 0.98535) <= 1e-4 and lo_none == 0.0 and time.perf_counter() - t0 < 1
    verdict(10, ok, f"lower bound at 250/250 = {lo_all:.6f}; at 0/250 = {lo_none}", t0)


def test_criterion_11_cli_golden_and_schema(verdict, tmp_path):
    t0 = time.perf_counter()
    geo = ["--source", str(FIXTURES / "geo_source.csv"), "--target", str(FIXTURES / "geo_target.csv"),
           "--metric", "haversine"]
    runs = {
        "ci": (["ci", *geo, "--lipschitz", "0.005", "--baselines", "ols,sandwich"], "result"),
        "variance": (["variance", *geo[:2], "--metric", "haversine", "--lipschitz", "0.005"], "result"),
        "simulate": (["simulate", "--experiment", "single", "--shift", "0.8", "--seeds", "5",
                      "--seed", "7", "--threads", "1"], "coverage"),
        "ablation": (["ablation", "--seeds", "2", "--N", "60", "--M", "20", "--threads", "1",
                      "--lipschitz", "0.5", "2"], "coverage"),
        "evaluate": (["evaluate", *geo, "--lipschitz", "0.005", "--seeds", "2", "--subsample", "0.5",
                      "--threads", "1"], "coverage"),
        "error": (["ci", *geo, "--lipschitz", "0"], "error"),
    }
    problems = []
    docs = {}
    for name, (argv, schema) in runs.items():
        out = tmp_path / f"{name}.json"
        if name == "error":
            buf = io.StringIO()
            with contextlib.redirect_stdout(buf):
                code = main(argv)
            out.write_text(buf.getvalue())
            if code == 0 or json.loads(buf.getvalue())["error"]["code"] != "invalid-lipschitz":
                problems.append("error code")
        elif (code := main(argv + ["--output", str(out)])) != 0:
            problems.append(f"{name} exit {code}")
        docs[name] = json.loads(out.read_text())
        try:
            jsonschema.validate(docs[name], load_schema(f"{schema}.schema.json"))
        except jsonschema.ValidationError as exc:
            problems.append(f"{name} schema: {exc.message}")
    golden = json.loads((FIXTURES / "golden_ci.json").read_text())
    if docs["ci"] != golden:
        problems.append("ci output differs from golden file")
    again = tmp_path / "simulate2.json"
    main(runs["simulate"][0] + ["--output", str(again)])
    if again.read_bytes() != (tmp_path / "simulate.json").read_bytes():
        problems.append("simulate not byte-identical")
    ok = not problems and time.perf_counter() - t0 < 60
    verdict(11, ok, "golden equal, schemas valid, simulate byte-identical" if ok else "; ".join(problems), t0)
