import json
import math
import subprocess
import sys
from pathlib import Path

import jsonschema
import numpy as np
import pytest

from lipci.cli import (CliError, dataset_columns, load_schema, main, parse_source_csv,
                       parse_target_csv, read_table, write_table)
from lipci.geometry import Metric

FIXTURES = Path(__file__).parent / "fixtures"
GEO = ["--source", str(FIXTURES / "geo_source.csv"), "--target", str(FIXTURES / "geo_target.csv"),
       "--metric", "haversine"]
RESULT, COVERAGE, ERROR = (load_schema(f"{k}.schema.json") for k in ("result", "coverage", "error"))


def run(argv, capsys):
    code = main(argv)
    return code, json.loads(capsys.readouterr().out)


def close(a, b, rel=1e-9):
    """Structural equality with a relative tolerance on floats."""
    if isinstance(a, dict):
        return a.keys() == b.keys() and all(close(a[k], b[k], rel) for k in a)
    if isinstance(a, list):
        return len(a) == len(b) and all(close(x, y, rel) for x, y in zip(a, b))
    if isinstance(a, float) and isinstance(b, (int, float)):
        return math.isclose(a, b, rel_tol=rel, abs_tol=1e-12)
    return a == b


def write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


def test_two_row_file(tmp_path):
    f = write(tmp_path / "s.csv", "s1,s2,x1,y\n0,0,1.5,2\n1,0.5,2.5,3\n")
    src = parse_source_csv(f, intercept=False)
    assert src.n == 2 and src.p == 1
    np.testing.assert_array_equal(src.responses, [2.0, 3.0])
    assert parse_source_csv(f).p == 2


def test_lat_lon_requires_haversine(tmp_path):
    f = write(tmp_path / "s.csv", "lat,lon,x1,y\n10,20,1,2\n")
    with pytest.raises(CliError) as err:
        parse_source_csv(f, Metric.euclidean())
    assert err.value.code == "ambiguous-units"
    src = parse_source_csv(f, Metric.haversine())
    np.testing.assert_allclose(src.locations.coords, [[math.radians(10), math.radians(20)]])


@pytest.mark.parametrize("cell", ["NaN", "nan", "inf", "1,5", "1_000", "", "0x10"])
def test_strict_cells_rejected_with_location(tmp_path, cell):
    f = write(tmp_path / "s.csv", f's1,s2,x1,y\n0,0,1,2\n1,1,"{cell}",3\n')
    with pytest.raises(CliError) as err:
        parse_source_csv(f)
    assert err.value.code == "unparsable-cell"
    assert "row 3" in str(err.value) and "'x1'" in str(err.value)


@pytest.mark.parametrize("text,code", [
    ("s1,s2,x1\n0,0,1\n", "missing-columns"),
    ("s1,s2,y\n0,0,1\n", "missing-columns"),
    ("s1,s2,x1,y\n0,0,1\n", "inconsistent-columns"),
    ("s1,s3,x1,y\n0,0,1,1\n", "missing-columns"),
    ("", "missing-header"),
])
def test_structural_errors(tmp_path, text, code):
    with pytest.raises(CliError) as err:
        parse_source_csv(write(tmp_path / "s.csv", text))
    assert err.value.code == code


def test_target_without_y(tmp_path):
    f = write(tmp_path / "t.csv", "s1,s2,x1,x2\n0,0,1,2\n1,1,3,1\n2,0,0,1\n")
    t = parse_target_csv(f)
    assert t.m == 3 and t.p == 3


def test_csv_round_trip_exact(tmp_path, rng):
    cols = {"s1": rng.normal(size=20) * 1e-7, "s2": rng.uniform(size=20),
            "x1": rng.normal(size=20) * 1e5, "y": np.r_[rng.normal(size=19), 0.1]}
    write_table(tmp_path / "a.csv", cols)
    back = read_table(tmp_path / "a.csv")
    for k in cols:
        np.testing.assert_array_equal(back[k], cols[k])
    src = parse_source_csv(tmp_path / "a.csv")
    write_table(tmp_path / "b.csv", dataset_columns(src))
    assert (tmp_path / "b.csv").read_bytes() == (tmp_path / "a.csv").read_bytes()


def test_golden_ci(capsys):
    code, doc = run(["ci", *GEO, "--lipschitz", "0.005", "--baselines", "ols,sandwich"], capsys)
    assert code == 0
    jsonschema.validate(doc, RESULT)
    golden = json.loads((FIXTURES / "golden_ci.json").read_text())
    # floats compared to 1e-9 relative so BLAS builds that reorder sums still agree
    assert close(doc, golden)


def test_ci_deterministic_bytes(tmp_path):
    outs = []
    for name in ("a.json", "b.json"):
        assert main(["ci", *GEO, "--lipschitz", "0.005", "--output", str(tmp_path / name)]) == 0
        outs.append((tmp_path / name).read_bytes())
    assert outs[0] == outs[1]


def test_ci_invariants(capsys):
    _, doc = run(["ci", *GEO, "--lipschitz", "0.01", "--sigma2", "0.0625", "--psi", "knn:3",
                  "--coefficients", "1,2"], capsys)
    jsonschema.validate(doc, RESULT)
    assert [r["coefficient"] for r in doc["results"]] == [1, 2]
    for r in doc["results"]:
        half = r["B"] + r["c"] * r["delta"]
        assert r["lower"] == pytest.approx(r["estimate"] - half, abs=1e-12)
        assert r["upper"] == pytest.approx(r["estimate"] + half, abs=1e-12)
        assert r["sigma2_method"] == "known"


def test_variance_command(capsys):
    code, doc = run(["variance", *GEO[:2], "--metric", "haversine", "--lipschitz", "0.005",
                     "--method", "nn"], capsys)
    assert code == 0
    jsonschema.validate(doc, RESULT)
    assert doc["results"][0]["sigma2_method"] == "nn"


@pytest.mark.parametrize("argv,code", [
    (["ci", *GEO, "--lipschitz", "0"], "invalid-lipschitz"),
    (["ci", *GEO, "--lipschitz", "-1"], "invalid-lipschitz"),
    (["ci", *GEO, "--lipschitz", "1", "--alpha", "1.5"], "invalid-alpha"),
    (["ci", "--source", "nope.csv", "--target", "nope.csv", "--lipschitz", "1"], "missing-file"),
    (["ci", *GEO[:4], "--lipschitz", "1"], "ambiguous-units"),
    (["ci", *GEO, "--lipschitz", "1", "--coefficients", "7"], "invalid-coefficients"),
    (["ci", *GEO, "--lipschitz", "1", "--psi", "knn:0"], "invalid-weights"),
    (["simulate", "--shift", "3", "--seeds", "1"], "invalid-config"),
])
def test_error_documents(capsys, argv, code):
    rc, doc = run(argv, capsys)
    assert rc != 0
    jsonschema.validate(doc, ERROR)
    assert doc["error"]["code"] == code


def test_simulate_byte_identical(tmp_path):
    paths = []
    for k in range(2):
        out, csv = tmp_path / f"s{k}.json", tmp_path / f"s{k}.csv"
        argv = ["simulate", "--experiment", "single", "--shift", "0.8", "--seeds", "5", "--seed", "7",
                "--threads", "1", "--output", str(out), "--csv", str(csv)]
        assert main(argv) == 0
        paths.append((out, csv))
    assert paths[0][0].read_bytes() == paths[1][0].read_bytes()
    assert paths[0][1].read_bytes() == paths[1][1].read_bytes()
    doc = json.loads(paths[0][0].read_text())
    jsonschema.validate(doc, COVERAGE)
    header = paths[0][1].read_text().splitlines()[0]
    assert header == "method,coefficient,shift_or_L,coverage,cov_lo,cov_hi,mean_width,width_sd"


def test_ablation_and_evaluate(tmp_path, capsys):
    _, doc = run(["ablation", "--seeds", "2", "--N", "60", "--M", "20", "--threads", "1",
                  "--lipschitz", "0.5", "2"], capsys)
    jsonschema.validate(doc, COVERAGE)
    assert [r["setting"] for r in doc["results"]] == [0.5, 2.0]
    src = FIXTURES / "geo_source.csv"
    _, doc = run(["evaluate", "--source", str(src), "--target", str(FIXTURES / "geo_target.csv"),
                  "--metric", "haversine", "--lipschitz", "0.005", "--seeds", "3",
                  "--subsample", "0.5", "--methods", "lipschitz,ols", "--threads", "1",
                  "--csv", str(tmp_path / "e.csv")], capsys)
    jsonschema.validate(doc, COVERAGE)
    assert {r["extra"]["protocol"] for r in doc["results"]} == {"difference", "point"}
    assert (tmp_path / "e.csv").exists()


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "lipci", "ci", *GEO, "--lipschitz", "-2"],
                          capture_output=True, text=True)
    assert proc.returncode == 2
    assert json.loads(proc.stdout)["error"]["code"] == "invalid-lipschitz"
