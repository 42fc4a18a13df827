import csv
import json
import math

import pytest

from haropt import bench
from haropt.bench import BenchRecord, performance_profile, scaled_geometric_means, shifted_geometric_mean
from haropt.cli import cli_main


def rec(method, problem, n_H, solved=True):
    return BenchRecord(method, problem, solved, n_H, n_H, n_H, 0.1 * n_H, n_H)


def test_sgm_examples():
    assert shifted_geometric_mean([2, 8], 1) == pytest.approx(math.sqrt(27) - 1, abs=1e-12)
    assert shifted_geometric_mean([2, 8], 1) == pytest.approx(4.1962, abs=1e-4)
    assert shifted_geometric_mean([7, 7, 7], 50) == pytest.approx(7)
    assert shifted_geometric_mean([0, 0], 0.0 + 1) == pytest.approx(0)
    with pytest.raises(ValueError):
        shifted_geometric_mean([], 1)


def test_sgm_sentinel_for_failures():
    rows = scaled_geometric_means([rec("A", "p1", 10), rec("A", "p2", 3, solved=False)])
    (row,) = rows
    assert row.K == 1 and row.total == 2
    assert row.k_H == pytest.approx(math.sqrt(60 * 20050) - 50)
    assert row.k_H == pytest.approx(1046.8, abs=0.1)
    assert row.t_G == pytest.approx(math.sqrt(2 * 20001) - 1)
    with pytest.raises(ValueError):
        scaled_geometric_means([])


def test_profile_two_methods():
    prof = performance_profile([rec("A", "p1", 1), rec("B", "p1", 2), rec("A", "p2", 4), rec("B", "p2", 2)])
    for m in ("A", "B"):
        assert prof.fraction(m, 0) == 0.5
        assert prof.fraction(m, 1) == 1.0
    lines = prof.to_tsv().splitlines()
    assert lines[0] == "method\texponent\tfraction"


def test_profile_single_and_never_solving():
    prof = performance_profile([rec("A", "p1", 3), rec("A", "p2", 9)])
    assert prof.fraction("A", 0) == 1.0
    prof = performance_profile([rec("A", "p1", 3), rec("B", "p1", 1, solved=False),
                                rec("A", "p2", 1, solved=False), rec("B", "p2", 1, solved=False)])
    assert prof.fraction("B", 50) == 0.0
    # unsolved problems stay in the denominator
    assert prof.fraction("A", 50) == 0.5


def test_parse_spec_expansion():
    spec = bench.parse_spec("""
[defaults]
H0 = 1e-3
max_iters = 50
[matrix]
solvers = HAR, HAR-S(5)
problems = rosenbrock_2d, synthetic:seed=3,N=40,n=5
repetitions = 2
[cell x]
solver = ARC
problem = beale
alpha = 3
""")
    assert len(spec.cells) == 2 * 2 * 2 + 1
    assert spec.defaults == {"H0": 1e-3, "max_iters": 50}
    assert spec.cells[-1].overrides == (("alpha", 3.0),)
    assert {c.problem for c in spec.cells} == {"rosenbrock_2d", "synthetic:seed=3,N=40,n=5", "beale"}
    with pytest.raises(bench.SpecError):
        bench.parse_spec("[matrix]\nsolvers = HAR\nproblems = beale\n[defaults]\nbogus = 1\n")
    with pytest.raises(bench.SpecError):
        bench.parse_spec("[matrix]\nsolvers = NEWTON\nproblems = beale\n")


def test_run_matrix_single_cell(tmp_path):
    spec = bench.parse_spec("[defaults]\nmax_iters = 200\n[matrix]\nsolvers = HAR\nproblems = rosenbrock_2d\n")
    (out,) = bench.run_matrix(spec, tmp_path)
    assert len(list((tmp_path / "traces").glob("*.csv"))) == 1
    assert len(list((tmp_path / "summaries").glob("*.json"))) == 1
    with open(tmp_path / "traces" / f"{out.cell.cell_id}.csv") as fh:
        rows = list(csv.reader(fh))
    # one row per iteration plus the header
    assert len(rows) == out.result.iterations + 1
    summary = json.loads((tmp_path / "summaries" / f"{out.cell.cell_id}.json").read_text())
    assert summary["solved"] and summary["status"] == "GradientTolerance"


def test_repetitions_are_identical(tmp_path):
    spec = bench.parse_spec("[matrix]\nsolvers = HAR-C(3)\nproblems = synthetic:seed=5,N=60,n=6\nrepetitions = 3\n")
    outs = bench.run_matrix(spec, tmp_path)
    tables = []
    for o in outs:
        with open(tmp_path / "traces" / f"{o.cell.cell_id}.csv") as fh:
            rows = list(csv.DictReader(fh))
        tables.append([{k: v for k, v in r.items() if k != "wall_time_s"} for r in rows])
    # every column except wall-clock time is bit-stable
    assert tables[0] == tables[1] == tables[2]
    assert len(tables[0]) == outs[0].result.iterations


def test_failing_cell_is_recorded(tmp_path, capsys):
    spec_path = tmp_path / "spec.ini"
    spec_path.write_text("[matrix]\nsolvers = HAR\nproblems = beale, libsvm:missing.txt\n")
    rc = cli_main(["run", "--spec", str(spec_path), "--out", str(tmp_path / "out")])
    assert rc == 0
    index = json.loads((tmp_path / "out" / "index.json").read_text())
    statuses = {r["problem"]: r["status"] for r in index["runs"]}
    assert statuses["libsvm:missing.txt"] == "Error"
    assert statuses["beale"] == "GradientTolerance"


def test_cli_compare_and_profile(tmp_path, capsys):
    spec_path = tmp_path / "spec.ini"
    spec_path.write_text("[defaults]\nmax_iters = 300\n[matrix]\nsolvers = HAR, ARC\nproblems = beale, himmelblau\n")
    out = tmp_path / "out"
    assert cli_main(["run", "--spec", str(spec_path), "--out", str(out)]) == 0
    assert cli_main(["compare", "--out", str(out)]) == 0
    assert (out / "sgm.csv").read_text().startswith("method,K,total")
    assert cli_main(["profile", "--out", str(out), "--metric", "n_H"]) == 0
    assert (out / "profile_n_H.tsv").is_file()


def test_cli_exit_codes(tmp_path, capsys):
    assert cli_main(["check", "--instances", "10"]) == 0
    missing = tmp_path / "nope.ini"
    assert cli_main(["run", "--spec", str(missing), "--out", str(tmp_path)]) == 1
    assert str(missing) in capsys.readouterr().err
    assert cli_main(["profile", "--out", str(tmp_path / "empty")]) == 1
    assert "no results found" in capsys.readouterr().err
    assert cli_main(["compare", "--bogus"]) == 1
    assert cli_main([]) == 1
