import csv
import io

import numpy as np
import pytest

from curvopt.cli import (
    BENCH_COLUMNS,
    EXIT_INVALID,
    EXIT_OK,
    EXIT_UNCONVERGED,
    BenchRow,
    bench_csv,
    bench_markdown,
    main,
    parse_config,
    parse_degrees,
)
from curvopt.fileio import read_mesh, read_vtk, write_mesh
from curvopt.mesh import generate_structured_mesh


def read_csv(path):
    return list(csv.DictReader(io.StringIO(path.read_text())))


def test_generate_equal_node_counts_and_determinism(tmp_path):
    args = ["generate", "--dim", "2", "--resolution", "8", "--degree", "1,2,4,8"]
    assert main(args + ["--out", str(tmp_path / "a")]) == EXIT_OK
    assert main(args + ["--out", str(tmp_path / "b")]) == EXIT_OK
    files = sorted((tmp_path / "a").glob("*.txt"))
    assert [f.name for f in files] == [f"mesh_2d_p{p}.txt" for p in (1, 2, 4, 8)]
    assert {read_mesh(f).n_nodes for f in files} == {81}
    for f in files:
        assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()


def test_generate_3d(tmp_path):
    assert main(["generate", "--dim", "3", "--resolution", "4", "--degree", "1,2,4", "--out", str(tmp_path)]) == 0
    assert {read_mesh(f).n_nodes for f in tmp_path.glob("*.txt")} == {125}


def test_optimize_specific_line_degree_two(tmp_path):
    code = main(
        ["optimize", "--metric", "Line", "--degree", "2", "--resolution", "8", "--mode", "specific", "--out", str(tmp_path)]
    )
    assert code == EXIT_OK
    stem = tmp_path / "Line_2d_p2_specific"
    for suffix in ("_optimized.txt", "_trace.csv", "_stats.csv", "_initial.vtk", "_optimized.vtk"):
        assert stem.with_name(stem.name + suffix).exists()
    rows = {(r["state"], r["quantity"]): r for r in read_csv(stem.with_name(stem.name + "_stats.csv"))}
    assert float(rows["optimized", "shape_quality"]["min"]) > float(rows["initial", "shape_quality"]["min"])
    assert read_mesh(stem.with_name(stem.name + "_optimized.txt")).is_valid()
    vtk = read_vtk(stem.with_name(stem.name + "_optimized.vtk"))
    assert "quality" in vtk["point_data"]


def test_optimize_both_modes_meet_same_criterion(tmp_path):
    code = main(["optimize", "--metric", "Line", "--degree", "1", "--resolution", "8", "--mode", "both", "--out", str(tmp_path)])
    assert code == EXIT_OK
    traces = {m: read_csv(tmp_path / f"Line_2d_p1_{m}_trace.csv") for m in ("standard", "specific")}
    for rows in traces.values():
        assert float(rows[-1]["rms_residual"]) < 1e-4
    assert traces["standard"][-1]["matvecs"] != traces["specific"][-1]["matvecs"]
    assert list(traces["standard"][0]) == [
        "iteration", "f", "rms_residual", "alpha", "rho", "ls_iters", "cg_iters", "matvecs",
        "precon_kind", "cg_termination", "eta", "tau",
    ]


def test_optimize_unconverged_exit_code_and_trace(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# stop early\nsolver.max_nonlinear = 1\nsolver.mode = specific\n")
    code = main(["optimize", "--config", str(cfg), "--degree", "1", "--resolution", "8", "--out", str(tmp_path)])
    assert code == EXIT_UNCONVERGED
    assert len(read_csv(tmp_path / "Line_2d_p1_specific_trace.csv")) == 1


def test_optimize_from_mesh_file(tmp_path):
    path = tmp_path / "m.txt"
    write_mesh(generate_structured_mesh(2, 4, 2), path)
    assert main(["optimize", "--mesh", str(path), "--metric", "Curve", "--mode", "standard", "--out", str(tmp_path)]) == 0
    assert (tmp_path / "m_standard_optimized.txt").exists()


def test_invalid_mesh_file_rejected(tmp_path, capsys):
    path = tmp_path / "bad.txt"
    path.write_text("2 1 3 1\n0 0\n0 1\n1 0\n0 1 2\nv\nv\nv\n")
    assert main(["optimize", "--mesh", str(path)]) == EXIT_INVALID
    assert "non-positive Jacobian" in capsys.readouterr().err
    assert main(["stats", "--mesh", str(path)]) == EXIT_INVALID


@pytest.mark.parametrize(
    "argv",
    [
        ["optimize", "--metric", "Nope"],
        ["optimize", "--metric", "Plane", "--dim", "2"],
        ["optimize", "--degree", "9"],
        ["optimize", "--degree", "3", "--resolution", "8"],
        ["optimize", "--degree", "x"],
        ["optimize", "--mode", "fast"],
        ["optimize", "--metric", "no_such_module:metric"],
        ["frobnicate"],
        ["stats"],
    ],
)
def test_invalid_input_exit_code(argv, tmp_path):
    assert main(argv + ["--out", str(tmp_path)] if argv[0] != "frobnicate" else argv) == EXIT_INVALID


def test_bad_config_key(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("solver.nonsense = 3\n")
    assert main(["optimize", "--config", str(cfg), "--degree", "1", "--resolution", "2", "--out", str(tmp_path)]) == 2
    cfg.write_text("bogus = 1\n")
    assert main(["generate", "--config", str(cfg), "--out", str(tmp_path)]) == 2
    cfg.write_text("ordering.mdf = maybe\n")
    assert main(["optimize", "--config", str(cfg), "--degree", "1", "--resolution", "2", "--out", str(tmp_path)]) == 2


def test_config_parsing():
    cfg = parse_config("a = 1\n# comment\n\nls.c_max = 0.3  # trailing\n")
    assert cfg == {"a": "1", "ls.c_max": "0.3"}
    assert parse_degrees("1,2, 4 8") == [1, 2, 4, 8]
    assert parse_degrees("") == []


def test_imported_metric(tmp_path, monkeypatch):
    (tmp_path / "my_metrics.py").write_text(
        "import numpy as np\n"
        "from curvopt.metric import UniformMetric\n"
        "def stretched(dim):\n"
        "    return UniformMetric(np.diag([4.0] + [1.0] * (dim - 1)))\n"
    )
    monkeypatch.syspath_prepend(str(tmp_path))
    code = main(["optimize", "--metric", "my_metrics:stretched", "--degree", "1", "--resolution", "4", "--out", str(tmp_path)])
    assert code == EXIT_OK


def test_stats_command(tmp_path, capsys):
    path = tmp_path / "m.txt"
    write_mesh(generate_structured_mesh(2, 4, 1), path)
    assert main(["stats", "--mesh", str(path), "--metric", "Line"]) == EXIT_OK
    out = capsys.readouterr().out
    assert out.startswith("measure,min,max,mean,std\n") and "shape_quality" in out


def test_bench_speedup_arithmetic():
    row = BenchRow("Line", 1, {"standard": 1, "specific": 1}, {"standard": 0, "specific": 0},
                   {"standard": 1646, "specific": 113}, {"standard": True, "specific": True})
    assert row.speedup == 1646 / 113
    assert "| 14.57 |" in bench_markdown([row])
    assert bench_csv([row]).split("\n")[1].split(",")[-1] == repr(1646 / 113)


def test_bench_marks_failed_and_unconverged_cells():
    row = BenchRow("Curves", 4, {"standard": 9}, {"standard": 3}, {"standard": 100}, {"standard": False})
    line = bench_markdown([row]).strip().split("\n")[-1]
    assert "9*" in line and "failed" in line


def test_bench_empty_degree_list(tmp_path):
    assert main(["bench", "--degree", "", "--out", str(tmp_path)]) == EXIT_OK
    assert (tmp_path / "bench.csv").read_text() == ",".join(BENCH_COLUMNS) + "\n"


def test_bench_small_run_is_deterministic(tmp_path):
    args = ["bench", "--metric", "Line", "--degree", "1", "--resolution", "4"]
    assert main(args + ["--out", str(tmp_path / "a")]) == EXIT_OK
    assert main(args + ["--out", str(tmp_path / "b")]) == EXIT_OK
    a = (tmp_path / "a" / "bench.csv").read_text()
    assert a == (tmp_path / "b" / "bench.csv").read_text()
    row = read_csv(tmp_path / "a" / "bench.csv")[0]
    assert float(row["speedup"]) == pytest.approx(int(row["MV-std"]) / int(row["MV-spec"]), rel=1e-15)
    assert np.isfinite(float(row["speedup"]))
