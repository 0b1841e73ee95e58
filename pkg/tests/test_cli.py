import csv
import io
import json

import numpy as np
import pytest

from graph_newton.cli import main
from graph_newton.problem_io import load_problem

from test_problem_io import SIMPLE


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


@pytest.fixture
def problem(tmp_path):
    p = tmp_path / "prob.json"
    p.write_text(json.dumps(SIMPLE))
    return p


def test_solve_file(capsys, problem, tmp_path):
    out = tmp_path / "x.json"
    code, text, err = run(capsys, "solve", str(problem), "--out", str(out))
    assert code == 0 and "status=converged" in err
    rows = list(csv.reader(io.StringIO(text)))
    assert rows[0] == ["iter", "objective", "grad_inf", "eta", "mu", "kkt_residual", "ms"]
    assert json.loads(out.read_text())["x"] == [0.0]


def test_solve_preset_trace_and_kkt(capsys, tmp_path):
    trace, mtx = tmp_path / "t.csv", tmp_path / "k.mtx"
    code, _, _ = run(capsys, "solve", "--preset", "pendulum-swingup", "--n", "8", "--solver", "dense",
                     "--trace", str(trace), "--export-kkt", str(mtx))
    assert code == 0
    assert trace.read_text().startswith("iter,objective")
    assert mtx.read_text().startswith("%%MatrixMarket matrix coordinate real symmetric")


def test_solve_max_iter_exit_code(capsys):
    code, _, err = run(capsys, "solve", "--preset", "pendulum-swingup", "--max-iter", "2")
    assert code == 2 and "max_iter" in err


def test_malformed_problem_exit_code(capsys, tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{oops")
    code, _, err = run(capsys, "solve", str(p))
    assert code == 1 and err.startswith("error:")


def test_decompose(capsys):
    code, text, _ = run(capsys, "decompose", "--preset", "lqr-mimo", "--n", "12", "--check-separation")
    doc = json.loads(text)
    assert code == 0 and doc["width"] == 2 and doc["separation_ok"]
    assert doc["widths"] == {"min-fill": 2, "min-degree": 2}
    assert len(doc["edges"]) == len(doc["bags"]) - 1


def test_bench(capsys, monkeypatch):
    monkeypatch.setenv("GRAPH_NEWTON_THREADS", "1")
    code, text, err = run(capsys, "bench", "--family", "random-tree", "--n", "8,16", "--reps", "1",
                          "--parallel")
    rows = list(csv.DictReader(io.StringIO(text)))
    assert code == 0 and len(rows) == 4
    assert {r["solver"] for r in rows} == {"tree", "dense"}
    assert "log-log slope" in err


def test_bench_bad_thread_env(capsys, monkeypatch):
    monkeypatch.setenv("GRAPH_NEWTON_THREADS", "zero")
    code, _, err = run(capsys, "bench", "--n", "8", "--reps", "1", "--no-optimize")
    assert code == 1 and "GRAPH_NEWTON_THREADS" in err


def test_compare_ddp(capsys):
    code, text, _ = run(capsys, "compare-ddp", "--preset", "pendulum-swingup", "--n", "6")
    rows = list(csv.reader(io.StringIO(text)))
    assert code == 0
    assert rows[0][:3] == ["iter", "newton_objective", "newton_grad_inf"]
    assert "ilqr_objective" in rows[0] and "stagewise-newton_grad_inf" in rows[0]
    # stagewise Newton reproduces the Newton column
    i, j = rows[0].index("newton_objective"), rows[0].index("stagewise-newton_objective")
    for r in rows[1:]:
        if r[i] and r[j]:
            assert float(r[i]) == pytest.approx(float(r[j]), rel=1e-10)


def test_export_round_trip(capsys, tmp_path):
    out = tmp_path / "p.json"
    code, _, _ = run(capsys, "export", "--preset", "lqr-scalar", "--n", "3", "--out", str(out))
    g, x = load_problem(out)
    assert code == 0 and g.input_ids == ("u0", "u1", "u2") and not np.any(x["u0"])
