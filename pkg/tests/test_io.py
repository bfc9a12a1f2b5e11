import json

import numpy as np
import pytest

from bilinopt import io
from bilinopt.systems import Trajectory, random_system, simulate


def _traj(seed=0, L=7, n=2, m=2):
    sys_ = random_system(n, m, seed)
    gen = np.random.default_rng(seed)
    return simulate(sys_, gen.standard_normal(n) * 0.3,
                    gen.uniform(-0.5, 0.5, (L, m)))


def test_dataset_roundtrip_byte_identical(tmp_path):
    traj = _traj()
    p1 = tmp_path / "a.csv"
    p2 = tmp_path / "b.csv"
    io.write_dataset_csv(p1, traj)
    back = io.read_dataset_csv(p1)
    io.write_dataset_csv(p2, back)
    assert p1.read_bytes() == p2.read_bytes()
    np.testing.assert_array_equal(traj.states, back.states)
    np.testing.assert_array_equal(traj.inputs, back.inputs)


def test_dataset_header_and_final_row(tmp_path):
    traj = _traj(L=3, n=1, m=2)
    p = tmp_path / "d.csv"
    io.write_dataset_csv(p, traj)
    lines = p.read_text().splitlines()
    assert lines[0] == "t,u_1,u_2,x_1"
    assert len(lines) == 1 + 3 + 1
    assert lines[-1].startswith("3,,,")  # final row: state only


def test_read_malformed_files(tmp_path):
    p = tmp_path / "bad.csv"

    p.write_text("")
    with pytest.raises(io.DatasetFormatError, match="empty"):
        io.read_dataset_csv(p)

    p.write_text("a,b,c\n1,2,3\n")
    with pytest.raises(io.DatasetFormatError, match="header"):
        io.read_dataset_csv(p)

    # truncated: only one data row
    p.write_text("t,u_1,x_1\n0,0.1,0.2\n")
    with pytest.raises(io.DatasetFormatError, match="2 data rows"):
        io.read_dataset_csv(p)

    # wrong cell count, diagnostic names the row
    p.write_text("t,u_1,x_1\n0,0.1,0.2\n1,0.3\n")
    with pytest.raises(io.DatasetFormatError, match="row 3"):
        io.read_dataset_csv(p)

    # non-numeric cell
    p.write_text("t,u_1,x_1\n0,zzz,0.2\n1,,0.3\n")
    with pytest.raises(io.DatasetFormatError, match="non-numeric"):
        io.read_dataset_csv(p)

    # wrong time index
    p.write_text("t,u_1,x_1\n0,0.1,0.2\n5,,0.3\n")
    with pytest.raises(io.DatasetFormatError, match="'t'"):
        io.read_dataset_csv(p)

    # final row must have empty inputs
    p.write_text("t,u_1,x_1\n0,0.1,0.2\n1,0.4,0.3\n")
    with pytest.raises(io.DatasetFormatError, match="final row"):
        io.read_dataset_csv(p)


def test_json_deterministic(tmp_path):
    obj = {"b": 1, "a": [1.5, 2.25], "c": {"y": None, "x": "s"}}
    p1 = tmp_path / "a.json"
    p2 = tmp_path / "b.json"
    io.write_json(p1, obj)
    io.write_json(p2, json.loads(p1.read_text()))
    assert p1.read_bytes() == p2.read_bytes()
    assert p1.read_text().endswith("\n")


def test_jsonl(tmp_path):
    rows = [{"t": 0, "rank_after": 1}, {"t": 1, "rank_after": 2}]
    p = tmp_path / "log.jsonl"
    io.write_jsonl(p, rows)
    lines = p.read_text().splitlines()
    assert [json.loads(s) for s in lines] == rows


def test_trace_csv(tmp_path):
    trace = [{"k": 0, "cost": 1.5, "violation": 1e-9, "step_norm": 0.1,
              "subproblem_iters": 12}]
    p = tmp_path / "trace.csv"
    io.write_trace_csv(p, trace)
    lines = p.read_text().splitlines()
    assert lines[0] == "k,cost,violation,step_norm,subproblem_iters"
    assert lines[1].startswith("0,1.5,")


def test_gnuplot_dat(tmp_path):
    p = tmp_path / "c.dat"
    io.write_gnuplot_dat(p, {"t": np.array([0.0, 1.0]),
                             "x": np.array([2.5, -3.5])})
    lines = p.read_text().splitlines()
    assert lines[0] == "# t x"
    assert lines[1] == "0.0 2.5"
    with pytest.raises(ValueError):
        io.write_gnuplot_dat(p, {"a": np.zeros(2), "b": np.zeros(3)})
