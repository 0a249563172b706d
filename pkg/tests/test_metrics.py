import numpy as np
import pytest

from topocl.errors import IncompleteMatrix, UndefinedForSingleTask
from topocl.metrics import (
    ExperimentReport,
    aggregate_reports,
    compute_acc,
    compute_bwt,
    format_table,
    mean_std,
    read_aggregate,
    read_matrix_csv,
    read_report,
    write_aggregate,
    write_report,
)

nan = np.nan


def test_acc_examples():
    assert compute_acc([[0.9]]) == 0.9
    assert compute_acc([[0.9, nan], [0.8, 0.85]]) == pytest.approx(0.825, abs=1e-15)
    assert compute_acc([[0.5, nan], [0.0, 0.0]]) == 0.0


def test_bwt_examples():
    assert compute_bwt([[0.9, nan], [0.8, 0.85]]) == pytest.approx(-0.1, abs=1e-12)
    assert compute_bwt([[0.7, nan], [0.7, 0.6]]) == 0.0


def test_hand_built_3x3():
    R = [[0.95, nan, nan],
         [0.90, 0.93, nan],
         [0.85, 0.88, 0.91]]
    # ACC = (0.85 + 0.88 + 0.91) / 3 = 0.88
    # BWT = ((0.85 - 0.95) + (0.88 - 0.93)) / 2 = -0.075
    assert abs(compute_acc(R) - 0.88) < 1e-12
    assert abs(compute_bwt(R) + 0.075) < 1e-12


def test_bwt_single_task_raises():
    with pytest.raises(UndefinedForSingleTask):
        compute_bwt([[0.9]])


def test_incomplete():
    with pytest.raises(IncompleteMatrix):
        compute_acc([[0.9, nan], [0.8, nan]])
    with pytest.raises(IncompleteMatrix):
        compute_bwt([[nan, nan], [0.8, 0.9]])
    with pytest.raises(IncompleteMatrix):
        compute_acc([[0.9, 0.1]])


def _report(seed=0, R=None):
    R = np.array([[0.95, nan, nan], [0.9, 0.93, nan], [0.85, 0.88, 0.91]]) if R is None else R
    return ExperimentReport("top-ring", R, compute_acc(R), compute_bwt(R), [[1.0, 0.5], [0.7]],
                            {"lam": 1.0}, seed, 3.2, 12)


def test_json_round_trip(tmp_path):
    rep = _report()
    write_report(rep, tmp_path / "r.json")
    back = read_report(tmp_path / "r.json")
    np.testing.assert_array_equal(np.isnan(back.R), np.isnan(rep.R))
    np.testing.assert_array_equal(np.nan_to_num(back.R), np.nan_to_num(rep.R))
    assert back.acc == rep.acc and back.bwt == rep.bwt
    assert abs(compute_acc(back.R) - rep.acc) < 1e-12
    assert abs(compute_bwt(back.R) - rep.bwt) < 1e-12
    assert back.curves == rep.curves and back.decompositions == 12 and back.method == "top-ring"
    assert "wall_clock" not in (tmp_path / "r.json").read_text()
    write_report(rep, tmp_path / "t.json", include_timing=True)
    assert read_report(tmp_path / "t.json").wall_clock == 3.2


def test_csv_round_trip(tmp_path):
    rep = _report()
    write_report(rep, tmp_path / "r.csv", format="csv")
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert len(lines) == rep.num_tasks + 1
    assert lines[0] == "after_task,task_1,task_2,task_3"
    back = read_matrix_csv(tmp_path / "r.csv")
    np.testing.assert_array_equal(np.nan_to_num(back, nan=-1), np.nan_to_num(rep.R, nan=-1))


def test_unknown_format(tmp_path):
    with pytest.raises(ValueError):
        write_report(_report(), tmp_path / "x", format="yaml")


def test_mean_std_reference():
    vals = [0.7, 0.72, 0.69, 0.75, 0.71]
    m, s = mean_std(vals)
    ref_m = sum(vals) / 5
    ref_s = (sum((v - ref_m) ** 2 for v in vals) / 4) ** 0.5
    assert abs(m - ref_m) < 1e-15 and abs(s - ref_s) < 1e-15
    m1, s1 = mean_std([0.5])
    assert m1 == 0.5 and np.isnan(s1)


def test_aggregate_file(tmp_path):
    reps = [_report(seed=s, R=np.array([[0.9, nan], [0.8 + 0.01 * s, 0.85]])) for s in range(3)]
    mt = ExperimentReport("multitask", np.array([[nan, nan], [0.9, 0.9]]), 0.9, None)
    rows = aggregate_reports({"top-ring": reps, "multitask": [mt]})
    write_aggregate(rows, tmp_path / "agg.csv")
    back = read_aggregate(tmp_path / "agg.csv")
    assert back[0]["n"] == 3
    assert back[0]["acc_mean"] == rows[0]["acc_mean"]
    assert abs(back[0]["acc_std"] - np.std([r.acc for r in reps], ddof=1)) < 1e-15
    assert np.isnan(back[1]["bwt_mean"])
    table = format_table(rows)
    assert "+-" in table and "--" in table
