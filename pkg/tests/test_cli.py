import csv
import json
import math

import pytest

from oppsyn.cli import main
from oppsyn.pattern import problem_to_dict, sequence_to_dict
from oppsyn.reference import five_level_problem, reference_pattern


@pytest.fixture()
def files(tmp_path):
    prob = five_level_problem()
    seq = reference_pattern()
    paths = {
        "problem": tmp_path / "problem.json",
        "pattern": tmp_path / "pattern.json",
        "small": tmp_path / "small.json",
        "infeasible": tmp_path / "infeasible.json",
    }
    paths["problem"].write_text(json.dumps(problem_to_dict(prob)))
    paths["pattern"].write_text(json.dumps(sequence_to_dict(seq)))
    paths["small"].write_text(json.dumps(problem_to_dict(
        five_level_problem(d=2, m=0.4, b3_box=None))))
    paths["infeasible"].write_text(json.dumps(problem_to_dict(
        five_level_problem(d=1, m=0.6))))
    return tmp_path, paths


class TestEval:
    def test_reference_report(self, files):
        tmp, p = files
        out_report = tmp / "report.json"
        out_csv = tmp / "traj.csv"
        code = main(["eval", "--pattern", str(p["pattern"]), "--problem", str(p["problem"]),
                     "--out-report", str(out_report), "--out-csv", str(out_csv),
                     "--samples", "801"])
        assert code == 0
        report = json.loads(out_report.read_text())
        assert report["feasible"] is True
        assert report["quality"] == pytest.approx(1.16004e-2, abs=1e-6)
        rows = list(csv.reader(out_csv.open()))
        assert rows[0] == ["theta", "u", "I", "I_residual"]
        assert len(rows) == 802
        assert (tmp / "traj.png").exists()

    def test_ratings_produce_tdd(self, files, tmp_path):
        tmp, p = files
        ratings = tmp_path / "ratings.json"
        ratings.write_text(json.dumps(
            {"f1": 50.0, "V_dc": 2.0, "L_load": 1e-3, "I_R": 10.0}))
        out_report = tmp_path / "report.json"
        code = main(["eval", "--pattern", str(p["pattern"]), "--problem", str(p["problem"]),
                     "--ratings", str(ratings), "--out-report", str(out_report)])
        assert code == 0
        report = json.loads(out_report.read_text())
        q = report["quality"]
        expected = q * 2.0 / (2 * math.sqrt(2) * 10.0 * 2 * math.pi * 50.0 * 1e-3)
        assert report["tdd"] == pytest.approx(expected, rel=1e-12)

    def test_bad_ratings_exit_2(self, files, tmp_path):
        tmp, p = files
        ratings = tmp_path / "ratings.json"
        ratings.write_text(json.dumps({"f1": 50.0, "bogus": 1.0}))
        code = main(["eval", "--pattern", str(p["pattern"]), "--problem", str(p["problem"]),
                     "--ratings", str(ratings), "--out-report", str(tmp_path / "r.json")])
        assert code == 2

    def test_malformed_json_exit_2(self, files, tmp_path):
        tmp, p = files
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        code = main(["eval", "--pattern", str(bad), "--problem", str(p["problem"])])
        assert code == 2

    def test_pulse_mismatch_names_both(self, files, capsys):
        tmp, p = files
        code = main(["eval", "--pattern", str(p["pattern"]), "--problem", str(p["small"])])
        assert code == 2
        err = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
        assert "8" in err["error"] and "2" in err["error"]


class TestBound:
    def test_infeasible_exit_3(self, files, tmp_path):
        tmp, p = files
        out = tmp_path / "sol.json"
        code = main(["bound", "--problem", str(p["infeasible"]), "--beta", "2",
                     "--out", str(out)])
        assert code == 3
        assert json.loads(out.read_text())["status"] == "infeasible"

    def test_bound_reports_timings_and_q(self, files, tmp_path):
        tmp, p = files
        out = tmp_path / "sol.json"
        code = main(["bound", "--problem", str(p["small"]), "--beta", "2",
                     "--out", str(out)])
        assert code == 0
        doc = json.loads(out.read_text())
        assert doc["q_beta"] > 0.0
        assert doc["timings"]["preprocess_s"] > 0.0
        assert doc["timings"]["solve_s"] > 0.0
        assert len(doc["per_degree"]) == 2

    def test_voltage_objective_flag(self, files, tmp_path):
        tmp, p = files
        out = tmp_path / "sol.json"
        code = main(["bound", "--problem", str(p["small"]), "--beta", "1",
                     "--objective", "voltage", "--out", str(out)])
        assert code == 0
        doc = json.loads(out.read_text())
        assert doc["q_beta"] is None  # the distortion map applies to current mode
        assert doc["p_beta"] > 0.0

    def test_sdpa_export_parseable(self, files, tmp_path):
        tmp, p = files
        out = tmp_path / "sol.json"
        dat = tmp_path / "prob.dat-s"
        code = main(["bound", "--problem", str(p["small"]), "--beta", "1",
                     "--sdpa-out", str(dat), "--out", str(out)])
        assert code == 0
        doc = json.loads(out.read_text())
        assert doc["status"] == "exported"
        assert doc["schema"]["variables"] > 0


class TestSynth:
    def test_synth_certificate(self, files, tmp_path):
        tmp, p = files
        out_pat = tmp_path / "rec.json"
        out_cert = tmp_path / "cert.json"
        out_trace = tmp_path / "trace.csv"
        code = main(["synth", "--problem", str(p["small"]), "--beta", "2",
                     "--out-pattern", str(out_pat), "--out-cert", str(out_cert),
                     "--out-trace", str(out_trace)])
        assert code == 0
        cert = json.loads(out_cert.read_text())
        assert cert["gap"] >= -1e-7
        assert cert["q_refined"] >= cert["q_bound"] - 1e-7
        pattern = json.loads(out_pat.read_text())
        assert len(pattern["angles"]) == 2
        trace = list(csv.reader(out_trace.open()))
        assert trace[0] == ["iteration", "objective", "max_violation"]
        assert len(trace) > 1

    def test_warm_start_fixed_point(self, files, tmp_path):
        tmp, p = files
        out_pat = tmp_path / "rec.json"
        out_cert = tmp_path / "cert.json"
        code = main(["synth", "--problem", str(p["problem"]), "--beta", "1",
                     "--warm-start", str(p["pattern"]),
                     "--out-pattern", str(out_pat), "--out-cert", str(out_cert)])
        assert code == 0
        rec = json.loads(out_pat.read_text())
        ref = json.loads(p["pattern"].read_text())
        moved = max(abs(a - b) for a, b in zip(rec["angles"], ref["angles"]))
        assert moved <= 1e-6


class TestSweep:
    def test_sweep_csv_schema(self, files, tmp_path, monkeypatch):
        tmp, p = files
        monkeypatch.setenv("OPPSYN_THREADS", "1")
        out = tmp_path / "sweep.csv"
        code = main(["sweep", "--problem-template", str(p["small"]),
                     "--d-range", "1:2", "--m-range", "0.3:0.3:0.1",
                     "--beta", "1", "--out", str(out), "--no-plot"])
        assert code == 0
        rows = list(csv.reader(out.open()))
        assert rows[0] == ["d", "M", "beta", "status", "q_bound", "q_rec",
                           "gap", "prep_s", "solve_s"]
        assert len(rows) == 3
        ds = [int(r[0]) for r in rows[1:]]
        assert ds == sorted(ds)

    def test_infeasible_cell_marked_and_figures_rendered(self, files, tmp_path, monkeypatch):
        tmp, p = files
        monkeypatch.setenv("OPPSYN_THREADS", "1")
        out = tmp_path / "sweep.csv"
        # d=1, M=0.6 with the b3 box is infeasible
        code = main(["sweep", "--problem-template", str(p["problem"]),
                     "--d-range", "1:1", "--m-range", "0.6:0.6:0.1",
                     "--beta", "2", "--out", str(out)])
        assert code == 0
        rows = list(csv.DictReader(out.open()))
        assert rows[0]["status"] == "infeasible"
        assert rows[0]["q_bound"] == ""
        assert (tmp_path / "sweep_bounds.png").exists()
        assert (tmp_path / "sweep_gaps.png").exists()


class TestGraph:
    def test_counts_json(self, files, tmp_path):
        tmp, p = files
        out = tmp_path / "counts.json"
        dot = tmp_path / "g.dot"
        code = main(["graph", "--problem", str(p["problem"]),
                     "--out-dot", str(dot), "--out-json", str(out)])
        assert code == 0
        doc = json.loads(out.read_text())
        assert doc["unipolar"]["counts"]["vertices"] == 13
        assert doc["unipolar"]["counts"]["edges"] == 15
        assert doc["multipolar"]["counts"]["terminals"] == 3
        assert dot.exists()
