import math

import numpy as np
import pytest

from oppsyn.pattern import ConverterProblem, Harmonic
from oppsyn.relaxation import assemble
from oppsyn.sdp import compile as sdp_compile, solve
from oppsyn.sdpa import ParseError, export_sdpa, import_sdpa, import_solution, validate_sdpa

from test_sdp import analytic_2x2


class TestRoundTrip:
    def test_analytic_2x2(self, tmp_path):
        cp = analytic_2x2()
        path = tmp_path / "tiny.dat-s"
        export_sdpa(cp, path)
        cp2 = import_sdpa(path)
        assert cp2.nvar == 1
        sol = solve(cp2, tol=1e-9)
        assert sol.primal_objective == pytest.approx(1.0, abs=1e-6)

    def test_moment_problem_round_trip(self, tmp_path):
        prob = ConverterProblem((-1.0, 0.0, 1.0), 1, math.pi / 100,
                                (Harmonic(1, 0.5, 0.5),))
        cp = sdp_compile(assemble(prob, 1))
        ref = solve(cp, tol=1e-8)
        path = tmp_path / "m.dat-s"
        export_sdpa(cp, path)
        cp2 = import_sdpa(path)
        assert cp2.nvar == cp.nvar
        assert cp2.n_eq == cp.n_eq
        sol = solve(cp2, tol=1e-8)
        assert sol.p_beta == pytest.approx(ref.p_beta, abs=1e-7)

    def test_block_count_structure(self, tmp_path):
        prob = ConverterProblem((-1.0, 0.0, 1.0), 1, math.pi / 100,
                                (Harmonic(1, 0.5, 0.5),))
        cp = sdp_compile(assemble(prob, 1))
        path = tmp_path / "m.dat-s"
        export_sdpa(cp, path)
        header = [l for l in open(path) if "nBLOCK" in l][0]
        n_blocks = int(header.split("=")[0].strip())
        # one block per measure matrix/localizer plus the equality diagonal
        assert n_blocks == len(cp.blocks) + 1

    def test_schema_validation(self, tmp_path):
        prob = ConverterProblem((-1.0, 0.0, 1.0), 1, math.pi / 100,
                                (Harmonic(1, 0.5, 0.5),))
        cp = sdp_compile(assemble(prob, 1))
        path = tmp_path / "m.dat-s"
        export_sdpa(cp, path)
        info = validate_sdpa(path)
        assert info["variables"] == cp.nvar
        assert info["equalities"] == cp.n_eq
        assert info["max_side"] >= 2


class TestParseErrors:
    def test_malformed_entry_reports_line(self, tmp_path):
        path = tmp_path / "bad.dat-s"
        path.write_text("1 = mDIM\n1 = nBLOCK\n(2) = bLOCKsTRUCT\n{1.0}\n1 1 1\n")
        with pytest.raises(ParseError) as err:
            import_sdpa(path)
        assert "line 5" in str(err.value)

    def test_out_of_range_block(self, tmp_path):
        path = tmp_path / "bad.dat-s"
        path.write_text("1 = mDIM\n1 = nBLOCK\n(2) = bLOCKsTRUCT\n{1.0}\n1 7 1 1 2.0\n")
        with pytest.raises(ParseError):
            import_sdpa(path)

    def test_truncated_header(self, tmp_path):
        path = tmp_path / "bad.dat-s"
        path.write_text("3 = mDIM\n")
        with pytest.raises(ParseError):
            import_sdpa(path)


class TestSolutionImport:
    def test_parse_result_file(self, tmp_path):
        path = tmp_path / "out.result"
        path.write_text(
            "phase.value  = pdOPT\n"
            "objValPrimal = 1.234500e+00\n"
            "xVec = \n{+1.000000e+00, -2.500000e-01}\n"
        )
        doc = import_solution(path)
        assert doc["status"] == "optimal"
        assert doc["objective"] == pytest.approx(1.2345)
        assert np.allclose(doc["x"], [1.0, -0.25])

    def test_missing_xvec(self, tmp_path):
        path = tmp_path / "out.result"
        path.write_text("phase.value = pdOPT\n")
        with pytest.raises(ParseError):
            import_solution(path)
