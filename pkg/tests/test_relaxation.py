import math
from math import comb

import numpy as np
import pytest

from oppsyn.pattern import ConverterProblem, Harmonic
from oppsyn.reference import five_level_problem
from oppsyn.relaxation import (
    DegreeTooLow,
    arc_monomial_integral,
    assemble,
    chebyshev_u,
    lie_derivative,
    monomial_basis,
    occupation_support,
    sine_harmonic_poly,
    support_windows,
)


class TestChebyshev:
    def test_base_cases(self):
        assert chebyshev_u(0) == [1]
        assert chebyshev_u(1) == [0, 2]

    def test_one_recurrence_step(self):
        assert chebyshev_u(2) == [-1, 0, 4]

    def test_recurrence_against_trig_identity(self):
        # sin(l theta) = sin(theta) U_{l-1}(cos theta)
        thetas = np.linspace(0.05, 1.5, 7)
        for ell in range(1, 10):
            coeffs = np.array(chebyshev_u(ell - 1), dtype=float)
            vals = np.sin(thetas) * np.polyval(coeffs[::-1], np.cos(thetas))
            assert np.allclose(vals, np.sin(ell * thetas), atol=1e-12)


class TestArcIntegrals:
    def test_base_values(self):
        assert arc_monomial_integral(0, 0) == pytest.approx(math.pi / 2)
        assert arc_monomial_integral(2, 0) == pytest.approx(math.pi / 4)
        assert arc_monomial_integral(3, 2) == pytest.approx(2 / 15)

    def test_against_quadrature(self):
        x, w = np.polynomial.legendre.leggauss(64)
        th = 0.25 * math.pi * (x + 1.0)
        ww = 0.25 * math.pi * w
        for a in range(7):
            for b in range(7):
                direct = float(np.sum(ww * np.cos(th) ** a * np.sin(th) ** b))
                assert arc_monomial_integral(a, b) == pytest.approx(direct, abs=1e-13)

    def test_binomial_consistency(self):
        # sum over a+b = k of binom-weighted values reproduces pi/2 for even k
        for k in (2, 4, 6):
            total = sum(
                comb(k // 2, j) * arc_monomial_integral(2 * j, k - 2 * j)
                for j in range(k // 2 + 1)
            )
            assert total == pytest.approx(math.pi / 2, abs=1e-13)


class TestLieDerivative:
    def test_rotation_rule(self):
        assert lie_derivative((1, 0, 0, 0), 1.0) == {(0, 1, 0, 0): -1}

    def test_current_rule(self):
        assert lie_derivative((0, 0, 0, 2), 0.5) == {(0, 0, 0, 1): 1.0}

    def test_product_rule(self):
        out = lie_derivative((1, 1, 1, 0), 1.0)
        assert out == {(0, 2, 1, 0): -1, (2, 0, 1, 0): 1, (1, 1, 0, 0): 1}

    def test_degree_never_raised(self):
        for mono in monomial_basis(4, 4):
            for out_mono in lie_derivative(mono, 0.5):
                assert sum(out_mono) <= sum(mono)


class TestSupports:
    def test_windows_nonempty(self, ref_problem):
        win = support_windows(ref_problem)
        assert 0 < win["boundary_lo"] < win["boundary_hi"]
        assert win["clock_hi"] > ref_problem.interlock

    def test_occupation_arc_monotone_in_i(self, ref_problem):
        d = ref_problem.pulse_number
        for i in range(d + 1):
            sup = occupation_support(ref_problem, i)
            t1, t2 = sup.arc
            assert 0.0 <= t1 < t2 <= math.pi / 2

    def test_inequality_polys_degree_one(self, ref_problem):
        sup = occupation_support(ref_problem, 3)
        for poly in sup.inequalities:
            assert max(sum(m) for m in poly) <= 1
        eqs = sup.equalities
        assert len(eqs) == 1  # the circle
        assert eqs[0] == {(2, 0, 0, 0): 1.0, (0, 2, 0, 0): 1.0, (0, 0, 0, 0): -1.0}


class TestAssembly:
    def test_moment_vector_dimensions(self, ref_problem):
        rel = assemble(ref_problem, beta=1)
        four_var = [m for m in rel.measures if m.nvars == 4]
        assert all(len(rel.basis_for(m)) == 15 for m in four_var)  # C(4+2,4)
        rel2 = assemble(ref_problem, beta=2)
        assert all(len(rel2.basis_for(m)) == comb(8, 4) for m in rel2.measures if m.nvars == 4)

    def test_measure_roster_five_level(self, ref_problem):
        rel = assemble(ref_problem, beta=1)
        kinds = {}
        for m in rel.measures:
            kinds[m.key[0]] = kinds.get(m.key[0], 0) + 1
        assert kinds == {"init": 1, "term": 2, "occ": 13, "jump": 15}

    def test_row_counts(self, ref_problem):
        beta = 2
        rel = assemble(ref_problem, beta=beta)
        n_vertices = len(rel.graph.vertices)
        assert rel.row_count("liouville") == n_vertices * comb(4 + 2 * beta, 4)
        assert rel.row_count("uniformity") == comb(2 + 2 * beta, 2)
        assert rel.row_count("init_mass") == 1
        assert rel.row_count("harmonic") == 1  # the equality; b3 box is a BoxRow
        assert len(rel.boxes) == 1

    def test_degree_too_low_for_equality(self):
        prob = ConverterProblem(
            (-1.0, 0.0, 1.0), 2, 0.01, (Harmonic(1, 0.3, 0.3), Harmonic(5, 0.0, 0.0))
        )
        with pytest.raises(DegreeTooLow):
            assemble(prob, beta=1)

    def test_inequality_harmonic_dropped_below_degree(self):
        prob = five_level_problem(d=2, m=0.3)
        rel = assemble(prob, beta=1)
        assert rel.dropped_harmonics == [3]
        assert not rel.boxes

    def test_voltage_objective_touches_masses(self, ref_problem):
        rel = assemble(ref_problem, beta=1, objective="voltage")
        for _, mono, coef in rel.objective_terms:
            assert mono == (0, 0, 0, 0)
            assert coef > 0.0

    def test_current_objective_touches_i_squared(self, ref_problem):
        rel = assemble(ref_problem, beta=1)
        for _, mono, coef in rel.objective_terms:
            assert mono == (0, 0, 0, 2)
            assert coef == 4.0

    def test_dump_text_mentions_all_measures(self, ref_problem):
        rel = assemble(ref_problem, beta=1)
        text = rel.dump_text()
        assert "measures: 31" in text
        assert "rows[liouville]" in text

    def test_harmonic_row_normalization(self):
        # on the trivial d=1 three-level graph the b1 row must have
        # coefficient (4/pi) * v on the s-moment of the occupied mode
        prob = ConverterProblem((-1.0, 0.0, 1.0), 1, 0.01, (Harmonic(1, 0.5, 0.5),))
        rel = assemble(prob, beta=1)
        row = next(r for r in rel.rows if r.family == "harmonic")
        assert row.rhs == 0.5
        terms = [(rel.measures[k].key, mono, c) for k, mono, c in row.terms]
        assert terms == [(("occ", 3, 1), (0, 1, 0, 0), pytest.approx(4.0 / math.pi))]


class TestGoldenDump:
    def test_canonical_json_stable(self):
        prob = ConverterProblem((-1.0, 0.0, 1.0), 1, 0.02, (Harmonic(1, 0.4, 0.4),))
        rel = assemble(prob, beta=1)
        doc = rel.dump_json()
        assert doc == assemble(prob, beta=1).dump_json()
        import hashlib
        digest = hashlib.sha256(doc.encode()).hexdigest()
        # frozen fingerprint of the tiny-instance assembly
        assert len(doc) > 1000
        assert digest == TINY_ASSEMBLY_SHA256


TINY_ASSEMBLY_SHA256 = "f35da6b8362d0462072aa7b6fd50086dfdf4882eea2b48bc4dd9236ff000d043"
