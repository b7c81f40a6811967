import math
from math import comb

import numpy as np
import pytest
import scipy.sparse as sp

from oppsyn.pattern import ConverterProblem, Harmonic, zero_mean_initial_current
from oppsyn.reference import five_level_problem
from oppsyn.relaxation import assemble
from oppsyn.oracle import (
    JumpPattern,
    brute_force_best,
    complete_moments,
    trajectory_moments,
)
from oppsyn.sdp import (
    BlockSpec,
    ConicProblem,
    GroupSpec,
    bound_to_q,
    compile as sdp_compile,
    solve,
    solve_hierarchy,
)

from conftest import random_feasible_sequence


def three_level(d=1, m=0.6):
    return ConverterProblem((-1.0, 0.0, 1.0), d, math.pi / 100, (Harmonic(1, m, m),))


def analytic_2x2(init=2.0):
    g = GroupSpec(key=("x",), kind="free", start=0, basis=((0,),), index={(0,): 0})
    blk = BlockSpec(
        label="lmi", group=0, side=2,
        rows=np.array([0, 1], dtype=np.int32), cols=np.array([0, 1], dtype=np.int32),
        locs=np.array([0, 0], dtype=np.int32), coefs=np.array([1.0, 1.0]),
        const=np.array([[0.0, 1.0], [1.0, 0.0]]),
    )
    return ConicProblem(
        groups=[g], blocks=[blk],
        a_mat=sp.csr_matrix((0, 1)), b_vec=np.zeros(0), c_vec=np.array([1.0]),
        row_labels=[], beta=None, relaxation=None, init_y=np.array([init]),
    )


class TestCompile:
    def test_two_var_moment_side(self, ref_problem):
        cp = sdp_compile(assemble(ref_problem, 2))
        init_moment = next(b for b in cp.blocks if b.label == "('init',):moment")
        assert init_moment.side == comb(2 + 2, 2)  # 6

    def test_four_var_sides_within_table_bound(self, ref_problem):
        for beta in (1, 2):
            cp = sdp_compile(assemble(ref_problem, beta))
            for blk in cp.blocks:
                key = cp.groups[blk.group].key
                if key[0] in ("occ", "jump") and blk.label.endswith(":moment"):
                    assert blk.side <= comb(4 + beta, 4)

    def test_localizer_degree_budget(self, ref_problem):
        beta = 2
        cp = sdp_compile(assemble(ref_problem, beta))
        for blk in cp.blocks:
            key = cp.groups[blk.group].key
            if key[0] in ("occ", "jump") and ":loc" in blk.label:
                # quotient basis of degree beta-1 over 4 variables
                assert blk.side <= comb(4 + beta - 1, 4)

    def test_every_moment_in_some_block(self, ref_problem):
        cp = sdp_compile(assemble(ref_problem, 1))
        covered = np.zeros(cp.nvar, dtype=bool)
        for blk in cp.blocks:
            sl = cp.group_slice(blk.group)
            t = blk.tensor(cp.groups[blk.group].size)
            touched = np.abs(t).sum(axis=(1, 2)) > 0
            covered[sl.start:sl.start + len(touched)] |= touched
        assert covered.all()

    def test_constructed_moments_satisfy_compiled_system(self, ref_problem):
        from conftest import random_matched_sequence

        rng = np.random.default_rng(13)
        rel = assemble(ref_problem, 2)
        cp = sdp_compile(rel)
        for _ in range(3):
            seq = random_matched_sequence(ref_problem, rng)
            jp = JumpPattern.from_sequence(seq, ref_problem)
            mm = trajectory_moments(jp, zero_mean_initial_current(seq, ref_problem),
                                    ref_problem, 2)
            y = cp.stack_from_full(complete_moments(mm, rel))
            assert np.abs(cp.a_mat @ y - cp.b_vec).max() < 1e-8
            for label, matx in cp.block_matrices(y):
                assert np.min(np.linalg.eigvalsh(matx)) > -1e-9


class TestSolve:
    def test_analytic_psd_boundary(self):
        sol = solve(analytic_2x2(), tol=1e-9)
        assert sol.status == "optimal"
        assert sol.primal_objective == pytest.approx(1.0, abs=1e-7)
        assert sol.p_beta == pytest.approx(1.0, abs=1e-7)

    def test_small_bound_sound_vs_oracle(self):
        prob = three_level(d=1, m=0.6)
        _, q_or = brute_force_best(prob, grid_step=1e-3)
        hb = solve_hierarchy(prob, 2)
        assert hb.p_beta is not None
        assert hb.q_beta <= q_or + 1e-6
        # beta=2 is essentially tight on this instance
        assert hb.q_beta == pytest.approx(q_or, abs=2e-4)

    def test_infeasible_cell(self):
        prob = five_level_problem(d=1, m=0.6)
        hb = solve_hierarchy(prob, 2)
        assert hb.status == "infeasible"

    def test_monotone_envelope(self):
        prob = three_level(d=2, m=0.3)
        qs = [solve_hierarchy(prob, b).q_beta for b in (1, 2, 3)]
        assert all(q is not None for q in qs)
        assert qs[0] <= qs[1] + 1e-7
        assert qs[1] <= qs[2] + 1e-7

    def test_determinism(self):
        prob = three_level(d=1, m=0.5)
        cp1 = sdp_compile(assemble(prob, 2))
        cp2 = sdp_compile(assemble(prob, 2))
        s1 = solve(cp1, tol=1e-8)
        s2 = solve(cp2, tol=1e-8)
        assert s1.p_beta == s2.p_beta
        assert s1.iterations == s2.iterations

    def test_voltage_objective_runs(self):
        prob = three_level(d=1, m=0.5)
        rel = assemble(prob, 1, objective="voltage")
        sol = solve(sdp_compile(rel), tol=1e-8)
        assert sol.p_beta is not None
        # voltage energy of a feasible pattern is at least pi*b1^2-ish > 0
        assert sol.p_beta > 0.1


class TestBoundToQ:
    def test_exact_fundamental(self):
        q, clamped = bound_to_q(math.pi * 0.36, 0.6)
        assert q == 0.0 and not clamped

    def test_clamp_flags(self):
        q, clamped = bound_to_q(0.5 * math.pi * 0.36, 0.6)
        assert q == 0.0 and clamped

    def test_round_trip(self):
        q, clamped = bound_to_q(math.pi * (0.01 + 0.36), 0.6)
        assert q == pytest.approx(0.1, rel=1e-12)
        assert not clamped
