import numpy as np
import pytest

from oppsyn.pattern import SwitchingSequence
from oppsyn.reference import five_level_problem, reference_pattern


@pytest.fixture(scope="session")
def ref_problem():
    return five_level_problem()


@pytest.fixture(scope="session")
def ref_pattern():
    return reference_pattern()


def quadrature_energy(seq, prob, i0, nodes=64):
    """Independent oracle: 4 * integral of I(theta)^2 over [0, pi/2] by Gauss-Legendre."""
    x, w = np.polynomial.legendre.leggauss(nodes)
    u = seq.level_values(prob)
    edges = seq.segment_edges()
    total = 0.0
    J = i0
    for i in range(len(u)):
        a, b = edges[i], edges[i + 1]
        th = 0.5 * (b - a) * x + 0.5 * (a + b)
        ww = 0.5 * (b - a) * w
        total += np.sum(ww * (J + u[i] * (th - a)) ** 2)
        J = J + u[i] * (b - a)
    return 4.0 * total


def random_matched_sequence(prob, rng, max_tries=2000):
    """Random sequence satisfying interlock geometry AND the harmonic spec.

    The last angle is solved in closed form so the fundamental equality holds
    exactly; remaining harmonic boxes filter.
    """
    import math

    from oppsyn.graph import build_graph, enumerate_paths, path_levels
    from oppsyn.pattern import check_feasibility

    g = build_graph(prob.n_levels, prob.pulse_number, prob.unipolar)
    paths = enumerate_paths(g)
    d = prob.pulse_number
    th = prob.interlock
    m = prob.modulation_index
    for _ in range(max_tries):
        path = paths[rng.integers(len(paths))]
        levels = path_levels(path)
        u = np.array([prob.level(n) for n in levels])
        du = np.diff(u)
        slack = np.pi / 2 - d * th
        t = np.sort(rng.uniform(0.0, slack, size=d))
        a = t + th * (np.arange(d) + 0.5)
        rhs = (m * np.pi / 4.0 - float(np.cos(a[:-1]) @ du[:-1])) / du[-1]
        if abs(rhs) > 1.0:
            continue
        a[-1] = np.arccos(rhs)
        if np.any(np.diff(a) < th) or a[0] < th / 2 or a[-1] > np.pi / 2 - th / 2:
            continue
        seq = SwitchingSequence(tuple(a), levels)
        if check_feasibility(seq, prob).feasible:
            return seq
    raise RuntimeError("could not sample a harmonic-matched sequence")


def random_feasible_sequence(prob, rng, max_tries=500):
    """Random structurally valid, interlock-feasible sequence for the problem graph."""
    from oppsyn.graph import build_graph, enumerate_paths, path_levels

    g = build_graph(prob.n_levels, prob.pulse_number, prob.unipolar)
    paths = enumerate_paths(g)
    d = prob.pulse_number
    th = prob.interlock
    for _ in range(max_tries):
        path = paths[rng.integers(len(paths))]
        # place d angles with all interlock margins satisfied
        slack = np.pi / 2 - d * th
        t = np.sort(rng.uniform(0.0, slack, size=d))
        a = t + th * (np.arange(d) + 0.5)
        if np.all(np.diff(a) >= th) and a[0] >= th / 2 and a[-1] <= np.pi / 2 - th / 2:
            return SwitchingSequence(tuple(a), path_levels(path))
    raise RuntimeError("could not sample a feasible sequence")
