"""Switching-sequence recovery from occupancy masses and local refinement.

Occupancy masses are the leading moments of the occupation blocks; the level
per switch-count column is the argmax, the angles are normalized cumulative
column masses.  Refinement polishes the angles of a fixed transition
sequence with an augmented-Lagrangian treatment of the harmonic rows over
hard linear interlock constraints.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .graph import build_graph
from .pattern import (
    ConverterProblem,
    SwitchingSequence,
    check_feasibility,
    energy_gradient,
    fourier_coefficient,
    fourier_gradient,
    signal_energy,
    zero_mean_initial_current,
)
from .relaxation import MomentRelaxation
from .sdp import ConicSolution

QUARTER = math.pi / 2.0

# equality harmonic entries are steered to lo + EQ_TARGET_OFFSET with a
# +-EQ_BAND tolerance band, keeping refined patterns strictly inside the
# [lo, lo + 1e-7] acceptance window
EQ_TARGET_OFFSET = 5e-9
EQ_BAND = 1e-9


class InvalidPath(ValueError):
    """Recovered argmax levels do not form unit steps; carries the column."""

    def __init__(self, message: str, column: int):
        super().__init__(message)
        self.column = column


class RefineFailed(RuntimeError):
    """No start reached the feasibility tolerance; carries the best effort."""

    def __init__(self, message: str, best: "RefineResult"):
        super().__init__(message)
        self.best = best


@dataclass
class OccupancyTable:
    """Mass per mode: xi[(n, i)] = <1, occupation measure of (n, i)>."""

    xi: dict[tuple[int, int], float]

    def column(self, i: int) -> dict[int, float]:
        return {n: v for (n, ii), v in self.xi.items() if ii == i}

    def total(self) -> float:
        return sum(self.xi.values())


@dataclass
class RefineResult:
    sequence: SwitchingSequence
    objective: float
    quality: float
    max_violation: float
    feasible: bool
    adopted: bool
    trace: list[tuple[int, float, float]] = field(default_factory=list)


def extract_occupancies(sol: ConicSolution, rel: MomentRelaxation) -> OccupancyTable:
    """Leading occupation moments, clamped at zero."""
    xi: dict[tuple[int, int], float] = {}
    for m in rel.measures:
        if m.key[0] != "occ":
            continue
        vec = sol.moments.get(m.key)
        if vec is None:
            raise ValueError(f"solution carries no moments for {m.key}")
        xi[(m.key[1], m.key[2])] = max(float(vec[0]), 0.0)
    return OccupancyTable(xi)


def recover_sequence(
    xi: OccupancyTable, prob: ConverterProblem, fallback: bool = False
) -> SwitchingSequence:
    """Levels by per-column argmax, angles by normalized cumulative masses.

    Ties break toward the smaller absolute level value, then the smaller
    index.  With ``fallback`` a maximum-mass unit-step path (dynamic program
    over the transition graph) replaces an argmax selection that jumps.
    """
    d = prob.pulse_number
    columns = [xi.column(i) for i in range(d + 1)]
    if any(not c for c in columns):
        missing = next(i for i, c in enumerate(columns) if not c)
        raise ValueError(f"occupancy table has no entries for column {missing}")

    def keyfun(n):
        return (abs(prob.level(n)), n)

    levels = []
    for col in columns:
        top_mass = max(col.values())
        ties = [n for n, v in col.items() if v == top_mass]
        levels.append(min(ties, key=keyfun))
    bad = next((i for i in range(d) if abs(levels[i + 1] - levels[i]) != 1), None)
    if bad is not None:
        if not fallback:
            raise InvalidPath(
                f"argmax levels jump by {levels[bad + 1] - levels[bad]} at column {bad + 1}",
                column=bad + 1,
            )
        levels = _max_mass_path(columns, prob)

    masses = np.array([sum(col.values()) for col in columns])
    total = masses.sum()
    if total <= 0.0:
        raise ValueError("occupancy table carries no mass")
    cums = np.cumsum(masses) * (QUARTER / total)
    angles = cums[:-1]
    # strictly increasing angles inside (0, pi/2)
    eps = 1e-12
    angles = np.clip(angles, eps, QUARTER - eps)
    for k in range(1, len(angles)):
        if angles[k] <= angles[k - 1]:
            angles[k] = angles[k - 1] + eps
    return SwitchingSequence(tuple(angles), tuple(levels))


def _max_mass_path(columns: list[dict[int, float]], prob: ConverterProblem) -> list[int]:
    """Unit-step path maximizing summed column masses (deterministic ties)."""
    g = build_graph(prob.n_levels, prob.pulse_number, prob.unipolar)
    best: dict[tuple[int, int], tuple[float, list[int]]] = {}
    center = prob.center_index
    best[(center, 0)] = (columns[0].get(center, 0.0), [center])
    for i in range(1, len(columns)):
        layer: dict[tuple[int, int], tuple[float, list[int]]] = {}
        for (src, dst) in g.edges:
            if src[1] != i - 1 or src not in best:
                continue
            mass, path = best[src]
            cand = (mass + columns[i].get(dst[0], 0.0), path + [dst[0]])
            cur = layer.get(dst)
            if cur is None or cand[0] > cur[0] + 1e-15 or (
                abs(cand[0] - cur[0]) <= 1e-15 and cand[1] < cur[1]
            ):
                layer[dst] = cand
        best.update(layer)
    terminal = [(v, k) for k, v in best.items() if k[1] == len(columns) - 1]
    if not terminal:
        raise ValueError("no unit-step path spans the occupancy table")
    (mass, path), _ = max(terminal, key=lambda t: (t[0][0], [-x for x in t[0][1]]))
    return path


def refine_over_paths(
    start: SwitchingSequence,
    prob: ConverterProblem,
    seed: int = 0,
    path_cap: int = 64,
    starts: int = 3,
) -> RefineResult:
    """Refine the starting angles over every transition path (small graphs).

    Occupancy-recovered angles are path-agnostic cumulative masses, while the
    argmax path of a low-degree solution is often not the best one; when the
    graph carries few paths, polishing each and keeping the best feasible
    refinement is cheap and deterministic.
    """
    from .graph import enumerate_paths, path_levels

    g = build_graph(prob.n_levels, prob.pulse_number, prob.unipolar)
    paths = enumerate_paths(g, cap=10**6)
    candidates: list[tuple] = []
    best_err: RefineFailed | None = None
    level_sets = [start.level_indices]
    if len(paths) <= path_cap:
        level_sets += [path_levels(p) for p in paths
                       if path_levels(p) != start.level_indices]
    for levels in level_sets:
        seq = SwitchingSequence(start.angles, levels)
        try:
            res = refine(seq, prob, seed=seed, starts=starts)
        except RefineFailed as exc:
            best_err = exc
            continue
        candidates.append((not res.feasible, res.quality, res.sequence.angles, res))
    if not candidates:
        raise best_err if best_err is not None else RefineFailed(
            "no path admitted a refinement",
            RefineResult(start, math.inf, math.inf, math.inf, False, False, []),
        )
    candidates.sort(key=lambda c: c[:3])
    winner = candidates[0][3]
    # final polish of the winner with the full multi-start budget
    return refine(winner.sequence, prob, seed=seed)


def _harmonic_sides(prob: ConverterProblem):
    """(order, bound, sign) rows g(alpha) <= 0 for every harmonic entry."""
    sides = []
    for h in prob.harmonics:
        if h.is_equality:
            target = h.lo + EQ_TARGET_OFFSET
            sides.append((h.order, target + EQ_BAND, +1))   # b <= target + band
            sides.append((h.order, -(target - EQ_BAND), -1))  # -b <= -(target - band)
        else:
            sides.append((h.order, h.hi, +1))
            sides.append((h.order, -h.lo, -1))
    return sides


def refine(
    seq: SwitchingSequence,
    prob: ConverterProblem,
    seed: int = 0,
    starts: int = 5,
    outer_iterations: int = 25,
    adopt_improvement: float = 1e-6,
) -> RefineResult:
    """Polish the angles of a fixed transition sequence.

    Augmented Lagrangian on the harmonic rows (analytic gradients) with the
    interlock geometry as hard linear constraints in the inner solver;
    multi-start from the input plus jittered copies with a fixed seed.  A
    feasible input is returned unchanged unless a candidate improves the
    energy by more than ``adopt_improvement``: refinement never worsens a
    feasible start.
    """
    d = seq.d
    th = prob.interlock
    levels = seq.level_indices
    sides = _harmonic_sides(prob)

    def objective(a):
        s = SwitchingSequence(tuple(a), levels)
        return energy_gradient(s, prob)

    def harmonic_values(a):
        s = SwitchingSequence(tuple(a), levels)
        vals, grads = [], []
        for (order, bound, sign) in sides:
            vals.append(sign * fourier_coefficient(s, prob, order) - bound)
            grads.append(sign * fourier_gradient(s, prob, order))
        return np.asarray(vals), np.asarray(grads)

    def max_violation(a):
        vals, _ = harmonic_values(a)
        geom = max(
            th / 2.0 - a[0],
            float(np.max(th - np.diff(a))) if d > 1 else -np.inf,
            a[-1] - (QUARTER - th / 2.0),
        )
        return max(float(np.max(vals)), geom, 0.0)

    constraints = [{
        "type": "ineq",
        "fun": lambda a: np.concatenate(
            ([a[0] - th / 2.0], np.diff(a) - th, [QUARTER - th / 2.0 - a[-1]])
        ),
    }]

    def solve_from(a0, trace):
        lam = np.zeros(len(sides))
        rho = 10.0
        a = np.asarray(a0, dtype=float)
        prev_viol = np.inf
        for outer in range(outer_iterations):
            def aug(a_, lam=lam, rho=rho):
                e, ge = objective(a_)
                vals, grads = harmonic_values(a_)
                act = np.maximum(0.0, lam + rho * vals)
                e_aug = e + float(np.sum(act**2 - lam**2)) / (2.0 * rho)
                g_aug = ge + act @ grads
                return e_aug, g_aug

            res = minimize(
                lambda a_: aug(a_)[0], a, jac=lambda a_: aug(a_)[1],
                method="SLSQP", constraints=constraints,
                options={"maxiter": 200, "ftol": 1e-14},
            )
            a = res.x
            vals, _ = harmonic_values(a)
            viol = max(float(np.max(vals)), 0.0)
            trace.append((outer, float(objective(a)[0]), viol))
            lam = np.maximum(0.0, lam + rho * vals)
            if viol <= 1e-10:
                break
            if viol > 0.25 * prev_viol:
                rho = min(rho * 10.0, 1e12)
            prev_viol = viol
        return a

    rng = np.random.default_rng(seed)
    starts_list = [np.asarray(seq.angles, dtype=float)]
    for _ in range(max(0, starts - 1)):
        jitter = rng.uniform(-th / 2.0, th / 2.0, size=d)
        starts_list.append(np.clip(np.asarray(seq.angles) + jitter,
                                   th / 2.0, QUARTER - th / 2.0))

    candidates = []
    trace: list[tuple[int, float, float]] = []
    for a0 in starts_list:
        try:
            a = solve_from(a0, trace)
        except Exception:
            continue
        if np.any(np.diff(a) <= 0.0):
            continue
        cand_seq = SwitchingSequence(tuple(float(x) for x in a), levels)
        report = check_feasibility(cand_seq, prob)
        e = signal_energy(cand_seq, prob, zero_mean_initial_current(cand_seq, prob))
        candidates.append((not report.feasible, e, tuple(a), cand_seq, report))
    if not candidates:
        raise RefineFailed(
            "no start produced usable angles",
            RefineResult(seq, math.inf, math.inf, math.inf, False, False, trace),
        )
    candidates.sort(key=lambda c: (c[0], c[1], c[2]))
    infeasible_flag, best_e, _, best_seq, best_report = candidates[0]

    start_report = check_feasibility(seq, prob)
    start_e = signal_energy(seq, prob, zero_mean_initial_current(seq, prob))
    if start_report.feasible and (infeasible_flag or best_e > start_e - adopt_improvement):
        return RefineResult(
            sequence=seq, objective=start_e, quality=start_report.quality,
            max_violation=max_violation(np.asarray(seq.angles)),
            feasible=True, adopted=False, trace=trace,
        )
    result = RefineResult(
        sequence=best_seq, objective=best_e, quality=best_report.quality,
        max_violation=max_violation(np.asarray(best_seq.angles)),
        feasible=best_report.feasible, adopted=True, trace=trace,
    )
    if not best_report.feasible:
        raise RefineFailed(
            f"best candidate violates {best_report.violations}", result
        )
    return result
