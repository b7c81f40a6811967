"""Ground-truth engine: trajectory simulation, constructed measure moments,
conservation residuals, and exhaustive search on small instances."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .graph import Edge, build_graph, enumerate_paths, path_from_levels, path_levels
from .pattern import (
    ConverterProblem,
    SwitchingSequence,
    quality_metric,
    zero_mean_initial_current,
)
from .relaxation import (
    MeasureKey,
    MomentRelaxation,
    assemble,
    monomial_basis,
    row_residuals,
)

QUARTER = math.pi / 2.0


class GuardViolation(ValueError):
    """An inter-switch gap fell below the interlock angle."""


class Infeasible(RuntimeError):
    """Exhaustive search found no feasible candidate."""


@dataclass(frozen=True)
class JumpPattern:
    """Switching angles plus the transition-graph path they traverse."""

    angles: tuple[float, ...]
    path: tuple[Edge, ...]

    def __post_init__(self):
        if len(self.angles) != len(self.path):
            raise ValueError("need one angle per arc")
        a = np.asarray(self.angles)
        if np.any(np.diff(a) < 0):
            raise ValueError("angles must be nondecreasing")

    @property
    def d(self) -> int:
        return len(self.angles)

    def levels(self) -> tuple[int, ...]:
        return path_levels(self.path)

    @classmethod
    def from_sequence(cls, seq: SwitchingSequence, prob: ConverterProblem) -> "JumpPattern":
        g = build_graph(prob.n_levels, prob.pulse_number, prob.unipolar)
        return cls(seq.angles, path_from_levels(seq.level_indices, g))

    def to_sequence(self) -> SwitchingSequence:
        return SwitchingSequence(self.angles, self.levels())


@dataclass(frozen=True)
class Trajectory:
    thetas: np.ndarray
    c: np.ndarray
    s: np.ndarray
    phi: np.ndarray
    current: np.ndarray
    switch_states: tuple[tuple[float, float, float, float, float], ...]
    terminal_state: tuple[float, float, float, float]


def simulate(
    jp: JumpPattern,
    i0: float,
    phi0: float,
    prob: ConverterProblem,
    samples: int = 513,
) -> Trajectory:
    """Closed-form piecewise trajectory of (c, s, phi, I) on the quarter period.

    The rotation states are exact; clock and current are affine per segment
    with the clock reset at every switch.  Raises GuardViolation when a
    switch fires with clock below the interlock angle.
    """
    th = prob.interlock
    levels = [prob.level(n) for n in self_levels(jp)]
    a = np.asarray(jp.angles)
    edges = np.concatenate(([0.0], a, [QUARTER]))
    switch_states = []
    current = i0
    for i in range(jp.d):
        clock = (phi0 + a[0]) if i == 0 else (a[i] - a[i - 1])
        if clock < th - 1e-12:
            raise GuardViolation(
                f"switch {i + 1} at {a[i]:.6f} has clock {clock:.6f} < interlock {th:.6f}"
            )
        current_at = current + levels[i] * (edges[i + 1] - edges[i])
        switch_states.append((a[i], math.cos(a[i]), math.sin(a[i]), clock, current_at))
        current = current_at

    thetas = np.linspace(0.0, QUARTER, samples)
    seg = np.clip(np.searchsorted(a, thetas, side="right"), 0, jp.d)
    u_vals = np.asarray(levels)
    edge_start = edges[seg]
    i_start = np.concatenate(([i0], i0 + np.cumsum(u_vals * np.diff(edges))))[seg]
    phi_start = np.where(seg == 0, phi0, 0.0)
    cur = i_start + u_vals[seg] * (thetas - edge_start)
    phi = phi_start + (thetas - edge_start)
    terminal = (0.0, 1.0, float(phi[-1]), float(cur[-1]))
    return Trajectory(
        thetas=thetas, c=np.cos(thetas), s=np.sin(thetas), phi=phi, current=cur,
        switch_states=tuple(switch_states), terminal_state=terminal,
    )


def self_levels(jp: JumpPattern) -> tuple[int, ...]:
    return path_levels(jp.path)


@dataclass
class MeasureMoments:
    """Moment vectors of the constructed measures, full monomial bases."""

    beta: int
    moments: dict[MeasureKey, np.ndarray]

    def __getitem__(self, key: MeasureKey) -> np.ndarray:
        return self.moments[key]


@lru_cache(maxsize=None)
def _gauss(nodes: int = 64) -> tuple[np.ndarray, np.ndarray]:
    return np.polynomial.legendre.leggauss(nodes)


def trajectory_moments(
    jp: JumpPattern, i0: float, prob: ConverterProblem, beta: int,
    phi0: float | None = None,
) -> MeasureMoments:
    """Measures of a single trajectory: occupation moments by per-segment
    Gauss-Legendre quadrature, boundary and jump measures as point evaluations.

    By default the starting clock is pre-charged with the terminal gap,
    phi0 = pi/2 - alpha^d, closing the quarter-period loop; any other valid
    pre-charge yields an equally conservation-consistent measure family.
    """
    if beta < 1:
        raise ValueError("beta must be >= 1")
    deg = 2 * beta
    basis4 = monomial_basis(4, deg)
    basis2 = monomial_basis(2, deg)
    a = np.asarray(jp.angles)
    if phi0 is None:
        phi0 = QUARTER - a[-1]
    levels_idx = self_levels(jp)
    u = np.array([prob.level(n) for n in levels_idx])
    edges = np.concatenate(([0.0], a, [QUARTER]))
    widths = np.diff(edges)
    i_at_edges = np.concatenate(([i0], i0 + np.cumsum(u * widths)))

    moments: dict[MeasureKey, np.ndarray] = {}

    # initial measure: point mass at (phi0, i0)
    init = np.array([phi0**g * i0**m for (g, m) in basis2])
    moments[("init",)] = init

    # terminal measure: point mass at the exit state
    i_end = float(i_at_edges[-1])
    term = np.array([(QUARTER - a[-1]) ** g * i_end**m for (g, m) in basis2])
    moments[("term", levels_idx[-1])] = term

    # occupation measures, one polynomial-in-theta segment each
    x, wq = _gauss()
    for i in range(jp.d + 1):
        lo, hi = edges[i], edges[i + 1]
        th = 0.5 * (hi - lo) * x + 0.5 * (hi + lo)
        ww = 0.5 * (hi - lo) * wq
        cc, ss = np.cos(th), np.sin(th)
        phi = (phi0 if i == 0 else 0.0) + (th - lo)
        cur = i_at_edges[i] + u[i] * (th - lo)
        vec = np.empty(len(basis4))
        for k, (p, q, g, m) in enumerate(basis4):
            vec[k] = float(np.sum(ww * cc**p * ss**q * phi**g * cur**m))
        moments[("occ", levels_idx[i], i)] = vec

    # jump measures: Dirac at the pre-jump state of each transition
    for i in range(1, jp.d + 1):
        clock = (phi0 + a[0]) if i == 1 else (a[i - 1] - a[i - 2])
        state = (math.cos(a[i - 1]), math.sin(a[i - 1]), clock, float(i_at_edges[i]))
        sign = "+" if levels_idx[i] > levels_idx[i - 1] else "-"
        vec = np.array([
            state[0] ** p * state[1] ** q * state[2] ** g * state[3] ** m
            for (p, q, g, m) in basis4
        ])
        moments[("jump", sign, levels_idx[i], i)] = vec

    return MeasureMoments(beta=beta, moments=moments)


def complete_moments(mm: MeasureMoments, rel: MomentRelaxation) -> dict[MeasureKey, np.ndarray]:
    """Constructed moments padded with zero vectors for unvisited measures."""
    full: dict[MeasureKey, np.ndarray] = {}
    for block in rel.measures:
        vec = mm.moments.get(block.key)
        if vec is None:
            vec = np.zeros(len(monomial_basis(block.nvars, 2 * rel.beta)))
        full[block.key] = vec
    return full


def liouville_residual(
    mm: MeasureMoments, prob: ConverterProblem, beta: int, rel: MomentRelaxation | None = None
) -> float:
    """Max conservation-row violation of the constructed moments."""
    if rel is None:
        rel = assemble(prob, beta)
    res = row_residuals(rel, complete_moments(mm, rel), families=("liouville",))
    return res.get("liouville", 0.0)


# ---------------------------------------------------------------------------
# exhaustive search

def _candidate_arrays(prob: ConverterProblem, d: int, grid_step: float) -> np.ndarray:
    """Grid tuples for the first d-1 angles, interlock-honoring."""
    th = prob.interlock
    lo, hi = th / 2.0, QUARTER - th / 2.0
    pts = np.arange(lo, hi + 1e-12, grid_step)
    if len(pts) ** max(d - 1, 0) > 2 * 10**7:
        raise ValueError("grid too fine for this pulse number; coarsen grid_step or lower d")
    if d == 1:
        return np.zeros((1, 0))
    grids = np.meshgrid(*([pts] * (d - 1)), indexing="ij")
    stacked = np.stack([g.ravel() for g in grids], axis=1)
    ok = np.ones(len(stacked), dtype=bool)
    for j in range(d - 2):
        ok &= stacked[:, j + 1] - stacked[:, j] >= th
    ok &= stacked[:, -1] <= hi - th
    return stacked[ok]


def _energies(angles: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Vectorized closed-form energy with zero-mean initial current.

    angles: (n, d) candidate rows; u: (d+1,) level values.
    """
    n, d = angles.shape
    edges = np.concatenate(
        [np.zeros((n, 1)), angles, np.full((n, 1), QUARTER)], axis=1
    )
    widths = np.diff(edges, axis=1)
    i0 = -(widths * u).sum(axis=1)
    J = np.concatenate([i0[:, None], i0[:, None] + np.cumsum(widths * u, axis=1)], axis=1)
    total = np.zeros(n)
    for i in range(d + 1):
        if u[i] == 0.0:
            total += J[:, i] ** 2 * widths[:, i]
        else:
            total += (J[:, i + 1] ** 3 - J[:, i] ** 3) / (3.0 * u[i])
    return 4.0 * total


def brute_force_best(
    prob: ConverterProblem, grid_step: float, path_cap: int = 10**6
) -> tuple[SwitchingSequence, float]:
    """Best quality over all paths and an interlock-respecting angle grid.

    The fundamental equality entry is met exactly by solving the last angle
    from the grid prefix in closed form; remaining harmonic entries filter
    candidates verbatim.  Returns (sequence, Q); raises Infeasible when no
    candidate passes.
    """
    if grid_step > prob.interlock / 2.0 + 1e-15:
        raise ValueError("grid_step must be at most half the interlock angle")
    d = prob.pulse_number
    th = prob.interlock
    g = build_graph(prob.n_levels, d, prob.unipolar)
    paths = enumerate_paths(g, cap=path_cap)
    eq1 = next((h for h in prob.harmonics if h.order == 1 and h.is_equality), None)
    others = [h for h in prob.harmonics if h is not eq1]

    best: tuple[float, tuple[float, ...], tuple[int, ...]] | None = None
    prefix = _candidate_arrays(prob, d, grid_step)
    for path in paths:
        levels_idx = path_levels(path)
        u = np.array([prob.level(nn) for nn in levels_idx])
        du = np.diff(u)
        if eq1 is not None:
            # cos(alpha_d) solved from b1 = M given the grid prefix
            m_target = eq1.lo
            partial = np.zeros(1) if d == 1 else np.cos(prefix) @ du[:-1]
            rhs = (m_target * math.pi / 4.0 - partial) / du[-1]
            valid = np.abs(rhs) <= 1.0
            if not np.any(valid):
                continue
            last = np.arccos(rhs[valid])
            cand = np.concatenate([prefix[valid], last[:, None]], axis=1)
        else:
            pts = np.arange(th / 2.0, QUARTER - th / 2.0 + 1e-12, grid_step)
            if d == 1:
                cand = pts[:, None]
            else:
                cand = np.concatenate(
                    [np.repeat(prefix, len(pts), axis=0),
                     np.tile(pts, len(prefix))[:, None]], axis=1
                )
        # interlock for the solved/appended last angle
        ok = cand[:, -1] <= QUARTER - th / 2.0 + 1e-12
        if d > 1:
            ok &= cand[:, -1] - cand[:, -2] >= th - 1e-12
        ok &= cand[:, 0] >= th / 2.0 - 1e-12
        cand = cand[ok]
        if not len(cand):
            continue
        # harmonic boxes (and non-fundamental equalities, slack-widened)
        keep = np.ones(len(cand), dtype=bool)
        for h in others:
            b = (4.0 / (h.order * math.pi)) * (np.cos(h.order * cand) @ du)
            if h.is_equality:
                slack = grid_step * float(np.sum(np.abs(du))) * max(
                    hh.order for hh in prob.harmonics
                )
                keep &= np.abs(b - h.lo) <= slack
            else:
                keep &= (b >= h.lo - 1e-12) & (b <= h.hi + 1e-12)
        cand = cand[keep]
        if not len(cand):
            continue
        energies = _energies(cand, u)
        b1 = (4.0 / math.pi) * (np.cos(cand) @ du)
        qsq = energies / math.pi - b1**2
        q = np.sqrt(np.clip(qsq, 0.0, None))
        # deterministic tie-break on (q, angles)
        order = np.lexsort(tuple(cand[:, j] for j in range(d - 1, -1, -1)) + (q,))
        k = int(order[0])
        entry = (float(q[k]), tuple(float(x) for x in cand[k]), levels_idx)
        if best is None or entry[:2] < best[:2]:
            best = entry

    if best is None:
        raise Infeasible("no grid candidate satisfies the harmonic constraints")
    q_best, angles, levels_idx = best
    return SwitchingSequence(angles, levels_idx), q_best


def oracle_quality(seq: SwitchingSequence, prob: ConverterProblem) -> float:
    """Quality recomputed through the scalar evaluators (sanity hook for tests)."""
    return quality_metric(seq, prob)


def sample_constructed_moments(
    prob: ConverterProblem, beta: int, count: int, seed: int = 0
) -> list[MeasureMoments]:
    """Constructed measures of random interlock-feasible trajectories.

    Harmonic rows are ignored on purpose: the sample spans the widest
    trajectory-generated face of the moment cone, which every feasible point
    of the truncation lives on.  Clock pre-charges are spread over their
    admissible window.
    """
    g = build_graph(prob.n_levels, prob.pulse_number, prob.unipolar)
    paths = enumerate_paths(g)
    d = prob.pulse_number
    th = prob.interlock
    win = QUARTER - (d - 1) * th
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < count:
        path = paths[rng.integers(len(paths))]
        slack = QUARTER - d * th
        t = np.sort(rng.uniform(0.0, slack, size=d))
        a = t + th * (np.arange(d) + 0.5)
        if np.any(np.diff(a) < th) or a[0] < th / 2 or a[-1] > QUARTER - th / 2:
            continue
        jp = JumpPattern(tuple(a), path)
        seq = jp.to_sequence()
        i0 = zero_mean_initial_current(seq, prob)
        lo = max(th / 2.0, th - a[0])
        hi = min(QUARTER - (d - 0.5) * th, win - a[0])
        if hi <= lo:
            phi0 = None
        else:
            phi0 = float(rng.uniform(lo, hi))
        out.append(trajectory_moments(jp, i0, prob, beta, phi0=phi0))
    return out
