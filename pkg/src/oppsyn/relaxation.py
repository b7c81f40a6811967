"""Degree-beta moment truncation of the measure LP: bases, supports, constraint rows.

Measures live over x = (c, s, phi, I) for occupation/jump blocks and over
(phi, I) for the initial/terminal blocks.  Four constraint families are
emitted: initial mass, harmonic rows, uniformity rows, and the per-mode
conservation (Liouville) rows, plus the support equalities of each measure
as plain linear rows.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from itertools import product

import numpy as np

from .graph import TransitionGraph, build_graph
from .pattern import ConverterProblem

QUARTER = math.pi / 2.0

Mono = tuple[int, ...]
Poly = dict[Mono, float]


class DegreeTooLow(ValueError):
    """An equality harmonic row needs a polynomial degree above 2*beta."""


# ---------------------------------------------------------------------------
# monomial bases

@lru_cache(maxsize=None)
def monomial_basis(nvars: int, maxdeg: int) -> tuple[Mono, ...]:
    """All exponent tuples with total degree <= maxdeg, graded lexicographic."""
    monos = [m for m in product(range(maxdeg + 1), repeat=nvars) if sum(m) <= maxdeg]
    monos.sort(key=lambda m: (sum(m), m))
    return tuple(monos)


@lru_cache(maxsize=None)
def basis_index(nvars: int, maxdeg: int) -> dict[Mono, int]:
    return {m: k for k, m in enumerate(monomial_basis(nvars, maxdeg))}


def mono_mul(a: Mono, b: Mono) -> Mono:
    return tuple(x + y for x, y in zip(a, b))


# ---------------------------------------------------------------------------
# Chebyshev polynomials of the second kind and trigonometric integrals

def chebyshev_u(ell: int) -> list[int]:
    """Integer coefficients of U_ell in ascending powers of c."""
    if ell < 0:
        raise ValueError("order must be >= 0")
    prev, cur = [1], [0, 2]
    if ell == 0:
        return prev
    for _ in range(ell - 1):
        nxt = [0] + [2 * v for v in cur]
        for k, v in enumerate(prev):
            nxt[k] -= v
        prev, cur = cur, nxt
    return cur


def sine_harmonic_poly(ell: int) -> Poly:
    """sin(ell * theta) lifted to the circle: s * U_{ell-1}(c) as a 4-var polynomial."""
    coeffs = chebyshev_u(ell - 1)
    return {(k, 1, 0, 0): float(v) for k, v in enumerate(coeffs) if v}


@lru_cache(maxsize=None)
def arc_monomial_integral(a: int, b: int) -> float:
    """W(a, b) = integral of cos^a sin^b over [0, pi/2], by the stable recurrence."""
    if a < 0 or b < 0:
        raise ValueError("exponents must be nonnegative")
    if a >= 2:
        return (a - 1) / (a + b) * arc_monomial_integral(a - 2, b)
    if b >= 2:
        return (b - 1) / (a + b) * arc_monomial_integral(a, b - 2)
    return {(0, 0): QUARTER, (1, 0): 1.0, (0, 1): 1.0, (1, 1): 0.5}[(a, b)]


# ---------------------------------------------------------------------------
# Lie derivative and boundary substitutions

def lie_derivative(mono: Mono, v_n: float) -> Poly:
    """Generator of the mode flow applied to c^a s^b phi^g I^m."""
    a, b, g, m = mono
    out: Poly = {}
    if a:
        out[(a - 1, b + 1, g, m)] = out.get((a - 1, b + 1, g, m), 0.0) - a
    if b:
        out[(a + 1, b - 1, g, m)] = out.get((a + 1, b - 1, g, m), 0.0) + b
    if g:
        out[(a, b, g - 1, m)] = out.get((a, b, g - 1, m), 0.0) + g
    if m and v_n != 0.0:
        out[(a, b, g, m - 1)] = out.get((a, b, g, m - 1), 0.0) + m * v_n
    return out


def substitute_reset(mono: Mono) -> Mono | None:
    """w(c, s, 0, I): kills monomials carrying the clock."""
    a, b, g, m = mono
    return None if g else (a, b, 0, m)


def substitute_start(mono: Mono) -> Mono | None:
    """w(1, 0, phi, I) as a 2-var monomial over (phi, I)."""
    a, b, g, m = mono
    return None if b else (g, m)


def substitute_end(mono: Mono) -> Mono | None:
    """w(0, 1, phi, I) as a 2-var monomial over (phi, I)."""
    a, b, g, m = mono
    return None if a else (g, m)


# ---------------------------------------------------------------------------
# semialgebraic supports

@dataclass(frozen=True)
class SupportSet:
    """Support description: circle/arc data plus clock and current boxes.

    `equalities` and `inequalities` render the set as polynomial lists over
    the measure's own variables (4-var measures: (c, s, phi, I); 2-var
    measures: (phi, I)).
    """

    nvars: int
    arc: tuple[float, float] | None = None       # theta-window of the circle arc
    on_circle: bool = False
    phi_box: tuple[float, float] | None = None
    i_box: tuple[float, float] | None = None
    i_zero: bool = False

    def _mono(self, var: str, power: int = 1) -> Mono:
        names = ("c", "s", "phi", "I") if self.nvars == 4 else ("phi", "I")
        m = [0] * self.nvars
        m[names.index(var)] = power
        return tuple(m)

    @property
    def equalities(self) -> list[Poly]:
        eqs: list[Poly] = []
        if self.on_circle:
            eqs.append({self._mono("c", 2): 1.0, self._mono("s", 2): 1.0,
                        tuple([0] * self.nvars): -1.0})
        if self.i_zero:
            eqs.append({self._mono("I"): 1.0})
        return eqs

    @property
    def inequalities(self) -> list[Poly]:
        one = tuple([0] * self.nvars)
        ineqs: list[Poly] = []
        if self.arc is not None:
            t1, t2 = self.arc
            # sin(theta - t1) >= 0 and sin(t2 - theta) >= 0 on the lifted circle
            lo = {self._mono("s"): math.cos(t1), self._mono("c"): -math.sin(t1)}
            hi = {self._mono("c"): math.sin(t2), self._mono("s"): -math.cos(t2)}
            ineqs.append({k: v for k, v in lo.items() if v != 0.0})
            ineqs.append({k: v for k, v in hi.items() if v != 0.0})
        if self.phi_box is not None:
            lo, hi = self.phi_box
            ineqs.append({self._mono("phi"): 1.0, one: -lo})
            ineqs.append({self._mono("phi"): -1.0, one: hi})
        if self.i_box is not None and not self.i_zero:
            lo, hi = self.i_box
            ineqs.append({self._mono("I"): 1.0, one: -lo})
            ineqs.append({self._mono("I"): -1.0, one: hi})
        return ineqs


def support_windows(prob: ConverterProblem) -> dict:
    """Valid clock and arc windows implied by the interlock constraints.

    Derived so that every interlock-feasible pattern's trajectory stays
    inside: the quarter-period loop has d inter-switch gaps summing to pi/2,
    each at least the interlock angle.
    """
    d = prob.pulse_number
    th = prob.interlock
    clock_hi = QUARTER - (d - 1) * th
    return {
        "clock_hi": clock_hi,
        "boundary_lo": th / 2.0,
        "boundary_hi": QUARTER - (d - 0.5) * th,
    }


def occupation_support(prob: ConverterProblem, i: int) -> SupportSet:
    d, th = prob.pulse_number, prob.interlock
    win = support_windows(prob)
    t_lo = 0.0 if i == 0 else (i - 0.5) * th
    t_hi = QUARTER if i == d else QUARTER - (d - i - 0.5) * th
    phi_lo = win["boundary_lo"] if i == 0 else 0.0
    phi_hi = QUARTER - (d - 0.5) * th if i == d else win["clock_hi"]
    imax = prob.current_bound
    return SupportSet(nvars=4, arc=(t_lo, t_hi), on_circle=True,
                      phi_box=(phi_lo, phi_hi), i_box=(-imax, imax))


def guard_support(prob: ConverterProblem, i: int) -> SupportSet:
    """Support of the jump measure entering switch count i (the i-th transition)."""
    d, th = prob.pulse_number, prob.interlock
    win = support_windows(prob)
    t_lo = (i - 0.5) * th
    t_hi = QUARTER - (d - i + 0.5) * th
    imax = prob.current_bound
    return SupportSet(nvars=4, arc=(t_lo, t_hi), on_circle=True,
                      phi_box=(th, win["clock_hi"]), i_box=(-imax, imax))


def initial_support(prob: ConverterProblem) -> SupportSet:
    win = support_windows(prob)
    imax = prob.current_bound
    return SupportSet(nvars=2, phi_box=(win["boundary_lo"], win["boundary_hi"]),
                      i_box=(-imax, imax))


def terminal_support(prob: ConverterProblem) -> SupportSet:
    win = support_windows(prob)
    imax = prob.current_bound
    return SupportSet(nvars=2, phi_box=(win["boundary_lo"], win["boundary_hi"]),
                      i_box=(-imax, imax), i_zero=True)


# ---------------------------------------------------------------------------
# measure roster and relaxation container

MeasureKey = tuple  # ("init",) | ("term", n) | ("occ", n, i) | ("jump", sign, n, i)


@dataclass(frozen=True)
class MeasureBlock:
    key: MeasureKey
    nvars: int
    support: SupportSet


@dataclass(frozen=True)
class Row:
    """One linear equality over stacked moments: sum coef * y[measure][mono] = rhs."""

    family: str
    tag: tuple
    terms: tuple[tuple[int, Mono, float], ...]
    rhs: float


@dataclass(frozen=True)
class BoxRow:
    """Two-sided linear constraint lo <= sum coef * y <= hi."""

    family: str
    tag: tuple
    terms: tuple[tuple[int, Mono, float], ...]
    lo: float
    hi: float


@dataclass
class MomentRelaxation:
    problem: ConverterProblem
    graph: TransitionGraph
    beta: int
    objective: str
    measures: list[MeasureBlock]
    rows: list[Row]
    boxes: list[BoxRow]
    objective_terms: list[tuple[int, Mono, float]]
    dropped_harmonics: list[int] = field(default_factory=list)

    @property
    def measure_index(self) -> dict[MeasureKey, int]:
        return {m.key: k for k, m in enumerate(self.measures)}

    def basis_for(self, block: MeasureBlock) -> tuple[Mono, ...]:
        return monomial_basis(block.nvars, 2 * self.beta)

    def row_count(self, family: str) -> int:
        return sum(1 for r in self.rows if r.family == family)

    def dump_text(self) -> str:
        """Human-readable roster and row statistics."""
        lines = [
            f"moment relaxation: beta={self.beta} objective={self.objective}",
            f"problem: N={self.problem.n_levels} d={self.problem.pulse_number} "
            f"unipolar={self.problem.unipolar}",
            f"measures: {len(self.measures)}",
        ]
        for m in self.measures:
            dim = len(self.basis_for(m))
            lines.append(
                f"  {m.key}  vars={m.nvars} moments={dim} "
                f"ineqs={len(m.support.inequalities)} eqs={len(m.support.equalities)}"
            )
        fams = sorted({r.family for r in self.rows})
        for fam in fams:
            rows = [r for r in self.rows if r.family == fam]
            nnz = sum(len(r.terms) for r in rows)
            lines.append(f"rows[{fam}]: {len(rows)} (nnz {nnz})")
        lines.append(f"boxes: {len(self.boxes)}")
        lines.append(f"objective nnz: {len(self.objective_terms)}")
        if self.dropped_harmonics:
            lines.append(f"dropped harmonic orders (degree > 2*beta): {self.dropped_harmonics}")
        return "\n".join(lines) + "\n"

    def dump_json(self) -> str:
        """Canonical JSON of the full row system, for golden-file comparisons."""
        def terms_doc(terms):
            return [[k, list(mono), coef] for k, mono, coef in terms]

        doc = {
            "beta": self.beta,
            "objective": self.objective,
            "measures": [
                {"key": list(map(str, m.key)), "nvars": m.nvars,
                 "inequalities": len(m.support.inequalities),
                 "equalities": len(m.support.equalities)}
                for m in self.measures
            ],
            "rows": [
                {"family": r.family, "tag": list(map(str, r.tag)),
                 "terms": terms_doc(r.terms), "rhs": r.rhs}
                for r in self.rows
            ],
            "boxes": [
                {"family": b.family, "tag": list(map(str, b.tag)),
                 "terms": terms_doc(b.terms), "lo": b.lo, "hi": b.hi}
                for b in self.boxes
            ],
            "objective_terms": terms_doc(self.objective_terms),
            "dropped_harmonics": self.dropped_harmonics,
        }
        return json.dumps(doc, sort_keys=True)


# ---------------------------------------------------------------------------
# assembly

def measure_roster(prob: ConverterProblem, g: TransitionGraph) -> list[MeasureBlock]:
    measures: list[MeasureBlock] = [MeasureBlock(("init",), 2, initial_support(prob))]
    for (n, i) in sorted(g.terminals):
        measures.append(MeasureBlock(("term", n), 2, terminal_support(prob)))
    for (n, i) in g.sorted_vertices():
        measures.append(MeasureBlock(("occ", n, i), 4, occupation_support(prob, i)))
    for sign, (src, dst) in g.sorted_edges():
        n, i = dst
        measures.append(MeasureBlock(("jump", sign, n, i), 4, guard_support(prob, i)))
    return measures


def assemble(prob: ConverterProblem, beta: int, objective: str | None = None) -> MomentRelaxation:
    """Build the degree-beta truncation: measure roster, rows, boxes, objective."""
    if beta < 1:
        raise ValueError("beta must be >= 1")
    objective = objective or prob.objective
    if objective not in ("current", "voltage"):
        raise ValueError("objective must be 'current' or 'voltage'")
    g = build_graph(prob.n_levels, prob.pulse_number, prob.unipolar)
    measures = measure_roster(prob, g)
    midx = {m.key: k for k, m in enumerate(measures)}
    deg = 2 * beta
    basis4 = monomial_basis(4, deg)
    basis2 = monomial_basis(2, deg)

    occupations = [m for m in measures if m.key[0] == "occ"]
    rows: list[Row] = []
    boxes: list[BoxRow] = []
    dropped: list[int] = []

    # initial mass: the single starting measure is a probability measure
    rows.append(Row("init_mass", (), ((midx[("init",)], (0, 0), 1.0),), 1.0))

    # harmonic rows: b_q = (4/pi) * sum_n v_n <s U_{q-1}(c), mu_{n,i}>
    for h in sorted(prob.harmonics, key=lambda h: h.order):
        if h.order > deg:
            if h.is_equality:
                raise DegreeTooLow(
                    f"equality harmonic of order {h.order} needs beta >= {(h.order + 1) // 2}"
                )
            dropped.append(h.order)
            continue
        poly = sine_harmonic_poly(h.order)
        terms = []
        for m in occupations:
            v_n = prob.level(m.key[1])
            if v_n == 0.0:
                continue
            for mono, coef in sorted(poly.items()):
                terms.append((midx[m.key], mono, 4.0 / math.pi * v_n * coef))
        if h.is_equality:
            rows.append(Row("harmonic", (h.order,), tuple(terms), h.lo))
        else:
            boxes.append(BoxRow("harmonic", (h.order,), tuple(terms), h.lo, h.hi))

    # uniformity: occupation measures jointly project onto the quarter arc
    for a, b in sorted((a, b) for a in range(deg + 1) for b in range(deg + 1 - a)):
        terms = tuple((midx[m.key], (a, b, 0, 0), 1.0) for m in occupations)
        rows.append(Row("uniformity", (a, b), terms, arc_monomial_integral(a, b)))

    # conservation per mode and test monomial: inflow + <Lie w, mu> = outflow
    for (n, i) in g.sorted_vertices():
        occ = midx[("occ", n, i)]
        v_n = prob.level(n)
        in_edges = g.in_edges((n, i))
        out_edges = g.out_edges((n, i))
        for w in basis4:
            terms: list[tuple[int, Mono, float]] = []
            if i == 0:
                sub = substitute_start(w)
                if sub is not None:
                    terms.append((midx[("init",)], sub, 1.0))
            else:
                sub = substitute_reset(w)
                if sub is not None:
                    for (src, dst) in in_edges:
                        sign = "+" if dst[0] > src[0] else "-"
                        terms.append((midx[("jump", sign, n, i)], sub, 1.0))
            for mono, coef in sorted(lie_derivative(w, v_n).items()):
                terms.append((occ, mono, coef))
            if i == g.d:
                sub = substitute_end(w)
                if sub is not None:
                    terms.append((midx[("term", n)], sub, -1.0))
            else:
                for (src, dst) in out_edges:
                    sign = "+" if dst[0] > src[0] else "-"
                    terms.append((midx[("jump", sign, dst[0], dst[1])], w, -1.0))
            rows.append(Row("liouville", (n, i, w), tuple(terms), 0.0))

    # support equalities as linear rows
    for m in measures:
        k = midx[m.key]
        nv = m.nvars
        for eq_idx, eq in enumerate(m.support.equalities):
            eq_deg = max(sum(mono) for mono in eq)
            for mult in monomial_basis(nv, deg - eq_deg):
                terms = tuple(
                    (k, mono_mul(mono, mult), coef) for mono, coef in sorted(eq.items())
                )
                rows.append(Row("support_eq", (m.key, eq_idx, mult), terms, 0.0))

    # objective
    if objective == "current":
        obj = [(midx[m.key], (0, 0, 0, 2), 4.0) for m in occupations]
    else:
        obj = [
            (midx[m.key], (0, 0, 0, 0), 4.0 * prob.level(m.key[1]) ** 2)
            for m in occupations
            if prob.level(m.key[1]) != 0.0
        ]

    del basis2
    return MomentRelaxation(
        problem=prob, graph=g, beta=beta, objective=objective,
        measures=measures, rows=rows, boxes=boxes,
        objective_terms=obj, dropped_harmonics=dropped,
    )


# ---------------------------------------------------------------------------
# evaluation of rows on concrete moment vectors (used by oracles and tests)

def evaluate_terms(
    terms, moments: dict[MeasureKey, np.ndarray], rel: MomentRelaxation
) -> float:
    total = 0.0
    for k, mono, coef in terms:
        block = rel.measures[k]
        vec = moments.get(block.key)
        if vec is None:
            continue
        idx = basis_index(block.nvars, 2 * rel.beta).get(mono)
        if idx is None:
            raise KeyError(f"monomial {mono} outside degree-{2 * rel.beta} basis")
        total += coef * vec[idx]
    return total


def row_residuals(
    rel: MomentRelaxation,
    moments: dict[MeasureKey, np.ndarray],
    families: tuple[str, ...] | None = None,
) -> dict[str, float]:
    """Max absolute equality residual per row family."""
    out: dict[str, float] = {}
    for r in rel.rows:
        if families is not None and r.family not in families:
            continue
        res = abs(evaluate_terms(r.terms, moments, rel) - r.rhs)
        out[r.family] = max(out.get(r.family, 0.0), res)
    return out


def box_violations(rel: MomentRelaxation, moments: dict[MeasureKey, np.ndarray]) -> float:
    worst = 0.0
    for b in rel.boxes:
        val = evaluate_terms(b.terms, moments, rel)
        worst = max(worst, b.lo - val, val - b.hi, 0.0)
    return worst


def objective_value(rel: MomentRelaxation, moments: dict[MeasureKey, np.ndarray]) -> float:
    return evaluate_terms(rel.objective_terms, moments, rel)
