"""Conic compilation of a moment relaxation and the solver front end.

compile() rewrites every measure in a quotient basis: powers of c above 1
are eliminated through the circle identity c^2 = 1 - s^2 and the pinned
terminal current removes all current moments of the terminal blocks.  The
surviving support equalities would otherwise make every moment matrix
structurally singular, which no interior-point iteration survives.  Each
measure then contributes one moment matrix plus one localizing matrix per
degree-one support inequality; harmonic boxes become slack variables tied
in by equality rows.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

from .relaxation import (
    MeasureKey,
    MomentRelaxation,
    Mono,
    basis_index,
    monomial_basis,
)


# Optional facial-reduction thresholds (None disables).  Moments of reachable
# measures span a proper subspace per measure (the pinned terminal current and
# the angle/current ties leave near-null directions), but the sampled spans
# decay smoothly and admit no safe cutoff, so both stay disabled: bounds from
# degrees the solver cannot close are reported through the monotone envelope
# of lower degrees instead.
SPAN_RTOL = None
BLOCK_RTOL = None


@lru_cache(maxsize=None)
def _circle_reduction(mono: Mono) -> tuple[tuple[float, Mono], ...]:
    """c^a s^b phi^g I^m rewritten with c-power at most one."""
    a, b, g, m = mono
    if a <= 1:
        return ((1.0, mono),)
    q, r = divmod(a, 2)
    out = []
    for k in range(q + 1):
        out.append(((-1.0) ** k * math.comb(q, k), (r, b + 2 * k, g, m)))
    return tuple(out)


def _reduce_mono(kind: str, mono: Mono) -> tuple[tuple[float, Mono], ...]:
    if kind in ("occ", "jump"):
        return _circle_reduction(mono)
    if kind == "term":
        return () if mono[1] >= 1 else ((1.0, mono),)
    return ((1.0, mono),)


@dataclass
class GroupSpec:
    """One variable group: a measure's reduced moments, or a single slack.

    `span` restricts the group to the subspace actually reached by
    trajectory-constructed moments (facial reduction of the free variables);
    identity when None.
    """

    key: MeasureKey
    kind: str
    start: int
    basis: tuple[Mono, ...]
    index: dict[Mono, int]
    span: np.ndarray | None = None

    @property
    def full_size(self) -> int:
        return len(self.basis)

    @property
    def size(self) -> int:
        return len(self.basis) if self.span is None else self.span.shape[1]


@dataclass
class BlockSpec:
    """One PSD block: S = mat(sum_j coef * y[group_local_j]) + const.

    `basis_transform` holds a basis-change matrix G (new basis in old-basis
    coordinates); the solver works on the congruence G' S G, which has the
    same feasible set but far better conditioning when G re-expresses the
    power basis over Chebyshev polynomials of the support windows.  matrix()
    keeps the raw power-basis matrix for diagnostics.
    """

    label: str
    group: int
    side: int
    rows: np.ndarray
    cols: np.ndarray
    locs: np.ndarray
    coefs: np.ndarray
    const: np.ndarray | None = None
    basis_transform: np.ndarray | None = None
    span: np.ndarray | None = None
    raw_side: int | None = None
    _tensor: np.ndarray | None = None

    def raw_tensor(self, full_group_size: int) -> np.ndarray:
        n = self.raw_side or self.side
        t = np.zeros((full_group_size, n, n))
        np.add.at(t, (self.locs, self.rows, self.cols), self.coefs)
        return t

    def tensor(self, group_size: int) -> np.ndarray:
        if self._tensor is None or self._tensor.shape[0] != group_size:
            full = self.span.shape[0] if self.span is not None else group_size
            t = self.raw_tensor(full)
            if self.span is not None:
                t = np.einsum("jw,jrs->wrs", self.span, t)
            if self.basis_transform is not None:
                g = self.basis_transform
                t = np.matmul(np.matmul(g.T[None, :, :], t), g[None, :, :])
                t = 0.5 * (t + t.transpose(0, 2, 1))
            self._tensor = t
        return self._tensor

    def solver_const(self) -> np.ndarray | None:
        if self.const is None:
            return None
        if self.basis_transform is None:
            return self.const
        g = self.basis_transform
        return g.T @ self.const @ g

    def matrix(self, y_group_full: np.ndarray) -> np.ndarray:
        """Raw power-basis matrix from FULL (unlowered) group coordinates."""
        n = self.raw_side or self.side
        s = np.zeros((n, n))
        np.add.at(s, (self.rows, self.cols), self.coefs * y_group_full[self.locs])
        if self.const is not None:
            s += self.const
        return s


@dataclass
class ConicProblem:
    """min c'y  s.t.  A y = b and every block PSD; y grouped per measure."""

    groups: list[GroupSpec]
    blocks: list[BlockSpec]
    a_mat: sp.csr_matrix
    b_vec: np.ndarray
    c_vec: np.ndarray
    row_labels: list[tuple]
    beta: int | None = None
    relaxation: MomentRelaxation | None = None
    init_y: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def nvar(self) -> int:
        return sum(g.size for g in self.groups)

    @property
    def n_eq(self) -> int:
        return self.a_mat.shape[0]

    def group_slice(self, k: int) -> slice:
        g = self.groups[k]
        return slice(g.start, g.start + g.size)

    def group_of(self, key: MeasureKey) -> GroupSpec:
        for g in self.groups:
            if g.key == key:
                return g
        raise KeyError(key)

    def quotient_from_full(self, key: MeasureKey, full_vec: np.ndarray) -> np.ndarray:
        """Select the quotient-basis coordinates out of a full moment vector."""
        g = self.group_of(key)
        nvars = 4 if g.kind in ("occ", "jump") else 2
        idx = basis_index(nvars, 2 * self.beta)
        return np.array([full_vec[idx[m]] for m in g.basis])

    def reduced_from_full(self, key: MeasureKey, full_vec: np.ndarray) -> np.ndarray:
        """Lowered (span-projected) coordinates of a full moment vector."""
        g = self.group_of(key)
        vec = self.quotient_from_full(key, full_vec)
        return vec if g.span is None else g.span.T @ vec

    def full_from_reduced(self, key: MeasureKey, y_group: np.ndarray) -> np.ndarray:
        """Re-embed lowered coordinates as a full Table-style moment vector."""
        g = self.group_of(key)
        quot = y_group if g.span is None else g.span @ y_group
        nvars = 4 if g.kind in ("occ", "jump") else 2
        basis = monomial_basis(nvars, 2 * self.beta)
        out = np.zeros(len(basis))
        for k, mono in enumerate(basis):
            val = 0.0
            for coef, red in _reduce_mono(g.kind, mono):
                val += coef * quot[g.index[red]]
            out[k] = val
        return out

    def stack_from_full(self, moments: dict[MeasureKey, np.ndarray]) -> np.ndarray:
        """Assemble a lowered y vector from full per-measure moments."""
        y = np.zeros(self.nvar)
        quot_stack: dict[MeasureKey, np.ndarray] = {}
        for k, g in enumerate(self.groups):
            if g.kind == "slack":
                continue
            vec = moments.get(g.key)
            if vec is not None:
                quot = self.quotient_from_full(g.key, vec)
                quot_stack[g.key] = quot
                y[self.group_slice(k)] = quot if g.span is None else g.span.T @ quot
        for k, g in enumerate(self.groups):
            if g.kind != "slack":
                continue
            terms, side = self.meta["slack_rows"][g.key]
            gy = sum(
                coef * quot_stack[key][loc]
                for key, loc, coef in terms if key in quot_stack
            )
            y[g.start] = side - gy if self.meta["slack_sign"][g.key] > 0 else gy - side
        return y

    def block_matrices(self, y: np.ndarray) -> list[tuple[str, np.ndarray]]:
        """Raw power-basis block matrices at a lowered y (for diagnostics)."""
        out = []
        for blk in self.blocks:
            g = self.groups[blk.group]
            y_g = y[self.group_slice(blk.group)]
            full = y_g if g.span is None else g.span @ y_g
            out.append((blk.label, blk.matrix(full)))
        return out


@dataclass
class ConicSolution:
    status: str
    p_beta: float | None
    primal_objective: float | None
    moments: dict[MeasureKey, np.ndarray]
    residuals: dict[str, float]
    iterations: int
    solve_seconds: float
    q_beta: float | None = None
    q_clamped: bool = False
    p_dual: float | None = None
    certificate: dict = field(default_factory=dict)


def _moment_block(group: GroupSpec, kind: str, beta: int, poly: dict[Mono, float],
                  label: str, group_idx: int) -> tuple[BlockSpec, list[Mono]]:
    """Localizing matrix for `poly` (the moment matrix when poly == {1})."""
    nvars = 4 if kind in ("occ", "jump") else 2
    one = tuple([0] * nvars)
    budget = beta if poly.keys() == {one} else beta - max(
        (sum(m) + 1) // 2 for m in poly
    )
    if kind in ("occ", "jump"):
        basis = [m for m in monomial_basis(nvars, budget) if m[0] <= 1]
    elif kind == "term":
        basis = [m for m in monomial_basis(nvars, budget) if m[1] == 0]
    else:
        basis = list(monomial_basis(nvars, budget))
    rows, cols, locs, coefs = [], [], [], []
    for i, u in enumerate(basis):
        for j in range(i, len(basis)):
            v = basis[j]
            prod = tuple(x + y for x, y in zip(u, v))
            acc: dict[int, float] = {}
            for t, ct in poly.items():
                full = tuple(x + y for x, y in zip(prod, t))
                for coef, red in _reduce_mono(kind, full):
                    loc = group.index[red]
                    acc[loc] = acc.get(loc, 0.0) + ct * coef
            for loc, coef in acc.items():
                if coef == 0.0:
                    continue
                rows.append(i); cols.append(j); locs.append(loc); coefs.append(coef)
                if i != j:
                    rows.append(j); cols.append(i); locs.append(loc); coefs.append(coef)
    block = BlockSpec(
        label=label, group=group_idx, side=len(basis),
        rows=np.asarray(rows, dtype=np.int32), cols=np.asarray(cols, dtype=np.int32),
        locs=np.asarray(locs, dtype=np.int32), coefs=np.asarray(coefs),
    )
    return block, basis


def _cheb1d(degmax: int, lo: float, hi: float) -> list[np.ndarray]:
    """Coefficient vectors of Chebyshev polynomials of the box-mapped variable."""
    if hi - lo < 1e-9:
        return [np.array([1.0])] + [np.array([0.0] * k + [1.0]) for k in range(1, degmax + 1)]
    p = 2.0 / (hi - lo)
    q = -(hi + lo) / (hi - lo)
    polys = [np.array([1.0])]
    if degmax >= 1:
        polys.append(np.array([q, p]))
    for _ in range(degmax - 1):
        shifted = np.convolve(polys[-1], np.array([q, p]))
        prev = np.zeros_like(shifted)
        prev[: len(polys[-2])] = polys[-2]
        polys.append(2.0 * shifted - prev)
    return polys


def _block_basis_change(basis: list[Mono], kind: str, support) -> np.ndarray:
    """Basis-change matrix from power monomials to box-Chebyshev products."""
    idx = {m: k for k, m in enumerate(basis)}
    n = len(basis)
    g = np.zeros((n, n))
    if kind in ("occ", "jump"):
        t1, t2 = support.arc
        c_rng = (math.cos(t2), math.cos(t1))
        s_rng = (math.sin(t1), math.sin(t2))
        ranges = [c_rng, s_rng, support.phi_box, support.i_box]
    else:
        ranges = [support.phi_box, support.i_box or (0.0, 1.0)]
    degs = [max(m[v] for m in basis) for v in range(len(ranges))]
    chebs = [_cheb1d(d, *rng) for d, rng in zip(degs, ranges)]
    for j, mono in enumerate(basis):
        factors = [chebs[v][mono[v]] for v in range(len(mono))]
        # expand the product over old monomials
        combos = [((), 1.0)]
        for vec in factors:
            combos = [
                (exp + (k,), coef * vec[k])
                for exp, coef in combos
                for k in range(len(vec))
                if vec[k] != 0.0
            ]
        for exp, coef in combos:
            g[idx[exp], j] += coef
    return g


def _stack_reduced(groups: list[GroupSpec], nvar: int,
                   moments: dict[MeasureKey, np.ndarray]) -> np.ndarray:
    """Select quotient-basis coordinates of full moment vectors into a y vector."""
    y = np.zeros(nvar)
    for g in groups:
        if g.kind == "slack":
            continue
        vec = moments.get(g.key)
        if vec is None:
            continue
        nvars = 4 if g.kind in ("occ", "jump") else 2
        deg = max(sum(m) for m in g.basis) if g.basis else 0
        idx = basis_index(nvars, max(deg, 1))
        full_idx = basis_index(nvars, _infer_deg(len(vec), nvars))
        y[g.start:g.start + g.size] = [vec[full_idx[m]] for m in g.basis]
    return y


@lru_cache(maxsize=None)
def _infer_deg(length: int, nvars: int) -> int:
    deg = 0
    while len(monomial_basis(nvars, deg)) < length:
        deg += 1
    return deg


def _drop_dependent_rows(a_mat: sp.csr_matrix, b_vec: np.ndarray, labels: list):
    """Remove exactly dependent equality rows (conservation/uniformity telescopes).

    Rank detection by pivoted Cholesky of the row Gram matrix; the dropped
    rows are linear consequences of the kept ones, so the system is unchanged.
    """
    from scipy.linalg.lapack import dpstrf

    m = a_mat.shape[0]
    if m == 0:
        return a_mat, b_vec, labels
    norms = np.sqrt(np.asarray(a_mat.multiply(a_mat).sum(axis=1)).ravel())
    norms = np.maximum(norms, 1e-300)
    scaled = sp.diags(1.0 / norms) @ a_mat
    gram = (scaled @ scaled.T).toarray()
    _, piv, rank, _ = dpstrf(gram, tol=1e-13, lower=1)
    if rank == m:
        return a_mat, b_vec, labels
    keep = np.sort(piv[:rank] - 1)
    return a_mat[keep], b_vec[keep], [labels[k] for k in keep]


def _uniform_box_moments(lo: float, hi: float, gmax: int) -> np.ndarray:
    """Normalized moments of the uniform distribution on [lo, hi]."""
    out = np.empty(gmax + 1)
    for g in range(gmax + 1):
        out[g] = (hi ** (g + 1) - lo ** (g + 1)) / ((g + 1) * (hi - lo))
    return out


def _interior_moments(group: GroupSpec, support, beta: int) -> np.ndarray:
    """Moments of a full-support product measure: a strictly interior start."""
    deg = 2 * beta
    if group.kind in ("occ", "jump"):
        t1, t2 = support.arc
        x, w = np.polynomial.legendre.leggauss(48)
        th = 0.5 * (t2 - t1) * x + 0.5 * (t1 + t2)
        ww = 0.5 * (t2 - t1) * w / (t2 - t1)
        phi_m = _uniform_box_moments(*support.phi_box, deg)
        i_m = _uniform_box_moments(*support.i_box, deg)
        vec = np.empty(group.size)
        for k, (a, b, g, m) in enumerate(group.basis):
            arc = float(np.sum(ww * np.cos(th) ** a * np.sin(th) ** b))
            vec[k] = arc * phi_m[g] * i_m[m]
        return vec
    phi_m = _uniform_box_moments(*support.phi_box, deg)
    if group.kind == "term":
        return np.array([phi_m[g] for (g, m) in group.basis])
    i_m = _uniform_box_moments(*support.i_box, deg)
    return np.array([phi_m[g] * i_m[m] for (g, m) in group.basis])


def compile(rel: MomentRelaxation) -> ConicProblem:
    """Lower the relaxation into grouped conic form with quotient bases."""
    beta = rel.beta
    groups: list[GroupSpec] = []
    start = 0
    for m in rel.measures:
        kind = m.key[0]
        if kind in ("occ", "jump"):
            basis = tuple(mm for mm in monomial_basis(4, 2 * beta) if mm[0] <= 1)
        elif kind == "term":
            basis = tuple(mm for mm in monomial_basis(2, 2 * beta) if mm[1] == 0)
        else:
            basis = monomial_basis(2, 2 * beta)
        groups.append(GroupSpec(m.key, kind, start, basis,
                                {mono: k for k, mono in enumerate(basis)}))
        start += len(basis)

    slack_rows: dict[MeasureKey, tuple] = {}
    slack_sign: dict[MeasureKey, int] = {}
    n_moment_vars = start
    slack_keys = []
    for bi, box in enumerate(rel.boxes):
        for side, sign in (("hi", +1), ("lo", -1)):
            key = ("slack", box.family, box.tag, side)
            groups.append(GroupSpec(key, "slack", start, ((0,),), {(0,): 0}))
            slack_keys.append((key, bi, sign))
            start += 1
    nvar = start

    def reduce_terms(terms) -> dict[int, float]:
        acc: dict[int, float] = {}
        for mk, mono, coef in terms:
            g = groups[mk]
            for cf, red in _reduce_mono(g.kind, mono):
                loc = g.start + g.index[red]
                acc[loc] = acc.get(loc, 0.0) + coef * cf
        return {k: v for k, v in acc.items() if v != 0.0}

    # equality rows in the quotient basis; dependent test monomials dropped
    rows_ij, rows_val, rhs, labels = [], [], [], []

    def add_row(cols: dict[int, float], b: float, label: tuple):
        r = len(rhs)
        for jcol, v in sorted(cols.items()):
            rows_ij.append((r, jcol))
            rows_val.append(v)
        rhs.append(b)
        labels.append(label)

    for row in rel.rows:
        if row.family == "support_eq":
            continue  # eliminated structurally by the quotient basis
        if row.family == "uniformity" and row.tag[0] > 1:
            continue  # c-power above one: dependent on the kept rows
        if row.family == "liouville" and row.tag[2][0] > 1:
            continue
        cols = reduce_terms(row.terms)
        add_row(cols, row.rhs, (row.family,) + tuple(row.tag))

    group_of_loc = np.empty(nvar, dtype=np.int32)
    for gi, g in enumerate(groups):
        group_of_loc[g.start:g.start + g.full_size] = gi

    for (key, bi, sign) in slack_keys:
        box = rel.boxes[bi]
        cols = reduce_terms(box.terms)
        g = next(g for g in groups if g.key == key)
        if sign > 0:
            cols2 = dict(cols); cols2[g.start] = cols2.get(g.start, 0.0) + 1.0
            add_row(cols2, box.hi, ("box", box.family, box.tag, "hi"))
        else:
            cols2 = {k: -v for k, v in cols.items()}
            cols2[g.start] = cols2.get(g.start, 0.0) + 1.0
            add_row(cols2, -box.lo, ("box", box.family, box.tag, "lo"))
        terms = [
            (groups[group_of_loc[k]].key, k - groups[group_of_loc[k]].start, v)
            for k, v in sorted(cols.items())
        ]
        slack_rows[key] = (terms, box.hi if sign > 0 else box.lo)
        slack_sign[key] = sign

    ij = np.asarray(rows_ij, dtype=np.int64)
    a_mat = sp.csr_matrix(
        (np.asarray(rows_val), (ij[:, 0], ij[:, 1])), shape=(len(rhs), nvar)
    )
    b_vec = np.asarray(rhs)
    a_mat, b_vec, labels = _drop_dependent_rows(a_mat, b_vec, labels)

    c_vec = np.zeros(nvar)
    for k, v in reduce_terms(rel.objective_terms).items():
        c_vec[k] = v

    # PSD blocks: one moment matrix per measure plus localizers, then slacks
    blocks: list[BlockSpec] = []
    block_bases: list[tuple[int, list[Mono]]] = []
    for gi, m in enumerate(rel.measures):
        group = groups[gi]
        kind = m.key[0]
        nv = 4 if kind in ("occ", "jump") else 2
        one = tuple([0] * nv)
        blk, bas = _moment_block(group, kind, beta, {one: 1.0}, f"{m.key}:moment", gi)
        blocks.append(blk)
        block_bases.append((gi, bas))
        for qi, poly in enumerate(m.support.inequalities):
            blk, bas = _moment_block(group, kind, beta, poly, f"{m.key}:loc{qi}", gi)
            blocks.append(blk)
            block_bases.append((gi, bas))
    for gi, g in enumerate(groups):
        if g.kind == "slack":
            blocks.append(BlockSpec(
                label=f"{g.key[1]}:{g.key[2]}:{g.key[3]}", group=gi, side=1,
                rows=np.zeros(1, dtype=np.int32), cols=np.zeros(1, dtype=np.int32),
                locs=np.zeros(1, dtype=np.int32), coefs=np.ones(1),
            ))

    # reference interior moments of full-support product measures
    y_ref = np.zeros(nvar)
    n_occ = sum(1 for m in rel.measures if m.key[0] == "occ")
    for gi, m in enumerate(rel.measures):
        group = groups[gi]
        vec = _interior_moments(group, m.support, beta)
        if m.key[0] == "occ":
            vec = vec * (math.pi / 2.0 / n_occ)
        y_ref[group.start:group.start + group.full_size] = vec

    # re-express every block basis over box-Chebyshev products and equilibrate
    # against the reference measure: the raw power basis turns severely
    # collinear on narrow support windows beyond degree four
    for blk, (gi, bas) in zip(blocks, block_bases):
        if groups[gi].kind == "slack":
            continue
        change = _block_basis_change(bas, groups[gi].kind, rel.measures[gi].support)
        g = groups[gi]
        m0 = blk.matrix(y_ref[g.start:g.start + g.full_size])
        m0c = change.T @ m0 @ change
        d = 1.0 / np.sqrt(np.maximum(np.diag(m0c), 1e-300))
        blk.basis_transform = change * d[None, :]
        blk.raw_side = blk.side

    # facial reduction (disabled by default, see the threshold notes): the
    # faces would be detected from a spread of constructed trajectories and
    # variables, rows and blocks restricted onto them coherently
    if SPAN_RTOL is not None or BLOCK_RTOL is not None:
        from .oracle import complete_moments, sample_constructed_moments

        n_samples = max(96, 2 * max(g.full_size for g in groups) + 32)
        samples = sample_constructed_moments(rel.problem, beta, n_samples, seed=20240801)
        y_samples = np.asarray([
            _stack_reduced(groups, nvar, complete_moments(mm, rel)) for mm in samples
        ])
        y_mix_full = y_samples.mean(axis=0)
    else:
        y_samples = None
        y_mix_full = y_ref
    start = 0
    col_blocks = []
    y_init = []
    y_face = []
    for gi, g in enumerate(groups):
        if g.kind != "slack":
            seg = slice(g.start, g.start + g.full_size)
            if SPAN_RTOL is not None and y_samples is not None:
                block_mat = y_samples[:, seg]
                scale = np.linalg.norm(block_mat, axis=0)
                scale = np.maximum(scale, 1e-12 * scale.max())
                _, sv, vt = np.linalg.svd(block_mat / scale[None, :], full_matrices=False)
                rank = int(np.sum(sv > SPAN_RTOL * sv[0]))
                if rank < g.full_size:
                    # back to raw coordinates, then orthonormalize
                    g.span, _ = np.linalg.qr(vt[:rank].T * scale[:, None])
            ref = y_ref[seg]
            mix = y_mix_full[seg]
            y_init.append(ref if g.span is None else g.span.T @ ref)
            y_face.append(mix if g.span is None else g.span.T @ mix)
        else:
            y_init.append(np.array([1.0]))
            y_face.append(np.array([1.0]))
        col_blocks.append((g.start, g.full_size, g.span))
        g.start = start
        start += g.size
    nvar_low = start

    # lower rows and objective through the spans
    lowered_cols = []
    for (old_start, full_size, span) in col_blocks:
        sub = a_mat[:, old_start:old_start + full_size]
        lowered_cols.append(sub @ sp.csr_matrix(span) if span is not None else sub)
    a_mat = sp.hstack(lowered_cols, format="csr")
    c_low = np.zeros(nvar_low)
    for g, (old_start, full_size, span) in zip(groups, col_blocks):
        seg = c_vec[old_start:old_start + full_size]
        c_low[g.start:g.start + g.size] = span.T @ seg if span is not None else seg
    c_vec = c_low
    a_mat, b_vec, labels = _drop_dependent_rows(a_mat, b_vec, labels)
    if any(g.span is not None for g in groups):
        # the span restriction can leave b marginally outside the reachable
        # range; project the unreachable sliver away
        fit = sp.linalg.lsqr(a_mat, b_vec, atol=1e-14, btol=1e-14, iter_lim=2000)
        resid = b_vec - a_mat @ fit[0]
        if np.linalg.norm(resid) < 1e-6 * (1.0 + np.linalg.norm(b_vec)):
            b_vec = b_vec - resid

    y0 = np.concatenate(y_init)
    y_face = np.concatenate(y_face)
    for blk in blocks:
        blk.span = groups[blk.group].span

    # optionally compress block sides onto the sampled face
    if BLOCK_RTOL is not None:
        for blk in blocks:
            g = groups[blk.group]
            if g.kind == "slack":
                continue
            t = blk.tensor(g.size)
            m_mix = np.einsum("wrs,w->rs", t, y_face[g.start:g.start + g.size])
            w, v = np.linalg.eigh(0.5 * (m_mix + m_mix.T))
            keep = w > BLOCK_RTOL * max(w.max(), 1e-300)
            if not keep.all():
                blk.basis_transform = blk.basis_transform @ v[:, keep]
                blk.side = int(keep.sum())
                blk._tensor = None

    return ConicProblem(
        groups=groups, blocks=blocks, a_mat=a_mat, b_vec=b_vec, c_vec=c_vec,
        row_labels=labels, beta=beta, relaxation=rel, init_y=y0,
        meta={"slack_rows": slack_rows, "slack_sign": slack_sign,
              "n_moment_vars": n_moment_vars},
    )


def moment_bounds(cp: ConicProblem) -> np.ndarray:
    """A-priori bounds on |y_j| over every feasible point.

    Masses are bounded by the quarter period (occupation) or the unit initial
    mass (boundary and jump measures); monomial suprema follow from the
    compact support windows.  Slack magnitudes inherit the bounds of the
    moments in their box row.
    """
    bounds = np.zeros(cp.nvar)
    mass_bound = {"occ": math.pi / 2.0, "jump": 1.0, "init": 1.0, "term": 1.0}
    sup_cache: dict[MeasureKey, np.ndarray] = {}
    for g in cp.groups:
        if g.kind == "slack":
            continue
        support = next(m.support for m in cp.relaxation.measures if m.key == g.key)
        phi_hi = abs(support.phi_box[1]) if support.phi_box else 1.0
        i_hi = max(abs(support.i_box[0]), abs(support.i_box[1])) if support.i_box else 1.0
        sup = np.empty(g.full_size)
        for k, mono in enumerate(g.basis):
            if len(mono) == 4:
                g_exp, m_exp = mono[2], mono[3]
            else:
                g_exp, m_exp = mono
            sup[k] = mass_bound[g.kind] * phi_hi**g_exp * i_hi**m_exp
        sup_cache[g.key] = sup
        bounds[g.start:g.start + g.size] = sup if g.span is None else np.abs(g.span.T) @ sup
    for g in cp.groups:
        if g.kind != "slack":
            continue
        terms, side = cp.meta["slack_rows"][g.key]
        bounds[g.start] = abs(side) + sum(
            abs(coef) * sup_cache[key][loc] for key, loc, coef in terms
        )
    return bounds


def solve(cp: ConicProblem, tol: float = 1e-8, maxiter: int = 200,
          verbose: bool = False) -> ConicSolution:
    """Run the built-in interior-point method and package the solution.

    `p_beta` is the rigorous lower bound extracted from the (approximately
    feasible) dual point: the dual objective minus the worst-case effect of
    the dual residual against a-priori moment bounds.
    """
    from .ipm import ipm_solve

    t0 = time.perf_counter()
    res = ipm_solve(cp, tol=tol, maxiter=maxiter, verbose=verbose)
    elapsed = time.perf_counter() - t0
    moments: dict[MeasureKey, np.ndarray] = {}
    if res.y is not None and cp.relaxation is not None:
        for g in cp.groups:
            if g.kind == "slack":
                continue
            y_g = res.y[g.start:g.start + g.size]
            moments[g.key] = cp.full_from_reduced(g.key, y_g)
    p_certified = None
    if res.dual_objective is not None and res.status != "infeasible":
        p_certified = res.dual_objective
        if res.dual_residual_vec is not None and cp.relaxation is not None:
            slack_term = float(
                np.abs(res.dual_residual_vec) @ moment_bounds(cp)
            )
            p_certified = res.dual_objective - slack_term
    return ConicSolution(
        status=res.status,
        p_beta=p_certified,
        primal_objective=res.primal_objective,
        moments=moments,
        residuals=res.residuals,
        iterations=res.iterations,
        solve_seconds=elapsed,
        p_dual=res.dual_objective,
        certificate=res.certificate,
    )


def bound_to_q(p_beta: float, m: float) -> tuple[float, bool]:
    """Distortion lower bound Q = sqrt(max(p/pi - M^2, 0)); True when clamped."""
    radicand = p_beta / math.pi - m * m
    if radicand < 0.0:
        return 0.0, True
    return math.sqrt(radicand), False


# a solve's dual value enters the hierarchy envelope only below this
# residual level; stalled degrees inherit the best certified lower degree
TRUST_RESIDUAL = 1e-6


@dataclass
class HierarchyBound:
    """Lower bounds accumulated degree by degree up to the requested one."""

    beta: int
    status: str
    p_beta: float | None
    q_beta: float | None
    q_clamped: bool
    per_degree: list[ConicSolution]
    preprocess_seconds: float
    solve_seconds: float
    best_degree: int | None = None

    @property
    def best_solution(self) -> ConicSolution | None:
        if self.best_degree is None:
            return None
        return self.per_degree[self.best_degree - 1]


def solve_hierarchy(
    prob,
    beta: int,
    tol: float = 1e-8,
    maxiter: int = 200,
    verbose: bool = False,
    betas: list[int] | None = None,
    objective: str | None = None,
) -> HierarchyBound:
    """Solve truncations up to `beta` and report the monotone bound envelope.

    Lower-degree feasible sets contain the projections of higher-degree ones,
    so any certified lower bound at a smaller degree remains valid at `beta`;
    degrees the interior-point method cannot close therefore inherit the best
    converged value instead of polluting the report.  An infeasibility
    certificate at any degree settles the instance.
    """
    from .relaxation import assemble

    betas = betas or list(range(1, beta + 1))
    t_pre = 0.0
    t_solve = 0.0
    solutions: list[ConicSolution] = []
    best_p: float | None = None
    best_degree: int | None = None
    status = "numerical"
    for b in betas:
        from .relaxation import DegreeTooLow

        t0 = time.perf_counter()
        try:
            rel = assemble(prob, b, objective)
        except DegreeTooLow:
            t_pre += time.perf_counter() - t0
            continue
        cp = compile(rel)
        t_pre += time.perf_counter() - t0
        sol = solve(cp, tol=tol, maxiter=maxiter, verbose=verbose)
        t_solve += sol.solve_seconds
        solutions.append(sol)
        if sol.status == "infeasible":
            return HierarchyBound(
                beta=b, status="infeasible", p_beta=None, q_beta=None,
                q_clamped=False, per_degree=solutions,
                preprocess_seconds=t_pre, solve_seconds=t_solve,
            )
        trusted = (
            sol.p_beta is not None
            and max(sol.residuals.get("primal", 1.0),
                    sol.residuals.get("dual", 1.0)) <= max(TRUST_RESIDUAL, 1e2 * tol)
        )
        if trusted and (best_p is None or sol.p_beta > best_p):
            best_p = sol.p_beta
            best_degree = b
            status = "optimal" if sol.status == "optimal" else sol.status
    if best_p is None:
        return HierarchyBound(
            beta=beta, status="numerical", p_beta=None, q_beta=None,
            q_clamped=False, per_degree=solutions,
            preprocess_seconds=t_pre, solve_seconds=t_solve,
        )
    if (objective or prob.objective) == "voltage":
        q, clamped = None, False  # the distortion map applies to the current objective
    else:
        q, clamped = bound_to_q(best_p, prob.modulation_index)
    return HierarchyBound(
        beta=beta, status=status, p_beta=best_p, q_beta=q, q_clamped=clamped,
        per_degree=solutions, preprocess_seconds=t_pre, solve_seconds=t_solve,
        best_degree=best_degree,
    )
