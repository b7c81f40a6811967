"""Primal-dual interior-point solver for block-PSD programs with free variables.

Solves  min c'y  s.t.  A y = b,  mat(P_k y) + Q_k  PSD for every block k.
Nesterov-Todd scaling with a Mehrotra predictor-corrector; the Newton right
hand sides are assembled through the NT identities (R' Lambda R = Z and
Lambda_Z^aff = -Lambda - Lambda_S^aff) so no W-amplified intermediate is ever
formed, which keeps the dual residual convergent at small mu.  Deterministic:
identical inputs produce identical iterate sequences.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp


class NumericalFailure(RuntimeError):
    """Hard numerical breakdown; carries the iteration trace."""

    def __init__(self, message: str, trace=None):
        super().__init__(message)
        self.trace = trace or []


@dataclass
class IpmResult:
    status: str
    y: np.ndarray | None
    lam: np.ndarray | None
    primal_objective: float | None
    dual_objective: float | None
    residuals: dict[str, float]
    iterations: int
    certificate: dict = field(default_factory=dict)
    trace: list = field(default_factory=list)
    dual_residual_vec: np.ndarray | None = None


def _sym(x: np.ndarray) -> np.ndarray:
    return 0.5 * (x + x.T)


def _max_step(x: np.ndarray, dx: np.ndarray) -> float:
    """Largest alpha in (0, 1] keeping x + alpha*dx positive semidefinite."""
    try:
        low = np.linalg.cholesky(x)
    except np.linalg.LinAlgError:
        return 0.0
    m = la.solve_triangular(low, dx, lower=True)
    m = la.solve_triangular(low, m.T, lower=True)
    emin = float(np.min(np.linalg.eigvalsh(_sym(m))))
    if emin >= -1e-14:
        return 1.0
    return min(1.0, -1.0 / emin)


def _psd_ok(x: np.ndarray) -> bool:
    ridge = 1e-13 * max(float(np.trace(x)) / len(x), 1e-300) * np.eye(len(x))
    try:
        np.linalg.cholesky(_sym(x) + ridge)
        return True
    except np.linalg.LinAlgError:
        return False


class _Scaling:
    """Nesterov-Todd scaling of one block: W^{-1} = R'R, R S R' = diag(lam)."""

    __slots__ = ("r", "lam", "r_ld", "s_inv")

    def __init__(self, s: np.ndarray, z: np.ndarray):
        eye = np.eye(len(s))
        try:
            ls = np.linalg.cholesky(s)
        except np.linalg.LinAlgError:
            ls = np.linalg.cholesky(s + 1e-13 * (np.trace(s) / len(s)) * eye)
        d, q = np.linalg.eigh(_sym(ls.T @ z @ ls))
        d = np.maximum(d, 1e-300)
        linv = la.solve_triangular(ls, eye, lower=True)
        self.lam = np.sqrt(d)
        self.r = (d**0.25)[:, None] * (q.T @ linv)
        self.r_ld = self.r.astype(np.longdouble)
        self.s_inv = linv.T @ linv

    def conj_w_inv(self, x: np.ndarray) -> np.ndarray:
        """W^-1 x W^-1 = R'(R x R')R, accumulated in extended precision.

        The conjugation spans the full W^-1 dynamic range, so double
        arithmetic injects eps*||W^-1|| absolute noise; 80-bit floats keep
        that below the solver tolerance.
        """
        xl = x.astype(np.longdouble)
        return np.asarray(
            self.r_ld.T @ (self.r_ld @ xl @ self.r_ld.T) @ self.r_ld, dtype=float
        )

    def conj_r_t(self, x: np.ndarray) -> np.ndarray:
        """R' x R in extended precision."""
        xl = x.astype(np.longdouble)
        return np.asarray(self.r_ld.T @ xl @ self.r_ld, dtype=float)

    def conj_r(self, x: np.ndarray) -> np.ndarray:
        """R x R' in extended precision."""
        xl = x.astype(np.longdouble)
        return np.asarray(self.r_ld @ xl @ self.r_ld.T, dtype=float)


def ipm_solve(cp, tol: float = 1e-8, maxiter: int = 200, verbose: bool = False) -> IpmResult:
    a_mat = cp.a_mat.tocsr().astype(float)
    b = cp.b_vec.astype(float).copy()
    c = cp.c_vec.astype(float).copy()
    n = cp.nvar
    m_eq = a_mat.shape[0]

    # row equilibration keeps the Schur complement well scaled
    if m_eq:
        row_norm = np.maximum(np.abs(a_mat).max(axis=1).toarray().ravel(), 1e-12)
        a_mat = (sp.diags(1.0 / row_norm) @ a_mat).tocsr()
        b = b / row_norm

    groups = cp.groups
    n_groups = len(groups)
    slices = [cp.group_slice(k) for k in range(n_groups)]
    blocks = cp.blocks
    n_blocks = len(blocks)
    tensors = [blk.tensor(groups[blk.group].size) for blk in blocks]
    consts = []
    for blk in blocks:
        q = blk.solver_const()
        consts.append(np.asarray(q, dtype=float) if q is not None else None)
    blocks_by_group: list[list[int]] = [[] for _ in range(n_groups)]
    for bi, blk in enumerate(blocks):
        blocks_by_group[blk.group].append(bi)

    a_csc = a_mat.tocsc()
    group_rows: list[np.ndarray] = []
    group_a: list[np.ndarray] = []
    for k in range(n_groups):
        sub = a_csc[:, slices[k]].tocsr()
        rows = np.unique(sub.nonzero()[0])
        group_rows.append(rows)
        group_a.append(sub[rows].toarray() if len(rows) else np.zeros((0, groups[k].size)))

    # coordinates the blocks barely touch (possible after facial reduction)
    # get a unit prox entry in H so the Newton systems stay nonsingular;
    # their stationarity is still driven through the dual residual
    uncovered: list[np.ndarray] = []
    for k in range(n_groups):
        weight = np.zeros(groups[k].size)
        for bi in blocks_by_group[k]:
            weight += np.abs(tensors[bi]).sum(axis=(1, 2))
        top = weight.max() if len(weight) else 0.0
        uncovered.append(weight < 1e-6 * max(top, 1e-30))

    def lmi_matrices(y):
        out = []
        for bi, blk in enumerate(blocks):
            x = np.einsum("yij,y->ij", tensors[bi], y[slices[blk.group]])
            if consts[bi] is not None:
                x = x + consts[bi]
            out.append(_sym(x))
        return out

    def pt_vec(mats):
        """Adjoint of the LMI map: accumulate <A_kj, X_k> into a y-vector."""
        out = np.zeros(n)
        for bi, blk in enumerate(blocks):
            if mats[bi] is not None:
                out[slices[blk.group]] += np.einsum("yij,ij->y", tensors[bi], mats[bi])
        return out

    def const_dot(z_mats):
        return sum(
            float(np.sum(consts[bi] * z_mats[bi]))
            for bi in range(n_blocks) if consts[bi] is not None
        )

    # start from the supplied candidate; when every block is safely positive
    # definite the LMI holds exactly along the whole iteration and the cone
    # variables never need an independent life
    y = cp.init_y.copy() if cp.init_y is not None else np.zeros(n)
    s_mats = lmi_matrices(y)
    feasible_lmi = all(
        _psd_ok(s - 1e-12 * (1.0 + np.trace(s) / len(s)) * np.eye(len(s)))
        for s in s_mats
    )
    if not feasible_lmi:
        padded = []
        for x in s_mats:
            emin = float(np.min(np.linalg.eigvalsh(x)))
            padded.append(x + (max(0.0, -emin) + 1.0) * np.eye(len(x)))
        s_mats = padded
    z_mats = [np.eye(len(x)) for x in s_mats]
    lam = np.zeros(m_eq)
    n_cone = sum(blk.side for blk in blocks)
    norm_b = 1.0 + np.linalg.norm(b)
    norm_c = 1.0 + np.linalg.norm(c)

    trace = []
    status = "maxiter"
    certificate: dict = {}
    stall = 0
    it = 0
    dobj = None
    best = None  # (merit, y, lam, z_mats, pobj, dobj, residual dict)
    since_best = 0

    for it in range(1, maxiter + 1):
        if feasible_lmi:
            r_lmi = None
            linf = 0.0
        else:
            mats = lmi_matrices(y)
            r_lmi = [x - s for x, s in zip(mats, s_mats)]
            linf = max(float(np.abs(r).max()) for r in r_lmi) / (
                1.0 + max(float(np.abs(x).max()) for x in mats)
            )
            if linf < 1e-14 and all(_psd_ok(x) for x in mats):
                feasible_lmi = True
                s_mats = mats
                r_lmi = None
                linf = 0.0
        r_p = b - a_mat @ y
        z_pull = pt_vec(z_mats)
        at_lam = a_mat.T @ lam
        r_d = c - at_lam - z_pull
        mu = sum(float(np.sum(s * z)) for s, z in zip(s_mats, z_mats)) / n_cone
        pobj = float(c @ y)
        dobj = float(b @ lam) - const_dot(z_mats)
        pinf = float(np.linalg.norm(r_p)) / norm_b
        dinf = float(np.linalg.norm(r_d)) / norm_c
        gap = abs(pobj - dobj) / (1.0 + abs(pobj) + abs(dobj))
        comp = mu * n_cone / (1.0 + abs(pobj) + abs(dobj))
        trace.append((it, pobj, dobj, pinf, dinf, linf, gap, mu))
        if verbose:
            print(f"  it {it:3d} pobj {pobj:+.8e} dobj {dobj:+.8e} pinf {pinf:.2e} "
                  f"dinf {dinf:.2e} lmi {linf:.2e} gap {gap:.2e} comp {comp:.2e} mu {mu:.2e}")

        merit = max(pinf, dinf, linf, comp)
        if best is None or merit < 0.97 * best[0]:
            best = (merit, y.copy(), lam.copy(), [z.copy() for z in z_mats],
                    pobj, dobj, {"primal": pinf, "dual": dinf, "lmi": linf,
                                 "gap": gap, "mu": mu}, r_d.copy())
            since_best = 0
        else:
            since_best += 1
        if merit <= tol:
            status = "optimal"
            break
        if since_best >= 15 and comp <= 1e-3:
            # stagnated at the numerical floor; the best visited point stands
            status = "stalled"
            break

        # primal-infeasibility certificate: dual improving ray
        ray_gain = float(b @ lam) - const_dot(z_mats)
        ray_norm = float(np.linalg.norm(lam)) + sum(float(np.linalg.norm(z)) for z in z_mats)
        if ray_gain > 1.0 and ray_norm > 1e8 * tol:
            combo = float(np.linalg.norm(at_lam + z_pull))
            if combo <= max(1e2 * tol, 1e-7) * ray_gain:
                status = "infeasible"
                certificate = {
                    "dual_gain": ray_gain,
                    "combo_residual": combo,
                    "ray_norm": ray_norm,
                }
                break
        if pobj < -1e12:
            status = "unbounded"
            break

        try:
            scalings = [_Scaling(s, z) for s, z in zip(s_mats, z_mats)]
        except np.linalg.LinAlgError:
            status = "numerical"
            certificate = {"reason": "cone variable lost definiteness"}
            break

        # H = sum P'(W^-1 (.) W^-1) P, block diagonal over variable groups
        h_mats = []
        h_factors = []
        failed = False
        for k in range(n_groups):
            hk = np.zeros((groups[k].size, groups[k].size))
            for bi in blocks_by_group[k]:
                r = scalings[bi].r
                bt = np.matmul(np.matmul(r[None, :, :], tensors[bi]), r.T[None, :, :])
                v = bt.reshape(groups[k].size, -1)
                hk += v @ v.T
            if uncovered[k].any():
                hk[uncovered[k], uncovered[k]] += 1.0
            factor = None
            for reg in (0.0, 1e-12, 1e-9, 1e-6):
                try:
                    factor = la.cho_factor(
                        hk + reg * (np.trace(hk) / len(hk) + 1.0) * np.eye(len(hk)),
                        lower=True)
                    break
                except np.linalg.LinAlgError:
                    continue
            if factor is None:
                failed = True
                break
            h_mats.append(hk)
            h_factors.append(factor)
        if failed:
            status = "numerical"
            certificate = {"reason": "scaled Hessian block not positive definite"}
            break

        def apply_h(vec):
            out = np.empty_like(vec)
            for k in range(n_groups):
                out[slices[k]] = h_mats[k] @ vec[slices[k]]
            return out

        def apply_hinv(vec):
            out = np.empty_like(vec)
            for k in range(n_groups):
                out[slices[k]] = la.cho_solve(h_factors[k], vec[slices[k]])
            return out

        k_factor = None
        if m_eq:
            kmat = np.zeros((m_eq, m_eq))
            for k in range(n_groups):
                if not len(group_rows[k]):
                    continue
                ag = group_a[k]
                kmat[np.ix_(group_rows[k], group_rows[k])] += ag @ la.cho_solve(h_factors[k], ag.T)
            for reg in (0.0, 1e-14, 1e-11, 1e-8):
                try:
                    k_factor = la.cho_factor(
                        kmat + reg * (np.trace(kmat) / m_eq + 1.0) * np.eye(m_eq),
                        lower=True)
                    break
                except np.linalg.LinAlgError:
                    continue
            if k_factor is None:
                status = "numerical"
                certificate = {"reason": "schur complement not positive definite"}
                break

        def solve_kkt(rhs1, rhs2):
            """[H, -A'; A, 0] [dy; dlam] = [rhs1; rhs2] with iterative refinement."""
            dy = np.zeros(n)
            dlam = np.zeros(m_eq)
            e1, e2 = rhs1.copy(), rhs2.copy()
            scale = 1.0 + np.abs(rhs1).max(initial=0.0) + np.abs(rhs2).max(initial=0.0)
            for _ in range(3):
                t_vec = apply_hinv(e1)
                if m_eq:
                    d2 = la.cho_solve(k_factor, e2 - a_mat @ t_vec)
                    d1 = apply_hinv(e1 + a_mat.T @ d2)
                else:
                    d2 = np.zeros(0)
                    d1 = t_vec
                dy += d1
                dlam += d2
                e1 = rhs1 - (apply_h(dy) - a_mat.T @ dlam)
                e2 = rhs2 - a_mat @ dy
                if max(np.abs(e1).max(initial=0.0), np.abs(e2).max(initial=0.0)) < 1e-13 * scale:
                    break
            return dy, dlam

        def solve_newton(sig_mu, correctors):
            """Newton direction for Lambda_S + Lambda_Z = -Lambda + extras.

            sig_mu=0 with no correctors is the pure affine step.  The exact
            identities R'Lambda R = Z and R'Lambda^{-1} R = S^{-1} assemble
            the centering part without conjugating through W^{-1}; the dual
            right hand side telescopes to A'lam - c + P'(small terms).
            """
            small = []
            for bi in range(n_blocks):
                scl = scalings[bi]
                t = None
                if sig_mu:
                    t = sig_mu * scl.s_inv
                if correctors is not None:
                    t = (0.0 if t is None else t) + scl.conj_r_t(correctors[bi])
                if r_lmi is not None:
                    amp = scl.conj_w_inv(r_lmi[bi])
                    t = -amp if t is None else t - amp
                small.append(t)
            rhs1 = (at_lam - c) + pt_vec(small)
            dy, dlam = solve_kkt(rhs1, r_p)
            ds, dz = [], []
            for bi, blk in enumerate(blocks):
                scl = scalings[bi]
                dsk = np.einsum("yij,y->ij", tensors[bi], dy[slices[blk.group]])
                if r_lmi is not None:
                    dsk = dsk + r_lmi[bi]
                dsk = _sym(dsk)
                dzk = -z_mats[bi] - _sym(scl.conj_w_inv(dsk))
                if small[bi] is not None:
                    dzk = dzk + small[bi]
                ds.append(dsk)
                dz.append(dzk)
            return dy, dlam, ds, dz

        # predictor
        dy_a, dlam_a, ds_a, dz_a = solve_newton(0.0, None)
        cap = 1e6 * (1.0 + float(np.linalg.norm(y)))
        nrm_a = float(np.linalg.norm(dy_a))
        if nrm_a > cap:
            shrink = cap / nrm_a
            dy_a *= shrink
            dlam_a *= shrink
            ds_a = [d * shrink for d in ds_a]
            dz_a = [d * shrink for d in dz_a]
        ap = min((_max_step(s, d) for s, d in zip(s_mats, ds_a)), default=1.0)
        ad = min((_max_step(z, d) for z, d in zip(z_mats, dz_a)), default=1.0)
        mu_aff = sum(
            float(np.sum((s + ap * dsk) * (z + ad * dzk)))
            for s, dsk, z, dzk in zip(s_mats, ds_a, z_mats, dz_a)
        ) / n_cone
        sigma = float(np.clip((max(mu_aff, 0.0) / mu) ** 3, 1e-10, 1.0))
        # keep complementarity from outrunning feasibility: once mu is far
        # ahead of the residuals the Newton systems turn too ill-conditioned
        # to finish grinding them down
        worst_resid = max(pinf, dinf, linf)
        if worst_resid > tol and comp < 10.0 * worst_resid:
            sigma = max(sigma, 0.5)

        # corrector: Lambda_Z^aff = -Lambda - Lambda_S^aff, so the second-order
        # term needs only the scaled primal direction
        correctors = []
        for bi, scl in enumerate(scalings):
            lam_s = scl.conj_r(ds_a[bi])
            mc = _sym(lam_s @ (lam_s + np.diag(scl.lam)))
            denom = 0.5 * (scl.lam[:, None] + scl.lam[None, :])
            correctors.append(mc / denom)
        dy, dlam, ds, dz = solve_newton(sigma * mu, correctors)
        nrm = float(np.linalg.norm(dy))
        if nrm > cap:
            shrink = cap / nrm
            dy *= shrink
            dlam *= shrink
            ds = [d * shrink for d in ds]
            dz = [d * shrink for d in dz]

        gamma = 0.99
        ap = min(1.0, gamma * min((_max_step(s, d) for s, d in zip(s_mats, ds)), default=1.0))
        ad = min(1.0, gamma * min((_max_step(z, d) for z, d in zip(z_mats, dz)), default=1.0))
        # one common step: unequal steps leave cross terms in the dual residual
        # because dZ is computed for the full primal direction
        alpha = min(ap, ad)
        while alpha > 1e-12 and not (
            all(_psd_ok(s + alpha * d) for s, d in zip(s_mats, ds))
            and all(_psd_ok(z + alpha * d) for z, d in zip(z_mats, dz))
        ):
            alpha *= 0.8

        if alpha < 1e-10:
            stall += 1
            if stall >= 3:
                status = "numerical"
                certificate = {"reason": "step sizes collapsed", "mu": mu}
                break
        else:
            stall = 0

        y = y + alpha * dy
        lam = lam + alpha * dlam
        s_mats = [_sym(s + alpha * d) for s, d in zip(s_mats, ds)]
        z_mats = [_sym(z + alpha * d) for z, d in zip(z_mats, dz)]
        if not np.all(np.isfinite(y)) or not np.all(np.isfinite(lam)):
            status = "numerical"
            certificate = {"reason": "iterates diverged to non-finite values"}
            break

    residuals = {}
    r_d_out = None
    if trace:
        _, pobj, dobj_t, pinf, dinf, linf, gap, mu = trace[-1]
        residuals = {"primal": pinf, "dual": dinf, "lmi": linf, "gap": gap, "mu": mu}
        r_d_out = c - a_mat.T @ lam - pt_vec(z_mats)
    pobj_out = float(c @ y)
    if status in ("maxiter", "numerical", "stalled") and best is not None:
        merit_now = max(residuals.get(k, np.inf) for k in ("primal", "dual", "lmi")) \
            if residuals else np.inf
        if best[0] < merit_now or status == "stalled":
            _, y, lam, z_mats, pobj_out, dobj, residuals, r_d_out = best
            if status == "stalled":
                status = "optimal" if best[0] <= tol else "maxiter"
    keep_point = status in ("optimal", "maxiter", "numerical")
    return IpmResult(
        status=status,
        y=y if keep_point else None,
        lam=lam if keep_point else None,
        primal_objective=pobj_out if keep_point else None,
        dual_objective=dobj if status != "infeasible" else None,
        residuals=residuals,
        iterations=it,
        certificate=certificate,
        trace=trace,
        dual_residual_vec=r_d_out if keep_point else None,
    )
